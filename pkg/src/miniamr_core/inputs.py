"""Inputs-file parsing: `key = v1 v2 ...` lines with `#` comments.

Later definitions override earlier ones; command-line `key=value` overrides
win over the file.  Values are typed on query.
"""

from __future__ import annotations

from .index_space import IntVect

_MISSING = object()

_TRUE = {"true", "t", "yes", "on", "1"}
_FALSE = {"false", "f", "no", "off", "0"}


class InputsError(ValueError):
    pass


class InputsTable:
    def __init__(self):
        self._entries: dict[str, list[str]] = {}

    def _set(self, key: str, values: list[str]) -> None:
        self._entries[key] = values

    def __contains__(self, key: str) -> bool:
        return key in self._entries

    def keys(self):
        return self._entries.keys()

    def _raw(self, key: str, default):
        if key in self._entries:
            return self._entries[key]
        if default is _MISSING:
            raise InputsError(f"missing required inputs key {key!r}")
        return None

    def get_string(self, key: str, default=_MISSING) -> str:
        raw = self._raw(key, default)
        return " ".join(raw) if raw is not None else default

    def get_int(self, key: str, default=_MISSING) -> int:
        raw = self._raw(key, default)
        if raw is None:
            return default
        try:
            (v,) = raw
            return int(v)
        except (TypeError, ValueError) as exc:
            raise InputsError(f"key {key!r}: expected one integer, got {raw}") from exc

    def get_real(self, key: str, default=_MISSING) -> float:
        raw = self._raw(key, default)
        if raw is None:
            return default
        try:
            (v,) = raw
            return float(v)
        except (TypeError, ValueError) as exc:
            raise InputsError(f"key {key!r}: expected one real, got {raw}") from exc

    def get_bool(self, key: str, default=_MISSING) -> bool:
        raw = self._raw(key, default)
        if raw is None:
            return default
        (v,) = raw
        low = v.lower()
        if low in _TRUE:
            return True
        if low in _FALSE:
            return False
        raise InputsError(f"key {key!r}: expected a boolean, got {v!r}")

    def get_ints(self, key: str, default=_MISSING) -> list[int]:
        raw = self._raw(key, default)
        if raw is None:
            return list(default)
        try:
            return [int(v) for v in raw]
        except ValueError as exc:
            raise InputsError(f"key {key!r}: expected integers, got {raw}") from exc

    def get_reals(self, key: str, default=_MISSING) -> list[float]:
        raw = self._raw(key, default)
        if raw is None:
            return list(default)
        try:
            return [float(v) for v in raw]
        except ValueError as exc:
            raise InputsError(f"key {key!r}: expected reals, got {raw}") from exc

    def get_intvect(self, key: str, default=_MISSING) -> IntVect:
        """A spacedim tuple; a single value broadcasts to every axis."""
        raw = self._raw(key, default)
        if raw is None:
            return default if isinstance(default, IntVect) else IntVect(*default)
        vals = [int(v) for v in raw]
        if len(vals) == 1:
            return IntVect.filled(vals[0])
        return IntVect(*vals)


def _parse_line(line: str, lineno: int, table: InputsTable) -> None:
    body = line.split("#", 1)[0].strip()
    if not body:
        return
    if "=" not in body:
        raise InputsError(f"line {lineno}: expected 'key = values', got {line.rstrip()!r}")
    key, _, rhs = body.partition("=")
    key = key.strip()
    values = rhs.replace(",", " ").split()
    if not key:
        raise InputsError(f"line {lineno}: empty key in {line.rstrip()!r}")
    table._set(key, values)


def read_inputs(path: str | None = None, argv=()) -> InputsTable:
    """Parse an inputs file (optional) then apply argv `key=value` overrides."""
    table = InputsTable()
    if path:
        with open(path, "r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                _parse_line(line, lineno, table)
    for n, arg in enumerate(argv, start=1):
        if "=" not in arg:
            raise InputsError(f"override {n} ({arg!r}) must look like key=value")
        _parse_line(arg, 0, table)
    return table
