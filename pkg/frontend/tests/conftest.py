import numpy as np
import pytest

from miniamr_core import config


@pytest.fixture(autouse=True)
def _restore_config():
    yield
    config.set_spacedim(3)
    config.set_real_dtype(np.float64)
    config.set_debug(False)
