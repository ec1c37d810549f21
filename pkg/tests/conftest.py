import numpy as np
import pytest

from dialrank import tensor


@pytest.fixture(autouse=True)
def _float64_default():
    """Tests run in the 64-bit (gradient-check) width unless they opt out."""
    tensor.set_default_dtype(np.float64)
    yield
    tensor.set_default_dtype(np.float64)
