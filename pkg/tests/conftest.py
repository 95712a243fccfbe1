import os

import numpy as np
import pytest
from hypothesis import settings

# derandomized so every run draws the same examples
settings.register_profile("repro", derandomize=True, deadline=None, max_examples=60,
                          print_blob=True)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "repro"))


@pytest.fixture
def idm():
    from relaxsim.cf_models import CFParams
    return CFParams.idm()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
