import numpy as np
import pytest
from hypothesis import HealthCheck, settings
from hypothesis import strategies as st

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def random_admissible(rng: np.random.Generator, N: int | None = None):
    """Draw an admissible exponent vector by rejection."""
    from anisolab.exponents import derive_exponents, validate_admissible

    while True:
        n = int(rng.integers(2, 6)) if N is None else N
        p = rng.uniform(2.0, 3.5, n)
        e = derive_exponents(p)
        if validate_admissible(e).ok:
            return e


@st.composite
def admissible_exponents(draw, min_N=2, max_N=5):
    from anisolab.exponents import derive_exponents, validate_admissible

    N = draw(st.integers(min_N, max_N))
    p = draw(st.lists(st.floats(2.0001, 3.4, allow_nan=False), min_size=N, max_size=N))
    e = derive_exponents(p)
    from hypothesis import assume
    assume(validate_admissible(e).ok)
    return e


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
