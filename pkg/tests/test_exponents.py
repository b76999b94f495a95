import math

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from anisolab.exponents import ball_radii, derive_exponents, quasi_metric, validate_admissible
from conftest import admissible_exponents, random_admissible


def mp_exponents(p):
    """Independent 50-digit evaluation of the derived constants."""
    mp.mp.dps = 50
    p = [mp.mpf(x) for x in p]
    N = len(p)
    pb = N / mp.fsum(1 / x for x in p)
    sigma = N * (pb - 2) + pb
    return {
        "p_bar": pb,
        "sigma": sigma,
        "alpha": N / sigma,
        "alpha_i": [(N * (pb - x) + pb) / (sigma * x) for x in p],
        "q_space": [x / (pb + N * (pb - x)) for x in p],
        "q_time": 1 / sigma,
    }


@pytest.mark.parametrize("p", [(2.5, 2.5, 2.5), (2.1, 2.2, 2.3), (2.2, 2.6), (2.05, 2.4, 2.7, 3.1)])
def test_constants_match_high_precision(p):
    e = derive_exponents(p)
    ref = mp_exponents(p)
    for key in ("p_bar", "sigma", "alpha", "q_time"):
        assert getattr(e, key) == pytest.approx(float(ref[key]), rel=1e-14)
    for key in ("alpha_i", "q_space"):
        np.testing.assert_allclose(getattr(e, key), [float(x) for x in ref[key]], rtol=1e-13)


def test_isotropic_values():
    e = derive_exponents(2.5, N=3)
    assert e.p == (2.5, 2.5, 2.5)
    assert e.sigma == pytest.approx(4.0)
    assert e.alpha == pytest.approx(0.75)
    np.testing.assert_allclose(e.alpha_i, 0.25)
    assert e.gamma == pytest.approx(1.0)


@given(admissible_exponents())
def test_rates_sum_to_alpha(e):
    assert math.fsum(e.alpha_i) == pytest.approx(e.alpha, rel=1e-12)


@given(admissible_exponents())
def test_gamma_is_at_least_one(e):
    assert e.gamma >= 1.0
    assert all(q > 0 for q in e.q_space)


def test_scalar_needs_dimension():
    with pytest.raises(ValueError):
        derive_exponents(2.5)


@pytest.mark.parametrize("bad", [(0.0, 2.5), (-1.0, 2.5), (math.nan, 2.5), (math.inf, 2.5), (1.0, 2.5)])
def test_rejects_meaningless_exponents(bad):
    with pytest.raises(ValueError):
        derive_exponents(bad)


def test_admissibility_names_every_clause():
    rep = validate_admissible(derive_exponents((2.0, 2.5, 2.5)))
    assert not rep.ok
    assert any("p_1 = 2 violates clause p_i > 2" in v for v in rep.violations)
    # large spread breaks the upper clause
    rep = validate_admissible(derive_exponents((2.1, 2.1, 4.0)))
    assert any("p_i < p_bar(1+1/N)" in v for v in rep.violations)
    # p_bar >= N in two dimensions
    rep = validate_admissible(derive_exponents((2.5, 2.5)))
    assert any("p_bar" in v and "< N" in v for v in rep.violations)


def test_admissibility_is_strict():
    # p_bar = N exactly sits on the boundary
    rep = validate_admissible(derive_exponents((3.0, 3.0, 3.0)))
    assert any("p_bar" in v for v in rep.violations)
    assert validate_admissible(derive_exponents((2.5, 2.5, 2.5))).ok


@given(admissible_exponents(), st.integers(0, 2**31))
def test_quasi_triangle(e, seed):
    rng = np.random.default_rng(seed)
    z = rng.uniform(-2, 2, (3, 200, e.N + 1))
    d12 = quasi_metric(z[0], z[1], e)
    d23 = quasi_metric(z[1], z[2], e)
    d13 = quasi_metric(z[0], z[2], e)
    assert np.all(d13 <= e.gamma * (d12 + d23) * (1 + 1e-12))


@given(admissible_exponents())
def test_quasi_metric_symmetric_and_definite(e):
    rng = np.random.default_rng(0)
    a, b = rng.normal(size=(2, 10, e.N + 1))
    np.testing.assert_array_equal(quasi_metric(a, b, e), quasi_metric(b, a, e))
    assert np.all(quasi_metric(a, a, e) == 0.0)


def test_ball_radii_match_metric():
    e = derive_exponents((2.1, 2.2, 2.3))
    hs, ht = ball_radii(0.3, e)
    c = np.zeros(4)
    for i in range(3):
        z = c.copy()
        z[i] = hs[i]
        assert quasi_metric(z, c, e) == pytest.approx(0.3)
    z = c.copy()
    z[3] = ht
    assert quasi_metric(z, c, e) == pytest.approx(0.3)


def test_random_draws_are_admissible():
    rng = np.random.default_rng(1)
    for _ in range(20):
        assert validate_admissible(random_admissible(rng)).ok


def test_gamma_saturates_near_the_upper_clause():
    # p_1 just below p_bar(1 + 1/N) makes q_space_1 huge
    p2 = 2.2
    # solve p_bar + N (p_bar - p1) = tiny for p1 with N = 2 numerically
    lo, hi = 2.2, 3.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        e = derive_exponents((mid, p2))
        den = e.p_bar + 2 * (e.p_bar - mid)
        lo, hi = (mid, hi) if den > 0 else (lo, mid)
    e = derive_exponents((lo, p2))
    assert e.gamma == math.inf or e.gamma >= 1.0
