import math

import numpy as np
import pytest

from anisolab.exponents import derive_exponents
from anisolab.fokker_planck import (BarenblattProfile, BuilderError, FixedPointConfig, barenblatt_on_grid,
                                    barenblatt_scales, build_barenblatt, estimate_eta, eval_barenblatt,
                                    fit_support_constant, profile_residual, self_similarity_residual,
                                    semigroup_tilde, support_bound, unit_ball_datum)
from anisolab.grid import Field, Grid, l1_distance, mass
from anisolab.oracle import IsotropicBarenblatt
from anisolab.solver import SolverConfig

ISO = derive_exponents((2.5, 2.5, 2.5))
SCFG = SolverConfig(support_threshold=1e-6)


@pytest.fixture(scope="module")
def profile():
    return build_barenblatt(ISO, FixedPointConfig(), Grid.cube(4.0, 32, 3), SCFG)


def test_builder_converges(profile):
    assert profile.residual <= 1e-4
    assert profile.history[-1] == profile.residual
    assert profile.mass == pytest.approx(0.05, rel=1e-12)
    assert profile.eta_bar > 0


def test_builder_matches_oracle(profile):
    exact = IsotropicBarenblatt(2.5, 3, profile.mass).field(profile.w.grid, 1.0)
    assert l1_distance(profile.w, exact) / mass(exact) < 0.05


def test_fixed_point_is_stationary(profile):
    assert profile_residual(profile, 1.0, SCFG) <= 2e-4


def test_semigroup_mass_drift_is_resampling_only(profile):
    # evolution conserves mass exactly; the drift comes from multilinear
    # resampling and is a few percent at h = 0.25
    out = semigroup_tilde(profile.w, 0.5, ISO, SCFG)
    assert abs(mass(out) - profile.mass) / profile.mass < 0.03
    fixed = semigroup_tilde(profile.w, 0.5, ISO, SCFG, renormalize=True)
    assert mass(fixed) == pytest.approx(profile.mass, rel=1e-12)


def test_semigroup_identity_and_domain():
    g = unit_ball_datum(Grid.cube(4.0, 16, 3), 0.05, ISO)
    same = semigroup_tilde(g, 0.0, ISO)
    np.testing.assert_array_equal(same.values, g.values)
    with pytest.raises(ValueError):
        semigroup_tilde(g, -1.0, ISO)


def test_semigroup_composes(profile):
    a = semigroup_tilde(semigroup_tilde(profile.w, 0.25, ISO, SCFG), 0.25, ISO, SCFG)
    b = semigroup_tilde(profile.w, 0.5, ISO, SCFG)
    assert l1_distance(a, b) / mass(b) < 0.04


def test_scales_and_pointwise_evaluation(profile):
    amp, fac = barenblatt_scales(profile, 1.0, 1.0)
    assert amp == 1.0 and np.allclose(fac, 1.0)
    amp, fac = barenblatt_scales(profile, 2.0, 3.0)
    assert amp == pytest.approx(2.0 * 3.0 ** (-ISO.alpha))
    on = barenblatt_on_grid(profile, 1.0, 1.0, profile.w.grid)
    np.testing.assert_allclose(on.values, profile.w.values, rtol=1e-12, atol=1e-300)
    x = np.array([[0.3, -0.2, 0.1], [10.0, 0.0, 0.0]])
    v = eval_barenblatt(profile, 1.0, x, 2.0)
    assert v[0] > 0 and v[1] == 0
    with pytest.raises(ValueError):
        eval_barenblatt(profile, 1.0, x, 0.0)
    with pytest.raises(ValueError):
        eval_barenblatt(profile, -1.0, x, 1.0)


def test_mass_of_family(profile):
    g = Grid.cube(4.0, 48, 3)
    for lam in (0.5, 1.0, 2.0):
        f = barenblatt_on_grid(profile, lam, 1.0, g)
        # mass scales as lambda^(1 - sum (2 - p_i)/p_i)
        expect = profile.mass * lam ** (1 + sum((p - 2) / p for p in ISO.p))
        assert mass(f) == pytest.approx(expect, rel=0.03)


def test_eta_bracket():
    g = Grid.cube(1.0, 21, 2)
    w = Field(g, np.full((21, 21), 0.3))
    assert estimate_eta(w) == pytest.approx(0.3, rel=1e-9)
    with pytest.warns(RuntimeWarning):
        assert estimate_eta(Field.zeros(g)) == 0.0


def test_self_similarity(profile):
    # the rho = 0.5 image spans only a few cells at this resolution
    assert self_similarity_residual(profile, 2.0, 0.27, profile.w.grid) < 0.05
    assert self_similarity_residual(profile, 1.4, 0.27, profile.w.grid) < 0.05
    assert self_similarity_residual(profile, 1.0, 0.27, profile.w.grid) == 0.0


def test_support_bound_contains_support():
    g = unit_ball_datum(Grid.cube(4.0, 32, 3), 0.05, ISO)
    c, out = fit_support_constant(g, 0.5, ISO, 1.0, SCFG)
    bound = support_bound(g, 0.5, ISO, 1.0, c)
    assert np.all(bound > 0)
    g2 = unit_ball_datum(Grid.cube(4.0, 32, 3), 0.05, ISO)
    np.testing.assert_allclose(support_bound(g2, 0.5, ISO, 1.0, c), bound)


def test_builder_preconditions():
    with pytest.raises(ValueError):
        build_barenblatt(derive_exponents((2.0, 2.5, 2.5)), FixedPointConfig(), Grid.cube(3.0, 8, 3))
    with pytest.raises(ValueError):
        build_barenblatt(ISO, FixedPointConfig(), Grid.cube(1.5, 8, 3))
    with pytest.raises(ValueError):
        FixedPointConfig(eps0=0.0)


def test_builder_reports_failure_with_history():
    cfg = FixedPointConfig(max_iters=2)
    with pytest.raises(BuilderError) as err:
        build_barenblatt(ISO, cfg, Grid.cube(4.0, 24, 3), SCFG)
    assert len(err.value.history) == 2
