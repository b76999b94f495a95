import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from anisolab.exponents import derive_exponents, quasi_metric
from anisolab.geometry import (CoverageError, ScaleTransform, SelectionError, ball_inside_unit, compose,
                               interpolate_separable, intrinsic_box, invert, krylov_safonov_select, ks_omega,
                               phi_map, phi_slice, phi_transform, psi_map, psi_slice, relabel_field,
                               transform_field, transform_point)
from anisolab.grid import Field, Grid, mass
from conftest import admissible_exponents

pos = st.floats(0.05, 20.0)


@given(admissible_exponents(), pos, pos, pos, pos)
def test_group_laws(e, r1, t1, r2, t2):
    A, B = ScaleTransform(r1, t1, e), ScaleTransform(r2, t2, e)
    AB = compose(A, B)
    np.testing.assert_allclose(AB.space_factors(), A.space_factors() * B.space_factors(), rtol=1e-12)
    assert AB.time_factor() == pytest.approx(A.time_factor() * B.time_factor(), rel=1e-12)
    I = compose(A, invert(A))
    np.testing.assert_allclose(I.space_factors(), 1.0, rtol=1e-12)
    assert I.time_factor() == pytest.approx(1.0, rel=1e-12)


@given(admissible_exponents(), pos, pos)
def test_intrinsic_box_volume(e, rho, theta):
    box = intrinsic_box(np.zeros(e.N), rho, theta, e)
    assert box.volume == pytest.approx(rho**e.N, rel=1e-12)


@given(admissible_exponents(), pos)
def test_mass_preserving_member(e, rho):
    T = ScaleTransform.mass_preserving(rho, e)
    assert np.prod(T.space_factors()) * T.theta == pytest.approx(1.0, rel=1e-12)


@given(admissible_exponents(), st.floats(-3, 3))
def test_phi_transform_factors(e, s):
    T = phi_transform(s, e)
    np.testing.assert_allclose(T.space_factors(), np.exp(np.array(e.alpha_i) * s), rtol=1e-12)
    assert 1.0 / T.theta == pytest.approx(math.exp(e.alpha * s), rel=1e-12)
    assert T.time_factor() == pytest.approx(math.exp(s), rel=1e-12)


def test_transform_point():
    e = derive_exponents((2.2, 2.5, 2.8))
    T = ScaleTransform(2.0, 0.5, e)
    z = np.array([1.0, -1.0, 0.5, 2.0])
    out = transform_point(T, z)
    np.testing.assert_allclose(out[:3], z[:3] * T.space_factors())
    assert out[3] == pytest.approx(2.0 * T.time_factor())
    back = transform_point(T.inverse(), out)
    np.testing.assert_allclose(back, z)


def test_interpolation_exact_for_multilinear():
    g = Grid.box([0, 0], [2, 3], [5, 7])
    X, Y = np.meshgrid(g.centers(0), g.centers(1), indexing="ij")
    f = 1 + 2 * X - Y + 0.5 * X * Y
    xs = np.linspace(g.centers(0)[0], g.centers(0)[-1], 9)
    ys = np.linspace(g.centers(1)[0], g.centers(1)[-1], 11)
    out = interpolate_separable(f, g, [xs, ys])
    XX, YY = np.meshgrid(xs, ys, indexing="ij")
    np.testing.assert_allclose(out, 1 + 2 * XX - YY + 0.5 * XX * YY, rtol=1e-13)


def test_interpolation_outside_modes():
    g = Grid.box([0], [1], [4])
    v = np.ones(4)
    with pytest.raises(CoverageError):
        interpolate_separable(v, g, [np.array([2.0])])
    assert interpolate_separable(v, g, [np.array([2.0])], outside="zero")[0] == 0.0


def test_identity_transform_is_exact_copy():
    e = derive_exponents((2.3, 2.5, 2.7))
    g = Grid.cube(1.0, 6, 3)
    u = Field(g, np.random.default_rng(0).uniform(size=(6, 6, 6)), 1.0)
    out = transform_field(ScaleTransform.identity(e), u)
    np.testing.assert_array_equal(out.values, u.values)
    assert out.time == u.time


def test_relabel_is_exact_and_preserves_mass():
    e = derive_exponents((2.3, 2.5, 2.7))
    g = Grid.cube(1.0, 6, 3)
    u = Field(g, np.random.default_rng(0).uniform(size=(6, 6, 6)), 2.0)
    T = ScaleTransform.mass_preserving(1.7, e)
    v = relabel_field(T, u)
    assert mass(v) == pytest.approx(mass(u), rel=1e-12)
    assert v.time == pytest.approx(2.0 / T.time_factor())
    # the resampled transform on the relabelled grid reproduces the values
    w = transform_field(T, u, v.grid)
    np.testing.assert_allclose(w.values, v.values, rtol=1e-12)


def test_transform_resampling_close_on_smooth_data():
    e = derive_exponents((2.5, 2.5))
    g = Grid.cube(3.0, 128, 2)
    u = Field(g, np.exp(-sum(x * x for x in g.mesh()) * 4), 1.0)
    T = ScaleTransform.mass_preserving(1.3, e)
    v = transform_field(T, u, outside="zero")
    assert mass(v) == pytest.approx(mass(u), rel=1e-3)
    w = transform_field(T, u, outside="zero", renormalize=True)
    assert mass(w) == pytest.approx(mass(u), rel=1e-12)


def test_phi_psi_round_trip():
    e = derive_exponents((2.2, 2.4, 2.6))
    g = Grid.cube(2.0, 48, 3)
    vals = np.exp(-sum(x * x for x in g.mesh()) * 2)
    u = Field(g, vals, math.e)
    w = phi_slice(u, e, outside="zero")
    assert w.time == pytest.approx(1.0)
    back = psi_slice(w, e, g, outside="zero")
    assert back.time == pytest.approx(math.e)
    # two multilinear resamplings of a unit-height bump
    np.testing.assert_allclose(back.values, vals, atol=0.03)
    assert len(phi_map([u, u], e, outside="zero")) == 2
    assert len(psi_map([w], e, g, outside="zero")) == 1
    with pytest.raises(ValueError):
        phi_slice(u.with_values(vals, time=0.0), e)


# -- Krylov-Safonov selection ------------------------------------------------


def ks_brute_check(pts, vals, x0, beta, e, sel):
    """All three clauses, checked against every sample."""
    zero_out = np.where(quasi_metric(pts, x0, e) < 1.0, vals, 0.0)
    inside = ball_inside_unit(sel.x, sel.r, x0, e)
    near = quasi_metric(pts, sel.x, e) < sel.r
    sup_ok = sel.r**beta * zero_out[near].max() <= sel.omega
    k = np.flatnonzero(np.all(pts == sel.x, axis=1))[0]
    # omega <= omega^2 r^beta u(x), in logs since omega^2 overflows for large gamma
    lower_ok = zero_out[k] > 0 and math.log(sel.omega) + beta * math.log(sel.r) + math.log(zero_out[k]) >= 0
    return inside, sup_ok, lower_ok


def ks_sample(rng, e, M=400):
    x0 = np.zeros(e.N + 1)
    hs, ht = 2.0 * np.ones(e.N), 1.0
    pts = rng.uniform(-1, 1, (M, e.N + 1)) * np.append(hs, ht)
    pts[0] = x0
    beta = float(rng.uniform(0.5, 3.0))
    d = quasi_metric(pts, x0, e)
    kind = rng.integers(3)
    if kind == 0:
        d_sing = np.maximum(quasi_metric(pts, pts[rng.integers(M)], e), 1e-12)
        vals = np.minimum(d_sing ** (-beta), 1e6)
    elif kind == 1:
        vals = rng.exponential(5.0, M)
    else:
        vals = 1.0 + 50 * np.exp(-quasi_metric(pts, pts[rng.integers(M)], e) * 20)
    vals[0] = max(vals[0], 1.0 + rng.uniform())
    return pts, vals, x0, beta, d


def test_ks_selection_brute_force():
    rng = np.random.default_rng(7)
    e = derive_exponents((2.2, 2.5, 2.8))
    for _ in range(100):
        pts, vals, x0, beta, _ = ks_sample(rng, e)
        sel = krylov_safonov_select(pts, vals, x0, beta, e)
        assert all(ks_brute_check(pts, vals, x0, beta, e, sel))
        assert sel.omega == ks_omega(beta, e)


def test_ks_singular_example():
    e = derive_exponents((2.5, 2.5, 2.5))
    rng = np.random.default_rng(3)
    pts = rng.uniform(-0.5, 0.5, (2000, 4))
    pts[0] = 0.0
    beta = 1.5
    centre = np.array([0.1, 0.0, 0.0, 0.0])
    pts[1] = centre + 1e-9
    vals = np.minimum(np.maximum(quasi_metric(pts, centre, e), 1e-12) ** (-beta), 1e6)
    vals[0] = max(vals[0], 1.0)
    sel = krylov_safonov_select(pts, vals, pts[0], beta, e)
    assert all(ks_brute_check(pts, vals, pts[0], beta, e, sel))


def test_ks_preconditions():
    e = derive_exponents((2.5, 2.5, 2.5))
    pts = np.zeros((2, 4))
    pts[1, 0] = 0.1
    with pytest.raises(SelectionError):
        krylov_safonov_select(pts, np.array([0.5, 2.0]), pts[0], 1.0, e)
    with pytest.raises(SelectionError):
        krylov_safonov_select(pts, np.array([2.0, 2.0]), np.ones(4), 1.0, e)
    with pytest.raises(ValueError):
        krylov_safonov_select(pts, np.array([2.0, 2.0]), pts[0], 0.0, e)
