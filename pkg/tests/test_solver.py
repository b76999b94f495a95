import numpy as np
import pytest

from anisolab.exponents import derive_exponents
from anisolab.grid import Field, Grid, mass
from anisolab.solver import (BoundaryContactError, CFLError, InnerSolverError, SolverConfig, cfl_dt, energy,
                             evolve, flux_divergence, implicit_iterations, step_explicit, step_implicit)

E = derive_exponents((2.2, 2.4, 2.6))


def blob(n=32, N=3, half=1.0, width=0.3):
    g = Grid.cube(half, n, N)
    r2 = sum(x * x for x in g.mesh())
    return Field(g, np.maximum(1 - r2 / width**2, 0.0) ** 2, 0.0, E.p[:N])


def test_constant_field_is_stationary_in_the_interior():
    g = Grid.cube(1.0, 8, 3)
    u = Field(g, np.ones((8, 8, 8)))
    div = flux_divergence(u, E).values
    assert np.all(div[1:-1, 1:-1, 1:-1] == 0.0)
    assert cfl_dt(Field.zeros(g), E) == np.inf


def test_explicit_step_conserves_mass_and_positivity():
    u = blob()
    m0 = mass(u)
    for _ in range(10):
        u = step_explicit(u, cfl_dt(u, E), E)
    assert abs(mass(u) - m0) <= 1e-13 * m0
    assert u.values.min() >= 0.0


def test_explicit_step_refuses_unstable_dt():
    u = blob()
    with pytest.raises(CFLError):
        step_explicit(u, 1.01 * cfl_dt(u, E, safety=1.0), E)


def test_max_principle_and_energy_decay_explicit():
    u = blob()
    s0, e0 = u.values.max(), energy(u, E)
    for _ in range(30):
        u2 = step_explicit(u, cfl_dt(u, E), E)
        assert u2.values.max() <= u.values.max() + 1e-15
        assert energy(u2, E) <= energy(u, E) * (1 + 1e-10)
        u = u2
    assert u.values.max() < s0 and energy(u, E) < e0


def test_implicit_step_solves_the_backward_euler_equation():
    u = blob()
    dt = 5 * cfl_dt(u, E)
    cfg = SolverConfig(scheme="implicit", min_tol=1e-10)
    v, res, it = implicit_iterations(u, dt, E, cfg)
    r = v.values - u.values - dt * flux_divergence(v, E).values
    assert res <= 1e-10 and it > 0
    assert np.abs(r).max() <= 1e-10 * np.abs(u.values).max()
    assert abs(mass(v) - mass(u)) <= 1e-8 * mass(u)
    assert energy(v, E) < energy(u, E)


def test_implicit_failure_carries_last_iterate():
    u = blob()
    cfg = SolverConfig(scheme="implicit", min_tol=1e-14, max_inner_iters=2)
    with pytest.raises(InnerSolverError) as err:
        step_implicit(u, 100 * cfl_dt(u, E), E, cfg)
    assert isinstance(err.value.last_iterate, Field)
    assert not np.array_equal(err.value.last_iterate.values, u.values)
    assert err.value.residual > 1e-14


def test_evolve_lands_on_snapshot_times():
    u = blob()
    cfg = SolverConfig(snapshot_times=(0.001, 0.002))
    traj = evolve(u, 0.0, 0.003, E, cfg)
    assert traj.times == [0.0, 0.001, 0.002, 0.003]
    D = traj.diagnostics_array()
    assert np.all(np.abs(D[:, 1] - D[0, 1]) <= 1e-13 * D[0, 1])
    assert np.all(np.diff(D[:, 4]) <= 0)
    assert traj.snapshot(3).time == 0.003


def test_evolve_implicit_matches_explicit_roughly():
    u = blob()
    a = evolve(u, 0.0, 0.004, E, SolverConfig()).snapshot(-1)
    b = evolve(u, 0.0, 0.004, E, SolverConfig(scheme="implicit", implicit_dt=2e-4)).snapshot(-1)
    rel = np.abs(a.values - b.values).sum() / np.abs(a.values).sum()
    assert rel < 0.02


def test_boundary_contact_aborts_with_time():
    u = blob(width=0.7)
    with pytest.raises(BoundaryContactError) as err:
        evolve(u, 0.0, 10.0, E, SolverConfig(support_threshold=1e-12))
    assert 0.0 < err.value.time < 10.0
    assert f"{err.value.time:.6g}"[:4] in str(err.value)


def test_evolve_rejects_negative_data():
    u = blob()
    with pytest.raises(ValueError):
        evolve(u.with_values(-u.values), 0.0, 1.0, E)


def test_snapshot_directory(tmp_path):
    u = blob()
    traj = evolve(u, 0.0, 0.002, E, SolverConfig(snapshot_times=(0.001,), snapshot_dir=str(tmp_path)))
    assert len(list(tmp_path.glob("*.apde"))) == 3
    np.testing.assert_array_equal(traj.snapshot(0).values, u.values)


def test_lower_dimensions():
    e1 = derive_exponents((2.5,))
    g = Grid.cube(1.0, 64, 1)
    u = Field(g, np.maximum(1 - (g.centers(0) / 0.3) ** 2, 0), 0.0, e1.p)
    traj = evolve(u, 0.0, 1e-3, e1)
    assert abs(traj.diagnostics[-1][1] - mass(u)) <= 1e-13 * mass(u)


def test_config_validation():
    with pytest.raises(ValueError):
        SolverConfig(scheme="rk4")
    with pytest.raises(ValueError):
        SolverConfig(cfl_safety=0.0)
    with pytest.raises(ValueError):
        SolverConfig(snapshot_times=(2.0, 1.0))
