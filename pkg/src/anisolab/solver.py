"""Time stepping for the orthotropic equation on a box with zero boundary data.

Two schemes are provided. The explicit scheme is a conservative face-flux
update that is monotone under the stability bound returned by
:func:`cfl_dt`. The implicit scheme solves each backward Euler step as the
minimiser of the strictly convex functional

    J(v) = E(v) + |v - u|^2 / (2 dt),     E(v) = sum_i sum_faces |D_i v|^p_i / p_i

with preconditioned nonlinear conjugate gradients.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ._kernels import StencilOps
from .exponents import ExponentData
from .grid import Field, Grid, Trajectory, mass, pairwise_sum, support_box, write_field


class CFLError(ValueError):
    pass


class InnerSolverError(RuntimeError):
    """The implicit minimiser did not reach tolerance.

    ``last_iterate`` holds the final iterate and ``residual`` its relative
    residual.
    """

    def __init__(self, message, last_iterate: Field, residual: float):
        super().__init__(message)
        self.last_iterate = last_iterate
        self.residual = residual


class BoundaryContactError(RuntimeError):
    """Support came within the guard margin of the box boundary."""

    def __init__(self, time: float, margin: int):
        super().__init__(
            f"support reached within {margin} cells of the boundary at t = {time:.9g}; enlarge the box"
        )
        self.time = time
        self.margin = margin


@dataclass
class SolverConfig:
    """Time stepping controls.

    ``support_threshold`` is relative to the sup of the initial datum and
    defines which cells count as support for diagnostics and for the
    boundary guard.
    """

    scheme: str = "explicit"
    cfl_safety: float = 0.4
    implicit_dt: float = 1e-3
    min_tol: float = 1e-9
    max_inner_iters: int = 5000
    snapshot_times: tuple[float, ...] = ()
    support_threshold: float = 1e-9
    boundary_margin: int = 2
    keep_fields: bool = True
    snapshot_dir: str | None = None
    backend: str = "auto"

    def __post_init__(self):
        if self.scheme not in ("explicit", "implicit"):
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if not 0.0 < self.cfl_safety <= 1.0:
            raise ValueError("cfl_safety must lie in (0, 1]")
        if not self.implicit_dt > 0 or not self.min_tol > 0 or self.max_inner_iters < 1:
            raise ValueError("implicit_dt, min_tol and max_inner_iters must be positive")
        if self.support_threshold < 0:
            raise ValueError("support_threshold must be nonnegative")
        st = [float(t) for t in self.snapshot_times]
        if any(b <= a for a, b in zip(st, st[1:])):
            raise ValueError("snapshot_times must be strictly increasing")
        self.snapshot_times = tuple(st)
        if self.boundary_margin < 0:
            raise ValueError("boundary_margin must be nonnegative")


@functools.lru_cache(maxsize=16)
def _ops_cached(dims, spacing, p, backend):
    return StencilOps(dims, spacing, p, backend)


def get_ops(grid: Grid, e: ExponentData, backend: str = "auto") -> StencilOps:
    if grid.N != e.N:
        raise ValueError(f"grid dimension {grid.N} does not match exponents N = {e.N}")
    return _ops_cached(grid.dims, grid.spacing, e.p, backend)


def flux_divergence(u: Field, e: ExponentData, backend: str = "auto") -> Field:
    """Discrete ``sum_i d_i(|d_i u|^(p_i - 2) d_i u)`` with zero ghost cells."""
    div, _, _ = get_ops(u.grid, e, backend).divergence(u.values)
    return u.with_values(div)


def _dt_from_rate(rate: float, safety: float) -> float:
    return math.inf if rate == 0.0 else safety / rate


def cfl_dt(u: Field, e: ExponentData, safety: float = 0.4, backend: str = "auto") -> float:
    """Largest monotone explicit step, scaled by ``safety``.

    Returns ``inf`` when every face difference vanishes; callers cap it.
    """
    _, rate, _ = get_ops(u.grid, e, backend).divergence(u.values)
    return _dt_from_rate(rate, safety)


def energy(u: Field, e: ExponentData, backend: str = "auto") -> float:
    return get_ops(u.grid, e, backend).energy(u.values)


def step_explicit(u: Field, dt: float, e: ExponentData, backend: str = "auto") -> Field:
    """One forward Euler step; refuses steps above the unit-safety bound."""
    div, rate, _ = get_ops(u.grid, e, backend).divergence(u.values)
    limit = _dt_from_rate(rate, 1.0)
    if dt > limit:
        raise CFLError(f"dt = {dt:.6g} exceeds the stability bound {limit:.6g}")
    return u.with_values(u.values + dt * div, time=u.time + dt)


# -- implicit step ------------------------------------------------------------


def _line_search(ops, v, d, u, dt, g0, maxit=40):
    """Minimise ``phi(a) = J(v + a d)`` along a descent direction.

    Safeguarded Newton on ``phi'`` using the exact second derivative; the
    bracket ``[lo, hi]`` keeps ``phi'(lo) < 0 < phi'(hi)``, which is valid
    because ``phi`` is convex.
    """
    p1 = ops.p - 1.0
    vu_d = pairwise_sum((v - u) * d)
    dd = pairwise_sum(d * d)

    def derivs(a):
        s1, s2, _ = ops.face_sums(v, d, a)
        return vu_d + a * dd + dt * float(np.sum(s1)), dd + dt * float(np.sum(p1 * s2))

    lo, hi = 0.0, math.inf
    d1, d2 = g0, derivs(0.0)[1]
    a = -g0 / d2
    for _ in range(maxit):
        d1, d2 = derivs(a)
        if abs(d1) <= 1e-2 * abs(g0):
            return a
        if d1 < 0:
            lo = a
        else:
            hi = a
        nxt = a - d1 / d2
        if not (lo < nxt < hi):
            nxt = 0.5 * (lo + hi) if math.isfinite(hi) else 2.0 * max(a, lo)
        a = nxt
    # fall back on the last point known to decrease phi
    return lo


def _residual_norms(r, u):
    """Relative residuals in L1 and max norm."""
    scale1 = pairwise_sum(np.abs(u))
    scale_inf = float(np.max(np.abs(u)))
    r1 = pairwise_sum(np.abs(r))
    rinf = float(np.max(np.abs(r)))
    rel1 = r1 / scale1 if scale1 > 0 else (0.0 if r1 == 0 else math.inf)
    relinf = rinf / scale_inf if scale_inf > 0 else (0.0 if rinf == 0 else math.inf)
    return max(rel1, relinf)


def _implicit_solve(ops, u, dt, tol, maxit, v0=None):
    v = u.copy() if v0 is None else v0.copy()
    div, _, diag = ops.divergence(v, want_diag=True)
    r = v - u - dt * div
    res = _residual_norms(r, u)
    if res <= tol:
        return v, res, 0
    z = r / (1.0 + dt * diag)
    d = -z
    rz = pairwise_sum(r * z)
    for it in range(1, maxit + 1):
        g0 = pairwise_sum(r * d)
        if not g0 < 0:
            d = -z
            g0 = -rz
        a = _line_search(ops, v, d, u, dt, g0)
        v = v + a * d
        div, _, diag = ops.divergence(v, want_diag=True)
        r_new = v - u - dt * div
        res = _residual_norms(r_new, u)
        if res <= tol:
            return v, res, it
        z_new = r_new / (1.0 + dt * diag)
        rz_new = pairwise_sum(r_new * z_new)
        beta = max(0.0, (rz_new - pairwise_sum(r * z_new)) / rz) if rz > 0 else 0.0
        d = -z_new + beta * d
        r, z, rz = r_new, z_new, rz_new
    raise InnerSolverError(
        f"implicit step did not converge in {maxit} iterations (residual {res:.3e})",
        v,
        res,
    )


def step_implicit(u: Field, dt: float, e: ExponentData, cfg: SolverConfig | None = None) -> Field:
    """Backward Euler step as the minimiser of ``J``.

    Stops once ``r = v - u - dt div(v)`` (the gradient of ``J`` in state
    units) satisfies ``|r| <= min_tol |u|`` in both the L1 and the max norm.
    """
    cfg = cfg or SolverConfig(scheme="implicit")
    if not dt > 0:
        raise ValueError("dt must be positive")
    ops = get_ops(u.grid, e, cfg.backend)
    try:
        v, _, _ = _implicit_solve(ops, np.asarray(u.values), dt, cfg.min_tol, cfg.max_inner_iters)
    except InnerSolverError as err:
        err.last_iterate = u.with_values(err.last_iterate, time=u.time + dt)
        raise
    return u.with_values(v, time=u.time + dt)


def implicit_iterations(u: Field, dt: float, e: ExponentData, cfg: SolverConfig) -> tuple[Field, float, int]:
    """Like :func:`step_implicit` but also returns residual and iteration count."""
    ops = get_ops(u.grid, e, cfg.backend)
    v, res, it = _implicit_solve(ops, np.asarray(u.values), dt, cfg.min_tol, cfg.max_inner_iters)
    return u.with_values(v, time=u.time + dt), res, it


# -- time integration ---------------------------------------------------------


def _shell_max(a: np.ndarray, margin: int) -> float:
    m = 0.0
    for axis in range(a.ndim):
        k = min(margin, a.shape[axis])
        lo = np.take(a, range(k), axis=axis)
        hi = np.take(a, range(a.shape[axis] - k, a.shape[axis]), axis=axis)
        m = max(m, float(np.max(np.abs(lo))), float(np.max(np.abs(hi))))
    return m


def diagnostics_row(u: Field, e: ExponentData, threshold: float, backend: str = "auto") -> tuple:
    box = support_box(u, threshold)
    hw = box.half_widths if box is not None else np.zeros(u.grid.N)
    s, i = float(np.max(u.values)), float(np.min(u.values))
    return (u.time, mass(u), s, i, energy(u, e, backend), *[float(x) for x in hw])


def evolve(g: Field, t0: float, t1: float, e: ExponentData, cfg: SolverConfig | None = None,
           observer=None) -> Trajectory:
    """Evolve ``g`` (data at time ``t0``) up to ``t1``.

    Snapshots are taken at ``t0``, at every configured snapshot time inside
    ``(t0, t1)`` and at ``t1``; time steps are clipped to land on them.

    Raises
    ------
    BoundaryContactError
        if cells within ``boundary_margin`` of the box edge exceed the
        support threshold.
    InnerSolverError
        propagated from implicit steps.
    """
    cfg = cfg or SolverConfig()
    if not t1 > t0:
        raise ValueError("t1 must exceed t0")
    if float(np.min(g.values)) < 0.0:
        raise ValueError("initial datum must be nonnegative")
    ops = get_ops(g.grid, e, cfg.backend)
    targets = sorted({float(t) for t in cfg.snapshot_times if t0 < t < t1} | {float(t1)})
    thr = cfg.support_threshold * float(np.max(g.values))
    traj = Trajectory(g.grid.N)
    snap_dir = Path(cfg.snapshot_dir) if cfg.snapshot_dir else None

    def record(values, t):
        f = Field(g.grid, values, t, e.p)
        traj_entry = f
        if snap_dir is not None:
            path = snap_dir / f"snap_{len(traj):05d}.apde"
            write_field(path, f)
            traj_entry = path
        elif not cfg.keep_fields:
            traj_entry = None
        traj.append(traj_entry, diagnostics_row(f, e, thr, cfg.backend))

    u = np.array(g.values, dtype=float)
    if _shell_max(u, cfg.boundary_margin) > thr:
        raise BoundaryContactError(t0, cfg.boundary_margin)
    record(u, t0)
    t = float(t0)
    for target in targets:
        while t < target:
            remaining = target - t
            if cfg.scheme == "explicit":
                div, rate, _ = ops.divergence(u)
                dt = _dt_from_rate(rate, cfg.cfl_safety)
                last = dt >= remaining
                dt = remaining if last else dt
                u = u + dt * div
            else:
                dt = min(cfg.implicit_dt, remaining)
                last = dt >= remaining
                try:
                    u, _, _ = _implicit_solve(ops, u, dt, cfg.min_tol, cfg.max_inner_iters)
                except InnerSolverError as err:
                    err.last_iterate = Field(g.grid, err.last_iterate, t + dt, e.p)
                    raise
            t = target if last else t + dt
            if observer is not None:
                observer(t, dt, u)
            if _shell_max(u, cfg.boundary_margin) > thr:
                raise BoundaryContactError(t, cfg.boundary_margin)
        record(u, t)
    return traj


def final_field(traj: Trajectory) -> Field:
    return traj.snapshot(len(traj) - 1)
