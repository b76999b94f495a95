"""Rescaled semigroup and the constructive Barenblatt builder.

``S~_s g`` evolves ``g`` (read as data at time 1) to time ``e^s`` and pulls
the result back with the mass-preserving group element of parameter
``e^(s/sigma)``. Stationary points of ``S~`` are self-similar profiles: a
fixed point ``w`` produces the family

    B_lambda(x, t) = lambda t^-alpha w(lambda^((2 - p_i)/p_i) x_i t^-alpha_i).
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .exponents import ExponentData, validate_admissible
from .geometry import ScaleTransform, interpolate_separable, phi_transform, transform_field
from .grid import Field, Grid, l1_distance, mass, support_box
from .solver import SolverConfig, evolve, final_field

log = logging.getLogger(__name__)


class BuilderError(RuntimeError):
    """Builder failure; ``history`` holds the residual of every iteration."""

    def __init__(self, message, history):
        super().__init__(message)
        self.history = list(history)


@dataclass
class FixedPointConfig:
    """Controls for the fixed-point iteration.

    ``eps0`` is the mass of the starting datum, a uniform density on the
    unit ball. ``stall_window`` iterations without a ``stall_factor``
    improvement of the best residual trigger a running-max restart.
    """

    eps0: float = 0.05
    s_bar: float = 1.0
    tol: float = 1e-4
    max_iters: int = 60
    use_running_sup: bool = True
    renormalize: bool = True
    stall_window: int = 5
    stall_factor: float = 0.9
    collapse_fraction: float = 1e-3

    def __post_init__(self):
        if not (self.eps0 > 0 and self.s_bar > 0 and self.tol > 0):
            raise ValueError("eps0, s_bar and tol must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be positive")


@dataclass
class BarenblattProfile:
    w: Field
    mass: float
    sup: float
    support: tuple | None
    eta_bar: float
    exps: ExponentData
    iterations: int
    residual: float
    history: list[float] = field(default_factory=list)
    restarts: int = 0


def _unit_time_config(cfg: SolverConfig | None) -> SolverConfig:
    cfg = cfg or SolverConfig()
    return replace(cfg, snapshot_times=(), keep_fields=True, snapshot_dir=None)


def semigroup_tilde(g: Field, s: float, e: ExponentData, cfg: SolverConfig | None = None,
                    renormalize: bool = False) -> Field:
    """Apply ``S~_s`` to ``g`` and resample onto ``g``'s grid.

    With ``renormalize`` the output is rescaled to carry exactly
    ``mass(g)``, removing the resampling drift.
    """
    if s < 0:
        raise ValueError("s must be nonnegative")
    if s == 0:
        return transform_field(ScaleTransform.identity(e), g)
    t_end = math.exp(s)
    start = Field(g.grid, g.values, 1.0, e.p)
    traj = evolve(start, 1.0, t_end, e, _unit_time_config(cfg))
    u = final_field(traj)
    out = transform_field(phi_transform(s, e), u, g.grid, outside="zero")
    if renormalize:
        m_in, m_out = mass(g), mass(out)
        if m_out > 0:
            out = out.with_values(out.values * (m_in / m_out))
    return Field(g.grid, out.values, g.time, e.p)


def unit_ball_datum(grid: Grid, total_mass: float, e: ExponentData | None = None) -> Field:
    """Uniform density on the Euclidean unit ball with the given discrete mass."""
    r2 = sum(x * x for x in grid.mesh())
    ind = np.broadcast_to((r2 < 1.0).astype(float), grid.dims)
    f = Field(grid, ind, 0.0, e.p if e else None)
    m = mass(f)
    if m == 0:
        raise ValueError("grid does not resolve the unit ball")
    return f.with_values(ind * (total_mass / m))


def _relative_l1(a: Field, b: Field) -> float:
    mb = np.sum(np.abs(b.values))
    return l1_distance(a, b) / (mb * b.grid.cell_volume) if mb > 0 else math.inf


def build_barenblatt(e: ExponentData, cfg: FixedPointConfig, grid: Grid,
                     solver_cfg: SolverConfig | None = None, initial: Field | None = None,
                     callback=None) -> BarenblattProfile:
    """Iterate ``g <- S~_{s_bar} g`` to a stationary profile.

    The residual of iterate ``g`` is ``|S~ g - g|_1 / |g|_1``; the returned
    ``w`` is the first iterate whose residual is at most ``cfg.tol``. With
    ``use_running_sup`` the pointwise maximum of all iterates is kept and the
    iteration restarts from it whenever progress stalls.
    """
    if grid.N != e.N:
        raise ValueError("grid dimension differs from N")
    report = validate_admissible(e)
    if not report.ok:
        raise ValueError("inadmissible exponents: " + "; ".join(report.violations))
    lo, hi = np.array(grid.origin), np.array(grid.upper)
    if np.any(lo > -2.0) or np.any(hi < 2.0):
        raise ValueError("the grid must cover [-2, 2]^N")
    g = initial if initial is not None else unit_ball_datum(grid, cfg.eps0, e)
    g = Field(grid, g.values, 0.0, e.p)
    m0 = mass(g)
    running = np.array(g.values)
    history: list[float] = []
    best, best_at, restarts = math.inf, 0, 0
    for it in range(1, cfg.max_iters + 1):
        nxt = semigroup_tilde(g, cfg.s_bar, e, solver_cfg, renormalize=cfg.renormalize)
        m_next = mass(nxt)
        if not m_next > cfg.collapse_fraction * m0:
            raise BuilderError(f"iterate collapsed to mass {m_next:.3e} (eps0 too small for the grid)", history)
        res = _relative_l1(nxt, g)
        history.append(res)
        log.info("fixed point iteration %d residual %.3e", it, res)
        if callback is not None:
            callback(it, res, nxt)
        if res <= cfg.tol:
            return _finish(g, e, it, res, history, restarts)
        if res < cfg.stall_factor * best:
            best, best_at = res, it
        running = np.maximum(running, nxt.values)
        if cfg.use_running_sup and it - best_at >= cfg.stall_window:
            g = nxt.with_values(running)
            restarts += 1
            best, best_at = math.inf, it
            log.info("stalled; restarting from running maximum")
        else:
            g = nxt
    raise BuilderError(f"no fixed point within {cfg.max_iters} iterations (last residual {history[-1]:.3e})", history)


SUPPORT_LEVEL = 1e-6


def _finish(w: Field, e, it, res, history, restarts) -> BarenblattProfile:
    w = Field(w.grid, w.values, 0.0, e.p)
    s = float(np.max(w.values))
    # explicit steps leave rounding-level tails; report the support above a relative level
    box = support_box(w, SUPPORT_LEVEL * s)
    support = (box.lower, box.upper) if box is not None else None
    return BarenblattProfile(w, mass(w), s, support, estimate_eta(w), e, it, res, history, restarts)


def profile_residual(profile: BarenblattProfile, s_bar: float, solver_cfg: SolverConfig | None = None,
                     renormalize: bool = True) -> float:
    nxt = semigroup_tilde(profile.w, s_bar, profile.exps, solver_cfg, renormalize=renormalize)
    return _relative_l1(nxt, profile.w)


# -- evaluation ---------------------------------------------------------------


def barenblatt_scales(profile: BarenblattProfile, lam: float, t: float):
    """``(amplitude, per-axis argument factors)`` of ``B_lambda`` at time t."""
    if not t > 0:
        raise ValueError("t must be positive")
    if not lam > 0:
        raise ValueError("lambda must be positive")
    e = profile.exps
    amp = lam * t ** (-e.alpha)
    factors = np.array([lam ** ((2.0 - pi) / pi) * t ** (-ai) for pi, ai in zip(e.p, e.alpha_i)])
    return amp, factors


def eval_barenblatt(profile: BarenblattProfile, lam: float, x, t: float):
    """Pointwise ``B_lambda(x, t)`` for points of shape ``(..., N)``."""
    amp, fac = barenblatt_scales(profile, lam, t)
    x = np.asarray(x, dtype=float)
    y = x * fac
    flat = y.reshape(-1, profile.exps.N)
    vals = np.array([
        interpolate_separable(profile.w.values, profile.w.grid, [[c] for c in pt], outside="zero").item()
        for pt in flat
    ])
    return amp * vals.reshape(x.shape[:-1])


def barenblatt_on_grid(profile: BarenblattProfile, lam: float, t: float, grid: Grid) -> Field:
    amp, fac = barenblatt_scales(profile, lam, t)
    coords = [grid.centers(i) * fac[i] for i in range(grid.N)]
    vals = interpolate_separable(profile.w.values, profile.w.grid, coords, outside="zero")
    return Field(grid, amp * vals, t, profile.exps.p)


def estimate_eta(w: Field, tol: float = 1e-12) -> float:
    """Largest eta with ``min_{|y_i| < eta} w >= eta``, by bisection.

    The minimum is that of the multilinear interpolant over the box, which
    is attained on the tensor product of the box edges and the cell centres
    inside. Returns 0 (with a warning) when ``w`` is not positive near the
    origin at sample resolution.
    """
    g = w.grid
    hull_lo = np.array([g.centers(i)[0] for i in range(g.N)])
    hull_hi = np.array([g.centers(i)[-1] for i in range(g.N)])
    eta_max = float(min(np.min(-hull_lo), np.min(hull_hi)))
    if eta_max <= 0:
        warnings.warn("grid does not contain the origin in its interior", RuntimeWarning)
        return 0.0

    def box_min(eta):
        coords = []
        for i in range(g.N):
            c = g.centers(i)
            inner = c[(c > -eta) & (c < eta)]
            coords.append(np.concatenate([[-eta, eta], inner]))
        return float(np.min(interpolate_separable(w.values, g, coords)))

    if not box_min(0.0) > 0:
        warnings.warn("profile is not positive at the origin at sample resolution", RuntimeWarning)
        return 0.0
    lo, hi = 0.0, min(eta_max, box_min(0.0))
    if box_min(hi) >= hi:
        return hi
    while hi - lo > tol * max(hi, 1e-300):
        mid = 0.5 * (lo + hi)
        if box_min(mid) >= mid:
            lo = mid
        else:
            hi = mid
    return lo


def self_similarity_residual(profile: BarenblattProfile, rho: float, t: float, grid: Grid,
                             lam: float = 1.0) -> float:
    """Relative L1 gap between ``T_rho B`` and ``B`` at time ``t`` on ``grid``.

    ``B`` is sampled on ``grid`` at time ``rho^sigma t`` and resampled by the
    mass-preserving group element, so the residual reflects discretisation.
    """
    e = profile.exps
    if rho == 1.0:
        return 0.0
    T = ScaleTransform.mass_preserving(rho, e)
    src = barenblatt_on_grid(profile, lam, t * T.time_factor(), grid)
    mapped = transform_field(T, src, grid, outside="zero")
    ref = barenblatt_on_grid(profile, lam, t, grid)
    return _relative_l1(Field(grid, mapped.values, t), ref)


def fit_support_constant(g: Field, s: float, e: ExponentData, R0: float,
                         cfg: SolverConfig | None = None, threshold: float = 1e-6):
    """Fit ``c`` in ``R_i(s) = 2 e^(-s alpha_i) R0 + c |g|_1^(p_bar (p_i - 2)/(p_i sigma))``.

    Returns ``(c, out)`` where ``c`` is the smallest constant that makes the
    bound contain the support of ``out = S~_s g``.
    """
    out = semigroup_tilde(g, s, e, cfg)
    box = support_box(out, threshold * float(np.max(out.values)))
    m = mass(g)
    reach = np.maximum(np.abs(np.array(box.lower)), np.abs(np.array(box.upper)))
    cs = []
    for i, (pi, ai) in enumerate(zip(e.p, e.alpha_i)):
        base = 2.0 * math.exp(-s * ai) * R0
        cs.append((reach[i] - base) / m ** (e.p_bar * (pi - 2.0) / (pi * e.sigma)))
    return max(cs), out


def support_bound(g: Field, s: float, e: ExponentData, R0: float, c: float) -> np.ndarray:
    m = mass(g)
    return np.array([2.0 * math.exp(-s * ai) * R0 + c * m ** (e.p_bar * (pi - 2.0) / (pi * e.sigma))
                     for pi, ai in zip(e.p, e.alpha_i)])
