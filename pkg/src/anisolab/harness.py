"""Measurement probes run on trajectories.

* support growth fits of the per-axis spreading rates
* intrinsic Harnack ratios over intrinsic boxes and waiting times
* De Giorgi measure-to-pointwise statistics on rescaled cylinders
* dyadic search for subcubes where a level set is dense
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .exponents import ExponentData
from .geometry import ScaleTransform, intrinsic_box, interpolate_separable
from .grid import Field, Grid, Trajectory
from .oracle import IsotropicBarenblatt, euclidean_barenblatt, isotropic_barenblatt, pde_residual

__all__ = [
    "IsotropicBarenblatt", "isotropic_barenblatt", "euclidean_barenblatt", "validate_oracle",
    "DegenerateFitError", "SupportGrowthReport", "check_support_growth", "fit_growth",
    "SpaceTimeSampler", "HarnackReport", "harnack_probe", "DeGiorgiProbe", "degiorgi_probe",
    "degiorgi_corpus_threshold", "degiorgi_window_probe", "sample_unit_cylinder", "ClusterResult",
    "cluster_search", "random_bumps", "ComparisonResult", "ordered_pair_run",
]


def validate_oracle(p: float, N: int, mass: float = 1.0, n_points: int = 200, resolution: int = 10_000,
                    seed: int = 0) -> float:
    """Max relative PDE residual of the closed-form solution at time 1.

    Points are drawn inside 60% of the support and kept away from the
    coordinate planes; finite differences use step ``radius / resolution``.
    """
    B = IsotropicBarenblatt(p, N, mass)
    R = B.support_radius(1.0)
    rng = np.random.default_rng(seed)
    pts = rng.uniform(-0.6 * R, 0.6 * R, (n_points, N))
    pts = pts[np.all(np.abs(pts) > 0.05 * R, axis=1)]
    res, ut = pde_residual(lambda x, t: B(x, t), pts, 1.0, p, R / resolution)
    return float(np.max(np.abs(res)) / np.max(np.abs(ut)))


# -- support growth -----------------------------------------------------------


class DegenerateFitError(ValueError):
    pass


@dataclass
class SupportGrowthReport:
    slopes: np.ndarray
    alpha_i: np.ndarray
    relative_error: np.ndarray
    window: tuple[float, float]
    n_points: int

    @property
    def ordered(self) -> bool:
        """True when slopes decrease with increasing p_i order."""
        return bool(np.all(np.diff(self.slopes) < 0))


def fit_growth(times, half_widths, R0=0.0, offset=0.0, t_from: float | None = None):
    """Least-squares slopes of ``log(hw_i - offset_i - R0_i)`` against ``log t``."""
    t = np.asarray(times, dtype=float)
    hw = np.atleast_2d(np.asarray(half_widths, dtype=float))
    N = hw.shape[1]
    R0 = np.broadcast_to(np.asarray(R0, dtype=float), (N,))
    off = np.broadcast_to(np.asarray(offset, dtype=float), (N,))
    sel = t > 0 if t_from is None else (t >= t_from)
    if sel.sum() < 2:
        raise DegenerateFitError("fewer than two snapshots in the fit window")
    slopes = np.empty(N)
    for i in range(N):
        y = hw[sel, i] - off[i] - R0[i]
        if np.any(y <= 0) or np.ptp(hw[sel, i]) == 0:
            raise DegenerateFitError(f"axis {i + 1}: support does not grow beyond R0 in the fit window")
        slopes[i] = np.polyfit(np.log(t[sel]), np.log(y), 1)[0]
    return slopes, int(sel.sum())


def check_support_growth(traj: Trajectory, e: ExponentData, R0=0.0, late_fraction: float = 0.5,
                         spacing: Sequence[float] | None = None) -> SupportGrowthReport:
    """Fit per-axis spreading rates over the late part of a trajectory.

    ``late_fraction`` is the share of the logarithmic time span (ending at
    the last snapshot) used for the fit. Half-widths are measured to outer
    cell edges; half a cell is subtracted when ``spacing`` is given.
    """
    D = traj.diagnostics_array()
    t = D[:, 0]
    hw = D[:, 5:]
    pos = t > 0
    if pos.sum() < 2 or not np.any(hw > 0):
        raise DegenerateFitError("trajectory has no measurable support")
    lt = np.log(t[pos])
    t_from = math.exp(lt[-1] - late_fraction * (lt[-1] - lt[0]))
    offset = 0.0 if spacing is None else 0.5 * np.asarray(spacing, dtype=float)
    slopes, n = fit_growth(t, hw, R0, offset, t_from)
    ai = np.array(e.alpha_i)
    return SupportGrowthReport(slopes, ai, slopes / ai - 1.0, (t_from, float(t[-1])), n)


# -- space-time sampling ------------------------------------------------------


class SpaceTimeSampler:
    """Multilinear-in-space, linear-in-time view of a trajectory.

    Only the two snapshots bracketing a query time are touched; loaded
    snapshots are cached.
    """

    def __init__(self, traj: Trajectory):
        if len(traj) < 2:
            raise ValueError("need at least two snapshots")
        self.traj = traj
        self.times = np.array(traj.times)
        self._cache: dict[int, Field] = {}
        self.grid: Grid = self._field(0).grid

    def _field(self, k: int) -> Field:
        if k not in self._cache:
            self._cache[k] = self.traj.snapshot(k)
        return self._cache[k]

    @property
    def t_range(self) -> tuple[float, float]:
        return float(self.times[0]), float(self.times[-1])

    def covers_time(self, t: float) -> bool:
        return self.times[0] <= t <= self.times[-1]

    def covers_box(self, lower, upper) -> bool:
        g = self.grid
        lo = np.array([g.centers(i)[0] for i in range(g.N)])
        hi = np.array([g.centers(i)[-1] for i in range(g.N)])
        return bool(np.all(np.asarray(lower) >= lo) and np.all(np.asarray(upper) <= hi))

    def _bracket(self, t: float):
        if not self.covers_time(t):
            raise ValueError(f"time {t} outside the trajectory")
        k = int(np.searchsorted(self.times, t, side="right")) - 1
        k = min(max(k, 0), len(self.times) - 2)
        t0, t1 = self.times[k], self.times[k + 1]
        w = (t - t0) / (t1 - t0)
        return k, w

    def on_tensor(self, coords, t: float) -> np.ndarray:
        k, w = self._bracket(t)
        a = interpolate_separable(self._field(k).values, self.grid, coords)
        if w == 0.0:
            return a
        b = interpolate_separable(self._field(k + 1).values, self.grid, coords)
        return (1.0 - w) * a + w * b

    def value(self, x, t: float) -> float:
        return float(self.on_tensor([[c] for c in x], t).item())

    def box_extremes(self, lower, upper, t: float) -> tuple[float, float]:
        """Exact min and max of the interpolant over the closed box."""
        coords = []
        for i in range(self.grid.N):
            c = self.grid.centers(i)
            inner = c[(c > lower[i]) & (c < upper[i])]
            coords.append(np.concatenate([[lower[i], upper[i]], inner]))
        vals = self.on_tensor(coords, t)
        return float(vals.min()), float(vals.max())


# -- Harnack probe ------------------------------------------------------------


@dataclass
class HarnackReport:
    probe_points: list
    C1: float
    C2: float
    rho_grid: list
    ratios_fwd: np.ndarray
    ratios_bwd: np.ndarray
    empirical_C3: float
    c3_by_rho: np.ndarray
    skipped: list = field(default_factory=list)

    def to_dict(self) -> dict:
        def clean(a):
            return [[None if not np.isfinite(v) else float(v) for v in row] for row in np.asarray(a)]
        return {
            "probe_points": [list(map(float, x)) + [float(t)] for x, t in self.probe_points],
            "C1": self.C1,
            "C2": self.C2,
            "rho_grid": list(map(float, self.rho_grid)),
            "ratios_fwd": clean(self.ratios_fwd),
            "ratios_bwd": clean(self.ratios_bwd),
            "empirical_C3": self.empirical_C3,
            "c3_by_rho": [None if not np.isfinite(v) else float(v) for v in self.c3_by_rho],
            "skipped": [{"point": list(map(float, x)) + [float(t)], "rho": r, "reason": why}
                        for (x, t), r, why in self.skipped],
        }


def harnack_probe(traj, e: ExponentData, C1: float, C2: float, rho_grid: Sequence[float],
                  probes: Sequence[tuple[Sequence[float], float]], C3_window: float = 1.0) -> HarnackReport:
    """Forward and backward Harnack ratios at each probe and radius.

    For a probe ``(x*, t*)`` with ``u* = u(x*, t*) > 0`` set ``M = u* / C1``
    and ``tau = M^(2 - p_bar) (C2 rho)^p_bar``. The forward ratio is
    ``u* / inf u(., t* + tau)`` and the backward ratio
    ``sup u(., t* - tau) / u*``, both over ``x* + K_rho(M)``. A pair is
    skipped (with a reason) when ``u*`` vanishes, when the box
    ``x* + K_{C3_window rho}(M)`` leaves the sampled region, or when
    ``t* +- tau`` leaves the time window.
    """
    sampler = traj if isinstance(traj, SpaceTimeSampler) else SpaceTimeSampler(traj)
    rho_grid = [float(r) for r in rho_grid]
    P, R = len(probes), len(rho_grid)
    fwd = np.full((P, R), np.nan)
    bwd = np.full((P, R), np.nan)
    skipped = []
    for a, (x, t) in enumerate(probes):
        x = np.asarray(x, dtype=float)
        ustar = sampler.value(x, t) if sampler.covers_time(t) and sampler.covers_box(x, x) else 0.0
        for b, rho in enumerate(rho_grid):
            if not ustar > 0:
                skipped.append(((x, t), rho, "u vanishes at the probe point"))
                continue
            M = ustar / C1
            tau = M ** (2.0 - e.p_bar) * (C2 * rho) ** e.p_bar
            hw = np.array(intrinsic_box(x, rho, M, e).half_widths)
            hw_win = np.array(intrinsic_box(x, C3_window * rho, M, e).half_widths)
            if not sampler.covers_box(x - hw_win, x + hw_win):
                skipped.append(((x, t), rho, "intrinsic box leaves the data window"))
                continue
            if not (sampler.covers_time(t + tau) and sampler.covers_time(t - tau)):
                skipped.append(((x, t), rho, "waiting time leaves the data window"))
                continue
            inf_fwd, _ = sampler.box_extremes(x - hw, x + hw, t + tau)
            _, sup_bwd = sampler.box_extremes(x - hw, x + hw, t - tau)
            fwd[a, b] = ustar / inf_fwd if inf_fwd > 0 else math.inf
            bwd[a, b] = sup_bwd / ustar
    if np.all(np.isnan(fwd)):
        raise ValueError("no valid probe: every (point, rho) pair was skipped")
    both = np.fmax(fwd, bwd)
    c3_by_rho = np.array([np.nanmax(both[:, b]) if np.any(~np.isnan(both[:, b])) else np.nan for b in range(R)])
    return HarnackReport(
        probe_points=[(np.asarray(x, dtype=float), float(t)) for x, t in probes],
        C1=float(C1), C2=float(C2), rho_grid=rho_grid, ratios_fwd=fwd, ratios_bwd=bwd,
        empirical_C3=float(np.nanmax(both)), c3_by_rho=c3_by_rho, skipped=skipped,
    )


# -- De Giorgi probe ----------------------------------------------------------


@dataclass
class DeGiorgiProbe:
    a: float
    mu_observed: float
    inf_half: float
    implication_holds: bool


def degiorgi_probe(values: np.ndarray, space_centers: Sequence[np.ndarray], s_values: np.ndarray,
                   a: float) -> DeGiorgiProbe:
    """Statistics of ``v`` sampled on the unit backward cylinder.

    ``values`` has shape ``(len(s_values), n_1, ..., n_N)`` and samples a
    function on ``K_1 x (-1, 0]``; ``space_centers`` are the per-axis sample
    coordinates in ``[-1/2, 1/2]``. The half cylinder is
    ``K_{1/2} x (-1/4, 0]``.
    """
    if not 0 < a <= 1:
        raise ValueError("a must lie in (0, 1]")
    v = np.asarray(values, dtype=float)
    s = np.asarray(s_values, dtype=float)
    mu = float(np.mean(v <= a))
    mask_s = s > -0.25
    sub = v[mask_s]
    for i, c in enumerate(space_centers):
        inside = np.abs(np.asarray(c)) < 0.25
        sub = np.compress(inside, sub, axis=i + 1)
    inf_half = float(sub.min()) if sub.size else math.nan
    return DeGiorgiProbe(a=a, mu_observed=mu, inf_half=inf_half, implication_holds=bool(inf_half >= a / 2))


def sample_unit_cylinder(source, e: ExponentData, center, t_top: float, rho: float, theta: float,
                         n_space: int = 16, n_time: int = 16):
    """Sample ``v = T_{rho,theta} u`` shifted so the window becomes ``K_1 x (-1, 0]``.

    ``source`` is a trajectory (or sampler); the window is
    ``center + K_rho(theta)`` times ``(t_top - theta^(2-p_bar) rho^p_bar, t_top]``.
    """
    sampler = source if isinstance(source, SpaceTimeSampler) else SpaceTimeSampler(source)
    T = ScaleTransform(rho, theta, e)
    f = T.space_factors()
    tf = T.time_factor()
    ys = [(np.arange(n_space) + 0.5) / n_space - 0.5 for _ in range(e.N)]
    ss = -1.0 + (np.arange(n_time) + 1.0) / n_time
    coords = [np.asarray(center[i]) + f[i] * ys[i] for i in range(e.N)]
    out = np.stack([sampler.on_tensor(coords, t_top + tf * s) for s in ss]) / theta
    return out, ys, ss


def degiorgi_corpus_threshold(probes: Sequence[DeGiorgiProbe]) -> float:
    """Largest ``mu`` such that every probe with ``mu_observed <= mu`` satisfies
    the implication (0 when the smallest-``mu`` probe already fails)."""
    ordered = sorted(probes, key=lambda q: q.mu_observed)
    best = 0.0
    for q in ordered:
        if not q.implication_holds:
            break
        best = q.mu_observed
    return best


# -- clustering search --------------------------------------------------------


@dataclass
class ClusterResult:
    center: np.ndarray
    edge: float
    fraction: float
    hypothesis_holds: bool


def _box_counts(S: np.ndarray, lo, hi):
    """Sum over the index box ``[lo, hi)`` from an inclusive prefix table."""
    N = len(lo)
    total = 0.0
    for corner in range(2 ** N):
        idx = []
        sign = 1
        for i in range(N):
            if corner >> i & 1:
                idx.append(lo[i])
                sign = -sign
            else:
                idx.append(hi[i])
        total += sign * S[tuple(idx)]
    return total


def cluster_search(u: Field, center, rho: float, lam: float, nu: float, alpha_bar: float, a: float,
                   depth: int = 4) -> ClusterResult | None:
    """Largest dyadic subcube of ``center + K_rho`` where ``[u >= lam a]`` fills
    more than ``1 - nu`` of the cells.

    Measures count cells whose centres lie in a cube (half-open on the upper
    side). Subcubes of edge ``rho / 2^k`` for ``k <= depth`` are scanned in
    increasing ``k`` and lexicographic position; the first hit is returned.
    ``hypothesis_holds`` reports ``|[u >= a] cap K_rho| > alpha_bar |K_rho|``.
    """
    g = u.grid
    N = g.N
    center = np.asarray(center, dtype=float)
    level = (u.values >= lam * a).astype(np.int64)
    base = (u.values >= a).astype(np.int64)
    S = np.zeros(tuple(d + 1 for d in g.dims), dtype=np.int64)
    S[(slice(1, None),) * N] = level
    for i in range(N):
        S = np.cumsum(S, axis=i)
    ones = np.ones(g.dims, dtype=np.int64)

    def index_range(lo, hi):
        out_lo, out_hi = [], []
        for i in range(N):
            c = g.centers(i)
            out_lo.append(int(np.searchsorted(c, lo[i], side="left")))
            out_hi.append(int(np.searchsorted(c, hi[i], side="left")))
        return out_lo, out_hi

    lo0 = center - rho / 2.0
    ilo, ihi = index_range(lo0, lo0 + rho)
    cnt = int(np.prod([b - a_ for a_, b in zip(ilo, ihi)]))
    sl = tuple(slice(a_, b) for a_, b in zip(ilo, ihi))
    hyp = bool(cnt > 0 and base[sl].sum() > alpha_bar * ones[sl].sum())
    for k in range(depth + 1):
        edge = rho / 2 ** k
        for pos in np.ndindex(*(2 ** k,) * N):
            lo = lo0 + edge * np.array(pos)
            a_idx, b_idx = index_range(lo, lo + edge)
            n_cells = int(np.prod([max(0, b - a_) for a_, b in zip(a_idx, b_idx)]))
            if n_cells == 0:
                continue
            hits = _box_counts(S, a_idx, b_idx)
            frac = hits / n_cells
            if frac > 1.0 - nu:
                return ClusterResult(lo + edge / 2.0, edge, float(frac), hyp)
    return None


def degiorgi_window_probe(source, e: ExponentData, center, t_top: float, rho: float, theta: float, a: float,
                          n_space: int = 16, n_time: int = 16) -> DeGiorgiProbe:
    """Rescale a trajectory window to the unit cylinder and probe it."""
    vals, ys, ss = sample_unit_cylinder(source, e, center, t_top, rho, theta, n_space, n_time)
    return degiorgi_probe(vals, ys, ss, a)


# -- comparison ---------------------------------------------------------------


def random_bumps(grid: Grid, rng: np.random.Generator, count: int = 3, reach: float = 0.6) -> np.ndarray:
    """Sum of ``count`` compactly supported bumps ``c (1 - |x - x_k|^2 / r_k^2)_+^2``.

    Centres and radii are drawn so every bump stays within ``reach`` of the
    box half-extent around the box centre.
    """
    lo, hi = np.array(grid.origin), np.array(grid.upper)
    mid, half = 0.5 * (lo + hi), 0.5 * (hi - lo)
    xs = grid.mesh()
    out = np.zeros(grid.dims)
    for _ in range(count):
        r = rng.uniform(0.1, 0.3) * float(np.min(half))
        c = mid + rng.uniform(-1, 1, grid.N) * (reach * half - r)
        amp = rng.uniform(0.2, 1.0)
        d2 = sum(((x - c[i]) / r) ** 2 for i, x in enumerate(xs))
        out = out + amp * np.maximum(1.0 - d2, 0.0) ** 2
    return out


@dataclass
class ComparisonResult:
    violations: int
    max_violation: float
    steps: int
    final_time: float
    raw_violations: int = 0


def _gross_flux(ops, u: np.ndarray) -> np.ndarray:
    """Per-cell ``sum_i (|F_i-| + |F_i+|) / h_i``, the magnitude scale of the update."""
    out = np.zeros(u.shape)
    for i, D in enumerate(ops._np_faces(u)):
        F = np.abs(D) ** (ops.p[i] - 1.0)
        lo = [slice(None)] * u.ndim
        hi = [slice(None)] * u.ndim
        lo[i] = slice(0, -1)
        hi[i] = slice(1, None)
        out += (F[tuple(lo)] + F[tuple(hi)]) / ops.h[i]
    return out


def ordered_pair_run(lower: Field, upper: Field, e: ExponentData, steps: int, scheme: str = "explicit",
                     safety: float = 0.4, implicit_dt: float | None = None, min_tol: float = 1e-9,
                     backend: str = "auto", ulps: float = 4.0) -> ComparisonResult:
    """Evolve two ordered data with a common step sequence and count order breaks.

    Explicit runs use ``dt = safety * min(stable step of either field)``; the
    monotonicity argument needs ``safety <= 1/2`` because the slope of the
    flux between the two states is bounded by the larger of their local
    diffusivities. ``raw_violations`` counts every cell with ``lower > upper``.
    ``violations`` counts only gaps above floating-point rounding: for the
    explicit update ``u + dt sum_i (F_i+ - F_i-) / h_i`` that is the forward
    error bound ``(2N + 8) eps (|u| + dt sum_i (|F_i-| + |F_i+|) / h_i)`` of
    each state; for implicit steps it is ``ulps`` units of the local magnitude
    (the solver tolerance dominates there and is reported by ``max_violation``).
    """
    from .solver import _implicit_solve, get_ops

    if np.any(lower.values > upper.values):
        raise ValueError("data are not ordered")
    ops = get_ops(lower.grid, e, backend)
    u = np.array(lower.values)
    v = np.array(upper.values)
    t = 0.0
    count, raw, worst = 0, 0, 0.0
    eps = np.finfo(float).eps
    k_round = (2 * e.N + 8) * eps
    for _ in range(steps):
        u_old, v_old = u, v
        if scheme == "explicit":
            du, ru, _ = ops.divergence(u)
            dv, rv, _ = ops.divergence(v)
            rate = max(ru, rv)
            if rate == 0.0:
                break
            dt = safety / rate
            u = u + dt * du
            v = v + dt * dv
        else:
            dt = implicit_dt
            u, _, _ = _implicit_solve(ops, u, dt, min_tol, 10_000)
            v, _, _ = _implicit_solve(ops, v, dt, min_tol, 10_000)
        t += dt
        gap = u - v
        bad = gap > 0
        if bad.any():
            raw += int(bad.sum())
            worst = max(worst, float(gap.max()))
            if scheme == "explicit":
                tol = k_round * (np.abs(u_old) + dt * _gross_flux(ops, u_old)
                                 + np.abs(v_old) + dt * _gross_flux(ops, v_old))
            else:
                tol = ulps * eps * np.maximum(np.abs(u), np.abs(v))
            count += int(np.sum(gap > tol))
    return ComparisonResult(count, worst, steps, t, raw)
