"""Intrinsic geometry, the scaling group and Krylov-Safonov point selection.

For exponents ``e`` and parameters ``rho, theta > 0`` the scaling map is

    T(y, s) = (theta^((p_i - p_bar)/p_i) rho^(p_bar/p_i) y_i,  theta^(2 - p_bar) rho^p_bar s)

and the induced action on functions is ``(Tu)(y, s) = u(T(y, s)) / theta``.
Nonnegative solutions are mapped to solutions. The spatial factors
multiply to ``rho^N``, so the choice ``theta = rho^-N`` preserves mass.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .exponents import ExponentData, ball_radii, quasi_metric
from .grid import Field, Grid, mass


@dataclass(frozen=True)
class ScaleTransform:
    rho: float
    theta: float
    exps: ExponentData

    def __post_init__(self):
        if not (self.rho > 0 and self.theta > 0) or not (math.isfinite(self.rho) and math.isfinite(self.theta)):
            raise ValueError("rho and theta must be finite and positive")

    @classmethod
    def identity(cls, e: ExponentData) -> "ScaleTransform":
        return cls(1.0, 1.0, e)

    @classmethod
    def mass_preserving(cls, rho: float, e: ExponentData) -> "ScaleTransform":
        """The L1-isometric member ``theta = rho^-N``."""
        return cls(rho, rho ** (-e.N), e)

    def compose(self, other: "ScaleTransform") -> "ScaleTransform":
        if other.exps != self.exps:
            raise ValueError("cannot compose transforms built on different exponents")
        return ScaleTransform(self.rho * other.rho, self.theta * other.theta, self.exps)

    def inverse(self) -> "ScaleTransform":
        return ScaleTransform(1.0 / self.rho, 1.0 / self.theta, self.exps)

    @property
    def is_identity(self) -> bool:
        return self.rho == 1.0 and self.theta == 1.0

    def space_factors(self) -> np.ndarray:
        e = self.exps
        return np.array([self.theta ** ((pi - e.p_bar) / pi) * self.rho ** (e.p_bar / pi) for pi in e.p])

    def time_factor(self) -> float:
        e = self.exps
        return self.theta ** (2.0 - e.p_bar) * self.rho ** e.p_bar


def compose(t1: ScaleTransform, t2: ScaleTransform) -> ScaleTransform:
    return t1.compose(t2)


def invert(t: ScaleTransform) -> ScaleTransform:
    return t.inverse()


def transform_point(T: ScaleTransform, z) -> np.ndarray:
    """Image of the space-time point ``z = (y_1..y_N, s)``."""
    z = np.asarray(z, dtype=float)
    if z.shape[-1] != T.exps.N + 1:
        raise ValueError(f"space-time points must have {T.exps.N + 1} coordinates")
    out = np.empty_like(z)
    out[..., :-1] = z[..., :-1] * T.space_factors()
    out[..., -1] = z[..., -1] * T.time_factor()
    return out


# -- resampling ---------------------------------------------------------------


class CoverageError(ValueError):
    """Target points fall outside the hull of the source cell centres."""


def _axis_weights(src_centers: np.ndarray, x: np.ndarray, outside: str, axis: int):
    """Left indices and weights for linear interpolation along one axis.

    Returns ``(i0, w, inside)``; points outside the centre hull get
    ``inside = False`` (only allowed when ``outside == "zero"``).
    """
    x0 = src_centers[0]
    h = src_centers[1] - src_centers[0]
    n = src_centers.size
    pos = (x - x0) / h
    # tolerate round-off at the hull ends
    eps = 1e-9
    inside = (pos >= -eps) & (pos <= n - 1 + eps)
    if not inside.all() and outside == "error":
        bad = x[~inside]
        raise CoverageError(
            f"axis {axis}: target coordinates {bad.min():.6g}..{bad.max():.6g} leave the source "
            f"coverage [{src_centers[0]:.6g}, {src_centers[-1]:.6g}]"
        )
    pos = np.clip(pos, 0.0, n - 1)
    i0 = np.minimum(np.floor(pos).astype(np.int64), n - 2)
    w = pos - i0
    return i0, w, inside


def interpolate_separable(values: np.ndarray, grid: Grid, coords: Sequence[np.ndarray], outside: str = "error"):
    """Multilinear interpolation of cell-centre ``values`` on a tensor product.

    ``coords[i]`` lists the axis-i coordinates of the target points; the
    result has shape ``[len(c) for c in coords]``. Interpolating one axis at
    a time reproduces the multilinear interpolant exactly.
    """
    if outside not in ("error", "zero"):
        raise ValueError("outside must be 'error' or 'zero'")
    out = np.asarray(values, dtype=float)
    masks = []
    for axis in range(grid.N):
        c = np.asarray(coords[axis], dtype=float)
        i0, w, inside = _axis_weights(grid.centers(axis), c, outside, axis)
        shape = [1] * grid.N
        shape[axis] = c.size
        w = w.reshape(shape)
        out = np.take(out, i0, axis=axis) * (1.0 - w) + np.take(out, i0 + 1, axis=axis) * w
        masks.append(inside)
    if outside == "zero":
        keep = np.ix_(*masks)
        zeroed = np.zeros_like(out)
        zeroed[keep] = out[keep]
        out = zeroed
    return out


def transform_field(T: ScaleTransform, u: Field, target: Grid | None = None, *, outside: str = "error",
                    renormalize: bool = False) -> Field:
    """Sample ``u(T(y, .)) / theta`` on the target grid.

    The time stamp becomes ``u.time / time_factor`` so that the output is
    the transformed solution at the matching time. With ``renormalize`` the
    output is rescaled so its discrete mass equals ``mass(u) / (theta rho^N)``.
    The identity transform on the source grid returns an exact copy.
    """
    target = u.grid if target is None else target
    if target.N != u.grid.N:
        raise ValueError("target grid dimension differs from the field's")
    tf = T.time_factor()
    if T.is_identity and target == u.grid:
        return Field(u.grid, u.values, u.time, u.p)
    f = T.space_factors()
    coords = [target.centers(i) * f[i] for i in range(target.N)]
    vals = interpolate_separable(u.values, u.grid, coords, outside) / T.theta
    out = Field(target, vals, u.time / tf, u.p)
    if renormalize:
        want = mass(u) / (T.theta * T.rho ** T.exps.N)
        have = mass(out)
        if have != 0.0:
            out = out.with_values(out.values * (want / have))
    return out


def relabel_field(T: ScaleTransform, u: Field) -> Field:
    """Exact transform by relabelling coordinates instead of resampling.

    Sample ``j`` of the output sits at ``x_j / f_i`` where ``x_j`` is the
    source centre, so no interpolation takes place. The output grid is the
    source grid scaled by ``1 / f``.
    """
    f = T.space_factors()
    g = u.grid
    grid = Grid(g.dims, tuple(np.array(g.origin) / f), tuple(np.array(g.spacing) / f))
    return Field(grid, u.values / T.theta, u.time / T.time_factor(), u.p)


# -- Fokker-Planck change of variables ----------------------------------------


def phi_transform(s: float, e: ExponentData) -> ScaleTransform:
    """Member of the group realising the logarithmic-time rescaling at ``s``.

    Its space factors are ``e^(alpha_i s)``, amplitude ``e^(alpha s)`` and
    time factor ``e^s``.
    """
    return ScaleTransform(math.exp(s / e.sigma), math.exp(-e.N * s / e.sigma), e)


def phi_slice(u: Field, e: ExponentData, target: Grid | None = None, outside: str = "error") -> Field:
    """``(Phi u)(y, s) = e^(alpha s) u(e^(alpha_i s) y, e^s)`` for one slice.

    ``u.time`` must be positive; the result is stamped ``s = log t``.
    """
    if not u.time > 0:
        raise ValueError(f"time stamps must be positive, got {u.time}")
    s = math.log(u.time)
    out = transform_field(phi_transform(s, e), u, target, outside=outside)
    return Field(out.grid, out.values, s, u.p)


def psi_slice(w: Field, e: ExponentData, target: Grid | None = None, outside: str = "error") -> Field:
    """``(Psi w)(x, t) = t^-alpha w(t^-alpha_i x, log t)`` with ``t = e^s``."""
    s = w.time
    out = transform_field(phi_transform(-s, e), w, target, outside=outside)
    return Field(out.grid, out.values, math.exp(s), w.p)


def phi_map(family: Sequence[Field], e: ExponentData, target: Grid | None = None, outside: str = "error") -> list[Field]:
    if any(not u.time > 0 for u in family):
        raise ValueError("every slice needs a positive time stamp")
    return [phi_slice(u, e, target, outside) for u in family]


def psi_map(family: Sequence[Field], e: ExponentData, target: Grid | None = None, outside: str = "error") -> list[Field]:
    return [psi_slice(w, e, target, outside) for w in family]


# -- intrinsic boxes ----------------------------------------------------------


@dataclass(frozen=True)
class IntrinsicBox:
    center: tuple[float, ...]
    rho: float
    theta: float
    half_widths: tuple[float, ...]
    time_depth: float | None = None

    @property
    def volume(self) -> float:
        return float(np.prod(2.0 * np.array(self.half_widths)))

    def contains(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.all(np.abs(x - np.array(self.center)) < np.array(self.half_widths), axis=-1)


def intrinsic_box(center, rho: float, theta: float, e: ExponentData, with_time: bool = False) -> IntrinsicBox:
    """Box with half-widths ``theta^((p_i - p_bar)/p_i) rho^(p_bar/p_i) / 2``.

    With ``with_time`` the backward depth ``theta^(2 - p_bar) rho^p_bar`` of
    the matching cylinder is attached.
    """
    if not (rho > 0 and theta > 0):
        raise ValueError("rho and theta must be positive")
    center = tuple(float(c) for c in np.broadcast_to(np.asarray(center, dtype=float), (e.N,)))
    hw = tuple(theta ** ((pi - e.p_bar) / pi) * rho ** (e.p_bar / pi) / 2.0 for pi in e.p)
    depth = theta ** (2.0 - e.p_bar) * rho ** e.p_bar if with_time else None
    return IntrinsicBox(center, float(rho), float(theta), hw, depth)


# -- Krylov-Safonov selection -------------------------------------------------


class SelectionError(ValueError):
    pass


@dataclass(frozen=True)
class Selection:
    x: np.ndarray
    r: float
    omega: float
    steps: int


def ks_omega(beta: float, e: ExponentData) -> float:
    return 2.0 * (2.0 * e.gamma) ** beta


def ball_inside_unit(x, r: float, x0, e: ExponentData) -> bool:
    """Exact test of ``B_r(x) subset B_1(x0)`` for the box-shaped balls."""
    hs, ht = ball_radii(r, e)
    hs1, ht1 = ball_radii(1.0, e)
    d = np.abs(np.asarray(x, dtype=float) - np.asarray(x0, dtype=float))
    return bool(np.all(hs + d[:-1] <= hs1 * (1 + 1e-12)) and ht + d[-1] <= ht1 * (1 + 1e-12))


def krylov_safonov_select(points, values, x0, beta: float, e: ExponentData) -> Selection:
    """Select ``(x, r)`` with ``r^beta sup_{B_r(x)} u <= omega <= omega^2 r^beta u(x)``.

    ``points`` (shape ``(M, N+1)``) and ``values`` sample a bounded function
    that vanishes outside the quasi-ball ``B_1(x0)``; ``x0`` must be one of
    the samples with value at least 1. Each pass either stops or moves to
    the maximiser over the current ball and shrinks ``r`` by
    ``omega^(-2/beta)``, so values grow by ``omega^2`` per pass and the loop
    ends once they exceed the sample maximum.
    """
    if not beta > 0:
        raise ValueError("beta must be positive")
    pts = np.asarray(points, dtype=float)
    vals = np.asarray(values, dtype=float)
    x0 = np.asarray(x0, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != e.N + 1 or vals.shape != (pts.shape[0],):
        raise ValueError("points must be (M, N+1) with one value each")
    # u is extended by zero outside the unit ball
    vals = np.where(quasi_metric(pts, x0, e) < 1.0, vals, 0.0)
    hit = np.flatnonzero(np.all(pts == x0, axis=1))
    if hit.size == 0:
        raise SelectionError("x0 is not among the sample points")
    if not vals[hit[0]] >= 1.0:
        raise SelectionError(f"need u(x0) >= 1, got {vals[hit[0]]}")
    omega = ks_omega(beta, e)
    shrink = omega ** (-2.0 / beta)
    k = hit[0]
    r = 1.0 / (2.0 * e.gamma)
    for step in range(10_000):
        d = quasi_metric(pts, pts[k], e)
        ball = d < r
        j = int(np.argmax(np.where(ball, vals, -np.inf)))
        if r ** beta * vals[j] <= omega:
            return Selection(pts[k].copy(), r, omega, step)
        k = j
        r *= shrink
    raise SelectionError("selection did not terminate")  # unreachable for finite samples
