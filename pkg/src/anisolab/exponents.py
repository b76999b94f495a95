"""Exponent algebra for the orthotropic equation.

Every scaling constant used elsewhere in the package is derived here from
the exponent vector ``p``:

    p_bar    harmonic mean of the p_i
    sigma    N (p_bar - 2) + p_bar
    alpha    N / sigma                       (amplitude decay rate)
    alpha_i  (N (p_bar - p_i) + p_bar) / (sigma p_i)   (per-axis spread rate)

plus the exponents of the parabolic quasi-metric and its quasi-triangle
constant ``gamma``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np


@dataclass(frozen=True)
class ExponentData:
    N: int
    p: tuple[float, ...]
    p_bar: float
    sigma: float
    alpha: float
    alpha_i: tuple[float, ...]
    q_space: tuple[float, ...]
    q_time: float
    gamma: float

    def as_dict(self) -> dict:
        return {
            "N": self.N,
            "p": list(self.p),
            "p_bar": self.p_bar,
            "sigma": self.sigma,
            "alpha": self.alpha,
            "alpha_i": list(self.alpha_i),
            "q_space": list(self.q_space),
            "q_time": self.q_time,
            "gamma": self.gamma,
        }


@dataclass
class AdmissibilityReport:
    ok: bool
    violations: list[str] = field(default_factory=list)

    def __bool__(self) -> bool:
        return self.ok


def derive_exponents(p: Sequence[float], N: int | None = None) -> ExponentData:
    """Compute every derived constant for the exponent vector ``p``.

    ``N`` defaults to ``len(p)``; a scalar ``p`` together with ``N`` is
    broadcast to the isotropic vector.
    """
    if np.ndim(p) == 0:
        if N is None:
            raise ValueError("a scalar exponent needs an explicit dimension N")
        p = [float(p)] * N
    p = tuple(float(x) for x in p)
    if N is None:
        N = len(p)
    if N < 1 or len(p) != N:
        raise ValueError(f"expected {N} exponents, got {len(p)}")
    for i, pi in enumerate(p):
        if not math.isfinite(pi) or pi <= 0.0:
            raise ValueError(f"p_{i + 1} = {pi!r} must be finite and positive")
        if pi <= 1.0:
            raise ValueError(f"p_{i + 1} = {pi!r} must exceed 1")

    p_bar = N / math.fsum(1.0 / pi for pi in p)
    sigma = N * (p_bar - 2.0) + p_bar
    alpha = N / sigma
    alpha_i = tuple((N * (p_bar - pi) + p_bar) / (sigma * pi) for pi in p)

    q_space = []
    for pi in p:
        den = p_bar + N * (p_bar - pi)
        q_space.append(pi / den if den != 0.0 else math.inf)
    q_time = 1.0 / sigma if sigma != 0.0 else math.inf

    q_max = max(max(q_space), q_time)
    # each |.|^q term obeys a q-triangle inequality with constant max(1, 2^(q-1))
    if not math.isfinite(q_max) or q_max - 1.0 >= 1024.0:
        gamma = math.inf
    else:
        gamma = max(1.0, 2.0 ** (q_max - 1.0))
    return ExponentData(
        N=N,
        p=p,
        p_bar=p_bar,
        sigma=sigma,
        alpha=alpha,
        alpha_i=alpha_i,
        q_space=tuple(q_space),
        q_time=q_time,
        gamma=gamma,
    )


def validate_admissible(e: ExponentData) -> AdmissibilityReport:
    """Check ``2 < p_i < p_bar (1 + 1/N)`` for every i and ``p_bar < N``.

    Inequalities are strict with no tolerance band. The report lists every
    violated clause rather than stopping at the first.
    """
    violations = []
    upper = e.p_bar * (1.0 + 1.0 / e.N)
    for i, pi in enumerate(e.p):
        if not pi > 2.0:
            violations.append(f"p_{i + 1} = {pi:g} violates clause p_i > 2")
        if not pi < upper:
            violations.append(
                f"p_{i + 1} = {pi:g} violates clause p_i < p_bar(1+1/N) = {upper:.6g}"
            )
    if not e.p_bar < e.N:
        violations.append(f"p_bar = {e.p_bar:.6g} violates clause p_bar < N = {e.N}")
    return AdmissibilityReport(ok=not violations, violations=violations)


def quasi_metric(z1, z2, e: ExponentData):
    """Parabolic quasi-distance between space-time points.

    ``d = max(|(x_i - y_i)/2|^q_space_i, |t - s|^q_time)``. Points are
    arrays whose last axis has length N + 1 (space first, time last);
    leading axes broadcast.
    """
    z1 = np.asarray(z1, dtype=float)
    z2 = np.asarray(z2, dtype=float)
    if z1.shape[-1] != e.N + 1 or z2.shape[-1] != e.N + 1:
        raise ValueError(f"space-time points must have {e.N + 1} coordinates")
    diff = np.abs(z1 - z2)
    terms = [(diff[..., i] / 2.0) ** e.q_space[i] for i in range(e.N)]
    terms.append(diff[..., e.N] ** e.q_time)
    d = terms[0]
    for t in terms[1:]:
        d = np.maximum(d, t)
    return d if d.ndim else float(d)


def ball_radii(r: float, e: ExponentData) -> tuple[np.ndarray, float]:
    """Half-extents of the quasi-ball of radius ``r`` (space axes, time).

    The ball ``{z : d(z, c) < r}`` is the open box with
    ``|x_i - c_i| < 2 r^(1/q_space_i)`` and ``|t - c_t| < r^(1/q_time)``.
    """
    space = np.array([2.0 * r ** (1.0 / q) for q in e.q_space])
    return space, r ** (1.0 / e.q_time)
