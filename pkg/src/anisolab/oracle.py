"""Closed-form self-similar solution for equal exponents.

With ``p_i = p`` for all i the equation has the explicit source-type solution

    u(x, t) = t^-alpha (C - k sum_i |xi_i|^q)_+^m,    xi = x t^-beta,

where ``beta = alpha / N``, ``q = p / (p - 1)``, ``m = (p - 1) / (p - 2)`` and
``k = ((p - 2) / p) beta^(1 / (p - 1))``. Each flux component equals
``-beta u x_i / t``, which makes the solution exact for the axis-wise
operator. The level sets are l^q balls rather than Euclidean spheres.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

from .grid import Field, Grid


@dataclass(frozen=True)
class IsotropicBarenblatt:
    p: float
    N: int
    mass: float

    def __post_init__(self):
        if not self.p > 2.0:
            raise ValueError(f"need p > 2, got {self.p}")
        if self.N < 1:
            raise ValueError("N must be positive")
        if not self.mass > 0:
            raise ValueError("mass must be positive")

    @property
    def alpha(self) -> float:
        return self.N / (self.N * (self.p - 2.0) + self.p)

    @property
    def beta(self) -> float:
        return self.alpha / self.N

    @property
    def q(self) -> float:
        return self.p / (self.p - 1.0)

    @property
    def m(self) -> float:
        return (self.p - 1.0) / (self.p - 2.0)

    @property
    def k(self) -> float:
        return (self.p - 2.0) / self.p * self.beta ** (1.0 / (self.p - 1.0))

    def unit_integral(self) -> float:
        """``int (1 - sum |eta_i|^q)_+^m d eta`` over R^N."""
        N, q, m = self.N, self.q, self.m
        log_i = (N * math.log(2.0) + N * gammaln(1.0 + 1.0 / q) + gammaln(m + 1.0)
                 - gammaln(N / q + m + 1.0))
        return math.exp(log_i)

    @property
    def C(self) -> float:
        # mass = C^(m + N/q) k^(-N/q) I_N
        N, q, m = self.N, self.q, self.m
        return (self.mass * self.k ** (N / q) / self.unit_integral()) ** (1.0 / (m + N / q))

    def support_radius(self, t: float) -> float:
        """Half-width of the support along each coordinate axis at time t."""
        return (self.C / self.k) ** (1.0 / self.q) * t ** self.beta

    def __call__(self, x, t: float):
        if not t > 0:
            raise ValueError("t must be positive")
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.N:
            raise ValueError(f"points need {self.N} coordinates")
        xi = np.abs(x) * t ** (-self.beta)
        base = self.C - self.k * np.sum(xi ** self.q, axis=-1)
        return t ** (-self.alpha) * np.maximum(base, 0.0) ** self.m

    def on_grid(self, grid: Grid, t: float) -> np.ndarray:
        if grid.N != self.N:
            raise ValueError("grid dimension mismatch")
        xs = grid.mesh()
        s = 0.0
        for x in xs:
            s = s + (np.abs(x) * t ** (-self.beta)) ** self.q
        base = self.C - self.k * s
        return np.broadcast_to(t ** (-self.alpha) * np.maximum(base, 0.0) ** self.m, grid.dims).copy()

    def field(self, grid: Grid, t: float) -> Field:
        return Field(grid, self.on_grid(grid, t), t, (self.p,) * self.N)

    @classmethod
    def with_support_radius(cls, p: float, N: int, radius: float, t: float = 1.0) -> "IsotropicBarenblatt":
        """Member whose axis support half-width equals ``radius`` at time ``t``."""
        probe = cls(p, N, 1.0)
        # radius scales like mass^(1 / (q (m + N/q)))
        r1 = probe.support_radius(t)
        expo = probe.q * (probe.m + N / probe.q)
        return cls(p, N, (radius / r1) ** expo)


def isotropic_barenblatt(x, t: float, p: float, N: int, mass_param: float):
    """Evaluate the closed-form solution with total mass ``mass_param``."""
    if not t > 0:
        raise ValueError("t must be positive")
    if not p > 2:
        raise ValueError("p must exceed 2")
    return IsotropicBarenblatt(float(p), int(N), float(mass_param))(x, t)


def euclidean_barenblatt(x, t: float, p: float, N: int, C: float = 1.0):
    """Radially symmetric profile of the rotation-invariant p-Laplacian.

    It is kept only as a counterexample: for N >= 2 it does not solve the
    axis-wise equation, which the residual check detects.
    """
    alpha = N / (N * (p - 2.0) + p)
    k = (p - 2.0) / p * (alpha / N) ** (1.0 / (p - 1.0))
    x = np.asarray(x, dtype=float)
    r = np.sqrt(np.sum(x * x, axis=-1)) * t ** (-alpha / N)
    return t ** (-alpha) * np.maximum(C - k * r ** (p / (p - 1.0)), 0.0) ** ((p - 1.0) / (p - 2.0))


def pde_residual(func, points, t: float, p, h: float, ht: float | None = None):
    """Pointwise residual ``u_t - sum_i d_i(|d_i u|^(p_i-2) d_i u)`` by nested
    fourth-order central differences.

    ``func(x, t)`` evaluates the candidate on arrays of shape ``(..., N)``.
    Returns ``(residual, u_t)`` at each point.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    N = pts.shape[1]
    p = np.broadcast_to(np.asarray(p, dtype=float), (N,))
    ht = h if ht is None else ht
    c = np.array([1.0, -8.0, 0.0, 8.0, -1.0]) / 12.0
    offs = np.array([-2, -1, 0, 1, 2])

    ut = sum(c[j] * func(pts, t + offs[j] * ht) for j in range(5) if c[j] != 0.0) / ht

    def flux(x, i):
        e = np.zeros(N)
        e[i] = h
        du = sum(c[j] * func(x + offs[j] * e, t) for j in range(5) if c[j] != 0.0) / h
        return np.abs(du) ** (p[i] - 2.0) * du

    div = 0.0
    for i in range(N):
        e = np.zeros(N)
        e[i] = h
        div = div + sum(c[j] * flux(pts + offs[j] * e, i) for j in range(5) if c[j] != 0.0) / h
    return ut - div, ut
