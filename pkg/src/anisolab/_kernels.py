"""Face-flux stencil kernels for the anisotropic operator.

Two backends share one interface: numba kernels for N <= 3 (lower
dimensional grids are padded with inert unit axes) and a vectorised numpy
path for any N. Every reduction is split into fixed slabs along axis 0 and
combined with :func:`pairwise_sum`, so results do not depend on the number
of worker threads.

Notation: for a face between cells ``c`` and ``c + e_i`` the scaled
difference is ``D = (u[c + e_i] - u[c]) / h_i`` with zero ghost cells
outside the box, and ``A = |D|^(p_i - 2)``, so the face flux is ``A * D``.
"""

from __future__ import annotations

import os

import numpy as np
import numba
from numba import njit, prange

if "NUMBA_THREADING_LAYER" not in os.environ:
    # avoid probing an outdated TBB; the workqueue layer is always present
    numba.config.THREADING_LAYER = "workqueue"

from .grid import pairwise_sum


@njit(parallel=True, cache=True)
def _faces3(u, pm2, invh, en, A0, A1, A2):
    n0, n1, n2 = u.shape
    if en[0]:
        for i in prange(n0 + 1):
            for j in range(n1):
                for k in range(n2):
                    a = u[i, j, k] if i < n0 else 0.0
                    b = u[i - 1, j, k] if i > 0 else 0.0
                    d = (a - b) * invh[0]
                    A0[i, j, k] = abs(d) ** pm2[0] if d != 0.0 else 0.0
    if en[1]:
        for i in prange(n0):
            for j in range(n1 + 1):
                for k in range(n2):
                    a = u[i, j, k] if j < n1 else 0.0
                    b = u[i, j - 1, k] if j > 0 else 0.0
                    d = (a - b) * invh[1]
                    A1[i, j, k] = abs(d) ** pm2[1] if d != 0.0 else 0.0
    if en[2]:
        for i in prange(n0):
            for j in range(n1):
                for k in range(n2 + 1):
                    a = u[i, j, k] if k < n2 else 0.0
                    b = u[i, j, k - 1] if k > 0 else 0.0
                    d = (a - b) * invh[2]
                    A2[i, j, k] = abs(d) ** pm2[2] if d != 0.0 else 0.0


@njit(parallel=True, cache=True)
def _div3(u, A0, A1, A2, invh, pm1, en, div, diag, want_diag):
    """Divergence of the face fluxes plus per-cell stability denominators.

    Returns the per-slab maxima of ``sum_i 2 (p_i - 1) max(A_-, A_+) / h_i^2``.
    When ``want_diag`` is set, ``diag`` receives
    ``sum_i (p_i - 1) (A_- + A_+) / h_i^2`` (the Jacobian diagonal).
    """
    n0, n1, n2 = u.shape
    w0 = invh[0] * invh[0]
    w1 = invh[1] * invh[1]
    w2 = invh[2] * invh[2]
    slab = np.zeros(n0)
    for i in prange(n0):
        m = 0.0
        for j in range(n1):
            for k in range(n2):
                c = u[i, j, k]
                s = 0.0
                den = 0.0
                dg = 0.0
                if en[0]:
                    up = u[i + 1, j, k] if i + 1 < n0 else 0.0
                    dn = u[i - 1, j, k] if i > 0 else 0.0
                    ap = A0[i + 1, j, k]
                    am = A0[i, j, k]
                    s += (ap * (up - c) - am * (c - dn)) * w0
                    den += 2.0 * pm1[0] * max(ap, am) * w0
                    dg += pm1[0] * (ap + am) * w0
                if en[1]:
                    up = u[i, j + 1, k] if j + 1 < n1 else 0.0
                    dn = u[i, j - 1, k] if j > 0 else 0.0
                    ap = A1[i, j + 1, k]
                    am = A1[i, j, k]
                    s += (ap * (up - c) - am * (c - dn)) * w1
                    den += 2.0 * pm1[1] * max(ap, am) * w1
                    dg += pm1[1] * (ap + am) * w1
                if en[2]:
                    up = u[i, j, k + 1] if k + 1 < n2 else 0.0
                    dn = u[i, j, k - 1] if k > 0 else 0.0
                    ap = A2[i, j, k + 1]
                    am = A2[i, j, k]
                    s += (ap * (up - c) - am * (c - dn)) * w2
                    den += 2.0 * pm1[2] * max(ap, am) * w2
                    dg += pm1[2] * (ap + am) * w2
                div[i, j, k] = s
                if want_diag:
                    diag[i, j, k] = dg
                if den > m:
                    m = den
        slab[i] = m
    return slab


@njit(parallel=True, cache=True)
def _face_sums3(v, d, alpha, pm2, invh, en, out1, out2, out3):
    """Per-slab face sums along the ray ``w = v + alpha d``.

    ``out1[a, i] = sum A(Dw) Dw Dd``, ``out2[a, i] = sum A(Dw) (Dd)^2`` and
    ``out3[a, i] = sum A(Dw) Dw^2`` over the axis-``a`` faces whose lower
    cell lies in slab ``i`` (the top boundary face of axis 0 is folded into
    the last slab).
    """
    n0, n1, n2 = v.shape
    for i in prange(n0):
        s1 = np.zeros(3)
        s2 = np.zeros(3)
        s3 = np.zeros(3)
        for ax in range(3):
            if not en[ax]:
                continue
            e = pm2[ax]
            ih = invh[ax]
            # faces of axis ax owned by slab i
            if ax == 0:
                ilo = i
                ihi = i + 2 if i == n0 - 1 else i + 1
                jn = n1
                kn = n2
            else:
                ilo = i
                ihi = i + 1
                jn = n1 + 1 if ax == 1 else n1
                kn = n2 + 1 if ax == 2 else n2
            for fi in range(ilo, ihi):
                for fj in range(jn):
                    for fk in range(kn):
                        if ax == 0:
                            ia, ja, ka = fi, fj, fk
                            ib, jb, kb = fi - 1, fj, fk
                            ina = fi < n0
                            inb = fi > 0
                        elif ax == 1:
                            ia, ja, ka = fi, fj, fk
                            ib, jb, kb = fi, fj - 1, fk
                            ina = fj < n1
                            inb = fj > 0
                        else:
                            ia, ja, ka = fi, fj, fk
                            ib, jb, kb = fi, fj, fk - 1
                            ina = fk < n2
                            inb = fk > 0
                        va = v[ia, ja, ka] if ina else 0.0
                        vb = v[ib, jb, kb] if inb else 0.0
                        da = d[ia, ja, ka] if ina else 0.0
                        db = d[ib, jb, kb] if inb else 0.0
                        dd = (da - db) * ih
                        dw = ((va - vb) + alpha * (da - db)) * ih
                        if dw == 0.0:
                            continue
                        a = abs(dw) ** e
                        s1[ax] += a * dw * dd
                        s2[ax] += a * dd * dd
                        s3[ax] += a * dw * dw
        for ax in range(3):
            out1[ax, i] = s1[ax]
            out2[ax, i] = s2[ax]
            out3[ax, i] = s3[ax]


def set_threads(n: int | None):
    """Set the numba worker count (bounded by ``NUMBA_NUM_THREADS``)."""
    if n is None:
        return
    numba.set_num_threads(max(1, min(int(n), numba.config.NUMBA_NUM_THREADS)))


class StencilOps:
    """Operator kernels for a fixed grid shape and exponent vector.

    Parameters
    ----------
    dims, spacing : grid shape and per-axis spacing
    p : per-axis exponents
    backend : ``"numba"`` (N <= 3 only), ``"numpy"`` or ``"auto"``
    """

    def __init__(self, dims, spacing, p, backend: str = "auto"):
        self.dims = tuple(int(d) for d in dims)
        self.N = len(self.dims)
        self.p = np.asarray(p, dtype=float)
        self.h = np.asarray(spacing, dtype=float)
        if backend == "auto":
            backend = "numba" if self.N <= 3 else "numpy"
        if backend == "numba" and self.N > 3:
            raise ValueError("the numba backend supports N <= 3")
        if backend not in ("numba", "numpy"):
            raise ValueError(f"unknown backend {backend!r}")
        self.backend = backend
        if backend == "numba":
            pad = 3 - self.N
            self._shape3 = self.dims + (1,) * pad
            self._pm2 = np.concatenate([self.p - 2.0, np.zeros(pad)])
            self._pm1 = np.concatenate([self.p - 1.0, np.zeros(pad)])
            self._invh = np.concatenate([1.0 / self.h, np.ones(pad)])
            self._en = np.array([True] * self.N + [False] * pad)
            n0, n1, n2 = self._shape3
            self._A = (
                np.zeros((n0 + 1, n1, n2)),
                np.zeros((n0, n1 + 1, n2)),
                np.zeros((n0, n1, n2 + 1)),
            )

    # -- helpers ------------------------------------------------------------

    def _as3(self, a):
        return np.ascontiguousarray(a, dtype=np.float64).reshape(self._shape3)

    def _np_faces(self, u):
        """Scaled face differences per axis, ghost faces included."""
        D = []
        for i in range(self.N):
            pad = [(0, 0)] * self.N
            pad[i] = (1, 1)
            D.append(np.diff(np.pad(u, pad), axis=i) / self.h[i])
        return D

    # -- public kernels -----------------------------------------------------

    def divergence(self, u, want_diag: bool = False):
        """Return ``(div, max_rate, diag)`` for the cell array ``u``.

        ``max_rate`` is ``max_c sum_i 2 (p_i - 1) max(A_-, A_+) / h_i^2``,
        the reciprocal of the unit-safety stable step; ``diag`` is ``None``
        unless requested.
        """
        if self.backend == "numba":
            u3 = self._as3(u)
            _faces3(u3, self._pm2, self._invh, self._en, *self._A)
            div = np.empty(self._shape3)
            diag = np.empty(self._shape3) if want_diag else np.empty((1, 1, 1))
            slab = _div3(u3, *self._A, self._invh, self._pm1, self._en, div, diag, want_diag)
            return (
                div.reshape(self.dims),
                float(slab.max()),
                diag.reshape(self.dims) if want_diag else None,
            )
        u = np.asarray(u, dtype=float).reshape(self.dims)
        div = np.zeros(self.dims)
        rate = np.zeros(self.dims)
        diag = np.zeros(self.dims) if want_diag else None
        for i, D in enumerate(self._np_faces(u)):
            A = np.abs(D) ** (self.p[i] - 2.0)
            F = A * D
            lo = [slice(None)] * self.N
            hi = [slice(None)] * self.N
            lo[i] = slice(0, -1)
            hi[i] = slice(1, None)
            div += (F[tuple(hi)] - F[tuple(lo)]) / self.h[i]
            w = (self.p[i] - 1.0) / self.h[i] ** 2
            rate += 2.0 * w * np.maximum(A[tuple(hi)], A[tuple(lo)])
            if want_diag:
                diag += w * (A[tuple(hi)] + A[tuple(lo)])
        return div, float(rate.max()), diag

    def face_sums(self, v, d, alpha: float):
        """Per-axis face sums along ``w = v + alpha d``.

        Returns arrays ``(s1, s2, s3)`` of length N with
        ``s1_i = sum A Dw Dd``, ``s2_i = sum A (Dd)^2``, ``s3_i = sum A Dw^2``
        over all axis-i faces, where ``A = |Dw|^(p_i - 2)``.
        """
        if self.backend == "numba":
            n0 = self._shape3[0]
            o1 = np.zeros((3, n0))
            o2 = np.zeros((3, n0))
            o3 = np.zeros((3, n0))
            _face_sums3(self._as3(v), self._as3(d), float(alpha), self._pm2, self._invh, self._en, o1, o2, o3)
            return tuple(np.array([pairwise_sum(o[a]) for a in range(self.N)]) for o in (o1, o2, o3))
        v = np.asarray(v, dtype=float).reshape(self.dims)
        d = np.asarray(d, dtype=float).reshape(self.dims)
        Dw = self._np_faces(v + alpha * d) if alpha != 0.0 else self._np_faces(v)
        Dd = self._np_faces(d)
        s1, s2, s3 = np.zeros(self.N), np.zeros(self.N), np.zeros(self.N)
        for i in range(self.N):
            A = np.abs(Dw[i]) ** (self.p[i] - 2.0)
            s1[i] = pairwise_sum(A * Dw[i] * Dd[i])
            s2[i] = pairwise_sum(A * Dd[i] ** 2)
            s3[i] = pairwise_sum(A * Dw[i] ** 2)
        return s1, s2, s3

    def energy(self, u) -> float:
        """``sum_i sum_faces |D|^p_i / p_i`` times the cell volume."""
        zero = np.zeros(self.dims)
        _, _, s3 = self.face_sums(u, zero, 0.0)
        return float(np.sum(s3 / self.p)) * float(np.prod(self.h))
