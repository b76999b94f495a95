"""Tensor grids, sampled fields, deterministic reductions and field I/O."""

from __future__ import annotations

import csv
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

MAGIC = b"APDE"
FORMAT_VERSION = 1


class FieldFormatError(ValueError):
    """Raised when a field file is malformed; ``offset`` is the failing byte."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


@dataclass(frozen=True)
class Grid:
    """Cell-centred axis-aligned tensor grid.

    Cell ``index`` along axis i has centre ``origin_i + (index + 1/2) h_i``;
    ``origin`` is therefore the lower outer edge of the box.
    """

    dims: tuple[int, ...]
    origin: tuple[float, ...]
    spacing: tuple[float, ...]

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        origin = tuple(float(o) for o in self.origin)
        spacing = tuple(float(h) for h in self.spacing)
        if not (len(dims) == len(origin) == len(spacing)) or not dims:
            raise ValueError("dims, origin and spacing must have equal nonzero length")
        if any(d < 2 for d in dims):
            raise ValueError(f"every axis needs at least 2 cells, got {dims}")
        if any(not math.isfinite(h) or h <= 0.0 for h in spacing):
            raise ValueError(f"spacing must be finite and positive, got {spacing}")
        if any(not math.isfinite(o) for o in origin):
            raise ValueError(f"origin must be finite, got {origin}")
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "origin", origin)
        object.__setattr__(self, "spacing", spacing)

    @classmethod
    def box(cls, lower: Sequence[float], upper: Sequence[float], dims: Sequence[int]) -> "Grid":
        """Grid with ``dims`` cells exactly filling ``[lower, upper]``."""
        lower = [float(a) for a in lower]
        upper = [float(b) for b in upper]
        dims = [int(d) for d in dims]
        return cls(tuple(dims), tuple(lower), tuple((b - a) / n for a, b, n in zip(lower, upper, dims)))

    @classmethod
    def cube(cls, half_width: float, n: int, N: int) -> "Grid":
        return cls.box([-half_width] * N, [half_width] * N, [n] * N)

    @property
    def N(self) -> int:
        return len(self.dims)

    @property
    def size(self) -> int:
        return int(np.prod(self.dims))

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    @property
    def upper(self) -> tuple[float, ...]:
        return tuple(o + n * h for o, n, h in zip(self.origin, self.dims, self.spacing))

    def centers(self, axis: int) -> np.ndarray:
        return self.origin[axis] + (np.arange(self.dims[axis]) + 0.5) * self.spacing[axis]

    def mesh(self) -> list[np.ndarray]:
        return np.meshgrid(*[self.centers(i) for i in range(self.N)], indexing="ij", sparse=True)

    def sample(self, func) -> np.ndarray:
        """Evaluate ``func(*coords)`` on cell centres (broadcast-friendly)."""
        return np.broadcast_to(np.asarray(func(*self.mesh()), dtype=float), self.dims).copy()


@dataclass(frozen=True, eq=False)
class Field:
    """Scalar samples on a :class:`Grid` with a time stamp.

    ``p`` optionally records the exponent vector that produced the field so it
    can be echoed into the file header.
    """

    grid: Grid
    values: np.ndarray
    time: float = 0.0
    p: tuple[float, ...] | None = None

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64, order="C")
        if v.size != self.grid.size:
            raise ValueError(f"expected {self.grid.size} values, got {v.size}")
        v = v.reshape(self.grid.dims)
        if not np.all(np.isfinite(v)):
            raise ValueError("field values must be finite")
        v.flags.writeable = False
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "time", float(self.time))
        if self.p is not None:
            object.__setattr__(self, "p", tuple(float(x) for x in self.p))

    def with_values(self, values, time: float | None = None) -> "Field":
        return Field(self.grid, values, self.time if time is None else time, self.p)

    @classmethod
    def zeros(cls, grid: Grid, time: float = 0.0, p=None) -> "Field":
        return cls(grid, np.zeros(grid.dims), time, p)


# -- deterministic reductions -------------------------------------------------


def pairwise_sum(a) -> float:
    """Sum with a fixed binary tree determined only by ``len(a)``.

    Odd levels are padded with one zero, so the association order never
    depends on thread count or memory layout.
    """
    a = np.asarray(a, dtype=np.float64).ravel()
    if a.size == 0:
        return 0.0
    while a.size > 1:
        if a.size % 2:
            a = np.concatenate([a, [0.0]])
        a = a[0::2] + a[1::2]
    return float(a[0])


def mass(u: Field) -> float:
    return pairwise_sum(u.values) * u.grid.cell_volume


def lp_norm(u: Field, p: float) -> float:
    if not p >= 1.0:
        raise ValueError(f"lp_norm needs p >= 1, got {p}")
    if math.isinf(p):
        return float(np.max(np.abs(u.values)))
    return (pairwise_sum(np.abs(u.values) ** p) * u.grid.cell_volume) ** (1.0 / p)


def sup_inf(u: Field) -> tuple[float, float]:
    return float(np.max(u.values)), float(np.min(u.values))


def l1_distance(u: Field, v: Field) -> float:
    if u.grid != v.grid:
        raise ValueError("fields live on different grids")
    return pairwise_sum(np.abs(u.values - v.values)) * u.grid.cell_volume


@dataclass(frozen=True)
class SupportBox:
    """Outer cell edges of the cells where ``|u| > threshold``."""

    lower: tuple[float, ...]
    upper: tuple[float, ...]
    index_lo: tuple[int, ...]
    index_hi: tuple[int, ...]

    @property
    def half_widths(self) -> np.ndarray:
        return 0.5 * (np.array(self.upper) - np.array(self.lower))

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (np.array(self.upper) + np.array(self.lower))


def support_box(u: Field, threshold: float = 0.0) -> SupportBox | None:
    """Tight bounding box of ``{|u| > threshold}``; ``None`` when empty."""
    if threshold < 0:
        raise ValueError("threshold must be nonnegative")
    mask = np.abs(u.values) > threshold
    if not mask.any():
        return None
    g = u.grid
    lo, hi = [], []
    for axis in range(g.N):
        other = tuple(a for a in range(g.N) if a != axis)
        idx = np.flatnonzero(mask.any(axis=other))
        lo.append(int(idx[0]))
        hi.append(int(idx[-1]))
    return SupportBox(
        lower=tuple(g.origin[i] + lo[i] * g.spacing[i] for i in range(g.N)),
        upper=tuple(g.origin[i] + (hi[i] + 1) * g.spacing[i] for i in range(g.N)),
        index_lo=tuple(lo),
        index_hi=tuple(hi),
    )


# -- trajectory ---------------------------------------------------------------

DIAG_BASE = ("t", "mass", "sup", "inf", "energy")


@dataclass
class Trajectory:
    """Snapshots in increasing time order with one diagnostics row each.

    Entries of ``fields`` are either :class:`Field` objects or paths to field
    files (loaded lazily by :meth:`snapshot`).
    """

    N: int
    times: list[float] = field(default_factory=list)
    fields: list = field(default_factory=list)
    diagnostics: list[tuple[float, ...]] = field(default_factory=list)

    def append(self, u, row: Sequence[float]):
        t = float(row[0])
        if self.times and not t > self.times[-1]:
            raise ValueError(f"snapshot time {t} does not follow {self.times[-1]}")
        if len(row) != len(DIAG_BASE) + self.N:
            raise ValueError("diagnostics row has the wrong length")
        self.times.append(t)
        self.fields.append(u)
        self.diagnostics.append(tuple(float(x) for x in row))

    def __len__(self) -> int:
        return len(self.times)

    def snapshot(self, k: int) -> Field:
        f = self.fields[k]
        if isinstance(f, (str, Path)):
            return read_field(f)
        return f

    def diagnostics_array(self) -> np.ndarray:
        return np.array(self.diagnostics, dtype=float).reshape(len(self), len(DIAG_BASE) + self.N)

    @property
    def header(self) -> list[str]:
        return list(DIAG_BASE) + [f"hw_{i + 1}" for i in range(self.N)]

    def write_csv(self, path):
        write_diagnostics(path, self.header, self.diagnostics)


def write_diagnostics(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(x)) for x in row])


def read_diagnostics(path) -> tuple[list[str], np.ndarray]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], np.array([[float(x) for x in r] for r in rows[1:]], dtype=float)


# -- binary field files -------------------------------------------------------


def write_field(path, u: Field):
    """Write ``u`` in the little-endian APDE layout.

    The exponent slot is filled with NaN when the field carries no ``p``.
    """
    g = u.grid
    p = u.p if u.p is not None else (math.nan,) * g.N
    if len(p) != g.N:
        raise ValueError("recorded exponent vector does not match grid dimension")
    parts = [
        MAGIC,
        struct.pack("<II", FORMAT_VERSION, g.N),
        struct.pack(f"<{g.N}d", *p),
        struct.pack(f"<{g.N}Q", *g.dims),
        struct.pack(f"<{g.N}d", *g.origin),
        struct.pack(f"<{g.N}d", *g.spacing),
        struct.pack("<d", u.time),
        np.ascontiguousarray(u.values, dtype="<f8").tobytes(),
    ]
    Path(path).write_bytes(b"".join(parts))


def read_field(path) -> Field:
    data = Path(path).read_bytes()
    pos = 0

    def take(n, what):
        nonlocal pos
        if pos + n > len(data):
            raise FieldFormatError(f"truncated file while reading {what}", pos)
        chunk = data[pos:pos + n]
        pos += n
        return chunk

    if take(4, "magic") != MAGIC:
        raise FieldFormatError("bad magic, expected b'APDE'", 0)
    version, N = struct.unpack("<II", take(8, "version and dimension"))
    if version != FORMAT_VERSION:
        raise FieldFormatError(f"unsupported version {version}", 4)
    if N < 1:
        raise FieldFormatError(f"invalid dimension {N}", 8)
    p = struct.unpack(f"<{N}d", take(8 * N, "exponents"))
    dims_at = pos
    dims = struct.unpack(f"<{N}Q", take(8 * N, "dims"))
    if any(d < 2 for d in dims):
        raise FieldFormatError(f"invalid dims {dims}", dims_at)
    origin = struct.unpack(f"<{N}d", take(8 * N, "origin"))
    spacing = struct.unpack(f"<{N}d", take(8 * N, "spacing"))
    (time,) = struct.unpack("<d", take(8, "time"))
    count = int(np.prod(dims))
    raw = take(8 * count, "values")
    if pos != len(data):
        raise FieldFormatError(f"{len(data) - pos} trailing bytes", pos)
    values = np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(dims)
    recorded = None if all(math.isnan(x) for x in p) else p
    return Field(Grid(dims, origin, spacing), values, time, recorded)
