"""Line-based run configuration.

Grammar: one ``section.key = value`` per line; ``#`` starts a comment;
blank lines are ignored; lists are comma separated. Every problem found is
reported with its line number before any computation starts.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .exponents import derive_exponents, validate_admissible


class ConfigError(ValueError):
    def __init__(self, errors: list[str]):
        super().__init__("invalid configuration:\n  " + "\n  ".join(errors))
        self.errors = errors


def _float(s):
    v = float(s)
    if not math.isfinite(v):
        raise ValueError("not finite")
    return v


def _bool(s):
    low = s.strip().lower()
    if low in ("true", "yes", "on", "1"):
        return True
    if low in ("false", "no", "off", "0"):
        return False
    raise ValueError("expected true/false")


def _list(conv):
    def parse(s):
        items = [x.strip() for x in s.split(",")]
        if any(not x for x in items):
            raise ValueError("empty list item")
        return [conv(x) for x in items]
    return parse


def _str(s):
    if not s.strip():
        raise ValueError("empty value")
    return s.strip()


def _probes(s):
    """``x1 x2 ... t; x1 x2 ... t`` space-time points."""
    out = []
    for chunk in s.split(";"):
        nums = [_float(x) for x in chunk.split()]
        if len(nums) < 2:
            raise ValueError("each probe needs coordinates and a time")
        out.append((nums[:-1], nums[-1]))
    return out


TASKS = ("evolve", "barenblatt", "exponents")
SUITES = ("mass", "comparison", "support", "selfsim", "harnack", "degiorgi", "cluster")
INITIAL_KINDS = ("indicator-box", "bump", "field-file", "isotropic-barenblatt", "unit-ball")

# key -> (parser, default, type name)
SCHEMA = {
    "run.task": (_str, "evolve", "one of " + ", ".join(TASKS)),
    "run.seed": (int, 0, "integer"),
    "run.name": (_str, "run", "text"),
    "exponents.p": (_list(_float), None, "list of reals"),
    "exponents.N": (int, None, "integer"),
    "grid.dims": (_list(int), None, "list of integers"),
    "grid.lower": (_list(_float), None, "list of reals"),
    "grid.upper": (_list(_float), None, "list of reals"),
    "solver.scheme": (_str, "explicit", "explicit or implicit"),
    "solver.cfl_safety": (_float, 0.4, "real in (0, 1]"),
    "solver.implicit_dt": (_float, 1e-3, "positive real"),
    "solver.min_tol": (_float, 1e-9, "positive real"),
    "solver.max_inner_iters": (int, 5000, "positive integer"),
    "solver.t0": (_float, 1.0, "real"),
    "solver.t1": (_float, 2.0, "real"),
    "solver.snapshot_times": (_list(_float), [], "list of reals"),
    "solver.snapshots_per_decade": (int, 0, "nonnegative integer"),
    "solver.snapshot_start": (_float, None, "positive real"),
    "solver.support_threshold": (_float, 1e-6, "nonnegative real"),
    "solver.boundary_margin": (int, 2, "nonnegative integer"),
    "initial.kind": (_str, "isotropic-barenblatt", "one of " + ", ".join(INITIAL_KINDS)),
    "initial.center": (_list(_float), None, "list of reals"),
    "initial.half_width": (_list(_float), [0.25], "list of reals"),
    "initial.amplitude": (_float, 1.0, "positive real"),
    "initial.mass": (_float, None, "positive real"),
    "initial.radius": (_float, 1.0, "positive real"),
    "initial.time": (_float, None, "positive real"),
    "initial.path": (_str, None, "existing file"),
    "fixed_point.eps0": (_float, 0.05, "positive real"),
    "fixed_point.s_bar": (_float, 1.0, "positive real"),
    "fixed_point.tol": (_float, 1e-4, "positive real"),
    "fixed_point.max_iters": (int, 60, "positive integer"),
    "fixed_point.use_running_sup": (_bool, True, "boolean"),
    "fixed_point.extra_applications": (int, 0, "nonnegative integer"),
    "verify.suites": (_list(_str), [], "list of suite names"),
    "verify.growth_R0": (_list(_float), [0.0], "list of reals"),
    "verify.growth_late_fraction": (_float, 0.5, "real in (0, 1]"),
    "verify.harnack_C1": (_float, 1.0, "positive real"),
    "verify.harnack_C2": (_list(_float), [0.5], "list of positive reals"),
    "verify.harnack_rho": (_list(_float), [0.05, 0.0707106781, 0.1], "list of positive reals"),
    "verify.harnack_probes": (_probes, None, "probes 'x.. t; x.. t'"),
    "verify.selfsim_rho": (_list(_float), [0.5, 2.0], "list of positive reals"),
    "verify.selfsim_t": (_float, 1.0, "positive real"),
    "verify.degiorgi_a": (_list(_float), [0.5], "list of reals in (0, 1]"),
    "verify.degiorgi_rho": (_float, 0.2, "positive real"),
    "verify.degiorgi_t": (_float, None, "positive real"),
    "verify.comparison_pairs": (int, 4, "positive integer"),
    "verify.comparison_steps": (int, 50, "positive integer"),
    "verify.comparison_dims": (int, 24, "integer >= 4"),
    "verify.cluster_nu": (_float, 0.1, "real in (0, 1)"),
    "verify.cluster_lambda": (_float, 0.5, "positive real"),
    "verify.cluster_a": (_float, None, "positive real"),
    "verify.cluster_alpha_bar": (_float, 0.1, "real in (0, 1)"),
    "verify.cluster_rho": (_float, 1.0, "positive real"),
    "verify.cluster_depth": (int, 4, "nonnegative integer"),
    "output.dir": (_str, None, "path"),
    "output.fields": (_str, "final", "none, final or all"),
    "output.field_times": (_list(_float), [], "list of reals"),
}


@dataclass
class RunConfig:
    values: dict
    source: str
    path: str | None = None
    lines: dict = field(default_factory=dict)

    def __getitem__(self, key):
        return self.values[key]

    def get(self, key, default=None):
        v = self.values.get(key)
        return default if v is None else v

    @property
    def exponents(self):
        return derive_exponents(self["exponents.p"], self["exponents.N"])

    def grid(self):
        from .grid import Grid
        return Grid.box(self["grid.lower"], self["grid.upper"], self["grid.dims"])

    def snapshot_times(self) -> list[float]:
        t0, t1 = self["solver.t0"], self["solver.t1"]
        times = set(self["solver.snapshot_times"]) | set(self["output.field_times"])
        n = self["solver.snapshots_per_decade"]
        if n > 0:
            start = self.get("solver.snapshot_start", t0)
            count = int(round(n * math.log10(t1 / start)))
            times |= set(np.logspace(math.log10(start), math.log10(t1), count + 1).tolist())
        return sorted(t for t in times if t0 < t < t1)


def parse_config_text(text: str, path: str | None = None) -> RunConfig:
    errors: list[str] = []
    values: dict = {}
    lines: dict = {}
    base = Path(path).parent if path else Path.cwd()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            errors.append(f"line {lineno}: expected 'section.key = value'")
            continue
        key, val = (x.strip() for x in line.split("=", 1))
        if key not in SCHEMA:
            errors.append(f"line {lineno}: unknown key '{key}'")
            continue
        if key in values:
            errors.append(f"line {lineno}: duplicate key '{key}' (first set on line {lines[key]})")
            continue
        conv, _, tname = SCHEMA[key]
        try:
            values[key] = conv(val)
            lines[key] = lineno
        except (ValueError, TypeError) as exc:
            errors.append(f"line {lineno}: '{key}' expects {tname}, got '{val}' ({exc})")
    for key, (_, default, _) in SCHEMA.items():
        values.setdefault(key, default)
    if values.get("initial.path"):
        p = Path(values["initial.path"])
        if not p.is_absolute():
            p = base / p
        values["initial.path"] = str(p)
    cfg = RunConfig(values, text, path, lines)
    errors.extend(_validate(cfg))
    if errors:
        raise ConfigError(errors)
    return cfg


def parse_config(path) -> RunConfig:
    path = Path(path)
    return parse_config_text(path.read_text(), str(path))


def _at(cfg, key):
    n = cfg.lines.get(key)
    return f"line {n}: " if n else ""


def _validate(cfg: RunConfig) -> list[str]:
    v = cfg.values
    errs = []

    def need(key):
        if v.get(key) is None:
            errs.append(f"missing required key '{key}'")
            return False
        return True

    task = v["run.task"]
    if task not in TASKS:
        errs.append(f"{_at(cfg, 'run.task')}unknown task '{task}'")
    if need("exponents.p"):
        p = v["exponents.p"]
        N = v["exponents.N"] if v["exponents.N"] is not None else len(p)
        if len(p) != N:
            errs.append(f"{_at(cfg, 'exponents.N')}N = {N} but {len(p)} exponents given")
        elif any(x <= 1 for x in p):
            errs.append(f"{_at(cfg, 'exponents.p')}inadmissible exponents: p_i > 2 violated (some p_i <= 1)")
        else:
            rep = validate_admissible(derive_exponents(p, N))
            for msg in rep.violations:
                errs.append(f"{_at(cfg, 'exponents.p')}inadmissible exponents: {msg}")
        v["exponents.N"] = N
    if task != "exponents":
        if need("grid.dims") and need("grid.lower") and need("grid.upper"):
            n = len(v["grid.dims"])
            if not (len(v["grid.lower"]) == len(v["grid.upper"]) == n):
                errs.append(f"{_at(cfg, 'grid.dims')}grid.dims, grid.lower and grid.upper differ in length")
            elif any(d < 2 for d in v["grid.dims"]):
                errs.append(f"{_at(cfg, 'grid.dims')}every axis needs at least 2 cells")
            elif any(b <= a for a, b in zip(v["grid.lower"], v["grid.upper"])):
                errs.append(f"{_at(cfg, 'grid.upper')}grid.upper must exceed grid.lower")
            elif v.get("exponents.p") is not None and n != v["exponents.N"]:
                errs.append(f"{_at(cfg, 'grid.dims')}grid has {n} axes but N = {v['exponents.N']}")
    if v["solver.scheme"] not in ("explicit", "implicit"):
        errs.append(f"{_at(cfg, 'solver.scheme')}scheme must be explicit or implicit")
    if not 0 < v["solver.cfl_safety"] <= 1:
        errs.append(f"{_at(cfg, 'solver.cfl_safety')}cfl_safety must lie in (0, 1]")
    for key in ("solver.implicit_dt", "solver.min_tol", "fixed_point.eps0", "fixed_point.s_bar",
                "fixed_point.tol", "initial.amplitude", "initial.radius", "verify.harnack_C1",
                "verify.selfsim_t", "verify.degiorgi_rho", "verify.cluster_lambda", "verify.cluster_rho"):
        if not v[key] > 0:
            errs.append(f"{_at(cfg, key)}{key} must be positive")
    for key in ("solver.max_inner_iters", "fixed_point.max_iters", "verify.comparison_pairs",
                "verify.comparison_steps"):
        if v[key] < 1:
            errs.append(f"{_at(cfg, key)}{key} must be at least 1")
    for key in ("solver.snapshots_per_decade", "solver.boundary_margin", "fixed_point.extra_applications",
                "verify.cluster_depth"):
        if v[key] < 0:
            errs.append(f"{_at(cfg, key)}{key} must be nonnegative")
    if v["solver.support_threshold"] < 0:
        errs.append(f"{_at(cfg, 'solver.support_threshold')}support_threshold must be nonnegative")
    if task == "evolve" and not v["solver.t1"] > v["solver.t0"]:
        errs.append(f"{_at(cfg, 'solver.t1')}solver.t1 must exceed solver.t0")
    if v["solver.t0"] < 0:
        errs.append(f"{_at(cfg, 'solver.t0')}solver.t0 must be nonnegative")
    st = v["solver.snapshot_times"]
    if any(b <= a for a, b in zip(st, st[1:])):
        errs.append(f"{_at(cfg, 'solver.snapshot_times')}snapshot times must increase")
    if any(not v["solver.t0"] < t <= v["solver.t1"] for t in st + v["output.field_times"]):
        errs.append(f"{_at(cfg, 'solver.snapshot_times')}snapshot times must lie in (t0, t1]")
    if v["solver.snapshots_per_decade"] > 0:
        start = v["solver.snapshot_start"] if v["solver.snapshot_start"] is not None else v["solver.t0"]
        if not start > 0:
            errs.append(f"{_at(cfg, 'solver.snapshots_per_decade')}log-spaced snapshots need a positive "
                        "solver.snapshot_start or solver.t0")
    kind = v["initial.kind"]
    if kind not in INITIAL_KINDS:
        errs.append(f"{_at(cfg, 'initial.kind')}unknown initial datum '{kind}'")
    if kind == "field-file":
        if not v.get("initial.path"):
            errs.append("initial.kind = field-file needs initial.path")
        elif not Path(v["initial.path"]).is_file():
            errs.append(f"{_at(cfg, 'initial.path')}file not found: {v['initial.path']}")
    if kind == "isotropic-barenblatt" and v.get("exponents.p") and len(set(v["exponents.p"])) != 1:
        errs.append(f"{_at(cfg, 'initial.kind')}isotropic-barenblatt needs equal exponents")
    for s in v["verify.suites"]:
        if s not in SUITES:
            errs.append(f"{_at(cfg, 'verify.suites')}unknown suite '{s}'")
        elif task == "evolve" and s == "selfsim":
            errs.append(f"{_at(cfg, 'verify.suites')}suite 'selfsim' needs run.task = barenblatt")
        elif task == "barenblatt" and s != "selfsim":
            errs.append(f"{_at(cfg, 'verify.suites')}suite '{s}' needs run.task = evolve")
    for a in v["verify.degiorgi_a"]:
        if not 0 < a <= 1:
            errs.append(f"{_at(cfg, 'verify.degiorgi_a')}levels must lie in (0, 1]")
    if v["output.fields"] not in ("none", "final", "all"):
        errs.append(f"{_at(cfg, 'output.fields')}output.fields must be none, final or all")
    if v["verify.comparison_dims"] < 4:
        errs.append(f"{_at(cfg, 'verify.comparison_dims')}comparison grid needs at least 4 cells per axis")
    return errs
