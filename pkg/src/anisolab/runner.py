"""Scenario runner: turns a validated :class:`RunConfig` into artifacts on disk.

Every run writes into a scratch directory next to the requested output
directory and renames it into place only at the end, so a reader never sees
a half-written result. Successful runs contain ``manifest.json``; failed runs
contain ``error.json`` and nothing else.

Layout of a successful ``evolve`` run::

    manifest.json            inputs hash, versions, timings, output hashes
    report.json              task summary
    trajectory/diagnostics.csv
    trajectory/trajectory.json
    trajectory/fields/*.apde
    suites/<name>.json, suites/<name>.csv
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import platform
import shutil
import time
from pathlib import Path

import numpy as np

from .config import RunConfig
from .exponents import ExponentData, validate_admissible
from .grid import Field, Grid, Trajectory, l1_distance, mass, read_field, write_diagnostics, write_field
from .oracle import IsotropicBarenblatt
from .solver import BoundaryContactError, InnerSolverError, SolverConfig, evolve
from . import suites as S

PRESET_DIR = Path(__file__).parent / "presets"


# -- JSON helpers -------------------------------------------------------------


def to_jsonable(obj):
    """Plain-python copy of ``obj`` with non-finite floats mapped to None."""
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, Path):
        return str(obj)
    return obj


def dump_json(obj, path):
    text = json.dumps(to_jsonable(obj), sort_keys=True, indent=2, allow_nan=False)
    Path(path).write_text(text + "\n")


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def versions() -> dict:
    import numba
    import scipy

    from . import __version__
    return {"anisolab": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "numba": numba.__version__, "python": platform.python_version()}


# -- building blocks ----------------------------------------------------------


def resolve_config(name_or_path) -> Path:
    """Path of a preset name (``isotropic-oracle``) or an existing file."""
    p = Path(name_or_path)
    if p.is_file():
        return p
    preset = PRESET_DIR / f"{name_or_path}.cfg"
    if preset.is_file():
        return preset
    names = ", ".join(sorted(x.stem for x in PRESET_DIR.glob("*.cfg")))
    raise FileNotFoundError(f"no config file or preset named '{name_or_path}' (presets: {names})")


def solver_config(cfg: RunConfig, **overrides) -> SolverConfig:
    kw = dict(
        scheme=cfg["solver.scheme"], cfl_safety=cfg["solver.cfl_safety"], implicit_dt=cfg["solver.implicit_dt"],
        min_tol=cfg["solver.min_tol"], max_inner_iters=cfg["solver.max_inner_iters"],
        support_threshold=cfg["solver.support_threshold"], boundary_margin=cfg["solver.boundary_margin"],
    )
    kw.update(overrides)
    return SolverConfig(**kw)


def initial_datum(cfg: RunConfig, grid: Grid, e: ExponentData) -> Field:
    """Initial field at time ``solver.t0`` from the ``initial.*`` keys."""
    kind = cfg["initial.kind"]
    t0 = cfg["solver.t0"]
    center = np.array(cfg.get("initial.center", [0.0] * e.N), dtype=float)
    if center.size != e.N:
        raise ValueError(f"initial.center needs {e.N} coordinates")
    xs = grid.mesh()
    if kind == "indicator-box":
        hw = cfg["initial.half_width"]
        hw = hw * e.N if len(hw) == 1 else hw
        if len(hw) != e.N:
            raise ValueError(f"initial.half_width needs 1 or {e.N} values")
        inside = np.ones(grid.dims, dtype=bool)
        for i, x in enumerate(xs):
            inside = inside & (np.abs(x - center[i]) < hw[i])
        vals = cfg["initial.amplitude"] * inside.astype(float)
    elif kind == "bump":
        r = cfg["initial.radius"]
        d2 = sum(((x - center[i]) / r) ** 2 for i, x in enumerate(xs))
        vals = np.broadcast_to(cfg["initial.amplitude"] * np.maximum(1.0 - d2, 0.0) ** 2, grid.dims)
    elif kind == "field-file":
        f = read_field(cfg["initial.path"])
        if f.grid != grid:
            raise ValueError("initial field file grid differs from the configured grid")
        vals = f.values
    elif kind == "isotropic-barenblatt":
        p = e.p[0]
        t_ref = cfg.get("initial.time", t0)
        if cfg.get("initial.mass") is not None:
            ob = IsotropicBarenblatt(p, e.N, cfg["initial.mass"])
        else:
            ob = IsotropicBarenblatt.with_support_radius(p, e.N, cfg["initial.radius"], t_ref)
        if not t0 > 0:
            raise ValueError("isotropic-barenblatt data need solver.t0 > 0")
        vals = ob.on_grid(grid, t0)
    elif kind == "unit-ball":
        from .fokker_planck import unit_ball_datum
        vals = unit_ball_datum(grid, cfg.get("initial.mass", cfg["fixed_point.eps0"]), e).values
    else:
        raise ValueError(f"unknown initial datum '{kind}'")
    return Field(grid, vals, t0, e.p)


def oracle_for(cfg: RunConfig, e: ExponentData) -> IsotropicBarenblatt | None:
    if cfg["initial.kind"] != "isotropic-barenblatt":
        return None
    if cfg.get("initial.mass") is not None:
        return IsotropicBarenblatt(e.p[0], e.N, cfg["initial.mass"])
    return IsotropicBarenblatt.with_support_radius(e.p[0], e.N, cfg["initial.radius"],
                                                   cfg.get("initial.time", cfg["solver.t0"]))


def _field_name(k: int) -> str:
    return f"snap_{k:05d}.apde"


def write_trajectory(traj: Trajectory, directory, keep: set[int]):
    """Write diagnostics, an index and the snapshots whose index is in ``keep``.

    Snapshots already stored as files inside ``directory/fields`` stay put.
    """
    d = Path(directory)
    (d / "fields").mkdir(parents=True, exist_ok=True)
    traj.write_csv(d / "diagnostics.csv")
    names = []
    for k in range(len(traj)):
        entry = traj.fields[k]
        if isinstance(entry, (str, Path)) and Path(entry).parent == d / "fields":
            names.append(Path(entry).name)
        elif k in keep:
            write_field(d / "fields" / _field_name(k), traj.snapshot(k))
            names.append(_field_name(k))
        else:
            names.append(None)
    dump_json({"N": traj.N, "times": traj.times, "fields": [f"fields/{n}" if n else None for n in names],
               "header": traj.header}, d / "trajectory.json")


def load_trajectory(directory) -> Trajectory:
    """Trajectory view of a directory written by :func:`write_trajectory`.

    Snapshots without a field file are kept as ``None``; suites that need
    them fail with a clear message.
    """
    d = Path(directory)
    index = json.loads((d / "trajectory.json").read_text())
    from .grid import read_diagnostics
    _, rows = read_diagnostics(d / "diagnostics.csv")
    traj = Trajectory(int(index["N"]))
    for row, f in zip(rows, index["fields"]):
        traj.append(str(d / f) if f else None, row)
    return traj


def complete_only(traj: Trajectory) -> Trajectory:
    """Sub-trajectory of the snapshots that carry field data."""
    out = Trajectory(traj.N)
    for k in range(len(traj)):
        if traj.fields[k] is not None:
            out.append(traj.fields[k], traj.diagnostics[k])
    return out


def write_suite(directory, name: str, result):
    report, header, rows = result
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    dump_json(report, d / f"{name}.json")
    write_diagnostics_generic(d / f"{name}.csv", header, rows)


def write_diagnostics_generic(path, header, rows):
    import csv
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow(["" if x is None else repr(float(x)) if isinstance(x, (float, np.floating)) else
                        str(bool(x)).lower() if isinstance(x, (bool, np.bool_)) else str(x) for x in row])


def run_trajectory_suites(traj: Trajectory, e: ExponentData, cfg: RunConfig, names, out_dir, seed: int):
    """Run the requested suites and write one JSON and one CSV per suite."""
    summary = {}
    for name in names:
        if name == "comparison":
            res = S.suite_comparison(e, cfg, seed)
        elif name == "selfsim":
            raise ValueError("the selfsim suite runs on a built profile (run.task = barenblatt)")
        else:
            needs_fields = name in ("harnack", "degiorgi", "cluster")
            src = complete_only(traj) if needs_fields else traj
            if needs_fields and len(src) < (1 if name == "cluster" else 2):
                raise ValueError(f"suite '{name}' needs stored snapshots; rerun with output.fields = all")
            if needs_fields and name != "cluster" and len(src) != len(traj):
                raise ValueError(f"suite '{name}' needs every snapshot; rerun with output.fields = all")
            res = S.TRAJECTORY_SUITES[name](src, e, cfg)
        write_suite(out_dir, name, res)
        summary[name] = res[0]
    return summary


# -- tasks --------------------------------------------------------------------


def _task_exponents(cfg: RunConfig, work: Path, seed: int, timings: dict):
    e = cfg.exponents
    rep = validate_admissible(e)
    out = e.as_dict()
    out["admissible"] = rep.ok
    out["violations"] = rep.violations
    dump_json(out, work / "exponents.json")


def _task_evolve(cfg: RunConfig, work: Path, seed: int, timings: dict):
    e = cfg.exponents
    grid = cfg.grid()
    g = initial_datum(cfg, grid, e)
    tdir = work / "trajectory"
    (tdir / "fields").mkdir(parents=True)
    mode = cfg["output.fields"]
    scfg = solver_config(cfg, snapshot_times=tuple(cfg.snapshot_times()),
                         snapshot_dir=str(tdir / "fields") if mode == "all" else None)
    tic = time.perf_counter()
    traj = evolve(g, cfg["solver.t0"], cfg["solver.t1"], e, scfg)
    timings["evolve"] = time.perf_counter() - tic
    keep = set()
    if mode == "final":
        keep.add(len(traj) - 1)
    if mode != "none":
        for t in cfg["output.field_times"]:
            keep |= {k for k, tk in enumerate(traj.times) if math.isclose(tk, t, rel_tol=1e-12)}
    write_trajectory(traj, tdir, keep)
    D = traj.diagnostics_array()
    report = {"task": "evolve", "t0": traj.times[0], "t1": traj.times[-1], "snapshots": len(traj),
              "mass_initial": D[0, 1], "mass_final": D[-1, 1],
              "mass_relative_drift": abs(D[-1, 1] - D[0, 1]) / D[0, 1] if D[0, 1] else 0.0,
              "exponents": e.as_dict()}
    ob = oracle_for(cfg, e)
    if ob is not None:
        entries = []
        for k in sorted(keep | {len(traj) - 1}):
            exact = ob.field(grid, traj.times[k])
            entries.append({"t": traj.times[k], "relative_l1": l1_distance(traj.snapshot(k), exact) / mass(exact)})
        report["oracle"] = {"mass": ob.mass, "comparisons": entries}
    tic = time.perf_counter()
    report["suites"] = run_trajectory_suites(traj, e, cfg, cfg["verify.suites"], work / "suites", seed)
    timings["suites"] = time.perf_counter() - tic
    if mode == "none":
        shutil.rmtree(tdir / "fields")
    dump_json(report, work / "report.json")


def _task_barenblatt(cfg: RunConfig, work: Path, seed: int, timings: dict):
    from .fokker_planck import (FixedPointConfig, _relative_l1, build_barenblatt, semigroup_tilde)
    e = cfg.exponents
    grid = cfg.grid()
    fp = FixedPointConfig(eps0=cfg["fixed_point.eps0"], s_bar=cfg["fixed_point.s_bar"], tol=cfg["fixed_point.tol"],
                          max_iters=cfg["fixed_point.max_iters"], use_running_sup=cfg["fixed_point.use_running_sup"])
    scfg = solver_config(cfg)
    start = initial_datum(cfg, grid, e) if "initial.kind" in cfg.lines else None
    tic = time.perf_counter()
    prof = build_barenblatt(e, fp, grid, scfg, initial=start)
    timings["build"] = time.perf_counter() - tic
    write_field(work / "profile.apde", prof.w)
    extra, drift = [], []
    g = prof.w
    tic = time.perf_counter()
    for _ in range(cfg["fixed_point.extra_applications"]):
        nxt = semigroup_tilde(g, fp.s_bar, e, scfg, renormalize=fp.renormalize)
        extra.append(_relative_l1(nxt, g))
        drift.append(_relative_l1(nxt, prof.w))
        g = nxt
    timings["extra_applications"] = time.perf_counter() - tic
    report = {"task": "barenblatt", "mass": prof.mass, "sup": prof.sup, "eta_bar": prof.eta_bar,
              "residual": prof.residual, "iterations": prof.iterations, "restarts": prof.restarts,
              "residual_history": prof.history,
              "support": None if prof.support is None else {"lower": prof.support[0], "upper": prof.support[1]},
              "extra_residuals": extra, "extra_drift": drift, "grid_spacing": grid.spacing,
              "exponents": e.as_dict()}
    if len(set(e.p)) == 1 and e.p[0] > 2:
        ob = IsotropicBarenblatt(e.p[0], e.N, prof.mass)
        exact = ob.field(grid, 1.0)
        report["oracle"] = {"relative_l1": l1_distance(prof.w, exact) / mass(exact), "mass": prof.mass}
    write_diagnostics_generic(work / "residuals.csv", ["iteration", "residual"],
                              [(k + 1, r) for k, r in enumerate(prof.history)])
    summary = {}
    for name in cfg["verify.suites"]:
        if name != "selfsim":
            raise ValueError(f"suite '{name}' runs on a trajectory (run.task = evolve)")
        res = S.suite_selfsim(prof, cfg)
        write_suite(work / "suites", name, res)
        summary[name] = res[0]
    report["suites"] = summary
    dump_json(report, work / "report.json")


TASKS = {"exponents": _task_exponents, "evolve": _task_evolve, "barenblatt": _task_barenblatt}


# -- scenario -----------------------------------------------------------------


def inputs_hash(cfg: RunConfig, seed: int) -> str:
    h = hashlib.sha256()
    h.update(cfg.source.encode())
    h.update(f"\nseed={seed}\n".encode())
    if cfg["initial.kind"] == "field-file" and cfg.get("initial.path"):
        h.update(Path(cfg["initial.path"]).read_bytes())
    return h.hexdigest()


def error_report(exc: BaseException) -> dict:
    out = {"error": type(exc).__name__, "message": str(exc)}
    if isinstance(exc, BoundaryContactError):
        out["time"] = exc.time
        out["margin"] = exc.margin
    if isinstance(exc, InnerSolverError):
        out["residual"] = exc.residual
    if hasattr(exc, "history"):
        out["history"] = list(exc.history)
    if hasattr(exc, "errors"):
        out["errors"] = list(exc.errors)
    return out


def _replace_dir(src: Path, dst: Path):
    if dst.exists():
        old = dst.with_name(f".{dst.name}.old-{os.getpid()}")
        os.replace(dst, old)
        os.replace(src, dst)
        shutil.rmtree(old)
    else:
        os.replace(src, dst)


def _publish(out_dir, body) -> tuple[int, Path]:
    """Run ``body(work_dir)`` and move the result to ``out_dir`` atomically.

    On failure the published directory holds only ``error.json``.
    """
    out_dir = Path(out_dir).resolve()
    out_dir.parent.mkdir(parents=True, exist_ok=True)
    work = out_dir.with_name(f".{out_dir.name}.tmp-{os.getpid()}")
    if work.exists():
        shutil.rmtree(work)
    work.mkdir()
    try:
        body(work)
    except Exception as exc:  # every module error becomes a report
        shutil.rmtree(work)
        work.mkdir()
        dump_json(error_report(exc), work / "error.json")
        _replace_dir(work, out_dir)
        return 1, out_dir
    _replace_dir(work, out_dir)
    return 0, out_dir


def _manifest(work: Path, head: dict):
    outputs = {str(p.relative_to(work)): _sha256(p) for p in sorted(work.rglob("*")) if p.is_file()}
    dump_json(dict(head, versions=versions(), outputs=outputs), work / "manifest.json")


def run_scenario(cfg: RunConfig, out_dir, seed: int | None = None, threads: int | None = None) -> int:
    """Execute ``cfg`` and publish its artifacts in ``out_dir``.

    Returns 0 on success and 1 on failure; on failure ``out_dir`` holds only
    ``error.json``.
    """
    seed = cfg["run.seed"] if seed is None else int(seed)

    def body(work: Path):
        timings: dict = {}
        tic = time.perf_counter()
        TASKS[cfg["run.task"]](cfg, work, seed, timings)
        timings["total"] = time.perf_counter() - tic
        _manifest(work, {"name": cfg["run.name"], "task": cfg["run.task"], "seed": seed,
                         "config_path": cfg.path, "inputs_hash": inputs_hash(cfg, seed),
                         "timings": timings, "threads": threads})

    return _publish(out_dir, body)[0]


def _config_for_trajectory(traj: Trajectory) -> RunConfig:
    from .config import parse_config_text
    stored = [k for k in range(len(traj)) if traj.fields[k] is not None]
    if not stored:
        raise ValueError("the trajectory stores no field files; pass --config to supply the exponents")
    f = traj.snapshot(stored[0])
    if f.p is None or not all(math.isfinite(x) for x in f.p):
        raise ValueError("the stored fields record no exponents; pass --config")
    g = f.grid
    text = "\n".join([
        "exponents.p = " + ", ".join(repr(x) for x in f.p),
        "grid.dims = " + ", ".join(str(d) for d in g.dims),
        "grid.lower = " + ", ".join(repr(x) for x in g.origin),
        "grid.upper = " + ", ".join(repr(x) for x in g.upper),
        "initial.kind = indicator-box",
        f"solver.t0 = {traj.times[0]!r}",
        f"solver.t1 = {traj.times[-1]!r}",
    ]) + "\n"
    return parse_config_text(text)


def verify_trajectory(traj_dir, names, cfg: RunConfig | None, out_dir, seed: int | None = None) -> int:
    """Run suites on a stored trajectory; one JSON and one CSV per suite."""
    from .config import SUITES

    def body(work: Path):
        bad = [n for n in names if n not in SUITES or n == "selfsim"]
        if bad:
            raise ValueError(f"unknown or non-trajectory suite(s): {', '.join(bad)}")
        traj = load_trajectory(traj_dir)
        c = cfg if cfg is not None else _config_for_trajectory(traj)
        s = c["run.seed"] if seed is None else int(seed)
        e = c.exponents
        if e.N != traj.N:
            raise ValueError(f"config has N = {e.N} but the trajectory has N = {traj.N}")
        tic = time.perf_counter()
        run_trajectory_suites(traj, e, c, names, work, s)
        _manifest(work, {"task": "verify", "suites": list(names), "seed": s,
                         "trajectory": str(Path(traj_dir).resolve()),
                         "timings": {"suites": time.perf_counter() - tic}})

    return _publish(out_dir, body)[0]
