"""Command line entry point (``anisolab`` / ``python -m anisolab``).

Global flags may appear before or after the subcommand. ``--threads`` is
applied through ``NUMBA_NUM_THREADS`` before any numerical module loads.
"""

from __future__ import annotations

import argparse
import json
import os
import shutil
import sys
from pathlib import Path


def _global_flags(parser: argparse.ArgumentParser, suppress: bool):
    d = argparse.SUPPRESS if suppress else None
    parser.add_argument("--threads", type=int, default=d, help="numba worker threads")
    parser.add_argument("--seed", type=int, default=d, help="seed for randomized suites (overrides run.seed)")
    parser.add_argument("--out-dir", default=d, help="output directory")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="anisolab", description="Anisotropic slow-diffusion experiments.")
    _global_flags(ap, suppress=False)
    sub = ap.add_subparsers(dest="command", required=True)

    def add(name, help):
        p = sub.add_parser(name, help=help)
        _global_flags(p, suppress=True)
        return p

    p = add("exponents", "print derived constants and the admissibility verdict as JSON")
    p.add_argument("p", nargs="+", type=float, help="exponents p_1 ... p_N (or one value with --N)")
    p.add_argument("--N", type=int, default=None, help="dimension when a single exponent is given")

    p = add("transform", "apply a scaling map to a field file")
    p.add_argument("input", help="input field file")
    p.add_argument("--out", required=True, help="output field file")
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--rho", type=float, help="scale parameter rho (with --theta)")
    g.add_argument("--phi", action="store_true", help="logarithmic-time rescaling of a slice at time t > 0")
    g.add_argument("--psi", action="store_true", help="inverse rescaling of a slice stamped s")
    p.add_argument("--theta", type=float, default=None, help="amplitude parameter (default rho^-N)")
    p.add_argument("--target-grid", default=None, help="field file whose grid receives the result")
    p.add_argument("--outside", choices=("error", "zero"), default="error",
                   help="treat points outside the source grid as an error or as zero")
    p.add_argument("--p", default=None, help="comma separated exponents when the file records none")

    p = add("evolve", "evolve an initial datum and write snapshots and diagnostics")
    p.add_argument("--config", required=True)
    p.add_argument("--initial", default=None, help="field file replacing the configured initial datum")

    p = add("barenblatt", "build a self-similar profile by fixed-point iteration")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default=None, help="copy of the profile field file")
    p.add_argument("--report", default=None, help="copy of the JSON report")

    p = add("verify", "run verification suites on a stored trajectory")
    p.add_argument("--suite", action="append", required=True,
                   help="suite name; repeat or comma separate (mass, comparison, support, harnack, degiorgi, cluster)")
    p.add_argument("--traj", required=True, help="trajectory directory (contains trajectory.json)")
    p.add_argument("--config", default=None, help="config supplying suite parameters")

    p = add("run", "run a preset or config file")
    p.add_argument("scenario", help="preset name or config path")
    return ap


def _fail(msg: str, code: int = 2) -> int:
    print(f"anisolab: {msg}", file=sys.stderr)
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.threads is not None:
        if args.threads < 1:
            return _fail("--threads must be at least 1")
        os.environ["NUMBA_NUM_THREADS"] = str(args.threads)
    # numerical modules load only now, after the worker count is fixed
    from ._kernels import set_threads
    set_threads(args.threads)
    handler = {"exponents": _cmd_exponents, "transform": _cmd_transform, "evolve": _cmd_evolve,
               "barenblatt": _cmd_barenblatt, "verify": _cmd_verify, "run": _cmd_run}[args.command]
    from .config import ConfigError
    from .grid import FieldFormatError
    try:
        return handler(args)
    except ConfigError as exc:
        return _fail(str(exc))
    except (FieldFormatError, FileNotFoundError, ValueError) as exc:
        return _fail(str(exc), 1)


def _cmd_exponents(args) -> int:
    from .exponents import derive_exponents, validate_admissible
    from .runner import to_jsonable
    p = args.p
    if len(p) == 1 and args.N is not None:
        p = p * args.N
    elif args.N is not None and args.N != len(p):
        return _fail(f"--N {args.N} but {len(p)} exponents given")
    e = derive_exponents(p)
    rep = validate_admissible(e)
    d = e.as_dict()
    out = {k: d[k] for k in ("p_bar", "sigma", "alpha", "alpha_i", "q_space", "q_time", "gamma")}
    out.update(N=e.N, p=list(e.p), admissible=rep.ok, violations=rep.violations)
    print(json.dumps(to_jsonable(out), sort_keys=True, indent=2))
    return 0


def _cmd_transform(args) -> int:
    from .exponents import derive_exponents
    from .geometry import ScaleTransform, phi_slice, psi_slice, transform_field
    from .grid import Field, read_field, write_field
    import math

    u = read_field(args.input)
    if args.p:
        p = [float(x) for x in args.p.split(",")]
    elif u.p is not None and all(math.isfinite(x) for x in u.p):
        p = list(u.p)
    else:
        return _fail("the field file records no exponents; pass --p")
    e = derive_exponents(p)
    u = Field(u.grid, u.values, u.time, tuple(p))
    target = read_field(args.target_grid).grid if args.target_grid else None
    if args.phi:
        out = phi_slice(u, e, target, args.outside)
    elif args.psi:
        out = psi_slice(u, e, target, args.outside)
    else:
        T = ScaleTransform(args.rho, args.theta if args.theta is not None else args.rho ** (-e.N), e)
        out = transform_field(T, u, target, outside=args.outside)
    write_field(args.out, out)
    return 0


def _load(path):
    from .config import parse_config
    from .runner import resolve_config
    return parse_config(resolve_config(path))


def _out_dir(args, cfg, sub: str | None = None) -> Path:
    if args.out_dir:
        return Path(args.out_dir)
    if cfg.get("output.dir"):
        return Path(cfg["output.dir"])
    return Path("runs") / (sub or cfg["run.name"])


def _report_failure(out: Path) -> None:
    err = out / "error.json"
    if err.is_file():
        info = json.loads(err.read_text())
        print(f"anisolab: {info['error']}: {info['message']} (details in {err})", file=sys.stderr)


def _run(cfg, args, out: Path) -> int:
    from .runner import run_scenario
    code = run_scenario(cfg, out, seed=args.seed, threads=args.threads)
    if code:
        _report_failure(out)
    else:
        print(str(out))
    return code


def _cmd_run(args) -> int:
    cfg = _load(args.scenario)
    return _run(cfg, args, _out_dir(args, cfg))


def _cmd_evolve(args) -> int:
    cfg = _load(args.config)
    cfg.values["run.task"] = "evolve"
    if args.initial:
        from .config import ConfigError, _validate
        cfg.values["initial.kind"] = "field-file"
        cfg.values["initial.path"] = str(Path(args.initial).resolve())
        cfg.source += f"\n# initial datum replaced on the command line: {args.initial}\n"
        errs = _validate(cfg)
        if errs:
            raise ConfigError(errs)
    return _run(cfg, args, _out_dir(args, cfg))


def _cmd_barenblatt(args) -> int:
    cfg = _load(args.config)
    cfg.values["run.task"] = "barenblatt"
    out = _out_dir(args, cfg)
    code = _run(cfg, args, out)
    if code == 0:
        if args.out:
            shutil.copyfile(out / "profile.apde", args.out)
        if args.report:
            shutil.copyfile(out / "report.json", args.report)
    return code


def _cmd_verify(args) -> int:
    from .runner import verify_trajectory
    names = [s.strip() for item in args.suite for s in item.split(",") if s.strip()]
    cfg = _load(args.config) if args.config else None
    out = Path(args.out_dir) if args.out_dir else Path(args.traj) / "verify"
    code = verify_trajectory(args.traj, names, cfg, out, seed=args.seed)
    if code:
        _report_failure(out)
    else:
        print(str(out))
    return code


if __name__ == "__main__":
    sys.exit(main())
