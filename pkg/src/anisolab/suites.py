"""Verification suites shared by the ``run`` and ``verify`` commands.

Each suite returns ``(report, header, rows)``: a JSON-ready dict and a
plot-ready table. Column meanings are listed in ``report_schema.json``.
"""

from __future__ import annotations

import math

import numpy as np

from .exponents import ExponentData
from .fokker_planck import BarenblattProfile, self_similarity_residual
from .grid import Field, Grid, Trajectory
from . import harness as H


def suite_mass(traj: Trajectory, e: ExponentData, cfg):
    D = traj.diagnostics_array()
    m0 = D[0, 1]
    drift = (D[:, 1] - m0) / m0 if m0 != 0 else np.zeros(len(D))
    report = {"initial_mass": float(m0), "max_relative_drift": float(np.max(np.abs(drift))),
              "sup_nonincreasing": bool(np.all(np.diff(D[:, 2]) <= 1e-10)),
              "energy_nonincreasing": bool(np.all(np.diff(D[:, 4]) <= 1e-10 * max(D[0, 4], 1e-300)))}
    rows = [(t, m, d) for t, m, d in zip(D[:, 0], D[:, 1], drift)]
    return report, ["t", "mass", "relative_drift"], rows


def suite_support(traj: Trajectory, e: ExponentData, cfg):
    R0 = cfg.get("verify.growth_R0", [0.0])
    R0 = R0 * e.N if len(R0) == 1 else R0
    grid = traj.snapshot(0).grid if traj.fields and traj.fields[0] is not None else None
    spacing = grid.spacing if grid is not None else None
    rep = H.check_support_growth(traj, e, R0, cfg.get("verify.growth_late_fraction", 0.5), spacing)
    report = {"slopes": rep.slopes.tolist(), "alpha_i": rep.alpha_i.tolist(),
              "relative_error": rep.relative_error.tolist(), "ordered": rep.ordered,
              "window": list(rep.window), "points": rep.n_points, "R0": list(R0)}
    D = traj.diagnostics_array()
    header = ["t"] + [f"hw_{i + 1}" for i in range(e.N)]
    rows = [tuple([r[0]] + list(r[5:])) for r in D]
    return report, header, rows


def _default_probes(traj: Trajectory, e: ExponentData):
    t0, t1 = traj.times[0], traj.times[-1]
    mid = math.sqrt(max(t0, 1e-12) * t1) if t0 > 0 else 0.5 * (t0 + t1)
    return [([0.0] * e.N, mid)]


def suite_harnack(traj: Trajectory, e: ExponentData, cfg):
    probes = cfg.get("verify.harnack_probes") or _default_probes(traj, e)
    sampler = H.SpaceTimeSampler(traj)
    reports, rows = [], []
    for C2 in cfg.get("verify.harnack_C2", [0.5]):
        rep = H.harnack_probe(sampler, e, cfg.get("verify.harnack_C1", 1.0), C2,
                              cfg.get("verify.harnack_rho"), probes)
        d = rep.to_dict()
        c3 = rep.c3_by_rho
        fin = c3[np.isfinite(c3)]
        d["c3_spread"] = float(fin.max() / fin.min() - 1.0) if fin.size else None
        d["all_finite"] = bool(np.all(np.isfinite(rep.ratios_fwd[~np.isnan(rep.ratios_fwd)])))
        reports.append(d)
        for a, _ in enumerate(rep.probe_points):
            for b, rho in enumerate(rep.rho_grid):
                rows.append((C2, a, rho, rep.ratios_fwd[a, b], rep.ratios_bwd[a, b]))
    return {"sweeps": reports}, ["C2", "probe", "rho", "ratio_fwd", "ratio_bwd"], rows


def suite_degiorgi(traj: Trajectory, e: ExponentData, cfg):
    sampler = H.SpaceTimeSampler(traj)
    rho = cfg.get("verify.degiorgi_rho", 0.2)
    t_top = cfg.get("verify.degiorgi_t") or traj.times[-1]
    center = np.zeros(e.N)
    theta = sampler.value(center, t_top)
    if not theta > 0:
        theta = 1.0
    probes, rows = [], []
    for a in cfg.get("verify.degiorgi_a", [0.5]):
        try:
            q = H.degiorgi_window_probe(sampler, e, center, t_top, rho, theta, a)
        except ValueError as exc:
            rows.append((a, math.nan, math.nan, False))
            probes.append({"a": a, "skipped": str(exc)})
            continue
        probes.append({"a": a, "mu_observed": q.mu_observed, "inf_half": q.inf_half,
                       "implication_holds": q.implication_holds})
        rows.append((a, q.mu_observed, q.inf_half, q.implication_holds))
    return ({"window": {"t_top": t_top, "rho": rho, "theta": theta}, "probes": probes},
            ["a", "mu_observed", "inf_half", "implication_holds"], rows)


def suite_cluster(traj: Trajectory, e: ExponentData, cfg):
    u = traj.snapshot(len(traj) - 1)
    a = cfg.get("verify.cluster_a") or 0.5 * float(np.max(u.values))
    res = H.cluster_search(u, np.zeros(e.N), cfg.get("verify.cluster_rho", 1.0), cfg.get("verify.cluster_lambda", 0.5),
                           cfg.get("verify.cluster_nu", 0.1), cfg.get("verify.cluster_alpha_bar", 0.1), a,
                           cfg.get("verify.cluster_depth", 4))
    if res is None:
        return {"found": False, "a": a}, ["found"], [(False,)]
    report = {"found": True, "a": a, "center": res.center.tolist(), "edge": res.edge,
              "fraction": res.fraction, "hypothesis_holds": res.hypothesis_holds}
    return report, ["found", "edge", "fraction"], [(True, res.edge, res.fraction)]


def suite_comparison(e: ExponentData, cfg, seed: int):
    rng = np.random.default_rng(seed)
    n = cfg.get("verify.comparison_dims", 24)
    grid = Grid.cube(1.0, n, e.N)
    rows, total = [], 0
    worst = 0.0
    scheme = cfg.get("solver.scheme", "explicit")
    for k in range(cfg.get("verify.comparison_pairs", 4)):
        lo = H.random_bumps(grid, rng)
        hi = lo + H.random_bumps(grid, rng)
        r = H.ordered_pair_run(Field(grid, lo), Field(grid, hi), e, cfg.get("verify.comparison_steps", 50),
                               scheme, cfg.get("solver.cfl_safety", 0.4), cfg.get("solver.implicit_dt", 1e-3),
                               cfg.get("solver.min_tol", 1e-9))
        total += r.violations
        worst = max(worst, r.max_violation)
        rows.append((k, r.violations, r.raw_violations, r.max_violation, r.final_time))
    return ({"scheme": scheme, "pairs": len(rows), "violations": total, "max_violation": worst, "seed": seed},
            ["pair", "violations", "raw_violations", "max_violation", "final_time"], rows)


def suite_selfsim(profile: BarenblattProfile, cfg):
    rows = []
    t = cfg.get("verify.selfsim_t", 1.0)
    for rho in cfg.get("verify.selfsim_rho", [0.5, 2.0]):
        rows.append((rho, self_similarity_residual(profile, rho, t, profile.w.grid)))
    return ({"t": t, "residuals": {repr(float(r)): float(v) for r, v in rows}},
            ["rho", "residual"], rows)


TRAJECTORY_SUITES = {
    "mass": suite_mass,
    "support": suite_support,
    "harnack": suite_harnack,
    "degiorgi": suite_degiorgi,
    "cluster": suite_cluster,
}
