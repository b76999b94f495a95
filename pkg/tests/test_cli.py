import json
import os
import subprocess
import sys

import numpy as np
import pytest

from anisolab.cli import main
from anisolab.exponents import derive_exponents
from anisolab.grid import Field, Grid, read_field, write_field

SMALL = """\
run.task = evolve
run.name = small
exponents.p = 2.2, 2.4, 2.6
grid.dims = 24, 24, 24
grid.lower = -1.5, -1.5, -1.5
grid.upper = 1.5, 1.5, 1.5
solver.t0 = 0
solver.t1 = 0.01
solver.snapshot_times = 0.002, 0.005
initial.kind = indicator-box
initial.half_width = 0.3
verify.suites = mass, support
verify.growth_R0 = 0.3
verify.growth_late_fraction = 1
output.fields = all
"""


def write_cfg(tmp_path, text=SMALL, name="small.cfg"):
    f = tmp_path / name
    f.write_text(text)
    return str(f)


def manifest_outputs(d):
    return json.loads((d / "manifest.json").read_text())["outputs"]


def test_exponents_json(capsys):
    assert main(["exponents", "2.5", "--N", "3"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert {"p_bar", "sigma", "alpha", "alpha_i", "q_space", "q_time", "gamma", "admissible"} <= set(out)
    assert out["sigma"] == pytest.approx(4.0) and out["admissible"]
    assert main(["exponents", "2.0", "2.5", "2.5"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert not out["admissible"] and any("p_i > 2" in v for v in out["violations"])


def test_transform_round_trip(tmp_path):
    e = derive_exponents((2.5, 2.5, 2.5))
    g = Grid.cube(1.0, 16, 3)
    x = g.mesh()
    u = Field(g, np.exp(-sum(c**2 for c in x) / 0.1), 1.0, e.p)
    write_field(tmp_path / "u.apde", u)
    assert main(["transform", str(tmp_path / "u.apde"), "--out", str(tmp_path / "v.apde"), "--rho", "1.0",
                 "--theta", "2.0"]) == 0
    v = read_field(tmp_path / "v.apde")
    np.testing.assert_allclose(v.values, u.values / 2.0, rtol=1e-12)
    assert main(["transform", str(tmp_path / "u.apde"), "--out", str(tmp_path / "w.apde"), "--rho", "2.0"]) == 1


def test_run_is_deterministic_and_verify_works(tmp_path):
    cfg = write_cfg(tmp_path)
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["run", cfg, "--out-dir", str(a)]) == 0
    assert main(["--out-dir", str(b), "run", cfg]) == 0
    oa, ob = manifest_outputs(a), manifest_outputs(b)
    assert oa == ob and "suites/mass.json" in oa and "trajectory/diagnostics.csv" in oa
    rep = json.loads((a / "suites" / "support.json").read_text())
    assert rep["points"] == 2 and len(rep["slopes"]) == 3
    assert main(["verify", "--suite", "mass,harnack", "--traj", str(a / "trajectory")]) == 0
    assert (a / "trajectory" / "verify" / "harnack.json").is_file()
    assert main(["verify", "--suite", "selfsim", "--traj", str(a / "trajectory")]) == 1
    assert json.loads((a / "trajectory" / "verify" / "error.json").read_text())["error"] == "ValueError"


def test_boundary_abort_reports_time(tmp_path):
    text = SMALL.replace("initial.half_width = 0.3", "initial.half_width = 1.3").replace(
        "solver.t1 = 0.01", "solver.t1 = 0.5").replace("solver.snapshot_times = 0.002, 0.005\n", "")
    out = tmp_path / "abort"
    assert main(["run", write_cfg(tmp_path, text), "--out-dir", str(out)]) == 1
    assert [p.name for p in out.iterdir()] == ["error.json"]
    err = json.loads((out / "error.json").read_text())
    assert err["error"] == "BoundaryContactError" and err["time"] >= 0


def test_invalid_config_exit_code(tmp_path, capsys):
    cfg = write_cfg(tmp_path, SMALL + "solver.dtt = 1\n")
    assert main(["run", cfg, "--out-dir", str(tmp_path / "x")]) == 2
    assert "line 16: unknown key 'solver.dtt'" in capsys.readouterr().err
    assert not (tmp_path / "x").exists()


def run_cli(args, threads):
    env = dict(os.environ)
    env.pop("NUMBA_NUM_THREADS", None)
    return subprocess.run([sys.executable, "-m", "anisolab", "--threads", str(threads)] + args,
                          capture_output=True, text=True, env=env)


def test_thread_count_does_not_change_outputs(tmp_path):
    cfg = write_cfg(tmp_path)
    for n in (1, 8):
        r = run_cli(["run", cfg, "--out-dir", str(tmp_path / f"t{n}")], n)
        assert r.returncode == 0, r.stderr
    m1 = json.loads((tmp_path / "t1" / "manifest.json").read_text())
    m8 = json.loads((tmp_path / "t8" / "manifest.json").read_text())
    assert m1["threads"] == 1 and m8["threads"] == 8
    assert m1["outputs"] == m8["outputs"]
