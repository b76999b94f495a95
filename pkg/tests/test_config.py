import pytest

from anisolab.config import ConfigError, parse_config, parse_config_text
from anisolab.runner import resolve_config

MINIMAL = """\
run.task = evolve
exponents.p = 2.5, 2.5, 2.5
grid.dims = 16, 16, 16
grid.lower = -1, -1, -1
grid.upper = 1, 1, 1
initial.kind = indicator-box
"""


def errors_of(text):
    with pytest.raises(ConfigError) as info:
        parse_config_text(text)
    return info.value.errors


def test_minimal_config_parses_with_defaults():
    cfg = parse_config_text(MINIMAL)
    assert cfg["exponents.N"] == 3
    assert cfg["solver.scheme"] == "explicit"
    assert cfg.grid().dims == (16, 16, 16)
    assert cfg.exponents.p_bar == pytest.approx(2.5)


def test_inadmissible_exponent_names_clause_and_line():
    errs = errors_of(MINIMAL.replace("2.5, 2.5, 2.5", "2.0, 2.5, 2.5"))
    assert len(errs) == 1
    assert errs[0].startswith("line 2:") and "p_i > 2" in errs[0]


def test_unknown_key_names_line():
    errs = errors_of(MINIMAL + "solver.dtt = 0.1\n")
    assert errs == ["line 7: unknown key 'solver.dtt'"]


def test_all_errors_collected():
    text = MINIMAL + "solver.cfl_safety = abc\nrun.task = evolve\nverify.suites = mass, nope\nno equals sign\n"
    errs = errors_of(text)
    assert any(e.startswith("line 7:") and "cfl_safety" in e for e in errs)
    assert any(e.startswith("line 8:") and "duplicate" in e for e in errs)
    assert any("unknown suite 'nope'" in e for e in errs)
    assert any(e.startswith("line 10:") for e in errs)
    assert len(errs) == 4


def test_shape_and_task_checks():
    errs = errors_of(MINIMAL.replace("grid.dims = 16, 16, 16", "grid.dims = 16, 16"))
    assert any("differ in length" in e for e in errs)
    errs = errors_of(MINIMAL + "verify.suites = selfsim\n")
    assert any("needs run.task = barenblatt" in e for e in errs)
    errs = errors_of("run.task = evolve\n")
    assert any("exponents.p" in e for e in errs)
    errs = errors_of(MINIMAL.replace("2.5, 2.5, 2.5", "2.2, 2.5, 2.5").replace("indicator-box", "isotropic-barenblatt"))
    assert any("equal exponents" in e for e in errs)


def test_comments_and_probes():
    cfg = parse_config_text(MINIMAL + "# note\nverify.harnack_probes = 0 0 0 3; 0.1 0 0 4  # two points\n")
    assert cfg["verify.harnack_probes"] == [([0.0, 0.0, 0.0], 3.0), ([0.1, 0.0, 0.0], 4.0)]


def test_field_file_path_relative_to_config(tmp_path):
    (tmp_path / "u.apde").write_bytes(b"")
    f = tmp_path / "c.cfg"
    f.write_text(MINIMAL.replace("indicator-box", "field-file") + "initial.path = u.apde\n")
    assert parse_config(f)["initial.path"] == str(tmp_path / "u.apde")
    f.write_text(MINIMAL.replace("indicator-box", "field-file") + "initial.path = missing.apde\n")
    with pytest.raises(ConfigError, match="file not found"):
        parse_config(f)


@pytest.mark.parametrize("name", ["isotropic-oracle", "aniso-3d", "barenblatt-build", "harnack-sweep"])
def test_presets_are_valid(name):
    cfg = parse_config(resolve_config(name))
    assert cfg["run.name"] == name
    assert cfg.snapshot_times() == sorted(cfg.snapshot_times())
