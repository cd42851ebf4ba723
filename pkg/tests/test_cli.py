"""End-to-end CLI tests: config parsing, exit codes, file outputs."""

import json
import math

import numpy as np
import pytest

from hjlab.cli import main

CONST_V0 = """
[env]
kind = constant
seed = 0
window = -40 40
dx_env = 0.1
v0 = 0.0

[model]
beta = 1.0

[theta-curve]
lams = 1.0 2.0 4.0
branch = 2
"""

PERIODIC = """
[env]
kind = periodic
seed = 5
window = -145 145
dx_env = 0.01
phase = 0.25

[model]
beta = 1.0

[theta-curve]
lams = 1.5 2.0 3.0
branch = 2
x = 60
"""

HOMOG_IID = """
[env]
kind = iid-interp
seed = 11
window = -960 960
dx_env = 0.01

[hamiltonian]
family = power
gamma = 2.0
growth_gamma = 2.0
growth_c1 = 0.9
growth_c2 = 1.1

[model]
beta = 1.0

[homogenize]
theta = 0.0
epsilons = 0.25 0.125
dx = 0.05
m = 1.0
"""

PROBE_GLUED = """
[env]
kind = constant
seed = 0
window = 0 30
dx_env = 0.1
v0 = 1.0

[model]
beta = 1.0

[probe]
profile = glued
delta = 0.25
order = 21
region = 0 30
hill_h = 0.9
hill_c = 5.0
kind = both
"""


def _write(tmp_path, text, name="run.ini"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


def _rows(path):
    lines = path.read_text().strip().split("\n")
    return lines[0].split(","), [ln.split(",") for ln in lines[1:]]


def test_theta_curve_constant_closed_form(tmp_path):
    cfg = _write(tmp_path, CONST_V0)
    assert main(["theta-curve", "--config", cfg, "--out", str(tmp_path)]) == 0
    header, rows = _rows(tmp_path / "theta_curve.csv")
    assert header == ["lam", "theta", "ci", "flagged"]
    for (lam, theta, ci, flagged) in rows:
        assert abs(float(theta) - math.sqrt(float(lam))) <= 1e-12
        assert float(ci) == 0.0 and flagged == "False"


def test_gen_env_deterministic_and_sidecar(tmp_path):
    cfg = _write(tmp_path, CONST_V0)
    d1, d2 = tmp_path / "r1", tmp_path / "r2"
    assert main(["gen-env", "--config", cfg, "--out", str(d1)]) == 0
    assert main(["gen-env", "--config", cfg, "--out", str(d2)]) == 0
    assert (d1 / "env.csv").read_bytes() == (d2 / "env.csv").read_bytes()
    meta = json.loads((d1 / "env.meta.json").read_text())
    assert meta["command"] == "gen-env"
    assert meta["config"]["env"]["kind"] == "constant"
    assert meta["wall_time_s"] >= 0.0
    assert meta["outputs"] == ["env.csv"]
    assert "numpy" in meta["versions"]


def test_seed_override_changes_data(tmp_path):
    iid = CONST_V0.replace("kind = constant", "kind = iid-interp")
    cfg = _write(tmp_path, iid)
    d1, d2 = tmp_path / "a", tmp_path / "b"
    assert main(["gen-env", "--config", cfg, "--out", str(d1)]) == 0
    assert main(["gen-env", "--config", cfg, "--out", str(d2),
                 "--seed-override", "8"]) == 0
    assert (d1 / "env.csv").read_bytes() != (d2 / "env.csv").read_bytes()
    meta = json.loads((d2 / "env.meta.json").read_text())
    assert meta["flags"]["seed_override"] == 8


def test_missing_seed_is_config_error(tmp_path):
    cfg = _write(tmp_path, CONST_V0.replace("seed = 0\n", ""))
    assert main(["gen-env", "--config", cfg, "--out", str(tmp_path)]) == 2


def test_unknown_kind_is_config_error(tmp_path):
    cfg = _write(tmp_path, CONST_V0.replace("constant", "quenched"))
    assert main(["gen-env", "--config", cfg, "--out", str(tmp_path)]) == 2


def test_missing_config_file_is_config_error(tmp_path):
    assert main(["gen-env", "--config", str(tmp_path / "nope.ini"),
                 "--out", str(tmp_path)]) == 2


def test_lam_below_beta_is_config_error(tmp_path):
    cfg = _write(tmp_path, CONST_V0.replace("lams = 1.0 2.0 4.0",
                                            "lams = 0.5 2.0"))
    assert main(["theta-curve", "--config", cfg, "--out", str(tmp_path)]) == 2


def test_theta_curve_parallel_matches_sequential(tmp_path):
    cfg = _write(tmp_path, PERIODIC)
    d1, d2 = tmp_path / "seq", tmp_path / "par"
    assert main(["theta-curve", "--config", cfg, "--out", str(d1)]) == 0
    assert main(["theta-curve", "--config", cfg, "--out", str(d2),
                 "--workers", "3"]) == 0
    assert (d1 / "theta_curve.csv").read_bytes() == \
        (d2 / "theta_curve.csv").read_bytes()


def test_effective_constant_closed_form(tmp_path):
    text = CONST_V0.replace("v0 = 0.0", "v0 = 1.0") + \
        "\n[effective]\ntheta_grid = -1.5 1.5\n"
    cfg = _write(tmp_path, text)
    assert main(["effective", "--config", cfg, "--out", str(tmp_path)]) == 0
    header, rows = _rows(tmp_path / "effective.csv")
    assert header == ["theta", "H", "H_lo", "H_hi", "branch"]
    by_theta = {float(r[0]): r for r in rows}
    # H = G(theta) + beta v0 exactly on constant media
    assert float(by_theta[-1.5][1]) == pytest.approx(3.25, abs=1e-12)
    assert float(by_theta[1.5][1]) == pytest.approx(3.25, abs=1e-12)


def test_homogenize_flat_reference_is_beta(tmp_path):
    cfg = _write(tmp_path, HOMOG_IID)
    assert main(["homogenize", "--config", cfg, "--out", str(tmp_path)]) == 0
    header, rows = _rows(tmp_path / "sweep.csv")
    assert header == ["theta", "epsilon", "value", "reference",
                      "domain_sensitivity"]
    eps = [float(r[1]) for r in rows]
    assert eps == [0.25, 0.125]
    for r in rows:
        assert float(r[3]) == 1.0  # theta = 0 sits in the flat piece
        assert 0.0 < float(r[2]) < 2.0


def test_homogenize_requires_growth_certificate(tmp_path):
    text = "\n".join(ln for ln in HOMOG_IID.splitlines()
                     if not ln.startswith("growth_"))
    cfg = _write(tmp_path, text)
    assert main(["homogenize", "--config", cfg, "--out", str(tmp_path)]) == 2


def test_homogenize_bad_growth_certificate_fails_scientifically(tmp_path):
    # c2 = 0.05 cannot bound p^2 above on [-10, 10]
    cfg = _write(tmp_path, HOMOG_IID.replace("growth_c2 = 1.1",
                                             "growth_c2 = 0.05"))
    assert main(["homogenize", "--config", cfg, "--out", str(tmp_path)]) == 1


def test_corrector_window_error_is_scientific_failure(tmp_path):
    # burn-in ~6.5 pushes the start below the window floor at 0
    text = PROBE_GLUED + "\n[corrector]\nlam = 2.0\nbranch = 2\n" \
        "region = 5 10\ntol = 1e-6\ndx = 0.01\n"
    cfg = _write(tmp_path, text)
    assert main(["corrector", "--config", cfg, "--out", str(tmp_path)]) == 1


def test_hill_check_periodic_reports_none(tmp_path):
    text = PERIODIC + "\n[hill-check]\nh = 0.9\nc = 1.0\ndoublings = 2\n"
    cfg = _write(tmp_path, text)
    assert main(["hill-check", "--config", cfg, "--out", str(tmp_path)]) == 0
    header, rows = _rows(tmp_path / "hill_report.csv")
    assert header == ["h", "C", "window_half", "found", "L1", "L2",
                      "scaled_length", "v_min"]
    assert rows[0][3] == "False"
    assert float(rows[0][2]) == 580.0  # doubled twice from 145


def test_hill_check_iid_finds_witness(tmp_path):
    text = """
[env]
kind = iid-interp
seed = 1
window = -30 30
dx_env = 0.01

[model]
beta = 1.0

[hill-check]
h = 0.5
c = 2.0
"""
    cfg = _write(tmp_path, text)
    assert main(["hill-check", "--config", cfg, "--out", str(tmp_path)]) == 0
    _, rows = _rows(tmp_path / "hill_report.csv")
    h, C, half, found, L1, L2, slen, vmin = rows[0]
    assert found == "True"
    assert float(slen) >= 2.0
    assert float(vmin) >= 0.5
    assert -30.0 <= float(L1) <= float(L2) <= 30.0


def test_hill_check_singular_mode(tmp_path):
    text = """
[env]
kind = coupled-singular
seed = 1
window = -60 60
dx_env = 0.01

[model]
beta = 1.0

[hill-check]
mode = singular
cs = 0.2 0.1 0.05
"""
    cfg = _write(tmp_path, text)
    assert main(["hill-check", "--config", cfg, "--out", str(tmp_path)]) == 0
    _, rows = _rows(tmp_path / "hill_report.csv")
    assert [r[0] for r in rows] == ["0.2", "0.1", "0.05"]
    for r in rows:
        assert r[1] == "True" and -60.0 <= float(r[2]) <= 60.0


def test_probe_glued_both_kinds(tmp_path):
    cfg = _write(tmp_path, PROBE_GLUED)
    assert main(["probe", "--config", cfg, "--out", str(tmp_path)]) == 0
    header, rows = _rows(tmp_path / "probe.csv")
    assert header == ["kind", "min_residual", "max_residual", "pass"]
    assert [r[0] for r in rows] == ["sub", "super"]
    assert all(r[3] == "True" for r in rows)
    assert float(rows[0][1]) > 0.0     # sub margin strictly positive
    assert float(rows[1][2]) < 0.0     # super margin strictly negative


def test_probe_corrector_single_kind(tmp_path):
    text = """
[env]
kind = constant
seed = 0
window = -30 30
dx_env = 0.1
a0 = 1.0
v0 = 0.5

[model]
beta = 1.0

[probe]
profile = corrector
lam = 2.0
branch = 2
region = -15 15
delta = 0.1
kind = sub
"""
    cfg = _write(tmp_path, text)
    assert main(["probe", "--config", cfg, "--out", str(tmp_path)]) == 0
    _, rows = _rows(tmp_path / "probe.csv")
    assert len(rows) == 1 and rows[0][0] == "sub" and rows[0][3] == "True"


def test_usage_error_exit_code():
    assert main(["no-such-command"]) == 2
    assert main(["theta-curve"]) == 2  # --config is required
