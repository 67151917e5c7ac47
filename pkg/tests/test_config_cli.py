import csv
import json
import subprocess
import sys
from pathlib import Path

import pytest

from nonstat_pm.cli import main
from nonstat_pm.config import ConfigError, _number, load, parse, validate

CONFIGS = Path(__file__).resolve().parents[1] / "configs"

SMALL_GRID = "[grid]\ntype = uniform\nsize = 256\n"

SELF_NORMING = """[experiment]
kind = self_norming
seed = 3
M = 2000
N = 2^5, 2^7

[schedule]
type = alternating
values = 0.05, 0.25
""" + SMALL_GRID

QDS_COV = """[experiment]
kind = qds_covariance
seed = 5
M = 3000
N = 16, 32
observable = lip_pair_2d

[schedule]
type = qds

[analysis]
n_quad = 4
K_max = 60
""" + SMALL_GRID

SMALL = {
    "stationary_clt": """[experiment]
kind = stationary_clt
M = 500
N = 16, 64
[schedule]
type = constant
value = 0.1
""" + SMALL_GRID,
    "sequential_clt": SELF_NORMING.replace("self_norming", "sequential_clt"),
    "self_norming": SELF_NORMING,
    "quenched": """[experiment]
kind = quenched
N = 8, 32
[schedule]
type = finite_markov
states = 0.05, 0.25
transition = 0.9, 0.1; 0.2, 0.8
[analysis]
n_omega = 3
i_burn = 10
rds_K_max = 5
""" + SMALL_GRID,
    "qds_covariance": QDS_COV,
    "qds_clt": QDS_COV.replace("qds_covariance", "qds_clt"),
    "rate_sweep": """[experiment]
kind = rate_sweep
N = 2^8, 2^10, 2^12
beta_star = 0.25
[analysis]
rates = thm21, cor23, prop25, quenched, rho, stein_rhs
""",
}


def write(tmp_path, text, name="c.ini"):
    p = tmp_path / name
    p.write_text(text)
    return p


def run(tmp_path, text, *extra, out="out"):
    cfg = write(tmp_path, text)
    code = main(["run", str(cfg), "--out-dir", str(tmp_path / out), *extra])
    return code, tmp_path / out


@pytest.mark.parametrize("path", sorted(CONFIGS.glob("*.ini")), ids=lambda p: p.stem)
def test_shipped_configs_validate(path):
    assert validate(path) == []


def test_number_syntax():
    assert _number("2^-12") == 2.0**-12
    assert _number("1/32") == 1 / 32
    assert _number(" 0.25 ") == 0.25


def test_beta_star_hypothesis_diagnostic():
    text = "[experiment]\nkind = stationary_clt\nM = 10\nN = 8\nbeta_star = 0.4\n[schedule]\ntype = constant\nvalue = 0.1\n"
    diags = validate(text)
    assert len(diags) == 1
    assert "line 5" in diags[0] and "beta_star < 1/3" in diags[0]


def test_non_monotone_N():
    text = "[experiment]\nkind = rate_sweep\nN = 64, 32\n"
    diags = validate(text)
    assert any("strictly increasing" in d and "line 3" in d for d in diags)


def test_unknown_keys_and_sections_still_run_semantics():
    text = "[experiment]\nkind = stationary_clt\nN = 64, 32\nbeta_star = 0.4\n[schedule]\ntype = constant\nvalue = 0.1\nvalu = 3\n[extra]\n"
    diags = validate(text)
    assert any("line 8" in d and "unknown key" in d for d in diags)
    assert any("unknown section" in d for d in diags)
    assert any("beta_star < 1/3" in d for d in diags)
    assert any("strictly increasing" in d for d in diags)
    assert any("'M'" in d for d in diags)


def test_inadmissible_schedule_value():
    text = "[experiment]\nkind = sequential_clt\nM = 10\nN = 8\n[schedule]\ntype = alternating\nvalues = 0.1, 0.31\n"
    diags = validate(text)
    assert any("inadmissible at index 1" in d for d in diags)


def test_schedule_type_must_match_kind():
    text = "[experiment]\nkind = quenched\nN = 8\n[schedule]\ntype = constant\nvalue = 0.1\n"
    assert any("iid_uniform or finite_markov" in d for d in validate(text))


def test_parse_errors_are_reported():
    assert validate("not an ini file")[0].startswith("syntax error")
    diags = validate("[experiment]\nkind = rate_sweep\nN = two\n")
    assert "cannot parse" in diags[0] and "line 3" in diags[0]
    assert any("missing required field 'kind'" in d for d in validate("[experiment]\nN = 8\n"))


def test_missing_M_exits_2(tmp_path, capsys):
    cfg = write(tmp_path, "[experiment]\nkind = self_norming\nN = 8, 16\n[schedule]\ntype = constant\nvalue = 0.1\n")
    assert main(["run", str(cfg)]) == 2
    err = capsys.readouterr().err
    assert "config error" in err and "'M'" in err
    assert main(["validate", str(cfg)]) == 2


def test_validate_ok(tmp_path, capsys):
    cfg = write(tmp_path, SELF_NORMING)
    assert main(["validate", str(cfg)]) == 0
    assert capsys.readouterr().out.strip() == "ok"
    with pytest.raises(ConfigError):
        load(write(tmp_path, "[experiment]\nkind = x\nN = 3\n", "bad.ini"))


def test_hash_ignores_output_and_threads():
    a, _ = parse(SELF_NORMING)
    b, _ = parse(SELF_NORMING + "[output]\ndir = elsewhere\n")
    c, _ = parse(SELF_NORMING.replace("seed = 3", "seed = 3\nthreads = 4"))
    d, _ = parse(SELF_NORMING.replace("seed = 3", "seed = 4"))
    assert a.hash == b.hash == c.hash != d.hash


def test_self_norming_run(tmp_path):
    code, out = run(tmp_path, SELF_NORMING)
    assert code == 0
    raw = (out / "results.csv").read_bytes()
    assert b"\r\n" in raw
    rows = list(csv.reader(raw.decode().splitlines()))
    assert rows[0] == ["config_hash", "N", "var_S", "w1_self_normed", "w1_stderr"]
    manifest = json.loads((out / "manifest.json").read_text())
    assert all(r[0] == manifest["config_hash"] for r in rows[1:])
    assert [int(r[1]) for r in rows[1:]] == [32, 128]
    assert all(float(r[3]) > 0 for r in rows[1:])
    assert set(manifest) >= {"config_hash", "kind", "config", "versions", "timestamp", "outputs"}
    assert manifest["timestamp"]["wall_time_s"] >= 0
    recs = json.loads((out / "results.json").read_text())
    assert len(recs) == 2 and set(recs[0]) == {"experiment_id", "params", "value", "std_error", "provenance"}


def test_rerun_is_bitwise_identical(tmp_path):
    _, a = run(tmp_path, SELF_NORMING, out="a")
    _, b = run(tmp_path, SELF_NORMING, "--threads", "2", out="b")
    for name in ("results.csv", "results.json"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    ma = json.loads((a / "manifest.json").read_text())
    mb = json.loads((b / "manifest.json").read_text())
    for m in (ma, mb):
        m.pop("timestamp")
        m.pop("overrides")
    assert ma == mb


def test_seed_override(tmp_path):
    _, a = run(tmp_path, SELF_NORMING, out="a")
    _, b = run(tmp_path, SELF_NORMING, "--seed", "99", out="b")
    assert (a / "results.csv").read_bytes() != (b / "results.csv").read_bytes()
    mb = json.loads((b / "manifest.json").read_text())
    assert mb["overrides"]["seed"] == 99 and mb["config"]["experiment"]["seed"] == 99


def test_threads_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("NONSTAT_PM_THREADS", "2")
    code, out = run(tmp_path, SELF_NORMING)
    assert code == 0
    assert json.loads((out / "manifest.json").read_text())["overrides"]["threads"] == 2


def test_qds_covariance_run(tmp_path):
    code, out = run(tmp_path, QDS_COV)
    assert code == 0
    rows = list(csv.reader((out / "results.csv").read_text().splitlines()))
    assert rows[0] == ["config_hash", "n", "t", "gap", "gap_stderr", "gap_transfer"]
    assert len(rows) == 3 and all(float(r[3]) >= 0 and float(r[5]) >= 0 for r in rows[1:])


@pytest.mark.parametrize("kind", sorted(SMALL))
def test_every_kind_runs(tmp_path, kind):
    code, out = run(tmp_path, SMALL[kind])
    assert code == 0
    rows = list(csv.reader((out / "results.csv").read_text().splitlines()))
    h = json.loads((out / "manifest.json").read_text())["config_hash"]
    assert rows[0][0] == "config_hash" and len(rows) > 1
    assert all(r[0] == h for r in rows[1:])
    json.loads((out / "results.json").read_text())


def test_console_entry_point(tmp_path):
    cfg = write(tmp_path, SMALL["rate_sweep"])
    proc = subprocess.run([sys.executable, "-m", "nonstat_pm.cli", "validate", str(cfg)], capture_output=True, text=True)
    assert proc.returncode == 0 and proc.stdout.strip() == "ok"
