import json
from pathlib import Path

import pytest

from thinflow import __version__
from thinflow.cli import config_hash, load_config, main

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def write(tmp_path, text, name="c.ini"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def test_regime_text_and_json(capsys, tmp_path):
    assert main(["regime", "--config", str(CONFIGS / "regime.ini")]) == 0
    assert capsys.readouterr().out.splitlines()[0] == "Brinkman, lambda=1"
    assert main(["regime", "--config", str(CONFIGS / "regime.ini"), "--json", "--out", str(tmp_path)]) == 0
    data = json.loads(capsys.readouterr().out)
    assert {"regime", "lambda", "a_sigma"} <= set(data)
    assert data["regime"] == "Brinkman" and data["lambda"] == 1.0
    assert json.loads((tmp_path / "regime.json").read_text())["header"].startswith(f"thinflow {__version__}")


def test_regime_invalid_flow_index(capsys, tmp_path):
    cfg = write(tmp_path, "[flow]\nr = 2.5\n[regime]\na_delta = 0.5\na_h = 0.5\n")
    assert main(["regime", "--config", cfg]) == 2
    assert "flow index" in capsys.readouterr().err


def test_missing_config_and_keys(tmp_path):
    assert main(["regime", "--config", str(tmp_path / "nope.ini")]) == 2
    assert main(["regime", "--config", write(tmp_path, "[flow]\nr = 1.5\n")]) == 2


def test_cell_table_resumable(tmp_path):
    cfg = write(tmp_path, "[flow]\nr = 1.5\n[cell]\nshape = disk:0.25\ndeltas = 0.5\nxis = 1,0; 0,0\nn = 16\n")
    out = tmp_path / "o"
    assert main(["cell", "--config", cfg, "--out", str(out), "--threads", "2"]) == 0
    lines = (out / "permeability.csv").read_text().splitlines()
    assert lines[0] == f"# thinflow {__version__} config-sha256={config_hash(load_config(cfg))}"
    assert lines[1] == "r,delta_or_R,xi_x,xi_y,out_x,out_y,energy,iters,residual"
    assert len(lines) == 4
    zero = lines[3].split(",")
    assert float(zero[4]) == 0.0 and float(zero[6]) == 0.0
    first = (out / "permeability.csv").read_bytes()
    assert main(["cell", "--config", cfg, "--out", str(out), "--json"]) == 0
    assert (out / "permeability.csv").read_bytes() == first


def test_cell_failure_rows_are_flagged(tmp_path):
    cfg = write(tmp_path, "[flow]\nr = 1.5\n[cell]\nshape = disk:0.25\ndeltas = 0.5\nxis = 1,0\nn = 16\n"
                          "[solver]\npicard_max = 1\nkappa0 = 1e-6\nkappa_min = 1e-7\nkappa_steps = 2\n")
    out = tmp_path / "o"
    assert main(["cell", "--config", cfg, "--out", str(out)]) == 3
    row = (out / "permeability.csv").read_text().splitlines()[2].split(",")
    assert row[4] == "nan"


def test_cell_rejects_underresolved_before_solving(tmp_path):
    cfg = write(tmp_path, "[flow]\nr = 1.5\n[cell]\ndeltas = 0.5, 0.05\nxis = 1,0\nn = 16\n")
    assert main(["cell", "--config", cfg, "--out", str(tmp_path / "o")]) == 2
    assert not (tmp_path / "o" / "permeability.csv").exists()


def test_drag_json(tmp_path, capsys):
    cfg = write(tmp_path, "[flow]\nr = 1.5\n[exterior]\nshape = disk:0.25\nR = 4\nn = 64\n")
    assert main(["drag", "--config", cfg, "--out", str(tmp_path), "--json"]) == 0
    data = json.loads((tmp_path / "drag.json").read_text())
    assert {"g_r", "R", "n", "history", "header"} <= set(data)
    assert data["g_r"] > 0 and data["R"] == 4.0 and data["n"] == 64


@pytest.mark.parametrize("name", ["macro_gradient.ini", "macro_brinkman.ini", "macro_reynolds.ini"])
def test_shipped_macro_configs(tmp_path, name):
    assert main(["macro", "--config", str(CONFIGS / name), "--out", str(tmp_path)]) == 0
    model = load_config(CONFIGS / name)["macro"]["model"]
    csv = (tmp_path / f"macro_{model}.csv").read_text().splitlines()
    assert csv[0].startswith("# thinflow") and csv[1] == "i,j,x,y,p,Uav_x,Uav_y"
    summary = json.loads((tmp_path / f"macro_{model}.json").read_text())
    assert summary["regime"] == model
    if model == "brinkman":
        assert (tmp_path / "macro_brinkman_profiles.csv").exists()
    if name == "macro_gradient.ini":
        assert max(abs(float(line.split(",")[5])) for line in csv[2:]) < 1e-8


def test_macro_bad_expression(tmp_path):
    cfg = write(tmp_path, "[flow]\nr = 1.5\n[macro]\nmodel = reynolds\nnx = 8\nny = 8\nforcing = field\n"
                          "fx = __import__('os')\nfy = 0*x\n")
    assert main(["macro", "--config", cfg, "--out", str(tmp_path)]) == 2


def test_verify_quick_suite(tmp_path, capsys):
    cfg = write(tmp_path, "[verify]\nchecks = reynolds_exact, poiseuille_average, linear_oracle\n")
    assert main(["verify", "--config", cfg, "--out", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    assert out.count("[PASS]") == 3
    report = json.loads((tmp_path / "verify.json").read_text())
    assert report["passed"] and all("measured" in c and "tolerance" in c for c in report["checks"])


def test_verify_unknown_check(tmp_path):
    cfg = write(tmp_path, "[verify]\nchecks = nope\n")
    assert main(["verify", "--config", cfg]) == 2
