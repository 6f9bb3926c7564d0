import csv
import json

import pytest

from ddbh.cli import main


def test_unknown_subcommand_exits_nonzero(capsys):
    assert main(["frobnicate"]) == 2


def test_bad_config_is_reported(tmp_path):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("N = -3\n")
    assert main(["evolve", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 1


def test_single_site(tmp_path):
    assert main(["single-site", "--out", str(tmp_path)]) == 0
    data = json.loads((tmp_path / "single_site.json").read_text())
    assert len(data["dnls"]) == 3
    assert (tmp_path / "run.json").exists()


def test_evolve_soe_and_correlator(tmp_path):
    run = tmp_path / "run"
    assert main(["evolve", "--tier", "soe", "--n", "5", "--j", "0.4", "--t-end", "5", "--out", str(run)]) == 0
    rows = list(csv.reader((run / "trajectory.csv").open()))
    assert rows[0] == ["t", "site", "re_a", "im_a", "n"]
    corr = tmp_path / "corr"
    assert main(["correlator", "--state", str(run / "snapshot.json"), "--out", str(corr)]) == 0
    assert (corr / "correlator.csv").exists()
    meta = json.loads((corr / "correlator.json").read_text())
    assert meta["include_offset"] is False


def test_config_precedence(tmp_path):
    cfg = tmp_path / "m.cfg"
    cfg.write_text("N = 4\nJ = 0.3\n")
    out = tmp_path / "o"
    assert main(["evolve", "--tier", "dnls", "--config", str(cfg), "--j", "0.5", "--t-end", "2", "--out", str(out)]) == 0
    meta = json.loads((out / "run.json").read_text())
    assert meta["params"]["n_sites"] == 4
    assert meta["params"]["j"] == 0.5


def test_scan_j_writes_phases(tmp_path):
    args = ["scan-j", "--tier", "dnls", "--n", "6", "--j", "0,0.5", "--t-end", "20", "--no-refine", "--out", str(tmp_path)]
    assert main(args) == 0
    rows = list(csv.reader((tmp_path / "phases.csv").open()))
    assert len(rows) == 3
    assert (tmp_path / "heatmap_j.csv").exists()


@pytest.mark.parametrize("cmd", [["rectangle-check"], ["scan-ua", "--u", "-0.5", "--a", "3", "--grid", "5"]])
def test_small_commands(tmp_path, cmd):
    assert main(cmd + ["--out", str(tmp_path)]) == 0
    assert (tmp_path / "run.json").exists()
