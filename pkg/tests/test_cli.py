import json
from datetime import date
from pathlib import Path

import pytest

from evcoord import cli
from evcoord.config import FleetConfig
from evcoord.evaluation import EvalReport
from evcoord.sessions import write_episodes
from oracles import make_day

FIXTURE = Path(__file__).parent / "fixtures" / "three_sessions.csv"
TINY = ["--n-max", "3", "--h-max-hours", "4", "--slot-hours", "1"]
SMALL = ["--n-max", "3", "--slot-hours", "6", "--seed", "2"]


def tree(root: Path) -> dict:
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def tiny_episodes(tmp_path) -> Path:
    cfg = FleetConfig(n_max=3, h_max_hours=4, slot_hours=1)
    day = make_day([(1, 4, 2), (1, 2, 1), (2, 3, 1), (3, 1, 1)], cfg, date(2015, 3, 2))
    p = tmp_path / "tiny.jsonl"
    write_episodes(p, [day])
    return p


def test_synth_is_reproducible(tmp_path):
    for name in ("a", "b"):
        assert cli.main(["synth", "--out", str(tmp_path / name), "--days", "30", "--seed", "7"]) == 0
    a, b = tree(tmp_path / "a"), tree(tmp_path / "b")
    assert a == b and set(a) == {"episodes.jsonl", "synth.manifest.json"}
    manifest = json.loads(a["synth.manifest.json"])
    assert manifest["seed"] == 7 and len(manifest["config_hash"]) == 64
    cli.main(["synth", "--out", str(tmp_path / "c"), "--days", "30", "--seed", "8"])
    assert tree(tmp_path / "c")["episodes.jsonl"] != a["episodes.jsonl"]


def test_train_eval_on_dp_fixture(tmp_path):
    eps = tiny_episodes(tmp_path)
    out = tmp_path / "run"
    base = ["--out", str(out)] + TINY
    assert cli.main(["collect", "--episodes", str(eps), "--exhaustive"] + base) == 0
    assert cli.main(["train", "--experience", str(out / "experience.jsonl"), "--regressor", "exact"] + base) == 0
    assert cli.main(["eval", "--policy", str(out / "policy.json"), "--episodes", str(eps)] + base) == 0
    rep = EvalReport.read(out / "report.json")
    assert abs(rep.c_rl - 1.0) <= 1e-9
    assert rep.c_bau > 1.0
    assert (out / "report.csv").read_text().startswith("c_bau,")
    for cmd in ("collect", "train", "eval"):
        assert (out / f"{cmd}.manifest.json").is_file()


def test_eval_without_policy(tmp_path, capsys):
    eps = tiny_episodes(tmp_path)
    out = tmp_path / "run"
    assert cli.main(["eval", "--out", str(out), "--episodes", str(eps)]) == 2
    assert "policy file" in capsys.readouterr().err
    assert cli.main(["eval", "--out", str(out), "--episodes", str(eps), "--policy", "nope.json"]) == 2
    assert "nope.json" in capsys.readouterr().err
    assert not out.exists()


def test_usage_errors(tmp_path, capsys):
    assert cli.main(["synth", "--out", str(tmp_path), "--days", "2", "--bogus"]) == 2
    assert cli.main(["frobnicate"]) == 2
    assert cli.main(["oracle", "--out", str(tmp_path / "o"), "--episodes", "missing.jsonl"]) == 2
    assert "missing.jsonl" in capsys.readouterr().err
    # inconsistent fleet settings are a usage error too
    assert cli.main(["synth", "--out", str(tmp_path / "s"), "--days", "2", "--slot-hours", "5"]) == 2
    assert cli.main(["synth", "--out", str(tmp_path / "s"), "--days", "2", "--regressor", "forest"]) == 2
    assert cli.main(["synth", "--out", str(tmp_path / "s"), "--days", "2", "--optimizer", "rmsprop"]) == 2
    assert not (tmp_path / "s").exists()


def test_config_file_and_overrides(tmp_path):
    ini = tmp_path / "run.ini"
    ini.write_text("[fleet]\nn_max = 4\nslot_hours = 4\n\n[run]\nseed = 5\n")
    out = tmp_path / "r"
    assert cli.main(["synth", "--out", str(out), "--days", "2", "--config", str(ini), "--seed", "6"]) == 0
    m = json.loads((out / "synth.manifest.json").read_text())
    assert m["settings"]["fleet.n_max"] == 4
    assert m["settings"]["fleet.slot_hours"] == 4.0
    assert m["seed"] == 6
    bad = tmp_path / "bad.ini"
    bad.write_text("[fleet]\ncolour = blue\n")
    commented = tmp_path / "commented.ini"
    commented.write_text("[train]\nregressor = exact   ; or mlp\n")
    assert cli.main(["synth", "--out", str(tmp_path / "y"), "--days", "1", "--config", str(commented)]) == 0
    assert cli.main(["synth", "--out", str(tmp_path / "x"), "--days", "2", "--config", str(bad)]) == 2
    assert cli.main(["synth", "--out", str(tmp_path / "x"), "--days", "2", "--config", "nope.ini"]) == 2


def test_partial_outputs_removed(tmp_path, monkeypatch):
    eps = tiny_episodes(tmp_path)
    out = tmp_path / "run"
    base = ["--out", str(out)] + TINY
    cli.main(["collect", "--episodes", str(eps), "--exhaustive"] + base)
    cli.main(["train", "--experience", str(out / "experience.jsonl"), "--regressor", "exact"] + base)

    def boom(_):
        raise RuntimeError("disk full")

    monkeypatch.setattr(cli, "reports_to_csv", boom)
    assert cli.main(["eval", "--policy", str(out / "policy.json"), "--episodes", str(eps)] + base) == 1
    assert not (out / "report.json").exists()
    assert not (out / "eval.manifest.json").exists()
    # outputs of earlier runs are untouched
    assert (out / "policy.json").exists()


def test_ingest(tmp_path):
    out = tmp_path / "ing"
    assert cli.main(["ingest", "--out", str(out), "--csv", str(FIXTURE), "--stations", "2"]) == 0
    summary = json.loads((out / "ingest_summary.json").read_text())
    assert summary["loaded"] == 3 and summary["episodes"] == 1
    lines = (out / "episodes.jsonl").read_text().splitlines()
    assert len(lines) == 2 and len(json.loads(lines[1])["sessions"]) == 2


def test_bad_csv_is_runtime_failure(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("station_id,arrival,departure,energy_kwh,charge_rate_kw\nA,x,y,1,1\n")
    assert cli.main(["ingest", "--out", str(tmp_path / "o"), "--csv", str(bad)]) == 1
    assert not (tmp_path / "o").exists()


def test_oracle(tmp_path):
    eps = tiny_episodes(tmp_path)
    out = tmp_path / "o"
    assert cli.main(["oracle", "--out", str(out), "--episodes", str(eps), "--dp"] + TINY) == 0
    header, row = (out / "oracle.csv").read_text().splitlines()
    assert header == "date,sessions,bau_cost,opt_cost,dp_cost"
    _, n, bau, opt, dp = row.split(",")
    assert n == "4" and float(opt) == float(dp) <= float(bau)


@pytest.fixture
def synth_run(tmp_path):
    out = tmp_path / "data"
    assert cli.main(["synth", "--out", str(out), "--days", "24"] + SMALL) == 0
    return out / "episodes.jsonl"


def test_sweeps(tmp_path, synth_run):
    fast = SMALL + ["--regressor", "exact"]
    out = tmp_path / "sw"
    args = ["--episodes", str(synth_run), "--out", str(out)] + fast
    assert (
        cli.main(
            ["sweep", "training", "--test-start", "2015-01-19", "--test-end", "2015-01-24",
             "--spans", "1", "2", "--samples", "5", "--runs", "2", "--window-days", "4"] + args
        )
        == 0
    )
    grid = json.loads((out / "sweep.json").read_text())
    assert len(grid["cells"]) == 4 and len(json.loads((out / "bands.json").read_text())) == 2

    out2 = tmp_path / "mo"
    args2 = ["--episodes", str(synth_run), "--out", str(out2)] + fast
    assert cli.main(["sweep", "monthly", "--window-days", "6", "--samples", "5"] + args2) == 0
    assert len(json.loads((out2 / "reports.json").read_text())) == 4

    cli.main(["collect", "--episodes", str(synth_run), "--out", str(out2), "--trajectories", "5"] + fast)
    cli.main(["train", "--experience", str(out2 / "experience.jsonl"), "--out", str(out2)] + fast)
    out3 = tmp_path / "sc"
    args3 = ["--episodes", str(synth_run), "--out", str(out3), "--policy", str(out2 / "policy.json")] + fast
    assert cli.main(["sweep", "scale", "--scales", "1", "2"] + args3) == 0
    reports = json.loads((out3 / "reports.json").read_text())
    assert [r["extra"]["scale"] for r in reports] == [1, 2]
    assert cli.main(["sweep", "training", "--out", str(tmp_path / "z"), "--episodes", str(synth_run)]) == 2


def test_identical_manifests_identical_reports(tmp_path, synth_run):
    outs = []
    for name in ("r1", "r2"):
        out = tmp_path / name
        base = ["--out", str(out)] + SMALL + ["--epochs", "2", "--trajectories", "10"]
        assert cli.main(["collect", "--episodes", str(synth_run)] + base) == 0
        assert cli.main(["train", "--experience", str(out / "experience.jsonl")] + base) == 0
        assert cli.main(["eval", "--policy", str(out / "policy.json"), "--episodes", str(synth_run)] + base) == 0
        outs.append(out)
    a, b = tree(outs[0]), tree(outs[1])
    assert a["eval.manifest.json"] == b["eval.manifest.json"]
    assert a["report.json"] == b["report.json"]
    assert a["policy.json.weights"] == b["policy.json.weights"]
