import json
from pathlib import Path

import pytest

from pathmon.cli import main
from pathmon.config import load_config
from pathmon.pipeline import MANIFEST, PipelineError, read_manifest, run_stage, sha256_file

ROOT = Path(__file__).resolve().parents[1]
DEMO = ROOT / "configs" / "demo_tables.yaml"


def small_config(tmp_path, **extra):
    p = tmp_path / "cfg.yaml"
    body = {"seed": 5, "out": "run", "synth": {"n_cases": 150}, "model": {"rf": {"n_trees": 5, "max_depth": 5}}, **extra}
    p.write_text(json.dumps(body))
    return p


def run_cli(args, capsys):
    code = main(args)
    out, err = capsys.readouterr()
    return code, out, err


def test_prefixes_before_log_names_log(tmp_path, capsys):
    code, _, err = run_cli(["prefixes", "--config", str(DEMO), "--out", str(tmp_path / "r")], capsys)
    assert code != 0
    line = json.loads(err.strip().splitlines()[-1])
    assert line["stage"] == "log" and "run stage 'log' first" in line["message"]


def test_synthetic_prefixes_before_synth(tmp_path, capsys):
    code, _, err = run_cli(["features", "--config", str(small_config(tmp_path))], capsys)
    assert code != 0 and json.loads(err)["stage"] == "synth"


def test_usage_error_is_machine_readable(capsys):
    with pytest.raises(SystemExit) as e:
        main(["bogus"])
    assert e.value.code != 0
    assert json.loads(capsys.readouterr().err.splitlines()[-1])["error"] == "UsageError"


def test_all_writes_artifacts_and_manifest(tmp_path, capsys):
    code, out, _ = run_cli(["all", "--config", str(small_config(tmp_path))], capsys)
    assert code == 0
    run = tmp_path / "run"
    manifest = read_manifest(run)
    assert [e["stage"] for e in manifest["runs"]] == ["synth", "prefixes", "features", "train", "evaluate"]
    produced = {n for e in manifest["runs"] for n in e["outputs"]}
    on_disk = {p.name for p in run.iterdir()} - {MANIFEST}
    assert produced == on_disk
    for e in manifest["runs"]:
        assert e["seed"] == 5 and e["config"]["synth"]["n_cases"] == 150
        for name, digest in {**e["inputs"], **e["outputs"]}.items():
            assert sha256_file(run / name) == digest
    # every prediction traces back to a prefix and a case in the log
    preds = (run / "predictions_logreg.csv").read_text().splitlines()[1:]
    prefix_ids = {l.split(",")[0] for l in (run / "prefixes.csv").read_text().splitlines()[1:]}
    assert {p.split(",")[0] for p in preds} <= prefix_ids


def test_rerun_features_byte_identical(tmp_path):
    cfg = load_config(small_config(tmp_path))
    run_stage("all", cfg)
    before = (cfg.out / "features.csv").read_bytes()
    run_stage("features", cfg)
    assert (cfg.out / "features.csv").read_bytes() == before
    assert read_manifest(cfg.out)["runs"][-1]["stage"] == "features"


def test_changed_config_refused_unless_forced(tmp_path):
    cfg = load_config(small_config(tmp_path))
    run_stage("all", cfg)
    changed = load_config(small_config(tmp_path), {"split.test_fraction": 0.3})
    with pytest.raises(PipelineError, match="different config"):
        run_stage("features", changed)
    # downstream stages now see stale inputs
    run_stage("features", changed, force=True)
    with pytest.raises(PipelineError, match="different config"):
        run_stage("train", load_config(small_config(tmp_path)))
    run_stage("train", changed, force=True)


def test_modified_input_refused(tmp_path):
    cfg = load_config(small_config(tmp_path))
    run_stage("all", cfg)
    with (cfg.out / "prefixes.csv").open("a") as fh:
        fh.write("x:1,x,1,0\n")
    with pytest.raises(PipelineError, match="changed since"):
        run_stage("features", cfg)


def test_second_model_kind(tmp_path, capsys):
    cfg_path = small_config(tmp_path)
    assert run_cli(["all", "--config", str(cfg_path)], capsys)[0] == 0
    assert run_cli(["train", "--config", str(cfg_path), "--model", "rf"], capsys)[0] == 0
    assert run_cli(["evaluate", "--config", str(cfg_path), "--model", "rf"], capsys)[0] == 0
    run = tmp_path / "run"
    assert (run / "metrics_rf.json").exists() and (run / "metrics_logreg.json").exists()
    m = json.loads((run / "model_rf.json").read_text())
    assert m["kind"] == "rf" and m["hyperparameters"]["n_trees"] == 5


def test_seed_flag_overrides(tmp_path, capsys):
    cfg_path = small_config(tmp_path)
    out = tmp_path / "other"
    assert run_cli(["synth", "--config", str(cfg_path), "--seed", "11", "--out", str(out)], capsys)[0] == 0
    entry = read_manifest(out)["runs"][0]
    assert entry["seed"] == 11 and entry["config"]["seed"] == 11


def test_wrong_stage_for_source(tmp_path):
    with pytest.raises(PipelineError, match="synthetic"):
        run_stage("lift", load_config(small_config(tmp_path)))
    with pytest.raises(PipelineError, match="source: synth"):
        run_stage("synth", load_config(DEMO, {"out": str(tmp_path / "d")}))


def test_demo_tables_end_to_end(tmp_path):
    cfg = load_config(DEMO, {"out": str(tmp_path / "demo")})
    entries = run_stage("all", cfg)
    assert [e["stage"] for e in entries] == ["lift", "log", "prefixes", "features", "train", "evaluate"]
    report = json.loads((cfg.out / "lift_report.json").read_text())
    assert report["counts"]["applied:triage_before_admission"] > 0
    assert report["counts"]["compressed:vitals"] > 0
    assert all(d["reason"] for d in report["dropped_events"])
    header = (cfg.out / "eventlog.csv").read_text().splitlines()[0]
    assert "_source" not in header and "case:age" in header
    # local admission clock times land in UTC
    first = (cfg.out / "eventlog.csv").read_text().splitlines()[2]
    assert first.startswith("P0001,Admission,2020-03-07T17:10:00Z")
