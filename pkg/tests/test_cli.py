from __future__ import annotations

import csv
import json
import subprocess
import sys
from pathlib import Path

import pytest

from bns.cli import main, manifest_name
from bns.data import format_time
from bns.synth import EventEffect, save_scenario

from conftest import DAY, FIXTURES, small_params


def _synth_store(root: Path, name: str, params, effects) -> Path:
    save_scenario(root / f"{name}.json", params, effects)
    assert main(["synth", str(root / f"{name}.json"), "--out", str(root / name)]) == 0
    assert main(["ingest", str(root / name), "--store", str(root / f"{name}.store")]) == 0
    return root / f"{name}.store"


def _config(path: Path, events, **analysis) -> Path:
    path.write_text(json.dumps({"events": events, "analysis": analysis}))
    return path


@pytest.fixture(scope="module")
def rate_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("rate")
    p = small_params(seed=21, days=20)
    store = _synth_store(root, "rate", p, [EventEffect(p.at_day(13), duration_hours=48,
                                                        multipliers={"tx_rate": 3.0})])
    return root, p, store


@pytest.fixture(scope="module")
def fee_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("fee")
    p = small_params(seed=22, days=26, block_cap=0.3)
    store = _synth_store(root, "fee", p, [EventEffect(p.at_day(13), duration_hours=48,
                                                      multipliers={"fee_rate_median": 3.0})])
    return root, p, store


def test_ingest_fixture(tmp_path, capsys):
    chart = tmp_path / "mempool_count.csv"
    chart.write_text("timestamp,value\n" + "".join(f"{1478678400 + 60 * i},{i}\n" for i in range(30)))
    code = main(["ingest", str(FIXTURES / "three_blocks.ndjson"), str(chart),
                 "--store", str(tmp_path / "s")])
    assert code == 0
    assert (tmp_path / "s" / "tx_value.bin").is_file()
    assert (tmp_path / "s" / "mempool_count.bin").is_file()
    assert (tmp_path / "s" / manifest_name("ingest")).is_file()
    assert "6 transactions" in capsys.readouterr().out


def test_ingest_malformed_line(tmp_path, capsys):
    lines = (FIXTURES / "three_blocks.ndjson").read_text().splitlines()
    lines.insert(1, '{"height": 5}')
    bad = tmp_path / "bad.ndjson"
    bad.write_text("\n".join(lines) + "\n")
    assert main(["ingest", str(bad), "--store", str(tmp_path / "s")]) == 2
    assert "line 2" in capsys.readouterr().err
    assert not (tmp_path / "s").exists()


def test_ingest_empty_inputs(tmp_path, capsys):
    assert main(["ingest", "--store", str(tmp_path / "s")]) == 2
    assert "no input files" in capsys.readouterr().err
    empty = tmp_path / "e.ndjson"
    empty.write_text("")
    assert main(["ingest", str(empty), "--store", str(tmp_path / "s")]) == 2
    assert main(["ingest", str(tmp_path / "missing.ndjson"), "--store", str(tmp_path / "s")]) == 2


def test_bad_arguments_exit_2():
    assert main(["impact", "--feature-set"]) == 2
    assert main(["nonsense"]) == 2


def test_impact_classifies_injected_and_quiet(rate_run):
    root, p, store = rate_run
    cfg = _config(root / "impact.json", [
        {"name": "shock", "type": "F", "time": format_time(p.at_day(13)), "background_days": 12},
        {"name": "quiet", "type": "G", "time": format_time(p.at_day(5)), "background_days": 8},
    ], data_frame_hours=24)
    out = root / "impact_out"
    assert main(["impact", "--config", str(cfg), "--store", str(store), "--out", str(out)]) == 0
    shock = json.loads((out / "impact_shock_Overall.json").read_text())
    quiet = json.loads((out / "impact_quiet_Overall.json").read_text())
    assert shock["classification"] in ("substantial", "significant")
    assert abs(quiet["i_score"]) < 1.9
    assert shock["event"]["type"] == "Financial"
    rows = list(csv.DictReader((out / "impact_summary.csv").open()))
    assert [r["event"] for r in rows] == ["shock", "quiet"]
    manifest = json.loads((out / manifest_name("impact")).read_text())
    conv = manifest["resolved"]["conventions"]
    assert conv and set(manifest["outputs"]) >= {"impact_shock_Overall.json", "impact_summary.csv"}


def test_impact_missing_coverage_exit_3(rate_run, capsys):
    root, p, store = rate_run
    code = main(["impact", "--store", str(store), "--out", str(root / "x"),
                 "--time", str(p.at_day(2)), "--background-days", "12", "--data-frame-hours", "24"])
    assert code == 3
    assert "CoverageError" in capsys.readouterr().err


def test_invalid_config_exit_3(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"events": [{"name": "e", "type": "Z", "time": 0}]}))
    assert main(["impact", "--config", str(cfg)]) == 3
    cfg.write_text(json.dumps({"analysis": {"data_frame_hours": 5, "step_hours": 2},
                               "events": [{"name": "e", "type": "G", "time": 0}]}))
    assert main(["impact", "--config", str(cfg)]) == 3
    assert main(["impact", "--config", str(tmp_path / "none.json")]) == 2


def test_sweep_four_sets_and_fee_selectivity(fee_run):
    root, p, store = fee_run
    cfg = _config(root / "sweep.json", [
        {"name": "fee shock", "type": "F", "time": format_time(p.at_day(13)), "background_days": 24},
    ], data_frame_hours=24)
    out = root / "sweep_out"
    assert main(["sweep", "--config", str(cfg), "--store", str(store), "--out", str(out), "--svg"]) == 0
    for fs in ("Overall", "Activity", "Transaction", "Fee"):
        rows = list(csv.reader((out / f"sweep_fee_shock_{fs}.csv").open()))
        assert rows[0] == ["delay", "i_score"] and len(rows) == 122
        assert [float(r[0]) for r in rows[1:]] == [float(d) for d in range(0, 241, 2)]
    summary = json.loads((out / "sweep_fee_shock.json").read_text())
    sets = summary["feature_sets"]
    assert set(sets) == {"Overall", "Activity", "Transaction", "Fee"}
    assert sets["Fee"]["argmax"]["i_score"] > sets["Activity"]["argmax"]["i_score"]
    assert (out / "sweep_fee_shock.svg").read_text().startswith("<svg")


def test_scan_defaults_and_outputs(rate_run):
    root, p, store = rate_run
    out = root / "scan_out"
    assert main(["scan", "--store", str(store), "--out", str(out), "--data-frame-hours", "24",
                 "--step-hours", "2", "--svg"]) == 0
    doc = json.loads((out / "spikes.json").read_text())
    assert doc["threshold"] == 0.4 and doc["min_separation_hours"] == 48
    rows = list(csv.reader((out / "scan.csv").open()))
    assert rows[0] == ["timestamp", "distance"]
    assert int(rows[1][0]) == p.start + DAY
    assert int(rows[-1][0]) == p.end - DAY
    assert main(["scan", "--store", str(store), "--out", str(out), "--threshold", "1e9"]) == 0
    assert json.loads((out / "spikes.json").read_text())["spikes"] == []


def test_scan_two_injected_events(tmp_path):
    p = small_params(seed=23, days=30)
    effects = [EventEffect(p.at_day(d), duration_hours=48, multipliers={"tx_rate": 3.0}) for d in (9, 21)]
    store = _synth_store(tmp_path, "two", p, effects)
    out = tmp_path / "scan"
    assert main(["scan", "--store", str(store), "--out", str(out)]) == 0
    spikes = json.loads((out / "spikes.json").read_text())["spikes"]
    assert len(spikes) == 2


def test_export_vectors(rate_run):
    root, p, store = rate_run
    out = root / "export_out"
    assert main(["export", "--store", str(store), "--out", str(out), "--feature-set", "Fee",
                 "--feature-set", "Full", "--data-frame-hours", "24", "--step-hours", "6"]) == 0
    rows = list(csv.reader((out / "vectors_Full.csv").open()))
    assert len(rows[0]) == 2 + 99
    assert len(rows) - 1 == (20 * 24 - 24) // 6 + 1
    meta = json.loads((out / "vectors_Fee.json").read_text())
    assert len(meta["features"]) == 27 and meta["windows"] == len(rows) - 1


def test_synth_seed_flag_is_deterministic(tmp_path):
    p = small_params(seed=0, days=1)
    save_scenario(tmp_path / "s.json", p, [])
    for d in ("a", "b"):
        assert main(["synth", str(tmp_path / "s.json"), "--seed", "5", "--out", str(tmp_path / d)]) == 0
    for f in (tmp_path / "a").iterdir():
        if f.name != manifest_name("synth"):
            assert f.read_bytes() == (tmp_path / "b" / f.name).read_bytes()
    man = json.loads((tmp_path / "a" / manifest_name("synth")).read_text())
    assert man["resolved"]["params"]["seed"] == 5


def test_rerun_reproduces_every_command(rate_run, capsys):
    root, p, store = rate_run
    t = str(p.at_day(13))
    out = root / "rerun_out"
    assert main(["impact", "--store", str(store), "--out", str(out), "--time", t,
                 "--background-days", "12", "--data-frame-hours", "24"]) == 0
    assert main(["sweep", "--store", str(store), "--out", str(out), "--time", t,
                 "--background-days", "12", "--data-frame-hours", "24", "--max-delay-hours", "20"]) == 0
    assert main(["export", "--store", str(store), "--out", str(out), "--data-frame-hours", "24",
                 "--step-hours", "12"]) == 0
    for cmd in ("impact", "sweep", "export"):
        assert main(["rerun", str(out / manifest_name(cmd))]) == 0
    for cmd in ("synth", "ingest"):
        where = root / "rate" if cmd == "synth" else store
        assert main(["rerun", str(where / manifest_name(cmd))]) == 0
    doc = json.loads((out / manifest_name("impact")).read_text())
    first = sorted(doc["outputs"])[0]
    doc["outputs"][first] = "0" * 64
    (out / "tampered.json").write_text(json.dumps(doc))
    assert main(["rerun", str(out / "tampered.json")]) == 4


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "bns", "--version"], capture_output=True, text=True)
    assert res.returncode == 0 and res.stdout.startswith("bns ")
