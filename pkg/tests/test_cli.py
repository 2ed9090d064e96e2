import csv
import json

import pytest

from nodulex.cli import main
from nodulex.seeding import STAGES, round_half_away, sub_seed


def rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_seeding_helpers():
    assert sub_seed(7, "split") == sub_seed(7, "split")
    assert len({sub_seed(7, s) for s in STAGES}) == len(STAGES)
    assert 0 <= sub_seed(123, "init") < 2**63
    assert [round_half_away(v) for v in (0.5, 1.5, -0.5, -2.5, 2.4)] == [1, 2, -1, -3, 2]


def test_unknown_subcommand_writes_nothing(tmp_path, monkeypatch, capsys):
    monkeypatch.chdir(tmp_path)
    assert main(["bogus", "--out", "x"]) == 1
    assert main(["phantom", "explode"]) == 1
    assert main([]) == 1
    assert "usage" in capsys.readouterr().err
    assert list(tmp_path.iterdir()) == []


def test_help_exits_zero(capsys):
    assert main(["--help"]) == 0
    assert "phantom" in capsys.readouterr().out


def test_bad_values_are_usage_errors(tmp_path):
    assert main(["eval", "run", "--in", str(tmp_path), "--out", str(tmp_path / "o"), "--models", "svm"]) == 1
    assert main(["eval", "run", "--in", str(tmp_path), "--out", str(tmp_path / "o"), "--design", "S9"]) == 1
    assert main(["eval", "run", "--in", str(tmp_path), "--out", str(tmp_path / "o"), "--balance", "maybe"]) == 1
    assert not (tmp_path / "o").exists()


def test_data_error_exit_code(tmp_path):
    (tmp_path / "bad.rawct").write_bytes(b"garbage")
    (tmp_path / "bad.xml").write_bytes(b"<annotations/>")
    assert main(["ingest", "check", "--in", str(tmp_path), "--out", str(tmp_path / "o")]) == 2
    assert main(["ingest", "check", "--in", str(tmp_path / "missing"), "--out", str(tmp_path / "o")]) == 2


def test_chain_and_manifest(tmp_path):
    d, c = tmp_path / "d", tmp_path / "c"
    assert main(["phantom", "gen", "--patients", "10", "--seed", "7", "--out", str(d)]) == 0
    assert main(["ingest", "check", "--in", str(d), "--out", str(tmp_path / "i")]) == 0
    assert main(["consensus", "build", "--in", str(d), "--out", str(c)]) == 0
    assert len(rows(c / "consensus.csv")) == 20
    assert {p.name for p in c.glob("cohort_*.csv")} == {"cohort_S1vS45.csv", "cohort_S12vS45.csv", "cohort_S0vS1_5.csv"}
    manifest = json.loads((c / "run_manifest.json").read_text())
    assert manifest["command"] == ["consensus", "build"] and manifest["seed"] == 0
    assert str(d) in manifest["inputs"]

    p = tmp_path / "p" / "s1.ndx1"
    assert main(["patches", "extract", "--in", str(d), "--cohort", str(c / "cohort_S1vS45.csv"), "--out", str(p)]) == 0
    q = tmp_path / "q" / "qif.csv"
    assert main(["qif", "extract", "--in", str(d), "--out", str(q)]) == 0
    assert len(rows(q)) == 40
    w = tmp_path / "w"
    assert main(["cnn", "train", "--patches", str(p), "--out", str(w), "--epochs", "2", "--seed", "1"]) == 0
    f = tmp_path / "f" / "cnn.csv"
    assert main(["cnn", "features", "--patches", str(p), "--weights", str(w / "final.ndxw"), "--out", str(f)]) == 0
    assert len(rows(f)[0]) == 202
    assert main(["fuse", "train-rf", "--cnn-features", str(f), "--qif", str(q), "--out",
                 str(tmp_path / "rf" / "m.ndxf"), "--trees", "10"]) == 0

    e = tmp_path / "e"
    args = ["eval", "run", "--in", str(d), "--design", "s1_vs_s45", "--models", "cnn21,cnn21+rf,lm",
            "--seed", "7", "--epochs", "2", "--trees", "20", "--out", str(e)]
    assert main(args) == 0
    metrics = rows(e / "metrics.csv")
    assert [r["model"] for r in metrics] == ["CNN21", "CNN21+RF", "LM"]
    assert (e / "roc_cnn21_rf.svg").exists()

    # replaying the manifest reproduces the metrics byte for byte
    replay = tmp_path / "replay"
    cfg = json.loads((e / "run_manifest.json").read_text())
    cfg["config"]["out"] = str(replay)
    (tmp_path / "m.json").write_text(json.dumps(cfg))
    assert main(["eval", "run", "--config", str(tmp_path / "m.json")]) == 0
    assert (replay / "metrics.csv").read_bytes() == (e / "metrics.csv").read_bytes()

    assert main(["report", "export", "--report", str(e / "report.json"), "--out", str(tmp_path / "r")]) == 0
    assert (tmp_path / "r" / "metrics.csv").read_bytes() == (e / "metrics.csv").read_bytes()

    red = tmp_path / "red"
    assert main(["eval", "reduced", "--in", str(d), "--models", "rf_no_size", "--modes", "one_plus_one_minus",
                 "--trials", "3", "--trees", "10", "--out", str(red)]) == 0
    summary = rows(red / "reduced.csv")
    assert summary[0]["n_features"] == "38" and summary[0]["trials"] == "3"


def test_config_defaults_and_overrides(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"patients": 2, "seed": 4, "out": str(tmp_path / "a")}))
    assert main(["phantom", "gen", "--config", str(cfg)]) == 0
    assert len(list((tmp_path / "a").glob("*.rawct"))) == 2
    assert main(["phantom", "gen", "--config", str(cfg), "--patients", "1", "--out", str(tmp_path / "b")]) == 0
    assert len(list((tmp_path / "b").glob("*.rawct"))) == 1
    cfg.write_text(json.dumps({"nonsense": 1}))
    assert main(["phantom", "gen", "--config", str(cfg), "--out", str(tmp_path / "c")]) == 1
