import json

import pytest

from maskcl.cli import main


def write_config(tmp_path, name="cfg.json", **overrides):
    cfg = {
        "network": {"layers": [16, 24, 20], "headSize": 3},
        "train": {
            "epochs": 2, "batch": 10, "lr": 0.1, "c": 0.5, "delta": 0.2,
            "probeRate": 0.5, "seed": 3, "computeOne": False,
        },
        "sequence": {
            "kind": "dissimilar", "nTasks": 2, "dim": 16, "classes": 3,
            "samplesPerSplit": 80, "seed": 3,
        },
    }
    for section, values in overrides.items():
        cfg[section].update(values)
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return str(path)


class TestRunCommand:
    def test_run_writes_report_and_csvs(self, tmp_path):
        cfg = write_config(tmp_path)
        out = str(tmp_path / "report.json")
        code = main(["run", "--config", cfg, "--out", out, "--csv", str(tmp_path / "csv")])
        assert code == 0
        report = json.loads(open(out).read())
        assert report["schema"] == 1
        assert (tmp_path / "csv" / "acc_matrix.csv").exists()
        assert (tmp_path / "report.timing.json").exists()

    def test_run_twice_byte_identical(self, tmp_path):
        cfg = write_config(tmp_path)
        out1 = str(tmp_path / "a.json")
        out2 = str(tmp_path / "b.json")
        assert main(["run", "--config", cfg, "--out", out1]) == 0
        assert main(["run", "--config", cfg, "--out", out2]) == 0
        assert open(out1, "rb").read() == open(out2, "rb").read()

    def test_missing_config_exit_2(self, tmp_path, capsys):
        code = main(["run", "--config", str(tmp_path / "absent.json"),
                     "--out", str(tmp_path / "r.json")])
        assert code == 2

    def test_bad_schema_exit_2_names_field(self, tmp_path, capsys):
        path = tmp_path / "bad.json"
        path.write_text(json.dumps({
            "network": {"layers": [16, 24], "headSize": 3},
            "train": {"c": 2.0},
            "sequence": {"kind": "dissimilar", "nTasks": 1, "dim": 16, "classes": 3},
        }))
        code = main(["run", "--config", str(path), "--out", str(tmp_path / "r.json")])
        assert code == 2
        assert "train.c" in capsys.readouterr().err

    def test_invalid_json_exit_2(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text("{not json")
        assert main(["run", "--config", str(path), "--out", str(tmp_path / "r.json")]) == 2

    def test_runtime_failure_exit_1(self, tmp_path):
        # head too small for the classes: passes schema, fails at run time
        cfg = write_config(tmp_path, sequence={"classes": 5})
        assert main(["run", "--config", cfg, "--out", str(tmp_path / "r.json")]) == 1

    def test_kb_saved(self, tmp_path):
        cfg = write_config(tmp_path)
        kb_path = str(tmp_path / "run.kb")
        assert main(["run", "--config", cfg, "--out", str(tmp_path / "r.json"),
                     "--kb", kb_path]) == 0
        from maskcl.kbio import load_kb

        assert load_kb(kb_path).task_ids() == [1, 2]


class TestOneCommand:
    def test_writes_baselines(self, tmp_path):
        cfg = write_config(tmp_path)
        out = str(tmp_path / "one.json")
        assert main(["one", "--config", cfg, "--out", out]) == 0
        data = json.loads(open(out).read())
        assert [b["task"] for b in data["baselines"]] == [1, 2]


class TestVerifyBoundsCommand:
    def test_success(self, tmp_path, capsys):
        out = str(tmp_path / "vb.json")
        assert main(["verify-bounds", "--trials", "50", "--seed", "2", "--out", out]) == 0
        data = json.loads(open(out).read())
        assert data["violation_count"] == 0
        assert "0 violations" in capsys.readouterr().out


class TestStressCommand:
    def test_small(self, tmp_path):
        out = str(tmp_path / "stress.json")
        assert main(["stress", "--tasks", "3", "--out", out]) == 0
        data = json.loads(open(out).read())
        assert data["tasks"] == 3
