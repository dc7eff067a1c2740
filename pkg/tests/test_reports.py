import json

import pytest

from maskcl.reports import RunReport, emit_report, report_to_dict, write_csvs


def make_report(t=3, fwt=0.05):
    rows = tuple(tuple(0.5 + 0.01 * i for i in range(k + 1)) for k in range(t))
    similarity = [
        {
            "task": 2,
            "per_prior": [
                {"prior_id": 1, "dis": 0.3, "dis_prime": 0.7,
                 "raw_dis": 0.123456789012345678, "raw_dis_prime": 0.9,
                 "similar": True}
            ],
            "sim_set": [1], "dis_set": [], "most_similar": 1,
            "normalized": False, "degenerate": False,
        }
    ]
    return RunReport(
        config={"train": {"seed": 1}},
        seed=1,
        accuracy_rows=rows,
        acc=0.51,
        fwt=fwt,
        bwt=0.0,
        one_baseline=[0.5] * t if fwt is not None else None,
        similarity=similarity,
        reuse=[{"task": i + 1, "fraction": 0.5} for i in range(t)],
        sdm=None,
        timing={"train_seconds": [0.1] * t, "detect_seconds": [0.0] * t,
                "one_baseline_seconds": None},
    )


class TestJson:
    def test_canonical_sorted_and_stable(self, tmp_path):
        report = make_report()
        p1, p2 = str(tmp_path / "a.json"), str(tmp_path / "b.json")
        emit_report(report, p1)
        emit_report(report, p2)
        assert open(p1, "rb").read() == open(p2, "rb").read()
        data = open(p1).read()
        assert json.loads(data)["schema"] == 1

    def test_timing_excluded_from_report(self, tmp_path):
        path = str(tmp_path / "r.json")
        emit_report(make_report(), path)
        assert "timing" not in json.loads(open(path).read())
        sidecar = json.loads(open(str(tmp_path / "r.timing.json")).read())
        assert sidecar["train_seconds"] == [0.1, 0.1, 0.1]

    def test_null_fwt_marker_present(self, tmp_path):
        report = make_report(t=1, fwt=None)
        path = str(tmp_path / "r.json")
        emit_report(report, path)
        data = json.loads(open(path).read())
        assert "fwt" in data["metrics"]
        assert data["metrics"]["fwt"] is None

    def test_dict_includes_timing_when_asked(self):
        d = report_to_dict(make_report(), include_timing=True)
        assert "timing" in d


class TestCsv:
    def test_matrix_row_count(self, tmp_path):
        write_csvs(make_report(t=4), str(tmp_path))
        lines = open(tmp_path / "acc_matrix.csv").read().strip().splitlines()
        assert len(lines) == 5  # header + one row per task

    def test_trajectory_files(self, tmp_path):
        write_csvs(make_report(t=3), str(tmp_path))
        traj = open(tmp_path / "ati_task1.csv").read().strip().splitlines()
        assert traj[0] == "t,accuracy"
        assert len(traj) == 4  # tasks 1..3

    def test_seventeen_significant_digits(self, tmp_path):
        write_csvs(make_report(), str(tmp_path))
        content = open(tmp_path / "similarity.csv").read()
        assert "0.12345678901234568" in content

    def test_reemission_identical(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        write_csvs(make_report(), str(a))
        write_csvs(make_report(), str(b))
        for name in ("acc_matrix.csv", "similarity.csv", "ati_task1.csv"):
            assert (a / name).read_bytes() == (b / name).read_bytes()
