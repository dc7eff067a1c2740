"""Run reports: canonical JSON plus optional CSV views.

report.json is byte-identical across reruns of the same config/seed, so the
volatile wall-clock block is written to a separate `<name>.timing.json`
sidecar instead of the canonical file.
"""
from __future__ import annotations

import os
from dataclasses import dataclass

from .kbio import canonical_json

SCHEMA_VERSION = 1


@dataclass
class RunReport:
    config: dict
    seed: int
    accuracy_rows: tuple
    acc: float
    fwt: float | None
    bwt: float | None
    one_baseline: list | None
    similarity: list  # one entry per task with a verdict
    reuse: list  # (task, fraction) in sequence order
    sdm: dict | None  # precision/recall vs ground truth, when known
    timing: dict


def report_to_dict(report: RunReport, include_timing: bool = False) -> dict:
    d = {
        "schema": SCHEMA_VERSION,
        "config": report.config,
        "seed": report.seed,
        "accuracy_matrix": [list(row) for row in report.accuracy_rows],
        "metrics": {"acc": report.acc, "fwt": report.fwt, "bwt": report.bwt},
        "one_baseline": report.one_baseline,
        "similarity": report.similarity,
        "reuse": report.reuse,
        "sdm": report.sdm,
    }
    if include_timing:
        d["timing"] = report.timing
    return d


def _fmt(x: float) -> str:
    return f"{x:.17g}"


def emit_report(report: RunReport, json_path: str, csv_dir: str | None = None) -> None:
    """Write canonical report JSON, the timing sidecar, and optional CSVs."""
    payload = canonical_json(report_to_dict(report)) + "\n"
    with open(json_path, "w") as f:
        f.write(payload)
    stem, _ = os.path.splitext(json_path)
    with open(stem + ".timing.json", "w") as f:
        f.write(canonical_json(report.timing) + "\n")
    if csv_dir is not None:
        write_csvs(report, csv_dir)


def write_csvs(report: RunReport, csv_dir: str) -> None:
    os.makedirs(csv_dir, exist_ok=True)
    rows = report.accuracy_rows
    t_total = len(rows)

    with open(os.path.join(csv_dir, "acc_matrix.csv"), "w") as f:
        f.write("t," + ",".join(f"task{i}" for i in range(1, t_total + 1)) + "\n")
        for t, row in enumerate(rows, start=1):
            cells = [_fmt(a) for a in row] + [""] * (t_total - t)
            f.write(f"{t}," + ",".join(cells) + "\n")

    for i in range(1, t_total + 1):
        with open(os.path.join(csv_dir, f"ati_task{i}.csv"), "w") as f:
            f.write("t,accuracy\n")
            for t in range(i, t_total + 1):
                f.write(f"{t},{_fmt(rows[t - 1][i - 1])}\n")

    with open(os.path.join(csv_dir, "similarity.csv"), "w") as f:
        f.write("t,prior,dis,disPrime,rawDis,rawDisPrime,similar\n")
        for entry in report.similarity:
            t = entry["task"]
            for p in entry["per_prior"]:
                f.write(
                    f"{t},{p['prior_id']},{_fmt(p['dis'])},{_fmt(p['dis_prime'])},"
                    f"{_fmt(p['raw_dis'])},{_fmt(p['raw_dis_prime'])},{int(p['similar'])}\n"
                )
