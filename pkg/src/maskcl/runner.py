"""Top-level experiment operations, shared by the HTTP service and the CLI."""
from __future__ import annotations

import time

from .config import ExperimentConfig, SequenceSection, build_sequence, to_train_config
from .kbio import save_kb
from .learner import run_sequence
from .masks import WORD_BITS
from .metrics import (
    AccuracyMatrix,
    compute_metrics,
    single_task_baseline,
    verify_transfer_bounds,
)
from .reports import RunReport


def _verdict_entry(task_id: int, verdict) -> dict:
    return {
        "task": task_id,
        "per_prior": [
            {
                "prior_id": j.prior_id,
                "dis": j.dis,
                "dis_prime": j.dis_prime,
                "raw_dis": j.raw_dis,
                "raw_dis_prime": j.raw_dis_prime,
                "similar": j.similar,
            }
            for j in verdict.per_prior
        ],
        "sim_set": list(verdict.sim_set),
        "dis_set": list(verdict.dis_set),
        "most_similar": verdict.most_similar,
        "normalized": verdict.normalized,
        "degenerate": verdict.degenerate,
    }


def detected_pairs(kb) -> set:
    """(prior, task) pairs the detector labeled similar, low id first."""
    pairs = set()
    for t in kb.task_ids():
        verdict = kb.tasks[t].verdict
        if verdict is None:
            continue
        for j in verdict.sim_set:
            pairs.add((min(j, t), max(j, t)))
    return pairs


def sdm_quality(kb, truth_pairs) -> dict:
    """Precision/recall of the detector against generator ground truth."""
    truth = {(min(a, b), max(a, b)) for a, b in truth_pairs}
    got = detected_pairs(kb)
    tp = len(got & truth)
    fp = len(got - truth)
    fn = len(truth - got)
    return {
        "true_positive": tp,
        "false_positive": fp,
        "false_negative": fn,
        "precision": 1.0 if tp + fp == 0 else tp / (tp + fp),
        "recall": 1.0 if tp + fn == 0 else tp / (tp + fn),
        "truth_pairs": sorted(list(p) for p in truth),
        "detected_pairs": sorted(list(p) for p in got),
    }


def run_experiment(config: ExperimentConfig, kb_path: str | None = None):
    """Full sequence run; returns (report, kb, network)."""
    datasets, truth, families = build_sequence(config.sequence)
    cfg = to_train_config(config, len(datasets))
    result = run_sequence(datasets, cfg)

    one = None
    one_seconds = None
    if config.train.computeOne:
        t0 = time.perf_counter()
        one = [single_task_baseline(d, cfg) for d in datasets]
        one_seconds = time.perf_counter() - t0
    metrics = compute_metrics(AccuracyMatrix(rows=result.accuracy_rows), one)

    kb = result.kb
    similarity = [
        _verdict_entry(t, kb.tasks[t].verdict)
        for t in kb.task_ids()
        if kb.tasks[t].verdict is not None
    ]
    report = RunReport(
        config=config.model_dump(),
        seed=cfg.seed,
        accuracy_rows=result.accuracy_rows,
        acc=metrics.acc,
        fwt=metrics.fwt,
        bwt=metrics.bwt,
        one_baseline=one,
        similarity=similarity,
        reuse=[{"task": t, "fraction": kb.tasks[t].reuse} for t in kb.task_ids()],
        sdm=sdm_quality(kb, truth) if truth is not None else None,
        timing={
            "train_seconds": list(result.task_seconds),
            "detect_seconds": list(result.detect_seconds),
            "one_baseline_seconds": one_seconds,
        },
    )
    if kb_path is not None:
        save_kb(kb, kb_path)
    return report, kb, result.network


def one_baselines(config: ExperimentConfig) -> dict:
    """Independent per-task baselines only."""
    datasets, _, _ = build_sequence(config.sequence)
    cfg = to_train_config(config, len(datasets))
    baselines = [
        {"task": d.task_id, "accuracy": single_task_baseline(d, cfg)} for d in datasets
    ]
    return {"schema": 1, "config": config.model_dump(), "baselines": baselines}


def verify_bounds(trials: int, seed: int = 0) -> dict:
    report = verify_transfer_bounds(trials, seed)
    report["schema"] = 1
    return report


def stress_run(config: ExperimentConfig) -> dict:
    """Task-count scaling probe: per-task wall time plus mask storage audit."""
    datasets, _, _ = build_sequence(config.sequence)
    cfg = to_train_config(config, len(datasets))
    result = run_sequence(datasets, cfg)
    kb = result.kb
    weight_count = sum(r * c for r, c in cfg.network.weight_shapes)
    mask_bytes = sum(kb.tasks[t].mask.storage_bytes() for t in kb.task_ids())
    # one bit per weight per task, padded to whole words per layer
    padded_bits = sum(
        ((r * c + WORD_BITS - 1) // WORD_BITS) * WORD_BITS
        for r, c in cfg.network.weight_shapes
    ) * len(datasets)
    return {
        "schema": 1,
        "config": config.model_dump(),
        "tasks": len(datasets),
        "acc": float(sum(result.final_accuracies) / len(datasets)),
        "train_seconds": list(result.task_seconds),
        "detect_seconds": list(result.detect_seconds),
        "weight_count": weight_count,
        "mask_storage_bytes": mask_bytes,
        "mask_storage_bits_per_weight_per_task": (
            mask_bytes * 8 / (weight_count * len(datasets))
        ),
        "mask_storage_padded_bits": padded_bits,
    }


def stress_config(tasks: int, base: ExperimentConfig | None = None) -> ExperimentConfig:
    """Small permuted-sequence profile sized for task-count scaling runs."""
    if base is not None:
        seq = base.sequence.model_copy(update={"kind": "dissimilar", "nTasks": tasks})
        return ExperimentConfig(
            network=base.network.model_copy(update={"maxTasks": tasks}),
            train=base.train,
            sequence=seq,
        )
    return ExperimentConfig.model_validate(
        {
            "network": {"layers": [16, 16], "headSize": 2, "maxTasks": tasks},
            "train": {
                "epochs": 2,
                "batch": 10,
                "lr": 0.1,
                "c": 0.5,
                "delta": 0.8,
                "probeRate": 0.5,
                "seed": 0,
                "computeOne": False,
            },
            "sequence": {
                "kind": "dissimilar",
                "nTasks": tasks,
                "dim": 16,
                "classes": 2,
                "samplesPerSplit": 40,
                "seed": 1,
            },
        }
    )
