"""Experiment configuration: one JSON document, strictly validated.

Three sections: `network` (architecture), `train` (optimizer and detector
settings plus feature switches), and `sequence` (which task generator to run
and its parameters). Unknown keys are rejected everywhere.
"""
from __future__ import annotations

from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, model_validator

from . import rng
from .datasets import gen_dissimilar, gen_mixed, gen_similar, ingest_idx
from .learner import TrainConfig
from .network import NetworkConfig


class StrictModel(BaseModel):
    model_config = ConfigDict(extra="forbid")


class NetworkSection(StrictModel):
    layers: list[int] = Field(min_length=2)
    headSize: int = Field(ge=1)
    maxTasks: Optional[int] = Field(default=None, ge=1)
    seed: Optional[int] = None  # defaults to train.seed


class TrainSection(StrictModel):
    epochs: int = Field(default=5, ge=1)
    batch: int = Field(default=10, ge=1)
    lr: float = Field(default=0.001, gt=0)
    c: float = Field(default=0.5, gt=0, le=1)
    delta: float = Field(default=0.80, ge=0)
    epsTh: float = Field(default=0.99, gt=0, le=1)
    probeRate: float = Field(default=0.05, gt=0, le=1)
    seed: int = 0
    enableDetection: bool = True
    enableAlignment: bool = True
    enableBkt: bool = True
    computeOne: bool = True


class SequenceSection(StrictModel):
    kind: Literal["dissimilar", "similar", "mixed", "idx"]
    seed: int = 0
    nTasks: int = Field(default=10, ge=1)
    dim: int = Field(default=64, ge=1)
    classes: int = Field(default=10, ge=2)
    samplesPerSplit: int = Field(default=1000, ge=1)
    noiseScale: float = Field(default=0.1, ge=0)
    nSimilar: int = Field(default=5, ge=0)
    nDissimilar: int = Field(default=5, ge=0)
    interleaveSeed: int = 0
    imagesPath: Optional[str] = None
    labelsPath: Optional[str] = None
    trainCount: int = Field(default=2000, ge=1)
    valCount: int = Field(default=500, ge=1)
    testCount: int = Field(default=1000, ge=1)

    @model_validator(mode="after")
    def _idx_paths(self):
        if self.kind == "idx" and (self.imagesPath is None or self.labelsPath is None):
            raise ValueError("idx sequences need imagesPath and labelsPath")
        return self


class ExperimentConfig(StrictModel):
    network: NetworkSection
    train: TrainSection
    sequence: SequenceSection


def to_train_config(config: ExperimentConfig, n_tasks: int) -> TrainConfig:
    net = config.network
    train = config.train
    return TrainConfig(
        network=NetworkConfig(
            layer_sizes=tuple(net.layers),
            head_size=net.headSize,
            max_tasks=net.maxTasks if net.maxTasks is not None else n_tasks,
            seed=net.seed if net.seed is not None else train.seed,
        ),
        epochs=train.epochs,
        batch_size=train.batch,
        lr=train.lr,
        capacity_ratio=train.c,
        delta=train.delta,
        eps_th=train.epsTh,
        probe_rate=train.probeRate,
        seed=train.seed,
        enable_detection=train.enableDetection,
        enable_alignment=train.enableAlignment,
        enable_bkt=train.enableBkt,
    )


def build_sequence(seq: SequenceSection):
    """Materialize the configured task sequence.

    Returns (datasets, ground_truth_similar_pairs_or_None, families_or_None).
    """
    if seq.kind == "dissimilar":
        tasks = gen_dissimilar(seq.nTasks, seq.dim, seq.classes, seq.samplesPerSplit, seq.seed)
        return tasks, None, None
    if seq.kind == "similar":
        tasks = gen_similar(seq.nTasks, seq.dim, seq.classes, seq.samplesPerSplit,
                            seq.noiseScale, seq.seed)
        return tasks, None, None
    if seq.kind == "mixed":
        mixed = gen_mixed(seq.nSimilar, seq.nDissimilar, seq.interleaveSeed, seq.dim,
                          seq.classes, seq.samplesPerSplit, seq.noiseScale, seq.seed)
        return list(mixed.datasets), mixed.similar_pairs, mixed.families
    if seq.kind == "idx":
        tasks = []
        for i in range(seq.nTasks):
            perm_seed = None
            if i > 0:
                perm_seed = int(rng.stream(seq.seed, "idx-perm", i).integers(1 << 62))
            ds = ingest_idx(
                seq.imagesPath, seq.labelsPath, permutation_seed=perm_seed,
                task_id=i + 1, train_count=seq.trainCount, val_count=seq.valCount,
                test_count=seq.testCount,
            )
            tasks.append(ds)
        return tasks, None, None
    raise ValueError(f"unknown sequence kind {seq.kind!r}")
