"""Per-task training orchestration and the knowledge base.

Each task trains inside a binary sub-network selected per batch from the
weight scores; weights already claimed by earlier tasks receive zero
gradient, so finished tasks are structurally immune to later training. An
untrained twin of the initial network serves as the reference point for
similarity detection. Detected similar priors trigger one-shot gradient
alignment (forward transfer) and per-batch projected head updates
(backward transfer).
"""
from __future__ import annotations

import dataclasses
import time
from dataclasses import dataclass, field

import numpy as np

from . import rng
from .datasets import TaskDataset
from .masks import AccumulatedMask, TaskMask, accumulate, empty_accumulated, reuse_fraction, select_mask
from .network import (
    Network,
    NetworkConfig,
    backward,
    forward,
    init_network,
    penultimate_activations,
    start_task,
    update_scores,
    update_task_params,
    update_weights_masked,
)
from .similarity import (
    RepresentationBasis,
    SimilarityVerdict,
    classify_priors,
    compute_basis,
    distances_from_bases,
    sample_probe,
)
from .transfer import (
    AlignmentRecord,
    SubspaceMemory,
    align_initial_gradients,
    backward_transfer_step,
    build_subspace_memory,
)


@dataclass(frozen=True)
class TrainConfig:
    network: NetworkConfig
    epochs: int = 5
    batch_size: int = 10
    lr: float = 0.001
    capacity_ratio: float = 0.5
    delta: float = 0.80
    eps_th: float = 0.99
    probe_rate: float = 0.05
    seed: int = 0
    enable_detection: bool = True
    enable_alignment: bool = True
    enable_bkt: bool = True

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if not 0 < self.capacity_ratio <= 1:
            raise ValueError("capacity_ratio must be in (0, 1]")
        if self.delta < 0:
            raise ValueError("delta must be >= 0")
        if not 0 < self.eps_th <= 1:
            raise ValueError("eps_th must be in (0, 1]")
        if not 0 < self.probe_rate <= 1:
            raise ValueError("probe_rate must be in (0, 1]")


@dataclass
class TaskRecord:
    task_id: int
    mask: TaskMask
    basis_cl: RepresentationBasis
    basis_ori: RepresentationBasis
    memory: SubspaceMemory
    verdict: SimilarityVerdict | None
    reuse: float


@dataclass
class KnowledgeBase:
    config: TrainConfig
    seed: int
    accumulated: AccumulatedMask
    tasks: dict = field(default_factory=dict)
    network: Network | None = None
    _original: Network | None = field(default=None, repr=False)

    def original_network(self) -> Network:
        """The never-trained twin, reconstructed deterministically on demand."""
        if self._original is None:
            self._original = init_network(self.config.network)
        return self._original

    def task_ids(self) -> list:
        return sorted(self.tasks)

    def accumulated_consistent(self) -> bool:
        """The stored union must equal the OR of all per-task masks."""
        rebuilt = empty_accumulated(self.config.network.weight_shapes)
        for t in self.task_ids():
            rebuilt = accumulate(rebuilt, self.tasks[t].mask)
        return all(
            np.array_equal(a, b) for a, b in zip(rebuilt.words, self.accumulated.words)
        )


def new_knowledge_base(cfg: TrainConfig) -> tuple:
    """Fresh (knowledge base, network) pair for a run."""
    net = init_network(cfg.network)
    kb = KnowledgeBase(
        config=cfg,
        seed=cfg.seed,
        accumulated=empty_accumulated(cfg.network.weight_shapes),
        network=net,
    )
    return kb, net


def _check_dataset(cfg: TrainConfig, dataset: TaskDataset) -> None:
    if dataset.input_dim != cfg.network.layer_sizes[0]:
        raise ValueError(
            f"dataset width {dataset.input_dim} != network input {cfg.network.layer_sizes[0]}"
        )
    if dataset.num_classes > cfg.network.head_size:
        raise ValueError(
            f"dataset has {dataset.num_classes} classes, head holds {cfg.network.head_size}"
        )


def _frame_bases(kb: KnowledgeBase, net: Network, probe_x, mask: TaskMask,
                 bias_task: int | None, cfg: TrainConfig, task_id: int):
    """Bases of a probe viewed through one frozen sub-network frame, on the
    trained model and on the untrained twin."""
    rep_cl = penultimate_activations(net, probe_x, mask=mask, bias_task=bias_task)
    rep_ori = penultimate_activations(kb.original_network(), probe_x, mask=mask)
    return (
        compute_basis(rep_ori, cfg.eps_th, task_id=task_id, source="original"),
        compute_basis(rep_cl, cfg.eps_th, task_id=task_id, source="continual"),
    )


def _detect(kb: KnowledgeBase, net: Network, dataset: TaskDataset, cfg: TrainConfig):
    """Compare the new task's probe against every prior task, each prior
    viewed through its own frozen sub-network (an immutable frame: those
    weights can never change after the task ends)."""
    t = dataset.task_id
    probe = sample_probe(dataset, cfg.probe_rate, seed=cfg.seed)
    probe_x = probe.train[0]
    verdict = None
    if cfg.enable_detection and kb.tasks:
        priors = []
        new_ori_bases = []
        new_cl_bases = []
        for i in kb.task_ids():
            rec = kb.tasks[i]
            b_ori, b_cl = _frame_bases(kb, net, probe_x, rec.mask, i, cfg, t)
            priors.append((i, rec.basis_ori, rec.basis_cl))
            new_ori_bases.append(b_ori)
            new_cl_bases.append(b_cl)
        distances = distances_from_bases(new_ori_bases, new_cl_bases, priors, t)
        verdict = classify_priors(distances, cfg.delta)
    return probe, verdict


@dataclass(frozen=True)
class TaskStats:
    detect_seconds: float
    train_seconds: float


def learn_task(kb: KnowledgeBase, net: Network, dataset: TaskDataset, cfg: TrainConfig) -> TaskStats:
    """Train one task end to end and append its record to the knowledge base."""
    t = dataset.task_id
    if t in kb.tasks:
        raise ValueError(f"task {t} already learned")
    _check_dataset(cfg, dataset)

    t_detect = time.perf_counter()
    probe, verdict = _detect(kb, net, dataset, cfg)
    t_train = time.perf_counter()
    sim_set = tuple(verdict.sim_set) if verdict is not None else ()
    do_align = cfg.enable_alignment and bool(sim_set)
    do_bkt = cfg.enable_bkt and bool(sim_set)

    start_task(net, t)
    alignment = AlignmentRecord(new_task=t, donor_task=verdict.most_similar) if do_align else None
    protected = [kb.tasks[i].memory for i in kb.task_ids() if i not in sim_set] if do_bkt else []

    x_train, y_train = dataset.train
    n = x_train.shape[0]
    shuffle = rng.stream(cfg.seed, "shuffle", t)
    for _ in range(cfg.epochs):
        order = shuffle.permutation(n)
        for lo in range(0, n, cfg.batch_size):
            idx = order[lo : lo + cfg.batch_size]
            xb, yb = x_train[idx], y_train[idx]
            mask = select_mask(net.scores, cfg.capacity_ratio, task_id=t)
            trace = forward(net, mask, head=t, batch=xb)
            grads = backward(net, mask, trace, yb)
            if alignment is not None and not alignment.applied:
                grads = dataclasses.replace(
                    grads, d_scores=_aligned_score_grads(kb, net, dataset, mask, alignment)
                )
            update_weights_masked(net, grads, kb.accumulated, cfg.lr)
            update_scores(net, grads, cfg.lr)
            update_task_params(net, t, grads, cfg.lr)
            if do_bkt:
                backward_transfer_step(net, t, sim_set, protected, cfg.lr)

    final_mask = select_mask(net.scores, cfg.capacity_ratio, task_id=t)
    reuse = reuse_fraction(final_mask, kb.accumulated)
    memory_trace = forward(net, final_mask, head=t, batch=probe.train[0])
    memory = build_subspace_memory(memory_trace, owner_task=t, eps_th=cfg.eps_th)
    # stored for future detections: this task's probe in its own frozen frame
    basis_ori, basis_cl = _frame_bases(kb, net, probe.train[0], final_mask, t, cfg, t)

    kb.accumulated = accumulate(kb.accumulated, final_mask)
    kb.tasks[t] = TaskRecord(
        task_id=t,
        mask=final_mask,
        basis_cl=basis_cl,
        basis_ori=basis_ori,
        memory=memory,
        verdict=verdict,
        reuse=reuse,
    )
    kb.network = net
    done = time.perf_counter()
    return TaskStats(detect_seconds=t_train - t_detect, train_seconds=done - t_train)


def _aligned_score_grads(kb: KnowledgeBase, net: Network, dataset: TaskDataset,
                         current_mask: TaskMask, alignment: AlignmentRecord):
    """One-shot donor alignment: score gradients of the full training set
    through the current sub-network plus through the donor's frozen mask
    (donor biases, fresh new-task head)."""
    t = dataset.task_id
    x, y = dataset.train
    trace_new = forward(net, current_mask, head=t, batch=x)
    grad_new = backward(net, current_mask, trace_new, y)
    donor_mask = kb.tasks[alignment.donor_task].mask
    trace_donor = forward(net, donor_mask, head=t, batch=x, bias_task=alignment.donor_task)
    grad_donor = backward(net, donor_mask, trace_donor, y)
    return align_initial_gradients(alignment, grad_new.d_scores, grad_donor.d_scores)


def evaluate(kb: KnowledgeBase, net: Network, dataset: TaskDataset, split: str = "test") -> float:
    """Accuracy of the stored sub-network (final mask, own bias and head)."""
    t = dataset.task_id
    if t not in kb.tasks:
        raise ValueError(f"task {t} has not been learned")
    x, y = dataset.split(split)
    trace = forward(net, kb.tasks[t].mask, head=t, batch=x)
    predictions = np.argmax(trace.logits, axis=1)
    return float(np.mean(predictions == y))


def task_logits(kb: KnowledgeBase, net: Network, dataset: TaskDataset, split: str = "test"):
    """Raw logits for forgetting audits (bit-exact comparisons)."""
    t = dataset.task_id
    if t not in kb.tasks:
        raise ValueError(f"task {t} has not been learned")
    x, _ = dataset.split(split)
    return forward(net, kb.tasks[t].mask, head=t, batch=x).logits


@dataclass
class SequenceResult:
    kb: KnowledgeBase
    network: Network
    accuracy_rows: tuple  # lower-triangular: row t has accuracies for tasks 1..t
    task_seconds: tuple
    detect_seconds: tuple

    @property
    def final_accuracies(self):
        return self.accuracy_rows[-1]


def run_sequence(datasets, cfg: TrainConfig) -> SequenceResult:
    """Learn the tasks in order, evaluating every learned task after each."""
    datasets = list(datasets)
    if not datasets:
        raise ValueError("need at least one task")
    ids = [d.task_id for d in datasets]
    if len(set(ids)) != len(ids):
        raise ValueError(f"duplicate task ids in sequence: {ids}")
    kb, net = new_knowledge_base(cfg)
    rows = []
    task_seconds = []
    detect_seconds = []
    for pos, dataset in enumerate(datasets):
        stats = learn_task(kb, net, dataset, cfg)
        task_seconds.append(stats.train_seconds)
        detect_seconds.append(stats.detect_seconds)
        rows.append(tuple(evaluate(kb, net, d, "test") for d in datasets[: pos + 1]))
    return SequenceResult(
        kb=kb,
        network=net,
        accuracy_rows=tuple(rows),
        task_seconds=tuple(task_seconds),
        detect_seconds=tuple(detect_seconds),
    )
