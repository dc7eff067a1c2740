"""Multi-head fully connected network with manual forward/backward passes.

Hidden layers share one weight pool gated by binary masks; every weight
additionally carries a learnable selection score. Classification heads and
hidden-layer biases are per task (never masked, never scored), so a task's
private parameters cannot be disturbed by later tasks' training.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import rng
from .masks import AccumulatedMask, TaskMask


@dataclass(frozen=True)
class NetworkConfig:
    layer_sizes: tuple[int, ...]  # input -> hidden ... -> penultimate
    head_size: int
    max_tasks: int
    seed: int

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.layer_sizes)
        object.__setattr__(self, "layer_sizes", sizes)
        if len(sizes) < 2 or any(s < 1 for s in sizes):
            raise ValueError(f"layer_sizes needs >= 2 positive entries, got {sizes}")
        if self.head_size < 1:
            raise ValueError("head_size must be positive")
        if self.max_tasks < 1:
            raise ValueError("max_tasks must be positive")

    @property
    def weight_shapes(self) -> tuple[tuple[int, int], ...]:
        return tuple(
            (self.layer_sizes[i + 1], self.layer_sizes[i])
            for i in range(len(self.layer_sizes) - 1)
        )

    @property
    def penultimate(self) -> int:
        return self.layer_sizes[-1]


@dataclass
class Network:
    config: NetworkConfig
    weights: list
    scores: list
    heads: dict = field(default_factory=dict)
    biases: dict = field(default_factory=dict)

    def clone(self) -> "Network":
        return Network(
            config=self.config,
            weights=[w.copy() for w in self.weights],
            scores=[s.copy() for s in self.scores],
            heads={t: h.copy() for t, h in self.heads.items()},
            biases={t: [b.copy() for b in bs] for t, bs in self.biases.items()},
        )


@dataclass
class ForwardTrace:
    task: int
    layer_inputs: list  # input to each hidden layer (batch x fan_in)
    pre_acts: list  # pre-activations per hidden layer
    representation: np.ndarray  # post-activation of the last hidden layer
    logits: np.ndarray


@dataclass
class LayerGradients:
    d_weights: list
    d_scores: list
    d_biases: list
    d_head: np.ndarray


def _glorot(generator: np.random.Generator, shape: tuple[int, int]) -> np.ndarray:
    fan_out, fan_in = shape
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return generator.uniform(-limit, limit, size=shape)


def init_network(cfg: NetworkConfig) -> Network:
    """Glorot-uniform weights and scores from independent seed streams."""
    weights = [
        _glorot(rng.stream(cfg.seed, "weights", l), shape)
        for l, shape in enumerate(cfg.weight_shapes)
    ]
    scores = [
        _glorot(rng.stream(cfg.seed, "scores", l), shape)
        for l, shape in enumerate(cfg.weight_shapes)
    ]
    return Network(config=cfg, weights=weights, scores=scores)


def start_task(net: Network, task_id: int) -> None:
    """Allocate the task's head and zero biases."""
    if task_id in net.heads:
        raise ValueError(f"task {task_id} already started")
    if len(net.heads) >= net.config.max_tasks:
        raise ValueError(f"network capped at {net.config.max_tasks} tasks")
    head_shape = (net.config.head_size, net.config.penultimate)
    net.heads[task_id] = _glorot(rng.stream(net.config.seed, "head", task_id), head_shape)
    net.biases[task_id] = [np.zeros(s[0]) for s in net.config.weight_shapes]


def _check_batch(net: Network, batch) -> np.ndarray:
    batch = np.asarray(batch, dtype=np.float64)
    if batch.ndim == 1:
        batch = batch[None, :]
    if batch.shape[1] != net.config.layer_sizes[0]:
        raise ValueError(
            f"batch width {batch.shape[1]} != input size {net.config.layer_sizes[0]}"
        )
    if not np.all(np.isfinite(batch)):
        raise ValueError("batch contains non-finite values")
    return batch


def forward(net: Network, mask: TaskMask, head: int, batch, bias_task: int | None = None) -> ForwardTrace:
    """Masked forward pass; records everything backward() needs."""
    batch = _check_batch(net, batch)
    if head not in net.heads:
        raise ValueError(f"no head for task {head}")
    bias_task = head if bias_task is None else bias_task
    biases = net.biases[bias_task]
    dense = mask.dense()
    h = batch
    layer_inputs = []
    pre_acts = []
    for l, (w, m) in enumerate(zip(net.weights, dense)):
        if m.shape != w.shape:
            raise ValueError(f"mask shape {m.shape} != weight shape {w.shape} at layer {l}")
        layer_inputs.append(h)
        pre = h @ (w * m).T + biases[l]
        pre_acts.append(pre)
        h = np.maximum(pre, 0.0)
    logits = h @ net.heads[head].T
    return ForwardTrace(
        task=head, layer_inputs=layer_inputs, pre_acts=pre_acts, representation=h, logits=logits
    )


def penultimate_activations(net: Network, batch, mask: TaskMask | None = None,
                            bias_task: int | None = None) -> np.ndarray:
    """Representation only; dense pass with zero biases unless told otherwise."""
    batch = _check_batch(net, batch)
    dense = mask.dense() if mask is not None else [None] * len(net.weights)
    biases = net.biases[bias_task] if bias_task is not None else None
    h = batch
    for l, w in enumerate(net.weights):
        eff = w if dense[l] is None else w * dense[l]
        pre = h @ eff.T
        if biases is not None:
            pre = pre + biases[l]
        h = np.maximum(pre, 0.0)
    return h


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - np.max(logits, axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def cross_entropy(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean cross-entropy over the batch and its gradient w.r.t. the logits."""
    n = logits.shape[0]
    shifted = logits - np.max(logits, axis=1, keepdims=True)
    log_z = np.log(np.sum(np.exp(shifted), axis=1))
    loss = float(np.mean(log_z - shifted[np.arange(n), labels]))
    dlogits = softmax(logits)
    dlogits[np.arange(n), labels] -= 1.0
    return loss, dlogits / n


def _check_labels(net: Network, labels) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64).ravel()
    if labels.size and (labels.min() < 0 or labels.max() >= net.config.head_size):
        raise ValueError(
            f"labels must be in [0, {net.config.head_size}), got range "
            f"[{labels.min()}, {labels.max()}]"
        )
    return labels


def backward(net: Network, mask: TaskMask, trace: ForwardTrace, labels) -> LayerGradients:
    """Cross-entropy backprop through the masked graph.

    Weight gradients carry the mask (masked-out weights cannot move the loss);
    score gradients use the straight-through surrogate dL/d(effective W) * W,
    so scores of unselected weights still receive signal.
    """
    labels = _check_labels(net, labels)
    if labels.shape[0] != trace.logits.shape[0]:
        raise ValueError("labels do not match trace batch size")
    _, dlogits = cross_entropy(trace.logits, labels)
    return backward_from_dlogits(net, mask, trace, dlogits)


def backward_from_dlogits(net: Network, mask: TaskMask, trace: ForwardTrace,
                          dlogits: np.ndarray) -> LayerGradients:
    dense = mask.dense()
    head = net.heads[trace.task]
    d_head = dlogits.T @ trace.representation
    d_h = dlogits @ head
    d_weights = [None] * len(net.weights)
    d_scores = [None] * len(net.weights)
    d_biases = [None] * len(net.weights)
    for l in range(len(net.weights) - 1, -1, -1):
        d_pre = d_h * (trace.pre_acts[l] > 0)
        d_eff = d_pre.T @ trace.layer_inputs[l]
        d_weights[l] = d_eff * dense[l]
        d_scores[l] = d_eff * net.weights[l]
        d_biases[l] = d_pre.sum(axis=0)
        if l > 0:
            d_h = d_pre @ (net.weights[l] * dense[l])
    return LayerGradients(d_weights=d_weights, d_scores=d_scores, d_biases=d_biases, d_head=d_head)


def update_weights_masked(net: Network, grads: LayerGradients, accum: AccumulatedMask,
                          lr: float) -> None:
    """SGD step on weights outside the accumulated mask; covered weights stay
    bit-identical (they are never written, not merely incremented by zero)."""
    for w, dw, free in zip(net.weights, grads.d_weights, accum.free()):
        np.subtract(w, lr * dw, out=w, where=free)


def update_scores(net: Network, grads: LayerGradients, lr: float) -> None:
    """SGD step on every score; scores are never frozen."""
    for s, ds in zip(net.scores, grads.d_scores):
        s -= lr * ds


def update_task_params(net: Network, task: int, grads: LayerGradients, lr: float) -> None:
    """SGD step on the task's private head and biases."""
    net.heads[task] -= lr * grads.d_head
    for b, db in zip(net.biases[task], grads.d_biases):
        b -= lr * db
