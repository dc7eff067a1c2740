"""Forward and backward knowledge transfer between similar tasks.

Forward transfer adds the donor sub-network's score gradient to the new
task's score gradient, once, at the start of training. Backward transfer
nudges the heads of similar prior tasks toward the new task's head via the
cosine term of the bi-objective loss, with each step projected orthogonal to
the protected representation subspaces of unrelated prior tasks so their
responses cannot drift.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .network import Network, backward, cross_entropy, forward
from .similarity import compute_basis


@dataclass(frozen=True)
class SubspaceMemory:
    owner_task: int
    basis: np.ndarray  # (width, k), orthonormal columns
    k: int


@dataclass
class AlignmentRecord:
    new_task: int
    donor_task: int
    applied: bool = False


def align_initial_gradients(record: AlignmentRecord, grad_new, grad_donor):
    """Element-wise sum of the two score gradients; one-shot per task."""
    if record.applied:
        raise RuntimeError(f"gradient alignment already applied for task {record.new_task}")
    if len(grad_new) != len(grad_donor):
        raise ValueError("gradient layer counts differ")
    merged = []
    for gn, gd in zip(grad_new, grad_donor):
        if gn.shape != gd.shape:
            raise ValueError(f"gradient shapes differ: {gn.shape} vs {gd.shape}")
        merged.append(gn + gd)
    record.applied = True
    return merged


def _flat(head: np.ndarray) -> np.ndarray:
    return np.asarray(head, dtype=np.float64).ravel()


def _cosine(u: np.ndarray, v: np.ndarray) -> float:
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        raise ValueError("cosine undefined for a zero-norm head")
    return float(u @ v / (nu * nv))


def _cosine_grads(u: np.ndarray, v: np.ndarray):
    """d cos(u, v) / du and / dv."""
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        raise ValueError("cosine undefined for a zero-norm head")
    c = u @ v / (nu * nv)
    du = v / (nu * nv) - c * u / (nu * nu)
    dv = u / (nu * nv) - c * v / (nv * nv)
    return du, dv


def bi_objective_loss(logits, labels, head_new, sim_heads) -> float:
    """Mean cross-entropy plus the mean cosine misalignment between the new
    head and each similar prior head (flattened)."""
    loss, _ = cross_entropy(np.asarray(logits, dtype=np.float64), np.asarray(labels))
    sim_heads = list(sim_heads)
    if sim_heads:
        wt = _flat(head_new)
        loss += sum(1.0 - _cosine(_flat(wj), wt) for wj in sim_heads) / len(sim_heads)
    return float(loss)


def bi_objective_grad(net: Network, mask, task: int, batch, labels, sim_tasks):
    """Analytic gradients of the bi-objective loss w.r.t. the new head and
    every similar prior head. The cross-entropy term touches only the new
    head; prior heads feel the cosine term alone."""
    sim_tasks = list(sim_tasks)
    trace = forward(net, mask, head=task, batch=batch)
    grads = backward(net, mask, trace, labels)
    d_new = grads.d_head.copy()
    d_priors = {}
    if sim_tasks:
        wt = _flat(net.heads[task])
        n1 = len(sim_tasks)
        for j in sim_tasks:
            wj = _flat(net.heads[j])
            dwj, dwt = _cosine_grads(wj, wt)
            d_new += (-dwt / n1).reshape(net.heads[task].shape)
            d_priors[j] = (-dwj / n1).reshape(net.heads[j].shape)
    return d_new, d_priors


def build_subspace_memory(trace, owner_task: int, eps_th: float = 0.99) -> SubspaceMemory:
    """Protected subspace of a finished task: thresholded-SVD basis of its
    end-of-task representations."""
    b = compute_basis(trace.representation, eps_th, task_id=owner_task, source="continual")
    return SubspaceMemory(owner_task=owner_task, basis=b.vectors, k=b.k)


def merge_bases(memories) -> np.ndarray | None:
    """Gram-Schmidt union of memory bases; near-dependent vectors (residual
    norm < 1e-8) are dropped. Returns None when nothing survives."""
    columns = []
    for mem in memories:
        for i in range(mem.basis.shape[1]):
            v = mem.basis[:, i].copy()
            for b in columns:
                v -= (b @ v) * b
            norm = np.linalg.norm(v)
            if norm >= 1e-8:
                columns.append(v / norm)
    if not columns:
        return None
    return np.stack(columns, axis=1)


def project_orthogonal(grad, memories):
    """g <- g - B B^T g for the merged basis B of the supplied memories.

    Accepts a vector or a matrix whose rows live in representation space.
    """
    g = np.asarray(grad, dtype=np.float64)
    merged = merge_bases(memories)
    if merged is None:
        return g.copy()
    if g.ndim == 1:
        return g - merged @ (merged.T @ g)
    return g - (g @ merged) @ merged.T


def backward_transfer_step(net: Network, task: int, sim_set, memories, lr: float) -> None:
    """One projected head update for every similar prior task.

    Only classification heads move; hidden weights, scores, and biases are
    untouched. `memories` are the protected subspaces of prior tasks outside
    the similar set.
    """
    sim_set = list(sim_set)
    if not sim_set:
        raise ValueError("backward transfer requires a non-empty similar set")
    wt = _flat(net.heads[task])
    n1 = len(sim_set)
    for j in sim_set:
        wj = _flat(net.heads[j])
        dwj, _ = _cosine_grads(wj, wt)
        d_prior = (-dwj / n1).reshape(net.heads[j].shape)
        net.heads[j] -= lr * project_orthogonal(d_prior, memories)
