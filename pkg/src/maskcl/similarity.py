"""Online detection of similar prior tasks.

A new task is probed with a small training sample. For every prior task, the
probe is pushed through that task's own frozen sub-network — an evaluation
frame that can never drift, because those weights are immutable once the
task ends — and reduced to an orthonormal representation basis by
thresholded SVD. The Wasserstein distance between this basis and the prior's
stored basis is compared against the same construction on an untrained twin
model: a prior counts as similar when its trained features pull the new
task's representations closer than the untrained features do, by a relative
margin delta.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import rng
from .datasets import TaskDataset
from .linalg import frobenius_sq, solve_transport, svd


@dataclass(frozen=True)
class RepresentationBasis:
    vectors: np.ndarray  # (width, k), orthonormal columns
    task_id: int
    source: str  # "original" | "continual"
    k: int


@dataclass(frozen=True)
class PriorJudgment:
    prior_id: int
    dis_prime: float  # reported value: share of the untrained-model distance mass
    dis: float  # reported value: share of the trained-model distance mass
    raw_dis_prime: float
    raw_dis: float
    similar: bool


@dataclass(frozen=True)
class PriorDistances:
    new_task: int
    prior_ids: tuple
    dis_prime: tuple  # normalized shares when >= 2 priors, else the raw values
    dis: tuple
    raw_dis_prime: tuple
    raw_dis: tuple
    normalized: bool  # False for the single-prior (raw distance) case
    degenerate: bool  # every prior at zero distance from the new task


@dataclass(frozen=True)
class SimilarityVerdict:
    new_task: int
    per_prior: tuple
    sim_set: tuple
    dis_set: tuple
    most_similar: int | None
    normalized: bool
    degenerate: bool


def sample_probe(dataset: TaskDataset, rate: float, seed: int) -> TaskDataset:
    """Uniform sample without replacement of ceil(rate * N) training rows."""
    if not 0.0 < rate <= 1.0:
        raise ValueError(f"probe rate must be in (0, 1], got {rate}")
    x, y = dataset.train
    n = x.shape[0]
    if n == 0:
        raise ValueError("cannot probe an empty dataset")
    take = math.ceil(rate * n)
    idx = rng.stream(seed, "probe", dataset.task_id).permutation(n)[:take]
    return TaskDataset(
        task_id=dataset.task_id,
        input_dim=dataset.input_dim,
        num_classes=dataset.num_classes,
        train=(x[idx].copy(), y[idx].copy()),
        val=dataset.val,
        test=dataset.test,
    )


def compute_basis(representation, eps_th: float, task_id: int = -1,
                  source: str = "continual") -> RepresentationBasis:
    """Orthonormal basis of the dominant representation subspace.

    k is the smallest rank whose squared singular values hold at least eps_th
    of the total spectral energy; the basis is the first k left singular
    vectors of the transposed representation matrix (so vectors live in
    representation space).
    """
    r = np.asarray(representation, dtype=np.float64)
    if not 0.0 < eps_th <= 1.0:
        raise ValueError(f"eps_th must be in (0, 1], got {eps_th}")
    if r.ndim != 2 or r.size == 0:
        raise ValueError("representation must be a non-empty 2-D array")
    if frobenius_sq(r) == 0.0:
        raise ValueError("degenerate probe: representation is all zero")
    res = svd(r.T)
    energy = res.sigma**2
    total = float(energy.sum())
    cumulative = np.cumsum(energy)
    k = int(np.searchsorted(cumulative, eps_th * total - 1e-12 * total) + 1)
    k = min(k, len(res.sigma))
    return RepresentationBasis(
        vectors=res.u[:, :k].copy(), task_id=task_id, source=source, k=k
    )


def basis_distance(a: RepresentationBasis, b: RepresentationBasis) -> float:
    """Exact Wasserstein-1 distance between uniform distributions over two
    vector sets, under the sign-invariant cost min(|u-v|, |u+v|)."""
    if a.vectors.shape[0] != b.vectors.shape[0]:
        raise ValueError(
            f"basis dimensions differ: {a.vectors.shape[0]} vs {b.vectors.shape[0]}"
        )
    ua, ub = a.vectors, b.vectors
    # direct differences: no cancellation, identical vectors give an exact 0
    diff = ua[:, :, None] - ub[:, None, :]
    minus = np.einsum("dij,dij->ij", diff, diff)
    summed = ua[:, :, None] + ub[:, None, :]
    plus = np.einsum("dij,dij->ij", summed, summed)
    ground = np.sqrt(np.minimum(minus, plus))
    ka, kb = ua.shape[1], ub.shape[1]
    plan = solve_transport(ground, np.full(ka, 1.0 / ka), np.full(kb, 1.0 / kb))
    return plan.cost


def normalized_distances(raw_prime, raw_cl, prior_ids, new_task: int) -> PriorDistances:
    """Package per-prior distances from both model sides.

    Raw distances always travel with the result (classification uses them);
    the reported dis/dis' values are normalized to sum to 1 when there are
    two or more priors. With a single prior, normalization would force both
    sides to 1 and erase the signal, so the raw values are reported as-is.
    If either side's distances sum to zero (every prior indistinguishable
    from the new task), the reported shares fall back to uniform and the
    result is flagged degenerate.
    """
    raw_prime = tuple(float(v) for v in raw_prime)
    raw_cl = tuple(float(v) for v in raw_cl)
    prior_ids = tuple(prior_ids)
    if not prior_ids:
        raise ValueError("no prior tasks to compare against")
    if not len(raw_prime) == len(raw_cl) == len(prior_ids):
        raise ValueError("distance lists and prior ids must have equal length")
    if any(v < 0 for v in raw_prime + raw_cl):
        raise ValueError("distances must be non-negative")
    n = len(prior_ids)
    if n == 1:
        return PriorDistances(
            new_task=new_task, prior_ids=prior_ids,
            dis_prime=raw_prime, dis=raw_cl,
            raw_dis_prime=raw_prime, raw_dis=raw_cl,
            normalized=False, degenerate=False,
        )
    sum_prime = sum(raw_prime)
    sum_cl = sum(raw_cl)
    if sum_prime == 0.0 or sum_cl == 0.0:
        uniform = tuple([1.0 / n] * n)
        return PriorDistances(
            new_task=new_task, prior_ids=prior_ids, dis_prime=uniform, dis=uniform,
            raw_dis_prime=raw_prime, raw_dis=raw_cl,
            normalized=True, degenerate=True,
        )
    return PriorDistances(
        new_task=new_task, prior_ids=prior_ids,
        dis_prime=tuple(v / sum_prime for v in raw_prime),
        dis=tuple(v / sum_cl for v in raw_cl),
        raw_dis_prime=raw_prime, raw_dis=raw_cl,
        normalized=True, degenerate=False,
    )


def distances_from_bases(new_ori_bases, new_cl_bases, priors, new_task: int) -> PriorDistances:
    """Distances of the new task against every prior, each prior measured in
    its own frame: priors is a list of (task_id, stored_ori, stored_cl) and
    the new-task bases are the per-prior-frame counterparts, index-aligned."""
    priors = list(priors)
    raw_prime = [
        basis_distance(stored_ori, new_ori)
        for (_, stored_ori, _), new_ori in zip(priors, new_ori_bases)
    ]
    raw_cl = [
        basis_distance(stored_cl, new_cl)
        for (_, _, stored_cl), new_cl in zip(priors, new_cl_bases)
    ]
    return normalized_distances(
        raw_prime, raw_cl, [task_id for task_id, _, _ in priors], new_task
    )


def classify_priors(distances: PriorDistances, delta: float) -> SimilarityVerdict:
    """Split priors into similar/dissimilar sets.

    A prior is similar when the trained model brings it strictly closer than
    the untrained model does, by a relative margin of at least delta:
    (d' - d) / d' >= delta on the raw distances.
    """
    if delta < 0:
        raise ValueError("delta must be >= 0")
    judgments = []
    for prior_id, dp, d, raw_dp, raw_d in zip(
        distances.prior_ids, distances.dis_prime, distances.dis,
        distances.raw_dis_prime, distances.raw_dis,
    ):
        margin_ok = (raw_dp - raw_d) / max(raw_dp, 1e-12) >= delta
        judgments.append(
            PriorJudgment(prior_id=prior_id, dis_prime=dp, dis=d,
                          raw_dis_prime=raw_dp, raw_dis=raw_d,
                          similar=bool(raw_d < raw_dp and margin_ok))
        )
    judgments = tuple(judgments)
    return SimilarityVerdict(
        new_task=distances.new_task,
        per_prior=judgments,
        sim_set=tuple(j.prior_id for j in judgments if j.similar),
        dis_set=tuple(j.prior_id for j in judgments if not j.similar),
        most_similar=_widest_gap(judgments),
        normalized=distances.normalized,
        degenerate=distances.degenerate,
    )


def _widest_gap(judgments) -> int | None:
    best = None
    for j in judgments:
        if not j.similar:
            continue
        gap = (j.raw_dis_prime - j.raw_dis) / max(j.raw_dis_prime, 1e-12)
        if best is None or gap > best[0] or (gap == best[0] and j.prior_id < best[1]):
            best = (gap, j.prior_id)
    return None if best is None else best[1]


def most_similar(verdict: SimilarityVerdict) -> int | None:
    """The similar prior whose trained-model distance undercuts its untrained
    distance by the widest relative gap; ties go to the lowest task id;
    absent when nothing is similar."""
    return _widest_gap(verdict.per_prior)
