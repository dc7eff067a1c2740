"""Task-sequence generators and IDX ingest.

All generators are pure functions of their seeds: the same arguments produce
byte-identical datasets. Task ids are 1-based sequence positions.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from . import rng

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


class IdxMagicError(ValueError):
    """File does not start with the expected IDX magic number."""


class IdxTruncatedError(ValueError):
    """IDX payload is shorter than its header promises."""


@dataclass
class TaskDataset:
    task_id: int
    input_dim: int
    num_classes: int
    train: tuple
    val: tuple
    test: tuple

    def __post_init__(self):
        for name in ("train", "val", "test"):
            x, y = getattr(self, name)
            if x.shape[0] == 0:
                raise ValueError(f"{name} split is empty")
            if x.shape[1] != self.input_dim:
                raise ValueError(f"{name} split width {x.shape[1]} != {self.input_dim}")
            if not np.all(np.isfinite(x)):
                raise ValueError(f"{name} split contains non-finite inputs")
            if y.min() < 0 or y.max() >= self.num_classes:
                raise ValueError(f"{name} labels outside [0, {self.num_classes})")

    def split(self, name: str) -> tuple:
        if name not in ("train", "val", "test"):
            raise ValueError(f"unknown split {name!r}")
        return getattr(self, name)


@dataclass(frozen=True)
class MixedSequence:
    datasets: tuple
    similar_pairs: tuple  # ground-truth similar (i, j) pairs, i < j, 1-based ids
    families: tuple  # per task: "similar" or "dissimilar"


def _cluster_base(dim: int, classes: int, seed: int):
    """Class means plus a noise scale giving >= 6-sigma inter-class separation."""
    if dim < classes:
        raise ValueError(f"need dim >= classes for separable clusters, got {dim} < {classes}")
    g = rng.stream(seed, "means")
    means = g.standard_normal((classes, dim))
    dists = [
        np.linalg.norm(means[a] - means[b])
        for a in range(classes)
        for b in range(a + 1, classes)
    ]
    sigma = (min(dists) if dists else 1.0) / 6.0
    return means, sigma


def _balanced_labels(n: int, classes: int, g: np.random.Generator) -> np.ndarray:
    labels = np.arange(n) % classes
    return labels[g.permutation(n)]


def _draw_split(means, sigma, n, g):
    classes, dim = means.shape
    y = _balanced_labels(n, classes, g)
    x = means[y] + sigma * g.standard_normal((n, dim))
    return x, y


def gen_dissimilar(n_tasks: int, dim: int = 64, classes: int = 10,
                   samples_per_split: int = 1000, seed: int = 0):
    """One well-separated Gaussian-cluster problem plus independent coordinate
    permutations of it; permutation 0 is the identity."""
    if n_tasks < 1:
        raise ValueError("need at least one task")
    means, sigma = _cluster_base(dim, classes, seed)
    base = {
        name: _draw_split(means, sigma, samples_per_split, rng.stream(seed, "split", name))
        for name in ("train", "val", "test")
    }
    tasks = []
    for i in range(n_tasks):
        if i == 0:
            perm = np.arange(dim)
        else:
            perm = rng.stream(seed, "perm", i).permutation(dim)
        splits = {name: (x[:, perm].copy(), y.copy()) for name, (x, y) in base.items()}
        tasks.append(
            TaskDataset(task_id=i + 1, input_dim=dim, num_classes=classes, **splits)
        )
    return tasks


def _random_plane_rotation(dim: int, angle: float, g: np.random.Generator) -> np.ndarray:
    """Rotation by `angle` in a random 2-plane."""
    q1 = g.standard_normal(dim)
    q1 /= np.linalg.norm(q1)
    q2 = g.standard_normal(dim)
    q2 -= (q1 @ q2) * q1
    q2 /= np.linalg.norm(q2)
    outer = np.outer
    return (
        np.eye(dim)
        + (np.cos(angle) - 1.0) * (outer(q1, q1) + outer(q2, q2))
        + np.sin(angle) * (outer(q2, q1) - outer(q1, q2))
    )


def gen_similar(n_tasks: int, dim: int = 64, classes: int = 10,
                samples_per_split: int = 1000, noise_scale: float = 0.1,
                seed: int = 0):
    """Variants of one base task under small random rotations/translations.

    noise_scale bounds both the rotation angle (radians) and the translation
    norm; the per-task draw stays in [noise_scale/2, noise_scale] so variants
    carry comparable style strength. Zero makes every task an exact copy of
    the base.
    """
    if n_tasks < 1:
        raise ValueError("need at least one task")
    if noise_scale < 0:
        raise ValueError("noise_scale must be >= 0")
    means, sigma = _cluster_base(dim, classes, seed)
    base = {
        name: _draw_split(means, sigma, samples_per_split, rng.stream(seed, "split", name))
        for name in ("train", "val", "test")
    }
    tasks = []
    for i in range(n_tasks):
        if noise_scale == 0:
            transform = None
            shift = None
        else:
            g = rng.stream(seed, "affine", i)
            angle = noise_scale * (0.5 + 0.5 * g.random())
            transform = _random_plane_rotation(dim, angle, g)
            direction = g.standard_normal(dim)
            direction /= np.linalg.norm(direction)
            shift = noise_scale * (0.5 + 0.5 * g.random()) * direction
        splits = {}
        for name, (x, y) in base.items():
            if transform is None:
                splits[name] = (x.copy(), y.copy())
            else:
                splits[name] = (x @ transform.T + shift, y.copy())
        tasks.append(
            TaskDataset(task_id=i + 1, input_dim=dim, num_classes=classes, **splits)
        )
    return tasks


def gen_mixed(n_similar: int, n_dissimilar: int, interleave_seed: int = 0,
              dim: int = 64, classes: int = 10, samples_per_split: int = 1000,
              noise_scale: float = 0.1, seed: int = 0) -> MixedSequence:
    """Similar-family and permuted-family tasks shuffled together, with
    ground-truth similarity labels for detector evaluation."""
    if n_similar < 0 or n_dissimilar < 0:
        raise ValueError("task counts must be >= 0")
    if n_similar + n_dissimilar < 1:
        raise ValueError("need at least one task")
    sim_seed = int(rng.stream(seed, "similar-family").integers(1 << 62))
    dis_seed = int(rng.stream(seed, "dissimilar-family").integers(1 << 62))
    pool = []
    if n_similar:
        pool += [("similar", d) for d in
                 gen_similar(n_similar, dim, classes, samples_per_split, noise_scale, sim_seed)]
    if n_dissimilar:
        pool += [("dissimilar", d) for d in
                 gen_dissimilar(n_dissimilar, dim, classes, samples_per_split, dis_seed)]
    order = rng.stream(interleave_seed, "interleave").permutation(len(pool))
    datasets = []
    families = []
    for pos, idx in enumerate(order):
        family, d = pool[idx]
        datasets.append(
            TaskDataset(task_id=pos + 1, input_dim=d.input_dim, num_classes=d.num_classes,
                        train=d.train, val=d.val, test=d.test)
        )
        families.append(family)
    similar_ids = [i + 1 for i, f in enumerate(families) if f == "similar"]
    pairs = tuple(
        (a, b) for ai, a in enumerate(similar_ids) for b in similar_ids[ai + 1 :]
    )
    return MixedSequence(datasets=tuple(datasets), similar_pairs=pairs, families=tuple(families))


def _read_idx(path: str, expect_magic: int, dims: int):
    with open(path, "rb") as f:
        payload = f.read()
    header = 4 + 4 * dims
    if len(payload) < header:
        raise IdxTruncatedError(f"{path}: header truncated")
    magic = struct.unpack(">I", payload[:4])[0]
    if magic != expect_magic:
        raise IdxMagicError(f"{path}: magic 0x{magic:08x}, expected 0x{expect_magic:08x}")
    shape = struct.unpack(f">{dims}I", payload[4:header])
    count = int(np.prod(shape))
    body = payload[header:]
    if len(body) < count:
        raise IdxTruncatedError(f"{path}: payload has {len(body)} bytes, expected {count}")
    return np.frombuffer(body[:count], dtype=np.uint8).reshape(shape)


def ingest_idx(images_path: str, labels_path: str, permutation_seed: int | None = None,
               task_id: int = 1, train_count: int = 2000, val_count: int = 500,
               test_count: int = 1000) -> TaskDataset:
    """Load a standard big-endian IDX image/label pair as one task.

    Pixels are scaled to [0,1] and flattened; an optional fixed pixel
    permutation is applied. Splits are consecutive slices of the file.
    """
    images = _read_idx(images_path, IDX_IMAGES_MAGIC, dims=3)
    labels = _read_idx(labels_path, IDX_LABELS_MAGIC, dims=1)
    if images.shape[0] != labels.shape[0]:
        raise ValueError(
            f"image count {images.shape[0]} != label count {labels.shape[0]}"
        )
    total = train_count + val_count + test_count
    if images.shape[0] < total:
        raise ValueError(f"need {total} samples, file has {images.shape[0]}")
    dim = images.shape[1] * images.shape[2]
    x = images.reshape(images.shape[0], dim).astype(np.float64) / 255.0
    if permutation_seed is not None:
        perm = rng.stream(permutation_seed, "pixel-perm").permutation(dim)
        x = x[:, perm]
    y = labels.astype(np.int64)
    classes = int(y.max()) + 1
    a, b = train_count, train_count + val_count
    return TaskDataset(
        task_id=task_id,
        input_dim=dim,
        num_classes=classes,
        train=(x[:a].copy(), y[:a].copy()),
        val=(x[a:b].copy(), y[a:b].copy()),
        test=(x[b:total].copy(), y[b:total].copy()),
    )
