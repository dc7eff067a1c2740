"""Binary sub-network masks, bit-packed.

Layout (shared with the knowledge-base file format): each layer's mask is
flattened row-major and packed 64 entries per little-endian 64-bit word, bit
``i`` of word ``w`` holding flat index ``64*w + i``. Masks are immutable after
creation; accumulation returns a new value.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

WORD_BITS = 64


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def pack_bits(dense: np.ndarray) -> np.ndarray:
    """Pack a binary array (any shape) into little-endian uint64 words."""
    bits = np.ascontiguousarray(dense, dtype=np.uint8).ravel()
    if np.any(bits > 1):
        raise ValueError("mask entries must be 0 or 1")
    packed = np.packbits(bits, bitorder="little")
    pad = (-packed.size) % 8
    if pad:
        packed = np.concatenate([packed, np.zeros(pad, dtype=np.uint8)])
    return packed.view(np.dtype("<u8")).copy()


def unpack_bits(words: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    """Inverse of pack_bits; returns a uint8 array of the given shape."""
    count = shape[0] * shape[1]
    raw = np.frombuffer(words.astype("<u8", copy=False).tobytes(), dtype=np.uint8)
    return np.unpackbits(raw, count=count, bitorder="little").reshape(shape)


def _popcount(words: np.ndarray) -> int:
    return int(np.bitwise_count(words).sum())


@dataclass
class TaskMask:
    """Per-layer binary selection of weights for one task."""

    task_id: int | None
    capacity_ratio: float
    shapes: tuple[tuple[int, int], ...]
    words: tuple[np.ndarray, ...]
    _dense: list | None = field(default=None, repr=False, compare=False)

    def dense(self) -> list[np.ndarray]:
        """Per-layer float64 {0,1} matrices (cached)."""
        if self._dense is None:
            self._dense = [
                unpack_bits(w, s).astype(np.float64) for w, s in zip(self.words, self.shapes)
            ]
        return self._dense

    def popcount(self) -> int:
        return sum(_popcount(w) for w in self.words)

    def layer_popcount(self, layer: int) -> int:
        return _popcount(self.words[layer])

    def storage_bytes(self) -> int:
        return sum(w.nbytes for w in self.words)


@dataclass
class AccumulatedMask:
    """Element-wise union of the task masks learned so far."""

    shapes: tuple[tuple[int, int], ...]
    words: tuple[np.ndarray, ...]
    tasks_included: tuple[int, ...]
    _dense: list | None = field(default=None, repr=False, compare=False)
    _free: list | None = field(default=None, repr=False, compare=False)

    def dense(self) -> list[np.ndarray]:
        if self._dense is None:
            self._dense = [
                unpack_bits(w, s).astype(np.float64) for w, s in zip(self.words, self.shapes)
            ]
        return self._dense

    def free(self) -> list[np.ndarray]:
        """Per-layer boolean arrays marking weights still open for training."""
        if self._free is None:
            self._free = [unpack_bits(w, s) == 0 for w, s in zip(self.words, self.shapes)]
        return self._free

    def popcount(self) -> int:
        return sum(_popcount(w) for w in self.words)


def empty_accumulated(shapes) -> AccumulatedMask:
    shapes = tuple(tuple(s) for s in shapes)
    words = tuple(
        np.zeros((r * c + WORD_BITS - 1) // WORD_BITS, dtype=np.dtype("<u8")) for r, c in shapes
    )
    return AccumulatedMask(shapes=shapes, words=words, tasks_included=())


def select_mask(scores, c: float, task_id: int | None = None) -> TaskMask:
    """Top-c% selection per layer, ties broken by lowest row-major index."""
    if not 0.0 < c <= 1.0:
        raise ValueError(f"capacity ratio must be in (0, 1], got {c}")
    shapes = []
    words = []
    dense = []
    for s in scores:
        s = np.asarray(s, dtype=np.float64)
        if not np.all(np.isfinite(s)):
            raise ValueError("scores contain non-finite entries")
        flat = s.ravel()
        k = round_half_up(c * flat.size)
        keep = np.argsort(-flat, kind="stable")[:k]
        m = np.zeros(flat.size, dtype=np.uint8)
        m[keep] = 1
        m = m.reshape(s.shape)
        shapes.append(s.shape)
        words.append(pack_bits(m))
        dense.append(m.astype(np.float64))
    mask = TaskMask(
        task_id=task_id, capacity_ratio=c, shapes=tuple(shapes), words=tuple(words)
    )
    mask._dense = dense
    return mask


def accumulate(accum: AccumulatedMask, task_mask: TaskMask) -> AccumulatedMask:
    if task_mask.shapes != accum.shapes:
        raise ValueError(
            f"mask shapes {task_mask.shapes} do not match accumulator {accum.shapes}"
        )
    if task_mask.task_id in accum.tasks_included:
        raise ValueError(f"task {task_mask.task_id} already accumulated")
    words = tuple(a | m for a, m in zip(accum.words, task_mask.words))
    return AccumulatedMask(
        shapes=accum.shapes,
        words=words,
        tasks_included=accum.tasks_included + (task_mask.task_id,),
    )


def reuse_fraction(task_mask: TaskMask, accum: AccumulatedMask) -> float:
    """Fraction of the task's selected weights already covered by prior masks."""
    if task_mask.shapes != accum.shapes:
        raise ValueError("mask shapes do not match accumulator")
    selected = task_mask.popcount()
    if selected == 0:
        raise ValueError("reuse fraction undefined for an all-zero mask")
    shared = sum(_popcount(m & a) for m, a in zip(task_mask.words, accum.words))
    return shared / selected


@dataclass(frozen=True)
class FrozenCheck:
    ok: bool
    violation: tuple[int, int, int] | None = None


def assert_frozen(before, after, accum: AccumulatedMask) -> FrozenCheck:
    """Verify every weight under the accumulated mask is bit-identical.

    ``before``/``after`` are networks (anything with a ``weights`` list of
    equal-shaped arrays). Returns the first violating (layer, row, col) on
    failure instead of raising.
    """
    for layer, (wb, wa) in enumerate(zip(before.weights, after.weights)):
        if wb.shape != wa.shape or wb.shape != accum.shapes[layer]:
            raise ValueError(f"architecture mismatch at layer {layer}")
        covered = unpack_bits(accum.words[layer], accum.shapes[layer]) == 1
        changed = (wb.view(np.uint64) != wa.view(np.uint64)) & covered
        if np.any(changed):
            r, c = np.argwhere(changed)[0]
            return FrozenCheck(ok=False, violation=(layer, int(r), int(c)))
    return FrozenCheck(ok=True)
