"""Knowledge-base file format.

Little-endian binary: a header (magic, format version, declared file length,
run seed, canonical-JSON config echo), the network weight/score matrices, the
accumulated mask, one record per learned task, and a trailing CRC-32 over
everything before it. Matrices are row-major float64; mask words use the
bit-packed layout from masks.py. Files are written atomically.
"""
from __future__ import annotations

import json
import os
import struct
import tempfile
import zlib

import numpy as np

from .learner import KnowledgeBase, TaskRecord, TrainConfig
from .masks import AccumulatedMask, TaskMask
from .network import Network, NetworkConfig
from .similarity import PriorJudgment, RepresentationBasis, SimilarityVerdict
from .transfer import SubspaceMemory

MAGIC = b"ETCL"
FORMAT_VERSION = 1


class KbFormatError(ValueError):
    """Not a knowledge-base file (bad magic or malformed structure)."""


class KbVersionError(ValueError):
    """File was written by a newer format version."""


class KbTruncatedError(ValueError):
    """File is shorter than its header declares."""


class KbChecksumError(ValueError):
    """Stored CRC-32 does not match the file contents."""


def config_to_dict(cfg: TrainConfig) -> dict:
    return {
        "epochs": cfg.epochs,
        "batch_size": cfg.batch_size,
        "lr": cfg.lr,
        "capacity_ratio": cfg.capacity_ratio,
        "delta": cfg.delta,
        "eps_th": cfg.eps_th,
        "probe_rate": cfg.probe_rate,
        "seed": cfg.seed,
        "enable_detection": cfg.enable_detection,
        "enable_alignment": cfg.enable_alignment,
        "enable_bkt": cfg.enable_bkt,
        "network": {
            "layer_sizes": list(cfg.network.layer_sizes),
            "head_size": cfg.network.head_size,
            "max_tasks": cfg.network.max_tasks,
            "seed": cfg.network.seed,
        },
    }


def config_from_dict(d: dict) -> TrainConfig:
    net = d["network"]
    return TrainConfig(
        network=NetworkConfig(
            layer_sizes=tuple(net["layer_sizes"]),
            head_size=net["head_size"],
            max_tasks=net["max_tasks"],
            seed=net["seed"],
        ),
        epochs=d["epochs"],
        batch_size=d["batch_size"],
        lr=d["lr"],
        capacity_ratio=d["capacity_ratio"],
        delta=d["delta"],
        eps_th=d["eps_th"],
        probe_rate=d["probe_rate"],
        seed=d["seed"],
        enable_detection=d["enable_detection"],
        enable_alignment=d["enable_alignment"],
        enable_bkt=d["enable_bkt"],
    )


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def _verdict_to_dict(v: SimilarityVerdict) -> dict:
    return {
        "new_task": v.new_task,
        "per_prior": [
            {"prior_id": j.prior_id, "dis_prime": j.dis_prime, "dis": j.dis,
             "raw_dis_prime": j.raw_dis_prime, "raw_dis": j.raw_dis,
             "similar": j.similar}
            for j in v.per_prior
        ],
        "sim_set": list(v.sim_set),
        "dis_set": list(v.dis_set),
        "most_similar": v.most_similar,
        "normalized": v.normalized,
        "degenerate": v.degenerate,
    }


def _verdict_from_dict(d: dict) -> SimilarityVerdict:
    return SimilarityVerdict(
        new_task=d["new_task"],
        per_prior=tuple(
            PriorJudgment(prior_id=p["prior_id"], dis_prime=p["dis_prime"],
                          dis=p["dis"], raw_dis_prime=p["raw_dis_prime"],
                          raw_dis=p["raw_dis"], similar=p["similar"])
            for p in d["per_prior"]
        ),
        sim_set=tuple(d["sim_set"]),
        dis_set=tuple(d["dis_set"]),
        most_similar=d["most_similar"],
        normalized=d["normalized"],
        degenerate=d["degenerate"],
    )


class _Writer:
    def __init__(self):
        self.chunks = []

    def raw(self, data: bytes):
        self.chunks.append(data)

    def u32(self, v: int):
        self.raw(struct.pack("<I", v))

    def u64(self, v: int):
        self.raw(struct.pack("<Q", v))

    def i64(self, v: int):
        self.raw(struct.pack("<q", v))

    def f64(self, v: float):
        self.raw(struct.pack("<d", v))

    def blob(self, data: bytes):
        self.u32(len(data))
        self.raw(data)

    def matrix(self, a: np.ndarray):
        a = np.ascontiguousarray(a, dtype=np.float64)
        if a.ndim == 1:
            a = a[None, :]
        self.u32(a.shape[0])
        self.u32(a.shape[1])
        self.raw(a.astype("<f8", copy=False).tobytes())

    def words(self, w: np.ndarray):
        self.u32(w.size)
        self.raw(w.astype("<u8", copy=False).tobytes())

    def payload(self) -> bytes:
        return b"".join(self.chunks)


class _Reader:
    def __init__(self, data: bytes, offset: int = 0):
        self.data = data
        self.pos = offset

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise KbTruncatedError(
                f"needed {n} bytes at offset {self.pos}, file has {len(self.data)}"
            )
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def u64(self) -> int:
        return struct.unpack("<Q", self.take(8))[0]

    def i64(self) -> int:
        return struct.unpack("<q", self.take(8))[0]

    def f64(self) -> float:
        return struct.unpack("<d", self.take(8))[0]

    def blob(self) -> bytes:
        return self.take(self.u32())

    def matrix(self) -> np.ndarray:
        rows = self.u32()
        cols = self.u32()
        data = self.take(rows * cols * 8)
        return np.frombuffer(data, dtype="<f8").reshape(rows, cols).copy()

    def vector(self) -> np.ndarray:
        return self.matrix().ravel()

    def words(self) -> np.ndarray:
        n = self.u32()
        return np.frombuffer(self.take(n * 8), dtype="<u8").copy()


def _write_basis(w: _Writer, basis: RepresentationBasis):
    w.u32(basis.task_id)
    w.blob(basis.source.encode())
    w.matrix(basis.vectors)


def _read_basis(r: _Reader) -> RepresentationBasis:
    task_id = r.u32()
    source = r.blob().decode()
    vectors = r.matrix()
    return RepresentationBasis(vectors=vectors, task_id=task_id, source=source,
                               k=vectors.shape[1])


def save_kb(kb: KnowledgeBase, path: str) -> None:
    """Serialize the knowledge base (with its network snapshot) atomically."""
    if kb.network is None:
        raise ValueError("knowledge base has no network snapshot")
    net = kb.network
    cfg = kb.config
    w = _Writer()
    w.i64(kb.seed)
    w.blob(canonical_json(config_to_dict(cfg)).encode())

    for weight, score in zip(net.weights, net.scores):
        w.matrix(weight)
        w.matrix(score)

    for layer_words in kb.accumulated.words:
        w.words(layer_words)
    w.u32(len(kb.accumulated.tasks_included))
    for t in kb.accumulated.tasks_included:
        w.u32(t)

    task_ids = kb.task_ids()
    w.u32(len(task_ids))
    for t in task_ids:
        rec = kb.tasks[t]
        w.u32(t)
        w.f64(rec.mask.capacity_ratio)
        for layer_words in rec.mask.words:
            w.words(layer_words)
        _write_basis(w, rec.basis_cl)
        _write_basis(w, rec.basis_ori)
        w.matrix(net.heads[t])
        w.u32(len(net.biases[t]))
        for b in net.biases[t]:
            w.matrix(b)
        w.matrix(rec.memory.basis)
        w.f64(rec.reuse)
        if rec.verdict is None:
            w.blob(b"")
        else:
            w.blob(canonical_json(_verdict_to_dict(rec.verdict)).encode())

    body = w.payload()
    # header: magic, version, declared total file length
    header = MAGIC + struct.pack("<I", FORMAT_VERSION)
    total = len(header) + 8 + len(body) + 4
    payload = header + struct.pack("<Q", total) + body
    crc = zlib.crc32(payload) & 0xFFFFFFFF
    blob = payload + struct.pack("<I", crc)

    directory = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(blob)
            f.flush()
            os.fsync(f.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_kb(path: str) -> KnowledgeBase:
    """Read a knowledge-base file back; every field round-trips bit-exactly."""
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < 20:
        raise KbTruncatedError(f"file has only {len(blob)} bytes")
    if blob[:4] != MAGIC:
        raise KbFormatError(f"bad magic {blob[:4]!r}")
    version = struct.unpack("<I", blob[4:8])[0]
    if version > FORMAT_VERSION:
        raise KbVersionError(f"format version {version} is newer than {FORMAT_VERSION}")
    declared = struct.unpack("<Q", blob[8:16])[0]
    if len(blob) < declared:
        raise KbTruncatedError(f"header declares {declared} bytes, file has {len(blob)}")
    if len(blob) > declared:
        raise KbFormatError(f"{len(blob) - declared} trailing bytes after declared end")
    stored_crc = struct.unpack("<I", blob[-4:])[0]
    if zlib.crc32(blob[:-4]) & 0xFFFFFFFF != stored_crc:
        raise KbChecksumError("CRC-32 mismatch")

    r = _Reader(blob[:-4], offset=16)
    seed = r.i64()
    cfg = config_from_dict(json.loads(r.blob().decode()))

    weights = []
    scores = []
    for _ in cfg.network.weight_shapes:
        weights.append(r.matrix())
        scores.append(r.matrix())
    net = Network(config=cfg.network, weights=weights, scores=scores)

    shapes = cfg.network.weight_shapes
    accum_words = tuple(r.words() for _ in shapes)
    included = tuple(r.u32() for _ in range(r.u32()))
    accumulated = AccumulatedMask(shapes=shapes, words=accum_words, tasks_included=included)

    kb = KnowledgeBase(config=cfg, seed=seed, accumulated=accumulated, network=net)
    for _ in range(r.u32()):
        t = r.u32()
        capacity = r.f64()
        mask_words = tuple(r.words() for _ in shapes)
        mask = TaskMask(task_id=t, capacity_ratio=capacity, shapes=shapes, words=mask_words)
        basis_cl = _read_basis(r)
        basis_ori = _read_basis(r)
        net.heads[t] = r.matrix()
        net.biases[t] = [r.vector() for _ in range(r.u32())]
        memory_basis = r.matrix()
        reuse = r.f64()
        verdict_blob = r.blob()
        verdict = _verdict_from_dict(json.loads(verdict_blob.decode())) if verdict_blob else None
        kb.tasks[t] = TaskRecord(
            task_id=t,
            mask=mask,
            basis_cl=basis_cl,
            basis_ori=basis_ori,
            memory=SubspaceMemory(owner_task=t, basis=memory_basis, k=memory_basis.shape[1]),
            verdict=verdict,
            reuse=reuse,
        )
    return kb
