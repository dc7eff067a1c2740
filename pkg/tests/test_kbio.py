import struct

import numpy as np
import pytest

from maskcl.datasets import gen_similar
from maskcl.kbio import (
    KbChecksumError,
    KbFormatError,
    KbTruncatedError,
    KbVersionError,
    canonical_json,
    config_from_dict,
    config_to_dict,
    load_kb,
    save_kb,
)
from maskcl.learner import TrainConfig, run_sequence
from maskcl.network import NetworkConfig


@pytest.fixture(scope="module")
def trained():
    cfg = TrainConfig(
        network=NetworkConfig(layer_sizes=(16, 24, 20), head_size=3, max_tasks=8, seed=7),
        epochs=2, batch_size=10, lr=0.1, capacity_ratio=0.5, delta=0.1,
        probe_rate=0.5, seed=7,
    )
    tasks = gen_similar(3, dim=16, classes=3, samples_per_split=100, noise_scale=0.2, seed=4)
    return run_sequence(tasks, cfg)


def kb_path(tmp_path):
    return str(tmp_path / "run.kb")


class TestRoundTrip:
    def test_bit_exact(self, trained, tmp_path):
        path = kb_path(tmp_path)
        save_kb(trained.kb, path)
        loaded = load_kb(path)

        assert loaded.seed == trained.kb.seed
        assert loaded.config == trained.kb.config
        for a, b in zip(loaded.network.weights, trained.network.weights):
            assert a.tobytes() == b.tobytes()
        for a, b in zip(loaded.network.scores, trained.network.scores):
            assert a.tobytes() == b.tobytes()
        assert sorted(loaded.network.heads) == sorted(trained.network.heads)
        for t in trained.network.heads:
            assert loaded.network.heads[t].tobytes() == trained.network.heads[t].tobytes()
            for ba, bb in zip(loaded.network.biases[t], trained.network.biases[t]):
                assert ba.tobytes() == bb.tobytes()
        assert loaded.accumulated.tasks_included == trained.kb.accumulated.tasks_included
        for a, b in zip(loaded.accumulated.words, trained.kb.accumulated.words):
            assert np.array_equal(a, b)
        for t, rec in trained.kb.tasks.items():
            got = loaded.tasks[t]
            assert got.mask.capacity_ratio == rec.mask.capacity_ratio
            for a, b in zip(got.mask.words, rec.mask.words):
                assert np.array_equal(a, b)
            assert got.basis_cl.vectors.tobytes() == rec.basis_cl.vectors.tobytes()
            assert got.basis_ori.vectors.tobytes() == rec.basis_ori.vectors.tobytes()
            assert got.basis_cl.source == "continual"
            assert got.memory.basis.tobytes() == rec.memory.basis.tobytes()
            assert got.reuse == rec.reuse
            assert got.verdict == rec.verdict
        assert loaded.accumulated_consistent()

    def test_resave_is_byte_identical(self, trained, tmp_path):
        p1 = str(tmp_path / "a.kb")
        p2 = str(tmp_path / "b.kb")
        save_kb(trained.kb, p1)
        save_kb(load_kb(p1), p2)
        assert open(p1, "rb").read() == open(p2, "rb").read()


class TestCorruption:
    def test_flipped_byte_fails_checksum(self, trained, tmp_path):
        path = kb_path(tmp_path)
        save_kb(trained.kb, path)
        blob = bytearray(open(path, "rb").read())
        blob[len(blob) // 2] ^= 0xFF
        open(path, "wb").write(bytes(blob))
        with pytest.raises(KbChecksumError):
            load_kb(path)

    def test_truncated_file(self, trained, tmp_path):
        path = kb_path(tmp_path)
        save_kb(trained.kb, path)
        blob = open(path, "rb").read()
        open(path, "wb").write(blob[: len(blob) - 100])
        with pytest.raises(KbTruncatedError):
            load_kb(path)

    def test_newer_version_rejected(self, trained, tmp_path):
        path = kb_path(tmp_path)
        save_kb(trained.kb, path)
        blob = bytearray(open(path, "rb").read())
        blob[4:8] = struct.pack("<I", 99)
        open(path, "wb").write(bytes(blob))
        with pytest.raises(KbVersionError):
            load_kb(path)

    def test_bad_magic(self, trained, tmp_path):
        path = kb_path(tmp_path)
        save_kb(trained.kb, path)
        blob = bytearray(open(path, "rb").read())
        blob[0:4] = b"NOPE"
        open(path, "wb").write(bytes(blob))
        with pytest.raises(KbFormatError):
            load_kb(path)

    def test_trailing_garbage(self, trained, tmp_path):
        path = kb_path(tmp_path)
        save_kb(trained.kb, path)
        with open(path, "ab") as f:
            f.write(b"extra")
        with pytest.raises(KbFormatError):
            load_kb(path)


class TestConfigJson:
    def test_round_trip(self):
        cfg = TrainConfig(
            network=NetworkConfig(layer_sizes=(4, 3), head_size=2, max_tasks=2, seed=1),
            seed=9, delta=0.3,
        )
        assert config_from_dict(config_to_dict(cfg)) == cfg

    def test_canonical_json_sorted_compact(self):
        s = canonical_json({"b": 1, "a": [1.5, None]})
        assert s == '{"a":[1.5,null],"b":1}'

    def test_nan_rejected(self):
        with pytest.raises(ValueError):
            canonical_json({"x": float("nan")})
