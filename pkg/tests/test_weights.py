"""Tests for the PTAW weight container: roundtrip fidelity and corruption rejection."""

import struct

import numpy as np
import pytest

from ptanet.model import build_network
from ptanet.weights import (
    MAGIC,
    VERSION,
    WeightsError,
    load_model,
    read_arrays,
    save_model,
    write_arrays,
)


def sample_items(seed=0):
    rng = np.random.default_rng(seed)
    return [
        ("alpha.weight", rng.standard_normal((4, 3, 3, 3)).astype(np.float32)),
        ("alpha.bias", rng.standard_normal(4).astype(np.float32)),
        ("beta.scalar", np.float32(2.5).reshape(())),
        ("gamma.empty", np.zeros((0, 7), dtype=np.float32)),
    ]


def write_blob(tmp_path, items):
    path = str(tmp_path / "w.ptaw")
    write_arrays(path, items)
    return path


class TestRoundtrip:
    def test_bitwise(self, tmp_path):
        items = sample_items()
        path = write_blob(tmp_path, items)
        back = read_arrays(path)
        assert list(back) == [name for name, _ in items]
        for name, arr in items:
            assert back[name].dtype == np.float32
            assert back[name].shape == arr.shape
            assert np.array_equal(back[name], arr)

    def test_empty_container(self, tmp_path):
        path = write_blob(tmp_path, [])
        assert read_arrays(path) == {}

    def test_float64_input_narrowed(self, tmp_path):
        arr = np.array([1.0, 1e-9, np.pi])
        path = write_blob(tmp_path, [("x", arr)])
        assert np.array_equal(read_arrays(path)["x"], arr.astype(np.float32))

    def test_non_contiguous_input(self, tmp_path):
        arr = np.arange(12, dtype=np.float32).reshape(3, 4).T
        assert not arr.flags["C_CONTIGUOUS"]
        path = write_blob(tmp_path, [("t", arr)])
        assert np.array_equal(read_arrays(path)["t"], arr)

    def test_loaded_arrays_are_writable(self, tmp_path):
        # frombuffer views are read-only; the loader must hand out copies
        path = write_blob(tmp_path, [("x", np.zeros(3, dtype=np.float32))])
        arr = read_arrays(path)["x"]
        arr[0] = 1.0
        assert arr[0] == 1.0

    def test_same_items_same_bytes(self, tmp_path):
        a = write_blob(tmp_path, sample_items(1))
        b = str(tmp_path / "w2.ptaw")
        write_arrays(b, sample_items(1))
        assert open(a, "rb").read() == open(b, "rb").read()


class TestHandBuiltContainer:
    def test_minimal_file_decodes(self, tmp_path):
        # independent byte-level encoding of one [2] array, values 1.0 and -2.0
        payload = struct.pack("<2f", 1.0, -2.0)
        blob = (
            b"PTAW"
            + struct.pack("<I", 1)          # version
            + struct.pack("<I", 1)          # count
            + struct.pack("<H", 1) + b"w"   # name
            + struct.pack("<BB", 0, 1)      # dtype f32, ndim 1
            + struct.pack("<I", 2)          # dims
            + payload
            + struct.pack("<Q", len(payload))
        )
        path = tmp_path / "hand.ptaw"
        path.write_bytes(blob)
        out = read_arrays(str(path))
        assert np.array_equal(out["w"], np.array([1.0, -2.0], dtype=np.float32))

    def test_writer_emits_that_exact_layout(self, tmp_path):
        path = write_blob(
            tmp_path, [("w", np.array([1.0, -2.0], dtype=np.float32))]
        )
        payload = struct.pack("<2f", 1.0, -2.0)
        expect = (
            b"PTAW" + struct.pack("<I", 1) + struct.pack("<I", 1)
            + struct.pack("<H", 1) + b"w" + struct.pack("<BB", 0, 1)
            + struct.pack("<I", 2) + payload + struct.pack("<Q", len(payload))
        )
        assert open(path, "rb").read() == expect


def corrupt(path, tmp_path, mutate):
    blob = bytearray(open(path, "rb").read())
    blob = mutate(blob)
    out = tmp_path / "corrupt.ptaw"
    out.write_bytes(bytes(blob))
    return str(out)


class TestCorruptionRejected:
    def test_duplicate_name_on_write(self, tmp_path):
        items = [("w", np.zeros(1, dtype=np.float32))] * 2
        with pytest.raises(WeightsError, match="duplicate"):
            write_arrays(str(tmp_path / "d.ptaw"), items)

    def test_missing_file(self, tmp_path):
        with pytest.raises(WeightsError, match="cannot read"):
            read_arrays(str(tmp_path / "absent.ptaw"))

    def test_bad_magic(self, tmp_path):
        path = write_blob(tmp_path, sample_items())
        bad = corrupt(path, tmp_path, lambda b: b"XXXX" + b[4:])
        with pytest.raises(WeightsError, match="magic"):
            read_arrays(bad)

    def test_bad_version(self, tmp_path):
        path = write_blob(tmp_path, sample_items())
        bad = corrupt(
            path, tmp_path, lambda b: b[:4] + struct.pack("<I", 99) + b[8:]
        )
        with pytest.raises(WeightsError, match="version 99"):
            read_arrays(bad)

    def test_unknown_dtype_code(self, tmp_path):
        path = write_blob(tmp_path, [("w", np.zeros(2, dtype=np.float32))])

        def mutate(b):
            # dtype byte sits right after magic, version, count, name_len, name
            off = 4 + 4 + 4 + 2 + 1
            b[off] = 7
            return b

        with pytest.raises(WeightsError, match="dtype code 7"):
            read_arrays(corrupt(path, tmp_path, mutate))

    def test_truncated_header(self, tmp_path):
        path = write_blob(tmp_path, sample_items())
        bad = corrupt(path, tmp_path, lambda b: b[:10])
        with pytest.raises(WeightsError, match="truncated"):
            read_arrays(bad)

    def test_truncated_payload(self, tmp_path):
        path = write_blob(tmp_path, sample_items())
        bad = corrupt(path, tmp_path, lambda b: b[:-12])
        with pytest.raises(WeightsError, match="mismatch|truncated"):
            read_arrays(bad)

    def test_trailing_garbage(self, tmp_path):
        path = write_blob(tmp_path, sample_items())
        bad = corrupt(path, tmp_path, lambda b: b + b"\x00" * 16)
        with pytest.raises(WeightsError, match="mismatch"):
            read_arrays(bad)

    def test_corrupt_trailer_value(self, tmp_path):
        path = write_blob(tmp_path, sample_items())

        def mutate(b):
            good = struct.unpack("<Q", b[-8:])[0]
            return b[:-8] + struct.pack("<Q", good + 4) + b"\x00" * 4

        # payload grew by 4 and trailer claims 4 more: sizes disagree with manifest
        with pytest.raises(WeightsError, match="mismatch"):
            read_arrays(corrupt(path, tmp_path, mutate))

    def test_duplicate_name_in_file(self, tmp_path):
        entry = (
            struct.pack("<H", 1) + b"w" + struct.pack("<BB", 0, 1) + struct.pack("<I", 1)
        )
        payload = struct.pack("<2f", 0.0, 0.0)
        blob = (
            MAGIC + struct.pack("<I", VERSION) + struct.pack("<I", 2)
            + entry + entry + payload + struct.pack("<Q", len(payload))
        )
        path = tmp_path / "dup.ptaw"
        path.write_bytes(blob)
        with pytest.raises(WeightsError, match="duplicate"):
            read_arrays(str(path))


class TestModelHelpers:
    def test_save_load_transfers_full_state(self, tmp_path):
        src = build_network(seed=0)
        dst = build_network(seed=1)
        path = str(tmp_path / "model.ptaw")
        save_model(src, path)
        load_model(dst, path)
        for (na, a), (nb, b) in zip(src.state_items(), dst.state_items()):
            assert na == nb
            assert np.array_equal(a, b), na

    def test_save_is_deterministic(self, tmp_path):
        net = build_network(seed=3)
        p1, p2 = str(tmp_path / "a.ptaw"), str(tmp_path / "b.ptaw")
        save_model(net, p1)
        save_model(net, p2)
        assert open(p1, "rb").read() == open(p2, "rb").read()

    def test_load_rejects_foreign_container(self, tmp_path):
        path = write_blob(tmp_path, sample_items())
        with pytest.raises(ValueError, match="state mismatch"):
            load_model(build_network(seed=0), path)
