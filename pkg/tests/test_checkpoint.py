import struct

import numpy as np
import pytest
import torch

from poisson_retinex.config import TrainConfig
from poisson_retinex.container import ContainerError, read_container, write_container
from poisson_retinex.trainer import (
    CheckpointShapeError,
    load_checkpoint,
    new_checkpoint,
    save_checkpoint,
)


def test_container_roundtrip(tmp_path):
    arrays = {
        "a": np.arange(12, dtype=np.float32).reshape(3, 4),
        "b/c": np.array([1.5, -2.25]),
        "scalar": np.array(7, dtype=np.int64),
    }
    write_container(tmp_path / "x.bin", arrays, {"k": [1, 2]})
    back, meta = read_container(tmp_path / "x.bin")
    assert meta == {"k": [1, 2]}
    for k, v in arrays.items():
        assert back[k].dtype == v.dtype and np.array_equal(back[k], v)


def test_container_byte_layout(tmp_path):
    write_container(tmp_path / "x.bin", {"w": np.array([1.0], dtype="<f8")}, {})
    raw = (tmp_path / "x.bin").read_bytes()
    assert raw[:8] == b"PRXARRS\0"
    version, meta_len = struct.unpack("<II", raw[8:16])
    assert version == 1 and raw[16 : 16 + meta_len] == b"{}"
    assert raw[-12:-4] == struct.pack("<d", 1.0)


@pytest.mark.parametrize("cut", [1, 5, 40])
def test_container_truncation(tmp_path, cut):
    write_container(tmp_path / "x.bin", {"w": np.ones((4, 4))}, {"m": 1})
    raw = (tmp_path / "x.bin").read_bytes()
    (tmp_path / "t.bin").write_bytes(raw[:-cut])
    with pytest.raises(ContainerError):
        read_container(tmp_path / "t.bin")


def test_container_bit_flip(tmp_path):
    write_container(tmp_path / "x.bin", {"w": np.ones((4, 4))}, {})
    raw = bytearray((tmp_path / "x.bin").read_bytes())
    raw[-20] ^= 0xFF
    (tmp_path / "x.bin").write_bytes(bytes(raw))
    with pytest.raises(ContainerError, match="checksum"):
        read_container(tmp_path / "x.bin")


def test_container_bad_magic(tmp_path):
    (tmp_path / "x.bin").write_bytes(b"hello world, not a container")
    with pytest.raises(ContainerError):
        read_container(tmp_path / "x.bin")


def _trained_checkpoint():
    ckpt = new_checkpoint(TrainConfig(width=8, seed=3, patch=8))
    for p in ckpt.params.parameters():
        p.grad = torch.ones_like(p)
    ckpt.optimizer.step()
    ckpt.epoch, ckpt.step = 2, 17
    return ckpt


def test_checkpoint_roundtrip_bit_exact(tmp_path):
    ckpt = _trained_checkpoint()
    save_checkpoint(ckpt, tmp_path / "c.bin")
    back = load_checkpoint(tmp_path / "c.bin")
    for (k, a), (k2, b) in zip(ckpt.params.state_dict().items(), back.params.state_dict().items()):
        assert k == k2 and torch.equal(a, b)
    for k, a in ckpt.optimizer.state_arrays().items():
        assert torch.equal(a, back.optimizer.state_arrays()[k])
    assert back.optimizer.t == 1 and back.epoch == 2 and back.step == 17
    assert back.config == ckpt.config


def test_checkpoint_truncated(tmp_path):
    save_checkpoint(_trained_checkpoint(), tmp_path / "c.bin")
    raw = (tmp_path / "c.bin").read_bytes()
    (tmp_path / "c.bin").write_bytes(raw[: len(raw) // 2])
    with pytest.raises(ContainerError, match="corrupt|truncated"):
        load_checkpoint(tmp_path / "c.bin")


def test_checkpoint_width_mismatch(tmp_path):
    save_checkpoint(_trained_checkpoint(), tmp_path / "c.bin")
    with pytest.raises(CheckpointShapeError):
        load_checkpoint(tmp_path / "c.bin", width=16)


def test_checkpoint_array_shape_mismatch(tmp_path):
    ckpt = _trained_checkpoint()
    save_checkpoint(ckpt, tmp_path / "c.bin")
    arrays, meta = read_container(tmp_path / "c.bin")
    arrays["param/stem.weight"] = arrays["param/stem.weight"][:4]
    write_container(tmp_path / "bad.bin", arrays, meta)
    with pytest.raises(CheckpointShapeError):
        load_checkpoint(tmp_path / "bad.bin")


def test_checkpoint_version_mismatch(tmp_path):
    save_checkpoint(_trained_checkpoint(), tmp_path / "c.bin")
    arrays, meta = read_container(tmp_path / "c.bin")
    meta["version"] = 99
    write_container(tmp_path / "v.bin", arrays, meta)
    with pytest.raises(ContainerError, match="version"):
        load_checkpoint(tmp_path / "v.bin")
