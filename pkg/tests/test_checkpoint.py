import struct

import numpy as np
import pytest

from webgen.argen import ArGenModel
from webgen.checkpoint import MAGIC, CheckpointError, load_checkpoint, read_header, save_checkpoint
from webgen.dataset import NormalizationParams
from webgen.diffusion import DiffusionModel

P = NormalizationParams(0.05, np.linspace(-1, 0, 7), np.linspace(1, 2, 7))


def small_argen(seed=0):
    return ArGenModel("desk", max_nodes=8, seed=seed, normalization=P, dim=16, depth=1, heads=2, d_cond=8)


def small_diffusion(kind="sparse"):
    return DiffusionModel(kind, "desk", max_nodes=16, seed=0, normalization=P,
                          channels=4, n_blocks=[1, 1], heads=2, d_cond=8)


def perturb(model, seed=1):
    rng = np.random.default_rng(seed)
    state = {k: v + 0.05 * rng.standard_normal(v.shape).astype(v.dtype)
             for k, v in model.net.state_dict().items()}
    model.net.load_state_dict(state)
    return model


def test_argen_round_trip_generates_identically(tmp_path):
    m = perturb(small_argen())
    f = tmp_path / "m.ckpt"
    save_checkpoint(m, f, extra={"steps": 3})
    back = load_checkpoint(f, expect_kind="argen")
    assert back.config == m.config
    assert back.normalization.to_dict() == P.to_dict()
    for k, v in m.net.state_dict().items():
        assert np.array_equal(back.net.state_dict()[k], v)
    c = np.random.default_rng(0).uniform(-1, 1, (3, 7))
    assert np.array_equal(back.rollout(c), m.rollout(c))
    assert read_header(f)[0]["extra"] == {"steps": 3}


@pytest.mark.parametrize("kind", ["sparse", "full"])
def test_diffusion_round_trip(tmp_path, kind):
    m = perturb(small_diffusion(kind))
    f = tmp_path / "d.ckpt"
    save_checkpoint(m, f)
    back = load_checkpoint(f)
    assert back.model_kind == m.model_kind
    z = np.random.default_rng(0).uniform(-1, 1, (2,) + m.z_shape).astype(np.float32)
    c = np.zeros((2, 7), np.float32)
    i = np.array([5, 40])
    assert np.array_equal(back.predict_noise(z, i, c), m.predict_noise(z, i, c))


def test_kind_mismatch(tmp_path):
    f = tmp_path / "d.ckpt"
    save_checkpoint(small_diffusion(), f)
    with pytest.raises(CheckpointError, match="expected argen"):
        load_checkpoint(f, expect_kind="argen")


def test_corrupt_files(tmp_path):
    f = tmp_path / "m.ckpt"
    save_checkpoint(small_argen(), f)
    data = f.read_bytes()
    (tmp_path / "trunc.ckpt").write_bytes(data[:-10])
    with pytest.raises(CheckpointError, match="bytes of parameters"):
        load_checkpoint(tmp_path / "trunc.ckpt")
    (tmp_path / "magic.ckpt").write_bytes(b"NOTACKPT" + data[8:])
    with pytest.raises(CheckpointError, match="magic"):
        load_checkpoint(tmp_path / "magic.ckpt")
    (tmp_path / "ver.ckpt").write_bytes(MAGIC + struct.pack("<I", 99) + data[12:])
    with pytest.raises(CheckpointError, match="version 99"):
        load_checkpoint(tmp_path / "ver.ckpt")
    (tmp_path / "head.ckpt").write_bytes(data[:30])
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "head.ckpt")
