"""Conditional analog diffusion over sparse or full z-space matrices.

Noising is a deterministic path per draw: one standard normal direction
``eta`` is scaled by per-step standard deviations ``sigma_k``, so the noise
added at step ``k`` is ``sigma_k * eta`` and after ``i`` steps

    z_i = z_0 + s_i * eta,        s_i = sigma_1 + ... + sigma_i.

The network predicts the step noise ``sigma_i * eta`` from ``(z_i, i, C)``
and sampling removes it step by step, ``z_{i-1} = z_i - eps'``, starting
from ``z_F ~ Normal(0, s_F^2)``.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import zspace
from .dataset import MAX_NODES, GraphSample, NormalizationParams
from .graph import NEIGH_MAX
from .nn import (Adam, AttentionBlock1d, ChannelNorm, Conv1d, FourierEmbedding, GELU, Linear,
                 Module, NonFiniteError, ResnetBlock1d, SiLU, check_finite)

N_STEPS = 96
N_COND = 7
CLAMP = 1.05


@dataclass(frozen=True)
class NoiseSchedule:
    """Geometric per-step noise levels, largest at step F."""

    n_steps: int = N_STEPS
    sigma_min: float = 0.01
    sigma_max: float = 1.0

    @property
    def sigmas(self) -> np.ndarray:
        """sigma_1 .. sigma_F (index 0 is step 1)."""
        f = self.n_steps
        if self.sigma_max == 0:
            return np.zeros(f)
        if f == 1:
            return np.array([self.sigma_max])
        i = np.arange(1, f + 1)
        return self.sigma_max * (self.sigma_min / self.sigma_max) ** ((f - i) / (f - 1))

    @property
    def levels(self) -> np.ndarray:
        """Cumulative noise scale s_1 .. s_F."""
        return np.cumsum(self.sigmas)

    def sigma(self, i) -> np.ndarray:
        return self.sigmas[np.asarray(i) - 1]

    def level(self, i) -> np.ndarray:
        return self.levels[np.asarray(i) - 1]

    @property
    def mean_step_variance(self) -> float:
        return float(np.mean(self.sigmas ** 2))


def _bcast(v, ndim):
    v = np.asarray(v, dtype=np.float64)
    return v.reshape(v.shape + (1,) * (ndim - v.ndim))


def forward_noise(z0, i, schedule: NoiseSchedule, rng) -> tuple[np.ndarray, np.ndarray]:
    """Noise ``z0`` to step ``i`` (scalar or one step per batch item); returns (z_i, step noise)."""
    z0 = np.asarray(z0)
    i = np.asarray(i)
    if np.any(i < 1) or np.any(i > schedule.n_steps):
        raise ValueError(f"step index must be in 1..{schedule.n_steps}")
    eta = rng.standard_normal(z0.shape)
    s = _bcast(schedule.level(i), z0.ndim)
    sig = _bcast(schedule.sigma(i), z0.ndim)
    return (z0 + s * eta).astype(z0.dtype), (sig * eta).astype(z0.dtype)


# --------------------------------------------------------------------------
# U-Net


@dataclass
class UNetConfig:
    in_features: int
    length: int = MAX_NODES
    channels: int = 32
    multipliers: list = field(default_factory=lambda: [1, 2, 4])
    factors: list = field(default_factory=lambda: [4, 4])
    n_blocks: list = field(default_factory=lambda: [2, 2])
    attn_depths: list = field(default_factory=lambda: [1, 1])
    heads: int = 4
    attn_mult: float = 2.0
    d_cond: int = 64
    cond_scale: float = 50.0

    def __post_init__(self):
        n = len(self.factors)
        if len(self.multipliers) != n + 1 or len(self.n_blocks) != n or len(self.attn_depths) != n:
            raise ValueError("need len(multipliers) == len(factors)+1 == len(n_blocks)+1 == len(attn_depths)+1")
        if self.length % int(np.prod(self.factors)):
            raise ValueError(f"length {self.length} not divisible by factors {self.factors}")


def _preset_configs():
    return {
        "desk": dict(channels=32, n_blocks=[2, 2], heads=4, d_cond=64),
        "paper-sparse": dict(channels=128, n_blocks=[2, 2], heads=8, d_cond=256),
        "paper-full": dict(channels=256, n_blocks=[3, 3], heads=8, d_cond=256),
    }


class UNet1d(Module):
    """1D U-Net along the node axis with FiLM and cross-attention conditioning.

    Input/output ``[B, L, F]``; internally ``[B, channels, L]``.  The
    conditioning tokens are the seven features plus the step index, each
    Fourier-embedded and added to a learned token embedding.
    """

    def __init__(self, cfg: UNetConfig, rng):
        super().__init__()
        self.cfg = cfg
        c, dc = cfg.channels, cfg.d_cond
        n_tok = N_COND + 1
        self.fourier = FourierEmbedding(dc)
        self.param("tok", rng.standard_normal((n_tok, dc)) * 0.1)
        self.cond1 = self.child("cond1", Linear(dc, dc, rng))
        self.cond_act = self.child("cond_act", GELU())
        self.cond2 = self.child("cond2", Linear(dc, dc, rng))
        d_vec = 2 * dc
        self.conv_in = self.child("conv_in", Conv1d(cfg.in_features, c, rng))
        widths = [c * m for m in cfg.multipliers]
        self.down, self.enc_res, self.enc_attn = [], [], []
        for i, f in enumerate(cfg.factors):
            self.down.append(self.child(f"down{i}", Conv1d(widths[i], widths[i + 1], rng, stride=f, padding=1)))
            self.enc_res.append([self.child(f"enc{i}.res{j}", ResnetBlock1d(widths[i + 1], widths[i + 1], d_vec, rng))
                                 for j in range(cfg.n_blocks[i])])
            self.enc_attn.append([self.child(f"enc{i}.attn{j}", AttentionBlock1d(widths[i + 1], cfg.heads, dc, cfg.attn_mult, rng))
                                  for j in range(cfg.attn_depths[i])])
        wm = widths[-1]
        self.mid1 = self.child("mid.res0", ResnetBlock1d(wm, wm, d_vec, rng))
        self.mid_attn = self.child("mid.attn", AttentionBlock1d(wm, cfg.heads, dc, cfg.attn_mult, rng))
        self.mid2 = self.child("mid.res1", ResnetBlock1d(wm, wm, d_vec, rng))
        self.dec_res, self.dec_attn, self.up = {}, {}, {}
        for i in reversed(range(len(cfg.factors))):
            w = widths[i + 1]
            self.dec_res[i] = [self.child(f"dec{i}.res{j}", ResnetBlock1d(2 * w if j == 0 else w, w, d_vec, rng))
                               for j in range(cfg.n_blocks[i])]
            self.dec_attn[i] = [self.child(f"dec{i}.attn{j}", AttentionBlock1d(w, cfg.heads, dc, cfg.attn_mult, rng))
                                for j in range(cfg.attn_depths[i])]
            self.up[i] = self.child(f"up{i}", Conv1d(w, widths[i], rng))
        self.res_out = self.child("res_out", ResnetBlock1d(2 * c, c, d_vec, rng))
        self.norm_out = self.child("norm_out", ChannelNorm(c))
        self.act_out = self.child("act_out", SiLU())
        self.conv_out = self.child("conv_out", Conv1d(c, cfg.in_features, rng, scale=0.0))
        # pointwise input->output path, full rank in the feature axis even when channels < in_features
        self.skip = self.child("skip", Linear(cfg.in_features, cfg.in_features, rng, scale=0.0))

    # conditioning -------------------------------------------------------
    def _encode(self, t, cond):
        b = cond.shape[0]
        pos = np.concatenate([self.cfg.cond_scale * (cond + 1.0),
                              np.asarray(t, dtype=cond.dtype).reshape(b, 1)], axis=1)
        tokens = self.fourier.forward(pos).astype(cond.dtype) + self.params["tok"]
        ctx = self.cond2.forward(self.cond_act.forward(self.cond1.forward(tokens)))
        # FiLM vector: pooled feature tokens next to the time token
        return ctx, np.concatenate([ctx[:, :N_COND].mean(axis=1), ctx[:, N_COND]], axis=1)

    def _encode_backward(self, dctx):
        dtok = self.cond1.backward(self.cond_act.backward(self.cond2.backward(dctx)))
        self.grads["tok"] += dtok.sum(axis=0)

    # forward / backward ---------------------------------------------------
    def forward(self, z, t, cond):
        b, length, feat = z.shape
        if feat != self.cfg.in_features or length % int(np.prod(self.cfg.factors)):
            raise ValueError(f"UNet1d expects [B, L, {self.cfg.in_features}], got {z.shape}")
        if cond.shape != (b, N_COND):
            raise ValueError(f"conditioning must be [B, {N_COND}], got {cond.shape}")
        ctx, cvec = self._encode(t, cond)
        h = self.conv_in.forward(z.transpose(0, 2, 1))
        skips = [h]
        for i in range(len(self.cfg.factors)):
            h = self.down[i].forward(h)
            for blk in self.enc_res[i]:
                h = blk.forward(h, cvec)
            for blk in self.enc_attn[i]:
                h = blk.forward(h, ctx)
            skips.append(h)
        h = self.mid2.forward(self.mid_attn.forward(self.mid1.forward(h, cvec), ctx), cvec)
        self._split = []
        for i in reversed(range(len(self.cfg.factors))):
            s = skips.pop()
            self._split.append(h.shape[1])
            h = np.concatenate([h, s], axis=1)
            for blk in self.dec_res[i]:
                h = blk.forward(h, cvec)
            for blk in self.dec_attn[i]:
                h = blk.forward(h, ctx)
            h = self.up[i].forward(np.repeat(h, self.cfg.factors[i], axis=2))
        s = skips.pop()
        self._split.append(h.shape[1])
        h = self.res_out.forward(np.concatenate([h, s], axis=1), cvec)
        out = self.conv_out.forward(self.act_out.forward(self.norm_out.forward(h)))
        self._shape = ctx.shape
        return out.transpose(0, 2, 1) + self.skip.forward(z)

    def backward(self, dy):
        n_lv = len(self.cfg.factors)
        dctx = np.zeros(self._shape, dtype=dy.dtype)
        dc = self._shape[2]
        dvec = np.zeros((self._shape[0], 2 * dc), dtype=dy.dtype)
        splits = list(self._split)

        def res_back(blk, d):
            dx, dc = blk.backward(d)
            dvec[...] += dc
            return dx

        def attn_back(blk, d):
            dx, dc = blk.backward(d)
            dctx[...] += dc
            return dx

        dh = self.norm_out.backward(self.act_out.backward(self.conv_out.backward(dy.transpose(0, 2, 1))))
        dh = res_back(self.res_out, dh)
        k = splits.pop()
        dskips = [dh[:, k:]]
        dh = dh[:, :k]
        for i in range(n_lv):
            f = self.cfg.factors[i]
            du = self.up[i].backward(dh)
            dh = du.reshape(du.shape[0], du.shape[1], -1, f).sum(axis=3)
            for blk in reversed(self.dec_attn[i]):
                dh = attn_back(blk, dh)
            for blk in reversed(self.dec_res[i]):
                dh = res_back(blk, dh)
            k = splits.pop()
            dskips.append(dh[:, k:])
            dh = dh[:, :k]
        dh = res_back(self.mid2, dh)
        dh = attn_back(self.mid_attn, dh)
        dh = res_back(self.mid1, dh)
        # dskips[0] is the input skip, dskips[i + 1] the output of encoder level i
        for i in reversed(range(n_lv)):
            dh = dh + dskips[i + 1]
            for blk in reversed(self.enc_attn[i]):
                dh = attn_back(blk, dh)
            for blk in reversed(self.enc_res[i]):
                dh = res_back(blk, dh)
            dh = self.down[i].backward(dh)
        dh = dh + dskips[0]
        dz = self.conv_in.backward(dh)
        dctx[:, :N_COND] += dvec[:, None, :dc] / N_COND
        dctx[:, N_COND] += dvec[:, dc:]
        self._encode_backward(dctx)
        return dz.transpose(0, 2, 1) + self.skip.backward(dy)


# --------------------------------------------------------------------------
# model wrapper


class DiffusionModel:
    """Denoiser for one z-space layout (``kind`` = "sparse" or "full")."""

    kinds = {"sparse": "sparse-diffusion", "full": "full-diffusion"}

    def __init__(self, kind: str, preset: str = "desk", max_nodes: int = MAX_NODES,
                 schedule: NoiseSchedule | None = None, seed: int = 0,
                 normalization: NormalizationParams | None = None, dtype=np.float32,
                 sigma_data: float = 0.5, **overrides):
        if kind not in self.kinds:
            raise ValueError(f"unknown diffusion kind {kind!r}")
        self.kind, self.preset, self.max_nodes = kind, preset, max_nodes
        self.schedule = schedule or NoiseSchedule()
        self.sigma_data = sigma_data
        self.normalization = normalization
        feat = 3 + (NEIGH_MAX if kind == "sparse" else max_nodes)
        pkey = preset if preset == "desk" else f"paper-{kind}"
        cfg_kw = dict(_preset_configs()[pkey])
        cfg_kw.update(overrides)
        self.config = UNetConfig(in_features=feat, length=max_nodes, **cfg_kw)
        self.net = UNet1d(self.config, np.random.default_rng(seed)).astype(dtype)

    @property
    def model_kind(self) -> str:
        return self.kinds[self.kind]

    def hyperparameters(self) -> dict:
        return {"kind": self.kind, "preset": self.preset, "max_nodes": self.max_nodes,
                "sigma_data": self.sigma_data, "schedule": asdict(self.schedule),
                "unet": asdict(self.config)}

    def _scales(self, i, ndim):
        s = self.schedule.level(i)
        c_in = 1.0 / np.sqrt(self.sigma_data ** 2 + s ** 2)
        return _bcast(c_in, ndim), _bcast(self.schedule.sigma(i), ndim)

    def predict_noise(self, z, i, cond):
        """eps' = sigma_i * net(c_in(i) * z_i, i, C)."""
        dt = self.net.dtype
        z = np.asarray(z, dtype=dt)
        b = z.shape[0]
        i = np.broadcast_to(np.asarray(i), (b,))
        cond = np.broadcast_to(np.asarray(cond, dtype=dt), (b, N_COND))
        c_in, sig = self._scales(i, z.ndim)
        self._out_scale = sig.astype(dt)
        return self._out_scale * self.net.forward((c_in * z).astype(dt), i, cond)

    def backward(self, d_eps):
        self.net.backward((d_eps * self._out_scale).astype(self.net.dtype))

    # encoding ----------------------------------------------------------------
    def encode(self, sample) -> np.ndarray:
        fn = zspace.encode_sparse if self.kind == "sparse" else zspace.encode_full
        return fn(sample, self.normalization, self.max_nodes)

    def decode(self, z) -> GraphSample:
        if self.kind == "sparse":
            return zspace.decode_sparse(z, self.normalization, self.max_nodes)
        return zspace.decode_full(z, self.normalization)

    def sample(self, conds, rng) -> list[GraphSample]:
        conds = np.atleast_2d(np.asarray(conds, dtype=np.float64))
        z = denoise_sample(self, conds, self.schedule, rng, self.z_shape)
        return [self.decode(zb) for zb in z]

    @property
    def z_shape(self) -> tuple[int, int]:
        return (self.max_nodes, self.config.in_features)


def diffusion_loss(model, z0, cond, schedule: NoiseSchedule, rng, backward: bool = False) -> float:
    """Mean squared error between true and predicted step noise at random steps."""
    z0 = np.asarray(z0)
    b = z0.shape[0]
    steps = rng.integers(1, schedule.n_steps + 1, size=b)
    zi, eps = forward_noise(z0, steps, schedule, rng)
    pred = model.predict_noise(zi, steps, cond)
    diff = pred - eps
    loss = float(np.mean(diff.astype(np.float64) ** 2))
    if not math.isfinite(loss):
        raise NonFiniteError(f"non-finite diffusion loss (steps {steps.tolist()}, "
                             f"|pred| max {np.nanmax(np.abs(pred))})")
    if backward:
        model.backward(2.0 * diff / diff.size)
    return loss


def train_step(model: DiffusionModel, z0, cond, optimizer: Adam, rng) -> float:
    model.net.zero_grad()
    loss = diffusion_loss(model, z0, cond, model.schedule, rng, backward=True)
    optimizer.step()
    return loss


def denoise_sample(model, cond, schedule: NoiseSchedule, rng, shape) -> np.ndarray:
    """Run the reverse chain from ``z_F ~ Normal(0, s_F^2)`` for each conditioning row."""
    cond = np.atleast_2d(np.asarray(cond, dtype=np.float64))
    b = cond.shape[0]
    z = rng.standard_normal((b,) + tuple(shape)) * schedule.levels[-1]
    for i in range(schedule.n_steps, 0, -1):
        z = z - model.predict_noise(z, np.full(b, i), cond)
        check_finite(z, f"denoising step {i}")
    return np.clip(z, -CLAMP, CLAMP)
