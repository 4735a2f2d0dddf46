"""Autoregressive decoder-only transformer over full z-space rows.

A sample is the row sequence ``[T, z_1, ..., z_N]`` where ``T`` is a constant
start token.  The decoder predicts row ``j+1`` from rows ``<= j`` (causal
self-attention) and attends to seven conditioning tokens built by a
per-feature feed-forward expansion of the normalized feature vector.
Training regresses the next row under teacher forcing; generation is a
greedy rollout of ``N`` rows.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from . import zspace
from .dataset import MAX_NODES, GraphSample, NormalizationParams
from .nn import Adam, GELU, LayerNorm, Linear, Module, NonFiniteError, TransformerBlock

N_COND = 7


@dataclass
class ArGenConfig:
    max_nodes: int = MAX_NODES
    dim: int = 64
    depth: int = 2
    heads: int = 4
    ff_mult: float = 4.0
    d_cond: int = 64

    @property
    def width(self) -> int:
        return 3 + self.max_nodes


PRESETS = {
    "desk": dict(dim=64, depth=2, heads=4, ff_mult=4.0, d_cond=64),
    "paper": dict(dim=512, depth=12, heads=16, ff_mult=4.0, d_cond=64),
}


class ConditionEncoder(Module):
    """[B, 7] -> [B, 7, d_c]: each feature gets its own affine expansion, then a shared MLP."""

    def __init__(self, d_cond: int, rng):
        super().__init__()
        self.param("W", rng.standard_normal((N_COND, d_cond)))
        self.param("b", rng.standard_normal((N_COND, d_cond)) * 0.1)
        self.act = self.child("act", GELU())
        self.proj = self.child("proj", Linear(d_cond, d_cond, rng))

    def forward(self, c):
        c = np.asarray(c)
        if c.ndim != 2 or c.shape[1] != N_COND:
            raise ValueError(f"conditioning must be [B, {N_COND}], got {c.shape}")
        self._c = c
        return self.proj.forward(self.act.forward(c[:, :, None] * self.params["W"] + self.params["b"]))

    def backward(self, dy):
        dh = self.act.backward(self.proj.backward(dy))
        self.grads["W"] += np.sum(dh * self._c[:, :, None], axis=0)
        self.grads["b"] += dh.sum(axis=0)
        return np.sum(dh * self.params["W"], axis=2)


class ArGenNet(Module):
    def __init__(self, cfg: ArGenConfig, rng):
        super().__init__()
        self.cfg = cfg
        w, d = cfg.width, cfg.dim
        self.cond = self.child("cond", ConditionEncoder(cfg.d_cond, rng))
        self.inp = self.child("inp", Linear(w, d, rng))
        self.param("pos", rng.standard_normal((cfg.max_nodes + 1, d)) * 0.02)
        self.blocks = [self.child(f"block{i}", TransformerBlock(d, cfg.heads, rng, d_context=cfg.d_cond,
                                                                ff_mult=cfg.ff_mult, causal=True))
                       for i in range(cfg.depth)]
        self.norm = self.child("norm", LayerNorm(d))
        self.out = self.child("out", Linear(d, w, rng, scale=0.1))

    def encode_condition(self, c):
        return self.cond.forward(c)

    def decode(self, rows, cprime):
        """Predicted next row for every position of ``rows`` ([B, T, 3+N])."""
        b, t, w = rows.shape
        if w != self.cfg.width:
            raise ValueError(f"rows must have width {self.cfg.width}, got {w}")
        if t > self.cfg.max_nodes + 1:
            raise ValueError(f"sequence of {t} rows exceeds N + 1 = {self.cfg.max_nodes + 1}")
        if not np.all(rows[:, 0] == zspace.START_TOKEN_VALUE):
            raise ValueError("sequence must begin with the start token")
        h = self.inp.forward(rows) + self.params["pos"][:t]
        for blk in self.blocks:
            h = blk.forward(h, cprime)
        self._t = t
        return self.out.forward(self.norm.forward(h))

    def forward(self, rows, c):
        return self.decode(rows, self.encode_condition(c))

    def backward(self, dy):
        dh = self.norm.backward(self.out.backward(dy))
        dctx = 0.0
        for blk in reversed(self.blocks):
            dh, dc = blk.backward(dh)
            dctx = dctx + dc
        self.grads["pos"][:self._t] += dh.sum(axis=0)
        drows = self.inp.backward(dh)
        self.cond.backward(dctx)
        return drows


class ArGenModel:
    model_kind = "argen"

    def __init__(self, preset: str = "desk", max_nodes: int = MAX_NODES, seed: int = 0,
                 normalization: NormalizationParams | None = None, dtype=np.float32, **overrides):
        kw = dict(PRESETS[preset])
        kw.update(overrides)
        self.preset = preset
        self.config = ArGenConfig(max_nodes=max_nodes, **kw)
        self.normalization = normalization
        self.net = ArGenNet(self.config, np.random.default_rng(seed)).astype(dtype)

    @property
    def max_nodes(self) -> int:
        return self.config.max_nodes

    def hyperparameters(self) -> dict:
        return {"preset": self.preset, "argen": asdict(self.config)}

    def encode(self, sample) -> np.ndarray:
        """Full z-space rows with the start token prepended: [N + 1, 3 + N]."""
        return zspace.prepend_start_token(zspace.encode_full(sample, self.normalization, self.max_nodes))

    def rollout(self, conds) -> np.ndarray:
        """Greedy generation of N rows per conditioning vector; returns [B, N, 3+N]."""
        dt = self.net.dtype
        conds = np.atleast_2d(np.asarray(conds, dtype=dt))
        b, w = conds.shape[0], self.config.width
        cprime = self.net.encode_condition(conds)
        rows = np.full((b, 1, w), zspace.START_TOKEN_VALUE, dtype=dt)
        for _ in range(self.max_nodes):
            nxt = self.net.decode(rows, cprime)[:, -1:]
            rows = np.concatenate([rows, nxt], axis=1)
        return rows[:, 1:]

    def sample(self, conds, rng=None) -> list[GraphSample]:
        return [zspace.decode_full(z, self.normalization) for z in self.rollout(conds)]

    def generate(self, cond, rng=None) -> GraphSample:
        return self.sample(np.asarray(cond)[None], rng)[0]


def ar_loss(model: ArGenModel, z_tok, conds, backward: bool = False) -> float:
    """Teacher-forced next-row MSE over all N predicted rows (padding included)."""
    dt = model.net.dtype
    z_tok = np.asarray(z_tok, dtype=dt)
    pred = model.net.forward(z_tok[:, :-1], np.asarray(conds, dtype=dt))
    diff = pred - z_tok[:, 1:]
    loss = float(np.mean(diff.astype(np.float64) ** 2))
    if not math.isfinite(loss):
        raise NonFiniteError("non-finite autoregressive loss")
    if backward:
        model.net.backward(2.0 * diff / diff.size)
    return loss


def ar_train_step(model: ArGenModel, z_tok, conds, optimizer: Adam) -> float:
    model.net.zero_grad()
    loss = ar_loss(model, z_tok, conds, backward=True)
    optimizer.step()
    return loss
