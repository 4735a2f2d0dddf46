"""Minibatch training loops shared by the CLI, tests and demos."""
from __future__ import annotations

import logging
from typing import Callable

import numpy as np

from .argen import ArGenModel, ar_train_step
from .dataset import GraphSample
from .diffusion import DiffusionModel, train_step
from .nn import Adam

log = logging.getLogger(__name__)


def encode_samples(model, samples: list[GraphSample]) -> tuple[np.ndarray, np.ndarray]:
    """Stacked z-space tensors and normalized conditioning for ``samples``."""
    if model.normalization is None:
        raise ValueError("model has no normalization parameters")
    dt = model.net.dtype
    z = np.stack([model.encode(s) for s in samples]).astype(dt)
    c = np.stack([model.normalization.normalize_features(s.features) for s in samples]).astype(dt)
    return z, c


def fit(model, samples: list[GraphSample], steps: int, batch_size: int = 32, lr: float = 1e-3,
        seed: int = 0, clip_norm: float | None = 1.0,
        callback: Callable[[int, float], None] | None = None) -> list[float]:
    """Adam on random minibatches (with replacement); returns the per-step loss."""
    z, c = encode_samples(model, samples)
    opt = Adam(model.net, lr=lr, clip_norm=clip_norm)
    rng = np.random.default_rng(seed)
    losses = []
    for step in range(steps):
        idx = rng.integers(0, len(z), size=min(batch_size, len(z)))
        if isinstance(model, ArGenModel):
            loss = ar_train_step(model, z[idx], c[idx], opt)
        elif isinstance(model, DiffusionModel):
            loss = train_step(model, z[idx], c[idx], opt, rng)
        else:
            raise TypeError(f"cannot train {type(model).__name__}")
        losses.append(loss)
        if callback is not None:
            callback(step, loss)
    return losses
