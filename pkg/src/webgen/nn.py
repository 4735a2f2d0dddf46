"""Small numpy neural-network toolkit with hand-written backward passes.

Every ``Module`` caches what it needs during ``forward`` and accumulates
parameter gradients in ``backward(dy)``, which returns the gradient with
respect to its input(s).  A module instance must be used at most once per
forward pass.  Arrays follow the dtype of the parameters; tests run in
float64, training uses float32.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


class NonFiniteError(FloatingPointError):
    """Raised when a forward or backward pass produces NaN or Inf."""


def check_finite(x: np.ndarray, what: str) -> np.ndarray:
    if not np.all(np.isfinite(x)):
        raise NonFiniteError(f"non-finite values in {what}")
    return x


class Module:
    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.children: dict[str, Module] = {}

    def param(self, name: str, value: np.ndarray) -> None:
        self.params[name] = value
        self.grads[name] = np.zeros_like(value)

    def child(self, name: str, mod: "Module") -> "Module":
        self.children[name] = mod
        return mod

    def named_parameters(self, prefix: str = ""):
        """Yield ``(qualified_name, owner, local_name)`` in a fixed order."""
        for k in self.params:
            yield prefix + k, self, k
        for n, c in self.children.items():
            yield from c.named_parameters(prefix + n + ".")

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: m.params[k] for name, m, k in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        for name, m, k in self.named_parameters():
            if name not in state:
                raise KeyError(f"missing parameter {name}")
            v = np.asarray(state[name])
            if v.shape != m.params[k].shape:
                raise ValueError(f"{name}: shape {v.shape} != {m.params[k].shape}")
            m.params[k] = v.astype(m.params[k].dtype).copy()

    def zero_grad(self) -> None:
        for _, m, k in self.named_parameters():
            m.grads[k][...] = 0

    def astype(self, dtype) -> "Module":
        for _, m, k in self.named_parameters():
            m.params[k] = m.params[k].astype(dtype)
            m.grads[k] = np.zeros_like(m.params[k])
        return self

    @property
    def dtype(self):
        for _, m, k in self.named_parameters():
            return m.params[k].dtype
        return np.float64

    def n_parameters(self) -> int:
        return sum(m.params[k].size for _, m, k in self.named_parameters())


def _init(rng, shape, fan_in, scale=1.0):
    return rng.standard_normal(shape) * (scale / math.sqrt(fan_in))


class Linear(Module):
    def __init__(self, n_in: int, n_out: int, rng, bias: bool = True, scale: float = 1.0):
        super().__init__()
        self.n_in, self.n_out = n_in, n_out
        self.param("W", _init(rng, (n_in, n_out), n_in, scale))
        self.bias = bias
        if bias:
            self.param("b", np.zeros(n_out))

    def forward(self, x):
        if x.shape[-1] != self.n_in:
            raise ValueError(f"Linear expects last dim {self.n_in}, got {x.shape}")
        self._x = x
        y = x @ self.params["W"]
        return y + self.params["b"] if self.bias else y

    def backward(self, dy):
        x2 = self._x.reshape(-1, self.n_in)
        d2 = dy.reshape(-1, self.n_out)
        self.grads["W"] += x2.T @ d2
        if self.bias:
            self.grads["b"] += d2.sum(axis=0)
        return dy @ self.params["W"].T


class Conv1d(Module):
    """Cross-correlation over ``[batch, channels, length]`` with zero padding."""

    def __init__(self, c_in: int, c_out: int, rng, kernel: int = 3, stride: int = 1,
                 padding: int | None = None, scale: float = 1.0):
        super().__init__()
        self.c_in, self.c_out, self.k, self.s = c_in, c_out, kernel, stride
        self.p = kernel // 2 if padding is None else padding
        self.param("W", _init(rng, (c_out, c_in, kernel), c_in * kernel, scale))
        self.param("b", np.zeros(c_out))

    def out_length(self, length: int) -> int:
        return (length + 2 * self.p - self.k) // self.s + 1

    def _tap(self, t, n_out):
        return slice(t, t + self.s * (n_out - 1) + 1, self.s)

    def forward(self, x):
        if x.ndim != 3 or x.shape[1] != self.c_in:
            raise ValueError(f"Conv1d expects [B, {self.c_in}, L], got {x.shape}")
        b, _, length = x.shape
        n_out = self.out_length(length)
        if n_out < 1:
            raise ValueError(f"input length {length} too short for kernel {self.k}")
        xp = np.pad(x, ((0, 0), (0, 0), (self.p, self.p)))
        # im2col: [B * L_out, C_in * k]
        cols = np.stack([xp[:, :, self._tap(t, n_out)] for t in range(self.k)], axis=-1)
        cols = cols.transpose(0, 2, 1, 3).reshape(b * n_out, self.c_in * self.k)
        self._cols, self._shape = cols, (b, length, xp.shape[2], n_out)
        y = cols @ self.params["W"].reshape(self.c_out, -1).T + self.params["b"]
        return y.reshape(b, n_out, self.c_out).transpose(0, 2, 1)

    def backward(self, dy):
        b, length, padded, n_out = self._shape
        d2 = dy.transpose(0, 2, 1).reshape(b * n_out, self.c_out)
        wm = self.params["W"].reshape(self.c_out, -1)
        self.grads["W"] += (d2.T @ self._cols).reshape(self.grads["W"].shape)
        self.grads["b"] += d2.sum(axis=0)
        dcols = (d2 @ wm).reshape(b, n_out, self.c_in, self.k).transpose(0, 2, 1, 3)
        dxp = np.zeros((b, self.c_in, padded), dtype=dy.dtype)
        for t in range(self.k):
            dxp[:, :, self._tap(t, n_out)] += dcols[..., t]
        return dxp[:, :, self.p:self.p + length]


class LayerNorm(Module):
    """Normalize over the last axis."""

    def __init__(self, dim: int, eps: float = 1e-5):
        super().__init__()
        self.eps = eps
        self.param("gamma", np.ones(dim))
        self.param("beta", np.zeros(dim))

    def forward(self, x):
        mu = x.mean(axis=-1, keepdims=True)
        xc = x - mu
        var = (xc * xc).mean(axis=-1, keepdims=True)
        inv = 1.0 / np.sqrt(var + self.eps)
        self._xhat, self._inv = xc * inv, inv
        return self._xhat * self.params["gamma"] + self.params["beta"]

    def backward(self, dy):
        xhat = self._xhat
        d = dy.shape[-1]
        self.grads["gamma"] += (dy * xhat).reshape(-1, d).sum(axis=0)
        self.grads["beta"] += dy.reshape(-1, d).sum(axis=0)
        dxh = dy * self.params["gamma"]
        return self._inv * (dxh - dxh.mean(axis=-1, keepdims=True)
                            - xhat * (dxh * xhat).mean(axis=-1, keepdims=True))


class ChannelNorm(LayerNorm):
    """LayerNorm over the channel axis of ``[B, C, L]`` tensors."""

    def forward(self, x):
        return super().forward(x.transpose(0, 2, 1)).transpose(0, 2, 1)

    def backward(self, dy):
        return super().backward(dy.transpose(0, 2, 1)).transpose(0, 2, 1)


class SiLU(Module):
    def forward(self, x):
        s = 1.0 / (1.0 + np.exp(-x))
        self._x, self._s = x, s
        return x * s

    def backward(self, dy):
        s = self._s
        return dy * (s + self._x * s * (1.0 - s))


_GELU_C = math.sqrt(2.0 / math.pi)


class GELU(Module):
    """Tanh approximation of GELU."""

    def forward(self, x):
        u = _GELU_C * (x + 0.044715 * x * x * x)
        th = np.tanh(u)
        self._x, self._th = x, th
        return 0.5 * x * (1.0 + th)

    def backward(self, dy):
        x, th = self._x, self._th
        du = _GELU_C * (1.0 + 3 * 0.044715 * x * x)
        return dy * (0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * du)


def softmax(x, axis=-1):
    m = np.max(x, axis=axis, keepdims=True)
    e = np.exp(x - m)
    return e / e.sum(axis=axis, keepdims=True)


def causal_mask(t: int, s: int | None = None) -> np.ndarray:
    """Additive mask: 0 where key position <= query position, -inf above."""
    s = t if s is None else s
    return np.where(np.arange(s)[None, :] <= np.arange(t)[:, None], 0.0, -np.inf)


class MultiHeadAttention(Module):
    """softmax((Q K^T + M) / sqrt(d_k)) V per head, heads concatenated then projected.

    Self-attention when ``forward`` gets no context; cross-attention (queries
    from ``x``, keys/values from ``ctx``) otherwise.
    """

    def __init__(self, d_model: int, heads: int, rng, d_context: int | None = None,
                 causal: bool = False):
        super().__init__()
        if d_model % heads:
            raise ValueError(f"d_model {d_model} not divisible by {heads} heads")
        self.d, self.h, self.dh = d_model, heads, d_model // heads
        self.causal = causal
        d_ctx = d_model if d_context is None else d_context
        self.q = self.child("q", Linear(d_model, d_model, rng, bias=False))
        self.k = self.child("k", Linear(d_ctx, d_model, rng, bias=False))
        self.v = self.child("v", Linear(d_ctx, d_model, rng, bias=False))
        self.o = self.child("o", Linear(d_model, d_model, rng))

    def _split(self, x):
        b, t, _ = x.shape
        return x.reshape(b, t, self.h, self.dh).transpose(0, 2, 1, 3)

    def _merge(self, x):
        b, _, t, _ = x.shape
        return x.transpose(0, 2, 1, 3).reshape(b, t, self.d)

    def forward(self, x, ctx=None):
        self._is_self = ctx is None
        c = x if ctx is None else ctx
        if x.ndim != 3 or c.ndim != 3 or x.shape[0] != c.shape[0]:
            raise ValueError(f"attention shapes mismatch: {x.shape} vs {c.shape}")
        q, k, v = self._split(self.q.forward(x)), self._split(self.k.forward(c)), self._split(self.v.forward(c))
        scores = q @ k.transpose(0, 1, 3, 2)
        if self.causal:
            scores = scores + causal_mask(x.shape[1], c.shape[1]).astype(scores.dtype)
        p = softmax(scores / math.sqrt(self.dh))
        self._q, self._k, self._v, self._p = q, k, v, p
        return self.o.forward(self._merge(p @ v))

    @property
    def last_weights(self) -> np.ndarray:
        return self._p

    def backward(self, dy):
        q, k, v, p = self._q, self._k, self._v, self._p
        do = self._split(self.o.backward(dy))
        dp = do @ v.transpose(0, 1, 3, 2)
        dv = p.transpose(0, 1, 3, 2) @ do
        ds = p * (dp - np.sum(dp * p, axis=-1, keepdims=True)) / math.sqrt(self.dh)
        dq = ds @ k
        dk = ds.transpose(0, 1, 3, 2) @ q
        dx = self.q.backward(self._merge(dq))
        dc = self.k.backward(self._merge(dk)) + self.v.backward(self._merge(dv))
        if self._is_self:
            return dx + dc
        return dx, dc


def fourier_frequencies(dim: int) -> np.ndarray:
    if dim % 2:
        raise ValueError(f"Fourier embedding dimension must be even, got {dim}")
    return 10000.0 ** (-2.0 * np.arange(dim // 2) / dim)


def fourier_embed(c, dim: int) -> np.ndarray:
    """Interleaved ``sin(c w_k), cos(c w_k)`` for each scalar in ``c``: shape ``c.shape + (dim,)``."""
    w = fourier_frequencies(dim)
    c = np.asarray(c)
    arg = c[..., None] * w.astype(c.dtype if c.dtype.kind == "f" else np.float64)
    out = np.empty(c.shape + (dim,), dtype=arg.dtype)
    out[..., 0::2] = np.sin(arg)
    out[..., 1::2] = np.cos(arg)
    return out


class FourierEmbedding(Module):
    """Parameter-free sinusoidal embedding with a backward pass to its input."""

    def __init__(self, dim: int):
        super().__init__()
        self.dim = dim
        self.w = fourier_frequencies(dim)

    def forward(self, c):
        self._c = c
        return fourier_embed(c, self.dim)

    def backward(self, dy):
        arg = self._c[..., None] * self.w
        return np.sum(dy[..., 0::2] * self.w * np.cos(arg) - dy[..., 1::2] * self.w * np.sin(arg), axis=-1)


class FeedForward(Module):
    def __init__(self, dim: int, mult: float, rng):
        super().__init__()
        hidden = int(dim * mult)
        self.fc1 = self.child("fc1", Linear(dim, hidden, rng))
        self.act = self.child("act", GELU())
        self.fc2 = self.child("fc2", Linear(hidden, dim, rng))

    def forward(self, x):
        return self.fc2.forward(self.act.forward(self.fc1.forward(x)))

    def backward(self, dy):
        return self.fc1.backward(self.act.backward(self.fc2.backward(dy)))


class TransformerBlock(Module):
    """Pre-norm block: self-attention, optional cross-attention, feed-forward."""

    def __init__(self, dim: int, heads: int, rng, d_context: int | None = None,
                 ff_mult: float = 4.0, causal: bool = False):
        super().__init__()
        self.cross = d_context is not None
        self.n1 = self.child("n1", LayerNorm(dim))
        self.sa = self.child("sa", MultiHeadAttention(dim, heads, rng, causal=causal))
        if self.cross:
            self.n2 = self.child("n2", LayerNorm(dim))
            self.ca = self.child("ca", MultiHeadAttention(dim, heads, rng, d_context=d_context))
        self.n3 = self.child("n3", LayerNorm(dim))
        self.ff = self.child("ff", FeedForward(dim, ff_mult, rng))

    def forward(self, x, ctx=None):
        h = x + self.sa.forward(self.n1.forward(x))
        if self.cross:
            h = h + self.ca.forward(self.n2.forward(h), ctx)
        return h + self.ff.forward(self.n3.forward(h))

    def backward(self, dy):
        dh = dy + self.n3.backward(self.ff.backward(dy))
        dctx = None
        if self.cross:
            da, dctx = self.ca.backward(dh)
            dh = dh + self.n2.backward(da)
        dx = dh + self.n1.backward(self.sa.backward(dh))
        return dx, dctx


class ResnetBlock1d(Module):
    """Two conv layers with a scale/shift modulation from a conditioning vector."""

    def __init__(self, c_in: int, c_out: int, d_cond: int, rng):
        super().__init__()
        self.c_out = c_out
        self.n1 = self.child("n1", ChannelNorm(c_in))
        self.a1 = self.child("a1", SiLU())
        self.conv1 = self.child("conv1", Conv1d(c_in, c_out, rng))
        self.film = self.child("film", Linear(d_cond, 2 * c_out, rng, scale=0.1))
        self.n2 = self.child("n2", ChannelNorm(c_out))
        self.a2 = self.child("a2", SiLU())
        self.conv2 = self.child("conv2", Conv1d(c_out, c_out, rng, scale=0.5))
        self.skip = self.child("skip", Conv1d(c_in, c_out, rng, kernel=1)) if c_in != c_out else None

    def forward(self, x, cond):
        h = self.conv1.forward(self.a1.forward(self.n1.forward(x)))
        ss = self.film.forward(cond)
        scale, shift = ss[:, :self.c_out, None], ss[:, self.c_out:, None]
        n = self.n2.forward(h)
        self._n, self._scale = n, scale
        h = self.conv2.forward(self.a2.forward(n * (1.0 + scale) + shift))
        return h + (self.skip.forward(x) if self.skip else x)

    def backward(self, dy):
        dm = self.a2.backward(self.conv2.backward(dy))
        dss = np.concatenate([np.sum(dm * self._n, axis=2), np.sum(dm, axis=2)], axis=1)
        dcond = self.film.backward(dss)
        dh = self.n2.backward(dm * (1.0 + self._scale))
        dx = self.n1.backward(self.a1.backward(self.conv1.backward(dh)))
        dx = dx + (self.skip.backward(dy) if self.skip else dy)
        return dx, dcond


class AttentionBlock1d(Module):
    """TransformerBlock applied along the length axis of ``[B, C, L]`` tensors."""

    def __init__(self, channels: int, heads: int, d_context: int, ff_mult: float, rng):
        super().__init__()
        self.block = self.child("block", TransformerBlock(channels, heads, rng, d_context, ff_mult))

    def forward(self, x, ctx):
        return self.block.forward(x.transpose(0, 2, 1), ctx).transpose(0, 2, 1)

    def backward(self, dy):
        dx, dctx = self.block.backward(dy.transpose(0, 2, 1))
        return dx.transpose(0, 2, 1), dctx


class Adam:
    """Bias-corrected Adam over all parameters of a module."""

    def __init__(self, module: Module, lr: float = 2e-4, betas=(0.9, 0.999), eps: float = 1e-8,
                 clip_norm: float | None = None):
        self.module, self.lr, self.eps, self.clip_norm = module, lr, eps, clip_norm
        self.b1, self.b2 = betas
        self.t = 0
        self.m = {n: np.zeros_like(mod.params[k]) for n, mod, k in module.named_parameters()}
        self.v = {n: np.zeros_like(mod.params[k]) for n, mod, k in module.named_parameters()}

    def step(self) -> float:
        """Apply one update from the accumulated gradients; returns the gradient norm."""
        named = list(self.module.named_parameters())
        for n, mod, k in named:
            if mod.grads[k].shape != mod.params[k].shape:
                raise ValueError(f"{n}: gradient shape {mod.grads[k].shape} != {mod.params[k].shape}")
        gnorm = math.sqrt(sum(float(np.sum(mod.grads[k].astype(np.float64) ** 2)) for _, mod, k in named))
        if not math.isfinite(gnorm):
            raise NonFiniteError("non-finite gradient")
        factor = 1.0
        if self.clip_norm is not None and gnorm > self.clip_norm:
            factor = self.clip_norm / gnorm
        self.t += 1
        c1, c2 = 1.0 - self.b1 ** self.t, 1.0 - self.b2 ** self.t
        for n, mod, k in named:
            g = mod.grads[k] * factor if factor != 1.0 else mod.grads[k]
            m, v = self.m[n], self.v[n]
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            mod.params[k] -= (self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(mod.params[k].dtype)
        return gnorm


# --------------------------------------------------------------------------
# gradient verification

@dataclass
class GradCheckReport:
    errors: dict[str, float] = field(default_factory=dict)

    @property
    def max_error(self) -> float:
        return max(self.errors.values(), default=0.0)

    def passed(self, tol: float) -> bool:
        return self.max_error <= tol


def _rel_error(a: np.ndarray, n: np.ndarray, floor: float = 1e-10) -> float:
    denom = max(np.linalg.norm(a), np.linalg.norm(n))
    if denom < floor:
        return 0.0
    return float(np.linalg.norm(a - n) / denom)


def grad_check(module: Module, inputs: tuple, wrt=(0,), check_params: bool = True,
               h: float = 1e-5, max_entries: int = 12, seed: int = 0) -> GradCheckReport:
    """Compare ``backward`` against central differences of ``sum(forward(*inputs) * R)``.

    ``R`` is a fixed random cotangent.  Up to ``max_entries`` randomly chosen
    entries of each checked input/parameter tensor are perturbed; the error
    per tensor is the norm-wise relative difference on those entries.
    """
    rng = np.random.default_rng(seed)
    inputs = list(inputs)
    out = module.forward(*inputs)
    r = rng.standard_normal(out.shape)
    module.zero_grad()
    grads = module.backward(r)
    if not isinstance(grads, tuple):
        grads = (grads,)

    def loss():
        return float(np.sum(module.forward(*inputs) * r))

    def fd(arr, idx):
        old = arr[idx]
        arr[idx] = old + h
        up = loss()
        arr[idx] = old - h
        down = loss()
        arr[idx] = old
        return (up - down) / (2 * h)

    def pick(shape):
        size = int(np.prod(shape))
        flat = rng.choice(size, size=min(size, max_entries), replace=False)
        return [np.unravel_index(i, shape) for i in flat]

    report = GradCheckReport()
    for pos, gi in zip(wrt, grads):
        x = inputs[pos] = np.array(inputs[pos], dtype=np.float64)
        idxs = pick(x.shape)
        a = np.array([gi[i] for i in idxs])
        n = np.array([fd(x, i) for i in idxs])
        report.errors[f"input{pos}"] = _rel_error(a, n)
    if check_params:
        for name, m, k in module.named_parameters():
            p = m.params[k]
            idxs = pick(p.shape)
            a = np.array([m.grads[k][i] for i in idxs])
            n = np.array([fd(p, i) for i in idxs])
            report.errors[name] = _rel_error(a, n)
    return report
