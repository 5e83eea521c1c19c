"""Small neural-net building blocks on top of the tensor module.

Parameters live in a ParamStore keyed by unique slash-separated names;
initialization is derived from (seed, parameter name) so models are
reproducible regardless of construction order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import DimensionError
from .seeding import SALT_INIT, name_salt, rng_for

__all__ = [
    "Parameter",
    "ParamStore",
    "Linear",
    "LayerNorm",
    "SelfAttentionBlock",
    "dropout_mask",
]


@dataclass
class Parameter:
    """A named trainable tensor; frozen parameters are never updated."""

    name: str
    tensor: T.Tensor
    frozen: bool = False


class ParamStore:
    """Ordered registry of parameters for one model."""

    def __init__(self, seed: int):
        self.seed = int(seed)
        self._params: dict[str, Parameter] = {}

    def add(self, name, shape, init="normal", scale=None, frozen=False, data=None):
        """Register a parameter and return its tensor.

        init is one of "zeros", "normal" (std = scale, default 0.02) or
        "he" (std = sqrt(2 / fan_in) with fan_in = scale).
        """
        if name in self._params:
            raise ValueError(f"duplicate parameter name {name!r}")
        if data is not None:
            arr = np.asarray(data, dtype=np.float32).reshape(shape)
        elif init == "zeros":
            arr = np.zeros(shape, dtype=np.float32)
        elif init == "ones":
            arr = np.ones(shape, dtype=np.float32)
        else:
            rng = rng_for(self.seed, SALT_INIT, name_salt(name))
            if init == "he":
                std = float(np.sqrt(2.0 / scale))
            elif init == "fan":
                std = float(np.sqrt(1.0 / scale))
            elif init == "normal":
                std = 0.02 if scale is None else float(scale)
            else:
                raise ValueError(f"unknown init {init!r}")
            arr = (rng.standard_normal(shape) * std).astype(np.float32)
        t = T.Tensor(arr, requires_grad=not frozen)
        self._params[name] = Parameter(name, t, frozen)
        return t

    def __getitem__(self, name) -> Parameter:
        return self._params[name]

    def __contains__(self, name):
        return name in self._params

    def parameters(self):
        return list(self._params.values())

    def names(self):
        return list(self._params.keys())

    def zero_grads(self):
        for p in self._params.values():
            p.tensor.grad = None

    def state_arrays(self):
        """Name -> float32 array, in registration order."""
        return {name: p.tensor.data for name, p in self._params.items()}

    def load_state_arrays(self, arrays):
        from .errors import ConfigError

        for name, p in self._params.items():
            if name not in arrays:
                raise ConfigError(f"checkpoint is missing parameter {name!r}")
            arr = arrays[name]
            if arr.shape != p.tensor.data.shape:
                raise ConfigError(
                    f"checkpoint shape {arr.shape} for {name!r} does not match "
                    f"model shape {p.tensor.data.shape}"
                )
            p.tensor.data = arr.astype(np.float32).copy()
        extra = set(arrays) - set(self._params)
        if extra:
            raise ConfigError(f"checkpoint has unknown parameters {sorted(extra)}")


class Linear:
    """Affine map over the last axis; inputs of any rank are flattened."""

    def __init__(self, store: ParamStore, name: str, d_in: int, d_out: int,
                 init="fan", frozen=False):
        self.d_in = d_in
        self.d_out = d_out
        self.w = store.add(f"{name}/w", (d_in, d_out), init=init, scale=d_in,
                           frozen=frozen)
        self.b = store.add(f"{name}/b", (d_out,), init="zeros", frozen=frozen)

    def __call__(self, x: T.Tensor) -> T.Tensor:
        if x.ndim < 1 or x.shape[-1] != self.d_in:
            raise DimensionError(f"linear expects last axis {self.d_in}")
        lead = x.shape[:-1]
        flat = x.reshape(-1, self.d_in) if x.ndim != 2 else x
        out = T.matmul(flat, self.w) + self.b
        if x.ndim != 2:
            out = out.reshape(*lead, self.d_out)
        return out


class LayerNorm:
    def __init__(self, store: ParamStore, name: str, dim: int, eps=1e-5, frozen=False):
        self.eps = eps
        self.g = store.add(f"{name}/g", (dim,), init="ones", frozen=frozen)
        self.b = store.add(f"{name}/b", (dim,), init="zeros", frozen=frozen)

    def __call__(self, x: T.Tensor) -> T.Tensor:
        return T.layer_norm(x, self.g, self.b, self.eps)


def dropout_mask(rng: np.random.Generator, shape, p: float) -> T.Tensor:
    """Inverted-dropout multiplier; p == 0 yields an all-ones mask."""
    if p <= 0:
        return T.Tensor(np.ones(shape, dtype=np.float32))
    keep = (rng.random(shape) >= p).astype(np.float32) / np.float32(1 - p)
    return T.Tensor(keep)


class SelfAttentionBlock:
    """Pre-norm multi-head self-attention followed by a pre-norm MLP."""

    def __init__(self, store: ParamStore, name: str, dim: int, heads: int,
                 hidden: int | None = None, frozen=False):
        if dim % heads != 0:
            raise DimensionError("model dim must divide evenly across heads")
        self.dim = dim
        self.heads = heads
        self.dh = dim // heads
        hidden = hidden if hidden is not None else 4 * dim
        self.ln1 = LayerNorm(store, f"{name}/ln1", dim, frozen=frozen)
        self.wq = Linear(store, f"{name}/wq", dim, dim, frozen=frozen)
        self.wk = Linear(store, f"{name}/wk", dim, dim, frozen=frozen)
        self.wv = Linear(store, f"{name}/wv", dim, dim, frozen=frozen)
        self.wo = Linear(store, f"{name}/wo", dim, dim, frozen=frozen)
        self.ln2 = LayerNorm(store, f"{name}/ln2", dim, frozen=frozen)
        self.ff1 = Linear(store, f"{name}/ff1", dim, hidden, init="he", frozen=frozen)
        self.ff2 = Linear(store, f"{name}/ff2", hidden, dim, frozen=frozen)

    def _split(self, x: T.Tensor, b: int, t: int) -> T.Tensor:
        # [B,T,D] -> [B,h,T,dh]
        return x.reshape(b, t, self.heads, self.dh).transpose(0, 2, 1, 3)

    def __call__(self, x: T.Tensor, attn_bias=None, drop_p: float = 0.0,
                 rng: np.random.Generator | None = None) -> T.Tensor:
        if x.ndim != 3 or x.shape[2] != self.dim:
            raise DimensionError("attention expects [B,T,D] input")
        b, t, _ = x.shape
        h = self.ln1(x)
        q = self._split(self.wq(h), b, t)
        k = self._split(self.wk(h), b, t)
        v = self._split(self.wv(h), b, t)
        scores = T.matmul(q, k.transpose(0, 1, 3, 2)) * float(1.0 / np.sqrt(self.dh))
        if attn_bias is not None:
            bias = np.broadcast_to(attn_bias, (b, self.heads, t, t))
            scores = scores + T.Tensor(np.ascontiguousarray(bias))
        probs = T.softmax(scores)
        if drop_p > 0:
            probs = probs * dropout_mask(rng, probs.shape, drop_p)
        ctx = T.matmul(probs, v)  # [B,h,T,dh]
        ctx = ctx.transpose(0, 2, 1, 3).reshape(b, t, self.dim)
        attn_out = self.wo(ctx)
        if drop_p > 0:
            attn_out = attn_out * dropout_mask(rng, attn_out.shape, drop_p)
        x = x + attn_out
        f = self.ff2(self.ff1(self.ln2(x)).relu())
        if drop_p > 0:
            f = f * dropout_mask(rng, f.shape, drop_p)
        return x + f
