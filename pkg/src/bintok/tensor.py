"""Dense tensors with hand-written reverse-mode gradients.

Storage is a contiguous row-major numpy float32 array (float64 is preserved
when explicitly provided, which is what the gradient checker uses).  Every
operation builds a tiny backward closure, micrograd style; ``backward()`` on
a scalar runs them in reverse topological order.

Broadcasting is intentionally restricted: elementwise ops need equal shapes,
the only exceptions being scalar constants, bias addition over the last axis,
and the dedicated channel-bias op for BCHW maps.
"""

from __future__ import annotations

import numpy as np

from .errors import DimensionError, DomainError, NumericError

__all__ = [
    "Tensor",
    "matmul",
    "conv2d",
    "conv_transpose2d",
    "layer_norm",
    "softmax",
    "softmax_cross_entropy",
    "gather_rows",
    "concat_rows",
    "where_rows",
    "add_channel_bias",
    "binary_entropy_logits",
    "binary_entropy_prob",
    "mean_axis0",
    "grad_check",
    "assert_finite",
]


def assert_finite(arr, what="value"):
    """Raise NumericError if ``arr`` contains NaN or Inf."""
    if not np.isfinite(arr).all():
        raise NumericError(f"non-finite {what}")


def _as_array(data):
    arr = np.asarray(data)
    if arr.dtype != np.float32 and arr.dtype != np.float64:
        arr = arr.astype(np.float32)
    return np.ascontiguousarray(arr)


class Tensor:
    """A dense array plus an optional gradient buffer of the same shape."""

    __slots__ = ("data", "grad", "requires_grad", "_backward", "_prev")

    def __init__(self, data, requires_grad=False):
        self.data = _as_array(data)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._backward = None
        self._prev = ()

    # -- introspection -------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def item(self):
        if self.data.size != 1:
            raise DimensionError("item() requires a single-element tensor")
        return float(self.data.reshape(()))

    def detach(self):
        """A view of the same data with gradient tracking cut."""
        return Tensor(self.data)

    # -- autodiff ------------------------------------------------------

    def _accum(self, g):
        if not self.requires_grad:
            return
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def backward(self):
        if self.data.size != 1:
            raise DimensionError("backward() starts from a scalar")
        topo = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._prev:
                if id(parent) not in visited:
                    stack.append((parent, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None:
                node._backward()

    # -- elementwise arithmetic ----------------------------------------

    def __add__(self, other):
        if isinstance(other, (int, float)):
            out = _op(self.data + np.asarray(other, dtype=self.dtype), (self,))
            if out.requires_grad:
                def back():
                    self._accum(out.grad)
                out._backward = back
            return out
        if not isinstance(other, Tensor):
            return NotImplemented
        if self.shape == other.shape:
            out = _op(self.data + other.data, (self, other))
            if out.requires_grad:
                def back():
                    self._accum(out.grad)
                    other._accum(out.grad)
                out._backward = back
            return out
        # bias over the last axis
        if other.ndim == 1 and self.ndim >= 1 and self.shape[-1] == other.shape[0]:
            out = _op(self.data + other.data, (self, other))
            if out.requires_grad:
                def back():
                    self._accum(out.grad)
                    other._accum(out.grad.reshape(-1, other.shape[0]).sum(axis=0))
                out._backward = back
            return out
        raise DimensionError(f"add shapes {self.shape} vs {other.shape}")

    __radd__ = __add__

    def __neg__(self):
        out = _op(-self.data, (self,))
        if out.requires_grad:
            def back():
                self._accum(-out.grad)
            out._backward = back
        return out

    def __sub__(self, other):
        if isinstance(other, Tensor):
            return self + (-other)
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            c = other
            out = _op(self.data * np.asarray(c, dtype=self.dtype), (self,))
            if out.requires_grad:
                def back():
                    self._accum(out.grad * np.asarray(c, dtype=self.dtype))
                out._backward = back
            return out
        if not isinstance(other, Tensor):
            return NotImplemented
        if self.shape != other.shape:
            raise DimensionError(f"mul shapes {self.shape} vs {other.shape}")
        out = _op(self.data * other.data, (self, other))
        if out.requires_grad:
            def back():
                self._accum(out.grad * other.data)
                other._accum(out.grad * self.data)
            out._backward = back
        return out

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)

    # -- elementwise functions -----------------------------------------

    def relu(self):
        mask = self.data > 0
        out = _op(np.where(mask, self.data, 0), (self,))
        if out.requires_grad:
            def back():
                self._accum(np.where(mask, out.grad, 0))
            out._backward = back
        return out

    def sigmoid(self):
        y = _sigmoid(self.data)
        out = _op(y, (self,))
        if out.requires_grad:
            def back():
                self._accum(out.grad * y * (1 - y))
            out._backward = back
        return out

    def abs(self):
        sign = np.sign(self.data)
        out = _op(np.abs(self.data), (self,))
        if out.requires_grad:
            def back():
                self._accum(out.grad * sign)
            out._backward = back
        return out

    # -- shape manipulation --------------------------------------------

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        old = self.shape
        out = _op(self.data.reshape(shape), (self,))
        if out.requires_grad:
            def back():
                self._accum(out.grad.reshape(old))
            out._backward = back
        return out

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        inverse = np.argsort(axes)
        out = _op(np.ascontiguousarray(self.data.transpose(axes)), (self,))
        if out.requires_grad:
            def back():
                self._accum(out.grad.transpose(inverse))
            out._backward = back
        return out

    # -- reductions (float64 accumulation, result in storage dtype) -----

    def sum(self):
        total = self.data.sum(dtype=np.float64)
        out = _op(np.asarray(total, dtype=self.dtype), (self,))
        if out.requires_grad:
            def back():
                self._accum(np.full_like(self.data, out.grad))
            out._backward = back
        return out

    def mean(self):
        n = self.data.size
        total = self.data.sum(dtype=np.float64) / n
        out = _op(np.asarray(total, dtype=self.dtype), (self,))
        if out.requires_grad:
            def back():
                self._accum(np.full_like(self.data, out.grad / n))
            out._backward = back
        return out


def _op(data, parents):
    out = Tensor(data)
    tracked = tuple(p for p in parents if p.requires_grad)
    if tracked:
        out.requires_grad = True
        out._prev = tracked
    return out


def _sigmoid(x):
    # stable in both tails
    s = np.exp(-np.abs(x))
    return np.where(x >= 0, 1 / (1 + s), s / (1 + s))


def _softplus(x):
    return np.maximum(x, 0) + np.log1p(np.exp(-np.abs(x)))


# -- matmul -------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product: both 2-D, or both >=3-D with identical leading dims."""
    if a.ndim == 2 and b.ndim == 2:
        if a.shape[1] != b.shape[0]:
            raise DimensionError(f"matmul inner dims {a.shape} x {b.shape}")
        out = _op(a.data @ b.data, (a, b))
        if out.requires_grad:
            def back():
                a._accum(out.grad @ b.data.T)
                b._accum(a.data.T @ out.grad)
            out._backward = back
        return out
    if a.ndim >= 3 and a.ndim == b.ndim and a.shape[:-2] == b.shape[:-2]:
        if a.shape[-1] != b.shape[-2]:
            raise DimensionError(f"matmul inner dims {a.shape} x {b.shape}")
        out = _op(np.matmul(a.data, b.data), (a, b))
        if out.requires_grad:
            def back():
                a._accum(np.matmul(out.grad, b.data.swapaxes(-1, -2)))
                b._accum(np.matmul(a.data.swapaxes(-1, -2), out.grad))
            out._backward = back
        return out
    raise DimensionError(f"matmul rank/batch mismatch {a.shape} x {b.shape}")


# -- convolution ----------------------------------------------------------


def _conv_out_size(size, k, stride, padding):
    span = size + 2 * padding - k
    if span < 0 or span % stride != 0:
        raise DimensionError(
            f"conv size {size} with k={k} stride={stride} padding={padding} "
            "does not produce an integral output"
        )
    return span // stride + 1


def _im2col(x, k, stride, padding):
    # x [B,C,H,W] -> cols [B, C*k*k, HO*WO]
    b, c, h, w = x.shape
    ho = _conv_out_size(h, k, stride, padding)
    wo = _conv_out_size(w, k, stride, padding)
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    win = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(2, 3))
    win = win[:, :, ::stride, ::stride]  # [B,C,HO,WO,k,k]
    cols = win.transpose(0, 1, 4, 5, 2, 3).reshape(b, c * k * k, ho * wo)
    return np.ascontiguousarray(cols), ho, wo


def _col2im(cols, b, c, h, w, k, stride, padding, ho, wo):
    cols6 = cols.reshape(b, c, k, k, ho, wo)
    xp = np.zeros((b, c, h + 2 * padding, w + 2 * padding), dtype=cols.dtype)
    for i in range(k):
        for j in range(k):
            xp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += cols6[:, :, i, j]
    if padding:
        return np.ascontiguousarray(xp[:, :, padding:padding + h, padding:padding + w])
    return xp


def _check_conv_args(x, w, stride, padding):
    if x.ndim != 4 or w.ndim != 4:
        raise DimensionError("conv expects 4-D input and weight")
    if w.shape[2] != w.shape[3]:
        raise DimensionError("conv kernel must be square")
    if w.shape[2] < 1:
        raise DimensionError("conv kernel must be at least 1x1")
    if stride < 1 or padding < 0:
        raise DimensionError("conv stride must be >=1 and padding >=0")


def conv2d(x: Tensor, w: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation of [B,C,H,W] with [O,C,k,k]."""
    _check_conv_args(x, w, stride, padding)
    b, c, h, wd = x.shape
    o, cw, k, _ = w.shape
    if cw != c:
        raise DimensionError(f"conv channels {c} vs weight {cw}")
    cols, ho, wo = _im2col(x.data, k, stride, padding)
    wflat = w.data.reshape(o, c * k * k)
    out_flat = np.matmul(wflat, cols)  # [B,O,L]
    out = _op(out_flat.reshape(b, o, ho, wo), (x, w))
    if out.requires_grad:
        def back():
            g = out.grad.reshape(b, o, ho * wo)
            if w.requires_grad:
                w._accum(np.einsum("bol,bkl->ok", g, cols).reshape(o, c, k, k))
            if x.requires_grad:
                dcols = np.matmul(wflat.T, g)
                x._accum(_col2im(dcols, b, c, h, wd, k, stride, padding, ho, wo))
        out._backward = back
    return out


def conv_transpose2d(y: Tensor, w: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """Exact adjoint of conv2d with the same weight, stride and padding.

    Maps [B,O,H',W'] back to [B,C,H,W] with H = (H'-1)*stride + k - 2*padding,
    so <conv2d(x,w), y> == <x, conv_transpose2d(y,w)> for all matching x, y.
    """
    _check_conv_args(y, w, stride, padding)
    b, o, ho, wo = y.shape
    ow, c, k, _ = w.shape
    if ow != o:
        raise DimensionError(f"conv_transpose channels {o} vs weight {ow}")
    h = (ho - 1) * stride + k - 2 * padding
    wd = (wo - 1) * stride + k - 2 * padding
    if h < 1 or wd < 1:
        raise DimensionError("conv_transpose output would be empty")
    wflat = w.data.reshape(o, c * k * k)
    yflat = y.data.reshape(b, o, ho * wo)
    cols = np.matmul(wflat.T, yflat)  # [B, C*k*k, L]
    out = _op(_col2im(cols, b, c, h, wd, k, stride, padding, ho, wo), (y, w))
    if out.requires_grad:
        def back():
            gcols, _, _ = _im2col(out.grad, k, stride, padding)
            if y.requires_grad:
                y._accum(np.matmul(wflat, gcols).reshape(b, o, ho, wo))
            if w.requires_grad:
                w._accum(np.einsum("bol,bkl->ok", yflat, gcols).reshape(o, c, k, k))
        out._backward = back
    return out


# -- normalization and softmax -------------------------------------------


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Zero mean / unit variance over the last axis, then affine."""
    d = x.shape[-1] if x.ndim else 0
    if d == 0:
        raise DimensionError("layer_norm needs a non-empty last axis")
    if gain.shape != (d,) or bias.shape != (d,):
        raise DimensionError("layer_norm gain/bias must have shape (D,)")
    if eps <= 0:
        raise DomainError("layer_norm eps must be positive")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = np.mean(xc * xc, axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + np.asarray(eps, dtype=x.dtype))
    xhat = xc * inv
    out = _op(xhat * gain.data + bias.data, (x, gain, bias))
    if out.requires_grad:
        def back():
            go = out.grad
            if gain.requires_grad:
                gain._accum((go * xhat).reshape(-1, d).sum(axis=0))
            if bias.requires_grad:
                bias._accum(go.reshape(-1, d).sum(axis=0))
            if x.requires_grad:
                dxhat = go * gain.data
                m1 = dxhat.mean(axis=-1, keepdims=True)
                m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
                x._accum(inv * (dxhat - m1 - xhat * m2))
        out._backward = back
    return out


def softmax(x: Tensor) -> Tensor:
    """Softmax over the last axis."""
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)
    out = _op(y, (x,))
    if out.requires_grad:
        def back():
            g = out.grad
            dot = (g * y).sum(axis=-1, keepdims=True)
            x._accum(y * (g - dot))
        out._backward = back
    return out


def softmax_cross_entropy(logits: Tensor, targets, mask) -> Tensor:
    """Mean negative log softmax probability of ``targets`` at masked rows.

    Rows where ``mask`` is false contribute neither loss nor gradient.
    """
    if logits.ndim != 2:
        raise DimensionError("softmax_cross_entropy expects [N,V] logits")
    n, v = logits.shape
    targets = np.asarray(targets, dtype=np.int64)
    mask = np.asarray(mask, dtype=bool)
    if targets.shape != (n,) or mask.shape != (n,):
        raise DimensionError("targets and mask must have one entry per row")
    if targets.min(initial=0) < 0 or targets.max(initial=0) >= v:
        raise DomainError("target id out of range")
    n_masked = int(mask.sum())
    if n_masked == 0:
        raise DomainError("softmax_cross_entropy needs at least one masked row")
    m = logits.data.max(axis=1)
    z = (logits.data - m[:, None]).astype(np.float64)
    lse = m.astype(np.float64) + np.log(np.exp(z).sum(axis=1))
    picked = logits.data[np.arange(n), targets].astype(np.float64)
    loss = (lse[mask] - picked[mask]).mean()
    out = _op(np.asarray(loss, dtype=logits.dtype), (logits,))
    if out.requires_grad:
        p = np.exp(z - (lse - m.astype(np.float64))[:, None]).astype(logits.dtype)
        def back():
            g = np.zeros_like(logits.data)
            rows = np.nonzero(mask)[0]
            g[rows] = p[rows]
            g[rows, targets[rows]] -= 1
            g[rows] *= out.grad / n_masked
            logits._accum(g)
        out._backward = back
    return out


# -- gather / scatter style ops -------------------------------------------


def gather_rows(table: Tensor, ids) -> Tensor:
    """Row lookup table[ids] with scatter-add backward."""
    if table.ndim != 2:
        raise DimensionError("gather_rows table must be 2-D")
    ids = np.asarray(ids, dtype=np.int64)
    if ids.min(initial=0) < 0 or ids.max(initial=-1) >= table.shape[0]:
        raise DomainError("row id out of range")
    out = _op(table.data[ids], (table,))
    if out.requires_grad:
        def back():
            buf = np.zeros_like(table.data)
            np.add.at(buf, ids, out.grad)
            table._accum(buf)
        out._backward = back
    return out


def concat_rows(parts) -> Tensor:
    """Concatenate 2-D tensors along axis 0."""
    parts = list(parts)
    if not parts or any(p.ndim != 2 for p in parts):
        raise DimensionError("concat_rows expects 2-D tensors")
    widths = {p.shape[1] for p in parts}
    if len(widths) != 1:
        raise DimensionError("concat_rows width mismatch")
    out = _op(np.concatenate([p.data for p in parts], axis=0), tuple(parts))
    if out.requires_grad:
        offsets = np.cumsum([0] + [p.shape[0] for p in parts])
        def back():
            for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
                p._accum(out.grad[lo:hi])
        out._backward = back
    return out


def where_rows(mask, a: Tensor, b: Tensor) -> Tensor:
    """Per-leading-row selection: out[i] = a[i] if mask[i] else b[i]."""
    mask = np.asarray(mask, dtype=bool)
    if a.shape != b.shape or mask.shape != (a.shape[0],):
        raise DimensionError("where_rows needs equal shapes and a [B] mask")
    m = mask.reshape((-1,) + (1,) * (a.ndim - 1))
    out = _op(np.where(m, a.data, b.data), (a, b))
    if out.requires_grad:
        def back():
            zero = np.zeros((), dtype=out.grad.dtype)
            a._accum(np.where(m, out.grad, zero))
            b._accum(np.where(m, zero, out.grad))
        out._backward = back
    return out


def add_channel_bias(x: Tensor, b: Tensor) -> Tensor:
    """Add a per-channel bias [C] to a [B,C,H,W] map."""
    if x.ndim != 4 or b.ndim != 1 or b.shape[0] != x.shape[1]:
        raise DimensionError("add_channel_bias expects [B,C,H,W] and [C]")
    out = _op(x.data + b.data[None, :, None, None], (x, b))
    if out.requires_grad:
        def back():
            x._accum(out.grad)
            b._accum(out.grad.sum(axis=(0, 2, 3)))
        out._backward = back
    return out


# -- entropy kernels -------------------------------------------------------


def binary_entropy_logits(z: Tensor) -> Tensor:
    """Elementwise H(sigmoid(z)) in nats, stable in both tails."""
    s = _sigmoid(z.data)
    out = _op(_softplus(z.data) - z.data * s, (z,))
    if out.requires_grad:
        def back():
            z._accum(out.grad * (-z.data * s * (1 - s)))
        out._backward = back
    return out


def binary_entropy_prob(q: Tensor, eps: float = 1e-7) -> Tensor:
    """Elementwise binary entropy of a probability, clamped to [eps, 1-eps]."""
    qc = np.clip(q.data, eps, 1 - eps)
    inside = (q.data > eps) & (q.data < 1 - eps)
    out = _op(-qc * np.log(qc) - (1 - qc) * np.log1p(-qc), (q,))
    if out.requires_grad:
        def back():
            dq = np.where(inside, np.log1p(-qc) - np.log(qc), 0)
            q._accum(out.grad * dq)
        out._backward = back
    return out


def mean_axis0(x: Tensor) -> Tensor:
    """Mean over the first axis."""
    if x.ndim < 2:
        raise DimensionError("mean_axis0 expects at least 2 dims")
    n = x.shape[0]
    out = _op(x.data.mean(axis=0), (x,))
    if out.requires_grad:
        def back():
            x._accum(np.broadcast_to(out.grad / n, x.shape).copy())
        out._backward = back
    return out


# -- gradient checking ------------------------------------------------------


def grad_check(f, x: Tensor, step: float = 1e-3) -> float:
    """Max relative error between analytic and central-difference gradients.

    The function is evaluated in float64 (extended precision is allowed
    inside the checker); the error measure is |a - n| / max(1, |a| + |n|).
    """
    if step <= 0:
        raise DomainError("grad_check step must be positive")
    base = x.data.astype(np.float64)
    probe = Tensor(base.copy(), requires_grad=True)
    out = f(probe)
    if out.data.size != 1:
        raise DimensionError("grad_check needs a scalar-valued function")
    if not np.isfinite(out.data).all():
        raise NumericError("function returned a non-finite value")
    out.backward()
    analytic = probe.grad if probe.grad is not None else np.zeros_like(base)
    analytic = analytic.reshape(-1)

    flat = base.reshape(-1)
    numeric = np.zeros_like(flat)
    for i in range(flat.size):
        for sign, slot in ((1.0, 0), (-1.0, 1)):
            shifted = flat.copy()
            shifted[i] += sign * step
            val = f(Tensor(shifted.reshape(base.shape))).item()
            if not np.isfinite(val):
                raise NumericError("function returned a non-finite value")
            if slot == 0:
                fp = val
            else:
                fm = val
        numeric[i] = (fp - fm) / (2 * step)
    denom = np.maximum(1.0, np.abs(analytic) + np.abs(numeric))
    return float(np.max(np.abs(analytic - numeric) / denom, initial=0.0))
