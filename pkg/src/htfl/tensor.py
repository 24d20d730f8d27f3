"""Minimal reverse-mode autodiff over float32 numpy arrays.

Every differentiable op returns a new Tensor whose ``_backward`` closure
accumulates gradients into its parents. ``Tensor.backward`` replays the
recorded graph in reverse topological order. The op set is exactly what
the model zoo and the training methods need; this is not a general
array library.

Softmax-family forwards accumulate in float64 internally and cast back
to float32, which keeps losses stable enough for finite-difference
checks at h=1e-3.
"""

from __future__ import annotations

import numpy as np

from .errors import ShapeError

__all__ = [
    "Tensor", "matmul", "add", "relu", "scale", "concat", "reshape",
    "conv1d", "avg_pool1d", "adapter_pool", "softmax", "log_softmax",
    "gather_rows", "pairwise_sqdist", "cross_entropy", "kl_divergence", "mse",
]


def _f32(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float32)


class Tensor:
    """A float32 array plus an optional gradient and graph linkage."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, _parents=(), _backward=None):
        self.data = _f32(data)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad) or any(p.requires_grad for p in _parents)
        self._parents = tuple(_parents)
        self._backward = _backward

    @property
    def shape(self):
        return self.data.shape

    def detach(self) -> "Tensor":
        """A graph-free view of the same values. Used to stop teacher gradients."""
        return Tensor(self.data)

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def backward(self):
        """Backpropagate from a scalar. Repeated calls accumulate into leaf grads."""
        if self.data.size != 1:
            raise ShapeError(f"backward requires a scalar, got shape {self.shape}")
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                topo.append(node)
                continue
            if id(node) in seen or not node.requires_grad:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                stack.append((p, False))
        # Interior grads are transient per pass; leaf grads persist and accumulate.
        for node in topo:
            if node._parents:
                node.grad = np.zeros_like(node.data)
            elif node.grad is None:
                node.grad = np.zeros_like(node.data)
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad[...] += np.float32(1.0)
        for node in reversed(topo):
            if node._backward is not None:
                node._backward()

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


def _ensure(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum `grad` down to `shape`, undoing numpy broadcasting."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.astype(np.float32, copy=False)


def matmul(a, b) -> Tensor:
    a, b = _ensure(a), _ensure(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    out = Tensor(a.data @ b.data, _parents=(a, b))

    def backward():
        g = out.grad
        if a.requires_grad:
            a.grad += g @ b.data.T
        if b.requires_grad:
            b.grad += a.data.T @ g

    out._backward = backward
    return out


def add(a, b) -> Tensor:
    a, b = _ensure(a), _ensure(b)
    try:
        data = a.data + b.data
    except ValueError:
        raise ShapeError(f"add: incompatible shapes {a.shape} and {b.shape}") from None
    out = Tensor(data, _parents=(a, b))

    def backward():
        g = out.grad
        if a.requires_grad:
            a.grad += _unbroadcast(g, a.shape)
        if b.requires_grad:
            b.grad += _unbroadcast(g, b.shape)

    out._backward = backward
    return out


def scale(x, c: float) -> Tensor:
    x = _ensure(x)
    c = np.float32(c)
    out = Tensor(x.data * c, _parents=(x,))

    def backward():
        if x.requires_grad:
            x.grad += out.grad * c

    out._backward = backward
    return out


def relu(x) -> Tensor:
    x = _ensure(x)
    out = Tensor(np.maximum(x.data, 0.0), _parents=(x,))

    def backward():
        if x.requires_grad:
            x.grad += out.grad * (x.data > 0)

    out._backward = backward
    return out


def concat(tensors, axis: int = -1) -> Tensor:
    ts = [_ensure(t) for t in tensors]
    out = Tensor(np.concatenate([t.data for t in ts], axis=axis), _parents=tuple(ts))
    sizes = [t.shape[axis] for t in ts]
    offsets = np.cumsum([0] + sizes)

    def backward():
        g = np.moveaxis(out.grad, axis, 0)
        for t, lo, hi in zip(ts, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                t.grad += np.moveaxis(g[lo:hi], 0, axis)

    out._backward = backward
    return out


def reshape(x, shape) -> Tensor:
    x = _ensure(x)
    out = Tensor(x.data.reshape(shape), _parents=(x,))

    def backward():
        if x.requires_grad:
            x.grad += out.grad.reshape(x.shape)

    out._backward = backward
    return out


def conv1d(x, w, stride: int = 1) -> Tensor:
    """Valid cross-correlation of (B, C_in, L) with (C_out, C_in, k).

    Output length is floor((L - k) / stride) + 1.
    """
    x, w = _ensure(x), _ensure(w)
    if x.data.ndim != 3 or w.data.ndim != 3 or x.shape[1] != w.shape[1]:
        raise ShapeError(f"conv1d: incompatible shapes {x.shape} and {w.shape}")
    k = w.shape[2]
    length = x.shape[2]
    if length < k:
        raise ShapeError(f"conv1d: input length {length} shorter than kernel {k}")
    if stride < 1:
        raise ShapeError(f"conv1d: stride must be positive, got {stride}")
    l_out = (length - k) // stride + 1
    windows = np.lib.stride_tricks.sliding_window_view(x.data, k, axis=2)[:, :, ::stride, :]
    out = Tensor(np.einsum("bclk,ock->bol", windows, w.data), _parents=(x, w))

    def backward():
        g = out.grad
        if w.requires_grad:
            w.grad += np.einsum("bol,bclk->ock", g, windows)
        if x.requires_grad:
            gx = np.zeros_like(x.data)
            for j in range(k):
                gx[:, :, j : j + stride * l_out : stride] += np.einsum(
                    "oc,bol->bcl", w.data[:, :, j], g
                )
            x.grad += gx

    out._backward = backward
    return out


def avg_pool1d(x, kernel: int) -> Tensor:
    """Non-overlapping average pooling along the last axis; remainder dropped."""
    x = _ensure(x)
    if x.data.ndim != 3:
        raise ShapeError(f"avg_pool1d expects (B, C, L), got {x.shape}")
    b, c, length = x.shape
    l_out = length // kernel
    if l_out < 1:
        raise ShapeError(f"avg_pool1d: length {length} shorter than kernel {kernel}")
    used = l_out * kernel
    out = Tensor(
        x.data[:, :, :used].reshape(b, c, l_out, kernel).mean(axis=3), _parents=(x,)
    )

    def backward():
        if x.requires_grad:
            g = np.repeat(out.grad, kernel, axis=2) / np.float32(kernel)
            x.grad[:, :, :used] += g

    out._backward = backward
    return out


def adapter_pool(x, out_dim: int) -> Tensor:
    """Average a (B, m) feature block down to (B, out_dim).

    Requires m to be a multiple of out_dim. Output j is the mean of the
    strided group {j, j+out_dim, j+2*out_dim, ...}, so pooling a flattened
    (C, L) map with out_dim == L yields per-position channel means.
    """
    x = _ensure(x)
    if x.data.ndim != 2:
        raise ShapeError(f"adapter_pool expects (B, m), got {x.shape}")
    b, m = x.shape
    if m % out_dim != 0:
        raise ShapeError(f"adapter_pool: {m} features not divisible by {out_dim}")
    groups = m // out_dim
    out = Tensor(x.data.reshape(b, groups, out_dim).mean(axis=1), _parents=(x,))

    def backward():
        if x.requires_grad:
            g = out.grad / np.float32(groups)
            x.grad += np.tile(g, (1, groups))

    out._backward = backward
    return out


def _softmax64(z: np.ndarray, axis: int) -> np.ndarray:
    z = z.astype(np.float64)
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def _log_softmax64(z: np.ndarray, axis: int) -> np.ndarray:
    z = z.astype(np.float64)
    z = z - z.max(axis=axis, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=axis, keepdims=True))


def softmax(x, axis: int = -1) -> Tensor:
    x = _ensure(x)
    s = _softmax64(x.data, axis)
    out = Tensor(s, _parents=(x,))

    def backward():
        if x.requires_grad:
            g = out.grad
            dot = (g * out.data).sum(axis=axis, keepdims=True)
            x.grad += (out.data * (g - dot)).astype(np.float32)

    out._backward = backward
    return out


def log_softmax(x, axis: int = -1) -> Tensor:
    x = _ensure(x)
    out = Tensor(_log_softmax64(x.data, axis), _parents=(x,))
    probs = np.exp(out.data.astype(np.float64)).astype(np.float32)

    def backward():
        if x.requires_grad:
            g = out.grad
            x.grad += g - probs * g.sum(axis=axis, keepdims=True)

    out._backward = backward
    return out


def gather_rows(x, rows) -> Tensor:
    """Select rows of a 2-D tensor; backward scatter-adds into the source."""
    x = _ensure(x)
    rows = np.asarray(rows, dtype=np.int64)
    out = Tensor(x.data[rows], _parents=(x,))

    def backward():
        if x.requires_grad:
            np.add.at(x.grad, rows, out.grad)

    out._backward = backward
    return out


def pairwise_sqdist(points, centers) -> Tensor:
    """Squared Euclidean distances, (n, K) x (m, K) -> (n, m)."""
    p, c = _ensure(points), _ensure(centers)
    if p.data.ndim != 2 or c.data.ndim != 2 or p.shape[1] != c.shape[1]:
        raise ShapeError(f"pairwise_sqdist: incompatible shapes {p.shape} and {c.shape}")
    diff = p.data[:, None, :] - c.data[None, :, :]
    out = Tensor((diff * diff).sum(axis=2), _parents=(p, c))

    def backward():
        g = out.grad[:, :, None]
        if p.requires_grad:
            p.grad += (2.0 * g * diff).sum(axis=1).astype(np.float32)
        if c.requires_grad:
            c.grad += (-2.0 * g * diff).sum(axis=0).astype(np.float32)

    out._backward = backward
    return out


def cross_entropy(logits, labels, sample_weights=None) -> Tensor:
    """Mean softmax cross-entropy of (B, C) logits against integer labels.

    With ``sample_weights`` (normalized to sum 1) the mean becomes a
    weighted sum, which the server-side head training uses to weight
    prototype-label pairs by their sample counts.
    """
    logits = _ensure(logits)
    y = np.asarray(labels, dtype=np.int64)
    if logits.data.ndim != 2 or y.ndim != 1 or logits.shape[0] != y.shape[0]:
        raise ShapeError(f"cross_entropy: logits {logits.shape} vs labels {y.shape}")
    n, c = logits.shape
    if n == 0:
        raise ShapeError("cross_entropy: empty batch")
    if y.min() < 0 or y.max() >= c:
        raise ValueError(f"cross_entropy: label out of range [0, {c})")
    if sample_weights is None:
        w = np.full(n, 1.0 / n)
    else:
        w = np.asarray(sample_weights, dtype=np.float64)
        total = w.sum()
        if total <= 0:
            raise ValueError("cross_entropy: sample weights must have positive sum")
        w = w / total
    lsm = _log_softmax64(logits.data, -1)
    loss = -(w * lsm[np.arange(n), y]).sum()
    out = Tensor(loss, _parents=(logits,))
    probs = np.exp(lsm)

    def backward():
        if logits.requires_grad:
            g = probs.copy()
            g[np.arange(n), y] -= 1.0
            g *= w[:, None]
            logits.grad += (float(out.grad) * g).astype(np.float32)

    out._backward = backward
    return out


def kl_divergence(p_logits, q_logits, temperature: float = 1.0) -> Tensor:
    """Mean KL(softmax(p/T) || softmax(q/T)) over the batch.

    Callers pass the teacher side detached; gradients then reach only the
    student logits q.
    """
    p, q = _ensure(p_logits), _ensure(q_logits)
    if p.shape != q.shape or p.data.ndim != 2:
        raise ShapeError(f"kl_divergence: incompatible shapes {p.shape} and {q.shape}")
    t = float(temperature)
    if t <= 0:
        raise ValueError(f"kl_divergence: temperature must be positive, got {t}")
    n = p.shape[0]
    lp = _log_softmax64(p.data / t, -1)
    lq = _log_softmax64(q.data / t, -1)
    pp = np.exp(lp)
    qq = np.exp(lq)
    value = max(0.0, float((pp * (lp - lq)).sum() / n))
    out = Tensor(value, _parents=(p, q))

    def backward():
        g = float(out.grad) / (t * n)
        if q.requires_grad:
            q.grad += (g * (qq - pp)).astype(np.float32)
        if p.requires_grad:
            row = (pp * (lp - lq)).sum(axis=1, keepdims=True)
            p.grad += (g * pp * ((lp - lq) - row)).astype(np.float32)

    out._backward = backward
    return out


def mse(a, b) -> Tensor:
    """Mean squared error over all elements."""
    a, b = _ensure(a), _ensure(b)
    if a.shape != b.shape:
        raise ShapeError(f"mse: incompatible shapes {a.shape} and {b.shape}")
    diff = a.data.astype(np.float64) - b.data.astype(np.float64)
    n = diff.size
    if n == 0:
        raise ShapeError("mse: empty operands")
    out = Tensor((diff * diff).sum() / n, _parents=(a, b))

    def backward():
        g = float(out.grad) * 2.0 / n
        if a.requires_grad:
            a.grad += (g * diff).astype(np.float32)
        if b.requires_grad:
            b.grad += (-g * diff).astype(np.float32)

    out._backward = backward
    return out
