"""Dense float32 tensors with a reverse-mode gradient tape.

Every operation records a TapeNode holding its inputs and a backward
rule; ``backward(loss)`` walks the recorded graph once in reverse
topological order and accumulates gradients additively across fan-out.
Storage is float32 throughout; long reductions (> 4096 elements) run
chunked Kahan summation to keep the error bounded.

Shapes follow the numpy/(N, C, H, W) convention.  Ops raise ShapeError
naming both offending shapes.
"""

from __future__ import annotations

import math
from typing import Callable, Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

KAHAN_CHUNK = 4096
F32 = np.float32


class ShapeError(ValueError):
    pass


def stable_sum(arr: np.ndarray):
    """Reduction used by all loss/mean ops.

    float32 inputs above KAHAN_CHUNK elements get chunked Kahan
    compensation; float64 inputs just use numpy's pairwise sum.
    """
    if arr.dtype == np.float64:
        return np.float64(np.sum(arr))
    flat = np.ascontiguousarray(arr, dtype=F32).reshape(-1)
    if flat.size == 0:
        return F32(0.0)
    if flat.size <= KAHAN_CHUNK:
        return F32(np.sum(flat, dtype=F32))
    chunk_sums = np.add.reduceat(flat, np.arange(0, flat.size, KAHAN_CHUNK), dtype=F32)
    total = F32(0.0)
    comp = F32(0.0)
    for s in chunk_sums:
        y = F32(s - comp)
        t = F32(total + y)
        comp = F32((t - total) - y)
        total = t
    return total


class TapeNode:
    """One recorded op: the tensors it read and how to push grads back."""

    __slots__ = ("op", "inputs", "backward")

    def __init__(self, op: str, inputs: tuple["Tensor", ...], backward: Callable[[np.ndarray], None]):
        self.op = op
        self.inputs = inputs
        self.backward = backward


class Tensor:
    """float32 by default; float64 ndarrays are kept as-is so gradient
    checks can run the identical graph in exact-enough arithmetic."""

    __slots__ = ("data", "grad", "requires_grad", "node")

    def __init__(self, data, requires_grad: bool = False):
        if isinstance(data, np.ndarray) and data.dtype == np.float64:
            self.data = data
        elif isinstance(data, np.float64):
            # 0-d x 0-d numpy arithmetic yields scalars; keep their width
            self.data = np.asarray(data)
        else:
            self.data = np.asarray(data, dtype=F32)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self.node: Optional[TapeNode] = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() on non-scalar shape {self.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __radd__(self, other):
        return add(_as_tensor(other), self)

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __mul__(self, other):
        return mul(self, _as_tensor(other))

    def __rmul__(self, other):
        return mul(_as_tensor(other), self)

    def __neg__(self):
        return mul(self, _as_tensor(-1.0))


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=F32))


def _accumulate(t: Tensor, grad: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += grad


def _make(data: np.ndarray, op: str, inputs: tuple[Tensor, ...], backward) -> Tensor:
    out = Tensor(data)
    out.requires_grad = any(i.requires_grad for i in inputs)
    if out.requires_grad:
        out.node = TapeNode(op, inputs, backward)
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum grad over the axes numpy broadcasting expanded."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad


def backward(loss: Tensor) -> None:
    """Reverse pass from a scalar loss; fills .grad on tracked tensors."""
    if loss.data.size != 1:
        raise ShapeError(f"backward() requires a scalar loss, got shape {loss.shape}")
    topo: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        t, expanded = stack.pop()
        if expanded:
            topo.append(t)
            continue
        if id(t) in visited:
            continue
        visited.add(id(t))
        stack.append((t, True))
        if t.node is not None:
            for parent in t.node.inputs:
                if id(parent) not in visited:
                    stack.append((parent, False))
    loss.grad = np.ones_like(loss.data)
    for t in reversed(topo):
        if t.node is not None and t.grad is not None:
            t.node.backward(t.grad)


# ---------------------------------------------------------------------------
# elementwise and shape ops


def add(a: Tensor, b: Tensor) -> Tensor:
    data = a.data + b.data

    def bwd(dout):
        _accumulate(a, _unbroadcast(dout, a.data.shape))
        _accumulate(b, _unbroadcast(dout, b.data.shape))

    return _make(data, "add", (a, b), bwd)


def sub(a: Tensor, b: Tensor) -> Tensor:
    data = a.data - b.data

    def bwd(dout):
        _accumulate(a, _unbroadcast(dout, a.data.shape))
        _accumulate(b, _unbroadcast(-dout, b.data.shape))

    return _make(data, "sub", (a, b), bwd)


def mul(a: Tensor, b: Tensor) -> Tensor:
    data = a.data * b.data

    def bwd(dout):
        _accumulate(a, _unbroadcast(dout * b.data, a.data.shape))
        _accumulate(b, _unbroadcast(dout * a.data, b.data.shape))

    return _make(data, "mul", (a, b), bwd)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)
    data = x.data.reshape(shape)

    def bwd(dout):
        _accumulate(x, dout.reshape(x.data.shape))

    return _make(data, "reshape", (x,), bwd)


def flatten(x: Tensor) -> Tensor:
    """Collapse all but the leading (batch) axis."""
    return reshape(x, (x.data.shape[0], -1))


def permute(x: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    data = np.ascontiguousarray(x.data.transpose(axes))
    inverse = tuple(int(i) for i in np.argsort(axes))

    def bwd(dout):
        _accumulate(x, dout.transpose(inverse))

    return _make(data, "permute", (x,), bwd)


def narrow(x: Tensor, axis: int, start: int, length: int) -> Tensor:
    """Contiguous slice [start, start+length) along one axis."""
    idx = [slice(None)] * x.data.ndim
    idx[axis] = slice(start, start + length)
    idx = tuple(idx)
    data = x.data[idx].copy()

    def bwd(dout):
        if not x.requires_grad:
            return
        full = np.zeros_like(x.data)
        full[idx] = dout
        _accumulate(x, full)

    return _make(data, "narrow", (x,), bwd)


def concat(tensors: Sequence[Tensor], axis: int) -> Tensor:
    tensors = list(tensors)
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]

    def bwd(dout):
        offset = 0
        for t, n in zip(tensors, sizes):
            idx = [slice(None)] * dout.ndim
            idx[axis] = slice(offset, offset + n)
            _accumulate(t, dout[tuple(idx)])
            offset += n

    return _make(data, "concat", tuple(tensors), bwd)


def leaky_relu(x: Tensor, alpha: float = 0.1) -> Tensor:
    data = np.where(x.data > 0, x.data, alpha * x.data)

    def bwd(dout):
        _accumulate(x, np.where(x.data > 0, dout, alpha * dout))

    return _make(data, "leaky_relu", (x,), bwd)


def sigmoid(x: Tensor) -> Tensor:
    s = _sigmoid_np(x.data)

    def bwd(dout):
        _accumulate(x, dout * s * (1.0 - s))

    return _make(s, "sigmoid", (x,), bwd)


def silu(x: Tensor) -> Tensor:
    s = _sigmoid_np(x.data)
    data = x.data * s

    def bwd(dout):
        _accumulate(x, dout * s * (1.0 + x.data * (1.0 - s)))

    return _make(data, "silu", (x,), bwd)


def _sigmoid_np(z: np.ndarray) -> np.ndarray:
    # exp overflow for very negative z saturates to inf -> result 0.0,
    # which is exactly right; suppressing the warning keeps this branch-free
    with np.errstate(over="ignore"):
        return 1.0 / (1.0 + np.exp(-z))


# ---------------------------------------------------------------------------
# reductions


def sum_all(x: Tensor) -> Tensor:
    data = np.array(stable_sum(x.data), dtype=x.data.dtype)

    def bwd(dout):
        _accumulate(x, np.broadcast_to(dout.reshape(()), x.data.shape).copy())

    return _make(data, "sum", (x,), bwd)


def mean_all(x: Tensor) -> Tensor:
    n = x.data.size
    data = np.array(stable_sum(x.data) / n, dtype=x.data.dtype)

    def bwd(dout):
        _accumulate(x, np.broadcast_to(dout.reshape(()) / n, x.data.shape).copy())

    return _make(data, "mean", (x,), bwd)


# ---------------------------------------------------------------------------
# dense / matrix ops


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"matmul shapes {a.data.shape} x {b.data.shape}")
    data = a.data @ b.data

    def bwd(dout):
        _accumulate(a, dout @ b.data.T)
        _accumulate(b, a.data.T @ dout)

    return _make(data, "matmul", (a, b), bwd)


def linear(x: Tensor, w: Tensor, b: Optional[Tensor] = None) -> Tensor:
    if x.data.ndim != 2 or w.data.ndim != 2 or x.data.shape[1] != w.data.shape[0]:
        raise ShapeError(f"linear shapes {x.data.shape} x {w.data.shape}")
    data = x.data @ w.data
    if b is not None:
        data = data + b.data

    def bwd(dout):
        _accumulate(x, dout @ w.data.T)
        _accumulate(w, x.data.T @ dout)
        if b is not None:
            _accumulate(b, dout.sum(axis=0))

    inputs = (x, w) if b is None else (x, w, b)
    return _make(data, "linear", inputs, bwd)


# ---------------------------------------------------------------------------
# convolution and pooling


def conv2d(x: Tensor, w: Tensor, b: Optional[Tensor] = None, stride: int = 1, pad: int = 0) -> Tensor:
    """Cross-correlation of (N,C,H,W) with (O,C,kh,kw), zero padding."""
    if x.data.ndim != 4 or w.data.ndim != 4:
        raise ShapeError(f"conv2d needs 4-d input/weight, got {x.data.shape} / {w.data.shape}")
    n, c, h, wd = x.data.shape
    o, cw, kh, kw = w.data.shape
    if c != cw:
        raise ShapeError(f"conv2d channels mismatch: input {x.data.shape} vs weight {w.data.shape}")
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (wd + 2 * pad - kw) // stride + 1
    if ho <= 0 or wo <= 0:
        raise ShapeError(f"conv2d output empty for input {x.data.shape}, k={kh}, s={stride}, p={pad}")
    wmat = w.data.reshape(o, c * kh * kw)
    if kh == 1 and kw == 1 and stride == 1 and pad == 0:
        # pointwise fast path: skip the window extraction entirely
        cols = x.data.transpose(0, 2, 3, 1).reshape(n * h * wd, c)
    else:
        xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x.data
        win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
        cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * kh * kw)
    out = cols @ wmat.T
    if b is not None:
        out = out + b.data
    data = out.reshape(n, ho, wo, o).transpose(0, 3, 1, 2)

    def bwd(dout):
        d2 = np.ascontiguousarray(dout.transpose(0, 2, 3, 1)).reshape(n * ho * wo, o)
        _accumulate(w, (d2.T @ cols).reshape(w.data.shape))
        if b is not None:
            _accumulate(b, d2.sum(axis=0))
        if x.requires_grad:
            dcols = d2 @ wmat
            if kh == 1 and kw == 1 and stride == 1 and pad == 0:
                _accumulate(x, dcols.reshape(n, h, wd, c).transpose(0, 3, 1, 2))
                return
            dcols = dcols.reshape(n, ho, wo, c, kh, kw)
            dxp = np.zeros((n, c, h + 2 * pad, wd + 2 * pad), dtype=x.data.dtype)
            for i in range(kh):
                for j in range(kw):
                    dxp[:, :, i : i + ho * stride : stride, j : j + wo * stride : stride] += (
                        dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
                    )
            _accumulate(x, dxp[:, :, pad : pad + h, pad : pad + wd] if pad else dxp)

    inputs = (x, w) if b is None else (x, w, b)
    return _make(data, "conv2d", inputs, bwd)


def max_pool2d(x: Tensor, k: int, stride: Optional[int] = None, pad: int = 0) -> Tensor:
    """Max pooling; padding (when used) is -inf so it never wins."""
    if x.data.ndim != 4:
        raise ShapeError(f"max_pool2d needs 4-d input, got {x.data.shape}")
    stride = k if stride is None else stride
    n, c, h, w = x.data.shape
    if pad:
        xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad)), constant_values=-np.inf)
    else:
        xp = x.data
    hp, wp = xp.shape[2:]
    ho = (hp - k) // stride + 1
    wo = (wp - k) // stride + 1
    if ho <= 0 or wo <= 0:
        raise ShapeError(f"max_pool2d output empty for input {x.data.shape}, k={k}, s={stride}")
    win = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
    flat = win.reshape(n, c, ho, wo, k * k)
    arg = flat.argmax(axis=4)
    data = np.take_along_axis(flat, arg[..., None], axis=4)[..., 0].astype(x.data.dtype)

    def bwd(dout):
        if not x.requires_grad:
            return
        dxp = np.zeros((n, c, hp, wp), dtype=x.data.dtype)
        ki, kj = np.divmod(arg, k)
        ii = ki + (np.arange(ho) * stride)[None, None, :, None]
        jj = kj + (np.arange(wo) * stride)[None, None, None, :]
        nn_idx = np.arange(n)[:, None, None, None]
        cc_idx = np.arange(c)[None, :, None, None]
        np.add.at(dxp, (nn_idx, cc_idx, ii, jj), dout)
        _accumulate(x, dxp[:, :, pad : pad + h, pad : pad + w] if pad else dxp)

    return _make(data, "max_pool2d", (x,), bwd)


def upsample_nearest2x(x: Tensor) -> Tensor:
    if x.data.ndim != 4:
        raise ShapeError(f"upsample_nearest2x needs 4-d input, got {x.data.shape}")
    data = x.data.repeat(2, axis=2).repeat(2, axis=3)
    n, c, h, w = x.data.shape

    def bwd(dout):
        _accumulate(x, dout.reshape(n, c, h, 2, w, 2).sum(axis=(3, 5)))

    return _make(data, "upsample_nearest2x", (x,), bwd)


def adaptive_avg_pool2d(x: Tensor, out_hw: tuple[int, int]) -> Tensor:
    """Average pooling to a fixed output size with torch-style bins."""
    if x.data.ndim != 4:
        raise ShapeError(f"adaptive_avg_pool2d needs 4-d input, got {x.data.shape}")
    n, c, h, w = x.data.shape
    oh, ow = out_hw
    if oh <= 0 or ow <= 0:
        raise ShapeError(f"adaptive_avg_pool2d {x.data.shape} -> {out_hw} is invalid")
    rows = [(math.floor(i * h / oh), math.ceil((i + 1) * h / oh)) for i in range(oh)]
    cols = [(math.floor(j * w / ow), math.ceil((j + 1) * w / ow)) for j in range(ow)]
    data = np.empty((n, c, oh, ow), dtype=x.data.dtype)
    for i, (r0, r1) in enumerate(rows):
        for j, (c0, c1) in enumerate(cols):
            data[:, :, i, j] = x.data[:, :, r0:r1, c0:c1].mean(axis=(2, 3))

    def bwd(dout):
        if not x.requires_grad:
            return
        dx = np.zeros_like(x.data)
        for i, (r0, r1) in enumerate(rows):
            for j, (c0, c1) in enumerate(cols):
                dx[:, :, r0:r1, c0:c1] += dout[:, :, i : i + 1, j : j + 1] / float(
                    (r1 - r0) * (c1 - c0)
                )
        _accumulate(x, dx)

    return _make(data, "adaptive_avg_pool2d", (x,), bwd)


# ---------------------------------------------------------------------------
# batch normalization


class BatchNormState:
    """Running statistics buffer for one batchnorm layer."""

    __slots__ = ("mean", "var")

    def __init__(self, channels: int):
        self.mean = np.zeros(channels, dtype=F32)
        self.var = np.ones(channels, dtype=F32)

    def copy(self) -> "BatchNormState":
        s = BatchNormState(len(self.mean))
        s.mean = self.mean.copy()
        s.var = self.var.copy()
        return s


def batchnorm2d(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    state: BatchNormState,
    train: bool,
    momentum: float = 0.1,
    eps: float = 1e-5,
    update_stats: bool = True,
) -> Tensor:
    """Per-channel normalization over (N, H, W); running stats in eval."""
    if x.data.ndim != 4 or x.data.shape[1] != gamma.data.shape[0]:
        raise ShapeError(
            f"batchnorm2d input {x.data.shape} vs gamma {gamma.data.shape}"
        )
    n, c, h, w = x.data.shape
    count = n * h * w
    g = gamma.data.reshape(1, c, 1, 1)
    if train:
        mean = x.data.mean(axis=(0, 2, 3))
        var = x.data.var(axis=(0, 2, 3))
        if update_stats:
            state.mean = ((1 - momentum) * state.mean + momentum * mean).astype(F32)
            # unbiased variance for the running buffer, biased in the pass
            unbiased = var * (count / max(1, count - 1))
            state.var = ((1 - momentum) * state.var + momentum * unbiased).astype(F32)
    else:
        mean, var = state.mean, state.var
    inv_std = (1.0 / np.sqrt(var + eps)).astype(x.data.dtype).reshape(1, c, 1, 1)
    xhat = (x.data - mean.reshape(1, c, 1, 1)) * inv_std
    data = g * xhat + beta.data.reshape(1, c, 1, 1)

    def bwd(dout):
        _accumulate(beta, dout.sum(axis=(0, 2, 3)))
        _accumulate(gamma, (dout * xhat).sum(axis=(0, 2, 3)))
        if not x.requires_grad:
            return
        dxhat = dout * g
        if train:
            s1 = dxhat.sum(axis=(0, 2, 3), keepdims=True)
            s2 = (dxhat * xhat).sum(axis=(0, 2, 3), keepdims=True)
            dx = inv_std / count * (count * dxhat - s1 - xhat * s2)
        else:
            dx = dxhat * inv_std
        _accumulate(x, dx)

    return _make(data, "batchnorm2d", (x, gamma, beta), bwd)


# ---------------------------------------------------------------------------
# losses


def softmax_probs(logits: np.ndarray, axis: int = 1) -> np.ndarray:
    z = logits - logits.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return (e / e.sum(axis=axis, keepdims=True)).astype(F32)


def softmax_cross_entropy(logits: Tensor, target_idx: np.ndarray) -> Tensor:
    """Mean cross entropy with integer class targets; class axis is 1."""
    if logits.data.ndim < 2:
        raise ShapeError(f"softmax_cross_entropy needs a class axis, got {logits.data.shape}")
    expected = logits.data.shape[:1] + logits.data.shape[2:]
    if tuple(target_idx.shape) != expected:
        raise ShapeError(
            f"targets {target_idx.shape} do not match logits {logits.data.shape}"
        )
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - lse
    onehot_idx = np.expand_dims(target_idx, 1)
    picked = np.take_along_axis(logp, onehot_idx, axis=1)
    n_items = picked.size
    data = np.array(-stable_sum(picked) / n_items, dtype=logits.data.dtype)

    def bwd(dout):
        if not logits.requires_grad:
            return
        probs = np.exp(logp)
        grad = probs.copy()
        np.put_along_axis(
            grad, onehot_idx, np.take_along_axis(grad, onehot_idx, axis=1) - 1.0, axis=1
        )
        _accumulate(logits, grad * (dout.reshape(()) / n_items))

    return _make(data, "softmax_cross_entropy", (logits,), bwd)


def mse(pred: Tensor, target: Tensor) -> Tensor:
    """Mean squared error over all elements."""
    if pred.data.shape != target.data.shape:
        raise ShapeError(f"mse shapes differ: {pred.data.shape} vs {target.data.shape}")
    diff = pred.data - target.data
    n = diff.size
    data = np.array(stable_sum(diff * diff) / n, dtype=diff.dtype)

    def bwd(dout):
        g = dout.reshape(()) * (2.0 / n) * diff
        _accumulate(pred, g)
        _accumulate(target, -g)

    return _make(data, "mse", (pred, target), bwd)


def bce_with_logits(logits: Tensor, targets: np.ndarray) -> Tensor:
    """Elementwise binary cross entropy on logits (no reduction).

    Stable form max(z,0) - z*t + log1p(exp(-|z|)); compose with mul /
    sum_all for masked or mean reductions.
    """
    t = np.asarray(targets, dtype=logits.data.dtype)
    if logits.data.shape != t.shape:
        raise ShapeError(f"bce shapes differ: {logits.data.shape} vs {t.shape}")
    z = logits.data
    data = np.maximum(z, 0) - z * t + np.log1p(np.exp(-np.abs(z)))

    def bwd(dout):
        _accumulate(logits, dout * (_sigmoid_np(z) - t))

    return _make(data, "bce_with_logits", (logits,), bwd)


def iou_loss(pred_xyxy: Tensor, target_xyxy: np.ndarray, mask: Optional[np.ndarray] = None) -> Tensor:
    """Mean (1 - IoU) over masked rows of (M, 4) corner boxes.

    Degenerate overlap (empty intersection or union) contributes IoU 0
    with a zero subgradient.  Masked-out rows carry no gradient; the
    denominator is max(1, number of masked-in rows).
    """
    if pred_xyxy.data.ndim != 2 or pred_xyxy.data.shape[1] != 4:
        raise ShapeError(f"iou_loss needs (M, 4) boxes, got {pred_xyxy.data.shape}")
    tgt = np.asarray(target_xyxy, dtype=pred_xyxy.data.dtype)
    if tgt.shape != pred_xyxy.data.shape:
        raise ShapeError(f"iou_loss target {tgt.shape} vs pred {pred_xyxy.data.shape}")
    m = np.ones(len(tgt), dtype=tgt.dtype) if mask is None else np.asarray(mask, dtype=tgt.dtype)

    p = pred_xyxy.data
    ix1 = np.maximum(p[:, 0], tgt[:, 0])
    iy1 = np.maximum(p[:, 1], tgt[:, 1])
    ix2 = np.minimum(p[:, 2], tgt[:, 2])
    iy2 = np.minimum(p[:, 3], tgt[:, 3])
    iw = np.maximum(ix2 - ix1, 0.0)
    ih = np.maximum(iy2 - iy1, 0.0)
    inter = iw * ih
    area_p = np.maximum(p[:, 2] - p[:, 0], 0.0) * np.maximum(p[:, 3] - p[:, 1], 0.0)
    area_t = np.maximum(tgt[:, 2] - tgt[:, 0], 0.0) * np.maximum(tgt[:, 3] - tgt[:, 1], 0.0)
    union = area_p + area_t - inter
    valid = union > 0
    iou = np.where(valid, inter / np.where(valid, union, 1.0), 0.0)
    denom = max(1.0, float(m.sum()))
    data = np.array(stable_sum(m * (1.0 - iou)) / denom, dtype=tgt.dtype)

    def bwd(dout):
        if not pred_xyxy.requires_grad:
            return
        scale = (dout.reshape(()) / denom) * m
        # d(1-iou)/d iou = -1; iou = inter/union, d union = d area_p - d inter
        diou = -scale
        dinter = np.where(valid, diou * (union + inter) / np.where(valid, union * union, 1.0), 0.0)
        darea_p = np.where(valid, -diou * inter / np.where(valid, union * union, 1.0), 0.0)

        live = (iw > 0) & (ih > 0)
        g = np.zeros_like(p)
        # intersection corner derivatives exist only where pred bounds bind
        g[:, 0] += dinter * np.where(live & (p[:, 0] >= tgt[:, 0]), -ih, 0.0)
        g[:, 1] += dinter * np.where(live & (p[:, 1] >= tgt[:, 1]), -iw, 0.0)
        g[:, 2] += dinter * np.where(live & (p[:, 2] <= tgt[:, 2]), ih, 0.0)
        g[:, 3] += dinter * np.where(live & (p[:, 3] <= tgt[:, 3]), iw, 0.0)
        pw = np.maximum(p[:, 2] - p[:, 0], 0.0)
        ph = np.maximum(p[:, 3] - p[:, 1], 0.0)
        pos_area = (pw > 0) & (ph > 0)
        g[:, 0] += darea_p * np.where(pos_area, -ph, 0.0)
        g[:, 2] += darea_p * np.where(pos_area, ph, 0.0)
        g[:, 1] += darea_p * np.where(pos_area, -pw, 0.0)
        g[:, 3] += darea_p * np.where(pos_area, pw, 0.0)
        _accumulate(pred_xyxy, g)

    return _make(data, "iou_loss", (pred_xyxy,), bwd)
