"""Reverse-mode automatic differentiation on numpy arrays.

A :class:`Graph` is an execution-order tape: ops executed while a graph is
active append themselves, and ``backward`` walks the tape in reverse calling
each node's stored gradient closure. With no active graph the same ops run as
plain numpy (inference mode, no bookkeeping).

Convolution is im2col + GEMM; a deliberately naive loop implementation is
kept as a correctness/performance reference. All ops are dtype-preserving so
the whole engine can run in float64 for finite-difference verification while
training runs in float32.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

__all__ = [
    "Tensor", "Graph", "add", "scale", "relu", "linear", "concat",
    "conv2d", "naive_conv2d", "batchnorm2d", "max_pool2d",
    "global_avg_pool", "softmax_cross_entropy", "mse",
    "SGD", "Adam", "save_checkpoint", "load_checkpoint", "config_hash",
    "check_gradients", "CheckpointError",
]

_ACTIVE: "Graph | None" = None


class Tensor:
    """An array with an optional accumulated gradient."""

    __slots__ = ("data", "grad", "requires_grad", "name", "_backward")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}{tag})"


class Graph:
    """Execution-order tape. Use as a context manager around the forward
    pass, then call ``backward(loss)``."""

    def __init__(self):
        self._tape: list[Tensor] = []

    def __enter__(self):
        global _ACTIVE
        if _ACTIVE is not None:
            raise RuntimeError("a Graph is already active")
        _ACTIVE = self
        return self

    def __exit__(self, *exc):
        global _ACTIVE
        _ACTIVE = None
        return False

    def backward(self, loss: Tensor) -> None:
        if loss.data.ndim != 0:
            raise ValueError("backward requires a scalar loss")
        self.backward_from(loss, np.ones_like(loss.data))

    def backward_from(self, tensor: Tensor, grad: np.ndarray) -> None:
        """Backpropagate a caller-supplied output gradient (e.g. a one-hot
        logit selector for saliency maps)."""
        grad = np.asarray(grad, dtype=tensor.data.dtype)
        if grad.shape != tensor.data.shape:
            raise ValueError("seed gradient shape must match the tensor")
        tensor.accumulate(grad)
        for node in reversed(self._tape):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
        self._tape.clear()


def _record(out: Tensor, backward) -> Tensor:
    if _ACTIVE is not None:
        out._backward = backward
        _ACTIVE._tape.append(out)
    return out


def _tracing() -> bool:
    return _ACTIVE is not None


# ---------------------------------------------------------------------------
# elementwise / shape ops


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape:
        raise ValueError("add requires identical shapes")
    out = Tensor(a.data + b.data)

    def backward(g):
        a.accumulate(g)
        b.accumulate(g)

    return _record(out, backward)


def scale(a: Tensor, c: float) -> Tensor:
    out = Tensor(a.data * a.data.dtype.type(c))

    def backward(g):
        a.accumulate(g * a.data.dtype.type(c))

    return _record(out, backward)


def relu(a: Tensor) -> Tensor:
    out = Tensor(np.maximum(a.data, 0))

    def backward(g):
        a.accumulate(g * (a.data > 0))

    return _record(out, backward)


def concat(a: Tensor, b: Tensor, axis: int = 1) -> Tensor:
    out = Tensor(np.concatenate([a.data, b.data], axis=axis))
    na = a.data.shape[axis]

    def backward(g):
        ga, gb = np.split(g, [na], axis=axis)
        a.accumulate(ga)
        b.accumulate(gb)

    return _record(out, backward)


def linear(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """x (N, in) @ weight (out, in).T + bias (out,)"""
    out = Tensor(x.data @ weight.data.T + bias.data)

    def backward(g):
        x.accumulate(g @ weight.data)
        weight.accumulate(g.T @ x.data)
        bias.accumulate(g.sum(axis=0))

    return _record(out, backward)


# ---------------------------------------------------------------------------
# convolution


def _im2col(xp: np.ndarray, kh: int, kw: int, stride: int) -> np.ndarray:
    """(N, Hp, Wp, C) -> (N*Ho*Wo, kh*kw*C), contiguous copy."""
    n, hp, wp, c = xp.shape
    ho = (hp - kh) // stride + 1
    wo = (wp - kw) // stride + 1
    sn, sh, sw, sc = xp.strides
    view = np.lib.stride_tricks.as_strided(
        xp,
        shape=(n, ho, wo, kh, kw, c),
        strides=(sn, sh * stride, sw * stride, sh, sw, sc),
        writeable=False,
    )
    return np.ascontiguousarray(view).reshape(n * ho * wo, kh * kw * c)


def conv2d(x: Tensor, weight: Tensor, bias: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D convolution (cross-correlation), NHWC layout.

    x (N, H, W, C), weight (Co, C, kh, kw), bias (Co,). Channels-last keeps
    the whole batch in one GEMM with no transposes on the hot path.
    """
    n, h, w, c = x.data.shape
    co, ci, kh, kw = weight.data.shape
    if ci != c:
        raise ValueError(f"channel mismatch: input {c}, weight {ci}")
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (w + 2 * padding - kw) // stride + 1
    if ho <= 0 or wo <= 0:
        raise ValueError("kernel larger than padded input")
    if padding:
        xp = np.pad(x.data, ((0, 0), (padding, padding), (padding, padding), (0, 0)))
    else:
        xp = x.data
    cols = _im2col(xp, kh, kw, stride)                      # (N*Ho*Wo, kh*kw*C)
    w2 = np.ascontiguousarray(
        weight.data.transpose(2, 3, 1, 0).reshape(kh * kw * c, co))
    y = cols @ w2                                           # (N*Ho*Wo, Co)
    y += bias.data
    out = Tensor(y.reshape(n, ho, wo, co))

    if not _tracing():
        return out

    def backward(g):
        g2 = g.reshape(n * ho * wo, co)
        dw2 = cols.T @ g2                                   # (kh*kw*C, Co)
        weight.accumulate(dw2.reshape(kh, kw, c, co).transpose(3, 2, 0, 1))
        bias.accumulate(g2.sum(axis=0))
        dcols = g2 @ w2.T                                   # (N*Ho*Wo, kh*kw*C)
        dcols = dcols.reshape(n, ho, wo, kh, kw, c)
        dxp = np.zeros_like(xp)
        for i in range(kh):
            for j in range(kw):
                dxp[:, i: i + ho * stride: stride, j: j + wo * stride: stride, :] += \
                    dcols[:, :, :, i, j, :]
        if padding:
            dxp = dxp[:, padding:-padding, padding:-padding, :]
        x.accumulate(dxp)

    return _record(out, backward)


def naive_conv2d(x: np.ndarray, weight: np.ndarray, bias: np.ndarray,
                 stride: int = 1, padding: int = 0) -> np.ndarray:
    """Reference convolution: explicit loops over output positions.

    Same NHWC layout and (Co, C, kh, kw) weights as conv2d.
    """
    n, h, w, c = x.shape
    co, _, kh, kw = weight.shape
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (w + 2 * padding - kw) // stride + 1
    if padding:
        x = np.pad(x, ((0, 0), (padding, padding), (padding, padding), (0, 0)))
    out = np.empty((n, ho, wo, co), dtype=x.dtype)
    for bi in range(n):
        for oc in range(co):
            for i in range(ho):
                for j in range(wo):
                    patch = x[bi, i * stride: i * stride + kh, j * stride: j * stride + kw, :]
                    out[bi, i, j, oc] = np.sum(patch.transpose(2, 0, 1) * weight[oc]) + bias[oc]
    return out


# ---------------------------------------------------------------------------
# pooling / normalization


def max_pool2d(x: Tensor) -> Tensor:
    """2x2 max pooling, stride 2, NHWC. Requires even spatial dims."""
    n, h, w, c = x.data.shape
    if h % 2 or w % 2:
        raise ValueError("max_pool2d requires even height and width")
    win = x.data.reshape(n, h // 2, 2, w // 2, 2, c).transpose(0, 1, 3, 5, 2, 4)
    win = np.ascontiguousarray(win).reshape(n, h // 2, w // 2, c, 4)
    idx = win.argmax(axis=-1)
    out = Tensor(np.take_along_axis(win, idx[..., None], axis=-1)[..., 0])

    def backward(g):
        dwin = np.zeros_like(win)
        np.put_along_axis(dwin, idx[..., None], g[..., None], axis=-1)
        dx = dwin.reshape(n, h // 2, w // 2, c, 2, 2).transpose(0, 1, 4, 2, 5, 3)
        x.accumulate(dx.reshape(n, h, w, c))

    return _record(out, backward)


def global_avg_pool(x: Tensor) -> Tensor:
    """(N, H, W, C) -> (N, C) spatial mean."""
    n, h, w, c = x.data.shape
    out = Tensor(x.data.mean(axis=(1, 2)))

    def backward(g):
        x.accumulate(np.broadcast_to(g[:, None, None, :] / (h * w), x.data.shape).copy())

    return _record(out, backward)


def batchnorm2d(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    momentum: float = 0.1,
    eps: float = 1e-5,
) -> Tensor:
    """Per-channel batch normalization over (N, H, W), NHWC layout.

    In training mode the batch statistics normalize and the running buffers
    are updated in place (unbiased variance in the running estimate).
    """
    n, h, w, c = x.data.shape
    if training:
        m = n * h * w
        mu = x.data.mean(axis=(0, 1, 2))
        var = x.data.var(axis=(0, 1, 2))
        running_mean *= 1.0 - momentum
        running_mean += momentum * mu
        running_var *= 1.0 - momentum
        running_var += momentum * var * (m / max(m - 1, 1))
    else:
        mu, var = running_mean, running_var
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv_std
    out = Tensor(gamma.data * xhat + beta.data)

    if not _tracing():
        return out

    def backward(g):
        gamma.accumulate((g * xhat).sum(axis=(0, 1, 2)))
        beta.accumulate(g.sum(axis=(0, 1, 2)))
        gs = g * gamma.data
        if training:
            dx = (gs - gs.mean(axis=(0, 1, 2))
                  - xhat * (gs * xhat).mean(axis=(0, 1, 2))) * inv_std
            x.accumulate(dx)
        else:
            x.accumulate(gs * inv_std)

    return _record(out, backward)


# ---------------------------------------------------------------------------
# losses


def softmax_cross_entropy(logits: Tensor, targets: np.ndarray) -> Tensor:
    """Mean cross-entropy between row-softmax(logits) and integer targets."""
    targets = np.asarray(targets)
    n, k = logits.data.shape
    if targets.shape != (n,):
        raise ValueError("targets must be (N,) integers")
    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_probs = shifted - log_z
    out = Tensor(np.asarray(-log_probs[np.arange(n), targets].mean(), dtype=logits.data.dtype))

    def backward(g):
        probs = np.exp(log_probs)
        probs[np.arange(n), targets] -= 1.0
        logits.accumulate(g * probs / n)

    return _record(out, backward)


def mse(pred: Tensor, target: np.ndarray) -> Tensor:
    target = np.asarray(target)
    if pred.data.shape != target.shape:
        raise ValueError("shape mismatch")
    diff = pred.data - target
    out = Tensor(np.asarray((diff * diff).mean(), dtype=pred.data.dtype))

    def backward(g):
        pred.accumulate(g * 2.0 * diff / diff.size)

    return _record(out, backward)


# ---------------------------------------------------------------------------
# optimizers


class SGD:
    def __init__(self, params: list[Tensor], lr: float, momentum: float = 0.0):
        if lr <= 0:
            raise ValueError("lr must be > 0")
        self.params = list(params)
        self.lr = lr
        self.momentum = momentum
        self._velocity = [np.zeros_like(p.data) for p in self.params]

    def step(self):
        for p, v in zip(self.params, self._velocity):
            if p.grad is None:
                continue
            if self.momentum:
                v *= self.momentum
                v += p.grad
                p.data -= self.lr * v
            else:
                p.data -= self.lr * p.grad

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()


class Adam:
    def __init__(self, params: list[Tensor], lr: float = 1e-3,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        if lr <= 0:
            raise ValueError("lr must be > 0")
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self._m = [np.zeros_like(p.data) for p in self.params]
        self._v = [np.zeros_like(p.data) for p in self.params]

    def step(self):
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for p, m, v in zip(self.params, self._m, self._v):
            if p.grad is None:
                continue
            m *= self.beta1
            m += (1.0 - self.beta1) * p.grad
            v *= self.beta2
            v += (1.0 - self.beta2) * (p.grad * p.grad)
            p.data -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()


# ---------------------------------------------------------------------------
# checkpoints

CHECKPOINT_MAGIC = b"IGNCKPT1"


class CheckpointError(RuntimeError):
    pass


def config_hash(config: dict) -> bytes:
    """First 8 bytes of the sha256 of the canonical JSON encoding."""
    canon = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode("utf-8")).digest()[:8]


def save_checkpoint(path, tensors: dict[str, np.ndarray], config: dict,
                    sidecar_extra: dict | None = None) -> None:
    """Write named float32 tensors plus a JSON sidecar holding the config.

    Binary layout: magic, 8-byte config hash, u32 tensor count, then per
    tensor: u16 name length, name utf-8, u8 rank, u32 dims, f32 LE data.
    """
    path = Path(path)
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(config_hash(config))
        f.write(struct.pack("<I", len(tensors)))
        for name, arr in tensors.items():
            data = np.ascontiguousarray(arr, dtype="<f4")
            enc = name.encode("utf-8")
            f.write(struct.pack("<H", len(enc)))
            f.write(enc)
            f.write(struct.pack("<B", data.ndim))
            f.write(struct.pack(f"<{data.ndim}I", *data.shape))
            f.write(data.tobytes())
    sidecar = {"config": config}
    if sidecar_extra:
        sidecar.update(sidecar_extra)
    with open(str(path) + ".json", "w", encoding="utf-8") as f:
        json.dump(sidecar, f, indent=1, sort_keys=True)


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    """Returns (tensors, sidecar dict). Verifies magic and config hash."""
    path = Path(path)
    try:
        with open(str(path) + ".json", encoding="utf-8") as f:
            sidecar = json.load(f)
    except FileNotFoundError as e:
        raise CheckpointError("missing checkpoint sidecar") from e
    with open(path, "rb") as f:
        if f.read(8) != CHECKPOINT_MAGIC:
            raise CheckpointError("bad checkpoint magic")
        stored_hash = f.read(8)
        if stored_hash != config_hash(sidecar.get("config", {})):
            raise CheckpointError("checkpoint config hash mismatch")
        (count,) = struct.unpack("<I", f.read(4))
        tensors = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<H", f.read(2))
            name = f.read(name_len).decode("utf-8")
            (rank,) = struct.unpack("<B", f.read(1))
            dims = struct.unpack(f"<{rank}I", f.read(4 * rank))
            n_bytes = 4 * int(np.prod(dims, dtype=np.int64)) if rank else 4
            buf = f.read(n_bytes)
            if len(buf) != n_bytes:
                raise CheckpointError("truncated checkpoint")
            tensors[name] = np.frombuffer(buf, dtype="<f4").reshape(dims).copy()
    return tensors, sidecar


# ---------------------------------------------------------------------------
# finite-difference verification


def check_gradients(fn, tensors: list[Tensor], h: float = 1e-6) -> float:
    """Compare analytic gradients of scalar ``fn(*tensors)`` against central
    finite differences in float64. Returns the worst relative error (grad
    vector norm of the difference over the norm of the larger side)."""
    for t in tensors:
        if t.data.dtype != np.float64:
            raise ValueError("gradient checks require float64 tensors")
        t.zero_grad()
    with Graph() as g:
        loss = fn(*tensors)
        g.backward(loss)
    worst = 0.0
    for t in tensors:
        analytic = np.zeros_like(t.data) if t.grad is None else t.grad
        numeric = np.empty_like(t.data)
        flat = t.data.ravel()
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            hi = float(fn(*tensors).data)
            flat[i] = orig - h
            lo = float(fn(*tensors).data)
            flat[i] = orig
            numeric.ravel()[i] = (hi - lo) / (2 * h)
        denom = max(np.linalg.norm(analytic), np.linalg.norm(numeric), 1e-12)
        worst = max(worst, float(np.linalg.norm(analytic - numeric) / denom))
    return worst
