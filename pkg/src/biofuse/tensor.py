"""Dense float64 tensors with taped reverse-mode gradients.

Everything is stored row-major in 64-bit floats. Operations run eagerly on
numpy arrays; when a GradTape is active, each primitive records the inputs it
needs for its backward rule, and ``GradTape.backward`` replays the records in
exact reverse execution order.
"""
from __future__ import annotations

import threading
from typing import Callable, Iterable, Sequence

import numpy as np


class ShapeError(ValueError):
    """Operand shapes violate an operation's contract."""


_active = threading.local()


def _current_tape() -> "GradTape | None":
    return getattr(_active, "tape", None)


class Tensor:
    """A dense N-dimensional float64 array, optionally tracked for gradients."""

    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise ValueError("tensor values must be finite (got NaN or Inf)")
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __mul__(self, s: float) -> "Tensor":
        return scale(self, s)

    __rmul__ = __mul__


class GradTape:
    """Ordered record of executed primitives for reverse-mode differentiation.

    Use as a context manager; ops executed inside record themselves when any
    input requires a gradient. A tape belongs to a single thread.
    """

    def __init__(self):
        # each record: (output, inputs, backward) where backward maps the
        # output gradient to one gradient array (or None) per input
        self._records: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []

    def __enter__(self) -> "GradTape":
        if _current_tape() is not None:
            raise RuntimeError("a GradTape is already active on this thread")
        _active.tape = self
        return self

    def __exit__(self, *exc):
        _active.tape = None
        return False

    def backward(self, loss: Tensor, params: Iterable[Tensor] | None = None):
        """Accumulate gradients of ``loss`` into ``.grad`` of recorded tensors.

        ``loss`` must be a scalar produced under this tape. Tensors listed in
        ``params`` are guaranteed a gradient array afterwards (zeros if the
        loss never touched them).
        """
        if loss.data.size != 1:
            raise ShapeError(
                f"backward requires a scalar loss, got shape {loss.shape}"
            )
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        holders: dict[int, Tensor] = {id(loss): loss}
        for out, inputs, bwd in reversed(self._records):
            g_out = grads.get(id(out))
            if g_out is None:
                continue
            for tens, g_in in zip(inputs, bwd(g_out)):
                if g_in is None or not tens.requires_grad:
                    continue
                key = id(tens)
                holders[key] = tens
                acc = grads.get(key)
                grads[key] = g_in if acc is None else acc + g_in
        for key, tens in holders.items():
            tens.grad = grads[key]
        if params is not None:
            for p in params:
                p.grad = grads.get(id(p), np.zeros_like(p.data))


def _record(out: Tensor, inputs: tuple[Tensor, ...], backward: Callable) -> Tensor:
    tape = _current_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        tape._records.append((out, inputs, backward))
    return out


# ---------------------------------------------------------------------------
# primitives


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product; also accepts a 1-D right operand as a column vector."""
    if a.ndim != 2 or b.ndim not in (1, 2):
        raise ShapeError(f"matmul expects 2-D x (1|2)-D, got {a.shape} x {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dimensions disagree, {a.shape} x {b.shape}")
    out = Tensor(a.data @ b.data)
    a_data, b_data = a.data, b.data

    if b.ndim == 2:
        def backward(g):
            return g @ b_data.T, a_data.T @ g
    else:
        def backward(g):
            return np.outer(g, b_data), a_data.T @ g

    return _record(out, (a, b), backward)


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"add: shapes differ, {a.shape} vs {b.shape}")
    out = Tensor(a.data + b.data)
    return _record(out, (a, b), lambda g: (g, g))


def scale(a: Tensor, s: float) -> Tensor:
    s = float(s)
    out = Tensor(a.data * s)
    return _record(out, (a,), lambda g: (g * s,))


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    old = a.shape
    out = Tensor(a.data.reshape(shape))
    return _record(out, (a,), lambda g: (g.reshape(old),))


def flatten(a: Tensor) -> Tensor:
    return reshape(a, (-1,))


def tensor_sum(a: Tensor) -> Tensor:
    """Sum of all entries, as a scalar tensor."""
    shape = a.shape
    out = Tensor(a.data.sum())
    return _record(out, (a,), lambda g: (np.full(shape, float(g)),))


def concat(parts: Sequence[Tensor]) -> Tensor:
    """Concatenate 1-D tensors in order."""
    for p in parts:
        if p.ndim != 1:
            raise ShapeError(f"concat expects 1-D parts, got {p.shape}")
    sizes = [p.size for p in parts]
    out = Tensor(np.concatenate([p.data for p in parts]))
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        return tuple(g[offsets[i]:offsets[i + 1]] for i in range(len(sizes)))

    return _record(out, tuple(parts), backward)


def conv2d(x: Tensor, kernels: Tensor, bias: Tensor, stride: int = 1,
           padding: int = 0) -> Tensor:
    """2-D cross-correlation of a CxHxW input with OxCxkhxkw kernels.

    Output height is floor((H + 2*padding - kh)/stride) + 1, same for width.
    """
    if x.ndim != 3 or kernels.ndim != 4 or bias.ndim != 1:
        raise ShapeError(
            f"conv2d expects 3-D input / 4-D kernels / 1-D bias, got "
            f"{x.shape} / {kernels.shape} / {bias.shape}"
        )
    c_in, h, w = x.shape
    c_out, kc, kh, kw = kernels.shape
    if kc != c_in:
        raise ShapeError(f"conv2d: kernel channels {kc} != input channels {c_in}")
    if bias.shape[0] != c_out:
        raise ShapeError(f"conv2d: bias length {bias.shape[0]} != {c_out} kernels")
    if stride < 1 or padding < 0:
        raise ValueError("conv2d: stride must be >= 1 and padding >= 0")
    if h + 2 * padding < kh or w + 2 * padding < kw:
        raise ShapeError(
            f"conv2d: kernel {kh}x{kw} larger than padded input "
            f"{h + 2 * padding}x{w + 2 * padding}"
        )
    oh = (h + 2 * padding - kh) // stride + 1
    ow = (w + 2 * padding - kw) // stride + 1
    xp = np.pad(x.data, ((0, 0), (padding, padding), (padding, padding)))
    k = kernels.data
    out_data = np.broadcast_to(bias.data[:, None, None], (c_out, oh, ow)).copy()
    for ki in range(kh):
        for kj in range(kw):
            patch = xp[:, ki:ki + stride * oh:stride, kj:kj + stride * ow:stride]
            out_data += np.tensordot(k[:, :, ki, kj], patch, axes=([1], [0]))
    out = Tensor(out_data)

    def backward(g):
        dk = np.empty_like(k)
        dxp = np.zeros_like(xp)
        for ki in range(kh):
            for kj in range(kw):
                patch = xp[:, ki:ki + stride * oh:stride, kj:kj + stride * ow:stride]
                dk[:, :, ki, kj] = np.tensordot(g, patch, axes=([1, 2], [1, 2]))
                dxp[:, ki:ki + stride * oh:stride, kj:kj + stride * ow:stride] += (
                    np.tensordot(k[:, :, ki, kj], g, axes=([0], [0]))
                )
        dx = dxp[:, padding:padding + h, padding:padding + w]
        return dx, dk, g.sum(axis=(1, 2))

    return _record(out, (x, kernels, bias), backward)


def maxpool2d(x: Tensor, size: int, stride: int) -> Tensor:
    """Max over size x size windows; gradient routes to the first (row-major)
    maximal element of each window."""
    if x.ndim != 3:
        raise ShapeError(f"maxpool2d expects a 3-D input, got {x.shape}")
    if size < 1 or stride < 1:
        raise ValueError("maxpool2d: size and stride must be >= 1")
    c, h, w = x.shape
    if h < size or w < size:
        raise ShapeError(f"maxpool2d: window {size} exceeds input {h}x{w}")
    oh = (h - size) // stride + 1
    ow = (w - size) // stride + 1
    s0, s1, s2 = x.data.strides
    windows = np.lib.stride_tricks.as_strided(
        x.data, shape=(c, oh, ow, size, size),
        strides=(s0, s1 * stride, s2 * stride, s1, s2), writeable=False,
    ).reshape(c, oh, ow, size * size)
    arg = windows.argmax(axis=3)
    out = Tensor(np.take_along_axis(windows, arg[..., None], axis=3)[..., 0])

    def backward(g):
        dx = np.zeros((c, h, w))
        ci, oi, oj = np.meshgrid(np.arange(c), np.arange(oh), np.arange(ow),
                                 indexing="ij")
        rows = oi * stride + arg // size
        cols = oj * stride + arg % size
        np.add.at(dx, (ci, rows, cols), g)
        return (dx,)

    return _record(out, (x,), backward)


def dense(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Affine map weight @ x + bias for a 1-D input."""
    if x.ndim != 1 or weight.ndim != 2 or bias.ndim != 1:
        raise ShapeError(
            f"dense expects 1-D x / 2-D weight / 1-D bias, got "
            f"{x.shape} / {weight.shape} / {bias.shape}"
        )
    if weight.shape[1] != x.shape[0] or weight.shape[0] != bias.shape[0]:
        raise ShapeError(
            f"dense: weight {weight.shape} incompatible with input {x.shape} "
            f"and bias {bias.shape}"
        )
    out = Tensor(weight.data @ x.data + bias.data)
    x_data, w_data = x.data, weight.data

    def backward(g):
        return w_data.T @ g, np.outer(g, x_data), g

    return _record(out, (x, weight, bias), backward)


def global_avg_pool(x: Tensor) -> Tensor:
    """Mean over the spatial axes of a CxHxW map, yielding a length-C vector."""
    if x.ndim != 3:
        raise ShapeError(f"global_avg_pool expects a 3-D input, got {x.shape}")
    c, h, w = x.shape
    out = Tensor(x.data.mean(axis=(1, 2)))

    def backward(g):
        return (np.broadcast_to(g[:, None, None] / (h * w), (c, h, w)).copy(),)

    return _record(out, (x,), backward)


ACTIVATION_KINDS = ("relu", "tanh", "sigmoid")


def activation(x: Tensor, kind: str) -> Tensor:
    """Elementwise nonlinearity: relu, tanh or sigmoid."""
    if kind == "relu":
        return relu(x)
    if kind == "tanh":
        return tanh(x)
    if kind == "sigmoid":
        return sigmoid(x)
    raise ValueError(f"unknown activation kind {kind!r}; expected one of "
                     f"{ACTIVATION_KINDS}")


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    out = Tensor(np.where(mask, x.data, 0.0))
    return _record(out, (x,), lambda g: (g * mask,))


def tanh(x: Tensor) -> Tensor:
    out_data = np.tanh(x.data)
    out = Tensor(out_data)
    return _record(out, (x,), lambda g: (g * (1.0 - out_data * out_data),))


def sigmoid(x: Tensor) -> Tensor:
    z = x.data
    out_data = np.where(z >= 0, 1.0 / (1.0 + np.exp(-np.abs(z))),
                        np.exp(-np.abs(z)) / (1.0 + np.exp(-np.abs(z))))
    out = Tensor(out_data)
    return _record(out, (x,), lambda g: (g * out_data * (1.0 - out_data),))


def softmax_cross_entropy(logits: Tensor, label: int) -> Tensor:
    """Cross-entropy of softmax(logits) against a class index, as a scalar.

    Uses max-shifted log-sum-exp, so extreme logits cannot overflow. The
    recorded gradient is softmax(logits) - one_hot(label).
    """
    if logits.ndim != 1:
        raise ShapeError(f"softmax_cross_entropy expects 1-D logits, got "
                         f"{logits.shape}")
    c = logits.shape[0]
    label = int(label)
    if not 0 <= label < c:
        raise IndexError(f"label {label} out of range for {c} classes")
    z = logits.data
    m = z.max()
    exp_shifted = np.exp(z - m)
    denom = exp_shifted.sum()
    loss = m + np.log(denom) - z[label]
    probs = exp_shifted / denom
    out = Tensor(loss)

    def backward(g):
        grad = probs.copy()
        grad[label] -= 1.0
        return (grad * float(g),)

    return _record(out, (logits,), backward)


def softmax_probs(logits: np.ndarray) -> np.ndarray:
    """Plain softmax on a numpy vector (no tape)."""
    z = logits - logits.max()
    e = np.exp(z)
    return e / e.sum()
