"""Dense float64 tensors with define-by-run reverse-mode differentiation.

Operations executed while a :class:`Tape` is active are recorded on it when at
least one input requires a gradient. ``Tape.backward`` replays the records in
exact reverse order. Without an active tape every op is a plain numpy
computation, which is what inference and validation passes use.

Tensors are batch-friendly: the layer ops accept an optional leading batch
axis (``N x H x W x C`` for images, ``N x F`` for feature vectors).
"""

from __future__ import annotations

import struct
import weakref
from dataclasses import dataclass
from typing import BinaryIO, Callable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "Tape",
    "ShapeError",
    "ConfigurationError",
    "current_tape",
    "no_grad",
    "matmul",
    "add",
    "sub",
    "mul",
    "scale",
    "conv2d",
    "maxpool2d",
    "relu",
    "sigmoid",
    "tanh",
    "elementwise",
    "concat",
    "split",
    "reshape",
    "flatten",
    "tsum",
    "mean",
    "square",
    "tabs",
    "outer",
    "augment_ones",
    "external",
    "backward",
    "inject_gradient",
    "write_tensor",
    "read_tensor",
    "save_tensors",
    "load_tensors",
]

DTYPE = np.float64


class ShapeError(ValueError):
    """Operand shapes are incompatible."""


class ConfigurationError(ValueError):
    """Layer geometry does not produce a valid output."""


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "name", "_tape_ref", "__weakref__")

    __array_priority__ = 100.0

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.array(data, dtype=DTYPE, copy=True) if not isinstance(data, np.ndarray) \
            else np.ascontiguousarray(data, dtype=DTYPE)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.name = name
        self._tape_ref: weakref.ref | None = None

    @property
    def _tape(self) -> "Tape | None":
        # weak, so a finished forward pass is freed by refcounting alone
        return self._tape_ref() if self._tape_ref is not None else None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    def __len__(self) -> int:
        return self.data.shape[0]

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("division by a Tensor is not supported")
        return scale(self, 1.0 / float(other))

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self):
        return tsum(self)

    def mean(self):
        return mean(self)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def backward(self, grad=None) -> None:
        backward(self, grad=grad)


@dataclass
class _Record:
    inputs: tuple[Tensor, ...]
    output: Tensor
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]
    op: str


_ACTIVE: list["Tape"] = []


def current_tape() -> "Tape | None":
    return _ACTIVE[-1] if _ACTIVE else None


class Tape:
    """Ordered record of differentiable operations for one forward pass."""

    def __init__(self):
        self.records: list[_Record] = []
        self._outputs: set[int] = set()

    def __enter__(self) -> "Tape":
        _ACTIVE.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _ACTIVE.remove(self)

    def __len__(self) -> int:
        return len(self.records)

    def record(self, inputs, output, backward_fn, op="op") -> None:
        self.records.append(_Record(tuple(inputs), output, backward_fn, op))
        self._outputs.add(id(output))
        output._tape_ref = weakref.ref(self)

    def backward(self, root: Tensor, grad=None) -> None:
        """Propagate ``grad`` (default 1.0 for scalars) from ``root`` to every
        tensor on this tape that requires a gradient."""
        if grad is None:
            if root.size != 1:
                raise ValueError(
                    f"backward needs a scalar loss, got shape {root.shape}; "
                    "use inject_gradient for non-scalar outputs")
            seed = np.ones_like(root.data)
        else:
            seed = np.asarray(grad.data if isinstance(grad, Tensor) else grad, dtype=DTYPE)
            if seed.shape != root.shape:
                raise ShapeError(f"gradient shape {seed.shape} does not match tensor shape {root.shape}")
        if root._tape is not None and root._tape is not self:
            raise ValueError("tensor was recorded on a different tape")

        grads: dict[int, np.ndarray] = {id(root): seed.copy()}
        owners: dict[int, Tensor] = {id(root): root}
        for rec in reversed(self.records):
            g = grads.get(id(rec.output))
            if g is None:
                continue
            _accumulate_into(rec.output, g)
            in_grads = rec.backward(g)
            for t, gt in zip(rec.inputs, in_grads):
                if gt is None or not t.requires_grad:
                    continue
                key = id(t)
                if key in grads:
                    grads[key] = grads[key] + gt
                else:
                    grads[key] = np.asarray(gt, dtype=DTYPE)
                    owners[key] = t
        for key, t in owners.items():
            if key not in self._outputs and t.requires_grad:
                _accumulate_into(t, grads[key])


def _accumulate_into(t: Tensor, g: np.ndarray) -> None:
    if t.grad is None:
        t.grad = np.array(g, dtype=DTYPE, copy=True).reshape(t.shape)
    else:
        t.grad = t.grad + g.reshape(t.shape)


class no_grad:
    """Suspend recording (e.g. for validation passes inside a training tape)."""

    def __enter__(self):
        self._saved = list(_ACTIVE)
        _ACTIVE.clear()

    def __exit__(self, *exc):
        _ACTIVE.extend(self._saved)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=DTYPE))


def _make(data: np.ndarray, inputs: Sequence[Tensor], backward_fn, op: str) -> Tensor:
    out = Tensor(data)
    tape = current_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        tape.record(inputs, out, backward_fn, op)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# --------------------------------------------------------------------- algebra

def matmul(a, b) -> Tensor:
    """Matrix product. ``a`` may be a single row vector or a batch ``N x k``."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim not in (1, 2) or b.ndim != 2 or a.shape[-1] != b.shape[0]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} and {b.shape}")
    A, B = a.data, b.data
    out = A @ B

    def bw(g):
        ga = g @ B.T
        gb = np.outer(A, g) if A.ndim == 1 else A.T @ g
        return ga, gb

    return _make(out, (a, b), bw, "matmul")


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        out = a.data + b.data
    except ValueError as exc:
        raise ShapeError(f"add shape mismatch: {a.shape} and {b.shape}") from exc
    sa, sb = a.shape, b.shape
    return _make(out, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)), "add")


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        out = a.data - b.data
    except ValueError as exc:
        raise ShapeError(f"sub shape mismatch: {a.shape} and {b.shape}") from exc
    sa, sb = a.shape, b.shape
    return _make(out, (a, b), lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)), "sub")


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        out = a.data * b.data
    except ValueError as exc:
        raise ShapeError(f"mul shape mismatch: {a.shape} and {b.shape}") from exc
    A, B = a.data, b.data
    return _make(out, (a, b), lambda g: (_unbroadcast(g * B, A.shape), _unbroadcast(g * A, B.shape)), "mul")


def scale(x, factor: float) -> Tensor:
    x = _as_tensor(x)
    factor = float(factor)
    return _make(x.data * factor, (x,), lambda g: (g * factor,), "scale")


def square(x) -> Tensor:
    x = _as_tensor(x)
    X = x.data
    return _make(X * X, (x,), lambda g: (2.0 * X * g,), "square")


def tabs(x) -> Tensor:
    """Absolute value; subgradient 0 at 0."""
    x = _as_tensor(x)
    X = x.data
    return _make(np.abs(X), (x,), lambda g: (np.sign(X) * g,), "abs")


def tsum(x) -> Tensor:
    x = _as_tensor(x)
    shape = x.shape
    return _make(np.array(x.data.sum()), (x,), lambda g: (np.broadcast_to(g, shape).copy(),), "sum")


def mean(x) -> Tensor:
    x = _as_tensor(x)
    shape, n = x.shape, max(x.size, 1)
    return _make(np.array(x.data.mean() if x.size else 0.0), (x,),
                 lambda g: (np.broadcast_to(g / n, shape).copy(),), "mean")


def reshape(x, shape) -> Tensor:
    x = _as_tensor(x)
    old = x.shape
    return _make(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),), "reshape")


def flatten(x, batched: bool = True) -> Tensor:
    """Flatten all but the leading batch axis (or everything if ``batched`` is False)."""
    x = _as_tensor(x)
    return reshape(x, (x.shape[0], -1) if batched else (-1,))


# ----------------------------------------------------------------- activations

def relu(x) -> Tensor:
    x = _as_tensor(x)
    mask = x.data > 0
    return _make(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,), "relu")


def sigmoid(x) -> Tensor:
    x = _as_tensor(x)
    X = x.data
    # split by sign for overflow-free evaluation
    e = np.exp(-np.abs(X))
    y = np.where(X >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return _make(y, (x,), lambda g: (g * y * (1.0 - y),), "sigmoid")


def tanh(x) -> Tensor:
    x = _as_tensor(x)
    y = np.tanh(x.data)
    return _make(y, (x,), lambda g: (g * (1.0 - y * y),), "tanh")


_ACTIVATIONS = {"relu": relu, "sigmoid": sigmoid, "tanh": tanh}


def elementwise(x, fn: str) -> Tensor:
    try:
        return _ACTIVATIONS[fn](x)
    except KeyError:
        raise ValueError(f"unknown elementwise function {fn!r}; expected one of {sorted(_ACTIVATIONS)}") from None


# ------------------------------------------------------------- structural ops

def concat(a, b) -> Tensor:
    """Join along the last axis: rank-1 ``p`` and ``q`` give ``p + q``; batched
    ``N x p`` and ``N x q`` give ``N x (p + q)``."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim != b.ndim or a.shape[:-1] != b.shape[:-1]:
        raise ShapeError(f"concat shape mismatch: {a.shape} and {b.shape}")
    p = a.shape[-1]
    out = np.concatenate([a.data, b.data], axis=-1)
    return _make(out, (a, b), lambda g: (g[..., :p], g[..., p:]), "concat")


def split(x, sizes: Sequence[int]) -> list[Tensor]:
    """Inverse of concat along the last axis."""
    x = _as_tensor(x)
    if sum(sizes) != x.shape[-1]:
        raise ShapeError(f"split sizes {list(sizes)} do not sum to {x.shape[-1]}")
    parts, start = [], 0
    for n in sizes:
        lo, hi = start, start + n

        def bw(g, lo=lo, hi=hi):
            full = np.zeros(x.shape, dtype=DTYPE)
            full[..., lo:hi] = g
            return (full,)

        parts.append(_make(x.data[..., lo:hi].copy(), (x,), bw, "split"))
        start = hi
    return parts


def augment_ones(x) -> Tensor:
    """Append a constant 1 to the last axis."""
    x = _as_tensor(x)
    ones = Tensor(np.ones(x.shape[:-1] + (1,)))
    return concat(x, ones)


def outer(a, b) -> Tensor:
    """Row-major flattened outer product, per sample when batched."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim != b.ndim or a.shape[:-1] != b.shape[:-1]:
        raise ShapeError(f"outer shape mismatch: {a.shape} and {b.shape}")
    A, B = a.data, b.data
    p, q = A.shape[-1], B.shape[-1]
    out = (A[..., :, None] * B[..., None, :]).reshape(A.shape[:-1] + (p * q,))

    def bw(g):
        G = g.reshape(A.shape[:-1] + (p, q))
        return (G * B[..., None, :]).sum(-1), (G * A[..., :, None]).sum(-2)

    return _make(out, (a, b), bw, "outer")


# ----------------------------------------------------------------- image ops

def _pair(v) -> tuple[int, int]:
    if isinstance(v, int):
        return (v, v)
    v = tuple(int(i) for i in v)
    if len(v) != 2:
        raise ConfigurationError(f"expected a pair, got {v}")
    return v


def _out_extent(n: int, k: int, s: int, p: int) -> int:
    return (n + 2 * p - k) // s + 1


def conv2d(x, kernel, bias=None, stride=(1, 1), padding=(0, 0)) -> Tensor:
    """Zero-padded cross-correlation of ``H x W x Cin`` (or ``N x H x W x Cin``)
    with a ``kh x kw x Cin x Cout`` kernel."""
    x, kernel = _as_tensor(x), _as_tensor(kernel)
    unbatched = x.ndim == 3
    X = x.data[None] if unbatched else x.data
    if X.ndim != 4 or kernel.ndim != 4:
        raise ShapeError(f"conv2d expects H x W x C input and 4-d kernel, got {x.shape} and {kernel.shape}")
    N, H, W, C = X.shape
    kh, kw, cin, cout = kernel.shape
    if cin != C:
        raise ShapeError(f"conv2d channel mismatch: input {x.shape}, kernel {kernel.shape}")
    sh, sw = _pair(stride)
    ph, pw = _pair(padding)
    if sh < 1 or sw < 1:
        raise ConfigurationError(f"stride must be positive, got {(sh, sw)}")
    Ho, Wo = _out_extent(H, kh, sh, ph), _out_extent(W, kw, sw, pw)
    if Ho < 1 or Wo < 1:
        raise ConfigurationError(
            f"conv2d output extent {Ho}x{Wo} is not positive for input {H}x{W}, "
            f"kernel {kh}x{kw}, stride {(sh, sw)}, padding {(ph, pw)}")
    b = _as_tensor(bias) if bias is not None else None
    if b is not None and b.shape != (cout,):
        raise ShapeError(f"conv2d bias shape {b.shape} does not match {cout} output channels")

    Xp = np.pad(X, ((0, 0), (ph, ph), (pw, pw), (0, 0))) if (ph or pw) else X
    win = np.lib.stride_tricks.sliding_window_view(Xp, (kh, kw), axis=(1, 2))
    # win: N x H' x W' x C x kh x kw (before striding)
    win = win[:, : (Ho - 1) * sh + 1 : sh, : (Wo - 1) * sw + 1 : sw]
    cols = np.ascontiguousarray(win.transpose(0, 1, 2, 4, 5, 3)).reshape(N * Ho * Wo, kh * kw * C)
    K = kernel.data.reshape(kh * kw * C, cout)
    out = cols @ K
    if b is not None:
        out += b.data
    out = out.reshape(N, Ho, Wo, cout)
    if unbatched:
        out = out[0]
    Kd = kernel.data

    def bw(g):
        G = (g[None] if unbatched else g).reshape(N * Ho * Wo, cout)
        gk = (cols.T @ G).reshape(kh, kw, C, cout)
        gb = G.sum(axis=0) if b is not None else None
        gx = None
        if x.requires_grad:
            dcols = (G @ Kd.reshape(kh * kw * C, cout).T).reshape(N, Ho, Wo, kh, kw, C)
            gxp = np.zeros(Xp.shape, dtype=DTYPE)
            for i in range(kh):
                for j in range(kw):
                    gxp[:, i : i + (Ho - 1) * sh + 1 : sh, j : j + (Wo - 1) * sw + 1 : sw, :] += dcols[:, :, :, i, j, :]
            gx = gxp[:, ph : ph + H, pw : pw + W, :]
            if unbatched:
                gx = gx[0]
        return (gx, gk, gb) if b is not None else (gx, gk)

    inputs = (x, kernel, b) if b is not None else (x, kernel)
    return _make(out, inputs, bw, "conv2d")


def maxpool2d(x, window=(2, 2), stride=(2, 2)) -> Tensor:
    """Channel-wise window maximum (no padding). The gradient is routed to the
    first row-major maximal element of each window."""
    x = _as_tensor(x)
    unbatched = x.ndim == 3
    X = x.data[None] if unbatched else x.data
    if X.ndim != 4:
        raise ShapeError(f"maxpool2d expects H x W x C input, got {x.shape}")
    N, H, W, C = X.shape
    kh, kw = _pair(window)
    sh, sw = _pair(stride)
    if kh > H or kw > W:
        raise ConfigurationError(f"pool window {(kh, kw)} larger than input {H}x{W}")
    Ho, Wo = _out_extent(H, kh, sh, 0), _out_extent(W, kw, sw, 0)
    win = np.lib.stride_tricks.sliding_window_view(X, (kh, kw), axis=(1, 2))
    win = win[:, : (Ho - 1) * sh + 1 : sh, : (Wo - 1) * sw + 1 : sw]  # N Ho Wo C kh kw
    flat = win.reshape(N, Ho, Wo, C, kh * kw)
    arg = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]
    if unbatched:
        out = out[0]

    def bw(g):
        G = g[None] if unbatched else g
        gx = np.zeros(X.shape, dtype=DTYPE)
        for i in range(kh):
            for j in range(kw):
                sel = arg == (i * kw + j)
                gx[:, i : i + (Ho - 1) * sh + 1 : sh, j : j + (Wo - 1) * sw + 1 : sw, :] += G * sel
        return (gx[0] if unbatched else gx,)

    return _make(out, (x,), bw, "maxpool2d")


# ---------------------------------------------------------- external gradients

def external(x, value: np.ndarray, jacobian_fn: Callable[[np.ndarray], np.ndarray], op: str = "external") -> Tensor:
    """Wrap a value computed outside the tape (e.g. an optimisation layer).

    ``jacobian_fn(g)`` maps the upstream gradient on the output to the
    gradient on ``x`` (a vector-Jacobian product).
    """
    x = _as_tensor(x)
    return _make(np.asarray(value, dtype=DTYPE), (x,), lambda g: (jacobian_fn(g),), op)


def backward(loss: Tensor, tape: Tape | None = None, grad=None) -> None:
    """Seed ``loss`` with gradient 1.0 (or ``grad``) and back-propagate."""
    tape = tape or loss._tape or current_tape()
    if tape is None:
        if loss.requires_grad and grad is None and loss.size == 1:
            _accumulate_into(loss, np.ones_like(loss.data))
            return
        raise ValueError("tensor is not on any tape; run the forward pass inside `with Tape():`")
    tape.backward(loss, grad)


def inject_gradient(y: Tensor, external_grad, tape: Tape | None = None) -> None:
    """Back-propagate as if a downstream scalar had gradient ``external_grad`` at ``y``."""
    g = np.asarray(external_grad.data if isinstance(external_grad, Tensor) else external_grad, dtype=DTYPE)
    if g.shape != y.shape:
        raise ShapeError(f"injected gradient shape {g.shape} does not match tensor shape {y.shape}")
    tape = tape or y._tape
    if tape is None:
        raise ValueError("tensor is not on an active tape")
    tape.backward(y, g)


# -------------------------------------------------------------- serialization

MAGIC = b"GTNSR1"


def write_tensor(fh: BinaryIO, array) -> None:
    """Append one record: magic, u32 rank, u32 extents, float64 payload (all little-endian)."""
    arr = np.asarray(array.data if isinstance(array, Tensor) else array, dtype="<f8")
    fh.write(MAGIC)
    fh.write(struct.pack("<I", arr.ndim))
    if arr.ndim:
        fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
    fh.write(np.ascontiguousarray(arr).tobytes(order="C"))


def read_tensor(fh: BinaryIO) -> np.ndarray | None:
    """Read the next record, or return None at end of file."""
    magic = fh.read(len(MAGIC))
    if not magic:
        return None
    if magic != MAGIC:
        raise ValueError(f"bad tensor magic {magic!r}")
    (rank,) = struct.unpack("<I", fh.read(4))
    shape = struct.unpack(f"<{rank}I", fh.read(4 * rank)) if rank else ()
    count = int(np.prod(shape)) if rank else 1
    payload = fh.read(8 * count)
    if len(payload) != 8 * count:
        raise ValueError("truncated tensor payload")
    return np.frombuffer(payload, dtype="<f8").astype(DTYPE).reshape(shape)


def save_tensors(path, arrays) -> None:
    with open(path, "wb") as fh:
        for a in arrays:
            write_tensor(fh, a)


def load_tensors(path) -> list[np.ndarray]:
    out = []
    with open(path, "rb") as fh:
        while (a := read_tensor(fh)) is not None:
            out.append(a)
    return out
