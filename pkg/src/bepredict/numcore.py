"""Reverse-mode automatic differentiation on numpy arrays.

Operations record backward closures on the active tape (a per-thread stack,
entered as a context manager), and ``backward`` replays the tape in reverse,
accumulating gradients into ``Tensor.grad``.  Also provides the optimizer
pieces used for training: Adam with bias correction, a triangular cyclic
learning-rate schedule, an L2 penalty term, a counter-based random stream,
and a central-difference gradient checker.
"""

from __future__ import annotations

import hashlib
import threading
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np


class ShapeMismatch(ValueError):
    """Operands cannot be combined under the op's shape rules."""


class NonScalarLoss(ValueError):
    """backward() was called on a tensor with more than one element."""


class InvalidSchedule(ValueError):
    """A learning-rate schedule was configured with invalid parameters."""


class DivergedLoss(FloatingPointError):
    """A loss or gradient became non-finite."""


_debug_checks = False


def set_debug_checks(enabled: bool) -> None:
    """Toggle NaN/Inf screening of every op output (off by default)."""
    global _debug_checks
    _debug_checks = enabled


def _screen(name: str, arr: np.ndarray) -> None:
    if _debug_checks and not np.all(np.isfinite(arr)):
        raise DivergedLoss(f"non-finite values produced by {name}")


_local = threading.local()


def _tape_stack() -> list["Tape"]:
    stack = getattr(_local, "tapes", None)
    if stack is None:
        stack = []
        _local.tapes = stack
    return stack


def active_tape() -> "Tape | None":
    stack = _tape_stack()
    return stack[-1] if stack else None


class Tape:
    """Ordered record of backward closures for one forward pass."""

    __slots__ = ("_nodes",)

    def __init__(self) -> None:
        self._nodes: list[Callable[[], None]] = []

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc) -> None:
        _tape_stack().pop()

    def record(self, node: Callable[[], None]) -> None:
        self._nodes.append(node)

    def replay(self) -> None:
        for node in reversed(self._nodes):
            node()

    def clear(self) -> None:
        self._nodes.clear()

    def __len__(self) -> int:
        return len(self._nodes)


class Tensor:
    """A dense array with an accumulated gradient slot."""

    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad: bool = False, dtype=None) -> None:
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # arithmetic sugar; each delegates to the module-level op
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return scale(self, -1.0)


def as_tensor(value, like: Tensor | None = None) -> Tensor:
    """Wrap a constant; dtype follows ``like`` when given."""
    if isinstance(value, Tensor):
        return value
    dtype = like.data.dtype if like is not None else None
    return Tensor(np.asarray(value, dtype=dtype))


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if t.grad is None:
        t.grad = g.astype(t.data.dtype, copy=True)
    else:
        t.grad += g


def _record(out_data: np.ndarray, pulls: list[tuple[Tensor, Callable[[np.ndarray], np.ndarray]]], name: str) -> Tensor:
    """Build the output tensor and push one backward node onto the tape."""
    _screen(name, out_data)
    requires = any(t.requires_grad for t, _ in pulls)
    out = Tensor(out_data, requires_grad=requires)
    tape = active_tape()
    if requires and tape is not None:

        def node() -> None:
            g = out.grad
            if g is None:
                return
            for t, pull in pulls:
                if t.requires_grad:
                    _accumulate(t, pull(g))

        tape.record(node)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to the operand's shape."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _binary_shapes(name: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.data.shape, b.data.shape)
    except ValueError:
        raise ShapeMismatch(
            f"{name}: shapes {a.data.shape} and {b.data.shape} do not broadcast"
        ) from None


def add(a, b) -> Tensor:
    a = as_tensor(a)
    b = as_tensor(b, like=a)
    _binary_shapes("add", a, b)
    return _record(
        a.data + b.data,
        [
            (a, lambda g: _unbroadcast(g, a.data.shape)),
            (b, lambda g: _unbroadcast(g, b.data.shape)),
        ],
        "add",
    )


def sub(a, b) -> Tensor:
    a = as_tensor(a)
    b = as_tensor(b, like=a)
    _binary_shapes("sub", a, b)
    return _record(
        a.data - b.data,
        [
            (a, lambda g: _unbroadcast(g, a.data.shape)),
            (b, lambda g: _unbroadcast(-g, b.data.shape)),
        ],
        "sub",
    )


def mul(a, b) -> Tensor:
    a = as_tensor(a)
    b = as_tensor(b, like=a)
    _binary_shapes("mul", a, b)
    return _record(
        a.data * b.data,
        [
            (a, lambda g: _unbroadcast(g * b.data, a.data.shape)),
            (b, lambda g: _unbroadcast(g * a.data, b.data.shape)),
        ],
        "mul",
    )


def scale(a: Tensor, s: float) -> Tensor:
    s = float(s)
    return _record(a.data * s, [(a, lambda g: g * s)], "scale")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product with numpy broadcasting over leading batch dims."""
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ShapeMismatch(
            f"matmul: operands must be at least 2-D, got {a.data.shape} and {b.data.shape}"
        )
    if a.data.shape[-1] != b.data.shape[-2]:
        raise ShapeMismatch(
            f"matmul: inner dimensions differ, {a.data.shape} @ {b.data.shape}"
        )
    try:
        out = np.matmul(a.data, b.data)
    except ValueError:
        raise ShapeMismatch(
            f"matmul: batch dimensions do not broadcast, {a.data.shape} @ {b.data.shape}"
        ) from None

    def pull_a(g: np.ndarray) -> np.ndarray:
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        return _unbroadcast(ga, a.data.shape)

    def pull_b(g: np.ndarray) -> np.ndarray:
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(gb, b.data.shape)

    return _record(out, [(a, pull_a), (b, pull_b)], "matmul")


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _record(np.where(mask, a.data, 0.0), [(a, lambda g: g * mask)], "relu")


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _record(out, [(a, lambda g: g * out)], "exp")


def log(a: Tensor) -> Tensor:
    return _record(np.log(a.data), [(a, lambda g: g / a.data)], "log")


def clip_min(a: Tensor, floor: float) -> Tensor:
    """Elementwise max(a, floor); gradient passes where a >= floor."""
    mask = a.data >= floor
    return _record(np.where(mask, a.data, floor), [(a, lambda g: g * mask)], "clip_min")


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    """Stable softmax along one axis; rows sum to 1."""
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def pull(g: np.ndarray) -> np.ndarray:
        inner = (g * out).sum(axis=axis, keepdims=True)
        return out * (g - inner)

    return _record(out, [(a, pull)], "softmax")


def layer_norm(a: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean and unit variance."""
    mu = a.data.mean(axis=-1, keepdims=True)
    centered = a.data - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    out = centered * inv

    def pull(g: np.ndarray) -> np.ndarray:
        gm = g.mean(axis=-1, keepdims=True)
        go = (g * out).mean(axis=-1, keepdims=True)
        return inv * (g - gm - out * go)

    return _record(out, [(a, pull)], "layer_norm")


def dropout(a: Tensor, p: float, rng: "RngStream | None", train: bool) -> Tensor:
    """Inverted dropout: zero with probability p, scale survivors by 1/(1-p)."""
    if not 0.0 <= p < 1.0:
        raise InvalidSchedule(f"dropout probability must be in [0, 1), got {p}")
    if not train or p == 0.0:
        return a
    if rng is None:
        raise ValueError("dropout in training mode requires an RngStream")
    keep = (rng.uniform(a.data.shape) >= p).astype(a.data.dtype) / (1.0 - p)
    return _record(a.data * keep, [(a, lambda g: g * keep)], "dropout")


def tensor_sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def pull(g: np.ndarray) -> np.ndarray:
        if axis is None:
            return np.broadcast_to(g, a.data.shape).copy()
        if not keepdims:
            g = np.expand_dims(g, axis)
        return np.broadcast_to(g, a.data.shape).copy()

    return _record(out, [(a, pull)], "sum")


def tensor_mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    count = a.data.size if axis is None else np.prod(
        [a.data.shape[ax] for ax in (axis if isinstance(axis, tuple) else (axis,))]
    )
    return scale(tensor_sum(a, axis=axis, keepdims=keepdims), 1.0 / float(count))


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    return _record(
        a.data.reshape(shape), [(a, lambda g: g.reshape(a.data.shape))], "reshape"
    )


def swapaxes(a: Tensor, axis1: int, axis2: int) -> Tensor:
    return _record(
        np.swapaxes(a.data, axis1, axis2),
        [(a, lambda g: np.swapaxes(g, axis1, axis2))],
        "swapaxes",
    )


def narrow(a: Tensor, axis: int, start: int, length: int) -> Tensor:
    """Contiguous slice [start, start+length) along one axis."""
    size = a.data.shape[axis]
    if not (0 <= start and start + length <= size):
        raise ShapeMismatch(
            f"narrow: [{start}, {start + length}) outside axis of size {size}"
        )
    index = [slice(None)] * a.data.ndim
    index[axis] = slice(start, start + length)
    index = tuple(index)

    def pull(g: np.ndarray) -> np.ndarray:
        full = np.zeros_like(a.data)
        full[index] = g
        return full

    return _record(a.data[index], [(a, pull)], "narrow")


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    if not tensors:
        raise ShapeMismatch("concat: need at least one tensor")
    datas = [t.data for t in tensors]
    out = np.concatenate(datas, axis=axis)
    sizes = [d.shape[axis] for d in datas]
    offsets = np.cumsum([0] + sizes)

    pulls = []
    for i, t in enumerate(tensors):
        index = [slice(None)] * out.ndim
        index[axis] = slice(int(offsets[i]), int(offsets[i + 1]))
        index = tuple(index)
        pulls.append((t, lambda g, ix=index: g[ix]))
    return _record(out, pulls, "concat")


def gather_rows(a: Tensor, indices: np.ndarray) -> Tensor:
    """Select rows of a 2-D tensor; gradient scatter-adds back."""
    if a.data.ndim != 2:
        raise ShapeMismatch(f"gather_rows: expected 2-D table, got {a.data.shape}")
    idx = np.asarray(indices, dtype=np.int64)
    out = a.data[idx]

    def pull(g: np.ndarray) -> np.ndarray:
        full = np.zeros_like(a.data)
        np.add.at(full, idx, g)
        return full

    return _record(out, [(a, pull)], "gather_rows")


def conv1d(x: Tensor, w: Tensor, b: Tensor, kernel: int = 2, stride: int = 2) -> Tensor:
    """Non-overlapping 1-D convolution over the length axis.

    x: (..., L, C_in), w: (kernel, C_in, C_out), b: (C_out,).  Requires
    stride == kernel; windows tile the sequence and any tail shorter than
    the kernel is dropped, so the output length is floor(L / kernel).
    """
    if kernel != stride:
        raise ShapeMismatch("conv1d supports only stride == kernel (non-overlapping)")
    L = x.data.shape[-2]
    c_in = x.data.shape[-1]
    if w.data.shape[:2] != (kernel, c_in):
        raise ShapeMismatch(
            f"conv1d: weight {w.data.shape} incompatible with kernel {kernel}, C_in {c_in}"
        )
    out_len = L // kernel
    if out_len < 1:
        raise ShapeMismatch(f"conv1d: length {L} shorter than kernel {kernel}")
    c_out = w.data.shape[2]
    lead = x.data.shape[:-2]
    trimmed = narrow(x, -2, 0, out_len * kernel)
    windows = reshape(trimmed, lead + (out_len, kernel * c_in))
    w_flat = reshape(w, (kernel * c_in, c_out))
    return add(matmul(windows, w_flat), b)


def backward(loss: Tensor) -> None:
    """Run reverse-mode accumulation from a scalar loss over the active tape.

    The tape is consumed: nodes are replayed in reverse then cleared.
    """
    tape = active_tape()
    if tape is None:
        raise RuntimeError("backward() requires an active Tape context")
    if loss.data.size != 1:
        raise NonScalarLoss(f"loss must be scalar, got shape {loss.data.shape}")
    loss.grad = np.ones_like(loss.data)
    tape.replay()
    tape.clear()


def zero_grads(params: Sequence[Tensor]) -> None:
    for p in params:
        p.grad = None


# ---------------------------------------------------------------------------
# random streams


@dataclass
class RngStream:
    """Counter-based random stream with labeled, hash-derived sub-seeds.

    The same (seed, label) pair yields the same draws on any platform, so
    split/init/dropout/sampler streams never interact.
    """

    seed: int
    label: str = ""
    algorithm: str = "philox"

    def __post_init__(self) -> None:
        digest = hashlib.sha256(f"{self.seed}:{self.label}".encode()).digest()
        key = int.from_bytes(digest[:16], "little")
        self._gen = np.random.Generator(np.random.Philox(key=key))

    def spawn(self, label: str) -> "RngStream":
        suffix = f"{self.label}/{label}" if self.label else label
        return RngStream(self.seed, suffix)

    def uniform(self, shape=None, low: float = 0.0, high: float = 1.0) -> np.ndarray:
        return self._gen.uniform(low, high, size=shape)

    def normal(self, shape=None, scale: float = 1.0) -> np.ndarray:
        return self._gen.normal(0.0, scale, size=shape)

    def integers(self, low: int, high: int, shape=None) -> np.ndarray:
        return self._gen.integers(low, high, size=shape)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def choice(self, n: int, size: int, replace: bool = True, p=None) -> np.ndarray:
        return self._gen.choice(n, size=size, replace=replace, p=p)


# ---------------------------------------------------------------------------
# optimization


@dataclass
class AdamState:
    """First/second moment buffers for Adam, one pair per parameter."""

    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: Sequence[Tensor]) -> "AdamState":
        return cls(
            m=[np.zeros_like(p.data) for p in params],
            v=[np.zeros_like(p.data) for p in params],
        )


def adam_step(params: Sequence[Tensor], state: AdamState, lr: float) -> None:
    """One bias-corrected Adam update in place; parameters without gradients
    are skipped."""
    if len(params) != len(state.m):
        raise ShapeMismatch(
            f"adam_step: {len(params)} params vs state of {len(state.m)}"
        )
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1**t
    c2 = 1.0 - state.beta2**t
    for p, m, v in zip(params, state.m, state.v):
        if p.grad is None:
            continue
        g = p.grad
        if not np.all(np.isfinite(g)):
            raise DivergedLoss("non-finite gradient in adam_step")
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p.data -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


def cyclic_lr(step: int, base_lr: float, max_lr: float, cycle_len: int) -> float:
    """Triangular schedule: base at step 0, peak at cycle_len/2, back to base.

    ``step`` counts epochs (or any unit); the pattern repeats every
    ``cycle_len`` steps.
    """
    if base_lr <= 0 or max_lr < base_lr:
        raise InvalidSchedule(f"need 0 < base_lr <= max_lr, got {base_lr}, {max_lr}")
    if cycle_len < 2:
        raise InvalidSchedule(f"cycle_len must be >= 2, got {cycle_len}")
    if step < 0:
        raise InvalidSchedule(f"step must be >= 0, got {step}")
    phase = step % cycle_len
    half = cycle_len / 2.0
    frac = phase / half if phase <= half else (cycle_len - phase) / half
    return base_lr + (max_lr - base_lr) * frac


def l2_penalty(params: Sequence[Tensor], lam: float) -> Tensor:
    """(lam / 2) * sum of squared parameter entries, as a scalar tensor."""
    if lam < 0:
        raise InvalidSchedule(f"l2 coefficient must be >= 0, got {lam}")
    if lam == 0 or not params:
        return Tensor(0.0)
    total: Tensor | None = None
    for p in params:
        term = tensor_sum(mul(p, p))
        total = term if total is None else add(total, term)
    return scale(total, lam / 2.0)


# ---------------------------------------------------------------------------
# gradient checking


def grad_check(
    f: Callable[[Tensor], Tensor],
    x: Tensor,
    h: float = 1e-5,
    sample: int | None = None,
    rng: RngStream | None = None,
) -> float:
    """Compare reverse-mode gradients of a scalar function against central
    differences.

    Runs in 64-bit regardless of x's dtype.  Returns the worst relative error
    max(|analytic - numeric| / max(1, |analytic|)) over the checked
    coordinates; ``sample`` limits how many coordinates are probed.
    """
    x64 = Tensor(x.data.astype(np.float64), requires_grad=True)
    with Tape():
        y = f(x64)
        if y.data.size != 1:
            raise NonScalarLoss("grad_check needs a scalar-valued function")
        backward(y)
    analytic = np.zeros_like(x64.data) if x64.grad is None else x64.grad.copy()

    coords = list(np.ndindex(*x64.data.shape)) if x64.data.shape else [()]
    if sample is not None and sample < len(coords):
        if rng is None:
            rng = RngStream(0, "grad_check")
        picked = rng.choice(len(coords), size=sample, replace=False)
        coords = [coords[i] for i in picked]

    worst = 0.0
    for idx in coords:
        orig = x64.data[idx]
        x64.data[idx] = orig + h
        f_plus = float(f(x64).data)
        x64.data[idx] = orig - h
        f_minus = float(f(x64).data)
        x64.data[idx] = orig
        numeric = (f_plus - f_minus) / (2.0 * h)
        err = abs(analytic[idx] - numeric) / max(1.0, abs(analytic[idx]))
        worst = max(worst, err)
    return worst
