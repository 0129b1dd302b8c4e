"""Dense real tensors with reverse-mode automatic differentiation.

Data lives in row-major numpy buffers (``real32`` / ``real64``).  Every
differentiable operation appends a node to a per-thread tape; ``backward``
replays the tape in exact reverse execution order and accumulates
``d loss / d leaf`` into each leaf that requires a gradient.

Complex values are represented as pairs of real tensors
(:class:`ComplexTensor`), so the tape only ever differentiates real
scalars; complex arithmetic is expanded into its real/imaginary parts by
the callers that need it.

Tensors are immutable after construction except for explicit in-place
optimizer updates on leaves; a tape is confined to the thread that wrote
it, so inference over frozen weights is safe from many threads at once.
"""

from __future__ import annotations

import itertools
import threading
from typing import Callable, Optional, Sequence, Union

import numpy as np
from scipy.special import expit as _expit

from .errors import ParameterError, ShapeError

REAL32 = "real32"
REAL64 = "real64"

_NP_OF_NAME = {REAL32: np.float32, REAL64: np.float64}
_NAME_OF_NP = {np.dtype(np.float32): REAL32, np.dtype(np.float64): REAL64}

_uid_counter = itertools.count()

ArrayLike = Union["Tensor", np.ndarray, float, int, list, tuple]


def np_dtype(name: str) -> np.dtype:
    """Numpy dtype for a dtype name (``real32`` or ``real64``)."""
    try:
        return np.dtype(_NP_OF_NAME[name])
    except KeyError:
        raise ParameterError(f"unknown dtype {name!r}; expected one of {sorted(_NP_OF_NAME)}")


class Tensor:
    """A dense real array, optionally carrying a gradient buffer."""

    __slots__ = ("data", "requires_grad", "_grad", "_is_leaf", "uid")

    def __init__(self, data, dtype: Optional[str] = None, requires_grad: bool = False):
        arr = np.asarray(data)
        if arr.dtype not in _NAME_OF_NP:
            target = _NP_OF_NAME[dtype] if dtype else np.float64
            arr = arr.astype(target)
        elif dtype is not None and arr.dtype != _NP_OF_NAME[dtype]:
            arr = arr.astype(_NP_OF_NAME[dtype])
        # ascontiguousarray would promote 0-d values to shape (1,)
        self.data = arr if arr.ndim == 0 else np.ascontiguousarray(arr)
        if self.data.ndim == 0 and not isinstance(self.data, np.ndarray):
            self.data = np.asarray(self.data)
        self.requires_grad = bool(requires_grad)
        self._grad: Optional[np.ndarray] = None
        self._is_leaf = True
        self.uid = next(_uid_counter)

    # -- introspection -------------------------------------------------

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self) -> str:
        return _NAME_OF_NP[self.data.dtype]

    @property
    def grad(self) -> Optional[np.ndarray]:
        """Accumulated gradient; zeros for a leaf that no loss reached."""
        if not self.requires_grad:
            return None
        if self._grad is None:
            return np.zeros_like(self.data)
        return self._grad

    def accumulate_grad(self, g: np.ndarray) -> None:
        if g.shape != self.data.shape:
            raise ShapeError(f"gradient shape {g.shape} != tensor shape {self.data.shape}")
        if self._grad is None:
            self._grad = g.astype(self.data.dtype, copy=True)
        else:
            self._grad += g

    def zero_grad(self) -> None:
        self._grad = None

    def detach(self) -> "Tensor":
        """Same data, cut from the tape."""
        return Tensor(self.data, requires_grad=False)

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(()))

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    # -- operator sugar ------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, exponent):
        return pow_(self, exponent)

    def __getitem__(self, key):
        return slice_(self, key)


class ComplexTensor:
    """A complex array stored as two real tensors of identical shape."""

    __slots__ = ("re", "im")

    def __init__(self, re: Tensor, im: Tensor):
        if re.shape != im.shape:
            raise ShapeError(f"real part shape {re.shape} != imaginary part shape {im.shape}")
        if re.dtype != im.dtype:
            raise ShapeError(f"real part dtype {re.dtype} != imaginary part dtype {im.dtype}")
        self.re = re
        self.im = im

    @property
    def shape(self) -> tuple:
        return self.re.shape

    @property
    def dtype(self) -> str:
        return self.re.dtype

    @property
    def real(self) -> Tensor:
        return self.re

    @property
    def imag(self) -> Tensor:
        return self.im

    def numpy(self) -> np.ndarray:
        return self.re.data + 1j * self.im.data

    @staticmethod
    def from_numpy(z: np.ndarray, dtype: str = REAL64, requires_grad: bool = False) -> "ComplexTensor":
        return ComplexTensor(
            Tensor(z.real.copy(), dtype=dtype, requires_grad=requires_grad),
            Tensor(z.imag.copy(), dtype=dtype, requires_grad=requires_grad),
        )

    def __repr__(self) -> str:
        return f"ComplexTensor(shape={self.shape}, dtype={self.dtype})"


# -- tape ---------------------------------------------------------------


class _Node:
    __slots__ = ("out_uids", "inputs", "backward")

    def __init__(self, out_uids, inputs, backward):
        self.out_uids = out_uids
        self.inputs = inputs
        self.backward = backward


class Tape:
    """Ordered record of executed differentiable operations."""

    __slots__ = ("nodes",)

    def __init__(self):
        self.nodes: list[_Node] = []

    def __len__(self) -> int:
        return len(self.nodes)

    def clear(self) -> None:
        self.nodes.clear()


_state = threading.local()


def _tape() -> Tape:
    t = getattr(_state, "tape", None)
    if t is None:
        t = Tape()
        _state.tape = t
    return t


def grad_enabled() -> bool:
    return getattr(_state, "grad_enabled", True)


class no_grad:
    """Context manager that disables tape recording."""

    def __enter__(self):
        self._prev = grad_enabled()
        _state.grad_enabled = False
        return self

    def __exit__(self, *exc):
        _state.grad_enabled = self._prev
        return False


def clear_tape() -> None:
    _tape().clear()


def from_op(
    out_data: Union[np.ndarray, Sequence[np.ndarray]],
    inputs: Sequence[Tensor],
    backward: Callable,
    multi: bool = False,
):
    """Wrap raw output buffers as tensors and register the tape node.

    ``backward`` maps the output gradient (or a tuple of output gradients
    when ``multi``, with ``None`` for unused outputs) to one gradient per
    input, ``None`` where no gradient flows.
    """
    track = grad_enabled() and any(t.requires_grad for t in inputs)
    if multi:
        outs = []
        for arr in out_data:
            t = Tensor(arr)
            t.requires_grad = track
            t._is_leaf = not track
            outs.append(t)
        if track:
            _tape().nodes.append(_Node(tuple(o.uid for o in outs), tuple(inputs), backward))
        return tuple(outs)
    out = Tensor(out_data)
    out.requires_grad = track
    out._is_leaf = not track
    if track:
        _tape().nodes.append(_Node((out.uid,), tuple(inputs), backward))
    return out


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into every reachable leaf, then clear the tape.

    ``loss`` must be a scalar produced through tape-recorded operations;
    a tape with no recorded operations makes this a no-op.
    """
    if loss.size != 1:
        raise ShapeError(f"backward requires a scalar loss, got shape {loss.shape}")
    tape = _tape()
    grads: dict[int, np.ndarray] = {loss.uid: np.ones_like(loss.data)}
    for node in reversed(tape.nodes):
        out_grads = tuple(grads.pop(uid, None) for uid in node.out_uids)
        if all(g is None for g in out_grads):
            continue
        gs = node.backward(out_grads[0] if len(out_grads) == 1 else out_grads)
        for inp, g in zip(node.inputs, gs):
            if g is None or not inp.requires_grad:
                continue
            g = np.asarray(g, dtype=inp.data.dtype)
            if inp._is_leaf:
                inp.accumulate_grad(g)
            elif inp.uid in grads:
                grads[inp.uid] += g
            else:
                grads[inp.uid] = g
    tape.clear()


# -- helpers ------------------------------------------------------------


def as_tensor(x: ArrayLike, like: Optional[Tensor] = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(x, dtype=dtype)


def _check_broadcast(a: np.ndarray, b: np.ndarray, op: str) -> tuple:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} are not broadcast-compatible")


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a gradient over the axes that broadcasting expanded."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _reject_complex(x, op: str) -> None:
    if isinstance(x, ComplexTensor):
        raise ShapeError(f"{op}: complex input rejected; operates on real tensors")


# -- elementwise arithmetic ---------------------------------------------


def add(a: ArrayLike, b: ArrayLike) -> Tensor:
    a = as_tensor(a)
    b = as_tensor(b, like=a)
    _check_broadcast(a.data, b.data, "add")
    out = a.data + b.data

    def bwd(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return from_op(out, (a, b), bwd)


def sub(a: ArrayLike, b: ArrayLike) -> Tensor:
    a = as_tensor(a)
    b = as_tensor(b, like=a)
    _check_broadcast(a.data, b.data, "sub")
    out = a.data - b.data

    def bwd(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return from_op(out, (a, b), bwd)


def mul(a: ArrayLike, b: ArrayLike) -> Tensor:
    a = as_tensor(a)
    b = as_tensor(b, like=a)
    _check_broadcast(a.data, b.data, "mul")
    out = a.data * b.data

    def bwd(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return from_op(out, (a, b), bwd)


def div(a: ArrayLike, b: ArrayLike) -> Tensor:
    a = as_tensor(a)
    b = as_tensor(b, like=a)
    _check_broadcast(a.data, b.data, "div")
    out = a.data / b.data

    def bwd(g):
        ga = _unbroadcast(g / b.data, a.shape)
        gb = _unbroadcast(-g * a.data / (b.data * b.data), b.shape)
        return ga, gb

    return from_op(out, (a, b), bwd)


def neg(a: Tensor) -> Tensor:
    a = as_tensor(a)
    return from_op(-a.data, (a,), lambda g: (-g,))


def pow_(a: Tensor, exponent: float) -> Tensor:
    a = as_tensor(a)
    p = float(exponent)
    out = a.data**p

    def bwd(g):
        return (g * p * a.data ** (p - 1.0),)

    return from_op(out, (a,), bwd)


# -- contractions and layout --------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a = as_tensor(a)
    b = as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul: operands must have ndim >= 2, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: inner extents differ for shapes {a.shape} and {b.shape}")
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise ShapeError(f"matmul: batch axes of {a.shape} and {b.shape} are not broadcast-compatible")
    out = a.data @ b.data

    def bwd(g):
        ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape)
        gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape)
        return ga, gb

    return from_op(out, (a, b), bwd)


def transpose(a: Tensor, axes: Optional[Sequence[int]] = None) -> Tensor:
    a = as_tensor(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    axes = tuple(int(ax) % a.ndim for ax in axes)
    if sorted(axes) != list(range(a.ndim)):
        raise ShapeError(f"transpose: {axes} is not a permutation of axes for shape {a.shape}")
    inverse = np.argsort(axes)
    out = np.ascontiguousarray(a.data.transpose(axes))

    def bwd(g):
        return (np.ascontiguousarray(g.transpose(inverse)),)

    return from_op(out, (a,), bwd)


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    a = as_tensor(a)
    shape = tuple(int(s) for s in shape)
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot view shape {a.shape} as {shape}")

    def bwd(g):
        return (g.reshape(a.shape),)

    return from_op(out, (a,), bwd)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ShapeError("concat: need at least one tensor")
    axis = int(axis) % tensors[0].ndim
    base = list(tensors[0].shape)
    for t in tensors[1:]:
        other = list(t.shape)
        if len(other) != len(base) or any(
            i != axis and other[i] != base[i] for i in range(len(base))
        ):
            raise ShapeError(
                f"concat: shape {t.shape} incompatible with {tensors[0].shape} along axis {axis}"
            )
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def bwd(g):
        pieces = []
        for i in range(len(tensors)):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(offsets[i], offsets[i + 1])
            pieces.append(g[tuple(sl)])
        return tuple(pieces)

    return from_op(out, tuple(tensors), bwd)


def slice_(a: Tensor, key) -> Tensor:
    """Basic indexing (ints, slices, ellipsis); gradient scatters back."""
    a = as_tensor(a)
    try:
        out = a.data[key]
    except IndexError as e:
        raise ShapeError(f"slice: invalid index {key!r} for shape {a.shape}: {e}")
    out = np.ascontiguousarray(out)

    def bwd(g):
        full = np.zeros_like(a.data)
        full[key] = g.reshape(a.data[key].shape)
        return (full,)

    return from_op(out, (a,), bwd)


def flip(a: Tensor, axis: int) -> Tensor:
    a = as_tensor(a)
    key = [slice(None)] * a.ndim
    key[int(axis) % a.ndim] = slice(None, None, -1)
    return slice_(a, tuple(key))


# -- reductions ----------------------------------------------------------


def _norm_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(int(ax) % ndim for ax in axis)


def sum_(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    axes = _norm_axes(axis, a.ndim)
    out = a.data.sum(axis=axes, keepdims=keepdims)

    def bwd(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, a.shape).copy(),)

    return from_op(out, (a,), bwd)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    axes = _norm_axes(axis, a.ndim)
    count = int(np.prod([a.shape[ax] for ax in axes])) if a.ndim else 1
    out = a.data.mean(axis=axes, keepdims=keepdims)

    def bwd(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g / count, a.shape).copy(),)

    return from_op(out, (a,), bwd)


# -- pointwise nonlinearities --------------------------------------------


def exp(a: Tensor) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return from_op(out, (a,), lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    a = as_tensor(a)
    return from_op(np.log(a.data), (a,), lambda g: (g / a.data,))


def abs_(a: Tensor) -> Tensor:
    a = as_tensor(a)
    return from_op(np.abs(a.data), (a,), lambda g: (g * np.sign(a.data),))


def sigmoid(a: Tensor) -> Tensor:
    a = as_tensor(a)
    out = _expit(a.data)

    def bwd(g):
        return (g * out * (1.0 - out),)

    return from_op(out, (a,), bwd)


def silu(a: Tensor) -> Tensor:
    """x * sigmoid(x), elementwise; real input only."""
    _reject_complex(a, "silu")
    a = as_tensor(a)
    s = _expit(a.data)
    out = a.data * s

    def bwd(g):
        return (g * (s + a.data * s * (1.0 - s)),)

    return from_op(out, (a,), bwd)


def relu(a: Tensor) -> Tensor:
    a = as_tensor(a)
    out = np.maximum(a.data, 0.0)

    def bwd(g):
        return (g * (a.data > 0),)

    return from_op(out, (a,), bwd)


def softplus(a: Tensor) -> Tensor:
    """log(1 + exp(x)); strictly positive for all finite inputs."""
    a = as_tensor(a)
    out = np.logaddexp(0.0, a.data)

    def bwd(g):
        return (g * _expit(a.data),)

    return from_op(out, (a,), bwd)


def layer_norm(a: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis to zero mean and unit variance.

    Affine scale/shift, when wanted, is applied by the caller.
    """
    if eps <= 0:
        raise ParameterError(f"layer_norm: eps must be > 0, got {eps}")
    a = as_tensor(a)
    mu = a.data.mean(axis=-1, keepdims=True)
    xc = a.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    out = xc * inv

    def bwd(g):
        gm = g.mean(axis=-1, keepdims=True)
        gxm = (g * out).mean(axis=-1, keepdims=True)
        return (inv * (g - gm - out * gxm),)

    return from_op(out, (a,), bwd)


def dropout(a: Tensor, p: float, train: bool, rng: Optional[np.random.Generator] = None) -> Tensor:
    """Zero each element with probability ``p``; scale survivors by 1/(1-p).

    Identity (the same tensor object) in eval mode.
    """
    if not 0.0 <= p < 1.0:
        raise ParameterError(f"dropout: p must satisfy 0 <= p < 1, got {p}")
    a = as_tensor(a)
    if not train or p == 0.0:
        return a
    if rng is None:
        raise ParameterError("dropout: train mode requires an explicit generator")
    scale = (rng.random(a.shape) >= p).astype(a.data.dtype) / (1.0 - p)
    out = a.data * scale

    def bwd(g):
        return (g * scale,)

    return from_op(out, (a,), bwd)


def logsumexp(a: Tensor, axis: int = -1, keepdims: bool = False) -> Tensor:
    """log(sum(exp(x))) along an axis, max-shifted for stability."""
    a = as_tensor(a)
    m = a.data.max(axis=axis, keepdims=True)  # constant shift; exact for any m
    shifted = sub(a, Tensor(m))
    s = sum_(exp(shifted), axis=axis, keepdims=True)
    out = add(log(s), Tensor(m))
    if not keepdims:
        out = reshape(out, np.squeeze(out.data, axis=axis).shape)
    return out


# -- construction helpers -------------------------------------------------


def zeros(shape, dtype: str = REAL64, requires_grad: bool = False) -> Tensor:
    return Tensor(np.zeros(shape, dtype=np_dtype(dtype)), requires_grad=requires_grad)


def ones(shape, dtype: str = REAL64, requires_grad: bool = False) -> Tensor:
    return Tensor(np.ones(shape, dtype=np_dtype(dtype)), requires_grad=requires_grad)


def full(shape, value: float, dtype: str = REAL64, requires_grad: bool = False) -> Tensor:
    return Tensor(np.full(shape, value, dtype=np_dtype(dtype)), requires_grad=requires_grad)


def normal(
    rng: np.random.Generator,
    shape,
    std: float = 1.0,
    mean: float = 0.0,
    dtype: str = REAL64,
    requires_grad: bool = False,
) -> Tensor:
    data = rng.normal(mean, std, size=shape).astype(np_dtype(dtype))
    return Tensor(data, requires_grad=requires_grad)


def uniform(
    rng: np.random.Generator,
    shape,
    low: float = 0.0,
    high: float = 1.0,
    dtype: str = REAL64,
    requires_grad: bool = False,
) -> Tensor:
    data = rng.uniform(low, high, size=shape).astype(np_dtype(dtype))
    return Tensor(data, requires_grad=requires_grad)
