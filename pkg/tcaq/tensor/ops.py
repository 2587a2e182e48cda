"""Op registry and the functional op set.

Every op is a class with a static ``forward`` and ``backward`` over numpy
arrays, registered under its kind string. ``forward(op_kind, inputs, attrs)``
validates inputs, runs the op and records a tape node when a tape is active.
Shapes must match exactly; the only broadcasts are the explicit per-channel
forms (``channel_mul``, ``scale_embed_add``).
"""

import logging
from abc import ABC, abstractmethod
from typing import Any, ClassVar, Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit

from .core import NonFiniteError, ShapeError, Tape, TapeNode, Tensor, TensorError, current_tape

logger = logging.getLogger(__name__)

Grads = tuple[Optional[np.ndarray], ...]


class Op(ABC):
    """Base class for a differentiable op."""

    kind: ClassVar[str] = ""
    arity: ClassVar[Optional[int]] = 1  # None means variadic

    @classmethod
    def check(cls, arrays: Sequence[np.ndarray], attrs: dict[str, Any]) -> None:
        """Validate input shapes; raise ShapeError on mismatch."""
        if cls.arity is not None and len(arrays) != cls.arity:
            raise ShapeError(f"{cls.kind}: expected {cls.arity} inputs, got {len(arrays)}")

    @staticmethod
    @abstractmethod
    def forward(saved: dict[str, Any], *xs: np.ndarray, **attrs: Any) -> np.ndarray:
        ...

    @staticmethod
    @abstractmethod
    def backward(saved: dict[str, Any], grad: np.ndarray, *xs: np.ndarray, **attrs: Any) -> Grads:
        ...


_OPS: dict[str, type[Op]] = {}


def register_op(cls: type[Op]) -> type[Op]:
    """Class decorator adding an op to the registry."""
    if not cls.kind:
        raise TensorError(f"Op class {cls.__name__} has no kind")
    if cls.kind in _OPS:
        raise TensorError(f"Op '{cls.kind}' is already registered")
    _OPS[cls.kind] = cls
    return cls


def get_op(kind: str) -> type[Op]:
    op = _OPS.get(kind)
    if op is None:
        raise TensorError(f"Unknown op '{kind}'; registered ops: {sorted(_OPS)}")
    return op


def registered_ops() -> list[str]:
    return sorted(_OPS)


def forward(op_kind: str, inputs: Sequence[Tensor], attrs: Optional[dict[str, Any]] = None) -> Tensor:
    """
    Apply a registered op to tensors.

    Args:
        op_kind: Registered op kind, e.g. "conv2d".
        inputs: Input tensors in the op's positional order.
        attrs: Op attributes (constants, axes, shapes).

    Returns:
        The output tensor; tracked when any input is tracked.

    Raises:
        ShapeError: If input shapes are invalid for the op.
        NonFiniteError: If any input holds NaN or Inf.
    """
    op = get_op(op_kind)
    attrs = dict(attrs or {})
    arrays = [tensor.data for tensor in inputs]
    for position, array in enumerate(arrays):
        if not np.isfinite(array).all():
            raise NonFiniteError(f"{op_kind}: input {position} of shape {array.shape} holds NaN or Inf")
    op.check(arrays, attrs)

    saved: dict[str, Any] = {}
    out = op.forward(saved, *arrays, **attrs)
    requires_grad = any(tensor.requires_grad for tensor in inputs)
    result = Tensor(out, requires_grad=requires_grad)

    tape: Optional[Tape] = current_tape()
    if tape is not None and requires_grad:
        tape.record(TapeNode(op=op_kind, inputs=tuple(inputs), output=result, attrs=attrs, saved=saved))
    return result


def _same_shape(kind: str, a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{kind}: shape mismatch {a.shape} vs {b.shape}")


# =============================================================================
# Elementwise
# =============================================================================

@register_op
class Add(Op):
    kind = "add"
    arity = 2

    @classmethod
    def check(cls, arrays, attrs):
        super().check(arrays, attrs)
        _same_shape(cls.kind, *arrays)

    @staticmethod
    def forward(saved, a, b):
        return a + b

    @staticmethod
    def backward(saved, grad, a, b):
        return grad, grad


@register_op
class Sub(Op):
    kind = "sub"
    arity = 2

    @classmethod
    def check(cls, arrays, attrs):
        super().check(arrays, attrs)
        _same_shape(cls.kind, *arrays)

    @staticmethod
    def forward(saved, a, b):
        return a - b

    @staticmethod
    def backward(saved, grad, a, b):
        return grad, -grad


@register_op
class Mul(Op):
    kind = "mul"
    arity = 2

    @classmethod
    def check(cls, arrays, attrs):
        super().check(arrays, attrs)
        _same_shape(cls.kind, *arrays)

    @staticmethod
    def forward(saved, a, b):
        return a * b

    @staticmethod
    def backward(saved, grad, a, b):
        return grad * b, grad * a


@register_op
class Scale(Op):
    kind = "scale"

    @staticmethod
    def forward(saved, x, factor):
        return x * x.dtype.type(factor)

    @staticmethod
    def backward(saved, grad, x, factor):
        return (grad * grad.dtype.type(factor),)


@register_op
class Affine(Op):
    kind = "affine"

    @staticmethod
    def forward(saved, x, a, b):
        return x * x.dtype.type(a) + x.dtype.type(b)

    @staticmethod
    def backward(saved, grad, x, a, b):
        return (grad * grad.dtype.type(a),)


@register_op
class Sigmoid(Op):
    kind = "sigmoid"

    @staticmethod
    def forward(saved, x):
        y = expit(x)
        saved["y"] = y
        return y

    @staticmethod
    def backward(saved, grad, x):
        y = saved["y"] if "y" in saved else expit(x)
        return (grad * y * (1 - y),)


@register_op
class Silu(Op):
    kind = "silu"

    @staticmethod
    def forward(saved, x):
        s = expit(x)
        saved["s"] = s
        return x * s

    @staticmethod
    def backward(saved, grad, x):
        s = saved["s"] if "s" in saved else expit(x)
        return (grad * (s + x * s * (1 - s)),)


@register_op
class Clamp(Op):
    kind = "clamp"

    @staticmethod
    def forward(saved, x, lo=None, hi=None):
        return np.clip(x, lo, hi)

    @staticmethod
    def backward(saved, grad, x, lo=None, hi=None):
        mask = np.ones_like(x, dtype=bool)
        if lo is not None:
            mask &= x >= lo
        if hi is not None:
            mask &= x <= hi
        return (grad * mask,)


@register_op
class Abs(Op):
    kind = "abs"

    @staticmethod
    def forward(saved, x):
        return np.abs(x)

    @staticmethod
    def backward(saved, grad, x):
        return (grad * np.sign(x),)


@register_op
class Power(Op):
    kind = "power"

    @classmethod
    def check(cls, arrays, attrs):
        super().check(arrays, attrs)
        exponent = attrs.get("exponent")
        if exponent is None:
            raise ShapeError("power: missing 'exponent' attribute")
        if float(exponent) != int(exponent) and (arrays[0] < 0).any():
            raise ShapeError("power: non-integer exponent needs non-negative input")

    @staticmethod
    def forward(saved, x, exponent):
        return np.power(x, x.dtype.type(exponent))

    @staticmethod
    def backward(saved, grad, x, exponent):
        if exponent == 0:
            return (np.zeros_like(x),)
        with np.errstate(divide="ignore", invalid="ignore"):
            local = exponent * np.power(x, x.dtype.type(exponent - 1))
        local = np.where(np.isfinite(local), local, 0.0).astype(x.dtype)
        return (grad * local,)


# =============================================================================
# Reductions and losses
# =============================================================================

def _reduced_count(x: np.ndarray, axis: Any) -> int:
    if axis is None:
        return int(x.size)
    axes = (axis,) if isinstance(axis, int) else tuple(axis)
    return int(np.prod([x.shape[a] for a in axes]))


def _expand_reduced(grad: np.ndarray, x: np.ndarray, axis: Any, keepdims: bool) -> np.ndarray:
    if axis is not None and not keepdims:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        axes = tuple(a % x.ndim for a in axes)
        grad = np.expand_dims(grad, axes)
    return np.broadcast_to(grad, x.shape).astype(x.dtype)


@register_op
class Mean(Op):
    kind = "mean"

    @staticmethod
    def forward(saved, x, axis=None, keepdims=False):
        return np.asarray(np.mean(x, axis=axis, keepdims=keepdims))

    @staticmethod
    def backward(saved, grad, x, axis=None, keepdims=False):
        count = _reduced_count(x, axis)
        return (_expand_reduced(grad, x, axis, keepdims) / x.dtype.type(count),)


@register_op
class Sum(Op):
    kind = "sum"

    @staticmethod
    def forward(saved, x, axis=None, keepdims=False):
        return np.asarray(np.sum(x, axis=axis, keepdims=keepdims))

    @staticmethod
    def backward(saved, grad, x, axis=None, keepdims=False):
        return (_expand_reduced(grad, x, axis, keepdims),)


@register_op
class MseLoss(Op):
    kind = "mse_loss"
    arity = 2

    @classmethod
    def check(cls, arrays, attrs):
        super().check(arrays, attrs)
        _same_shape(cls.kind, *arrays)

    @staticmethod
    def forward(saved, x, target):
        diff = x - target
        return np.asarray(np.mean(diff * diff))

    @staticmethod
    def backward(saved, grad, x, target):
        local = (x - target) * x.dtype.type(2.0 / max(x.size, 1))
        return grad * local, -grad * local


@register_op
class Softmax(Op):
    kind = "softmax"

    @staticmethod
    def forward(saved, x):
        shifted = x - x.max(axis=-1, keepdims=True)
        e = np.exp(shifted)
        y = e / e.sum(axis=-1, keepdims=True)
        saved["y"] = y
        return y

    @staticmethod
    def backward(saved, grad, x):
        y = saved["y"] if "y" in saved else Softmax.forward({}, x)
        return (y * (grad - (grad * y).sum(axis=-1, keepdims=True)),)


# =============================================================================
# Linear algebra
# =============================================================================

def _swap_last(a: np.ndarray) -> np.ndarray:
    return np.swapaxes(a, -1, -2)


@register_op
class Matmul(Op):
    kind = "matmul"
    arity = 2

    @classmethod
    def check(cls, arrays, attrs):
        super().check(arrays, attrs)
        a, b = arrays
        if a.ndim < 2 or a.ndim != b.ndim or a.shape[:-2] != b.shape[:-2] or a.shape[-1] != b.shape[-2]:
            raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")

    @staticmethod
    def forward(saved, a, b):
        return np.matmul(a, b)

    @staticmethod
    def backward(saved, grad, a, b):
        return np.matmul(grad, _swap_last(b)), np.matmul(_swap_last(a), grad)


@register_op
class Linear(Op):
    """x (..., in) @ W(out, in).T + b(out)."""

    kind = "linear"
    arity = None

    @classmethod
    def check(cls, arrays, attrs):
        if len(arrays) not in (2, 3):
            raise ShapeError(f"linear: expected 2 or 3 inputs, got {len(arrays)}")
        x, w = arrays[0], arrays[1]
        if w.ndim != 2 or x.ndim < 1 or x.shape[-1] != w.shape[1]:
            raise ShapeError(f"linear: input {x.shape} incompatible with weight {w.shape}")
        if len(arrays) == 3 and arrays[2].shape != (w.shape[0],):
            raise ShapeError(f"linear: bias {arrays[2].shape} does not match weight {w.shape}")

    @staticmethod
    def forward(saved, x, w, b=None):
        y = np.matmul(x, w.T)
        if b is not None:
            y = y + b
        return y

    @staticmethod
    def backward(saved, grad, x, w, b=None):
        g2 = grad.reshape(-1, w.shape[0])
        x2 = x.reshape(-1, w.shape[1])
        gx = np.matmul(grad, w)
        gw = np.matmul(g2.T, x2)
        if b is None:
            return gx, gw
        return gx, gw, g2.sum(axis=0)


@register_op
class Conv2d(Op):
    """Stride-1, same-padding 2D convolution; x NCHW, weight OIHW."""

    kind = "conv2d"
    arity = None

    @classmethod
    def check(cls, arrays, attrs):
        if len(arrays) not in (2, 3):
            raise ShapeError(f"conv2d: expected 2 or 3 inputs, got {len(arrays)}")
        x, w = arrays[0], arrays[1]
        if x.ndim != 4 or w.ndim != 4:
            raise ShapeError(f"conv2d: expected NCHW input and OIHW kernel, got {x.shape} and {w.shape}")
        if x.shape[1] != w.shape[1]:
            raise ShapeError(f"conv2d: input channels {x.shape[1]} != kernel input channels {w.shape[1]}")
        if w.shape[2] != w.shape[3] or w.shape[2] % 2 != 1:
            raise ShapeError(f"conv2d: kernel must be square and odd-sized, got {w.shape}")
        if len(arrays) == 3 and arrays[2].shape != (w.shape[0],):
            raise ShapeError(f"conv2d: bias {arrays[2].shape} does not match kernel {w.shape}")

    @staticmethod
    def _columns(x: np.ndarray, k: int) -> np.ndarray:
        p = k // 2
        padded = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
        windows = sliding_window_view(padded, (k, k), axis=(2, 3))  # N,C,H,W,k,k
        n, c, h, w_ = x.shape
        return windows.transpose(0, 2, 3, 1, 4, 5).reshape(n * h * w_, c * k * k)

    @staticmethod
    def forward(saved, x, w, b=None):
        n, _, h, width = x.shape
        out_channels, _, k, _ = w.shape
        cols = Conv2d._columns(x, k)
        saved["cols"] = cols
        y = np.matmul(cols, w.reshape(out_channels, -1).T)
        if b is not None:
            y = y + b
        return np.ascontiguousarray(y.reshape(n, h, width, out_channels).transpose(0, 3, 1, 2))

    @staticmethod
    def backward(saved, grad, x, w, b=None):
        n, c, h, width = x.shape
        out_channels, _, k, _ = w.shape
        p = k // 2
        cols = saved["cols"] if "cols" in saved else Conv2d._columns(x, k)
        g2 = grad.transpose(0, 2, 3, 1).reshape(-1, out_channels)
        gw = np.matmul(g2.T, cols).reshape(w.shape)
        dcols = np.matmul(g2, w.reshape(out_channels, -1)).reshape(n, h, width, c, k, k)
        dpad = np.zeros((n, c, h + 2 * p, width + 2 * p), dtype=x.dtype)
        for i in range(k):
            for j in range(k):
                dpad[:, :, i:i + h, j:j + width] += dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
        gx = dpad[:, :, p:p + h, p:p + width]
        if b is None:
            return gx, gw
        return gx, gw, g2.sum(axis=0)


# =============================================================================
# Shape ops
# =============================================================================

@register_op
class Concat(Op):
    kind = "concat"
    arity = None

    @classmethod
    def check(cls, arrays, attrs):
        if not arrays:
            raise ShapeError("concat: no inputs")
        axis = attrs.get("axis", 0) % arrays[0].ndim
        reference = list(arrays[0].shape)
        for array in arrays[1:]:
            shape = list(array.shape)
            if len(shape) != len(reference) or any(
                s != r for i, (s, r) in enumerate(zip(shape, reference)) if i != axis
            ):
                raise ShapeError(f"concat: shapes {[a.shape for a in arrays]} differ off axis {axis}")

    @staticmethod
    def forward(saved, *xs, axis=0):
        return np.concatenate(xs, axis=axis)

    @staticmethod
    def backward(saved, grad, *xs, axis=0):
        bounds = np.cumsum([x.shape[axis] for x in xs])[:-1]
        return tuple(np.split(grad, bounds, axis=axis))


@register_op
class Reshape(Op):
    kind = "reshape"

    @classmethod
    def check(cls, arrays, attrs):
        super().check(arrays, attrs)
        shape = tuple(attrs.get("shape", ()))
        if int(np.prod(shape)) != arrays[0].size:
            raise ShapeError(f"reshape: cannot reshape {arrays[0].shape} to {shape}")

    @staticmethod
    def forward(saved, x, shape):
        return x.reshape(shape)

    @staticmethod
    def backward(saved, grad, x, shape):
        return (grad.reshape(x.shape),)


@register_op
class Transpose(Op):
    kind = "transpose"

    @classmethod
    def check(cls, arrays, attrs):
        super().check(arrays, attrs)
        axes = tuple(attrs.get("axes", ()))
        if sorted(axes) != list(range(arrays[0].ndim)):
            raise ShapeError(f"transpose: axes {axes} invalid for shape {arrays[0].shape}")

    @staticmethod
    def forward(saved, x, axes):
        return np.ascontiguousarray(np.transpose(x, axes))

    @staticmethod
    def backward(saved, grad, x, axes):
        return (np.transpose(grad, np.argsort(axes)),)


@register_op
class AvgPool2(Op):
    kind = "avg_pool2"

    @classmethod
    def check(cls, arrays, attrs):
        super().check(arrays, attrs)
        x = arrays[0]
        if x.ndim != 4 or x.shape[2] % 2 or x.shape[3] % 2:
            raise ShapeError(f"avg_pool2: needs NCHW with even H, W, got {x.shape}")

    @staticmethod
    def forward(saved, x):
        n, c, h, w = x.shape
        return x.reshape(n, c, h // 2, 2, w // 2, 2).mean(axis=(3, 5))

    @staticmethod
    def backward(saved, grad, x):
        up = np.repeat(np.repeat(grad, 2, axis=2), 2, axis=3)
        return (up * x.dtype.type(0.25),)


@register_op
class Upsample2(Op):
    kind = "upsample2"

    @classmethod
    def check(cls, arrays, attrs):
        super().check(arrays, attrs)
        if arrays[0].ndim != 4:
            raise ShapeError(f"upsample2: needs NCHW, got {arrays[0].shape}")

    @staticmethod
    def forward(saved, x):
        return np.repeat(np.repeat(x, 2, axis=2), 2, axis=3)

    @staticmethod
    def backward(saved, grad, x):
        n, c, h, w = x.shape
        return (grad.reshape(n, c, h, 2, w, 2).sum(axis=(3, 5)),)


# =============================================================================
# Normalization and explicit per-channel forms
# =============================================================================

@register_op
class GroupNorm(Op):
    kind = "group_norm"
    arity = 3

    @classmethod
    def check(cls, arrays, attrs):
        super().check(arrays, attrs)
        x, gamma, beta = arrays
        groups = attrs.get("groups", 1)
        if x.ndim != 4 or x.shape[1] % groups:
            raise ShapeError(f"group_norm: {x.shape} not divisible into {groups} groups")
        if gamma.shape != (x.shape[1],) or beta.shape != (x.shape[1],):
            raise ShapeError(f"group_norm: affine shapes {gamma.shape}, {beta.shape} vs channels {x.shape[1]}")

    @staticmethod
    def forward(saved, x, gamma, beta, groups=1, eps=1e-5):
        n = x.shape[0]
        xg = x.reshape(n, groups, -1)
        mu = xg.mean(axis=2, keepdims=True)
        var = xg.var(axis=2, keepdims=True)
        inv_std = 1.0 / np.sqrt(var + x.dtype.type(eps))
        xhat = ((xg - mu) * inv_std).reshape(x.shape)
        saved["xhat"] = xhat
        saved["inv_std"] = inv_std
        return xhat * gamma[None, :, None, None] + beta[None, :, None, None]

    @staticmethod
    def backward(saved, grad, x, gamma, beta, groups=1, eps=1e-5):
        if "xhat" not in saved:
            GroupNorm.forward(saved, x, gamma, beta, groups=groups, eps=eps)
        xhat, inv_std = saved["xhat"], saved["inv_std"]
        n = x.shape[0]
        g_gamma = (grad * xhat).sum(axis=(0, 2, 3))
        g_beta = grad.sum(axis=(0, 2, 3))
        dxhat = (grad * gamma[None, :, None, None]).reshape(n, groups, -1)
        xh = xhat.reshape(n, groups, -1)
        m = dxhat.shape[2]
        gx = (
            inv_std / m
            * (m * dxhat - dxhat.sum(axis=2, keepdims=True) - xh * (dxhat * xh).sum(axis=2, keepdims=True))
        )
        return gx.reshape(x.shape), g_gamma, g_beta


@register_op
class ScaleEmbedAdd(Op):
    """x (N, C, H, W) + e (N, C) broadcast over the spatial dims."""

    kind = "scale_embed_add"
    arity = 2

    @classmethod
    def check(cls, arrays, attrs):
        super().check(arrays, attrs)
        x, e = arrays
        if x.ndim != 4 or e.shape != x.shape[:2]:
            raise ShapeError(f"scale_embed_add: embedding {e.shape} does not match input {x.shape}")

    @staticmethod
    def forward(saved, x, e):
        return x + e[:, :, None, None]

    @staticmethod
    def backward(saved, grad, x, e):
        return grad, grad.sum(axis=(2, 3))


@register_op
class ChannelMul(Op):
    """x scaled by a length-C vector along ``axis``."""

    kind = "channel_mul"
    arity = 2

    @classmethod
    def check(cls, arrays, attrs):
        super().check(arrays, attrs)
        x, r = arrays
        axis = attrs.get("axis", 1)
        if r.ndim != 1 or x.ndim == 0 or r.shape[0] != x.shape[axis]:
            raise ShapeError(f"channel_mul: vector {r.shape} does not match axis {axis} of {x.shape}")

    @staticmethod
    def _view(r: np.ndarray, ndim: int, axis: int) -> np.ndarray:
        shape = [1] * ndim
        shape[axis] = r.shape[0]
        return r.reshape(shape)

    @staticmethod
    def forward(saved, x, r, axis=1):
        return x * ChannelMul._view(r, x.ndim, axis)

    @staticmethod
    def backward(saved, grad, x, r, axis=1):
        axis = axis % x.ndim
        reduce_axes = tuple(i for i in range(x.ndim) if i != axis)
        return grad * ChannelMul._view(r, x.ndim, axis), (grad * x).sum(axis=reduce_axes)


# =============================================================================
# Functional wrappers
# =============================================================================

def add(a: Tensor, b: Tensor) -> Tensor:
    return forward("add", (a, b))


def sub(a: Tensor, b: Tensor) -> Tensor:
    return forward("sub", (a, b))


def mul(a: Tensor, b: Tensor) -> Tensor:
    return forward("mul", (a, b))


def scale(x: Tensor, factor: float) -> Tensor:
    return forward("scale", (x,), {"factor": float(factor)})


def affine(x: Tensor, a: float, b: float) -> Tensor:
    return forward("affine", (x,), {"a": float(a), "b": float(b)})


def sigmoid(x: Tensor) -> Tensor:
    return forward("sigmoid", (x,))


def silu(x: Tensor) -> Tensor:
    return forward("silu", (x,))


def clamp(x: Tensor, lo: Optional[float] = None, hi: Optional[float] = None) -> Tensor:
    return forward("clamp", (x,), {"lo": lo, "hi": hi})


def absolute(x: Tensor) -> Tensor:
    return forward("abs", (x,))


def power(x: Tensor, exponent: float) -> Tensor:
    return forward("power", (x,), {"exponent": float(exponent)})


def mean(x: Tensor, axis: Any = None, keepdims: bool = False) -> Tensor:
    return forward("mean", (x,), {"axis": axis, "keepdims": keepdims})


def reduce_sum(x: Tensor, axis: Any = None, keepdims: bool = False) -> Tensor:
    return forward("sum", (x,), {"axis": axis, "keepdims": keepdims})


def mse_loss(x: Tensor, target: Tensor) -> Tensor:
    return forward("mse_loss", (x, target))


def softmax(x: Tensor) -> Tensor:
    return forward("softmax", (x,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    return forward("matmul", (a, b))


def linear(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    inputs = (x, weight) if bias is None else (x, weight, bias)
    return forward("linear", inputs)


def conv2d(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    inputs = (x, weight) if bias is None else (x, weight, bias)
    return forward("conv2d", inputs)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    return forward("concat", tuple(tensors), {"axis": axis})


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    return forward("reshape", (x,), {"shape": tuple(int(s) for s in shape)})


def transpose(x: Tensor, axes: Sequence[int]) -> Tensor:
    return forward("transpose", (x,), {"axes": tuple(axes)})


def avg_pool2(x: Tensor) -> Tensor:
    return forward("avg_pool2", (x,))


def upsample2(x: Tensor) -> Tensor:
    return forward("upsample2", (x,))


def group_norm(x: Tensor, groups: int, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    return forward("group_norm", (x, gamma, beta), {"groups": groups, "eps": eps})


def scale_embed_add(x: Tensor, embedding: Tensor) -> Tensor:
    return forward("scale_embed_add", (x, embedding))


def channel_mul(x: Tensor, r: Tensor, axis: int = 1) -> Tensor:
    return forward("channel_mul", (x, r), {"axis": axis})
