"""
Tensor Core
Dense numpy-backed tensors with reverse-mode automatic differentiation.

Every differentiable operation is a Function subclass with a forward on raw
arrays and a backward returning one gradient per input. Evaluation order is
recorded with a global creation counter, so backward visits nodes in the
exact reverse of the forward order and gradient accumulation is deterministic.
"""

import itertools
import logging
from contextlib import contextmanager

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit

from .exceptions import DimensionError

logger = logging.getLogger(__name__)

_state = {"dtype": np.float32, "grad_enabled": True}
_creation_counter = itertools.count()


def get_dtype():
    return _state["dtype"]


@contextmanager
def precision(dtype):
    """
    Switch the default floating type (float32 for the codec, float64 for gradient checks)

    Args:
        dtype: np.float32 or np.float64 (or their names)
    """
    dtype = np.dtype(dtype).type
    if dtype not in (np.float32, np.float64):
        raise ValueError(f"unsupported precision {dtype}")
    previous = _state["dtype"]
    _state["dtype"] = dtype
    try:
        yield
    finally:
        _state["dtype"] = previous


@contextmanager
def no_grad():
    """Build no graph inside the block (inference, finite differences)"""
    previous = _state["grad_enabled"]
    _state["grad_enabled"] = False
    try:
        yield
    finally:
        _state["grad_enabled"] = previous


def is_grad_enabled():
    return _state["grad_enabled"]


class Tensor:
    """
    A float array plus the Function that produced it

    Args:
        data: array-like; cast to the current default dtype
        requires_grad (bool): Track gradients for this tensor
        creator (Function): Operation that produced it (None for leaves)
        name (str): Optional label, used in error messages and checkpoints
    """

    def __init__(self, data, requires_grad=False, creator=None, name=None):
        self.data = np.asarray(data, dtype=get_dtype())
        self.requires_grad = bool(requires_grad)
        self.creator = creator
        self.name = name
        self.grad = None
        self.order = next(_creation_counter)

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def numpy(self):
        return self.data

    def item(self):
        if self.data.size != 1:
            raise DimensionError("size", 1, self.data.size, op="item")
        return float(self.data.reshape(()))

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

    # Arithmetic
    def __add__(self, other):
        return Add.apply(self, other)

    def __radd__(self, other):
        return Add.apply(other, self)

    def __sub__(self, other):
        return Sub.apply(self, other)

    def __rsub__(self, other):
        return Sub.apply(other, self)

    def __mul__(self, other):
        return Mul.apply(self, other)

    def __rmul__(self, other):
        return Mul.apply(other, self)

    def __truediv__(self, other):
        return Div.apply(self, other)

    def __rtruediv__(self, other):
        return Div.apply(other, self)

    def __neg__(self):
        return Neg.apply(self)

    def __matmul__(self, other):
        return MatMul.apply(self, other)

    def __getitem__(self, index):
        return Slice.apply(self, index=index)

    # Shape and reductions
    def sum(self, axis=None, keepdims=False):
        return Sum.apply(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        total = self.sum(axis=axis, keepdims=keepdims)
        count = self.size // max(total.size, 1)
        return total * (1.0 / count)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return Reshape.apply(self, shape=shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return Transpose.apply(self, axes=axes or None)

    # Elementwise
    def exp(self):
        return Exp.apply(self)

    def log(self):
        return Log.apply(self)

    def sigmoid(self):
        return Sigmoid.apply(self)

    def tanh(self):
        return Tanh.apply(self)

    def relu(self):
        return ReLU.apply(self)

    def clamp_min(self, floor):
        return ClampMin.apply(self, floor=floor)


def as_tensor(value):
    if isinstance(value, Tensor):
        return value
    return Tensor(value, requires_grad=False)


def unbroadcast(grad, shape):
    """Sum a broadcast gradient back down to `shape`"""
    if grad.shape == tuple(shape):
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Function:
    """
    Base class for differentiable operations

    Subclasses implement forward(*arrays, **params) -> array and
    backward(grad) -> tuple with one gradient (or None) per input tensor.
    """

    def __init__(self, *inputs):
        self.inputs = inputs

    def forward(self, *arrays, **params):
        raise NotImplementedError("Forward pass not implemented for this function")

    def backward(self, grad):
        raise NotImplementedError("Backward pass not implemented for this function")

    @classmethod
    def apply(cls, *inputs, **params):
        tensors = tuple(as_tensor(x) for x in inputs)
        fn = cls(*tensors)
        out = fn.forward(*(t.data for t in tensors), **params)
        tracked = is_grad_enabled() and any(t.requires_grad for t in tensors)
        return Tensor(out, requires_grad=tracked, creator=fn if tracked else None)


class Graph:
    """
    Topologically ordered view of the computation that produced `output`

    nodes are the non-leaf tensors in forward (creation) order; parameters are
    the leaf tensors that require gradients.
    """

    def __init__(self, output):
        self.output = output
        seen = set()
        nodes, leaves = [], []
        stack = [output]
        while stack:
            tensor = stack.pop()
            if id(tensor) in seen or not tensor.requires_grad:
                continue
            seen.add(id(tensor))
            if tensor.creator is None:
                leaves.append(tensor)
            else:
                nodes.append(tensor)
                stack.extend(tensor.creator.inputs)
        self.nodes = sorted(nodes, key=lambda t: t.order)
        self.parameters = sorted(leaves, key=lambda t: t.order)

    def backward(self):
        if self.output.size != 1:
            raise DimensionError("loss", "scalar", self.output.shape, op="backward")
        if not self.output.requires_grad:
            return
        seed = np.ones_like(self.output.data)
        if self.output.creator is None:
            _accumulate_leaf(self.output, seed)
            return

        pending = {id(self.output): seed}
        for node in reversed(self.nodes):
            grad = pending.pop(id(node), None)
            if grad is None:
                continue
            input_grads = node.creator.backward(grad)
            for tensor, g in zip(node.creator.inputs, input_grads):
                if g is None or not tensor.requires_grad:
                    continue
                g = unbroadcast(np.asarray(g, dtype=tensor.data.dtype), tensor.shape)
                if tensor.creator is None:
                    _accumulate_leaf(tensor, g)
                elif id(tensor) in pending:
                    pending[id(tensor)] = pending[id(tensor)] + g
                else:
                    pending[id(tensor)] = g


def _accumulate_leaf(tensor, grad):
    tensor.grad = grad.copy() if tensor.grad is None else tensor.grad + grad


def backward(loss, parameters):
    """
    Gradients of a scalar loss with respect to named parameters

    Args:
        loss (Tensor): Scalar output of the graph
        parameters (dict): name -> leaf Tensor

    Returns:
        dict: name -> gradient array (zeros for parameters the loss does not reach)
    """
    if loss.size != 1:
        raise DimensionError("loss", "scalar", loss.shape, op="backward")
    for tensor in parameters.values():
        tensor.grad = None
    Graph(loss).backward()
    return {
        name: tensor.grad if tensor.grad is not None else np.zeros_like(tensor.data)
        for name, tensor in parameters.items()
    }


# ---------------------------------------------------------------------------
# Elementwise arithmetic
# ---------------------------------------------------------------------------

class Add(Function):
    def forward(self, x, y):
        return x + y

    def backward(self, grad):
        return grad, grad


class Sub(Function):
    def forward(self, x, y):
        return x - y

    def backward(self, grad):
        return grad, -grad


class Mul(Function):
    def forward(self, x, y):
        self.x, self.y = x, y
        return x * y

    def backward(self, grad):
        return grad * self.y, grad * self.x


class Div(Function):
    def forward(self, x, y):
        self.x, self.y = x, y
        return x / y

    def backward(self, grad):
        return grad / self.y, -grad * self.x / (self.y * self.y)


class Neg(Function):
    def forward(self, x):
        return -x

    def backward(self, grad):
        return (-grad,)


class Exp(Function):
    def forward(self, x):
        self.out = np.exp(x)
        return self.out

    def backward(self, grad):
        return (grad * self.out,)


class Log(Function):
    def forward(self, x):
        self.x = x
        return np.log(x)

    def backward(self, grad):
        return (grad / self.x,)


class Sigmoid(Function):
    def forward(self, x):
        self.out = expit(x)
        return self.out

    def backward(self, grad):
        return (grad * self.out * (1 - self.out),)


class Tanh(Function):
    def forward(self, x):
        self.out = np.tanh(x)
        return self.out

    def backward(self, grad):
        return (grad * (1 - self.out * self.out),)


class ReLU(Function):
    """max(x, 0); the subgradient at 0 is 0"""

    def forward(self, x):
        self.mask = x > 0
        return np.where(self.mask, x, 0).astype(x.dtype)

    def backward(self, grad):
        return (np.where(self.mask, grad, 0).astype(grad.dtype),)


class ClampMin(Function):
    def forward(self, x, floor):
        self.mask = x > floor
        return np.maximum(x, floor).astype(x.dtype)

    def backward(self, grad):
        return (np.where(self.mask, grad, 0).astype(grad.dtype),)


class MaskedFill(Function):
    """Replace entries where `mask` is set by a constant; no gradient flows there"""

    def forward(self, x, mask, value):
        self.mask = np.broadcast_to(mask, x.shape)
        return np.where(self.mask, value, x).astype(x.dtype)

    def backward(self, grad):
        return (np.where(self.mask, 0, grad).astype(grad.dtype),)


class StraightThrough(Function):
    """Forward yields `hard` verbatim; backward routes the gradient into `soft`"""

    def forward(self, soft, hard):
        if soft.shape != hard.shape:
            raise DimensionError("shape", soft.shape, hard.shape, op="straight_through")
        return np.array(hard, dtype=soft.dtype)

    def backward(self, grad):
        return grad, None


def masked_fill(x, mask, value):
    return MaskedFill.apply(x, mask=np.asarray(mask, dtype=bool), value=value)


def straight_through(soft, hard):
    """Pair a differentiable surrogate with exact forward values"""
    return StraightThrough.apply(soft, np.asarray(hard))


# ---------------------------------------------------------------------------
# Shape and reductions
# ---------------------------------------------------------------------------

class Sum(Function):
    def forward(self, x, axis, keepdims):
        self.shape = x.shape
        self.axis = axis
        self.keepdims = keepdims
        return np.asarray(x.sum(axis=axis, keepdims=keepdims), dtype=x.dtype)

    def backward(self, grad):
        if self.axis is not None and not self.keepdims:
            axes = self.axis if isinstance(self.axis, tuple) else (self.axis,)
            axes = sorted(a % len(self.shape) for a in axes)
            for a in axes:
                grad = np.expand_dims(grad, a)
        return (np.broadcast_to(grad, self.shape).copy(),)


class Reshape(Function):
    def forward(self, x, shape):
        self.shape = x.shape
        try:
            return x.reshape(shape)
        except ValueError as e:
            raise DimensionError("size", x.size, shape, op="reshape") from e

    def backward(self, grad):
        return (grad.reshape(self.shape),)


class Transpose(Function):
    def forward(self, x, axes):
        self.axes = axes if axes is not None else tuple(reversed(range(x.ndim)))
        return np.ascontiguousarray(x.transpose(self.axes))

    def backward(self, grad):
        return (np.ascontiguousarray(grad.transpose(np.argsort(self.axes))),)


class Slice(Function):
    def forward(self, x, index):
        self.shape = x.shape
        self.index = index
        return np.array(x[index])

    def backward(self, grad):
        full = np.zeros(self.shape, dtype=grad.dtype)
        full[self.index] = grad
        return (full,)


class MatMul(Function):
    def forward(self, x, y):
        if x.ndim != 2 or y.ndim != 2:
            raise DimensionError("rank", 2, (x.ndim, y.ndim), op="matmul")
        if x.shape[1] != y.shape[0]:
            raise DimensionError("inner", x.shape[1], y.shape[0], op="matmul")
        self.x, self.y = x, y
        return x @ y

    def backward(self, grad):
        return grad @ self.y.T, self.x.T @ grad


# ---------------------------------------------------------------------------
# Normalisers
# ---------------------------------------------------------------------------

class Softmax(Function):
    def forward(self, x, axis):
        self.axis = axis
        shifted = x - x.max(axis=axis, keepdims=True)
        e = np.exp(shifted)
        self.out = e / e.sum(axis=axis, keepdims=True)
        return self.out

    def backward(self, grad):
        inner = (grad * self.out).sum(axis=self.axis, keepdims=True)
        return (self.out * (grad - inner),)


class LogSoftmax(Function):
    def forward(self, x, axis):
        self.axis = axis
        shifted = x - x.max(axis=axis, keepdims=True)
        log_norm = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
        out = shifted - log_norm
        self.probs = np.exp(out)
        return out

    def backward(self, grad):
        return (grad - self.probs * grad.sum(axis=self.axis, keepdims=True),)


class LogSumExp(Function):
    def forward(self, x, axis):
        self.axis = axis
        m = x.max(axis=axis, keepdims=True)
        e = np.exp(x - m)
        s = e.sum(axis=axis, keepdims=True)
        self.probs = e / s
        return np.squeeze(m + np.log(s), axis=axis)

    def backward(self, grad):
        return (np.expand_dims(grad, self.axis) * self.probs,)


def softmax(x, axis=-1):
    """Numerically stabilised softmax along `axis`"""
    return Softmax.apply(x, axis=axis)


def log_softmax(x, axis=-1):
    return LogSoftmax.apply(x, axis=axis)


def logsumexp(x, axis=-1):
    return LogSumExp.apply(x, axis=axis)


def relu(x):
    return ReLU.apply(x)


# ---------------------------------------------------------------------------
# Layers
# ---------------------------------------------------------------------------

class Conv2d(Function):
    """Cross-correlation via im2col; kernel positions are scattered back in fixed order"""

    def forward(self, x, weight, bias, stride, padding):
        if x.ndim != 4:
            raise DimensionError("rank", 4, x.ndim, op="conv2d")
        if weight.ndim != 4 or weight.shape[2] != weight.shape[3]:
            raise DimensionError("kernel", "Cout x Cin x k x k", weight.shape, op="conv2d")
        if x.shape[1] != weight.shape[1]:
            raise DimensionError("Cin", weight.shape[1], x.shape[1], op="conv2d")
        if bias.shape != (weight.shape[0],):
            raise DimensionError("Cout", weight.shape[0], bias.shape, op="conv2d")
        k = weight.shape[2]
        if k % 2 == 0:
            raise DimensionError("k", "odd", k, op="conv2d")
        if stride < 1 or padding < 0:
            raise ValueError("stride must be positive and padding non-negative")

        B, C, H, W = x.shape
        h_out = (H + 2 * padding - k) // stride + 1
        w_out = (W + 2 * padding - k) // stride + 1
        if h_out < 1:
            raise DimensionError("h", f">= {k - 2 * padding}", H, op="conv2d")
        if w_out < 1:
            raise DimensionError("w", f">= {k - 2 * padding}", W, op="conv2d")

        padded = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
        windows = sliding_window_view(padded, (k, k), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :h_out, :w_out]
        cols = windows.transpose(0, 2, 3, 1, 4, 5).reshape(B * h_out * w_out, C * k * k)
        w_mat = weight.reshape(weight.shape[0], -1)

        self.cols = cols
        self.w_mat = w_mat
        self.geometry = (x.shape, padded.shape, k, stride, padding, h_out, w_out)

        out = cols @ w_mat.T + bias
        return np.ascontiguousarray(out.reshape(B, h_out, w_out, -1).transpose(0, 3, 1, 2))

    def backward(self, grad):
        x_shape, padded_shape, k, stride, padding, h_out, w_out = self.geometry
        B, C, H, W = x_shape
        c_out = grad.shape[1]
        g = grad.transpose(0, 2, 3, 1).reshape(-1, c_out)

        d_weight = (g.T @ self.cols).reshape(c_out, C, k, k)
        d_bias = g.sum(axis=0)

        d_cols = (g @ self.w_mat).reshape(B, h_out, w_out, C, k, k)
        d_padded = np.zeros(padded_shape, dtype=grad.dtype)
        for i in range(k):
            for j in range(k):
                d_padded[:, :, i:i + stride * h_out:stride, j:j + stride * w_out:stride] += \
                    d_cols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
        d_x = d_padded[:, :, padding:padding + H, padding:padding + W]
        return d_x, d_weight, d_bias


def conv2d(x, weight, bias, stride=1, padding=0):
    """
    2-D cross-correlation

    Args:
        x (Tensor): B x Cin x h x w
        weight (Tensor): Cout x Cin x k x k, k odd
        bias (Tensor): Cout
        stride (int): Positive stride
        padding (int): Zero padding on every side

    Returns:
        Tensor: B x Cout x h' x w', h' = floor((h + 2p - k)/s) + 1
    """
    return Conv2d.apply(x, weight, bias, stride=stride, padding=padding)


def fully_connected(x, weight, bias):
    """Affine map: B x L @ L x M + M"""
    x, weight, bias = as_tensor(x), as_tensor(weight), as_tensor(bias)
    if x.ndim != 2:
        raise DimensionError("rank", 2, x.ndim, op="fully_connected")
    if x.shape[1] != weight.shape[0]:
        raise DimensionError("L", weight.shape[0], x.shape[1], op="fully_connected")
    if bias.shape != (weight.shape[1],):
        raise DimensionError("M", weight.shape[1], bias.shape, op="fully_connected")
    return x @ weight + bias


class PixelShuffle(Function):
    def forward(self, x, factor):
        B, C, H, W = x.shape
        if C % (factor * factor) != 0:
            raise DimensionError("channels", f"multiple of {factor * factor}", C, op="pixel_shuffle")
        self.factor = factor
        return _pixel_shuffle(x, factor)

    def backward(self, grad):
        return (_space_to_depth(grad, self.factor),)


class SpaceToDepth(Function):
    def forward(self, x, factor):
        B, C, H, W = x.shape
        if H % factor or W % factor:
            raise DimensionError("spatial", f"multiple of {factor}", (H, W), op="space_to_depth")
        self.factor = factor
        return _space_to_depth(x, factor)

    def backward(self, grad):
        return (_pixel_shuffle(grad, self.factor),)


def _space_to_depth(x, factor):
    B, C, H, W = x.shape
    h, w = H // factor, W // factor
    out = x.reshape(B, C, h, factor, w, factor).transpose(0, 1, 3, 5, 2, 4)
    return np.ascontiguousarray(out.reshape(B, C * factor * factor, h, w))


def _pixel_shuffle(x, factor):
    B, C, H, W = x.shape
    c = C // (factor * factor)
    out = x.reshape(B, c, factor, factor, H, W).transpose(0, 1, 4, 2, 5, 3)
    return np.ascontiguousarray(out.reshape(B, c, H * factor, W * factor))


def pixel_shuffle(x, factor):
    """B x C*f^2 x h x w -> B x C x f*h x f*w (sub-pixel rearrangement)"""
    return PixelShuffle.apply(x, factor=factor)


def space_to_depth(x, factor):
    """Inverse of pixel_shuffle"""
    return SpaceToDepth.apply(x, factor=factor)


# ---------------------------------------------------------------------------
# Finite-difference checking
# ---------------------------------------------------------------------------

def grad_check(fn, inputs, eps=1e-3, max_entries=None, seed=0):
    """
    Compare analytic gradients with central finite differences

    Args:
        fn (callable): Maps input Tensors to a scalar Tensor
        inputs (list): Arrays at which to evaluate
        eps (float): Finite-difference step
        max_entries (int): Check at most this many entries per input (sampled)
        seed (int): Seed for the entry sample

    Returns:
        float: max |analytic - numeric| / max(|analytic|, |numeric|, 1e-8)
    """
    dtype = get_dtype()
    arrays = [np.array(a, dtype=dtype) for a in inputs]
    leaves = {str(i): Tensor(a, requires_grad=True) for i, a in enumerate(arrays)}
    out = fn(*leaves.values())
    grads = backward(out, leaves)

    rng = np.random.default_rng(seed)
    worst = 0.0
    for i, array in enumerate(arrays):
        flat_indices = np.arange(array.size)
        if max_entries is not None and array.size > max_entries:
            flat_indices = np.sort(rng.choice(array.size, size=max_entries, replace=False))
        analytic = grads[str(i)].reshape(-1)
        for flat in flat_indices:
            plus = [a.copy() for a in arrays]
            minus = [a.copy() for a in arrays]
            plus[i].reshape(-1)[flat] += dtype(eps)
            minus[i].reshape(-1)[flat] -= dtype(eps)
            step = float(plus[i].reshape(-1)[flat]) - float(minus[i].reshape(-1)[flat])
            with no_grad():
                f_plus = fn(*(Tensor(a) for a in plus)).item()
                f_minus = fn(*(Tensor(a) for a in minus)).item()
            numeric = (f_plus - f_minus) / step
            a = float(analytic[flat])
            err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            worst = max(worst, err)
    logger.debug(f"grad_check worst relative error {worst:.3e}")
    return worst
