"""
Author: Perry Radau
Date: 2025-03-08
Brief description: Minimal reverse-mode automatic differentiation over numpy arrays, plus Adam
Dependencies: Python 3.8+, numpy
Usage: build expressions from Tensor objects and primitives, call backward(loss), then Adam.step()
"""

import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from errors import ContractError, OptimizerError, ShapeError

DEFAULT_DTYPE = np.float32

ArrayLike = Union['Tensor', np.ndarray, float, int, Sequence]
BackwardFn = Callable[[np.ndarray], Tuple[Optional[np.ndarray], ...]]


class Tensor:
    """Dense array with an optional gradient slot.

    Tensors built by primitives remember their parents and a closure mapping
    the output gradient to one gradient per parent. Only leaves
    (``requires_grad`` and no parents) keep ``grad`` after backward.
    """

    # ndarray <op> Tensor must dispatch to the Tensor's reflected operator
    __array_ufunc__ = None

    def __init__(self, data: ArrayLike, requires_grad: bool = False,
                 parents: Tuple['Tensor', ...] = (), backward_fn: Optional[BackwardFn] = None,
                 op: str = '', name: Optional[str] = None):
        array = np.asarray(data)
        if not np.issubdtype(array.dtype, np.floating):
            array = array.astype(DEFAULT_DTYPE)
        self.data = array
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.parents = parents
        self.backward_fn = backward_fn
        self.op = op
        self.name = name

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def is_leaf(self) -> bool:
        return not self.parents

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        label = f", name={self.name}" if self.name else ''
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad}{label})"

    # operator sugar
    def __add__(self, other): return add(self, other)
    def __radd__(self, other): return add(other, self)
    def __sub__(self, other): return sub(self, other)
    def __rsub__(self, other): return sub(other, self)
    def __mul__(self, other): return mul(self, other)
    def __rmul__(self, other): return mul(other, self)
    def __truediv__(self, other): return div(self, other)
    def __rtruediv__(self, other): return div(other, self)
    def __neg__(self): return neg(self)
    def __pow__(self, exponent: float): return power(self, exponent)
    def __matmul__(self, other): return matmul(self, other)
    def __getitem__(self, index): return getitem(self, index)

    def sum(self, axis=None, keepdims: bool = False) -> 'Tensor':
        return tensor_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> 'Tensor':
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape) -> 'Tensor':
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes) -> 'Tensor':
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)


def as_tensor(value: ArrayLike, like: Optional[Tensor] = None) -> Tensor:
    """Wrap a constant; python scalars take the dtype of ``like``."""
    if isinstance(value, Tensor):
        return value
    if like is not None and np.ndim(value) == 0 and not isinstance(value, np.ndarray):
        return Tensor(np.asarray(value, dtype=like.dtype))
    return Tensor(value)


def _make(data: np.ndarray, parents: Tuple[Tensor, ...], backward_fn: BackwardFn, op: str) -> Tensor:
    if any(p.requires_grad for p in parents):
        return Tensor(data, requires_grad=True, parents=parents, backward_fn=backward_fn, op=op)
    return Tensor(data, op=op)


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to ``shape``."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_shape(op: str, a: Tensor, b: Tensor) -> Tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}")


# elementwise binary

def add(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = _pair(a, b)
    _broadcast_shape('add', a, b)
    return _make(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)), 'add')


def sub(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = _pair(a, b)
    _broadcast_shape('sub', a, b)
    return _make(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)), 'sub')


def mul(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = _pair(a, b)
    _broadcast_shape('mul', a, b)
    return _make(a.data * b.data, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)), 'mul')


def div(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = _pair(a, b)
    _broadcast_shape('div', a, b)
    out = a.data / b.data
    return _make(out, (a, b),
                 lambda g: (_unbroadcast(g / b.data, a.shape),
                            _unbroadcast(-g * out / b.data, b.shape)), 'div')


def _pair(a: ArrayLike, b: ArrayLike) -> Tuple[Tensor, Tensor]:
    if isinstance(a, Tensor):
        return a, as_tensor(b, like=a)
    b = as_tensor(b)
    return as_tensor(a, like=b), b


# elementwise unary

def neg(a: Tensor) -> Tensor:
    return _make(-a.data, (a,), lambda g: (-g,), 'neg')


def power(a: Tensor, exponent: float) -> Tensor:
    out = a.data ** exponent
    return _make(out, (a,), lambda g: (g * exponent * a.data ** (exponent - 1),), 'pow')


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,), 'exp')


def log(a: Tensor) -> Tensor:
    return _make(np.log(a.data), (a,), lambda g: (g / a.data,), 'log')


def sqrt(a: Tensor) -> Tensor:
    out = np.sqrt(a.data)
    return _make(out, (a,), lambda g: (g * 0.5 / out,), 'sqrt')


def relu(a: Tensor) -> Tensor:
    positive = a.data > 0
    return _make(np.where(positive, a.data, 0.0).astype(a.dtype), (a,),
                 lambda g: (g * positive,), 'relu')


def sigmoid(a: Tensor) -> Tensor:
    out = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return _make(out, (a,), lambda g: (g * out * (1.0 - out),), 'sigmoid')


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return _make(out, (a,), lambda g: (g * (1.0 - out ** 2),), 'tanh')


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    shifted = np.exp(a.data - a.data.max(axis=axis, keepdims=True))
    out = shifted / shifted.sum(axis=axis, keepdims=True)

    def backward_fn(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _make(out, (a,), backward_fn, 'softmax')


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    out = shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))

    def backward_fn(g):
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)

    return _make(out, (a,), backward_fn, 'log_softmax')


# reductions and shape ops

def tensor_sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def backward_fn(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape),)

    return _make(np.asarray(out), (a,), backward_fn, 'sum')


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        count = a.data.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        count = int(np.prod([a.shape[ax] for ax in axes]))
    return tensor_sum(a, axis=axis, keepdims=keepdims) * (1.0 / count)


def reshape(a: Tensor, shape: Tuple[int, ...]) -> Tensor:
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot reshape {a.shape} to {shape}")
    return _make(out, (a,), lambda g: (g.reshape(a.shape),), 'reshape')


def transpose(a: Tensor, axes: Optional[Tuple[int, ...]] = None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    if sorted(axes) != list(range(a.ndim)):
        raise ShapeError(f"transpose: axes {axes} invalid for shape {a.shape}")
    inverse = tuple(np.argsort(axes))
    return _make(a.data.transpose(axes), (a,), lambda g: (g.transpose(inverse),), 'transpose')


def getitem(a: Tensor, index) -> Tensor:
    def backward_fn(g):
        full = np.zeros_like(a.data)
        np.add.at(full, index, g)
        return (full,)

    return _make(a.data[index], (a,), backward_fn, 'slice')


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = list(tensors)
    ref = tensors[0].shape
    axis_n = axis % len(ref)
    for t in tensors[1:]:
        if len(t.shape) != len(ref) or any(s != r for i, (s, r) in enumerate(zip(t.shape, ref)) if i != axis_n):
            raise ShapeError(f"concat: incompatible shapes {ref} and {t.shape}")
    sizes = [t.shape[axis_n] for t in tensors]
    cuts = np.cumsum(sizes)[:-1]

    def backward_fn(g):
        return tuple(np.split(g, cuts, axis=axis_n))

    return _make(np.concatenate([t.data for t in tensors], axis=axis_n), tuple(tensors), backward_fn, 'concat')


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = list(tensors)
    for t in tensors[1:]:
        if t.shape != tensors[0].shape:
            raise ShapeError(f"stack: incompatible shapes {tensors[0].shape} and {t.shape}")
    out = np.stack([t.data for t in tensors], axis=axis)
    axis_n = axis % out.ndim

    def backward_fn(g):
        return tuple(np.take(g, i, axis=axis_n) for i in range(len(tensors)))

    return _make(out, tuple(tensors), backward_fn, 'stack')


def matmul(a: ArrayLike, b: ArrayLike) -> Tensor:
    """Batched matrix product (both operands at least 2-D)."""
    a, b = _pair(a, b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    try:
        out = a.data @ b.data
    except ValueError:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")

    def backward_fn(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _make(out, (a, b), backward_fn, 'matmul')


# layers

def conv1d(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None, dilation: int = 1) -> Tensor:
    """Same-padded 1-D convolution over time.

    Args:
        x: Input [B x T x C_in]
        weight: Kernel [K x C_in x C_out]
        bias: Optional [C_out]
        dilation: Spacing between kernel taps

    Returns:
        Tensor [B x T x C_out]; zero padding totals (K-1)*dilation, the
        extra element on the left when odd.
    """
    if x.ndim != 3 or weight.ndim != 3 or x.shape[2] != weight.shape[1]:
        raise ShapeError(f"conv1d: incompatible shapes {x.shape} and {weight.shape}")
    batch, steps, _ = x.shape
    kernel = weight.shape[0]
    total = (kernel - 1) * dilation
    left = math.ceil(total / 2)
    padded = np.pad(x.data, ((0, 0), (left, total - left), (0, 0)))
    columns = np.stack([padded[:, k * dilation:k * dilation + steps, :] for k in range(kernel)], axis=2)
    out = np.einsum('btkc,kco->bto', columns, weight.data)

    def backward_fn(g):
        grad_w = np.einsum('btkc,bto->kco', columns, g)
        grad_cols = np.einsum('bto,kco->btkc', g, weight.data)
        grad_padded = np.zeros_like(padded)
        for k in range(kernel):
            grad_padded[:, k * dilation:k * dilation + steps, :] += grad_cols[:, :, k, :]
        return grad_padded[:, left:left + steps, :], grad_w

    result = _make(out, (x, weight), backward_fn, 'conv1d')
    if bias is not None:
        if bias.shape != (weight.shape[2],):
            raise ShapeError(f"conv1d: bias shape {bias.shape} does not match {weight.shape}")
        result = add(result, bias)
    return result


def dropout(x: Tensor, p: float, training: bool,
            rng: Optional[Union[np.random.Generator, int]] = None) -> Tensor:
    """Inverted dropout; identity when not training or p == 0."""
    if not 0.0 <= p < 1.0:
        raise ContractError(f"dropout probability must lie in [0, 1), got {p}")
    if not training or p == 0.0:
        return x
    generator = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    keep = (generator.random(x.shape) >= p).astype(x.dtype) / (1.0 - p)
    return _make(x.data * keep, (x,), lambda g: (g * keep,), 'dropout')


def batchnorm1d(x: Tensor, gamma: Tensor, beta: Tensor, running_mean: np.ndarray,
                running_var: np.ndarray, training: bool, momentum: float = 0.1,
                eps: float = 1e-5) -> Tensor:
    """Batch normalization over every axis but the last (channels).

    In training mode batch statistics are used and the running buffers are
    updated in place; otherwise the running statistics are used.
    """
    if x.shape[-1] != gamma.shape[-1] or gamma.shape != beta.shape:
        raise ShapeError(f"batchnorm1d: incompatible shapes {x.shape} and {gamma.shape}")
    axes = tuple(range(x.ndim - 1))
    if training:
        centred = x - mean(x, axis=axes, keepdims=True)
        variance = mean(centred * centred, axis=axes, keepdims=True)
        normalized = centred / sqrt(variance + eps)
        count = int(np.prod([x.shape[a] for a in axes]))
        unbiased = variance.data.reshape(-1) * (count / max(count - 1, 1))
        running_mean *= (1.0 - momentum)
        running_mean += momentum * x.data.mean(axis=axes)
        running_var *= (1.0 - momentum)
        running_var += momentum * unbiased
    else:
        inv_std = 1.0 / np.sqrt(running_var + eps)
        normalized = (x - running_mean.astype(x.dtype)) * inv_std.astype(x.dtype)
    return normalized * gamma + beta


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis."""
    centred = x - mean(x, axis=-1, keepdims=True)
    variance = mean(centred * centred, axis=-1, keepdims=True)
    return centred / sqrt(variance + eps) * gamma + beta


def grad_reverse(x: Tensor, lam: float = 1.0) -> Tensor:
    """Identity forward; backward multiplies the gradient by -lam."""
    return _make(x.data.copy(), (x,), lambda g: (-lam * g,), 'grad_reverse')


def stop_gradient(x: Tensor) -> Tensor:
    """Constant copy cut from the graph."""
    return Tensor(x.data.copy())


# reverse pass

class Graph:
    """Topologically ordered record of the primitives behind one output."""

    def __init__(self, output: Tensor):
        self.output = output
        self.nodes: List[Tensor] = self._topological_order(output)

    @staticmethod
    def _topological_order(root: Tensor) -> List[Tensor]:
        order: List[Tensor] = []
        visited = set()
        stack_: List[Tuple[Tensor, bool]] = [(root, False)]
        while stack_:
            node, expanded = stack_.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack_.append((node, True))
            for parent in node.parents:
                if id(parent) not in visited:
                    stack_.append((parent, False))
        return order

    def __len__(self) -> int:
        return len(self.nodes)


def backward(loss: Tensor, graph: Optional[Graph] = None) -> None:
    """Accumulate d(loss)/d(leaf) into every ``requires_grad`` leaf.

    Raises:
        ContractError: If the loss is not a scalar
    """
    if loss.data.size != 1:
        raise ContractError(f"backward() needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    graph = graph or Graph(loss)
    if graph.output is not loss:
        raise ContractError("Graph was recorded for a different output")

    pending: Dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(graph.nodes):
        grad = pending.pop(id(node), None)
        if grad is None:
            continue
        if node.is_leaf:
            if node.requires_grad:
                grad = np.array(grad, dtype=node.dtype)
                node.grad = grad if node.grad is None else node.grad + grad
            continue
        for parent, parent_grad in zip(node.parents, node.backward_fn(grad)):
            if parent_grad is None or not parent.requires_grad:
                continue
            key = id(parent)
            pending[key] = parent_grad if key not in pending else pending[key] + parent_grad


# optimizer

@dataclass
class AdamState:
    """Moments and step counter of an Adam optimizer."""
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_step(params: Dict[str, Tensor], grads: Dict[str, Optional[np.ndarray]],
              state: AdamState, lr: float) -> AdamState:
    """One bias-corrected Adam update, applied to ``params`` in place.

    Parameters whose gradient is None are left untouched.

    Raises:
        OptimizerError: If any gradient is non-finite (nothing is updated)
    """
    for name, grad in grads.items():
        if grad is None:
            continue
        if grad.shape != params[name].shape:
            raise ShapeError(f"adam_step: gradient {grad.shape} for {name} {params[name].shape}")
        if not np.all(np.isfinite(grad)):
            raise OptimizerError(f"Non-finite gradient for parameter {name}", name=name)

    state.step += 1
    correction1 = 1.0 - state.beta1 ** state.step
    correction2 = 1.0 - state.beta2 ** state.step
    for name, grad in grads.items():
        if grad is None:
            continue
        param = params[name]
        m = state.m.get(name, np.zeros_like(param.data, dtype=np.float64))
        v = state.v.get(name, np.zeros_like(param.data, dtype=np.float64))
        m = state.beta1 * m + (1.0 - state.beta1) * grad
        v = state.beta2 * v + (1.0 - state.beta2) * grad * grad
        state.m[name], state.v[name] = m, v
        update = lr * (m / correction1) / (np.sqrt(v / correction2) + state.eps)
        param.data = (param.data - update).astype(param.dtype)
    return state


class Adam:
    """Adam over a named parameter dict (reads each parameter's ``grad``)."""

    def __init__(self, params: Dict[str, Tensor], lr: float = 1e-3,
                 betas: Tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.state = AdamState(beta1=betas[0], beta2=betas[1], eps=eps)

    def step(self) -> None:
        adam_step(self.params, {name: p.grad for name, p in self.params.items()}, self.state, self.lr)

    def zero_grad(self) -> None:
        for param in self.params.values():
            param.zero_grad()
