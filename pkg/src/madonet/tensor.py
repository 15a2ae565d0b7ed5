"""Dense float64 tensors with reverse-mode automatic differentiation.

Only what small dense/convolutional networks need: matmul, valid
convolutions, a handful of elementwise ops and reductions.  A graph is built
eagerly during the forward pass and consumed by :func:`backward`.
"""

from __future__ import annotations

from collections.abc import Callable, Mapping, Sequence
from typing import Union

import numpy as np

from . import _kernels

ArrayLike = Union[np.ndarray, float, int, Sequence]
Gradients = dict  # parameter name -> ndarray with the parameter's shape


class Tensor:
    """An n-dimensional float64 array that may participate in a graph."""

    __slots__ = ("data", "requires_grad", "grad", "name", "_parents", "_backward", "_consumed")

    def __init__(self, data: ArrayLike, requires_grad: bool = False, name: str | None = None):
        arr = np.array(data, dtype=np.float64)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self._consumed = False

    # -- bookkeeping -------------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def tracked(self) -> bool:
        return self.requires_grad or bool(self._parents)

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self) -> Tensor:
        return Tensor(self.data)

    def __repr__(self) -> str:
        tag = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    # -- operators ---------------------------------------------------------

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

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self) -> Tensor:
        return transpose(self)

    def reshape(self, *shape) -> Tensor:
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self, axis: int | None = None) -> Tensor:
        return tsum(self, axis)

    def mean(self) -> Tensor:
        return mean(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data: np.ndarray, parents: tuple[Tensor, ...], backward_fn: Callable) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.requires_grad = False
    out.grad = None
    out.name = None
    out._consumed = False
    if any(p.tracked for p in parents):
        out._parents = parents
        out._backward = backward_fn
    else:
        out._parents = ()
        out._backward = None
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _check_broadcast(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ValueError(f"{op}: shapes {a.shape} and {b.shape} are not broadcastable") from None


# ---------------------------------------------------------------------------
# binary elementwise
# ---------------------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "add")

    def back(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _node(a.data + b.data, (a, b), back)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "sub")

    def back(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _node(a.data - b.data, (a, b), back)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "mul")

    def back(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _node(a.data * b.data, (a, b), back)


# ---------------------------------------------------------------------------
# unary elementwise
# ---------------------------------------------------------------------------


def relu(x: Tensor) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0.0  # subgradient 0 at the origin

    def back(g):
        return (g * mask,)

    return _node(np.where(mask, x.data, 0.0), (x,), back)


def tanh(x: Tensor) -> Tensor:
    x = as_tensor(x)
    y = np.tanh(x.data)

    def back(g):
        return (g * (1.0 - y * y),)

    return _node(y, (x,), back)


def square(x: Tensor) -> Tensor:
    x = as_tensor(x)

    def back(g):
        return (2.0 * g * x.data,)

    return _node(x.data * x.data, (x,), back)


def absolute(x: Tensor) -> Tensor:
    x = as_tensor(x)

    def back(g):
        return (g * np.sign(x.data),)

    return _node(np.abs(x.data), (x,), back)


def identity(x: Tensor) -> Tensor:
    return as_tensor(x)


# ---------------------------------------------------------------------------
# reductions and shape ops
# ---------------------------------------------------------------------------


def tsum(x: Tensor, axis: int | None = None) -> Tensor:
    x = as_tensor(x)
    if axis is None:

        def back(g):
            return (np.broadcast_to(g, x.shape).copy(),)

        return _node(np.array(x.data.sum()), (x,), back)

    def back_axis(g):
        return (np.broadcast_to(np.expand_dims(g, axis), x.shape).copy(),)

    return _node(x.data.sum(axis=axis), (x,), back_axis)


def mean(x: Tensor) -> Tensor:
    x = as_tensor(x)
    n = x.size

    def back(g):
        return (np.full(x.shape, float(g) / n),)

    return _node(np.array(x.data.mean()), (x,), back)


def reshape(x: Tensor, shape) -> Tensor:
    x = as_tensor(x)
    old = x.shape

    def back(g):
        return (g.reshape(old),)

    return _node(x.data.reshape(shape), (x,), back)


def transpose(x: Tensor) -> Tensor:
    x = as_tensor(x)
    if x.ndim != 2:
        raise ValueError(f"transpose expects a rank-2 tensor, got shape {x.shape}")

    def back(g):
        return (g.T,)

    return _node(x.data.T, (x,), back)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = tuple(as_tensor(t) for t in tensors)
    sizes = [t.shape[axis] for t in tensors]
    cuts = np.cumsum(sizes)[:-1]

    def back(g):
        return tuple(np.split(g, cuts, axis=axis))

    return _node(np.concatenate([t.data for t in tensors], axis=axis), tensors, back)


# ---------------------------------------------------------------------------
# linear algebra and convolution
# ---------------------------------------------------------------------------


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError(f"matmul expects rank-2 tensors, got shapes {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul inner extents differ: {a.shape} @ {b.shape}")

    def back(g):
        return g @ b.data.T, a.data.T @ g

    return _node(a.data @ b.data, (a, b), back)


def conv_out_len(length: int, width: int, stride: int) -> int:
    return (length - width) // stride + 1


def conv1d(x, kernel, stride: int = 1) -> Tensor:
    """Valid 1D cross-correlation.

    ``x`` is ``[C, L]`` or batched ``[B, C, L]``; ``kernel`` is ``[O, C, K]``.
    """
    x, kernel = as_tensor(x), as_tensor(kernel)
    if stride < 1:
        raise ValueError(f"stride must be positive, got {stride}")
    unbatched = x.ndim == 2
    xd = x.data[None] if unbatched else x.data
    if xd.ndim != 3 or kernel.ndim != 3:
        raise ValueError(f"conv1d expects input [C, L] or [B, C, L] and kernel [O, C, K]; got {x.shape}, {kernel.shape}")
    if xd.shape[1] != kernel.shape[1]:
        raise ValueError(f"conv1d channel mismatch: input {x.shape}, kernel {kernel.shape}")
    length, width = xd.shape[2], kernel.shape[2]
    if width > length:
        raise ValueError(f"conv1d kernel width {width} exceeds input length {length}")
    xd = np.ascontiguousarray(xd)
    kern = _kernels.active
    out = kern.conv1d_forward(xd, np.ascontiguousarray(kernel.data), stride)

    def back(g):
        g = np.ascontiguousarray(g[None] if unbatched else g)
        gx = kern.conv1d_grad_input(g, np.ascontiguousarray(kernel.data), length, stride) if x.tracked else None
        gk = kern.conv1d_grad_kernel(g, xd, width, stride) if kernel.tracked else None
        if gx is not None and unbatched:
            gx = gx[0]
        return gx, gk

    return _node(out[0] if unbatched else out, (x, kernel), back)


def conv2d(x, kernel, stride: int = 1) -> Tensor:
    """Valid 2D cross-correlation.

    ``x`` is ``[C, H, W]`` or batched ``[B, C, H, W]``; ``kernel`` is ``[O, C, KH, KW]``.
    """
    x, kernel = as_tensor(x), as_tensor(kernel)
    if stride < 1:
        raise ValueError(f"stride must be positive, got {stride}")
    unbatched = x.ndim == 3
    xd = x.data[None] if unbatched else x.data
    if xd.ndim != 4 or kernel.ndim != 4:
        raise ValueError(
            f"conv2d expects input [C, H, W] or [B, C, H, W] and kernel [O, C, KH, KW]; got {x.shape}, {kernel.shape}"
        )
    if xd.shape[1] != kernel.shape[1]:
        raise ValueError(f"conv2d channel mismatch: input {x.shape}, kernel {kernel.shape}")
    height, width = xd.shape[2], xd.shape[3]
    kh, kw = kernel.shape[2], kernel.shape[3]
    if kh > height or kw > width:
        raise ValueError(f"conv2d kernel {kh}x{kw} exceeds input {height}x{width}")
    xd = np.ascontiguousarray(xd)
    kern = _kernels.active
    out = kern.conv2d_forward(xd, np.ascontiguousarray(kernel.data), stride)

    def back(g):
        g = np.ascontiguousarray(g[None] if unbatched else g)
        gx = kern.conv2d_grad_input(g, np.ascontiguousarray(kernel.data), height, width, stride) if x.tracked else None
        gk = kern.conv2d_grad_kernel(g, xd, kh, kw, stride) if kernel.tracked else None
        if gx is not None and unbatched:
            gx = gx[0]
        return gx, gk

    return _node(out[0] if unbatched else out, (x, kernel), back)


_UNARY = {"relu": relu, "tanh": tanh, "square": square, "abs": absolute, "identity": identity, "sum": tsum, "mean": mean}
_BINARY = {"add": add, "sub": sub, "multiply": mul, "mul": mul}


def elementwise(tag: str, *inputs) -> Tensor:
    """Dispatch an elementwise op or reduction by name."""
    if tag in _UNARY:
        if len(inputs) != 1:
            raise ValueError(f"{tag} takes one input, got {len(inputs)}")
        return _UNARY[tag](inputs[0])
    if tag in _BINARY:
        if len(inputs) != 2:
            raise ValueError(f"{tag} takes two inputs, got {len(inputs)}")
        return _BINARY[tag](*inputs)
    raise ValueError(f"unknown elementwise op {tag!r}")


# ---------------------------------------------------------------------------
# reverse pass
# ---------------------------------------------------------------------------


def _topo_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(loss: Tensor, params: Mapping[str, Tensor] | Sequence[Tensor] | None = None) -> Gradients:
    """Accumulate d(loss)/d(leaf) over the graph rooted at ``loss``.

    Returns a dict keyed by parameter name.  With ``params`` given, every
    requested parameter appears exactly once (zeros if unreachable);
    otherwise all reachable leaves with ``requires_grad`` are reported.
    Each reached leaf also gets its ``.grad`` set.  The graph is released
    afterwards, so a second call on the same loss raises.
    """
    if loss.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss._consumed:
        raise RuntimeError("graph already consumed by a previous backward call")
    if not loss.tracked:
        raise ValueError("loss does not depend on any tracked tensor")

    order = _topo_order(loss)
    grads: dict[int, np.ndarray] = {id(loss): np.ones(loss.shape)}
    for node in reversed(order):
        g = grads.pop(id(node), None) if node._backward is not None else grads.get(id(node))
        if g is None or node._backward is None:
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.tracked:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg

    leaves = [n for n in order if n.requires_grad]
    for leaf in leaves:
        leaf.grad = grads.get(id(leaf), np.zeros(leaf.shape))

    for node in order:
        if node._backward is not None:
            node._parents = ()
            node._backward = None
            node._consumed = True
    loss._consumed = True

    if params is None:
        return {leaf.name if leaf.name is not None else str(id(leaf)): leaf.grad for leaf in leaves}
    items = params.items() if isinstance(params, Mapping) else ((p.name or str(i), p) for i, p in enumerate(params))
    return {name: grads.get(id(p), np.zeros(p.shape)) for name, p in items}


def grad_check(
    function: Callable[[Mapping[str, Tensor]], Tensor],
    params: Mapping[str, Tensor],
    step: float = 1e-5,
) -> float:
    """Max relative error between autodiff and central differences.

    The error of one parameter is ``||ad - cd|| / (||cd|| + 1e-12)`` with
    Euclidean norms over its entries; the max over parameters is returned.
    ``function`` must rebuild its graph on every call.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    loss = function(params)
    if not np.isfinite(loss.data).all():
        raise FloatingPointError("function value is not finite")
    auto = backward(loss, params)
    worst = 0.0
    for name, p in params.items():
        flat = p.data.reshape(-1)
        cd = np.empty(flat.size)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            fp = function(params).data
            flat[i] = orig - step
            fm = function(params).data
            flat[i] = orig
            if not (np.isfinite(fp).all() and np.isfinite(fm).all()):
                raise FloatingPointError(f"function value is not finite while perturbing {name!r}")
            cd[i] = (float(fp) - float(fm)) / (2.0 * step)
        err = np.linalg.norm(auto[name].reshape(-1) - cd) / (np.linalg.norm(cd) + 1e-12)
        worst = max(worst, float(err))
    return worst
