"""Dense float64 tensors with reverse-mode gradients

Every op returns a new Tensor; when any input requires a gradient the result remembers its
parents and a closure mapping the output gradient to one gradient per parent. backward() walks
that graph in reverse topological order. Only Parameter values are ever mutated, and only by
optimizers or grad_check().
"""
import logging
import threading
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from ml_translit.errors import NonFiniteError, ShapeError

logger = logging.getLogger(__name__)

PROB_FLOOR = 1e-12

ArrayLike = Union["Tensor", np.ndarray, float, int]
BackwardFn = Callable[[np.ndarray], Tuple[Optional[np.ndarray], ...]]

_state = threading.local()


def _grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextmanager
def no_grad() -> Iterator[None]:
    """Skip graph recording inside the block (inference)"""
    previous = _grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = previous


class Tensor:
    __slots__ = ("data", "requires_grad", "_parents", "_backward")

    def __init__(
        self,
        data: Union[np.ndarray, float, int, Sequence],
        requires_grad: bool = False,
        _parents: Tuple["Tensor", ...] = (),
        _backward: Optional[BackwardFn] = None,
    ) -> None:
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return int(self.data.size)

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other: ArrayLike) -> "Tensor":
        return add(self, other)

    def __radd__(self, other: ArrayLike) -> "Tensor":
        return add(other, self)

    def __sub__(self, other: ArrayLike) -> "Tensor":
        return sub(self, other)

    def __rsub__(self, other: ArrayLike) -> "Tensor":
        return sub(other, self)

    def __mul__(self, other: ArrayLike) -> "Tensor":
        return mul(self, other)

    def __rmul__(self, other: ArrayLike) -> "Tensor":
        return mul(other, self)

    def __neg__(self) -> "Tensor":
        return mul(self, -1.0)

    def __truediv__(self, other: Union[float, int]) -> "Tensor":
        return mul(self, 1.0 / float(other))

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)

    def __getitem__(self, index) -> "Tensor":
        return getitem(self, index)

    def reshape(self, *shape: int) -> "Tensor":
        return reshape(self, shape)

    def sum(self, axis: Optional[int] = None, keepdims: bool = False) -> "Tensor":
        return tensor_sum(self, axis=axis, keepdims=keepdims)

    def mean(self) -> "Tensor":
        return mul(tensor_sum(self), 1.0 / self.size)


class Parameter(Tensor):
    """A named trainable tensor with its own gradient buffer"""

    __slots__ = ("name", "grad")

    def __init__(self, name: str, data: Union[np.ndarray, Sequence, float]) -> None:
        super().__init__(np.array(data, dtype=np.float64, copy=True), requires_grad=True)
        self.name = name
        self.grad = np.zeros_like(self.data)

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def __repr__(self) -> str:
        return f"Parameter(name={self.name!r}, shape={self.shape})"


def zero_grads(params: Sequence[Parameter]) -> None:
    for param in params:
        param.zero_grad()


def as_tensor(x: ArrayLike) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x)


def _make(data: np.ndarray, parents: Tuple[Tensor, ...], backward: BackwardFn, op: str) -> Tensor:
    if not np.all(np.isfinite(data)):
        raise NonFiniteError(f"{op} produced a non-finite value")
    if _grad_enabled() and any(p.requires_grad for p in parents):
        return Tensor(data, True, parents, backward)
    return Tensor(data)


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to `shape`"""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _check_broadcast(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


def add(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "add")

    def backward(g: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(a.data + b.data, (a, b), backward, "add")


def sub(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "sub")

    def backward(g: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _make(a.data - b.data, (a, b), backward, "sub")


def mul(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "mul")

    def backward(g: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _make(a.data * b.data, (a, b), backward, "mul")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes

    a: [..., m, k], b: [k, n] or [..., k, n] with matching leading axes.

    Raises:
        ShapeError: inner dimensions disagree
    """
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: shapes {a.shape} and {b.shape} are not aligned")

    def backward(g: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _make(np.matmul(a.data, b.data), (a, b), backward, "matmul")


def sigmoid(x: Tensor) -> Tensor:
    # tanh form never overflows
    y = 0.5 * (1.0 + np.tanh(0.5 * x.data))

    def backward(g: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        return (g * y * (1.0 - y),)

    return _make(y, (x,), backward, "sigmoid")


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)

    def backward(g: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        return (g * (1.0 - y * y),)

    return _make(y, (x,), backward, "tanh")


def log(x: Tensor, floor: float = PROB_FLOOR) -> Tensor:
    clamped = np.maximum(x.data, floor)

    def backward(g: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        return (g / clamped,)

    return _make(np.log(clamped), (x,), backward, "log")


def tensor_sum(x: Tensor, axis: Optional[int] = None, keepdims: bool = False) -> Tensor:
    def backward(g: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _make(np.sum(x.data, axis=axis, keepdims=keepdims), (x,), backward, "sum")


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
        shape = shape[0]

    def backward(g: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        return (g.reshape(x.shape),)

    try:
        data = x.data.reshape(tuple(shape))
    except ValueError:
        raise ShapeError(f"reshape: cannot reshape {x.shape} into {tuple(shape)}") from None
    return _make(data, (x,), backward, "reshape")


def swapaxes(x: Tensor, axis1: int, axis2: int) -> Tensor:
    def backward(g: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        return (np.swapaxes(g, axis1, axis2),)

    return _make(np.swapaxes(x.data, axis1, axis2), (x,), backward, "swapaxes")


def broadcast_to(x: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)
    try:
        data = np.broadcast_to(x.data, shape).copy()
    except ValueError:
        raise ShapeError(f"broadcast_to: cannot broadcast {x.shape} to {shape}") from None

    def backward(g: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        return (_unbroadcast(g, x.shape),)

    return _make(data, (x,), backward, "broadcast_to")


def getitem(x: Tensor, index) -> Tensor:
    """Basic or integer-array indexing; repeated indices accumulate in the gradient"""
    if isinstance(index, Tensor):
        raise TypeError("index a Tensor with integers or numpy arrays, not a Tensor")
    parts = index if isinstance(index, tuple) else (index,)
    basic = all(isinstance(part, (int, slice)) or part is None or part is Ellipsis for part in parts)

    def backward(g: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        gx = np.zeros_like(x.data)
        if basic:
            gx[index] += g
        else:
            np.add.at(gx, index, g)
        return (gx,)

    return _make(np.array(x.data[index]), (x,), backward, "getitem")


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    try:
        data = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise ShapeError(f"concat: incompatible shapes {[t.shape for t in tensors]}") from None
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        return tuple(np.split(g, bounds, axis=axis))

    return _make(data, tuple(tensors), backward, "concat")


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    try:
        data = np.stack([t.data for t in tensors], axis=axis)
    except ValueError:
        raise ShapeError(f"stack: incompatible shapes {[t.shape for t in tensors]}") from None

    def backward(g: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        return tuple(np.moveaxis(g, axis, 0))

    return _make(data, tuple(tensors), backward, "stack")


def softmax_masked(x: Tensor, mask: Optional[np.ndarray] = None) -> Tensor:
    """Softmax over the last axis, restricted to positions where mask is True

    Masked positions come out exactly 0. The row maximum is subtracted before exponentiation.

    Raises:
        ValueError: a row has no unmasked position
    """
    z = x.data
    keep: Optional[np.ndarray] = None
    if mask is not None:
        try:
            keep = np.broadcast_to(np.asarray(mask, dtype=bool), z.shape)
        except ValueError:
            raise ShapeError(f"softmax_masked: mask shape {np.shape(mask)} does not fit {z.shape}") from None
        if not keep.any(axis=-1).all():
            raise ValueError("softmax_masked: fully-masked row")
        z = np.where(keep, z, -np.inf)

    e = np.exp(z - z.max(axis=-1, keepdims=True))
    if keep is not None:
        e = np.where(keep, e, 0.0)
    y = e / e.sum(axis=-1, keepdims=True)

    def backward(g: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        return (y * (g - np.sum(g * y, axis=-1, keepdims=True)),)

    return _make(y, (x,), backward, "softmax_masked")


def masked_cross_entropy(
    probs: Tensor,
    targets: np.ndarray,
    pad_id: int = 0,
    mask: Optional[np.ndarray] = None,
    stats: Optional[Dict[str, int]] = None,
) -> Tensor:
    """Mean of -ln p[target] over the scored positions

    By default every position whose target is pad_id is excluded from the loss and its gradient.
    An explicit boolean `mask` (same shape as targets) overrides that choice. Probabilities below
    1e-12 are clamped; the number of clamped positions is added to stats["clamped"].

    Args:
        probs (Tensor): [..., V] distributions
        targets (np.ndarray): integer ids, shape probs.shape[:-1]
        pad_id (int): id excluded when no mask is given
        mask (Optional[np.ndarray]): positions to score
        stats (Optional[Dict[str, int]]): counters updated in place

    Raises:
        ShapeError: targets do not match probs
        ValueError: no position is scored, or a target id is out of range

    Returns:
        Tensor: scalar loss
    """
    t = np.asarray(targets, dtype=np.int64)
    if t.shape != probs.shape[:-1]:
        raise ShapeError(f"masked_cross_entropy: targets {t.shape} do not match probs {probs.shape}")
    n_classes = probs.shape[-1]
    if t.size and (t.min() < 0 or t.max() >= n_classes):
        raise ValueError(f"masked_cross_entropy: target ids must be in [0, {n_classes})")

    scored = (t != pad_id) if mask is None else np.asarray(mask, dtype=bool)
    if scored.shape != t.shape:
        raise ShapeError(f"masked_cross_entropy: mask {scored.shape} does not match targets {t.shape}")
    n_scored = int(scored.sum())
    if n_scored == 0:
        raise ValueError("no unmasked targets")

    picked = np.take_along_axis(probs.data, t[..., None], axis=-1)[..., 0]
    clamped = np.maximum(picked, PROB_FLOOR)
    n_clamped = int(np.sum((picked < PROB_FLOOR) & scored))
    if n_clamped:
        logger.warning("clamped %d target probabilities below %g", n_clamped, PROB_FLOOR)
        if stats is not None:
            stats["clamped"] = stats.get("clamped", 0) + n_clamped

    loss = -np.sum(np.where(scored, np.log(clamped), 0.0)) / n_scored

    def backward(g: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        gp = np.zeros_like(probs.data)
        local = np.where(scored, -1.0 / (clamped * n_scored), 0.0)
        np.put_along_axis(gp, t[..., None], local[..., None], axis=-1)
        return (g * gp,)

    return _make(np.asarray(loss), (probs,), backward, "masked_cross_entropy")


def _topological_order(root: Tensor) -> List[Tensor]:
    # iterative post-order; recurrent graphs are deeper than the recursion limit
    order: List[Tensor] = []
    visited = set()
    stack: List[Tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in visited:
                stack.append((parent, False))
    return order


def backward(loss: Tensor, params: Optional[Sequence[Parameter]] = None) -> None:
    """Accumulate d(loss)/d(param) into param.grad

    Gradients add to whatever the buffers already hold; call zero_grads() between steps.
    With params=None every Parameter reachable from loss is updated. A parameter that loss does
    not depend on keeps its buffer unchanged (zero after zero_grads()).

    Raises:
        ShapeError: loss is not a scalar
    """
    if loss.size != 1:
        raise ShapeError(f"backward: loss must be a scalar, got shape {loss.shape}")
    if not loss.requires_grad:
        return

    wanted = None if params is None else {id(p) for p in params}
    grads: Dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(_topological_order(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if isinstance(node, Parameter):
            if wanted is None or id(node) in wanted:
                node.grad = node.grad + g
            continue
        if node._backward is None:
            continue
        for parent, parent_grad in zip(node._parents, node._backward(g)):
            if parent_grad is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = grads[key] + parent_grad if key in grads else parent_grad


@dataclass
class GradCheckFailure:
    name: str
    index: Tuple[int, ...]
    analytic: float
    numeric: float
    rel_error: float


@dataclass
class GradCheckReport:
    max_rel_error: float = 0.0
    n_checked: int = 0
    tol: float = 1e-5
    failures: List[GradCheckFailure] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.failures


def relative_error(analytic: float, numeric: float) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-8)


def grad_check(
    f: Callable[[Sequence[Parameter]], Tensor],
    params: Sequence[Parameter],
    eps: float = 1e-6,
    tol: float = 1e-5,
    atol: float = 0.0,
) -> GradCheckReport:
    """Compare reverse-mode gradients against central differences, element by element

    Parameter values are perturbed in place and restored afterwards. Coordinates whose relative
    error exceeds tol are reported as failures; they are data, not errors. With atol > 0 a
    coordinate whose absolute difference is at most atol passes regardless, which keeps
    near-zero gradients from failing on the rounding noise of f.
    """
    if eps <= 0:
        raise ValueError(f"eps must be > 0, got {eps}")

    zero_grads(params)
    backward(f(params), params)
    analytic = {id(p): p.grad.copy() for p in params}

    report = GradCheckReport(tol=tol)
    for param in params:
        for index in np.ndindex(*param.shape):
            original = param.data[index]
            param.data[index] = original + eps
            f_plus = f(params).item()
            param.data[index] = original - eps
            f_minus = f(params).item()
            param.data[index] = original

            numeric = (f_plus - f_minus) / (2.0 * eps)
            a = float(analytic[id(param)][index])
            rel = relative_error(a, numeric)
            report.n_checked += 1
            report.max_rel_error = max(report.max_rel_error, rel)
            if rel > tol and abs(a - numeric) > atol:
                report.failures.append(GradCheckFailure(param.name, index, a, numeric, rel))
    zero_grads(params)
    return report
