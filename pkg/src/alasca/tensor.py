"""Dense float64 tensors with a reverse-mode gradient tape.

Every op that touches a tensor with ``requires_grad`` records its parents and
a local backward rule.  ``Tensor.backward`` walks the recorded graph in
reverse topological order.  The tape is freed after each backward pass unless
``retain_graph=True`` is passed (needed when several seeds are pushed through
the same graph, e.g. for Jacobian rows).

Broadcasting is limited to adding a 1-D bias along the last axis and to
python scalars.
"""
from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ContractError, DimensionError, NumericError

_Backward = Callable[[np.ndarray], Sequence["np.ndarray | None"]]


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "_prev", "_backward")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.array(data, dtype=np.float64)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name
        self._prev: tuple[Tensor, ...] = ()
        self._backward: _Backward | None = None

    # -- bookkeeping -----------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    def __len__(self) -> int:
        return len(self.data)

    # -- graph construction ----------------------------------------------
    @staticmethod
    def _make(data: np.ndarray, parents: tuple["Tensor", ...], backward: _Backward) -> "Tensor":
        out = Tensor.__new__(Tensor)
        out.data = data
        out.grad = None
        out.name = None
        out.requires_grad = any(p.requires_grad for p in parents)
        if out.requires_grad:
            out._prev = parents
            out._backward = backward
        else:
            out._prev = ()
            out._backward = None
        return out

    def backward(self, seed=None, retain_graph: bool = False) -> dict[int, np.ndarray]:
        """Accumulate d(self)/d(leaf) into every reachable tensor's ``grad``.

        Without ``seed`` the tensor must be a scalar.  Returns a map from
        ``id(leaf)`` to the leaf's accumulated gradient for every leaf that
        requires grad.
        """
        if seed is None:
            if self.data.size != 1:
                raise ContractError(
                    f"backward() needs a scalar loss, got shape {self.shape}; pass seed= for vector outputs"
                )
            seed = np.ones_like(self.data)
        else:
            seed = np.asarray(seed, dtype=np.float64)
            if seed.shape != self.shape:
                raise DimensionError(f"seed shape {seed.shape} != tensor shape {self.shape}")
        if not self.requires_grad:
            raise ContractError("backward() on a tensor that is not connected to any parameter")

        order = _topo_order(self)
        local: dict[int, np.ndarray] = {id(self): seed}
        leaves: dict[int, np.ndarray] = {}
        for node in reversed(order):
            g = local.pop(id(node), None)
            if g is None:
                continue
            node.grad = g.copy() if node.grad is None else node.grad + g
            if node._backward is None:
                leaves[id(node)] = node.grad
                continue
            for parent, pg in zip(node._prev, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                local[key] = pg if key not in local else local[key] + pg
        if not retain_graph:
            for node in order:
                if node._backward is not None:
                    node._prev = ()
                    node._backward = None
        return leaves

    # -- arithmetic ---------------------------------------------------------
    def __add__(self, other) -> "Tensor":
        other = _as_tensor(other)
        if other.ndim == 0 and self.ndim > 0:
            return self + _full_like(self, other)
        if self.ndim == 0 and other.ndim > 0:
            return _full_like(other, self) + other
        if self.shape == other.shape:
            return Tensor._make(self.data + other.data, (self, other), lambda g: (g, g))
        if other.ndim == 1 and self.ndim >= 1 and self.shape[-1] == other.shape[0]:
            lead = tuple(range(self.ndim - 1))
            return Tensor._make(
                self.data + other.data, (self, other), lambda g: (g, g.sum(axis=lead))
            )
        if self.ndim == 1 and other.ndim >= 1 and other.shape[-1] == self.shape[0]:
            return other + self
        raise DimensionError(f"cannot add shapes {self.shape} and {other.shape}")

    __radd__ = __add__

    def __neg__(self) -> "Tensor":
        return Tensor._make(-self.data, (self,), lambda g: (-g,))

    def __sub__(self, other) -> "Tensor":
        return self + (-_as_tensor(other))

    def __rsub__(self, other) -> "Tensor":
        return _as_tensor(other) + (-self)

    def __mul__(self, other) -> "Tensor":
        if isinstance(other, (int, float, np.floating)):
            c = float(other)
            return Tensor._make(self.data * c, (self,), lambda g: (g * c,))
        other = _as_tensor(other)
        if self.shape != other.shape:
            raise DimensionError(f"elementwise product of shapes {self.shape} and {other.shape}")
        a, b = self.data, other.data
        return Tensor._make(a * b, (self, other), lambda g: (g * b, g * a))

    __rmul__ = __mul__

    def __truediv__(self, other) -> "Tensor":
        if not isinstance(other, (int, float, np.floating)):
            raise ContractError("division is only defined by a python scalar")
        return self * (1.0 / float(other))

    def __matmul__(self, other) -> "Tensor":
        other = _as_tensor(other)
        a, b = self.data, other.data
        if b.ndim != 2 or a.ndim not in (1, 2) or a.shape[-1] != b.shape[0]:
            raise DimensionError(f"matmul of shapes {a.shape} and {b.shape}")

        def back(g):
            if a.ndim == 1:
                return g @ b.T, np.outer(a, g)
            return g @ b.T, a.T @ g

        return Tensor._make(a @ b, (self, other), back)

    # -- reductions -------------------------------------------------------
    def sum(self, axis: int | None = None) -> "Tensor":
        shape = self.shape
        if axis is None:
            return Tensor._make(np.array(self.data.sum()), (self,), lambda g: (np.broadcast_to(g, shape).copy(),))
        ax = axis % self.ndim
        return Tensor._make(
            self.data.sum(axis=ax), (self,), lambda g: (np.broadcast_to(np.expand_dims(g, ax), shape).copy(),)
        )

    def mean(self, axis: int | None = None) -> "Tensor":
        count = self.data.size if axis is None else self.shape[axis]
        return self.sum(axis) * (1.0 / count)

    # -- elementwise nonlinearities --------------------------------------
    def exp(self) -> "Tensor":
        out = np.exp(self.data)
        return Tensor._make(out, (self,), lambda g: (g * out,))

    def log(self) -> "Tensor":
        x = self.data
        return Tensor._make(np.log(x), (self,), lambda g: (g / x,))

    def relu(self) -> "Tensor":
        mask = self.data > 0
        return Tensor._make(np.where(mask, self.data, 0.0), (self,), lambda g: (g * mask,))

    def softplus(self) -> "Tensor":
        x = self.data
        out = np.logaddexp(0.0, x)
        sig = 0.5 * (1.0 + np.tanh(0.5 * x))
        return Tensor._make(out, (self,), lambda g: (g * sig,))

    def pow(self, p: float) -> "Tensor":
        x = self.data
        return Tensor._make(x**p, (self,), lambda g: (g * p * x ** (p - 1),))

    # -- softmax family (last axis) ---------------------------------------
    def logsumexp(self) -> "Tensor":
        x = self.data
        m = x.max(axis=-1, keepdims=True)
        e = np.exp(x - m)
        s = e.sum(axis=-1, keepdims=True)
        out = (np.log(s) + m)[..., 0]
        p = e / s
        return Tensor._make(out, (self,), lambda g: (g[..., None] * p,))

    def log_softmax(self) -> "Tensor":
        x = self.data
        m = x.max(axis=-1, keepdims=True)
        shifted = x - m
        lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
        out = shifted - lse
        p = np.exp(out)
        return Tensor._make(out, (self,), lambda g: (g - p * g.sum(axis=-1, keepdims=True),))


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _full_like(t: Tensor, scalar: Tensor) -> Tensor:
    shape = t.shape
    return Tensor._make(
        np.full(shape, float(scalar.data)), (scalar,), lambda g: (np.array(g.sum()),)
    )


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
        for p in node._prev:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def check_finite(x, what: str = "input") -> np.ndarray:
    arr = x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"{what} contains NaN or Inf")
    return arr


def softmax(v, scale: float = 1.0) -> np.ndarray:
    """Numerically stable softmax of ``v * scale`` along the last axis (no tape)."""
    if scale <= 0:
        raise ContractError(f"softmax scale must be positive, got {scale}")
    x = check_finite(v, "softmax input") * scale
    e = np.exp(x - x.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def parameters_of(tensors: Iterable[Tensor]) -> list[Tensor]:
    return [t for t in tensors if t.requires_grad]
