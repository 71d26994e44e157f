"""Tape-based reverse-mode differentiation over float64 numpy arrays.

A :class:`Var` wraps a dense ``float64`` array.  Vars created through
:meth:`Tape.leaf` (or produced by an op with a taped input) are recorded on
that tape in creation order; everything else is a constant.  ``backward``
walks the tape in exact reverse recording order.
"""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from artifact.errors import DetachedNode, NotScalar

VJP = Callable[[np.ndarray, Sequence[bool]], Sequence["np.ndarray | None"]]


def as_array(value) -> np.ndarray:
    arr = np.asarray(value, dtype=np.float64)
    return arr


class Tape:
    """Single-writer record of one differentiation pass."""

    def __init__(self) -> None:
        self.nodes: list[Var] = []
        self.leaves: dict[str, Var] = {}

    def __len__(self) -> int:
        return len(self.nodes)

    def leaf(self, value, name: str | None = None) -> "Var":
        if name is None:
            name = f"leaf{len(self.nodes)}"
        if name in self.leaves:
            raise ValueError(f"duplicate leaf name {name!r}")
        var = Var(np.array(value, dtype=np.float64), name=name)
        self._append(var)
        self.leaves[name] = var
        return var

    def _append(self, var: "Var") -> None:
        var.tape = self
        var.index = len(self.nodes)
        self.nodes.append(var)

    def record(self, data: np.ndarray, parents: tuple["Var", ...], vjp: VJP) -> "Var":
        var = Var(data, parents=parents, vjp=vjp)
        self._append(var)
        return var


class Var:
    __slots__ = ("data", "tape", "index", "parents", "vjp", "name")
    __array_priority__ = 1000

    def __init__(self, data, parents: tuple["Var", ...] = (), vjp: VJP | None = None,
                 name: str | None = None) -> None:
        self.data = data if isinstance(data, np.ndarray) and data.dtype == np.float64 else as_array(data)
        self.tape: Tape | None = None
        self.index = -1
        self.parents = parents
        self.vjp = vjp
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def tracked(self) -> bool:
        return self.tape is not None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def __repr__(self) -> str:
        kind = "leaf" if self.name else ("op" if self.tracked else "const")
        return f"Var({kind}, shape={self.shape})"

    # operator sugar; implementations live in ops
    def __add__(self, other):
        from artifact.numcore import ops
        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from artifact.numcore import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from artifact.numcore import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from artifact.numcore import ops
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        from artifact.numcore import ops
        return ops.div(self, other)

    def __rtruediv__(self, other):
        from artifact.numcore import ops
        return ops.div(other, self)

    def __neg__(self):
        from artifact.numcore import ops
        return ops.neg(self)

    def __matmul__(self, other):
        from artifact.numcore import ops
        return ops.matmul(self, other)

    def __rmatmul__(self, other):
        from artifact.numcore import ops
        return ops.matmul(other, self)

    def __pow__(self, exponent: float):
        from artifact.numcore import ops
        return ops.power(self, exponent)

    def __getitem__(self, index):
        from artifact.numcore import ops
        return ops.take(self, index)

    def sum(self, axis=None, keepdims: bool = False):
        from artifact.numcore import ops
        return ops.sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        from artifact.numcore import ops
        return ops.mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        from artifact.numcore import ops
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return ops.reshape(self, shape)

    @property
    def T(self):
        from artifact.numcore import ops
        return ops.swapaxes(self, -1, -2)


def as_var(value) -> Var:
    return value if isinstance(value, Var) else Var(as_array(value))


def common_tape(*vars_: Var) -> Tape | None:
    tape = None
    for v in vars_:
        if v.tape is not None:
            if tape is None:
                tape = v.tape
            elif v.tape is not tape:
                raise DetachedNode("operands recorded on different tapes")
    return tape


def make(data: np.ndarray, parents: tuple[Var, ...], vjp: VJP) -> Var:
    """Wrap an op result, recording it if any parent is taped."""
    tape = common_tape(*parents)
    if tape is None:
        return Var(data)
    return tape.record(data, parents, vjp)


def backward(tape: Tape, loss: Var) -> dict[str, np.ndarray]:
    """Gradients of scalar ``loss`` w.r.t. every leaf of ``tape``.

    Leaves the loss does not depend on get an all-zero gradient.
    """
    if not isinstance(loss, Var) or loss.tape is not tape:
        raise DetachedNode("loss is not recorded on this tape")
    if loss.data.size != 1:
        raise NotScalar(f"loss must be scalar, got shape {loss.shape}")
    grads: dict[int, np.ndarray] = {loss.index: np.ones_like(loss.data)}
    nodes = tape.nodes
    for idx in range(loss.index, -1, -1):
        g = grads.get(idx)
        node = nodes[idx]
        if g is None or not node.parents:
            continue
        del grads[idx]
        need = tuple(p.tape is not None for p in node.parents)
        pgrads = node.vjp(g, need)
        for p, pg, n in zip(node.parents, pgrads, need):
            if not n or pg is None:
                continue
            prev = grads.get(p.index)
            grads[p.index] = pg if prev is None else prev + pg
    out = {}
    for name, leaf in tape.leaves.items():
        g = grads.get(leaf.index)
        out[name] = np.zeros_like(leaf.data) if g is None else np.array(g, dtype=np.float64).reshape(leaf.shape)
    return out
