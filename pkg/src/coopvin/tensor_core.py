"""Dense grid primitives with a small reverse-mode tape.

Grids are plain numpy arrays indexed ``[x, y, theta]`` (state grids) or
``[x, y, theta, action]`` (per-action grids).  Every primitive accepts either
arrays or :class:`Var` handles.  When at least one operand is a ``Var`` the
result is recorded on that operand's :class:`Tape`; otherwise the primitive is
a plain numpy computation and returns an array.

Only the primitives the planning pipeline needs are differentiable.  The
hard-min pooling is deliberately excluded: calling :func:`min_pool` on a
recorded value raises :class:`UnsupportedOperationError`.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigurationError, NumericalCollapseError, UnsupportedOperationError

# Finite stand-in for "unreachable" / "forbidden".  Every accumulation is
# clamped here so softmin stays finite.
INF_CLAMP = 1e6


class Var:
    """Handle to an array recorded on a tape."""

    __slots__ = ("value", "tape", "name", "__weakref__")

    def __init__(self, value: np.ndarray, tape: "Tape", name: str | None = None):
        self.value = value
        self.tape = tape
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def __repr__(self) -> str:
        label = f" {self.name!r}" if self.name else ""
        return f"<Var{label} shape={self.shape}>"


@dataclass
class _Record:
    op: str
    out: Var
    inputs: tuple
    vjp: Callable[[np.ndarray], tuple]


class Tape:
    """Ordered record of primitive applications.

    A tape is single-writer: record one computation, then call
    :meth:`backward` once the scalar loss is available.
    """

    def __init__(self) -> None:
        self.records: list[_Record] = []
        self.marked: list[Var] = []
        self.backward_order: list[int] = []

    def variable(self, value, name: str | None = None) -> Var:
        """Mark ``value`` as a variable whose gradient is wanted."""
        var = Var(np.array(value, dtype=float), self, name)
        self.marked.append(var)
        return var

    def record(self, op: str, value: np.ndarray, inputs: tuple, vjp) -> Var:
        out = Var(value, self)
        self.records.append(_Record(op, out, inputs, vjp))
        return out

    @property
    def ops(self) -> list[str]:
        return [r.op for r in self.records]

    def backward(self, output: Var, seed: float = 1.0) -> dict[Var, np.ndarray]:
        """Gradients of the scalar ``output`` w.r.t. every marked variable."""
        if not isinstance(output, Var) or output.tape is not self:
            raise ConfigurationError("backward() needs a Var recorded on this tape")
        if output.value.size != 1:
            raise ConfigurationError("backward() needs a scalar output")
        grads: dict[int, np.ndarray] = {id(output): np.full(output.shape, float(seed))}
        self.backward_order = []
        for pos in range(len(self.records) - 1, -1, -1):
            rec = self.records[pos]
            g = grads.pop(id(rec.out), None)
            if g is None:
                continue
            self.backward_order.append(pos)
            for inp, gi in zip(rec.inputs, rec.vjp(g)):
                if not isinstance(inp, Var) or gi is None:
                    continue
                if gi.shape != inp.shape:
                    raise AssertionError(f"{rec.op}: gradient shape {gi.shape} != {inp.shape}")
                key = id(inp)
                if key in grads:
                    grads[key] = grads[key] + gi
                else:
                    grads[key] = gi
        return {v: grads.get(id(v), np.zeros(v.shape)) for v in self.marked}


def value(x) -> np.ndarray:
    """Underlying array of ``x`` (``Var`` or array-like)."""
    if isinstance(x, Var):
        return x.value
    return np.asarray(x, dtype=float)


def _tape_of(inputs) -> Tape | None:
    tape = None
    for x in inputs:
        if isinstance(x, Var):
            if tape is not None and x.tape is not tape:
                raise ConfigurationError("operands recorded on different tapes")
            tape = x.tape
    return tape


def _emit(op: str, out: np.ndarray, inputs: tuple, vjp) -> np.ndarray | Var:
    tape = _tape_of(inputs)
    if tape is None:
        return out
    return tape.record(op, out, inputs, vjp)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# -- lattice transitions ---------------------------------------------------

def _check_state_grid(grid: np.ndarray, model) -> None:
    if grid.ndim != 3 or grid.shape[2] != model.orientations:
        raise ConfigurationError(
            f"state grid shape {grid.shape} does not match a model with "
            f"{model.orientations} orientations"
        )
    if model.n_actions < 1:
        raise ConfigurationError("transition model has no actions")


def _gather(flat: np.ndarray, idx: np.ndarray, fill: float) -> np.ndarray:
    valid = idx >= 0
    out = np.full(idx.shape, fill, dtype=float)
    out[valid] = flat[idx[valid]]
    return out


def _scatter(vals: np.ndarray, idx: np.ndarray, size: int) -> np.ndarray:
    valid = idx >= 0
    return np.bincount(idx[valid], weights=vals[valid], minlength=size).astype(float)


def propagate(cost, model) -> np.ndarray | Var:
    """Shift a state grid through every transition filter.

    ``out[x, y, th, a]`` is the entry of ``cost`` at the unique predecessor of
    ``(x, y, th)`` under action ``a``, or ``INF_CLAMP`` if that predecessor
    lies off the grid.
    """
    c = value(cost)
    _check_state_grid(c, model)
    w, h, _ = c.shape
    idx = model.predecessor_index(w, h)
    out = _gather(c.ravel(), idx, INF_CLAMP)

    def vjp(g):
        return (_scatter(g, idx, c.size).reshape(c.shape),)

    return _emit("propagate", out, (cost,), vjp)


def retract(weights, model) -> np.ndarray | Var:
    """Move per-action mass back to the predecessor states (mirrored filters).

    This is the transpose of :func:`propagate`; mass whose predecessor is off
    the grid is dropped.
    """
    wv = value(weights)
    if wv.ndim != 4 or wv.shape[2] != model.orientations or wv.shape[3] != model.n_actions:
        raise ConfigurationError(f"action grid shape {wv.shape} does not match the model")
    w, h, th, _ = wv.shape
    idx = model.predecessor_index(w, h)
    out = _scatter(wv, idx, w * h * th).reshape(w, h, th)

    def vjp(g):
        return (_gather(g.ravel(), idx, 0.0),)

    return _emit("retract", out, (weights,), vjp)


def accumulate(propagated, action_cost, extrinsic) -> np.ndarray | Var:
    """Add transition cost and visitation cost to propagated cost.

    ``extrinsic`` may be a 2D ``[x, y]`` field (replicated over orientation)
    or a full state grid.  Results are clamped at ``INF_CLAMP``.
    """
    p = value(propagated)
    ac = value(action_cost)
    ex = value(extrinsic)
    if ex.ndim == 2:
        ex4 = ex[:, :, None, None]
    elif ex.ndim == 3:
        ex4 = ex[..., None]
    else:
        raise ConfigurationError(f"extrinsic cost must be 2D or 3D, got shape {ex.shape}")
    if ex.shape[:2] != p.shape[:2] or (ex.ndim == 3 and ex.shape[2] != p.shape[2]):
        raise ConfigurationError(f"extrinsic shape {ex.shape} incompatible with {p.shape}")
    try:
        total = p + ac + ex4
    except ValueError as exc:
        raise ConfigurationError(str(exc)) from None
    if total.shape != p.shape:
        raise ConfigurationError(f"action cost shape {ac.shape} incompatible with {p.shape}")
    mask = total < INF_CLAMP
    out = np.where(mask, total, INF_CLAMP)

    def vjp(g):
        gm = g * mask
        g_ex = gm.sum(axis=3)
        if ex.ndim == 2:
            g_ex = g_ex.sum(axis=2)
        return gm, _unbroadcast(gm, ac.shape), g_ex

    return _emit("accumulate", out, (propagated, action_cost, extrinsic), vjp)


# -- pooling ----------------------------------------------------------------

def softmin_pool(q, temperature: float, axis: int = -1):
    """Temperature softmin over ``axis``.

    Returns ``(values, policy)`` with ``policy = softmax(-q / temperature)``
    and ``values = sum(policy * q)``.  The per-state minimum is subtracted
    before exponentiation.
    """
    if not temperature > 0:
        raise ConfigurationError(f"softmin temperature must be positive, got {temperature}")
    qv = value(q)
    axis = axis % qv.ndim
    shifted = qv - qv.min(axis=axis, keepdims=True)
    e = np.exp(-shifted / temperature)
    p = e / e.sum(axis=axis, keepdims=True)

    def policy_vjp(g):
        inner = (g * p).sum(axis=axis, keepdims=True)
        return (-(p / temperature) * (g - inner),)

    policy = _emit("softmin_policy", p, (q,), policy_vjp)
    return expectation(policy, q, axis=axis), policy


def expectation(weights, q, axis: int = -1):
    """``sum(weights * q)`` along ``axis``."""
    wv, qv = value(weights), value(q)
    axis = axis % qv.ndim
    out = (wv * qv).sum(axis=axis)

    def vjp(g):
        ge = np.expand_dims(g, axis)
        return ge * qv, ge * wv

    return _emit("expectation", out, (weights, q), vjp)


def min_pool(q):
    """Hard minimum over the last axis with a one-hot arg-min policy.

    Ties go to the lowest action index.  Not differentiable.
    """
    if isinstance(q, Var):
        raise UnsupportedOperationError("min_pool cannot be used on a recorded (differentiable) path")
    qv = np.asarray(q, dtype=float)
    best = np.argmin(qv, axis=-1)
    values = np.take_along_axis(qv, best[..., None], axis=-1)[..., 0]
    policy = np.zeros_like(qv)
    np.put_along_axis(policy, best[..., None], 1.0, axis=-1)
    return values, policy


# -- elementwise and reductions --------------------------------------------

def add(a, b):
    av, bv = value(a), value(b)
    out = av + bv

    def vjp(g):
        return _unbroadcast(g, av.shape), _unbroadcast(g, bv.shape)

    return _emit("add", out, (a, b), vjp)


def multiply(a, b):
    av, bv = value(a), value(b)
    out = av * bv

    def vjp(g):
        return _unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape)

    return _emit("multiply", out, (a, b), vjp)


def expand_last(a):
    """Append a unit axis, e.g. ``[x, y, theta] -> [x, y, theta, 1]``."""
    out = value(a)[..., None]

    def vjp(g):
        return (g[..., 0],)

    return _emit("expand", out, (a,), vjp)


def scale(a, factor: float):
    out = value(a) * factor

    def vjp(g):
        return (g * factor,)

    return _emit("scale", out, (a,), vjp)


def add_n(terms: Sequence):
    """Sum of equally shaped terms (typically scalars)."""
    if not terms:
        return np.zeros(())
    vals = [value(t) for t in terms]
    out = np.sum(vals, axis=0)

    def vjp(g):
        return tuple(g.copy() for _ in terms)

    return _emit("add_n", out, tuple(terms), vjp)


def normalize(x):
    """Rescale a non-negative grid to unit mass."""
    xv = value(x)
    total = xv.sum()
    if not total > 0 or not np.isfinite(total):
        raise NumericalCollapseError("distribution has no mass left to normalize")
    out = xv / total

    def vjp(g):
        return ((g - (g * out).sum()) / total,)

    return _emit("normalize", out, (x,), vjp)


def marginalize_orientation(grid):
    """Sum a ``[x, y, theta]`` grid over orientation."""
    gv = value(grid)
    if gv.ndim != 3:
        raise ConfigurationError(f"expected a 3D state grid, got shape {gv.shape}")
    out = gv.sum(axis=2)

    def vjp(g):
        return (np.broadcast_to(g[:, :, None], gv.shape).copy(),)

    return _emit("marginalize", out, (grid,), vjp)


def inner(a, b):
    """Sum of the elementwise product of two equally shaped grids."""
    av, bv = value(a), value(b)
    if av.shape != bv.shape:
        raise ConfigurationError(f"shape mismatch {av.shape} vs {bv.shape}")
    out = np.asarray((av * bv).sum())

    def vjp(g):
        return g * bv, g * av

    return _emit("inner", out, (a, b), vjp)


def frobenius(a, b):
    """Frobenius inner product of two 2D grids."""
    av, bv = value(a), value(b)
    if av.ndim != 2 or av.shape != bv.shape:
        raise ConfigurationError(f"frobenius needs equal 2D shapes, got {av.shape} and {bv.shape}")
    return inner(a, b)


def take(x, flat_index: Sequence[int]):
    """Entries of ``x`` at the given flat indices, as a vector."""
    xv = value(x)
    idx = np.asarray(flat_index, dtype=np.intp)
    out = xv.ravel()[idx]

    def vjp(g):
        return (np.bincount(idx, weights=g, minlength=xv.size).reshape(xv.shape),)

    return _emit("take", out, (x,), vjp)


def scatter(v, flat_index: Sequence[int], shape: tuple[int, ...]):
    """Place vector entries at flat indices of a zero grid of ``shape``."""
    vv = value(v)
    idx = np.asarray(flat_index, dtype=np.intp)
    size = int(np.prod(shape))
    out = np.bincount(idx, weights=vv, minlength=size).reshape(shape).astype(float)

    def vjp(g):
        return (g.ravel()[idx],)

    return _emit("scatter", out, (v,), vjp)


def is_distribution(grid, tol: float = 1e-9) -> bool:
    gv = value(grid)
    return bool(np.all(gv >= 0) and abs(gv.sum() - 1.0) <= tol)
