"""Minimal reverse-mode automatic differentiation over numpy arrays.

A :class:`Tensor` wraps a float64 array.  Operations on tensors that require
gradients record a closure computing the vector-Jacobian product for each
parent; :meth:`Tensor.backward` replays them in reverse topological order.
"""

from __future__ import annotations

import contextlib
import json
from collections import OrderedDict
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

DTYPE = np.float64

_GRAD_ENABLED = True


class NonFiniteError(ValueError, FloatingPointError):
    """A computation produced or received NaN or infinity."""


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_vjp", "name")

    __array_priority__ = 100.0

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=DTYPE)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._vjp: Callable | None = None
        self.name = name

    # -- basic properties -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def T(self) -> Tensor:
        return transpose(self)

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> Tensor:
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    # -- autodiff ---------------------------------------------------------
    def backward(self, grad=None) -> None:
        """Accumulate d(self)/d(leaf) into ``.grad`` of every leaf requiring grad."""
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without a seed needs a scalar output")
            grad = np.ones_like(self.data)
        order = _topological_order(self)
        grads: dict[int, np.ndarray] = {id(self): np.asarray(grad, dtype=DTYPE)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._vjp is None:
                # leaf
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._vjp(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg

    # -- operator sugar ---------------------------------------------------
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
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def swapaxes(self, a: int, b: int):
        return swapaxes(self, a, b)


def _topological_order(root: Tensor) -> list[Tensor]:
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
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def make_op(data: np.ndarray, parents: Sequence[Tensor], vjp: Callable) -> Tensor:
    """Wrap ``data`` as the output of an op; ``vjp(g)`` returns one grad per parent."""
    out = Tensor(data)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._vjp = vjp
    return out


def unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``g`` down to ``shape`` after numpy broadcasting."""
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


# -- elementwise ------------------------------------------------------------
def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return make_op(
        a.data + b.data,
        (a, b),
        lambda g: (unbroadcast(g, a.shape), unbroadcast(g, b.shape)),
    )


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return make_op(
        a.data - b.data,
        (a, b),
        lambda g: (unbroadcast(g, a.shape), unbroadcast(-g, b.shape)),
    )


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return make_op(
        a.data * b.data,
        (a, b),
        lambda g: (unbroadcast(g * b.data, a.shape), unbroadcast(g * a.data, b.shape)),
    )


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    q = a.data / b.data
    return make_op(
        q,
        (a, b),
        lambda g: (
            unbroadcast(g / b.data, a.shape),
            unbroadcast(-g * q / b.data, b.shape),
        ),
    )


def square(x) -> Tensor:
    x = as_tensor(x)
    return make_op(x.data * x.data, (x,), lambda g: (2.0 * g * x.data,))


def sqrt(x) -> Tensor:
    x = as_tensor(x)
    r = np.sqrt(x.data)
    return make_op(r, (x,), lambda g: (0.5 * g / r,))


def relu(x) -> Tensor:
    x = as_tensor(x)
    on = x.data > 0
    return make_op(np.where(on, x.data, 0.0), (x,), lambda g: (g * on,))


def clamp_min(x, lo: float) -> Tensor:
    """max(lo, x); the gradient is routed to x only where x > lo."""
    x = as_tensor(x)
    on = x.data > lo
    return make_op(np.where(on, x.data, lo), (x,), lambda g: (g * on,))


# -- reductions and shape ---------------------------------------------------
def sum_(x, axis=None, keepdims=False) -> Tensor:
    x = as_tensor(x)
    shape = x.shape

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return make_op(x.data.sum(axis=axis, keepdims=keepdims), (x,), vjp)


def mean(x, axis=None, keepdims=False) -> Tensor:
    x = as_tensor(x)
    if axis is None:
        n = x.data.size
    else:
        axes = (axis,) if np.isscalar(axis) else tuple(axis)
        n = int(np.prod([x.shape[a] for a in axes]))
    return sum_(x, axis, keepdims) * (1.0 / n)


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    old = x.shape
    return make_op(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),))


def swapaxes(x, a: int, b: int) -> Tensor:
    x = as_tensor(x)
    return make_op(np.swapaxes(x.data, a, b), (x,), lambda g: (np.swapaxes(g, a, b),))


def transpose(x) -> Tensor:
    """Swap the last two axes."""
    return swapaxes(x, -1, -2)


def getitem(x, idx) -> Tensor:
    x = as_tensor(x)

    basic = _is_basic_index(idx)

    def vjp(g):
        full = np.zeros_like(x.data)
        if basic:
            full[idx] = g
        else:
            np.add.at(full, idx, g)
        return (full,)

    return make_op(x.data[idx], (x,), vjp)


def _is_basic_index(idx) -> bool:
    items = idx if isinstance(idx, tuple) else (idx,)
    return all(isinstance(i, (int, np.integer, slice)) or i is Ellipsis or i is None for i in items)


def concat(xs: Sequence, axis: int = 0) -> Tensor:
    xs = [as_tensor(x) for x in xs]
    sizes = [x.shape[axis] for x in xs]
    cuts = np.cumsum(sizes)[:-1]
    return make_op(
        np.concatenate([x.data for x in xs], axis=axis),
        xs,
        lambda g: tuple(np.split(g, cuts, axis=axis)),
    )


def stack(xs: Sequence, axis: int = 0) -> Tensor:
    xs = [as_tensor(x) for x in xs]
    return make_op(
        np.stack([x.data for x in xs], axis=axis),
        xs,
        lambda g: tuple(np.moveaxis(g, axis, 0)),
    )


# -- linear algebra ---------------------------------------------------------
def matmul(a, b) -> Tensor:
    """Batched matrix product with numpy broadcasting over leading axes."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError(f"matmul needs >=2-D operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ValueError(f"shape mismatch in matmul: {a.shape} @ {b.shape}")
    if a.ndim == 2 and b.ndim > 2:
        return _shared_left_matmul(a, b)

    def vjp(g):
        ga = gb = None
        if a.requires_grad:
            ga = unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape)
        if b.requires_grad:
            gb = unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape)
        return ga, gb

    return make_op(a.data @ b.data, (a, b), vjp)


def _shared_left_matmul(a: Tensor, b: Tensor) -> Tensor:
    """A (P, Q) matrix applied to a stack (..., Q, M) as one GEMM over the folded batch."""
    lead, (q, m) = b.shape[:-2], b.shape[-2:]
    p = a.shape[0]

    def fold(t, rows):
        # (..., rows, M) -> (rows, prod(...) * M)
        return np.moveaxis(t.reshape((-1, rows, m)), 1, 0).reshape(rows, -1)

    def unfold(t, rows):
        return np.moveaxis(t.reshape(rows, -1, m), 0, 1).reshape(lead + (rows, m))

    bf = fold(b.data, q)

    def vjp(g):
        gf = fold(g, p)
        ga = gf @ bf.T if a.requires_grad else None
        gb = unfold(a.data.T @ gf, q) if b.requires_grad else None
        return ga, gb

    return make_op(unfold(a.data @ bf, p), (a, b), vjp)


def linear(x, W, b=None) -> Tensor:
    """W·x + b with x of shape (..., D, M); b is broadcast over the M columns."""
    x, W = as_tensor(x), as_tensor(W)
    if W.ndim != 2 or x.ndim < 2 or W.shape[1] != x.shape[-2]:
        raise ValueError(f"shape mismatch in linear: W{W.shape} · x{x.shape}")
    out = matmul(W, x)
    if b is None:
        return out
    b = as_tensor(b)
    if b.shape != (W.shape[0],):
        raise ValueError(f"bias shape {b.shape} does not match W{W.shape}")
    return out + reshape(b, (W.shape[0], 1))


def column_softmax(x, mask=None, axis: int = -2) -> Tensor:
    """Softmax over ``axis`` (the row index, so each column sums to one).

    Entries where ``mask`` is zero are excluded from the support rather than
    given zero logits.
    """
    x = as_tensor(x)
    logits = x.data
    if mask is not None:
        m = np.asarray(mask, dtype=bool)
        if not np.all(m.any(axis=axis)):
            raise ValueError("isolated joint: a softmax column has no unmasked entry")
        logits = np.where(m, logits, -np.inf)
    shifted = logits - logits.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        return (s * (g - (g * s).sum(axis=axis, keepdims=True)),)

    return make_op(s, (x,), vjp)


def cross(a, b) -> Tensor:
    """Cross product along the last axis (length 3)."""
    a, b = as_tensor(a), as_tensor(b)

    def vjp(g):
        # d(a×b)·g = a·(b×g) = b·(g×a)
        return np.cross(b.data, g), np.cross(g, a.data)

    return make_op(np.cross(a.data, b.data), (a, b), vjp)


def normalize(v, axis: int = -1) -> Tensor:
    v = as_tensor(v)
    n = np.sqrt((v.data * v.data).sum(axis=axis, keepdims=True))
    u = v.data / n

    def vjp(g):
        return ((g - u * (g * u).sum(axis=axis, keepdims=True)) / n,)

    return make_op(u, (v,), vjp)


# -- parameters and optimizer -----------------------------------------------
class ParamStore:
    """Ordered collection of named trainable tensors."""

    def __init__(self):
        self._params: OrderedDict[str, Tensor] = OrderedDict()

    def add(self, name: str, value) -> Tensor:
        if name in self._params:
            raise KeyError(f"duplicate parameter name {name!r}")
        t = Tensor(np.array(value, dtype=DTYPE), requires_grad=True, name=name)
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self):
        return iter(self._params.items())

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return list(self._params)

    def tensors(self) -> list[Tensor]:
        return list(self._params.values())

    def zero_grad(self) -> None:
        for t in self._params.values():
            t.grad = None

    def freeze(self) -> None:
        for t in self._params.values():
            t.requires_grad = False

    def n_values(self) -> int:
        return sum(t.data.size for t in self._params.values())

    def state(self) -> dict[str, np.ndarray]:
        return {k: t.data for k, t in self._params.items()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        missing = set(self._params) - set(state)
        if missing:
            raise KeyError(f"checkpoint is missing parameters: {sorted(missing)}")
        for k, t in self._params.items():
            arr = np.asarray(state[k], dtype=DTYPE)
            if arr.shape != t.shape:
                raise ValueError(f"parameter {k!r}: shape {arr.shape} != {t.shape}")
            t.data = arr.copy()

    def merge(self, other: ParamStore) -> None:
        for k, t in other:
            if k in self._params:
                raise KeyError(f"duplicate parameter name {k!r}")
            self._params[k] = t


@dataclass
class SGDConfig:
    learning_rate: float = 0.001
    momentum: float = 0.9
    seed: int = 0

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must lie in [0, 1)")


class SGD:
    """SGD with heavy-ball momentum: v <- mu*v + g; p <- p - lr*v."""

    def __init__(self, store: ParamStore, cfg: SGDConfig):
        self.store = store
        self.cfg = cfg
        self.velocity: dict[str, np.ndarray] = {
            k: np.zeros_like(t.data) for k, t in store
        }

    def step(self) -> None:
        sgd_step(self.store, self.cfg, self.velocity)


def sgd_step(store: ParamStore, cfg: SGDConfig, velocity: dict[str, np.ndarray] | None = None) -> None:
    """One in-place update of every parameter, then zero the gradients.

    ``velocity`` holds momentum buffers keyed by parameter name and is updated
    in place; without it the step is plain (momentum-free) SGD.
    """
    for name, t in store:
        if t.grad is None:
            continue
        if not np.all(np.isfinite(t.grad)):
            raise FloatingPointError(f"non-finite gradient in parameter {name!r}")
    for name, t in store:
        if t.grad is None:
            continue
        if velocity is not None:
            v = velocity.setdefault(name, np.zeros_like(t.data))
            v *= cfg.momentum
            v += t.grad
            t.data = t.data - cfg.learning_rate * v
        else:
            t.data = t.data - cfg.learning_rate * t.grad
    store.zero_grad()


# -- checkpoints --------------------------------------------------------------
CHECKPOINT_VERSION = 1


def _encode_array(a: np.ndarray) -> dict:
    flat = np.asarray(a, dtype=DTYPE).ravel()
    return {"shape": list(a.shape), "data": [float("%.17g" % v) for v in flat]}


def _decode_array(d: dict) -> np.ndarray:
    return np.array(d["data"], dtype=DTYPE).reshape(d["shape"])


def checkpoint_document(arrays: dict[str, np.ndarray], extra: dict | None = None) -> dict:
    doc = {"version": CHECKPOINT_VERSION, "params": {k: _encode_array(v) for k, v in arrays.items()}}
    if extra:
        doc.update(extra)
    return doc


def _write_json(fh, obj) -> None:
    """json.dump with a fast path for ndarrays (written as {shape, data})."""
    if isinstance(obj, np.ndarray):
        flat = np.asarray(obj, dtype=DTYPE).ravel()
        if not np.all(np.isfinite(flat)):
            raise NonFiniteError("refusing to write a non-finite array")
        fh.write('{"shape": %s, "data": [' % json.dumps(list(obj.shape)))
        fh.write(", ".join(["%.17g" % v for v in flat.tolist()]))
        fh.write("]}")
    elif isinstance(obj, dict):
        fh.write("{")
        for i, (k, v) in enumerate(obj.items()):
            fh.write((", " if i else "") + json.dumps(str(k)) + ": ")
            _write_json(fh, v)
        fh.write("}")
    else:
        fh.write(json.dumps(obj, allow_nan=False))


def save_checkpoint(path, arrays: dict[str, np.ndarray], extra: dict | None = None) -> None:
    """Write arrays as a versioned JSON document; floats round-trip exactly.

    ndarrays anywhere inside ``extra`` are stored in the same {shape, data}
    form as the parameters.
    """
    doc = {"version": CHECKPOINT_VERSION, "params": dict(arrays)}
    if extra:
        doc.update(extra)
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "w") as fh:
        _write_json(fh, doc)
    tmp.replace(path)


def _parse_int(text: str):
    # "%.17g" writes negative zero as "-0"; keep its sign
    return -0.0 if text == "-0" else int(text)


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    """Return (params, whole document)."""
    with open(path) as fh:
        try:
            doc = json.load(fh, parse_int=_parse_int)
        except json.JSONDecodeError as exc:
            raise ValueError(f"corrupt checkpoint {path}: {exc}") from None
    if not isinstance(doc, dict) or doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {doc.get('version')!r}")
    params = {k: _decode_array(v) for k, v in doc["params"].items()}
    return params, doc


def decode_arrays(section: dict) -> dict[str, np.ndarray]:
    return {k: _decode_array(v) for k, v in section.items()}


def encode_arrays(arrays: dict[str, np.ndarray]) -> dict:
    return {k: _encode_array(v) for k, v in arrays.items()}


# -- gradient checking --------------------------------------------------------
@dataclass
class GradCheckReport:
    errors: dict[str, float]
    tolerance: float

    @property
    def max_error(self) -> float:
        return max(self.errors.values()) if self.errors else 0.0

    @property
    def passed(self) -> bool:
        return self.max_error < self.tolerance


def finite_difference_check(
    fn: Callable[[], Tensor],
    params: Iterable[Tensor] | ParamStore,
    step: float = 1e-6,
    tolerance: float = 1e-5,
    max_entries: int | None = None,
    rng: np.random.Generator | None = None,
    floor: float = 1e-4,
) -> GradCheckReport:
    """Compare analytic gradients of a scalar ``fn()`` with central differences.

    The error for each parameter is ``||g_analytic - g_numeric|| /
    max(||g_analytic||, ||g_numeric||, floor)`` over the checked entries; the
    floor keeps round-off on an exactly zero gradient from counting.  With
    ``max_entries`` only a random subset of entries is perturbed.
    """
    if isinstance(params, ParamStore):
        named = list(params)
    else:
        named = [(p.name or f"param{i}", p) for i, p in enumerate(params)]
    for _, p in named:
        p.grad = None
    out = fn()
    if out.data.size != 1:
        raise ValueError("finite_difference_check needs a scalar function")
    out.backward()
    analytic = {n: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data)) for n, p in named}

    errors: dict[str, float] = {}
    for name, p in named:
        p.data = np.ascontiguousarray(p.data)
        flat = p.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            r = rng if rng is not None else np.random.default_rng(0)
            idx = np.sort(r.choice(flat.size, size=max_entries, replace=False))
        numeric = np.empty(idx.size)
        with no_grad():
            for j, k in enumerate(idx):
                orig = flat[k]
                flat[k] = orig + step
                fp = fn().item()
                flat[k] = orig - step
                fm = fn().item()
                flat[k] = orig
                numeric[j] = (fp - fm) / (2.0 * step)
        a = analytic[name].reshape(-1)[idx]
        scale = max(np.linalg.norm(a), np.linalg.norm(numeric), floor)
        errors[name] = float(np.linalg.norm(a - numeric) / scale)
    for _, p in named:
        p.grad = None
    return GradCheckReport(errors=errors, tolerance=tolerance)

