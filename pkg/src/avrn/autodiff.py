"""Dense float64 matrices with reverse-mode gradient accumulation.

Every value is a 2-D numpy array (row-major, float64); column vectors are
shaped (d, 1) and scalars (1, 1).  Operations between tracked tensors build
an implicit tape: each result node keeps references to its inputs and a
closure that scatters the incoming gradient back to them.  ``backward`` on a
scalar node zero-initialises the gradients of every node reachable from it
and then accumulates d(root)/d(node) into each ``grad`` buffer.

``finite_diff_check`` is the verification harness used by the test suite and
the ``gradcheck`` CLI command: it compares analytic gradients against central
differences on a sampled subset of parameter coordinates.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .errors import NonFiniteError, ShapeError

__all__ = [
    "Tensor",
    "as_tensor",
    "parameter",
    "constant",
    "matmul",
    "add",
    "sub",
    "mul",
    "smul",
    "scalar_mul",
    "sigmoid",
    "tanh",
    "softmax",
    "softmax_values",
    "concat_rows",
    "concat_cols",
    "col",
    "rows",
    "sum_all",
    "backward",
    "finite_diff_check",
    "GradCheckReport",
]


def _as_matrix(value) -> np.ndarray:
    arr = np.asarray(value, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    elif arr.ndim != 2:
        raise ShapeError(f"expected at most 2 dimensions, got shape {arr.shape}")
    return arr


class Tensor:
    """A matrix value plus its gradient buffer and tape bookkeeping."""

    __slots__ = ("value", "grad", "requires_grad", "op", "_parents", "_backward")

    def __init__(self, value, requires_grad=False, op="leaf", _parents=(), _backward=None):
        self.value = _as_matrix(value)
        if not np.isfinite(self.value).all():
            raise NonFiniteError(f"non-finite entries in result of '{op}'")
        self.grad = np.zeros_like(self.value)
        self.requires_grad = bool(requires_grad)
        self.op = op
        self._parents = tuple(_parents)
        self._backward = _backward

    @property
    def shape(self):
        return self.value.shape

    def zero_grad(self):
        self.grad[...] = 0.0

    def __repr__(self):
        return f"Tensor(op={self.op!r}, shape={self.value.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def parameter(value) -> Tensor:
    return Tensor(value, requires_grad=True, op="parameter")


def constant(value) -> Tensor:
    return Tensor(value, requires_grad=False, op="constant")


def _make(value, op, parents, backward_fn):
    tracked = any(p.requires_grad for p in parents)
    if not tracked:
        return Tensor(value, requires_grad=False, op=op)
    out = Tensor(value, requires_grad=True, op=op, _parents=parents)
    out._backward = lambda: backward_fn(out)
    return out


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.value.shape[1] != b.value.shape[0]:
        raise ShapeError(f"matmul: inner dimensions differ, {a.value.shape} x {b.value.shape}")

    def backward_fn(out):
        if a.requires_grad:
            a.grad += out.grad @ b.value.T
        if b.requires_grad:
            b.grad += a.value.T @ out.grad

    return _make(a.value @ b.value, "matmul", (a, b), backward_fn)


def _check_same_shape(op, a, b):
    if a.value.shape != b.value.shape:
        raise ShapeError(f"{op}: shapes differ, {a.value.shape} vs {b.value.shape}")


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_same_shape("add", a, b)

    def backward_fn(out):
        if a.requires_grad:
            a.grad += out.grad
        if b.requires_grad:
            b.grad += out.grad

    return _make(a.value + b.value, "add", (a, b), backward_fn)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_same_shape("sub", a, b)

    def backward_fn(out):
        if a.requires_grad:
            a.grad += out.grad
        if b.requires_grad:
            b.grad -= out.grad

    return _make(a.value - b.value, "sub", (a, b), backward_fn)


def mul(a, b) -> Tensor:
    """Elementwise product of same-shape matrices."""
    a, b = as_tensor(a), as_tensor(b)
    _check_same_shape("mul", a, b)

    def backward_fn(out):
        if a.requires_grad:
            a.grad += out.grad * b.value
        if b.requires_grad:
            b.grad += out.grad * a.value

    return _make(a.value * b.value, "mul", (a, b), backward_fn)


def smul(a, k: float) -> Tensor:
    """Multiply by a python float (not tracked)."""
    a = as_tensor(a)
    k = float(k)

    def backward_fn(out):
        if a.requires_grad:
            a.grad += k * out.grad

    return _make(k * a.value, "smul", (a,), backward_fn)


def scalar_mul(s, m) -> Tensor:
    """Broadcast a (1, 1) tensor over a matrix: out = s * m."""
    s, m = as_tensor(s), as_tensor(m)
    if s.value.shape != (1, 1):
        raise ShapeError(f"scalar_mul: scalar operand must be (1, 1), got {s.value.shape}")

    def backward_fn(out):
        if s.requires_grad:
            s.grad += np.sum(out.grad * m.value).reshape(1, 1)
        if m.requires_grad:
            m.grad += s.value[0, 0] * out.grad

    return _make(s.value[0, 0] * m.value, "scalar_mul", (s, m), backward_fn)


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    y = expit(a.value)

    def backward_fn(out):
        if a.requires_grad:
            a.grad += out.grad * y * (1.0 - y)

    return _make(y, "sigmoid", (a,), backward_fn)


def tanh(a) -> Tensor:
    a = as_tensor(a)
    y = np.tanh(a.value)

    def backward_fn(out):
        if a.requires_grad:
            a.grad += out.grad * (1.0 - y * y)

    return _make(y, "tanh", (a,), backward_fn)


def softmax_values(x: np.ndarray) -> np.ndarray:
    """Stable softmax of a flat vector (max-subtraction), plain arrays in/out."""
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    e = np.exp(x - np.max(x))
    return e / np.sum(e)


def softmax(a) -> Tensor:
    """Softmax over all entries of a vector-shaped tensor, preserving its shape."""
    a = as_tensor(a)
    if 1 not in a.value.shape:
        raise ShapeError(f"softmax expects a vector shape, got {a.value.shape}")
    y = softmax_values(a.value).reshape(a.value.shape)

    def backward_fn(out):
        if a.requires_grad:
            g = out.grad
            a.grad += y * (g - np.sum(g * y))

    return _make(y, "softmax", (a,), backward_fn)


def concat_rows(parts) -> Tensor:
    """Stack matrices vertically; all operands must share the column count."""
    parts = [as_tensor(p) for p in parts]
    if not parts:
        raise ShapeError("concat_rows: no operands")
    cols = parts[0].value.shape[1]
    for p in parts:
        if p.value.shape[1] != cols:
            raise ShapeError(
                f"concat_rows: column counts differ, {p.value.shape} vs (*, {cols})")
    value = np.concatenate([p.value for p in parts], axis=0)
    offsets = np.cumsum([0] + [p.value.shape[0] for p in parts])

    def backward_fn(out):
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            if p.requires_grad:
                p.grad += out.grad[lo:hi, :]

    return _make(value, "concat_rows", tuple(parts), backward_fn)


def concat_cols(parts) -> Tensor:
    """Stack matrices horizontally; all operands must share the row count."""
    parts = [as_tensor(p) for p in parts]
    if not parts:
        raise ShapeError("concat_cols: no operands")
    rows_ = parts[0].value.shape[0]
    for p in parts:
        if p.value.shape[0] != rows_:
            raise ShapeError(
                f"concat_cols: row counts differ, {p.value.shape} vs ({rows_}, *)")
    value = np.concatenate([p.value for p in parts], axis=1)
    offsets = np.cumsum([0] + [p.value.shape[1] for p in parts])

    def backward_fn(out):
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            if p.requires_grad:
                p.grad += out.grad[:, lo:hi]

    return _make(value, "concat_cols", tuple(parts), backward_fn)


def col(a, j: int) -> Tensor:
    """Extract column ``j`` as a (rows, 1) tensor."""
    a = as_tensor(a)
    n_cols = a.value.shape[1]
    if not 0 <= j < n_cols:
        raise ShapeError(f"col: index {j} out of range for {a.value.shape}")

    def backward_fn(out):
        if a.requires_grad:
            a.grad[:, j : j + 1] += out.grad

    return _make(a.value[:, j : j + 1].copy(), "col", (a,), backward_fn)


def rows(a, lo: int, hi: int) -> Tensor:
    """Extract the half-open row range [lo, hi)."""
    a = as_tensor(a)
    n_rows = a.value.shape[0]
    if not 0 <= lo < hi <= n_rows:
        raise ShapeError(f"rows: range [{lo}, {hi}) out of bounds for {a.value.shape}")

    def backward_fn(out):
        if a.requires_grad:
            a.grad[lo:hi, :] += out.grad

    return _make(a.value[lo:hi, :].copy(), "rows", (a,), backward_fn)


def sum_all(a) -> Tensor:
    """Sum of all entries as a (1, 1) tensor."""
    a = as_tensor(a)

    def backward_fn(out):
        if a.requires_grad:
            a.grad += out.grad[0, 0]

    return _make(np.sum(a.value).reshape(1, 1), "sum_all", (a,), backward_fn)


def backward(root: Tensor):
    """Accumulate d(root)/d(node) into ``grad`` for every tracked node.

    The root must be scalar-valued.  Gradients of all nodes reachable from
    the root are zero-initialised first, so repeated calls do not leak state
    through the graph (parameters outside the graph are not touched).
    """
    if root.value.shape != (1, 1):
        raise ShapeError(f"backward root must be scalar-shaped (1, 1), got {root.value.shape}")
    topo = []
    visited = set()
    stack = [(root, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in visited:
                stack.append((p, False))
    for node in topo:
        node.grad = np.zeros_like(node.value)
    root.grad[...] = 1.0
    for node in reversed(topo):
        if node._backward is not None:
            node._backward()


# ---------------------------------------------------------------------------
# Finite-difference verification harness
# ---------------------------------------------------------------------------


def _named_tensors(params):
    if hasattr(params, "named_parameters"):
        return list(params.named_parameters())
    if isinstance(params, dict):
        return list(params.items())
    return list(params)


@dataclass
class CoordCheck:
    name: str
    index: int
    analytic: float
    numeric: float
    rel_error: float
    ok: bool


@dataclass
class GradCheckReport:
    checks: list = field(default_factory=list)
    tol: float = 1e-4
    h: float = 1e-5

    @property
    def passed(self) -> bool:
        return all(c.ok for c in self.checks)

    @property
    def max_rel_error(self) -> float:
        return max((c.rel_error for c in self.checks), default=0.0)

    def group_max(self) -> dict:
        """Max relative error keyed by parameter name."""
        out: dict = {}
        for c in self.checks:
            out[c.name] = max(out.get(c.name, 0.0), c.rel_error)
        return out

    def failures(self):
        return [c for c in self.checks if not c.ok]


def finite_diff_check(
    f,
    params,
    h: float = 1e-5,
    tol: float = 1e-4,
    rng: np.random.Generator | None = None,
    n_coords: int = 100,
    rel_floor: float = 1e-3,
) -> GradCheckReport:
    """Compare analytic gradients of ``f`` against central differences.

    ``f`` is a zero-argument callable returning a scalar Tensor built from
    ``params`` (an object with ``named_parameters()``, a dict, or an iterable
    of (name, Tensor) pairs).  ``n_coords`` coordinates are sampled uniformly
    over the concatenated parameter vector; passing values larger than the
    parameter count checks every coordinate.  The relative error denominator
    is floored at ``rel_floor`` so cancellation noise on near-zero gradients
    does not register as a mismatch.
    """
    if h <= 0:
        raise ValueError(f"h must be positive, got {h}")
    named = _named_tensors(params)
    for _, t in named:
        t.zero_grad()
    out = f()
    backward(out)
    analytic = {name: t.grad.copy() for name, t in named}

    sizes = [t.value.size for _, t in named]
    total = int(np.sum(sizes))
    if n_coords >= total:
        chosen = np.arange(total)
    else:
        if rng is None:
            rng = np.random.default_rng(0)
        chosen = rng.choice(total, size=n_coords, replace=False)
    offsets = np.cumsum([0] + sizes)

    report = GradCheckReport(tol=tol, h=h)
    for flat_index in sorted(int(i) for i in chosen):
        slot = int(np.searchsorted(offsets, flat_index, side="right") - 1)
        name, tensor = named[slot]
        local = flat_index - offsets[slot]
        view = tensor.value.reshape(-1)
        orig = view[local]
        view[local] = orig + h
        f_plus = float(f().value[0, 0])
        view[local] = orig - h
        f_minus = float(f().value[0, 0])
        view[local] = orig
        numeric = (f_plus - f_minus) / (2.0 * h)
        ana = float(analytic[name].reshape(-1)[local])
        rel = abs(ana - numeric) / max(abs(ana), abs(numeric), rel_floor)
        report.checks.append(
            CoordCheck(name, int(local), ana, numeric, rel, rel <= tol))
    return report
