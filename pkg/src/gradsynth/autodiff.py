"""Reverse-mode automatic differentiation over scalars and sample buffers.

A :class:`Tape` records elementary operations as they execute.  Scalar
parameters are registered by name and retrieved from the gradient map
after :meth:`Tape.backward`.  Buffer-valued operations (windowed frames,
FFT magnitudes, convolution, cumulative sums) record a single node with
an adjoint closure instead of one node per sample, so a one-second
16 kHz buffer costs one tape entry per operation, not 16000.

Values are python floats or float64 ndarrays; gradients accumulate in
float64 throughout.  Constants (no tape attached) flow through every
operation without recording anything, which doubles as the fast
inference path.
"""

from __future__ import annotations

from typing import Callable, Iterable, Mapping, Sequence, Union

import numpy as np

__all__ = [
    "AutodiffError",
    "DiffBuffer",
    "DiffScalar",
    "DuplicateParameterError",
    "NumericDomainError",
    "Tape",
    "TapeError",
    "absolute",
    "add",
    "buffer",
    "clamp",
    "const_matmul",
    "convolve_same",
    "cos",
    "cumsum",
    "div",
    "exp",
    "finite_difference_check",
    "gather",
    "ln",
    "maximum",
    "minimum",
    "mod",
    "mul",
    "neg",
    "power",
    "rfft_magnitude",
    "sigmoid",
    "sign_surrogate",
    "sin",
    "sqrt",
    "sub",
    "sum_axis",
    "bsum",
    "tanh",
    "transpose",
]


class AutodiffError(Exception):
    """Base class for autodiff failures."""


class TapeError(AutodiffError):
    """Value is not recorded on the expected tape."""


class DuplicateParameterError(AutodiffError):
    """A parameter name was registered twice on one tape."""


class NumericDomainError(AutodiffError):
    """An elementary operation was evaluated outside its domain."""

    def __init__(self, op: str, detail: str):
        super().__init__(f"{op}: {detail}")
        self.op = op


class _Node:
    """One recorded operation: parent links plus adjoint closures."""

    __slots__ = ("index", "parents", "vjps")

    def __init__(self, index: int, parents: tuple, vjps: tuple):
        self.index = index
        self.parents = parents
        self.vjps = vjps


class Tape:
    """Recording context for one differentiable computation.

    Append order is a topological order by construction (an operation's
    parents are recorded before it), so backward is a single reverse
    sweep that visits each node at most once.
    """

    def __init__(self):
        self._nodes: list[_Node] = []
        self._params: dict[str, DiffScalar] = {}

    def __len__(self) -> int:
        return len(self._nodes)

    def parameter(self, value: float, name: str) -> "DiffScalar":
        """Register a named trainable scalar."""
        value = float(value)
        if not np.isfinite(value):
            raise NumericDomainError("parameter", f"{name!r} initialized to {value}")
        if name in self._params:
            raise DuplicateParameterError(f"parameter {name!r} already registered")
        out = DiffScalar(value, self, self._record((), ()))
        self._params[name] = out
        return out

    @property
    def parameter_names(self) -> tuple:
        return tuple(self._params)

    def _record(self, parents: tuple, vjps: tuple) -> _Node:
        node = _Node(len(self._nodes), parents, vjps)
        self._nodes.append(node)
        return node

    def backward(self, loss: "DiffScalar") -> dict:
        """Return d(loss)/d(p) for every registered parameter.

        Repeated calls recompute from scratch; nothing accumulates
        across calls.
        """
        if not isinstance(loss, DiffScalar):
            raise TapeError("backward expects a scalar loss")
        if loss.node is None or loss.tape is not self:
            raise TapeError("loss is not recorded on this tape")
        adjoints: dict[int, Union[float, np.ndarray]] = {loss.node.index: 1.0}
        for node in reversed(self._nodes[: loss.node.index + 1]):
            adj = adjoints.get(node.index)
            if adj is None:
                continue
            for parent, vjp in zip(node.parents, node.vjps):
                contrib = vjp(adj)
                prev = adjoints.get(parent.index)
                adjoints[parent.index] = contrib if prev is None else prev + contrib
        return {
            name: float(adjoints.get(p.node.index, 0.0))
            for name, p in self._params.items()
        }


class DiffScalar:
    """A real value participating in gradient computation.

    ``DiffScalar(x)`` with no tape is a constant and contributes zero
    gradient everywhere.
    """

    __slots__ = ("value", "tape", "node")

    def __init__(self, value: float, tape: Tape = None, node: _Node = None):
        self.value = float(value)
        self.tape = tape
        self.node = node

    def __repr__(self):
        tag = "const" if self.node is None else f"node {self.node.index}"
        return f"DiffScalar({self.value!r}, {tag})"

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
        return neg(self)

    def __pow__(self, other):
        return power(self, other)

    def __abs__(self):
        return absolute(self)


class DiffBuffer:
    """A float64 array (1-D or 2-D) tracked as a single tape node."""

    __slots__ = ("values", "tape", "node")

    def __init__(self, values: np.ndarray, tape: Tape = None, node: _Node = None):
        values = np.asarray(values, dtype=np.float64)
        self.values = values
        self.tape = tape
        self.node = node

    @property
    def shape(self):
        return self.values.shape

    def __len__(self):
        return self.values.shape[0]

    def __repr__(self):
        tag = "const" if self.node is None else f"node {self.node.index}"
        return f"DiffBuffer(shape={self.values.shape}, {tag})"

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
        return neg(self)


def buffer(values, tape: Tape = None) -> DiffBuffer:
    """Wrap an array as a constant buffer."""
    del tape  # constants carry no tape; kept for call-site symmetry
    return DiffBuffer(np.asarray(values, dtype=np.float64))


Operand = Union[DiffScalar, DiffBuffer, float, int, np.ndarray]


def _unwrap(x: Operand):
    """Return (raw value, node, tape) for any operand."""
    if isinstance(x, DiffScalar):
        return x.value, x.node, x.tape
    if isinstance(x, DiffBuffer):
        return x.values, x.node, x.tape
    if isinstance(x, np.ndarray):
        return np.asarray(x, dtype=np.float64), None, None
    return float(x), None, None


def _join_tape(ta: Tape, tb: Tape) -> Tape:
    if ta is not None and tb is not None and ta is not tb:
        raise TapeError("operands recorded on different tapes")
    return ta if ta is not None else tb


def _wrap(value, tape: Tape, node: _Node):
    if isinstance(value, np.ndarray) and value.ndim > 0:
        return DiffBuffer(value, tape, node)
    return DiffScalar(float(value), tape, node)


def _reduce_to(grad, shape) -> Union[float, np.ndarray]:
    """Sum a broadcasted adjoint back down to an operand's shape."""
    if shape == ():
        return float(np.sum(grad))
    grad = np.asarray(grad, dtype=np.float64)
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _shape_of(value):
    return value.shape if isinstance(value, np.ndarray) else ()


def _record_op(tape: Tape, out_value, parent_specs: Iterable[tuple]):
    """parent_specs: (node, vjp) pairs for tracked operands only."""
    specs = [(n, v) for n, v in parent_specs if n is not None]
    if tape is None or not specs:
        return _wrap(out_value, None, None)
    parents = tuple(n for n, _ in specs)
    vjps = tuple(v for _, v in specs)
    return _wrap(out_value, tape, tape._record(parents, vjps))


def _binary(a: Operand, b: Operand, forward, partial_a, partial_b):
    va, na, ta = _unwrap(a)
    vb, nb, tb = _unwrap(b)
    tape = _join_tape(ta, tb)
    out = forward(va, vb)
    sa, sb = _shape_of(va), _shape_of(vb)
    specs = []
    if na is not None:
        pa = partial_a(va, vb)
        specs.append((na, lambda adj, p=pa, s=sa: _reduce_to(adj * p, s)))
    if nb is not None:
        pb = partial_b(va, vb)
        specs.append((nb, lambda adj, p=pb, s=sb: _reduce_to(adj * p, s)))
    return _record_op(tape, out, specs)


def _unary(x: Operand, forward, partial):
    v, n, tape = _unwrap(x)
    out = forward(v)
    if n is None:
        return _wrap(out, None, None)
    p = partial(v)
    s = _shape_of(v)
    return _record_op(tape, out, [(n, lambda adj: _reduce_to(adj * p, s))])


# -- elementary arithmetic ------------------------------------------------


def add(a, b):
    return _binary(a, b, lambda x, y: x + y, lambda x, y: 1.0, lambda x, y: 1.0)


def sub(a, b):
    return _binary(a, b, lambda x, y: x - y, lambda x, y: 1.0, lambda x, y: -1.0)


def mul(a, b):
    return _binary(a, b, lambda x, y: x * y, lambda x, y: y, lambda x, y: x)


def div(a, b):
    vb = _unwrap(b)[0]
    if np.any(vb == 0.0):
        raise NumericDomainError("div", "division by zero")
    return _binary(
        a, b,
        lambda x, y: x / y,
        lambda x, y: 1.0 / y,
        lambda x, y: -x / (y * y),
    )


def neg(x):
    return _unary(x, lambda v: -v, lambda v: -1.0)


def absolute(x):
    # subgradient 0 at the kink
    return _unary(x, np.abs, np.sign)


def sin(x):
    return _unary(x, np.sin, np.cos)


def cos(x):
    return _unary(x, np.cos, lambda v: -np.sin(v))


def tanh(x):
    return _unary(x, np.tanh, lambda v: 1.0 - np.tanh(v) ** 2)


def exp(x):
    return _unary(x, np.exp, np.exp)


def ln(x):
    v = _unwrap(x)[0]
    if np.any(v <= 0.0):
        raise NumericDomainError("ln", "input must be positive")
    return _unary(x, np.log, lambda v: 1.0 / v)


def sqrt(x):
    v = _unwrap(x)[0]
    if np.any(v < 0.0):
        raise NumericDomainError("sqrt", "input must be nonnegative")
    # subgradient 0 at exactly 0 (avoids inf on silent buffers)
    return _unary(
        x,
        np.sqrt,
        lambda v: np.where(v > 0.0, 0.5 / np.sqrt(np.where(v > 0.0, v, 1.0)), 0.0),
    )


def sigmoid(x):
    def fwd(v):
        v = np.asarray(v, dtype=np.float64)
        # exp of a nonpositive argument only, so large |v| cannot overflow
        z = np.exp(-np.abs(v))
        out = np.where(v >= 0, 1.0 / (1.0 + z), z / (1.0 + z))
        return out if out.ndim else float(out)

    return _unary(x, fwd, lambda v: fwd(v) * (1.0 - fwd(v)))


def power(x, p):
    """x**p.  A tracked exponent requires a positive base."""
    vp, np_, tp = _unwrap(p)
    if np_ is not None:
        return exp(mul(p, ln(x)))
    vx = _unwrap(x)[0]
    if float(vp) != int(vp) and np.any(vx < 0.0):
        raise NumericDomainError("power", "fractional power of negative base")
    c = float(vp)
    return _unary(x, lambda v: v ** c, lambda v: c * v ** (c - 1.0) if c != 0.0 else 0.0)


def minimum(a, b):
    # ties take the left branch
    return _binary(
        a, b,
        np.minimum,
        lambda x, y: (x <= y) * 1.0,
        lambda x, y: (x > y) * 1.0,
    )


def maximum(a, b):
    return _binary(
        a, b,
        np.maximum,
        lambda x, y: (x >= y) * 1.0,
        lambda x, y: (x < y) * 1.0,
    )


def clamp(x, lo: float, hi: float):
    """Clip to [lo, hi]; derivative 1 inside the band (ends inclusive)."""
    lo, hi = float(lo), float(hi)
    return _unary(
        x,
        lambda v: np.clip(v, lo, hi),
        lambda v: ((v >= lo) & (v <= hi)) * 1.0,
    )


def mod(a, b):
    """Floor remainder.  d/da is 1 away from wraps and 0 at a wrap sample."""
    vb = _unwrap(b)[0]
    if np.any(vb == 0.0):
        raise NumericDomainError("mod", "zero modulus")
    return _binary(
        a, b,
        np.mod,
        lambda x, y: (np.mod(x, y) != 0.0) * 1.0,
        lambda x, y: -np.floor(x / y),
    )


def sign_surrogate(x, steepness: float = 100.0):
    """Forward sign(x); backward the tanh(steepness*x) slope.

    Used for square waveforms: the true derivative is zero almost
    everywhere, which would freeze every parameter feeding the sign.
    """
    s = float(steepness)
    return _unary(x, np.sign, lambda v: s * (1.0 - np.tanh(s * v) ** 2))


# -- buffer reductions and reshapes ---------------------------------------


def bsum(x) -> DiffScalar:
    """Sum all entries into a scalar."""
    v, n, tape = _unwrap(x)
    out = float(np.sum(v))
    if n is None:
        return DiffScalar(out)
    shape = v.shape
    return _record_op(tape, out, [(n, lambda adj: np.full(shape, adj, dtype=np.float64))])


def cumsum(x, axis: int = -1) -> DiffBuffer:
    """Running sum along an axis; adjoint is the reversed running sum."""
    v, n, tape = _unwrap(x)
    out = np.cumsum(v, axis=axis)
    if n is None:
        return DiffBuffer(out)

    def vjp(adj, axis=axis):
        adj = np.asarray(adj, dtype=np.float64)
        return np.flip(np.cumsum(np.flip(adj, axis=axis), axis=axis), axis=axis)

    return _record_op(tape, out, [(n, vjp)])


def sum_axis(x, axis: int, keepdims: bool = True) -> DiffBuffer:
    """Sum along one axis; the adjoint broadcasts back over that axis."""
    v, n, tape = _unwrap(x)
    out = np.sum(v, axis=axis, keepdims=keepdims)
    if n is None:
        return DiffBuffer(out)
    shape = v.shape

    def vjp(adj, axis=axis, keepdims=keepdims):
        adj = np.asarray(adj, dtype=np.float64)
        if not keepdims:
            adj = np.expand_dims(adj, axis)
        return np.broadcast_to(adj, shape)

    return _record_op(tape, out, [(n, vjp)])


def gather(x, index: np.ndarray) -> DiffBuffer:
    """Fancy-index a 1-D buffer; the adjoint scatter-adds back."""
    v, n, tape = _unwrap(x)
    index = np.asarray(index)
    out = v[index]
    if n is None:
        return DiffBuffer(out)
    size = v.shape[0]
    flat_index = index.ravel()

    def vjp(adj):
        contrib = np.bincount(
            flat_index, weights=np.asarray(adj, dtype=np.float64).ravel(),
            minlength=size,
        )
        return contrib

    return _record_op(tape, out, [(n, vjp)])


def transpose(x) -> DiffBuffer:
    v, n, tape = _unwrap(x)
    out = v.T
    if n is None:
        return DiffBuffer(out)
    return _record_op(tape, out, [(n, lambda adj: np.asarray(adj).T)])


def const_matmul(matrix: np.ndarray, x) -> DiffBuffer:
    """matrix @ x with a constant left factor."""
    matrix = np.asarray(matrix, dtype=np.float64)
    v, n, tape = _unwrap(x)
    out = matrix @ v
    if n is None:
        return DiffBuffer(out)
    return _record_op(tape, out, [(n, lambda adj: matrix.T @ np.asarray(adj))])


def rfft_magnitude(frames) -> DiffBuffer:
    """Magnitude of the real FFT of each row of a 2-D frame matrix.

    The adjoint routes d(loss)/d|X| back through the FFT analytically:
    with u = adj * X/|X| on the kept bins, d(loss)/dx = Re(N * ifft(u))
    restricted to those bins (zero where |X| = 0).
    """
    v, n, tape = _unwrap(frames)
    if v.ndim != 2:
        raise NumericDomainError("rfft_magnitude", "expected a 2-D frame matrix")
    size = v.shape[1]
    spectrum = np.fft.rfft(v, axis=1)
    mag = np.abs(spectrum)
    if n is None:
        return DiffBuffer(mag)

    def vjp(adj):
        adj = np.asarray(adj, dtype=np.float64)
        safe = np.where(mag > 0.0, mag, 1.0)
        u = np.where(mag > 0.0, adj / safe, 0.0) * spectrum
        full = np.zeros((v.shape[0], size), dtype=np.complex128)
        full[:, : u.shape[1]] = u
        return np.real(np.fft.ifft(full, axis=1)) * size

    return _record_op(tape, mag, [(n, vjp)])


def convolve_same(x, kernel) -> DiffBuffer:
    """'Same' zero-padded convolution of a 1-D buffer with a short kernel.

    Differentiable with respect to both the signal and the kernel taps.
    """
    from scipy.signal import fftconvolve

    vx, nx, tx = _unwrap(x)
    vk, nk, tk = _unwrap(kernel)
    tape = _join_tape(tx, tk)
    if vx.ndim != 1 or vk.ndim != 1:
        raise NumericDomainError("convolve_same", "expected 1-D operands")
    if vk.shape[0] > vx.shape[0]:
        raise NumericDomainError("convolve_same", "kernel longer than signal")
    out = fftconvolve(vx, vk, mode="same")
    specs = []
    if nx is not None:
        specs.append((nx, lambda adj: fftconvolve(np.asarray(adj), vk[::-1], mode="same")))
    if nk is not None:
        m = vk.shape[0]
        lead = vx.shape[0] - 1 - (m - 1) // 2

        def vjp_kernel(adj, lead=lead, m=m):
            full = fftconvolve(np.asarray(adj), vx[::-1], mode="full")
            return full[lead : lead + m]

        specs.append((nk, vjp_kernel))
    return _record_op(tape, out, specs)


# -- verification ---------------------------------------------------------


def finite_difference_check(
    f: Callable[[Mapping[str, DiffScalar]], DiffScalar],
    params: Mapping[str, float],
    step: Union[float, Mapping[str, float]],
) -> float:
    """Max relative error between autodiff and central differences.

    ``f`` maps a dict of named scalars to a scalar loss and must be
    deterministic.  Relative error is |fd - grad| / (|grad| + 1e-8),
    maximized over parameters.
    """
    tape = Tape()
    tracked = {k: tape.parameter(v, k) for k, v in params.items()}
    grads = tape.backward(f(tracked))

    def eval_at(values: Mapping[str, float]) -> float:
        out = f({k: DiffScalar(v) for k, v in values.items()})
        return out.value

    worst = 0.0
    for name, value in params.items():
        h = step[name] if isinstance(step, Mapping) else float(step)
        if h <= 0:
            raise ValueError("finite-difference step must be positive")
        hi = dict(params)
        lo = dict(params)
        hi[name] = value + h
        lo[name] = value - h
        fd = (eval_at(hi) - eval_at(lo)) / (2.0 * h)
        rel = abs(fd - grads[name]) / (abs(grads[name]) + 1e-8)
        worst = max(worst, rel)
    return worst
