"""Numeric core: deterministic RNG, reverse-mode autodiff tape, optimizer.

Everything here is float64 and pure Python + numpy.  The tape is a small
dynamic graph: each op returns a :class:`Var` holding a value array, the
parent nodes, and a closure that routes the incoming gradient to the
parents.  ``backward`` walks the tape once in reverse topological order.

Determinism contract: given the same seed and the same sequence of calls,
every function in this module produces bit-identical float64 results on
any platform.  No global RNG state is used anywhere; randomness always
flows through an explicit :class:`RngStream`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


class ShapeMismatch(ValueError):
    """Operand shapes are incompatible for the requested op."""


class EmptyGroup(ValueError):
    """A softmax group index owns no elements."""


class BadRate(ValueError):
    """Dropout rate outside [0, 1)."""


class NonFinite(ArithmeticError):
    """A NaN or infinity showed up where a finite value is required."""


_MASK64 = (1 << 64) - 1
_DOUBLE_SCALE = 1.0 / float(1 << 53)


def _splitmix64(x: int) -> int:
    # Seed scrambler.  Guarantees a well-mixed nonzero state even for
    # small or zero user seeds, which xorshift handles poorly.
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


class RngStream:
    """xorshift64* generator with a splitmix64-scrambled seed.

    Implemented with Python integers so overflow semantics do not depend
    on the platform.  ``counter`` counts raw 64-bit draws, which makes
    stream positions comparable in tests.
    """

    __slots__ = ("seed", "_state", "counter")

    def __init__(self, seed: int):
        self.seed = int(seed) & _MASK64
        self._state = _splitmix64(self.seed)
        if self._state == 0:
            self._state = 0x9E3779B97F4A7C15
        self.counter = 0

    def next_u64(self) -> int:
        s = self._state
        s ^= s >> 12
        s = (s ^ (s << 25)) & _MASK64
        s ^= s >> 27
        self._state = s
        self.counter += 1
        return (s * 0x2545F4914F6CDD1D) & _MASK64

    def uniform(self) -> float:
        # Top 53 bits -> [0, 1) double with full mantissa resolution.
        return (self.next_u64() >> 11) * _DOUBLE_SCALE

    def uniform_array(self, shape) -> np.ndarray:
        shape = tuple(int(d) for d in (shape if isinstance(shape, (tuple, list)) else (shape,)))
        n = 1
        for d in shape:
            n *= d
        out = np.empty(n, dtype=np.float64)
        for i in range(n):
            out[i] = self.uniform()
        return out.reshape(shape)

    def randint(self, n: int) -> int:
        """Unbiased integer in [0, n) via rejection sampling."""
        if n <= 0:
            raise ValueError("randint needs n >= 1")
        limit = (_MASK64 + 1) - ((_MASK64 + 1) % n)
        while True:
            u = self.next_u64()
            if u < limit:
                return u % n

    def shuffle(self, items: list) -> None:
        """In-place Fisher-Yates, descending index order."""
        for i in range(len(items) - 1, 0, -1):
            j = self.randint(i + 1)
            items[i], items[j] = items[j], items[i]

    def derive(self, tag: int) -> "RngStream":
        """Independent child stream; same (seed, tag) -> same stream."""
        return RngStream(_splitmix64(self.seed ^ ((int(tag) * 0xA24BAED4963EE407) & _MASK64)))


def assert_finite(name: str, value) -> None:
    arr = np.asarray(value, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise NonFinite(f"{name} contains non-finite values")


class Var:
    """Tape node: float64 value, lazily allocated gradient, parent links."""

    __slots__ = ("value", "grad", "_parents", "_backward")

    def __init__(self, value, parents=(), backward=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self._parents = tuple(parents)
        self._backward = backward

    @property
    def shape(self):
        return self.value.shape


class Parameter(Var):
    """Trainable leaf.  Gradient is materialized as zeros up front."""

    __slots__ = ("name",)

    def __init__(self, value, name: str):
        super().__init__(np.array(value, dtype=np.float64))
        self.grad = np.zeros_like(self.value)
        self.name = name


def _accum(node: Var, g: np.ndarray) -> None:
    if node.grad is None:
        node.grad = np.array(g, dtype=np.float64)
    else:
        node.grad = node.grad + g


def zero_grad(params) -> None:
    for p in params:
        p.grad = np.zeros_like(p.value)


def backward(root: Var) -> None:
    """Accumulate d(root)/d(node) into ``grad`` over the whole tape.

    Iterative post-order traversal; the visit order is fully determined
    by the graph structure, so repeated runs produce identical floats.
    """
    if root.value.shape != ():
        raise ShapeMismatch("backward expects a scalar root")
    order = []
    visited = set()
    stack = [(root, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in visited:
                stack.append((p, False))
    root.grad = np.ones_like(root.value)
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)


def constant(value) -> Var:
    return Var(value)


def linear(x: Var, w: Parameter) -> Var:
    """x (n, d_in) times w (d_out, d_in) transposed -> (n, d_out)."""
    if x.value.ndim != 2 or w.value.ndim != 2 or x.value.shape[1] != w.value.shape[1]:
        raise ShapeMismatch(
            f"linear: x {x.value.shape} incompatible with w {w.value.shape}"
        )
    out = Var(x.value @ w.value.T, parents=(x, w))

    def bwd(g):
        _accum(w, g.T @ x.value)
        _accum(x, g @ w.value)

    out._backward = bwd
    return out


def matvec(x: Var, a: Parameter) -> Var:
    """x (n, d) dot a (d,) -> (n,).  Used for attention scoring."""
    if x.value.ndim != 2 or a.value.ndim != 1 or x.value.shape[1] != a.value.shape[0]:
        raise ShapeMismatch(
            f"matvec: x {x.value.shape} incompatible with a {a.value.shape}"
        )
    out = Var(x.value @ a.value, parents=(x, a))

    def bwd(g):
        _accum(a, x.value.T @ g)
        _accum(x, np.outer(g, a.value))

    out._backward = bwd
    return out


def add(x: Var, y: Var) -> Var:
    if x.value.shape != y.value.shape:
        raise ShapeMismatch(f"add: {x.value.shape} vs {y.value.shape}")
    out = Var(x.value + y.value, parents=(x, y))

    def bwd(g):
        _accum(x, g)
        _accum(y, g)

    out._backward = bwd
    return out


def add_bias(x: Var, b: Parameter) -> Var:
    if x.value.ndim != 2 or b.value.ndim != 1 or x.value.shape[1] != b.value.shape[0]:
        raise ShapeMismatch(f"add_bias: x {x.value.shape} vs b {b.value.shape}")
    out = Var(x.value + b.value, parents=(x, b))

    def bwd(g):
        _accum(b, g.sum(axis=0))
        _accum(x, g)

    out._backward = bwd
    return out


def elu_values(v: np.ndarray) -> np.ndarray:
    """ELU with alpha=1: v for v >= 0, expm1(v) below."""
    v = np.asarray(v, dtype=np.float64)
    return np.where(v >= 0.0, v, np.expm1(np.minimum(v, 0.0)))


def elu_grad_values(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    return np.where(v >= 0.0, 1.0, np.exp(np.minimum(v, 0.0)))


def elu(x: Var) -> Var:
    out = Var(elu_values(x.value), parents=(x,))
    slope = elu_grad_values(x.value)

    def bwd(g):
        _accum(x, g * slope)

    out._backward = bwd
    return out


def concat_cols(xs) -> Var:
    xs = list(xs)
    if not xs:
        raise ShapeMismatch("concat_cols: empty input list")
    rows = xs[0].value.shape[0]
    for x in xs:
        if x.value.ndim != 2 or x.value.shape[0] != rows:
            raise ShapeMismatch("concat_cols: all inputs must be 2-D with equal rows")
    widths = [x.value.shape[1] for x in xs]
    out = Var(np.concatenate([x.value for x in xs], axis=1), parents=tuple(xs))
    offsets = np.cumsum([0] + widths)

    def bwd(g):
        for x, lo, hi in zip(xs, offsets[:-1], offsets[1:]):
            _accum(x, g[:, lo:hi])

    out._backward = bwd
    return out


def gather_rows(x: Var, idx: np.ndarray) -> Var:
    idx = np.asarray(idx, dtype=np.int64)
    if x.value.ndim != 2:
        raise ShapeMismatch("gather_rows: x must be 2-D")
    if idx.size and (idx.min() < 0 or idx.max() >= x.value.shape[0]):
        raise ShapeMismatch("gather_rows: index out of range")
    out = Var(x.value[idx], parents=(x,))

    def bwd(g):
        buf = np.zeros_like(x.value)
        np.add.at(buf, idx, g)
        _accum(x, buf)

    out._backward = bwd
    return out


def segment_sum(x: Var, segments: np.ndarray, n_out: int) -> Var:
    """Sum rows of x into n_out buckets given by ``segments``."""
    segments = np.asarray(segments, dtype=np.int64)
    if x.value.ndim != 2 or segments.shape != (x.value.shape[0],):
        raise ShapeMismatch("segment_sum: segments must map each row of x")
    if segments.size and (segments.min() < 0 or segments.max() >= n_out):
        raise ShapeMismatch("segment_sum: segment id out of range")
    val = np.zeros((n_out, x.value.shape[1]), dtype=np.float64)
    np.add.at(val, segments, x.value)
    out = Var(val, parents=(x,))

    def bwd(g):
        _accum(x, g[segments])

    out._backward = bwd
    return out


def scale_rows(x: Var, s: Var) -> Var:
    """Multiply row i of x (m, d) by scalar s[i]; s is (m,)."""
    if x.value.ndim != 2 or s.value.shape != (x.value.shape[0],):
        raise ShapeMismatch(f"scale_rows: x {x.value.shape} vs s {s.value.shape}")
    out = Var(x.value * s.value[:, None], parents=(x, s))

    def bwd(g):
        _accum(x, g * s.value[:, None])
        _accum(s, (g * x.value).sum(axis=1))

    out._backward = bwd
    return out


def grouped_softmax(e: Var, groups: np.ndarray, n_groups: int) -> Var:
    """Softmax of e (m,) taken independently within each group.

    Every group id in [0, n_groups) must own at least one element.  The
    per-group maximum is subtracted before exponentiation, so adding a
    constant to all scores of one group leaves the output unchanged.
    """
    groups = np.asarray(groups, dtype=np.int64)
    if e.value.ndim != 1 or groups.shape != e.value.shape:
        raise ShapeMismatch("grouped_softmax: e and groups must be 1-D and equal length")
    if n_groups <= 0:
        raise EmptyGroup("grouped_softmax: n_groups must be positive")
    if groups.size == 0:
        raise EmptyGroup("grouped_softmax: no elements")
    if groups.min() < 0 or groups.max() >= n_groups:
        raise ShapeMismatch("grouped_softmax: group id out of range")
    counts = np.bincount(groups, minlength=n_groups)
    if (counts == 0).any():
        missing = int(np.flatnonzero(counts == 0)[0])
        raise EmptyGroup(f"grouped_softmax: group {missing} has no elements")

    gmax = np.full(n_groups, -np.inf)
    np.maximum.at(gmax, groups, e.value)
    z = np.exp(e.value - gmax[groups])
    denom = np.zeros(n_groups, dtype=np.float64)
    np.add.at(denom, groups, z)
    alpha = z / denom[groups]
    out = Var(alpha, parents=(e,))

    def bwd(g):
        t = alpha * g
        dot = np.zeros(n_groups, dtype=np.float64)
        np.add.at(dot, groups, t)
        _accum(e, t - alpha * dot[groups])

    out._backward = bwd
    return out


def dropout(x: Var, rate: float, training: bool, rng: RngStream | None) -> Var:
    """Inverted dropout.  Mask entries are drawn in row-major order.

    In eval mode (or rate 0) the input node is returned unchanged, so no
    RNG draws are consumed.
    """
    if not (0.0 <= rate < 1.0):
        raise BadRate(f"dropout rate {rate!r} outside [0, 1)")
    if not training or rate == 0.0:
        return x
    if rng is None:
        raise ValueError("dropout in training mode needs an RngStream")
    keep = 1.0 - rate
    flat = np.empty(x.value.size, dtype=np.float64)
    for i in range(flat.size):
        flat[i] = (1.0 / keep) if rng.uniform() >= rate else 0.0
    mask = flat.reshape(x.value.shape)
    out = Var(x.value * mask, parents=(x,))

    def bwd(g):
        _accum(x, g * mask)

    out._backward = bwd
    return out


def log_softmax_values(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def softmax_values(logits: np.ndarray) -> np.ndarray:
    return np.exp(log_softmax_values(np.asarray(logits, dtype=np.float64)))


def weighted_cross_entropy(logits: Var, labels: np.ndarray, class_weights: np.ndarray) -> Var:
    """Mean negative log-likelihood, weighted per sample by its class weight.

    loss = sum_i w[y_i] * nll_i / sum_i w[y_i], matching the usual
    weighted-mean reduction, so uniform weights reduce to the plain mean.
    """
    labels = np.asarray(labels, dtype=np.int64)
    class_weights = np.asarray(class_weights, dtype=np.float64)
    if logits.value.ndim != 2:
        raise ShapeMismatch("weighted_cross_entropy: logits must be (n, k)")
    n, k = logits.value.shape
    if labels.shape != (n,):
        raise ShapeMismatch("weighted_cross_entropy: labels must match logits rows")
    if class_weights.shape != (k,):
        raise ShapeMismatch("weighted_cross_entropy: one weight per class required")
    if n == 0:
        raise ShapeMismatch("weighted_cross_entropy: empty batch")
    if labels.min() < 0 or labels.max() >= k:
        raise ShapeMismatch("weighted_cross_entropy: label out of range")
    assert_finite("logits", logits.value)

    logp = log_softmax_values(logits.value)
    wi = class_weights[labels]
    wsum = wi.sum()
    if wsum <= 0.0:
        raise ShapeMismatch("weighted_cross_entropy: total sample weight is zero")
    nll = -logp[np.arange(n), labels]
    out = Var(np.float64((wi * nll).sum() / wsum), parents=(logits,))

    def bwd(g):
        p = np.exp(logp)
        p[np.arange(n), labels] -= 1.0
        _accum(logits, p * (wi / wsum)[:, None] * float(g))

    out._backward = bwd
    return out


@dataclass
class AdamState:
    """Adam moments plus hyperparameters.  Weight decay is decoupled:
    parameters shrink by lr*wd*value before the moment update touches
    them, and the decay never enters m or v.  ``fold_decay`` switches to
    the classic L2 form (decay added to the gradient, entering the
    moments) for ablation comparisons."""

    lr: float = 1e-3
    weight_decay: float = 5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    fold_decay: bool = False
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params, state: AdamState) -> None:
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1 ** state.t
    bc2 = 1.0 - b2 ** state.t
    for p in params:
        g = p.grad if p.grad is not None else np.zeros_like(p.value)
        assert_finite(f"grad[{p.name}]", g)
        if state.weight_decay:
            if state.fold_decay:
                g = g + state.weight_decay * p.value
            else:
                p.value = p.value - state.lr * state.weight_decay * p.value
        m = state.m.get(p.name)
        v = state.v.get(p.name)
        if m is None:
            m = np.zeros_like(p.value)
            v = np.zeros_like(p.value)
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * (g * g)
        state.m[p.name] = m
        state.v[p.name] = v
        p.value = p.value - state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
        assert_finite(f"param[{p.name}]", p.value)


def glorot_uniform(shape, rng: RngStream) -> np.ndarray:
    """Uniform(-L, L) with L = sqrt(6 / (fan_in + fan_out)).

    For a (d_out, d_in) weight, fan_in = d_in and fan_out = d_out; a 1-D
    vector of length d is treated as fan_in = d, fan_out = 1.  Entries
    are drawn in row-major order.
    """
    shape = tuple(int(d) for d in (shape if isinstance(shape, (tuple, list)) else (shape,)))
    if len(shape) == 2:
        fan_out, fan_in = shape
    elif len(shape) == 1:
        fan_in, fan_out = shape[0], 1
    else:
        raise ShapeMismatch(f"glorot_uniform: unsupported shape {shape}")
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return limit * (2.0 * rng.uniform_array(shape) - 1.0)


def finite_diff_grad(f, params, eps: float = 1e-5) -> dict:
    """Central finite differences of scalar f() w.r.t. each parameter.

    f is called with no arguments and must read the parameters' current
    values.  Returns {param.name: gradient array}.  Slow by design; this
    is the reference oracle for the tape.
    """
    grads = {}
    for p in params:
        g = np.zeros_like(p.value)
        flat = p.value.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            f_plus = float(f())
            flat[i] = orig - eps
            f_minus = float(f())
            flat[i] = orig
            if not (math.isfinite(f_plus) and math.isfinite(f_minus)):
                raise NonFinite(f"finite_diff_grad: non-finite loss near {p.name}[{i}]")
            gflat[i] = (f_plus - f_minus) / (2.0 * eps)
        grads[p.name] = g
    return grads
