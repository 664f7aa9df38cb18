"""Dense float64 tensors with taped reverse-mode differentiation.

Every primitive computes its forward result eagerly with numpy and, when a
Tape is active, appends one record to it. A record keeps references to the
operation's inputs and output plus a closure that accumulates (+=) into the
inputs' grad buffers. Because records are appended in execution order, the
list is already topologically sorted and the backward pass is a single
reverse sweep. No operator overloading, no graph rewriting.

Gradients accumulate: a parameter used at many time steps receives the sum
of all its contributions. Callers zero grads between steps.
"""

from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np

from .errors import NumericsError, ShapeError


class Tensor:
    """A dense float64 array plus an optional same-shape gradient buffer."""

    __slots__ = ("data", "grad")

    def __init__(self, data, grad=None):
        self.data = np.ascontiguousarray(data, dtype=np.float64)
        self.grad = None if grad is None else np.ascontiguousarray(grad, dtype=np.float64)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def ensure_grad(self) -> np.ndarray:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        return self.grad

    def zero_grad(self) -> None:
        self.grad = None

    def copy(self) -> "Tensor":
        return Tensor(self.data.copy())

    def __repr__(self) -> str:  # pragma: no cover - debugging aid
        return f"Tensor(shape={tuple(self.data.shape)})"


def tensor(values) -> Tensor:
    return Tensor(np.asarray(values, dtype=np.float64))


def zeros(*shape: int) -> Tensor:
    return Tensor(np.zeros(shape))


class OpRecord:
    """One executed primitive: inputs, output, and the grad-accumulating closure."""

    __slots__ = ("name", "inputs", "output", "backward")

    def __init__(self, name: str, inputs: tuple, output: Tensor, backward: Callable):
        self.name = name
        self.inputs = inputs
        self.output = output
        self.backward = backward


class Tape:
    """Execution-ordered record of primitives (ComputationRecord).

    Entering the context makes the tape active; primitives executed inside
    record themselves. ``backward`` seeds the grad of one output and replays
    the records in reverse. With no active tape, primitives run forward-only.
    """

    def __init__(self):
        self.records: list[OpRecord] = []

    def __enter__(self) -> "Tape":
        _STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        _STACK.pop()

    def backward(self, output: Tensor, seed=1.0) -> None:
        g = np.asarray(seed, dtype=np.float64)
        if g.shape not in ((), output.data.shape):
            raise ShapeError(f"backward seed shape {g.shape} does not match output {output.data.shape}")
        output.ensure_grad()[...] += g
        for rec in reversed(self.records):
            if rec.output.grad is not None:
                rec.backward(rec.output.grad)


_STACK: list[Tape] = []


def active_tape() -> Tape | None:
    return _STACK[-1] if _STACK else None


def _record(name: str, inputs: tuple, output: Tensor, backward: Callable) -> None:
    tape = active_tape()
    if tape is not None:
        tape.records.append(OpRecord(name, inputs, output, backward))


# ---------------------------------------------------------------------------
# primitives
# ---------------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Strict 2-D matrix product; dA = dC @ B^T, dB = A^T @ dC."""
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    out = Tensor(a.data @ b.data)

    def backward(g):
        a.ensure_grad()[...] += g @ b.data.T
        b.ensure_grad()[...] += a.data.T @ g

    _record("matmul", (a, b), out, backward)
    return out


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"add: shapes {a.shape} and {b.shape} differ")
    out = Tensor(a.data + b.data)

    def backward(g):
        a.ensure_grad()[...] += g
        b.ensure_grad()[...] += g

    _record("add", (a, b), out, backward)
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"mul: shapes {a.shape} and {b.shape} differ")
    out = Tensor(a.data * b.data)

    def backward(g):
        a.ensure_grad()[...] += g * b.data
        b.ensure_grad()[...] += g * a.data

    _record("mul", (a, b), out, backward)
    return out


def add_row(a: Tensor, bias: Tensor) -> Tensor:
    """Add a length-n vector to every row of a (..., n) tensor."""
    if bias.data.ndim != 1 or a.shape[-1] != bias.shape[0]:
        raise ShapeError(f"add_row: shapes {a.shape} and {bias.shape} incompatible")
    out = Tensor(a.data + bias.data)
    lead = tuple(range(a.data.ndim - 1))

    def backward(g):
        a.ensure_grad()[...] += g
        bias.ensure_grad()[...] += g.sum(axis=lead) if lead else g

    _record("add_row", (a, bias), out, backward)
    return out


def sigmoid(x: Tensor) -> Tensor:
    with np.errstate(over="ignore"):
        s = 1.0 / (1.0 + np.exp(-x.data))
    out = Tensor(s)

    def backward(g):
        x.ensure_grad()[...] += g * s * (1.0 - s)

    _record("sigmoid", (x,), out, backward)
    return out


def tanh(x: Tensor) -> Tensor:
    t = np.tanh(x.data)
    out = Tensor(t)

    def backward(g):
        x.ensure_grad()[...] += g * (1.0 - t * t)

    _record("tanh", (x,), out, backward)
    return out


def slice_cols(x: Tensor, start: int, stop: int) -> Tensor:
    if x.data.ndim != 2 or not (0 <= start < stop <= x.shape[1]):
        raise ShapeError(f"slice_cols: bad range [{start}:{stop}] for shape {x.shape}")
    out = Tensor(x.data[:, start:stop])

    def backward(g):
        x.ensure_grad()[:, start:stop] += g

    _record("slice_cols", (x,), out, backward)
    return out


def stack_rows(rows: Sequence[Tensor]) -> Tensor:
    """Concatenate T row tensors of shape (1, n) into a (T, n) tensor."""
    if not rows:
        raise ShapeError("stack_rows: empty row list")
    out = Tensor(np.concatenate([r.data for r in rows], axis=0))

    def backward(g):
        for i, r in enumerate(rows):
            r.ensure_grad()[...] += g[i : i + 1]

    _record("stack_rows", tuple(rows), out, backward)
    return out


def embed_token(table: Tensor, token_id: int) -> Tensor:
    """Select one row of an embedding table as a (1, n) tensor."""
    if not (0 <= token_id < table.shape[0]):
        raise ShapeError(f"embed_token: id {token_id} outside table of {table.shape[0]} rows")
    out = Tensor(table.data[token_id : token_id + 1])

    def backward(g):
        table.ensure_grad()[token_id] += g[0]

    _record("embed_token", (table,), out, backward)
    return out


def outer_add(a: Tensor, b: Tensor) -> Tensor:
    """Pairwise row sums: (T, n) + (U, n) -> (T, U, n)."""
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[1]:
        raise ShapeError(f"outer_add: shapes {a.shape} and {b.shape} incompatible")
    out = Tensor(a.data[:, None, :] + b.data[None, :, :])

    def backward(g):
        a.ensure_grad()[...] += g.sum(axis=1)
        b.ensure_grad()[...] += g.sum(axis=0)

    _record("outer_add", (a, b), out, backward)
    return out


def affine_last(x: Tensor, w: Tensor, bias: Tensor) -> Tensor:
    """y = x @ w + bias applied along the last axis of x (rank 2 or 3)."""
    if w.data.ndim != 2 or x.shape[-1] != w.shape[0] or bias.shape != (w.shape[1],):
        raise ShapeError(f"affine_last: shapes {x.shape}, {w.shape}, {bias.shape} incompatible")
    out = Tensor(x.data @ w.data + bias.data)
    n_in, n_out = w.shape

    def backward(g):
        x.ensure_grad()[...] += g @ w.data.T
        w.ensure_grad()[...] += x.data.reshape(-1, n_in).T @ g.reshape(-1, n_out)
        bias.ensure_grad()[...] += g.reshape(-1, n_out).sum(axis=0)

    _record("affine_last", (x, w, bias), out, backward)
    return out


def log_softmax(x: Tensor) -> Tensor:
    """Max-shifted log softmax over the last axis; each output slice logsumexps to 0."""
    if x.shape[-1] < 1:
        raise ShapeError(f"log_softmax: empty last axis in shape {x.shape}")
    if not np.isfinite(x.data).all():
        raise NumericsError("log_softmax: input contains non-finite values")
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    y = shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    out = Tensor(y)

    def backward(g):
        x.ensure_grad()[...] += g - np.exp(y) * g.sum(axis=-1, keepdims=True)

    _record("log_softmax", (x,), out, backward)
    return out


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then scale and shift."""
    n = x.shape[-1]
    if gain.shape != (n,) or bias.shape != (n,):
        raise ShapeError(f"layer_norm: gain/bias must be ({n},), got {gain.shape}, {bias.shape}")
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv
    out = Tensor(xhat * gain.data + bias.data)
    lead = tuple(range(x.data.ndim - 1))

    def backward(g):
        gx = g * gain.data
        # d/dx of xhat: inv * (gx - mean(gx) - xhat * mean(gx * xhat))
        m1 = gx.mean(axis=-1, keepdims=True)
        m2 = (gx * xhat).mean(axis=-1, keepdims=True)
        x.ensure_grad()[...] += inv * (gx - m1 - xhat * m2)
        gain.ensure_grad()[...] += (g * xhat).sum(axis=lead) if lead else (g * xhat)
        bias.ensure_grad()[...] += g.sum(axis=lead) if lead else g

    _record("layer_norm", (x, gain, bias), out, backward)
    return out


def record_scalar_loss(name: str, logits: Tensor, value: float, grad_logits: np.ndarray) -> Tensor:
    """Wrap an analytically differentiated loss as a taped scalar node.

    The backward closure routes ``seed * grad_logits`` into the logits, from
    where the tape carries gradients into the model parameters.
    """
    node = Tensor(np.array([value]))

    def backward(g):
        logits.ensure_grad()[...] += float(g[0]) * grad_logits

    _record(name, (logits,), node, backward)
    return node


# ---------------------------------------------------------------------------
# scalar helpers for log-space dynamic programs
# ---------------------------------------------------------------------------

NEG_INF = -math.inf


def logsumexp(xs) -> float:
    """log(sum(exp(x))) of a nonempty float sequence; -inf entries allowed."""
    values = [float(v) for v in xs]
    if not values:
        raise NumericsError("logsumexp: empty sequence")
    m = max(values)
    if m == NEG_INF:
        return NEG_INF
    return m + math.log(sum(math.exp(v - m) for v in values))


# ---------------------------------------------------------------------------
# initialization, optimizer, gradient checking
# ---------------------------------------------------------------------------


def xavier_uniform(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int, fan_out: int) -> Tensor:
    scale = math.sqrt(6.0 / (fan_in + fan_out))
    return Tensor(rng.uniform(-scale, scale, size=shape))


def global_grad_norm(params: Sequence[Tensor]) -> float:
    total = 0.0
    for p in params:
        if p.grad is not None:
            total += float((p.grad * p.grad).sum())
    return math.sqrt(total)


def clip_global_norm(params: Sequence[Tensor], max_norm: float) -> float:
    """Scale all grads so their global norm is at most max_norm; returns the pre-clip norm."""
    norm = global_grad_norm(params)
    if norm > max_norm > 0.0:
        scale = max_norm / norm
        for p in params:
            if p.grad is not None:
                p.grad *= scale
    return norm


class Adam:
    """Adam with global-norm gradient clipping (clip before the moment update)."""

    def __init__(self, params: Sequence[Tensor], lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8, clip_norm: float = 5.0):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.clip_norm = clip_norm
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()

    def step(self) -> None:
        if self.clip_norm:
            clip_global_norm(self.params, self.clip_norm)
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad if p.grad is not None else 0.0
            m[...] = self.beta1 * m + (1.0 - self.beta1) * g
            v[...] = self.beta2 * v + (1.0 - self.beta2) * (g * g)
            p.data -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


def grad_check(f: Callable[[], float], params: Sequence[Tensor], eps: float = 1e-5) -> float:
    """Max relative error between f's analytic gradient and central differences.

    ``f`` evaluates the scalar loss and, as a side effect, accumulates its
    analytic gradient into the params (forward + backward on a fresh tape).
    Error per coordinate is |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).
    """
    for p in params:
        p.grad = np.zeros_like(p.data)
    base = f()
    if not math.isfinite(base):
        raise NumericsError(f"grad_check: non-finite loss {base}")
    analytic = [p.grad.copy() for p in params]

    worst = 0.0
    for p, ana in zip(params, analytic):
        flat = p.data.reshape(-1)
        aflat = ana.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            fp = f()
            flat[i] = orig - eps
            fm = f()
            flat[i] = orig
            if not (math.isfinite(fp) and math.isfinite(fm)):
                raise NumericsError("grad_check: non-finite loss at perturbed point")
            numeric = (fp - fm) / (2.0 * eps)
            err = abs(aflat[i] - numeric) / max(abs(aflat[i]), abs(numeric), 1e-8)
            worst = max(worst, err)
    for p in params:
        p.grad = np.zeros_like(p.data)
    return worst
