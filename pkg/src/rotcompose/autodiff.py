"""Dense-tensor arithmetic with reverse-mode differentiation.

Every learnable operation in the model is expressed through the ops in this
module. A forward pass builds an implicit tape: each result remembers its
parent tensors and a closure that pushes the incoming gradient to them.
``backward`` replays that tape once in reverse topological order and returns
a gradient map for every tensor with ``requires_grad=True``.

Arrays are float32 by default; pass float64 inputs for high-precision
gradient checking.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .errors import ContractViolation, NumericError

DEFAULT_DTYPE = np.float32


class Tensor:
    """A node of the computation graph wrapping a numpy array."""

    __slots__ = ("data", "requires_grad", "name", "_parents", "_push_grad")

    def __init__(self, data, requires_grad=False, name=None,
                 parents=(), push_grad=None, dtype=None):
        arr = np.asarray(data)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(dtype or DEFAULT_DTYPE)
        elif dtype is not None:
            arr = arr.astype(dtype)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.name = name
        self._parents: tuple = tuple(parents)
        # push_grad(out_grad, accumulate) distributes the gradient to parents
        self._push_grad: Callable | None = push_grad

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.data.shape}, grad={self.requires_grad}{tag})"


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data, parents, push_grad, name=None) -> Tensor:
    requires = any(p.requires_grad for p in parents)
    return Tensor(data, requires_grad=requires, name=name,
                  parents=parents if requires else (),
                  push_grad=push_grad if requires else None)


def parameter(data, name=None, dtype=None) -> Tensor:
    return Tensor(np.array(data, dtype=dtype or DEFAULT_DTYPE),
                  requires_grad=True, name=name)


def constant(data, name=None, dtype=None) -> Tensor:
    return Tensor(np.asarray(data, dtype=dtype or DEFAULT_DTYPE), name=name)


# ---------------------------------------------------------------------------
# primitives
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape:
        raise ContractViolation(f"add: shape mismatch {a.shape} vs {b.shape}")

    def push(g, acc):
        acc(a, g)
        acc(b, g)

    return _node(a.data + b.data, (a, b), push, "add")


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape:
        raise ContractViolation(f"sub: shape mismatch {a.shape} vs {b.shape}")

    def push(g, acc):
        acc(a, g)
        acc(b, -g)

    return _node(a.data - b.data, (a, b), push, "sub")


def neg(a) -> Tensor:
    a = _as_tensor(a)

    def push(g, acc):
        acc(a, -g)

    return _node(-a.data, (a,), push, "neg")


def mul(a, b) -> Tensor:
    """Elementwise product; either side may be a scalar (0-d) tensor."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape and a.shape != () and b.shape != ():
        raise ContractViolation(f"mul: shape mismatch {a.shape} vs {b.shape}")

    def push(g, acc):
        ga = g * b.data
        gb = g * a.data
        if a.shape == () and g.shape != ():
            ga = ga.sum()
        if b.shape == () and g.shape != ():
            gb = gb.sum()
        acc(a, ga)
        acc(b, gb)

    return _node(a.data * b.data, (a, b), push, "mul")


def scale(a, s: float) -> Tensor:
    """Multiply by a python constant (no gradient for the constant)."""
    a = _as_tensor(a)

    def push(g, acc):
        acc(a, g * s)

    return _node(a.data * s, (a,), push, "scale")


def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ContractViolation(f"matmul: incompatible shapes {a.shape} @ {b.shape}")

    def push(g, acc):
        acc(a, g @ b.data.T)
        acc(b, a.data.T @ g)

    return _node(a.data @ b.data, (a, b), push, "matmul")


def add_bias(x, b) -> Tensor:
    """Add a bias row vector to every row of a matrix."""
    x, b = _as_tensor(x), _as_tensor(b)
    if x.data.ndim != 2 or b.data.ndim != 1 or x.shape[1] != b.shape[0]:
        raise ContractViolation(f"add_bias: shapes {x.shape} + {b.shape}")

    def push(g, acc):
        acc(x, g)
        acc(b, g.sum(axis=0))

    return _node(x.data + b.data[None, :], (x, b), push, "add_bias")


def relu(a) -> Tensor:
    a = _as_tensor(a)
    mask = a.data > 0  # subgradient at 0 is 0

    def push(g, acc):
        acc(a, g * mask)

    return _node(a.data * mask, (a,), push, "relu")


def sigmoid(a) -> Tensor:
    a = _as_tensor(a)
    out = 1.0 / (1.0 + np.exp(-a.data))

    def push(g, acc):
        acc(a, g * out * (1.0 - out))

    return _node(out, (a,), push, "sigmoid")


def exp(a) -> Tensor:
    a = _as_tensor(a)
    out = np.exp(a.data)

    def push(g, acc):
        acc(a, g * out)

    return _node(out, (a,), push, "exp")


def log(a) -> Tensor:
    a = _as_tensor(a)

    def push(g, acc):
        acc(a, g / a.data)

    return _node(np.log(a.data), (a,), push, "log")


def sin(a) -> Tensor:
    a = _as_tensor(a)

    def push(g, acc):
        acc(a, g * np.cos(a.data))

    return _node(np.sin(a.data), (a,), push, "sin")


def cos(a) -> Tensor:
    a = _as_tensor(a)

    def push(g, acc):
        acc(a, -g * np.sin(a.data))

    return _node(np.cos(a.data), (a,), push, "cos")


def softplus(a) -> Tensor:
    """log(1 + exp(a)), numerically stable at both tails."""
    a = _as_tensor(a)

    def push(g, acc):
        acc(a, g / (1.0 + np.exp(-a.data)))

    return _node(np.logaddexp(0.0, a.data), (a,), push, "softplus")


def tsum(a) -> Tensor:
    a = _as_tensor(a)

    def push(g, acc):
        acc(a, np.full_like(a.data, g))

    return _node(a.data.sum(), (a,), push, "sum")


def tmean(a) -> Tensor:
    a = _as_tensor(a)
    n = a.data.size

    def push(g, acc):
        acc(a, np.full_like(a.data, g / n))

    return _node(a.data.mean(), (a,), push, "mean")


def reshape(a, shape) -> Tensor:
    a = _as_tensor(a)
    shape = tuple(shape)

    def push(g, acc):
        acc(a, g.reshape(a.shape))

    return _node(a.data.reshape(shape), (a,), push, "reshape")


def concat_cols(parts: Sequence) -> Tensor:
    """Concatenate 2-d tensors along the feature axis."""
    parts = [_as_tensor(p) for p in parts]
    rows = {p.shape[0] for p in parts}
    if any(p.data.ndim != 2 for p in parts) or len(rows) != 1:
        raise ContractViolation("concat_cols: all parts must be 2-d with equal rows")
    widths = [p.shape[1] for p in parts]
    offsets = np.cumsum([0] + widths)

    def push(g, acc):
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            acc(p, g[:, lo:hi])

    return _node(np.concatenate([p.data for p in parts], axis=1),
                 tuple(parts), push, "concat_cols")


def deinterleave(a) -> tuple[Tensor, Tensor]:
    """Split an interleaved (re, im, re, im, ...) matrix into (re, im) halves."""
    a = _as_tensor(a)
    if a.data.ndim != 2 or a.shape[1] % 2 != 0:
        raise ContractViolation(f"deinterleave: need even columns, got {a.shape}")

    def push_re(g, acc):
        full = np.zeros_like(a.data)
        full[:, 0::2] = g
        acc(a, full)

    def push_im(g, acc):
        full = np.zeros_like(a.data)
        full[:, 1::2] = g
        acc(a, full)

    re = _node(np.ascontiguousarray(a.data[:, 0::2]), (a,), push_re, "deinterleave_re")
    im = _node(np.ascontiguousarray(a.data[:, 1::2]), (a,), push_im, "deinterleave_im")
    return re, im


def interleave(re, im) -> Tensor:
    """Inverse of deinterleave: pack (re, im) into interleaved columns."""
    re, im = _as_tensor(re), _as_tensor(im)
    if re.shape != im.shape or re.data.ndim != 2:
        raise ContractViolation(f"interleave: shapes {re.shape} vs {im.shape}")
    out = np.empty((re.shape[0], re.shape[1] * 2), dtype=re.dtype)
    out[:, 0::2] = re.data
    out[:, 1::2] = im.data

    def push(g, acc):
        acc(re, np.ascontiguousarray(g[:, 0::2]))
        acc(im, np.ascontiguousarray(g[:, 1::2]))

    return _node(out, (re, im), push, "interleave")


def rowwise_dot(a, b) -> Tensor:
    """(N, d) x (N, d) -> (N,) of per-row dot products."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape or a.data.ndim != 2:
        raise ContractViolation(f"rowwise_dot: shapes {a.shape} vs {b.shape}")

    def push(g, acc):
        acc(a, g[:, None] * b.data)
        acc(b, g[:, None] * a.data)

    return _node(np.einsum("nd,nd->n", a.data, b.data), (a, b), push, "rowwise_dot")


def rows_bank_dot(a, bank) -> Tensor:
    """(N, d) against a (N, M, d) bank -> (N, M) of dot products."""
    a, bank = _as_tensor(a), _as_tensor(bank)
    if a.data.ndim != 2 or bank.data.ndim != 3 or \
            a.shape[0] != bank.shape[0] or a.shape[1] != bank.shape[2]:
        raise ContractViolation(f"rows_bank_dot: shapes {a.shape} vs {bank.shape}")

    def push(g, acc):
        acc(a, np.einsum("nm,nmd->nd", g, bank.data))
        acc(bank, g[:, :, None] * a.data[:, None, :])

    return _node(np.einsum("nd,nmd->nm", a.data, bank.data),
                 (a, bank), push, "rows_bank_dot")


def take_diag(a) -> Tensor:
    a = _as_tensor(a)
    if a.data.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ContractViolation(f"take_diag: need square matrix, got {a.shape}")
    n = a.shape[0]

    def push(g, acc):
        full = np.zeros_like(a.data)
        full[np.arange(n), np.arange(n)] = g
        acc(a, full)

    return _node(np.diagonal(a.data).copy(), (a,), push, "take_diag")


def logsumexp_rows(a) -> Tensor:
    """Row-wise log-sum-exp with max subtraction for stability."""
    a = _as_tensor(a)
    if a.data.ndim != 2:
        raise ContractViolation(f"logsumexp_rows: need 2-d input, got {a.shape}")
    mx = a.data.max(axis=1, keepdims=True)
    ex = np.exp(a.data - mx)
    sm = ex.sum(axis=1, keepdims=True)
    out = (mx + np.log(sm)).ravel()
    soft = ex / sm

    def push(g, acc):
        acc(a, g[:, None] * soft)

    return _node(out, (a,), push, "logsumexp_rows")


def conv1d(x, w, b) -> Tensor:
    """Same-padded 1-d convolution: (N, C, L) * (F, C, K) -> (N, F, L).

    K must be odd; padding is (K - 1) / 2 zeros on each side.
    """
    x, w, b = _as_tensor(x), _as_tensor(w), _as_tensor(b)
    if x.data.ndim != 3 or w.data.ndim != 3 or x.shape[1] != w.shape[1]:
        raise ContractViolation(f"conv1d: shapes {x.shape} * {w.shape}")
    kern = w.shape[2]
    if kern % 2 != 1:
        raise ContractViolation("conv1d: kernel size must be odd")
    if b.shape != (w.shape[0],):
        raise ContractViolation(f"conv1d: bias shape {b.shape} vs {w.shape[0]} filters")
    n, c, length = x.shape
    pad = (kern - 1) // 2
    xp = np.zeros((n, c, length + 2 * pad), dtype=x.dtype)
    xp[:, :, pad:pad + length] = x.data
    # (N, C, K, L) sliding windows; K is tiny so the copy is cheap
    xs = np.stack([xp[:, :, t:t + length] for t in range(kern)], axis=2)
    out = np.einsum("fck,nckl->nfl", w.data, xs) + b.data[None, :, None]

    def push(g, acc):
        acc(w, np.einsum("nckl,nfl->fck", xs, g))
        acc(b, g.sum(axis=(0, 2)))
        dxs = np.einsum("fck,nfl->nckl", w.data, g)
        dxp = np.zeros_like(xp)
        for t in range(kern):
            dxp[:, :, t:t + length] += dxs[:, :, t, :]
        acc(x, dxp[:, :, pad:pad + length])

    return _node(out, (x, w, b), push, "conv1d")


def adaptive_max_pool1d(x, out_len: int) -> Tensor:
    """Max-pool (N, C, L) down to (N, C, out_len) over contiguous windows."""
    x = _as_tensor(x)
    if x.data.ndim != 3:
        raise ContractViolation(f"adaptive_max_pool1d: need 3-d input, got {x.shape}")
    n, c, length = x.shape
    if not 1 <= out_len <= length:
        raise ContractViolation(f"adaptive_max_pool1d: out_len {out_len} vs length {length}")
    bounds = [(i * length // out_len, (i + 1) * length // out_len)
              for i in range(out_len)]
    out = np.empty((n, c, out_len), dtype=x.dtype)
    argmax = np.empty((n, c, out_len), dtype=np.int64)
    for i, (lo, hi) in enumerate(bounds):
        win = x.data[:, :, lo:hi]
        idx = win.argmax(axis=2)
        argmax[:, :, i] = idx + lo
        out[:, :, i] = np.take_along_axis(win, idx[:, :, None], axis=2)[:, :, 0]

    def push(g, acc):
        dx = np.zeros_like(x.data)
        ni, ci = np.meshgrid(np.arange(n), np.arange(c), indexing="ij")
        for i in range(out_len):
            np.add.at(dx, (ni, ci, argmax[:, :, i]), g[:, :, i])
        acc(x, dx)

    return _node(out, (x,), push, "adaptive_max_pool1d")


# ---------------------------------------------------------------------------
# backward pass
# ---------------------------------------------------------------------------

def backward(loss: Tensor) -> dict[Tensor, np.ndarray]:
    """Run the tape backward from a scalar loss.

    Returns ``{tensor: gradient}`` for every tensor in the graph with
    ``requires_grad=True``. Gradients of constants are never materialized.
    """
    if loss.data.shape != ():
        raise ContractViolation(f"backward: loss must be scalar, got shape {loss.shape}")
    if not np.isfinite(loss.data):
        raise NumericError("backward: loss is not finite")

    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
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

    grads: dict[int, np.ndarray] = {id(loss): np.asarray(1.0, dtype=loss.dtype)}
    by_id: dict[int, Tensor] = {id(loss): loss}

    def acc(t: Tensor, g):
        if not t.requires_grad:
            return
        key = id(t)
        by_id[key] = t
        if key in grads:
            grads[key] = grads[key] + g
        else:
            grads[key] = np.array(np.asarray(g, dtype=t.dtype))

    for node in reversed(order):
        g = grads.get(id(node))
        if g is None or node._push_grad is None:
            continue
        if not np.all(np.isfinite(g)):
            raise NumericError(f"backward: non-finite gradient at node {node.name!r}")
        node._push_grad(g, acc)

    return {by_id[k]: v for k, v in grads.items()
            if by_id[k].requires_grad and by_id[k]._push_grad is None}


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------

class SGDMomentum:
    """SGD with momentum: v <- momentum * v + g; p <- p - lr * v."""

    def __init__(self, learning_rate: float, momentum: float = 0.0):
        if learning_rate <= 0:
            raise ContractViolation("learning_rate must be positive")
        if not 0.0 <= momentum < 1.0:
            raise ContractViolation("momentum must lie in [0, 1)")
        self.learning_rate = float(learning_rate)
        self.momentum = float(momentum)
        self.velocity: dict[str, np.ndarray] = {}

    def step(self, params: dict[str, Tensor], grads: dict[str, np.ndarray]):
        for name, p in params.items():
            g = grads.get(name)
            if g is None:
                continue
            g = np.asarray(g, dtype=p.dtype)
            if g.shape != p.shape:
                raise ContractViolation(
                    f"sgd step: grad shape {g.shape} vs param {name} shape {p.shape}")
            v = self.velocity.get(name)
            if v is None:
                v = np.zeros_like(p.data)
            v = self.momentum * v + g
            self.velocity[name] = v
            p.data = p.data - np.asarray(self.learning_rate, dtype=p.dtype) * v


# ---------------------------------------------------------------------------
# gradient checking
# ---------------------------------------------------------------------------

def grad_check(f: Callable[[], Tensor], points: Sequence[Tensor],
               eps: float = 1e-5) -> float:
    """Compare analytic gradients of ``f`` against central finite differences.

    ``f`` is a nullary closure over ``points`` returning a scalar Tensor.
    Returns the max over coordinates of
    ``|analytic - numeric| / max(1e-8, |analytic| + |numeric|)``.
    """
    if eps <= 0:
        raise ContractViolation("grad_check: eps must be positive")
    loss = f()
    if loss.data.shape != ():
        raise ContractViolation("grad_check: function must be scalar-valued")
    if not np.isfinite(loss.data):
        raise NumericError("grad_check: function value is not finite")
    analytic = backward(loss)
    worst = 0.0
    for p in points:
        a = analytic.get(p)
        if a is None:
            a = np.zeros_like(p.data)
        flat = p.data.ravel()
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            hi = f().data
            flat[i] = orig - eps
            lo = f().data
            flat[i] = orig
            if not (np.isfinite(hi) and np.isfinite(lo)):
                raise NumericError("grad_check: non-finite value during probing")
            num = (float(hi) - float(lo)) / (2.0 * eps)
            ana = float(a.ravel()[i])
            err = abs(ana - num) / max(1e-8, abs(ana) + abs(num))
            worst = max(worst, err)
    return worst


def init_linear(rng: np.random.Generator, fan_in: int, fan_out: int,
                name: str, dtype=None) -> tuple[Tensor, Tensor]:
    """Weights uniform in [-1/sqrt(fan_in), +1/sqrt(fan_in)], biases zero."""
    bound = 1.0 / np.sqrt(fan_in)
    w = rng.uniform(-bound, bound, size=(fan_in, fan_out))
    return (parameter(w.astype(dtype or DEFAULT_DTYPE), name=f"{name}.w", dtype=dtype),
            parameter(np.zeros(fan_out), name=f"{name}.b", dtype=dtype))
