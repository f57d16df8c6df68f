"""Dense float64 tensors with reverse-mode differentiation.

Every value the model touches flows through :class:`Tensor`. A tensor built
from other tensors remembers its parents and a closure that pushes the
output gradient back to them; :func:`backward` replays that record in
reverse topological order.
"""
from __future__ import annotations

import contextlib
import math
from typing import Callable, Iterable, Mapping

import numpy as np

DTYPE = np.float64

_GRAD_ENABLED = True


class DimensionError(ValueError):
    """Operand shapes are incompatible."""


class ContractError(RuntimeError):
    """An operation was called outside its contract."""


class ConfigError(ValueError):
    """A hyperparameter is outside its admissible range."""


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (evaluation passes)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    ndim_extra = g.ndim - len(shape)
    if ndim_extra > 0:
        g = g.sum(axis=tuple(range(ndim_extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name", "_owns_grad")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=DTYPE)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None
        self.name = name
        self._owns_grad = False

    # -- graph construction -------------------------------------------------
    @staticmethod
    def _make(data, parents: tuple["Tensor", ...], backward) -> "Tensor":
        out = Tensor(data)
        if _GRAD_ENABLED and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = parents
            out._backward = backward
        return out

    def _accum(self, g: np.ndarray) -> None:
        if not self.requires_grad:
            return
        # the first contribution is borrowed (backward closures never write
        # into their input), so copy only when a second one arrives
        if self.grad is None:
            self.grad = g
            self._owns_grad = False
        elif self._owns_grad:
            self.grad += g
        else:
            self.grad = self.grad + g
            self._owns_grad = True

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    # -- arithmetic ---------------------------------------------------------
    def __add__(self, other):
        other = as_tensor(other)
        a, b = self, other

        def bw(g):
            a._accum(_unbroadcast(g, a.shape))
            b._accum(_unbroadcast(g, b.shape))

        return Tensor._make(a.data + b.data, (a, b), bw)

    __radd__ = __add__

    def __sub__(self, other):
        other = as_tensor(other)
        a, b = self, other

        def bw(g):
            a._accum(_unbroadcast(g, a.shape))
            b._accum(_unbroadcast(-g, b.shape))

        return Tensor._make(a.data - b.data, (a, b), bw)

    def __rsub__(self, other):
        return as_tensor(other) - self

    def __neg__(self):
        a = self
        return Tensor._make(-a.data, (a,), lambda g: a._accum(-g))

    def __mul__(self, other):
        other = as_tensor(other)
        a, b = self, other

        def bw(g):
            if a.requires_grad:
                a._accum(_unbroadcast(g * b.data, a.shape))
            if b.requires_grad:
                b._accum(_unbroadcast(g * a.data, b.shape))

        return Tensor._make(a.data * b.data, (a, b), bw)

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = as_tensor(other)
        a, b = self, other
        out = a.data / b.data

        def bw(g):
            if a.requires_grad:
                a._accum(_unbroadcast(g / b.data, a.shape))
            if b.requires_grad:
                b._accum(_unbroadcast(-g * out / b.data, b.shape))

        return Tensor._make(out, (a, b), bw)

    def __rtruediv__(self, other):
        return as_tensor(other) / self

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        a = self
        parts = idx if isinstance(idx, tuple) else (idx,)
        basic = all(isinstance(i, (int, slice)) or i is None or i is Ellipsis for i in parts)

        def bw(g):
            full = np.zeros_like(a.data)
            if basic:
                full[idx] += g  # basic indexing never repeats an element
            else:
                np.add.at(full, idx, g)
            a._accum(full)

        return Tensor._make(a.data[idx], (a,), bw)

    # -- reductions and reshapes --------------------------------------------
    def sum(self, axis=None, keepdims: bool = False):
        a = self

        def bw(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            a._accum(np.broadcast_to(g, a.shape))

        return Tensor._make(a.data.sum(axis=axis, keepdims=keepdims), (a,), bw)

    def mean(self, axis=None, keepdims: bool = False):
        n = self.data.size if axis is None else np.prod([self.shape[i] for i in np.atleast_1d(axis)])
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / float(n))

    def reshape(self, *shape):
        a = self
        if len(shape) == 1 and isinstance(shape[0], tuple):
            shape = shape[0]
        return Tensor._make(a.data.reshape(shape), (a,), lambda g: a._accum(g.reshape(a.shape)))

    def transpose(self, *axes):
        a = self
        if not axes:
            axes = tuple(reversed(range(a.ndim)))
        inv = np.argsort(axes)
        return Tensor._make(a.data.transpose(axes), (a,), lambda g: a._accum(g.transpose(inv)))

    @property
    def T(self):
        return self.transpose()

    # -- elementwise nonlinearities -----------------------------------------
    def exp(self):
        a = self
        out = np.exp(a.data)
        return Tensor._make(out, (a,), lambda g: a._accum(g * out))

    def log(self):
        a = self
        return Tensor._make(np.log(a.data), (a,), lambda g: a._accum(g / a.data))

    def sqrt(self):
        a = self
        out = np.sqrt(a.data)
        return Tensor._make(out, (a,), lambda g: a._accum(g * 0.5 / out))

    def relu(self):
        a = self
        keep = a.data > 0
        return Tensor._make(np.where(keep, a.data, 0.0), (a,), lambda g: a._accum(g * keep))

    def softplus(self):
        a = self
        out = np.logaddexp(0.0, a.data)
        return Tensor._make(out, (a,), lambda g: a._accum(g * _sigmoid(a.data)))

    def log_sigmoid(self):
        """log(sigmoid(x)) evaluated as -softplus(-x)."""
        a = self
        out = -np.logaddexp(0.0, -a.data)
        return Tensor._make(out, (a,), lambda g: a._accum(g * _sigmoid(-a.data)))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def matmul(a, b) -> Tensor:
    """Matrix product, batched over leading axes like ``np.matmul``.

    Raises:
        DimensionError: if the contracted dimensions differ.
    """
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"cannot multiply shapes {a.shape} and {b.shape}")

    def bw(g):
        if a.requires_grad:
            if a.ndim == 2 and g.ndim > 2:
                # weight on the left of a batched operand: fold the batch axes
                a._accum(np.einsum("...ik,...jk->ij", g, b.data, optimize=True))
            elif b.ndim == 2:
                a._accum(_unbroadcast((g.reshape(-1, g.shape[-1]) @ b.data.T).reshape(g.shape[:-1] + (b.shape[0],)), a.shape))
            else:
                a._accum(_unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape))
        if b.requires_grad:
            if b.ndim == 2 and a.ndim > 2:
                k = a.shape[-1]
                b._accum(a.data.reshape(-1, k).T @ g.reshape(-1, g.shape[-1]))
            else:
                b._accum(_unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape))

    if b.ndim == 2 and a.ndim > 2:
        out = (a.data.reshape(-1, a.shape[-1]) @ b.data).reshape(a.shape[:-1] + (b.shape[1],))
    else:
        out = a.data @ b.data
    return Tensor._make(out, (a, b), bw)


def linear(x, w, b=None) -> Tensor:
    """``x @ w + b`` over the last axis of ``x`` as one op; ``w`` is (in, out)."""
    x, w = as_tensor(x), as_tensor(w)
    if w.ndim != 2 or x.shape[-1] != w.shape[0]:
        raise DimensionError(f"cannot multiply shapes {x.shape} and {w.shape}")
    b = as_tensor(b) if b is not None else None
    x2 = x.data.reshape(-1, w.shape[0])
    out = x2 @ w.data
    if b is not None:
        out += b.data
    out_shape = x.shape[:-1] + (w.shape[1],)

    def bw(g):
        g2 = g.reshape(-1, w.shape[1])
        if x.requires_grad:
            x._accum((g2 @ w.data.T).reshape(x.shape))
        if w.requires_grad:
            w._accum(x2.T @ g2)
        if b is not None and b.requires_grad:
            b._accum(g2.sum(axis=0))

    parents = (x, w) if b is None else (x, w, b)
    return Tensor._make(out.reshape(out_shape), parents, bw)


def _row_sums(a: np.ndarray) -> np.ndarray:
    # GEMV is much faster than a ufunc reduce over a short trailing axis
    return (a.reshape(-1, a.shape[-1]) @ np.ones(a.shape[-1])).reshape(a.shape[:-1] + (1,))


def _masked_softmax(s: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """Row softmax of ``s + bias``; ``s`` is overwritten with the biased scores.

    Each row is shifted by its own diagonal score when that entry is allowed
    (cheaper than a row max, and the row sum is then at least 1); rows that
    overflow are redone with their max. No row depends on any other row.
    """
    s += bias
    dg = np.diagonal(s, axis1=-2, axis2=-1)[..., None] if s.shape[-1] == s.shape[-2] else None
    if dg is None or not np.isfinite(dg).all():
        e = s - s.max(axis=-1, keepdims=True)
        np.exp(e, out=e)
        e /= _row_sums(e)
        return e
    e = s - dg
    with np.errstate(over="ignore"):
        np.exp(e, out=e)
        tot = _row_sums(e)
    bad = ~np.isfinite(tot[..., 0])
    if bad.any():
        rows = s[bad]
        er = np.exp(rows - rows.max(axis=-1, keepdims=True))
        e[bad] = er
        tot[bad] = er.sum(axis=-1, keepdims=True)
    e /= tot
    return e


def concat(parts, axis: int = -1) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    out = np.concatenate([p.data for p in parts], axis=axis)
    bounds = np.cumsum([p.shape[axis] for p in parts])[:-1]

    def bw(g):
        for p, gp in zip(parts, np.split(g, bounds, axis=axis)):
            p._accum(gp)

    return Tensor._make(out, tuple(parts), bw)


def multihead_attention(qkv, heads: int, bias: np.ndarray) -> Tensor:
    """softmax(Q K^T / sqrt(d/h) + bias) V per head, heads concatenated back to (B, L, d).

    ``qkv`` packs the query, key and value projections as (B, L, 3d);
    ``bias`` is an additive (B, 1, L, L) mask (0 or -inf, or a boolean
    ``allowed`` array). Every query row must admit at least one key.
    """
    qkv = as_tensor(qkv)
    B, L, d3 = qkv.shape
    d = d3 // 3
    if d3 != 3 * d or d % heads:
        raise DimensionError(f"packed width {d3} does not split into 3 x {heads} heads")
    if bias.dtype == bool:
        bias = np.where(bias, 0.0, -np.inf)
    dh = d // heads
    scale = 1.0 / math.sqrt(dh)
    # (3, B, h, L, dh) views into the packed projections
    QKV = qkv.data.reshape(B, L, 3, heads, dh).transpose(2, 0, 3, 1, 4)
    Q, K, V = QKV[0], QKV[1], QKV[2]
    S = Q @ K.transpose(0, 1, 3, 2)
    S *= scale
    Pm = _masked_softmax(S, bias)
    O = Pm @ V
    out = O.transpose(0, 2, 1, 3).reshape(B, L, d)

    def bw(g):
        dO = g.reshape(B, L, heads, dh).transpose(0, 2, 1, 3)
        grad = np.empty((B, L, 3, heads, dh))
        gv = grad.transpose(2, 0, 3, 1, 4)
        np.matmul(Pm.transpose(0, 1, 3, 2), dO, out=gv[2])
        dS = dO @ V.transpose(0, 1, 3, 2)
        dS -= _row_sums(dS * Pm)
        dS *= Pm
        dS *= scale
        np.matmul(dS, K, out=gv[0])
        np.matmul(dS.transpose(0, 1, 3, 2), Q, out=gv[1])
        qkv._accum(grad.reshape(B, L, d3))

    return Tensor._make(out, (qkv,), bw)


def index_add(out: np.ndarray, idx: np.ndarray, rows: np.ndarray) -> np.ndarray:
    """``out[idx[i]] += rows[i]`` with repeated indices summed (like ``np.add.at``)."""
    idx = np.asarray(idx, dtype=np.int64).reshape(-1)
    if idx.size == 0:
        return out
    rows = rows.reshape(idx.size, -1)
    order = np.argsort(idx, kind="stable")
    s = idx[order]
    starts = np.flatnonzero(np.concatenate(([True], s[1:] != s[:-1])))
    sums = np.add.reduceat(rows[order], starts, axis=0)
    flat = out.reshape(out.shape[0], -1)
    assert np.shares_memory(flat, out), "index_add needs a contiguous target"
    flat[s[starts]] += sums
    return out


def gather_rows(table: Tensor, idx: np.ndarray) -> Tensor:
    """Embedding lookup ``table[idx]`` with a scatter-add backward."""
    idx = np.asarray(idx, dtype=np.int64)

    def bw(g):
        full = np.zeros_like(table.data)
        index_add(full, idx, g)
        table._accum(full)

    return Tensor._make(table.data[idx], (table,), bw)


def softmax_rows(m, mask: np.ndarray | None = None) -> Tensor:
    """Softmax along the last axis with max subtraction.

    ``mask`` (broadcastable boolean) marks allowed entries; disallowed ones
    get probability 0. Every row must allow at least one entry.
    """
    m = as_tensor(m)
    x = m.data
    if mask is not None:
        x = np.where(mask, x, -np.inf)
    z = x - x.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)

    def bw(g):
        m._accum(y * (g - (g * y).sum(axis=-1, keepdims=True)))

    return Tensor._make(y, (m,), bw)


def logsumexp_rows(m) -> Tensor:
    """log(sum(exp(x))) over the last axis, stabilised by the row max."""
    m = as_tensor(m)
    mx = m.data.max(axis=-1, keepdims=True)
    e = np.exp(m.data - mx)
    s = e.sum(axis=-1, keepdims=True)
    out = (np.log(s) + mx)[..., 0]
    y = e / s

    def bw(g):
        m._accum(g[..., None] * y)

    return Tensor._make(out, (m,), bw)


def layer_norm(x, gamma, beta, eps: float = 1e-8) -> Tensor:
    """Normalise the last axis to zero mean / unit variance, then scale-shift."""
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    n = x.shape[-1]
    if gamma.shape != (n,) or beta.shape != (n,):
        raise DimensionError(f"layer_norm params {gamma.shape}/{beta.shape} for width {n}")
    if eps <= 0:
        raise ConfigError("layer_norm eps must be positive")
    mean = lambda a: _row_sums(a) * (1.0 / n)  # noqa: E731
    xc = x.data - mean(x.data)
    inv = 1.0 / np.sqrt(mean(xc * xc) + eps)
    xhat = xc * inv
    out = xhat * gamma.data + beta.data

    def bw(g):
        g2 = g.reshape(-1, n)
        if gamma.requires_grad:
            gamma._accum((g * xhat).reshape(-1, n).sum(axis=0))
        if beta.requires_grad:
            beta._accum(g2.sum(axis=0))
        if x.requires_grad:
            dxh = g * gamma.data
            x._accum(inv * (dxh - mean(dxh) - xhat * mean(dxh * xhat)))

    return Tensor._make(out, (x, gamma, beta), bw)


def dropout(x, rate: float, training: bool, rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout: identity in eval mode, kept entries scaled by 1/(1-rate)."""
    if not 0.0 <= rate < 1.0:
        raise ConfigError(f"dropout rate must be in [0, 1), got {rate}")
    x = as_tensor(x)
    if not training or rate == 0.0:
        return x
    if rng is None:
        raise ContractError("training-mode dropout needs an explicit rng")
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return x * keep


def _topo(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
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


def backward(loss: Tensor) -> dict[Tensor, np.ndarray]:
    """Replay the recorded graph from a scalar ``loss``.

    Returns a mapping from every leaf tensor with ``requires_grad`` to its
    gradient (same shape as the leaf); the gradients are also left in
    ``leaf.grad``.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    order = _topo(loss)
    for node in order:
        if node._parents:
            node.grad = None
            node._owns_grad = False
    loss.grad = np.ones_like(loss.data)
    leaves = {}
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)
        if not node._parents and node.requires_grad:
            if node.grad is None:
                node.grad = np.zeros_like(node.data)
            elif not node._owns_grad:
                node.grad = np.array(node.grad, dtype=DTYPE)
            node._owns_grad = True
            leaves[node] = node.grad
    return leaves


class Adam:
    """Adam with bias correction over a dict of named float64 arrays.

    Parameters are updated in place; moment buffers are created lazily with
    each parameter's shape.
    """

    def __init__(self, lr: float = 1e-6, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        if lr <= 0:
            raise ConfigError("learning rate must be positive")
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t = 0

    def step(self, params: Mapping[str, np.ndarray], grads: Mapping[str, np.ndarray]) -> None:
        for k, g in grads.items():
            if params[k].shape != g.shape:
                raise DimensionError(f"gradient for {k!r} has shape {g.shape}, parameter {params[k].shape}")
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for k, g in grads.items():
            if k not in self.m:
                self.m[k] = np.zeros_like(params[k])
                self.v[k] = np.zeros_like(params[k])
            m, v = self.m[k], self.v[k]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            params[k] -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


def finite_difference(f: Callable[[], float], array: np.ndarray, h: float = 1e-4,
                      entries: Iterable[tuple] | None = None) -> np.ndarray:
    """Central differences of ``f`` w.r.t. ``array`` (perturbed in place).

    Entries not listed in ``entries`` are left 0.
    """
    out = np.zeros_like(array)
    it = entries if entries is not None else np.ndindex(*array.shape)
    for ix in it:
        orig = array[ix]
        array[ix] = orig + h
        fp = f()
        array[ix] = orig - h
        fm = f()
        array[ix] = orig
        out[ix] = (fp - fm) / (2.0 * h)
    return out


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-8) -> float:
    """Largest elementwise |a-n|/max(|a|,|n|) over entries with |a| > floor."""
    a, n = np.asarray(analytic), np.asarray(numeric)
    sel = np.abs(a) > floor
    if not sel.any():
        return 0.0
    denom = np.maximum(np.abs(a[sel]), np.abs(n[sel]))
    return float(np.max(np.abs(a[sel] - n[sel]) / denom))


SQRT_2PI = math.sqrt(2.0 * math.pi)
