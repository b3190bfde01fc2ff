"""Dense float64 tensors with reverse-mode automatic differentiation.

Everything trainable in this library lives in these Tensors: model weights,
adapter weights, soft prompts, and the k-v caches flowing between models.
Forward ops record a graph node when any input requires gradients; calling
``backward()`` on a scalar accumulates gradients into every reachable tensor
marked ``requires_grad``. Gradients accumulate across backward calls until
explicitly zeroed, matching the usual training-loop idiom.

Data is stored row-major in 64-bit floats. There is no view aliasing except
through ``reshape``, which shares the underlying buffer.
"""

from __future__ import annotations

import math
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import erf as _erf

from .errors import ContractError, InputError, NumericError, ShapeError
from .hashing import derive_seed

__all__ = [
    "Tensor",
    "Rng",
    "matmul",
    "add",
    "sub",
    "mul",
    "power",
    "exp",
    "log",
    "tanh",
    "gelu",
    "layer_norm",
    "rms_norm",
    "softmax_last",
    "softmax_cross_entropy",
    "embedding",
    "rope_rotate",
    "reshape",
    "transpose",
    "concat",
    "concat_last",
    "select_index",
    "slice_axis",
    "broadcast_to",
    "tsum",
    "tmean",
    "zero_grads",
    "grad_check",
]

_GELU_C = math.sqrt(2.0 / math.pi)
_GELU_A = 0.044715


class Node:
    """Graph record: the op that produced a tensor, its parents, and a vjp."""

    __slots__ = ("op", "parents", "grad_fn")

    def __init__(self, op: str, parents: tuple, grad_fn: Callable):
        self.op = op
        self.parents = parents
        self.grad_fn = grad_fn


class Tensor:
    """A dense float64 array plus optional gradient and graph node."""

    __slots__ = ("data", "grad", "node", "requires_grad")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        if not arr.flags["C_CONTIGUOUS"]:
            arr = np.ascontiguousarray(arr)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.node: Node | None = None
        self.requires_grad = bool(requires_grad)

    @classmethod
    def _wrap(cls, arr: np.ndarray) -> "Tensor":
        # fast path for op outputs known to be fresh, contiguous float64
        t = cls.__new__(cls)
        t.data = arr
        t.grad = None
        t.node = None
        t.requires_grad = False
        return t

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor._wrap(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        """Accumulate d(self)/d(leaf) into ``leaf.grad`` for every reachable
        leaf tensor marked ``requires_grad``.

        ``self`` must be a scalar with a graph. Each graph node is visited
        exactly once; repeated calls without zeroing add gradients together.
        """
        if self.data.shape != ():
            raise ContractError(
                f"backward requires a scalar, got shape {self.data.shape}"
            )
        if not (self.requires_grad or self.node is not None):
            raise ContractError("backward on a tensor with no graph")

        topo: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            t, expanded = stack.pop()
            if expanded:
                topo.append(t)
                continue
            if id(t) in visited:
                continue
            visited.add(id(t))
            stack.append((t, True))
            if t.node is not None:
                for p in t.node.parents:
                    if id(p) not in visited and (p.node is not None or p.requires_grad):
                        stack.append((p, False))

        grads: dict[int, np.ndarray] = {id(self): np.ones((), dtype=np.float64)}
        for t in reversed(topo):
            g = grads.pop(id(t), None)
            if g is None:
                continue
            if t.node is None:
                if t.requires_grad:
                    t.grad = g.copy() if t.grad is None else t.grad + g
                continue
            parent_grads = t.node.grad_fn(g)
            for p, pg in zip(t.node.parents, parent_grads):
                if pg is None or not (p.requires_grad or p.node is not None):
                    continue
                acc = grads.get(id(p))
                grads[id(p)] = pg if acc is None else acc + pg

    # -- operator sugar -------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            return mul(self, power(other, -1.0))
        return mul(self, 1.0 / float(other))

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, p):
        return power(self, p)

    def reshape(self, new_shape) -> "Tensor":
        return reshape(self, new_shape)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


class Rng:
    """Seedable random stream: same seed + same call sequence, same values."""

    def __init__(self, seed: int):
        self.seed = int(seed)
        self._gen = np.random.Generator(np.random.PCG64(self.seed))

    def derive(self, tag: str) -> "Rng":
        """Independent child stream for a named purpose."""
        return Rng(derive_seed(self.seed, tag))

    def normal(self, shape, std: float = 1.0) -> np.ndarray:
        return self._gen.normal(0.0, std, size=shape)

    def uniform(self, shape) -> np.ndarray:
        return self._gen.random(size=shape)

    def integers(self, low: int, high: int, shape=None) -> np.ndarray:
        return self._gen.integers(low, high, size=shape)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def choice(self, n: int, size: int, replace: bool = True) -> np.ndarray:
        return self._gen.choice(n, size=size, replace=replace)


def _as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=np.float64))


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``g`` down to ``shape`` (adjoint of numpy broadcasting)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _make(data: np.ndarray, op: str, parents: tuple, grad_fn: Callable) -> Tensor:
    arr = np.asarray(data, dtype=np.float64)
    if not arr.flags["C_CONTIGUOUS"]:
        arr = np.ascontiguousarray(arr)
    out = Tensor._wrap(arr)
    if any(p.requires_grad or p.node is not None for p in parents):
        out.requires_grad = True
        out.node = Node(op, parents, grad_fn)
    return out


# -- elementwise arithmetic ----------------------------------------------


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = a.data + b.data

    def grad_fn(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return _make(out, "add", (a, b), grad_fn)


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = a.data - b.data

    def grad_fn(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)

    return _make(out, "sub", (a, b), grad_fn)


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = a.data * b.data

    def grad_fn(g):
        return (
            _unbroadcast(g * b.data, a.data.shape),
            _unbroadcast(g * a.data, b.data.shape),
        )

    return _make(out, "mul", (a, b), grad_fn)


def power(x, p: float) -> Tensor:
    x = _as_tensor(x)
    p = float(p)
    if p == 2.0:  # hot path: float pow is much slower than a multiply
        out = x.data * x.data

        def grad_fn(g):
            return (g * (2.0 * x.data),)

    else:
        out = x.data**p

        def grad_fn(g):
            return (g * p * x.data ** (p - 1.0),)

    return _make(out, "power", (x,), grad_fn)


def exp(x) -> Tensor:
    x = _as_tensor(x)
    out = np.exp(x.data)

    def grad_fn(g):
        return (g * out,)

    return _make(out, "exp", (x,), grad_fn)


def log(x) -> Tensor:
    x = _as_tensor(x)
    out = np.log(x.data)

    def grad_fn(g):
        return (g / x.data,)

    return _make(out, "log", (x,), grad_fn)


def tanh(x) -> Tensor:
    x = _as_tensor(x)
    out = np.tanh(x.data)

    def grad_fn(g):
        return (g * (1.0 - out * out),)

    return _make(out, "tanh", (x,), grad_fn)


def gelu(x, exact: bool = False) -> Tensor:
    """GELU activation.

    The default is the tanh approximation
    ``0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))``; pass ``exact=True``
    for the erf form. The two agree within ~1e-3 everywhere.
    """
    x = _as_tensor(x)
    xd = x.data
    if exact:
        phi = 0.5 * (1.0 + _erf(xd / math.sqrt(2.0)))
        out = xd * phi

        def grad_fn(g):
            pdf = np.exp(-0.5 * xd * xd) / math.sqrt(2.0 * math.pi)
            return (g * (phi + xd * pdf),)

    else:
        x2 = xd * xd
        inner = _GELU_C * (xd + _GELU_A * (x2 * xd))
        t = np.tanh(inner)
        out = 0.5 * xd * (1.0 + t)

        def grad_fn(g):
            dinner = _GELU_C * (1.0 + 3.0 * _GELU_A * x2)
            d = 0.5 * (1.0 + t) + 0.5 * xd * (1.0 - t * t) * dinner
            return (g * d,)

    return _make(out, "gelu", (x,), grad_fn)


# -- matmul ----------------------------------------------------------------


def matmul(a, b) -> Tensor:
    """Batched matrix product ``...×m×k @ ...×k×n -> ...×m×n``.

    Leading dimensions broadcast; both operands must be rank >= 2.
    """
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ShapeError(
            f"matmul requires rank >= 2 operands, got {a.data.shape} and {b.data.shape}"
        )
    if a.data.shape[-1] != b.data.shape[-2]:
        raise ShapeError(
            f"matmul inner dimensions differ: {a.data.shape} vs {b.data.shape}"
        )
    try:
        out = np.matmul(a.data, b.data)
    except ValueError as e:
        raise ShapeError(
            f"matmul batch dimensions not broadcastable: {a.data.shape} vs {b.data.shape}"
        ) from e

    def grad_fn(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.data.shape), _unbroadcast(gb, b.data.shape)

    return _make(out, "matmul", (a, b), grad_fn)


# -- shape manipulation ------------------------------------------------------


def reshape(x, new_shape) -> Tensor:
    x = _as_tensor(x)
    new_shape = tuple(int(n) for n in new_shape)
    if int(np.prod(new_shape, dtype=np.int64)) != x.data.size:
        raise ShapeError(
            f"cannot reshape {x.data.shape} ({x.data.size} elements) to {new_shape}"
        )
    out = x.data.reshape(new_shape)

    def grad_fn(g):
        return (g.reshape(x.data.shape),)

    return _make(out, "reshape", (x,), grad_fn)


def transpose(x, axes: Sequence[int]) -> Tensor:
    x = _as_tensor(x)
    axes = tuple(axes)
    inv = np.argsort(axes)
    out = np.ascontiguousarray(np.transpose(x.data, axes))

    def grad_fn(g):
        return (np.ascontiguousarray(np.transpose(g, inv)),)

    return _make(out, "transpose", (x,), grad_fn)


def concat(parts: Sequence, axis: int = -1) -> Tensor:
    parts = [_as_tensor(p) for p in parts]
    if not parts:
        raise ShapeError("concat of an empty list")
    ref = parts[0].data.shape
    ax = axis % len(ref) if len(ref) else 0
    for p in parts[1:]:
        s = p.data.shape
        if len(s) != len(ref) or any(
            i != ax and s[i] != ref[i] for i in range(len(ref))
        ):
            raise ShapeError(
                f"concat parts disagree off-axis: {[tuple(q.data.shape) for q in parts]}"
            )
    out = np.concatenate([p.data for p in parts], axis=ax)
    sizes = [p.data.shape[ax] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def grad_fn(g):
        pieces = []
        for i in range(len(parts)):
            idx = [slice(None)] * g.ndim
            idx[ax] = slice(int(offsets[i]), int(offsets[i + 1]))
            pieces.append(np.ascontiguousarray(g[tuple(idx)]))
        return tuple(pieces)

    return _make(out, "concat", tuple(parts), grad_fn)


def concat_last(parts: Sequence) -> Tensor:
    """Concatenate along the last dimension, preserving order."""
    return concat(parts, axis=-1)


def select_index(x, axis: int, index: int) -> Tensor:
    """Pick one slice along ``axis``, dropping that axis."""
    x = _as_tensor(x)
    ax = axis % x.data.ndim
    out = np.ascontiguousarray(np.take(x.data, index, axis=ax))

    def grad_fn(g):
        full = np.zeros(x.data.shape, dtype=np.float64)
        idx = [slice(None)] * x.data.ndim
        idx[ax] = index
        full[tuple(idx)] = g
        return (full,)

    return _make(out, "select_index", (x,), grad_fn)


def slice_axis(x, axis: int, start: int, stop: int) -> Tensor:
    x = _as_tensor(x)
    ax = axis % x.data.ndim
    idx = [slice(None)] * x.data.ndim
    idx[ax] = slice(start, stop)
    out = np.ascontiguousarray(x.data[tuple(idx)])

    def grad_fn(g):
        full = np.zeros(x.data.shape, dtype=np.float64)
        full[tuple(idx)] = g
        return (full,)

    return _make(out, "slice_axis", (x,), grad_fn)


def broadcast_to(x, shape) -> Tensor:
    x = _as_tensor(x)
    shape = tuple(int(n) for n in shape)
    out = np.broadcast_to(x.data, shape)

    def grad_fn(g):
        return (_unbroadcast(g, x.data.shape),)

    return _make(out, "broadcast_to", (x,), grad_fn)


# -- reductions --------------------------------------------------------------


def tsum(x, axis=None, keepdims: bool = False) -> Tensor:
    x = _as_tensor(x)
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def grad_fn(g):
        if axis is None:
            return (np.broadcast_to(g, x.data.shape).copy(),)
        if not keepdims:
            axes = (axis,) if isinstance(axis, int) else tuple(axis)
            axes = tuple(a % x.data.ndim for a in axes)
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, x.data.shape).copy(),)

    return _make(out, "sum", (x,), grad_fn)


def tmean(x, axis=None, keepdims: bool = False) -> Tensor:
    x = _as_tensor(x)
    if axis is None:
        count = x.data.size
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        count = int(np.prod([x.data.shape[a % x.data.ndim] for a in axes]))
    return mul(tsum(x, axis=axis, keepdims=keepdims), 1.0 / count)


# -- normalization -----------------------------------------------------------


def layer_norm(x, gain, bias, eps: float = 1e-6) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then affine.

    ``eps`` is added to the variance, so a constant row normalizes to zeros.
    """
    x, gain, bias = _as_tensor(x), _as_tensor(gain), _as_tensor(bias)
    d = x.data.shape[-1] if x.data.ndim else 0
    if d < 1:
        raise ShapeError(f"layer_norm needs a non-empty last axis, got {x.data.shape}")
    if gain.data.shape != (d,) or bias.data.shape != (d,):
        raise ShapeError(
            f"layer_norm gain/bias must have shape ({d},), got "
            f"{gain.data.shape} and {bias.data.shape}"
        )
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gain.data + bias.data

    def grad_fn(g):
        dxhat = g * gain.data
        m1 = dxhat.mean(axis=-1, keepdims=True)
        m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
        dx = inv * (dxhat - m1 - xhat * m2)
        lead = tuple(range(g.ndim - 1))
        dg = (g * xhat).sum(axis=lead)
        db = g.sum(axis=lead)
        return dx, dg, db

    return _make(out, "layer_norm", (x, gain, bias), grad_fn)


def rms_norm(x, gain, eps: float = 1e-6) -> Tensor:
    """Scale the last axis by its root-mean-square, then multiply by gain."""
    x, gain = _as_tensor(x), _as_tensor(gain)
    d = x.data.shape[-1] if x.data.ndim else 0
    if d < 1:
        raise ShapeError(f"rms_norm needs a non-empty last axis, got {x.data.shape}")
    if gain.data.shape != (d,):
        raise ShapeError(f"rms_norm gain must have shape ({d},), got {gain.data.shape}")
    ms = (x.data * x.data).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(ms + eps)
    out = x.data * inv * gain.data

    def grad_fn(g):
        gg = g * gain.data
        dot = (gg * x.data).mean(axis=-1, keepdims=True)
        dx = inv * gg - x.data * (inv**3) * dot
        lead = tuple(range(g.ndim - 1))
        dgain = (g * x.data * inv).sum(axis=lead)
        return dx, dgain

    return _make(out, "rms_norm", (x, gain), grad_fn)


# -- softmax family ----------------------------------------------------------


def softmax_last(x) -> Tensor:
    """Softmax over the last axis, stabilized by max subtraction."""
    x = _as_tensor(x)
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=-1, keepdims=True)

    def grad_fn(g):
        dot = (g * out).sum(axis=-1, keepdims=True)
        return (out * (g - dot),)

    return _make(out, "softmax_last", (x,), grad_fn)


def softmax_cross_entropy(logits, targets, mask) -> Tensor:
    """Mean negative log-likelihood over masked positions.

    ``logits`` has shape ``(..., V)``; ``targets`` and ``mask`` have the
    leading shape. Numerically stable via max subtraction.
    """
    logits = _as_tensor(logits)
    targets = np.asarray(targets)
    if not np.issubdtype(targets.dtype, np.integer):
        raise InputError(f"targets must be integers, got dtype {targets.dtype}")
    mask = np.asarray(mask, dtype=bool)
    lead = logits.data.shape[:-1]
    v = logits.data.shape[-1]
    if targets.shape != lead or mask.shape != lead:
        raise ShapeError(
            f"targets/mask shape {targets.shape}/{mask.shape} must match "
            f"logit positions {lead}"
        )
    if targets.size and (targets.min() < 0 or targets.max() >= v):
        raise InputError(f"targets must lie in [0, {v})")
    count = int(mask.sum())
    if count == 0:
        raise InputError("mask selects no positions; mean NLL undefined")

    z = logits.data - logits.data.max(axis=-1, keepdims=True)
    ez = np.exp(z)
    sez = ez.sum(axis=-1, keepdims=True)
    logp = z - np.log(sez)
    nll = -np.take_along_axis(logp, targets[..., None], axis=-1)[..., 0]
    out = np.asarray((nll * mask).sum() / count)

    def grad_fn(g):
        p = ez / sez
        onehot = np.zeros_like(p)
        np.put_along_axis(onehot, targets[..., None], 1.0, axis=-1)
        dl = (p - onehot) * mask[..., None] * (float(g) / count)
        return (dl,)

    return _make(out, "softmax_cross_entropy", (logits,), grad_fn)


# -- lookups and position encoding -------------------------------------------


def embedding(table, tokens) -> Tensor:
    """Row lookup ``table[tokens]`` with scatter-add gradients."""
    table = _as_tensor(table)
    tokens = np.asarray(tokens)
    if not np.issubdtype(tokens.dtype, np.integer):
        raise InputError(f"token ids must be integers, got dtype {tokens.dtype}")
    v, d = table.data.shape
    if tokens.size and (tokens.min() < 0 or tokens.max() >= v):
        raise InputError(f"token id out of range [0, {v})")
    out = table.data[tokens]

    def grad_fn(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, tokens.reshape(-1), g.reshape(-1, d))
        return (gt,)

    return _make(out, "embedding", (table,), grad_fn)


def rope_rotate(x, cos: np.ndarray, sin: np.ndarray) -> Tensor:
    """Rotary position embedding on the last axis (half-split rotation).

    ``x`` is ``(..., S, d)`` with even ``d``; ``cos``/``sin`` are constant
    arrays broadcastable to it, typically ``(S, d)``.
    """
    x = _as_tensor(x)
    d = x.data.shape[-1]
    if d % 2 != 0:
        raise ShapeError(f"rope_rotate needs an even last dim, got {d}")
    h = d // 2

    def rot(a):
        return np.concatenate([-a[..., h:], a[..., :h]], axis=-1)

    def rot_adj(a):
        return np.concatenate([a[..., h:], -a[..., :h]], axis=-1)

    out = x.data * cos + rot(x.data) * sin

    def grad_fn(g):
        return (g * cos + rot_adj(g * sin),)

    return _make(out, "rope_rotate", (x,), grad_fn)


# -- gradient utilities -------------------------------------------------------


def zero_grads(tensors: Iterable[Tensor]) -> None:
    for t in tensors:
        t.grad = None


def grad_check(f: Callable[[Tensor], Tensor], x: Tensor, eps: float = 1e-5) -> float:
    """Compare analytic gradients of ``f`` against central finite differences.

    Returns the maximum over coordinates of
    ``|analytic - fd| / (|analytic| + |fd| + 1e-12)``. ``f`` must be a
    deterministic scalar-valued function of ``x``.
    """
    if not (0.0 < eps <= 1e-2):
        raise InputError(f"eps must lie in (0, 1e-2], got {eps}")
    probe = Tensor(x.data.copy(), requires_grad=True)
    out = f(probe)
    if not isinstance(out, Tensor) or out.data.shape != ():
        raise ContractError("grad_check requires a scalar-valued function")
    if not np.isfinite(out.data):
        raise NumericError("non-finite value at unperturbed evaluation")
    if out.node is not None:
        out.backward()
    analytic = (
        probe.grad if probe.grad is not None else np.zeros_like(probe.data)
    ).reshape(-1)
    if not np.all(np.isfinite(analytic)):
        bad = int(np.flatnonzero(~np.isfinite(analytic))[0])
        raise NumericError(f"non-finite analytic gradient at coordinate {bad}")

    flat = x.data.reshape(-1).copy()
    fd = np.zeros_like(flat)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        hi = f(Tensor(flat.reshape(x.data.shape))).item()
        flat[i] = orig - eps
        lo = f(Tensor(flat.reshape(x.data.shape))).item()
        flat[i] = orig
        if not (math.isfinite(hi) and math.isfinite(lo)):
            raise NumericError(f"non-finite finite-difference value at coordinate {i}")
        fd[i] = (hi - lo) / (2.0 * eps)

    rel = np.abs(analytic - fd) / (np.abs(analytic) + np.abs(fd) + 1e-12)
    return float(rel.max()) if rel.size else 0.0
