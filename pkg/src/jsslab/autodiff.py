"""Small reverse-mode automatic differentiation on numpy arrays.

Just enough to train the scheduling networks: affine maps, layer norm,
leaky ReLU, masked softmax, neighbour averaging and a handful of elementwise
and reduction ops.  Everything is float64.  Arrays may carry leading batch
dimensions; matrix ops act on the last two axes.
"""
from __future__ import annotations

import contextlib
import json
import os
import struct
import tempfile
from typing import Callable, Iterable, Mapping, Optional, Sequence

import numpy as np

_grad_enabled = True


class ShapeError(ValueError):
    pass


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (rollouts, evaluation)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad = np.zeros_like(self.data) if requires_grad else None
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Optional[Callable] = None

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}{', grad' if self.requires_grad else ''})"

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self):
        if self.grad is not None:
            self.grad[...] = 0.0

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(as_tensor(other)))

    def __rsub__(self, other):
        return add(as_tensor(other), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis, keepdims)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data: np.ndarray, parents: Sequence[Tensor], backward: Callable) -> Tensor:
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _check_finite(data: np.ndarray, where: str) -> np.ndarray:
    if not np.all(np.isfinite(data)):
        raise FloatingPointError(f"non-finite values produced by {where}")
    return data


# --- elementwise -----------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _node(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def neg(a: Tensor) -> Tensor:
    return _node(-a.data, (a,), lambda g: (-g,))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _node(a.data * b.data, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def exp(a: Tensor) -> Tensor:
    y = np.exp(a.data)
    return _node(y, (a,), lambda g: (g * y,))


def log(a: Tensor) -> Tensor:
    return _node(np.log(a.data), (a,), lambda g: (g / a.data,))


def square(a: Tensor) -> Tensor:
    return _node(a.data ** 2, (a,), lambda g: (2.0 * g * a.data,))


def leaky_relu(x: Tensor, slope: float = 0.01) -> Tensor:
    pos = x.data > 0
    y = np.where(pos, x.data, slope * x.data)
    return _node(_check_finite(y, "leaky_relu"), (x,), lambda g: (np.where(pos, g, slope * g),))


# --- shape ops ----------------------------------------------------------------------


def reshape(a: Tensor, shape) -> Tensor:
    old = a.shape
    return _node(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def transpose(a: Tensor) -> Tensor:
    """Swap the last two axes."""
    return _node(np.swapaxes(a.data, -1, -2).copy(), (a,), lambda g: (np.swapaxes(g, -1, -2),))


def broadcast_to(a: Tensor, shape) -> Tensor:
    old = a.shape
    return _node(np.broadcast_to(a.data, shape).copy(), (a,), lambda g: (_unbroadcast(g, old),))


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g):
        return tuple(np.split(g, sizes, axis=axis))

    return _node(data, tensors, backward)


def take(a: Tensor, index: np.ndarray, axis: int = -1) -> Tensor:
    """``np.take_along_axis`` with ``index`` having a size-1 ``axis``."""
    index = np.asarray(index)
    data = np.take_along_axis(a.data, index, axis=axis)

    def backward(g):
        ga = np.zeros_like(a.data)
        np.put_along_axis(ga, index, g, axis=axis)
        return (ga,)

    return _node(data, (a,), backward)


# --- reductions ---------------------------------------------------------------------


def tsum(a: Tensor, axis=None, keepdims=False) -> Tensor:
    shape = a.shape

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _node(np.sum(a.data, axis=axis, keepdims=keepdims), (a,), backward)


def tmean(a: Tensor, axis=None, keepdims=False) -> Tensor:
    n = a.data.size if axis is None else np.prod([a.shape[ax] for ax in np.atleast_1d(axis)])
    return mul(tsum(a, axis, keepdims), 1.0 / n)


# --- linear algebra -----------------------------------------------------------------


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if b.data.ndim < 2:
        raise ShapeError(f"matmul needs a matrix on the right, got {b.shape}")
    if a.data.ndim == 1:
        out = matmul(reshape(a, (1, -1)), b)
        return reshape(out, out.shape[:-2] + out.shape[-1:])
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul shape mismatch {a.shape} @ {b.shape}")
    data = a.data @ b.data

    def backward(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _node(data, (a, b), backward)


def affine(x: Tensor, W: Tensor, b: Tensor) -> Tensor:
    """``x @ W + b`` over the last axis."""
    if x.shape[-1] != W.shape[0] or W.shape[-1] != b.shape[-1]:
        raise ShapeError(f"affine shape mismatch x{x.shape} W{W.shape} b{b.shape}")
    out = add(matmul(x, W), b)
    _check_finite(out.data, "affine")
    return out


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then scale and shift."""
    if gain.shape[-1] != x.shape[-1] or bias.shape[-1] != x.shape[-1]:
        raise ShapeError(f"layer_norm shape mismatch x{x.shape} gain{gain.shape}")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc ** 2).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    y = _check_finite(xhat * gain.data + bias.data, "layer_norm")

    def backward(g):
        gx_hat = g * gain.data
        gx = inv * (gx_hat - gx_hat.mean(axis=-1, keepdims=True)
                    - xhat * (gx_hat * xhat).mean(axis=-1, keepdims=True))
        return gx, _unbroadcast(g * xhat, gain.shape), _unbroadcast(g, bias.shape)

    return _node(y, (x, gain, bias), backward)


def _check_mask(scores: Tensor, mask: np.ndarray) -> np.ndarray:
    mask = np.broadcast_to(np.asarray(mask, dtype=bool), scores.shape)
    if not np.all(mask.any(axis=-1)):
        raise ValueError("masked softmax: a row has no unmasked entry")
    return mask


def masked_softmax(scores: Tensor, mask: np.ndarray) -> Tensor:
    """Softmax over the last axis; masked-out entries get probability exactly 0."""
    mask = _check_mask(scores, mask)
    z = np.where(mask, scores.data, -np.inf)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.where(mask, np.exp(z), 0.0)
    p = _check_finite(e / e.sum(axis=-1, keepdims=True), "masked_softmax")

    def backward(g):
        return (p * (g - (g * p).sum(axis=-1, keepdims=True)),)

    return _node(p, (scores,), backward)


def masked_log_softmax(scores: Tensor, mask: np.ndarray) -> Tensor:
    """Log-softmax over the last axis; masked entries are set to 0 (not -inf)."""
    mask = _check_mask(scores, mask)
    z = np.where(mask, scores.data, -np.inf)
    z = z - z.max(axis=-1, keepdims=True)
    lse = np.log(np.where(mask, np.exp(z), 0.0).sum(axis=-1, keepdims=True))
    out = np.where(mask, z - lse, 0.0)
    p = np.where(mask, np.exp(out), 0.0)

    def backward(g):
        g = np.where(mask, g, 0.0)
        return (g - p * g.sum(axis=-1, keepdims=True),)

    return _node(_check_finite(out, "masked_log_softmax"), (scores,), backward)


def normalize_adjacency(adjacency: np.ndarray) -> np.ndarray:
    """Row-normalize; rows without neighbours stay zero."""
    a = np.asarray(adjacency, dtype=np.float64)
    deg = a.sum(axis=-1, keepdims=True)
    return np.divide(a, deg, out=np.zeros_like(a), where=deg > 0)


def mean_neighbors(x: Tensor, adjacency: np.ndarray, normalized: bool = False) -> Tensor:
    """Average of each node's neighbour rows (zero vector for isolated nodes)."""
    a = adjacency if normalized else normalize_adjacency(adjacency)
    if a.shape[-1] != x.shape[-2]:
        raise ShapeError(f"adjacency {a.shape} does not match nodes {x.shape}")
    return matmul(Tensor(a), x)


def masked_mean(x: Tensor, mask: np.ndarray, axis: int = -2) -> Tensor:
    """Mean over ``axis`` of the rows selected by boolean ``mask`` (shape of x without last axis)."""
    m = np.asarray(mask, dtype=np.float64)[..., None]
    count = m.sum(axis=axis, keepdims=True)
    if np.any(count == 0):
        raise ValueError("masked_mean over an empty set")
    return tsum(mul(x, m * (1.0 / count)), axis=axis)


# --- backward -----------------------------------------------------------------------


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every leaf that requires it."""
    if loss.data.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    order: list[Tensor] = []
    seen: set[int] = set()
    stack = [(loss, False)]
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
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad += g
            continue
        for p, gp in zip(node._parents, node._backward(g)):
            if gp is None or not p.requires_grad:
                continue
            if id(p) in grads:
                grads[id(p)] = grads[id(p)] + gp
            else:
                grads[id(p)] = gp


# --- parameters and optimizer ---------------------------------------------------------


class ParamStore:
    """Named parameters plus adaptive-moment optimizer state."""

    def __init__(self):
        self.params: dict[str, Tensor] = {}
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.step_count = 0

    def add(self, name: str, value) -> Tensor:
        if name in self.params:
            raise KeyError(f"duplicate parameter name {name!r}")
        t = Tensor(np.array(value, dtype=np.float64), requires_grad=True, name=name)
        self.params[name] = t
        self.m[name] = np.zeros_like(t.data)
        self.v[name] = np.zeros_like(t.data)
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def __iter__(self):
        return iter(self.params.items())

    def __len__(self):
        return len(self.params)

    def zero_grad(self):
        for t in self.params.values():
            t.zero_grad()

    def grad_norm(self) -> float:
        return float(np.sqrt(sum(float((t.grad ** 2).sum()) for t in self.params.values())))

    def arrays(self) -> dict[str, np.ndarray]:
        return {k: t.data for k, t in self.params.items()}

    def load_arrays(self, arrays: Mapping[str, np.ndarray], prefix: str = "") -> None:
        for k, t in self.params.items():
            src = arrays[prefix + k]
            if src.shape != t.shape:
                raise ShapeError(f"parameter {k}: checkpoint shape {src.shape} != {t.shape}")
            t.data[...] = src


def optimizer_step(store: ParamStore, lr: float, clip: Optional[float] = 0.5,
                   beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> float:
    """One bias-corrected adaptive-moment update; returns the pre-clip grad norm."""
    norm = store.grad_norm()
    scale = clip / norm if clip is not None and norm > clip else 1.0
    store.step_count += 1
    t = store.step_count
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for k, p in store.params.items():
        g = p.grad * scale
        store.m[k] = beta1 * store.m[k] + (1.0 - beta1) * g
        store.v[k] = beta2 * store.v[k] + (1.0 - beta2) * g * g
        p.data -= lr * (store.m[k] / c1) / (np.sqrt(store.v[k] / c2) + eps)
    return norm


# --- checkpoint file ---------------------------------------------------------------------

_MAGIC = b"JSLCKPT1"


def save_checkpoint(path, tensors: Mapping[str, np.ndarray], meta: Optional[dict] = None) -> None:
    """Write named float64 tensors (little-endian) behind a JSON header, atomically.

    Layout: 8-byte magic, uint64 LE header length, UTF-8 JSON header, payload.
    """
    entries = []
    payload = []
    offset = 0
    for name, arr in tensors.items():
        buf = np.ascontiguousarray(arr, dtype="<f8").tobytes()
        entries.append({"name": name, "shape": list(np.shape(arr)), "offset": offset, "nbytes": len(buf)})
        payload.append(buf)
        offset += len(buf)
    header = json.dumps({"meta": meta or {}, "tensors": entries}, sort_keys=True).encode()
    atomic_write(path, _MAGIC + struct.pack("<Q", len(header)) + header + b"".join(payload))


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:8] != _MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    (hlen,) = struct.unpack("<Q", raw[8:16])
    header = json.loads(raw[16:16 + hlen])
    base = 16 + hlen
    out = {}
    for e in header["tensors"]:
        chunk = raw[base + e["offset"]: base + e["offset"] + e["nbytes"]]
        out[e["name"]] = np.frombuffer(chunk, dtype="<f8").reshape(e["shape"]).astype(np.float64)
    return out, header["meta"]


def atomic_write(path, data: bytes) -> None:
    path = os.fspath(path)
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def parameters(*stores: ParamStore) -> Iterable[Tensor]:
    for s in stores:
        yield from s.params.values()
