"""Minimal reverse-mode autodiff on float64 numpy arrays.

Graphs are built per minibatch and discarded after the backward pass; there
is no persistent tape.  Parameters live in :class:`ParamSet` snapshots whose
arrays are frozen (read-only); optimizer steps produce new snapshots, so a
snapshot can be shared across rollout workers without locking.
"""

from __future__ import annotations

import hashlib
import json

import numpy as np


class ParamSet:
    """Ordered name -> float64 array container with frozen shapes."""

    def __init__(self, arrays):
        self._arrays = {}
        for name, arr in arrays.items():
            a = np.array(arr, dtype=np.float64)
            if not np.all(np.isfinite(a)):
                raise ValueError(f"parameter {name!r} contains non-finite entries")
            a.flags.writeable = False
            self._arrays[name] = a

    def __getitem__(self, name):
        return self._arrays[name]

    def __contains__(self, name):
        return name in self._arrays

    def __len__(self):
        return len(self._arrays)

    def names(self):
        return list(self._arrays)

    def items(self):
        return self._arrays.items()

    def shapes(self):
        return {k: v.shape for k, v in self._arrays.items()}

    def n_params(self):
        return sum(v.size for v in self._arrays.values())

    def copy(self):
        return ParamSet({k: v.copy() for k, v in self._arrays.items()})

    def zeros_grads(self):
        return {k: np.zeros_like(v) for k, v in self._arrays.items()}

    def replace(self, name, arr):
        new = dict(self._arrays)
        new[name] = arr
        return ParamSet(new)

    def digest(self):
        h = hashlib.sha256()
        for name in sorted(self._arrays):
            h.update(name.encode())
            h.update(self._arrays[name].tobytes())
        return h.hexdigest()


CHECKPOINT_VERSION = 1


def save_params(path, params, extra=None):
    """Write a JSON checkpoint: named shapes + flat values + version field."""
    blob = {
        "format_version": CHECKPOINT_VERSION,
        "extra": extra or {},
        "params": {
            name: {"shape": list(arr.shape), "data": arr.ravel().tolist()}
            for name, arr in params.items()
        },
    }
    with open(path, "w") as f:
        json.dump(blob, f)


def load_params(path):
    with open(path) as f:
        blob = json.load(f)
    version = blob.get("format_version")
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint format_version {version!r} in {path}")
    arrays = {
        name: np.asarray(rec["data"], dtype=np.float64).reshape(rec["shape"])
        for name, rec in blob["params"].items()
    }
    return ParamSet(arrays), blob.get("extra", {})


# ---------------------------------------------------------------------------
# computation graph


class Tensor:
    """One node of the computation graph.

    ``grad`` is lazily allocated at first accumulation; the backward pass
    visits every node exactly once in reverse topological order and never
    mutates ``data``.
    """

    __slots__ = ("data", "grad", "parents", "_backward", "op")

    def __init__(self, data, parents=(), backward=None, op="leaf"):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.parents = parents
        self._backward = backward
        self.op = op

    @property
    def shape(self):
        return self.data.shape

    def accumulate(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad = self.grad + g

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __repr__(self):
        return f"Tensor(op={self.op}, shape={self.data.shape})"


def leaf(data, op="leaf"):
    return Tensor(data, op=op)


def constant(data):
    return Tensor(data, op="const")


def bind(params):
    """ParamSet -> dict of leaf tensors sharing the snapshot's arrays."""
    return {name: leaf(arr, op=f"param:{name}") for name, arr in params.items()}


def _as_tensor(x):
    return x if isinstance(x, Tensor) else constant(x)


def _unbroadcast(grad, shape):
    """Sum ``grad`` down to ``shape`` (inverse of numpy broadcasting)."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for i, dim in enumerate(shape):
        if dim == 1 and grad.shape[i] != 1:
            grad = grad.sum(axis=i, keepdims=True)
    return grad.reshape(shape)


def add(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    out = Tensor(a.data + b.data, (a, b), op="add")

    def back(g):
        a.accumulate(_unbroadcast(g, a.data.shape))
        b.accumulate(_unbroadcast(g, b.data.shape))

    out._backward = back
    return out


def sub(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    out = Tensor(a.data - b.data, (a, b), op="sub")

    def back(g):
        a.accumulate(_unbroadcast(g, a.data.shape))
        b.accumulate(_unbroadcast(-g, b.data.shape))

    out._backward = back
    return out


def mul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    out = Tensor(a.data * b.data, (a, b), op="mul")

    def back(g):
        a.accumulate(_unbroadcast(g * b.data, a.data.shape))
        b.accumulate(_unbroadcast(g * a.data, b.data.shape))

    out._backward = back
    return out


def matmul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    out = Tensor(a.data @ b.data, (a, b), op="matmul")

    def back(g):
        if a.data.ndim == 1:
            a.accumulate(g @ b.data.T)
            b.accumulate(np.outer(a.data, g))
        else:
            a.accumulate(g @ b.data.T)
            b.accumulate(a.data.T @ g)

    out._backward = back
    return out


def tanh(a):
    a = _as_tensor(a)
    y = np.tanh(a.data)
    out = Tensor(y, (a,), op="tanh")
    out._backward = lambda g: a.accumulate(g * (1.0 - y * y))
    return out


def relu(a):
    a = _as_tensor(a)
    out = Tensor(np.maximum(a.data, 0.0), (a,), op="relu")
    out._backward = lambda g: a.accumulate(g * (a.data > 0.0))
    return out


def absval(a):
    a = _as_tensor(a)
    out = Tensor(np.abs(a.data), (a,), op="abs")
    out._backward = lambda g: a.accumulate(g * np.sign(a.data))
    return out


def exp(a):
    a = _as_tensor(a)
    y = np.exp(a.data)
    out = Tensor(y, (a,), op="exp")
    out._backward = lambda g: a.accumulate(g * y)
    return out


def log(a):
    a = _as_tensor(a)
    out = Tensor(np.log(a.data), (a,), op="log")
    out._backward = lambda g: a.accumulate(g / a.data)
    return out


def square(a):
    a = _as_tensor(a)
    out = Tensor(a.data * a.data, (a,), op="square")
    out._backward = lambda g: a.accumulate(g * 2.0 * a.data)
    return out


def vsum(a, axis=None, keepdims=False):
    a = _as_tensor(a)
    out = Tensor(a.data.sum(axis=axis, keepdims=keepdims), (a,), op="sum")

    def back(g):
        if axis is None:
            a.accumulate(np.broadcast_to(g, a.data.shape).copy())
        else:
            gg = g if keepdims else np.expand_dims(g, axis)
            a.accumulate(np.broadcast_to(gg, a.data.shape).copy())

    out._backward = back
    return out


def vmean(a, axis=None, keepdims=False):
    a = _as_tensor(a)
    count = a.data.size if axis is None else a.data.shape[axis]
    return mul(vsum(a, axis=axis, keepdims=keepdims), 1.0 / count)


def reshape(a, shape):
    a = _as_tensor(a)
    out = Tensor(a.data.reshape(shape), (a,), op="reshape")
    out._backward = lambda g: a.accumulate(g.reshape(a.data.shape))
    return out


def softmax(a, axis=-1):
    a = _as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)
    out = Tensor(y, (a,), op="softmax")

    def back(g):
        inner = (g * y).sum(axis=axis, keepdims=True)
        a.accumulate(y * (g - inner))

    out._backward = back
    return out


def logsumexp(a, axis=-1, keepdims=False):
    """log(sum(exp(a))) stabilized by max-subtraction."""
    a = _as_tensor(a)
    m = a.data.max(axis=axis, keepdims=True)
    e = np.exp(a.data - m)
    s = e.sum(axis=axis, keepdims=True)
    y = np.log(s) + m
    soft = e / s
    out = Tensor(y if keepdims else np.squeeze(y, axis=axis), (a,), op="logsumexp")

    def back(g):
        gg = g if keepdims else np.expand_dims(g, axis)
        a.accumulate(gg * soft)

    out._backward = back
    return out


def backward(loss, leaves=None):
    """Run the reverse pass from a scalar loss.

    Returns a name -> gradient dict aligned with ``leaves`` when given;
    leaves never reached by the graph get zero gradients.
    """
    if loss.data.size != 1:
        raise ValueError(f"backward requires a scalar loss, got shape {loss.data.shape}")
    topo, visited, stack = [], set(), [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if id(p) not in visited:
                stack.append((p, False))
    loss.accumulate(np.ones_like(loss.data))
    for node in reversed(topo):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)
    if leaves is None:
        return None
    return {
        name: (t.grad if t.grad is not None else np.zeros_like(t.data))
        for name, t in leaves.items()
    }


# ---------------------------------------------------------------------------
# MLP building blocks

_ACTIVATIONS = {"relu": relu, "tanh": tanh}
_ACTIVATIONS_NP = {
    "relu": lambda x: np.maximum(x, 0.0),
    "tanh": np.tanh,
}


def mlp_init(sizes, rng, prefix=""):
    """Uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) init for a dense stack."""
    arrays = {}
    for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        bound = 1.0 / np.sqrt(fan_in)
        arrays[f"{prefix}w{i}"] = rng.uniform(-bound, bound, size=(fan_in, fan_out))
        arrays[f"{prefix}b{i}"] = rng.uniform(-bound, bound, size=(fan_out,))
    return ParamSet(arrays)


def _mlp_layers(names, prefix):
    n = 0
    while f"{prefix}w{n}" in names:
        n += 1
    if n == 0:
        raise ValueError(f"no layers found under prefix {prefix!r}")
    return n


def mlp_forward(params, x, activation="relu", prefix=""):
    """Graph-building forward pass; activation applies between layers only."""
    leaves = params if isinstance(params, dict) else bind(params)
    names = set(leaves)
    n = _mlp_layers(names, prefix)
    h = _as_tensor(x)
    if h.data.ndim not in (1, 2):
        raise ValueError("mlp input must be a vector or a batch of vectors")
    if h.data.shape[-1] != leaves[f"{prefix}w0"].data.shape[0]:
        raise ValueError(
            f"mlp input width {h.data.shape[-1]} != first-layer width "
            f"{leaves[f'{prefix}w0'].data.shape[0]}"
        )
    for i in range(n):
        h = add(matmul(h, leaves[f"{prefix}w{i}"]), leaves[f"{prefix}b{i}"])
        if i < n - 1 and activation is not None and activation != "none":
            h = _ACTIVATIONS[activation](h)
    return h


def mlp_forward_np(params, x, activation="relu", prefix=""):
    """Graph-free forward pass; bit-identical to mlp_forward's values."""
    names = set(params.names()) if isinstance(params, ParamSet) else set(params)
    n = _mlp_layers(names, prefix)
    h = np.asarray(x, dtype=np.float64)
    if h.shape[-1] != params[f"{prefix}w0"].shape[0]:
        raise ValueError(
            f"mlp input width {h.shape[-1]} != first-layer width "
            f"{params[f'{prefix}w0'].shape[0]}"
        )
    for i in range(n):
        h = h @ params[f"{prefix}w{i}"] + params[f"{prefix}b{i}"]
        if i < n - 1 and activation is not None and activation != "none":
            h = _ACTIVATIONS_NP[activation](h)
    return h


# ---------------------------------------------------------------------------
# optimizer


class RmsProp:
    """RMSProp: v <- alpha*v + (1-alpha)*g^2; p <- p - lr*g/(sqrt(v)+eps)."""

    def __init__(self, lr, alpha=0.99, eps=1e-5):
        self.lr = lr
        self.alpha = alpha
        self.eps = eps
        self.v = {}

    def step(self, params, grads):
        new = {}
        for name, p in params.items():
            g = grads[name]
            if not np.all(np.isfinite(g)):
                raise FloatingPointError(f"non-finite gradient for parameter {name!r}")
            v = self.v.get(name)
            if v is None:
                v = np.zeros_like(p)
            v = self.alpha * v + (1.0 - self.alpha) * g * g
            self.v[name] = v
            new[name] = p - self.lr * g / (np.sqrt(v) + self.eps)
        return ParamSet(new)


# ---------------------------------------------------------------------------
# finite-difference checking


class GradCheckReport:
    def __init__(self, max_rel_err, n_checked, tol):
        self.max_rel_err = max_rel_err
        self.n_checked = n_checked
        self.tol = tol
        self.passed = max_rel_err < tol

    def __repr__(self):
        tag = "pass" if self.passed else "FAIL"
        return (
            f"GradCheckReport({tag}, max_rel_err={self.max_rel_err:.3e}, "
            f"n={self.n_checked}, tol={self.tol:g})"
        )


def grad_check(f, params, tol=1e-4, step=1e-5, max_coords=None, rng=None):
    """Compare analytic gradients of ``f`` against central finite differences.

    ``f`` maps a dict of bound leaves to a scalar loss Tensor.  When
    ``max_coords`` is set, a random subset of coordinates per parameter is
    probed (full sweep otherwise).
    """
    leaves = bind(params)
    analytic = backward(f(leaves), leaves)
    max_rel = 0.0
    n_checked = 0
    for name, arr in params.items():
        flat_idx = np.arange(arr.size)
        if max_coords is not None and arr.size > max_coords:
            if rng is None:
                rng = np.random.default_rng(0)
            flat_idx = rng.choice(arr.size, size=max_coords, replace=False)
        for idx in flat_idx:
            pos = np.unravel_index(idx, arr.shape)
            for sign in (+1.0, -1.0):
                shifted = arr.copy()
                shifted[pos] += sign * step
                probe = bind(params.replace(name, shifted))
                if sign > 0:
                    f_plus = float(f(probe).data)
                else:
                    f_minus = float(f(probe).data)
            numeric = (f_plus - f_minus) / (2.0 * step)
            a = float(analytic[name][pos])
            rel = abs(a - numeric) / max(1.0, abs(a), abs(numeric))
            max_rel = max(max_rel, rel)
            n_checked += 1
    return GradCheckReport(max_rel, n_checked, tol)
