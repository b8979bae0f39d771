"""Dense NHWC tensors with reverse-mode autodiff.

Only the op set needed by the liveness CNNs is provided: 3x3 same-padded
convolution, 2x2 max pooling, dense layers, batch normalization, the four
activations, channel concatenation, elementwise addition, dropout and
flatten. Every op is written directly against numpy so that a forward or
backward pass is bit-deterministic for a fixed precision and BLAS thread
count.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "Tape",
    "ShapeError",
    "conv2d",
    "maxpool2",
    "dense",
    "batchnorm",
    "relu",
    "leaky_relu",
    "tanh",
    "softmax",
    "concat_channels",
    "add",
    "dropout",
    "flatten",
    "sum_all",
    "weighted_sum",
    "numerical_gradient",
    "gradient_check",
    "save_weights",
    "load_weights",
    "WEIGHTS_FORMAT_VERSION",
]

TRAIN_DTYPE = np.float32
CHECK_DTYPE = np.float64

BN_EPSILON = 1e-3
BN_MOMENTUM = 0.99

WEIGHTS_FORMAT_VERSION = 1


class ShapeError(ValueError):
    """Raised when operand shapes do not conform for an op."""


BackwardFn = Callable[[np.ndarray], Sequence[np.ndarray | None]]


class Tensor:
    """An array that can take part in the autodiff graph.

    Leaves are created by the user; non-leaf tensors remember their parents
    and a rule that maps the output gradient to one gradient per parent.
    """

    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: str | None = None):
        arr = np.asarray(data, dtype=dtype)
        if dtype is None and not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(TRAIN_DTYPE)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward: BackwardFn | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self, grad: np.ndarray | None = None) -> None:
        Tape.from_output(self).backward(grad)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data: np.ndarray, parents: Iterable[Tensor], backward: BackwardFn) -> Tensor:
    """Wrap an op output, recording it in the graph if any parent is tracked."""
    parents = tuple(parents)
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    return out


class Tape:
    """Recorded operations in topological order, ending at one output.

    The order is produced by an iterative depth-first walk that visits
    parents in argument order, so replaying it is deterministic.
    """

    def __init__(self, nodes: list[Tensor]):
        self.nodes = nodes

    @classmethod
    def from_output(cls, out: Tensor) -> "Tape":
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(out, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in reversed(node._parents):
                if id(parent) not in seen:
                    stack.append((parent, False))
        return cls(order)

    @property
    def leaves(self) -> list[Tensor]:
        return [n for n in self.nodes if n.is_leaf and n.requires_grad]

    def backward(self, grad: np.ndarray | None = None) -> None:
        out = self.nodes[-1]
        if not out.requires_grad:
            raise RuntimeError("output does not depend on any tracked tensor")
        if grad is None:
            if out.data.size != 1:
                raise ShapeError("backward without an explicit gradient needs a scalar output")
            grad = np.ones_like(out.data)
        grads: dict[int, np.ndarray] = {id(out): np.asarray(grad, dtype=out.dtype)}
        for node in reversed(self.nodes):
            g = grads.pop(id(node), None)
            if node.is_leaf:
                if node.requires_grad:
                    if g is None:
                        g = np.zeros_like(node.data)
                    node.grad = g if node.grad is None else node.grad + g
                continue
            if g is None:
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = grads[key] + pg if key in grads else pg


# --------------------------------------------------------------------------
# convolution / pooling / dense
# --------------------------------------------------------------------------

def _im2col(xp: np.ndarray, kh: int, kw: int, h: int, w: int) -> np.ndarray:
    n, _, _, c = xp.shape
    cols = np.empty((n, h, w, kh, kw, c), dtype=xp.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, :, i, j, :] = xp[:, i:i + h, j:j + w, :]
    return cols.reshape(n * h * w, kh * kw * c)


def conv2d(x, kernel, bias, padding: str = "same") -> Tensor:
    """Stride-1 2-D convolution in NHWC layout with 'same' zero padding."""
    x, kernel, bias = _as_tensor(x), _as_tensor(kernel), _as_tensor(bias)
    if padding != "same":
        raise ValueError(f"unsupported padding {padding!r}")
    if x.data.ndim != 4 or kernel.data.ndim != 4:
        raise ShapeError(f"conv2d expects x[N,H,W,C] and kernel[kh,kw,Cin,Cout], got {x.shape} and {kernel.shape}")
    n, h, w, cin = x.shape
    kh, kw, kcin, cout = kernel.shape
    if kcin != cin:
        raise ShapeError(f"conv2d: input has {cin} channels but kernel expects {kcin} (x {x.shape}, kernel {kernel.shape})")
    if bias.shape != (cout,):
        raise ShapeError(f"conv2d: bias shape {bias.shape} does not match Cout={cout}")
    if kh % 2 == 0 or kw % 2 == 0:
        raise ShapeError("conv2d: 'same' padding needs odd kernel sizes")
    ph, pw = kh // 2, kw // 2
    xp = np.pad(x.data, ((0, 0), (ph, ph), (pw, pw), (0, 0)))
    cols = _im2col(xp, kh, kw, h, w)
    kmat = kernel.data.reshape(kh * kw * cin, cout)
    out = (cols @ kmat).reshape(n, h, w, cout) + bias.data

    def backward(g):
        g2 = g.reshape(n * h * w, cout)
        gx = gk = gb = None
        if x.requires_grad:
            gcols = (g2 @ kmat.T).reshape(n, h, w, kh, kw, cin)
            gxp = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    gxp[:, i:i + h, j:j + w, :] += gcols[:, :, :, i, j, :]
            gx = gxp[:, ph:ph + h, pw:pw + w, :]
        if kernel.requires_grad:
            gk = (cols.T @ g2).reshape(kernel.shape)
        if bias.requires_grad:
            gb = g2.sum(axis=0)
        return gx, gk, gb

    return _result(out, (x, kernel, bias), backward)


def maxpool2(x) -> Tensor:
    """2x2 max pooling, stride 2; ties send the gradient to the first max in row-major order."""
    x = _as_tensor(x)
    if x.data.ndim != 4:
        raise ShapeError(f"maxpool2 expects a 4-D NHWC tensor, got {x.shape}")
    n, h, w, c = x.shape
    if h % 2 or w % 2:
        raise ShapeError(f"maxpool2 needs even spatial dims, got {h}x{w}")
    win = x.data.reshape(n, h // 2, 2, w // 2, 2, c).transpose(0, 1, 3, 5, 2, 4).reshape(n, h // 2, w // 2, c, 4)
    idx = win.argmax(axis=-1)  # argmax returns the first occurrence
    out = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]

    def backward(g):
        gw = np.zeros(win.shape, dtype=g.dtype)
        np.put_along_axis(gw, idx[..., None], g[..., None], axis=-1)
        gx = gw.reshape(n, h // 2, w // 2, c, 2, 2).transpose(0, 1, 4, 2, 5, 3).reshape(n, h, w, c)
        return (gx,)

    return _result(out, (x,), backward)


def dense(x, weight, bias) -> Tensor:
    x, weight, bias = _as_tensor(x), _as_tensor(weight), _as_tensor(bias)
    if x.data.ndim != 2 or weight.data.ndim != 2 or x.shape[1] != weight.shape[0]:
        raise ShapeError(f"dense: cannot apply weight {weight.shape} to input {x.shape}")
    if bias.shape != (weight.shape[1],):
        raise ShapeError(f"dense: bias shape {bias.shape} does not match {weight.shape[1]} units")
    out = x.data @ weight.data + bias.data

    def backward(g):
        return (
            g @ weight.data.T if x.requires_grad else None,
            x.data.T @ g if weight.requires_grad else None,
            g.sum(axis=0) if bias.requires_grad else None,
        )

    return _result(out, (x, weight, bias), backward)


def batchnorm(
    x,
    gamma,
    beta,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    momentum: float = BN_MOMENTUM,
    epsilon: float = BN_EPSILON,
) -> Tensor:
    """Batch normalization over the last (channel) axis.

    In training mode the batch statistics are used and ``running_mean`` /
    ``running_var`` are updated in place; in inference mode the running
    statistics are used.
    """
    x, gamma, beta = _as_tensor(x), _as_tensor(gamma), _as_tensor(beta)
    c = x.shape[-1]
    for name, arr in (("gamma", gamma.data), ("beta", beta.data), ("running_mean", running_mean), ("running_var", running_var)):
        if arr.shape != (c,):
            raise ShapeError(f"batchnorm: {name} has shape {arr.shape}, expected ({c},)")
    axes = tuple(range(x.data.ndim - 1))
    if training:
        m = int(np.prod([x.shape[a] for a in axes]))
        if m == 0:
            raise ShapeError("batchnorm: empty batch in training mode")
        mean = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        running_mean *= momentum
        running_mean += (1.0 - momentum) * mean.astype(running_mean.dtype)
        running_var *= momentum
        running_var += (1.0 - momentum) * var.astype(running_var.dtype)
    else:
        mean = running_mean.astype(x.dtype)
        var = running_var.astype(x.dtype)
    inv_std = (1.0 / np.sqrt(var + epsilon)).astype(x.dtype)
    xhat = (x.data - mean) * inv_std
    out = gamma.data * xhat + beta.data

    def backward(g):
        ggamma = (g * xhat).sum(axis=axes) if gamma.requires_grad else None
        gbeta = g.sum(axis=axes) if beta.requires_grad else None
        gx = None
        if x.requires_grad:
            gxhat = g * gamma.data
            if training:
                gx = inv_std * (gxhat - gxhat.mean(axis=axes) - xhat * (gxhat * xhat).mean(axis=axes))
            else:
                gx = gxhat * inv_std
        return gx, ggamma, gbeta

    return _result(out, (x, gamma, beta), backward)


# --------------------------------------------------------------------------
# activations
# --------------------------------------------------------------------------

def relu(x) -> Tensor:
    x = _as_tensor(x)
    mask = x.data > 0
    return _result(np.where(mask, x.data, 0).astype(x.dtype), (x,), lambda g: (g * mask,))


def leaky_relu(x, alpha: float = 0.2) -> Tensor:
    x = _as_tensor(x)
    slope = np.where(x.data > 0, 1.0, alpha).astype(x.dtype)
    return _result(x.data * slope, (x,), lambda g: (g * slope,))


def tanh(x) -> Tensor:
    x = _as_tensor(x)
    y = np.tanh(x.data)
    return _result(y, (x,), lambda g: (g * (1.0 - y * y),))


def softmax(x) -> Tensor:
    """Row-wise softmax over the last axis."""
    x = _as_tensor(x)
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return _result(y, (x,), backward)


# --------------------------------------------------------------------------
# merges, regularization, reshaping
# --------------------------------------------------------------------------

def concat_channels(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim != b.data.ndim or a.shape[:-1] != b.shape[:-1]:
        raise ShapeError(f"concat_channels: leading dims differ, {a.shape} vs {b.shape}")
    ca = a.shape[-1]
    out = np.concatenate([a.data, b.data], axis=-1)
    return _result(out, (a, b), lambda g: (g[..., :ca], g[..., ca:]))


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"add: shapes differ, {a.shape} vs {b.shape}")
    return _result(a.data + b.data, (a, b), lambda g: (g, g))


def dropout(x, rate: float, training: bool, rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout: survivors are scaled by 1/(1-rate) so inference is a no-op."""
    x = _as_tensor(x)
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return _result(x.data, (x,), lambda g: (g,))
    if rng is None:
        raise ValueError("dropout in training mode needs an rng")
    keep = rng.random(x.shape) >= rate
    scale = (keep / (1.0 - rate)).astype(x.dtype)
    return _result(x.data * scale, (x,), lambda g: (g * scale,))


def flatten(x) -> Tensor:
    x = _as_tensor(x)
    shape = x.shape
    return _result(x.data.reshape(shape[0], -1), (x,), lambda g: (g.reshape(shape),))


def sum_all(x) -> Tensor:
    x = _as_tensor(x)
    return _result(np.asarray(x.data.sum(), dtype=x.dtype), (x,), lambda g: (np.broadcast_to(g, x.shape).copy(),))


def weighted_sum(x, weights: np.ndarray) -> Tensor:
    """sum(x * weights) for a constant weight array; handy for gradient checks."""
    x = _as_tensor(x)
    w = np.asarray(weights, dtype=x.dtype)
    if w.shape != x.shape:
        raise ShapeError(f"weighted_sum: weights {w.shape} vs input {x.shape}")
    return _result(np.asarray((x.data * w).sum(), dtype=x.dtype), (x,), lambda g: (g * w,))


# --------------------------------------------------------------------------
# gradient checking
# --------------------------------------------------------------------------

def numerical_gradient(f: Callable[[], float], arr: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    """Central finite differences of scalar ``f()`` w.r.t. ``arr`` (modified in place, then restored)."""
    grad = np.zeros_like(arr, dtype=np.float64)
    flat = arr.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = float(f())
        flat[i] = orig - eps
        fm = float(f())
        flat[i] = orig
        gflat[i] = (fp - fm) / (2 * eps)
    return grad


def gradient_check(build: Callable[[], Tensor], inputs: Sequence[Tensor], eps: float = 1e-6) -> list[float]:
    """Relative error between autodiff and finite-difference gradients, one per input.

    ``build`` must recompute the scalar output from the current ``inputs``
    data each time it is called.
    """
    for t in inputs:
        t.grad = None
    build().backward()
    errors = []
    for t in inputs:
        analytic = t.grad
        numeric = numerical_gradient(lambda: build().data, t.data, eps)
        denom = max(np.linalg.norm(analytic), np.linalg.norm(numeric), 1e-12)
        errors.append(float(np.linalg.norm(analytic - numeric) / denom))
    return errors


# --------------------------------------------------------------------------
# weight files
# --------------------------------------------------------------------------

def save_weights(path: str | Path, arrays: dict[str, np.ndarray]) -> None:
    """Write named arrays to an ``.npz`` file.

    Layout: one member per array (name -> array, dtype and shape carried by
    the npy header) plus ``__meta__``, a JSON string holding the format
    version and the ordered list of names.
    """
    meta = json.dumps({"format": "livenesskit-weights", "version": WEIGHTS_FORMAT_VERSION, "names": list(arrays)})
    with open(path, "wb") as fh:
        np.savez(fh, __meta__=np.array(meta), **{k: np.ascontiguousarray(v) for k, v in arrays.items()})


def load_weights(path: str | Path) -> dict[str, np.ndarray]:
    with np.load(path, allow_pickle=False) as z:
        meta = json.loads(str(z["__meta__"]))
        if meta.get("format") != "livenesskit-weights":
            raise ValueError(f"{path}: not a livenesskit weight file")
        if meta["version"] > WEIGHTS_FORMAT_VERSION:
            raise ValueError(f"{path}: weight format v{meta['version']} is newer than supported v{WEIGHTS_FORMAT_VERSION}")
        return {name: z[name] for name in meta["names"]}
