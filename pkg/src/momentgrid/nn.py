"""Differentiable building blocks and the finite-difference gradient checker.

Everything downstream trains through these ops. Training runs in float32;
gradient checks are meant to run on float64 parameter sets so that central
differences stay below the 1e-4 relative-error tolerance.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Callable, Dict

import numpy as np

from . import tape
from .errors import EmptyInputError, NumericsError, ShapeMismatchError
from .tape import Tensor


class ParamSet:
    """Named, ordered collection of trainable tensors."""

    def __init__(self):
        self._items: Dict[str, Tensor] = {}

    def add(self, name: str, array: np.ndarray) -> Tensor:
        if name in self._items:
            raise ShapeMismatchError("duplicate parameter name %r" % name)
        t = Tensor(np.asarray(array), requires_grad=True)
        self._items[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._items[name]

    def __contains__(self, name: str) -> bool:
        return name in self._items

    def __len__(self) -> int:
        return len(self._items)

    def names(self):
        return list(self._items.keys())

    def items(self):
        return self._items.items()

    def zero_grad(self) -> None:
        for t in self._items.values():
            t.grad = None

    def n_scalars(self) -> int:
        return sum(t.data.size for t in self._items.values())

    def checksum(self) -> str:
        h = hashlib.sha256()
        for name, t in self._items.items():
            h.update(name.encode("utf-8"))
            h.update(np.ascontiguousarray(t.data).tobytes())
        return h.hexdigest()

    def state_arrays(self) -> Dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self._items.items()}

    def load_state(self, arrays: Dict[str, np.ndarray]) -> None:
        for name, t in self._items.items():
            if name not in arrays:
                raise ShapeMismatchError("missing parameter %r in state" % name)
            arr = np.asarray(arrays[name], dtype=t.data.dtype)
            if arr.shape != t.data.shape:
                raise ShapeMismatchError(
                    "parameter %r has shape %r, expected %r"
                    % (name, arr.shape, t.data.shape)
                )
            t.data = arr.copy()


def xavier_uniform(shape, rng: np.random.Generator, dtype=np.float32) -> np.ndarray:
    fan_in, fan_out = shape[0], shape[-1]
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


def dense(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """x @ w + b, accepting a 1-D or 2-D x."""
    if x.data.ndim == 1:
        out = tape.matmul(tape.reshape(x, (1, -1)), w)
        return tape.reshape(tape.add(out, b), (-1,))
    return tape.add(tape.matmul(x, w), b)


@dataclass
class LstmCellParams:
    """Gate-fused LSTM cell weights: columns ordered (input, forget, output,
    candidate). ``wx`` is (d_in, 4h), ``wh`` is (h, 4h), ``bias`` is (4h,)."""

    wx: Tensor
    wh: Tensor
    bias: Tensor

    @property
    def hidden_dim(self) -> int:
        return self.wh.data.shape[0]


def init_lstm_params(
    params: ParamSet, prefix: str, in_dim: int, hidden_dim: int,
    rng: np.random.Generator, dtype=np.float32,
) -> LstmCellParams:
    """Xavier weights, zero biases except the forget-gate bias at 1.0."""
    wx = params.add(prefix + ".wx", xavier_uniform((in_dim, 4 * hidden_dim), rng, dtype))
    wh = params.add(prefix + ".wh", xavier_uniform((hidden_dim, 4 * hidden_dim), rng, dtype))
    bias = np.zeros(4 * hidden_dim, dtype=dtype)
    bias[hidden_dim : 2 * hidden_dim] = 1.0
    b = params.add(prefix + ".bias", bias)
    return LstmCellParams(wx, wh, b)


def lstm_cell(x: Tensor, h_prev: Tensor, c_prev: Tensor, p: LstmCellParams):
    """One LSTM step over a (batch, d_in) input; returns (h, c)."""
    h_dim = p.hidden_dim
    if x.data.shape[-1] != p.wx.data.shape[0]:
        raise ShapeMismatchError(
            "lstm input dim %d, expected %d" % (x.data.shape[-1], p.wx.data.shape[0])
        )
    z = tape.add(tape.add(tape.matmul(x, p.wx), tape.matmul(h_prev, p.wh)), p.bias)
    i = tape.sigmoid(z[:, :h_dim])
    f = tape.sigmoid(z[:, h_dim : 2 * h_dim])
    o = tape.sigmoid(z[:, 2 * h_dim : 3 * h_dim])
    g = tape.tanh(z[:, 3 * h_dim :])
    c = tape.add(tape.mul(f, c_prev), tape.mul(i, g))
    h = tape.mul(o, tape.tanh(c))
    return h, c


def conv2d_masked(x: Tensor, kernel: Tensor, bias: Tensor, mask: np.ndarray) -> Tensor:
    """Zero-padded 2-D convolution over an (n, n, c_in) tensor, then the
    output is multiplied by ``mask`` so invalid cells are exactly zero.

    ``kernel`` is (k, k, c_in, c_out) with k odd; the convolution is computed
    everywhere, i.e. valid outputs near the diagonal do see padded zeros and
    whatever the input holds at masked cells. Implemented as one fused tape
    node over an im2col patch matrix.
    """
    k = kernel.data.shape[0]
    if kernel.data.ndim != 4 or kernel.data.shape[1] != k or k % 2 == 0:
        raise ShapeMismatchError("kernel must be (k, k, c_in, c_out) with odd k")
    if x.data.ndim != 3 or x.data.shape[2] != kernel.data.shape[2]:
        raise ShapeMismatchError(
            "input %r does not match kernel %r" % (x.data.shape, kernel.data.shape)
        )
    n = x.data.shape[0]
    c_in = x.data.shape[2]
    c_out = kernel.data.shape[3]
    pad = k // 2
    if pad:
        padded = np.zeros((n + 2 * pad, n + 2 * pad, c_in), dtype=x.data.dtype)
        padded[pad : pad + n, pad : pad + n] = x.data
    else:
        padded = x.data
    windows = np.lib.stride_tricks.sliding_window_view(padded, (k, k), axis=(0, 1))
    patches = windows.transpose(0, 1, 3, 4, 2).reshape(n * n, k * k * c_in)
    w_mat = kernel.data.reshape(k * k * c_in, c_out)
    mask_col = mask.reshape(n * n, 1).astype(x.data.dtype)
    out = ((patches @ w_mat) + bias.data) * mask_col

    def back(g):
        gm = g.reshape(n * n, c_out) * mask_col
        tape._accum(kernel, (patches.T @ gm).reshape(kernel.data.shape))
        tape._accum(bias, gm.sum(axis=0))
        if x.requires_grad:
            d_patches = (gm @ w_mat.T).reshape(n, n, k, k, c_in)
            d_padded = np.zeros_like(padded)
            for dy in range(k):
                for dx in range(k):
                    d_padded[dy : dy + n, dx : dx + n] += d_patches[:, :, dy, dx, :]
            tape._accum(x, d_padded[pad : pad + n, pad : pad + n] if pad else d_padded)

    return Tensor(out.reshape(n, n, c_out), (x, kernel, bias), back)


def elementwise_max(vectors) -> Tensor:
    """Coordinate-wise maximum of a non-empty list of equal-length vectors.

    The backward pass routes each coordinate's gradient to the first (lowest
    list index) element attaining the maximum.
    """
    if len(vectors) == 0:
        raise EmptyInputError("elementwise_max of an empty list")
    out = vectors[0]
    for v in vectors[1:]:
        if v.data.shape != out.data.shape:
            raise ShapeMismatchError("elementwise_max over mixed shapes")
        out = tape.maximum(out, v)
    return out


def l2_normalize(x: Tensor, axis: int = -1, eps: float = 1e-12) -> Tensor:
    """x / sqrt(sum(x^2, axis) + eps), fused into one tape node."""
    inv = 1.0 / np.sqrt((x.data * x.data).sum(axis=axis, keepdims=True) + eps)
    out = x.data * inv

    def back(g):
        dot = (g * x.data).sum(axis=axis, keepdims=True)
        tape._accum(x, g * inv - x.data * (dot * inv ** 3))

    return Tensor(out, (x,), back)


@dataclass
class GradCheckReport:
    max_rel_err: float
    per_param: Dict[str, float]
    passed: bool
    tol: float

    def worst_param(self) -> str:
        return max(self.per_param, key=self.per_param.get)


def grad_check(
    forward: Callable[[], Tensor],
    params: ParamSet,
    eps: float = 1e-5,
    tol: float = 1e-4,
) -> GradCheckReport:
    """Compare analytic gradients with central finite differences.

    ``forward`` must rebuild the graph from ``params`` and return a scalar.
    Relative error per scalar parameter is |a - n| / max(|a|, |n|, 1e-8); the
    check passes iff the maximum over all scalars is <= ``tol``. Run on a
    float64 ParamSet for meaningful tolerances.
    """
    params.zero_grad()
    out = forward()
    out.backward()
    analytic = {}
    for name, t in params.items():
        if t.grad is None:
            analytic[name] = np.zeros_like(t.data)
        else:
            if not np.all(np.isfinite(t.grad)):
                raise NumericsError("non-finite analytic gradient for %r" % name)
            analytic[name] = t.grad.copy()
    params.zero_grad()

    per_param: Dict[str, float] = {}
    for name, t in params.items():
        flat = t.data.reshape(-1)
        worst = 0.0
        for idx in range(flat.size):
            orig = flat[idx]
            flat[idx] = orig + eps
            up = float(forward().data)
            flat[idx] = orig - eps
            down = float(forward().data)
            flat[idx] = orig
            numeric = (up - down) / (2.0 * eps)
            if not np.isfinite(numeric):
                raise NumericsError("non-finite numeric gradient for %r" % name)
            a = float(analytic[name].reshape(-1)[idx])
            rel = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            if rel > worst:
                worst = rel
        per_param[name] = worst
    max_rel = max(per_param.values()) if per_param else 0.0
    return GradCheckReport(max_rel, per_param, max_rel <= tol, tol)
