"""Moment feature aggregation: max-pooling and the Bi-LSTM alternative.

Both aggregators collapse a span of clip vectors into one fixed-size vector.
Max-pooling is order-blind (any permutation of the clips gives the same
output); the Bi-LSTM reads the span in both directions and concatenates the
two final hidden states, so its output depends on clip order. One parameter
set is shared across all moments of all videos.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import expit

from . import tape
from .errors import ConfigError, EmptyInputError, ShapeMismatchError
from .nn import LstmCellParams, ParamSet, init_lstm_params, lstm_cell
from .tape import Tensor

MAXPOOL = "maxpool"
BILSTM = "bilstm"
KINDS = (MAXPOOL, BILSTM)


@dataclass
class AggregatorSpec:
    kind: str
    hidden_dim: Optional[int] = None
    forward_cell: Optional[LstmCellParams] = None
    backward_cell: Optional[LstmCellParams] = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError("unknown aggregator kind %r" % self.kind)
        if self.kind == BILSTM:
            if self.forward_cell is None or self.backward_cell is None:
                raise ConfigError("bilstm aggregator needs both cell parameter sets")
            if self.forward_cell.hidden_dim != self.backward_cell.hidden_dim:
                raise ConfigError("forward/backward cells disagree on hidden size")
            self.hidden_dim = self.forward_cell.hidden_dim

    @property
    def out_dim_factor(self) -> int:
        return 2 if self.kind == BILSTM else 1


def init_bilstm_spec(
    params: ParamSet, in_dim: int, hidden_dim: int, rng: np.random.Generator,
    dtype=np.float32, prefix: str = "agg",
) -> AggregatorSpec:
    fwd = init_lstm_params(params, prefix + ".fwd", in_dim, hidden_dim, rng, dtype)
    bwd = init_lstm_params(params, prefix + ".bwd", in_dim, hidden_dim, rng, dtype)
    return AggregatorSpec(BILSTM, hidden_dim, fwd, bwd)


def spec_from_params(kind: str, params: ParamSet, hidden_dim=None) -> AggregatorSpec:
    """Rebuild an AggregatorSpec over tensors already present in ``params``."""
    if kind == MAXPOOL:
        return AggregatorSpec(MAXPOOL)
    fwd = LstmCellParams(params["agg.fwd.wx"], params["agg.fwd.wh"], params["agg.fwd.bias"])
    bwd = LstmCellParams(params["agg.bwd.wx"], params["agg.bwd.wh"], params["agg.bwd.bias"])
    return AggregatorSpec(BILSTM, hidden_dim, fwd, bwd)


def mfa_maxpool(clips: np.ndarray) -> np.ndarray:
    """Coordinate-wise maximum over an (L, dim) block of clip rows."""
    clips = np.asarray(clips)
    if clips.ndim != 2 or clips.shape[0] == 0:
        raise EmptyInputError("max-pool aggregation needs a non-empty (L, dim) block")
    return clips.max(axis=0)


def mfa_bilstm(clips: np.ndarray, spec: AggregatorSpec) -> np.ndarray:
    """Reference (non-differentiable) Bi-LSTM aggregation of one span.

    Runs the forward cell over clips 1..L and the backward cell over clips
    L..1, both from zero states, and concatenates the final hidden states.
    """
    clips = np.asarray(clips)
    if clips.ndim != 2 or clips.shape[0] == 0:
        raise EmptyInputError("bilstm aggregation needs a non-empty (L, dim) block")
    if spec.kind != BILSTM:
        raise ConfigError("spec is not a bilstm aggregator")
    h_fwd = _run_cell_numpy(clips, spec.forward_cell)
    h_bwd = _run_cell_numpy(clips[::-1], spec.backward_cell)
    return np.concatenate([h_fwd, h_bwd])


def _run_cell_numpy(clips: np.ndarray, p: LstmCellParams) -> np.ndarray:
    h_dim = p.hidden_dim
    wx, wh, bias = p.wx.data, p.wh.data, p.bias.data
    if clips.shape[1] != wx.shape[0]:
        raise ShapeMismatchError(
            "clip dim %d does not match cell input dim %d" % (clips.shape[1], wx.shape[0])
        )
    h = np.zeros(h_dim, dtype=wx.dtype)
    c = np.zeros(h_dim, dtype=wx.dtype)
    for x in clips.astype(wx.dtype):
        z = x @ wx + h @ wh + bias
        i = _sigmoid(z[:h_dim])
        f = _sigmoid(z[h_dim : 2 * h_dim])
        o = _sigmoid(z[2 * h_dim : 3 * h_dim])
        g = np.tanh(z[3 * h_dim :])
        c = f * c + i * g
        h = o * np.tanh(c)
    return h


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def aggregate(clips: np.ndarray, spec: AggregatorSpec) -> np.ndarray:
    if spec.kind == MAXPOOL:
        return mfa_maxpool(clips)
    return mfa_bilstm(clips, spec)


def aggregate_moment_t(clips: Tensor, spec: AggregatorSpec) -> Tensor:
    """Differentiable aggregation of a single (L, dim) span."""
    n_rows = clips.data.shape[0]
    if n_rows == 0:
        raise EmptyInputError("cannot aggregate an empty span")
    if spec.kind == MAXPOOL:
        out = clips[0:1, :]
        for t in range(1, n_rows):
            out = tape.maximum(out, clips[t : t + 1, :])
        return tape.reshape(out, (-1,))
    dtype = clips.data.dtype
    h_dim = spec.hidden_dim
    zero = tape.constant(np.zeros((1, h_dim), dtype=dtype))
    h_f, c_f = zero, zero
    for t in range(n_rows):
        h_f, c_f = lstm_cell(clips[t : t + 1, :], h_f, c_f, spec.forward_cell)
    h_b, c_b = zero, zero
    for t in range(n_rows - 1, -1, -1):
        h_b, c_b = lstm_cell(clips[t : t + 1, :], h_b, c_b, spec.backward_cell)
    return tape.reshape(tape.concat([h_f, h_b], axis=1), (-1,))


def maxpool_map_t(features: Tensor) -> Tensor:
    """Batched max-pool moment map: (n, d) clips -> (n, n, d) tensor.

    Runs the recurrence map[i, j] = max(map[i, j-1], F_j) for all starts i at
    once. Cells below the diagonal never activate and stay exactly zero.
    """
    n, d = features.data.shape
    dtype = features.data.dtype
    rows = np.arange(n).reshape(n, 1)
    state = tape.constant(np.zeros((n, d), dtype=dtype))
    per_end = []
    for t in range(n):
        x_t = features[t : t + 1, :]
        started = tape.constant((rows < t).astype(dtype))
        fresh = tape.constant((rows == t).astype(dtype))
        state = tape.add(
            tape.mul(started, tape.maximum(state, x_t)), tape.mul(fresh, x_t)
        )
        per_end.append(state)
    return tape.transpose(tape.stack(per_end, axis=0), (1, 0, 2))


def bilstm_map_t(features: Tensor, spec: AggregatorSpec) -> Tensor:
    """Batched Bi-LSTM moment map: (n, d) clips -> (n, n, 2h) tensor.

    All spans share each direction's recurrence: at video time t the forward
    pass advances one batched cell step for every span start <= t (each start
    row consumes the same clip F_t), and symmetrically for span ends in the
    backward pass. A span's state stays at the zero initial state until its
    boundary row activates, so invalid cells end up exactly zero and each
    valid cell matches the sequential per-span computation.

    Both recurrences run in one fused tape node: iteration k advances the
    forward pass at clip k and the backward pass at clip n-1-k over a single
    (2n, h) state matrix (top half indexed by span start, bottom half by span
    end). The backward pass is hand-written BPTT over the cached gates.
    """
    fwd, bwd = spec.forward_cell, spec.backward_cell
    fd = features.data
    n = fd.shape[0]
    hd = spec.hidden_dim
    dtype = fd.dtype
    whf, whb = fwd.wh.data, bwd.wh.data
    xwf = fd @ fwd.wx.data + fwd.bias.data  # (n, 4h); clip t feeds every span at time t
    xwb = fd @ bwd.wx.data + bwd.bias.data

    rows = np.arange(n).reshape(n, 1)
    masks = [np.concatenate([rows <= k, rows >= n - 1 - k]).astype(dtype)
             for k in range(n)]

    h = np.zeros((2 * n, hd), dtype=dtype)
    c = np.zeros((2 * n, hd), dtype=dtype)
    out = np.zeros((n, n, 2 * hd), dtype=dtype)
    cache = []
    for k in range(n):
        tb = n - 1 - k
        active = masks[k]
        z = np.empty((2 * n, 4 * hd), dtype=dtype)
        np.add(h[:n] @ whf, xwf[k], out=z[:n])
        np.add(h[n:] @ whb, xwb[tb], out=z[n:])
        act = np.empty_like(z)
        expit(z[:, : 3 * hd], out=act[:, : 3 * hd])
        np.tanh(z[:, 3 * hd :], out=act[:, 3 * hd :])
        i = act[:, :hd]
        f = act[:, hd : 2 * hd]
        o = act[:, 2 * hd : 3 * hd]
        g = act[:, 3 * hd :]
        c_new = active * (f * c + i * g)
        tc = np.tanh(c_new)
        h_new = active * (o * tc)
        cache.append((active, act, c, h, tc))
        h, c = h_new, c_new
        # Top half: state of spans (row, k); bottom half: spans (tb, row).
        out[:, k, :hd] = h_new[:n]
        out[tb, :, hd:] = h_new[n:]

    def back(grad):
        dxwf = np.zeros_like(xwf)
        dxwb = np.zeros_like(xwb)
        dwhf = np.zeros_like(whf)
        dwhb = np.zeros_like(whb)
        dh = np.zeros((2 * n, hd), dtype=dtype)
        dc = np.zeros((2 * n, hd), dtype=dtype)
        dz = np.empty((2 * n, 4 * hd), dtype=dtype)
        for k in range(n - 1, -1, -1):
            tb = n - 1 - k
            active, act, c_prev, h_prev, tc = cache[k]
            i = act[:, :hd]
            f = act[:, hd : 2 * hd]
            o = act[:, 2 * hd : 3 * hd]
            g = act[:, 3 * hd :]
            dh[:n] += grad[:, k, :hd]
            dh[n:] += grad[tb, :, hd:]
            kk = dh * active
            dci = (dc + (kk * o) * (1.0 - tc * tc)) * active
            dz[:, :hd] = (dci * g) * i * (1.0 - i)
            dz[:, hd : 2 * hd] = (dci * c_prev) * f * (1.0 - f)
            dz[:, 2 * hd : 3 * hd] = (kk * tc) * o * (1.0 - o)
            dz[:, 3 * hd :] = (dci * i) * (1.0 - g * g)
            dc = dci * f
            dh = np.empty((2 * n, hd), dtype=dtype)
            np.matmul(dz[:n], whf.T, out=dh[:n])
            np.matmul(dz[n:], whb.T, out=dh[n:])
            dwhf += h_prev[:n].T @ dz[:n]
            dwhb += h_prev[n:].T @ dz[n:]
            dxwf[k] += dz[:n].sum(axis=0)
            dxwb[tb] += dz[n:].sum(axis=0)
        tape._accum(fwd.wh, dwhf)
        tape._accum(bwd.wh, dwhb)
        tape._accum(fwd.wx, fd.T @ dxwf)
        tape._accum(bwd.wx, fd.T @ dxwb)
        tape._accum(fwd.bias, dxwf.sum(axis=0))
        tape._accum(bwd.bias, dxwb.sum(axis=0))
        if features.requires_grad:
            tape._accum(features, dxwf @ fwd.wx.data.T + dxwb @ bwd.wx.data.T)

    parents = (features, fwd.wx, fwd.wh, fwd.bias, bwd.wx, bwd.wh, bwd.bias)
    return Tensor(out, parents, back)


def moment_map_t(features: Tensor, spec: AggregatorSpec) -> Tensor:
    if spec.kind == MAXPOOL:
        return maxpool_map_t(features)
    return bilstm_map_t(features, spec)
