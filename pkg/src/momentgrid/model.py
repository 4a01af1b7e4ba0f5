"""The grounding network: query/moment fusion, masked conv scoring, loss.

The score of proposal (i, j) is produced by projecting the query embedding
and the aggregated moment feature into a shared space, L2-normalizing both,
fusing them with a Hadamard product, and running a small masked conv stack
(3x3 -> 3x3 -> 1x1) with ReLU between layers and a sigmoid on the output.
The validity mask is applied after the fusion and after every conv layer, so
cells below the diagonal are exactly zero end to end.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from . import tape
from .aggregators import (
    BILSTM,
    KINDS,
    MAXPOOL,
    AggregatorSpec,
    aggregate_moment_t,
    init_bilstm_spec,
    moment_map_t,
    spec_from_params,
)
from .errors import ConfigError, ShapeMismatchError
from .moments import validity_mask
from .nn import ParamSet, conv2d_masked, l2_normalize, xavier_uniform
from .tape import Tensor
from .types import MomentMap, Proposal, ScoreMap

CONV_KERNEL = 3
SCORE_CLAMP = 1e-7


@dataclass
class ModelConfig:
    """Architecture knobs; everything else lives in the parameter set."""

    aggregator: str = BILSTM
    input_dim: int = 16
    query_dim: int = 16
    hidden_dim: Optional[int] = None  # bilstm only; defaults to input_dim
    channels: Optional[int] = None  # conv width; defaults to aggregator output

    def __post_init__(self):
        if self.aggregator not in KINDS:
            raise ConfigError("unknown aggregator %r" % self.aggregator)

    def resolved_hidden(self) -> int:
        return self.hidden_dim if self.hidden_dim is not None else self.input_dim

    def agg_out_dim(self) -> int:
        if self.aggregator == MAXPOOL:
            return self.input_dim
        return 2 * self.resolved_hidden()

    def head_channels(self) -> int:
        return self.channels if self.channels is not None else self.agg_out_dim()

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        def opt_int(value):
            if value is None or str(value).lower() in ("none", ""):
                return None
            return int(value)

        return cls(
            aggregator=d["aggregator"],
            input_dim=int(d["input_dim"]),
            query_dim=int(d["query_dim"]),
            hidden_dim=opt_int(d.get("hidden_dim")),
            channels=opt_int(d.get("channels")),
        )


def init_params(cfg: ModelConfig, rng: np.random.Generator, dtype=np.float32) -> ParamSet:
    params = ParamSet()
    if cfg.aggregator == BILSTM:
        init_bilstm_spec(params, cfg.input_dim, cfg.resolved_hidden(), rng, dtype)
    c = cfg.head_channels()
    agg_out = cfg.agg_out_dim()
    params.add("query_proj.w", xavier_uniform((cfg.query_dim, c), rng, dtype))
    params.add("query_proj.b", np.zeros(c, dtype=dtype))
    params.add("moment_proj.w", xavier_uniform((agg_out, c), rng, dtype))
    params.add("moment_proj.b", np.zeros(c, dtype=dtype))
    k = CONV_KERNEL
    for name in ("conv1", "conv2"):
        kern = rng.uniform(-1, 1, size=(k, k, c, c)).astype(dtype)
        kern *= np.sqrt(6.0 / (k * k * c + c))
        params.add(name + ".k", kern)
        params.add(name + ".b", np.zeros(c, dtype=dtype))
    params.add("score.k", xavier_uniform((1, 1, c, 1), rng, dtype))
    params.add("score.b", np.zeros(1, dtype=dtype))
    return params


def aggregator_spec(cfg: ModelConfig, params: ParamSet) -> AggregatorSpec:
    return spec_from_params(cfg.aggregator, params, cfg.resolved_hidden())


def _score_head(map_t: Tensor, query: np.ndarray, params: ParamSet,
                mask: np.ndarray) -> Tensor:
    """Fuse a moment-map tensor with a query and score every cell."""
    n = map_t.data.shape[0]
    dtype = map_t.data.dtype
    q = tape.constant(np.asarray(query, dtype=dtype).reshape(1, -1))
    if q.data.shape[1] != params["query_proj.w"].data.shape[0]:
        raise ShapeMismatchError(
            "query dim %d, expected %d"
            % (q.data.shape[1], params["query_proj.w"].data.shape[0])
        )
    q_proj = tape.add(tape.matmul(q, params["query_proj.w"]), params["query_proj.b"])
    q_norm = tape.reshape(l2_normalize(q_proj, axis=1), (1, 1, -1))

    c_in = map_t.data.shape[2]
    if c_in != params["moment_proj.w"].data.shape[0]:
        raise ShapeMismatchError(
            "moment feature dim %d, expected %d"
            % (c_in, params["moment_proj.w"].data.shape[0])
        )
    flat = tape.reshape(map_t, (n * n, c_in))
    m_proj = tape.add(tape.matmul(flat, params["moment_proj.w"]), params["moment_proj.b"])
    c = m_proj.data.shape[1]
    m_norm = l2_normalize(tape.reshape(m_proj, (n, n, c)), axis=2)

    mask3 = tape.constant(mask.reshape(n, n, 1).astype(dtype))
    fused = tape.mul(tape.mul(m_norm, q_norm), mask3)

    h = tape.relu(conv2d_masked(fused, params["conv1.k"], params["conv1.b"], mask))
    h = tape.relu(conv2d_masked(h, params["conv2.k"], params["conv2.b"], mask))
    logits = conv2d_masked(h, params["score.k"], params["score.b"], mask)
    scores = tape.sigmoid(tape.reshape(logits, (n, n)))
    return tape.mul(scores, tape.constant(mask.astype(dtype)))


def score_tensor(features: np.ndarray, query: np.ndarray, cfg: ModelConfig,
                 params: ParamSet):
    """Differentiable end-to-end scoring of one video against one query."""
    dtype = params["query_proj.w"].data.dtype
    feats = tape.constant(np.asarray(features, dtype=dtype))
    n = feats.data.shape[0]
    mask = validity_mask(n, dtype=dtype)
    map_t = moment_map_t(feats, aggregator_spec(cfg, params))
    return _score_head(map_t, query, params, mask), mask


def score_map(features: np.ndarray, query: np.ndarray, cfg: ModelConfig,
              params: ParamSet) -> ScoreMap:
    scores, mask = score_tensor(features, query, cfg, params)
    return ScoreMap(scores=scores.data, mask=mask)


def fuse_and_score(moment_map: MomentMap, query: np.ndarray, cfg: ModelConfig,
                   params: ParamSet) -> ScoreMap:
    """Score a prebuilt moment map (any aggregator) against a query."""
    dtype = params["query_proj.w"].data.dtype
    map_t = tape.constant(np.asarray(moment_map.data, dtype=dtype))
    scores = _score_head(map_t, query, params, moment_map.mask)
    return ScoreMap(scores=scores.data, mask=np.asarray(moment_map.mask))


def score_single_moment(clips: np.ndarray, query: np.ndarray, cfg: ModelConfig,
                        params: ParamSet) -> float:
    """Score one clip span as the sole proposal of a 1x1 moment map.

    With a single cell, zero padding makes every conv layer tap only that
    cell, so the result is a pure function of the span's aggregate and the
    query; identical aggregates give bit-identical scores.
    """
    dtype = params["query_proj.w"].data.dtype
    clips_t = tape.constant(np.asarray(clips, dtype=dtype))
    vec = aggregate_moment_t(clips_t, aggregator_spec(cfg, params))
    map_t = tape.reshape(vec, (1, 1, -1))
    mask = np.ones((1, 1), dtype=dtype)
    out = _score_head(map_t, query, params, mask)
    return float(out.data[0, 0])


def scaled_iou_targets(n: int, gt: Proposal, t_min: float, t_max: float,
                       dtype=np.float32) -> np.ndarray:
    """Per-cell training target: temporal IoU against ``gt`` rescaled so
    IoU <= t_min maps to 0, IoU >= t_max maps to 1, linear in between.
    Invalid cells are zero (they are excluded from the loss by the mask)."""
    if not t_min < t_max:
        raise ConfigError("need t_min < t_max, got %g >= %g" % (t_min, t_max))
    starts = np.arange(1, n + 1).reshape(n, 1)
    ends = np.arange(1, n + 1).reshape(1, n)
    inter = np.minimum(ends, gt.end) - np.maximum(starts, gt.start) + 1
    inter = np.maximum(inter, 0)
    union = (ends - starts + 1) + gt.n_clips - inter
    with np.errstate(invalid="ignore"):
        iou = inter / union
    target = (iou - t_min) / (t_max - t_min)
    target = np.clip(target, 0.0, 1.0)
    return (target * validity_mask(n)).astype(dtype)


def bce_loss(scores: Tensor, targets: np.ndarray, mask: np.ndarray) -> Tensor:
    """Mean binary cross-entropy over valid cells, scores clamped away
    from {0, 1} so the logs stay finite. One fused tape node."""
    if scores.data.shape != targets.shape or scores.data.shape != mask.shape:
        raise ShapeMismatchError(
            "loss shapes scores=%r targets=%r mask=%r"
            % (scores.data.shape, targets.shape, mask.shape)
        )
    valid = np.asarray(mask) > 0
    raw = scores.data[valid]
    t = np.asarray(targets, dtype=scores.data.dtype)[valid]
    s = np.clip(raw, SCORE_CLAMP, 1.0 - SCORE_CLAMP)
    count = s.size
    value = -(t * np.log(s) + (1.0 - t) * np.log1p(-s)).mean()

    def back(g):
        ds = np.zeros_like(scores.data)
        inside = (raw > SCORE_CLAMP) & (raw < 1.0 - SCORE_CLAMP)
        ds[valid] = (g / count) * ((1.0 - t) / (1.0 - s) - t / s) * inside
        tape._accum(scores, ds)

    return Tensor(np.asarray(value, dtype=scores.data.dtype), (scores,), back)
