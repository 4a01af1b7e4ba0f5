"""Deterministic training loop: SGD with momentum over per-video steps.

Each step scores one video's full proposal grid against its query and takes
a BCE loss against IoU-scaled targets. With probability ``rca_probability``
the step consumes a freshly concatenated sample instead of the original.
All randomness flows from the single config seed; two runs with identical
inputs produce bit-identical parameter sets.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .errors import AugmentationError, ConfigError, EmptyInputError, NumericsError
from .model import ModelConfig, bce_loss, init_params, scaled_iou_targets, score_tensor
from .nn import ParamSet
from .rca import frame_rate_compatible, rca_augment
from .types import GroundingSample, Proposal

MAX_PARTNER_TRIES = 20


@dataclass
class TrainConfig:
    epochs: int = 20
    batch_size: int = 1
    learning_rate: float = 0.05
    momentum: float = 0.9
    t_min: float = 0.3
    t_max: float = 0.7
    rca_probability: float = 0.5
    length_tol: float = 0.25
    frame_rate_tol: float = 0.2
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be >= 1")
        if not 0.0 <= self.rca_probability <= 1.0:
            raise ConfigError("rca_probability must lie in [0, 1]")
        if not 0.0 <= self.t_min < self.t_max <= 1.0:
            raise ConfigError("need 0 <= t_min < t_max <= 1")
        if self.learning_rate <= 0:
            raise ConfigError("learning rate must be positive")


@dataclass
class TrainResult:
    params: ParamSet
    model_config: ModelConfig
    train_config: TrainConfig
    epoch_losses: List[float] = field(default_factory=list)
    augmented_steps: int = 0
    total_steps: int = 0


class _SgdMomentum:
    def __init__(self, params: ParamSet, lr: float, momentum: float):
        self.params = params
        self.lr = lr
        self.momentum = momentum
        self.velocity = {name: np.zeros_like(t.data) for name, t in params.items()}

    def step(self, grads: dict) -> None:
        for name, t in self.params.items():
            g = grads.get(name)
            if g is None:
                continue
            v = self.velocity[name]
            v *= self.momentum
            v += g
            t.data = t.data - self.lr * v

    def step_from_tensors(self) -> None:
        """Single-sample update straight from the tensors' grads."""
        for name, t in self.params.items():
            if t.grad is None:
                continue
            v = self.velocity[name]
            v *= self.momentum
            v += t.grad
            t.data = t.data - self.lr * v


def _draw_partner(samples, idx, rng, cfg: TrainConfig):
    """Pick a frame-rate-compatible partner and build the augmented sample;
    falls back to None if no feasible concatenation is found."""
    n = len(samples)
    if n < 2:
        return None
    for _ in range(MAX_PARTNER_TRIES):
        j = int(rng.integers(0, n))
        if j == idx:
            continue
        if not frame_rate_compatible(samples[idx], samples[j], cfg.frame_rate_tol):
            continue
        try:
            aug = rca_augment(samples[idx], samples[j], rng,
                              cfg.length_tol, cfg.frame_rate_tol)
        except AugmentationError:
            continue
        return aug.as_sample(samples[idx].frame_rate)
    return None


def train(samples, model_cfg: ModelConfig, cfg: TrainConfig,
          params: Optional[ParamSet] = None) -> TrainResult:
    samples = list(samples)
    if not samples:
        raise EmptyInputError("cannot train on an empty dataset")
    rng = np.random.default_rng(cfg.seed)
    if params is None:
        params = init_params(model_cfg, rng, dtype=np.float32)
    opt = _SgdMomentum(params, cfg.learning_rate, cfg.momentum)

    # Targets and derived grids are pure functions of (n, gt); cache them per
    # original sample. Augmented samples get fresh grids each time.
    target_cache = {}

    def targets_for(sample: GroundingSample, cacheable: bool) -> np.ndarray:
        key = id(sample)
        if cacheable and key in target_cache:
            return target_cache[key]
        t = scaled_iou_targets(sample.features.n_clips,
                               Proposal(sample.gt_start, sample.gt_end),
                               cfg.t_min, cfg.t_max)
        if cacheable:
            target_cache[key] = t
        return t

    result = TrainResult(params, model_cfg, cfg)
    pending = {}
    pending_count = 0

    def flush():
        nonlocal pending, pending_count
        if pending_count == 0:
            return
        grads = {name: g / pending_count for name, g in pending.items()}
        opt.step(grads)
        pending = {}
        pending_count = 0

    for epoch in range(cfg.epochs):
        order = rng.permutation(len(samples))
        epoch_loss = 0.0
        for idx in order:
            sample = samples[int(idx)]
            cacheable = True
            if cfg.rca_probability > 0 and rng.random() < cfg.rca_probability:
                drawn = _draw_partner(samples, int(idx), rng, cfg)
                if drawn is not None:
                    sample = drawn
                    cacheable = False
                    result.augmented_steps += 1
            scores, mask = score_tensor(sample.features.data,
                                        sample.query.embedding, model_cfg, params)
            loss = bce_loss(scores, targets_for(sample, cacheable), mask)
            val = float(loss.data)
            if not np.isfinite(val):
                raise NumericsError(
                    "non-finite loss at epoch %d (video %r, query %r)"
                    % (epoch, sample.features.video_id, sample.query.query_id)
                )
            params.zero_grad()
            loss.backward()
            if cfg.batch_size == 1:
                opt.step_from_tensors()
            else:
                for name, t in params.items():
                    if t.grad is not None:
                        if name in pending:
                            pending[name] += t.grad
                        else:
                            pending[name] = t.grad.copy()
                pending_count += 1
                if pending_count >= cfg.batch_size:
                    flush()
            epoch_loss += val
            result.total_steps += 1
        flush()  # partial batch at epoch end still updates
        result.epoch_losses.append(epoch_loss / len(samples))
    params.zero_grad()
    return result
