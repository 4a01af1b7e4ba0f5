"""Scikit-learn style front end for the temporal grounder.

``MomentGrounder`` is a regular estimator: hyperparameters go through
``__init__`` untouched (so ``get_params``/``set_params``/``clone`` work),
``fit`` consumes a sequence of :class:`~momentgrid.types.GroundingSample`
and ``predict`` returns one (start_clip, end_clip) row per sample.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .errors import EmptyInputError, ShapeMismatchError
from .infer import decode_best_moment
from .metrics import temporal_iou
from .model import ModelConfig, init_params, score_map
from .storage import load_checkpoint_config, load_params, save_params
from .train import TrainConfig, train
from .types import GroundingSample


def check_samples(X) -> list:
    """Validate a fit/predict input: a non-empty, dimensionally consistent
    sequence of GroundingSample objects."""
    samples = list(X)
    if not samples:
        raise EmptyInputError("received an empty sample sequence")
    for k, s in enumerate(samples):
        if not isinstance(s, GroundingSample):
            raise TypeError(
                "element %d is %s, expected GroundingSample" % (k, type(s).__name__)
            )
    dim = samples[0].features.dim
    qdim = samples[0].query.dim
    for s in samples[1:]:
        if s.features.dim != dim or s.query.dim != qdim:
            raise ShapeMismatchError(
                "mixed feature dims in input: (%d, %d) vs (%d, %d)"
                % (dim, qdim, s.features.dim, s.query.dim)
            )
    return samples


class MomentGrounder(BaseEstimator):
    """Trainable language-to-moment grounder over a 2-D proposal grid.

    Parameters mirror the training configuration; ``aggregator`` selects
    between the order-blind max-pool and the order-aware Bi-LSTM moment
    aggregation. All randomness derives from ``random_state``.
    """

    def __init__(self, aggregator="bilstm", hidden_dim=None, channels=None,
                 epochs=20, batch_size=1, learning_rate=0.05, momentum=0.9,
                 t_min=0.3, t_max=0.7, rca_prob=0.5, length_tol=0.25,
                 frame_rate_tol=0.2, random_state=0):
        self.aggregator = aggregator
        self.hidden_dim = hidden_dim
        self.channels = channels
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.momentum = momentum
        self.t_min = t_min
        self.t_max = t_max
        self.rca_prob = rca_prob
        self.length_tol = length_tol
        self.frame_rate_tol = frame_rate_tol
        self.random_state = random_state

    def _train_config(self) -> TrainConfig:
        return TrainConfig(
            epochs=self.epochs, batch_size=self.batch_size,
            learning_rate=self.learning_rate, momentum=self.momentum,
            t_min=self.t_min, t_max=self.t_max,
            rca_probability=self.rca_prob, length_tol=self.length_tol,
            frame_rate_tol=self.frame_rate_tol, seed=self.random_state,
        )

    def fit(self, X, y=None):
        samples = check_samples(X)
        cfg = ModelConfig(
            aggregator=self.aggregator,
            input_dim=samples[0].features.dim,
            query_dim=samples[0].query.dim,
            hidden_dim=self.hidden_dim,
            channels=self.channels,
        )
        result = train(samples, cfg, self._train_config())
        self.params_ = result.params
        self.model_config_ = result.model_config
        self.loss_log_ = list(result.epoch_losses)
        self.augmented_steps_ = result.augmented_steps
        self.n_features_in_ = cfg.input_dim
        return self

    def _check_fitted(self):
        if not hasattr(self, "params_"):
            raise NotFittedError(
                "this MomentGrounder is not fitted yet; call fit first"
            )

    def predict_score_maps(self, X):
        self._check_fitted()
        return [score_map(s.features.data, s.query.embedding,
                          self.model_config_, self.params_)
                for s in check_samples(X)]

    def decode(self, X):
        """Best moment per sample, with its score."""
        return [decode_best_moment(m) for m in self.predict_score_maps(X)]

    def predict(self, X) -> np.ndarray:
        """(n_samples, 2) array of 1-based inclusive clip spans."""
        preds = self.decode(X)
        return np.array([[p.proposal.start, p.proposal.end] for p in preds],
                        dtype=np.int64)

    def score(self, X, y=None) -> float:
        """Mean temporal IoU between decoded spans and ground truth."""
        samples = check_samples(X)
        spans = self.predict(samples)
        ious = [temporal_iou((int(s0), int(s1)), (s.gt_start, s.gt_end))
                for (s0, s1), s in zip(spans, samples)]
        return float(np.mean(ious))

    def save(self, path) -> None:
        self._check_fitted()
        config = dict(self.model_config_.to_dict())
        config.update(rca_prob=self.rca_prob, epochs=self.epochs,
                      learning_rate=self.learning_rate, seed=self.random_state)
        save_params(self.params_.state_arrays(), path, config=config)

    @classmethod
    def load(cls, path) -> "MomentGrounder":
        sidecar = load_checkpoint_config(path)
        cfg = ModelConfig.from_dict(sidecar)
        est = cls(aggregator=cfg.aggregator, hidden_dim=cfg.hidden_dim,
                  channels=cfg.channels)
        params = init_params(cfg, np.random.default_rng(0))
        params.load_state(load_params(path))
        est.params_ = params
        est.model_config_ = cfg
        est.loss_log_ = []
        est.n_features_in_ = cfg.input_dim
        return est
