"""Decoding predictions from score maps and ensembling several models."""

from __future__ import annotations

import numpy as np

from .errors import EmptyInputError, ShapeMismatchError
from .types import MomentPrediction, Proposal, ScoreMap


def decode_best_moment(score_map: ScoreMap) -> MomentPrediction:
    """The valid cell with the largest score; ties break to the smallest
    start, then the smallest end (row-major scan order)."""
    scores = np.asarray(score_map.scores)
    mask = np.asarray(score_map.mask) > 0
    if not mask.any():
        raise EmptyInputError("score map has no valid cells")
    masked = np.where(mask, scores, -np.inf)
    flat = int(np.argmax(masked))  # first maximum in row-major order
    i, j = divmod(flat, scores.shape[1])
    return MomentPrediction(Proposal(i + 1, j + 1), float(scores[i, j]))


def ensemble_scores(maps) -> ScoreMap:
    """Unweighted mean of several models' score maps, per valid cell."""
    maps = list(maps)
    if not maps:
        raise EmptyInputError("cannot ensemble an empty list of score maps")
    base_mask = np.asarray(maps[0].mask)
    for m in maps[1:]:
        if m.scores.shape != maps[0].scores.shape:
            raise ShapeMismatchError("score maps of different sizes")
        if not np.array_equal(np.asarray(m.mask), base_mask):
            raise ShapeMismatchError("score maps with different validity masks")
    mean = np.mean([m.scores for m in maps], axis=0)
    return ScoreMap(scores=mean * (base_mask > 0), mask=base_mask.copy())
