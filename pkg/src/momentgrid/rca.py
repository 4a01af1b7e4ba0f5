"""Training-time concatenation augmentation.

A new sample is built by slicing a window around each of two source samples'
ground-truth spans and concatenating the two windows; the query of one source
is kept (chosen at random) and its ground truth is remapped into the
concatenated clip sequence. Offsets are drawn by rejection so the result
stays close to the first video's length and never reads outside a source.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import AugmentationError
from .types import ClipFeatureSequence, GroundingSample, QueryRecord

MAX_OFFSET_DRAWS = 100
FIRST = "first"
SECOND = "second"


@dataclass(frozen=True)
class RcaDraw:
    """One accepted set of window offsets plus the query choice.

    ``delta1``/``delta2`` extend the first sample's ground-truth span left and
    right (in clips); the primed pair does the same for the second sample.
    """

    delta1: int
    delta2: int
    delta1p: int
    delta2p: int
    query_choice: str


@dataclass
class AugmentedSample:
    features: ClipFeatureSequence
    query: QueryRecord
    gt_start: int
    gt_end: int
    source_ids: tuple
    draw: RcaDraw

    def as_sample(self, frame_rate: float) -> GroundingSample:
        return GroundingSample(self.features, self.query, self.gt_start,
                               self.gt_end, frame_rate)


def frame_rate_compatible(a: GroundingSample, b: GroundingSample,
                          rel_tol: float = 0.2) -> bool:
    fa, fb = a.frame_rate, b.frame_rate
    return abs(fa - fb) / max(fa, fb) <= rel_tol


def concat_with_offsets(a: GroundingSample, b: GroundingSample,
                        draw: RcaDraw) -> AugmentedSample:
    """Deterministic core of the augmentation: slice, concatenate, remap."""
    lo_a = a.gt_start - draw.delta1  # 1-based, inclusive
    hi_a = a.gt_end + draw.delta2
    lo_b = b.gt_start - draw.delta1p
    hi_b = b.gt_end + draw.delta2p
    if lo_a < 1 or hi_a > a.features.n_clips or lo_b < 1 or hi_b > b.features.n_clips:
        raise AugmentationError("offsets reach outside a source video")
    part_a = a.features.data[lo_a - 1 : hi_a]
    part_b = b.features.data[lo_b - 1 : hi_b]
    data = np.concatenate([part_a, part_b], axis=0)
    len_a = hi_a - lo_a + 1

    if draw.query_choice == FIRST:
        query = a.query
        gt_start = draw.delta1 + 1
        gt_end = draw.delta1 + (a.gt_end - a.gt_start + 1)
    else:
        query = b.query
        gt_start = len_a + draw.delta1p + 1
        gt_end = len_a + draw.delta1p + (b.gt_end - b.gt_start + 1)

    video_id = "%s+%s" % (a.features.video_id, b.features.video_id)
    features = ClipFeatureSequence(video_id, data)
    return AugmentedSample(features, query, gt_start, gt_end,
                           (a.features.video_id, b.features.video_id), draw)


def rca_augment(a: GroundingSample, b: GroundingSample,
                rng: np.random.Generator, length_tol: float = 0.25,
                frame_rate_tol: float = 0.2) -> AugmentedSample:
    """Draw offsets and build the concatenated sample.

    Offsets are uniform over each sample's feasible range and redrawn (up to
    100 attempts) until the concatenated length is within ``length_tol`` of
    the first video's clip count. The kept query is chosen uniformly.
    """
    if not frame_rate_compatible(a, b, frame_rate_tol):
        raise AugmentationError(
            "incompatible frame rates %.3f vs %.3f" % (a.frame_rate, b.frame_rate)
        )
    n_a = a.features.n_clips
    n_b = b.features.n_clips
    max_len_dev = length_tol * n_a
    for _ in range(MAX_OFFSET_DRAWS):
        d1 = int(rng.integers(0, a.gt_start))  # keeps gt_start - d1 >= 1
        d2 = int(rng.integers(0, n_a - a.gt_end + 1))
        d1p = int(rng.integers(0, b.gt_start))
        d2p = int(rng.integers(0, n_b - b.gt_end + 1))
        total = (a.gt_end - a.gt_start + 1 + d1 + d2) + (b.gt_end - b.gt_start + 1 + d1p + d2p)
        if abs(total - n_a) <= max_len_dev:
            choice = FIRST if rng.integers(0, 2) == 0 else SECOND
            return concat_with_offsets(a, b, RcaDraw(d1, d2, d1p, d2p, choice))
    raise AugmentationError(
        "no feasible offsets after %d draws (gt lengths %d + %d vs %d clips, tol %.2f)"
        % (MAX_OFFSET_DRAWS, a.gt_end - a.gt_start + 1,
           b.gt_end - b.gt_start + 1, n_a, length_tol)
    )
