"""Core domain types and their validation helpers.

Clip and proposal indices are 1-based and inclusive everywhere (a proposal
(i, j) spans clips i..j); frame indices are 0-based. File formats store the
same conventions, so values round-trip without shifting.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import InvariantError


def check_finite(arr: np.ndarray, name: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise InvariantError("%s contains non-finite values" % name)


@dataclass
class ClipFeatureSequence:
    """Per-video matrix of clip feature vectors, one row per clip."""

    video_id: str
    data: np.ndarray  # (n_clips, dim) float32

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float32)
        if self.data.ndim != 2 or self.data.shape[0] < 1 or self.data.shape[1] < 1:
            raise InvariantError(
                "clip features must be a non-empty 2-D matrix, got shape %r"
                % (self.data.shape,)
            )
        check_finite(self.data, "clip features of %r" % self.video_id)

    @property
    def n_clips(self) -> int:
        return self.data.shape[0]

    @property
    def dim(self) -> int:
        return self.data.shape[1]


@dataclass
class QueryRecord:
    """A language query: precomputed embedding plus raw text."""

    query_id: str
    embedding: np.ndarray
    text: str = ""
    subject_override: Optional[str] = None

    def __post_init__(self):
        self.embedding = np.asarray(self.embedding, dtype=np.float32).reshape(-1)
        if self.embedding.size < 1:
            raise InvariantError("query embedding must be non-empty")
        check_finite(self.embedding, "query embedding of %r" % self.query_id)

    @property
    def dim(self) -> int:
        return self.embedding.size


@dataclass
class GroundingSample:
    """One training/evaluation unit: video features, query, ground truth."""

    features: ClipFeatureSequence
    query: QueryRecord
    gt_start: int  # 1-based, inclusive
    gt_end: int
    frame_rate: float = 25.0

    def __post_init__(self):
        n = self.features.n_clips
        if not (1 <= self.gt_start <= self.gt_end <= n):
            raise InvariantError(
                "ground truth [%d, %d] out of range for %d clips"
                % (self.gt_start, self.gt_end, n)
            )
        if self.frame_rate <= 0:
            raise InvariantError("frame rate must be positive")

    @property
    def gt(self) -> "Proposal":
        return Proposal(self.gt_start, self.gt_end)


@dataclass
class DatasetManifest:
    samples: list  # of GroundingSample
    split: str = "train"
    seed: int = 0

    def __post_init__(self):
        ids = [(s.features.video_id, s.query.query_id) for s in self.samples]
        if len(set(ids)) != len(ids):
            raise InvariantError("duplicate (video_id, query_id) in split %r" % self.split)


@dataclass(frozen=True)
class Proposal:
    """A candidate moment: the inclusive clip span [start, end], 1-based."""

    start: int
    end: int

    def __post_init__(self):
        if not (1 <= self.start <= self.end):
            raise InvariantError("invalid proposal (%d, %d)" % (self.start, self.end))

    @property
    def n_clips(self) -> int:
        return self.end - self.start + 1


@dataclass
class MomentMap:
    """Aggregated features for every valid proposal, on an n x n x c grid.

    Cell (i, j) (0-based here) holds the aggregate of clips i+1..j+1; cells
    below the diagonal are exactly zero and flagged invalid in the mask.
    """

    data: np.ndarray  # (n, n, channels)
    mask: np.ndarray  # (n, n) with 1 on/above the diagonal

    @property
    def n(self) -> int:
        return self.data.shape[0]

    @property
    def channels(self) -> int:
        return self.data.shape[2]


@dataclass
class ScoreMap:
    """Per-proposal matching scores in (0, 1); invalid cells are exactly 0."""

    scores: np.ndarray  # (n, n)
    mask: np.ndarray  # (n, n)

    @property
    def n(self) -> int:
        return self.scores.shape[0]


@dataclass(frozen=True)
class MomentPrediction:
    proposal: Proposal
    score: float


@dataclass(frozen=True)
class Detection:
    """One referring-detector output: a box, its confidence, and the
    grounding text the detector associated with the box."""

    box: tuple  # (x1, y1, x2, y2)
    score: float
    text: str = ""

    def __post_init__(self):
        x1, y1, x2, y2 = self.box
        if not (x1 < x2 and y1 < y2):
            raise InvariantError("degenerate box %r" % (self.box,))


@dataclass
class FrameDetections:
    video_id: str
    frame_idx: int  # 0-based
    detections: list = field(default_factory=list)

    def __post_init__(self):
        if self.frame_idx < 0:
            raise InvariantError("frame index must be >= 0")


@dataclass
class Tube:
    """A temporal segment plus one box per frame; the final output unit."""

    video_id: str
    start_frame: int
    end_frame: int
    boxes: list  # one (x1, y1, x2, y2) per frame in [start_frame, end_frame]
    query_id: str = ""

    def __post_init__(self):
        if self.start_frame > self.end_frame:
            raise InvariantError("tube segment ends before it starts")
        expected = self.end_frame - self.start_frame + 1
        if len(self.boxes) != expected:
            raise InvariantError(
                "tube has %d boxes for %d frames" % (len(self.boxes), expected)
            )
        for b in self.boxes:
            x1, y1, x2, y2 = b
            if not (x1 < x2 and y1 < y2):
                raise InvariantError("degenerate box %r in tube" % (b,))


@dataclass
class MetricsReport:
    """Aggregate grounding quality, all fields rendered as percentages."""

    viou_at_03: float
    viou_at_05: float
    tiou: float
    viou: float
    n_samples: int
