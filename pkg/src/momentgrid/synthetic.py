"""Seeded synthetic datasets for desk-scale experiments.

Two generators: a localization task whose in-span clips carry the query
direction at a chosen signal-to-noise ratio, and an order-discrimination
task whose videos contain two clip spans holding the same vectors in
opposite orders, so only an order-sensitive aggregator can tell which span a
query refers to. Both are pure functions of their configuration and seed.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError
from .types import ClipFeatureSequence, DatasetManifest, GroundingSample, QueryRecord

RISING_QUERY_ID = "q-rising"
FALLING_QUERY_ID = "q-falling"


def _uniform_interval(rng: np.random.Generator, n: int):
    """One (start, end) drawn uniformly over all valid 1-based spans."""
    spans = [(i, j) for i in range(1, n + 1) for j in range(i, n + 1)]
    return spans[int(rng.integers(0, len(spans)))]


def synth_localization(n_samples: int, n_clips: int = 16, dim: int = 16,
                       snr: float = 4.0, seed: int = 0,
                       frame_rate: float = 25.0,
                       split: str = "train") -> DatasetManifest:
    """Videos whose ground-truth clips equal ``snr * q`` plus unit noise.

    Each sample draws its own query embedding q from a unit normal; clips
    outside the span are pure noise.
    """
    if n_clips < 2 or dim < 2:
        raise ConfigError("need n_clips >= 2 and dim >= 2")
    if snr <= 0:
        raise ConfigError("snr must be positive")
    if n_samples < 1:
        raise ConfigError("need at least one sample")
    rng = np.random.default_rng(seed)
    samples = []
    for k in range(n_samples):
        q = rng.standard_normal(dim)
        start, end = _uniform_interval(rng, n_clips)
        data = rng.standard_normal((n_clips, dim))
        data[start - 1 : end] += snr * q
        vid = "loc-%s-%05d" % (split, k)
        qid = "q-%s-%05d" % (split, k)
        samples.append(GroundingSample(
            ClipFeatureSequence(vid, data.astype(np.float32)),
            QueryRecord(qid, q.astype(np.float32), text=""),
            start, end, frame_rate,
        ))
    return DatasetManifest(samples, split=split, seed=seed)


def synth_order_task(n_samples: int, n_clips: int = 16, dim: int = 8,
                     seed: int = 0, segment_len: int = 4,
                     pattern_scale: float = 3.0, jitter: float = 0.3,
                     frame_rate: float = 25.0,
                     split: str = "train") -> DatasetManifest:
    """Order-discrimination pairs over a shared video.

    Each pair shares one video containing two disjoint spans: one holds a
    pattern whose projection on a dataset-level direction rises monotonically
    clip by clip, the other holds the exact same rows in reversed order. The
    pair's two samples attach the fixed "rising" query to the rising span and
    the fixed "falling" query to the falling span. Samples 2k and 2k+1 form
    pair k. Because the two spans are row-reversals of each other, any
    permutation-invariant aggregate of them is identical by construction.
    """
    if n_samples < 2 or n_samples % 2 != 0:
        raise ConfigError("n_samples must be a positive even number")
    if n_clips < 4:
        raise ConfigError("need n_clips >= 4")
    if segment_len < 2 or segment_len % 2 != 0:
        raise ConfigError("segment_len must be even and >= 2")
    if 2 * segment_len > n_clips:
        raise ConfigError("two disjoint spans of %d clips do not fit in %d"
                          % (segment_len, n_clips))
    rng = np.random.default_rng(seed)
    direction = rng.standard_normal(dim)
    direction /= np.linalg.norm(direction)
    q_rise = rng.standard_normal(dim).astype(np.float32)
    q_fall = rng.standard_normal(dim).astype(np.float32)
    rise_query = QueryRecord(RISING_QUERY_ID, q_rise, text="rising pattern")
    fall_query = QueryRecord(FALLING_QUERY_ID, q_fall, text="falling pattern")

    L = segment_len
    starts = range(1, n_clips - L + 2)
    placements = [(a, b) for a in starts for b in starts if abs(a - b) >= L]

    samples = []
    for k in range(n_samples // 2):
        background = rng.standard_normal((n_clips, dim))
        levels = np.linspace(-1.0, 1.0, L) * pattern_scale
        noise = rng.standard_normal((L, dim)) * jitter
        noise -= np.outer(noise @ direction, direction)  # keep projections monotone
        pattern = levels[:, None] * direction[None, :] + noise

        rise_start, fall_start = placements[int(rng.integers(0, len(placements)))]
        video = background.copy()
        video[rise_start - 1 : rise_start - 1 + L] = pattern
        video[fall_start - 1 : fall_start - 1 + L] = pattern[::-1]
        feats = ClipFeatureSequence("ord-%s-%05d" % (split, k), video.astype(np.float32))

        samples.append(GroundingSample(feats, rise_query,
                                       rise_start, rise_start + L - 1, frame_rate))
        samples.append(GroundingSample(feats, fall_query,
                                       fall_start, fall_start + L - 1, frame_rate))
    return DatasetManifest(samples, split=split, seed=seed)


def order_pairs(manifest: DatasetManifest):
    """Group an order-task manifest back into (rising, falling) pairs."""
    samples = manifest.samples
    if len(samples) % 2 != 0:
        raise ConfigError("order-task manifest must hold an even sample count")
    pairs = []
    for k in range(0, len(samples), 2):
        a, b = samples[k], samples[k + 1]
        if a.features.video_id != b.features.video_id:
            raise ConfigError("samples %d and %d do not share a video" % (k, k + 1))
        pairs.append((a, b))
    return pairs


def order_discrimination_accuracy(manifest: DatasetManifest, score_fn) -> float:
    """Fraction of samples whose query is matched to its own span.

    For every sample, both of its video's pattern spans are scored as
    standalone proposals against the sample's query via ``score_fn(clips,
    embedding)``; the higher-scoring span is predicted (ties go to the
    earlier span) and compared with the sample's ground truth. A scorer that
    cannot distinguish the two spans ties on every sample, predicts the same
    span for both members of a pair, and lands at exactly 0.5.
    """
    correct = 0
    total = 0
    for a, b in order_pairs(manifest):
        seg_a = (a.gt_start, a.gt_end)
        seg_b = (b.gt_start, b.gt_end)
        first, second = (seg_a, seg_b) if seg_a[0] < seg_b[0] else (seg_b, seg_a)
        data = a.features.data
        for member in (a, b):
            s_first = score_fn(data[first[0] - 1 : first[1]], member.query.embedding)
            s_second = score_fn(data[second[0] - 1 : second[1]], member.query.embedding)
            predicted = first if s_first >= s_second else second
            actual = (member.gt_start, member.gt_end)
            correct += int(predicted == actual)
            total += 1
    return correct / total
