"""Dense proposal enumeration and construction of the 2-D moment map."""

from __future__ import annotations

from typing import Callable, List

import numpy as np

from .errors import ConfigError, ShapeMismatchError
from .types import ClipFeatureSequence, MomentMap, Proposal


def enumerate_proposals(n: int) -> List[Proposal]:
    """All clip spans (i, j) with 1 <= i <= j <= n, in row-major order."""
    if n < 1:
        raise ConfigError("proposal enumeration needs n >= 1, got %d" % n)
    return [Proposal(i, j) for i in range(1, n + 1) for j in range(i, n + 1)]


def validity_mask(n: int, dtype=np.float32) -> np.ndarray:
    """(n, n) grid with 1 on and above the diagonal, 0 strictly below."""
    if n < 1:
        raise ConfigError("validity mask needs n >= 1, got %d" % n)
    return np.triu(np.ones((n, n), dtype=dtype))


def build_moment_map(
    features: ClipFeatureSequence,
    aggregator: Callable[[np.ndarray], np.ndarray],
    dtype=np.float32,
) -> MomentMap:
    """Aggregate every valid clip span into one cell of an n x n x c map.

    ``aggregator`` maps an (L, dim) block of clip rows to a fixed-length
    vector; its output length must not depend on L. Invalid cells (i > j)
    are exactly zero. This is the straightforward cell-by-cell construction;
    the training path uses the batched builders in ``aggregators`` which must
    agree with it.
    """
    n = features.n_clips
    first = np.asarray(aggregator(features.data[0:1]), dtype=dtype).reshape(-1)
    channels = first.size
    data = np.zeros((n, n, channels), dtype=dtype)
    data[0, 0] = first
    for i in range(n):
        for j in range(i, n):
            if i == 0 and j == 0:
                continue
            vec = np.asarray(aggregator(features.data[i : j + 1]), dtype=dtype).reshape(-1)
            if vec.size != channels:
                raise ShapeMismatchError(
                    "aggregator returned %d channels for span (%d, %d), expected %d"
                    % (vec.size, i + 1, j + 1, channels)
                )
            data[i, j] = vec
    return MomentMap(data=data, mask=validity_mask(n, dtype=dtype))
