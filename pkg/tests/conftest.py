import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from momentgrid.types import ClipFeatureSequence, GroundingSample, QueryRecord


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


def make_sample(video_id="v0", query_id="q0", n_clips=10, dim=4, gt=(3, 6),
                frame_rate=25.0, seed=0, text="", subject=None):
    gen = np.random.default_rng(seed)
    feats = ClipFeatureSequence(video_id, gen.standard_normal((n_clips, dim)))
    query = QueryRecord(query_id, gen.standard_normal(dim), text=text,
                        subject_override=subject)
    return GroundingSample(feats, query, gt[0], gt[1], frame_rate)
