"""Synthetic dataset generators: determinism, invariants, task structure."""

import numpy as np
import pytest

from momentgrid.aggregators import mfa_maxpool
from momentgrid.errors import ConfigError
from momentgrid.synthetic import (
    order_discrimination_accuracy,
    order_pairs,
    synth_localization,
    synth_order_task,
)


def manifest_bytes(manifest):
    chunks = []
    for s in manifest.samples:
        chunks.append(s.features.data.tobytes())
        chunks.append(s.query.embedding.tobytes())
        chunks.append(b"%d:%d" % (s.gt_start, s.gt_end))
    return b"".join(chunks)


class TestSynthLocalization:
    def test_deterministic_given_seed(self):
        a = synth_localization(20, 10, 6, snr=3.0, seed=42)
        b = synth_localization(20, 10, 6, snr=3.0, seed=42)
        assert manifest_bytes(a) == manifest_bytes(b)

    def test_different_seed_differs(self):
        a = synth_localization(20, 10, 6, seed=1)
        b = synth_localization(20, 10, 6, seed=2)
        assert manifest_bytes(a) != manifest_bytes(b)

    def test_ground_truth_always_in_range(self):
        m = synth_localization(300, 9, 4, seed=5)
        for s in m.samples:
            assert 1 <= s.gt_start <= s.gt_end <= s.features.n_clips

    def test_signal_separates_in_and_out_clips(self):
        """With snr=4 the mean in-span projection onto the query exceeds the
        out-of-span mean in at least 99% of samples that have both kinds."""
        m = synth_localization(1000, 16, 16, snr=4.0, seed=9)
        wins = 0
        eligible = 0
        for s in m.samples:
            q = s.query.embedding.astype(np.float64)
            proj = s.features.data.astype(np.float64) @ q / (q @ q)
            inside = np.zeros(s.features.n_clips, dtype=bool)
            inside[s.gt_start - 1 : s.gt_end] = True
            if inside.all():
                continue
            eligible += 1
            if proj[inside].mean() > proj[~inside].mean():
                wins += 1
        assert eligible > 950
        assert wins / eligible >= 0.99

    def test_invalid_configs(self):
        with pytest.raises(ConfigError):
            synth_localization(10, 1, 4)
        with pytest.raises(ConfigError):
            synth_localization(10, 8, 4, snr=0.0)
        with pytest.raises(ConfigError):
            synth_localization(0, 8, 4)


class TestSynthOrderTask:
    def test_deterministic_given_seed(self):
        a = synth_order_task(40, 16, 8, seed=3)
        b = synth_order_task(40, 16, 8, seed=3)
        assert manifest_bytes(a) == manifest_bytes(b)

    def test_pair_segments_same_multiset_reversed(self):
        m = synth_order_task(60, 16, 8, seed=4)
        for rise, fall in order_pairs(m):
            seg_r = rise.features.data[rise.gt_start - 1 : rise.gt_end]
            seg_f = fall.features.data[fall.gt_start - 1 : fall.gt_end]
            np.testing.assert_array_equal(seg_r, seg_f[::-1])
            # sorted-row multiset comparison
            np.testing.assert_array_equal(
                seg_r[np.lexsort(seg_r.T)], seg_f[np.lexsort(seg_f.T)])

    def test_maxpool_aggregate_identical_for_both_segments(self):
        m = synth_order_task(60, 16, 8, seed=4)
        for rise, fall in order_pairs(m):
            agg_r = mfa_maxpool(rise.features.data[rise.gt_start - 1 : rise.gt_end])
            agg_f = mfa_maxpool(fall.features.data[fall.gt_start - 1 : fall.gt_end])
            np.testing.assert_array_equal(agg_r, agg_f)

    def test_projection_monotone_along_direction(self):
        m = synth_order_task(20, 16, 8, seed=6)
        # recover the dataset direction from the first rising segment
        rise, fall = order_pairs(m)[0]
        seg = rise.features.data[rise.gt_start - 1 : rise.gt_end].astype(np.float64)
        direction = (seg[-1] - seg[0])
        direction /= np.linalg.norm(direction)
        for r, f in order_pairs(m):
            proj_r = r.features.data[r.gt_start - 1 : r.gt_end] @ direction
            proj_f = f.features.data[f.gt_start - 1 : f.gt_end] @ direction
            assert np.all(np.diff(proj_r) > 0)
            assert np.all(np.diff(proj_f) < 0)

    def test_segments_disjoint_and_in_range(self):
        m = synth_order_task(100, 12, 6, seed=8, segment_len=4)
        for rise, fall in order_pairs(m):
            assert rise.features is fall.features
            spans = sorted([(rise.gt_start, rise.gt_end), (fall.gt_start, fall.gt_end)])
            assert spans[0][1] < spans[1][0]  # disjoint
            assert spans[1][1] <= rise.features.n_clips

    def test_queries_are_two_fixed_embeddings(self):
        m = synth_order_task(40, 16, 8, seed=3)
        rising = {s.query.embedding.tobytes() for s in m.samples[0::2]}
        falling = {s.query.embedding.tobytes() for s in m.samples[1::2]}
        assert len(rising) == 1 and len(falling) == 1
        assert rising != falling

    def test_invalid_configs(self):
        with pytest.raises(ConfigError):
            synth_order_task(9, 16, 8)  # odd sample count
        with pytest.raises(ConfigError):
            synth_order_task(10, 3, 8)
        with pytest.raises(ConfigError):
            synth_order_task(10, 16, 8, segment_len=3)  # odd segment
        with pytest.raises(ConfigError):
            synth_order_task(10, 6, 8, segment_len=4)  # 2 segments do not fit


class TestDiscriminationProtocol:
    def test_constant_scorer_lands_exactly_at_half(self):
        m = synth_order_task(50, 16, 8, seed=2)
        acc = order_discrimination_accuracy(m, lambda clips, q: 1.0)
        assert acc == 0.5

    def test_oracle_scorer_reaches_one(self):
        m = synth_order_task(50, 16, 8, seed=2)
        rise_q = m.samples[0].query.embedding.tobytes()

        def oracle(clips, q):
            # examine the span's ordering directly
            rise, fall = order_pairs(m)[0]
            seg = rise.features.data[rise.gt_start - 1 : rise.gt_end].astype(np.float64)
            direction = seg[-1] - seg[0]
            slope = (clips @ direction)[-1] - (clips @ direction)[0]
            wants_rising = q.tobytes() == rise_q
            return slope if wants_rising else -slope

        acc = order_discrimination_accuracy(m, oracle)
        assert acc == 1.0
