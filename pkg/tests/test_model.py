"""Scoring head, training targets, and loss."""

import numpy as np
import pytest

from momentgrid.errors import ConfigError, ShapeMismatchError
from momentgrid.model import (
    ModelConfig,
    bce_loss,
    fuse_and_score,
    init_params,
    scaled_iou_targets,
    score_map,
    score_single_moment,
    score_tensor,
)
from momentgrid.moments import build_moment_map, validity_mask
from momentgrid.aggregators import mfa_maxpool
from momentgrid.types import ClipFeatureSequence, MomentMap, Proposal
from momentgrid import tape
from _oracles import bce_scalar_loop, scalar_score_path


def _maxpool_model(rng, n=4, d=3, c=5, dtype=np.float64):
    cfg = ModelConfig(aggregator="maxpool", input_dim=d, query_dim=d, channels=c)
    params = init_params(cfg, rng, dtype=dtype)
    feats = ClipFeatureSequence("v", rng.standard_normal((n, d)))
    query = rng.standard_normal(d)
    return cfg, params, feats, query


class TestFuseAndScore:
    def test_zero_head_scores_half_everywhere_valid(self, rng):
        cfg, params, feats, query = _maxpool_model(rng)
        for name in ("conv1.k", "conv1.b", "conv2.k", "conv2.b", "score.k", "score.b"):
            params[name].data[...] = 0.0
        mmap = build_moment_map(feats, mfa_maxpool, dtype=np.float64)
        out = fuse_and_score(mmap, query, cfg, params)
        valid = out.mask > 0
        np.testing.assert_array_equal(out.scores[valid], 0.5)
        np.testing.assert_array_equal(out.scores[~valid], 0.0)

    def test_invalid_cells_zero_for_random_params(self, rng):
        cfg, params, feats, query = _maxpool_model(rng, n=6)
        out = score_map(feats.data, query, cfg, params)
        assert np.all(out.scores[out.mask == 0] == 0.0)
        valid = out.scores[out.mask > 0]
        assert np.all((valid > 0.0) & (valid < 1.0))

    def test_matches_straight_line_reimplementation(self, rng):
        """Batched scoring equals a per-cell scalar reimplementation."""
        cfg, params, feats, query = _maxpool_model(rng, n=4)
        mmap = build_moment_map(feats, mfa_maxpool, dtype=np.float64)
        ours = fuse_and_score(mmap, query, cfg, params).scores
        arrays = {name: t.data for name, t in params.items()}
        reference = scalar_score_path(mmap.data, mmap.mask, query, arrays)
        np.testing.assert_allclose(ours, reference, atol=1e-6)

    def test_perturbing_invalid_cells_changes_nothing(self, rng):
        cfg, params, feats, query = _maxpool_model(rng, n=5)
        mmap = build_moment_map(feats, mfa_maxpool, dtype=np.float64)
        base = fuse_and_score(mmap, query, cfg, params).scores
        poisoned = mmap.data.copy()
        poisoned[mmap.mask == 0] = 1e3
        again = fuse_and_score(MomentMap(poisoned, mmap.mask), query, cfg, params).scores
        np.testing.assert_array_equal(base, again)

    def test_query_dim_mismatch(self, rng):
        cfg, params, feats, _ = _maxpool_model(rng)
        mmap = build_moment_map(feats, mfa_maxpool, dtype=np.float64)
        with pytest.raises(ShapeMismatchError):
            fuse_and_score(mmap, np.zeros(7), cfg, params)

    def test_single_moment_score_equals_one_by_one_map(self, rng):
        cfg, params, feats, query = _maxpool_model(rng, n=5)
        clips = feats.data[1:4]
        direct = score_single_moment(clips, query, cfg, params)
        mmap = MomentMap(mfa_maxpool(clips).astype(np.float64).reshape(1, 1, -1),
                         np.ones((1, 1)))
        via_map = fuse_and_score(mmap, query, cfg, params).scores[0, 0]
        assert direct == pytest.approx(via_map, rel=1e-12)


class TestScaledIouTargets:
    def test_gt_cell_hits_one(self):
        t = scaled_iou_targets(8, Proposal(3, 6), 0.3, 0.7)
        assert t[2, 5] == 1.0

    def test_disjoint_cell_is_zero(self):
        t = scaled_iou_targets(8, Proposal(3, 4), 0.3, 0.7)
        assert t[6, 7] == 0.0

    def test_half_overlap_example(self):
        # span [4,8] vs gt [3,6]: IoU = |{4,5,6}| / |{3..8}| = 0.5,
        # rescaled to (0.5 - 0.3) / 0.4 = 0.5
        t = scaled_iou_targets(10, Proposal(3, 6), 0.3, 0.7)
        assert t[3, 7] == pytest.approx(0.5)

    def test_monotone_in_iou(self, rng):
        from momentgrid.metrics import temporal_iou

        gt = Proposal(4, 9)
        t = scaled_iou_targets(12, gt, 0.3, 0.7)
        cells = [(i, j) for i in range(12) for j in range(i, 12)]
        for _ in range(200):
            a = cells[rng.integers(len(cells))]
            b = cells[rng.integers(len(cells))]
            iou_a = temporal_iou((a[0] + 1, a[1] + 1), (gt.start, gt.end))
            iou_b = temporal_iou((b[0] + 1, b[1] + 1), (gt.start, gt.end))
            if iou_a <= iou_b:
                assert t[a] <= t[b] + 1e-7

    def test_invalid_cells_zero(self):
        t = scaled_iou_targets(6, Proposal(1, 6), 0.3, 0.7)
        assert np.all(t[validity_mask(6) == 0] == 0.0)

    def test_invalid_thresholds(self):
        with pytest.raises(ConfigError):
            scaled_iou_targets(4, Proposal(1, 2), 0.7, 0.3)


class TestBceLoss:
    def test_uniform_half_gives_ln2(self):
        n = 4
        mask = validity_mask(n, np.float64)
        scores = tape.constant(0.5 * mask)
        loss = bce_loss(scores, 0.5 * mask, mask)
        assert loss.item() == pytest.approx(np.log(2.0), rel=1e-9)

    def test_perfect_prediction_is_tiny(self):
        n = 3
        mask = validity_mask(n, np.float64)
        targets = mask.copy()  # 1 on valid cells
        scores = tape.constant(targets * (1.0 - 1e-7))
        loss = bce_loss(scores, targets, mask)
        assert loss.item() <= 1e-6

    def test_matches_scalar_loop(self, rng):
        n = 3
        mask = validity_mask(n, np.float64)
        scores_arr = rng.uniform(0.05, 0.95, (n, n)) * mask
        targets = rng.uniform(0, 1, (n, n)) * mask
        loss = bce_loss(tape.constant(scores_arr), targets, mask)
        assert loss.item() == pytest.approx(bce_scalar_loop(scores_arr, targets, mask),
                                            abs=1e-9)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatchError):
            bce_loss(tape.constant(np.zeros((2, 2))), np.zeros((3, 3)), np.ones((2, 2)))


class TestFullModelGradient:
    @pytest.mark.parametrize("aggregator", ["maxpool", "bilstm"])
    def test_small_model_gradcheck(self, rng, aggregator):
        from momentgrid.nn import grad_check

        cfg = ModelConfig(aggregator=aggregator, input_dim=4, query_dim=4,
                          hidden_dim=3, channels=5)
        params = init_params(cfg, rng, dtype=np.float64)
        feats = rng.standard_normal((5, 4))
        query = rng.standard_normal(4)
        targets = scaled_iou_targets(5, Proposal(2, 4), 0.3, 0.7, dtype=np.float64)

        def forward():
            scores, mask = score_tensor(feats, query, cfg, params)
            return bce_loss(scores, targets, mask)

        report = grad_check(forward, params, eps=1e-5, tol=1e-4)
        assert report.passed, report.per_param

    def test_masked_cells_get_zero_gradient(self, rng):
        """The loss must not see invalid cells: gradient w.r.t. a moment-map
        tensor is exactly zero below the diagonal."""
        from momentgrid.model import _score_head

        cfg = ModelConfig(aggregator="maxpool", input_dim=3, query_dim=3, channels=4)
        params = init_params(cfg, rng, dtype=np.float64)
        n = 5
        feats = ClipFeatureSequence("v", rng.standard_normal((n, 3)))
        mmap = build_moment_map(feats, mfa_maxpool, dtype=np.float64)
        map_t = tape.Tensor(mmap.data.copy(), requires_grad=True)
        scores = _score_head(map_t, rng.standard_normal(3), params, mmap.mask)
        targets = scaled_iou_targets(n, Proposal(2, 3), 0.3, 0.7, dtype=np.float64)
        loss = bce_loss(scores, targets, mmap.mask)
        loss.backward()
        assert np.all(map_t.grad[mmap.mask == 0] == 0.0)
