"""Evaluation: box IoU, temporal IoU, tube vIoU, and aggregate reports.

Conventions are fixed so that every number is an exact rational of its
inputs: temporal spans are inclusive integer index sets, box IoU uses
continuous areas, and the thresholded rates use strict inequality.
"""

from __future__ import annotations

from typing import Dict, List, Tuple

import numpy as np

from .errors import InvariantError
from .types import MetricsReport, Tube


def box_iou(a, b) -> float:
    """Intersection area over union area of two (x1, y1, x2, y2) boxes."""
    ax1, ay1, ax2, ay2 = a
    bx1, by1, bx2, by2 = b
    if not (ax1 < ax2 and ay1 < ay2 and bx1 < bx2 and by1 < by2):
        raise InvariantError("degenerate box in IoU: %r vs %r" % (a, b))
    iw = min(ax2, bx2) - max(ax1, bx1)
    ih = min(ay2, by2) - max(ay1, by1)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    union = (ax2 - ax1) * (ay2 - ay1) + (bx2 - bx1) * (by2 - by1) - inter
    return inter / union


def temporal_iou(a: Tuple[int, int], b: Tuple[int, int]) -> float:
    """IoU of two inclusive integer index intervals, counting indices."""
    (as_, ae), (bs, be) = a, b
    if as_ > ae or bs > be:
        raise InvariantError("invalid interval in temporal IoU: %r vs %r" % (a, b))
    inter = min(ae, be) - max(as_, bs) + 1
    if inter <= 0:
        return 0.0
    union = (ae - as_ + 1) + (be - bs + 1) - inter
    return inter / union


def viou(pred: Tube, gt: Tube) -> float:
    """Sum of per-frame box IoUs over the frame intersection of the two
    spans, divided by the size of their frame union."""
    if pred.video_id != gt.video_id:
        raise InvariantError(
            "tube video ids differ: %r vs %r" % (pred.video_id, gt.video_id)
        )
    inter_lo = max(pred.start_frame, gt.start_frame)
    inter_hi = min(pred.end_frame, gt.end_frame)
    union = (pred.end_frame - pred.start_frame + 1) + \
            (gt.end_frame - gt.start_frame + 1)
    if inter_hi >= inter_lo:
        union -= inter_hi - inter_lo + 1
    total = 0.0
    for t in range(inter_lo, inter_hi + 1):
        total += box_iou(pred.boxes[t - pred.start_frame],
                         gt.boxes[t - gt.start_frame])
    return total / union


def _index_tubes(tubes: List[Tube], role: str) -> Dict[tuple, Tube]:
    indexed = {}
    for t in tubes:
        key = (t.video_id, t.query_id)
        if key in indexed:
            raise InvariantError("duplicate %s tube for %r" % (role, key))
        indexed[key] = t
    return indexed


def evaluate(preds: List[Tube], gts: List[Tube]) -> MetricsReport:
    """Table-style aggregate over ground-truth samples, as percentages.

    A ground-truth sample with no matching prediction scores zero on both
    metrics rather than failing the run.
    """
    if not gts:
        raise InvariantError("cannot evaluate against an empty ground truth")
    pred_by_id = _index_tubes(preds, "prediction")
    _index_tubes(gts, "ground-truth")
    per_viou = []
    per_tiou = []
    for gt in gts:
        pred = pred_by_id.get((gt.video_id, gt.query_id))
        if pred is None:
            per_viou.append(0.0)
            per_tiou.append(0.0)
            continue
        per_viou.append(viou(pred, gt))
        per_tiou.append(temporal_iou((pred.start_frame, pred.end_frame),
                                     (gt.start_frame, gt.end_frame)))
    v = np.asarray(per_viou)
    return MetricsReport(
        viou_at_03=float((v > 0.3).mean() * 100.0),
        viou_at_05=float((v > 0.5).mean() * 100.0),
        tiou=float(np.mean(per_tiou) * 100.0),
        viou=float(v.mean() * 100.0),
        n_samples=len(gts),
    )


REPORT_COLUMNS = ("viou@0.3", "viou@0.5", "tiou", "viou")


def render_report(report: MetricsReport) -> str:
    """Fixed-width table with one decimal per column, plus the sample count."""
    values = (report.viou_at_03, report.viou_at_05, report.tiou, report.viou)
    width = max(len(c) for c in REPORT_COLUMNS) + 2
    header = "".join(c.rjust(width) for c in REPORT_COLUMNS)
    row = "".join(("%.1f" % v).rjust(width) for v in values)
    return "%s\n%s\n(n=%d)" % (header, row, report.n_samples)


def report_csv_rows(report: MetricsReport) -> List[Tuple[str, str]]:
    return [
        ("viou@0.3", "%.10g" % report.viou_at_03),
        ("viou@0.5", "%.10g" % report.viou_at_05),
        ("tiou", "%.10g" % report.tiou),
        ("viou", "%.10g" % report.viou),
        ("n_samples", str(report.n_samples)),
    ]
