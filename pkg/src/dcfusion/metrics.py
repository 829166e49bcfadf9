"""Overlap and precision metrics for box trajectories.

Boxes are (x, y, w, h) with the origin at the top-left corner and
continuous pixel units. The overlap-precision curve uses a strict
greater-than test at 101 thresholds on [0, 1]; the distance-precision
curve uses strict less-than at 101 thresholds on [0, 50] pixels.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DataError, InvalidInputError

OP_THRESHOLDS = np.linspace(0.0, 1.0, 101)
DP_THRESHOLDS = np.linspace(0.0, 50.0, 101)
DP_REFERENCE_INDEX = 40  # DP_THRESHOLDS[40] == 20.0 px


def _check_box(box) -> tuple:
    x, y, w, h = (float(v) for v in box)
    if w <= 0 or h <= 0:
        raise InvalidInputError(f"box sizes must be positive, got {box}")
    return x, y, w, h


def iou(box_a, box_b) -> float:
    "Intersection area over union area of two boxes."
    ax, ay, aw, ah = _check_box(box_a)
    bx, by, bw, bh = _check_box(box_b)
    iw = min(ax + aw, bx + bw) - max(ax, bx)
    ih = min(ay + ah, by + bh) - max(ay, by)
    if iw <= 0.0 or ih <= 0.0:
        return 0.0
    inter = iw * ih
    return inter / (aw * ah + bw * bh - inter)


def center_error(box_a, box_b) -> float:
    "Euclidean distance between box centers in pixels."
    ax, ay, aw, ah = _check_box(box_a)
    bx, by, bw, bh = _check_box(box_b)
    return float(np.hypot(ax + aw / 2.0 - bx - bw / 2.0,
                          ay + ah / 2.0 - by - bh / 2.0))


@dataclass(frozen=True)
class MetricReport:
    "Per-frame errors plus the two summary curves."

    ious: np.ndarray
    center_errors: np.ndarray
    op_curve: np.ndarray
    dp_curve: np.ndarray
    auc: float
    op_at_50: float
    op_at_75: float
    dp_at_20: float


def success_metrics(pred_boxes, gt_boxes) -> MetricReport:
    """Curves and summary numbers for a predicted trajectory.

    OP(theta) is the fraction of frames with IOU strictly above theta;
    AUC is the mean of OP over the threshold grid. DP(theta) counts
    center errors strictly below theta.
    """
    pred = list(pred_boxes)
    gt = list(gt_boxes)
    if len(pred) != len(gt):
        raise DataError(f"trajectory lengths differ: {len(pred)} predictions "
                        f"vs {len(gt)} ground-truth boxes")
    if not pred:
        raise DataError("empty trajectory")
    ious = np.array([iou(p, g) for p, g in zip(pred, gt)])
    errors = np.array([center_error(p, g) for p, g in zip(pred, gt)])
    op_curve = (ious[None, :] > OP_THRESHOLDS[:, None]).mean(axis=1)
    dp_curve = (errors[None, :] < DP_THRESHOLDS[:, None]).mean(axis=1)
    return MetricReport(
        ious=ious,
        center_errors=errors,
        op_curve=op_curve,
        dp_curve=dp_curve,
        auc=float(op_curve.mean()),
        op_at_50=float(op_curve[50]),
        op_at_75=float(op_curve[75]),
        dp_at_20=float(dp_curve[DP_REFERENCE_INDEX]),
    )
