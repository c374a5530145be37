"""Depth-evaluation metrics and ATE over short pose snippets."""
from typing import Optional, Sequence

import numpy as np

from ..errors import MetricsError, ShapeError
from ..models import AteStats, DepthMetrics, PoseSE3
from .geometry import compose, inverse

MIN_DEPTH = 1e-3


def _grid(values, name: str) -> np.ndarray:
    a = np.asarray(values, dtype=np.float64)
    if a.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {a.shape}")
    return a


def depth_metrics(pred, gt, valid=None, cap: float = 80.0, median_scale: bool = True) -> DepthMetrics:
    """Abs Rel, Sq Rel, RMSE, RMSE log and the three δ accuracies over valid pixels.

    Valid pixels are those selected by `valid` (all when None) whose ground truth
    lies in (0, cap]. Predictions are optionally median-scaled, then clamped to
    [1e-3, cap].
    """
    pred, gt = _grid(pred, "prediction"), _grid(gt, "ground truth")
    if pred.shape != gt.shape:
        raise ShapeError(f"prediction {pred.shape} and ground truth {gt.shape} differ in shape")
    sel = np.isfinite(gt) & (gt > 0) & (gt <= cap) & np.isfinite(pred)
    if valid is not None:
        v = np.asarray(valid)
        if v.shape != gt.shape:
            raise ShapeError(f"valid mask {v.shape} does not match depth {gt.shape}")
        sel &= v.astype(bool)
    if not sel.any():
        raise MetricsError("no valid pixels to evaluate")

    p, g = pred[sel], gt[sel]
    if median_scale:
        med = np.median(p)
        if med <= 0:
            raise MetricsError("median prediction is not positive; cannot median-scale")
        p = p * (np.median(g) / med)
    p = np.clip(p, MIN_DEPTH, cap)

    thresh = np.maximum(g / p, p / g)
    return DepthMetrics(
        abs_rel=float(np.mean(np.abs(p - g) / g)),
        sq_rel=float(np.mean((p - g) ** 2 / g)),
        rmse=float(np.sqrt(np.mean((p - g) ** 2))),
        rmse_log=float(np.sqrt(np.mean((np.log(p) - np.log(g)) ** 2))),
        delta1=float((thresh < 1.25).mean()),
        delta2=float((thresh < 1.25 ** 2).mean()),
        delta3=float((thresh < 1.25 ** 3).mean()),
    )


def evaluate_depth_batch(preds: Sequence, gts: Sequence, valids: Optional[Sequence] = None,
                         cap: float = 80.0, median_scale: bool = True) -> DepthMetrics:
    """Per-frame metrics (each frame scaled on its own) averaged over the batch."""
    if len(preds) != len(gts) or not preds:
        raise MetricsError("need equally many predictions and ground truths, at least one")
    if valids is None:
        valids = [None] * len(preds)
    rows = [depth_metrics(p, g, v, cap, median_scale).model_dump()
            for p, g, v in zip(preds, gts, valids)]
    return DepthMetrics(**{k: float(np.mean([r[k] for r in rows])) for k in rows[0]})


def _anchored_translations(poses: Sequence[PoseSE3]) -> np.ndarray:
    first = inverse(poses[0])
    return np.stack([compose(first, p).translation for p in poses])


def snippet_ate(pred: Sequence[PoseSE3], gt: Sequence[PoseSE3], align_scale: bool = True) -> float:
    """RMSE of translation error over one window after first-frame anchoring and scale alignment."""
    p, g = _anchored_translations(pred), _anchored_translations(gt)
    scale = 1.0
    # a window whose ground truth never moves carries no scale; it is left at 1
    if align_scale and np.any(g):
        denom = float(np.sum(p * p))
        scale = float(np.sum(g * p)) / denom if denom > 0 else 1.0
    residual = scale * p - g
    return float(np.sqrt(np.mean(np.sum(residual ** 2, axis=1))))


def ate_snippets(pred_poses: Sequence[PoseSE3], gt_poses: Sequence[PoseSE3], snippet_len: int = 3,
                 align_scale: bool = True) -> AteStats:
    """Mean and std of ATE over every consecutive window of camera-to-world poses."""
    if len(pred_poses) != len(gt_poses):
        raise MetricsError(f"sequence lengths differ: {len(pred_poses)} vs {len(gt_poses)}")
    if snippet_len < 2 or len(gt_poses) < snippet_len:
        raise MetricsError(f"sequence of {len(gt_poses)} poses is too short for snippets of {snippet_len}")
    errors = [snippet_ate(pred_poses[k:k + snippet_len], gt_poses[k:k + snippet_len], align_scale)
              for k in range(len(gt_poses) - snippet_len + 1)]
    return AteStats(mean=float(np.mean(errors)), std=float(np.std(errors)), windows=len(errors))
