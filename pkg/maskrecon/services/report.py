from typing import Any, Dict, Iterable, Tuple

import numpy as np
import pandas as pd

from ..models import LossReport, MaskSet, VisibilityLabel, as_mask
from .masks import MaskingResult, combine


def _fractions(masks: MaskSet) -> Dict[str, float]:
    # fraction of pixels each mask removes
    total = masks.edge.size
    return {
        "edge": 1.0 - float(masks.edge.sum()) / total,
        "overlap": 1.0 - float(masks.overlap.sum()) / total,
        "blank": 1.0 - float(masks.blank.sum()) / total,
        "combined": 1.0 - float(combine(masks).sum()) / total,
    }


def mask_summary(result: MaskingResult) -> Dict[str, Any]:
    """Per-direction, per-kind masked fraction plus the convergence history of the rounds."""
    return {
        "rounds_run": result.rounds_run,
        "active_counts": [dict(sorted(row.items())) for row in result.active_counts],
        "masked_fraction": {
            "t": _fractions(result.masks_t),
            "t-1": _fractions(result.masks_tm1),
        },
    }


def occlusion_summary(labels, kept) -> Dict[str, Any]:
    """How well a combined mask agrees with ray-cast visibility labels of the same frame.

    Recall is the share of occluded pixels the mask removes; retention is the
    share of pixels visible in both frames the mask keeps.
    """
    labels = np.asarray(labels)
    kept = as_mask(kept, labels.shape).astype(bool)
    occluded = labels == int(VisibilityLabel.OCCLUDED_IN_OTHER)
    visible = labels == int(VisibilityLabel.VISIBLE_BOTH)
    n_occ, n_vis = int(occluded.sum()), int(visible.sum())
    return {
        "occluded": n_occ,
        "visible": n_vis,
        "out_of_view": int((labels == int(VisibilityLabel.OUT_OF_VIEW_IN_OTHER)).sum()),
        "occluded_recall": float((~kept & occluded).sum() / n_occ) if n_occ else 1.0,
        "visible_retained": float((kept & visible).sum() / n_vis) if n_vis else 1.0,
    }


def loss_payload(report: LossReport) -> Dict[str, Any]:
    """LossReport fields plus the weights it was computed with."""
    payload = report.model_dump()
    payload["weights"] = report.weights.model_dump()
    return payload


def trace_frame(trace: Iterable[Tuple[int, float, float]]) -> pd.DataFrame:
    df = pd.DataFrame(list(trace), columns=["iter", "loss", "step"])
    return df.astype({"iter": "int64", "loss": "float64", "step": "float64"})


def mask_coverage(labels, masks: MaskSet) -> Dict[str, Any]:
    """Which of overlap and blank removes each ray-cast occluded pixel.

    Counts split the occluded pixels into removed by overlap only, blank only,
    both, or neither; the recalls are per mask and for their union.
    """
    labels = np.asarray(labels)
    occluded = labels == int(VisibilityLabel.OCCLUDED_IN_OTHER)
    by_overlap = ~as_mask(masks.overlap, labels.shape).astype(bool) & occluded
    by_blank = ~as_mask(masks.blank, labels.shape).astype(bool) & occluded
    n_occ = int(occluded.sum())

    def recall(removed) -> float:
        return float(removed.sum() / n_occ) if n_occ else 1.0

    return {
        "occluded": n_occ,
        "overlap_only": int((by_overlap & ~by_blank).sum()),
        "blank_only": int((by_blank & ~by_overlap).sum()),
        "both": int((by_overlap & by_blank).sum()),
        "neither": int((occluded & ~by_overlap & ~by_blank).sum()),
        "overlap_recall": recall(by_overlap),
        "blank_recall": recall(by_blank),
        "union_recall": recall(by_overlap | by_blank),
    }
