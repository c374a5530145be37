"""Edge, overlap and blank masks, and the repeated two-way masking procedure.

Direction naming: "t" is frame t projected onto the plane of frame t-1 (it
gates the loss of X_t against the reconstruction X̂_t); "t-1" is the reverse.
"""
import logging
from typing import Dict, List, NamedTuple, Tuple

import numpy as np

from ..models import (
    Intrinsics, MaskSet, PoseSE3, ProjectionRecord, W_BLANK, as_depth, as_image, as_mask,
)
from .geometry import inverse, project_depth
from .warp import bilinear_sample, footprint_inside, splat_weights

logger = logging.getLogger(__name__)


def edge_mask(record: ProjectionRecord, target_bounds: Tuple[int, int]) -> np.ndarray:
    """0 where the footprint leaves the target image or the point is behind the camera."""
    return footprint_inside(record, target_bounds).astype(np.uint8)


def overlap_mask(record: ProjectionRecord, target_bounds: Tuple[int, int], active) -> np.ndarray:
    """Keep, per unit cell (floor i_hat, floor j_hat), only the active pixel nearest the camera.

    Ties on z go to the pixel earliest in row-major order. Inactive pixels are 0.
    Active pixels that are invalid (behind the camera) do not compete and stay 1;
    the edge mask removes them. Cells outside the target image are grouped the
    same way as cells inside it.
    """
    act = as_mask(active, record.shape).astype(bool)
    out = np.zeros(record.shape, dtype=np.uint8)
    out[act & ~record.valid] = 1
    competing = np.flatnonzero(act & record.valid)
    if competing.size == 0:
        return out
    u = record.coords[..., 0].ravel()[competing]
    v = record.coords[..., 1].ravel()[competing]
    z = record.z.ravel()[competing]
    cu, cv = np.floor(u), np.floor(v)
    order = np.lexsort((competing, z, cv, cu))
    cu, cv = cu[order], cv[order]
    first = np.ones(order.size, dtype=bool)
    first[1:] = (cu[1:] != cu[:-1]) | (cv[1:] != cv[:-1])
    out.flat[competing[order][first]] = 1
    return out


def blank_mask(record_other_to_this: ProjectionRecord, this_bounds: Tuple[int, int],
               active_other) -> np.ndarray:
    """0 on this plane where the other frame's active pixels contribute no interpolation weight."""
    buf = splat_weights(record_other_to_this, this_bounds, active_other)
    return (buf >= W_BLANK).astype(np.uint8)


def combine(masks: MaskSet) -> np.ndarray:
    """M_edg · M_ove · M_bla."""
    return masks.edge * masks.overlap * masks.blank


class MaskingResult(NamedTuple):
    masks_t: MaskSet
    masks_tm1: MaskSet
    recon_t: np.ndarray
    recon_tm1: np.ndarray
    rounds_run: int
    active_counts: List[Dict[str, int]]


def repeated_masking(x_t, x_tm1, d_t, d_tm1, pose_t: PoseSE3, intr: Intrinsics,
                     rounds: int = 3) -> MaskingResult:
    """Two-way projection and masking, repeated until nothing changes or `rounds` is reached.

    pose_t takes frame-t camera points into the frame t-1 camera; the reverse
    direction uses its inverse. Reconstructions are computed once from the
    final geometry.
    """
    if rounds < 1:
        raise ValueError("rounds must be >= 1")
    x_t, x_tm1 = as_image(x_t, intr.shape), as_image(x_tm1, intr.shape)
    d_t, d_tm1 = as_depth(d_t, intr.shape), as_depth(d_tm1, intr.shape)
    bounds = intr.bounds

    records = {
        "t": project_depth(d_t, pose_t, intr),
        "t-1": project_depth(d_tm1, inverse(pose_t), intr),
    }
    other = {"t": "t-1", "t-1": "t"}
    # the edge mask depends on geometry only
    edge = {d: edge_mask(records[d], bounds) for d in records}
    acc = {d: {"edge": edge[d],
               "overlap": np.ones(intr.shape, dtype=np.uint8),
               "blank": np.ones(intr.shape, dtype=np.uint8)} for d in records}
    active = {d: np.ones(intr.shape, dtype=np.uint8) for d in records}

    history: List[Dict[str, int]] = []
    rounds_run = 0
    for r in range(rounds):
        rounds_run = r + 1
        changed = False
        updates = {}
        for d in ("t", "t-1"):
            updates[d] = {
                "overlap": overlap_mask(records[d], bounds, active[d]),
                # reverse projection: the other frame landing on this frame's plane
                "blank": blank_mask(records[other[d]], bounds, active[other[d]]),
            }
        for d in ("t", "t-1"):
            for kind, m in updates[d].items():
                merged = acc[d][kind] * m
                changed |= not np.array_equal(merged, acc[d][kind])
                acc[d][kind] = merged
            new_active = acc[d]["edge"] * acc[d]["overlap"] * acc[d]["blank"]
            changed |= not np.array_equal(new_active, active[d])
            active[d] = new_active
        history.append({d: int(active[d].sum()) for d in active})
        logger.debug("masking round %d: active pixels %s", rounds_run, history[-1])
        if not changed:
            break

    masks_t = MaskSet(**acc["t"])
    masks_tm1 = MaskSet(**acc["t-1"])
    recon_t = bilinear_sample(x_tm1, records["t"])
    recon_tm1 = bilinear_sample(x_t, records["t-1"])
    return MaskingResult(masks_t, masks_tm1, recon_t, recon_tm1, rounds_run, history)
