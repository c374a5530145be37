"""Bilinear inverse warping (reconstruction) and forward splat accounting."""
from typing import Tuple

import numpy as np

from ..errors import ShapeError
from ..models import BilinearFootprint, Intrinsics, PoseSE3, ProjectionRecord, as_image, as_mask
from .geometry import project_depth

# (dx, dy) of the tl, tr, bl, br corners
CORNER_OFFSETS = ((0, 0), (1, 0), (0, 1), (1, 1))


def footprint(coord: Tuple[float, float], bounds: Tuple[int, int]) -> BilinearFootprint:
    """Four corners and bilinear weights of a continuous (column, row) coordinate."""
    x, y = float(coord[0]), float(coord[1])
    width, height = bounds
    x0, y0 = int(np.floor(x)), int(np.floor(y))
    ax, ay = x - x0, y - y0
    weights = [(1 - ax) * (1 - ay), ax * (1 - ay), (1 - ax) * ay, ax * ay]
    corners = [(x0 + dx, y0 + dy) for dx, dy in CORNER_OFFSETS]
    in_bounds = [0 <= cx < width and 0 <= cy < height for cx, cy in corners]
    return BilinearFootprint(corners=corners, weights=weights, in_bounds=in_bounds)


def _footprint_grids(coords: np.ndarray):
    """Vectorised footprint: floor corners (float) and the four weight grids."""
    u, v = coords[..., 0], coords[..., 1]
    x0, y0 = np.floor(u), np.floor(v)
    ax, ay = u - x0, v - y0
    weights = np.stack([(1 - ax) * (1 - ay), ax * (1 - ay), (1 - ax) * ay, ax * ay])
    return x0, y0, ax, ay, weights


def footprint_inside(record: ProjectionRecord, bounds: Tuple[int, int]) -> np.ndarray:
    """True where the pixel is valid and all four footprint corners lie in the target image."""
    width, height = bounds
    u, v = record.coords[..., 0], record.coords[..., 1]
    with np.errstate(invalid="ignore"):
        x0, y0 = np.floor(u), np.floor(v)
        inside = (x0 >= 0) & (x0 + 1 <= width - 1) & (y0 >= 0) & (y0 + 1 <= height - 1)
    return record.valid & inside


def _sampleable(record: ProjectionRecord, bounds: Tuple[int, int]):
    """Pixels whose footprint has no out-of-bounds corner carrying weight.

    Corners outside the image with exactly zero weight (integer hits on the last
    row/column) do not change the sampled value and are ignored here.
    """
    width, height = bounds
    coords = np.where(record.valid[..., None], record.coords, 0.0)
    x0, y0, ax, ay, weights = _footprint_grids(coords)
    ok = record.valid.copy()
    for k, (dx, dy) in enumerate(CORNER_OFFSETS):
        cx, cy = x0 + dx, y0 + dy
        inside = (cx >= 0) & (cx <= width - 1) & (cy >= 0) & (cy <= height - 1)
        ok &= inside | (weights[k] == 0.0)
    return ok, x0, y0, ax, ay, weights


def _pick(source: np.ndarray, cols: np.ndarray, rows: np.ndarray) -> np.ndarray:
    height, width = source.shape[:2]
    ci = np.clip(cols, 0, width - 1).astype(np.int64)
    cj = np.clip(rows, 0, height - 1).astype(np.int64)
    return source[cj, ci]


def _gather(source: np.ndarray, x0: np.ndarray, y0: np.ndarray):
    return [_pick(source, x0 + dx, y0 + dy) for dx, dy in CORNER_OFFSETS]


def bilinear_sample(source, record: ProjectionRecord) -> np.ndarray:
    """Weighted sum over each pixel's footprint; 0 where it cannot be sampled."""
    values, _, _ = sample_with_gradient(source, record)
    return values


def _grid_hit_derivative(one_sided, before, hit, has_before, has_after):
    """Mean of the one-sided derivatives that exist where the coordinate is an integer."""
    central = np.where(has_before & has_after, 0.5 * (one_sided + before),
                       np.where(has_before, before, one_sided))
    return np.where(hit, central, one_sided)


def sample_with_gradient(source, record: ProjectionRecord):
    """Sampled values and their analytic derivatives w.r.t. i_hat and j_hat, each (H, W, C).

    Inside a cell the derivative is the bilinear slope. On a grid line, where
    the interpolant has a corner, it is the mean of the slopes on either side
    (the one-sided slope at the image border).
    """
    src = as_image(source)
    height, width = src.shape[:2]
    ok, x0, y0, ax, ay, weights = _sampleable(record, (width, height))
    tl, tr, bl, br = _gather(src, x0, y0)
    w = weights[..., None]
    values = w[0] * tl + w[1] * tr + w[2] * bl + w[3] * br
    hit_u, hit_v = (ax == 0.0)[..., None], (ay == 0.0)[..., None]
    ax, ay = ax[..., None], ay[..., None]
    d_u = (1 - ay) * (tr - tl) + ay * (br - bl)
    d_v = (1 - ax) * (bl - tl) + ax * (br - tr)
    if hit_u.any():
        left = (1 - ay) * (tl - _pick(src, x0 - 1, y0)) + ay * (bl - _pick(src, x0 - 1, y0 + 1))
        d_u = _grid_hit_derivative(d_u, left, hit_u, (x0 >= 1)[..., None],
                                   (x0 + 1 <= width - 1)[..., None])
    if hit_v.any():
        above = (1 - ax) * (tl - _pick(src, x0, y0 - 1)) + ax * (tr - _pick(src, x0 + 1, y0 - 1))
        d_v = _grid_hit_derivative(d_v, above, hit_v, (y0 >= 1)[..., None],
                                   (y0 + 1 <= height - 1)[..., None])
    # convex combination; clip rounding dust so outputs stay valid images
    values = np.clip(values, 0.0, 1.0)
    keep = ok[..., None]
    zero = np.zeros_like(values)
    return np.where(keep, values, zero), np.where(keep, d_u, zero), np.where(keep, d_v, zero)


def reconstruct(x_src, d_tgt, pose: PoseSE3, intr: Intrinsics):
    """Reconstruct the target frame from x_src using the target's depth and the motion
    taking target-camera points into the source camera. Returns (image, record)."""
    src = as_image(x_src)
    if src.shape[:2] != intr.shape:
        raise ShapeError(f"source image {src.shape[:2]} does not match intrinsics {intr.shape}")
    record = project_depth(d_tgt, pose, intr)
    return bilinear_sample(src, record), record


def splat_weights(record: ProjectionRecord, target_bounds: Tuple[int, int], active) -> np.ndarray:
    """Accumulate the footprint weights of active, valid source pixels on the target plane.

    Contributions are added pixel-major (row-major source order, then tl, tr, bl,
    br) so the result does not depend on scheduling.
    """
    width, height = target_bounds
    act = as_mask(active, record.shape).astype(bool) & record.valid
    buf = np.zeros((height, width), dtype=np.float64)
    if not act.any():
        return buf
    x0, y0, _, _, weights = _footprint_grids(record.coords[act])
    cols = np.stack([x0 + dx for dx, _ in CORNER_OFFSETS], axis=1).ravel()
    rows = np.stack([y0 + dy for _, dy in CORNER_OFFSETS], axis=1).ravel()
    wts = weights.T.ravel()
    inside = (cols >= 0) & (cols <= width - 1) & (rows >= 0) & (rows <= height - 1)
    np.add.at(buf, (rows[inside].astype(np.int64), cols[inside].astype(np.int64)), wts[inside])
    return buf
