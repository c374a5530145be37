"""Masked photometric, SSIM and smoothness losses and the multi-scale total."""
from typing import List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
from scipy.ndimage import uniform_filter

from ..errors import ShapeError
from ..models import (
    Intrinsics, LossReport, LossWeights, MaskSet, PoseSE3, as_depth, as_image, as_mask,
)
from .masks import combine, repeated_masking

# SSIM stabilisers for unit-range images
C1 = 0.01 ** 2
C2 = 0.03 ** 2


def _pair(x, x_hat, m=None):
    x, x_hat = as_image(x), as_image(x_hat)
    if x.shape != x_hat.shape:
        raise ShapeError(f"image shapes differ: {x.shape} vs {x_hat.shape}")
    if m is None:
        return x, x_hat, None
    return x, x_hat, as_mask(m, x.shape[:2])


def _masked_mean(per_pixel: np.ndarray, m: np.ndarray) -> float:
    n = int(m.sum())
    if n == 0:
        return 0.0
    return float((per_pixel * m).sum() / n)


def reconstruction_loss(x, x_hat, m, norm: str = "l1") -> float:
    """Mean over unmasked pixels and channels of |X - X̂| (or squared, norm="l2")."""
    x, x_hat, m = _pair(x, x_hat, m)
    diff = x - x_hat
    if norm == "l1":
        per_pixel = np.abs(diff).mean(axis=2)
    elif norm == "l2":
        per_pixel = (diff ** 2).mean(axis=2)
    else:
        raise ValueError(f"unknown norm {norm!r}")
    return _masked_mean(per_pixel, m)


# ---- SSIM ----

def _window_counts(shape: Tuple[int, ...]) -> np.ndarray:
    return uniform_filter(np.ones(shape), size=(3, 3, 1), mode="constant")


def box_mean(a: np.ndarray) -> np.ndarray:
    """3x3 mean over the in-image part of each window, per channel."""
    return uniform_filter(a, size=(3, 3, 1), mode="constant") / _window_counts(a.shape)


def box_mean_adjoint(g: np.ndarray) -> np.ndarray:
    """Transpose of box_mean (the zero-padded uniform kernel is symmetric)."""
    return uniform_filter(g / _window_counts(g.shape), size=(3, 3, 1), mode="constant")


class SsimTerms(NamedTuple):
    ssim: np.ndarray  # (H, W, C), unclipped
    mu_x: np.ndarray
    mu_y: np.ndarray
    a1: np.ndarray
    a2: np.ndarray
    b1: np.ndarray
    b2: np.ndarray


def ssim_terms(x: np.ndarray, y: np.ndarray) -> SsimTerms:
    mu_x, mu_y = box_mean(x), box_mean(y)
    var_x = box_mean(x * x) - mu_x ** 2
    var_y = box_mean(y * y) - mu_y ** 2
    cov = box_mean(x * y) - mu_x * mu_y
    a1 = 2 * mu_x * mu_y + C1
    a2 = 2 * cov + C2
    b1 = mu_x ** 2 + mu_y ** 2 + C1
    b2 = var_x + var_y + C2
    return SsimTerms(a1 * a2 / (b1 * b2), mu_x, mu_y, a1, a2, b1, b2)


def ssim_map(x, x_hat) -> np.ndarray:
    """Per-pixel SSIM (3x3 uniform windows), averaged over channels and clamped to [-1, 1]."""
    x, x_hat, _ = _pair(x, x_hat)
    return np.clip(ssim_terms(x, x_hat).ssim.mean(axis=2), -1.0, 1.0)


def ssim_loss(x, x_hat, m) -> float:
    x, x_hat, m = _pair(x, x_hat, m)
    return _masked_mean(1.0 - ssim_map(x, x_hat), m)


# ---- smoothness ----

def edge_weights(x: np.ndarray):
    """exp(-|∂I|) along x and y, image gradients averaged over channels."""
    gx = np.abs(np.diff(x, axis=1)).mean(axis=2)
    gy = np.abs(np.diff(x, axis=0)).mean(axis=2)
    return np.exp(-gx), np.exp(-gy)


def smoothness_loss(d, x) -> float:
    """Edge-aware first-order smoothness; each available gradient direction contributes its mean."""
    x = as_image(x)
    d = as_depth(d, x.shape[:2])
    wx, wy = edge_weights(x)
    total = 0.0
    dx, dy = np.diff(d, axis=1), np.diff(d, axis=0)
    if dx.size:
        total += float((np.abs(dx) * wx).mean())
    if dy.size:
        total += float((np.abs(dy) * wy).mean())
    return total


def depth_normalize(d) -> np.ndarray:
    d = as_depth(d)
    return d / d.mean()


# ---- pyramid ----

class PyramidLevel(NamedTuple):
    image: np.ndarray
    depth: np.ndarray
    masks: MaskSet


def avg_pool2(a: np.ndarray) -> np.ndarray:
    h, w = a.shape[0] // 2, a.shape[1] // 2
    a = a[:2 * h, :2 * w]
    return a.reshape(h, 2, w, 2, *a.shape[2:]).mean(axis=(1, 3))


def and_pool2(m: np.ndarray) -> np.ndarray:
    h, w = m.shape[0] // 2, m.shape[1] // 2
    m = m[:2 * h, :2 * w]
    return m.reshape(h, 2, w, 2).min(axis=(1, 3)).astype(np.uint8)


def _check_pyramid_size(shape: Tuple[int, int], num_scales: int) -> None:
    need = 2 ** (num_scales - 1)
    if shape[0] < need or shape[1] < need:
        raise ShapeError(f"image {shape} too small for {num_scales} scales (needs >= {need})")


def build_pyramid(x, d, masks: MaskSet, num_scales: int = 4) -> List[PyramidLevel]:
    """2x2 average pooling for images and depth; 2x2 AND pooling for masks."""
    x = as_image(x)
    d = as_depth(d, x.shape[:2])
    if masks.shape != x.shape[:2]:
        raise ShapeError(f"masks {masks.shape} do not match image {x.shape[:2]}")
    _check_pyramid_size(x.shape[:2], num_scales)
    levels = [PyramidLevel(x, d, masks)]
    for _ in range(num_scales - 1):
        prev = levels[-1]
        levels.append(PyramidLevel(
            avg_pool2(prev.image), avg_pool2(prev.depth),
            MaskSet(edge=and_pool2(prev.masks.edge),
                    overlap=and_pool2(prev.masks.overlap),
                    blank=and_pool2(prev.masks.blank))))
    return levels


def _pool_levels(a: np.ndarray, num_scales: int) -> List[np.ndarray]:
    out = [a]
    for _ in range(num_scales - 1):
        out.append(avg_pool2(out[-1]))
    return out


def total_loss(frames: Sequence, depths: Sequence, pose: PoseSE3, intr: Intrinsics,
               weights: Optional[LossWeights] = None, dn_enabled: bool = False,
               rounds: int = 3, use_masks: bool = True, norm: str = "l1") -> LossReport:
    """Weighted multi-scale loss, averaged over both reconstruction directions.

    frames = (X_{t-1}, X_t), depths = (D_{t-1}, D_t); pose takes frame-t camera
    points into the frame t-1 camera. With use_masks=False the same report is
    computed with all-ones masks.
    """
    if weights is None:
        weights = LossWeights.defaults(depth_normalization=dn_enabled)
    x_tm1, x_t = (as_image(f, intr.shape) for f in frames)
    d_tm1, d_t = (as_depth(d, intr.shape) for d in depths)
    n = weights.num_scales
    _check_pyramid_size(intr.shape, n)

    res = repeated_masking(x_t, x_tm1, d_t, d_tm1, pose, intr, rounds)
    masks = {"t": res.masks_t, "t-1": res.masks_tm1}
    if not use_masks:
        masks = {k: MaskSet.ones(intr.shape) for k in masks}
    directions = {
        "t": (build_pyramid(x_t, d_t, masks["t"], n), _pool_levels(res.recon_t, n)),
        "t-1": (build_pyramid(x_tm1, d_tm1, masks["t-1"], n), _pool_levels(res.recon_tm1, n)),
    }

    rec: List[float] = []
    ssim: List[float] = []
    smooth: List[float] = []
    counts = {k: [] for k in directions}
    for level in range(n):
        r, s, q = [], [], []
        for key, (pyramid, recons) in directions.items():
            lvl = pyramid[level]
            m = combine(lvl.masks)
            counts[key].append(int(m.sum()))
            r.append(reconstruction_loss(lvl.image, recons[level], m, norm=norm))
            q.append(ssim_loss(lvl.image, recons[level], m))
            depth = depth_normalize(lvl.depth) if dn_enabled else lvl.depth
            s.append(smoothness_loss(depth, lvl.image))
        rec.append(float(np.mean(r)))
        ssim.append(float(np.mean(q)))
        smooth.append(float(np.mean(s)))

    total = sum(weights.alpha * a + weights.beta * b + weights.gamma * c
                for a, b, c in zip(rec, smooth, ssim))
    return LossReport(rec=rec, ssim=ssim, smooth=smooth, total=float(total),
                      valid_counts=counts, weights=weights)


def triplet_loss(frames: Sequence, depths: Sequence, poses: Sequence, intr: Intrinsics,
                 weights: Optional[LossWeights] = None, dn_enabled: bool = False,
                 rounds: int = 3, use_masks: bool = True, norm: str = "l1") -> LossReport:
    """Loss over three consecutive frames as the mean of its two pair reports.

    frames = (X_{t-1}, X_t, X_{t+1}) with matching depths; poses = (frame t ->
    frame t-1, frame t+1 -> frame t). valid_counts keys read "<frame>|<source>".
    """
    if len(frames) != 3 or len(depths) != 3 or len(poses) != 2:
        raise ShapeError("triplet_loss needs three frames, three depths and two poses")
    if weights is None:
        weights = LossWeights.defaults(depth_normalization=dn_enabled)
    options = dict(weights=weights, dn_enabled=dn_enabled, rounds=rounds,
                   use_masks=use_masks, norm=norm)
    back = total_loss(frames[:2], depths[:2], poses[0], intr, **options)
    ahead = total_loss(frames[1:], depths[1:], poses[1], intr, **options)

    def mean(a: List[float], b: List[float]) -> List[float]:
        return [0.5 * (x + y) for x, y in zip(a, b)]

    counts = {
        "t-1|t": back.valid_counts["t-1"],
        "t|t-1": back.valid_counts["t"],
        "t|t+1": ahead.valid_counts["t-1"],
        "t+1|t": ahead.valid_counts["t"],
    }
    return LossReport(rec=mean(back.rec, ahead.rec), ssim=mean(back.ssim, ahead.ssim),
                      smooth=mean(back.smooth, ahead.smooth),
                      total=0.5 * (back.total + ahead.total), valid_counts=counts, weights=weights)
