"""Deterministic fronto-parallel scenes, a ray-cast renderer and a visibility oracle.

Scene poses are world-to-camera extrinsics (p_cam = R p_world + t). Rays are
cast through pixel centers; the depth of a hit is its camera z coordinate.
"""
import logging
from typing import Dict, Tuple, Union

import numpy as np

from ..errors import SceneError
from ..models import (
    Background, Intrinsics, PoseSE3, Preset, Rect, Scene, VisibilityLabel, Z_MIN,
)
from .geometry import backproject, compose, pixel_grid, project, relative_pose, transform_points

logger = logging.getLogger(__name__)

SINUSOIDS_PER_AXIS = 2
AMPLITUDE = 0.06
# occlusion test tolerance along the optical axis (m)
DEPTH_TOL = 1e-6

PRESET_NAMES = ("identity", "pure_translation", "occluder_fig3", "reverse_fig5", "thin_object_fig7")

DEFAULT_INTRINSICS = Intrinsics(fx=100.0, fy=100.0, cx=64.0, cy=32.0, width=128, height=64)


def _texture_params(seed: int, min_wavelength: float):
    rng = np.random.default_rng(seed)
    n = 2 * SINUSOIDS_PER_AXIS
    wavelengths = rng.uniform(min_wavelength, 3.0 * min_wavelength, size=n)
    phases = rng.uniform(0.0, 2.0 * np.pi, size=n)
    return wavelengths, phases


def texture(surface: Union[Rect, Background], x: np.ndarray, y: np.ndarray,
            channels: int = 1) -> np.ndarray:
    """Sum of seeded sinusoids along world x and y; values stay inside [0.01, 0.99]."""
    wavelengths, phases = _texture_params(surface.seed, surface.min_wavelength)
    out = np.empty(x.shape + (channels,))
    for c in range(channels):
        shift = 2.0 * np.pi * c / 3.0
        val = np.full(x.shape, surface.base)
        for k in range(2 * SINUSOIDS_PER_AXIS):
            coord = x if k < SINUSOIDS_PER_AXIS else y
            val = val + AMPLITUDE * np.sin(2.0 * np.pi * coord / wavelengths[k] + phases[k] + shift)
        out[..., c] = val
    return out


def _camera_rays(intr: Intrinsics, pose: PoseSE3, u: np.ndarray, v: np.ndarray):
    center = -pose.rotation.T @ pose.translation
    d_cam = np.stack([(u - intr.cx) / intr.fx, (v - intr.cy) / intr.fy, np.ones_like(u)], axis=-1)
    d_world = d_cam @ pose.rotation  # rows are R^T d_cam
    return center, d_world


def _check_camera(scene: Scene, center: np.ndarray, d_world: np.ndarray) -> None:
    nearest = min([p.z for p in scene.primitives] + [scene.background.z])
    if center[2] >= nearest - Z_MIN:
        raise SceneError("camera is inside or behind the scene geometry")
    if np.any(d_world[..., 2] <= 0):
        raise SceneError("some camera rays never reach the background plane")


def cast(scene: Scene, intr: Intrinsics, pose: PoseSE3, u: np.ndarray, v: np.ndarray):
    """Nearest hit along the rays through continuous pixel coordinates (u, v).

    Returns (depth, surface index, world x, world y); index -1 is the background.
    """
    u, v = np.asarray(u, dtype=np.float64), np.asarray(v, dtype=np.float64)
    center, d_world = _camera_rays(intr, pose, u, v)
    _check_camera(scene, center, d_world)
    dz = d_world[..., 2]
    s = (scene.background.z - center[2]) / dz
    index = np.full(u.shape, -1, dtype=np.int64)
    for k, rect in enumerate(scene.primitives):
        sk = (rect.z - center[2]) / dz
        hx = center[0] + sk * d_world[..., 0]
        hy = center[1] + sk * d_world[..., 1]
        hit = (hx >= rect.x_min) & (hx <= rect.x_max) & (hy >= rect.y_min) & (hy <= rect.y_max)
        closer = hit & (sk < s)
        s = np.where(closer, sk, s)
        index = np.where(closer, k, index)
    if np.any(s <= Z_MIN):
        raise SceneError("scene geometry lies behind the camera")
    hx = center[0] + s * d_world[..., 0]
    hy = center[1] + s * d_world[..., 1]
    return s, index, hx, hy


def render(scene: Scene, intr: Intrinsics, pose: PoseSE3, channels: int = 1):
    """Ray-cast image (H, W, C) and depth (H, W) through every pixel center."""
    ii, jj = pixel_grid(intr.width, intr.height)
    depth, index, hx, hy = cast(scene, intr, pose, ii, jj)
    image = np.empty(intr.shape + (channels,))
    surfaces = [scene.background] + list(scene.primitives)
    for k, surface in enumerate(surfaces, start=-1):
        sel = index == k
        if sel.any():
            image[sel] = texture(surface, hx[sel], hy[sel], channels)
    return image, depth


def visibility_oracle(scene: Scene, intr: Intrinsics, pose_a: PoseSE3, pose_b: PoseSE3) -> np.ndarray:
    """Per-pixel VisibilityLabel of frame a's surface points as seen from frame b."""
    _, depth_a = render(scene, intr, pose_a)
    a_to_b = relative_pose(pose_b, pose_a)
    record = project(transform_points(backproject(depth_a, intr), a_to_b), intr)
    u, v = record.coords[..., 0], record.coords[..., 1]
    with np.errstate(invalid="ignore"):
        in_view = record.valid & (u >= 0) & (u <= intr.width - 1) & (v >= 0) & (v <= intr.height - 1)
    labels = np.full(intr.shape, int(VisibilityLabel.OUT_OF_VIEW_IN_OTHER), dtype=np.uint8)
    labels[in_view] = int(VisibilityLabel.VISIBLE_BOTH)
    if in_view.any():
        depth_b, _, _, _ = cast(scene, intr, pose_b, u[in_view], v[in_view])
        hidden = depth_b < record.z[in_view] - DEPTH_TOL
        sub = labels[in_view]
        sub[hidden] = int(VisibilityLabel.OCCLUDED_IN_OTHER)
        labels[in_view] = sub
    return labels


# ---- presets ----

def _wavelength(z: float, intr: Intrinsics, pixels: float = 8.0) -> float:
    """World wavelength that projects to `pixels` pixels at depth z."""
    return pixels * z / intr.fx


def _camera_at(x: float) -> PoseSE3:
    """World-to-camera extrinsics of an unrotated camera centred at (x, 0, 0)."""
    return PoseSE3(rotation=np.eye(3), translation=np.array([-x, 0.0, 0.0]))


def preset(name: str, seed: int = 0) -> Preset:
    """Deterministic scene, camera pair and intrinsics reproducing each occlusion configuration."""
    intr = DEFAULT_INTRINSICS
    s = 100 * seed

    def bg(z: float) -> Background:
        return Background(z=z, seed=s + 1, base=0.65, min_wavelength=_wavelength(z, intr))

    def rect(x0, x1, y0, y1, z, k=2) -> Rect:
        return Rect(x_min=x0, x_max=x1, y_min=y0, y_max=y1, z=z, seed=s + k, base=0.35,
                    min_wavelength=_wavelength(z, intr))

    # rectangle edges sit between pixel centers so ray hits never depend on rounding
    specs: Dict[str, Tuple[Scene, float]] = {
        # rectangle at 5 m over the image centre, background at 10 m
        "identity": (Scene(primitives=[rect(-0.81, 0.79, -0.51, 0.49, 5.0)], background=bg(10.0)), 0.0),
        "pure_translation": (Scene(primitives=[rect(-0.81, 0.79, -0.51, 0.49, 5.0)], background=bg(10.0)), 0.2),
        # near occluder, lateral camera motion in either direction
        "occluder_fig3": (Scene(primitives=[rect(-0.305, 0.295, -0.5, 0.5, 3.0)], background=bg(12.0)), 0.4),
        "reverse_fig5": (Scene(primitives=[rect(-0.305, 0.295, -0.5, 0.5, 3.0)], background=bg(12.0)), -0.4),
        # two pixels wide at 6 m over a 12 m background: 5 px against 2.5 px of
        # parallax, so the object is seen in both frames but moves past its own width;
        # frame t column 62 is kept in round 1 only by frame t-1 column 64, which
        # overlap removes, and falls to the blank mask in round 2
        "thin_object_fig7": (Scene(primitives=[rect(0.015, 0.135, -1.47, 1.41, 6.0)], background=bg(12.0)), 0.3),
    }
    if name not in specs:
        raise SceneError(f"unknown preset {name!r}; expected one of {', '.join(PRESET_NAMES)}")
    scene, tx = specs[name]
    return Preset(name=name, scene=scene, intrinsics=intr, pose_tm1=_camera_at(0.0), pose_t=_camera_at(tx))


def preset_motion(p: Preset) -> PoseSE3:
    """Motion taking frame-t camera points into the frame t-1 camera."""
    return relative_pose(p.pose_tm1, p.pose_t)


def render_pair(p: Preset, channels: int = 1):
    """(x_tm1, d_tm1, x_t, d_t) for a preset."""
    x_tm1, d_tm1 = render(p.scene, p.intrinsics, p.pose_tm1, channels)
    x_t, d_t = render(p.scene, p.intrinsics, p.pose_t, channels)
    logger.debug("rendered preset %s (%dx%d)", p.name, p.intrinsics.width, p.intrinsics.height)
    return x_tm1, d_tm1, x_t, d_t


def next_pose(p: Preset) -> PoseSE3:
    """World-to-camera extrinsics of frame t+1, repeating the t-1 -> t camera step."""
    return compose(relative_pose(p.pose_t, p.pose_tm1), p.pose_t)


def render_triplet(p: Preset, channels: int = 1):
    """(x_tm1, d_tm1, x_t, d_t, x_tp1, d_tp1) with the camera moving on at the same rate."""
    x_tm1, d_tm1, x_t, d_t = render_pair(p, channels)
    x_tp1, d_tp1 = render(p.scene, p.intrinsics, next_pose(p), channels)
    return x_tm1, d_tm1, x_t, d_t, x_tp1, d_tp1
