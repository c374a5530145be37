"""Pinhole camera and rigid-body transforms.

Pixel convention: (i, j) = (column, row) with pixel centers at integer
coordinates, so pixel (i, j) backprojects along K^-1 [i, j, 1]^T.
"""
from typing import Sequence

import numpy as np

from ..errors import ShapeError
from ..models import Intrinsics, PoseSE3, ProjectionRecord, Twist, Z_MIN, as_depth

_SMALL_ANGLE = 1e-8
# projected coordinates this close to a pixel center are snapped onto it
GRID_SNAP = 1e-9


def pixel_grid(width: int, height: int):
    """Column and row index grids, each (height, width) float64."""
    jj, ii = np.meshgrid(np.arange(height, dtype=np.float64),
                         np.arange(width, dtype=np.float64), indexing="ij")
    return ii, jj


def backproject(depth, intr: Intrinsics) -> np.ndarray:
    """Point cloud (H, W, 3) with point (i, j) = D_ij * K^-1 [i, j, 1]^T."""
    d = np.asarray(depth, dtype=np.float64)
    if d.shape != intr.shape:
        raise ShapeError(f"depth shape {d.shape} does not match intrinsics {intr.shape}")
    d = as_depth(d)
    ii, jj = pixel_grid(intr.width, intr.height)
    x = (ii - intr.cx) / intr.fx * d
    y = (jj - intr.cy) / intr.fy * d
    return np.stack([x, y, d], axis=-1)


def transform_points(cloud: np.ndarray, pose: PoseSE3) -> np.ndarray:
    """p -> R p + t for every point of the grid."""
    cloud = np.asarray(cloud, dtype=np.float64)
    if cloud.shape[-1] != 3:
        raise ShapeError(f"point cloud must end in 3 coordinates, got {cloud.shape}")
    if pose.is_identity():
        return cloud.copy()
    return cloud @ pose.rotation.T + pose.translation


def project(cloud: np.ndarray, intr: Intrinsics) -> ProjectionRecord:
    """Perspective division of K p. Points with z <= Z_MIN are flagged invalid (coords NaN).

    Coordinates within GRID_SNAP of an integer are rounded onto it, so a
    landing on a pixel center picks the same overlap cell and footprint
    whatever the rounding of the K^-1 / K round trip.
    """
    cloud = np.asarray(cloud, dtype=np.float64)
    z = cloud[..., 2]
    valid = z > Z_MIN
    safe_z = np.where(valid, z, 1.0)
    u = intr.fx * cloud[..., 0] / safe_z + intr.cx
    v = intr.fy * cloud[..., 1] / safe_z + intr.cy
    coords = np.stack([u, v], axis=-1)
    nearest = np.round(coords)
    coords = np.where(np.abs(coords - nearest) < GRID_SNAP, nearest, coords)
    coords[~valid] = np.nan
    return ProjectionRecord(coords=coords, z=z.copy(), valid=valid)


def project_depth(depth, pose: PoseSE3, intr: Intrinsics) -> ProjectionRecord:
    """Backproject, move and project in one go.

    The identity motion maps every pixel onto itself exactly, without the
    rounding of a K^-1 / K round trip.
    """
    if pose.is_identity():
        d = as_depth(depth, intr.shape)
        ii, jj = pixel_grid(intr.width, intr.height)
        return ProjectionRecord(coords=np.stack([ii, jj], axis=-1), z=d.copy(), valid=d > Z_MIN)
    return project(transform_points(backproject(depth, intr), pose), intr)


# ---- SE(3) algebra ----

def _hat(w: np.ndarray) -> np.ndarray:
    return np.array([[0.0, -w[2], w[1]],
                     [w[2], 0.0, -w[0]],
                     [-w[1], w[0], 0.0]])


def pose_exp(twist) -> PoseSE3:
    """SE(3) exponential: Rodrigues rotation and V-matrix translation."""
    xi = twist.vector if isinstance(twist, Twist) else Twist(vector=twist).vector
    v, w = xi[:3], xi[3:]
    theta = float(np.linalg.norm(w))
    W = _hat(w)
    W2 = W @ W
    if theta < _SMALL_ANGLE:
        # Taylor terms; exact at theta == 0
        A, B, C = 1.0 - theta ** 2 / 6.0, 0.5 - theta ** 2 / 24.0, 1.0 / 6.0 - theta ** 2 / 120.0
    else:
        A = np.sin(theta) / theta
        B = (1.0 - np.cos(theta)) / theta ** 2
        C = (theta - np.sin(theta)) / theta ** 3
    R = np.eye(3) + A * W + B * W2
    V = np.eye(3) + B * W + C * W2
    return PoseSE3(rotation=R, translation=V @ v)


def inverse(pose: PoseSE3) -> PoseSE3:
    Rt = pose.rotation.T
    return PoseSE3(rotation=Rt, translation=-Rt @ pose.translation)


def compose(a: PoseSE3, b: PoseSE3) -> PoseSE3:
    """a ∘ b: apply b first, then a."""
    return PoseSE3(rotation=a.rotation @ b.rotation, translation=a.rotation @ b.translation + a.translation)


def relative_pose(world_to_a: PoseSE3, world_to_b: PoseSE3) -> PoseSE3:
    """Motion taking points from camera b's frame into camera a's frame."""
    return compose(world_to_a, inverse(world_to_b))


def pose_to_matrix(pose: PoseSE3) -> np.ndarray:
    return pose.matrix()


def pose_from_matrix(T: Sequence) -> PoseSE3:
    M = np.asarray(T, dtype=np.float64).reshape(4, 4)
    if not np.allclose(M[3], [0.0, 0.0, 0.0, 1.0], atol=1e-12):
        raise ValueError("last row of a rigid transform must be [0, 0, 0, 1]")
    return PoseSE3(rotation=M[:3, :3], translation=M[:3, 3])
