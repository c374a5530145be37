from enum import IntEnum
from typing import Dict, List, Literal, Optional, Tuple

import numpy as np
from pydantic import (
    BaseModel, ConfigDict, Field, NonNegativeFloat, PositiveFloat, PositiveInt,
    field_validator, model_validator,
)

from .errors import ShapeError

# Points at or behind this depth (m) are invalid projections.
Z_MIN = 1e-6
# Accumulated splat weight below which a target pixel counts as blank.
W_BLANK = 1e-6
# Orthonormality / determinant tolerance for rotations.
ROTATION_TOL = 1e-9


class _ArrayModel(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)


# ---- dense grids (plain numpy arrays, checked on the way in) ----

def as_depth(values, shape: Optional[Tuple[int, int]] = None) -> np.ndarray:
    """DepthMap: (H, W) float64, strictly positive."""
    d = np.asarray(values, dtype=np.float64)
    if d.ndim != 2:
        raise ShapeError(f"depth map must be 2-D, got shape {d.shape}")
    if shape is not None and d.shape != tuple(shape):
        raise ShapeError(f"depth map shape {d.shape} does not match {tuple(shape)}")
    if not np.all(np.isfinite(d)) or np.any(d <= 0):
        raise ValueError("depth values must be finite and strictly positive")
    return d


def as_image(values, shape: Optional[Tuple[int, int]] = None) -> np.ndarray:
    """ImageBuffer: (H, W, C) float64 in [0, 1], C in {1, 3}. 2-D input gets C=1."""
    x = np.asarray(values, dtype=np.float64)
    if x.ndim == 2:
        x = x[..., None]
    if x.ndim != 3 or x.shape[2] not in (1, 3):
        raise ShapeError(f"image must be (H, W, 1|3), got shape {x.shape}")
    if shape is not None and x.shape[:2] != tuple(shape):
        raise ShapeError(f"image shape {x.shape[:2]} does not match {tuple(shape)}")
    if np.any(~np.isfinite(x)) or np.any(x < 0.0) or np.any(x > 1.0):
        raise ValueError("image values must lie in [0, 1]")
    return x


def as_mask(values, shape: Optional[Tuple[int, int]] = None) -> np.ndarray:
    """Mask: (H, W) uint8 with values in {0, 1}."""
    m = np.asarray(values)
    if m.ndim != 2:
        raise ShapeError(f"mask must be 2-D, got shape {m.shape}")
    if shape is not None and m.shape != tuple(shape):
        raise ShapeError(f"mask shape {m.shape} does not match {tuple(shape)}")
    if m.dtype == bool:
        return m.astype(np.uint8)
    if not np.all((m == 0) | (m == 1)):
        raise ValueError("mask must be strictly binary")
    return m.astype(np.uint8)


# ---- camera ----

class Intrinsics(BaseModel):
    """Pinhole camera. Pixel (i, j) = (column, row), centers at integer coordinates."""
    model_config = ConfigDict(frozen=True)

    fx: PositiveFloat
    fy: PositiveFloat
    cx: float
    cy: float
    width: PositiveInt
    height: PositiveInt

    @model_validator(mode="after")
    def _principal_point_inside(self):
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point must lie inside the image")
        return self

    @property
    def K(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx],
                         [0.0, self.fy, self.cy],
                         [0.0, 0.0, 1.0]])

    @property
    def bounds(self) -> Tuple[int, int]:
        return (self.width, self.height)

    @property
    def shape(self) -> Tuple[int, int]:
        return (self.height, self.width)


class PoseSE3(_ArrayModel):
    """Rigid motion p -> R p + t."""
    rotation: np.ndarray
    translation: np.ndarray

    @field_validator("rotation", mode="before")
    @classmethod
    def _check_rotation(cls, v):
        R = np.asarray(v, dtype=np.float64)
        if R.shape != (3, 3):
            raise ValueError(f"rotation must be 3x3, got {R.shape}")
        if np.max(np.abs(R.T @ R - np.eye(3))) > ROTATION_TOL:
            raise ValueError("rotation is not orthonormal")
        if abs(np.linalg.det(R) - 1.0) > ROTATION_TOL:
            raise ValueError("rotation determinant is not 1")
        return R

    @field_validator("translation", mode="before")
    @classmethod
    def _check_translation(cls, v):
        t = np.asarray(v, dtype=np.float64).reshape(-1)
        if t.shape != (3,) or not np.all(np.isfinite(t)):
            raise ValueError("translation must be a finite 3-vector")
        return t

    @classmethod
    def identity(cls) -> "PoseSE3":
        return cls(rotation=np.eye(3), translation=np.zeros(3))

    def matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.rotation
        T[:3, 3] = self.translation
        return T

    def is_identity(self) -> bool:
        return bool(np.array_equal(self.rotation, np.eye(3)) and not np.any(self.translation))


class Twist(_ArrayModel):
    """(vx, vy, vz, wx, wy, wz): translational (m) then rotational (rad) part."""
    vector: np.ndarray

    @field_validator("vector", mode="before")
    @classmethod
    def _check_vector(cls, v):
        xi = np.asarray(v, dtype=np.float64).reshape(-1)
        if xi.shape != (6,) or not np.all(np.isfinite(xi)):
            raise ValueError("twist must be a finite 6-vector")
        return xi


# ---- warping ----

class ProjectionRecord(_ArrayModel):
    """Per source pixel: continuous target coordinates (i_hat, j_hat), depth z, validity."""
    coords: np.ndarray   # (H, W, 2): [..., 0] = i_hat (column), [..., 1] = j_hat (row)
    z: np.ndarray        # (H, W)
    valid: np.ndarray    # (H, W) bool

    @model_validator(mode="after")
    def _consistent(self):
        h, w = self.z.shape
        if self.coords.shape != (h, w, 2) or self.valid.shape != (h, w):
            raise ShapeError("projection record grids disagree in shape")
        if np.any(self.valid & ~(self.z > Z_MIN)):
            raise ValueError("pixels with z <= z_min must be invalid")
        return self

    @property
    def shape(self) -> Tuple[int, int]:
        return self.z.shape


class BilinearFootprint(BaseModel):
    """Corners ordered tl, tr, bl, br as (column, row)."""
    corners: List[Tuple[int, int]]
    weights: List[float]
    in_bounds: List[bool]

    @property
    def complete(self) -> bool:
        return all(self.in_bounds)


# ---- masks ----

class MaskSet(_ArrayModel):
    """Edge / overlap / blank masks gating one frame's loss."""
    edge: np.ndarray
    overlap: np.ndarray
    blank: np.ndarray

    @model_validator(mode="after")
    def _same_shape(self):
        shapes = {self.edge.shape, self.overlap.shape, self.blank.shape}
        if len(shapes) != 1:
            raise ShapeError(f"masks disagree in shape: {sorted(shapes)}")
        for m in (self.edge, self.overlap, self.blank):
            as_mask(m)
        return self

    @property
    def shape(self) -> Tuple[int, int]:
        return self.edge.shape

    @classmethod
    def ones(cls, shape: Tuple[int, int]) -> "MaskSet":
        one = np.ones(shape, dtype=np.uint8)
        return cls(edge=one, overlap=one.copy(), blank=one.copy())


# ---- losses ----

class LossWeights(BaseModel):
    model_config = ConfigDict(frozen=True)

    alpha: NonNegativeFloat = 0.15
    beta: NonNegativeFloat = 0.03
    gamma: NonNegativeFloat = 0.85
    num_scales: PositiveInt = 4

    @classmethod
    def defaults(cls, depth_normalization: bool = False) -> "LossWeights":
        """α=0.15, β=0.03, γ=0.85 over four scales; β=0.2 with depth normalization."""
        return cls(beta=0.2) if depth_normalization else cls()


class LossReport(BaseModel):
    rec: List[float]
    ssim: List[float]
    smooth: List[float]
    total: float
    valid_counts: Dict[str, List[int]]
    weights: LossWeights = Field(exclude=True)

    @model_validator(mode="after")
    def _total_matches(self):
        w = self.weights
        expected = sum(w.alpha * r + w.beta * s + w.gamma * q
                       for r, s, q in zip(self.rec, self.smooth, self.ssim))
        if abs(expected - self.total) > 1e-9 * max(1.0, abs(expected)):
            raise ValueError("total does not equal the weighted per-scale sum")
        return self


# ---- synthetic scenes ----

class Rect(BaseModel):
    """Fronto-parallel textured rectangle at world depth z."""
    model_config = ConfigDict(frozen=True)

    x_min: float
    x_max: float
    y_min: float
    y_max: float
    z: PositiveFloat
    seed: int = 0
    base: float = Field(0.35, ge=0.25, le=0.75)
    min_wavelength: PositiveFloat = 0.5  # world metres

    @model_validator(mode="after")
    def _extents(self):
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise ValueError("rectangle extents must be non-empty")
        return self


class Background(BaseModel):
    """Infinite textured plane at world depth z."""
    model_config = ConfigDict(frozen=True)

    z: PositiveFloat
    seed: int = 0
    base: float = Field(0.65, ge=0.25, le=0.75)
    min_wavelength: PositiveFloat = 1.0


class Scene(BaseModel):
    model_config = ConfigDict(frozen=True)

    primitives: List[Rect] = Field(default_factory=list)
    background: Background

    @model_validator(mode="after")
    def _depth_order(self):
        depths = [p.z for p in self.primitives]
        if any(z >= self.background.z for z in depths):
            raise ValueError("primitive depths must lie in (0, z_bg)")
        if len(set(depths)) != len(depths):
            raise ValueError("primitive depths must be pairwise distinct")
        return self


class VisibilityLabel(IntEnum):
    VISIBLE_BOTH = 0
    OCCLUDED_IN_OTHER = 1
    OUT_OF_VIEW_IN_OTHER = 2


class Preset(_ArrayModel):
    """Scene plus world-to-camera extrinsics of frames t-1 and t."""
    name: str
    scene: Scene
    intrinsics: Intrinsics
    pose_tm1: PoseSE3
    pose_t: PoseSE3


# ---- evaluation ----

class DepthMetrics(BaseModel):
    abs_rel: NonNegativeFloat
    sq_rel: NonNegativeFloat
    rmse: NonNegativeFloat
    rmse_log: NonNegativeFloat
    delta1: float = Field(ge=0.0, le=1.0)
    delta2: float = Field(ge=0.0, le=1.0)
    delta3: float = Field(ge=0.0, le=1.0)

    @model_validator(mode="after")
    def _monotone(self):
        if not (self.delta1 <= self.delta2 <= self.delta3):
            raise ValueError("delta accuracies must be non-decreasing")
        return self


class AteStats(BaseModel):
    mean: NonNegativeFloat
    std: NonNegativeFloat
    windows: int = Field(0, ge=0)


# ---- configuration ----

class RefineConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    target: Literal["depth", "pose"] = "depth"
    step_size: PositiveFloat = 0.05
    max_iters: PositiveInt = 200
    weights: LossWeights = Field(default_factory=LossWeights)
    mask_refresh: PositiveInt = 5
    max_halvings: PositiveInt = 20
    grad_tol: NonNegativeFloat = 1e-12
    rounds: PositiveInt = 3


Subcommand = Literal[
    "synth", "warp", "masks", "loss", "refine-depth", "refine-pose",
    "eval-depth", "eval-ate", "serve",
]


class RunConfig(BaseModel):
    subcommand: Subcommand
    out: Optional[str] = None
    preset: Optional[str] = None
    input_dir: Optional[str] = None
    seed: int = 0
    rounds: PositiveInt = 3
    weights: LossWeights = Field(default_factory=LossWeights)
    dn: bool = False
    use_masks: bool = True
    three_frame: bool = False
    norm: Literal["l1", "l2"] = "l1"
    channels: Literal[1, 3] = 1
    median_scale: bool = True
    cap: Literal[50, 80] = 80
    pred: Optional[str] = None
    gt: Optional[str] = None
    valid: Optional[str] = None
    snippet_len: int = Field(3, ge=2)
    align_scale: bool = True
    iters: PositiveInt = 200
    # None picks 0.05 for depth and 0.01 for pose
    step: Optional[PositiveFloat] = None
    init_scale: PositiveFloat = 1.2
    perturb: float = 0.05
    host: str = "127.0.0.1"
    port: int = Field(8000, ge=1, le=65535)

    @model_validator(mode="after")
    def _inputs(self):
        if self.subcommand in {"warp", "masks", "loss", "refine-depth", "refine-pose"}:
            if not self.preset and not self.input_dir:
                raise ValueError(f"{self.subcommand} needs --preset or --input")
        if self.subcommand == "synth" and not self.preset:
            raise ValueError("synth needs --preset")
        if self.three_frame and not self.preset:
            raise ValueError("--three-frame renders its third frame from a --preset")
        if self.subcommand in {"eval-depth", "eval-ate"} and not (self.pred and self.gt):
            raise ValueError(f"{self.subcommand} needs --pred and --gt")
        return self
