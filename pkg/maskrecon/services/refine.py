"""Direct gradient-descent refinement of depth or pose on the masked photometric objective.

The objective reconstructs X_t from X_{t-1} at full resolution:
    alpha * L_rec + gamma * L_SSIM (+ beta * L_smooth for the depth target)
with masks held fixed between refreshes. Gradients are analytic, chained
through bilinear sampling, projection and backprojection.
"""
import logging
from typing import List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from ..errors import DivergenceError
from ..models import Intrinsics, LossWeights, PoseSE3, RefineConfig, as_depth, as_image
from .geometry import backproject, compose, pose_exp, project_depth, transform_points
from .losses import (
    box_mean_adjoint, edge_weights, reconstruction_loss, smoothness_loss, ssim_loss, ssim_terms,
)
from .masks import combine, repeated_masking
from .warp import sample_with_gradient

logger = logging.getLogger(__name__)

TraceRow = Tuple[int, float, float]

# finite_diff_check: smallest analytic component worth comparing, and the
# absolute rounding of one loss evaluation divided by the 1e-3 tolerance
GRAD_FLOOR = 1e-8
LOSS_ROUNDOFF = 1e-12
# relative ridge keeping the pose metric invertible
METRIC_RIDGE = 1e-9


class FramePair(NamedTuple):
    """Frames X_{t-1}, X_t and the depth of frame t-1 used for two-way masking."""
    x_tm1: np.ndarray
    x_t: np.ndarray
    d_tm1: np.ndarray


class PhotometricProblem:
    """Masked photometric objective over log-depth of frame t or a twist around the pose."""

    def __init__(self, frames: FramePair, intr: Intrinsics, weights: LossWeights, target: str,
                 depth, pose: PoseSE3, rounds: int = 3):
        if target not in ("depth", "pose"):
            raise ValueError(f"unknown refinement target {target!r}")
        self.intr = intr
        self.x_tm1 = as_image(frames.x_tm1, intr.shape)
        self.x_t = as_image(frames.x_t, intr.shape)
        self.d_tm1 = as_depth(frames.d_tm1, intr.shape)
        self.weights = weights
        self.target = target
        self.rounds = rounds
        self.depth = as_depth(depth, intr.shape)
        self.pose = pose
        self.mask = np.ones(intr.shape, dtype=np.uint8)

    # ---- parametrisation ----

    def initial_params(self) -> np.ndarray:
        return np.log(self.depth) if self.target == "depth" else np.zeros(6)

    def state(self, params: np.ndarray) -> Tuple[np.ndarray, PoseSE3]:
        if self.target == "depth":
            return np.exp(params), self.pose
        return self.depth, compose(pose_exp(params), self.pose)

    def accept(self, params: np.ndarray) -> np.ndarray:
        """Fold accepted parameters into the stored estimate; returns the new parameters."""
        depth, pose = self.state(params)
        self.depth, self.pose = depth, pose
        return params if self.target == "depth" else np.zeros(6)

    # ---- masks ----

    def compute_mask(self, params: np.ndarray) -> np.ndarray:
        depth, pose = self.state(params)
        res = repeated_masking(self.x_t, self.x_tm1, depth, self.d_tm1, pose, self.intr, self.rounds)
        return combine(res.masks_t)

    def refresh_masks(self, params: np.ndarray) -> None:
        self.mask = self.compute_mask(params)

    # ---- objective ----

    def value(self, params: np.ndarray) -> float:
        depth, pose = self.state(params)
        record = project_depth(depth, pose, self.intr)
        y, _, _ = sample_with_gradient(self.x_tm1, record)
        w = self.weights
        loss = (w.alpha * reconstruction_loss(self.x_t, y, self.mask)
                + w.gamma * ssim_loss(self.x_t, y, self.mask))
        if self.target == "depth":
            loss += w.beta * smoothness_loss(depth, self.x_t)
        return float(loss)

    def _grad_wrt_samples(self, y: np.ndarray) -> np.ndarray:
        """dL/dX̂ for the masked rec + SSIM terms, (H, W, C)."""
        x, m = self.x_t, self.mask.astype(np.float64)
        n = m.sum()
        if n == 0:
            return np.zeros_like(y)
        channels = x.shape[2]
        scale = (m / (n * channels))[..., None]
        g = self.weights.alpha * np.sign(y - x) * scale

        t = ssim_terms(x, y)
        inv = 1.0 / (t.b1 * t.b2)
        ds_da1, ds_da2 = t.a2 * inv, t.a1 * inv
        ds_db1, ds_db2 = -t.ssim / t.b1, -t.ssim / t.b2
        ds_dmu = 2 * t.mu_x * (ds_da1 - ds_da2) + 2 * t.mu_y * (ds_db1 - ds_db2)
        gs = -self.weights.gamma * scale * np.ones_like(y)
        g = g + box_mean_adjoint(gs * ds_dmu)
        g = g + 2 * y * box_mean_adjoint(gs * ds_db2)
        g = g + x * box_mean_adjoint(gs * 2 * ds_da2)
        return g

    def _grad_wrt_coords(self, depth: np.ndarray, pose: PoseSE3):
        record = project_depth(depth, pose, self.intr)
        y, d_u, d_v = sample_with_gradient(self.x_tm1, record)
        g = self._grad_wrt_samples(y)
        gu = (g * d_u).sum(axis=2)
        gv = (g * d_v).sum(axis=2)
        cloud = backproject(depth, self.intr)
        moved = transform_points(cloud, pose)
        return gu, gv, cloud, moved

    def _projection_jacobian(self, moved: np.ndarray):
        X, Y, Z = moved[..., 0], moved[..., 1], moved[..., 2]
        ok = Z > 0
        Zs = np.where(ok, Z, 1.0)
        fx, fy = self.intr.fx, self.intr.fy
        du = np.stack([fx / Zs, np.zeros_like(Z), -fx * X / Zs ** 2], axis=-1)
        dv = np.stack([np.zeros_like(Z), fy / Zs, -fy * Y / Zs ** 2], axis=-1)
        return du * ok[..., None], dv * ok[..., None]

    def gradient(self, params: np.ndarray) -> np.ndarray:
        depth, pose = self.state(params)
        gu, gv, cloud, moved = self._grad_wrt_coords(depth, pose)
        du, dv = self._projection_jacobian(moved)
        g_point = gu[..., None] * du + gv[..., None] * dv  # dL/dP' per pixel
        if self.target == "pose":
            g_trans = g_point.sum(axis=(0, 1))
            g_rot = np.cross(moved, g_point).sum(axis=(0, 1))
            return np.concatenate([g_trans, g_rot])
        # dP'/dlog d = R P
        rotated = cloud @ pose.rotation.T
        grad = (g_point * rotated).sum(axis=2)
        grad += self.weights.beta * _smoothness_gradient(depth, self.x_t) * depth
        return grad

    # ---- search directions ----

    def motion_metric(self, params: np.ndarray) -> Optional[np.ndarray]:
        """Sum over kept pixels of J^T J, J the 2x6 Jacobian of (i_hat, j_hat) w.r.t. a twist."""
        depth, pose = self.state(params)
        record = project_depth(depth, pose, self.intr)
        moved = transform_points(backproject(depth, self.intr), pose)
        du, dv = self._projection_jacobian(moved)
        keep = self.mask.astype(bool) & record.valid
        ju = np.concatenate([du, np.cross(moved, du)], axis=-1)[keep]
        jv = np.concatenate([dv, np.cross(moved, dv)], axis=-1)[keep]
        metric = ju.T @ ju + jv.T @ jv
        scale = float(np.trace(metric)) / 6.0
        if not scale > 0:
            return None
        return metric + METRIC_RIDGE * scale * np.eye(6)

    def directions(self, params: np.ndarray, g: np.ndarray) -> List[np.ndarray]:
        """Descent directions for the line search, most promising first.

        Depth first moves each region of tied neighbours as one, keeping the
        ties. Pose first solves the gradient against the pixel-motion metric,
        then falls back to the plain gradient and to single coordinates.
        """
        plain = _direction(g)
        if self.target == "depth":
            if self.weights.beta == 0:
                return [plain]
            labels = tie_groups(params)
            if labels.max() + 1 == labels.size:
                return [plain]
            grouped = _group_mean(g, labels)
            return [_direction(grouped), plain] if np.any(grouped) else [plain]
        out = []
        metric = self.motion_metric(params)
        if metric is not None:
            p = np.linalg.solve(metric, g)
            out.append(p / np.max(np.abs(p)))
        out.append(plain)
        for k in np.flatnonzero(g):
            axis = np.zeros_like(g)
            axis[k] = np.sign(g[k])
            out.append(axis)
        return out

    def _crossings(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        """Pixels whose bilinear cell, validity or kept L1 residual sign differ between a and b."""
        rec_a = project_depth(*self.state(a), self.intr)
        rec_b = project_depth(*self.state(b), self.intr)
        with np.errstate(invalid="ignore"):
            moved = np.any(np.floor(rec_a.coords) != np.floor(rec_b.coords), axis=2)
        flags = (moved & rec_a.valid & rec_b.valid) | (rec_a.valid != rec_b.valid)
        y_a, _, _ = sample_with_gradient(self.x_tm1, rec_a)
        y_b, _, _ = sample_with_gradient(self.x_tm1, rec_b)
        flipped = np.any(np.sign(y_a - self.x_t) != np.sign(y_b - self.x_t), axis=2)
        return flags | (flipped & self.mask.astype(bool))

    def kinks(self, params: np.ndarray, h: float, coords: np.ndarray) -> np.ndarray:
        """Which coordinates straddle a non-differentiable point within ±h.

        These are bilinear cell boundaries, L1 residual sign changes and, for
        depth, smoothness differences that change sign within ±h, ties with a
        neighbour included. A pose coordinate moves every pixel, so any
        crossing excludes it.
        """
        coords = np.asarray(coords, dtype=np.int64)
        if self.target == "pose":
            flags = np.zeros(len(coords), dtype=bool)
            for k, c in enumerate(coords):
                step = np.zeros_like(params)
                step[c] = h
                flags[k] = bool(self._crossings(params + step, params - step).any())
            return flags
        # each pixel's coordinate and residual depend on its own depth only
        flags = self._crossings(params + h, params - h)
        plus, minus, depth = np.exp(params + h), np.exp(params - h), np.exp(params)
        for axis in (0, 1):
            for shift in (1, -1):
                nb = np.roll(depth, shift, axis=axis)
                flip = np.sign(plus - nb) != np.sign(minus - nb)
                # roll wraps around; the wrapped neighbour is not a real one
                edge = [slice(None)] * 2
                edge[axis] = 0 if shift == 1 else -1
                flip[tuple(edge)] = False
                flags |= flip
        return flags.ravel()[coords]


def _smoothness_gradient(d: np.ndarray, x: np.ndarray) -> np.ndarray:
    """d smoothness_loss / d depth."""
    wx, wy = edge_weights(x)
    grad = np.zeros_like(d)
    dx, dy = np.diff(d, axis=1), np.diff(d, axis=0)
    if dx.size:
        gx = np.sign(dx) * wx / dx.size
        grad[:, 1:] += gx
        grad[:, :-1] -= gx
    if dy.size:
        gy = np.sign(dy) * wy / dy.size
        grad[1:, :] += gy
        grad[:-1, :] -= gy
    return grad


def loss_gradient(params: np.ndarray, frames: FramePair, intr: Intrinsics, weights: LossWeights,
                  target: str, depth, pose: PoseSE3, rounds: int = 3) -> np.ndarray:
    """Analytic gradient w.r.t. log-depth (per pixel) or a twist (6) with masks from params."""
    problem = PhotometricProblem(frames, intr, weights, target, depth, pose, rounds)
    problem.refresh_masks(params)
    return problem.gradient(params)


class FiniteDiffReport(NamedTuple):
    max_rel_error: float
    checked: int
    excluded: List[int]
    excluded_max_rel_error: float


def finite_diff_check(problem, params: np.ndarray, h: float, coords: Optional[Sequence[int]] = None,
                      sample: int = 100, seed: int = 0) -> FiniteDiffReport:
    """Central differences of problem.value against problem.gradient.

    All coordinates are checked when there are at most `sample` of them,
    otherwise a seeded random subset. Coordinates the problem reports as
    straddling a kink are compared separately. Analytic components below
    max(GRAD_FLOOR, LOSS_ROUNDOFF / h) are skipped: there the difference
    quotient is dominated by rounding in the two loss evaluations.
    """
    if h <= 0:
        raise ValueError("finite-difference step must be positive")
    floor = max(GRAD_FLOOR, LOSS_ROUNDOFF / h)
    params = np.asarray(params, dtype=np.float64)
    flat = params.ravel()
    if coords is None:
        if flat.size <= sample:
            coords = np.arange(flat.size)
        else:
            coords = np.sort(np.random.default_rng(seed).choice(flat.size, size=sample, replace=False))
    coords = np.asarray(coords, dtype=np.int64)
    analytic = np.asarray(problem.gradient(params)).ravel()[coords]
    kinks_fn = getattr(problem, "kinks", None)
    kinked = kinks_fn(params, h, coords) if kinks_fn else np.zeros(len(coords), dtype=bool)

    errors, excluded, excluded_errors = [], [], []
    for c, a, kink in zip(coords, analytic, kinked):
        step = np.zeros_like(flat)
        step[c] = h
        step = step.reshape(params.shape)
        numeric = (problem.value(params + step) - problem.value(params - step)) / (2 * h)
        if abs(a) <= floor:
            continue
        err = abs(a - numeric) / max(abs(a), abs(numeric))
        if kink:
            excluded.append(int(c))
            excluded_errors.append(err)
        else:
            errors.append(err)
    return FiniteDiffReport(
        max_rel_error=float(max(errors)) if errors else 0.0,
        checked=len(errors),
        excluded=excluded,
        excluded_max_rel_error=float(max(excluded_errors)) if excluded_errors else 0.0,
    )


def _direction(g: np.ndarray) -> np.ndarray:
    """Gradient scaled by its RMS over non-zero entries, clipped to unit max-norm."""
    nz = g[g != 0.0]
    scale = float(np.sqrt(np.mean(nz ** 2)))
    return np.clip(g / scale, -1.0, 1.0)


def tie_groups(params: np.ndarray) -> np.ndarray:
    """Labels of the 4-connected regions of exactly equal values, shaped like params."""
    height, width = params.shape
    index = np.arange(height * width).reshape(height, width)
    right = params[:, 1:] == params[:, :-1]
    down = params[1:, :] == params[:-1, :]
    src = np.concatenate([index[:, :-1][right], index[:-1, :][down]])
    dst = np.concatenate([index[:, 1:][right], index[1:, :][down]])
    graph = coo_matrix((np.ones(src.size), (src, dst)), shape=(index.size, index.size))
    _, labels = connected_components(graph, directed=False)
    return labels.reshape(height, width)


def _group_mean(g: np.ndarray, labels: np.ndarray) -> np.ndarray:
    flat = labels.ravel()
    sums = np.bincount(flat, weights=g.ravel())
    return (sums / np.bincount(flat))[flat].reshape(g.shape)


def _line_search(problem, params: np.ndarray, loss: float, direction: np.ndarray, step: float,
                 max_halvings: int, it: int, trace: List[TraceRow]):
    """Halve the step until the loss drops; (params, loss, step) or None."""
    for _ in range(max_halvings + 1):
        trial = params - step * direction
        trial_loss = problem.value(trial)
        if not np.isfinite(trial_loss):
            raise DivergenceError(f"non-finite loss at iteration {it}", trace)
        if trial_loss < loss:
            return trial, trial_loss, step
        step /= 2.0
    return None


def _descend(problem: PhotometricProblem, cfg: RefineConfig) -> List[TraceRow]:
    params = problem.initial_params()
    problem.refresh_masks(params)
    loss = problem.value(params)
    step = cfg.step_size
    trace: List[TraceRow] = [(0, loss, step)]
    if not np.isfinite(loss):
        raise DivergenceError("initial loss is not finite", trace)
    accepted = 0
    for it in range(1, cfg.max_iters + 1):
        g = problem.gradient(params)
        g_max = float(np.max(np.abs(g)))
        if g_max <= cfg.grad_tol:
            logger.debug("gradient vanished at iteration %d", it)
            break
        # the step may grow back by doubling after each accepted move
        start = min(cfg.step_size, 2.0 * step)
        found = None
        for direction in problem.directions(params, g):
            found = _line_search(problem, params, loss, direction, start, cfg.max_halvings, it, trace)
            if found is not None:
                break
        if found is None:
            logger.debug("no decrease along any direction after %d halvings; stopping at iteration %d",
                         cfg.max_halvings, it)
            break
        candidate, loss, step = found
        params = problem.accept(candidate)
        accepted += 1
        if accepted % cfg.mask_refresh == 0:
            previous = problem.mask
            problem.refresh_masks(params)
            refreshed = problem.value(params)
            # a refresh that raises the objective is discarded to keep the trace monotone
            if refreshed <= loss:
                loss = refreshed
            else:
                problem.mask = previous
        trace.append((it, loss, step))
        logger.debug("iteration %d: loss %.6g step %.3g", it, loss, step)
    logger.info("%s refinement: %d accepted steps, loss %.6g -> %.6g",
                problem.target, accepted, trace[0][1], trace[-1][1])
    return trace


def refine_depth(initial, frames: FramePair, pose: PoseSE3, intr: Intrinsics,
                 cfg: RefineConfig) -> Tuple[np.ndarray, List[TraceRow]]:
    """Gradient descent on log-depth of frame t; returns (depth, trace of (iter, loss, step))."""
    problem = PhotometricProblem(frames, intr, cfg.weights, "depth", initial, pose, cfg.rounds)
    trace = _descend(problem, cfg)
    return problem.depth, trace


def refine_pose(initial: PoseSE3, true_depth, frames: FramePair, intr: Intrinsics,
                cfg: RefineConfig) -> Tuple[PoseSE3, List[TraceRow]]:
    """Gradient descent on a twist composed onto the current pose estimate."""
    problem = PhotometricProblem(frames, intr, cfg.weights, "pose", true_depth, initial, cfg.rounds)
    trace = _descend(problem, cfg)
    return problem.pose, trace
