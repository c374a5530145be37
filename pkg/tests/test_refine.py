import numpy as np
import pytest

from maskrecon.errors import DivergenceError
from maskrecon.models import LossWeights, PoseSE3, RefineConfig
from maskrecon.services.geometry import compose, pose_exp
from maskrecon.services.metrics import depth_metrics
from maskrecon.services.refine import (
    FramePair, PhotometricProblem, _descend, _smoothness_gradient, finite_diff_check,
    loss_gradient, refine_depth, refine_pose, tie_groups,
)
from maskrecon.services.synth import PRESET_NAMES

# a generic small motion so no coordinate sits on a pixel center
TWIST_OFFSET = np.array([0.013, 0.007, 0.004, 0.001, -0.002, 0.0015])


def _frames(r):
    return FramePair(x_tm1=r.x_tm1, x_t=r.x_t, d_tm1=r.d_tm1)


class Quadratic:
    def __init__(self):
        self.A = np.array([[3.0, 0.5, 0.0], [0.5, 2.0, 0.2], [0.0, 0.2, 1.0]])

    def value(self, p):
        return 0.5 * p @ self.A @ p + p.sum()

    def gradient(self, p):
        return self.A @ p + 1.0


def test_finite_diff_check_on_quadratic():
    report = finite_diff_check(Quadratic(), np.array([0.3, -1.2, 0.7]), h=1e-4)
    assert report.checked == 3 and report.excluded == []
    assert report.max_rel_error < 1e-8


def test_finite_diff_check_rejects_bad_step():
    with pytest.raises(ValueError):
        finite_diff_check(Quadratic(), np.zeros(3), h=0.0)


@pytest.mark.parametrize("name", PRESET_NAMES)
def test_depth_gradient_matches_finite_differences(rendered, name):
    r = rendered(name)
    # per-pixel factors leave no two neighbours at the same depth
    rng = np.random.default_rng(7)
    depth = r.d_t * rng.uniform(1.05, 1.15, size=r.d_t.shape)
    problem = PhotometricProblem(_frames(r), r.intr, LossWeights(), "depth", depth, r.pose)
    params = problem.initial_params()
    problem.refresh_masks(params)
    report = finite_diff_check(problem, params, h=1e-4)
    assert report.checked >= 50
    assert report.max_rel_error < 1e-3


def test_tied_neighbours_are_reported_as_kinks(rendered):
    r = rendered("pure_translation")
    problem = PhotometricProblem(_frames(r), r.intr, LossWeights(), "depth", r.d_t * 1.1, r.pose)
    params = problem.initial_params()
    problem.refresh_masks(params)
    # a piecewise-constant depth map ties every pixel to a neighbour
    assert problem.kinks(params, 1e-4, np.arange(params.size)).all()
    report = finite_diff_check(problem, params, h=1e-4)
    assert report.checked == 0 and report.excluded


class Linear:
    def __init__(self, c):
        self.c = np.asarray(c, dtype=np.float64)

    def value(self, p):
        return float(self.c @ p)

    def gradient(self, p):
        return self.c.copy()


def test_tiny_step_skips_components_below_the_rounding_floor():
    problem = Linear([1e-4, 1.0])
    assert finite_diff_check(problem, np.ones(2), h=1e-4).checked == 2
    report = finite_diff_check(problem, np.ones(2), h=1e-9)
    assert report.checked == 1
    assert report.max_rel_error < 1e-3


@pytest.mark.parametrize("name", PRESET_NAMES)
def test_pose_gradient_matches_finite_differences(rendered, name):
    r = rendered(name)
    start = compose(pose_exp(TWIST_OFFSET), r.pose)
    problem = PhotometricProblem(_frames(r), r.intr, LossWeights(), "pose", r.d_t, start)
    params = problem.initial_params()
    problem.refresh_masks(params)
    report = finite_diff_check(problem, params, h=1e-8)
    assert report.checked + len(report.excluded) > 0
    assert report.max_rel_error < 1e-3


def test_pose_gradient_vanishes_at_identity(rendered):
    r = rendered("identity")
    g = loss_gradient(np.zeros(6), _frames(r), r.intr, LossWeights(), "pose", r.d_t, r.pose)
    assert np.linalg.norm(g) < 1e-6


def test_textureless_pair_moves_depth_by_smoothness_only(rendered):
    r = rendered("pure_translation")
    flat = np.full(r.intr.shape + (1,), 0.5)
    frames = FramePair(x_tm1=flat, x_t=flat, d_tm1=r.d_tm1)
    params = np.log(r.d_t)
    no_smooth = LossWeights(beta=0.0)
    g = loss_gradient(params, frames, r.intr, no_smooth, "depth", r.d_t, r.pose)
    assert not np.any(g)
    weights = LossWeights()
    g = loss_gradient(params, frames, r.intr, weights, "depth", r.d_t, r.pose)
    expected = weights.beta * _smoothness_gradient(r.d_t, flat) * r.d_t
    np.testing.assert_allclose(g, expected)


def _non_increasing(trace):
    losses = [row[1] for row in trace]
    return all(b <= a for a, b in zip(losses, losses[1:]))


def test_depth_refinement_halves_abs_rel(rendered):
    r = rendered("pure_translation")
    initial = r.d_t * 1.2
    before = depth_metrics(initial, r.d_t, median_scale=False)
    assert before.abs_rel == pytest.approx(0.2)
    cfg = RefineConfig(target="depth", step_size=0.05, max_iters=200)
    depth, trace = refine_depth(initial, _frames(r), r.pose, r.intr, cfg)
    after = depth_metrics(depth, r.d_t, median_scale=False)
    assert after.abs_rel <= 0.1
    assert _non_increasing(trace)
    assert [row[0] for row in trace] == sorted(row[0] for row in trace)


def test_depth_refinement_from_true_depth_stays_close(rendered):
    r = rendered("pure_translation")
    cfg = RefineConfig(target="depth", max_iters=20)
    depth, trace = refine_depth(r.d_t, _frames(r), r.pose, r.intr, cfg)
    assert depth_metrics(depth, r.d_t, median_scale=False).abs_rel < 0.02
    assert _non_increasing(trace)


def test_pose_refinement_recovers_translation(rendered):
    r = rendered("pure_translation")
    initial = compose(pose_exp([0.05, 0, 0, 0, 0, 0]), r.pose)
    cfg = RefineConfig(target="pose", step_size=0.01, max_iters=200)
    pose, trace = refine_pose(initial, r.d_t, _frames(r), r.intr, cfg)
    assert np.linalg.norm(pose.translation - r.pose.translation) < 0.005
    assert _non_increasing(trace)


def test_pose_refinement_keeps_true_pose(rendered):
    r = rendered("identity")
    cfg = RefineConfig(target="pose", step_size=0.01, max_iters=10)
    pose, _ = refine_pose(r.pose, r.d_t, _frames(r), r.intr, cfg)
    np.testing.assert_allclose(pose.translation, r.pose.translation, atol=1e-8)
    np.testing.assert_allclose(pose.rotation, r.pose.rotation, atol=1e-8)


class _Exploding:
    target = "depth"

    def __init__(self, first):
        self.first = first
        self.mask = None

    def initial_params(self):
        return np.zeros(2)

    def refresh_masks(self, params):
        pass

    def value(self, params):
        return self.first if not np.any(params) else float("nan")

    def gradient(self, params):
        return np.ones(2)

    def directions(self, params, g):
        return [g]

    def accept(self, params):
        return params


def test_non_finite_loss_raises_with_trace():
    with pytest.raises(DivergenceError) as info:
        _descend(_Exploding(1.0), RefineConfig())
    assert info.value.trace == [(0, 1.0, 0.05)]
    with pytest.raises(DivergenceError):
        _descend(_Exploding(float("inf")), RefineConfig())


def test_unknown_target_rejected(rendered):
    r = rendered("identity")
    with pytest.raises(ValueError):
        PhotometricProblem(_frames(r), r.intr, LossWeights(), "both", r.d_t, PoseSE3.identity())


def test_tie_groups_label_equal_neighbours():
    params = np.array([[1.0, 1.0, 2.0],
                       [3.0, 1.0, 2.0],
                       [3.0, 3.0, 1.0]])
    labels = tie_groups(params)
    assert labels[0, 0] == labels[0, 1] == labels[1, 1]
    assert labels[0, 2] == labels[1, 2]
    assert labels[1, 0] == labels[2, 0] == labels[2, 1]
    # the lone 1.0 in the corner touches no equal neighbour
    assert len(np.unique(labels)) == 4


def test_depth_direction_moves_tied_regions_together(rendered):
    r = rendered("pure_translation")
    problem = PhotometricProblem(_frames(r), r.intr, LossWeights(), "depth", r.d_t * 1.2, r.pose)
    params = problem.initial_params()
    problem.refresh_masks(params)
    g = problem.gradient(params)
    grouped = problem.directions(params, g)[0]
    # background and rectangle each take a single step value
    assert len(np.unique(grouped)) == 2
    assert np.sum(grouped * g) > 0


def test_pose_directions_start_with_the_metric_solve(rendered):
    r = rendered("pure_translation")
    start = compose(pose_exp(TWIST_OFFSET), r.pose)
    problem = PhotometricProblem(_frames(r), r.intr, LossWeights(), "pose", r.d_t, start)
    params = problem.initial_params()
    problem.refresh_masks(params)
    metric = problem.motion_metric(params)
    np.testing.assert_allclose(metric, metric.T)
    assert np.all(np.linalg.eigvalsh(metric) > 0)
    g = problem.gradient(params)
    directions = problem.directions(params, g)
    assert len(directions) == 2 + np.count_nonzero(g)
    assert np.max(np.abs(directions[0])) == pytest.approx(1.0)
    assert directions[0] @ g > 0
