import numpy as np
import pytest

from maskrecon.errors import MetricsError, ShapeError
from maskrecon.models import PoseSE3
from maskrecon.services.geometry import compose, pose_exp
from maskrecon.services.metrics import (
    ate_snippets, depth_metrics, evaluate_depth_batch, snippet_ate,
)


def _at(x, y=0.0, z=0.0):
    return PoseSE3(rotation=np.eye(3), translation=[x, y, z])


def test_perfect_prediction(rng):
    gt = rng.uniform(1.0, 70.0, size=(8, 8))
    m = depth_metrics(gt, gt)
    assert (m.abs_rel, m.sq_rel, m.rmse, m.rmse_log) == (0.0, 0.0, 0.0, 0.0)
    assert (m.delta1, m.delta2, m.delta3) == (1.0, 1.0, 1.0)


def test_median_scaling_removes_global_scale(rng):
    gt = rng.uniform(1.0, 70.0, size=(8, 8))
    m = depth_metrics(2.0 * gt, gt, median_scale=True)
    assert m.abs_rel == pytest.approx(0.0, abs=1e-12)
    assert m.delta1 == 1.0


def test_unscaled_error_hand_computed():
    gt = np.array([[10.0, 20.0]])
    pred = np.array([[12.0, 20.0]])
    m = depth_metrics(pred, gt, median_scale=False)
    assert m.abs_rel == pytest.approx(0.1)
    assert m.sq_rel == pytest.approx(0.2)
    assert m.rmse == pytest.approx(np.sqrt(2.0))
    assert m.delta1 == 1.0


def test_cap_and_validity_select_pixels():
    gt = np.array([[10.0, 60.0, 0.0, np.nan]])
    pred = np.array([[10.0, 1.0, 5.0, 5.0]])
    assert depth_metrics(pred, gt, cap=50, median_scale=False).abs_rel == 0.0
    m80 = depth_metrics(pred, gt, cap=80, median_scale=False)
    assert m80.abs_rel == pytest.approx((0.0 + 59.0 / 60.0) / 2)
    valid = np.array([[0, 1, 1, 1]])
    assert depth_metrics(pred, gt, valid, cap=80, median_scale=False).delta3 == 0.0


def test_prediction_is_clamped():
    gt = np.array([[40.0]])
    m = depth_metrics(np.array([[500.0]]), gt, cap=50, median_scale=False)
    assert m.abs_rel == pytest.approx(10.0 / 40.0)


def test_no_valid_pixels():
    with pytest.raises(MetricsError):
        depth_metrics(np.ones((2, 2)), np.zeros((2, 2)))


def test_shape_mismatch():
    with pytest.raises(ShapeError):
        depth_metrics(np.ones((2, 2)), np.ones((2, 3)))


def test_delta_thresholds_are_monotone(rng):
    gt = rng.uniform(1.0, 50.0, size=(16, 16))
    pred = gt * rng.uniform(0.3, 3.0, size=gt.shape)
    m = depth_metrics(pred, gt, median_scale=False)
    assert m.delta1 <= m.delta2 <= m.delta3


def test_batch_averages_frames():
    gt = np.full((2, 2), 10.0)
    m = evaluate_depth_batch([gt, gt * 1.1], [gt, gt], median_scale=False)
    assert m.abs_rel == pytest.approx(0.05)
    with pytest.raises(MetricsError):
        evaluate_depth_batch([], [])


def test_ate_middle_frame_error_on_a_static_ground_truth():
    gt = [_at(0.0), _at(0.0), _at(0.0)]
    pred = [_at(0.0), _at(0.1), _at(0.0)]
    # no ground-truth motion, so scale alignment must not shrink the prediction away
    assert snippet_ate(pred, gt) == pytest.approx(0.1 / np.sqrt(3))
    assert snippet_ate(pred, gt, align_scale=False) == pytest.approx(0.1 / np.sqrt(3))
    stats = ate_snippets(pred * 2, gt * 2, snippet_len=3)
    assert stats.windows == 4


def test_ate_scaled_window_matches_brute_force():
    gt = [_at(0.0), _at(1.0), _at(2.0)]
    pred = [_at(0.0), _at(0.6, 0.1), _at(1.0)]
    p = np.array([q.translation for q in pred])
    g = np.array([q.translation for q in gt])
    s = (g * p).sum() / (p * p).sum()
    expected = np.sqrt(np.mean(np.sum((s * p - g) ** 2, axis=1)))
    assert snippet_ate(pred, gt) == pytest.approx(expected)


def test_ate_ignores_uniform_scale(rng):
    gt = [pose_exp(np.concatenate([rng.normal(size=3), rng.normal(scale=0.1, size=3)]))
          for _ in range(6)]
    pred = [PoseSE3(rotation=q.rotation, translation=3.0 * q.translation) for q in gt]
    stats = ate_snippets(pred, gt, snippet_len=3)
    assert stats.mean == pytest.approx(0.0, abs=1e-9)
    assert stats.std == pytest.approx(0.0, abs=1e-9)


def test_ate_sequence_checks():
    poses = [_at(0.0), _at(1.0)]
    with pytest.raises(MetricsError):
        ate_snippets(poses, poses, snippet_len=3)
    with pytest.raises(MetricsError):
        ate_snippets(poses, poses[:1], snippet_len=2)


def test_rmse_is_symmetric(rng):
    a, b = rng.uniform(1.0, 70.0, size=(2, 6, 6))
    forward = depth_metrics(a, b, median_scale=False)
    backward = depth_metrics(b, a, median_scale=False)
    assert forward.rmse == pytest.approx(backward.rmse, rel=1e-12)
    assert forward.rmse_log == pytest.approx(backward.rmse_log, rel=1e-12)


def test_ate_ignores_a_global_rigid_motion(rng):
    gt = [pose_exp(rng.normal(scale=0.3, size=6)) for _ in range(5)]
    pred = [pose_exp(rng.normal(scale=0.3, size=6)) for _ in range(5)]
    world = pose_exp([1.0, -2.0, 0.5, 0.3, -0.2, 0.1])
    base = ate_snippets(pred, gt)
    moved = ate_snippets([compose(world, p) for p in pred], [compose(world, g) for g in gt])
    assert moved.mean == pytest.approx(base.mean, abs=1e-9)
    assert moved.std == pytest.approx(base.std, abs=1e-9)
