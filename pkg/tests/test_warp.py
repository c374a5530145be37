import numpy as np
import pytest

from maskrecon.errors import ShapeError
from maskrecon.models import Intrinsics, PoseSE3, ProjectionRecord
from maskrecon.services.geometry import pixel_grid
from maskrecon.services.warp import (
    bilinear_sample, footprint, footprint_inside, reconstruct, sample_with_gradient, splat_weights,
)


def _record(coords, z=None):
    coords = np.asarray(coords, dtype=np.float64)
    h, w = coords.shape[:2]
    z = np.ones((h, w)) if z is None else np.asarray(z, dtype=np.float64)
    return ProjectionRecord(coords=coords, z=z, valid=z > 1e-6)


def test_footprint_weights_and_corners():
    fp = footprint((1.25, 2.5), (4, 4))
    assert fp.corners == [(1, 2), (2, 2), (1, 3), (2, 3)]
    np.testing.assert_allclose(fp.weights, [0.375, 0.125, 0.375, 0.125])
    assert fp.complete


def test_footprint_at_border_is_incomplete():
    fp = footprint((3.0, 0.0), (4, 4))
    assert fp.in_bounds == [True, False, True, False]
    assert not fp.complete
    assert fp.weights[1] == 0.0


def test_bilinear_sample_matches_hand_interpolation():
    src = np.array([[0.0, 0.2, 0.4],
                    [0.6, 0.8, 1.0]])
    coords = np.array([[[0.5, 0.5], [1.0, 0.0]]])
    out = bilinear_sample(src, _record(coords))
    np.testing.assert_allclose(out[0, 0, 0], (0.0 + 0.2 + 0.6 + 0.8) / 4)
    np.testing.assert_allclose(out[0, 1, 0], 0.2)


def test_sample_on_last_column_uses_zero_weight_corner():
    src = np.array([[0.1, 0.9]])
    out = bilinear_sample(src, _record(np.array([[[1.0, 0.0]]])))
    np.testing.assert_allclose(out[0, 0, 0], 0.9)


def test_out_of_bounds_and_invalid_samples_are_zero():
    src = np.full((3, 3), 0.5)
    coords = np.array([[[-0.5, 1.0], [2.5, 1.0], [1.0, 1.0]]])
    z = np.array([[1.0, 1.0, -1.0]])
    coords[0, 2] = np.nan
    out = bilinear_sample(src, _record(coords, z))
    assert np.all(out == 0.0)


def test_identity_reconstruction_is_exact(rendered):
    r = rendered("identity")
    recon, record = reconstruct(r.x_tm1, r.d_t, r.pose, r.intr)
    # the last row and column have zero-weight corners outside the image
    assert np.array_equal(recon, r.x_tm1)
    assert record.valid.all()


def test_reconstruct_rejects_mismatched_source():
    intr = Intrinsics(fx=1.0, fy=1.0, cx=1.0, cy=1.0, width=4, height=4)
    with pytest.raises(ShapeError):
        reconstruct(np.zeros((3, 3)), np.ones((4, 4)), PoseSE3.identity(), intr)


def test_sample_gradient_matches_finite_differences(rng):
    src = rng.uniform(size=(8, 8, 1))
    coords = rng.uniform(1.1, 5.9, size=(4, 4, 2))
    # keep away from cell boundaries where the derivative jumps
    frac = coords - np.floor(coords)
    coords = np.floor(coords) + np.clip(frac, 0.05, 0.95)
    _, d_u, d_v = sample_with_gradient(src, _record(coords))
    h = 1e-6
    for axis, analytic in ((0, d_u), (1, d_v)):
        plus, minus = coords.copy(), coords.copy()
        plus[..., axis] += h
        minus[..., axis] -= h
        numeric = (bilinear_sample(src, _record(plus)) - bilinear_sample(src, _record(minus))) / (2 * h)
        np.testing.assert_allclose(analytic, numeric, atol=1e-6)


def test_footprint_inside_requires_all_four_corners():
    coords = np.array([[[0.0, 0.0], [2.0, 0.0], [1.5, 1.5], [-0.1, 1.0]]])
    inside = footprint_inside(_record(coords), (3, 3))
    assert inside.tolist() == [[True, False, True, False]]


def test_splat_weights_sum_to_one_per_interior_pixel(rng):
    coords = rng.uniform(0.0, 6.0, size=(5, 5, 2))
    buf = splat_weights(_record(coords), (8, 8), np.ones((5, 5), dtype=np.uint8))
    np.testing.assert_allclose(buf.sum(), 25.0)


def test_splat_weights_skip_inactive_pixels():
    coords = np.array([[[1.0, 1.0], [2.5, 2.0]]])
    active = np.array([[1, 0]], dtype=np.uint8)
    buf = splat_weights(_record(coords), (4, 4), active)
    expected = np.zeros((4, 4))
    expected[1, 1] = 1.0
    np.testing.assert_array_equal(buf, expected)


def test_identity_splat_covers_every_pixel_once(small_intr):
    ii, jj = pixel_grid(small_intr.width, small_intr.height)
    record = _record(np.stack([ii, jj], axis=-1))
    buf = splat_weights(record, small_intr.bounds, np.ones(small_intr.shape, dtype=np.uint8))
    np.testing.assert_array_equal(buf, np.ones(small_intr.shape))


def test_footprint_on_a_row_line():
    fp = footprint((2.5, 3.0), (8, 8))
    assert fp.corners == [(2, 3), (3, 3), (2, 4), (3, 4)]
    np.testing.assert_array_equal(fp.weights, [0.5, 0.5, 0.0, 0.0])


def test_bilinear_is_exact_on_affine_images(rng):
    jj, ii = np.mgrid[0:6, 0:8].astype(np.float64)
    src = (ii + 2.0 * jj) / 30.0
    coords = np.stack([rng.uniform(0.0, 7.0, size=(4, 5)), rng.uniform(0.0, 5.0, size=(4, 5))], axis=-1)
    out = bilinear_sample(src, _record(coords))
    np.testing.assert_allclose(out[..., 0], (coords[..., 0] + 2.0 * coords[..., 1]) / 30.0, atol=1e-12)


def test_half_pixel_shift_of_a_ramp():
    ii, jj = pixel_grid(8, 4)
    ramp = ii / 8.0
    shifted = _record(np.stack([ii[:, :-1] + 0.5, jj[:, :-1]], axis=-1))
    np.testing.assert_allclose(bilinear_sample(ramp, shifted)[..., 0], (ii[:, :-1] + 0.5) / 8.0,
                               atol=1e-12)


def test_derivative_on_a_pixel_center_averages_both_sides():
    src = np.tile((np.arange(8) / 8.0) ** 2, (3, 1))
    coords = np.array([[[3.0, 1.0], [0.0, 1.0], [7.0, 1.0], [3.5, 1.0]]])
    _, d_u, d_v = sample_with_gradient(src, _record(coords))
    # interior hit: mean of (16-9)/64 and (9-4)/64; borders keep the one side they have
    np.testing.assert_allclose(d_u[0, :, 0], [12 / 128, 1 / 64, 13 / 64, 7 / 64])
    np.testing.assert_array_equal(d_v, 0.0)
