import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cassirecon.data import generate_toy_dataset, toy_mask
from cassirecon.metrics import psnr
from cassirecon.physics import (SensingOperator, SpectralCube, disperse, disperse_adjoint, initial_estimate,
                                integrate, modulate, random_mask, shot_noise)


def loop_forward(cube, mask, d):
    """Modulate, shift and sum with explicit loops."""
    h, w, nb = cube.shape
    y = np.zeros((h, w + d * (nb - 1)))
    for i in range(h):
        for j in range(w):
            for b in range(nb):
                y[i, j + d * b] += mask[i, j] * cube[i, j, b]
    return y


def dense_from_indices(mask, nb, d):
    """Sensing matrix written down entry by entry (row-major cube and measurement)."""
    h, w = mask.shape
    wy = w + d * (nb - 1)
    a = np.zeros((h * wy, h * w * nb))
    for i in range(h):
        for j in range(w):
            for b in range(nb):
                a[i * wy + j + d * b, (i * w + j) * nb + b] = mask[i, j]
    return a


RUNNING_CUBE = np.stack([[[1.0, 2.0]], [[3.0, 4.0]]], axis=-1)  # (1, 2, 2): G0=[[1,2]], G1=[[3,4]]
RUNNING_MASK = np.array([[1.0, 0.5]])


class TestRunningExample:
    def test_modulation(self):
        out = modulate(RUNNING_CUBE, RUNNING_MASK)
        assert np.array_equal(out[:, :, 0], [[1.0, 1.0]])
        assert np.array_equal(out[:, :, 1], [[3.0, 2.0]])

    def test_dispersion_columns(self):
        s = disperse(modulate(RUNNING_CUBE, RUNNING_MASK), 1)
        assert s.shape == (1, 3, 2)
        assert np.array_equal(s[0, :, 0], [1.0, 1.0, 0.0])
        assert np.array_equal(s[0, :, 1], [0.0, 3.0, 2.0])

    def test_measurement(self):
        y = SensingOperator(RUNNING_MASK, 2, 1).forward(RUNNING_CUBE)
        assert np.array_equal(y, [[1.0, 4.0, 2.0]])
        assert np.array_equal(y, loop_forward(RUNNING_CUBE, RUNNING_MASK, 1))


class TestTrivialCases:
    def test_mask_extremes(self):
        cube = np.random.default_rng(0).random((3, 4, 2))
        assert np.array_equal(modulate(cube, np.ones((3, 4))), cube)
        assert not modulate(cube, np.zeros((3, 4))).any()

    def test_disperse_identities(self):
        cube = np.random.default_rng(1).random((3, 4, 3))
        assert np.array_equal(disperse(cube, 0), cube)
        one = cube[:, :, :1]
        assert np.array_equal(disperse(one, 5), one)
        assert np.array_equal(disperse_adjoint(disperse(cube, 2), 2), cube)

    def test_integrate_and_zero(self):
        band = np.random.default_rng(2).random((2, 3, 1))
        assert np.array_equal(integrate(band), band[:, :, 0])
        op = SensingOperator(random_mask(3, 4, np.random.default_rng(3)), 3, 2)
        assert not op.forward(np.zeros(op.cube_shape)).any()
        assert not op.adjoint(np.zeros(op.measurement_shape)).any()

    def test_single_band_is_diagonal(self):
        rng = np.random.default_rng(4)
        mask = rng.random((3, 4))
        img = rng.random((3, 4, 1))
        op = SensingOperator(mask, 1, 7)
        assert np.array_equal(op.forward(img), mask * img[:, :, 0])
        assert np.array_equal(op.adjoint(img[:, :, 0])[:, :, 0], mask * img[:, :, 0])
        assert np.array_equal(op.dense_matrix(), np.diag(mask.ravel()))

    def test_column_sparsity(self):
        a = SensingOperator(random_mask(3, 4, np.random.default_rng(5)) + 0.5, 3, 2).dense_matrix()
        assert np.all((a != 0).sum(axis=0) == 1)

    def test_mask_shape_errors(self):
        op = SensingOperator(np.ones((3, 4)), 2, 1)
        with pytest.raises(ValueError):
            op.forward(np.ones((4, 3, 2)))
        with pytest.raises(ValueError):
            op.adjoint(np.ones((3, 4)))
        with pytest.raises(ValueError):
            SensingOperator(np.ones(3), 2, 1)
        with pytest.raises(ValueError):
            SensingOperator(np.ones((2, 2)), 2, -1)


def _random_instance(rng):
    h, w, nb, d = (int(rng.integers(1, 5)), int(rng.integers(1, 6)), int(rng.integers(1, 5)), int(rng.integers(0, 3)))
    return SensingOperator(rng.random((h, w)), nb, d)


class TestDenseOracle:
    def test_forward_on_fixed_instance(self):
        rng = np.random.default_rng(6)
        op = SensingOperator(rng.random((3, 4)), 3, 2)
        g = rng.random(op.cube_shape)
        a = dense_from_indices(op.mask, 3, 2)
        np.testing.assert_allclose(op.forward(g).ravel(), a @ g.ravel(), rtol=0, atol=1e-12)

    def test_matrix_matches_index_oracle(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            op = _random_instance(rng)
            assert np.array_equal(op.dense_matrix(), dense_from_indices(op.mask, op.bands, op.step))
            g = rng.standard_normal(op.cube_shape)
            np.testing.assert_allclose(op.dense_matrix() @ g.ravel(), op.forward(g).ravel(), rtol=0, atol=1e-12)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_adjoint_identity(self, seed):
        rng = np.random.default_rng(seed)
        op = _random_instance(rng)
        x, y = rng.standard_normal(op.cube_shape), rng.standard_normal(op.measurement_shape)
        lhs, rhs = np.vdot(op.forward(x), y), np.vdot(x, op.adjoint(y))
        assert abs(lhs - rhs) <= 1e-10 * max(1.0, abs(lhs))


class TestShotNoise:
    def test_zero_measurement(self):
        assert not shot_noise(np.zeros((2, 3)), seed=0).any()

    def test_unbiased(self):
        y = np.full((1, 100_000), 0.37)
        assert abs(shot_noise(y, 11, seed=1).mean() / 0.37 - 1.0) < 0.01

    def test_seeded(self):
        y = np.random.default_rng(2).random((4, 5))
        assert np.array_equal(shot_noise(y, seed=9), shot_noise(y, seed=9))

    def test_negative_rejected(self):
        with pytest.raises(ValueError):
            shot_noise(-np.ones((2, 2)))


class TestInitialEstimate:
    def test_full_mask_single_band(self):
        y = np.random.default_rng(3).random((3, 4))
        g0 = initial_estimate(y, SensingOperator(np.ones((3, 4)), 1, 0))
        np.testing.assert_allclose(g0[:, :, 0], y, rtol=2e-6)

    def test_zero_measurement(self):
        op = SensingOperator(np.ones((3, 4)), 2, 1)
        assert not initial_estimate(np.zeros(op.measurement_shape), op).any()

    def test_beats_plain_back_projection(self):
        ds = generate_toy_dataset(0, 6)
        op = SensingOperator(toy_mask(0, 32, 32), 8, 1)
        gains = []
        for cube in ds.scenes:
            y = op.forward(cube.data)
            gains.append(psnr(cube.data, initial_estimate(y, op)) - psnr(cube.data, op.adjoint(y)))
        assert min(gains) > 0


def test_spectral_cube_validation():
    with pytest.raises(ValueError):
        SpectralCube(np.ones((2, 2)))
    cube = SpectralCube(np.ones((2, 2, 3)))
    assert cube.shape == (2, 2, 3)
    assert np.all(np.diff(cube.wavelengths) > 0)
