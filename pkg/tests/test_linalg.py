import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_almost_equal

from metricforge.linalg import (
    RANK_TOL,
    frob_inner,
    min_eigenvalue,
    psd_project,
    sym_eig,
    symmetrize,
)


def random_symmetric(rng, d, scale=1.0):
    a = scale * rng.standard_normal((d, d))
    return (a + a.T) / 2.0


class TestFrobInner:

    def test_identity_with_itself(self):
        assert frob_inner(np.eye(2), np.eye(2)) == 2.0

    def test_zero_matrix(self):
        a = np.array([[1.0, 2.0], [2.0, 5.0]])
        assert frob_inner(a, np.zeros((2, 2))) == 0.0

    def test_diagonal_product(self):
        assert frob_inner(np.diag([1.0, 2.0]), np.diag([3.0, 4.0])) == 11.0

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            frob_inner(np.eye(2), np.eye(3))

    def test_matches_trace_formula(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            a = random_symmetric(rng, 5)
            b = random_symmetric(rng, 5)
            assert_allclose(frob_inner(a, b), np.trace(a.T @ b), rtol=1e-12)


class TestSymmetrize:

    def test_averages_transpose(self):
        a = np.array([[1.0, 2.0], [0.0, 3.0]])
        out = symmetrize(a)
        assert_array_almost_equal(out, [[1.0, 1.0], [1.0, 3.0]])
        assert (out == out.T).all()

    def test_rejects_nonsquare(self):
        with pytest.raises(ValueError):
            symmetrize(np.zeros((2, 3)))


class TestSymEig:

    def test_identity(self):
        decomp = sym_eig(np.eye(3))
        assert_allclose(decomp.values, [1.0, 1.0, 1.0])
        assert np.abs(decomp.vectors.T @ decomp.vectors - np.eye(3)).max() <= 1e-10

    def test_diagonal_input(self):
        decomp = sym_eig(np.diag([3.0, -1.0]))
        assert_allclose(decomp.values, [3.0, -1.0])
        # eigenvectors are the axes up to sign
        assert_allclose(np.abs(decomp.vectors), np.eye(2), atol=1e-12)

    def test_reconstruction_6x6(self):
        rng = np.random.default_rng(0)
        a = random_symmetric(rng, 6)
        decomp = sym_eig(a)
        rebuilt = decomp.vectors @ np.diag(decomp.values) @ decomp.vectors.T
        assert np.abs(rebuilt - a).max() <= 1e-8

    def test_descending_order(self):
        rng = np.random.default_rng(1)
        for _ in range(10):
            values = sym_eig(random_symmetric(rng, 8)).values
            assert (np.diff(values) <= 1e-12).all()

    def test_non_finite_rejected(self):
        bad = np.array([[1.0, np.nan], [np.nan, 1.0]])
        with pytest.raises(ValueError):
            sym_eig(bad)

    def test_repeated_eigenvalues(self):
        # identity plus a rank-1 bump keeps a (d-1)-fold eigenvalue
        rng = np.random.default_rng(2)
        for d in (3, 6, 10):
            v = rng.standard_normal(d)
            a = np.eye(d) + np.outer(v, v)
            decomp = sym_eig(a)
            scale = max(1.0, np.abs(a).max())
            rebuilt = decomp.vectors @ np.diag(decomp.values) @ decomp.vectors.T
            assert np.abs(rebuilt - a).max() <= 1e-8 * scale
            gram = decomp.vectors.T @ decomp.vectors
            assert np.abs(gram - np.eye(d)).max() <= 1e-10

    def test_random_sizes(self):
        rng = np.random.default_rng(3)
        for d in range(2, 21):
            a = random_symmetric(rng, d, scale=rng.uniform(0.1, 10.0))
            decomp = sym_eig(a)
            scale = max(1.0, np.abs(a).max())
            rebuilt = decomp.vectors @ np.diag(decomp.values) @ decomp.vectors.T
            assert np.abs(rebuilt - a).max() <= 1e-8 * scale
            gram = decomp.vectors.T @ decomp.vectors
            assert np.abs(gram - np.eye(d)).max() <= 1e-10


class TestPsdProject:

    def test_psd_input_unchanged(self):
        rng = np.random.default_rng(4)
        b = rng.standard_normal((5, 5))
        a = b @ b.T
        assert np.abs(psd_project(a) - a).max() <= 1e-10 * np.abs(a).max()

    def test_diagonal_clamping(self):
        assert_allclose(psd_project(np.diag([2.0, -3.0])), np.diag([2.0, 0.0]),
                        atol=1e-14)

    def test_idempotent(self):
        rng = np.random.default_rng(5)
        for _ in range(50):
            y = psd_project(random_symmetric(rng, 7))
            assert np.abs(psd_project(y) - y).max() <= 1e-10

    def test_min_eigenvalue_bound(self):
        rng = np.random.default_rng(6)
        for _ in range(200):
            d = int(rng.integers(2, 21))
            a = random_symmetric(rng, d, scale=rng.uniform(0.1, 100.0))
            out = psd_project(a)
            scale = max(1.0, np.abs(a).max())
            assert min_eigenvalue(out) >= -1e-9 * scale

    def test_nearest_point_against_sampled_cone(self):
        # no random PSD sample may be closer to the input than the projection
        rng = np.random.default_rng(8)
        for _ in range(20):
            d = int(rng.integers(2, 8))
            y0 = random_symmetric(rng, d)
            y = psd_project(y0)
            base = np.linalg.norm(y - y0)
            for _ in range(50):
                b = rng.standard_normal((d, d)) * rng.uniform(0.1, 3.0)
                z = b @ b.T
                assert np.linalg.norm(z - y0) >= base - 1e-9

    def test_projection_optimality_condition(self):
        # <Y - Y0, Y> >= 0 up to noise characterizes the nearest PSD point
        rng = np.random.default_rng(9)
        for _ in range(100):
            y0 = random_symmetric(rng, 6)
            y = psd_project(y0)
            assert frob_inner(y - y0, y) >= -1e-8

    def test_negative_part_norm_identity(self):
        # the flipped negative part m has ||m||_F^2 = sum of clamped
        # negative eigenvalues squared
        rng = np.random.default_rng(10)
        for _ in range(50):
            y0 = random_symmetric(rng, 6)
            decomp = sym_eig(y0)
            cut = RANK_TOL * np.linalg.norm(y0)
            neg = np.where(decomp.values < -cut, -decomp.values, 0.0)
            m = (decomp.vectors * neg) @ decomp.vectors.T
            target = float((neg * neg).sum())
            assert abs(frob_inner(m, m) - target) <= 1e-8 * max(1.0, target)
