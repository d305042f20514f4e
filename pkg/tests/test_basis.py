import numpy as np
import pytest

from l1coreg.basis import (
    SUPPORT_TOL_FACTOR,
    CoefficientVector,
    WaveletBasis,
    _db2_filters,
    project,
)


def test_filter_orthonormality_conditions():
    h, g = _db2_filters()
    assert abs(h @ h - 1.0) <= 1e-14
    assert abs(h[0] * h[2] + h[1] * h[3]) <= 1e-14
    assert abs(g.sum()) <= 1e-14
    assert abs(g @ np.arange(4.0)) <= 1e-14


@pytest.mark.parametrize("n", [8, 64, 256, 1024])
def test_reconstruction_and_isometry(n):
    basis = WaveletBasis(n)
    rng = np.random.default_rng(n)
    for _ in range(50):
        h = rng.standard_normal(n)
        c = basis.decompose(h)
        assert np.linalg.norm(basis.reconstruct(c) - h) <= 1e-10 * max(
            1.0, np.linalg.norm(h)
        )
        assert abs(np.linalg.norm(c) - np.linalg.norm(h)) <= 1e-10


def test_parseval_inner_products():
    basis = WaveletBasis(64)
    rng = np.random.default_rng(1)
    for _ in range(50):
        g = rng.standard_normal(64)
        h = rng.standard_normal(64)
        lhs = basis.decompose(g) @ basis.decompose(h)
        assert abs(lhs - g @ h) <= 1e-10 * np.linalg.norm(g) * np.linalg.norm(h)


def test_analyze_zero(basis8):
    assert np.all(basis8.analyze(np.zeros(8)).coeffs == 0.0)


def test_synthesize_zero(basis8):
    assert np.all(basis8.synthesize(np.zeros(8)) == 0.0)


def test_basis_vector_roundtrip(basis8):
    for lam in range(8):
        phi = basis8.basis_vector(lam)
        coeffs = basis8.analyze(phi).coeffs
        expected = np.zeros(8)
        expected[lam] = 1.0
        np.testing.assert_allclose(coeffs, expected, atol=1e-10)


def test_affine_signals_have_vanishing_details_single_level():
    n = 64
    basis = WaveletBasis(n, levels=1)
    for slope, offset in [(0.0, 1.0), (2.5, -0.3), (-1.0, 4.0)]:
        x = slope * np.arange(n) + offset
        details = basis.decompose(x)[n // 2 :]
        # only the wrap-around position may be nonzero
        assert np.max(np.abs(details[:-1])) <= 1e-12 * max(1.0, np.abs(x).max())


def test_non_power_of_two_rejected():
    with pytest.raises(ValueError):
        WaveletBasis(12)


def test_levels_validation():
    WaveletBasis(8, levels=0)
    WaveletBasis(8, levels=3)
    with pytest.raises(ValueError):
        WaveletBasis(8, levels=4)


def test_trivial_size_one():
    basis = WaveletBasis(1)
    np.testing.assert_array_equal(basis.decompose(np.array([2.5])), [2.5])


def test_wrong_length_raises(basis8):
    with pytest.raises(ValueError):
        basis8.decompose(np.zeros(7))
    with pytest.raises(ValueError):
        basis8.reconstruct(np.zeros(9))


class TestCoefficientVector:
    def test_support_thresholding(self, basis8):
        c = CoefficientVector(np.array([1.0, 0.0, 1e-16, 0.0, -2.0, 0, 0, 0]), basis8)
        assert c.support() == (0, 4)

    def test_support_zero_vector(self, basis8):
        assert CoefficientVector(np.zeros(8), basis8).support() == ()

    def test_support_relative_threshold(self, basis8):
        big = 1.0 / SUPPORT_TOL_FACTOR
        c = CoefficientVector(np.array([big, 0.5, 0, 0, 0, 0, 0, 0]), basis8)
        # 0.5 is below the relative threshold next to the huge coefficient
        assert c.support() == (0,)

    def test_length_mismatch(self, basis8):
        with pytest.raises(ValueError):
            CoefficientVector(np.zeros(4), basis8)


class TestProject:
    def test_full_index_set_is_identity(self, basis8, rng):
        c = basis8.analyze(rng.standard_normal(8))
        np.testing.assert_array_equal(project(c, range(8)).coeffs, c.coeffs)

    def test_empty_set_is_zero(self, basis8, rng):
        c = basis8.analyze(rng.standard_normal(8))
        assert np.all(project(c, []).coeffs == 0.0)

    def test_pythagoras(self, basis8, rng):
        for _ in range(20):
            c = basis8.analyze(rng.standard_normal(8))
            omega = [0, 3, 5]
            inside = project(c, omega)
            outside = project(c, [i for i in range(8) if i not in omega])
            total = np.linalg.norm(c.coeffs) ** 2
            split = np.linalg.norm(inside.coeffs) ** 2 + np.linalg.norm(
                outside.coeffs
            ) ** 2
            assert abs(total - split) <= 1e-12 * max(1.0, total)

    def test_out_of_range(self, basis8, rng):
        c = basis8.analyze(rng.standard_normal(8))
        with pytest.raises(ValueError):
            project(c, [8])
