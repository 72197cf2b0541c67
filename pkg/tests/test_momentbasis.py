import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from occmom.momentbasis import (
    MomentVector,
    dirac_moments,
    enumerate_basis,
    instantiate,
    localizing_matrix_structure,
    moment_matrix_structure,
    sample_moments,
    uniform_box_moments,
    uniform_segment_moments,
)
from occmom.poly import VarSpace, parse

XS = VarSpace(False, 2, 0)


class TestBasis:
    def test_graded_order(self):
        b = enumerate_basis(2, 2)
        assert list(b.exponents) == [(0, 0), (1, 0), (0, 1), (2, 0), (1, 1), (0, 2)]

    def test_degree_zero(self):
        assert list(enumerate_basis(4, 0).exponents) == [(0, 0, 0, 0)]

    @pytest.mark.parametrize("n,r,size", [(2, 2, 6), (3, 9, 220), (1, 5, 6), (4, 4, 70)])
    def test_sizes(self, n, r, size):
        assert len(enumerate_basis(n, r)) == size

    def test_index_lookup(self):
        b = enumerate_basis(2, 3)
        for i, a in enumerate(b.exponents):
            assert b.index(a) == i
        with pytest.raises(KeyError):
            b.index((4, 0))

    def test_degrees_nondecreasing(self):
        degs = [sum(a) for a in enumerate_basis(3, 5).exponents]
        assert degs == sorted(degs)


class TestMeasureMoments:
    def test_dirac_initial_state(self):
        m = dirac_moments([-0.5, -0.8], enumerate_basis(2, 2))
        np.testing.assert_allclose(m.values, [1, -0.5, -0.8, 0.25, 0.4, 0.64], atol=1e-15)

    def test_dirac_origin(self):
        m = dirac_moments([0.0, 0.0], enumerate_basis(2, 3))
        np.testing.assert_array_equal(m.values, np.eye(1, len(m.values))[0])

    def test_dirac_cross_moment(self):
        assert dirac_moments([1.0, 2.0], enumerate_basis(2, 2))[(1, 1)] == 2.0

    def test_box_second_moment(self):
        m = uniform_box_moments([-1, -1], [1, 1], enumerate_basis(2, 4))
        assert m[(2, 0)] == pytest.approx(1 / 3)
        assert m[(1, 0)] == 0.0
        assert m[(2, 2)] == pytest.approx(1 / 9)

    @pytest.mark.parametrize("k", range(7))
    def test_unit_interval_powers(self, k):
        m = uniform_box_moments([0.0], [1.0], enumerate_basis(1, 6))
        assert m[(k,)] == pytest.approx(1 / (k + 1))

    def test_segment_moments(self):
        m = uniform_segment_moments([-1, -0.8], [-0.5, -0.8], enumerate_basis(2, 2))
        assert m[(0, 1)] == pytest.approx(-0.8)
        assert m[(1, 0)] == pytest.approx(-0.75)
        assert m.mass == pytest.approx(1.0)

    def test_segment_along_axis(self):
        m = uniform_segment_moments([0, 0], [1, 0], enumerate_basis(2, 2))
        assert m[(2, 0)] == pytest.approx(1 / 3)

    def test_invalid_box(self):
        with pytest.raises(ValueError):
            uniform_box_moments([1.0], [0.0], enumerate_basis(1, 2))

    def test_degenerate_segment(self):
        with pytest.raises(ValueError):
            uniform_segment_moments([1, 1], [1, 1], enumerate_basis(2, 2))

    def test_integrate_polynomial(self):
        m = uniform_box_moments([-1, -1], [1, 1], enumerate_basis(2, 2))
        assert m.integrate(parse("1 - x1^2 + 3*x2", XS)) == pytest.approx(2 / 3)


class TestMatrices:
    def test_moment_matrix_entry_indices(self):
        full = enumerate_basis(2, 2)
        s = moment_matrix_structure(enumerate_basis(2, 1), full)
        assert s.entry(1, 2) == [(full.index((1, 1)), 1.0)]
        assert s.entry(0, 0) == [(0, 1.0)]

    def test_dirac_moment_matrix_rank_one(self):
        full = enumerate_basis(2, 2)
        mat = instantiate(moment_matrix_structure(enumerate_basis(2, 1), full), dirac_moments([1, 2], full))
        np.testing.assert_allclose(mat, [[1, 1, 2], [1, 1, 2], [2, 2, 4]])
        assert np.linalg.matrix_rank(mat) == 1

    def test_localizer_at_origin(self):
        full = enumerate_basis(2, 2)
        s = localizing_matrix_structure(parse("x2 + 1", XS), full)
        np.testing.assert_allclose(instantiate(s, dirac_moments([0, 0], full)), [[1.0]])

    def test_localizer_uniform(self):
        full = enumerate_basis(2, 2)
        s = localizing_matrix_structure(parse("1 - x1^2", XS), full)
        mat = instantiate(s, uniform_box_moments([-1, -1], [1, 1], full))
        np.testing.assert_allclose(mat, [[2 / 3]])

    def test_constant_localizer_is_moment_matrix(self):
        full = enumerate_basis(2, 4)
        loc = localizing_matrix_structure(parse("1", XS), full)
        mom = moment_matrix_structure(enumerate_basis(2, 2), full)
        y = np.random.default_rng(0).normal(size=len(full))
        np.testing.assert_allclose(instantiate(loc, y), instantiate(mom, y))

    def test_localizer_too_large(self):
        with pytest.raises(ValueError):
            localizing_matrix_structure(parse("x1^3", XS), enumerate_basis(2, 2))

    def test_zero_moments(self):
        full = enumerate_basis(2, 4)
        s = moment_matrix_structure(enumerate_basis(2, 2), full)
        assert not instantiate(s, np.zeros(len(full))).any()

    @settings(max_examples=30, deadline=None)
    @given(st.lists(st.floats(-1.4, 1.4), min_size=2, max_size=2))
    def test_dirac_localizer_psd(self, x0):
        full = enumerate_basis(2, 4)
        g = parse("4 - x1^2 - x2^2", XS)
        mat = instantiate(localizing_matrix_structure(g, full), dirac_moments(x0, full))
        assert np.linalg.eigvalsh(mat)[0] >= -1e-10

    @pytest.mark.parametrize("n_samples", [200, 5000])
    def test_sampled_moment_matrix_psd(self, n_samples, rng):
        full = enumerate_basis(2, 6)
        pts = rng.normal(size=(n_samples, 2))
        y = sample_moments(pts, full)
        mat = instantiate(moment_matrix_structure(enumerate_basis(2, 3), full), y)
        assert np.linalg.eigvalsh(mat)[0] >= -1e-9 * np.abs(mat).max()

    def test_moment_vector_truncate(self):
        m = dirac_moments([2.0, 3.0], enumerate_basis(2, 4))
        t = m.truncate(2)
        assert isinstance(t, MomentVector)
        np.testing.assert_allclose(t.values, dirac_moments([2.0, 3.0], enumerate_basis(2, 2)).values)
