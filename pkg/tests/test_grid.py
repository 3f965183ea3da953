"""Spectral operators, tensors and time stencils on periodic grids."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qlighthill.grid import (SymTensor, divergence, double_divergence, fd_laplacian, gradient, l2_norm,
                             make_grid, second_derivative, spectral_gradient, spectral_interpolate,
                             spectral_l2_norm, spectral_laplacian, sym_pairs, time_stencil)


@pytest.fixture
def line():
    return make_grid(1, [2 * np.pi], [64], [0.0])


@pytest.fixture
def plane():
    return make_grid(2, [2 * np.pi, 2 * np.pi], [32, 32], [0.0, 0.0])


class TestMakeGrid:
    def test_spacing_1d(self, line):
        assert line.spacing[0] == pytest.approx(2 * np.pi / 64, rel=1e-15)
        assert line.axis_coords(0)[5] == pytest.approx(5 * 2 * np.pi / 64)

    def test_valid_3d(self):
        g = make_grid(3, [10, 10, 10], [32, 32, 32], [-5, -5, -5])
        assert g.shape == (32, 32, 32)
        assert g.coords[2][0, 0, 1] == pytest.approx(-5 + 10 / 32)

    def test_odd_points_rejected(self):
        with pytest.raises(ValueError, match="points"):
            make_grid(1, [1.0], [7], [0.0])

    @pytest.mark.parametrize("points", [4, 6])
    def test_too_few_points_rejected(self, points):
        with pytest.raises(ValueError):
            make_grid(1, [1.0], [points], [0.0])

    def test_nonpositive_extent_rejected(self):
        with pytest.raises(ValueError, match="extent"):
            make_grid(1, [0.0], [16], [0.0])

    def test_with_points_keeps_box(self, line):
        fine = line.with_points(128)
        assert fine.extents == line.extents and fine.points == (128,)


class TestDerivatives:
    def test_gradient_of_sine(self, line):
        x = line.coords[0]
        assert np.max(np.abs(spectral_gradient(np.sin(x), line, 0) - np.cos(x))) < 1e-12

    def test_gradient_of_constant(self, line):
        assert np.max(np.abs(spectral_gradient(np.full(line.shape, 3.0), line, 0))) < 1e-14

    def test_gradient_complex_exponential(self, line):
        f = np.exp(3j * line.coords[0])
        assert np.max(np.abs(spectral_gradient(f, line, 0) - 3j * f)) < 1e-12

    def test_gradient_keeps_real_kind(self, line):
        assert np.isrealobj(spectral_gradient(np.sin(line.coords[0]), line, 0))

    def test_nyquist_mode_dropped_from_odd_derivative(self, line):
        nyq = np.cos(32 * line.coords[0])
        assert np.max(np.abs(spectral_gradient(nyq, line, 0))) < 1e-12

    def test_laplacian_sine(self, line):
        x = line.coords[0]
        assert np.max(np.abs(spectral_laplacian(np.sin(2 * x), line) + 4 * np.sin(2 * x))) < 1e-11

    def test_laplacian_constant(self, plane):
        assert np.max(np.abs(spectral_laplacian(np.ones(plane.shape), plane))) < 1e-14

    def test_laplacian_2d_exponential(self, plane):
        x, y = plane.coords
        f = np.exp(1j * (3 * x + 4 * y))
        assert np.max(np.abs(spectral_laplacian(f, plane) + 25 * f)) < 1e-10

    def test_gradient_twice_matches_laplacian(self, line):
        x = line.coords[0]
        f = np.exp(np.sin(x))
        twice = spectral_gradient(spectral_gradient(f, line, 0), line, 0)
        lap = spectral_laplacian(f, line)
        assert np.linalg.norm(twice - lap) / np.linalg.norm(lap) < 1e-10

    def test_divergence_of_gradient(self, plane):
        x, y = plane.coords
        f = np.sin(x) * np.cos(2 * y)
        assert np.allclose(divergence(gradient(f, plane), plane), spectral_laplacian(f, plane), atol=1e-11)

    def test_mixed_second_derivative(self, plane):
        x, y = plane.coords
        f = np.sin(x) * np.sin(y)
        assert np.allclose(second_derivative(f, plane, 0, 1), np.cos(x) * np.cos(y), atol=1e-12)

    def test_fd_laplacian_is_second_order(self):
        errs = []
        for n in (32, 64):
            g = make_grid(1, [2 * np.pi], [n], [0.0])
            x = g.coords[0]
            errs.append(np.max(np.abs(fd_laplacian(np.sin(x), g) + np.sin(x))))
        assert errs[0] / errs[1] == pytest.approx(4.0, rel=0.02)


class TestSymTensor:
    def test_stores_upper_triangle(self):
        assert len(SymTensor.zeros(3, (8, 8, 8)).components) == 6
        assert sym_pairs(2) == [(0, 0), (0, 1), (1, 1)]

    def test_full_is_symmetric(self, plane):
        x, y = plane.coords
        T = SymTensor(2, [np.sin(x), np.cos(y), x * 0 + 1.0])
        full = T.full()
        assert np.array_equal(full[0, 1], full[1, 0])

    def test_double_divergence_constant_diagonal(self, plane):
        T = SymTensor.diagonal(2, np.full(plane.shape, 2.5))
        assert np.max(np.abs(double_divergence(T, plane))) < 1e-13

    def test_double_divergence_1d(self, line):
        x = line.coords[0]
        T = SymTensor(1, [np.sin(x)])
        assert np.max(np.abs(double_divergence(T, line) + np.sin(x))) < 1e-12

    def test_double_divergence_off_diagonal_counts_twice(self, plane):
        x, y = plane.coords
        z = np.zeros(plane.shape)
        T = SymTensor(2, [z, np.sin(x) * np.sin(y), z])
        assert np.max(np.abs(double_divergence(T, plane) - 2 * np.cos(x) * np.cos(y))) < 1e-12

    def test_double_divergence_of_outer_product(self, plane):
        x, y = plane.coords
        f = np.exp(np.cos(x) + 0.5 * np.sin(y))
        a = (0.7, -1.3)
        T = SymTensor(2, [a[0] * a[0] * f, a[0] * a[1] * f, a[1] * a[1] * f])
        directional = sum(a[i] * a[j] * second_derivative(f, plane, i, j) for i in range(2) for j in range(2))
        assert np.linalg.norm(double_divergence(T, plane) - directional) < 1e-10 * np.linalg.norm(directional)


class TestNormsAndInterpolation:
    def test_parseval(self, plane):
        x, y = plane.coords
        f = np.exp(np.sin(x)) * np.cos(3 * y)
        assert spectral_l2_norm(f, plane) == pytest.approx(l2_norm(f, plane), rel=1e-12)

    def test_interpolation_exact_for_band_limited(self, plane):
        pts = np.array([[0.3, 1.7], [4.4, 0.05], [6.0, 6.2]])
        f = lambda x, y: np.sin(2 * x) * np.cos(y) + 0.5 * np.cos(3 * y)
        got = spectral_interpolate(f(*plane.coords), plane, pts)
        assert np.allclose(got, f(pts[:, 0], pts[:, 1]), atol=1e-12)


class TestTimeStencil:
    def test_quadratic_second_derivative_exact(self):
        t = np.linspace(0.0, 0.4, 5)
        got = time_stencil([np.array(v**2) for v in t], t, 2)
        assert got == pytest.approx(2.0, rel=1e-10)

    def test_constant_first_derivative(self):
        t = np.linspace(0.0, 0.4, 5)
        assert abs(time_stencil([np.array(1.0)] * 5, t, 1)) < 1e-14

    def test_sine_second_derivative(self):
        w, dt, t0 = 3.0, 0.01 / 3.0, 0.4
        t = t0 + dt * np.arange(-2, 3)
        got = time_stencil([np.array(np.sin(w * s)) for s in t], t, 2)
        exact = -w**2 * np.sin(w * t0)
        assert abs(got - exact) / abs(exact) < 1e-8

    def test_quartic_first_derivative_exact(self):
        t = 1.0 + 0.1 * np.arange(-2, 3)
        got = time_stencil([np.array(s**4) for s in t], t, 1)
        assert got == pytest.approx(4.0, rel=1e-10)

    def test_short_stack_rejected(self):
        with pytest.raises(ValueError, match=">= 5"):
            time_stencil([np.zeros(3)] * 4, [0, 1, 2, 3], 2)

    def test_nonuniform_spacing_rejected(self):
        with pytest.raises(ValueError, match="non-uniform"):
            time_stencil([np.zeros(3)] * 5, [0, 1, 2, 3.5, 4], 2)


class TestProperties:
    @settings(max_examples=30, deadline=None)
    @given(alpha=st.floats(-5, 5), beta=st.floats(-5, 5), seed=st.integers(0, 2**16))
    def test_gradient_linearity(self, alpha, beta, seed):
        g = make_grid(1, [2 * np.pi], [32], [0.0])
        rng = np.random.default_rng(seed)
        f, h = rng.standard_normal((2, 32))
        lhs = spectral_gradient(alpha * f + beta * h, g, 0)
        rhs = alpha * spectral_gradient(f, g, 0) + beta * spectral_gradient(h, g, 0)
        assert np.allclose(lhs, rhs, atol=1e-11 * (1 + abs(alpha) + abs(beta)))

    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 2**16))
    def test_parseval_random(self, seed):
        g = make_grid(2, [3.0, 5.0], [16, 8], [0.0, -1.0])
        f = np.random.default_rng(seed).standard_normal(g.shape)
        assert spectral_l2_norm(f, g) == pytest.approx(l2_norm(f, g), rel=1e-12)

    @settings(max_examples=20, deadline=None)
    @given(seed=st.integers(0, 2**16))
    def test_outputs_finite(self, seed):
        g = make_grid(2, [2.0, 2.0], [16, 16], [0.0, 0.0])
        rng = np.random.default_rng(seed)
        T = SymTensor(2, list(rng.standard_normal((3, 16, 16))))
        assert np.all(np.isfinite(double_divergence(T, g)))
