"""Retarded/advanced integral solution of the 3D density wave equation."""

import numpy as np
import pytest
from scipy.integrate import quad

from qlighthill.grid import SymTensor, make_grid
from qlighthill.integral import ConeError, SourceHistory, SupportError, integral_series, integral_solution
from qlighthill.lighthill import LighthillConfig
from qlighthill.oracles import gaussian_laplacian

C0, SIGMA, TC, W = 1.0, 0.6, 3.0, 0.8


def pulse(t, k=0):
    """Gaussian pulse and its first two derivatives."""
    z = (t - TC) / W
    e = np.exp(-z**2)
    return {0: e, 1: -2 * z / W * e, 2: (4 * z**2 - 2) / W**2 * e}[k]


@pytest.fixture(scope="module")
def src_grid():
    return make_grid(3, [8.0] * 3, [32] * 3, [-4.0] * 3)


def diagonal_history(grid, fn, times):
    return SourceHistory.from_function(grid, times, lambda t, c: SymTensor.diagonal(3, fn(t, c)), rtol=1e-8)


@pytest.fixture(scope="module")
def gaussian_history(src_grid):
    times = 0.1 * np.arange(-80, 141)  # symmetric about TC
    return diagonal_history(src_grid, lambda t, c: pulse(t) * np.exp(-sum(x**2 for x in c) / SIGMA**2), times)


def far_field_exact(r, t):
    """u = psi_tt / c0^2 outside the support, by shell integration of the radial source."""
    def shell(rho):
        g = np.exp(-rho**2 / SIGMA**2)
        inner = -C0 * (pulse(t - (r + rho) / C0, 1) - pulse(t - abs(r - rho) / C0, 1))
        return rho * g * inner
    val, _ = quad(shell, 0.0, 8 * SIGMA, epsabs=1e-13, limit=200)
    return 2 * np.pi / r * val / (4 * np.pi * C0**4)


class TestSourceHistory:
    def test_requires_3d(self):
        g = make_grid(2, [4.0, 4.0], [8, 8], [-2.0, -2.0])
        with pytest.raises(ValueError, match="3D"):
            SourceHistory.from_tensors(g, range(5), [SymTensor.zeros(2, g.shape)] * 5)

    def test_support_touching_edge(self, src_grid):
        with pytest.raises(SupportError, match="compactly"):
            diagonal_history(src_grid, lambda t, c: np.ones(src_grid.shape), np.arange(5.0))

    def test_short_history(self, src_grid):
        with pytest.raises(ValueError, match="5 time slices"):
            diagonal_history(src_grid, lambda t, c: np.zeros(src_grid.shape), np.arange(4.0))

    def test_support_trimmed(self, gaussian_history, src_grid):
        assert 0 < len(gaussian_history.points) < np.prod(src_grid.shape)


class TestIntegralSolution:
    def test_zero_source(self, src_grid):
        hist = diagonal_history(src_grid, lambda t, c: np.zeros(src_grid.shape), np.arange(-10.0, 20.0, 0.5))
        assert integral_solution(hist, [6.0, 0.0, 0.0], 10.0) == 0.0

    def test_far_field_matches_shell_quadrature(self, gaussian_history):
        r = 5.0
        times = np.arange(4.0, 10.0, 0.25)
        got = integral_series(gaussian_history, [[r, 0, 0], [0, -r, 0], [0, 3.0, 4.0]], times)
        exact = np.array([far_field_exact(r, t) for t in times])
        for row in got:
            assert np.linalg.norm(row - exact) < 0.01 * np.linalg.norm(exact)

    def test_non_radiating_source_cancels(self, src_grid):
        # u = f(t) lap H is the exact causal solution; it vanishes outside the support
        r2 = sum(x**2 for x in src_grid.coords)
        H = np.exp(-r2 / SIGMA**2)
        lapH = gaussian_laplacian(r2, SIGMA, 3)
        times = 0.1 * np.arange(-80, 141)  # symmetric about TC
        full = diagonal_history(src_grid, lambda t, c: pulse(t, 2) * H - C0**2 * pulse(t) * lapH, times)
        part = diagonal_history(src_grid, lambda t, c: pulse(t, 2) * H, times)
        obs = np.arange(4.0, 10.0, 0.25)
        for kernel, t_obs in (("retarded", obs), ("advanced", 2 * TC - obs)):
            cfg = LighthillConfig(c0=C0, kernel=kernel)
            u = integral_series(full, [[5.0, 0, 0]], t_obs, cfg)
            scale = integral_series(part, [[5.0, 0, 0]], t_obs, cfg)
            assert np.linalg.norm(u) < 0.005 * np.linalg.norm(scale)

    def test_time_mirror_symmetry(self, gaussian_history):
        taus = np.arange(3.0, 6.0, 0.5)
        x = [0.0, 5.0, 0.0]
        ret = integral_series(gaussian_history, [x], TC + taus, LighthillConfig(kernel="retarded"))
        adv = integral_series(gaussian_history, [x], TC - taus, LighthillConfig(kernel="advanced"))
        assert np.allclose(ret, adv, rtol=1e-6, atol=1e-9 * np.abs(ret).max())

    def test_mixed_kernel_is_convex_combination(self, gaussian_history):
        x, t = [5.0, 0.0, 0.0], 4.0
        r = integral_solution(gaussian_history, x, t, LighthillConfig(kernel="retarded"))
        a = integral_solution(gaussian_history, x, t, LighthillConfig(kernel="advanced"))
        m = integral_solution(gaussian_history, x, t, LighthillConfig(kernel="mixed", mixing=0.3))
        assert m == pytest.approx(0.3 * r + 0.7 * a, rel=1e-12)

    def test_cone_not_covered(self, gaussian_history):
        with pytest.raises(ConeError, match="retarded cone"):
            integral_solution(gaussian_history, [5.0, 0, 0], -5.0)
        with pytest.raises(ConeError, match="advanced cone"):
            integral_solution(gaussian_history, [5.0, 0, 0], 10.0, LighthillConfig(kernel="advanced"))

    def test_point_inside_support(self, gaussian_history):
        with pytest.raises(SupportError, match="near-field"):
            integral_solution(gaussian_history, [0.1, 0.0, 0.0], 6.0)

    def test_worker_count_does_not_change_result(self, gaussian_history):
        pts = [[5.0, 0, 0], [0, 5.0, 0], [0, 0, 5.0]]
        a = integral_series(gaussian_history, pts, [6.0, 7.0], workers=1)
        b = integral_series(gaussian_history, pts, [6.0, 7.0], workers=3)
        assert np.array_equal(a, b)
