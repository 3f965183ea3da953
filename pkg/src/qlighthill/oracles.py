"""Independent reference solvers used to validate the integral and linear modules.

These share only the grid and FFT plumbing with the code they check.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .grid import GridSpec, SymTensor, _fftn, _ifftn, sym_pairs


def leapfrog_wave(grid: GridSpec, source: Callable[[float], np.ndarray], c0: float, t0: float,
                  dt: float, record_times: Sequence[float], record_index: Sequence[tuple]) -> np.ndarray:
    """Solve ``u_tt - c0^2 lap u = s(t)`` from rest at ``t0`` with a centred leapfrog.

    The Laplacian is spectral on the periodic grid. Returns ``u`` at the
    grid nodes ``record_index`` for each of ``record_times`` (linear in
    time between steps), shape ``(n_nodes, n_times)``.
    """
    record_times = np.asarray(record_times, dtype=float)
    if np.any(record_times < t0):
        raise ValueError("record times precede the start time")
    idx = tuple(np.array(record_index).T)
    lap = -grid.k_squared
    u_prev = np.zeros(grid.shape)
    u = np.zeros(grid.shape)
    t = t0
    samples = [u[idx].copy()]
    sample_t = [t]
    t_stop = record_times.max() + dt
    while t < t_stop:
        rhs = c0**2 * np.real(_ifftn(lap * _fftn(u))) + source(t)
        u_next = 2 * u - u_prev + dt**2 * rhs
        u_prev, u = u, u_next
        t += dt
        samples.append(u[idx].copy())
        sample_t.append(t)
    samples = np.array(samples)  # (n_steps, n_nodes)
    sample_t = np.array(sample_t)
    return np.stack([np.interp(record_times, sample_t, samples[:, k]) for k in range(samples.shape[1])])


def steady_solution(grid: GridSpec, T: SymTensor, c0: float) -> np.ndarray:
    """Periodic solution of ``-c0^2 lap u = d_i d_j T_ij`` with zero mean."""
    k = grid.wavenumbers
    rhs = np.zeros(grid.shape, dtype=complex)
    for (a, b) in sym_pairs(grid.dim):
        mult = 1.0 if a == b else 2.0
        rhs += mult * (-(k[a] * k[b])) * _fftn(T[a, b])
    k2 = grid.k_squared
    with np.errstate(divide="ignore", invalid="ignore"):
        uh = np.where(k2 > 0, rhs / (c0**2 * k2), 0.0)
    return np.real(_ifftn(uh))


def gaussian_laplacian(r2: np.ndarray, sigma: float, dim: int) -> np.ndarray:
    """``lap exp(-r^2/sigma^2)`` in closed form."""
    return (4 * r2 / sigma**4 - 2 * dim / sigma**2) * np.exp(-r2 / sigma**2)


def free_gaussian(x: np.ndarray, t: float, sigma: float, x0: float, k0: float,
                  hbar: float = 1.0, mass: float = 1.0) -> np.ndarray:
    """Free-space spreading Gaussian packet in 1D (unit norm at t = 0 on the line)."""
    a = 1 + 1j * hbar * t / (mass * sigma**2)
    v = hbar * k0 / mass
    pref = (np.pi * sigma**2) ** -0.25 / np.sqrt(a)
    phase = np.exp(1j * (k0 * (x - x0) - 0.5 * v * k0 * t))
    return pref * np.exp(-((x - x0 - v * t) ** 2) / (2 * sigma**2 * a)) * phase
