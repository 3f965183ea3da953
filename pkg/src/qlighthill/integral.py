"""Integral (Green-function) solution of the 3D density wave equation.

For ``d_t^2 u - c0^2 lap u = d_i d_j T_ij`` in free space::

    u(x, t) = 1/(4 pi c0^2) int d_i d_j [T_ij(y, t -+ r/c0) / r] dy,   r = |x - y|

The reception-side derivatives are taken analytically. With ``n = (x-y)/r``
and ``tau = t - s r/c0`` (s = +1 retarded, -1 advanced)::

    d_i d_j [f(tau)/r] = n_i n_j f''/(c0^2 r) + (3 n_i n_j - delta_ij)(s f'/(c0 r^2) + f/r^3)

valid for r > 0. The spatial quadrature is the trapezoidal rule on the
source grid (the plain cell-volume sum for a compactly supported source);
``T``, ``T'`` and ``T''`` are interpolated linearly in time.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Sequence

import numpy as np

from .grid import GridSpec, SymTensor, check_uniform, sym_pairs
from .lighthill import LighthillConfig

_PAIRS = sym_pairs(3)
_MULT = np.array([1.0 if i == j else 2.0 for i, j in _PAIRS])
_TRACE = np.array([1.0 if i == j else 0.0 for i, j in _PAIRS])


class ConeError(ValueError):
    """The source history does not cover the emission times a reception point needs."""


class SupportError(ValueError):
    """Reception point inside the source support, or source touching the box edge."""


@dataclass
class SourceHistory:
    """Source tensor sampled on a uniform time grid, kept only on its spatial support.

    ``values`` has shape ``(n_times, n_points, 6)`` with components ordered
    as ``sym_pairs(3)``; ``weight`` is the quadrature weight of each point.
    """

    points: np.ndarray
    weight: float
    spacing: float
    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        if len(self.times) < 5:
            raise ValueError("source history needs at least 5 time slices")
        self.dt = check_uniform(self.times)
        if self.values.shape != (len(self.times), len(self.points), 6):
            raise ValueError("values must have shape (n_times, n_points, 6)")

    @classmethod
    def from_tensors(cls, grid: GridSpec, times: Sequence[float], tensors: Sequence[SymTensor],
                     rtol: float = 1e-10) -> "SourceHistory":
        if grid.dim != 3:
            raise ValueError("integral solution is 3D only")
        if len(tensors) != len(times):
            raise ValueError("one tensor per time slice required")
        stack = np.stack([np.stack(T.components, axis=-1) for T in tensors])  # (nt, *shape, 6)
        peak = np.abs(stack).max()
        if peak == 0:
            support = np.zeros(grid.shape, dtype=bool)
            support[(0,) * 3] = True  # keep one point so shapes stay valid
        else:
            support = (np.abs(stack) > rtol * peak).any(axis=(0, -1))
            edge = np.zeros(grid.shape, dtype=bool)
            for a in range(3):
                idx = [slice(None)] * 3
                idx[a] = [0, -1]
                edge[tuple(idx)] = True
            if np.any(support & edge):
                raise SupportError("source is not compactly supported inside the box")
        pts = np.stack([c[support] for c in np.broadcast_arrays(*grid.coords)], axis=1)
        values = stack[:, support, :]
        return cls(pts, grid.cell_volume, min(grid.spacing), np.asarray(times, float), values)

    @classmethod
    def from_function(cls, grid: GridSpec, times: Sequence[float],
                      fn: Callable[[float, tuple], SymTensor], rtol: float = 1e-10) -> "SourceHistory":
        """``fn(t, coords)`` returns the source tensor on the grid at time ``t``."""
        return cls.from_tensors(grid, times, [fn(t, grid.coords) for t in times], rtol)

    @cached_property
    def derivatives(self) -> tuple[np.ndarray, np.ndarray]:
        """Fourth-order central first and second time derivatives (edges left at zero)."""
        v = self.values
        d1 = np.zeros_like(v)
        d2 = np.zeros_like(v)
        d1[2:-2] = (v[:-4] - 8 * v[1:-3] + 8 * v[3:-1] - v[4:]) / (12 * self.dt)
        d2[2:-2] = (-v[:-4] + 16 * v[1:-3] - 30 * v[2:-2] + 16 * v[3:-1] - v[4:]) / (12 * self.dt**2)
        return d1, d2

    @property
    def valid_range(self) -> tuple[float, float]:
        return float(self.times[2]), float(self.times[-3])


def _kernel_sum(history: SourceHistory, x: np.ndarray, t: float, c0: float, sign: int) -> float:
    d = x[None, :] - history.points
    r = np.sqrt((d**2).sum(axis=1))
    n = d / r[:, None]
    tau = t - sign * r / c0
    lo, hi = history.valid_range
    if tau.min() < lo - 1e-12 or tau.max() > hi + 1e-12:
        kind = "retarded" if sign > 0 else "advanced"
        raise ConeError(f"{kind} cone of t={t:g} needs source times [{tau.min():g}, {tau.max():g}], "
                        f"history covers [{lo:g}, {hi:g}]")
    s = (tau - history.times[0]) / history.dt
    i = np.clip(np.floor(s).astype(int), 0, len(history.times) - 2)
    w = (s - i)[:, None]
    cols = np.arange(len(r))
    d1, d2 = history.derivatives

    def at(arr):
        return (1 - w) * arr[i, cols] + w * arr[i + 1, cols]

    nn = np.stack([n[:, a] * n[:, b] for a, b in _PAIRS], axis=1) * _MULT  # contraction weights
    proj = 3 * nn - _TRACE
    T, T1, T2 = at(history.values), at(d1), at(d2)
    integrand = ((T2 * nn).sum(1) / (c0**2 * r)
                 + (sign * (T1 * proj).sum(1) / (c0 * r**2) + (T * proj).sum(1) / r**3))
    return float(integrand.sum()) * history.weight / (4 * np.pi * c0**2)


def integral_solution(history: SourceHistory, x, t: float, config: LighthillConfig = LighthillConfig()) -> float:
    """Density perturbation at reception point ``x`` and time ``t``."""
    x = np.asarray(x, dtype=float)
    if x.shape != (3,):
        raise ValueError("reception point must be a 3-vector")
    dist = np.sqrt(((history.points - x) ** 2).sum(axis=1)).min()
    if dist < history.spacing:
        raise SupportError("reception point lies inside the source support (near-field mode not available)")
    lam = config.retarded_weight
    out = 0.0
    if lam > 0:
        out += lam * _kernel_sum(history, x, t, config.c0, +1)
    if lam < 1:
        out += (1 - lam) * _kernel_sum(history, x, t, config.c0, -1)
    return out


def integral_series(history: SourceHistory, points, times, config: LighthillConfig = LighthillConfig(),
                    workers: int = 1) -> np.ndarray:
    """``u`` at every (point, time) pair; returns shape ``(n_points, n_times)``.

    Work is split over reception points; results are assembled in input
    order so the output does not depend on ``workers``.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    times = np.asarray(times, dtype=float)

    def row(x):
        return [integral_solution(history, x, t, config) for t in times]

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            rows = list(pool.map(row, points))
    else:
        rows = [row(x) for x in points]
    return np.array(rows)
