"""Periodic Cartesian grids and Fourier-space differential operators.

Fields are plain numpy arrays:

* scalar fields have shape ``grid.shape``;
* vector fields have shape ``(dim, *grid.shape)``;
* symmetric rank-2 fields are :class:`SymTensor` objects holding the
  ``dim*(dim+1)/2`` upper-triangle components.

Every operator here is a pure function of its inputs.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np
import scipy.fft as sfft

_WORKERS = 1


def set_threads(n: int) -> None:
    """Set the worker count used by every FFT in the package."""
    global _WORKERS
    if n < 1:
        raise ValueError("thread count must be >= 1")
    _WORKERS = int(n)


def _fftn(a, axes=None):
    return sfft.fftn(a, axes=axes, workers=_WORKERS)


def _ifftn(a, axes=None):
    return sfft.ifftn(a, axes=axes, workers=_WORKERS)


def _as_list(value, dim: int, name: str) -> list:
    if np.isscalar(value):
        return [value] * dim
    value = list(value)
    if len(value) != dim:
        raise ValueError(f"{name} needs {dim} entries, got {len(value)}")
    return value


@dataclass(frozen=True)
class GridSpec:
    """Uniform periodic grid in 1-3 dimensions."""

    dim: int
    extents: tuple[float, ...]
    points: tuple[int, ...]
    origin: tuple[float, ...]

    def __post_init__(self):
        problems = grid_problems(self.dim, self.extents, self.points, self.origin)
        if problems:
            raise ValueError("; ".join(problems))

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(self.points)

    @property
    def spacing(self) -> tuple[float, ...]:
        return tuple(L / N for L, N in zip(self.extents, self.points))

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    def axis_coords(self, axis: int) -> np.ndarray:
        """1D coordinates ``origin + k*h`` along one axis."""
        h = self.spacing[axis]
        return self.origin[axis] + h * np.arange(self.points[axis])

    @cached_property
    def coords(self) -> tuple[np.ndarray, ...]:
        """Broadcastable coordinate arrays, one per axis (``ij`` indexing)."""
        return tuple(
            np.meshgrid(*[self.axis_coords(a) for a in range(self.dim)], indexing="ij")
        )

    @cached_property
    def wavenumbers(self) -> tuple[np.ndarray, ...]:
        """Angular wavenumbers per axis, shaped to broadcast over the grid."""
        out = []
        for a in range(self.dim):
            k = 2 * np.pi * sfft.fftfreq(self.points[a], d=self.spacing[a])
            shape = [1] * self.dim
            shape[a] = self.points[a]
            out.append(k.reshape(shape))
        return tuple(out)

    @cached_property
    def odd_wavenumbers(self) -> tuple[np.ndarray, ...]:
        """Wavenumbers with the Nyquist entry zeroed (for odd derivatives)."""
        out = []
        for a, k in enumerate(self.wavenumbers):
            k = k.copy()
            idx = [0] * self.dim
            idx[a] = self.points[a] // 2
            k[tuple(idx)] = 0.0
            out.append(k)
        return tuple(out)

    @cached_property
    def k_squared(self) -> np.ndarray:
        return sum(k**2 for k in self.wavenumbers)

    @property
    def k_max(self) -> float:
        return float(max(np.pi / h for h in self.spacing))

    def with_points(self, points: Sequence[int] | int) -> "GridSpec":
        """Same box, different resolution."""
        return make_grid(self.dim, self.extents, points, self.origin)


def grid_problems(dim, extents, points, origin) -> list[str]:
    """List every violated grid invariant (empty when valid)."""
    problems = []
    if dim not in (1, 2, 3):
        return [f"dim must be 1, 2 or 3, got {dim}"]
    for name, seq in (("extents", extents), ("points", points), ("origin", origin)):
        if len(seq) != dim:
            problems.append(f"{name} needs {dim} entries, got {len(seq)}")
    if problems:
        return problems
    for a, n in enumerate(points):
        if int(n) != n or n < 8 or n % 2:
            problems.append(f"points[{a}]={n} must be an even integer >= 8")
        elif n & (n - 1):
            problems.append(f"points[{a}]={n} must be a power of two")
    for a, L in enumerate(extents):
        if not (np.isfinite(L) and L > 0):
            problems.append(f"extents[{a}]={L} must be positive")
    return problems


def make_grid(dim: int, extents, points, origin=0.0) -> GridSpec:
    """Build a validated :class:`GridSpec`; scalars broadcast to every axis."""
    extents = tuple(float(v) for v in _as_list(extents, dim, "extents"))
    points = tuple(int(v) if float(v) == int(v) else v for v in _as_list(points, dim, "points"))
    origin = tuple(float(v) for v in _as_list(origin, dim, "origin"))
    return GridSpec(dim, extents, points, origin)


# --------------------------------------------------------------------------
# symmetric tensors


def sym_pairs(dim: int) -> list[tuple[int, int]]:
    """Upper-triangle index pairs in storage order."""
    return [(i, j) for i in range(dim) for j in range(i, dim)]


@dataclass
class SymTensor:
    """Symmetric rank-2 field stored as its upper triangle."""

    dim: int
    components: np.ndarray  # (dim*(dim+1)/2, *shape)
    _index: dict = field(init=False, repr=False)

    def __post_init__(self):
        pairs = sym_pairs(self.dim)
        self.components = np.asarray(self.components, dtype=float)
        if self.components.shape[0] != len(pairs):
            raise ValueError(
                f"{self.dim}D symmetric tensor needs {len(pairs)} components, "
                f"got {self.components.shape[0]}"
            )
        self._index = {}
        for c, (i, j) in enumerate(pairs):
            self._index[i, j] = c
            self._index[j, i] = c

    def __getitem__(self, ij: tuple[int, int]) -> np.ndarray:
        return self.components[self._index[ij]]

    @classmethod
    def zeros(cls, dim: int, shape) -> "SymTensor":
        return cls(dim, np.zeros((len(sym_pairs(dim)), *shape)))

    @classmethod
    def from_function(cls, dim: int, fn) -> "SymTensor":
        """Build from ``fn(i, j)`` evaluated on the upper triangle."""
        return cls(dim, np.stack([fn(i, j) for i, j in sym_pairs(dim)]))

    @classmethod
    def diagonal(cls, dim: int, values: np.ndarray) -> "SymTensor":
        """``values * delta_ij``."""
        zero = np.zeros_like(values, dtype=float)
        return cls.from_function(dim, lambda i, j: values if i == j else zero)

    def full(self) -> np.ndarray:
        """Dense ``(dim, dim, *shape)`` array."""
        return np.stack(
            [np.stack([self[i, j] for j in range(self.dim)]) for i in range(self.dim)]
        )

    def __add__(self, other: "SymTensor") -> "SymTensor":
        return SymTensor(self.dim, self.components + other.components)

    def __sub__(self, other: "SymTensor") -> "SymTensor":
        return SymTensor(self.dim, self.components - other.components)

    def __mul__(self, scalar) -> "SymTensor":
        return SymTensor(self.dim, self.components * scalar)

    __rmul__ = __mul__

    def __neg__(self) -> "SymTensor":
        return SymTensor(self.dim, -self.components)


# --------------------------------------------------------------------------
# spectral operators


def _real_if(f: np.ndarray, out: np.ndarray) -> np.ndarray:
    return out.real.copy() if not np.iscomplexobj(f) else out


def spectral_gradient(f: np.ndarray, grid: GridSpec, axis: int) -> np.ndarray:
    """First derivative along ``axis``; the Nyquist mode is dropped."""
    if not 0 <= axis < grid.dim:
        raise ValueError(f"axis {axis} out of range for {grid.dim}D grid")
    k = grid.odd_wavenumbers[axis]
    fh = sfft.fft(f, axis=axis, workers=_WORKERS)
    fh *= 1j * k
    return _real_if(f, sfft.ifft(fh, axis=axis, workers=_WORKERS))


def gradient(f: np.ndarray, grid: GridSpec) -> np.ndarray:
    """Stacked gradient, shape ``(dim, *shape)``."""
    fh = _fftn(f)
    out = np.stack([_ifftn(1j * k * fh) for k in grid.odd_wavenumbers])
    return _real_if(f, out)


def second_derivative(f: np.ndarray, grid: GridSpec, a: int, b: int) -> np.ndarray:
    """``d^2 f / dx_a dx_b``; the same-axis case keeps the Nyquist mode."""
    fh = _fftn(f)
    return _real_if(f, _ifftn(_second_multiplier(grid, a, b) * fh))


def _second_multiplier(grid: GridSpec, a: int, b: int) -> np.ndarray:
    if a == b:
        return -(grid.wavenumbers[a] ** 2)
    return -grid.odd_wavenumbers[a] * grid.odd_wavenumbers[b]


def hessian(f: np.ndarray, grid: GridSpec) -> SymTensor:
    """All second derivatives of a real scalar field."""
    fh = _fftn(f)
    return SymTensor.from_function(
        grid.dim, lambda i, j: _ifftn(_second_multiplier(grid, i, j) * fh).real
    )


def spectral_laplacian(f: np.ndarray, grid: GridSpec) -> np.ndarray:
    """Laplacian via the ``-|k|^2`` multiplier."""
    return _real_if(f, _ifftn(-grid.k_squared * _fftn(f)))


def divergence(v: np.ndarray, grid: GridSpec) -> np.ndarray:
    acc = np.zeros(grid.shape, dtype=complex)
    for a in range(grid.dim):
        acc += 1j * grid.odd_wavenumbers[a] * _fftn(v[a])
    return _real_if(v, _ifftn(acc))


def double_divergence(T: SymTensor, grid: GridSpec) -> np.ndarray:
    """``d_i d_j T_ij`` summed over both indices (off-diagonals count twice)."""
    acc = np.zeros(grid.shape, dtype=complex)
    for c, (i, j) in enumerate(sym_pairs(grid.dim)):
        weight = 1.0 if i == j else 2.0
        acc += weight * _second_multiplier(grid, i, j) * _fftn(T.components[c])
    return _ifftn(acc).real


def fd_laplacian(f: np.ndarray, grid: GridSpec) -> np.ndarray:
    """Second-order periodic finite-difference Laplacian (operator-mismatch probes)."""
    out = np.zeros_like(f)
    for a, h in enumerate(grid.spacing):
        out = out + (np.roll(f, -1, axis=a) - 2 * f + np.roll(f, 1, axis=a)) / h**2
    return out


def l2_norm(f: np.ndarray, grid: GridSpec, mask: np.ndarray | None = None) -> float:
    """Discrete L2 norm ``sqrt(sum |f|^2 dV)``; vector/tensor components are summed."""
    a = np.abs(np.asarray(f)) ** 2
    if a.ndim > grid.dim:
        a = a.reshape(-1, *grid.shape).sum(axis=0)
    if mask is not None:
        a = np.where(mask, a, 0.0)
    return float(np.sqrt(a.sum() * grid.cell_volume))


def spectral_l2_norm(f: np.ndarray, grid: GridSpec) -> float:
    """Same norm evaluated from Fourier coefficients (Parseval)."""
    fh = _fftn(f)
    npts = np.prod(grid.shape)
    return float(np.sqrt((np.abs(fh) ** 2).sum() * grid.cell_volume / npts))


def spectral_interpolate(f: np.ndarray, grid: GridSpec, points: np.ndarray) -> np.ndarray:
    """Evaluate the trigonometric interpolant of ``f`` at arbitrary points.

    ``points`` has shape ``(npts, dim)``. Nyquist modes are split evenly
    between ``+k`` and ``-k`` so real data interpolates to real values.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    fh = _fftn(f) / np.prod(grid.shape)
    # Each axis: phase matrix E_a[p, k] = exp(i k (x_p - origin_a)), with the
    # Nyquist column replaced by cos(k_N x) so the interpolant stays symmetric.
    mats = []
    for a in range(grid.dim):
        k = 2 * np.pi * sfft.fftfreq(grid.points[a], d=grid.spacing[a])
        x = points[:, a] - grid.origin[a]
        E = np.exp(1j * np.outer(x, k))
        nyq = grid.points[a] // 2
        E[:, nyq] = np.cos(k[nyq] * x)
        mats.append(E)
    if grid.dim == 1:
        out = mats[0] @ fh
    elif grid.dim == 2:
        out = np.einsum("pk,kl,pl->p", mats[0], fh, mats[1], optimize=True)
    else:
        out = np.einsum("pk,klm,pl,pm->p", mats[0], fh, mats[1], mats[2], optimize=True)
    return out if np.iscomplexobj(f) else out.real


# --------------------------------------------------------------------------
# temporal stencils

_STENCILS = {
    1: np.array([1.0, -8.0, 0.0, 8.0, -1.0]) / 12.0,
    2: np.array([-1.0, 16.0, -30.0, 16.0, -1.0]) / 12.0,
}


def check_uniform(times: Sequence[float], rtol: float = 1e-9) -> float:
    """Return the common spacing of ``times`` or raise if it is not uniform."""
    t = np.asarray(times, dtype=float)
    steps = np.diff(t)
    if len(steps) == 0 or np.any(steps <= 0):
        raise ValueError("times must be strictly increasing")
    dt = steps.mean()
    if np.max(np.abs(steps - dt)) > rtol * max(abs(dt), np.max(np.abs(t))):
        raise ValueError("non-uniform time spacing")
    return float(dt)


def time_stencil(stack: Sequence[np.ndarray], times: Sequence[float], order: int) -> np.ndarray:
    """Fourth-order central time derivative at the centre of an odd-length stack."""
    if order not in _STENCILS:
        raise ValueError("order must be 1 or 2")
    if len(stack) < 5:
        raise ValueError(f"time stencil needs >= 5 slices, got {len(stack)}")
    if len(stack) != len(times):
        raise ValueError("stack and times differ in length")
    dt = check_uniform(times)
    mid = len(stack) // 2
    if len(stack) % 2 == 0:
        raise ValueError("stack length must be odd so a centre slice exists")
    window = [np.asarray(s) for s in stack[mid - 2 : mid + 3]]
    w = _STENCILS[order]
    acc = w[0] * window[0]
    for wk, s in zip(w[1:], window[1:]):
        acc = acc + wk * s
    return acc / dt**order


def tensor_divergence(T: SymTensor, grid: GridSpec) -> np.ndarray:
    """Vector ``d_j T_ij``."""
    hats = [_fftn(c) for c in T.components]
    index = {}
    for c, (i, j) in enumerate(sym_pairs(grid.dim)):
        index[i, j] = index[j, i] = c
    out = []
    for i in range(grid.dim):
        acc = np.zeros(grid.shape, dtype=complex)
        for j in range(grid.dim):
            acc += 1j * grid.odd_wavenumbers[j] * hats[index[i, j]]
        out.append(_ifftn(acc).real)
    return np.stack(out)
