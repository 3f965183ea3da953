"""Madelung (polar) decomposition of a wavefunction into fluid fields.

Velocities come from the logarithmic derivative ``(hbar/m) Im(grad psi / psi)``
so no phase unwrapping is needed; the unwrapped phase exists only as a
diagnostic. Every field that divides by the density is masked where
``n <= floor * max(n)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import breadth_first_order, connected_components

from . import grid as _g
from .gpe import PhysicsParams, Trajectory
from .grid import GridSpec
from .report import ResidualReport, make_report

DEFAULT_FLOOR = 1e-8


def density(psi: np.ndarray) -> np.ndarray:
    return psi.real**2 + psi.imag**2


def density_mask(n: np.ndarray, floor: float = DEFAULT_FLOOR) -> np.ndarray:
    return n > floor * n.max()


def current(psi: np.ndarray, grid: GridSpec, params: PhysicsParams) -> np.ndarray:
    """Probability current ``n v = (hbar/m) Im(conj(psi) grad psi)`` (no division)."""
    dpsi = _g.gradient(psi, grid)
    return params.hbar / params.mass * np.imag(np.conj(psi) * dpsi)


def velocity(psi: np.ndarray, grid: GridSpec, params: PhysicsParams,
             floor: float = DEFAULT_FLOOR) -> tuple[np.ndarray, np.ndarray]:
    """Velocity field and the mask on which it is meaningful (zero elsewhere)."""
    n = density(psi)
    mask = density_mask(n, floor)
    j = current(psi, grid, params)
    v = np.where(mask, j / np.where(mask, n, 1.0), 0.0)
    return v, mask


def quantum_potential(n: np.ndarray, grid: GridSpec, params: PhysicsParams,
                      floor: float = DEFAULT_FLOOR) -> np.ndarray:
    """Bohm potential ``-(hbar^2/2m) lap(sqrt n)/sqrt n``, zero off the mask."""
    R = np.sqrt(np.maximum(n, 0.0))
    mask = density_mask(n, floor)
    lapR = _g.spectral_laplacian(R, grid)
    return np.where(mask, -(params.hbar**2) / (2 * params.mass) * lapR / np.where(mask, R, 1.0), 0.0)


def quantum_potential_identity(n: np.ndarray, grid: GridSpec, params: PhysicsParams,
                               floor: float = DEFAULT_FLOOR) -> np.ndarray:
    """``Q = -(hbar^2/4m)[lap n / n - |grad n|^2 / (2 n^2)]`` on the mask."""
    mask = density_mask(n, floor)
    safe = np.where(mask, n, 1.0)
    dn = _g.gradient(n, grid)
    lap = _g.spectral_laplacian(n, grid)
    Q = -(params.hbar**2) / (4 * params.mass) * (lap / safe - (dn**2).sum(axis=0) / (2 * safe**2))
    return np.where(mask, Q, 0.0)


# --------------------------------------------------------------------------
# phase


@dataclass
class PhaseField:
    """Unwrapped phase ``S`` (units of action) and its topology report.

    ``labels`` numbers the connected masked regions (-1 off the mask); each
    region carries its own additive constant, ambiguous up to
    ``2 pi hbar`` times an integer. ``residues`` holds the winding number of
    every elementary plaquette (2D/3D) and ``windings`` the net winding along
    fully masked periodic lines per axis. ``cuts`` counts masked neighbour
    pairs where the unwrapped ``S`` jumps by a multiple of ``2 pi hbar``:
    a loop around a masked vortex core forces such a branch cut.
    """

    S: np.ndarray
    mask: np.ndarray
    labels: np.ndarray
    n_regions: int
    residues: dict
    windings: np.ndarray
    cuts: int = 0

    @property
    def multivalued(self) -> bool:
        return bool(any(np.any(r != 0) for r in self.residues.values()) or np.any(self.windings != 0)
                    or self.cuts > 0)

    @property
    def vortex_count(self) -> int:
        return int(sum(np.abs(r).sum() for r in self.residues.values()))


def _wrap_angle(a):
    return (a + np.pi) % (2 * np.pi) - np.pi


def phase_extract(psi: np.ndarray, grid: GridSpec, params: PhysicsParams,
                  floor: float = DEFAULT_FLOOR) -> PhaseField:
    """Unwrap ``hbar * arg(psi)`` along a breadth-first tree of each masked region."""
    n = density(psi)
    mask = density_mask(n, floor)
    theta = np.angle(psi)
    shape = grid.shape
    idx = np.arange(mask.size).reshape(shape)
    rows, cols = [], []
    for a in range(grid.dim):
        # Non-periodic neighbours only: the unwrap then runs monotonically
        # along each axis and the periodic seam shows up as a winding.
        lo = [slice(None)] * grid.dim
        hi = [slice(None)] * grid.dim
        lo[a] = slice(0, -1)
        hi[a] = slice(1, None)
        both = mask[tuple(lo)] & mask[tuple(hi)]
        rows.append(idx[tuple(lo)][both])
        cols.append(idx[tuple(hi)][both])
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    size = mask.size
    graph = coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(size, size)).tocsr()
    _, comp = connected_components(graph, directed=False)

    flat_theta = theta.ravel()
    flat_mask = mask.ravel()
    S = np.zeros(size)
    labels = np.full(size, -1)
    seen = np.zeros(size, dtype=bool)
    region = 0
    sym = graph + graph.T
    for start in np.flatnonzero(flat_mask):
        if seen[start]:
            continue
        order, pred = breadth_first_order(sym, start, directed=False, return_predecessors=True)
        seen[order] = True
        labels[order] = region
        S[start] = flat_theta[start]
        for node in order[1:]:
            p = pred[node]
            S[node] = S[p] + _wrap_angle(flat_theta[node] - flat_theta[p])
        region += 1

    residues = {}
    dtheta = [_wrap_angle(np.roll(theta, -1, axis=a) - theta) for a in range(grid.dim)]
    for a in range(grid.dim):
        for b in range(a + 1, grid.dim):
            circ = dtheta[a] + np.roll(dtheta[b], -1, axis=a) - np.roll(dtheta[a], -1, axis=b) - dtheta[b]
            corners = mask & np.roll(mask, -1, a) & np.roll(mask, -1, b) & np.roll(np.roll(mask, -1, a), -1, b)
            residues[(a, b)] = np.where(corners, np.rint(circ / (2 * np.pi)), 0).astype(int)
    windings = []
    for a in range(grid.dim):
        full = mask.all(axis=a)
        w = np.rint(dtheta[a].sum(axis=a) / (2 * np.pi)).astype(int)
        windings.append(np.where(full, w, 0))
    windings = np.array(windings) if grid.dim > 1 else np.array([int(windings[0])])

    jumps = S[cols] - S[rows] - _wrap_angle(flat_theta[cols] - flat_theta[rows])
    cuts = int(np.count_nonzero(np.abs(jumps) > np.pi))

    S = np.where(flat_mask, S, 0.0).reshape(shape) * params.hbar
    return PhaseField(S, mask, labels.reshape(shape), region, residues, windings, cuts)


# --------------------------------------------------------------------------
# hydrodynamic bundle


@dataclass
class HydroBundle:
    """Fluid fields at one instant.

    ``psi`` is kept when the bundle came from a wavefunction; flux-type
    quantities are then evaluated in division-free form.
    """

    n: np.ndarray
    current: np.ndarray
    v: np.ndarray
    Q: np.ndarray
    mask: np.ndarray
    psi: np.ndarray | None = None
    phase: PhaseField | None = None

    @classmethod
    def from_density_current(cls, n: np.ndarray, j: np.ndarray, grid: GridSpec,
                             params: PhysicsParams, floor: float = DEFAULT_FLOOR) -> "HydroBundle":
        mask = density_mask(n, floor)
        v = np.where(mask, j / np.where(mask, n, 1.0), 0.0)
        return cls(n, j, v, quantum_potential(n, grid, params, floor), mask)


def madelung(psi: np.ndarray, grid: GridSpec, params: PhysicsParams,
             floor: float = DEFAULT_FLOOR, with_phase: bool = False) -> HydroBundle:
    n = density(psi)
    j = current(psi, grid, params)
    mask = density_mask(n, floor)
    v = np.where(mask, j / np.where(mask, n, 1.0), 0.0)
    Q = quantum_potential(n, grid, params, floor)
    phase = phase_extract(psi, grid, params, floor) if with_phase else None
    return HydroBundle(n, j, v, Q, mask, psi, phase)


# --------------------------------------------------------------------------
# Hamilton-Jacobi in gradient (Euler) form


def _velocity_gradient(psi, grid, params, mask):
    """``d_j v_i = (hbar/m) Im(d_i d_j psi/psi - d_i psi d_j psi/psi^2)`` pointwise."""
    safe = np.where(mask, psi, 1.0)
    dpsi = _g.gradient(psi, grid)
    psih = _g._fftn(psi)
    out = np.zeros((grid.dim, grid.dim, *grid.shape))
    for i in range(grid.dim):
        for j in range(i, grid.dim):
            d2 = _g._ifftn(_g._second_multiplier(grid, i, j) * psih)
            val = params.hbar / params.mass * np.imag(d2 / safe - dpsi[i] * dpsi[j] / safe**2)
            out[i, j] = out[j, i] = np.where(mask, val, 0.0)
    return out


def _grad_quantum_potential(psi, grid, params, mask):
    """``grad Q`` from derivatives of ``psi`` divided pointwise.

    With ``u = grad psi / psi`` one has ``lap sqrt(n) / sqrt(n) = Re(lap psi / psi) + |Im u|^2``,
    so ``Q`` needs no derivative of ``|psi|`` (which has a kink at density nodes).
    """
    safe = np.where(mask, psi, 1.0)
    psih = _g._fftn(psi)
    dpsi = _g.gradient(psi, grid)
    lap = _g.spectral_laplacian(psi, grid)
    dlap = _g.gradient(lap, grid)
    u = dpsi / safe
    out = np.zeros((grid.dim, *grid.shape))
    for a in range(grid.dim):
        val = np.real(dlap[a] / safe - lap * u[a] / safe)
        for b in range(grid.dim):
            d_ab = _g._ifftn(_g._second_multiplier(grid, a, b) * psih) / safe
            val = val + 2 * np.imag(u[b]) * np.imag(d_ab - u[a] * u[b])
        out[a] = -(params.hbar**2) / (2 * params.mass) * val
    return np.where(mask, out, 0.0)


def euler_residual(traj: Trajectory, index: int, floor: float = DEFAULT_FLOOR) -> ResidualReport:
    """``m(dv/dt + (v.grad)v) + grad(V + Q + g n)`` at snapshot ``index``."""
    grid, params = traj.grid, traj.params
    times, psis = traj.window(index)
    vs, masks = zip(*(velocity(p, grid, params, floor) for p in psis))
    mask = np.logical_and.reduce(masks)
    dvdt = _g.time_stencil(list(vs), times, 1)
    psi = psis[2]
    v = vs[2]
    n = density(psi)
    grad_v = _velocity_gradient(psi, grid, params, mask)
    advect = np.einsum("j...,ij...->i...", v, grad_v)
    t = times[2]
    dV = traj.potential.gradient(grid, params, t)
    dQ = _grad_quantum_potential(psi, grid, params, mask)
    dgn = params.coupling * _g.gradient(n, grid)
    m = params.mass
    terms = {
        "m_dv_dt": m * dvdt,
        "m_advection": m * advect,
        "grad_V": dV,
        "grad_Q": dQ,
        "grad_gn": dgn,
    }
    terms = {k: np.where(mask, val, 0.0) for k, val in terms.items()}
    residual = sum(terms.values())
    return make_report("euler", t, residual, grid, terms, mask)
