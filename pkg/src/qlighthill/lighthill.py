"""Second-order density wave equation driven by a quantum Lighthill source tensor.

The residual checked at a snapshot is::

    d_t^2 n - c0^2 lap n - d_i d_j T_ij - D

with ``T_ij = n v_i v_j - c0^2 n delta_ij + s_P Pi_ij + s_G (g/2m) n^2 delta_ij``
plus either ``-(V/m) n delta_ij`` inside ``T`` ("tensor_absorbed") or the
separate dipole source ``D = (1/m) d_i(n d_i V)`` ("dipole").
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.interpolate import RegularGridInterpolator
from scipy.ndimage import binary_erosion
from scipy.special import roots_legendre

from . import grid as _g
from .gpe import PhysicsParams, PotentialSpec, Trajectory
from .grid import GridSpec, SymTensor
from .hydro import AUDITED, SignConvention, flux_tensor, reynolds_tensor, stress_tensor
from .madelung import DEFAULT_FLOOR, HydroBundle, current, density, madelung
from .report import ResidualReport, make_report

KERNELS = ("retarded", "advanced", "mixed")


@dataclass(frozen=True)
class LighthillConfig:
    c0: float = 1.0
    convention: SignConvention = AUDITED
    density_floor: float = DEFAULT_FLOOR
    kernel: str = "retarded"
    mixing: float = 1.0  # weight of the retarded kernel when kernel == "mixed"
    lhs_operator: str = "spectral"  # "fd2" only for operator-mismatch probes

    def __post_init__(self):
        if not self.c0 > 0:
            raise ValueError("c0 must be positive")
        if self.kernel not in KERNELS:
            raise ValueError(f"kernel must be one of {KERNELS}")
        if not 0.0 <= self.mixing <= 1.0:
            raise ValueError("mixing weight must lie in [0, 1]")
        if self.lhs_operator not in ("spectral", "fd2"):
            raise ValueError("lhs_operator must be 'spectral' or 'fd2'")

    @property
    def retarded_weight(self) -> float:
        return {"retarded": 1.0, "advanced": 0.0}.get(self.kernel, self.mixing)


@dataclass
class SourceTensorField:
    """Source tensor plus optional dipole source; ``parts`` splits ``T`` by origin."""

    T: SymTensor
    dipole: np.ndarray | None = None
    parts: dict[str, SymTensor] = field(default_factory=dict)


def assemble_source_tensor(bundle: HydroBundle, grid: GridSpec, params: PhysicsParams,
                           config: LighthillConfig, V: np.ndarray | None = None,
                           grad_V: np.ndarray | None = None) -> SourceTensorField:
    """Build ``T_ij`` (and the dipole source) from fluid fields at one instant."""
    conv = config.convention
    n = bundle.n
    floor = config.density_floor
    pi = stress_tensor(n, grid, params, floor)
    if bundle.psi is not None:
        flux = flux_tensor(bundle.psi, grid, params)
    else:
        flux = reynolds_tensor(n, bundle.current, grid, floor) - pi
    # n v v + s_P Pi = (n v v - Pi) + (1 + s_P) Pi
    kinetic = flux + (1 + conv.bracket_pi_sign) * pi
    interaction = SymTensor.diagonal(grid.dim, conv.bracket_g_sign * params.coupling / (2 * params.mass) * n**2)
    reference = SymTensor.diagonal(grid.dim, -config.c0**2 * n)
    parts = {"kinetic_quantum": kinetic, "interaction": interaction, "reference": reference}
    T = kinetic + interaction + reference
    dipole = None
    if V is not None:
        if conv.potential_form == "tensor_absorbed":
            parts["potential"] = SymTensor.diagonal(grid.dim, -V * n / params.mass)
            T = T + parts["potential"]
        else:
            if grad_V is None:
                raise ValueError("dipole form needs grad V")
            dipole = _g.divergence(n * grad_V, grid) / params.mass
    return SourceTensorField(T, dipole, parts)


def lighthill_residual_from_fields(grid: GridSpec, params: PhysicsParams, times: np.ndarray,
                                   n_stack: Sequence[np.ndarray], bundle: HydroBundle,
                                   config: LighthillConfig, potential: PotentialSpec | None = None,
                                   check: str = "lighthill") -> ResidualReport:
    """Residual at the centre of a five-slice density stack with fluid fields ``bundle``."""
    t = float(times[len(times) // 2])
    d2n = _g.time_stencil(list(n_stack), times, 2)
    n = bundle.n
    V = grad_V = None
    if potential is not None and potential.kind != "none":
        V = potential.values(grid, params, t)
        grad_V = potential.gradient(grid, params, t)
    src = assemble_source_tensor(bundle, grid, params, config, V, grad_V)
    # The reference part -c0^2 n delta_ij and the LHS c0^2 lap n are grouped:
    # with the spectral LHS both are the same discrete operator on n (the
    # trace of the spectral Hessian), so the c0 terms cancel exactly.
    moving = [part for name, part in src.parts.items() if name != "reference"]
    T_moving = moving[0]
    for part in moving[1:]:
        T_moving = T_moving + part
    dd_ref = _g.double_divergence(SymTensor.diagonal(grid.dim, n), grid)
    lap = dd_ref if config.lhs_operator == "spectral" else _g.fd_laplacian(n, grid)
    residual = d2n - _g.double_divergence(T_moving, grid) - config.c0**2 * (lap - dd_ref)
    terms = {"d2n_dt2": d2n}
    for name, part in src.parts.items():
        if name != "reference":
            terms[f"ddT_{name}"] = _g.double_divergence(part, grid)
    if src.dipole is not None:
        residual = residual - src.dipole
        terms["dipole"] = src.dipole
    return make_report(check, t, residual, grid, terms, bundle.mask,
                       convention=config.convention.label, c0=config.c0)


def lighthill_residual(traj: Trajectory, index: int, config: LighthillConfig = LighthillConfig()) -> ResidualReport:
    """Residual of the density wave equation at snapshot ``index`` of a GPE run."""
    times, psis = traj.window(index)
    n_stack = [density(p) for p in psis]
    bundle = madelung(psis[2], traj.grid, traj.params, config.density_floor)
    return lighthill_residual_from_fields(traj.grid, traj.params, times, n_stack, bundle, config,
                                          traj.potential)


def superposed_residual(trajectories: Sequence[Trajectory], index: int,
                        config: LighthillConfig = LighthillConfig()) -> ResidualReport:
    """Residual for the sum of several runs' densities (currents summed likewise)."""
    first = trajectories[0]
    grid, params = first.grid, first.params
    times = first.window(index)[0]
    n_stack = sum(np.array([density(p) for p in tr.window(index)[1]]) for tr in trajectories)
    j = sum(current(tr.window(index)[1][2], grid, params) for tr in trajectories)
    bundle = HydroBundle.from_density_current(n_stack[2], j, grid, params, config.density_floor)
    return lighthill_residual_from_fields(grid, params, times, list(n_stack), bundle, config,
                                          first.potential, check="lighthill_superposition")


@dataclass
class C0Report:
    c0_values: list[float]
    fields: list[np.ndarray]
    max_difference: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_difference < self.tolerance


def c0_independence_check(traj: Trajectory, index: int, c0_list: Sequence[float],
                          config: LighthillConfig = LighthillConfig(), tolerance: float = 1e-12) -> C0Report:
    """Residual fields for several reference speeds and their largest pointwise spread."""
    if len(c0_list) < 2:
        raise ValueError("need at least two c0 values")
    fields = []
    for c0 in c0_list:
        cfg = LighthillConfig(c0, config.convention, config.density_floor, config.kernel,
                              config.mixing, config.lhs_operator)
        fields.append(lighthill_residual(traj, index, cfg).field)
    ref = fields[0]
    diff = max(float(np.max(np.abs(f - ref))) for f in fields[1:])
    return C0Report(list(c0_list), fields, diff, tolerance)


# --------------------------------------------------------------------------
# circulation


def circle_loop(center, radius: float, vertices: int = 256) -> np.ndarray:
    """Closed polyline approximating a circle in the x-y plane."""
    th = 2 * np.pi * np.arange(vertices) / vertices
    c = np.asarray(center, dtype=float)
    pts = np.zeros((vertices, len(c)))
    pts[:] = c
    pts[:, 0] += radius * np.cos(th)
    pts[:, 1] += radius * np.sin(th)
    return pts


@dataclass
class CirculationResult:
    value: float
    quantum: float
    winding: int
    deviation: float  # value - winding * quantum

    @property
    def relative_deviation(self) -> float:
        if self.winding == 0:
            return abs(self.deviation)
        return abs(self.deviation) / abs(self.winding * self.quantum)


class LoopError(ValueError):
    """The loop passes within one cell of the low-density region."""


def circulation(psi: np.ndarray, grid: GridSpec, loop: np.ndarray, params: PhysicsParams,
                floor: float = DEFAULT_FLOOR, interpolation: str = "spectral",
                quad_order: int = 6) -> CirculationResult:
    """Line integral of the velocity around a closed polyline.

    ``interpolation="spectral"`` evaluates the trigonometric interpolants
    of ``psi`` and ``grad psi`` on the loop; ``"bilinear"`` interpolates the
    gridded velocity instead (second-order accurate).
    """
    if grid.dim < 2:
        raise ValueError("circulation needs dim >= 2")
    loop = np.asarray(loop, dtype=float)
    if loop.ndim != 2 or loop.shape[1] != grid.dim or len(loop) < 3:
        raise ValueError("loop must be an (nvertices >= 3, dim) array")
    a = loop
    b = np.roll(loop, -1, axis=0)
    s, w = roots_legendre(quad_order)
    s = 0.5 * (s + 1)
    w = 0.5 * w
    pts = (a[:, None, :] + s[None, :, None] * (b - a)[:, None, :]).reshape(-1, grid.dim)
    seg = np.repeat(b - a, quad_order, axis=0)
    weights = np.tile(w, len(a))

    n = density(psi)
    mask = n > floor * n.max()
    structure = np.ones((3,) * grid.dim, dtype=bool)
    safe = binary_erosion(np.pad(mask, 1, mode="wrap"), structure)[(slice(1, -1),) * grid.dim]
    h = np.array(grid.spacing)
    origin = np.array(grid.origin)
    nearest = np.rint((pts - origin) / h).astype(int) % np.array(grid.points)
    if not np.all(safe[tuple(nearest.T)]):
        raise LoopError("loop passes within one grid cell of the masked region")

    ratio = params.hbar / params.mass
    if interpolation == "spectral":
        psi_l = _g.spectral_interpolate(psi, grid, pts)
        dpsi = _g.gradient(psi, grid)
        vel = np.stack([ratio * np.imag(_g.spectral_interpolate(dpsi[ax], grid, pts) / psi_l)
                        for ax in range(grid.dim)], axis=1)
    elif interpolation == "bilinear":
        j = current(psi, grid, params)
        v = np.where(mask, j / np.where(mask, n, 1.0), 0.0)
        axes = [np.append(grid.axis_coords(ax), grid.origin[ax] + grid.extents[ax]) for ax in range(grid.dim)]
        wrapped = (pts - origin) % np.array(grid.extents) + origin
        vel = []
        for ax in range(grid.dim):
            padded = np.pad(v[ax], [(0, 1)] * grid.dim, mode="wrap")
            vel.append(RegularGridInterpolator(axes, padded, method="linear")(wrapped))
        vel = np.stack(vel, axis=1)
    else:
        raise ValueError("interpolation must be 'spectral' or 'bilinear'")

    value = float(np.sum(weights * np.einsum("pd,pd->p", vel, seg)))
    quantum = 2 * np.pi * ratio
    winding = int(np.rint(value / quantum))
    return CirculationResult(value, quantum, winding, value - winding * quantum)
