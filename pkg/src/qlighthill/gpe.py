"""Split-step evolution of the Gross-Pitaevskii equation and analytic presets.

The equation integrated is

    i hbar dpsi/dt = (-hbar^2/(2m) lap + V(x, t) + g |psi|^2) psi

with Strang splitting: half potential/nonlinear phase, full kinetic step in
Fourier space, half potential/nonlinear phase.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import sympy
from scipy.optimize import brentq
from scipy.special import ellipj, ellipkm1, erfc

from . import grid as _g
from .grid import GridSpec

log = logging.getLogger(__name__)

PRESETS = (
    "plane_wave",
    "gaussian",
    "harmonic_ground",
    "dark_soliton",
    "bright_soliton",
    "vortex",
    "uniform",
)


class NumericalAbort(RuntimeError):
    """Raised when an evolution produces non-finite values or loses its norm."""

    def __init__(self, time: float, reason: str):
        super().__init__(f"numerical abort at t={time:.6g}: {reason}")
        self.time = time
        self.reason = reason


@dataclass(frozen=True)
class PhysicsParams:
    hbar: float = 1.0
    mass: float = 1.0
    coupling: float = 0.0
    charge: float = 0.0

    def __post_init__(self):
        if not self.hbar > 0:
            raise ValueError("hbar must be positive")
        if not self.mass > 0:
            raise ValueError("mass must be positive")
        if self.charge != 0:
            raise ValueError("only charge = 0 is supported (no gauge coupling)")

    def healing_length(self, n0: float) -> float:
        """``hbar / sqrt(m |g| n0)``."""
        return self.hbar / np.sqrt(self.mass * abs(self.coupling) * n0)


@dataclass(frozen=True)
class GaugeConfig:
    """Vector potential and charge; only the trivial gauge is accepted."""

    vector_potential: np.ndarray | None = None
    charge: float = 0.0

    def __post_init__(self):
        if self.charge != 0 or (
            self.vector_potential is not None and np.any(self.vector_potential != 0)
        ):
            raise ValueError("non-zero vector potentials are not supported")


_SYMBOLS = sympy.symbols("x y z t", real=True)


def _compile(expr: str, dim: int):
    """Compile a potential expression and its gradient to numpy callables."""
    names = {s.name: s for s in _SYMBOLS}
    parsed = sympy.sympify(expr, locals=names)
    free = {s.name for s in parsed.free_symbols}
    allowed = {"x", "y", "z"}.intersection(["x", "y", "z"][:dim]) | {"t"}
    unknown = free - allowed
    if unknown:
        raise ValueError(f"potential expression uses unknown symbols {sorted(unknown)}")
    args = list(_SYMBOLS)
    value = sympy.lambdify(args, parsed, "numpy")
    grads = [sympy.lambdify(args, sympy.diff(parsed, s), "numpy") for s in _SYMBOLS[:dim]]
    return value, grads, "t" in free


@dataclass
class PotentialSpec:
    """External potential ``V(x, t) = s(t) * V0(x)``.

    ``kind`` is one of ``none``, ``harmonic`` (``omega`` per axis),
    ``tabulated`` (``table`` sampled on the trajectory grid) or
    ``expression`` (a sympy-parsable string in ``x, y, z, t``).
    ``time_scale`` optionally scripts the scale factor ``s(t)``.
    """

    kind: str = "none"
    omega: tuple[float, ...] | float | None = None
    table: np.ndarray | None = None
    expression: str | None = None
    time_scale: str | Callable[[float], float] | None = None
    _compiled: tuple | None = field(default=None, init=False, repr=False)
    _scale: Callable | None = field(default=None, init=False, repr=False)

    def __post_init__(self):
        if self.kind not in ("none", "harmonic", "tabulated", "expression"):
            raise ValueError(f"unknown potential kind {self.kind!r}")
        if self.kind == "harmonic" and self.omega is None:
            raise ValueError("harmonic potential needs omega")
        if self.kind == "tabulated":
            if self.table is None or not np.all(np.isfinite(self.table)):
                raise ValueError("tabulated potential needs a finite table")
        if self.kind == "expression" and not self.expression:
            raise ValueError("expression potential needs an expression")
        if isinstance(self.time_scale, str):
            t = _SYMBOLS[3]
            parsed = sympy.sympify(self.time_scale, locals={"t": t})
            if parsed.free_symbols - {t}:
                raise ValueError("time_scale may only depend on t")
            self._scale = sympy.lambdify([t], parsed, "numpy")
        elif callable(self.time_scale):
            self._scale = self.time_scale

    @property
    def is_static(self) -> bool:
        if self.kind == "none":
            return True
        if self._scale is not None:
            return False
        if self.kind == "expression":
            return not self._expr(1)[2]
        return True

    def _expr(self, dim):
        if self._compiled is None or self._compiled[0] != dim:
            self._compiled = (dim, *_compile(self.expression, dim))
        return self._compiled[1:]

    def _omegas(self, dim) -> np.ndarray:
        om = np.atleast_1d(np.asarray(self.omega, dtype=float))
        return np.broadcast_to(om, (dim,)) if om.size == 1 else om

    def scale(self, t: float) -> float:
        return 1.0 if self._scale is None else float(self._scale(t))

    def _args(self, grid: GridSpec, t: float):
        X = list(grid.coords) + [0.0] * (3 - grid.dim)
        return X + [t]

    def values(self, grid: GridSpec, params: PhysicsParams, t: float = 0.0) -> np.ndarray:
        s = self.scale(t)
        if self.kind == "none":
            return np.zeros(grid.shape)
        if self.kind == "harmonic":
            om = self._omegas(grid.dim)
            V = sum(0.5 * params.mass * om[a] ** 2 * grid.coords[a] ** 2 for a in range(grid.dim))
            return s * V
        if self.kind == "tabulated":
            if self.table.shape != grid.shape:
                raise ValueError("tabulated potential does not live on this grid")
            return s * self.table
        value, _, _ = self._expr(grid.dim)
        return s * np.broadcast_to(value(*self._args(grid, t)), grid.shape).astype(float)

    def gradient(self, grid: GridSpec, params: PhysicsParams, t: float = 0.0) -> np.ndarray:
        """Gradient of V; analytic except for tabulated tables (spectral)."""
        s = self.scale(t)
        if self.kind == "none":
            return np.zeros((grid.dim, *grid.shape))
        if self.kind == "harmonic":
            om = self._omegas(grid.dim)
            return s * np.stack([params.mass * om[a] ** 2 * grid.coords[a] for a in range(grid.dim)])
        if self.kind == "tabulated":
            return s * _g.gradient(self.table, grid)
        _, grads, _ = self._expr(grid.dim)
        args = self._args(grid, t)
        return s * np.stack([np.broadcast_to(gf(*args), grid.shape).astype(float) for gf in grads])


NO_POTENTIAL = PotentialSpec()


# --------------------------------------------------------------------------
# presets


def _axis_list(value, dim, default=0.0):
    if value is None:
        value = default
    arr = np.atleast_1d(np.asarray(value, dtype=float))
    if arr.size == 1:
        return np.full(dim, arr.item())
    if arr.size != dim:
        raise ValueError(f"expected {dim} components, got {arr.size}")
    return arr


def _wrap(x, L):
    """Periodic displacement in ``[-L/2, L/2)``."""
    return (x + L / 2) % L - L / 2


def _elliptic_train(L: float, xi: float, periods_per_K: int) -> tuple[float, float, float]:
    """Parameter ``m``, ``K(m)`` and length scale of an elliptic-function train.

    The box holds ``periods_per_K * K`` in units of the returned scale, which
    is ``xi`` up to the rounding of ``m`` near 1; using the realized ``K`` keeps
    the train exactly periodic.
    """
    K_target = L / (periods_per_K * xi)
    if K_target <= np.pi / 2:
        raise ValueError("box too small for a soliton of this healing length")
    # K(1 - p) grows like log(16/p)/2; solve in log p for accuracy near m = 1.
    lp = brentq(lambda q: ellipkm1(np.exp(q)) - K_target, -740.0, 0.0, xtol=1e-14)
    p = np.exp(lp)
    K = float(ellipkm1(p))
    return 1.0 - p, K, L / (periods_per_K * K)


def _reduce(x, ell, K):
    """``x / ell = 2K q + u`` with ``|u| <= K``; scipy's ``ellipj`` is only
    accurate for moderate arguments when ``m`` is within ~1e-9 of 1."""
    u = x / ell
    q = np.rint(u / (2 * K))
    return q, u - 2 * K * q


_ERFC_EDGE = 5.9  # erfc(5.9) / 2 < 1e-16


def initialize_state(grid: GridSpec, preset: str, params: PhysicsParams, **kw) -> np.ndarray:
    """Sample a preset wavefunction on ``grid``.

    Keyword parameters per preset::

        plane_wave       k, amplitude
        gaussian         sigma, center, boost           (density std dev sigma)
        harmonic_ground  omega
        dark_soliton     n_inf, position
        bright_soliton   n_peak, position
        vortex           charge, core, center, amplitude, envelope
        uniform          amplitude
    """
    if preset not in PRESETS:
        raise ValueError(f"unknown preset {preset!r}; choose from {PRESETS}")
    return closed_form(grid, preset, params, 0.0, **kw)


def has_closed_form(preset: str, params: PhysicsParams, potential: PotentialSpec) -> bool:
    """True when :func:`closed_form` is exact for this preset and physics."""
    free = potential.kind == "none"
    if preset in ("plane_wave", "uniform", "dark_soliton", "bright_soliton"):
        return free
    if preset == "gaussian":
        return free and params.coupling == 0
    if preset == "harmonic_ground":
        return potential.kind == "harmonic" and params.coupling == 0 and potential.is_static
    return False


def closed_form(grid: GridSpec, preset: str, params: PhysicsParams, t: float, **kw) -> np.ndarray:
    """Analytic state at time ``t`` (the ``t = 0`` slice is every preset's initial state)."""
    hbar, m, g = params.hbar, params.mass, params.coupling
    X = grid.coords
    d = grid.dim

    if preset == "uniform":
        A = complex(kw.get("amplitude", 1.0))
        return np.full(grid.shape, A * np.exp(-1j * g * abs(A) ** 2 * t / hbar), dtype=complex)

    if preset == "plane_wave":
        k = np.zeros(d)
        if np.ndim(kw.get("k", 1.0)) == 0:
            k[0] = float(kw.get("k", 1.0))  # scalar k points along x
        else:
            k = _axis_list(kw["k"], d)
        A = complex(kw.get("amplitude", 1.0))
        omega = hbar * (k**2).sum() / (2 * m) + g * abs(A) ** 2 / hbar
        phase = sum(k[a] * X[a] for a in range(d)) - omega * t
        return A * np.exp(1j * phase)

    if preset == "gaussian":
        sigma = float(kw.get("sigma", 1.0))
        x0 = _axis_list(kw.get("center"), d)
        k0 = _axis_list(kw.get("boost"), d)
        psi = np.ones(grid.shape, dtype=complex)
        for a in range(d):
            s = 1 + 1j * hbar * t / (2 * m * sigma**2)
            xc = X[a] - x0[a] - hbar * k0[a] * t / m
            psi = psi * (
                (2 * np.pi * sigma**2) ** -0.25
                / np.sqrt(s)
                * np.exp(-(xc**2) / (4 * sigma**2 * s) + 1j * k0[a] * X[a] - 1j * hbar * k0[a] ** 2 * t / (2 * m))
            )
        return psi

    if preset == "harmonic_ground":
        om = _axis_list(kw.get("omega", 1.0), d)
        psi = np.ones(grid.shape, dtype=complex)
        for a in range(d):
            psi = psi * (m * om[a] / (np.pi * hbar)) ** 0.25 * np.exp(-m * om[a] * X[a] ** 2 / (2 * hbar))
        return psi * np.exp(-0.5j * om.sum() * t)

    if preset == "dark_soliton":
        if g <= 0:
            raise ValueError("dark_soliton requires g > 0")
        n_inf = float(kw.get("n_inf", 1.0))
        pos = float(kw.get("position", 0.0))
        # Exact periodic kink/anti-kink train A sn(x/ell | m): nodes at pos and
        # pos + L/2, tending to sqrt(n_inf) tanh((x-pos)/xi) as L/xi grows.
        m_, K, ell = _elliptic_train(grid.extents[0], params.healing_length(n_inf), 4)
        A = np.sqrt(m_ * hbar**2 / (m * g * ell**2))
        mu = hbar**2 * (1 + m_) / (2 * m * ell**2)
        q, u = _reduce(X[0] - pos, ell, K)
        sn, _, _, _ = ellipj(u, m_)
        return (A * (-1.0) ** q * sn).astype(complex) * np.exp(-1j * mu * t / hbar)

    if preset == "bright_soliton":
        if g >= 0:
            raise ValueError("bright_soliton requires g < 0")
        pos = float(kw.get("position", 0.0))
        # Exact periodic train sqrt(n_peak) dn(x/ell | m), one peak per box.
        m_, K, ell = _elliptic_train(grid.extents[0], params.healing_length(float(kw.get("n_peak", 1.0))), 2)
        A = np.sqrt(hbar**2 / (m * abs(g) * ell**2))
        mu = -(hbar**2) * (2 - m_) / (2 * m * ell**2)
        _, u = _reduce(X[0] - pos, ell, K)
        _, _, dn, _ = ellipj(u, m_)
        return (A * dn).astype(complex) * np.exp(-1j * mu * t / hbar)

    if preset == "vortex":
        if d < 2:
            raise ValueError("vortex preset needs dim >= 2")
        ell = int(kw.get("charge", 1))
        c = _axis_list(kw.get("center"), d)
        amp = float(kw.get("amplitude", 1.0))
        core = kw.get("core")
        if core is None:
            core = params.healing_length(amp**2) if g > 0 else 1.0
        x = X[0] - c[0]
        y = X[1] - c[1]
        r2 = x**2 + y**2
        w = (x + 1j * np.sign(ell or 1) * y) / np.sqrt(r2 + core**2)
        psi = amp * w ** abs(ell)
        # Radial erfc envelope: 1 to round-off inside r_in, below 1e-16 beyond
        # r_out, so the winding phase never meets the periodic boundary. Its
        # spectrum decays like a Gaussian, unlike compact bump functions whose
        # slow tails excite poorly resolved high-k modes.
        half = 0.5 * min(grid.extents[0], grid.extents[1])
        r_in, r_out = kw.get("envelope", (0.0, half))
        rr = np.sqrt(sum(_wrap(X[a] - c[a], grid.extents[a]) ** 2 for a in range(2)))
        width = (r_out - r_in) / (2 * _ERFC_EDGE)
        env = 0.5 * erfc((rr - 0.5 * (r_in + r_out)) / width)
        return (psi * env).astype(complex)

    raise ValueError(f"no closed form for preset {preset!r}")


# --------------------------------------------------------------------------
# time stepping


class _Stepper:
    """Strang stepper with cached kinetic propagator."""

    def __init__(self, grid: GridSpec, params: PhysicsParams, dt: float):
        self.grid = grid
        self.params = params
        self.dt = dt
        self.kinetic = np.exp(-1j * params.hbar * grid.k_squared * dt / (2 * params.mass))

    def __call__(self, psi: np.ndarray, V: np.ndarray | None) -> np.ndarray:
        p = self.params
        half = -0.5j * self.dt / p.hbar

        def potential_phase(psi):
            U = p.coupling * (psi.real**2 + psi.imag**2)
            if V is not None:
                U = U + V
            return psi * np.exp(half * U)

        psi = potential_phase(psi)
        psi = _g._ifftn(self.kinetic * _g._fftn(psi))
        return potential_phase(psi)


def strang_step(psi: np.ndarray, grid: GridSpec, V: np.ndarray | None, params: PhysicsParams, dt: float) -> np.ndarray:
    """One second-order Strang step of length ``dt`` with potential ``V``."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    if not np.all(np.isfinite(psi)):
        raise ValueError("psi contains non-finite values")
    return _Stepper(grid, params, dt)(psi, V)


@dataclass
class Trajectory:
    """Uniformly spaced snapshots of one GPE run."""

    grid: GridSpec
    params: PhysicsParams
    potential: PotentialSpec
    dt: float
    stride: int
    times: np.ndarray
    psi: np.ndarray  # (nsnap, *shape)
    norm: np.ndarray
    energy: np.ndarray

    @property
    def snapshot_dt(self) -> float:
        return self.dt * self.stride

    def __len__(self) -> int:
        return len(self.times)

    def index_of(self, t: float) -> int:
        return int(np.argmin(np.abs(self.times - t)))

    def window(self, index: int, half: int = 2) -> tuple[np.ndarray, np.ndarray]:
        """Times and states ``index-half .. index+half``."""
        if index - half < 0 or index + half >= len(self):
            raise ValueError(
                f"slice {index} needs {half} snapshots on each side (have {len(self)})"
            )
        sl = slice(index - half, index + half + 1)
        return self.times[sl], self.psi[sl]

    def scaled(self, w: complex) -> "Trajectory":
        """Copy with every snapshot multiplied by ``w`` (diagnostics recomputed)."""
        psi = self.psi * w
        norm, energy = conserved_diagnostics_arrays(self.grid, self.params, self.potential, self.times, psi)
        return Trajectory(self.grid, self.params, self.potential, self.dt, self.stride,
                          self.times.copy(), psi, norm, energy)


def norm_of(psi: np.ndarray, grid: GridSpec) -> float:
    return float((psi.real**2 + psi.imag**2).sum() * grid.cell_volume)


def energy_of(psi: np.ndarray, grid: GridSpec, params: PhysicsParams, V: np.ndarray | None) -> float:
    """``int hbar^2|grad psi|^2/2m + V|psi|^2 + g|psi|^4/2``.

    The kinetic part uses the full ``|k|^2`` multiplier, i.e. the same
    quadratic form the kinetic propagator conserves.
    """
    n = psi.real**2 + psi.imag**2
    npts = np.prod(grid.shape)
    psih = _g._fftn(psi)
    kin = params.hbar**2 / (2 * params.mass) * (grid.k_squared * np.abs(psih) ** 2).sum() / npts
    pot = (V * n).sum() if V is not None else 0.0
    inter = 0.5 * params.coupling * (n**2).sum()
    return float((kin + pot + inter) * grid.cell_volume)


def conserved_diagnostics_arrays(grid, params, potential, times, psi):
    norm = np.array([norm_of(p, grid) for p in psi])
    energy = np.array(
        [energy_of(p, grid, params, potential.values(grid, params, t)) for t, p in zip(times, psi)]
    )
    return norm, energy


def conserved_diagnostics(trajectory: Trajectory) -> tuple[np.ndarray, np.ndarray]:
    """Per-snapshot ``(norm, energy)``."""
    return conserved_diagnostics_arrays(
        trajectory.grid, trajectory.params, trajectory.potential, trajectory.times, trajectory.psi
    )


def evolve(
    psi0: np.ndarray,
    grid: GridSpec,
    potential: PotentialSpec,
    params: PhysicsParams,
    t_end: float,
    dt: float,
    snapshot_stride: int = 1,
    t0: float = 0.0,
    norm_tol: float = 1e-8,
) -> Trajectory:
    """Integrate from ``t0`` to ``t0 + t_end`` storing every ``snapshot_stride`` steps.

    Raises :class:`NumericalAbort` when a snapshot is non-finite or its norm
    drifts by more than ``norm_tol`` relative to the initial norm.
    """
    if not t_end > 0:
        raise ValueError("t_end must be positive")
    if not dt > 0:
        raise ValueError("dt must be positive")
    if snapshot_stride < 1:
        raise ValueError("snapshot_stride must be >= 1")
    psi = np.array(psi0, dtype=complex)
    if psi.shape != grid.shape:
        raise ValueError(f"psi0 shape {psi.shape} does not match grid {grid.shape}")
    if not np.all(np.isfinite(psi)):
        raise NumericalAbort(t0, "non-finite initial state")

    nsteps = int(np.ceil(t_end / dt - 1e-9))
    nsteps += (-nsteps) % snapshot_stride
    step = _Stepper(grid, params, dt)
    static = potential.is_static
    V_static = potential.values(grid, params, t0) if potential.kind != "none" and static else None

    times = [t0]
    snaps = [psi.copy()]
    norm0 = norm_of(psi, grid)
    for n in range(1, nsteps + 1):
        t_prev = t0 + (n - 1) * dt
        V = V_static if static else potential.values(grid, params, t_prev + dt / 2)
        psi = step(psi, V)
        if n % snapshot_stride == 0:
            t = t0 + n * dt
            if not np.all(np.isfinite(psi)):
                raise NumericalAbort(t, "non-finite values")
            drift = abs(norm_of(psi, grid) - norm0) / norm0
            if drift > norm_tol:
                raise NumericalAbort(t, f"norm drift {drift:.3e}")
            times.append(t)
            snaps.append(psi.copy())
    times = np.array(times)
    snaps = np.array(snaps)
    norm, energy = conserved_diagnostics_arrays(grid, params, potential, times, snaps)
    log.debug("evolved %d steps, %d snapshots", nsteps, len(times))
    return Trajectory(grid, params, potential, dt, snapshot_stride, times, snaps, norm, energy)


def preflight_dt(grid: GridSpec, params: PhysicsParams, psi: np.ndarray,
                 V: np.ndarray | None = None, alpha: float = 0.1, beta: float = 0.05) -> float:
    """Step size rule used by the verification scenarios.

    ``dt = min(alpha m h^2 / hbar, beta hbar / max|V + g n|)``: the kinetic
    term bounds the spatial-scale rate, the local energy bounds the phase
    rotation per step.
    """
    h = min(grid.spacing)
    dt = alpha * params.mass * h**2 / params.hbar
    n = np.abs(psi) ** 2
    U = np.abs(params.coupling) * n.max()
    if V is not None:
        U = U + np.max(np.abs(V))
    if U > 0:
        dt = min(dt, beta * params.hbar / U)
    return float(dt)
