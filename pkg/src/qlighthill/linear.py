"""Linearized density wave equation for a small perturbation over a background.

``d_t^2 dn = A dn`` with two choices of ``A``:

``audited``  (stationary backgrounds, v0 = 0)::

    A dn = -d_i d_j dPi_ij + (g/m) lap(n0 dn) + (1/m) d_i(dn d_i V)

``frozen_velocity``  (background velocity frozen, printed signs)::

    A dn = d_i d_j{[v_i v_j - (V/m + c0^2) delta_ij] dn + dPi_ij} + c0^2 lap dn

where ``dPi_ij = (hbar^2/4m^2)[d_i d_j - a_i d_j - a_j d_i + a_i a_j] dn`` and
``a = grad ln n0``. Time stepping is leapfrog; the two-time problem is one
space-time linear system.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.fft as sfft
from scipy.optimize import OptimizeWarning, curve_fit
from scipy.sparse.linalg import LinearOperator, gmres, minres

from . import grid as _g
from .gpe import NO_POTENTIAL, NumericalAbort, PhysicsParams, PotentialSpec
from .grid import GridSpec, SymTensor
from .madelung import DEFAULT_FLOOR, current, density, density_mask

MODES = ("audited", "frozen_velocity")


class SupportError(ValueError):
    """Perturbation reaches outside the background's density mask."""


class StabilityError(ValueError):
    """Step size above the leapfrog stability bound."""


class ConvergenceError(RuntimeError):
    """Iterative space-time solve did not reach its tolerance."""


class ResonanceError(RuntimeError):
    """Two-time interval (nearly) resonant: the space-time operator is singular."""

    def __init__(self, message: str, condition: float):
        super().__init__(f"{message} (condition estimate {condition:.3g})")
        self.condition = condition


@dataclass(frozen=True)
class LinearConfig:
    mode: str = "audited"
    c0: float = 1.0
    velocity_tol: float = 1e-10

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")


@dataclass
class Background:
    grid: GridSpec
    n0: np.ndarray
    v0: np.ndarray
    params: PhysicsParams
    potential: PotentialSpec = NO_POTENTIAL
    floor: float = DEFAULT_FLOOR

    def __post_init__(self):
        if np.any(self.n0 < 0):
            raise ValueError("background density must be non-negative")
        self.mask = density_mask(self.n0, self.floor)
        safe = np.where(self.mask, self.n0, 1.0)
        a = _g.gradient(self.n0, self.grid) / safe
        self.ln_grad = np.where(self.mask, a, 0.0)
        if not np.all(np.isfinite(self.ln_grad)):
            raise ValueError("grad ln n0 is not finite on the mask")
        if self.potential.kind != "none":
            self.V = self.potential.values(self.grid, self.params)
            self.grad_V = self.potential.gradient(self.grid, self.params)
        else:
            self.V = np.zeros(self.grid.shape)
            self.grad_V = np.zeros((self.grid.dim, *self.grid.shape))

    @classmethod
    def uniform(cls, grid: GridSpec, n0: float, params: PhysicsParams) -> "Background":
        return cls(grid, np.full(grid.shape, float(n0)), np.zeros((grid.dim, *grid.shape)), params)

    @classmethod
    def from_state(cls, psi: np.ndarray, grid: GridSpec, params: PhysicsParams,
                   potential: PotentialSpec = NO_POTENTIAL, floor: float = DEFAULT_FLOOR) -> "Background":
        n = density(psi)
        mask = density_mask(n, floor)
        j = current(psi, grid, params)
        v = np.where(mask, j / np.where(mask, n, 1.0), 0.0)
        return cls(grid, n, v, params, potential, floor)

    @property
    def is_uniform(self) -> bool:
        return bool(np.ptp(self.n0) <= 1e-14 * self.n0.max() and not np.any(self.v0)
                    and np.ptp(self.V) == 0)


@dataclass
class PerturbationState:
    delta_n: np.ndarray
    delta_n_dot: np.ndarray
    t: float = 0.0


def _check_support(bg: Background, dn: np.ndarray) -> None:
    scale = np.abs(dn).max()
    if scale > 0 and np.any(np.abs(dn[~bg.mask]) > 1e-12 * scale):
        raise SupportError("perturbation extends outside the background density mask")


def delta_stress_apply(bg: Background, dn: np.ndarray, check_support: bool = True) -> SymTensor:
    if check_support:
        _check_support(bg, dn)
    c = bg.params.hbar**2 / (4 * bg.params.mass**2)
    a = bg.ln_grad
    d = _g.gradient(dn, bg.grid)
    hess = _g.hessian(dn, bg.grid)
    return SymTensor.from_function(
        bg.grid.dim, lambda i, j: c * (hess[i, j] - a[i] * d[j] - a[j] * d[i] + a[i] * a[j] * dn)
    )


def linearized_rhs(bg: Background, dn: np.ndarray, config: LinearConfig = LinearConfig(),
                   check_support: bool = True) -> np.ndarray:
    """``A dn``, the second time derivative of the perturbation."""
    grid, p = bg.grid, bg.params
    dpi = delta_stress_apply(bg, dn, check_support)
    if config.mode == "audited":
        if np.max(np.abs(bg.v0)) > config.velocity_tol:
            raise ValueError("audited linearization needs a stationary background (v0 = 0)")
        out = -_g.double_divergence(dpi, grid)
        out += p.coupling / p.mass * _g.spectral_laplacian(bg.n0 * dn, grid)
        out += _g.divergence(dn * bg.grad_V, grid) / p.mass
        return out
    c2 = config.c0**2
    v = bg.v0
    T = SymTensor.from_function(
        grid.dim,
        lambda i, j: v[i] * v[j] * dn + dpi[i, j] - ((bg.V / p.mass + c2) * dn if i == j else 0.0),
    )
    return _g.double_divergence(T, grid) + c2 * _g.spectral_laplacian(dn, grid)


# --------------------------------------------------------------------------
# initial-value problem


def spectral_radius(bg: Background, config: LinearConfig = LinearConfig(), iterations: int = 60,
                    seed: int = 0) -> float:
    """Power-iteration estimate of the largest ``|eigenvalue|`` of ``A`` on the mask."""
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(bg.grid.shape) * bg.mask
    x /= np.linalg.norm(x)
    lam = 0.0
    for _ in range(iterations):
        y = linearized_rhs(bg, x, config, check_support=False) * bg.mask
        lam = float(np.linalg.norm(y))
        if lam == 0:
            return 0.0
        x = y / lam
    return lam


def stability_bound(bg: Background, config: LinearConfig = LinearConfig(), seed: int = 0) -> float:
    """Largest leapfrog step ``2/sqrt(rho)``, with 10% margin on the estimate of ``rho``."""
    rho = spectral_radius(bg, config, seed=seed)
    return np.inf if rho == 0 else 2.0 / np.sqrt(1.1 * rho)


@dataclass
class PerturbationHistory:
    times: np.ndarray
    delta_n: np.ndarray  # (nt, *shape)
    energy: np.ndarray
    dt: float
    meta: dict = field(default_factory=dict)

    def state(self, k: int) -> PerturbationState:
        """Slice ``k`` with a centred (one-sided at the ends) time derivative."""
        u = self.delta_n
        if 0 < k < len(u) - 1:
            dot = (u[k + 1] - u[k - 1]) / (2 * self.dt)
        elif k == 0:
            dot = (u[1] - u[0]) / self.dt
        else:
            dot = (u[-1] - u[-2]) / self.dt
        return PerturbationState(u[k], dot, float(self.times[k]))


def _leapfrog(apply, u_prev, u, steps, dt, t0, blowup=1e8):
    out = [u_prev, u]
    energy = []
    scale = max(np.abs(u_prev).max(), np.abs(u).max(), 1e-300)
    for k in range(steps):
        Au = apply(u)
        u_next = 2 * u - u_prev + dt**2 * Au
        energy.append(0.5 * np.sum(((u_next - u) / dt) ** 2) - 0.5 * np.sum(u_next * Au))
        if not np.all(np.isfinite(u_next)) or np.abs(u_next).max() > blowup * scale:
            raise NumericalAbort(t0 + (k + 2) * dt, "linear perturbation blew up")
        u_prev, u = u, u_next
        out.append(u)
    return np.array(out), np.array(energy)


def evolve_ivp(bg: Background, state0: PerturbationState, t_end: float, dt: float,
               config: LinearConfig = LinearConfig(), check_stability: bool = True,
               seed: int = 0) -> PerturbationHistory:
    """Leapfrog ``d_t^2 dn = A dn``; the first step uses a second-order Taylor start."""
    if dt <= 0 or t_end <= state0.t:
        raise ValueError("need dt > 0 and t_end > t0")
    if check_stability:
        bound = stability_bound(bg, config, seed)
        if dt >= bound:
            raise StabilityError(f"dt={dt:g} exceeds the leapfrog stability bound {bound:g}")
    for f in (state0.delta_n, state0.delta_n_dot):
        if np.shape(f) != bg.grid.shape:
            raise ValueError(f"perturbation shape {np.shape(f)} does not match grid {bg.grid.shape}")
    _check_support(bg, state0.delta_n)

    def apply(u):
        return linearized_rhs(bg, u, config, check_support=False)

    steps = int(round((t_end - state0.t) / dt))
    u0 = np.asarray(state0.delta_n, dtype=float)
    u1 = u0 + dt * state0.delta_n_dot + 0.5 * dt**2 * apply(u0)
    if steps < 1:
        raise ValueError("t_end - t0 shorter than one step")
    u, energy = _leapfrog(apply, u0, u1, steps - 1, dt, state0.t)
    times = state0.t + dt * np.arange(len(u))
    return PerturbationHistory(times, u, energy, dt, {"mode": config.mode})


def reverse(bg: Background, history: PerturbationHistory, config: LinearConfig = LinearConfig()) -> np.ndarray:
    """Run the leapfrog backwards from the last two slices; returns the recovered first slice."""
    steps = len(history.delta_n) - 2

    def apply(u):
        return linearized_rhs(bg, u, config, check_support=False)

    u, _ = _leapfrog(apply, history.delta_n[-1], history.delta_n[-2], steps, history.dt, history.times[-1])
    return u[-1]


def leapfrog_defect(bg: Background, delta_n: np.ndarray, dt: float, config: LinearConfig = LinearConfig()) -> float:
    """Largest relative defect of ``u[k+1] - 2u[k] + u[k-1] - dt^2 A u[k]`` over interior slices."""
    worst = 0.0
    for k in range(1, len(delta_n) - 1):
        d = delta_n[k + 1] - 2 * delta_n[k] + delta_n[k - 1]
        Au = dt**2 * linearized_rhs(bg, delta_n[k], config, check_support=False)
        scale = max(np.linalg.norm(d), np.linalg.norm(Au), np.linalg.norm(delta_n[k]) * 1e-300)
        if scale > 0:
            worst = max(worst, float(np.linalg.norm(d - Au) / scale))
    return worst


# --------------------------------------------------------------------------
# two-time boundary-value problem


def _uniform_symbol(bg: Background, config: LinearConfig) -> np.ndarray:
    """Fourier symbol of ``A`` for the uniform background with the mean density."""
    p = bg.params
    k2 = bg.grid.k_squared
    n_mean = float(bg.n0[bg.mask].mean())
    if config.mode == "audited":
        return -(p.hbar**2 / (4 * p.mass**2)) * k2**2 - p.coupling * n_mean / p.mass * k2
    return (p.hbar**2 / (4 * p.mass**2)) * k2**2


@dataclass
class TwoTimeResult:
    times: np.ndarray
    delta_n: np.ndarray
    delta_n_dot0: np.ndarray
    iterations: int
    residual: float
    condition: float
    solver: str


def solve_two_time(bg: Background, dn_t0: np.ndarray, dn_t1: np.ndarray, t0: float, t1: float,
                   steps: int, config: LinearConfig = LinearConfig(), rtol: float = 1e-8,
                   maxiter: int = 500, resonance_tol: float = 1e-12) -> TwoTimeResult:
    """Solve for all interior slices given ``dn`` at ``t0`` and ``t1`` (``steps`` intervals).

    Interior unknowns ``u_1..u_{M-1}`` satisfy the leapfrog relation
    ``u_{k+1} - 2u_k + u_{k-1} - dt^2 A u_k = 0``. The system is
    preconditioned by the inverse magnitude of the uniform-background
    operator, diagonal under a spatial FFT and a type-I sine transform in
    time. MINRES is used when ``A`` is symmetric (uniform background),
    GMRES otherwise.
    """
    if not t1 > t0:
        raise ValueError("need t1 > t0")
    if steps < 2:
        raise ValueError("need at least two time steps")
    _check_support(bg, dn_t0)
    _check_support(bg, dn_t1)
    M = steps
    dt = (t1 - t0) / M
    shape = bg.grid.shape
    m = M - 1
    size = m * int(np.prod(shape))

    def apply_A(u):
        return linearized_rhs(bg, u, config, check_support=False)

    def matvec(x):
        u = x.reshape(m, *shape)
        out = -2.0 * u
        out[1:] += u[:-1]
        out[:-1] += u[1:]
        for k in range(m):
            out[k] -= dt**2 * apply_A(u[k])
        return out.ravel()

    lam_t = 2 * np.cos(np.pi * np.arange(1, M) / M) - 2
    sym = _uniform_symbol(bg, config)
    eig = lam_t.reshape(-1, *([1] * len(shape))) - dt**2 * sym[None]
    mag = np.abs(eig)
    condition = float(mag.max() / mag.min()) if mag.min() > 0 else np.inf
    if mag.min() <= resonance_tol * mag.max():
        raise ResonanceError("two-time interval is resonant", condition)
    axes = tuple(range(1, len(shape) + 1))

    def precond(x):
        u = x.reshape(m, *shape)
        uh = sfft.fftn(sfft.dst(u, type=1, axis=0, norm="ortho"), axes=axes)
        uh /= mag
        return np.real(sfft.ifftn(sfft.idst(uh, type=1, axis=0, norm="ortho"), axes=axes)).ravel()

    b = np.zeros((m, *shape))
    b[0] -= dn_t0
    b[-1] -= dn_t1
    b = b.ravel()
    op = LinearOperator((size, size), matvec=matvec, dtype=float)
    P = LinearOperator((size, size), matvec=precond, dtype=float)
    count = [0]

    def cb(*_):
        count[0] += 1

    if not np.any(b):
        x = np.zeros(size)
        solver = "trivial"
    elif bg.is_uniform and np.all(bg.V == 0):
        x, info = minres(op, b, M=P, rtol=rtol * 1e-2, maxiter=maxiter, callback=cb)
        solver = "minres"
        if info != 0:
            raise ConvergenceError(f"MINRES stopped with info={info} after {count[0]} iterations")
    else:
        x, info = gmres(op, b, M=P, rtol=rtol * 1e-2, restart=100, maxiter=maxiter, callback=cb,
                        callback_type="legacy")
        solver = "gmres"
        if info != 0:
            raise ConvergenceError(f"GMRES stopped with info={info}")
    bnorm = np.linalg.norm(b)
    res = float(np.linalg.norm(matvec(x) - b) / bnorm) if bnorm > 0 else 0.0
    if res > rtol:
        raise ConvergenceError(f"relative residual {res:.3g} above {rtol:g}")
    interior = x.reshape(m, *shape)
    u = np.concatenate([dn_t0[None], interior, dn_t1[None]])
    dot0 = (u[1] - u[0]) / dt - 0.5 * dt * apply_A(u[0])
    times = t0 + dt * np.arange(M + 1)
    return TwoTimeResult(times, u, dot0, count[0], res, condition, solver)


# --------------------------------------------------------------------------
# dispersion


def bogoliubov_omega(k, n0: float, params: PhysicsParams):
    k = np.asarray(k, dtype=float)
    return np.sqrt(params.coupling * n0 / params.mass * k**2 + (params.hbar * k**2 / (2 * params.mass)) ** 2)


@dataclass
class DispersionPoint:
    k: float
    omega_measured: float
    omega_analytic: float

    @property
    def rel_error(self) -> float:
        return abs(self.omega_measured - self.omega_analytic) / self.omega_analytic


def measure_frequency(times: np.ndarray, signal: np.ndarray) -> float:
    """Angular frequency of ``A cos(w t + phi) + c`` by least squares, seeded from zero crossings."""
    s = signal - signal.mean()
    crossings = np.flatnonzero(np.sign(s[:-1]) * np.sign(s[1:]) < 0)
    if len(crossings) >= 2:
        guess = np.pi * (len(crossings) - 1) / (times[crossings[-1]] - times[crossings[0]])
    else:
        guess = 2 * np.pi / (times[-1] - times[0])

    def model(t, a, w, ph, c):
        return a * np.cos(w * t + ph) + c

    with warnings.catch_warnings():
        # exact fits leave the covariance undefined; only the optimum is used
        warnings.simplefilter("ignore", OptimizeWarning)
        popt, _ = curve_fit(model, times, signal, p0=[np.abs(s).max(), guess, 0.0, signal.mean()], maxfev=20000)
    return abs(float(popt[1]))


def measure_dispersion(bg: Background, mode_numbers, periods: float = 5.0, dt: float | None = None,
                       amplitude: float = 1e-3, config: LinearConfig = LinearConfig()) -> list[DispersionPoint]:
    """Evolve ``cos(k x)`` perturbations on a uniform 1D+ background and fit their frequency."""
    if not bg.is_uniform:
        raise ValueError("dispersion measurement needs a uniform background")
    grid = bg.grid
    x = grid.coords[0] - grid.origin[0]
    n0 = float(bg.n0.mean())
    if dt is None:
        dt = 0.5 * stability_bound(bg, config)
    out = []
    for j in mode_numbers:
        k = 2 * np.pi * j / grid.extents[0]
        wa = float(bogoliubov_omega(k, n0, bg.params))
        dn0 = amplitude * np.cos(k * x) * np.ones(grid.shape)
        # resolve each period with at least 200 steps
        step = min(dt, 2 * np.pi / wa / 200)
        t_end = periods * 2 * np.pi / wa
        hist = evolve_ivp(bg, PerturbationState(dn0, np.zeros_like(dn0)), t_end, step, config,
                          check_stability=False)
        proj = (hist.delta_n * np.cos(k * x)).reshape(len(hist.times), -1).sum(axis=1)
        out.append(DispersionPoint(k, measure_frequency(hist.times, proj), wa))
    return out
