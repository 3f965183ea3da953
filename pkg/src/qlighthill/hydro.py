"""Quantum stress tensor, conservation-law residuals and the momentum sign audit."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import grid as _g
from .gpe import PhysicsParams, Trajectory
from .grid import GridSpec, SymTensor
from .madelung import DEFAULT_FLOOR, current, density, density_mask
from .report import ResidualReport, make_report

POTENTIAL_FORMS = ("tensor_absorbed", "dipole")


@dataclass(frozen=True)
class SignConvention:
    """Signs of the quantum-stress and interaction terms.

    ``s_pi`` and ``s_g`` multiply ``d_j Pi_ij`` and ``(g/2m) d_i n^2`` on the
    right-hand side of the momentum equation. The density wave equation
    inherits ``-s_pi`` on ``Pi_ij`` and, unless overridden through
    ``lighthill_g_sign``, ``-s_g`` on ``g n^2 / 2m``.
    """

    s_pi: int = 1
    s_g: int = -1
    potential_form: str = "dipole"
    label: str = "audited"
    lighthill_g_sign: int | None = None

    def __post_init__(self):
        if self.s_pi not in (1, -1) or self.s_g not in (1, -1):
            raise ValueError("signs must be +1 or -1")
        if self.potential_form not in POTENTIAL_FORMS:
            raise ValueError(f"potential_form must be one of {POTENTIAL_FORMS}")

    @property
    def bracket_pi_sign(self) -> int:
        return -self.s_pi

    @property
    def bracket_g_sign(self) -> int:
        return self.lighthill_g_sign if self.lighthill_g_sign is not None else -self.s_g


AUDITED = SignConvention(1, -1, "dipole", "audited")
# Printed convention: -d_j Pi_ij and -(g/2m) d_i n^2 in the momentum equation, and a
# source bracket with +Pi_ij, -g n^2/2m and -n V/m inside delta_ij.
PRINTED = SignConvention(-1, -1, "tensor_absorbed", "printed", lighthill_g_sign=-1)

CONVENTIONS = {"audited": AUDITED, "printed": PRINTED}


def stress_tensor(n: np.ndarray, grid: GridSpec, params: PhysicsParams,
                  floor: float = DEFAULT_FLOOR) -> SymTensor:
    """``Pi_ij = (hbar^2/4m^2)(d_i d_j n - d_i n d_j n / n)``.

    Below the density floor the division uses ``floor * max(n)`` instead of
    ``n``; the tensor stays continuous across the mask edge.
    """
    c = params.hbar**2 / (4 * params.mass**2)
    denom = np.maximum(n, floor * n.max())
    dn = _g.gradient(n, grid)
    hess = _g.hessian(n, grid)
    return SymTensor.from_function(grid.dim, lambda i, j: c * (hess[i, j] - dn[i] * dn[j] / denom))


def flux_tensor(psi: np.ndarray, grid: GridSpec, params: PhysicsParams) -> SymTensor:
    """``n v_i v_j - Pi_ij`` evaluated without dividing by the density.

    Uses ``n v_i v_j - Pi_ij = (hbar/m)^2 Re(d_i psi* d_j psi) - (hbar^2/4m^2) d_i d_j n``.
    """
    hb2 = (params.hbar / params.mass) ** 2
    dpsi = _g.gradient(psi, grid)
    hess = _g.hessian(density(psi), grid)
    return SymTensor.from_function(
        grid.dim,
        lambda i, j: hb2 * np.real(np.conj(dpsi[i]) * dpsi[j]) - 0.25 * hb2 * hess[i, j],
    )


def reynolds_tensor(n: np.ndarray, j: np.ndarray, grid: GridSpec, floor: float = DEFAULT_FLOOR) -> SymTensor:
    """``n v_i v_j = j_i j_j / n`` with the same floored denominator as :func:`stress_tensor`."""
    denom = np.maximum(n, floor * n.max())
    return SymTensor.from_function(grid.dim, lambda a, b: j[a] * j[b] / denom)


# --------------------------------------------------------------------------
# residuals


def continuity_residual(traj: Trajectory, index: int, floor: float = DEFAULT_FLOOR) -> ResidualReport:
    """``dn/dt + div(n v)`` at snapshot ``index``."""
    grid, params = traj.grid, traj.params
    times, psis = traj.window(index)
    dndt = _g.time_stencil([density(p) for p in psis], times, 1)
    div_j = _g.divergence(current(psis[2], grid, params), grid)
    mask = density_mask(density(psis[2]), floor)
    return make_report("continuity", times[2], dndt + div_j, grid,
                       {"dn_dt": dndt, "div_nv": div_j}, mask)


def momentum_flux_residual(traj: Trajectory, index: int, convention: SignConvention = AUDITED,
                           floor: float = DEFAULT_FLOOR) -> ResidualReport:
    """Flux-form momentum balance under ``convention``::

        d_t(n v_i) + d_j(n v_i v_j) + (n/m) d_i V - s_pi d_j Pi_ij - s_g (g/2m) d_i n^2
    """
    grid, params = traj.grid, traj.params
    times, psis = traj.window(index)
    djdt = _g.time_stencil([current(p, grid, params) for p in psis], times, 1)
    psi = psis[2]
    t = times[2]
    n = density(psi)
    mask = density_mask(n, floor)
    pi = stress_tensor(n, grid, params, floor)
    div_pi = _g.tensor_divergence(pi, grid)
    # n v v - s_pi Pi = (n v v - Pi) + (1 - s_pi) Pi
    div_flux = _g.tensor_divergence(flux_tensor(psi, grid, params), grid)
    div_reynolds = div_flux + div_pi
    force_V = n / params.mass * traj.potential.gradient(grid, params, t)
    grad_n2 = params.coupling / (2 * params.mass) * _g.gradient(n**2, grid)
    residual = djdt + div_flux + (1 - convention.s_pi) * div_pi + force_V - convention.s_g * grad_n2
    terms = {
        "d_nv_dt": djdt,
        "div_nvv": div_reynolds,
        "div_pi": div_pi,
        "n_grad_V": force_V,
        "g_grad_n2": grad_n2,
    }
    return make_report("momentum", t, residual, grid, terms, mask,
                       convention=convention.label, s_pi=convention.s_pi, s_g=convention.s_g)


# --------------------------------------------------------------------------
# sign audit


class AmbiguousAudit(RuntimeError):
    """No unique sign convention annihilates the residuals."""


@dataclass
class AuditResult:
    s_pi: int
    s_g: int | None
    potential_form: str | None
    table: list[dict] = field(default_factory=list)
    note: str = ""

    @property
    def convention(self) -> SignConvention | None:
        if self.s_g is None or self.potential_form is None:
            return None
        return SignConvention(self.s_pi, self.s_g, self.potential_form, "audited")


def _ladder(entry):
    if isinstance(entry, tuple) and len(entry) == 2 and isinstance(entry[0], Trajectory):
        return [entry]
    return list(entry)


def sign_audit(suite: Sequence, names: Sequence[str] | None = None, accept: float = 1e-4,
               separation: float = 100.0, vanish: float = 1e-10, c0: float = 1.0) -> AuditResult:
    """Pick the (s_pi, s_g) pair minimising the worst momentum residual.

    ``suite`` holds one entry per scenario: a ``(trajectory, index)`` pair
    or a refinement ladder of such pairs (coarse to fine). The winner must
    reach ``accept`` at the finest level, decrease along every ladder and
    beat every rival by ``separation``; otherwise :class:`AmbiguousAudit`.
    ``s_g`` is left undetermined when every scenario has ``g = 0``. When a
    scenario has a non-zero potential, the Lighthill source form of the
    potential term is audited the same way.
    """
    from .lighthill import LighthillConfig, lighthill_residual

    ladders = [_ladder(e) for e in suite]
    names = list(names) if names is not None else [f"scenario{i}" for i in range(len(ladders))]
    pairs = list(itertools.product((1, -1), (1, -1)))
    table = []
    worst = {p: 0.0 for p in pairs}
    decays = {p: True for p in pairs}
    for name, ladder in zip(names, ladders):
        for p in pairs:
            conv = SignConvention(p[0], p[1], "dipole", f"s_pi={p[0]:+d},s_g={p[1]:+d}")
            # a level whose residual vanishes in absolute terms counts as zero
            reps = [momentum_flux_residual(tr, i, conv) for tr, i in ladder]
            rels = [0.0 if r.l2_abs < vanish else r.l2_rel for r in reps]
            table.append({"scenario": name, "s_pi": p[0], "s_g": p[1], "l2_rel": rels})
            worst[p] = max(worst[p], rels[-1])
            if len(rels) > 1 and not all(b < a or b == 0.0 for a, b in zip(rels, rels[1:])):
                decays[p] = False

    if max(worst.values()) < vanish:
        raise AmbiguousAudit("every convention annihilates the residuals; the suite carries no sign information")

    has_g = any(tr.params.coupling != 0 for ladder in ladders for tr, _ in ladder)
    best = min(pairs, key=lambda p: (worst[p], -p[0], -p[1]))
    if worst[best] > accept or not decays[best]:
        raise AmbiguousAudit(f"no convention decays: best {best} leaves {worst[best]:.3e}")
    rival_pi = min(worst[p] for p in pairs if p[0] != best[0])
    if rival_pi < separation * max(worst[best], vanish):
        raise AmbiguousAudit(f"s_pi not separated: {worst[best]:.3e} vs {rival_pi:.3e}")
    s_g: int | None = best[1]
    if not has_g:
        s_g = None
    else:
        rival_g = worst[(best[0], -best[1])]
        if rival_g < separation * max(worst[best], vanish):
            raise AmbiguousAudit(f"s_g not separated: {worst[best]:.3e} vs {rival_g:.3e}")

    potential_form = None
    forms = {}
    with_V = [(name, ladder) for name, ladder in zip(names, ladders)
              if any(tr.potential.kind != "none" for tr, _ in ladder)]
    if with_V:
        for form in POTENTIAL_FORMS:
            conv = SignConvention(best[0], s_g if s_g is not None else -1, form, form)
            forms[form] = max(
                lighthill_residual(ladder[-1][0], ladder[-1][1], LighthillConfig(c0=c0, convention=conv)).l2_rel
                for _, ladder in with_V
            )
            table.append({"scenario": "lighthill(V)", "potential_form": form, "l2_rel": [forms[form]]})
        winner = min(forms, key=forms.get)
        other = [f for f in forms if f != winner][0]
        if forms[winner] <= accept and forms[other] >= separation * max(forms[winner], vanish):
            potential_form = winner

    result = AuditResult(best[0], s_g, potential_form, table)
    result.note = audit_note(result, worst, forms, names)
    return result


def audit_note(result: AuditResult, worst: dict, forms: dict, names) -> str:
    lines = [
        "Momentum-equation sign audit",
        "============================",
        "",
        "Residual of d_t(n v_i) + d_j(n v_i v_j) + (n/m) d_i V - s_pi d_j Pi_ij - s_g (g/2m) d_i n^2,",
        "relative L2 at the finest level, worst case over: " + ", ".join(names),
        "",
        f"{'s_pi':>5} {'s_g':>5} {'worst L2_rel':>14}",
    ]
    for (sp, sg), w in sorted(worst.items(), key=lambda kv: kv[1]):
        lines.append(f"{sp:+5d} {sg:+5d} {w:14.3e}")
    lines += [
        "",
        f"selected s_pi = {result.s_pi:+d}",
        f"selected s_g  = {'undetermined (no scenario with g != 0)' if result.s_g is None else f'{result.s_g:+d}'}",
    ]
    if forms:
        lines.append("")
        lines.append("Potential source form in the density wave equation (Lighthill residual, L2_rel):")
        for f, w in forms.items():
            lines.append(f"  {f:<16} {w:.3e}")
        lines.append(f"selected form = {result.potential_form or 'undetermined'}")
    lines += [
        "",
        "Derivation: from Q = -(hbar^2/2m) lap(sqrt n)/sqrt n one has",
        "  -(n/m) d_i Q = d_j [ (hbar^2/4m^2) n d_i d_j ln n ] = + d_j Pi_ij,",
        "and g n d_i n = (g/2) d_i n^2, so the momentum right-hand side carries",
        "+d_j Pi_ij and -(g/2m) d_i n^2. Eliminating n v between the continuity and",
        "momentum equations then gives a source bracket with -Pi_ij, +g n^2/2m delta_ij",
        "and the potential entering as (1/m) d_i (n d_i V) rather than inside delta_ij.",
    ]
    return "\n".join(lines) + "\n"
