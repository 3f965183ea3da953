"""Acceptance criteria 1-10. Each test prints one PASS/FAIL line and asserts the same verdict.

Tolerances are pinned here rather than read from the scenario files, so loosening
a bundled config cannot turn a criterion green.
"""

import functools

import numpy as np
import pytest

from conftest import LADDER, scenario_ladder
from qlighthill.cli import bundled_scenarios, resolve_config
from qlighthill.hydro import PRINTED
from qlighthill.lighthill import LighthillConfig, c0_independence_check, lighthill_residual, superposed_residual
from qlighthill.report import read_table
from qlighthill.runner import audit_signs, run_gpe, run_scenario, superposition_pair

BORN_PRESETS = ("gaussian_free", "harmonic_ground", "dark_soliton", "bright_soliton")
BORN_TOL, BORN_ORDER = 1e-5, 1.8
C0_TOL = 1e-12
HOMOGENEITY_TOL = 1e-12
SUPERPOSITION_MIN = 0.1
DISPERSION_TOL, DISPERSION_COUNT, KXI_SPAN = 5e-3, 6, (0.1, 2.0)
TANGENT_RATIO, TANGENT_SPREAD = 2.0, 0.4
INTEGRAL_TOL = 0.05
TWO_TIME_TOL = 1e-6
CIRC_REL, CIRC_ABS = 1e-6, 1e-10
NORM_DRIFT, ENERGY_DRIFT = 1e-12, 1e-8


def verdict(capsys, number, ok, text):
    with capsys.disabled():
        print(f"\ncriterion {number:2d}: {'PASS' if ok else 'FAIL'}  {text}")
    assert ok, text


@functools.lru_cache(maxsize=None)
def scenario_run(name, out):
    return run_scenario(resolve_config(name), out / name)


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory):
    return tmp_path_factory.mktemp("acceptance")


def checks_of(result, name):
    return {c.convention: c for c in result.checks if c.name == name}


def order_in_dt(ladder, rels):
    return float(np.polyfit(np.log([tr.dt for tr, _ in ladder]), np.log(rels), 1)[0])


def test_01_born_rule_identity(capsys):
    parts, ok = [], True
    for name in BORN_PRESETS:
        assert resolve_config(name).get("run", "dt") == "auto"
        ladder = scenario_ladder(name)
        rels = [lighthill_residual(tr, i).l2_rel for tr, i in ladder]
        order = order_in_dt(ladder, rels)
        ok &= rels[-1] < BORN_TOL and order >= BORN_ORDER
        parts.append(f"{name} rel={rels[-1]:.1e} order={order:.2f}")
    verdict(capsys, 1, ok, f"N={LADDER[-1]} rel < {BORN_TOL:g}, order(dt) >= {BORN_ORDER}: " + "; ".join(parts))


def test_02_sign_audit(capsys, run_dir):
    parts, ok = [], True
    for name in ("gaussian_free", "dark_soliton"):
        ladder = scenario_ladder(name)
        printed = [lighthill_residual(tr, i, LighthillConfig(convention=PRINTED)).l2_rel for tr, i in ladder]
        audited = [lighthill_residual(tr, i).l2_rel for tr, i in ladder]
        ok &= min(printed) > 0.1 and printed[-1] > 0.5 * printed[0] and audited[-1] < audited[0] / 4
        parts.append(f"{name} printed={printed[-1]:.2f} audited={audited[-1]:.1e}")
    cfgs = [resolve_config(n) for n in ("gaussian_free", "dark_soliton", "harmonic_ground")]
    a = audit_signs(cfgs, run_dir / "audit_a")
    b = audit_signs(cfgs, run_dir / "audit_b")
    same = all((run_dir / "audit_a" / f).read_bytes() == (run_dir / "audit_b" / f).read_bytes()
               for f in ("audit.txt", "audit.csv"))
    picked = (a.s_pi, a.s_g, a.potential_form)
    ok &= same and picked == (b.s_pi, b.s_g, b.potential_form) == (1, -1, "dipole")
    verdict(capsys, 2, ok, "; ".join(parts) + f"; audit (s_pi, s_g, form) = {picked}, repeat identical={same}")


def test_03_reference_speed(capsys):
    worst = 0.0
    for name in BORN_PRESETS:
        traj, i = scenario_ladder(name)[-1]
        worst = max(worst, c0_independence_check(traj, i, [0.5, 1.0, 2.0]).max_difference)
    verdict(capsys, 3, worst < C0_TOL, f"max pointwise spread over c0 in {{0.5, 1, 2}} = {worst:.1e} < {C0_TOL:g}")


def test_04_homogeneity(capsys):
    cfg = resolve_config("gaussian_free")
    assert cfg.physics().coupling == 0.0
    traj, i = scenario_ladder("gaussian_free")[-1]
    w = 2 * np.exp(1j * np.pi / 3)
    scaled = run_gpe(cfg, LADDER[-1], traj.dt, psi0=w * traj.psi[0])
    n1, n2 = np.abs(traj.psi[i]) ** 2, np.abs(scaled.psi[i]) ** 2
    dn = float(np.max(np.abs(n2 - 4 * n1)) / (4 * n1.max()))
    r1, r2 = lighthill_residual(traj, i).field, lighthill_residual(scaled, i).field
    # measured against the largest summand of the discrete residual (five-point d^2/dt^2 stencil)
    summand = (64 / 12) * n1.max() / traj.snapshot_dt**2
    dr = float(np.max(np.abs(r2 - 4 * r1)) / (4 * summand))
    ok = dn < HOMOGENEITY_TOL and dr < HOMOGENEITY_TOL
    verdict(capsys, 4, ok, f"|w|^2 scaling: density {dn:.1e}, residual {dr:.1e} (< {HOMOGENEITY_TOL:g})")


def test_05_non_superposability(capsys):
    cfg = resolve_config("gaussian_free")
    rels = []
    for traj, i in scenario_ladder("gaussian_free"):
        a, b = superposition_pair(cfg, traj.grid.points[0], traj.dt)
        rels.append(superposed_residual([a, b], i).l2_rel)
    ok = min(rels) > SUPERPOSITION_MIN
    verdict(capsys, 5, ok, f"residual / dominant term over N={LADDER}: " + ", ".join(f"{r:.2f}" for r in rels)
            + f" (> {SUPERPOSITION_MIN})")


def test_06_bogoliubov(capsys, run_dir):
    res = scenario_run("bogoliubov_uniform", run_dir)
    disp, tan = checks_of(res, "dispersion")[""], checks_of(res, "tangent")[""]
    kxi = disp.detail["k_xi"]
    ratios = tan.detail["ratios"]
    ok = (disp.value < DISPERSION_TOL and len(kxi) >= DISPERSION_COUNT
          and min(kxi) <= KXI_SPAN[0] + 1e-9 and max(kxi) >= KXI_SPAN[1] - 1e-9
          and all(abs(r - TANGENT_RATIO) < TANGENT_SPREAD for r in ratios))
    verdict(capsys, 6, ok, f"{len(kxi)} modes k xi in [{min(kxi):.2f}, {max(kxi):.2f}], max rel err "
            f"{disp.value:.1e} (< {DISPERSION_TOL:g}); tangent ratios " + ", ".join(f"{r:.3f}" for r in ratios))


def test_07_integral_solution(capsys, run_dir):
    cfg = resolve_config("manufactured_source_3d")
    assert cfg.get("integral", "source_points") == 32
    res = scenario_run("manufactured_source_3d", run_dir)
    by = checks_of(res, "integral")
    ret, adv = by["retarded"].value, by["advanced"].value
    ok = ret < INTEGRAL_TOL and adv < INTEGRAL_TOL
    verdict(capsys, 7, ok, f"32^3 source, rel L2 vs leapfrog oracle: retarded {ret:.1e}, advanced (mirrored) "
            f"{adv:.1e} (< {INTEGRAL_TOL:g})")


def test_08_two_time(capsys, run_dir):
    cfg = resolve_config("two_time_demo")
    assert cfg.grid().points == (128,)
    c = checks_of(scenario_run("two_time_demo", run_dir), "two_time")[""]
    slices = c.detail["slices"]
    ok = c.value < TWO_TIME_TOL and slices == 256
    verdict(capsys, 8, ok, f"N=128, {slices} slices, {c.detail['solver']}: rel L2 recovery {c.value:.1e} "
            f"(< {TWO_TIME_TOL:g})")


def test_09_circulation(capsys, run_dir):
    scenario_run("vortex2d", run_dir)
    rows = read_table(run_dir / "vortex2d" / "reports" / "circulation.csv")
    ok, parts = True, []
    for r in rows:
        q, value = int(r["charge"]), float(r["value"])
        if q == 0:
            ok &= abs(value) < CIRC_ABS
            parts.append(f"l=0 |G|={abs(value):.1e}")
        else:
            rel = abs(value - 2 * np.pi * q) / (2 * np.pi * abs(q))
            ok &= rel < CIRC_REL
            parts.append(f"l={q} rel={rel:.1e}")
    ok &= sorted(int(r["charge"]) for r in rows) == [0, 1, 2]
    verdict(capsys, 9, ok, "; ".join(parts) + f" (rel < {CIRC_REL:g}, abs < {CIRC_ABS:g})")


def test_10_conservation(capsys):
    ok, worst_n, worst_e, names = True, 0.0, 0.0, []
    for name in bundled_scenarios():
        cfg = resolve_config(name)
        if not cfg.has_gpe:
            continue
        traj = run_gpe(cfg)
        steps = (len(traj) - 1) * traj.stride
        nd = float(np.max(np.abs(traj.norm - traj.norm[0])) / traj.norm[0] * 1000 / steps)
        worst_n = max(worst_n, nd)
        ok &= nd < NORM_DRIFT
        if traj.potential.is_static:
            ed = float(np.max(np.abs(traj.energy - traj.energy[0])) / abs(traj.energy[0]))
            worst_e = max(worst_e, ed)
            ok &= ed < ENERGY_DRIFT
        names.append(name)
    verdict(capsys, 10, ok, f"{len(names)} GPE scenarios: worst norm drift/1000 steps {worst_n:.1e} "
            f"(< {NORM_DRIFT:g}), worst energy drift {worst_e:.1e} (< {ENERGY_DRIFT:g})")
