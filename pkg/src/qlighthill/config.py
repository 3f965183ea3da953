"""Scenario files: INI sections with a fixed key set.

Grammar: ``configparser`` INI (``key = value``, ``;``/``#`` comments).
Lists are comma separated. Unknown sections or keys are errors, and
validation reports every problem at once rather than stopping at the first.

Sections::

    [scenario]    name, description, checks
    [grid]        dim, extents, points, origin
    [physics]     hbar, mass, coupling, charge
    [potential]   kind, omega, expression, table, time_scale
    [initial]     preset plus that preset's parameters
    [run]         t_end, dt, snapshot_stride, check_times, norm_tol
    [lighthill]   c0, convention, density_floor, kernel, mixing, c0_list, scale
    [tolerances]  one key per check (see DEFAULT_TOLERANCES)
    [convergence] ladder
    [dispersion]  n0, modes, periods, mode, dt
    [tangent]     n0, epsilons, t_end, dt, modes
    [circulation] charges, radius, vertices, interpolation
    [superposition] offset, boost, sigma
    [integral]    source_points, source_extent, sigma, pulse_center, pulse_width,
                  history_dt, oracle_points, oracle_dt, radius, window, static_ramp
    [two_time]    steps, dt, n0, width, amplitude, mode
    [output]      fields
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .gpe import PRESETS, PhysicsParams, PotentialSpec
from .grid import GridSpec, grid_problems, make_grid
from .hydro import CONVENTIONS
from .lighthill import KERNELS, LighthillConfig

GPE_CHECKS = ("continuity", "euler", "momentum", "lighthill", "conservation", "c0_independence",
              "homogeneity", "superposition")
OTHER_CHECKS = ("dispersion", "tangent", "circulation", "integral", "two_time")
CHECKS = GPE_CHECKS + OTHER_CHECKS

DEFAULT_TOLERANCES = {
    "continuity": 1e-5,
    "euler": 1e-5,
    "momentum": 1e-5,
    "lighthill": 1e-5,
    "residual_floor": 1e-10,  # absolute L2 below which a residual counts as zero
    "norm_drift": 1e-12,  # relative, per 1000 steps
    "energy_drift": 1e-8,
    "c0_independence": 1e-12,
    "homogeneity": 1e-12,
    "superposition": 0.1,  # lower bound on residual / dominant source term
    "dispersion": 5e-3,
    "tangent_ratio": 2.0,
    "tangent_ratio_tol": 0.4,
    "circulation_rel": 1e-6,
    "circulation_abs": 1e-10,
    "integral": 0.05,
    "integral_static": 0.02,
    "two_time": 1e-6,
}

PRESET_KEYS = {
    "plane_wave": {"k": "floats", "amplitude": "float"},
    "gaussian": {"sigma": "float", "center": "floats", "boost": "floats"},
    "harmonic_ground": {"omega": "floats"},
    "dark_soliton": {"n_inf": "float", "position": "float"},
    "bright_soliton": {"n_peak": "float", "position": "float"},
    "vortex": {"charge": "int", "core": "float", "center": "floats", "amplitude": "float",
               "envelope": "floats"},
    "uniform": {"amplitude": "float"},
}

# section -> key -> (kind, default); default None means optional without value,
# the marker REQUIRED means it must be given.
REQUIRED = object()
SCHEMA: dict[str, dict[str, tuple]] = {
    "scenario": {"name": ("str", REQUIRED), "description": ("str", ""), "checks": ("strs", REQUIRED)},
    "grid": {"dim": ("int", REQUIRED), "extents": ("floats", REQUIRED), "points": ("ints", REQUIRED),
             "origin": ("floats", None)},
    "physics": {"hbar": ("float", 1.0), "mass": ("float", 1.0), "coupling": ("float", 0.0),
                "charge": ("float", 0.0)},
    "potential": {"kind": ("str", "none"), "omega": ("floats", None), "expression": ("str", None),
                  "table": ("str", None), "time_scale": ("str", None)},
    "initial": {"preset": ("str", REQUIRED)},
    "run": {"t_end": ("float", REQUIRED), "dt": ("auto_float", "auto"), "snapshot_stride": ("int", 4),
            "check_times": ("floats", None), "norm_tol": ("float", 1e-8)},
    "lighthill": {"c0": ("float", 1.0), "convention": ("str", "audited"), "density_floor": ("float", 1e-8),
                  "kernel": ("str", "retarded"), "mixing": ("float", 1.0), "c0_list": ("floats", [0.5, 1.0, 2.0]),
                  "scale": ("str", "2*exp(i*pi/3)")},
    "tolerances": {k: ("float", v) for k, v in DEFAULT_TOLERANCES.items()},
    "convergence": {"ladder": ("ints", [64, 128, 256])},
    "dispersion": {"n0": ("float", 1.0), "modes": ("ints", REQUIRED), "periods": ("float", 5.0),
                   "mode": ("str", "audited"), "dt": ("auto_float", "auto")},
    "tangent": {"n0": ("float", 1.0), "epsilons": ("floats", [0.02, 0.01, 0.005]), "t_end": ("float", 4.0),
                "dt": ("float", 1e-3), "modes": ("ints", [3, 5, 8])},
    "circulation": {"charges": ("ints", [0, 1, 2]), "radius": ("float", 3.0), "vertices": ("int", 64),
                    "interpolation": ("str", "spectral")},
    "superposition": {"offset": ("float", 1.0), "boost": ("float", 1.0), "sigma": ("float", 0.75)},
    "integral": {"source_points": ("int", 32), "source_extent": ("float", 16.0), "sigma": ("float", 1.0),
                 "pulse_center": ("float", 3.0), "pulse_width": ("float", 0.7), "history_dt": ("float", 0.05),
                 "oracle_points": ("int", 64), "oracle_dt": ("float", 0.02), "radius": ("float", 5.0),
                 "window": ("floats", [4.0, 14.0, 0.1]), "static_ramp": ("float", 2.0)},
    "two_time": {"steps": ("int", 255), "dt": ("float", 0.02), "n0": ("float", 1.0), "width": ("float", 1.0),
                 "amplitude": ("float", 0.1), "mode": ("str", "audited")},
    "output": {"fields": ("strs", ["psi", "density", "lighthill_residual"])},
}
FIELD_OUTPUTS = ("psi", "density", "lighthill_residual", "source_tensor")


class ConfigError(ValueError):
    def __init__(self, problems: list[str]):
        self.problems = list(problems)
        super().__init__("invalid configuration:\n" + "\n".join(f"  - {p}" for p in self.problems))


def _parse(kind: str, raw: str):
    raw = raw.strip()
    if kind == "str":
        return raw
    if kind == "strs":
        return [s.strip() for s in raw.split(",") if s.strip()]
    if kind == "int":
        return int(raw)
    if kind == "float":
        return float(raw)
    if kind == "auto_float":
        return "auto" if raw.lower() == "auto" else float(raw)
    if kind == "ints":
        return [int(s) for s in raw.split(",") if s.strip()]
    if kind == "floats":
        return [float(s) for s in raw.split(",") if s.strip()]
    raise AssertionError(kind)


@dataclass
class ScenarioConfig:
    name: str
    checks: list[str]
    sections: dict[str, dict]
    source: str = ""
    description: str = ""

    def get(self, section: str, key: str):
        return self.sections.get(section, {}).get(key, _default(section, key))

    def section(self, name: str) -> dict:
        out = {k: (None if d is REQUIRED else d) for k, (_, d) in SCHEMA.get(name, {}).items()}
        out.update(self.sections.get(name, {}))
        return out

    @property
    def tolerances(self) -> dict:
        return self.section("tolerances")

    @property
    def has_gpe(self) -> bool:
        return "initial" in self.sections

    def grid(self, points=None) -> GridSpec:
        g = self.sections["grid"]
        origin = g.get("origin")
        if origin is None:
            origin = [-e / 2 for e in _bcast(g["extents"], g["dim"])]
        pts = g["points"] if points is None else points
        return make_grid(g["dim"], _bcast(g["extents"], g["dim"]), _bcast(pts, g["dim"]), _bcast(origin, g["dim"]))

    def physics(self) -> PhysicsParams:
        p = self.section("physics")
        return PhysicsParams(p["hbar"], p["mass"], p["coupling"], p["charge"])

    def potential(self) -> PotentialSpec:
        p = self.section("potential")
        table = None
        if p["kind"] == "tabulated":
            path = Path(p["table"])
            if not path.is_absolute() and self.source:
                path = Path(self.source).parent / path
            table = np.load(path)
        omega = p["omega"]
        if omega is not None and len(omega) == 1:
            omega = omega[0]
        return PotentialSpec(p["kind"], omega, table, p["expression"], p["time_scale"])

    def preset(self) -> tuple[str, dict]:
        init = dict(self.sections["initial"])
        preset = init.pop("preset")
        kw = {}
        for k, v in init.items():
            if isinstance(v, list) and len(v) == 1 and k not in ("envelope",):
                v = v[0]
            kw[k] = v
        if "envelope" in kw:
            kw["envelope"] = tuple(kw["envelope"])
        return preset, kw

    def lighthill_configs(self) -> list[LighthillConfig]:
        s = self.section("lighthill")
        labels = list(CONVENTIONS) if s["convention"] == "both" else [s["convention"]]
        return [LighthillConfig(s["c0"], CONVENTIONS[lab], s["density_floor"], s["kernel"], s["mixing"])
                for lab in labels]


def _default(section, key):
    kind, d = SCHEMA[section][key]
    return None if d is REQUIRED else d


def _bcast(value, dim):
    value = list(value) if isinstance(value, (list, tuple)) else [value]
    return value * dim if len(value) == 1 else value


def parse_config(text: str, source: str = "") -> ScenarioConfig:
    """Parse and validate; raises :class:`ConfigError` listing every problem."""
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=(";", "#"))
    cp.optionxform = str
    problems: list[str] = []
    try:
        cp.read_string(text, source=source or "<string>")
    except configparser.Error as exc:
        raise ConfigError([f"syntax: {exc}"]) from None

    sections: dict[str, dict] = {}
    preset = cp.get("initial", "preset", fallback=None) if cp.has_section("initial") else None
    for sec in cp.sections():
        if sec not in SCHEMA:
            problems.append(f"[{sec}]: unknown section")
            continue
        allowed = dict(SCHEMA[sec])
        if sec == "initial" and preset in PRESET_KEYS:
            allowed.update({k: (kind, None) for k, kind in PRESET_KEYS[preset].items()})
        vals = {}
        for key, raw in cp.items(sec):
            if key not in allowed:
                problems.append(f"[{sec}] {key}: unknown key")
                continue
            kind = allowed[key][0]
            try:
                vals[key] = _parse(kind, raw)
            except ValueError:
                problems.append(f"[{sec}] {key}: cannot parse {raw!r} as {kind}")
        for key, (_, d) in SCHEMA[sec].items():
            if d is REQUIRED and key not in vals and not any(p.startswith(f"[{sec}] {key}:") for p in problems):
                problems.append(f"[{sec}] {key}: required")
        sections[sec] = vals

    for sec in ("scenario",):
        if sec not in sections:
            problems.append(f"[{sec}]: section missing")
    scen = sections.get("scenario", {})
    checks = scen.get("checks", [])
    if "checks" in scen and not checks:
        problems.append("[scenario] checks: list is empty")
    for c in checks:
        if c not in CHECKS:
            problems.append(f"[scenario] checks: unknown check {c!r} (choose from {', '.join(CHECKS)})")
    needs_gpe = [c for c in checks if c in GPE_CHECKS]
    if needs_gpe:
        for sec in ("grid", "initial", "run"):
            if sec not in sections:
                problems.append(f"[{sec}]: section missing (needed by checks {', '.join(needs_gpe)})")
    if "dispersion" in checks and "dispersion" not in sections:
        problems.append("[dispersion]: section missing (needed by check dispersion)")
    if "circulation" in checks and "grid" in sections and sections["grid"].get("dim", 2) < 2:
        problems.append("[grid] dim: circulation needs dim >= 2")
    if any(c in checks for c in ("tangent", "two_time", "circulation")) and "grid" not in sections:
        problems.append("[grid]: section missing")

    g = sections.get("grid", {})
    if {"dim", "extents", "points"} <= g.keys():
        dim = g["dim"]
        try:
            ext = _bcast(g["extents"], dim)
            pts = _bcast(g["points"], dim)
            org = _bcast(g.get("origin", [0.0]), dim)
            for p in grid_problems(dim, ext, pts, org):
                problems.append(f"[grid] {p}")
        except (TypeError, ValueError) as exc:
            problems.append(f"[grid] {exc}")
        ladder = sections.get("convergence", {}).get("ladder")
        if ladder is not None:
            problems += [f"[convergence] ladder: {p}" for p in ladder_problems(ladder)]

    if "initial" in sections and preset not in PRESETS:
        problems.append(f"[initial] preset: unknown preset {preset!r} (choose from {', '.join(PRESETS)})")

    phys = sections.get("physics", {})
    for key in ("hbar", "mass"):
        if key in phys and not phys[key] > 0:
            problems.append(f"[physics] {key}: must be positive")
    if phys.get("charge", 0.0) != 0:
        problems.append("[physics] charge: only 0 is supported")

    pot = sections.get("potential", {})
    kind = pot.get("kind", "none")
    if kind not in ("none", "harmonic", "tabulated", "expression"):
        problems.append(f"[potential] kind: unknown kind {kind!r}")
    if kind == "harmonic" and "omega" not in pot:
        problems.append("[potential] omega: required for harmonic potentials")
    if kind == "expression" and not pot.get("expression"):
        problems.append("[potential] expression: required for expression potentials")
    if kind == "tabulated" and not pot.get("table"):
        problems.append("[potential] table: required for tabulated potentials")

    run = sections.get("run", {})
    if "t_end" in run and not run["t_end"] > 0:
        problems.append("[run] t_end: must be positive")
    if isinstance(run.get("dt"), float) and not run["dt"] > 0:
        problems.append("[run] dt: must be positive or 'auto'")
    if run.get("snapshot_stride", 1) < 1:
        problems.append("[run] snapshot_stride: must be >= 1")
    if isinstance(run.get("dt"), float) and "t_end" in run:
        snaps = run["t_end"] / (run["dt"] * run.get("snapshot_stride", 4))
        if snaps < 4 and needs_gpe:
            problems.append("[run] dt: fewer than 5 snapshots; the time stencils need 2 on each side of a check time")

    lh = sections.get("lighthill", {})
    if lh.get("convention", "audited") not in (*CONVENTIONS, "both"):
        problems.append(f"[lighthill] convention: choose from {', '.join(CONVENTIONS)}, both")
    if lh.get("kernel", "retarded") not in KERNELS:
        problems.append(f"[lighthill] kernel: choose from {', '.join(KERNELS)}")
    if not 0 <= lh.get("mixing", 1.0) <= 1:
        problems.append("[lighthill] mixing: must lie in [0, 1]")
    if "c0" in lh and not lh["c0"] > 0:
        problems.append("[lighthill] c0: must be positive")
    if "c0_independence" in checks and len(lh.get("c0_list", [0.5, 1.0, 2.0])) < 2:
        problems.append("[lighthill] c0_list: needs at least two values")
    if "scale" in lh:
        try:
            parse_complex(lh["scale"])
        except ValueError as exc:
            problems.append(f"[lighthill] scale: {exc}")

    for sec in ("dispersion", "two_time"):
        mode = sections.get(sec, {}).get("mode", "audited")
        if mode not in ("audited", "frozen_velocity"):
            problems.append(f"[{sec}] mode: choose from audited, frozen_velocity")
    circ = sections.get("circulation", {})
    if circ.get("interpolation", "spectral") not in ("spectral", "bilinear"):
        problems.append("[circulation] interpolation: choose from spectral, bilinear")
    for f in sections.get("output", {}).get("fields", []):
        if f not in FIELD_OUTPUTS:
            problems.append(f"[output] fields: unknown field {f!r} (choose from {', '.join(FIELD_OUTPUTS)})")
    win = sections.get("integral", {}).get("window")
    if win is not None and (len(win) != 3 or not win[0] < win[1] or not win[2] > 0):
        problems.append("[integral] window: expected start, end, step with start < end and step > 0")

    if problems:
        raise ConfigError(problems)
    return ScenarioConfig(scen["name"], checks, sections, source, scen.get("description", ""))


def parse_complex(text: str) -> complex:
    """Complex number from a small expression such as ``2*exp(i*pi/3)``."""
    import sympy

    try:
        val = complex(sympy.sympify(text, locals={"i": sympy.I, "I": sympy.I}).evalf())
    except (sympy.SympifyError, TypeError) as exc:
        raise ValueError(f"cannot evaluate {text!r} as a complex number") from exc
    return val


def ladder_problems(ladder) -> list[str]:
    out = []
    if len(ladder) < 3:
        out.append("needs at least 3 resolutions")
    if any(b <= a for a, b in zip(ladder, ladder[1:])):
        out.append("resolutions must increase strictly")
    return out


def load_config(path: str | Path) -> ScenarioConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError([f"cannot read {path}: {exc}"]) from None
    return parse_config(text, str(path))
