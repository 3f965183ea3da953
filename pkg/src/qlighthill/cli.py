"""Command-line front end.

    qlighthill run         --config FILE [--out DIR] [--threads N] [--seed N]
    qlighthill converge    --config FILE [--out DIR] [--ladder 64,128,256]
    qlighthill audit-signs [--config FILE ...] [--out DIR]
    qlighthill plot-data   --out RUN_DIR | CSV ...
    qlighthill validate    --config FILE

Exit codes: 0 pass, 1 check failure, 2 configuration error, 3 numerical abort.
"""

from __future__ import annotations

import argparse
import logging
import sys
from importlib import resources
from pathlib import Path

from .config import ConfigError, load_config, parse_config
from .gpe import NumericalAbort
from .hydro import AmbiguousAudit
from .runner import (EXIT_ABORT, EXIT_CONFIG, EXIT_FAIL, EXIT_PASS, audit_signs, convergence_report,
                     emit_plot_data, run_scenario)

AUDIT_SCENARIOS = ("gaussian_free", "dark_soliton", "harmonic_ground")


def bundled_scenarios() -> list[str]:
    root = resources.files("qlighthill") / "scenarios"
    return sorted(p.name[:-4] for p in root.iterdir() if p.name.endswith(".ini"))


def resolve_config(name_or_path: str):
    """A path to an INI file, or the name of a bundled scenario."""
    path = Path(name_or_path)
    if path.exists():
        return load_config(path)
    res = resources.files("qlighthill") / "scenarios" / f"{name_or_path}.ini"
    if res.is_file():
        return parse_config(res.read_text(), str(res))
    raise ConfigError([f"no config file or bundled scenario named {name_or_path!r} "
                       f"(bundled: {', '.join(bundled_scenarios())})"])


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="qlighthill", description=__doc__.split("\n\n")[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="verb", required=True)

    def common(sp, config_required=True):
        sp.add_argument("--config", required=config_required, action="append" if not config_required else None,
                        help="scenario INI file or bundled scenario name")
        sp.add_argument("--out", default=None, help="output directory")
        sp.add_argument("--threads", type=int, default=1)
        sp.add_argument("--seed", type=int, default=0)

    common(sub.add_parser("run", help="run a scenario and its checks"))
    cv = sub.add_parser("converge", help="refinement study with fitted orders")
    common(cv)
    cv.add_argument("--ladder", default=None, help="comma-separated grid sizes, e.g. 64,128,256")
    common(sub.add_parser("audit-signs", help="determine the momentum-equation signs"), config_required=False)
    pd = sub.add_parser("plot-data", help="gnuplot data and scripts for report CSVs")
    pd.add_argument("--out", default=None, help="run directory whose reports/ to convert")
    pd.add_argument("csv", nargs="*", help="individual report CSVs")
    pd.add_argument("--config", default=None, help=argparse.SUPPRESS)
    pd.add_argument("--threads", type=int, default=1, help=argparse.SUPPRESS)
    pd.add_argument("--seed", type=int, default=0, help=argparse.SUPPRESS)
    sub.add_parser("validate", help="check a config file and list every problem").add_argument(
        "--config", required=True)
    sub.add_parser("list", help="list bundled scenarios")
    return p


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return _dispatch(args)
    except ConfigError as exc:
        print(exc, file=sys.stderr)
        return EXIT_CONFIG
    except NumericalAbort as exc:
        print(exc, file=sys.stderr)
        return EXIT_ABORT


def _dispatch(args) -> int:
    if args.verb == "list":
        print("\n".join(bundled_scenarios()))
        return EXIT_PASS
    if args.verb == "validate":
        cfg = resolve_config(args.config)
        print(f"{cfg.name}: ok ({', '.join(cfg.checks)})")
        return EXIT_PASS
    if args.verb == "run":
        cfg = resolve_config(args.config)
        out = Path(args.out or f"runs/{cfg.name}")
        result = run_scenario(cfg, out, args.threads, args.seed)
        for c in result.checks:
            verdict = "PASS" if c.passed else ("XFAIL" if c.expected_fail else "FAIL")
            label = f"{c.name}[{c.convention}]" if c.convention else c.name
            line = f"{verdict:5s} {label:28s} {c.metric} = {c.value:.3e} ({c.comparison} {c.tolerance:g})"
            floor = c.detail.get("abs_floor")
            if c.passed and floor is not None and not c.value < c.tolerance:
                line += f" via abs floor: L2_abs = {c.detail['max_L2_abs']:.2e} < {floor:g}"
            print(line)
        if result.abort:
            print(result.abort, file=sys.stderr)
        print(f"artifacts: {out}")
        return result.status
    if args.verb == "converge":
        cfg = resolve_config(args.config)
        ladder = [int(v) for v in args.ladder.split(",")] if args.ladder else None
        out = Path(args.out or f"runs/{cfg.name}_convergence")
        res = convergence_report(cfg, ladder, out, args.threads)
        for o in res.orders:
            order = f"{o['order_dt']:.2f}" if o["status"] == "fit" else o["status"]
            label = f"{o['check']}[{o['convention']}]" if o["convention"] else o["check"]
            print(f"{label:28s} order(dt) = {order:>8s}  finest L2_rel = {o['finest_L2_rel']:.3e}")
        print(f"artifacts: {res.csv}, {res.orders_csv}")
        return EXIT_PASS
    if args.verb == "audit-signs":
        names = args.config or list(AUDIT_SCENARIOS)
        cfgs = [resolve_config(n) for n in names]
        out = Path(args.out or "runs/audit")
        try:
            result = audit_signs(cfgs, out, threads=args.threads)
        except AmbiguousAudit as exc:
            print(f"audit inconclusive: {exc}", file=sys.stderr)
            return EXIT_FAIL
        print(result.note, end="")
        return EXIT_PASS
    if args.verb == "plot-data":
        paths = [Path(p) for p in args.csv]
        if args.out:
            paths += sorted((Path(args.out) / "reports").glob("*.csv"))
        if not paths:
            raise ConfigError(["plot-data needs --out RUN_DIR or at least one CSV path"])
        for p in paths:
            dest = p.parent.parent / "plots" if p.parent.name == "reports" else p.parent
            dat, gp = emit_plot_data(p, dest)
            print(f"{dat}  {gp}")
        return EXIT_PASS
    raise AssertionError(args.verb)


if __name__ == "__main__":
    sys.exit(main())
