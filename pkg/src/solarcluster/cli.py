"""Command-line front end: ``solarcluster {autonomy,recharge,simulate,plan,sweep}``."""

from __future__ import annotations

import argparse
import csv
import io
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path
from typing import Sequence

from . import cluster
from .energy import autonomy_hours, implied_efficiency, recharge_time_per_hour
from .scenario import (
    SWEEP_PARAMETERS,
    Scenario,
    ScenarioError,
    apply_sweep_value,
    default_scenario,
    load_scenario,
)
from .scheduler import (
    BRUTE_FORCE_MAX_NODES,
    BRUTE_FORCE_MAX_SERVICES,
    brute_force_place,
    format_placement,
    plan,
)

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_IO = 3


class OutputError(OSError):
    pass


def _table(header: Sequence[str], rows: Sequence[Sequence[str]]) -> str:
    widths = [max(len(str(r[i])) for r in [header, *rows]) for i in range(len(header))]
    sep = "+" + "+".join("-" * (w + 2) for w in widths) + "+"
    fmt = lambda r: "| " + " | ".join(str(c).ljust(w) for c, w in zip(r, widths)) + " |"
    return "\n".join([sep, fmt(header), sep, *map(fmt, rows), sep])


def _current(a: float) -> str:
    return f"{a:.3g} A"


def autonomy_rows(scenario: Scenario) -> list[tuple[str, float, float, float]]:
    """(label, 5 V current, bus power, autonomy hours) per load row."""
    out = []
    for row in scenario.loads:
        current, _, bus_w = scenario.load_bus_power(row)
        out.append((row.name, current, bus_w, autonomy_hours(scenario.battery, bus_w)))
    return out


def recharge_rows(scenario: Scenario) -> list[tuple[str, float, float, float]]:
    """(label, 5 V current, bus power, recharge hours) per load row."""
    charge_w = scenario.charging.effective_charge_w
    if charge_w is None:
        raise ScenarioError(
            "charging.effective_charge_w",
            "recharge times need an effective charge power; set charging.effective_charge_w "
            "(watts reaching the battery) in the scenario file",
        )
    out = []
    for row in scenario.loads:
        current, _, bus_w = scenario.load_bus_power(row)
        out.append((row.name, current, bus_w, recharge_time_per_hour(bus_w, charge_w)))
    return out


def cmd_autonomy(scenario: Scenario) -> str:
    """Autonomy table plus a chain audit of the converter efficiency each row implies."""
    batt = scenario.battery
    rows = [[name, _current(a), f"{w:.1f} W", f"{h:.0f} h"] for name, a, w, h in autonomy_rows(scenario)]
    audit = []
    for row in scenario.loads:
        _, out_w, bus_w = scenario.load_bus_power(row)
        source = "pinned" if row.bus_w is not None else "derived"
        audit.append(f"  {row.name}: {out_w:.3f} W @5V -> {bus_w:.3f} W @12V ({source}), "
                     f"implied converter efficiency {implied_efficiency(out_w, bus_w):.1%}")
    head = (f"Battery {batt.capacity_ah:g} Ah @ {batt.nominal_voltage:g} V, usable fraction "
            f"{batt.usable_fraction:g} ({batt.usable_wh:g} Wh), {len(scenario.nodes)} nodes")
    table = _table(["Load", "Current (A @ 5VDC)", "Power (W @ 12V)", "Autonomy (Hours)"], rows)
    return "\n".join([head, table, "Chain audit:", *audit])


def cmd_recharge(scenario: Scenario) -> str:
    rows = [[name, _current(a), f"{w:.1f} W", f"{h:.3f} h"] for name, a, w, h in recharge_rows(scenario)]
    charge_w = scenario.charging.effective_charge_w
    head = (f"Effective charge power {charge_w:g} W (fitted to the reference recharge table, "
            "not a measured value); hours of charging per hour of consumption")
    table = _table(["Load", "Current (A @ 5VDC)", "Power (W @ 12V)", "Recharge Time (Hours)"], rows)
    return f"{head}\n{table}"


def _prepare_out(out_dir: Path) -> None:
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OutputError(f"cannot create output directory {out_dir}: {exc.strerror}") from None


def _write(path: Path, text: str) -> None:
    try:
        path.write_text(text)
    except OSError as exc:
        raise OutputError(f"cannot write {path}: {exc.strerror}") from None


def _fmt_h(v: float | None) -> str:
    return "none" if v is None else f"{v:.2f} h"


def cmd_simulate(scenario: Scenario, out_dir: str | Path) -> int:
    """Run, write ``trace.csv``, ``summary.json`` and ``availability.csv``, print headline metrics."""
    out = Path(out_dir)
    _prepare_out(out)
    trace, metrics = cluster.run(scenario)
    _write(out / "trace.csv", cluster.format_trace(trace))
    _write(out / "summary.json", cluster.format_summary(metrics))
    avail = io.StringIO()
    w = csv.writer(avail, lineterminator="\n")
    w.writerow(["service", "availability"])
    for name, frac in metrics.availability.items():
        w.writerow([name, repr(frac)])
    _write(out / "availability.csv", avail.getvalue())

    print(f"simulated {metrics.duration_h:g} h in {metrics.steps} steps of {metrics.dt_h:g} h")
    print(f"min SoC: {metrics.min_soc_wh:.1f} Wh ({metrics.min_soc_fraction:.1%})")
    print(f"first outage: {_fmt_h(metrics.first_outage_h)}; full outage: {_fmt_h(metrics.full_outage_h)}")
    for name, frac in metrics.availability.items():
        print(f"  {name}: availability {frac:.4f}")
    print(f"energy: harvested {metrics.harvested_wh:.1f} Wh, consumed {metrics.consumed_wh:.1f} Wh, "
          f"deficit {metrics.deficit_wh:.3f} Wh, ledger error {metrics.ledger_relative_error:.1e}")
    print(f"wrote {out / 'trace.csv'}, {out / 'summary.json'}, {out / 'availability.csv'}")
    return EXIT_OK


def cmd_plan(scenario: Scenario, oracle: bool = False) -> str:
    problem = scenario.problem()
    placement = plan(problem)
    lines = [format_placement(problem, placement)]
    if placement.objective_w > 0:
        hours = autonomy_hours(scenario.battery, placement.objective_w)
        lines.append(f"projected autonomy at this load: {hours:.1f} h")
    else:
        lines.append("projected autonomy at this load: unbounded (no load)")
    if oracle:
        n_nodes = len(problem.eligible)
        if len(problem.services) > BRUTE_FORCE_MAX_SERVICES or n_nodes > BRUTE_FORCE_MAX_NODES:
            lines.append(f"oracle: skipped, instance exceeds {BRUTE_FORCE_MAX_SERVICES} services / "
                         f"{BRUTE_FORCE_MAX_NODES} nodes")
        else:
            best = brute_force_place(problem)
            gap = placement.objective_w - best.objective_w
            lines.append(f"oracle objective: {best.objective_w:.3f} W @12V; "
                         f"heuristic objective: {placement.objective_w:.3f} W @12V; gap {gap:.3f} W")
    return "\n".join(lines)


SWEEP_COLUMNS = (
    "first_outage_h", "full_outage_h", "min_soc_wh", "downtime_h",
    "harvested_wh", "consumed_wh", "spilled_wh", "deficit_wh", "min_availability",
)


def _sweep_point(args: tuple[Scenario, str, str]) -> list[str]:
    scenario, param, value = args
    _, m = cluster.run(apply_sweep_value(scenario, param, value))
    d = m.to_dict()
    d["min_availability"] = min(m.availability.values()) if m.availability else 1.0
    return [value] + ["" if d[c] is None else repr(d[c]) for c in SWEEP_COLUMNS]


def cmd_sweep(scenario: Scenario, param: str, values: Sequence[str], out_dir: str | Path,
              jobs: int = 1) -> Path:
    """One simulation per value; rows are written in the order the values were given."""
    for v in values:
        apply_sweep_value(scenario, param, v)
    out = Path(out_dir)
    _prepare_out(out)
    work = [(scenario, param, v) for v in values]
    if jobs > 1 and len(work) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_sweep_point, work))
    else:
        rows = [_sweep_point(w) for w in work]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([param, *SWEEP_COLUMNS])
    w.writerows(rows)
    path = out / "sweep.csv"
    _write(path, buf.getvalue())
    return path


def _common(parser: argparse.ArgumentParser, suppress: bool) -> None:
    d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    parser.add_argument("--scenario", default=d(None), help="scenario YAML file (default: built-in defaults)")
    parser.add_argument("--out", default=d("out"), help="output directory for simulate/sweep")
    parser.add_argument("--seed", type=int, default=d(None), help="override sim.seed")
    parser.add_argument("--dt", type=float, default=d(None), help="override sim.dt (hours)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="solarcluster", description=__doc__)
    _common(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_ in [
        ("autonomy", "battery autonomy table"),
        ("recharge", "recharge-time table"),
        ("simulate", "run the time-stepped simulation"),
    ]:
        _common(sub.add_parser(name, help=help_), suppress=True)
    p = sub.add_parser("plan", help="place the service catalog onto nodes")
    _common(p, suppress=True)
    p.add_argument("--oracle", action="store_true", help="also run the exhaustive search")
    p = sub.add_parser("sweep", help="simulate over a grid of one parameter")
    _common(p, suppress=True)
    p.add_argument("--param", required=True,
                   help="one of: " + ", ".join(f"{k} ({v[0]})" for k, v in SWEEP_PARAMETERS.items()))
    p.add_argument("--values", required=True, help="comma-separated grid values")
    p.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
    return parser


def load_with_overrides(path: str | None, seed: int | None = None, dt: float | None = None) -> Scenario:
    scenario = default_scenario() if path is None else load_scenario(path)
    sim = scenario.sim
    if seed is not None:
        sim = replace(sim, seed=seed)
    if dt is not None:
        try:
            sim = replace(sim, dt=dt)
        except ValueError as exc:
            raise ScenarioError("sim.dt", str(exc)) from None
    return replace(scenario, sim=sim).validate()


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        scenario = load_with_overrides(args.scenario, args.seed, args.dt)
        if args.command == "autonomy":
            print(cmd_autonomy(scenario))
        elif args.command == "recharge":
            print(cmd_recharge(scenario))
        elif args.command == "simulate":
            return cmd_simulate(scenario, args.out)
        elif args.command == "plan":
            print(cmd_plan(scenario, oracle=args.oracle))
        elif args.command == "sweep":
            values = [v.strip() for v in args.values.split(",") if v.strip()]
            path = cmd_sweep(scenario, args.param, values, args.out, args.jobs)
            print(path.read_text(), end="")
            print(f"wrote {path}")
    except (OutputError, FileNotFoundError, PermissionError, IsADirectoryError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
