"""Acceptance gate: one test per criterion, each recording a PASS/FAIL line.

Run with ``pytest -m acceptance``; the lines are repeated in the terminal summary.
"""

import random
import time
from pathlib import Path

import pytest

from acceptance_log import record
from instances import random_problem, random_scenario
from solarcluster import cluster
from solarcluster.cli import autonomy_rows, main, recharge_rows
from solarcluster.energy import (
    FITTED_EFFECTIVE_CHARGE_W,
    IDLE,
    MAX,
    MODERATE,
    Battery,
    NodePowerProfile,
    autonomy_hours,
    node_power,
)
from solarcluster.scenario import constant_load_scenario, default_scenario
from solarcluster.scheduler import OBJECTIVE_ATOL, brute_force_place, plan

pytestmark = pytest.mark.acceptance

SCENARIOS = Path(__file__).resolve().parent.parent / "scenarios"
BUS_LOADS = (7.0, 12.0, 18.5)


def test_autonomy_table():
    start = time.perf_counter()
    rows = autonomy_rows(default_scenario())
    elapsed = time.perf_counter() - start
    hours = [h for *_, h in rows]
    loads = [w for _, _, w, _ in rows]
    ok = (loads == list(BUS_LOADS)
          and all(abs(h - ref) <= 1.0 for h, ref in zip(hours, (154, 90, 58)))
          and elapsed < 1.0)
    record(1, "autonomy table", ok,
           f"hours {[round(h, 2) for h in hours]} vs [154, 90, 58] +-1 h, {elapsed * 1e3:.2f} ms")
    assert ok


def test_recharge_table():
    ref = (0.196, 0.336, 0.519)
    # Fit hours = load / P by least squares in 1/P, independently of the package.
    inv_p = sum(l * h for l, h in zip(BUS_LOADS, ref)) / sum(l * l for l in BUS_LOADS)
    fitted = 1.0 / inv_p
    start = time.perf_counter()
    rows = recharge_rows(default_scenario())
    elapsed = time.perf_counter() - start
    hours = [h for *_, h in rows]
    rel = [abs(h - r) / r for h, r in zip(hours, ref)]
    ok = abs(fitted - FITTED_EFFECTIVE_CHARGE_W) < 0.01 and max(rel) <= 0.02 and elapsed < 1.0
    record(2, "recharge table", ok,
           f"fit {fitted:.4f} W (default {FITTED_EFFECTIVE_CHARGE_W} W), hours "
           f"{[round(h, 4) for h in hours]}, max rel err {max(rel):.2%}, {elapsed * 1e3:.2f} ms")
    assert ok


def test_node_power_exact():
    p = NodePowerProfile()
    got = [node_power(p, lvl) for lvl in (IDLE, MODERATE, MAX)]
    ok = got == [1.30, 2.40, 3.65]
    record(3, "node power", ok, f"{got} W from 260/480/730 mA at 5 V")
    assert ok


def test_prose_autonomy_days():
    b = Battery()
    heavy = autonomy_hours(b, 18.5) / 24
    light = autonomy_hours(b, 7.0) / 24
    ok = 2.3 <= heavy <= 2.6 and light > 6
    record(4, "autonomy in days", ok, f"18.5 W -> {heavy:.3f} d, 7.0 W -> {light:.3f} d")
    assert ok


def test_dark_runs_match_closed_form():
    dts = (0.1, 0.05, 0.025)
    ok, parts = True, []
    for level, bus in zip(("idle", "moderate", "max"), BUS_LOADS):
        closed = Battery().usable_wh / bus
        errors = []
        for dt in dts:
            _, m = cluster.run(constant_load_scenario(level, bus, duration=160.0, dt=dt))
            err = abs(m.first_outage_h - closed) if m.first_outage_h is not None else float("inf")
            errors.append(err)
            ok &= err <= dt
        ok &= all(fine <= coarse + 1e-9 for coarse, fine in zip(errors, errors[1:]))
        parts.append(f"{bus} W: " + "/".join(f"{e:.4f}" for e in errors))
    record(5, "dark-sky outage", ok, f"|error| h at dt {dts}: " + "; ".join(parts))
    assert ok


def test_energy_ledger():
    rng = random.Random(20251016)
    start = time.perf_counter()
    worst = 0.0
    for _ in range(1000):
        _, m = cluster.run(random_scenario(rng))
        worst = max(worst, m.ledger_relative_error)
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-6 and elapsed < 60.0
    record(6, "energy ledger", ok, f"1000 scenarios, max rel err {worst:.2e}, {elapsed:.1f} s")
    assert ok


def test_scheduler_oracle():
    rng = random.Random(20251016)
    n, matched, dominated = 300, 0, True
    for _ in range(n):
        p = random_problem(rng)
        best, heur = brute_force_place(p).objective_w, plan(p).objective_w
        dominated &= best <= heur + OBJECTIVE_ATOL
        matched += heur <= best + OBJECTIVE_ATOL
    rate = matched / n
    ok = dominated and rate >= 0.70
    record(7, "scheduler oracle", ok,
           f"{n} instances, brute <= heuristic always: {dominated}, match rate {rate:.1%} (floor 70%)")
    assert ok


def test_determinism(tmp_path):
    scenario = str(SCENARIOS / "cloudy.yaml")
    files = {}
    for run in ("a", "b"):
        sim_dir, sweep_dir = tmp_path / run / "sim", tmp_path / run / "sweep"
        assert main(["--scenario", scenario, "--seed", "11", "simulate", "--out", str(sim_dir)]) == 0
        assert main(["--scenario", scenario, "--seed", "11", "sweep", "--param", "array_rating",
                     "--values", "10,20,40", "--out", str(sweep_dir)]) == 0
        files[run] = {p.relative_to(tmp_path / run): p.read_bytes()
                      for p in sorted((tmp_path / run).rglob("*")) if p.is_file()}
    ok = len(files["a"]) == 4 and files["a"] == files["b"]
    record(8, "determinism", ok, f"{len(files['a'])} output files byte-identical across two runs: "
                                 f"{files['a'] == files['b']}")
    assert ok
