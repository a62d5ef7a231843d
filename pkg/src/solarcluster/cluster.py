"""Discrete-time simulation of the solar / battery / cluster system.

Each step of length ``dt`` runs in a fixed order:

1. bus load of the powered nodes, each at the highest load level among its
   running services (never below idle);
2. charging power: solar through the controller clamp, then the optional
   grid backup, neither allowed to overfill the battery once this step's
   load is accounted for;
3. :func:`~solarcluster.energy.soc_step`;
4. the shedding/restart policy, which decides the running set of the *next*
   step from the state of charge at the end of this one.

Thresholds are fractions of the usable energy window, measured above the
battery's reserve (``capacity_wh - usable_wh``). Below the shutdown threshold
one service is shed per step; at or above the restart threshold one service
is restored per step, most recently shed first. A step that drains the
battery completely (deficit) sheds everything at once.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .energy import (
    IDLE,
    Battery,
    DcDcConverter,
    LoadLevel,
    NodePowerProfile,
    cluster_bus_power,
    node_power,
    soc_step,
)
from .solar import harvest

MASTER = "master"
WORKER = "worker"

# Slack for threshold comparisons, relative to battery capacity. Keeps an
# exact crossing from slipping a step on accumulated rounding.
_THRESHOLD_RTOL = 1e-9


@dataclass(frozen=True)
class Node:
    id: int
    role: str = WORKER
    profile: NodePowerProfile = field(default_factory=NodePowerProfile)
    cpu_millicores: int = 4000
    mem_mb: int = 1024 - 200
    powered: bool = True

    def __post_init__(self) -> None:
        if self.role not in (MASTER, WORKER):
            raise ValueError(f"node role must be 'master' or 'worker', got {self.role!r}")
        if self.cpu_millicores <= 0 or self.mem_mb <= 0:
            raise ValueError(f"node {self.id}: capacities must be positive")


@dataclass(frozen=True)
class ServiceSpec:
    name: str
    cpu_millicores: int
    mem_mb: int
    priority: int = 0
    load_contribution: LoadLevel = IDLE

    def __post_init__(self) -> None:
        if not self.name:
            raise ValueError("service name must be non-empty")
        if self.cpu_millicores <= 0 or self.mem_mb <= 0:
            raise ValueError(f"service {self.name!r}: cpu_millicores and mem_mb must be > 0")


@dataclass(frozen=True)
class SimConfig:
    dt: float = 0.05
    duration: float = 168.0
    shutdown_soc_fraction: float = 0.10
    restart_soc_fraction: float = 0.25
    seed: int = 0

    def __post_init__(self) -> None:
        if not self.dt > 0:
            raise ValueError("dt must be > 0")
        if not self.duration >= self.dt:
            raise ValueError("duration must be >= dt")
        if not 0 <= self.shutdown_soc_fraction < self.restart_soc_fraction <= 1:
            raise ValueError("need 0 <= shutdown_soc_fraction < restart_soc_fraction <= 1")

    @property
    def n_steps(self) -> int:
        return int(math.floor(self.duration / self.dt + 1e-9))


@dataclass(frozen=True)
class TraceRecord:
    """One step. ``t`` is the step start; ``soc_wh`` is the energy at its end;
    powers are averages over the step; ``services_up`` ran during it."""

    t: float
    soc_wh: float
    harvest_w: float
    load_w_bus: float
    nodes_on: int
    services_up: frozenset[str]
    spill_wh: float
    deficit_wh: float


TRACE_FIELDS = tuple(TraceRecord.__dataclass_fields__)


@dataclass(frozen=True)
class ClusterState:
    step_index: int
    battery: Battery
    running: frozenset[str]
    shed_stack: tuple[str, ...] = ()
    curtailed_wh: float = 0.0


@dataclass
class SummaryMetrics:
    steps: int
    dt_h: float
    duration_h: float
    min_soc_wh: float
    min_soc_fraction: float
    final_soc_wh: float
    first_outage_h: float | None
    full_outage_h: float | None
    downtime_h: float
    full_downtime_h: float
    availability: dict[str, float]
    harvested_wh: float
    consumed_wh: float
    spilled_wh: float
    deficit_wh: float
    curtailed_wh: float
    delta_soc_wh: float
    ledger_residual_wh: float
    ledger_relative_error: float

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d["availability"] = dict(sorted(self.availability.items()))
        return d


def shedding_order(services: Sequence[ServiceSpec], placement: Mapping[str, int],
                   nodes: Sequence[Node]) -> list[str]:
    """Services in the order they are shed: lowest priority first, worker-hosted
    before master-hosted at equal priority, then by name."""
    roles = {n.id: n.role for n in nodes}
    return [
        s.name
        for s in sorted(
            services,
            key=lambda s: (s.priority, roles[placement[s.name]] == MASTER, s.name),
        )
    ]


class Simulation:
    """Static inputs of one run with precomputed per-step charging power."""

    def __init__(
        self,
        battery: Battery,
        solar_w: np.ndarray,
        converter: DcDcConverter,
        nodes: Sequence[Node],
        services: Sequence[ServiceSpec],
        placement: Mapping[str, int],
        config: SimConfig,
        controller_limit_w: float,
        backup_w: float = 0.0,
        backup_limit_w: float = math.inf,
    ) -> None:
        self.battery = battery
        self.solar_w = [float(x) for x in np.asarray(solar_w, dtype=float)]
        self.converter = converter
        self.nodes = list(nodes)
        self.services = {s.name: s for s in services}
        self.placement = dict(placement)
        self.config = config
        self.controller_limit_w = controller_limit_w
        self.backup_w = backup_w
        self.backup_limit_w = backup_limit_w
        if len(self.solar_w) < config.n_steps:
            raise ValueError("solar series shorter than the simulation")
        missing = set(self.services) - set(self.placement)
        if missing:
            raise ValueError(f"services without a placement: {sorted(missing)}")
        node_ids = {n.id for n in self.nodes}
        for name, nid in self.placement.items():
            if nid not in node_ids:
                raise ValueError(f"service {name!r} placed on unknown node {nid}")
        masters = [n for n in self.nodes if n.role == MASTER]
        if len(masters) != 1:
            raise ValueError(f"cluster needs exactly one master node, found {len(masters)}")
        self.master = masters[0]
        self.shed_order = shedding_order(list(self.services.values()), self.placement, self.nodes)
        self._by_id = {n.id: n for n in self.nodes}
        self._load_cache: dict[frozenset[str], tuple[float, int]] = {}

    @classmethod
    def from_scenario(cls, scenario) -> "Simulation":
        cfg = scenario.sim
        times = (np.arange(cfg.n_steps) + 0.5) * cfg.dt
        irr = scenario.irradiance.series(times, seed=cfg.seed)
        return cls(
            battery=scenario.initial_battery(),
            solar_w=scenario.array.effective_w * irr,
            converter=scenario.converter,
            nodes=scenario.nodes,
            services=scenario.services,
            placement=scenario.resolved_placement(),
            config=cfg,
            controller_limit_w=scenario.charging.controller_limit(scenario.array),
            backup_w=scenario.charging.backup_w,
            backup_limit_w=scenario.charging.backup_limit(),
        )

    def initial_state(self) -> ClusterState:
        return ClusterState(0, self.battery, frozenset(self.services))

    def bus_load(self, running: Iterable[str]) -> tuple[float, int]:
        """Bus power and powered-node count for a set of running services."""
        running = frozenset(running)
        if running not in self._load_cache:
            self._load_cache[running] = self._bus_load(running)
        return self._load_cache[running]

    def _bus_load(self, running: frozenset[str]) -> tuple[float, int]:
        if not running:
            return 0.0, 0
        levels: dict[int, float] = {self.master.id: node_power(self.master.profile, IDLE)}
        for name in running:
            nid = self.placement[name]
            node = self._node(nid)
            w = node_power(node.profile, self.services[name].load_contribution)
            floor = node_power(node.profile, IDLE)
            levels[nid] = max(levels.get(nid, floor), w, floor)
        on = sorted(levels)
        bus = cluster_bus_power(
            [self._node(i).profile for i in on],
            [LoadLevel.custom(levels[i]) for i in on],
            self.converter,
        )
        return bus.power_w, len(on)

    def _node(self, nid: int) -> Node:
        return self._by_id[nid]

    def step(self, state: ClusterState) -> tuple[ClusterState, TraceRecord]:
        cfg = self.config
        dt = cfg.dt
        batt = state.battery
        eff = batt.charge_efficiency

        load_w, nodes_on = self.bus_load(state.running)

        headroom = batt.capacity_wh - batt.soc_wh + load_w * dt
        offered = self.solar_w[state.step_index]
        solar_in = min(offered, self.controller_limit_w)
        solar = harvest(offered, self.controller_limit_w, headroom, dt, eff)
        headroom = max(headroom - solar * eff * dt, 0.0)
        backup_in = min(self.backup_w, self.backup_limit_w)
        backup = harvest(self.backup_w, self.backup_limit_w, headroom, dt, eff) if self.backup_w else 0.0
        curtailed = state.curtailed_wh + (solar_in - solar + backup_in - backup) * dt
        charge_w = solar + backup

        res = soc_step(batt, charge_w, load_w, dt)
        record = TraceRecord(
            t=state.step_index * dt,
            soc_wh=res.battery.soc_wh,
            harvest_w=charge_w,
            load_w_bus=load_w,
            nodes_on=nodes_on,
            services_up=state.running,
            spill_wh=res.spill_wh,
            deficit_wh=res.deficit_wh,
        )
        running, stack = self._policy(res.battery, res.deficit_wh, state.running, state.shed_stack)
        return ClusterState(state.step_index + 1, res.battery, running, stack, curtailed), record

    def _policy(self, batt: Battery, deficit_wh: float, running: frozenset[str],
                stack: tuple[str, ...]) -> tuple[frozenset[str], tuple[str, ...]]:
        cfg = self.config
        available = batt.soc_wh - batt.reserve_wh
        eps = _THRESHOLD_RTOL * batt.capacity_wh
        to_shed = [s for s in self.shed_order if s in running]
        if deficit_wh > 0 and to_shed:
            return frozenset(), stack + tuple(to_shed)
        if available <= cfg.shutdown_soc_fraction * batt.usable_wh + eps and to_shed:
            victim = to_shed[0]
            return running - {victim}, stack + (victim,)
        if available >= cfg.restart_soc_fraction * batt.usable_wh - eps and stack:
            return running | {stack[-1]}, stack[:-1]
        return running, stack

    def run(self) -> tuple[list[TraceRecord], SummaryMetrics]:
        state = self.initial_state()
        trace = []
        for _ in range(self.config.n_steps):
            state, record = self.step(state)
            trace.append(record)
        return trace, self.summarize(trace, state.curtailed_wh)

    def summarize(self, trace: Sequence[TraceRecord], curtailed_wh: float = 0.0) -> SummaryMetrics:
        cfg = self.config
        dt = cfg.dt
        names = sorted(self.services)
        full = frozenset(names)
        eff = self.battery.charge_efficiency
        harvested = math.fsum(r.harvest_w * dt for r in trace)
        consumed = math.fsum(r.load_w_bus * dt for r in trace)
        spilled = math.fsum(r.spill_wh for r in trace)
        deficit = math.fsum(r.deficit_wh for r in trace)
        delta = trace[-1].soc_wh - self.battery.soc_wh
        terms = (harvested * eff, consumed, delta, spilled, deficit)
        residual = math.fsum((harvested * eff, -consumed, -delta, -spilled, deficit))
        scale = max(math.fsum(abs(x) for x in terms), 1e-300)
        degraded = [r for r in trace if r.services_up != full] if names else []
        dark = [r for r in trace if not r.services_up] if names else []
        min_soc = min(min(r.soc_wh for r in trace), self.battery.soc_wh)
        return SummaryMetrics(
            steps=len(trace),
            dt_h=dt,
            duration_h=len(trace) * dt,
            min_soc_wh=min_soc,
            min_soc_fraction=min_soc / self.battery.capacity_wh,
            final_soc_wh=trace[-1].soc_wh,
            first_outage_h=degraded[0].t if degraded else None,
            full_outage_h=dark[0].t if dark else None,
            downtime_h=len(degraded) * dt,
            full_downtime_h=len(dark) * dt,
            availability=availability_report(trace, names),
            harvested_wh=harvested,
            consumed_wh=consumed,
            spilled_wh=spilled,
            deficit_wh=deficit,
            curtailed_wh=curtailed_wh,
            delta_soc_wh=delta,
            ledger_residual_wh=residual,
            ledger_relative_error=abs(residual) / scale,
        )


def step(sim: Simulation, state: ClusterState) -> tuple[ClusterState, TraceRecord]:
    return sim.step(state)


def run(scenario) -> tuple[list[TraceRecord], SummaryMetrics]:
    """Simulate a scenario end to end. The scenario is validated first."""
    scenario.validate()
    return Simulation.from_scenario(scenario).run()


def availability_report(trace: Sequence[TraceRecord],
                        services: Iterable[str] | None = None) -> dict[str, float]:
    """Fraction of steps each service was up.

    Services never seen up are only reported if named in ``services``.
    """
    if not trace:
        raise ValueError("availability is undefined for an empty trace")
    if services is None:
        services = set().union(*(r.services_up for r in trace))
    n = len(trace)
    return {s: sum(1 for r in trace if s in r.services_up) / n for s in sorted(services)}


def format_trace(trace: Sequence[TraceRecord]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TRACE_FIELDS)
    for r in trace:
        w.writerow([
            repr(r.t), repr(r.soc_wh), repr(r.harvest_w), repr(r.load_w_bus),
            r.nodes_on, ";".join(sorted(r.services_up)), repr(r.spill_wh), repr(r.deficit_wh),
        ])
    return buf.getvalue()


def write_trace(trace: Sequence[TraceRecord], path: str | Path) -> None:
    Path(path).write_text(format_trace(trace))


def read_trace_file(path: str | Path) -> list[TraceRecord]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if tuple(rows[0]) != TRACE_FIELDS:
        raise ValueError(f"{path}: unexpected trace header {rows[0]}")
    return [
        TraceRecord(
            float(t), float(soc), float(h), float(load), int(on),
            frozenset(filter(None, up.split(";"))), float(sp), float(de),
        )
        for t, soc, h, load, on, up, sp, de in rows[1:]
    ]


def format_summary(metrics: SummaryMetrics) -> str:
    return json.dumps(metrics.to_dict(), indent=2, sort_keys=True) + "\n"
