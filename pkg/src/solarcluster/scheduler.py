"""Power-aware placement of services onto cluster nodes.

The objective is steady-state bus power. A node with no services is off; a
node hosting services runs at the highest load level among them (levels do
not add), never below idle. The master is on whenever any service is placed,
because it coordinates the workers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .cluster import MASTER, Node, ServiceSpec
from .energy import IDLE, DcDcConverter, node_power

BRUTE_FORCE_MAX_SERVICES = 8
BRUTE_FORCE_MAX_NODES = 5

# Objectives closer than this are treated as equal for tie-breaking.
OBJECTIVE_ATOL = 1e-9


class InfeasiblePlacement(ValueError):
    pass


class UnplaceableService(ValueError):
    def __init__(self, name: str, reason: str = "does not fit on any powered node"):
        super().__init__(f"service {name!r} {reason}")
        self.service = name


class InstanceTooLarge(ValueError):
    pass


@dataclass(frozen=True)
class PlacementProblem:
    nodes: tuple[Node, ...]
    services: tuple[ServiceSpec, ...]
    converter: DcDcConverter = field(default_factory=DcDcConverter)

    def __post_init__(self) -> None:
        object.__setattr__(self, "nodes", tuple(self.nodes))
        object.__setattr__(self, "services", tuple(self.services))
        if not self.nodes:
            raise ValueError("placement problem needs at least one node")
        ids = [n.id for n in self.nodes]
        if len(set(ids)) != len(ids):
            raise ValueError("node ids must be unique")
        names = [s.name for s in self.services]
        if len(set(names)) != len(names):
            raise ValueError("service names must be unique")
        if sum(n.role == MASTER for n in self.nodes) != 1:
            raise ValueError("exactly one master node required")
        if not self.master.powered:
            raise ValueError("the master node must be powered")

    @property
    def eligible(self) -> list[Node]:
        """Powered nodes in id order."""
        return sorted((n for n in self.nodes if n.powered), key=lambda n: n.id)

    @property
    def master(self) -> Node:
        return next(n for n in self.nodes if n.role == MASTER)

    def node(self, nid: int) -> Node:
        for n in self.nodes:
            if n.id == nid:
                return n
        raise KeyError(nid)


@dataclass
class Placement:
    assignment: dict[str, int]
    objective_w: float

    def active_nodes(self) -> list[int]:
        return sorted(set(self.assignment.values()))


def check_placement(problem: PlacementProblem, assignment: Mapping[str, int]) -> None:
    """Raise :class:`InfeasiblePlacement` naming the first violated node/resource."""
    names = {s.name for s in problem.services}
    if set(assignment) != names:
        missing = sorted(names - set(assignment))
        extra = sorted(set(assignment) - names)
        raise InfeasiblePlacement(f"assignment mismatch: missing {missing}, unknown {extra}")
    powered = {n.id: n for n in problem.eligible}
    cpu = dict.fromkeys(powered, 0)
    mem = dict.fromkeys(powered, 0)
    for s in problem.services:
        nid = assignment[s.name]
        if nid not in powered:
            raise InfeasiblePlacement(f"service {s.name!r} assigned to unpowered or unknown node {nid}")
        cpu[nid] += s.cpu_millicores
        mem[nid] += s.mem_mb
    for nid, node in powered.items():
        if cpu[nid] > node.cpu_millicores:
            raise InfeasiblePlacement(
                f"node {nid}: cpu_millicores {cpu[nid]} exceeds capacity {node.cpu_millicores}")
        if mem[nid] > node.mem_mb:
            raise InfeasiblePlacement(f"node {nid}: mem_mb {mem[nid]} exceeds capacity {node.mem_mb}")


def node_levels_w(problem: PlacementProblem, assignment: Mapping[str, int]) -> dict[int, float]:
    """5 V draw of every powered-on node under an assignment."""
    by_name = {s.name: s for s in problem.services}
    levels: dict[int, float] = {}
    if assignment:
        m = problem.master
        levels[m.id] = node_power(m.profile, IDLE)
    for name, nid in assignment.items():
        prof = problem.node(nid).profile
        w = max(node_power(prof, by_name[name].load_contribution), node_power(prof, IDLE))
        levels[nid] = max(levels.get(nid, 0.0), w)
    return levels


def objective(problem: PlacementProblem, placement: Placement | Mapping[str, int]) -> float:
    assignment = placement.assignment if isinstance(placement, Placement) else placement
    check_placement(problem, assignment)
    return _objective(problem, assignment)


def _objective(problem: PlacementProblem, assignment: Mapping[str, int]) -> float:
    levels = node_levels_w(problem, assignment)
    return problem.converter.input_power(math.fsum(levels[k] for k in sorted(levels)))


def _fits(svc: ServiceSpec, node: Node, used: Mapping[int, tuple[int, int]]) -> bool:
    cpu, mem = used.get(node.id, (0, 0))
    return cpu + svc.cpu_millicores <= node.cpu_millicores and mem + svc.mem_mb <= node.mem_mb


def greedy_place(problem: PlacementProblem) -> Placement:
    """First-fit decreasing by CPU demand.

    Nodes already active (the master from the outset) are tried in id order
    before the lowest-id inactive node that fits is switched on.
    """
    eligible = problem.eligible
    for s in problem.services:
        if not any(_fits(s, n, {}) for n in eligible):
            raise UnplaceableService(s.name)
    active = [problem.master.id]
    used: dict[int, tuple[int, int]] = {}
    assignment: dict[str, int] = {}
    for s in sorted(problem.services, key=lambda s: -s.cpu_millicores):
        target = next((problem.node(i) for i in active if _fits(s, problem.node(i), used)), None)
        if target is None:
            target = next((n for n in eligible if n.id not in active and _fits(s, n, used)), None)
            if target is None:
                raise UnplaceableService(s.name, "does not fit in the remaining capacity")
            active = sorted(active + [target.id])
        cpu, mem = used.get(target.id, (0, 0))
        used[target.id] = (cpu + s.cpu_millicores, mem + s.mem_mb)
        assignment[s.name] = target.id
    assignment = {s.name: assignment[s.name] for s in problem.services}
    return Placement(assignment, _objective(problem, assignment))


def local_search_improve(problem: PlacementProblem, placement: Placement,
                         max_iters: int = 100, history: list[float] | None = None) -> Placement:
    """Best-improvement descent over single-service moves and pairwise swaps.

    Only strictly improving neighbours are taken, so the objective sequence
    is strictly decreasing; stops at a local optimum or after ``max_iters``.
    If ``history`` is given, the objective after every accepted move is
    appended to it (starting with the input's).
    """
    current = dict(placement.assignment)
    check_placement(problem, current)
    best_obj = _objective(problem, current)
    if history is not None:
        history.append(best_obj)
    if max_iters <= 0:
        return Placement(dict(placement.assignment), placement.objective_w)
    services = problem.services
    eligible = problem.eligible
    for _ in range(max_iters):
        cand_obj, cand = best_obj, None
        used = _usage(problem, current)
        for s in services:
            here = current[s.name]
            for n in eligible:
                if n.id == here:
                    continue
                freed = {**used, here: (used[here][0] - s.cpu_millicores, used[here][1] - s.mem_mb)}
                if not _fits(s, n, freed):
                    continue
                trial = {**current, s.name: n.id}
                obj = _objective(problem, trial)
                if obj < cand_obj - OBJECTIVE_ATOL:
                    cand_obj, cand = obj, trial
        for i, a in enumerate(services):
            for b in services[i + 1:]:
                na, nb = current[a.name], current[b.name]
                if na == nb:
                    continue
                trial = {**current, a.name: nb, b.name: na}
                if not _feasible(problem, trial):
                    continue
                obj = _objective(problem, trial)
                if obj < cand_obj - OBJECTIVE_ATOL:
                    cand_obj, cand = obj, trial
        if cand is None:
            break
        current, best_obj = cand, cand_obj
        if history is not None:
            history.append(best_obj)
    return Placement(current, best_obj)


def _usage(problem: PlacementProblem, assignment: Mapping[str, int]) -> dict[int, tuple[int, int]]:
    used = {n.id: (0, 0) for n in problem.eligible}
    for s in problem.services:
        cpu, mem = used[assignment[s.name]]
        used[assignment[s.name]] = (cpu + s.cpu_millicores, mem + s.mem_mb)
    return used


def _feasible(problem: PlacementProblem, assignment: Mapping[str, int]) -> bool:
    try:
        check_placement(problem, assignment)
    except InfeasiblePlacement:
        return False
    return True


def plan(problem: PlacementProblem, max_iters: int = 100) -> Placement:
    """Greedy placement followed by local search."""
    return local_search_improve(problem, greedy_place(problem), max_iters)


def brute_force_place(problem: PlacementProblem) -> Placement:
    """Exhaustive search over every assignment of services to powered nodes.

    Among minimum-objective assignments the lexicographically smallest tuple
    of node ids (in service order) wins. Refuses instances larger than
    8 services or 5 nodes.
    """
    services = problem.services
    nodes = problem.eligible
    S, N = len(services), len(nodes)
    if S > BRUTE_FORCE_MAX_SERVICES or N > BRUTE_FORCE_MAX_NODES:
        raise InstanceTooLarge(
            f"brute force limited to {BRUTE_FORCE_MAX_SERVICES} services and "
            f"{BRUTE_FORCE_MAX_NODES} nodes, got {S} and {N}")
    if S == 0:
        return Placement({}, 0.0)
    if N == 0:
        raise UnplaceableService(services[0].name)

    # Row r is the r-th tuple in lexicographic order, first service most significant.
    idx = np.arange(N ** S, dtype=np.int64)
    grid = np.empty((idx.size, S), dtype=np.int8)
    for j in range(S):
        grid[:, j] = (idx // N ** (S - 1 - j)) % N

    cpu = np.array([s.cpu_millicores for s in services], dtype=np.int64)
    mem = np.array([s.mem_mb for s in services], dtype=np.int64)
    feasible = np.ones(idx.size, dtype=bool)
    total = np.zeros(idx.size)
    for k, node in enumerate(nodes):
        on = grid == k
        feasible &= (on @ cpu) <= node.cpu_millicores
        feasible &= (on @ mem) <= node.mem_mb
        idle = node_power(node.profile, IDLE)
        draw = np.array([max(node_power(node.profile, s.load_contribution), idle) for s in services])
        level = np.where(on, draw, 0.0).max(axis=1)
        if node.role == MASTER:
            level = np.maximum(level, idle)
        total += level
    if not feasible.any():
        raise UnplaceableService(services[0].name, "cannot be placed: no feasible assignment exists")
    total = total / problem.converter.efficiency
    best = total[feasible].min()
    row = int(np.flatnonzero(feasible & (total <= best + OBJECTIVE_ATOL))[0])
    assignment = {s.name: nodes[int(grid[row, j])].id for j, s in enumerate(services)}
    return Placement(assignment, _objective(problem, assignment))


def format_placement(problem: PlacementProblem, placement: Placement) -> str:
    by_node: dict[int, list[str]] = {}
    for name, nid in placement.assignment.items():
        by_node.setdefault(nid, []).append(name)
    width = max([len("service")] + [len(s.name) for s in problem.services])
    lines = [f"{'service':<{width}}  node  role"]
    for s in problem.services:
        nid = placement.assignment[s.name]
        lines.append(f"{s.name:<{width}}  {nid:>4}  {problem.node(nid).role}")
    lines.append(f"active nodes: {', '.join(map(str, placement.active_nodes())) or 'none'}")
    lines.append(f"objective: {placement.objective_w:.3f} W @12V")
    return "\n".join(lines)
