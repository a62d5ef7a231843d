import itertools
import random

import pytest

from instances import random_problem
from solarcluster.cluster import MASTER, WORKER, Node, ServiceSpec
from solarcluster.energy import DcDcConverter, LoadLevel
from solarcluster.scenario import DEFAULT_CATALOG, default_nodes
from solarcluster.scheduler import (
    OBJECTIVE_ATOL,
    InfeasiblePlacement,
    InstanceTooLarge,
    Placement,
    PlacementProblem,
    UnplaceableService,
    brute_force_place,
    format_placement,
    greedy_place,
    local_search_improve,
    objective,
    plan,
)

IDLE_W, MOD_W, MAX_W = 1.3, 2.4, 3.65


def svc(name, cpu=100, mem=64, level="idle", priority=0):
    return ServiceSpec(name, cpu, mem, priority, LoadLevel.parse(level))


def feasible(problem, assignment):
    """Independent capacity check."""
    if sorted(assignment) != sorted(s.name for s in problem.services):
        return False
    nodes = {n.id: n for n in problem.nodes if n.powered}
    for nid, node in nodes.items():
        placed = [s for s in problem.services if assignment[s.name] == nid]
        if sum(s.cpu_millicores for s in placed) > node.cpu_millicores:
            return False
        if sum(s.mem_mb for s in placed) > node.mem_mb:
            return False
    return all(assignment[s.name] in nodes for s in problem.services)


def crafted_problem():
    # Greedy packs by CPU and strands s5 on a third node; moving s1 and s5
    # consolidates onto two nodes at 1.3 + 3.65 W.
    services = [
        svc("s0", 300, 240, "idle"),
        svc("s1", 800, 240, "moderate"),
        svc("s2", 2900, 160, "idle"),
        svc("s3", 2600, 440, "max"),
        svc("s4", 500, 120, "moderate"),
        svc("s5", 500, 320, "idle"),
    ]
    return PlacementProblem(default_nodes(3), services, DcDcConverter(1.0))


class TestObjective:
    def test_consolidated(self):
        p = PlacementProblem(default_nodes(), [svc("a", level="idle"), svc("b", level="moderate")],
                             DcDcConverter(0.8))
        obj = objective(p, {"a": 3, "b": 3})
        # master idles to coordinate, node 3 runs at the higher of its services' levels
        assert obj == pytest.approx((IDLE_W + MOD_W) / 0.8)
        assert objective(p, {"a": 0, "b": 0}) == pytest.approx(MOD_W / 0.8)

    def test_no_services(self):
        p = PlacementProblem(default_nodes(), [], DcDcConverter())
        assert objective(p, {}) == 0.0

    def test_levels_take_max_not_sum(self):
        p = PlacementProblem(default_nodes(1), [svc("a", level="max"), svc("b", level="max")],
                             DcDcConverter(1.0))
        assert objective(p, {"a": 0, "b": 0}) == pytest.approx(MAX_W)

    def test_custom_below_idle_floors_at_idle(self):
        p = PlacementProblem(default_nodes(2), [svc("a", level=0.2)], DcDcConverter(1.0))
        assert objective(p, {"a": 1}) == pytest.approx(2 * IDLE_W)

    def test_infeasible_names_node_and_resource(self):
        p = PlacementProblem(default_nodes(2), [svc("a", cpu=3000), svc("b", cpu=3000)])
        with pytest.raises(InfeasiblePlacement, match="node 1: cpu_millicores"):
            objective(p, {"a": 1, "b": 1})
        p = PlacementProblem(default_nodes(2), [svc("a", mem=500), svc("b", mem=500)])
        with pytest.raises(InfeasiblePlacement, match="node 0: mem_mb"):
            objective(p, {"a": 0, "b": 0})

    def test_unpowered_node_rejected(self):
        nodes = (Node(0, MASTER), Node(1, WORKER, powered=False))
        p = PlacementProblem(nodes, [svc("a")])
        with pytest.raises(InfeasiblePlacement, match="unpowered"):
            objective(p, {"a": 1})

    def test_default_catalog_matches_oracle(self):
        p = PlacementProblem(default_nodes(), DEFAULT_CATALOG, DcDcConverter(0.95))
        assert plan(p).objective_w == pytest.approx(brute_force_place(p).objective_w, abs=OBJECTIVE_ATOL)


class TestGreedy:
    def test_single_service_goes_to_master(self):
        p = PlacementProblem(default_nodes(), [svc("only")])
        assert greedy_place(p).assignment == {"only": 0}

    def test_exactly_two_nodes(self):
        # 4 x 2000 mc exactly fills two 4000 mc nodes.
        p = PlacementProblem(default_nodes(), [svc(f"s{i}", cpu=2000) for i in range(4)])
        g = greedy_place(p)
        assert g.active_nodes() == [0, 1]
        assert sorted(g.assignment.values()).count(0) == 2

    def test_decreasing_cpu_order(self):
        p = PlacementProblem(default_nodes(2), [svc("small", cpu=500), svc("big", cpu=3800)])
        # big goes first onto the master, small no longer fits there
        assert greedy_place(p).assignment == {"small": 1, "big": 0}

    def test_unplaceable_named(self):
        p = PlacementProblem(default_nodes(), [svc("ok"), svc("huge", cpu=9000)])
        with pytest.raises(UnplaceableService, match="huge"):
            greedy_place(p)

    @pytest.mark.parametrize("seed", range(30))
    def test_feasible_and_deterministic(self, seed):
        p = random_problem(random.Random(seed))
        g = greedy_place(p)
        assert feasible(p, g.assignment)
        assert greedy_place(p) == g
        assert g.objective_w == pytest.approx(objective(p, g))


class TestLocalSearch:
    def test_fixed_point(self):
        p = crafted_problem()
        best = brute_force_place(p)
        assert local_search_improve(p, best, 50).assignment == best.assignment

    def test_zero_iterations(self):
        p = crafted_problem()
        g = greedy_place(p)
        assert local_search_improve(p, g, 0) == g

    def test_crafted_consolidation(self):
        p = crafted_problem()
        g = greedy_place(p)
        assert g.active_nodes() == [0, 1, 2]
        assert g.objective_w == pytest.approx(MOD_W + MAX_W + IDLE_W)
        improved = local_search_improve(p, g, 100)
        best = brute_force_place(p)
        assert best.objective_w == pytest.approx(IDLE_W + MAX_W)
        assert improved.objective_w == pytest.approx(best.objective_w)
        assert len(improved.active_nodes()) == 2

    @pytest.mark.parametrize("seed", range(30))
    def test_monotone_descent(self, seed):
        p = random_problem(random.Random(seed))
        history = []
        out = local_search_improve(p, greedy_place(p), 100, history=history)
        assert all(b < a for a, b in zip(history, history[1:]))
        assert history[-1] == out.objective_w
        assert feasible(p, out.assignment)


class TestBruteForce:
    def test_single(self):
        p = PlacementProblem(default_nodes(1), [svc("a")], DcDcConverter(1.0))
        b = brute_force_place(p)
        assert b.assignment == {"a": 0}
        assert b.objective_w == pytest.approx(IDLE_W)

    def test_symmetric_tie_break(self):
        p = PlacementProblem(default_nodes(2), [svc("a"), svc("b")])
        assert brute_force_place(p).assignment == {"a": 0, "b": 0}

    def test_guard(self):
        with pytest.raises(InstanceTooLarge):
            brute_force_place(PlacementProblem(default_nodes(), [svc(f"s{i}") for i in range(9)]))
        with pytest.raises(InstanceTooLarge):
            brute_force_place(PlacementProblem(default_nodes(6), [svc("a")]))

    def test_empty(self):
        assert brute_force_place(PlacementProblem(default_nodes(), [])) == Placement({}, 0.0)

    @pytest.mark.parametrize("seed", range(25))
    def test_matches_itertools_enumeration(self, seed):
        p = random_problem(random.Random(500 + seed), max_services=5, max_nodes=4)
        ids = [n.id for n in p.nodes]
        best = None
        for combo in itertools.product(ids, repeat=len(p.services)):
            a = dict(zip((s.name for s in p.services), combo))
            if not feasible(p, a):
                continue
            obj = objective(p, a)
            if best is None or obj < best[0] - OBJECTIVE_ATOL:
                best = (obj, a)
        b = brute_force_place(p)
        assert b.assignment == best[1]
        assert b.objective_w == pytest.approx(best[0])

    def test_oracle_dominance(self):
        rng = random.Random(77)
        matched = 0
        n = 60
        for _ in range(n):
            p = random_problem(rng)
            b, h = brute_force_place(p), plan(p)
            assert feasible(p, b.assignment) and feasible(p, h.assignment)
            assert b.objective_w <= h.objective_w + OBJECTIVE_ATOL
            matched += h.objective_w <= b.objective_w + OBJECTIVE_ATOL
        print(f"heuristic optimal on {matched}/{n}")

    def test_deterministic(self):
        p = random_problem(random.Random(3))
        assert brute_force_place(p) == brute_force_place(p)


def test_format_placement():
    p = crafted_problem()
    text = format_placement(p, brute_force_place(p))
    assert "s3" in text and "objective: 4.950 W @12V" in text


def test_problem_validation():
    with pytest.raises(ValueError):
        PlacementProblem((), [])
    with pytest.raises(ValueError):
        PlacementProblem(default_nodes(), [svc("a"), svc("a")])
    with pytest.raises(ValueError):
        PlacementProblem((Node(0, MASTER, powered=False),), [])
