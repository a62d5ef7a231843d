"""Seeded random instances shared by property tests and the acceptance suite."""

from __future__ import annotations

import random

from solarcluster.cluster import MASTER, WORKER, Node, ServiceSpec, SimConfig
from solarcluster.energy import Battery, DcDcConverter, LoadLevel, NodePowerProfile
from solarcluster.scenario import Charging, Scenario
from solarcluster.scheduler import PlacementProblem, UnplaceableService, greedy_place
from solarcluster.solar import CloudModel, IrradianceModel, PanelArray

LEVELS = ("idle", "moderate", "max")


def random_profile(rng: random.Random) -> NodePowerProfile:
    idle = rng.uniform(0.15, 0.35)
    mod = idle + rng.uniform(0.0, 0.3)
    return NodePowerProfile(5.0, idle, mod, mod + rng.uniform(0.0, 0.4))


def random_level(rng: random.Random) -> LoadLevel:
    if rng.random() < 0.15:
        return LoadLevel.custom(round(rng.uniform(0.5, 4.0), 2))
    return LoadLevel(rng.choice(LEVELS))


def random_problem(rng: random.Random, max_services: int = 8, max_nodes: int = 5,
                   uniform_nodes: bool | None = None) -> PlacementProblem:
    """A random instance on which greedy placement succeeds."""
    while True:
        n_nodes = rng.randint(1, max_nodes)
        uniform = rng.random() < 0.5 if uniform_nodes is None else uniform_nodes
        base = random_profile(rng)
        nodes = [
            Node(
                i, MASTER if i == 0 else WORKER,
                base if uniform else random_profile(rng),
                cpu_millicores=rng.choice([2000, 3000, 4000]),
                mem_mb=rng.choice([512, 824, 1024]),
            )
            for i in range(n_nodes)
        ]
        services = [
            ServiceSpec(
                f"s{j}", rng.randint(1, 20) * 100, rng.randint(1, 16) * 32,
                priority=rng.randint(0, 9), load_contribution=random_level(rng),
            )
            for j in range(rng.randint(1, max_services))
        ]
        problem = PlacementProblem(nodes, services, DcDcConverter(rng.uniform(0.8, 1.0)))
        try:
            greedy_place(problem)
        except UnplaceableService:
            continue
        return problem


def random_scenario(rng: random.Random, max_steps: int = 300) -> Scenario:
    """A random valid scenario exercising clouds, backup charging, shedding and deficits."""
    problem = random_problem(rng, max_services=6)
    battery = Battery(
        nominal_voltage=rng.choice([12.0, 24.0]),
        capacity_ah=rng.uniform(0.5, 50.0),
        usable_fraction=rng.uniform(0.5, 1.0),
        charge_efficiency=rng.uniform(0.7, 1.0),
    )
    if rng.random() < 0.5:
        clouds = CloudModel("two_state", p_clear_to_cloudy=rng.random(), p_cloudy_to_clear=rng.random(),
                            cloudy_attenuation=rng.random(), seed=rng.randrange(2**31),
                            step_h=rng.choice([0.25, 1.0]))
    else:
        clouds = CloudModel("constant", attenuation=rng.random())
    sunrise = rng.uniform(0, 10)
    irradiance = IrradianceModel("clear_sky", sunrise, rng.uniform(sunrise + 1, 24), clouds=clouds)
    dt = rng.choice([0.02, 0.05, 0.1, 0.25, 0.5])
    shutdown = rng.uniform(0.0, 0.5)
    sim = SimConfig(dt=dt, duration=dt * rng.randint(1, max_steps),
                    shutdown_soc_fraction=shutdown,
                    restart_soc_fraction=rng.uniform(shutdown + 0.01, 1.0),
                    seed=rng.randrange(2**31))
    charging = Charging(
        controller_limit_w=rng.choice([None, rng.uniform(0, 300)]),
        backup_w=rng.choice([0.0, rng.uniform(0, 30)]),
        backup_limit_w=rng.choice([None, rng.uniform(0, 20)]),
    )
    return Scenario(
        battery=battery,
        array=PanelArray(rated_w=rng.uniform(1, 300), derating=rng.uniform(0.5, 1.0),
                         age_years=rng.uniform(0, 20)),
        irradiance=irradiance,
        converter=problem.converter,
        charging=charging,
        nodes=problem.nodes,
        services=problem.services,
        placement=greedy_place(problem).assignment,
        sim=sim,
        initial_soc_fraction=rng.random(),
    ).validate()
