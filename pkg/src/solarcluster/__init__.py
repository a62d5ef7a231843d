"""Energy budgeting, simulation and service placement for a solar-powered SBC cluster."""

from .cluster import Node, ServiceSpec, SimConfig, Simulation, TraceRecord, availability_report, run
from .energy import (
    IDLE,
    MAX,
    MODERATE,
    Battery,
    ChargeSource,
    DcDcConverter,
    LoadLevel,
    NodePowerProfile,
    autonomy_hours,
    cluster_bus_power,
    node_power,
    recharge_time_per_hour,
    soc_step,
)
from .scenario import Scenario, ScenarioError, default_scenario, load_scenario
from .scheduler import (
    Placement,
    PlacementProblem,
    brute_force_place,
    greedy_place,
    local_search_improve,
    objective,
)
from .solar import CloudModel, IrradianceModel, PanelArray, array_output, harvest, irradiance_at

__version__ = "0.1.0"
