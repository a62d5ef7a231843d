"""Scenario files: schema, defaults, validation and (de)serialisation.

A scenario is a YAML document whose top-level sections mirror
:class:`Scenario`. Every key is checked; unknown keys are errors so typos
surface instead of silently falling back to defaults. Validation errors
carry a dotted field path, e.g. ``battery.capacity_ah``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Callable, Mapping

import yaml

from .cluster import MASTER, WORKER, Node, ServiceSpec, SimConfig
from .energy import (
    FITTED_EFFECTIVE_CHARGE_W,
    Battery,
    DcDcConverter,
    LoadLevel,
    NodePowerProfile,
    node_power,
)
from .scheduler import PlacementProblem, check_placement, plan
from .solar import CloudModel, IrradianceModel, PanelArray, read_trace


class ScenarioError(ValueError):
    """Invalid scenario content, tagged with the offending field path."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path
        self.message = message


@dataclass(frozen=True)
class Charging:
    """Charge-side settings.

    ``controller_limit_w`` defaults to the array rating when unset.
    ``effective_charge_w`` only feeds the recharge-time table.
    """

    controller_limit_w: float | None = None
    effective_charge_w: float | None = FITTED_EFFECTIVE_CHARGE_W
    backup_w: float = 0.0
    backup_limit_w: float | None = None

    def __post_init__(self) -> None:
        for name in ("controller_limit_w", "backup_limit_w"):
            v = getattr(self, name)
            if v is not None and not v >= 0:
                raise ValueError(f"{name} must be >= 0")
        if self.effective_charge_w is not None and not self.effective_charge_w > 0:
            raise ValueError("effective_charge_w must be > 0")
        if not self.backup_w >= 0:
            raise ValueError("backup_w must be >= 0")

    def controller_limit(self, array: PanelArray) -> float:
        return array.rated_w if self.controller_limit_w is None else self.controller_limit_w

    def backup_limit(self) -> float:
        return math.inf if self.backup_limit_w is None else self.backup_limit_w


@dataclass(frozen=True)
class LoadRow:
    """A row of the autonomy/recharge tables: every node at ``level``.

    ``bus_w`` pins the battery-side power; when unset it is derived from the
    node profiles and the converter efficiency.
    """

    name: str
    level: LoadLevel
    bus_w: float | None = None

    def __post_init__(self) -> None:
        if self.bus_w is not None and not self.bus_w > 0:
            raise ValueError("bus_w must be > 0")


# Row labels carry the benchmark commands the node figures were measured with.
DEFAULT_LOADS = (
    LoadRow("Idle", LoadLevel("idle"), 7.0),
    LoadRow("Apache Benchmark (ab -n 100 -c 10)", LoadLevel("moderate"), 12.0),
    LoadRow("Stress CPU (stress --cpu 4)", LoadLevel("max"), 18.5),
)

# Editable defaults. Resource demands, priorities and load levels below are
# illustrative; only the service list itself comes from the reference stack.
DEFAULT_CATALOG = (
    ServiceSpec("web", 500, 128, priority=5, load_contribution=LoadLevel("moderate")),
    ServiceSpec("database", 1000, 384, priority=9, load_contribution=LoadLevel("moderate")),
    ServiceSpec("email", 250, 128, priority=8, load_contribution=LoadLevel("idle")),
    ServiceSpec("ecommerce", 1000, 256, priority=6, load_contribution=LoadLevel("moderate")),
    ServiceSpec("marketing", 500, 256, priority=2, load_contribution=LoadLevel("idle")),
    ServiceSpec("monitoring", 750, 384, priority=1, load_contribution=LoadLevel("moderate")),
)


def default_nodes(count: int = 5) -> tuple[Node, ...]:
    return tuple(Node(i, MASTER if i == 0 else WORKER) for i in range(count))


@dataclass(frozen=True)
class Scenario:
    battery: Battery = field(default_factory=Battery)
    array: PanelArray = field(default_factory=PanelArray)
    irradiance: IrradianceModel = field(default_factory=IrradianceModel)
    converter: DcDcConverter = field(default_factory=DcDcConverter)
    charging: Charging = field(default_factory=Charging)
    nodes: tuple[Node, ...] = field(default_factory=default_nodes)
    services: tuple[ServiceSpec, ...] = DEFAULT_CATALOG
    placement: Mapping[str, int] | None = None
    loads: tuple[LoadRow, ...] = DEFAULT_LOADS
    sim: SimConfig = field(default_factory=SimConfig)
    initial_soc_fraction: float = 1.0
    metadata: Mapping[str, str] = field(default_factory=dict)

    def validate(self) -> "Scenario":
        """Check cross-section invariants; field-level ones hold by construction."""
        ids = [n.id for n in self.nodes]
        if not self.nodes:
            raise ScenarioError("nodes", "at least one node is required")
        if len(set(ids)) != len(ids):
            raise ScenarioError("nodes", f"node ids must be unique, got {ids}")
        masters = [i for i, n in enumerate(self.nodes) if n.role == MASTER]
        if len(masters) != 1:
            raise ScenarioError("nodes", f"exactly one master node required, found {len(masters)}")
        if not self.nodes[masters[0]].powered:
            raise ScenarioError(f"nodes[{masters[0]}].powered", "the master node must be powered")
        names = [s.name for s in self.services]
        for i, name in enumerate(names):
            if name in names[:i]:
                raise ScenarioError(f"services[{i}].name", f"duplicate service name {name!r}")
        if not 0 <= self.initial_soc_fraction <= 1:
            raise ScenarioError("battery.initial_soc_fraction", "must be in [0, 1]")
        if self.placement is not None:
            for name, nid in self.placement.items():
                if name not in names:
                    raise ScenarioError(f"placement.{name}", "unknown service")
                if nid not in ids:
                    raise ScenarioError(f"placement.{name}", f"unknown node id {nid}")
            for name in names:
                if name not in self.placement:
                    raise ScenarioError(f"placement.{name}", "service has no node")
            try:
                check_placement(self.problem(), self.placement)
            except ValueError as exc:
                raise ScenarioError("placement", str(exc)) from None
        return self

    def problem(self) -> PlacementProblem:
        return PlacementProblem(self.nodes, self.services, self.converter)

    def resolved_placement(self) -> dict[str, int]:
        """The explicit placement if given, else greedy + local search."""
        if self.placement is not None:
            return dict(self.placement)
        return plan(self.problem()).assignment

    def initial_battery(self) -> Battery:
        return replace(self.battery, soc_wh=self.battery.capacity_wh * self.initial_soc_fraction)

    def load_bus_power(self, row: LoadRow) -> tuple[float, float, float]:
        """(total 5 V current, 5 V power, bus power) with every node at ``row.level``."""
        current = math.fsum(n.profile.current(row.level) for n in self.nodes)
        out_w = math.fsum(node_power(n.profile, row.level) for n in self.nodes)
        bus = row.bus_w if row.bus_w is not None else self.converter.input_power(out_w)
        return current, out_w, bus


# -- parsing ----------------------------------------------------------------

def _section(data: Any, path: str, allowed: set[str]) -> dict:
    if data is None:
        return {}
    if not isinstance(data, Mapping):
        raise ScenarioError(path, f"expected a mapping, got {type(data).__name__}")
    for key in data:
        if key not in allowed:
            raise ScenarioError(f"{path}.{key}" if path else str(key),
                                f"unknown key (allowed: {', '.join(sorted(allowed))})")
    return dict(data)


def _num(value: Any, path: str, *, optional: bool = False, integer: bool = False) -> Any:
    if value is None and optional:
        return None
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ScenarioError(path, f"expected a number, got {value!r}")
    if integer:
        if isinstance(value, float) and not value.is_integer():
            raise ScenarioError(path, f"expected an integer, got {value!r}")
        return int(value)
    if not math.isfinite(value):
        raise ScenarioError(path, f"expected a finite number, got {value!r}")
    return float(value)


def _build(cls: Callable, path: str, kwargs: dict) -> Any:
    try:
        return cls(**kwargs)
    except (ValueError, TypeError) as exc:
        raise ScenarioError(path, str(exc)) from None


def _numbers(raw: dict, path: str, schema: Mapping[str, tuple[bool, bool]]) -> dict:
    """Convert the keys present in ``raw`` per ``schema``: name -> (optional, integer)."""
    return {
        k: _num(raw[k], f"{path}.{k}", optional=schema[k][0], integer=schema[k][1])
        for k in schema if k in raw
    }


_F = (False, False)
_OPT = (True, False)
_INT = (False, True)


def _level(value: Any, path: str) -> LoadLevel:
    try:
        return LoadLevel.parse(value)
    except ValueError as exc:
        raise ScenarioError(path, str(exc)) from None


def _parse_profile(raw: Any, path: str) -> NodePowerProfile:
    schema = {f.name: _F for f in fields(NodePowerProfile)}
    raw = _section(raw, path, set(schema))
    return _build(NodePowerProfile, path, _numbers(raw, path, schema))


def _parse_nodes(raw: Any) -> tuple[Node, ...]:
    if raw is None:
        return default_nodes()
    if not isinstance(raw, list):
        raise ScenarioError("nodes", "expected a list")
    nodes = []
    for i, item in enumerate(raw):
        path = f"nodes[{i}]"
        item = _section(item, path, {"id", "role", "profile", "cpu_millicores", "mem_mb", "powered"})
        kw = _numbers(item, path, {"id": _INT, "cpu_millicores": _INT, "mem_mb": _INT})
        if "id" not in kw:
            raise ScenarioError(f"{path}.id", "required")
        if "role" in item:
            kw["role"] = item["role"]
        if "powered" in item:
            if not isinstance(item["powered"], bool):
                raise ScenarioError(f"{path}.powered", "expected true or false")
            kw["powered"] = item["powered"]
        kw["profile"] = _parse_profile(item.get("profile"), f"{path}.profile")
        nodes.append(_build(Node, path, kw))
    return tuple(nodes)


def _parse_services(raw: Any) -> tuple[ServiceSpec, ...]:
    if raw is None:
        return DEFAULT_CATALOG
    if not isinstance(raw, list):
        raise ScenarioError("services", "expected a list")
    out = []
    for i, item in enumerate(raw):
        path = f"services[{i}]"
        item = _section(item, path, {"name", "cpu_millicores", "mem_mb", "priority", "load"})
        for req in ("name", "cpu_millicores", "mem_mb"):
            if req not in item:
                raise ScenarioError(f"{path}.{req}", "required")
        kw = _numbers(item, path, {"cpu_millicores": _INT, "mem_mb": _INT, "priority": _INT})
        kw["name"] = str(item["name"])
        if "load" in item:
            kw["load_contribution"] = _level(item["load"], f"{path}.load")
        out.append(_build(ServiceSpec, path, kw))
    return tuple(out)


def _parse_clouds(raw: Any, path: str) -> CloudModel:
    schema = {
        "attenuation": _F, "p_clear_to_cloudy": _F, "p_cloudy_to_clear": _F,
        "cloudy_attenuation": _F, "step_h": _F, "seed": (True, True),
    }
    raw = _section(raw, path, set(schema) | {"kind"})
    kw = _numbers(raw, path, schema)
    kw["kind"] = raw.get("kind", "none")
    return _build(CloudModel, path, kw)


def _parse_irradiance(raw: Any, base_dir: Path | None) -> IrradianceModel:
    path = "irradiance"
    raw = _section(raw, path, {"kind", "sunrise", "sunset", "points", "trace_file", "clouds"})
    kw = _numbers(raw, path, {"sunrise": _F, "sunset": _F})
    kw["kind"] = raw.get("kind", "clear_sky")
    kw["clouds"] = _parse_clouds(raw.get("clouds"), f"{path}.clouds")
    if "points" in raw and "trace_file" in raw:
        raise ScenarioError(path, "give either points or trace_file, not both")
    if "points" in raw:
        pts = raw["points"]
        if not isinstance(pts, list):
            raise ScenarioError(f"{path}.points", "expected a list of [time_h, fraction] pairs")
        parsed = []
        for i, p in enumerate(pts):
            if not isinstance(p, (list, tuple)) or len(p) != 2:
                raise ScenarioError(f"{path}.points[{i}]", "expected [time_h, fraction]")
            parsed.append((_num(p[0], f"{path}.points[{i}][0]"), _num(p[1], f"{path}.points[{i}][1]")))
        kw["points"] = tuple(parsed)
    elif "trace_file" in raw:
        trace_path = Path(str(raw["trace_file"]))
        if base_dir is not None and not trace_path.is_absolute():
            trace_path = base_dir / trace_path
        try:
            kw["points"] = read_trace(trace_path)
        except OSError as exc:
            raise ScenarioError(f"{path}.trace_file", f"cannot read {trace_path}: {exc.strerror}") from None
        except ValueError as exc:
            raise ScenarioError(f"{path}.trace_file", str(exc)) from None
    return _build(IrradianceModel, path, kw)


def _parse_placement(raw: Any) -> dict[str, int] | None:
    if raw is None:
        return None
    if not isinstance(raw, Mapping):
        raise ScenarioError("placement", "expected a mapping of service name to node id")
    return {str(k): _num(v, f"placement.{k}", integer=True) for k, v in raw.items()}


def _parse_loads(raw: Any) -> tuple[LoadRow, ...]:
    if raw is None:
        return DEFAULT_LOADS
    if not isinstance(raw, list):
        raise ScenarioError("loads", "expected a list")
    rows = []
    for i, item in enumerate(raw):
        path = f"loads[{i}]"
        item = _section(item, path, {"name", "level", "bus_w"})
        if "level" not in item:
            raise ScenarioError(f"{path}.level", "required")
        level = _level(item["level"], f"{path}.level")
        kw = _numbers(item, path, {"bus_w": _OPT})
        rows.append(_build(LoadRow, path, {"name": str(item.get("name", level)), "level": level, **kw}))
    return tuple(rows)


SECTIONS = {
    "metadata", "battery", "array", "irradiance", "converter", "charging",
    "nodes", "services", "placement", "loads", "sim",
}


def scenario_from_dict(data: Any, base_dir: str | Path | None = None) -> Scenario:
    """Build and validate a scenario from parsed YAML. Missing sections take defaults."""
    base = Path(base_dir) if base_dir is not None else None
    data = _section(data, "", SECTIONS)

    meta = _section(data.get("metadata"), "metadata", {"name", "description"})
    metadata = {k: str(v) for k, v in meta.items()}

    bspec = {"nominal_voltage": _F, "capacity_ah": _F, "usable_fraction": _F,
             "charge_efficiency": _F, "initial_soc_fraction": _F}
    braw = _section(data.get("battery"), "battery", set(bspec))
    bkw = _numbers(braw, "battery", bspec)
    initial = bkw.pop("initial_soc_fraction", 1.0)
    battery = _build(Battery, "battery", bkw)

    aspec = {f.name: _F for f in fields(PanelArray)}
    array = _build(PanelArray, "array", _numbers(_section(data.get("array"), "array", set(aspec)), "array", aspec))

    cspec = {f.name: _F for f in fields(DcDcConverter)}
    converter = _build(DcDcConverter, "converter",
                       _numbers(_section(data.get("converter"), "converter", set(cspec)), "converter", cspec))

    chspec = {"controller_limit_w": _OPT, "effective_charge_w": _OPT, "backup_w": _F, "backup_limit_w": _OPT}
    charging = _build(Charging, "charging",
                      _numbers(_section(data.get("charging"), "charging", set(chspec)), "charging", chspec))

    sspec = {"dt": _F, "duration": _F, "shutdown_soc_fraction": _F, "restart_soc_fraction": _F, "seed": _INT}
    sim = _build(SimConfig, "sim", _numbers(_section(data.get("sim"), "sim", set(sspec)), "sim", sspec))

    scenario = Scenario(
        battery=battery,
        array=array,
        irradiance=_parse_irradiance(data.get("irradiance"), base),
        converter=converter,
        charging=charging,
        nodes=_parse_nodes(data.get("nodes")),
        services=_parse_services(data.get("services")),
        placement=_parse_placement(data.get("placement")),
        loads=_parse_loads(data.get("loads")),
        sim=sim,
        initial_soc_fraction=initial,
        metadata=metadata,
    )
    return scenario.validate()


def scenario_to_dict(s: Scenario) -> dict:
    """Plain-data form of a scenario; ``scenario_from_dict`` inverts it exactly."""
    b = s.battery
    irr = s.irradiance
    irr_d: dict[str, Any] = {"kind": irr.kind}
    if irr.kind == "clear_sky":
        irr_d.update(sunrise=irr.sunrise, sunset=irr.sunset)
    else:
        irr_d["points"] = [list(p) for p in irr.points]
    c = irr.clouds
    irr_d["clouds"] = {
        "kind": c.kind, "attenuation": c.attenuation, "p_clear_to_cloudy": c.p_clear_to_cloudy,
        "p_cloudy_to_clear": c.p_cloudy_to_clear, "cloudy_attenuation": c.cloudy_attenuation,
        "seed": c.seed, "step_h": c.step_h,
    }
    return {
        "metadata": dict(s.metadata),
        "battery": {
            "nominal_voltage": b.nominal_voltage, "capacity_ah": b.capacity_ah,
            "usable_fraction": b.usable_fraction, "charge_efficiency": b.charge_efficiency,
            "initial_soc_fraction": s.initial_soc_fraction,
        },
        "array": {f.name: getattr(s.array, f.name) for f in fields(PanelArray)},
        "irradiance": irr_d,
        "converter": {f.name: getattr(s.converter, f.name) for f in fields(DcDcConverter)},
        "charging": {f.name: getattr(s.charging, f.name) for f in fields(Charging)},
        "nodes": [
            {
                "id": n.id, "role": n.role,
                "profile": {f.name: getattr(n.profile, f.name) for f in fields(NodePowerProfile)},
                "cpu_millicores": n.cpu_millicores, "mem_mb": n.mem_mb, "powered": n.powered,
            }
            for n in s.nodes
        ],
        "services": [
            {
                "name": sv.name, "cpu_millicores": sv.cpu_millicores, "mem_mb": sv.mem_mb,
                "priority": sv.priority, "load": sv.load_contribution.to_config(),
            }
            for sv in s.services
        ],
        "placement": dict(s.placement) if s.placement is not None else None,
        "loads": [{"name": r.name, "level": r.level.to_config(), "bus_w": r.bus_w} for r in s.loads],
        "sim": {f.name: getattr(s.sim, f.name) for f in fields(SimConfig)},
    }


def dump_scenario(s: Scenario) -> str:
    return yaml.safe_dump(scenario_to_dict(s), sort_keys=False, default_flow_style=False)


def load_scenario(path: str | Path) -> Scenario:
    path = Path(path)
    text = path.read_text()
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ScenarioError("", f"{path}: not valid YAML: {exc}") from None
    return scenario_from_dict(data, base_dir=path.parent)


def save_scenario(s: Scenario, path: str | Path) -> None:
    Path(path).write_text(dump_scenario(s))


# -- stock scenarios ----------------------------------------------------------

def default_scenario() -> Scenario:
    return Scenario(metadata={"name": "default", "description": "5-node cluster, 100 Ah @ 12 V, 200 W array"})


def battery_20ah_scenario() -> Scenario:
    """The default cluster on the 20 Ah battery listed in the hardware inventory."""
    return replace(
        default_scenario(),
        battery=Battery(capacity_ah=20.0),
        metadata={"name": "battery-20ah", "description": "default cluster with a 20 Ah @ 12 V battery"},
    )


DARK = IrradianceModel(kind="trace", points=((0.0, 0.0),))


def constant_load_scenario(level: str | LoadLevel = "idle", bus_w: float | None = 7.0,
                           duration: float = 200.0, dt: float = 0.05) -> Scenario:
    """No sun, every node hosting one service at ``level``, shutdown at the usable floor.

    The converter efficiency is set so the bus draws exactly ``bus_w``.
    """
    level = LoadLevel.parse(level)
    nodes = default_nodes()
    services = tuple(
        ServiceSpec(f"svc{n.id}", 500, 128, priority=n.id, load_contribution=level) for n in nodes
    )
    out_w = math.fsum(node_power(n.profile, level) for n in nodes)
    eff = 1.0 if bus_w is None else out_w / bus_w
    return Scenario(
        irradiance=DARK,
        converter=DcDcConverter(efficiency=eff),
        nodes=nodes,
        services=services,
        placement={s.name: i for i, s in enumerate(services)},
        sim=SimConfig(dt=dt, duration=duration, shutdown_soc_fraction=0.0, restart_soc_fraction=0.25),
        metadata={"name": f"dark-{level}", "description": "no solar input, constant bus load"},
    ).validate()


# -- sweeps -----------------------------------------------------------------

def _set_capacity(s: Scenario, value: str) -> Scenario:
    wh = float(value)
    return replace(s, battery=replace(s.battery, capacity_ah=wh / s.battery.nominal_voltage, soc_wh=None))


def _set_array_rating(s: Scenario, value: str) -> Scenario:
    return replace(s, array=replace(s.array, rated_w=float(value)))


def _set_cloud_attenuation(s: Scenario, value: str) -> Scenario:
    clouds = CloudModel(kind="constant", attenuation=float(value))
    return replace(s, irradiance=replace(s.irradiance, clouds=clouds))


def _set_load_level(s: Scenario, value: str) -> Scenario:
    level = LoadLevel.parse(value)
    return replace(s, services=tuple(replace(sv, load_contribution=level) for sv in s.services))


#: Parameters a sweep may vary: name -> (meaning, setter).
SWEEP_PARAMETERS: dict[str, tuple[str, Callable[[Scenario, str], Scenario]]] = {
    "capacity": ("battery capacity in Wh", _set_capacity),
    "array_rating": ("array rated power in W", _set_array_rating),
    "cloud_attenuation": ("constant fraction of irradiance blocked", _set_cloud_attenuation),
    "load_level": ("load level of every service: idle|moderate|max|<watts>", _set_load_level),
}


def apply_sweep_value(s: Scenario, param: str, value: str) -> Scenario:
    if param not in SWEEP_PARAMETERS:
        raise ScenarioError("sweep.param", f"unknown parameter {param!r}; choose one of: "
                            + ", ".join(SWEEP_PARAMETERS))
    try:
        return SWEEP_PARAMETERS[param][1](s, value).validate()
    except ScenarioError:
        raise
    except ValueError as exc:
        raise ScenarioError(f"sweep.{param}", f"bad value {value!r}: {exc}") from None
