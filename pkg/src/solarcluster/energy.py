"""Electrical arithmetic of the power chain.

Node draw on the 5 V rail -> DC-DC converter -> 12 V battery bus -> autonomy,
recharge budget and single-step state-of-charge updates.

Units throughout: watts, watt-hours, hours, amperes, volts.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Sequence

#: Charge power that reproduces the three recharge-time rows of the
#: reference deployment (least-squares fit of load/power against the
#: published hours). Not a measured quantity.
FITTED_EFFECTIVE_CHARGE_W = 35.67

#: Fraction of nominal battery energy the reference autonomy figures use.
FITTED_USABLE_FRACTION = 0.9

CANONICAL_LEVELS = ("idle", "moderate", "max")


@dataclass(frozen=True)
class LoadLevel:
    """Load level of a single node: one of the three benchmarks or a custom wattage."""

    kind: str
    power_w: float | None = None

    def __post_init__(self) -> None:
        if self.kind == "custom":
            if self.power_w is None or not math.isfinite(self.power_w) or self.power_w < 0:
                raise ValueError(f"custom load power must be finite and >= 0, got {self.power_w!r}")
        elif self.kind in CANONICAL_LEVELS:
            if self.power_w is not None:
                raise ValueError(f"{self.kind} level takes no power value")
        else:
            raise ValueError(f"unknown load level {self.kind!r}")

    @classmethod
    def custom(cls, power_w: float) -> "LoadLevel":
        return cls("custom", float(power_w))

    @classmethod
    def parse(cls, value: "str | float | int | LoadLevel") -> "LoadLevel":
        """Accept ``"idle"``/``"moderate"``/``"max"``, a wattage, or a level."""
        if isinstance(value, LoadLevel):
            return value
        if isinstance(value, bool):
            raise ValueError(f"invalid load level {value!r}")
        if isinstance(value, (int, float)):
            return cls.custom(value)
        text = str(value).strip().lower()
        if text in CANONICAL_LEVELS:
            return cls(text)
        try:
            return cls.custom(float(text.removesuffix("w")))
        except ValueError:
            raise ValueError(f"invalid load level {value!r}") from None

    def to_config(self) -> "str | float":
        return self.power_w if self.kind == "custom" else self.kind

    def __str__(self) -> str:
        return f"custom({self.power_w:g} W)" if self.kind == "custom" else self.kind


IDLE = LoadLevel("idle")
MODERATE = LoadLevel("moderate")
MAX = LoadLevel("max")


@dataclass(frozen=True)
class NodePowerProfile:
    """Per-node current draw at each benchmark level (Raspberry Pi 3 B defaults).

    The measured currents are the source of truth: 5 V x {0.26, 0.48, 0.73} A
    gives {1.30, 2.40, 3.65} W. Commonly quoted per-node figures of 1.4 W and
    3.7 W are rounded up from these and are not used anywhere.
    """

    supply_voltage: float = 5.0
    idle_current: float = 0.260
    moderate_current: float = 0.480
    max_current: float = 0.730

    def __post_init__(self) -> None:
        if not self.supply_voltage > 0:
            raise ValueError("supply_voltage must be > 0")
        if not 0 < self.idle_current <= self.moderate_current <= self.max_current:
            raise ValueError(
                "currents must satisfy 0 < idle_current <= moderate_current <= max_current, got "
                f"{self.idle_current}, {self.moderate_current}, {self.max_current}"
            )

    def current(self, level: LoadLevel) -> float:
        if level.kind == "custom":
            return level.power_w / self.supply_voltage
        return {
            "idle": self.idle_current,
            "moderate": self.moderate_current,
            "max": self.max_current,
        }[level.kind]


@dataclass(frozen=True)
class DcDcConverter:
    """12 V -> 5 V buck regulator; input power = output power / efficiency."""

    efficiency: float = 0.95
    max_output_current: float = 8.0

    def __post_init__(self) -> None:
        if not 0 < self.efficiency <= 1:
            raise ValueError(f"converter efficiency must be in (0, 1], got {self.efficiency!r}")
        if not self.max_output_current > 0:
            raise ValueError("max_output_current must be > 0")

    def input_power(self, output_w: float) -> float:
        return output_w / self.efficiency


@dataclass(frozen=True)
class Battery:
    nominal_voltage: float = 12.0
    capacity_ah: float = 100.0
    usable_fraction: float = FITTED_USABLE_FRACTION
    charge_efficiency: float = 0.95
    soc_wh: float | None = None

    def __post_init__(self) -> None:
        if not self.nominal_voltage > 0:
            raise ValueError("nominal_voltage must be > 0")
        if not self.capacity_ah > 0:
            raise ValueError("capacity_ah must be > 0")
        if not 0 < self.usable_fraction <= 1:
            raise ValueError("usable_fraction must be in (0, 1]")
        if not 0 < self.charge_efficiency <= 1:
            raise ValueError("charge_efficiency must be in (0, 1]")
        if self.soc_wh is None:
            object.__setattr__(self, "soc_wh", self.capacity_wh)
        elif not 0 <= self.soc_wh <= self.capacity_wh:
            raise ValueError(f"soc_wh must be in [0, {self.capacity_wh}], got {self.soc_wh!r}")

    @property
    def capacity_wh(self) -> float:
        return self.nominal_voltage * self.capacity_ah

    @property
    def usable_wh(self) -> float:
        return self.capacity_wh * self.usable_fraction

    @property
    def reserve_wh(self) -> float:
        """Energy below the usable window, never planned for consumption."""
        return self.capacity_wh - self.usable_wh

    @property
    def headroom_wh(self) -> float:
        return self.capacity_wh - self.soc_wh


@dataclass(frozen=True)
class ChargeSource:
    """A charging input: the PV array through its controller, or a constant grid backup.

    ``kind`` is ``"solar"`` or ``"grid"``. Solar power comes from the simulator's
    irradiance path; ``power_w`` is the constant output of a grid backup.
    """

    kind: str
    max_charge_power: float
    power_w: float = 0.0

    def __post_init__(self) -> None:
        if self.kind not in ("solar", "grid"):
            raise ValueError(f"unknown charge source kind {self.kind!r}")
        if not self.max_charge_power >= 0 or not math.isfinite(self.max_charge_power):
            raise ValueError("max_charge_power must be finite and >= 0")
        if not self.power_w >= 0:
            raise ValueError("power_w must be >= 0")


@dataclass(frozen=True)
class BusPower:
    power_w: float
    current_5v_a: float

    def __iter__(self):
        return iter((self.power_w, self.current_5v_a))


@dataclass(frozen=True)
class SocStep:
    battery: Battery
    spill_wh: float
    deficit_wh: float


def node_power(profile: NodePowerProfile, level: LoadLevel) -> float:
    """Power drawn by one node on its 5 V rail."""
    if level.kind == "custom":
        return level.power_w
    return profile.current(level) * profile.supply_voltage


def cluster_bus_power(
    profiles: Sequence[NodePowerProfile],
    levels: Sequence[LoadLevel],
    conv: DcDcConverter,
) -> BusPower:
    """Battery-side power of the powered-on nodes, plus their total 5 V current.

    An empty node list is a valid, zero-power cluster.
    """
    if len(profiles) != len(levels):
        raise ValueError(f"got {len(profiles)} profiles but {len(levels)} load levels")
    out_w = math.fsum(node_power(p, lv) for p, lv in zip(profiles, levels))
    current = math.fsum(p.current(lv) for p, lv in zip(profiles, levels))
    return BusPower(conv.input_power(out_w), current)


def autonomy_hours(batt: Battery, load_w: float) -> float:
    """Hours a full battery sustains a constant bus load using only its usable energy."""
    if not load_w > 0:
        raise ValueError(f"autonomy is undefined for load_w={load_w!r}; load must be > 0")
    return batt.capacity_wh * batt.usable_fraction / load_w


def recharge_time_per_hour(load_w: float, effective_charge_power_w: float) -> float:
    """Charging hours needed to put back one hour of consumption at ``load_w``."""
    if not effective_charge_power_w > 0:
        raise ValueError(
            f"effective charge power must be > 0, got {effective_charge_power_w!r}"
        )
    if not load_w > 0:
        raise ValueError(f"load must be > 0, got {load_w!r}")
    return load_w / effective_charge_power_w


def implied_efficiency(output_w: float, bus_w: float) -> float:
    """Converter efficiency implied by a 5 V draw and a quoted bus power."""
    if not bus_w > 0:
        raise ValueError("bus power must be > 0")
    return output_w / bus_w


def soc_step(batt: Battery, charge_w: float, discharge_w: float, dt: float) -> SocStep:
    """Advance the stored energy by one step and clamp it to ``[0, capacity_wh]``.

    Energy clamped off at the top is returned as ``spill_wh``; energy the load
    asked for but the battery could not supply is ``deficit_wh``. Together
    they close the balance
    ``soc' - soc = (charge*eff - discharge)*dt - spill + deficit``.
    """
    if not dt > 0:
        raise ValueError(f"dt must be > 0, got {dt!r}")
    if charge_w < 0 or discharge_w < 0:
        raise ValueError("charge_w and discharge_w must be >= 0")
    raw = batt.soc_wh + (charge_w * batt.charge_efficiency - discharge_w) * dt
    spill = deficit = 0.0
    if raw > batt.capacity_wh:
        spill = raw - batt.capacity_wh
        soc = batt.capacity_wh
    elif raw < 0.0:
        deficit = -raw
        soc = 0.0
    else:
        soc = raw
    return SocStep(replace(batt, soc_wh=soc), spill, deficit)
