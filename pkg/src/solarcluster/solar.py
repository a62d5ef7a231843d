"""PV charging power as a function of time, weather and panel age."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np


@dataclass(frozen=True)
class PanelArray:
    rated_w: float = 200.0
    derating: float = 0.8
    degradation_per_year: float = 0.005
    age_years: float = 0.0

    def __post_init__(self) -> None:
        if not self.rated_w > 0:
            raise ValueError("rated_w must be > 0")
        if not 0 < self.derating <= 1:
            raise ValueError("derating must be in (0, 1]")
        if not 0 <= self.degradation_per_year < 1:
            raise ValueError("degradation_per_year must be in [0, 1)")
        if not self.age_years >= 0:
            raise ValueError("age_years must be >= 0")

    @property
    def effective_w(self) -> float:
        return self.rated_w * self.derating * (1.0 - self.degradation_per_year) ** self.age_years


@dataclass(frozen=True)
class CloudModel:
    """Fraction of irradiance blocked by cloud.

    ``kind`` is ``"none"``, ``"constant"`` (fixed ``attenuation``) or
    ``"two_state"``: a clear/cloudy Markov chain advanced once per ``step_h``
    hours, starting clear, driven only by ``seed``. The chain has its own step
    length so refining the simulator's dt does not change the weather.
    """

    kind: str = "none"
    attenuation: float = 0.0
    p_clear_to_cloudy: float = 0.0
    p_cloudy_to_clear: float = 1.0
    cloudy_attenuation: float = 0.0
    seed: int | None = None
    step_h: float = 1.0

    def __post_init__(self) -> None:
        if self.kind not in ("none", "constant", "two_state"):
            raise ValueError(f"unknown cloud model {self.kind!r}")
        for name in ("attenuation", "p_clear_to_cloudy", "p_cloudy_to_clear", "cloudy_attenuation"):
            v = getattr(self, name)
            if not 0 <= v <= 1:
                raise ValueError(f"{name} must be in [0, 1], got {v!r}")
        if not self.step_h > 0:
            raise ValueError("step_h must be > 0")

    def cloudy_states(self, n: int, seed: int | None = None) -> np.ndarray:
        """Boolean cloudy flags for the first ``n`` chain steps.

        One uniform draw per step, so ``cloudy_states(m)`` is a prefix of
        ``cloudy_states(n)`` for ``m <= n``.
        """
        seed = self.seed if self.seed is not None else seed
        if seed is None:
            raise ValueError("two_state cloud model needs a seed")
        draws = np.random.default_rng(seed).random(n)
        states = np.zeros(n, dtype=bool)
        cloudy = False
        for i in range(n):
            states[i] = cloudy
            if cloudy:
                cloudy = not draws[i] < self.p_cloudy_to_clear
            else:
                cloudy = draws[i] < self.p_clear_to_cloudy
        return states

    def attenuation_series(self, times: np.ndarray, seed: int | None = None) -> np.ndarray:
        times = np.asarray(times, dtype=float)
        if self.kind == "none":
            return np.zeros_like(times)
        if self.kind == "constant":
            return np.full_like(times, self.attenuation)
        idx = np.floor(times / self.step_h).astype(np.int64)
        n = int(idx.max()) + 1 if idx.size else 0
        states = self.cloudy_states(n, seed)
        return np.where(states[idx], self.cloudy_attenuation, 0.0)


@dataclass(frozen=True)
class IrradianceModel:
    """Normalised irradiance in [0, 1].

    ``kind="clear_sky"`` is a half-sine between ``sunrise`` and ``sunset``
    (hours of day, repeating every 24 h). ``kind="trace"`` interpolates
    ``points`` of ``(time_h, fraction)`` linearly, holding the end values.
    """

    kind: str = "clear_sky"
    sunrise: float = 6.0
    sunset: float = 18.0
    points: tuple[tuple[float, float], ...] = ()
    clouds: CloudModel = field(default_factory=CloudModel)

    def __post_init__(self) -> None:
        if self.kind == "clear_sky":
            if not 0 <= self.sunrise < self.sunset <= 24:
                raise ValueError(
                    f"clear sky needs 0 <= sunrise < sunset <= 24, got {self.sunrise}, {self.sunset}"
                )
        elif self.kind == "trace":
            if not self.points:
                raise ValueError("trace irradiance needs at least one point")
            times = [p[0] for p in self.points]
            if any(b <= a for a, b in zip(times, times[1:])):
                raise ValueError("trace times must be strictly increasing")
            object.__setattr__(self, "points", tuple((float(a), float(b)) for a, b in self.points))
        else:
            raise ValueError(f"unknown irradiance model {self.kind!r}")

    def sky_fraction(self, times: np.ndarray) -> np.ndarray:
        """Cloud-free irradiance at each time."""
        times = np.asarray(times, dtype=float)
        if self.kind == "clear_sky":
            tau = np.mod(times, 24.0)
            day = (tau >= self.sunrise) & (tau <= self.sunset)
            phase = np.pi * (tau - self.sunrise) / (self.sunset - self.sunrise)
            return np.where(day, np.clip(np.sin(phase), 0.0, 1.0), 0.0)
        xs = np.array([p[0] for p in self.points])
        ys = np.array([p[1] for p in self.points])
        return np.clip(np.interp(times, xs, ys), 0.0, 1.0)

    def series(self, times: Sequence[float], seed: int | None = None) -> np.ndarray:
        times = np.asarray(times, dtype=float)
        if np.any(times < 0):
            raise ValueError("irradiance times must be >= 0")
        out = self.sky_fraction(times) * (1.0 - self.clouds.attenuation_series(times, seed))
        return np.clip(out, 0.0, 1.0)


def irradiance_at(model: IrradianceModel, t: float, seed: int | None = None) -> float:
    """Irradiance fraction at ``t`` hours after scenario start."""
    if t < 0:
        raise ValueError(f"t must be >= 0, got {t!r}")
    return float(model.series([t], seed)[0])


def array_output(array: PanelArray, irradiance: float) -> float:
    if not 0 <= irradiance <= 1:
        raise ValueError(f"irradiance must be in [0, 1], got {irradiance!r}")
    return array.effective_w * irradiance


def harvest(
    available_w: float,
    controller_limit_w: float,
    battery_headroom_wh: float,
    dt: float,
    charge_efficiency: float = 1.0,
) -> float:
    """Charging power actually delivered: the smallest of what the source offers,
    what the controller passes, and what the battery can still absorb over ``dt``.
    """
    if min(available_w, controller_limit_w, battery_headroom_wh) < 0 or not dt > 0:
        raise ValueError("harvest inputs must be >= 0 and dt > 0")
    headroom_w = battery_headroom_wh / (dt * charge_efficiency)
    return min(available_w, controller_limit_w, headroom_w)


def clear_sky_daily_energy(array: PanelArray, sunrise: float = 6.0, sunset: float = 18.0) -> float:
    """Closed-form integral of the half-sine profile over one day, in Wh."""
    return array.effective_w * (2.0 / math.pi) * (sunset - sunrise)


def read_trace(path: str | Path) -> tuple[tuple[float, float], ...]:
    """Read ``time_hours, fraction`` rows (comma or whitespace separated).

    Blank lines and ``#`` comments are skipped, as is a leading non-numeric
    header row.
    """
    rows: list[tuple[float, float]] = []
    seen_content = False
    with open(path, newline="") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            first, seen_content = not seen_content, True
            parts = next(csv.reader([line])) if "," in line else line.split()
            if len(parts) != 2:
                raise ValueError(f"{path}:{lineno}: expected 2 columns, got {len(parts)}")
            try:
                t, frac = float(parts[0]), float(parts[1])
            except ValueError:
                if first:
                    continue
                raise ValueError(f"{path}:{lineno}: non-numeric row {line!r}") from None
            if rows and t <= rows[-1][0]:
                raise ValueError(f"{path}:{lineno}: times must be strictly increasing")
            rows.append((t, frac))
    if not rows:
        raise ValueError(f"{path}: no data rows")
    return tuple(rows)
