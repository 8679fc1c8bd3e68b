"""Deterministic surrogate of a liquefy-and-store production plant.

The plant tracks a production setpoint with a first-order lag. Production
above demand is liquefied into a storage tank; production below demand is
made up by evaporating stored product. Electricity is priced per step, a
quadratic penalty pushes storage toward a target over the last few steps,
and a bonus is paid when the final storage meets the target.

All quantities are in normalized units (tank capacity 1.0 by default).
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import ConfigError, ParseError, UsageError, ValidationError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class EnvParams:
    horizon_steps: int = 72
    dt: float = 1.0
    tank_capacity: float = 1.0
    demand: float = 0.05
    u_min: float = 0.035
    u_max: float = 0.065
    tracking_lag: float = 0.5
    c0: float = 0.2
    c1: float = 1.0
    c2: float = 0.6
    terminal_target: float = 0.6
    terminal_tolerance: float = 0.05
    penalty_weight: float = 10.0
    # None means horizon_steps - 4
    activation_time: int | None = None
    terminal_bonus: float = 5.0
    forecast_len: int = 12
    initial_level: float = 0.3
    # divides prices in the observation vector only
    price_scale: float = 1.0
    observe_step_index: bool = True

    def __post_init__(self):
        if self.activation_time is None:
            object.__setattr__(self, "activation_time", self.horizon_steps - 4)
        self.validate()

    def validate(self):
        checks = [
            (self.horizon_steps >= 1, "horizon_steps must be >= 1"),
            (self.dt > 0, "dt must be > 0"),
            (self.tank_capacity > 0, "tank_capacity must be > 0"),
            (self.demand > 0, "demand must be > 0"),
            (0 < self.u_min < self.u_max, "need 0 < u_min < u_max"),
            (0 < self.tracking_lag <= 1, "tracking_lag must be in (0, 1]"),
            (0 <= self.terminal_target <= self.tank_capacity,
             "terminal_target must be in [0, tank_capacity]"),
            (self.terminal_tolerance >= 0, "terminal_tolerance must be >= 0"),
            (self.penalty_weight > 0, "penalty_weight must be > 0"),
            (self.activation_time < self.horizon_steps,
             "activation_time must be < horizon_steps"),
            (self.forecast_len >= 1, "forecast_len must be >= 1"),
            (0 <= self.initial_level <= self.tank_capacity,
             "initial_level must be in [0, tank_capacity]"),
            (self.price_scale > 0, "price_scale must be > 0"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ValidationError(msg)

    @property
    def obs_dim(self) -> int:
        return 3 + self.forecast_len + int(self.observe_step_index)

    def satisfied(self, level: float) -> bool:
        """Terminal constraint test on a final storage level."""
        return (level >= self.terminal_target
                or abs(level - self.terminal_target) <= self.terminal_tolerance)

    def setpoint_from_action(self, action) -> float:
        """Affine map from the agent's normalized action in [-1, 1]."""
        a = float(np.clip(np.asarray(action, dtype=float).reshape(-1)[0], -1.0, 1.0))
        return self.u_min + 0.5 * (a + 1.0) * (self.u_max - self.u_min)


@dataclass(frozen=True)
class PriceProfile:
    prices: tuple[float, ...]

    def __post_init__(self):
        if len(self.prices) == 0:
            raise ValidationError("price profile is empty")
        if any(not math.isfinite(p) or p < 0 for p in self.prices):
            raise ValidationError("prices must be finite and non-negative")

    def __len__(self):
        return len(self.prices)

    def window(self, start: int, length: int, horizon: int) -> tuple[float, ...]:
        # past the horizon end, hold the last in-horizon price
        last = min(horizon, len(self.prices)) - 1
        return tuple(self.prices[min(start + k, last)] for k in range(length))


@dataclass(frozen=True)
class EnvState:
    tank_level: float
    production: float
    t: int
    time_of_day: float
    price_forecast: tuple[float, ...]
    # unmet demand (mol) in the step that produced this state
    shortfall: float = 0.0


@dataclass(frozen=True)
class RewardBreakdown:
    elec: float
    path: float
    terminal: float
    total: float = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "total", self.elec + self.path + self.terminal)


def _check_profile(params: EnvParams, profile: PriceProfile):
    if len(profile) < params.horizon_steps:
        raise ConfigError(
            f"price profile has {len(profile)} entries, horizon needs "
            f"{params.horizon_steps}")


def reset(params: EnvParams, profile: PriceProfile,
          initial_level: float | None = None) -> EnvState:
    _check_profile(params, profile)
    level = params.initial_level if initial_level is None else float(initial_level)
    if not 0.0 <= level <= params.tank_capacity:
        raise ValidationError(f"initial level {level} outside [0, {params.tank_capacity}]")
    return EnvState(
        tank_level=level,
        production=params.demand,
        t=0,
        time_of_day=0.0,
        price_forecast=profile.window(0, params.forecast_len, params.horizon_steps),
    )


def liquefied_fraction(production: float, demand: float) -> float:
    if production > demand:
        return 1.0 - demand / production
    return 0.0


def path_penalty(state: EnvState, params: EnvParams) -> float:
    h = params.terminal_target - state.tank_level
    if h > 0 and state.t > params.activation_time:
        return -params.penalty_weight * h * h
    return 0.0


def step(state: EnvState, setpoint: float, params: EnvParams,
         profile: PriceProfile) -> tuple[EnvState, RewardBreakdown, bool]:
    """Advance one step under a production setpoint (clamped to bounds)."""
    T = params.horizon_steps
    if state.t >= T:
        raise UsageError(f"step called on finished episode (t={state.t}, T={T})")
    _check_profile(params, profile)

    u = min(max(float(setpoint), params.u_min), params.u_max)
    prod = state.production + params.tracking_lag * (u - state.production)
    xi = liquefied_fraction(prod, params.demand)
    liquefied = xi * prod
    evaporation = max(0.0, params.demand - prod)

    raw = state.tank_level + (liquefied - evaporation) * params.dt
    level = min(max(raw, 0.0), params.tank_capacity)
    shortfall = max(0.0, -raw)
    if shortfall > 0:
        log.debug("tank empty at t=%d, unmet demand %.4g", state.t, shortfall)

    power = params.c0 + params.c1 * prod + params.c2 * liquefied
    elec = -profile.prices[state.t] * power * params.dt

    t1 = state.t + 1
    nxt = EnvState(
        tank_level=level,
        production=prod,
        t=t1,
        time_of_day=(t1 * params.dt) % 24.0,
        price_forecast=profile.window(t1, params.forecast_len, T),
        shortfall=shortfall,
    )
    done = t1 == T
    terminal = params.terminal_bonus if done and params.satisfied(level) else 0.0
    reward = RewardBreakdown(elec=elec, path=path_penalty(nxt, params), terminal=terminal)
    return nxt, reward, done


def observe(state: EnvState, params: EnvParams) -> np.ndarray:
    """Flat observation vector fed to the networks."""
    half_range = 0.5 * (params.u_max - params.u_min)
    feats = [
        state.tank_level / params.tank_capacity,
        (state.production - params.demand) / half_range,
        state.time_of_day / 24.0,
    ]
    feats.extend(p / params.price_scale for p in state.price_forecast)
    if params.observe_step_index:
        feats.append(state.t / params.horizon_steps)
    return np.asarray(feats, dtype=float)


def generate_price_profile(seed: int, T: int = 72, base: float = 1.0,
                           amplitude: float = 0.5, noise_std: float = 0.05,
                           dt: float = 1.0) -> PriceProfile:
    """Day-night sinusoid plus Gaussian noise, clipped at zero."""
    if amplitude >= base:
        raise ValidationError("amplitude must be < base to keep prices positive")
    rng = np.random.default_rng(seed)
    hours = (np.arange(T) * dt) % 24.0
    p = base + amplitude * np.sin(2.0 * np.pi * hours / 24.0)
    if noise_std > 0:
        p = p + rng.normal(0.0, noise_std, size=T)
    return PriceProfile(tuple(float(x) for x in np.clip(p, 0.0, None)))


def load_price_profile(path) -> PriceProfile:
    """Read one price per line, or a CSV with a ``price`` column."""
    text = Path(path).read_text()
    lines = text.splitlines()
    first = next((ln for ln in lines if ln.strip()), "")
    if "price" in first.lower():
        reader = csv.DictReader(lines)
        if reader.fieldnames is None or "price" not in [f.strip() for f in reader.fieldnames]:
            raise ParseError("CSV header has no 'price' column", line=1)
        key = next(f for f in reader.fieldnames if f.strip() == "price")
        rows = [(i + 2, row[key]) for i, row in enumerate(reader)]
    else:
        rows = [(i + 1, ln) for i, ln in enumerate(lines)]

    prices = []
    for lineno, raw in rows:
        raw = (raw or "").strip()
        if not raw:
            continue
        try:
            value = float(raw)
        except ValueError:
            raise ParseError(f"not a number: {raw!r}", line=lineno) from None
        if not math.isfinite(value) or value < 0:
            raise ValidationError(f"line {lineno}: price must be finite and >= 0, got {raw}")
        prices.append(value)
    if not prices:
        raise ValidationError(f"{path}: no prices found")
    return PriceProfile(tuple(prices))


def save_price_profile(profile: PriceProfile, path):
    with open(path, "w", newline="") as fh:
        fh.write("price\n")
        for p in profile.prices:
            fh.write(f"{p!r}\n")


def with_overrides(params: EnvParams, **changes) -> EnvParams:
    return replace(params, **changes)
