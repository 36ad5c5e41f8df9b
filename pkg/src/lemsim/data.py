"""Scenario construction: prosumer groups, hourly profiles, and rosters."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .market import BatterySpec

HOURS = 24


class ProfileError(ValueError):
    pass


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class GroupSpec:
    group_id: int
    has_pv: bool
    has_ess: bool
    lem_a: tuple[int, int]  # inclusive 1-based agent ids
    lem_b: tuple[int, int]

    def size(self, market: str) -> int:
        lo, hi = self.lem_a if market == "LEM_A" else self.lem_b
        return hi - lo + 1


GROUPS = (
    GroupSpec(1, has_pv=False, has_ess=False, lem_a=(1, 8), lem_b=(1, 38)),
    GroupSpec(2, has_pv=False, has_ess=True, lem_a=(9, 13), lem_b=(39, 63)),
    GroupSpec(3, has_pv=True, has_ess=False, lem_a=(14, 16), lem_b=(64, 76)),
    GroupSpec(4, has_pv=True, has_ess=True, lem_a=(17, 20), lem_b=(77, 100)),
)
MARKETS = {"LEM_A": 20, "LEM_B": 100}


def group_counts(market: str) -> tuple[int, ...]:
    if market not in MARKETS:
        raise ConfigError(f"unknown market {market!r}; expected one of {sorted(MARKETS)}")
    return tuple(g.size(market) for g in GROUPS)


@dataclass(frozen=True)
class Profile:
    kind: str  # "demand" | "pv" | "price"
    values: np.ndarray
    units: str

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.shape != (HOURS,):
            raise ProfileError(f"{self.kind} profile must have {HOURS} points, got {vals.shape}")
        if np.any(vals < 0) or not np.all(np.isfinite(vals)):
            raise ProfileError(f"{self.kind} profile has negative or non-finite values")
        object.__setattr__(self, "values", vals)


UNITS = {"demand": "kW", "pv": "kW", "price": "EUR/kWh"}

# Hourly shapes: demand peaks in the morning and evening, PV is a midday
# bell, the spot price is cheap from evening to early morning and peaks
# mid-morning.
_DEMAND = [0.45, 0.40, 0.38, 0.37, 0.38, 0.45, 0.75, 1.15, 1.25, 0.95, 0.75, 0.70,
           0.72, 0.70, 0.68, 0.75, 0.95, 1.35, 1.60, 1.65, 1.45, 1.15, 0.85, 0.60]
_PRICE = [0.08, 0.07, 0.07, 0.07, 0.07, 0.08, 0.09, 0.12, 0.42, 0.47, 0.48, 0.45,
          0.40, 0.35, 0.31, 0.27, 0.22, 0.12, 0.11, 0.10, 0.10, 0.09, 0.09, 0.08]


def pv_bell(peak_kw: float, sunrise: int = 6, sunset: int = 19) -> np.ndarray:
    h = np.arange(HOURS, dtype=float)
    phase = np.clip((h - sunrise) / (sunset - sunrise), 0.0, 1.0)
    out = peak_kw * np.sin(np.pi * phase) ** 1.5
    out[(h <= sunrise) | (h >= sunset)] = 0.0
    return out


def default_profiles() -> "Profiles":
    demand = {g.group_id: Profile("demand", np.array(_DEMAND), "kW") for g in GROUPS}
    pv = {3: Profile("pv", pv_bell(4.0), "kW"), 4: Profile("pv", pv_bell(3.5), "kW")}
    return Profiles(demand=demand, pv=pv, price=Profile("price", np.array(_PRICE), "EUR/kWh"))


@dataclass(frozen=True)
class Profiles:
    demand: dict  # group id -> Profile
    pv: dict  # group id -> Profile, PV groups only
    price: Profile


def read_profile_csv(path, kind: str) -> Profile:
    """Parse a ``hour,value`` CSV with one row per hour 0..23."""
    path = Path(path)
    if kind not in UNITS:
        raise ProfileError(f"unknown profile kind {kind!r}")
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise ProfileError(f"{path}: {exc.strerror}") from exc
    with fh:
        rows = list(csv.reader(fh))
    if not rows or [c.strip() for c in rows[0]] != ["hour", "value"]:
        raise ProfileError(f"{path}: header must be 'hour,value'")
    body = [r for r in rows[1:] if any(c.strip() for c in r)]
    if len(body) != HOURS:
        raise ProfileError(f"{path}: expected {HOURS} rows, got {len(body)}")
    values = np.full(HOURS, np.nan)
    for lineno, row in enumerate(body, start=2):
        if len(row) != 2:
            raise ProfileError(f"{path}: row {lineno}: expected 2 columns, got {len(row)}")
        try:
            hour, value = int(row[0]), float(row[1])
        except ValueError as exc:
            raise ProfileError(f"{path}: row {lineno}: {exc}") from None
        if not 0 <= hour < HOURS:
            raise ProfileError(f"{path}: row {lineno}: hour {hour} outside 0..23")
        if not np.isfinite(value) or value < 0:
            raise ProfileError(f"{path}: row {lineno}: negative or non-finite value {row[1]!r}")
        if not np.isnan(values[hour]):
            raise ProfileError(f"{path}: row {lineno}: duplicate hour {hour}")
        values[hour] = value
    return Profile(kind, values, UNITS[kind])


def write_profile_csv(path, profile: Profile) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["hour", "value"])
        for h, v in enumerate(profile.values):
            w.writerow([h, repr(float(v))])


def load_profiles(paths: dict | None = None) -> Profiles:
    """Load profiles from CSVs, falling back to the built-in defaults.

    Recognised keys: ``demand_g1`` .. ``demand_g4``, ``pv_g3``, ``pv_g4`` and
    ``price``.
    """
    base = default_profiles()
    demand, pv, price = dict(base.demand), dict(base.pv), base.price
    for key, path in (paths or {}).items():
        if key == "price":
            price = read_profile_csv(path, "price")
        elif key.startswith("demand_g") and key[8:] in {"1", "2", "3", "4"}:
            demand[int(key[8:])] = read_profile_csv(path, "demand")
        elif key in ("pv_g3", "pv_g4"):
            pv[int(key[4:])] = read_profile_csv(path, "pv")
        else:
            raise ConfigError(f"unknown profile key {key!r}")
    return Profiles(demand=demand, pv=pv, price=price)


def extend_and_noise(profile: Profile, horizon_h: int = 48, noise_sd: float = 0.05,
                     rng: np.random.Generator | None = None, n_agents: int = 1) -> np.ndarray:
    """Tile a daily profile over the horizon; demand also gets clamped Gaussian noise.

    Returns an ``(n_agents, horizon_h)`` array with one independent noise
    draw per agent.
    """
    if horizon_h <= 0 or horizon_h % HOURS:
        raise ConfigError("horizon must be a positive multiple of 24 hours")
    tiled = np.tile(profile.values, horizon_h // HOURS)
    out = np.repeat(tiled[None, :], n_agents, axis=0)
    if profile.kind == "demand" and noise_sd > 0:
        rng = rng if rng is not None else np.random.default_rng()
        out = np.maximum(out + rng.normal(0.0, noise_sd, size=out.shape), 0.0)
    return out


@dataclass(frozen=True)
class AgentSpec:
    agent_id: int
    group: int
    battery: BatterySpec | None
    demand: Profile
    pv: Profile | None
    initial_soc: float = 0.5


@dataclass
class Roster:
    market: str
    agents: list
    price: Profile
    horizon_h: int = 48

    @property
    def n_agents(self) -> int:
        return len(self.agents)

    def group_ids(self) -> np.ndarray:
        return np.array([a.group for a in self.agents])

    def sample_series(self, rng: np.random.Generator | None, noise_sd: float):
        """Per-agent demand and PV plus the price over the horizon."""
        n, T = self.n_agents, self.horizon_h
        demand = np.empty((n, T))
        pv = np.zeros((n, T))
        for i, a in enumerate(self.agents):
            demand[i] = extend_and_noise(a.demand, T, noise_sd, rng)[0]
            if a.pv is not None:
                pv[i] = extend_and_noise(a.pv, T, 0.0)[0]
        price = extend_and_noise(self.price, T, 0.0)[0]
        return demand, pv, price

    def to_json(self) -> str:
        rows = []
        for a in self.agents:
            b = a.battery
            rows.append({
                "agent_id": a.agent_id,
                "group": a.group,
                "battery": None if b is None else {
                    "capacity_kwh": b.capacity_kwh, "charge_eff": b.charge_eff,
                    "discharge_eff": b.discharge_eff, "power_cap_kw": b.power_cap_kw,
                    "soc_min": b.soc_min, "soc_max": b.soc_max, "delta_t_h": b.delta_t_h,
                },
                "initial_soc": a.initial_soc if b is not None else None,
                "demand_profile": f"demand_g{a.group}",
                "pv_profile": f"pv_g{a.group}" if a.pv is not None else None,
            })
        return json.dumps({"market": self.market, "horizon_h": self.horizon_h, "agents": rows}, indent=2)


def build_market(market: str = "LEM_A", battery_kwh: float = 5.0, counts=None,
                 profiles: Profiles | None = None, horizon_h: int = 48,
                 efficiency: float = 0.7, soc_min: float = 0.1, soc_max: float = 1.0,
                 initial_soc: float = 0.5, delta_t_h: float = 1.0) -> Roster:
    """Assign resources to every agent according to its group.

    ``market`` is ``"LEM_A"``, ``"LEM_B"`` or ``"custom"``; the latter needs
    ``counts`` (agents per group, groups 1..4).
    """
    if market == "custom":
        if counts is None:
            raise ConfigError("custom market needs per-group counts")
    else:
        expected = group_counts(market)
        if counts is not None and tuple(counts) != expected:
            raise ConfigError(f"counts {tuple(counts)} inconsistent with {market} groups {expected}")
        counts = expected
    counts = tuple(int(c) for c in counts)
    if len(counts) != len(GROUPS) or min(counts) < 0 or sum(counts) == 0:
        raise ConfigError(f"need four non-negative group counts with a positive total, got {counts}")
    if horizon_h % HOURS:
        raise ConfigError("horizon must be a multiple of 24 hours")
    profiles = profiles or default_profiles()

    battery = None
    if any(g.has_ess and c for g, c in zip(GROUPS, counts)):
        battery = BatterySpec(battery_kwh, efficiency, efficiency, soc_min=soc_min,
                              soc_max=soc_max, delta_t_h=delta_t_h)
    agents = []
    agent_id = 1
    for g, c in zip(GROUPS, counts):
        for _ in range(c):
            agents.append(AgentSpec(
                agent_id=agent_id,
                group=g.group_id,
                battery=battery if g.has_ess else None,
                demand=profiles.demand[g.group_id],
                pv=profiles.pv[g.group_id] if g.has_pv else None,
                initial_soc=initial_soc if g.has_ess else 0.0,
            ))
            agent_id += 1
    return Roster(market=market, agents=agents, price=profiles.price, horizon_h=horizon_h)
