"""Prosumer energy bookkeeping and pro-rata local market clearing.

Sign conventions: ``charge_kw`` adds to the load and ``discharge_kw`` adds to
supply, so the net position is ``(demand + charge - discharge - generation) * dt``.
Positive net is a deficit, negative net a surplus (kept negative, as a
"surplus_kwh <= 0" field).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np

CONSERVATION_TOL = 1e-9


class DomainError(ValueError):
    """Raised when an input violates an operation's precondition."""


class Action(IntEnum):
    BUY = 0
    SELL = 1
    NOOP = 2


N_ACTIONS = len(Action)


@dataclass(frozen=True)
class BatterySpec:
    capacity_kwh: float
    charge_eff: float = 0.7
    discharge_eff: float = 0.7
    power_cap_kw: float | None = None
    soc_min: float = 0.1
    soc_max: float = 1.0
    delta_t_h: float = 1.0

    def __post_init__(self):
        if self.capacity_kwh <= 0:
            raise DomainError("battery capacity must be positive")
        if not (0 < self.charge_eff <= 1 and 0 < self.discharge_eff <= 1):
            raise DomainError("efficiencies must lie in (0, 1]")
        if not (0 <= self.soc_min < self.soc_max <= 1):
            raise DomainError("need 0 <= soc_min < soc_max <= 1")
        if self.delta_t_h <= 0:
            raise DomainError("delta_t_h must be positive")
        if self.power_cap_kw is None:
            object.__setattr__(self, "power_cap_kw", self.capacity_kwh / self.delta_t_h)
        if self.power_cap_kw < self.u_lower - 1e-12:
            raise DomainError("power cap must be at least capacity / delta_t")

    @property
    def u_lower(self) -> float:
        """Power that fills the whole battery in one step."""
        return self.capacity_kwh / self.delta_t_h

    @property
    def charge_limit_kw(self) -> float:
        return min(self.u_lower, self.power_cap_kw)

    def dischargeable_kw(self, soc: float) -> float:
        """Power deliverable to the bus this step before hitting ``soc_min``."""
        stored = max(0.0, soc - self.soc_min) * self.capacity_kwh
        return min(self.power_cap_kw, stored * self.discharge_eff / self.delta_t_h)

    def chargeable_kw(self, soc: float) -> float:
        """Charging power the battery can absorb this step before ``soc_max``."""
        room = max(0.0, self.soc_max - soc) * self.capacity_kwh
        return min(self.power_cap_kw, room / (self.charge_eff * self.delta_t_h))


@dataclass(frozen=True)
class ProsumerState:
    demand_kw: float
    generation_kw: float
    soc: float
    observed_price: float
    hour_of_day: int

    def __post_init__(self):
        if self.demand_kw < 0 or self.generation_kw < 0:
            raise DomainError("demand and generation must be non-negative")
        if not 0 <= self.hour_of_day <= 23:
            raise DomainError("hour_of_day must be in 0..23")


@dataclass(frozen=True)
class EnergyPosition:
    net_kwh: float
    deficit_kwh: float
    surplus_kwh: float
    charge_kw: float = 0.0
    discharge_kw: float = 0.0
    curtailed_kwh: float = 0.0


@dataclass(frozen=True)
class SocUpdate:
    soc: float
    charge_kw: float
    discharge_kw: float


def soc_step(state, spec: BatterySpec, charge_kw: float, discharge_kw: float) -> SocUpdate:
    """Advance the state of charge by one step, clamping at the bounds.

    ``state`` may be a :class:`ProsumerState` or a bare SOC fraction. When a
    bound is hit the offending power is scaled back, and the applied power
    is returned alongside the new SOC.
    """
    soc = state.soc if isinstance(state, ProsumerState) else float(state)
    if spec.capacity_kwh <= 0:
        raise DomainError("battery capacity must be positive")
    if charge_kw < 0 or discharge_kw < 0:
        raise DomainError("charge and discharge power must be non-negative")
    if charge_kw > 0 and discharge_kw > 0:
        raise DomainError("cannot charge and discharge in the same step")
    tol = 1e-12 * max(1.0, spec.power_cap_kw)
    if charge_kw > spec.power_cap_kw + tol or discharge_kw > spec.power_cap_kw + tol:
        raise DomainError("power exceeds the battery power cap")

    scale = spec.delta_t_h / spec.capacity_kwh
    new_soc = soc + scale * (spec.charge_eff * charge_kw - discharge_kw / spec.discharge_eff)
    if new_soc > spec.soc_max:
        charge_kw = max(0.0, (spec.soc_max - soc) / (scale * spec.charge_eff))
        new_soc = spec.soc_max
    elif new_soc < spec.soc_min:
        discharge_kw = max(0.0, (soc - spec.soc_min) * spec.discharge_eff / scale)
        new_soc = spec.soc_min
    return SocUpdate(float(new_soc), float(charge_kw), float(discharge_kw))


def energy_balance(demand_kw, generation_kw, charge_kw=0.0, discharge_kw=0.0, delta_t_h=1.0) -> EnergyPosition:
    if min(demand_kw, generation_kw, charge_kw, discharge_kw) < 0 or delta_t_h <= 0:
        raise DomainError("energy balance inputs must be non-negative")
    net = (demand_kw + charge_kw - (discharge_kw + generation_kw)) * delta_t_h
    return EnergyPosition(
        net_kwh=float(net),
        deficit_kwh=float(max(0.0, net)),
        surplus_kwh=float(min(0.0, net)),
        charge_kw=float(charge_kw),
        discharge_kw=float(discharge_kw),
    )


def purchasable_power(position: EnergyPosition, spec: BatterySpec | None) -> float:
    """Upper bound on what an agent may buy this step.

    Deficit agents may buy the deficit plus a full charging step; surplus
    agents may top up whatever their surplus leaves of the charging limit.
    Agents without storage have a charging limit of zero.
    """
    limit = spec.charge_limit_kw if spec is not None else 0.0
    if position.deficit_kwh > 0:
        return position.deficit_kwh + limit
    surplus = abs(position.surplus_kwh)
    if surplus >= limit:
        return 0.0
    return max(0.0, limit - surplus)


@dataclass
class MarketOutcome:
    total_surplus_kwh: float
    total_deficit_kwh: float
    alloc_fraction: float
    regime: str  # "deficit" (D >= S), "surplus" (S > D) or "empty"
    local_purchase_kwh: np.ndarray
    local_sale_kwh: np.ndarray
    grid_import_kwh: np.ndarray
    grid_export_kwh: np.ndarray
    applied_buy_price: np.ndarray | None = None
    applied_sell_price: np.ndarray | None = None

    @property
    def per_agent_local_kwh(self) -> np.ndarray:
        return self.local_purchase_kwh + self.local_sale_kwh

    def imbalance(self) -> float:
        return float(self.local_purchase_kwh.sum() - self.local_sale_kwh.sum())


def clear_market(positions) -> MarketOutcome:
    """Pro-rata clearing of all deficits against all surpluses.

    The short side is served in full locally; the long side is scaled by
    the allocation fraction and the grid absorbs the remainder.
    """
    deficits = np.array([p.deficit_kwh for p in positions], dtype=float)
    surpluses = np.array([abs(p.surplus_kwh) for p in positions], dtype=float)
    if np.any(deficits < 0):
        raise DomainError("deficits must be non-negative")
    total_s = float(surpluses.sum())
    total_d = float(deficits.sum())
    zeros = np.zeros(len(deficits))

    if total_d == 0 and total_s == 0:
        return MarketOutcome(0.0, 0.0, 0.0, "empty", zeros, zeros.copy(), zeros.copy(), zeros.copy())
    if total_d >= total_s:
        frac = total_s / total_d
        bought = frac * deficits
        return MarketOutcome(
            total_s, total_d, frac, "deficit",
            local_purchase_kwh=bought,
            local_sale_kwh=surpluses.copy(),
            grid_import_kwh=deficits - bought,
            grid_export_kwh=zeros,
        )
    frac = total_d / total_s
    sold = frac * surpluses
    return MarketOutcome(
        total_s, total_d, frac, "surplus",
        local_purchase_kwh=deficits.copy(),
        local_sale_kwh=sold,
        grid_import_kwh=zeros,
        grid_export_kwh=surpluses - sold,
    )


def _hour_span(start: int, end: int) -> frozenset[int]:
    if start == end:
        return frozenset(range(24))
    if start < end:
        return frozenset(range(start, end))
    return frozenset(list(range(start, 24)) + list(range(0, end)))


@dataclass(frozen=True)
class TradingWindows:
    """Hours in which buying and selling are allowed, as half-open spans
    ``[start, end)`` that may wrap past midnight."""

    buy_start: int = 17
    buy_end: int = 8
    sell_start: int = 6
    sell_end: int = 12
    buy_hours: frozenset = field(init=False, repr=False)
    sell_hours: frozenset = field(init=False, repr=False)

    def __post_init__(self):
        for h in (self.buy_start, self.buy_end, self.sell_start, self.sell_end):
            if not 0 <= h <= 24:
                raise DomainError(f"window bound {h} outside 0..24")
        object.__setattr__(self, "buy_hours", _hour_span(self.buy_start % 24, self.buy_end % 24))
        object.__setattr__(self, "sell_hours", _hour_span(self.sell_start % 24, self.sell_end % 24))


def available_supply_kw(state: ProsumerState, battery: BatterySpec | None) -> float:
    """Generation plus what storage could deliver this step."""
    stored = battery.dischargeable_kw(state.soc) if battery is not None else 0.0
    return state.generation_kw + stored


def action_mask(state: ProsumerState, battery: BatterySpec | None, windows: TradingWindows) -> frozenset[Action]:
    """Actions an agent may take given the trading windows and its resources.

    Buying needs the buy window and demand that generation plus storage
    cannot cover. Selling needs the sell window and something to sell
    beyond own demand.
    """
    if not 0 <= state.hour_of_day <= 23:
        raise DomainError("hour_of_day must be in 0..23")
    allowed = {Action.NOOP}
    supply = available_supply_kw(state, battery)
    if state.hour_of_day in windows.buy_hours and state.demand_kw > supply:
        allowed.add(Action.BUY)
    if state.hour_of_day in windows.sell_hours and supply > state.demand_kw:
        allowed.add(Action.SELL)
    return frozenset(allowed)


def mask_vector(allowed) -> np.ndarray:
    m = np.zeros(N_ACTIONS)
    for a in allowed:
        m[int(a)] = 1.0
    return m


@dataclass(frozen=True)
class StepResult:
    position: EnergyPosition
    soc: float


def dispatch(state: ProsumerState, battery: BatterySpec | None, action: Action, delta_t_h: float = 1.0) -> StepResult:
    """Battery dispatch and resulting energy position for one agent and action.

    * SELL discharges as much as the battery allows and offers the whole
      surplus.
    * BUY charges at the rate implied by :func:`purchasable_power` and buys
      demand plus charge.
    * NOOP holds: spare own generation is stored, nothing is discharged,
      leftover surplus is curtailed and any shortfall is imported from the
      grid outside the market.
    """
    d, g = state.demand_kw, state.generation_kw
    soc = state.soc
    charge = discharge = 0.0
    action = Action(action)

    if battery is not None:
        if action is Action.SELL:
            discharge = battery.dischargeable_kw(soc)
        elif action is Action.BUY:
            base = energy_balance(d, g, 0.0, 0.0, delta_t_h)
            cap = purchasable_power(base, battery)
            want = max(0.0, cap - base.deficit_kwh / delta_t_h) + abs(base.surplus_kwh) / delta_t_h
            charge = min(want, battery.power_cap_kw)
        elif g > d:
            charge = min(g - d, battery.chargeable_kw(soc))
        upd = soc_step(soc, battery, charge, discharge)
        soc, charge, discharge = upd.soc, upd.charge_kw, upd.discharge_kw

    pos = energy_balance(d, g, charge, discharge, delta_t_h)
    if action is Action.NOOP and pos.net_kwh < 0:
        pos = EnergyPosition(0.0, 0.0, 0.0, charge, discharge, curtailed_kwh=-pos.net_kwh)
    return StepResult(pos, soc)


def nominal_benefit(position: EnergyPosition, price: float) -> float:
    if price < 0:
        raise DomainError("price must be non-negative")
    return (abs(position.surplus_kwh) - position.deficit_kwh) * price


def manipulated_benefit(position: EnergyPosition, sell_price: float, buy_price: float) -> float:
    if sell_price < 0 or buy_price < 0:
        raise DomainError("prices must be non-negative")
    return abs(position.surplus_kwh) * sell_price - position.deficit_kwh * buy_price
