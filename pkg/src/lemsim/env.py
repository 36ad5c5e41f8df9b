"""Episode harness for the local energy market.

Steps every agent through observe -> mask -> act -> dispatch -> clear ->
reward, and records everything the learner and the reports need.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Roster
from .market import (
    N_ACTIONS,
    Action,
    DomainError,
    ProsumerState,
    TradingWindows,
    action_mask,
    clear_market,
    dispatch,
    mask_vector,
)

OBS_DIM = 9
ACT_DIM = N_ACTIONS


def utility(surplus_kwh, deficit_kwh, price, eta_risk=0.5, buy_price=None) -> float:
    """Isoelastic income from selling minus linear cost of buying.

    ``buy_price`` defaults to ``price``; a separate value lets sell and buy
    legs be settled at different (manipulated) prices.
    """
    if eta_risk == 1:
        raise DomainError("risk aversion of exactly 1 (log utility) is not supported")
    buy_price = price if buy_price is None else buy_price
    if price < 0 or buy_price < 0:
        raise DomainError("prices must be non-negative")
    income = abs(surplus_kwh) * price
    return (income ** (1.0 - eta_risk) - 1.0) / (1.0 - eta_risk) - deficit_kwh * buy_price


def reward(u_t: float, u_prev: float, action) -> float:
    action = Action(action)
    if action is Action.SELL:
        return u_t - u_prev
    if action is Action.BUY:
        return -(u_t - u_prev)
    return 0.0


class ObservationScaler:
    """Min-max scaling of the per-agent features over one episode's series.

    Feature order: demand, generation, SOC, price, sin(hour), cos(hour),
    previous deficit, previous surplus, previous reward.
    """

    def __init__(self, roster: Roster, demand: np.ndarray, pv: np.ndarray, price: np.ndarray):
        self.d_lo, self.d_span = self._range(demand)
        self.g_lo, self.g_span = self._range(pv)
        p_lo, p_span = self._range(price[None, :])
        self.p_lo, self.p_span = float(p_lo[0]), float(p_span[0])
        cap = np.array([a.battery.power_cap_kw if a.battery is not None else 0.0 for a in roster.agents])
        self.energy_ref = np.maximum(demand.max(axis=1), pv.max(axis=1)) + cap
        self.energy_ref[self.energy_ref <= 0] = 1.0

    @staticmethod
    def _range(x):
        lo = x.min(axis=1)
        span = x.max(axis=1) - lo
        return lo, np.where(span > 0, span, 1.0)

    def build(self, hour, demand, gen, soc, price, prev_def, prev_sur, prev_r) -> np.ndarray:
        n = len(demand)
        obs = np.empty((n, OBS_DIM))
        obs[:, 0] = (demand - self.d_lo) / self.d_span
        obs[:, 1] = (gen - self.g_lo) / self.g_span
        obs[:, 2] = soc
        obs[:, 3] = (price - self.p_lo) / self.p_span
        angle = 2 * np.pi * hour / 24.0
        obs[:, 4] = 0.5 * (np.sin(angle) + 1.0)
        obs[:, 5] = 0.5 * (np.cos(angle) + 1.0)
        obs[:, 6] = prev_def / self.energy_ref
        obs[:, 7] = prev_sur / self.energy_ref
        obs[:, 8] = np.tanh(prev_r)
        return obs


@dataclass
class Trajectory:
    obs: np.ndarray  # (T, n, 9)
    action_vecs: np.ndarray  # (T, n, 3) what the critics consume
    actions: np.ndarray  # (T, n) executed Action values
    masks: np.ndarray  # (T, n, 3) permitted actions
    rewards: np.ndarray  # (T, n)
    next_obs: np.ndarray  # (T, n, 9)
    terminal: np.ndarray  # (T,)
    utilities: np.ndarray
    deficit: np.ndarray  # (T, n) kWh
    surplus: np.ndarray  # (T, n) kWh, magnitude
    soc: np.ndarray  # (T + 1, n)
    demand: np.ndarray
    generation: np.ndarray
    price: np.ndarray  # (T,)
    hours: np.ndarray  # (T,)
    local_purchase: np.ndarray
    local_sale: np.ndarray
    grid_import: np.ndarray
    grid_export: np.ndarray
    benefit_nominal: np.ndarray  # (T, n)
    benefit_manipulated: np.ndarray | None
    violations: int = 0

    @property
    def horizon(self) -> int:
        return self.rewards.shape[0]

    @property
    def n_agents(self) -> int:
        return self.rewards.shape[1]

    def total_benefit(self, manipulated: bool = False) -> np.ndarray:
        src = self.benefit_manipulated if manipulated else self.benefit_nominal
        if src is None:
            raise ValueError("episode was run without manipulated prices")
        return src.sum(axis=0)


def simulate(roster: Roster, policy, demand: np.ndarray, pv: np.ndarray, price: np.ndarray,
             windows: TradingWindows | None = None, risk_aversion: float = 0.5,
             sell_price: np.ndarray | None = None, buy_price: np.ndarray | None = None,
             manipulated_rewards: bool = False, delta_t_h: float = 1.0) -> Trajectory:
    """Run one episode.

    ``policy(obs, masks, t)`` gets the ``(n, 9)`` observations and ``(n, 3)``
    permitted-action masks and returns executed actions ``(n,)`` plus the
    ``(n, 3)`` action vectors the critics will see. ``sell_price`` and
    ``buy_price`` are the manipulated settlement series; with
    ``manipulated_rewards`` the utilities (and so the rewards) use them too.
    """
    windows = windows or TradingWindows()
    n, T = demand.shape
    if n != roster.n_agents or pv.shape != (n, T) or price.shape != (T,):
        raise DomainError(f"series shapes {demand.shape}, {pv.shape}, {price.shape} do not match "
                          f"{roster.n_agents} agents")
    manip = sell_price is not None
    if manip and (np.shape(sell_price) != (T,) or np.shape(buy_price) != (T,)):
        raise DomainError("manipulated price series must match the horizon")
    if manipulated_rewards and not manip:
        raise DomainError("manipulated rewards need manipulated prices")

    scaler = ObservationScaler(roster, demand, pv, price)
    batteries = [a.battery for a in roster.agents]
    soc = np.array([a.initial_soc if a.battery is not None else 0.0 for a in roster.agents])
    hours = (np.arange(T) * delta_t_h).astype(int) % 24

    def prices_for_utility(t):
        if manipulated_rewards:
            return sell_price[t], buy_price[t]
        return price[t], price[t]

    # utility of the no-trade outcome at t=0 seeds the first reward difference
    u_prev = np.empty(n)
    for i in range(n):
        st = ProsumerState(demand[i, 0], pv[i, 0], soc[i], price[0], int(hours[0]))
        pos = dispatch(st, batteries[i], Action.NOOP, delta_t_h).position
        ps, pb = prices_for_utility(0)
        u_prev[i] = utility(pos.surplus_kwh, pos.deficit_kwh, ps, risk_aversion, pb)

    shape = (T, n)
    rec = {k: np.zeros(shape) for k in (
        "rewards", "utilities", "deficit", "surplus", "local_purchase", "local_sale",
        "grid_import", "grid_export", "benefit_nominal")}
    ben_manip = np.zeros(shape) if manip else None
    obs_all = np.zeros((T, n, OBS_DIM))
    next_obs = np.zeros((T, n, OBS_DIM))
    vecs = np.zeros((T, n, ACT_DIM))
    masks = np.zeros((T, n, ACT_DIM))
    actions = np.zeros(shape, dtype=int)
    soc_hist = np.zeros((T + 1, n))
    soc_hist[0] = soc
    violations = 0

    prev_def = np.zeros(n)
    prev_sur = np.zeros(n)
    prev_r = np.zeros(n)
    obs = scaler.build(hours[0], demand[:, 0], pv[:, 0], soc, price[0], prev_def, prev_sur, prev_r)
    for t in range(T):
        states = [ProsumerState(demand[i, t], pv[i, t], soc[i], price[t], int(hours[t])) for i in range(n)]
        allowed = [action_mask(st, b, windows) for st, b in zip(states, batteries)]
        mask_t = np.stack([mask_vector(a) for a in allowed])
        acts, act_vecs = policy(obs, mask_t, t)
        positions = []
        for i in range(n):
            a = Action(int(acts[i]))
            if a not in allowed[i]:
                violations += 1
                a = Action.NOOP
            actions[t, i] = a
            res = dispatch(states[i], batteries[i], a, delta_t_h)
            soc[i] = res.soc
            positions.append(res.position)

        # only active traders enter the local market; passive shortfalls go to the grid
        trading = [p if actions[t, i] != Action.NOOP else _ZERO for i, p in enumerate(positions)]
        outcome = clear_market(trading)
        passive = np.array([p.deficit_kwh if actions[t, i] == Action.NOOP else 0.0
                            for i, p in enumerate(positions)])
        ps, pb = prices_for_utility(t)
        for i, pos in enumerate(positions):
            s, d = abs(pos.surplus_kwh), pos.deficit_kwh
            u = utility(s, d, ps, risk_aversion, pb)
            rec["rewards"][t, i] = reward(u, u_prev[i], actions[t, i])
            rec["utilities"][t, i] = u
            rec["deficit"][t, i] = d
            rec["surplus"][t, i] = s
            rec["benefit_nominal"][t, i] = (s - d) * price[t]
            if manip:
                ben_manip[t, i] = s * sell_price[t] - d * buy_price[t]
            u_prev[i] = u
        rec["local_purchase"][t] = outcome.local_purchase_kwh
        rec["local_sale"][t] = outcome.local_sale_kwh
        rec["grid_import"][t] = outcome.grid_import_kwh + passive
        rec["grid_export"][t] = outcome.grid_export_kwh

        obs_all[t] = obs
        vecs[t] = act_vecs
        masks[t] = mask_t
        soc_hist[t + 1] = soc
        prev_def, prev_sur, prev_r = rec["deficit"][t], rec["surplus"][t], rec["rewards"][t]
        if t + 1 < T:
            obs = scaler.build(hours[t + 1], demand[:, t + 1], pv[:, t + 1], soc, price[t + 1],
                               prev_def, prev_sur, prev_r)
            next_obs[t] = obs

    terminal = np.zeros(T, dtype=bool)
    terminal[-1] = True
    return Trajectory(
        obs=obs_all, action_vecs=vecs, actions=actions, masks=masks, next_obs=next_obs,
        terminal=terminal, soc=soc_hist, demand=demand, generation=pv, price=price, hours=hours,
        benefit_manipulated=ben_manip, violations=violations, **rec,
    )


class _Zero:
    deficit_kwh = 0.0
    surplus_kwh = 0.0


_ZERO = _Zero()
