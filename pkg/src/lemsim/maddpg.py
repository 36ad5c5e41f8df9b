"""Per-agent actor-critic learning with decentralized actors and centralized critics.

Actors map a 9-feature local observation to softmax probabilities over
Buy/Sell/NoOp; critics score the joint observation plus the joint action
probability vectors. Each episode's trajectory is one training batch: TD
targets bootstrap from the current critic and current actors (no replay
buffer, no target networks).
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import ExperimentConfig
from .data import Roster, build_market, load_profiles
from .env import ACT_DIM, OBS_DIM, Trajectory, reward, simulate, utility
from .market import Action, TradingWindows
from .nn import AdamState, DenseNet, adam_step, backward, forward, load_checkpoint, save_checkpoint

__all__ = [
    "AgentNets", "JointBatch", "TrainResult", "TrainingDiverged", "actor_update", "critic_input_dim",
    "critic_update", "load_agents", "make_agents", "make_batch", "masked_probs", "reward", "run_episode",
    "save_agents", "select_action", "td_target", "train", "utility",
]

log = logging.getLogger(__name__)

CURVE_COLUMNS = ("epoch", "agent_id", "actor_loss", "critic_loss", "mean_reward", "benefit")


class TrainingDiverged(RuntimeError):
    pass


def critic_input_dim(n_agents: int) -> int:
    return n_agents * (OBS_DIM + ACT_DIM)


@dataclass
class AgentNets:
    agent_id: int
    actor: DenseNet
    critic: DenseNet
    actor_opt: AdamState = field(default_factory=AdamState)
    critic_opt: AdamState = field(default_factory=AdamState)

    def copy(self) -> "AgentNets":
        # optimizer moments are not part of a snapshot
        return AgentNets(self.agent_id, self.actor.copy(), self.critic.copy(),
                         AdamState(self.actor_opt.learning_rate), AdamState(self.critic_opt.learning_rate))


def make_agents(n_agents: int, rng: np.random.Generator, actor_hidden=(64,), critic_hidden=(64, 64),
                actor_lr: float = 0.01, critic_lr: float = 0.1, agent_ids=None) -> list[AgentNets]:
    ids = list(agent_ids) if agent_ids is not None else list(range(1, n_agents + 1))
    width = critic_input_dim(n_agents)
    agents = []
    for aid in ids:
        actor = DenseNet([OBS_DIM, *actor_hidden, ACT_DIM], ["relu"] * len(actor_hidden) + ["softmax"], rng)
        critic = DenseNet([width, *critic_hidden, 1], ["relu"] * len(critic_hidden) + ["identity"], rng)
        agents.append(AgentNets(aid, actor, critic, AdamState(actor_lr), AdamState(critic_lr)))
    return agents


def masked_probs(probs: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Zero forbidden entries and renormalize (row-wise for batches)."""
    p = np.asarray(probs, dtype=float) * mask
    total = p.sum(axis=-1, keepdims=True)
    # a fully underflowed row falls back to uniform over the permitted set
    fallback = mask / np.maximum(mask.sum(axis=-1, keepdims=True), 1.0)
    return np.where(total > 0, p / np.where(total > 0, total, 1.0), fallback)


def select_action(actor: DenseNet, obs, mask, epsilon: float = 0.0,
                  rng: np.random.Generator | None = None) -> tuple[Action, np.ndarray]:
    """Pick an action and return it with the probability vector the critic sees.

    With probability ``epsilon`` the action is drawn uniformly from the
    permitted set; otherwise it is the argmax of the masked probabilities.
    """
    mask = np.asarray(mask, dtype=float)
    if not mask.any():
        vec = np.zeros(ACT_DIM)
        vec[Action.NOOP] = 1.0
        return Action.NOOP, vec
    vec = masked_probs(actor(obs), mask)
    if epsilon > 0 and rng is not None and rng.random() < epsilon:
        return Action(int(rng.choice(np.flatnonzero(mask)))), vec
    return Action(int(np.argmax(vec))), vec


def td_target(r, next_q, terminal, gamma: float):
    if not 0 <= gamma < 1:
        raise ValueError("gamma must lie in [0, 1)")
    return np.where(terminal, r, r + gamma * np.asarray(next_q))


@dataclass
class JointBatch:
    """One episode's joint experience, flattened for the critics."""

    obs: np.ndarray  # (T, n, 9)
    masks: np.ndarray  # (T, n, 3)
    joint_obs: np.ndarray  # (T, n*9)
    joint_act: np.ndarray  # (T, n*3)
    rewards: np.ndarray  # (T, n)
    next_joint_obs: np.ndarray
    next_joint_act: np.ndarray  # from the current actors, no exploration
    terminal: np.ndarray  # (T,)

    @property
    def n_agents(self) -> int:
        return self.obs.shape[1]

    def critic_inputs(self) -> np.ndarray:
        return np.concatenate([self.joint_obs, self.joint_act], axis=1)

    def next_critic_inputs(self) -> np.ndarray:
        return np.concatenate([self.next_joint_obs, self.next_joint_act], axis=1)


def make_batch(traj: Trajectory, agents: list[AgentNets]) -> JointBatch:
    T, n = traj.rewards.shape
    next_masks = np.zeros_like(traj.masks)
    next_masks[:-1] = traj.masks[1:]
    next_masks[-1, :, Action.NOOP] = 1.0  # unused: the last step is terminal
    next_act = np.stack([masked_probs(ag.actor(traj.next_obs[:, j]), next_masks[:, j])
                         for j, ag in enumerate(agents)], axis=1)
    return JointBatch(
        obs=traj.obs, masks=traj.masks,
        joint_obs=traj.obs.reshape(T, n * OBS_DIM),
        joint_act=traj.action_vecs.reshape(T, n * ACT_DIM),
        rewards=traj.rewards,
        next_joint_obs=traj.next_obs.reshape(T, n * OBS_DIM),
        next_joint_act=next_act.reshape(T, n * ACT_DIM),
        terminal=traj.terminal,
    )


def critic_update(agent: AgentNets, batch: JointBatch, index: int, gamma: float = 0.95) -> float:
    """One Adam step on the mean squared TD error. Returns the pre-step loss."""
    next_q = agent.critic(batch.next_critic_inputs())[:, 0]
    y = td_target(batch.rewards[:, index], next_q, batch.terminal, gamma)
    q, cache = forward(agent.critic, batch.critic_inputs())
    err = q[:, 0] - y
    loss = float(np.mean(err ** 2))
    grads, _ = backward(agent.critic, cache, (2.0 / len(err)) * err[:, None])
    adam_step(agent.critic.params(), grads, agent.critic_opt)
    return loss


def actor_gradients(agent: AgentNets, batch: JointBatch, index: int) -> tuple[float, list[np.ndarray]]:
    """Loss -mean Q(s, a_-i, pi_i(s_i)) and its gradient w.r.t. the actor."""
    obs_i = batch.obs[:, index]
    mask_i = batch.masks[:, index]
    soft, a_cache = forward(agent.actor, obs_i)
    p = soft * mask_i
    total = p.sum(axis=1, keepdims=True)
    total = np.where(total > 0, total, 1.0)
    probs = p / total

    x = batch.critic_inputs().copy()
    lo = batch.n_agents * OBS_DIM + index * ACT_DIM
    x[:, lo:lo + ACT_DIM] = probs
    q, c_cache = forward(agent.critic, x)
    T = len(q)
    loss = -float(q.mean())
    _, dx = backward(agent.critic, c_cache, np.full((T, 1), -1.0 / T))
    g = dx[:, lo:lo + ACT_DIM]
    # through the mask renormalization p_k = s_k m_k / sum(s m)
    g_soft = mask_i * (g - np.sum(g * probs, axis=1, keepdims=True)) / total
    grads, _ = backward(agent.actor, a_cache, g_soft)
    return loss, grads


def actor_update(agent: AgentNets, batch: JointBatch, index: int) -> float:
    """One Adam step ascending the critic's value of the actor's own action. Returns the pre-step loss."""
    loss, grads = actor_gradients(agent, batch, index)
    adam_step(agent.actor.params(), grads, agent.actor_opt)
    return loss


def run_episode(roster: Roster, agents: list[AgentNets], demand: np.ndarray, pv: np.ndarray,
                price: np.ndarray, epsilon: float = 0.0, rng: np.random.Generator | None = None,
                windows: TradingWindows | None = None, risk_aversion: float = 0.5,
                sell_price=None, buy_price=None, manipulated_rewards: bool = False,
                delta_t_h: float = 1.0) -> Trajectory:
    if len(agents) != roster.n_agents:
        raise ValueError(f"{len(agents)} agents for a roster of {roster.n_agents}")

    def policy(obs, masks, t):
        acts = np.empty(len(agents), dtype=int)
        vecs = np.empty((len(agents), ACT_DIM))
        for j, ag in enumerate(agents):
            acts[j], vecs[j] = select_action(ag.actor, obs[j], masks[j], epsilon, rng)
        return acts, vecs

    return simulate(roster, policy, demand, pv, price, windows, risk_aversion,
                    sell_price, buy_price, manipulated_rewards, delta_t_h)


def save_agents(directory, agents: list[AgentNets], meta: dict | None = None) -> list[Path]:
    directory = Path(directory)
    return [save_checkpoint(directory / f"agent_{ag.agent_id}.npz",
                            {"actor": ag.actor, "critic": ag.critic},
                            {"agent_id": ag.agent_id, **(meta or {})})
            for ag in agents]


def load_agents(directory, agent_ids, actor_lr: float = 0.01, critic_lr: float = 0.1) -> list[AgentNets]:
    out = []
    for aid in agent_ids:
        nets, _ = load_checkpoint(Path(directory) / f"agent_{aid}.npz")
        out.append(AgentNets(aid, nets["actor"], nets["critic"], AdamState(actor_lr), AdamState(critic_lr)))
    return out


@dataclass
class TrainResult:
    agents: list  # best snapshot by evaluation benefit
    final_agents: list
    curves: list  # rows keyed by CURVE_COLUMNS
    evaluations: list  # (epoch, mean benefit)
    best_epoch: int
    violations: int


def seed_streams(seed: int, n: int = 4) -> list[np.random.Generator]:
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(n)]


def roster_from_config(config: ExperimentConfig) -> Roster:
    return build_market(
        config.market, config.battery_kwh, config.group_counts or None,
        load_profiles(config.profile_paths()), config.horizon_h, config.efficiency,
        config.soc_min, config.soc_max, config.initial_soc, config.delta_t_h,
    )


def windows_from_config(config: ExperimentConfig) -> TradingWindows:
    return TradingWindows(config.buy_start, config.buy_end, config.sell_start, config.sell_end)


def evaluate(roster: Roster, agents: list[AgentNets], config: ExperimentConfig,
             sell_price=None, buy_price=None) -> Trajectory:
    """Noise-free, exploit-only episode."""
    demand, pv, price = roster.sample_series(None, 0.0)
    return run_episode(roster, agents, demand, pv, price, 0.0, None, windows_from_config(config),
                       config.risk_aversion, sell_price, buy_price, False, config.delta_t_h)


def write_curves(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=CURVE_COLUMNS, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (f"{r[k]:.10g}" if isinstance(r[k], float) else r[k]) for k in CURVE_COLUMNS})


def train(config: ExperimentConfig, roster: Roster | None = None, output_dir=None,
          sell_price=None, buy_price=None, on_episode=None) -> TrainResult:
    """Nested epoch/episode loop; every agent's critic then actor is updated per episode.

    Passing ``sell_price``/``buy_price`` trains under a manipulated signal;
    ``config.manipulated_rewards`` decides whether utilities use it.
    ``on_episode(epoch, trajectory)`` sees every training and evaluation episode.
    """
    roster = roster or roster_from_config(config)
    windows = windows_from_config(config)
    init_rng, noise_rng, explore_rng, _ = seed_streams(config.seed)
    agents = make_agents(roster.n_agents, init_rng, config.actor_hidden, config.critic_hidden,
                         config.actor_lr, config.critic_lr, [a.agent_id for a in roster.agents])
    manip_rewards = config.manipulated_rewards and sell_price is not None
    out = Path(output_dir) if output_dir is not None else None
    ckpt_dir = out / "checkpoints" if out is not None else None

    curves, evaluations = [], []
    best, best_score, best_epoch = [ag.copy() for ag in agents], -np.inf, 0
    violations = 0
    n = roster.n_agents
    for epoch in range(1, config.epochs + 1):
        frac = (epoch - 1) / max(config.epochs - 1, 1)
        eps = config.eps_start + (config.eps_end - config.eps_start) * frac
        a_loss, c_loss = np.zeros(n), np.zeros(n)
        rew, ben = np.zeros(n), np.zeros(n)
        for _ in range(config.episodes_per_epoch):
            demand, pv, price = roster.sample_series(noise_rng, config.demand_noise_sd)
            traj = run_episode(roster, agents, demand, pv, price, eps, explore_rng, windows,
                               config.risk_aversion, sell_price, buy_price, manip_rewards, config.delta_t_h)
            violations += traj.violations
            if on_episode is not None:
                on_episode(epoch, traj)
            batch = make_batch(traj, agents)
            for i, ag in enumerate(agents):
                c_loss[i] += critic_update(ag, batch, i, config.gamma)
                a_loss[i] += actor_update(ag, batch, i)
            if not (np.all(np.isfinite(c_loss)) and np.all(np.isfinite(a_loss))):
                raise TrainingDiverged(f"non-finite loss at epoch {epoch}")
            rew += traj.rewards.mean(axis=0)
            ben += traj.total_benefit(manip_rewards)
        k = config.episodes_per_epoch
        for i, ag in enumerate(agents):
            curves.append({"epoch": epoch, "agent_id": ag.agent_id, "actor_loss": a_loss[i] / k,
                           "critic_loss": c_loss[i] / k, "mean_reward": rew[i] / k, "benefit": ben[i] / k})

        if epoch % config.eval_every == 0 or epoch == config.epochs:
            ev = evaluate(roster, agents, config)
            violations += ev.violations
            if on_episode is not None:
                on_episode(epoch, ev)
            score = float(ev.total_benefit().mean())
            evaluations.append((epoch, score))
            log.info("epoch %d eps %.3f eval benefit %.4f", epoch, eps, score)
            if score > best_score:
                best, best_score, best_epoch = [ag.copy() for ag in agents], score, epoch
        if ckpt_dir is not None and (epoch % config.checkpoint_every == 0 or epoch == config.epochs):
            save_agents(ckpt_dir, agents, {"epoch": epoch})

    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        write_curves(out / "curves.csv", curves)
        save_agents(ckpt_dir / "best", best, {"epoch": best_epoch})
    return TrainResult(best, agents, curves, evaluations, best_epoch, violations)
