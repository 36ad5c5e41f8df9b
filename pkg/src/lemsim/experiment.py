"""Experiment orchestration: train, evaluate frozen policies, attack the price, report."""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .adversary import VaeGanNets, adversarial_prices, price_windows, train_vaegan
from .config import ExperimentConfig
from .data import Roster
from .env import Trajectory
from .maddpg import AgentNets, load_agents, roster_from_config, run_episode, seed_streams, train, windows_from_config
from .market import Action

log = logging.getLogger(__name__)

ACTION_NAMES = {Action.BUY: "Buy", Action.SELL: "Sell", Action.NOOP: "NoOp"}
SCENARIOS = ("nominal", "manipulated")


def group_benefits(traj: Trajectory, roster: Roster, manipulated: bool = False) -> dict:
    """Total benefit over the episode averaged over the members of each group."""
    totals = traj.total_benefit(manipulated)
    gids = roster.group_ids()
    return {int(g): float(totals[gids == g].mean()) for g in sorted(set(gids.tolist()))}


def action_distribution(traj: Trajectory, roster: Roster) -> dict:
    gids = roster.group_ids()
    out = {}
    for g in sorted(set(gids.tolist())):
        acts = traj.actions[:, gids == g].ravel()
        counts = np.bincount(acts, minlength=len(Action))
        out[int(g)] = {ACTION_NAMES[a]: 100.0 * counts[a] / acts.size for a in Action}
    return out


@dataclass
class BenefitReport:
    market: str
    battery_kwh: float
    seed: int
    benefits: dict  # scenario -> group -> total average benefit
    actions: dict  # group -> action name -> percent
    per_agent: dict  # scenario -> list of per-agent totals
    config: dict = field(default_factory=dict)
    mask_violations: int = 0

    @property
    def label(self) -> str:
        return f"{self.market}/{self.battery_kwh:g}kWh"

    @property
    def groups(self) -> list[int]:
        return sorted(self.benefits["nominal"])

    def write_benefits_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["group", "scenario", "total_avg_benefit"])
            for scenario in SCENARIOS:
                for g, v in sorted(self.benefits.get(scenario, {}).items()):
                    w.writerow([g, scenario, f"{v:.6f}"])

    def write_actions_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["group", "action", "percent"])
            for g, dist in sorted(self.actions.items()):
                for name in ACTION_NAMES.values():
                    w.writerow([g, name, f"{dist[name]:.4f}"])

    def to_json(self) -> str:
        doc = {
            "market": self.market, "battery_kwh": self.battery_kwh, "seed": self.seed,
            "benefits": {s: {str(g): v for g, v in b.items()} for s, b in self.benefits.items()},
            "actions": {str(g): d for g, d in self.actions.items()},
            "per_agent": self.per_agent, "mask_violations": self.mask_violations, "config": self.config,
        }
        return json.dumps(doc, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "BenefitReport":
        doc = json.loads(text)
        return cls(
            market=doc["market"], battery_kwh=doc["battery_kwh"], seed=doc["seed"],
            benefits={s: {int(g): v for g, v in b.items()} for s, b in doc["benefits"].items()},
            actions={int(g): d for g, d in doc["actions"].items()},
            per_agent=doc["per_agent"], config=doc.get("config", {}),
            mask_violations=doc.get("mask_violations", 0),
        )

    @classmethod
    def load(cls, path) -> "BenefitReport":
        return cls.from_json(Path(path).read_text())


def fit_adversary(config: ExperimentConfig, roster: Roster, rng: np.random.Generator):
    windows = price_windows(roster.price.values, config.vaegan_windows, config.vaegan_price_noise, rng)
    return train_vaegan(
        windows, rng, epochs=config.vaegan_epochs, batch_size=config.vaegan_batch,
        form=config.discriminator_loss_form, encoder_dims=config.encoder_dims, latent_dim=config.latent_dim,
        decoder_dims=config.decoder_dims, discriminator_dims=config.discriminator_dims,
        learning_rate=config.vaegan_lr, zeta=config.balance_factor,
        deviation_mean=config.deviation_mean, deviation_sd=config.deviation_sd,
    )


def manipulated_series(config: ExperimentConfig, roster: Roster, nets: VaeGanNets | None = None,
                       output_dir=None):
    """Fit (or reuse) the adversary and produce the manipulated sell/buy series for the horizon."""
    if not config.adversary_full_knowledge:
        raise ValueError("the adversary needs full knowledge of the simulator state")
    rng = seed_streams(config.seed)[3]
    if nets is None:
        nets, curves = fit_adversary(config, roster, rng)
    else:
        curves = []
    _, _, price = roster.sample_series(None, 0.0)
    prices = adversarial_prices(nets, price, rng)
    if output_dir is not None:
        out = Path(output_dir)
        out.mkdir(parents=True, exist_ok=True)
        prices.to_csv(out / "prices.csv")
        nets.save(out / "vaegan.npz")
    return prices, nets, curves


def run_experiment(config: ExperimentConfig, output_dir=None, agents: list[AgentNets] | None = None) -> BenefitReport:
    """Train (unless ``agents`` is given), then evaluate one noise-free episode with frozen policies.

    With ``config.manipulation`` the same trajectory is also settled at the
    adversary's prices, so both scenarios share identical trades.
    """
    out = Path(output_dir if output_dir is not None else config.output_dir)
    roster = roster_from_config(config)  # profile / config errors surface before any training
    violations = 0
    if agents is None:
        result = train(config, roster, out)
        agents, violations = result.agents, result.violations
    sell = buy = None
    if config.manipulation:
        prices, _, _ = manipulated_series(config, roster, output_dir=out)
        sell, buy = prices.sell_price, prices.buy_price
    demand, pv, price = roster.sample_series(None, 0.0)
    traj = run_episode(roster, agents, demand, pv, price, 0.0, None, windows_from_config(config),
                       config.risk_aversion, sell, buy, False, config.delta_t_h)
    benefits = {"nominal": group_benefits(traj, roster)}
    per_agent = {"nominal": [round(float(x), 10) for x in traj.total_benefit()]}
    if config.manipulation:
        benefits["manipulated"] = group_benefits(traj, roster, manipulated=True)
        per_agent["manipulated"] = [round(float(x), 10) for x in traj.total_benefit(True)]
    report = BenefitReport(config.market, config.battery_kwh, config.seed, benefits,
                           action_distribution(traj, roster), per_agent, config.to_dict(),
                           violations + traj.violations)
    out.mkdir(parents=True, exist_ok=True)
    report.write_benefits_csv(out / "benefits.csv")
    report.write_actions_csv(out / "actions.csv")
    (out / "report.json").write_text(report.to_json() + "\n")
    (out / "config.txt").write_text(config.to_text())
    return report


def evaluate_checkpoints(config: ExperimentConfig, checkpoint_dir, output_dir=None) -> BenefitReport:
    roster = roster_from_config(config)
    agents = load_agents(checkpoint_dir, [a.agent_id for a in roster.agents], config.actor_lr, config.critic_lr)
    return run_experiment(config, output_dir, agents)


def compare(reports: list[BenefitReport], scenarios: list[str] | None = None) -> list[dict]:
    """Per-group benefits side by side, with deltas relative to the first column.

    ``scenarios`` picks the settlement per report (default all nominal), so
    ``compare([r, r], ["nominal", "manipulated"])`` contrasts one run with
    itself under attack.
    """
    if len(reports) < 2:
        raise ValueError("compare needs at least two reports")
    scenarios = list(scenarios) if scenarios is not None else ["nominal"] * len(reports)
    if len(scenarios) != len(reports):
        raise ValueError("one scenario per report")
    groups = reports[0].groups
    for r, sc in zip(reports, scenarios):
        if r.groups != groups:
            raise ValueError(f"group structure differs: {reports[0].label} {groups} vs {r.label} {r.groups}")
        if sc not in r.benefits:
            raise ValueError(f"{r.label} has no {sc} scenario")
    labels = [f"{r.label}:{sc}" for r, sc in zip(reports, scenarios)]
    rows = []
    for g in groups:
        vals = [r.benefits[sc][g] for r, sc in zip(reports, scenarios)]
        row = {"group": g}
        for k, (lab, v) in enumerate(zip(labels, vals)):
            row[lab if lab not in row else f"{lab}#{k}"] = v
            if k:
                row[f"delta_{k}"] = v - vals[0]
        rows.append(row)
    return rows


SWEEP_CELLS = tuple((m, b) for m in ("LEM_A", "LEM_B") for b in (5.0, 13.0))


def sweep(config: ExperimentConfig, output_dir, cells=SWEEP_CELLS) -> list[BenefitReport]:
    """Every market x battery size, each with nominal and manipulated settlement."""
    out = Path(output_dir)
    reports = []
    for market, kwh in cells:
        cell = config.replace(market=market, battery_kwh=kwh, manipulation=True, group_counts=())
        reports.append(run_experiment(cell, out / f"{market}_{kwh:g}kWh"))
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "sweep.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["market", "battery_kwh", "group", "scenario", "total_avg_benefit"])
        for r in reports:
            for scenario in SCENARIOS:
                for g, v in sorted(r.benefits.get(scenario, {}).items()):
                    w.writerow([r.market, f"{r.battery_kwh:g}", g, scenario, f"{v:.6f}"])
    return reports
