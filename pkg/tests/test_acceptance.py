"""Acceptance checks. Each test prints one PASS/FAIL line with the measured values.

Run ``pytest tests/test_acceptance.py -v`` (lines are printed even under capture).
"""

import time
from fractions import Fraction

import numpy as np
import pytest

from gradcheck import check_params
from lemsim.adversary import (
    VaeGanNets,
    discriminator_forward_backward,
    fit_normalization,
    manipulate,
    price_windows,
    reconstruction_mse,
    train_vaegan,
    vae_forward_backward,
)
from lemsim.config import ExperimentConfig
from lemsim.env import ACT_DIM, OBS_DIM
from lemsim.experiment import group_benefits, manipulated_series, run_experiment
from lemsim.maddpg import (
    JointBatch,
    actor_gradients,
    make_agents,
    make_batch,
    roster_from_config,
    run_episode,
    train,
    windows_from_config,
)
from lemsim.market import Action, EnergyPosition, clear_market
from lemsim.nn import DenseNet, backward, forward


@pytest.fixture
def emit(capsys):
    def _emit(n, ok, detail):
        with capsys.disabled():
            print(f"\n[{'PASS' if ok else 'FAIL'}] criterion {n}: {detail}")
    return _emit


# 1 -------------------------------------------------------------------------

def exact_clear(deficits, surpluses):
    d = [Fraction(x) for x in deficits]
    s = [Fraction(x) for x in surpluses]
    D, S = sum(d), sum(s)
    n = len(d)
    if D == 0 and S == 0:
        return [0.0] * n, [0.0] * n, [0.0] * n, [0.0] * n
    if D >= S:
        f = S / D
        lp, ls, gi, ge = [f * x for x in d], s, [(1 - f) * x for x in d], [0] * n
    else:
        f = D / S
        lp, ls, gi, ge = d, [f * x for x in s], [0] * n, [(1 - f) * x for x in s]
    return tuple([float(v) for v in arr] for arr in (lp, ls, gi, ge))


def test_criterion_1_clearing_oracle(emit):
    rng = np.random.default_rng(2024)
    t0 = time.perf_counter()
    worst, worst_cons = 0.0, 0.0
    for _ in range(10_000):
        n = rng.integers(1, 5)
        vals = rng.uniform(0, 10, n) * (rng.random(n) > 0.15)  # some exact zeros
        is_def = rng.random(n) < 0.5
        deficits = np.where(is_def, vals, 0.0)
        surpluses = np.where(is_def, 0.0, vals)
        out = clear_market([EnergyPosition(d - s, d, -s) for d, s in zip(deficits, surpluses)])
        ref = exact_clear(deficits, surpluses)
        for got, want in zip((out.local_purchase_kwh, out.local_sale_kwh, out.grid_import_kwh,
                              out.grid_export_kwh), ref):
            worst = max(worst, float(np.max(np.abs(got - np.array(want)))))
        worst_cons = max(worst_cons, abs(out.local_purchase_kwh.sum() - out.local_sale_kwh.sum()))
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-9 and worst_cons <= 1e-9 and elapsed < 10
    emit(1, ok, f"10^4 markets, max deviation {worst:.2e} kWh, max imbalance {worst_cons:.2e} kWh, "
                f"{elapsed:.2f} s (limits 1e-9, 10 s)")
    assert ok


# 2 -------------------------------------------------------------------------

def net_error(dims, acts, seed):
    rng = np.random.default_rng(seed)
    net = DenseNet(dims, acts, rng)
    x = rng.normal(size=(4, dims[0]))
    r = rng.normal(size=(4, dims[-1]))
    _, cache = forward(net, x)
    grads, _ = backward(net, cache, r)
    return check_params(lambda: float(np.sum(net(x) * r)), net.params(), grads, rng)


def test_criterion_2_gradient_suite(emit):
    t0 = time.perf_counter()
    worst = {}
    for seed in range(20):
        rng = np.random.default_rng(1000 + seed)
        # actor and critic as networks, plus the actor's full policy-gradient chain
        e_actor = net_error([9, 64, 3], ["relu", "softmax"], seed)
        e_critic = net_error([240, 64, 64, 1], ["relu", "relu", "identity"], seed)
        ag = make_agents(3, rng)[0]
        T = 6
        obs = rng.uniform(size=(T, 3, OBS_DIM))
        batch = JointBatch(obs, (rng.random((T, 3, ACT_DIM)) < 0.7) | (np.arange(3) == Action.NOOP),
                           obs.reshape(T, -1), rng.dirichlet(np.ones(3), (T, 3)).reshape(T, -1),
                           np.zeros((T, 3)), obs.reshape(T, -1), np.zeros((T, 9)), np.ones(T, bool))
        batch.masks = batch.masks.astype(float)
        _, g = actor_gradients(ag, batch, 1)
        e_chain = check_params(lambda: actor_gradients(ag, batch, 1)[0], ag.actor.params(), g, rng)
        # VAE-GAN: encoder (trunk + heads) and decoder through the full VAE loss, discriminator via its loss
        nets = VaeGanNets.build(rng)
        x = rng.uniform(size=(4, 24))
        noise = rng.standard_normal((4, 24))
        _, _, vg, _ = vae_forward_backward(nets, x, noise, 1.0, True)
        f = lambda: vae_forward_backward(nets, x, noise, 1.0, True)[0]
        e_enc = max(check_params(f, nets.networks()[k].params(), vg[k], rng) for k in ("trunk", "mu_head", "logvar_head"))
        e_dec = check_params(f, nets.decoder.params(), vg["decoder"], rng)
        fake = rng.uniform(size=(4, 24))
        _, dg = discriminator_forward_backward(nets, x, fake, "canonical")
        e_dis = check_params(lambda: discriminator_forward_backward(nets, x, fake, "canonical")[0],
                             nets.discriminator.params(), dg, rng)
        for k, v in {"actor": max(e_actor, e_chain), "critic": e_critic, "encoder": e_enc,
                     "decoder": e_dec, "discriminator": e_dis}.items():
            worst[k] = max(worst.get(k, 0.0), v)
    elapsed = time.perf_counter() - t0
    ok = max(worst.values()) < 1e-4 and elapsed < 60
    detail = ", ".join(f"{k} {v:.1e}" for k, v in worst.items())
    emit(2, ok, f"20 seeds, step 1e-5, worst relative error: {detail}; {elapsed:.1f} s (limits 1e-4, 60 s)")
    assert ok


# 3 -------------------------------------------------------------------------

def test_criterion_3_price_envelope(emit):
    rng = np.random.default_rng(3)
    n = 100_000
    nominal = rng.uniform(0, 1, n)
    recon = rng.uniform(-0.5, 1.5, n)
    dev = rng.normal(0.4, 0.1, n)
    # include exact ties
    recon[:1000] = nominal[:1000] - dev[:1000]
    m = manipulate(nominal, recon, dev)
    violations = int(np.sum(m.sell_price > nominal) + np.sum(nominal > m.buy_price))
    emit(3, violations == 0, f"10^5 triples, {violations} envelope violations")
    assert violations == 0


# 4 -------------------------------------------------------------------------

def dominance_case(market, kwh, epochs, episodes):
    cfg = ExperimentConfig(market=market, battery_kwh=kwh, epochs=epochs, episodes_per_epoch=episodes,
                           eval_every=epochs, manipulation=True, seed=11)
    roster = roster_from_config(cfg)
    agents = train(cfg, roster).agents  # frozen from here on
    prices, _, _ = manipulated_series(cfg, roster)
    d, g, p = roster.sample_series(None, 0.0)
    w = windows_from_config(cfg)
    nominal = run_episode(roster, agents, d, g, p, 0.0, None, w)
    attacked = run_episode(roster, agents, d, g, p, 0.0, None, w, sell_price=prices.sell_price,
                           buy_price=prices.buy_price)
    same_trades = np.array_equal(nominal.actions, attacked.actions) and np.allclose(nominal.deficit, attacked.deficit)
    return group_benefits(nominal, roster), group_benefits(attacked, roster, manipulated=True), same_trades


def test_criterion_4_manipulation_dominance(emit):
    ok = True
    parts = []
    for market, kwh, epochs, episodes in (("LEM_A", 5.0, 2, 8), ("LEM_A", 13.0, 2, 8),
                                          ("LEM_B", 5.0, 1, 4), ("LEM_B", 13.0, 1, 4)):
        nom, man, same = dominance_case(market, kwh, epochs, episodes)
        dominated = all(man[k] <= nom[k] + 1e-12 for k in nom)
        g1_neg = nom[1] < 0 and man[1] < 0
        ok &= dominated and g1_neg and same
        parts.append(f"{market}/{kwh:g}kWh " + " ".join(f"G{k} {nom[k]:.2f}->{man[k]:.2f}" for k in sorted(nom))
                     + ("" if same else " [trades differ]"))
    emit(4, ok, "manipulated <= nominal for all groups, G1 < 0: " + "; ".join(parts))
    assert ok


# 5 and 6 share the same training runs ---------------------------------------

BUY_HOURS = set(range(17, 24)) | set(range(0, 8))
SELL_HOURS = set(range(6, 12))


def independent_violations(traj, roster) -> int:
    """Recheck executed actions against the window and resource rules from raw trajectory data."""
    T, n = traj.actions.shape
    stored = np.zeros((T, n))
    for i, a in enumerate(roster.agents):
        b = a.battery
        if b is not None:
            energy = np.maximum(traj.soc[:-1, i] - b.soc_min, 0.0) * b.capacity_kwh * b.discharge_eff
            stored[:, i] = np.minimum(b.power_cap_kw, energy / b.delta_t_h)
    supply = traj.generation.T + stored
    demand = traj.demand.T
    in_buy = np.isin(traj.hours, list(BUY_HOURS))[:, None]
    in_sell = np.isin(traj.hours, list(SELL_HOURS))[:, None]
    bad_buy = (traj.actions == Action.BUY) & ~(in_buy & (demand > supply))
    bad_sell = (traj.actions == Action.SELL) & ~(in_sell & (supply > demand))
    return int(bad_buy.sum() + bad_sell.sum())


@pytest.fixture(scope="module")
def lem_a_runs():
    runs = []
    t0 = time.perf_counter()
    for seed in range(5):
        cfg = ExperimentConfig(market="LEM_A", epochs=10, seed=seed)
        roster = roster_from_config(cfg)
        counts = {"episodes": 0, "executed": 0, "recheck": 0}

        def watch(epoch, traj, counts=counts, roster=roster):
            counts["episodes"] += 1
            counts["executed"] += traj.actions.size
            counts["recheck"] += independent_violations(traj, roster)

        res = train(cfg, roster, on_episode=watch)
        d, g, p = roster.sample_series(None, 0.0)
        ev = run_episode(roster, res.agents, d, g, p, 0.0, None, windows_from_config(cfg))
        runs.append((seed, group_benefits(ev, roster), res.violations, counts))
    return runs, time.perf_counter() - t0


def test_criterion_5_group_ordering(emit, lem_a_runs):
    runs, elapsed = lem_a_runs
    good = 0
    parts = []
    for seed, b, _, _ in runs:
        ordered = min(b[3], b[4]) > b[2] > b[1]
        good += ordered
        parts.append(f"seed {seed}: " + " ".join(f"G{k} {b[k]:.3f}" for k in (1, 2, 3, 4)) + ("" if ordered else " (x)"))
    ok = good >= 4 and elapsed < 600
    emit(5, ok, f"G3,G4 > G2 > G1 in {good}/5 seeds (need 4), {elapsed:.0f} s (limit 600 s); " + "; ".join(parts))
    assert ok


def test_criterion_6_mask_soundness(emit, lem_a_runs):
    runs, _ = lem_a_runs
    attempted = sum(r[2] for r in runs)
    recheck = sum(r[3]["recheck"] for r in runs)
    executed = sum(r[3]["executed"] for r in runs)
    episodes = sum(r[3]["episodes"] for r in runs)
    ok = attempted == 0 and recheck == 0
    emit(6, ok, f"{episodes} episodes, {executed} executed actions: {recheck} rule violations on independent "
                f"recheck, {attempted} masked actions proposed by policies")
    assert ok


# 7 -------------------------------------------------------------------------

def test_criterion_7_vaegan_reconstruction(emit):
    cfg = ExperimentConfig()
    rng = np.random.default_rng(7)
    hours = np.arange(24)
    daily = 0.25 + 0.15 * np.sin(2 * np.pi * hours / 24)
    windows = price_windows(daily, cfg.vaegan_windows, cfg.vaegan_price_noise, rng)
    nets = VaeGanNets.build(np.random.default_rng(8), learning_rate=cfg.vaegan_lr, zeta=cfg.balance_factor)
    fit_normalization(nets, windows)
    before = reconstruction_mse(nets, windows)
    t0 = time.perf_counter()
    nets, _ = train_vaegan(windows, rng, epochs=100, batch_size=cfg.vaegan_batch, nets=nets,
                           form=cfg.discriminator_loss_form)
    elapsed = time.perf_counter() - t0
    after = reconstruction_mse(nets, windows)
    ratio = before / after
    ok = ratio >= 10 and elapsed < 120 and nets.learning_rate == 0.001
    emit(7, ok, f"reconstruction MSE {before:.2e} -> {after:.2e} ({ratio:.1f}x, need 10x) after 100 epochs "
                f"at lr 0.001, {elapsed:.1f} s (limit 120 s)")
    assert ok


# 8 -------------------------------------------------------------------------

def test_criterion_8_determinism(emit, tmp_path):
    cfg = ExperimentConfig(market="LEM_A", epochs=2, episodes_per_epoch=6, manipulation=True, seed=42,
                           vaegan_epochs=20)
    run_experiment(cfg, tmp_path / "a")
    run_experiment(cfg, tmp_path / "b")
    same = {f: (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
            for f in ("benefits.csv", "actions.csv")}
    ok = all(same.values())
    emit(8, ok, "byte-identical re-run: " + ", ".join(f"{f} {'yes' if v else 'NO'}" for f, v in same.items()))
    assert ok


# 9 -------------------------------------------------------------------------

def test_criterion_9_critic_width(emit):
    cfg = ExperimentConfig(market="LEM_A", epochs=1, episodes_per_epoch=1)
    roster = roster_from_config(cfg)
    agents = make_agents(roster.n_agents, np.random.default_rng(0))
    d, g, p = roster.sample_series(np.random.default_rng(0), 0.05)
    batch = make_batch(run_episode(roster, agents, d, g, p), agents)
    width = batch.critic_inputs().shape[1]
    derived = roster.n_agents * (OBS_DIM + ACT_DIM)
    ok = width == derived == agents[0].critic.in_dim == 240
    emit(9, ok, f"critic input width {width} = {roster.n_agents} agents x ({OBS_DIM}+{ACT_DIM}), expected 240")
    assert ok
