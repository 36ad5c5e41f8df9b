"""VAE-GAN price adversary.

The VAE learns the daily price distribution, the discriminator pushes its
reconstructions towards realistic days, and the manipulation step offsets a
reconstruction by a random deviation so that sellers are paid no more and
buyers are charged no less than the nominal price.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .market import DomainError
from .nn import (
    PROB_CLAMP,
    AdamState,
    DenseNet,
    adam_step,
    backward,
    forward,
    load_checkpoint,
    reparameterize,
    save_checkpoint,
)

WINDOW = 24
LOSS_FORMS = ("canonical", "as_printed")
PRICE_COLUMNS = ("hour", "nominal", "reconstruction", "deviation", "sell_price", "buy_price")


class TrainingDiverged(RuntimeError):
    pass


def kl_divergence(mu, log_var) -> float:
    """KL(N(mu, exp(log_var)) || N(0, I)), summed over latent dims, averaged over rows."""
    mu = np.atleast_2d(mu)
    log_var = np.atleast_2d(log_var)
    per_row = -0.5 * np.sum(1.0 + log_var - mu ** 2 - np.exp(log_var), axis=1)
    return float(per_row.mean())


def vae_loss(reconstruction, original, mu, log_var) -> float:
    reconstruction = np.asarray(reconstruction, dtype=float)
    original = np.asarray(original, dtype=float)
    if reconstruction.shape != original.shape:
        raise DomainError(f"shape mismatch {reconstruction.shape} vs {original.shape}")
    return float(np.mean((reconstruction - original) ** 2)) + kl_divergence(mu, log_var)


def discriminator_loss(d_real, d_fake, form: str = "as_printed") -> float:
    """``as_printed``: -mean log D(real) + mean log(1 - D(fake)).

    ``canonical`` flips the second term to the usual binary cross-entropy
    -mean log(1 - D(fake)). Probabilities are clamped away from 0 and 1.
    """
    if form not in LOSS_FORMS:
        raise ValueError(f"unknown discriminator loss form {form!r}")
    real = np.clip(np.asarray(d_real, dtype=float), PROB_CLAMP, 1 - PROB_CLAMP)
    fake = np.clip(np.asarray(d_fake, dtype=float), PROB_CLAMP, 1 - PROB_CLAMP)
    second = float(np.mean(np.log(1.0 - fake)))
    return -float(np.mean(np.log(real))) + (second if form == "as_printed" else -second)


def total_loss(l_vae: float, l_d: float, zeta: float = 1.0) -> float:
    return l_vae + zeta * l_d


@dataclass
class ManipulatedPrices:
    nominal: np.ndarray
    reconstruction: np.ndarray
    deviations: np.ndarray
    sell_price: np.ndarray  # min(nominal, reconstruction + deviation)
    buy_price: np.ndarray  # max(nominal, reconstruction + deviation)
    applied: np.ndarray | None = None  # (n, T) price each agent settles at, if positions were given

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(PRICE_COLUMNS)
            for t in range(len(self.nominal)):
                w.writerow([t] + [f"{float(x[t]):.10g}" for x in (
                    self.nominal, self.reconstruction, self.deviations, self.sell_price, self.buy_price)])


def manipulate(nominal, reconstruction, deviations, positions=None) -> ManipulatedPrices:
    """Direction-aware prices: sellers get the lower, buyers the higher of nominal and offset reconstruction.

    ``positions`` is an optional ``(n, T)`` array of net energy per agent
    (positive = deficit, negative = surplus); it fills ``applied``.
    """
    nominal = np.asarray(nominal, dtype=float)
    reconstruction = np.asarray(reconstruction, dtype=float)
    deviations = np.asarray(deviations, dtype=float)
    if not (nominal.shape == reconstruction.shape == deviations.shape) or nominal.ndim != 1:
        raise DomainError(f"length mismatch: nominal {nominal.shape}, reconstruction "
                          f"{reconstruction.shape}, deviations {deviations.shape}")
    shifted = reconstruction + deviations
    sell = np.minimum(nominal, shifted)
    buy = np.maximum(nominal, shifted)
    applied = None
    if positions is not None:
        positions = np.asarray(positions, dtype=float)
        if positions.ndim != 2 or positions.shape[1] != len(nominal):
            raise DomainError("positions must be (n_agents, T) with T matching the price series")
        applied = np.where(positions < 0, sell, np.where(positions > 0, buy, nominal))
    return ManipulatedPrices(nominal, reconstruction, deviations, sell, buy, applied)


def sample_deviations(n: int, mean: float = 0.4, sd: float = 0.1,
                      rng: np.random.Generator | None = None) -> np.ndarray:
    rng = rng if rng is not None else np.random.default_rng()
    return rng.normal(mean, sd, size=n)


@dataclass
class VaeGanNets:
    trunk: DenseNet  # encoder body
    mu_head: DenseNet
    logvar_head: DenseNet
    decoder: DenseNet
    discriminator: DenseNet
    price_lo: float = 0.0
    price_span: float = 1.0
    learning_rate: float = 1e-3
    zeta: float = 1.0
    deviation_mean: float = 0.4
    deviation_sd: float = 0.1
    opts: dict = field(default_factory=dict)

    @classmethod
    def build(cls, rng: np.random.Generator, encoder_dims=(24, 32, 16), latent_dim=24,
              decoder_dims=(24, 16, 32, 24), discriminator_dims=(24, 32, 16, 1),
              learning_rate=1e-3, zeta=1.0, deviation_mean=0.4, deviation_sd=0.1) -> "VaeGanNets":
        enc = list(encoder_dims)
        trunk = DenseNet(enc, ["relu"] * (len(enc) - 1), rng)
        mu_head = DenseNet([enc[-1], latent_dim], ["identity"], rng)
        lv_head = DenseNet([enc[-1], latent_dim], ["identity"], rng)
        dec = list(decoder_dims)
        decoder = DenseNet(dec, ["relu"] * (len(dec) - 2) + ["identity"], rng)
        dis = list(discriminator_dims)
        disc = DenseNet(dis, ["relu"] * (len(dis) - 2) + ["sigmoid"], rng)
        nets = cls(trunk, mu_head, lv_head, decoder, disc, learning_rate=learning_rate, zeta=zeta,
                   deviation_mean=deviation_mean, deviation_sd=deviation_sd)
        nets.opts = {k: AdamState(learning_rate) for k in ("trunk", "mu_head", "logvar_head", "decoder", "discriminator")}
        return nets

    def networks(self) -> dict:
        return {"trunk": self.trunk, "mu_head": self.mu_head, "logvar_head": self.logvar_head,
                "decoder": self.decoder, "discriminator": self.discriminator}

    def normalize(self, prices) -> np.ndarray:
        return (np.asarray(prices, dtype=float) - self.price_lo) / self.price_span

    def denormalize(self, x) -> np.ndarray:
        return np.asarray(x) * self.price_span + self.price_lo

    def encode(self, x_norm):
        h = self.trunk(x_norm)
        return self.mu_head(h), self.logvar_head(h)

    def reconstruct(self, prices) -> np.ndarray:
        """Deterministic reconstruction (latent mean) of one or more 24-hour windows."""
        mu, _ = self.encode(self.normalize(prices))
        return self.denormalize(self.decoder(mu))

    def save(self, path) -> Path:
        meta = {k: getattr(self, k) for k in ("price_lo", "price_span", "learning_rate", "zeta",
                                              "deviation_mean", "deviation_sd")}
        return save_checkpoint(path, self.networks(), meta)

    @classmethod
    def load(cls, path) -> "VaeGanNets":
        nets, meta = load_checkpoint(path)
        obj = cls(**nets, **meta)
        obj.opts = {k: AdamState(obj.learning_rate) for k in nets}
        return obj


def vae_forward_backward(nets: VaeGanNets, x: np.ndarray, noise: np.ndarray, zeta: float = 0.0,
                         adversarial: bool = False):
    """L_vae (plus ``zeta * mean log(1 - D(recon))`` if ``adversarial``) and its encoder/decoder gradients.

    ``x`` and ``noise`` are ``(B, 24)`` and ``(B, latent)`` arrays in normalized units.
    Returns ``(loss, parts, grads, recon)`` with ``grads`` keyed by network name.
    """
    B = x.shape[0]
    h, c_trunk = forward(nets.trunk, x)
    mu, c_mu = forward(nets.mu_head, h)
    lv, c_lv = forward(nets.logvar_head, h)
    z = reparameterize(mu, lv, noise)
    recon, c_dec = forward(nets.decoder, z)
    mse = float(np.mean((recon - x) ** 2))
    kl = kl_divergence(mu, lv)
    loss = mse + kl
    g_recon = 2.0 * (recon - x) / recon.size
    adv = 0.0
    if adversarial:
        d, c_d = forward(nets.discriminator, recon)
        dc = np.clip(d, PROB_CLAMP, 1 - PROB_CLAMP)
        adv = float(np.mean(np.log(1.0 - dc)))
        loss += zeta * adv
        # d/dD of mean log(1 - D); zero where the clamp is active
        g_d = zeta * (-1.0 / (1.0 - dc)) / B * ((d > PROB_CLAMP) & (d < 1 - PROB_CLAMP))
        _, g_in = backward(nets.discriminator, c_d, g_d)
        g_recon = g_recon + g_in
    g_dec, g_z = backward(nets.decoder, c_dec, g_recon)
    std = np.exp(0.5 * lv)
    g_mu = g_z + mu / B
    g_lv = g_z * 0.5 * std * noise - 0.5 * (1.0 - np.exp(lv)) / B
    g_muh, g_h1 = backward(nets.mu_head, c_mu, g_mu)
    g_lvh, g_h2 = backward(nets.logvar_head, c_lv, g_lv)
    g_trunk, _ = backward(nets.trunk, c_trunk, g_h1 + g_h2)
    grads = {"trunk": g_trunk, "mu_head": g_muh, "logvar_head": g_lvh, "decoder": g_dec}
    return loss, {"mse": mse, "kl": kl, "adv": adv}, grads, recon


def discriminator_forward_backward(nets: VaeGanNets, real: np.ndarray, fake: np.ndarray, form: str):
    """Discriminator loss and gradients; ``fake`` is treated as a constant."""
    d_real, c_r = forward(nets.discriminator, real)
    d_fake, c_f = forward(nets.discriminator, fake)
    loss = discriminator_loss(d_real, d_fake, form)

    # gradients w.r.t. D's outputs, zero where the clamp is active
    in_r = (d_real > PROB_CLAMP) & (d_real < 1 - PROB_CLAMP)
    in_f = (d_fake > PROB_CLAMP) & (d_fake < 1 - PROB_CLAMP)
    dr = np.clip(d_real, PROB_CLAMP, 1 - PROB_CLAMP)
    df = np.clip(d_fake, PROB_CLAMP, 1 - PROB_CLAMP)
    g_real = (-1.0 / dr) / len(dr) * in_r
    sign = 1.0 if form == "as_printed" else -1.0
    g_fake = sign * (-1.0 / (1.0 - df)) / len(df) * in_f
    g1, _ = backward(nets.discriminator, c_r, g_real)
    g2, _ = backward(nets.discriminator, c_f, g_fake)
    return loss, [a + b for a, b in zip(g1, g2)]


def price_windows(daily_price, n_windows: int, noise_sd: float, rng: np.random.Generator) -> np.ndarray:
    """Noisy copies of a daily price, clamped at zero: the training days."""
    base = np.asarray(daily_price, dtype=float)
    if base.shape != (WINDOW,):
        raise DomainError(f"daily price must have {WINDOW} points")
    return np.maximum(base + rng.normal(0.0, noise_sd, size=(n_windows, WINDOW)), 0.0)


def fit_normalization(nets: VaeGanNets, windows: np.ndarray) -> None:
    """Min-max scale prices seen in training to [0, 1]."""
    lo, hi = float(np.min(windows)), float(np.max(windows))
    nets.price_lo, nets.price_span = lo, (hi - lo) if hi > lo else max(abs(hi), 1.0)


def reconstruction_mse(nets: VaeGanNets, windows: np.ndarray) -> float:
    return float(np.mean((nets.reconstruct(windows) - windows) ** 2))


def train_vaegan(windows: np.ndarray, rng: np.random.Generator, epochs: int = 100, batch_size: int = 16,
                 form: str = "canonical", nets: VaeGanNets | None = None, **build_kwargs):
    """Fit the VAE-GAN on ``(N, 24)`` price windows.

    ``canonical``: the discriminator minimizes binary cross-entropy and the
    encoder/decoder minimize L_vae + zeta * mean log(1 - D(recon)).
    ``as_printed``: every network descends the literal total loss.
    Returns ``(nets, curves)``; each curve row holds epoch-mean losses.
    """
    windows = np.atleast_2d(np.asarray(windows, dtype=float))
    if windows.shape[1] != WINDOW or len(windows) < 1:
        raise DomainError(f"need at least one window of {WINDOW} prices")
    if np.any(windows < 0):
        raise DomainError("prices must be non-negative")
    if form not in LOSS_FORMS:
        raise ValueError(f"unknown discriminator loss form {form!r}")
    if nets is None:
        nets = VaeGanNets.build(rng, **build_kwargs)
    fit_normalization(nets, windows)
    data = nets.normalize(windows)
    latent = nets.mu_head.out_dim
    curves = []
    for epoch in range(1, epochs + 1):
        order = rng.permutation(len(data))
        sums = np.zeros(5)
        for start in range(0, len(data), batch_size):
            x = data[order[start:start + batch_size]]
            noise = rng.standard_normal((len(x), latent))
            l_vae_adv, parts, grads, recon = vae_forward_backward(nets, x, noise, nets.zeta, adversarial=True)
            l_vae = parts["mse"] + parts["kl"]
            l_d, g_disc = discriminator_forward_backward(nets, x, recon, form)
            l_total = total_loss(l_vae, discriminator_loss(
                nets.discriminator(x), nets.discriminator(recon), "as_printed"), nets.zeta)
            if not np.isfinite([l_vae_adv, l_d, l_total]).all():
                raise TrainingDiverged(f"non-finite VAE-GAN loss at epoch {epoch}")
            if form == "as_printed":
                # D descends the literal total loss, in which L_D enters scaled by zeta
                g_disc = [nets.zeta * g for g in g_disc]
            for name, g in grads.items():
                adam_step(nets.networks()[name].params(), g, nets.opts[name])
            adam_step(nets.discriminator.params(), g_disc, nets.opts["discriminator"])
            sums += (len(x), l_vae * len(x), l_d * len(x), l_total * len(x), parts["mse"] * len(x))
        n = sums[0]
        curves.append({"epoch": epoch, "l_vae": sums[1] / n, "l_d": sums[2] / n,
                       "l_total": sums[3] / n, "mse": sums[4] / n})
    return nets, curves


def adversarial_prices(nets: VaeGanNets, nominal, rng: np.random.Generator, positions=None) -> ManipulatedPrices:
    """Reconstruct each day of ``nominal`` and emit manipulated sell/buy series.

    Deviations are drawn once per time step. The sell price is floored at
    zero so no seller is ever charged for exporting.
    """
    nominal = np.asarray(nominal, dtype=float)
    if nominal.ndim != 1 or len(nominal) % WINDOW:
        raise DomainError(f"nominal price length must be a multiple of {WINDOW}")
    recon = nets.reconstruct(nominal.reshape(-1, WINDOW)).reshape(-1)
    dev = sample_deviations(len(nominal), nets.deviation_mean, nets.deviation_sd, rng)
    out = manipulate(nominal, recon, dev, positions)
    out.sell_price = np.maximum(out.sell_price, 0.0)
    if out.applied is not None:
        out.applied = np.maximum(out.applied, 0.0)
    return out
