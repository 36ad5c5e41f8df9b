"""Experiment configuration: one flat dataclass, loadable from ``key = value`` text."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

from .data import MARKETS, ConfigError


@dataclass
class ExperimentConfig:
    # scenario
    market: str = "LEM_A"  # LEM_A | LEM_B | custom
    group_counts: tuple = ()  # agents per group, custom market only
    battery_kwh: float = 5.0
    manipulation: bool = False
    seed: int = 0
    horizon_h: int = 48
    delta_t_h: float = 1.0
    efficiency: float = 0.7
    soc_min: float = 0.1
    soc_max: float = 1.0
    initial_soc: float = 0.5
    demand_noise_sd: float = 0.05
    buy_start: int = 17
    buy_end: int = 8
    sell_start: int = 6
    sell_end: int = 12
    # MADDPG
    epochs: int = 100
    episodes_per_epoch: int = 48
    gamma: float = 0.95
    actor_lr: float = 0.01
    critic_lr: float = 0.1
    actor_hidden: tuple = (64,)
    critic_hidden: tuple = (64, 64)
    risk_aversion: float = 0.5
    eps_start: float = 0.5
    eps_end: float = 0.05
    eval_every: int = 10
    checkpoint_every: int = 10
    manipulated_rewards: bool = True  # only used when training under a manipulated signal
    # VAE-GAN adversary
    vaegan_lr: float = 0.001
    vaegan_epochs: int = 100
    vaegan_batch: int = 16
    vaegan_windows: int = 1024
    vaegan_price_noise: float = 0.02
    deviation_mean: float = 0.4
    deviation_sd: float = 0.1
    balance_factor: float = 1.0
    encoder_dims: tuple = (24, 32, 16)
    latent_dim: int = 24
    decoder_dims: tuple = (24, 16, 32, 24)
    discriminator_dims: tuple = (24, 32, 16, 1)
    discriminator_loss_form: str = "canonical"  # canonical | as_printed
    adversary_full_knowledge: bool = True
    # inputs / outputs
    demand_g1: str = ""
    demand_g2: str = ""
    demand_g3: str = ""
    demand_g4: str = ""
    pv_g3: str = ""
    pv_g4: str = ""
    price: str = ""
    output_dir: str = "runs/default"
    _source: str = field(default="", repr=False, compare=False)

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.market not in MARKETS and self.market != "custom":
            raise ConfigError(f"market must be LEM_A, LEM_B or custom, got {self.market!r}")
        if self.market == "custom" and len(self.group_counts) != 4:
            raise ConfigError("custom market needs group_counts with four entries")
        if self.horizon_h <= 0 or self.horizon_h % 24:
            raise ConfigError("horizon_h must be a positive multiple of 24")
        if self.epochs < 1 or self.episodes_per_epoch < 1:
            raise ConfigError("epochs and episodes_per_epoch must be >= 1")
        if not 0 <= self.gamma < 1:
            raise ConfigError("gamma must lie in [0, 1)")
        if not 0 <= self.risk_aversion < 1:
            raise ConfigError("risk_aversion must lie in [0, 1)")
        if self.discriminator_loss_form not in ("canonical", "as_printed"):
            raise ConfigError("discriminator_loss_form must be canonical or as_printed")
        if self.encoder_dims[0] != self.decoder_dims[-1] or self.encoder_dims[0] != self.discriminator_dims[0]:
            raise ConfigError("encoder input, decoder output and discriminator input must match")
        if self.decoder_dims[0] != self.latent_dim or self.discriminator_dims[-1] != 1:
            raise ConfigError("decoder must start at the latent size and the discriminator end at 1")
        if self.manipulation and not self.adversary_full_knowledge:
            raise ConfigError("manipulation needs adversary_full_knowledge = true")

    def profile_paths(self) -> dict:
        keys = ("demand_g1", "demand_g2", "demand_g3", "demand_g4", "pv_g3", "pv_g4", "price")
        return {k: getattr(self, k) for k in keys if getattr(self, k)}

    def to_dict(self) -> dict:
        out = {}
        for f in dataclasses.fields(self):
            if f.name.startswith("_"):
                continue
            v = getattr(self, f.name)
            out[f.name] = list(v) if isinstance(v, tuple) else v
        return out

    def to_text(self) -> str:
        lines = []
        for k, v in self.to_dict().items():
            if isinstance(v, list):
                v = ",".join(str(x) for x in v)
            elif isinstance(v, bool):
                v = "true" if v else "false"
            lines.append(f"{k} = {v}")
        return "\n".join(lines) + "\n"

    def replace(self, **changes) -> "ExperimentConfig":
        return with_overrides(self, changes)


_FIELDS = {f.name: f for f in dataclasses.fields(ExperimentConfig) if not f.name.startswith("_")}


def _coerce(name: str, raw):
    default = _FIELDS[name].default
    if not isinstance(raw, str):
        if isinstance(default, tuple):
            return tuple(int(x) for x in raw)
        if isinstance(default, bool):
            return bool(raw)
        return type(default)(raw)
    text = raw.strip()
    try:
        if isinstance(default, bool):
            low = text.lower()
            if low in ("true", "yes", "on", "1"):
                return True
            if low in ("false", "no", "off", "0"):
                return False
            raise ValueError(text)
        if isinstance(default, tuple):
            return tuple(int(x) for x in text.split(",") if x.strip())
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
    except ValueError:
        raise ConfigError(f"{name}: cannot parse {raw!r} as {type(default).__name__}") from None
    return text


def with_overrides(base: ExperimentConfig, overrides: dict) -> ExperimentConfig:
    values = {k: getattr(base, k) for k in _FIELDS}
    for key, raw in overrides.items():
        if raw is None:
            continue
        if key not in _FIELDS:
            raise ConfigError(f"unknown config key {key!r}")
        values[key] = _coerce(key, raw)
    cfg = ExperimentConfig(**values)
    cfg._source = base._source
    return cfg


def parse_config_text(text: str, source: str = "<text>") -> dict:
    out = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in _FIELDS:
            raise ConfigError(f"{source}:{lineno}: unknown config key {key!r}")
        if key in out:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def load_config(path=None, overrides: dict | None = None) -> ExperimentConfig:
    """Defaults, then the file, then ``overrides`` (highest precedence)."""
    cfg = ExperimentConfig()
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file {path} does not exist")
        cfg = with_overrides(cfg, parse_config_text(path.read_text(), str(path)))
        cfg._source = str(path)
    if overrides:
        cfg = with_overrides(cfg, overrides)
    return cfg
