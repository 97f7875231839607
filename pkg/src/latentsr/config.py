"""Flat `key = value` run configuration with environment/flag overrides.

Precedence for the seed: config file < ORL_SEED environment variable < --seed
flag. Unknown keys are rejected so typos fail loudly, and every command echoes
the fully resolved configuration to config_resolved.txt in its output
directory.
"""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass
from pathlib import Path

from .errors import ConfigurationError

ENV_SEED_VAR = "ORL_SEED"


@dataclass
class RunConfig:
    # reproducibility
    seed: int = 42
    threads: int = 1
    # geometry
    image_side: int = 32
    latent_side: int = 8
    # diffusion schedule
    timesteps: int = 50
    beta_min: float = 1e-3
    beta_max: float = 0.12
    # corpus
    scenes_per_category: int = 25
    degrade_factor: int = 4
    degrade_noise_sigma: float = 0.02
    # denoiser pretraining
    denoiser_hidden: tuple = (128, 128)
    pretrain_steps: int = 2000
    pretrain_batch: int = 64
    pretrain_lr: float = 3e-4
    # PPO
    learning_rate: float = 3e-4
    gamma: float = 0.99
    gae_lambda: float = 0.95
    clip: float = 0.2
    value_coef: float = 0.5
    entropy_coef: float = 0.01
    update_epochs: int = 4
    batch_size: int = 64
    train_epochs: int = 200
    steps_per_epoch: int = 1000
    policy_hidden: tuple = (64, 64)
    value_hidden: tuple = (64, 64)
    log_std_init: float = -0.5
    stop_bias_init: float = -2.0
    # reward normalization
    psnr_norm_db: float = 50.0
    perceptual_norm: float = 0.5


_FIELDS = {f.name: f for f in dataclasses.fields(RunConfig)}


def _coerce(key: str, text: str):
    default = getattr(RunConfig(), key)
    text = text.strip()
    try:
        if isinstance(default, bool):
            raise ConfigurationError(f"boolean keys are not used: {key}")
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        if isinstance(default, tuple):
            return tuple(int(part.strip()) for part in text.split(",") if part.strip())
    except ValueError:
        raise ConfigurationError(f"cannot parse value {text!r} for key {key!r}") from None
    return text


def parse_config_text(text: str, source: str = "<config>") -> dict:
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"{source}:{lineno}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        if key not in _FIELDS:
            raise ConfigurationError(f"{source}:{lineno}: unknown config key {key!r}")
        values[key] = _coerce(key, value)
    return values


def resolve_config(
    config_path=None,
    seed_flag: int | None = None,
    threads_flag: int | None = None,
    environ=None,
) -> RunConfig:
    """Build the effective RunConfig from file + environment + flags."""
    environ = os.environ if environ is None else environ
    values = {}
    if config_path is not None:
        path = Path(config_path)
        if not path.exists():
            raise ConfigurationError(f"config file not found: {path}")
        values = parse_config_text(path.read_text(), source=str(path))
    env_seed = environ.get(ENV_SEED_VAR)
    if env_seed is not None:
        try:
            values["seed"] = int(env_seed)
        except ValueError:
            raise ConfigurationError(f"{ENV_SEED_VAR} must be an integer, got {env_seed!r}") from None
    if seed_flag is not None:
        values["seed"] = int(seed_flag)
    if threads_flag is not None:
        values["threads"] = int(threads_flag)
    cfg = RunConfig(**values)
    if cfg.threads < 1:
        raise ConfigurationError(f"threads must be >= 1, got {cfg.threads}")
    if cfg.image_side % cfg.latent_side != 0:
        raise ConfigurationError(
            f"latent_side {cfg.latent_side} must divide image_side {cfg.image_side}"
        )
    if cfg.image_side % cfg.degrade_factor != 0:
        raise ConfigurationError(
            f"degrade_factor {cfg.degrade_factor} must divide image_side {cfg.image_side}"
        )
    return cfg


def render_config(cfg: RunConfig) -> str:
    lines = []
    for f in dataclasses.fields(RunConfig):
        value = getattr(cfg, f.name)
        if isinstance(value, tuple):
            value = ",".join(str(v) for v in value)
        lines.append(f"{f.name} = {value}")
    return "\n".join(lines) + "\n"
