"""Flat key = value run configuration.

One ``key = value`` per line, ``#`` starts a comment line, blank lines are
ignored. The ``preset`` key (desk or paper) seeds every default; explicit
keys override it. Unknown keys are rejected by name.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

from .model import ModelConfig, desk_config, paper_config
from .trainer import TrainConfig, paper_train_config

__all__ = ["ConfigError", "RunConfig", "parse_config_text", "load_run_config",
           "SEED_ENV_VAR"]

SEED_ENV_VAR = "SBGRU_SEED"

_MODEL_KEYS = {
    "hidden_units": int,
    "enc_layers": int,
    "dec_layers": int,
    "embed_dim": int,
    "dropout": float,
    "alpha": float,
    "max_decode_len": int,
    "tau": float,
}
_TRAIN_KEYS = {
    "learning_rate": float,
    "batch_size": int,
    "max_steps": int,
    "clip_norm": float,
    "seed": int,
    "eval_every": int,
    "patience": int,
    "lambda0": float,
    "lambda_min": float,
    "decay_rate": float,
    "update_every": int,
    "stop_train_ppl": float,
}
_PATH_KEYS = ("train_path", "dev_path", "test_path", "out_dir")
_OTHER_KEYS = ("preset", "layer_kinds", "mc_kl", "src_min_freq", "tgt_min_freq")


class ConfigError(ValueError):
    """Unknown key, bad value, or unusable combination in a run config."""


@dataclass
class RunConfig:
    preset: str = "desk"
    train_path: str = ""
    dev_path: str = ""
    test_path: str = ""
    out_dir: str = "run"
    src_min_freq: int = 1
    tgt_min_freq: int = 1
    model_overrides: dict = field(default_factory=dict)
    layer_kinds: list = field(default_factory=list)
    train: TrainConfig = field(default_factory=TrainConfig)

    def model_config(self, src_vocab_size: int, tgt_vocab_size: int) -> ModelConfig:
        overrides = dict(self.model_overrides)
        overrides.update(src_vocab_size=src_vocab_size,
                         tgt_vocab_size=tgt_vocab_size)
        if self.layer_kinds:
            overrides["layer_kinds"] = list(self.layer_kinds)
        if self.preset == "paper":
            return paper_config(**overrides)
        return desk_config(**overrides)

    def describe(self) -> str:
        """Startup echo of the resolved hyperparameters."""
        lines = [f"preset = {self.preset}"]
        probe = self.model_config(1, 1)
        for key in ("hidden_units", "enc_layers", "dec_layers", "embed_dim",
                    "dropout", "alpha", "tau"):
            lines.append(f"model.{key} = {getattr(probe, key)}")
        lines.append(f"model.layer_kinds = {','.join(probe.layer_kinds)}")
        for key in _TRAIN_KEYS:
            lines.append(f"train.{key} = {getattr(self.train, key)}")
        lines.append(f"train.mc_kl = {self.train.mc_kl}")
        return "\n".join(lines)


def parse_config_text(text: str, path: str = "<config>") -> dict[str, str]:
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"{path}:{lineno}: empty key")
        values[key] = value
    return values


def _parse_bool(value: str, key: str) -> bool:
    low = value.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"key {key!r}: expected a boolean, got {value!r}")


def load_run_config(path: str) -> RunConfig:
    with open(path, encoding="utf-8") as fh:
        values = parse_config_text(fh.read(), path)

    preset = values.pop("preset", "desk")
    if preset not in ("desk", "paper"):
        raise ConfigError(f"unknown preset {preset!r}; use desk or paper")
    cfg = RunConfig(preset=preset)
    cfg.train = paper_train_config() if preset == "paper" else TrainConfig()

    for key, value in values.items():
        try:
            if key in _PATH_KEYS:
                setattr(cfg, key, value)
            elif key in ("src_min_freq", "tgt_min_freq"):
                setattr(cfg, key, int(value))
            elif key == "layer_kinds":
                cfg.layer_kinds = [k.strip() for k in value.split(",") if k.strip()]
            elif key == "mc_kl":
                cfg.train.mc_kl = _parse_bool(value, key)
            elif key in _MODEL_KEYS:
                cfg.model_overrides[key] = _MODEL_KEYS[key](value)
            elif key in _TRAIN_KEYS:
                setattr(cfg.train, key, _TRAIN_KEYS[key](value))
            else:
                raise ConfigError(f"unknown config key {key!r}")
        except ValueError as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"key {key!r}: {exc}") from exc

    env_seed = os.environ.get(SEED_ENV_VAR)
    if env_seed is not None:
        try:
            cfg.train.seed = int(env_seed)
        except ValueError as exc:
            raise ConfigError(f"{SEED_ENV_VAR} must be an integer") from exc
    return cfg
