"""JSON run configuration; command-line flags override file values."""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .denoise import DEFAULT_K, DEFAULT_PSEUDOCOUNT, MAX_K
from .diffusion import DEFAULT_STEPS
from .errors import ConfigError


@dataclass
class ThresholdRuleConfig:
    base: float = 0.4
    per_residue: float = 0.05
    cap: float = 1.0


@dataclass
class DiffusionConfig:
    T: int = DEFAULT_STEPS
    schedule_kind: str = "cosine"
    stochastic_final: bool = False


@dataclass
class DenoiseConfig:
    k: int = DEFAULT_K
    # "lambda" in the JSON file
    pseudocount: float = DEFAULT_PSEUDOCOUNT
    blend_weight: float = 1.0


@dataclass
class Config:
    corpus_dir: str | None = None
    db_dir: str | None = None
    threshold_rule: ThresholdRuleConfig = field(default_factory=ThresholdRuleConfig)
    diffusion: DiffusionConfig = field(default_factory=DiffusionConfig)
    denoise: DenoiseConfig = field(default_factory=DenoiseConfig)
    threads: int = field(default_factory=lambda: os.cpu_count() or 1)
    seed: int = 0

    def validate(self) -> "Config":
        r = self.threshold_rule
        if not (r.base > 0 and r.per_residue >= 0 and r.cap >= r.base):
            raise ConfigError("threshold_rule needs base > 0, per_residue >= 0, cap >= base")
        if self.diffusion.T < 1:
            raise ConfigError("diffusion.T must be >= 1")
        if self.diffusion.schedule_kind not in ("cosine", "linear"):
            raise ConfigError("diffusion.schedule_kind must be 'cosine' or 'linear'")
        if not 1 <= self.denoise.k <= MAX_K:
            raise ConfigError(f"denoise.k must lie in [1, {MAX_K}]")
        if not self.denoise.pseudocount > 0:
            raise ConfigError("denoise.lambda must be positive")
        if not 0 <= self.denoise.blend_weight <= 1:
            raise ConfigError("denoise.blend_weight must lie in [0, 1]")
        if self.threads < 1:
            raise ConfigError("threads must be >= 1")
        return self

    def to_dict(self) -> dict:
        d = asdict(self)
        d["denoise"]["lambda"] = d["denoise"].pop("pseudocount")
        return d


_SECTIONS = {"threshold_rule": ThresholdRuleConfig, "diffusion": DiffusionConfig, "denoise": DenoiseConfig}


def _fill(cls, data: dict, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{where} must be an object")
    data = dict(data)
    if cls is DenoiseConfig and "lambda" in data:
        data["pseudocount"] = data.pop("lambda")
    names = {f.name: f for f in fields(cls)}
    unknown = sorted(set(data) - set(names))
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(unknown)}")
    kwargs = {}
    for key, value in data.items():
        if key in _SECTIONS:
            kwargs[key] = _fill(_SECTIONS[key], value, f"{where}.{key}")
            continue
        default = getattr(cls(), key)
        if default is None and not (value is None or isinstance(value, str)):
            raise ConfigError(f"{where}.{key} must be a string path")
        if isinstance(default, bool) and not isinstance(value, bool):
            raise ConfigError(f"{where}.{key} must be a boolean")
        if isinstance(default, int) and not isinstance(default, bool) and (isinstance(value, bool) or not isinstance(value, int)):
            raise ConfigError(f"{where}.{key} must be an integer")
        if isinstance(default, float) and (isinstance(value, bool) or not isinstance(value, (int, float))):
            raise ConfigError(f"{where}.{key} must be a number")
        kwargs[key] = float(value) if isinstance(default, float) else value
    return cls(**kwargs)


def load_config(path: str | os.PathLike | None) -> Config:
    if path is None:
        return Config().validate()
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file is not valid JSON: {exc}") from None
    return _fill(Config, data, "config").validate()
