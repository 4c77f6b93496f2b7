"""Run configuration: one JSON file, strict keys, defaults for everything.

All randomness flows from a single root seed expanded into named
sub-seeds (data / attack / agent / eval / twin / scoring), so individual
pipeline stages are reproducible in isolation.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field, fields

from .errors import ConfigError


@dataclass
class DataSettings:
    path: str | None = None
    label_column: str = "label"
    synthetic: dict | None = None  # SyntheticSpec fields; used when path is null
    fractions: tuple[float, float, float] = (0.6, 0.2, 0.2)
    test_fraction: float = 0.25


@dataclass
class ModelSettings:
    hidden: int = 300
    learning_rate: float = 0.05
    epochs: int = 30
    batch_size: int = 64
    optimizer: str = "adam"


@dataclass
class AttackSettings:
    kind: str = "pgd"
    eps_list: tuple[float, ...] = (8.0 / 255.0,)
    pgd_alpha: float | None = None
    pgd_iters: int = 20
    random_start: bool = True
    mu: float = 0.5  # sigma-calibration target error rate
    sigma: float | None = None  # explicit override skips calibration
    calibration_tol: float = 0.02


@dataclass
class ScoringSettings:
    bins: int = 32
    n_trees: int = 100
    max_depth: int = 10
    min_leaf: int = 2
    ig_steps: int = 50
    attack_sample: int = 200  # samples attacked for the robustness score


@dataclass
class EnvSettings:
    k_window: int = 5
    elim_threshold: float = 0.05
    lambda_nat: float = 1.0
    lambda_gauss: float = 1.0
    l_per_sample: int = 10
    eval_repeats: int = 1


@dataclass
class AgentSettings:
    steps: int = 4000
    lr: float = 0.01
    batch: int = 64
    gamma: float = 1.0
    eps_final: float = 0.1
    eps_decay_steps: int = 2000
    warmup: int = 100
    target_sync: int = 1000
    buffer_cap: int = 10000


@dataclass
class SelectSettings:
    k: int = 10
    lasso_lambda: float = 0.001
    lasso_iters: int = 500


@dataclass
class HarnessSettings:
    repeats: int = 3
    k_grid: tuple[int, ...] = (1, 2, 4, 8, 16, 32)
    ig_k_grid: tuple[int, ...] = (0, 1, 2, 5, 10, 20, 40)
    ig_pairs: int = 200
    ig_per_sample: bool = True


@dataclass
class RunConfig:
    seed: int = 0
    out_dir: str = "runs/out"
    data: DataSettings = field(default_factory=DataSettings)
    model: ModelSettings = field(default_factory=ModelSettings)
    attack: AttackSettings = field(default_factory=AttackSettings)
    scoring: ScoringSettings = field(default_factory=ScoringSettings)
    env: EnvSettings = field(default_factory=EnvSettings)
    agent: AgentSettings = field(default_factory=AgentSettings)
    select: SelectSettings = field(default_factory=SelectSettings)
    harness: HarnessSettings = field(default_factory=HarnessSettings)


_SECTION_TYPES = {
    "data": DataSettings,
    "model": ModelSettings,
    "attack": AttackSettings,
    "scoring": ScoringSettings,
    "env": EnvSettings,
    "agent": AgentSettings,
    "select": SelectSettings,
    "harness": HarnessSettings,
}


def _build_section(cls, payload: dict, where: str):
    if not isinstance(payload, dict):
        raise ConfigError(f"section {where!r} must be an object")
    known = {f.name for f in fields(cls)}
    unknown = set(payload) - known
    if unknown:
        raise ConfigError(f"unknown key(s) in {where!r}: {sorted(unknown)}")
    coerced = {}
    for f in fields(cls):
        if f.name not in payload:
            continue
        value = payload[f.name]
        if isinstance(value, list):
            value = tuple(value)
        coerced[f.name] = value
    try:
        return cls(**coerced)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad value in section {where!r}: {exc}") from exc


def config_from_dict(payload: dict) -> RunConfig:
    if not isinstance(payload, dict):
        raise ConfigError("config root must be a JSON object")
    known = {f.name for f in fields(RunConfig)}
    unknown = set(payload) - known
    if unknown:
        raise ConfigError(f"unknown top-level config key(s): {sorted(unknown)}")
    kwargs = {}
    for name, value in payload.items():
        if name in _SECTION_TYPES:
            kwargs[name] = _build_section(_SECTION_TYPES[name], value, name)
        else:
            kwargs[name] = value
    try:
        return RunConfig(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad config value: {exc}") from exc


def load_config(path: str) -> RunConfig:
    try:
        with open(path) as fh:
            payload = json.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    return config_from_dict(payload)


def config_to_dict(cfg: RunConfig) -> dict:
    return dataclasses.asdict(cfg)


def config_hash(cfg: RunConfig) -> str:
    canonical = json.dumps(config_to_dict(cfg), sort_keys=True, default=list)
    return hashlib.sha256(canonical.encode()).hexdigest()[:12]


def derive_seed(root: int, label: str) -> int:
    """Stable named sub-seed from the root seed."""
    digest = hashlib.sha256(f"{root}:{label}".encode()).digest()
    return int.from_bytes(digest[:4], "big")
