"""Run configuration: TOML sections per module, sourced defaults as keys.

Every pipeline hyperparameter is a config key carrying its default (4
iterations, 800-question synthesis, search budget 10, failure digest 16,
temperatures 0.9/0.001, batch bound 64, LoRA 256/256, 2 epochs at 2e-5 with
linear decay), so the numbers stay auditable instead of hard-coded. The
max-token defaults are artifact choices. Credentials never live in the file;
``credential_ref`` names an environment variable.
"""

from __future__ import annotations

import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .hashing import json_digest
from .reward_search import DEFAULT_INITIAL_REWARD

ROLE_NAMES = ("prompt_model", "target_model", "reward_model", "optimizer_model")


class ConfigError(ValueError):
    pass


@dataclass
class RoleConfig:
    base_url: str
    model_name: str
    credential_ref: Optional[str] = None
    max_in_flight: int = 64


@dataclass
class TrainerConfig:
    backend: str = "mock"
    command: list[str] = field(default_factory=list)
    service_url: Optional[str] = None
    mock_serve_url: Optional[str] = None  # defaults to the prompt model endpoint
    base_model_id: Optional[str] = None   # defaults to the prompt model name
    lora_rank: int = 256
    lora_alpha: int = 256
    epochs: int = 2
    learning_rate: float = 2e-5
    optimizer: str = "adam"
    schedule: str = "linear-decay"
    batch_size: int = 8
    warmup_steps: int = 0
    max_seq_len: int = 2048


@dataclass
class RunConfig:
    run_dir: str
    dataset_kind: str
    train_path: str
    roles: dict[str, RoleConfig]
    val_path: Optional[str] = None
    test_path: Optional[str] = None
    train_fraction: float = 0.9
    iterations: int = 4
    synthesis_size: int = 800
    failure_digest_size: int = 16
    seed: int = 0
    search_budget: int = 10
    deterministic_eval: bool = False
    skip_reward_search: bool = False
    sft_only: bool = False
    initial_reward: str = DEFAULT_INITIAL_REWARD
    temp_prompt: float = 0.9
    temp_answer: float = 0.001
    temp_reward: float = 0.001
    temp_optimizer: float = 0.001
    max_tokens_prompt: int = 256
    max_tokens_answer: int = 1024
    max_tokens_reward: int = 1024
    max_tokens_optimizer: int = 512
    skip_threshold: float = 0.05
    max_workers: int = 16
    retries: int = 4
    enable_cache: bool = False
    rebalance_max_positive: Optional[float] = None
    trainer: TrainerConfig = field(default_factory=TrainerConfig)

    def __post_init__(self):
        if self.iterations < 1:
            raise ConfigError("iterations must be >= 1")
        if self.synthesis_size < 1:
            raise ConfigError("synthesis_size must be >= 1")
        if self.search_budget < 1:
            raise ConfigError("search_budget must be >= 1")
        if self.failure_digest_size < 1:
            raise ConfigError("failure_digest_size must be >= 1")
        if self.dataset_kind not in ("gsm8k", "gsmhard", "math"):
            raise ConfigError(f"unknown dataset kind {self.dataset_kind!r}")
        missing = [name for name in ROLE_NAMES if name not in self.roles]
        if missing:
            raise ConfigError(f"missing role bindings: {missing}")
        if not self.initial_reward:
            raise ConfigError("initial_reward must be nonempty")

    def as_dict(self) -> dict:
        return asdict(self)

    def digest(self) -> str:
        return json_digest(self.as_dict())

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        data = dict(data)
        data["roles"] = {name: RoleConfig(**rc) for name, rc in data["roles"].items()}
        data["trainer"] = TrainerConfig(**data.get("trainer", {}))
        return cls(**data)


def load_config(path) -> RunConfig:
    """Parse a TOML config file into a RunConfig."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    with path.open("rb") as fh:
        try:
            doc = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc

    run = doc.get("run", {})
    dataset = doc.get("dataset", {})
    temperatures = doc.get("temperatures", {})
    limits = doc.get("limits", {})
    roles_doc = doc.get("roles", {})
    trainer_doc = doc.get("trainer", {})

    for key in ("kind", "train_path"):
        if key not in dataset:
            raise ConfigError(f"[dataset] section must set {key!r}")
    roles = {}
    for name, rc in roles_doc.items():
        if name not in ROLE_NAMES:
            raise ConfigError(f"unknown role {name!r}")
        try:
            roles[name] = RoleConfig(**rc)
        except TypeError as exc:
            raise ConfigError(f"[roles.{name}]: {exc}") from exc

    try:
        trainer = TrainerConfig(**trainer_doc)
    except TypeError as exc:
        raise ConfigError(f"[trainer]: {exc}") from exc

    known_run = {
        "run_dir", "iterations", "synthesis_size", "failure_digest_size", "seed",
        "search_budget", "deterministic_eval", "skip_reward_search", "sft_only",
        "initial_reward", "skip_threshold", "max_workers", "retries", "enable_cache",
        "rebalance_max_positive",
    }
    unknown = set(run) - known_run
    if unknown:
        raise ConfigError(f"unknown [run] keys: {sorted(unknown)}")

    return RunConfig(
        run_dir=run.get("run_dir", "run"),
        dataset_kind=dataset["kind"],
        train_path=dataset["train_path"],
        val_path=dataset.get("val_path"),
        test_path=dataset.get("test_path"),
        train_fraction=dataset.get("train_fraction", 0.9),
        roles=roles,
        trainer=trainer,
        temp_prompt=temperatures.get("prompt_generation", 0.9),
        temp_answer=temperatures.get("answering", 0.001),
        temp_reward=temperatures.get("reward", 0.001),
        temp_optimizer=temperatures.get("optimizer", 0.001),
        max_tokens_prompt=limits.get("max_tokens_prompt", 256),
        max_tokens_answer=limits.get("max_tokens_answer", 1024),
        max_tokens_reward=limits.get("max_tokens_reward", 1024),
        max_tokens_optimizer=limits.get("max_tokens_optimizer", 512),
        **{k: run[k] for k in known_run if k in run and k != "run_dir"},
    )
