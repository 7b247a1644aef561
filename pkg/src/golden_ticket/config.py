"""Run configuration: one JSON file drives every pipeline stage.

Sub-seeds come from the global seed by splitmix mixing::

    role_seed(g, role)         = mix(g, tag(role))
    env_seed(g, role, i)       = mix(g, tag(role), i)  & (2**63 - 1)
    tag(role)                  = little-endian u64 of sha256(role)[:8]
    mix(a, b, ...)             = fold of h <- splitmix64(h ^ x), h0 = 0

Roles: ``data``, ``train``, ``ticket``, ``base-noise``, ``search-env``,
``held-out-env``, ``cross-search-env/<k>``, ``cross-eval-env/<k>``.
An explicit seed in a section overrides its derived value.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .envs import STYLES, DataConfig, EnvSpec
from .flow import TrainConfig
from .nn import DEFAULT_HIDDEN
from .policy import PolicyConfig, mix_seeds

SCHEMA_VERSION = 1
SEED_MASK = (1 << 63) - 1


class ConfigError(ValueError):
    pass


def role_tag(role: str) -> int:
    return int.from_bytes(hashlib.sha256(role.encode()).digest()[:8], "little")


def role_seed(global_seed: int, role: str) -> int:
    return mix_seeds(global_seed, role_tag(role)) & SEED_MASK


def env_seeds(global_seed: int, role: str, n: int) -> list[int]:
    tag = role_tag(role)
    return [mix_seeds(global_seed, tag, i) & SEED_MASK for i in range(n)]


@dataclass
class DataSection:
    n_demos: int = 1000
    style_weights: dict = field(default_factory=lambda: {"direct-fast": 1.0})
    stride: int = 8
    horizon: int | None = None  # demo collection horizon; None = task horizon
    seed: int | None = None


@dataclass
class TrainSection:
    epochs: int = 100
    batch_size: int = 20
    lr: float = 1e-3
    lr_schedule: str = "constant"
    val_fraction: float = 0.1
    hidden: list = field(default_factory=lambda: list(DEFAULT_HIDDEN))
    seed: int | None = None


@dataclass
class PolicySection:
    num_steps: int = 8
    exec_horizon: int = 8


@dataclass
class SearchSection:
    n_tickets: int = 100
    n_search_envs: int = 25
    ticket_seed: int | None = None


@dataclass
class HeldOutSection:
    n_envs: int = 200
    base_episodes: int = 200


@dataclass
class CrossTaskSection:
    n_tickets: int = 50
    n_search_envs: int = 25
    n_eval_envs: int = 50


@dataclass
class BudgetSection:
    budget: int = 2500
    splits: list = field(default_factory=lambda: [25, 50, 100, 250])


@dataclass
class RunConfig:
    global_seed: int = 0
    task: dict = field(default_factory=dict)
    data: DataSection = field(default_factory=DataSection)
    train: TrainSection = field(default_factory=TrainSection)
    policy: PolicySection = field(default_factory=PolicySection)
    search: SearchSection = field(default_factory=SearchSection)
    held_out: HeldOutSection = field(default_factory=HeldOutSection)
    cross_task: CrossTaskSection = field(default_factory=CrossTaskSection)
    budget: BudgetSection = field(default_factory=BudgetSection)
    output_dir: str = "runs/default"
    schema_version: int = SCHEMA_VERSION

    def __post_init__(self):
        self.validate()

    # ------------------------------------------------------------- building

    def env_spec(self) -> EnvSpec:
        kw = dict(self.task)
        for key in ("x_bounds", "y_bounds"):
            if key in kw:
                kw[key] = tuple(kw[key])
        if "goals" in kw:
            kw["goals"] = tuple(tuple(g) for g in kw["goals"])
        return EnvSpec(**kw)

    def data_spec(self) -> EnvSpec:
        from dataclasses import replace

        spec = self.env_spec()
        if self.data.horizon is not None:
            spec = replace(spec, horizon=self.data.horizon)
        return replace(spec, fixed_task=None)

    def data_config(self) -> DataConfig:
        seed = self.data.seed if self.data.seed is not None else role_seed(self.global_seed, "data")
        return DataConfig(self.data.n_demos, seed, dict(self.data.style_weights), self.data.stride)

    def train_config(self) -> TrainConfig:
        t = self.train
        seed = t.seed if t.seed is not None else role_seed(self.global_seed, "train")
        return TrainConfig(
            t.epochs, t.batch_size, t.lr, seed, t.val_fraction, tuple(t.hidden), self.policy.num_steps, t.lr_schedule
        )

    def policy_config(self, steps: int | None = None) -> PolicyConfig:
        return PolicyConfig(steps or self.policy.num_steps, self.policy.exec_horizon)

    @property
    def ticket_seed(self) -> int:
        s = self.search.ticket_seed
        return s if s is not None else role_seed(self.global_seed, "ticket")

    @property
    def base_noise_seed(self) -> int:
        return role_seed(self.global_seed, "base-noise")

    def search_env_seeds(self) -> list[int]:
        return env_seeds(self.global_seed, "search-env", self.search.n_search_envs)

    def held_out_seeds(self) -> list[int]:
        return env_seeds(self.global_seed, "held-out-env", self.held_out.n_envs)

    def budget_seed_pool(self) -> list[int]:
        n = max(self.budget.budget // s for s in self.budget.splits)
        return env_seeds(self.global_seed, "search-env", n)

    def cross_search_seeds(self, task: int) -> list[int]:
        return env_seeds(self.global_seed, f"cross-search-env/{task}", self.cross_task.n_search_envs)

    def cross_eval_seeds(self, task: int) -> list[int]:
        return env_seeds(self.global_seed, f"cross-eval-env/{task}", self.cross_task.n_eval_envs)

    # ----------------------------------------------------------- validation

    def validate(self) -> None:
        if self.schema_version != SCHEMA_VERSION:
            raise ConfigError(f"unsupported schema_version {self.schema_version} (expected {SCHEMA_VERSION})")
        try:
            spec = self.env_spec()
            self.data_spec()
            self.data_config()
            self.train_config()
            self.policy_config()
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc
        for name in self.data.style_weights:
            if name not in STYLES:
                raise ConfigError(f"unknown style {name!r}")
        s, h = self.search, self.held_out
        if s.n_tickets < 1 or s.n_search_envs < 1:
            raise ConfigError("search needs n_tickets >= 1 and n_search_envs >= 1")
        if h.n_envs < 1 or not 1 <= h.base_episodes <= h.n_envs:
            raise ConfigError("held_out needs n_envs >= 1 and 1 <= base_episodes <= n_envs")
        c = self.cross_task
        if min(c.n_tickets, c.n_search_envs, c.n_eval_envs) < 1:
            raise ConfigError("cross_task counts must be >= 1")
        b = self.budget
        if b.budget < 1 or not b.splits or any(n < 1 or b.budget // n < 1 for n in b.splits):
            raise ConfigError("every budget split n needs 1 <= n <= budget")
        if spec.task != "multi-goal" and spec.fixed_task is not None:
            raise ConfigError("fixed_task only applies to multi-goal")

    # ------------------------------------------------------- serialization

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        data = dict(data)
        sections = {
            "data": DataSection,
            "train": TrainSection,
            "policy": PolicySection,
            "search": SearchSection,
            "held_out": HeldOutSection,
            "cross_task": CrossTaskSection,
            "budget": BudgetSection,
        }
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            for key, klass in sections.items():
                if key in data:
                    sub = data[key]
                    allowed = {f.name for f in fields(klass)}
                    bad = set(sub) - allowed
                    if bad:
                        raise ConfigError(f"unknown keys in [{key}]: {sorted(bad)}")
                    data[key] = klass(**sub)
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def from_json(cls, text: str) -> "RunConfig":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        return cls.from_dict(data)

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.from_json(text)
