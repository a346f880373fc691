"""Flat key = value run configuration with typed validation."""
from __future__ import annotations

import dataclasses
import hashlib
import os
from dataclasses import dataclass, fields

from .errors import ConfigError
from .extractor import ExtractorConfig
from .reasoner import ReasonerConfig

DEFAULT_SEEDS = (55, 83, 5583)


@dataclass
class Config:
    # reasoner network
    entity_dim: int = 50
    relation_dim: int = 50
    hidden_dim: int = 50
    mlp_dim: int = 50
    max_actions: int = 200
    # extractor network
    word_dim: int = 50
    pos_dim: int = 5
    pos_window: int = 30
    kernel: int = 3
    n_filters: int = 230
    ext_relation_dim: int = 50
    max_sentence_len: int = 120
    inverse_extracted: bool = True
    # joint training
    T: int = 3
    lr: float = 0.001
    batch_size: int = 64
    rollouts_per_query: int = 20
    b_r: int = 1
    b_e: int = 1
    e_a: int = 200
    e_m: int = 400
    gamma_reasoner: float = 1.0
    gamma_extractor: float = 0.0
    dropout_rate: float = 0.1
    k_suggestions: int = 5
    boost: float = 2.0
    reasoner_capacity: int = 10000
    extractor_capacity: int = 10000
    use_replay: bool = True
    freeze_extractor: bool = False
    use_baseline: bool = False
    pretrain_lr: float = 0.001
    pretrain_reasoner_epochs: int = 50
    pretrain_extractor_epochs: int = 20
    # evaluation
    beam_width: int = 50
    eval_every: int = 1
    hits_inclusive: bool = False
    eval_relations: str = ""
    two_step_thresholds: str = "0,0.5,0.9"
    seed: int = 55
    seeds: str = "55,83,5583"

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.e_a > self.e_m:
            raise ConfigError(f"e_a ({self.e_a}) must not exceed e_m ({self.e_m})")
        if self.lr <= 0 or self.pretrain_lr <= 0:
            raise ConfigError("learning rates must be positive")
        if self.T < 1:
            raise ConfigError("T must be at least 1")
        for name in ("gamma_reasoner", "gamma_extractor", "dropout_rate"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1], got {v}")
        for name in ("batch_size", "rollouts_per_query", "k_suggestions", "beam_width", "max_actions",
                     "reasoner_capacity", "extractor_capacity", "eval_every", "kernel", "n_filters"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be at least 1")
        for name in ("b_r", "b_e", "e_a", "e_m", "pretrain_reasoner_epochs", "pretrain_extractor_epochs"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative")
        self.seed_list()
        self.threshold_list()

    def seed_list(self) -> list[int]:
        try:
            return [int(s) for s in self.seeds.split(",") if s.strip()]
        except ValueError:
            raise ConfigError(f"bad seed list {self.seeds!r}") from None

    def threshold_list(self) -> list[float]:
        try:
            vals = [float(s) for s in self.two_step_thresholds.split(",") if s.strip()]
        except ValueError:
            raise ConfigError(f"bad threshold list {self.two_step_thresholds!r}") from None
        if any(not 0.0 <= v <= 1.0 for v in vals):
            raise ConfigError("two-step thresholds must lie in [0, 1]")
        return vals

    def eval_relation_names(self) -> list[str]:
        return [s.strip() for s in self.eval_relations.split(",") if s.strip()]

    def reasoner_config(self) -> ReasonerConfig:
        return ReasonerConfig(self.entity_dim, self.relation_dim, self.hidden_dim, self.mlp_dim,
                              self.max_actions)

    def extractor_config(self) -> ExtractorConfig:
        return ExtractorConfig(self.word_dim, self.pos_dim, self.pos_window, self.kernel,
                               self.n_filters, self.ext_relation_dim)

    def replace(self, **changes) -> "Config":
        return dataclasses.replace(self, **changes)

    def dump(self) -> str:
        return "".join(f"{f.name} = {_format(getattr(self, f.name))}\n" for f in fields(self))

    def model_hash(self, agent: str) -> str:
        """Hash of the architecture fields that fix an agent's tensor shapes."""
        keys = {
            "reasoner": ("entity_dim", "relation_dim", "hidden_dim", "mlp_dim"),
            "extractor": ("word_dim", "pos_dim", "pos_window", "kernel", "n_filters",
                          "ext_relation_dim", "max_sentence_len"),
        }[agent]
        text = agent + ";" + ";".join(f"{k}={getattr(self, k)}" for k in keys)
        return hashlib.sha256(text.encode()).hexdigest()

    def full_hash(self) -> str:
        return hashlib.sha256(self.dump().encode()).hexdigest()


def _format(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    return str(v)


def _coerce(name: str, typ, raw: str):
    typ = typ if isinstance(typ, type) else {"int": int, "float": float, "bool": bool, "str": str}[typ]
    raw = raw.strip()
    if typ is bool:
        low = raw.lower()
        if low in ("true", "1", "yes", "on"):
            return True
        if low in ("false", "0", "no", "off"):
            return False
        raise ConfigError(f"{name}: expected a boolean, got {raw!r}")
    try:
        return typ(raw)
    except ValueError:
        raise ConfigError(f"{name}: expected {typ.__name__}, got {raw!r}") from None


def parse_config(text: str, base: Config | None = None) -> Config:
    known = {f.name: f.type for f in fields(Config)}
    values = dataclasses.asdict(base) if base is not None else {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"config line {lineno}: expected key = value")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in known:
            raise ConfigError(f"config line {lineno}: unknown key {key!r}")
        values[key] = _coerce(key, known[key], raw)
    return Config(**values)


def load_config(path: str | os.PathLike | None, **overrides) -> Config:
    cfg = Config()
    if path is not None:
        if not os.path.exists(path):
            raise ConfigError(f"config file not found: {path}")
        with open(path, encoding="utf-8") as fh:
            cfg = parse_config(fh.read())
    return cfg.replace(**overrides) if overrides else cfg
