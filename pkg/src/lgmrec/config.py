"""Training configuration, dataset presets, and per-purpose RNG streams."""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace

import numpy as np

from .errors import ConfigError

ABLATIONS = ("none", "no_mm", "no_lge", "no_cge", "no_mge", "no_ghe", "no_hcl", "suid")
HCL_POOLS = ("batch", "full")


@dataclass
class TrainConfig:
    """Every knob the trainer reads. Defaults are the Baby-corpus settings."""

    embedding_dim: int = 64
    batch_size: int = 2048
    learning_rate: float = 1e-3
    collab_layers: int = 2        # propagation depth for ID embeddings
    modal_layers: int = 2         # propagation depth for modal embeddings
    hyper_layers: int = 1         # hypergraph message-passing depth
    num_hyperedges: int = 4
    global_weight: float = 0.3    # weight of the global term in fusion
    hyper_dropout: float = 0.5    # dropout on dependency matrices
    reg_weight: float = 1e-6      # L2 coefficient in the ranking loss
    contrast_weight: float = 1e-4  # weight of the contrastive terms
    contrast_temperature: float = 0.2
    gumbel_temperature: float = 0.2
    patience: int = 20
    max_epochs: int = 1000
    seed: int = 42
    ablation: str = "none"
    hcl_pool: str = "batch"

    def validate(self) -> "TrainConfig":
        if self.embedding_dim <= 0:
            raise ConfigError("embedding_dim must be positive")
        if self.batch_size <= 0:
            raise ConfigError("batch_size must be positive")
        if self.learning_rate < 0:
            raise ConfigError("learning_rate must be >= 0")
        if self.collab_layers < 0:
            raise ConfigError("collab_layers must be >= 0")
        if self.modal_layers < 1:
            raise ConfigError("modal_layers must be >= 1")
        if self.hyper_layers < 1:
            raise ConfigError("hyper_layers must be >= 1")
        if self.num_hyperedges < 1:
            raise ConfigError("num_hyperedges must be >= 1")
        if self.global_weight < 0:
            raise ConfigError("global_weight must be >= 0")
        if not 0.0 <= self.hyper_dropout < 1.0:
            raise ConfigError("hyper_dropout must lie in [0, 1)")
        if self.reg_weight < 0:
            raise ConfigError("reg_weight must be >= 0")
        if self.contrast_weight < 0:
            raise ConfigError("contrast_weight must be >= 0")
        if self.contrast_temperature <= 0:
            raise ConfigError("contrast_temperature must be positive")
        if self.gumbel_temperature <= 0:
            raise ConfigError("gumbel_temperature must be positive")
        if self.patience < 1:
            raise ConfigError("patience must be >= 1")
        if self.max_epochs < 1:
            raise ConfigError("max_epochs must be >= 1")
        if self.ablation not in ABLATIONS:
            raise ConfigError(f"unknown ablation '{self.ablation}', expected one of {ABLATIONS}")
        if self.hcl_pool not in HCL_POOLS:
            raise ConfigError(f"unknown hcl_pool '{self.hcl_pool}', expected one of {HCL_POOLS}")
        return self

    # Which computation paths the chosen ablation keeps alive.
    @property
    def use_collab_term(self) -> bool:
        return self.ablation not in ("no_lge", "no_cge")

    @property
    def use_modal_term(self) -> bool:
        return self.ablation not in ("no_mm", "no_lge", "no_mge")

    @property
    def use_global(self) -> bool:
        return self.ablation not in ("no_mm", "no_ghe")

    @property
    def use_contrastive(self) -> bool:
        return self.use_global and self.ablation != "no_hcl"

    @property
    def use_modal_transforms(self) -> bool:
        # Transform matrices exist only when local modal embeddings are built.
        return self.use_modal_term or self.ablation == "suid"

    @property
    def share_user_ids(self) -> bool:
        return self.ablation == "suid"

    def replace(self, **kwargs) -> "TrainConfig":
        return replace(self, **kwargs)

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


# Published per-corpus settings plus a desk-scale default for generated data.
PRESETS: dict[str, dict] = {
    "baby": {},
    "sports": {"collab_layers": 4, "global_weight": 0.6, "hyper_dropout": 0.4},
    "clothing": {
        "collab_layers": 3,
        "hyper_layers": 2,
        "num_hyperedges": 64,
        "global_weight": 0.2,
        "hyper_dropout": 0.2,
    },
    "synthetic": {
        "embedding_dim": 32,
        "batch_size": 1024,
        "learning_rate": 5e-3,
        "collab_layers": 2,
        "modal_layers": 1,
        "hyper_layers": 1,
        "num_hyperedges": 4,
        "global_weight": 0.6,
        "hyper_dropout": 0.1,
        "patience": 40,
        "max_epochs": 400,
    },
}


def preset_config(name: str, **overrides) -> TrainConfig:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset '{name}', expected one of {sorted(PRESETS)}")
    merged = dict(PRESETS[name])
    merged.update(overrides)
    return TrainConfig(**merged).validate()


@dataclass
class RngStreams:
    """Independent generators per stochastic purpose, split from one seed.

    Toggling one stochastic feature (say dropout) must not perturb the draws
    of the others, so each purpose owns a stream.
    """

    init: np.random.Generator = field(repr=False)
    sampling: np.random.Generator = field(repr=False)
    dropout: np.random.Generator = field(repr=False)
    gumbel: np.random.Generator = field(repr=False)
    split: np.random.Generator = field(repr=False)

    @classmethod
    def from_seed(cls, seed: int) -> "RngStreams":
        children = np.random.SeedSequence(seed).spawn(5)
        return cls(*(np.random.default_rng(c) for c in children))
