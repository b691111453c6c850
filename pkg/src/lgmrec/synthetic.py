"""Synthetic multimodal corpora with planted attribute structure.

Every item belongs to exactly one latent attribute; its modal features are
that attribute's centroid plus Gaussian noise. Users carry a sharpened
preference distribution over attributes, and interactions are drawn by
first picking an attribute, then a uniform unseen item of that attribute.
The planted labels give acceptance tests a ground truth to recover.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .config import RngStreams
from .data import Dataset, split_dataset
from .errors import ConfigError


@dataclass
class SynthConfig:
    num_users: int = 300
    num_items: int = 200
    num_latent_attributes: int = 4
    feature_dims: dict[str, int] = field(default_factory=lambda: {"visual": 16, "textual": 12})
    interactions_per_user: float = 12.0
    feature_noise: float = 0.05
    preference_sharpness: float = 3.0
    # relative attribute population sizes; None means uniform. Uneven sizes
    # leave large attributes with per-item-sparse interactions, the regime
    # where content carries signal collaboration cannot recover.
    attribute_weights: tuple[float, ...] | None = None
    split_ratios: tuple[float, float, float] = (0.8, 0.1, 0.1)
    seed: int = 42

    def validate(self) -> "SynthConfig":
        if min(self.num_users, self.num_items, self.num_latent_attributes) < 1:
            raise ConfigError("counts must be positive")
        if not self.feature_dims or any(d < 1 for d in self.feature_dims.values()):
            raise ConfigError("feature_dims must map modalities to positive dims")
        if self.interactions_per_user < 1:
            raise ConfigError("interactions_per_user must be >= 1")
        if self.interactions_per_user > self.num_items:
            raise ConfigError("interactions_per_user cannot exceed the item catalog")
        if self.feature_noise < 0:
            raise ConfigError("feature_noise must be >= 0")
        if self.preference_sharpness <= 0:
            raise ConfigError("preference_sharpness must be positive")
        if abs(sum(self.split_ratios) - 1.0) > 1e-9 or min(self.split_ratios) < 0:
            raise ConfigError("split_ratios must be nonnegative and sum to 1")
        if self.attribute_weights is not None:
            if len(self.attribute_weights) != self.num_latent_attributes:
                raise ConfigError("attribute_weights length must equal num_latent_attributes")
            if min(self.attribute_weights) <= 0:
                raise ConfigError("attribute_weights must be positive")
        return self


def _unit_rows(rng: np.random.Generator, n: int, dim: int) -> np.ndarray:
    m = rng.standard_normal((n, dim))
    return m / np.linalg.norm(m, axis=1, keepdims=True)


def _sharpen(weights: np.ndarray, sharpness: float) -> np.ndarray:
    # p_a proportional to w_a**s, computed in log space so huge s stays finite
    logp = sharpness * np.log(np.maximum(weights, 1e-300))
    logp -= logp.max(axis=1, keepdims=True)
    p = np.exp(logp)
    return p / p.sum(axis=1, keepdims=True)


def generate_synthetic_with_labels(cfg: SynthConfig) -> tuple[Dataset, np.ndarray]:
    """Build a dataset plus the planted per-item attribute labels."""
    cfg.validate()
    streams = RngStreams.from_seed(cfg.seed)
    rng = streams.init

    if cfg.attribute_weights is None:
        item_attr = rng.integers(cfg.num_latent_attributes, size=cfg.num_items)
    else:
        weights = np.asarray(cfg.attribute_weights, dtype=np.float64)
        item_attr = rng.choice(cfg.num_latent_attributes, size=cfg.num_items, p=weights / weights.sum())
    # every attribute keeps at least one item so preferences are satisfiable
    for a in range(min(cfg.num_latent_attributes, cfg.num_items)):
        if not np.any(item_attr == a):
            item_attr[rng.integers(cfg.num_items)] = a

    modal_features = {}
    for modality, dim in cfg.feature_dims.items():
        centroids = _unit_rows(rng, cfg.num_latent_attributes, dim)
        noise = cfg.feature_noise * rng.standard_normal((cfg.num_items, dim))
        modal_features[modality] = centroids[item_attr] + noise

    prefs = _sharpen(rng.dirichlet(np.ones(cfg.num_latent_attributes), size=cfg.num_users),
                     cfg.preference_sharpness)

    items_of_attr = [np.flatnonzero(item_attr == a) for a in range(cfg.num_latent_attributes)]
    records: list[tuple[int, int]] = []
    sampler = streams.sampling
    for u in range(cfg.num_users):
        count = int(min(cfg.num_items, max(1, sampler.poisson(cfg.interactions_per_user))))
        chosen: set[int] = set()
        remaining = [len(pool) for pool in items_of_attr]
        while len(chosen) < count:
            p = prefs[u] * (np.asarray(remaining) > 0)
            total = p.sum()
            if total == 0.0:
                # user's preferred attributes exhausted; fall back to any stock
                p = (np.asarray(remaining) > 0).astype(float)
                total = p.sum()
            a = int(sampler.choice(cfg.num_latent_attributes, p=p / total))
            pool = [i for i in items_of_attr[a] if i not in chosen]
            item = int(pool[sampler.integers(len(pool))])
            chosen.add(item)
            remaining[a] -= 1
            records.append((u, item))

    train, valid, test = split_dataset(records, ratios=cfg.split_ratios, rng=streams.split)
    dataset = Dataset(
        num_users=cfg.num_users,
        num_items=cfg.num_items,
        train=train,
        valid=valid,
        test=test,
        modal_features=modal_features,
    ).validate()
    return dataset, item_attr


def generate_synthetic(cfg: SynthConfig) -> Dataset:
    return generate_synthetic_with_labels(cfg)[0]
