"""Scikit-learn style estimator wrapping the training loop.

``LGMRec`` follows the fit/predict protocol (plus ``get_params`` /
``set_params`` via :class:`sklearn.base.BaseEstimator`) so it composes with
ecosystem tooling such as ``clone`` and parameter search. ``fit`` consumes a
:class:`~lgmrec.data.Dataset`; predictions are inner products of the fused
eval-mode embeddings.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator

from . import metrics as metrics_mod
from .config import RngStreams, TrainConfig
from .data import Dataset
from .errors import ConfigError
from .model import ModelParams, forward
from .trainer import TrainContext, fit


class LGMRec(BaseEstimator):
    """Joint local/global graph recommender for implicit feedback.

    Parameters mirror :class:`~lgmrec.config.TrainConfig`; see there for
    meanings and the published per-corpus defaults.
    """

    def __init__(
        self,
        embedding_dim=64,
        batch_size=2048,
        learning_rate=1e-3,
        collab_layers=2,
        modal_layers=2,
        hyper_layers=1,
        num_hyperedges=4,
        global_weight=0.3,
        hyper_dropout=0.5,
        reg_weight=1e-6,
        contrast_weight=1e-4,
        contrast_temperature=0.2,
        gumbel_temperature=0.2,
        patience=20,
        max_epochs=1000,
        seed=42,
        ablation="none",
        hcl_pool="batch",
    ):
        self.embedding_dim = embedding_dim
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.collab_layers = collab_layers
        self.modal_layers = modal_layers
        self.hyper_layers = hyper_layers
        self.num_hyperedges = num_hyperedges
        self.global_weight = global_weight
        self.hyper_dropout = hyper_dropout
        self.reg_weight = reg_weight
        self.contrast_weight = contrast_weight
        self.contrast_temperature = contrast_temperature
        self.gumbel_temperature = gumbel_temperature
        self.patience = patience
        self.max_epochs = max_epochs
        self.seed = seed
        self.ablation = ablation
        self.hcl_pool = hcl_pool

    def to_config(self) -> TrainConfig:
        return TrainConfig(**self.get_params()).validate()

    def fit(self, dataset: Dataset, y=None):
        """Train on the dataset's train split, early-stopping on validation."""
        dataset.validate()
        cfg = self.to_config()
        rngs = RngStreams.from_seed(cfg.seed)
        params = ModelParams.initialize(
            dataset.num_users,
            dataset.num_items,
            {m: f.shape[1] for m, f in dataset.modal_features.items()},
            cfg,
            rngs.init,
        )
        best_params, history = fit(params, dataset, cfg)
        self.config_ = cfg
        self.params_ = best_params
        self.history_ = history
        self.dataset_ = dataset
        ctx = TrainContext.from_dataset(dataset)
        self.e_star_ = forward(best_params, ctx.graph, ctx.features, cfg, training=False).e_star
        self.train_sets_ = {u: set(s) for u, s in enumerate(ctx.user_item_sets)}
        return self

    def _check_fitted(self):
        if not hasattr(self, "e_star_"):
            raise ConfigError("estimator is not fitted; call fit first")

    def predict(self, pairs) -> np.ndarray:
        """Preference scores for an array of (user, item) pairs."""
        self._check_fitted()
        pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
        users = self.e_star_[pairs[:, 0]]
        items = self.e_star_[self.params_.num_users + pairs[:, 1]]
        return np.sum(users * items, axis=1)

    def recommend(self, user: int, n: int = 20, exclude_train: bool = True) -> np.ndarray:
        """Top-n item ids for one user."""
        self._check_fitted()
        mask = self.train_sets_.get(int(user), set()) if exclude_train else set()
        return metrics_mod.rank_items(self.e_star_, self.params_.num_users, int(user), mask, n)

    def score_split(self, split: str = "test", cutoffs=(10, 20)) -> metrics_mod.RankingMetrics:
        """Ranking metrics on the named split of the fitted dataset."""
        self._check_fitted()
        pairs = getattr(self.dataset_, split)
        relevant = metrics_mod.by_user_sets(pairs)
        mask = metrics_mod.by_user_sets(self.dataset_.train)
        return metrics_mod.evaluate(self.e_star_, self.params_.num_users, relevant, mask, cutoffs)
