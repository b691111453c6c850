"""Negative sampling, the epoch loop, early stopping, and diagnostics."""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field

import numpy as np

from . import ghe
from . import metrics as metrics_mod
from . import objective
from .config import RngStreams, TrainConfig
from .data import AdjacencyPair, Dataset, build_adjacency
from .errors import ConfigError, EmptyDatasetError
from .model import ID_EMBEDDINGS, ForwardState, ModelParams, forward
from .objective import TripleBatch
from .optim import AdamState, adam_step


@dataclass
class TrainContext:
    """Immutable per-dataset precomputation shared by every step."""

    graph: AdjacencyPair
    features: dict[str, np.ndarray]
    train_pairs: np.ndarray
    user_item_sets: list[set[int]]
    num_users: int
    num_items: int

    @classmethod
    def from_dataset(cls, dataset: Dataset) -> "TrainContext":
        graph = build_adjacency(dataset.train, dataset.num_users, dataset.num_items)
        sets: list[set[int]] = [set() for _ in range(dataset.num_users)]
        for u, i in dataset.train:
            sets[int(u)].add(int(i))
        return cls(
            graph=graph,
            features=dataset.modal_features,
            train_pairs=np.asarray(dataset.train, dtype=np.int64),
            user_item_sets=sets,
            num_users=dataset.num_users,
            num_items=dataset.num_items,
        )


def sample_triples(
    train_pairs: np.ndarray,
    user_item_sets: list[set[int]],
    num_items: int,
    batch_size: int,
    rng: np.random.Generator,
) -> TripleBatch:
    """Uniform positives with rejection-sampled uniform negatives.

    A drawn positive whose user has interacted with the whole catalog is
    skipped and redrawn; if no user has an available negative the dataset
    cannot be ranked and sampling fails.
    """
    if not any(len(s) < num_items for s in user_item_sets):
        raise EmptyDatasetError("every user interacts with every item; no negatives exist")
    users = np.empty(batch_size, dtype=np.int64)
    pos = np.empty(batch_size, dtype=np.int64)
    neg = np.empty(batch_size, dtype=np.int64)
    n_pairs = len(train_pairs)
    filled = 0
    while filled < batch_size:
        u, i = train_pairs[rng.integers(n_pairs)]
        seen = user_item_sets[u]
        if len(seen) >= num_items:
            continue
        while True:
            j = int(rng.integers(num_items))
            if j not in seen:
                break
        users[filled], pos[filled], neg[filled] = u, i, j
        filled += 1
    return TripleBatch(users=users, pos_items=pos, neg_items=neg)


@dataclass
class StepStats:
    total: float
    bpr: float
    hcl: float
    grad_linf: dict[str, float]


def _contrastive_pools(batch: TripleBatch, ctx: TrainContext, cfg: TrainConfig):
    if cfg.hcl_pool == "full":
        return np.arange(ctx.num_users), np.arange(ctx.num_items)
    return np.unique(batch.users), np.unique(np.concatenate([batch.pos_items, batch.neg_items]))


def build_losses(state: ForwardState, batch: TripleBatch, ctx: TrainContext, cfg: TrainConfig):
    """Assemble (total, bpr, hcl_u, hcl_i) loss nodes for one batch."""
    bpr = objective.bpr_loss(state.fused, batch, ctx.num_users, cfg.reg_weight, state.leaves)
    hcl_u = hcl_i = None
    if cfg.use_contrastive:
        user_pool, item_pool = _contrastive_pools(batch, ctx, cfg)
        hcl_u, hcl_i = ghe.hcl_loss(
            state.user_globals, state.item_globals, cfg.contrast_temperature,
            user_pool, item_pool,
        )
    total = objective.total_loss(bpr, hcl_u, hcl_i, cfg.contrast_weight)
    return total, bpr, hcl_u, hcl_i


def train_step(
    params: ModelParams,
    ctx: TrainContext,
    cfg: TrainConfig,
    rngs: RngStreams,
    adam: AdamState,
    batch: TripleBatch,
    diagnostics=None,
) -> StepStats:
    """One forward/backward/Adam update; optionally feeds a diagnostic probe."""
    state = forward(params, ctx.graph, ctx.features, cfg, training=True, rngs=rngs)
    total, bpr, hcl_u, hcl_i = build_losses(state, batch, ctx, cfg)
    total_value = total.item()
    hcl_value = (hcl_u.item() + hcl_i.item()) if hcl_u is not None else 0.0
    if not np.isfinite(total_value):
        raise FloatingPointError(
            f"non-finite loss: total={total_value}, bpr={bpr.item()}, hcl={hcl_value}"
        )
    grads_by_node = state.tape.backward(total)
    grads = {name: grads_by_node[node] for name, node in state.leaves.items()}
    if diagnostics is not None:
        diagnostics.observe(state, batch, ctx, cfg)
    adam_step(params.arrays, grads, adam, lr=cfg.learning_rate)
    return StepStats(
        total=total_value,
        bpr=bpr.item(),
        hcl=hcl_value,
        grad_linf={name: float(np.abs(g).max()) if g.size else 0.0 for name, g in grads.items()},
    )


@dataclass
class EpochStats:
    total: float
    bpr: float
    hcl: float
    grad_linf: dict[str, float]


def train_epoch(
    params: ModelParams,
    ctx: TrainContext,
    cfg: TrainConfig,
    rngs: RngStreams,
    adam: AdamState,
    diagnostics=None,
) -> EpochStats:
    """ceil(train_size / batch_size) steps; returns mean losses."""
    steps = max(1, -(-len(ctx.train_pairs) // cfg.batch_size))
    totals = np.zeros(3)
    linf: dict[str, float] = {name: 0.0 for name in params.arrays}
    for _ in range(steps):
        batch = sample_triples(
            ctx.train_pairs, ctx.user_item_sets, ctx.num_items, cfg.batch_size, rngs.sampling
        )
        stats = train_step(params, ctx, cfg, rngs, adam, batch, diagnostics=diagnostics)
        totals += (stats.total, stats.bpr, stats.hcl)
        for name, v in stats.grad_linf.items():
            linf[name] = max(linf[name], v)
    totals /= steps
    return EpochStats(total=float(totals[0]), bpr=float(totals[1]), hcl=float(totals[2]), grad_linf=linf)


class EarlyStopper:
    """Stop after ``patience`` consecutive epochs without a strictly better value."""

    def __init__(self, patience: int):
        if patience < 1:
            raise ConfigError("patience must be >= 1")
        self.patience = patience
        self.best = -np.inf
        self.bad_epochs = 0

    def update(self, value: float) -> bool:
        """Record one epoch's validation value; True if it improved the best."""
        if value > self.best:
            self.best = value
            self.bad_epochs = 0
            return True
        self.bad_epochs += 1
        return False

    @property
    def should_stop(self) -> bool:
        return self.bad_epochs >= self.patience


@dataclass
class EpochRecord:
    epoch: int
    total_loss: float
    bpr_loss: float
    hcl_loss: float
    val_recall: float
    seconds: float


@dataclass
class TrainHistory:
    records: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0
    truncated: bool = False
    cutoff: int = 20

    def fingerprint(self) -> str:
        """Canonical text of the deterministic fields (wall time excluded)."""
        lines = [
            f"{r.epoch}\t{r.total_loss!r}\t{r.bpr_loss!r}\t{r.hcl_loss!r}\t{r.val_recall!r}"
            for r in self.records
        ]
        lines.append(f"best={self.best_epoch}\ttruncated={self.truncated}")
        return "\n".join(lines)

    def write_jsonl(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for r in self.records:
                fh.write(json.dumps({
                    "epoch": r.epoch,
                    "total_loss": r.total_loss,
                    "bpr_loss": r.bpr_loss,
                    "hcl_loss": r.hcl_loss,
                    f"val_recall{self.cutoff}": r.val_recall,
                    "seconds": r.seconds,
                }) + "\n")
            fh.write(json.dumps({
                "summary": {"best_epoch": self.best_epoch, "truncated": self.truncated}
            }) + "\n")


def fit(
    params: ModelParams,
    dataset: Dataset,
    cfg: TrainConfig,
    diagnostics=None,
    progress=None,
) -> tuple[ModelParams, TrainHistory]:
    """Train with per-epoch validation and patience-based early stopping.

    Validation recall uses eval-mode stochasticity so the stopping signal is
    noise-free. Returns a snapshot of the parameters from the best epoch.
    """
    cfg.validate()
    if len(dataset.valid) == 0:
        raise EmptyDatasetError("fit requires a nonempty validation split")
    if cfg.use_contrastive and len(dataset.modal_features) != 2:
        raise ConfigError(
            "the cross-modal contrastive loss needs exactly two modalities; "
            "disable it with ablation='no_hcl'"
        )
    ctx = TrainContext.from_dataset(dataset)
    rngs = RngStreams.from_seed(cfg.seed)
    adam = AdamState(params.arrays)
    relevant = metrics_mod.by_user_sets(dataset.valid)
    mask = metrics_mod.by_user_sets(dataset.train)
    stopper = EarlyStopper(cfg.patience)
    history = TrainHistory()
    best_params = params.copy()
    for epoch in range(1, cfg.max_epochs + 1):
        started = time.perf_counter()
        stats = train_epoch(params, ctx, cfg, rngs, adam, diagnostics=diagnostics)
        if diagnostics is not None:
            diagnostics.finish_epoch(epoch)
        eval_state = forward(params, ctx.graph, ctx.features, cfg, training=False)
        result = metrics_mod.evaluate(
            eval_state.e_star, ctx.num_users, relevant, mask, cutoffs=(history.cutoff,)
        )
        val = result.get("recall", history.cutoff)
        improved = stopper.update(val)
        if improved:
            best_params = params.copy()
            history.best_epoch = epoch
        history.records.append(EpochRecord(
            epoch=epoch,
            total_loss=stats.total,
            bpr_loss=stats.bpr,
            hcl_loss=stats.hcl,
            val_recall=val,
            seconds=time.perf_counter() - started,
        ))
        if progress is not None:
            progress(history.records[-1])
        if stopper.should_stop:
            break
    else:
        history.truncated = True
    return best_params, history


def opposite_sign_ratio(a: np.ndarray, b: np.ndarray) -> float:
    """Fraction of coordinates where the two gradients strictly oppose.

    A zero in either gradient counts as non-opposite.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError("gradient shapes differ")
    return float(np.mean((a * b) < 0.0))


class ConflictDiagnostics:
    """Accumulates per-pathway BPR gradients on sampled users' ID rows.

    Requires the shared-user-id variant so both the collaborative and the
    modal pathway write to the same embedding rows. For each training step
    two extra backward passes run from ranking losses whose fused term is
    restricted to a single pathway; the per-epoch accumulated row gradients
    are compared sign-by-sign.
    """

    def __init__(self, sample_users, embedding_dim: int):
        self.sample_users = [int(u) for u in sample_users]
        self.collab_acc = {u: np.zeros(embedding_dim) for u in self.sample_users}
        self.modal_acc = {u: np.zeros(embedding_dim) for u in self.sample_users}
        self.seen: set[int] = set()
        self.rows: list[tuple[int, int, float | None]] = []

    def observe(self, state: ForwardState, batch: TripleBatch, ctx: TrainContext, cfg: TrainConfig):
        collab_only = state.collab
        modal_only = objective.fuse(
            None, state.modal, None, 0.0,
            include_collab=False, include_modal=True, include_global=False,
        )
        id_node = state.leaves[ID_EMBEDDINGS]
        batch_users = set(int(u) for u in batch.users)
        for fused_variant, acc in ((collab_only, self.collab_acc), (modal_only, self.modal_acc)):
            loss = objective.bpr_loss(fused_variant, batch, ctx.num_users, 0.0, {})
            grad = state.tape.backward(loss)[id_node]
            for u in self.sample_users:
                if u in batch_users:
                    acc[u] += grad[u]
        self.seen |= set(self.sample_users) & batch_users

    def finish_epoch(self, epoch: int):
        for u in self.sample_users:
            if u in self.seen:
                ratio = opposite_sign_ratio(self.collab_acc[u], self.modal_acc[u])
            else:
                ratio = None
            self.rows.append((epoch, u, ratio))
            self.collab_acc[u][:] = 0.0
            self.modal_acc[u][:] = 0.0
        self.seen.clear()


def gradient_conflict_diagnostic(
    dataset: Dataset,
    cfg: TrainConfig,
    sample_users,
    epochs: int,
) -> list[tuple[int, int, float | None]]:
    """Train under the shared-user-id variant, reporting per-epoch conflict ratios.

    Each row is (epoch, user, ratio) where ratio is the fraction of embedding
    dimensions whose accumulated collaborative and modal gradients point in
    strictly opposite directions, or None if the user appeared in no batch.
    """
    if cfg.ablation != "suid":
        raise ConfigError("the conflict diagnostic requires ablation='suid'")
    cfg = cfg.replace(max_epochs=epochs, patience=max(cfg.patience, epochs)).validate()
    rngs = RngStreams.from_seed(cfg.seed)
    params = ModelParams.initialize(
        dataset.num_users, dataset.num_items,
        {m: f.shape[1] for m, f in dataset.modal_features.items()},
        cfg, rngs.init,
    )
    diag = ConflictDiagnostics(sample_users, cfg.embedding_dim)
    fit(params, dataset, cfg, diagnostics=diag)
    return diag.rows


def conflict_report_lines(rows) -> list[str]:
    lines = ["epoch\tuser\topposite_ratio"]
    for epoch, user, ratio in rows:
        lines.append(f"{epoch}\t{user}\t{'NA' if ratio is None else repr(ratio)}")
    return lines
