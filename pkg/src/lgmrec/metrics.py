"""Full-ranking top-n evaluation, sparsity breakdowns, dependency export."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .config import TrainConfig
from .data import AdjacencyPair
from .errors import ConfigError, RankingCutoffError
from .model import ModelParams, forward

THREADS_ENV = "LGMREC_THREADS"
_CHUNK = 256  # users per scoring block; fixed so thread count cannot change results


def evaluator_threads() -> int:
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1


def rank_items(
    e_star: np.ndarray, num_users: int, user: int, mask, n: int
) -> np.ndarray:
    """Top-n item ids for one user, training items excluded.

    Ties break toward the smaller item id so rankings are reproducible.
    """
    num_items = e_star.shape[0] - num_users
    if not 0 <= user < num_users:
        raise IndexError(f"user {user} out of range")
    mask = np.asarray(sorted(mask), dtype=np.int64) if len(mask) else np.empty(0, np.int64)
    if n > num_items - len(mask):
        raise RankingCutoffError(
            f"n={n} exceeds {num_items - len(mask)} rankable candidates"
        )
    scores = e_star[num_users:] @ e_star[user]
    if len(mask):
        scores = scores.copy()
        scores[mask] = -np.inf
    order = np.lexsort((np.arange(num_items), -scores))
    return order[:n]


def _top_order(scores: np.ndarray, n: int) -> np.ndarray:
    # argsort by descending score, ascending id on ties
    return np.lexsort((np.arange(scores.shape[0]), -scores))[:n]


def recall_at_n(topn, relevant) -> float:
    """Fraction of the relevant set recovered in the top-n list."""
    relevant = set(relevant)
    if not relevant:
        raise ValueError("relevant set must be nonempty")
    hits = sum(1 for item in topn if item in relevant)
    return hits / len(relevant)


def ndcg_at_n(topn, relevant) -> float:
    """Binary-relevance NDCG with 1/log2(position+1) discounts."""
    relevant = set(relevant)
    if not relevant:
        raise ValueError("relevant set must be nonempty")
    dcg = 0.0
    for pos, item in enumerate(topn, start=1):
        if item in relevant:
            dcg += 1.0 / np.log2(pos + 1)
    ideal_len = min(len(topn), len(relevant))
    idcg = sum(1.0 / np.log2(p + 1) for p in range(1, ideal_len + 1))
    return dcg / idcg if idcg > 0 else 0.0


@dataclass
class RankingMetrics:
    values: dict[tuple[str, int], float]
    num_evaluated_users: int

    def get(self, metric: str, n: int) -> float:
        return self.values[(metric, n)]

    def as_lines(self) -> list[str]:
        return [f"{metric}@{n}\t{value!r}" for (metric, n), value in sorted(self.values.items())]


def evaluate(
    e_star: np.ndarray,
    num_users: int,
    relevant_by_user: dict[int, set],
    mask_by_user: dict[int, set],
    cutoffs=(10, 20),
    threads: int | None = None,
) -> RankingMetrics:
    """Average per-user recall/NDCG over users with at least one relevant item.

    Work is chunked by user id; chunks may be scored in parallel but are
    reduced in a fixed ascending order, so the thread count never changes
    the result.
    """
    cutoffs = tuple(sorted(cutoffs))
    users = sorted(u for u, rel in relevant_by_user.items() if rel)
    if not users:
        raise ValueError("no evaluable users in the split")
    if threads is None:
        threads = evaluator_threads()
    num_items = e_star.shape[0] - num_users
    user_emb = e_star[:num_users]
    item_emb = e_star[num_users:]

    chunks = [users[i : i + _CHUNK] for i in range(0, len(users), _CHUNK)]

    def score_chunk(chunk):
        sums = {(m, n): 0.0 for m in ("recall", "ndcg") for n in cutoffs}
        block = user_emb[chunk] @ item_emb.T
        for row, u in enumerate(chunk):
            scores = block[row]
            mask = mask_by_user.get(u)
            if mask:
                scores = scores.copy()
                scores[np.fromiter(mask, dtype=np.int64, count=len(mask))] = -np.inf
            # a user's top-n never contains masked items: with fewer than n
            # candidates the list is simply shorter
            available = num_items - (len(mask) if mask else 0)
            top = _top_order(scores, min(cutoffs[-1], available))
            rel = relevant_by_user[u]
            for n in cutoffs:
                sums[("recall", n)] += recall_at_n(top[: min(n, available)], rel)
                sums[("ndcg", n)] += ndcg_at_n(top[: min(n, available)], rel)
        return sums

    if threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            chunk_sums = list(pool.map(score_chunk, chunks))
    else:
        chunk_sums = [score_chunk(c) for c in chunks]

    totals = {key: 0.0 for key in chunk_sums[0]}
    for sums in chunk_sums:  # fixed ascending-chunk reduction order
        for key, v in sums.items():
            totals[key] += v
    values = {key: float(v) / len(users) for key, v in totals.items()}
    return RankingMetrics(values=values, num_evaluated_users=len(users))


def by_user_sets(pairs: np.ndarray) -> dict[int, set]:
    out: dict[int, set] = {}
    for u, i in np.asarray(pairs):
        out.setdefault(int(u), set()).add(int(i))
    return out


@dataclass
class GroupReport:
    label: str
    num_users: int
    metrics: RankingMetrics | None


def sparsity_group_report(
    e_star: np.ndarray,
    num_users: int,
    relevant_by_user: dict[int, set],
    mask_by_user: dict[int, set],
    train_counts: dict[int, int],
    boundaries=(5, 10, 20, 50),
    cutoffs=(10, 20),
) -> list[GroupReport]:
    """Evaluate per bucket of training-interaction count.

    Buckets are (0..b1], (b1..b2], ..., (b_last..inf). Empty buckets are
    reported with ``metrics=None``.
    """
    boundaries = list(boundaries)
    if boundaries != sorted(boundaries) or len(set(boundaries)) != len(boundaries):
        raise ConfigError("group boundaries must be strictly increasing")
    edges = [0] + boundaries + [None]
    reports = []
    for lo, hi in zip(edges[:-1], edges[1:]):
        label = f"{lo}-{hi}" if hi is not None else f"{lo + 1}+"
        members = {
            u: rel
            for u, rel in relevant_by_user.items()
            if rel and train_counts.get(u, 0) > lo and (hi is None or train_counts.get(u, 0) <= hi)
        }
        if not members:
            reports.append(GroupReport(label=label, num_users=0, metrics=None))
            continue
        metrics = evaluate(e_star, num_users, members, mask_by_user, cutoffs=cutoffs)
        reports.append(GroupReport(label=label, num_users=len(members), metrics=metrics))
    return reports


def group_report_lines(reports: list[GroupReport], cutoffs=(10, 20)) -> list[str]:
    header = ["group", "users"] + [f"{m}@{n}" for m in ("recall", "ndcg") for n in sorted(cutoffs)]
    lines = ["\t".join(header)]
    for r in reports:
        if r.metrics is None:
            cells = [r.label, "0"] + ["missing"] * (len(header) - 2)
        else:
            cells = [r.label, str(r.num_users)] + [
                repr(r.metrics.get(m, n)) for m in ("recall", "ndcg") for n in sorted(cutoffs)
            ]
        lines.append("\t".join(cells))
    return lines


@dataclass
class UserDependencyExport:
    user: int
    modality: str
    hyperedge_scores: np.ndarray          # the user's dependency row
    items: list[tuple[int, int, float]]   # (item, argmax hyperedge, score)


def export_hyperedge_dependencies(
    params: ModelParams,
    graph: AdjacencyPair,
    features: dict[str, np.ndarray],
    cfg: TrainConfig,
    users,
    train_items_by_user: dict[int, set],
) -> list[UserDependencyExport]:
    """Eval-mode user/item hyperedge dependency rows for a case study."""
    if not cfg.use_global:
        raise ConfigError(f"ablation '{cfg.ablation}' trains no hyperedge dependencies")
    state = forward(params, graph, features, cfg, training=False)
    exports = []
    for user in users:
        if not 0 <= user < params.num_users:
            raise IndexError(f"user {user} out of range")
        for modality in features:
            item_rows = state.item_deps[modality].value
            user_row = state.user_deps[modality].value[user]
            items = []
            for item in sorted(train_items_by_user.get(user, ())):
                row = item_rows[item]
                edge = int(np.argmax(row))
                items.append((item, edge, float(row[edge])))
            exports.append(
                UserDependencyExport(
                    user=user,
                    modality=modality,
                    hyperedge_scores=user_row.copy(),
                    items=items,
                )
            )
    return exports


def item_argmax_hyperedges(
    params: ModelParams,
    graph: AdjacencyPair,
    features: dict[str, np.ndarray],
    cfg: TrainConfig,
) -> dict[str, np.ndarray]:
    """Eval-mode argmax hyperedge per item, per modality."""
    if not cfg.use_global:
        raise ConfigError(f"ablation '{cfg.ablation}' trains no hyperedge dependencies")
    state = forward(params, graph, features, cfg, training=False)
    return {m: np.argmax(state.item_deps[m].value, axis=1) for m in features}


def pair_consistency(assignments: np.ndarray, labels: np.ndarray) -> float:
    """Fraction of same-label item pairs that share an argmax hyperedge."""
    assignments = np.asarray(assignments)
    labels = np.asarray(labels)
    agree = 0
    total = 0
    for label in np.unique(labels):
        members = np.flatnonzero(labels == label)
        if len(members) < 2:
            continue
        sub = assignments[members]
        for a in range(len(sub)):
            for b in range(a + 1, len(sub)):
                total += 1
                if sub[a] == sub[b]:
                    agree += 1
    return agree / total if total else 1.0


def export_lines(exports: list[UserDependencyExport]) -> list[str]:
    lines = []
    for e in exports:
        scores = "\t".join(repr(float(v)) for v in e.hyperedge_scores)
        lines.append(f"user\t{e.user}\tmodality\t{e.modality}\t{scores}")
        for item, edge, score in e.items:
            lines.append(f"item\t{item}\targmax\t{edge}\tscore\t{score!r}")
    return lines
