"""Global hypergraph embeddings.

Hyperedges are learnable vectors living in each modality's raw feature
space. Item-to-hyperedge affinities come from inner products with the raw
features; user-to-hyperedge affinities are accumulated over the user's
interactions. Rows are sharpened into near-one-hot distributions with a
Gumbel-softmax, and two-step message passing (node -> hyperedge -> node)
spreads item collaborative embeddings globally. A cross-modal InfoNCE term
keeps the per-modality global embeddings consistent.
"""

from __future__ import annotations

import numpy as np

from . import autograd as ag
from .autograd import Node
from .errors import ConfigError, ContrastivePoolError
from .sparse import SparseMatrixCSR


def build_dependencies(
    raw_item_features: Node, hyperedge_vectors: Node, a_user_item: SparseMatrixCSR
) -> tuple[Node, Node]:
    """Unsharpened item-hyperedge and user-hyperedge affinity matrices.

    The user matrix is the interaction-weighted sum of item affinities, so
    gradients reach the hyperedge vectors through both outputs.
    """
    item_dep = ag.matmul(raw_item_features, hyperedge_vectors, transpose_b=True)
    user_dep = ag.spmm(a_user_item, item_dep)
    return item_dep, user_dep


def gumbel_sharpen(dep: Node, temperature: float, rng: np.random.Generator, training: bool) -> Node:
    """Sharpen affinity rows into distributions.

    Training draws fresh logistic noise (log d - log(1-d), d ~ U(0,1)) per
    call; eval fixes the noise at zero so repeated passes agree bitwise.
    """
    if temperature <= 0:
        raise ConfigError(f"gumbel temperature must be positive, got {temperature}")
    if training:
        delta = np.clip(rng.random(dep.value.shape), 1e-12, 1.0 - 1e-12)
        noise = dep.tape.constant(np.log(delta) - np.log1p(-delta))
        dep = ag.add(dep, noise)
    return ag.softmax_rows(dep, temperature)


def hypergraph_propagate(
    item_dep: Node,
    user_dep: Node,
    item_init: Node,
    layers: int,
    dropout_ratio: float,
    rng: np.random.Generator,
    training: bool,
) -> tuple[Node, Node]:
    """Two-step global message passing; returns the deepest (user, item) pair.

    Per layer, items aggregate into hyperedges through the transposed item
    dependencies and redistribute through the item (resp. user) dependencies.
    Every dependency application gets an independent dropout mask.
    """
    if layers < 1:
        raise ValueError("layers must be >= 1")

    def drop(node):
        return ag.dropout(node, dropout_ratio, rng, training)

    item_state = item_init
    user_state = None
    for _ in range(layers):
        to_edges_items = ag.matmul(drop(ag.transpose(item_dep)), item_state)
        to_edges_users = ag.matmul(drop(ag.transpose(item_dep)), item_state)
        user_state = ag.matmul(drop(user_dep), to_edges_users)
        item_state = ag.matmul(drop(item_dep), to_edges_items)
    return user_state, item_state


def aggregate_global(user_globals: dict[str, Node], item_globals: dict[str, Node]) -> Node:
    """Sum the stacked [users; items] global embeddings over modalities."""
    total = None
    for modality, users in user_globals.items():
        stacked = ag.concat_rows(users, item_globals[modality])
        total = stacked if total is None else ag.add(total, stacked)
    return total


def _infonce(anchor: Node, other: Node, temperature: float) -> Node:
    """Mean InfoNCE over pool rows with cosine similarity logits."""
    a = ag.row_l2_normalize(anchor)
    b = ag.row_l2_normalize(other)
    logits = ag.scale(ag.matmul(a, b, transpose_b=True), 1.0 / temperature)
    positive = ag.scale(ag.rowwise_sum(ag.mul(a, b)), 1.0 / temperature)
    per_row = ag.sub(ag.logsumexp_rows(logits), positive)
    return ag.scale(ag.sum_all(per_row), 1.0 / anchor.value.shape[0])


def hcl_loss(
    user_globals: dict[str, Node],
    item_globals: dict[str, Node],
    temperature: float,
    user_pool: np.ndarray,
    item_pool: np.ndarray,
) -> tuple[Node, Node]:
    """Cross-modal contrastive losses for users and items.

    Positives pair the same entity across the two modalities; every other
    pool entity is a negative. Losses are averaged over the pool.
    """
    if temperature <= 0:
        raise ConfigError(f"contrastive temperature must be positive, got {temperature}")
    if len(user_globals) != 2 or len(item_globals) != 2:
        raise ConfigError("the contrastive loss is defined for exactly two modalities")
    if len(user_pool) < 2 or len(item_pool) < 2:
        raise ContrastivePoolError("contrastive pool needs at least two entities")
    (first, second) = list(user_globals)
    u_a = ag.gather_rows(user_globals[first], user_pool)
    u_b = ag.gather_rows(user_globals[second], user_pool)
    i_a = ag.gather_rows(item_globals[first], item_pool)
    i_b = ag.gather_rows(item_globals[second], item_pool)
    return _infonce(u_a, u_b, temperature), _infonce(i_a, i_b, temperature)
