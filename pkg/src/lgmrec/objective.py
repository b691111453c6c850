"""Embedding fusion, preference scoring, and the training losses."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .autograd import Node
from .errors import ConfigError


@dataclass
class TripleBatch:
    """(user, positive item, negative item) index triples for ranking."""

    users: np.ndarray
    pos_items: np.ndarray
    neg_items: np.ndarray

    def __len__(self) -> int:
        return len(self.users)


def fuse(
    collab: Node | None,
    modal: dict[str, Node],
    global_embeddings: Node | None,
    global_weight: float,
    include_collab: bool = True,
    include_modal: bool = True,
    include_global: bool = True,
) -> Node:
    """Final embeddings: collab + sum of normalized modal + weighted global.

    Row normalization evens out the scale differences between the three
    sources. Ablation flags drop whole terms; at least one must remain.
    """
    terms: list[Node] = []
    if include_collab:
        if collab is None:
            raise ConfigError("collaborative term requested but not computed")
        terms.append(collab)
    if include_modal:
        for node in modal.values():
            terms.append(ag.row_l2_normalize(node))
    if include_global:
        if global_embeddings is None:
            raise ConfigError("global term requested but not computed")
        terms.append(ag.scale(ag.row_l2_normalize(global_embeddings), global_weight))
    if not terms:
        raise ConfigError("all fusion terms ablated; nothing to score with")
    out = terms[0]
    for t in terms[1:]:
        out = ag.add(out, t)
    return out


def score(e_star: np.ndarray, num_users: int, user: int, item: int) -> float:
    """Inner-product preference score from fused embeddings (users first)."""
    num_items = e_star.shape[0] - num_users
    if not 0 <= user < num_users:
        raise IndexError(f"user {user} out of range")
    if not 0 <= item < num_items:
        raise IndexError(f"item {item} out of range")
    return float(e_star[user] @ e_star[num_users + item])


def bpr_loss(
    fused: Node,
    batch: TripleBatch,
    num_users: int,
    reg_weight: float,
    regularized_leaves: dict[str, Node],
    id_embeddings_key: str = "id_embeddings",
) -> Node:
    """Pairwise ranking loss, summed over the batch, with L2 on touched params.

    The margin term is softplus(-(pos - neg)), the stable form of
    -log(sigmoid(margin)). Regularization covers the ID-embedding rows the
    batch actually gathers plus every non-embedding leaf in
    ``regularized_leaves`` (the modal transforms and hyperedge vectors).
    """
    if len(batch) == 0:
        raise ValueError("empty triple batch")
    user_rows = ag.gather_rows(fused, batch.users)
    pos_rows = ag.gather_rows(fused, num_users + batch.pos_items)
    neg_rows = ag.gather_rows(fused, num_users + batch.neg_items)
    margin = ag.sub(ag.rowwise_sum(ag.mul(user_rows, pos_rows)),
                    ag.rowwise_sum(ag.mul(user_rows, neg_rows)))
    loss = ag.sum_all(ag.softplus(ag.scale(margin, -1.0)))
    if reg_weight > 0:
        pieces = []
        id_leaf = regularized_leaves.get(id_embeddings_key)
        if id_leaf is not None:
            touched = np.concatenate(
                [batch.users, num_users + batch.pos_items, num_users + batch.neg_items]
            )
            rows = ag.gather_rows(id_leaf, touched)
            pieces.append(ag.sum_all(ag.mul(rows, rows)))
        for name, leaf in regularized_leaves.items():
            if name != id_embeddings_key:
                pieces.append(ag.sum_all(ag.mul(leaf, leaf)))
        if pieces:
            reg = pieces[0]
            for p in pieces[1:]:
                reg = ag.add(reg, p)
            loss = ag.add(loss, ag.scale(reg, reg_weight))
    return loss


def total_loss(bpr: Node, hcl_user: Node | None, hcl_item: Node | None, contrast_weight: float) -> Node:
    """Joint objective: ranking plus weighted contrastive terms (if present)."""
    if hcl_user is None or hcl_item is None or contrast_weight == 0.0:
        return bpr
    return ag.add(bpr, ag.scale(ag.add(hcl_user, hcl_item), contrast_weight))
