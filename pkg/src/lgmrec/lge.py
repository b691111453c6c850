"""Local graph embeddings: collaborative and modal propagation, decoupled.

The collaborative path propagates ID embeddings over the normalized
interaction graph and averages all depths. The modal path projects raw item
features into embedding space, seeds users by averaging their neighbors'
projected features, propagates the stack, and keeps only the deepest layer.
The two paths share no trainable leaves, so their gradients stay disjoint
(unless the shared-user-id variant deliberately reintroduces the coupling).
"""

from __future__ import annotations

import numpy as np

from . import autograd as ag
from .autograd import Node
from .errors import DimensionError
from .sparse import SparseMatrixCSR


def collaborative_propagate(id_embeddings: Node, a_hat: SparseMatrixCSR, layers: int) -> Node:
    """Mean of propagation depths 0..layers starting from the ID embeddings."""
    if layers < 0:
        raise ValueError("layers must be >= 0")
    if a_hat.cols != id_embeddings.value.shape[0]:
        raise DimensionError("adjacency size does not match embedding rows")
    acc = id_embeddings
    current = id_embeddings
    for _ in range(layers):
        current = ag.spmm(a_hat, current)
        acc = ag.add(acc, current)
    return ag.scale(acc, 1.0 / (layers + 1))


def transform_modal(raw_features: Node, transform: Node) -> Node:
    """Project raw per-item modal features into the shared embedding space."""
    return ag.matmul(raw_features, transform)


def init_user_modal(a_user_item: SparseMatrixCSR, item_modal: Node) -> Node:
    """Seed each user with the mean of their neighbors' modal embeddings.

    Users without training interactions get zero rows.
    """
    if a_user_item.cols != item_modal.value.shape[0]:
        raise DimensionError("interaction matrix and item embeddings disagree on item count")
    deg = a_user_item.row_degrees().astype(np.float64)
    inv = np.where(deg > 0, 1.0 / np.maximum(deg, 1.0), 0.0)
    mean_op = a_user_item.with_values(np.repeat(inv, a_user_item.row_degrees()))
    return ag.spmm(mean_op, item_modal)


def modality_propagate(stacked_modal: Node, a_hat: SparseMatrixCSR, layers: int) -> Node:
    """Propagate the stacked user+item modal matrix; return the last layer only."""
    if layers < 1:
        raise ValueError("layers must be >= 1")
    current = stacked_modal
    for _ in range(layers):
        current = ag.spmm(a_hat, current)
    return current
