"""Trainable parameters and the full forward pass.

A forward pass wires the local and global embedding paths for the active
ablation and returns handles to every intermediate the losses, diagnostics,
and exporters need. One :class:`~lgmrec.autograd.Tape` is built per pass.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autograd as ag
from . import ghe, lge
from .autograd import Node, Tape, gather_rows
from .config import RngStreams, TrainConfig
from .data import AdjacencyPair, load_feature_matrix, write_feature_matrix
from .errors import CheckpointError, DimensionError
from .objective import fuse

ID_EMBEDDINGS = "id_embeddings"


def xavier_uniform(rng: np.random.Generator, rows: int, cols: int) -> np.ndarray:
    bound = np.sqrt(6.0 / (rows + cols))
    return rng.uniform(-bound, bound, size=(rows, cols))


@dataclass
class ModelParams:
    """All trainable leaves, keyed by name.

    ``modal_transform.<m>`` projects modality ``m``'s raw features to the
    embedding space; ``hyperedge_vectors.<m>`` holds that modality's
    hyperedge embeddings. Ablations that disable a path allocate nothing
    for it.
    """

    num_users: int
    num_items: int
    arrays: dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def initialize(
        cls,
        num_users: int,
        num_items: int,
        feature_dims: dict[str, int],
        cfg: TrainConfig,
        rng: np.random.Generator,
    ) -> "ModelParams":
        arrays: dict[str, np.ndarray] = {}
        arrays[ID_EMBEDDINGS] = xavier_uniform(rng, num_users + num_items, cfg.embedding_dim)
        if cfg.use_modal_transforms:
            for modality, dim in feature_dims.items():
                arrays[f"modal_transform.{modality}"] = xavier_uniform(rng, dim, cfg.embedding_dim)
        if cfg.use_global:
            for modality, dim in feature_dims.items():
                arrays[f"hyperedge_vectors.{modality}"] = xavier_uniform(
                    rng, cfg.num_hyperedges, dim
                )
        return cls(num_users=num_users, num_items=num_items, arrays=arrays)

    def copy(self) -> "ModelParams":
        return ModelParams(
            num_users=self.num_users,
            num_items=self.num_items,
            arrays={k: v.copy() for k, v in self.arrays.items()},
        )

    def num_parameters(self) -> int:
        return sum(v.size for v in self.arrays.values())

    def modal_transform(self, modality: str) -> np.ndarray:
        return self.arrays[f"modal_transform.{modality}"]

    def hyperedge_vectors(self, modality: str) -> np.ndarray:
        return self.arrays[f"hyperedge_vectors.{modality}"]


@dataclass
class ForwardState:
    """Tape plus named handles into one forward pass."""

    tape: Tape
    leaves: dict[str, Node]
    collab: Node
    modal: dict[str, Node]
    user_globals: dict[str, Node]
    item_globals: dict[str, Node]
    item_deps: dict[str, Node]
    user_deps: dict[str, Node]
    global_embeddings: Node | None
    fused: Node

    @property
    def e_star(self) -> np.ndarray:
        return self.fused.value


def forward(
    params: ModelParams,
    graph: AdjacencyPair,
    features: dict[str, np.ndarray],
    cfg: TrainConfig,
    training: bool,
    rngs: RngStreams | None = None,
) -> ForwardState:
    """Run local propagation, global hypergraph propagation, and fusion.

    ``training`` controls the stochastic ops: dropout masks and Gumbel noise
    are drawn from ``rngs`` when training, frozen to identities otherwise.
    """
    if training and rngs is None:
        raise ValueError("training mode needs RNG streams")
    num_users, num_items = params.num_users, params.num_items
    tape = Tape()
    leaves = {name: tape.leaf(arr) for name, arr in params.arrays.items()}
    id_emb = leaves[ID_EMBEDDINGS]

    collab = lge.collaborative_propagate(id_emb, graph.a_hat, cfg.collab_layers)

    modal: dict[str, Node] = {}
    if cfg.use_modal_transforms:
        for modality, feats in features.items():
            raw = tape.constant(feats)
            item_modal = lge.transform_modal(raw, leaves[f"modal_transform.{modality}"])
            if cfg.share_user_ids:
                user_block = gather_rows(id_emb, np.arange(num_users))
            else:
                user_block = lge.init_user_modal(graph.a_user_item, item_modal)
            stacked = ag.concat_rows(user_block, item_modal)
            modal[modality] = lge.modality_propagate(stacked, graph.a_hat, cfg.modal_layers)

    user_globals: dict[str, Node] = {}
    item_globals: dict[str, Node] = {}
    item_deps: dict[str, Node] = {}
    user_deps: dict[str, Node] = {}
    global_embeddings: Node | None = None
    if cfg.use_global:
        item_init = gather_rows(collab, np.arange(num_users, num_users + num_items))
        gumbel_rng = rngs.gumbel if rngs is not None else None
        dropout_rng = rngs.dropout if rngs is not None else None
        for modality, feats in features.items():
            raw = tape.constant(feats)
            dep_i, dep_u = ghe.build_dependencies(
                raw, leaves[f"hyperedge_vectors.{modality}"], graph.a_user_item
            )
            sharp_i = ghe.gumbel_sharpen(dep_i, cfg.gumbel_temperature, gumbel_rng, training)
            sharp_u = ghe.gumbel_sharpen(dep_u, cfg.gumbel_temperature, gumbel_rng, training)
            u_glob, i_glob = ghe.hypergraph_propagate(
                sharp_i, sharp_u, item_init, cfg.hyper_layers,
                cfg.hyper_dropout, dropout_rng, training,
            )
            item_deps[modality] = sharp_i
            user_deps[modality] = sharp_u
            user_globals[modality] = u_glob
            item_globals[modality] = i_glob
        global_embeddings = ghe.aggregate_global(user_globals, item_globals)

    fused = fuse(
        collab,
        modal,
        global_embeddings,
        cfg.global_weight,
        include_collab=cfg.use_collab_term,
        include_modal=cfg.use_modal_term,
        include_global=cfg.use_global,
    )
    return ForwardState(
        tape=tape,
        leaves=leaves,
        collab=collab,
        modal=modal,
        user_globals=user_globals,
        item_globals=item_globals,
        item_deps=item_deps,
        user_deps=user_deps,
        global_embeddings=global_embeddings,
        fused=fused,
    )


CHECKPOINT_MANIFEST = "checkpoint.json"


def save_checkpoint(directory, params: ModelParams, cfg: TrainConfig) -> None:
    """Write every parameter matrix plus a manifest naming them."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = {}
    for name, arr in params.arrays.items():
        filename = f"{name}.lgmf"
        write_feature_matrix(directory / filename, arr)
        entries[name] = {"file": filename, "rows": arr.shape[0], "cols": arr.shape[1]}
    manifest = {
        "format": "lgmrec-checkpoint",
        "version": 1,
        "num_users": params.num_users,
        "num_items": params.num_items,
        "parameters": entries,
        "config": cfg.to_dict(),
    }
    with open(directory / CHECKPOINT_MANIFEST, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_checkpoint(directory) -> tuple[ModelParams, TrainConfig]:
    directory = Path(directory)
    manifest_path = directory / CHECKPOINT_MANIFEST
    if not manifest_path.exists():
        raise CheckpointError(f"{manifest_path}: checkpoint manifest not found")
    with open(manifest_path, "r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    if manifest.get("format") != "lgmrec-checkpoint":
        raise CheckpointError(f"{manifest_path}: not a checkpoint manifest")
    arrays = {}
    for name, entry in manifest["parameters"].items():
        arr = load_feature_matrix(directory / entry["file"], expected_rows=entry["rows"])
        if arr.shape[1] != entry["cols"]:
            raise DimensionError(f"parameter '{name}' has {arr.shape[1]} cols, manifest says {entry['cols']}")
        arrays[name] = arr
    params = ModelParams(
        num_users=int(manifest["num_users"]),
        num_items=int(manifest["num_items"]),
        arrays=arrays,
    )
    cfg = TrainConfig(**manifest["config"]).validate()
    return params, cfg
