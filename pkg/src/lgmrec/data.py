"""Interaction logs, modal feature files, filtering, splits, graph operators.

File formats:
  * interactions: UTF-8 text, one ``user<TAB>item`` pair per line, ``#``
    comments ignored.
  * feature matrix: little-endian binary. Magic ``LGMF``, u32 version (=1),
    u64 rows, u64 cols, then rows*cols float32 values row-major. Values are
    widened to float64 on load.
  * split manifest: ``user<TAB>item<TAB>{train|valid|test}`` per record.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    DimensionError,
    EmptyDatasetError,
    FeatureMagicError,
    FeatureShapeError,
    FeatureTruncatedError,
    FeatureVersionError,
    ParseError,
)
from .sparse import SparseMatrixCSR

FEATURE_MAGIC = b"LGMF"
FEATURE_VERSION = 1


@dataclass
class Dataset:
    """Interactions split three ways plus per-modality item features.

    ``train``/``valid``/``test`` are int64 arrays of shape (n, 2) holding
    (user, item) pairs with dense ids. ``user_map``/``item_map`` give the
    original id for each dense id (identity when no remapping happened).
    """

    num_users: int
    num_items: int
    train: np.ndarray
    valid: np.ndarray
    test: np.ndarray
    modal_features: dict[str, np.ndarray]
    user_map: np.ndarray = field(default=None)
    item_map: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.user_map is None:
            self.user_map = np.arange(self.num_users, dtype=np.int64)
        if self.item_map is None:
            self.item_map = np.arange(self.num_items, dtype=np.int64)

    @property
    def modalities(self) -> list[str]:
        return list(self.modal_features)

    def validate(self) -> "Dataset":
        seen = set()
        for name, part in (("train", self.train), ("valid", self.valid), ("test", self.test)):
            if part.ndim != 2 or part.shape[1] != 2:
                raise DimensionError(f"{name} split must have shape (n, 2)")
            if part.size:
                if part[:, 0].min() < 0 or part[:, 0].max() >= self.num_users:
                    raise IndexError(f"{name} split contains out-of-range user id")
                if part[:, 1].min() < 0 or part[:, 1].max() >= self.num_items:
                    raise IndexError(f"{name} split contains out-of-range item id")
            pairs = set(map(tuple, part.tolist()))
            if pairs & seen:
                raise DimensionError("splits are not disjoint")
            seen |= pairs
        if len(np.unique(self.train[:, 0])) != self.num_users:
            raise EmptyDatasetError("every user needs at least one training interaction")
        for m, feats in self.modal_features.items():
            if feats.shape[0] != self.num_items:
                raise DimensionError(
                    f"modality '{m}' has {feats.shape[0]} rows, expected {self.num_items}"
                )
        return self


def load_interactions(path) -> list[tuple[int, int]]:
    """Parse and deduplicate (user, item) records, keeping first-seen order."""
    records: list[tuple[int, int]] = []
    seen: set[tuple[int, int]] = set()
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise ParseError(f"{path}:{lineno}: expected 'user<TAB>item', got {raw!r}")
            try:
                user, item = int(parts[0]), int(parts[1])
            except ValueError:
                raise ParseError(f"{path}:{lineno}: non-integer id in {raw!r}") from None
            if user < 0 or item < 0:
                raise ParseError(f"{path}:{lineno}: negative id in {raw!r}")
            pair = (user, item)
            if pair not in seen:
                seen.add(pair)
                records.append(pair)
    if not records:
        raise EmptyDatasetError(f"{path}: no interaction records")
    return records


def k_core_filter(records, k: int):
    """Iteratively drop users/items with fewer than ``k`` interactions.

    Returns ``(filtered, user_map, item_map)`` where the filtered records use
    dense ids and the maps list the original id per dense id. Deterministic:
    survivor ids are assigned in ascending original-id order.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    pairs = list(records)
    while True:
        user_deg: dict[int, int] = {}
        item_deg: dict[int, int] = {}
        for u, i in pairs:
            user_deg[u] = user_deg.get(u, 0) + 1
            item_deg[i] = item_deg.get(i, 0) + 1
        keep_u = {u for u, d in user_deg.items() if d >= k}
        keep_i = {i for i, d in item_deg.items() if d >= k}
        if len(keep_u) == len(user_deg) and len(keep_i) == len(item_deg):
            break
        pairs = [(u, i) for u, i in pairs if u in keep_u and i in keep_i]
        if not pairs:
            raise EmptyDatasetError(f"{k}-core filtering removed every record")
    user_map = np.array(sorted({u for u, _ in pairs}), dtype=np.int64)
    item_map = np.array(sorted({i for _, i in pairs}), dtype=np.int64)
    u_new = {orig: new for new, orig in enumerate(user_map)}
    i_new = {orig: new for new, orig in enumerate(item_map)}
    filtered = [(u_new[u], i_new[i]) for u, i in pairs]
    return filtered, user_map, item_map


def split_dataset(records, ratios=(0.8, 0.1, 0.1), seed: int = 0, rng=None):
    """Per-user random split into (train, valid, test) index arrays.

    Each user's records are shuffled and divided by the ratios, train taking
    all remainders. Users with fewer than 3 records keep one in train and
    spill the surplus to valid, then test. Deterministic per seed.
    """
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError("ratios must sum to 1")
    if rng is None:
        rng = np.random.default_rng(seed)
    pairs = np.asarray(records, dtype=np.int64)
    by_user: dict[int, list[int]] = {}
    for pos, (u, _) in enumerate(pairs):
        by_user.setdefault(int(u), []).append(pos)
    train_idx, valid_idx, test_idx = [], [], []
    for u in sorted(by_user):
        positions = np.array(by_user[u], dtype=np.int64)
        positions = positions[rng.permutation(len(positions))]
        c = len(positions)
        if c < 3:
            n_train, n_valid = 1, min(1, c - 1)
        else:
            n_valid = int(np.floor(c * ratios[1]))
            n_test = int(np.floor(c * ratios[2]))
            n_train = c - n_valid - n_test
        train_idx.extend(positions[:n_train])
        valid_idx.extend(positions[n_train : n_train + n_valid])
        test_idx.extend(positions[n_train + n_valid :])
    return (
        pairs[np.array(train_idx, dtype=np.int64)],
        pairs[np.array(valid_idx, dtype=np.int64)] if valid_idx else np.empty((0, 2), np.int64),
        pairs[np.array(test_idx, dtype=np.int64)] if test_idx else np.empty((0, 2), np.int64),
    )


def write_feature_matrix(path, matrix: np.ndarray) -> None:
    """Write a 2-d array in the binary feature format (float32 payload)."""
    m = np.ascontiguousarray(matrix, dtype=np.float32)
    if m.ndim != 2:
        raise DimensionError("feature matrix must be 2-d")
    with open(path, "wb") as fh:
        fh.write(FEATURE_MAGIC)
        fh.write(struct.pack("<I", FEATURE_VERSION))
        fh.write(struct.pack("<QQ", m.shape[0], m.shape[1]))
        fh.write(m.tobytes())


def load_feature_matrix(path, expected_rows: int | None = None) -> np.ndarray:
    """Read a feature file, widen to float64, and check the row contract."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != FEATURE_MAGIC:
            raise FeatureMagicError(f"{path}: bad magic {magic!r}")
        header = fh.read(20)
        if len(header) < 20:
            raise FeatureTruncatedError(f"{path}: truncated header")
        (version,) = struct.unpack("<I", header[:4])
        if version != FEATURE_VERSION:
            raise FeatureVersionError(f"{path}: unsupported version {version}")
        rows, cols = struct.unpack("<QQ", header[4:])
        payload = fh.read()
    need = rows * cols * 4
    if len(payload) < need:
        raise FeatureTruncatedError(f"{path}: payload has {len(payload)} bytes, need {need}")
    if len(payload) > need:
        raise FeatureTruncatedError(f"{path}: {len(payload) - need} trailing bytes after payload")
    if expected_rows is not None and rows != expected_rows:
        raise FeatureShapeError(f"{path}: {rows} rows, expected {expected_rows}")
    values = np.frombuffer(payload, dtype="<f4", count=rows * cols)
    return values.astype(np.float64).reshape(rows, cols)


@dataclass
class AdjacencyPair:
    """Graph operators shared by the propagation modules.

    ``a_hat``: symmetric degree-normalized adjacency on user+item nodes,
    users first. ``a_user_item``: binary user-by-item interaction matrix.
    ``degree``: interaction count per node (users then items).
    """

    a_hat: SparseMatrixCSR
    a_user_item: SparseMatrixCSR
    degree: np.ndarray


def build_adjacency(train_records, num_users: int, num_items: int) -> AdjacencyPair:
    """Symmetric normalized adjacency plus the raw user-item matrix.

    Nonzero (j, k) of the normalized matrix carries 1/sqrt(deg_j * deg_k).
    Degree-0 nodes simply keep empty rows.
    """
    pairs = np.asarray(train_records, dtype=np.int64).reshape(-1, 2)
    users, items = pairs[:, 0], pairs[:, 1]
    if pairs.size:
        if users.min() < 0 or users.max() >= num_users:
            raise IndexError("user id out of range")
        if items.min() < 0 or items.max() >= num_items:
            raise IndexError("item id out of range")
    n = num_users + num_items
    degree = np.zeros(n, dtype=np.int64)
    np.add.at(degree, users, 1)
    np.add.at(degree, num_users + items, 1)
    inv_sqrt = np.zeros(n, dtype=np.float64)
    nz = degree > 0
    inv_sqrt[nz] = 1.0 / np.sqrt(degree[nz])
    rows = np.concatenate([users, num_users + items])
    cols = np.concatenate([num_users + items, users])
    vals = inv_sqrt[rows] * inv_sqrt[cols]
    a_hat = SparseMatrixCSR.from_coo(n, n, rows, cols, vals)
    a_user_item = SparseMatrixCSR.from_coo(
        num_users, num_items, users, items, np.ones(len(users))
    )
    return AdjacencyPair(a_hat=a_hat, a_user_item=a_user_item, degree=degree)


def write_split_manifest(path, train, valid, test) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for name, part in (("train", train), ("valid", valid), ("test", test)):
            for u, i in np.asarray(part):
                fh.write(f"{u}\t{i}\t{name}\n")


def write_interactions(path, records) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for u, i in records:
            fh.write(f"{u}\t{i}\n")


def write_id_map(path, id_map: np.ndarray) -> None:
    """Dense-id -> original-id table, one ``new<TAB>original`` line per id."""
    with open(path, "w", encoding="utf-8") as fh:
        for new, orig in enumerate(np.asarray(id_map)):
            fh.write(f"{new}\t{orig}\n")


def load_dataset(
    interactions_path,
    feature_paths: dict[str, str],
    kcore: int = 5,
    split_seed: int = 0,
    ratios=(0.8, 0.1, 0.1),
) -> Dataset:
    """Full ingestion pipeline: parse, k-core, split, attach features.

    Feature files are indexed by the original item ids appearing in the
    interactions file (rows = max original id + 1); rows of filtered-out
    items are dropped after the k-core remap.
    """
    raw = load_interactions(interactions_path)
    raw_item_rows = max(i for _, i in raw) + 1
    filtered, user_map, item_map = k_core_filter(raw, kcore)
    train, valid, test = split_dataset(filtered, ratios=ratios, seed=split_seed)
    features = {}
    for modality, path in feature_paths.items():
        full = load_feature_matrix(path, expected_rows=raw_item_rows)
        features[modality] = np.ascontiguousarray(full[item_map])
    return Dataset(
        num_users=len(user_map),
        num_items=len(item_map),
        train=train,
        valid=valid,
        test=test,
        modal_features=features,
        user_map=user_map,
        item_map=item_map,
    ).validate()


def interactions_by_user(pairs: np.ndarray, num_users: int) -> list[np.ndarray]:
    """Item-id array per user, ascending user order."""
    out: list[list[int]] = [[] for _ in range(num_users)]
    for u, i in np.asarray(pairs):
        out[int(u)].append(int(i))
    return [np.array(items, dtype=np.int64) for items in out]


def sha256_digest(path) -> str:
    import hashlib

    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def resolve_path(base: Path, value: str) -> Path:
    p = Path(value)
    return p if p.is_absolute() else base / p
