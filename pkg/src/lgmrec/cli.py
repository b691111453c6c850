"""Command line entry points: train, evaluate, generate, sweep, diagnose.

Configuration is one JSON document. Precedence is defaults < preset < file
values < ``--set`` overrides; unknown keys are rejected. Every run writes a
manifest with the fully resolved configuration and input digests before
training starts, so the run is reproducible from the manifest alone.
"""

from __future__ import annotations

import itertools
import json
import sys
from dataclasses import fields as dataclass_fields
from pathlib import Path

import click
import numpy as np

from . import __version__
from .config import PRESETS, TrainConfig
from .data import (
    load_dataset,
    resolve_path,
    sha256_digest,
    write_feature_matrix,
    write_id_map,
    write_interactions,
    write_split_manifest,
)
from .errors import ConfigError, LgmrecError
from .estimator import LGMRec
from .metrics import (
    by_user_sets,
    evaluate,
    export_hyperedge_dependencies,
    export_lines,
    group_report_lines,
    sparsity_group_report,
)
from .model import forward, load_checkpoint, save_checkpoint
from .synthetic import SynthConfig, generate_synthetic_with_labels
from .trainer import (
    TrainContext,
    conflict_report_lines,
    gradient_conflict_diagnostic,
)

TRAIN_FIELDS = {f.name for f in dataclass_fields(TrainConfig)}
DATA_KEYS = {"preset", "interactions", "features", "out_dir", "kcore", "cutoffs", "group_boundaries"}
KNOWN_KEYS = TRAIN_FIELDS | DATA_KEYS


def _parse_set(values: tuple[str, ...]) -> dict:
    out: dict = {}
    for item in values:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got '{item}'")
        key, raw = item.split("=", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        target = out
        parts = key.split(".")
        for part in parts[:-1]:
            target = target.setdefault(part, {})
        target[parts[-1]] = value
    return out


def resolve_config(config_path: str | None, overrides: dict) -> dict:
    """Materialize every key: defaults, preset, file, then overrides."""
    file_doc: dict = {}
    base = Path.cwd()
    if config_path:
        path = Path(config_path)
        with open(path, "r", encoding="utf-8") as fh:
            file_doc = json.load(fh)
        if "artifact_version" in file_doc and "config" in file_doc:
            file_doc = file_doc["config"]  # a run manifest doubles as a config
        base = path.resolve().parent
    for doc, origin in ((file_doc, "config file"), (overrides, "--set override")):
        for key in doc:
            if key not in KNOWN_KEYS:
                raise ConfigError(f"unknown {origin} key '{key}'")

    preset = overrides.get("preset", file_doc.get("preset", "baby"))
    if preset not in PRESETS:
        raise ConfigError(f"unknown preset '{preset}', expected one of {sorted(PRESETS)}")
    resolved: dict = {"preset": preset}
    resolved.update(TrainConfig().to_dict())
    resolved.update(PRESETS[preset])
    resolved["kcore"] = 1 if preset == "synthetic" else 5
    resolved["cutoffs"] = [10, 20]
    resolved["group_boundaries"] = [5, 10, 20, 50]
    resolved["interactions"] = None
    resolved["features"] = {}
    resolved["out_dir"] = None

    for doc in (file_doc, overrides):
        for key, value in doc.items():
            if key == "features":
                if not isinstance(value, dict):
                    raise ConfigError("'features' must map modality names to file paths")
                merged = dict(resolved["features"])
                merged.update(value)
                resolved["features"] = merged
            else:
                resolved[key] = value

    if resolved["interactions"]:
        resolved["interactions"] = str(resolve_path(base, str(resolved["interactions"])))
    resolved["features"] = {
        m: str(resolve_path(base, str(p))) for m, p in resolved["features"].items()
    }
    if resolved["out_dir"]:
        resolved["out_dir"] = str(resolve_path(base, str(resolved["out_dir"])))
    TrainConfig(**{k: resolved[k] for k in TRAIN_FIELDS}).validate()
    if int(resolved["kcore"]) < 1:
        raise ConfigError("kcore must be >= 1")
    return resolved


def _train_config(resolved: dict) -> TrainConfig:
    return TrainConfig(**{k: resolved[k] for k in TRAIN_FIELDS}).validate()


def _require(resolved: dict, keys) -> None:
    for key in keys:
        if not resolved.get(key):
            raise ConfigError(f"config key '{key}' is required for this command")


def _load_data(resolved: dict):
    return load_dataset(
        resolved["interactions"],
        resolved["features"],
        kcore=int(resolved["kcore"]),
        split_seed=int(resolved["seed"]),
    )


def _write_manifest(out_dir: Path, resolved: dict) -> None:
    digests = {resolved["interactions"]: sha256_digest(resolved["interactions"])}
    for path in resolved["features"].values():
        digests[path] = sha256_digest(path)
    manifest = {
        "artifact_version": __version__,
        "config": resolved,
        "data_digests": digests,
        "seed": resolved["seed"],
        "outputs": {
            "checkpoint": str(out_dir / "checkpoint"),
            "history": str(out_dir / "history.jsonl"),
            "metrics": str(out_dir / "metrics.tsv"),
            "split": str(out_dir / "split.tsv"),
        },
    }
    with open(out_dir / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _run_training(resolved: dict, echo=click.echo) -> dict:
    """Shared train pipeline; returns the metric lines and output paths."""
    _require(resolved, ("interactions", "features", "out_dir"))
    out_dir = Path(resolved["out_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    dataset = _load_data(resolved)
    _write_manifest(out_dir, resolved)
    write_split_manifest(out_dir / "split.tsv", dataset.train, dataset.valid, dataset.test)
    write_id_map(out_dir / "user_map.tsv", dataset.user_map)
    write_id_map(out_dir / "item_map.tsv", dataset.item_map)

    estimator = LGMRec(**{k: resolved[k] for k in TRAIN_FIELDS})
    estimator.fit(dataset)
    estimator.history_.write_jsonl(out_dir / "history.jsonl")
    save_checkpoint(out_dir / "checkpoint", estimator.params_, estimator.config_)

    # Score the test split from the checkpoint actually written, so a later
    # `evaluate` on the same files reproduces these numbers bit for bit.
    params, cfg = load_checkpoint(out_dir / "checkpoint")
    ctx = TrainContext.from_dataset(dataset)
    e_star = forward(params, ctx.graph, ctx.features, cfg, training=False).e_star
    result = evaluate(
        e_star,
        dataset.num_users,
        by_user_sets(dataset.test),
        by_user_sets(dataset.train),
        cutoffs=tuple(resolved["cutoffs"]),
    )
    lines = result.as_lines()
    with open(out_dir / "metrics.tsv", "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    for line in lines:
        echo(line)
    return {
        "out_dir": out_dir,
        "metric_lines": lines,
        "best_epoch": estimator.history_.best_epoch,
        "val_recall": max((r.val_recall for r in estimator.history_.records), default=0.0),
    }


def _fail(exc: Exception) -> None:
    raise click.ClickException(str(exc))


@click.group()
@click.version_option(version=__version__)
def main():
    """Train and evaluate the local/global multimodal graph recommender."""


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--set", "set_values", multiple=True, help="Override a config key, e.g. --set seed=7")
def train(config_path, set_values):
    """Train a model and write checkpoint, history, manifest, and metrics."""
    try:
        resolved = resolve_config(config_path, _parse_set(set_values))
        _run_training(resolved)
    except (LgmrecError, FloatingPointError, OSError) as exc:
        _fail(exc)


@main.command("evaluate")
@click.option("--checkpoint", "checkpoint_dir", type=click.Path(exists=True), required=True)
@click.option("--config", "config_path", type=click.Path(exists=True), required=True)
@click.option("--set", "set_values", multiple=True)
@click.option("--cutoffs", default="10,20", help="Comma-separated top-n cutoffs")
@click.option("--groups", default=None, help="Sparsity-group boundaries, e.g. 5,10,20,50")
@click.option("--export-users", default=None, help="Comma-separated user ids for dependency export")
@click.option("--out", "out_path", type=click.Path(), default=None, help="Write report files here")
def evaluate_cmd(checkpoint_dir, config_path, set_values, cutoffs, groups, export_users, out_path):
    """Evaluate a checkpoint on the test split; optional reports."""
    try:
        resolved = resolve_config(config_path, _parse_set(set_values))
        _require(resolved, ("interactions", "features"))
        dataset = _load_data(resolved)
        params, cfg = load_checkpoint(checkpoint_dir)
        if params.num_users != dataset.num_users or params.num_items != dataset.num_items:
            raise ConfigError(
                f"checkpoint is for {params.num_users}x{params.num_items} "
                f"but data has {dataset.num_users}x{dataset.num_items}"
            )
        ctx = TrainContext.from_dataset(dataset)
        e_star = forward(params, ctx.graph, ctx.features, cfg, training=False).e_star
        cut = tuple(int(c) for c in str(cutoffs).split(","))
        relevant = by_user_sets(dataset.test)
        mask = by_user_sets(dataset.train)
        result = evaluate(e_star, dataset.num_users, relevant, mask, cutoffs=cut)
        report_lines = result.as_lines()
        for line in report_lines:
            click.echo(line)
        extra_lines: list[str] = []
        if groups:
            boundaries = [int(b) for b in str(groups).split(",")]
            train_counts = {u: len(s) for u, s in by_user_sets(dataset.train).items()}
            reports = sparsity_group_report(
                e_star, dataset.num_users, relevant, mask, train_counts,
                boundaries=boundaries, cutoffs=cut,
            )
            extra_lines += group_report_lines(reports, cutoffs=cut)
        if export_users:
            users = [int(u) for u in str(export_users).split(",")]
            exports = export_hyperedge_dependencies(
                params, ctx.graph, ctx.features, cfg, users, by_user_sets(dataset.train)
            )
            extra_lines += export_lines(exports)
        for line in extra_lines:
            click.echo(line)
        if out_path:
            with open(out_path, "w", encoding="utf-8") as fh:
                fh.write("\n".join(report_lines + extra_lines) + "\n")
    except (LgmrecError, FloatingPointError, OSError) as exc:
        _fail(exc)


@main.command()
@click.option("--out", "out_dir", type=click.Path(), required=True)
@click.option("--users", default=300, show_default=True)
@click.option("--items", default=200, show_default=True)
@click.option("--attributes", default=4, show_default=True)
@click.option("--interactions-per-user", default=12.0, show_default=True)
@click.option("--feature-noise", default=0.05, show_default=True)
@click.option("--sharpness", default=3.0, show_default=True)
@click.option("--visual-dim", default=16, show_default=True)
@click.option("--textual-dim", default=12, show_default=True)
@click.option("--seed", default=42, show_default=True)
def generate(out_dir, users, items, attributes, interactions_per_user, feature_noise,
             sharpness, visual_dim, textual_dim, seed):
    """Generate a synthetic multimodal corpus plus a ready-to-train config."""
    try:
        synth = SynthConfig(
            num_users=users,
            num_items=items,
            num_latent_attributes=attributes,
            feature_dims={"visual": visual_dim, "textual": textual_dim},
            interactions_per_user=interactions_per_user,
            feature_noise=feature_noise,
            preference_sharpness=sharpness,
            seed=seed,
        ).validate()
        dataset, labels = generate_synthetic_with_labels(synth)
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        all_pairs = np.concatenate([dataset.train, dataset.valid, dataset.test])
        order = np.lexsort((all_pairs[:, 1], all_pairs[:, 0]))
        write_interactions(out / "interactions.tsv", all_pairs[order])
        feature_files = {}
        for modality, matrix in dataset.modal_features.items():
            name = f"features_{modality}.lgmf"
            write_feature_matrix(out / name, matrix)
            feature_files[modality] = name
        with open(out / "item_labels.tsv", "w", encoding="utf-8") as fh:
            for item, label in enumerate(labels):
                fh.write(f"{item}\t{label}\n")
        config = {
            "preset": "synthetic",
            "interactions": "interactions.tsv",
            "features": feature_files,
            "out_dir": "run",
            "seed": seed,
        }
        with open(out / "config.json", "w", encoding="utf-8") as fh:
            json.dump(config, fh, indent=2, sort_keys=True)
            fh.write("\n")
        click.echo(f"wrote {len(all_pairs)} interactions for {users} users, {items} items -> {out}")
    except (LgmrecError, OSError) as exc:
        _fail(exc)


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True), required=True)
@click.option("--set", "set_values", multiple=True)
@click.option("--grid", "grid_values", multiple=True, required=True,
              help="Axis spec key=v1,v2,...; repeat for a cartesian product")
def sweep(config_path, set_values, grid_values):
    """Train every grid point with the shared seed; rank by validation recall."""
    try:
        base = resolve_config(config_path, _parse_set(set_values))
        _require(base, ("interactions", "features", "out_dir"))
        axes: list[tuple[str, list]] = []
        for spec in grid_values:
            if "=" not in spec:
                raise ConfigError(f"--grid expects key=v1,v2,..., got '{spec}'")
            key, raw = spec.split("=", 1)
            if key not in TRAIN_FIELDS:
                raise ConfigError(f"unknown grid key '{key}'")
            values = []
            for tok in raw.split(","):
                try:
                    values.append(json.loads(tok))
                except json.JSONDecodeError:
                    values.append(tok)
            if not values:
                raise ConfigError(f"empty grid axis '{key}'")
            axes.append((key, values))
        root = Path(base["out_dir"])
        root.mkdir(parents=True, exist_ok=True)
        rows = []
        for index, combo in enumerate(itertools.product(*(v for _, v in axes))):
            point = dict(zip((k for k, _ in axes), combo))
            resolved = dict(base)
            resolved.update(point)
            resolved["out_dir"] = str(root / f"point_{index:04d}")
            label = ",".join(f"{k}={v}" for k, v in point.items())
            try:
                outcome = _run_training(resolved, echo=lambda _line: None)
                test20 = _metric_from_lines(outcome["metric_lines"], "recall", 20)
                rows.append((label, outcome["val_recall"], test20, "ok"))
            except (LgmrecError, FloatingPointError, OSError) as exc:
                rows.append((label, float("nan"), float("nan"), f"failed: {exc}"))
        rows.sort(key=lambda r: (-(r[1] if np.isfinite(r[1]) else -np.inf), r[0]))
        lines = ["point\tval_recall@20\ttest_recall@20\tstatus"]
        for label, val, test, status in rows:
            lines.append(f"{label}\t{val!r}\t{test!r}\t{status}")
        with open(root / "sweep.tsv", "w", encoding="utf-8") as fh:
            fh.write("\n".join(lines) + "\n")
        for line in lines:
            click.echo(line)
    except (LgmrecError, OSError) as exc:
        _fail(exc)


def _metric_from_lines(lines: list[str], metric: str, n: int) -> float:
    for line in lines:
        key, value = line.split("\t")
        if key == f"{metric}@{n}":
            return float(value)
    return float("nan")


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True), required=True)
@click.option("--set", "set_values", multiple=True)
@click.option("--epochs", default=5, show_default=True)
@click.option("--users", "num_sample_users", default=8, show_default=True)
def diagnose(config_path, set_values, epochs, num_sample_users):
    """Measure collaborative-vs-modal gradient conflict under shared user ids."""
    try:
        resolved = resolve_config(config_path, _parse_set(set_values))
        _require(resolved, ("interactions", "features", "out_dir"))
        resolved["ablation"] = "suid"
        dataset = _load_data(resolved)
        cfg = _train_config(resolved)
        picker = np.random.default_rng(cfg.seed)
        sample = picker.choice(
            dataset.num_users, size=min(num_sample_users, dataset.num_users), replace=False
        )
        rows = gradient_conflict_diagnostic(dataset, cfg, sorted(int(u) for u in sample), epochs)
        out = Path(resolved["out_dir"])
        out.mkdir(parents=True, exist_ok=True)
        lines = conflict_report_lines(rows)
        with open(out / "conflict.tsv", "w", encoding="utf-8") as fh:
            fh.write("\n".join(lines) + "\n")
        for line in lines:
            click.echo(line)
    except (LgmrecError, FloatingPointError, OSError) as exc:
        _fail(exc)


if __name__ == "__main__":
    sys.exit(main())
