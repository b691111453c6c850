import json
from pathlib import Path

import pytest
from click.testing import CliRunner

from lgmrec.cli import main
from lgmrec.model import CHECKPOINT_MANIFEST


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """One generated corpus and one trained run shared by the read-only tests."""
    root = tmp_path_factory.mktemp("cli")
    runner = CliRunner()
    gen = runner.invoke(main, [
        "generate", "--out", str(root / "data"),
        "--users", "25", "--items", "20", "--attributes", "3",
        "--interactions-per-user", "10", "--seed", "5",
    ])
    assert gen.exit_code == 0, gen.output
    run_dir = root / "run"
    train = runner.invoke(main, [
        "train", "--config", str(root / "data" / "config.json"),
        "--set", f"out_dir={run_dir}",
        "--set", "embedding_dim=8", "--set", "batch_size=128",
        "--set", "max_epochs=3", "--set", "patience=3",
    ])
    assert train.exit_code == 0, train.output
    return root, run_dir, runner


def test_generate_writes_consistent_files(tmp_path):
    runner = CliRunner()
    for target in ("a", "b"):
        out = runner.invoke(main, [
            "generate", "--out", str(tmp_path / target),
            "--users", "12", "--items", "10", "--interactions-per-user", "6", "--seed", "3",
        ])
        assert out.exit_code == 0, out.output
    for name in ("interactions.tsv", "features_visual.lgmf", "features_textual.lgmf",
                 "item_labels.tsv", "config.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    labels = (tmp_path / "a" / "item_labels.tsv").read_text().splitlines()
    assert len(labels) == 10


def test_train_outputs(workspace):
    root, run_dir, _ = workspace
    for name in ("manifest.json", "history.jsonl", "metrics.tsv", "split.tsv",
                 "user_map.tsv", "item_map.tsv"):
        assert (run_dir / name).exists(), name
    assert (run_dir / "checkpoint" / CHECKPOINT_MANIFEST).exists()
    manifest = json.loads((run_dir / "manifest.json").read_text())
    assert manifest["config"]["embedding_dim"] == 8
    assert manifest["config"]["interactions"]
    assert manifest["data_digests"]
    metrics = (run_dir / "metrics.tsv").read_text().splitlines()
    keys = {line.split("\t")[0] for line in metrics}
    assert keys == {"recall@10", "recall@20", "ndcg@10", "ndcg@20"}


def test_evaluate_matches_training_metrics(workspace):
    root, run_dir, runner = workspace
    result = runner.invoke(main, [
        "evaluate", "--checkpoint", str(run_dir / "checkpoint"),
        "--config", str(run_dir / "manifest.json"),
    ])
    assert result.exit_code == 0, result.output
    expected = (run_dir / "metrics.tsv").read_text().strip().splitlines()
    got = [line for line in result.output.strip().splitlines() if "\t" in line]
    assert got[: len(expected)] == expected


def test_evaluate_group_table(workspace):
    root, run_dir, runner = workspace
    result = runner.invoke(main, [
        "evaluate", "--checkpoint", str(run_dir / "checkpoint"),
        "--config", str(run_dir / "manifest.json"),
        "--groups", "5,10,20,50", "--export-users", "0,1",
    ])
    assert result.exit_code == 0, result.output
    lines = result.output.splitlines()
    header = next(i for i, line in enumerate(lines) if line.startswith("group\t"))
    bucket_rows = lines[header + 1 : header + 6]
    assert len(bucket_rows) == 5  # four boundaries make five buckets
    assert any(line.startswith("user\t0\tmodality") for line in lines)


def test_evaluate_rejects_mismatched_data(workspace, tmp_path):
    root, run_dir, runner = workspace
    other = runner.invoke(main, [
        "generate", "--out", str(tmp_path / "other"),
        "--users", "9", "--items", "8", "--interactions-per-user", "4", "--seed", "1",
    ])
    assert other.exit_code == 0
    result = runner.invoke(main, [
        "evaluate", "--checkpoint", str(run_dir / "checkpoint"),
        "--config", str(tmp_path / "other" / "config.json"),
    ])
    assert result.exit_code != 0
    assert "checkpoint is for" in result.output


def test_ablated_checkpoint_has_no_hyperedges(workspace, tmp_path):
    root, _, runner = workspace
    run_dir = tmp_path / "noghe"
    result = runner.invoke(main, [
        "train", "--config", str(root / "data" / "config.json"),
        "--set", f"out_dir={run_dir}", "--set", "ablation=no_ghe",
        "--set", "embedding_dim=8", "--set", "max_epochs=2", "--set", "patience=2",
    ])
    assert result.exit_code == 0, result.output
    manifest = json.loads((run_dir / "checkpoint" / CHECKPOINT_MANIFEST).read_text())
    names = set(manifest["parameters"])
    assert not any(n.startswith("hyperedge_vectors") for n in names)
    assert any(n.startswith("modal_transform") for n in names)


def test_unknown_config_key_rejected(workspace):
    root, _, runner = workspace
    result = runner.invoke(main, [
        "train", "--config", str(root / "data" / "config.json"),
        "--set", "embeding_dim=8",
    ])
    assert result.exit_code != 0
    assert "unknown" in result.output


def test_rerun_from_manifest_is_bitwise_identical(workspace, tmp_path):
    root, run_dir, runner = workspace
    rerun_dir = tmp_path / "rerun"
    result = runner.invoke(main, [
        "train", "--config", str(run_dir / "manifest.json"),
        "--set", f"out_dir={rerun_dir}",
    ])
    assert result.exit_code == 0, result.output
    assert (rerun_dir / "metrics.tsv").read_bytes() == (run_dir / "metrics.tsv").read_bytes()

    def stripped_history(path):
        rows = []
        for line in Path(path).read_text().splitlines():
            record = json.loads(line)
            record.pop("seconds", None)
            rows.append(record)
        return rows

    assert stripped_history(rerun_dir / "history.jsonl") == stripped_history(run_dir / "history.jsonl")


def test_sweep_two_point_grid(workspace, tmp_path):
    root, _, runner = workspace
    sweep_dir = tmp_path / "sweep"
    result = runner.invoke(main, [
        "sweep", "--config", str(root / "data" / "config.json"),
        "--set", f"out_dir={sweep_dir}",
        "--set", "embedding_dim=8", "--set", "max_epochs=2", "--set", "patience=2",
        "--grid", "global_weight=0.0,0.3",
    ])
    assert result.exit_code == 0, result.output
    table = (sweep_dir / "sweep.tsv").read_text().splitlines()
    assert table[0].startswith("point\t")
    rows = table[1:]
    assert len(rows) == 2
    assert {r.split("\t")[0] for r in rows} == {"global_weight=0.0", "global_weight=0.3"}
    vals = [float(r.split("\t")[1]) for r in rows]
    assert vals == sorted(vals, reverse=True)
    assert all(r.split("\t")[3] == "ok" for r in rows)


def test_sweep_single_point_matches_train(workspace, tmp_path):
    root, _, runner = workspace
    sweep_dir = tmp_path / "single"
    result = runner.invoke(main, [
        "sweep", "--config", str(root / "data" / "config.json"),
        "--set", f"out_dir={sweep_dir}",
        "--set", "embedding_dim=8", "--set", "batch_size=128",
        "--set", "max_epochs=3", "--set", "patience=3",
        "--grid", "seed=5",
    ])
    assert result.exit_code == 0, result.output
    run_metrics = (workspace[1] / "metrics.tsv").read_text()
    point_metrics = (sweep_dir / "point_0000" / "metrics.tsv").read_text()
    assert point_metrics == run_metrics


def test_diagnose_rows(workspace, tmp_path):
    root, _, runner = workspace
    diag_dir = tmp_path / "diag"
    result = runner.invoke(main, [
        "diagnose", "--config", str(root / "data" / "config.json"),
        "--set", f"out_dir={diag_dir}",
        "--set", "embedding_dim=8", "--set", "batch_size=128",
        "--epochs", "1", "--users", "2",
    ])
    assert result.exit_code == 0, result.output
    lines = (diag_dir / "conflict.tsv").read_text().splitlines()
    assert lines[0] == "epoch\tuser\topposite_ratio"
    assert len(lines) == 3  # header + epochs * users
    for line in lines[1:]:
        _epoch, _user, ratio = line.split("\t")
        if ratio != "NA":
            assert 0.0 <= float(ratio) <= 1.0
