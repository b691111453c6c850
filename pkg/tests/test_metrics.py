import numpy as np
import pytest

from lgmrec.config import TrainConfig
from lgmrec.errors import ConfigError, RankingCutoffError
from lgmrec.metrics import (
    by_user_sets,
    evaluate,
    export_hyperedge_dependencies,
    export_lines,
    item_argmax_hyperedges,
    ndcg_at_n,
    pair_consistency,
    rank_items,
    recall_at_n,
    sparsity_group_report,
)
from lgmrec.model import ModelParams
from lgmrec.synthetic import SynthConfig, generate_synthetic_with_labels
from lgmrec.trainer import TrainContext

INV_LOG2_3 = 0.6309297535714574  # 1 / log2(3)


def embedding_for_scores(scores):
    """(1+n)xd embeddings whose user-item inner products equal `scores`."""
    scores = np.asarray(scores, dtype=np.float64)
    items = np.stack([scores, np.ones_like(scores)], axis=1)
    user = np.array([[1.0, 0.0]])
    return np.concatenate([user, items])


class TestRankItems:
    def test_forced_ordering(self):
        e = embedding_for_scores([0.1, 0.9, 0.5])
        np.testing.assert_array_equal(rank_items(e, 1, 0, set(), 2), [1, 2])

    def test_ties_break_by_item_id(self):
        e = embedding_for_scores([0.5, 0.5, 0.5, 0.5])
        np.testing.assert_array_equal(rank_items(e, 1, 0, set(), 3), [0, 1, 2])

    def test_mask_excluded(self):
        e = embedding_for_scores([0.9, 0.8, 0.7])
        np.testing.assert_array_equal(rank_items(e, 1, 0, {0}, 2), [1, 2])

    def test_matches_full_sort(self, rng):
        for _ in range(50):
            scores = rng.standard_normal(12)
            e = embedding_for_scores(scores)
            mask = set(int(i) for i in rng.choice(12, size=3, replace=False))
            got = rank_items(e, 1, 0, mask, 5)
            order = sorted(range(12), key=lambda i: (-scores[i], i))
            expected = [i for i in order if i not in mask][:5]
            np.testing.assert_array_equal(got, expected)

    def test_cutoff_exceeds_candidates(self):
        e = embedding_for_scores([0.1, 0.2, 0.3])
        with pytest.raises(RankingCutoffError):
            rank_items(e, 1, 0, {0}, 3)

    def test_user_out_of_range(self):
        e = embedding_for_scores([0.1])
        with pytest.raises(IndexError):
            rank_items(e, 1, 5, set(), 1)


def brute_force_recall(topn, relevant):
    return len(set(topn) & set(relevant)) / len(set(relevant))


def brute_force_ndcg(topn, relevant):
    relevant = set(relevant)
    dcg = sum(1.0 / np.log2(p + 2) for p, item in enumerate(topn) if item in relevant)
    idcg = sum(1.0 / np.log2(p + 2) for p in range(min(len(topn), len(relevant))))
    return dcg / idcg


class TestMetricOracles:
    def test_recall_half(self):
        assert recall_at_n([1, 2, 3], {1, 9}) == 0.5

    def test_recall_upper_bound(self):
        assert recall_at_n([1, 2, 3], {1, 2}) == 1.0

    def test_ndcg_rank_one(self):
        assert ndcg_at_n([4, 1, 2], {4}) == pytest.approx(1.0, abs=1e-15)

    def test_ndcg_rank_two_closed_form(self):
        assert ndcg_at_n([9, 4, 2], {4}) == pytest.approx(INV_LOG2_3, abs=1e-12)

    def test_random_cases_match_brute_force(self, rng):
        for _ in range(300):
            universe = int(rng.integers(5, 30))
            topn = rng.choice(universe, size=int(rng.integers(1, universe)), replace=False)
            relevant = set(
                int(x) for x in rng.choice(universe, size=int(rng.integers(1, universe)), replace=False)
            )
            assert recall_at_n(topn, relevant) == brute_force_recall(topn, relevant)
            np.testing.assert_allclose(
                ndcg_at_n(topn, relevant), brute_force_ndcg(topn, relevant), atol=1e-13
            )

    def test_empty_relevant_rejected(self):
        with pytest.raises(ValueError):
            recall_at_n([1], set())
        with pytest.raises(ValueError):
            ndcg_at_n([1], set())

    def test_range_invariant(self, rng):
        for _ in range(100):
            universe = 20
            topn = rng.choice(universe, size=10, replace=False)
            relevant = set(int(x) for x in rng.choice(universe, size=4, replace=False))
            r = recall_at_n(topn, relevant)
            n = ndcg_at_n(topn, relevant)
            assert 0.0 <= r <= 1.0 and 0.0 <= n <= 1.0

    def test_ndcg_is_one_iff_prefix_is_all_hits(self, rng):
        for _ in range(200):
            universe = 15
            topn = [int(x) for x in rng.choice(universe, size=8, replace=False)]
            relevant = set(int(x) for x in rng.choice(universe, size=int(rng.integers(1, 6)), replace=False))
            prefix = topn[: min(len(topn), len(relevant))]
            expect_one = all(item in relevant for item in prefix)
            assert (ndcg_at_n(topn, relevant) == pytest.approx(1.0, abs=1e-12)) == expect_one


class TestEvaluate:
    def _random_instance(self, rng, num_users=30, num_items=40):
        e = rng.standard_normal((num_users + num_items, 6))
        relevant = {
            u: set(int(i) for i in rng.choice(num_items, size=int(rng.integers(1, 5)), replace=False))
            for u in range(num_users)
        }
        mask = {
            u: set(int(i) for i in rng.choice(num_items, size=3, replace=False)) - relevant[u]
            for u in range(num_users)
        }
        return e, relevant, mask

    def test_perfect_model_full_recall(self):
        num_users, num_items = 4, 10
        relevant = {u: {u, u + 4} for u in range(num_users)}
        rows = [np.array([1.0 if i in relevant[u] else 0.0 for i in range(num_items)]) for u in range(num_users)]
        users = np.stack([np.eye(num_users)[u] for u in range(num_users)])
        items = np.stack([np.array([rows[u][i] for u in range(num_users)]) for i in range(num_items)])
        e = np.concatenate([users, items])
        out = evaluate(e, num_users, relevant, {}, cutoffs=(10,))
        assert out.get("recall", 10) == 1.0

    def test_invariant_to_user_iteration_order(self, rng):
        e, relevant, mask = self._random_instance(rng)
        shuffled = dict(reversed(list(relevant.items())))
        a = evaluate(e, 30, relevant, mask, cutoffs=(5, 10))
        b = evaluate(e, 30, shuffled, mask, cutoffs=(5, 10))
        assert a.values == b.values

    def test_threads_do_not_change_results(self, rng):
        e, relevant, mask = self._random_instance(rng, num_users=600)
        a = evaluate(e, 600, relevant, mask, cutoffs=(10,), threads=1)
        b = evaluate(e, 600, relevant, mask, cutoffs=(10,), threads=4)
        assert a.values == b.values

    def test_users_without_relevant_items_excluded(self, rng):
        e = rng.standard_normal((3 + 5, 4))
        relevant = {0: {1}, 1: set(), 2: {2}}
        out = evaluate(e, 3, relevant, {}, cutoffs=(3,))
        assert out.num_evaluated_users == 2

    def test_random_scores_match_analytic_recall(self, rng):
        """With random scores, expected recall@n per user is n / candidates."""
        num_users, num_items, n = 400, 60, 10
        e = rng.standard_normal((num_users + num_items, 8))
        relevant = {u: {int(i) for i in rng.choice(num_items, size=3, replace=False)} for u in range(num_users)}
        mask = {}
        out = evaluate(e, num_users, relevant, mask, cutoffs=(n,))
        expected = n / num_items
        assert abs(out.get("recall", n) - expected) < 0.03

    def test_masked_items_never_consume_slots(self):
        """A top-scoring training item is excluded, letting relevance surface."""
        e = embedding_for_scores([10.0, 0.2, 0.1])
        relevant = {0: {1}}
        unmasked = evaluate(e, 1, relevant, {}, cutoffs=(1,))
        masked = evaluate(e, 1, relevant, {0: {0}}, cutoffs=(1,))
        assert unmasked.get("recall", 1) == 0.0
        assert masked.get("recall", 1) == 1.0

    def test_orthogonal_transform_keeps_metrics(self, rng):
        e, relevant, mask = self._random_instance(rng)
        q, _ = np.linalg.qr(rng.standard_normal((6, 6)))
        a = evaluate(e, 30, relevant, mask, cutoffs=(5,))
        b = evaluate(e @ q, 30, relevant, mask, cutoffs=(5,))
        np.testing.assert_allclose(a.get("recall", 5), b.get("recall", 5), atol=1e-12)


class TestSparsityGroups:
    def test_single_bucket_equals_global(self, rng):
        e = rng.standard_normal((10 + 15, 4))
        relevant = {u: {int(rng.integers(15))} for u in range(10)}
        counts = {u: int(rng.integers(1, 50)) for u in range(10)}
        global_metrics = evaluate(e, 10, relevant, {}, cutoffs=(5,))
        reports = sparsity_group_report(e, 10, relevant, {}, counts, boundaries=[100], cutoffs=(5,))
        assert len(reports) == 2
        assert reports[0].num_users == 10
        assert reports[0].metrics.values == global_metrics.values
        assert reports[1].metrics is None

    def test_populations_partition_users(self, rng):
        e = rng.standard_normal((20 + 15, 4))
        relevant = {u: {int(rng.integers(15))} for u in range(20)}
        counts = {u: int(rng.integers(0, 60)) for u in range(20)}
        reports = sparsity_group_report(e, 20, relevant, {}, counts, boundaries=[5, 10, 20, 50])
        assert sum(r.num_users for r in reports) == 20

    def test_buckets_match_filter_oracle(self, rng):
        e = rng.standard_normal((20 + 15, 4))
        relevant = {u: {int(rng.integers(15))} for u in range(20)}
        counts = {u: int(rng.integers(0, 30)) for u in range(20)}
        boundaries = [5, 10]
        reports = sparsity_group_report(e, 20, relevant, {}, counts, boundaries=boundaries)
        edges = [(0, 5), (5, 10), (10, None)]
        for report, (lo, hi) in zip(reports, edges):
            members = [u for u in relevant if counts[u] > lo and (hi is None or counts[u] <= hi)]
            assert report.num_users == len(members)

    def test_boundaries_must_increase(self, rng):
        e = rng.standard_normal((4, 2))
        with pytest.raises(ConfigError):
            sparsity_group_report(e, 2, {0: {0}}, {}, {0: 1}, boundaries=[5, 5])


class TestDependencyExport:
    def _trained_free_setup(self, num_hyperedges):
        dataset, labels = generate_synthetic_with_labels(
            SynthConfig(num_users=10, num_items=12, interactions_per_user=5, seed=2)
        )
        cfg = TrainConfig(
            embedding_dim=6, num_hyperedges=num_hyperedges, collab_layers=1,
            modal_layers=1, hyper_layers=1,
        ).validate()
        params = ModelParams.initialize(
            dataset.num_users, dataset.num_items,
            {m: f.shape[1] for m, f in dataset.modal_features.items()},
            cfg, np.random.default_rng(4),
        )
        ctx = TrainContext.from_dataset(dataset)
        return dataset, cfg, params, ctx

    def test_single_hyperedge_degenerate(self):
        dataset, cfg, params, ctx = self._trained_free_setup(1)
        exports = export_hyperedge_dependencies(
            params, ctx.graph, ctx.features, cfg, [0, 3], by_user_sets(dataset.train)
        )
        for e in exports:
            np.testing.assert_allclose(e.hyperedge_scores, [1.0], atol=1e-15)
            for _item, edge, score in e.items:
                assert edge == 0 and score == pytest.approx(1.0, abs=1e-15)

    def test_rows_sum_to_one(self):
        dataset, cfg, params, ctx = self._trained_free_setup(5)
        exports = export_hyperedge_dependencies(
            params, ctx.graph, ctx.features, cfg, list(range(6)), by_user_sets(dataset.train)
        )
        for e in exports:
            np.testing.assert_allclose(e.hyperedge_scores.sum(), 1.0, atol=1e-12)

    def test_requires_global_module(self):
        dataset, cfg, params, ctx = self._trained_free_setup(2)
        cfg = cfg.replace(ablation="no_ghe").validate()
        with pytest.raises(ConfigError):
            export_hyperedge_dependencies(params, ctx.graph, ctx.features, cfg, [0], {})

    def test_export_lines_shape(self):
        dataset, cfg, params, ctx = self._trained_free_setup(3)
        exports = export_hyperedge_dependencies(
            params, ctx.graph, ctx.features, cfg, [1], by_user_sets(dataset.train)
        )
        lines = export_lines(exports)
        assert lines[0].startswith("user\t1\tmodality\t")
        assert any(line.startswith("item\t") for line in lines)

    def test_argmax_shapes(self):
        dataset, cfg, params, ctx = self._trained_free_setup(3)
        assign = item_argmax_hyperedges(params, ctx.graph, ctx.features, cfg)
        for m, a in assign.items():
            assert a.shape == (dataset.num_items,)
            assert a.min() >= 0 and a.max() < 3


class TestPairConsistency:
    def test_perfect_alignment(self):
        labels = np.array([0, 0, 1, 1, 2])
        assignments = np.array([5, 5, 7, 7, 1])
        assert pair_consistency(assignments, labels) == 1.0

    def test_total_disagreement(self):
        labels = np.array([0, 0, 0])
        assignments = np.array([0, 1, 2])
        assert pair_consistency(assignments, labels) == 0.0

    def test_permutation_invariant(self, rng):
        labels = rng.integers(0, 3, size=30)
        assignments = rng.integers(0, 3, size=30)
        base = pair_consistency(assignments, labels)
        permuted = (assignments + 1) % 3
        assert pair_consistency(permuted, labels) == base
