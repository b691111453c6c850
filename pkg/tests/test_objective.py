import numpy as np
import pytest

import lgmrec.objective as obj
from lgmrec.autograd import Tape, finite_difference_check
from lgmrec.errors import ConfigError
from lgmrec.objective import TripleBatch

LN2 = 0.6931471805599453


def make_batch(users, pos, neg):
    return TripleBatch(
        users=np.asarray(users, dtype=np.int64),
        pos_items=np.asarray(pos, dtype=np.int64),
        neg_items=np.asarray(neg, dtype=np.int64),
    )


class TestFuse:
    def _parts(self, rng, n=6, d=3):
        t = Tape()
        collab = t.constant(rng.standard_normal((n, d)))
        modal = {m: t.constant(rng.standard_normal((n, d))) for m in ("v", "x")}
        glob = t.constant(rng.standard_normal((n, d)))
        return t, collab, modal, glob

    def test_zero_alpha_drops_global_numerically(self, rng):
        t, collab, modal, glob = self._parts(rng)
        out = obj.fuse(collab, modal, glob, 0.0)
        ref = collab.value.copy()
        for m in modal.values():
            ref += m.value / np.linalg.norm(m.value, axis=1, keepdims=True)
        np.testing.assert_allclose(out.value, ref, atol=1e-13)

    def test_collab_only_is_exact_identity(self, rng):
        t, collab, modal, glob = self._parts(rng)
        out = obj.fuse(collab, {}, None, 0.3, include_modal=False, include_global=False)
        assert np.array_equal(out.value, collab.value)

    def test_recomposition(self, rng):
        t, collab, modal, glob = self._parts(rng)
        alpha = 0.7
        out = obj.fuse(collab, modal, glob, alpha)
        recomposed = out.value - collab.value
        for m in modal.values():
            recomposed -= m.value / np.linalg.norm(m.value, axis=1, keepdims=True)
        recomposed -= alpha * glob.value / np.linalg.norm(glob.value, axis=1, keepdims=True)
        np.testing.assert_allclose(recomposed, np.zeros_like(recomposed), atol=1e-12)

    def test_alpha_term_is_linear_in_alpha(self, rng):
        t, collab, modal, glob = self._parts(rng)
        base = obj.fuse(collab, modal, glob, 0.0).value
        single = obj.fuse(collab, modal, glob, 0.4).value - base
        double = obj.fuse(collab, modal, glob, 0.8).value - base
        np.testing.assert_allclose(double, 2.0 * single, atol=1e-12)

    def test_all_ablated_rejected(self, rng):
        t, collab, modal, glob = self._parts(rng)
        with pytest.raises(ConfigError):
            obj.fuse(collab, {}, None, 0.0, include_collab=False, include_modal=False,
                     include_global=False)


class TestScore:
    def test_orthogonal_rows(self):
        e = np.array([[1.0, 0.0], [0.0, 1.0]])
        assert obj.score(e, 1, 0, 0) == 0.0

    def test_identical_unit_rows(self):
        e = np.array([[0.6, 0.8], [0.6, 0.8]])
        assert obj.score(e, 1, 0, 0) == pytest.approx(1.0, abs=1e-15)

    def test_matches_dot_loop(self, rng):
        e = rng.standard_normal((7, 4))
        for user in range(3):
            for item in range(4):
                expected = sum(e[user, k] * e[3 + item, k] for k in range(4))
                assert obj.score(e, 3, user, item) == pytest.approx(expected, rel=1e-12)

    def test_out_of_range(self, rng):
        e = rng.standard_normal((5, 2))
        with pytest.raises(IndexError):
            obj.score(e, 2, 2, 0)
        with pytest.raises(IndexError):
            obj.score(e, 2, 0, 3)


class TestBprLoss:
    def test_equal_scores_give_ln2(self, rng):
        t = Tape()
        e = np.ones((3, 2))  # every score identical
        fused = t.constant(e)
        loss = obj.bpr_loss(fused, make_batch([0], [0], [1]), 1, 0.0, {})
        np.testing.assert_allclose(loss.item(), LN2, atol=1e-12)

    def test_saturated_margin_vanishes(self):
        t = Tape()
        e = np.array([[5.0], [5.0], [1.0]])  # pos score 25, neg score 5
        fused = t.constant(e)
        loss = obj.bpr_loss(fused, make_batch([0], [0], [1]), 1, 0.0, {})
        assert loss.item() < 1e-8

    def test_batch_is_summed(self, rng):
        t = Tape()
        fused = t.constant(np.ones((4, 2)))
        loss = obj.bpr_loss(fused, make_batch([0, 0, 0], [0, 1, 2], [1, 2, 0]), 1, 0.0, {})
        np.testing.assert_allclose(loss.item(), 3 * LN2, atol=1e-12)

    def test_positive_and_monotone_in_margin(self):
        margins = np.linspace(-4, 4, 17)
        losses = []
        for m in margins:
            t = Tape()
            e = np.array([[1.0], [m / 2 + 1.0], [1.0 - m / 2]])
            loss = obj.bpr_loss(t.constant(e), make_batch([0], [0], [1]), 1, 0.0, {})
            losses.append(loss.item())
        assert all(v > 0 for v in losses)
        assert all(a > b for a, b in zip(losses, losses[1:]))

    def test_gradient_matches_finite_differences(self, rng):
        batch = make_batch([0, 1, 0], [0, 2, 1], [2, 0, 2])
        arrays = {"e": rng.standard_normal((5, 3))}

        def loss_and_grad(params):
            t = Tape()
            fused = t.leaf(params["e"])
            loss = obj.bpr_loss(fused, batch, 2, 0.1, {"id_embeddings": fused})
            return loss.item(), {"e": t.backward(loss)[fused]}

        assert finite_difference_check(loss_and_grad, arrays) < 1e-6

    def test_empty_batch_rejected(self, rng):
        t = Tape()
        with pytest.raises(ValueError):
            obj.bpr_loss(t.constant(np.ones((2, 2))), make_batch([], [], []), 1, 0.0, {})


class TestTotalLoss:
    def test_zero_weight_is_bpr(self, rng):
        t = Tape()
        bpr = t.constant(np.asarray(2.5))
        hcl = t.constant(np.asarray(1.0))
        out = obj.total_loss(bpr, hcl, hcl, 0.0)
        assert out.item() == 2.5

    def test_recomposition_exact(self, rng):
        t = Tape()
        bpr = t.constant(np.asarray(1.75))
        hu = t.constant(np.asarray(0.5))
        hi = t.constant(np.asarray(0.25))
        out = obj.total_loss(bpr, hu, hi, 1e-4)
        assert abs(out.item() - (1.75 + 1e-4 * 0.75)) < 1e-15

    def test_missing_contrastive_terms(self, rng):
        t = Tape()
        bpr = t.constant(np.asarray(3.0))
        assert obj.total_loss(bpr, None, None, 1e-4).item() == 3.0


def test_ranking_invariant_under_rotation(rng):
    """A shared orthogonal transform of all embedding rows keeps every user's
    item ranking (scores are pairwise inner products)."""
    num_users, num_items, d = 4, 9, 5
    e = rng.standard_normal((num_users + num_items, d))
    q, _ = np.linalg.qr(rng.standard_normal((d, d)))
    rotated = e @ q
    for user in range(num_users):
        scores = e[num_users:] @ e[user]
        scores_rot = rotated[num_users:] @ rotated[user]
        np.testing.assert_array_equal(np.argsort(-scores), np.argsort(-scores_rot))
