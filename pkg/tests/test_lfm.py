import numpy as np
import pytest

from pmudetect.data import Dataset, Interaction
from pmudetect.errors import TrainingError
from pmudetect.lfm import (FactorModel, interaction_gradient, lfm_loss,
                           rating_score, rating_scores, train_lfm)


def one_cell(rating=3):
    return Dataset(1, 1, [Interaction(0, 0, rating, "fine product.")])


class TestTrain:
    def test_single_interaction_closed_form(self):
        # one factor, one rating: the fit must approach the rating itself
        model = train_lfm(one_cell(3), p=1, lr=0.05, epochs=500, l2=0.0,
                          seed=1, holdout_frac=0.0)
        assert model.P[0] @ model.Q[0] == pytest.approx(3.0, abs=0.05)

    def test_zero_lr_keeps_initialization(self):
        ds = one_cell(4)
        frozen = train_lfm(ds, p=3, lr=0.0, epochs=5, l2=0.0, seed=9,
                           holdout_frac=0.0)
        init = train_lfm(ds, p=3, lr=0.0, epochs=0, l2=0.0, seed=9,
                         holdout_frac=0.0)
        assert np.array_equal(frozen.P, init.P)
        assert np.array_equal(frozen.Q, init.Q)

    def test_same_seed_identical(self, small_dataset):
        a = train_lfm(small_dataset, p=8, lr=0.01, epochs=5, seed=3)
        b = train_lfm(small_dataset, p=8, lr=0.01, epochs=5, seed=3)
        assert np.array_equal(a.P, b.P) and np.array_equal(a.Q, b.Q)

    def test_divergence_names_epoch(self, small_dataset):
        with pytest.raises(TrainingError, match="epoch"):
            train_lfm(small_dataset, p=4, lr=50.0, epochs=10, seed=0)

    def test_empty_train_rejected(self):
        with pytest.raises(TrainingError):
            train_lfm(Dataset(0, 0, []), p=2)

    def test_holdout_snapshot_is_val_minimum(self, small_dataset):
        model = train_lfm(small_dataset, p=8, lr=0.01, epochs=30, seed=2,
                          holdout_frac=0.2)
        hist = model.val_loss_history
        assert model.best_epoch == int(np.argmin(hist))

    def test_train_loss_non_increasing_late(self, small_dataset):
        # 5-epoch moving average over the last half must not increase
        model = train_lfm(small_dataset, p=16, lr=0.01, epochs=60, seed=4,
                          holdout_frac=0.0)
        hist = np.array(model.train_loss_history)
        smooth = np.convolve(hist, np.ones(5) / 5, mode="valid")
        tail = smooth[len(smooth) // 2:]
        assert np.all(np.diff(tail) <= 1e-6)


class TestScore:
    def test_zero_vector_clamps_to_one(self):
        model = FactorModel(np.zeros((1, 4)), np.ones((1, 4)), 4)
        assert rating_score(model, 0, 0) == 1.0

    def test_exact_dot(self):
        P = np.array([[3.0, 0.0]])
        Q = np.array([[1.0, 0.0]])
        assert rating_score(FactorModel(P, Q, 2), 0, 0) == 3.0

    def test_matches_brute_force_dot(self, rng):
        P = rng.normal(0, 0.7, size=(5, 4))
        Q = rng.normal(0, 0.7, size=(6, 4))
        model = FactorModel(P, Q, 4)
        for u in range(5):
            for i in range(6):
                dot = sum(P[u][d] * Q[i][d] for d in range(4))
                assert rating_score(model, u, i) == pytest.approx(
                    min(5.0, max(1.0, dot)), abs=1e-12)

    def test_always_in_range(self, rng):
        P = rng.normal(0, 3.0, size=(10, 3))
        Q = rng.normal(0, 3.0, size=(10, 3))
        model = FactorModel(P, Q, 3)
        for u in range(10):
            s = rating_score(model, u, u)
            assert 1.0 <= s <= 5.0

    def test_out_of_range_index(self):
        model = FactorModel(np.zeros((2, 2)), np.zeros((2, 2)), 2)
        with pytest.raises(IndexError):
            rating_score(model, 2, 0)
        with pytest.raises(IndexError):
            rating_score(model, 0, 5)

    def test_vectorized_matches_scalar(self, small_dataset):
        model = train_lfm(small_dataset, p=4, lr=0.01, epochs=3, seed=0)
        scores = rating_scores(model, small_dataset)
        for idx in (0, 7, len(small_dataset.interactions) - 1):
            it = small_dataset.interactions[idx]
            assert scores[idx] == pytest.approx(
                rating_score(model, it.user_id, it.item_id))


class TestLoss:
    def test_perfect_reconstruction_zero(self):
        P = np.array([[1.0, 1.0]])
        Q = np.array([[2.0, 1.0]])
        ds = one_cell(3)
        assert lfm_loss(FactorModel(P, Q, 2), ds) == 0.0

    def test_unit_error(self):
        P = np.array([[2.0]])
        Q = np.array([[2.0]])
        assert lfm_loss(FactorModel(P, Q, 1), one_cell(3)) == pytest.approx(1.0)

    def test_matches_brute_force(self, rng):
        inter = [Interaction(u, i, int(rng.integers(1, 6)), "ok.")
                 for u in range(3) for i in range(4)]
        ds = Dataset(3, 4, inter)
        P = rng.normal(size=(3, 2))
        Q = rng.normal(size=(4, 2))
        model = FactorModel(P, Q, 2)
        expected = sum((P[it.user_id] @ Q[it.item_id] - it.rating) ** 2
                       for it in inter)
        assert lfm_loss(model, ds) == pytest.approx(expected, rel=1e-12)


class TestGradient:
    def test_matches_central_differences(self, rng):
        # 20 random coordinates of the per-interaction squared error
        for _ in range(20):
            p = rng.normal(size=6)
            q = rng.normal(size=6)
            r = float(rng.integers(1, 6))
            gp, gq = interaction_gradient(p, q, r)
            side = int(rng.integers(2))
            coord = int(rng.integers(6))
            h = 1e-6

            def loss(pv, qv):
                return (pv @ qv - r) ** 2

            if side == 0:
                p_hi, p_lo = p.copy(), p.copy()
                p_hi[coord] += h
                p_lo[coord] -= h
                num = (loss(p_hi, q) - loss(p_lo, q)) / (2 * h)
                ana = gp[coord]
            else:
                q_hi, q_lo = q.copy(), q.copy()
                q_hi[coord] += h
                q_lo[coord] -= h
                num = (loss(p, q_hi) - loss(p, q_lo)) / (2 * h)
                ana = gq[coord]
            assert abs(num - ana) / max(abs(num), abs(ana), 1e-8) < 1e-4
