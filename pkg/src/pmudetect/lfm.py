"""Latent factor model over explicit ratings.

Plain rank-p factorization trained by per-interaction SGD on squared error.
The rating score for a pair is the clamped inner product of the user and
item vectors, so it lives on the same 1..5 scale as review sentiment.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Dataset
from .errors import TrainingError


@dataclass
class FactorModel:
    P: np.ndarray           # m x p user vectors
    Q: np.ndarray           # n x p item vectors
    p: int
    train_loss_history: list[float] | None = None
    val_loss_history: list[float] | None = None
    best_epoch: int = -1

    def save(self, path):
        np.savez(path, P=self.P, Q=self.Q, p=np.array([self.p]),
                 best_epoch=np.array([self.best_epoch]))

    @classmethod
    def load(cls, path) -> "FactorModel":
        blob = np.load(path)
        return cls(P=blob["P"], Q=blob["Q"], p=int(blob["p"][0]),
                   best_epoch=int(blob["best_epoch"][0]))


def train_lfm(train: Dataset, p: int = 32, lr: float = 0.01,
              epochs: int = 200, l2: float = 1e-4, seed: int = 0,
              holdout_frac: float = 0.05) -> FactorModel:
    """Fit user and item vectors by SGD, keeping the best held-out snapshot.

    A small fraction of interactions is held out of the SGD updates; the
    returned P, Q are the epoch snapshot with the lowest held-out squared
    error.  Entries start at uniform(-0.01, 0.01) under the seed, and the
    per-interaction update order is part of the deterministic contract.
    """
    if not train.interactions:
        raise TrainingError("empty training set")
    rng = np.random.default_rng(seed)
    users = np.array([it.user_id for it in train.interactions])
    items = np.array([it.item_id for it in train.interactions])
    ratings = np.array([float(it.rating) for it in train.interactions])
    count = len(ratings)

    P = rng.uniform(-0.01, 0.01, size=(train.m, p))
    Q = rng.uniform(-0.01, 0.01, size=(train.n, p))

    n_hold = int(round(holdout_frac * count))
    hold_idx = rng.choice(count, size=n_hold, replace=False) if n_hold else np.array([], dtype=int)
    hold_mask = np.zeros(count, dtype=bool)
    hold_mask[hold_idx] = True
    fit_idx = np.flatnonzero(~hold_mask)
    if fit_idx.size == 0:
        fit_idx = np.arange(count)
        hold_idx = np.array([], dtype=int)

    def val_loss() -> float:
        if hold_idx.size == 0:
            return float("nan")
        pred = np.einsum("ij,ij->i", P[users[hold_idx]], Q[items[hold_idx]])
        return float(np.mean((pred - ratings[hold_idx]) ** 2))

    best_val = np.inf
    best = (P.copy(), Q.copy())
    best_epoch = -1
    train_hist: list[float] = []
    val_hist: list[float] = []
    shrink = 1.0 - lr * 2.0 * l2
    for epoch in range(epochs):
        order = rng.permutation(fit_idx.size)
        sq_sum = 0.0
        with np.errstate(over="ignore", invalid="ignore"):
            for j in order:
                idx = fit_idx[j]
                u, i, r = users[idx], items[idx], ratings[idx]
                pu = P[u]
                qi = Q[i]
                e = pu @ qi - r
                sq_sum += e * e
                g = lr * 2.0 * e
                P[u] = pu * shrink - g * qi
                Q[i] = qi * shrink - g * pu
        epoch_loss = sq_sum / max(1, fit_idx.size)
        if not np.isfinite(epoch_loss):
            raise TrainingError(f"loss diverged at epoch {epoch}")
        train_hist.append(epoch_loss)
        v = val_loss()
        val_hist.append(v)
        if hold_idx.size == 0 or v <= best_val:
            best_val = v if hold_idx.size else np.inf
            best = (P.copy(), Q.copy())
            best_epoch = epoch
    return FactorModel(best[0], best[1], p, train_hist, val_hist, best_epoch)


def rating_score(model: FactorModel, u: int, i: int) -> float:
    """Clamped inner product p_u . q_i, on the 1..5 rating scale."""
    if not (0 <= u < model.P.shape[0]):
        raise IndexError(f"user {u} out of range")
    if not (0 <= i < model.Q.shape[0]):
        raise IndexError(f"item {i} out of range")
    return float(np.clip(model.P[u] @ model.Q[i], 1.0, 5.0))


def rating_scores(model: FactorModel, data: Dataset) -> np.ndarray:
    """Clamped scores for every interaction, aligned with data.interactions."""
    users = np.array([it.user_id for it in data.interactions], dtype=int)
    items = np.array([it.item_id for it in data.interactions], dtype=int)
    if len(users) == 0:
        return np.zeros(0)
    dots = np.einsum("ij,ij->i", model.P[users], model.Q[items])
    return np.clip(dots, 1.0, 5.0)


def lfm_loss(model: FactorModel, data: Dataset) -> float:
    """Sum of squared errors of the un-clamped dot product, no penalty."""
    total = 0.0
    for it in data.interactions:
        e = model.P[it.user_id] @ model.Q[it.item_id] - it.rating
        total += e * e
    return float(total)


def interaction_gradient(pu: np.ndarray, qi: np.ndarray, r: float
                         ) -> tuple[np.ndarray, np.ndarray]:
    """Analytic gradient of (pu.qi - r)^2 with respect to pu and qi."""
    e = pu @ qi - r
    return 2.0 * e * qi, 2.0 * e * pu
