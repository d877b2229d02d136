"""Recommendation models used by the enhancement experiment.

Four classics behind one tiny interface: user-based and item-based
neighborhood models with cosine similarity, explicit-rating alternating
least squares, and pairwise ranking factors trained on sampled negatives.
``score(u, items)`` returns ranking scores; higher means more recommended.
"""

from __future__ import annotations

import numpy as np

from .data import Dataset
from .errors import ConfigError, TrainingError

KINDS = ("UBCF", "IBCF", "MF-eALS", "MF-BPR")


def _cosine_rows(M: np.ndarray) -> np.ndarray:
    """Row-by-row cosine similarity with zeroed diagonal."""
    norms = np.linalg.norm(M, axis=1)
    safe = np.where(norms > 0, norms, 1.0)
    unit = M / safe[:, None]
    sim = unit @ unit.T
    np.fill_diagonal(sim, 0.0)
    return sim


class UserCF:
    """Neighborhood model over user rating vectors."""

    def __init__(self, neighbors: int = 20):
        self.neighbors = neighbors

    def fit(self, train: Dataset):
        self.R = train.rating_matrix()
        self.sim = _cosine_rows(self.R)
        self.global_mean = self.R[self.R > 0].mean() if (self.R > 0).any() else 3.0
        return self

    def score(self, u: int, items: np.ndarray) -> np.ndarray:
        sims = self.sim[u]
        out = np.empty(len(items))
        for idx, i in enumerate(items):
            raters = np.flatnonzero(self.R[:, i] > 0)
            if raters.size == 0:
                out[idx] = 0.0
                continue
            s = sims[raters]
            top = raters[np.argsort(-s, kind="stable")[: self.neighbors]]
            w = sims[top]
            denom = np.abs(w).sum()
            out[idx] = (w @ self.R[top, i]) / denom if denom > 1e-12 else 0.0
        return out


class ItemCF:
    """Neighborhood model over item rating vectors."""

    def __init__(self, neighbors: int = 20):
        self.neighbors = neighbors

    def fit(self, train: Dataset):
        self.R = train.rating_matrix()
        self.sim = _cosine_rows(self.R.T)
        return self

    def score(self, u: int, items: np.ndarray) -> np.ndarray:
        rated = np.flatnonzero(self.R[u] > 0)
        out = np.empty(len(items))
        for idx, i in enumerate(items):
            if rated.size == 0:
                out[idx] = 0.0
                continue
            s = self.sim[i, rated]
            top = np.argsort(-s, kind="stable")[: self.neighbors]
            w = s[top]
            denom = np.abs(w).sum()
            out[idx] = (w @ self.R[u, rated[top]]) / denom if denom > 1e-12 else 0.0
        return out


class AlsExplicit:
    """Alternating least squares on explicit ratings with L2 shrinkage."""

    def __init__(self, factors: int = 32, reg: float = 0.1, iters: int = 15,
                 seed: int = 0):
        self.factors = factors
        self.reg = reg
        self.iters = iters
        self.seed = seed

    def fit(self, train: Dataset):
        R = train.rating_matrix()
        m, n = R.shape
        mask = R > 0
        rng = np.random.default_rng(self.seed)
        P = rng.uniform(-0.1, 0.1, size=(m, self.factors))
        Q = rng.uniform(-0.1, 0.1, size=(n, self.factors))
        eye = self.reg * np.eye(self.factors)
        for _ in range(self.iters):
            for u in range(m):
                idx = np.flatnonzero(mask[u])
                if idx.size == 0:
                    continue
                Qi = Q[idx]
                P[u] = np.linalg.solve(Qi.T @ Qi + eye, Qi.T @ R[u, idx])
            for i in range(n):
                idx = np.flatnonzero(mask[:, i])
                if idx.size == 0:
                    continue
                Pu = P[idx]
                Q[i] = np.linalg.solve(Pu.T @ Pu + eye, Pu.T @ R[idx, i])
        if not (np.isfinite(P).all() and np.isfinite(Q).all()):
            raise TrainingError("alternating least squares diverged")
        self.P, self.Q = P, Q
        return self

    def score(self, u: int, items: np.ndarray) -> np.ndarray:
        return self.Q[items] @ self.P[u]


class Bpr:
    """Pairwise ranking factors over implicit positives.

    Every rated item counts as a positive; negatives are sampled uniformly
    from the user's unrated items.  Updates use per-parameter adaptive
    steps, so runs are deterministic under the seed.
    """

    def __init__(self, factors: int = 32, lr: float = 0.05, reg: float = 1e-3,
                 epochs: int = 20, seed: int = 0):
        self.factors = factors
        self.lr = lr
        self.reg = reg
        self.epochs = epochs
        self.seed = seed

    def fit(self, train: Dataset):
        m, n = train.m, train.n
        rng = np.random.default_rng(self.seed)
        consumed = [set() for _ in range(m)]
        pairs = []
        for it in train.interactions:
            consumed[it.user_id].add(it.item_id)
            pairs.append((it.user_id, it.item_id))
        P = rng.uniform(-0.1, 0.1, size=(m, self.factors))
        Q = rng.uniform(-0.1, 0.1, size=(n, self.factors))
        accP = np.full_like(P, 1e-8)
        accQ = np.full_like(Q, 1e-8)
        for epoch in range(self.epochs):
            order = rng.permutation(len(pairs))
            for idx in order:
                u, i = pairs[idx]
                if len(consumed[u]) >= n:
                    continue
                j = int(rng.integers(n))
                while j in consumed[u]:
                    j = int(rng.integers(n))
                x = P[u] @ (Q[i] - Q[j])
                sig = 1.0 / (1.0 + np.exp(-x))
                coeff = sig - 1.0   # d(-ln sigmoid(x))/dx
                gP = coeff * (Q[i] - Q[j]) + self.reg * P[u]
                gQi = coeff * P[u] + self.reg * Q[i]
                gQj = -coeff * P[u] + self.reg * Q[j]
                accP[u] += gP * gP
                P[u] -= self.lr * gP / np.sqrt(accP[u])
                accQ[i] += gQi * gQi
                Q[i] -= self.lr * gQi / np.sqrt(accQ[i])
                accQ[j] += gQj * gQj
                Q[j] -= self.lr * gQj / np.sqrt(accQ[j])
            if not (np.isfinite(P).all() and np.isfinite(Q).all()):
                raise TrainingError(f"ranking model diverged at epoch {epoch}")
        self.P, self.Q = P, Q
        return self

    def score(self, u: int, items: np.ndarray) -> np.ndarray:
        return self.Q[items] @ self.P[u]


def train_recommender(kind: str, train: Dataset, seed: int = 0,
                      neighbors: int = 20, factors: int = 32):
    """Build and fit one of the four models on a training split."""
    if not train.interactions:
        raise TrainingError("empty training set")
    if kind == "UBCF":
        model = UserCF(neighbors=neighbors)
    elif kind == "IBCF":
        model = ItemCF(neighbors=neighbors)
    elif kind == "MF-eALS":
        model = AlsExplicit(factors=factors, seed=seed)
    elif kind == "MF-BPR":
        model = Bpr(factors=factors, seed=seed)
    else:
        raise ConfigError(f"unknown recommender kind {kind!r}")
    return model.fit(train)
