"""Sentiment-gap profiling and the candidate malicious-user set.

A user's gap on one interaction is the absolute difference between the
rating-side score and the review-side score.  Users whose gaps exceed the
gap threshold on a large enough fraction of their interactions form the
candidate set that seeds metric learning and clustering downstream.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .data import Dataset
from .errors import DataError


@dataclass
class GapVector:
    user_id: int
    g_hat: np.ndarray   # length-k, sorted descending, zero padded
    support: int        # number of real (unpadded) entries


@dataclass
class CandidateSet:
    members: set[int]
    alpha_g: float
    theta_mu: float


def sentiment_gap(s_r: float, s_v: float) -> float:
    """Absolute difference of the two per-interaction scores."""
    if not (1.0 <= s_r <= 5.0) or not (1.0 <= s_v <= 5.0):
        raise DataError(f"scores must lie in [1, 5], got ({s_r}, {s_v})")
    return abs(s_r - s_v)


def gap_vector(gaps, k: int) -> GapVector:
    """Fixed-length profile of a user's gaps.

    Sorted descending, truncated to k, zero padded; the largest gaps carry
    the signal, padding encodes absent evidence.  Empty input yields the
    all-zero vector with support 0.
    """
    if k < 1:
        raise DataError("k must be >= 1")
    arr = np.sort(np.asarray(list(gaps), dtype=float))[::-1]
    support = min(len(arr), k)
    out = np.zeros(k)
    out[:support] = arr[:k]
    return GapVector(-1, out, support)


def user_gaps(ds: Dataset, s_r: np.ndarray, s_v: np.ndarray) -> list[np.ndarray]:
    """Per-user arrays of interaction gaps, aligned with user ids."""
    if len(s_r) != len(ds.interactions) or len(s_v) != len(ds.interactions):
        raise DataError("score arrays must align with interactions")
    gaps = np.abs(np.asarray(s_r) - np.asarray(s_v))
    out: list[list[float]] = [[] for _ in range(ds.m)]
    for idx, it in enumerate(ds.interactions):
        out[it.user_id].append(float(gaps[idx]))
    return [np.array(g) for g in out]


def gap_vectors(ds: Dataset, s_r: np.ndarray, s_v: np.ndarray, k: int
                ) -> list[GapVector]:
    vectors = []
    for u, gaps in enumerate(user_gaps(ds, s_r, s_v)):
        gv = gap_vector(gaps, k)
        gv.user_id = u
        vectors.append(gv)
    return vectors


def candidate_set(ds: Dataset, s_r: np.ndarray, s_v: np.ndarray,
                  alpha_g: float, theta_mu: float) -> CandidateSet:
    """Users whose large-gap fraction reaches theta_mu.

    The fraction counts gaps >= alpha_g over the user's real interactions;
    a user with no interactions is never a candidate.
    """
    members = set()
    for u, gaps in enumerate(user_gaps(ds, s_r, s_v)):
        if gaps.size == 0:
            continue
        frac = float(np.count_nonzero(gaps >= alpha_g)) / gaps.size
        if frac >= theta_mu:
            members.add(u)
    return CandidateSet(members, alpha_g, theta_mu)


def export_gap_vectors(path, vectors: list[GapVector], candidates: CandidateSet):
    """Audit CSV: one row per user with the gap vector and candidate flag."""
    k = len(vectors[0].g_hat) if vectors else 0
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["user", "support", "candidate"] + [f"g{j}" for j in range(k)])
        for gv in vectors:
            writer.writerow([gv.user_id, gv.support,
                             int(gv.user_id in candidates.members)]
                            + [f"{x:.6f}" for x in gv.g_hat])
