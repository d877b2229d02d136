"""Detection metrics, baseline detectors, ranking evaluation, experiments.

The malicious class is the positive class throughout: sensitivity is the
share of malicious users caught, specificity the share of normal users left
alone, and the F-score their harmonic mean.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .config import RunConfig
from .data import LABEL_NORMAL, LABEL_PMU, Dataset, drop_users, split
from .detect import PipelineState, run_detection, run_prefix
from .errors import ConfigError, DataError
from .lfm import FactorModel
from .metric import init_metric
from .profiling import user_gaps
from .recommenders import train_recommender
from .seeding import child_seed


@dataclass
class Confusion:
    tp: int
    fn: int
    fp: int
    tn: int

    @property
    def total(self) -> int:
        return self.tp + self.fn + self.fp + self.tn


@dataclass
class RankingResult:
    hr: dict[int, float]
    ndcg: dict[int, float]
    records: list[tuple[int, int, int]]   # (user, item, rank of positive)
    skipped: int = 0


def confusion(predicted: dict[int, str] | list[str],
              truth: dict[int, str] | list[str]) -> Confusion:
    """Count the 2x2 table with malicious as the positive class."""
    if isinstance(predicted, list):
        predicted = dict(enumerate(predicted))
    if isinstance(truth, list):
        truth = dict(enumerate(truth))
    if set(predicted) != set(truth):
        raise DataError("predicted and truth cover different user sets")
    tp = fn = fp = tn = 0
    for u, actual in truth.items():
        detected = predicted[u]
        if actual == LABEL_PMU:
            if detected == LABEL_PMU:
                tp += 1
            else:
                fn += 1
        else:
            if detected == LABEL_PMU:
                fp += 1
            else:
                tn += 1
    return Confusion(tp, fn, fp, tn)


def sen_spe_f(conf: Confusion) -> tuple[float | None, float | None, float | None]:
    """Sensitivity, specificity and their harmonic mean.

    A zero denominator marks the metric as undefined (None) rather than 0.
    """
    sen = conf.tp / (conf.tp + conf.fn) if (conf.tp + conf.fn) else None
    spe = conf.tn / (conf.tn + conf.fp) if (conf.tn + conf.fp) else None
    f = None
    if sen is not None and spe is not None and (sen + spe) > 0:
        f = 2.0 * sen * spe / (sen + spe)
    return sen, spe, f


def f_or_zero(labels: list[str], truth: list[str]) -> float:
    """F-score against ground truth, treating undefined as 0."""
    _, _, f = sen_spe_f(confusion(labels, truth))
    return f if f is not None else 0.0


# ---------------------------------------------------------------------------
# baseline detectors


def _kmeanspp_seeds(X: np.ndarray, k: int, rng) -> np.ndarray:
    """Squared-distance weighted seeding."""
    m = X.shape[0]
    first = int(rng.integers(m))
    centers = [X[first]]
    for _ in range(1, k):
        d2 = np.min([np.sum((X - c) ** 2, axis=1) for c in centers], axis=0)
        total = d2.sum()
        if total <= 0:
            centers.append(X[int(rng.integers(m))])
            continue
        r = rng.random() * total
        idx = int(np.searchsorted(np.cumsum(d2), r))
        centers.append(X[min(idx, m - 1)])
    return np.stack(centers)


def baseline_kmeanspp(ds: Dataset, factor: FactorModel, seed: int = 0,
                      mean_gaps: np.ndarray | None = None,
                      candidates: set[int] | None = None,
                      max_iter: int = 100) -> list[str]:
    """Euclidean 2-means over user factor vectors.

    The malicious cluster is the one holding more candidate users when a
    candidate set is supplied, otherwise the one with the higher mean
    per-user gap, otherwise the smaller cluster.
    """
    if ds.m < 2:
        raise DataError("need at least 2 users to cluster")
    X = factor.P
    rng = np.random.default_rng(seed)
    centers = _kmeanspp_seeds(X, 2, rng)
    assign = np.zeros(ds.m, dtype=int)
    for _ in range(max_iter):
        d = np.stack([np.sum((X - c) ** 2, axis=1) for c in centers])
        new_assign = d.argmin(axis=0)
        if np.array_equal(new_assign, assign) and _ > 0:
            break
        assign = new_assign
        for cid in (0, 1):
            members = np.flatnonzero(assign == cid)
            if members.size:
                centers[cid] = X[members].mean(axis=0)

    if candidates:
        counts = [sum(1 for u in candidates if assign[u] == c) for c in (0, 1)]
        malicious = 0 if counts[0] > counts[1] else 1
    elif mean_gaps is not None:
        means = [mean_gaps[assign == c].mean() if (assign == c).any() else -1.0
                 for c in (0, 1)]
        malicious = int(np.argmax(means))
    else:
        sizes = [(assign == c).sum() for c in (0, 1)]
        malicious = int(np.argmin(sizes))
    return [LABEL_PMU if assign[u] == malicious else LABEL_NORMAL
            for u in range(ds.m)]


def baseline_sod(ds: Dataset, theta: float, s_v: np.ndarray) -> list[str]:
    """Threshold detector on the share of negative feedback per user.

    An interaction is negative feedback when the rating is at most 2 or the
    review sentiment score is at most 2; users at or above theta are
    flagged.  Masking-strategy users sit below sensible thresholds by
    construction, which is exactly the weakness this baseline demonstrates.
    """
    neg = [0] * ds.m
    cnt = [0] * ds.m
    for idx, it in enumerate(ds.interactions):
        cnt[it.user_id] += 1
        if it.rating <= 2 or s_v[idx] <= 2.0:
            neg[it.user_id] += 1
    return [LABEL_PMU if cnt[u] and neg[u] / cnt[u] >= theta else LABEL_NORMAL
            for u in range(ds.m)]


# ---------------------------------------------------------------------------
# ranking evaluation


def rank_eval(rec, train: Dataset, test: Dataset,
              n_list: tuple[int, ...] = (5, 15),
              negatives_per_positive: int = 99, seed: int = 0) -> RankingResult:
    """Sampled-negative ranking of each held-out positive.

    For every test interaction the positive item is ranked against
    negatives the user never touched in either split; ties rank the
    positive last, so scores are pessimistic.  Hit ratio at N counts
    positives ranked in the top N; the discounted-gain contribution is
    1/log2(rank+1) inside the top N and 0 outside.
    """
    rng = np.random.default_rng(seed)
    seen: list[set[int]] = [set() for _ in range(train.m)]
    for it in train.interactions:
        seen[it.user_id].add(it.item_id)
    for it in test.interactions:
        seen[it.user_id].add(it.item_id)
    all_items = np.arange(train.n)

    hits = {N: 0.0 for N in n_list}
    gains = {N: 0.0 for N in n_list}
    records = []
    skipped = 0
    evaluated = 0
    for it in sorted(test.interactions, key=lambda x: (x.user_id, x.item_id)):
        unseen = np.setdiff1d(all_items, sorted(seen[it.user_id] - {it.item_id}))
        unseen = unseen[unseen != it.item_id]
        if unseen.size == 0:
            skipped += 1
            continue
        if unseen.size > negatives_per_positive:
            negs = rng.choice(unseen, size=negatives_per_positive, replace=False)
        else:
            negs = unseen
        cand = np.concatenate([[it.item_id], negs])
        scores = rec.score(it.user_id, cand)
        pos_score = scores[0]
        rank = 1 + int(np.sum(scores[1:] >= pos_score))
        records.append((it.user_id, it.item_id, rank))
        evaluated += 1
        for N in n_list:
            if rank <= N:
                hits[N] += 1.0
                gains[N] += 1.0 / np.log2(rank + 1)
    denom = max(1, evaluated)
    return RankingResult(
        hr={N: hits[N] / denom for N in n_list},
        ndcg={N: gains[N] / denom for N in n_list},
        records=records, skipped=skipped,
    )


# ---------------------------------------------------------------------------
# experiments


def enhancement_experiment(ds: Dataset, detected: set[int],
                           kinds: tuple[str, ...] = ("UBCF", "IBCF", "MF-eALS", "MF-BPR"),
                           seed: int = 0,
                           n_list: tuple[int, ...] = (5, 15),
                           negatives_per_positive: int = 99,
                           ratios: tuple[float, float, float] = (0.6, 0.2, 0.2),
                           neighbors: int = 20) -> list[dict]:
    """Detected-drop versus random-drop, one row per (kind, N, arm).

    Arm "detected" removes the flagged users; arm "random" removes the same
    number of uniformly drawn users.  Both arms share recommender configs
    and evaluation seeds, so any difference comes from which users left.
    """
    rng = np.random.default_rng(child_seed(seed, "eval"))
    n_drop = len(detected)
    random_drop = set(int(u) for u in
                      rng.choice(ds.m, size=n_drop, replace=False)) if n_drop else set()
    rows = []
    for arm, dropped in (("detected", detected), ("random", random_drop)):
        reduced = drop_users(ds, dropped) if dropped else ds
        train, _val, test = split(reduced, ratios, child_seed(seed, "split"))
        for kind in kinds:
            rec = train_recommender(kind, train, seed=child_seed(seed, "recommender"),
                                    neighbors=neighbors)
            result = rank_eval(rec, train, test, n_list=n_list,
                               negatives_per_positive=negatives_per_positive,
                               seed=child_seed(seed, "eval"))
            for N in n_list:
                rows.append({
                    "kind": kind, "arm": arm, "n": N, "seed": seed,
                    "dropped": n_drop,
                    "hr": result.hr[N], "ndcg": result.ndcg[N],
                })
    return rows


def ablation_suite(ds: Dataset, cfg: RunConfig, seed: int | None = None,
                   state: PipelineState | None = None,
                   forms: tuple[str, ...] = ("E", "D", "F", "R")) -> list[dict]:
    """Detection quality per metric form, with and without attention.

    The factor and sentiment stages are shared across all cells; only the
    metric learning and clustering rerun.  Needs ground-truth labels.
    """
    if ds.labels is None:
        raise ConfigError("ablation needs a labeled dataset")
    if seed is not None:
        cfg = replace(cfg, seed=seed)
    if state is None:
        state = run_prefix(ds, cfg)
    rows = []
    for form in forms:
        for attention in (True, False):
            cell = replace(cfg, metric_form=form, attention=attention)
            report = run_detection(ds, state, cell)
            params = init_metric(form, cfg.p, cfg.k).parameter_count()
            rows.append({
                "form": form,
                "attention": attention,
                "seed": cfg.seed,
                "mode": report.mode,
                "parameters": params,
                "sen": report.sen, "spe": report.spe,
                "f": report.f_score if report.f_score is not None else 0.0,
            })
    return rows


def sweep(ds: Dataset, cfg: RunConfig, alphas=None, thetas=None,
          state: PipelineState | None = None) -> list[dict]:
    """F-score across gap-threshold and fraction-threshold grids.

    Shares the expensive pipeline prefix across every grid point.
    """
    if ds.labels is None:
        raise ConfigError("sweep needs a labeled dataset")
    if alphas is None:
        alphas = [1.0, 1.5, 2.0, 2.5, 3.0, 3.5, 4.0, 4.5]
    if thetas is None:
        thetas = [round(0.1 * j, 1) for j in range(1, 11)]
    if state is None:
        state = run_prefix(ds, cfg)
    rows = []
    for alpha in alphas:
        report = run_detection(ds, state, replace(cfg, alpha_g=float(alpha)))
        rows.append({"param": "alpha_g", "value": float(alpha), "seed": cfg.seed,
                     "mode": report.mode,
                     "candidates": len(report.candidate_set),
                     "f": report.f_score if report.f_score is not None else 0.0})
    for theta in thetas:
        report = run_detection(ds, state, replace(cfg, theta_mu=float(theta)))
        rows.append({"param": "theta_mu", "value": float(theta), "seed": cfg.seed,
                     "mode": report.mode,
                     "candidates": len(report.candidate_set),
                     "f": report.f_score if report.f_score is not None else 0.0})
    return rows


def mean_user_gaps(ds: Dataset, s_r: np.ndarray, s_v: np.ndarray) -> np.ndarray:
    """Per-user mean sentiment gap; 0 for users with no interactions."""
    out = np.zeros(ds.m)
    for u, gaps in enumerate(user_gaps(ds, s_r, s_v)):
        if gaps.size:
            out[u] = gaps.mean()
    return out
