"""End-to-end detection: profile users, learn a metric, cluster, label.

The pipeline stages are: fit the factor model to ratings, fit the sentiment
scorer to reviews, compute per-interaction rating and sentiment scores,
profile users by their score gaps into a candidate set, learn the attention
metric from candidate-anchored triplets, then run seeded 2-means in that
metric and call the candidate-heavy cluster malicious.  When the candidate
set is too small for metric learning the pipeline degrades to reporting the
candidate set itself.
"""

from __future__ import annotations

import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .config import RunConfig
from .data import LABEL_NORMAL, LABEL_PMU, Dataset
from .errors import DataError, SamplingError
from .lfm import FactorModel, rating_scores, train_lfm
from .metric import (MetricModel, distance, init_metric, profile_vector,
                     train_mlc)
from .profiling import CandidateSet, candidate_set, gap_vectors
from .sentiment import (SentimentModel, build_vocab, create_sentiment_model,
                        score_dataset, train_sentiment)


@dataclass
class DetectionReport:
    labels: list[str]                 # per-user, aligned with user ids
    candidate_set: list[int]
    final_set: list[int]
    mode: str                         # "full" or "mup-only"
    config: dict
    kmeans_iterations: int = 0
    kmeans_objective: list[float] = field(default_factory=list)
    confusion: dict | None = None     # tp/fn/fp/tn vs ground truth, if known
    sen: float | None = None
    spe: float | None = None
    f_score: float | None = None

    def to_json(self) -> str:
        payload = {
            "labels": self.labels,
            "candidate_set": self.candidate_set,
            "final_set": self.final_set,
            "mode": self.mode,
            "config": self.config,
            "kmeans_iterations": self.kmeans_iterations,
            "kmeans_objective": [round(x, 9) for x in self.kmeans_objective],
            "confusion": self.confusion,
            "sen": self.sen,
            "spe": self.spe,
            "f_score": self.f_score,
        }
        return json.dumps(payload, sort_keys=True, indent=2)

    def save(self, path_json, path_csv=None, user_ids=None):
        with open(path_json, "w", encoding="utf-8") as fh:
            fh.write(self.to_json() + "\n")
        if path_csv:
            with open(path_csv, "w", encoding="utf-8") as fh:
                fh.write("user,label\n")
                for u, lab in enumerate(self.labels):
                    key = user_ids[u] if user_ids else u
                    fh.write(f"{key},{lab}\n")


def kmeans_metric(Z: np.ndarray, model: MetricModel,
                  seeds: tuple[np.ndarray, np.ndarray],
                  max_iter: int = 100, tol: float = 1e-9,
                  threads: int = 1) -> tuple[np.ndarray, dict]:
    """Two-cluster Lloyd iteration under the learned metric.

    Assignment uses the metric distance; centroid updates are arithmetic
    means of the raw profile vectors.  Iteration stops when assignments
    repeat, when max_iter is hit, or early if a centroid update would raise
    the objective (the previous assignment is kept, which keeps the recorded
    objective non-increasing).  Empty clusters re-seed to the point farthest
    from the surviving centroid.
    """
    c0 = np.array(seeds[0], dtype=float)
    c1 = np.array(seeds[1], dtype=float)
    if np.allclose(c0, c1):
        raise DataError("initial centroids must be distinct")
    m = Z.shape[0]

    def assign_against(cent0, cent1):
        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                d0 = np.fromiter(pool.map(lambda z: distance(z, cent0, model), Z),
                                 dtype=float, count=m)
                d1 = np.fromiter(pool.map(lambda z: distance(z, cent1, model), Z),
                                 dtype=float, count=m)
        else:
            d0 = np.array([distance(z, cent0, model) for z in Z])
            d1 = np.array([distance(z, cent1, model) for z in Z])
        a = (d1 < d0).astype(int)   # ties go to cluster 0
        obj = float(np.where(a == 0, d0, d1).sum())
        return a, obj

    prev_assign = None
    prev_obj = np.inf
    history: list[float] = []
    iterations = 0
    for it in range(max_iter):
        assign, obj = assign_against(c0, c1)
        iterations = it + 1
        if prev_assign is not None and np.array_equal(assign, prev_assign):
            break
        if obj > prev_obj + tol:
            assign = prev_assign
            break
        history.append(obj)
        prev_assign, prev_obj = assign, obj
        for cid in (0, 1):
            members = np.flatnonzero(assign == cid)
            if members.size:
                target = Z[members].mean(axis=0)
            else:
                other = c1 if cid == 0 else c0
                far = int(np.argmax([distance(z, other, model) for z in Z]))
                target = Z[far].copy()
            if cid == 0:
                c0 = target
            else:
                c1 = target
    return prev_assign if prev_assign is not None else assign, {
        "iterations": iterations,
        "objective": history,
    }


def label_pmu(assignments: np.ndarray, u_cmu: set[int]) -> set[int]:
    """Pick the cluster holding more candidates; ties favor the smaller one.

    An empty candidate set yields an empty detection.
    """
    if not u_cmu:
        return set()
    assignments = np.asarray(assignments)
    counts = [0, 0]
    for u in u_cmu:
        counts[int(assignments[u])] += 1
    if counts[0] != counts[1]:
        winner = 0 if counts[0] > counts[1] else 1
    else:
        sizes = [int((assignments == c).sum()) for c in (0, 1)]
        if sizes[0] != sizes[1]:
            winner = 0 if sizes[0] < sizes[1] else 1
        else:
            winner = 0
    return {int(u) for u in np.flatnonzero(assignments == winner)}


@dataclass
class PipelineState:
    """Everything the expensive front half of the pipeline produces."""
    factor: FactorModel
    sentiment: SentimentModel
    s_r: np.ndarray
    s_v: np.ndarray


def run_prefix(ds: Dataset, cfg: RunConfig, workdir: str | None = None,
               resume: bool = False) -> PipelineState:
    """Train the factor and sentiment models and score every interaction.

    With a workdir the stage outputs are checkpointed; resume loads them
    instead of recomputing.
    """
    cfg.validate()
    factor_path = workdir and os.path.join(workdir, "factor.npz")
    sent_path = workdir and os.path.join(workdir, "sentiment.npz")
    scores_path = workdir and os.path.join(workdir, "scores.npz")

    if resume and factor_path and os.path.exists(factor_path):
        factor = FactorModel.load(factor_path)
    else:
        factor = train_lfm(ds, p=cfg.p, lr=cfg.lfm_lr, epochs=cfg.lfm_epochs,
                           l2=cfg.lfm_l2, seed=cfg.stage_seed("lfm"),
                           holdout_frac=cfg.lfm_holdout)
        if factor_path:
            factor.save(factor_path)

    if resume and sent_path and os.path.exists(sent_path):
        smodel = SentimentModel.load(sent_path)
    else:
        vocab = build_vocab(ds, min_count=cfg.min_count)
        smodel = create_sentiment_model(vocab, d_w=cfg.d_w, d_h=cfg.d_h,
                                        seed=cfg.stage_seed("sentiment"),
                                        max_sentences=cfg.max_sentences,
                                        max_words=cfg.max_words)
        train_sentiment(smodel, ds, lr=cfg.sent_lr, epochs=cfg.sent_epochs,
                        seed=cfg.stage_seed("sentiment"),
                        batch_size=cfg.sent_batch)
        if sent_path:
            smodel.save(sent_path)

    if resume and scores_path and os.path.exists(scores_path):
        blob = np.load(scores_path)
        s_r, s_v = blob["s_r"], blob["s_v"]
    else:
        s_r = rating_scores(factor, ds)
        s_v = score_dataset(smodel, ds)
        if scores_path:
            np.savez(scores_path, s_r=s_r, s_v=s_v)
    return PipelineState(factor, smodel, s_r, s_v)


def profile_stage(ds: Dataset, state: PipelineState, cfg: RunConfig
                  ) -> tuple[CandidateSet, np.ndarray]:
    """Candidate set and the m x (p+k) profile matrix."""
    cands = candidate_set(ds, state.s_r, state.s_v, cfg.alpha_g, cfg.theta_mu)
    gvs = gap_vectors(ds, state.s_r, state.s_v, cfg.k)
    Z = np.stack([
        profile_vector(state.factor.P[u], gvs[u].g_hat, user_id=u,
                       p=cfg.p, k=cfg.k).z
        for u in range(ds.m)
    ])
    return cands, Z


def run_detection(ds: Dataset, state: PipelineState, cfg: RunConfig,
                  workdir: str | None = None) -> DetectionReport:
    """Back half of the pipeline: profile, learn the metric, cluster, label."""
    cands, Z = profile_stage(ds, state, cfg)
    snapshot = cfg.to_dict()
    labels = [LABEL_NORMAL] * ds.m

    degraded = len(cands.members) < 2 or len(cands.members) >= ds.m
    metric_model = None
    if not degraded:
        metric_model = init_metric(cfg.metric_form, cfg.p, cfg.k,
                                   seed=cfg.stage_seed("mlc"), c=cfg.c,
                                   lam=cfg.lam, attention=cfg.attention)
        try:
            train_mlc(Z, cands.members, metric_model, lr=cfg.mlc_lr,
                      epochs=cfg.mlc_epochs, l2=cfg.mlc_l2,
                      seed=cfg.stage_seed("mlc"), per_anchor=cfg.per_anchor,
                      project_every=cfg.project_every)
        except SamplingError:
            degraded = True
            metric_model = None

    if degraded:
        final = set(cands.members)
        for u in final:
            labels[u] = LABEL_PMU
        report = DetectionReport(labels, sorted(cands.members), sorted(final),
                                 "mup-only", snapshot)
    else:
        cand_list = sorted(cands.members)
        rest = [u for u in range(ds.m) if u not in cands.members]
        seed0 = Z[cand_list].mean(axis=0)
        seed1 = Z[rest].mean(axis=0)
        assignments, info = kmeans_metric(Z, metric_model, (seed0, seed1),
                                          max_iter=cfg.kmeans_max_iter,
                                          tol=cfg.kmeans_tol,
                                          threads=cfg.threads)
        final = label_pmu(assignments, cands.members)
        for u in final:
            labels[u] = LABEL_PMU
        report = DetectionReport(labels, cand_list, sorted(final), "full",
                                 snapshot, info["iterations"],
                                 info["objective"])
        if workdir and metric_model is not None:
            metric_model.save(os.path.join(workdir, "metric.npz"))

    if ds.labels is not None:
        tp = sum(1 for u in range(ds.m)
                 if ds.labels[u] == LABEL_PMU and labels[u] == LABEL_PMU)
        fn = sum(1 for u in range(ds.m)
                 if ds.labels[u] == LABEL_PMU and labels[u] == LABEL_NORMAL)
        fp = sum(1 for u in range(ds.m)
                 if ds.labels[u] == LABEL_NORMAL and labels[u] == LABEL_PMU)
        tn = ds.m - tp - fn - fp
        report.confusion = {"tp": tp, "fn": fn, "fp": fp, "tn": tn}
        sen = tp / (tp + fn) if tp + fn else None
        spe = tn / (tn + fp) if tn + fp else None
        report.sen, report.spe = sen, spe
        if sen is not None and spe is not None and (sen + spe) > 0:
            report.f_score = 2.0 * sen * spe / (sen + spe)
    if workdir:
        report.save(os.path.join(workdir, "report.json"),
                    os.path.join(workdir, "labels.csv"),
                    user_ids=ds.user_ids)
    return report


def run_mmd(ds: Dataset, cfg: RunConfig, workdir: str | None = None,
            resume: bool = False) -> DetectionReport:
    """Full detection pipeline, deterministic under the master seed."""
    if not ds.interactions:
        raise DataError("dataset has no interactions")
    if workdir:
        os.makedirs(workdir, exist_ok=True)
    state = run_prefix(ds, cfg, workdir=workdir, resume=resume)
    return run_detection(ds, state, cfg, workdir=workdir)
