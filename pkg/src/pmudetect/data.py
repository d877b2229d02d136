"""Interaction datasets: loading, saving, synthesis, statistics, splitting.

An interaction is one (user, item, rating, review) record.  Synthetic
datasets additionally carry per-interaction ground-truth flags (is the
rating fake, is the review negative) and a per-user label (normal or pmu),
which evaluation code may read but detectors never see.
"""

from __future__ import annotations

import csv
import functools
import json
import math
import re
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError, DataError

LABEL_NORMAL = "normal"
LABEL_PMU = "pmu"

_SENTENCE_SPLIT = re.compile(r"[.!?]+")
_STRIP = re.compile(r"^[^0-9a-z]+|[^0-9a-z]+$")


@functools.lru_cache(maxsize=65536)
def tokenize(text: str) -> tuple[tuple[str, ...], ...]:
    """Split review text into sentences of lowercase word tokens.

    Sentences split on ``.!?``, words on whitespace; leading and trailing
    punctuation is stripped from each word.  Empty sentences are dropped.
    """
    sentences = []
    for raw in _SENTENCE_SPLIT.split(text.lower()):
        words = tuple(w for w in (_STRIP.sub("", t) for t in raw.split()) if w)
        if words:
            sentences.append(words)
    return tuple(sentences)


@dataclass
class Interaction:
    """One rating-plus-review event.

    The ground-truth flags exist only for synthetic data and are never
    consumed by any detector; they feed evaluation and statistics.
    """

    user_id: int
    item_id: int
    rating: int
    review: str
    fake_rating_flag: bool = False
    negative_review_flag: bool = False

    def sentences(self) -> tuple[tuple[str, ...], ...]:
        return tokenize(self.review)


@dataclass
class Dataset:
    m: int
    n: int
    interactions: list[Interaction]
    labels: list[str] | None = None
    user_ids: list[str] = field(default_factory=list)   # original user keys
    item_ids: list[str] = field(default_factory=list)   # original item keys
    has_flags: bool = False

    def __post_init__(self):
        if self.labels is not None and len(self.labels) != self.m:
            raise DataError(f"labels length {len(self.labels)} != user count {self.m}")
        if not self.user_ids:
            self.user_ids = [str(u) for u in range(self.m)]
        if not self.item_ids:
            self.item_ids = [str(i) for i in range(self.n)]

    def by_user(self) -> list[list[int]]:
        """Interaction indices grouped by user, in dataset order."""
        groups: list[list[int]] = [[] for _ in range(self.m)]
        for idx, it in enumerate(self.interactions):
            groups[it.user_id].append(idx)
        return groups

    def rating_matrix(self) -> np.ndarray:
        """Dense m x n rating matrix, 0 for missing."""
        r = np.zeros((self.m, self.n))
        for it in self.interactions:
            r[it.user_id, it.item_id] = it.rating
        return r

    def pmu_users(self) -> set[int]:
        if self.labels is None:
            return set()
        return {u for u, lab in enumerate(self.labels) if lab == LABEL_PMU}


@dataclass
class SynthConfig:
    """Knobs for the synthetic corpus.

    theta_fa / theta_ne bound each pmu's fake-rating and negative-review
    fractions; theta_mu_target is the per-user masking-pair fraction the
    generator plants (a masking pair has exactly one of the two flags set).
    The extra persona knobs (lukewarm reviewers, casual users, mismatch
    slips) add realistic normal-user noise so that threshold sweeps have
    structure away from the defaults.
    """

    n_normal: int = 450
    n_pmu: int = 50
    n_items: int = 400
    interactions_per_user: tuple[int, int] = (20, 24)
    pmu_interactions: tuple[int, int] = (10, 11)
    theta_fa: float = 0.5
    theta_ne: float = 0.5
    theta_mu_target: float = 0.7
    positive_lexicon: tuple[str, ...] = (
        "excellent", "amazing", "wonderful", "fantastic", "perfect", "superb",
        "good", "nice", "decent", "solid", "pleasant", "fine",
    )
    negative_lexicon: tuple[str, ...] = (
        "terrible", "awful", "horrible", "dreadful", "worthless", "appalling",
        "bad", "poor", "weak", "mediocre", "disappointing", "flawed",
    )
    lukewarm_frac: float = 0.10
    casual_frac: float = 0.20
    mismatch_frac: float = 0.30     # share of casual users with one slip
    dud_item_frac: float = 0.15
    mid_item_frac: float = 0.25
    seed: int = 0

    def validate(self):
        for name in ("theta_fa", "theta_ne", "theta_mu_target"):
            v = getattr(self, name)
            if not (0.0 < v <= 1.0):
                raise ConfigError(f"{name} must be in (0, 1], got {v}")
        if self.n_normal < 0 or self.n_pmu < 0 or self.n_items <= 0:
            raise ConfigError("counts must be non-negative and n_items positive")
        lo, hi = self.interactions_per_user
        if lo < 5 or hi < lo:
            raise ConfigError("interactions_per_user must be a range with lo >= 5")
        plo, phi = self.pmu_interactions
        if plo < 5 or phi < plo:
            raise ConfigError("pmu_interactions must be a range with lo >= 5")
        if len(self.positive_lexicon) < 4 or len(self.negative_lexicon) < 4:
            raise ConfigError("lexicons need at least 4 words each")


# ---------------------------------------------------------------------------
# loading / saving


def _check_record(user, item, rating, review, where: str):
    if user is None or item is None:
        raise DataError(f"{where}: missing user or item field")
    try:
        rating = int(rating)
    except (TypeError, ValueError):
        raise DataError(f"{where}: rating is not an integer") from None
    if not 1 <= rating <= 5:
        raise DataError(f"{where}: rating {rating} outside 1..5")
    if not isinstance(review, str) or not tokenize(review):
        raise DataError(f"{where}: review empty after tokenization")
    return rating


def load_dataset(path, format: str = "jsonl") -> Dataset:
    """Load interactions from a JSONL or CSV file.

    User and item keys are re-indexed to contiguous integers in order of
    first appearance; the original keys are kept on the dataset for
    reporting.  Malformed records raise DataError naming the line.
    """
    if format not in ("jsonl", "csv"):
        raise ConfigError(f"unknown format {format!r}")
    records = []
    if format == "jsonl":
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.strip()
                if not line:
                    continue
                try:
                    obj = json.loads(line)
                except json.JSONDecodeError:
                    raise DataError(f"line {lineno}: invalid JSON") from None
                records.append((lineno, obj))
    else:
        with open(path, encoding="utf-8", newline="") as fh:
            reader = csv.DictReader(fh)
            for lineno, row in enumerate(reader, start=2):
                records.append((lineno, row))

    user_index: dict[str, int] = {}
    item_index: dict[str, int] = {}
    interactions: list[Interaction] = []
    labels: dict[int, str] = {}
    seen_pairs: set[tuple[int, int]] = set()
    any_flags = False
    for lineno, obj in records:
        rating = _check_record(obj.get("user"), obj.get("item"),
                               obj.get("rating"), obj.get("review"),
                               f"line {lineno}")
        ukey, ikey = str(obj["user"]), str(obj["item"])
        u = user_index.setdefault(ukey, len(user_index))
        i = item_index.setdefault(ikey, len(item_index))
        if (u, i) in seen_pairs:
            raise DataError(f"line {lineno}: duplicate (user, item) pair")
        seen_pairs.add((u, i))
        fake = bool(_parse_bool(obj.get("fake_rating", False)))
        neg = bool(_parse_bool(obj.get("negative_review", False)))
        any_flags = any_flags or "fake_rating" in obj or "negative_review" in obj
        interactions.append(Interaction(u, i, rating, obj["review"], fake, neg))
        label = obj.get("label")
        if label not in (None, ""):
            label = str(label)
            if label not in (LABEL_NORMAL, LABEL_PMU):
                raise DataError(f"line {lineno}: unknown label {label!r}")
            prev = labels.get(u)
            if prev is not None and prev != label:
                raise DataError(f"line {lineno}: conflicting labels for user {ukey}")
            labels[u] = label

    m, n = len(user_index), len(item_index)
    label_list = None
    if labels:
        label_list = [labels.get(u, LABEL_NORMAL) for u in range(m)]
    return Dataset(m, n, interactions, label_list,
                   user_ids=list(user_index), item_ids=list(item_index),
                   has_flags=any_flags)


def _parse_bool(v) -> bool:
    if isinstance(v, str):
        return v.strip().lower() in ("1", "true", "yes")
    return bool(v)


def save_dataset(ds: Dataset, path, format: str = "jsonl"):
    """Write a dataset back out; JSONL is lossless, CSV drops the flags."""
    if format == "jsonl":
        with open(path, "w", encoding="utf-8") as fh:
            for it in ds.interactions:
                obj = {
                    "user": ds.user_ids[it.user_id],
                    "item": ds.item_ids[it.item_id],
                    "rating": it.rating,
                    "review": it.review,
                }
                if ds.has_flags:
                    obj["fake_rating"] = it.fake_rating_flag
                    obj["negative_review"] = it.negative_review_flag
                if ds.labels is not None:
                    obj["label"] = ds.labels[it.user_id]
                fh.write(json.dumps(obj, sort_keys=True) + "\n")
    elif format == "csv":
        with open(path, "w", encoding="utf-8", newline="") as fh:
            cols = ["user", "item", "rating", "review"]
            if ds.labels is not None:
                cols.append("label")
            writer = csv.writer(fh, quoting=csv.QUOTE_MINIMAL)
            writer.writerow(cols)
            for it in ds.interactions:
                row = [ds.user_ids[it.user_id], ds.item_ids[it.item_id],
                       it.rating, it.review]
                if ds.labels is not None:
                    row.append(ds.labels[it.user_id])
                writer.writerow(row)
    else:
        raise ConfigError(f"unknown format {format!r}")


# ---------------------------------------------------------------------------
# synthetic corpus

# Grade pools: 1 = strongly negative .. 5 = strongly positive; grade 3 mixes
# one mild positive with one mild negative word.
def _grade_pools(cfg: SynthConfig):
    half_p = len(cfg.positive_lexicon) // 2
    half_n = len(cfg.negative_lexicon) // 2
    return {
        5: list(cfg.positive_lexicon[:half_p]),
        4: list(cfg.positive_lexicon[half_p:]),
        2: list(cfg.negative_lexicon[half_n:]),
        1: list(cfg.negative_lexicon[:half_n]),
    }


def _make_review(rng: np.random.Generator, pools, grade: int) -> str:
    if grade == 3:
        pair = [pools[4][int(rng.integers(len(pools[4])))],
                pools[2][int(rng.integers(len(pools[2])))]]
        if rng.random() < 0.5:
            pair.reverse()
    else:
        pool = pools[grade]
        idx = rng.choice(len(pool), size=2, replace=False)
        pair = [pool[idx[0]], pool[idx[1]]]
    parts = ["the item is " + " and ".join(pair)]
    if rng.random() < 0.4:
        parts.append(f"overall {pair[0]}")
    return ". ".join(parts) + "."


def _review_grade_for_rating(rating: int) -> int:
    return rating  # grade scale deliberately matches the rating scale


def _masking_split(n: int, cfg: SynthConfig) -> tuple[int, int]:
    """Counts of (high-rating/negative-review, fake-rating/positive-review)
    masking interactions for a pmu with n interactions.

    Keeps the fake-rating and negative-review fractions within theta_fa and
    theta_ne while pushing the masking-pair fraction to at least
    theta_mu_target.  Raises ConfigError when jointly unsatisfiable.
    """
    need = math.ceil(cfg.theta_mu_target * n - 1e-9)
    cap_neg = math.floor(cfg.theta_ne * n + 1e-9)   # strategy 1 cap
    cap_fake = math.floor(cfg.theta_fa * n + 1e-9)  # strategy 2 cap
    if need > cap_neg + cap_fake:
        raise ConfigError(
            f"cannot place {need} masking pairs in {n} interactions under "
            f"theta_fa={cfg.theta_fa}, theta_ne={cfg.theta_ne}")
    s2 = min(cap_fake, need)
    s1 = need - s2
    if s1 > cap_neg:
        raise ConfigError("negative-review cap violated; infeasible config")
    return s1, s2


def generate_synthetic(cfg: SynthConfig) -> Dataset:
    """Build a labeled corpus of normal users plus masking-strategy pmus.

    Normal users rate according to planted item quality and write reviews
    whose sentiment matches; pmus alternate the two masking strategies
    (rating 5 with harshly negative text, rating 1 with glowing text) and
    pad the rest with unremarkable consistent interactions.  Several normal
    personas add realistic noise: lukewarm reviewers whose text understates
    high ratings, casual users with few interactions, and rare mismatch
    slips where the displayed rating contradicts the written opinion.

    Generation is a pure function of the config (including the seed).
    """
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    pools = _grade_pools(cfg)
    m = cfg.n_normal + cfg.n_pmu
    n_items = cfg.n_items

    # planted item quality: duds for honest negative feedback, a mid band
    # for three-star traffic, the rest solidly good
    n_dud = max(1, int(round(cfg.dud_item_frac * n_items)))
    n_mid = max(1, int(round(cfg.mid_item_frac * n_items)))
    quality = np.empty(n_items)
    quality[:n_dud] = rng.uniform(1.05, 1.45, size=n_dud)
    quality[n_dud:n_dud + n_mid] = rng.uniform(2.8, 3.6, size=n_mid)
    quality[n_dud + n_mid:] = rng.uniform(4.2, 5.0, size=n_items - n_dud - n_mid)
    dud_items = np.arange(n_dud)
    top_items = np.arange(n_dud + n_mid, n_items)
    good_items = np.arange(n_dud, n_items)
    # lukewarm reviewers gravitate to the very best items
    by_quality = top_items[np.argsort(-quality[top_items], kind="stable")]
    elite_items = by_quality[: max(1, len(top_items) // 2)]

    # normal personas
    n_casual = int(round(cfg.casual_frac * cfg.n_normal))
    n_lukewarm = int(round(cfg.lukewarm_frac * cfg.n_normal))
    if n_casual + n_lukewarm > cfg.n_normal:
        raise ConfigError("casual_frac + lukewarm_frac exceed the normal pool")
    perm = rng.permutation(cfg.n_normal)
    casual_users = set(perm[:n_casual].tolist())
    lukewarm_users = set(perm[n_casual:n_casual + n_lukewarm].tolist())
    n_mismatch = int(round(cfg.mismatch_frac * n_casual))
    mismatch_users = set(perm[:n_mismatch].tolist())

    interactions: list[Interaction] = []
    labels = [LABEL_NORMAL] * cfg.n_normal + [LABEL_PMU] * cfg.n_pmu

    def consistent_rating(q: float, noise: float) -> int:
        # planted lows are the only sub-3 ratings a truthful user produces,
        # which keeps the flag budget exact
        return int(np.clip(np.rint(q + noise), 3, 5))

    def flag_budget(count: int) -> int:
        # strictly fewer than 20% of a normal user's interactions may carry
        # a ground-truth flag (honest negatives and mismatch slips)
        return math.ceil(0.2 * count) - 1

    for u in range(cfg.n_normal):
        lo, hi = cfg.interactions_per_user
        if u in casual_users:
            count = int(rng.integers(8, 11))
        else:
            count = int(rng.integers(lo, hi + 1))
        budget = flag_budget(count)
        slip = u in mismatch_users and budget >= 1
        n_low = min(budget - (1 if slip else 0), 3 if count < 21 else 4)
        n_low = max(0, n_low)

        picks: list[int] = []
        if n_low:
            picks += [int(x) for x in rng.choice(dud_items, size=n_low, replace=False)]
        lukewarm = u in lukewarm_users
        n_good = count - n_low
        pool = elite_items if lukewarm else good_items
        if len(pool) < n_good:
            pool = good_items
        if len(pool) < n_good:
            raise ConfigError("not enough items for the requested interaction counts")
        picks += [int(x) for x in rng.choice(pool, size=n_good, replace=False)]

        slip_pos = int(rng.integers(n_low, count)) if slip else -1
        for pos, item in enumerate(picks):
            q = quality[item]
            if pos < n_low:
                rating, grade = 1, 1
                fake, neg = False, True
            else:
                noise = rng.uniform(-0.6, 0.6) + (0.5 if lukewarm else 0.0)
                rating = consistent_rating(q, noise)
                grade = _review_grade_for_rating(rating)
                if lukewarm and rating >= 4:
                    grade = 3   # reserved text under a high rating
                fake, neg = False, grade <= 2
                if pos == slip_pos:
                    # misoperation: opinion says five stars, the rating slider
                    # ends up at one
                    rating, grade = 1, 5
                    fake, neg = True, False
            interactions.append(Interaction(u, item, rating,
                                            _make_review(rng, pools, grade),
                                            fake, neg))

    for j in range(cfg.n_pmu):
        u = cfg.n_normal + j
        plo, phi = cfg.pmu_interactions
        count = int(rng.integers(plo, phi + 1))
        s1, s2 = _masking_split(count, cfg)
        filler = count - s1 - s2
        strat_items = [int(x) for x in rng.choice(good_items, size=s1 + s2, replace=False)]
        remaining = np.setdiff1d(top_items, strat_items)
        filler_items = [int(x) for x in rng.choice(remaining, size=filler, replace=False)]
        for item in strat_items[:s1]:
            # high rating, harshly negative review
            interactions.append(Interaction(u, item, 5,
                                            _make_review(rng, pools, 1),
                                            False, True))
        for item in strat_items[s1:]:
            # fake low rating, glowing review
            interactions.append(Interaction(u, item, 1,
                                            _make_review(rng, pools, 5),
                                            True, False))
        for item in filler_items:
            rating = consistent_rating(quality[item], rng.uniform(-0.3, 0.3))
            grade = _review_grade_for_rating(rating)
            interactions.append(Interaction(u, item, rating,
                                            _make_review(rng, pools, grade),
                                            False, grade <= 2))

    return Dataset(m, n_items, interactions, labels, has_flags=True)


# ---------------------------------------------------------------------------
# statistics and splitting


def dataset_stats(ds: Dataset) -> dict:
    """Corpus summary: sparsity, review shape averages, pmu ratio."""
    cells = ds.m * ds.n
    n_inter = len(ds.interactions)
    total_sentences = 0
    total_words = 0
    for it in ds.interactions:
        sents = it.sentences()
        total_sentences += len(sents)
        total_words += sum(len(s) for s in sents)
    stats = {
        "users": ds.m,
        "items": ds.n,
        "interactions": n_inter,
        "sparsity": (n_inter / cells) if cells else 0.0,
        "avg_words_per_sentence": (total_words / total_sentences) if total_sentences else 0.0,
        "avg_sentences_per_review": (total_sentences / n_inter) if n_inter else 0.0,
        "avg_reviews_per_user": (n_inter / ds.m) if ds.m else 0.0,
        "pmu_ratio": None,
    }
    if ds.labels is not None and ds.m:
        stats["pmu_ratio"] = sum(1 for lab in ds.labels if lab == LABEL_PMU) / ds.m
    return stats


def split(ds: Dataset, ratios: tuple[float, float, float], seed: int
          ) -> tuple[Dataset, Dataset, Dataset]:
    """Partition interactions per user into train/val/test by the ratios.

    Stratified per user with largest-remainder rounding, so a 10-interaction
    user under (0.6, 0.2, 0.2) contributes exactly 6/2/2.  Every user with
    at least 3 interactions keeps at least one training interaction whenever
    the train ratio is positive.
    """
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ConfigError(f"split ratios must sum to 1, got {ratios}")
    rng = np.random.default_rng(seed)
    buckets: tuple[list[Interaction], ...] = ([], [], [])
    for idxs in ds.by_user():
        if not idxs:
            continue
        order = rng.permutation(len(idxs))
        cnt = len(idxs)
        exact = [r * cnt for r in ratios]
        counts = [int(math.floor(e + 1e-9)) for e in exact]
        rem = cnt - sum(counts)
        fracs = sorted(range(3), key=lambda b: (-(exact[b] - counts[b]), b))
        for b in fracs[:rem]:
            counts[b] += 1
        if ratios[0] > 0 and cnt >= 3 and counts[0] == 0:
            donor = max(range(1, 3), key=lambda b: counts[b])
            counts[donor] -= 1
            counts[0] += 1
        pos = 0
        for b in range(3):
            for j in range(counts[b]):
                buckets[b].append(ds.interactions[idxs[order[pos + j]]])
            pos += counts[b]
    parts = []
    for b in range(3):
        inter = sorted(buckets[b], key=lambda it: (it.user_id, it.item_id))
        parts.append(Dataset(ds.m, ds.n, list(inter), ds.labels,
                             user_ids=list(ds.user_ids),
                             item_ids=list(ds.item_ids),
                             has_flags=ds.has_flags))
    return parts[0], parts[1], parts[2]


def drop_users(ds: Dataset, users: set[int]) -> Dataset:
    """Remove the given users and re-index the remainder contiguously."""
    keep = [u for u in range(ds.m) if u not in users]
    remap = {u: i for i, u in enumerate(keep)}
    inter = [replace(it, user_id=remap[it.user_id])
             for it in ds.interactions if it.user_id in remap]
    labels = [ds.labels[u] for u in keep] if ds.labels is not None else None
    return Dataset(len(keep), ds.n, inter, labels,
                   user_ids=[ds.user_ids[u] for u in keep],
                   item_ids=list(ds.item_ids), has_flags=ds.has_flags)
