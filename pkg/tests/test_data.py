import json
import math

import numpy as np
import pytest

from pmudetect.data import (Dataset, Interaction, SynthConfig, dataset_stats,
                            drop_users, generate_synthetic, load_dataset,
                            save_dataset, split, tokenize)
from pmudetect.errors import ConfigError, DataError


def write_jsonl(path, records):
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec) + "\n")


class TestTokenize:
    def test_sentences_and_words(self):
        assert tokenize("Good. Bad.") == (("good",), ("bad",))

    def test_punctuation_stripped(self):
        assert tokenize("Great!!! really great, yes?") == \
            (("great",), ("really", "great", "yes"))

    def test_empty(self):
        assert tokenize("...") == ()


class TestLoad:
    def test_empty_file(self, tmp_path):
        path = tmp_path / "empty.jsonl"
        path.write_text("")
        ds = load_dataset(path)
        assert (ds.m, ds.n, len(ds.interactions)) == (0, 0, 0)

    def test_two_lines_one_user(self, tmp_path):
        path = tmp_path / "two.jsonl"
        write_jsonl(path, [
            {"user": "a", "item": "x", "rating": 4, "review": "good stuff."},
            {"user": "a", "item": "y", "rating": 2, "review": "bad stuff."},
        ])
        ds = load_dataset(path)
        assert (ds.m, ds.n, len(ds.interactions)) == (1, 2, 2)
        assert ds.user_ids == ["a"]
        assert ds.item_ids == ["x", "y"]

    def test_rating_out_of_range_names_line(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        write_jsonl(path, [
            {"user": "a", "item": "x", "rating": 4, "review": "fine."},
            {"user": "a", "item": "y", "rating": 7, "review": "fine."},
        ])
        with pytest.raises(DataError, match="line 2"):
            load_dataset(path)

    def test_missing_field(self, tmp_path):
        path = tmp_path / "missing.jsonl"
        write_jsonl(path, [{"user": "a", "rating": 4, "review": "fine."}])
        with pytest.raises(DataError, match="line 1"):
            load_dataset(path)

    def test_empty_review_rejected(self, tmp_path):
        path = tmp_path / "empty_review.jsonl"
        write_jsonl(path, [{"user": "a", "item": "x", "rating": 4, "review": "?!."}])
        with pytest.raises(DataError, match="review"):
            load_dataset(path)

    def test_duplicate_pair_rejected(self, tmp_path):
        path = tmp_path / "dup.jsonl"
        write_jsonl(path, [
            {"user": "a", "item": "x", "rating": 4, "review": "fine."},
            {"user": "a", "item": "x", "rating": 5, "review": "fine again."},
        ])
        with pytest.raises(DataError, match="duplicate"):
            load_dataset(path)


class TestRoundTrip:
    @staticmethod
    def _records(ds):
        # records keyed by original ids; immune to load-time re-indexing
        return sorted(
            (ds.user_ids[it.user_id], ds.item_ids[it.item_id], it.rating,
             it.review, it.fake_rating_flag, it.negative_review_flag)
            for it in ds.interactions)

    def test_jsonl_field_for_field(self, tmp_path):
        ds = generate_synthetic(SynthConfig(n_normal=12, n_pmu=3, n_items=40, seed=9))
        path = tmp_path / "ds.jsonl"
        save_dataset(ds, path)
        back = load_dataset(path)
        assert back.m == ds.m
        assert self._records(back) == self._records(ds)
        for u in range(ds.m):
            assert back.labels[back.user_ids.index(ds.user_ids[u])] == ds.labels[u]

    def test_save_load_save_is_fixed_point(self, tmp_path):
        ds = generate_synthetic(SynthConfig(n_normal=12, n_pmu=3, n_items=40, seed=9))
        p1, p2 = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        save_dataset(ds, p1)
        save_dataset(load_dataset(p1), p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_csv_round_trip_core_fields(self, tmp_path):
        ds = generate_synthetic(SynthConfig(n_normal=8, n_pmu=2, n_items=30, seed=1))
        path = tmp_path / "ds.csv"
        save_dataset(ds, path, format="csv")
        back = load_dataset(path, format="csv")
        assert back.m == ds.m
        core = lambda d: sorted(
            (d.user_ids[it.user_id], d.item_ids[it.item_id], it.rating, it.review)
            for it in d.interactions)
        assert core(back) == core(ds)


class TestSynthetic:
    def test_no_pmu_all_normal(self):
        ds = generate_synthetic(SynthConfig(n_normal=10, n_pmu=0, n_items=40, seed=1))
        assert all(lab == "normal" for lab in ds.labels)

    def test_paper_scale_ratio(self):
        ds = generate_synthetic(SynthConfig(seed=0))
        assert ds.m == 500
        assert dataset_stats(ds)["pmu_ratio"] == pytest.approx(0.10)

    def test_masking_pair_fraction_from_flags(self):
        # oracle: recount the exactly-one-flag interactions per pmu
        cfg = SynthConfig(n_normal=30, n_pmu=8, n_items=80, seed=4)
        ds = generate_synthetic(cfg)
        groups = ds.by_user()
        for u in sorted(ds.pmu_users()):
            idxs = groups[u]
            xor = sum(1 for i in idxs
                      if ds.interactions[i].fake_rating_flag
                      != ds.interactions[i].negative_review_flag)
            assert xor / len(idxs) >= cfg.theta_mu_target

    def test_safe_proportion_bounds(self):
        cfg = SynthConfig(n_normal=30, n_pmu=8, n_items=80, seed=4)
        ds = generate_synthetic(cfg)
        groups = ds.by_user()
        for u in sorted(ds.pmu_users()):
            idxs = groups[u]
            fake = sum(1 for i in idxs if ds.interactions[i].fake_rating_flag)
            neg = sum(1 for i in idxs if ds.interactions[i].negative_review_flag)
            assert fake / len(idxs) <= cfg.theta_fa + 1e-12
            assert neg / len(idxs) <= cfg.theta_ne + 1e-12

    def test_normal_masking_fraction_below_fifth(self):
        ds = generate_synthetic(SynthConfig(n_normal=40, n_pmu=5, n_items=90, seed=7))
        groups = ds.by_user()
        pmus = ds.pmu_users()
        for u in range(ds.m):
            if u in pmus:
                continue
            idxs = groups[u]
            xor = sum(1 for i in idxs
                      if ds.interactions[i].fake_rating_flag
                      != ds.interactions[i].negative_review_flag)
            assert xor / len(idxs) < 0.2

    def test_every_user_at_least_five_interactions(self):
        ds = generate_synthetic(SynthConfig(n_normal=20, n_pmu=4, n_items=60, seed=2))
        assert min(len(g) for g in ds.by_user()) >= 5

    def test_equal_seeds_byte_identical(self, tmp_path):
        cfg = SynthConfig(n_normal=15, n_pmu=4, n_items=50, seed=42)
        a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        save_dataset(generate_synthetic(cfg), a)
        save_dataset(generate_synthetic(cfg), b)
        assert a.read_bytes() == b.read_bytes()

    def test_infeasible_config_rejected(self):
        cfg = SynthConfig(n_normal=5, n_pmu=2, n_items=40,
                          theta_fa=0.1, theta_ne=0.1, theta_mu_target=0.9, seed=0)
        with pytest.raises(ConfigError):
            generate_synthetic(cfg)

    def test_invalid_threshold_rejected(self):
        with pytest.raises(ConfigError):
            generate_synthetic(SynthConfig(theta_fa=0.0))


class TestStats:
    def test_single_cell_sparsity(self):
        ds = Dataset(1, 1, [Interaction(0, 0, 3, "okay stuff.")])
        assert dataset_stats(ds)["sparsity"] == pytest.approx(1.0)

    def test_tokenizer_contract_in_stats(self):
        ds = Dataset(1, 1, [Interaction(0, 0, 3, "Good. Bad.")])
        st = dataset_stats(ds)
        assert st["avg_sentences_per_review"] == pytest.approx(2.0)
        assert st["avg_words_per_sentence"] == pytest.approx(1.0)

    def test_unlabeled_ratio_none(self):
        ds = Dataset(1, 1, [Interaction(0, 0, 3, "okay.")])
        assert dataset_stats(ds)["pmu_ratio"] is None


class TestSplit:
    def _flat(self, seed=8):
        inter = [Interaction(0, i, 1 + i % 5, f"review {i}.") for i in range(10)]
        return Dataset(1, 10, inter)

    def test_all_train(self):
        tr, va, te = split(self._flat(), (1.0, 0.0, 0.0), seed=0)
        assert len(tr.interactions) == 10
        assert not va.interactions and not te.interactions

    def test_exact_division(self):
        tr, va, te = split(self._flat(), (0.6, 0.2, 0.2), seed=0)
        assert (len(tr.interactions), len(va.interactions), len(te.interactions)) == (6, 2, 2)

    def test_deterministic(self):
        ds = generate_synthetic(SynthConfig(n_normal=10, n_pmu=2, n_items=40, seed=3))
        a = split(ds, (0.6, 0.2, 0.2), seed=5)
        b = split(ds, (0.6, 0.2, 0.2), seed=5)
        for part_a, part_b in zip(a, b):
            assert [(i.user_id, i.item_id) for i in part_a.interactions] == \
                [(i.user_id, i.item_id) for i in part_b.interactions]

    def test_bad_ratios(self):
        with pytest.raises(ConfigError):
            split(self._flat(), (0.5, 0.2, 0.2), seed=0)

    def test_users_with_three_interactions_keep_train_presence(self):
        ds = generate_synthetic(SynthConfig(n_normal=10, n_pmu=2, n_items=40, seed=3))
        tr, _, _ = split(ds, (0.2, 0.4, 0.4), seed=1)
        train_users = {it.user_id for it in tr.interactions}
        for u, idxs in enumerate(ds.by_user()):
            if len(idxs) >= 3:
                assert u in train_users

    def test_partition_is_exact(self):
        ds = generate_synthetic(SynthConfig(n_normal=8, n_pmu=2, n_items=40, seed=6))
        tr, va, te = split(ds, (0.6, 0.2, 0.2), seed=2)
        total = len(tr.interactions) + len(va.interactions) + len(te.interactions)
        assert total == len(ds.interactions)
        pairs = set()
        for part in (tr, va, te):
            for it in part.interactions:
                pairs.add((it.user_id, it.item_id))
        assert len(pairs) == len(ds.interactions)


class TestDropUsers:
    def test_reindexes(self):
        ds = generate_synthetic(SynthConfig(n_normal=6, n_pmu=2, n_items=40, seed=1))
        out = drop_users(ds, {0, 3})
        assert out.m == ds.m - 2
        assert max(it.user_id for it in out.interactions) == out.m - 1
        assert len(out.labels) == out.m
