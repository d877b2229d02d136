import numpy as np
import pytest

from pmudetect.errors import ConfigError, SamplingError
from pmudetect.metric import (MetricModel, _masked_grad, _triplet_grads,
                              attention_vector, distance, init_metric,
                              mlc_loss, profile_vector, psd_project,
                              sample_triplets, train_mlc)


def euclid_ready(p=2, k=2, c=1.0):
    """Identity metric with zero attention weights (uniform attention)."""
    model = init_metric("D", p, k, seed=0, c=c)
    model.W_t = np.zeros_like(model.W_t)
    return model


class TestProfileVector:
    def test_concatenation(self):
        pv = profile_vector([1.0, 2.0], [3.0])
        assert np.allclose(pv.z, [1.0, 2.0, 3.0])

    def test_zero_inputs(self):
        pv = profile_vector(np.zeros(2), np.zeros(3))
        assert np.allclose(pv.z, np.zeros(5))

    def test_default_dims(self):
        pv = profile_vector(np.zeros(32), np.zeros(16), p=32, k=16)
        assert pv.z.shape == (48,)

    def test_dim_mismatch(self):
        with pytest.raises(ConfigError):
            profile_vector(np.zeros(3), np.zeros(2), p=4, k=2)


class TestInitMetric:
    def test_d_form_identity(self):
        model = init_metric("D", 3, 2, seed=1)
        assert np.array_equal(model.A, np.eye(5))

    def test_r_form_structure(self):
        model = init_metric("R", 4, 3, seed=2)
        assert np.array_equal(model.A[:4, :4], np.eye(4))
        assert np.array_equal(model.A[:4, 4:], np.zeros((4, 3)))
        assert np.array_equal(model.A[4:, :4], np.zeros((3, 4)))
        assert model.A[4:, 4:].std() > 0

    def test_same_seed_identical(self):
        a = init_metric("F", 3, 3, seed=5)
        b = init_metric("F", 3, 3, seed=5)
        assert np.array_equal(a.A, b.A) and np.array_equal(a.W_t, b.W_t)

    def test_unknown_form(self):
        with pytest.raises(ConfigError):
            init_metric("X", 2, 2)

    @pytest.mark.parametrize("form,expected", [
        ("E", 1), ("D", 64), ("F", 4096), ("R", 32 + 32 * 32 + 2 * 32 * 32)])
    def test_parameter_counts_at_32_32(self, form, expected):
        model = init_metric(form, 32, 32, seed=0)
        assert model.parameter_count() == expected

    def test_restricted_vs_full_footprint(self):
        assert init_metric("R", 32, 32).parameter_count() == 3104
        assert init_metric("F", 32, 32).parameter_count() == 4096

    def test_default_dims_counts(self):
        assert init_metric("D", 32, 16).parameter_count() == 48
        assert init_metric("R", 32, 16).parameter_count() == 32 + 256 + 2 * 512


class TestAttentionVector:
    def test_zero_weights_uniform(self):
        model = init_metric("F", 2, 2, seed=3)
        t = attention_vector(np.array([1.0, 2.0, 3.0, 4.0]), model.A,
                             np.zeros((4, 4)))
        assert np.allclose(t, np.full(4, 0.25))

    def test_simplex(self, rng):
        model = init_metric("F", 3, 3, seed=4)
        for _ in range(10):
            t = attention_vector(rng.normal(size=6), model.A, model.W_t)
            assert abs(t.sum() - 1.0) < 1e-12
            assert np.all(t > 0)

    def test_hand_computed_three_dim(self):
        z = np.array([1.0, -1.0, 2.0])
        W_t = np.array([[0.1, 0.0, 0.2],
                        [0.0, 0.3, 0.0],
                        [0.1, 0.1, 0.0]])
        A = np.array([[1.0, 0.5, 0.0],
                      [0.0, 1.0, 0.0],
                      [0.5, 0.0, 2.0]])
        f = (z @ W_t) @ A
        e = np.exp(f - f.max())
        expected = e / e.sum()
        assert np.allclose(attention_vector(z, A, W_t), expected, atol=1e-15)


class TestDistance:
    def test_coincident_points(self, rng):
        model = init_metric("R", 3, 3, seed=1)
        model.A = psd_project(model.A)
        z = rng.normal(size=6)
        assert distance(z, z, model) == 0.0

    def test_uniform_attention_scaled_euclidean(self, rng):
        model = euclid_ready(p=2, k=2)
        z1, z2 = rng.normal(size=4), rng.normal(size=4)
        expected = np.linalg.norm(z1 - z2) / 4.0
        assert distance(z1, z2, model) == pytest.approx(expected, rel=1e-12)

    def test_e_form_unit_scaled_euclidean(self, rng):
        model = init_metric("E", 2, 2, seed=0)
        model.W_t = np.zeros_like(model.W_t)
        z1, z2 = rng.normal(size=4), rng.normal(size=4)
        assert distance(z1, z2, model) == pytest.approx(
            np.linalg.norm(z1 - z2) / 4.0, rel=1e-12)

    def test_disabled_attention_exact_euclidean(self, rng):
        model = euclid_ready(p=2, k=2, c=1.0)
        model.attention = False
        z1, z2 = rng.normal(size=4), rng.normal(size=4)
        assert distance(z1, z2, model) == pytest.approx(
            np.linalg.norm(z1 - z2), rel=1e-12)

    def test_matches_brute_force_quadratic_form(self, rng):
        model = init_metric("F", 2, 2, seed=6)
        model.A = psd_project(model.A)
        z1, z2 = rng.normal(size=4), rng.normal(size=4)
        # explicit reconstruction: attention, rescale, double sum
        def attn(z):
            f = (z @ model.W_t) @ model.A
            e = np.exp(f - f.max())
            return e / e.sum()
        zt1 = attn(z1) * z1
        zt2 = attn(z2) * z2
        delta = zt1 - zt2
        q = sum(delta[a] * model.A[a, b] * delta[b]
                for a in range(4) for b in range(4))
        assert distance(z1, z2, model) == pytest.approx(np.sqrt(q), rel=1e-12)

    def test_symmetry(self, rng):
        model = init_metric("R", 3, 2, seed=2)
        model.A = psd_project(model.A)
        z1, z2 = rng.normal(size=5), rng.normal(size=5)
        assert distance(z1, z2, model) == pytest.approx(distance(z2, z1, model))

    def test_triangle_inequality_thousand_triples(self, rng):
        model = init_metric("F", 3, 3, seed=7)
        model.A = psd_project(model.A)
        Z = rng.normal(size=(60, 6))
        idx = rng.integers(0, 60, size=(1000, 3))
        for a, b, c in idx:
            d_ab = distance(Z[a], Z[b], model)
            d_bc = distance(Z[b], Z[c], model)
            d_ac = distance(Z[a], Z[c], model)
            assert d_ac <= d_ab + d_bc + 1e-9

    def test_scale_parameter_scales_uniformly(self, rng):
        base = init_metric("R", 3, 3, seed=3, c=1.0)
        base.A = psd_project(base.A)
        doubled = MetricModel("R", base.A.copy(), base.W_t.copy(), 2.0,
                              base.lam, base.p, base.k)
        z1, z2 = rng.normal(size=6), rng.normal(size=6)
        assert distance(z1, z2, doubled) == pytest.approx(
            2.0 * distance(z1, z2, base), rel=1e-12)


class TestPsdProject:
    def test_identity_fixed_point(self):
        assert np.allclose(psd_project(np.eye(4)), np.eye(4))

    def test_two_by_two_hand_case(self):
        # eigenvalues of [[1,2],[2,1]] are 3 and -1; -1 clips to the floor
        out = psd_project(np.array([[1.0, 2.0], [2.0, 1.0]]))
        vals = np.linalg.eigvalsh(out)
        assert vals[0] == pytest.approx(1e-6, rel=1e-6)
        assert vals[1] == pytest.approx(3.0, rel=1e-12)
        assert np.allclose(out, out.T)
        assert np.allclose(out, np.full((2, 2), 1.5) + np.diag([5e-7, 5e-7]),
                           atol=1e-6)

    def test_random_matrices_floor(self, rng):
        for _ in range(10):
            out = psd_project(rng.normal(size=(6, 6)))
            assert np.linalg.eigvalsh(out).min() >= 1e-6 - 1e-12

    def test_non_square_rejected(self):
        with pytest.raises(ConfigError):
            psd_project(np.zeros((2, 3)))


class TestSampleTriplets:
    def test_too_few_candidates(self):
        with pytest.raises(SamplingError):
            sample_triplets({0}, range(5), per_anchor=5, seed=0)

    def test_no_outsiders(self):
        with pytest.raises(SamplingError):
            sample_triplets({0, 1}, range(2), per_anchor=5, seed=0)

    def test_count(self):
        trips = sample_triplets(set(range(10)), range(40), per_anchor=5, seed=1)
        assert len(trips) == 50

    def test_membership_contract(self):
        cands = set(range(6))
        trips = sample_triplets(cands, range(30), per_anchor=7, seed=2)
        for j, k, k2 in trips:
            assert j in cands and k in cands and j != k
            assert k2 not in cands

    def test_deterministic(self):
        a = sample_triplets({1, 2, 3}, range(10), per_anchor=4, seed=9)
        b = sample_triplets({1, 2, 3}, range(10), per_anchor=4, seed=9)
        assert a == b


class TestMlcLoss:
    def test_hinge_floor(self):
        model = euclid_ready(p=1, k=1, c=0.0)
        model.lam = 0.5
        Z = np.array([[0.0, 0.0], [0.0, 0.0], [8.0, 0.0]])
        assert mlc_loss([(0, 1, 2)], Z, model) == 0.0

    def test_arithmetic_case(self):
        # distances 2 and 1 with lam 0.6, margin 1 give 1.2 - 0.4 + 1 = 1.8
        model = euclid_ready(p=1, k=1, c=1.0)
        model.lam = 0.6
        Z = np.array([[0.0, 0.0], [4.0, 0.0], [2.0, 0.0]])
        assert distance(Z[0], Z[1], model) == pytest.approx(2.0)
        assert distance(Z[0], Z[2], model) == pytest.approx(1.0)
        assert mlc_loss([(0, 1, 2)], Z, model) == pytest.approx(1.8)

    def test_matches_brute_force_batch(self, rng):
        model = init_metric("F", 2, 2, seed=8)
        model.A = psd_project(model.A)
        Z = rng.normal(size=(12, 4))
        trips = sample_triplets(set(range(4)), range(12), per_anchor=3, seed=3)
        expected = 0.0
        for j, k, k2 in trips:
            term = (model.lam * distance(Z[j], Z[k], model)
                    - (1 - model.lam) * distance(Z[j], Z[k2], model) + model.c)
            expected += max(0.0, term)
        assert mlc_loss(trips, Z, model) == pytest.approx(expected, rel=1e-12)


class TestTrainMlc:
    def _blobs(self, rng, m=30, dim=6, sep=6.0):
        Z = rng.normal(0, 0.5, size=(m, dim))
        Z[:8, dim // 2:] += sep
        return Z, set(range(8))

    def test_zero_lr_unchanged_up_to_projection(self, rng):
        Z, cands = self._blobs(rng)
        model = init_metric("R", 3, 3, seed=1)
        A0, W0 = model.A.copy(), model.W_t.copy()
        train_mlc(Z, cands, model, lr=0.0, epochs=3, seed=2)
        assert np.allclose(model.A, psd_project(A0))
        assert np.array_equal(model.W_t, W0)

    def test_separable_profiles_contract_candidates(self, rng):
        Z, cands = self._blobs(rng)
        model = init_metric("R", 3, 3, seed=4)
        model.A = psd_project(model.A)
        cand_list = sorted(cands)
        rest = [u for u in range(Z.shape[0]) if u not in cands]

        def mean_dists(m):
            cc = np.mean([distance(Z[a], Z[b], m)
                          for a in cand_list for b in cand_list if a < b])
            cn = np.mean([distance(Z[a], Z[b], m)
                          for a in cand_list for b in rest])
            return cc, cn
        cc0, cn0 = mean_dists(model)
        train_mlc(Z, cands, model, lr=0.05, epochs=40, seed=4)
        cc1, cn1 = mean_dists(model)
        assert cc1 / cn1 < cc0 / cn0
        assert cc1 < cc0

    def test_deterministic(self, rng):
        Z, cands = self._blobs(rng)
        runs = []
        for _ in range(2):
            model = init_metric("F", 3, 3, seed=6)
            train_mlc(Z, cands, model, lr=0.05, epochs=5, seed=7)
            runs.append((model.A.copy(), model.W_t.copy()))
        assert np.array_equal(runs[0][0], runs[1][0])
        assert np.array_equal(runs[0][1], runs[1][1])

    def test_frozen_factor_block_gets_no_gradient(self, rng):
        model = init_metric("R", 3, 3, seed=2)
        model.A = psd_project(model.A)
        Z = rng.normal(size=(10, 6)) + 1.0
        res = _triplet_grads(model, Z, 0, 1, 8)
        assert res is not None
        masked = _masked_grad(model, res[0])
        assert np.array_equal(masked[:3, :3], np.zeros((3, 3)))
        assert np.any(masked[3:, 3:] != 0)

    def test_disabled_attention_zero_weight_gradient(self, rng):
        model = init_metric("R", 3, 3, seed=2, attention=False)
        model.A = psd_project(model.A)
        Z = rng.normal(size=(10, 6)) + 1.0
        res = _triplet_grads(model, Z, 0, 1, 8)
        assert res is not None
        assert np.array_equal(res[1], np.zeros_like(model.W_t))


class TestMetricGradients:
    def test_matches_central_differences(self, rng):
        """A and W_t gradients of the triplet loss, away from hinge kinks."""
        model = init_metric("F", 2, 3, seed=9)
        model.A = psd_project(model.A + 2.0 * np.eye(5))
        Z = rng.normal(size=(8, 5)) + 1.5
        j, k, k2 = 0, 1, 6
        trip = [(j, k, k2)]
        term = (model.lam * distance(Z[j], Z[k], model)
                - (1 - model.lam) * distance(Z[j], Z[k2], model) + model.c)
        assert term > 0.1, "test setup must sit inside the active hinge region"
        res = _triplet_grads(model, Z, j, k, k2)
        dA, dW = res
        checked = 0
        for arr, grad in ((model.A, dA), (model.W_t, dW)):
            flat = arr.reshape(-1)
            gflat = grad.reshape(-1)
            usable = np.flatnonzero(np.abs(gflat) > 1e-6)
            for i in rng.choice(usable, size=min(10, usable.size), replace=False):
                h = 1e-6 * max(1.0, abs(flat[i]))
                orig = flat[i]
                flat[i] = orig + h
                lp = mlc_loss(trip, Z, model)
                flat[i] = orig - h
                lm = mlc_loss(trip, Z, model)
                flat[i] = orig
                num = (lp - lm) / (2 * h)
                rel = abs(num - gflat[i]) / max(abs(num), abs(gflat[i]))
                assert rel < 1e-4
                checked += 1
        assert checked >= 20
