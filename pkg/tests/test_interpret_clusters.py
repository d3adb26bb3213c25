import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dpnn.dataio import DEFAULT_SCHEMA, DEFAULT_TREATMENTS, TABLE2_REMISSION, Dataset, default_synth_config, generate_synthetic
from dpnn.errors import DomainError
from dpnn.interpret import (
    assign_clusters,
    cluster_feature_means,
    cluster_treatment_table,
    feature_histograms,
    patient_feature_similarity,
    patient_latent_similarity,
    patient_report,
    profile_from_rates,
    rank_treatments,
)
from dpnn.model import Hyperparams, encode, init_model, proto_distances
from dpnn.numerics import RngStream


def _dataset(features, treatments, remission):
    n = len(treatments)
    feats = np.zeros((n, len(DEFAULT_SCHEMA)))
    feats[:, : np.shape(features)[1]] = features
    return Dataset(tuple(f"p{i}" for i in range(n)), ("S",) * n, np.asarray(treatments, dtype=np.int64),
                   np.asarray(remission, dtype=np.int64), feats, np.zeros(feats.shape, dtype=bool))


class TestAssign:
    def test_encoding_equal_to_prototype(self, small_data):
        ds, _ = small_data
        m = init_model(Hyperparams(latent_dim=4), rng=RngStream(1))
        m.params["prototypes"][2] = encode(m, m.scale(ds.features[5]))
        assert assign_clusters(m, ds)[5] == 2

    def test_single_prototype(self, small_data):
        ds, _ = small_data
        m = init_model(Hyperparams(n_prototypes=1), rng=RngStream(1))
        assert np.all(assign_clusters(m, ds) == 0)

    def test_ties_to_lowest_index(self, small_data):
        ds, _ = small_data
        m = init_model(Hyperparams(latent_dim=4), rng=RngStream(1))
        m.params["prototypes"][:] = m.prototypes[1]
        assert np.all(assign_clusters(m, ds) == 0)

    def test_partition(self, small_data):
        ds, _ = small_data
        m = init_model(Hyperparams(n_prototypes=5), rng=RngStream(2))
        c = assign_clusters(m, ds)
        assert c.shape == (len(ds),) and set(np.unique(c)) <= set(range(5))
        profiles = cluster_treatment_table(ds, c, 5)
        assert sum(p.size for p in profiles) == len(ds)
        ids = [pid for p in profiles for pid in p.member_ids]
        assert sorted(ids) == sorted(ds.patient_ids)

    def test_matches_brute_force(self, small_data):
        ds, _ = small_data
        m = init_model(Hyperparams(latent_dim=3), rng=RngStream(3))
        z = encode(m, m.scale(ds.features))
        brute = [min(range(3), key=lambda j: (float(np.sum((zi - m.prototypes[j]) ** 2)), j)) for zi in z]
        assert np.array_equal(assign_clusters(m, ds), brute)


class TestTreatmentTable:
    def test_hand_case(self):
        ds = _dataset(np.zeros((4, 1)), [0, 0, 0, 0], [1, 0, 1, 0])
        (p,) = cluster_treatment_table(ds, [0, 0, 0, 0])
        assert p.cell("citalopram").rate == 0.5 and p.cell("citalopram").n == 4
        assert p.cell("citalopram").low_confidence

    def test_empty_cell_flagged(self):
        ds = _dataset(np.zeros((2, 1)), [0, 0], [1, 0])
        (p,) = cluster_treatment_table(ds, [0, 0])
        cell = p.cell("venlafaxine")
        assert cell.rate is None and cell.n == 0 and cell.low_confidence
        assert "venlafaxine" not in [c.treatment for c in rank_treatments(p)]

    def test_threshold_configurable(self):
        ds = _dataset(np.zeros((4, 1)), [0, 0, 0, 0], [1, 0, 1, 0])
        (p,) = cluster_treatment_table(ds, [0] * 4, min_n=4)
        assert not p.cell("citalopram").low_confidence

    def test_matches_counting_oracle(self, small_data):
        ds, cl = small_data
        profiles = cluster_treatment_table(ds, cl, 3)
        for c, p in enumerate(profiles):
            for t, name in enumerate(DEFAULT_TREATMENTS):
                sel = (cl == c) & (ds.treatments == t)
                assert p.cell(name).n == sel.sum()
                if sel.any():
                    assert p.cell(name).rate == ds.remission[sel].sum() / sel.sum()

    def test_generator_converges_binomial_ci(self):
        # 50k draws; each cell inside its 99.9% binomial interval around the configured rate
        ds, cl = generate_synthetic(default_synth_config(50000, seed=3))
        for c, p in enumerate(cluster_treatment_table(ds, cl, 3)):
            for t, name in enumerate(DEFAULT_TREATMENTS):
                q, n = TABLE2_REMISSION[c][t], p.cell(name).n
                assert abs(p.cell(name).rate - q) <= 3.29 * np.sqrt(q * (1 - q) / n), (c, name)

    def test_generator_round_trip(self):
        # stated example: 50k draws, every cell recovered to 0.02; see decisions ledger on small cells
        ds, cl = generate_synthetic(default_synth_config(50000, seed=3))
        profiles = cluster_treatment_table(ds, cl, 3)
        for c, p in enumerate(profiles):
            for t, name in enumerate(DEFAULT_TREATMENTS):
                assert abs(p.cell(name).rate - TABLE2_REMISSION[c][t]) <= 0.02, (c, name)

    def test_rejects_bad_clusters(self):
        ds = _dataset(np.zeros((2, 1)), [0, 0], [1, 0])
        with pytest.raises(DomainError):
            cluster_treatment_table(ds, [0])
        with pytest.raises(DomainError):
            cluster_treatment_table(ds, [0, -1])


class TestRanking:
    def test_cluster_c_order(self):
        rates = dict(zip(DEFAULT_TREATMENTS, TABLE2_REMISSION[2]))
        order = [c.treatment for c in rank_treatments(profile_from_rates(rates))]
        assert order[0] == "venlafaxine" and order[-1] == "mirtazapine"
        assert order.index("sertraline") < order.index("bupropion+escitalopram")

    @pytest.mark.parametrize("cluster,printed", [
        (0, ["citalopram", "mirtazapine+venlafaxine", "bupropion+escitalopram", "venlafaxine", "escitalopram",
             "sertraline", "mirtazapine+sertraline", "mirtazapine"]),
        (1, ["bupropion+escitalopram", "venlafaxine", "citalopram", "mirtazapine+venlafaxine", "mirtazapine",
             "mirtazapine+sertraline", "escitalopram", "sertraline"]),
    ], ids=["A", "B"])
    def test_other_printed_orders(self, cluster, printed):
        rates = dict(zip(DEFAULT_TREATMENTS, TABLE2_REMISSION[cluster]))
        assert [c.treatment for c in rank_treatments(profile_from_rates(rates))] == printed

    def test_singleton(self):
        order = rank_treatments(profile_from_rates({"sertraline": 0.3}))
        assert [c.treatment for c in order] == ["sertraline"]

    @settings(max_examples=50)
    @given(st.lists(st.sampled_from([0.1, 0.2, 0.3, None]), min_size=8, max_size=8))
    def test_sorted_permutation(self, rates):
        given_rates = {t: r for t, r in zip(DEFAULT_TREATMENTS, rates) if r is not None}
        ranked = rank_treatments(profile_from_rates(given_rates))
        assert sorted(c.treatment for c in ranked) == sorted(given_rates)
        vals = [c.rate for c in ranked]
        assert vals == sorted(vals, reverse=True)
        canon = list(DEFAULT_TREATMENTS)
        for a, b in zip(ranked, ranked[1:]):
            if a.rate == b.rate:
                assert canon.index(a.treatment) < canon.index(b.treatment)


class TestHistograms:
    def test_rounding_half_away(self):
        ds = _dataset([[0.4], [0.6]], [0, 0], [0, 1])
        h = feature_histograms(ds, [0, 0])
        assert h["total_severity"]["0"] == {"0": 0.5, "1": 0.5}
        ds = _dataset([[0.5], [1.5], [2.5]], [0] * 3, [0] * 3)
        assert feature_histograms(ds, [0] * 3)["total_severity"]["0"] == {"1": 1 / 3, "2": 1 / 3, "3": 1 / 3}

    def test_binary_two_bins(self, small_data):
        ds, cl = small_data
        h = feature_histograms(ds, cl)
        assert set(h["sex"]["0"]) == {"0", "1"}

    def test_normalized(self, small_data):
        ds, cl = small_data
        for per_cluster in feature_histograms(ds, cl).values():
            for freqs in per_cluster.values():
                assert sum(freqs.values()) == pytest.approx(1.0, abs=1e-12)


class TestSimilarity:
    def test_exact_match_and_farthest(self):
        means = np.array([[1.0, 0.0], [2.0, 0.0], [4.0, 0.0]])
        sim = patient_feature_similarity(np.array([1.0, 0.0]), means)
        assert sim[0] == pytest.approx([1.0, 2 / 3, 0.0], abs=1e-15)
        assert sim[1].tolist() == [1.0, 1.0, 1.0]  # all gaps equal

    def test_hand_computed_three_clusters(self):
        # gaps |2.5-1|=1.5, |2.5-2|=0.5, |2.5-3|=0.5 -> normalized 1,0,0 -> sim 0,1,1
        sim = patient_feature_similarity(np.array([2.5]), np.array([[1.0], [2.0], [3.0]]))
        assert sim[0].tolist() == [0.0, 1.0, 1.0]

    def test_needs_two_clusters(self):
        with pytest.raises(DomainError):
            patient_feature_similarity(np.ones(2), np.ones((1, 2)))

    def test_latent_on_prototype(self):
        m = init_model(Hyperparams(latent_dim=4), rng=RngStream(0))
        x = RngStream(1).normal(size=19)
        m.params["prototypes"][1] = encode(m, x)
        sim = patient_latent_similarity(m, x)
        assert sim[1] == 1.0 and sim.min() == 0.0

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**32))
    def test_latent_order_reverses_distance(self, seed):
        m = init_model(Hyperparams(latent_dim=3, n_prototypes=5), rng=RngStream(seed))
        x = RngStream(seed).derive("x").normal(size=19)
        sim = patient_latent_similarity(m, x)
        d = proto_distances(m, encode(m, x))
        assert np.argmax(sim) == np.argmin(d)
        for i in range(5):
            for j in range(5):
                if d[i] < d[j]:
                    assert sim[i] >= sim[j]

    def test_weighted_means_hook(self):
        ds = _dataset([[1.0], [3.0], [5.0]], [0] * 3, [0] * 3)
        plain = cluster_feature_means(ds, [0, 0, 1], 2)
        weighted = cluster_feature_means(ds, [0, 0, 1], 2, weights=np.array([3.0, 1.0, 1.0]))
        assert plain[0, 0] == 2.0 and weighted[0, 0] == 1.5

    def test_patient_report(self, small_data):
        ds, _ = small_data
        m = init_model(Hyperparams(latent_dim=4), rng=RngStream(4), data=ds.features[:50])
        c = assign_clusters(m, ds)
        rep = patient_report(m, ds, c, ds.patient_ids[0])
        assert rep["cluster"] == int(c[0])
        assert set(rep["treatment_probabilities"]) == set(DEFAULT_TREATMENTS)
        with pytest.raises(DomainError):
            patient_report(m, ds, c, "missing")
