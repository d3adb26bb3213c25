import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import kruskal

from dpnn.errors import DomainError
from dpnn.interpret import dunn_test, feature_tests, kruskal_wallis
from dpnn.numerics import RngStream
from oracles import kw_permutation_p, kw_statistic

groups_strategy = st.lists(
    st.lists(st.integers(0, 6).map(float), min_size=1, max_size=12), min_size=2, max_size=4
).filter(lambda gs: sum(map(len, gs)) >= 3 and len({v for g in gs for v in g}) > 1)


class TestKruskalWallis:
    def test_identical_groups(self):
        assert kruskal_wallis([[1, 2, 3], [1, 2, 3]]) == (0.0, 1.0)

    def test_all_values_tied(self):
        assert kruskal_wallis([[2, 2], [2, 2, 2]]) == (0.0, 1.0)

    def test_separated_groups_hand_value(self):
        # rank sums 6, 15, 24 over N=9: 12/90 * (12+75+192) - 30 = 7.2
        h, p = kruskal_wallis([[1, 2, 3], [4, 5, 6], [7, 8, 9]])
        assert h == pytest.approx(7.2, abs=1e-12)
        assert p == pytest.approx(math.exp(-3.6), abs=1e-12)  # chi-square 2 df tail

    @settings(max_examples=60, deadline=None)
    @given(groups_strategy)
    def test_matches_midrank_oracle_and_scipy(self, groups):
        h, p = kruskal_wallis(groups)
        assert h == pytest.approx(kw_statistic(groups), rel=1e-10, abs=1e-10)
        ref = kruskal(*groups)
        assert h == pytest.approx(ref.statistic, rel=1e-10, abs=1e-10)
        assert p == pytest.approx(ref.pvalue, rel=1e-8, abs=1e-12)

    @settings(max_examples=40, deadline=None)
    @given(groups_strategy, st.sampled_from([np.exp, np.cbrt, lambda v: 3 * v - 7]))
    def test_monotone_transform_invariance(self, groups, f):
        moved = [list(f(np.asarray(g))) for g in groups]
        assert kruskal_wallis(moved)[0] == pytest.approx(kruskal_wallis(groups)[0], rel=1e-12, abs=1e-12)

    def test_large_sample_matches_permutation_oracle(self):
        rng = RngStream(0, "kw")
        groups = [rng.normal(size=150) + shift for shift in (0.0, 0.1, 0.2)]
        p_perm, half = kw_permutation_p(groups)
        assert abs(kruskal_wallis(groups)[1] - p_perm) <= half

    @pytest.mark.parametrize("groups", [
        [[1, 2, 3], [4, 5, 6], [7, 8, 9]],
        [[1, 1, 2, 2, 3], [2, 2, 3, 3, 3], [1, 3, 3, 4, 4]],
    ], ids=["separated", "tie-heavy"])
    def test_small_sample_matches_permutation_oracle(self, groups):
        # stated example; the chi-square tail is asymptotic, see decisions ledger
        p_perm, half = kw_permutation_p(groups)
        assert abs(kruskal_wallis(groups)[1] - p_perm) <= half

    @pytest.mark.parametrize("groups", [[[1.0]], [[1.0], []], [[1.0], [2.0]], [[1.0, np.nan], [2.0, 3.0]]])
    def test_invalid(self, groups):
        with pytest.raises(DomainError):
            kruskal_wallis(groups)


class TestDunn:
    def test_textbook_no_ties(self):
        # ranks equal values; mean ranks 1.5, 4, 6; variance N(N+1)/12 = 3.5
        r = dunn_test([[1, 2], [3, 4, 5], [6]])
        assert r.mean_ranks.tolist() == [1.5, 4.0, 6.0]
        z_ab = (1.5 - 4.0) / math.sqrt(3.5 * (1 / 2 + 1 / 3))
        assert r.z[0, 1] == pytest.approx(z_ab, abs=1e-12)
        assert r.p[0, 1] == pytest.approx(math.erfc(abs(z_ab) / math.sqrt(2)), abs=1e-12)

    def test_textbook_with_ties(self):
        # pooled 1,1,2,2,3 -> ranks 1.5,1.5,3.5,3.5,5; tie term (6+6)/(12*4) = 0.25
        r = dunn_test([[1, 1, 2], [2, 3]])
        assert r.mean_ranks == pytest.approx([6.5 / 3, 4.25], abs=1e-12)
        z = (6.5 / 3 - 4.25) / math.sqrt((2.5 - 0.25) * (1 / 3 + 1 / 2))
        assert r.z[0, 1] == pytest.approx(z, abs=1e-12)

    def test_identical_groups(self):
        r = dunn_test([[1, 2, 3], [1, 2, 3]])
        assert r.z[0, 1] == 0.0 and r.p[0, 1] == 1.0

    def test_undefined_when_all_tied(self):
        r = dunn_test([[4, 4], [4]])
        assert r.undefined and np.isnan(r.z[0, 1])
        assert r.pairs()[0]["z"] is None

    @settings(max_examples=40, deadline=None)
    @given(groups_strategy)
    def test_antisymmetric_and_no_correction(self, groups):
        r = dunn_test(groups)
        assert np.allclose(r.z, -r.z.T)
        k = len(groups)
        for i in range(k):
            for j in range(k):
                if i != j:
                    assert r.p[i, j] == pytest.approx(min(1.0, math.erfc(abs(r.z[i, j]) / math.sqrt(2))), abs=1e-12)

    def test_pairs_labels(self):
        pairs = dunn_test([[1, 2], [3, 4], [5, 6]]).pairs(["A", "B", "C"])
        assert [(d["a"], d["b"]) for d in pairs] == [("A", "B"), ("A", "C"), ("B", "C")]


class TestFeatureTests:
    def test_skips_empty_cluster_and_reports_errors(self):
        X = np.array([[1.0, 5.0], [2.0, 5.0], [3.0, 5.0], [4.0, 5.0]])
        out = feature_tests(X, [0, 0, 2, 2], ["a", "b"], n_clusters=3)
        assert out[0]["dunn"][0]["a"] == "A" and out[0]["dunn"][0]["b"] == "C"
        assert out[1]["H"] == 0.0 and out[1]["dunn_undefined"]
