import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.metrics import roc_auc_score

from dpnn.errors import DomainError
from dpnn.evalsuite import (
    MetricsRecord,
    UndefinedMetricError,
    evaluate,
    format_summary_table,
    improvement,
    loso,
    roc_auc,
    rri,
    run_cv,
    summarize,
    threshold_metrics,
)
from dpnn.numerics import RngStream
from oracles import pairwise_auc


class TestAuc:
    def test_perfect_and_inverted(self):
        assert roc_auc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]) == 1.0
        assert roc_auc([0.9, 0.8, 0.2, 0.1], [0, 0, 1, 1]) == 0.0

    def test_all_tied(self):
        assert roc_auc([0.5] * 6, [0, 1, 0, 1, 1, 0]) == 0.5

    def test_single_class(self):
        with pytest.raises(UndefinedMetricError):
            roc_auc([0.1, 0.2], [1, 1])

    @settings(max_examples=60, deadline=None)
    @given(st.lists(st.tuples(st.integers(0, 5), st.booleans()), min_size=2, max_size=60))
    def test_matches_pairwise_oracle(self, pairs):
        scores = [s / 5 for s, _ in pairs]
        labels = [int(y) for _, y in pairs]
        if len(set(labels)) < 2:
            return
        assert roc_auc(scores, labels) == pytest.approx(pairwise_auc(scores, labels), abs=1e-12)

    def test_matches_sklearn(self):
        rng = RngStream(0)
        s = rng.random(500)
        y = (rng.random(500) < s).astype(int)
        assert roc_auc(s, y) == pytest.approx(roc_auc_score(y, s), abs=1e-12)


class TestThresholdMetrics:
    def test_confusion_counts(self):
        # tp=2 fp=1 fn=1 tn=2
        m = threshold_metrics([0.9, 0.6, 0.5, 0.4, 0.2, 0.1], [1, 1, 0, 1, 0, 0])
        assert m.sensitivity == pytest.approx(2 / 3)
        assert m.specificity == pytest.approx(2 / 3)
        assert m.ppv == pytest.approx(2 / 3)
        assert m.npv == pytest.approx(2 / 3)
        assert m.f1 == pytest.approx(2 / 3)

    def test_threshold_inclusive(self):
        assert threshold_metrics([0.5], [1]).sensitivity == 1.0

    def test_undefined_denominators(self):
        m = threshold_metrics([0.1, 0.2], [0, 0])
        assert m.sensitivity is None and m.ppv is None and m.f1 is None
        assert m.specificity == 1.0


class TestRri:
    def test_matched_patients(self):
        probs = np.array([[0.9, 0.1], [0.2, 0.8], [0.6, 0.4], [0.3, 0.7]])
        rate, n = rri(probs, [0, 1, 1, 0], [1, 0, 1, 1])
        assert n == 2 and rate == 0.5

    def test_tie_goes_to_first_treatment(self):
        rate, n = rri(np.array([[0.5, 0.5]]), [0], [1])
        assert (rate, n) == (1.0, 1)

    def test_no_matches(self):
        assert rri(np.array([[0.9, 0.1]]), [1], [1]) == (None, 0)

    def test_improvement(self):
        a, r = improvement(0.48, 0.415)
        assert a == pytest.approx(0.065)
        assert r == pytest.approx(0.065 / 0.415)
        with pytest.raises(DomainError):
            improvement(0.5, 0.0)


class TestSummaries:
    def test_sample_sd_and_undefined_dropped(self):
        recs = [MetricsRecord(0.6, 0.5, None, 0.5, 0.5, 0.5, 0.4, 10, 0.4),
                MetricsRecord(0.7, 0.7, None, 0.5, 0.5, 0.5, 0.5, 12, 0.4)]
        s = summarize(recs)
        assert s.stats["auc"].mean == pytest.approx(0.65)
        assert s.stats["auc"].sd == pytest.approx(np.std([0.6, 0.7], ddof=1))
        assert s.stats["specificity"].mean is None and s.stats["specificity"].n == 0

    def test_table_format(self):
        recs = [MetricsRecord(0.6, 0.5, 0.5, 0.5, 0.5, 0.5, 0.4, 10, 0.4)] * 2
        table = format_summary_table({"3": summarize(recs)})
        assert "0.600 (0.000)" in table and table.splitlines()[0].startswith("Prototypes")


class TestHarnesses:
    def test_cv_sample_count_and_determinism(self, small_data, tiny_hyper):
        ds, _ = small_data
        h = tiny_hyper.replace(epochs=1)
        a = run_cv(ds, h, k=3, repeats=2, seed=4)
        b = run_cv(ds, h, k=3, repeats=2, seed=4)
        assert a.n_samples == 6 and a.n_failed == 0
        assert a.to_json() == b.to_json()
        assert [(r.repeat, r.fold) for r in a.samples] == [(r, f) for r in range(2) for f in range(3)]

    def test_cv_parallel_matches_serial(self, small_data, tiny_hyper):
        ds, _ = small_data
        h = tiny_hyper.replace(epochs=1)
        assert run_cv(ds, h, k=2, repeats=1, seed=2, jobs=2).to_json() == run_cv(ds, h, k=2, repeats=1, seed=2).to_json()

    def test_evaluate_rates_in_range(self, small_data, tiny_hyper):
        from dpnn.trainer import train
        ds, _ = small_data
        rec = evaluate(train(ds, tiny_hyper).model, ds)
        for v in (rec.auc, rec.sensitivity, rec.specificity, rec.ppv, rec.npv, rec.f1, rec.rri_rate):
            assert v is None or 0.0 <= v <= 1.0
        assert rec.rri_n >= 0 and rec.n == len(ds)

    def test_loso(self, small_data, tiny_hyper):
        ds, _ = small_data
        rec = loso(ds, tiny_hyper.replace(epochs=1), "STARD")
        assert rec.n == sum(s == "STARD" for s in ds.studies)
        with pytest.raises(DomainError):
            loso(ds, tiny_hyper, "NOPE")
