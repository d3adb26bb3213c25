import math

import numpy as np
import pytest

from dpnn.errors import DomainError, DpnnError, NumericError, ValidationError
from dpnn.model import Hyperparams, model_to_json
from dpnn.trainer import GridSpec, grid_search, train


class TestTrain:
    def test_trace_length_and_finite(self, small_data, tiny_hyper):
        ds, _ = small_data
        r = train(ds, tiny_hyper)
        assert r.epochs_run == tiny_hyper.epochs == len(r.trace)
        assert all(math.isfinite(b.total) for b in r.trace)
        assert r.seed == tiny_hyper.seed

    def test_deterministic(self, small_data, tiny_hyper):
        ds, _ = small_data
        a = train(ds, tiny_hyper)
        b = train(ds, tiny_hyper)
        assert model_to_json(a.model) == model_to_json(b.model)

    def test_seed_changes_model(self, small_data, tiny_hyper):
        ds, _ = small_data
        a = train(ds, tiny_hyper)
        b = train(ds, tiny_hyper.replace(seed=1))
        assert model_to_json(a.model) != model_to_json(b.model)

    def test_reconstruction_improves(self, small_data):
        ds, _ = small_data
        r = train(ds, Hyperparams(epochs=15, lambda_pv=0.0, learning_rate=1e-2))
        assert r.trace[-1].ae_term < r.trace[0].ae_term

    def test_loss_decreases(self, small_data):
        ds, _ = small_data
        r = train(ds, Hyperparams(epochs=15, learning_rate=1e-2))
        assert r.trace[-1].total < r.trace[0].total

    def test_scaling_from_data(self, small_data, tiny_hyper):
        ds, _ = small_data
        m = train(ds, tiny_hyper).model
        assert np.allclose(m.scale_mean, ds.features.mean(axis=0))

    def test_zero_epochs(self, small_data, tiny_hyper):
        ds, _ = small_data
        assert train(ds, tiny_hyper.replace(epochs=0)).epochs_run == 0

    def test_early_stopping(self, small_data):
        ds, _ = small_data
        r = train(ds, Hyperparams(epochs=400, patience=2, learning_rate=0.05, latent_dim=4))
        assert r.stopped_early and r.epochs_run < 400

    def test_single_class_rejected(self, small_data, tiny_hyper):
        ds, _ = small_data
        with pytest.raises(DomainError):
            train(ds.subset(np.flatnonzero(ds.remission == 1)), tiny_hyper)

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_divergence_reported(self, small_data, tiny_hyper):
        ds, _ = small_data
        with pytest.raises(NumericError, match="epoch 0"):
            train(ds, tiny_hyper.replace(learning_rate=1e308, lambda_ae=1e308))

    def test_invalid_hyperparams(self, small_data):
        ds, _ = small_data
        with pytest.raises(ValidationError):
            train(ds, Hyperparams(batch_size=0))


class TestGridSearch:
    def test_spec_validation(self):
        with pytest.raises(ValidationError):
            GridSpec({})
        with pytest.raises(ValidationError):
            GridSpec({"nope": [1]})
        with pytest.raises(ValidationError):
            GridSpec({"epochs": [1]}, folds=1)

    def test_cells_cartesian(self):
        g = GridSpec({"n_prototypes": [3, 4], "latent_dim": [2, 4, 8]})
        cells = g.cells()
        assert len(cells) == 6 and cells[0] == {"n_prototypes": 3, "latent_dim": 2}

    def test_search_picks_best_and_is_deterministic(self, small_data):
        ds, _ = small_data
        grid = GridSpec({"n_prototypes": [3, 4]}, folds=2, base={"epochs": 2, "latent_dim": 3})
        best, cells = grid_search(ds, grid, seed=1)
        best2, cells2 = grid_search(ds, grid, seed=1)
        assert [c.mean_auc for c in cells] == [c.mean_auc for c in cells2]
        top = max(cells, key=lambda c: c.mean_auc)
        assert best.n_prototypes == top.hyperparams.n_prototypes
        assert all(len(c.fold_aucs) == 2 for c in cells)

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_all_cells_fail(self, small_data):
        ds, _ = small_data
        grid = GridSpec({"lambda_ae": [1e300, 1e308]}, folds=2, base={"epochs": 1, "learning_rate": 1e308})
        with pytest.raises(DpnnError, match="every grid cell failed"):
            grid_search(ds, grid)

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_partial_failure(self, small_data):
        ds, _ = small_data
        grid = GridSpec({"learning_rate": [1e-3, 1e308]}, folds=2, base={"epochs": 1, "lambda_ae": 1e300})
        best, cells = grid_search(ds, grid)
        assert cells[1].error is not None and cells[1].mean_auc is None
        assert best.learning_rate == 1e-3
