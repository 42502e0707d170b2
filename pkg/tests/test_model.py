import numpy as np
import pytest

from shortfall.errors import SchemaError, ShapeError, ValidationError
from shortfall import model as M
from shortfall.nn import tensor as T
from shortfall.nn.gradcheck import grad_check
from shortfall.pipeline import Dataset, LaneKey, NormalizationStats, WindowSample
from shortfall.survival import HAZARD_FLOOR, ObservedOutcome, negative_log_likelihood

SMALL = M.ModelConfig(vocab_sizes=(3, 3, 5), input_dim=4, window_len=6,
                      encoder_hidden=5, embed_dim=3, group_mlp_hidden=6,
                      horizon=8)


def make_window(rng, config=SMALL):
    return rng.uniform(0.0, 1.0, (config.window_len, config.input_dim))


def make_ids(rng, config=SMALL):
    return np.array([rng.integers(0, v) for v in config.vocab_sizes], dtype=np.intp)


class TestForward:
    def test_phi_shape_single(self):
        store = M.init_params(SMALL, seed=0)
        rng = np.random.default_rng(1)
        phi = M.forward_phi(make_window(rng), make_ids(rng), store, SMALL)
        assert phi.data.shape == (SMALL.horizon,)

    def test_hazard_is_valid_probability(self):
        store = M.init_params(SMALL, seed=0)
        rng = np.random.default_rng(2)
        ck = M.ModelCheckpoint(SMALL, {k: v.data.copy() for k, v in
                                       store.params.items()}, {}, {})
        h = M.predict_hazard(make_window(rng), make_ids(rng), ck)
        assert h.shape == (SMALL.horizon,)
        assert (h >= HAZARD_FLOOR).all() and (h <= 1 - HAZARD_FLOOR).all()

    def test_group_ids_change_the_prediction(self):
        store = M.init_params(SMALL, seed=0)
        rng = np.random.default_rng(3)
        window = make_window(rng)
        ck = M.ModelCheckpoint(SMALL, {k: v.data.copy() for k, v in
                                       store.params.items()}, {}, {})
        h1 = M.predict_hazard(window, np.array([1, 1, 1]), ck)
        h2 = M.predict_hazard(window, np.array([2, 2, 2]), ck)
        assert np.abs(h1 - h2).max() > 1e-9

    def test_ablated_model_ignores_group_ids(self):
        config = M.ablate_homogeneous(SMALL)
        store = M.init_params(config, seed=0)
        rng = np.random.default_rng(4)
        window = make_window(rng, config)
        ck = M.ModelCheckpoint(config, {k: v.data.copy() for k, v in
                                        store.params.items()}, {}, {})
        h1 = M.predict_hazard(window, np.array([1, 1, 1]), ck)
        h2 = M.predict_hazard(window, np.array([2, 2, 4]), ck)
        np.testing.assert_array_equal(h1, h2)

    def test_rejects_out_of_vocab_ids(self):
        store = M.init_params(SMALL, seed=0)
        rng = np.random.default_rng(5)
        with pytest.raises(Exception):
            M.forward_phi(make_window(rng), np.array([0, 0, 99]), store, SMALL)

    def test_rejects_unnormalized_window(self):
        store = M.init_params(SMALL, seed=0)
        window = np.full((SMALL.window_len, SMALL.input_dim), 7.0)
        with pytest.raises(ValidationError):
            M.forward_phi(window, np.array([0, 0, 0]), store, SMALL)

    def test_rejects_wrong_window_shape(self):
        store = M.init_params(SMALL, seed=0)
        with pytest.raises((ShapeError, ValidationError)):
            M.forward_phi(np.zeros((3, 3)), np.array([0, 0, 0]), store, SMALL)

    def test_batched_matches_single(self):
        store = M.init_params(SMALL, seed=0)
        rng = np.random.default_rng(6)
        windows = np.stack([make_window(rng) for _ in range(3)])
        ids = np.stack([make_ids(rng) for _ in range(3)])
        batched = M._phi_batch(windows, ids, store, SMALL).data
        for i in range(3):
            single = M.forward_phi(windows[i], ids[i], store, SMALL).data
            np.testing.assert_allclose(batched[i], single, atol=1e-12)


class TestLoss:
    def outcomes(self):
        return [ObservedOutcome(3, 1), ObservedOutcome(8, 0), ObservedOutcome(1, 1)]

    def test_loss_equals_survival_nll_of_predicted_hazards(self):
        store = M.init_params(SMALL, seed=0)
        rng = np.random.default_rng(7)
        windows = np.stack([make_window(rng) for _ in range(3)])
        ids = np.stack([make_ids(rng) for _ in range(3)])
        outs = self.outcomes()
        loss = M.loss(windows, ids, outs, store, SMALL)
        ck = M.ModelCheckpoint(SMALL, {k: v.data.copy() for k, v in
                                       store.params.items()}, {}, {})
        hazards = np.stack([M.predict_hazard(windows[i], ids[i], ck)
                            for i in range(3)])
        expected = negative_log_likelihood(hazards, outs) / 3.0
        assert abs(float(loss.data) - expected) < 1e-10

    def test_full_loss_gradients_match_finite_differences(self):
        # Acceptance-level check at reduced size lives in test_acceptance;
        # this is a fast smoke at even smaller dimensions.
        config = M.ModelConfig(vocab_sizes=(2, 2, 3), input_dim=3, window_len=4,
                               encoder_hidden=3, embed_dim=2, group_mlp_hidden=3,
                               horizon=5)
        store = M.init_params(config, seed=1)
        rng = np.random.default_rng(8)
        windows = np.stack([make_window(rng, config) for _ in range(2)])
        ids = np.stack([make_ids(rng, config) for _ in range(2)])
        outs = [ObservedOutcome(2, 1), ObservedOutcome(5, 0)]

        def loss_fn(st):
            return M.loss(windows, ids, outs, st, config)

        report = grad_check(loss_fn, store, tolerance=1e-4,
                            max_entries=40, rng=np.random.default_rng(0))
        assert report.passed, report.worst()


class TestCheckpoint:
    def trained_checkpoint(self):
        store = M.init_params(SMALL, seed=2)
        return M.ModelCheckpoint(
            config=SMALL,
            params={k: v.data.copy() for k, v in store.params.items()},
            normalization={"mins": [0.0] * 4, "maxs": [1.0] * 4},
            metadata={"note": "fixture"})

    def test_round_trip_bit_identical(self, tmp_path):
        ck = self.trained_checkpoint()
        path = tmp_path / "model.json"
        M.save_checkpoint(ck, path)
        back = M.load_checkpoint(path)
        assert back.config == ck.config
        assert back.normalization == ck.normalization
        assert set(back.params) == set(ck.params)
        for name in ck.params:
            np.testing.assert_array_equal(back.params[name], ck.params[name])

    def test_round_trip_preserves_predictions(self, tmp_path):
        ck = self.trained_checkpoint()
        path = tmp_path / "model.json"
        M.save_checkpoint(ck, path)
        back = M.load_checkpoint(path)
        rng = np.random.default_rng(9)
        window, ids = make_window(rng), make_ids(rng)
        np.testing.assert_array_equal(
            M.predict_hazard(window, ids, ck),
            M.predict_hazard(window, ids, back))

    def test_malformed_file_raises_schema_error(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text("{]")
        with pytest.raises(SchemaError):
            M.load_checkpoint(path)

    def test_wrong_version_rejected(self, tmp_path):
        ck = self.trained_checkpoint()
        path = tmp_path / "model.json"
        M.save_checkpoint(ck, path)
        import json
        blob = json.loads(path.read_text())
        blob["format_version"] = 99
        path.write_text(json.dumps(blob))
        with pytest.raises(SchemaError):
            M.load_checkpoint(path)

    def test_tampered_shape_rejected(self, tmp_path):
        ck = self.trained_checkpoint()
        path = tmp_path / "model.json"
        M.save_checkpoint(ck, path)
        import json
        blob = json.loads(path.read_text())
        name = next(iter(blob["params"]))
        blob["params"][name]["shape"] = [1, 1]
        path.write_text(json.dumps(blob))
        with pytest.raises(SchemaError):
            M.load_checkpoint(path)


def tiny_dataset(n_train=24, n_val=8, seed=0, config=SMALL):
    rng = np.random.default_rng(seed)
    def sample(i, split):
        window = rng.uniform(0, 1, (config.window_len, config.input_dim))
        t = int(rng.integers(1, config.horizon + 1))
        y = int(rng.integers(0, 2)) if t < config.horizon else 0
        return WindowSample(
            key=LaneKey("S", "P", f"{split}{i}"),
            ids=np.array([1, 1, 1 + i % (config.vocab_sizes[2] - 1)], dtype=np.intp),
            window=window, outcome=ObservedOutcome(t, y), end_day=28)
    stats = NormalizationStats(mins=np.zeros(21), maxs=np.ones(21))
    return Dataset(train=[sample(i, "t") for i in range(n_train)],
                   validation=[sample(i, "v") for i in range(n_val)],
                   stats=stats, vocabularies={"site": {"S": 1}, "plant": {"P": 1},
                                              "part": {}}, summary={})


class TestTraining:
    def test_loss_decreases(self):
        ds = tiny_dataset()
        settings = M.TrainSettings(batch_size=8, max_epochs=5, patience=5, seed=0)
        ck = M.train(ds, SMALL, settings)
        history = ck.metadata["history"]
        assert history[-1]["train_nll"] < history[0]["train_nll"]

    def test_bit_identical_under_same_seed(self):
        ds = tiny_dataset()
        settings = M.TrainSettings(batch_size=8, max_epochs=3, patience=5, seed=4)
        a = M.train(ds, SMALL, settings)
        b = M.train(ds, SMALL, settings)
        for name in a.params:
            np.testing.assert_array_equal(a.params[name], b.params[name])
        assert a.metadata["history"] == b.metadata["history"]

    def test_early_stopping_keeps_best_epoch(self):
        ds = tiny_dataset()
        settings = M.TrainSettings(batch_size=8, max_epochs=6, patience=2, seed=1)
        ck = M.train(ds, SMALL, settings)
        history = ck.metadata["history"]
        best = min(h["val_nll"] for h in history)
        assert abs(ck.metadata["best_val_nll"] - best) < 1e-12


class TestConfig:
    def test_ablate_flips_flag_only(self):
        ab = M.ablate_homogeneous(SMALL)
        assert not ab.heterogeneous
        assert ab.vocab_sizes == SMALL.vocab_sizes
        assert ab.horizon == SMALL.horizon

    def test_config_round_trip(self):
        d = SMALL.to_dict()
        assert M.ModelConfig.from_dict(d) == SMALL

    def test_init_draw_order_stable(self):
        a = M.init_params(SMALL, seed=6)
        b = M.init_params(SMALL, seed=6)
        assert a.names() == b.names()
        for name in a.names():
            np.testing.assert_array_equal(a[name].data, b[name].data)
