"""Tests for the downstream classifier and regressor stage.

The gradient checks against central finite differences are the load
bearing part: every later training claim rests on them.
"""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from graphmix.classifiers import (
    ClassifierConfig,
    adam_step,
    export_predictions,
    init_classifier,
    load_classifier,
    loss_and_gradients,
    predict,
    save_classifier,
    score,
    train_classifier,
)
from graphmix.errors import ConfigError, FormatError, NumericalError
from graphmix.fileio import write_container

from oracles import micro_f1_loops


def separable_data(n=40, seed=0):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, 2))
    y = (x @ [1.5, -2.0] > 0).astype(np.int64)
    x[y == 1] += [0.5, -0.5]
    x[y == 0] -= [0.5, -0.5]
    return x, y


def numeric_grads(params, x, y, h=1e-6):
    grads = []
    for a in params.arrays():
        g = np.zeros_like(a)
        it = np.nditer(a, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            kept = a[idx]
            a[idx] = kept + h
            up, _ = loss_and_gradients(params, x, y)
            a[idx] = kept - h
            down, _ = loss_and_gradients(params, x, y)
            a[idx] = kept
            g[idx] = (up - down) / (2 * h)
        grads.append(g)
    return grads


def randomized(params, seed=0, scale=0.5):
    rng = np.random.default_rng(seed)
    for a in params.arrays():
        a += rng.normal(0.0, scale, a.shape)
    return params


class TestConfigValidation:
    def test_unknown_architecture(self):
        with pytest.raises(ConfigError, match="architecture"):
            init_classifier(ClassifierConfig(architecture="deep"), 2, 2)

    def test_hidden_units_floor(self):
        cfg = ClassifierConfig(architecture="one-hidden", hidden_units=0)
        with pytest.raises(ConfigError, match="hidden_units"):
            init_classifier(cfg, 2, 2)

    def test_patience_capped_by_epochs(self):
        cfg = ClassifierConfig(patience=30, max_epochs=10)
        with pytest.raises(ConfigError, match="patience"):
            init_classifier(cfg, 2, 2)

    def test_unknown_metric(self):
        with pytest.raises(ConfigError, match="metric"):
            init_classifier(ClassifierConfig(metric="auc"), 2, 2)

    def test_rate_and_batch_positivity(self):
        with pytest.raises(ConfigError):
            init_classifier(ClassifierConfig(learning_rate=0.0), 2, 2)
        with pytest.raises(ConfigError):
            init_classifier(ClassifierConfig(batch_size=0), 2, 2)
        with pytest.raises(ConfigError):
            init_classifier(ClassifierConfig(l2=-0.1), 2, 2)


class TestForward:
    def test_zero_init_is_uniform(self):
        params = init_classifier(ClassifierConfig(), 4, 3)
        probs = predict(params, np.random.default_rng(0).normal(size=(5, 4)))
        assert_allclose(probs, np.full((5, 3), 1.0 / 3.0), rtol=1e-12)

    def test_zero_init_cross_entropy_is_log_classes(self):
        params = init_classifier(ClassifierConfig(), 4, 3)
        x = np.random.default_rng(1).normal(size=(6, 4))
        y = np.array([0, 1, 2, 0, 1, 2])
        loss, _ = loss_and_gradients(params, x, y)
        assert_allclose(loss, 1.0986122886681098, rtol=1e-12)

    def test_hand_checked_two_class_forward(self):
        params = init_classifier(ClassifierConfig(), 2, 2)
        params.weights[0][:] = np.eye(2)
        params.biases[0][:] = [0.5, -0.5]
        probs = predict(params, np.array([[0.2, 0.6]]))
        assert_allclose(probs[0], [0.6456563062257955, 0.35434369377420455],
                        rtol=1e-15)

    def test_rows_sum_to_one(self):
        cfg = ClassifierConfig(architecture="one-hidden", hidden_units=7)
        params = randomized(init_classifier(cfg, 5, 4), scale=2.0)
        probs = predict(params, np.random.default_rng(2).normal(size=(9, 5)))
        assert np.abs(probs.sum(axis=1) - 1.0).max() < 1e-9

    def test_width_mismatch_rejected(self):
        params = init_classifier(ClassifierConfig(), 4, 2)
        with pytest.raises(ConfigError, match="wide"):
            predict(params, np.zeros((3, 5)))


class TestGradients:
    def check(self, params, x, y):
        _, analytic = loss_and_gradients(params, x, y)
        for got, want in zip(analytic, numeric_grads(params, x, y)):
            assert_allclose(got, want, rtol=1e-5, atol=1e-7)

    def test_linear_cross_entropy(self):
        params = randomized(init_classifier(ClassifierConfig(), 4, 3), 3)
        x = np.random.default_rng(4).normal(size=(6, 4))
        self.check(params, x, np.array([0, 2, 1, 1, 0, 2]))

    def test_hidden_cross_entropy(self):
        cfg = ClassifierConfig(architecture="one-hidden", hidden_units=3)
        params = randomized(init_classifier(cfg, 4, 3), 5)
        x = np.random.default_rng(6).normal(size=(6, 4))
        self.check(params, x, np.array([2, 0, 1, 2, 1, 0]))

    def test_linear_squared_error(self):
        params = init_classifier(ClassifierConfig(), 3, 1, output="identity")
        randomized(params, 7)
        x = np.random.default_rng(8).normal(size=(5, 3))
        self.check(params, x, np.random.default_rng(9).normal(size=5))

    def test_hidden_squared_error_indicators(self):
        cfg = ClassifierConfig(architecture="one-hidden", hidden_units=4)
        params = init_classifier(cfg, 3, 2, output="identity")
        randomized(params, 10)
        x = np.random.default_rng(11).normal(size=(5, 3))
        y = np.random.default_rng(12).integers(0, 2, size=(5, 2)).astype(float)
        self.check(params, x, y)

    def test_l2_term(self):
        params = randomized(init_classifier(ClassifierConfig(l2=0.3), 3, 2),
                            13)
        x = np.random.default_rng(14).normal(size=(4, 3))
        self.check(params, x, np.array([0, 1, 1, 0]))

    @settings(max_examples=15, deadline=None)
    @given(st.integers(0, 10_000))
    def test_gradients_match_differences(self, seed):
        rng = np.random.default_rng(seed)
        params = randomized(init_classifier(ClassifierConfig(), 3, 2),
                            seed + 1)
        x = rng.normal(size=(4, 3))
        self.check(params, x, rng.integers(0, 2, size=4))


class TestAdam:
    def test_first_step_is_damped_sign(self):
        cfg = ClassifierConfig(learning_rate=0.01)
        params = init_classifier(cfg, 1, 1, output="identity")
        params.weights[0][:] = 1.0
        grads = [np.full((1, 1), 0.5), np.zeros(1)]
        adam_step(params, grads)
        assert params.step == 1
        assert_allclose(params.weights[0][0, 0], 0.9900000002, rtol=1e-12)

    def test_penalty_shrinks_weights_on_frozen_batch(self):
        """Same data, same steps: the penalized run ends smaller."""
        x = np.random.default_rng(15).normal(size=(12, 3))
        y = np.random.default_rng(16).integers(0, 2, size=12)
        norms = []
        for l2 in (0.0, 0.5):
            cfg = ClassifierConfig(learning_rate=0.05, l2=l2)
            params = randomized(init_classifier(cfg, 3, 2), 17, scale=1.0)
            for _ in range(300):
                _, grads = loss_and_gradients(params, x, y)
                adam_step(params, grads)
            norms.append(float(np.linalg.norm(params.weights[0])))
        assert norms[1] < norms[0]


class TestTraining:
    def test_separable_data_reaches_full_accuracy(self):
        x, y = separable_data()
        cfg = ClassifierConfig(learning_rate=0.1, batch_size=8,
                               max_epochs=200, patience=200)
        params = train_classifier(x, y, x[:8], y[:8], cfg)
        assert score(predict(params, x), y, "accuracy") == 1.0
        assert params.epoch <= 200

    def test_patience_zero_is_one_epoch(self):
        x, y = separable_data(20)
        cfg = ClassifierConfig(patience=0, max_epochs=50)
        params = train_classifier(x, y, x[:5], y[:5], cfg)
        assert params.epoch == 1
        assert len(params.history["loss"]) == 1

    def test_deterministic_given_seed(self):
        x, y = separable_data(30, seed=2)
        cfg = ClassifierConfig(architecture="one-hidden", hidden_units=5,
                               max_epochs=20, patience=20, seed=11)
        a = train_classifier(x, y, x[:6], y[:6], cfg)
        b = train_classifier(x, y, x[:6], y[:6], cfg)
        for wa, wb in zip(a.arrays(), b.arrays()):
            assert np.array_equal(wa, wb)
        assert a.history == b.history

    def test_snapshot_is_best_validation_epoch(self):
        rng = np.random.default_rng(18)
        x = rng.normal(size=(40, 6))
        y = rng.integers(0, 2, size=40)
        cfg = ClassifierConfig(learning_rate=0.2, max_epochs=30, patience=30,
                               batch_size=10)
        params = train_classifier(x[:30], y[:30], x[30:], y[30:], cfg)
        vals = params.history["val"]
        assert params.best_metric == max(vals)
        assert params.snapshot_epoch == int(np.argmax(vals)) + 1
        restored = score(predict(params, x[30:]), y[30:], "accuracy")
        assert restored == params.best_metric

    def test_divergence_reports_learning_rate(self):
        x, y = separable_data(16, seed=3)
        cfg = ClassifierConfig(metric="mae", max_epochs=5, patience=5)
        params = init_classifier(cfg, 2, 1, output="identity")
        params.weights[0][:] = 1e200
        with pytest.raises(NumericalError, match="learning rate"):
            train_classifier(x, y.astype(float), x[:4], y[:4].astype(float),
                             cfg, params=params)

    def test_empty_validation_rejected(self):
        x, y = separable_data(10)
        with pytest.raises(ConfigError, match="validation"):
            train_classifier(x, y, x[:0], y[:0], ClassifierConfig())

    def test_validation_width_must_match(self):
        x, y = separable_data(10)
        with pytest.raises(ConfigError, match="width"):
            train_classifier(x, y, np.zeros((2, 3)), y[:2],
                             ClassifierConfig())

    def test_metric_target_mismatch(self):
        x, y = separable_data(10)
        with pytest.raises(ConfigError, match="does not apply"):
            train_classifier(x, y.astype(float), x[:2], y[:2].astype(float),
                             ClassifierConfig(metric="accuracy"))

    def test_multi_label_micro_f1_path(self):
        rng = np.random.default_rng(19)
        x = rng.normal(size=(24, 4))
        y = (x @ rng.normal(size=(4, 3)) > 0).astype(float)
        cfg = ClassifierConfig(metric="micro-f1", learning_rate=0.05,
                               max_epochs=40, patience=40)
        params = train_classifier(x[:18], y[:18], x[18:], y[18:], cfg)
        assert params.output == "identity"
        assert 0.0 <= params.best_metric <= 1.0
        assert len(params.history["val"]) == params.epoch

    def test_linear_regression_recovers_map(self):
        rng = np.random.default_rng(20)
        x = rng.normal(size=(60, 3))
        y = x @ np.array([0.7, -1.2, 0.4]) + 0.1
        cfg = ClassifierConfig(metric="mae", learning_rate=0.05,
                               max_epochs=400, patience=400)
        params = train_classifier(x[:50], y[:50], x[50:], y[50:], cfg)
        assert score(predict(params, x[50:]), y[50:], "mae") < 0.05


class TestColumnPermutation:
    def test_linear_metric_history_invariant(self):
        x, y = separable_data(36, seed=4)
        x = np.hstack([x, np.random.default_rng(5).normal(size=(36, 3))])
        perm = np.array([3, 0, 4, 1, 2])
        cfg = ClassifierConfig(learning_rate=0.05, max_epochs=25, patience=25)
        a = train_classifier(x[:28], y[:28], x[28:], y[28:], cfg)
        b = train_classifier(x[:28, perm], y[:28], x[28:, perm], y[28:], cfg)
        assert a.history["val"] == b.history["val"]
        assert_allclose(a.history["loss"], b.history["loss"], rtol=1e-9)

    def test_hidden_with_permuted_init(self):
        x, y = separable_data(36, seed=6)
        x = np.hstack([x, np.random.default_rng(7).normal(size=(36, 2))])
        perm = np.array([2, 0, 3, 1])
        cfg = ClassifierConfig(architecture="one-hidden", hidden_units=6,
                               learning_rate=0.05, max_epochs=25, patience=25)
        a = init_classifier(cfg, 4, 2)
        b = a.copy()
        b.weights[0] = a.weights[0][perm].copy()
        trained_a = train_classifier(x[:28], y[:28], x[28:], y[28:], cfg,
                                     params=a)
        trained_b = train_classifier(x[:28, perm], y[:28], x[28:, perm],
                                     y[28:], cfg, params=b)
        assert trained_a.history["val"] == trained_b.history["val"]


class TestScore:
    def test_all_correct(self):
        probs = np.eye(3)
        assert score(probs, np.array([0, 1, 2]), "accuracy") == 1.0

    def test_all_wrong_binary(self):
        probs = np.array([[0.9, 0.1], [0.2, 0.8]])
        assert score(probs, np.array([1, 0]), "accuracy") == 0.0

    def test_micro_f1_crafted_table(self):
        pred = np.array([[1, 1, 0], [0, 1, 1], [1, 0, 0], [0, 0, 1]],
                        dtype=float)
        true = np.array([[1, 0, 0], [0, 1, 0], [1, 1, 0], [0, 0, 1]],
                        dtype=float)
        got = score(pred, true, "micro-f1")
        assert_allclose(got, 8 / 11, rtol=1e-15)
        assert_allclose(got, micro_f1_loops(pred.astype(bool),
                                            true.astype(bool)), rtol=1e-15)

    def test_micro_f1_single_label_equals_accuracy(self):
        rng = np.random.default_rng(21)
        probs = rng.random((30, 4))
        probs /= probs.sum(axis=1, keepdims=True)
        y = rng.integers(0, 4, size=30)
        assert_allclose(score(probs, y, "micro-f1"),
                        score(probs, y, "accuracy"), rtol=1e-12)

    def test_micro_f1_no_hits_is_zero(self):
        pred = np.zeros((3, 2))
        true = np.ones((3, 2))
        assert score(pred, true, "micro-f1") == 0.0

    def test_mae(self):
        assert_allclose(score(np.array([1.0, 2.0]), np.array([0.0, 4.0]),
                              "mae"), 1.5, rtol=1e-15)


class TestCheckpoint:
    def trained(self):
        x, y = separable_data(24, seed=8)
        cfg = ClassifierConfig(architecture="one-hidden", hidden_units=4,
                               max_epochs=15, patience=15, seed=3)
        return train_classifier(x, y, x[:5], y[:5], cfg), x

    def test_round_trip(self, tmp_path):
        params, x = self.trained()
        path = tmp_path / "model.bin"
        save_classifier(params, path)
        back = load_classifier(path)
        assert np.array_equal(predict(back, x), predict(params, x))
        for a, b in zip(params.moment2, back.moment2):
            assert np.array_equal(a, b)
        assert back.snapshot_epoch == params.snapshot_epoch
        assert back.best_metric == params.best_metric
        assert back.config == params.config
        assert back.history["loss"] == params.history["loss"]

    def test_foreign_magic_rejected(self, tmp_path):
        path = tmp_path / "other.bin"
        write_container(path, b"XOXO", 1, {}, {})
        with pytest.raises(FormatError):
            load_classifier(path)


class TestExportPredictions:
    def test_probability_rows(self, tmp_path):
        probs = np.array([[0.25, 0.75], [0.9, 0.1]])
        path = tmp_path / "pred.csv"
        export_predictions(probs, path, ids=np.array([4, 7]))
        lines = path.read_text().splitlines()
        assert lines[0] == "graph_id,label,p_0,p_1"
        first = lines[1].split(",")
        assert first[:2] == ["4", "1"]
        assert [float(v) for v in first[2:]] == [0.25, 0.75]

    def test_value_rows(self, tmp_path):
        path = tmp_path / "pred.csv"
        export_predictions(np.array([1.5, -2.0]), path)
        lines = path.read_text().splitlines()
        assert lines[0] == "graph_id,value"
        assert lines[2].split(",") == ["1", "-2"]

    def test_id_count_must_match(self, tmp_path):
        with pytest.raises(ConfigError):
            export_predictions(np.zeros((3, 2)), tmp_path / "p.csv",
                               ids=np.array([1]))
