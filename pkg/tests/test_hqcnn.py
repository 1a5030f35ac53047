import dataclasses

import numpy as np
import pytest

from src.config import HqcnnConfig, OptimizerConfig, TrainConfig
from src.dataset_io import LabeledDataset
from src.errors import ArgumentError, ShapeError
from src.hqcnn import (
    build_hqcnn, hqcnn_evaluate, hqcnn_forward, hqcnn_loss_grad, hqcnn_predict, hqcnn_train,
    load_hqcnn, save_hqcnn,
)


def mean_loss(model, images, labels):
    return float(np.mean([-np.log(hqcnn_forward(model, img)[lbl]) for img, lbl in zip(images, labels)]))


def flat_parameters(model):
    return np.concatenate([v.reshape(-1) for group in model.parameters() for v in group.values()])


class TestModel:
    def test_parameter_count(self):
        model = build_hqcnn(HqcnnConfig(), np.random.default_rng(0))
        # conv 4*9+4, linear 36*4+4, theta 2*4*2, readout 4*3+3
        assert model.parameter_count() == 40 + 148 + 16 + 15

    def test_forward_is_distribution(self, small_hqcnn_config, digits_8x8):
        model = build_hqcnn(small_hqcnn_config, np.random.default_rng(1))
        probs = hqcnn_forward(model, digits_8x8.images[0])
        assert probs.shape == (3,)
        assert probs.sum() == pytest.approx(1.0)

    def test_zero_readout_gives_uniform(self, small_hqcnn_config, digits_8x8):
        model = build_hqcnn(small_hqcnn_config, np.random.default_rng(1))
        model.readout.weights = model.readout.zero_grads()
        np.testing.assert_allclose(hqcnn_forward(model, digits_8x8.images[3]), [1 / 3] * 3, atol=1e-15)

    def test_predict_confidence(self, small_hqcnn_config, digits_8x8):
        model = build_hqcnn(small_hqcnn_config, np.random.default_rng(1))
        label, confidence = hqcnn_predict(model, digits_8x8.images[0][0])
        probs = hqcnn_forward(model, digits_8x8.images[0])
        assert label == int(np.argmax(probs))
        assert confidence == pytest.approx(probs.max())

    def test_wrong_image_shape(self, small_hqcnn_config):
        model = build_hqcnn(small_hqcnn_config, np.random.default_rng(1))
        with pytest.raises(ShapeError):
            hqcnn_forward(model, np.zeros((1, 7, 7)))

    def test_measured_subset(self, digits_8x8):
        config = HqcnnConfig(image_size=8, conv_channels=2, n_qubits=3, depth=1, measured=[0, 2])
        model = build_hqcnn(config, np.random.default_rng(2))
        assert model.readout.specs[0].fan_in == 2
        assert hqcnn_forward(model, digits_8x8.images[0]).shape == (3,)


class TestGradient:
    def test_hybrid_gradient_matches_finite_difference(self, digits_8x8, numeric_grad):
        model = build_hqcnn(HqcnnConfig(image_size=8, conv_channels=4, n_qubits=4, depth=2),
                            np.random.default_rng(11))
        images = digits_8x8.images[[0, 15]]
        labels = digits_8x8.labels[[0, 15]]
        _, grads = hqcnn_loss_grad(model, images, labels)

        params = model.parameters()
        for index, group in enumerate(params):
            for key, value in group.items():
                def loss(v, index=index, key=key):
                    trial = model.parameters()
                    trial[index] = dict(trial[index], **{key: v})
                    saved = model.parameters()
                    model.set_parameters(trial)
                    result = mean_loss(model, images, labels)
                    model.set_parameters(saved)
                    return result
                fd = numeric_grad(loss, value)
                np.testing.assert_allclose(grads[index][key], fd, rtol=1e-3, atol=1e-6)

    def test_duplicated_sample_matches_single(self, small_hqcnn_config, digits_8x8):
        model = build_hqcnn(small_hqcnn_config, np.random.default_rng(2))
        image, label = digits_8x8.images[4], digits_8x8.labels[4]
        loss_one, grads_one = hqcnn_loss_grad(model, image[None], [label])
        loss_two, grads_two = hqcnn_loss_grad(model, np.stack([image, image]), [label, label])
        assert loss_two == pytest.approx(loss_one, rel=1e-12)
        for one, two in zip(grads_one, grads_two):
            for key in one:
                np.testing.assert_allclose(two[key], one[key], rtol=1e-12, atol=1e-15)

    def test_empty_batch(self, small_hqcnn_config):
        model = build_hqcnn(small_hqcnn_config, np.random.default_rng(0))
        with pytest.raises(ShapeError):
            hqcnn_loss_grad(model, np.zeros((0, 1, 8, 8)), [])


class TestTraining:
    def test_loss_decreases(self, small_hqcnn_config, digits_8x8):
        model = build_hqcnn(small_hqcnn_config, np.random.default_rng(4))
        config = TrainConfig(epochs=5, batch_size=5, seed=0, optimizer=OptimizerConfig("adam", 0.05))
        _, history = hqcnn_train(model, digits_8x8, config)
        losses = history.losses()
        assert len(losses) == 5
        assert losses[-1] < losses[0]

    def test_zero_epochs_leaves_model(self, small_hqcnn_config, digits_8x8):
        model = build_hqcnn(small_hqcnn_config, np.random.default_rng(4))
        trained, history = hqcnn_train(model, digits_8x8, TrainConfig(epochs=0))
        assert len(history) == 0
        np.testing.assert_array_equal(flat_parameters(trained), flat_parameters(model))

    def test_input_model_not_mutated(self, small_hqcnn_config, digits_8x8, fast_train_config):
        model = build_hqcnn(small_hqcnn_config, np.random.default_rng(4))
        before = flat_parameters(model)
        hqcnn_train(model, digits_8x8, dataclasses.replace(fast_train_config, epochs=1))
        np.testing.assert_array_equal(flat_parameters(model), before)

    def test_deterministic(self, small_hqcnn_config, digits_8x8, fast_train_config):
        runs = [hqcnn_train(build_hqcnn(small_hqcnn_config, np.random.default_rng(4)), digits_8x8,
                            fast_train_config)[0] for _ in range(2)]
        np.testing.assert_array_equal(flat_parameters(runs[0]), flat_parameters(runs[1]))

    def test_eval_set_adds_test_accuracy(self, small_hqcnn_config, digits_8x8, digits_test_8x8):
        model = build_hqcnn(small_hqcnn_config, np.random.default_rng(4))
        _, history = hqcnn_train(model, digits_8x8, TrainConfig(epochs=1, batch_size=10), digits_test_8x8)
        assert 0.0 <= history.records[0].test_accuracy <= 1.0

    def test_history_keeps_optimizer(self, small_hqcnn_config, digits_8x8, fast_train_config):
        model = build_hqcnn(small_hqcnn_config, np.random.default_rng(4))
        _, history = hqcnn_train(model, digits_8x8, fast_train_config)
        # 30 images in batches of 5 for two epochs
        assert history.optimizer.step == 12
        assert len(history.optimizer.m) == len(model.parameters())

    def test_sgd_optimizer(self, small_hqcnn_config, digits_8x8):
        model = build_hqcnn(small_hqcnn_config, np.random.default_rng(4))
        config = TrainConfig(epochs=1, batch_size=30, optimizer=OptimizerConfig("sgd", 0.1))
        trained, _ = hqcnn_train(model, digits_8x8, config)
        assert not np.array_equal(flat_parameters(trained), flat_parameters(model))

    def test_empty_train_set(self, small_hqcnn_config):
        model = build_hqcnn(small_hqcnn_config, np.random.default_rng(4))
        empty = LabeledDataset(np.zeros((0, 1, 8, 8)), np.zeros(0), ("0", "1", "2"))
        with pytest.raises(ArgumentError):
            hqcnn_train(model, empty, TrainConfig())


class TestEvaluation:
    def test_report_fields(self, small_hqcnn_config, digits_test_8x8):
        model = build_hqcnn(small_hqcnn_config, np.random.default_rng(4))
        report = hqcnn_evaluate(model, digits_test_8x8)
        assert report.per_class_count == [6, 6, 6]
        assert np.sum(report.confusion) == 18
        assert report.average_accuracy == pytest.approx(np.mean(report.per_class_accuracy))
        assert all(1 / 3 <= c <= 1 for c in report.per_class_confidence)

    def test_absent_class_is_undefined(self, small_hqcnn_config, digits_test_8x8):
        model = build_hqcnn(small_hqcnn_config, np.random.default_rng(4))
        keep = digits_test_8x8.labels < 2
        partial = LabeledDataset(digits_test_8x8.images[keep], digits_test_8x8.labels[keep], ("0", "1", "2"))
        report = hqcnn_evaluate(model, partial)
        assert report.per_class_accuracy[2] is None
        assert report.per_class_confidence[2] is None
        assert report.per_class_count[2] == 0

    def test_empty_test_set(self, small_hqcnn_config):
        model = build_hqcnn(small_hqcnn_config, np.random.default_rng(4))
        with pytest.raises(ArgumentError):
            hqcnn_evaluate(model, LabeledDataset(np.zeros((0, 1, 8, 8)), np.zeros(0), ("0", "1", "2")))


class TestCheckpoint:
    def test_round_trip_predictions(self, tmp_path, small_hqcnn_config, digits_test_8x8):
        model = build_hqcnn(small_hqcnn_config, np.random.default_rng(4))
        path = save_hqcnn(tmp_path / "model.json", model, seed=4)
        restored = load_hqcnn(path)
        for image in digits_test_8x8.images[:5]:
            np.testing.assert_array_equal(hqcnn_forward(restored, image), hqcnn_forward(model, image))
        assert restored.config == model.config
