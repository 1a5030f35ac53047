import dataclasses
import math

import numpy as np
import pytest

from src import qgan
from src.config import GanTrainConfig, QganConfig
from src.errors import ArgumentError, ShapeError
from src.qgan import (
    build_classical_gan, build_qgan, floor_weights, generate_samples, generator_forward, load_gan,
    per_class_conditioning, save_gan, total_variation, train_born_qgan, train_class_generators,
    train_classical_gan, train_qgan,
)


def flat(weights):
    return np.concatenate([v.reshape(-1) for group in weights for v in group.values()])


class TestModels:
    def test_generator_output(self, small_gan_config):
        model = build_qgan(small_gan_config.model, np.random.default_rng(0))
        image = generator_forward(model, [0.1, -0.2])
        assert image.shape == (1, 8, 8)
        assert image.min() >= 0.0 and image.max() <= 1.0

    def test_noise_length_checked(self, small_gan_config):
        model = build_qgan(small_gan_config.model, np.random.default_rng(0))
        with pytest.raises(ShapeError):
            generator_forward(model, [0.1, 0.2, 0.3])

    def test_parameter_counts(self):
        config = QganConfig()
        model = build_qgan(config, np.random.default_rng(0))
        pixels = 64
        post = 4 * 32 + 32 + 32 * pixels + pixels
        disc = pixels * 64 + 64 + 64 * 32 + 32 + 32 + 1
        assert model.parameter_counts() == {"generator": 16 + post, "discriminator": disc}

    def test_classical_generator_counts(self):
        model = build_classical_gan(QganConfig(), np.random.default_rng(0))
        assert model.kind == "cgan"
        assert model.parameter_counts()["generator"] == 4 * 32 + 32 + 32 * 64 + 64

    def test_distinct_noise_distinct_images(self, small_gan_config):
        model = build_qgan(small_gan_config.model, np.random.default_rng(0))
        a = generator_forward(model, [0.1, -0.2])
        b = generator_forward(model, [1.3, 2.0])
        assert not np.array_equal(a, b)

    def test_seeds_give_different_samples(self, small_gan_config):
        model = build_qgan(small_gan_config.model, np.random.default_rng(0))
        a = np.stack(generate_samples(model, 4, seed=1))
        b = np.stack(generate_samples(model, 4, seed=2))
        assert not np.allclose(a, b)

    def test_generate_samples_deterministic(self, small_gan_config):
        model = build_qgan(small_gan_config.model, np.random.default_rng(0))
        a = generate_samples(model, 3, seed=1)
        b = generate_samples(model, 3, seed=1)
        assert len(a) == 3
        for x, y in zip(a, b):
            np.testing.assert_array_equal(x, y)
        assert generate_samples(model, 0, seed=1) == []

    def test_quantum_generator_gradient(self, numeric_grad):
        config = QganConfig(n_qubits=2, depth=1, post_hidden=3, disc_hidden=[4], image_size=2)
        gen = build_qgan(config, np.random.default_rng(3)).generator
        rng = np.random.default_rng(4)
        noise = rng.uniform(-np.pi, np.pi, size=(3, 2))
        r = rng.normal(size=(3, 4))
        _, cache = gen.forward(noise)
        grads = gen.backward(cache, r)

        params = gen.parameters()
        for index, group in enumerate(params):
            for key, value in group.items():
                def loss(v, index=index, key=key):
                    saved = gen.parameters()
                    trial = list(saved)
                    trial[index] = dict(trial[index], **{key: v})
                    gen.set_parameters(trial)
                    result = float(np.sum(gen.forward(noise)[0] * r))
                    gen.set_parameters(saved)
                    return result
                np.testing.assert_allclose(grads[index][key], numeric_grad(loss, value), rtol=1e-4, atol=1e-7)


class TestTraining:
    def test_history_length_and_flag(self, small_gan_config, digits_8x8):
        train = digits_8x8
        model, history = train_qgan(small_gan_config, train)
        assert model.trained
        assert len(history) == small_gan_config.epochs * math.ceil(len(train) / small_gan_config.batch_size)
        frame = history.to_frame()
        assert list(frame.columns) == ["step", "d_loss", "g_loss", "V"]
        assert frame["step"].tolist() == list(range(1, len(history) + 1))
        assert history.metadata["generator"] == model.parameter_counts()["generator"]

    def test_deterministic(self, small_gan_config, digits_8x8):
        a, ha = train_qgan(small_gan_config, digits_8x8)
        b, hb = train_qgan(small_gan_config, digits_8x8)
        np.testing.assert_array_equal(flat(a.generator.parameters()), flat(b.generator.parameters()))
        assert ha.d_loss == hb.d_loss

    def test_zero_epochs(self, small_gan_config, digits_8x8):
        config = dataclasses.replace(small_gan_config, epochs=0)
        initial = build_qgan(config.model, np.random.default_rng(config.seed))
        model, history = train_qgan(config, digits_8x8)
        assert len(history) == 0
        assert not model.trained
        np.testing.assert_array_equal(flat(model.generator.parameters()), flat(initial.generator.parameters()))

    def test_given_model_not_mutated(self, small_gan_config, digits_8x8):
        start = build_qgan(small_gan_config.model, np.random.default_rng(0))
        before = flat(start.generator.parameters())
        trained, _ = train_qgan(small_gan_config, digits_8x8, model=start)
        np.testing.assert_array_equal(flat(start.generator.parameters()), before)
        assert not np.array_equal(flat(trained.generator.parameters()), before)

    def test_image_size_mismatch(self, small_gan_config, digits_8x8):
        config = dataclasses.replace(small_gan_config, model=dataclasses.replace(small_gan_config.model,
                                                                                 image_size=6))
        with pytest.raises(ShapeError):
            train_qgan(config, digits_8x8)

    def test_class_weights_set_real_batch_mix(self, small_gan_config, digits_8x8, monkeypatch):
        drawn = []
        original = qgan._real_batch

        def recording(rng, n_real, size, probs):
            indices = original(rng, n_real, size, probs)
            drawn.append(indices)
            return indices

        monkeypatch.setattr(qgan, "_real_batch", recording)
        _, history = train_classical_gan(small_gan_config, digits_8x8, class_weights=[0.7, 0.2, 0.1],
                                         d_batch_size=500)
        assert history.metadata["d_batch_size"] == 500
        assert all(len(batch) == 500 for batch in drawn)
        labels = digits_8x8.labels[np.concatenate(drawn)]
        mix = np.bincount(labels, minlength=3) / len(labels)
        np.testing.assert_allclose(mix, [0.7, 0.2, 0.1], atol=0.05)

    def test_history_keeps_optimizers(self, small_gan_config, digits_8x8):
        _, history = train_classical_gan(small_gan_config, digits_8x8)
        steps = math.ceil(len(digits_8x8) / small_gan_config.batch_size)
        assert history.optimizers["generator"].step == steps
        assert history.optimizers["discriminator"].step == steps * small_gan_config.d_steps

    def test_classical_gan(self, small_gan_config, digits_8x8):
        model, history = train_classical_gan(small_gan_config, digits_8x8)
        assert model.kind == "cgan" and model.trained
        assert len(history) == math.ceil(len(digits_8x8) / small_gan_config.batch_size)


class TestConditioning:
    def test_floor(self):
        np.testing.assert_allclose(floor_weights([0, 0, 1]), [0.02, 0.02, 0.96])

    def test_floor_keeps_valid_weights(self):
        np.testing.assert_allclose(floor_weights([1 / 6, 1 / 24, 19 / 24]), [1 / 6, 1 / 24, 19 / 24])

    def test_degenerate_is_uniform(self):
        np.testing.assert_allclose(floor_weights([0, 0, 0]), [1 / 3] * 3)

    def test_floor_sums_to_one(self, rng):
        for _ in range(50):
            w = floor_weights(rng.dirichlet([0.2] * 4))
            assert w.sum() == pytest.approx(1.0)
            assert w.min() >= 0.02 - 1e-12

    def test_uniform_budgets(self):
        plan = per_class_conditioning(GanTrainConfig(epochs=20), [1 / 3] * 3)
        assert plan.epoch_budgets == (20, 20, 20)

    def test_budgets_follow_errors(self):
        plan = per_class_conditioning(GanTrainConfig(epochs=20), [1 / 6, 1 / 24, 19 / 24])
        assert plan.epoch_budgets[0] == 10
        assert plan.epoch_budgets[2] > plan.epoch_budgets[0] > plan.epoch_budgets[1] >= 1

    def test_real_batch_sizes_follow_weights(self):
        plan = per_class_conditioning(GanTrainConfig(batch_size=16), [0.0, 0.0, 1.0])
        assert plan.real_batch_sizes == (1, 1, 46)
        uniform = per_class_conditioning(GanTrainConfig(batch_size=16), [1 / 3] * 3)
        assert uniform.real_batch_sizes == (16, 16, 16)

    def test_plan_weights_change_generators(self, small_gan_config, digits_8x8):
        skewed = per_class_conditioning(small_gan_config, [0.0, 0.0, 1.0])
        uniform = per_class_conditioning(small_gan_config, [1 / 3] * 3)
        # same epoch budgets, so only the discriminator sampling differs
        skewed = dataclasses.replace(skewed, epoch_budgets=(1, 1, 1))
        uniform = dataclasses.replace(uniform, epoch_budgets=(1, 1, 1))
        a, ha = train_class_generators(small_gan_config, digits_8x8, skewed, kind="cgan")
        b, hb = train_class_generators(small_gan_config, digits_8x8, uniform, kind="cgan")
        assert [h.metadata["d_batch_size"] for h in ha] == [1, 1, 12]
        assert [h.metadata["d_batch_size"] for h in hb] == [4, 4, 4]
        for x, y in zip(a, b):
            assert not np.array_equal(flat(x.generator.parameters()), flat(y.generator.parameters()))

    def test_per_class_generators(self, small_gan_config, digits_8x8):
        plan = per_class_conditioning(small_gan_config, [0.0, 0.0, 1.0])
        models, histories = train_class_generators(small_gan_config, digits_8x8, plan, kind="cgan")
        assert len(models) == 3
        assert all(m.trained for m in models)
        steps = [len(h) for h in histories]
        per_epoch = math.ceil(10 / small_gan_config.batch_size)
        assert steps == [b * per_epoch for b in plan.epoch_budgets]
        assert [h.metadata["d_batch_size"] for h in histories] == list(plan.real_batch_sizes)

    def test_unknown_kind(self, small_gan_config, digits_8x8):
        with pytest.raises(ArgumentError):
            train_class_generators(small_gan_config, digits_8x8, kind="vae")


class TestBornMachine:
    def test_total_variation(self):
        assert total_variation([0.5, 0.5], [1.0, 0.0]) == pytest.approx(0.5)
        assert total_variation([0.25] * 4, [0.25] * 4) == 0.0

    def test_history_and_distribution(self):
        config = GanTrainConfig(epochs=5, seed=1, model=QganConfig(n_qubits=2, depth=2))
        machine, history = train_born_qgan([0.1, 0.2, 0.3, 0.4], config)
        assert len(history) == 5
        assert machine.distribution().sum() == pytest.approx(1.0)
        assert "total_variation" in history.metadata

    def test_bad_target(self):
        config = GanTrainConfig(epochs=1, model=QganConfig(n_qubits=2))
        with pytest.raises(ShapeError):
            train_born_qgan([0.5, 0.5], config)
        with pytest.raises(ShapeError):
            train_born_qgan([0.5, 0.5, 0.5, -0.5], config)


class TestCheckpoint:
    @pytest.mark.parametrize("builder", [build_qgan, build_classical_gan])
    def test_round_trip(self, tmp_path, small_gan_config, builder):
        model = builder(small_gan_config.model, np.random.default_rng(0))
        restored = load_gan(save_gan(tmp_path / "gan.json", model, small_gan_config.model))
        assert restored.kind == model.kind
        np.testing.assert_array_equal(generator_forward(restored, [0.3, -1.0]), generator_forward(model, [0.3, -1.0]))
