"""Desk-scale behavioral runs. Deselected by default; run with `pytest -m slow`."""

import dataclasses
from pathlib import Path

import numpy as np
import pytest

from src.augment import class_thresholds, compute_error_profile, filter_samples, retrain
from src.cli import main
from src.config import AugmentConfig, GanTrainConfig, QganConfig, TrainConfig, load_experiment_config
from src.experiments import build_augmentation, prepare_data
from src.hqcnn import build_hqcnn, hqcnn_evaluate, hqcnn_train
from src.qgan import generate_samples, train_born_qgan, train_class_generators

pytestmark = pytest.mark.slow

CONFIGS = Path(__file__).resolve().parent.parent / "configs"
SEEDS = [0, 1, 2, 3, 4]


def test_desk_training_reaches_targets():
    config = load_experiment_config(str(CONFIGS / "desk.yaml"))
    passed = 0
    for seed in SEEDS:
        train, test, _ = prepare_data(config, seed)
        model, history = hqcnn_train(build_hqcnn(config.hqcnn, np.random.default_rng(seed)), train,
                                     dataclasses.replace(config.train, seed=seed))
        if history.records[-1].accuracy >= 0.95 and hqcnn_evaluate(model, test).accuracy >= 0.80:
            passed += 1
    assert passed >= 4


def test_born_machine_matches_target():
    target = [0.1, 0.2, 0.3, 0.4]
    converged = 0
    for seed in SEEDS:
        config = GanTrainConfig(epochs=2000, lr_g=0.05, lr_d=0.05, seed=seed, model=QganConfig(n_qubits=2, depth=2))
        _, history = train_born_qgan(target, config)
        converged += history.metadata["total_variation"] < 0.1
    assert converged >= 3


def test_filter_soundness_with_trained_models(digits_8x8, digits_test_8x8, small_hqcnn_config):
    classifier, _ = hqcnn_train(build_hqcnn(small_hqcnn_config, np.random.default_rng(0)), digits_8x8,
                                TrainConfig(epochs=3, batch_size=5, seed=0))
    gan_config = GanTrainConfig(epochs=2, batch_size=4, seed=1,
                                model=QganConfig(n_qubits=3, depth=1, post_hidden=8, disc_hidden=[16], image_size=8))
    generators, _ = train_class_generators(gan_config, digits_8x8)
    thresholds = class_thresholds(AugmentConfig(), compute_error_profile(classifier, digits_test_8x8))

    violations = 0
    for label, generator in enumerate(generators):
        samples = generate_samples(generator, 334, seed=label)
        for image, _ in filter_samples(classifier, samples, label, thresholds[label]):
            predicted, confidence = classifier.predict(image)
            violations += predicted != label or confidence < thresholds[label]
    assert violations == 0


def test_custom_augmentation_lifts_weak_class():
    improved, drops = 0, []
    for seed in SEEDS:
        config = load_experiment_config(str(CONFIGS / "weak_class.yaml"),
                                        {"gan": {"epochs": 10, "seed": seed}, "train": {"seed": seed},
                                         "augment": {"seed": seed}})
        assert config.data.weak_keep == 30
        train, test, _ = prepare_data(config, seed)
        baseline, _ = hqcnn_train(build_hqcnn(config.hqcnn, np.random.default_rng(seed)), train, config.train)
        before = hqcnn_evaluate(baseline, test)
        augmented = build_augmentation(config, "custom", train, test, classifier=baseline)
        model, _ = retrain(config.hqcnn, config.train, augmented)
        after = hqcnn_evaluate(model, test)
        improved += after.per_class_accuracy[2] > before.per_class_accuracy[2]
        drops.append(before.average_accuracy - after.average_accuracy)
    assert improved >= 3
    assert max(drops) <= 0.02


def test_compare_is_byte_identical(tmp_path):
    argv = ["-q", "compare", "--config", str(CONFIGS / "weak_class.yaml"), "--epochs", "5", "--gan-epochs", "2"]
    for name in ("a", "b"):
        assert main(argv + ["--out", str(tmp_path / name)]) == 0
    assert (tmp_path / "a" / "comparison.json").read_bytes() == (tmp_path / "b" / "comparison.json").read_bytes()
