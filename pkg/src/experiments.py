"""
Command bodies: data preparation, training, augmentation, comparison and
evaluation runs. Each writes JSON/CSV files into an output folder and embeds
the resolved config plus input hashes so the files stand on their own.
"""

import dataclasses
import logging
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from tqdm import tqdm

from .augment import (
    AugmentedDataset, augment_bands, augment_custom, augment_general, classic_augment,
    compute_error_profile, retrain, save_augmented,
)
from .config import ExperimentConfig, thread_cap
from .dataset_io import (
    LabeledDataset, downscale, load_idx, make_synthetic_digits, subset, weaken_class, write_subset_manifest,
)
from .errors import ArgumentError
from .file_handling import content_hash, create_output_folder, file_sha256, input_hashes, write_output_files
from .hqcnn import HqcnnModel, build_hqcnn, hqcnn_evaluate, hqcnn_train, load_hqcnn, save_hqcnn
from .qgan import GanModel, load_gan, per_class_conditioning, save_gan, train_class_generators

logger = logging.getLogger(__name__)

SYNTHETIC_SIDE = 28


# =============================================================================
# DATA
# =============================================================================

def _derived_seed(seed: int, tag: int) -> int:
    return int(np.random.SeedSequence([seed, tag]).generate_state(1)[0])


def prepare_data(config: ExperimentConfig, seed: int) -> Tuple[LabeledDataset, LabeledDataset, Dict[str, Any]]:
    """
    Train and test sets at desk scale: subset per class, downscale, and
    optionally cut the weak class. Returns the provenance record as well.
    """
    data = config.data
    if data.synthetic:
        train = make_synthetic_digits(data.per_class, data.classes, SYNTHETIC_SIDE, _derived_seed(seed, 0))
        test = make_synthetic_digits(data.test_per_class, data.classes, SYNTHETIC_SIDE, _derived_seed(seed, 1))
        sources = {"synthetic": {"side": SYNTHETIC_SIDE, "classes": list(data.classes), "seed": seed}}
    else:
        train = subset(load_idx(data.train_images, data.train_labels), data.classes, data.per_class, seed)
        test = subset(load_idx(data.test_images, data.test_labels), data.classes, data.test_per_class, seed)
        sources = input_hashes((data.train_images, data.train_labels, data.test_images, data.test_labels))

    train = downscale(train, data.image_size)
    test = downscale(test, data.image_size)
    if data.weak_class is not None:
        train = weaken_class(train, data.weak_class, data.weak_keep, seed)

    inputs = {
        "sources": sources,
        "train_fingerprint": train.fingerprint(),
        "test_fingerprint": test.fingerprint(),
        "train_counts": train.class_counts(),
        "test_counts": test.class_counts(),
    }
    return train, test, inputs


def _provenance(config: ExperimentConfig, inputs: Dict[str, Any]) -> Dict[str, Any]:
    """Resolved config, the input record and a content hash of that record."""
    return {"config": config.to_dict(), "inputs": inputs, "inputs_hash": content_hash(inputs)}


def _with_seed(config: ExperimentConfig, seed: int) -> ExperimentConfig:
    return dataclasses.replace(
        config,
        train=dataclasses.replace(config.train, seed=seed),
        gan=dataclasses.replace(config.gan, seed=seed),
        augment=dataclasses.replace(config.augment, seed=seed),
    )


def _data_manifest(path: Path, config: ExperimentConfig, inputs: Dict[str, Any], seed: int) -> Path:
    return write_subset_manifest(path, inputs["sources"], config.data.classes, config.data.per_class, seed,
                                 config.data.image_size, {"weak_class": config.data.weak_class,
                                                          "weak_keep": config.data.weak_keep,
                                                          **_provenance(config, inputs)})


def _report_files(output_dir: Path, files: List[str]) -> None:
    print(f"\nFiles saved to: {output_dir}")
    for file_path in files:
        print(f"  - {Path(file_path).relative_to(output_dir)}")


# =============================================================================
# TRAINING
# =============================================================================

def run_train_hqcnn(config: ExperimentConfig, out: Optional[str] = None) -> Tuple[Path, List[str]]:
    output_dir = create_output_folder(out or config.output_dir)
    print(f"Output folder: {output_dir}")
    seed = config.train.seed
    train, test, inputs = prepare_data(config, seed)
    print(f"Training HQCNN on {len(train)} images for {config.train.epochs} epochs...")

    model = build_hqcnn(config.hqcnn, np.random.default_rng(seed))
    trained, history = hqcnn_train(model, train, config.train, test)
    report = hqcnn_evaluate(trained, test)

    provenance = _provenance(config, inputs)
    metrics = {**provenance, "report": report.to_dict(),
               "parameters": trained.parameter_count(), "epochs": len(history)}
    curve = pd.DataFrame(history.to_rows(), columns=["epoch", "loss", "accuracy", "test_accuracy"])
    files = write_output_files(output_dir, {"metrics.json": metrics}, {"curve.csv": curve}, provenance)
    files.append(str(save_hqcnn(output_dir / "checkpoint.json", trained, seed=seed, step=len(history),
                                optimizer=history.optimizer, provenance=provenance)))
    files.append(str(_data_manifest(output_dir / "data_manifest.json", config, inputs, seed)))

    _report_files(output_dir, files)
    print(f"Average accuracy: {report.average_accuracy:.3f}  average confidence: {report.average_confidence:.3f}")
    return output_dir, files


def run_train_gan(config: ExperimentConfig, kind: str = "qgan", out: Optional[str] = None) -> Tuple[Path, List[str]]:
    """One generator per class; history.csv and checkpoint.json per class folder."""
    output_dir = create_output_folder(out or config.output_dir)
    print(f"Output folder: {output_dir}")
    train, _, inputs = prepare_data(config, config.gan.seed)
    print(f"Training {kind.upper()} generators for {train.n_classes} classes, {config.gan.epochs} epochs each...")

    models, histories = train_class_generators(config.gan, train, kind=kind)
    provenance = _provenance(config, inputs)
    files: List[str] = []
    for label, (model, history) in enumerate(zip(models, histories)):
        class_dir = output_dir / f"class_{label}"
        class_provenance = {**provenance, "class": label}
        files += write_output_files(class_dir, {}, {"history.csv": history.to_frame()}, class_provenance)
        files.append(str(save_gan(class_dir / "checkpoint.json", model, config.gan.model,
                                  seed=config.gan.seed, step=len(history), optimizers=history.optimizers,
                                  provenance=class_provenance)))

    counts = models[0].parameter_counts() if models else {}
    metadata = {**provenance, "kind": kind, "parameters": counts,
                "steps": [len(h) for h in histories],
                "final": [{"d_loss": h.d_loss[-1], "g_loss": h.g_loss[-1], "V": h.value[-1]} if len(h) else None
                          for h in histories]}
    files += write_output_files(output_dir, {"metadata.json": metadata}, {})

    _report_files(output_dir, files)
    print(f"Parameters: generator {counts.get('generator')}, discriminator {counts.get('discriminator')}")
    return output_dir, files


# =============================================================================
# AUGMENTATION
# =============================================================================

def _load_generators(directory: str, n_classes: int) -> List[GanModel]:
    return [load_gan(Path(directory) / f"class_{label}" / "checkpoint.json") for label in range(n_classes)]


def build_augmentation(config: ExperimentConfig, strategy: str, train: LabeledDataset, test: LabeledDataset,
                       classifier: Optional[HqcnnModel] = None,
                       generators: Optional[Sequence[GanModel]] = None) -> AugmentedDataset:
    """
    Produce the augmented dataset for one strategy. Missing classifiers and
    generators are trained here; custom strategies condition their
    generators on the classifier's error profile.
    """
    aug = config.augment
    if strategy == "classic":
        return classic_augment(train, aug.n_gen, aug.seed)
    if strategy == "general":
        if generators is None:
            generators, _ = train_class_generators(config.gan, train, kind="qgan")
        return augment_general(train, generators, aug.n_gen, aug.seed)
    if strategy not in ("custom", "custom-cgan", "custom-bands"):
        raise ArgumentError(f"unknown augmentation strategy {strategy!r}")

    if classifier is None:
        classifier, _ = hqcnn_train(build_hqcnn(config.hqcnn, np.random.default_rng(config.train.seed)),
                                    train, config.train)
    profile = compute_error_profile(classifier, test, train.n_classes)
    logger.info("Error profile E=%s R=%s", list(profile.errors), [round(float(r), 4) for r in profile.proportions])
    if generators is None:
        plan = per_class_conditioning(config.gan, [float(r) for r in profile.proportions])
        logger.info("Conditioning plan: epochs %s, discriminator batches %s", list(plan.epoch_budgets),
                    list(plan.real_batch_sizes))
        kind = "cgan" if strategy == "custom-cgan" else "qgan"
        generators, _ = train_class_generators(config.gan, train, plan, kind)

    if strategy == "custom-bands":
        return augment_bands(classifier, train, test, generators, aug, profile)
    result = augment_custom(classifier, train, test, generators, aug, profile)
    result.strategy = strategy
    return result


def run_augment(config: ExperimentConfig, strategy: str, out: Optional[str] = None,
                classifier_path: Optional[str] = None,
                generators_dir: Optional[str] = None) -> Tuple[Path, List[str]]:
    output_dir = create_output_folder(out or config.output_dir)
    print(f"Output folder: {output_dir}")
    train, test, inputs = prepare_data(config, config.augment.seed)
    if classifier_path:
        inputs["classifier"] = {classifier_path: file_sha256(classifier_path)}
    classifier = load_hqcnn(classifier_path) if classifier_path else None
    generators = _load_generators(generators_dir, train.n_classes) if generators_dir else None

    print(f"Augmenting with strategy '{strategy}', N_gen={config.augment.n_gen}...")
    augmented = build_augmentation(config, strategy, train, test, classifier, generators)
    directory = save_augmented(augmented, output_dir / "augmented", extra=_provenance(config, inputs))
    files = [str(p) for p in sorted(directory.iterdir())]

    _report_files(output_dir, files)
    print(f"Generated per class: {augmented.counts()}  combined size: {len(augmented)}")
    for warning in augmented.warnings:
        print(f"Shortfall: class {warning['class']} got {warning['accepted']} of {warning['requested']}")
    return output_dir, files


# =============================================================================
# COMPARISON
# =============================================================================

def _run_seed(config: ExperimentConfig, seed: int) -> Dict[str, Dict[str, Any]]:
    """Baseline plus every configured strategy for one seed."""
    config = _with_seed(config, seed)
    train, test, _ = prepare_data(config, seed)

    baseline, history = hqcnn_train(build_hqcnn(config.hqcnn, np.random.default_rng(seed)), train, config.train, test)
    results = {"none": {"curve": [r.test_accuracy for r in history.records],
                        "report": hqcnn_evaluate(baseline, test).to_dict(), "generated": [0] * train.n_classes}}
    for strategy in config.strategies:
        augmented = build_augmentation(config, strategy, train, test, classifier=baseline)
        model, history = retrain(config.hqcnn, config.train, augmented, test)
        model_report = hqcnn_evaluate(model, test)
        results[strategy] = {"curve": [r.test_accuracy for r in history.records],
                             "report": model_report.to_dict(), "generated": augmented.counts()}
    return results


def aggregate_curves(per_seed: Sequence[Dict[str, Dict[str, Any]]], seeds: Sequence[int],
                     strategy: str) -> pd.DataFrame:
    """Mean and standard deviation of test accuracy per epoch across seeds."""
    rows = [{"seed": seed, "epoch": epoch + 1, "test_accuracy": acc}
            for seed, result in zip(seeds, per_seed) for epoch, acc in enumerate(result[strategy]["curve"])]
    frame = pd.DataFrame(rows, columns=["seed", "epoch", "test_accuracy"])
    curve = frame.groupby("epoch")["test_accuracy"].agg(["mean", "std", "count"]).reset_index()
    curve["std"] = curve["std"].fillna(0.0)
    return curve.rename(columns={"count": "seeds"})


def _summary(per_seed: Sequence[Dict[str, Dict[str, Any]]], strategy: str) -> Dict[str, Any]:
    reports = pd.DataFrame([r[strategy]["report"] for r in per_seed])
    per_class = pd.DataFrame(reports["per_class_accuracy"].tolist(), dtype=float)
    return {
        "average_accuracy": {"mean": float(reports["average_accuracy"].mean()),
                             "std": float(reports["average_accuracy"].std(ddof=1)) if len(reports) > 1 else 0.0},
        "average_confidence": {"mean": float(reports["average_confidence"].mean())},
        "per_class_accuracy": {"mean": [None if np.isnan(v) else float(v) for v in per_class.mean()],
                               "std": [float(v) for v in per_class.std(ddof=1).fillna(0.0)]},
        "generated": [r[strategy]["generated"] for r in per_seed],
        "seeds": [r[strategy]["report"]["average_accuracy"] for r in per_seed],
    }


def run_compare(configs: Sequence[ExperimentConfig], out: Optional[str] = None,
                quiet: bool = False) -> Tuple[Path, List[str]]:
    """
    Run the no-augmentation baseline and each strategy over every seed of
    every config. Seeds fan out over QAUG_THREADS worker threads; results are
    collected in submission order so the output does not depend on timing.
    """
    if not configs:
        raise ArgumentError("compare needs at least one config")
    output_dir = create_output_folder(out or configs[0].output_dir)
    print(f"Output folder: {output_dir}")

    jobs = [(k, seed) for k, config in enumerate(configs) for seed in config.seeds]
    with ThreadPoolExecutor(max_workers=thread_cap()) as pool:
        futures = [pool.submit(_run_seed, configs[k], seed) for k, seed in jobs]
        results = [f.result() for f in tqdm(futures, desc="compare", unit="run", disable=quiet)]

    runs, files = [], []
    for k, config in enumerate(configs):
        per_seed = [r for (index, _), r in zip(jobs, results) if index == k]
        prefix = "" if len(configs) == 1 else f"config_{k}/"
        strategies = ["none"] + list(config.strategies)
        _, _, inputs = prepare_data(config, config.seeds[0])
        provenance = _provenance(config, inputs)
        curves = {f"{prefix}curve_{s}.csv": aggregate_curves(per_seed, config.seeds, s) for s in strategies}
        files += write_output_files(output_dir, {}, curves, provenance)
        runs.append({**provenance, "strategies": {s: _summary(per_seed, s) for s in strategies}})

    files = write_output_files(output_dir, {"comparison.json": {"runs": runs}}, {}) + files
    _report_files(output_dir, files)
    for k, run in enumerate(runs):
        for strategy, summary in run["strategies"].items():
            acc = summary["average_accuracy"]
            print(f"[{k}] {strategy:>13}: {acc['mean']:.3f} +/- {acc['std']:.3f}")
    return output_dir, files


# =============================================================================
# EVALUATION
# =============================================================================

def run_evaluate(config: ExperimentConfig, checkpoint: str, out: Optional[str] = None) -> Tuple[Path, List[str]]:
    output_dir = create_output_folder(out or config.output_dir)
    print(f"Output folder: {output_dir}")
    model = load_hqcnn(checkpoint)
    _, test, inputs = prepare_data(config, config.train.seed)
    inputs["checkpoint"] = {checkpoint: file_sha256(checkpoint)}
    report = hqcnn_evaluate(model, test)
    files = write_output_files(output_dir, {"metrics.json": {**_provenance(config, inputs),
                                                             "report": report.to_dict()}}, {})
    _report_files(output_dir, files)
    print(f"Average accuracy: {report.average_accuracy:.3f}  per class: {report.per_class_accuracy}")
    return output_dir, files
