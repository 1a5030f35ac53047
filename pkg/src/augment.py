"""
Data augmentation strategies for the hybrid classifier.

general  - every class gets an equal share of generated samples, no filtering
custom   - error-driven allocation N_i = N_gen * R[i], over-generation of
           3 * N_i per attempt and a per-class confidence threshold
classic  - rotation / translation / contrast transforms of real samples
bands    - the weakest class filled from confidence bands with quotas
"""

import logging
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Any, Dict, List, Optional, Protocol, Sequence, Tuple, Union

import numpy as np
from scipy import ndimage

from .config import (
    CLASSIC_CONTRAST_RANGE, CLASSIC_ROTATION_DEGREES, CLASSIC_TRANSLATION_PIXELS,
    OVERGENERATION_FACTOR, THRESHOLD_CLAMP, AugmentConfig, HqcnnConfig, TrainConfig,
)
from .dataset_io import LabeledDataset
from .errors import ArgumentError, ConfigError, ConsistencyError, FormatError, GeneratorNotTrainedError
from .file_handling import read_json, write_json
from .hqcnn import TrainHistory, HqcnnModel, build_hqcnn, hqcnn_train
from .qgan import GanModel, class_seed, generate_samples

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"


class Classifier(Protocol):
    def predict(self, image: np.ndarray) -> Tuple[int, float]:
        ...


# =============================================================================
# ERROR PROFILE
# =============================================================================

@dataclass(frozen=True)
class ErrorProfile:
    """Misclassification counts E per true class and proportions R = E / E_total."""
    errors: Tuple[int, ...]
    proportions: Tuple[Fraction, ...]

    @property
    def total(self) -> int:
        return sum(self.errors)

    @property
    def n_classes(self) -> int:
        return len(self.errors)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "E": list(self.errors),
            "E_total": self.total,
            "R": [float(r) for r in self.proportions],
            "R_exact": [f"{r.numerator}/{r.denominator}" for r in self.proportions],
        }


def error_profile_from_counts(errors: Sequence[int]) -> ErrorProfile:
    """A zero total falls back to uniform proportions."""
    errors = tuple(int(e) for e in errors)
    if not errors or any(e < 0 for e in errors):
        raise ArgumentError(f"error counts must be non-negative, got {errors}")
    total = sum(errors)
    if total == 0:
        proportions = tuple(Fraction(1, len(errors)) for _ in errors)
    else:
        proportions = tuple(Fraction(e, total) for e in errors)
    return ErrorProfile(errors, proportions)


def compute_error_profile(model: Classifier, test_set: LabeledDataset,
                          n_classes: Optional[int] = None) -> ErrorProfile:
    if len(test_set) == 0:
        raise ArgumentError("error profile needs a non-empty test set")
    n_classes = n_classes or test_set.n_classes
    errors = [0] * n_classes
    for image, label in zip(test_set.images, test_set.labels):
        predicted, _ = model.predict(image)
        if predicted != int(label):
            errors[int(label)] += 1
    return error_profile_from_counts(errors)


def allocate_counts(n_gen: int, proportions: Sequence[Union[Fraction, float]]) -> Tuple[int, ...]:
    """
    Largest-remainder apportionment of n_gen over the proportions; leftover
    units go to the largest fractional parts, ties to the lower class index.
    """
    if n_gen < 0:
        raise ArgumentError(f"n_gen must be >= 0, got {n_gen}")
    shares = [Fraction(r) for r in proportions]
    total = sum(shares)
    if total <= 0:
        raise ArgumentError("proportions must have a positive sum")
    quotas = [n_gen * s / total for s in shares]
    counts = [int(q) for q in quotas]
    leftover = n_gen - sum(counts)
    order = sorted(range(len(quotas)), key=lambda i: (-(quotas[i] - counts[i]), i))
    for i in order[:leftover]:
        counts[i] += 1
    return tuple(counts)


def class_thresholds(config: AugmentConfig, profile: ErrorProfile) -> Tuple[float, ...]:
    """
    A class is large-error when R[i] > 1/C: its threshold drops by alpha*R[i];
    every other class rises by beta*R[i]. Results are clamped.
    """
    low, high = THRESHOLD_CLAMP
    uniform = Fraction(1, profile.n_classes)
    thresholds = []
    for r in profile.proportions:
        if r > uniform:
            tau = config.tau - config.alpha * float(r)
        else:
            tau = config.tau + config.beta * float(r)
        thresholds.append(min(high, max(low, tau)))
    return tuple(thresholds)


# =============================================================================
# AUGMENTED DATASET
# =============================================================================

@dataclass
class GeneratedSample:
    image: np.ndarray
    label: int
    # None when no classifier looked at the sample
    confidence: Optional[float]
    attempt: int
    seed: int
    source: str

    def provenance(self) -> Dict[str, Any]:
        return {"class": self.label, "confidence": self.confidence, "attempt": self.attempt,
                "seed": self.seed, "source": self.source}


@dataclass
class AugmentedDataset:
    original: LabeledDataset
    generated: List[List[GeneratedSample]]
    strategy: str
    profile: Optional[ErrorProfile] = None
    thresholds: Optional[Tuple[float, ...]] = None
    allocation: Optional[Tuple[int, ...]] = None
    warnings: List[Dict[str, Any]] = field(default_factory=list)

    def counts(self) -> List[int]:
        return [len(samples) for samples in self.generated]

    def __len__(self) -> int:
        return len(self.original) + sum(self.counts())

    def combined(self) -> LabeledDataset:
        samples = [s for per_class in self.generated for s in per_class]
        if not samples:
            return self.original
        return self.original.concat(np.stack([s.image for s in samples]), [s.label for s in samples])

    def manifest(self) -> Dict[str, Any]:
        return {
            "strategy": self.strategy,
            "original": {"fingerprint": self.original.fingerprint(), "size": len(self.original),
                         "class_counts": self.original.class_counts()},
            "image_shape": list(self.original.image_shape),
            "counts": self.counts(),
            "combined_size": len(self),
            "profile": self.profile.to_dict() if self.profile else None,
            "thresholds": list(self.thresholds) if self.thresholds is not None else None,
            "allocation": list(self.allocation) if self.allocation is not None else None,
            "warnings": self.warnings,
            "samples": [[s.provenance() for s in per_class] for per_class in self.generated],
        }


def _balanced_counts(n_gen: int, n_classes: int) -> List[int]:
    """floor(n_gen / C) each, remainder to the lowest class indices."""
    base, extra = divmod(n_gen, n_classes)
    return [base + (1 if i < extra else 0) for i in range(n_classes)]


def _attempt_seed(seed: int, label: int, attempt: int) -> int:
    return int(np.random.SeedSequence([seed, label, attempt]).generate_state(1)[0])


def _require_trained(generators: Sequence[GanModel], labels: Sequence[int]) -> None:
    for label in labels:
        if label >= len(generators):
            raise ArgumentError(f"no generator for class {label}")
        if not generators[label].trained:
            raise GeneratorNotTrainedError(f"generator for class {label} has not been trained")


# =============================================================================
# GENERAL STRATEGY
# =============================================================================

def augment_general(train_set: LabeledDataset, generators: Sequence[GanModel], n_gen: int,
                    seed: int = 0) -> AugmentedDataset:
    """Generate n_gen samples split evenly over the classes and merge them unfiltered."""
    if n_gen < 0:
        raise ArgumentError(f"n_gen must be >= 0, got {n_gen}")
    counts = _balanced_counts(n_gen, train_set.n_classes)
    _require_trained(generators, [i for i, n in enumerate(counts) if n > 0])
    generated: List[List[GeneratedSample]] = []
    for label, count in enumerate(counts):
        sample_seed = class_seed(seed, label)
        images = generate_samples(generators[label], count, sample_seed) if count else []
        generated.append([GeneratedSample(img, label, None, 0, sample_seed, generators[label].kind)
                          for img in images])
    logger.info("General augmentation generated %s samples", counts)
    return AugmentedDataset(train_set, generated, "general", allocation=tuple(counts))


# =============================================================================
# CUSTOMIZED STRATEGY
# =============================================================================

def filter_samples(model: Classifier, samples: Sequence[np.ndarray], class_index: int,
                   threshold: float) -> List[Tuple[np.ndarray, float]]:
    """Keep samples predicted as `class_index` with confidence >= threshold, in order."""
    accepted = []
    for sample in samples:
        predicted, confidence = model.predict(sample)
        if predicted == class_index and confidence >= threshold:
            accepted.append((sample, confidence))
    return accepted


def _profile_for(model: Classifier, train_set: LabeledDataset, test_set: Optional[LabeledDataset]) -> ErrorProfile:
    if test_set is None:
        raise ArgumentError("custom augmentation needs a test set or an error profile")
    return compute_error_profile(model, test_set, train_set.n_classes)


def augment_custom(model: Classifier, train_set: LabeledDataset, test_set: Optional[LabeledDataset],
                   generators: Sequence[GanModel], config: AugmentConfig,
                   profile: Optional[ErrorProfile] = None, skip: Sequence[int] = ()) -> AugmentedDataset:
    """
    Profile the classifier's errors on `test_set` (or use `profile`), then
    fill each class with N_i samples that pass its threshold. Each attempt
    generates 3 * N_i candidates; after max_attempts the class keeps what it
    has and a shortfall warning is recorded. Classes in `skip` are left empty.
    """
    config.validate()
    if profile is None:
        profile = _profile_for(model, train_set, test_set)
    allocation = allocate_counts(config.n_gen, profile.proportions)
    thresholds = class_thresholds(config, profile)
    _require_trained(generators, [i for i, n in enumerate(allocation) if n > 0 and i not in skip])

    result = AugmentedDataset(train_set, [], "custom", profile, thresholds, allocation)
    for label, wanted in enumerate(allocation):
        if label in skip:
            result.generated.append([])
            continue
        accepted: List[GeneratedSample] = []
        attempts = 0
        while wanted > 0 and len(accepted) < wanted and attempts < config.max_attempts:
            sample_seed = _attempt_seed(config.seed, label, attempts)
            candidates = generate_samples(generators[label], OVERGENERATION_FACTOR * wanted, sample_seed)
            for image, confidence in filter_samples(model, candidates, label, thresholds[label]):
                accepted.append(GeneratedSample(image, label, confidence, attempts, sample_seed,
                                                generators[label].kind))
            attempts += 1
        if len(accepted) < wanted:
            logger.warning("class %d: %d of %d samples passed tau=%.3f after %d attempts",
                           label, len(accepted), wanted, thresholds[label], attempts)
            result.warnings.append({"class": label, "requested": wanted, "accepted": len(accepted),
                                    "attempts": attempts, "threshold": thresholds[label]})
        result.generated.append(accepted[:wanted])
    logger.info("Custom augmentation: allocation %s, accepted %s", list(allocation), result.counts())
    return result


# =============================================================================
# QUALITY VS QUANTITY
# =============================================================================

def _check_bands(bands: Sequence[Sequence[float]], quotas: Sequence[int]) -> List[Tuple[float, float]]:
    if len(bands) != len(quotas):
        raise ConfigError("every confidence band needs a quota")
    parsed = [(float(lo), float(hi)) for lo, hi in bands]
    if any(lo >= hi for lo, hi in parsed) or any(q < 0 for q in quotas):
        raise ConfigError(f"bands must be non-empty [low, high) intervals with non-negative quotas: {bands}")
    ordered = sorted(parsed)
    for (_, hi), (lo, _) in zip(ordered, ordered[1:]):
        if lo < hi:
            raise ConfigError(f"confidence bands overlap: {bands}")
    return parsed


def quality_vs_quantity_bands(model: Classifier, samples: Sequence[np.ndarray], class_index: int,
                              bands: Sequence[Sequence[float]],
                              quotas: Sequence[int]) -> List[List[Tuple[np.ndarray, float]]]:
    """Sort correctly-predicted samples into confidence bands, each truncated to its quota."""
    parsed = _check_bands(bands, quotas)
    banded: List[List[Tuple[np.ndarray, float]]] = [[] for _ in parsed]
    for sample in samples:
        predicted, confidence = model.predict(sample)
        if predicted != class_index:
            continue
        for index, (lo, hi) in enumerate(parsed):
            if lo <= confidence < hi and len(banded[index]) < quotas[index]:
                banded[index].append((sample, confidence))
                break
    return banded


def augment_bands(model: Classifier, train_set: LabeledDataset, test_set: Optional[LabeledDataset],
                  generators: Sequence[GanModel], config: AugmentConfig,
                  profile: Optional[ErrorProfile] = None) -> AugmentedDataset:
    """
    Customized augmentation where the class with the largest error share is
    filled from confidence bands (config.bands / config.band_quotas) instead
    of its single threshold.
    """
    if profile is None:
        profile = _profile_for(model, train_set, test_set)
    weakest = int(np.argmax([float(r) for r in profile.proportions]))
    quotas = list(config.band_quotas)
    _check_bands(config.bands, quotas)
    result = augment_custom(model, train_set, test_set, generators, config, profile, skip=[weakest])
    _require_trained(generators, [weakest])

    filled: List[List[GeneratedSample]] = [[] for _ in quotas]
    per_attempt = OVERGENERATION_FACTOR * max(1, sum(quotas))
    attempts = 0
    while attempts < config.max_attempts and any(len(f) < q for f, q in zip(filled, quotas)):
        sample_seed = _attempt_seed(config.seed + 1, weakest, attempts)
        candidates = generate_samples(generators[weakest], per_attempt, sample_seed)
        remaining = [q - len(f) for f, q in zip(filled, quotas)]
        banded = quality_vs_quantity_bands(model, candidates, weakest, config.bands, remaining)
        for index, band in enumerate(banded):
            filled[index] += [GeneratedSample(img, weakest, conf, attempts, sample_seed, generators[weakest].kind)
                              for img, conf in band]
        attempts += 1
    for index, (band, quota) in enumerate(zip(filled, quotas)):
        if len(band) < quota:
            logger.warning("class %d band %s: %d of %d samples", weakest, config.bands[index], len(band), quota)
            result.warnings.append({"class": weakest, "band": list(config.bands[index]), "requested": quota,
                                    "accepted": len(band), "attempts": attempts})

    result.generated[weakest] = [s for band in filled for s in band]
    result.strategy = "custom-bands"
    return result


# =============================================================================
# CLASSICAL TRANSFORMS
# =============================================================================

def rotate_image(image: np.ndarray, degrees: float) -> np.ndarray:
    image = np.asarray(image, dtype=float)
    if degrees == 0:
        return image.copy()
    rotated = ndimage.rotate(image, degrees, axes=(-1, -2), reshape=False, order=1, mode="constant", cval=0.0)
    return np.clip(rotated, 0.0, 1.0)


def translate_image(image: np.ndarray, dy: int, dx: int) -> np.ndarray:
    """Integer shift with zero fill at the border."""
    image = np.asarray(image, dtype=float)
    offset = (0,) * (image.ndim - 2) + (int(dy), int(dx))
    return ndimage.shift(image, offset, order=0, mode="constant", cval=0.0)


def adjust_contrast(image: np.ndarray, factor: float) -> np.ndarray:
    image = np.asarray(image, dtype=float)
    mean = image.mean()
    return np.clip(mean + factor * (image - mean), 0.0, 1.0)


def _random_transform(image: np.ndarray, rng: np.random.Generator) -> Tuple[np.ndarray, str]:
    choice = int(rng.integers(3))
    if choice == 0:
        return rotate_image(image, rng.uniform(-CLASSIC_ROTATION_DEGREES, CLASSIC_ROTATION_DEGREES)), "rotate"
    if choice == 1:
        dy, dx = rng.integers(-CLASSIC_TRANSLATION_PIXELS, CLASSIC_TRANSLATION_PIXELS + 1, size=2)
        return translate_image(image, dy, dx), "translate"
    return adjust_contrast(image, rng.uniform(*CLASSIC_CONTRAST_RANGE)), "contrast"


def classic_augment(train_set: LabeledDataset, n_gen: int, seed: int = 0) -> AugmentedDataset:
    """n_gen transformed copies of random originals, balanced per class."""
    if n_gen < 0:
        raise ArgumentError(f"n_gen must be >= 0, got {n_gen}")
    counts = _balanced_counts(n_gen, train_set.n_classes)
    result = AugmentedDataset(train_set, [], "classic", allocation=tuple(counts))
    for label, count in enumerate(counts):
        originals = train_set.images_of(label)
        sample_seed = class_seed(seed, label)
        rng = np.random.default_rng(sample_seed)
        samples = []
        if count and len(originals) == 0:
            logger.warning("class %d has no training images to transform", label)
            result.warnings.append({"class": label, "requested": count, "accepted": 0, "attempts": 0})
            count = 0
        for _ in range(count):
            image, name = _random_transform(originals[rng.integers(len(originals))], rng)
            samples.append(GeneratedSample(image, label, None, 0, sample_seed, f"classic:{name}"))
        result.generated.append(samples)
    return result


# =============================================================================
# PERSISTENCE
# =============================================================================

def save_augmented(dataset: AugmentedDataset, directory: Union[str, Path],
                   extra: Optional[Dict[str, Any]] = None) -> Path:
    """class_<i>.bin holds generated images as flat little-endian float64; provenance lives in the manifest."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for label, samples in enumerate(dataset.generated):
        data = np.stack([s.image for s in samples]) if samples else np.zeros(0)
        (directory / f"class_{label}.bin").write_bytes(data.astype("<f8").tobytes())
    write_json(directory / MANIFEST_NAME, {**(extra or {}), **dataset.manifest()})
    return directory


def load_augmented(directory: Union[str, Path], original: LabeledDataset) -> AugmentedDataset:
    directory = Path(directory)
    manifest = read_json(directory / MANIFEST_NAME)
    if manifest["original"]["fingerprint"] != original.fingerprint():
        raise ConsistencyError(f"{directory} was generated from a different training set")
    shape = tuple(manifest["image_shape"])
    generated = []
    for label, records in enumerate(manifest["samples"]):
        raw = np.frombuffer((directory / f"class_{label}.bin").read_bytes(), dtype="<f8")
        if raw.size != len(records) * int(np.prod(shape)):
            raise FormatError(f"class_{label}.bin does not hold {len(records)} images of shape {shape}")
        images = raw.reshape((len(records),) + shape)
        generated.append([GeneratedSample(img.copy(), r["class"], r["confidence"], r["attempt"], r["seed"],
                                          r["source"]) for img, r in zip(images, records)])

    profile = None
    if manifest.get("profile"):
        profile = error_profile_from_counts(manifest["profile"]["E"])
    thresholds = tuple(manifest["thresholds"]) if manifest.get("thresholds") is not None else None
    allocation = tuple(manifest["allocation"]) if manifest.get("allocation") is not None else None
    return AugmentedDataset(original, generated, manifest["strategy"], profile, thresholds, allocation,
                            list(manifest.get("warnings", [])))


# =============================================================================
# RETRAINING
# =============================================================================

def retrain(model_config: HqcnnConfig, train_config: TrainConfig,
            augmented: Union[AugmentedDataset, LabeledDataset],
            eval_set: Optional[LabeledDataset] = None) -> Tuple[HqcnnModel, TrainHistory]:
    """Train a fresh classifier M' on the combined dataset."""
    train_set = augmented.combined() if isinstance(augmented, AugmentedDataset) else augmented
    model = build_hqcnn(model_config, np.random.default_rng(train_config.seed))
    return hqcnn_train(model, train_set, train_config, eval_set)
