"""
Configuration settings for qaug.

This module contains all configuration constants organized by functionality,
plus the dataclass configs for every trainable unit and the loader for the
YAML experiment document.
"""

import math
import os
from dataclasses import asdict, dataclass, field, fields, is_dataclass
from typing import Any, Dict, List, Mapping, Optional, Tuple

import yaml

from .errors import ConfigError


# =============================================================================
# QUANTUM SIMULATION
# =============================================================================

MAX_QUBITS: int = 12
NORM_TOLERANCE: float = 1e-10
SHIFT: float = math.pi / 2


# =============================================================================
# CLASSICAL NETWORKS
# =============================================================================

PROBABILITY_CLAMP: float = 1e-7
ADAM_BETA1: float = 0.9
ADAM_BETA2: float = 0.999
ADAM_EPS: float = 1e-8

OPTIMIZER_KINDS: Tuple[str, ...] = ("sgd", "adam")
ENTANGLERS: Tuple[str, ...] = ("ring", "linear")


@dataclass
class OptimizerConfig:
    """Optimizer choice and step size."""
    kind: str = "adam"
    learning_rate: float = 1e-2

    def validate(self) -> None:
        if self.kind not in OPTIMIZER_KINDS:
            raise ConfigError(f"optimizer kind must be one of {OPTIMIZER_KINDS}, got {self.kind!r}")
        if not self.learning_rate > 0:
            raise ConfigError(f"learning rate must be positive, got {self.learning_rate}")


# =============================================================================
# HQCNN CLASSIFIER
# =============================================================================

@dataclass
class HqcnnConfig:
    """Shape of the CNN -> angle encoding -> VQC -> readout classifier."""
    image_size: int = 8
    conv_channels: int = 4
    n_qubits: int = 4
    depth: int = 2
    entangler: str = "ring"
    n_classes: int = 3
    # None measures every qubit
    measured: Optional[List[int]] = None

    def measured_qubits(self) -> Tuple[int, ...]:
        if self.measured is None:
            return tuple(range(self.n_qubits))
        return tuple(self.measured)

    def validate(self) -> None:
        if self.image_size < 4:
            raise ConfigError("image_size must be at least 4 (3x3 conv then 2x2 pool)")
        if self.conv_channels < 1 or self.n_classes < 2:
            raise ConfigError("conv_channels >= 1 and n_classes >= 2 required")
        if not 1 <= self.n_qubits <= MAX_QUBITS:
            raise ConfigError(f"n_qubits must be in 1..{MAX_QUBITS}")
        if self.depth < 1:
            raise ConfigError("depth must be >= 1")
        if self.entangler not in ENTANGLERS:
            raise ConfigError(f"entangler must be one of {ENTANGLERS}")
        measured = self.measured_qubits()
        if not measured or any(not 0 <= q < self.n_qubits for q in measured):
            raise ConfigError(f"measured qubits {measured} invalid for {self.n_qubits} qubits")


@dataclass
class TrainConfig:
    """Classifier training loop settings."""
    epochs: int = 30
    batch_size: int = 10
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    seed: int = 0

    def validate(self) -> None:
        if self.epochs < 0 or self.batch_size < 1:
            raise ConfigError("epochs >= 0 and batch_size >= 1 required")
        self.optimizer.validate()


# =============================================================================
# GENERATIVE MODELS
# =============================================================================

@dataclass
class QganConfig:
    """Generator/discriminator shapes for both the quantum and classical GAN."""
    n_qubits: int = 4
    depth: int = 2
    entangler: str = "ring"
    post_hidden: int = 32
    disc_hidden: List[int] = field(default_factory=lambda: [64, 32])
    image_size: int = 8
    # hidden width of the fully classical baseline generator
    classical_hidden: int = 32

    def validate(self) -> None:
        if not 1 <= self.n_qubits <= MAX_QUBITS:
            raise ConfigError(f"n_qubits must be in 1..{MAX_QUBITS}")
        if self.depth < 1 or self.entangler not in ENTANGLERS:
            raise ConfigError("depth >= 1 and a known entangler required")
        if self.post_hidden < 1 or self.classical_hidden < 1 or self.image_size < 1:
            raise ConfigError("layer widths must be positive")
        if not self.disc_hidden or any(h < 1 for h in self.disc_hidden):
            raise ConfigError("disc_hidden needs at least one positive width")


@dataclass
class GanTrainConfig:
    """Adversarial training loop settings."""
    epochs: int = 20
    batch_size: int = 16
    lr_g: float = 2e-3
    lr_d: float = 2e-3
    seed: int = 0
    d_steps: int = 1
    model: QganConfig = field(default_factory=QganConfig)

    def validate(self) -> None:
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.batch_size < 1 or self.d_steps < 1:
            raise ConfigError("batch_size and d_steps must be positive")
        if not (self.lr_g > 0 and self.lr_d > 0):
            raise ConfigError("learning rates must be positive")
        self.model.validate()


# =============================================================================
# AUGMENTATION
# =============================================================================

THRESHOLD_CLAMP: Tuple[float, float] = (0.05, 0.99)
CLASS_WEIGHT_FLOOR: float = 0.02
OVERGENERATION_FACTOR: int = 3

CLASSIC_ROTATION_DEGREES: float = 15.0
CLASSIC_TRANSLATION_PIXELS: int = 2
CLASSIC_CONTRAST_RANGE: Tuple[float, float] = (0.7, 1.3)


@dataclass
class AugmentConfig:
    """Generation budget and confidence-threshold rule."""
    n_gen: int = 300
    tau: float = 0.48
    alpha: float = 0.04
    beta: float = 0.04
    max_attempts: int = 5
    seed: int = 0
    # quality-vs-quantity bands for the weakest class: [low, high) per band
    bands: List[List[float]] = field(default_factory=lambda: [[0.45, 0.9], [0.42, 0.45], [0.38, 0.42]])
    band_quotas: List[int] = field(default_factory=lambda: [9, 16, 43])

    def validate(self) -> None:
        if self.n_gen < 0:
            raise ConfigError("n_gen must be >= 0")
        if not 0 < self.tau < 1:
            raise ConfigError("tau must lie in (0, 1)")
        if self.alpha < 0 or self.beta < 0:
            raise ConfigError("alpha and beta must be non-negative")
        if self.max_attempts < 1:
            raise ConfigError("max_attempts must be >= 1")
        if len(self.bands) != len(self.band_quotas):
            raise ConfigError("bands and band_quotas must have equal length")


# =============================================================================
# DATA
# =============================================================================

@dataclass
class DataConfig:
    """Where the digits come from and how they are cut down."""
    train_images: Optional[str] = None
    train_labels: Optional[str] = None
    test_images: Optional[str] = None
    test_labels: Optional[str] = None
    classes: List[int] = field(default_factory=lambda: [0, 1, 2])
    per_class: int = 100
    test_per_class: int = 100
    image_size: int = 8
    # deliberately weakened class: keep only weak_keep of its training samples
    weak_class: Optional[int] = None
    weak_keep: int = 30

    @property
    def synthetic(self) -> bool:
        return self.train_images is None

    def validate(self) -> None:
        paths = [self.train_images, self.train_labels, self.test_images, self.test_labels]
        if any(p is None for p in paths) and any(p is not None for p in paths):
            raise ConfigError("give all four IDX paths or none (synthetic digits)")
        if len(set(self.classes)) != len(self.classes) or len(self.classes) < 2:
            raise ConfigError("classes must be at least two distinct labels")
        if self.per_class < 0 or self.test_per_class < 0 or self.image_size < 1:
            raise ConfigError("per_class, test_per_class and image_size must be non-negative")
        if self.weak_class is not None and not 0 <= self.weak_class < len(self.classes):
            raise ConfigError("weak_class is an index into classes")


# =============================================================================
# EXPERIMENT
# =============================================================================

STRATEGIES: Tuple[str, ...] = ("general", "custom", "classic")
COMPARE_STRATEGIES: Tuple[str, ...] = ("general", "custom", "classic", "custom-cgan", "custom-bands")


@dataclass
class ExperimentConfig:
    """Everything one command needs; serialized into every output."""
    data: DataConfig = field(default_factory=DataConfig)
    hqcnn: HqcnnConfig = field(default_factory=HqcnnConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    gan: GanTrainConfig = field(default_factory=GanTrainConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    seeds: List[int] = field(default_factory=lambda: [0, 1, 2, 3, 4])
    strategies: List[str] = field(default_factory=lambda: ["general", "custom", "classic"])
    output_dir: Optional[str] = None

    def validate(self) -> None:
        for part in (self.data, self.hqcnn, self.train, self.gan, self.augment):
            part.validate()
        if self.hqcnn.n_classes != len(self.data.classes):
            raise ConfigError("hqcnn.n_classes must equal the number of data classes")
        if self.hqcnn.image_size != self.data.image_size or self.gan.model.image_size != self.data.image_size:
            raise ConfigError("hqcnn, gan.model and data image_size must agree")
        if not self.seeds:
            raise ConfigError("seeds list must not be empty")
        unknown = [s for s in self.strategies if s not in COMPARE_STRATEGIES]
        if unknown:
            raise ConfigError(f"unknown strategies {unknown}; choose from {COMPARE_STRATEGIES}")

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


# =============================================================================
# LOADING
# =============================================================================

def _build(cls, values: Mapping[str, Any], where: str):
    """Build a (possibly nested) dataclass from a mapping, rejecting unknown keys."""
    if not isinstance(values, Mapping):
        raise ConfigError(f"{where or 'config'} must be a mapping, got {type(values).__name__}")
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(values) - set(known))
    if unknown:
        raise ConfigError(f"unknown keys in {where or 'config'}: {unknown}")

    kwargs = {}
    defaults = cls()
    for name, value in values.items():
        current = getattr(defaults, name)
        if is_dataclass(current):
            kwargs[name] = _build(type(current), value, f"{where}.{name}".lstrip("."))
        else:
            kwargs[name] = value
    return cls(**kwargs)


def _merge(base: Dict[str, Any], overrides: Mapping[str, Any]) -> Dict[str, Any]:
    merged = dict(base)
    for key, value in overrides.items():
        if isinstance(value, Mapping) and isinstance(merged.get(key), Mapping):
            merged[key] = _merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def load_experiment_config(path: Optional[str] = None,
                           overrides: Optional[Mapping[str, Any]] = None) -> ExperimentConfig:
    """
    Read the YAML experiment document and apply CLI overrides on top.

    Args:
        path: YAML file; None starts from the defaults
        overrides: nested mapping of values that win over the file

    Returns:
        A validated ExperimentConfig
    """
    document: Dict[str, Any] = {}
    if path is not None:
        try:
            with open(path, "r", encoding="utf-8") as f:
                document = yaml.safe_load(f) or {}
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}")
        except yaml.YAMLError as e:
            raise ConfigError(f"config file {path} is not valid YAML: {e}")

    document = _merge(document, overrides or {})
    try:
        config = _build(ExperimentConfig, document, "")
        config.validate()
    except TypeError as e:
        raise ConfigError(f"bad config value: {e}")
    return config


def thread_cap() -> int:
    """Worker threads allowed for fan-out, from QAUG_THREADS (default 1)."""
    raw = os.environ.get("QAUG_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1
