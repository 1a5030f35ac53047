"""
Hybrid quantum-classical classifier.

Pipeline per image: Conv3x3 -> MaxPool2x2 -> ReLU -> Linear(n_qubits)
-> angles = pi * tanh(features) -> Ry angle encoding -> ansatz V(theta)
-> <Z> per measured qubit -> Linear readout -> softmax.
"""

import copy
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .config import HqcnnConfig, TrainConfig
from .dataset_io import LabeledDataset
from .errors import ArgumentError, ShapeError
from .file_handling import array_from_dict, array_to_dict, load_checkpoint, save_checkpoint
from .losses import softmax, softmax_cross_entropy
from .optim import OptimState, WeightList, optim_step
from .quantum_core import angle_encode
from .tensor_nn import Network, backward, conv3x3, forward, linear, maxpool2x2, relu
from .vqc import (
    AnsatzSpec, ParamCircuit, build_ansatz, init_params, input_angle_grad,
    param_shift_grad, vqc_forward,
)

logger = logging.getLogger(__name__)


# =============================================================================
# MODEL
# =============================================================================

@dataclass
class HqcnnModel:
    config: HqcnnConfig
    cnn: Network
    vqc: ParamCircuit
    theta: np.ndarray
    readout: Network

    @property
    def measured(self) -> Tuple[int, ...]:
        return self.config.measured_qubits()

    @property
    def input_shape(self) -> Tuple[int, int, int]:
        return (1, self.config.image_size, self.config.image_size)

    def parameters(self) -> WeightList:
        return self.cnn.weights + [{"theta": self.theta}] + self.readout.weights

    def set_parameters(self, weights: WeightList) -> None:
        n_cnn = len(self.cnn.weights)
        self.cnn.weights = weights[:n_cnn]
        self.theta = weights[n_cnn]["theta"]
        self.readout.weights = weights[n_cnn + 1:]

    def parameter_count(self) -> int:
        return self.cnn.parameter_count() + int(self.theta.size) + self.readout.parameter_count()

    def predict(self, image: np.ndarray) -> Tuple[int, float]:
        return hqcnn_predict(self, image)


def cnn_specs(config: HqcnnConfig):
    pooled = (config.image_size - 2) // 2
    return [
        conv3x3(1, config.conv_channels),
        maxpool2x2(),
        relu(),
        linear(config.conv_channels * pooled * pooled, config.n_qubits),
    ]


def build_hqcnn(config: HqcnnConfig, rng: np.random.Generator) -> HqcnnModel:
    config.validate()
    vqc = build_ansatz(AnsatzSpec(config.n_qubits, config.depth, config.entangler))
    cnn = Network.initialize(cnn_specs(config), rng)
    theta = init_params(vqc, rng)
    readout = Network.initialize([linear(len(config.measured_qubits()), config.n_classes)], rng)
    logger.debug("Built HQCNN with %d parameters (%d in the VQC)", cnn.parameter_count() + theta.size
                 + readout.parameter_count(), theta.size)
    return HqcnnModel(config, cnn, vqc, theta, readout)


# =============================================================================
# FORWARD / BACKWARD
# =============================================================================

@dataclass
class _Trace:
    cnn_cache: object
    features: np.ndarray
    angles: np.ndarray
    state: object
    expectations: np.ndarray
    readout_cache: object
    logits: np.ndarray


def _image_batch(model: HqcnnModel, image: np.ndarray) -> np.ndarray:
    image = np.asarray(image, dtype=float)
    if image.ndim == 2:
        image = image[None]
    if image.shape != model.input_shape:
        raise ShapeError(f"expected image of shape {model.input_shape}, got {image.shape}")
    return image[None]


def _trace(model: HqcnnModel, image: np.ndarray) -> _Trace:
    features, cnn_cache = forward(model.cnn, _image_batch(model, image))
    features = features[0]
    angles = np.pi * np.tanh(features)
    state = angle_encode(angles)
    expectations = vqc_forward(model.vqc, model.theta, state, model.measured)
    logits, readout_cache = forward(model.readout, expectations[None])
    return _Trace(cnn_cache, features, angles, state, expectations, readout_cache, logits[0])


def hqcnn_forward(model: HqcnnModel, image: np.ndarray) -> np.ndarray:
    """Class probabilities for one image."""
    return softmax(_trace(model, image).logits)


def hqcnn_predict(model: HqcnnModel, image: np.ndarray) -> Tuple[int, float]:
    """Predicted class and its softmax probability."""
    probs = hqcnn_forward(model, image)
    label = int(np.argmax(probs))
    return label, float(probs[label])


def hqcnn_loss_grad(model: HqcnnModel, images: np.ndarray, labels: Sequence[int]) -> Tuple[float, WeightList]:
    """
    Mean cross-entropy over the batch and its gradient in the layout of
    model.parameters(). VQC angles use the parameter-shift rule; the CNN
    receives the encoding-angle gradient chained through pi * tanh.
    """
    images = np.asarray(images, dtype=float)
    labels = list(labels)
    if len(labels) == 0 or len(images) != len(labels):
        raise ShapeError(f"batch needs matching non-empty images and labels, got {len(images)}/{len(labels)}")

    cnn_grads = model.cnn.zero_grads()
    readout_grads = model.readout.zero_grads()
    theta_grad = np.zeros_like(model.theta)
    total = 0.0
    scale = 1.0 / len(labels)

    for image, label in zip(images, labels):
        t = _trace(model, image)
        loss, g_logits = softmax_cross_entropy(t.logits, int(label))
        total += loss

        g_exp, r_grads = backward(model.readout, t.readout_cache, g_logits[None] * scale)
        g_exp = g_exp[0]
        theta_grad += param_shift_grad(model.vqc, model.theta, t.state, model.measured, g_exp)
        g_angles = input_angle_grad(model.vqc, model.theta, t.angles, model.measured, g_exp)
        g_features = g_angles * np.pi * (1.0 - np.tanh(t.features) ** 2)
        _, c_grads = backward(model.cnn, t.cnn_cache, g_features[None])

        for acc, grads in ((cnn_grads, c_grads), (readout_grads, r_grads)):
            for group, g in zip(acc, grads):
                for k in group:
                    group[k] += g[k]

    return total * scale, cnn_grads + [{"theta": theta_grad}] + readout_grads


# =============================================================================
# TRAINING
# =============================================================================

@dataclass
class EpochRecord:
    epoch: int
    loss: float
    accuracy: float
    test_accuracy: Optional[float] = None


@dataclass
class TrainHistory:
    records: List[EpochRecord] = field(default_factory=list)
    # optimizer state after the last update, for checkpoints
    optimizer: Optional[OptimState] = None

    def __len__(self) -> int:
        return len(self.records)

    def losses(self) -> List[float]:
        return [r.loss for r in self.records]

    def to_rows(self) -> List[dict]:
        return [vars(r).copy() for r in self.records]


def hqcnn_train(model: HqcnnModel, train_set: LabeledDataset, config: TrainConfig,
                eval_set: Optional[LabeledDataset] = None) -> Tuple[HqcnnModel, TrainHistory]:
    """
    Minibatch training. Epoch loss/accuracy are accumulated over the
    predictions made before each update; `eval_set` adds a per-epoch test
    accuracy.
    """
    if len(train_set) == 0:
        raise ArgumentError("training set is empty")
    config.validate()
    model = copy.deepcopy(model)
    rng = np.random.default_rng(config.seed)
    optimizer = OptimState.from_config(config.optimizer)
    history = TrainHistory(optimizer=optimizer)

    for epoch in range(config.epochs):
        order = rng.permutation(len(train_set))
        loss_sum, correct = 0.0, 0
        for start in range(0, len(order), config.batch_size):
            batch = order[start:start + config.batch_size]
            images, labels = train_set.images[batch], train_set.labels[batch]
            correct += sum(hqcnn_predict(model, img)[0] == int(lbl) for img, lbl in zip(images, labels))
            loss, grads = hqcnn_loss_grad(model, images, labels)
            loss_sum += loss * len(batch)
            model.set_parameters(optim_step(optimizer, model.parameters(), grads))

        record = EpochRecord(epoch + 1, loss_sum / len(train_set), correct / len(train_set))
        if eval_set is not None and len(eval_set):
            record.test_accuracy = hqcnn_evaluate(model, eval_set).accuracy
        history.records.append(record)
        logger.info("epoch %d/%d loss=%.4f acc=%.3f%s", record.epoch, config.epochs, record.loss, record.accuracy,
                    "" if record.test_accuracy is None else f" test_acc={record.test_accuracy:.3f}")
    return model, history


# =============================================================================
# EVALUATION
# =============================================================================

@dataclass
class EvalReport:
    """
    Per-class accuracy and mean predicted-class confidence. A class with no
    test samples reports None for both.
    """
    per_class_accuracy: List[Optional[float]]
    per_class_confidence: List[Optional[float]]
    per_class_count: List[int]
    average_accuracy: float
    average_confidence: float
    accuracy: float
    confusion: List[List[int]]

    def to_dict(self) -> dict:
        return dict(vars(self))


def _mean_defined(values: Sequence[Optional[float]]) -> float:
    defined = [v for v in values if v is not None]
    return float(np.mean(defined)) if defined else float("nan")


def hqcnn_evaluate(model: HqcnnModel, test_set: LabeledDataset) -> EvalReport:
    if len(test_set) == 0:
        raise ArgumentError("test set is empty")
    n_classes = model.config.n_classes
    confusion = np.zeros((n_classes, n_classes), dtype=int)
    confidence_sum = np.zeros(n_classes)
    for image, label in zip(test_set.images, test_set.labels):
        predicted, confidence = hqcnn_predict(model, image)
        confusion[int(label), predicted] += 1
        confidence_sum[int(label)] += confidence

    counts = confusion.sum(axis=1)
    accuracy, confidence = [], []
    for c in range(n_classes):
        if counts[c] == 0:
            logger.warning("class %d has no test samples; its accuracy is undefined", c)
            accuracy.append(None)
            confidence.append(None)
        else:
            accuracy.append(float(confusion[c, c] / counts[c]))
            confidence.append(float(confidence_sum[c] / counts[c]))

    return EvalReport(
        per_class_accuracy=accuracy,
        per_class_confidence=confidence,
        per_class_count=counts.tolist(),
        average_accuracy=_mean_defined(accuracy),
        average_confidence=_mean_defined(confidence),
        accuracy=float(np.trace(confusion) / counts.sum()),
        confusion=confusion.tolist(),
    )


# =============================================================================
# CHECKPOINTS
# =============================================================================

def save_hqcnn(path: Union[str, Path], model: HqcnnModel, seed: Optional[int] = None, step: int = 0,
               optimizer: Optional[OptimState] = None, provenance: Optional[Dict[str, Any]] = None) -> Path:
    """`provenance` (resolved config and input hashes) is stored under extra."""
    extra = {
        "kind": "hqcnn",
        "config": vars(model.config).copy(),
        "vqc": {"n_qubits": model.vqc.n_qubits, "depth": model.config.depth, "entangler": model.config.entangler},
        "theta": array_to_dict(model.theta),
    }
    if provenance is not None:
        extra["provenance"] = provenance
    return save_checkpoint(path, {"cnn": model.cnn, "readout": model.readout}, extra=extra,
                           optimizer=optimizer, seed=seed, step=step)


def load_hqcnn(path: Union[str, Path]) -> HqcnnModel:
    data = load_checkpoint(path)
    extra = data["extra"]
    if extra.get("kind") != "hqcnn":
        raise ShapeError(f"{path} is not an HQCNN checkpoint")
    config = HqcnnConfig(**extra["config"])
    vqc = build_ansatz(AnsatzSpec(config.n_qubits, config.depth, config.entangler))
    return HqcnnModel(config, data["networks"]["cnn"], vqc, array_from_dict(extra["theta"]),
                      data["networks"]["readout"])
