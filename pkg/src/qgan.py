"""
Hybrid QGAN and the classical GAN baseline.

The quantum generator maps noise z in [-pi, pi)^n to an image: Ry angle
encoding of z, ansatz V(lambda_q), <Z> of every qubit, then a classical
post-network (Linear-ReLU-Linear-Sigmoid). The discriminator is an MLP with a
sigmoid head. Training alternates a discriminator step (backprop on mu) and a
generator step where lambda_q gradients come from the parameter-shift rule
and the post-network gradients from backprop.
"""

import copy
import dataclasses
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from .config import CLASS_WEIGHT_FLOOR, GanTrainConfig, QganConfig
from .dataset_io import LabeledDataset
from .errors import ArgumentError, ShapeError
from .file_handling import array_from_dict, array_to_dict, load_checkpoint, save_checkpoint
from .losses import gan_bce_losses, weighted_gan_bce_losses
from .optim import OptimState, WeightList, optim_step
from .quantum_core import angle_encode, init_zero_state
from .tensor_nn import Network, backward, forward, linear, relu, sigmoid
from .vqc import (
    AnsatzSpec, ParamCircuit, build_ansatz, init_params, param_shift_grad,
    probability_shift_grad, vqc_forward, vqc_probabilities,
)

logger = logging.getLogger(__name__)


def sample_noise(rng: np.random.Generator, count: int, dim: int) -> np.ndarray:
    return rng.uniform(-np.pi, np.pi, size=(count, dim))


# =============================================================================
# GENERATORS
# =============================================================================

class QuantumGenerator:
    """Angle-encoded noise -> VQC -> <Z> vector -> classical post-network."""
    kind = "qgan"

    def __init__(self, vqc: ParamCircuit, theta: np.ndarray, post: Network):
        self.vqc = vqc
        self.theta = np.asarray(theta, dtype=float)
        self.post = post

    @property
    def noise_dim(self) -> int:
        return self.vqc.n_qubits

    def expectations(self, noise: np.ndarray) -> Tuple[np.ndarray, list]:
        measured = range(self.vqc.n_qubits)
        states = [angle_encode(z) for z in noise]
        values = np.stack([vqc_forward(self.vqc, self.theta, s, measured) for s in states])
        return values, states

    def forward(self, noise: np.ndarray) -> Tuple[np.ndarray, Any]:
        values, states = self.expectations(noise)
        images, post_cache = forward(self.post, values)
        return images, (states, post_cache)

    def backward(self, cache: Any, upstream: np.ndarray) -> WeightList:
        states, post_cache = cache
        g_values, post_grads = backward(self.post, post_cache, upstream)
        measured = range(self.vqc.n_qubits)
        theta_grad = np.zeros_like(self.theta)
        for state, g in zip(states, g_values):
            theta_grad += param_shift_grad(self.vqc, self.theta, state, measured, g)
        return [{"theta": theta_grad}] + post_grads

    def parameters(self) -> WeightList:
        return [{"theta": self.theta}] + self.post.weights

    def set_parameters(self, weights: WeightList) -> None:
        self.theta = weights[0]["theta"]
        self.post.weights = weights[1:]

    def parameter_count(self) -> int:
        return int(self.theta.size) + self.post.parameter_count()


class ClassicalGenerator:
    """Noise -> Linear-ReLU-Linear-Sigmoid."""
    kind = "cgan"

    def __init__(self, net: Network):
        self.net = net

    @property
    def noise_dim(self) -> int:
        return self.net.specs[0].fan_in

    def forward(self, noise: np.ndarray) -> Tuple[np.ndarray, Any]:
        return forward(self.net, noise)

    def backward(self, cache: Any, upstream: np.ndarray) -> WeightList:
        return backward(self.net, cache, upstream)[1]

    def parameters(self) -> WeightList:
        return self.net.weights

    def set_parameters(self, weights: WeightList) -> None:
        self.net.weights = weights

    def parameter_count(self) -> int:
        return self.net.parameter_count()


Generator = Union[QuantumGenerator, ClassicalGenerator]


@dataclass
class GanModel:
    generator: Generator
    discriminator: Network
    image_shape: Tuple[int, int, int]
    trained: bool = False

    @property
    def noise_dim(self) -> int:
        return self.generator.noise_dim

    @property
    def kind(self) -> str:
        return self.generator.kind

    @property
    def pixels(self) -> int:
        return int(np.prod(self.image_shape))

    def parameter_counts(self) -> Dict[str, int]:
        return {"generator": self.generator.parameter_count(),
                "discriminator": self.discriminator.parameter_count()}


def discriminator_specs(pixels: int, hidden: Sequence[int]):
    specs, width = [], pixels
    for h in hidden:
        specs += [linear(width, h), relu()]
        width = h
    return specs + [linear(width, 1), sigmoid()]


def build_qgan(config: QganConfig, rng: np.random.Generator) -> GanModel:
    config.validate()
    pixels = config.image_size ** 2
    vqc = build_ansatz(AnsatzSpec(config.n_qubits, config.depth, config.entangler))
    theta = init_params(vqc, rng)
    post = Network.initialize([linear(config.n_qubits, config.post_hidden), relu(),
                               linear(config.post_hidden, pixels), sigmoid()], rng)
    disc = Network.initialize(discriminator_specs(pixels, config.disc_hidden), rng)
    return GanModel(QuantumGenerator(vqc, theta, post), disc, (1, config.image_size, config.image_size))


def build_classical_gan(config: QganConfig, rng: np.random.Generator) -> GanModel:
    config.validate()
    pixels = config.image_size ** 2
    net = Network.initialize([linear(config.n_qubits, config.classical_hidden), relu(),
                              linear(config.classical_hidden, pixels), sigmoid()], rng)
    disc = Network.initialize(discriminator_specs(pixels, config.disc_hidden), rng)
    return GanModel(ClassicalGenerator(net), disc, (1, config.image_size, config.image_size))


def generator_forward(model: GanModel, noise: Sequence[float]) -> np.ndarray:
    """One image with pixels in [0, 1]."""
    noise = np.asarray(noise, dtype=float).reshape(-1)
    if noise.shape[0] != model.noise_dim:
        raise ShapeError(f"generator takes {model.noise_dim} noise values, got {noise.shape[0]}")
    images, _ = model.generator.forward(noise[None])
    return images[0].reshape(model.image_shape)


def generate_samples(model: GanModel, n: int, seed: int) -> List[np.ndarray]:
    if n < 0:
        raise ArgumentError(f"cannot generate {n} samples")
    if n == 0:
        return []
    rng = np.random.default_rng(seed)
    images, _ = model.generator.forward(sample_noise(rng, n, model.noise_dim))
    return [img.reshape(model.image_shape) for img in images]


# =============================================================================
# HISTORY
# =============================================================================

@dataclass
class GanHistory:
    d_loss: List[float] = field(default_factory=list)
    g_loss: List[float] = field(default_factory=list)
    value: List[float] = field(default_factory=list)
    metadata: Dict[str, Any] = field(default_factory=dict)
    # "generator" and "discriminator" optimizer state after the last step
    optimizers: Dict[str, OptimState] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.d_loss)

    def record(self, d_loss: float, g_loss: float, value: float) -> None:
        self.d_loss.append(d_loss)
        self.g_loss.append(g_loss)
        self.value.append(value)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            "step": np.arange(1, len(self) + 1),
            "d_loss": self.d_loss,
            "g_loss": self.g_loss,
            "V": self.value,
        })


# =============================================================================
# ADVERSARIAL TRAINING
# =============================================================================

def _add(a: WeightList, b: WeightList) -> WeightList:
    return [{k: x[k] + y[k] for k in x} for x, y in zip(a, b)]


def _sampling_probs(train_set: LabeledDataset, class_weights: Optional[Sequence[float]]) -> Optional[np.ndarray]:
    """Per-sample probabilities so each class is drawn with its class weight."""
    if class_weights is None:
        return None
    weights = np.asarray(class_weights, dtype=float)
    counts = np.bincount(train_set.labels, minlength=len(weights)).astype(float)
    own = counts[train_set.labels]
    per_sample = np.where(own > 0, weights[train_set.labels] / np.maximum(own, 1), 0.0)
    total = per_sample.sum()
    if total <= 0:
        return None
    return per_sample / total


def _real_batch(rng: np.random.Generator, n_real: int, size: int, probs: Optional[np.ndarray]) -> np.ndarray:
    return rng.choice(n_real, size=size, replace=True, p=probs)


def _adversarial_loop(model: GanModel, train_set: LabeledDataset, config: GanTrainConfig,
                      class_weights: Optional[Sequence[float]], d_batch_size: Optional[int]) -> GanHistory:
    real_images = train_set.images.reshape(len(train_set), -1)
    rng = np.random.default_rng(config.seed + 1)
    probs = _sampling_probs(train_set, class_weights)
    gen, disc = model.generator, model.discriminator
    d_opt = OptimState("adam", config.lr_d)
    g_opt = OptimState("adam", config.lr_g)
    batch = config.batch_size
    d_batch = batch if d_batch_size is None else d_batch_size
    history = GanHistory(metadata={"kind": model.kind, "d_batch_size": d_batch, **model.parameter_counts()},
                         optimizers={"generator": g_opt, "discriminator": d_opt})
    steps_per_epoch = math.ceil(len(train_set) / batch)

    for epoch in range(config.epochs):
        for _ in range(steps_per_epoch):
            for _ in range(config.d_steps):
                real = real_images[_real_batch(rng, len(real_images), d_batch, probs)]
                fake, _ = gen.forward(sample_noise(rng, d_batch, gen.noise_dim))
                d_real, real_cache = forward(disc, real)
                d_fake, fake_cache = forward(disc, fake)
                losses = gan_bce_losses(d_real, d_fake)
                _, grads_real = backward(disc, real_cache, losses.d_grad_real[:, None])
                _, grads_fake = backward(disc, fake_cache, losses.d_grad_fake[:, None])
                disc.weights = optim_step(d_opt, disc.weights, _add(grads_real, grads_fake))

            fake, gen_cache = gen.forward(sample_noise(rng, batch, gen.noise_dim))
            d_fake, fake_cache = forward(disc, fake)
            g_losses = gan_bce_losses(d_real, d_fake)
            g_images, _ = backward(disc, fake_cache, g_losses.g_grad_fake[:, None])
            gen.set_parameters(optim_step(g_opt, gen.parameters(), gen.backward(gen_cache, g_images)))

            history.record(losses.d_loss, g_losses.g_loss, losses.value)
            logger.debug("step %d d_loss=%.4f g_loss=%.4f V=%.4f", len(history), losses.d_loss,
                         g_losses.g_loss, losses.value)
        logger.info("%s epoch %d/%d d_loss=%.4f g_loss=%.4f", model.kind, epoch + 1, config.epochs,
                    history.d_loss[-1], history.g_loss[-1])
    return history


def _train(config: GanTrainConfig, train_set: LabeledDataset, model: GanModel,
           class_weights: Optional[Sequence[float]], d_batch_size: Optional[int]) -> Tuple[GanModel, GanHistory]:
    if len(train_set) == 0:
        raise ArgumentError("GAN training set is empty")
    if train_set.image_shape != model.image_shape:
        raise ShapeError(f"training images {train_set.image_shape} do not match generator {model.image_shape}")
    if d_batch_size is not None and d_batch_size < 1:
        raise ArgumentError(f"discriminator batch size must be positive, got {d_batch_size}")
    config.validate()
    model = copy.deepcopy(model)
    history = _adversarial_loop(model, train_set, config, class_weights, d_batch_size)
    model.trained = model.trained or config.epochs > 0
    return model, history


def train_qgan(config: GanTrainConfig, train_set: LabeledDataset, model: Optional[GanModel] = None,
               class_weights: Optional[Sequence[float]] = None,
               d_batch_size: Optional[int] = None) -> Tuple[GanModel, GanHistory]:
    """
    Alternate discriminator and generator steps, ceil(N / batch_size) steps
    per epoch. `class_weights` sets the class mix of the real batches and
    `d_batch_size` (default batch_size) their size in discriminator steps.
    """
    if model is None:
        model = build_qgan(config.model, np.random.default_rng(config.seed))
    return _train(config, train_set, model, class_weights, d_batch_size)


def train_classical_gan(config: GanTrainConfig, train_set: LabeledDataset, model: Optional[GanModel] = None,
                        class_weights: Optional[Sequence[float]] = None,
                        d_batch_size: Optional[int] = None) -> Tuple[GanModel, GanHistory]:
    if model is None:
        model = build_classical_gan(config.model, np.random.default_rng(config.seed))
    return _train(config, train_set, model, class_weights, d_batch_size)


# =============================================================================
# CLASS CONDITIONING
# =============================================================================

def floor_weights(proportions: Sequence[float], floor: float = CLASS_WEIGHT_FLOOR) -> np.ndarray:
    """
    Raise every weight to at least `floor`, rescaling the others so the total
    stays one: (0, 0, 1) -> (0.02, 0.02, 0.96). A zero total gives uniform.
    """
    r = np.asarray(proportions, dtype=float)
    n = r.shape[0]
    if r.sum() <= 0:
        return np.full(n, 1.0 / n)
    r = r / r.sum()
    floored = np.zeros(n, dtype=bool)
    while True:
        free_mass = 1.0 - floor * floored.sum()
        free_total = r[~floored].sum()
        w = np.where(floored, floor, r * free_mass / free_total if free_total > 0 else 0.0)
        newly = (~floored) & (w < floor)
        if not newly.any():
            return w
        floored |= newly


@dataclass
class ConditioningPlan:
    """
    sampling_weights: floored error proportions, one per class
    epoch_budgets: epochs for each class's generator
    real_batch_sizes: real (and fake) samples per discriminator step of each
        class's generator; over one step of every generator the real samples
        split across classes in proportion to sampling_weights
    """
    sampling_weights: Tuple[float, ...]
    epoch_budgets: Tuple[int, ...]
    real_batch_sizes: Tuple[int, ...]


def per_class_conditioning(config: GanTrainConfig, proportions: Sequence[float]) -> ConditioningPlan:
    """
    Sampling weights are the floored error proportions; each class's
    generator gets round(epochs * C * weight) epochs (at least one), so the
    total budget matches C generators at the base epoch count. The
    discriminators share C * batch_size real samples per step the same way.
    """
    weights = floor_weights(proportions)
    n = len(weights)
    budgets = tuple(max(1, int(round(config.epochs * n * w))) for w in weights)
    batches = tuple(max(1, int(round(config.batch_size * n * w))) for w in weights)
    return ConditioningPlan(tuple(float(w) for w in weights), budgets, batches)


def class_seed(seed: int, label: int) -> int:
    return int(np.random.SeedSequence([seed, label]).generate_state(1)[0])


def train_class_generators(config: GanTrainConfig, train_set: LabeledDataset,
                           plan: Optional[ConditioningPlan] = None,
                           kind: str = "qgan") -> Tuple[List[GanModel], List[GanHistory]]:
    """
    One generator per class, trained only on that class's images. With a
    plan, each class runs its epoch budget and discriminator batch size.
    """
    trainer = {"qgan": train_qgan, "cgan": train_classical_gan}.get(kind)
    if trainer is None:
        raise ArgumentError(f"unknown generator kind {kind!r}")
    models, histories = [], []
    for label in range(train_set.n_classes):
        images = train_set.images_of(label)
        own = LabeledDataset(images, np.zeros(len(images), dtype=np.int64), (train_set.class_names[label],)
                             if train_set.class_names else ())
        epochs = config.epochs if plan is None else plan.epoch_budgets[label]
        d_batch = None if plan is None else plan.real_batch_sizes[label]
        class_config = dataclasses.replace(config, epochs=epochs, seed=class_seed(config.seed, label))
        logger.info("Training %s generator for class %d (%d images, %d epochs)", kind, label, len(own), epochs)
        model, history = trainer(class_config, own, d_batch_size=d_batch)
        history.metadata["class"] = label
        models.append(model)
        histories.append(history)
    return models, histories


# =============================================================================
# BORN-MACHINE TOY
# =============================================================================

@dataclass
class BornMachine:
    """Quantum generator with no post-network: its output is p(x) = |<x|psi>|^2."""
    vqc: ParamCircuit
    theta: np.ndarray

    def distribution(self) -> np.ndarray:
        return vqc_probabilities(self.vqc, self.theta, init_zero_state(self.vqc.n_qubits))


def total_variation(p: Sequence[float], q: Sequence[float]) -> float:
    return 0.5 * float(np.abs(np.asarray(p, dtype=float) - np.asarray(q, dtype=float)).sum())


def train_born_qgan(target: Sequence[float], config: GanTrainConfig) -> Tuple[BornMachine, GanHistory]:
    """
    Fit a distribution over the 2^n basis states. The discriminator is a
    logistic unit over one-hot outcomes and sees both distributions exactly;
    the generator gradient evaluates p at lambda +/- pi/2. One epoch is one
    discriminator/generator round.
    """
    config.validate()
    n_qubits = config.model.n_qubits
    outcomes = 2 ** n_qubits
    q = np.asarray(target, dtype=float)
    if q.shape != (outcomes,) or np.any(q < 0) or not math.isclose(q.sum(), 1.0, abs_tol=1e-9):
        raise ShapeError(f"target must be a probability vector of length {outcomes}")

    rng = np.random.default_rng(config.seed)
    vqc = build_ansatz(AnsatzSpec(n_qubits, config.model.depth, config.model.entangler))
    machine = BornMachine(vqc, init_params(vqc, rng))
    disc = Network.initialize([linear(outcomes, 1), sigmoid()], rng)
    one_hot = np.eye(outcomes)
    zero = init_zero_state(n_qubits)
    d_opt = OptimState("adam", config.lr_d)
    g_opt = OptimState("adam", config.lr_g)
    history = GanHistory(metadata={"kind": "born", "generator": vqc.n_params,
                                   "discriminator": disc.parameter_count()},
                         optimizers={"generator": g_opt, "discriminator": d_opt})

    for _ in range(config.epochs):
        for _ in range(config.d_steps):
            p = machine.distribution()
            d, cache = forward(disc, one_hot)
            losses = weighted_gan_bce_losses(d, q, d, p)
            _, grads = backward(disc, cache, (losses.d_grad_real + losses.d_grad_fake)[:, None])
            disc.weights = optim_step(d_opt, disc.weights, grads)

        d, _ = forward(disc, one_hot)
        p = machine.distribution()
        g_losses = weighted_gan_bce_losses(d, q, d, p)
        upstream = -np.log(np.clip(d.reshape(-1), 1e-7, 1.0))
        grad = probability_shift_grad(vqc, machine.theta, zero, upstream)
        machine.theta = optim_step(g_opt, [{"theta": machine.theta}], [{"theta": grad}])[0]["theta"]
        history.record(losses.d_loss, g_losses.g_loss, losses.value)

    history.metadata["total_variation"] = total_variation(machine.distribution(), q)
    return machine, history


# =============================================================================
# CHECKPOINTS
# =============================================================================

def save_gan(path: Union[str, Path], model: GanModel, config: QganConfig, seed: Optional[int] = None,
             step: int = 0, optimizers: Optional[Dict[str, OptimState]] = None,
             provenance: Optional[Dict[str, Any]] = None) -> Path:
    networks = {"discriminator": model.discriminator}
    extra: Dict[str, Any] = {"kind": model.kind, "config": dataclasses.asdict(config), "trained": model.trained,
                             "image_shape": list(model.image_shape)}
    if isinstance(model.generator, QuantumGenerator):
        networks["post"] = model.generator.post
        extra["theta"] = array_to_dict(model.generator.theta)
    else:
        networks["generator"] = model.generator.net
    if provenance is not None:
        extra["provenance"] = provenance
    return save_checkpoint(path, networks, extra=extra, optimizer=optimizers or None, seed=seed, step=step)


def load_gan(path: Union[str, Path]) -> GanModel:
    data = load_checkpoint(path)
    extra, nets = data["extra"], data["networks"]
    config = QganConfig(**extra["config"])
    if extra["kind"] == "qgan":
        vqc = build_ansatz(AnsatzSpec(config.n_qubits, config.depth, config.entangler))
        generator: Generator = QuantumGenerator(vqc, array_from_dict(extra["theta"]), nets["post"])
    else:
        generator = ClassicalGenerator(nets["generator"])
    return GanModel(generator, nets["discriminator"], tuple(extra["image_shape"]), extra["trained"])
