import numpy as np
import pytest
import yaml

from src.config import GanTrainConfig, HqcnnConfig, QganConfig, TrainConfig
from src.dataset_io import LabeledDataset, downscale, make_synthetic_digits
from src.qgan import GanModel
from src.tensor_nn import Network, linear, sigmoid


def central_difference(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central finite-difference gradient of a scalar function of an array."""
    x = np.array(x, dtype=float)
    grad = np.zeros_like(x)
    for index in np.ndindex(x.shape):
        original = x[index]
        x[index] = original + h
        plus = f(x)
        x[index] = original - h
        minus = f(x)
        x[index] = original
        grad[index] = (plus - minus) / (2 * h)
    return grad


@pytest.fixture
def numeric_grad():
    return central_difference


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def digits_8x8() -> LabeledDataset:
    return downscale(make_synthetic_digits(10, seed=7), 8)


@pytest.fixture(scope="session")
def digits_test_8x8() -> LabeledDataset:
    return downscale(make_synthetic_digits(6, seed=8), 8)


@pytest.fixture
def small_hqcnn_config() -> HqcnnConfig:
    return HqcnnConfig(image_size=8, conv_channels=2, n_qubits=3, depth=1, n_classes=3)


@pytest.fixture
def fast_train_config() -> TrainConfig:
    return TrainConfig(epochs=2, batch_size=5, seed=3)


@pytest.fixture
def small_gan_config() -> GanTrainConfig:
    return GanTrainConfig(epochs=1, batch_size=4, seed=5,
                          model=QganConfig(n_qubits=2, depth=1, post_hidden=4, disc_hidden=[8], image_size=8,
                                           classical_hidden=4))


# =============================================================================
# TEST DOUBLES
# =============================================================================

class BandGenerator:
    """
    Noise -> constant image whose value lies in band `target` of three equal
    bands over [0, 1). Works with generate_samples like a real generator.
    """
    kind = "stub"
    noise_dim = 1

    def __init__(self, target: int, pixels: int):
        self.target = target
        self.pixels = pixels

    def forward(self, noise):
        u = (np.asarray(noise)[:, 0] + np.pi) / (2 * np.pi)
        values = (self.target + u) / 3.0
        return np.repeat(values[:, None], self.pixels, axis=1), None


class MeanClassifier:
    """Class = which third of [0, 1) the image mean falls in; confidence peaks mid-band."""

    def predict(self, image):
        v = float(np.mean(image))
        label = min(2, int(v * 3))
        return label, 1.0 - abs(v * 3 - label - 0.5)


def stub_gan(target: int, side: int = 8, trained: bool = True) -> GanModel:
    disc = Network([linear(side * side, 1), sigmoid()])
    return GanModel(BandGenerator(target, side * side), disc, (1, side, side), trained)


@pytest.fixture
def mean_classifier():
    return MeanClassifier()


@pytest.fixture
def band_generators():
    return [stub_gan(label) for label in range(3)]


@pytest.fixture
def flat_train_set() -> LabeledDataset:
    """Four constant images per class, each in its class's band."""
    values = [(label + 0.5) / 3 for label in range(3) for _ in range(4)]
    images = np.stack([np.full((1, 8, 8), v) for v in values])
    return LabeledDataset(images, [label for label in range(3) for _ in range(4)], ("0", "1", "2"))


# =============================================================================
# CLI CONFIG
# =============================================================================

TINY_CONFIG = {
    "data": {"per_class": 4, "test_per_class": 3, "image_size": 7},
    "hqcnn": {"image_size": 7, "conv_channels": 2, "n_qubits": 2, "depth": 1},
    "train": {"epochs": 1, "batch_size": 4},
    "gan": {"epochs": 1, "batch_size": 4,
            "model": {"n_qubits": 2, "depth": 1, "post_hidden": 4, "disc_hidden": [8], "image_size": 7,
                      "classical_hidden": 4}},
    "augment": {"n_gen": 6},
    "seeds": [0, 1],
    "strategies": ["classic"],
}


@pytest.fixture
def tiny_config_path(tmp_path):
    path = tmp_path / "tiny.yaml"
    path.write_text(yaml.safe_dump(TINY_CONFIG), encoding="utf-8")
    return str(path)


@pytest.fixture
def make_stub_gan():
    return stub_gan
