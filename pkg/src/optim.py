"""
SGD and Adam over lists of named weight arrays.

A "weight list" is the List[Dict[str, ndarray]] layout used by Network, so a
hybrid model can hand its CNN layers, VQC angles and readout to one
optimizer as a single list.
"""

from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional

import numpy as np

from .config import ADAM_BETA1, ADAM_BETA2, ADAM_EPS, OPTIMIZER_KINDS, OptimizerConfig
from .errors import ConfigError, ShapeError

WeightList = List[Dict[str, np.ndarray]]


@dataclass
class OptimState:
    kind: str
    learning_rate: float
    step: int = 0
    # Adam first/second moments, same layout as the weights
    m: Optional[WeightList] = None
    v: Optional[WeightList] = None
    beta1: float = ADAM_BETA1
    beta2: float = ADAM_BETA2
    eps: float = ADAM_EPS

    def __post_init__(self):
        self.kind = self.kind.lower()
        if self.kind not in OPTIMIZER_KINDS:
            raise ConfigError(f"unknown optimizer {self.kind!r}")
        if not self.learning_rate > 0:
            raise ConfigError(f"learning rate must be positive, got {self.learning_rate}")

    @classmethod
    def from_config(cls, config: OptimizerConfig) -> "OptimState":
        return cls(kind=config.kind, learning_rate=config.learning_rate)

    def to_dict(self) -> Dict[str, Any]:
        def flat(moments):
            if moments is None:
                return None
            return [{k: {"shape": list(a.shape), "data": a.reshape(-1).tolist()} for k, a in group.items()}
                    for group in moments]
        return {"kind": self.kind, "learning_rate": self.learning_rate, "step": self.step,
                "beta1": self.beta1, "beta2": self.beta2, "eps": self.eps,
                "m": flat(self.m), "v": flat(self.v)}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "OptimState":
        def unflat(moments):
            if moments is None:
                return None
            return [{k: np.asarray(e["data"], dtype=float).reshape(e["shape"]) for k, e in group.items()}
                    for group in moments]
        return cls(kind=data["kind"], learning_rate=data["learning_rate"], step=data["step"],
                   m=unflat(data.get("m")), v=unflat(data.get("v")),
                   beta1=data.get("beta1", ADAM_BETA1), beta2=data.get("beta2", ADAM_BETA2),
                   eps=data.get("eps", ADAM_EPS))


def _check_layout(weights: WeightList, grads: WeightList) -> None:
    if len(weights) != len(grads):
        raise ShapeError(f"{len(weights)} weight groups but {len(grads)} gradient groups")
    for index, (w, g) in enumerate(zip(weights, grads)):
        if set(w) != set(g) or any(w[k].shape != np.shape(g[k]) for k in w):
            raise ShapeError(f"gradient group {index} does not match its weights")


def optim_step(state: OptimState, weights: WeightList, grads: WeightList) -> WeightList:
    """
    One update. Returns new weight arrays; the state's moments and step
    counter advance in place.
    """
    _check_layout(weights, grads)
    state.step += 1
    if state.kind == "sgd":
        return [{k: w[k] - state.learning_rate * g[k] for k in w} for w, g in zip(weights, grads)]

    if state.m is None:
        state.m = [{k: np.zeros_like(v) for k, v in w.items()} for w in weights]
        state.v = [{k: np.zeros_like(v) for k, v in w.items()} for w in weights]
    _check_layout(weights, state.m)

    b1, b2 = state.beta1, state.beta2
    correction1 = 1.0 - b1 ** state.step
    correction2 = 1.0 - b2 ** state.step
    updated = []
    for w, g, m, v in zip(weights, grads, state.m, state.v):
        group = {}
        for k in w:
            m[k] = b1 * m[k] + (1.0 - b1) * g[k]
            v[k] = b2 * v[k] + (1.0 - b2) * g[k] ** 2
            m_hat = m[k] / correction1
            v_hat = v[k] / correction2
            group[k] = w[k] - state.learning_rate * m_hat / (np.sqrt(v_hat) + state.eps)
        updated.append(group)
    return updated
