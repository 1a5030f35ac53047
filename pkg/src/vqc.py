"""
Variational circuits V(theta): ansatz construction, forward expectations and
exact gradients by the parameter-shift rule.

Every trainable angle lives in exactly one slot, so the two-point rule
(E(theta_j + pi/2) - E(theta_j - pi/2)) / 2 is the whole derivative.
"""

import threading
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Sequence, Tuple, Union

import numpy as np

from .config import SHIFT
from .errors import GateSpecError, ShapeError
from .quantum_core import (
    Circuit, GateKind, GateOp, StateVector, angle_encode, apply_matrix,
    expectation_z, gate_matrix, probabilities,
)


# =============================================================================
# LAYOUT
# =============================================================================

class Entangler(str, Enum):
    RING = "ring"
    LINEAR = "linear"


PARAM_KINDS = frozenset({GateKind.RX, GateKind.RY, GateKind.RZ})


@dataclass(frozen=True)
class AnsatzSpec:
    n_qubits: int
    depth: int
    entangler: Entangler = Entangler.RING

    def __post_init__(self):
        object.__setattr__(self, "entangler", Entangler(self.entangler))
        if self.depth < 1:
            raise GateSpecError(f"ansatz depth must be >= 1, got {self.depth}")


@dataclass(frozen=True)
class ParamSlot:
    """A rotation whose angle is params[param_index]."""
    kind: GateKind
    target: int
    param_index: int

    def __post_init__(self):
        object.__setattr__(self, "kind", GateKind(self.kind))
        if self.kind not in PARAM_KINDS:
            raise GateSpecError(f"only Rx/Ry/Rz can be trainable, got {self.kind.value}")


Slot = Union[GateOp, ParamSlot]


@dataclass(frozen=True)
class ParamCircuit:
    n_qubits: int
    layout: Tuple[Slot, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "layout", tuple(self.layout))
        indices = [slot.param_index for slot in self.layout if isinstance(slot, ParamSlot)]
        if sorted(indices) != list(range(len(indices))):
            raise GateSpecError(f"parameter indices must cover 0..n-1 exactly once, got {sorted(indices)}")
        for slot in self.layout:
            targets = (slot.target,) if isinstance(slot, ParamSlot) else slot.qubits
            if any(not 0 <= q < self.n_qubits for q in targets):
                raise GateSpecError(f"slot {slot} outside {self.n_qubits} qubits")

    @property
    def n_params(self) -> int:
        return sum(1 for slot in self.layout if isinstance(slot, ParamSlot))

    @property
    def cnot_count(self) -> int:
        return sum(1 for slot in self.layout if isinstance(slot, GateOp) and slot.kind is GateKind.CNOT)


def entangler_pairs(n_qubits: int, entangler: Entangler) -> Tuple[Tuple[int, int], ...]:
    if n_qubits < 2:
        return ()
    pairs = [(i, i + 1) for i in range(n_qubits - 1)]
    # a ring on two qubits would repeat the same pair
    if Entangler(entangler) is Entangler.RING and n_qubits > 2:
        pairs.append((n_qubits - 1, 0))
    return tuple(pairs)


def build_ansatz(spec: AnsatzSpec) -> ParamCircuit:
    """Per layer: Ry then Rz on every qubit, then the CNOT entanglers."""
    layout = []
    index = 0
    for _ in range(spec.depth):
        for q in range(spec.n_qubits):
            layout.append(ParamSlot(GateKind.RY, q, index))
            layout.append(ParamSlot(GateKind.RZ, q, index + 1))
            index += 2
        for control, target in entangler_pairs(spec.n_qubits, spec.entangler):
            layout.append(GateOp(GateKind.CNOT, target, control=control))
    return ParamCircuit(spec.n_qubits, tuple(layout))


def init_params(pc: ParamCircuit, rng: np.random.Generator) -> np.ndarray:
    return rng.uniform(-np.pi, np.pi, size=pc.n_params)


def bind(pc: ParamCircuit, params: Sequence[float]) -> Circuit:
    params = _check_params(pc, params)
    ops = [
        GateOp(slot.kind, slot.target, angle=float(params[slot.param_index])) if isinstance(slot, ParamSlot) else slot
        for slot in pc.layout
    ]
    return Circuit(pc.n_qubits, tuple(ops))


# =============================================================================
# EXECUTION
# =============================================================================

_executions = 0
# seeds run on worker threads share the counter
_executions_lock = threading.Lock()


def execution_count() -> int:
    """Circuit executions since the last reset."""
    with _executions_lock:
        return _executions


def reset_execution_count() -> None:
    global _executions
    with _executions_lock:
        _executions = 0


def _check_params(pc: ParamCircuit, params: Sequence[float]) -> np.ndarray:
    params = np.asarray(params, dtype=float).reshape(-1)
    if params.shape[0] != pc.n_params:
        raise ShapeError(f"circuit has {pc.n_params} parameters, got {params.shape[0]}")
    return params


def _execute(pc: ParamCircuit, params: np.ndarray, input: StateVector) -> StateVector:
    global _executions
    if input.n_qubits != pc.n_qubits:
        raise ShapeError(f"circuit has {pc.n_qubits} qubits, input state has {input.n_qubits}")
    with _executions_lock:
        _executions += 1
    amps = input.amplitudes
    for slot in pc.layout:
        if isinstance(slot, ParamSlot):
            amps = apply_matrix(amps, gate_matrix(slot.kind, params[slot.param_index]), (slot.target,), pc.n_qubits)
        else:
            amps = apply_matrix(amps, slot.matrix(), slot.qubits, pc.n_qubits)
    return StateVector(pc.n_qubits, amps)


def _z_readout(measured: Sequence[int]) -> Callable[[StateVector], np.ndarray]:
    measured = tuple(measured)
    return lambda state: np.array([expectation_z(state, q) for q in measured])


def vqc_forward(pc: ParamCircuit, params: Sequence[float], input: StateVector,
                measured: Sequence[int]) -> np.ndarray:
    """<Z> of each measured qubit after V(params) acts on `input`."""
    params = _check_params(pc, params)
    return _z_readout(measured)(_execute(pc, params, input))


def vqc_probabilities(pc: ParamCircuit, params: Sequence[float], input: StateVector) -> np.ndarray:
    params = _check_params(pc, params)
    return probabilities(_execute(pc, params, input))


# =============================================================================
# PARAMETER SHIFT
# =============================================================================

def _shift_grad(pc: ParamCircuit, params: np.ndarray, input: StateVector,
                readout: Callable[[StateVector], np.ndarray], upstream: np.ndarray) -> np.ndarray:
    grad = np.zeros(pc.n_params)
    for j in range(pc.n_params):
        shifted = params.copy()
        shifted[j] = params[j] + SHIFT
        plus = readout(_execute(pc, shifted, input))
        shifted[j] = params[j] - SHIFT
        minus = readout(_execute(pc, shifted, input))
        grad[j] = float(np.dot(upstream, (plus - minus) / 2.0))
    return grad


def _check_upstream(upstream: Sequence[float], length: int) -> np.ndarray:
    upstream = np.asarray(upstream, dtype=float).reshape(-1)
    if upstream.shape[0] != length:
        raise ShapeError(f"upstream gradient has length {upstream.shape[0]}, expected {length}")
    return upstream


def param_shift_grad(pc: ParamCircuit, params: Sequence[float], input: StateVector,
                     measured: Sequence[int], upstream: Sequence[float]) -> np.ndarray:
    """
    dL/dtheta_j = sum_k upstream_k * (E_k(theta_j + pi/2) - E_k(theta_j - pi/2)) / 2.

    Runs exactly 2 * n_params circuits.
    """
    params = _check_params(pc, params)
    upstream = _check_upstream(upstream, len(measured))
    return _shift_grad(pc, params, input, _z_readout(measured), upstream)


def probability_shift_grad(pc: ParamCircuit, params: Sequence[float], input: StateVector,
                           upstream: Sequence[float]) -> np.ndarray:
    """Same rule applied to every basis-state probability p(x) = |<x|psi>|^2."""
    params = _check_params(pc, params)
    upstream = _check_upstream(upstream, 2 ** pc.n_qubits)
    return _shift_grad(pc, params, input, probabilities, upstream)


def input_angle_grad(pc: ParamCircuit, params: Sequence[float], encode_angles: Sequence[float],
                     measured: Sequence[int], upstream: Sequence[float]) -> np.ndarray:
    """Gradient with respect to the Ry encoding angles, shifting one angle at a time."""
    params = _check_params(pc, params)
    angles = np.asarray(encode_angles, dtype=float).reshape(-1)
    if angles.shape[0] != pc.n_qubits:
        raise ShapeError(f"need {pc.n_qubits} encoding angles, got {angles.shape[0]}")
    upstream = _check_upstream(upstream, len(measured))
    readout = _z_readout(measured)

    grad = np.zeros(pc.n_qubits)
    for i in range(pc.n_qubits):
        shifted = angles.copy()
        shifted[i] = angles[i] + SHIFT
        plus = readout(_execute(pc, params, angle_encode(shifted)))
        shifted[i] = angles[i] - SHIFT
        minus = readout(_execute(pc, params, angle_encode(shifted)))
        grad[i] = float(np.dot(upstream, (plus - minus) / 2.0))
    return grad
