"""
Dense statevector simulation.

Qubit 0 is the most significant bit of the basis index, so on two qubits the
amplitude order is |00>, |01>, |10>, |11>. Global phase is never normalized
away.
"""

from dataclasses import dataclass
from enum import Enum
from typing import Dict, Optional, Sequence, Tuple

import numpy as np

from .config import MAX_QUBITS, NORM_TOLERANCE
from .errors import ArgumentError, CapacityError, GateSpecError, QubitIndexError, ShapeError


# =============================================================================
# GATES
# =============================================================================

class GateKind(str, Enum):
    I = "I"
    X = "X"
    Y = "Y"
    Z = "Z"
    H = "H"
    RX = "Rx"
    RY = "Ry"
    RZ = "Rz"
    PHASE = "Phase"
    CNOT = "CNOT"


ROTATION_KINDS = frozenset({GateKind.RX, GateKind.RY, GateKind.RZ, GateKind.PHASE})

_SQRT_HALF = 1.0 / np.sqrt(2.0)
_FIXED_MATRICES: Dict[GateKind, np.ndarray] = {
    GateKind.I: np.eye(2, dtype=complex),
    GateKind.X: np.array([[0, 1], [1, 0]], dtype=complex),
    GateKind.Y: np.array([[0, -1j], [1j, 0]], dtype=complex),
    GateKind.Z: np.array([[1, 0], [0, -1]], dtype=complex),
    GateKind.H: np.array([[1, 1], [1, -1]], dtype=complex) * _SQRT_HALF,
    GateKind.CNOT: np.array([[1, 0, 0, 0],
                             [0, 1, 0, 0],
                             [0, 0, 0, 1],
                             [0, 0, 1, 0]], dtype=complex),
}


def gate_matrix(kind: GateKind, angle: Optional[float] = None) -> np.ndarray:
    """2x2 matrix (4x4 for CNOT, control first) of a gate."""
    kind = GateKind(kind)
    if kind in _FIXED_MATRICES:
        return _FIXED_MATRICES[kind]
    if angle is None:
        raise GateSpecError(f"{kind.value} needs an angle")
    c, s = np.cos(angle / 2), np.sin(angle / 2)
    if kind is GateKind.RX:
        return np.array([[c, -1j * s], [-1j * s, c]], dtype=complex)
    if kind is GateKind.RY:
        return np.array([[c, -s], [s, c]], dtype=complex)
    if kind is GateKind.RZ:
        return np.array([[np.exp(-0.5j * angle), 0], [0, np.exp(0.5j * angle)]], dtype=complex)
    return np.array([[1, 0], [0, np.exp(1j * angle)]], dtype=complex)


@dataclass(frozen=True)
class GateOp:
    """One gate placed on a circuit."""
    kind: GateKind
    target: int
    control: Optional[int] = None
    angle: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "kind", GateKind(self.kind))
        if (self.control is not None) != (self.kind is GateKind.CNOT):
            raise GateSpecError(f"control must be given exactly for CNOT, got {self}")
        if (self.angle is not None) != (self.kind in ROTATION_KINDS):
            raise GateSpecError(f"angle must be given exactly for rotation/phase gates, got {self}")
        if self.control is not None and self.control == self.target:
            raise GateSpecError(f"CNOT control and target coincide on qubit {self.target}")

    @property
    def qubits(self) -> Tuple[int, ...]:
        if self.control is None:
            return (self.target,)
        return (self.control, self.target)

    def matrix(self) -> np.ndarray:
        return gate_matrix(self.kind, self.angle)

    def check(self, n_qubits: int) -> None:
        for q in self.qubits:
            if not 0 <= q < n_qubits:
                raise QubitIndexError(f"{self.kind.value} acts on qubit {q}, state has {n_qubits}")


# =============================================================================
# STATES AND CIRCUITS
# =============================================================================

def _check_capacity(n_qubits: int) -> None:
    if not 1 <= n_qubits <= MAX_QUBITS:
        raise CapacityError(f"n_qubits must be in 1..{MAX_QUBITS}, got {n_qubits}")


@dataclass(frozen=True, eq=False)
class StateVector:
    """Normalized pure state; the amplitude array is read-only."""
    n_qubits: int
    amplitudes: np.ndarray

    def __post_init__(self):
        _check_capacity(self.n_qubits)
        amps = np.array(self.amplitudes, dtype=complex).reshape(-1)
        if amps.shape[0] != 2 ** self.n_qubits:
            raise ShapeError(f"{self.n_qubits} qubits need {2 ** self.n_qubits} amplitudes, got {amps.shape[0]}")
        norm = float(np.vdot(amps, amps).real)
        if abs(norm - 1.0) > NORM_TOLERANCE:
            raise ShapeError(f"state is not normalized (|psi|^2 = {norm!r})")
        amps.setflags(write=False)
        object.__setattr__(self, "amplitudes", amps)

    def __len__(self) -> int:
        return self.amplitudes.shape[0]


@dataclass(frozen=True)
class Circuit:
    n_qubits: int
    ops: Tuple[GateOp, ...] = ()

    def __post_init__(self):
        _check_capacity(self.n_qubits)
        object.__setattr__(self, "ops", tuple(self.ops))
        for op in self.ops:
            op.check(self.n_qubits)


def apply_matrix(amps: np.ndarray, matrix: np.ndarray, qubits: Sequence[int], n_qubits: int) -> np.ndarray:
    """Contract a k-qubit matrix into the given qubit axes of a raw amplitude array."""
    k = len(qubits)
    psi = amps.reshape((2,) * n_qubits)
    m = matrix.reshape((2,) * (2 * k))
    psi = np.tensordot(m, psi, axes=(list(range(k, 2 * k)), list(qubits)))
    psi = np.moveaxis(psi, list(range(k)), list(qubits))
    return psi.reshape(-1)


def init_zero_state(n_qubits: int) -> StateVector:
    _check_capacity(n_qubits)
    amps = np.zeros(2 ** n_qubits, dtype=complex)
    amps[0] = 1.0
    return StateVector(n_qubits, amps)


def apply_gate(state: StateVector, gate: GateOp) -> StateVector:
    gate.check(state.n_qubits)
    amps = apply_matrix(state.amplitudes, gate.matrix(), gate.qubits, state.n_qubits)
    return StateVector(state.n_qubits, amps)


def run_circuit(circuit: Circuit, init: StateVector) -> StateVector:
    """Apply the ops left to right; only the final state is re-validated."""
    if circuit.n_qubits != init.n_qubits:
        raise ShapeError(f"circuit has {circuit.n_qubits} qubits, state has {init.n_qubits}")
    amps = init.amplitudes
    for op in circuit.ops:
        amps = apply_matrix(amps, op.matrix(), op.qubits, circuit.n_qubits)
    return StateVector(init.n_qubits, amps)


# =============================================================================
# MEASUREMENT
# =============================================================================

def probabilities(state: StateVector) -> np.ndarray:
    """Born-rule probability of every basis state."""
    return np.abs(state.amplitudes) ** 2


def expectation_z(state: StateVector, qubit: int) -> float:
    if not 0 <= qubit < state.n_qubits:
        raise QubitIndexError(f"qubit {qubit} out of range for {state.n_qubits} qubits")
    probs = probabilities(state).reshape((2,) * state.n_qubits)
    marginal = np.moveaxis(probs, qubit, 0).reshape(2, -1).sum(axis=1)
    return float(np.clip(marginal[0] - marginal[1], -1.0, 1.0))


def sample_bitstrings(state: StateVector, shots: int, rng: np.random.Generator) -> Dict[str, int]:
    """Draw `shots` measurements of every qubit; returns only observed bitstrings."""
    if shots < 1:
        raise ArgumentError(f"shots must be >= 1, got {shots}")
    probs = probabilities(state)
    counts = rng.multinomial(shots, probs / probs.sum())
    width = state.n_qubits
    return {format(index, f"0{width}b"): int(count) for index, count in enumerate(counts) if count}


# =============================================================================
# ENCODING
# =============================================================================

def encoding_circuit(features: Sequence[float]) -> Circuit:
    """Ry(feature_i) on qubit i."""
    features = np.asarray(features, dtype=float).reshape(-1)
    _check_capacity(len(features))
    return Circuit(len(features), tuple(GateOp(GateKind.RY, i, angle=float(x)) for i, x in enumerate(features)))


def angle_encode(features: Sequence[float]) -> StateVector:
    circuit = encoding_circuit(features)
    return run_circuit(circuit, init_zero_state(circuit.n_qubits))
