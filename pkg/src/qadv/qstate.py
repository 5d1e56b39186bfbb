"""Dense statevector simulation for the RX / RZ / CNOT gate set.

Conventions (fixed for the whole package):

* ``RX(t) = exp(-i t X / 2)`` and ``RZ(t) = exp(-i t Z / 2)`` (half-angle
  generators). :data:`ANGLE_FACTOR` records this so the full-angle
  alternative can be tested by scaling angles.
* Qubit 0 is the least-significant bit of the amplitude index.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np

from . import _backend, _fallback

#: Generator scale: a rotation by ``t`` is exp(-i * ANGLE_FACTOR * t * P).
ANGLE_FACTOR = 0.5
MAX_QUBITS = 24


class QubitRangeError(ValueError):
    pass


class GateKind(IntEnum):
    RX = _fallback.RX
    RZ = _fallback.RZ
    CNOT = _fallback.CNOT


@dataclass(frozen=True)
class GateOp:
    kind: GateKind
    target: int
    control: int | None = None
    angle: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", GateKind(self.kind))
        if self.kind is GateKind.CNOT:
            if self.control is None or self.angle is not None:
                raise ValueError("CNOT takes a control and no angle")
            if self.control == self.target:
                raise ValueError("CNOT control equals target")
        else:
            if self.control is not None:
                raise ValueError(f"{self.kind.name} takes no control")
            if self.angle is None or not math.isfinite(self.angle):
                raise ValueError(f"{self.kind.name} needs a finite angle")

    def check(self, n_qubits: int) -> None:
        for q in (self.target, self.control):
            if q is not None and not 0 <= q < n_qubits:
                raise IndexError(f"qubit index {q} out of range for {n_qubits} qubits")

    def inverse(self) -> "GateOp":
        if self.kind is GateKind.CNOT:
            return self
        return GateOp(self.kind, self.target, angle=-self.angle)


def rx(target: int, angle: float) -> GateOp:
    return GateOp(GateKind.RX, target, angle=float(angle))


def rz(target: int, angle: float) -> GateOp:
    return GateOp(GateKind.RZ, target, angle=float(angle))


def cnot(control: int, target: int) -> GateOp:
    return GateOp(GateKind.CNOT, target, control=control)


@dataclass(frozen=True)
class Circuit:
    n_qubits: int
    ops: tuple[GateOp, ...] = field(default_factory=tuple)

    def __post_init__(self):
        _check_qubits(self.n_qubits)
        object.__setattr__(self, "ops", tuple(self.ops))
        for op in self.ops:
            op.check(self.n_qubits)

    def __add__(self, other: "Circuit") -> "Circuit":
        if other.n_qubits != self.n_qubits:
            raise ValueError("cannot concatenate circuits of different width")
        return Circuit(self.n_qubits, self.ops + other.ops)

    def inverse(self) -> "Circuit":
        return Circuit(self.n_qubits, tuple(op.inverse() for op in reversed(self.ops)))

    def arrays(self):
        """Encode as (kinds, targets, controls, angles) arrays for the kernels."""
        kinds = np.array([op.kind for op in self.ops], dtype=np.int8)
        targets = np.array([op.target for op in self.ops], dtype=np.intc)
        controls = np.array([-1 if op.control is None else op.control for op in self.ops],
                            dtype=np.intc)
        angles = np.array([0.0 if op.angle is None else op.angle for op in self.ops])
        return kinds, targets, controls, angles


@dataclass(frozen=True, eq=False)
class StateVector:
    n_qubits: int
    amplitudes: np.ndarray

    def __post_init__(self):
        amps = np.asarray(self.amplitudes, dtype=np.complex128)
        if amps.shape != (1 << self.n_qubits,):
            raise ValueError(f"expected {1 << self.n_qubits} amplitudes, got {amps.shape}")
        amps.setflags(write=False)
        object.__setattr__(self, "amplitudes", amps)

    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))

    def probabilities(self) -> np.ndarray:
        return np.abs(self.amplitudes) ** 2


def _check_qubits(n_qubits: int, max_qubits: int = MAX_QUBITS) -> None:
    if not isinstance(n_qubits, (int, np.integer)) or not 1 <= n_qubits <= max_qubits:
        raise QubitRangeError(f"n_qubits must be in [1, {max_qubits}], got {n_qubits}")


def zero_state(n_qubits: int, max_qubits: int = MAX_QUBITS) -> StateVector:
    _check_qubits(n_qubits, max_qubits)
    amps = np.zeros(1 << n_qubits, dtype=np.complex128)
    amps[0] = 1.0
    return StateVector(int(n_qubits), amps)


def apply_gate(state: StateVector, op: GateOp) -> StateVector:
    op.check(state.n_qubits)
    control = -1 if op.control is None else op.control
    angle = np.array([0.0 if op.angle is None else op.angle])
    out = _fallback.apply_op(state.amplitudes[None, :], state.n_qubits, int(op.kind),
                             op.target, control, angle)
    return StateVector(state.n_qubits, out[0])


def run_circuit(circuit: Circuit, backend: str | None = None) -> StateVector:
    """Run ``circuit`` from |0...0>."""
    if not circuit.ops:
        return zero_state(circuit.n_qubits)
    kinds, targets, controls, angles = circuit.arrays()
    amps = _backend.simulate_batch(circuit.n_qubits, kinds, targets, controls, angles[None, :],
                                   backend=backend)
    return StateVector(circuit.n_qubits, amps[0])


def overlap_sq(a: StateVector, b: StateVector) -> float:
    """|<a|b>|^2 clamped to [0, 1]."""
    if a.n_qubits != b.n_qubits:
        raise ValueError(f"dimension mismatch: {a.n_qubits} vs {b.n_qubits} qubits")
    value = abs(np.vdot(a.amplitudes, b.amplitudes)) ** 2
    return float(min(1.0, max(0.0, value)))
