"""Dense statevector simulator for small quantum registers.

Conventions, fixed once and shared with the test oracles:

- Qubit 0 is the least-significant bit of the basis index, so for n qubits
  basis index i has qubit q in state (i >> q) & 1.
- Rotation gates are the standard Pauli rotations
      RX(t) = [[cos t/2, -i sin t/2], [-i sin t/2, cos t/2]]
      RY(t) = [[cos t/2,   -sin t/2], [   sin t/2, cos t/2]]
      RZ(t) = diag(exp(-i t/2), exp(+i t/2))
- Gates are applied by one in-place strided pass over the amplitudes; the
  full 2^n x 2^n matrix route exists only in the test oracle (selfcheck.py).

Registers are capped at 8 qubits; everything is complex128.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from math import cos, sin
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigError, NumericalAbort, StructureError

MAX_QUBITS = 8
NORM_TOL = 1e-12


class GateKind(Enum):
    RX = "rx"
    RY = "ry"
    RZ = "rz"
    CNOT = "cnot"
    CZ = "cz"


ROTATIONS = (GateKind.RX, GateKind.RY, GateKind.RZ)


@dataclass(frozen=True)
class Gate:
    kind: GateKind
    target: int
    control: Optional[int] = None
    angle: Optional[float] = None

    def shifted(self, delta: float) -> "Gate":
        """Same gate with the rotation angle shifted by `delta`."""
        if self.angle is None:
            raise StructureError(f"{self.kind.value} gate has no angle to shift")
        return Gate(self.kind, self.target, self.control, self.angle + delta)


def rx(target: int, angle: float) -> Gate:
    return Gate(GateKind.RX, target, angle=angle)


def ry(target: int, angle: float) -> Gate:
    return Gate(GateKind.RY, target, angle=angle)


def rz(target: int, angle: float) -> Gate:
    return Gate(GateKind.RZ, target, angle=angle)


def cnot(control: int, target: int) -> Gate:
    return Gate(GateKind.CNOT, target, control=control)


def cz(control: int, target: int) -> Gate:
    return Gate(GateKind.CZ, target, control=control)


class ObservableKind(Enum):
    PAULI_Z = "pauli_z"


@dataclass(frozen=True)
class Observable:
    qubit: int
    kind: ObservableKind = ObservableKind.PAULI_Z


@dataclass
class StateVector:
    n_qubits: int
    amplitudes: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        if not 1 <= self.n_qubits <= MAX_QUBITS:
            raise ConfigError(f"n_qubits must be in 1..{MAX_QUBITS}, got {self.n_qubits}")
        self.amplitudes = np.asarray(self.amplitudes, dtype=np.complex128)
        if self.amplitudes.shape != (2**self.n_qubits,):
            raise StructureError(
                f"expected {2**self.n_qubits} amplitudes, got shape {self.amplitudes.shape}"
            )
        _check_norm(self.amplitudes)


def zero_state(n_qubits: int) -> StateVector:
    """|0...0>: amplitude 1 at basis index 0."""
    if not 1 <= n_qubits <= MAX_QUBITS:
        raise ConfigError(f"n_qubits must be in 1..{MAX_QUBITS}, got {n_qubits}")
    amps = np.zeros(2**n_qubits, dtype=np.complex128)
    amps[0] = 1.0
    return StateVector(n_qubits, amps)


def norm(state: StateVector) -> float:
    return float(np.sqrt(np.sum(state.amplitudes.real**2 + state.amplitudes.imag**2)))


def _check_norm(amps: np.ndarray) -> None:
    total = float(np.sum(amps.real**2 + amps.imag**2))
    if abs(total - 1.0) > NORM_TOL:
        raise NumericalAbort(f"statevector norm drifted: sum |a|^2 = {total!r}")


def _validate_gate(gate: Gate, n: int) -> None:
    if not 0 <= gate.target < n:
        raise StructureError(f"target {gate.target} out of range for {n} qubits")
    if gate.kind in ROTATIONS:
        if gate.angle is None or not np.isfinite(gate.angle):
            raise StructureError(f"{gate.kind.value} gate needs a finite angle")
        if gate.control is not None:
            raise StructureError("rotation gates take no control qubit")
    else:
        if gate.control is None:
            raise StructureError(f"{gate.kind.value} gate needs a control qubit")
        if not 0 <= gate.control < n:
            raise StructureError(f"control {gate.control} out of range for {n} qubits")
        if gate.control == gate.target:
            raise StructureError("control and target must differ")


def _apply_kernel(amps: np.ndarray, gate: Gate, n: int) -> None:
    """Apply one gate in place on a raw amplitude buffer (no checks)."""
    if gate.kind in ROTATIONS:
        q = gate.target
        view = amps.reshape(1 << (n - 1 - q), 2, 1 << q)
        if gate.kind is GateKind.RZ:
            half = 0.5 * gate.angle
            view[:, 0, :] *= complex(cos(half), -sin(half))
            view[:, 1, :] *= complex(cos(half), sin(half))
            return
        c = cos(0.5 * gate.angle)
        s = sin(0.5 * gate.angle)
        a0 = view[:, 0, :].copy()
        a1 = view[:, 1, :]
        if gate.kind is GateKind.RY:
            view[:, 0, :] = c * a0 - s * a1
            view[:, 1, :] = s * a0 + c * a1
        else:  # RX
            view[:, 0, :] = c * a0 - (1j * s) * a1
            view[:, 1, :] = (-1j * s) * a0 + c * a1
        return
    # entanglers: axis k of the [2]*n view is qubit (n-1-k)
    view = amps.reshape([2] * n)
    ax_c, ax_t = n - 1 - gate.control, n - 1 - gate.target
    if gate.kind is GateKind.CNOT:
        i10 = tuple(1 if ax == ax_c else (0 if ax == ax_t else slice(None)) for ax in range(n))
        i11 = tuple(1 if ax in (ax_c, ax_t) else slice(None) for ax in range(n))
        tmp = view[i10].copy()
        view[i10] = view[i11]
        view[i11] = tmp
    else:  # CZ
        i11 = tuple(1 if ax in (ax_c, ax_t) else slice(None) for ax in range(n))
        view[i11] *= -1.0
    return


def apply_gate(state: StateVector, gate: Gate) -> StateVector:
    """U * state for a single gate; the input state is left untouched."""
    _validate_gate(gate, state.n_qubits)
    amps = state.amplitudes.copy()
    _apply_kernel(amps, gate, state.n_qubits)
    _check_norm(amps)
    return StateVector(state.n_qubits, amps)


def apply_circuit(state: StateVector, gates: Sequence[Gate]) -> StateVector:
    """Left-to-right application of a gate sequence."""
    n = state.n_qubits
    for gate in gates:
        _validate_gate(gate, n)
    amps = state.amplitudes.copy()
    for gate in gates:
        _apply_kernel(amps, gate, n)
    _check_norm(amps)
    return StateVector(n, amps)


def _z_expectation_raw(amps: np.ndarray, qubit: int, n: int) -> float:
    probs = (amps.real**2 + amps.imag**2).reshape(1 << (n - 1 - qubit), 2, 1 << qubit)
    val = float(probs[:, 0, :].sum() - probs[:, 1, :].sum())
    # |p0 - p1| <= 1 exactly in math; trim f64 residue just past the bound
    return min(1.0, max(-1.0, val))


def expectation(state: StateVector, obs: Observable) -> float:
    """<state| Z_qubit |state>, computed from |a|^2 so it is exactly real."""
    if obs.kind is not ObservableKind.PAULI_Z:
        raise StructureError(f"unsupported observable {obs.kind}")
    if not 0 <= obs.qubit < state.n_qubits:
        raise StructureError(f"qubit {obs.qubit} out of range for {state.n_qubits} qubits")
    return _z_expectation_raw(state.amplitudes, obs.qubit, state.n_qubits)
