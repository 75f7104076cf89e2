"""Independent oracles and the user-facing health check.

Everything here deliberately recomputes results by a *different* route than
the production code:

- dense Kronecker-product matrices instead of strided amplitude updates,
- central finite differences instead of the parameter-shift rule / tape,
- O(n^2) pairwise concordance instead of the trapezoidal ROC sweep.

`run_selfcheck` executes the oracle suite and reports the max deviation per
check; the CLI exposes it as the `selfcheck` subcommand.
"""
from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .qsim import Gate, GateKind

_I2 = np.eye(2, dtype=np.complex128)
_PAULI = {
    "x": np.array([[0, 1], [1, 0]], dtype=np.complex128),
    "y": np.array([[0, -1j], [1j, 0]], dtype=np.complex128),
    "z": np.array([[1, 0], [0, -1]], dtype=np.complex128),
}
_P0 = np.array([[1, 0], [0, 0]], dtype=np.complex128)
_P1 = np.array([[0, 0], [0, 1]], dtype=np.complex128)


def _embed(n: int, per_qubit: dict[int, np.ndarray]) -> np.ndarray:
    """Kronecker product over qubits n-1 ... 0 (qubit 0 = least significant bit)."""
    full = np.array([[1.0]], dtype=np.complex128)
    for q in range(n - 1, -1, -1):
        full = np.kron(full, per_qubit.get(q, _I2))
    return full


def dense_gate_matrix(gate: Gate, n: int) -> np.ndarray:
    """Full 2^n x 2^n unitary of one gate, built from generators and projectors."""
    if gate.kind in (GateKind.RX, GateKind.RY, GateKind.RZ):
        pauli = _PAULI[gate.kind.value[-1]]
        u = np.cos(gate.angle / 2) * _I2 - 1j * np.sin(gate.angle / 2) * pauli
        return _embed(n, {gate.target: u})
    flip = _PAULI["x"] if gate.kind is GateKind.CNOT else _PAULI["z"]
    return _embed(n, {gate.control: _P0}) + _embed(n, {gate.control: _P1, gate.target: flip})


def dense_apply(amps: np.ndarray, gates: Sequence[Gate], n: int) -> np.ndarray:
    """Matrix-vector reference for a circuit; quadratic in the state size."""
    out = np.asarray(amps, dtype=np.complex128).copy()
    for gate in gates:
        out = dense_gate_matrix(gate, n) @ out
    return out


def dense_z_expectation(amps: np.ndarray, qubit: int, n: int) -> float:
    z = _embed(n, {qubit: _PAULI["z"]})
    return float(np.real(np.vdot(amps, z @ amps)))


def fd_gradient(f: Callable[[np.ndarray], float], x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central finite differences of a scalar function, one component at a time."""
    x = np.array(x, dtype=np.float64)  # private copy; f sees the perturbed copy
    grad = np.zeros_like(x)
    flat = grad.ravel()
    xf = x.ravel()
    for i in range(xf.size):
        orig = xf[i]
        xf[i] = orig + h
        fp = f(x)
        xf[i] = orig - h
        fm = f(x)
        xf[i] = orig
        flat[i] = (fp - fm) / (2 * h)
    return grad


def pairwise_auc(scores: np.ndarray, labels: np.ndarray) -> float:
    """Mann-Whitney concordance: P(score_pos > score_neg), ties counted 1/2."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    pos = scores[labels == 1]
    neg = scores[labels == 0]
    if pos.size == 0 or neg.size == 0:
        raise ValueError("pairwise AUC needs both classes")
    diff = pos[:, None] - neg[None, :]
    wins = np.count_nonzero(diff > 0) + 0.5 * np.count_nonzero(diff == 0)
    return float(wins / (pos.size * neg.size))


def random_circuit(n: int, n_gates: int, rng: np.random.Generator) -> list[Gate]:
    """Random mix of rotations and entanglers over n qubits."""
    gates: list[Gate] = []
    kinds = [GateKind.RX, GateKind.RY, GateKind.RZ, GateKind.CNOT, GateKind.CZ]
    for _ in range(n_gates):
        kind = kinds[rng.integers(len(kinds) if n > 1 else 3)]
        if kind in (GateKind.CNOT, GateKind.CZ):
            control, target = rng.choice(n, size=2, replace=False)
            gates.append(Gate(kind, int(target), control=int(control)))
        else:
            gates.append(Gate(kind, int(rng.integers(n)), angle=float(rng.uniform(-np.pi, np.pi))))
    return gates


def random_state(n: int, rng: np.random.Generator) -> np.ndarray:
    amps = rng.normal(size=2**n) + 1j * rng.normal(size=2**n)
    return amps / np.linalg.norm(amps)


# ---------------------------------------------------------------------------
# check runners


@dataclass
class CheckResult:
    name: str
    passed: bool
    max_deviation: float
    tolerance: float
    seconds: float

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (
            f"[{status}] {self.name}: max deviation {self.max_deviation:.3e}"
            f" (tolerance {self.tolerance:.0e}, {self.seconds:.2f}s)"
        )


def check_simulator(n_circuits: int = 100, seed: int = 1234) -> CheckResult:
    """Strided gate kernels vs dense Kronecker matrices on random circuits."""
    from . import qsim

    rng = np.random.default_rng(seed)
    start = time.perf_counter()
    worst = 0.0
    for _ in range(n_circuits):
        n = int(rng.integers(1, 5))
        gates = random_circuit(n, int(rng.integers(5, 30)), rng)
        amps = random_state(n, rng)
        fast = qsim.apply_circuit(qsim.StateVector(n, amps.copy()), gates).amplitudes
        ref = dense_apply(amps, gates, n)
        worst = max(worst, float(np.max(np.abs(fast - ref))))
    return CheckResult("simulator vs dense oracle", worst <= 1e-10, worst, 1e-10,
                       time.perf_counter() - start)


def check_parameter_shift(n_circuits: int = 20, seed: int = 99,
                          shift_perturbation: float = 0.0) -> CheckResult:
    """Parameter-shift gradients vs central finite differences.

    `shift_perturbation` is a fault-injection hook: it detunes the +-pi/2
    shift so the check must fail, proving the oracle has teeth.
    """
    from . import pqc

    rng = np.random.default_rng(seed)
    start = time.perf_counter()
    worst = 0.0
    for _ in range(n_circuits):
        cfg = pqc.PqcConfig(n_qubits=int(rng.integers(1, 5)), depth=int(rng.integers(1, 3)))
        worst = max(worst, pqc.max_shift_vs_fd_deviation(cfg, rng,
                                                         shift_perturbation=shift_perturbation))
    return CheckResult("parameter-shift vs finite differences", worst <= 1e-6, worst, 1e-6,
                       time.perf_counter() - start)


def check_end_to_end(seed: int = 7) -> CheckResult:
    """Whole-model gradient (tape + shift rule) vs finite differences."""
    from . import model

    start = time.perf_counter()
    worst = model.max_end_to_end_fd_deviation(seed=seed)
    return CheckResult("end-to-end hybrid gradient", worst <= 1e-4, worst, 1e-4,
                       time.perf_counter() - start)


def check_auc(n_sets: int = 50, seed: int = 5) -> CheckResult:
    """Trapezoidal ROC AUC vs O(n^2) pairwise concordance, tie-heavy included."""
    from .metrics import roc_auc

    rng = np.random.default_rng(seed)
    start = time.perf_counter()
    worst = 0.0
    for _ in range(n_sets):
        size = int(rng.integers(10, 120))
        labels = rng.integers(0, 2, size=size)
        if labels.min() == labels.max():
            labels[0] = 1 - labels[0]
        # half the sets draw from a tiny value grid to force heavy ties
        if rng.random() < 0.5:
            scores = rng.choice([0.1, 0.4, 0.5, 0.9], size=size)
        else:
            scores = rng.random(size)
        worst = max(worst, abs(roc_auc(scores, labels) - pairwise_auc(scores, labels)))
    return CheckResult("trapezoidal AUC vs pairwise oracle", worst <= 1e-12, worst, 1e-12,
                       time.perf_counter() - start)


def run_selfcheck(shift_perturbation: float = 0.0) -> list[CheckResult]:
    return [
        check_simulator(),
        check_parameter_shift(shift_perturbation=shift_perturbation),
        check_end_to_end(),
        check_auc(),
    ]
