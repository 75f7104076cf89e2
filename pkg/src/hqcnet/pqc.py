"""Data re-uploading ansatz and exact parameter-shift gradients.

Per layer the circuit emits, in order:

1. an encoding block RY(z_i) on every qubit (every layer when re-uploading,
   only the first layer otherwise),
2. a trainable Euler triple RZ(theta[l,i,0]) RY(theta[l,i,1]) RZ(theta[l,i,2])
   per qubit,
3. an entangler ring CNOT(i -> (i+1) mod n) (or CZ ring / CNOT line).

The readout is the Pauli-Z expectation of every qubit. Gradients with respect
to both the trainable angles and the encoding angles use the parameter-shift
rule, q(theta + pi/2) - q(theta - pi/2) over 2, one shifted circuit evaluation
per direction; with re-uploading each z_i occurs once per layer and the
occurrence contributions sum. All functions are pure in (z, theta, cfg).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from . import qsim
from .errors import ConfigError, StructureError
from .qsim import Gate, GateKind

ENTANGLERS = ("cnot_ring", "cz_ring", "cnot_linear")
SHIFT = np.pi / 2


@dataclass(frozen=True)
class PqcConfig:
    n_qubits: int = 4
    depth: int = 2
    entangler: str = "cnot_ring"
    reupload: bool = True

    def __post_init__(self) -> None:
        if self.n_qubits < 1:
            raise ConfigError(f"n_qubits must be >= 1, got {self.n_qubits}")
        if self.depth < 1:
            raise ConfigError(f"depth must be >= 1, got {self.depth}")
        if self.entangler not in ENTANGLERS:
            raise ConfigError(f"entangler must be one of {ENTANGLERS}, got {self.entangler!r}")

    @property
    def n_params(self) -> int:
        return 3 * self.n_qubits * self.depth

    def theta_shape(self) -> tuple[int, int, int]:
        return (self.depth, self.n_qubits, 3)


@dataclass
class PqcParams:
    theta: np.ndarray

    def __post_init__(self) -> None:
        self.theta = np.asarray(self.theta, dtype=np.float64)
        if not np.all(np.isfinite(self.theta)):
            raise StructureError("theta contains non-finite values")

    @classmethod
    def zeros(cls, cfg: PqcConfig) -> "PqcParams":
        return cls(np.zeros(cfg.theta_shape()))

    @classmethod
    def random(cls, cfg: PqcConfig, rng: np.random.Generator, scale: float = 0.1) -> "PqcParams":
        return cls(scale * rng.standard_normal(cfg.theta_shape()))


@dataclass
class QuantumFeatures:
    q: np.ndarray


def _validated_inputs(z: np.ndarray, params: PqcParams, cfg: PqcConfig) -> tuple[np.ndarray, np.ndarray]:
    z = np.asarray(z, dtype=np.float64)
    if z.shape != (cfg.n_qubits,):
        raise StructureError(f"expected {cfg.n_qubits} encoding angles, got shape {z.shape}")
    if not np.all(np.isfinite(z)):
        raise StructureError("encoding angles contain non-finite values")
    if params.theta.shape != cfg.theta_shape():
        raise StructureError(
            f"theta shape {params.theta.shape} does not match config {cfg.theta_shape()}"
        )
    return z, params.theta


def _entangler_gates(cfg: PqcConfig) -> list[Gate]:
    n = cfg.n_qubits
    if n < 2:
        return []
    if cfg.entangler == "cnot_linear":
        return [qsim.cnot(i, i + 1) for i in range(n - 1)]
    maker = qsim.cz if cfg.entangler == "cz_ring" else qsim.cnot
    return [maker(i, (i + 1) % n) for i in range(n)]


def _build(z: np.ndarray, theta: np.ndarray, cfg: PqcConfig):
    """Gate list plus the gate positions of every theta entry and every
    occurrence of every encoding angle (needed by the shift rule)."""
    gates: list[Gate] = []
    theta_pos: dict[tuple[int, int, int], int] = {}
    encode_pos: list[list[int]] = [[] for _ in range(cfg.n_qubits)]
    for layer in range(cfg.depth):
        if layer == 0 or cfg.reupload:
            for i in range(cfg.n_qubits):
                encode_pos[i].append(len(gates))
                gates.append(qsim.ry(i, float(z[i])))
        for i in range(cfg.n_qubits):
            for k, kind in enumerate((GateKind.RZ, GateKind.RY, GateKind.RZ)):
                theta_pos[(layer, i, k)] = len(gates)
                gates.append(Gate(kind, i, angle=float(theta[layer, i, k])))
        gates.extend(_entangler_gates(cfg))
    return gates, theta_pos, encode_pos


def build_circuit(z: np.ndarray, params: PqcParams, cfg: PqcConfig) -> list[Gate]:
    z, theta = _validated_inputs(z, params, cfg)
    gates, _, _ = _build(z, theta, cfg)
    return gates


@lru_cache(maxsize=None)
def _z_signs(n: int) -> np.ndarray:
    """Sign table s[i, idx] = +-1 for Z on qubit i at basis index idx."""
    idx = np.arange(2**n)
    return np.array([1.0 - 2.0 * ((idx >> q) & 1) for q in range(n)])


def _all_z(amps: np.ndarray, n: int) -> np.ndarray:
    probs = amps.real**2 + amps.imag**2
    return np.clip(_z_signs(n) @ probs, -1.0, 1.0)


def _run(gates: list[Gate], n: int) -> np.ndarray:
    amps = np.zeros(2**n, dtype=np.complex128)
    amps[0] = 1.0
    for gate in gates:
        qsim._apply_kernel(amps, gate, n)
    return amps


def _prefix_states(gates: list[Gate], n: int) -> list[np.ndarray]:
    """states[j] is the state just before gate j; states[-1] the final state."""
    amps = np.zeros(2**n, dtype=np.complex128)
    amps[0] = 1.0
    states = [amps.copy()]
    for gate in gates:
        qsim._apply_kernel(amps, gate, n)
        states.append(amps.copy())
    return states


def _shifted_expectations(prefix: list[np.ndarray], gates: list[Gate], j: int,
                          delta: float, n: int) -> np.ndarray:
    """Z expectations of the circuit with gate j's angle shifted by delta.

    Reuses the unshifted prefix state; identical to re-running the whole
    shifted circuit from |0...0>.
    """
    amps = prefix[j].copy()
    qsim._apply_kernel(amps, gates[j].shifted(delta), n)
    for gate in gates[j + 1:]:
        qsim._apply_kernel(amps, gate, n)
    return _all_z(amps, n)


def forward(z: np.ndarray, params: PqcParams, cfg: PqcConfig) -> QuantumFeatures:
    """q_i = <psi(theta)| Z_i |psi(theta)> on |0...0> through the built circuit."""
    z, theta = _validated_inputs(z, params, cfg)
    gates, _, _ = _build(z, theta, cfg)
    return QuantumFeatures(_all_z(_run(gates, cfg.n_qubits), cfg.n_qubits))


def grad_params(z: np.ndarray, params: PqcParams, cfg: PqcConfig,
                cotangent: np.ndarray, shift: float = SHIFT) -> np.ndarray:
    """d(cotangent . q)/dtheta via the parameter-shift rule, shaped like theta.

    `shift` exists as a fault-injection hook for the selfcheck; production
    code always uses the exact pi/2 shift.
    """
    z, theta = _validated_inputs(z, params, cfg)
    cot = np.asarray(cotangent, dtype=np.float64)
    if cot.shape != (cfg.n_qubits,):
        raise StructureError(f"cotangent must have shape ({cfg.n_qubits},), got {cot.shape}")
    gates, theta_pos, _ = _build(z, theta, cfg)
    prefix = _prefix_states(gates, cfg.n_qubits)
    grad = np.zeros_like(theta)
    for (layer, i, k), j in theta_pos.items():
        q_plus = _shifted_expectations(prefix, gates, j, shift, cfg.n_qubits)
        q_minus = _shifted_expectations(prefix, gates, j, -shift, cfg.n_qubits)
        grad[layer, i, k] = cot @ (q_plus - q_minus) / 2.0
    return grad


def grad_inputs(z: np.ndarray, params: PqcParams, cfg: PqcConfig,
                cotangent: np.ndarray, shift: float = SHIFT) -> np.ndarray:
    """d(cotangent . q)/dz; every re-uploaded occurrence is shifted separately
    and the contributions sum."""
    z, theta = _validated_inputs(z, params, cfg)
    cot = np.asarray(cotangent, dtype=np.float64)
    if cot.shape != (cfg.n_qubits,):
        raise StructureError(f"cotangent must have shape ({cfg.n_qubits},), got {cot.shape}")
    gates, _, encode_pos = _build(z, theta, cfg)
    prefix = _prefix_states(gates, cfg.n_qubits)
    grad = np.zeros(cfg.n_qubits)
    for i, positions in enumerate(encode_pos):
        for j in positions:
            q_plus = _shifted_expectations(prefix, gates, j, shift, cfg.n_qubits)
            q_minus = _shifted_expectations(prefix, gates, j, -shift, cfg.n_qubits)
            grad[i] += cot @ (q_plus - q_minus) / 2.0
    return grad


def describe_circuit(z: np.ndarray, params: PqcParams, cfg: PqcConfig) -> str:
    """Human-readable per-layer gate listing, for debugging and diffing."""
    z, theta = _validated_inputs(z, params, cfg)
    lines = [f"pqc: {cfg.n_qubits} qubits, depth {cfg.depth}, entangler {cfg.entangler}, "
             f"reupload {'on' if cfg.reupload else 'off'}"]
    for layer in range(cfg.depth):
        lines.append(f"layer {layer}:")
        if layer == 0 or cfg.reupload:
            enc = "  ".join(f"RY(q{i}, {z[i]:+.6f})" for i in range(cfg.n_qubits))
            lines.append(f"  encode   {enc}")
        for i in range(cfg.n_qubits):
            a, b, c = theta[layer, i]
            lines.append(f"  rotate   q{i}: RZ({a:+.6f}) RY({b:+.6f}) RZ({c:+.6f})")
        ent = "  ".join(
            f"{g.kind.value.upper()}({g.control}->{g.target})" for g in _entangler_gates(cfg)
        )
        if ent:
            lines.append(f"  entangle {ent}")
    lines.append("readout: Z expectation on every qubit")
    return "\n".join(lines)


def max_shift_vs_fd_deviation(cfg: PqcConfig, rng: np.random.Generator,
                              h: float = 1e-5, shift_perturbation: float = 0.0) -> float:
    """Worst |shift-rule - finite-difference| entry over the full Jacobian
    (all theta entries and all inputs, all output components) at a random point."""
    from .selfcheck import fd_gradient

    theta = rng.uniform(-np.pi, np.pi, size=cfg.theta_shape())
    z = rng.uniform(-np.pi, np.pi, size=cfg.n_qubits)
    worst = 0.0
    for i in range(cfg.n_qubits):
        cot = np.zeros(cfg.n_qubits)
        cot[i] = 1.0
        shift_theta = grad_params(z, PqcParams(theta), cfg, cot, shift=SHIFT + shift_perturbation)
        fd_theta = fd_gradient(lambda t: float(forward(z, PqcParams(t), cfg).q[i]), theta, h=h)
        shift_z = grad_inputs(z, PqcParams(theta), cfg, cot, shift=SHIFT + shift_perturbation)
        fd_z = fd_gradient(lambda zz: float(forward(zz, PqcParams(theta), cfg).q[i]), z, h=h)
        worst = max(worst, float(np.max(np.abs(shift_theta - fd_theta))),
                    float(np.max(np.abs(shift_z - fd_z))))
    return worst
