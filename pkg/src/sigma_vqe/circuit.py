"""Statevector and density-matrix simulation of the ring ansatz.

Amplitude index bit ``j`` is qubit ``j``. Batched helpers take parameter
arrays of shape ``(B, P)`` and return states of shape ``(B, 2**n)``; they are
what the optimizers call, the single-state wrappers exist for clarity.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .ansatz import AnsatzSpec
from .pauli import DENSE_LIMIT, PauliSum, string_action

NOISY_LIMIT = 6
NORM_TOL = 1e-10

_SQ2 = 1.0 / np.sqrt(2.0)
HADAMARD = np.array([[_SQ2, _SQ2], [_SQ2, -_SQ2]], dtype=complex)
RX_HALF_PI = np.array([[_SQ2, -1j * _SQ2], [-1j * _SQ2, _SQ2]], dtype=complex)
BASIS_ROTATIONS = {"X": HADAMARD, "Y": RX_HALF_PI, "Z": np.eye(2, dtype=complex)}


@dataclass(frozen=True)
class StateVector:
    n_qubits: int
    amplitudes: np.ndarray

    def __post_init__(self):
        amps = np.asarray(self.amplitudes, dtype=complex)
        if amps.shape != (1 << self.n_qubits,):
            raise ValueError(f"expected {1 << self.n_qubits} amplitudes, got shape {amps.shape}")
        norm = np.linalg.norm(amps)
        if abs(norm - 1.0) > NORM_TOL:
            raise ValueError(f"state norm {norm:.12f} differs from 1")
        object.__setattr__(self, "amplitudes", amps)

    @classmethod
    def zero(cls, n_qubits: int) -> "StateVector":
        amps = np.zeros(1 << n_qubits, dtype=complex)
        amps[0] = 1.0
        return cls(n_qubits, amps)

    @classmethod
    def product(cls, site_states: Sequence[np.ndarray]) -> "StateVector":
        """Tensor product with ``site_states[j]`` on qubit ``j``."""
        amps = np.ones(1, dtype=complex)
        for phi in site_states:
            amps = np.kron(np.asarray(phi, dtype=complex), amps)
        return cls(len(site_states), amps)


@dataclass(frozen=True)
class DensityMatrix:
    n_qubits: int
    matrix: np.ndarray

    def validate(self, tol: float = 1e-10) -> None:
        m = self.matrix
        if np.max(np.abs(m - m.conj().T)) > tol:
            raise ValueError("density matrix is not Hermitian")
        if abs(np.trace(m).real - 1.0) > tol:
            raise ValueError("density matrix trace differs from 1")
        if np.linalg.eigvalsh(m).min() < -1e-8:
            raise ValueError("density matrix has a negative eigenvalue")

    @property
    def purity(self) -> float:
        return float(np.real(np.vdot(self.matrix, self.matrix)))


@dataclass(frozen=True)
class NoiseModel:
    p1: float = 0.0
    p2: float = 0.0
    readout_flip: float = 0.0

    def __post_init__(self):
        if not (0.0 <= self.p1 <= 1.0 and 0.0 <= self.p2 <= 1.0):
            raise ValueError("depolarizing probabilities must lie in [0, 1]")
        if not 0.0 <= self.readout_flip <= 0.5:
            raise ValueError("readout_flip must lie in [0, 1/2]")


def measurement_basis(axes) -> tuple[str, ...]:
    """Normalize a basis label (``"XZY"`` or a sequence) to a tuple of axes."""
    out = tuple(str(a).upper() for a in axes)
    if any(a not in BASIS_ROTATIONS for a in out):
        raise ValueError(f"basis axes must be X, Y or Z, got {axes!r}")
    return out


# -- gates ---------------------------------------------------------------

def ry(angle):
    c, s = np.cos(angle / 2), np.sin(angle / 2)
    return np.array([[c, -s], [s, c]], dtype=complex)


def rz(angle):
    return np.diag([np.exp(-0.5j * angle), np.exp(0.5j * angle)])


def rx(angle):
    c, s = np.cos(angle / 2), np.sin(angle / 2)
    return np.array([[c, -1j * s], [-1j * s, c]], dtype=complex)


def rotation_block(ry_angle, rz_angle) -> np.ndarray:
    """``Rz(rz) @ Ry(ry)`` broadcast over leading axes, shape ``(..., 2, 2)``."""
    ry_angle = np.asarray(ry_angle, dtype=float)
    rz_angle = np.asarray(rz_angle, dtype=float)
    c, s = np.cos(ry_angle / 2), np.sin(ry_angle / 2)
    em, ep = np.exp(-0.5j * rz_angle), np.exp(0.5j * rz_angle)
    u = np.empty(np.broadcast(ry_angle, rz_angle).shape + (2, 2), dtype=complex)
    u[..., 0, 0] = em * c
    u[..., 0, 1] = -em * s
    u[..., 1, 0] = ep * s
    u[..., 1, 1] = ep * c
    return u


@lru_cache(maxsize=64)
def cz_diagonal(n_qubits: int, pairs: tuple[tuple[int, int], ...]) -> np.ndarray:
    idx = np.arange(1 << n_qubits)
    diag = np.ones(1 << n_qubits)
    for a, b in pairs:
        diag *= 1 - 2 * (((idx >> a) & (idx >> b)) & 1)
    return diag


def apply_1q(psi: np.ndarray, u: np.ndarray, qubit: int, n_qubits: int) -> np.ndarray:
    """Apply ``u`` (``(2, 2)`` or per-batch ``(B, 2, 2)``) to ``qubit`` of ``psi`` ``(B, 2**n)``."""
    b = psi.shape[0]
    view = psi.reshape(b, 1 << (n_qubits - 1 - qubit), 2, 1 << qubit)
    if u.ndim == 2:
        out = np.einsum("ij,bajc->baic", u, view)
    else:
        out = np.einsum("bij,bajc->baic", u, view)
    return out.reshape(b, -1)


# -- pure path -------------------------------------------------------------

def _check_params(ansatz: AnsatzSpec, thetas: np.ndarray) -> np.ndarray:
    thetas = np.asarray(thetas, dtype=float)
    if thetas.shape[-1] != ansatz.parameter_count:
        raise ValueError(f"expected {ansatz.parameter_count} parameters, got {thetas.shape[-1]}")
    return thetas


def simulate(ansatz: AnsatzSpec, thetas) -> np.ndarray:
    """Final statevectors for a batch of parameter vectors, shape ``(B, 2**n)``."""
    thetas = np.atleast_2d(_check_params(ansatz, thetas))
    n = ansatz.n_qubits
    psi = np.zeros((thetas.shape[0], 1 << n), dtype=complex)
    psi[:, 0] = 1.0
    cz = cz_diagonal(n, ansatz.entangler)
    for layer in range(ansatz.n_rotation_layers):
        ry_a, rz_a = ansatz.layer_angles(thetas, layer)
        u = rotation_block(ry_a, rz_a)
        for q in range(n):
            psi = apply_1q(psi, u[:, q], q, n)
        if layer < ansatz.depth:
            psi *= cz
    return psi


def apply_circuit(ansatz: AnsatzSpec, theta) -> StateVector:
    theta = _check_params(ansatz, theta)
    if theta.ndim != 1:
        raise ValueError("apply_circuit takes a single parameter vector")
    return StateVector(ansatz.n_qubits, simulate(ansatz, theta)[0])


class Observable:
    """A PauliSum compiled to a sparse matrix for repeated expectation values."""

    def __init__(self, h: PauliSum, limit: int = DENSE_LIMIT):
        if h.n_qubits > limit:
            raise ValueError(f"{h.n_qubits} qubits exceeds the dense limit of {limit}")
        self.pauli = h
        self.n_qubits = h.n_qubits
        dim = 1 << h.n_qubits
        cols = np.arange(dim)
        rows_acc, cols_acc, data_acc = [cols], [cols], [np.full(dim, h.identity_coefficient, dtype=complex)]
        for p, c in h.terms.items():
            rows, phase = string_action(p.x, p.z, h.n_qubits)
            rows_acc.append(rows)
            cols_acc.append(cols)
            data_acc.append(c * phase)
        self.matrix = sp.coo_matrix(
            (np.concatenate(data_acc), (np.concatenate(rows_acc), np.concatenate(cols_acc))),
            shape=(dim, dim)).tocsr()

    def expectations(self, psi: np.ndarray) -> np.ndarray:
        """Real expectation values for states stacked as rows of ``psi``."""
        psi = np.atleast_2d(psi)
        hpsi = (self.matrix @ psi.T).T
        return np.real(np.sum(psi.conj() * hpsi, axis=1))

    def expectation_rho(self, rho: np.ndarray) -> float:
        return float(np.real((self.matrix.multiply(rho.T)).sum()))


def exact_expectation(state: StateVector, h: PauliSum) -> float:
    if state.n_qubits != h.n_qubits:
        raise ValueError(f"state has {state.n_qubits} qubits, operator has {h.n_qubits}")
    psi = state.amplitudes
    total = h.identity_coefficient * float(np.vdot(psi, psi).real)
    for p, c in h.terms.items():
        rows, phase = string_action(p.x, p.z, h.n_qubits)
        # <psi|P|psi> = sum_b conj(psi[b ^ x]) phase[b] psi[b]
        total += c * float(np.real(np.sum(psi[rows].conj() * phase * psi)))
    return total


def rotate_to_basis(psi: np.ndarray, basis: Sequence[str], n_qubits: int) -> np.ndarray:
    for q, axis in enumerate(basis):
        if axis != "Z":
            psi = apply_1q(psi, BASIS_ROTATIONS[axis], q, n_qubits)
    return psi


def rotated_probabilities(psi: np.ndarray, basis: Sequence[str], n_qubits: int) -> np.ndarray:
    """Outcome distributions ``|<q|U_B|psi>|^2`` for a batch of states."""
    basis = measurement_basis(basis)
    if len(basis) != n_qubits:
        raise ValueError(f"basis has {len(basis)} axes for {n_qubits} qubits")
    out = np.abs(rotate_to_basis(np.atleast_2d(psi), basis, n_qubits)) ** 2
    return out


def rotated_distribution(state: StateVector, basis) -> np.ndarray:
    return rotated_probabilities(state.amplitudes[None, :], basis, state.n_qubits)[0]


# -- noisy path ------------------------------------------------------------

def _rho_view(rho, qubit, n):
    hi, lo = 1 << (n - 1 - qubit), 1 << qubit
    return rho.reshape(hi, 2, lo, hi, 2, lo)


def rho_apply_1q(rho: np.ndarray, u: np.ndarray, qubit: int, n: int) -> np.ndarray:
    v = _rho_view(rho, qubit, n)
    v = np.einsum("ij,ajcdke->aicdke", u, v)
    v = np.einsum("aicdke,lk->aicdle", v, u.conj())
    return v.reshape(rho.shape)


def _full_depolarize(rho: np.ndarray, qubit: int, n: int) -> np.ndarray:
    """``I/2 (x) Tr_qubit(rho)``."""
    v = _rho_view(rho, qubit, n)
    red = np.einsum("ajcdje->acde", v)
    out = np.zeros_like(v)
    out[:, 0, :, :, 0, :] = red / 2
    out[:, 1, :, :, 1, :] = red / 2
    return out.reshape(rho.shape)


def depolarize_1q(rho, qubit, n, p):
    if p == 0.0:
        return rho
    return (1 - p) * rho + p * _full_depolarize(rho, qubit, n)


def depolarize_2q(rho, a, b, n, p):
    if p == 0.0:
        return rho
    mixed = _full_depolarize(_full_depolarize(rho, a, n), b, n)
    return (1 - p) * rho + p * mixed


def apply_circuit_noisy(ansatz: AnsatzSpec, theta, noise: NoiseModel,
                        limit: int = NOISY_LIMIT) -> DensityMatrix:
    """Density-matrix run with depolarizing noise after every rotation pair and CZ."""
    n = ansatz.n_qubits
    if n > limit:
        raise ValueError(f"{n} qubits exceeds the density-matrix limit of {limit}")
    theta = _check_params(ansatz, theta)
    dim = 1 << n
    rho = np.zeros((dim, dim), dtype=complex)
    rho[0, 0] = 1.0
    for layer in range(ansatz.n_rotation_layers):
        ry_a, rz_a = ansatz.layer_angles(theta, layer)
        for q in range(n):
            rho = rho_apply_1q(rho, rotation_block(ry_a[q], rz_a[q]), q, n)
            rho = depolarize_1q(rho, q, n, noise.p1)
        if layer < ansatz.depth:
            for a, b in ansatz.entangler:
                d = cz_diagonal(n, ((a, b),))
                rho = rho * d[:, None] * d[None, :]
                rho = depolarize_2q(rho, a, b, n, noise.p2)
    return DensityMatrix(n, rho)


def readout_channel(probs: np.ndarray, n_qubits: int, flip: float) -> np.ndarray:
    """Independent per-qubit bit flips applied to an outcome distribution."""
    if flip == 0.0:
        return probs
    t = np.array([[1 - flip, flip], [flip, 1 - flip]])
    p = probs.reshape((2,) * n_qubits)
    for axis in range(n_qubits):
        p = np.moveaxis(np.tensordot(t, p, axes=([1], [axis])), 0, axis)
    return p.reshape(-1)


def noisy_rotated_distribution(rho: DensityMatrix, basis, readout_flip: float = 0.0) -> np.ndarray:
    n = rho.n_qubits
    basis = measurement_basis(basis)
    if len(basis) != n:
        raise ValueError(f"basis has {len(basis)} axes for {n} qubits")
    m = rho.matrix
    for q, axis in enumerate(basis):
        if axis != "Z":
            m = rho_apply_1q(m, BASIS_ROTATIONS[axis], q, n)
    probs = np.clip(np.real(np.diag(m)), 0.0, None)
    probs = readout_channel(probs, n, readout_flip)
    return probs / probs.sum()


def state_fidelity_to_rho(psi: np.ndarray, rho: np.ndarray) -> float:
    return float(np.real(np.vdot(psi, rho @ psi)))


__all__ = [
    "StateVector", "DensityMatrix", "NoiseModel", "Observable", "measurement_basis",
    "simulate", "apply_circuit", "exact_expectation", "rotated_distribution",
    "rotated_probabilities", "apply_circuit_noisy", "noisy_rotated_distribution",
    "readout_channel", "ry", "rz", "rx", "rotation_block", "cz_diagonal",
]
