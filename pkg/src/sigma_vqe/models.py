"""Spin-chain Hamiltonians with embedded zero-energy scar eigenstates.

Two constructions are provided, each with a matched control that has no
engineered scar:

* projector embedding of a random product state into an open XXZ chain with
  a transverse field (``build_sm_model`` / ``sm_control``);
* a parent Hamiltonian on a ring whose D-site blocks act only on the
  orthogonal complement of a random translation-invariant MPS's local support
  (``build_ph_model`` / ``ph_control``).

Local matrices use the little-endian convention of :mod:`sigma_vqe.pauli`:
bit ``l`` of a block index is ``sites[l]``.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from functools import cached_property

import numpy as np

from .circuit import StateVector
from .pauli import PauliSum, decompose_local, square_sum

log = logging.getLogger(__name__)

RANK_TOL = 1e-10

PAULI_I = np.eye(2, dtype=complex)
PAULI_X = np.array([[0, 1], [1, 0]], dtype=complex)
PAULI_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
PAULI_Z = np.array([[1, 0], [0, -1]], dtype=complex)


class ModelConstraintError(ValueError):
    pass


@dataclass(frozen=True)
class SMModelSpec:
    n_qubits: int = 9
    J: float = 1.0
    delta: float = 0.7
    b: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.n_qubits < 2:
            raise ValueError("the chain needs at least 2 sites")


@dataclass(frozen=True)
class PHModelSpec:
    n_qubits: int = 8
    D: int = 4
    chi: int = 1
    seed: int = 0
    pert_strength: float = 0.1

    def __post_init__(self):
        if self.chi < 1 or self.D < 1:
            raise ValueError("chi and D must be positive")
        if self.D > self.n_qubits:
            raise ValueError("block size D cannot exceed the ring length")
        if 2 ** self.D <= self.chi ** 2:
            raise ModelConstraintError(
                f"complement space is empty: need 2^D > chi^2, got 2^{self.D} <= {self.chi}^2")
        if self.pert_strength < 0:
            raise ValueError("pert_strength must be >= 0")


@dataclass
class ScarModel:
    hamiltonian: PauliSum
    scar_state: StateVector | None
    scar_energy: float = 0.0
    kind: str = ""
    spec: object = None
    extras: dict = field(default_factory=dict)

    @property
    def n_qubits(self) -> int:
        return self.hamiltonian.n_qubits

    @cached_property
    def hamiltonian_squared(self) -> PauliSum:
        return square_sum(self.hamiltonian)

    def to_dict(self) -> dict:
        out = {
            "kind": self.kind,
            "spec": asdict(self.spec) if self.spec is not None else None,
            "hamiltonian": self.hamiltonian.to_dict(),
            "scar_energy": self.scar_energy,
            "scar_state": None,
        }
        if self.scar_state is not None:
            amps = self.scar_state.amplitudes
            out["scar_state"] = [[float(a.real), float(a.imag)] for a in amps]
        return out


def xxz_term(J: float = 1.0, delta: float = 0.7, b: float = 1.0) -> np.ndarray:
    """Two-site ``J(XX + YY) + delta ZZ + b(XI + IX)``."""
    return (J * (np.kron(PAULI_X, PAULI_X) + np.kron(PAULI_Y, PAULI_Y))
            + delta * np.kron(PAULI_Z, PAULI_Z)
            + b * (np.kron(PAULI_X, PAULI_I) + np.kron(PAULI_I, PAULI_X)))


def haar_qubit_states(n: int, rng: np.random.Generator) -> np.ndarray:
    """``n`` Haar-random single-qubit states as rows of an ``(n, 2)`` array."""
    g = rng.standard_normal((n, 2, 2))
    phi = g[..., 0] + 1j * g[..., 1]
    return phi / np.linalg.norm(phi, axis=1, keepdims=True)


def sm_bond_term(h: np.ndarray, phi_i: np.ndarray, phi_j: np.ndarray) -> np.ndarray:
    """``P h P`` with ``P = 1 - |phi_i phi_j><phi_i phi_j|`` (site i is the low bit)."""
    v = np.kron(phi_j, phi_i)
    proj = np.eye(4, dtype=complex) - np.outer(v, v.conj())
    return proj @ h @ proj


def build_sm_model(spec: SMModelSpec) -> ScarModel:
    rng = np.random.default_rng(spec.seed)
    phis = haar_qubit_states(spec.n_qubits, rng)
    h = xxz_term(spec.J, spec.delta, spec.b)
    total = PauliSum(spec.n_qubits)
    for i in range(spec.n_qubits - 1):
        term = sm_bond_term(h, phis[i], phis[i + 1])
        total = total + decompose_local(term, (i, i + 1), spec.n_qubits)
    scar = StateVector.product(list(phis))
    return ScarModel(total, scar, 0.0, "sm", spec, {"site_states": phis})


def build_sm_control(spec: SMModelSpec) -> ScarModel:
    """Unprojected XXZ bonds plus uniform random Z fields in [-1, 1]."""
    rng = np.random.default_rng([spec.seed, 7])
    fields = rng.uniform(-1.0, 1.0, size=spec.n_qubits)
    h = xxz_term(spec.J, spec.delta, spec.b)
    total = PauliSum(spec.n_qubits)
    for i in range(spec.n_qubits - 1):
        total = total + decompose_local(h, (i, i + 1), spec.n_qubits)
    for i, f in enumerate(fields):
        total = total + decompose_local(f * PAULI_Z, (i,), spec.n_qubits)
    return ScarModel(total, None, 0.0, "sm_control", spec, {"fields": fields})


# -- MPS parent Hamiltonian ----------------------------------------------------

def mps_amplitudes(a0: np.ndarray, a1: np.ndarray, n_qubits: int) -> np.ndarray:
    """Unnormalized ``Tr[A^{s_0} ... A^{s_{n-1}}]`` for every index (bit j = s_j)."""
    prods = np.stack([a0, a1])
    for j in range(1, n_qubits):
        prods = np.concatenate([prods @ a0, prods @ a1])
    return np.trace(prods, axis1=1, axis2=2)


def build_mps_state(n_qubits: int, chi: int, seed: int = 0, max_redraws: int = 100):
    """Random translation-invariant ring MPS; returns ``(state, a0, a1)``."""
    if chi < 1:
        raise ValueError("chi must be >= 1")
    for attempt in range(max_redraws):
        rng = np.random.default_rng(seed + attempt)
        g = rng.standard_normal((2, chi, chi, 2))
        tensors = g[..., 0] + 1j * g[..., 1]
        # rescale so the trace products stay O(1)
        tensors /= np.sqrt(2 * chi)
        amps = mps_amplitudes(tensors[0], tensors[1], n_qubits)
        norm = np.linalg.norm(amps)
        if norm >= 1e-12:
            return StateVector(n_qubits, amps / norm), tensors[0], tensors[1]
        log.warning("degenerate MPS draw (norm %.3e) for seed %d, redrawing", norm, seed + attempt)
    raise RuntimeError(f"no non-degenerate MPS after {max_redraws} draws")


def reduced_density_matrix(psi: np.ndarray, sites, n_qubits: int) -> np.ndarray:
    """Reduced state on ``sites`` with bit ``l`` of the local index on ``sites[l]``."""
    sites = [int(s) for s in sites]
    tensor = np.asarray(psi).reshape((2,) * n_qubits)
    keep = [n_qubits - 1 - s for s in reversed(sites)]
    rest = [a for a in range(n_qubits) if a not in keep]
    m = np.transpose(tensor, keep + rest).reshape(1 << len(sites), -1)
    return m @ m.conj().T


def block_sites(block_start: int, D: int, n_qubits: int) -> list[int]:
    return [(block_start + l) % n_qubits for l in range(D)]


def block_complement_basis(mps_state: StateVector, block_start: int, D: int) -> np.ndarray:
    """Orthonormal columns spanning the complement of the block's reduced support."""
    n = mps_state.n_qubits
    rho = reduced_density_matrix(mps_state.amplitudes, block_sites(block_start, D, n), n)
    evals, evecs = np.linalg.eigh(rho)
    comp = evecs[:, evals <= RANK_TOL]
    if comp.shape[1] == 0:
        raise ModelConstraintError(
            f"block reduced state has full rank {1 << D}: complement is empty (need 2^D > chi^2)")
    return comp


def _perturbation(m: int, strength: float, rng: np.random.Generator) -> np.ndarray:
    g = rng.standard_normal((m, m))
    r = g + g.T
    norm = np.linalg.norm(r, 2) if m else 0.0
    if strength == 0.0 or norm == 0.0:
        return np.zeros((m, m))
    return r * (strength / norm)


def _block_sum(blocks, n_qubits, D) -> PauliSum:
    total = PauliSum(n_qubits)
    for i, local in enumerate(blocks):
        total = total + decompose_local(local, block_sites(i, D, n_qubits), n_qubits)
    return total


def build_ph_model(spec: PHModelSpec, alternating: bool = True) -> ScarModel:
    """Parent Hamiltonian ``sum_i h_i`` with ``h_i`` living on the block complement.

    ``alternating=False`` uses all-positive coefficients (the MPS becomes the
    ground state); it exists for testing.
    """
    n, D = spec.n_qubits, spec.D
    state, a0, a1 = build_mps_state(n, spec.chi, spec.seed)
    rng = np.random.default_rng([spec.seed, 11])
    blocks = []
    for i in range(n):
        basis = block_complement_basis(state, i, D)
        m = basis.shape[1]
        coeffs = np.diag((-1.0) ** np.arange(m)) if alternating else np.eye(m)
        local = basis @ (coeffs + _perturbation(m, spec.pert_strength, rng)) @ basis.conj().T
        blocks.append(0.5 * (local + local.conj().T))
    total = _block_sum(blocks, n, D)
    return ScarModel(total, state, 0.0, "ph", spec, {"tensors": (a0, a1)})


def build_ph_control(spec: PHModelSpec) -> ScarModel:
    """Same block structure over Haar-random subspaces with random-sign diagonals."""
    n, D = spec.n_qubits, spec.D
    dim = 1 << D
    m = dim - spec.chi ** 2
    rng = np.random.default_rng([spec.seed, 13])
    blocks = []
    for _ in range(n):
        g = rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))
        q, r = np.linalg.qr(g)
        q = q * (np.diag(r) / np.abs(np.diag(r)))
        basis = q[:, :m]
        signs = rng.choice([-1.0, 1.0], size=m)
        local = basis @ (np.diag(signs) + _perturbation(m, spec.pert_strength, rng)) @ basis.conj().T
        blocks.append(0.5 * (local + local.conj().T))
    total = _block_sum(blocks, n, D)
    return ScarModel(total, None, 0.0, "ph_control", spec)


def build_control_model(kind: str, spec) -> ScarModel:
    if kind == "sm_control":
        return build_sm_control(spec)
    if kind == "ph_control":
        return build_ph_control(spec)
    raise ValueError(f"unknown control kind {kind!r}")


def build_model(kind: str, spec) -> ScarModel:
    builders = {
        "sm": build_sm_model,
        "ph": build_ph_model,
        "sm_control": build_sm_control,
        "ph_control": build_ph_control,
    }
    try:
        return builders[kind](spec)
    except KeyError:
        raise ValueError(f"unknown model kind {kind!r}") from None
