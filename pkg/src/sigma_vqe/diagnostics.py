"""Exact diagonalization, entanglement entropy, fidelity and level statistics."""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass

import numpy as np

from .circuit import StateVector
from .models import reduced_density_matrix
from .pauli import DENSE_LIMIT, PauliSum, to_dense

SCHMIDT_TOL = 1e-12


@dataclass
class SpectrumResult:
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    entropies: np.ndarray
    cut: int

    def __len__(self):
        return len(self.eigenvalues)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["index", "energy", "half_cut_entropy"])
            for i, (e, s) in enumerate(zip(self.eigenvalues, self.entropies)):
                writer.writerow([i, f"{e:.12g}", f"{s:.12g}"])


def half_cut(n_qubits: int) -> int:
    return n_qubits // 2


def _amplitudes(state) -> np.ndarray:
    return state.amplitudes if isinstance(state, StateVector) else np.asarray(state)


def entropy_of_amplitudes(psi: np.ndarray, n_qubits: int, cut: int) -> float:
    # qubits 0..cut-1 are the low bits, so A is the fast index of the reshape
    m = np.asarray(psi).reshape(1 << (n_qubits - cut), 1 << cut)
    s = np.linalg.svd(m, compute_uv=False) ** 2
    s = s[s > SCHMIDT_TOL]
    return float(-np.sum(s * np.log(s)))


def entanglement_entropy(state, cut: int | None = None, n_qubits: int | None = None) -> float:
    """Von Neumann entropy (natural log) of qubits ``0..cut-1``."""
    if n_qubits is None:
        n_qubits = state.n_qubits
    if cut is None:
        cut = half_cut(n_qubits)
    if not 1 <= cut <= n_qubits - 1:
        raise ValueError(f"cut must lie in [1, {n_qubits - 1}], got {cut}")
    return entropy_of_amplitudes(_amplitudes(state), n_qubits, cut)


def region_entropy(state, sites, n_qubits: int | None = None) -> float:
    """Entropy of an arbitrary set of qubits; used for the swapped-partition check."""
    if n_qubits is None:
        n_qubits = state.n_qubits
    rho = reduced_density_matrix(_amplitudes(state), sites, n_qubits)
    w = np.linalg.eigvalsh(rho)
    w = w[w > SCHMIDT_TOL]
    return float(-np.sum(w * np.log(w)))


def fidelity(a, b) -> float:
    pa, pb = _amplitudes(a), _amplitudes(b)
    if pa.shape != pb.shape:
        raise ValueError("states act on different numbers of qubits")
    return float(min(1.0, abs(np.vdot(pa, pb)) ** 2))


def eigendecompose(h: PauliSum, cut: int | None = None, limit: int = DENSE_LIMIT) -> SpectrumResult:
    n = h.n_qubits
    mat = to_dense(h, limit=limit)
    evals, evecs = np.linalg.eigh(mat)
    if cut is None:
        cut = half_cut(n)
    ent = np.array([entropy_of_amplitudes(evecs[:, k], n, cut) for k in range(len(evals))])
    return SpectrumResult(evals, evecs, ent, cut)


def gap_ratio(spectrum, window: float = 0.8) -> float:
    """Mean ``min(g_n, g_{n+1}) / max(g_n, g_{n+1})`` over the central ``window`` of levels."""
    evals = np.sort(np.asarray(getattr(spectrum, "eigenvalues", spectrum), dtype=float))
    if len(evals) < 3:
        raise ValueError("gap ratio needs at least 3 eigenvalues")
    trim = int(round(len(evals) * (1 - window) / 2))
    core = evals[trim: len(evals) - trim] if len(evals) - 2 * trim >= 3 else evals
    gaps = np.diff(core)
    g0, g1 = gaps[:-1], gaps[1:]
    ok = (g0 > 1e-12) & (g1 > 1e-12)
    if not np.all(ok):
        warnings.warn(f"skipped {np.sum(~ok)} ratios with degenerate gaps", RuntimeWarning)
    if not np.any(ok):
        raise ValueError("spectrum is fully degenerate")
    r = np.minimum(g0[ok], g1[ok]) / np.maximum(g0[ok], g1[ok])
    return float(np.mean(r))


def find_scar(spectrum: SpectrumResult, energy: float = 0.0, window: float = 1e-6,
              reference: StateVector | None = None) -> int:
    """Index of the scar candidate: best overlap with ``reference`` if given,
    otherwise the minimum-entropy eigenstate within ``window`` of ``energy``
    (falling back to the nearest level)."""
    if reference is not None:
        overlaps = np.abs(spectrum.eigenvectors.conj().T @ reference.amplitudes) ** 2
        return int(np.argmax(overlaps))
    near = np.flatnonzero(np.abs(spectrum.eigenvalues - energy) < window)
    if len(near) == 0:
        return int(np.argmin(np.abs(spectrum.eigenvalues - energy)))
    return int(near[np.argmin(spectrum.entropies[near])])


def mid_spectrum_min_entropy(spectrum: SpectrumResult, fraction: float = 0.5) -> float:
    """Smallest eigenstate entropy among the central ``fraction`` of levels."""
    n = len(spectrum.eigenvalues)
    trim = int(round(n * (1 - fraction) / 2))
    return float(np.min(spectrum.entropies[trim: n - trim]))
