from functools import reduce

import numpy as np
import pytest

from sigma_vqe.pauli import PauliString, PauliSum

SINGLE = {
    "I": np.eye(2, dtype=complex),
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
    "Y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "Z": np.array([[1, 0], [0, -1]], dtype=complex),
}


def kron_label(label: str) -> np.ndarray:
    """Dense oracle built by Kronecker products; qubit 0 is the least significant factor."""
    return reduce(np.kron, [SINGLE[c] for c in reversed(label)])


def dense_oracle(h: PauliSum) -> np.ndarray:
    dim = 1 << h.n_qubits
    out = h.identity_coefficient * np.eye(dim, dtype=complex)
    for p, c in h.terms.items():
        out = out + c * kron_label(p.label)
    return out


def random_sum(rng: np.random.Generator, n: int, n_terms: int = 6) -> PauliSum:
    labels = {"".join(rng.choice(list("IXYZ"), size=n)) for _ in range(n_terms)}
    coeffs = {lab: float(rng.normal()) for lab in labels if set(lab) != {"I"}}
    return PauliSum.from_labels(coeffs, identity_coefficient=float(rng.normal()))


def random_state(rng: np.random.Generator, n: int) -> np.ndarray:
    v = rng.normal(size=1 << n) + 1j * rng.normal(size=1 << n)
    return v / np.linalg.norm(v)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def string(label: str) -> PauliString:
    return PauliString.from_label(label)


_ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture
def acceptance(request):
    """Records one verdict line per criterion and echoes it to stdout."""
    lines = request.config.stash.setdefault(_ACCEPTANCE, [])

    def record(number: int, ok: bool, detail: str) -> bool:
        line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        lines.append(line)
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
