"""Pauli strings in symplectic bitmask form and real-weighted Pauli sums.

Qubit ``j`` of an N-qubit string is bit ``j`` of the ``x`` and ``z`` masks, and
bit ``j`` of a computational-basis index (qubit 0 is the least significant
bit). String labels are written with character 0 acting on qubit 0.

A string with masks ``(x, z)`` denotes ``i^{|x&z|} X^x Z^z``, so a qubit with
both bits set carries ``Y = iXZ``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Mapping

import numpy as np

DENSE_LIMIT = 12
PRUNE_TOL = 1e-12
HERMITIAN_TOL = 1e-10

_PHASES = (1.0, 1.0j, -1.0, -1.0j)
_LABEL_BITS = {"I": (0, 0), "X": (1, 0), "Y": (1, 1), "Z": (0, 1)}


class PauliSizeError(ValueError):
    """Operands act on different numbers of qubits."""


class DenseLimitError(ValueError):
    """A dense representation was requested above the configured qubit limit."""


def popcount(a):
    """Bit count of an int or integer array."""
    if isinstance(a, (int, np.integer)):
        return int(a).bit_count()
    return np.bitwise_count(np.asarray(a, dtype=np.uint64)).astype(np.int64)


@dataclass(frozen=True, order=True)
class PauliString:
    n_qubits: int
    x: int = 0
    z: int = 0

    def __post_init__(self):
        if self.n_qubits < 1:
            raise ValueError("n_qubits must be positive")
        full = (1 << self.n_qubits) - 1
        if self.x & ~full or self.z & ~full or self.x < 0 or self.z < 0:
            raise ValueError(f"masks do not fit in {self.n_qubits} qubits")

    @classmethod
    def from_label(cls, label: str) -> "PauliString":
        x = z = 0
        for j, ch in enumerate(label.upper()):
            try:
                xb, zb = _LABEL_BITS[ch]
            except KeyError:
                raise ValueError(f"invalid Pauli character {ch!r}") from None
            x |= xb << j
            z |= zb << j
        return cls(len(label), x, z)

    @property
    def label(self) -> str:
        out = []
        for j in range(self.n_qubits):
            xb, zb = (self.x >> j) & 1, (self.z >> j) & 1
            out.append("IZXY"[xb * 2 + zb])
        return "".join(out)

    @property
    def support(self) -> int:
        return self.x | self.z

    @property
    def weight(self) -> int:
        return popcount(self.support)

    def is_identity(self) -> bool:
        return self.x == 0 and self.z == 0

    def axis(self, qubit: int) -> str:
        """Single-qubit factor on ``qubit`` as one of ``"IXYZ"``."""
        return self.label[qubit]

    def __str__(self):
        return self.label


def pauli_multiply(a: PauliString, b: PauliString) -> tuple[complex, PauliString]:
    """Product ``a·b`` as ``(phase, string)`` with phase in {1, -1, 1j, -1j}.

    >>> pauli_multiply(PauliString.from_label("X"), PauliString.from_label("Z"))
    (-1j, PauliString(n_qubits=1, x=1, z=1))
    """
    if a.n_qubits != b.n_qubits:
        raise PauliSizeError(f"cannot multiply {a.n_qubits}-qubit and {b.n_qubits}-qubit strings")
    x, z = a.x ^ b.x, a.z ^ b.z
    k = popcount(a.x & a.z) + popcount(b.x & b.z) + 2 * popcount(a.z & b.x) - popcount(x & z)
    return _PHASES[k % 4], PauliString(a.n_qubits, x, z)


def eval_string(p: PauliString, q) -> int:
    """Eigenvalue ``prod_{j in supp(p)} (-1)^{q_j}`` of a measured bitstring.

    ``q`` is an integer (bit j = qubit j) or a 0/1 string/sequence indexed by
    qubit. The support of ``p`` is read as Z-like regardless of its axes.
    """
    if not isinstance(q, (int, np.integer)):
        q = sum(int(bit) << j for j, bit in enumerate(q))
    return -1 if popcount(p.support & int(q)) & 1 else 1


def parity_table(support: int, n_qubits: int) -> np.ndarray:
    """``eval_string`` over every outcome index, as an int8 array of +-1."""
    idx = np.arange(1 << n_qubits, dtype=np.uint64)
    odd = np.bitwise_count(idx & np.uint64(support)) & 1
    return (1 - 2 * odd.astype(np.int8)).astype(np.int8)


class PauliSum:
    """Hermitian operator ``c_I * I + sum_i c_i P_i`` with real coefficients.

    The identity coefficient is kept apart from ``terms``; stored terms never
    include the identity string or coefficients below ``PRUNE_TOL``.
    """

    def __init__(self, n_qubits: int, identity_coefficient: float = 0.0,
                 terms: Mapping[PauliString, float] | None = None):
        if n_qubits < 1:
            raise ValueError("n_qubits must be positive")
        self.n_qubits = int(n_qubits)
        ident = float(identity_coefficient)
        clean: dict[PauliString, float] = {}
        for p, c in (terms or {}).items():
            if p.n_qubits != n_qubits:
                raise PauliSizeError(f"term {p} does not act on {n_qubits} qubits")
            c = float(c)
            if p.is_identity():
                ident += c
            elif abs(c) > PRUNE_TOL:
                clean[p] = clean.get(p, 0.0) + c
        self.identity_coefficient = ident
        self.terms = {p: clean[p] for p in sorted(clean) if abs(clean[p]) > PRUNE_TOL}

    @classmethod
    def from_labels(cls, labels: Mapping[str, float], identity_coefficient: float = 0.0) -> "PauliSum":
        strings = {PauliString.from_label(k): v for k, v in labels.items()}
        if not strings:
            raise ValueError("from_labels needs at least one label to fix n_qubits")
        n = next(iter(strings)).n_qubits
        return cls(n, identity_coefficient, strings)

    @classmethod
    def _from_arrays(cls, n, xs, zs, cs) -> "PauliSum":
        ident = 0.0
        terms = {}
        for x, z, c in zip(xs.tolist(), zs.tolist(), cs.tolist()):
            if x == 0 and z == 0:
                ident += c
            else:
                terms[PauliString(n, x, z)] = c
        return cls(n, ident, terms)

    @cached_property
    def arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Non-identity terms as ``(x, z, coeff)`` arrays in canonical order."""
        xs = np.array([p.x for p in self.terms], dtype=np.int64)
        zs = np.array([p.z for p in self.terms], dtype=np.int64)
        cs = np.array(list(self.terms.values()), dtype=float)
        return xs, zs, cs

    def __len__(self):
        return len(self.terms)

    def __iter__(self):
        return iter(self.terms.items())

    def coefficient(self, p: PauliString) -> float:
        if p.is_identity():
            return self.identity_coefficient
        return self.terms.get(p, 0.0)

    def __add__(self, other: "PauliSum") -> "PauliSum":
        if not isinstance(other, PauliSum):
            return NotImplemented
        if other.n_qubits != self.n_qubits:
            raise PauliSizeError("cannot add sums on different qubit counts")
        merged = dict(self.terms)
        for p, c in other.terms.items():
            merged[p] = merged.get(p, 0.0) + c
        return PauliSum(self.n_qubits, self.identity_coefficient + other.identity_coefficient, merged)

    def __mul__(self, scalar: float) -> "PauliSum":
        scalar = float(scalar)
        return PauliSum(self.n_qubits, scalar * self.identity_coefficient,
                        {p: scalar * c for p, c in self.terms.items()})

    __rmul__ = __mul__

    def __sub__(self, other: "PauliSum") -> "PauliSum":
        return self + (-1.0) * other

    def __eq__(self, other):
        if not isinstance(other, PauliSum):
            return NotImplemented
        return (self.n_qubits == other.n_qubits
                and self.identity_coefficient == other.identity_coefficient
                and self.terms == other.terms)

    def allclose(self, other: "PauliSum", atol: float = 1e-10) -> bool:
        if self.n_qubits != other.n_qubits:
            return False
        if abs(self.identity_coefficient - other.identity_coefficient) > atol:
            return False
        keys = set(self.terms) | set(other.terms)
        return all(abs(self.coefficient(p) - other.coefficient(p)) <= atol for p in keys)

    def __repr__(self):
        head = ", ".join(f"{p.label}: {c:.6g}" for p, c in list(self.terms.items())[:6])
        more = ", ..." if len(self.terms) > 6 else ""
        return f"PauliSum(n={self.n_qubits}, id={self.identity_coefficient:.6g}, {{{head}{more}}})"

    def to_dict(self) -> dict:
        return {
            "n": self.n_qubits,
            "id_coeff": self.identity_coefficient,
            "terms": [{"label": p.label, "coeff": c} for p, c in self.terms.items()],
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "PauliSum":
        n = int(data["n"])
        terms: dict[PauliString, float] = {}
        for entry in data["terms"]:
            p = PauliString.from_label(entry["label"])
            if p.n_qubits != n:
                raise PauliSizeError(f"label {entry['label']!r} has wrong length for n={n}")
            terms[p] = terms.get(p, 0.0) + float(entry["coeff"])
        return cls(n, float(data.get("id_coeff", 0.0)), terms)

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "PauliSum":
        return cls.from_dict(json.loads(text))


def _pair_products(n, xa, za, ca, xb, zb, cb, chunk=1 << 22):
    """Accumulate all products of two term lists into (keys, real, imag)."""
    ga = popcount(xa & za)
    gb = popcount(xb & zb)
    keys_acc, re_acc, im_acc = [], [], []
    rows = max(1, chunk // max(1, len(xb)))
    for start in range(0, len(xa), rows):
        sl = slice(start, start + rows)
        x = xa[sl, None] ^ xb[None, :]
        z = za[sl, None] ^ zb[None, :]
        k = (ga[sl, None] + gb[None, :] + 2 * popcount(za[sl, None] & xb[None, :]) - popcount(x & z)) % 4
        val = ca[sl, None] * cb[None, :]
        key = (x << n) | z
        re = np.where(k == 0, val, np.where(k == 2, -val, 0.0))
        im = np.where(k == 1, val, np.where(k == 3, -val, 0.0))
        keys_acc.append(key.ravel())
        re_acc.append(re.ravel())
        im_acc.append(im.ravel())
    keys = np.concatenate(keys_acc)
    uniq, inv = np.unique(keys, return_inverse=True)
    re = np.bincount(inv, weights=np.concatenate(re_acc), minlength=len(uniq))
    im = np.bincount(inv, weights=np.concatenate(im_acc), minlength=len(uniq))
    return uniq, re, im


def square_sum(h: PauliSum) -> PauliSum:
    """Pauli expansion of ``h @ h``.

    Cross terms of anticommuting strings produce imaginary parts that must
    cancel pairwise for Hermitian input; any surviving residue raises.
    """
    n = h.n_qubits
    xs, zs, cs = h.arrays
    xs = np.concatenate([[0], xs]).astype(np.int64)
    zs = np.concatenate([[0], zs]).astype(np.int64)
    cs = np.concatenate([[h.identity_coefficient], cs])
    keys, re, im = _pair_products(n, xs, zs, cs, xs, zs, cs)
    scale = max(1.0, float(np.sum(np.abs(cs))) ** 2)
    residue = float(np.max(np.abs(im))) if len(im) else 0.0
    if residue > HERMITIAN_TOL * scale:
        raise ArithmeticError(f"imaginary residue {residue:.3e} in square of a Hermitian sum")
    mask = (1 << n) - 1
    return PauliSum._from_arrays(n, keys >> n, keys & mask, re)


def string_action(x: int, z: int, n_qubits: int) -> tuple[np.ndarray, np.ndarray]:
    """Column action of a string: ``P|b> = phase[b] |b ^ x>`` for every ``b``."""
    b = np.arange(1 << n_qubits, dtype=np.int64)
    sign = 1 - 2 * (popcount(b & z) & 1)
    phase = _PHASES[popcount(x & z) % 4] * sign
    return b ^ x, phase


def to_dense(h: PauliSum, limit: int = DENSE_LIMIT) -> np.ndarray:
    n = h.n_qubits
    if n > limit:
        raise DenseLimitError(f"{n} qubits exceeds the dense limit of {limit}")
    dim = 1 << n
    out = np.zeros((dim, dim), dtype=complex)
    out[np.diag_indices(dim)] = h.identity_coefficient
    cols = np.arange(dim)
    for p, c in h.terms.items():
        rows, phase = string_action(p.x, p.z, n)
        out[rows, cols] += c * phase
    return out


def decompose_local(term: np.ndarray, sites: Iterable[int], n_qubits: int) -> PauliSum:
    """Expand a k-site Hermitian matrix in Pauli strings and embed it.

    Local index bit ``l`` corresponds to ``sites[l]`` (same little-endian
    convention as full-register indices).
    """
    sites = [int(s) for s in sites]
    k = len(sites)
    term = np.asarray(term, dtype=complex)
    dim = 1 << k
    if term.shape != (dim, dim):
        raise ValueError(f"expected a {dim}x{dim} matrix for {k} sites, got {term.shape}")
    if len(set(sites)) != k or any(s < 0 or s >= n_qubits for s in sites):
        raise ValueError(f"invalid site list {sites} for {n_qubits} qubits")
    if np.max(np.abs(term - term.conj().T), initial=0.0) > HERMITIAN_TOL:
        raise ValueError("term is not Hermitian within 1e-10")
    cols = np.arange(dim)
    ident = 0.0
    terms: dict[PauliString, float] = {}
    for x in range(dim):
        for z in range(dim):
            rows, phase = string_action(x, z, k)
            # Tr(P M) = sum_b phase[b] M[b, b^x]
            coeff = float(np.real(np.sum(phase * term[cols, rows]))) / dim
            if abs(coeff) <= PRUNE_TOL:
                continue
            if x == 0 and z == 0:
                ident += coeff
                continue
            fx = sum(((x >> l) & 1) << sites[l] for l in range(k))
            fz = sum(((z >> l) & 1) << sites[l] for l in range(k))
            terms[PauliString(n_qubits, fx, fz)] = coeff
    return PauliSum(n_qubits, ident, terms)
