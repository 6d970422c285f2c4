"""Finite-shot estimation of the variance-penalized cost.

Shots are allocated across qubit-wise-commuting measurement bases by
importance sampling. Each measured bitstring is reused for every Pauli string
its basis covers, with each string reweighted by the inverse of its coverage
probability so that ``<H>`` and ``<H^2>`` estimates are unbiased. ``<H>^2`` is
estimated with a U-statistic over per-shot contributions.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .circuit import Observable, StateVector, exact_expectation, rotated_distribution
from .pauli import PauliString, PauliSum, parity_table

AXIS_BITS = {"X": (1, 0), "Y": (1, 1), "Z": (0, 1)}


class EstimationError(ValueError):
    pass


class InsufficientShotsError(EstimationError):
    pass


def derived_rng(master: int, *keys: int) -> np.random.Generator:
    """Counter-based generator keyed by ``(master, *keys)``; independent of call order."""
    ss = np.random.SeedSequence([int(master) & 0xFFFFFFFFFFFFFFFF, *[int(k) for k in keys]])
    return np.random.Generator(np.random.Philox(ss))


@dataclass(frozen=True)
class CostSpec:
    a: float = 0.5
    b: float = 0.5
    e_target: float = 0.0

    def __post_init__(self):
        if self.a < 0 or self.b < 0:
            raise ValueError("cost weights must be nonnegative")
        if abs(self.a + self.b - 1.0) > 1e-12:
            raise ValueError(f"cost weights must sum to 1, got a+b={self.a + self.b}")

    def assemble(self, h: float, h2: float, hsq: float) -> float:
        """``(a+b)<H^2> - 2 a E <H> - b <H>^2 + a E^2``."""
        a, b, e = self.a, self.b, self.e_target
        return (a + b) * h2 - 2 * a * e * h - b * hsq + a * e * e


def exact_cost(state: StateVector, h: PauliSum, h2: PauliSum, spec: CostSpec) -> float:
    eh = exact_expectation(state, h)
    eh2 = exact_expectation(state, h2)
    return spec.assemble(eh, eh2, eh * eh)


# -- grouping ------------------------------------------------------------------

def _basis_masks(basis: Sequence[str]) -> tuple[int, int]:
    x = z = 0
    for q, axis in enumerate(basis):
        xb, zb = AXIS_BITS[axis]
        x |= xb << q
        z |= zb << q
    return x, z


def covers(basis: Sequence[str], p: PauliString) -> bool:
    """True if every non-identity factor of ``p`` matches the basis axis."""
    bx, bz = _basis_masks(basis)
    return ((p.x ^ bx) | (p.z ^ bz)) & p.support == 0


@dataclass
class GroupingPlan:
    n_qubits: int
    bases: list[tuple[str, ...]]
    strings: list[PauliString]
    alpha: np.ndarray
    beta: np.ndarray
    alpha_identity: float
    beta_identity: float
    coverage: np.ndarray  # delta_B(i), shape (n_bases, n_strings)
    weights_h: np.ndarray
    weights_h2: np.ndarray
    probabilities: np.ndarray
    xi: np.ndarray
    values_h: np.ndarray = field(repr=False, default=None)
    values_h2: np.ndarray = field(repr=False, default=None)

    @property
    def n_bases(self) -> int:
        return len(self.bases)

    def basis_label(self, k: int) -> str:
        return "".join(self.bases[k])


def build_grouping(h: PauliSum, h2: PauliSum) -> GroupingPlan:
    """Greedy QWC coloring (largest coefficient first) with importance-sampled bases."""
    if h.n_qubits != h2.n_qubits:
        raise ValueError("h and h2 act on different qubit counts")
    n = h.n_qubits
    strings = sorted(set(h.terms) | set(h2.terms))
    alpha = np.array([h.terms.get(p, 0.0) for p in strings])
    beta = np.array([h2.terms.get(p, 0.0) for p in strings])
    if not strings:
        return GroupingPlan(n, [], [], np.zeros(0), np.zeros(0), h.identity_coefficient,
                            h2.identity_coefficient, np.zeros((0, 0), dtype=bool), np.zeros(0),
                            np.zeros(0), np.zeros(0), np.zeros(0),
                            np.zeros((0, 1 << n)), np.zeros((0, 1 << n)))

    order = np.argsort(-(np.abs(alpha) + np.abs(beta)), kind="stable")
    gx: list[int] = []
    gz: list[int] = []
    gs: list[int] = []
    for i in order:
        p = strings[i]
        for g in range(len(gx)):
            overlap = p.support & gs[g]
            if ((p.x ^ gx[g]) | (p.z ^ gz[g])) & overlap == 0:
                gx[g] |= p.x
                gz[g] |= p.z
                gs[g] |= p.support
                break
        else:
            gx.append(p.x)
            gz.append(p.z)
            gs.append(p.support)

    bases = []
    for x, z in zip(gx, gz):
        axes = []
        for q in range(n):
            xb, zb = (x >> q) & 1, (z >> q) & 1
            axes.append({(1, 0): "X", (1, 1): "Y"}.get((xb, zb), "Z"))
        bases.append(tuple(axes))

    return _finish_plan(n, bases, strings, alpha, beta, h.identity_coefficient, h2.identity_coefficient)


def _finish_plan(n, bases, strings, alpha, beta, a_id, b_id) -> GroupingPlan:
    sx = np.array([p.x for p in strings], dtype=np.int64)
    sz = np.array([p.z for p in strings], dtype=np.int64)
    supp = sx | sz
    masks = np.array([_basis_masks(b) for b in bases], dtype=np.int64)
    bx, bz = masks[:, 0:1], masks[:, 1:2]
    delta = (((sx[None, :] ^ bx) | (sz[None, :] ^ bz)) & supp[None, :]) == 0
    w_h = delta.astype(float) @ np.abs(alpha)
    w_h2 = delta.astype(float) @ np.abs(beta)
    total = np.sum(w_h + w_h2)
    probs = (w_h + w_h2) / total
    xi = probs @ delta.astype(float)
    if np.any(xi <= 0):
        raise EstimationError("a Pauli string has zero coverage")
    parity = np.stack([parity_table(int(s), n) for s in supp]).astype(float)
    values_h = (delta * (alpha / xi)[None, :]) @ parity
    values_h2 = (delta * (beta / xi)[None, :]) @ parity
    return GroupingPlan(n, bases, list(strings), alpha, beta, a_id, b_id, delta, w_h, w_h2,
                        probs, xi, values_h, values_h2)


def plan_from_bases(h: PauliSum, h2: PauliSum, bases) -> GroupingPlan:
    """Plan over a caller-chosen basis set (must cover every string)."""
    strings = sorted(set(h.terms) | set(h2.terms))
    alpha = np.array([h.terms.get(p, 0.0) for p in strings])
    beta = np.array([h2.terms.get(p, 0.0) for p in strings])
    return _finish_plan(h.n_qubits, [tuple(b) for b in bases], strings, alpha, beta,
                        h.identity_coefficient, h2.identity_coefficient)


# -- sampling ------------------------------------------------------------------

@dataclass
class ShotBatch:
    total: int
    basis_counts: np.ndarray  # K_B
    histograms: np.ndarray  # M^(B)_q, shape (n_bases, 2**n)
    seed: object = None


DistributionSource = Callable[[tuple[str, ...]], np.ndarray]


def _normalized(p: np.ndarray) -> np.ndarray:
    p = np.maximum(np.asarray(p, dtype=float), 0.0)
    return p / p.sum()


def sample_shots(source: DistributionSource | Mapping, plan: GroupingPlan, shots: int,
                 seed=None) -> ShotBatch:
    """Draw ``K ~ Mult(S, p_B)`` then ``M^(B) ~ Mult(K_B, p_q^(B))`` per basis.

    ``source`` maps a basis (tuple of axes) to its outcome distribution.
    """
    if shots < 0:
        raise ValueError("shot count must be nonnegative")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    dim = 1 << plan.n_qubits
    hist = np.zeros((plan.n_bases, dim), dtype=np.int64)
    if plan.n_bases == 0 or shots == 0:
        return ShotBatch(int(shots), np.zeros(plan.n_bases, dtype=np.int64), hist, seed)
    counts = rng.multinomial(shots, _normalized(plan.probabilities))
    get = source.__getitem__ if isinstance(source, Mapping) else source
    for k, kb in enumerate(counts):
        if kb:
            hist[k] = rng.multinomial(kb, _normalized(get(plan.bases[k])))
    return ShotBatch(int(shots), counts, hist, seed)


# -- estimators ----------------------------------------------------------------

@dataclass
class MomentEstimate:
    h_hat: float
    h2_hat: float
    y_values: np.ndarray
    y_counts: np.ndarray
    shots: int


@dataclass
class CostEstimate:
    h_hat: float
    h2_hat: float
    hsq_hat: float
    c_hat: float
    y_values: np.ndarray = field(repr=False)
    y_counts: np.ndarray = field(repr=False)


def estimate_moments(batch: ShotBatch, plan: GroupingPlan, h: PauliSum | None = None,
                     h2: PauliSum | None = None) -> MomentEstimate:
    """Histogram form of the inverse-coverage estimators.

    ``y_values`` holds the per-shot contribution to ``<H>`` (identity term
    included) for each distinct (basis, bitstring) pair, ``y_counts`` its
    multiplicity.
    """
    if batch.total <= 0:
        raise EstimationError("cannot estimate from an empty shot batch")
    a_id, b_id = plan.alpha_identity, plan.beta_identity
    if h is not None and abs(h.identity_coefficient - a_id) > 1e-12:
        raise EstimationError("plan was built for a different Hamiltonian")
    if h2 is not None and abs(h2.identity_coefficient - b_id) > 1e-12:
        raise EstimationError("plan was built for a different squared Hamiltonian")
    s = batch.total
    if plan.n_bases == 0:
        return MomentEstimate(a_id, b_id, np.array([a_id]), np.array([s]), s)
    hist = batch.histograms
    h_hat = a_id + float(np.sum(hist * plan.values_h)) / s
    h2_hat = b_id + float(np.sum(hist * plan.values_h2)) / s
    nz = hist > 0
    return MomentEstimate(h_hat, h2_hat, a_id + plan.values_h[nz], hist[nz], s)


def u_statistic(y, shots: int | None = None, counts=None) -> float:
    """``((sum Y)^2 - sum Y^2) / (S (S - 1))`` with optional multiplicities."""
    y = np.asarray(y, dtype=float)
    c = np.ones_like(y) if counts is None else np.asarray(counts, dtype=float)
    s = int(round(c.sum())) if shots is None else int(shots)
    if s < 2:
        raise InsufficientShotsError("the U-statistic needs at least 2 shots")
    total = float(np.sum(c * y))
    squares = float(np.sum(c * y * y))
    return (total * total - squares) / (s * (s - 1))


def estimate_cost(batch: ShotBatch, plan: GroupingPlan, h: PauliSum | None = None,
                  h2: PauliSum | None = None, spec: CostSpec = CostSpec()) -> CostEstimate:
    m = estimate_moments(batch, plan, h, h2)
    hsq = u_statistic(m.y_values, m.shots, m.y_counts)
    c = spec.assemble(m.h_hat, m.h2_hat, hsq)
    return CostEstimate(m.h_hat, m.h2_hat, hsq, c, m.y_values, m.y_counts)


def pure_source(state) -> DistributionSource:
    """Outcome distributions of a pure state, cached per basis."""
    cache: dict = {}

    def source(basis):
        if basis not in cache:
            cache[basis] = rotated_distribution(state, basis)
        return cache[basis]
    return source


def exact_moments(state: StateVector, h: PauliSum, h2: PauliSum) -> tuple[float, float]:
    return Observable(h).expectations(state.amplitudes)[0], Observable(h2).expectations(state.amplitudes)[0]
