"""Cost and moment evaluation back ends shared by the optimizers.

All three modes expose the same calls over stacked parameter vectors. Shot
modes draw every evaluation from a generator keyed by
``(master seed, iteration, role, row)``, so results do not depend on the order
in which rows are processed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ansatz import AnsatzSpec
from .circuit import (NoiseModel, Observable, apply_circuit_noisy, noisy_rotated_distribution,
                      rotated_probabilities, simulate)
from .estimator import (CostSpec, GroupingPlan, build_grouping, derived_rng, estimate_moments,
                        sample_shots, u_statistic)
from .pauli import PauliSum, square_sum

MODES = ("exact", "shots-pure", "shots-noisy")

# RNG roles
ROLE_CENTER = 0
ROLE_PSR = 1
ROLE_SPSA = 2
ROLE_CALIBRATE = 3


@dataclass
class Moments:
    h: np.ndarray
    h2: np.ndarray
    cost: np.ndarray
    hsq: np.ndarray


class Evaluator:
    """Evaluates ``<H>``, ``<H^2>`` and the cost for batches of parameter vectors."""

    def __init__(self, ansatz: AnsatzSpec, h: PauliSum, spec: CostSpec, mode: str = "exact",
                 shots: int = 0, seed: int = 0, noise: NoiseModel | None = None,
                 h2: PauliSum | None = None, plan: GroupingPlan | None = None):
        if mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
        if mode != "exact" and shots < 2:
            raise ValueError("shot modes need at least 2 shots per evaluation")
        if h.n_qubits != ansatz.n_qubits:
            raise ValueError("Hamiltonian and ansatz act on different qubit counts")
        self.ansatz = ansatz
        self.h = h
        self.spec = spec
        self.mode = mode
        self.shots = int(shots)
        self.seed = int(seed)
        self.noise = noise or NoiseModel()
        self.shots_used = 0
        self.evaluations = 0
        self._h2 = h2
        self._plan = plan
        self._obs = Observable(h) if mode == "exact" else None

    @property
    def h2(self) -> PauliSum:
        if self._h2 is None:
            self._h2 = square_sum(self.h)
        return self._h2

    @property
    def plan(self) -> GroupingPlan:
        if self._plan is None:
            self._plan = build_grouping(self.h, self.h2)
        return self._plan

    # -- exact ---------------------------------------------------------------

    def exact_moments_of_states(self, psi: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """``<H>`` and ``<H^2> = ||H psi||^2`` for stacked states."""
        obs = self._obs or Observable(self.h)
        self._obs = obs
        psi = np.atleast_2d(psi)
        hpsi = (obs.matrix @ psi.T).T
        eh = np.real(np.sum(psi.conj() * hpsi, axis=1))
        eh2 = np.real(np.sum(hpsi.conj() * hpsi, axis=1))
        return eh, eh2

    def exact_costs(self, thetas) -> np.ndarray:
        eh, eh2 = self.exact_moments_of_states(simulate(self.ansatz, thetas))
        return self.spec.assemble(eh, eh2, eh * eh)

    # -- shots ---------------------------------------------------------------

    def _distributions(self, thetas: np.ndarray):
        """Per-row callables mapping a basis to its outcome distribution."""
        plan = self.plan
        n = self.ansatz.n_qubits
        if self.mode == "shots-pure":
            psi = simulate(self.ansatz, thetas)
            table = {b: rotated_probabilities(psi, b, n) for b in plan.bases}
            return [(lambda basis, r=r: table[basis][r]) for r in range(len(thetas))]
        sources = []
        for theta in thetas:
            rho = apply_circuit_noisy(self.ansatz, theta, self.noise)
            cache = {b: noisy_rotated_distribution(rho, b, self.noise.readout_flip) for b in plan.bases}
            sources.append(cache.__getitem__)
        return sources

    def _shot_moments(self, thetas, iteration, role) -> Moments:
        plan = self.plan
        rows = len(thetas)
        out = Moments(np.empty(rows), np.empty(rows), np.empty(rows), np.empty(rows))
        for r, source in enumerate(self._distributions(thetas)):
            rng = derived_rng(self.seed, iteration, role, r)
            batch = sample_shots(source, plan, self.shots, rng)
            m = estimate_moments(batch, plan)
            hsq = u_statistic(m.y_values, m.shots, m.y_counts)
            out.h[r], out.h2[r], out.hsq[r] = m.h_hat, m.h2_hat, hsq
            out.cost[r] = self.spec.assemble(m.h_hat, m.h2_hat, hsq)
        self.shots_used += rows * self.shots
        return out

    # -- public ----------------------------------------------------------------

    def moments(self, thetas, iteration: int = 0, role: int = ROLE_CENTER) -> Moments:
        thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
        self.evaluations += len(thetas)
        if self.mode == "exact":
            eh, eh2 = self.exact_moments_of_states(simulate(self.ansatz, thetas))
            hsq = eh * eh
            return Moments(eh, eh2, self.spec.assemble(eh, eh2, hsq), hsq)
        return self._shot_moments(thetas, iteration, role)

    def costs(self, thetas, iteration: int = 0, role: int = ROLE_CENTER) -> np.ndarray:
        return self.moments(thetas, iteration, role).cost

    def describe(self) -> dict:
        out = {"mode": self.mode, "shots_per_evaluation": self.shots, "seed": self.seed}
        if self.mode == "shots-noisy":
            out["noise"] = {"p1": self.noise.p1, "p2": self.noise.p2,
                            "readout_flip": self.noise.readout_flip}
        if self.mode != "exact":
            out["n_bases"] = self.plan.n_bases
        return out
