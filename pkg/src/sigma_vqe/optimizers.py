"""ADAM with parameter-shift gradients of the cost, and SPSA."""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from typing import Callable

import numpy as np

from .ansatz import AnsatzSpec, wrap_angles
from .circuit import Observable, simulate
from .estimator import CostSpec
from .evaluators import ROLE_CALIBRATE, ROLE_CENTER, ROLE_PSR, ROLE_SPSA, Evaluator
from .pauli import PauliSum

log = logging.getLogger(__name__)

SHIFT = np.pi / 2


def shifted_parameters(theta: np.ndarray, indices=None) -> np.ndarray:
    """Rows ``theta + pi/2 e_k`` followed by rows ``theta - pi/2 e_k``."""
    theta = np.asarray(theta, dtype=float)
    idx = np.arange(len(theta)) if indices is None else np.atleast_1d(indices)
    plus = np.repeat(theta[None, :], len(idx), axis=0)
    minus = plus.copy()
    plus[np.arange(len(idx)), idx] += SHIFT
    minus[np.arange(len(idx)), idx] -= SHIFT
    return np.vstack([plus, minus])


def psr_moment_derivative(ansatz: AnsatzSpec, theta, k: int, observable, evaluator: Evaluator,
                          iteration: int = 0) -> float:
    """``d<O>/d theta_k`` from the two +-pi/2 shifted evaluations.

    ``observable`` is ``"h"``, ``"h2"`` or, in exact mode, any PauliSum.
    """
    theta = np.asarray(theta, dtype=float)
    if not 0 <= k < len(theta):
        raise IndexError(f"parameter index {k} out of range for {len(theta)} parameters")
    rows = shifted_parameters(theta, [k])
    if isinstance(observable, PauliSum):
        if evaluator.mode != "exact":
            raise ValueError("arbitrary observables are only supported in exact mode")
        vals = Observable(observable).expectations(simulate(ansatz, rows))
    else:
        m = evaluator.moments(rows, iteration, ROLE_PSR)
        vals = {"h": m.h, "h2": m.h2}[observable]
    return 0.5 * float(vals[0] - vals[1])


@dataclass
class GradientResult:
    gradient: np.ndarray
    h: float
    h2: float
    cost: float
    evaluations: int


def cost_gradient(ansatz: AnsatzSpec, theta, evaluator: Evaluator, spec: CostSpec | None = None,
                  iteration: int = 0) -> GradientResult:
    """``dC = (a+b) d<H^2> - (2 a E + 2 b <H>) d<H>`` from 2P+1 evaluations.

    The unshifted ``<H>`` comes from its own batch, independent of the shifted
    batches, so the product stays unbiased in shot modes.
    """
    spec = spec or evaluator.spec
    theta = np.asarray(theta, dtype=float)
    p = len(theta)
    center = evaluator.moments(theta[None, :], iteration, ROLE_CENTER)
    if p == 0:
        return GradientResult(np.zeros(0), center.h[0], center.h2[0], center.cost[0], 1)
    shifted = evaluator.moments(shifted_parameters(theta), iteration, ROLE_PSR)
    d_h = 0.5 * (shifted.h[:p] - shifted.h[p:])
    d_h2 = 0.5 * (shifted.h2[:p] - shifted.h2[p:])
    a, b, e = spec.a, spec.b, spec.e_target
    grad = (a + b) * d_h2 - (2 * a * e + 2 * b * center.h[0]) * d_h
    return GradientResult(grad, float(center.h[0]), float(center.h2[0]), float(center.cost[0]), 2 * p + 1)


# -- ADAM ------------------------------------------------------------------------

@dataclass(frozen=True)
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    lr: float = 0.05
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def fresh(cls, n_params: int, lr: float = 0.05, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> "AdamState":
        return cls(np.zeros(n_params), np.zeros(n_params), 0, lr, beta1, beta2, eps)


def adam_step(state: AdamState, grad) -> tuple[AdamState, np.ndarray]:
    """One bias-corrected ADAM update; returns ``(new_state, delta_theta)``."""
    g = np.asarray(grad, dtype=float)
    if not np.all(np.isfinite(g)):
        bad = np.flatnonzero(~np.isfinite(g))
        raise FloatingPointError(f"non-finite gradient components at indices {bad.tolist()}")
    t = state.t + 1
    m = state.beta1 * state.m + (1 - state.beta1) * g
    v = state.beta2 * state.v + (1 - state.beta2) * g * g
    m_hat = m / (1 - state.beta1 ** t)
    v_hat = v / (1 - state.beta2 ** t)
    update = -state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return replace(state, m=m, v=v, t=t), update


# -- SPSA ------------------------------------------------------------------------

@dataclass(frozen=True)
class SpsaHyper:
    a0: float
    c0: float
    A: float
    gamma: float = 0.101
    alpha: float = 0.602


@dataclass(frozen=True)
class SpsaState:
    hyper: SpsaHyper
    t: int = 0
    delta: np.ndarray | None = None
    cost_plus: float = float("nan")
    cost_minus: float = float("nan")
    c_app: float = float("nan")

    def gain_a(self, t: int | None = None) -> float:
        t = self.t if t is None else t
        return self.hyper.a0 / (self.hyper.A + t + 1) ** self.hyper.alpha

    def gain_c(self, t: int | None = None) -> float:
        t = self.t if t is None else t
        return self.hyper.c0 * (t + 1) ** (-self.hyper.gamma)


@dataclass
class SpsaRecord:
    t: int
    a_t: float
    c_t: float
    cost_plus: float
    cost_minus: float
    c_app: float
    gradient: np.ndarray


CostFn = Callable[[np.ndarray, int, int], np.ndarray]


def spsa_step(state: SpsaState, theta, cost_fn: CostFn, rng: np.random.Generator
              ) -> tuple[SpsaState, np.ndarray, SpsaRecord]:
    """Two shifted evaluations, gradient estimate, wrapped update.

    ``cost_fn(rows, iteration, role)`` returns one cost per row. If it raises,
    nothing is updated.
    """
    theta = np.asarray(theta, dtype=float)
    t = state.t
    a_t, c_t = state.gain_a(), state.gain_c()
    delta = rng.choice(np.array([-1.0, 1.0]), size=len(theta))
    rows = np.vstack([theta + c_t * delta, theta - c_t * delta])
    c_plus, c_minus = (float(c) for c in cost_fn(rows, t, ROLE_SPSA))
    g_hat = (c_plus - c_minus) / (2 * c_t * delta)
    new_theta = wrap_angles(theta - a_t * g_hat)
    c_app = 0.5 * (c_plus + c_minus)
    new_state = replace(state, t=t + 1, delta=delta, cost_plus=c_plus, cost_minus=c_minus, c_app=c_app)
    return new_state, new_theta, SpsaRecord(t, a_t, c_t, c_plus, c_minus, c_app, g_hat)


def spsa_calibrate(cost_fn: CostFn, theta0, target_iterations: int, rng: np.random.Generator,
                   n_repeat: int = 5, n_probe: int = 5, target_step: float = 0.1
                   ) -> tuple[SpsaHyper, int]:
    """Standard-exponent SPSA gains sized from probe evaluations at ``theta0``.

    Returns the hyperparameters and the number of cost evaluations spent.
    """
    theta0 = np.asarray(theta0, dtype=float)
    alpha, gamma = 0.602, 0.101
    big_a = 0.1 * target_iterations
    repeats = cost_fn(np.repeat(theta0[None, :], n_repeat, axis=0), 0, ROLE_CALIBRATE)
    noise = float(np.std(repeats, ddof=1)) if n_repeat > 1 else 0.0
    c0 = max(noise, 1e-3)
    mags = []
    for j in range(n_probe):
        delta = rng.choice(np.array([-1.0, 1.0]), size=len(theta0))
        pair = cost_fn(np.vstack([theta0 + c0 * delta, theta0 - c0 * delta]), 1 + j, ROLE_CALIBRATE)
        mags.append(np.mean(np.abs((pair[0] - pair[1]) / (2 * c0 * delta))))
    g_mag = float(np.mean(mags)) if mags else 0.0
    if g_mag <= 0 or not np.isfinite(g_mag):
        log.warning("zero probe gradient during SPSA calibration; using a 0.05 rad blind step")
        a0 = 0.05 * (big_a + 1) ** alpha
    else:
        a0 = target_step * (big_a + 1) ** alpha / g_mag
    return SpsaHyper(a0=a0, c0=c0, A=big_a, gamma=gamma, alpha=alpha), n_repeat + 2 * n_probe
