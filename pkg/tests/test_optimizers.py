import numpy as np
import pytest

from conftest import random_sum
from sigma_vqe.ansatz import AnsatzSpec, build_ansatz
from sigma_vqe.estimator import CostSpec
from sigma_vqe.evaluators import Evaluator
from sigma_vqe.optimizers import (AdamState, SpsaHyper, SpsaState, adam_step, cost_gradient,
                                  psr_moment_derivative, shifted_parameters, spsa_calibrate, spsa_step)
from sigma_vqe.pauli import PauliSum

Z = PauliSum.from_labels({"Z": 1.0})


def finite_difference(ev: Evaluator, theta: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    out = np.empty_like(theta)
    for k in range(len(theta)):
        e = np.zeros_like(theta)
        e[k] = eps
        out[k] = (ev.exact_costs((theta + e)[None])[0] - ev.exact_costs((theta - e)[None])[0]) / (2 * eps)
    return out


def test_shifted_parameters_layout():
    rows = shifted_parameters(np.zeros(2))
    np.testing.assert_allclose(rows, np.pi / 2 * np.array([[1, 0], [0, 1], [-1, 0], [0, -1]]))


@pytest.mark.parametrize("t", [0.0, 0.4, 2.0, -1.1])
def test_single_qubit_psr_example(t):
    a = AnsatzSpec(1, 0)
    ev = Evaluator(a, Z, CostSpec())
    theta = np.array([t, 0.3])
    assert psr_moment_derivative(a, theta, 0, "h", ev) == pytest.approx(-np.sin(t), abs=1e-12)
    assert psr_moment_derivative(a, theta, 1, "h", ev) == pytest.approx(0.0, abs=1e-12)
    x = PauliSum.from_labels({"X": 1.0})
    assert psr_moment_derivative(a, theta, 0, x, ev) == pytest.approx(np.cos(t) * np.cos(0.3))


def test_psr_index_check():
    a = AnsatzSpec(1, 0)
    with pytest.raises(IndexError):
        psr_moment_derivative(a, np.zeros(2), 2, "h", Evaluator(a, Z, CostSpec()))


@pytest.mark.parametrize("spec", [CostSpec(), CostSpec(0.5, 0.5, 1.3), CostSpec(1.0, 0.0, -0.4),
                                  CostSpec(0.0, 1.0, 2.0)])
def test_cost_gradient_matches_finite_difference(spec):
    rng = np.random.default_rng(5)
    a = build_ansatz(3, 2)
    h = random_sum(rng, 3, 8)
    ev = Evaluator(a, h, spec)
    theta = rng.uniform(-np.pi, np.pi, a.parameter_count)
    g = cost_gradient(a, theta, ev)
    np.testing.assert_allclose(g.gradient, finite_difference(ev, theta), atol=1e-7)
    assert g.evaluations == 2 * a.parameter_count + 1
    assert g.cost == pytest.approx(ev.exact_costs(theta[None])[0])


def test_pure_variance_gradient_ignores_target():
    rng = np.random.default_rng(1)
    a = build_ansatz(2, 1)
    h = random_sum(rng, 2, 5)
    theta = rng.uniform(-1, 1, a.parameter_count)
    g1 = cost_gradient(a, theta, Evaluator(a, h, CostSpec(0.0, 1.0, -3.0))).gradient
    g2 = cost_gradient(a, theta, Evaluator(a, h, CostSpec(0.0, 1.0, 4.0))).gradient
    np.testing.assert_allclose(g1, g2, atol=1e-12)


def test_zero_hamiltonian_has_zero_gradient():
    a = build_ansatz(2, 1)
    g = cost_gradient(a, np.full(a.parameter_count, 0.3), Evaluator(a, PauliSum(2), CostSpec(0.5, 0.5, 1.0)))
    np.testing.assert_allclose(g.gradient, 0.0)
    assert g.cost == pytest.approx(0.5)


def test_shot_gradient_is_unbiased():
    rng = np.random.default_rng(2)
    a = build_ansatz(2, 1)
    h = random_sum(rng, 2, 5)
    theta = rng.uniform(-np.pi, np.pi, a.parameter_count)
    exact = cost_gradient(a, theta, Evaluator(a, h, CostSpec(0.5, 0.5, 0.2))).gradient
    ev = Evaluator(a, h, CostSpec(0.5, 0.5, 0.2), mode="shots-pure", shots=100, seed=9)
    samples = np.array([cost_gradient(a, theta, ev, iteration=i).gradient for i in range(600)])
    se = samples.std(axis=0, ddof=1) / np.sqrt(len(samples))
    assert np.all(np.abs(samples.mean(axis=0) - exact) < 4.5 * se + 1e-12)


def test_adam_first_step_is_lr_times_sign():
    state = AdamState.fresh(3, lr=0.1)
    state, upd = adam_step(state, np.array([2.0, -0.5, 1e-3]))
    np.testing.assert_allclose(upd, [-0.1, 0.1, -0.1], rtol=1e-4)
    assert state.t == 1


def test_adam_rejects_nan():
    with pytest.raises(FloatingPointError, match="indices \\[1\\]"):
        adam_step(AdamState.fresh(2), np.array([0.0, np.nan]))


def test_adam_minimizes_quadratic_bowl():
    target = np.array([0.3, -0.7, 1.1])
    theta = np.zeros(3)
    state = AdamState.fresh(3, lr=0.05)
    for _ in range(2000):
        state, upd = adam_step(state, 2 * (theta - target))
        theta = theta + upd
    np.testing.assert_allclose(theta, target, atol=1e-3)


def test_spsa_gains():
    s = SpsaState(SpsaHyper(a0=1.0, c0=0.2, A=10.0))
    assert s.gain_a(0) == pytest.approx(11 ** -0.602)
    assert s.gain_c(3) == pytest.approx(0.2 * 4 ** -0.101)


def test_spsa_step_record_and_wrapping():
    calls = []

    def cost(rows, it, role):
        calls.append((it, role))
        return np.sum(rows ** 2, axis=1)

    state = SpsaState(SpsaHyper(a0=50.0, c0=0.1, A=0.0))
    state, theta, rec = spsa_step(state, np.array([3.0, -3.0]), cost, np.random.default_rng(0))
    assert state.t == 1 and len(calls) == 1
    assert np.all(theta > -np.pi) and np.all(theta <= np.pi)
    assert rec.c_app == pytest.approx(0.5 * (rec.cost_plus + rec.cost_minus))
    # for a quadratic, the central difference along delta is exact
    np.testing.assert_allclose(rec.gradient * state.delta, np.dot(2 * np.array([3.0, -3.0]), state.delta))


def test_spsa_failure_leaves_state_untouched():
    def boom(rows, it, role):
        raise RuntimeError("device")

    state = SpsaState(SpsaHyper(1.0, 0.1, 0.0))
    with pytest.raises(RuntimeError):
        spsa_step(state, np.zeros(2), boom, np.random.default_rng(0))
    assert state.t == 0


def test_spsa_minimizes_quadratic_and_is_deterministic():
    target = np.array([0.5, -0.2, 0.9, 0.1])

    def cost(rows, it, role):
        return np.sum((rows - target) ** 2, axis=1)

    def run(seed):
        rng = np.random.default_rng(seed)
        state = SpsaState(SpsaHyper(a0=0.2, c0=0.1, A=20.0))
        theta = np.zeros(4)
        for _ in range(800):
            state, theta, _ = spsa_step(state, theta, cost, rng)
        return theta

    a = run(3)
    np.testing.assert_allclose(a, target, atol=0.02)
    np.testing.assert_array_equal(a, run(3))


def test_spsa_calibration_example():
    slope = np.array([1.0, -2.0, 0.5])

    def cost(rows, it, role):
        return rows @ slope

    hyper, n_eval = spsa_calibrate(cost, np.zeros(3), 300, np.random.default_rng(0))
    assert hyper.A == pytest.approx(30.0)
    assert hyper.c0 == pytest.approx(1e-3)
    # each probe magnitude is |slope . delta|, one of 0.5, 1.5, 2.5, 3.5
    first_gain = hyper.a0 / 31 ** 0.602
    assert 0.1 / 3.5 - 1e-9 <= first_gain <= 0.1 / 0.5 + 1e-9
    assert n_eval == 15


def test_spsa_calibration_uses_noise_level():
    rng_noise = np.random.default_rng(4)

    def cost(rows, it, role):
        return rng_noise.normal(0, 0.3, len(rows))

    hyper, _ = spsa_calibrate(cost, np.zeros(2), 100, np.random.default_rng(1), n_repeat=50)
    assert 0.2 < hyper.c0 < 0.4


def test_spsa_calibration_first_step_size():
    def cost(rows, it, role):
        return 2.0 * rows[:, 0]

    hyper, _ = spsa_calibrate(cost, np.zeros(1), 50, np.random.default_rng(1))
    first = SpsaState(hyper).gain_a(0) * 2.0
    assert first == pytest.approx(0.1)


def test_adam_zero_gradient_gives_zero_update():
    state, upd = adam_step(AdamState.fresh(4), np.zeros(4))
    np.testing.assert_array_equal(upd, np.zeros(4))


@pytest.mark.parametrize("seed", range(5))
def test_adam_cost_strictly_decreasing_on_norm(seed):
    theta = np.random.default_rng(seed).uniform(-np.pi, np.pi, 8)
    state = AdamState.fresh(8)
    costs = [float(theta @ theta)]
    for _ in range(50):
        state, upd = adam_step(state, 2 * theta)
        theta = theta + upd
        costs.append(float(theta @ theta))
    assert all(b < a for a, b in zip(costs, costs[1:]))


def test_spsa_one_parameter_quadratic_estimate():
    def cost(rows, it, role):
        return rows[:, 0] ** 2

    state = SpsaState(SpsaHyper(a0=0.1, c0=0.05, A=0.0))
    _, _, rec = spsa_step(state, np.array([0.7]), cost, np.random.default_rng(2))
    assert rec.gradient[0] == pytest.approx(1.4)


@pytest.mark.slow
def test_spsa_matches_adam_at_equal_evaluation_budget():
    from pathlib import Path

    from sigma_vqe.config import load_config
    from sigma_vqe.experiments import run_vqe

    cfg = load_config(Path(__file__).resolve().parent.parent / "configs" / "sm_run.yaml")
    adam = run_vqe(cfg)
    iterations = adam.summary["evaluations"] // 2
    spsa = run_vqe(cfg.replace(optimizer={"name": "spsa"}, run={"iterations": iterations}))
    gap = abs(spsa.final["fidelity"] - adam.final["fidelity"])
    print(f"ADAM F={adam.final['fidelity']:.5f}, SPSA F={spsa.final['fidelity']:.5f} "
          f"over {adam.summary['evaluations']} evaluations each, gap {gap:.4f}")
    assert gap < 0.05
