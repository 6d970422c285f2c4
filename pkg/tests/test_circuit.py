from functools import reduce

import numpy as np
import pytest

from conftest import SINGLE, dense_oracle, random_state, random_sum
from sigma_vqe.ansatz import AnsatzSpec, build_ansatz, init_params
from sigma_vqe.circuit import (DensityMatrix, NoiseModel, StateVector, apply_circuit, apply_circuit_noisy,
                               cz_diagonal, exact_expectation, noisy_rotated_distribution, readout_channel,
                               rotated_distribution, rx, ry, rz, simulate)
from sigma_vqe.models import SMModelSpec, build_sm_model
from sigma_vqe.pauli import PauliSum, eval_string, square_sum


def embed(u: np.ndarray, qubit: int, n: int) -> np.ndarray:
    ops = [u if q == qubit else np.eye(2) for q in range(n)]
    return reduce(np.kron, reversed(ops))


def circuit_oracle(ansatz: AnsatzSpec, theta: np.ndarray) -> np.ndarray:
    """Dense-unitary construction of the ansatz, gate by gate."""
    n = ansatz.n_qubits
    psi = np.zeros(1 << n, dtype=complex)
    psi[0] = 1
    idx = np.arange(1 << n)
    for layer in range(ansatz.depth + 1):
        for q in range(n):
            k = 2 * (layer * n + q)
            psi = embed(rz(theta[k + 1]) @ ry(theta[k]), q, n) @ psi
        if layer < ansatz.depth:
            for a, b in ansatz.entangler:
                psi = np.where((idx >> a) & (idx >> b) & 1, -psi, psi)
    return psi


@pytest.mark.parametrize("n, depth", [(2, 0), (2, 1), (3, 2), (4, 3), (5, 1)])
def test_simulate_matches_dense_oracle(rng, n, depth):
    a = build_ansatz(n, depth)
    for _ in range(3):
        theta = rng.uniform(-np.pi, np.pi, a.parameter_count)
        np.testing.assert_allclose(apply_circuit(a, theta).amplitudes, circuit_oracle(a, theta), atol=1e-12)


def test_batch_simulation_matches_single_rows(rng):
    a = build_ansatz(4, 2)
    thetas = rng.uniform(-np.pi, np.pi, (5, a.parameter_count))
    batch = simulate(a, thetas)
    for k in range(5):
        np.testing.assert_allclose(batch[k], apply_circuit(a, thetas[k]).amplitudes, atol=1e-13)


def test_trivial_circuits():
    a = build_ansatz(3, 0)
    zero = np.zeros(8)
    zero[0] = 1
    np.testing.assert_allclose(apply_circuit(a, np.zeros(a.parameter_count)).amplitudes, zero, atol=1e-15)
    a = build_ansatz(3, 2)
    np.testing.assert_allclose(apply_circuit(a, np.zeros(a.parameter_count)).amplitudes, zero, atol=1e-15)


def test_single_qubit_ry_pi_flips():
    a = AnsatzSpec(1, 0)
    psi = apply_circuit(a, [np.pi, 0.0]).amplitudes
    assert abs(psi[1]) == pytest.approx(1.0)


def test_parameter_count_mismatch():
    with pytest.raises(ValueError, match="parameters"):
        apply_circuit(build_ansatz(2, 1), np.zeros(3))


def test_norm_preserved(rng):
    a = build_ansatz(5, 3)
    for _ in range(5):
        psi = apply_circuit(a, rng.uniform(-10, 10, a.parameter_count)).amplitudes
        assert np.linalg.norm(psi) == pytest.approx(1.0, abs=1e-10)


def test_cz_phase_on_11():
    assert cz_diagonal(2, ((0, 1),)).tolist() == [1, 1, 1, -1]


def test_rotation_generators_are_paulis():
    t = 0.37
    for gate, label in ((rx, "X"), (ry, "Y"), (rz, "Z")):
        w, v = np.linalg.eigh(SINGLE[label])
        expected = v @ np.diag(np.exp(-0.5j * t * w)) @ v.conj().T
        np.testing.assert_allclose(gate(t), expected, atol=1e-14)


def test_state_vector_validation():
    with pytest.raises(ValueError):
        StateVector(1, np.array([1.0, 1.0]))
    s = StateVector.product([np.array([0, 1]), np.array([1, 0])])
    # site 0 in |1>, site 1 in |0> -> index 0b01
    assert s.amplitudes[1] == 1


def test_exact_expectation(rng):
    zero = StateVector.zero(1)
    assert exact_expectation(zero, PauliSum.from_labels({"Z": 1.0})) == 1.0
    for n in (2, 3, 4):
        h = random_sum(rng, n, 10)
        psi = random_state(rng, n)
        oracle = np.vdot(psi, dense_oracle(h) @ psi).real
        assert exact_expectation(StateVector(n, psi), h) == pytest.approx(oracle, abs=1e-10)


def test_sm_scar_moments_vanish():
    m = build_sm_model(SMModelSpec(6, seed=3))
    assert abs(exact_expectation(m.scar_state, m.hamiltonian)) < 1e-12
    assert abs(exact_expectation(m.scar_state, square_sum(m.hamiltonian))) < 1e-12


def test_rotated_distribution_examples():
    zero = StateVector.zero(1)
    np.testing.assert_allclose(rotated_distribution(zero, "Z"), [1, 0])
    np.testing.assert_allclose(rotated_distribution(zero, "X"), [0.5, 0.5])


def test_y_eigenstate_convention():
    # frozen: the +1 eigenstate of Y lands on outcome 0 under Rx(pi/2)
    plus_y = StateVector(1, np.array([1, 1j]) / np.sqrt(2))
    minus_y = StateVector(1, np.array([1, -1j]) / np.sqrt(2))
    np.testing.assert_allclose(rotated_distribution(plus_y, "Y"), [1, 0], atol=1e-15)
    np.testing.assert_allclose(rotated_distribution(minus_y, "Y"), [0, 1], atol=1e-15)


def test_distribution_signs_agree_with_expectation(rng):
    n = 3
    psi = StateVector(n, random_state(rng, n))
    for basis in ("XYZ", "YYX", "ZXY"):
        p = rotated_distribution(psi, basis)
        assert p.sum() == pytest.approx(1.0) and np.all(p >= 0)
        for q in range(n):
            label = "".join(basis[j] if j == q else "I" for j in range(n))
            pauli = PauliSum.from_labels({label: 1.0})
            from_dist = sum(p[k] * eval_string(next(iter(pauli.terms)), k) for k in range(1 << n))
            assert from_dist == pytest.approx(exact_expectation(psi, pauli), abs=1e-10)


def test_noiseless_density_matrix_is_projector(rng):
    a = build_ansatz(3, 2)
    theta = rng.uniform(-np.pi, np.pi, a.parameter_count)
    rho = apply_circuit_noisy(a, theta, NoiseModel())
    psi = apply_circuit(a, theta).amplitudes
    assert np.linalg.norm(rho.matrix - np.outer(psi, psi.conj()), 2) < 1e-10


def test_full_depolarizing_gives_maximally_mixed(rng):
    a = build_ansatz(3, 2)
    rho = apply_circuit_noisy(a, rng.uniform(-np.pi, np.pi, a.parameter_count), NoiseModel(1.0, 1.0))
    np.testing.assert_allclose(rho.matrix, np.eye(8) / 8, atol=1e-12)


def test_purity_decreases_with_p2(rng):
    a = build_ansatz(3, 2)
    theta = rng.uniform(-np.pi, np.pi, a.parameter_count)
    purities = []
    for p2 in (0.0, 0.02, 0.05, 0.1, 0.2):
        rho = apply_circuit_noisy(a, theta, NoiseModel(0.01, p2))
        rho.validate()
        purities.append(rho.purity)
    assert all(1 / 8 < p < 1 for p in purities)
    assert all(b < a for a, b in zip(purities, purities[1:]))


def test_noisy_size_limit():
    with pytest.raises(ValueError, match="limit"):
        apply_circuit_noisy(build_ansatz(7, 1), np.zeros(28), NoiseModel())


def test_noisy_distribution_examples(rng):
    zero = DensityMatrix(1, np.diag([1.0, 0.0]).astype(complex))
    np.testing.assert_allclose(noisy_rotated_distribution(zero, "Z", 0.0), [1, 0])
    np.testing.assert_allclose(noisy_rotated_distribution(zero, "Z", 0.2), [0.8, 0.2])
    psi = random_state(rng, 1)
    rho = DensityMatrix(1, np.outer(psi, psi.conj()))
    for basis in "XYZ":
        np.testing.assert_allclose(noisy_rotated_distribution(rho, basis, 0.5), [0.5, 0.5], atol=1e-14)


def test_noisy_distribution_zero_flip_is_rotated_diagonal(rng):
    a = build_ansatz(2, 1)
    theta = rng.uniform(-np.pi, np.pi, a.parameter_count)
    rho = apply_circuit_noisy(a, theta, NoiseModel())
    pure = rotated_distribution(apply_circuit(a, theta), "XY")
    np.testing.assert_allclose(noisy_rotated_distribution(rho, "XY", 0.0), pure, atol=1e-12)


def test_readout_channel_two_qubits():
    p = readout_channel(np.array([1.0, 0, 0, 0]), 2, 0.1)
    np.testing.assert_allclose(p, [0.81, 0.09, 0.09, 0.01])


def test_noise_model_ranges():
    with pytest.raises(ValueError):
        NoiseModel(p1=1.5)
    with pytest.raises(ValueError):
        NoiseModel(readout_flip=0.6)


def test_init_params_feed_circuit():
    a = build_ansatz(3, 1)
    psi = apply_circuit(a, init_params(a.parameter_count, 1e-3, 0)).amplitudes
    assert abs(psi[0]) ** 2 > 1 - 1e-5
