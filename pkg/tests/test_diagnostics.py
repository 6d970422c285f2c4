import csv
import warnings

import numpy as np
import pytest

from conftest import random_state, random_sum
from sigma_vqe.circuit import StateVector
from sigma_vqe.diagnostics import (eigendecompose, entanglement_entropy, find_scar, fidelity, gap_ratio,
                                   mid_spectrum_min_entropy, region_entropy)
from sigma_vqe.models import PHModelSpec, SMModelSpec, build_ph_model, build_sm_model
from sigma_vqe.pauli import DenseLimitError, PauliSum, to_dense


def test_bell_pair_entropy():
    bell = StateVector(2, np.array([1, 0, 0, 1]) / np.sqrt(2))
    assert entanglement_entropy(bell) == pytest.approx(np.log(2))


def test_product_state_entropy_zero(rng):
    phis = [random_state(rng, 1) for _ in range(5)]
    assert entanglement_entropy(StateVector.product(phis)) < 1e-12


def test_entropy_symmetric_under_partition_swap(rng):
    n = 6
    psi = StateVector(n, random_state(rng, n))
    for cut in (1, 2, 3):
        a = entanglement_entropy(psi, cut)
        b = region_entropy(psi, range(cut, n))
        assert a == pytest.approx(b, abs=1e-10)


def test_entropy_cut_validation(rng):
    with pytest.raises(ValueError):
        entanglement_entropy(StateVector(3, random_state(rng, 3)), cut=3)


def test_fidelity_size_mismatch(rng):
    with pytest.raises(ValueError):
        fidelity(random_state(rng, 2), random_state(rng, 3))


def test_gap_ratio_limits(rng):
    poisson = np.cumsum(rng.exponential(size=20000))
    assert gap_ratio(poisson, window=1.0) == pytest.approx(2 * np.log(2) - 1, abs=0.01)
    g = rng.normal(size=(600, 600))
    goe = np.linalg.eigvalsh(g + g.T)
    assert gap_ratio(goe) == pytest.approx(0.5307, abs=0.02)


def test_gap_ratio_warns_on_degeneracy():
    with pytest.warns(RuntimeWarning):
        gap_ratio(np.array([0.0, 1.0, 1.0, 2.0, 3.5]), window=1.0)


def test_sm_spectrum_has_single_scar(tmp_path):
    m = build_sm_model(SMModelSpec(9, seed=0))
    spec = eigendecompose(m.hamiltonian)
    low = np.flatnonzero((spec.entropies < 1e-8) & (np.abs(spec.eigenvalues) < 1e-6))
    assert len(low) == 1
    assert find_scar(spec) == low[0]
    assert find_scar(spec, reference=m.scar_state) == low[0]
    spec.write_csv(tmp_path / "s.csv")
    rows = list(csv.reader(open(tmp_path / "s.csv")))
    assert rows[0] == ["index", "energy", "half_cut_entropy"] and len(rows) == 513


def test_mid_spectrum_min_entropy_sees_embedded_low_state():
    m = build_sm_model(SMModelSpec(8, seed=1))
    spec = eigendecompose(m.hamiltonian)
    assert mid_spectrum_min_entropy(spec) < 1e-8


def test_dense_limit_refusal():
    with pytest.raises(DenseLimitError):
        eigendecompose(PauliSum(13))


def test_no_warning_for_clean_spectrum(rng):
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        gap_ratio(np.sort(rng.normal(size=100)))


def test_fidelity_examples():
    zero, one = np.array([1.0, 0.0]), np.array([0.0, 1.0])
    plus = np.array([1.0, 1.0]) / np.sqrt(2)
    assert fidelity(zero, zero) == pytest.approx(1.0)
    assert fidelity(zero, one) == 0.0
    assert fidelity(plus, zero) == pytest.approx(0.5)


def test_fidelity_phase_invariant(rng):
    a, b = random_state(rng, 3), random_state(rng, 3)
    assert fidelity(a, np.exp(0.7j) * b) == pytest.approx(fidelity(a, b), abs=1e-14)


def test_eigendecompose_examples(rng):
    np.testing.assert_allclose(eigendecompose(PauliSum.from_labels({"Z": 1.0})).eigenvalues, [-1, 1])
    h = random_sum(rng, 3, 8)
    spec = eigendecompose(h)
    d = to_dense(h)
    residual = d @ spec.eigenvectors - spec.eigenvectors * spec.eigenvalues
    assert np.max(np.abs(residual)) < 1e-8


def test_equally_spaced_gap_ratio():
    assert gap_ratio(np.arange(50.0)) == pytest.approx(1.0)


def test_sm_zero_eigenvector_is_the_scar():
    m = build_sm_model(SMModelSpec(9, seed=0))
    spec = eigendecompose(m.hamiltonian)
    assert len(spec.eigenvalues) == 512
    k = int(np.argmin(np.abs(spec.eigenvalues)))
    assert abs(spec.eigenvalues[k]) < 1e-8
    assert fidelity(spec.eigenvectors[:, k], m.scar_state.amplitudes) == pytest.approx(1.0, abs=1e-8)


def test_ph_chi3_entropy_exceeds_chi1_per_family():
    for seed in range(10):
        ent = []
        for chi in (1, 3):
            m = build_ph_model(PHModelSpec(8, 4, chi, seed=seed))
            ent.append(entanglement_entropy(m.scar_state))
        assert ent[1] > ent[0]
