import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from rwmp_lab.counting import (EnergyCheck, ObservablePlan, QAEEstimate, density_matrix_plans,
                               estimate_density_matrix, ks_energy_expectation, pauli_expectation_counting)
from rwmp_lab.dft import HubbardOracle, solve_ks
from rwmp_lab.fermion import (SPINLESS, Sector, annihilation, build_hubbard, creation, exact_diagonalize,
                              ground_state, hopping_matrix, jordan_wigner, shift_and_scale)
from rwmp_lab.pauli import PauliString, QubitHamiltonian
from rwmp_lab.statevector import RandomStream, Statevector, fidelity

SECTOR = Sector(n_up=1, n_down=1)


def _dimer(U, v=(0.0, 0.0)):
    qh = jordan_wigner(build_hubbard(2, 1.0, U, v))
    return shift_and_scale(qh), exact_diagonalize(qh, SECTOR).ground_state


def test_eigenstate_accepts_every_round():
    est, out = pauli_expectation_counting(Statevector.zero(1), PauliString(1.0, "Z"), 500, 0.1, RandomStream(0))
    assert est.accepted == est.rounds == 500
    assert est.value == 1.0
    assert fidelity(out, Statevector.zero(1)) == 1.0


def test_x_on_zero_is_balanced():
    est, _ = pauli_expectation_counting(Statevector.zero(1), PauliString(1.0, "X"), 10_000, 0.1, RandomStream(1))
    assert est.value == pytest.approx(0.0, abs=0.02)
    assert est.value == 2 * est.accepted / est.rounds - 1


@pytest.mark.parametrize("fast", [True, False])
def test_estimate_fields_consistent(fast):
    s, psi = _dimer(4.0)
    est, _ = pauli_expectation_counting(psi, PauliString(1.0, "XZXI"), 300, 0.05, RandomStream(2), fast=fast)
    assert 0 <= est.accepted <= est.rounds
    assert est.value == 2 * est.accepted / est.rounds - 1
    assert est.stderr <= 1 / np.sqrt(est.rounds)


def test_noninteracting_offdiagonal_half():
    s, psi = _dimer(0.0)
    rounds = 4000
    rho, out, _ = estimate_density_matrix(psi, 2, rounds, 0.05, RandomStream(3), hamiltonian=s, sector=SECTOR)
    np.testing.assert_allclose(rho.real, 0.5, atol=3 / np.sqrt(rounds))
    assert fidelity(out, psi) >= 0.95


def test_plans_reproduce_operators():
    plans = density_matrix_plans(2)
    nq = 4
    for (sp, i, j, part), plan in plans.items():
        a = (creation(2 * i + sp, nq) * annihilation(2 * j + sp, nq)).matrix()
        target = 0.5 * (a + a.conj().T) if part == "re" else (a - a.conj().T) / 2j
        np.testing.assert_allclose(plan.matrix(), target, atol=1e-12)


def test_plan_strings_are_hermitian_unitary():
    for plan in density_matrix_plans(3).values():
        for letters in plan.weights:
            P = PauliString(1.0, letters).matrix()
            np.testing.assert_allclose(P @ P, np.eye(P.shape[0]), atol=1e-14)


def test_single_spinless_fermion():
    psi = Statevector.basis(1, 1)
    rho, _, _ = estimate_density_matrix(psi, 1, 100, 0.1, RandomStream(0), spin=SPINLESS)
    np.testing.assert_allclose(rho, [[[1.0]]])


def test_interacting_dimer_density_matrix():
    s, psi = _dimer(4.0)
    rounds = 4000
    rho, _, _ = estimate_density_matrix(psi, 2, rounds, 0.05, RandomStream(4), hamiltonian=s, sector=SECTOR)
    tol = 3 / np.sqrt(rounds)
    for sp in range(2):
        np.testing.assert_allclose(np.diag(rho[sp]).real, 0.5, atol=tol)
        assert 0 < rho[sp, 0, 1].real < 0.5
    np.testing.assert_allclose(rho, rho.conj().transpose(0, 2, 1))
    assert np.trace(rho.sum(axis=0)).real == pytest.approx(2.0, abs=3 * 2 / np.sqrt(rounds))


def test_density_matches_oracle():
    oracle = HubbardOracle(2, 1.0, 4.0, 2)
    v = np.array([-0.4, 0.4])
    s, psi = _dimer(4.0, v)
    rounds = 4000
    rho, _, _ = estimate_density_matrix(psi, 2, rounds, 0.05, RandomStream(5), hamiltonian=s, sector=SECTOR)
    np.testing.assert_allclose(rho.real, oracle.density_matrix(v).real, atol=3 / np.sqrt(rounds))


def test_degenerate_reference_refused():
    h = shift_and_scale(QubitHamiltonian(2, (PauliString(1.0, "ZI"),)))
    psi = Statevector.basis(2, 1)
    with pytest.raises(ValueError, match="degenerate"):
        pauli_expectation_counting(psi, PauliString(1.0, "XI"), 10, 0.1, RandomStream(0), hamiltonian=h)


def test_repair_cap_names_eps():
    with pytest.raises(RuntimeError, match="eps=0.9"):
        pauli_expectation_counting(Statevector.zero(1), PauliString(1.0, "X"), 40_000, 0.9, RandomStream(0))


@pytest.mark.parametrize("bad", [dict(rounds=0), dict(eps=0.0), dict(eps=1.0), dict(mode="other")])
def test_argument_checks(bad):
    kw = dict(rounds=10, eps=0.1, mode="collapse") | bad
    with pytest.raises(ValueError):
        pauli_expectation_counting(Statevector.zero(1), PauliString(1.0, "Z"), kw["rounds"], kw["eps"],
                                   RandomStream(0), mode=kw["mode"])


def test_unbiased_over_seeds():
    s, psi = _dimer(4.0, (-0.3, 0.3))
    P = PauliString(1.0, "XZXI")
    exact = float(np.real(psi.expectation(QubitHamiltonian(4, (P,)))))
    vals = np.array([pauli_expectation_counting(psi, P, 200, 0.05, RandomStream(k))[0].value for k in range(60)])
    assert abs(vals.mean() - exact) <= 4 * vals.std(ddof=1) / np.sqrt(len(vals))


def test_fidelity_preserved_in_most_runs():
    s, psi = _dimer(4.0)
    fids = [pauli_expectation_counting(psi, PauliString(1.0, "XZXI"), 50, 0.05, RandomStream(k))[1]
            for k in range(100)]
    ok = np.mean([fidelity(f, psi) >= 0.95 for f in fids])
    assert ok >= 0.99


def test_energy_check_recognizes_reference():
    s, psi = _dimer(4.0)
    ref = float(np.real(psi.expectation(s)))
    chk = EnergyCheck(s, 8, ref)
    ok, out = chk.run(psi.amplitudes, RandomStream(0))
    assert ok and fidelity(Statevector(out, normalize=True), psi) == pytest.approx(1.0, abs=1e-10)
    excited = exact_diagonalize(jordan_wigner(build_hubbard(2, 1.0, 4.0)), SECTOR).state(1)
    rng = RandomStream(1)
    assert not any(chk.run(excited.amplitudes, rng)[0] for _ in range(20))


def test_full_and_collapse_agree_in_distribution():
    s, psi = _dimer(4.0)
    P = PauliString(1.0, "XZXI")
    kw = dict(hamiltonian=s, sector=SECTOR)
    full = [pauli_expectation_counting(psi, P, 20, 0.1, RandomStream(k), mode="full", **kw)[0].value
            for k in range(30)]
    coll = [pauli_expectation_counting(psi, P, 20, 0.1, RandomStream(1000 + k), **kw)[0].value for k in range(30)]
    assert stats.ks_2samp(full, coll).pvalue > 1e-3


def test_ks_energy_of_own_ground_state():
    v_s = np.array([-0.3, 0.3])
    h0 = build_hubbard(2, 1.0, 0.0, v_s)
    psi = ground_state(h0, 1, 1).ground_state
    value, out, _ = ks_energy_expectation(psi, v_s, 200, 0.05, RandomStream(0))
    assert value == pytest.approx(solve_ks(v_s, 2).energy, abs=1e-12)
    assert fidelity(out, psi) == pytest.approx(1.0, abs=1e-10)


def test_ks_energy_interacting_matches_oracle():
    oracle = HubbardOracle(2, 1.0, 4.0, 2)
    v_s = np.array([0.2, -0.2])
    s, psi = _dimer(4.0)
    rho = oracle.density_matrix(np.zeros(2)).sum(axis=0).real
    exact = float(np.trace((hopping_matrix(2, 1.0) + np.diag(v_s)) @ rho))
    rounds = 4000
    value, _, _ = ks_energy_expectation(psi, v_s, rounds, 0.05, RandomStream(1))
    hk = np.linalg.eigvalsh(hopping_matrix(2, 1.0) + np.diag(v_s))
    tol = 3 * 2 * np.sum(np.abs(hk - hk.mean())) / np.sqrt(rounds)
    assert value == pytest.approx(exact, abs=tol)


@settings(max_examples=10, deadline=None)
@given(c=st.floats(-2, 2))
def test_ks_energy_constant_shift(c):
    s, psi = _dimer(4.0)
    v_s = np.array([0.1, -0.1])
    a, _, _ = ks_energy_expectation(psi, v_s, 100, 0.1, RandomStream(7))
    b, _, _ = ks_energy_expectation(psi, v_s + c, 100, 0.1, RandomStream(7))
    assert b - a == pytest.approx(2 * c, abs=1e-12)


def test_observable_plan_combine():
    plan = ObservablePlan(2, {"ZI": 0.5, "IZ": -0.25}, constant=1.0)
    assert plan.combine({"ZI": 1.0, "IZ": -1.0}) == 1.75


def test_estimate_properties():
    e = QAEEstimate(0.2, 60, 100, 500, 0.1)
    assert e.mean_repair_iterations == 5.0
    assert e.stderr == pytest.approx(2 * np.sqrt(0.24 / 100))
