"""State-preserving counting of Pauli expectation values.

One round measures the two-outcome projector pair ``(1 +/- P)/2`` on the
current state and counts the ``+`` outcomes. The disturbed state is then
repaired back to the reference state ``psi`` before the next round:

* a chain of ``K = ceil(theta**2 / eps)`` small projective steps along the
  great circle from the disturbed state to ``psi`` (each step succeeds with
  probability ``cos(theta/K)**2``), ending in a check against ``psi``;
* if any step fails, alternating ``(1 +/- P)/2`` and ``psi``-check
  measurements until the check fires.

The check against ``psi`` is either an ideal projector (``mode="collapse"``)
or a phase-estimation energy comparison with a pointer qubit
(``mode="full"``).
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.linalg as sla
import scipy.sparse.linalg as spla

from .fermion import (SPIN_HALF, Sector, annihilation, creation, exact_diagonalize, hopping_matrix,
                      mode_index)
from .pauli import PauliString, PauliSum, QubitHamiltonian, pauli_action
from .statevector import RandomStream, Statevector, fidelity, inverse_qft, qft

_TINY = 1e-15


@dataclass
class QAEEstimate:
    """Counting estimate of ``<P>``; ``value = 2 * accepted / rounds - 1``."""

    value: float
    accepted: int
    rounds: int
    repair_iterations: int
    epsilon: float
    label: str = ""
    fallback_rounds: int = 0
    fidelity: float = 1.0

    @property
    def stderr(self) -> float:
        p = self.accepted / self.rounds
        return 2.0 * math.sqrt(max(p * (1.0 - p), 0.25 / self.rounds) / self.rounds)

    @property
    def mean_repair_iterations(self) -> float:
        return self.repair_iterations / self.rounds


def _check_pauli(pauli: PauliString, n_qubits: int) -> str:
    if pauli.n_qubits != n_qubits:
        raise ValueError("Pauli string length does not match the state")
    c = complex(pauli.coefficient)
    if abs(c - 1.0) > 1e-12:
        raise ValueError("counting needs a unit-coefficient Hermitian Pauli string (P**2 = I)")
    return pauli.letters


class EnergyCheck:
    """Pointer-qubit comparison of a check-energy register with a saved energy.

    Registers (low to high): system, ``t_bits`` check qubits, one pointer. The
    saved energy register holds the classical bin ``k0``. The evolution time is
    chosen so that the reference energy lands exactly on ``k0``.

    Parameters
    ----------
    h : QubitHamiltonian
        Scaled Hamiltonian (spectrum in [0, 1]).
    t_bits : int
        Width of the check-energy register.
    reference : float
        Scaled eigenvalue of the state to be recognized.
    """

    def __init__(self, h: QubitHamiltonian, t_bits: int, reference: float):
        if not h.scaled:
            raise ValueError("energy check needs a shifted and scaled Hamiltonian")
        if t_bits < 1:
            raise ValueError("t_bits must be at least 1")
        self.t_bits = t_bits
        self.n = h.n_qubits
        self.evals, self.evecs = np.linalg.eigh(h.matrix())
        t_default = 2 * np.pi * (1 - 2.0 ** -t_bits)
        self.k0 = int(round(reference * t_default * 2 ** t_bits / (2 * np.pi))) % (1 << t_bits)
        self.t_check = t_default if self.k0 == 0 or reference <= 0 else 2 * np.pi * self.k0 / (2 ** t_bits * reference)
        self.checks = 0

    def _controlled(self, block: np.ndarray, sign: float) -> np.ndarray:
        x = np.arange(block.shape[0])
        coeffs = block @ self.evecs.conj()
        coeffs *= np.exp(sign * 1j * self.t_check * np.outer(x, self.evals))
        return coeffs @ self.evecs.T

    def run(self, phi: np.ndarray, rng: RandomStream) -> tuple[bool, np.ndarray]:
        """One energy comparison; returns (recognized, system amplitudes)."""
        self.checks += 1
        t, n = self.t_bits, self.n
        anc = list(range(n, n + t))
        block = np.tile(phi / 2 ** (t / 2), (1 << t, 1))
        block = self._controlled(block, +1.0)
        sv = inverse_qft(Statevector(block.reshape(-1), normalize=True), anc)
        block = sv.amplitudes.reshape(1 << t, 1 << n)
        p1 = float(np.sum(np.abs(block[self.k0]) ** 2))
        pointer = p1 > _TINY and (p1 >= 1 - _TINY or rng.uniform() < p1)
        keep = np.zeros(1 << t, dtype=bool)
        keep[self.k0] = True
        if not pointer:
            keep = ~keep
        block = np.where(keep[:, None], block, 0.0)
        sv = qft(Statevector(block.reshape(-1), normalize=True), anc)
        block = self._controlled(sv.amplitudes.reshape(1 << t, 1 << n), -1.0)
        # Hadamards on the check register map row 0 back to |0...0>.
        block = _hadamard_rows(block)
        probs = np.sum(np.abs(block) ** 2, axis=1)
        probs /= probs.sum()
        probs[probs < _TINY] = 0.0
        c = rng.choice(probs) if probs[0] < 1 - _TINY else 0
        out = block[c] / np.linalg.norm(block[c])
        return bool(pointer and c == 0), out


def _hadamard_rows(block: np.ndarray) -> np.ndarray:
    """Walsh-Hadamard transform along the register axis (H on every check qubit)."""
    out = block.copy()
    m = out.shape[0]
    h = 1
    while h < m:
        view = out.reshape(m // (2 * h), 2, h, -1)
        a = view[:, 0].copy()
        b = view[:, 1]
        view[:, 0] = (a + b) / np.sqrt(2)
        view[:, 1] = (a - b) / np.sqrt(2)
        h *= 2
    return out


class _Repairer:
    def __init__(self, psi: np.ndarray, letters: str, eps: float, rng: RandomStream,
                 energy_check: EnergyCheck | None):
        self.psi = psi
        self.letters = letters
        self.eps = eps
        self.rng = rng
        self.energy_check = energy_check
        self.cap = int(math.ceil(10.0 / eps))

    def measure_pm(self, phi: np.ndarray) -> tuple[int, np.ndarray]:
        pphi = pauli_action(self.letters, phi)
        plus = 0.5 * (phi + pphi)
        p = float(np.vdot(plus, plus).real)
        if p >= 1 - _TINY:
            return 1, phi
        if p <= _TINY:
            return -1, phi
        if self.rng.uniform() < p:
            return 1, plus / math.sqrt(p)
        minus = phi - plus
        return -1, minus / np.linalg.norm(minus)

    def project(self, phi: np.ndarray, u: np.ndarray) -> tuple[bool, np.ndarray]:
        ov = np.vdot(u, phi)
        p = min(1.0, abs(ov) ** 2)
        if p >= 1 - _TINY or (p > _TINY and self.rng.uniform() < p):
            return True, u * (ov / abs(ov))
        rest = phi - ov * u
        return False, rest / np.linalg.norm(rest)

    def check(self, phi: np.ndarray) -> tuple[bool, np.ndarray]:
        if self.energy_check is not None:
            return self.energy_check.run(phi, self.rng)
        return self.project(phi, self.psi)

    def geodesic(self, chi: np.ndarray) -> tuple[float, int, np.ndarray | None, np.ndarray]:
        ov = np.vdot(chi, self.psi)
        theta = math.acos(min(1.0, abs(ov)))
        K = max(1, math.ceil(theta * theta / self.eps))
        if theta < 1e-12:
            return theta, K, None, chi
        target = self.psi * (abs(ov) / ov)
        perp = (target - math.cos(theta) * chi) / math.sin(theta)
        return theta, K, perp, chi

    def point(self, chi, perp, theta, K, k) -> np.ndarray:
        a = k * theta / K
        return math.cos(a) * chi + math.sin(a) * perp

    def fallback(self, phi: np.ndarray, spent: int) -> tuple[int, np.ndarray]:
        it = spent
        while True:
            it += 1
            if it > self.cap:
                raise RuntimeError(f"repair exceeded {self.cap} iterations (10/eps, eps={self.eps})")
            _, phi = self.measure_pm(phi)
            ok, phi = self.check(phi)
            if ok:
                return it, phi

    def repair(self, chi: np.ndarray) -> tuple[int, bool, np.ndarray]:
        """Drag ``chi`` back to ``psi``; returns (iterations, used_fallback, state)."""
        theta, K, perp, chi = self.geodesic(chi)
        phi = chi
        if perp is not None:
            for k in range(1, K):
                ok, phi = self.project(phi, self.point(chi, perp, theta, K, k))
                if not ok:
                    it, phi = self.fallback(phi, K)
                    return it, True, phi
        ok, phi = self.check(phi)
        if ok:
            return K, False, phi
        it, phi = self.fallback(phi, K)
        return it, True, phi


def _check_reference(psi: Statevector, hamiltonian: QubitHamiltonian | None, sector: Sector | None,
                     spin: str) -> float | None:
    if hamiltonian is None:
        return None
    spec = exact_diagonalize(hamiltonian, sector, spin=spin)
    energy = float(np.real(psi.expectation(hamiltonian)))
    level = int(np.argmin(np.abs(spec.eigenvalues - energy)))
    if spec.degeneracy_flags[level]:
        raise ValueError("reference state lies in a degenerate level; the repair loop is ill-defined")
    return energy


def pauli_expectation_counting(psi: Statevector, pauli: PauliString, rounds: int, eps: float,
                               rng: RandomStream, mode: str = "collapse",
                               hamiltonian: QubitHamiltonian | None = None, sector: Sector | None = None,
                               check_bits: int = 10, fast: bool = True,
                               spin: str = SPIN_HALF) -> tuple[QAEEstimate, Statevector]:
    """Estimate ``<psi|P|psi>`` by counting accepted ``(1+P)/2`` outcomes.

    Parameters
    ----------
    psi : Statevector
        Reference state, preserved by the repair loop.
    pauli : PauliString
        Unit-coefficient Pauli string.
    rounds : int
    eps : float
        Failure probability budget in (0, 1). Sets the repair granularity and
        the ``10/eps`` iteration cap.
    rng : RandomStream
    mode : {"collapse", "full"}
        ``full`` recognizes ``psi`` through :class:`EnergyCheck` and needs a
        scaled ``hamiltonian``.
    hamiltonian, sector : optional
        When given, ``psi`` must sit in a nondegenerate level of ``hamiltonian``
        restricted to ``sector``.
    fast : bool
        Sample whole rounds from their exact outcome distribution in
        collapse mode. Failed repair chains are still simulated explicitly.

    Returns
    -------
    (QAEEstimate, Statevector)
    """
    if rounds < 1:
        raise ValueError("rounds must be positive")
    if not 0 < eps < 1:
        raise ValueError("eps must lie in (0, 1)")
    if mode not in ("collapse", "full"):
        raise ValueError(f"unknown mode {mode!r}")
    letters = _check_pauli(pauli, psi.n_qubits)
    reference = _check_reference(psi, hamiltonian, sector, spin)
    check = None
    if mode == "full":
        if hamiltonian is None:
            raise ValueError("full mode needs the scaled Hamiltonian")
        check = EnergyCheck(hamiltonian, check_bits, reference)
    ref = psi.amplitudes / np.linalg.norm(psi.amplitudes)
    rep = _Repairer(ref, letters, eps, rng, check)
    if mode == "collapse" and fast:
        acc, iters, fb, state = _fast_rounds(rep, rounds)
    else:
        acc = iters = fb = 0
        state = ref
        for _ in range(rounds):
            sign, chi = rep.measure_pm(state)
            acc += sign > 0
            it, used, state = rep.repair(chi)
            iters += it
            fb += used
    out = Statevector(state, normalize=True)
    est = QAEEstimate(2.0 * acc / rounds - 1.0, int(acc), rounds, int(iters), eps, pauli.label(), int(fb),
                      fidelity(out, psi))
    return est, out


def _fast_rounds(rep: _Repairer, rounds: int) -> tuple[int, int, int, np.ndarray]:
    psi = rep.psi
    pphi = pauli_action(rep.letters, psi)
    plus = 0.5 * (psi + pphi)
    p = min(1.0, max(0.0, float(np.vdot(plus, plus).real)))
    branches = {}
    for sign, vec, prob in ((1, plus, p), (-1, psi - plus, 1.0 - p)):
        if prob <= _TINY:
            continue
        chi = vec / math.sqrt(prob)
        theta, K, perp, chi = rep.geodesic(chi)
        c2 = math.cos(theta / K) ** 2
        branches[sign] = (chi, theta, K, perp, c2, c2 ** K)
    u1 = rep.rng.uniform(rounds)
    signs = np.where(u1 < p, 1, -1)
    if p >= 1 - _TINY:
        signs[:] = 1
    elif p <= _TINY:
        signs[:] = -1
    u2 = rep.rng.uniform(rounds)
    accepted = int(np.sum(signs > 0))
    iters = 0
    fallbacks = 0
    state = psi
    for sign, (chi, theta, K, perp, c2, success) in branches.items():
        sel = signs == sign
        fails = np.nonzero(sel & (u2 >= success))[0]
        iters += K * int(np.sum(sel))
        for _ in fails:
            # Failure at step k has weight c2**(k-1) * (1 - c2).
            w = c2 ** np.arange(K) * (1.0 - c2)
            k = 1 + rep.rng.choice(w)
            a_prev = (k - 1) * theta / K
            u_prev = math.cos(a_prev) * chi + math.sin(a_prev) * perp
            u_k = math.cos(k * theta / K) * chi + math.sin(k * theta / K) * perp
            rest = u_prev - np.vdot(u_k, u_prev) * u_k
            phi = rest / np.linalg.norm(rest)
            it, state = rep.fallback(phi, K)
            iters += it - K
            fallbacks += 1
    return accepted, iters, fallbacks, state


@dataclass
class ObservablePlan:
    """Real combination ``constant + sum_k w_k P_k`` of Hermitian unit Pauli strings."""

    n_qubits: int
    weights: dict[str, float]
    constant: float = 0.0
    rounds: int = 1000
    label: str = ""

    @classmethod
    def from_pauli_sum(cls, ps: PauliSum, rounds: int = 1000, label: str = "") -> "ObservablePlan":
        if not ps.is_hermitian():
            raise ValueError("observable must be Hermitian")
        ident = "I" * ps.n_qubits
        w = {k: float(c.real) for k, c in ps.terms.items() if k != ident}
        return cls(ps.n_qubits, w, float(ps.terms.get(ident, 0.0).real), rounds, label)

    def matrix(self) -> np.ndarray:
        ps = PauliSum(self.n_qubits, dict(self.weights)) + PauliSum.identity(self.n_qubits, self.constant)
        return ps.matrix()

    def combine(self, values: dict[str, float]) -> float:
        return self.constant + sum(w * values[k] for k, w in self.weights.items())


def density_matrix_plans(n_sites: int, spin: str = SPIN_HALF, rounds: int = 1000) -> dict[tuple, ObservablePlan]:
    """Plans for ``Re rho_ij`` and ``Im rho_ij`` per spin.

    Keys are ``(s, i, j, "re")`` and ``(s, i, j, "im")`` with ``i <= j``.
    ``Re`` uses ``(A + A+)/2`` and ``Im`` uses ``(A - A+)/(2i)`` for ``A = c+_i c_j``.
    """
    ns = 2 if spin == SPIN_HALF else 1
    nq = n_sites * ns
    plans = {}
    for s in range(ns):
        for i in range(n_sites):
            for j in range(i, n_sites):
                p, q = mode_index(i, s, ns), mode_index(j, s, ns)
                a = creation(p, nq) * annihilation(q, nq)
                ad = a.dagger()
                plans[(s, i, j, "re")] = ObservablePlan.from_pauli_sum((a + ad) * 0.5, rounds, f"re rho[{s},{i},{j}]")
                if i != j:
                    plans[(s, i, j, "im")] = ObservablePlan.from_pauli_sum((a - ad) * (-0.5j), rounds,
                                                                           f"im rho[{s},{i},{j}]")
    return plans


def measure_plans(psi: Statevector, plans: Sequence[ObservablePlan], rounds: int, eps: float, rng: RandomStream,
                  **kwargs) -> tuple[list[float], dict[str, QAEEstimate], Statevector]:
    """Count every distinct Pauli string once, in sorted order, on the evolving state."""
    strings = sorted({k for plan in plans for k in plan.weights})
    state = psi
    estimates: dict[str, QAEEstimate] = {}
    for k in strings:
        est, state = pauli_expectation_counting(state, PauliString(1.0, k), rounds, eps, rng, **kwargs)
        estimates[k] = est
    values = {k: e.value for k, e in estimates.items()}
    return [plan.combine(values) for plan in plans], estimates, state


def estimate_density_matrix(psi: Statevector, n_sites: int, rounds: int, eps: float, rng: RandomStream,
                            spin: str = SPIN_HALF, **kwargs) -> tuple[np.ndarray, Statevector, dict]:
    """Estimate ``rho[s, i, j] = <c+_(i,s) c_(j,s)>`` by counting.

    Returns the Hermitian estimate of shape ``(n_spin, n_sites, n_sites)``,
    the returned state and the per-string estimates.
    """
    plans = density_matrix_plans(n_sites, spin, rounds)
    keys = list(plans)
    values, estimates, state = measure_plans(psi, [plans[k] for k in keys], rounds, eps, rng, spin=spin, **kwargs)
    ns = 2 if spin == SPIN_HALF else 1
    rho = np.zeros((ns, n_sites, n_sites), dtype=complex)
    for (s, i, j, part), val in zip(keys, values):
        if part == "re":
            rho[s, i, j] += val
            if i != j:
                rho[s, j, i] += val
        else:
            rho[s, i, j] += 1j * val
            rho[s, j, i] -= 1j * val
    return rho, state, estimates


def _fixed_rotation_generator(phi: np.ndarray) -> np.ndarray:
    """Anti-Hermitian ``K`` with ``expm(K) = phi`` (orbital columns), after a det sign fix."""
    phi = np.array(phi, dtype=complex)
    if np.isrealobj(phi) or np.allclose(phi.imag, 0):
        if np.linalg.det(phi.real) < 0:
            phi[:, -1] *= -1
    K = sla.logm(phi)
    return 0.5 * (K - K.conj().T)


def orbital_rotation_generator(phi: np.ndarray, n_sites: int, spin: str = SPIN_HALF):
    """Sparse Fock-space generator ``G = sum_s sum_ij K_ij c+_(i,s) c_(j,s)``.

    ``expm(G) c+_j expm(-G) = sum_i phi_ij c+_i`` for each spin.
    """
    K = _fixed_rotation_generator(phi)
    ns = 2 if spin == SPIN_HALF else 1
    nq = n_sites * ns
    g = PauliSum(nq)
    for s in range(ns):
        for i in range(n_sites):
            for j in range(n_sites):
                if abs(K[i, j]) > 1e-15:
                    g = g + creation(mode_index(i, s, ns), nq) * annihilation(mode_index(j, s, ns), nq) * K[i, j]
    return g.sparse().tocsc()


def _particle_number(psi: Statevector) -> int:
    counts = np.bitwise_count(np.arange(psi.dim)).astype(float)
    mean = float(np.dot(psi.probabilities(), counts))
    var = float(np.dot(psi.probabilities(), (counts - mean) ** 2))
    if var > 1e-10:
        raise ValueError("state is not a particle-number eigenstate")
    return int(round(mean))


def ks_energy_expectation(psi: Statevector, v_s: Sequence[float], rounds: int, eps: float, rng: RandomStream,
                          t: float = 1.0, hopping: np.ndarray | None = None, spin: str = SPIN_HALF,
                          **kwargs) -> tuple[float, Statevector, dict]:
    """``<psi| T + V_s |psi>`` from counted occupations in the Kohn-Sham orbital basis.

    The single-particle matrix ``h = hopping + diag(v_s)`` is diagonalized
    classically to ``h_k``. The state is rotated so each orbital becomes a
    qubit, the orbital occupations are counted and the state is rotated back.
    The value is ``sum_k (h_k - mean(h)) n_k + mean(h) N_e`` so that shifting
    ``v_s`` by ``c`` changes it by exactly ``c N_e``.

    Returns
    -------
    (value, state, per-string estimates)
    """
    v_s = np.asarray(v_s, dtype=float)
    n_sites = v_s.shape[0]
    hop = hopping_matrix(n_sites, t) if hopping is None else np.asarray(hopping)
    h = hop + np.diag(v_s)
    hk, phi = np.linalg.eigh(h)
    n_e = _particle_number(psi)
    G = orbital_rotation_generator(phi, n_sites, spin)
    rotated = Statevector(spla.expm_multiply(-G, psi.amplitudes), normalize=True)
    ns = 2 if spin == SPIN_HALF else 1
    nq = n_sites * ns
    state = rotated
    estimates = {}
    occ = np.zeros(n_sites)
    for s in range(ns):
        for k in range(n_sites):
            q = mode_index(k, s, ns)
            letters = "".join("Z" if m == q else "I" for m in range(nq))
            est, state = pauli_expectation_counting(state, PauliString(1.0, letters), rounds, eps, rng,
                                                    spin=spin, **kwargs)
            estimates[letters] = est
            occ[k] += 0.5 * (1.0 - est.value)
    back = Statevector(spla.expm_multiply(G, state.amplitudes), normalize=True)
    hbar = float(hk.mean())
    value = float(np.dot(hk - hbar, occ) + hbar * n_e)
    return value, back, estimates


__all__ = [
    "QAEEstimate", "EnergyCheck", "pauli_expectation_counting", "ObservablePlan", "density_matrix_plans",
    "measure_plans", "estimate_density_matrix", "ks_energy_expectation", "orbital_rotation_generator",
]
