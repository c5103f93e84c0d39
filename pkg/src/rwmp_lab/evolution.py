"""Trotterized real-time evolution, adiabatic state preparation and phase estimation."""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.sparse.linalg as spla

from .pauli import QubitHamiltonian, pauli_action
from .statevector import (GateLog, RandomStream, Statevector, fidelity, inverse_qft,
                          apply_hadamard, register_distribution)


def _term_table(h: QubitHamiltonian) -> tuple[np.ndarray, list[str]]:
    terms = h.effective_terms()
    return np.array([c for c, _ in terms], dtype=float), [k for _, k in terms]


def _exp_term(amps: np.ndarray, letters: str, angle: float) -> np.ndarray:
    if set(letters) <= {"I"}:
        return np.exp(-1j * angle) * amps
    return np.cos(angle) * amps - 1j * np.sin(angle) * pauli_action(letters, amps)


def _trotter_step(amps: np.ndarray, coeffs: np.ndarray, letters: Sequence[str], dt: float, order: int) -> np.ndarray:
    if order == 1:
        for c, k in zip(coeffs, letters):
            amps = _exp_term(amps, k, c * dt)
        return amps
    for c, k in zip(coeffs, letters):
        amps = _exp_term(amps, k, 0.5 * c * dt)
    for c, k in zip(coeffs[::-1], letters[::-1]):
        amps = _exp_term(amps, k, 0.5 * c * dt)
    return amps


def trotter_evolve(psi: Statevector, h: QubitHamiltonian, duration: float, steps: int, order: int = 2) -> Statevector:
    """Approximate ``exp(-i H duration) psi`` by a product formula.

    Parameters
    ----------
    psi : Statevector
    h : QubitHamiltonian
        Terms are exponentiated in sorted-label order; shift and scale are honoured.
    duration : float
    steps : int
        Number of Trotter steps, at least 1.
    order : {1, 2}
        First-order Lie-Trotter or symmetric second-order splitting.
    """
    if steps < 1:
        raise ValueError("steps must be at least 1")
    if order not in (1, 2):
        raise ValueError("order must be 1 or 2")
    if psi.n_qubits != h.n_qubits:
        raise ValueError("state and Hamiltonian sizes differ")
    coeffs, letters = _term_table(h)
    dt = duration / steps
    amps = psi.amplitudes
    for _ in range(steps):
        amps = _trotter_step(amps, coeffs, letters, dt, order)
    return Statevector(amps, normalize=True)


def exact_evolve(psi: Statevector, h: QubitHamiltonian, duration: float) -> Statevector:
    """``exp(-i H duration) psi`` via a sparse Krylov exponential."""
    out = spla.expm_multiply(-1j * duration * h.sparse().tocsc(), psi.amplitudes)
    return Statevector(out, normalize=True)


@dataclass(frozen=True)
class Schedule:
    """Piecewise-linear ramp ``lambda(t)`` on ``[0, t_max]``.

    ``lambda`` starts at 0 and is nondecreasing. It ends at 1, except for the
    all-zero schedule, which leaves the starting Hamiltonian switched on alone.
    """

    times: tuple[float, ...]
    values: tuple[float, ...]
    steps: int
    order: int = 2

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        lam = np.asarray(self.values, dtype=float)
        if t.shape != lam.shape or t.size < 2:
            raise ValueError("need at least two (time, value) samples of equal length")
        if t[0] != 0 or np.any(np.diff(t) <= 0):
            raise ValueError("times must start at 0 and increase strictly")
        if lam[0] != 0:
            raise ValueError("lambda(0) must be 0")
        if np.any(np.diff(lam) < 0):
            raise ValueError("lambda must be nondecreasing")
        if lam[-1] != 1 and np.any(lam != 0):
            raise ValueError("lambda(t_max) must be 1")
        if self.steps < 1:
            raise ValueError("steps must be at least 1")
        if self.order not in (1, 2):
            raise ValueError("order must be 1 or 2")

    @classmethod
    def linear(cls, t_max: float, steps: int, order: int = 2) -> "Schedule":
        if not t_max > 0:
            raise ValueError("t_max must be positive")
        return cls((0.0, float(t_max)), (0.0, 1.0), steps, order)

    @classmethod
    def zero(cls, t_max: float, steps: int, order: int = 2) -> "Schedule":
        return cls((0.0, float(t_max)), (0.0, 0.0), steps, order)

    @property
    def t_max(self) -> float:
        return float(self.times[-1])

    def __call__(self, t) -> np.ndarray:
        return np.interp(t, self.times, self.values)


@dataclass
class RTEResult:
    state: Statevector
    fidelity: float | None
    steps: int
    warned: bool = False


def rte_prepare(h0: QubitHamiltonian, h1: QubitHamiltonian, schedule: Schedule, psi0: Statevector,
                target: Statevector | None = None, fidelity_threshold: float = 0.99) -> RTEResult:
    """Evolve ``psi0`` under ``H(t) = H0 + lambda(t) H1`` with a Trotter step per interval.

    ``lambda`` is sampled at each step midpoint. When ``target`` (the oracle
    ground state of ``H0 + H1``) is given the final fidelity is recorded and a
    warning is issued below ``fidelity_threshold``; the state is returned
    regardless.
    """
    if h0.n_qubits != h1.n_qubits or h0.n_qubits != psi0.n_qubits:
        raise ValueError("Hamiltonian and state sizes differ")
    c0 = dict((k, c) for c, k in h0.effective_terms())
    c1 = dict((k, c) for c, k in h1.effective_terms())
    letters = sorted(set(c0) | set(c1))
    a0 = np.array([c0.get(k, 0.0) for k in letters])
    a1 = np.array([c1.get(k, 0.0) for k in letters])
    dt = schedule.t_max / schedule.steps
    mids = (np.arange(schedule.steps) + 0.5) * dt
    lam = schedule(mids)
    amps = psi0.amplitudes
    for s in range(schedule.steps):
        amps = _trotter_step(amps, a0 + lam[s] * a1, letters, dt, schedule.order)
    out = Statevector(amps, normalize=True)
    fid = None if target is None else fidelity(out, target)
    warned = False
    if fid is not None and fid < fidelity_threshold:
        warned = True
        warnings.warn(f"adiabatic preparation reached fidelity {fid:.4f} < {fidelity_threshold}",
                      RuntimeWarning, stacklevel=2)
    return RTEResult(out, fid, schedule.steps, warned)


def steps_to_fidelity(h0: QubitHamiltonian, h1: QubitHamiltonian, psi0: Statevector, target: Statevector,
                      dt: float, threshold: float = 0.99, order: int = 2, max_steps: int = 4096) -> int:
    """Fewest steps of a linear ramp with fixed step ``dt`` that reach ``threshold``.

    Doubling followed by bisection, assuming fidelity grows with ramp length
    in the adiabatic regime. Returns ``-1`` if ``max_steps`` is not enough.
    """

    def ok(n: int) -> bool:
        res = rte_prepare(h0, h1, Schedule.linear(n * dt, n, order), psi0)
        return fidelity(res.state, target) >= threshold

    hi = 1
    while not ok(hi):
        hi *= 2
        if hi > max_steps:
            return -1
    lo = hi // 2
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if ok(mid):
            hi = mid
        else:
            lo = mid
    return hi


def qpe_evolution_time(t_bits: int) -> float:
    """Evolution time that maps a [0, 1] spectrum onto phases in [0, 1 - 2**-t]."""
    return 2.0 * np.pi * (1.0 - 2.0 ** (-t_bits))


def phase_to_energy(phi, shift: float, scale: float, t_evo: float):
    """Invert the shift/scale and evolution-time mapping of a measured phase."""
    return 2.0 * np.pi * np.asarray(phi) * scale / t_evo - shift


def energy_to_phase(energy, shift: float, scale: float, t_evo: float):
    return (np.asarray(energy) + shift) * t_evo / (2.0 * np.pi * scale)


@dataclass
class PhaseReadout:
    """Result of phase estimation.

    ``energy`` is ``phase_to_energy(phase, shift, scale, t_evo)``.
    """

    t_bits: int
    phase: float
    energy: float
    success_probability: float
    shift: float
    scale: float
    t_evo: float
    state: Statevector
    samples: list[int] = field(default_factory=list)
    distribution: np.ndarray | None = None


class _Propagator:
    """Controlled powers of ``exp(+i H t)`` for a scaled Hamiltonian."""

    def __init__(self, h: QubitHamiltonian, t_evo: float, method: str, trotter_steps: int, order: int):
        self.h = h
        self.t_evo = t_evo
        self.method = method
        self.trotter_steps = trotter_steps
        self.order = order
        if method == "exact":
            self.evals, self.evecs = np.linalg.eigh(h.matrix())
        elif method != "trotter":
            raise ValueError(f"unknown evolution method {method!r}")

    def apply_controlled(self, block: np.ndarray, t_bits: int) -> np.ndarray:
        """``block`` has shape (2**t, 2**n); row index is the ancilla integer."""
        x = np.arange(block.shape[0])
        if self.method == "exact":
            coeffs = block @ self.evecs.conj()
            coeffs *= np.exp(1j * self.t_evo * np.outer(x, self.evals))
            return coeffs @ self.evecs.T
        out = block.copy()
        for j in range(t_bits):
            rows = np.nonzero((x >> j) & 1)[0]
            duration = -self.t_evo * 2 ** j
            steps = self.trotter_steps * 2 ** j
            for r in rows:
                psi = Statevector(out[r], normalize=True)
                nrm = np.linalg.norm(out[r])
                out[r] = nrm * trotter_evolve(psi, self.h, duration, steps, self.order).amplitudes
        return out


def _qpe_once(psi: Statevector, prop: _Propagator, t_bits: int, rng: RandomStream,
              log: GateLog | None) -> tuple[int, Statevector, np.ndarray]:
    n = psi.n_qubits
    full = psi.tensor(Statevector.zero(t_bits))
    anc = list(range(n, n + t_bits))
    full = apply_hadamard(full, anc, log)
    block = full.amplitudes.reshape(1 << t_bits, 1 << n)
    block = prop.apply_controlled(block, t_bits)
    if log is not None:
        log.add("controlled_u", t_bits)
    full = inverse_qft(Statevector(block.reshape(-1), normalize=True), anc, log)
    dist = register_distribution(full, anc)
    k = rng.choice(np.where(dist < 1e-15, 0.0, dist))
    sys_amps = full.amplitudes.reshape(1 << t_bits, 1 << n)[k]
    return k, Statevector(sys_amps, normalize=True), dist


def qpe(psi: Statevector, h: QubitHamiltonian, t_bits: int, rng: RandomStream, repetitions: int = 1,
        method: str = "exact", trotter_steps: int = 4, order: int = 2,
        log: GateLog | None = None) -> PhaseReadout:
    """Phase estimation of a scaled Hamiltonian on ``psi``.

    The system occupies the low qubits and ``t_bits`` ancillas sit above it.
    Ancilla ``j`` controls ``exp(+i H t_evo 2**j)``; an inverse QFT and a
    register measurement follow. With several repetitions each run starts
    from the collapsed system state of the previous one and the median phase
    is reported.

    Returns
    -------
    PhaseReadout
        Sampled phase in units of a full turn, its energy in physical units,
        the probability mass of the sampled bin and its two neighbours, and
        the projected system state.
    """
    if t_bits < 1:
        raise ValueError("t_bits must be at least 1")
    if repetitions < 1 or repetitions % 2 == 0:
        raise ValueError("repetitions must be a positive odd number")
    if not h.scaled:
        raise ValueError("phase estimation needs a shifted and scaled Hamiltonian")
    if psi.n_qubits != h.n_qubits:
        raise ValueError("state and Hamiltonian sizes differ")
    t_evo = qpe_evolution_time(t_bits)
    prop = _Propagator(h, t_evo, method, trotter_steps, order)
    samples = []
    probs = []
    state = psi
    dist = None
    for _ in range(repetitions):
        k, state, dist = _qpe_once(state, prop, t_bits, rng, log)
        samples.append(k)
        idx = np.array([k - 1, k, k + 1]) % (1 << t_bits)
        probs.append(float(dist[idx].sum()))
    order_idx = np.argsort(samples, kind="stable")
    mid = order_idx[len(samples) // 2]
    phase = samples[mid] / 2 ** t_bits
    energy = float(phase_to_energy(phase, h.shift, h.scale, t_evo))
    return PhaseReadout(t_bits, phase, energy, probs[mid], h.shift, h.scale, t_evo, state, samples, dist)


__all__ = [
    "trotter_evolve", "exact_evolve", "Schedule", "RTEResult", "rte_prepare", "steps_to_fidelity",
    "qpe", "PhaseReadout", "phase_to_energy", "energy_to_phase", "qpe_evolution_time",
]
