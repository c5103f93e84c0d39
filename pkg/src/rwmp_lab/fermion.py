"""Lattice fermion Hamiltonians, the Jordan-Wigner map and the exact-diagonalization oracle.

Qubit ordering is site-major, spin-minor: spin-orbital ``(i, s)`` with
``s = 0`` (up) or ``1`` (down) lives on qubit ``2*i + s``. Spinless models use
qubit ``i`` for site ``i``. The Jordan-Wigner string of mode ``q`` runs over
qubits ``0 .. q-1`` and ``c_q = Z_0 ... Z_{q-1} (X_q + i Y_q) / 2`` so that an
occupied mode is the qubit state ``|1>``.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .pauli import PauliString, PauliSum, QubitHamiltonian
from .statevector import Statevector

SPINLESS = "spinless"
SPIN_HALF = "spin-half"
DEFAULT_QUBIT_CAP = 14
DEGENERACY_TOL = 1e-9
RESIDUAL_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class FermionHamiltonian:
    """``H = sum t_ij c+_i c_j + sum V_ijkl c+_i c+_j' c_l' c_k``.

    For spin-half models the one-body sum runs over both spins and the
    two-body sum over all spin pairs ``(s, s')`` with ``i, k`` carrying ``s``
    and ``j, l`` carrying ``s'``.
    """

    n_sites: int
    t: np.ndarray
    V: np.ndarray
    spin: str = SPIN_HALF

    def __post_init__(self):
        n = self.n_sites
        t = np.asarray(self.t)
        V = np.asarray(self.V)
        if n < 1:
            raise ValueError("n_sites must be at least 1")
        if t.shape != (n, n):
            raise ValueError(f"t must be {n}x{n}, got {t.shape}")
        if V.shape != (n, n, n, n):
            raise ValueError(f"V must have shape {(n,) * 4}, got {V.shape}")
        if self.spin not in (SPINLESS, SPIN_HALF):
            raise ValueError(f"spin must be {SPINLESS!r} or {SPIN_HALF!r}")
        if not (np.all(np.isfinite(t)) and np.all(np.isfinite(V))):
            raise ValueError("coefficients must be finite")
        if not np.allclose(t, t.conj().T, atol=1e-12):
            raise ValueError("t must be Hermitian")
        if not np.allclose(V, V.transpose(1, 0, 3, 2), atol=1e-12):
            raise ValueError("V must satisfy V_ijkl = V_jilk")
        object.__setattr__(self, "t", t.copy())
        object.__setattr__(self, "V", V.copy())

    @property
    def n_modes(self) -> int:
        return self.n_sites * (2 if self.spin == SPIN_HALF else 1)

    @property
    def n_spin(self) -> int:
        return 2 if self.spin == SPIN_HALF else 1

    def with_potential(self, dv: Sequence[float]) -> "FermionHamiltonian":
        """Return a copy with ``dv`` added to the diagonal of ``t``."""
        dv = np.asarray(dv, dtype=float)
        if dv.shape != (self.n_sites,):
            raise ValueError(f"potential must have length {self.n_sites}")
        return FermionHamiltonian(self.n_sites, self.t + np.diag(dv), self.V, self.spin)


def hopping_matrix(n_sites: int, t: float, periodic: bool = False) -> np.ndarray:
    """Nearest-neighbour kinetic matrix ``-t`` on a chain."""
    if n_sites < 1:
        raise ValueError("n_sites must be at least 1")
    h = np.zeros((n_sites, n_sites))
    for i in range(n_sites - 1):
        h[i, i + 1] = h[i + 1, i] = -t
    if periodic and n_sites > 2:
        h[0, -1] = h[-1, 0] = -t
    return h


def build_hubbard(n_sites: int, t: float, U: float, v: Sequence[float] | None = None,
                  spin: str = SPIN_HALF, periodic: bool = False) -> FermionHamiltonian:
    """Hubbard chain with hopping ``t``, on-site repulsion ``U`` and site potential ``v``.

    The two-body tensor stores ``V_iiii = U/2``. Summed over both spin orderings
    this gives the conventional ``U n_up n_down`` on every site.
    """
    if n_sites < 1:
        raise ValueError("n_sites must be at least 1")
    v = np.zeros(n_sites) if v is None else np.asarray(v, dtype=float)
    if v.shape != (n_sites,):
        raise ValueError(f"v must have length {n_sites}, got {v.shape}")
    h = hopping_matrix(n_sites, t, periodic) + np.diag(v)
    V = np.zeros((n_sites,) * 4)
    for i in range(n_sites):
        V[i, i, i, i] = U / 2.0
    return FermionHamiltonian(n_sites, h, V, spin)


def mode_index(site: int, spin: int, n_spin: int = 2) -> int:
    return site * n_spin + spin


@lru_cache(maxsize=64)
def _ladder(q: int, n_qubits: int) -> tuple[PauliSum, PauliSum]:
    ops = {p: "Z" for p in range(q)}
    x = PauliSum.single(n_qubits, {**ops, q: "X"}, 0.5)
    y = PauliSum.single(n_qubits, {**ops, q: "Y"}, 0.5j)
    return x + y, x - y


def annihilation(q: int, n_qubits: int) -> PauliSum:
    """Jordan-Wigner image of ``c_q``."""
    if not 0 <= q < n_qubits:
        raise IndexError("mode out of range")
    return _ladder(q, n_qubits)[0]


def creation(q: int, n_qubits: int) -> PauliSum:
    """Jordan-Wigner image of ``c+_q``."""
    if not 0 <= q < n_qubits:
        raise IndexError("mode out of range")
    return _ladder(q, n_qubits)[1]


def number_operator(q: int, n_qubits: int) -> PauliSum:
    """``(I - Z_q) / 2``."""
    return PauliSum(n_qubits, {"I" * n_qubits: 0.5}) + PauliSum.single(n_qubits, {q: "Z"}, -0.5)


def hopping_operator(p: int, q: int, n_qubits: int) -> PauliSum:
    """``c+_p c_q + c+_q c_p``."""
    return creation(p, n_qubits) * annihilation(q, n_qubits) + creation(q, n_qubits) * annihilation(p, n_qubits)


def site_number_operator(site: int, n_sites: int, spin: str = SPIN_HALF) -> PauliSum:
    """Total occupation of one site, summed over spin."""
    ns = 2 if spin == SPIN_HALF else 1
    nq = n_sites * ns
    out = PauliSum(nq)
    for s in range(ns):
        out = out + number_operator(mode_index(site, s, ns), nq)
    return out


def jordan_wigner(h: FermionHamiltonian) -> QubitHamiltonian:
    """Map a lattice fermion Hamiltonian to a sum of Pauli strings."""
    ns = h.n_spin
    nq = h.n_modes
    N = h.n_sites
    out = PauliSum(nq)
    for i in range(N):
        for j in range(N):
            if h.t[i, j] == 0:
                continue
            for s in range(ns):
                p, q = mode_index(i, s, ns), mode_index(j, s, ns)
                out = out + creation(p, nq) * annihilation(q, nq) * h.t[i, j]
    for i, j, k, l in zip(*np.nonzero(h.V)):
        coeff = h.V[i, j, k, l]
        for s in range(ns):
            for s2 in range(ns):
                a = mode_index(i, s, ns)
                b = mode_index(j, s2, ns)
                c = mode_index(l, s2, ns)
                d = mode_index(k, s, ns)
                if a == b or c == d:
                    continue
                out = out + (creation(a, nq) * creation(b, nq) * annihilation(c, nq) * annihilation(d, nq)) * coeff
    return QubitHamiltonian.from_pauli_sum(
        out, metadata={"n_sites": N, "spin": h.spin, "source": "jordan_wigner"})


def _spectral_bounds(h: QubitHamiltonian) -> tuple[float, float]:
    if h.n_qubits > DEFAULT_QUBIT_CAP:
        raise ValueError(f"exact bounds need at most {DEFAULT_QUBIT_CAP} qubits")
    ev = np.linalg.eigvalsh(h.matrix())
    return float(ev[0]), float(ev[-1])


def shift_and_scale(h: QubitHamiltonian, margin: float = 1e-3, bound: str = "gershgorin") -> QubitHamiltonian:
    """Shift by a constant and divide by a width so the spectrum lies in [0, 1].

    Parameters
    ----------
    h : QubitHamiltonian
        Unscaled Hamiltonian.
    margin : float
        Extra padding (energy units) added on both sides of the bounds.
    bound : {"gershgorin", "exact"}
        ``gershgorin`` uses identity coefficient plus or minus the sum of
        absolute non-identity coefficients; ``exact`` diagonalizes.

    Returns
    -------
    QubitHamiltonian
        Same terms with ``shift`` and ``scale`` recorded, ``scaled=True``.
    """
    if h.scaled:
        raise ValueError("Hamiltonian is already scaled")
    if not np.isfinite(margin) or margin < 0:
        raise ValueError("margin must be a finite non-negative number")
    coeffs = np.array([t.coefficient for t in h.terms], dtype=complex)
    if not np.all(np.isfinite(coeffs)):
        raise ValueError("term coefficients must be finite")
    if bound == "gershgorin":
        c0 = h.identity_coefficient()
        r = h.coefficient_norm()
        lo, hi = c0 - r, c0 + r
    elif bound == "exact":
        lo, hi = _spectral_bounds(h)
    else:
        raise ValueError(f"unknown bound {bound!r}")
    shift = -lo + margin
    width = hi - lo + 2 * margin
    if width <= 0:
        width = 1.0
    meta = dict(h.metadata, bound=bound, margin=margin)
    return QubitHamiltonian(h.n_qubits, h.terms, shift=shift, scale=width, scaled=True, metadata=meta)


@dataclass(frozen=True)
class Sector:
    """Particle-number / spin filter for exact diagonalization.

    ``n_up`` and ``n_down`` apply to spin-half layouts; ``sz`` is in units of
    one half (``n_up - n_down``). Unset fields do not filter.
    """

    n_particles: int | None = None
    n_up: int | None = None
    n_down: int | None = None
    sz: int | None = None

    def basis(self, n_qubits: int, spin: str = SPIN_HALF) -> np.ndarray:
        idx = np.arange(1 << n_qubits)
        keep = np.ones(idx.shape, dtype=bool)
        if self.n_particles is not None:
            keep &= np.bitwise_count(idx) == self.n_particles
        if any(x is not None for x in (self.n_up, self.n_down, self.sz)):
            if spin != SPIN_HALF:
                raise ValueError("spin filters need a spin-half layout")
            up_mask = sum(1 << q for q in range(0, n_qubits, 2))
            n_up = np.bitwise_count(idx & up_mask)
            n_dn = np.bitwise_count(idx & ~up_mask & ((1 << n_qubits) - 1))
            if self.n_up is not None:
                keep &= n_up == self.n_up
            if self.n_down is not None:
                keep &= n_dn == self.n_down
            if self.sz is not None:
                keep &= (n_up.astype(int) - n_dn.astype(int)) == self.sz
        return idx[keep]


@dataclass
class Spectrum:
    """Eigenpairs from exact diagonalization.

    ``eigenvectors`` holds full-space vectors as columns (length ``2**Q``).
    """

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    degeneracy_flags: np.ndarray
    residuals: np.ndarray
    basis: np.ndarray
    sector: Sector | None = None

    @property
    def ground_energy(self) -> float:
        return float(self.eigenvalues[0])

    @property
    def ground_state(self) -> Statevector:
        return Statevector(self.eigenvectors[:, 0], normalize=True)

    @property
    def ground_degenerate(self) -> bool:
        return bool(self.degeneracy_flags[0])

    @property
    def gap(self) -> float:
        return float(self.eigenvalues[1] - self.eigenvalues[0]) if len(self.eigenvalues) > 1 else np.inf

    def state(self, k: int) -> Statevector:
        return Statevector(self.eigenvectors[:, k], normalize=True)


def _degeneracy_flags(ev: np.ndarray, tol: float = DEGENERACY_TOL) -> np.ndarray:
    d = np.diff(ev) < tol
    flags = np.zeros(ev.shape, dtype=bool)
    flags[:-1] |= d
    flags[1:] |= d
    return flags


def exact_diagonalize(h: QubitHamiltonian | sp.spmatrix | np.ndarray, sector: Sector | None = None,
                      cap: int = DEFAULT_QUBIT_CAP, spin: str = SPIN_HALF) -> Spectrum:
    """Dense diagonalization of a Hamiltonian, optionally restricted to a sector.

    Eigenvalues are those of the operator as given, so a scaled Hamiltonian
    yields scaled eigenvalues.
    """
    if isinstance(h, QubitHamiltonian):
        nq = h.n_qubits
        if nq > cap:
            raise ValueError(f"exact diagonalization refused: {nq} qubits exceeds the cap of {cap}")
        mat = h.sparse()
    else:
        mat = sp.csr_matrix(h)
        nq = int(round(np.log2(mat.shape[0])))
        if nq > cap:
            raise ValueError(f"exact diagonalization refused: {nq} qubits exceeds the cap of {cap}")
    dim = 1 << nq
    basis = np.arange(dim) if sector is None else sector.basis(nq, spin)
    if basis.size == 0:
        raise ValueError("empty sector")
    block = mat[basis][:, basis].toarray()
    if not np.allclose(block, block.conj().T, atol=1e-12):
        raise ValueError("Hamiltonian block is not Hermitian")
    ev, vec = np.linalg.eigh(block)
    full = np.zeros((dim, len(ev)), dtype=complex)
    full[basis] = vec
    residuals = np.linalg.norm(block @ vec - vec * ev, axis=0)
    if np.any(residuals > RESIDUAL_TOL):
        raise ArithmeticError(f"eigen-residual {residuals.max():.2e} exceeds {RESIDUAL_TOL}")
    return Spectrum(ev, full, _degeneracy_flags(ev), residuals, basis, sector)


def ground_state(h: FermionHamiltonian, n_up: int, n_down: int | None = None) -> Spectrum:
    """Exact ground sector spectrum of a fermion Hamiltonian at fixed electron numbers.

    For spinless models ``n_up`` is the particle count and ``n_down`` is ignored.
    """
    qh = jordan_wigner(h)
    if h.spin == SPINLESS:
        return exact_diagonalize(qh, Sector(n_particles=n_up), spin=SPINLESS)
    return exact_diagonalize(qh, Sector(n_up=n_up, n_down=n_up if n_down is None else n_down))


def hubbard_dimer_energy(t: float, U: float) -> float:
    """Closed-form singlet ground energy of the symmetric two-site Hubbard model."""
    return 0.5 * (U - np.sqrt(U * U + 16.0 * t * t))


def _hop_action(amps: np.ndarray, p: int, q: int) -> np.ndarray:
    """``c+_p c_q |psi>`` evaluated with occupation-basis bit operations."""
    idx = np.arange(amps.shape[0])
    out = np.zeros_like(amps, dtype=complex)
    if p == q:
        occ = (idx >> q) & 1
        return amps * occ
    has_q = ((idx >> q) & 1).astype(bool)
    no_p = ~((idx >> p) & 1).astype(bool)
    ok = has_q & no_p
    src = idx[ok]
    mid = src ^ (1 << q)
    sign = (-1.0) ** (np.bitwise_count(src & ((1 << q) - 1)) + np.bitwise_count(mid & ((1 << p) - 1)))
    out[mid ^ (1 << p)] = sign * amps[src]
    return out


def one_body_density_matrix(psi: Statevector | np.ndarray, n_sites: int, spin: str = SPIN_HALF) -> np.ndarray:
    """``rho[s, i, j] = <psi| c+_(i,s) c_(j,s) |psi>``.

    Returns an array of shape ``(n_spin, n_sites, n_sites)``.
    """
    amps = psi.amplitudes if isinstance(psi, Statevector) else np.asarray(psi, dtype=complex)
    ns = 2 if spin == SPIN_HALF else 1
    rho = np.zeros((ns, n_sites, n_sites), dtype=complex)
    for s in range(ns):
        for i in range(n_sites):
            for j in range(n_sites):
                p, q = mode_index(i, s, ns), mode_index(j, s, ns)
                rho[s, i, j] = np.vdot(amps, _hop_action(amps, p, q))
    return rho


def site_density(psi: Statevector | np.ndarray, n_sites: int, spin: str = SPIN_HALF) -> np.ndarray:
    """Spin-summed site occupations."""
    rho = one_body_density_matrix(psi, n_sites, spin)
    return np.real(np.einsum("sii->i", rho))


def number_expectation(psi: Statevector, qubits: Sequence[int]) -> np.ndarray:
    """``<n_q>`` for each listed qubit."""
    p = psi.probabilities()
    idx = np.arange(psi.dim)
    return np.array([p[(idx >> q) & 1 == 1].sum() for q in qubits])


def pauli_expectation(psi: Statevector, pauli: PauliString) -> float:
    return float(np.real(np.vdot(psi.amplitudes, pauli.apply(psi.amplitudes))))


__all__ = [
    "FermionHamiltonian", "build_hubbard", "hopping_matrix", "jordan_wigner", "shift_and_scale",
    "Sector", "Spectrum", "exact_diagonalize", "ground_state", "hubbard_dimer_energy",
    "annihilation", "creation", "number_operator", "hopping_operator", "site_number_operator",
    "one_body_density_matrix", "site_density", "number_expectation", "pauli_expectation",
    "mode_index", "SPINLESS", "SPIN_HALF",
]
