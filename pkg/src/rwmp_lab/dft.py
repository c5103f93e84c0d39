"""Lattice density-functional toolkit: Kohn-Sham solves and inversion, exact functional, response.

Potentials are site vectors. The gauge convention is sum-zero: any constant
shift of a potential is removed by :func:`gauge_fix` before potentials are
compared or returned. Densities are spin-summed site occupations unless
stated otherwise.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable, Protocol, Sequence

import numpy as np
from scipy import optimize

from .fermion import Sector, build_hubbard, hopping_matrix, jordan_wigner, mode_index, one_body_density_matrix

DEGENERACY_TOL = 1e-9


class DegeneracyError(ValueError):
    """Raised when an occupied and an empty level coincide at the Fermi level."""


def gauge_fix(v: Sequence[float]) -> np.ndarray:
    """Remove the mean (sum-zero convention)."""
    v = np.asarray(v, dtype=float)
    return v - v.mean(axis=-1, keepdims=True)


def sum_zero_basis(n: int) -> np.ndarray:
    """Orthonormal columns spanning the sum-zero subspace of R^n."""
    q, _ = np.linalg.qr(np.eye(n)[:, :-1] - 1.0 / n)
    return q


def density_from_dm(rho: np.ndarray, spin_summed: bool = True) -> np.ndarray:
    """Site occupations ``n_i = rho_ii``.

    ``rho`` has shape ``(n_spin, N, N)`` or ``(N, N)``.
    """
    rho = np.asarray(rho)
    diag = np.real(np.einsum("...ii->...i", rho))
    if rho.ndim == 3 and spin_summed:
        return diag.sum(axis=0)
    return diag


@dataclass
class KSPotential:
    """Sum-zero coefficients ``kappa`` and the constant removed by gauge fixing."""

    kappa: np.ndarray
    shift: float = 0.0

    @classmethod
    def from_values(cls, v: Sequence[float]) -> "KSPotential":
        v = np.asarray(v, dtype=float)
        return cls(gauge_fix(v), float(v.mean()))

    @property
    def values(self) -> np.ndarray:
        return self.kappa + self.shift


@dataclass
class KSOrbitals:
    """Orthonormal orbitals as columns, ascending eigenvalues and occupations (0, 1 or 2)."""

    orbitals: np.ndarray
    eigenvalues: np.ndarray
    occupations: np.ndarray
    density: np.ndarray
    potential: np.ndarray
    hopping: np.ndarray

    @property
    def energy(self) -> float:
        """Sum of occupied eigenvalues, weighted by occupation."""
        return float(np.dot(self.occupations, self.eigenvalues))

    @property
    def kinetic_energy(self) -> float:
        """``T_s = sum eps - n . v_s``."""
        return self.energy - float(np.dot(self.density, self.potential))

    def density_matrix(self) -> np.ndarray:
        """Spin-summed one-body density matrix ``sum_j xi_j phi_j phi_j^*``."""
        return (self.orbitals * self.occupations) @ self.orbitals.conj().T


def aufbau_occupations(eigenvalues: np.ndarray, n_electrons: int, spin_degeneracy: int = 2) -> np.ndarray:
    """Fill levels from the bottom; raise on a degenerate Fermi level."""
    n = len(eigenvalues)
    if not 0 <= n_electrons <= spin_degeneracy * n:
        raise ValueError(f"{n_electrons} electrons do not fit in {n} orbitals")
    occ = np.zeros(n)
    left = n_electrons
    for j in range(n):
        occ[j] = min(spin_degeneracy, left)
        left -= occ[j]
    homo = int(np.max(np.nonzero(occ)[0])) if n_electrons else -1
    if 0 <= homo < n - 1:
        partial = occ[homo] < spin_degeneracy
        if (abs(eigenvalues[homo + 1] - eigenvalues[homo]) < DEGENERACY_TOL
                or (partial and homo > 0 and abs(eigenvalues[homo] - eigenvalues[homo - 1]) < DEGENERACY_TOL
                    and occ[homo - 1] < spin_degeneracy)):
            raise DegeneracyError("HOMO and LUMO are degenerate; integer aufbau filling is ambiguous")
    return occ


def solve_ks(v_s: Sequence[float], n_electrons: int, t: float = 1.0, hopping: np.ndarray | None = None,
             spin_degeneracy: int = 2) -> KSOrbitals:
    """Diagonalize ``hopping + diag(v_s)`` and fill the lowest levels.

    Parameters
    ----------
    v_s : sequence of float
        Site potential.
    n_electrons : int
        Total electron count.
    t : float
        Nearest-neighbour hopping, used when ``hopping`` is not supplied.
    spin_degeneracy : int
        2 for spin-half electrons sharing spatial orbitals, 1 for spinless.
    """
    v_s = np.asarray(v_s, dtype=float)
    hop = hopping_matrix(len(v_s), t) if hopping is None else np.asarray(hopping)
    h = hop + np.diag(v_s)
    eps, phi = np.linalg.eigh(h)
    occ = aufbau_occupations(eps, n_electrons, spin_degeneracy)
    dens = np.real(np.einsum("ij,j,ij->i", phi, occ, phi.conj()))
    return KSOrbitals(phi, eps, occ, dens, v_s, hop)


def ks_batch(V: np.ndarray, n_electrons: int, hop: np.ndarray,
             spin_degeneracy: int = 2) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized Kohn-Sham energies ``E_s`` and densities for rows of ``V``."""
    V = np.atleast_2d(V)
    H = hop[None] + V[:, :, None] * np.eye(V.shape[1])[None]
    eps, phi = np.linalg.eigh(H)
    occ = aufbau_occupations(eps[0], n_electrons, spin_degeneracy)
    es = eps @ occ
    dens = np.einsum("bij,j->bi", np.abs(phi) ** 2, occ)
    return es, dens


class HubbardOracle:
    """Exact-diagonalization oracle for a Hubbard chain at fixed electron numbers.

    Sector matrices of the kinetic-plus-interaction part and of each site
    number operator are built once, so ``E[v]`` and ``n[v]`` cost one small
    dense diagonalization.
    """

    def __init__(self, n_sites: int, t: float, U: float, n_electrons: int, n_up: int | None = None,
                 periodic: bool = False):
        if n_up is None:
            n_up = (n_electrons + 1) // 2
        n_down = n_electrons - n_up
        if n_up < 0 or n_down < 0 or n_up > n_sites or n_down > n_sites:
            raise ValueError("electron numbers do not fit the lattice")
        self.n_sites, self.t, self.U = n_sites, t, U
        self.n_electrons, self.n_up, self.n_down = n_electrons, n_up, n_down
        self.hopping = hopping_matrix(n_sites, t, periodic)
        h = build_hubbard(n_sites, t, U, periodic=periodic)
        qh = jordan_wigner(h)
        self.sector = Sector(n_up=n_up, n_down=n_down)
        self.n_qubits = qh.n_qubits
        self.basis = self.sector.basis(qh.n_qubits)
        self.H0 = qh.sparse()[self.basis][:, self.basis].toarray()
        occ = np.zeros((len(self.basis), n_sites))
        for i in range(n_sites):
            for s in range(2):
                occ[:, i] += (self.basis >> mode_index(i, s)) & 1
        self.occupation = occ
        self.evaluations = 0

    def _block(self, v: np.ndarray) -> np.ndarray:
        return self.H0 + np.diag(self.occupation @ v)

    def solve(self, v: Sequence[float]) -> tuple[float, np.ndarray, np.ndarray]:
        """Return ``(E, density, sector eigenvector)``; refuses a degenerate ground state."""
        v = np.asarray(v, dtype=float)
        if v.shape != (self.n_sites,):
            raise ValueError(f"potential must have length {self.n_sites}")
        self.evaluations += 1
        ev, vec = np.linalg.eigh(self._block(v))
        if len(ev) > 1 and ev[1] - ev[0] < DEGENERACY_TOL:
            raise DegeneracyError("interacting ground state is degenerate")
        c = vec[:, 0]
        return float(ev[0]), (np.abs(c) ** 2) @ self.occupation, c

    def energy(self, v) -> float:
        return self.solve(v)[0]

    def density(self, v) -> np.ndarray:
        return self.solve(v)[1]

    def state(self, v) -> np.ndarray:
        """Ground state as full ``2**Q`` amplitudes."""
        c = self.solve(v)[2]
        full = np.zeros(1 << self.n_qubits, dtype=complex)
        full[self.basis] = c
        return full

    def density_matrix(self, v) -> np.ndarray:
        """Per-spin one-body density matrix ``(2, N, N)`` of the ground state."""
        return one_body_density_matrix(self.state(v), self.n_sites)

    def kinetic_expectation(self, v) -> float:
        rho = self.density_matrix(v)
        return float(np.real(np.einsum("ij,sji->", self.hopping, rho)))

    def energies(self, V: np.ndarray) -> np.ndarray:
        return np.array([self.energy(v) for v in np.atleast_2d(V)])


def T_psi_objective(rho_psi: np.ndarray, v_s: np.ndarray, n_electrons: int, t: float = 1.0,
                    hopping: np.ndarray | None = None) -> np.ndarray:
    """``<Psi|T + V_s|Psi> - <Phi[v_s]|T + V_s|Phi[v_s]>`` for one or many ``v_s``.

    ``rho_psi`` is the (per-spin or spin-summed) one-body density matrix of
    the interacting state. ``v_s`` may be a batch of rows.
    """
    rho = np.asarray(rho_psi)
    if rho.ndim == 3:
        rho = rho.sum(axis=0)
    V = np.atleast_2d(np.asarray(v_s, dtype=float))
    hop = hopping_matrix(V.shape[1], t) if hopping is None else np.asarray(hopping)
    kin = float(np.real(np.trace(hop @ rho)))
    n_psi = np.real(np.diag(rho))
    es, _ = ks_batch(V, n_electrons, hop)
    out = kin + V @ n_psi - es
    return out if np.ndim(v_s) > 1 else float(out[0])


def ks_inversion_gradient(n_psi: np.ndarray, v_s: np.ndarray, n_electrons: int, t: float = 1.0,
                          hopping: np.ndarray | None = None) -> np.ndarray:
    """``n_Psi - n_Phi[v_s]`` projected to sum zero."""
    orb = solve_ks(v_s, n_electrons, t, hopping)
    return gauge_fix(np.asarray(n_psi, dtype=float) - orb.density)


@dataclass
class InversionResult:
    potential: KSPotential
    density: np.ndarray
    converged: bool
    iterations: int
    trace: list[tuple[int, float, float]] = field(default_factory=list)
    gradient_queries: int = 0

    @property
    def v_s(self) -> np.ndarray:
        return self.potential.kappa


def invert_to_ks(n_target: np.ndarray, n_electrons: int, v0: Sequence[float] | None = None, eta: float = 0.5,
                 tol: float = 1e-6, max_iters: int = 20000, t: float = 1.0, hopping: np.ndarray | None = None,
                 kinetic_psi: float = 0.0, gradient: Callable[[np.ndarray], np.ndarray] | None = None,
                 grow: float = 1.0) -> InversionResult:
    """Gradient descent on ``T_Psi[v_s]`` until ``max |n_Psi - n_Phi| <= tol``.

    Parameters
    ----------
    n_target : array
        Interacting density ``n_Psi`` (from the oracle or from counting).
    v0 : array, optional
        Starting potential; zero by default.
    eta : float
        Initial step; halved whenever the objective would increase.
    kinetic_psi : float
        ``<Psi|T|Psi>``. It only offsets the recorded objective.
    gradient : callable, optional
        Replaces the exact ``n_Psi - n_Phi`` gradient, e.g. by a quantum
        gradient of the objective.
    grow : float
        Factor applied to the step after an accepted move (1 keeps it fixed).

    Returns
    -------
    InversionResult
        Gauge-fixed potential, final KS density and a trace of
        ``(iteration, objective, max |gradient|)``.
    """
    n_target = np.asarray(n_target, dtype=float)
    N = len(n_target)
    if abs(n_target.sum() - n_electrons) > 1e-6:
        raise ValueError("target density does not integrate to the electron number")
    hop = hopping_matrix(N, t) if hopping is None else np.asarray(hopping)
    v = gauge_fix(np.zeros(N) if v0 is None else np.asarray(v0, dtype=float))

    def objective(vv):
        es, dens = ks_batch(vv, n_electrons, hop)
        return kinetic_psi + float(vv @ n_target) - float(es[0]), dens[0]

    obj, dens = objective(v)
    trace = []
    queries = 0
    for it in range(max_iters + 1):
        diff = gauge_fix(n_target - dens)
        err = float(np.max(np.abs(n_target - dens)))
        trace.append((it, obj, float(np.max(np.abs(diff)))))
        if err <= tol:
            return InversionResult(KSPotential.from_values(v), dens, True, it, trace, queries)
        if it == max_iters:
            break
        g = diff if gradient is None else gauge_fix(gradient(v))
        queries += gradient is not None
        step = eta
        while True:
            trial = v - step * g
            new_obj, new_dens = objective(trial)
            if new_obj <= obj:
                break
            step *= 0.5
            if step < 1e-14:
                warnings.warn("inversion step underflow", RuntimeWarning, stacklevel=2)
                return InversionResult(KSPotential.from_values(v), dens, False, it, trace, queries)
        eta = step * grow if grow > 1 else step
        v, obj, dens = trial, new_obj, new_dens
    return InversionResult(KSPotential.from_values(v), dens, False, max_iters, trace, queries)


def hartree_kernel_onsite(U: float, n_sites: int) -> np.ndarray:
    """On-site kernel ``(U/2) I``: ``U[n] = (U/4) sum n_i**2`` and ``v_H = U n / 2``."""
    return 0.5 * U * np.eye(n_sites)


def hartree_potential(n: Sequence[float], kernel: np.ndarray) -> np.ndarray:
    """``v_H,i = sum_j K_ij n_j``."""
    return np.asarray(kernel) @ np.asarray(n, dtype=float)


def hartree_energy(n: Sequence[float], kernel: np.ndarray) -> float:
    """``U[n] = n K n / 2``."""
    n = np.asarray(n, dtype=float)
    return 0.5 * float(n @ np.asarray(kernel) @ n)


@dataclass
class FunctionalValue:
    value: float
    potential: np.ndarray
    iterations: int


def exact_functional_oracle(n_target: Sequence[float], oracle: HubbardOracle, v0: Sequence[float] | None = None,
                            gtol: float = 1e-11) -> FunctionalValue:
    """``F[n] = max_v { E[v] - n . v }`` by quasi-Newton ascent on the sum-zero subspace.

    The ascent direction is ``n[v] - n`` (the oracle density). Returns the
    value and the maximizing potential, whose negative is ``dF/dn`` up to a
    constant.
    """
    n = np.asarray(n_target, dtype=float)
    N = oracle.n_sites
    if n.shape != (N,):
        raise ValueError(f"density must have length {N}")
    if abs(n.sum() - oracle.n_electrons) > 1e-8:
        raise ValueError("density does not integrate to the electron number")
    n_max = min(2, oracle.n_electrons)
    if np.any(n <= 1e-6) or np.any(n >= n_max - 1e-6):
        raise ValueError("boundary density: F[n] is only evaluated for strictly interior densities")
    B = sum_zero_basis(N)
    y0 = np.zeros(N - 1) if v0 is None else B.T @ gauge_fix(v0)

    def neg(y):
        v = B @ y
        E, dens, _ = oracle.solve(v)
        return -(E - n @ v), -(B.T @ (dens - n))

    res = optimize.minimize(neg, y0, jac=True, method="BFGS", options={"gtol": gtol, "maxiter": 2000})
    v = B @ res.x
    return FunctionalValue(-float(res.fun), v, int(res.nit))


class Functional(Protocol):
    def value(self, n: np.ndarray) -> float: ...

    def gradient(self, n: np.ndarray) -> np.ndarray: ...


class OracleFunctional:
    """Exact ``F[n]`` with gradient ``-v*[n]``; warm-starts each ascent from the last maximizer."""

    def __init__(self, oracle: HubbardOracle):
        self.oracle = oracle
        self._v = None
        self.calls = 0

    def _eval(self, n):
        res = exact_functional_oracle(n, self.oracle, self._v)
        self._v = res.potential
        self.calls += 1
        return res

    def value(self, n):
        return self._eval(n).value

    def gradient(self, n):
        return -self._eval(n).potential

    def value_and_gradient(self, n):
        res = self._eval(n)
        return res.value, -res.potential


@dataclass
class ELResult:
    density: np.ndarray
    energy: float
    converged: bool
    diverged: bool
    iterations: int
    out_of_manifold: bool
    trace: list[tuple[int, float, float]] = field(default_factory=list)

    @property
    def trusted(self) -> bool:
        return self.converged and not self.out_of_manifold


def euler_lagrange_solve(F, v: Sequence[float], n_electrons: float, eta: float = 0.1, tol: float = 1e-7,
                         max_iters: int = 5000, n0: Sequence[float] | None = None, adaptive: bool = True,
                         in_manifold: Callable[[np.ndarray], bool] | None = None, n_max: float = 2.0,
                         patience: int = 5) -> ELResult:
    """Projected gradient descent of ``F[n] + n . v`` at fixed particle number.

    ``F`` needs ``value(n)`` and ``gradient(n)`` (or ``value_and_gradient``).
    Stationarity is ``dF/dn + v = mu``; convergence is declared when the
    sum-zero part of ``dF/dn + v`` drops below ``tol``.

    With ``adaptive`` the step is halved whenever the energy rises. Without
    it the step is fixed and ``patience`` consecutive rises, a non-finite
    value or a density leaving ``(0, n_max)`` halt the run as diverged.
    Densities outside ``in_manifold`` are flagged and warned about.
    """
    v = np.asarray(v, dtype=float)
    N = len(v)
    n = np.full(N, n_electrons / N) if n0 is None else np.asarray(n0, dtype=float).copy()
    if abs(n.sum() - n_electrons) > 1e-8:
        raise ValueError("starting density has the wrong electron number")

    def vg(x):
        if hasattr(F, "value_and_gradient"):
            val, g = F.value_and_gradient(x)
        else:
            val, g = F.value(x), F.gradient(x)
        return float(val) + float(x @ v), np.asarray(g, dtype=float) + v

    trace = []
    out_flag = False
    try:
        E, g = vg(n)
    except ValueError:
        return ELResult(n, np.nan, False, True, 0, out_flag, trace)
    rises = 0
    for it in range(max_iters):
        pg = gauge_fix(g)
        res = float(np.max(np.abs(pg)))
        trace.append((it, E, res))
        if in_manifold is not None and not in_manifold(n):
            out_flag = True
        if res <= tol:
            return _el_finish(n, E, True, False, it, out_flag, trace)
        step = eta
        while True:
            trial = n - step * pg
            bad = not np.all(np.isfinite(trial)) or np.any(trial <= 0) or np.any(trial >= n_max)
            if bad:
                if not adaptive:
                    return _el_finish(n, E, False, True, it, out_flag, trace)
                step *= 0.5
                continue
            try:
                E_new, g_new = vg(trial)
            except ValueError:
                if not adaptive:
                    return _el_finish(n, E, False, True, it, out_flag, trace)
                step *= 0.5
                continue
            if adaptive and E_new > E + 1e-14 and step > 1e-12:
                step *= 0.5
                continue
            break
        if not np.isfinite(E_new):
            return _el_finish(n, E, False, True, it, out_flag, trace)
        rises = rises + 1 if E_new > E else 0
        n, E, g = trial, E_new, g_new
        if rises >= patience:
            return _el_finish(n, E, False, True, it + 1, out_flag, trace)
    return _el_finish(n, E, False, False, max_iters, out_flag, trace)


def _el_finish(n, E, converged, diverged, it, out_flag, trace) -> ELResult:
    if out_flag:
        warnings.warn("density left the training manifold; the result is extrapolated", RuntimeWarning,
                      stacklevel=3)
    return ELResult(n, E, converged, diverged, it, out_flag, trace)


def ks_energy_reconstruction(sum_eps: float, n: Sequence[float], hartree: float, e_xc: float,
                             v_xc: Sequence[float]) -> float:
    """``E = sum eps - U[n] + E_xc - n . v_xc``."""
    n = np.asarray(n, dtype=float)
    v_xc = np.asarray(v_xc, dtype=float)
    if v_xc.shape != n.shape:
        raise ValueError("density and potential lengths differ")
    return float(sum_eps - hartree + e_xc - n @ v_xc)


@dataclass
class XCDecomposition:
    """Oracle-derived Kohn-Sham ingredients at one external potential."""

    energy: float
    density: np.ndarray
    v_s: np.ndarray
    v_h: np.ndarray
    v_xc: np.ndarray
    sum_eps: float
    t_s: float
    hartree: float
    F: float
    e_xc: float

    def reconstructed_energy(self) -> float:
        return ks_energy_reconstruction(self.sum_eps, self.density, self.hartree, self.e_xc, self.v_xc)


def xc_decomposition(oracle: HubbardOracle, v: Sequence[float], kernel: np.ndarray | None = None,
                     tol: float = 1e-8) -> XCDecomposition:
    """Split the exact functional into ``T_s + U + E_xc`` at the ground density of ``v``."""
    v = np.asarray(v, dtype=float)
    E, n, _ = oracle.solve(v)
    K = hartree_kernel_onsite(oracle.U, oracle.n_sites) if kernel is None else kernel
    inv = invert_to_ks(n, oracle.n_electrons, v0=v, tol=tol, t=oracle.t, hopping=oracle.hopping,
                       max_iters=200000, grow=1.5)
    v_s = inv.potential.kappa
    orb = solve_ks(v_s, oracle.n_electrons, hopping=oracle.hopping)
    sum_eps = orb.energy
    t_s = sum_eps - float(orb.density @ v_s)
    F = E - float(n @ v)
    u = hartree_energy(n, K)
    v_h = hartree_potential(n, K)
    return XCDecomposition(E, n, v_s, v_h, v_s - v_h - v, sum_eps, t_s, u, F, F - t_s - u)


@dataclass
class ResponseFunction:
    """``chi[i, j, w]`` on a frequency grid with broadening ``eta``."""

    chi: np.ndarray
    omega: np.ndarray
    eta: float
    poles: np.ndarray


def chi_s_response(orbitals: KSOrbitals, omega: Sequence[float], eta: float,
                   occupations: np.ndarray | None = None) -> ResponseFunction:
    """Lehmann sum ``sum_jk (xi_k - xi_j) phi_k*(r) phi_j(r) phi_j*(r') phi_k(r') / (w - (e_j - e_k) + i eta)``."""
    if not eta > 0:
        raise ValueError("broadening eta must be positive")
    phi = orbitals.orbitals
    eps = orbitals.eigenvalues
    xi = orbitals.occupations if occupations is None else np.asarray(occupations, dtype=float)
    w = np.asarray(omega, dtype=float)
    dxi = xi[None, :] - xi[:, None]                      # [j, k] = xi_k - xi_j
    gap = eps[:, None] - eps[None, :]                    # [j, k] = e_j - e_k
    denom = w[None, None, :] - gap[:, :, None] + 1j * eta
    amp = np.einsum("rk,rj,sj,sk->rsjk", phi.conj(), phi, phi.conj(), phi)
    chi = np.einsum("rsjk,jk,jkw->rsw", amp, dxi, 1.0 / denom)
    poles = np.unique(np.round(gap[np.abs(dxi) > 0], 12))
    return ResponseFunction(chi, w, eta, poles)


def fermi_weighted_density(orbitals: KSOrbitals, tau: float, n_electrons: float | None = None,
                           mu: float | None = None, spin_degeneracy: int = 2) -> tuple[np.ndarray, float]:
    """``n_i = g sum_j f((e_j - mu)/tau) |phi_ij|**2`` with ``mu`` fixed by the electron count.

    Returns ``(density, mu)``. At ``tau = 0`` the zero-temperature aufbau
    density is returned.
    """
    if tau < 0:
        raise ValueError("temperature must be non-negative")
    eps = orbitals.eigenvalues
    w2 = np.abs(orbitals.orbitals) ** 2
    g = spin_degeneracy
    if n_electrons is None:
        n_electrons = float(orbitals.occupations.sum())
    if not 0 <= n_electrons <= g * len(eps):
        raise ValueError(f"{n_electrons} electrons cannot be reached with {len(eps)} orbitals")
    if tau == 0:
        occ = aufbau_occupations(eps, int(round(n_electrons)), g)
        return w2 @ occ, float(eps[np.max(np.nonzero(occ)[0])]) if n_electrons else float(eps[0])

    def fermi(m):
        return 0.5 * (1.0 - np.tanh((eps - m) / (2 * tau)))

    if mu is None:
        if n_electrons in (0, g * len(eps)):
            raise ValueError("an empty or full band has no finite chemical potential")
        span = (eps.max() - eps.min()) + 50 * tau + 1.0
        mu = optimize.brentq(lambda m: g * fermi(m).sum() - n_electrons, eps.min() - span, eps.max() + span,
                             xtol=1e-14, rtol=1e-15)
    return g * (w2 @ fermi(mu)), float(mu)


__all__ = [
    "gauge_fix", "sum_zero_basis", "density_from_dm", "KSPotential", "KSOrbitals", "solve_ks", "ks_batch",
    "aufbau_occupations",
    "DegeneracyError", "HubbardOracle", "T_psi_objective", "ks_inversion_gradient", "invert_to_ks",
    "InversionResult", "hartree_kernel_onsite", "hartree_potential", "hartree_energy", "exact_functional_oracle",
    "OracleFunctional", "euler_lagrange_solve", "ELResult", "ks_energy_reconstruction", "xc_decomposition",
    "XCDecomposition", "chi_s_response", "ResponseFunction", "fermi_weighted_density",
]
