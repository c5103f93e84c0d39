"""Jordan-style quantum gradient estimation with a simulated phase-kickback oracle.

Each of the ``m`` coordinates gets a register of ``N + guard`` qubits. The
registers are put in uniform superposition, the oracle adds a fixed-point
copy of ``f`` to a Fourier-prepared kickback register (simulated as a phase),
and an inverse QFT per register leaves ``2**(N+guard) * df/dx_k / M`` in
register ``k``. The extra guard bits are measured and rounded away, which
makes the ``N``-bit readout land on the nearest grid value with high
probability.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .files import csv_text
from .statevector import MAX_QUBITS, RandomStream, Statevector, inverse_qft

Oracle = Callable[[np.ndarray], np.ndarray]


def evaluate_oracle(f: Oracle, points: np.ndarray) -> np.ndarray:
    """Evaluate ``f`` on rows of ``points``, vectorized when ``f`` supports it."""
    points = np.atleast_2d(points)
    try:
        out = np.asarray(f(points), dtype=float)
        if out.shape == (points.shape[0],):
            return out
    except Exception:
        pass
    return np.array([float(f(p)) for p in points])


@dataclass
class GradientJob:
    """Inputs of one gradient evaluation.

    Parameters
    ----------
    center : sequence of float
        Point ``c`` where the gradient is wanted.
    oracle : callable
        ``f`` mapping an ``(k, m)`` array of points to ``k`` values (a scalar
        function of one point is also accepted, at loop speed).
    n_bits : int
        Reported bits per component ``N``.
    n_phase : int
        Kickback register width ``N_p``.
    window : float, optional
        Side length ``L`` of the sampling box. Chosen from the probe if omitted.
    scale : float, optional
        Output range ``M``; components must satisfy ``|df| < M/2``.
    guard_bits : int
        Extra readout bits that are rounded away.
    keep_distribution : bool
        Store the full readout distribution on the result (for diagnostics).
    """

    center: Sequence[float]
    oracle: Oracle
    n_bits: int = 8
    n_phase: int = 16
    window: float | None = None
    scale: float | None = None
    guard_bits: int = 2
    probe_step: float = 1e-4
    max_phase_spread: float = 0.3
    keep_distribution: bool = False
    queries: int = 0
    probe_evaluations: int = 0

    def __post_init__(self):
        self.center = np.atleast_1d(np.asarray(self.center, dtype=float))
        if self.n_bits < 1 or self.n_phase < 1 or self.guard_bits < 0:
            raise ValueError("bit widths must be positive")
        if self.window is not None and not self.window > 0:
            raise ValueError("window must be positive")
        if self.scale is not None and not self.scale > 0:
            raise ValueError("scale must be positive")

    @property
    def dim(self) -> int:
        return self.center.shape[0]

    @property
    def register_bits(self) -> int:
        return self.n_bits + self.guard_bits


@dataclass
class GradientResult:
    """Decoded gradient; ``gradient[k] == integers[k] * scale / 2**n_bits``."""

    gradient: np.ndarray
    integers: np.ndarray
    raw_registers: np.ndarray
    scale: float
    window: float
    n_bits: int
    step: float
    saturated: np.ndarray
    phase_spread: float
    truncation_error: float
    readout_probability: float
    marginals: list[np.ndarray] = field(default_factory=list)
    queries: int = 1
    guard_bits: int = 0
    distribution: np.ndarray | None = None

    @property
    def modal_gradient(self) -> np.ndarray:
        """Gradient decoded from the most likely value of each register."""
        nb = self.n_bits + self.guard_bits
        raw = np.array([int(np.argmax(mk)) for mk in self.marginals])
        return _decode(raw, nb, self.n_bits)[0] * self.step

    @property
    def expected_gradient(self) -> np.ndarray:
        """Mean decoded gradient over the readout distribution of each register."""
        nb = self.n_bits + self.guard_bits
        values = _decode(np.arange(1 << nb), nb, self.n_bits)[0] * self.step
        return np.array([float(mk @ values) for mk in self.marginals])

    def to_csv(self) -> str:
        """One row per component: index, decoded gradient, quantization step, flags."""
        rows = [(k, float(g), self.step, "saturated" if sat else "")
                for k, (g, sat) in enumerate(zip(self.gradient, self.saturated))]
        return csv_text(["component", "gradient", "step", "flags"], rows)

    def probability_within(self, reference: Sequence[float], tol: float) -> float:
        """Probability that one readout decodes to within ``tol`` of ``reference`` in every component."""
        if self.distribution is None:
            raise ValueError("run the job with keep_distribution=True")
        nb = self.n_bits + self.guard_bits
        m = len(self.integers)
        idx = np.arange(len(self.distribution))
        ok = np.ones(len(idx), dtype=bool)
        for k in range(m):
            g = _decode((idx >> (k * nb)) & ((1 << nb) - 1), nb, self.n_bits)[0] * self.step
            ok &= np.abs(g - reference[k]) <= tol
        return float(self.distribution[ok].sum())


def probe(job: GradientJob) -> tuple[np.ndarray, np.ndarray]:
    """Central differences and second differences from ``2m + 1`` classical calls."""
    c = job.center
    m = job.dim
    h = job.probe_step * max(1.0, float(np.max(np.abs(c))))
    pts = np.vstack([c] + [c + s * h * e for e in np.eye(m) for s in (1.0, -1.0)])
    vals = evaluate_oracle(job.oracle, pts)
    job.probe_evaluations += len(pts)
    f0 = vals[0]
    fp, fm = vals[1::2], vals[2::2]
    return (fp - fm) / (2 * h), (fp - 2 * f0 + fm) / (h * h)


def _auto_parameters(job: GradientJob) -> tuple[float, float]:
    M, L = job.scale, job.window
    if M is None or L is None:
        g, curv = probe(job)
        if M is None:
            M = 4.0 * max(float(np.max(np.abs(g))), 1e-12)
        if L is None:
            cmax = float(np.max(np.abs(curv)))
            L = 1.0 if cmax == 0 else min(1.0, job.max_phase_spread * 4 * M / (np.pi * 2 ** job.register_bits * cmax))
    return M, L


def kickback_integers(values: np.ndarray, register_bits: int, n_phase: int, M: float, L: float) -> np.ndarray:
    """Fixed-point oracle output ``round(2**N' 2**Np f / (M L)) mod 2**Np``."""
    if not np.all(np.isfinite(values)):
        raise ValueError("oracle returned non-finite values")
    scaled = np.rint(values * (2.0 ** register_bits * 2.0 ** n_phase) / (M * L))
    return np.mod(scaled, 2.0 ** n_phase).astype(np.int64)


def simulated_kickback_oracle(amplitudes: np.ndarray, f_tilde: np.ndarray, n_phase: int) -> np.ndarray:
    """Multiply each branch by ``exp(2 pi i f_tilde / 2**Np)``.

    Equivalent to modular addition of ``f_tilde`` into a kickback register
    prepared as ``inverse_qft|1>``, which is left unchanged.
    """
    return amplitudes * np.exp(2j * np.pi * np.asarray(f_tilde) / 2.0 ** n_phase)


def explicit_adder_kickback(amplitudes: np.ndarray, f_tilde: np.ndarray, n_phase: int) -> np.ndarray:
    """Reference construction: modular adder acting on an explicit kickback register.

    Returns the joint amplitudes with the input register on the low qubits
    and the ``n_phase`` kickback qubits above it.
    """
    n_in = int(np.log2(len(amplitudes)))
    kick = inverse_qft(Statevector.basis(n_phase, 1), range(n_phase)).amplitudes
    dim_in, dim_p = 1 << n_in, 1 << n_phase
    U = np.zeros((dim_in * dim_p, dim_in * dim_p))
    for x in range(dim_in):
        for w in range(dim_p):
            U[((w + f_tilde[x]) % dim_p) * dim_in + x, w * dim_in + x] = 1.0
    return U @ np.kron(kick, amplitudes)


def _decode(raw: np.ndarray, register_bits: int, n_bits: int) -> tuple[np.ndarray, np.ndarray]:
    half = 1 << (register_bits - 1)
    signed = np.where(raw >= half, raw - (1 << register_bits), raw)
    ints = np.rint(signed / 2.0 ** (register_bits - n_bits)).astype(np.int64)
    limit = 1 << (n_bits - 1)
    saturated = (ints >= limit) | (ints < -limit)
    return np.clip(ints, -limit, limit - 1), saturated


def quantum_gradient(job: GradientJob, rng: RandomStream) -> GradientResult:
    """One-query gradient of ``job.oracle`` at ``job.center``.

    The oracle is evaluated classically on all ``2**(m N')`` grid points to
    simulate the single superposed query. ``job.queries`` is incremented by
    exactly one per call; probe evaluations are counted separately.
    """
    m = job.dim
    nb = job.register_bits
    n_sim = m * nb
    if n_sim > MAX_QUBITS:
        raise ValueError(f"{m} components x {nb} bits = {n_sim} qubits exceeds the cap of {MAX_QUBITS}")
    M, L = _auto_parameters(job)
    size = 1 << nb
    idx = np.arange(1 << n_sim)
    digits = np.stack([(idx >> (k * nb)) & (size - 1) for k in range(m)], axis=1)
    offsets = L * (digits - size / 2) / size
    values = evaluate_oracle(job.oracle, job.center + offsets)
    job.queries += 1
    f_tilde = kickback_integers(values, nb, job.n_phase, M, L)
    amps = np.full(1 << n_sim, 2.0 ** (-n_sim / 2), dtype=complex)
    amps = simulated_kickback_oracle(amps, f_tilde, job.n_phase)
    psi = Statevector(amps, normalize=True)
    for k in range(m):
        psi = inverse_qft(psi, range(k * nb, (k + 1) * nb))
    probs = psi.probabilities()
    outcome = rng.choice(probs)
    raw = np.array([(outcome >> (k * nb)) & (size - 1) for k in range(m)])
    ints, saturated = _decode(raw, nb, job.n_bits)
    # Slopes above M/2 alias in the modular register; flag them from the evaluated grid.
    saturated = saturated | (_axis_slopes(values, size, m, L) >= M / 2)
    marg = probs.reshape((size,) * m)
    marginals = [marg.sum(axis=tuple(a for a in range(m) if a != m - 1 - k)) for k in range(m)]
    readout_p = 1.0
    for k in range(m):
        same = _decode(np.arange(size), nb, job.n_bits)[0] == ints[k]
        readout_p *= float(marginals[k][same].sum())
    step = M / 2 ** job.n_bits
    quad = np.pi * 2 ** nb * L * _spread_curvature(values, size, m, L) / (4 * M)
    result = GradientResult(ints * step, ints, raw, M, L, job.n_bits, step, saturated, quad, step, readout_p,
                            marginals, 1, job.guard_bits, probs if job.keep_distribution else None)
    if np.any(saturated):
        result.truncation_error = np.inf
    return result


def _axis_slopes(values: np.ndarray, size: int, m: int, L: float) -> np.ndarray:
    """Largest finite-difference slope along each axis line through the box center, per register."""
    grid = values.reshape((size,) * m)
    out = np.zeros(m)
    for k in range(m):
        index = [size // 2] * m
        index[m - 1 - k] = slice(None)
        line = grid[tuple(index)]
        out[k] = np.max(np.abs(np.diff(line))) * size / L if size > 1 else 0.0
    return out


def _spread_curvature(values: np.ndarray, size: int, m: int, L: float) -> float:
    """Largest second derivative along the axis lines through the box center."""
    # C-order reshape puts register 0 on the last axis.
    grid = values.reshape((size,) * m)
    x = L * (np.arange(size) - size / 2) / size
    best = 0.0
    for axis in range(m):
        index = [size // 2] * m
        index[axis] = slice(None)
        line = grid[tuple(index)]
        if size >= 3:
            best = max(best, abs(2 * np.polyfit(x, line, 2)[0]))
    return best


def central_difference(f: Oracle, x: Sequence[float], h: float) -> np.ndarray:
    """Two-point central difference gradient, the classical reference."""
    x = np.asarray(x, dtype=float)
    pts = np.vstack([x + s * h * e for e in np.eye(len(x)) for s in (1.0, -1.0)])
    vals = evaluate_oracle(f, pts)
    return (vals[0::2] - vals[1::2]) / (2 * h)


def functional_gradient(F: Callable[[np.ndarray], float], g: Sequence[float], directions: np.ndarray | None = None,
                        eta: float = 1e-5, rng: RandomStream | None = None, quantum: bool = False,
                        **job_kwargs) -> np.ndarray:
    """Sampled functional derivative ``dF/dg_i`` from perturbations along test fields.

    ``directions`` rows are test fields ``Y_d`` (defaults to site indicators).
    The directional derivatives ``d/dx F[g + sum_d x_d Y_d]`` at ``x = 0`` are
    obtained by central differences with step ``eta`` or, with
    ``quantum=True``, by :func:`quantum_gradient` over the coordinates ``x``.
    The derivative on the grid solves ``Y^T grad = directional``.
    """
    g = np.asarray(g, dtype=float)
    D = np.eye(len(g)) if directions is None else np.atleast_2d(np.asarray(directions, dtype=float))
    if D.shape[1] != len(g):
        raise ValueError("test fields must match the sample length")

    def f(x):
        x = np.atleast_2d(x)
        pts = g + x @ D
        try:
            out = np.asarray(F(pts), dtype=float)
            if out.shape == (x.shape[0],):
                return out
        except Exception:
            pass
        return np.array([float(F(p)) for p in pts])

    if quantum:
        if rng is None:
            raise ValueError("quantum mode needs a RandomStream")
        res = quantum_gradient(GradientJob(np.zeros(D.shape[0]), f, **job_kwargs), rng)
        directional = res.gradient
    else:
        if not eta > 0 or np.any((g + eta * np.abs(D).max()) == g):
            raise ValueError(f"step eta={eta} underflows against the samples")
        directional = central_difference(f, np.zeros(D.shape[0]), eta)
    sol, *_ = np.linalg.lstsq(D, directional, rcond=None)
    return sol


def walsh_directions(n: int) -> np.ndarray:
    """Hadamard-transform test fields (rows of a Sylvester matrix, ``n`` a power of two)."""
    if n < 1 or n & (n - 1):
        raise ValueError("n must be a power of two")
    H = np.array([[1.0]])
    while H.shape[0] < n:
        H = np.block([[H, H], [H, -H]])
    return H


__all__ = [
    "GradientJob", "GradientResult", "quantum_gradient", "simulated_kickback_oracle", "explicit_adder_kickback",
    "kickback_integers", "central_difference", "functional_gradient", "walsh_directions", "probe",
    "evaluate_oracle",
]
