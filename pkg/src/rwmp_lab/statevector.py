"""Dense statevector simulator.

Amplitudes are little-endian: bit ``q`` of the basis index is the state of
qubit ``q``. Gates return new :class:`Statevector` objects and never modify
their input.
"""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .pauli import PauliString, pauli_action

MAX_QUBITS = 24
_SQRT2_INV = 1.0 / np.sqrt(2.0)
_ZERO_BRANCH = 1e-15


class Statevector:
    """Normalized vector of ``2**n_qubits`` complex amplitudes."""

    __slots__ = ("amplitudes", "n_qubits")

    def __init__(self, amplitudes, normalize: bool = False):
        amps = np.array(amplitudes, dtype=complex).reshape(-1)
        n = int(round(np.log2(amps.shape[0]))) if amps.shape[0] else -1
        if n < 0 or (1 << n) != amps.shape[0]:
            raise ValueError("amplitude count must be a power of two")
        if n > MAX_QUBITS:
            raise ValueError(f"{n} qubits exceeds the simulator cap of {MAX_QUBITS}")
        norm = np.linalg.norm(amps)
        if normalize:
            if norm == 0:
                raise ValueError("cannot normalize the zero vector")
            amps = amps / norm
        elif abs(norm - 1.0) > 1e-8:
            raise ValueError(f"statevector is not normalized (norm={norm:.3e})")
        self.amplitudes = amps
        self.n_qubits = n

    @classmethod
    def zero(cls, n_qubits: int) -> "Statevector":
        return cls.basis(n_qubits, 0)

    @classmethod
    def basis(cls, n_qubits: int, index: int) -> "Statevector":
        amps = np.zeros(1 << n_qubits, dtype=complex)
        amps[index] = 1.0
        return cls(amps)

    @classmethod
    def random(cls, n_qubits: int, rng: "RandomStream | np.random.Generator") -> "Statevector":
        gen = rng.generator if isinstance(rng, RandomStream) else rng
        amps = gen.normal(size=1 << n_qubits) + 1j * gen.normal(size=1 << n_qubits)
        return cls(amps, normalize=True)

    @property
    def dim(self) -> int:
        return self.amplitudes.shape[0]

    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))

    def probabilities(self) -> np.ndarray:
        return np.abs(self.amplitudes) ** 2

    def copy(self) -> "Statevector":
        return Statevector(self.amplitudes.copy())

    def tensor(self, other: "Statevector") -> "Statevector":
        """``self`` on the low qubits, ``other`` on the high qubits."""
        return Statevector(np.kron(other.amplitudes, self.amplitudes))

    def expectation(self, op) -> complex:
        """``<psi|op|psi>`` for a dense/sparse matrix or anything with ``apply``."""
        if hasattr(op, "apply"):
            return complex(np.vdot(self.amplitudes, op.apply(self.amplitudes)))
        return complex(np.vdot(self.amplitudes, op @ self.amplitudes))

    def dump(self, path) -> None:
        """Write amplitudes as little-endian float64 (real, imag) pairs."""
        pairs = np.empty(2 * self.dim, dtype="<f8")
        pairs[0::2] = self.amplitudes.real
        pairs[1::2] = self.amplitudes.imag
        Path(path).write_bytes(pairs.tobytes())

    @classmethod
    def load(cls, path) -> "Statevector":
        pairs = np.frombuffer(Path(path).read_bytes(), dtype="<f8")
        return cls(pairs[0::2] + 1j * pairs[1::2])

    def __repr__(self):
        return f"Statevector(n_qubits={self.n_qubits})"


class RandomStream:
    """Seeded random source that counts draws.

    Identical seeds give identical measurement records.
    """

    def __init__(self, seed: int):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self.counter = 0
        self.generator = np.random.Generator(np.random.PCG64(self.seed))

    def uniform(self, size=None):
        self.counter += 1 if size is None else int(np.prod(size))
        return self.generator.random(size)

    def choice(self, probabilities: np.ndarray) -> int:
        p = np.asarray(probabilities, dtype=float)
        cdf = np.cumsum(p)
        u = self.uniform() * cdf[-1]
        return int(min(np.searchsorted(cdf, u, side="right"), len(p) - 1))

    def spawn(self, key: int) -> "RandomStream":
        """Independent child stream derived from ``(seed, key)``."""
        child = np.random.SeedSequence([self.seed, int(key)]).generate_state(2, dtype=np.uint32)
        return RandomStream(int(child[0]) << 32 | int(child[1]))


@dataclass
class RegisterLayout:
    """Named contiguous qubit ranges allocated from qubit 0 upward."""

    registers: dict[str, range] = field(default_factory=dict)

    @property
    def n_qubits(self) -> int:
        return sum(len(r) for r in self.registers.values())

    def add(self, name: str, size: int) -> range:
        if name in self.registers:
            raise ValueError(f"register {name!r} already allocated")
        if size < 1:
            raise ValueError("register size must be positive")
        start = self.n_qubits
        self.registers[name] = range(start, start + size)
        return self.registers[name]

    def __getitem__(self, name: str) -> range:
        return self.registers[name]

    def validate(self) -> None:
        seen: set[int] = set()
        for r in self.registers.values():
            if seen & set(r):
                raise ValueError("registers overlap")
            seen |= set(r)
        if seen != set(range(self.n_qubits)):
            raise ValueError("registers do not cover the allocated qubits")


@dataclass
class GateLog:
    """Counts of elementary gates applied by the routines that accept a log."""

    counts: Counter = field(default_factory=Counter)

    def add(self, name: str, n: int = 1) -> None:
        self.counts[name] += n

    @property
    def total(self) -> int:
        return sum(self.counts.values())


def _check_qubits(psi: Statevector, qubits: Iterable[int]) -> list[int]:
    qs = [int(q) for q in qubits]
    for q in qs:
        if not 0 <= q < psi.n_qubits:
            raise IndexError(f"qubit {q} out of range for {psi.n_qubits} qubits")
    if len(set(qs)) != len(qs):
        raise ValueError("repeated qubit index")
    return qs


def _hadamard_inplace(amps: np.ndarray, q: int, n: int) -> None:
    view = amps.reshape(1 << (n - q - 1), 2, 1 << q)
    a0 = view[:, 0, :].copy()
    a1 = view[:, 1, :]
    view[:, 0, :] = (a0 + a1) * _SQRT2_INV
    view[:, 1, :] = (a0 - a1) * _SQRT2_INV


def _pair_view(amps: np.ndarray, a: int, b: int, n: int) -> tuple[np.ndarray, bool]:
    hi, lo = max(a, b), min(a, b)
    view = amps.reshape(1 << (n - hi - 1), 2, 1 << (hi - lo - 1), 2, 1 << lo)
    return view, a == hi


def _cphase_inplace(amps: np.ndarray, a: int, b: int, n: int, phase: complex) -> None:
    view, _ = _pair_view(amps, a, b, n)
    view[:, 1, :, 1, :] *= phase


def _swap_inplace(amps: np.ndarray, a: int, b: int, n: int) -> None:
    view, _ = _pair_view(amps, a, b, n)
    tmp = view[:, 0, :, 1, :].copy()
    view[:, 0, :, 1, :] = view[:, 1, :, 0, :]
    view[:, 1, :, 0, :] = tmp


def apply_hadamard(psi: Statevector, qubits: Iterable[int], log: GateLog | None = None) -> Statevector:
    """Apply H to every qubit in ``qubits``."""
    qs = _check_qubits(psi, qubits)
    amps = psi.amplitudes.copy()
    for q in qs:
        _hadamard_inplace(amps, q, psi.n_qubits)
    if log is not None:
        log.add("h", len(qs))
    return Statevector(amps)


def apply_controlled_phase(psi: Statevector, control: int, target: int, ell: int,
                           log: GateLog | None = None) -> Statevector:
    """Multiply amplitudes with both qubits set by ``exp(i*pi/2**ell)``."""
    if control == target:
        raise ValueError("control and target must differ")
    if ell < 0:
        raise ValueError("ell must be non-negative")
    _check_qubits(psi, (control, target))
    amps = psi.amplitudes.copy()
    _cphase_inplace(amps, control, target, psi.n_qubits, np.exp(1j * np.pi / 2 ** ell))
    if log is not None:
        log.add("cphase")
    return Statevector(amps)


def apply_swap(psi: Statevector, a: int, b: int, log: GateLog | None = None) -> Statevector:
    _check_qubits(psi, (a, b))
    amps = psi.amplitudes.copy()
    if a != b:
        _swap_inplace(amps, a, b, psi.n_qubits)
    if log is not None:
        log.add("swap")
    return Statevector(amps)


def apply_pauli(psi: Statevector, pauli: PauliString) -> Statevector:
    if pauli.n_qubits != psi.n_qubits:
        raise ValueError("Pauli string length does not match the state")
    if abs(abs(pauli.coefficient) - 1.0) > 1e-12:
        raise ValueError("only unit-modulus Pauli strings are unitary")
    return Statevector(pauli.apply(psi.amplitudes))


def apply_pauli_exponential(psi: Statevector, pauli: PauliString, theta: float) -> Statevector:
    """Return ``exp(-i * theta * c * P) psi`` where ``c`` is the (real) coefficient of ``pauli``."""
    if pauli.n_qubits != psi.n_qubits:
        raise ValueError("Pauli string length does not match the state")
    c = complex(pauli.coefficient)
    if abs(c.imag) > 1e-12:
        raise ValueError("Pauli exponential needs a real coefficient")
    angle = theta * c.real
    amps = psi.amplitudes
    if pauli.is_identity:
        return Statevector(np.exp(-1j * angle) * amps)
    return Statevector(np.cos(angle) * amps - 1j * np.sin(angle) * pauli_action(pauli.letters, amps))


def _qft_inplace(amps: np.ndarray, qs: Sequence[int], n: int, inverse: bool, log: GateLog | None) -> None:
    # qs[0] is the least significant bit of the register integer.
    m = len(qs)
    sign = -1.0 if inverse else 1.0
    if not inverse:
        for j in range(m - 1, -1, -1):
            _hadamard_inplace(amps, qs[j], n)
            for k in range(j - 1, -1, -1):
                _cphase_inplace(amps, qs[k], qs[j], n, np.exp(sign * 1j * np.pi / 2 ** (j - k)))
        for j in range(m // 2):
            _swap_inplace(amps, qs[j], qs[m - 1 - j], n)
    else:
        for j in range(m // 2):
            _swap_inplace(amps, qs[j], qs[m - 1 - j], n)
        for j in range(m):
            for k in range(j):
                _cphase_inplace(amps, qs[k], qs[j], n, np.exp(sign * 1j * np.pi / 2 ** (j - k)))
            _hadamard_inplace(amps, qs[j], n)
    if log is not None:
        log.add("h", m)
        log.add("cphase", m * (m - 1) // 2)
        log.add("swap", m // 2)


def qft(psi: Statevector, qubits: Iterable[int], log: GateLog | None = None) -> Statevector:
    """Quantum Fourier transform on a register.

    Maps ``|x> -> 2**(-m/2) sum_y exp(2 pi i x y / 2**m) |y>`` where ``x`` and
    ``y`` are the register integers with ``qubits[0]`` least significant. Built
    from Hadamards, controlled phases and a final swap layer.
    """
    qs = _check_qubits(psi, qubits)
    if not qs:
        raise ValueError("empty register")
    amps = psi.amplitudes.copy()
    _qft_inplace(amps, qs, psi.n_qubits, False, log)
    return Statevector(amps)


def inverse_qft(psi: Statevector, qubits: Iterable[int], log: GateLog | None = None) -> Statevector:
    qs = _check_qubits(psi, qubits)
    if not qs:
        raise ValueError("empty register")
    amps = psi.amplitudes.copy()
    _qft_inplace(amps, qs, psi.n_qubits, True, log)
    return Statevector(amps)


def measure(psi: Statevector, qubit: int, rng: RandomStream) -> tuple[int, Statevector]:
    """Projective Z measurement of one qubit; returns (bit, collapsed state)."""
    (q,) = _check_qubits(psi, (qubit,))
    view = psi.amplitudes.reshape(1 << (psi.n_qubits - q - 1), 2, 1 << q)
    p1 = float(np.sum(np.abs(view[:, 1, :]) ** 2))
    p0 = max(0.0, 1.0 - p1)
    if p1 < _ZERO_BRANCH:
        bit = 0
    elif p0 < _ZERO_BRANCH:
        bit = 1
    else:
        bit = int(rng.uniform() < p1)
    out = np.zeros_like(view)
    out[:, bit, :] = view[:, bit, :] / np.sqrt(p1 if bit else p0)
    return bit, Statevector(out.reshape(-1), normalize=True)


def register_distribution(psi: Statevector, qubits: Sequence[int]) -> np.ndarray:
    """Marginal distribution of the integer held in ``qubits`` (qubits[0] least significant)."""
    qs = _check_qubits(psi, qubits)
    probs = psi.probabilities()
    idx = np.arange(psi.dim)
    value = np.zeros(psi.dim, dtype=np.int64)
    for k, q in enumerate(qs):
        value |= ((idx >> q) & 1) << k
    return np.bincount(value, weights=probs, minlength=1 << len(qs))


def measure_register(psi: Statevector, qubits: Sequence[int], rng: RandomStream) -> tuple[int, Statevector]:
    """Measure a whole register; returns (integer, collapsed state)."""
    qs = _check_qubits(psi, qubits)
    dist = register_distribution(psi, qs)
    dist = np.where(dist < _ZERO_BRANCH, 0.0, dist)
    k = rng.choice(dist)
    idx = np.arange(psi.dim)
    value = np.zeros(psi.dim, dtype=np.int64)
    for j, q in enumerate(qs):
        value |= ((idx >> q) & 1) << j
    amps = np.where(value == k, psi.amplitudes, 0.0)
    return k, Statevector(amps, normalize=True)


def fidelity(psi: Statevector, phi: Statevector) -> float:
    """``|<psi|phi>|**2``."""
    if psi.dim != phi.dim:
        raise ValueError("dimension mismatch")
    return float(min(1.0, abs(np.vdot(psi.amplitudes, phi.amplitudes)) ** 2))


apply_hadamard_all = apply_hadamard
