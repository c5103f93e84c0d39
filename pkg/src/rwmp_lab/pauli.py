"""Pauli strings, Pauli sums and qubit Hamiltonians.

Letters are stored as a string with one character per qubit; character ``q``
acts on qubit ``q`` (little-endian, matching the amplitude ordering of
:mod:`rwmp_lab.statevector`).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np
import scipy.sparse as sp

_PRODUCT = {
    ("I", "I"): (1, "I"), ("I", "X"): (1, "X"), ("I", "Y"): (1, "Y"), ("I", "Z"): (1, "Z"),
    ("X", "I"): (1, "X"), ("X", "X"): (1, "I"), ("X", "Y"): (1j, "Z"), ("X", "Z"): (-1j, "Y"),
    ("Y", "I"): (1, "Y"), ("Y", "X"): (-1j, "Z"), ("Y", "Y"): (1, "I"), ("Y", "Z"): (1j, "X"),
    ("Z", "I"): (1, "Z"), ("Z", "X"): (1j, "Y"), ("Z", "Y"): (-1j, "X"), ("Z", "Z"): (1, "I"),
}

_CHOP = 1e-14


def _masks(letters: str) -> tuple[int, int, int]:
    xmask = zmask = ny = 0
    for q, c in enumerate(letters):
        if c in "XY":
            xmask |= 1 << q
        if c in "YZ":
            zmask |= 1 << q
        if c == "Y":
            ny += 1
        elif c not in "IXZ":
            raise ValueError(f"invalid Pauli letter {c!r}")
    return xmask, zmask, ny


def pauli_action(letters: str, amplitudes: np.ndarray) -> np.ndarray:
    """Return ``P @ amplitudes`` for a unit-coefficient Pauli string.

    Uses ``P|b> = i^{n_Y} (-1)^{|b & z|} |b ^ x>``.
    """
    xmask, zmask, ny = _masks(letters)
    idx = np.arange(amplitudes.shape[0])
    sign = 1 - 2 * (np.bitwise_count(idx & zmask).astype(np.int64) & 1)
    out = np.empty_like(amplitudes, dtype=complex)
    out[idx ^ xmask] = (1j ** ny) * sign * amplitudes
    return out


def pauli_sparse(letters: str) -> sp.csr_matrix:
    xmask, zmask, ny = _masks(letters)
    dim = 1 << len(letters)
    idx = np.arange(dim)
    sign = 1 - 2 * (np.bitwise_count(idx & zmask).astype(np.int64) & 1)
    data = (1j ** ny) * sign.astype(complex)
    return sp.csr_matrix((data, (idx ^ xmask, idx)), shape=(dim, dim))


@dataclass(frozen=True)
class PauliString:
    """A single weighted Pauli string ``coefficient * P``."""

    coefficient: complex
    letters: str

    def __post_init__(self):
        _masks(self.letters)

    @property
    def n_qubits(self) -> int:
        return len(self.letters)

    @property
    def is_identity(self) -> bool:
        return set(self.letters) <= {"I"}

    @property
    def support(self) -> tuple[int, ...]:
        return tuple(q for q, c in enumerate(self.letters) if c != "I")

    def unit(self) -> "PauliString":
        return PauliString(1.0, self.letters)

    def matrix(self) -> np.ndarray:
        return self.coefficient * pauli_sparse(self.letters).toarray()

    def apply(self, amplitudes: np.ndarray) -> np.ndarray:
        return self.coefficient * pauli_action(self.letters, amplitudes)

    def label(self) -> str:
        """Compact label such as ``X0 Z1 X2``."""
        parts = [f"{c}{q}" for q, c in enumerate(self.letters) if c != "I"]
        return " ".join(parts) if parts else "I"


class PauliSum:
    """Mutable-free sum of Pauli strings with like-term collection."""

    __slots__ = ("n_qubits", "terms")

    def __init__(self, n_qubits: int, terms: Mapping[str, complex] | None = None):
        self.n_qubits = int(n_qubits)
        self.terms: dict[str, complex] = {}
        for letters, c in (terms or {}).items():
            if len(letters) != self.n_qubits:
                raise ValueError("Pauli string length does not match qubit count")
            if abs(c) > _CHOP:
                self.terms[letters] = complex(c)

    @classmethod
    def identity(cls, n_qubits: int, coefficient: complex = 1.0) -> "PauliSum":
        return cls(n_qubits, {"I" * n_qubits: coefficient})

    @classmethod
    def single(cls, n_qubits: int, ops: Mapping[int, str], coefficient: complex = 1.0) -> "PauliSum":
        letters = ["I"] * n_qubits
        for q, c in ops.items():
            letters[q] = c
        return cls(n_qubits, {"".join(letters): coefficient})

    def __add__(self, other: "PauliSum") -> "PauliSum":
        self._check(other)
        out = dict(self.terms)
        for k, c in other.terms.items():
            out[k] = out.get(k, 0.0) + c
        return PauliSum(self.n_qubits, out)

    def __sub__(self, other: "PauliSum") -> "PauliSum":
        return self + other * -1.0

    def __mul__(self, other):
        if isinstance(other, PauliSum):
            self._check(other)
            out: dict[str, complex] = {}
            for a, ca in self.terms.items():
                for b, cb in other.terms.items():
                    phase, letters = _multiply(a, b)
                    out[letters] = out.get(letters, 0.0) + phase * ca * cb
            return PauliSum(self.n_qubits, out)
        return PauliSum(self.n_qubits, {k: c * other for k, c in self.terms.items()})

    __rmul__ = __mul__

    def dagger(self) -> "PauliSum":
        return PauliSum(self.n_qubits, {k: np.conj(c) for k, c in self.terms.items()})

    def is_hermitian(self, atol: float = 1e-12) -> bool:
        return all(abs(c.imag) <= atol for c in self.terms.values())

    def strings(self) -> list[PauliString]:
        return [PauliString(c, k) for k, c in sorted(self.terms.items())]

    def sparse(self) -> sp.csr_matrix:
        dim = 1 << self.n_qubits
        out = sp.csr_matrix((dim, dim), dtype=complex)
        for letters, c in self.terms.items():
            out = out + c * pauli_sparse(letters)
        return out

    def matrix(self) -> np.ndarray:
        return self.sparse().toarray()

    def _check(self, other: "PauliSum"):
        if other.n_qubits != self.n_qubits:
            raise ValueError("qubit count mismatch")

    def __repr__(self):
        return f"PauliSum(n_qubits={self.n_qubits}, n_terms={len(self.terms)})"


def _multiply(a: str, b: str) -> tuple[complex, str]:
    phase: complex = 1
    letters = []
    for x, y in zip(a, b):
        p, c = _PRODUCT[(x, y)]
        phase *= p
        letters.append(c)
    return phase, "".join(letters)


@dataclass(frozen=True)
class QubitHamiltonian:
    """``(sum(terms) + shift * I) / scale`` acting on ``n_qubits`` qubits.

    ``shift`` and ``scale`` stay at 0 and 1 until :func:`shift_and_scale`
    records them, so energies can be mapped back with :meth:`unscale`.
    """

    n_qubits: int
    terms: tuple[PauliString, ...]
    shift: float = 0.0
    scale: float = 1.0
    scaled: bool = False
    metadata: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        for term in self.terms:
            if term.n_qubits != self.n_qubits:
                raise ValueError("Pauli string length does not match qubit count")
        if not self.scale > 0:
            raise ValueError("scale must be positive")

    @classmethod
    def from_pauli_sum(cls, ps: PauliSum, **kwargs) -> "QubitHamiltonian":
        if not ps.is_hermitian():
            raise ValueError("Pauli sum is not Hermitian")
        terms = tuple(PauliString(c.real, k) for k, c in sorted(ps.terms.items()))
        return cls(ps.n_qubits, terms, **kwargs)

    def pauli_sum(self) -> PauliSum:
        return PauliSum(self.n_qubits, {t.letters: t.coefficient for t in self.terms})

    def effective_terms(self) -> list[tuple[float, str]]:
        """Real (coefficient, letters) pairs of the scaled operator, identity included."""
        out: dict[str, float] = {}
        ident = "I" * self.n_qubits
        for t in self.terms:
            out[t.letters] = out.get(t.letters, 0.0) + float(np.real(t.coefficient)) / self.scale
        if self.shift:
            out[ident] = out.get(ident, 0.0) + self.shift / self.scale
        return [(c, k) for k, c in sorted(out.items()) if abs(c) > _CHOP]

    def sparse(self) -> sp.csr_matrix:
        dim = 1 << self.n_qubits
        m = self.pauli_sum().sparse() if self.terms else sp.csr_matrix((dim, dim), dtype=complex)
        if self.shift:
            m = m + self.shift * sp.identity(dim, dtype=complex, format="csr")
        return (m / self.scale).tocsr()

    def matrix(self) -> np.ndarray:
        return self.sparse().toarray()

    def apply(self, amplitudes: np.ndarray) -> np.ndarray:
        out = np.zeros_like(amplitudes, dtype=complex)
        for c, letters in self.effective_terms():
            out += c * pauli_action(letters, amplitudes)
        return out

    def unscale(self, value):
        """Map an eigenvalue of the scaled operator back to physical energy units."""
        return np.asarray(value) * self.scale - self.shift

    def coefficient_norm(self) -> float:
        """Sum of |coefficients| over non-identity terms (Gershgorin radius)."""
        return float(sum(abs(t.coefficient) for t in self.terms if not t.is_identity))

    def identity_coefficient(self) -> float:
        return float(sum(np.real(t.coefficient) for t in self.terms if t.is_identity))

    def with_terms(self, terms: Iterable[PauliString]) -> "QubitHamiltonian":
        return QubitHamiltonian(self.n_qubits, tuple(terms), self.shift, self.scale, self.scaled)

    def __add__(self, other: "QubitHamiltonian") -> "QubitHamiltonian":
        if self.scaled or other.scaled:
            raise ValueError("add Hamiltonians before shifting and scaling")
        return QubitHamiltonian.from_pauli_sum(self.pauli_sum() + other.pauli_sum())

    def __mul__(self, factor: float) -> "QubitHamiltonian":
        if self.scaled:
            raise ValueError("multiply Hamiltonians before shifting and scaling")
        return QubitHamiltonian.from_pauli_sum(self.pauli_sum() * float(factor))

    __rmul__ = __mul__
