"""JSON and CSV readers and writers. Reals are written with ``repr`` so they round-trip exactly."""
from __future__ import annotations

import csv
import io
import json
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .fermion import SPIN_HALF, FermionHamiltonian, build_hubbard


def _reals(a) -> list:
    """Nested list of ``repr`` strings for a real array."""
    a = np.asarray(a, dtype=float)
    if a.ndim == 0:
        return repr(float(a))
    return [_reals(x) for x in a]


def _parse(a) -> np.ndarray:
    if isinstance(a, (str, int, float)):
        return np.array(float(a))
    return np.array([_parse(x) for x in a], dtype=float)


def hamiltonian_to_dict(h: FermionHamiltonian, U: float | None = None) -> dict:
    """Spec document for ``h``; the on-site ``U`` form is used when given."""
    t = np.real_if_close(h.t)
    if np.iscomplexobj(t):
        raise ValueError("complex hopping is not representable in the spec file")
    diag = np.diag(t).copy()
    doc = {"n_sites": h.n_sites, "t_matrix": _reals(t - np.diag(diag)), "v": _reals(diag), "spin": h.spin}
    if U is not None:
        doc["U"] = repr(float(U))
    else:
        doc["V_tensor"] = _reals(h.V)
    return doc


def hamiltonian_from_dict(doc: dict) -> FermionHamiltonian:
    """Build a Hamiltonian from keys ``n_sites``, ``t_matrix``, ``U`` or ``V_tensor``, ``v``, ``spin``."""
    if "n_sites" not in doc or "t_matrix" not in doc:
        raise ValueError("Hamiltonian spec needs n_sites and t_matrix")
    if ("U" in doc) == ("V_tensor" in doc):
        raise ValueError("Hamiltonian spec needs exactly one of U and V_tensor")
    n = int(doc["n_sites"])
    t = _parse(doc["t_matrix"])
    v = _parse(doc.get("v", [0.0] * n))
    spin = doc.get("spin", SPIN_HALF)
    if t.shape != (n, n) or v.shape != (n,):
        raise ValueError("t_matrix or v does not match n_sites")
    if "U" in doc:
        V = build_hubbard(n, 0.0, float(_parse(doc["U"])), spin=spin).V
    else:
        V = _parse(doc["V_tensor"])
    return FermionHamiltonian(n, t + np.diag(v), V, spin)


def load_hamiltonian(path) -> FermionHamiltonian:
    return hamiltonian_from_dict(json.loads(Path(path).read_text()))


def save_hamiltonian(h: FermionHamiltonian, path, U: float | None = None) -> None:
    Path(path).write_text(json.dumps(hamiltonian_to_dict(h, U), indent=1))


def save_vectors(path, **arrays) -> None:
    """Named real sequences (densities, potentials) as JSON."""
    Path(path).write_text(json.dumps({k: _reals(v) for k, v in arrays.items()}, indent=1))


def load_vectors(path) -> dict[str, np.ndarray]:
    return {k: _parse(v) for k, v in json.loads(Path(path).read_text()).items()}


def _cell(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    if x is None:
        return ""
    return str(x)


def csv_text(header: Sequence[str], rows: Iterable[Sequence]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_cell(x) for x in r])
    return buf.getvalue()


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence]) -> str:
    text = csv_text(header, rows)
    if path is not None:
        Path(path).write_text(text)
    return text


__all__ = ["hamiltonian_to_dict", "hamiltonian_from_dict", "load_hamiltonian", "save_hamiltonian", "save_vectors",
           "load_vectors", "csv_text", "write_csv"]
