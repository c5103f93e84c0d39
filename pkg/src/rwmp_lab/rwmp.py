"""Recycled-wavefunction loop over a schedule of potentials.

For every system ``v_k`` the loop prepares the ground state by adiabatic
evolution (warm-started from the previous system's output state), reads the
energy by phase estimation, counts the one-body density matrix and/or inverts
to the Kohn-Sham potential, and collects training samples. Models are trained
on the collected samples after the sweep and exported as JSON.
"""
from __future__ import annotations

import csv
import io
import json
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Sequence

import numpy as np

from .counting import estimate_density_matrix
from .dft import (HubbardOracle, T_psi_objective, chi_s_response, density_from_dm, euler_lagrange_solve,
                  fermi_weighted_density, invert_to_ks, solve_ks, sum_zero_basis)
from .evolution import Schedule, qpe, rte_prepare, steps_to_fidelity
from .fermion import Sector, build_hubbard, ground_state, jordan_wigner, shift_and_scale
from .gradient import functional_gradient
from .ml import (FunctionalRegressor, MLModel, ModelFunctional, SIGNATURES, TrainingSample, backward, cost,
                 forward, load_model, samples_to_arrays, save_model)
from .statevector import RandomStream, Statevector, fidelity


class ConfigError(ValueError):
    """Invalid run configuration (the only fatal error class of the loop)."""


class StageError(RuntimeError):
    """A pipeline stage failed for one system; the system is skipped."""


@dataclass
class RWMPConfig:
    """Run configuration; loaded from and saved to JSON."""

    n_sites: int = 2
    t: float = 1.0
    U: float = 4.0
    n_electrons: int = 2
    n_up: int | None = None
    potentials: list = field(default_factory=list)
    sweep: dict | None = None
    dv_bound: float = 0.25
    ordering: str = "given"
    backend: str = "quantum"
    quantities: str = "rho"
    inversion: str = "exact"
    inversion_tol: float = 1e-6
    qga_bits: int = 10
    warm_start: bool = True
    rte_dt: float = 0.1
    rte_threshold: float = 0.99
    rte_order: int = 2
    rte_max_steps: int = 4096
    qpe_bits: int = 10
    qpe_repetitions: int = 9
    qae_rounds: int = 1000
    qae_eps: float = 0.01
    qae_mode: str = "collapse"
    train: list = field(default_factory=lambda: ["E[v]"])
    train_epochs: int = 20000
    seed: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        checks = [
            (self.n_sites >= 1, "n_sites must be positive"),
            (0 < self.n_electrons <= 2 * self.n_sites, "n_electrons does not fit the lattice"),
            (self.backend in ("oracle", "quantum"), f"unknown backend {self.backend!r}"),
            (self.quantities in ("rho", "vs", "both", "none"), f"unknown quantities {self.quantities!r}"),
            (self.inversion in ("exact", "qga"), f"unknown inversion {self.inversion!r}"),
            (self.ordering in ("given", "nearest"), f"unknown ordering {self.ordering!r}"),
            (self.qae_mode in ("collapse", "full"), f"unknown qae_mode {self.qae_mode!r}"),
            (self.rte_dt > 0 and self.dv_bound > 0, "rte_dt and dv_bound must be positive"),
            (self.qpe_bits >= 1 and self.qpe_repetitions % 2 == 1, "qpe_bits >= 1 and odd qpe_repetitions"),
            (self.qae_rounds >= 1 and 0 < self.qae_eps < 1, "qae_rounds >= 1 and 0 < qae_eps < 1"),
            (all(s in SIGNATURES for s in self.train), f"unknown training signature in {self.train}"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg)
        for v in self.potentials:
            if len(v) != self.n_sites:
                raise ConfigError(f"potential {v} does not have {self.n_sites} entries")

    @classmethod
    def from_dict(cls, d: dict) -> "RWMPConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, path) -> "RWMPConfig":
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc

    def to_dict(self) -> dict:
        return asdict(self)

    @property
    def spin_counts(self) -> tuple[int, int]:
        up = (self.n_electrons + 1) // 2 if self.n_up is None else self.n_up
        return up, self.n_electrons - up


def ramp_potential(n_sites: int, delta: float) -> np.ndarray:
    """Linear tilt of total drop ``delta``; for two sites ``(-delta/2, delta/2)``."""
    if n_sites == 1:
        return np.zeros(1)
    return delta * (np.arange(n_sites) / (n_sites - 1) - 0.5)


@dataclass
class PotentialSchedule:
    """Ordered potentials; consecutive increments are checked against ``bound``."""

    potentials: np.ndarray
    bound: float = np.inf

    def __post_init__(self):
        p = np.asarray(self.potentials, dtype=float)
        width = p.shape[1] if p.ndim == 2 else (0 if p.size == 0 else -1)
        self.potentials = p.reshape(len(p), width)

    @classmethod
    def from_config(cls, cfg: RWMPConfig) -> "PotentialSchedule":
        V = [np.asarray(v, dtype=float) for v in cfg.potentials]
        if cfg.sweep:
            s = cfg.sweep
            V += [ramp_potential(cfg.n_sites, d) for d in np.linspace(s["start"], s["stop"], int(s["points"]))]
        sched = cls(np.array(V).reshape(len(V), cfg.n_sites), cfg.dv_bound)
        return sched.nearest_neighbor() if cfg.ordering == "nearest" else sched

    def __len__(self) -> int:
        return len(self.potentials)

    @property
    def increments(self) -> np.ndarray:
        return np.diff(self.potentials, axis=0)

    def max_increment(self) -> float:
        return float(np.max(np.abs(self.increments))) if len(self) > 1 else 0.0

    def check(self) -> None:
        if self.max_increment() > self.bound:
            raise ConfigError(f"consecutive potential step {self.max_increment():.4g} exceeds dv_bound {self.bound}")

    def nearest_neighbor(self) -> "PotentialSchedule":
        """Greedy chain starting at the first potential."""
        if len(self) < 2:
            return self
        left = list(range(1, len(self)))
        order = [0]
        while left:
            d = [np.max(np.abs(self.potentials[j] - self.potentials[order[-1]])) for j in left]
            order.append(left.pop(int(np.argmin(d))))
        return PotentialSchedule(self.potentials[order], self.bound)


@dataclass
class PipelineState:
    state: Statevector | None = None
    v: np.ndarray | None = None
    energy: float | None = None
    models: dict = field(default_factory=dict)
    counters: dict = field(default_factory=lambda: {"rte_steps": 0, "qae_rounds": 0, "repairs": 0})
    checkpoint: int = -1


RECORD_COLUMNS = ["k", "status", "seed", "v", "E", "E_oracle", "n", "rho", "v_s", "rte_steps",
                  "initial_fidelity", "rte_fidelity", "qae_fidelity", "qae_repairs", "inversion_iterations",
                  "error"]


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    if isinstance(x, str):
        return x
    a = np.asarray(x)
    if np.iscomplexobj(a):
        a = np.concatenate([a.real.ravel(), a.imag.ravel()])
    return ";".join(repr(float(y)) for y in a.ravel())


@dataclass
class RunRecord:
    """One row per visited system."""

    k: int
    status: str = "ok"
    seed: int = 0
    v: np.ndarray | None = None
    E: float | None = None
    E_oracle: float | None = None
    n: np.ndarray | None = None
    rho: np.ndarray | None = None
    v_s: np.ndarray | None = None
    rte_steps: int | None = None
    initial_fidelity: float | None = None
    rte_fidelity: float | None = None
    qae_fidelity: float | None = None
    qae_repairs: int | None = None
    inversion_iterations: int | None = None
    error: str = ""

    def row(self) -> list[str]:
        return [_fmt(getattr(self, c)) for c in RECORD_COLUMNS]


def records_to_csv(records: Sequence[RunRecord]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(RECORD_COLUMNS)
    for r in records:
        w.writerow(r.row())
    return buf.getvalue()


@dataclass
class RWMPOutput:
    records: list[RunRecord]
    samples: list[TrainingSample]
    models: dict
    state: PipelineState
    files: list[Path] = field(default_factory=list)

    @property
    def total_rte_steps(self) -> int:
        return int(sum(r.rte_steps or 0 for r in self.records))


def _model_filename(signature: str) -> str:
    return "model_" + signature.replace("[", "_").replace("]", "").replace(",", "_") + ".json"


class _System:
    """Per-config cache of the pieces that do not depend on ``v``."""

    def __init__(self, cfg: RWMPConfig):
        self.cfg = cfg
        self.n_up, self.n_down = cfg.spin_counts
        self.sector = Sector(n_up=self.n_up, n_down=self.n_down)
        self.oracle = HubbardOracle(cfg.n_sites, cfg.t, cfg.U, cfg.n_electrons, self.n_up)
        self.h_int = jordan_wigner(build_hubbard(cfg.n_sites, 0.0, cfg.U))

    def hamiltonian(self, v):
        return jordan_wigner(build_hubbard(self.cfg.n_sites, self.cfg.t, self.cfg.U, v))

    def cold_start(self, v):
        """Noninteracting ground state at ``v`` and the ramp that switches ``U`` on."""
        h0f = build_hubbard(self.cfg.n_sites, self.cfg.t, 0.0, v)
        spec = ground_state(h0f, self.n_up, self.n_down)
        if spec.ground_degenerate:
            raise StageError("noninteracting starting state is degenerate")
        return spec.ground_state, jordan_wigner(h0f), self.h_int

    def potential_step(self, dv):
        return jordan_wigner(build_hubbard(self.cfg.n_sites, 0.0, 0.0, dv))

    def target(self, v) -> Statevector:
        return Statevector(self.oracle.state(v), normalize=True)


def _invert(cfg: RWMPConfig, n: np.ndarray, rho: np.ndarray | None, rng: RandomStream):
    if np.any(n <= 0) or np.any(n >= 2):
        raise StageError(f"density {n} outside the invertible range (0, 2)")
    tol = cfg.inversion_tol
    grad = None
    if cfg.inversion == "qga":
        rho_use = np.diag(n) if rho is None else rho
        # Only the sum-zero part of the gradient is used, so N - 1 test fields suffice.
        directions = sum_zero_basis(len(n)).T

        def quantum_grad(v):
            return functional_gradient(lambda V: T_psi_objective(rho_use, V, cfg.n_electrons, cfg.t), v,
                                       directions, rng=rng, quantum=True, n_bits=cfg.qga_bits)

        grad = quantum_grad

        tol = max(tol, 4 * 2.0 ** -cfg.qga_bits)
    res = invert_to_ks(n, cfg.n_electrons, tol=tol, t=cfg.t, gradient=grad, max_iters=5000)
    if not res.converged:
        raise StageError(f"Kohn-Sham inversion did not reach tol {tol}")
    return res


def process_system(cfg: RWMPConfig, k: int, v, pstate: PipelineState | None = None,
                   system: _System | None = None) -> tuple[RunRecord, TrainingSample | None]:
    """Run all stages for one potential, updating ``pstate`` in place.

    Stage errors are caught and recorded; the returned sample is ``None`` then.
    """
    system = _System(cfg) if system is None else system
    pstate = PipelineState() if pstate is None else pstate
    v = np.asarray(v, dtype=float)
    rng = RandomStream(cfg.seed).spawn(k)
    rec = RunRecord(k=k, seed=rng.seed, v=v)
    try:
        E_or, n_or, _ = system.oracle.solve(v)
        rec.E_oracle = E_or
        if cfg.backend == "oracle":
            rec.E, rec.n = E_or, n_or
            rho = system.oracle.density_matrix(v)
            rec.rho = rho.real
            source = "oracle"
        else:
            target = system.target(v)
            warm = cfg.warm_start and pstate.state is not None
            if warm:
                psi0 = pstate.state
                h0, h1 = system.hamiltonian(pstate.v), system.potential_step(v - pstate.v)
            else:
                psi0, h0, h1 = system.cold_start(v)
            rec.initial_fidelity = fidelity(psi0, target)
            steps = steps_to_fidelity(h0, h1, psi0, target, cfg.rte_dt, cfg.rte_threshold, cfg.rte_order,
                                      cfg.rte_max_steps)
            if steps < 0:
                raise StageError(f"adiabatic preparation needs more than {cfg.rte_max_steps} steps")
            prep = rte_prepare(h0, h1, Schedule.linear(steps * cfg.rte_dt, steps, cfg.rte_order), psi0, target,
                               cfg.rte_threshold)
            rec.rte_steps, rec.rte_fidelity = steps, prep.fidelity
            pstate.counters["rte_steps"] += steps
            scaled = shift_and_scale(system.hamiltonian(v))
            readout = qpe(prep.state, scaled, cfg.qpe_bits, rng, cfg.qpe_repetitions)
            rec.E = readout.energy
            state = readout.state
            rho = None
            source = "qpe"
            if cfg.quantities in ("rho", "vs", "both"):
                before = state
                rho, state, est = estimate_density_matrix(state, cfg.n_sites, cfg.qae_rounds, cfg.qae_eps, rng,
                                                          mode=cfg.qae_mode, hamiltonian=scaled,
                                                          sector=system.sector)
                rec.qae_fidelity = fidelity(before, state)
                rec.qae_repairs = int(sum(e.repair_iterations for e in est.values()))
                pstate.counters["qae_rounds"] += int(sum(e.rounds for e in est.values()))
                pstate.counters["repairs"] += rec.qae_repairs
                n = density_from_dm(rho)
                rec.n = n + (cfg.n_electrons - n.sum()) / cfg.n_sites
                rec.rho = rho.real
                source = "qae"
            pstate.state, pstate.v, pstate.energy = state, v, rec.E
        if cfg.quantities in ("vs", "both") and rec.n is not None:
            res = _invert(cfg, rec.n, rec.rho, rng)
            rec.v_s, rec.inversion_iterations = res.v_s, res.iterations
        pstate.checkpoint = k
    except (StageError, ValueError, FloatingPointError, np.linalg.LinAlgError) as exc:
        rec.status = "skipped"
        rec.error = f"{type(exc).__name__}: {exc}"
        return rec, None
    sample = TrainingSample(v=v, n=rec.n, E=rec.E, v_s=rec.v_s, source=source)
    return rec, sample


def train_models(cfg: RWMPConfig, samples: Sequence[TrainingSample]) -> dict:
    """Fit one regressor per requested signature on the samples that carry its fields."""
    models = {}
    for sig in cfg.train:
        usable = [s for s in samples if s.has(sig)]
        if len(usable) < 2:
            warnings.warn(f"not enough samples to train {sig}", RuntimeWarning, stacklevel=2)
            continue
        X, Y, w = samples_to_arrays(usable, sig)
        reg = FunctionalRegressor(signature=sig, epochs=cfg.train_epochs, seed=cfg.seed)
        reg.fit(X, Y[:, 0] if Y.shape[1] == 1 else Y, sample_weight=w)
        models[sig] = reg
    return models


def _export_model(reg: FunctionalRegressor, cfg: RWMPConfig, path: Path) -> None:
    model = reg.to_model()
    up, down = cfg.spin_counts
    model.metadata.update({"n_electrons": cfg.n_electrons, "n_up": up, "n_down": down, "n_sites": cfg.n_sites,
                           "t": cfg.t, "U": cfg.U})
    save_model(model, path)


def run_rwmp(config: RWMPConfig | dict, out_dir=None) -> RWMPOutput:
    """Visit every scheduled system, then train and export models.

    Writes ``records.csv`` and one JSON file per trained model when
    ``out_dir`` is given. An empty schedule produces no output.
    """
    cfg = config if isinstance(config, RWMPConfig) else RWMPConfig.from_dict(config)
    sched = PotentialSchedule.from_config(cfg)
    if cfg.backend == "quantum" and cfg.warm_start:
        sched.check()
    pstate = PipelineState()
    out = RWMPOutput([], [], {}, pstate)
    if len(sched) == 0:
        return out
    system = _System(cfg)
    for k, v in enumerate(sched.potentials):
        rec, sample = process_system(cfg, k, v, pstate, system)
        out.records.append(rec)
        if sample is not None:
            out.samples.append(sample)
    out.models = train_models(cfg, out.samples) if cfg.train else {}
    pstate.models = out.models
    if out_dir is not None:
        d = Path(out_dir)
        d.mkdir(parents=True, exist_ok=True)
        p = d / "records.csv"
        p.write_text(records_to_csv(out.records))
        out.files.append(p)
        for sig, reg in out.models.items():
            mp = d / _model_filename(sig)
            _export_model(reg, cfg, mp)
            out.files.append(mp)
    return out


@dataclass
class SolveResult:
    density: np.ndarray
    energy: float | None
    v_s: np.ndarray | None
    trusted: bool
    converged: bool
    chi: object = None
    thermal_density: np.ndarray | None = None


def _load_models(models) -> dict:
    if isinstance(models, dict):
        items = models.items()
    else:
        items = [(None, m) for m in models]
    out = {}
    for sig, m in items:
        if not isinstance(m, MLModel):
            m = load_model(m)
        out[m.signature if sig is None else sig] = m
    return out


def _in_manifold(model: MLModel, x: np.ndarray) -> bool:
    md = model.metadata
    if "input_min" not in md:
        return True
    lo, hi = np.asarray(md["input_min"]), np.asarray(md["input_max"])
    return bool(np.all(x >= lo - 1e-9) and np.all(x <= hi + 1e-9))


def classical_user_solve(models, v, n_electrons: int, t: float = 1.0, omega=None, eta: float = 0.05,
                         tau: float | None = None) -> SolveResult:
    """Density and energy at a new potential from exported models.

    An ``F[n]``/``E[n]`` model is minimized by the Euler-Lagrange solver; a
    ``vs[v]`` model gives the density through a Kohn-Sham solve, which also
    provides ``chi_s`` (``omega``) and the thermal density (``tau``). An
    ``E[v]`` model supplies the energy directly when present.
    """
    ms = _load_models(models)
    if not ms:
        raise ValueError("no models given")
    for m in ms.values():
        ne = m.metadata.get("n_electrons")
        if ne is not None and int(ne) != int(n_electrons):
            raise ValueError(f"model trained for {ne} electrons, asked for {n_electrons}")
    v = np.asarray(v, dtype=float)
    trusted = True
    density = energy = v_s = None
    converged = True
    chi = thermal = None
    if "E[v]" in ms:
        trusted &= _in_manifold(ms["E[v]"], v)
        energy = float(forward(ms["E[v]"], v)[0])
    if "vs[v]" in ms:
        trusted &= _in_manifold(ms["vs[v]"], v)
        v_s = np.asarray(forward(ms["vs[v]"], v), dtype=float)
        orb = solve_ks(v_s, n_electrons, t)
        density = orb.density
        if omega is not None:
            chi = chi_s_response(orb, omega, eta)
        if tau is not None:
            thermal, _ = fermi_weighted_density(orb, tau, n_electrons)
    fkey = "F[n]" if "F[n]" in ms else ("E[n]" if "E[n]" in ms else None)
    if fkey is not None:
        F = ModelFunctional(ms[fkey])
        res = euler_lagrange_solve(F, v, n_electrons, in_manifold=F.in_manifold)
        density, converged = res.density, res.converged
        trusted &= res.trusted
        if energy is None:
            energy = res.energy
    if density is None and energy is None:
        raise ValueError("models provide neither a density nor an energy route")
    if not trusted:
        warnings.warn("potential or density outside the training manifold; result is untrusted",
                      RuntimeWarning, stacklevel=2)
    return SolveResult(density, energy, v_s, trusted, converged, chi, thermal)


@dataclass
class BatchResult:
    samples: list[tuple[int, TrainingSample]]
    records: list[RunRecord]
    failures: list[tuple[int, str]]
    gradient: list | None = None
    cost: float | None = None


def batch_dispatch(configs: Sequence[RWMPConfig], parallelism: int = 1, model: MLModel | None = None,
                   signature: str = "E[v]") -> BatchResult:
    """Run single-system jobs concurrently and merge their samples by index.

    Job ``i`` processes the first scheduled potential of ``configs[i]`` from a
    cold start with its own seed. With ``model`` the merged mini-batch
    gradient of the training cost is returned as well.
    """
    if parallelism < 1:
        raise ValueError("parallelism must be positive")

    def job(i: int):
        cfg = configs[i]
        sched = PotentialSchedule.from_config(cfg)
        if len(sched) == 0:
            raise StageError("empty schedule")
        return process_system(cfg, i, sched.potentials[0])

    results: dict[int, tuple] = {}
    failures = []
    with ThreadPoolExecutor(max_workers=parallelism) as pool:
        futures = {i: pool.submit(job, i) for i in range(len(configs))}
        for i in sorted(futures):
            try:
                results[i] = futures[i].result()
            except Exception as exc:  # noqa: BLE001 - worker failure is recorded, not raised
                failures.append((i, f"{type(exc).__name__}: {exc}"))
    records, samples = [], []
    for i in sorted(results):
        rec, sample = results[i]
        records.append(rec)
        if sample is None:
            failures.append((i, rec.error))
        else:
            samples.append((i, sample))
    failures.sort()
    out = BatchResult(samples, records, failures)
    if model is not None and samples:
        X, Y, w = samples_to_arrays([s for _, s in samples], signature)
        out.gradient = backward(model, X, Y, w)
        out.cost = cost(model, X, Y, w).value
    return out


__all__ = [
    "RWMPConfig", "ConfigError", "StageError", "PotentialSchedule", "PipelineState", "RunRecord", "RWMPOutput",
    "RECORD_COLUMNS", "records_to_csv", "ramp_potential", "process_system", "run_rwmp", "train_models",
    "classical_user_solve", "SolveResult", "batch_dispatch", "BatchResult",
]
