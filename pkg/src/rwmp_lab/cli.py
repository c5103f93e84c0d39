"""Command-line entry point ``rwmp-lab``."""
from __future__ import annotations

import argparse
import csv
import sys
import warnings
from pathlib import Path

import numpy as np

from .counting import density_matrix_plans, measure_plans
from .dft import HubbardOracle, chi_s_response, fermi_weighted_density, invert_to_ks, solve_ks
from .evolution import Schedule, qpe, rte_prepare, steps_to_fidelity
from .fermion import FermionHamiltonian, Sector, build_hubbard, exact_diagonalize, jordan_wigner, shift_and_scale
from .files import load_hamiltonian, load_vectors, save_hamiltonian, save_vectors, write_csv
from .ml import FunctionalRegressor, SIGNATURES, TrainingSample, samples_to_arrays
from .rwmp import ConfigError, RWMPConfig, _export_model, _model_filename, classical_user_solve, run_rwmp
from .statevector import RandomStream, fidelity


def _floats(text: str) -> np.ndarray:
    return np.array([float(x) for x in text.split(",") if x.strip()])


def _add_lattice(p: argparse.ArgumentParser) -> None:
    p.add_argument("--hamiltonian", type=Path, help="Hamiltonian spec JSON (overrides lattice flags)")
    p.add_argument("--n-sites", type=int, default=2)
    p.add_argument("--t", type=float, default=1.0)
    p.add_argument("--U", type=float, default=4.0)
    p.add_argument("--v", type=_floats, default=None, help="comma-separated site potential")
    p.add_argument("--n-electrons", type=int, default=2)


def _lattice(args):
    """Hamiltonian plus the pieces the subcommands need: ``(h, h_noninteracting, sector, v)``."""
    if args.hamiltonian is not None:
        h = load_hamiltonian(args.hamiltonian)
        v = np.real(np.diag(h.t)).copy()
        h0 = FermionHamiltonian(h.n_sites, h.t, np.zeros_like(h.V), h.spin)
    else:
        v = np.zeros(args.n_sites) if args.v is None else args.v
        h = build_hubbard(args.n_sites, args.t, args.U, v)
        h0 = build_hubbard(args.n_sites, args.t, 0.0, v)
    up = (args.n_electrons + 1) // 2
    return h, h0, Sector(n_up=up, n_down=args.n_electrons - up), v


def _emit(args, name: str, header, rows) -> None:
    path = None if args.out is None else Path(args.out) / name
    if path is not None:
        path.parent.mkdir(parents=True, exist_ok=True)
    sys.stdout.write(write_csv(path, header, rows))


def cmd_hamiltonian(args) -> int:
    h, _, sector, _ = _lattice(args)
    qh = jordan_wigner(h)
    spec = exact_diagonalize(qh, sector)
    if args.out is not None:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        save_hamiltonian(h, Path(args.out) / "hamiltonian.json", None if args.hamiltonian else args.U)
    rows = [(lab, c) for c, lab in qh.effective_terms()]
    rows.append(("ground_energy", spec.ground_energy))
    _emit(args, "pauli_terms.csv", ["label", "coefficient"], rows)
    return 0


def cmd_rte(args) -> int:
    h, h0, sector, v = _lattice(args)
    qh, q0 = jordan_wigner(h), jordan_wigner(h0)
    diff = jordan_wigner(FermionHamiltonian(h.n_sites, np.zeros_like(h.t), h.V, h.spin))
    target = exact_diagonalize(qh, sector).ground_state
    start = exact_diagonalize(q0, sector)
    if start.ground_degenerate:
        raise ValueError("noninteracting starting state is degenerate")
    steps = args.steps
    if steps is None:
        steps = steps_to_fidelity(q0, diff, start.ground_state, target, args.dt, args.threshold)
        if steps < 0:
            raise ValueError("fidelity threshold not reached within the step limit")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        res = rte_prepare(q0, diff, Schedule.linear(steps * args.dt, steps), start.ground_state, target,
                          args.threshold)
    energy = float(np.real(res.state.expectation(qh)))
    _emit(args, "rte.csv", ["seed", "t_bits", "phase", "energy", "fidelity", "steps"],
          [(args.seed, "", "", energy, res.fidelity, steps)])
    return 0


def cmd_qpe(args) -> int:
    h, _, sector, _ = _lattice(args)
    qh = jordan_wigner(h)
    spec = exact_diagonalize(qh, sector)
    scaled = shift_and_scale(qh)
    rng = RandomStream(args.seed)
    out = qpe(spec.ground_state, scaled, args.t_bits, rng, args.repetitions)
    _emit(args, "qpe.csv", ["seed", "t_bits", "phase", "energy", "fidelity"],
          [(args.seed, args.t_bits, out.phase, out.energy, fidelity(out.state, spec.ground_state))])
    return 0


def cmd_qae(args) -> int:
    h, _, sector, _ = _lattice(args)
    qh = jordan_wigner(h)
    spec = exact_diagonalize(qh, sector)
    scaled = shift_and_scale(qh)
    plans = density_matrix_plans(h.n_sites, rounds=args.rounds)
    _, estimates, _ = measure_plans(spec.ground_state, list(plans.values()), args.rounds, args.eps,
                                    RandomStream(args.seed), mode=args.mode, hamiltonian=scaled, sector=sector)
    rows = [(label, e.rounds, e.accepted, e.value, e.stderr, e.repair_iterations)
            for label, e in sorted(estimates.items())]
    _emit(args, "qae.csv", ["label", "rounds", "accepted", "value", "stderr", "repair_iterations"], rows)
    return 0


def cmd_invert_ks(args) -> int:
    if args.density is not None:
        n = args.density
    else:
        h, _, _, v = _lattice(args)
        if args.hamiltonian is not None:
            raise ValueError("invert-ks builds its oracle from lattice flags; pass --density with --hamiltonian")
        n = HubbardOracle(args.n_sites, args.t, args.U, args.n_electrons).density(v)
    v0 = None if args.v0 is None else args.v0
    res = invert_to_ks(n, args.n_electrons, v0=v0, tol=args.tol, t=args.t)
    if args.out is not None:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        save_vectors(Path(args.out) / "ks_potential.json", v_s=res.v_s, density=res.density, target=n)
    _emit(args, "inversion_trace.csv", ["iteration", "objective", "gradient_inf"], res.trace)
    return 0 if res.converged else 1


def _read_records(path: Path) -> list[TrainingSample]:
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            if row.get("status", "ok") != "ok":
                continue

            def vec(key):
                return _floats(row[key].replace(";", ",")) if row.get(key) else None

            out.append(TrainingSample(v=vec("v"), n=vec("n"), E=float(row["E"]) if row.get("E") else None,
                                      v_s=vec("v_s")))
    return out


def cmd_train(args) -> int:
    cfg = RWMPConfig.from_json(args.config) if args.config else RWMPConfig(n_electrons=args.n_electrons)
    samples = _read_records(args.data)
    usable = [s for s in samples if s.has(args.signature)]
    if len(usable) < 2:
        raise ValueError(f"{args.data} has fewer than two samples usable for {args.signature}")
    X, Y, w = samples_to_arrays(usable, args.signature)
    reg = FunctionalRegressor(signature=args.signature, epochs=args.epochs, seed=args.seed)
    reg.fit(X, Y[:, 0] if Y.shape[1] == 1 else Y, sample_weight=w)
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    _export_model(reg, cfg, out / _model_filename(args.signature))
    sys.stdout.write(write_csv(out / "learning_curve.csv", ["epoch", "cost", "eta"],
                               zip(reg.curve_.epochs, reg.curve_.cost, reg.curve_.eta)).splitlines()[-1] + "\n")
    return 0


def cmd_run_rwmp(args) -> int:
    if args.config is None:
        raise ConfigError("run-rwmp needs --config")
    cfg = RWMPConfig.from_json(args.config)
    if args.seed_given:
        cfg.seed = args.seed
    out = run_rwmp(cfg, args.out or ".")
    for p in out.files:
        print(p)
    return 0


def cmd_solve(args) -> int:
    res = classical_user_solve(args.model, args.v, args.n_electrons, args.t)
    rows = [("energy", "" if res.energy is None else res.energy), ("trusted", res.trusted),
            ("converged", res.converged)]
    rows += [(f"n_{i}", x) for i, x in enumerate(res.density if res.density is not None else [])]
    if res.v_s is not None:
        rows += [(f"v_s_{i}", x) for i, x in enumerate(res.v_s)]
    _emit(args, "solve.csv", ["quantity", "value"], rows)
    return 0


def _ks_potential(args) -> np.ndarray:
    if args.potential_file is not None:
        return load_vectors(args.potential_file)["v_s"]
    if args.v_s is None:
        raise ValueError("pass --v-s or --potential-file")
    return args.v_s


def cmd_respond(args) -> int:
    orb = solve_ks(_ks_potential(args), args.n_electrons, args.t)
    omega = np.linspace(args.omega_min, args.omega_max, args.points)
    r = chi_s_response(orb, omega, args.eta)
    N = r.chi.shape[0]
    rows = [(w, i, j, r.chi[i, j, k].real, r.chi[i, j, k].imag)
            for k, w in enumerate(omega) for i in range(N) for j in range(N)]
    _emit(args, "chi_s.csv", ["omega", "i", "j", "re", "im"], rows)
    return 0


def cmd_thermal_density(args) -> int:
    orb = solve_ks(_ks_potential(args), args.n_electrons, args.t)
    n, mu = fermi_weighted_density(orb, args.tau, args.n_electrons)
    rows = [("mu", mu)] + [(f"n_{i}", x) for i, x in enumerate(n)]
    _emit(args, "thermal_density.csv", ["quantity", "value"], rows)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rwmp-lab", description="Lattice DFT and quantum-algorithm simulator.")
    p.add_argument("--config", type=Path, help="run configuration JSON")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", type=Path, default=None, help="output directory")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("hamiltonian", help="write the spec file and Pauli terms")
    _add_lattice(s)
    s.set_defaults(func=cmd_hamiltonian)

    s = sub.add_parser("rte", help="adiabatic preparation from the noninteracting ground state")
    _add_lattice(s)
    s.add_argument("--dt", type=float, default=0.1)
    s.add_argument("--steps", type=int, default=None, help="fixed step count (default: fewest reaching threshold)")
    s.add_argument("--threshold", type=float, default=0.99)
    s.set_defaults(func=cmd_rte)

    s = sub.add_parser("qpe", help="phase estimation on the exact ground state")
    _add_lattice(s)
    s.add_argument("--t-bits", type=int, default=10)
    s.add_argument("--repetitions", type=int, default=9)
    s.set_defaults(func=cmd_qpe)

    s = sub.add_parser("qae", help="count the one-body density matrix strings")
    _add_lattice(s)
    s.add_argument("--rounds", type=int, default=1000)
    s.add_argument("--eps", type=float, default=0.01)
    s.add_argument("--mode", choices=["collapse", "full"], default="collapse")
    s.set_defaults(func=cmd_qae)

    s = sub.add_parser("invert-ks", help="Kohn-Sham potential of a density")
    _add_lattice(s)
    s.add_argument("--density", type=_floats, default=None)
    s.add_argument("--v0", type=_floats, default=None)
    s.add_argument("--tol", type=float, default=1e-6)
    s.set_defaults(func=cmd_invert_ks)

    s = sub.add_parser("train", help="train a model on records.csv")
    s.add_argument("--data", type=Path, required=True)
    s.add_argument("--signature", choices=sorted(SIGNATURES), default="E[v]")
    s.add_argument("--epochs", type=int, default=20000)
    s.add_argument("--n-electrons", type=int, default=2)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("run-rwmp", help="run the recycled-wavefunction loop from --config")
    s.set_defaults(func=cmd_run_rwmp)

    s = sub.add_parser("solve", help="density and energy from exported models")
    s.add_argument("--model", type=Path, nargs="+", required=True)
    s.add_argument("--v", type=_floats, required=True)
    s.add_argument("--n-electrons", type=int, default=2)
    s.add_argument("--t", type=float, default=1.0)
    s.set_defaults(func=cmd_solve)

    for name, func, help_ in (("respond", cmd_respond, "noninteracting response function"),
                              ("thermal-density", cmd_thermal_density, "Fermi-weighted density")):
        s = sub.add_parser(name, help=help_)
        s.add_argument("--v-s", type=_floats, default=None)
        s.add_argument("--potential-file", type=Path, default=None)
        s.add_argument("--n-electrons", type=int, default=2)
        s.add_argument("--t", type=float, default=1.0)
        if name == "respond":
            s.add_argument("--omega-min", type=float, default=-4.0)
            s.add_argument("--omega-max", type=float, default=4.0)
            s.add_argument("--points", type=int, default=81)
            s.add_argument("--eta", type=float, default=0.05)
        else:
            s.add_argument("--tau", type=float, required=True)
        s.set_defaults(func=func)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    args.seed_given = args.seed is not None
    if args.seed is None:
        args.seed = 0
    try:
        return int(args.func(args) or 0)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
