"""Desk-scale simulator for recycled-wavefunction training of lattice density functionals."""
from .counting import (EnergyCheck, ObservablePlan, QAEEstimate, estimate_density_matrix, ks_energy_expectation,
                       pauli_expectation_counting)
from .dft import (HubbardOracle, InversionResult, KSOrbitals, KSPotential, OracleFunctional, chi_s_response,
                  euler_lagrange_solve, exact_functional_oracle, fermi_weighted_density, gauge_fix, invert_to_ks,
                  solve_ks, xc_decomposition)
from .evolution import PhaseReadout, Schedule, qpe, rte_prepare, steps_to_fidelity, trotter_evolve
from .fermion import (FermionHamiltonian, Sector, Spectrum, build_hubbard, exact_diagonalize, ground_state,
                      jordan_wigner, shift_and_scale)
from .gradient import GradientJob, GradientResult, functional_gradient, quantum_gradient
from .ml import FunctionalRegressor, KohnShamInverter, MLModel, TrainingSample, forward, sgd_step, train
from .pauli import PauliString, PauliSum, QubitHamiltonian
from .rwmp import RWMPConfig, batch_dispatch, classical_user_solve, run_rwmp
from .statevector import RandomStream, Statevector, fidelity

__version__ = "0.1.0"

__all__ = [
    "EnergyCheck", "ObservablePlan", "QAEEstimate", "estimate_density_matrix", "ks_energy_expectation",
    "pauli_expectation_counting", "HubbardOracle", "InversionResult", "KSOrbitals", "KSPotential",
    "OracleFunctional", "chi_s_response", "euler_lagrange_solve", "exact_functional_oracle",
    "fermi_weighted_density", "gauge_fix", "invert_to_ks", "solve_ks", "xc_decomposition", "PhaseReadout",
    "Schedule", "qpe", "rte_prepare", "steps_to_fidelity", "trotter_evolve", "FermionHamiltonian", "Sector",
    "Spectrum", "build_hubbard", "exact_diagonalize", "ground_state", "jordan_wigner", "shift_and_scale",
    "GradientJob", "GradientResult", "functional_gradient", "quantum_gradient", "FunctionalRegressor",
    "KohnShamInverter", "MLModel", "TrainingSample", "forward", "sgd_step", "train", "PauliString", "PauliSum",
    "QubitHamiltonian", "RWMPConfig", "batch_dispatch", "classical_user_solve", "run_rwmp", "RandomStream",
    "Statevector", "fidelity", "__version__",
]
