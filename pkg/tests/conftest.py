import numpy as np
import pytest

from rwmp_lab.dft import HubbardOracle
from rwmp_lab.fermion import Sector, build_hubbard, jordan_wigner


def dimer_energy(t, U):
    """Closed-form singlet ground energy of the symmetric Hubbard dimer."""
    return 0.5 * (U - np.sqrt(U * U + 16 * t * t))


@pytest.fixture(scope="session")
def dimer_oracle():
    return HubbardOracle(2, 1.0, 4.0, 2)


@pytest.fixture(scope="session")
def half_filled():
    return Sector(n_up=1, n_down=1)


@pytest.fixture(scope="session")
def dimer_qubit():
    return jordan_wigner(build_hubbard(2, 1.0, 4.0))
