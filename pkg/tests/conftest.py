import numpy as np
import pytest

from fermisse.bath import BathSpec, DiscreteModes, TimeGrid, build_kernels


@pytest.fixture
def single_mode_vacuum():
    """Single resonant bath mode at coupling g below a dot at Omega = 1."""
    g = 0.2
    modes = DiscreteModes(np.array([1.0]), np.array([g]))
    bath = BathSpec(modes, temperature=0.0, mu=-10.0)
    return g, modes, bath


@pytest.fixture
def three_mode_vacuum():
    modes = DiscreteModes(np.array([0.8, 1.05, 1.4]), np.array([0.25, 0.4, 0.3]))
    return modes, BathSpec(modes, temperature=0.0, mu=-10.0)


def two_level_amplitude(omega_sys, omega_bath, g, times):
    """Exact occupied-amplitude factor for one dot and one reservoir mode."""
    h = np.array([[omega_sys, g], [g, omega_bath]], dtype=complex)
    w, v = np.linalg.eigh(h)
    row = v[0, :]
    return np.array([np.sum(np.abs(row) ** 2 * np.exp(-1j * w * t)) for t in times])
