"""Reservoir construction: spectral densities, thermal factors, memory kernels.

Unit conventions used throughout the package:

* energies and frequencies in eV,
* times in hbar/eV (hbar = 1),
* temperatures in kelvin, with k_B = 8.617333262e-5 eV/K.

A continuum reservoir is represented by a Lorentzian coupling-weight
profile J(w) = Gamma*b^2 / ((1 - w/w0)^2 + b^2); discretizing it on a
quadrature grid produces modes with couplings t_k^2 = J(w_k) * w_k-weight.
A finite-temperature reservoir is split into two effective vacuum branches
with couplings g_k = sqrt(1 - nbar_k) t_k and f_k = sqrt(nbar_k) t_k, whose
two-time kernels are

    Kb(t, s) = sum_k g_k^2 exp(-i w_k (t - s))
    Kc(t, s) = sum_k f_k^2 exp(+i w_k (t - s))

Both kernels are stationary, so tables store a single lag array.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial.legendre import leggauss

K_B = 8.617333262e-5  # eV per kelvin

__all__ = [
    "K_B",
    "TimeGrid",
    "Lorentzian",
    "DiscreteModes",
    "BathSpec",
    "KernelTable",
    "MarkovKernel",
    "fermi_occupation",
    "lorentzian_density",
    "default_window",
    "discretize_spectrum",
    "build_kernels",
    "markov_kernel",
]


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid on [0, t_max] with n_steps intervals (n_steps + 1 nodes)."""

    t_max: float
    n_steps: int

    def __post_init__(self):
        if not self.t_max > 0:
            raise ValueError(f"t_max must be positive, got {self.t_max}")
        if self.n_steps < 2:
            raise ValueError(f"n_steps must be >= 2, got {self.n_steps}")

    @property
    def dt(self) -> float:
        return self.t_max / self.n_steps

    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.t_max, self.n_steps + 1)

    def halved(self) -> "TimeGrid":
        """Grid with twice the step (used for step-doubling diagnostics)."""
        if self.n_steps % 2:
            raise ValueError("step doubling requires an even n_steps")
        return TimeGrid(self.t_max, self.n_steps // 2)


@dataclass(frozen=True)
class Lorentzian:
    """Lorentzian coupling-weight profile: gamma * b^2 / ((1 - w/w0)^2 + b^2)."""

    gamma: float
    b: float
    omega0: float

    def __post_init__(self):
        if not (self.gamma > 0 and self.b > 0 and self.omega0 > 0):
            raise ValueError(
                "Lorentzian requires gamma > 0, b > 0, omega0 > 0, got "
                f"gamma={self.gamma}, b={self.b}, omega0={self.omega0}"
            )


@dataclass(frozen=True, eq=False)
class DiscreteModes:
    """Explicit reservoir modes (w_k, t_k) with real non-negative couplings."""

    omegas: np.ndarray
    couplings: np.ndarray

    def __post_init__(self):
        omegas = np.asarray(self.omegas, dtype=float)
        couplings = np.asarray(self.couplings, dtype=float)
        object.__setattr__(self, "omegas", omegas)
        object.__setattr__(self, "couplings", couplings)
        if omegas.ndim != 1 or omegas.shape != couplings.shape:
            raise ValueError("omegas and couplings must be 1-d arrays of equal length")
        if omegas.size == 0:
            raise ValueError("mode list must not be empty")
        if np.any(np.diff(omegas) <= 0):
            raise ValueError("mode frequencies must be strictly ascending")
        if np.any(couplings < 0):
            raise ValueError("couplings t_k must be real and >= 0")

    def __len__(self) -> int:
        return self.omegas.size


SpectralDensity = Lorentzian | DiscreteModes


@dataclass(frozen=True, eq=False)
class BathSpec:
    """One reservoir: spectral density, temperature (K), chemical potential (eV).

    ``omega_grid`` optionally supplies explicit quadrature nodes and weights
    for continuum kernels; when absent, a Lorentzian density is discretized
    with ``n_quad`` Gauss-Legendre nodes on the default window.
    """

    density: SpectralDensity
    temperature: float
    mu: float
    omega_grid: tuple[np.ndarray, np.ndarray] | None = None
    n_quad: int = 400

    def __post_init__(self):
        if self.temperature < 0:
            raise ValueError(f"temperature must be >= 0 K, got {self.temperature}")

    def modes(self) -> DiscreteModes:
        """Discrete modes realizing this bath (pass-through for DiscreteModes)."""
        if isinstance(self.density, DiscreteModes):
            return self.density
        if self.omega_grid is not None:
            nodes, weights = self.omega_grid
            nodes = np.asarray(nodes, dtype=float)
            weights = np.asarray(weights, dtype=float)
            vals = lorentzian_density(nodes, self.density)
            return DiscreteModes(nodes, np.sqrt(vals * weights))
        lo, hi = default_window(self.density)
        return discretize_spectrum(self.density, lo, hi, self.n_quad)

    def occupations(self, modes: DiscreteModes | None = None) -> np.ndarray:
        modes = self.modes() if modes is None else modes
        return fermi_occupation(modes.omegas, self.temperature, self.mu)


def fermi_occupation(omega, T: float, mu: float):
    """Mean occupation 1/(1 + exp((w - mu)/k_B T)); sharp step at T = 0.

    At T = 0 the convention is 1 below mu, 0 above, and 0.5 exactly at mu.
    """
    if T < 0:
        raise ValueError(f"temperature must be >= 0, got {T}")
    omega = np.asarray(omega, dtype=float)
    if T == 0:
        out = np.where(omega < mu, 1.0, np.where(omega > mu, 0.0, 0.5))
    else:
        x = (omega - mu) / (K_B * T)
        # expit-style stable evaluation on both tails
        out = np.where(
            x >= 0,
            np.exp(-np.clip(x, 0, 700)) / (1.0 + np.exp(-np.clip(x, 0, 700))),
            1.0 / (1.0 + np.exp(np.clip(x, -700, 0))),
        )
    return out if out.ndim else float(out)


def lorentzian_density(omega, density: SpectralDensity):
    """Evaluate the Lorentzian coupling weight at omega (eV)."""
    if not isinstance(density, Lorentzian):
        raise TypeError("lorentzian_density requires a Lorentzian spectral density")
    omega = np.asarray(omega, dtype=float)
    out = density.gamma * density.b**2 / ((1.0 - omega / density.omega0) ** 2 + density.b**2)
    return out if out.ndim else float(out)


def default_window(density: Lorentzian) -> tuple[float, float]:
    """Default discretization window [max(0, w0(1-8b)), w0(1+8b)]."""
    lo = max(0.0, density.omega0 * (1.0 - 8.0 * density.b))
    hi = density.omega0 * (1.0 + 8.0 * density.b)
    return lo, hi


def discretize_spectrum(
    density: SpectralDensity, omega_min: float, omega_max: float, K: int
) -> DiscreteModes:
    """Sample a continuum density into K Gauss-Legendre quadrature modes.

    The returned couplings satisfy t_k^2 = J(w_k) * w_k where w_k are the
    quadrature weights, so sum_k t_k^2 equals the quadrature approximation
    of the integral of J over the window.  A DiscreteModes input is returned
    unchanged.
    """
    if isinstance(density, DiscreteModes):
        return density
    if K < 1:
        raise ValueError(f"need K >= 1 quadrature modes, got {K}")
    if not omega_min < omega_max:
        raise ValueError(f"degenerate window [{omega_min}, {omega_max}]")
    x, w = leggauss(K)
    half = 0.5 * (omega_max - omega_min)
    nodes = 0.5 * (omega_max + omega_min) + half * x
    weights = half * w
    vals = lorentzian_density(nodes, density)
    return DiscreteModes(nodes, np.sqrt(vals * weights))


@dataclass(eq=False)
class KernelTable:
    """Discretized stationary two-time kernels on the triangular grid j <= i.

    Entries K(t_i, s_j) depend only on the lag i - j, so a single lag array
    per branch is stored; ``kb``/``kc`` reconstruct any (i, j) pair using
    conjugate symmetry for j > i.  ``g2``/``f2`` hold the squared branch
    couplings g_k^2 = (1 - nbar_k) t_k^2 and f_k^2 = nbar_k t_k^2.
    """

    grid: TimeGrid
    omegas: np.ndarray
    g2: np.ndarray
    f2: np.ndarray
    kappa_b: np.ndarray = field(repr=False)
    kappa_c: np.ndarray = field(repr=False)

    def kb(self, i, j):
        """K_b(t_i, s_j) for any node pair (conjugate symmetry for j > i)."""
        lag = np.asarray(i) - np.asarray(j)
        out = np.where(lag >= 0, self.kappa_b[np.abs(lag)], np.conj(self.kappa_b[np.abs(lag)]))
        return out if out.ndim else complex(out)

    def kc(self, i, j):
        lag = np.asarray(i) - np.asarray(j)
        out = np.where(lag >= 0, self.kappa_c[np.abs(lag)], np.conj(self.kappa_c[np.abs(lag)]))
        return out if out.ndim else complex(out)

    @property
    def vacuum(self) -> bool:
        """True when the thermal branch vanishes identically."""
        return bool(np.all(self.f2 == 0.0))

    def kb_row(self, i: int) -> np.ndarray:
        """K_b(t_i, s_j) for j = 0..i."""
        return self.kappa_b[i::-1]

    def kc_row(self, i: int) -> np.ndarray:
        return self.kappa_c[i::-1]

    def to_csv(self, path) -> None:
        """Write the triangular table as t, s, Re/Im of both branches."""
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("t,s,re_kb,im_kb,re_kc,im_kc\n")
            ts = self.grid.times()
            for i in range(self.grid.n_steps + 1):
                kb = self.kb_row(i)
                kc = self.kc_row(i)
                for j in range(i + 1):
                    fh.write(
                        f"{ts[i]:.11e},{ts[j]:.11e},{kb[j].real:.11e},{kb[j].imag:.11e},"
                        f"{kc[j].real:.11e},{kc[j].imag:.11e}\n"
                    )


@dataclass(frozen=True)
class MarkovKernel:
    """Delta-correlation marker K(t, s) = gamma * delta(t, s).

    Downstream solvers treat this marker exactly: the memory coefficient is
    the constant gamma/2 on the decay channel and zero elsewhere, so the
    Lindblad limit carries no time-step error.
    """

    gamma: float

    def __post_init__(self):
        if not self.gamma > 0:
            raise ValueError(f"markov kernel requires gamma > 0, got {self.gamma}")


def markov_kernel(gamma: float) -> MarkovKernel:
    return MarkovKernel(gamma)


def build_kernels(bath: BathSpec, grid: TimeGrid) -> KernelTable:
    """Fill the two-branch kernel table for a discrete or Lorentzian bath."""
    modes = bath.modes()
    nbar = bath.occupations(modes)
    t2 = modes.couplings**2
    g2 = (1.0 - nbar) * t2
    f2 = nbar * t2
    tau = grid.times()
    phases = np.exp(-1j * np.outer(tau, modes.omegas))
    kappa_b = phases @ g2
    kappa_c = np.conj(phases) @ f2
    return KernelTable(grid, modes.omegas.copy(), g2, f2, kappa_b, kappa_c)
