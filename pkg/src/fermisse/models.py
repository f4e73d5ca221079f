"""Model definitions for the three dot-reservoir scenarios."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bath import BathSpec

__all__ = ["ManyFermionVacuum", "SingleDotThermal", "DoubleDotTwoBaths", "ModelSpec"]


@dataclass(frozen=True, eq=False)
class ManyFermionVacuum:
    """N system modes with frequencies Omega_j, collectively coupled (L = sum_j d_j)
    to one vacuum reservoir."""

    omegas: tuple[float, ...]
    bath: BathSpec

    def __post_init__(self):
        omegas = tuple(float(w) for w in self.omegas)
        object.__setattr__(self, "omegas", omegas)
        if len(omegas) == 0:
            raise ValueError("need at least one system mode")
        if not all(np.isfinite(omegas)):
            raise ValueError("system frequencies must be finite")

    @property
    def n_sys(self) -> int:
        return len(self.omegas)


@dataclass(frozen=True, eq=False)
class SingleDotThermal:
    """One dot at frequency omega0 coupled to a finite-temperature reservoir."""

    omega0: float
    bath: BathSpec

    def __post_init__(self):
        if not np.isfinite(self.omega0):
            raise ValueError("omega0 must be finite")

    @property
    def n_sys(self) -> int:
        return 1


@dataclass(frozen=True, eq=False)
class DoubleDotTwoBaths:
    """Two tunnel-coupled dots, each attached to its own reservoir.

    The inter-dot coupling g may be complex (g d1^dag d2 + g* d2^dag d1).
    """

    omega1: float
    omega2: float
    g: complex
    bath1: BathSpec
    bath2: BathSpec

    def __post_init__(self):
        if not (np.isfinite(self.omega1) and np.isfinite(self.omega2)):
            raise ValueError("dot frequencies must be finite")
        object.__setattr__(self, "g", complex(self.g))

    @property
    def n_sys(self) -> int:
        return 2


ModelSpec = ManyFermionVacuum | SingleDotThermal | DoubleDotTwoBaths
