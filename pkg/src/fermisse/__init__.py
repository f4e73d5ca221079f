"""Non-Markovian fermionic open-system dynamics toolkit."""

from .bath import (
    BathSpec,
    DiscreteModes,
    KernelTable,
    Lorentzian,
    MarkovKernel,
    TimeGrid,
    build_kernels,
    discretize_spectrum,
    fermi_occupation,
    lorentzian_density,
    markov_kernel,
)
from .coeffs import CoeffSolverError, CoeffTable, assemble_F, solve_f_vacuum, solve_u_double, solve_u_thermal
from .models import DoubleDotTwoBaths, ManyFermionVacuum, SingleDotThermal
from .propagator import (
    DensityMatrix,
    PositivityError,
    SystemOperators,
    Trajectory,
    build_system_ops,
    nonmarkov_witness,
    observables,
    run_master,
)

__version__ = "0.1.0"
