"""Reduced-density-matrix propagation under the time-local master equations.

System operators use the Jordan-Wigner convention with dot 1 on the first
tensor factor (d1 = sigma- x I, d2 = sigma_z x sigma-), so anticommutation
holds exactly and the basis ordering matches the exact-oracle partial
trace.  Heun stepping is used throughout; coefficient values between grid
nodes are obtained by linear interpolation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .bath import TimeGrid
from .coeffs import CoeffTable
from .models import DoubleDotTwoBaths, ManyFermionVacuum, ModelSpec, SingleDotThermal

__all__ = [
    "SystemOperators",
    "PositivityError",
    "DensityMatrix",
    "Trajectory",
    "build_system_ops",
    "step_master_vacuum",
    "step_master_thermal",
    "step_master_double",
    "run_master",
    "observables",
    "nonmarkov_witness",
]

_SIGMA_MINUS = np.array([[0.0, 1.0], [0.0, 0.0]], dtype=complex)
_SIGMA_Z = np.array([[1.0, 0.0], [0.0, -1.0]], dtype=complex)


class PositivityError(RuntimeError):
    """A propagated state left the positive cone beyond tolerance."""


@dataclass(frozen=True, eq=False)
class SystemOperators:
    """Annihilation matrices, system Hamiltonian and fermion parity."""

    d_ops: tuple[np.ndarray, ...]
    h_s: np.ndarray
    parity: np.ndarray

    @property
    def dim(self) -> int:
        return self.h_s.shape[0]


@dataclass(eq=False)
class DensityMatrix:
    matrix: np.ndarray
    t: float = 0.0

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]


def build_system_ops(model: ModelSpec) -> SystemOperators:
    """Matrix representation of the system for 1 or 2 modes."""
    if isinstance(model, SingleDotThermal):
        omegas: tuple[float, ...] = (model.omega0,)
        g = None
    elif isinstance(model, DoubleDotTwoBaths):
        omegas = (model.omega1, model.omega2)
        g = model.g
    elif isinstance(model, ManyFermionVacuum):
        omegas = model.omegas
        g = None
    else:
        raise TypeError(f"unsupported model {type(model).__name__}")
    n = len(omegas)
    if n == 1:
        d1 = _SIGMA_MINUS.copy()
        h = np.diag([0.0, omegas[0]]).astype(complex)
        parity = np.diag([1.0, -1.0]).astype(complex)
        return SystemOperators((d1,), h, parity)
    if n == 2:
        eye = np.eye(2, dtype=complex)
        d1 = np.kron(_SIGMA_MINUS, eye)
        d2 = np.kron(_SIGMA_Z, _SIGMA_MINUS)
        h = omegas[0] * (d1.conj().T @ d1) + omegas[1] * (d2.conj().T @ d2)
        if g is not None:
            h = h + g * (d1.conj().T @ d2) + np.conj(g) * (d2.conj().T @ d1)
        parity = np.kron(_SIGMA_Z, _SIGMA_Z)
        return SystemOperators((d1, d2), h, parity)
    raise ValueError(
        f"matrix backend supports at most 2 system modes, got {n} "
        "(coefficient solvers are not restricted)"
    )


def _check_finite(F) -> None:
    if not np.all(np.isfinite(np.atleast_1d(F))):
        raise ValueError("non-finite master-equation coefficient (diverging regime)")


def _rhs_vacuum(rho: np.ndarray, F: np.ndarray, ops: SystemOperators) -> np.ndarray:
    _check_finite(F)
    L_dag = sum(d.conj().T for d in ops.d_ops)
    mix = sum(f * d for f, d in zip(np.atleast_1d(F), ops.d_ops))
    x = mix @ rho
    comm = x @ L_dag - L_dag @ x
    out = -1j * (ops.h_s @ rho - rho @ ops.h_s) + comm + comm.conj().T
    return out


def _rhs_thermal(rho: np.ndarray, F1: complex, F2: complex, ops: SystemOperators) -> np.ndarray:
    _check_finite([F1, F2])
    d = ops.d_ops[0]
    ddag = d.conj().T
    x = F1 * (d @ rho) + F2 * (rho @ d)
    comm = x @ ddag - ddag @ x
    return -1j * (ops.h_s @ rho - rho @ ops.h_s) + comm + comm.conj().T


def _rhs_double(rho: np.ndarray, F: np.ndarray, ops: SystemOperators) -> np.ndarray:
    """F ordered as (F1^1..F4^1, F1^2..F4^2)."""
    _check_finite(F)
    d1, d2 = ops.d_ops
    out = -1j * (ops.h_s @ rho - rho @ ops.h_s)
    for j, dj in enumerate((d1, d2)):
        f1, f2, f3, f4 = F[4 * j : 4 * j + 4]
        x = (f1 * d1 + f2 * d2) @ rho + rho @ (f3 * d1 + f4 * d2)
        ddag = dj.conj().T
        comm = x @ ddag - ddag @ x
        out = out + comm + comm.conj().T
    return out


def _heun(rho: np.ndarray, rhs, f_now, f_next, dt: float) -> np.ndarray:
    k1 = rhs(rho, f_now)
    k2 = rhs(rho + dt * k1, f_next)
    return rho + 0.5 * dt * (k1 + k2)


def step_master_vacuum(rho: DensityMatrix, F_now, F_next, ops: SystemOperators, dt: float) -> DensityMatrix:
    new = _heun(rho.matrix, lambda r, f: _rhs_vacuum(r, f, ops), F_now, F_next, dt)
    return DensityMatrix(new, rho.t + dt)


def step_master_thermal(rho: DensityMatrix, F1_pair, F2_pair, ops: SystemOperators, dt: float) -> DensityMatrix:
    new = _heun(
        rho.matrix,
        lambda r, f: _rhs_thermal(r, f[0], f[1], ops),
        (F1_pair[0], F2_pair[0]),
        (F1_pair[1], F2_pair[1]),
        dt,
    )
    return DensityMatrix(new, rho.t + dt)


def step_master_double(rho: DensityMatrix, F_now, F_next, ops: SystemOperators, dt: float) -> DensityMatrix:
    new = _heun(rho.matrix, lambda r, f: _rhs_double(r, f, ops), F_now, F_next, dt)
    return DensityMatrix(new, rho.t + dt)


@dataclass(eq=False)
class Trajectory:
    """Propagated state history with its health monitors."""

    times: np.ndarray
    rhos: np.ndarray
    trace_err: np.ndarray
    herm_err: np.ndarray
    min_eig: np.ndarray
    meta: dict = field(default_factory=dict)

    def populations(self) -> np.ndarray:
        return np.real(np.einsum("tii->ti", self.rhos))

    def to_csv(self, path) -> None:
        dim = self.rhos.shape[1]
        with open(path, "w", encoding="utf-8") as fh:
            if dim == 2:
                fh.write("t,rho11,trace,min_eig\n")
                for i, t in enumerate(self.times):
                    fh.write(
                        f"{t:.11e},{self.rhos[i, 1, 1].real:.11e},"
                        f"{1.0 + self.trace_err[i]:.11e},{self.min_eig[i]:.11e}\n"
                    )
            else:
                # number-basis probabilities ordered p00, p10, p01, p11
                fh.write(
                    "t,p00,p10,p01,p11,coh01,coh02,coh03,coh12,coh13,coh23,trace,min_eig\n"
                )
                order = [0, 2, 1, 3]
                for i, t in enumerate(self.times):
                    pops = [self.rhos[i, k, k].real for k in order]
                    cohs = [
                        abs(self.rhos[i, a, b])
                        for a in range(4)
                        for b in range(a + 1, 4)
                    ]
                    cells = (
                        [f"{t:.11e}"]
                        + [f"{p:.11e}" for p in pops]
                        + [f"{c:.11e}" for c in cohs]
                        + [f"{1.0 + self.trace_err[i]:.11e}", f"{self.min_eig[i]:.11e}"]
                    )
                    fh.write(",".join(cells) + "\n")


def _coeff_arrays(table: CoeffTable) -> np.ndarray:
    if table.kind == "vacuum":
        labels = sorted(table.F, key=lambda s: int(s[1:]))
    elif table.kind == "thermal":
        labels = ["F1", "F2"]
    else:
        labels = list(table.f_labels())
    return np.stack([table.F[lb] for lb in labels])


def interpolate_coeffs(table: CoeffTable, t: float) -> np.ndarray:
    """Linear interpolation of every F column at time t."""
    arr = _coeff_arrays(table)
    ts = table.grid.times()
    x = np.clip(t, ts[0], ts[-1])
    i = min(int(x / table.grid.dt), table.grid.n_steps - 1)
    w = (x - ts[i]) / table.grid.dt
    return (1.0 - w) * arr[:, i] + w * arr[:, i + 1]


def run_master(
    model: ModelSpec,
    table: CoeffTable,
    rho0: np.ndarray,
    grid: TimeGrid | None = None,
    positivity_floor: float = -1e-8,
) -> Trajectory:
    """Heun propagation over the coefficient grid with health monitoring.

    Positivity violations beyond the floor abort with a diagnostic rather
    than being projected away: the exact equations cannot produce them, so
    they signal a solver misconfiguration.
    """
    grid = table.grid if grid is None else grid
    ops = build_system_ops(model)
    F = _coeff_arrays(table)
    if grid.n_steps != table.grid.n_steps:
        ts = grid.times()
        src = table.grid.times()
        F = np.stack(
            [
                np.interp(ts, src, row.real) + 1j * np.interp(ts, src, row.imag)
                for row in F
            ]
        )
    rho = np.asarray(rho0, dtype=complex).copy()
    if rho.shape != (ops.dim, ops.dim):
        raise ValueError(f"rho0 must be {ops.dim}x{ops.dim}")

    if table.kind == "vacuum":
        rhs = lambda r, f: _rhs_vacuum(r, f, ops)
    elif table.kind == "thermal":
        rhs = lambda r, f: _rhs_thermal(r, f[0], f[1], ops)
    else:
        rhs = lambda r, f: _rhs_double(r, f, ops)

    n = grid.n_steps
    dt = grid.dt
    times = grid.times()
    rhos = np.empty((n + 1, ops.dim, ops.dim), dtype=complex)
    trace_err = np.empty(n + 1)
    herm_err = np.empty(n + 1)
    min_eig = np.empty(n + 1)

    for i in range(n + 1):
        rhos[i] = rho
        trace_err[i] = float(np.real(np.trace(rho)) - 1.0) + float(abs(np.imag(np.trace(rho))))
        herm_err[i] = float(np.max(np.abs(rho - rho.conj().T)))
        eigs = np.linalg.eigvalsh(0.5 * (rho + rho.conj().T))
        min_eig[i] = float(eigs[0])
        if min_eig[i] < positivity_floor:
            raise PositivityError(
                f"min eigenvalue {min_eig[i]:.3e} below {positivity_floor:.1e} at "
                f"t={times[i]:.6g}; check coefficient solve and grid"
            )
        if i < n:
            rho = _heun(rho, rhs, F[:, i], F[:, i + 1], dt)

    return Trajectory(times, rhos, trace_err, herm_err, min_eig, meta={"kind": table.kind})


def observables(rho: DensityMatrix | np.ndarray) -> dict:
    """Populations, coherence magnitudes, trace and minimum eigenvalue."""
    mat = rho.matrix if isinstance(rho, DensityMatrix) else np.asarray(rho)
    dim = mat.shape[0]
    coher = {
        f"{a}{b}": float(abs(mat[a, b])) for a in range(dim) for b in range(a + 1, dim)
    }
    return {
        "populations": np.real(np.diag(mat)).copy(),
        "coherences": coher,
        "trace": complex(np.trace(mat)),
        "min_eigenvalue": float(np.linalg.eigvalsh(0.5 * (mat + mat.conj().T))[0]),
    }


def nonmarkov_witness(F_series: dict | np.ndarray) -> dict:
    """Sign-change count and negative-time fraction of Re F per coefficient."""
    if isinstance(F_series, dict):
        items = F_series.items()
    else:
        items = [("F1", np.asarray(F_series))]
    out = {}
    for label, series in items:
        re = np.real(np.asarray(series))
        signs = np.sign(re[np.abs(re) > 0])
        crossings = int(np.sum(signs[1:] * signs[:-1] < 0)) if signs.size > 1 else 0
        frac_neg = float(np.mean(re < 0)) if re.size else 0.0
        out[label] = {"zero_crossings": crossings, "fraction_negative": frac_neg}
    return out
