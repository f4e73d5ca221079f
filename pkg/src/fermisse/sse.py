"""Grassmann-valued stochastic wavefunction propagation and state recovery.

The trajectory is an element of the finite Grassmann algebra whose
coefficients are system vectors: psi = sum_m v_m (x) m with m a monomial in
the conjugate noise generators.  In this payload-commuting representation
the microscopic pairing of the total state with a reservoir coherent state
gives the evolution

    d/dt psi = -i H_S psi + xis_t . (P_S L psi) - L^dag (Qbar psi)

where xis_t = -i sum_k t_k e^{i w_k t} xis_k multiplies monomials from the
left and P_S is the system fermion parity, the explicit remnant of the
operator/noise anticommutation absorbed by the representation.  (The
memory term also carries the parity microscopically, but the functional
derivative of the trajectory carries a matching factor, so the composed
term is parity-free; the direct propagator below keeps both factors
explicit.)  The partner trajectory for the reconstruction formula carries
the negated noise; propagating it is exactly equivalent to flipping the
parity of the plus trajectory, and both routes are exposed.

Finite-temperature reservoirs are handled in the doubled vacuum picture:
two noise families with couplings g_k = sqrt(1-nbar) t_k at +w_k (coupling
operator d) and f_k = sqrt(nbar) t_k at -w_k (coupling operator -d^dag).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bath import DiscreteModes, TimeGrid
from .coeffs import CoeffTable
from .grassmann import GrassmannAlgebra, GrassmannElement, outer_product
from .models import ManyFermionVacuum, SingleDotThermal
from .propagator import DensityMatrix, SystemOperators, build_system_ops

__all__ = [
    "NoiseFamily",
    "QAnsatz",
    "Trajectory",
    "build_noise",
    "propagate_sse",
    "propagate_sse_direct",
    "reconstruct_rho",
    "verify_q_ansatz",
    "thermal_noise_families",
]

MAX_NOISE_MODES = 6


@dataclass(frozen=True, eq=False)
class NoiseFamily:
    """One reservoir branch: coupling operator, couplings and frequencies.

    ``mode_offset`` locates the family's generators inside the shared
    algebra; the generator order must match the Jordan-Wigner mode order of
    the exact oracle (system modes first, then families in offset order).
    """

    coupling_op: np.ndarray
    couplings: np.ndarray
    omegas: np.ndarray
    mode_offset: int = 0

    @property
    def n_modes(self) -> int:
        return len(self.couplings)


@dataclass(eq=False)
class QAnsatz:
    """Memory operator data: Qbar(t) = sum_j F_j(t) d_j with its f table."""

    table: CoeffTable

    def qbar_matrix(self, index: int, ops: SystemOperators) -> np.ndarray:
        out = np.zeros_like(ops.h_s)
        for j, d in enumerate(ops.d_ops):
            out = out + self.table.F[f"F{j + 1}"][index] * d
        return out


@dataclass(eq=False)
class Trajectory:
    algebra: GrassmannAlgebra
    psi: GrassmannElement
    t: float
    noise_sign: int = +1

    def norm_sq(self) -> float:
        total = 0.0
        for coeff in self.psi.terms.values():
            total += float(np.sum(np.abs(coeff) ** 2))
        return total


def build_noise(
    algebra: GrassmannAlgebra,
    modes: DiscreteModes | NoiseFamily,
    t: float,
    conjugate: bool = True,
    mode_offset: int = 0,
) -> GrassmannElement:
    """Noise element at time t: -i sum t_k e^{+i w_k t} xis_k (conjugate)
    or +i sum t_k e^{-i w_k t} xi_k."""
    if isinstance(modes, NoiseFamily):
        couplings, omegas, mode_offset = modes.couplings, modes.omegas, modes.mode_offset
    else:
        couplings, omegas = modes.couplings, modes.omegas
    out = algebra.zero()
    for k, (tk, wk) in enumerate(zip(couplings, omegas)):
        if conjugate:
            out = out + (-1j * tk * np.exp(1j * wk * t)) * algebra.xis(mode_offset + k)
        else:
            out = out + (1j * tk * np.exp(-1j * wk * t)) * algebra.xi(mode_offset + k)
    return out


def _initial_element(algebra: GrassmannAlgebra, psi_sys0: np.ndarray) -> GrassmannElement:
    return GrassmannElement(algebra, {0: np.asarray(psi_sys0, dtype=complex).copy()})


def _memory_matrix(fam: NoiseFamily, ops: SystemOperators, qbar: np.ndarray) -> np.ndarray:
    """Memory generator -L^dag Qbar as a single payload operator.

    The microscopic pairing dresses the mode derivative with the system
    parity and the derivative of the trajectory carries the same dressing
    (checked against the exact propagation for two-dot states), so the two
    parity factors cancel in the composed memory term.
    """
    return -(fam.coupling_op.conj().T @ qbar)


def _heun_element(psi, rhs_now, rhs_at, dt):
    k1 = rhs_now
    pred = psi + dt * k1
    k2 = rhs_at(pred)
    return psi + (0.5 * dt) * (k1 + k2)


def propagate_sse(
    model: ManyFermionVacuum,
    modes: DiscreteModes,
    grid: TimeGrid,
    q: QAnsatz,
    psi_sys0: np.ndarray | None = None,
    noise_sign: int = +1,
    snapshot_every: int | None = None,
) -> Trajectory | tuple[Trajectory, list[tuple[float, GrassmannElement]]]:
    """Propagate the vacuum-reservoir trajectory with the memory ansatz.

    The effective generator uses Qbar(t) = sum_j F_j(t) d_j from the
    coefficient table, which must live on the same grid and kernel.
    """
    if len(modes) > MAX_NOISE_MODES:
        raise ValueError(f"noise-mode count capped at {MAX_NOISE_MODES}")
    if q.table.grid.n_steps != grid.n_steps:
        raise ValueError("ansatz table and propagation grid differ")
    ops = build_system_ops(model)
    algebra = GrassmannAlgebra(len(modes))
    fam = NoiseFamily(_collective_op(ops), modes.couplings, modes.omegas)
    psi = _initial_element(algebra, _default_state(ops) if psi_sys0 is None else psi_sys0)
    ts = grid.times()
    dt = grid.dt
    snaps = []

    for i in range(grid.n_steps):
        mem_now = _memory_matrix(fam, ops, q.qbar_matrix(i, ops))
        mem_next = _memory_matrix(fam, ops, q.qbar_matrix(i + 1, ops))
        rhs_now = _rhs_single(psi, fam, ops, ts[i], mem_now, noise_sign)
        psi = _heun_element(
            psi,
            rhs_now,
            lambda p: _rhs_single(p, fam, ops, ts[i + 1], mem_next, noise_sign),
            dt,
        )
        if snapshot_every and (i + 1) % snapshot_every == 0:
            snaps.append((ts[i + 1], psi))
    traj = Trajectory(algebra, psi, ts[-1], noise_sign)
    if snapshot_every:
        return traj, snaps
    return traj


def _collective_op(ops: SystemOperators) -> np.ndarray:
    out = np.zeros_like(ops.h_s)
    for d in ops.d_ops:
        out = out + d
    return out


def _default_state(ops: SystemOperators) -> np.ndarray:
    psi = np.zeros(ops.dim, dtype=complex)
    psi[-1] = 1.0  # all system modes occupied
    return psi


def _rhs_single(
    psi: GrassmannElement,
    fam: NoiseFamily,
    ops: SystemOperators,
    t: float,
    memory_mat: np.ndarray,
    noise_sign: int,
) -> GrassmannElement:
    out = psi.apply(-1j * ops.h_s + memory_mat)
    noise = build_noise(psi.algebra, fam, t)
    out = out + (noise_sign * noise) * psi.apply(ops.parity @ fam.coupling_op)
    return out


def propagate_sse_direct(
    system_ops: SystemOperators,
    families: list[NoiseFamily],
    grid: TimeGrid,
    psi_sys0: np.ndarray,
    noise_sign: int = +1,
) -> Trajectory:
    """Exact mode-resolved propagation (no memory ansatz).

    The functional-derivative term is evaluated directly as generator
    derivatives of the trajectory element, which closes the equation in the
    finite algebra; this works for any quadratic model, including the
    doubled finite-temperature picture with two noise families.
    """
    n_total = sum(f.n_modes for f in families)
    if n_total > MAX_NOISE_MODES:
        raise ValueError(f"noise-mode count capped at {MAX_NOISE_MODES}")
    algebra = GrassmannAlgebra(n_total)
    psi = _initial_element(algebra, psi_sys0)
    ts = grid.times()
    dt = grid.dt

    def rhs(p: GrassmannElement, t: float) -> GrassmannElement:
        out = p.apply(-1j * system_ops.h_s)
        for fam in families:
            mat_noise = system_ops.parity @ fam.coupling_op
            mat_mem = fam.coupling_op.conj().T @ system_ops.parity
            noise = build_noise(algebra, fam, t)
            out = out + (noise_sign * noise) * p.apply(mat_noise)
            for k in range(fam.n_modes):
                c = -1j * fam.couplings[k] * np.exp(-1j * fam.omegas[k] * t)
                dpsi = p.left_derivative(algebra.xis_index(fam.mode_offset + k))
                if dpsi.terms:
                    out = out + (noise_sign * c) * dpsi.apply(mat_mem)
        return out

    for i in range(grid.n_steps):
        k1 = rhs(psi, ts[i])
        psi = _heun_element(psi, k1, lambda p: rhs(p, ts[i + 1]), dt)
    return Trajectory(algebra, psi, ts[-1], noise_sign)


def reconstruct_rho(traj_plus: Trajectory, traj_minus: Trajectory | None = None) -> DensityMatrix:
    """Noise average of |psi_+><psi_-|.

    When ``traj_minus`` is omitted the partner is obtained by the exact
    parity route (negating every odd monomial of the plus trajectory).
    """
    if traj_minus is None:
        minus_psi = traj_plus.psi.parity_flip()
    else:
        if traj_minus.t != traj_plus.t:
            raise ValueError("trajectories must be compared at equal times")
        if traj_minus.noise_sign == traj_plus.noise_sign:
            raise ValueError("partner trajectory must carry the opposite noise sign")
        minus_psi = traj_minus.psi
    P = outer_product(traj_plus.psi, minus_psi)
    rho = P.gaussian_average()
    return DensityMatrix(np.asarray(rho), traj_plus.t)


def verify_q_ansatz(
    traj: Trajectory,
    q: QAnsatz,
    ops: SystemOperators,
    modes: DiscreteModes,
    t_index: int | None = None,
) -> float:
    """Residual of the memory-operator ansatz against direct derivatives.

    For each mode k the chain rule turns the ansatz into
    d_(xis_k) psi = [int_0^t ds (d xis_s / d xis_k) f_j(t, s)] d_j psi with
    the integral evaluated by trapezoid on the stored f rows; the returned
    value is the worst elementwise deviation over modes.
    """
    table = q.table
    if not table.functions:
        raise ValueError("ansatz verification needs stored coefficient rows")
    grid = table.grid
    i = grid.n_steps if t_index is None else t_index
    ts = grid.times()
    s_nodes = ts[: i + 1]
    dt = grid.dt
    worst = 0.0
    labels = sorted(table.functions, key=lambda s: int(s[1:]))
    for k in range(len(modes)):
        phases = -1j * modes.couplings[k] * np.exp(1j * modes.omegas[k] * s_nodes)
        target = traj.psi.left_derivative(traj.algebra.xis_index(k))
        combo = np.zeros_like(ops.h_s)
        for j, lb in enumerate(labels):
            vals = phases * table.functions[lb][i]
            cjk = (
                dt * (np.sum(vals) - 0.5 * vals[0] - 0.5 * vals[-1]) if i > 0 else 0.0
            )
            combo = combo + cjk * ops.d_ops[j]
        predicted = traj.psi.apply(ops.parity @ combo)
        diff = target + (-1.0) * predicted
        worst = max(worst, diff.max_abs())
    return worst


def thermal_noise_families(
    model: SingleDotThermal, modes: DiscreteModes, ops: SystemOperators
) -> list[NoiseFamily]:
    """Doubled-picture noise families for a finite-temperature reservoir."""
    nbar = model.bath.occupations(modes)
    g = np.sqrt(1.0 - nbar) * modes.couplings
    f = np.sqrt(nbar) * modes.couplings
    d = ops.d_ops[0]
    fam_b = NoiseFamily(d, g, modes.omegas.copy(), mode_offset=0)
    fam_c = NoiseFamily(-d.conj().T, f, -modes.omegas.copy(), mode_offset=len(modes))
    return [fam_b, fam_c]
