"""Independent exact references for the quadratic dot-reservoir models.

Two routes are provided and cross-checked against each other:

* ``FockEvolution`` integrates the full many-body Schroedinger equation in
  the occupation-number basis (Jordan-Wigner matrices, modes ordered system
  first, then bath 1, then bath 2).  Dense eigendecomposition is used up to
  2^10 amplitudes and sparse Krylov stepping beyond.
* ``evolve_onebody`` propagates the one-body correlation matrix
  C(t) = U C(0) U^dag, exact for any mode count because every model here is
  quadratic and number conserving.

Thermal reservoirs enter either as occupation-diagonal initial data for the
one-body route or as an exact Bernoulli mixture over bath occupation
configurations for the Fock route.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.sparse
import scipy.sparse.linalg

from .bath import BathSpec, DiscreteModes, TimeGrid
from .models import DoubleDotTwoBaths, ManyFermionVacuum, ModelSpec, SingleDotThermal

__all__ = [
    "onebody_hamiltonian",
    "FockEvolution",
    "evolve_fock",
    "partial_trace_system",
    "evolve_onebody",
    "onebody_correlation",
    "amplitude_factor",
    "thermal_occupations",
    "mixture_fock_reduced",
]

_DENSE_LIMIT = 10  # modes; beyond this the Fock route switches to sparse stepping
_FOCK_LIMIT = 14


def _system_block(model: ModelSpec) -> np.ndarray:
    if isinstance(model, SingleDotThermal):
        return np.array([[model.omega0]], dtype=complex)
    if isinstance(model, DoubleDotTwoBaths):
        return np.array(
            [[model.omega1, model.g], [np.conj(model.g), model.omega2]], dtype=complex
        )
    if isinstance(model, ManyFermionVacuum):
        return np.diag(np.asarray(model.omegas, dtype=complex))
    raise TypeError(f"unsupported model {type(model).__name__}")


def _coupling_columns(model: ModelSpec, bath_index: int, modes: DiscreteModes) -> np.ndarray:
    """Rows: system modes; columns: bath modes of the given reservoir."""
    n_sys = _system_block(model).shape[0]
    cols = np.zeros((n_sys, len(modes)), dtype=complex)
    if isinstance(model, ManyFermionVacuum):
        cols[:, :] = modes.couplings[None, :]  # collective coupling sum_j d_j
    elif isinstance(model, SingleDotThermal):
        cols[0, :] = modes.couplings
    elif isinstance(model, DoubleDotTwoBaths):
        cols[bath_index, :] = modes.couplings
    return cols


def onebody_hamiltonian(model: ModelSpec, baths_modes: list[DiscreteModes]) -> np.ndarray:
    """Single-particle Hamiltonian with modes ordered system, bath1, bath2."""
    hs = _system_block(model)
    n_sys = hs.shape[0]
    n_total = n_sys + sum(len(m) for m in baths_modes)
    h = np.zeros((n_total, n_total), dtype=complex)
    h[:n_sys, :n_sys] = hs
    col = n_sys
    for b, modes in enumerate(baths_modes):
        nk = len(modes)
        h[col : col + nk, col : col + nk] = np.diag(modes.omegas)
        block = _coupling_columns(model, b, modes)
        h[:n_sys, col : col + nk] = block
        h[col : col + nk, :n_sys] = block.conj().T
        col += nk
    return h


def _jw_sparse(n_modes: int, k: int) -> scipy.sparse.csr_matrix:
    sigma_minus = scipy.sparse.csr_matrix(np.array([[0.0, 1.0], [0.0, 0.0]]))
    sigma_z = scipy.sparse.csr_matrix(np.array([[1.0, 0.0], [0.0, -1.0]]))
    eye = scipy.sparse.identity(2, format="csr")
    out = scipy.sparse.identity(1, format="csr")
    for j in range(n_modes):
        factor = sigma_z if j < k else (sigma_minus if j == k else eye)
        out = scipy.sparse.kron(out, factor, format="csr")
    return out.astype(complex)


def fock_hamiltonian(h: np.ndarray) -> scipy.sparse.csr_matrix:
    """Many-body H = sum_ij h_ij a_i^dag a_j in the occupation basis."""
    n = h.shape[0]
    if n > _FOCK_LIMIT:
        raise ValueError(f"Fock construction capped at {_FOCK_LIMIT} modes, got {n}")
    ops = [_jw_sparse(n, k) for k in range(n)]
    H = scipy.sparse.csr_matrix((2**n, 2**n), dtype=complex)
    for i in range(n):
        adag_i = ops[i].conj().T
        for j in range(n):
            if h[i, j] != 0:
                H = H + h[i, j] * (adag_i @ ops[j])
    return H


@dataclass(eq=False)
class FockEvolution:
    """Exact total-state evolution for a quadratic, number-conserving model."""

    h: np.ndarray
    n_sys: int

    def __post_init__(self):
        self.n_modes = self.h.shape[0]
        self.H = fock_hamiltonian(self.h)
        self.dim = 2**self.n_modes
        if self.n_modes <= _DENSE_LIMIT:
            evals, evecs = np.linalg.eigh(self.H.toarray())
            self._evals = evals
            self._evecs = evecs
        else:
            self._evals = None
            self._evecs = None

    def states_at(self, psi0: np.ndarray, times: np.ndarray) -> np.ndarray:
        """Amplitude matrix of shape (len(times), dim)."""
        psi0 = np.asarray(psi0, dtype=complex)
        if psi0.shape != (self.dim,):
            raise ValueError(f"state dimension mismatch: {psi0.shape} vs {self.dim}")
        if self._evals is not None:
            proj = self._evecs.conj().T @ psi0
            phases = np.exp(-1j * np.outer(times, self._evals))
            return (phases * proj[None, :]) @ self._evecs.T
        out = np.empty((len(times), self.dim), dtype=complex)
        psi = psi0.copy()
        t_prev = 0.0
        for i, t in enumerate(times):
            if t != t_prev:
                psi = scipy.sparse.linalg.expm_multiply(-1j * (t - t_prev) * self.H, psi)
                t_prev = t
            out[i] = psi
        return out

    def energy(self, psi: np.ndarray) -> float:
        return float(np.real(np.vdot(psi, self.H @ psi)))


def evolve_fock(
    model: ModelSpec,
    baths_modes: list[DiscreteModes],
    psi0: np.ndarray,
    grid: TimeGrid,
    times: np.ndarray | None = None,
) -> tuple[np.ndarray, FockEvolution]:
    """Full Schroedinger evolution; returns (amplitudes over times, engine)."""
    h = onebody_hamiltonian(model, baths_modes)
    n_sys = _system_block(model).shape[0]
    engine = FockEvolution(h, n_sys)
    tgrid = grid.times() if times is None else np.asarray(times)
    return engine.states_at(psi0, tgrid), engine


def partial_trace_system(amplitudes: np.ndarray, n_sys: int) -> np.ndarray:
    """Reduced system density matrix from total amplitudes.

    Works on a single state vector or a batch with leading time axis; the
    occupation basis is ordered system modes first, which matches the
    Jordan-Wigner convention used by the propagator module.
    """
    amps = np.asarray(amplitudes, dtype=complex)
    single = amps.ndim == 1
    if single:
        amps = amps[None, :]
    d_sys = 2**n_sys
    d_bath = amps.shape[1] // d_sys
    tensors = amps.reshape(-1, d_sys, d_bath)
    rhos = np.einsum("tab,tcb->tac", tensors, tensors.conj())
    return rhos[0] if single else rhos


def evolve_onebody(
    h: np.ndarray, occupations0: np.ndarray, times: np.ndarray, n_sys: int = 1
) -> np.ndarray:
    """System-mode occupations n_i(t) from C(t) = U C(0) U^dag, C(0) diagonal."""
    w, v = np.linalg.eigh(h)
    occ0 = np.asarray(occupations0, dtype=float)
    out = np.empty((len(times), n_sys))
    vd = v.conj().T
    for it, t in enumerate(times):
        u_rows = (v[:n_sys, :] * np.exp(-1j * w * t)[None, :]) @ vd  # rows of U(t)
        out[it] = np.real(np.einsum("ik,k,ik->i", u_rows, occ0, u_rows.conj()))
    return out


def onebody_correlation(h: np.ndarray, C0: np.ndarray, times: np.ndarray) -> np.ndarray:
    """Full correlation matrices C(t) for a general Hermitian C(0)."""
    w, v = np.linalg.eigh(h)
    vd = v.conj().T
    c_rot = vd @ C0 @ v
    out = np.empty((len(times), *C0.shape), dtype=complex)
    for it, t in enumerate(times):
        phases = np.exp(-1j * w * t)
        u = (v * phases[None, :]) @ vd
        out[it] = u @ C0 @ u.conj().T
    return out


def amplitude_factor(h: np.ndarray, times: np.ndarray, index: int = 0) -> np.ndarray:
    """[exp(-i h t)]_{index,index}; the exact coherence decay factor."""
    w, v = np.linalg.eigh(h)
    row = v[index, :]
    return np.array([np.sum(np.abs(row) ** 2 * np.exp(-1j * w * t)) for t in times])


def thermal_occupations(bath: BathSpec, modes: DiscreteModes | None = None) -> np.ndarray:
    """Per-mode mean occupations used as the bath diagonal of C(0)."""
    return bath.occupations(modes)


def export_reduced_csv(times: np.ndarray, rhos: np.ndarray, path) -> None:
    """Write an oracle trajectory in the propagator CSV layout for diffing."""
    from .propagator import Trajectory

    rhos = np.asarray(rhos)
    trace_err = np.real(np.einsum("tii->t", rhos)) - 1.0
    herm = np.array([float(np.max(np.abs(r - r.conj().T))) for r in rhos])
    min_eig = np.array(
        [float(np.linalg.eigvalsh(0.5 * (r + r.conj().T))[0]) for r in rhos]
    )
    Trajectory(np.asarray(times), rhos, trace_err, herm, min_eig).to_csv(path)


def mixture_fock_reduced(
    model: ModelSpec,
    baths: list[BathSpec],
    baths_modes: list[DiscreteModes],
    psi_sys0: np.ndarray,
    times: np.ndarray,
    weight_cutoff: float = 0.0,
) -> np.ndarray:
    """Exact reduced density matrices with thermal baths by mixture enumeration.

    Every bath occupation configuration is evolved as a pure total state and
    the reduced matrices are averaged with Bernoulli weights prod nbar / (1 -
    nbar).  Enumeration is exact; configurations below ``weight_cutoff`` may
    be skipped for speed (the skipped weight is renormalized away).
    """
    h = onebody_hamiltonian(model, baths_modes)
    n_sys = _system_block(model).shape[0]
    engine = FockEvolution(h, n_sys)
    occs = np.concatenate([b.occupations(m) for b, m in zip(baths, baths_modes)])
    n_bath = occs.size
    d_sys = 2**n_sys
    psi_sys0 = np.asarray(psi_sys0, dtype=complex)

    rho = np.zeros((len(times), d_sys, d_sys), dtype=complex)
    total_weight = 0.0
    for config in itertools.product((0, 1), repeat=n_bath):
        cfg = np.array(config)
        weight = float(np.prod(np.where(cfg == 1, occs, 1.0 - occs)))
        if weight <= weight_cutoff:
            continue
        bath_index = int("".join(map(str, config)), 2) if n_bath else 0
        psi0 = np.zeros(engine.dim, dtype=complex)
        # occupation basis: system bits are most significant
        base = np.arange(d_sys) * 2**n_bath + bath_index
        # creation-operator ordering signs: system operators act first, so a
        # system mode occupied together with p occupied bath modes needs no
        # extra sign (bath creations commute past an even weight, and the
        # basis is defined with system factors leftmost)
        psi0[base] = psi_sys0
        amps = engine.states_at(psi0, times)
        rho += weight * partial_trace_system(amps, n_sys)
        total_weight += weight
    return rho / total_weight
