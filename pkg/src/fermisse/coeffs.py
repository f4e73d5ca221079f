"""Time-local master-equation coefficients on the triangular (t, s) grid.

Three solvers share one numerical scheme (trapezoid quadrature for every
memory integral, an unconditionally stable implicit-trapezoid sweep for the
local term, and an outer fixed-point iteration for the terms that couple to
the whole s-profile):

* ``solve_f_vacuum``: f_j(t, s) marched forward in t from the diagonal
  f_j(t, t) = 1, with dt f_j = i W_j f_j + (sum_k F_k) f_j and
  F_j(t) = int_0^t K(t, s) f_j(t, s) ds.
* ``solve_u_thermal``: for each row t the four functions u^b_{1,2},
  u^c_{1,2} solve backward-in-s equations with causal, anticausal and
  full-interval memory terms; F_i(t) = int_0^t [Kb u^b_i - Kc* u^c_i] ds.
* ``solve_u_double``: the sixteen-function analogue for two dots with two
  reservoirs; the local term is a 2x2 block mixing the dot index.

All memory integrals are stationary-kernel lag convolutions; each row
caches the kernel FFTs once, so a full solve costs O(n^2 log n).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.fft import fft, ifft, next_fast_len

from .bath import KernelTable, MarkovKernel, TimeGrid
from .models import DoubleDotTwoBaths, ManyFermionVacuum, SingleDotThermal

__all__ = [
    "CoeffTable",
    "CoeffSolverError",
    "solve_f_vacuum",
    "solve_u_thermal",
    "solve_u_double",
    "assemble_F",
]

DOUBLE_LABELS = tuple(f"F{i}^{j}" for j in (1, 2) for i in (1, 2, 3, 4))


class CoeffSolverError(RuntimeError):
    """Fixed-point failure or non-finite coefficient; carries the residual."""

    def __init__(self, message: str, residual: float | None = None, row: int | None = None):
        super().__init__(message)
        self.residual = residual
        self.row = row


@dataclass(eq=False)
class CoeffTable:
    """Solved coefficient functions and their memory-integrated F values.

    ``functions`` maps labels to lists of per-row arrays on the triangular
    grid (row i holds s-nodes 0..i); it may be empty when a large solve was
    run without storing profiles.  ``F`` maps labels to arrays over the time
    grid, always starting at F(0) = 0 except for the exact delta-kernel
    tables where the decay coefficient is the constant gamma/2.
    """

    grid: TimeGrid
    kind: str
    functions: dict = field(default_factory=dict)
    F: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def f_labels(self) -> list[str]:
        order = {"vacuum": None, "thermal": ["F1", "F2"], "double": list(DOUBLE_LABELS)}[
            self.kind
        ]
        if order is None:
            return sorted(self.F, key=lambda s: int(s[1:]))
        return order

    def to_csv(self, path) -> None:
        labels = self.f_labels()
        ts = self.grid.times()
        with open(path, "w", encoding="utf-8") as fh:
            header = ",".join(["t"] + [f"re_{lb},im_{lb}" for lb in labels])
            fh.write(header.replace("^", "_bath") + "\n")
            for i, t in enumerate(ts):
                cells = [f"{t:.11e}"]
                for lb in labels:
                    v = self.F[lb][i]
                    cells.append(f"{v.real:.11e},{v.imag:.11e}")
                fh.write(",".join(cells) + "\n")


# ---------------------------------------------------------------------------
# stationary-kernel lag convolutions with per-row cached kernel FFTs
# ---------------------------------------------------------------------------


class _RowConv:
    """Linear convolutions out[j] = sum_j' k(j - j') u[j'] on one row.

    Kernels are supplied as lag arrays of length 2m-1 (index l holds the
    value at lag l - (m - 1)) and transformed once; per iteration only the
    profile FFTs are recomputed.
    """

    def __init__(self, m: int):
        self.m = m
        self.P = next_fast_len(2 * m - 1)

    def prep(self, lag: np.ndarray) -> np.ndarray:
        return fft(lag, self.P)

    def profile_hat(self, u: np.ndarray) -> np.ndarray:
        return fft(u, self.P, axis=-1)

    def conv(self, khat: np.ndarray, uhat: np.ndarray) -> np.ndarray:
        full = ifft(uhat * khat, axis=-1)
        return full[..., self.m - 1 : 2 * self.m - 1]


def _lag_causal(k: np.ndarray) -> np.ndarray:
    m = k.shape[0]
    out = np.zeros(2 * m - 1, dtype=complex)
    out[m - 1 :] = k
    return out


def _lag_anticausal(k: np.ndarray) -> np.ndarray:
    m = k.shape[0]
    out = np.zeros(2 * m - 1, dtype=complex)
    out[:m] = k[::-1]
    return out


def _lag_full(kpos: np.ndarray, kneg: np.ndarray) -> np.ndarray:
    m = kpos.shape[0]
    out = np.zeros(2 * m - 1, dtype=complex)
    out[m - 1 :] = kpos
    out[: m - 1] = kneg[m - 1 : 0 : -1]
    return out


def _trapz_row(vals: np.ndarray, dt: float) -> np.ndarray:
    if vals.shape[-1] == 1:
        return np.zeros(vals.shape[:-1], dtype=complex)
    return dt * (np.sum(vals, axis=-1) - 0.5 * vals[..., 0] - 0.5 * vals[..., -1])


def _backward_sweep(a: complex, src: np.ndarray, final, dt: float) -> np.ndarray:
    """Solve du/ds = a u + k(s) backward from u(s_n) = final (trapezoid).

    ``src`` holds k on all nodes (batch..., n); the recurrence
    u_j = lam u_{j+1} + sf (k_j + k_{j+1}) is unrolled with stable phase
    powers (|lam| = 1 for the anti-Hermitian local terms used here).
    """
    n = src.shape[-1]
    if n == 1:
        out = np.empty(src.shape, dtype=complex)
        out[..., 0] = final
        return out
    denom = 1.0 + 0.5 * dt * a
    lam = (1.0 - 0.5 * dt * a) / denom
    sf = -0.5 * dt / denom
    seg = sf * (src[..., :-1] + src[..., 1:])  # length n-1, index j = 0..n-2
    powers = lam ** np.arange(n)
    tail = np.cumsum((seg * powers[:-1])[..., ::-1], axis=-1)[..., ::-1]
    suffix = np.zeros(src.shape, dtype=complex)
    suffix[..., :-1] = tail
    final = np.asarray(final, dtype=complex)
    return powers[::-1] * final[..., None] + suffix / powers


def _picard_row(
    sweep,
    sources,
    u0: tuple[np.ndarray, ...],
    tol: float,
    max_iter: int,
    accelerate: bool = True,
    depth: int = 4,
) -> tuple[tuple[np.ndarray, ...], int, float, list[float]]:
    """Fixed-point iteration over full s-profiles.

    ``sources`` maps the current profiles to the lagged integral terms and
    ``sweep`` runs the implicit-trapezoid backward solve for each function.
    The plain iteration damps by 0.5 when the residual stalls; with
    ``accelerate`` a small Anderson mixing history is kept, which collapses
    the geometric tail of strongly coupled rows (same fixed point).
    """
    shapes = [np.shape(a) for a in u0]
    sizes = [int(np.prod(s)) for s in shapes]

    def flat(u):
        return np.concatenate([np.ravel(a) for a in u])

    def unflat(v):
        out, off = [], 0
        for sh, sz in zip(shapes, sizes):
            out.append(v[off : off + sz].reshape(sh))
            off += sz
        return tuple(out)

    x = flat(u0)
    hist_x: list[np.ndarray] = []
    hist_g: list[np.ndarray] = []
    history: list[float] = []
    prev_res = np.inf
    for it in range(1, max_iter + 1):
        g = flat(sweep(sources(unflat(x))))
        f = g - x
        res = float(np.max(np.abs(f)))
        history.append(res)
        if res < tol:
            return unflat(g), it, res, history
        if accelerate:
            hist_x.append(x)
            hist_g.append(g)
            if len(hist_x) > depth + 1:
                hist_x.pop(0)
                hist_g.pop(0)
            if len(hist_x) >= 2:
                dF = np.stack(
                    [
                        (hist_g[i + 1] - hist_x[i + 1]) - (hist_g[i] - hist_x[i])
                        for i in range(len(hist_x) - 1)
                    ],
                    axis=1,
                )
                dG = np.stack(
                    [hist_g[i + 1] - hist_g[i] for i in range(len(hist_g) - 1)], axis=1
                )
                gamma, *_ = np.linalg.lstsq(dF, f, rcond=1e-12)
                cand = g - dG @ gamma
                if np.all(np.isfinite(cand)):
                    x = cand
                    continue
            x = g
        else:
            if res >= prev_res:  # stalled: damp the update
                x = 0.5 * (g + x)
            else:
                x = g
            prev_res = res
    raise CoeffSolverError(
        f"fixed-point iteration did not reach {tol:.1e} in {max_iter} iterations "
        f"(residual {history[-1]:.3e})",
        residual=history[-1],
    )


# ---------------------------------------------------------------------------
# vacuum model: forward march of f_j(t, s)
# ---------------------------------------------------------------------------


def solve_f_vacuum(
    model: ManyFermionVacuum,
    kernels: KernelTable,
    grid: TimeGrid,
    store_functions: bool | None = None,
    check_grid: bool = False,
    coarse_threshold: float = 1e-4,
) -> CoeffTable:
    """March f_j(t, s) forward in t from the diagonal and accumulate F_j(t).

    The scalar-coefficient closure (one f_j per system mode under the
    collective coupling sum_j d_j) reproduces the exact reduced dynamics
    for a single mode and for degenerate mode frequencies; for
    non-degenerate multi-mode systems it is a controlled approximation
    (the exact memory operator is no longer a noise-free single-column
    combination), so quantitative oracle comparisons in the tests pin the
    exact cases.
    """
    if not kernels.vacuum:
        raise ValueError("vacuum solver requires a kernel table with no thermal branch")
    omegas = np.asarray(model.omegas, dtype=float)
    n = grid.n_steps
    dt = grid.dt
    store = store_functions if store_functions is not None else n <= 800

    nf = omegas.size
    F = np.zeros((nf, n + 1), dtype=complex)
    rows: list[np.ndarray] = []
    row = np.ones((nf, 1), dtype=complex)
    if store:
        rows.append(row.copy())
    iw = 1j * omegas[:, None]

    with np.errstate(over="ignore", invalid="ignore"):
        for i in range(n):
            s_total = np.sum(F[:, i])
            g_i = (iw + s_total) * row
            pred = np.empty((nf, i + 2), dtype=complex)
            pred[:, : i + 1] = row + dt * g_i
            pred[:, i + 1] = 1.0
            kb_next = kernels.kb_row(i + 1)
            f_pred = _trapz_row(kb_next * pred, dt)
            s_pred = np.sum(f_pred)
            new = np.empty((nf, i + 2), dtype=complex)
            new[:, : i + 1] = row + 0.5 * dt * (g_i + (iw + s_pred) * pred[:, : i + 1])
            new[:, i + 1] = 1.0
            F[:, i + 1] = _trapz_row(kb_next * new, dt)
            if not np.all(np.isfinite(F[:, i + 1])):
                raise CoeffSolverError(
                    f"non-finite F at t={grid.times()[i + 1]:.6g}; the time-local "
                    "coefficient is diverging (resonant-singularity region)",
                    row=i + 1,
                )
            row = new
            if store:
                rows.append(row.copy())

    table = CoeffTable(grid, "vacuum", meta={"scheme": "heun+trapezoid"})
    for j in range(nf):
        table.F[f"F{j + 1}"] = F[j]
        if store:
            table.functions[f"f{j + 1}"] = [r[j] for r in rows]
    if check_grid and n % 2 == 0:
        coarse_kern = KernelTable(
            grid.halved(),
            kernels.omegas,
            kernels.g2,
            kernels.f2,
            kernels.kappa_b[::2],
            kernels.kappa_c[::2],
        )
        coarse = solve_f_vacuum(model, coarse_kern, grid.halved(), store_functions=False)
        rel = _grid_change(table, coarse)
        table.meta["step_doubling_rel_change"] = rel
        table.meta["grid_coarse_flag"] = bool(rel > coarse_threshold)
        if rel > coarse_threshold:
            warnings.warn(
                f"step doubling changes F by {rel:.2e} (> {coarse_threshold:.0e}); "
                "grid too coarse",
                stacklevel=2,
            )
    return table


def _grid_change(fine: CoeffTable, coarse: CoeffTable) -> float:
    worst = 0.0
    for lb, vals in fine.F.items():
        cv = coarse.F[lb]
        diff = np.max(np.abs(vals[::2] - cv))
        scale = max(np.max(np.abs(vals)), 1e-300)
        worst = max(worst, diff / scale)
    return worst


# ---------------------------------------------------------------------------
# thermal single dot: backward rows with fixed-point iteration
# ---------------------------------------------------------------------------


def _markov_thermal_table(gamma: float, omega0: float, grid: TimeGrid, store: bool) -> CoeffTable:
    n = grid.n_steps
    table = CoeffTable(grid, "thermal", meta={"markov_gamma": gamma})
    table.F["F1"] = np.full(n + 1, 0.5 * gamma, dtype=complex)
    table.F["F2"] = np.zeros(n + 1, dtype=complex)
    if store:
        dt = grid.dt
        for lb, rate, amp in (
            ("u_b1", 1j * omega0 + 0.5 * gamma, 1.0),
            ("u_b2", 0.0, 0.0),
            ("u_c1", 0.0, 0.0),
            ("u_c2", 1j * omega0 - 0.5 * gamma, 1.0),
        ):
            rows = []
            for i in range(n + 1):
                back = dt * (i - np.arange(i + 1))
                rows.append(amp * np.exp(rate * back) if amp else np.zeros(i + 1, complex))
            table.functions[lb] = rows
    return table


def solve_u_thermal(
    model: SingleDotThermal,
    kernels: KernelTable | MarkovKernel,
    grid: TimeGrid,
    tol: float = 1e-10,
    max_iter: int = 200,
    store_functions: bool | None = None,
    accelerate: bool = True,
) -> CoeffTable:
    """Solve the four thermal coefficient functions row by row and build F.

    Each row t_i is a backward two-point problem on s in [0, t_i]; the
    full-interval coupling terms make it a fixed-point problem over the
    whole profile, iterated to ``tol`` in sup norm.
    """
    if isinstance(kernels, MarkovKernel):
        store = store_functions if store_functions is not None else grid.n_steps <= 800
        return _markov_thermal_table(kernels.gamma, model.omega0, grid, store)

    n = grid.n_steps
    dt = grid.dt
    store = store_functions if store_functions is not None else n <= 800
    a_loc = -1j * model.omega0
    kb_all = kernels.kappa_b
    kc_all = kernels.kappa_c

    finals_b = np.array([1.0, 0.0], dtype=complex)
    finals_c = np.array([0.0, 1.0], dtype=complex)
    F1 = np.zeros(n + 1, dtype=complex)
    F2 = np.zeros(n + 1, dtype=complex)
    func_rows = {lb: [] for lb in ("u_b1", "u_b2", "u_c1", "u_c2")} if store else None
    iters = np.zeros(n + 1, dtype=int)
    finres = np.zeros(n + 1)
    worst_history: list[float] = []

    if store:
        for lb, fin in zip(("u_b1", "u_b2", "u_c1", "u_c2"), (1.0, 0.0, 0.0, 1.0)):
            func_rows[lb].append(np.array([fin], dtype=complex))

    u_prev = None
    for i in range(1, n + 1):
        m = i + 1
        kb = kb_all[:m]
        kc = kc_all[:m]
        kbc = np.conj(kb)
        kcc = np.conj(kc)
        ctx = _RowConv(m)
        k_cb = ctx.prep(_lag_causal(kb))
        k_ac = ctx.prep(_lag_anticausal(kc))
        k_fcs = ctx.prep(_lag_full(kcc, kc))
        k_ccc = ctx.prep(_lag_causal(kcc))
        k_acb = ctx.prep(_lag_anticausal(kbc))
        k_fb = ctx.prep(_lag_full(kb, kbc))
        kb_rev = kb[::-1]
        kc_rev = kc[::-1]

        def sources(u):
            ub, uc = u
            ubh = ctx.profile_hat(ub)
            uch = ctx.profile_hat(uc)
            t1 = dt * ctx.conv(k_cb, ubh) - 0.5 * dt * (kb * ub[..., :1] + kb[0] * ub)
            t2 = dt * ctx.conv(k_ac, ubh) - 0.5 * dt * (kc[0] * ub + kc_rev * ub[..., -1:])
            t3 = dt * ctx.conv(k_fcs, uch) - 0.5 * dt * (
                kcc * uc[..., :1] + kc_rev * uc[..., -1:]
            )
            src_b = -t1 + t2 + t3
            t1c = dt * ctx.conv(k_ccc, uch) - 0.5 * dt * (kcc * uc[..., :1] + kcc[0] * uc)
            t2c = dt * ctx.conv(k_acb, uch) - 0.5 * dt * (
                kbc[0] * uc + kbc[::-1] * uc[..., -1:]
            )
            t3c = dt * ctx.conv(k_fb, ubh) - 0.5 * dt * (
                kb * ub[..., :1] + kbc[::-1] * ub[..., -1:]
            )
            src_c = -t1c + t2c + t3c
            return src_b, src_c

        def sweep(srcs):
            src_b, src_c = srcs
            ub = _backward_sweep(a_loc, src_b, finals_b, dt)
            uc = _backward_sweep(a_loc, src_c, finals_c, dt)
            ub[:, -1] = finals_b
            uc[:, -1] = finals_c
            return ub, uc

        if u_prev is None:
            phase = np.exp(a_loc * dt * (np.arange(m) - i))
            u0 = (finals_b[:, None] * phase, finals_c[:, None] * phase)
        else:
            ub0 = np.empty((2, m), dtype=complex)
            uc0 = np.empty((2, m), dtype=complex)
            ub0[:, :-1], uc0[:, :-1] = u_prev
            ub0[:, -1] = finals_b
            uc0[:, -1] = finals_c
            u0 = (ub0, uc0)

        try:
            (ub, uc), it, res, history = _picard_row(
                sweep, sources, u0, tol, max_iter, accelerate
            )
        except CoeffSolverError as err:
            err.row = i
            raise
        u_prev = (ub, uc)
        iters[i] = it
        finres[i] = res
        if it >= max(iters[:i].max(initial=0), 1):
            worst_history = history

        F1[i] = _trapz_row(kb_rev * ub[0] - np.conj(kc_rev) * uc[0], dt)
        F2[i] = _trapz_row(kb_rev * ub[1] - np.conj(kc_rev) * uc[1], dt)
        if store:
            for lb, arr in zip(("u_b1", "u_b2", "u_c1", "u_c2"), (ub[0], ub[1], uc[0], uc[1])):
                func_rows[lb].append(arr.copy())

    table = CoeffTable(
        grid,
        "thermal",
        meta={
            "picard_tol": tol,
            "picard_max_iter": max_iter,
            "picard_iterations": iters,
            "picard_final_residual": finres,
            "picard_worst_history": worst_history,
            "picard_accelerated": accelerate,
        },
    )
    table.F["F1"] = F1
    table.F["F2"] = F2
    if store:
        table.functions.update(func_rows)
    return table


# ---------------------------------------------------------------------------
# double dot, two reservoirs
# ---------------------------------------------------------------------------


def solve_u_double(
    model: DoubleDotTwoBaths,
    kernels1: KernelTable,
    kernels2: KernelTable,
    grid: TimeGrid,
    tol: float = 1e-10,
    max_iter: int = 200,
    store_functions: bool | None = None,
    accelerate: bool = True,
) -> CoeffTable:
    """Sixteen coupled coefficient functions for the two-dot, two-bath model."""
    if kernels1.grid.n_steps != grid.n_steps or kernels2.grid.n_steps != grid.n_steps:
        raise ValueError("both kernel tables must live on the solver grid")
    n = grid.n_steps
    dt = grid.dt
    store = store_functions if store_functions is not None else n <= 400

    h2 = np.array([[model.omega1, model.g], [np.conj(model.g), model.omega2]])
    evals, Q = np.linalg.eigh(h2)
    Qd = Q.conj().T
    a_channels = -1j * evals

    # final conditions: u^{1b}_1 = u^{2b}_2 = u^{1c}_3 = u^{2c}_4 = 1 at s = t
    fin_b = np.zeros((2, 4), dtype=complex)
    fin_b[0, 0] = 1.0
    fin_b[1, 1] = 1.0
    fin_c = np.zeros((2, 4), dtype=complex)
    fin_c[0, 2] = 1.0
    fin_c[1, 3] = 1.0

    kap_b = (kernels1.kappa_b, kernels2.kappa_b)
    kap_c = (kernels1.kappa_c, kernels2.kappa_c)

    F = {lb: np.zeros(n + 1, dtype=complex) for lb in DOUBLE_LABELS}
    labels_fn = [f"u_{j}{br}{i}" for j in (1, 2) for br in ("b", "c") for i in (1, 2, 3, 4)]
    func_rows = {lb: [] for lb in labels_fn} if store else None
    iters = np.zeros(n + 1, dtype=int)
    finres = np.zeros(n + 1)
    worst_history: list[float] = []

    def coupled_sweep(src, fin):
        # rotate the dot axis into the eigenchannels of the local 2x2 block,
        # sweep each channel, rotate back
        src_rot = np.einsum("ab,bfm->afm", Qd, src)
        fin_rot = Qd @ fin
        out = np.empty_like(src_rot)
        for ch in range(2):
            out[ch] = _backward_sweep(a_channels[ch], src_rot[ch], fin_rot[ch], dt)
        u = np.einsum("ab,bfm->afm", Q, out)
        u[..., -1] = fin
        return u

    if store:
        flat_fin = {f"u_{j}b{i}": fin_b[j - 1, i - 1] for j in (1, 2) for i in range(1, 5)}
        flat_fin.update({f"u_{j}c{i}": fin_c[j - 1, i - 1] for j in (1, 2) for i in range(1, 5)})
        for lb in labels_fn:
            func_rows[lb].append(np.array([flat_fin[lb]], dtype=complex))

    u_prev = None
    for i in range(1, n + 1):
        m = i + 1
        ctx = _RowConv(m)
        kb = [k[:m] for k in kap_b]
        kc = [k[:m] for k in kap_c]
        kbc = [np.conj(k) for k in kb]
        kcc = [np.conj(k) for k in kc]
        khats = []
        for j in range(2):
            khats.append(
                {
                    "cb": ctx.prep(_lag_causal(kb[j])),
                    "ac": ctx.prep(_lag_anticausal(kc[j])),
                    "fcs": ctx.prep(_lag_full(kcc[j], kc[j])),
                    "ccc": ctx.prep(_lag_causal(kcc[j])),
                    "acb": ctx.prep(_lag_anticausal(kbc[j])),
                    "fb": ctx.prep(_lag_full(kb[j], kbc[j])),
                }
            )

        def sources(u):
            ub, uc = u
            src_b = np.empty_like(ub)
            src_c = np.empty_like(uc)
            for j in range(2):
                kbj, kcj, kbcj, kccj = kb[j], kc[j], kbc[j], kcc[j]
                kh = khats[j]
                ubh = ctx.profile_hat(ub[j])
                uch = ctx.profile_hat(uc[j])
                t1 = dt * ctx.conv(kh["cb"], ubh) - 0.5 * dt * (
                    kbj * ub[j][..., :1] + kbj[0] * ub[j]
                )
                t2 = dt * ctx.conv(kh["ac"], ubh) - 0.5 * dt * (
                    kcj[0] * ub[j] + kcj[::-1] * ub[j][..., -1:]
                )
                t3 = dt * ctx.conv(kh["fcs"], uch) - 0.5 * dt * (
                    kccj * uc[j][..., :1] + kcj[::-1] * uc[j][..., -1:]
                )
                src_b[j] = -t1 + t2 + t3
                t1c = dt * ctx.conv(kh["ccc"], uch) - 0.5 * dt * (
                    kccj * uc[j][..., :1] + kccj[0] * uc[j]
                )
                t2c = dt * ctx.conv(kh["acb"], uch) - 0.5 * dt * (
                    kbcj[0] * uc[j] + kbcj[::-1] * uc[j][..., -1:]
                )
                t3c = dt * ctx.conv(kh["fb"], ubh) - 0.5 * dt * (
                    kbj * ub[j][..., :1] + kbcj[::-1] * ub[j][..., -1:]
                )
                src_c[j] = -t1c + t2c + t3c
            return src_b, src_c

        def sweep(srcs):
            src_b, src_c = srcs
            return coupled_sweep(src_b, fin_b), coupled_sweep(src_c, fin_c)

        if u_prev is None:
            u0 = (
                coupled_sweep(np.zeros((2, 4, m), complex), fin_b),
                coupled_sweep(np.zeros((2, 4, m), complex), fin_c),
            )
        else:
            ub0 = np.empty((2, 4, m), dtype=complex)
            uc0 = np.empty((2, 4, m), dtype=complex)
            ub0[..., :-1], uc0[..., :-1] = u_prev
            ub0[..., -1] = fin_b
            uc0[..., -1] = fin_c
            u0 = (ub0, uc0)

        try:
            (ub, uc), it, res, history = _picard_row(
                sweep, sources, u0, tol, max_iter, accelerate
            )
        except CoeffSolverError as err:
            err.row = i
            raise
        u_prev = (ub, uc)
        iters[i] = it
        finres[i] = res
        if it >= max(iters[:i].max(initial=0), 1):
            worst_history = history

        for j in range(2):
            kb_rev = kb[j][::-1]
            kcs_rev = np.conj(kc[j][::-1])
            for fc in range(4):
                F[f"F{fc + 1}^{j + 1}"][i] = _trapz_row(
                    kb_rev * ub[j, fc] - kcs_rev * uc[j, fc], dt
                )
        if store:
            for j in (1, 2):
                for fc in range(1, 5):
                    func_rows[f"u_{j}b{fc}"].append(ub[j - 1, fc - 1].copy())
                    func_rows[f"u_{j}c{fc}"].append(uc[j - 1, fc - 1].copy())

    table = CoeffTable(
        grid,
        "double",
        meta={
            "picard_tol": tol,
            "picard_max_iter": max_iter,
            "picard_iterations": iters,
            "picard_final_residual": finres,
            "picard_worst_history": worst_history,
            "picard_accelerated": accelerate,
        },
    )
    table.F.update(F)
    if store:
        table.functions.update(func_rows)
    return table


# ---------------------------------------------------------------------------
# F assembly from stored profiles
# ---------------------------------------------------------------------------


def assemble_F(
    coeffs: CoeffTable,
    kernels: KernelTable | MarkovKernel,
    kernels2: KernelTable | None = None,
) -> CoeffTable:
    """Recompute the F arrays from stored coefficient profiles.

    For the delta-kernel marker the memory integral collapses onto the
    diagonal: F_i(t) = gamma/2 * u^b_i(t, t), which is gamma/2 on the decay
    channel and zero elsewhere.
    """
    grid = coeffs.grid
    n = grid.n_steps
    dt = grid.dt
    out = CoeffTable(grid, coeffs.kind, functions=coeffs.functions, meta=dict(coeffs.meta))

    if isinstance(kernels, MarkovKernel):
        if coeffs.kind != "thermal":
            raise ValueError("delta-kernel assembly defined for the thermal table")
        for lb_f, lb_u in (("F1", "u_b1"), ("F2", "u_b2")):
            _require_functions(coeffs, lb_u)
            diag = np.array([rows[-1] for rows in coeffs.functions[lb_u]], dtype=complex)
            out.F[lb_f] = 0.5 * kernels.gamma * diag
        return out

    if coeffs.kind == "vacuum":
        labels = sorted(coeffs.functions, key=lambda s: int(s[1:]))
        if not labels:
            raise ValueError("assemble_F needs stored coefficient profiles")
        for lb in labels:
            rows = coeffs.functions[lb]
            F = np.zeros(n + 1, dtype=complex)
            for i in range(n + 1):
                F[i] = _trapz_row(kernels.kb_row(i) * rows[i], dt)
            out.F["F" + lb[1:]] = F
        return out

    if coeffs.kind == "thermal":
        for idx, lb_f in ((1, "F1"), (2, "F2")):
            _require_functions(coeffs, f"u_b{idx}")
            _require_functions(coeffs, f"u_c{idx}")
            F = np.zeros(n + 1, dtype=complex)
            for i in range(n + 1):
                vals = kernels.kb_row(i) * coeffs.functions[f"u_b{idx}"][i] - np.conj(
                    kernels.kc_row(i)
                ) * coeffs.functions[f"u_c{idx}"][i]
                F[i] = _trapz_row(vals, dt)
            out.F[lb_f] = F
        return out

    if coeffs.kind == "double":
        if kernels2 is None:
            raise ValueError("the double-dot assembly needs both kernel tables")
        tables = (kernels, kernels2)
        for j in (1, 2):
            for fc in range(1, 5):
                _require_functions(coeffs, f"u_{j}b{fc}")
                _require_functions(coeffs, f"u_{j}c{fc}")
                F = np.zeros(n + 1, dtype=complex)
                for i in range(n + 1):
                    vals = tables[j - 1].kb_row(i) * coeffs.functions[f"u_{j}b{fc}"][i] - np.conj(
                        tables[j - 1].kc_row(i)
                    ) * coeffs.functions[f"u_{j}c{fc}"][i]
                    F[i] = _trapz_row(vals, dt)
                out.F[f"F{fc}^{j}"] = F
        return out

    raise ValueError(f"unknown coefficient-table kind {coeffs.kind!r}")


def _require_functions(coeffs: CoeffTable, label: str) -> None:
    if label not in coeffs.functions:
        raise ValueError(f"missing coefficient profile {label!r}")
