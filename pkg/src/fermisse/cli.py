"""Config-driven scenario runner.

Verbs:

* ``run``            execute one scenario config (mode from its run block)
* ``sweep``          repeat a scenario over values of one config key
* ``validate``       exact-calculus and reconstruction checks
* ``oracle-compare`` propagate and diff against the matching exact oracle

Outputs per run: figure-ready CSV files, a reproducible metadata record
(no wall-clock data) and, for the checking modes, a pass/fail summary.
"""

from __future__ import annotations

import argparse
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .bath import BathSpec, KernelTable, MarkovKernel, TimeGrid, build_kernels
from .coeffs import CoeffSolverError, CoeffTable, solve_f_vacuum, solve_u_double, solve_u_thermal
from .config import ConfigError, ScenarioConfig, load_config, parse_config
from .grassmann import GrassmannAlgebra, verify_completeness, verify_novikov, outer_product
from .models import DoubleDotTwoBaths, ManyFermionVacuum, SingleDotThermal
from .oracle import (
    evolve_fock,
    evolve_onebody,
    mixture_fock_reduced,
    onebody_hamiltonian,
    partial_trace_system,
)
from .propagator import Trajectory, build_system_ops, run_master
from .sse import QAnsatz, build_noise, propagate_sse, reconstruct_rho

FMT = "%.11e"


# ---------------------------------------------------------------------------
# scenario execution
# ---------------------------------------------------------------------------


def _initial_density(cfg: ScenarioConfig, dim: int) -> np.ndarray:
    label = cfg.initial
    if dim == 2:
        aliases = {"ground": "0", "excited": "1", "0": "0", "1": "1"}
        if label == "plus":
            return 0.5 * np.ones((2, 2), dtype=complex)
        if label not in aliases:
            raise ConfigError([f"run.initial: {label!r} invalid for a single dot"])
        rho = np.zeros((2, 2), dtype=complex)
        rho[int(aliases[label]), int(aliases[label])] = 1.0
        return rho
    aliases = {"ground": "00", "excited": "10"}
    label = aliases.get(label, label)
    if label not in ("00", "01", "10", "11"):
        raise ConfigError([f"run.initial: {label!r} invalid for a two-dot system"])
    idx = 2 * int(label[0]) + int(label[1])
    rho = np.zeros((4, 4), dtype=complex)
    rho[idx, idx] = 1.0
    return rho


def _solve_coefficients(cfg: ScenarioConfig):
    model = cfg.model
    grid = cfg.grid
    if isinstance(model, SingleDotThermal) and cfg.markov is not None:
        table = solve_u_thermal(model, cfg.markov, grid, store_functions=False)
        return table, (cfg.markov,)
    if isinstance(model, ManyFermionVacuum):
        kern = build_kernels(model.bath, grid)
        if not kern.vacuum:
            raise ConfigError(
                ["bath: the many-fermion model needs a vacuum bath (occupations all zero)"]
            )
        table = solve_f_vacuum(model, kern, grid, store_functions=False)
        return table, (kern,)
    if isinstance(model, SingleDotThermal):
        kern = build_kernels(model.bath, grid)
        table = solve_u_thermal(
            model, kern, grid, tol=cfg.solver_tol, max_iter=cfg.solver_max_iter,
            store_functions=False,
        )
        return table, (kern,)
    if isinstance(model, DoubleDotTwoBaths):
        k1 = build_kernels(model.bath1, grid)
        k2 = build_kernels(model.bath2, grid)
        table = solve_u_double(
            model, k1, k2, grid, tol=cfg.solver_tol, max_iter=cfg.solver_max_iter,
            store_functions=False,
        )
        return table, (k1, k2)
    raise ConfigError(["model: unsupported model for the coefficient solve"])


def _write_metadata(path: Path, cfg: ScenarioConfig, table: CoeffTable | None, extra: dict) -> None:
    lines = [f"fermisse_version = {__version__}"]
    for key in sorted(cfg.raw):
        lines.append(f"config.{key} = {cfg.raw[key]}")
    lines.append("units = energies eV, times hbar/eV, temperatures K")
    lines.append("free_evolution_sign = +i*Omega in dt f (oracle-consistent; no flip applied)")
    lines.append("coefficient_equations = convolution form (memory under the s' integrals)")
    if table is not None:
        lines.append(f"solver.scheme = heun + trapezoid memory integrals")
        if "picard_iterations" in table.meta:
            iters = table.meta["picard_iterations"]
            lines.append(f"solver.picard_tol = {table.meta['picard_tol']:.1e}")
            lines.append(f"solver.picard_max_iterations_used = {int(np.max(iters))}")
            lines.append(f"solver.picard_mean_iterations = {float(np.mean(iters[1:])):.2f}"
                         if len(iters) > 1 else "solver.picard_mean_iterations = 0")
            lines.append(
                f"solver.picard_worst_final_residual = {float(np.max(table.meta['picard_final_residual'])):.3e}"
            )
        if "markov_gamma" in table.meta:
            lines.append(f"solver.markov_gamma_eV = {table.meta['markov_gamma']!r}")
    for key in sorted(extra):
        lines.append(f"{key} = {extra[key]}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def _sample_indices(n: int, max_points: int = 200) -> np.ndarray:
    step = max(1, n // max_points)
    return np.arange(0, n + 1, step)


def _oracle_compare(cfg: ScenarioConfig, table: CoeffTable, traj: Trajectory) -> list[tuple[str, float, float, bool]]:
    """Returns rows (check name, value, tolerance, passed)."""
    model = cfg.model
    grid = cfg.grid
    results = []
    if cfg.markov is not None:
        gamma = cfg.markov.gamma
        rho11 = traj.rhos[:, 1, 1].real
        expected = traj.rhos[0, 1, 1].real * np.exp(-gamma * grid.times())
        tol = cfg.tolerance or 1e-8
        err = float(np.max(np.abs(rho11 - expected)))
        results.append(("markov_decay_vs_closed_form", err, tol, err <= tol))
        return results

    idx = _sample_indices(grid.n_steps)
    times = grid.times()[idx]
    if isinstance(model, ManyFermionVacuum):
        modes = model.bath.modes()
        n_sys = model.n_sys
        tol = cfg.tolerance or 1e-5
        if n_sys + len(modes) > 10:
            raise ConfigError(
                ["oracle-compare: vacuum comparison needs <= 10 total modes (system + bath)"]
            )
        diag0 = np.diag(traj.rhos[0]).real
        if np.max(diag0) < 1.0 - 1e-12:
            raise ConfigError(
                ["run.initial: vacuum oracle comparison needs a basis initial state"]
            )
        dim = 2 ** (n_sys + len(modes))
        psi0 = np.zeros(dim, dtype=complex)
        sys_idx = int(np.argmax(diag0))
        psi0[sys_idx * 2 ** len(modes)] = 1.0
        amps, _ = evolve_fock(model, [modes], psi0, grid, times=times)
        rho_or = partial_trace_system(amps, n_sys)
        err = float(np.max(np.abs(traj.rhos[idx] - rho_or)))
        results.append(("vacuum_rho_vs_fock_oracle", err, tol, err <= tol))
    elif isinstance(model, SingleDotThermal):
        modes = model.bath.modes()
        h = onebody_hamiltonian(model, [modes])
        occ0 = np.concatenate([[traj.rhos[0, 1, 1].real], model.bath.occupations(modes)])
        occ = evolve_onebody(h, occ0, grid.times())
        tol = cfg.tolerance or 1e-5
        err = float(np.max(np.abs(traj.populations()[:, 1] - occ[:, 0])))
        results.append(("thermal_population_vs_onebody_oracle", err, tol, err <= tol))
        if len(modes) <= 8:
            diag = np.diag(traj.rhos[0]).real
            psi0 = np.sqrt(np.maximum(diag, 0.0)).astype(complex)
            if abs(traj.rhos[0, 0, 1]) > 1e-12:
                psi0[1] = traj.rhos[0, 1, 0] / max(psi0[0], 1e-300)
            rho_mix = mixture_fock_reduced(model, [model.bath], [modes], psi0, times)
            tol_rho = max(cfg.tolerance or 1e-4, 1e-4)
            err_rho = float(np.max(np.abs(traj.rhos[idx] - rho_mix)))
            results.append(("thermal_rho_vs_mixture_fock_oracle", err_rho, tol_rho, err_rho <= tol_rho))
    elif isinstance(model, DoubleDotTwoBaths):
        m1 = model.bath1.modes()
        m2 = model.bath2.modes()
        h = onebody_hamiltonian(model, [m1, m2])
        pops0 = np.diag(traj.rhos[0]).real
        n1_0 = pops0[2] + pops0[3]
        n2_0 = pops0[1] + pops0[3]
        occ0 = np.concatenate(
            [[n1_0, n2_0], model.bath1.occupations(m1), model.bath2.occupations(m2)]
        )
        occ = evolve_onebody(h, occ0, grid.times(), n_sys=2)
        n1 = traj.rhos[:, 2, 2].real + traj.rhos[:, 3, 3].real
        n2 = traj.rhos[:, 1, 1].real + traj.rhos[:, 3, 3].real
        tol = cfg.tolerance or 1e-4
        err = float(max(np.max(np.abs(n1 - occ[:, 0])), np.max(np.abs(n2 - occ[:, 1]))))
        results.append(("double_dot_populations_vs_onebody_oracle", err, tol, err <= tol))
    return results


def run_scenario(cfg: ScenarioConfig, out_dir: str | Path) -> int:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if cfg.mode == "validate":
        return _run_validate(cfg, out)

    try:
        table, kernels = _solve_coefficients(cfg)
    except CoeffSolverError as err:
        sys.stderr.write(
            f"coefficient solve failed: {err} "
            f"(row {err.row}, residual {err.residual})\n"
        )
        return 3

    extra = {}
    if cfg.write_coefficients:
        table.to_csv(out / "coefficients.csv")
    if cfg.write_kernels and isinstance(kernels[0], KernelTable):
        for i, kern in enumerate(kernels):
            name = "kernels.csv" if len(kernels) == 1 else f"kernels_bath{i + 1}.csv"
            kern.to_csv(out / name)

    status = 0
    if cfg.mode in ("propagate", "oracle-compare"):
        ops = build_system_ops(cfg.model)
        rho0 = _initial_density(cfg, ops.dim)
        traj = run_master(cfg.model, table, rho0)
        traj.to_csv(out / "trajectory.csv")
        extra["trajectory.max_trace_error"] = f"{float(np.max(np.abs(traj.trace_err))):.3e}"
        extra["trajectory.min_eigenvalue"] = f"{float(np.min(traj.min_eig)):.3e}"
        if cfg.mode == "oracle-compare":
            rows = _oracle_compare(cfg, table, traj)
            lines = []
            for name, value, tol, ok in rows:
                lines.append(f"{'PASS' if ok else 'FAIL'} {name} error={value:.3e} tol={tol:.1e}")
                if not ok:
                    status = 1
            (out / "summary.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
            sys.stdout.write("\n".join(lines) + "\n")
    _write_metadata(out / "metadata.txt", cfg, table, extra)
    return status


# ---------------------------------------------------------------------------
# validate mode: exact-calculus and reconstruction checks
# ---------------------------------------------------------------------------


def _run_validate(cfg: ScenarioConfig, out: Path) -> int:
    checks: list[tuple[str, float, float]] = []
    K = min(cfg.validate_modes, 3)

    for k in range(1, 4):
        checks.append((f"completeness_K{k}", verify_completeness(k), 1e-13))

    rng = np.random.default_rng(7)
    from .bath import DiscreteModes

    omegas = np.sort(rng.uniform(0.5, 2.0, size=K))
    coups = rng.uniform(0.2, 0.5, size=K)
    modes = DiscreteModes(omegas, coups)
    alg = GrassmannAlgebra(K)
    t_a, t_b = 0.9, 0.4
    cov = (
        build_noise(alg, modes, t_a, conjugate=False) * build_noise(alg, modes, t_b)
    ).gaussian_average()
    want = np.sum(coups**2 * np.exp(-1j * omegas * (t_a - t_b)))
    checks.append(("noise_covariance_vs_kernel", abs(cov - want), 1e-13))

    elem = alg.zero()
    for mask in range(2 ** (2 * K)):
        elem = elem + complex(rng.normal(), rng.normal()) * _mask_element(alg, mask)
    worst = 0.0
    for g in range(2 * K):
        diff = elem.berezin_integrate([g]) + (-1.0) * elem.left_derivative(g)
        worst = max(worst, diff.max_abs())
    checks.append(("berezin_equals_left_derivative", worst, 0.0))

    bath = BathSpec(modes, 0.0, -10.0)
    model = ManyFermionVacuum((1.0,), bath)
    ops = build_system_ops(model)
    grid = TimeGrid(1.0, 4000)
    kern = build_kernels(bath, grid)
    table = solve_f_vacuum(model, kern, grid, store_functions=False)
    plus = propagate_sse(model, modes, grid, QAnsatz(table), noise_sign=+1)
    minus = propagate_sse(model, modes, grid, QAnsatz(table), noise_sign=-1)
    rho_pair = reconstruct_rho(plus, minus)
    rho_parity = reconstruct_rho(plus)
    checks.append(
        ("partner_vs_parity_route", float(np.max(np.abs(rho_pair.matrix - rho_parity.matrix))), 1e-14)
    )

    P = outer_product(plus.psi, plus.psi.parity_flip())
    res_l, res_r = verify_novikov(
        P, modes.couplings, modes.omegas, grid.t_max, parity_matrix=ops.parity
    )
    checks.append(("novikov_left", res_l, 1e-12))
    checks.append(("novikov_right", res_r, 1e-12))

    dim = 2 ** (1 + K)
    psi0 = np.zeros(dim, dtype=complex)
    psi0[2**K] = 1.0
    amps, _ = evolve_fock(model, [modes], psi0, grid, times=np.array([grid.t_max]))
    rho_or = partial_trace_system(amps[0], 1)
    checks.append(
        ("sse_reconstruction_vs_fock", float(np.max(np.abs(rho_pair.matrix - rho_or))), 1e-8)
    )

    gamma = 1.0
    mgrid = TimeGrid(4.0, 40000)
    mmodel = SingleDotThermal(1.0, bath)
    mtab = solve_u_thermal(mmodel, MarkovKernel(gamma), mgrid, store_functions=False)
    checks.append(
        ("markov_F1_equals_half_gamma", float(np.max(np.abs(mtab.F["F1"] - 0.5 * gamma))), 0.0)
    )
    mtraj = run_master(mmodel, mtab, np.diag([0.0, 1.0]).astype(complex))
    decay = np.exp(-gamma * mgrid.times())
    checks.append(
        ("markov_decay_vs_closed_form", float(np.max(np.abs(mtraj.rhos[:, 1, 1].real - decay))), 1e-8)
    )

    lines = []
    status = 0
    for name, value, tol in checks:
        ok = value <= tol
        if not ok:
            status = 1
        lines.append(f"{'PASS' if ok else 'FAIL'} {name} residual={value:.3e} tol={tol:.1e}")
    (out / "summary.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    sys.stdout.write("\n".join(lines) + "\n")
    _write_metadata(out / "metadata.txt", cfg, None, {})
    return status


def _mask_element(alg: GrassmannAlgebra, mask: int):
    from .grassmann import GrassmannElement

    return GrassmannElement(alg, {mask: 1.0 + 0.0j})


# ---------------------------------------------------------------------------
# entry points
# ---------------------------------------------------------------------------


def _sweep(args) -> int:
    base_text = Path(args.config).read_text(encoding="utf-8") if Path(args.config).exists() else None
    if base_text is None:
        from .config import bundled_config_path

        p = bundled_config_path(args.config)
        if p is None:
            sys.stderr.write(f"config file not found: {args.config}\n")
            return 2
        base_text = p.read_text(encoding="utf-8")
    values = [v for v in (args.values.split(",") if args.values else []) if v != ""]
    out_root = Path(args.out)
    out_root.mkdir(parents=True, exist_ok=True)
    index_lines = []

    def one(value: str) -> tuple[str, int]:
        text = _override_key(base_text, args.param, value)
        try:
            cfg = parse_config(text)
        except ConfigError as err:
            sys.stderr.write(str(err) + "\n")
            return value, 2
        sub = out_root / f"{args.param}={value}"
        return value, run_scenario(cfg, sub)

    status = 0
    if values:
        workers = max(1, args.threads)
        if workers == 1:
            results = [one(v) for v in values]
        else:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                results = list(pool.map(one, values))
        for value, code in results:
            index_lines.append(f"{args.param}={value} exit={code}")
            status = max(status, code)
    (out_root / "sweep_index.txt").write_text(
        "\n".join(index_lines) + ("\n" if index_lines else ""), encoding="utf-8"
    )
    return status


def _override_key(text: str, key: str, value: str) -> str:
    lines = []
    replaced = False
    for raw in text.splitlines():
        stripped = raw.split("#", 1)[0].strip()
        if stripped.startswith(key) and stripped[len(key) :].lstrip().startswith("="):
            lines.append(f"{key} = {value}")
            replaced = True
        else:
            lines.append(raw)
    if not replaced:
        lines.append(f"{key} = {value}")
    return "\n".join(lines)


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="fermisse",
        description="Non-Markovian fermionic open-system scenarios: solve, propagate, validate.",
    )
    sub = parser.add_subparsers(dest="verb", required=True)

    p_run = sub.add_parser("run", help="execute one scenario config")
    p_run.add_argument("--config", required=True)
    p_run.add_argument("--out", default=None, help="output directory (overrides run.out)")
    p_run.add_argument("--tolerance", type=float, default=None)
    p_run.add_argument("--threads", type=int, default=1)

    p_sweep = sub.add_parser("sweep", help="run a scenario for several values of one key")
    p_sweep.add_argument("--config", required=True)
    p_sweep.add_argument("--param", required=True, help="dotted config key to override")
    p_sweep.add_argument("--values", required=True, help="comma-separated values")
    p_sweep.add_argument("--out", default="sweep_out")
    p_sweep.add_argument("--threads", type=int, default=1)

    p_val = sub.add_parser("validate", help="exact-calculus and reconstruction checks")
    p_val.add_argument("--config", default=None)
    p_val.add_argument("--out", default="validate_out")
    p_val.add_argument("--modes", type=int, default=2)
    p_val.add_argument("--threads", type=int, default=1, help="accepted for symmetry; single runs are sequential")

    p_oc = sub.add_parser("oracle-compare", help="propagate and diff against the exact oracle")
    p_oc.add_argument("--config", required=True)
    p_oc.add_argument("--out", default=None)
    p_oc.add_argument("--tolerance", type=float, default=None)
    p_oc.add_argument("--threads", type=int, default=1, help="accepted for symmetry; single runs are sequential")

    args = parser.parse_args(argv)

    if args.verb == "sweep":
        return _sweep(args)

    if args.verb == "validate":
        if args.config:
            try:
                cfg = load_config(args.config)
            except ConfigError as err:
                sys.stderr.write(str(err) + "\n")
                return 2
            cfg.mode = "validate"
        else:
            cfg = parse_config(
                "model.type = single_dot_thermal\n"
                "model.omega0_eV = 1.0\n"
                "bath.temperature_K = 0\n"
                "bath.mu_eV = -10\n"
                "bath.spectral.type = discrete\n"
                "bath.spectral.modes = 0.8:0.3; 1.25:0.4\n"
                "grid.t_max_hbar_per_eV = 1.0\n"
                "grid.n_steps = 400\n"
                "run.mode = validate\n"
            )
        cfg.validate_modes = args.modes
        return run_scenario(cfg, args.out)

    try:
        cfg = load_config(args.config)
    except ConfigError as err:
        sys.stderr.write(str(err) + "\n")
        return 2
    if args.verb == "oracle-compare":
        cfg.mode = "oracle-compare"
    if getattr(args, "tolerance", None) is not None:
        cfg.tolerance = args.tolerance
    out = args.out if args.out else cfg.out
    try:
        return run_scenario(cfg, out)
    except ConfigError as err:
        sys.stderr.write(str(err) + "\n")
        return 2


if __name__ == "__main__":
    sys.exit(main())
