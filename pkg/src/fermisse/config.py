"""Scenario configuration: flat key-tree text files with units in key names.

Format: one ``dotted.key = value`` per line, ``#`` comments, blank lines
ignored.  Keys carry their units explicitly (``temperature_K``, ``mu_eV``,
``t_max_hbar_per_eV``) because unit mistakes are the dominant failure mode
for these scenarios.  Parsing failures and schema violations are collected
and reported per field.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .bath import BathSpec, DiscreteModes, Lorentzian, MarkovKernel, TimeGrid, default_window, discretize_spectrum
from .models import DoubleDotTwoBaths, ManyFermionVacuum, ModelSpec, SingleDotThermal

__all__ = ["ConfigError", "ScenarioConfig", "parse_config", "load_config", "bundled_config_path"]

RUN_MODES = ("coefficients", "propagate", "validate", "oracle-compare")
MODEL_TYPES = ("many_fermion_vacuum", "single_dot_thermal", "double_dot_two_baths")
SPECTRAL_TYPES = ("lorentzian", "discrete", "markov")


class ConfigError(ValueError):
    """Config parse/validation failure with per-field diagnostics."""

    def __init__(self, problems: list[str]):
        self.problems = list(problems)
        super().__init__("configuration invalid:\n" + "\n".join(f"  - {p}" for p in problems))


def _parse_tree(text: str, problems: list[str]) -> dict:
    tree: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            problems.append(f"line {lineno}: expected 'key = value', got {raw.strip()!r}")
            continue
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            problems.append(f"line {lineno}: empty key")
            continue
        if key in tree:
            problems.append(f"line {lineno}: duplicate key {key!r}")
            continue
        tree[key] = value
    return tree


class _Fields:
    """Typed access to the flat key tree with error accumulation."""

    def __init__(self, tree: dict, problems: list[str]):
        self.tree = dict(tree)
        self.unused = set(tree)
        self.problems = problems

    def _take(self, key: str):
        self.unused.discard(key)
        return self.tree.get(key)

    def str_(self, key: str, default=None, choices=None, required=False):
        raw = self._take(key)
        if raw is None:
            if required:
                self.problems.append(f"{key}: required field missing")
            return default
        if choices and raw not in choices:
            self.problems.append(f"{key}: {raw!r} not one of {sorted(choices)}")
            return default
        return raw

    def float_(self, key: str, default=None, required=False, minimum=None):
        raw = self._take(key)
        if raw is None:
            if required:
                self.problems.append(f"{key}: required field missing")
            return default
        try:
            val = float(raw)
        except ValueError:
            self.problems.append(f"{key}: not a number: {raw!r}")
            return default
        if minimum is not None and not val >= minimum:
            self.problems.append(f"{key}: must be >= {minimum}, got {val}")
            return default
        return val

    def int_(self, key: str, default=None, required=False, minimum=None):
        raw = self._take(key)
        if raw is None:
            if required:
                self.problems.append(f"{key}: required field missing")
            return default
        try:
            val = int(raw)
        except ValueError:
            self.problems.append(f"{key}: not an integer: {raw!r}")
            return default
        if minimum is not None and val < minimum:
            self.problems.append(f"{key}: must be >= {minimum}, got {val}")
            return default
        return val

    def bool_(self, key: str, default=False):
        raw = self._take(key)
        if raw is None:
            return default
        if raw.lower() in ("true", "yes", "1"):
            return True
        if raw.lower() in ("false", "no", "0"):
            return False
        self.problems.append(f"{key}: not a boolean: {raw!r}")
        return default

    def float_list(self, key: str, default=None, required=False):
        raw = self._take(key)
        if raw is None:
            if required:
                self.problems.append(f"{key}: required field missing")
            return default
        try:
            return [float(x) for x in raw.split(",") if x.strip()]
        except ValueError:
            self.problems.append(f"{key}: not a comma-separated number list: {raw!r}")
            return default


def _parse_bath(fields: _Fields, prefix: str) -> tuple[BathSpec | None, MarkovKernel | None, int]:
    """Returns (bath, markov_marker, n_modes). Markov baths carry no BathSpec."""
    kind = fields.str_(
        f"{prefix}.spectral.type", choices=SPECTRAL_TYPES, required=True
    )
    if kind == "markov":
        gamma = fields.float_(f"{prefix}.spectral.gamma_eV", required=True)
        if gamma is None or gamma <= 0:
            fields.problems.append(f"{prefix}.spectral.gamma_eV: must be > 0")
            return None, None, 0
        return None, MarkovKernel(gamma), 0

    temperature = fields.float_(f"{prefix}.temperature_K", required=True, minimum=0.0)
    mu = fields.float_(f"{prefix}.mu_eV", required=True)
    if kind == "lorentzian":
        gamma = fields.float_(f"{prefix}.spectral.gamma_eV", required=True)
        bw = fields.float_(f"{prefix}.spectral.b", required=True)
        w0 = fields.float_(f"{prefix}.spectral.omega0_eV", required=True)
        n_modes = fields.int_(f"{prefix}.modes", default=8, minimum=1)
        lo = fields.float_(f"{prefix}.window_lo_eV")
        hi = fields.float_(f"{prefix}.window_hi_eV")
        if None in (gamma, bw, w0, temperature, mu, n_modes):
            return None, None, 0
        try:
            lor = Lorentzian(gamma, bw, w0)
        except ValueError as err:
            fields.problems.append(f"{prefix}.spectral: {err}")
            return None, None, 0
        if lo is None or hi is None:
            lo, hi = default_window(lor)
        try:
            modes = discretize_spectrum(lor, lo, hi, n_modes)
        except ValueError as err:
            fields.problems.append(f"{prefix}.window: {err}")
            return None, None, 0
        return BathSpec(modes, temperature, mu), None, n_modes

    # explicit discrete modes: "omega:coupling; omega:coupling; ..."
    raw = fields.str_(f"{prefix}.spectral.modes", required=True)
    if raw is None or temperature is None or mu is None:
        return None, None, 0
    omegas, couplings = [], []
    for item in raw.split(";"):
        item = item.strip()
        if not item:
            continue
        parts = item.split(":")
        if len(parts) != 2:
            fields.problems.append(
                f"{prefix}.spectral.modes: expected 'omega:coupling', got {item!r}"
            )
            return None, None, 0
        try:
            omegas.append(float(parts[0]))
            couplings.append(float(parts[1]))
        except ValueError:
            fields.problems.append(f"{prefix}.spectral.modes: not numeric: {item!r}")
            return None, None, 0
    try:
        modes = DiscreteModes(np.array(omegas), np.array(couplings))
    except ValueError as err:
        fields.problems.append(f"{prefix}.spectral.modes: {err}")
        return None, None, 0
    return BathSpec(modes, temperature, mu), None, len(omegas)


@dataclass(eq=False)
class ScenarioConfig:
    model: ModelSpec | None
    markov: MarkovKernel | None
    grid: TimeGrid
    mode: str
    out: str
    initial: str
    tolerance: float | None
    solver_tol: float
    solver_max_iter: int
    write_kernels: bool
    write_coefficients: bool
    validate_modes: int
    raw: dict = field(default_factory=dict)


def parse_config(text: str) -> ScenarioConfig:
    problems: list[str] = []
    tree = _parse_tree(text, problems)
    fields = _Fields(tree, problems)

    mtype = fields.str_("model.type", choices=MODEL_TYPES, required=True)
    mode = fields.str_("run.mode", choices=RUN_MODES, required=True)
    out = fields.str_("run.out", default="out")
    initial = fields.str_("run.initial", default="excited")
    tolerance = fields.float_("run.tolerance")
    write_kernels = fields.bool_("run.write_kernels", default=False)
    write_coefficients = fields.bool_("run.write_coefficients", default=True)
    solver_tol = fields.float_("solver.tol", default=1e-10)
    solver_max_iter = fields.int_("solver.max_iter", default=200, minimum=1)
    validate_modes = fields.int_("run.validate_modes", default=2, minimum=1)

    t_max = fields.float_("grid.t_max_hbar_per_eV", required=(mode != "validate"))
    n_steps = fields.int_("grid.n_steps", required=(mode != "validate"), minimum=2)
    grid = None
    if t_max is not None and n_steps is not None:
        try:
            grid = TimeGrid(t_max, n_steps)
        except ValueError as err:
            problems.append(f"grid: {err}")
    elif mode == "validate":
        grid = TimeGrid(1.0, 400)

    model: ModelSpec | None = None
    markov: MarkovKernel | None = None
    if mtype == "many_fermion_vacuum":
        omegas = fields.float_list("model.omegas_eV", required=True)
        bath, markov, _ = _parse_bath(fields, "bath")
        if omegas and (bath is not None or markov is not None):
            model = ManyFermionVacuum(tuple(omegas), bath) if bath else None
            if markov is not None:
                problems.append("bath.spectral.type: markov marker requires single_dot_thermal")
    elif mtype == "single_dot_thermal":
        w0 = fields.float_("model.omega0_eV", required=True)
        bath, markov, _ = _parse_bath(fields, "bath")
        if w0 is not None:
            if bath is not None:
                model = SingleDotThermal(w0, bath)
            elif markov is not None:
                # delta-correlation bath: keep a placeholder spec for operators
                model = SingleDotThermal(
                    w0, BathSpec(DiscreteModes(np.array([w0]), np.array([0.0])), 0.0, 0.0)
                )
    elif mtype == "double_dot_two_baths":
        w1 = fields.float_("model.omega1_eV", required=True)
        w2 = fields.float_("model.omega2_eV", required=True)
        g_re = fields.float_("model.g_re_eV", default=0.0)
        g_im = fields.float_("model.g_im_eV", default=0.0)
        bath1, mk1, _ = _parse_bath(fields, "bath1")
        bath2, mk2, _ = _parse_bath(fields, "bath2")
        if mk1 is not None or mk2 is not None:
            problems.append("bath1/bath2: markov marker not supported for the double dot")
        if None not in (w1, w2) and bath1 is not None and bath2 is not None:
            model = DoubleDotTwoBaths(w1, w2, complex(g_re, g_im), bath1, bath2)
    if mtype is not None and model is None and markov is None and not problems:
        problems.append("model: could not be constructed from the given fields")

    for key in sorted(fields.unused):
        problems.append(f"{key}: unknown field")
    if problems:
        raise ConfigError(problems)
    return ScenarioConfig(
        model=model,
        markov=markov,
        grid=grid,
        mode=mode,
        out=out,
        initial=initial,
        tolerance=tolerance,
        solver_tol=solver_tol,
        solver_max_iter=solver_max_iter,
        write_kernels=write_kernels,
        write_coefficients=write_coefficients,
        validate_modes=validate_modes,
        raw=tree,
    )


def load_config(path: str | Path) -> ScenarioConfig:
    path = Path(path)
    if not path.exists():
        bundled = bundled_config_path(str(path))
        if bundled is not None:
            path = bundled
        else:
            raise ConfigError([f"config file not found: {path}"])
    return parse_config(path.read_text(encoding="utf-8"))


def bundled_config_path(name: str) -> Path | None:
    """Resolve a bundled scenario name like ``fig2a`` to its file."""
    base = Path(__file__).parent / "configs"
    for cand in (name, f"{name}.cfg"):
        p = base / cand
        if p.exists():
            return p
    return None
