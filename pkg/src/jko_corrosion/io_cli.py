"""Run configuration, simulation driver, refinement studies and the command line."""
from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import logging
import math
import os
import sys
import tempfile
from dataclasses import dataclass, field

import numpy as np

from .core import (DEFAULT_VARTHETA, ConfigError, GridDensity, ModelParams, PenaltyParams,
                   State, Trajectory, l1_distance, lyapunov, remap)
from .diagnostics import (DiagnosticsLedger, bounds_check, dissipation_ledger_update,
                          hstar_norm, time_translate, trace_band_sum, vi_check, weak_residuals)
from .jko_stepper import SolverOptions, minimize_step
from .oracle_fd import OracleFailure, OracleState, run_oracle

log = logging.getLogger(__name__)

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_STRICT = 0, 1, 2, 3
CSV_COLUMNS = ("step", "t", "X", "M", "F", "w2_sq_step", "dsq_over_2tau", "penalty",
               "rho_at_0", "rho_at_X_minus", "dX_dt", "el_residual", "interface_residual",
               "trace_defect", "inner_iterations")
LYAPUNOV_SLACK = 1e-6
LEDGER_SLACK = 1e-8


def fmt(x: float) -> str:
    return format(float(x), ".17g")


# ------------------------------------------------------------------ config

@dataclass(frozen=True)
class ModelSection:
    alpha: float
    lam: float
    beta: float
    theta: float


@dataclass(frozen=True)
class InitialSection:
    X0: float
    rho0_kind: str
    rho0_value: float | None = None
    rho0_left: float | None = None
    rho0_right: float | None = None
    rho0_table: tuple | None = None


@dataclass(frozen=True)
class DiscretizationSection:
    n_cells: int
    tau: float
    t_final: float
    vartheta: float = DEFAULT_VARTHETA
    delta0: float = 1.0
    epsilon_K: float = 1e-3


@dataclass(frozen=True)
class SolverSection:
    max_iters: int = 500
    grad_tol: float | None = None
    j_tol: float = 1e-13


@dataclass(frozen=True)
class OutputsSection:
    csv_path: str = ""
    json_path: str = ""
    sample_every: int = 1


@dataclass(frozen=True)
class FlagsSection:
    strict: bool = False
    oracle: bool = False
    best_effort: bool = False


@dataclass(frozen=True)
class RunConfig:
    model: ModelSection
    initial: InitialSection
    discretization: DiscretizationSection
    solver: SolverSection = SolverSection()
    outputs: OutputsSection = OutputsSection()
    flags: FlagsSection = FlagsSection()

    @property
    def params(self) -> ModelParams:
        m = self.model
        return ModelParams(m.alpha, m.lam, m.beta, m.theta)

    @property
    def n_steps(self) -> int:
        return int(round(self.discretization.t_final / self.discretization.tau))

    def solver_options(self) -> SolverOptions:
        s = self.solver
        return SolverOptions(max_iters=s.max_iters, grad_tol=s.grad_tol, j_tol=s.j_tol)

    def initial_density(self) -> GridDensity:
        return initial_density(self.initial, self.discretization.n_cells)

    def penalty0(self, warn: bool = False) -> PenaltyParams:
        d = self.discretization
        return PenaltyParams.from_density(self.initial_density(), self.params, d.tau,
                                          d.vartheta, d.delta0, d.epsilon_K, warn)

    def replace(self, **sections) -> "RunConfig":
        """Copy with some fields swapped, e.g. ``replace(discretization={"tau": 5e-4})``."""
        kw = {}
        for name, changes in sections.items():
            kw[name] = dataclasses.replace(getattr(self, name), **changes)
        return dataclasses.replace(self, **kw)


_SECTIONS = {"model": ModelSection, "initial": InitialSection,
             "discretization": DiscretizationSection, "solver": SolverSection,
             "outputs": OutputsSection, "flags": FlagsSection}
_KEY_ALIASES = {("model", "lambda"): "lam"}
_KEY_NAMES = {("model", "lam"): "lambda"}
_RHO0_KEYS = {"constant": ("rho0_value",), "affine": ("rho0_left", "rho0_right"),
              "table": ("rho0_table",)}


def initial_density(init: InitialSection, n_cells: int) -> GridDensity:
    X0 = init.X0
    if init.rho0_kind == "constant":
        return GridDensity(X0, np.full(n_cells, init.rho0_value))
    if init.rho0_kind == "affine":
        x = X0 * (np.arange(n_cells) + 0.5) / n_cells
        v = init.rho0_left + (init.rho0_right - init.rho0_left) * x / X0
        return GridDensity(X0, np.maximum(v, 1e-12))
    table = GridDensity(X0, np.asarray(init.rho0_table, dtype=float))
    return table if table.n_cells == n_cells else remap(table, X0, n_cells)


def _initial_trace(init: InitialSection) -> float:
    if init.rho0_kind == "constant":
        return init.rho0_value
    if init.rho0_kind == "affine":
        return init.rho0_left
    return float(init.rho0_table[0])


def _convert(section: str, name: str, ftype, raw: str):
    key = f"{section}.{_KEY_NAMES.get((section, name), name)}"
    t = str(ftype)
    try:
        if raw.strip().lower() in ("none", "") and "None" in t:
            return None
        if t.startswith("bool"):
            low = raw.strip().lower()
            if low not in ("true", "false"):
                raise ValueError(raw)
            return low == "true"
        if t.startswith("int"):
            return int(raw)
        if t.startswith("float"):
            return float(raw)
        if t.startswith("tuple"):
            return tuple(float(v) for v in raw.split(",") if v.strip())
        return raw.strip()
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r}") from None


def validate(cfg: RunConfig) -> RunConfig:
    p = cfg.params  # (H1) and positivity of alpha, lambda
    init, disc = cfg.initial, cfg.discretization
    if not (math.isfinite(init.X0) and init.X0 > 0.0):
        raise ConfigError("initial.X0 must be > 0")
    if init.rho0_kind not in _RHO0_KEYS:
        raise ConfigError("initial.rho0_kind must be one of constant, affine, table")
    for k in _RHO0_KEYS[init.rho0_kind]:
        if getattr(init, k) is None:
            raise ConfigError(f"missing key: initial.{k}")
    if disc.n_cells < 1:
        raise ConfigError("discretization.n_cells must be >= 1")
    if not 0.0 < disc.tau < 1.0:
        raise ConfigError("discretization.tau must lie in (0, 1)")
    if not (math.isfinite(disc.t_final) and disc.t_final >= 0.0):
        raise ConfigError("discretization.t_final must be >= 0")
    if not 0.0 < disc.vartheta < 0.5:
        raise ConfigError("discretization.vartheta must lie in (0, 1/2)")
    if not disc.delta0 > 0.0:
        raise ConfigError("discretization.delta0 must be > 0")
    if not disc.epsilon_K > 0.0:
        raise ConfigError("discretization.epsilon_K must be > 0")
    if cfg.solver.max_iters < 1:
        raise ConfigError("solver.max_iters must be >= 1")
    if cfg.outputs.sample_every < 1:
        raise ConfigError("outputs.sample_every must be >= 1")
    try:
        d = cfg.initial_density()
    except ValueError as exc:
        raise ConfigError(f"rho0 must be strictly positive and finite ({exc})") from None
    if init.rho0_kind == "affine":
        lo = min(init.rho0_left, init.rho0_right)
        hi = max(init.rho0_left, init.rho0_right)
    else:
        lo, hi = float(d.values.min()), float(d.values.max())
    if not lo > 0.0:
        raise ConfigError("rho0 must be > 0")
    if hi > 1.0:
        raise ConfigError(f"rho0 must be <= 1 (max is {hi!r})")
    r0 = _initial_trace(init)
    if not p.rho_minus <= r0 <= p.rho_plus:
        raise ConfigError(f"rho0(0) = {r0!r} must lie in [rho_minus, rho_plus] = "
                          f"[{p.rho_minus!r}, {p.rho_plus!r}]")
    return cfg


def parse_config(text: str) -> RunConfig:
    """Flat ``section.key = value`` lines; ``#`` comments; ``derived.*`` lines are ignored."""
    raw: dict = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, val = (s.strip() for s in line.split("=", 1))
        if "." not in key:
            raise ConfigError(f"line {lineno}: key {key!r} needs a section prefix")
        sec, name = key.split(".", 1)
        if sec == "derived":
            continue
        if sec not in _SECTIONS:
            raise ConfigError(f"unknown section in key {key!r}")
        name = _KEY_ALIASES.get((sec, name), name)
        fields = {f.name: f for f in dataclasses.fields(_SECTIONS[sec])}
        if name not in fields:
            raise ConfigError(f"unknown key {key!r}")
        if (sec, name) in raw:
            raise ConfigError(f"duplicate key {key!r}")
        raw[(sec, name)] = _convert(sec, name, fields[name].type, val)
    kwargs = {}
    for sec, cls in _SECTIONS.items():
        args = {}
        for f in dataclasses.fields(cls):
            if (sec, f.name) in raw:
                args[f.name] = raw[(sec, f.name)]
            elif f.default is dataclasses.MISSING:
                raise ConfigError(f"missing key: {sec}.{_KEY_NAMES.get((sec, f.name), f.name)}")
        kwargs[sec] = cls(**args)
    return validate(RunConfig(**kwargs))


def _value_text(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return fmt(v)
    if isinstance(v, tuple):
        return ",".join(fmt(x) for x in v)
    return str(v)


def config_items(cfg: RunConfig) -> list:
    """Input keys in fixed order, then the derived constants."""
    items = []
    for sec in _SECTIONS:
        obj = getattr(cfg, sec)
        for f in dataclasses.fields(obj):
            v = getattr(obj, f.name)
            if sec == "initial" and f.name.startswith("rho0_") and f.name != "rho0_kind" and v is None:
                continue
            items.append((f"{sec}.{_KEY_NAMES.get((sec, f.name), f.name)}", v))
    p, pp = cfg.params, cfg.penalty0()
    for k, v in (("rho_minus", p.rho_minus), ("rho_plus", p.rho_plus), ("a", pp.a), ("b", pp.b),
                 ("A", pp.A), ("B0", pp.B0), ("B0_prime", pp.B0_prime), ("m_tau", pp.m_tau),
                 ("K_tau", pp.K_tau), ("b_gap_floored", pp.b_gap_floored)):
        items.append((f"derived.{k}", v))
    return items


def emit_config(cfg: RunConfig) -> str:
    return "".join(f"{k} = {_value_text(v)}\n" for k, v in config_items(cfg))


# ------------------------------------------------------------------ output

def _json_text(obj, indent: int = 0) -> str:
    """JSON with floats in 17 significant digits and a fixed layout."""
    pad = "  " * (indent + 1)
    end = "  " * indent
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        body = ",\n".join(f"{pad}{_json_text(str(k))}: {_json_text(v, indent + 1)}" for k, v in obj.items())
        return "{\n" + body + "\n" + end + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        body = ",\n".join(pad + _json_text(v, indent + 1) for v in obj)
        return "[\n" + body + "\n" + end + "]"
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if obj is None:
        return "null"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return fmt(x) if math.isfinite(x) else f'"{x}"'
    s = str(obj)
    out = ['"']
    for ch in s:
        if ch in '"\\':
            out.append("\\" + ch)
        elif ord(ch) < 0x20:
            out.append(f"\\u{ord(ch):04x}")
        else:
            out.append(ch)
    out.append('"')
    return "".join(out)


def atomic_write(path: str, text: str) -> None:
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# ------------------------------------------------------------------ driver

@dataclass
class RunRecord:
    """Everything a run produced beyond the trajectory and ledger."""

    rows: list = field(default_factory=list)
    failures: list = field(default_factory=list)
    hard_violations: list = field(default_factory=list)
    counters: dict = field(default_factory=dict)
    summary: dict = field(default_factory=dict)
    oracle: dict = field(default_factory=dict)


def _csv_row(step, s: State, prev: State | None, report, p: ModelParams, tau: float) -> list:
    d = s.density
    if report is None:
        w2 = dsq2 = pen = dxdt = el = itf = tr = 0.0
        its = 0
    else:
        w2, dsq2, pen = report.w2_sq, report.d_sq / (2.0 * tau), report.penalty_value
        dxdt = (s.X - prev.X) / tau
        el, itf, tr, its = (report.el_residual, report.interface_residual, report.trace_defect,
                            report.inner_iterations)
    return [step, s.t, s.X, s.mass_excess, lyapunov(s, p), w2, dsq2, pen, d.rho_at_0,
            d.rho_at_X_minus, dxdt, el, itf, tr, its]


def _aggregate(step: int, found: list, source: str) -> list:
    out = []
    for kind in sorted({v.kind for v in found}):
        vs = [v for v in found if v.kind == kind]
        worst = max(vs, key=lambda v: v.magnitude)
        out.append({"step": step, "kind": kind, "source": source, "count": len(vs),
                    "cell": worst.cell, "magnitude": worst.magnitude})
    return out


def simulate(cfg: RunConfig) -> tuple[Trajectory, DiagnosticsLedger, int, RunRecord]:
    """Run the scheme and all per-step checks; nothing is written."""
    p = cfg.params
    disc = cfg.discretization
    tau = disc.tau
    opts = cfg.solver_options()
    s = State.from_density(0.0, cfg.initial_density())
    traj = Trajectory(p, [s])
    ledger = DiagnosticsLedger.start(s, p)
    rec = RunRecord()
    pp0 = cfg.penalty0(warn=True)
    corrected_upper = max(pp0.b, 0.0)
    rec.rows.append(_csv_row(0, s, None, None, p, tau))
    counters = dict(steps=0, inner_iterations=0, objective_evaluations=0, sweeps=0, penalty_floors=0)
    exit_code = EXIT_OK
    f_max = abs(ledger.lyapunov_series[0])
    for n in range(1, cfg.n_steps + 1):
        pp = PenaltyParams.from_density(s.density, p, tau, disc.vartheta, disc.delta0, disc.epsilon_K,
                                        warn=False)
        counters["penalty_floors"] += int(pp.b_gap_floored)
        new, rep = minimize_step(s, pp, p, tau, opts)
        new = State(n * tau, new.density, new.mass_excess)
        counters["steps"] += 1
        counters["inner_iterations"] += rep.inner_iterations
        counters["objective_evaluations"] += rep.objective_evaluations
        counters["sweeps"] += rep.sweeps
        if not rep.accepted:
            rec.failures.append({"step": n, "message": rep.message})
            if not cfg.flags.best_effort:
                exit_code = EXIT_SOLVER
                break
        dissipation_ledger_update(ledger, s, new, rep, p)
        traj.states.append(new)
        traj.reports.append(rep)
        ledger.bound_violations += _aggregate(n, bounds_check(new, pp0), "initial-data")
        ledger.step_bound_violations += _aggregate(n, bounds_check(new, pp), "previous-step")
        ledger.corrected_bound_violations += _aggregate(
            n, [v for v in bounds_check(new, pp0, upper=corrected_upper) if v.kind.endswith("log-bound")],
            "initial-data-corrected")
        if new.X < s.X:
            rec.hard_violations.append({"step": n, "kind": "interface-decrease", "magnitude": s.X - new.X})
        f_max = max(f_max, abs(ledger.lyapunov_series[-1]))
        dF = ledger.lyapunov_series[-1] - ledger.lyapunov_series[-2]
        if dF > LYAPUNOV_SLACK * f_max:
            rec.hard_violations.append({"step": n, "kind": "lyapunov-increase", "magnitude": dF})
        if rep.j_final < rep.j_lower_bound - 1e-9:
            rec.hard_violations.append({"step": n, "kind": "objective-below-bound",
                                        "magnitude": rep.j_lower_bound - rep.j_final})
        if n % cfg.outputs.sample_every == 0 or n == cfg.n_steps:
            rec.rows.append(_csv_row(n, new, s, rep, p, tau))
        s = new
    if rec.rows[-1][0] != len(traj) - 1:
        k = len(traj) - 1
        rec.rows.append(_csv_row(k, traj.states[-1], traj.states[-2] if k else None,
                                 traj.reports[-1] if k else None, p, tau))
    if ledger.all_accepted and ledger.apriori_margin < -LEDGER_SLACK:
        rec.hard_violations.append({"step": len(traj) - 1, "kind": "apriori-sum",
                                    "magnitude": -ledger.apriori_margin})
    if traj.interface[-1] > ledger.interface_bound + 1e-8:
        rec.hard_violations.append({"step": len(traj) - 1, "kind": "interface-bound",
                                    "magnitude": traj.interface[-1] - ledger.interface_bound})
    for v in ledger.bound_violations:
        rec.hard_violations.append(dict(v))
    rec.counters = counters
    if cfg.flags.oracle:
        rec.oracle = oracle_comparison(cfg, traj)
        counters["oracle_steps"] = rec.oracle.get("steps", 0)
    rec.summary = _summary(cfg, traj, ledger, rec, pp0)
    if exit_code == EXIT_OK and cfg.flags.strict and rec.hard_violations:
        exit_code = EXIT_STRICT
    return traj, ledger, exit_code, rec


def oracle_comparison(cfg: RunConfig, traj: Trajectory) -> dict:
    p = cfg.params
    d0 = cfg.initial_density()
    T = traj.times[-1]
    if T <= 0.0:
        return {"steps": 0, "l1_final": 0.0}
    try:
        ref = run_oracle(OracleState.from_density(0.0, d0), T, cfg.discretization.tau, p,
                         sample_every=max(1, cfg.n_steps))
    except OracleFailure as exc:
        return {"steps": 0, "error": str(exc)}
    fin = ref.states[-1]
    return {"steps": int(round(T / cfg.discretization.tau)),
            "l1_final": l1_distance(traj.states[-1].density, fin.density),
            "X_final": fin.X, "mass_excess_final": fin.mass_excess,
            "rho_at_0_final": fin.density.rho_at_0,
            "events": [e for e in ref.events if e["kind"] != "conservation"][:50],
            "conservation_defect": ref.events[-1]["max_defect"]}


def _summary(cfg, traj, led: DiagnosticsLedger, rec: RunRecord, pp0: PenaltyParams) -> dict:
    reps = traj.reports
    qual = [r.trace_defect for r in reps if abs(r.delta_mass) > 1e-10]
    inc = led.lyapunov_increments()
    out = {
        "steps_completed": len(traj) - 1,
        "all_accepted": led.all_accepted,
        "t_final": traj.times[-1],
        "X_final": traj.interface[-1],
        "mass_excess_final": traj.masses[-1],
        "cumulative_dsq_over_2tau": led.cumulative_dsq_over_2tau,
        "cumulative_theta_absdM": led.cumulative_theta_absdM,
        "cumulative_penalty": led.cumulative_penalty,
        "dissipation_sum": led.dissipation_sum,
        "apriori_rhs": led.apriori_rhs,
        "apriori_margin": led.apriori_margin,
        "interface_bound": led.interface_bound,
        "interface_bound_margin": led.interface_bound - traj.interface[-1],
        "lyapunov_initial": led.lyapunov_series[0],
        "lyapunov_final": led.lyapunov_series[-1],
        "lyapunov_max_increment": float(inc.max()) if inc.size else 0.0,
        "channel_bulk_total": float(np.sum(led.channel_bulk)) * cfg.discretization.tau,
        "channel_interface_total": float(np.sum(led.channel_interface)) * cfg.discretization.tau,
        "channel_boundary_total": float(np.sum(led.channel_boundary)) * cfg.discretization.tau,
        "max_el_residual": max((r.el_residual for r in reps), default=0.0),
        "max_interface_residual": max((r.interface_residual for r in reps), default=0.0),
        "max_trace_defect_exchange_steps": max(qual, default=0.0),
        "exchange_steps": len(qual),
        "trace_band_sum": trace_band_sum(traj),
        "min_j_bound_margin": min((r.j_final - r.j_lower_bound for r in reps), default=0.0),
        "min_tight_j_bound_margin": min((r.j_final - r.j_lower_bound_tight for r in reps), default=0.0),
        "penalty_initial": dataclasses.asdict(pp0),
        "bound_violation_steps": len({v["step"] for v in led.bound_violations}),
        "step_bound_violation_steps": len({v["step"] for v in led.step_bound_violations}),
        "corrected_bound_violation_steps": len({v["step"] for v in led.corrected_bound_violations}),
        "failures": rec.failures,
    }
    if rec.oracle:
        out["oracle"] = rec.oracle
    return out


def csv_text(rows: list) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in rows:
        w.writerow([str(v) if isinstance(v, (int, np.integer)) else fmt(v) for v in r])
    return buf.getvalue()


def json_summary(cfg: RunConfig, led: DiagnosticsLedger, rec: RunRecord) -> str:
    doc = {
        "config_echo": {k: v for k, v in config_items(cfg)},
        "ledger": rec.summary,
        "violations": {"hard": rec.hard_violations,
                       "log_and_slope_bounds_initial_data": led.bound_violations,
                       "log_and_slope_bounds_previous_step": led.step_bound_violations,
                       "log_bounds_corrected": led.corrected_bound_violations},
        "timings": rec.counters,
    }
    return _json_text(doc) + "\n"


def _resolve(path: str, default: str, out_dir: str | None) -> str:
    path = path or default
    if out_dir and not os.path.isabs(path):
        return os.path.join(out_dir, path)
    return path


def run_simulation(cfg: RunConfig, out_dir: str | None = None
                   ) -> tuple[Trajectory, DiagnosticsLedger, int]:
    """Run, write the CSV and JSON outputs (when paths are set) and return the exit code."""
    traj, led, code, rec = simulate(cfg)
    o = cfg.outputs
    if o.csv_path or out_dir:
        atomic_write(_resolve(o.csv_path, "trajectory.csv", out_dir), csv_text(rec.rows))
    if o.json_path or out_dir:
        atomic_write(_resolve(o.json_path, "summary.json", out_dir), json_summary(cfg, led, rec))
    return traj, led, code


# ------------------------------------------------------------------ refinement

@dataclass
class RefinementReport:
    rows: list = field(default_factory=list)
    trajectories: list = field(default_factory=list)
    failed_level: int | None = None
    message: str = ""

    def column(self, key: str) -> np.ndarray:
        return np.array([r.get(key, np.nan) for r in self.rows], dtype=float)

    def table_text(self) -> str:
        keys = list(self.rows[0].keys()) if self.rows else []
        lines = [",".join(keys)]
        for r in self.rows:
            lines.append(",".join(str(r[k]) if isinstance(r[k], int) else fmt(r[k]) for k in keys))
        return "\n".join(lines) + "\n"

    def plot_script(self, table_name: str = "refinement.csv") -> str:
        return (
            "# columns: see the header of " + table_name + "\n"
            f"set datafile separator ','\n"
            "set logscale xy\n"
            "set xlabel 'tau'\n"
            f"plot '{table_name}' using 2:7 skip 1 with linespoints title 'L1 to previous level', \\\n"
            f"     '{table_name}' using 2:8 skip 1 with linespoints title 'H* to previous level', \\\n"
            f"     '{table_name}' using 2:9 skip 1 with linespoints title 'trace band sum'\n"
        )


def level_config(cfg: RunConfig, level: int) -> RunConfig:
    d = cfg.discretization
    return cfg.replace(discretization={"tau": d.tau / 2 ** level, "n_cells": d.n_cells * 2 ** level})


def refinement_study(cfg: RunConfig, levels: int, oracle: bool | None = None,
                     weak: bool = True, keep_trajectories: bool = False) -> RefinementReport:
    """Halve tau and double n_cells per level; compare consecutive final densities."""
    if levels < 2:
        raise ValueError("a refinement study needs at least two levels")
    use_oracle = cfg.flags.oracle if oracle is None else oracle
    rep = RefinementReport()
    prev = None
    for lev in range(levels):
        c = level_config(cfg, lev).replace(flags={"oracle": use_oracle, "strict": False})
        traj, led, code, rec = simulate(c)
        if code != EXIT_OK:
            rep.failed_level = lev
            rep.message = f"level {lev} exited with code {code}"
            break
        fin = traj.states[-1].density
        row = {"level": lev, "tau": c.discretization.tau, "n_cells": c.discretization.n_cells,
               "X_final": fin.X, "mass_excess_final": traj.masses[-1],
               "rho_at_0_final": fin.rho_at_0, "l1_to_previous": np.nan, "hstar_to_previous": np.nan,
               "trace_band_sum": trace_band_sum(traj)}
        if prev is not None:
            row["l1_to_previous"] = l1_distance(fin, prev)
            L = max(fin.X, prev.X)
            m = c.discretization.n_cells
            row["hstar_to_previous"] = hstar_norm(remap(fin, L, m).values - remap(prev, L, m).values, L)
        tt = time_translate(traj)
        row["time_translate_integral"] = tt.integral
        row["time_translate_series"] = tt.series_norm
        if weak and len(traj) >= 2:
            w = weak_residuals(traj)
            r0 = np.array([s.density.rho_at_0 for s in traj.states])
            r0 = np.clip(r0, c.params.rho_minus, c.params.rho_plus)
            vi = vi_check(traj, [c.params.rho_minus, 0.5 * (c.params.rho_minus + c.params.rho_plus),
                                 c.params.rho_plus], eta_paths=[r0])
            row["weak_rho_max"] = w.max_rho
            row["weak_x_max"] = w.max_x
            row["vi_min_margin"] = float(vi.min())
        if use_oracle:
            row["l1_to_oracle"] = rec.oracle.get("l1_final", np.nan)
        row["inner_iterations"] = rec.counters["inner_iterations"]
        rep.rows.append(row)
        if keep_trajectories:
            rep.trajectories.append(traj)
        prev = fin
    return rep


# ------------------------------------------------------------------ CLI

def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="jko-corrosion",
                                 description="Minimizing-movement solver for a 1D corrosion model.")
    ap.add_argument("--config", required=True, help="flat key = value configuration file")
    ap.add_argument("--oracle", action="store_true", help="also run the finite-difference reference")
    ap.add_argument("--strict", action="store_true", help="exit 3 on hard invariant violations")
    ap.add_argument("--best-effort", action="store_true", help="continue past rejected steps")
    ap.add_argument("--refine", type=int, default=0, metavar="K", help="run a K-level refinement study")
    ap.add_argument("--out-dir", default=None, help="directory for relative output paths")
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        with open(args.config, encoding="utf-8") as fh:
            cfg = parse_config(fh.read())
    except (OSError, ConfigError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    flags = {}
    if args.oracle:
        flags["oracle"] = True
    if args.strict:
        flags["strict"] = True
    if args.best_effort:
        flags["best_effort"] = True
    if flags:
        cfg = cfg.replace(flags=flags)
    if args.refine:
        try:
            rep = refinement_study(cfg, args.refine)
        except ValueError as exc:
            print(f"config error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        out = args.out_dir or "."
        atomic_write(os.path.join(out, "refinement.csv"), rep.table_text())
        atomic_write(os.path.join(out, "refinement.plot"), rep.plot_script())
        print(rep.table_text(), end="")
        return EXIT_SOLVER if rep.failed_level is not None else EXIT_OK
    _, led, code = run_simulation(cfg, args.out_dir)
    print(f"steps={led.steps} X_final={fmt(led.x_final)} exit={code}")
    return code


if __name__ == "__main__":
    sys.exit(main())
