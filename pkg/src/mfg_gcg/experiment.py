"""Run configuration, CFL-adjusted runs, stepsize sweeps and CSV emission."""
from __future__ import annotations

import csv
import json
import logging
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .gcg import (
    QAG,
    ExploitabilityBased,
    GCGResult,
    IterateState,
    OptimalGoldenSection,
    POverKPlusP,
    PowerAlpha,
    gcg_run,
)
from .grid import GridSpec, write_field_csv
from .model import (
    InfiniteCostError,
    KernelCongestion,
    LinearPrice,
    ProblemSpec,
    ZeroCongestion,
    momentum,
    von_mises_density,
)
from .pde import CflError, SolverError

log = logging.getLogger(__name__)

METRICS_HEADER = ["iter", "delta", "sigma", "eps_hat", "cost_J", "cost_J1", "cost_J2",
                  "d1", "d2", "qag_trials", "wall_ms"]
TIMING_HEADER = ["rule", "params", "iters_to_1e-3", "secs_to_1e-3", "iters_to_1e-4", "secs_to_1e-4"]
RATES_HEADER = ["rule", "fit_range", "slope", "r2"]
SOLVER_ERRORS = (CflError, SolverError, InfiniteCostError, FloatingPointError)


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# configuration

_SCHEMA: dict[str, dict[str, type | tuple[type, ...]]] = {
    "grid": {"nx": int, "nt": int},
    "model": {
        "d": int, "k": int, "T": (int, float), "nu": (int, float), "price_gain": (int, float),
        "congestion": str, "kernel_coefficients": list, "m0_concentration": (int, float),
        "m0_center": (int, float, list),
    },
    "stepsize": {
        "rule": str, "p": (int, float), "alpha": (int, float), "kappa": (int, float),
        "c": (int, float), "tau": (int, float), "max_trials": int, "C1": (int, float), "C2": (int, float),
    },
    "run": {
        "max_iters": int, "sigma_tol": (int, float), "snapshot_times": list, "seed": int,
        "timing": bool, "J_ref": (int, float), "compute_reference": bool, "reference_tol": (int, float),
        "cfl_adjust": bool, "max_nt": int,
    },
    "output": {"dir": str},
    "sweep": {"rules": list},
}

_RULE_KEYS = {
    "p_over_k_plus_p": {"p"},
    "power_alpha": {"alpha"},
    "qag": {"c", "tau", "max_trials"},
    "golden_section": {"kappa", "c", "tau", "max_trials"},
    "exploitability": {"C1", "C2"},
}


@dataclass
class RunConfig:
    nx: int = 10
    nt: int = 42
    d: int = 2
    k: int = 2
    T: float = 1.0
    nu: float = 0.005
    price_gain: float = 10.0
    congestion: str = "zero"
    kernel_coefficients: tuple[float, ...] = (0.0, 1.0)
    m0_concentration: float = 10.0
    m0_center: float | tuple[float, ...] = 0.25
    rule: Any = field(default_factory=lambda: OptimalGoldenSection(1e-3))
    sweep_rules: list = field(default_factory=list)
    max_iters: int = 250
    sigma_tol: float = 1e-4
    snapshot_times: tuple[float, ...] = (0.0, 0.5, 1.0)
    seed: int = 0
    timing: bool = True
    J_ref: float | None = None
    compute_reference: bool = False
    reference_tol: float = 1e-9
    cfl_adjust: bool = True
    max_nt: int = 20000
    out_dir: str | None = None

    def __post_init__(self):
        problems = []
        if self.nx < 4:
            problems.append("grid.nx must be >= 4")
        if self.nt < 2:
            problems.append("grid.nt must be >= 2")
        if not 1 <= self.d <= 3:
            problems.append("model.d must be 1, 2 or 3")
        if self.k < 1:
            problems.append("model.k must be >= 1")
        if self.k != self.d:
            problems.append("model.k must equal model.d (identity aggregation)")
        if not self.T > 0:
            problems.append("model.T must be positive")
        if not self.nu > 0:
            problems.append("model.nu must be positive")
        if self.price_gain < 0:
            problems.append("model.price_gain must be non-negative")
        if self.congestion not in ("zero", "kernel"):
            problems.append('model.congestion must be "zero" or "kernel"')
        if any(c < 0 for c in self.kernel_coefficients):
            problems.append("model.kernel_coefficients must be non-negative")
        if self.max_iters < 0:
            problems.append("run.max_iters must be >= 0")
        if not self.sigma_tol >= 0:
            problems.append("run.sigma_tol must be >= 0")
        if any(not 0 <= t <= self.T for t in self.snapshot_times):
            problems.append("run.snapshot_times must lie in [0, T]")
        if problems:
            raise ConfigError("; ".join(problems))

    @property
    def grid(self) -> GridSpec:
        return GridSpec(d=self.d, nx=self.nx, nt=self.nt, T=self.T)

    def problem(self) -> ProblemSpec:
        congestion = (KernelCongestion(tuple(self.kernel_coefficients))
                      if self.congestion == "kernel" else ZeroCongestion())
        return ProblemSpec(d=self.d, k=self.k, T=self.T, nu=self.nu, congestion=congestion,
                           price=LinearPrice(self.price_gain),
                           m0=von_mises_density(self.m0_center, self.m0_concentration))


def build_rule(table: dict[str, Any]):
    """Stepsize rule from a config table such as ``{"rule": "qag", "c": 0.25}``."""
    table = dict(table)
    name = table.pop("rule", None)
    if name not in _RULE_KEYS:
        raise ConfigError(f"unknown stepsize rule {name!r}; expected one of {sorted(_RULE_KEYS)}")
    extra = set(table) - _RULE_KEYS[name]
    if extra:
        raise ConfigError(f"unknown keys for rule {name!r}: {sorted(extra)}")
    try:
        if name == "p_over_k_plus_p":
            return POverKPlusP(float(table.get("p", 1.0)))
        if name == "power_alpha":
            return PowerAlpha(float(table.get("alpha", 0.6)))
        qag = QAG(float(table.get("c", 0.25)), float(table.get("tau", 0.9)), int(table.get("max_trials", 200)))
        if name == "qag":
            return qag
        if name == "golden_section":
            return OptimalGoldenSection(float(table.get("kappa", 1e-3)), qag)
        return ExploitabilityBased(table.get("C1"), table.get("C2"))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def parse_config(raw: dict[str, Any]) -> RunConfig:
    """Validate a parsed TOML document; unknown sections or keys are errors."""
    unknown = set(raw) - set(_SCHEMA)
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    kwargs: dict[str, Any] = {}
    for section, table in raw.items():
        if not isinstance(table, dict):
            raise ConfigError(f"[{section}] must be a table")
        for key, value in table.items():
            expected = _SCHEMA[section].get(key)
            if expected is None:
                raise ConfigError(f"unknown config key {section}.{key}")
            if isinstance(value, bool) and expected is not bool:
                raise ConfigError(f"{section}.{key} has the wrong type")
            if not isinstance(value, expected):
                raise ConfigError(f"{section}.{key} has the wrong type ({type(value).__name__})")

    grid = raw.get("grid", {})
    model = raw.get("model", {})
    run = raw.get("run", {})
    kwargs.update(grid)
    for key, value in model.items():
        if key == "kernel_coefficients":
            value = tuple(float(c) for c in value)
        elif key == "m0_center" and isinstance(value, list):
            value = tuple(float(c) for c in value)
        kwargs[key] = value
    for key, value in run.items():
        kwargs[key] = tuple(value) if key == "snapshot_times" else value
    if "stepsize" in raw:
        kwargs["rule"] = build_rule(raw["stepsize"])
    if "sweep" in raw:
        rules = raw["sweep"].get("rules", [])
        if not all(isinstance(r, dict) for r in rules):
            raise ConfigError("sweep.rules must be a list of tables")
        kwargs["sweep_rules"] = [build_rule(r) for r in rules]
    if "output" in raw:
        kwargs["out_dir"] = raw["output"].get("dir")
    for key in ("T", "nu", "price_gain", "m0_concentration", "sigma_tol", "J_ref", "reference_tol"):
        if key in kwargs:
            kwargs[key] = float(kwargs[key])
    return RunConfig(**kwargs)


def load_config(path: str | Path) -> RunConfig:
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"malformed config {path}: {exc}") from exc
    return parse_config(raw)


def default_sweep_rules() -> list:
    """Prescribed and adaptive rules run by ``sweep`` when the config lists none."""
    return (
        [POverKPlusP(p) for p in (1.0, 2.0, 5.0, 10.0)]
        + [PowerAlpha(a) for a in (0.6, 0.7, 0.8, 0.9)]
        + [QAG(0.25, 0.9), OptimalGoldenSection(1e-3), OptimalGoldenSection(1e-10), ExploitabilityBased()]
    )


def rule_label(rule) -> str:
    return re.sub(r"[^A-Za-z0-9_.+-]", "", f"{rule.name}_{rule.params.replace(';', '_')}")


# ---------------------------------------------------------------------------
# runs


@dataclass
class RunOutcome:
    result: GCGResult
    grid: GridSpec
    nt_requested: int
    cfl_adjustments: list[int]


def initial_nt(spec: ProblemSpec, grid: GridSpec) -> int:
    """Steps needed for the uncoupled first best response (speed bounded by ``|Dg|``)."""
    from .grid import backward_diff, forward_diff
    from .pde import stable_nt

    g = spec.terminal_cost(grid)
    speed = np.maximum(np.abs(forward_diff(g, grid)), np.abs(backward_diff(g, grid))).sum(axis=0).max()
    return max(grid.nt, stable_nt(grid, spec.nu, float(speed) / spec.lagrangian.weight))


def run_with_cfl(spec: ProblemSpec, grid: GridSpec, rule, *, max_iters: int, sigma_tol: float,
                 J_ref: float | None = None, timing: bool = True, cfl_adjust: bool = True,
                 max_nt: int = 20000, keep_fields: bool = False, callback=None) -> RunOutcome:
    """Run the GCG loop, raising ``nt`` and restarting whenever a solve violates the CFL bound.

    Each restart grows ``nt`` by at least half, and at least to the step count
    the failing step asked for. ``callback`` also sees the states of abandoned
    attempts.
    """
    requested = grid.nt
    adjustments: list[int] = []
    if cfl_adjust:
        nt = initial_nt(spec, grid)
        if nt != grid.nt:
            adjustments.append(nt)
            grid = grid.with_nt(nt)
    while True:
        try:
            result = gcg_run(spec, grid, rule, max_iters=max_iters, sigma_tol=sigma_tol,
                             J_ref=J_ref, timing=timing, keep_fields=keep_fields, callback=callback)
            return RunOutcome(result, grid, requested, adjustments)
        except CflError as exc:
            if not cfl_adjust:
                raise
            needed = math.ceil(grid.T / exc.report.dt_max * 1.05)
            nt = max(math.ceil(grid.nt * 1.5), needed)
            if nt > max_nt:
                raise
            log.info("%s; restarting with nt=%d", exc, nt)
            adjustments.append(nt)
            grid = grid.with_nt(nt)


def reference_cost(spec: ProblemSpec, grid: GridSpec, tol: float = 1e-9, max_iters: int = 500) -> float:
    """Minimum potential cost along a tight run on ``grid`` (no CFL adjustment).

    The exploitability rule needs no line search, which keeps fine time grids affordable.
    """
    result = gcg_run(spec, grid, ExploitabilityBased(), max_iters=max_iters, sigma_tol=tol,
                     timing=False)
    return float(result.costs.min())


def _fmt(value) -> str:
    if value is None or (isinstance(value, float) and math.isnan(value)):
        return ""
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return repr(float(value))


def metrics_rows(states: list[IterateState]) -> list[list[str]]:
    return [
        [_fmt(s.k), _fmt(s.delta), _fmt(s.sigma), _fmt(s.eps_hat), _fmt(s.J), _fmt(s.J1), _fmt(s.J2),
         _fmt(s.d1), _fmt(s.d2), _fmt(s.qag_trials), _fmt(s.wall_ms)]
        for s in states
    ]


def write_metrics(path: Path, states: list[IterateState]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(METRICS_HEADER)
        writer.writerows(metrics_rows(states))


def read_metrics(path: str | Path) -> dict[str, np.ndarray]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise ValueError(f"metrics file {path} has no rows")
    return {key: np.array([float(r[key]) if r[key] != "" else np.nan for r in rows])
            for key in rows[0]}


def write_snapshots(out: Path, outcome: RunOutcome, times) -> None:
    grid = outcome.grid
    fields = outcome.result.final.fields
    idx = sorted({min(grid.nt, int(round(t / grid.dt))) for t in times})
    ctrl = [min(n, grid.nt - 1) for n in idx]
    write_field_csv(out / "m_bar.csv", fields.mbar[idx], grid)
    write_field_csv(out / "u.csv", fields.u[idx], grid)
    write_field_csv(out / "v.csv", momentum(fields.v)[ctrl], grid, vector=True)


def threshold_hits(states: list[IterateState], threshold: float):
    for s in states:
        if s.sigma <= threshold:
            return s.k, s.wall_ms / 1e3
    return None, None


def write_run(out: Path, cfg: RunConfig, outcome: RunOutcome, rule) -> dict[str, Any]:
    out.mkdir(parents=True, exist_ok=True)
    states = outcome.result.states
    write_metrics(out / "metrics.csv", states)
    write_snapshots(out, outcome, cfg.snapshot_times)
    summary = {
        "rule": rule.name,
        "params": rule.params,
        "final_sigma": states[-1].sigma,
        "iterations": states[-1].k,
        "converged": outcome.result.converged,
        "wall_seconds": states[-1].wall_ms / 1e3,
        "nt_requested": outcome.nt_requested,
        "nt_used": outcome.grid.nt,
        "cfl_adjustments": outcome.cfl_adjustments,
        "J_ref": cfg.J_ref,
    }
    with open(out / "summary.json", "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
    return summary


def execute(cfg: RunConfig, rule, grid: GridSpec | None = None) -> RunOutcome:
    return run_with_cfl(cfg.problem(), grid or cfg.grid, rule, max_iters=cfg.max_iters,
                        sigma_tol=cfg.sigma_tol, J_ref=cfg.J_ref, timing=cfg.timing,
                        cfl_adjust=cfg.cfl_adjust, max_nt=cfg.max_nt)


def _resolve_reference(cfg: RunConfig, grid: GridSpec) -> RunConfig:
    if cfg.compute_reference and cfg.J_ref is None:
        from dataclasses import replace

        cfg = replace(cfg, J_ref=reference_cost(cfg.problem(), grid, cfg.reference_tol))
    return cfg


def run_single(cfg: RunConfig, out: Path) -> dict[str, Any]:
    outcome = execute(cfg, cfg.rule)
    if cfg.compute_reference and cfg.J_ref is None:
        cfg = _resolve_reference(cfg, outcome.grid)
        outcome = execute(cfg, cfg.rule, outcome.grid)
    return write_run(out, cfg, outcome, cfg.rule)


def run_sweep(cfg: RunConfig, out: Path) -> list[dict[str, Any]]:
    """Run every rule from the configured grid, each with its own CFL adjustment.

    A rule whose iterates outgrow ``max_nt`` or break the solver is recorded
    with ``"failed"`` in its summary and empty timing cells; the sweep goes on.
    """
    rules = cfg.sweep_rules or default_sweep_rules()
    out.mkdir(parents=True, exist_ok=True)
    summaries = []
    table = []
    references: dict[int, RunConfig] = {}
    for rule in rules:
        rule_out = out / rule_label(rule)
        try:
            outcome = execute(cfg, rule)
            if cfg.compute_reference and cfg.J_ref is None:
                nt = outcome.grid.nt
                if nt not in references:
                    references[nt] = _resolve_reference(cfg, outcome.grid)
                outcome = execute(references[nt], rule, outcome.grid)
                summary = write_run(rule_out, references[nt], outcome, rule)
            else:
                summary = write_run(rule_out, cfg, outcome, rule)
        except SOLVER_ERRORS as exc:
            log.warning("%s %s failed: %s", rule.name, rule.params, exc)
            rule_out.mkdir(parents=True, exist_ok=True)
            summary = {"rule": rule.name, "params": rule.params, "failed": str(exc)}
            with open(rule_out / "summary.json", "w") as fh:
                json.dump(summary, fh, indent=2, sort_keys=True)
            table.append([rule.name, rule.params, "", "", "", ""])
            summaries.append(summary)
            continue
        states = outcome.result.states
        k3, s3 = threshold_hits(states, 1e-3)
        k4, s4 = threshold_hits(states, 1e-4)
        table.append([rule.name, rule.params, _fmt(k3), _fmt(s3), _fmt(k4), _fmt(s4)])
        summaries.append(summary)
    with open(out / "timing_table.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(TIMING_HEADER)
        writer.writerows(table)
    return summaries


# ---------------------------------------------------------------------------
# plot data


def fit_line(x: np.ndarray, y: np.ndarray) -> tuple[float, float]:
    """Least-squares slope and coefficient of determination."""
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    total = np.sum((y - y.mean()) ** 2)
    r2 = 1.0 - np.sum(resid**2) / total if total > 0 else 1.0
    return float(slope), float(r2)


def loglog_rate(k: np.ndarray, sigma: np.ndarray) -> tuple[float, float]:
    """Slope of ``log10 sigma`` against ``log10 k`` over the last half of the iterations."""
    start = max(1, len(k) // 2)
    sel = slice(start, None)
    kk, ss = k[sel], sigma[sel]
    ok = (kk > 0) & (ss > 0)
    return fit_line(np.log10(kk[ok]), np.log10(ss[ok]))


def semilog_rate(k: np.ndarray, sigma: np.ndarray, skip: int = 10) -> tuple[float, float]:
    """Slope of ``log10 sigma`` against ``k`` for ``k >= skip``."""
    ok = (k >= skip) & (sigma > 0)
    return fit_line(k[ok].astype(float), np.log10(sigma[ok]))


def _rule_name(path: Path) -> str:
    return path.parent.name if path.stem == "metrics" else path.stem


def plot_data(paths: list[str | Path], out: Path) -> None:
    series = {}
    for p in map(Path, paths):
        data = read_metrics(p)
        series[_rule_name(p)] = (data["iter"].astype(int), data["sigma"])
    out.mkdir(parents=True, exist_ok=True)
    names = list(series)
    k_max = max(int(k.max()) for k, _ in series.values())

    def log10(x):
        return _fmt(np.log10(x)) if x > 0 else ""

    with open(out / "log_sigma_vs_k.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["k"] + names)
        for k in range(k_max + 1):
            row = [str(k)]
            for name in names:
                ks, ss = series[name]
                row.append(log10(ss[k]) if k < len(ss) and ks[k] == k else "")
            writer.writerow(row)
    with open(out / "loglog_sigma.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["log10_k"] + names)
        for k in range(1, k_max + 1):
            row = [_fmt(np.log10(k))]
            for name in names:
                ks, ss = series[name]
                row.append(log10(ss[k]) if k < len(ss) and ks[k] == k else "")
            writer.writerow(row)
    with open(out / "rates.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(RATES_HEADER)
        for name in names:
            ks, ss = series[name]
            if len(ks) >= 4:
                slope, r2 = loglog_rate(ks, ss)
                writer.writerow([name, f"loglog:k>={max(1, len(ks) // 2)}", _fmt(slope), _fmt(r2)])
            if np.sum((ks >= 10) & (ss > 0)) >= 2:
                slope, r2 = semilog_rate(ks, ss)
                writer.writerow([name, "semilog:k>=10", _fmt(slope), _fmt(r2)])
