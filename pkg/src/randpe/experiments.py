"""Config-driven batch runs: sampling sweeps, phase-estimation ensembles and
bound audits.

Every random quantity is keyed by ``derive_seed(master, *indices)`` and results
are reduced in index order, so outputs do not depend on the worker count.
"""

from __future__ import annotations

import csv
import io
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np
import yaml

from .bounds import (
    REPORT_COLUMNS,
    BoundReport,
    BoundVacuousError,
    eigenphase_shift_bound,
    failure_condition,
    report_row,
)
from .exact import DegenerateGapError, TermStack, diagonalize, low_spectrum
from .hamiltonian import Hamiltonian, parse_hamiltonian
from .instances import SHIPPED
from .phase_estimation import (
    DEFAULT_GRID_POINTS,
    DesignStrategy,
    SessionConfig,
    run_session,
    trace_to_csv,
)
from .sampler import HedgedImportanceSampler, exact_surrogate, importance_weights, parse_surrogate
from .seeding import derive_seed, make_rng

__all__ = [
    "SCHEMA_VERSION",
    "ConfigError",
    "StrictBoundViolation",
    "SweepConfig",
    "SweepRow",
    "SWEEP_COLUMNS",
    "load_config",
    "resolve_hamiltonian",
    "default_jobs",
    "run_sweep",
    "sweep_to_csv",
    "run_pe_session_cmd",
    "run_bounds_audit",
]

SCHEMA_VERSION = 1
EXACT_SURROGATE = "exact-ground-state"
JOBS_ENV = "RANDPE_JOBS"
MODES = ("sweep", "pe-session", "bounds-audit")


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending field."""


class StrictBoundViolation(RuntimeError):
    """An exact (non-perturbative) bound was exceeded."""


def _fmt(x) -> str:
    return format(float(x), ".17g")


@dataclass(frozen=True)
class SweepConfig:
    """Validated run configuration.

    ``hamiltonian_path`` may also be ``shipped:<name>`` for a built-in
    instance. Mode-specific sections (``pe``, ``audit``) are plain mappings
    checked by the runner that uses them.
    """

    mode: str
    hamiltonian_path: str = "shipped:tfim4"
    surrogate_path: str = EXACT_SURROGATE
    rho_values: tuple[float, ...] = (1e-3,)
    sample_counts: tuple[int, ...] = (100,)
    ensemble_size: int = 100
    seed: int = 0
    output_path: str = "out"
    floor_fraction: float | None = 1e-9
    pe: dict = field(default_factory=dict)
    audit: dict = field(default_factory=dict)
    base_dir: str = field(default=".", compare=False)

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode: must be one of {', '.join(MODES)}, got {self.mode!r}")
        if not isinstance(self.ensemble_size, int) or self.ensemble_size < 1:
            raise ConfigError("ensemble_size: must be an integer >= 1")
        for r in self.rho_values:
            if not isinstance(r, (int, float)) or not 0.0 <= r <= 1.0:
                raise ConfigError(f"rho_values: {r!r} is not in [0, 1]")
        for n in self.sample_counts:
            if not isinstance(n, int) or isinstance(n, bool) or n < 1:
                raise ConfigError(f"sample_counts: {n!r} is not an integer >= 1")
        if not isinstance(self.seed, int) or not 0 <= self.seed < 2**64:
            raise ConfigError("seed: must be an integer in [0, 2**64)")
        if self.floor_fraction is not None and not 0.0 <= self.floor_fraction < 1.0:
            raise ConfigError("floor_fraction: must be null or in [0, 1)")

    def resolve(self, path: str) -> Path:
        p = Path(path)
        return p if p.is_absolute() else Path(self.base_dir) / p

    def with_overrides(self, **kw) -> "SweepConfig":
        data = {f.name: getattr(self, f.name) for f in fields(self)}
        data.update({k: v for k, v in kw.items() if v is not None})
        return SweepConfig(**data)


_TOP_KEYS = {f.name for f in fields(SweepConfig)} - {"base_dir"} | {"schema"}
_PE_KEYS = {"n_experiments", "sampler", "rho", "n_draws", "m_cap", "design", "grid_points",
            "time_per_rep", "epsilon", "target_ratio", "calibration_pilots"}
_AUDIT_KEYS = {"suites", "instances", "ratio_max", "qubits", "sequence_length", "grid_points"}


def load_config(path_or_text, *, is_text: bool = False) -> SweepConfig:
    """Parse a YAML config (``schema: 1``); unknown keys are errors."""
    if is_text:
        text, base = path_or_text, "."
    else:
        p = Path(path_or_text)
        try:
            text = p.read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {p}: {exc}") from exc
        base = str(p.parent)
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"config is not valid YAML: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("config must be a mapping")
    unknown = sorted(set(data) - _TOP_KEYS)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    if data.get("schema") != SCHEMA_VERSION:
        raise ConfigError(f"schema: expected {SCHEMA_VERSION}, got {data.get('schema')!r}")
    if "mode" not in data:
        raise ConfigError("mode: required")
    for section, allowed in (("pe", _PE_KEYS), ("audit", _AUDIT_KEYS)):
        sub = data.get(section) or {}
        if not isinstance(sub, dict):
            raise ConfigError(f"{section}: must be a mapping")
        bad = sorted(set(sub) - allowed)
        if bad:
            raise ConfigError(f"unknown keys in {section}: {', '.join(bad)}")
        data[section] = dict(sub)
    data.pop("schema")
    for key in ("rho_values", "sample_counts"):
        if key in data:
            if not isinstance(data[key], list) or not data[key]:
                raise ConfigError(f"{key}: must be a non-empty list")
            data[key] = tuple(data[key])
    if "rho_values" in data:
        data["rho_values"] = tuple(float(r) if isinstance(r, (int, float)) and not isinstance(r, bool) else r
                                   for r in data["rho_values"])
    return SweepConfig(base_dir=base, **data)


def resolve_hamiltonian(cfg: SweepConfig) -> Hamiltonian:
    spec = cfg.hamiltonian_path
    if spec.startswith("shipped:"):
        name = spec.split(":", 1)[1]
        if name not in SHIPPED:
            raise ConfigError(f"hamiltonian_path: no shipped instance {name!r} "
                              f"(have {', '.join(sorted(SHIPPED))})")
        return SHIPPED[name]()
    try:
        return parse_hamiltonian(cfg.resolve(spec).read_text())
    except OSError as exc:
        raise ConfigError(f"hamiltonian_path: {exc}") from exc


def _surrogate(cfg: SweepConfig, h: Hamiltonian) -> np.ndarray:
    if cfg.surrogate_path == EXACT_SURROGATE:
        return exact_surrogate(h)
    try:
        return parse_surrogate(cfg.resolve(cfg.surrogate_path).read_text(), h.n_terms)
    except OSError as exc:
        raise ConfigError(f"surrogate_path: {exc}") from exc


def default_jobs() -> int:
    raw = os.environ.get(JOBS_ENV)
    if not raw:
        return 1
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"{JOBS_ENV} must be an integer, got {raw!r}") from None
    if n < 1:
        raise ConfigError(f"{JOBS_ENV} must be >= 1")
    return n


def _map(fn: Callable, tasks: Sequence, jobs: int) -> list:
    """Ordered map; a process pool when ``jobs > 1``."""
    if jobs <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    chunk = max(1, len(tasks) // (4 * jobs))
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, tasks, chunksize=chunk))


# ---------------------------------------------------------------- sweep

@dataclass(frozen=True)
class SweepRow:
    rho: float
    n_samples: int
    mean_shift: float
    shift_variance: float
    mean_unique_terms: float
    mean_qubit_support: float


SWEEP_COLUMNS = ("rho", "n_samples", "mean_shift", "shift_variance",
                 "mean_unique_terms", "mean_qubit_support")


def _support_size(h: Hamiltonian, counts: np.ndarray) -> int:
    qubits = set()
    for t, c in zip(h.terms, counts):
        if c > 0:
            qubits.update(t.qubits)
    return len(qubits)


def _sweep_cell(task):
    h, weights, e0, n, seeds = task
    stack = TermStack.of(h)
    coeffs_src = h.coefficients
    shifts, uniques, supports = [], [], []
    for s in seeds:
        counts = make_rng(s).multinomial(n, weights)
        drawn = counts > 0
        coeffs = np.zeros(h.n_terms)
        coeffs[drawn] = coeffs_src[drawn] * (counts[drawn] / (n * weights[drawn]))
        e = float(np.linalg.eigvalsh(stack.matrix(coeffs))[0])
        shifts.append(e - e0)
        uniques.append(int(drawn.sum()))
        supports.append(_support_size(h, counts))
    return shifts, uniques, supports


def run_sweep(cfg: SweepConfig, jobs: int = 1, write: bool = True) -> list[SweepRow]:
    """Energy-shift statistics of sampled Hamiltonians over the (rho, N) grid.

    ``shift_variance`` is the population (ddof=0) variance of the sampled
    ground energies over the ensemble. Writes ``sweep.csv`` under
    ``output_path`` when ``write`` is set.
    """
    h = resolve_hamiltonian(cfg)
    surrogate = _surrogate(cfg, h)
    e0 = low_spectrum(h, 1).ground_energy
    tasks = []
    for i, rho in enumerate(cfg.rho_values):
        w = importance_weights(h, surrogate, rho, cfg.floor_fraction).weights
        for k, n in enumerate(cfg.sample_counts):
            seeds = [derive_seed(cfg.seed, i, k, m) for m in range(cfg.ensemble_size)]
            tasks.append((h, w, e0, n, seeds))
    results = _map(_sweep_cell, tasks, jobs)
    rows = []
    it = iter(results)
    for rho in cfg.rho_values:
        for n in cfg.sample_counts:
            shifts, uniques, supports = next(it)
            shifts = np.asarray(shifts)
            if not np.all(np.isfinite(shifts)):
                raise FloatingPointError(f"non-finite energy shift at rho={rho}, N={n}")
            rows.append(SweepRow(float(rho), int(n), float(shifts.mean()), float(shifts.var()),
                                 float(np.mean(uniques)), float(np.mean(supports))))
    if write:
        out = cfg.resolve(cfg.output_path)
        out.mkdir(parents=True, exist_ok=True)
        (out / "sweep.csv").write_text(sweep_to_csv(rows))
    return rows


def sweep_to_csv(rows: Sequence[SweepRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SWEEP_COLUMNS)
    for r in rows:
        w.writerow([_fmt(r.rho), r.n_samples, _fmt(r.mean_shift), _fmt(r.shift_variance),
                    _fmt(r.mean_unique_terms), _fmt(r.mean_qubit_support)])
    return buf.getvalue()


# ---------------------------------------------------------------- pe sessions

PE_SUMMARY_COLUMNS = ("member", "seed", "estimate_energy", "ground_energy", "abs_error",
                      "phase_error", "posterior_std", "gamma", "lambda", "total_segments",
                      "max_segments", "failure_condition", "budget", "within_budget")


def _pe_member(task):
    h, sampler, config, seed, epsilon = task
    trace = run_session(h, sampler, config, seed)
    row = {
        "estimate_energy": trace.estimate_energy,
        "ground_energy": trace.ground_energy,
        "abs_error": abs(trace.estimate_energy - trace.ground_energy),
        "phase_error": trace.phase_error,
        "posterior_std": trace.posterior_std,
        "gamma": trace.sequence_gamma,
        "lambda": trace.sequence_lambda,
        "total_segments": trace.total_segments,
        "max_segments": trace.max_segments,
        "failure_condition": None,
        "budget": None,
    }
    if sampler is not None and trace.sequence_gamma is not None:
        row.update(_session_budget(trace, epsilon))
    elif sampler is None:
        row["budget"] = 3 * trace.posterior_std
    return row, trace_to_csv(trace)


def _session_budget(trace, epsilon: float) -> dict:
    """Eigenphase-shift budget plus three posterior standard deviations.

    ``M`` counts every applied Hamiltonian; the eigenphase bound enters once
    per repetition, so the phase budget is the per-repetition bound times the
    total number of segments.
    """
    from .bounds import SequenceStats

    gamma, lam = trace.sequence_gamma, trace.sequence_lambda
    m_count = trace.max_segments + 1
    stats = SequenceStats(gamma, lam, m_count)
    cond = failure_condition(stats, epsilon) if m_count >= 2 else False
    if gamma > 2 * lam:
        per_rep = 2 * lam**2 / (gamma - 2 * lam) ** 2
        budget = trace.total_segments * per_rep + 3 * trace.posterior_std
    else:
        budget = math.inf
    return {"failure_condition": cond, "budget": budget}


def calibrate_draws(h: Hamiltonian, rho: float, surrogate, target_ratio: float, epsilon: float,
                    m_count: int, seed: int, pilots: int = 200, n_start: int = 1000,
                    floor_fraction: float | None = 1e-9) -> int:
    """Smallest power-of-two draw count whose pilot sequences meet the target.

    A pilot draws ``pilots`` sampled Hamiltonians (after the exact one) and
    measures ``lambda/gamma`` along that sequence; the ratio must be at most
    ``target_ratio`` and the failure condition must hold for ``m_count``
    Hamiltonians at ``epsilon``. Since ``lambda`` scales like ``N^(-1/2)`` the
    search doubles N from ``n_start``.
    """
    from .bounds import SequenceStats, failure_threshold

    limit = min(target_ratio, failure_threshold(m_count, epsilon))
    stack = TermStack.of(h)
    exact = stack.matrix()
    n = int(n_start)
    for attempt in range(64):
        sampler = HedgedImportanceSampler(rho=rho, n_draws=n, floor_fraction=floor_fraction)
        sampler.fit(h, surrogate)
        prev = exact
        energies = np.linalg.eigvalsh(exact)
        gamma = float(energies[1] - energies[0])
        lam = 0.0
        for k in range(pilots):
            mat = stack.matrix(sampler.sample_coefficients(derive_seed(seed, attempt, k)))
            e = np.linalg.eigvalsh(mat)
            gamma = min(gamma, float(e[1] - e[0]))
            lam = max(lam, float(np.max(np.abs(np.linalg.eigvalsh(mat - prev)))))
            prev = mat
        # Safety factor: a full session sees many more transitions than the pilot.
        if gamma > 0 and lam / gamma <= 0.5 * limit:
            return n
        n *= 2
    raise FloatingPointError("draw-count calibration did not converge")


def _pe_settings(cfg: SweepConfig, h: Hamiltonian):
    pe = cfg.pe
    design = pe.get("design", "greedy")
    strategy = DesignStrategy(m_cap=float(pe.get("m_cap", 2048.0)), mode=design)
    config = SessionConfig(
        n_experiments=int(pe.get("n_experiments", 40)),
        grid_points=int(pe.get("grid_points", DEFAULT_GRID_POINTS)),
        strategy=strategy,
        time_per_rep=pe.get("time_per_rep"),
        track_sequence=bool(pe.get("sampler", False)),
    )
    if config.n_experiments < 0:
        raise ConfigError("pe.n_experiments: must be >= 0")
    epsilon = float(pe.get("epsilon", 0.1))
    sampler = None
    if pe.get("sampler", False):
        rho = float(pe.get("rho", cfg.rho_values[0]))
        surrogate = _surrogate(cfg, h)
        n_draws = pe.get("n_draws", "auto")
        if n_draws == "auto":
            m_count = int(math.ceil(strategy.m_cap)) + 1
            n_draws = calibrate_draws(h, rho, surrogate, float(pe.get("target_ratio", 0.05)),
                                      epsilon, m_count, derive_seed(cfg.seed, 2**32),
                                      int(pe.get("calibration_pilots", 200)),
                                      floor_fraction=cfg.floor_fraction)
        sampler = HedgedImportanceSampler(rho=rho, n_draws=int(n_draws),
                                          floor_fraction=cfg.floor_fraction).fit(h, surrogate)
    return config, sampler, epsilon


def run_pe_session_cmd(cfg: SweepConfig, jobs: int = 1, write: bool = True) -> dict:
    """``ensemble_size`` independent sessions; traces plus a summary CSV.

    Returns a dict with the per-member rows and the aggregate statistics.
    """
    h = resolve_hamiltonian(cfg)
    config, sampler, epsilon = _pe_settings(cfg, h)
    seeds = [derive_seed(cfg.seed, m) for m in range(cfg.ensemble_size)]
    results = _map(_pe_member, [(h, sampler, config, s, epsilon) for s in seeds], jobs)
    rows = []
    for m, (seed, (row, _)) in enumerate(zip(seeds, results)):
        row = dict(row, member=m, seed=seed)
        row["within_budget"] = (row["budget"] is not None and row["abs_error"] * _t(h, config)
                                <= row["budget"])
        rows.append(row)
    errors = np.array([r["abs_error"] for r in rows])
    phase_errors = np.array([r["phase_error"] for r in rows])
    summary = {
        "members": len(rows),
        "n_draws": None if sampler is None else sampler.n_draws,
        "mean_estimate_energy": float(np.mean([r["estimate_energy"] for r in rows])) if rows else math.nan,
        "median_abs_error": float(np.median(errors)) if rows else math.nan,
        "fraction_phase_error_below_1e-3": float(np.mean(phase_errors < 1e-3)) if rows else math.nan,
        "fraction_within_budget": float(np.mean([r["within_budget"] for r in rows])) if rows else math.nan,
    }
    if write:
        out = cfg.resolve(cfg.output_path)
        (out / "traces").mkdir(parents=True, exist_ok=True)
        for m, (_, text) in enumerate(results):
            (out / "traces" / f"session_{m:05d}.csv").write_text(text)
        (out / "pe_sessions.csv").write_text(_rows_csv(PE_SUMMARY_COLUMNS, rows))
        (out / "pe_summary.yaml").write_text(_summary_yaml(summary))
    return {"rows": rows, "summary": summary}


def _t(h, config):
    from .phase_estimation import default_time_scale

    return default_time_scale(h) if config.time_per_rep is None else float(config.time_per_rep)


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return _fmt(v)


def _rows_csv(columns, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_cell(r.get(c)) for c in columns])
    return buf.getvalue()


def _summary_yaml(summary: dict) -> str:
    lines = []
    for k, v in summary.items():
        lines.append(f"{k}: {'null' if v is None else _cell(v)}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------- bounds audit

AUDIT_SUITES = ("perturbative", "strict")
RATE_COLUMNS = ("suite", "check", "ratio_bin", "instances", "satisfied", "rate")


def _audit_task(task):
    from . import audit

    suite, seed, params = task
    return audit.run_instance(suite, seed, params)


def run_bounds_audit(cfg: SweepConfig, jobs: int = 1, write: bool = True) -> dict:
    """Random-instance stress suites.

    Writes ``bounds_report.csv`` (one row per check per instance) and
    ``bounds_rates.csv`` (satisfaction rates, binned by ``lambda/gamma`` for
    the perturbative suite). Strict-suite violations are reported in the
    result's ``strict_violations``; the CLI turns them into exit code 3.
    """
    audit_cfg = cfg.audit
    suites = audit_cfg.get("suites", list(AUDIT_SUITES))
    for s in suites:
        if s not in AUDIT_SUITES:
            raise ConfigError(f"audit.suites: unknown suite {s!r}")
    n_inst = int(audit_cfg.get("instances", cfg.ensemble_size))
    if n_inst < 0:
        raise ConfigError("audit.instances: must be >= 0")
    params = {
        "ratio_max": float(audit_cfg.get("ratio_max", 0.05)),
        "qubits": tuple(audit_cfg.get("qubits", (2, 3))),
        "sequence_length": tuple(audit_cfg.get("sequence_length", (2, 6))),
        "grid_points": int(audit_cfg.get("grid_points", DEFAULT_GRID_POINTS)),
    }
    tasks = [(s, derive_seed(cfg.seed, si, i), params)
             for si, s in enumerate(suites) for i in range(n_inst)]
    results = _map(_audit_task, tasks, jobs)
    rows: list[list[str]] = []
    tallies: dict[tuple, list[int]] = {}
    strict_violations = 0
    for (suite, _, _), checks in zip(tasks, results):
        for name, report in checks:
            rows.append(report_row(report, f"{suite}:{name}"))
            ratio = report.context.get("ratio")
            bin_label = _ratio_bin(ratio) if suite == "perturbative" else "all"
            key = (suite, name, bin_label)
            t = tallies.setdefault(key, [0, 0])
            t[0] += 1
            t[1] += int(report.satisfied)
            if suite == "strict" and not report.satisfied:
                strict_violations += 1
    rates = [
        [s, c, b, str(n), str(k), _fmt(k / n)]
        for (s, c, b), (n, k) in sorted(tallies.items())
    ]
    if write:
        out = cfg.resolve(cfg.output_path)
        out.mkdir(parents=True, exist_ok=True)
        (out / "bounds_report.csv").write_text(_plain_csv(REPORT_COLUMNS, rows))
        (out / "bounds_rates.csv").write_text(_plain_csv(RATE_COLUMNS, rates))
    return {"rows": rows, "rates": rates, "strict_violations": strict_violations}


_RATIO_EDGES = (0.0, 0.01, 0.02, 0.03, 0.04, 0.05)


def _ratio_bin(ratio) -> str:
    if ratio is None:
        return "all"
    for lo, hi in zip(_RATIO_EDGES, _RATIO_EDGES[1:]):
        if ratio <= hi:
            return f"({lo:.2f},{hi:.2f}]"
    return f">{_RATIO_EDGES[-1]:.2f}"


def _plain_csv(columns, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    w.writerows(rows)
    return buf.getvalue()
