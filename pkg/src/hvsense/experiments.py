"""Monte Carlo sweeps of positioning error over path count or SV-HV distance.

A configuration is a YAML mapping; every key is optional::

    sweep:
      variable: P          # P | distance
      values: [4, 5, 6, 7, 8, 9, 10]
    trials: 100            # per (scenario, sweep value)
    scenarios: [highway, rural]
    mode: single           # single | multi
    pipeline: geometric    # geometric | full-signal
    noise: true            # false gives exact oracle observations
    seed: 0                # trial i of every sweep point uses seed + i
    distance_m: 50         # used when sweeping P
    paths: null            # path budget when sweeping distance (null = all)
    output: results        # directory for trials.csv, summary.csv, summary.txt
    radio:
      carrier_hz: 5.9e9
      bandwidth_hz: 1.0e8
      n_rx: 20
      n_tx: 20
      tx_power_dbm: 23
    layout:
      length_m: 3
      width_m: 6
    solver:
      grid_step_deg: 0.5
      refine_tol: 1.0e-8
      rank_rtol: 1.0e-9
      max_dimension_m: 25   # larger solved L or W marks a multi estimate implausible

Because trial ``i`` uses seed ``seed + i`` at every sweep point, points of a
P sweep are nested subsets of the same measured scenes, which makes paired
comparisons between neighbouring points valid.
"""

from __future__ import annotations

import csv
import io
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Optional, Sequence

import numpy as np
import yaml

from . import stats
from .channel import PROFILES, NOISELESS, NoiseModel, RadioConfig, TrialResult, run_trial
from .errors import ConfigurationError
from .geometry import ClusterLayout
from .single import SolverConfig

log = logging.getLogger(__name__)

CSV_COLUMNS = (
    "seed", "scenario", "mode", "pipeline", "distance_m", "P",
    "p1", "p2", "p3", "p4", "error_m2", "failed", "reason",
)
SUMMARY_COLUMNS = (
    "scenario", "sweep", "value", "trials", "failed", "failure_rate",
    "mean_error_m2", "median_error_m2", "std_error_m2", "mean_P",
)


class ConfigError(ConfigurationError):
    """One or more problems in an experiment configuration."""

    def __init__(self, problems: Sequence[str]):
        self.problems = list(problems)
        super().__init__("invalid experiment configuration:\n  " + "\n  ".join(self.problems))


@dataclass(frozen=True)
class ExperimentConfig:
    sweep: str = "P"
    values: tuple = (4, 5, 6, 7, 8, 9, 10)
    trials: int = 100
    scenarios: tuple[str, ...] = ("highway", "rural")
    mode: str = "single"
    pipeline: str = "geometric"
    noise: bool = True
    seed: int = 0
    distance_m: float = 50.0
    paths: Optional[int] = None
    output: str = "results"
    carrier_hz: float = 5.9e9
    bandwidth_hz: float = 100e6
    n_rx: int = 20
    n_tx: int = 20
    tx_power_dbm: float = 23.0
    length_m: float = 3.0
    width_m: float = 6.0
    grid_step_deg: float = 0.5
    refine_tol: float = 1e-8
    rank_rtol: float = 1e-9
    max_dimension_m: float = 25.0

    def to_dict(self) -> dict:
        """Nested mapping in the same shape as the YAML schema."""
        return {
            "sweep": {"variable": self.sweep, "values": list(self.values)},
            "trials": self.trials,
            "scenarios": list(self.scenarios),
            "mode": self.mode,
            "pipeline": self.pipeline,
            "noise": self.noise,
            "seed": self.seed,
            "distance_m": self.distance_m,
            "paths": self.paths,
            "output": self.output,
            "radio": {
                "carrier_hz": self.carrier_hz,
                "bandwidth_hz": self.bandwidth_hz,
                "n_rx": self.n_rx,
                "n_tx": self.n_tx,
                "tx_power_dbm": self.tx_power_dbm,
            },
            "layout": {"length_m": self.length_m, "width_m": self.width_m},
            "solver": {
                "grid_step_deg": self.grid_step_deg,
                "refine_tol": self.refine_tol,
                "rank_rtol": self.rank_rtol,
                "max_dimension_m": self.max_dimension_m,
            },
        }

    def echo(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False)

    # objects handed to the trial runner, derived from the fields above

    def radio(self) -> RadioConfig:
        return RadioConfig(carrier=self.carrier_hz, bandwidth=self.bandwidth_hz, n_rx=self.n_rx, n_tx=self.n_tx)

    def solver(self) -> SolverConfig:
        return SolverConfig(
            grid_step=math.radians(self.grid_step_deg),
            refine_tol=self.refine_tol,
            rank_rtol=self.rank_rtol,
            max_dimension=self.max_dimension_m,
        )

    def layout(self) -> ClusterLayout:
        return ClusterLayout(self.length_m, self.width_m)

    def profile(self, scenario: str):
        return replace(PROFILES[scenario], tx_power_dbm=self.tx_power_dbm)


# key -> (flat field, kind); kinds are checked by _coerce
_SCHEMA: dict[str, Any] = {
    "sweep": {"variable": ("sweep", "str"), "values": ("values", "list")},
    "trials": ("trials", "int"),
    "scenarios": ("scenarios", "strlist"),
    "mode": ("mode", "str"),
    "pipeline": ("pipeline", "str"),
    "noise": ("noise", "bool"),
    "seed": ("seed", "int"),
    "distance_m": ("distance_m", "float"),
    "paths": ("paths", "optint"),
    "output": ("output", "str"),
    "radio": {
        "carrier_hz": ("carrier_hz", "float"),
        "bandwidth_hz": ("bandwidth_hz", "float"),
        "n_rx": ("n_rx", "int"),
        "n_tx": ("n_tx", "int"),
        "tx_power_dbm": ("tx_power_dbm", "float"),
    },
    "layout": {"length_m": ("length_m", "float"), "width_m": ("width_m", "float")},
    "solver": {
        "grid_step_deg": ("grid_step_deg", "float"),
        "refine_tol": ("refine_tol", "float"),
        "rank_rtol": ("rank_rtol", "float"),
        "max_dimension_m": ("max_dimension_m", "float"),
    },
}


def _coerce(value, kind: str):
    """Return the typed value, or raise TypeError describing the mismatch."""
    is_int = isinstance(value, int) and not isinstance(value, bool)
    if kind == "int" and is_int:
        return value
    if kind == "optint" and (value is None or is_int):
        return value
    if kind == "float" and (is_int or isinstance(value, float)):
        return float(value)
    if kind == "str" and isinstance(value, str):
        return value
    if kind == "bool" and isinstance(value, bool):
        return value
    if kind == "list" and isinstance(value, list):
        return tuple(value)
    if kind == "strlist" and isinstance(value, list) and all(isinstance(v, str) for v in value):
        return tuple(value)
    want = {"optint": "integer or null", "strlist": "list of strings", "int": "integer", "float": "number"}.get(kind, kind)
    raise TypeError(f"expected {want}, got {type(value).__name__} {value!r}")


def _flatten(raw: dict, schema: dict, prefix: str, out: dict, problems: list[str]) -> None:
    for key, value in raw.items():
        path = f"{prefix}{key}"
        if key not in schema:
            problems.append(f"{path}: unknown key")
            continue
        spec = schema[key]
        if isinstance(spec, dict):
            if not isinstance(value, dict):
                problems.append(f"{path}: expected mapping, got {type(value).__name__}")
            else:
                _flatten(value, spec, path + ".", out, problems)
            continue
        name, kind = spec
        try:
            out[name] = _coerce(value, kind)
        except TypeError as exc:
            problems.append(f"{path}: {exc}")


def _check_ranges(cfg: ExperimentConfig) -> list[str]:
    problems = []
    if cfg.sweep not in ("P", "distance"):
        problems.append(f"sweep.variable: must be 'P' or 'distance', got {cfg.sweep!r}")
    if not cfg.values:
        problems.append("sweep.values: must be nonempty")
    for i, v in enumerate(cfg.values):
        if cfg.sweep == "P" and not (isinstance(v, int) and not isinstance(v, bool) and v >= 1):
            problems.append(f"sweep.values[{i}]: path counts must be positive integers, got {v!r}")
        if cfg.sweep == "distance" and not (isinstance(v, (int, float)) and not isinstance(v, bool) and v > 0):
            problems.append(f"sweep.values[{i}]: distances must be positive numbers, got {v!r}")
    if len(set(cfg.values)) != len(cfg.values):
        problems.append("sweep.values: duplicate values")
    if cfg.trials < 1:
        problems.append(f"trials: must be >= 1, got {cfg.trials}")
    if not cfg.scenarios:
        problems.append("scenarios: must be nonempty")
    for s in cfg.scenarios:
        if s not in PROFILES:
            problems.append(f"scenarios: unknown scenario {s!r} (known: {', '.join(sorted(PROFILES))})")
    if cfg.mode not in ("single", "multi"):
        problems.append(f"mode: must be 'single' or 'multi', got {cfg.mode!r}")
    if cfg.pipeline not in ("geometric", "full-signal"):
        problems.append(f"pipeline: must be 'geometric' or 'full-signal', got {cfg.pipeline!r}")
    if cfg.seed < 0:
        problems.append(f"seed: must be >= 0, got {cfg.seed}")
    if cfg.paths is not None and cfg.paths < 1:
        problems.append(f"paths: must be >= 1 or null, got {cfg.paths}")
    if not cfg.output:
        problems.append("output: must be a nonempty path")
    positive = {
        "distance_m": cfg.distance_m,
        "radio.carrier_hz": cfg.carrier_hz,
        "radio.bandwidth_hz": cfg.bandwidth_hz,
        "radio.n_rx": cfg.n_rx,
        "radio.n_tx": cfg.n_tx,
        "layout.length_m": cfg.length_m,
        "layout.width_m": cfg.width_m,
        "solver.grid_step_deg": cfg.grid_step_deg,
        "solver.refine_tol": cfg.refine_tol,
        "solver.rank_rtol": cfg.rank_rtol,
        "solver.max_dimension_m": cfg.max_dimension_m,
    }
    for key, value in positive.items():
        if not value > 0:
            problems.append(f"{key}: must be > 0, got {value}")
    if cfg.rank_rtol >= 1:
        problems.append(f"solver.rank_rtol: must be < 1, got {cfg.rank_rtol}")
    return problems


def validate_config(raw_text: str) -> ExperimentConfig:
    """Parse YAML text into a validated config with defaults applied.

    All problems (unknown keys, type mismatches, out-of-range values) are
    collected and raised together in one :class:`ConfigError`.
    """
    try:
        raw = yaml.safe_load(raw_text)
    except yaml.YAMLError as exc:
        raise ConfigError([f"<document>: not valid YAML ({exc})"]) from None
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError([f"<document>: expected a mapping at top level, got {type(raw).__name__}"])
    fields: dict[str, Any] = {}
    problems: list[str] = []
    _flatten(raw, _SCHEMA, "", fields, problems)
    cfg = ExperimentConfig(**fields)
    problems += _check_ranges(cfg)
    if problems:
        raise ConfigError(problems)
    return cfg


def load_config(path: str) -> ExperimentConfig:
    with open(path, encoding="utf-8") as fh:
        return validate_config(fh.read())


@dataclass
class PointSummary:
    scenario: str
    value: float
    trials: int
    failed: int
    mean: float
    median: float
    std: float
    mean_P: float
    reasons: dict = field(default_factory=dict)

    @property
    def failure_rate(self) -> float:
        return self.failed / self.trials


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    trials: list[TrialResult]
    points: list[PointSummary]
    trends: dict[str, stats.TrendCheck]

    def errors(self, scenario: str, value) -> np.ndarray:
        """Per-seed errors of one sweep point, NaN for failed trials."""
        rows = [t for t in self.trials if t.scenario == scenario and _value_of(self.config, t) == value]
        rows.sort(key=lambda t: t.seed)
        return np.array([np.nan if t.failed else t.error_m2 for t in rows])


def _value_of(cfg: ExperimentConfig, trial: TrialResult):
    return trial.requested if cfg.sweep == "P" else trial.distance_m


def _trial_job(job):
    cfg, scenario, value, seed = job
    if cfg.sweep == "P":
        distance, n_paths = cfg.distance_m, int(value)
    else:
        distance, n_paths = float(value), cfg.paths
    result = run_trial(
        cfg.profile(scenario),
        distance,
        mode=cfg.mode,
        pipeline=cfg.pipeline,
        seed=seed,
        n_paths=n_paths,
        layout=cfg.layout(),
        radio=cfg.radio(),
        noise=NoiseModel() if cfg.noise else NOISELESS,
        solver=cfg.solver(),
    )
    result.estimate = None  # keep pickles small
    return result


def _summarise(cfg: ExperimentConfig, trials: list[TrialResult]) -> list[PointSummary]:
    points = []
    for scenario in cfg.scenarios:
        for value in cfg.values:
            rows = [t for t in trials if t.scenario == scenario and _value_of(cfg, t) == value]
            errs = np.array([t.error_m2 for t in rows if not t.failed], dtype=float)
            reasons: dict[str, int] = {}
            for t in rows:
                if t.failed:
                    reasons[t.reason] = reasons.get(t.reason, 0) + 1
            ok = errs.size > 0
            points.append(
                PointSummary(
                    scenario,
                    value,
                    len(rows),
                    len(rows) - errs.size,
                    float(errs.mean()) if ok else math.nan,
                    float(np.median(errs)) if ok else math.nan,
                    float(errs.std(ddof=1)) if errs.size > 1 else math.nan,
                    float(np.mean([t.P for t in rows])) if rows else math.nan,
                    reasons,
                )
            )
    return points


def _trends(cfg: ExperimentConfig, result: ExperimentResult) -> dict[str, stats.TrendCheck]:
    out = {}
    for scenario in cfg.scenarios:
        # points where (nearly) every trial failed carry no trend information
        samples = [e for e in (result.errors(scenario, v) for v in sorted(cfg.values)) if np.isfinite(e).sum() >= 2]
        if len(samples) < 2:
            continue
        if cfg.sweep == "P":
            out[scenario] = stats.check_trend(
                samples, "decreasing", strict=True, paired=True, claim=f"{scenario}: mean error decreasing in P"
            )
        else:
            out[scenario] = stats.check_trend(
                samples, "increasing", strict=False, claim=f"{scenario}: mean error nondecreasing in distance"
            )
    return out


def check_writable(directory: str) -> None:
    """Create ``directory`` if needed and prove a file can be written there."""
    os.makedirs(directory, exist_ok=True)
    probe = os.path.join(directory, ".write-test")
    with open(probe, "w", encoding="utf-8") as fh:
        fh.write("ok")
    os.remove(probe)


def trials_csv(trials: Sequence[TrialResult]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for t in trials:
        writer.writerow(t.row())
    return buf.getvalue()


def summary_csv(cfg: ExperimentConfig, points: Sequence[PointSummary]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(SUMMARY_COLUMNS)
    for p in points:
        writer.writerow(
            [p.scenario, cfg.sweep, p.value, p.trials, p.failed, repr(p.failure_rate),
             repr(p.mean), repr(p.median), repr(p.std), repr(p.mean_P)]
        )
    return buf.getvalue()


def summary_text(result: ExperimentResult) -> str:
    cfg = result.config
    unit = "P" if cfg.sweep == "P" else "distance [m]"
    lines = [
        f"# {cfg.mode}-cluster positioning error vs {unit}, {cfg.pipeline} pipeline, {cfg.trials} trials per point",
        "",
        f"{'scenario':<10}{unit:>14}{'mean':>12}{'median':>12}{'std':>12}{'fail':>8}",
    ]
    for p in result.points:
        lines.append(
            f"{p.scenario:<10}{p.value:>14}{p.mean:>12.4g}{p.median:>12.4g}{p.std:>12.4g}{p.failure_rate:>8.1%}"
        )
        for reason, n in sorted(p.reasons.items(), key=lambda kv: -kv[1]):
            lines.append(f"{'':<10}  {n} failed: {reason}")
    if result.trends:
        lines += ["", "# trends (one-sided tests at 95% confidence)"]
        lines += [check.line() for check in result.trends.values()]
    lines += ["", "# effective configuration", cfg.echo()]
    return "\n".join(lines)


def run_experiment(
    cfg: ExperimentConfig,
    output: Optional[str] = None,
    jobs: int = 1,
    progress: Optional[Callable[[int, int], None]] = None,
) -> ExperimentResult:
    """Run every (scenario, sweep value, trial) and write the result files.

    Writes ``trials.csv`` (one row per trial, sorted by scenario, sweep value
    and seed), ``summary.csv`` and ``summary.txt`` into ``output`` (defaults to
    ``cfg.output``).  The directory is checked for writability before any
    trial runs.  Output is identical for any ``jobs``.
    """
    directory = output if output is not None else cfg.output
    if output is not None:
        cfg = replace(cfg, output=output)
    check_writable(directory)

    jobs_list = [
        (cfg, scenario, value, cfg.seed + i)
        for scenario in cfg.scenarios
        for value in cfg.values
        for i in range(cfg.trials)
    ]
    log.info("running %d trials with %d worker(s)", len(jobs_list), jobs)
    results: list[TrialResult] = []
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            for i, r in enumerate(pool.map(_trial_job, jobs_list, chunksize=8)):
                results.append(r)
                if progress:
                    progress(i + 1, len(jobs_list))
    else:
        for i, job in enumerate(jobs_list):
            results.append(_trial_job(job))
            if progress:
                progress(i + 1, len(jobs_list))

    scen_rank = {s: i for i, s in enumerate(cfg.scenarios)}
    results.sort(key=lambda t: (scen_rank[t.scenario], float(_value_of(cfg, t) or 0), t.seed))
    result = ExperimentResult(cfg, results, _summarise(cfg, results), {})
    result.trends = _trends(cfg, result)

    files = {
        "trials.csv": trials_csv(results),
        "summary.csv": summary_csv(cfg, result.points),
        "summary.txt": summary_text(result),
    }
    for name, text in files.items():
        with open(os.path.join(directory, name), "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    return result
