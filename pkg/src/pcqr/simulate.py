"""Monte Carlo batches: scenario files, parallel replications and output tables.

Every replication is seeded from ``(scenario seed, replication index)`` and
runs with BLAS pinned to one thread, so results do not depend on how many
worker processes share the batch.  Wall-clock times go to ``timing.json``;
every other output file is a pure function of the scenario file and flags.
"""

from __future__ import annotations

import csv
import hashlib
import json
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

from threadpoolctl import threadpool_limits

from . import __version__
from .dgp import NoiseSpec, ScenarioConfig, generate
from .estimator import FitError, GammaSearchError, fit_scqr, search_gamma
from .metrics import aggregate, score
from .solver import SolverSettings

WORKERS_ENV = "PCQR_WORKERS"

_REQUIRED = ("n", "d", "sigma_sq", "lambda", "tau1", "tau2", "replications", "seed")
_OPTIONAL = {"estimators": ["pcqr", "scqr"], "C": 0.0, "step": 0.01, "gamma_max": 10.0,
             "name": None}


class ScenarioError(ValueError):
    pass


def _scenario_from_dict(entry: dict, where: str) -> tuple[Optional[str], ScenarioConfig]:
    if not isinstance(entry, dict):
        raise ScenarioError(f"{where}: expected an object")
    missing = [k for k in _REQUIRED if k not in entry]
    unknown = sorted(set(entry) - set(_REQUIRED) - set(_OPTIONAL))
    if missing or unknown:
        raise ScenarioError(f"{where}: missing fields {missing}, unknown fields {unknown}")
    opts = {k: entry.get(k, v) for k, v in _OPTIONAL.items()}
    for k in ("n", "d", "replications", "seed"):
        if not isinstance(entry[k], int) or isinstance(entry[k], bool):
            raise ScenarioError(f"{where}: {k} must be an integer")
    est = opts["estimators"]
    if isinstance(est, str) or not isinstance(est, list):
        raise ScenarioError(f"{where}: estimators must be a list")
    try:
        cfg = ScenarioConfig(
            n=entry["n"], d=entry["d"],
            noise=NoiseSpec(float(entry["sigma_sq"]), float(entry["lambda"])),
            tau_pair=(float(entry["tau1"]), float(entry["tau2"])),
            replications=entry["replications"], seed=entry["seed"],
            estimators=tuple(est), C=float(opts["C"]), step=float(opts["step"]),
            gamma_max=float(opts["gamma_max"]),
        )
    except (TypeError, ValueError) as exc:
        raise ScenarioError(f"{where}: {exc}") from None
    return opts["name"], cfg


def load_scenarios(path) -> list[tuple[str, ScenarioConfig]]:
    """Read a JSON scenario file: one scenario object or ``{"scenarios": [...]}``.

    Returns ``(name, config)`` pairs; unnamed scenarios are called ``s1``, ``s2``, ...
    """
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ScenarioError(f"cannot read scenario file {path}: {exc}") from None
    entries = doc["scenarios"] if isinstance(doc, dict) and "scenarios" in doc else [doc]
    if not isinstance(entries, list) or not entries:
        raise ScenarioError(f"{path}: no scenarios")
    out = []
    for i, entry in enumerate(entries, start=1):
        name, cfg = _scenario_from_dict(entry, f"{path}: scenario {i}")
        out.append((name or f"s{i}", cfg))
    names = [n for n, _ in out]
    if len(set(names)) != len(names):
        raise ScenarioError(f"{path}: duplicate scenario names")
    return out


@dataclass
class ReplicationResult:
    scenario: str
    replication: int
    gamma_star: Optional[float]
    grid_points: int
    records: dict = field(default_factory=dict)  # estimator -> [MetricsRecord, MetricsRecord]
    errors: dict = field(default_factory=dict)   # estimator -> message
    seconds: float = 0.0


def run_replication(name: str, cfg: ScenarioConfig, rep: int,
                    settings: Optional[SolverSettings] = None) -> ReplicationResult:
    """Generate one sample, search gamma and score the requested estimators.

    The gamma search always runs since its ``gamma_star`` drives the
    exclusion rule for every estimator.  Failures are captured, not raised.
    """
    t0 = time.perf_counter()
    with threadpool_limits(limits=1):
        sample = generate(cfg, rep)
        data, noise = sample.data, cfg.noise
        tau1, tau2 = cfg.tau_pair
        res = ReplicationResult(name, rep, None, 0)
        try:
            found = search_gamma(data, tau1, tau2, cfg.step, cfg.gamma_max, settings)
        except (FitError, GammaSearchError) as exc:
            for est in cfg.estimators:
                res.errors[est] = f"gamma search: {exc}"
            if isinstance(exc, GammaSearchError):
                res.grid_points = len(exc.crossing_counts)
            res.seconds = time.perf_counter() - t0
            return res
        res.gamma_star, res.grid_points = found.gamma_star, found.iterations
        if "pcqr" in cfg.estimators:
            res.records["pcqr"] = [score(m, data, noise, found.gamma_star)
                                   for m in (found.model_low, found.model_high)]
        if "scqr" in cfg.estimators:
            try:
                multi = fit_scqr(data, (tau1, tau2), cfg.C, settings)
                res.records["scqr"] = [score(m, data, noise, found.gamma_star)
                                       for m in multi.models]
            except FitError as exc:
                res.errors["scqr"] = str(exc)
    res.seconds = time.perf_counter() - t0
    return res


def _run_task(task):
    return run_replication(*task)


def resolve_workers(flag: Optional[int]) -> int:
    """Worker count from the flag, else the environment, else the CPU count."""
    if flag is not None:
        value, source = flag, "--workers"
    elif os.environ.get(WORKERS_ENV):
        value, source = os.environ[WORKERS_ENV], WORKERS_ENV
    else:
        return os.cpu_count() or 1
    try:
        value = int(value)
    except ValueError:
        raise ScenarioError(f"{source} must be an integer, got {value!r}") from None
    if value < 1:
        raise ScenarioError(f"{source} must be at least 1, got {value}")
    return value


def run_batch(scenarios: Sequence[tuple[str, ScenarioConfig]], workers: int = 1,
              settings: Optional[SolverSettings] = None) -> list[ReplicationResult]:
    """Run every replication of every scenario; results come back in task order."""
    tasks = [(name, cfg, rep, settings) for name, cfg in scenarios
             for rep in range(cfg.replications)]
    if workers <= 1 or len(tasks) <= 1:
        return [_run_task(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=min(workers, len(tasks))) as pool:
        return list(pool.map(_run_task, tasks, chunksize=1))


# ---------------------------------------------------------------- outputs

TABLE_FIELDS = ["scenario", "n", "d", "sigma_sq", "lambda", "tau1", "tau2", "estimator",
                "rl_tau1", "rl_tau2", "coverage_tau1", "coverage_tau2", "mse_tau1", "mse_tau2",
                "replications_used", "replications_excluded", "note"]
RECORD_FIELDS = ["scenario", "replication", "estimator", "tau", "gamma_star", "crossed_at_gamma0",
                 "ramp_loss", "coverage_error", "mse", "n_pos", "n_neg", "property_ok"]
GAMMA_FIELDS = ["scenario", "replication", "gamma_star", "grid_points", "error"]
HIST_FIELDS = ["scenario", "gamma_star", "count"]
FAILURE_FIELDS = ["scenario", "replication", "estimator", "error"]


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _write_csv(path: Path, fields: list[str], rows: list[dict]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(fields)
        for row in rows:
            w.writerow([_fmt(row.get(f)) for f in fields])


def read_csv(path) -> list[dict]:
    """Read back any table written by :func:`write_outputs` as string-valued dicts."""
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def aggregate_results(scenarios, results: Sequence[ReplicationResult]):
    """One aggregate cell per (scenario, estimator), in scenario order."""
    cells = []
    for name, cfg in scenarios:
        mine = [r for r in results if r.scenario == name]
        for est in cfg.estimators:
            records = [m for r in mine if est in r.records for m in r.records[est]]
            failed = sum(1 for r in mine if est not in r.records)
            cells.append((name, aggregate(records, cfg, est, failed=failed)))
    return cells


def scenario_snapshot(cfg: ScenarioConfig) -> dict:
    return {"n": cfg.n, "d": cfg.d, "sigma_sq": cfg.noise.sigma_sq, "lambda": cfg.noise.lam,
            "tau1": cfg.tau_pair[0], "tau2": cfg.tau_pair[1], "replications": cfg.replications,
            "seed": cfg.seed, "estimators": list(cfg.estimators), "C": cfg.C, "step": cfg.step,
            "gamma_max": cfg.gamma_max}


def write_outputs(out_dir, scenarios, results: Sequence[ReplicationResult], command: dict,
                  workers: int, wall_clock: float) -> dict:
    """Write tables, raw records, gamma data and the manifest into ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    table = []
    for name, cell in aggregate_results(scenarios, results):
        cfg = cell.scenario
        t1, t2 = cell.taus
        table.append({
            "scenario": name, "n": cfg.n, "d": cfg.d, "sigma_sq": cfg.noise.sigma_sq,
            "lambda": cfg.noise.lam, "tau1": t1, "tau2": t2, "estimator": cell.tag,
            "rl_tau1": cell.mean_ramp_loss[t1], "rl_tau2": cell.mean_ramp_loss[t2],
            "coverage_tau1": cell.mean_coverage_error[t1],
            "coverage_tau2": cell.mean_coverage_error[t2],
            "mse_tau1": cell.mean_mse[t1], "mse_tau2": cell.mean_mse[t2],
            "replications_used": cell.replications_used,
            "replications_excluded": cell.replications_excluded, "note": cell.note,
        })
    records, gammas, failures = [], [], []
    hist: dict = {}
    for r in results:
        gammas.append({"scenario": r.scenario, "replication": r.replication,
                       "gamma_star": r.gamma_star, "grid_points": r.grid_points,
                       "error": r.errors.get("pcqr", "") if r.gamma_star is None else ""})
        if r.gamma_star is not None and r.gamma_star > 0:
            key = (r.scenario, r.gamma_star)
            hist[key] = hist.get(key, 0) + 1
        for est, recs in r.records.items():
            for m in recs:
                row = {"scenario": r.scenario, "replication": r.replication, "estimator": est}
                row.update(m.as_dict())
                records.append(row)
        for est, msg in r.errors.items():
            failures.append({"scenario": r.scenario, "replication": r.replication,
                             "estimator": est, "error": msg})
    order = {name: i for i, (name, _) in enumerate(scenarios)}
    hist_rows = [{"scenario": s, "gamma_star": g, "count": c}
                 for (s, g), c in sorted(hist.items(), key=lambda kv: (order[kv[0][0]], kv[0][1]))]

    files = {
        "table.csv": (TABLE_FIELDS, table),
        "records.csv": (RECORD_FIELDS, records),
        "gamma_star.csv": (GAMMA_FIELDS, gammas),
        "gamma_hist.csv": (HIST_FIELDS, hist_rows),
        "failures.csv": (FAILURE_FIELDS, failures),
    }
    digests = {}
    for fname, (fields, rows) in files.items():
        _write_csv(out / fname, fields, rows)
        digests[fname] = hashlib.sha256((out / fname).read_bytes()).hexdigest()

    manifest = {
        "format_version": 1,
        "tool": "pcqr",
        "version": __version__,
        "command": command,
        "scenarios": [{"name": n, **scenario_snapshot(c)} for n, c in scenarios],
        "replications_total": len(results),
        "replications_failed": sum(1 for r in results if r.errors),
        "files": digests,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1) + "\n", encoding="utf-8")
    timing = {
        "wall_clock_seconds": wall_clock,
        "workers": workers,
        "replication_seconds": [{"scenario": r.scenario, "replication": r.replication,
                                 "seconds": r.seconds} for r in results],
    }
    (out / "timing.json").write_text(json.dumps(timing, indent=1) + "\n", encoding="utf-8")
    return manifest


def simulate(scenarios, out_dir, workers: int = 1, settings: Optional[SolverSettings] = None,
             command: Optional[dict] = None) -> dict:
    t0 = time.perf_counter()
    results = run_batch(scenarios, workers, settings)
    return write_outputs(out_dir, scenarios, results, command or {}, workers,
                         time.perf_counter() - t0)


def override(scenarios, seed: Optional[int] = None, estimators: Optional[Sequence[str]] = None,
             step: Optional[float] = None, gamma_max: Optional[float] = None):
    """Apply command-line overrides to every scenario."""
    changes = {}
    if seed is not None:
        changes["seed"] = seed
    if estimators is not None:
        changes["estimators"] = tuple(estimators)
    if step is not None:
        changes["step"] = step
    if gamma_max is not None:
        changes["gamma_max"] = gamma_max
    if not changes:
        return list(scenarios)
    try:
        return [(name, replace(cfg, **changes)) for name, cfg in scenarios]
    except (TypeError, ValueError) as exc:
        raise ScenarioError(str(exc)) from None
