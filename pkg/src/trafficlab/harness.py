"""Experiment runner: scenario suites, paired fixed-vs-adaptive comparisons, reports."""

from __future__ import annotations

import csv
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timedelta
from importlib import resources
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

from . import forecast as fc
from .controllers import DEFAULT_START, AstmController, fixed_time
from .core import (Approach, DemandProfile, Phase, Scenario, check_seed, load_scenario,
                   scenario_from_dict)
from .detector import observe_series
from .metrics import MetricsReport, report as metrics_report
from .sim import run_simulation

log = logging.getLogger(__name__)

DAY = 86_400
CONTROLLERS = ("fixed", "astm")
BUNDLED_MODEL = "forecaster.json"
# Reference magnitudes quoted alongside our own numbers (simulator-based study, different setup)
REFERENCE = {"flow": (15.0, 21.0), "delay": (12.0, 5.0)}


# ---------------------------------------------------------------------------
# scenario generation


def _scenario_seed(seed: int, index: int) -> int:
    ss = np.random.SeedSequence([check_seed(seed), index])
    return int(ss.generate_state(1, np.uint64)[0])


def generate_scenario(seed: int, horizon: int = DAY) -> Scenario:
    """One 4-approach, 2-phase day with a morning and an evening peak.

    Demand is constant within each clock hour. Every approach runs at 35% of
    its base rate overnight, and two approaches (one per phase) see a morning
    peak of 1.8-2.5x base while the other two peak in the evening, so the
    busiest hour of every approach is at least 1.8 / 0.35 times its quietest.
    """
    rng = np.random.default_rng(seed)
    base = rng.uniform(100.0, 250.0, 4)
    sat = rng.choice(np.arange(1500.0, 1801.0, 50.0), 4)
    ffc = np.round(rng.uniform(8.0, 14.0, 4), 1)
    am_start, pm_start = int(rng.integers(6, 9)), int(rng.integers(16, 19))
    am_len, pm_len = int(rng.integers(2, 4)), int(rng.integers(2, 4))
    am_dirs = (0, 2) if rng.random() < 0.5 else (1, 3)
    pm_dirs = tuple(a for a in range(4) if a not in am_dirs)
    am_peak = rng.uniform(1.8, 2.5, 4)
    pm_peak = rng.uniform(1.8, 2.5, 4)
    shoulder = rng.uniform(1.1, 1.4, 4)

    hours = horizon // 3600
    starts, ends, rates = [], [], []
    for h in range(hours):
        hod = h % 24
        row = []
        for a in range(4):
            f = 1.0
            if hod < 6:
                f = 0.35
            elif hod >= 22:
                f = 0.5
            if am_start <= hod < am_start + am_len:
                f = am_peak[a] if a in am_dirs else shoulder[a]
            elif pm_start <= hod < pm_start + pm_len:
                f = pm_peak[a] if a in pm_dirs else shoulder[a]
            row.append(float(round(base[a] * f)))
        starts.append(float(h * 3600))
        ends.append(float((h + 1) * 3600))
        rates.append(row)
    approaches = [Approach(a, float(sat[a]), float(ffc[a])) for a in range(4)]
    phases = [Phase(0, (0, 1)), Phase(1, (2, 3))]
    return Scenario(approaches, phases, DemandProfile(starts, ends, rates), 4.0, horizon, seed)


def generate_suite(n: int, seed: int, horizon: int = DAY) -> list[Scenario]:
    """``n`` scenarios; scenario ``i`` depends only on ``(seed, i)``."""
    if n < 1:
        raise ValueError("suite size must be >= 1")
    return [generate_scenario(_scenario_seed(seed, i), horizon) for i in range(n)]


def zero_demand(scenario: Scenario) -> Scenario:
    d = scenario.demand
    empty = DemandProfile(d.starts, d.ends, [[0.0] * d.n_approaches for _ in d.rates])
    return Scenario(scenario.approaches, scenario.phases, empty, scenario.lost_time_per_phase,
                    scenario.horizon, scenario.seed, scenario.detector, scenario.control)


# ---------------------------------------------------------------------------
# forecaster training data


def synthetic_counts(
    n_scenarios: int, days: int, seed: int, start: datetime = datetime(2017, 1, 2)
) -> dict[str, tuple[list[datetime], list[float]]]:
    """Detector-observed hourly counts per approach of generated scenarios.

    Scenario ``k`` starts ``k`` weeks after ``start`` so calendar fields vary.
    """
    out = {}
    for k, sc in enumerate(generate_suite(n_scenarios, seed)):
        t0 = start + timedelta(weeks=k)
        hours = days * 24
        times = (np.arange(hours) * 3600) % sc.horizon
        idx = np.searchsorted(np.asarray(sc.demand.starts), times, side="right") - 1
        rng = np.random.default_rng([sc.seed, 0xC0])
        for a in range(len(sc.approaches)):
            lam = np.array([r[a] for r in sc.demand.rates])[idx]
            truth = rng.poisson(lam).tolist()
            obs = observe_series(sc.detector, truth, _scenario_seed(sc.seed, 100 + a))
            stamps = [t0 + timedelta(hours=h) for h in range(hours)]
            out[f"s{k}a{a}"] = (stamps, [float(c) for c in obs])
    return out


def train_forecaster(
    series: Mapping[str, tuple[Sequence[datetime], Sequence[float]]],
    hidden_dim: int = 32,
    epochs: int = 1500,
    learning_rate: float = 0.5,
    seed: int = 0,
    context: int = 24,
) -> tuple[fc.LstmModel, list[float]]:
    X, y = fc.dataset_from_series(dict(series), context)
    model = fc.init_model(hidden_dim, seed, context=context)
    return fc.train(model, (X, y), epochs, learning_rate)


def bundled_model() -> fc.LstmModel:
    """Forecaster shipped with the package (see README for how it was trained)."""
    text = resources.files("trafficlab").joinpath("data", BUNDLED_MODEL).read_text()
    return fc.model_from_dict(json.loads(text))


# ---------------------------------------------------------------------------
# comparisons


@dataclass(frozen=True)
class ExperimentConfig:
    scenarios: tuple[Scenario, ...]
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    arms: tuple[str, str] = ("fixed", "astm")
    fixed_cycle: float = 90.0
    model_path: str | None = None
    out_dir: str | None = None
    start: datetime = DEFAULT_START
    workers: int = 1

    def __post_init__(self) -> None:
        object.__setattr__(self, "scenarios", tuple(self.scenarios))
        object.__setattr__(self, "seeds", tuple(check_seed(s) for s in self.seeds))
        object.__setattr__(self, "arms", tuple(self.arms))
        if not self.scenarios:
            raise ValueError("experiment needs at least one scenario")
        if not self.seeds:
            raise ValueError("experiment needs at least one seed")
        if len(self.arms) != 2 or any(a not in CONTROLLERS for a in self.arms):
            raise ValueError(f"arms must be two of {CONTROLLERS}, got {self.arms}")

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any], base: Path | None = None) -> ExperimentConfig:
        base = base or Path(".")
        if "scenarios" in doc:
            scenarios = [load_scenario(base / p) if isinstance(p, str) else scenario_from_dict(p)
                         for p in doc["scenarios"]]
        elif "generate" in doc:
            gen = doc["generate"]
            scenarios = generate_suite(int(gen.get("n", 20)), int(gen.get("seed", 0)),
                                       int(gen.get("horizon", DAY)))
        else:
            raise ValueError("experiment config needs 'scenarios' or 'generate'")
        kw: dict[str, Any] = {}
        if "seeds" in doc:
            kw["seeds"] = tuple(int(s) for s in doc["seeds"])
        if "arms" in doc:
            kw["arms"] = tuple(doc["arms"])
        if "fixed_cycle" in doc:
            kw["fixed_cycle"] = float(doc["fixed_cycle"])
        if doc.get("model"):
            kw["model_path"] = str(base / doc["model"])
        if "out" in doc:
            kw["out_dir"] = doc["out"]
        if "start" in doc:
            kw["start"] = datetime.fromisoformat(doc["start"])
        if "workers" in doc:
            kw["workers"] = int(doc["workers"])
        return cls(tuple(scenarios), **kw)


@dataclass(frozen=True)
class RunPair:
    scenario: int
    seed: int
    baseline: MetricsReport
    candidate: MetricsReport


def _mean(values: Sequence[float | None]) -> float | None:
    vals = [v for v in values if v is not None]
    return sum(vals) / len(vals) if vals else None


@dataclass(frozen=True)
class ComparisonReport:
    arms: tuple[str, str]
    runs: tuple[RunPair, ...] = ()
    notes: tuple[str, ...] = field(default=())

    def mean(self, arm: int, metric: str) -> float | None:
        side = "baseline" if arm == 0 else "candidate"
        return _mean([getattr(getattr(r, side), metric) for r in self.runs])

    @property
    def flow_improvement(self) -> float | None:
        """Relative flow gain of the candidate arm, ``(cand - base) / base``."""
        b, c = self.mean(0, "flow_rate"), self.mean(1, "flow_rate")
        if b is None or c is None or b == 0:
            return None
        return (c - b) / b

    @property
    def delay_improvement(self) -> float | None:
        """Relative delay cut of the candidate arm, ``(base - cand) / base``."""
        b, c = self.mean(0, "mean_delay"), self.mean(1, "mean_delay")
        if b is None or c is None or b == 0:
            return None
        return (b - c) / b


def make_controller(name: str, scenario: Scenario, seed: int, model: fc.LstmModel | None,
                    fixed_cycle: float = 90.0, start: datetime = DEFAULT_START):
    if name == "fixed":
        return fixed_time(scenario, fixed_cycle)
    if name == "astm":
        if model is None:
            raise ValueError("the astm controller needs a forecaster model")
        return AstmController(scenario, model, seed, start=start)
    raise ValueError(f"unknown controller {name!r}")


def _run_pair(job: tuple) -> RunPair:
    idx, scenario, seed, arms, model, fixed_cycle, start = job
    reports = []
    for arm in arms:
        try:
            ctl = make_controller(arm, scenario, seed, model, fixed_cycle, start + timedelta(days=idx))
            reports.append(metrics_report(run_simulation(scenario, ctl, seed)))
        except Exception as exc:
            raise RuntimeError(f"scenario {idx}, seed {seed}, arm {arm}: {exc}") from exc
    return RunPair(idx, seed, reports[0], reports[1])


def run_comparison(config: ExperimentConfig, model: fc.LstmModel | None = None) -> ComparisonReport:
    """Paired runs of both arms for every scenario x seed, ordered by scenario then seed.

    Both arms of a pair share the seed, hence the same arrival realization.
    """
    if model is None and "astm" in config.arms:
        model = fc.load_model(config.model_path) if config.model_path else bundled_model()
    jobs = [(i, sc, seed, config.arms, model, config.fixed_cycle, config.start)
            for i, sc in enumerate(config.scenarios) for seed in config.seeds]
    if config.workers > 1:
        with ProcessPoolExecutor(config.workers) as pool:
            runs = list(pool.map(_run_pair, jobs))
    else:
        runs = [_run_pair(j) for j in jobs]
    notes = []
    if any(r.baseline.mean_delay is None or r.candidate.mean_delay is None for r in runs):
        notes.append("no departures in some runs: their delay is undefined and left out of means")
    return ComparisonReport(tuple(config.arms), tuple(runs), tuple(notes))


# ---------------------------------------------------------------------------
# report files

_METRICS = ("flow_rate", "mean_delay", "tti", "los", "adt", "arrivals", "departures")


def _fmt(v: object) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return f"{v:.6f}"
    return str(v)


def _pct(v: float | None) -> str:
    return "undefined" if v is None else f"{100 * v:+.1f}%"


def summary_text(report: ComparisonReport) -> str:
    base, cand = report.arms
    lines = [f"paired comparison: {base} (baseline) vs {cand}",
             f"runs: {len(report.runs)}", ""]
    for metric, unit in (("flow_rate", "veh/min"), ("mean_delay", "s/veh")):
        b, c = report.mean(0, metric), report.mean(1, metric)
        lines.append(f"{metric:<11} {base:>6}: {_fmt(b) or 'undefined':>12} {unit}   "
                     f"{cand:>6}: {_fmt(c) or 'undefined':>12} {unit}")
    lines.append(f"flow improvement   {_pct(report.flow_improvement)}")
    lines.append(f"delay reduction    {_pct(report.delay_improvement)}")
    (fb, fa), (db, da) = REFERENCE["flow"], REFERENCE["delay"]
    lines.append("")
    lines.append(f"reference magnitudes: flow {fb:g} -> {fa:g} veh/min ({(fa - fb) / fb:+.0%}), "
                 f"delay {db:g} -> {da:g} s/veh ({(db - da) / db:.0%} reduction)")
    lines.extend(report.notes)
    return "\n".join(lines) + "\n"


def emit_report(report: ComparisonReport, out_dir: str | Path) -> list[Path]:
    """Write ``runs.csv``, ``aggregate.csv`` and ``summary.txt``; output is byte-stable."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create report directory {out}: {exc}") from exc
    base, cand = report.arms
    cols = [f"{arm}_{m}" for arm in ("baseline", "candidate") for m in _METRICS]
    runs_path, agg_path, txt_path = out / "runs.csv", out / "aggregate.csv", out / "summary.txt"
    try:
        with open(runs_path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["scenario", "seed", *cols])
            for r in report.runs:
                w.writerow([r.scenario, r.seed,
                            *[_fmt(getattr(r.baseline, m)) for m in _METRICS],
                            *[_fmt(getattr(r.candidate, m)) for m in _METRICS]])
        with open(agg_path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["runs", *cols, "flow_improvement", "delay_reduction"])
            if report.runs:
                row = [len(report.runs)]
                for k, m in [(k, m) for k in (0, 1) for m in _METRICS]:
                    row.append("" if m == "los" else _fmt(report.mean(k, m)))
                row += [_fmt(report.flow_improvement), _fmt(report.delay_improvement)]
                w.writerow(row)
        txt_path.write_text(summary_text(report))
    except OSError as exc:
        raise OSError(f"writing report to {out}: {exc}") from exc
    return [runs_path, agg_path, txt_path]


def load_experiment(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    return ExperimentConfig.from_dict(json.loads(path.read_text()), path.parent)


def default_experiment(n: int = 20, seeds: Sequence[int] = (0, 1, 2, 3, 4), suite_seed: int = 2017,
                       **kw) -> ExperimentConfig:
    return ExperimentConfig(tuple(generate_suite(n, suite_seed)), tuple(seeds), **kw)

