"""Fixed-tick simulation of one signalized intersection.

Each second every approach receives a Poisson number of arrivals drawn from its
own seed-derived stream, so arrival realizations depend only on
``(scenario demand, seed)`` and never on the controller. Queues are FIFO.
While an approach's phase is green it banks saturation-flow service
(``s / 3600`` vehicles per green second); at the start of each green tick it
discharges one vehicle per whole unit banked. Banked service is dropped on red
and capped at one vehicle while the queue is empty, so no green period
discharges more than ``floor(elapsed_green * s / 3600)`` vehicles and, under
continuous green, successive departures are at least one saturation headway
apart.

Delay is measured at the stop line: a vehicle served at tick ``t`` leaves the
intersection at ``t + free_flow_crossing`` and its delay is ``t - arrival``.
Vehicles still queued at the horizon keep a pending (NaN) departure.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Protocol

import numpy as np

from .core import Scenario, SignalPlan, check_seed, random_stream

ARRIVAL_STREAM = 0xA7
_EPS = 1e-9


class ConfigurationError(ValueError):
    """A controller produced a plan the simulator refuses to run."""


class Controller(Protocol):
    def plan(self, t: int, arrivals: np.ndarray) -> SignalPlan:
        """Plan for the cycle starting at tick ``t``.

        ``arrivals`` is a read-only ``(n_approaches, t)`` array of per-second
        arrival counts observed before ``t``.
        """
        ...


class VehicleRecord(NamedTuple):
    approach: int
    arrival_time: float
    departure_time: float | None
    delay: float | None


@dataclass(eq=False)
class SimLog:
    """Everything a run produced. Vehicle arrays are ordered by approach, then arrival."""

    approach: np.ndarray
    arrival_time: np.ndarray
    departure_time: np.ndarray
    delay: np.ndarray
    per_minute_throughput: np.ndarray
    final_queue_lengths: tuple[int, ...]
    horizon: int
    free_flow_crossing: tuple[float, ...] = ()
    plans: list[tuple[float, SignalPlan]] = field(default_factory=list)

    @property
    def n_approaches(self) -> int:
        return len(self.final_queue_lengths)

    @property
    def departed(self) -> np.ndarray:
        return ~np.isnan(self.departure_time)

    @property
    def service_time(self) -> np.ndarray:
        """Stop-line discharge tick of each vehicle (NaN while pending)."""
        return self.arrival_time + self.delay

    @property
    def vehicles(self) -> list[VehicleRecord]:
        out = []
        for a, arr, dep, d in zip(self.approach.tolist(), self.arrival_time.tolist(),
                                  self.departure_time.tolist(), self.delay.tolist()):
            pending = math.isnan(dep)
            out.append(VehicleRecord(a, arr, None if pending else dep, None if pending else d))
        return out

    def arrivals_by_approach(self) -> np.ndarray:
        return np.bincount(self.approach, minlength=self.n_approaches)

    def departures_by_approach(self) -> np.ndarray:
        return np.bincount(self.approach[self.departed], minlength=self.n_approaches)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, SimLog):
            return NotImplemented
        arrays = ("approach", "arrival_time", "departure_time", "delay", "per_minute_throughput")
        return (
            self.horizon == other.horizon
            and self.final_queue_lengths == other.final_queue_lengths
            and self.free_flow_crossing == other.free_flow_crossing
            and all(np.array_equal(getattr(self, k), getattr(other, k), equal_nan=True) for k in arrays)
            and self.plans == other.plans
        )

    def to_csv(self, vehicles_path: str | Path, throughput_path: str | Path) -> None:
        with open(vehicles_path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["approach", "arrival", "departure", "delay"])
            for rec in self.vehicles:
                w.writerow([
                    rec.approach,
                    f"{rec.arrival_time:g}",
                    "" if rec.departure_time is None else f"{rec.departure_time:g}",
                    "" if rec.delay is None else f"{rec.delay:g}",
                ])
        with open(throughput_path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["minute", "departures"])
            for m, n in enumerate(self.per_minute_throughput.tolist()):
                w.writerow([m, n])


def draw_arrivals(scenario: Scenario, seed: int) -> np.ndarray:
    """Per-second Poisson arrival counts, shape ``(n_approaches, horizon)``."""
    seed = check_seed(seed)
    counts = np.empty((len(scenario.approaches), scenario.horizon), dtype=np.int64)
    for a in range(len(scenario.approaches)):
        lam = scenario.demand.tick_rates(a, scenario.horizon) / 3600.0
        counts[a] = random_stream(seed, ARRIVAL_STREAM, a).poisson(lam)
    return counts


def _add_green(row: np.ndarray, start: float, end: float) -> None:
    horizon = row.shape[0]
    start, end = max(round(start, 6), 0.0), min(round(end, 6), float(horizon))
    if end <= start:
        return
    i, j = math.floor(start), math.floor(end)
    if i == j:
        row[i] += end - start
        return
    row[i] += (i + 1) - start
    row[i + 1 : j] += 1.0
    if j < horizon:
        row[j] += end - j


def build_schedule(
    scenario: Scenario, controller: Controller, arrivals: np.ndarray
) -> tuple[np.ndarray, list[tuple[float, SignalPlan]]]:
    """Green fraction of every tick for every phase, plus the plans applied.

    Plans are requested at cycle starts once the control cadence has elapsed,
    so a running cycle is never cut short. Each phase is preceded by its share
    of the lost time as all-red.
    """
    horizon = scenario.horizon
    n_phases = len(scenario.phases)
    cfg = scenario.control
    green = np.zeros((n_phases, horizon))
    plans: list[tuple[float, SignalPlan]] = []
    plan: SignalPlan | None = None
    start, next_control = 0.0, 0.0
    while start < horizon:
        if plan is None or start >= next_control:
            tick = math.floor(start)
            plan = controller.plan(tick, arrivals[:, :tick])
            try:
                plan.validate(scenario.phases, cfg.c_min, cfg.c_max)
            except ValueError as exc:
                raise ConfigurationError(f"plan requested at t={tick}: {exc}") from None
            plans.append((start, plan))
            while next_control <= start:
                next_control += cfg.cadence
        red = plan.lost_time / n_phases
        t = start
        for k, g in enumerate(plan.greens):
            t += red
            _add_green(green[k], t, t + g)
            t += g
        start += plan.cycle_length
    return green, plans


def _discharge(arrivals: list[int], green: list[float], rate: float) -> tuple[list[int], int]:
    waiting = 0
    budget = 0.0
    served: list[int] = []
    for t, n in enumerate(arrivals):
        if n:
            waiting += n
        f = green[t]
        if f > 0.0:
            while waiting and budget >= 1.0 - _EPS:
                waiting -= 1
                budget -= 1.0
                served.append(t)
            budget += f * rate
            if not waiting and budget > 1.0:
                budget = 1.0
        else:
            budget = 0.0
    return served, waiting


def run_simulation(scenario: Scenario, controller: Controller, seed: int | None = None) -> SimLog:
    """Simulate ``scenario`` under ``controller``; identical inputs give identical logs."""
    seed = scenario.seed if seed is None else check_seed(seed)
    arrivals = draw_arrivals(scenario, seed)
    arrivals.setflags(write=False)
    green, plans = build_schedule(scenario, controller, arrivals)

    horizon = scenario.horizon
    cols: dict[str, list[np.ndarray]] = {k: [] for k in ("approach", "arrival", "departure", "delay")}
    queues = []
    all_served = []
    for a, appr in enumerate(scenario.approaches):
        k = scenario.phase_of(a)
        served, waiting = _discharge(arrivals[a].tolist(), green[k].tolist(),
                                     appr.saturation_flow / 3600.0)
        arr_t = np.repeat(np.arange(horizon, dtype=float), arrivals[a])
        dep = np.full(arr_t.shape, np.nan)
        delay = np.full(arr_t.shape, np.nan)
        served_t = np.asarray(served, dtype=float)
        m = len(served)
        dep[:m] = served_t + appr.free_flow_crossing
        delay[:m] = np.maximum(served_t - arr_t[:m], 0.0)
        cols["approach"].append(np.full(arr_t.shape, a, dtype=np.int64))
        cols["arrival"].append(arr_t)
        cols["departure"].append(dep)
        cols["delay"].append(delay)
        queues.append(waiting)
        all_served.append(served_t)

    served_all = np.concatenate(all_served) if all_served else np.empty(0)
    n_minutes = math.ceil(horizon / 60)
    throughput = np.bincount((served_all // 60).astype(np.int64), minlength=n_minutes)
    return SimLog(
        approach=np.concatenate(cols["approach"]),
        arrival_time=np.concatenate(cols["arrival"]),
        departure_time=np.concatenate(cols["departure"]),
        delay=np.concatenate(cols["delay"]),
        per_minute_throughput=throughput,
        final_queue_lengths=tuple(queues),
        horizon=horizon,
        free_flow_crossing=tuple(a.free_flow_crossing for a in scenario.approaches),
        plans=plans,
    )


def true_counts(log: SimLog, interval: int) -> np.ndarray:
    """Arrivals per ``interval``-second bin, shape ``(n_approaches, horizon // interval)``."""
    if interval <= 0 or log.horizon % interval:
        raise ValueError(f"interval {interval} does not divide horizon {log.horizon}")
    n_bins = log.horizon // interval
    out = np.zeros((log.n_approaches, n_bins), dtype=np.int64)
    bins = (log.arrival_time // interval).astype(np.int64)
    np.add.at(out, (log.approach, bins), 1)
    return out


class FixedController:
    """Always returns the same plan."""

    def __init__(self, plan: SignalPlan):
        self._plan = plan

    def plan(self, t: int, arrivals: np.ndarray) -> SignalPlan:
        return self._plan
