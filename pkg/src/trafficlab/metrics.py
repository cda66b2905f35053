"""Congestion metrics computed from a :class:`~trafficlab.sim.SimLog`.

Delay averages cover departed vehicles only; vehicles still queued when the
horizon ends have no departure yet and are left out of ``mean_delay`` and
``tti``. They still count as arrivals for ADT and peak detection.

The queue model has no spatial speeds, so speed and corridor travel time are
represented by the single-intersection travel time
``free_flow_crossing + delay``, which is what ``tti`` is built on.
"""

from __future__ import annotations

import bisect
import csv
import io
import math
from dataclasses import asdict, dataclass, fields
from typing import Sequence

import numpy as np

from .sim import SimLog

DAY = 86_400
LOS_THRESHOLDS = ((10.0, "A"), (20.0, "B"), (35.0, "C"), (55.0, "D"), (80.0, "E"))
_LOS_LIMITS = [t for t, _ in LOS_THRESHOLDS]


class UndefinedMetricError(ValueError):
    """The log holds no vehicles the metric could be computed from."""


def flow_rate(log: SimLog) -> float:
    """Departures per minute over the whole horizon."""
    if log.horizon < 60:
        raise ValueError(f"horizon {log.horizon} s is shorter than one minute")
    return int(log.departed.sum()) / (log.horizon / 60.0)


def mean_delay(log: SimLog) -> float:
    done = log.departed
    if not done.any():
        raise UndefinedMetricError("no departures: mean delay is undefined")
    return float(log.delay[done].mean())


def adt_aadt(logs: Sequence[SimLog]) -> tuple[list[int], float]:
    if not logs:
        raise ValueError("need at least one daily log")
    for i, lg in enumerate(logs):
        if lg.horizon != DAY:
            raise ValueError(f"log {i} spans {lg.horizon} s, not one day")
    adt = [int(lg.approach.size) for lg in logs]
    return adt, sum(adt) / len(adt)


def tti(log: SimLog, peak: tuple[float, float], free_flow_crossing: float) -> float:
    """Travel time index of vehicles arriving within ``peak``."""
    start, end = peak
    if free_flow_crossing <= 0:
        raise ValueError("free_flow_crossing must be > 0")
    if not 0 <= start < end <= log.horizon:
        raise ValueError(f"peak {peak} not within horizon {log.horizon}")
    sel = log.departed & (log.arrival_time >= start) & (log.arrival_time < end)
    if not sel.any():
        raise UndefinedMetricError("no departures in the peak period")
    return (free_flow_crossing + float(log.delay[sel].mean())) / free_flow_crossing


def los_grade(delay: float) -> str:
    if delay < 0:
        raise ValueError("delay must be >= 0")
    k = bisect.bisect_left(_LOS_LIMITS, delay)
    return LOS_THRESHOLDS[k][1] if k < len(LOS_THRESHOLDS) else "F"


def peak_period(log: SimLog, window: int = 3600, step: int = 60) -> tuple[int, int]:
    """Window of ``window`` seconds (starts on a ``step`` grid) with the most arrivals.

    Ties go to the earliest window.
    """
    if not 0 < window <= log.horizon:
        raise ValueError(f"window {window} must lie in (0, {log.horizon}]")
    per_sec = np.bincount(log.arrival_time.astype(np.int64), minlength=log.horizon)
    cum = np.concatenate(([0], np.cumsum(per_sec)))
    starts = np.arange(0, log.horizon - window + 1, step)
    totals = cum[starts + window] - cum[starts]
    best = int(starts[int(np.argmax(totals))])
    return best, best + window


@dataclass(frozen=True)
class MetricsReport:
    flow_rate: float
    mean_delay: float | None
    adt: float | None
    aadt: float | None
    tti: float | None
    los: str | None
    peak_start: int
    peak_end: int
    arrivals: int
    departures: int

    @property
    def peak_period(self) -> tuple[int, int]:
        return self.peak_start, self.peak_end

    @classmethod
    def header(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    def row(self) -> list[str]:
        return [_fmt(v) for v in asdict(self).values()]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.header())
        w.writerow(self.row())
        return buf.getvalue()

    def summary(self) -> str:
        delay = "undefined (no departures)" if self.mean_delay is None else f"{self.mean_delay:.2f} s/veh"
        lines = [
            f"flow rate      {self.flow_rate:.3f} veh/min",
            f"mean delay     {delay}",
            f"LOS            {self.los or '-'}",
            f"TTI            {_fmt(self.tti) or '-'}",
            f"ADT / AADT     {_fmt(self.adt) or '-'} / {_fmt(self.aadt) or '-'}",
            f"peak period    {self.peak_start}-{self.peak_end} s",
            f"vehicles       {self.arrivals} arrived, {self.departures} departed",
        ]
        return "\n".join(lines) + "\n"


def _fmt(v: object) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return f"{v:.6f}"
    return str(v)


def report(log: SimLog, peak_window: int = 3600) -> MetricsReport:
    """All metrics for one run; delay-based fields are ``None`` without departures."""
    window = min(peak_window, log.horizon)
    peak = peak_period(log, window)
    delay = tti_value = None
    if log.departed.any():
        delay = mean_delay(log)
        ffc = float(np.mean(log.free_flow_crossing)) if log.free_flow_crossing else 1.0
        try:
            tti_value = tti(log, peak, ffc)
        except UndefinedMetricError:
            tti_value = None
    adt = aadt = None
    if log.horizon == DAY:
        days, mean = adt_aadt([log])
        adt, aadt = float(days[0]), mean
    return MetricsReport(
        flow_rate=flow_rate(log) if log.horizon >= 60 else math.nan,
        mean_delay=delay,
        adt=adt,
        aadt=aadt,
        tti=tti_value,
        los=None if delay is None else los_grade(delay),
        peak_start=peak[0],
        peak_end=peak[1],
        arrivals=int(log.approach.size),
        departures=int(log.departed.sum()),
    )
