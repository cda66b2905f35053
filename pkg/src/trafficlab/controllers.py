"""Signal controllers the simulator can drive: fixed-time and forecast-driven."""

from __future__ import annotations

from datetime import datetime, timedelta

import numpy as np

from . import forecast as fc
from .control import ControlConfig, fixed_plan, plan_for_interval
from .core import Scenario, SignalPlan, check_seed, random_stream
from .detector import DetectorModel, observe_series
from .sim import FixedController

WARMUP_STREAM = 0x3A2
DEFAULT_START = datetime(2017, 6, 5)


def fixed_time(scenario: Scenario, cycle: float = 90.0) -> FixedController:
    """Equal-split fixed-time baseline."""
    return FixedController(fixed_plan(scenario, cycle))


def _sub_seed(seed: int, *words: int) -> int:
    ss = np.random.SeedSequence([check_seed(seed), *words])
    return int(ss.generate_state(1, np.uint64)[0])


def warmup_minutes(scenario: Scenario, seed: int, minutes: int = 1440) -> np.ndarray:
    """True per-minute arrivals for the ``minutes`` before t=0, shape (n_approaches, minutes).

    Demand before the run repeats the scenario profile periodically.
    """
    times = (np.arange(-minutes, 0) * 60) % scenario.horizon
    starts = np.asarray(scenario.demand.starts)
    idx = np.searchsorted(starts, times, side="right") - 1
    out = np.empty((len(scenario.approaches), minutes), dtype=np.int64)
    for a in range(len(scenario.approaches)):
        rates = np.array([r[a] for r in scenario.demand.rates])[idx]
        out[a] = random_stream(seed, WARMUP_STREAM, a).poisson(rates / 60.0)
    return out


class AstmController:
    """Detector counts -> LSTM forecast -> Webster cycle with fuzzy adjustment.

    The controller sees arrivals only through the detector, binned per minute.
    A prior day of detections (same demand profile, separate random stream)
    seeds the forecaster's context window. Forecasts are made on clock hours;
    a plan requested ``e`` minutes into an hour uses the demand expected over
    the next 60 minutes, blending the current and next hour's forecast. Counts
    are de-biased for the detector's recall and false-positive rate before
    planning.
    """

    def __init__(
        self,
        scenario: Scenario,
        model: fc.LstmModel,
        seed: int,
        detector: DetectorModel | None = None,
        config: ControlConfig | None = None,
        start: datetime = DEFAULT_START,
        horizon_hours: int = 12,
    ):
        self.scenario = scenario
        self.model = model
        self.detector = detector or scenario.detector
        self.config = config or scenario.control
        self.start = start
        self.horizon_hours = horizon_hours
        n = len(scenario.approaches)
        self._det_seeds = [_sub_seed(seed, 0xDE7, a) for a in range(n)]
        warm = warmup_minutes(scenario, seed)
        self._warm_minutes = warm.shape[1]
        self._observed = [
            observe_series(self.detector, warm[a].tolist(), self._det_seeds[a]) for a in range(n)
        ]
        self._forecasts: dict[int, np.ndarray] = {}
        self.history: list[tuple[int, np.ndarray, float]] = []

    def _observe_until(self, arrivals: np.ndarray, minute: int) -> None:
        """Extend the observed per-minute record to cover sim minutes ``< minute``."""
        done = len(self._observed[0]) - self._warm_minutes
        if minute <= done:
            return
        for a, obs in enumerate(self._observed):
            truth = arrivals[a, done * 60 : minute * 60].reshape(-1, 60).sum(axis=1)
            obs.extend(observe_series(self.detector, truth.tolist(), self._det_seeds[a],
                                      offset=self._warm_minutes + done))

    def hourly_counts(self, arrivals: np.ndarray, hour: int, hours: int = 24) -> np.ndarray:
        """Observed counts of the ``hours`` clock hours before ``hour``, shape (n, hours)."""
        self._observe_until(arrivals, hour * 60)
        end = self._warm_minutes + hour * 60
        begin = end - hours * 60
        if begin < 0:
            raise ValueError(f"not enough observed history for hour {hour}")
        obs = np.array([o[begin:end] for o in self._observed], dtype=float)
        return obs.reshape(len(obs), hours, 60).sum(axis=2)

    def forecast(self, arrivals: np.ndarray, hour: int) -> np.ndarray:
        """Observed-count forecast for ``horizon_hours`` starting at clock hour ``hour``."""
        if hour not in self._forecasts:
            ctx = max(self.model.context, 2)
            counts = self.hourly_counts(arrivals, hour, ctx)
            stamps = [self.start + timedelta(hours=hour - ctx + k) for k in range(ctx)]
            query_ts = self.start + timedelta(hours=hour)
            X = np.stack([fc.as_matrix(fc.query_history(c.tolist(), stamps)) for c in counts])
            self._forecasts[hour] = fc.rollout(self.model, X, query_ts, self.horizon_hours)
        return self._forecasts[hour]

    def _debias(self, observed: np.ndarray) -> np.ndarray:
        vol = np.maximum(observed - self.detector.false_positive_rate * 60.0, 0.0)
        return vol / self.detector.recall if self.detector.recall > 0 else vol

    def plan(self, t: int, arrivals: np.ndarray) -> SignalPlan:
        hour, into = divmod(t, 3600)
        pred = self._debias(self.forecast(arrivals, hour))
        w = into / 3600.0
        volumes = (1.0 - w) * pred[:, 0] + w * pred[:, 1]
        crit_now = sum(max(pred[a, 0] for a in ph.approaches_served) for ph in self.scenario.phases)
        crit_next = sum(max(pred[a, 1] for a in ph.approaches_served) for ph in self.scenario.phases)
        trend = crit_next - crit_now  # veh/h per hour
        plan = plan_for_interval(self.scenario, volumes.tolist(), self.config, trend)
        self.history.append((t, volumes, trend))
        return plan
