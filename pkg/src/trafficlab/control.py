"""Signal timing: Webster cycle length, green splits and a fuzzy cycle adjustment.

The cycle length follows Webster's delay-minimising rule

    C = (1.5 L + 5) / (1 - sum(Y_i))

rounded half-up to a multiple of 5 s and clamped into ``[c_min, c_max]``.
A small Mamdani fuzzy system then stretches or shortens the cycle according to
the predicted demand level (total critical flow ratio) and its hourly trend.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Mapping, NamedTuple, Sequence

from .core import Phase, Scenario, SignalPlan

INF = math.inf


class InfeasiblePlanError(ValueError):
    """Minimum greens do not fit into the usable part of the cycle."""


# ---------------------------------------------------------------------------
# fuzzy layer

# Trapezoids (a, b, c, d): 0 outside (a, d), 1 on [b, c]. Triangles have b == c;
# shoulders use infinite a, b or c, d.
Trapezoid = tuple[float, float, float, float]


def membership(x: float, shape: Trapezoid) -> float:
    a, b, c, d = shape
    if b <= x <= c:
        return 1.0
    if x < b:
        return 0.0 if x <= a else (x - a) / (b - a)
    return 0.0 if x >= d else (d - x) / (d - c)


def _default_ratio_sets() -> dict[str, Trapezoid]:
    return {
        "LOW": (-INF, -INF, 0.0, 0.4),
        "MED": (0.3, 0.55, 0.55, 0.8),
        "HIGH": (0.7, 1.0, INF, INF),
    }


def _default_trend_sets() -> dict[str, Trapezoid]:
    return {
        "FALLING": (-INF, -INF, -200.0, -50.0),
        "STEADY": (-100.0, 0.0, 0.0, 100.0),
        "RISING": (50.0, 200.0, INF, INF),
    }


def _default_rules() -> dict[tuple[str, str], str]:
    rules = {}
    for trend in ("FALLING", "STEADY", "RISING"):
        rules[("LOW", trend)] = "short"
        rules[("HIGH", trend)] = "long"
    rules[("MED", "FALLING")] = "short"
    rules[("MED", "STEADY")] = "keep"
    rules[("MED", "RISING")] = "long"
    return rules


def _shape_to_json(shape: Trapezoid) -> list[float | None]:
    return [None if math.isinf(v) else v for v in shape]


def _shape_from_json(values: Sequence[float | None]) -> Trapezoid:
    if len(values) != 4:
        raise ValueError(f"membership shape needs 4 breakpoints, got {list(values)}")
    # null stands for the infinite side of a shoulder
    left = [-INF if v is None else float(v) for v in values[:2]]
    right = [INF if v is None else float(v) for v in values[2:]]
    return (left[0], left[1], right[0], right[1])


@dataclass(frozen=True)
class FuzzyConfig:
    ratio_sets: Mapping[str, Trapezoid] = field(default_factory=_default_ratio_sets)
    trend_sets: Mapping[str, Trapezoid] = field(default_factory=_default_trend_sets)
    singletons: Mapping[str, float] = field(
        default_factory=lambda: {"short": 0.85, "keep": 1.0, "long": 1.15}
    )
    rules: Mapping[tuple[str, str], str] = field(default_factory=_default_rules)

    def __post_init__(self) -> None:
        for name, shape in {**self.ratio_sets, **self.trend_sets}.items():
            a, b, c, d = shape
            if not (a <= b <= c <= d):
                raise ValueError(f"fuzzy set {name}: breakpoints must be non-decreasing")
        for name, value in self.singletons.items():
            if not value > 0:
                raise ValueError(f"output singleton {name} must be > 0")
        expected = {(r, t) for r in self.ratio_sets for t in self.trend_sets}
        if set(self.rules) != expected:
            raise ValueError("rule table must have one entry per (ratio set, trend set) pair")
        for out in self.rules.values():
            if out not in self.singletons:
                raise ValueError(f"rule output {out!r} has no singleton")

    @property
    def output_range(self) -> tuple[float, float]:
        return min(self.singletons.values()), max(self.singletons.values())

    def peak(self, variable: str, name: str) -> float:
        """A point where the named set has full membership (finite side of a shoulder)."""
        a, b, c, d = (self.ratio_sets if variable == "ratio" else self.trend_sets)[name]
        return c if math.isinf(b) else b

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any]) -> FuzzyConfig:
        kw: dict[str, Any] = {}
        if "ratio_sets" in doc:
            kw["ratio_sets"] = {k: _shape_from_json(v) for k, v in doc["ratio_sets"].items()}
        if "trend_sets" in doc:
            kw["trend_sets"] = {k: _shape_from_json(v) for k, v in doc["trend_sets"].items()}
        if "singletons" in doc:
            kw["singletons"] = {k: float(v) for k, v in doc["singletons"].items()}
        if "rules" in doc:
            kw["rules"] = {(r["ratio"], r["trend"]): r["output"] for r in doc["rules"]}
        return cls(**kw)

    def to_dict(self) -> dict[str, Any]:
        return {
            "ratio_sets": {k: _shape_to_json(v) for k, v in self.ratio_sets.items()},
            "trend_sets": {k: _shape_to_json(v) for k, v in self.trend_sets.items()},
            "singletons": dict(self.singletons),
            "rules": [{"ratio": r, "trend": t, "output": o} for (r, t), o in self.rules.items()],
        }


def fuzzy_adjust(config: FuzzyConfig, predicted_ratio: float, trend: float) -> float:
    """Cycle multiplier from demand level and trend (veh/h per hour).

    Rules fire with min-conjunction, each output singleton keeps its strongest
    rule, and the crisp value is the firing-weighted mean of the singletons.
    """
    if not (math.isfinite(predicted_ratio) and math.isfinite(trend)):
        raise ValueError("fuzzy inputs must be finite")
    mu_ratio = {k: membership(predicted_ratio, s) for k, s in config.ratio_sets.items()}
    mu_trend = {k: membership(trend, s) for k, s in config.trend_sets.items()}
    strength = dict.fromkeys(config.singletons, 0.0)
    for (r, t), out in config.rules.items():
        strength[out] = max(strength[out], min(mu_ratio[r], mu_trend[t]))
    total = sum(strength.values())
    if total == 0.0:
        return 1.0
    crisp = sum(w * config.singletons[k] for k, w in strength.items()) / total
    # a weighted mean cannot leave the singleton range; clamp away rounding noise
    lo, hi = config.output_range
    return min(max(crisp, lo), hi)


# ---------------------------------------------------------------------------
# Webster timing


@dataclass(frozen=True)
class ControlConfig:
    c_min: float = 40.0
    c_max: float = 120.0
    y_cap: float = 0.95
    cadence: float = 900.0
    rounding: float = 5.0
    use_fuzzy: bool = True
    fuzzy: FuzzyConfig = field(default_factory=FuzzyConfig)

    def __post_init__(self) -> None:
        if not 0 < self.c_min <= self.c_max:
            raise ValueError("need 0 < c_min <= c_max")
        if not 0 < self.y_cap <= 1:
            raise ValueError("y_cap must lie in (0, 1]")
        if self.cadence <= 0 or self.rounding <= 0:
            raise ValueError("cadence and rounding must be > 0")

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any]) -> ControlConfig:
        doc = dict(doc)
        fuzzy = FuzzyConfig.from_dict(doc.pop("fuzzy", {}))
        unknown = set(doc) - {"c_min", "c_max", "y_cap", "cadence", "rounding", "use_fuzzy"}
        if unknown:
            raise ValueError(f"control: unknown keys {sorted(unknown)}")
        return cls(fuzzy=fuzzy, **doc)

    def to_dict(self) -> dict[str, Any]:
        return {
            "c_min": self.c_min,
            "c_max": self.c_max,
            "y_cap": self.y_cap,
            "cadence": self.cadence,
            "rounding": self.rounding,
            "use_fuzzy": self.use_fuzzy,
            "fuzzy": self.fuzzy.to_dict(),
        }


DEFAULT_CONTROL = ControlConfig()


class CriticalVolumes(NamedTuple):
    ratios: tuple[float, ...]
    sum_y: float

    @property
    def oversaturated(self) -> bool:
        return self.sum_y >= 1.0


class WebsterCycle(NamedTuple):
    cycle: float
    raw: float
    oversaturated: bool


def critical_volumes(
    phases: Sequence[Phase],
    volumes: Mapping[int, float] | Sequence[float],
    saturation_flows: Mapping[int, float] | Sequence[float],
) -> CriticalVolumes:
    """Per phase, the largest volume / saturation-flow ratio over its approaches."""
    ratios = []
    for ph in phases:
        y = 0.0
        for a in ph.approaches_served:
            try:
                v, s = volumes[a], saturation_flows[a]
            except (KeyError, IndexError):
                raise ValueError(f"phase {ph.id}: no volume for approach {a}") from None
            if v < 0:
                raise ValueError(f"approach {a}: negative volume {v}")
            y = max(y, v / s)
        ratios.append(y)
    return CriticalVolumes(tuple(ratios), sum(ratios))


def round_half_up(x: float, step: float = 5.0) -> float:
    # the 1e-9 nudge keeps float noise such as 57.49999999 on the upper side of a tie
    return step * math.floor(x / step + 0.5 + 1e-9)


def webster_cycle(
    lost_time: float,
    sum_y: float,
    c_min: float = 40.0,
    c_max: float = 120.0,
    y_cap: float = 0.95,
    step: float = 5.0,
) -> WebsterCycle:
    if lost_time < 0:
        raise ValueError("lost time must be >= 0")
    if sum_y >= y_cap:
        return WebsterCycle(c_max, INF, True)
    raw = (1.5 * lost_time + 5.0) / (1.0 - sum_y)
    return WebsterCycle(min(max(round_half_up(raw, step), c_min), c_max), raw, False)


def green_splits(
    cycle: float,
    lost_time: float,
    ratios: CriticalVolumes | Sequence[float],
    min_greens: Sequence[float] | None = None,
    resolution: float = 0.1,
) -> list[float]:
    """Divide ``cycle - lost_time`` among phases in proportion to their ratios.

    Phases whose share falls below their minimum green are pinned at the
    minimum and the rest is re-shared. Greens land on a ``resolution`` grid by
    largest-remainder rounding so they sum to the usable time.
    """
    if isinstance(ratios, CriticalVolumes):
        ratios = ratios.ratios
    ratios = [float(y) for y in ratios]
    n = len(ratios)
    if n == 0:
        raise ValueError("no phases to split")
    if any(y < 0 for y in ratios):
        raise ValueError("critical ratios must be >= 0")
    available = cycle - lost_time
    if available <= 0:
        raise ValueError(f"cycle {cycle} does not exceed lost time {lost_time}")
    mins = [0.0] * n if min_greens is None else [float(m) for m in min_greens]
    if sum(mins) > available + 1e-9:
        raise InfeasiblePlanError(
            f"minimum greens {sum(mins)} s exceed usable cycle time {available} s"
        )

    total_y = sum(ratios)
    weights = [y / total_y for y in ratios] if total_y > 0 else [1.0 / n] * n
    pinned: set[int] = set()
    while True:
        free = [i for i in range(n) if i not in pinned]
        remaining = available - sum(mins[i] for i in pinned)
        w_free = sum(weights[i] for i in free)
        greens = [mins[i] for i in range(n)]
        for i in free:
            share = weights[i] / w_free if w_free > 0 else 1.0 / len(free)
            greens[i] = remaining * share
        short = [i for i in free if greens[i] < mins[i]]
        if not short:
            break
        pinned.update(short)

    units_total = round(available / resolution)
    quotas = [g / resolution for g in greens]
    units = [math.floor(q + 1e-9) for q in quotas]
    leftover = units_total - sum(units)
    order = sorted(range(n), key=lambda i: (-(quotas[i] - units[i]), i))
    for i in order[: max(leftover, 0)]:
        units[i] += 1
    return [round(u * resolution, 10) for u in units]


def plan_for_interval(
    scenario: Scenario,
    forecast: Mapping[int, float] | Sequence[float],
    config: ControlConfig | None = None,
    trend: float = 0.0,
) -> SignalPlan:
    """Signal plan for the next control interval from predicted hourly volumes."""
    config = config or scenario.control
    if any(v < 0 for v in (forecast.values() if isinstance(forecast, Mapping) else forecast)):
        raise ValueError("forecast volumes must be >= 0")
    lost = scenario.lost_time
    cv = critical_volumes(scenario.phases, forecast, [a.saturation_flow for a in scenario.approaches])
    web = webster_cycle(lost, cv.sum_y, config.c_min, config.c_max, config.y_cap, config.rounding)
    cycle = web.cycle
    if config.use_fuzzy:
        m = fuzzy_adjust(config.fuzzy, cv.sum_y, trend)
        cycle = min(max(round_half_up(m * cycle, config.rounding), config.c_min), config.c_max)
    greens = green_splits(cycle, lost, cv.ratios, [p.min_green for p in scenario.phases])
    return SignalPlan(cycle, greens, lost, oversaturated=web.oversaturated)


def fixed_plan(scenario: Scenario, cycle: float = 90.0) -> SignalPlan:
    """Equal-split plan with a fixed cycle."""
    lost = scenario.lost_time
    greens = green_splits(cycle, lost, [0.0] * len(scenario.phases),
                          [p.min_green for p in scenario.phases])
    return SignalPlan(cycle, greens, lost)
