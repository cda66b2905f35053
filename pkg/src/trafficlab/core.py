"""Domain types shared by every module, scenario file I/O and demand lookup."""

from __future__ import annotations

import bisect
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING, Any, Mapping, Sequence

import numpy as np

if TYPE_CHECKING:
    from .control import ControlConfig
    from .detector import DetectorModel

log = logging.getLogger(__name__)

SATURATION_RANGE = (1500.0, 1800.0)
MIN_GREEN_FLOOR = 5.0
SECONDS_PER_HOUR = 3600.0
U64_MAX = 2**64 - 1


class ScenarioError(ValueError):
    """A scenario file failed to parse or violates a type invariant."""


class HorizonError(ValueError):
    """A time lies outside the horizon covered by a demand profile."""


def check_seed(seed: int) -> int:
    if isinstance(seed, bool) or not isinstance(seed, (int, np.integer)):
        raise TypeError(f"seed must be an integer, got {type(seed).__name__}")
    seed = int(seed)
    if not 0 <= seed <= U64_MAX:
        raise ValueError(f"seed {seed} is not a 64-bit unsigned integer")
    return seed


def random_stream(seed: int, tag: int, index: int = 0) -> np.random.Generator:
    """Counter-based generator keyed by (seed, tag), positioned by ``index``.

    Streams for different indices never overlap and do not depend on the order
    in which they are created.
    """
    key = np.array([check_seed(seed), tag], dtype=np.uint64)
    counter = np.array([0, 0, index, 0], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key, counter=counter))


@dataclass(frozen=True)
class Approach:
    id: int
    saturation_flow: float = 1800.0
    free_flow_crossing: float = 10.0

    def __post_init__(self) -> None:
        if self.free_flow_crossing <= 0:
            raise ScenarioError(f"approach {self.id}: free_flow_crossing must be > 0")
        if self.saturation_flow <= 0:
            raise ScenarioError(f"approach {self.id}: saturation_flow must be > 0")

    @property
    def standard_saturation(self) -> bool:
        """True when the saturation flow lies in the usual 1500-1800 veh/h band."""
        lo, hi = SATURATION_RANGE
        return lo <= self.saturation_flow <= hi


@dataclass(frozen=True)
class Phase:
    id: int
    approaches_served: tuple[int, ...]
    min_green: float = MIN_GREEN_FLOOR

    def __post_init__(self) -> None:
        object.__setattr__(self, "approaches_served", tuple(self.approaches_served))
        if not self.approaches_served:
            raise ScenarioError(f"phase {self.id}: approaches_served is empty")
        if self.min_green < MIN_GREEN_FLOOR:
            raise ScenarioError(f"phase {self.id}: min_green must be >= {MIN_GREEN_FLOOR}")


@dataclass(frozen=True)
class DemandProfile:
    """Piecewise-constant arrival rates, veh/h, on right-open intervals.

    ``rates[k][a]`` is the rate of approach ``a`` on ``[starts[k], ends[k])``.
    """

    starts: tuple[float, ...]
    ends: tuple[float, ...]
    rates: tuple[tuple[float, ...], ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "starts", tuple(self.starts))
        object.__setattr__(self, "ends", tuple(self.ends))
        object.__setattr__(self, "rates", tuple(tuple(r) for r in self.rates))
        if not self.starts:
            raise ScenarioError("demand profile has no intervals")
        if not (len(self.starts) == len(self.ends) == len(self.rates)):
            raise ScenarioError("demand profile: starts, ends and rates differ in length")
        if self.starts[0] != 0:
            raise ScenarioError("horizon not covered: demand must start at t=0")
        width = len(self.rates[0])
        for k, (s, e, r) in enumerate(zip(self.starts, self.ends, self.rates)):
            if not e > s:
                raise ScenarioError(f"demand interval {k}: boundaries not strictly increasing")
            if k and s != self.ends[k - 1]:
                raise ScenarioError(f"horizon not covered: gap or overlap before interval {k}")
            if len(r) != width:
                raise ScenarioError(f"demand interval {k}: expected {width} rates")
            for rate in r:
                if not math.isfinite(rate):
                    raise ScenarioError(f"demand interval {k}: non-finite arrival rate")
                if rate < 0:
                    raise ScenarioError(f"demand interval {k}: negative arrival rate")

    @property
    def end(self) -> float:
        return self.ends[-1]

    @property
    def n_approaches(self) -> int:
        return len(self.rates[0])

    def tick_rates(self, approach: int, horizon: int) -> np.ndarray:
        """Rate (veh/h) at each integer second ``0 .. horizon-1``."""
        ticks = np.arange(horizon, dtype=float)
        idx = np.searchsorted(np.asarray(self.starts), ticks, side="right") - 1
        column = np.array([r[approach] for r in self.rates], dtype=float)
        return column[idx]


def demand_rate_at(profile: DemandProfile, approach: int, t: float) -> float:
    if not 0 <= t < profile.end:
        raise HorizonError(f"t={t} outside demand horizon [0, {profile.end})")
    if not 0 <= approach < profile.n_approaches:
        raise IndexError(f"no approach {approach} in demand profile")
    k = bisect.bisect_right(profile.starts, t) - 1
    return profile.rates[k][approach]


def _default_detector() -> DetectorModel:
    from .detector import DetectorModel

    return DetectorModel()


def _default_control() -> ControlConfig:
    from .control import ControlConfig

    return ControlConfig()


@dataclass(frozen=True)
class Scenario:
    approaches: tuple[Approach, ...]
    phases: tuple[Phase, ...]
    demand: DemandProfile
    lost_time_per_phase: float
    horizon: int
    seed: int = 0
    detector: DetectorModel = field(default_factory=_default_detector)
    control: ControlConfig = field(default_factory=_default_control)

    def __post_init__(self) -> None:
        object.__setattr__(self, "approaches", tuple(self.approaches))
        object.__setattr__(self, "phases", tuple(self.phases))
        if not self.approaches:
            raise ScenarioError("scenario has no approaches")
        ids = [a.id for a in self.approaches]
        if ids != list(range(len(ids))):
            raise ScenarioError("approach ids must be 0..n-1 in order")
        if not self.phases:
            raise ScenarioError("scenario has no phases")
        owner: dict[int, int] = {}
        for ph in self.phases:
            for a in ph.approaches_served:
                if a not in ids:
                    raise ScenarioError(f"phase {ph.id} serves unknown approach {a}")
                if a in owner:
                    raise ScenarioError(f"approach {a} belongs to phases {owner[a]} and {ph.id}")
                owner[a] = ph.id
        missing = set(ids) - set(owner)
        if missing:
            raise ScenarioError(f"approaches {sorted(missing)} are served by no phase")
        if self.lost_time_per_phase < 0:
            raise ScenarioError("lost_time_per_phase must be >= 0")
        if self.horizon <= 0 or int(self.horizon) != self.horizon:
            raise ScenarioError("horizon must be a positive whole number of seconds")
        object.__setattr__(self, "horizon", int(self.horizon))
        if self.demand.n_approaches != len(self.approaches):
            raise ScenarioError("demand rates do not match the number of approaches")
        if self.demand.end != self.horizon:
            raise ScenarioError(
                f"horizon not covered: demand ends at {self.demand.end}, horizon is {self.horizon}"
            )
        try:
            object.__setattr__(self, "seed", check_seed(self.seed))
        except (TypeError, ValueError) as exc:
            raise ScenarioError(str(exc)) from None
        for a in self.approaches:
            if not a.standard_saturation:
                log.warning("approach %d: saturation flow %.0f veh/h outside %s",
                            a.id, a.saturation_flow, SATURATION_RANGE)

    @property
    def lost_time(self) -> float:
        """Total lost time per cycle."""
        return self.lost_time_per_phase * len(self.phases)

    def phase_of(self, approach: int) -> int:
        for k, ph in enumerate(self.phases):
            if approach in ph.approaches_served:
                return k
        raise KeyError(approach)


@dataclass(frozen=True)
class SignalPlan:
    """One signal cycle: per-phase greens plus lost time."""

    cycle_length: float
    greens: tuple[float, ...]
    lost_time: float
    oversaturated: bool = False

    def __post_init__(self) -> None:
        object.__setattr__(self, "greens", tuple(float(g) for g in self.greens))

    def validate(self, phases: Sequence[Phase], c_min: float, c_max: float) -> None:
        """Raise ``ValueError`` naming the first violated invariant."""
        if len(self.greens) != len(phases):
            raise ValueError(f"plan has {len(self.greens)} greens for {len(phases)} phases")
        if not math.isclose(self.cycle_length, sum(self.greens) + self.lost_time, abs_tol=1e-6):
            raise ValueError(
                f"cycle_length {self.cycle_length} != sum(greens) + lost_time "
                f"{sum(self.greens) + self.lost_time}"
            )
        for g, ph in zip(self.greens, phases):
            if g < ph.min_green - 1e-9:
                raise ValueError(f"phase {ph.id}: green {g} below min_green {ph.min_green}")
        if not c_min - 1e-9 <= self.cycle_length <= c_max + 1e-9:
            raise ValueError(f"cycle_length {self.cycle_length} outside [{c_min}, {c_max}]")


# ---------------------------------------------------------------------------
# scenario file format


def _require(doc: Mapping[str, Any], key: str, where: str) -> Any:
    if key not in doc:
        raise ScenarioError(f"{where}: missing field '{key}'")
    return doc[key]


def _number(value: Any, where: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ScenarioError(f"{where}: expected a number, got {value!r}")
    return value


def scenario_from_dict(doc: Mapping[str, Any], source: str = "<scenario>") -> Scenario:
    from .control import ControlConfig
    from .detector import DetectorModel

    if not isinstance(doc, Mapping):
        raise ScenarioError(f"{source}: top level must be an object")
    try:
        approaches = [
            Approach(
                id=int(_number(_require(a, "id", f"{source}: approaches[{i}]"), f"approaches[{i}].id")),
                saturation_flow=_number(a.get("saturation_flow", 1800.0),
                                        f"{source}: approaches[{i}].saturation_flow"),
                free_flow_crossing=_number(a.get("free_flow_crossing", 10.0),
                                           f"{source}: approaches[{i}].free_flow_crossing"),
            )
            for i, a in enumerate(_require(doc, "approaches", source))
        ]
        phases = [
            Phase(
                id=int(_number(_require(p, "id", f"{source}: phases[{i}]"), f"phases[{i}].id")),
                approaches_served=tuple(int(x) for x in _require(p, "approaches_served",
                                                                  f"{source}: phases[{i}]")),
                min_green=_number(p.get("min_green", MIN_GREEN_FLOOR), f"{source}: phases[{i}].min_green"),
            )
            for i, p in enumerate(_require(doc, "phases", source))
        ]
        intervals = _require(_require(doc, "demand", source), "intervals", f"{source}: demand")
        starts, ends, rates = [], [], []
        for i, iv in enumerate(intervals):
            where = f"{source}: demand.intervals[{i}]"
            starts.append(_number(_require(iv, "start", where), where + ".start"))
            ends.append(_number(_require(iv, "end", where), where + ".end"))
            rates.append([_number(r, where + ".rates") for r in _require(iv, "rates", where)])
        demand = DemandProfile(starts, ends, rates)
        detector = DetectorModel.from_dict(doc.get("detector", {}))
        control = ControlConfig.from_dict(doc.get("control", {}))
        return Scenario(
            approaches=approaches,
            phases=phases,
            demand=demand,
            lost_time_per_phase=_number(_require(doc, "lost_time_per_phase", source),
                                        f"{source}: lost_time_per_phase"),
            horizon=_number(_require(doc, "horizon", source), f"{source}: horizon"),
            seed=int(_number(doc.get("seed", 0), f"{source}: seed")),
            detector=detector,
            control=control,
        )
    except ScenarioError as exc:
        if str(exc).startswith(source):
            raise
        raise ScenarioError(f"{source}: {exc}") from None
    except (TypeError, AttributeError) as exc:
        raise ScenarioError(f"{source}: malformed document ({exc})") from None
    except ValueError as exc:
        raise ScenarioError(f"{source}: {exc}") from None


def load_scenario(path: str | Path) -> Scenario:
    path = Path(path)
    text = path.read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
    return scenario_from_dict(doc, str(path))


def scenario_to_dict(sc: Scenario) -> dict[str, Any]:
    return {
        "approaches": [
            {"id": a.id, "saturation_flow": a.saturation_flow, "free_flow_crossing": a.free_flow_crossing}
            for a in sc.approaches
        ],
        "phases": [
            {"id": p.id, "approaches_served": list(p.approaches_served), "min_green": p.min_green}
            for p in sc.phases
        ],
        "demand": {
            "intervals": [
                {"start": s, "end": e, "rates": list(r)}
                for s, e, r in zip(sc.demand.starts, sc.demand.ends, sc.demand.rates)
            ]
        },
        "lost_time_per_phase": sc.lost_time_per_phase,
        "horizon": sc.horizon,
        "seed": sc.seed,
        "detector": sc.detector.to_dict(),
        "control": sc.control.to_dict(),
    }


def dump_scenario(sc: Scenario, path: str | Path) -> None:
    Path(path).write_text(json.dumps(scenario_to_dict(sc), indent=2) + "\n")


def default_scenario(
    rates: Sequence[float] = (540.0, 540.0, 540.0, 540.0),
    horizon: int = 3600,
    lost_time_per_phase: float = 4.0,
    seed: int = 0,
) -> Scenario:
    """Four approaches (N, S, E, W) in two phases (NS, EW) with constant demand."""
    approaches = [Approach(i) for i in range(4)]
    phases = [Phase(0, (0, 1)), Phase(1, (2, 3))]
    demand = DemandProfile([0.0], [float(horizon)], [list(rates)])
    return Scenario(approaches, phases, demand, lost_time_per_phase, horizon, seed)
