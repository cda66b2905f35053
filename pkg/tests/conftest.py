from __future__ import annotations

import numpy as np
import pytest

from trafficlab.control import ControlConfig
from trafficlab.core import Approach, DemandProfile, Phase, Scenario, SignalPlan

ACCEPTANCE_LINES: list[str] = []


def record_criterion(number: int, title: str, passed: bool, detail: str = "") -> None:
    status = "PASS" if passed else "FAIL"
    ACCEPTANCE_LINES.append(f"[{status}] criterion {number}: {title}" + (f" ({detail})" if detail else ""))


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def single_approach(rate: float, s: float = 1800.0, horizon: int = 3600, ffc: float = 10.0,
                    control: ControlConfig | None = None) -> Scenario:
    """One approach served by one phase, no lost time."""
    demand = DemandProfile([0.0], [float(horizon)], [[rate]])
    return Scenario([Approach(0, s, ffc)], [Phase(0, (0,))], demand, 0.0, horizon,
                    control=control or ControlConfig())


class Always:
    """Controller returning one fixed plan."""

    def __init__(self, plan: SignalPlan):
        self.p = plan
        self.calls: list[int] = []

    def plan(self, t, arrivals):
        self.calls.append(t)
        return self.p


ALWAYS_GREEN = SignalPlan(60.0, (60.0,), 0.0)


@pytest.fixture
def always_green():
    return Always(ALWAYS_GREEN)


def random_small_scenario(rng: np.random.Generator) -> Scenario:
    """1-4 approaches, up to 4 phases, 2-10 minutes of piecewise demand."""
    n_app = int(rng.integers(1, 5))
    n_ph = int(rng.integers(1, n_app + 1))
    owner = np.concatenate([np.arange(n_ph), rng.integers(0, n_ph, n_app - n_ph)])
    rng.shuffle(owner)
    phases = [Phase(k, tuple(int(a) for a in np.flatnonzero(owner == k)), 5.0) for k in range(n_ph)]
    horizon = int(rng.integers(1, 6)) * 120
    cuts = sorted(set(rng.integers(1, horizon, int(rng.integers(0, 3))).tolist()))
    bounds = [0, *cuts, horizon]
    rates = [rng.uniform(0, 2500, n_app).round(1).tolist() for _ in bounds[:-1]]
    approaches = [Approach(a, float(rng.choice([1500, 1650, 1800])), 10.0) for a in range(n_app)]
    return Scenario(approaches, phases, DemandProfile(bounds[:-1], bounds[1:], rates),
                    float(rng.integers(0, 4)), horizon, int(rng.integers(0, 2**63)))
