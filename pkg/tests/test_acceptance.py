"""Acceptance criteria, each checked at its stated tolerance and time limit.

A pass/fail line per criterion is printed in the terminal summary.
"""

import math
import time

import numpy as np
import pytest

from conftest import random_small_scenario, record_criterion
from trafficlab import forecast as fc
from trafficlab.control import FuzzyConfig, fuzzy_adjust, green_splits, webster_cycle
from trafficlab.controllers import fixed_time
from trafficlab.detector import DetectorModel, observe_series
from trafficlab.harness import bundled_model, default_experiment, run_comparison, summary_text
from trafficlab.metrics import flow_rate, los_grade, report
from trafficlab.sim import SimLog, run_simulation

pytestmark = pytest.mark.acceptance


def finish(number, title, ok, elapsed, limit, detail=""):
    in_time = elapsed < limit
    info = f"{elapsed:.3g} s of {limit:g} s" + (f"; {detail}" if detail else "")
    record_criterion(number, title, ok and in_time, info)
    assert ok, detail or title
    assert in_time, f"took {elapsed:.3f} s, limit {limit} s"


def test_criterion_1_webster_exact():
    t0 = time.perf_counter()
    got = [webster_cycle(12, 0.6), webster_cycle(10, 0.5), webster_cycle(0, 0.0),
           webster_cycle(12, 0.95)]
    elapsed = time.perf_counter() - t0
    ok = ([w.cycle for w in got] == [60, 40, 40, 120]
          and [w.oversaturated for w in got] == [False, False, False, True])
    finish(1, "Webster cycle exact values", ok, elapsed, 1e-3,
           "cycles " + ", ".join(f"{w.cycle:g}" for w in got))


def test_criterion_2_split_conservation():
    rng = np.random.default_rng(2)
    cases = []
    for _ in range(1000):
        cycle = 5.0 * rng.integers(8, 25)
        lost = round(float(rng.uniform(0, 20)), 1)
        ratios = rng.uniform(0, 0.45, int(rng.integers(1, 5)))
        if rng.random() < 0.05:
            ratios[:] = 0.0
        cases.append((cycle, lost, ratios.tolist()))
    t0 = time.perf_counter()
    results = [green_splits(c, lost, y) for c, lost, y in cases]
    elapsed = time.perf_counter() - t0
    worst_sum = worst_prop = 0.0
    for (cycle, lost, y), g in zip(cases, results):
        usable = cycle - lost
        assert all(v >= 0 for v in g)
        # greens sit on the 0.1 s grid and add up to the usable time to the unit
        assert sum(round(v * 10) for v in g) == round(usable * 10)
        worst_sum = max(worst_sum, abs(math.fsum(g) - usable))
        total = sum(y)
        ideal = [usable * v / total for v in y] if total else [usable / len(y)] * len(y)
        worst_prop = max(worst_prop, max(abs(a - b) for a, b in zip(g, ideal)))
    ok = worst_sum < 1e-9 and worst_prop <= 0.1 + 1e-9
    finish(2, "green split conservation and proportionality", ok, elapsed, 1.0,
           f"max |sum - (C-L)| {worst_sum:.1e}, max proportional gap {worst_prop:.3f} s")


def test_criterion_3_gradient_check():
    t0 = time.perf_counter()
    errors = []
    for k in range(20):
        rng = np.random.default_rng(1000 + k)
        model = fc.init_model(4, seed=k, normalizer=fc.IDENTITY)
        model.b[:] = rng.uniform(-0.5, 0.5, model.b.shape)
        seq = rng.uniform(0, 1, (int(rng.integers(2, 8)), fc.INPUT_DIM))
        errors.append(fc.gradient_check(model, (seq, float(rng.uniform(0, 1)))))
    elapsed = time.perf_counter() - t0
    finish(3, "LSTM gradient check", max(errors) < 1e-4, elapsed, 30.0,
           f"max relative error {max(errors):.2e}")


def test_criterion_4_forecaster():
    t0 = time.perf_counter()
    # (a) overfit ten samples
    stamps, counts = fc.seasonal_counts(1, seed=0)
    toy = fc.make_dataset(counts[:14], stamps[:14], 4)
    _, hist = fc.train(fc.init_model(8, seed=0, context=4), toy, 500, 0.1)
    overfit = hist[-1]
    # (b) 30-day seasonal series: train on 25 days, roll out the next 12 hours
    stamps, counts = fc.seasonal_counts(30, peak=60.0, seed=0)
    split = 25 * 24
    model, _ = fc.train(fc.init_model(32, seed=0), fc.make_dataset(counts[:split], stamps[:split]),
                        1000, 0.5)
    history = fc.query_history(counts[:split], stamps[:split])
    pred = fc.predict_horizon(model, history, stamps[split], 12).predictions
    elapsed = time.perf_counter() - t0
    truth = np.asarray(counts[split:split + 12])
    rmse = float(np.sqrt(np.mean((np.asarray(pred) - truth) ** 2)))
    naive = float(np.sqrt(np.mean((counts[split - 1] - truth) ** 2)))
    ok = overfit < 0.01 and rmse < naive and rmse <= 6.0
    finish(4, "forecaster trainability and seasonal rollout", ok, elapsed, 300.0,
           f"overfit MSE {overfit:.4f}, rollout RMSE {rmse:.2f} vs persistence {naive:.2f}")


def test_criterion_5_simulator_conservation_determinism():
    rng = np.random.default_rng(5)
    t0 = time.perf_counter()
    bad = 0
    for _ in range(1000):
        sc = random_small_scenario(rng)
        cycle = float(rng.choice([40, 60, 90, 120]))
        log = run_simulation(sc, fixed_time(sc, cycle))
        conserved = np.array_equal(log.arrivals_by_approach(),
                                   log.departures_by_approach() + np.array(log.final_queue_lengths))
        same = log == run_simulation(sc, fixed_time(sc, cycle))
        bad += not (conserved and same)
    elapsed = time.perf_counter() - t0
    finish(5, "simulator conservation and determinism", bad == 0, elapsed, 120.0,
           f"{bad} of 1000 scenarios failed")


def test_criterion_6_detector_calibration():
    t0 = time.perf_counter()
    seen = observe_series(DetectorModel(0.95), [1000] * 1000, seed=6)
    elapsed = time.perf_counter() - t0
    frac = sum(seen) / 1_000_000
    finish(6, "detector recall calibration", 0.9485 <= frac <= 0.9515, elapsed, 10.0,
           f"detected fraction {frac:.5f}")


def test_criterion_7_end_to_end(capsys):
    t0 = time.perf_counter()
    rep = run_comparison(default_experiment(), bundled_model())
    elapsed = time.perf_counter() - t0
    base_d, astm_d = rep.mean(0, "mean_delay"), rep.mean(1, "mean_delay")
    base_f, astm_f = rep.mean(0, "flow_rate"), rep.mean(1, "flow_rate")
    ok = len(rep.runs) == 100 and astm_d <= 0.8 * base_d and astm_f >= base_f
    with capsys.disabled():
        print("\n" + summary_text(rep))
    finish(7, "paired suite: adaptive cuts delay >= 20% without losing flow", ok, elapsed, 300.0,
           f"delay {base_d:.2f} -> {astm_d:.2f} s/veh ({100 * (1 - astm_d / base_d):.1f}% less), "
           f"flow {base_f:.3f} -> {astm_f:.3f} veh/min")


def _fuzzed_log(rng):
    n = int(rng.integers(1, 400))
    horizon = int(rng.integers(60, 7200))
    arr = np.sort(rng.integers(0, horizon, n)).astype(float)
    delay = rng.exponential(rng.uniform(0.1, 60), n)
    ffc = float(rng.uniform(2, 20))
    dep = arr + delay + ffc
    pending = rng.random(n) < 0.1
    pending[0] = False
    dep[pending] = np.nan
    delay[pending] = np.nan
    return SimLog(np.zeros(n, dtype=np.int64), arr, dep, delay,
                  np.zeros(-(-horizon // 60), dtype=np.int64), (int(pending.sum()),), horizon, (ffc,))


def test_criterion_8_metrics():
    t0 = time.perf_counter()
    table = {0: "A", 10: "A", 10.01: "B", 20: "B", 20.01: "C", 35: "C", 35.01: "D", 55: "D",
             55.01: "E", 80: "E", 80.01: "F", 200: "F"}
    table_ok = all(los_grade(d) == g for d, g in table.items())
    rng = np.random.default_rng(8)
    tti_ok = flow_ok = True
    for _ in range(500):
        log = _fuzzed_log(rng)
        rep = report(log, peak_window=min(3600, log.horizon))
        tti_ok &= rep.tti is None or rep.tti >= 1.0
        minutes = log.horizon / 60
        product = flow_rate(log) * minutes
        flow_ok &= round(product) == rep.departures and math.isclose(product, rep.departures,
                                                                     rel_tol=1e-12)
    elapsed = time.perf_counter() - t0
    finish(8, "metrics unit checks", table_ok and tti_ok and flow_ok, elapsed, 10.0,
           f"LOS table {'ok' if table_ok else 'WRONG'}, TTI>=1 {tti_ok}, flow x minutes {flow_ok}")


def test_criterion_9_fuzzy():
    cfg = FuzzyConfig()
    t0 = time.perf_counter()
    peaks = [fuzzy_adjust(cfg, cfg.peak("ratio", r), cfg.peak("trend", t))
             for r, t in (("MED", "STEADY"), ("HIGH", "RISING"), ("LOW", "FALLING"))]
    grid = [fuzzy_adjust(cfg, r, t) for r in np.linspace(0.0, 1.3, 100)
            for t in np.linspace(-400.0, 400.0, 100)]
    elapsed = time.perf_counter() - t0
    lo, hi = min(grid), max(grid)
    ok = peaks == [1.0, 1.15, 0.85] and 0.85 <= lo and hi <= 1.15
    finish(9, "fuzzy singletons and bounds", ok, elapsed, 5.0,
           f"peaks {peaks}, grid range [{lo:.4f}, {hi:.4f}]")
