"""Command-line entry point: ``trafficlab <command> ...``."""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import forecast as fc
from . import harness
from .core import check_seed, dump_scenario, load_scenario
from .metrics import report as metrics_report
from .sim import run_simulation

log = logging.getLogger("trafficlab")


def _seed(text: str) -> int:
    try:
        return check_seed(int(text))
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _load_model(path: str | None) -> fc.LstmModel:
    return fc.load_model(path) if path else harness.bundled_model()


def cmd_simulate(args: argparse.Namespace) -> int:
    scenario = load_scenario(args.config)
    seed = scenario.seed if args.seed is None else args.seed
    model = _load_model(args.model) if args.controller == "astm" else None
    ctl = harness.make_controller(args.controller, scenario, seed, model, args.fixed_cycle)
    sim_log = run_simulation(scenario, ctl, seed)
    rep = metrics_report(sim_log)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    sim_log.to_csv(out / "vehicles.csv", out / "throughput.csv")
    (out / "metrics.csv").write_text(rep.to_csv())
    (out / "summary.txt").write_text(rep.summary())
    sys.stdout.write(rep.summary())
    return 0


def cmd_synth_counts(args: argparse.Namespace) -> int:
    series = harness.synthetic_counts(args.scenarios, args.days, args.seed)
    fc.write_counts_csv(args.out, series)
    print(f"wrote {len(series)} series to {args.out}")
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    series = fc.read_counts_csv(args.data)
    model, history = harness.train_forecaster(series, args.hidden, args.epochs, args.lr,
                                              args.seed, args.context)
    fc.save_model(model, args.out)
    if history:
        print(f"trained {args.epochs} epochs: loss {history[0]:.5f} -> {history[-1]:.5f}")
    print(f"model written to {args.out}")
    return 0


def cmd_compare(args: argparse.Namespace) -> int:
    config = harness.load_experiment(args.config)
    if args.seed is not None:
        config = replace(config, seeds=(args.seed,))
    if args.model:
        config = replace(config, model_path=args.model)
    out = args.out or config.out_dir
    if not out:
        raise ValueError("no output directory: pass --out or set 'out' in the config")
    report = harness.run_comparison(config)
    harness.emit_report(report, out)
    sys.stdout.write(harness.summary_text(report))
    return 0


def cmd_generate_suite(args: argparse.Namespace) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for i, sc in enumerate(harness.generate_suite(args.n, args.seed)):
        dump_scenario(sc, out / f"scenario_{i:03d}.json")
    print(f"wrote {args.n} scenarios to {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="trafficlab", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="run one scenario under one controller")
    s.add_argument("--config", required=True, help="scenario JSON file")
    s.add_argument("--controller", choices=harness.CONTROLLERS, default="fixed")
    s.add_argument("--seed", type=_seed, help="arrival seed (default: the scenario's)")
    s.add_argument("--out", required=True)
    s.add_argument("--model", help="forecaster JSON (default: bundled model)")
    s.add_argument("--fixed-cycle", type=float, default=90.0)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("synth-counts", help="write synthetic hourly training counts as CSV")
    s.add_argument("--out", required=True)
    s.add_argument("--scenarios", type=int, default=12)
    s.add_argument("--days", type=int, default=4)
    s.add_argument("--seed", type=_seed, default=99)
    s.set_defaults(func=cmd_synth_counts)

    s = sub.add_parser("train-forecaster", help="train the LSTM on an hourly count CSV")
    s.add_argument("--data", "--config", dest="data", required=True,
                   help="CSV with timestamp,count[,series]")
    s.add_argument("--out", required=True, help="model JSON to write")
    s.add_argument("--epochs", type=int, default=1500)
    s.add_argument("--lr", type=float, default=0.5)
    s.add_argument("--hidden", type=int, default=32)
    s.add_argument("--context", type=int, default=24)
    s.add_argument("--seed", type=_seed, default=0)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("compare", help="paired fixed-time vs adaptive comparison")
    s.add_argument("--config", required=True, help="experiment JSON file")
    s.add_argument("--seed", type=_seed, help="run a single arrival seed instead of the config's")
    s.add_argument("--out")
    s.add_argument("--model")
    s.set_defaults(func=cmd_compare)

    s = sub.add_parser("generate-suite", help="write generated scenarios as JSON files")
    s.add_argument("--n", type=int, default=20)
    s.add_argument("--seed", type=_seed, default=2017)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_generate_suite)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except Exception as exc:  # noqa: BLE001 - any failure becomes a diagnostic + exit 1
        if args.verbose:
            log.exception("command failed")
        print(f"trafficlab {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
