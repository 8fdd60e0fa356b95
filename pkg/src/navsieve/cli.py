"""navsieve command-line entry point: gen-data, train, eval, bench, plot."""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path

from .bench import (ScenarioConfig, ScenarioKind, aggregate, format_results, format_summary, load_models,
                    read_results, rerun_failures, run_scenario)
from .config import ConfigError, apply_overrides, load_config
from .dataset import build_dataset, load_dataset, save_dataset, split_dataset
from .geometry import SensorConfig, WorldSpec
from .learner import HeadKind, TrainConfig, evaluate, load_model, save_model, train
from .planner import Outcome, Recovery
from .plotting import emit_plot
from .trajectory import TrajectoryConfig

log = logging.getLogger("navsieve")


class CliError(Exception):
    """A command was given inconsistent arguments."""


@dataclass(frozen=True)
class GenDataConfig:
    world: WorldSpec = field(default_factory=WorldSpec)
    sensor: SensorConfig = field(default_factory=SensorConfig)
    trajectory: TrajectoryConfig = field(default_factory=TrajectoryConfig)
    with_goal: bool = True


def _overrides(args, obj):
    return apply_overrides(obj, load_config(args.config)) if args.config else obj


def _csv_list(text: str | None, cast=str) -> tuple:
    if not text:
        return ()
    return tuple(cast(v.strip()) for v in text.split(",") if v.strip())


# commands --------------------------------------------------------------------


def cmd_gen_data(args) -> int:
    cfg = _overrides(args, GenDataConfig())
    ds = build_dataset(cfg.world, args.scenes, args.seed, cfg.sensor, cfg.trajectory, cfg.with_goal)
    save_dataset(ds, args.out)
    positive = float(ds.binary_labels.mean())
    print(f"wrote {len(ds)} samples to {args.out} (collision-free fraction {positive:.3f})")
    return 0


def cmd_train(args) -> int:
    cfg = _overrides(args, TrainConfig())
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    data = load_dataset(args.data)
    if args.test:
        test = load_dataset(args.test)
    else:
        data, test = split_dataset(data, 0.1, cfg.seed)
    result = train(data, args.head, cfg, test=test)
    save_model(result.model, args.out)
    metrics = evaluate(result.model, test)
    shown = " ".join(f"{k}={v:.4f}" for k, v in metrics.items() if k != "samples")
    print(f"trained {args.head} for {result.epochs} epochs -> {args.out}; held-out {shown}")
    return 0


def cmd_eval(args) -> int:
    if args.model:
        path = Path(args.model)
    elif args.head:
        path = Path(args.models) / f"{HeadKind(args.head).value}.model"
    else:
        raise CliError("eval needs --model or --head")
    model = load_model(path)
    if args.head and model.head is not HeadKind(args.head):
        raise CliError(f"{path} holds a {model.head.value} model, not {args.head}")
    metrics = evaluate(model, load_dataset(args.data))
    for k, v in metrics.items():
        print(f"{k}: {v:.6g}")
    return 0


def scenario_from_args(args) -> ScenarioConfig:
    cfg = _overrides(args, ScenarioConfig(kind=args.scenario))
    changes = {}
    if args.trials is not None:
        changes["trials"] = args.trials
    if args.seed is not None:
        changes["base_seed"] = args.seed
    if args.planner:
        changes["planners"] = _csv_list(args.planner)
    if args.recovery:
        changes["recovery"] = Recovery(args.recovery)
    if args.world_file:
        changes["world_files"] = tuple(args.world_file)
    if args.k:
        ks = _csv_list(args.k, int)
        if cfg.kind is ScenarioKind.CANDIDATE_SWEEP:
            changes["k_values"] = ks
        elif len(ks) == 1:
            changes["k"] = ks[0]
        else:
            raise CliError("--k takes a list only for the candidate-sweep scenario")
    return replace(cfg, **changes) if changes else cfg


def cmd_bench(args) -> int:
    cfg = scenario_from_args(args)
    models = load_models(args.models, cfg.planners)

    if args.rerun_failed:
        if not args.recovery:
            raise CliError("--rerun-failed needs --recovery")
        before = read_results(args.rerun_failed)
        pairs = rerun_failures(cfg, before, cfg.recovery, models, workers=args.workers)
        rows = [after for _, after in pairs]
        text = format_results(rows)
        if args.out:
            Path(args.out).write_text(text)
        converted = sum(a.outcome is Outcome.SUCCESS for _, a in pairs)
        print(f"reran {len(pairs)} stuck trials with {cfg.recovery.value}: {converted} now succeed")
        return 0

    def progress(row, done, total):
        log.info("[%d/%d] %s %s trial %d: %s", done, total, row.setting, row.planner, row.trial, row.outcome.value)

    rows = run_scenario(cfg, models, out=args.out, workers=args.workers, progress=progress)
    if not args.out:
        sys.stdout.write(format_results(rows))
    print(format_summary(aggregate(rows)), file=sys.stderr if not args.out else sys.stdout)
    return 0


def cmd_plot(args) -> int:
    rows = [r for path in args.results for r in read_results(path)]
    if not rows:
        raise CliError("no result rows to plot")
    summaries = aggregate(rows)
    path = emit_plot(summaries, args.out, args.chart)
    print(f"wrote {path}")
    return 0


# parser ----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="navsieve", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate a labelled scan dataset")
    g.add_argument("--scenes", type=int, default=10_000)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.add_argument("--config", help="key=value overrides (world.*, sensor.*, trajectory.*, with_goal)")
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train one network head")
    t.add_argument("--head", required=True, choices=[h.value for h in HeadKind])
    t.add_argument("--data", required=True)
    t.add_argument("--test", help="held-out dataset (default: 10%% split of --data)")
    t.add_argument("--out", required=True)
    t.add_argument("--seed", type=int)
    t.add_argument("--config", help="key=value overrides of training settings")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="score a trained model on a dataset")
    e.add_argument("--model")
    e.add_argument("--head", choices=[h.value for h in HeadKind])
    e.add_argument("--models", default="models", help="directory holding <head>.model files")
    e.add_argument("--data", required=True)
    e.set_defaults(func=cmd_eval)

    b = sub.add_parser("bench", help="run a navigation benchmark scenario")
    b.add_argument("--scenario", default=ScenarioKind.BARREL_FOREST.value, choices=[k.value for k in ScenarioKind])
    b.add_argument("--planner", help="comma-separated planner names")
    b.add_argument("--trials", type=int)
    b.add_argument("--k", help="candidate count; comma list of values for candidate-sweep")
    b.add_argument("--recovery", choices=[r.value for r in Recovery])
    b.add_argument("--world-file", action="append", help="sector world file (repeatable)")
    b.add_argument("--seed", type=int, help="base seed; trial i uses seed + i")
    b.add_argument("--out", help="results CSV; an existing partial file is resumed")
    b.add_argument("--models", default="models", help="directory holding <head>.model files")
    b.add_argument("--config", help="key=value overrides of scenario settings")
    b.add_argument("--workers", type=int, default=1)
    b.add_argument("--rerun-failed", metavar="CSV", help="rerun the stuck trials of CSV with --recovery")
    b.set_defaults(func=cmd_bench)

    pl = sub.add_parser("plot", help="draw SVG charts from result CSVs")
    pl.add_argument("--results", nargs="+", required=True)
    pl.add_argument("--out", required=True)
    pl.add_argument("--chart", default="auto", choices=["auto", "bars", "k"])
    pl.set_defaults(func=cmd_plot)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (CliError, ConfigError, FileNotFoundError, ValueError) as exc:
        print(f"navsieve: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
