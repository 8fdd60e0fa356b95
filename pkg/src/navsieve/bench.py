"""Scenario benchmarks: barrel forest, candidate-count sweep and sector worlds.

Every (setting, planner, trial) triple maps to one deterministic episode. Rows
are written to CSV in a fixed order as they finish, so an interrupted run can
be resumed from the partial file.
"""

from __future__ import annotations

import csv
import enum
import io
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

from .geometry import Pose2D, Scene, WorldSpec, generate_scene, load_world, parse_world
from .learner import HeadKind, Model, load_model
from .planner import (PLANNERS, EpisodeConfig, Outcome, PlannerKind, PlannerType, Recovery, TrialResult,
                      resolve_planner, run_episode)

CSV_HEADER = ("scenario", "setting", "planner", "trial", "seed", "outcome", "time_s", "path_m", "candidates", "replans")

FIG4_PLANNERS = ("exhaustive", "cartesian-to-goal", "cartesian-gaussian", "pips-to-goal", "pips-gaussian", "naive")
REGRESSION_PLANNERS = ("regress", "regress-goal")
BUILTIN_WORLDS = ("sparse", "dense")


class ScenarioKind(str, enum.Enum):
    BARREL_FOREST = "barrel-forest"
    CANDIDATE_SWEEP = "candidate-sweep"
    SECTOR_WORLD = "sector-world"


_DEFAULT_PLANNERS = {
    ScenarioKind.BARREL_FOREST: FIG4_PLANNERS + REGRESSION_PLANNERS,
    ScenarioKind.CANDIDATE_SWEEP: ("cartesian-gaussian", "pips-gaussian"),
    ScenarioKind.SECTOR_WORLD: ("exhaustive", "pips-to-goal", "cartesian-to-goal"),
}


@dataclass(frozen=True)
class ScenarioConfig:
    kind: ScenarioKind = ScenarioKind.BARREL_FOREST
    world_size: tuple[float, float] = (10.0, 6.0)
    start_offset: float = 1.0  # start sits this far in from the world's left edge
    goal_distance: float = 8.0
    barrel_counts: tuple[int, ...] = (3, 5, 7)
    trials: int | None = None  # 50 per setting, or 35 sector pairs
    k_values: tuple[int, ...] = (2, 3, 5, 7)
    sweep_barrels: int = 5
    dense_spawn: bool = True
    spawn_depth: tuple[float, float] = (1.0, 5.0)
    dense_spawn_depth: tuple[float, float] = (1.0, 4.0)
    world_files: tuple[str, ...] = BUILTIN_WORLDS
    planners: tuple[str, ...] = ()
    base_seed: int = 0
    k: int = 5
    bias_sigma: float = 0.2
    recovery: Recovery = Recovery.DISABLED
    episode: EpisodeConfig = field(default_factory=EpisodeConfig)

    def __post_init__(self):
        object.__setattr__(self, "kind", ScenarioKind(self.kind))
        object.__setattr__(self, "recovery", Recovery(self.recovery))
        if not self.planners:
            object.__setattr__(self, "planners", _DEFAULT_PLANNERS[self.kind])
        for name in self.planners:
            if name not in PLANNERS:
                raise ValueError(f"unknown planner {name!r}; choose from {', '.join(PLANNERS)}")
        if self.trial_count < 1:
            raise ValueError("trials must be >= 1")
        if any(k < 1 for k in self.k_values) or self.k < 1:
            raise ValueError("k values must be >= 1")

    @property
    def trial_count(self) -> int:
        if self.trials is not None:
            return self.trials
        return 35 if self.kind is ScenarioKind.SECTOR_WORLD else 50

    @property
    def settings(self) -> tuple[str, ...]:
        if self.kind is ScenarioKind.BARREL_FOREST:
            return tuple(f"barrels={n}" for n in self.barrel_counts)
        if self.kind is ScenarioKind.CANDIDATE_SWEEP:
            return tuple(f"k={k}" for k in self.k_values)
        return tuple(_world_label(w) for w in self.world_files)

    @property
    def bounds(self):
        w, h = self.world_size
        return (0.0, -h / 2.0, w, h / 2.0)


@dataclass(frozen=True)
class Trial:
    scenario: str
    setting: str
    planner: str
    trial: int
    seed: int
    scene: Scene
    start: Pose2D
    goal: tuple[float, float]
    kind: PlannerKind
    episode: EpisodeConfig

    @property
    def key(self) -> tuple[str, str, str, int]:
        return (self.scenario, self.setting, self.planner, self.trial)


@dataclass(frozen=True)
class ResultRow:
    scenario: str
    setting: str
    planner: str
    trial: int
    seed: int
    outcome: Outcome
    time_s: float
    path_m: float
    candidates: int
    replans: int

    @property
    def key(self) -> tuple[str, str, str, int]:
        return (self.scenario, self.setting, self.planner, self.trial)

    def fields(self) -> list[str]:
        return [self.scenario, self.setting, self.planner, str(self.trial), str(self.seed), self.outcome.value,
                f"{self.time_s:.2f}", f"{self.path_m:.3f}", str(self.candidates), str(self.replans)]

    @classmethod
    def from_fields(cls, values) -> ResultRow:
        if len(values) != len(CSV_HEADER):
            raise ValueError(f"expected {len(CSV_HEADER)} columns, got {len(values)}")
        s, st, p, t, seed, o, time_s, path_m, c, r = values
        return cls(s, st, p, int(t), int(seed), Outcome(o), float(time_s), float(path_m), int(c), int(r))


# scenes ----------------------------------------------------------------------


def _world_label(world: str) -> str:
    return Path(world).stem if world not in BUILTIN_WORLDS else world


def world_scene(world: str) -> Scene:
    """A builtin world by name ("sparse", "dense") or a world file path."""
    if world in BUILTIN_WORLDS:
        text = resources.files("navsieve.worlds").joinpath(f"{world}.world").read_text()
        return parse_world(text, f"{world}.world")
    return load_world(world)


def sector_pair(scene: Scene, seed: int) -> tuple[Pose2D, tuple[float, float]]:
    """Start pose and goal at the centers of two distinct random sectors; the
    robot starts facing the goal."""
    names = sorted(scene.sectors)
    if len(names) < 2:
        raise ValueError("a sector world needs at least two sectors")
    i, j = np.random.default_rng(seed).choice(len(names), size=2, replace=False)
    a, b = (np.array(_rect_center(scene.sectors[names[n]])) for n in (i, j))
    heading = math.atan2(b[1] - a[1], b[0] - a[0])
    return Pose2D(float(a[0]), float(a[1]), heading), (float(b[0]), float(b[1]))


def _rect_center(rect) -> tuple[float, float]:
    xmin, ymin, xmax, ymax = rect
    return ((xmin + xmax) / 2.0, (ymin + ymax) / 2.0)


def _barrel_scene(config: ScenarioConfig, count: int, depth: tuple[float, float], seed: int):
    xmin, ymin, _, ymax = config.bounds
    start = Pose2D(xmin + config.start_offset, 0.0, 0.0)
    spec = WorldSpec(bounds=config.bounds, spawn_region=(depth[0], ymin, depth[1], ymax), obstacle_count=count,
                     seed=seed, start=start)
    goal = (start.x + config.goal_distance, start.y)
    return generate_scene(spec), start, goal


def iter_trials(config: ScenarioConfig) -> Iterator[Trial]:
    """Every trial in canonical order: setting, then planner, then trial index.

    Scenes depend only on the setting and trial seed, so all planners within a
    setting face identical worlds.
    """
    episode = replace(config.episode, recovery=config.recovery)
    scenario = config.kind.value
    worlds = {}
    for s_index, setting in enumerate(config.settings):
        k = config.k
        if config.kind is ScenarioKind.CANDIDATE_SWEEP:
            k = config.k_values[s_index]
        scenes = []
        for trial in range(config.trial_count):
            seed = config.base_seed + trial
            if config.kind is ScenarioKind.BARREL_FOREST:
                scenes.append(_barrel_scene(config, config.barrel_counts[s_index], config.spawn_depth, seed))
            elif config.kind is ScenarioKind.CANDIDATE_SWEEP:
                depth = config.dense_spawn_depth if config.dense_spawn else config.spawn_depth
                scenes.append(_barrel_scene(config, config.sweep_barrels, depth, seed))
            else:
                world = config.world_files[s_index]
                if world not in worlds:
                    worlds[world] = world_scene(world)
                start, goal = sector_pair(worlds[world], seed)
                scenes.append((worlds[world], start, goal))
        for name in config.planners:
            kind = resolve_planner(name, k=k, bias_sigma=config.bias_sigma)
            for trial, (scene, start, goal) in enumerate(scenes):
                yield Trial(scenario, setting, name, trial, config.base_seed + trial, scene, start, goal, kind,
                            episode)


# models ----------------------------------------------------------------------


def required_heads(planners: Iterable[str]) -> list[HeadKind]:
    heads = []
    for name in planners:
        kind = PLANNERS[name]
        if kind.type is not PlannerType.EXHAUSTIVE and kind.head not in heads:
            heads.append(kind.head)
    return heads


def model_path(model_dir, head: HeadKind) -> Path:
    return Path(model_dir) / f"{HeadKind(head).value}.model"


def load_models(model_dir, planners: Iterable[str]) -> dict[HeadKind, Model]:
    """Load the model file each planner needs from ``model_dir``."""
    models = {}
    for head in required_heads(planners):
        path = model_path(model_dir, head)
        if not path.is_file():
            raise FileNotFoundError(f"missing model file {path} (train one with: navsieve train --head {head.value})")
        models[head] = load_model(path)
    return models


# running ---------------------------------------------------------------------


def run_trial(trial: Trial, models: dict) -> ResultRow:
    result = run_episode(trial.scene, trial.start, trial.goal, trial.kind, trial.episode, models)
    return row_for(trial, result)


def row_for(trial: Trial, result: TrialResult) -> ResultRow:
    return ResultRow(trial.scenario, trial.setting, trial.planner, trial.trial, trial.seed, result.outcome,
                     result.elapsed, result.path_length, result.candidates, result.replans)


_worker_models: dict = {}


def _init_worker(models):
    global _worker_models
    _worker_models = models


def _run_in_worker(trial: Trial) -> ResultRow:
    return run_trial(trial, _worker_models)


def run_trials(trials: list[Trial], models: dict, workers: int = 1) -> Iterator[ResultRow]:
    """Run trials, yielding rows in input order whatever the worker count."""
    if workers <= 1 or len(trials) < 2:
        for t in trials:
            yield run_trial(t, models)
        return
    with ProcessPoolExecutor(workers, initializer=_init_worker, initargs=(models,)) as pool:
        yield from pool.map(_run_in_worker, trials, chunksize=4)


def run_scenario(config: ScenarioConfig, models: dict, out=None, workers: int = 1, progress=None) -> list[ResultRow]:
    """Run every trial of ``config``; with ``out`` set, rows already in that CSV
    are kept and only the missing tail is run and appended."""
    trials = list(iter_trials(config))
    done: list[ResultRow] = []
    if out is not None and Path(out).exists() and Path(out).stat().st_size:
        done = read_results(out)
        expected = [t.key for t in trials[:len(done)]]
        if [r.key for r in done] != expected:
            raise ValueError(f"{out} does not hold a prefix of this scenario's trials; use a fresh output file")
    rows = list(done)
    remaining = trials[len(done):]
    writer = _CsvAppender(out) if out is not None else None
    try:
        for row in run_trials(remaining, models, workers):
            rows.append(row)
            if writer:
                writer.write(row)
            if progress:
                progress(row, len(rows), len(trials))
    finally:
        if writer:
            writer.close()
    return rows


def rerun_failures(config: ScenarioConfig, rows: Iterable[ResultRow], recovery: Recovery, models: dict,
                   outcomes=(Outcome.STUCK,), planners: Iterable[str] | None = None,
                   workers: int = 1) -> list[tuple[ResultRow, ResultRow]]:
    """Replay failed trials with a recovery mode; returns (before, after) pairs."""
    wanted = {(r.setting, r.planner, r.trial): r for r in rows
              if r.outcome in outcomes and (planners is None or r.planner in planners)}
    cfg = replace(config, recovery=Recovery(recovery))
    trials = [t for t in iter_trials(cfg) if (t.setting, t.planner, t.trial) in wanted]
    after = run_trials(trials, models, workers)
    return [(wanted[(t.setting, t.planner, t.trial)], new) for t, new in zip(trials, after)]


# CSV -------------------------------------------------------------------------


class _CsvAppender:
    def __init__(self, path):
        path = Path(path)
        fresh = not path.exists() or path.stat().st_size == 0
        path.parent.mkdir(parents=True, exist_ok=True)
        self._fh = open(path, "a", newline="")
        self._csv = csv.writer(self._fh, lineterminator="\n")
        if fresh:
            self._csv.writerow(CSV_HEADER)
            self._fh.flush()

    def write(self, row: ResultRow):
        self._csv.writerow(row.fields())
        self._fh.flush()

    def close(self):
        self._fh.close()


def format_results(rows: Iterable[ResultRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for row in rows:
        w.writerow(row.fields())
    return buf.getvalue()


def write_results(rows: Iterable[ResultRow], path) -> None:
    Path(path).write_text(format_results(rows))


def parse_results(text: str, source: str = "<csv>") -> list[ResultRow]:
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header is None:
        return []
    if tuple(header) != CSV_HEADER:
        raise ValueError(f"{source}: unexpected header {','.join(header)}")
    rows = []
    for n, values in enumerate(reader, start=2):
        try:
            rows.append(ResultRow.from_fields(values))
        except ValueError as exc:
            raise ValueError(f"{source}:{n}: {exc}") from None
    return rows


def read_results(path) -> list[ResultRow]:
    return parse_results(Path(path).read_text(), str(path))


# aggregation -----------------------------------------------------------------


@dataclass(frozen=True)
class Summary:
    """Exact counts for one (scenario, setting, planner) group."""

    scenario: str
    setting: str
    planner: str
    trials: int
    successes: int
    collisions: int
    stuck: int
    timeouts: int
    success_time: float  # summed over successful trials
    candidates: int
    replans: int

    @property
    def success_rate(self) -> float:
        """Percent, two decimals."""
        return round(100.0 * self.successes / self.trials, 2)

    @property
    def mean_time(self) -> float:
        """Mean time to goal over successful trials (NaN without any)."""
        return self.success_time / self.successes if self.successes else math.nan

    @property
    def candidates_per_replan(self) -> float:
        return self.candidates / self.replans if self.replans else 0.0

    def merge(self, other: Summary) -> Summary:
        return Summary(self.scenario, self.setting, self.planner, self.trials + other.trials,
                       self.successes + other.successes, self.collisions + other.collisions,
                       self.stuck + other.stuck, self.timeouts + other.timeouts,
                       self.success_time + other.success_time, self.candidates + other.candidates,
                       self.replans + other.replans)


def aggregate(rows: Iterable[ResultRow], by_setting: bool = True) -> list[Summary]:
    """Per-group summaries in first-appearance order. With ``by_setting`` off,
    all settings of a planner pool into one group labelled "all"."""
    groups: dict[tuple, Summary] = {}
    for r in rows:
        setting = r.setting if by_setting else "all"
        key = (r.scenario, setting, r.planner)
        ok = r.outcome is Outcome.SUCCESS
        part = Summary(r.scenario, setting, r.planner, 1, int(ok), int(r.outcome is Outcome.COLLISION),
                       int(r.outcome is Outcome.STUCK), int(r.outcome is Outcome.TIMEOUT),
                       r.time_s if ok else 0.0, r.candidates, r.replans)
        groups[key] = groups[key].merge(part) if key in groups else part
    if not groups:
        raise ValueError("cannot aggregate an empty result table")
    return list(groups.values())


def merge_summaries(*tables: list[Summary]) -> list[Summary]:
    merged: dict[tuple, Summary] = {}
    for table in tables:
        for s in table:
            key = (s.scenario, s.setting, s.planner)
            merged[key] = merged[key].merge(s) if key in merged else s
    if not merged:
        raise ValueError("cannot merge empty summaries")
    return list(merged.values())


def format_summary(summaries: Iterable[Summary]) -> str:
    lines = [f"{'setting':<12} {'planner':<20} {'success%':>9} {'collide':>8} {'stuck':>6} {'timeout':>8} "
             f"{'time_s':>7} {'cand/replan':>11}"]
    for s in summaries:
        t = "-" if math.isnan(s.mean_time) else f"{s.mean_time:.2f}"
        lines.append(f"{s.setting:<12} {s.planner:<20} {s.success_rate:>9.2f} {s.collisions:>8} {s.stuck:>6} "
                     f"{s.timeouts:>8} {t:>7} {s.candidates_per_replan:>11.2f}")
    return "\n".join(lines)
