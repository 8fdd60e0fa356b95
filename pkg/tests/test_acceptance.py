"""End-to-end acceptance suite.

Builds the default datasets, trains every network head through the CLI, runs
the benchmarks and checks each criterion. Set NAVSIEVE_ACCEPTANCE_DIR to keep
(and on later runs reuse) the generated data, models and result files; by
default everything is rebuilt in a temporary directory.
"""

import os
import time
from pathlib import Path

import numpy as np
import pytest

from navsieve.bench import aggregate, load_models, read_results
from navsieve.cli import main
from navsieve.dataset import load_dataset
from navsieve.geometry import Pose2D, WorldSpec, generate_scene
from navsieve.learner import HeadKind, evaluate, load_model
from navsieve.planner import Outcome
from navsieve.trajectory import TrajectoryConfig, label_scene

from oracles import fine_clear_distance, numeric_gradient_error, random_case

TRAIN_SCENES, TRAIN_SEED = 10_000, 0
TEST_SCENES, TEST_SEED = 1_000, 1_000_000
SWEEP_PLANNERS = ("cartesian-gaussian", "pips-gaussian")


class Workspace:
    def __init__(self, root: Path):
        self.root = root
        self.models = root / "models"
        self.train = root / "train.txt"
        self.test = root / "test.txt"
        self.timings: dict[str, float] = {}

    def run(self, name: str, args: list[str], output: Path) -> Path:
        """Run a CLI command unless its output already exists; time it."""
        if not output.exists():
            t0 = time.perf_counter()
            assert main(args) == 0, f"command failed: navsieve {' '.join(args)}"
            self.timings[name] = time.perf_counter() - t0
        return output


@pytest.fixture(scope="session")
def ws(tmp_path_factory):
    root = os.environ.get("NAVSIEVE_ACCEPTANCE_DIR")
    root = Path(root) if root else tmp_path_factory.mktemp("acceptance")
    root.mkdir(parents=True, exist_ok=True)
    return Workspace(root)


@pytest.fixture(scope="session")
def trained(ws):
    ws.run("gen-train", ["gen-data", "--scenes", str(TRAIN_SCENES), "--seed", str(TRAIN_SEED),
                         "--out", str(ws.train)], ws.train)
    ws.run("gen-test", ["gen-data", "--scenes", str(TEST_SCENES), "--seed", str(TEST_SEED),
                        "--out", str(ws.test)], ws.test)
    for head in HeadKind:
        out = ws.models / f"{head.value}.model"
        ws.run(f"train-{head.value}", ["train", "--head", head.value, "--data", str(ws.train),
                                       "--test", str(ws.test), "--out", str(out)], out)
    return ws


@pytest.fixture(scope="session")
def barrel_rows(trained):
    out = trained.root / "barrel_forest.csv"
    trained.run("bench-barrel", ["bench", "--scenario", "barrel-forest", "--models", str(trained.models),
                                 "--out", str(out)], out)
    return read_results(out)


@pytest.fixture(scope="session")
def sweep_rows(trained):
    out = trained.root / "sweep.csv"
    trained.run("bench-sweep", ["bench", "--scenario", "candidate-sweep", "--planner", ",".join(SWEEP_PLANNERS),
                                "--models", str(trained.models), "--out", str(out)], out)
    return read_results(out)


def rates(rows):
    return {(s.setting, s.planner): s.success_rate for s in aggregate(rows)}


def pooled(rows):
    return {s.planner: s for s in aggregate(rows, by_setting=False)}


# 1 -------------------------------------------------------------------------


def test_criterion_1_labels_match_fine_rollout(acceptance_report):
    cfg = TrajectoryConfig()
    t0 = time.perf_counter()
    worst = 0.0
    for seed in range(100):
        scene = generate_scene(WorldSpec(obstacle_count=3, seed=seed))
        labels = label_scene(scene, Pose2D(), cfg).distances
        oracle = np.array([fine_clear_distance(scene, Pose2D(), a, cfg) for a in cfg.angles])
        worst = max(worst, float(np.abs(labels - oracle).max()))
    elapsed = time.perf_counter() - t0
    ok = worst <= 0.05 and elapsed < 60.0
    acceptance_report(1, ok, f"max |label - 10x finer rollout| = {worst:.4f} m over 100 scenes x 51 angles "
                             f"(tol 0.05 m), {elapsed:.1f} s (limit 60 s)")
    assert ok


# 2 -------------------------------------------------------------------------


def test_criterion_2_gradients_match_finite_differences(acceptance_report):
    rng = np.random.default_rng(2024)
    t0 = time.perf_counter()
    worst = {}
    for head in HeadKind:
        errs = []
        for _ in range(10):
            params, x, y = random_case(head, rng)
            errs.append(numeric_gradient_error(params, x, y, head, rng))
        worst[head.value] = max(errs)
    elapsed = time.perf_counter() - t0
    ok = max(worst.values()) <= 1e-4 and elapsed < 60.0
    shown = ", ".join(f"{k} {v:.1e}" for k, v in worst.items())
    acceptance_report(2, ok, f"max relative gradient error per head: {shown} (tol 1e-4), {elapsed:.1f} s")
    assert ok


# 3 -------------------------------------------------------------------------


def test_criterion_3_classifier_accuracy(trained, acceptance_report):
    model = load_model(trained.models / "collision-free.model")
    acc = evaluate(model, load_dataset(trained.test))["accuracy"]
    minutes = trained.timings.get("train-collision-free")
    ok = acc >= 0.90 and (minutes is None or minutes < 15 * 60)
    timing = "reused model" if minutes is None else f"trained in {minutes / 60:.1f} min (limit 15)"
    acceptance_report(3, ok, f"held-out per-angle accuracy {acc:.4f} (min 0.90), {timing}")
    assert ok


# 4 -------------------------------------------------------------------------


def test_criterion_4_sampling_budget(trained, barrel_rows, acceptance_report):
    table = pooled(barrel_rows)
    ex, cg = table["exhaustive"], table["cartesian-gaussian"]
    gap = ex.success_rate - cg.success_rate
    per_replan = cg.candidates_per_replan
    seconds = trained.timings.get("bench-barrel")
    ok = gap <= 10.0 and per_replan <= 6.0 and ex.candidates_per_replan == 200.0 and (
        seconds is None or seconds < 30 * 60)
    timing = "reused results" if seconds is None else f"benchmark {seconds / 60:.1f} min for all planners"
    acceptance_report(4, ok, f"cartesian-gaussian {cg.success_rate:.2f}% vs exhaustive {ex.success_rate:.2f}% "
                             f"(gap {gap:.2f}, max 10); candidates/replan {per_replan:.2f} vs "
                             f"{ex.candidates_per_replan:.0f} (max 6); {timing}")
    assert ok


# 5 -------------------------------------------------------------------------


def test_criterion_5_candidate_sweep_trend(sweep_rows, acceptance_report):
    r = rates(sweep_rows)
    parts, ok = [], True
    for planner in SWEEP_PLANNERS:
        s = {k: r[(f"k={k}", planner)] for k in (2, 3, 5, 7)}
        good = s[2] < s[3] and abs(s[5] - s[7]) <= 10.0
        ok &= good
        parts.append(f"{planner} k=2/3/5/7: {s[2]:.0f}/{s[3]:.0f}/{s[5]:.0f}/{s[7]:.0f}")
    acceptance_report(5, ok, "; ".join(parts) + " (need k2 < k3 and |k5 - k7| <= 10)")
    assert ok


# 6 -------------------------------------------------------------------------


def test_criterion_6_planner_ordering(barrel_rows, acceptance_report):
    table = pooled(barrel_rows)
    rate = {p: s.success_rate for p, s in table.items()}
    others = [p for p in rate if p != "naive"]
    naive_lowest = all(rate["naive"] < rate[p] for p in others if p not in ("regress", "regress-goal"))
    classifier_based = [p for p in rate if p.startswith(("cartesian", "pips"))]
    regressors_below = all(rate[r] < rate[c] for r in ("regress", "regress-goal") for c in classifier_based)
    ok = naive_lowest and regressors_below
    shown = ", ".join(f"{p} {v:.2f}" for p, v in sorted(rate.items(), key=lambda kv: -kv[1]))
    acceptance_report(6, ok, f"pooled success: {shown}; naive lowest of the non-regression planners: "
                             f"{naive_lowest}; both regressors below every classifier planner: {regressors_below}")
    assert ok


# 7 -------------------------------------------------------------------------


def conversion(ws, rows, planner, recovery):
    name = f"rerun_{planner}_{recovery}.csv"
    stuck = ws.root / f"stuck_{planner}.csv"
    if not stuck.exists():
        from navsieve.bench import write_results
        write_results([r for r in rows if r.planner == planner], stuck)
    out = ws.root / name
    ws.run(f"rerun-{planner}-{recovery}", ["bench", "--scenario", "candidate-sweep", "--planner", planner,
                                           "--models", str(ws.models), "--rerun-failed", str(stuck),
                                           "--recovery", recovery, "--out", str(out)], out)
    after = read_results(out)
    before = sum(r.outcome is Outcome.STUCK for r in read_results(stuck))
    assert len(after) == before
    return sum(r.outcome is Outcome.SUCCESS for r in after), before


def test_criterion_7_recovery_effect(trained, sweep_rows, acceptance_report):
    g_ok, g_n = conversion(trained, sweep_rows, "cartesian-gaussian", "global-replan")
    r_ok, r_n = conversion(trained, sweep_rows, "pips-gaussian", "rotate-360")
    g_rate = g_ok / g_n if g_n else 0.0
    r_rate = r_ok / r_n if r_n else 0.0
    ok = g_n > 0 and g_rate >= 0.25 and r_rate < g_rate
    acceptance_report(7, ok, f"global-replan converts {g_ok}/{g_n} stuck ({100 * g_rate:.1f}%, min 25%); "
                             f"rotate-360 on pips-gaussian converts {r_ok}/{r_n} ({100 * r_rate:.1f}%, must be lower)")
    assert ok


# 8 -------------------------------------------------------------------------


def test_criterion_8_byte_identical_reruns(trained, tmp_path, acceptance_report):
    models = str(trained.models)
    commands = {
        "barrel-forest": ["bench", "--scenario", "barrel-forest", "--trials", "3", "--seed", "77"],
        "candidate-sweep": ["bench", "--scenario", "candidate-sweep", "--trials", "3", "--seed", "77"],
        "sector-world": ["bench", "--scenario", "sector-world", "--trials", "3", "--seed", "77"],
        "rerun": ["bench", "--scenario", "candidate-sweep", "--planner", "cartesian-gaussian",
                  "--rerun-failed", str(trained.root / "stuck_cartesian-gaussian.csv"), "--recovery", "global-replan"],
    }
    mismatched = []
    for name, args in commands.items():
        if name == "rerun" and not (trained.root / "stuck_cartesian-gaussian.csv").exists():
            continue
        outputs = []
        for attempt in range(2):
            out = tmp_path / f"{name}_{attempt}.csv"
            assert main(args + ["--models", models, "--out", str(out)]) == 0
            outputs.append(out.read_bytes())
        if outputs[0] != outputs[1]:
            mismatched.append(name)
    parallel = tmp_path / "parallel.csv"
    assert main(commands["barrel-forest"] + ["--models", models, "--out", str(parallel), "--workers", "2"]) == 0
    if parallel.read_bytes() != (tmp_path / "barrel-forest_0.csv").read_bytes():
        mismatched.append("barrel-forest with 2 workers")
    ok = not mismatched
    acceptance_report(8, ok, f"reran {len(commands)} benchmark commands twice plus a 2-worker run: "
                             + ("all byte-identical" if ok else f"differences in {', '.join(mismatched)}"))
    assert ok
