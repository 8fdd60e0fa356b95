"""Labelled (depth scan, per-angle clear distance) datasets."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .geometry import DepthScan, Pose2D, SensorConfig, WorldSpec, generate_scene, raycast_scan
from .trajectory import DistanceLabels, TrajectoryConfig, label_scene

MAGIC = "navsieve-dataset"
VERSION = "v1"
STD_FLOOR = 1e-6


class EmptyDatasetError(ValueError):
    pass


class DatasetFormatError(ValueError):
    pass


@dataclass(frozen=True)
class Sample:
    scan: DepthScan
    labels: DistanceLabels
    goal_angle: float | None = None


@dataclass(frozen=True)
class DatasetStats:
    mean: np.ndarray
    std_dev: np.ndarray

    def __eq__(self, other):
        return (
            isinstance(other, DatasetStats)
            and np.array_equal(self.mean, other.mean)
            and np.array_equal(self.std_dev, other.std_dev)
        )


@dataclass(eq=False)
class Dataset:
    """Array-backed dataset; ``samples`` gives the per-record view."""

    scans: np.ndarray  # (S, beams)
    distances: np.ndarray  # (S, angles)
    goal_angles: np.ndarray  # (S,), NaN where absent
    stats: DatasetStats
    sensor: SensorConfig
    trajectory: TrajectoryConfig

    def __len__(self):
        return len(self.scans)

    def __eq__(self, other):
        return (
            isinstance(other, Dataset)
            and self.sensor == other.sensor
            and self.trajectory == other.trajectory
            and np.array_equal(self.scans, other.scans)
            and np.array_equal(self.distances, other.distances)
            and np.array_equal(self.goal_angles, other.goal_angles, equal_nan=True)
            and self.stats == other.stats
        )

    @property
    def samples(self) -> list[Sample]:
        out = []
        for scan, dist, goal in zip(self.scans, self.distances, self.goal_angles):
            out.append(
                Sample(
                    DepthScan(scan, self.sensor),
                    DistanceLabels(dist, self.trajectory.label_threshold),
                    None if np.isnan(goal) else float(goal),
                )
            )
        return out

    @property
    def binary_labels(self) -> np.ndarray:
        return self.distances >= self.trajectory.label_threshold

    def subset(self, index) -> Dataset:
        scans = self.scans[index]
        return Dataset(scans, self.distances[index], self.goal_angles[index], compute_stats(scans),
                       self.sensor, self.trajectory)


def compute_stats(scans) -> DatasetStats:
    """Per-beam mean and population standard deviation (floored)."""
    if isinstance(scans, (list, tuple)):
        if not scans:
            raise EmptyDatasetError("cannot compute statistics of zero samples")
        scans = np.stack([s.scan.ranges if isinstance(s, Sample) else np.asarray(getattr(s, "ranges", s))
                          for s in scans])
    scans = np.asarray(scans, dtype=float)
    if scans.ndim != 2 or len(scans) == 0:
        raise EmptyDatasetError("cannot compute statistics of zero samples")
    mean = scans.mean(axis=0)
    std = np.sqrt(np.mean((scans - mean) ** 2, axis=0))
    return DatasetStats(mean, np.maximum(std, STD_FLOOR))


def normalize_scan(scan, stats: DatasetStats) -> np.ndarray:
    values = np.asarray(getattr(scan, "ranges", scan), dtype=float)
    if values.shape[-1] != stats.mean.shape[0]:
        raise ValueError(f"scan length {values.shape[-1]} != stats length {stats.mean.shape[0]}")
    return (values - stats.mean) / stats.std_dev


def denormalize_scan(features, stats: DatasetStats) -> np.ndarray:
    features = np.asarray(features, dtype=float)
    if features.shape[-1] != stats.mean.shape[0]:
        raise ValueError(f"feature length {features.shape[-1]} != stats length {stats.mean.shape[0]}")
    return features * stats.std_dev + stats.mean


DEFAULT_TEMPLATE = WorldSpec()


def build_dataset(template: WorldSpec = DEFAULT_TEMPLATE, count: int = 10_000, base_seed: int = 0,
                  sensor: SensorConfig = SensorConfig(), trajectory: TrajectoryConfig = TrajectoryConfig(),
                  with_goal: bool = True) -> Dataset:
    """Generate ``count`` scenes (seeds base_seed + i) seen from ``template.start``.

    Each record also carries a goal bearing drawn uniformly over the
    departure-angle range, used only by the goal-informed regressor.
    """
    if count < 1:
        raise EmptyDatasetError("dataset count must be >= 1")
    start: Pose2D = template.start
    scans = np.empty((count, sensor.beam_count))
    distances = np.empty((count, trajectory.angle_count))
    goals = np.full(count, np.nan)
    for i in range(count):
        seed = base_seed + i
        scene = generate_scene(dataclasses.replace(template, seed=seed))
        scans[i] = raycast_scan(scene, start, sensor).ranges
        distances[i] = label_scene(scene, start, trajectory).distances
        if with_goal:
            rng = np.random.default_rng([seed, 1])
            goals[i] = rng.uniform(-trajectory.angle_range, trajectory.angle_range)
    return Dataset(scans, distances, goals, compute_stats(scans), sensor, trajectory)


def split_dataset(dataset: Dataset, test_fraction: float = 0.1, seed: int = 0) -> tuple[Dataset, Dataset]:
    n = len(dataset)
    n_test = int(round(n * test_fraction))
    if n_test < 1 or n_test >= n:
        raise ValueError(f"cannot split {n} samples with test fraction {test_fraction}")
    perm = np.random.default_rng(seed).permutation(n)
    return dataset.subset(np.sort(perm[n_test:])), dataset.subset(np.sort(perm[:n_test]))


# serialisation -------------------------------------------------------------


def _fmt(values) -> str:
    return " ".join(repr(float(v)) for v in values)


def _config_line(name: str, cfg) -> str:
    return name + " " + " ".join(f"{f.name}={getattr(cfg, f.name)!r}" for f in dataclasses.fields(cfg))


def _parse_config(cls, parts, lineno):
    kwargs = {}
    types = {f.name: f.type for f in dataclasses.fields(cls)}
    for item in parts:
        key, _, value = item.partition("=")
        if key not in types:
            raise DatasetFormatError(f"line {lineno}: unknown {cls.__name__} field {key!r}")
        kwargs[key] = int(value) if types[key] in ("int", int) else float(value)
    return cls(**kwargs)


def dumps_dataset(dataset: Dataset) -> str:
    beams, angles = dataset.sensor.beam_count, dataset.trajectory.angle_count
    lines = [
        f"{MAGIC} {VERSION} beams={beams} angles={angles} count={len(dataset)}",
        _config_line("sensor", dataset.sensor),
        _config_line("trajectory", dataset.trajectory),
        "mean " + _fmt(dataset.stats.mean),
        "std " + _fmt(dataset.stats.std_dev),
    ]
    for scan, dist, goal in zip(dataset.scans, dataset.distances, dataset.goal_angles):
        goal_field = "-" if np.isnan(goal) else repr(float(goal))
        lines.append(f"{_fmt(scan)} | {_fmt(dist)} | {goal_field}")
    return "\n".join(lines) + "\n"


def save_dataset(dataset: Dataset, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps_dataset(dataset))


def loads_dataset(text: str) -> Dataset:
    lines = text.splitlines()
    if not lines:
        raise DatasetFormatError("line 1: empty file")
    header = lines[0].split()
    if len(header) < 2 or header[0] != MAGIC or header[1] != VERSION:
        raise DatasetFormatError(f"line 1: not a {MAGIC} {VERSION} file")
    try:
        meta = dict(item.split("=", 1) for item in header[2:])
        beams, angles, count = int(meta["beams"]), int(meta["angles"]), int(meta["count"])
    except (KeyError, ValueError) as exc:
        raise DatasetFormatError(f"line 1: bad header ({exc})") from exc
    if len(lines) < 5:
        raise DatasetFormatError(f"line {len(lines) + 1}: truncated header block")

    def keyed(lineno, key):
        parts = lines[lineno - 1].split()
        if not parts or parts[0] != key:
            raise DatasetFormatError(f"line {lineno}: expected {key!r} line")
        return parts[1:]

    sensor = _parse_config(SensorConfig, keyed(2, "sensor"), 2)
    trajectory = _parse_config(TrajectoryConfig, keyed(3, "trajectory"), 3)
    if sensor.beam_count != beams or trajectory.angle_count != angles:
        raise DatasetFormatError("line 2: config block disagrees with header dimensions")
    try:
        mean = np.array(keyed(4, "mean"), dtype=float)
        std = np.array(keyed(5, "std"), dtype=float)
    except ValueError as exc:
        raise DatasetFormatError(f"line 4: bad statistics ({exc})") from exc
    if mean.shape != (beams,) or std.shape != (beams,):
        raise DatasetFormatError(f"line 4: statistics length != beams={beams}")

    records = lines[5:]
    if len(records) != count:
        raise DatasetFormatError(f"line {len(lines) + 1}: expected {count} records, found {len(records)} (truncated?)")
    scans = np.empty((count, beams))
    distances = np.empty((count, angles))
    goals = np.full(count, np.nan)
    for i, line in enumerate(records):
        lineno = i + 6
        fields = line.split("|")
        if len(fields) != 3:
            raise DatasetFormatError(f"line {lineno}: expected 3 '|'-separated fields, got {len(fields)}")
        try:
            scan = np.array(fields[0].split(), dtype=float)
            dist = np.array(fields[1].split(), dtype=float)
            goal = fields[2].strip()
            goals[i] = np.nan if goal == "-" else float(goal)
        except ValueError as exc:
            raise DatasetFormatError(f"line {lineno}: {exc}") from exc
        if scan.shape != (beams,):
            raise DatasetFormatError(f"line {lineno}: {scan.shape[0]} beam values, header says beams={beams}")
        if dist.shape != (angles,):
            raise DatasetFormatError(f"line {lineno}: {dist.shape[0]} label values, header says angles={angles}")
        scans[i] = scan
        distances[i] = dist
    return Dataset(scans, distances, goals, DatasetStats(mean, std), sensor, trajectory)


def load_dataset(path) -> Dataset:
    return loads_dataset(Path(path).read_text())
