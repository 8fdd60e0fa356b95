"""Turn per-angle confidences and a goal direction into a short candidate list."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .geometry import Pose2D, wrap_angle


class SamplerMode(str, enum.Enum):
    TO_GOAL = "to-goal"
    GAUSSIAN_BIAS = "gaussian-bias"
    NAIVE_ARGMAX = "naive-argmax"


@dataclass(frozen=True)
class SamplerConfig:
    k: int = 5
    bias_sigma: float = 0.2
    mode: SamplerMode = SamplerMode.GAUSSIAN_BIAS

    def __post_init__(self):
        object.__setattr__(self, "mode", SamplerMode(self.mode))
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if not self.bias_sigma > 0:
            raise ValueError("bias_sigma must be positive")


@dataclass(frozen=True)
class CandidateSet:
    indices: tuple[int, ...]
    weights: tuple[float, ...]

    def __len__(self):
        return len(self.indices)


def goal_departure_angle(pose: Pose2D, goal, angle_range: float = 0.4) -> float:
    """Body-frame bearing to ``goal``, clamped to the departure-angle range."""
    dx, dy = float(goal[0]) - pose.x, float(goal[1]) - pose.y
    if dx == 0.0 and dy == 0.0:
        raise ValueError("goal coincides with the robot position")
    bearing = wrap_angle(math.atan2(dy, dx) - pose.heading)
    return float(np.clip(bearing, -angle_range, angle_range))


def gaussian_goal_bias(confidences, angles, goal_angle: float, sigma: float = 0.2) -> np.ndarray:
    c = np.asarray(confidences, dtype=float)
    a = np.asarray(angles, dtype=float)
    if c.shape != a.shape:
        raise ValueError(f"{c.shape[0]} confidences for {a.shape[0]} angles")
    return c * np.exp(-((a - goal_angle) ** 2) / (2.0 * sigma**2))


def select_top_k(weights, k: int, angles, goal_angle: float = 0.0) -> CandidateSet:
    """k largest weights; ties go to the angle nearer the goal, then lower index."""
    if k < 1:
        raise ValueError("k must be >= 1")
    w = np.asarray(weights, dtype=float)
    gap = np.abs(np.asarray(angles, dtype=float) - goal_angle)
    order = np.lexsort((np.arange(len(w)), gap, -w))[:k]
    return CandidateSet(tuple(int(i) for i in order), tuple(float(w[i]) for i in order))


def nearest_angle_index(angles, goal_angle: float) -> int:
    return int(np.argmin(np.abs(np.asarray(angles) - goal_angle)))


def to_goal_augment(candidates: CandidateSet, angles, goal_angle: float, weights=None) -> CandidateSet:
    """Append the grid angle nearest the goal unless it is already present."""
    j = nearest_angle_index(angles, goal_angle)
    if j in candidates.indices:
        return candidates
    w = float("nan") if weights is None else float(np.asarray(weights)[j])
    return CandidateSet(candidates.indices + (j,), candidates.weights + (w,))


def sample_candidates(confidences, angles, goal_angle: float, config: SamplerConfig = SamplerConfig()) -> CandidateSet:
    """Apply the configured sampling strategy to raw confidences."""
    if config.mode is SamplerMode.TO_GOAL:
        top = select_top_k(confidences, config.k, angles, goal_angle)
        return to_goal_augment(top, angles, goal_angle, confidences)
    weighted = gaussian_goal_bias(confidences, angles, goal_angle, config.bias_sigma)
    k = 1 if config.mode is SamplerMode.NAIVE_ARGMAX else config.k
    return select_top_k(weighted, k, angles, goal_angle)
