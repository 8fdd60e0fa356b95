"""Fixed-output models for planner tests that must not depend on training."""

import numpy as np

from navsieve.dataset import DatasetStats
from navsieve.learner import HeadKind, Model, architecture, init_params


def constant_model(head, values, beams=140, angles=51):
    """A model whose output ignores the scan: per-angle confidences for the
    classification heads, a fixed angle for the regression heads."""
    head = HeadKind(head)
    params = init_params(architecture(head, beams, angles, (4,)))
    for w in params.weights:
        w[:] = 0.0
    values = np.broadcast_to(np.asarray(values, dtype=float), (1,) if head.is_regression else (angles,))
    if head is HeadKind.COLLISION_FREE:
        c = np.clip(values, 1e-9, 1 - 1e-9)
        params.biases[-1][0::2] = np.log(c / (1 - c))
    elif head is HeadKind.BEST_ANGLE:
        params.biases[-1][:] = np.log(np.maximum(values, 1e-300))
    else:
        params.biases[-1][:] = values
    return Model(head, params, DatasetStats(np.zeros(beams), np.ones(beams)))


def all_heads(confidence=0.9, angle=0.0):
    return {h: constant_model(h, angle if h.is_regression else confidence) for h in HeadKind}
