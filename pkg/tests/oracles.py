"""Independent reference computations used by several test modules."""

import math

import numpy as np

from navsieve.geometry import clearance


def integrate_unicycle(start, angle, v, w, dt, length):
    """Step-by-step unicycle integration (exact arc per step) of the
    turn-then-straight manoeuvre. Returns an (N, 3) array of x, y, heading."""
    x, y, h = start
    target = h + angle
    states = [(x, y, h)]
    travelled = 0.0
    while travelled < length - 1e-12:
        step_t = min(dt, (length - travelled) / v)
        remaining_turn = target - h
        turn_t = min(step_t, abs(remaining_turn) / w)
        if turn_t > 0:
            om = math.copysign(w, remaining_turn)
            h2 = h + om * turn_t
            x += v / om * (math.sin(h2) - math.sin(h))
            y -= v / om * (math.cos(h2) - math.cos(h))
            h = h2 if abs(target - h2) > 1e-15 else target
        straight_t = step_t - turn_t
        x += v * straight_t * math.cos(h)
        y += v * straight_t * math.sin(h)
        travelled += v * step_t
        states.append((x, y, h))
    return np.array(states)


def fine_clear_distance(scene, start, angle, config, refine=10):
    """Clear distance from a rollout with a time step ``refine`` times finer."""
    states = integrate_unicycle((start.x, start.y, start.heading), angle, config.forward_speed,
                                config.max_yaw_rate, config.time_step / refine, config.max_path_length)
    c = clearance(scene, states[:, :2])
    bad = np.nonzero(c < config.robot_radius)[0]
    if len(bad) == 0:
        last = len(states) - 1
    elif bad[0] == 0:
        return 0.0
    else:
        last = bad[0] - 1
    return float(np.hypot(*(states[last, :2] - states[0, :2])))


def numeric_gradient_error(params, features, targets, head, rng, per_array=8, h=1e-6):
    """Relative error ||g_a - g_n|| / (||g_a|| + ||g_n||) between analytic and
    central-difference gradients over ``per_array`` random coordinates of
    every weight and bias array."""
    from navsieve.learner import loss_and_gradients

    _, grads = loss_and_gradients(params, features, targets, head)
    analytic, numeric = [], []
    for arr, garr in zip(params.arrays(), grads.arrays()):
        flat, gflat = arr.reshape(-1), garr.reshape(-1)
        for j in rng.choice(flat.size, size=min(per_array, flat.size), replace=False):
            old = flat[j]
            flat[j] = old + h
            up = loss_and_gradients(params, features, targets, head)[0]
            flat[j] = old - h
            down = loss_and_gradients(params, features, targets, head)[0]
            flat[j] = old
            numeric.append((up - down) / (2 * h))
            analytic.append(gflat[j])
    a, n = np.array(analytic), np.array(numeric)
    return float(np.linalg.norm(a - n) / max(np.linalg.norm(a) + np.linalg.norm(n), 1e-300))


def random_case(head, rng, batch=8, beams=140, angles=51, hidden=(256, 128)):
    """Random parameters, features and valid targets for one gradient check."""
    from navsieve.learner import architecture, init_params

    params = init_params(architecture(head, beams, angles, hidden), int(rng.integers(1 << 30)))
    for b in params.biases:
        b[:] = rng.normal(0, 0.1, size=b.shape)
    x = rng.normal(size=(batch, head.input_size(beams)))
    if head.is_regression:
        y = rng.uniform(-0.4, 0.4, size=batch)
    elif head.value == "best-angle":
        y = rng.integers(0, angles, size=batch)
    else:
        y = rng.random((batch, angles)) < 0.5
    return params, x, y
