"""Pure numpy versions of the compiled kernels (same signatures, same math)."""

import numpy as np

from ._physics import (CTRL_COST, DAMPING, DRAG, DT, LEG_COUPLING, REACH_DAMPING, REACH_GAIN,
                       REACH_MARGIN, STIFFNESS, THRUST, TORQUE_GAIN)

TWO_PI = 2.0 * np.pi


def _wrap(a):
    return a - TWO_PI * np.floor((a + np.pi) / TWO_PI)


def _mod2pi(a):
    return a - TWO_PI * np.floor(a / TWO_PI)


def _hopper(s, u):
    x, v, th, om = s.T
    acc = THRUST * u * np.cos(th) - DRAG * v
    alpha = -STIFFNESS * np.sin(th) - DAMPING * om + TORQUE_GAIN * u
    v2 = v + DT * acc
    om2 = om + DT * alpha
    out = np.stack([x + DT * v2, v2, th + DT * om2, om2], axis=1)
    return out, v2 - CTRL_COST * u * u


def _walker(s, ur, ul):
    x, v, thr, omr, thl, oml = s.T
    acc = THRUST * (ur * np.cos(thr) + ul * np.cos(thl)) / 2.0 - DRAG * v
    ar = -STIFFNESS * np.sin(thr) - DAMPING * omr + TORQUE_GAIN * ur - LEG_COUPLING * (thr - thl)
    al = -STIFFNESS * np.sin(thl) - DAMPING * oml + TORQUE_GAIN * ul - LEG_COUPLING * (thl - thr)
    v2 = v + DT * acc
    omr2 = omr + DT * ar
    oml2 = oml + DT * al
    out = np.stack([x + DT * v2, v2, thr + DT * omr2, omr2, thl + DT * oml2, oml2], axis=1)
    return out, v2 - CTRL_COST * (ur * ur + ul * ul)


def _reacher(s, u, tol):
    th = np.arctan2(s[:, 1], s[:, 0])
    tgt = np.arctan2(s[:, 4], s[:, 3])
    om2 = s[:, 2] + DT * (REACH_GAIN * u - REACH_DAMPING * s[:, 2])
    th2 = th + DT * om2
    dist = np.maximum(np.abs(_wrap(th2 - tgt)) - tol, 0.0)
    out = np.stack([np.cos(th2), np.sin(th2), om2, s[:, 3], s[:, 4]], axis=1)
    return out, -dist - CTRL_COST * u * u


def _reach_error(th, tgt, mode):
    d = tgt - th
    ccw = _mod2pi(d + REACH_MARGIN) - REACH_MARGIN
    cw = -(_mod2pi(-d + REACH_MARGIN) - REACH_MARGIN)
    return np.where(mode == 1, ccw, np.where(mode == 2, cw, _wrap(d)))


def _clip(u):
    return np.clip(u, -1.0, 1.0)


def hopper_step(states, actions):
    return _hopper(states, _clip(actions[:, 0]))


def walker_step(states, actions):
    return _walker(states, _clip(actions[:, 0]), _clip(actions[:, 1]))


def reacher_step(states, actions, tol):
    return _reacher(states, _clip(actions[:, 0]), tol)


def _rollout(init, noise, act_dim, controller, core):
    n, H = noise.shape[:2]
    states = np.empty((n, H, init.shape[1]))
    actions = np.empty((n, H, act_dim))
    rewards = np.empty((n, H))
    cur = np.array(init, dtype=np.float64)
    for t in range(H):
        u = controller(cur, noise[:, t])
        states[:, t] = cur
        actions[:, t] = u
        cur, rewards[:, t] = core(cur, u)
    return states, actions, rewards, cur


def hopper_rollout(init, params, noise):
    def controller(s, eps):
        return _clip(params[:, 0] - params[:, 1] * s[:, 2] - params[:, 2] * s[:, 3]
                     + eps[:, 0])[:, None]
    return _rollout(init, noise, 1, controller, lambda s, u: _hopper(s, u[:, 0]))


def walker_rollout(init, params, noise):
    def controller(s, eps):
        ur = params[:, 0] - params[:, 2] * s[:, 2] - params[:, 3] * s[:, 3] + eps[:, 0]
        ul = params[:, 1] - params[:, 2] * s[:, 4] - params[:, 3] * s[:, 5] + eps[:, 1]
        return np.stack([_clip(ur), _clip(ul)], axis=1)
    return _rollout(init, noise, 2, controller, lambda s, u: _walker(s, u[:, 0], u[:, 1]))


def reacher_rollout(init, params, noise, tol):
    mode = params[:, 0].astype(np.int64)

    def controller(s, eps):
        e = _reach_error(np.arctan2(s[:, 1], s[:, 0]), np.arctan2(s[:, 4], s[:, 3]), mode)
        return _clip(params[:, 1] * e - params[:, 2] * s[:, 2] + eps[:, 0])[:, None]
    return _rollout(init, noise, 1, controller, lambda s, u: _reacher(s, u[:, 0], tol))
