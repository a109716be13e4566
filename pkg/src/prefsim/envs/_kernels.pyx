# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled dynamics and scripted-controller rollouts.

Every function mirrors one in ``_fallback.py`` operation for operation.
"""

from libc.math cimport sin, cos, atan2, floor, fabs

import numpy as np

cdef double DT = 0.05
cdef double CTRL_COST = 0.01
cdef double THRUST = 2.0
cdef double DRAG = 0.5
cdef double STIFFNESS = 4.0
cdef double DAMPING = 1.0
cdef double TORQUE_GAIN = 6.0
cdef double LEG_COUPLING = 1.0
cdef double REACH_GAIN = 8.0
cdef double REACH_DAMPING = 1.0
cdef double REACH_MARGIN = 0.3
cdef double PI = 3.141592653589793
cdef double TWO_PI = 6.283185307179586

CONSTANTS = (DT, CTRL_COST, THRUST, DRAG, STIFFNESS, DAMPING, TORQUE_GAIN,
             LEG_COUPLING, REACH_GAIN, REACH_DAMPING, REACH_MARGIN)


cdef inline double clip1(double u) nogil:
    if u > 1.0:
        return 1.0
    if u < -1.0:
        return -1.0
    return u


cdef inline double wrap(double a) nogil:
    return a - TWO_PI * floor((a + PI) / TWO_PI)


cdef inline double fmod2pi(double a) nogil:
    return a - TWO_PI * floor(a / TWO_PI)


cdef inline double hopper_core(double* s, double u, double* out) nogil:
    cdef double x = s[0], v = s[1], th = s[2], om = s[3]
    cdef double acc = THRUST * u * cos(th) - DRAG * v
    cdef double alpha = -STIFFNESS * sin(th) - DAMPING * om + TORQUE_GAIN * u
    cdef double v2 = v + DT * acc
    cdef double om2 = om + DT * alpha
    out[0] = x + DT * v2
    out[1] = v2
    out[2] = th + DT * om2
    out[3] = om2
    return v2 - CTRL_COST * u * u


cdef inline double walker_core(double* s, double ur, double ul, double* out) nogil:
    cdef double x = s[0], v = s[1], thr = s[2], omr = s[3], thl = s[4], oml = s[5]
    cdef double acc = THRUST * (ur * cos(thr) + ul * cos(thl)) / 2.0 - DRAG * v
    cdef double ar = (-STIFFNESS * sin(thr) - DAMPING * omr + TORQUE_GAIN * ur
                      - LEG_COUPLING * (thr - thl))
    cdef double al = (-STIFFNESS * sin(thl) - DAMPING * oml + TORQUE_GAIN * ul
                      - LEG_COUPLING * (thl - thr))
    cdef double v2 = v + DT * acc
    cdef double omr2 = omr + DT * ar
    cdef double oml2 = oml + DT * al
    out[0] = x + DT * v2
    out[1] = v2
    out[2] = thr + DT * omr2
    out[3] = omr2
    out[4] = thl + DT * oml2
    out[5] = oml2
    return v2 - CTRL_COST * (ur * ur + ul * ul)


cdef inline double reacher_core(double* s, double u, double tol, double* out) nogil:
    cdef double th = atan2(s[1], s[0])
    cdef double om = s[2]
    cdef double tgt = atan2(s[4], s[3])
    cdef double om2 = om + DT * (REACH_GAIN * u - REACH_DAMPING * om)
    cdef double th2 = th + DT * om2
    cdef double dist = fabs(wrap(th2 - tgt)) - tol
    if dist < 0.0:
        dist = 0.0
    out[0] = cos(th2)
    out[1] = sin(th2)
    out[2] = om2
    out[3] = s[3]
    out[4] = s[4]
    return -dist - CTRL_COST * u * u


cdef inline double reach_error(double th, double tgt, int mode) nogil:
    cdef double d = tgt - th
    if mode == 1:
        return fmod2pi(d + REACH_MARGIN) - REACH_MARGIN
    if mode == 2:
        return -(fmod2pi(-d + REACH_MARGIN) - REACH_MARGIN)
    return wrap(d)


def hopper_step(double[:, ::1] states, double[:, ::1] actions):
    cdef Py_ssize_t n = states.shape[0], i
    out = np.empty((n, 4))
    rew = np.empty(n)
    cdef double[:, ::1] o = out
    cdef double[::1] r = rew
    for i in range(n):
        r[i] = hopper_core(&states[i, 0], clip1(actions[i, 0]), &o[i, 0])
    return out, rew


def walker_step(double[:, ::1] states, double[:, ::1] actions):
    cdef Py_ssize_t n = states.shape[0], i
    out = np.empty((n, 6))
    rew = np.empty(n)
    cdef double[:, ::1] o = out
    cdef double[::1] r = rew
    for i in range(n):
        r[i] = walker_core(&states[i, 0], clip1(actions[i, 0]), clip1(actions[i, 1]), &o[i, 0])
    return out, rew


def reacher_step(double[:, ::1] states, double[:, ::1] actions, double tol):
    cdef Py_ssize_t n = states.shape[0], i
    out = np.empty((n, 5))
    rew = np.empty(n)
    cdef double[:, ::1] o = out
    cdef double[::1] r = rew
    for i in range(n):
        r[i] = reacher_core(&states[i, 0], clip1(actions[i, 0]), tol, &o[i, 0])
    return out, rew


def hopper_rollout(double[:, ::1] init, double[:, ::1] params, double[:, :, ::1] noise):
    """params rows: (bias, kp, kd)."""
    cdef Py_ssize_t n = init.shape[0], H = noise.shape[1], i, t, j
    states = np.empty((n, H, 4))
    actions = np.empty((n, H, 1))
    rewards = np.empty((n, H))
    final = np.empty((n, 4))
    cdef double[:, :, ::1] S = states
    cdef double[:, :, ::1] A = actions
    cdef double[:, ::1] R = rewards
    cdef double[:, ::1] F = final
    cdef double cur[4]
    cdef double nxt[4]
    cdef double u
    with nogil:
        for i in range(n):
            for j in range(4):
                cur[j] = init[i, j]
            for t in range(H):
                u = clip1(params[i, 0] - params[i, 1] * cur[2] - params[i, 2] * cur[3]
                          + noise[i, t, 0])
                for j in range(4):
                    S[i, t, j] = cur[j]
                A[i, t, 0] = u
                R[i, t] = hopper_core(cur, u, nxt)
                for j in range(4):
                    cur[j] = nxt[j]
            for j in range(4):
                F[i, j] = cur[j]
    return states, actions, rewards, final


def walker_rollout(double[:, ::1] init, double[:, ::1] params, double[:, :, ::1] noise):
    """params rows: (bias_right, bias_left, kp, kd)."""
    cdef Py_ssize_t n = init.shape[0], H = noise.shape[1], i, t, j
    states = np.empty((n, H, 6))
    actions = np.empty((n, H, 2))
    rewards = np.empty((n, H))
    final = np.empty((n, 6))
    cdef double[:, :, ::1] S = states
    cdef double[:, :, ::1] A = actions
    cdef double[:, ::1] R = rewards
    cdef double[:, ::1] F = final
    cdef double cur[6]
    cdef double nxt[6]
    cdef double ur, ul
    with nogil:
        for i in range(n):
            for j in range(6):
                cur[j] = init[i, j]
            for t in range(H):
                ur = clip1(params[i, 0] - params[i, 2] * cur[2] - params[i, 3] * cur[3]
                           + noise[i, t, 0])
                ul = clip1(params[i, 1] - params[i, 2] * cur[4] - params[i, 3] * cur[5]
                           + noise[i, t, 1])
                for j in range(6):
                    S[i, t, j] = cur[j]
                A[i, t, 0] = ur
                A[i, t, 1] = ul
                R[i, t] = walker_core(cur, ur, ul, nxt)
                for j in range(6):
                    cur[j] = nxt[j]
            for j in range(6):
                F[i, j] = cur[j]
    return states, actions, rewards, final


def reacher_rollout(double[:, ::1] init, double[:, ::1] params, double[:, :, ::1] noise,
                    double tol):
    """params rows: (mode, kp, kd) with mode 0 shortest, 1 ccw, 2 cw."""
    cdef Py_ssize_t n = init.shape[0], H = noise.shape[1], i, t, j
    states = np.empty((n, H, 5))
    actions = np.empty((n, H, 1))
    rewards = np.empty((n, H))
    final = np.empty((n, 5))
    cdef double[:, :, ::1] S = states
    cdef double[:, :, ::1] A = actions
    cdef double[:, ::1] R = rewards
    cdef double[:, ::1] F = final
    cdef double cur[5]
    cdef double nxt[5]
    cdef double u, e
    cdef int mode
    with nogil:
        for i in range(n):
            mode = <int>params[i, 0]
            for j in range(5):
                cur[j] = init[i, j]
            for t in range(H):
                e = reach_error(atan2(cur[1], cur[0]), atan2(cur[4], cur[3]), mode)
                u = clip1(params[i, 1] * e - params[i, 2] * cur[2] + noise[i, t, 0])
                for j in range(5):
                    S[i, t, j] = cur[j]
                A[i, t, 0] = u
                R[i, t] = reacher_core(cur, u, tol, nxt)
                for j in range(5):
                    cur[j] = nxt[j]
            for j in range(5):
                F[i, j] = cur[j]
    return states, actions, rewards, final
