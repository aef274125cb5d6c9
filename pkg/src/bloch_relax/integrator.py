"""Dormand-Prince 5(4) integrator with dense output and ball/shell event location.

The right-hand side is always

    dr/dt = 2 h(t) x r + M r + b

(the Lindblad dissipator is affine in ``r``). ``h(t)`` is either a packed field
(constant + isotropic ramp + bounded Fourier control, evaluated inside the
compiled loop) or an arbitrary Python callable, in which case the same loop runs
uncompiled.
"""

from __future__ import annotations

import math
import types

import numpy as np
from numba import njit

# Dormand-Prince tableau
C2, C3, C4, C5 = 1 / 5, 3 / 10, 4 / 5, 8 / 9
A21 = 1 / 5
A31, A32 = 3 / 40, 9 / 40
A41, A42, A43 = 44 / 45, -56 / 15, 32 / 9
A51, A52, A53, A54 = 19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729
A61, A62, A63, A64, A65 = 9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656
B1, B3, B4, B5, B6 = 35 / 384, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84
E1, E3, E4, E5, E6, E7 = (-71 / 57600, 71 / 16695, -71 / 1920, 17253 / 339200,
                          -22 / 525, 1 / 40)

# quartic continuous extension, y(t + s h) = y + h * sum_j (K^T P)[:, j] s^(j+1)
DENSE_P = np.array([
    [1.0, -8048581381 / 2820520608, 8663915743 / 2820520608, -12715105075 / 11282082432],
    [0.0, 0.0, 0.0, 0.0],
    [0.0, 131558114200 / 32700410799, -68118460800 / 10900136933, 87487479700 / 32700410799],
    [0.0, -1754552775 / 470086768, 14199869525 / 1410260304, -10690763975 / 1880347072],
    [0.0, 127303824393 / 49829197408, -318862633887 / 49829197408, 701980252875 / 199316789632],
    [0.0, -282668133 / 205662961, 2019193451 / 616988883, -1453857185 / 822651844],
    [0.0, 40617522 / 29380423, -110615467 / 29380423, 69997945 / 29380423],
])

EVENT_NONE = 0
EVENT_BALL = 1   # |r - center| <= eps
EVENT_SHELL = 2  # ||r| - radius| <= eps

STATUS_HORIZON = 0
STATUS_HIT = 1
STATUS_FAILED = -1

GRAZE_TOL = 1e-12


@njit(cache=True)
def packed_field(t, fp, coeffs):
    """Evaluate a packed field.

    ``fp = [h0x, h0y, h0z, ramp, tau, m]``; ``coeffs`` has shape (3, N_c).
    Returns ``h0 + ramp (t/tau)(1,1,1) + m * clamp(h_C(t))`` where ``h_C`` is the
    sine series scaled by ``t/(tau N_c)`` and clamp rescales it to norm <= 1.
    """
    hx, hy, hz = fp[0], fp[1], fp[2]
    tau = fp[4]
    if fp[3] != 0.0 and tau > 0.0:
        ramp = fp[3] * t / tau
        hx += ramp
        hy += ramp
        hz += ramp
    m = fp[5]
    nc = coeffs.shape[1]
    if m != 0.0 and nc > 0:
        cx = 0.0
        cy = 0.0
        cz = 0.0
        w = 2.0 * math.pi * t / tau
        for n in range(nc):
            s = math.sin((n + 1) * w)
            cx += coeffs[0, n] * s
            cy += coeffs[1, n] * s
            cz += coeffs[2, n] * s
        pre = t / (tau * nc)
        cx *= pre
        cy *= pre
        cz *= pre
        norm = math.sqrt(cx * cx + cy * cy + cz * cz)
        if norm > 1.0:
            cx /= norm
            cy /= norm
            cz /= norm
        hx += m * cx
        hy += m * cy
        hz += m * cz
    return hx, hy, hz


@njit(cache=True)
def _rhs_packed(t, y, M, b, fp, coeffs, out):
    hx, hy, hz = packed_field(t, fp, coeffs)
    for i in range(3):
        out[i] = M[i, 0] * y[0] + M[i, 1] * y[1] + M[i, 2] * y[2] + b[i]
    out[0] += 2.0 * (hy * y[2] - hz * y[1])
    out[1] += 2.0 * (hz * y[0] - hx * y[2])
    out[2] += 2.0 * (hx * y[1] - hy * y[0])


def _rhs_callable(t, y, M, b, field, _unused, out):
    h = field(t)
    out[:] = M @ y + b + 2.0 * np.cross(h, y)


_rhs = _rhs_packed


@njit(cache=True)
def _event_g(y, kind, center, level, eps, side):
    """Event function, non-positive inside the target set.

    The shell is approached from the side the run starts on (``side`` = +-1), which
    keeps ``g`` single-signed across the shell instead of V-shaped.
    """
    if kind == EVENT_BALL:
        dx = y[0] - center[0]
        dy = y[1] - center[1]
        dz = y[2] - center[2]
        return math.sqrt(dx * dx + dy * dy + dz * dz) - eps
    return side * (math.sqrt(y[0] * y[0] + y[1] * y[1] + y[2] * y[2]) - level) - eps


@njit(cache=True)
def _golden_min(y, h, Q, a, c, kind, center, level, eps, side, tol, tmp):
    """Minimum of the event function along the dense output on ``[a, c]``."""
    invphi = 0.6180339887498949
    x1 = c - invphi * (c - a)
    x2 = a + invphi * (c - a)
    _dense(y, h, Q, x1, tmp)
    f1 = _event_g(tmp, kind, center, level, eps, side)
    _dense(y, h, Q, x2, tmp)
    f2 = _event_g(tmp, kind, center, level, eps, side)
    for _ in range(200):
        if (c - a) * h <= tol or f1 <= 0.0 or f2 <= 0.0:
            break
        if f1 < f2:
            c = x2
            x2 = x1
            f2 = f1
            x1 = c - invphi * (c - a)
            _dense(y, h, Q, x1, tmp)
            f1 = _event_g(tmp, kind, center, level, eps, side)
        else:
            a = x1
            x1 = x2
            f1 = f2
            x2 = a + invphi * (c - a)
            _dense(y, h, Q, x2, tmp)
            f2 = _event_g(tmp, kind, center, level, eps, side)
    if f1 < f2:
        return x1, f1
    return x2, f2


@njit(cache=True)
def _dense(y0, h, Q, s, out):
    s2 = s * s
    for i in range(3):
        out[i] = y0[i] + h * (Q[i, 0] * s + Q[i, 1] * s2 + Q[i, 2] * s2 * s
                              + Q[i, 3] * s2 * s2)


@njit(cache=True)
def _core(M, b, f_a, f_b, y0, t_end, rtol, atol, max_step, first_step, ev_kind,
          center, level, eps, time_tol, max_steps, record):
    rhs = _rhs
    P = DENSE_P
    cap = 64 if record else 2
    ts = np.empty(cap)
    ys = np.empty((cap, 3))
    hs = np.empty(cap)
    Qs = np.empty((cap, 3, 4))
    n = 1
    ts[0] = 0.0
    ys[0, :] = y0
    K = np.empty((7, 3))
    y = y0.copy()
    ynew = np.empty(3)
    tmp = np.empty(3)
    Q = np.empty((3, 4))
    t = 0.0
    accepted = 0
    rejected = 0
    status = STATUS_HORIZON
    t_hit = -1.0
    rhs(t, y, M, b, f_a, f_b, K[0])
    side = 1.0
    if ev_kind == EVENT_SHELL and math.sqrt(y[0] * y[0] + y[1] * y[1] + y[2] * y[2]) < level:
        side = -1.0
    g_prev = 1.0
    if ev_kind != EVENT_NONE:
        g_prev = _event_g(y, ev_kind, center, level, eps, side)
    if ev_kind != EVENT_NONE and g_prev <= GRAZE_TOL:
        return (ts[:1], ys[:1], hs[:0], Qs[:0], 0, 0, STATUS_HIT, 0.0)
    if t_end <= 0.0:
        return (ts[:1], ys[:1], hs[:0], Qs[:0], 0, 0, STATUS_HORIZON, -1.0)
    # initial step (Hairer, Norsett & Wanner II.4)
    if first_step > 0.0:
        h = first_step
    else:
        d0 = 0.0
        d1 = 0.0
        for i in range(3):
            sc = atol + rtol * abs(y[i])
            d0 += (y[i] / sc) ** 2
            d1 += (K[0, i] / sc) ** 2
        d0 = math.sqrt(d0 / 3)
        d1 = math.sqrt(d1 / 3)
        h0 = 1e-6 if (d0 < 1e-5 or d1 < 1e-5) else 0.01 * d0 / d1
        h0 = min(h0, t_end)
        for i in range(3):
            tmp[i] = y[i] + h0 * K[0, i]
        rhs(t + h0, tmp, M, b, f_a, f_b, K[1])
        d2 = 0.0
        for i in range(3):
            sc = atol + rtol * abs(y[i])
            d2 += ((K[1, i] - K[0, i]) / sc) ** 2
        d2 = math.sqrt(d2 / 3) / h0
        if d1 <= 1e-15 and d2 <= 1e-15:
            h1 = max(1e-6, h0 * 1e-3)
        else:
            h1 = (0.01 / max(d1, d2)) ** 0.2
        h = min(100 * h0, h1)
    h = min(h, max_step, t_end)
    steps = 0
    while t < t_end:
        if steps >= max_steps:
            status = STATUS_FAILED
            break
        steps += 1
        if not h >= 10.0 * 2.220446049250313e-16 * max(abs(t), 1e-300):  # NaN-safe
            status = STATUS_FAILED
            break
        last = False
        if t + h >= t_end:
            h = t_end - t
            last = True
        for i in range(3):
            tmp[i] = y[i] + h * A21 * K[0, i]
        rhs(t + C2 * h, tmp, M, b, f_a, f_b, K[1])
        for i in range(3):
            tmp[i] = y[i] + h * (A31 * K[0, i] + A32 * K[1, i])
        rhs(t + C3 * h, tmp, M, b, f_a, f_b, K[2])
        for i in range(3):
            tmp[i] = y[i] + h * (A41 * K[0, i] + A42 * K[1, i] + A43 * K[2, i])
        rhs(t + C4 * h, tmp, M, b, f_a, f_b, K[3])
        for i in range(3):
            tmp[i] = y[i] + h * (A51 * K[0, i] + A52 * K[1, i] + A53 * K[2, i]
                                 + A54 * K[3, i])
        rhs(t + C5 * h, tmp, M, b, f_a, f_b, K[4])
        for i in range(3):
            tmp[i] = y[i] + h * (A61 * K[0, i] + A62 * K[1, i] + A63 * K[2, i]
                                 + A64 * K[3, i] + A65 * K[4, i])
        tn = t + h
        if last:
            tn = t_end
        rhs(tn, tmp, M, b, f_a, f_b, K[5])
        for i in range(3):
            ynew[i] = y[i] + h * (B1 * K[0, i] + B3 * K[2, i] + B4 * K[3, i]
                                  + B5 * K[4, i] + B6 * K[5, i])
        rhs(tn, ynew, M, b, f_a, f_b, K[6])
        err = 0.0
        for i in range(3):
            e = h * (E1 * K[0, i] + E3 * K[2, i] + E4 * K[3, i] + E5 * K[4, i]
                     + E6 * K[5, i] + E7 * K[6, i])
            sc = atol + rtol * max(abs(y[i]), abs(ynew[i]))
            err += (e / sc) ** 2
        err = math.sqrt(err / 3)
        if not err <= 1.0:  # also catches NaN
            rejected += 1
            h *= max(0.2, 0.9 * err ** -0.2)
            continue
        accepted += 1
        for i in range(3):
            for j in range(4):
                acc = 0.0
                for k in range(7):
                    acc += K[k, i] * P[k, j]
                Q[i, j] = acc
        hit = False
        if ev_kind != EVENT_NONE:
            # scan the step at quarter points; between samples the event function
            # can only dip below zero if the path is longer than the sum of the
            # endpoint values (g is 1-Lipschitz in the state)
            s_lo = 0.0
            s_hi = -1.0
            g_min = 1e300
            s_min = 0.0
            s_a = 0.0
            g_a = g_prev
            xa0 = y[0]
            xa1 = y[1]
            xa2 = y[2]
            for q in range(1, 5):
                s = 0.25 * q
                if q == 4:
                    for i in range(3):
                        tmp[i] = ynew[i]
                else:
                    _dense(y, h, Q, s, tmp)
                g = _event_g(tmp, ev_kind, center, level, eps, side)
                if g <= 0.0:
                    s_lo = s_a
                    s_hi = s
                    break
                d = math.sqrt((tmp[0] - xa0) ** 2 + (tmp[1] - xa1) ** 2 + (tmp[2] - xa2) ** 2)
                xa0 = tmp[0]
                xa1 = tmp[1]
                xa2 = tmp[2]
                if g_a + g <= 2.0 * d + GRAZE_TOL:
                    s_m, g_m = _golden_min(y, h, Q, s_a, s, ev_kind, center, level, eps,
                                           side, max(1e-3 * time_tol, 1e-14 * h), tmp)
                    if g_m <= 0.0:
                        s_lo = s_a
                        s_hi = s_m
                        break
                    if g_m < g_min:
                        g_min = g_m
                        s_min = s_m
                if g < g_min:
                    g_min = g
                    s_min = s
                s_a = s
                g_a = g
            if s_hi < 0.0 and g_min < GRAZE_TOL:
                hit = True
                t_hit = t + s_min * h
            elif s_hi > 0.0:
                hit = True
                # bisect down to time_tol, or to float resolution when time_tol is 0
                while (s_hi - s_lo) * h > time_tol:
                    s_mid = 0.5 * (s_lo + s_hi)
                    if s_mid <= s_lo or s_mid >= s_hi:
                        break
                    _dense(y, h, Q, s_mid, tmp)
                    if _event_g(tmp, ev_kind, center, level, eps, side) <= 0.0:
                        s_hi = s_mid
                    else:
                        s_lo = s_mid
                s_min = s_hi
                t_hit = t + s_hi * h
            else:
                g_prev = g_a
            if hit:
                _dense(y, h, Q, s_min, ynew)
                tn = t_hit
                status = STATUS_HIT
        if record or hit or last:
            if n >= cap:
                cap *= 2
                ts2 = np.empty(cap)
                ys2 = np.empty((cap, 3))
                hs2 = np.empty(cap)
                Qs2 = np.empty((cap, 3, 4))
                ts2[:n] = ts[:n]
                ys2[:n] = ys[:n]
                hs2[:n - 1] = hs[:n - 1]
                Qs2[:n - 1] = Qs[:n - 1]
                ts, ys, hs, Qs = ts2, ys2, hs2, Qs2
            if not record:
                n = 1
                # keep only the starting point and the final segment
                ts[0] = t
                ys[0, :] = y
            ts[n] = tn
            ys[n, :] = ynew
            hs[n - 1] = h
            Qs[n - 1] = Q
            n += 1
        t = tn
        for i in range(3):
            y[i] = ynew[i]
            K[0, i] = K[6, i]
        if hit:
            break
        fac = 10.0 if err == 0.0 else min(10.0, 0.9 * err ** -0.2)
        h = min(h * fac, max_step)
    return (ts[:n], ys[:n], hs[:n - 1], Qs[:n - 1], accepted, rejected, status, t_hit)




# same loop, uncompiled, with the callable right-hand side bound in place of _rhs
_core_python = types.FunctionType(_core.py_func.__code__,
                                  dict(_core.py_func.__globals__, _rhs=_rhs_callable),
                                  "_core_python")


def integrate(M, b, field, y0, t_end, *, rtol=1e-9, atol=1e-12, max_step=np.inf,
              first_step=0.0, event=EVENT_NONE, center=None, level=0.0, eps=0.0,
              time_tol=0.0, max_steps=10_000_000, record=True):
    """Run the integrator.

    ``field`` is either a pair ``(fp, coeffs)`` for the compiled packed field or
    any callable ``t -> h``. Returns the raw tuple
    ``(ts, ys, hs, Qs, accepted, rejected, status, t_hit)``.
    """
    y0 = np.ascontiguousarray(y0, dtype=float)
    center = np.zeros(3) if center is None else np.ascontiguousarray(center, dtype=float)
    max_step = float(min(max_step, 1e300))
    if isinstance(field, tuple):
        fp, coeffs = field
        return _core(np.ascontiguousarray(M, dtype=float),
                     np.ascontiguousarray(b, dtype=float),
                     np.ascontiguousarray(fp, dtype=float),
                     np.ascontiguousarray(coeffs, dtype=float),
                     y0, float(t_end), float(rtol), float(atol), max_step,
                     float(first_step), int(event), center, float(level),
                     float(eps), float(time_tol), int(max_steps), bool(record))

    def f(t):
        return np.asarray(field(t), dtype=float)

    return _core_python(np.asarray(M, dtype=float), np.asarray(b, dtype=float), f, None,
                        y0, float(t_end), float(rtol), float(atol), max_step,
                        float(first_step), int(event), center, float(level), float(eps),
                        float(time_tol), int(max_steps), bool(record))


def dense_eval(y0, h, Q, s) -> np.ndarray:
    out = np.empty(3)
    _dense(np.asarray(y0, dtype=float), float(h), np.asarray(Q, dtype=float), float(s), out)
    return out
