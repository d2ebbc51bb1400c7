"""Compiled numeric core: model ingredients, the threshold solve and the outer stepper.

Every ingredient is encoded in one flat float64 array (the "pack") so the
kernels stay monomorphic.  Layout constants below are the only coupling with
the Python side (:mod:`sddde.model`, :mod:`sddde.threshold`).
"""

import math

import numpy as np
from numba import njit

# scalar slots
AW, PW, MUW, KA, KP, KD, MU, X1, X2, BALL, KBIG, EPS = range(12)
G_KIND, G_BASE, G_RATE = 12, 13, 14
# profile slots: kind + 4 coefficients each
PROF_G1, PROF_G2, PROF_ALPHA, PROF_MUU = 16, 21, 26, 31
PACK_SIZE = 36

PROFILE_KINDS = {"const": 0, "affine": 1, "exp": 2, "tanh": 3}
G_KINDS = {"const": 0, "exp": 1, "division": 2, "rational": 3}

OK, HISTORY_EXHAUSTED, NOT_REACHED, NEGATIVE_STATE, NONFINITE, CAPACITY = 0, 1, 2, 3, 4, 5

# substeps shorter than this fraction of the step are not split off
MIN_SPLIT = 1e-6


@njit(cache=True)
def profile(P, off, y):
    kind = int(P[off])
    c0, c1, c2, c3 = P[off + 1], P[off + 2], P[off + 3], P[off + 4]
    if kind == 0:
        return c0
    if kind == 1:
        return c0 + c1 * (y - c2)
    if kind == 2:
        return c0 + c1 * math.exp(c2 * (y - c3))
    return c0 + c1 * math.tanh(c2 * (y - c3))


@njit(cache=True)
def profile_dy(P, off, y):
    kind = int(P[off])
    c1, c2, c3 = P[off + 2], P[off + 3], P[off + 4]
    if kind == 0:
        return 0.0
    if kind == 1:
        return c1
    if kind == 2:
        return c1 * c2 * math.exp(c2 * (y - c3))
    th = math.tanh(c2 * (y - c3))
    return c1 * c2 * (1.0 - th * th)


@njit(cache=True)
def g_eval(P, y, z):
    kind = int(P[G_KIND])
    base, rate = P[G_BASE], P[G_RATE]
    if kind == 0:
        return base
    if kind == 1:
        return base + math.exp(-rate * z) * profile(P, PROF_G1, y)
    if kind == 2:
        return base + 2.0 * (1.0 - profile(P, PROF_G1, y) / (1.0 + rate * z)) * profile(P, PROF_G2, y)
    return base + profile(P, PROF_G1, y) / (1.0 + rate * z)


@njit(cache=True)
def d1g_eval(P, y, z):
    kind = int(P[G_KIND])
    rate = P[G_RATE]
    if kind == 0:
        return 0.0
    if kind == 1:
        return math.exp(-rate * z) * profile_dy(P, PROF_G1, y)
    if kind == 2:
        den = 1.0 + rate * z
        a, da = profile(P, PROF_G1, y), profile_dy(P, PROF_G1, y)
        p, dp = profile(P, PROF_G2, y), profile_dy(P, PROF_G2, y)
        return 2.0 * (-da / den) * p + 2.0 * (1.0 - a / den) * dp
    return profile_dy(P, PROF_G1, y) / (1.0 + rate * z)


@njit(cache=True)
def d_eval(P, y, z):
    return profile(P, PROF_ALPHA, y) / (1.0 + P[KD] * z) - profile(P, PROF_MUU, y)


@njit(cache=True)
def q_eval(P, z):
    sw = P[AW] / (1.0 + P[KA] * z)
    dw = P[PW] / (1.0 + P[KP] * z)
    return (2.0 * sw - 1.0) * dw - P[MUW]


@njit(cache=True)
def gamma_eval(P, z):
    sw = P[AW] / (1.0 + P[KA] * z)
    dw = P[PW] / (1.0 + P[KP] * z)
    return 2.0 * (1.0 - sw) * dw


@njit(cache=True)
def interp(times, vals, n, t):
    """Linear interpolation on the first ``n`` nodes, clamped at both ends."""
    if t <= times[0]:
        return vals[0]
    if t >= times[n - 1]:
        return vals[n - 1]
    lo, hi = 0, n - 1
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if times[mid] <= t:
            lo = mid
        else:
            hi = mid
    dt = times[hi] - times[lo]
    if dt <= 0.0:
        return vals[hi]
    return vals[lo] + (vals[hi] - vals[lo]) * (t - times[lo]) / dt


@njit(cache=True)
def hermite(y0, f0, y1, f1, H, u):
    u2 = u * u
    u3 = u2 * u
    return ((2.0 * u3 - 3.0 * u2 + 1.0) * y0 + (u3 - 2.0 * u2 + u) * H * f0
            + (-2.0 * u3 + 3.0 * u2) * y1 + (u3 - u2) * H * f1)


@njit(cache=True)
def hermite_slope(y0, f0, y1, f1, H, u):
    u2 = u * u
    return ((6.0 * u2 - 6.0 * u) * y0 + (3.0 * u2 - 4.0 * u + 1.0) * H * f0
            + (-6.0 * u2 + 6.0 * u) * y1 + (3.0 * u2 - 2.0 * u) * H * f1) / H


@njit(cache=True)
def _inner_rhs(P, y, z):
    return -g_eval(P, y, z), d_eval(P, y, z) - d1g_eval(P, y, z)


@njit(cache=True)
def threshold_core(P, times, vals, n, t_now, h, hmax, path, record):
    """Integrate y' = -g(y, psi(-s)), y(0) = x2, with the exponent accumulator.

    ``psi(-s)`` is the linear interpolant of ``vals`` at ``t_now - s``.  Steps
    never straddle a history node, so the right-hand side is smooth inside
    each step.  Returns ``(tau, exponent, residual, n_path, status)``.
    """
    x1 = P[X1]
    y = P[X2]
    E = 0.0
    fy, fE = _inner_rhs(P, y, vals[n - 1])
    npath = 0
    if record:
        path[0, 0] = 0.0
        path[0, 1] = y
        path[0, 2] = fy
        path[0, 3] = E
        npath = 1
    i = n - 1
    while True:
        if i == 0:
            return math.nan, math.nan, math.nan, npath, HISTORY_EXHAUSTED
        s_a = t_now - times[i]
        s_b = t_now - times[i - 1]
        clipped = False
        if s_b >= h:
            s_b = h
            clipped = True
        L = s_b - s_a
        if L > 0.0:
            z_a = vals[i]
            dz = (vals[i - 1] - vals[i]) / (times[i] - times[i - 1])
            m = int(math.ceil(L / hmax - 1e-9))
            if m < 1:
                m = 1
            hs = L / m
            for k in range(m):
                s0 = s_a + k * hs
                s1 = s_b if k == m - 1 else s_a + (k + 1) * hs
                H = s1 - s0
                zm = z_a + dz * (s0 + 0.5 * H - s_a)
                z1 = z_a + dz * (s1 - s_a)
                k2y, k2E = _inner_rhs(P, y + 0.5 * H * fy, zm)
                k3y, k3E = _inner_rhs(P, y + 0.5 * H * k2y, zm)
                k4y, k4E = _inner_rhs(P, y + H * k3y, z1)
                y1 = y + H * (fy + 2.0 * k2y + 2.0 * k3y + k4y) / 6.0
                E1 = E + H * (fE + 2.0 * k2E + 2.0 * k3E + k4E) / 6.0
                fy1, fE1 = _inner_rhs(P, y1, z1)
                if y1 <= x1:
                    # bracketed crossing: bisection, then Newton polish on the cubic
                    lo, hi = 0.0, 1.0
                    for _ in range(48):
                        mid = 0.5 * (lo + hi)
                        if hermite(y, fy, y1, fy1, H, mid) - x1 > 0.0:
                            lo = mid
                        else:
                            hi = mid
                    u = 0.5 * (lo + hi)
                    for _ in range(4):
                        r = hermite(y, fy, y1, fy1, H, u) - x1
                        sl = hermite_slope(y, fy, y1, fy1, H, u) * H
                        if sl == 0.0:
                            break
                        un = u - r / sl
                        if un < lo or un > hi:
                            break
                        u = un
                    tau = s0 + u * H
                    ytau = hermite(y, fy, y1, fy1, H, u)
                    Etau = hermite(E, fE, E1, fE1, H, u)
                    if record:
                        path[npath, 0] = tau
                        path[npath, 1] = ytau
                        path[npath, 2] = hermite_slope(y, fy, y1, fy1, H, u)
                        path[npath, 3] = Etau
                        npath += 1
                    return tau, Etau, abs(ytau - x1), npath, OK
                y, E, fy, fE = y1, E1, fy1, fE1
                if record:
                    path[npath, 0] = s1
                    path[npath, 1] = y
                    path[npath, 2] = fy
                    path[npath, 3] = E
                    npath += 1
        if clipped:
            return math.nan, math.nan, math.nan, npath, NOT_REACHED
        i -= 1


@njit(cache=True)
def rhs_core(P, times, W, V, n, h, hmax):
    """Right-hand side of the (w, v) system on the segment ending at ``times[n-1]``."""
    dummy = np.empty((1, 4))
    t_now = times[n - 1]
    w_cur, v_cur = W[n - 1], V[n - 1]
    tau, E, res, npath, st = threshold_core(P, times, V, n, t_now, h, hmax, dummy, False)
    if st != OK:
        return math.nan, math.nan, math.nan, st
    td = t_now - tau
    vd = interp(times, V, n, td)
    wd = interp(times, W, n, td)
    j = gamma_eval(P, vd) / g_eval(P, P[X1], vd) * g_eval(P, P[X2], v_cur) * wd * math.exp(E)
    return q_eval(P, v_cur) * w_cur, -P[MU] * v_cur + j, tau, OK


@njit(cache=True)
def _stage(P, times, W, V, i, t, H, c, w0, v0, wy, vy, ext, he, h, hmax):
    """Evaluate the RHS at stage time t + c*H with stage value (wy, vy).

    ext == 0: the in-step part of the segment is the chord to the stage node.
    ext == 1: Hermite nodes from the previous sweep at quarter steps, then the stage node.
    """
    j = i + 1
    if ext == 1:
        for q in range(1, 4):
            u = 0.25 * q
            if u >= c - 1e-12:
                break
            times[j] = t + u * H
            W[j] = hermite(w0, he[0], he[1], he[2], H, u)
            V[j] = hermite(v0, he[3], he[4], he[5], H, u)
            j += 1
    times[j] = t + c * H
    W[j] = wy
    V[j] = vy
    return rhs_core(P, times, W, V, j + 1, h, hmax)


@njit(cache=True)
def _sweep(P, times, W, V, i, t, H, w0, v0, fw0, fv0, ext, he, h, hmax):
    k2w, k2v, _, st = _stage(P, times, W, V, i, t, H, 0.5, w0, v0,
                             w0 + 0.5 * H * fw0, v0 + 0.5 * H * fv0, ext, he, h, hmax)
    if st != OK:
        return math.nan, math.nan, st
    k3w, k3v, _, st = _stage(P, times, W, V, i, t, H, 0.5, w0, v0,
                             w0 + 0.5 * H * k2w, v0 + 0.5 * H * k2v, ext, he, h, hmax)
    if st != OK:
        return math.nan, math.nan, st
    k4w, k4v, _, st = _stage(P, times, W, V, i, t, H, 1.0, w0, v0,
                             w0 + H * k3w, v0 + H * k3v, ext, he, h, hmax)
    if st != OK:
        return math.nan, math.nan, st
    w1 = w0 + H * (fw0 + 2.0 * k2w + 2.0 * k3w + k4w) / 6.0
    v1 = v0 + H * (fv0 + 2.0 * k2v + 2.0 * k3v + k4v) / 6.0
    return w1, v1, OK


@njit(cache=True)
def _rk_step(P, times, W, V, i, t, t_next, w0, v0, fw0, fv0, passes, he, h, hmax):
    """One RK4 step with corrector sweeps; leaves the bare end node at i + 1.

    Returns ``(w1, v1, fw1, fv1, tau1, status)`` where the end slope and delay
    are evaluated with only the end node in the current step.
    """
    H = t_next - t
    w1, v1, st = _sweep(P, times, W, V, i, t, H, w0, v0, fw0, fv0, 0, he, h, hmax)
    if st != OK:
        return w1, v1, math.nan, math.nan, math.nan, st
    for _ in range(passes):
        times[i + 1] = t_next
        W[i + 1] = w1
        V[i + 1] = v1
        fw1, fv1, _, st = rhs_core(P, times, W, V, i + 2, h, hmax)
        if st != OK:
            return w1, v1, math.nan, math.nan, math.nan, st
        he[0], he[1], he[2] = fw0, w1, fw1
        he[3], he[4], he[5] = fv0, v1, fv1
        w1, v1, st = _sweep(P, times, W, V, i, t, H, w0, v0, fw0, fv0, 1, he, h, hmax)
        if st != OK:
            return w1, v1, math.nan, math.nan, math.nan, st
    if not (math.isfinite(w1) and math.isfinite(v1)):
        return w1, v1, math.nan, math.nan, math.nan, NONFINITE
    times[i + 1] = t_next
    W[i + 1] = w1
    V[i + 1] = v1
    fw1, fv1, tau1, st = rhs_core(P, times, W, V, i + 2, h, hmax)
    return w1, v1, fw1, fv1, tau1, st


@njit(cache=True)
def _crossing(P, times, W, V, i, t, H, w0, v0, fw0, fv0, w1, v1, fw1, fv1, g0, g1, b, he, h, hmax):
    """Fraction theta of the step where t + theta H - tau = b (Illinois iteration).

    The in-step state is the trial step's Hermite cubic.
    """
    he[0], he[1], he[2] = fw0, w1, fw1
    he[3], he[4], he[5] = fv0, v1, fv1
    a, fa, c, fc = 0.0, g0, 1.0, g1
    side = 0
    th = 0.5
    for _ in range(60):
        th = a - fa * (c - a) / (fc - fa)
        if not (a < th < c):
            th = 0.5 * (a + c)
        wy = hermite(w0, fw0, w1, fw1, H, th)
        vy = hermite(v0, fv0, v1, fv1, H, th)
        _, _, tau, st = _stage(P, times, W, V, i, t, H, th, w0, v0, wy, vy, 1, he, h, hmax)
        if st != OK:
            return th, st
        f = t + th * H - tau - b
        if abs(f) <= 1e-15 * (1.0 + abs(b)) or c - a <= 1e-14:
            break
        if (f > 0.0) == (fc > 0.0):
            c, fc = th, f
            if side == 1:
                fa *= 0.5
            side = 1
        else:
            a, fa = th, f
            if side == -1:
                fc *= 0.5
            side = -1
    return th, OK


@njit(cache=True)
def _next_break(breaks, td0, td1, tol):
    """The break nearest to td0 strictly between td0 and td1, or NaN."""
    best = math.nan
    for b in breaks:
        if td1 > td0:
            if td0 + tol < b < td1 and not b >= best:
                best = b
        elif td1 < td0:
            if td1 < b < td0 - tol and not b <= best:
                best = b
    return best


@njit(cache=True, nogil=True)
def integrate_core(P, times, W, V, DW, DV, TAU, n0, nsteps, dt, T, passes, sub, breaks, h, hmax, pos_tol):
    """Fixed-step RK4 method of steps with breakpoint splitting.

    Arrays hold the initial history in ``[0, n0)`` (last node at t = 0).
    Each accepted step stores ``sub - 1`` interior Hermite nodes besides its
    end node, so the linear node interpolant used for delayed values is finer
    than the step; interior nodes carry the Hermite slope and a NaN delay.
    When the delayed argument t - tau crosses one of ``breaks`` inside a
    step, the step is split at the crossing so that no RK stage straddles a
    kink of the history.  Returns ``(status, last_index)``.
    """
    he = np.empty(6)
    cap = times.shape[0]
    i = n0 - 1
    fw0, fv0, tau0, st = rhs_core(P, times, W, V, i + 1, h, hmax)
    if st != OK:
        return st, i
    DW[i], DV[i], TAU[i] = fw0, fv0, tau0
    for k in range(nsteps):
        t_target = T if k == nsteps - 1 else (k + 1) * dt
        while True:
            if i + sub + 6 >= cap:
                return CAPACITY, i
            t = times[i]
            H = t_target - t
            w0, v0 = W[i], V[i]
            w1, v1, fw1, fv1, tau1, st = _rk_step(P, times, W, V, i, t, t_target, w0, v0, fw0, fv0,
                                                  passes, he, h, hmax)
            if st != OK:
                return st, i
            t_end = t_target
            td0 = t - TAU[i]
            td1 = t_target - tau1
            b = _next_break(breaks, td0, td1, 1e-9 * H)
            if not math.isnan(b):
                th, st = _crossing(P, times, W, V, i, t, H, w0, v0, fw0, fv0, w1, v1, fw1, fv1,
                                   td0 - b, td1 - b, b, he, h, hmax)
                if st != OK:
                    return st, i
                if MIN_SPLIT < th < 1.0 - MIN_SPLIT:
                    t_end = t + th * H
                    w1, v1, fw1, fv1, tau1, st = _rk_step(P, times, W, V, i, t, t_end, w0, v0, fw0, fv0,
                                                          passes, he, h, hmax)
                    if st != OK:
                        return st, i
            # interior nodes from the provisional end slope, then the final end slope
            Hs = t_end - t
            for m in range(1, sub):
                u = m / sub
                j = i + m
                times[j] = t + u * Hs
                W[j] = hermite(w0, fw0, w1, fw1, Hs, u)
                V[j] = hermite(v0, fv0, v1, fv1, Hs, u)
                DW[j] = hermite_slope(w0, fw0, w1, fw1, Hs, u)
                DV[j] = hermite_slope(v0, fv0, v1, fv1, Hs, u)
                TAU[j] = math.nan
                if W[j] < -pos_tol or V[j] < -pos_tol:
                    return NEGATIVE_STATE, j
            i += sub
            times[i] = t_end
            W[i] = w1
            V[i] = v1
            if w1 < -pos_tol or v1 < -pos_tol:
                return NEGATIVE_STATE, i
            if sub > 1:
                fw1, fv1, tau1, st = rhs_core(P, times, W, V, i + 1, h, hmax)
                if st != OK:
                    return st, i
            fw0, fv0 = fw1, fv1
            DW[i], DV[i], TAU[i] = fw1, fv1, tau1
            if t_end == t_target:
                break
    return OK, i


@njit(cache=True)
def grid_eval(P, which, Y, Z):
    """Evaluate an ingredient on the tensor grid Y x Z (which: 0 g, 1 D1g, 2 d)."""
    out = np.empty((Y.size, Z.size))
    for a in range(Y.size):
        for b in range(Z.size):
            if which == 0:
                out[a, b] = g_eval(P, Y[a], Z[b])
            elif which == 1:
                out[a, b] = d1g_eval(P, Y[a], Z[b])
            else:
                out[a, b] = d_eval(P, Y[a], Z[b])
    return out


@njit(cache=True)
def z_eval(P, which, Z):
    """Evaluate q (which=0) or gamma (which=1) on an array of z."""
    out = np.empty(Z.size)
    for b in range(Z.size):
        out[b] = q_eval(P, Z[b]) if which == 0 else gamma_eval(P, Z[b])
    return out
