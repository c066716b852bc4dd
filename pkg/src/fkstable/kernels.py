"""Killed stable random walks: one compiled kernel and its numpy twin.

Both walk replicates ``rep_start .. rep_start+nrep-1`` of a Philox stream and
write per-replicate results into caller-owned output arrays, so a run is a
pure function of ``(seed, stream, replicate)`` whatever the chunking.

Per step a replicate consumes a fixed number of uniforms, independent of the
path, which keeps the numba loop and the vectorized numpy loop in lockstep.
"""
from __future__ import annotations

import math

import numpy as np

from ._backend import njit
from .philox import philox_block, philox_block_np, to_unit, to_unit_np

DIRECT = 0
SUBORDINATED = 1

KAPPA_ZERO = 0
KAPPA_POWER = 1
KAPPA_TABLE = 2

RATE_NONE = 0
RATE_BALL_EXIT = 1
RATE_INTERVAL = 2

ALIVE = 0
ORIGIN_KILLED = 1
KILL_STOPPED = 2

_SENTINEL = np.uint64(0xFFFFFFFFFFFFFFFF)


def uniforms_per_step(d: int, alpha: float, method: int) -> int:
    if method == DIRECT:
        if d != 1:
            raise ValueError("the direct sampler is one-dimensional")
        return 1 if alpha == 1.0 else 2
    return 2 + 2 * ((d + 1) // 2)


@njit
def _fill(buf, start, m, cache, key0, key1, rep):
    for k in range(m):
        i = start + k
        blk = np.uint64(i >> 2)
        if blk != cache[4]:
            w0, w1, w2, w3 = philox_block(blk, np.uint64(rep), np.uint64(0), np.uint64(0), key0, key1)
            cache[0] = w0
            cache[1] = w1
            cache[2] = w2
            cache[3] = w3
            cache[4] = blk
        buf[k] = to_unit(cache[i & 3])


@njit
def _stable_draw(buf, out, d, alpha, method):
    """Standard isotropic α-stable vector with E exp(i<ξ,Z>) = exp(-|ξ|^α)."""
    if method == 0:
        phi = math.pi * (buf[0] - 0.5)
        if alpha == 1.0:
            out[0] = math.tan(phi)
        else:
            w = -math.log(buf[1])
            out[0] = (math.sin(alpha * phi) / math.cos(phi) ** (1.0 / alpha)
                      * (math.cos((1.0 - alpha) * phi) / w) ** ((1.0 - alpha) / alpha))
        return
    rho = 0.5 * alpha
    u = math.pi * buf[0]
    e = -math.log(buf[1])
    s = (math.sin(rho * u) / math.sin(u) ** (1.0 / rho)
         * (math.sin((1.0 - rho) * u) / e) ** ((1.0 - rho) / rho))
    scale = math.sqrt(2.0 * s)
    k = 0
    j = 2
    while k < d:
        rad = math.sqrt(-2.0 * math.log(buf[j]))
        ang = 2.0 * math.pi * buf[j + 1]
        out[k] = scale * rad * math.cos(ang)
        if k + 1 < d:
            out[k + 1] = scale * rad * math.sin(ang)
        k += 2
        j += 2


@njit
def _pow(x, p):
    """x**p with cheap exact paths for the exponents that dominate the test matrix."""
    if p == 1.0:
        return x
    if p == 2.0:
        return x * x
    if p == 0.5:
        return math.sqrt(x)
    if p == -1.0:
        return 1.0 / x
    if p == -2.0:
        return 1.0 / (x * x)
    return x ** p


@njit
def _kappa(r, kind, b, beta, tab_lr, tab_lk, cap):
    if kind == 0:
        return 0.0
    if r == 0.0:
        return cap
    if kind == 1:
        v = b * _pow(r, -beta)
    else:
        x = math.log(r)
        n = tab_lr.shape[0]
        if x <= tab_lr[0]:
            y = tab_lk[0] + (tab_lk[1] - tab_lk[0]) / (tab_lr[1] - tab_lr[0]) * (x - tab_lr[0])
        elif x >= tab_lr[n - 1]:
            y = tab_lk[n - 1] + (tab_lk[n - 1] - tab_lk[n - 2]) / (tab_lr[n - 1] - tab_lr[n - 2]) * (x - tab_lr[n - 1])
        else:
            lo = 0
            hi = n - 1
            while hi - lo > 1:
                mid = (lo + hi) // 2
                if tab_lr[mid] <= x:
                    lo = mid
                else:
                    hi = mid
            f = (x - tab_lr[lo]) / (tab_lr[hi] - tab_lr[lo])
            y = tab_lk[lo] + f * (tab_lk[hi] - tab_lk[lo])
        v = math.exp(y)
    return v if v < cap else cap


@njit
def _rate(y0, rate_kind, c0, rho, lo, hi, a_const, alpha):
    """Jump intensity out of the ball (kind 1) or into [lo, hi] (kind 2), d = 1."""
    if rate_kind == 1:
        z = y0 - c0
        return a_const / alpha * ((rho - z) ** (-alpha) + (rho + z) ** (-alpha))
    if y0 < lo:
        return a_const / alpha * ((lo - y0) ** (-alpha) - (hi - y0) ** (-alpha))
    if y0 > hi:
        return a_const / alpha * ((y0 - hi) ** (-alpha) - (y0 - lo) ** (-alpha))
    return 0.0


@njit
def walk_numba(x0, nsteps, dt, alpha, method, kind, b, beta, tab_lr, tab_lk, cap,
               origin_rule, center, radius, stop_at_exit, kill_stop,
               rate_kind, lo, hi, a_const, key0, key1, rep_start, nrep,
               end_pos, logw, exit_step, exit_pos, logw_exit, occ, comp, count, status):
    d = x0.shape[0]
    m = 1 if (method == 0 and alpha == 1.0) else (2 if method == 0 else 2 + 2 * ((d + 1) // 2))
    buf = np.empty(m + 1)
    z = np.empty(d)
    y = np.empty(d)
    cache = np.empty(5, dtype=np.uint64)
    h = dt ** (1.0 / alpha)
    r2max = radius * radius
    use_ball = radius < np.inf
    for i in range(nrep):
        rep = rep_start + i
        cache[4] = _SENTINEL
        for k in range(d):
            y[k] = x0[k]
        r = 0.0
        for k in range(d):
            r += y[k] * y[k]
        kap = _kappa(math.sqrt(r), kind, b, beta, tab_lr, tab_lk, cap)
        big_k = 0.0
        o = 0.0
        cm = 0.0
        cnt = 0.0
        st = 0
        ex = -1
        for j in range(nsteps):
            wk = math.exp(-big_k)
            if ex < 0:
                o += dt * wk
                if rate_kind == 1:
                    cm += dt * wk * _rate(y[0], 1, center[0], radius, lo, hi, a_const, alpha)
            if rate_kind == 2:
                cm += dt * wk * _rate(y[0], 2, 0.0, 0.0, lo, hi, a_const, alpha)
            _fill(buf, j * m, m, cache, key0, key1, rep)
            _stable_draw(buf, z, d, alpha, method)
            prev0 = y[0]
            r = 0.0
            for k in range(d):
                y[k] += h * z[k]
                r += y[k] * y[k]
            if rate_kind == 2 and (prev0 < lo or prev0 > hi) and lo <= y[0] <= hi:
                cnt += wk
            knew = _kappa(math.sqrt(r), kind, b, beta, tab_lr, tab_lk, cap)
            big_k += 0.5 * dt * (kap + knew)
            kap = knew
            if origin_rule and prev0 * y[0] <= 0.0 and abs(prev0) < h and abs(y[0]) < h:
                st = 1
                big_k = np.inf
            if use_ball and ex < 0:
                q = 0.0
                for k in range(d):
                    q += (y[k] - center[k]) ** 2
                if q >= r2max:
                    ex = j + 1
                    for k in range(d):
                        exit_pos[i, k] = y[k]
                    logw_exit[i] = big_k
                    if stop_at_exit:
                        break
            if st == 1:
                break
            if big_k > kill_stop:
                st = 2
                break
        for k in range(d):
            end_pos[i, k] = y[k]
        logw[i] = big_k
        exit_step[i] = ex
        occ[i] = o
        comp[i] = cm
        count[i] = cnt
        status[i] = st


@njit
def walk1d_numba(x0, nsteps, dt, alpha, method, kind, b, beta, tab_lr, tab_lk, cap,
                 origin_rule, center, radius, stop_at_exit, kill_stop,
                 rate_kind, lo, hi, a_const, key0, key1, rep_start, nrep,
                 end_pos, logw, exit_step, exit_pos, logw_exit, occ, comp, count, status):
    """Scalar fast path of :func:`walk_numba` for d = 1 and the direct sampler.

    Consumes uniforms in exactly the same order, so results are identical.
    """
    cauchy = alpha == 1.0
    h = dt ** (1.0 / alpha)
    inv_a = 1.0 / alpha
    expo = (1.0 - alpha) / alpha
    c0 = center[0]
    use_ball = radius < np.inf
    has_kappa = kind != 0
    track = use_ball or rate_kind != 0
    for i in range(nrep):
        rep = np.uint64(rep_start + i)
        y = x0[0]
        kap = _kappa(abs(y), kind, b, beta, tab_lr, tab_lk, cap) if has_kappa else 0.0
        big_k = 0.0
        o = 0.0
        cm = 0.0
        cnt = 0.0
        st = 0
        ex = -1
        w0 = w1 = w2 = w3 = np.uint64(0)
        for j in range(nsteps):
            wk = 1.0
            if track:
                wk = math.exp(-big_k)
                if ex < 0:
                    o += dt * wk
                    if rate_kind == 1:
                        cm += dt * wk * _rate(y, 1, c0, radius, lo, hi, a_const, alpha)
                if rate_kind == 2:
                    cm += dt * wk * _rate(y, 2, 0.0, 0.0, lo, hi, a_const, alpha)
            if cauchy:
                lane = j & 3
                if lane == 0:
                    w0, w1, w2, w3 = philox_block(np.uint64(j >> 2), rep, np.uint64(0), np.uint64(0), key0, key1)
                    wa = w0
                elif lane == 1:
                    wa = w1
                elif lane == 2:
                    wa = w2
                else:
                    wa = w3
                z = math.tan(math.pi * (to_unit(wa) - 0.5))
            else:
                if (j & 1) == 0:
                    w0, w1, w2, w3 = philox_block(np.uint64(j >> 1), rep, np.uint64(0), np.uint64(0), key0, key1)
                    wa = w0
                    wb = w1
                else:
                    wa = w2
                    wb = w3
                phi = math.pi * (to_unit(wa) - 0.5)
                w = -math.log(to_unit(wb))
                z = (math.sin(alpha * phi) / _pow(math.cos(phi), inv_a)
                     * _pow(math.cos((1.0 - alpha) * phi) / w, expo))
            prev = y
            y = y + h * z
            if rate_kind == 2 and (prev < lo or prev > hi) and lo <= y <= hi:
                cnt += wk
            if has_kappa:
                knew = _kappa(abs(y), kind, b, beta, tab_lr, tab_lk, cap)
                big_k += 0.5 * dt * (kap + knew)
                kap = knew
                if origin_rule and prev * y <= 0.0 and abs(prev) < h and abs(y) < h:
                    st = 1
                    big_k = np.inf
            if use_ball and ex < 0 and abs(y - c0) >= radius:
                ex = j + 1
                exit_pos[i, 0] = y
                logw_exit[i] = big_k
                if stop_at_exit:
                    break
            if st == 1:
                break
            if big_k > kill_stop:
                st = 2
                break
        end_pos[i, 0] = y
        logw[i] = big_k
        exit_step[i] = ex
        occ[i] = o
        comp[i] = cm
        count[i] = cnt
        status[i] = st


def _fill_np(start, m, cache, key0, key1, reps):
    out = np.empty((m, reps.size))
    for k in range(m):
        i = start + k
        blk = i >> 2
        if cache.get("blk") != blk:
            cache["words"] = philox_block_np(np.uint64(blk), reps, np.uint64(0), np.uint64(0), key0, key1)
            cache["blk"] = blk
        out[k] = to_unit_np(cache["words"][i & 3])
    return out


def _stable_draw_np(u, d, alpha, method):
    if method == DIRECT:
        phi = np.pi * (u[0] - 0.5)
        if alpha == 1.0:
            return np.tan(phi)[:, None]
        w = -np.log(u[1])
        z = (np.sin(alpha * phi) / np.cos(phi) ** (1.0 / alpha)
             * (np.cos((1.0 - alpha) * phi) / w) ** ((1.0 - alpha) / alpha))
        return z[:, None]
    rho = 0.5 * alpha
    uu = np.pi * u[0]
    e = -np.log(u[1])
    s = np.sin(rho * uu) / np.sin(uu) ** (1.0 / rho) * (np.sin((1.0 - rho) * uu) / e) ** ((1.0 - rho) / rho)
    scale = np.sqrt(2.0 * s)
    out = np.empty((u.shape[1], d))
    k, j = 0, 2
    while k < d:
        rad = np.sqrt(-2.0 * np.log(u[j]))
        ang = 2.0 * np.pi * u[j + 1]
        out[:, k] = scale * rad * np.cos(ang)
        if k + 1 < d:
            out[:, k + 1] = scale * rad * np.sin(ang)
        k += 2
        j += 2
    return out


def _kappa_np(r, kind, b, beta, tab_lr, tab_lk, cap):
    if kind == KAPPA_ZERO:
        return np.zeros_like(r)
    with np.errstate(divide="ignore", over="ignore"):
        if kind == KAPPA_POWER:
            v = b * r ** (-beta)
        else:
            x = np.log(r)
            s0 = (tab_lk[1] - tab_lk[0]) / (tab_lr[1] - tab_lr[0])
            s1 = (tab_lk[-1] - tab_lk[-2]) / (tab_lr[-1] - tab_lr[-2])
            yv = np.interp(x, tab_lr, tab_lk)
            yv = np.where(x < tab_lr[0], tab_lk[0] + s0 * (x - tab_lr[0]), yv)
            yv = np.where(x > tab_lr[-1], tab_lk[-1] + s1 * (x - tab_lr[-1]), yv)
            v = np.exp(yv)
    v = np.where(r == 0.0, cap, v)
    return np.minimum(v, cap)


def _rate_np(y0, rate_kind, c0, rho, lo, hi, a_const, alpha):
    with np.errstate(divide="ignore", invalid="ignore"):
        if rate_kind == RATE_BALL_EXIT:
            z = y0 - c0
            return a_const / alpha * ((rho - z) ** (-alpha) + (rho + z) ** (-alpha))
        left = a_const / alpha * ((lo - y0) ** (-alpha) - (hi - y0) ** (-alpha))
        right = a_const / alpha * ((y0 - hi) ** (-alpha) - (y0 - lo) ** (-alpha))
    return np.where(y0 < lo, left, np.where(y0 > hi, right, 0.0))


def walk_numpy(x0, nsteps, dt, alpha, method, kind, b, beta, tab_lr, tab_lk, cap,
               origin_rule, center, radius, stop_at_exit, kill_stop,
               rate_kind, lo, hi, a_const, key0, key1, rep_start, nrep,
               end_pos, logw, exit_step, exit_pos, logw_exit, occ, comp, count, status):
    d = x0.shape[0]
    m = uniforms_per_step(d, alpha, method)
    reps = np.arange(rep_start, rep_start + nrep, dtype=np.uint64)
    y = np.tile(np.asarray(x0, dtype=float), (nrep, 1))
    kap = _kappa_np(np.sqrt(np.sum(y * y, axis=1)), kind, b, beta, tab_lr, tab_lk, cap)
    big_k = np.zeros(nrep)
    o = np.zeros(nrep)
    cm = np.zeros(nrep)
    cnt = np.zeros(nrep)
    st = np.zeros(nrep, dtype=np.int8)
    ex = np.full(nrep, -1, dtype=np.int64)
    active = np.ones(nrep, dtype=bool)
    h = dt ** (1.0 / alpha)
    use_ball = radius < np.inf
    cache = {}
    for j in range(nsteps):
        if not active.any():
            break
        wk = np.exp(-big_k)
        inside = active & (ex < 0)
        o = np.where(inside, o + dt * wk, o)
        if rate_kind == RATE_BALL_EXIT:
            cm = np.where(inside, cm + dt * wk * _rate_np(y[:, 0], 1, center[0], radius, lo, hi, a_const, alpha), cm)
        elif rate_kind == RATE_INTERVAL:
            cm = np.where(active, cm + dt * wk * _rate_np(y[:, 0], 2, 0.0, 0.0, lo, hi, a_const, alpha), cm)
        u = _fill_np(j * m, m, cache, key0, key1, reps)
        z = _stable_draw_np(u, d, alpha, method)
        prev0 = y[:, 0].copy()
        y_new = y + h * z
        y = np.where(active[:, None], y_new, y)
        if rate_kind == RATE_INTERVAL:
            hit = active & ((prev0 < lo) | (prev0 > hi)) & (y[:, 0] >= lo) & (y[:, 0] <= hi)
            cnt = np.where(hit, cnt + wk, cnt)
        knew = _kappa_np(np.sqrt(np.sum(y * y, axis=1)), kind, b, beta, tab_lr, tab_lk, cap)
        big_k = np.where(active, big_k + 0.5 * dt * (kap + knew), big_k)
        kap = np.where(active, knew, kap)
        if origin_rule:
            hit0 = active & (prev0 * y[:, 0] <= 0.0) & (np.abs(prev0) < h) & (np.abs(y[:, 0]) < h)
            st = np.where(hit0, np.int8(ORIGIN_KILLED), st)
            big_k = np.where(hit0, np.inf, big_k)
        else:
            hit0 = np.zeros(nrep, dtype=bool)
        if use_ball:
            out = active & (ex < 0) & (np.sum((y - center) ** 2, axis=1) >= radius * radius)
            ex = np.where(out, j + 1, ex)
            exit_pos[out] = y[out]
            logw_exit[out] = big_k[out]
            if stop_at_exit:
                active &= ~out
        active &= ~hit0
        stopped = active & (big_k > kill_stop)
        st = np.where(stopped, np.int8(KILL_STOPPED), st)
        active &= ~stopped
    end_pos[:] = y
    logw[:] = big_k
    exit_step[:] = ex
    occ[:] = o
    comp[:] = cm
    count[:] = cnt
    status[:] = st
