"""Compiled inner loops.

Everything here works on the flat float64 encoding of an intensity model
produced by :meth:`tworel.intensity.IntensityModel.arrays`:

    [0:2]     family kind of the first / second element's rate
    [2:7]     parameters of rate 0 (slot 4 is a multiplicative scale)
    [7:12]    parameters of rate 1
    [12:16]   table edge counts nx0, ny0, nx1, ny1
    [16:22]   offsets of x-edges, y-edges and cell values, rate 0 then rate 1
    [22:]     edge and cell data

A single flat vector keeps call overhead low: passing a tuple of arrays
between compiled functions costs a refcount pair per array per call.

Random numbers come from xoshiro256** seeded per replication through the
splitmix64 finalizer, so replication ``r`` of master seed ``s`` is the same
stream on every machine and in any execution order.
"""

from __future__ import annotations

import numpy as np
from numba import njit

_JIT = dict(cache=True, nogil=True)

RNG_VERSION = "xoshiro256starstar-splitmix64/1"

KIND_CONSTANT = 0
KIND_RECIPROCAL = 1
KIND_AGING = 2
KIND_CROSS_STEP = 3
KIND_TABLE = 4

METHOD_INVERSION = 0
METHOD_THINNING = 1

H_CONSTANT = 0
H_LYAPUNOV = 1
H_COORD_X = 2
H_COORD_Y = 3

HAZARD_TOL = 1e-10
TIME_TOL = 1e-10
MAX_DEPTH = 48

STATUS_OK = 0
STATUS_CAPPED = 1
STATUS_RUNAWAY = 2

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_NO_H = np.zeros(5)


# ---------------------------------------------------------------- random streams


@njit(**_JIT)
def mix64(z):
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


@njit(**_JIT)
def stream_state(seed, index):
    """xoshiro256** state for replication ``index`` of master ``seed``."""
    key = mix64(mix64(np.uint64(seed)) ^ (np.uint64(index) * _GOLDEN))
    s = np.empty(4, dtype=np.uint64)
    for k in range(4):
        key = key + _GOLDEN
        s[k] = mix64(key)
    return s


@njit(**_JIT)
def _rotl(x, k):
    return (x << np.uint64(k)) | (x >> np.uint64(64 - k))


@njit(**_JIT)
def next_u64(s):
    result = _rotl(s[1] * np.uint64(5), 7) * np.uint64(9)
    t = s[1] << np.uint64(17)
    s[2] ^= s[0]
    s[3] ^= s[1]
    s[1] ^= s[2]
    s[0] ^= s[3]
    s[2] ^= t
    s[3] = _rotl(s[3], 45)
    return result


@njit(**_JIT)
def uniform(s):
    """Uniform on [0, 1) with 53 random bits."""
    return np.float64(next_u64(s) >> np.uint64(11)) * (1.0 / 9007199254740992.0)


@njit(**_JIT)
def exponential(s):
    """Standard exponential; strictly positive."""
    u = (np.float64(next_u64(s) >> np.uint64(12)) + 0.5) * (1.0 / 4503599627370496.0)
    return -np.log(u)


# ---------------------------------------------------------------- intensities


@njit(inline="always", **_JIT)
def rate(M, r, i, x, j, y, xm, ym):
    """Rate ``r`` (0 = first element, 1 = second) at ``(i, x; j, y)``.

    The discontinuous parts (step indicator, table cell) are read at
    ``(xm, ym)``; pass ``xm=x, ym=y`` for a plain point evaluation. Quadrature
    passes the midpoint of a breakpoint-free piece so that the piece endpoints
    see the same branch as its interior.
    """
    kind = int(M[r])
    base = 2 + 5 * r
    if r == 0:
        own = x
        other_m = ym
    else:
        own = y
        other_m = xm
    if kind == KIND_CONSTANT:
        v = M[base]
    elif kind == KIND_RECIPROCAL:
        v = M[base] + M[base + 1] / (1.0 + own)
    elif kind == KIND_AGING:
        v = M[base + 1] - (M[base + 1] - M[base]) / (1.0 + own)
    elif kind == KIND_CROSS_STEP:
        v = M[base] / (1.0 + own)
        if other_m > M[base + 2]:
            v += M[base + 1]
    else:
        nx = int(M[12 + 2 * r])
        ny = int(M[13 + 2 * r])
        ox = int(M[16 + 3 * r])
        oy = int(M[17 + 3 * r])
        ix = 0
        while ix < nx and M[ox + ix] <= xm:
            ix += 1
        iy = 0
        while iy < ny and M[oy + iy] <= ym:
            iy += 1
        v = M[int(M[18 + 3 * r]) + ((2 * i + j) * (nx + 1) + ix) * (ny + 1) + iy]
    return v * M[base + 4]


@njit(**_JIT)
def breakpoints(M, x, y, horizon):
    """Sorted distinct ``s`` in (0, horizon) where the rates may jump along the flow."""
    out = np.empty(2 + int(M[12] + M[13] + M[14] + M[15]))
    n = 0
    for r in range(2):
        kind = int(M[r])
        if kind == KIND_CROSS_STEP:
            other = y if r == 0 else x
            s = M[2 + 5 * r + 2] - other
            if 0.0 < s < horizon:
                out[n] = s
                n += 1
        elif kind == KIND_TABLE:
            ox = int(M[16 + 3 * r])
            for k in range(int(M[12 + 2 * r])):
                s = M[ox + k] - x
                if 0.0 < s < horizon:
                    out[n] = s
                    n += 1
            oy = int(M[17 + 3 * r])
            for k in range(int(M[13 + 2 * r])):
                s = M[oy + k] - y
                if 0.0 < s < horizon:
                    out[n] = s
                    n += 1
    pts = np.sort(out[:n])
    keep = np.empty(n)
    m = 0
    for k in range(n):
        if m == 0 or pts[k] > keep[m - 1]:
            keep[m] = pts[k]
            m += 1
    return keep[:m]


# ---------------------------------------------------------------- test functions


@njit(**_JIT)
def h_value(hp, t, x, y):
    kind = int(hp[0])
    if kind == H_CONSTANT:
        return hp[1]
    if kind == H_LYAPUNOV:
        v = (1.0 + x + y) ** hp[1]
        if hp[2] != 0.0:
            v *= (1.0 + t) ** hp[2]
        return v
    if kind == H_COORD_X:
        return x
    return y


@njit(inline="always", **_JIT)
def h_generator(hp, lam, mu, t, x, y):
    """Extended generator (plus time derivative) of a built-in test function."""
    kind = int(hp[0])
    if kind == H_CONSTANT:
        return 0.0
    if kind == H_LYAPUNOV:
        m = hp[1]
        k = hp[2]
        v = (1.0 + x + y) ** m
        lv = lam * ((1.0 + y) ** m - v) + mu * ((1.0 + x) ** m - v)
        lv += 2.0 * m * (1.0 + x + y) ** (m - 1.0)
        if k == 0.0:
            return lv
        return (1.0 + t) ** k * lv + k * (1.0 + t) ** (k - 1.0) * v
    if kind == H_COORD_X:
        return -lam * x + 1.0
    return -mu * y + 1.0


# ---------------------------------------------------------------- quadrature


@njit(inline="always", **_JIT)
def _integrand(what, M, i, x, j, y, s, xm, ym, hp):
    xs = x + s
    ys = y + s
    lam = rate(M, 0, i, xs, j, ys, xm, ym)
    mu = rate(M, 1, i, xs, j, ys, xm, ym)
    if what == 0:
        return lam + mu
    return h_generator(hp, lam, mu, hp[4] + s, xs, ys)


@njit(**_JIT)
def simpson(what, M, i, x, j, y, a, b, xm, ym, hp, tol):
    """Adaptive Simpson of the selected integrand along the flow over [a, b].

    ``what`` = 0 integrates the total rate, 1 the generator of the test function
    ``hp``. [a, b] must not straddle a breakpoint. Returns (value, converged).
    """
    if not b > a:
        return 0.0, True
    size = MAX_DEPTH + 4
    work = np.empty((7, size))
    sa = work[0]
    sb = work[1]
    sfa = work[2]
    sfc = work[3]
    sfb = work[4]
    sw = work[5]
    st = work[6]
    sd = np.empty(size, dtype=np.int64)
    fa = _integrand(what, M, i, x, j, y, a, xm, ym, hp)
    fb = _integrand(what, M, i, x, j, y, b, xm, ym, hp)
    c = 0.5 * (a + b)
    fc = _integrand(what, M, i, x, j, y, c, xm, ym, hp)
    sa[0] = a
    sb[0] = b
    sfa[0] = fa
    sfc[0] = fc
    sfb[0] = fb
    sw[0] = (b - a) * (fa + 4.0 * fc + fb) / 6.0
    st[0] = tol
    sd[0] = 0
    sp = 1
    total = 0.0
    ok = True
    while sp > 0:
        sp -= 1
        a = sa[sp]
        b = sb[sp]
        fa = sfa[sp]
        fc = sfc[sp]
        fb = sfb[sp]
        whole = sw[sp]
        t = st[sp]
        depth = sd[sp]
        c = 0.5 * (a + b)
        d = 0.5 * (a + c)
        e = 0.5 * (c + b)
        fd = _integrand(what, M, i, x, j, y, d, xm, ym, hp)
        fe = _integrand(what, M, i, x, j, y, e, xm, ym, hp)
        left = (c - a) * (fa + 4.0 * fd + fc) / 6.0
        right = (b - c) * (fc + 4.0 * fe + fb) / 6.0
        delta = left + right - whole
        # floating-point floor: no point asking for more than ~1e-15 relative
        limit = 15.0 * max(t, 4e-16 * abs(left + right))
        if abs(delta) <= limit or depth >= MAX_DEPTH:
            if abs(delta) > limit:
                ok = False
            total += left + right + delta / 15.0
        else:
            sa[sp] = c
            sb[sp] = b
            sfa[sp] = fc
            sfc[sp] = fe
            sfb[sp] = fb
            sw[sp] = right
            st[sp] = 0.5 * t
            sd[sp] = depth + 1
            sp += 1
            sa[sp] = a
            sb[sp] = c
            sfa[sp] = fa
            sfc[sp] = fd
            sfb[sp] = fc
            sw[sp] = left
            st[sp] = 0.5 * t
            sd[sp] = depth + 1
            sp += 1
    return total, ok


@njit(**_JIT)
def integrate_flow(what, M, i, x, j, y, t, hp, tol):
    """Integral over [0, t] along the flow, split at the model breakpoints."""
    if not t > 0.0:
        return 0.0, True
    bps = breakpoints(M, x, y, t)
    total = 0.0
    ok = True
    a = 0.0
    for k in range(bps.shape[0] + 1):
        b = bps[k] if k < bps.shape[0] else t
        mid = 0.5 * (a + b)
        val, good = simpson(what, M, i, x, j, y, a, b, x + mid, y + mid, hp, tol)
        total += val
        ok = ok and good
        a = b
    return total, ok


@njit(**_JIT)
def hazard(M, i, x, j, y, t):
    return integrate_flow(0, M, i, x, j, y, t, _NO_H, HAZARD_TOL)[0]


@njit(**_JIT)
def invert_hazard(M, i, x, j, y, e, cap):
    """Smallest T with hazard(T) = e, or inf when that T lies beyond ``cap``.

    Brackets by doubling steps inside breakpoint-free pieces, then narrows the
    bracket with Illinois-modified regula falsi (falling back to bisection).
    """
    if not e > 0.0:
        return 0.0
    bps = breakpoints(M, x, y, np.inf)
    nb = bps.shape[0]
    k = 0
    a = 0.0
    H = 0.0
    while True:
        seg_end = bps[k] if k < nb else np.inf
        mid = a + 1.0 if seg_end == np.inf else 0.5 * (a + seg_end)
        xm = x + mid
        ym = y + mid
        lam_a = _integrand(0, M, i, x, j, y, a, xm, ym, _NO_H)
        h = (e - H) / lam_a
        while True:
            if a >= cap:
                return np.inf
            b = min(a + h, seg_end, cap)
            dH = simpson(0, M, i, x, j, y, a, b, xm, ym, _NO_H, HAZARD_TOL)[0]
            if H + dH >= e:
                return _solve_bracket(M, i, x, j, y, a, b, H - e, H + dH - e, xm, ym)
            H += dH
            a = b
            if a >= seg_end:
                break
            h *= 2.0
        k += 1


@njit(**_JIT)
def _solve_bracket(M, i, x, j, y, lo, hi, glo, ghi, xm, ym):
    # g(s) = hazard(s) - e is increasing with g(lo) < 0 <= g(hi); every new
    # value is integrated from the nearer bracket end, so work shrinks with
    # the bracket.
    side = 0
    for it in range(200):
        if hi - lo <= TIME_TOL:
            break
        T = hi - ghi * (hi - lo) / (ghi - glo)
        if not (lo < T < hi) or it % 8 == 7:
            T = 0.5 * (lo + hi)
        if T - lo <= hi - T:
            g = glo + simpson(0, M, i, x, j, y, lo, T, xm, ym, _NO_H, HAZARD_TOL)[0]
        else:
            g = ghi - simpson(0, M, i, x, j, y, T, hi, xm, ym, _NO_H, HAZARD_TOL)[0]
        if abs(g) <= 1e-14:
            return T
        if g < 0.0:
            lo = T
            glo = g
            if side == -1:
                ghi *= 0.5
            side = -1
        else:
            hi = T
            ghi = g
            if side == 1:
                glo *= 0.5
            side = 1
    return 0.5 * (lo + hi)


# ---------------------------------------------------------------- single events


@njit(**_JIT)
def event_inversion(M, i, x, j, y, rng, cap):
    e = exponential(rng)
    T = invert_hazard(M, i, x, j, y, e, cap)
    if T == np.inf or T > cap:
        return np.inf, -1
    xs = x + T
    ys = y + T
    lam = rate(M, 0, i, xs, j, ys, xs, ys)
    mu = rate(M, 1, i, xs, j, ys, xs, ys)
    if uniform(rng) * (lam + mu) < lam:
        return T, 0
    return T, 1


@njit(**_JIT)
def event_thinning(M, bound, i, x, j, y, rng, cap):
    """First event by thinning a homogeneous stream of rate ``bound`` (= 2 Gamma).

    One uniform per candidate splits [0, bound) into first-element,
    second-element and rejection slots of widths lambda, mu and the remainder.
    """
    s = 0.0
    while True:
        s += exponential(rng) / bound
        if s > cap:
            return np.inf, -1
        u = uniform(rng) * bound
        xs = x + s
        ys = y + s
        lam = rate(M, 0, i, xs, j, ys, xs, ys)
        if u < lam:
            return s, 0
        if u < lam + rate(M, 1, i, xs, j, ys, xs, ys):
            return s, 1


@njit(**_JIT)
def next_event(M, bound, method, i, x, j, y, rng, cap):
    if method == METHOD_INVERSION:
        return event_inversion(M, i, x, j, y, rng, cap)
    return event_thinning(M, bound, i, x, j, y, rng, cap)


# ---------------------------------------------------------------- paths


@njit(**_JIT)
def simulate_path(M, bound, method, i, x, j, y, horizon, rng, max_events):
    times = np.empty(64)
    comps = np.empty(64, dtype=np.int8)
    t = 0.0
    n = 0
    status = STATUS_OK
    while True:
        T, c = next_event(M, bound, method, i, x, j, y, rng, horizon - t)
        if c < 0:
            break
        if n >= max_events:
            status = STATUS_RUNAWAY
            break
        t += T
        if n == times.shape[0]:
            grown_t = np.empty(2 * n)
            grown_c = np.empty(2 * n, dtype=np.int8)
            grown_t[:n] = times
            grown_c[:n] = comps
            times = grown_t
            comps = grown_c
        times[n] = t
        comps[n] = c
        n += 1
        if c == 0:
            i = 1 - i
            x = 0.0
            y += T
        else:
            j = 1 - j
            y = 0.0
            x += T
    return times[:n].copy(), comps[:n].copy(), status


@njit(**_JIT)
def events_upto(M, bound, method, i, x, j, y, horizon, keep, rng, out_t, out_c):
    """Simulate on [0, horizon]; store the first ``keep`` events, return count (capped at keep+1)."""
    t = 0.0
    n = 0
    while n <= keep:
        T, c = next_event(M, bound, method, i, x, j, y, rng, horizon - t)
        if c < 0:
            break
        t += T
        if n < keep:
            out_t[n] = t
            out_c[n] = c
        n += 1
        if c == 0:
            i = 1 - i
            x = 0.0
            y += T
        else:
            j = 1 - j
            y = 0.0
            x += T
    return n


@njit(**_JIT)
def batch_events_upto(M, bound, method, i, x, j, y, horizon, keep, n, seed):
    counts = np.empty(n, dtype=np.int64)
    times = np.full((n, max(keep, 1)), np.inf)
    comps = np.full((n, max(keep, 1)), -1, dtype=np.int8)
    for r in range(n):
        rng = stream_state(seed, r)
        counts[r] = events_upto(M, bound, method, i, x, j, y, horizon, keep, rng, times[r], comps[r])
    return counts, times, comps


# ---------------------------------------------------------------- hitting times


@njit(**_JIT)
def hit_one(M, bound, method, i, x, j, y, K, m, rng, time_cap, max_events):
    """First time ``(1+x+y)**m <= K``.

    Returns (tau, status, pre-jump i, x, j, y, component); component is -1
    when no jump was needed or the cap was hit.
    """
    if (1.0 + x + y) ** m <= K:
        return 0.0, STATUS_OK, i, x, j, y, -1
    t = 0.0
    n = 0
    while True:
        T, c = next_event(M, bound, method, i, x, j, y, rng, time_cap - t)
        if c < 0:
            return time_cap, STATUS_CAPPED, i, x + (time_cap - t), j, y + (time_cap - t), -1
        t += T
        n += 1
        x += T
        y += T
        pi, px, pj, py = i, x, j, y
        if c == 0:
            i = 1 - i
            x = 0.0
        else:
            j = 1 - j
            y = 0.0
        if (1.0 + x + y) ** m <= K:
            return t, STATUS_OK, pi, px, pj, py, c
        if n >= max_events:
            return t, STATUS_RUNAWAY, i, x, j, y, -1


@njit(**_JIT)
def batch_hitting(M, bound, method, i, x, j, y, K, m, n, seed, time_cap, max_events):
    taus = np.empty(n)
    status = np.empty(n, dtype=np.int64)
    for r in range(n):
        rng = stream_state(seed, r)
        res = hit_one(M, bound, method, i, x, j, y, K, m, rng, time_cap, max_events)
        taus[r] = res[0]
        status[r] = res[1]
    return taus, status


# ---------------------------------------------------------------- Dynkin residuals


@njit(**_JIT)
def dynkin_one(M, bound, method, i, x, j, y, t_end, hp, rng):
    """h(t, Z_t) - h(0, Z_0) - integral of (L + d/dt) h along one path."""
    # Loop bodies here and in regeneration_one keep the exit branch free of
    # state updates: numba 0.66 was seen to drop an update made in the other
    # branch when a loop-carried float was also modified right before `break`.
    hq = hp.copy()
    h0 = h_value(hq, 0.0, x, y)
    t = 0.0
    integral = 0.0
    ok = True
    done = False
    while not done:
        T, c = next_event(M, bound, method, i, x, j, y, rng, t_end - t)
        done = c < 0
        dur = t_end - t if done else T
        hq[4] = t
        val, good = integrate_flow(1, M, i, x, j, y, dur, hq, HAZARD_TOL)
        integral += val
        ok = ok and good
        x = x + dur
        y = y + dur
        t = t_end if done else t + dur
        if c == 0:
            i = 1 - i
            x = 0.0
        elif c == 1:
            j = 1 - j
            y = 0.0
    return h_value(hq, t_end, x, y) - h0 - integral, ok


@njit(**_JIT)
def batch_dynkin(M, bound, method, i, x, j, y, t_end, hp, n, seed):
    res = np.empty(n)
    bad = 0
    for r in range(n):
        rng = stream_state(seed, r)
        val, ok = dynkin_one(M, bound, method, i, x, j, y, t_end, hp, rng)
        res[r] = val
        if not ok:
            bad += 1
    return res, bad


# ---------------------------------------------------------------- small-set returns


@njit(**_JIT)
def batch_window_hits(M, bound, method, starts, reps, seed, K1, m, window):
    """For each start state, count paths meeting {(1+x+y)**m <= K1} within ``window``."""
    g = starts.shape[0]
    hits = np.zeros(g, dtype=np.int64)
    for gi in range(g):
        for r in range(reps):
            i = int(starts[gi, 0])
            x = starts[gi, 1]
            j = int(starts[gi, 2])
            y = starts[gi, 3]
            if (1.0 + x + y) ** m <= K1:
                hits[gi] += 1
                continue
            rng = stream_state(seed, gi * reps + r)
            t = 0.0
            while True:
                T, c = next_event(M, bound, method, i, x, j, y, rng, window - t)
                if c < 0:
                    break
                t += T
                if c == 0:
                    i = 1 - i
                    x = 0.0
                    y += T
                else:
                    j = 1 - j
                    y = 0.0
                    x += T
                if (1.0 + x + y) ** m <= K1:
                    hits[gi] += 1
                    break
    return hits


@njit(**_JIT)
def regeneration_one(M, bound, method, i, x, j, y, K, K1, m, n_cycles, rng, time_cap,
                     out_tau, out_T, out_Z):
    """Alternating entrance / capped-exit times for the sets {V_m <= K} and {V_m <= K+1}.

    Fills ``out_tau[n]``, ``out_T[n]`` and the state at ``out_T[n]``; returns
    (first entrance time to {V_m <= K1}, status).
    """
    exit_level = (K + 1.0) ** (1.0 / m)
    t = 0.0
    tau1 = np.inf
    if (1.0 + x + y) ** m <= K1:
        tau1 = 0.0
    n = 0
    holding = False
    tau_n = 0.0
    while n < n_cycles:
        if not holding and (1.0 + x + y) ** m <= K:
            holding = True
            tau_n = t
            out_tau[n] = t
        if holding:
            # the flow raises 1+x+y at speed 2
            s_exit = 0.5 * (exit_level - (1.0 + x + y))
            stop = min(t + max(s_exit, 0.0), tau_n + 1.0)
        else:
            stop = time_cap
        T, c = next_event(M, bound, method, i, x, j, y, rng, stop - t)
        if c < 0 and not holding:
            return tau1, STATUS_CAPPED
        dur = stop - t if c < 0 else T
        x = x + dur
        y = y + dur
        t = stop if c < 0 else t + dur
        if c == 0:
            i = 1 - i
            x = 0.0
        elif c == 1:
            j = 1 - j
            y = 0.0
        if c < 0:
            out_T[n] = t
            out_Z[n, 0] = i
            out_Z[n, 1] = x
            out_Z[n, 2] = j
            out_Z[n, 3] = y
            n += 1
            holding = False
        elif tau1 == np.inf and (1.0 + x + y) ** m <= K1:
            tau1 = t
    return tau1, STATUS_OK


@njit(**_JIT)
def batch_regeneration(M, bound, method, i, x, j, y, K, K1, m, n_cycles, n, seed, time_cap):
    taus = np.full((n, n_cycles), np.nan)
    Ts = np.full((n, n_cycles), np.nan)
    Zs = np.full((n, n_cycles, 4), np.nan)
    tau1 = np.empty(n)
    status = np.empty(n, dtype=np.int64)
    for r in range(n):
        rng = stream_state(seed, r)
        a, b = regeneration_one(M, bound, method, i, x, j, y, K, K1, m, n_cycles, rng,
                                time_cap, taus[r], Ts[r], Zs[r])
        tau1[r] = a
        status[r] = b
    return taus, Ts, Zs, tau1, status
