"""Compiled inner loops.

The kernels draw from the caller's ``numpy.random.Generator`` directly, so
they consume exactly the same stream as the rest of the sampler.
"""
import math

import numpy as np
from numba import njit


@njit(cache=True)
def draw_log_categorical(logw, u):
    """Index with probability proportional to exp(logw), given a uniform ``u``."""
    m = logw.max()
    n = logw.size
    cdf = np.empty(n)
    acc = 0.0
    for k in range(n):
        acc += math.exp(logw[k] - m)
        cdf[k] = acc
    target = u * acc
    # searchsorted side="right"
    lo, hi = 0, n
    while lo < hi:
        mid = (lo + hi) // 2
        if cdf[mid] <= target:
            lo = mid + 1
        else:
            hi = mid
    return min(lo, n - 1)


@njit(cache=True)
def view_topics(items, z, lo, hi, t, n_zv, n_z, n_tz, n2_t, pi_w, log_new, a_pi,
                gamma, gsum, rng):
    """Resample the topic of views ``lo .. hi-1`` of one customer in cluster ``t``.

    Stops early and returns the view index when a brand-new topic is drawn;
    that view is left detached so the caller can allocate the topic, attach
    the view and resume from the next index. Returns -1 when all are done.
    ``log_new`` is log(alpha_pi * remainder) + log(gamma_v / sum gamma) per item.
    """
    Z = n_z.size
    logw = np.empty(Z + 1)
    for i in range(lo, hi):
        v = items[i]
        k = z[i]
        n_zv[k, v] -= 1
        n_z[k] -= 1
        n_tz[t, k] -= 1
        n2_t[t] -= 1
        for q in range(Z):
            w = n_tz[t, q] + a_pi * pi_w[q]
            logw[q] = (math.log(w) if w > 0 else -np.inf) \
                + math.log(n_zv[q, v] + gamma[v]) - math.log(n_z[q] + gsum)
        logw[Z] = log_new[v]
        k = draw_log_categorical(logw, rng.random())
        if k == Z:
            z[i] = -1
            return i
        z[i] = k
        n_zv[k, v] += 1
        n_z[k] += 1
        n_tz[t, k] += 1
        n2_t[t] += 1
    return -1


LOG_4PI = math.log(4.0 * math.pi)
LOG_2 = math.log(2.0)


@njit(cache=True)
def log_c3(c):
    """log(c / (4 pi sinh c)), with the uniform limit at c = 0."""
    if c == 0.0:
        return -LOG_4PI
    return math.log(c) - c - math.log(-math.expm1(-2.0 * c)) + (LOG_2 - LOG_4PI)


@njit(cache=True)
def location_log_weights(x, sum_s, c, w, base, c_new, log_w_new):
    """Log weights of one location over S factors plus a new one (last).

    ``w`` holds the count-plus-stick prior weight per factor, ``base`` is
    c0 * mu0 and ``sum_s`` the member sums with ``x`` excluded.
    """
    S = c.size
    out = np.empty(S + 1)
    for k in range(S + 1):
        if k < S:
            ck = c[k]
            s0, s1, s2 = sum_s[k, 0], sum_s[k, 1], sum_s[k, 2]
            lw = math.log(w[k]) if w[k] > 0 else -np.inf
        else:
            ck = c_new
            s0, s1, s2 = 0.0, 0.0, 0.0
            lw = log_w_new
        e0, e1, e2 = ck * s0 + base[0], ck * s1 + base[1], ck * s2 + base[2]
        i0, i1, i2 = e0 + ck * x[0], e1 + ck * x[1], e2 + ck * x[2]
        r_ex = math.sqrt(e0 * e0 + e1 * e1 + e2 * e2)
        r_in = math.sqrt(i0 * i0 + i1 * i1 + i2 * i2)
        out[k] = lw + log_c3(ck) + log_c3(r_ex) - log_c3(r_in)
    return out
