"""Compiled inner loops for the samplers' hottest log-densities.

Each function has a plain numpy counterpart (``decay_weights``,
``convolve_history`` + ``nb_mean_terms``) that the tests use as an oracle.
"""

import math

import numba as nb
import numpy as np


@nb.njit(cache=True)
def decay_weights_jit(m, s, tol, cap):
    """Negative binomial pmf on 0..U-1 (mean ``m``, scale ``s``), truncated at cdf >= 1 - tol."""
    out = np.empty(cap)
    logq = math.log(m) - math.log(s + m)
    logp = -s * math.log1p(m / s)
    total = 0.0
    n = cap
    for k in range(cap):
        p = math.exp(logp)
        out[k] = p
        total += p
        if total >= 1.0 - tol:
            n = k + 1
            break
        logp += math.log((k + s) / (k + 1.0)) + logq
    return out[:n]


@nb.njit(cache=True)
def contagion_terms_jit(weighted, g, Yc, s2):
    """Contagion log-likelihood up to ``mu``-free terms, with ``mu`` the causal convolution.

    Matches ``nb_mean_terms(Yc, convolve_history(weighted, g), s2)``.
    """
    T = weighted.shape[0]
    U = g.shape[0]
    mu = np.zeros(T)
    for s in range(T - 1):
        w = weighted[s]
        if w != 0.0:
            hi = min(U, T - 1 - s)
            for k in range(hi):
                mu[s + 1 + k] += w * g[k]
    ls2 = math.log(s2)
    acc = 0.0
    for t in range(T):
        m = mu[t]
        y = Yc[t]
        if m > 0.0:
            acc += s2 * ls2 - (s2 + y) * math.log(s2 + m)
            if y > 0.0:
                acc += y * math.log(m)
        elif y > 0.0:
            return -np.inf
    return acc
