"""Hot inner loops of the Gibbs sweep.

Every function here is plain Python that numba can compile; when numba is
unavailable the same code runs uncompiled. All randomness is pre-drawn by the
caller and passed in, so the kernels are pure arithmetic and the draw sequence
is owned by one ``numpy.random.Generator`` per chain.
"""

import numpy as np

try:
    from numba import njit

    def _jit(fn):
        return njit(cache=True)(fn)

except ImportError:  # pragma: no cover - exercised only without numba
    def _jit(fn):
        return fn


@_jit
def normal_conditional(prior_mean, prior_prec, data_estimate, data_prec):
    """Conjugate normal update: variance 1/(prior prec + data prec), mean the
    precision-weighted average of prior mean and data estimate."""
    var = 1.0 / (prior_prec + data_prec)
    mean = var * (prior_prec * prior_mean + data_prec * data_estimate)
    return mean, var


@_jit
def gamma_precision_update(shape0, rate0, count, sumsq):
    """Conjugate Gamma update for a normal precision: shape + count/2,
    rate + sum of squares / 2."""
    return shape0 + 0.5 * count, rate0 + 0.5 * sumsq


@_jit
def beta_pattern_update(a, b, n_pattern1, n_pattern0):
    """Conjugate Beta update for the short-stay pattern probability."""
    return a + n_pattern1, b + n_pattern0


@_jit
def client_effects_inplace(cptr, t, resid, b0, b1, s2e, s20, s21, z0, z1,
                           skip0, skip1):
    """Draw every client's intercept and slope effects from their univariate
    full conditionals (intercept first, then slope given the new intercept).

    ``resid`` holds, per observation sorted by client, the outcome minus every
    model term except the client effects. ``skip*`` pins the corresponding
    effect at zero (used when its variance is pinned to zero).
    """
    n = b0.shape[0]
    for i in range(n):
        lo = cptr[i]
        hi = cptr[i + 1]
        if skip0:
            b0[i] = 0.0
        else:
            acc = 0.0
            for k in range(lo, hi):
                acc += resid[k] - b1[i] * t[k]
            var = 1.0 / (1.0 / s20 + (hi - lo) / s2e)
            mean = var * (acc / s2e)
            b0[i] = mean + np.sqrt(var) * z0[i]
        if skip1:
            b1[i] = 0.0
        else:
            acc = 0.0
            tt = 0.0
            for k in range(lo, hi):
                acc += (resid[k] - b0[i]) * t[k]
                tt += t[k] * t[k]
            var = 1.0 / (1.0 / s21 + tt / s2e)
            mean = var * (acc / s2e)
            b1[i] = mean + np.sqrt(var) * z1[i]


@_jit
def structured_effects_inplace(indptr, indices, weights, row_sums,
                               data_sum, data_cnt, u, s2e, delta, z):
    """Single-site update of the structured effects in index order.

    Each unit's prior is the CAR conditional given the *current* neighbor
    values (weighted neighbor average, variance delta / w_s+). Units without
    neighbors carry no structured effect and stay at zero.
    """
    for s in range(u.shape[0]):
        ws = row_sums[s]
        if ws <= 0.0:
            u[s] = 0.0
            continue
        acc = 0.0
        for k in range(indptr[s], indptr[s + 1]):
            acc += weights[k] * u[indices[k]]
        prior_prec = ws / delta
        data_prec = data_cnt[s] / s2e
        var = 1.0 / (prior_prec + data_prec)
        mean = var * (prior_prec * (acc / ws) + data_sum[s] / s2e)
        u[s] = mean + np.sqrt(var) * z[s]


@_jit
def pairwise_quadratic(edge_i, edge_j, edge_w, u):
    """Sum over stored pairs of w_sj (u_s - u_j)^2."""
    total = 0.0
    for k in range(edge_w.shape[0]):
        d = u[edge_i[k]] - u[edge_j[k]]
        total += edge_w[k] * d * d
    return total
