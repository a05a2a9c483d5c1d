"""Compiled log-posterior and gradient of the multiplex p2 model.

Each dyad outcome is a ``2T``-bit word and its score is a quadratic form in the
bits: one weight per bit (the two directed tie terms of each layer) and one
weight per interacting bit pair (mutuality, cross-density, cross-reciprocity).
Scores of all ``2^(2T)`` words are built by adding the highest set bit to a
smaller word, one contiguous block per bit, which costs O(1) per word; the
gradient runs the same recursion backwards. Unless the weights are extreme the recursion runs on
``exp(score)`` as a product of per-weight exponentials, and those factor
further into baseline, sender and receiver parts, so ``exp`` is called once
per actor effect rather than ``2^(2T)`` times per dyad. Everything is streamed dyad by dyad, so memory is O(n + 2^(2T)).

The packed inputs are assembled by :class:`multiplex_p2.model.P2Posterior`.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

# Packed inputs end with ``layer_token = (0,) * T``.
# integer header: n, T, K, D, n_fixed, sigma offset, cpc offset, z offset, dim
# float header: fixed-prior constant, sigma shape, sigma scale, sigma constant,
#               lkj eta, lkj log normalizer
# dyad status: 0 complete, 1 partially observed, 2 unobserved
COMPLETE, PARTIAL, UNOBSERVED = 0, 1, 2

# reassociation lets block sums vectorize; infinities and nans must stay meaningful
_FAST = {"reassoc", "contract", "nsz", "arcp"}


@njit(cache=True, error_model="numpy")
def _corr_cholesky(y, K, L):
    """Fill ``L`` from free parameters ``y``; returns the log-Jacobian."""
    for i in range(K):
        for j in range(K):
            L[i, j] = 0.0
    L[0, 0] = 1.0
    log_jac = 0.0
    k = 0
    for i in range(1, K):
        s = 0.0
        for j in range(i):
            a = abs(y[k])
            log_jac += 2.0 * (math.log(2.0) - a - math.log1p(math.exp(-2.0 * a)))
            c = math.sqrt(max(1.0 - s, 0.0))
            L[i, j] = math.tanh(y[k]) * c
            if j > 0:
                log_jac += math.log(c)
            s += L[i, j] * L[i, j]
            k += 1
        L[i, i] = math.sqrt(max(1.0 - s, 0.0))
    return log_jac


@njit(cache=True, error_model="numpy")
def _corr_cholesky_grad(y, K, L, gL, gy):
    """Gradient of ``f(L(y)) + log_jac(y)`` wrt ``y`` given ``gL = df/dL``."""
    c = np.empty(K + 1)
    k0 = 0
    for i in range(1, K):
        s = 0.0
        c[0] = 1.0
        for j in range(i):
            s += L[i, j] * L[i, j]
            c[j + 1] = math.sqrt(max(1.0 - s, 0.0))
        gs = gL[i, i] * (-0.5 / c[i])
        for j in range(i - 1, -1, -1):
            w = math.tanh(y[k0 + j])
            gl = gL[i, j] + gs * 2.0 * L[i, j]
            gc = gl * w
            if j > 0:
                gc += 1.0 / c[j]
            gs += gc * (-0.5 / c[j])
            gy[k0 + j] = gl * c[j] * (1.0 - w * w) - 2.0 * w
        k0 += i


@njit(cache=True, error_model="numpy", inline="always")
def _fill_weights(e, T, w, W):
    for t in range(T):
        w[2 * t] = e[3 * t]
        w[2 * t + 1] = e[3 * t + 1]
        W[2 * t + 1, 2 * t] = e[3 * t + 2]
    p = 0
    for t in range(T):
        for s in range(t + 1, T):
            cd = e[3 * T + 2 * p]
            cr = e[3 * T + 2 * p + 1]
            W[2 * s, 2 * t] = cd
            W[2 * s + 1, 2 * t + 1] = cd
            W[2 * s + 1, 2 * t] = cr
            W[2 * s, 2 * t + 1] = cr
            p += 1


@njit(cache=True, error_model="numpy", inline="always")
def _scores(w, W, B, sc, rs):
    # words in [2^t, 2^(t+1)) extend the words in [0, 2^t) by bit t
    sc[0] = 0.0
    for b in range(B):
        base = 1 << b
        rs[0] = 0.0
        for t in range(b):
            lo = 1 << t
            wt = W[b, t]
            for r in range(lo):
                rs[lo + r] = rs[r] + wt
        wb = w[b]
        for r in range(base):
            sc[base + r] = sc[r] + wb + rs[r]


@njit(cache=True, error_model="numpy", inline="always")
def _scores_backward(gs, B, gw, gW, grs):
    for b in range(B - 1, -1, -1):
        base = 1 << b
        acc = 0.0
        for r in range(base):
            g = gs[base + r]
            acc += g
            gs[r] += g
            grs[r] = g
        gw[b] = acc
        for t in range(b - 1, -1, -1):
            lo = 1 << t
            acc = 0.0
            for r in range(lo):
                acc += grs[lo + r]
                grs[r] += grs[lo + r]
            gW[b, t] = acc


@njit(cache=True, error_model="numpy", inline="always")
def _fill_feature_grad(gw, gW, T, gE):
    for t in range(T):
        gE[3 * t] = gw[2 * t]
        gE[3 * t + 1] = gw[2 * t + 1]
        gE[3 * t + 2] = gW[2 * t + 1, 2 * t]
    p = 0
    for t in range(T):
        for s in range(t + 1, T):
            gE[3 * T + 2 * p] = gW[2 * s, 2 * t] + gW[2 * s + 1, 2 * t + 1]
            gE[3 * T + 2 * p + 1] = gW[2 * s + 1, 2 * t] + gW[2 * s, 2 * t + 1]
            p += 1


# Exponentiated weights are products of at most three factors (baseline and
# covariates, sender, receiver) each below exp(FACTOR_LIMIT), and every outcome
# product stays within exp(+-PRODUCT_LIMIT): all inside the normal double range.
FACTOR_LIMIT = 200.0
PRODUCT_LIMIT = 600.0


@njit(cache=True, error_model="numpy", inline="always")
def _exp_scores(ew, eW, B, ex, ers):
    """``ex[o] = exp(score[o])`` from exponentiated weights ``ew``, ``eW``."""
    ex[0] = 1.0
    for b in range(B):
        base = 1 << b
        ers[0] = ew[b]
        for t in range(b):
            lo = 1 << t
            f = eW[b, t]
            for r in range(lo):
                ers[lo + r] = ers[r] * f
        for r in range(base):
            ex[base + r] = ex[r] * ers[r]


@njit(cache=True, error_model="numpy", inline="always")
def _dyad_from_exp(ex, status, code, keep, nout, gs):
    tot = 0.0
    for o in range(nout):
        tot += ex[o]
    inv = 1.0 / tot
    for o in range(nout):
        gs[o] = -ex[o] * inv
    if status == COMPLETE:
        gs[code] += 1.0
        return math.log(ex[code]) - math.log(tot)
    totc = 0.0
    for o in range(nout):
        if (o & keep) == code:
            totc += ex[o]
    invc = 1.0 / totc
    for o in range(nout):
        if (o & keep) == code:
            gs[o] += ex[o] * invc
    return math.log(totc) - math.log(tot)


@njit(cache=True, error_model="numpy", inline="always")
def _dyad_from_scores(sc, status, code, keep, nout, gs):
    m = -np.inf
    for o in range(nout):
        if sc[o] > m:
            m = sc[o]
    tot = 0.0
    for o in range(nout):
        gs[o] = math.exp(sc[o] - m)
        tot += gs[o]
    lse = m + math.log(tot)
    for o in range(nout):
        gs[o] = -gs[o] / tot
    if status == COMPLETE:
        gs[code] += 1.0
        return sc[code] - lse
    mc = -np.inf
    for o in range(nout):
        if (o & keep) == code and sc[o] > mc:
            mc = sc[o]
    totc = 0.0
    for o in range(nout):
        if (o & keep) == code:
            totc += math.exp(sc[o] - mc)
    for o in range(nout):
        if (o & keep) == code:
            gs[o] += math.exp(sc[o] - mc) / totc
    return mc + math.log(totc) - lse


@njit(cache=True, error_model="numpy", fastmath=_FAST)
def p2_logp_grad(theta, grad, data):
    """Log-posterior on the unconstrained scale; writes the gradient into ``grad``.

    Returns ``(log_posterior, log_likelihood)``. A non-finite result returns
    ``-inf`` with a zero gradient.
    """
    (ints, floats, I, J, status, codes, keep, const_terms, cov_terms,
     Zf, Zb, actor_terms, X, prior_sd, layer_token) = data
    # the layer count comes from a tuple length, so it is a compile-time
    # constant and every small per-layer loop is unrolled
    T = len(layer_token)
    n, K, D = ints[0], ints[2], ints[3]
    n_fixed, sig_off, cpc_off, z_off, dim = ints[4], ints[5], ints[6], ints[7], ints[8]
    B = 2 * T
    nout = 1 << B
    nf = 3 * T + T * (T - 1)
    for k in range(dim):
        grad[k] = 0.0

    # actor effects C = (z @ L.T) * sigma, plus actor covariates
    sigma = np.empty(K)
    for k in range(K):
        sigma[k] = math.exp(theta[sig_off + k])
    L = np.empty((K, K))
    log_jac = _corr_cholesky(theta[cpc_off:cpc_off + K * (K - 1) // 2], K, L)
    zL = np.zeros((n, K))
    for a in range(n):
        for k in range(K):
            acc = 0.0
            for l in range(k + 1):
                acc += theta[z_off + a * K + l] * L[k, l]
            zL[a, k] = acc
    alpha = np.empty((n, T))
    beta = np.empty((n, T))
    for a in range(n):
        for t in range(T):
            alpha[a, t] = sigma[2 * t] * zL[a, 2 * t]
            beta[a, t] = sigma[2 * t + 1] * zL[a, 2 * t + 1]
    for m in range(actor_terms.shape[0]):
        target, t, k, c = actor_terms[m, 0], actor_terms[m, 1], actor_terms[m, 2], actor_terms[m, 3]
        for a in range(n):
            if target == 0:
                alpha[a, t] += theta[k] * X[a, c]
            else:
                beta[a, t] += theta[k] * X[a, c]

    eta0 = np.zeros(nf)
    for m in range(const_terms.shape[0]):
        eta0[const_terms[m, 0]] += theta[const_terms[m, 1]]

    e = np.empty(nf)
    gE = np.empty(nf)
    gE_sum = np.zeros(nf)
    w = np.empty(B)
    W = np.zeros((B, B))
    gw = np.empty(B)
    gW = np.empty((B, B))
    sc = np.empty(nout)
    gs = np.empty(nout)
    rs = np.empty(max(nout // 2, 1))
    g_alpha = np.zeros((n, T))
    g_beta = np.zeros((n, T))

    # per-call exponentials: baselines and actor effects
    has_cov = np.zeros(nf, dtype=np.bool_)
    for m in range(cov_terms.shape[0]):
        has_cov[cov_terms[m, 0]] = True
    exp_eta0 = np.empty(nf)
    fast = True
    for f in range(nf):
        exp_eta0[f] = math.exp(eta0[f])
        fast = fast and abs(eta0[f]) < FACTOR_LIMIT
    ea = np.empty((n, T))
    eb = np.empty((n, T))
    actor_fast = np.empty(n, dtype=np.bool_)
    for a in range(n):
        actor_fast[a] = True
        for t in range(T):
            ea[a, t] = math.exp(alpha[a, t])
            eb[a, t] = math.exp(beta[a, t])
            if not (abs(alpha[a, t]) < FACTOR_LIMIT and abs(beta[a, t]) < FACTOR_LIMIT):
                actor_fast[a] = False
    fe = np.empty(nf)
    ew = np.empty(B)
    eW = np.zeros((B, B))

    ll = 0.0
    for d in range(D):
        if status[d] == UNOBSERVED:
            continue
        i, j = I[d], J[d]
        for f in range(nf):
            e[f] = eta0[f]
        for m in range(cov_terms.shape[0]):
            f, k, c = cov_terms[m, 0], cov_terms[m, 1], cov_terms[m, 2]
            e[f] += theta[k] * (Zf[d, c] if cov_terms[m, 3] == 0 else Zb[d, c])
        ok = fast and actor_fast[i] and actor_fast[j]
        for f in range(nf):
            if has_cov[f]:
                fe[f] = math.exp(e[f])
                ok = ok and abs(e[f]) < FACTOR_LIMIT
            else:
                fe[f] = exp_eta0[f]
        for t in range(T):
            e[3 * t] += alpha[i, t] + beta[j, t]
            e[3 * t + 1] += alpha[j, t] + beta[i, t]
            fe[3 * t] *= ea[i, t] * eb[j, t]
            fe[3 * t + 1] *= ea[j, t] * eb[i, t]
        _fill_weights(e, T, w, W)
        size = 0.0
        for b in range(B):
            size += abs(w[b])
            for c in range(b):
                size += abs(W[b, c])
        if ok and size < PRODUCT_LIMIT:
            _fill_weights(fe, T, ew, eW)
            _exp_scores(ew, eW, B, sc, rs)
            ll += _dyad_from_exp(sc, status[d], codes[d], keep[d], nout, gs)
        else:
            _scores(w, W, B, sc, rs)
            ll += _dyad_from_scores(sc, status[d], codes[d], keep[d], nout, gs)
        _scores_backward(gs, B, gw, gW, rs)
        _fill_feature_grad(gw, gW, T, gE)
        for f in range(nf):
            gE_sum[f] += gE[f]
        for m in range(cov_terms.shape[0]):
            f, k, c = cov_terms[m, 0], cov_terms[m, 1], cov_terms[m, 2]
            grad[k] += gE[f] * (Zf[d, c] if cov_terms[m, 3] == 0 else Zb[d, c])
        for t in range(T):
            g_alpha[i, t] += gE[3 * t]
            g_beta[j, t] += gE[3 * t]
            g_alpha[j, t] += gE[3 * t + 1]
            g_beta[i, t] += gE[3 * t + 1]

    for m in range(const_terms.shape[0]):
        grad[const_terms[m, 1]] += gE_sum[const_terms[m, 0]]
    for m in range(actor_terms.shape[0]):
        target, t, k, c = actor_terms[m, 0], actor_terms[m, 1], actor_terms[m, 2], actor_terms[m, 3]
        for a in range(n):
            grad[k] += (g_alpha[a, t] if target == 0 else g_beta[a, t]) * X[a, c]

    # back through C = (z @ L.T) * sigma
    gL = np.zeros((K, K))
    g_sigma = np.zeros(K)
    for a in range(n):
        for k in range(K):
            gc = g_alpha[a, k // 2] if k % 2 == 0 else g_beta[a, k // 2]
            g_sigma[k] += gc * zL[a, k]
            gcs = gc * sigma[k]
            for l in range(k + 1):
                grad[z_off + a * K + l] += gcs * L[k, l]
                gL[k, l] += gcs * theta[z_off + a * K + l]

    lp = ll
    # fixed effects: independent normals
    for k in range(n_fixed):
        x = theta[k] / prior_sd[k]
        lp -= 0.5 * x * x
        grad[k] -= x / prior_sd[k]
    lp -= floats[0]
    # scales: inverse gamma on sigma, sampled on log scale
    shape, scale = floats[1], floats[2]
    for k in range(K):
        ls = theta[sig_off + k]
        inv = math.exp(-ls)
        lp += floats[3] - shape * ls - scale * inv
        grad[sig_off + k] = g_sigma[k] * sigma[k] - shape + scale * inv
    # LKJ on the Cholesky factor, plus the transform Jacobian
    eta = floats[4]
    for d_ in range(1, K):
        coef = (K - d_ - 1) + 2.0 * eta - 2.0
        lp += coef * math.log(L[d_, d_])
        gL[d_, d_] += coef / L[d_, d_]
    lp += log_jac - floats[5]
    if K > 1:
        _corr_cholesky_grad(theta[cpc_off:cpc_off + K * (K - 1) // 2], K, L, gL,
                            grad[cpc_off:cpc_off + K * (K - 1) // 2])
    # standard normal actor latents
    for k in range(z_off, dim):
        lp -= 0.5 * theta[k] * theta[k]
        grad[k] -= theta[k]
    lp -= 0.5 * math.log(2.0 * math.pi) * (dim - z_off)

    ok = math.isfinite(lp)
    for k in range(dim):
        if not math.isfinite(grad[k]):
            ok = False
    for d_ in range(K):
        if not L[d_, d_] > 0.0:
            ok = False
    if not ok:
        for k in range(dim):
            grad[k] = 0.0
        return -np.inf, ll
    return lp, ll


@njit(cache=True, error_model="numpy")
def p2_logp_into(theta, grad, data):
    """Sampler entry point: log-posterior only, gradient written in place."""
    return p2_logp_grad(theta, grad, data)[0]
