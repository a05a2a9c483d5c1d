"""Compiled multinomial NUTS transition for targets with a compiled log-density.

Mirrors :meth:`multiplex_p2.sampler.NUTSChain.transition` step for step,
including the order in which it consumes the pre-drawn uniforms, so both
implementations return the same draw for the same inputs.

The log-density is passed in as a compiled function ``fn(q, grad_out, data)``
returning the log-density and writing the gradient into ``grad_out``.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

DIVERGENCE_THRESHOLD = 1000.0

# slots of the counter array shared through the recursion
N_LEAPFROG, SUM_METRO, DIVERGENT, NEXT_UNIFORM = 0, 1, 2, 3


@njit(error_model="numpy")
def _leapfrog(fn, data, q, p, g, eps, inv_metric):
    for k in range(q.size):
        p[k] += 0.5 * eps * g[k]
    for k in range(q.size):
        q[k] += eps * inv_metric[k] * p[k]
    lp = fn(q, g, data)
    if not math.isfinite(lp):
        lp = -np.inf
        for k in range(q.size):
            g[k] = 0.0
    for k in range(q.size):
        p[k] += 0.5 * eps * g[k]
    return lp


@njit(error_model="numpy")
def _hamiltonian(lp, p, inv_metric):
    kin = 0.0
    for k in range(p.size):
        kin += inv_metric[k] * p[k] * p[k]
    h = -lp + 0.5 * kin
    return h if math.isfinite(h) else np.inf


@njit(error_model="numpy")
def _no_u_turn(p_sharp_a, p_sharp_b, rho):
    a = 0.0
    b = 0.0
    for k in range(rho.size):
        a += p_sharp_a[k] * rho[k]
        b += p_sharp_b[k] * rho[k]
    return b > 0.0 and a > 0.0


@njit(error_model="numpy")
def _logaddexp(a, b):
    if a == -np.inf:
        return b
    if b == -np.inf:
        return a
    m = max(a, b)
    return m + math.log(math.exp(a - m) + math.exp(b - m))


@njit(error_model="numpy")
def _build_tree(depth, fn, data, eps, H0, inv_metric, zq, zp, zg, zlp,
                sq, sp, sg, rho, ps_beg, ps_end, p_beg, p_end, counters, u):
    """Extend the trajectory end ``(zq, zp, zg)`` in place by ``2**depth`` steps.

    Returns ``(valid, log_weight, end_logp, sample_logp)``; the selected state
    goes to ``(sq, sp, sg)`` and the subtree's momentum sum and end momenta to
    ``rho``, ``ps_*`` (sharp, i.e. metric-scaled) and ``p_*``.
    """
    if depth == 0:
        zlp = _leapfrog(fn, data, zq, zp, zg, eps, inv_metric)
        counters[N_LEAPFROG] += 1.0
        h = _hamiltonian(zlp, zp, inv_metric)
        if h - H0 > DIVERGENCE_THRESHOLD:
            counters[DIVERGENT] = 1.0
            return False, -np.inf, zlp, zlp
        counters[SUM_METRO] += 1.0 if H0 - h > 0 else math.exp(H0 - h)
        for k in range(zq.size):
            sq[k] = zq[k]
            sp[k] = zp[k]
            sg[k] = zg[k]
            rho[k] = zp[k]
            ps_beg[k] = inv_metric[k] * zp[k]
            ps_end[k] = ps_beg[k]
            p_beg[k] = zp[k]
            p_end[k] = zp[k]
        return True, H0 - h, zlp, zlp

    dim = zq.size
    rho_left = np.empty(dim)
    ps_left_end = np.empty(dim)
    p_left_end = np.empty(dim)
    valid, lw_left, zlp, slp = _build_tree(depth - 1, fn, data, eps, H0, inv_metric, zq, zp, zg, zlp,
                                           sq, sp, sg, rho_left, ps_beg, ps_left_end, p_beg, p_left_end,
                                           counters, u)
    if not valid:
        return False, -np.inf, zlp, slp
    sq_right = np.empty(dim)
    sp_right = np.empty(dim)
    sg_right = np.empty(dim)
    rho_right = np.empty(dim)
    ps_right_beg = np.empty(dim)
    p_right_beg = np.empty(dim)
    valid, lw_right, zlp, slp_right = _build_tree(depth - 1, fn, data, eps, H0, inv_metric, zq, zp, zg,
                                                  zlp, sq_right, sp_right, sg_right, rho_right,
                                                  ps_right_beg, ps_end, p_right_beg, p_end, counters, u)
    if not valid:
        return False, -np.inf, zlp, slp
    log_weight = _logaddexp(lw_left, lw_right)
    k_u = int(counters[NEXT_UNIFORM])
    counters[NEXT_UNIFORM] += 1.0
    if math.log(u[k_u]) < lw_right - log_weight:
        slp = slp_right
        for k in range(dim):
            sq[k] = sq_right[k]
            sp[k] = sp_right[k]
            sg[k] = sg_right[k]
    for k in range(dim):
        rho[k] = rho_left[k] + rho_right[k]
    persist = _no_u_turn(ps_beg, ps_end, rho)
    if persist:
        for k in range(dim):
            rho_left[k] += p_right_beg[k]
        persist = _no_u_turn(ps_beg, ps_right_beg, rho_left)
    if persist:
        for k in range(dim):
            rho_right[k] += p_left_end[k]
        persist = _no_u_turn(ps_left_end, ps_end, rho_right)
    return persist, log_weight, zlp, slp


@njit(error_model="numpy")
def transition(fn, data, q, lp, g, p0, inv_metric, eps, max_depth, u):
    """One NUTS transition from ``(q, lp, g)`` with initial momentum ``p0``.

    Returns ``(q, lp, g, stats)`` where ``stats`` holds accept statistic,
    tree depth, leapfrog count, divergence flag, energy and energy error
    (energy of the selected point minus the starting energy).
    """
    dim = q.size
    H0 = _hamiltonian(lp, p0, inv_metric)
    counters = np.zeros(4)

    # forward (index 0) and backward (index 1) trajectory ends
    ends_q = np.empty((2, dim))
    ends_p = np.empty((2, dim))
    ends_g = np.empty((2, dim))
    ends_ps = np.empty((2, dim))
    ends_lp = np.array([lp, lp])
    for s in range(2):
        for k in range(dim):
            ends_q[s, k] = q[k]
            ends_p[s, k] = p0[k]
            ends_g[s, k] = g[k]
            ends_ps[s, k] = inv_metric[k] * p0[k]
    sq = q.copy()
    sp = p0.copy()
    sg = g.copy()
    slp = lp
    rho = p0.copy()
    log_weight = 0.0
    depth = 0

    sub_q = np.empty(dim)
    sub_p = np.empty(dim)
    sub_g = np.empty(dim)
    sub_rho = np.empty(dim)
    sub_ps_beg = np.empty(dim)
    sub_ps_end = np.empty(dim)
    sub_p_beg = np.empty(dim)
    sub_p_end = np.empty(dim)
    near_p = np.empty(dim)
    near_ps = np.empty(dim)
    tmp = np.empty(dim)
    while depth < max_depth:
        k_u = int(counters[NEXT_UNIFORM])
        counters[NEXT_UNIFORM] += 1.0
        near = 0 if u[k_u] > 0.5 else 1
        far = 1 - near
        for k in range(dim):
            near_p[k] = ends_p[near, k]
            near_ps[k] = ends_ps[near, k]
        eps_dir = eps if near == 0 else -eps
        valid, sub_lw, end_lp, sub_lp = _build_tree(
            depth, fn, data, eps_dir, H0, inv_metric, ends_q[near], ends_p[near], ends_g[near],
            ends_lp[near], sub_q, sub_p, sub_g, sub_rho, sub_ps_beg, sub_ps_end, sub_p_beg, sub_p_end,
            counters, u)
        ends_lp[near] = end_lp
        if not valid:
            break
        depth += 1
        k_u = int(counters[NEXT_UNIFORM])
        counters[NEXT_UNIFORM] += 1.0
        if sub_lw > log_weight or u[k_u] < math.exp(sub_lw - log_weight):
            slp = sub_lp
            for k in range(dim):
                sq[k] = sub_q[k]
                sp[k] = sub_p[k]
                sg[k] = sub_g[k]
        log_weight = _logaddexp(log_weight, sub_lw)
        for k in range(dim):
            ends_ps[near, k] = sub_ps_end[k]
        for k in range(dim):
            tmp[k] = rho[k] + sub_rho[k]
        persist = _no_u_turn(ends_ps[far], sub_ps_end, tmp)
        if persist:
            for k in range(dim):
                tmp[k] = rho[k] + sub_p_beg[k]
            persist = _no_u_turn(ends_ps[far], sub_ps_beg, tmp)
        if persist:
            for k in range(dim):
                tmp[k] = sub_rho[k] + near_p[k]
            persist = _no_u_turn(near_ps, sub_ps_end, tmp)
        for k in range(dim):
            rho[k] += sub_rho[k]
        if not persist:
            break

    n_leapfrog = counters[N_LEAPFROG]
    stats = np.empty(6)
    stats[0] = counters[SUM_METRO] / n_leapfrog if n_leapfrog > 0 else 0.0
    stats[1] = depth
    stats[2] = n_leapfrog
    stats[3] = counters[DIVERGENT]
    stats[4] = _hamiltonian(slp, sp, inv_metric)
    stats[5] = stats[4] - H0
    return sq, slp, sg, stats


def uniforms_needed(max_depth: int) -> int:
    """Upper bound on uniforms one transition consumes: two per doubling plus one per merge."""
    return (1 << max_depth) + 2 * max_depth
