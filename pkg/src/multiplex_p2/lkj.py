"""Cholesky factors of correlation matrices: unconstrained transform and LKJ prior.

The transform maps ``K(K-1)/2`` reals through ``tanh`` to canonical partial
correlations and then to the rows of a lower-triangular factor ``L`` with unit
row norms, so ``L @ L.T`` is a correlation matrix.
"""

from __future__ import annotations

import numpy as np
from scipy.special import betaln


def n_cpc(K: int) -> int:
    return K * (K - 1) // 2


def cholesky_corr_constrain(y: np.ndarray, K: int) -> tuple[np.ndarray, float]:
    """Map unconstrained ``y`` to a correlation Cholesky factor.

    Returns
    -------
    L : ndarray, shape (K, K)
    log_jac : float
        ``log |det dL/dy|`` over the free (strictly lower) entries.
    """
    L, log_jac, _ = _forward(np.asarray(y, dtype=float), K)
    return L, log_jac


def _forward(y, K):
    w = np.tanh(y)
    L = np.zeros((K, K))
    L[0, 0] = 1.0
    # log(1 - tanh(y)^2), written to stay finite for large |y|
    log_jac = float(np.sum(2.0 * (np.log(2.0) - np.abs(y) - np.log1p(np.exp(-2.0 * np.abs(y))))))
    k = 0
    for i in range(1, K):
        s = 0.0
        for j in range(i):
            c = np.sqrt(max(1.0 - s, 0.0))
            L[i, j] = w[k] * c
            if j > 0:
                with np.errstate(divide="ignore"):   # saturated rows: the limit is -inf
                    log_jac += np.log(c)
            s += L[i, j] ** 2
            k += 1
        L[i, i] = np.sqrt(max(1.0 - s, 0.0))
    return L, log_jac, w


def cholesky_corr_constrain_grad(y: np.ndarray, K: int, grad_L: np.ndarray) -> np.ndarray:
    """Gradient wrt ``y`` of ``f(L(y)) + log_jac(y)`` given ``grad_L = df/dL``.

    Only the lower triangle (including the diagonal) of ``grad_L`` is read.
    """
    y = np.asarray(y, dtype=float)
    L, _, w = _forward(y, K)
    gy = np.empty_like(y)
    offsets = np.concatenate([[0], np.cumsum(np.arange(1, K))])
    for i in range(1, K):
        k0 = offsets[i - 1]
        row = L[i]
        s = np.concatenate([[0.0], np.cumsum(row[:i] ** 2)])
        c = np.sqrt(np.maximum(1.0 - s, 0.0))
        gs = grad_L[i, i] * (-0.5 / c[i])
        for j in range(i - 1, -1, -1):
            gl = grad_L[i, j] + gs * 2.0 * row[j]
            gy_w = gl * c[j]
            gc = gl * w[k0 + j] + (1.0 / c[j] if j > 0 else 0.0)
            gs += gc * (-0.5 / c[j])
            gy[k0 + j] = gy_w * (1.0 - w[k0 + j] ** 2)
    return gy - 2.0 * w


def cholesky_corr_free(L: np.ndarray) -> np.ndarray:
    """Inverse of :func:`cholesky_corr_constrain`."""
    L = np.asarray(L, dtype=float)
    K = L.shape[0]
    y = np.empty(n_cpc(K))
    edge = np.nextafter(1.0, 0.0)
    k = 0
    for i in range(1, K):
        s = 0.0
        for j in range(i):
            # rows with a saturated earlier entry leave no remaining length; keep the map finite
            rest = 1.0 - s
            w = L[i, j] / np.sqrt(rest) if rest > 0.0 else 0.0
            y[k] = np.arctanh(np.clip(w, -edge, edge))
            s += L[i, j] ** 2
            k += 1
    return y


def lkj_log_normalizer(K: int, eta: float) -> float:
    """Log of the LKJ normalizing constant, so the density is ``det(Omega)^(eta-1) / c``."""
    out = 0.0
    for k in range(1, K):
        a = eta + (K - k - 1) / 2.0
        out += (2.0 * eta - 2.0 + K - k) * (K - k) * np.log(2.0) + (K - k) * betaln(a, a)
    return out


def lkj_corr_logpdf(Omega: np.ndarray, eta: float) -> float:
    """LKJ log-density of a correlation matrix."""
    sign, logdet = np.linalg.slogdet(Omega)
    if sign <= 0:
        return -np.inf
    return (eta - 1.0) * logdet - lkj_log_normalizer(Omega.shape[0], eta)


def lkj_corr_cholesky_logpdf(L: np.ndarray, eta: float) -> float:
    """LKJ log-density expressed on the Cholesky factor (includes ``dOmega/dL``)."""
    K = L.shape[0]
    if K == 1:
        return 0.0
    d = np.arange(1, K)
    coef = (K - d - 1) + 2.0 * eta - 2.0
    return float(np.sum(coef * np.log(np.diag(L)[1:]))) - lkj_log_normalizer(K, eta)


def lkj_corr_cholesky_grad(L: np.ndarray, eta: float) -> np.ndarray:
    """Gradient of :func:`lkj_corr_cholesky_logpdf` wrt the entries of ``L``."""
    K = L.shape[0]
    g = np.zeros((K, K))
    d = np.arange(1, K)
    g[d, d] = ((K - d - 1) + 2.0 * eta - 2.0) / np.diag(L)[1:]
    return g


def lkj_corr_cholesky_rng(K: int, eta: float, rng: np.random.Generator) -> np.ndarray:
    """Draw a Cholesky factor of an LKJ(eta) correlation matrix (C-vine/CPC construction).

    The partial correlation at ``(i, j)`` given variables ``0..j-1`` is drawn as
    ``2 * Beta(b, b) - 1`` with ``b = eta + (K - 2 - j) / 2`` (Lewandowski,
    Kurowicka and Joe, 2009).
    """
    w = np.empty(n_cpc(K))
    k = 0
    for i in range(1, K):
        for j in range(i):
            b = eta + (K - 2 - j) / 2.0
            w[k] = 2.0 * rng.beta(b, b) - 1.0
            k += 1
    y = np.arctanh(np.clip(w, -1 + 1e-15, 1 - 1e-15))
    return cholesky_corr_constrain(y, K)[0]
