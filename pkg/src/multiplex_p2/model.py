"""The multiplex p2 model: dyad effects, dyad probabilities, priors, posterior.

Two layers live here. The per-dyad functions (:func:`dyad_effects`,
:func:`dyad_score`, :func:`dyad_log_prob_table`, :func:`dyad_log_lik`) follow
the model definition term by term and are meant for inspection and testing.
:class:`P2Model` evaluates the same quantities for all dyads at once with
numpy; :class:`P2Posterior` wraps the compiled log-posterior and gradient
used by the sampler.

Actor random effects use a non-centered parameterization: actor ``i`` has a
standard normal vector ``z_i`` of length ``2T`` and
``C_i = diag(sigma) @ L @ z_i`` with ``L`` the Cholesky factor of the
correlation matrix. Columns of ``C`` are ordered ``[A^1, B^1, ..., A^T, B^T]``.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field, fields, replace
from typing import NamedTuple, Sequence

import numpy as np
from scipy.special import gammaln, logsumexp

from . import _likelihood as _lik
from . import lkj
from .network import (CovariateSet, DyadOutcome, MultiplexNetwork, dyad_codes,
                      dyad_index, parse_attachments)

MAX_LAYERS = 8
LOG_2PI = np.log(2.0 * np.pi)


@dataclass(frozen=True)
class PriorConfig:
    """Hyperparameters of the prior stack.

    Normals are (mean, sd). ``sigma_shape``/``sigma_scale`` are the
    inverse-gamma shape and scale for every random-effect scale.
    """

    baseline_sd: float = 10.0
    coeff_scale_numerator: float = 10.0
    sigma_shape: float = 3.0
    sigma_scale: float = 50.0
    lkj_eta: float = 2.0

    def __post_init__(self):
        for f in fields(self):
            if not getattr(self, f.name) > 0:
                raise ValueError(f"prior hyperparameter {f.name} must be positive")


@dataclass(frozen=True)
class ModelSpec:
    """Layers, covariate-to-effect attachments and prior overrides of a model."""

    T: int
    layer_names: tuple[str, ...] = ()
    attachments: dict = field(default_factory=dict)
    prior: PriorConfig = field(default_factory=PriorConfig)

    def __post_init__(self):
        if not 1 <= self.T <= MAX_LAYERS:
            raise ValueError(f"T must be between 1 and {MAX_LAYERS}")
        names = tuple(self.layer_names) or tuple(f"layer{t + 1}" for t in range(self.T))
        object.__setattr__(self, "layer_names", names)

    def covariates(self, dyadic=None, actor=None) -> CovariateSet:
        return CovariateSet(dyadic or {}, actor or {}, self.attachments)

    @classmethod
    def from_dict(cls, doc: dict) -> "ModelSpec":
        layers = doc.get("layers")
        if isinstance(layers, int):
            T, names = layers, ()
        else:
            names = tuple(layers or ())
            T = int(doc.get("T", len(names)))
        prior = PriorConfig(**doc.get("prior", {}))
        names = names or tuple(f"layer{t + 1}" for t in range(T))
        return cls(T, names, parse_attachments(doc.get("attachments"), names), prior)

    @classmethod
    def load(cls, path) -> "ModelSpec":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self) -> dict:
        return {
            "layers": list(self.layer_names),
            "attachments": [
                {"family": fam, "layers": list(key) if isinstance(key, tuple) else [key],
                 "covariates": list(names)}
                for (fam, key), names in self.attachments.items()
            ],
            "prior": {f.name: getattr(self.prior, f.name) for f in fields(self.prior)},
        }


def layer_pairs(T: int) -> list[tuple[int, int]]:
    return list(itertools.combinations(range(T), 2))


# -- parameters ----------------------------------------------------------------

@dataclass
class ParameterState:
    """All model parameters on their natural (constrained) scale.

    Coefficient attributes are lists with one array per layer (or per layer
    pair for the cross families); arrays are empty when nothing is attached.
    """

    mu: np.ndarray
    rho: np.ndarray
    mu_cross: np.ndarray
    rho_cross: np.ndarray
    delta_mu: list
    delta_rho: list
    delta_mu_cross: list
    delta_rho_cross: list
    gamma_alpha: list
    gamma_beta: list
    sigma: np.ndarray
    omega_chol: np.ndarray
    z_actor: np.ndarray

    @property
    def T(self) -> int:
        return len(self.mu)

    @property
    def n(self) -> int:
        return self.z_actor.shape[0]

    @property
    def Omega(self) -> np.ndarray:
        return self.omega_chol @ self.omega_chol.T

    @property
    def Sigma(self) -> np.ndarray:
        """Covariance of the actor effects, ``diag(sigma) Omega diag(sigma)``."""
        return self.sigma[:, None] * self.Omega * self.sigma[None, :]

    @property
    def actor_random_effects(self) -> np.ndarray:
        """``C`` with row ``i`` equal to ``diag(sigma) @ L @ z_i``."""
        return (self.z_actor @ self.omega_chol.T) * self.sigma

    def copy(self) -> "ParameterState":
        return replace(self, **{
            f.name: ([np.array(a) for a in v] if isinstance(v, list) else np.array(v))
            for f in fields(self) for v in [getattr(self, f.name)]
        })

    @classmethod
    def zeros(cls, n: int, T: int, covs: CovariateSet | None = None) -> "ParameterState":
        """All effects zero, unit scales, identity correlation, zero latents."""
        covs = covs or CovariateSet()
        P = layer_pairs(T)
        ncov = lambda fam, key: np.zeros(len(covs.attached(fam, key)))  # noqa: E731
        return cls(
            mu=np.zeros(T), rho=np.zeros(T),
            mu_cross=np.zeros(len(P)), rho_cross=np.zeros(len(P)),
            delta_mu=[ncov("density", t) for t in range(T)],
            delta_rho=[ncov("reciprocity", t) for t in range(T)],
            delta_mu_cross=[ncov("cross_density", p) for p in P],
            delta_rho_cross=[ncov("cross_reciprocity", p) for p in P],
            gamma_alpha=[ncov("sender", t) for t in range(T)],
            gamma_beta=[ncov("receiver", t) for t in range(T)],
            sigma=np.ones(2 * T), omega_chol=np.eye(2 * T), z_actor=np.zeros((n, 2 * T)),
        )

    def set_actor_effects(self, C: np.ndarray) -> None:
        """Set ``z_actor`` so that the implied actor effects equal ``C``."""
        scaled = np.asarray(C, dtype=float) / self.sigma
        self.z_actor = np.linalg.solve(self.omega_chol, scaled.T).T


# (family, ParameterState attribute, covariate family key kind)
_COEF_BLOCKS = (
    ("density", "delta_mu", "layer"),
    ("reciprocity", "delta_rho", "layer"),
    ("cross_density", "delta_mu_cross", "pair"),
    ("cross_reciprocity", "delta_rho_cross", "pair"),
    ("sender", "gamma_alpha", "layer"),
    ("receiver", "gamma_beta", "layer"),
)


class CoefBlock(NamedTuple):
    family: str
    attr: str
    position: int          # index into the per-layer / per-pair list
    key: object            # layer index or (t, s) pair
    covariates: tuple
    start: int
    prior_sd: np.ndarray


def _label(key) -> str:
    if isinstance(key, tuple):
        return ",".join(str(k + 1) for k in key)
    return str(key + 1)


class ParameterLayout:
    """Mapping between :class:`ParameterState` and flat vectors.

    The unconstrained vector concatenates: fixed effects (baselines then
    covariate coefficients, as-is), ``log(sigma)``, the ``2T(2T-1)/2``
    correlation-Cholesky free parameters, and ``z_actor`` (row-major).
    """

    def __init__(self, n: int, T: int, covs: CovariateSet | None = None,
                 prior: PriorConfig | None = None):
        if not 1 <= T <= MAX_LAYERS:
            raise ValueError(f"T must be between 1 and {MAX_LAYERS}")
        self.n, self.T = n, T
        self.covs = covs or CovariateSet()
        self.prior = prior or PriorConfig()
        self.pairs = layer_pairs(T)
        self.K = 2 * T
        P = len(self.pairs)
        self.n_baseline = 2 * T + 2 * P
        blocks, pos = [], self.n_baseline
        for family, attr, kind in _COEF_BLOCKS:
            keys = self.pairs if kind == "pair" else range(T)
            for position, key in enumerate(keys):
                names = self.covs.attached(family, key)
                sds = np.array([self.prior.coeff_scale_numerator / self.covs.sd(c) for c in names])
                blocks.append(CoefBlock(family, attr, position, key, names, pos, sds))
                pos += len(names)
        self.blocks = blocks
        self.n_fixed = pos
        self.sigma_slice = slice(pos, pos + self.K)
        pos += self.K
        self.cpc_slice = slice(pos, pos + lkj.n_cpc(self.K))
        pos += lkj.n_cpc(self.K)
        self.z_slice = slice(pos, pos + n * self.K)
        self.dim = pos + n * self.K
        self.omega_pairs = list(itertools.combinations(range(self.K), 2))
        self.n_constrained = self.n_fixed + self.K + len(self.omega_pairs) + n * self.K

    # -- names ---------------------------------------------------------------
    def fixed_names(self) -> list[str]:
        T = self.T
        names = [f"mu[{t + 1}]" for t in range(T)] + [f"rho[{t + 1}]" for t in range(T)]
        names += [f"mu_cross[{_label(p)}]" for p in self.pairs]
        names += [f"rho_cross[{_label(p)}]" for p in self.pairs]
        for b in self.blocks:
            names += [f"{b.attr}[{_label(b.key)}][{c}]" for c in b.covariates]
        return names

    def names(self) -> list[str]:
        """Constrained parameter names, in the column order of reported draws."""
        names = self.fixed_names()
        names += [f"sigma[{k + 1}]" for k in range(self.K)]
        names += [f"Omega[{k + 1},{l + 1}]" for k, l in self.omega_pairs]
        names += [f"C[{i + 1}][{k + 1}]" for i in range(self.n) for k in range(self.K)]
        return names

    def prior_sd_fixed(self) -> np.ndarray:
        sd = np.full(self.n_fixed, self.prior.baseline_sd)
        for b in self.blocks:
            sd[b.start:b.start + len(b.covariates)] = b.prior_sd
        return sd

    # -- pack / unpack ---------------------------------------------------------
    def unpack(self, theta: np.ndarray) -> ParameterState:
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.dim,):
            raise ValueError(f"expected vector of length {self.dim}, got {theta.shape}")
        T, P = self.T, len(self.pairs)
        lists = {attr: [] for _, attr, _ in _COEF_BLOCKS}
        for b in self.blocks:
            lists[b.attr].append(theta[b.start:b.start + len(b.covariates)].copy())
        L, _ = lkj.cholesky_corr_constrain(theta[self.cpc_slice], self.K)
        return ParameterState(
            mu=theta[:T].copy(), rho=theta[T:2 * T].copy(),
            mu_cross=theta[2 * T:2 * T + P].copy(), rho_cross=theta[2 * T + P:2 * T + 2 * P].copy(),
            sigma=np.exp(theta[self.sigma_slice]), omega_chol=L,
            z_actor=theta[self.z_slice].reshape(self.n, self.K).copy(), **lists,
        )

    def pack(self, params: ParameterState) -> np.ndarray:
        if np.any(params.sigma <= 0):
            raise ValueError("sigma must be strictly positive")
        theta = np.empty(self.dim)
        T, P = self.T, len(self.pairs)
        theta[:T], theta[T:2 * T] = params.mu, params.rho
        theta[2 * T:2 * T + P], theta[2 * T + P:2 * T + 2 * P] = params.mu_cross, params.rho_cross
        for b in self.blocks:
            theta[b.start:b.start + len(b.covariates)] = getattr(params, b.attr)[b.position]
        theta[self.sigma_slice] = np.log(params.sigma)
        theta[self.cpc_slice] = lkj.cholesky_corr_free(params.omega_chol)
        theta[self.z_slice] = np.asarray(params.z_actor, dtype=float).ravel()
        return theta

    def constrain(self, theta: np.ndarray) -> np.ndarray:
        """Constrained vector matching :meth:`names` for one unconstrained point."""
        state = self.unpack(theta)
        Omega = state.Omega
        return np.concatenate([
            theta[:self.n_fixed], state.sigma,
            [Omega[k, l] for k, l in self.omega_pairs],
            state.actor_random_effects.ravel(),
        ])

    def from_constrained(self, row: np.ndarray) -> ParameterState:
        """Rebuild a :class:`ParameterState` from a row of reported draws."""
        row = np.asarray(row, dtype=float)
        pos = self.n_fixed
        sigma = row[pos:pos + self.K]
        pos += self.K
        Omega = np.eye(self.K)
        for v, (k, l) in zip(row[pos:pos + len(self.omega_pairs)], self.omega_pairs):
            Omega[k, l] = Omega[l, k] = v
        pos += len(self.omega_pairs)
        C = row[pos:pos + self.n * self.K].reshape(self.n, self.K)
        theta = np.zeros(self.dim)
        theta[:self.n_fixed] = row[:self.n_fixed]
        state = self.unpack(theta)
        state.sigma = sigma.copy()
        state.omega_chol = np.linalg.cholesky(Omega)
        state.set_actor_effects(C)
        return state


# -- per-dyad model terms ------------------------------------------------------

class DyadEffects(NamedTuple):
    """Total dyad-level effects for one dyad ``{i, j}`` with ``i < j``.

    ``mu_ij``/``mu_ji`` are per-layer density effects for the two directions,
    ``rho`` per-layer reciprocity, ``mu_cross``/``rho_cross`` per layer pair.
    """

    mu_ij: np.ndarray
    mu_ji: np.ndarray
    rho: np.ndarray
    mu_cross: np.ndarray
    rho_cross: np.ndarray


def _cov_term(covs: CovariateSet, family, key, coef, i, j) -> float:
    names = covs.attached(family, key)
    if len(names) != len(coef):
        raise ValueError(f"{family}[{key}]: {len(coef)} coefficients for {len(names)} covariates")
    return float(sum(c * covs.dyadic[name][i, j] for name, c in zip(names, coef)))


def dyad_effects(params: ParameterState, covs: CovariateSet | None, i: int, j: int) -> DyadEffects:
    """Baselines plus dyadic covariate terms for the dyad ``{i, j}``.

    The ``j -> i`` density uses ``Z[j, i]``; reciprocity and cross-layer terms
    use ``Z[i, j]``.
    """
    covs = covs or CovariateSet()
    T = params.T
    pairs = layer_pairs(T)
    mu_ij = np.array([params.mu[t] + _cov_term(covs, "density", t, params.delta_mu[t], i, j)
                      for t in range(T)])
    mu_ji = np.array([params.mu[t] + _cov_term(covs, "density", t, params.delta_mu[t], j, i)
                      for t in range(T)])
    rho = np.array([params.rho[t] + _cov_term(covs, "reciprocity", t, params.delta_rho[t], i, j)
                    for t in range(T)])
    mu_c = np.array([params.mu_cross[p] + _cov_term(covs, "cross_density", key,
                                                    params.delta_mu_cross[p], i, j)
                     for p, key in enumerate(pairs)])
    rho_c = np.array([params.rho_cross[p] + _cov_term(covs, "cross_reciprocity", key,
                                                      params.delta_rho_cross[p], i, j)
                      for p, key in enumerate(pairs)])
    return DyadEffects(mu_ij, mu_ji, rho, mu_c, rho_c)


def actor_effects(params: ParameterState, covs: CovariateSet | None = None):
    """Sender and receiver effects ``alpha, beta``, each of shape ``(n, T)``."""
    covs = covs or CovariateSet()
    C = params.actor_random_effects
    alpha, beta = C[:, 0::2].copy(), C[:, 1::2].copy()
    for t in range(params.T):
        for fam, coef, out in (("sender", params.gamma_alpha[t], alpha),
                               ("receiver", params.gamma_beta[t], beta)):
            for name, g in zip(covs.attached(fam, t), coef):
                out[:, t] += g * covs.actor[name]
    return alpha, beta


def dyad_score(effects: DyadEffects, alpha: np.ndarray, beta: np.ndarray,
               outcome: DyadOutcome, i: int, j: int) -> float:
    """Unnormalized log-probability ``K_ij`` of a fully observed dyad outcome."""
    if not outcome.observed:
        raise ValueError("dyad_score needs a fully observed outcome; use dyad_log_lik")
    T = outcome.T
    fwd = [outcome.bit(2 * t) for t in range(T)]
    bwd = [outcome.bit(2 * t + 1) for t in range(T)]
    k = 0.0
    for t in range(T):
        k += fwd[t] * (effects.mu_ij[t] + alpha[i, t] + beta[j, t])
        k += bwd[t] * (effects.mu_ji[t] + alpha[j, t] + beta[i, t])
        k += fwd[t] * bwd[t] * effects.rho[t]
    for p, (t, s) in enumerate(layer_pairs(T)):
        k += (fwd[t] * fwd[s] + bwd[t] * bwd[s]) * effects.mu_cross[p]
        k += (fwd[t] * bwd[s] + bwd[t] * fwd[s]) * effects.rho_cross[p]
    return k


def dyad_log_prob_table(params: ParameterState, covs: CovariateSet | None, i: int, j: int) -> np.ndarray:
    """Log-probabilities of all ``2^(2T)`` outcomes of the dyad ``{i, j}``."""
    T = params.T
    if T > MAX_LAYERS:
        raise ValueError(f"at most {MAX_LAYERS} layers supported")
    eff = dyad_effects(params, covs, i, j)
    alpha, beta = actor_effects(params, covs)
    scores = np.array([dyad_score(eff, alpha, beta, DyadOutcome(o, 0, T), i, j)
                       for o in range(1 << (2 * T))])
    return scores - logsumexp(scores)


def dyad_log_lik(params: ParameterState, covs: CovariateSet | None,
                 outcome: DyadOutcome, i: int, j: int) -> float:
    """Log-probability of an outcome, summing over completions of masked bits."""
    table = dyad_log_prob_table(params, covs, i, j)
    if outcome.observed:
        return float(table[outcome.index])
    return float(logsumexp(table[outcome.compatible()]))


# -- vectorized engine ---------------------------------------------------------

def outcome_features(T: int) -> np.ndarray:
    """Design matrix mapping each outcome word to the terms of ``K_ij``.

    Columns ``3t, 3t+1, 3t+2`` are the ``i->j`` tie, ``j->i`` tie and mutual
    indicator of layer ``t``; then two columns per layer pair ``(t, s)``: the
    cross-density and cross-reciprocity counts.
    """
    o = np.arange(1 << (2 * T))
    b = (o[:, None] >> np.arange(2 * T)[None, :]) & 1
    cols = []
    for t in range(T):
        cols += [b[:, 2 * t], b[:, 2 * t + 1], b[:, 2 * t] * b[:, 2 * t + 1]]
    for t, s in layer_pairs(T):
        cols.append(b[:, 2 * t] * b[:, 2 * s] + b[:, 2 * t + 1] * b[:, 2 * s + 1])
        cols.append(b[:, 2 * t] * b[:, 2 * s + 1] + b[:, 2 * t + 1] * b[:, 2 * s])
    return np.stack(cols, axis=1).astype(float)


class P2Model:
    """Data-free multiplex p2 model for ``n`` actors and ``T`` layers.

    Evaluates dyad probability tables for every dyad at once; used for
    simulation and as the base of :class:`P2Posterior`.
    """

    def __init__(self, n: int, T: int, covs: CovariateSet | None = None,
                 prior: PriorConfig | None = None):
        covs = covs or CovariateSet()
        covs.check(n, T)
        self.covs = covs
        self.prior = prior or PriorConfig()
        self.layout = ParameterLayout(n, T, covs, self.prior)
        self.n, self.T = n, T
        self.I, self.J = dyad_index(n)
        self.D = len(self.I)
        self.features = outcome_features(T)
        self.n_outcomes = self.features.shape[0]

        dyadic = list(covs.dyadic)
        col = {name: k for k, name in enumerate(dyadic)}
        if dyadic:
            Z = np.stack([covs.dyadic[name] for name in dyadic], axis=2)
            self.Zf, self.Zb = Z[self.I, self.J, :], Z[self.J, self.I, :]
        else:
            self.Zf = self.Zb = np.zeros((self.D, 0))
        actor = list(covs.actor)
        acol = {name: k for k, name in enumerate(actor)}
        self.X = np.stack([covs.actor[a] for a in actor], axis=1) if actor else np.zeros((n, 0))
        self._blocks = []
        for b in self.layout.blocks:
            if b.covariates:
                lookup = acol if b.family in ("sender", "receiver") else col
                idx = np.array([lookup[c] for c in b.covariates])
                self._blocks.append((b, idx, slice(b.start, b.start + len(idx))))

        self._lkj_const = lkj.lkj_log_normalizer(self.layout.K, self.prior.lkj_eta) if T else 0.0

    @property
    def dim(self) -> int:
        return self.layout.dim

    # -- forward pieces ------------------------------------------------------
    def _state_arrays(self, theta):
        lay = self.layout
        T, P, K = self.T, len(lay.pairs), lay.K
        sigma = np.exp(theta[lay.sigma_slice])
        L, log_jac = lkj.cholesky_corr_constrain(theta[lay.cpc_slice], K)
        z = theta[lay.z_slice].reshape(self.n, K)
        zL = z @ L.T
        C = zL * sigma
        alpha, beta = C[:, 0::2].copy(), C[:, 1::2].copy()
        for b, idx, sl in self._blocks:
            if b.family == "sender":
                alpha[:, b.key] += self.X[:, idx] @ theta[sl]
            elif b.family == "receiver":
                beta[:, b.key] += self.X[:, idx] @ theta[sl]
        eta = np.empty((self.D, 3 * T + 2 * P))
        mu, rho = theta[:T], theta[T:2 * T]
        eta[:, 0:3 * T:3] = mu + alpha[self.I] + beta[self.J]
        eta[:, 1:3 * T:3] = mu + alpha[self.J] + beta[self.I]
        eta[:, 2:3 * T:3] = rho
        eta[:, 3 * T::2] = theta[2 * T:2 * T + P]
        eta[:, 3 * T + 1::2] = theta[2 * T + P:2 * T + 2 * P]
        for b, idx, sl in self._blocks:
            coef = theta[sl]
            if b.family == "density":
                eta[:, 3 * b.key] += self.Zf[:, idx] @ coef
                eta[:, 3 * b.key + 1] += self.Zb[:, idx] @ coef
            elif b.family == "reciprocity":
                eta[:, 3 * b.key + 2] += self.Zf[:, idx] @ coef
            elif b.family in ("cross_density", "cross_reciprocity"):
                c = 3 * T + 2 * b.position + (b.family == "cross_reciprocity")
                eta[:, c] += self.Zf[:, idx] @ coef
        return eta, sigma, L, log_jac, z, zL

    def dyad_linear_terms(self, params: ParameterState) -> np.ndarray:
        """Per-dyad values of the ``K_ij`` terms, shape ``(D, n_features)``."""
        return self._state_arrays(self.layout.pack(params))[0]

    def log_prob_tables(self, params: ParameterState | np.ndarray) -> np.ndarray:
        """Log-probability tables for all dyads, shape ``(D, 2^(2T))``."""
        theta = params if isinstance(params, np.ndarray) else self.layout.pack(params)
        scores = self._state_arrays(theta)[0] @ self.features.T
        return scores - logsumexp(scores, axis=1, keepdims=True)

    def log_prior(self, theta: np.ndarray) -> float:
        """Prior log-density on the constrained scale (no transform Jacobians)."""
        lay, pr = self.layout, self.prior
        fixed = theta[:lay.n_fixed]
        sd = lay.prior_sd_fixed()
        lp = -0.5 * np.sum((fixed / sd) ** 2) - np.sum(np.log(sd)) - 0.5 * LOG_2PI * len(fixed)
        log_sigma = theta[lay.sigma_slice]
        a, b = pr.sigma_shape, pr.sigma_scale
        lp += np.sum(a * np.log(b) - gammaln(a) - (a + 1) * log_sigma - b * np.exp(-log_sigma))
        L, _ = lkj.cholesky_corr_constrain(theta[lay.cpc_slice], lay.K)
        lp += (pr.lkj_eta - 1.0) * 2.0 * np.sum(np.log(np.diag(L))) - self._lkj_const
        z = theta[lay.z_slice]
        lp += -0.5 * np.dot(z, z) - 0.5 * LOG_2PI * len(z)
        return float(lp)


class P2Posterior(P2Model):
    """Unconstrained log-posterior of the multiplex p2 model given a network.

    Parameters
    ----------
    net : MultiplexNetwork
    covs : CovariateSet, optional
    prior : PriorConfig, optional
    """

    def __init__(self, net: MultiplexNetwork, covs: CovariateSet | None = None,
                 prior: PriorConfig | None = None):
        super().__init__(net.n, net.T, covs, prior)
        self.net = net
        bits, mask = dyad_codes(net)
        full = (1 << (2 * net.T)) - 1
        self.n_complete = int(np.sum(mask == 0))
        self.n_unobserved = int(np.sum(mask == full))
        self._prior_sd = self.layout.prior_sd_fixed()
        self._fixed_const = np.sum(np.log(self._prior_sd)) + 0.5 * LOG_2PI * len(self._prior_sd)
        self._data = self._pack_kernel_data(bits, mask)

    def names(self) -> list[str]:
        return self.layout.names()

    def constrain(self, theta: np.ndarray) -> np.ndarray:
        return self.layout.constrain(theta)

    def _pack_kernel_data(self, bits, mask):
        lay, pr = self.layout, self.prior
        T, P = self.T, len(lay.pairs)
        full = (1 << (2 * T)) - 1
        status = np.where(mask == 0, _lik.COMPLETE, np.where(mask == full, _lik.UNOBSERVED, _lik.PARTIAL))
        keep = ~mask & full
        const = [(3 * t, t) for t in range(T)] + [(3 * t + 1, t) for t in range(T)]
        const += [(3 * t + 2, T + t) for t in range(T)]
        const += [(3 * T + 2 * p, 2 * T + p) for p in range(P)]
        const += [(3 * T + 2 * p + 1, 2 * T + P + p) for p in range(P)]
        cov, act = [], []
        for b, idx, sl in self._blocks:
            for c, k in zip(idx, range(sl.start, sl.stop)):
                if b.family == "density":
                    cov += [(3 * b.key, k, c, 0), (3 * b.key + 1, k, c, 1)]
                elif b.family == "reciprocity":
                    cov.append((3 * b.key + 2, k, c, 0))
                elif b.family == "cross_density":
                    cov.append((3 * T + 2 * b.position, k, c, 0))
                elif b.family == "cross_reciprocity":
                    cov.append((3 * T + 2 * b.position + 1, k, c, 0))
                else:
                    act.append((0 if b.family == "sender" else 1, b.key, k, c))
        a, scale = pr.sigma_shape, pr.sigma_scale
        ints = np.array([self.n, T, lay.K, self.D, lay.n_fixed, lay.sigma_slice.start,
                         lay.cpc_slice.start, lay.z_slice.start, lay.dim], dtype=np.int64)
        floats = np.array([self._fixed_const, a, scale, a * np.log(scale) - gammaln(a),
                           pr.lkj_eta, self._lkj_const])

        def table(rows, width):
            return np.array(rows, dtype=np.int64).reshape(-1, width)

        return (ints, floats, self.I.astype(np.int64), self.J.astype(np.int64),
                status.astype(np.int64), (bits & keep).astype(np.int64), keep.astype(np.int64),
                table(const, 2), table(cov, 4), np.ascontiguousarray(self.Zf, dtype=float),
                np.ascontiguousarray(self.Zb, dtype=float), table(act, 4),
                np.ascontiguousarray(self.X, dtype=float), self._prior_sd.astype(float),
                (0,) * T)

    @property
    def kernel(self):
        """``(function, data)`` for the compiled sampler: ``function(theta, grad_out, data) -> logp``."""
        return _lik.p2_logp_into, self._data

    def log_likelihood(self, theta: np.ndarray) -> float:
        """Sum of dyad log-likelihoods, marginalizing missing ties."""
        theta = np.ascontiguousarray(theta, dtype=float)
        return float(_lik.p2_logp_grad(theta, np.empty(self.dim), self._data)[1])

    def logp_grad(self, theta: np.ndarray) -> tuple[float, np.ndarray]:
        """Log-posterior (with transform Jacobians) and its gradient at ``theta``."""
        theta = np.ascontiguousarray(theta, dtype=float)
        if theta.shape != (self.dim,):
            raise ValueError(f"expected vector of length {self.dim}, got {theta.shape}")
        grad = np.empty(self.dim)
        lp = _lik.p2_logp_grad(theta, grad, self._data)[0]
        return float(lp), grad

    def log_density(self, theta: np.ndarray) -> float:
        return self.logp_grad(theta)[0]

    def gradient(self, theta: np.ndarray) -> np.ndarray:
        return self.logp_grad(theta)[1]


# -- functional API ------------------------------------------------------------

def log_likelihood(net: MultiplexNetwork, params: ParameterState,
                   covs: CovariateSet | None = None) -> float:
    """Sum of dyad log-likelihoods over all dyads, marginalizing missing ties."""
    post = P2Posterior(net, covs)
    return float(post.log_likelihood(post.layout.pack(params)))


def log_prior(params: ParameterState, prior: PriorConfig | None = None,
              covs: CovariateSet | None = None) -> float:
    """Prior log-density of ``params`` on the constrained scale."""
    if np.any(np.asarray(params.sigma) <= 0):
        raise ValueError("sigma must be strictly positive")
    model = P2Model(params.n, params.T, covs, prior)
    return model.log_prior(model.layout.pack(params))


def log_posterior_unconstrained(theta: np.ndarray, net: MultiplexNetwork,
                                covs: CovariateSet | None = None,
                                prior: PriorConfig | None = None) -> float:
    return P2Posterior(net, covs, prior).log_density(theta)


def gradient(theta: np.ndarray, net: MultiplexNetwork, covs: CovariateSet | None = None,
             prior: PriorConfig | None = None) -> np.ndarray:
    return P2Posterior(net, covs, prior).gradient(theta)
