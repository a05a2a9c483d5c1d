"""Prior draws, exact network simulation and posterior predictive batches."""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import lkj
from .model import ModelSpec, P2Model, ParameterLayout, ParameterState, PriorConfig
from .network import CovariateSet, MultiplexNetwork, load_bundle, network_from_codes, write_bundle
from .sampler import DrawsMatrix


@dataclass
class SimBatch:
    """Simulated networks with the parameter values that generated them."""

    networks: list
    provenance: str
    parameter_draws: list = field(default_factory=list)

    def __post_init__(self):
        if self.provenance not in ("prior", "posterior", "fixed"):
            raise ValueError(f"unknown provenance {self.provenance!r}")
        if len(self.networks) != len(self.parameter_draws):
            raise ValueError("networks and parameter_draws must have the same length")

    def __len__(self):
        return len(self.networks)

    def write(self, directory, extra: dict | None = None) -> Path:
        """Write ``net_XXXXX.json`` bundles plus ``manifest.json``; returns the manifest path."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        files = []
        for k, net in enumerate(self.networks):
            name = f"net_{k + 1:05d}.json"
            write_bundle(directory / name, net)
            files.append(name)
        manifest = {"provenance": self.provenance, "count": len(files), "files": files,
                    **(extra or {})}
        path = directory / "manifest.json"
        with open(path, "w") as fh:
            json.dump(manifest, fh, indent=2)
        return path

    @classmethod
    def read(cls, directory) -> "SimBatch":
        directory = Path(directory)
        with open(directory / "manifest.json") as fh:
            manifest = json.load(fh)
        nets = [load_bundle(directory / f)[0] for f in manifest["files"]]
        return cls(nets, manifest["provenance"], [None] * len(nets))


def draw_prior(spec: ModelSpec, prior: PriorConfig | None, n: int, rng: np.random.Generator,
               covs: CovariateSet | None = None) -> ParameterState:
    """One draw of every parameter from the prior.

    Baselines and coefficients are normal, scales inverse-gamma, the
    correlation matrix LKJ, and the actor latents standard normal.
    """
    prior = prior or spec.prior
    covs = covs or CovariateSet()
    layout = ParameterLayout(n, spec.T, covs, prior)
    theta = np.empty(layout.dim)
    theta[:layout.n_fixed] = rng.normal(0.0, layout.prior_sd_fixed())
    sigma = prior.sigma_scale / rng.gamma(prior.sigma_shape, 1.0, size=layout.K)
    state = layout.unpack(np.concatenate([theta[:layout.n_fixed], np.zeros(layout.dim - layout.n_fixed)]))
    state.sigma = sigma
    state.omega_chol = lkj.lkj_corr_cholesky_rng(layout.K, prior.lkj_eta, rng)
    state.z_actor = rng.standard_normal((n, layout.K))
    return state


def _sample_codes(log_tables: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    cdf = np.cumsum(np.exp(log_tables), axis=1)
    u = rng.uniform(size=(len(cdf), 1)) * cdf[:, -1:]
    return np.minimum((cdf < u).sum(axis=1), cdf.shape[1] - 1)


def simulate_network(params: ParameterState, covs: CovariateSet | None, n: int, T: int,
                     rng: np.random.Generator, model: P2Model | None = None,
                     layer_names=()) -> MultiplexNetwork:
    """Sample a complete network, one categorical outcome per dyad."""
    if params.n != n or params.T != T:
        raise ValueError(f"parameters are for n={params.n}, T={params.T}")
    model = model or P2Model(n, T, covs)
    codes = _sample_codes(model.log_prob_tables(params), rng)
    return network_from_codes(codes, n, T, layer_names=tuple(layer_names))


def prior_predictive(spec: ModelSpec, n: int, count: int, rng: np.random.Generator,
                     covs: CovariateSet | None = None, prior: PriorConfig | None = None) -> SimBatch:
    """Networks simulated from fresh prior draws (covariate-free unless ``covs`` is given)."""
    covs = covs or CovariateSet()
    model = P2Model(n, spec.T, covs, prior or spec.prior)
    nets, params = [], []
    for _ in range(count):
        state = draw_prior(spec, prior, n, rng, covs)
        nets.append(simulate_network(state, covs, n, spec.T, rng, model, spec.layer_names))
        params.append(state)
    return SimBatch(nets, "prior", params)


def layout_from_names(names, covs: CovariateSet | None = None,
                      prior: PriorConfig | None = None) -> ParameterLayout:
    """Recover the :class:`ParameterLayout` that produced a set of draw columns."""
    T = sum(1 for nm in names if re.fullmatch(r"mu\[\d+\]", nm))
    nC = sum(1 for nm in names if nm.startswith("C["))
    if T == 0 or nC % (2 * T):
        raise ValueError("draw columns do not describe a multiplex p2 model")
    layout = ParameterLayout(nC // (2 * T), T, covs, prior)
    if layout.names() != list(names):
        raise ValueError("draw columns do not match the covariate attachments")
    return layout


def thin_indices(total: int, count: int) -> np.ndarray:
    """``count`` equally spaced indices into ``range(total)``."""
    if count > total:
        raise ValueError(f"cannot select {count} of {total} draws")
    return (np.arange(count) * total) // count if count else np.zeros(0, dtype=int)


def posterior_predictive(draws: DrawsMatrix, covs: CovariateSet | None, count: int,
                         rng: np.random.Generator, layer_names=()) -> SimBatch:
    """Simulate one network per equally spaced posterior draw (chains merged in order).

    Actor effects are taken from each draw, so the batch describes the observed
    actors rather than new ones.
    """
    flat = draws.flat()
    if len(flat) == 0:
        raise ValueError("no posterior draws")
    covs = covs or CovariateSet()
    layout = layout_from_names(draws.names, covs)
    model = P2Model(layout.n, layout.T, covs)
    nets, params = [], []
    for k in thin_indices(len(flat), count):
        state = layout.from_constrained(flat[k])
        nets.append(simulate_network(state, covs, layout.n, layout.T, rng, model, layer_names))
        params.append(state)
    return SimBatch(nets, "posterior", params)


_COEF_ATTRS = ("delta_mu", "delta_rho", "delta_mu_cross", "delta_rho_cross", "gamma_alpha", "gamma_beta")


def state_from_dict(doc: dict, n: int, T: int, covs: CovariateSet | None = None) -> ParameterState:
    """Build a :class:`ParameterState` from a JSON-style mapping.

    Recognized keys: ``mu``, ``rho`` (length ``T``), ``mu_cross``,
    ``rho_cross`` (one per layer pair), the coefficient lists ``delta_*`` and
    ``gamma_*`` (one list per layer or pair), ``sigma`` (length ``2T``),
    ``omega`` (``2T x 2T`` correlation matrix) and ``actor_effects``
    (``n x 2T``). Missing keys keep the values of :meth:`ParameterState.zeros`.
    """
    unknown = set(doc) - {"mu", "rho", "mu_cross", "rho_cross", "sigma", "omega",
                          "actor_effects", *_COEF_ATTRS}
    if unknown:
        raise ValueError(f"unknown parameter keys: {sorted(unknown)}")
    state = ParameterState.zeros(n, T, covs)
    for key in ("mu", "rho", "mu_cross", "rho_cross", "sigma"):
        if key in doc:
            value = np.asarray(doc[key], dtype=float)
            if value.shape != getattr(state, key).shape:
                raise ValueError(f"{key}: expected {getattr(state, key).shape[0]} values, got {value.size}")
            setattr(state, key, value)
    for key in _COEF_ATTRS:
        if key in doc:
            values = [np.asarray(v, dtype=float) for v in doc[key]]
            if [v.shape for v in values] != [v.shape for v in getattr(state, key)]:
                raise ValueError(f"{key}: coefficient shapes do not match the covariate attachments")
            setattr(state, key, values)
    if np.any(state.sigma <= 0):
        raise ValueError("sigma must be positive")
    if "omega" in doc:
        omega = np.asarray(doc["omega"], dtype=float)
        if omega.shape != (2 * T, 2 * T) or not np.allclose(np.diag(omega), 1.0):
            raise ValueError("omega must be a 2T x 2T correlation matrix")
        try:
            state.omega_chol = np.linalg.cholesky(omega)
        except np.linalg.LinAlgError:
            raise ValueError("omega is not positive definite") from None
    if "actor_effects" in doc:
        C = np.asarray(doc["actor_effects"], dtype=float)
        if C.shape != (n, 2 * T):
            raise ValueError(f"actor_effects must have shape ({n}, {2 * T})")
        state.set_actor_effects(C)
    return state


def state_to_dict(state: ParameterState) -> dict:
    return {"mu": state.mu.tolist(), "rho": state.rho.tolist(), "mu_cross": state.mu_cross.tolist(),
            "rho_cross": state.rho_cross.tolist(),
            **{k: [c.tolist() for c in getattr(state, k)] for k in _COEF_ATTRS},
            "sigma": state.sigma.tolist(), "omega": state.Omega.tolist(),
            "actor_effects": state.actor_random_effects.tolist()}
