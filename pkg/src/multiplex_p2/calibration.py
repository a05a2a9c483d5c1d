"""Simulation-based calibration, sensitivity and parameter-recovery studies.

Every study is a set of independent replications. Replication ``r`` draws
its randomness from ``SeedSequence(seed, spawn_key=(r,))`` so results do not
depend on worker count or on which replications were resumed from a
checkpoint directory (one JSON file per finished replication).

Fits go through a *fit function* ``fit(net, covs, prior, config, seed) ->
DrawsMatrix``; the default runs NUTS on :class:`~multiplex_p2.model.P2Posterior`.
Tests substitute cheap fake fitters to check the bookkeeping.
"""

from __future__ import annotations

import csv
import json
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy import stats

from . import lkj
from .model import ModelSpec, P2Posterior, ParameterLayout, ParameterState, PriorConfig
from .network import CovariateSet
from .sampler import DrawsMatrix, SamplerConfig, rhat, sample
from .simulate import draw_prior, simulate_network, thin_indices

RHAT_LIMIT = 1.05


class CalibrationError(ValueError):
    """Raised for invalid study settings."""


def fit_posterior(net, covs, prior, config: SamplerConfig, seed: int) -> DrawsMatrix:
    """Default fit function: NUTS on the multiplex p2 posterior."""
    return sample(P2Posterior(net, covs, prior), replace(config, seed=seed))


def default_parameters(layout: ParameterLayout) -> list[str]:
    """Fixed effects, random-effect scales and correlations (actor effects excluded)."""
    return layout.fixed_names() + layout.names()[layout.n_fixed:layout.n_fixed + layout.K
                                                   + len(layout.omega_pairs)]


def true_values(layout: ParameterLayout, state: ParameterState) -> np.ndarray:
    """Constrained vector of ``state`` in :meth:`ParameterLayout.names` order."""
    return layout.constrain(layout.pack(state))


def _rep_rng(seed: int, rep: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(rep,)))


def _rep_seed(seed: int, rep: int) -> int:
    return int(np.random.SeedSequence(seed, spawn_key=(rep, 1)).generate_state(1)[0])


def max_rhat(draws: DrawsMatrix, names=None) -> float:
    """Largest split R-hat over ``names`` (all columns by default); ``nan`` with one chain."""
    if draws.n_chains < 2:
        return float("nan")
    cols = names if names is not None else draws.names
    values = []
    for name in cols:
        col = draws.column(name)
        values.append(rhat(col) if np.ptp(col) > 0 else 1.0)
    return float(max(values)) if values else float("nan")


def _run_replications(job, reps, checkpoint, workers, label, fingerprint):
    """Run ``job(rep)`` for every replication, reusing checkpointed results.

    ``fingerprint`` (a JSON-able description of the study) is stored next to
    the checkpoints; resuming with a different fingerprint is an error.
    """
    directory = Path(checkpoint) if checkpoint else None
    if directory:
        directory.mkdir(parents=True, exist_ok=True)
        stamp = directory / f"{label}_study.json"
        doc = json.loads(json.dumps(fingerprint, default=str))
        if stamp.exists():
            with open(stamp) as fh:
                if json.load(fh) != doc:
                    raise CalibrationError(f"{directory} holds checkpoints of a different {label} study")
        else:
            with open(stamp, "w") as fh:
                json.dump(doc, fh, indent=2)
    done, todo = {}, []
    for r in reps:
        path = directory / f"{label}_{r:05d}.json" if directory else None
        if path is not None and path.exists():
            with open(path) as fh:
                done[r] = json.load(fh)
        else:
            todo.append(r)

    def store(r, out):
        done[r] = out
        if directory:
            tmp = directory / f".{label}_{r:05d}.json.tmp"
            with open(tmp, "w") as fh:
                json.dump(out, fh)
            tmp.replace(directory / f"{label}_{r:05d}.json")

    if workers > 1 and len(todo) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for r, out in zip(todo, pool.map(job, todo)):
                store(r, out)
    else:
        for r in todo:
            store(r, job(r))
    return [done[r] for r in reps]


def _fingerprint(spec, prior, n, T, config, seed, names, fit, **extra) -> dict:
    return {"model": spec.to_dict(), "prior": asdict(prior), "n": n, "T": T,
            "sampler": asdict(config), "seed": seed, "parameters": list(names),
            "fit": f"{getattr(fit, '__module__', '')}.{getattr(fit, '__qualname__', type(fit).__qualname__)}",
            **extra}


def _nan_to_none(values):
    return [None if not np.isfinite(v) else float(v) for v in values]


def _none_to_nan(values):
    return np.array([np.nan if v is None else v for v in values], dtype=float)


# -- simulation-based calibration ---------------------------------------------

@dataclass
class SbcResult:
    """Rank statistics of one SBC run.

    ``ranks`` has one row per retained replication and one column per
    parameter; each entry is in ``[0, K]``. Replications that failed the
    convergence filter are listed in ``excluded``.
    """

    names: list
    ranks: np.ndarray
    K: int
    replications: list
    excluded: list = field(default_factory=list)
    max_rhat: list = field(default_factory=list)

    @property
    def L(self) -> int:
        return len(self.replications) + len(self.excluded)

    def p_values(self, bins: int | None = None) -> np.ndarray:
        return uniformity_check(self.ranks, self.K, bins)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["parameter", "replication", "rank"])
            for k, name in enumerate(self.names):
                for r, rep in enumerate(self.replications):
                    w.writerow([name, rep + 1, int(self.ranks[r, k])])

    def summary(self, bins: int | None = None, level: float = 0.01) -> dict:
        p = self.p_values(bins) if len(self.replications) else np.full(len(self.names), np.nan)
        return {"L": self.L, "K": self.K, "retained": len(self.replications),
                "excluded": [r + 1 for r in self.excluded], "n_excluded": len(self.excluded),
                "level": level, "share_not_rejected": float(np.mean(p > level)),
                "p_values": dict(zip(self.names, _nan_to_none(p)))}

    def write_json(self, path, bins: int | None = None) -> None:
        with open(path, "w") as fh:
            json.dump(self.summary(bins), fh, indent=2)


def default_bins(L: int, K: int) -> int:
    """Up to 20 bins, keeping at least 5 expected ranks per bin."""
    return max(1, min(20, K + 1, L // 5))


def uniformity_check(ranks, K: int, bins: int | None = None) -> np.ndarray:
    """Chi-square p-value of each rank column against the discrete uniform on ``0..K``.

    Ranks are grouped into ``bins`` contiguous groups of near-equal width
    (``floor(rank * bins / (K + 1))``); expected counts are proportional to
    the number of rank values in each group, so ``K + 1`` need not be a
    multiple of ``bins``.

    Raises
    ------
    CalibrationError
        If any bin expects fewer than 5 ranks.
    """
    ranks = np.asarray(ranks)
    if ranks.ndim == 1:
        ranks = ranks[:, None]
    L = ranks.shape[0]
    bins = bins or default_bins(L, K)
    if not 1 <= bins <= K + 1:
        raise CalibrationError(f"bins must lie in [1, {K + 1}]")
    if np.any(ranks < 0) or np.any(ranks > K):
        raise CalibrationError(f"ranks must lie in [0, {K}]")
    width = np.bincount(np.arange(K + 1) * bins // (K + 1), minlength=bins)
    expected = L * width / (K + 1)
    if expected.min() < 5:
        raise CalibrationError(f"{L} ranks in {bins} bins leaves fewer than 5 expected per bin")
    p = np.empty(ranks.shape[1])
    for k in range(ranks.shape[1]):
        observed = np.bincount(ranks[:, k].astype(int) * bins // (K + 1), minlength=bins)
        p[k] = stats.chisquare(observed, expected).pvalue
    return p


def sbc_rank(truth: np.ndarray, draws: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Number of draws strictly below the truth, ties split uniformly at random.

    ``draws`` has shape ``(K, P)``; returns ``P`` ranks in ``[0, K]``.
    """
    below = (draws < truth).sum(axis=0)
    ties = (draws == truth).sum(axis=0)
    return below + rng.integers(0, ties + 1)


def _study_setup(spec, prior, n, T, covs, parameters):
    prior = prior or spec.prior
    if spec.T != T:
        raise CalibrationError(f"model has {spec.T} layers, study asks for {T}")
    covs = covs or CovariateSet()
    layout = ParameterLayout(n, T, covs, prior)
    names = list(parameters) if parameters is not None else default_parameters(layout)
    all_names = layout.names()
    missing = [nm for nm in names if nm not in all_names]
    if missing:
        raise CalibrationError(f"unknown parameters: {missing}")
    return prior, covs, layout, names, [all_names.index(nm) for nm in names]


def sbc_run(spec: ModelSpec, prior: PriorConfig | None, n: int, T: int, L: int, K: int,
            sampler_config: SamplerConfig, seed: int, covs: CovariateSet | None = None,
            parameters=None, fit=None, rhat_limit: float = RHAT_LIMIT,
            checkpoint=None, workers: int = 1) -> SbcResult:
    """Simulation-based calibration over ``L`` prior replications.

    Each replication draws parameters from the prior, simulates a network,
    fits it, keeps ``K`` equally spaced draws of the merged chains and records
    the rank of the true value among them.

    Parameters
    ----------
    spec, prior : model and prior (``prior`` overrides ``spec.prior``)
    n, T : network size
    L, K : replications and retained posterior draws
    sampler_config : SamplerConfig
    seed : master seed
    covs : covariates held fixed across replications
    parameters : names to rank; default :func:`default_parameters`
    fit : fit function, default :func:`fit_posterior`
    rhat_limit : replications with any ranked parameter at or above this
        split R-hat are excluded (and counted)
    checkpoint : directory for per-replication results, enabling resume
    workers : parallel processes
    """
    if K > sampler_config.chains * sampler_config.draws_per_chain:
        raise CalibrationError("K exceeds the number of post-warmup draws")
    if L < 1 or K < 1:
        raise CalibrationError("L and K must be positive")
    prior, covs, layout, names, cols = _study_setup(spec, prior, n, T, covs, parameters)
    job = _SbcJob(spec, prior, n, T, K, sampler_config, seed, covs, names, cols,
                  fit or fit_posterior, rhat_limit, layout)
    fp = _fingerprint(spec, prior, n, T, sampler_config, seed, names, job.fit, rhat=rhat_limit, K=K)
    results = _run_replications(job, range(L), checkpoint, workers, "sbc", fp)
    kept = [r for r in range(L) if not results[r]["excluded"]]
    ranks = np.array([results[r]["ranks"] for r in kept], dtype=int).reshape(len(kept), len(names))
    return SbcResult(names, ranks, K, kept, [r for r in range(L) if results[r]["excluded"]],
                     [results[r]["max_rhat"] for r in range(L)])


@dataclass
class _SbcJob:
    spec: ModelSpec
    prior: PriorConfig
    n: int
    T: int
    K: int
    config: SamplerConfig
    seed: int
    covs: CovariateSet
    names: list
    cols: list
    fit: object
    rhat_limit: float
    layout: ParameterLayout

    def __call__(self, rep: int) -> dict:
        rng = _rep_rng(self.seed, rep)
        state = draw_prior(self.spec, self.prior, self.n, rng, self.covs)
        truth = true_values(self.layout, state)[self.cols]
        net = simulate_network(state, self.covs, self.n, self.T, rng, layer_names=self.spec.layer_names)
        draws = self.fit(net, self.covs, self.prior, self.config, _rep_seed(self.seed, rep))
        worst = max_rhat(draws, self.names)
        flat = draws.flat()[:, [draws.index(nm) for nm in self.names]]
        thinned = flat[thin_indices(len(flat), self.K)]
        ranks = sbc_rank(truth, thinned, rng)
        return {"ranks": ranks.tolist(), "max_rhat": None if np.isnan(worst) else worst,
                "excluded": bool(worst >= self.rhat_limit)}


# -- sensitivity -----------------------------------------------------------------

@dataclass
class SensitivityResult:
    """Posterior z-scores and contractions, one row per retained replication.

    ``z = (posterior mean - truth) / posterior sd`` and
    ``contraction = 1 - posterior variance / prior variance``. Contraction
    can be negative; it is never clamped. ``z`` is ``nan`` (and counted in
    ``undefined_z``) when the posterior sd is zero.
    """

    names: list
    truth: np.ndarray
    post_mean: np.ndarray
    post_sd: np.ndarray
    prior_sd: np.ndarray
    replications: list
    excluded: list = field(default_factory=list)

    @property
    def z(self) -> np.ndarray:
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(self.post_sd > 0, (self.post_mean - self.truth) / self.post_sd, np.nan)

    @property
    def contraction(self) -> np.ndarray:
        return 1.0 - self.post_sd ** 2 / self.prior_sd ** 2

    @property
    def undefined_z(self) -> int:
        return int(np.sum(~(self.post_sd > 0)))

    def summary(self) -> dict:
        z, s = self.z, self.contraction
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            per = {nm: {"mean_z": float(np.nanmean(z[:, k])), "sd_z": float(np.nanstd(z[:, k])),
                        "median_contraction": float(np.nanmedian(s[:, k])),
                        "prior_sd": float(self.prior_sd[k])}
                   for k, nm in enumerate(self.names)}
        return {"replications": len(self.replications),
                "excluded": [r + 1 for r in self.excluded], "n_excluded": len(self.excluded),
                "undefined_z": self.undefined_z, "parameters": per}

    def to_csv(self, path) -> None:
        """Tidy rows: parameter, replication, truth, mean, sd, z, contraction."""
        z, s = self.z, self.contraction
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["parameter", "replication", "truth", "post_mean", "post_sd", "z", "contraction"])
            for k, name in enumerate(self.names):
                for r, rep in enumerate(self.replications):
                    w.writerow([name, rep + 1, *(repr(float(v)) for v in
                                                (self.truth[r, k], self.post_mean[r, k],
                                                 self.post_sd[r, k], z[r, k], s[r, k]))])

    def write_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.summary(), fh, indent=2)


def prior_sd(spec: ModelSpec, prior: PriorConfig | None, n: int, T: int, names,
             covs: CovariateSet | None = None, seed: int = 0,
             draws: int | None = None) -> np.ndarray:
    """Prior standard deviation of each named parameter.

    With ``draws=None`` every value is closed-form: normal fixed effects use
    their prior sd, the scales the inverse-gamma sd (infinite when the shape
    is at most 2), and each correlation the sd of its LKJ marginal, which is
    ``2 * Beta(b, b) - 1`` with ``b = eta - 1 + K / 2``. With ``draws`` set,
    scales and correlations use the sd of that many Monte Carlo prior draws.
    """
    prior = prior or spec.prior
    layout = ParameterLayout(n, T, covs, prior)
    all_names = layout.names()
    cols = [all_names.index(nm) for nm in names]
    K, n_omega = layout.K, len(layout.omega_pairs)
    if any(c >= layout.n_fixed + K + n_omega for c in cols):
        raise CalibrationError("prior sd of actor random effects is not supported")
    a, b = prior.sigma_shape, prior.sigma_scale
    if draws is None:
        sigma_sd = np.full(K, b / ((a - 1) * np.sqrt(a - 2)) if a > 2 else np.inf)
        beta = prior.lkj_eta - 1 + K / 2
        omega_sd = np.full(n_omega, 1.0 / np.sqrt(2 * beta + 1))
    else:
        rng = np.random.default_rng(seed)
        sigma_sd = (b / rng.gamma(a, 1.0, size=(draws, K))).std(axis=0, ddof=1)
        rows, cols_o = (list(x) for x in zip(*layout.omega_pairs)) if n_omega else ([], [])
        omega = np.empty((draws if n_omega else 0, n_omega))
        for d in range(len(omega)):
            L = lkj.lkj_corr_cholesky_rng(K, prior.lkj_eta, rng)
            omega[d] = (L @ L.T)[rows, cols_o]
        omega_sd = omega.std(axis=0, ddof=1) if n_omega else np.zeros(0)
    every = np.concatenate([layout.prior_sd_fixed(), sigma_sd, omega_sd])
    return every[cols]


def sensitivity_run(spec: ModelSpec, prior: PriorConfig | None, n: int, T: int, L: int,
                    sampler_config: SamplerConfig, seed: int, covs: CovariateSet | None = None,
                    parameters=None, fit=None, rhat_limit: float = RHAT_LIMIT,
                    checkpoint=None, workers: int = 1, prior_draws: int | None = None
                    ) -> SensitivityResult:
    """Posterior z-score and contraction over ``L`` prior replications.

    Arguments match :func:`sbc_run`. Replications failing the R-hat filter
    are excluded and listed.
    """
    if L < 1:
        raise CalibrationError("L must be positive")
    prior, covs, layout, names, cols = _study_setup(spec, prior, n, T, covs, parameters)
    psd = prior_sd(spec, prior, n, T, names, covs, seed, prior_draws)
    job = _MomentJob(spec, prior, n, T, sampler_config, seed, covs, names, cols,
                     fit or fit_posterior, rhat_limit, layout, None)
    fp = _fingerprint(spec, prior, n, T, sampler_config, seed, names, job.fit, rhat=rhat_limit)
    results = _run_replications(job, range(L), checkpoint, workers, "sensitivity", fp)
    kept = [r for r in range(L) if not results[r]["excluded"]]

    def stack(key):
        return np.array([results[r][key] for r in kept], dtype=float).reshape(len(kept), len(names))

    return SensitivityResult(names, stack("truth"), stack("mean"), stack("sd"), psd, kept,
                             [r for r in range(L) if results[r]["excluded"]])


@dataclass
class _MomentJob:
    """Fit one replication and report posterior moments and 95% intervals."""

    spec: ModelSpec
    prior: PriorConfig
    n: int
    T: int
    config: SamplerConfig
    seed: int
    covs: CovariateSet
    names: list
    cols: list
    fit: object
    rhat_limit: float
    layout: ParameterLayout
    truth: object               # None: draw from the prior; else a RecoveryTruth

    def __call__(self, rep: int) -> dict:
        rng = _rep_rng(self.seed, rep)
        if self.truth is None:
            state = draw_prior(self.spec, self.prior, self.n, rng, self.covs)
        else:
            state = self.truth.state(self.n, self.T, rng)
        truth = true_values(self.layout, state)[self.cols]
        net = simulate_network(state, self.covs, self.n, self.T, rng, layer_names=self.spec.layer_names)
        draws = self.fit(net, self.covs, self.prior, self.config, _rep_seed(self.seed, rep))
        flat = draws.flat()
        sel = flat[:, [draws.index(nm) for nm in self.names]]
        worst_sel = max_rhat(draws, self.names)
        worst_all = max_rhat(draws)
        q = np.quantile(sel, [0.025, 0.975], axis=0)
        density = [float(np.mean(net.layer(t)[~np.eye(self.n, dtype=bool)])) for t in range(self.T)]
        return {"truth": truth.tolist(), "mean": sel.mean(axis=0).tolist(),
                "sd": sel.std(axis=0, ddof=1).tolist(), "lo": q[0].tolist(), "hi": q[1].tolist(),
                "max_rhat": None if np.isnan(worst_sel) else worst_sel,
                "max_rhat_all": None if np.isnan(worst_all) else worst_all,
                "divergences": int(draws.divergent.sum()), "density": density,
                "excluded": bool(worst_sel >= self.rhat_limit)}


# -- recovery ------------------------------------------------------------------

@dataclass
class RecoveryResult:
    """Interval coverage of fixed true values, plus per-replication convergence."""

    names: list
    truth: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    post_mean: np.ndarray
    max_rhat: np.ndarray            # over every reported parameter, per replication
    density: np.ndarray             # (replications, T)
    divergences: np.ndarray

    @property
    def covered(self) -> np.ndarray:
        return (self.lower <= self.truth) & (self.truth <= self.upper)

    @property
    def coverage(self) -> float:
        return float(self.covered.mean())

    def converged_share(self, limit: float = RHAT_LIMIT) -> float:
        return float(np.mean(self.max_rhat < limit))

    def summary(self) -> dict:
        return {"replications": int(self.truth.shape[0]), "coverage": self.coverage,
                "coverage_by_parameter": dict(zip(self.names, self.covered.mean(axis=0).tolist())),
                "converged_share": self.converged_share(),
                "max_rhat": _nan_to_none(self.max_rhat),
                "mean_density": self.density.mean(axis=0).tolist(),
                "divergences": self.divergences.tolist()}

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["parameter", "replication", "truth", "post_mean", "lower", "upper", "covered"])
            for k, name in enumerate(self.names):
                for r in range(self.truth.shape[0]):
                    w.writerow([name, r + 1, repr(float(self.truth[r, k])),
                                repr(float(self.post_mean[r, k])), repr(float(self.lower[r, k])),
                                repr(float(self.upper[r, k])), int(self.covered[r, k])])

    def write_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.summary(), fh, indent=2)


@dataclass
class RecoveryTruth:
    """Fixed baselines shared by all layers (or pairs) with random actor effects.

    Actor latents are redrawn standard normal in every replication, scaled by
    ``sigma`` and correlated by ``omega`` (identity by default).
    """

    mu: float
    rho: float
    mu_cross: float
    rho_cross: float
    sigma: float = 2.0
    omega: np.ndarray | None = None

    def state(self, n: int, T: int, rng: np.random.Generator) -> ParameterState:
        st = ParameterState.zeros(n, T)
        st.mu[:], st.rho[:] = self.mu, self.rho
        st.mu_cross[:], st.rho_cross[:] = self.mu_cross, self.rho_cross
        st.sigma[:] = self.sigma
        if self.omega is not None:
            st.omega_chol = np.linalg.cholesky(np.asarray(self.omega, dtype=float))
        st.z_actor = rng.standard_normal((n, 2 * T))
        return st


def recovery_run(truth: RecoveryTruth, n: int, T: int, L: int, sampler_config: SamplerConfig,
                 seed: int, prior: PriorConfig | None = None, fit=None, checkpoint=None,
                 workers: int = 1) -> RecoveryResult:
    """Refit ``L`` networks simulated at fixed baselines and score the 95% intervals.

    Coverage is computed for the baseline parameters (densities,
    reciprocities and their cross-layer counterparts); convergence uses the
    largest R-hat over every reported parameter.
    """
    spec = ModelSpec(T, prior=prior or PriorConfig())
    prior, covs, layout, names, cols = _study_setup(spec, None, n, T, None,
                                                    layout_baselines(n, T, spec.prior))
    job = _MomentJob(spec, prior, n, T, sampler_config, seed, covs, names, cols,
                     fit or fit_posterior, np.inf, layout, truth)
    fp = _fingerprint(spec, prior, n, T, sampler_config, seed, names, job.fit,
                      truth={k: v for k, v in asdict(truth).items() if k != "omega"},
                      omega=None if truth.omega is None else np.asarray(truth.omega).tolist())
    results = _run_replications(job, range(L), checkpoint, workers, "recovery", fp)

    def stack(key):
        return np.array([r[key] for r in results], dtype=float).reshape(L, -1)

    return RecoveryResult(names, stack("truth"), stack("lo"), stack("hi"), stack("mean"),
                          _none_to_nan([r["max_rhat_all"] for r in results]), stack("density"),
                          np.array([r["divergences"] for r in results]))


def layout_baselines(n: int, T: int, prior: PriorConfig | None = None) -> list[str]:
    layout = ParameterLayout(n, T, None, prior)
    return layout.fixed_names()[:layout.n_baseline]
