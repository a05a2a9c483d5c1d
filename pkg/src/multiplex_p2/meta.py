"""Normal-normal hierarchical meta-analysis of per-group estimates.

Each group ``j`` reports an estimate ``y_j`` with standard error ``s_j``.
The model is ``y_j ~ N(theta_j, s_j^2)``, ``theta_j ~ N(mu, tau^2)`` with
``mu ~ N(0, mu_sd)`` and ``tau ~ half-Cauchy(0, tau_scale)``.

The sampled vector is ``(mu, log tau, eta_1..eta_J)`` with the non-centered
map ``theta_j = mu + tau * eta_j``; the centered variant samples ``theta_j``
directly. ``tau`` can also be held fixed, which leaves ``(mu, eta)``.
"""

from __future__ import annotations

import csv
import math
from collections import OrderedDict
from dataclasses import dataclass

import numpy as np
from numba import njit

from .sampler import DrawsMatrix, SamplerConfig, sample, summarize

NONCENTERED, CENTERED = 0, 1
META_ITERATIONS = 5000


@dataclass(frozen=True)
class GroupEstimate:
    group: str
    theta_hat: float
    se: float

    def __post_init__(self):
        if not np.isfinite(self.theta_hat):
            raise ValueError(f"group {self.group!r}: estimate must be finite")
        if not self.se > 0:
            raise ValueError(f"group {self.group!r}: standard error must be positive")


@dataclass(frozen=True)
class MetaPrior:
    """``mu ~ N(0, mu_sd)`` and ``tau ~ half-Cauchy(0, tau_scale)`` (sd, scale)."""

    mu_sd: float = 10.0
    tau_scale: float = 0.5

    def __post_init__(self):
        if not (self.mu_sd > 0 and self.tau_scale > 0):
            raise ValueError("mu_sd and tau_scale must be positive")


# the prior for covariance-type parameters (scales, correlations)
COVARIANCE_PRIOR = MetaPrior(mu_sd=100.0)


@njit(cache=True, error_model="numpy")
def _meta_logp(q, grad, data):
    y, se, consts = data
    mu_sd, tau_scale, kind, fixed_log_tau = consts[0], consts[1], int(consts[2]), consts[3]
    J = y.size
    free_tau = math.isnan(fixed_log_tau)
    off = 2 if free_tau else 1
    mu = q[0]
    log_tau = q[1] if free_tau else fixed_log_tau
    tau = math.exp(log_tau)
    for k in range(q.size):
        grad[k] = 0.0
    lp = -0.5 * (mu / mu_sd) ** 2
    grad[0] = -mu / mu_sd ** 2
    g_log_tau = 0.0
    if free_tau:
        # half-Cauchy density of tau plus the log-scale Jacobian
        r = tau / tau_scale
        lp += -math.log1p(r * r) + log_tau
        g_log_tau += -2.0 * r * r / (1.0 + r * r) + 1.0
    for j in range(J):
        e = q[off + j]
        if kind == NONCENTERED:
            theta = mu + tau * e
            lp -= 0.5 * e * e
            g_e = -e
        else:
            theta = e
            z = (theta - mu) / tau
            lp -= 0.5 * z * z + log_tau
            grad[0] += z / tau
            g_log_tau += z * z - 1.0
            g_e = -z / tau
        d = (y[j] - theta) / se[j]
        lp -= 0.5 * d * d
        g_theta = d / se[j]
        if kind == NONCENTERED:
            grad[0] += g_theta
            g_log_tau += g_theta * tau * e
            g_e += g_theta * tau
        else:
            g_e += g_theta
        grad[off + j] = g_e
    if free_tau:
        grad[1] = g_log_tau
    if not math.isfinite(lp):
        return -np.inf
    return lp


class MetaPosterior:
    """Sampler target for the hierarchical model.

    Parameters
    ----------
    groups : sequence of GroupEstimate
    prior : MetaPrior
    parameterization : "noncentered" or "centered"
    tau : float, optional
        Hold the between-group sd fixed at this value.
    """

    def __init__(self, groups, prior: MetaPrior = MetaPrior(), parameterization: str = "noncentered",
                 tau: float | None = None):
        groups = list(groups)
        if len(groups) < 2:
            raise ValueError("meta-analysis needs at least 2 groups")
        if parameterization not in ("noncentered", "centered"):
            raise ValueError(f"unknown parameterization {parameterization!r}")
        if tau is not None and not tau > 0:
            raise ValueError("a fixed tau must be positive")
        self.groups, self.prior, self.tau = groups, prior, tau
        self.kind = NONCENTERED if parameterization == "noncentered" else CENTERED
        self.J = len(groups)
        self.dim = self.J + (1 if tau is not None else 2)
        y = np.array([g.theta_hat for g in groups], dtype=float)
        se = np.array([g.se for g in groups], dtype=float)
        fixed = np.nan if tau is None else np.log(tau)
        self._data = (y, se, np.array([prior.mu_sd, prior.tau_scale, self.kind, fixed]))

    @property
    def kernel(self):
        return _meta_logp, self._data

    def logp_grad(self, q):
        q = np.ascontiguousarray(q, dtype=float)
        grad = np.empty(self.dim)
        return float(_meta_logp(q, grad, self._data)), grad

    def names(self) -> list[str]:
        return ["mu", "tau"] + [f"theta[{g.group}]" for g in self.groups]

    def constrain(self, q):
        off = 1 if self.tau is not None else 2
        mu = q[0]
        tau = self.tau if self.tau is not None else np.exp(q[1])
        rest = q[off:]
        theta = mu + tau * rest if self.kind == NONCENTERED else rest
        return np.concatenate([[mu, tau], theta])


def meta_fit(groups, prior: MetaPrior = MetaPrior(), sampler_config: SamplerConfig | None = None,
             parameterization: str = "noncentered", tau: float | None = None) -> DrawsMatrix:
    """Posterior draws of ``(mu, tau, theta_1..theta_J)``.

    The default run is 4 chains of :data:`META_ITERATIONS` iterations.
    """
    config = sampler_config or SamplerConfig(iterations=META_ITERATIONS)
    return sample(MetaPosterior(groups, prior, parameterization, tau), config)


def mu_given_tau(groups, tau: float, prior: MetaPrior = MetaPrior()) -> tuple[float, float]:
    """Exact posterior mean and sd of ``mu`` when ``tau`` is known."""
    y = np.array([g.theta_hat for g in groups], dtype=float)
    w = 1.0 / (np.array([g.se for g in groups], dtype=float) ** 2 + tau ** 2)
    precision = w.sum() + 1.0 / prior.mu_sd ** 2
    return float((w * y).sum() / precision), float(1.0 / np.sqrt(precision))


def precision_weighted_mean(groups) -> float:
    y = np.array([g.theta_hat for g in groups], dtype=float)
    w = 1.0 / np.array([g.se for g in groups], dtype=float) ** 2
    return float((w * y).sum() / w.sum())


@dataclass
class MetaSummary:
    mu_mean: float
    mu_ci: tuple
    tau_mean: float
    tau_ci: tuple
    groups: list          # summary rows of theta_j
    max_rhat: float

    def row(self, parameter: str = "") -> dict:
        return {"parameter": parameter, "mu_mean": self.mu_mean, "mu_q2.5": self.mu_ci[0],
                "mu_q97.5": self.mu_ci[1], "tau_mean": self.tau_mean, "tau_q2.5": self.tau_ci[0],
                "tau_q97.5": self.tau_ci[1], "groups": len(self.groups), "max_rhat": self.max_rhat}


def meta_summarize(draws: DrawsMatrix) -> MetaSummary:
    """Population mean and sd with 95% intervals, plus the shrunken group effects."""
    rows = summarize(draws)
    by = {r["name"]: r for r in rows}
    rh = [r["rhat"] for r in rows if np.isfinite(r["rhat"])]
    return MetaSummary(by["mu"]["mean"], (by["mu"]["q2.5"], by["mu"]["q97.5"]),
                       by["tau"]["mean"], (by["tau"]["q2.5"], by["tau"]["q97.5"]),
                       [r for r in rows if r["name"].startswith("theta[")],
                       max(rh) if rh else float("nan"))


SUMMARY_COLUMNS = ("parameter", "mu_mean", "mu_q2.5", "mu_q97.5", "tau_mean", "tau_q2.5",
                   "tau_q97.5", "groups", "max_rhat")


def read_group_csv(path) -> "OrderedDict[str, list[GroupEstimate]]":
    """Read ``group, parameter, mean, sd`` rows into estimates per parameter."""
    out: OrderedDict = OrderedDict()
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        need = {"group", "parameter", "mean", "sd"}
        if reader.fieldnames is None or not need <= set(reader.fieldnames):
            raise ValueError(f"{path}: expected columns {sorted(need)}")
        for line, row in enumerate(reader, start=2):
            try:
                est = GroupEstimate(row["group"], float(row["mean"]), float(row["sd"]))
            except ValueError as exc:
                raise ValueError(f"{path}, line {line}: {exc}") from None
            out.setdefault(row["parameter"], []).append(est)
    if not out:
        raise ValueError(f"{path}: no rows")
    return out


def write_summary_csv(rows, path, header: dict | None = None) -> None:
    with open(path, "w", newline="") as fh:
        for k, v in (header or {}).items():
            fh.write(f"# {k}: {v}\n")
        w = csv.writer(fh)
        w.writerow(SUMMARY_COLUMNS)
        for r in rows:
            w.writerow([r["parameter"], *(repr(float(r[c])) if c != "groups" else r[c]
                                          for c in SUMMARY_COLUMNS[1:])])
