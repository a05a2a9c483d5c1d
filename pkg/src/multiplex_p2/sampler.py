"""No-U-Turn Hamiltonian Monte Carlo with warmup adaptation and diagnostics.

The transition is the multinomial NUTS variant: trajectories are doubled until
the generalized no-U-turn criterion fires (checked across every subtree and
across the seams between subtrees), and the state is drawn with biased
progressive sampling at the top level. Warmup adapts the step size by dual
averaging and a diagonal inverse metric over expanding windows.

A *target* is any object with ``dim`` and ``logp_grad(x) -> (logp, grad)``.
Optional ``names()`` and ``constrain(x)`` control the reported columns.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, NamedTuple

import numpy as np

from . import _nuts

logger = logging.getLogger(__name__)

DIVERGENCE_THRESHOLD = 1000.0


class SamplerError(RuntimeError):
    pass


@dataclass(frozen=True)
class SamplerConfig:
    """Run shape of :func:`sample`. ``warmup`` defaults to half the iterations."""

    chains: int = 4
    iterations: int = 2000
    warmup: int | None = None
    target_accept: float = 0.8
    max_tree_depth: int = 10
    seed: int = 0
    init_radius: float = 2.0
    threads: int = 1

    def __post_init__(self):
        if self.warmup is None:
            object.__setattr__(self, "warmup", self.iterations // 2)
        if self.chains < 1:
            raise ValueError("chains must be >= 1")
        if not 0 <= self.warmup < self.iterations:
            raise ValueError("need 0 <= warmup < iterations")
        if not 0 < self.target_accept < 1:
            raise ValueError("target_accept must lie in (0, 1)")

    @property
    def draws_per_chain(self) -> int:
        return self.iterations - self.warmup


class FunctionTarget:
    """Wrap a ``logp_grad`` callable as a sampler target."""

    def __init__(self, logp_grad: Callable, dim: int, names=None):
        self._f = logp_grad
        self.dim = dim
        self._names = list(names) if names is not None else [f"x[{k + 1}]" for k in range(dim)]

    def logp_grad(self, x):
        return self._f(x)

    def names(self):
        return self._names


@dataclass
class DrawsMatrix:
    """Post-warmup draws, shape ``(chains, draws, parameters)``, constrained scale."""

    draws: np.ndarray
    names: list
    divergent: np.ndarray
    stats: dict = field(default_factory=dict)
    config: SamplerConfig | None = None

    @property
    def n_chains(self) -> int:
        return self.draws.shape[0]

    @property
    def n_draws(self) -> int:
        return self.draws.shape[1]

    def index(self, name: str) -> int:
        return self.names.index(name)

    def column(self, column) -> np.ndarray:
        """Draws of one parameter, ``(chains, draws)``; by name or position."""
        k = self.index(column) if isinstance(column, str) else column
        return self.draws[:, :, k]

    def flat(self) -> np.ndarray:
        """Chains concatenated in order, shape ``(chains * draws, parameters)``."""
        return self.draws.reshape(-1, self.draws.shape[2])

    def subset(self, names) -> "DrawsMatrix":
        idx = [self.index(nm) for nm in names]
        return DrawsMatrix(self.draws[:, :, idx], list(names), self.divergent, self.stats, self.config)

    @property
    def divergence_rate(self) -> float:
        return float(self.divergent.mean()) if self.divergent.size else 0.0

    # -- persistence ---------------------------------------------------------
    def to_csv(self, path, header: dict | None = None) -> None:
        """Write one row per draw with ``chain`` and ``iter`` columns.

        ``header`` entries are written as leading ``# key: value`` comment lines.
        """
        with open(path, "w", newline="") as fh:
            for k, v in (header or {}).items():
                fh.write(f"# {k}: {v}\n")
            w = csv.writer(fh)
            w.writerow(["chain", "iter", "divergent", *self.names])
            for c in range(self.n_chains):
                for d in range(self.n_draws):
                    w.writerow([c + 1, d + 1, int(self.divergent[c, d]),
                                *(repr(float(v)) for v in self.draws[c, d])])

    @classmethod
    def from_csv(cls, path) -> "DrawsMatrix":
        with open(path, newline="") as fh:
            rows = [r for r in csv.reader(line for line in fh if not line.startswith("#"))]
        head, body = rows[0], rows[1:]
        if head[:3] != ["chain", "iter", "divergent"]:
            raise ValueError(f"{path}: not a draws file")
        arr = np.array(body, dtype=float)
        chains = np.unique(arr[:, 0]).astype(int)
        draws = np.stack([arr[arr[:, 0] == c][:, 3:] for c in chains])
        div = np.stack([arr[arr[:, 0] == c][:, 2] for c in chains]).astype(bool)
        return cls(draws, head[3:], div)

    def diagnostics(self) -> dict:
        out = {"divergences": int(self.divergent.sum()),
               "divergence_rate": self.divergence_rate}
        for key, val in self.stats.items():
            val = np.asarray(val)
            if val.ndim >= 1 and val.size:
                out[f"mean_{key}"] = float(np.mean(val))
        return out

    def write_sidecar(self, path, extra: dict | None = None) -> None:
        doc = {"config": asdict(self.config) if self.config else None,
               "diagnostics": self.diagnostics(), **(extra or {})}
        with open(path, "w") as fh:
            json.dump(doc, fh, indent=2, sort_keys=True)


# -- adaptation ----------------------------------------------------------------

class _DualAveraging:
    def __init__(self, delta, gamma=0.05, kappa=0.75, t0=10.0):
        self.delta, self.gamma, self.kappa, self.t0 = delta, gamma, kappa, t0
        self.restart(1.0)

    def restart(self, step_size):
        self.mu = np.log(10.0 * step_size)
        self.counter = 0
        self.s_bar = 0.0
        self.x_bar = 0.0

    def learn(self, accept_stat):
        self.counter += 1
        accept_stat = min(1.0, accept_stat)
        eta = 1.0 / (self.counter + self.t0)
        self.s_bar = (1.0 - eta) * self.s_bar + eta * (self.delta - accept_stat)
        x = self.mu - self.s_bar * np.sqrt(self.counter) / self.gamma
        x_eta = self.counter ** (-self.kappa)
        self.x_bar = (1.0 - x_eta) * self.x_bar + x_eta * x
        return float(np.exp(x))

    @property
    def final(self):
        return float(np.exp(self.x_bar))


class _WindowedVariance:
    """Diagonal metric adaptation over doubling windows between warmup buffers."""

    def __init__(self, dim, num_warmup, init_buffer=75, term_buffer=50, base_window=25):
        self.num_warmup = num_warmup
        if num_warmup < 20:
            self.enabled = False
            return
        self.enabled = True
        if init_buffer + base_window + term_buffer > num_warmup:
            init_buffer = int(0.15 * num_warmup)
            term_buffer = int(0.1 * num_warmup)
            base_window = num_warmup - (init_buffer + term_buffer)
        self.init_buffer, self.term_buffer = init_buffer, term_buffer
        self.window_size = base_window
        self.next_window = init_buffer + base_window - 1
        self.counter = 0
        self._reset(dim)

    def _reset(self, dim):
        self.n = 0
        self.mean = np.zeros(dim)
        self.m2 = np.zeros(dim)

    def _in_window(self):
        return (self.init_buffer <= self.counter < self.num_warmup - self.term_buffer
                and self.counter != self.num_warmup)

    def _end_window(self):
        return self.counter == self.next_window and self.counter != self.num_warmup

    def _advance(self):
        last = self.num_warmup - self.term_buffer - 1
        if self.next_window == last:
            return
        self.window_size *= 2
        self.next_window = self.counter + self.window_size
        if self.next_window != last and self.next_window + 2 * self.window_size >= last + 1:
            self.next_window = last

    def learn(self, q):
        """Record a warmup draw; returns a new inverse metric at window ends."""
        if not self.enabled:
            return None
        if self._in_window():
            self.n += 1
            d = q - self.mean
            self.mean += d / self.n
            self.m2 += d * (q - self.mean)
        if self._end_window():
            self._advance()
            n = self.n
            var = self.m2 / (n - 1) if n > 1 else np.ones_like(self.m2)
            var = (n / (n + 5.0)) * var + 1e-3 * (5.0 / (n + 5.0))
            self._reset(len(q))
            self.counter += 1
            return var
        self.counter += 1
        return None


# -- NUTS ------------------------------------------------------------------------

class _Point(NamedTuple):
    q: np.ndarray
    p: np.ndarray
    logp: float
    grad: np.ndarray


class _Subtree(NamedTuple):
    valid: bool
    end: _Point | None = None
    sample: _Point | None = None
    log_weight: float = -np.inf
    rho: np.ndarray | None = None
    p_sharp_beg: np.ndarray | None = None
    p_sharp_end: np.ndarray | None = None
    p_beg: np.ndarray | None = None
    p_end: np.ndarray | None = None


_INVALID = _Subtree(False)


def _no_u_turn(p_sharp_a, p_sharp_b, rho):
    return float(p_sharp_b @ rho) > 0 and float(p_sharp_a @ rho) > 0


class NUTSChain:
    """One chain of multinomial NUTS on an unconstrained target.

    Each transition draws its momentum and a block of uniforms up front and
    consumes the uniforms in a fixed order: one for the direction and one for
    the sample choice per doubling, one per subtree merge. Targets exposing
    ``kernel = (function, data)`` run the compiled transition, which consumes
    them identically.
    """

    def __init__(self, target, rng: np.random.Generator, max_tree_depth: int = 10,
                 step_size: float = 1.0, inv_metric: np.ndarray | None = None,
                 compiled: bool = True):
        self.target = target
        self.rng = rng
        self.max_tree_depth = max_tree_depth
        self.step_size = step_size
        self.inv_metric = np.ones(target.dim) if inv_metric is None else inv_metric
        self.kernel = getattr(target, "kernel", None) if compiled else None

    def _evaluate(self, q):
        logp, grad = self.target.logp_grad(q)
        if not np.isfinite(logp):
            return -np.inf, np.zeros_like(q)
        return float(logp), grad

    def _leapfrog(self, pt: _Point, eps: float) -> _Point:
        p = pt.p + 0.5 * eps * pt.grad
        q = pt.q + eps * self.inv_metric * p
        logp, grad = self._evaluate(q)
        p = p + 0.5 * eps * grad
        return _Point(q, p, logp, grad)

    def _hamiltonian(self, pt: _Point) -> float:
        with np.errstate(over="ignore", invalid="ignore"):  # blow-ups count as divergent
            h = -pt.logp + 0.5 * float(pt.p @ (self.inv_metric * pt.p))
        return h if np.isfinite(h) else np.inf

    def _momentum(self):
        return self.rng.standard_normal(self.target.dim) / np.sqrt(self.inv_metric)

    def _uniform(self):
        u = self._u[self._next_u]
        self._next_u += 1
        return u

    def _build_tree(self, depth, pt, H0, eps):
        if depth == 0:
            new = self._leapfrog(pt, eps)
            self._n_leapfrog += 1
            h = self._hamiltonian(new)
            if h - H0 > DIVERGENCE_THRESHOLD:
                self._divergent = True
                return _INVALID
            self._sum_metro += 1.0 if H0 - h > 0 else np.exp(H0 - h)
            p_sharp = self.inv_metric * new.p
            return _Subtree(True, new, new, H0 - h, new.p.copy(), p_sharp, p_sharp, new.p, new.p)
        a = self._build_tree(depth - 1, pt, H0, eps)
        if not a.valid:
            return _INVALID
        b = self._build_tree(depth - 1, a.end, H0, eps)
        if not b.valid:
            return _INVALID
        log_weight = np.logaddexp(a.log_weight, b.log_weight)
        sample = b.sample if np.log(self._uniform()) < b.log_weight - log_weight else a.sample
        rho = a.rho + b.rho
        persist = (_no_u_turn(a.p_sharp_beg, b.p_sharp_end, rho)
                   and _no_u_turn(a.p_sharp_beg, b.p_sharp_beg, a.rho + b.p_beg)
                   and _no_u_turn(a.p_sharp_end, b.p_sharp_end, b.rho + a.p_end))
        return _Subtree(persist, b.end, sample, log_weight, rho,
                        a.p_sharp_beg, b.p_sharp_end, a.p_beg, b.p_end)

    def transition(self, state: _Point) -> tuple[_Point, dict]:
        p0 = self._momentum()
        self._u = self.rng.uniform(size=_nuts.uniforms_needed(self.max_tree_depth))
        if self.kernel is not None:
            fn, data = self.kernel
            q, logp, grad, st = _nuts.transition(fn, data, state.q, state.logp, state.grad, p0,
                                                 self.inv_metric, self.step_size,
                                                 self.max_tree_depth, self._u)
            info = {"accept_stat": st[0], "tree_depth": int(st[1]), "n_leapfrog": int(st[2]),
                    "divergent": bool(st[3]), "step_size": self.step_size, "energy": st[4],
                    "energy_error": st[5]}
            return _Point(q, np.zeros(0), float(logp), grad), info
        return self._transition(state, p0)

    def _transition(self, state: _Point, p0: np.ndarray) -> tuple[_Point, dict]:
        start = _Point(state.q, p0, state.logp, state.grad)
        H0 = self._hamiltonian(start)
        self._n_leapfrog, self._sum_metro, self._divergent = 0, 0.0, False
        self._next_u = 0

        p_sharp0 = self.inv_metric * p0
        # ends[+1] / ends[-1]: (point, p_sharp) at the forward / backward extremes
        ends = {1: (start, p_sharp0), -1: (start, p_sharp0)}
        rho = p0.copy()
        sample, log_weight, depth = start, 0.0, 0
        while depth < self.max_tree_depth:
            direction = 1 if self._uniform() > 0.5 else -1
            old_far, old_near = ends[-direction], ends[direction]
            sub = self._build_tree(depth, old_near[0], H0, direction * self.step_size)
            if not sub.valid:
                break
            depth += 1
            u = self._uniform()
            if sub.log_weight > log_weight or u < np.exp(sub.log_weight - log_weight):
                sample = sub.sample
            log_weight = np.logaddexp(log_weight, sub.log_weight)
            ends[direction] = (sub.end, sub.p_sharp_end)
            persist = (_no_u_turn(old_far[1], sub.p_sharp_end, rho + sub.rho)
                       and _no_u_turn(old_far[1], sub.p_sharp_beg, rho + sub.p_beg)
                       and _no_u_turn(old_near[1], sub.p_sharp_end, sub.rho + old_near[0].p))
            rho = rho + sub.rho
            if not persist:
                break
        accept = self._sum_metro / self._n_leapfrog if self._n_leapfrog else 0.0
        energy = self._hamiltonian(sample)
        info = {"accept_stat": accept, "tree_depth": depth, "n_leapfrog": self._n_leapfrog,
                "divergent": self._divergent, "step_size": self.step_size,
                "energy": energy, "energy_error": energy - H0}
        return _Point(sample.q, np.zeros(0), sample.logp, sample.grad), info

    def init_step_size(self, state: _Point) -> None:
        """Double or halve the step size until one leapfrog step crosses acceptance 0.8."""
        if self.target.dim == 0:
            return
        eps = self.step_size
        direction = 0
        for _ in range(100):
            start = _Point(state.q, self._momentum(), state.logp, state.grad)
            H0 = self._hamiltonian(start)
            h = self._hamiltonian(self._leapfrog(start, eps))
            delta_h = H0 - h
            if direction == 0:
                direction = 1 if delta_h > np.log(0.8) else -1
            if direction == 1 and not delta_h > np.log(0.8):
                break
            if direction == -1 and not delta_h < np.log(0.8):
                break
            eps = eps * 2.0 if direction == 1 else eps / 2.0
            if eps > 1e7:
                raise SamplerError("posterior is improper; step size diverged")
            if eps == 0:
                raise SamplerError("no acceptable step size; check the target gradient")
        self.step_size = eps


def _initial_point(target, rng, radius, init):
    if init is not None:
        q = np.asarray(init, dtype=float).copy()
        logp, grad = target.logp_grad(q)
        if not np.isfinite(logp):
            raise SamplerError("log density is not finite at the supplied init")
        return _Point(q, np.zeros_like(q), float(logp), grad)
    for _ in range(100):
        q = rng.uniform(-radius, radius, size=target.dim)
        logp, grad = target.logp_grad(q)
        if np.isfinite(logp) and np.all(np.isfinite(grad)):
            return _Point(q, np.zeros_like(q), float(logp), grad)
    raise SamplerError("could not find a finite initial point in 100 attempts")


def run_chain(target, config: SamplerConfig, seed_seq: np.random.SeedSequence,
              init: np.ndarray | None = None, callback=None) -> dict:
    """Run one chain; returns unconstrained draws and per-iteration statistics."""
    rng = np.random.default_rng(seed_seq)
    state = _initial_point(target, rng, config.init_radius, init)
    chain = NUTSChain(target, rng, config.max_tree_depth)
    chain.init_step_size(state)
    averager = _DualAveraging(config.target_accept)
    averager.restart(chain.step_size)
    metric = _WindowedVariance(target.dim, config.warmup)

    n_keep = config.draws_per_chain
    draws = np.empty((n_keep, target.dim))
    keys = ("accept_stat", "tree_depth", "n_leapfrog", "divergent", "step_size", "energy",
            "energy_error")
    stats = {k: np.empty(n_keep) for k in keys}
    warmup_accept = []
    for it in range(config.iterations):
        state, info = chain.transition(state)
        if it < config.warmup:
            warmup_accept.append(info["accept_stat"])
            chain.step_size = averager.learn(info["accept_stat"])
            new_var = metric.learn(state.q)
            if new_var is not None:
                chain.inv_metric = new_var
                chain.init_step_size(state)
                averager.restart(chain.step_size)
            if it == config.warmup - 1:
                chain.step_size = averager.final
        else:
            k = it - config.warmup
            draws[k] = state.q
            for key in keys:
                stats[key][k] = info[key]
        if callback is not None:
            callback(it, info)
    return {"draws": draws, "stats": stats, "step_size": chain.step_size,
            "inv_metric": chain.inv_metric}


def _constrain_all(target, unc: np.ndarray) -> np.ndarray:
    constrain = getattr(target, "constrain", None)
    if constrain is None:
        return unc
    return np.stack([constrain(row) for row in unc]) if len(unc) else np.empty((0, len(target.names())))


def _run_chain_job(args):
    target, config, seq, init = args
    out = run_chain(target, config, seq, init)
    out["constrained"] = _constrain_all(target, out["draws"])
    return out


def sample(target, config: SamplerConfig = SamplerConfig(), init=None,
           keep_unconstrained: bool = False) -> DrawsMatrix:
    """Draw from ``target`` with NUTS; chains use independent seed streams.

    Parameters
    ----------
    target : object
        Provides ``dim`` and ``logp_grad``; see module docstring.
    config : SamplerConfig
    init : array or sequence of arrays, optional
        Initial unconstrained point(s). Default: uniform in
        ``[-init_radius, init_radius]`` per coordinate, retried up to 100 times.
    keep_unconstrained : bool
        Also store unconstrained draws under ``stats["unconstrained"]``.
    """
    seqs = np.random.SeedSequence(config.seed).spawn(config.chains)
    if init is None or np.ndim(init) == 1:
        inits = [init] * config.chains
    else:
        inits = list(init)
    jobs = [(target, config, seqs[c], inits[c]) for c in range(config.chains)]
    if config.threads > 1 and config.chains > 1:
        with ProcessPoolExecutor(max_workers=min(config.threads, config.chains)) as pool:
            results = list(pool.map(_run_chain_job, jobs))
    else:
        results = [_run_chain_job(job) for job in jobs]

    names = target.names() if hasattr(target, "names") else [f"x[{k + 1}]" for k in range(target.dim)]
    draws = np.stack([r["constrained"] for r in results]) if results else np.empty((0, 0, len(names)))
    stats = {k: np.stack([r["stats"][k] for r in results]) for k in results[0]["stats"]}
    divergent = stats.pop("divergent").astype(bool)
    stats["final_step_size"] = np.array([r["step_size"] for r in results])
    if keep_unconstrained:
        stats["unconstrained"] = np.stack([r["draws"] for r in results])
    out = DrawsMatrix(draws, list(names), divergent, stats, config)
    if out.divergence_rate > 0.2:
        warnings.warn(f"{out.divergence_rate:.1%} of post-warmup transitions diverged")
    return out


# -- diagnostics ---------------------------------------------------------------

def _column(draws, column) -> np.ndarray:
    if isinstance(draws, DrawsMatrix):
        return draws.column(column)
    x = np.asarray(draws, dtype=float)
    return x[:, :, column] if x.ndim == 3 else x


def rhat(draws, column=0) -> float:
    """Split-chain potential scale reduction factor.

    ``draws`` is a :class:`DrawsMatrix` (``column`` by name or index) or an
    array of shape ``(chains, draws)``.
    """
    x = _column(draws, column)
    m, n = x.shape
    if m < 2:
        raise ValueError("rhat needs at least 2 chains")
    if n < 4:
        raise ValueError("rhat needs at least 4 draws per chain")
    half = n // 2
    split = np.concatenate([x[:, :half], x[:, n - half:]], axis=0)
    n = half
    means = split.mean(axis=1)
    W = split.var(axis=1, ddof=1).mean()
    B = n * means.var(ddof=1)
    if W == 0:
        return 1.0 if B == 0 else np.inf
    var_plus = (n - 1) / n * W + B / n
    return float(np.sqrt(var_plus / W))


def _autocovariance(x: np.ndarray) -> np.ndarray:
    n = len(x)
    size = 1 << int(np.ceil(np.log2(2 * n)))
    f = np.fft.rfft(x - x.mean(), size)
    return np.fft.irfft(f * np.conj(f), size)[:n] / n


def ess(draws, column=0) -> float:
    """Effective sample size with Geyer's initial monotone positive-pair truncation."""
    x = _column(draws, column)
    m, n = x.shape
    if n < 4:
        raise ValueError("ess needs at least 4 draws per chain")
    if np.all(x == x.flat[0]):
        return 0.0
    acov = np.stack([_autocovariance(c) for c in x])
    chain_var = acov[:, 0] * n / (n - 1.0)
    mean_var = chain_var.mean()
    var_plus = mean_var * (n - 1.0) / n
    if m > 1:
        var_plus += x.mean(axis=1).var(ddof=1)
    if var_plus == 0:
        return 0.0
    rho = np.zeros(n)
    rho[0] = 1.0
    mean_acov = acov.mean(axis=0)
    even, odd = 1.0, 1.0 - (mean_var - mean_acov[1]) / var_plus
    rho[1] = odd
    t = 1
    while t < n - 4 and even + odd > 0:
        even = 1.0 - (mean_var - mean_acov[t + 1]) / var_plus
        odd = 1.0 - (mean_var - mean_acov[t + 2]) / var_plus
        if even + odd >= 0:
            rho[t + 1], rho[t + 2] = even, odd
        t += 2
    max_t = t
    if even > 0:
        rho[max_t + 1] = even
    for t in range(1, max_t - 2, 2):
        if rho[t + 1] + rho[t + 2] > rho[t - 1] + rho[t]:
            rho[t + 1] = rho[t + 2] = (rho[t - 1] + rho[t]) / 2.0
    total = m * n
    tau = -1.0 + 2.0 * rho[:max_t].sum() + rho[max_t + 1]
    tau = max(tau, 1.0 / np.log10(total))
    return float(total / tau)


SUMMARY_FIELDS = ("name", "mean", "sd", "q2.5", "q50", "q97.5", "rhat", "ess")


def summarize(draws: DrawsMatrix) -> list[dict]:
    """Per-parameter posterior summary rows, in parameter order.

    Quantiles interpolate linearly between order statistics. R-hat and ESS
    are ``nan`` when there are too few chains or draws.
    """
    if draws.draws.size == 0:
        raise ValueError("no draws to summarize")
    flat = draws.flat()
    q = np.quantile(flat, [0.025, 0.5, 0.975], axis=0)
    mean, sd = flat.mean(axis=0), flat.std(axis=0, ddof=1) if len(flat) > 1 else np.zeros(flat.shape[1])
    rows = []
    for k, name in enumerate(draws.names):
        col = draws.draws[:, :, k]
        try:
            r = rhat(col) if np.ptp(col) > 0 else np.nan
        except ValueError:
            r = np.nan
        try:
            e = ess(col)
        except ValueError:
            e = np.nan
        rows.append({"name": name, "mean": float(mean[k]), "sd": float(sd[k]),
                     "q2.5": float(q[0, k]), "q50": float(q[1, k]), "q97.5": float(q[2, k]),
                     "rhat": r, "ess": e})
    return rows


def write_summary_csv(rows, path, header: dict | None = None, rhat_limit: float = 1.05) -> None:
    """Summary table as CSV with a ``converged`` flag (R-hat below ``rhat_limit``)."""
    with open(path, "w", newline="") as fh:
        for k, v in (header or {}).items():
            fh.write(f"# {k}: {v}\n")
        w = csv.writer(fh)
        w.writerow([*SUMMARY_FIELDS, "converged"])
        for r in rows:
            ok = not (r["rhat"] >= rhat_limit)
            w.writerow([r["name"], *(repr(float(r[f])) for f in SUMMARY_FIELDS[1:]), int(ok)])


def config_hash(doc) -> str:
    return hashlib.sha256(json.dumps(doc, sort_keys=True, default=str).encode()).hexdigest()[:12]
