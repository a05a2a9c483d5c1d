"""Network statistics and posterior predictive goodness-of-fit reports.

Statistics take a single layer (an ``n x n`` array of 0, 1 and ``MISSING``)
or a whole :class:`~multiplex_p2.network.MultiplexNetwork`. Missing cells
never count as ties; statistics that are ratios over cells also drop missing
cells from their denominators, as documented per function.
"""

from __future__ import annotations

import csv
import itertools
import json
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from math import comb
from pathlib import Path

import numpy as np

from .network import MISSING, MultiplexNetwork

TRIAD_TYPES = ("003", "012", "102", "021D", "021U", "021C", "111D", "111U",
               "030T", "030C", "201", "120D", "120U", "120C", "210", "300")

STATISTICS = ("density", "reciprocity", "transitivity", "jaccard", "cross_reciprocity",
              "degree_correlations", "triad_census", "indegree_distribution",
              "outdegree_distribution")

SUMMARY_QUANTILES = (0.025, 0.25, 0.5, 0.75, 0.975)


def _layer(layer) -> tuple[np.ndarray, np.ndarray]:
    """Tie indicator (missing as 0) and observed-cell mask, diagonal excluded."""
    x = np.asarray(layer)
    if x.ndim != 2 or x.shape[0] != x.shape[1]:
        raise ValueError(f"a layer must be a square matrix, got shape {x.shape}")
    observed = x != MISSING
    np.fill_diagonal(observed, False)
    return ((x == 1) & observed).astype(np.int64), observed


# -- uniplex statistics --------------------------------------------------------

def density(layer) -> float:
    """Share of observed ordered pairs that carry a tie."""
    ties, observed = _layer(layer)
    if ties.shape[0] < 2:
        raise ValueError("density needs at least 2 actors")
    cells = observed.sum()
    return float(ties.sum() / cells) if cells else float("nan")


def reciprocity(layer) -> float:
    """Share of ties ``i -> j`` answered by ``j -> i``.

    Ties whose reverse cell is missing are left out. With no ties the value
    is 0 and a warning is issued.
    """
    ties, observed = _layer(layer)
    eligible = ties * observed.T
    n_ties = eligible.sum()
    if n_ties == 0:
        warnings.warn("reciprocity of a layer without ties is set to 0", stacklevel=2)
        return 0.0
    return float((eligible * ties.T).sum() / n_ties)


def transitivity(layer) -> float:
    """Share of two-paths ``i -> j -> k`` (``i != k``) closed by ``i -> k``.

    Two-paths whose closing cell is missing are left out. With no two-paths
    the value is 0 and a warning is issued.
    """
    ties, observed = _layer(layer)
    paths = ties @ ties
    np.fill_diagonal(paths, 0)
    paths = paths * observed
    total = paths.sum()
    if total == 0:
        warnings.warn("transitivity of a layer without two-paths is set to 0", stacklevel=2)
        return 0.0
    return float((paths * ties).sum() / total)


def degree_sequences(layer) -> tuple[np.ndarray, np.ndarray]:
    """``(indegrees, outdegrees)``; missing cells count as no tie."""
    ties, _ = _layer(layer)
    return ties.sum(axis=0), ties.sum(axis=1)


def _triad_type(code: int) -> int:
    """Classify a 6-bit triad code by mutual/asymmetric/null counts and orientation.

    Bits, for actors ``(a, b, c)``: 1 a->b, 2 b->a, 4 a->c, 8 c->a, 16 b->c, 32 c->b.
    """
    bit = {(0, 1): 1, (1, 0): 2, (0, 2): 4, (2, 0): 8, (1, 2): 16, (2, 1): 32}
    edge = {k: bool(code & v) for k, v in bit.items()}
    mutual, asym = [], []
    for u, v in ((0, 1), (0, 2), (1, 2)):
        if edge[u, v] and edge[v, u]:
            mutual.append((u, v))
        elif edge[u, v]:
            asym.append((u, v))
        elif edge[v, u]:
            asym.append((v, u))
    M, A = len(mutual), len(asym)
    out_deg = [sum(1 for s, _ in asym if s == x) for x in range(3)]
    in_deg = [sum(1 for _, r in asym if r == x) for x in range(3)]
    name = {(0, 0): "003", (0, 1): "012", (1, 0): "102", (2, 0): "201",
            (2, 1): "210", (3, 0): "300"}.get((M, A))
    if name is None and (M, A) == (0, 2):
        name = "021D" if 2 in out_deg else "021U" if 2 in in_deg else "021C"
    elif name is None and (M, A) == (1, 1):
        # "U": the asymmetric tie leaves the mutual pair; "D": it enters it
        sender = asym[0][0]
        name = "111U" if sender in mutual[0] else "111D"
    elif name is None and (M, A) == (0, 3):
        name = "030T" if 2 in out_deg else "030C"
    elif name is None and (M, A) == (1, 2):
        name = "120D" if 2 in out_deg else "120U" if 2 in in_deg else "120C"
    return TRIAD_TYPES.index(name)


_TRIAD_TABLE = np.array([_triad_type(code) for code in range(64)])


def triad_census(layer) -> np.ndarray:
    """Counts of the 16 directed triad types over all actor triples.

    Returned in the order of :data:`TRIAD_TYPES`; missing cells count as no
    tie. The counts sum to ``C(n, 3)``.
    """
    ties, _ = _layer(layer)
    n = ties.shape[0]
    if n < 3:
        raise ValueError("triad census needs at least 3 actors")
    tri = np.array(list(itertools.combinations(range(n), 3)))
    a, b, c = tri[:, 0], tri[:, 1], tri[:, 2]
    code = (ties[a, b] + 2 * ties[b, a] + 4 * ties[a, c] + 8 * ties[c, a]
            + 16 * ties[b, c] + 32 * ties[c, b])
    return np.bincount(_TRIAD_TABLE[code], minlength=16)


# -- multiplex statistics ------------------------------------------------------

def jaccard(layer_a, layer_b) -> float:
    """``|A & B| / |A | B|`` over directed tie sets.

    Cells missing in either layer are left out. Two empty tie sets give 1
    with a warning.
    """
    ta, oa = _layer(layer_a)
    tb, ob = _layer(layer_b)
    if ta.shape != tb.shape:
        raise ValueError(f"layer shapes differ: {ta.shape} vs {tb.shape}")
    both = oa & ob
    ta, tb = ta.astype(bool) & both, tb.astype(bool) & both
    union = (ta | tb).sum()
    if union == 0:
        warnings.warn("Jaccard index of two empty tie sets is set to 1", stacklevel=2)
        return 1.0
    return float((ta & tb).sum() / union)


def cross_reciprocity_jaccard(layer_a, layer_b) -> float:
    """Jaccard index of ``layer_a`` against the transpose of ``layer_b``."""
    b = np.asarray(layer_b)
    if np.asarray(layer_a).shape != b.shape:
        raise ValueError(f"layer shapes differ: {np.asarray(layer_a).shape} vs {b.shape}")
    return jaccard(layer_a, b.T)


def degree_labels(T: int) -> list[str]:
    return [f"{kind}[{t + 1}]" for t in range(T) for kind in ("out", "in")]


def degree_correlations(net: MultiplexNetwork) -> np.ndarray:
    """Pearson correlations of the ``2T`` actor degree sequences.

    Order is ``out[1], in[1], ..., out[T], in[T]`` (see :func:`degree_labels`).
    Entries involving a constant sequence are ``nan``.
    """
    if net.n < 3:
        raise ValueError("degree correlations need at least 3 actors")
    seqs = []
    for t in range(net.T):
        indeg, outdeg = degree_sequences(net.layer(t))
        seqs += [outdeg, indeg]
    x = np.array(seqs, dtype=float)
    x -= x.mean(axis=1, keepdims=True)
    norm = np.sqrt((x * x).sum(axis=1))
    with np.errstate(invalid="ignore", divide="ignore"):
        corr = (x @ x.T) / np.outer(norm, norm)
    corr[norm == 0, :] = np.nan
    corr[:, norm == 0] = np.nan
    return corr


def _pair_label(t, s):
    return f"{t + 1},{s + 1}"


def network_statistics(net: MultiplexNetwork, statistics=STATISTICS) -> dict:
    """Selected statistics of one network as ``{name: (labels, values)}``."""
    unknown = set(statistics) - set(STATISTICS)
    if unknown:
        raise ValueError(f"unknown statistics: {sorted(unknown)}")
    T, n = net.T, net.n
    pairs = list(itertools.combinations(range(T), 2))
    out = {}
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for name in statistics:
            if name in ("density", "reciprocity", "transitivity"):
                fn = {"density": density, "reciprocity": reciprocity, "transitivity": transitivity}[name]
                out[name] = ([f"{t + 1}" for t in range(T)], [fn(net.layer(t)) for t in range(T)])
            elif name == "jaccard":
                out[name] = ([_pair_label(*p) for p in pairs],
                             [jaccard(net.layer(t), net.layer(s)) for t, s in pairs])
            elif name == "cross_reciprocity":
                out[name] = ([_pair_label(*p) for p in pairs],
                             [cross_reciprocity_jaccard(net.layer(t), net.layer(s)) for t, s in pairs])
            elif name == "degree_correlations":
                corr = degree_correlations(net)
                lab = degree_labels(T)
                k, l = np.triu_indices(2 * T, 1)
                out[name] = ([f"{lab[a]}~{lab[b]}" for a, b in zip(k, l)], list(corr[k, l]))
            elif name == "triad_census":
                out[name] = ([f"{t + 1}:{ty}" for t in range(T) for ty in TRIAD_TYPES],
                             list(np.concatenate([triad_census(net.layer(t)) for t in range(T)])))
            else:
                which = 0 if name == "indegree_distribution" else 1
                labels, values = [], []
                for t in range(T):
                    deg = degree_sequences(net.layer(t))[which]
                    labels += [f"{t + 1}:{k}" for k in range(n)]
                    values += list(np.bincount(deg, minlength=n)[:n])
                out[name] = (labels, values)
    return {k: (labels, np.asarray(v, dtype=float)) for k, (labels, v) in out.items()}


# -- posterior predictive report -----------------------------------------------

@dataclass
class StatisticCheck:
    """One statistic: observed entries and their simulated distribution."""

    labels: list
    observed: np.ndarray
    simulated: np.ndarray          # (replicates, entries)

    def summary(self) -> dict:
        sim = self.simulated
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            q = np.nanquantile(sim, SUMMARY_QUANTILES, axis=0)
            mean = np.nanmean(sim, axis=0)
        return {"labels": list(self.labels), "observed": self.observed.tolist(),
                "mean": mean.tolist(),
                **{f"q{100 * p:g}": q[k].tolist() for k, p in enumerate(SUMMARY_QUANTILES)},
                "position": self.position().tolist()}

    def position(self) -> np.ndarray:
        """Mid-rank quantile of each observed entry among the simulated values, in [0, 1].

        Ties count one half, so a simulated distribution degenerate at the
        observed value gives 0.5. Entries with no defined values are ``nan``.
        """
        sim, obs = self.simulated, self.observed
        valid = ~np.isnan(sim)
        count = valid.sum(axis=0)
        below = ((sim < obs) & valid).sum(axis=0)
        equal = ((sim == obs) & valid).sum(axis=0)
        with np.errstate(invalid="ignore", divide="ignore"):
            pos = (below + 0.5 * equal) / count
        return np.where((count > 0) & ~np.isnan(obs), pos, np.nan)


@dataclass
class GofReport:
    """Posterior (or prior) predictive comparison, one entry per statistic."""

    checks: dict = field(default_factory=dict)
    n_simulations: int = 0

    def __getitem__(self, name) -> StatisticCheck:
        return self.checks[name]

    def to_dict(self) -> dict:
        return {"n_simulations": self.n_simulations,
                "statistics": {k: c.summary() for k, c in self.checks.items()}}

    def write_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(_finite_or_none(self.to_dict()), fh, indent=2)

    def write_csv(self, path) -> None:
        """Tidy rows: ``statistic, source, replicate, value`` (source is observed or sim)."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["statistic", "source", "replicate", "value"])
            for name, c in self.checks.items():
                for k, label in enumerate(c.labels):
                    stat = f"{name}[{label}]"
                    w.writerow([stat, "observed", 0, repr(float(c.observed[k]))])
                    for r in range(c.simulated.shape[0]):
                        w.writerow([stat, "sim", r + 1, repr(float(c.simulated[r, k]))])


def _finite_or_none(obj):
    if isinstance(obj, dict):
        return {k: _finite_or_none(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_finite_or_none(v) for v in obj]
    if isinstance(obj, float) and not np.isfinite(obj):
        return None
    return obj


def apply_mask(net: MultiplexNetwork, observed: MultiplexNetwork) -> MultiplexNetwork:
    """Copy of ``net`` with the cells missing in ``observed`` set to ``MISSING``."""
    if net.adj.shape != observed.adj.shape:
        raise ValueError(f"network shapes differ: {net.adj.shape} vs {observed.adj.shape}")
    if not observed.has_missing:
        return net
    adj = net.adj.copy()
    adj[observed.missing] = MISSING
    return MultiplexNetwork(adj, net.layer_names, net.actor_labels)


def ppc_report(observed: MultiplexNetwork, batch, statistics=STATISTICS,
               workers: int = 1) -> GofReport:
    """Compare statistics of ``observed`` with those of every network in ``batch``.

    Cells missing in ``observed`` are masked in each simulated network too.

    Parameters
    ----------
    observed : MultiplexNetwork
    batch : SimBatch or sequence of MultiplexNetwork
    statistics : sequence of str
        Any of :data:`STATISTICS`.
    workers : int
        Threads used to compute the per-network statistics.
    """
    networks = list(getattr(batch, "networks", batch))
    if not networks:
        raise ValueError("the simulated batch is empty")
    statistics = list(dict.fromkeys(statistics))
    obs = network_statistics(observed, statistics)

    def compute(net):
        return network_statistics(apply_mask(net, observed), statistics)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            sims = list(pool.map(compute, networks))
    else:
        sims = [compute(net) for net in networks]
    checks = {}
    for name in statistics:
        labels, values = obs[name]
        checks[name] = StatisticCheck(labels, values, np.array([s[name][1] for s in sims]))
    return GofReport(checks, len(networks))


def load_report(path) -> dict:
    with open(Path(path)) as fh:
        return json.load(fh)
