"""Directed binary multiplex networks with missing ties, plus covariates.

Adjacency tensors are stored as ``int8`` arrays of shape ``(n, n, T)`` with
entries ``0``, ``1`` or :data:`MISSING`. The diagonal is a structural zero and
is never missing.
"""

from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Mapping, Sequence

import numpy as np

MISSING = -1
NA_TOKEN = "NA"

#: Effect families that accept covariates. Dyad-level families take dyadic
#: covariates, ``sender``/``receiver`` take actor covariates.
DYADIC_FAMILIES = ("density", "reciprocity", "cross_density", "cross_reciprocity")
ACTOR_FAMILIES = ("sender", "receiver")
CROSS_FAMILIES = ("cross_density", "cross_reciprocity")


class NetworkFormatError(ValueError):
    """Raised when network or covariate input fails validation."""


@dataclass(frozen=True)
class MultiplexNetwork:
    """Directed binary multiplex network on ``n`` actors and ``T`` layers.

    Parameters
    ----------
    adj : ndarray of int8, shape (n, n, T)
        Tie indicators; ``MISSING`` (-1) marks unobserved ties.
    layer_names : sequence of str, optional
        Unique layer labels. Defaults to ``layer1 ... layerT``.
    actor_labels : sequence of str, optional
        Labels in index order. Defaults to ``"1" ... "n"``.
    """

    adj: np.ndarray
    layer_names: tuple[str, ...] = ()
    actor_labels: tuple[str, ...] = ()

    def __post_init__(self):
        adj = np.array(self.adj, dtype=np.int8, copy=True)
        if adj.ndim == 2:
            adj = adj[:, :, None]
        if adj.ndim != 3 or adj.shape[0] != adj.shape[1]:
            raise NetworkFormatError(f"adjacency must be n x n x T, got {adj.shape}")
        n, _, T = adj.shape
        if n < 2 or T < 1:
            raise NetworkFormatError("need at least 2 actors and 1 layer")
        if not np.isin(adj, (0, 1, MISSING)).all():
            raise NetworkFormatError("adjacency entries must be 0, 1 or MISSING")
        diag = adj[np.arange(n), np.arange(n), :]
        if (diag != 0).any():
            warnings.warn("nonzero diagonal entries coerced to 0 (no self-loops)")
            adj[np.arange(n), np.arange(n), :] = 0
        adj.setflags(write=False)
        object.__setattr__(self, "adj", adj)

        names = tuple(self.layer_names) or tuple(f"layer{t + 1}" for t in range(T))
        if len(names) != T or len(set(names)) != T:
            raise NetworkFormatError("layer_names must be T unique labels")
        object.__setattr__(self, "layer_names", names)
        labels = tuple(str(a) for a in self.actor_labels) or tuple(str(i + 1) for i in range(n))
        if len(labels) != n:
            raise NetworkFormatError("actor_labels must have length n")
        object.__setattr__(self, "actor_labels", labels)

    @property
    def n(self) -> int:
        return self.adj.shape[0]

    @property
    def T(self) -> int:
        return self.adj.shape[2]

    def layer(self, t: int) -> np.ndarray:
        """Return layer ``t`` as an ``n x n`` int8 matrix (may contain MISSING)."""
        return self.adj[:, :, t]

    @property
    def missing(self) -> np.ndarray:
        """Boolean mask of missing cells, shape ``(n, n, T)``."""
        return self.adj == MISSING

    @property
    def has_missing(self) -> bool:
        return bool(self.missing.any())

    def __eq__(self, other):
        if not isinstance(other, MultiplexNetwork):
            return NotImplemented
        return (
            np.array_equal(self.adj, other.adj)
            and self.layer_names == other.layer_names
            and self.actor_labels == other.actor_labels
        )

    __hash__ = None


@dataclass(frozen=True)
class DyadOutcome:
    """Outcome on the dyad ``{i, j}``, ``i < j``, packed into a ``2T``-bit word.

    Bit ``2t`` holds the tie ``i -> j`` in layer ``t`` and bit ``2t + 1`` the
    tie ``j -> i``. Bits set in ``mask`` are unobserved and ``bits`` is zero
    there.
    """

    bits: int
    mask: int
    T: int

    @property
    def index(self) -> int:
        return self.bits

    @property
    def observed(self) -> bool:
        return self.mask == 0

    def bit(self, b: int) -> int:
        return (self.bits >> b) & 1

    def compatible(self) -> np.ndarray:
        """All outcome indices that agree with the observed bits."""
        outcomes = np.arange(1 << (2 * self.T))
        keep = ~self.mask & ((1 << (2 * self.T)) - 1)
        return outcomes[(outcomes & keep) == self.bits]


def dyad_iter(net: MultiplexNetwork) -> Iterator[tuple[int, int]]:
    """Yield every unordered pair ``(i, j)`` with ``i < j`` in lexicographic order."""
    n = net.n
    for i in range(n):
        for j in range(i + 1, n):
            yield i, j


def dyad_index(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized :func:`dyad_iter`: row/column arrays of the ``n(n-1)/2`` pairs."""
    return np.triu_indices(n, k=1)


def extract_dyad(net: MultiplexNetwork, i: int, j: int) -> DyadOutcome:
    """Pack the ties between ``i`` and ``j`` (``i < j``) into a :class:`DyadOutcome`."""
    if not (0 <= i < net.n and 0 <= j < net.n):
        raise IndexError(f"actor index out of range for n={net.n}")
    if i == j:
        raise ValueError("a dyad needs two distinct actors")
    if i > j:
        raise ValueError("extract_dyad expects i < j")
    bits = mask = 0
    for t in range(net.T):
        for b, v in ((2 * t, net.adj[i, j, t]), (2 * t + 1, net.adj[j, i, t])):
            if v == MISSING:
                mask |= 1 << b
            elif v == 1:
                bits |= 1 << b
    return DyadOutcome(bits, mask, net.T)


def swap_directions(word: int, T: int) -> int:
    """Swap bit pairs ``(2t, 2t+1)``: the same dyad read from ``j``'s side."""
    out = 0
    for t in range(T):
        out |= ((word >> (2 * t)) & 1) << (2 * t + 1)
        out |= ((word >> (2 * t + 1)) & 1) << (2 * t)
    return out


def dyad_codes(net: MultiplexNetwork) -> tuple[np.ndarray, np.ndarray]:
    """Outcome bits and missing masks for all dyads in :func:`dyad_iter` order."""
    I, J = dyad_index(net.n)
    fwd = net.adj[I, J, :].astype(np.int64)
    bwd = net.adj[J, I, :].astype(np.int64)
    weights = 1 << (2 * np.arange(net.T))
    bits = ((fwd == 1) * weights).sum(1) + ((bwd == 1) * 2 * weights).sum(1)
    mask = ((fwd == MISSING) * weights).sum(1) + ((bwd == MISSING) * 2 * weights).sum(1)
    return bits, mask


def network_from_codes(codes: np.ndarray, n: int, T: int, **kwargs) -> MultiplexNetwork:
    """Inverse of :func:`dyad_codes` for fully observed outcome words."""
    I, J = dyad_index(n)
    adj = np.zeros((n, n, T), dtype=np.int8)
    codes = np.asarray(codes, dtype=np.int64)
    for t in range(T):
        adj[I, J, t] = (codes >> (2 * t)) & 1
        adj[J, I, t] = (codes >> (2 * t + 1)) & 1
    return MultiplexNetwork(adj, **kwargs)


@dataclass(frozen=True)
class CovariateSet:
    """Dyadic and actor covariates and the effects they attach to.

    Parameters
    ----------
    dyadic : mapping of str to (n, n) arrays
    actor : mapping of str to length-n arrays
    attachments : mapping of (family, layer key) to covariate names
        ``family`` is one of ``density``, ``reciprocity``, ``cross_density``,
        ``cross_reciprocity``, ``sender``, ``receiver``. The layer key is a
        0-based layer index, or a pair ``(t, s)`` with ``t < s`` for the cross
        families.
    """

    dyadic: Mapping[str, np.ndarray] = field(default_factory=dict)
    actor: Mapping[str, np.ndarray] = field(default_factory=dict)
    attachments: Mapping[tuple, tuple[str, ...]] = field(default_factory=dict)

    def __post_init__(self):
        dyadic = {k: np.asarray(v, dtype=float) for k, v in self.dyadic.items()}
        actor = {k: np.asarray(v, dtype=float) for k, v in self.actor.items()}
        for name, Z in dyadic.items():
            if Z.ndim != 2 or Z.shape[0] != Z.shape[1]:
                raise NetworkFormatError(f"dyadic covariate {name!r} must be n x n")
            if not np.isfinite(Z[~np.eye(len(Z), dtype=bool)]).all():
                raise NetworkFormatError(f"dyadic covariate {name!r} has missing values")
        for name, x in actor.items():
            if x.ndim != 1:
                raise NetworkFormatError(f"actor covariate {name!r} must be a vector")
            if not np.isfinite(x).all():
                raise NetworkFormatError(f"actor covariate {name!r} has missing values")
        sizes = {len(v) for v in (*dyadic.values(), *actor.values())}
        if len(sizes) > 1:
            raise NetworkFormatError("covariates disagree on the number of actors")

        attachments = {}
        for (family, key), names in self.attachments.items():
            if family in CROSS_FAMILIES:
                key = tuple(sorted(int(k) for k in key))
                if len(key) != 2 or key[0] == key[1]:
                    raise NetworkFormatError(f"{family} needs a layer pair, got {key}")
            elif family in DYADIC_FAMILIES or family in ACTOR_FAMILIES:
                key = int(key)
            else:
                raise NetworkFormatError(f"unknown effect family {family!r}")
            pool = actor if family in ACTOR_FAMILIES else dyadic
            names = tuple(names)
            for name in names:
                if name not in pool:
                    raise NetworkFormatError(f"{family}[{key}] references unknown covariate {name!r}")
            if names:
                attachments[(family, key)] = names
        object.__setattr__(self, "dyadic", dyadic)
        object.__setattr__(self, "actor", actor)
        object.__setattr__(self, "attachments", attachments)
        for name in (*dyadic, *actor):
            if self.sd(name) == 0:
                raise NetworkFormatError(f"covariate {name!r} has zero standard deviation")

    @property
    def n(self) -> int | None:
        for v in (*self.dyadic.values(), *self.actor.values()):
            return len(v)
        return None

    def attached(self, family: str, key) -> tuple[str, ...]:
        if family in CROSS_FAMILIES:
            key = tuple(sorted(key))
        return self.attachments.get((family, key), ())

    def sd(self, name: str) -> float:
        """Sample SD (ddof=1); dyadic covariates pool all off-diagonal cells."""
        if name in self.dyadic:
            Z = self.dyadic[name]
            values = Z[~np.eye(len(Z), dtype=bool)]
        else:
            values = self.actor[name]
        if len(values) < 2:
            return 0.0
        return float(np.std(values, ddof=1))

    def check(self, n: int, T: int) -> None:
        """Validate sizes against a network with ``n`` actors and ``T`` layers."""
        if self.n is not None and self.n != n:
            raise NetworkFormatError(f"covariates have {self.n} actors, network has {n}")
        for (family, key) in self.attachments:
            layers = key if isinstance(key, tuple) else (key,)
            if any(not 0 <= t < T for t in layers):
                raise NetworkFormatError(f"{family} attachment refers to a layer outside 0..{T - 1}")


# -- file IO -------------------------------------------------------------------

def _parse_cell(token: str, path) -> int:
    token = token.strip()
    if token in (NA_TOKEN, ""):
        return MISSING
    try:
        value = float(token)
    except ValueError:
        raise NetworkFormatError(f"{path}: non-numeric entry {token!r}") from None
    if value not in (0.0, 1.0):
        raise NetworkFormatError(f"{path}: non-binary entry {token!r}")
    return int(value)


def _is_number(token: str) -> bool:
    try:
        float(token)
    except ValueError:
        return False
    return True


def _read_csv_layer(path) -> tuple[np.ndarray, list[str] | None]:
    try:
        with open(path, newline="") as fh:
            rows = [r for r in csv.reader(fh) if r]
    except OSError as exc:
        raise NetworkFormatError(f"cannot read {path}: {exc}") from exc
    if not rows:
        raise NetworkFormatError(f"{path}: empty file")
    labels = None
    # header row: any non-numeric entry other than NA, or one row more than columns
    if (len(rows) == len(rows[0]) + 1
            or any(not _is_number(tok) and tok.strip() not in (NA_TOKEN, "") for tok in rows[0])):
        labels = [tok.strip() for tok in rows[0]]
        rows = rows[1:]
    n = len(rows)
    if labels is not None and len(labels) == n + 1:
        labels = labels[1:]
    mat = []
    for r in rows:
        if len(r) == n + 1 and labels is not None:
            r = r[1:]
        if len(r) != n:
            raise NetworkFormatError(f"{path}: matrix is not square")
        mat.append([_parse_cell(tok, path) for tok in r])
    return np.array(mat, dtype=np.int8).reshape(n, n), labels


def load_multiplex(layer_files: Sequence, schema: str = "csv",
                   layer_names: Sequence[str] | None = None) -> MultiplexNetwork:
    """Load a multiplex network from per-layer CSV files or a JSON bundle.

    ``schema="csv"`` reads one ``n x n`` matrix per file, ``NA`` marking missing
    ties and an optional header row of actor labels. ``schema="json"`` expects a
    single bundle file (see :func:`load_bundle`) and returns its network only.
    """
    if schema == "json":
        if len(layer_files) != 1:
            raise NetworkFormatError("json schema takes a single bundle file")
        return load_bundle(layer_files[0])[0]
    if schema != "csv":
        raise NetworkFormatError(f"unknown schema {schema!r}")
    if not layer_files:
        raise NetworkFormatError("no layer files given")
    layers, labels = [], None
    for path in layer_files:
        mat, lab = _read_csv_layer(path)
        if layers and mat.shape != layers[0].shape:
            raise NetworkFormatError(
                f"dimension mismatch: {path} is {mat.shape}, expected {layers[0].shape}")
        layers.append(mat)
        labels = labels or lab
    names = tuple(layer_names) if layer_names else tuple(Path(p).stem for p in layer_files)
    if len(set(names)) != len(names):
        names = ()
    return MultiplexNetwork(np.stack(layers, axis=2), names, tuple(labels or ()))


def write_layer_csv(net: MultiplexNetwork, t: int, path, header: bool = True) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        if header:
            w.writerow(net.actor_labels)
        for row in net.layer(t):
            w.writerow([NA_TOKEN if v == MISSING else int(v) for v in row])


def write_multiplex(net: MultiplexNetwork, directory) -> list[Path]:
    """Write one CSV per layer into ``directory``; returns the file paths."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for t, name in enumerate(net.layer_names):
        path = directory / f"{name}.csv"
        write_layer_csv(net, t, path)
        paths.append(path)
    return paths


def _matrix_to_json(mat: np.ndarray) -> list:
    return [[None if v == MISSING else int(v) for v in row] for row in mat]


def bundle_dict(net: MultiplexNetwork, covs: CovariateSet | None = None) -> dict:
    covs = covs or CovariateSet()
    out = {
        "actors": list(net.actor_labels),
        "layers": {name: _matrix_to_json(net.layer(t)) for t, name in enumerate(net.layer_names)},
        "dyadic_covariates": {k: v.tolist() for k, v in covs.dyadic.items()},
        "actor_covariates": {k: v.tolist() for k, v in covs.actor.items()},
    }
    if covs.attachments:
        out["attachments"] = [
            {"family": fam, "layers": list(key) if isinstance(key, tuple) else [key],
             "covariates": list(names)}
            for (fam, key), names in covs.attachments.items()
        ]
    return out


def write_bundle(path, net: MultiplexNetwork, covs: CovariateSet | None = None) -> None:
    with open(path, "w") as fh:
        json.dump(bundle_dict(net, covs), fh)


def parse_attachments(entries, layer_names: Sequence[str]) -> dict:
    """Parse ``[{"family", "layers", "covariates"}]`` records; layers by name or 0-based index."""
    lookup = {name: t for t, name in enumerate(layer_names)}

    def layer_index(v):
        if isinstance(v, str):
            if v not in lookup:
                raise NetworkFormatError(f"unknown layer {v!r}")
            return lookup[v]
        return int(v)

    out = {}
    for entry in entries or []:
        family = entry["family"]
        layers = [layer_index(v) for v in entry["layers"]]
        key = tuple(layers) if family in CROSS_FAMILIES else layers[0]
        out[(family, key)] = tuple(entry["covariates"])
    return out


def load_bundle(path) -> tuple[MultiplexNetwork, CovariateSet]:
    """Read the JSON bundle format.

    ``{"layers": {name: matrix}, "dyadic_covariates": {name: matrix},
    "actor_covariates": {name: vector}, "actors": [...], "attachments": [...]}``;
    ``null`` marks a missing tie.
    """
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise NetworkFormatError(f"cannot read bundle {path}: {exc}") from exc
    layers = doc.get("layers")
    if not layers:
        raise NetworkFormatError(f"{path}: bundle has no layers")
    mats = []
    for name, mat in layers.items():
        arr = np.array([[MISSING if v is None else v for v in row] for row in mat], dtype=float)
        if mats and arr.shape != mats[0].shape:
            raise NetworkFormatError(f"dimension mismatch in layer {name!r}")
        if not np.isin(arr, (0, 1, MISSING)).all():
            raise NetworkFormatError(f"layer {name!r}: non-binary entry")
        mats.append(arr.astype(np.int8))
    net = MultiplexNetwork(np.stack(mats, axis=2), tuple(layers), tuple(doc.get("actors", ())))
    for name, x in doc.get("actor_covariates", {}).items():
        if any(v is None for v in x):
            raise NetworkFormatError(f"actor covariate {name!r} has missing values")
    covs = CovariateSet(
        dyadic=doc.get("dyadic_covariates", {}),
        actor=doc.get("actor_covariates", {}),
        attachments=parse_attachments(doc.get("attachments"), net.layer_names),
    )
    covs.check(net.n, net.T)
    return net, covs
