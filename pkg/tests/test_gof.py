import csv
import itertools
import json
import math
import warnings
from math import comb

import networkx as nx
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from multiplex_p2 import gof
from multiplex_p2.model import ModelSpec
from multiplex_p2.network import MISSING, MultiplexNetwork
from multiplex_p2.simulate import prior_predictive


def edges(n, pairs):
    m = np.zeros((n, n), dtype=np.int8)
    for i, j in pairs:
        m[i - 1, j - 1] = 1
    return m


@st.composite
def layers(draw, min_n=2, max_n=8, missing=False):
    n = draw(st.integers(min_n, max_n))
    vals = [0, 1, MISSING] if missing else [0, 1]
    m = draw(arrays(np.int8, (n, n), elements=st.sampled_from(vals)))
    np.fill_diagonal(m, 0)
    return m


# -- uniplex statistics --------------------------------------------------------

def test_density_examples():
    complete = 1 - np.eye(3, dtype=np.int8)
    assert gof.density(complete) == 1.0
    assert math.isclose(gof.density(edges(3, [(1, 2)])), 1 / 6)
    assert gof.density(np.zeros((3, 3))) == 0.0
    with pytest.raises(ValueError):
        gof.density(np.zeros((1, 1)))


def test_density_excludes_missing():
    m = edges(3, [(1, 2), (2, 3)])
    m[3 - 1, 1 - 1] = MISSING
    assert math.isclose(gof.density(m), 2 / 5)


def test_reciprocity_examples():
    assert math.isclose(gof.reciprocity(edges(3, [(1, 2), (2, 1), (1, 3)])), 2 / 3)
    assert gof.reciprocity(1 - np.eye(4, dtype=np.int8)) == 1.0
    assert gof.reciprocity(edges(3, [(1, 2), (2, 3), (3, 1)])) == 0.0
    with pytest.warns(UserWarning):
        assert gof.reciprocity(np.zeros((3, 3))) == 0.0


def test_transitivity_examples():
    assert gof.transitivity(1 - np.eye(3, dtype=np.int8)) == 1.0
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        assert gof.transitivity(edges(3, [(1, 2), (2, 3)])) == 0.0
    assert gof.transitivity(edges(3, [(1, 2), (2, 3), (1, 3)])) == 1.0
    with pytest.warns(UserWarning):
        assert gof.transitivity(edges(3, [(1, 2)])) == 0.0


def test_degree_examples():
    star = edges(5, [(1, k) for k in range(2, 6)])
    indeg, outdeg = gof.degree_sequences(star)
    assert outdeg[0] == 4 and list(indeg[1:]) == [1, 1, 1, 1]
    indeg, outdeg = gof.degree_sequences(np.zeros((4, 4)))
    assert not indeg.any() and not outdeg.any()


@settings(max_examples=60, deadline=None)
@given(layers(missing=True))
def test_handshake_identity(m):
    indeg, outdeg = gof.degree_sequences(m)
    assert indeg.sum() == outdeg.sum() == (m == 1).sum()


def brute_transitivity(m):
    closed = total = 0
    n = len(m)
    for i, j, k in itertools.permutations(range(n), 3):
        if m[i, j] == 1 and m[j, k] == 1 and m[i, k] != MISSING:
            total += 1
            closed += m[i, k] == 1
    return closed / total if total else 0.0


@settings(max_examples=60, deadline=None)
@given(layers(min_n=3, missing=True))
def test_transitivity_matches_enumeration(m):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        assert math.isclose(gof.transitivity(m), brute_transitivity(m), abs_tol=1e-12)


# -- triad census --------------------------------------------------------------

TRIAD_REPRESENTATIVES = {
    "003": [], "012": [(0, 1)], "102": [(0, 1), (1, 0)], "021D": [(0, 1), (0, 2)],
    "021U": [(1, 0), (2, 0)], "021C": [(0, 1), (1, 2)], "111D": [(0, 1), (1, 0), (2, 0)],
    "111U": [(0, 1), (1, 0), (0, 2)], "030T": [(0, 1), (1, 2), (0, 2)],
    "030C": [(0, 1), (1, 2), (2, 0)], "201": [(0, 1), (1, 0), (0, 2), (2, 0)],
    "120D": [(0, 1), (0, 2), (1, 2), (2, 1)], "120U": [(1, 0), (2, 0), (1, 2), (2, 1)],
    "120C": [(0, 1), (1, 2), (0, 2), (2, 0)],
    "210": [(0, 1), (1, 0), (0, 2), (2, 0), (1, 2)],
    "300": [(a, b) for a in range(3) for b in range(3) if a != b],
}


def canonical(arcs):
    return min(tuple(sorted((p[a], p[b]) for a, b in arcs))
               for p in itertools.permutations(range(3)))


CANON = {canonical(arcs): name for name, arcs in TRIAD_REPRESENTATIVES.items()}


def brute_census(m):
    counts = dict.fromkeys(gof.TRIAD_TYPES, 0)
    for tri in itertools.combinations(range(len(m)), 3):
        arcs = [(a, b) for a in range(3) for b in range(3)
                if a != b and m[tri[a], tri[b]] == 1]
        counts[CANON[canonical(arcs)]] += 1
    return [counts[t] for t in gof.TRIAD_TYPES]


def test_sixteen_distinct_classes():
    assert len(CANON) == 16


def test_triad_examples():
    census = gof.triad_census(np.zeros((5, 5)))
    assert census[0] == 10 and census[1:].sum() == 0
    census = gof.triad_census(1 - np.eye(3, dtype=np.int8))
    assert census[gof.TRIAD_TYPES.index("300")] == 1 and census.sum() == 1
    with pytest.raises(ValueError):
        gof.triad_census(np.zeros((2, 2)))


@settings(max_examples=50, deadline=None)
@given(layers(min_n=3, max_n=8))
def test_census_matches_isomorphism_oracle(m):
    census = gof.triad_census(m)
    assert census.sum() == comb(len(m), 3)
    assert list(census) == brute_census(m)


def test_census_matches_networkx():
    rng = np.random.default_rng(0)
    m = (rng.random((7, 7)) < 0.4).astype(np.int8)
    np.fill_diagonal(m, 0)
    ref = nx.triadic_census(nx.from_numpy_array(m, create_using=nx.DiGraph))
    assert list(gof.triad_census(m)) == [ref[t] for t in gof.TRIAD_TYPES]


# -- multiplex statistics -------------------------------------------------------

def test_jaccard_examples():
    a = edges(3, [(1, 2), (2, 3), (3, 1)])
    assert gof.jaccard(a, a) == 1.0
    assert gof.jaccard(edges(3, [(1, 2)]), edges(3, [(2, 1)])) == 0.0
    assert math.isclose(gof.jaccard(a, edges(3, [(1, 2)])), 1 / 3)
    with pytest.warns(UserWarning):
        assert gof.jaccard(np.zeros((3, 3)), np.zeros((3, 3))) == 1.0
    with pytest.raises(ValueError):
        gof.jaccard(np.zeros((3, 3)), np.zeros((4, 4)))


def test_cross_reciprocity_examples():
    a = edges(4, [(1, 2), (2, 3), (4, 1)])
    assert gof.cross_reciprocity_jaccard(a, a.T) == 1.0
    assert gof.cross_reciprocity_jaccard(edges(3, [(1, 2)]), edges(3, [(2, 1)])) == 1.0
    assert gof.cross_reciprocity_jaccard(edges(3, [(1, 2)]), edges(3, [(1, 2)])) == 0.0
    with pytest.raises(ValueError):
        gof.cross_reciprocity_jaccard(np.zeros((3, 3)), np.zeros((4, 4)))


@settings(max_examples=60, deadline=None)
@given(st.data())
def test_jaccard_symmetry_and_identity(data):
    a = data.draw(layers(min_n=3, max_n=6))
    b = data.draw(arrays(np.int8, a.shape, elements=st.sampled_from([0, 1])))
    np.fill_diagonal(b, 0)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        assert gof.jaccard(a, b) == gof.jaccard(b, a)
        if a.any() or b.any():
            assert (gof.jaccard(a, b) == 1.0) == np.array_equal(a, b)


def test_jaccard_excludes_cells_missing_in_either_layer():
    a = edges(3, [(1, 2), (2, 3)])
    b = edges(3, [(1, 2)])
    b[1, 2] = MISSING
    assert gof.jaccard(a, b) == 1.0


def test_degree_correlation_examples():
    rng = np.random.default_rng(1)
    layer = (rng.random((6, 6)) < 0.5).astype(np.int8)
    np.fill_diagonal(layer, 0)
    net = MultiplexNetwork(np.stack([layer, layer], axis=2))
    corr = gof.degree_correlations(net)
    labels = gof.degree_labels(2)
    assert math.isclose(corr[labels.index("out[1]"), labels.index("out[2]")], 1.0)
    defined = ~np.isnan(np.diag(corr))
    np.testing.assert_allclose(np.diag(corr)[defined], 1.0)


def test_degree_correlation_hand_example():
    # out-degrees (2, 1, 1, 0) and in-degrees (0, 1, 1, 2)
    layer = edges(4, [(1, 2), (1, 3), (2, 4), (3, 4)])
    corr = gof.degree_correlations(MultiplexNetwork(layer))
    out, inn = np.array([2, 1, 1, 0.0]), np.array([0, 1, 1, 2.0])
    r = np.sum((out - out.mean()) * (inn - inn.mean())) / np.sqrt(
        np.sum((out - out.mean()) ** 2) * np.sum((inn - inn.mean()) ** 2))
    assert math.isclose(corr[0, 1], r) and math.isclose(r, -1.0)


def test_degree_correlation_constant_sequence_is_nan():
    net = MultiplexNetwork(np.stack([1 - np.eye(4), edges(4, [(1, 2), (3, 4)])], axis=2))
    corr = gof.degree_correlations(net)
    assert np.isnan(corr[0, 2])
    with pytest.raises(ValueError):
        gof.degree_correlations(MultiplexNetwork(np.zeros((2, 2, 1))))


# -- posterior predictive report ---------------------------------------------------

@pytest.fixture(scope="module")
def biplex():
    rng = np.random.default_rng(2)
    adj = (rng.random((8, 8, 2)) < 0.3).astype(np.int8)
    adj[np.arange(8), np.arange(8)] = 0
    return MultiplexNetwork(adj)


def test_identical_copies_give_interior_position(biplex):
    report = gof.ppc_report(biplex, [biplex] * 20, ["density", "jaccard", "triad_census"])
    for check in report.checks.values():
        assert np.all(check.position() == 0.5)
        assert np.all(check.simulated == check.observed)


def test_out_of_range_observed_gives_extreme_position(biplex):
    empty = MultiplexNetwork(np.zeros((8, 8, 2)))
    full = MultiplexNetwork(np.ones((8, 8, 2)))
    assert np.all(gof.ppc_report(biplex, [empty] * 5, ["density"])["density"].position() == 1.0)
    assert np.all(gof.ppc_report(biplex, [full] * 5, ["density"])["density"].position() == 0.0)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(0, 1), min_size=1, max_size=30), st.floats(0, 1))
def test_position_in_unit_interval(values, obs):
    check = gof.StatisticCheck(["x"], np.array([obs]), np.array(values)[:, None])
    assert 0.0 <= check.position()[0] <= 1.0


def test_full_statistic_set_runs_at_paper_scale():
    batch = prior_predictive(ModelSpec(T=3), 30, 1000, np.random.default_rng(3))
    report = gof.ppc_report(batch.networks[0], batch, gof.STATISTICS, workers=2)
    assert list(report.checks) == list(gof.STATISTICS)
    assert report.n_simulations == 1000
    assert report["triad_census"].simulated.shape == (1000, 48)
    assert report["degree_correlations"].simulated.shape == (1000, 15)


def test_missing_cells_masked_like_for_like(biplex):
    adj = biplex.adj.copy()
    adj[0, 1, 0] = adj[2, 3, 1] = MISSING
    observed = MultiplexNetwork(adj)
    report = gof.ppc_report(observed, [biplex], ["density"])
    # the simulated copy equals the observed network on every observed cell
    np.testing.assert_allclose(report["density"].simulated[0], report["density"].observed)


def test_unknown_statistic_and_empty_batch(biplex):
    with pytest.raises(ValueError):
        gof.ppc_report(biplex, [biplex], ["geodesic"])
    with pytest.raises(ValueError):
        gof.ppc_report(biplex, [], ["density"])
    with pytest.raises(ValueError):
        gof.ppc_report(biplex, [MultiplexNetwork(np.zeros((5, 5, 2)))], ["density"])


def test_report_serialization(tmp_path, biplex):
    other = MultiplexNetwork(np.zeros((8, 8, 2)))
    report = gof.ppc_report(biplex, [biplex, other], ["density", "degree_correlations"])
    report.write_json(tmp_path / "gof.json")
    doc = gof.load_report(tmp_path / "gof.json")
    assert set(doc["statistics"]) == {"density", "degree_correlations"}
    assert doc["n_simulations"] == 2
    report.write_csv(tmp_path / "gof.csv")
    with open(tmp_path / "gof.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert set(rows[0]) == {"statistic", "source", "replicate", "value"}
    dens = [r for r in rows if r["statistic"] == "density[1]"]
    assert [r["source"] for r in dens] == ["observed", "sim", "sim"]
    assert json.loads((tmp_path / "gof.json").read_text())  # NaN written as null
