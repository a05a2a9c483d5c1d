import math

import numpy as np
import pytest
from scipy import stats

from multiplex_p2.meta import GroupEstimate, MetaPosterior
from multiplex_p2.sampler import (DrawsMatrix, FunctionTarget, NUTSChain, SamplerConfig,
                                  SamplerError, _Point, ess, rhat, run_chain, sample,
                                  summarize)


def normal_target(dim=2, cov=None):
    prec = np.linalg.inv(cov) if cov is not None else np.eye(dim)

    def logp_grad(x):
        g = -prec @ x
        return 0.5 * float(x @ g), g
    return FunctionTarget(logp_grad, dim)


CONFIG = SamplerConfig(chains=4, iterations=2000, seed=7)


@pytest.fixture(scope="module")
def std_normal_draws():
    return sample(normal_target(2), CONFIG)


def test_standard_normal_moments(std_normal_draws):
    flat = std_normal_draws.flat()
    assert flat.shape == (4000, 2)
    assert np.all(np.abs(flat.mean(axis=0)) < 0.05)
    assert np.all(np.abs(flat.std(axis=0, ddof=1) - 1) < 0.05)


def test_correlated_normal():
    cov = np.array([[1.0, 0.9], [0.9, 1.0]])
    flat = sample(normal_target(2, cov), CONFIG).flat()
    assert abs(np.corrcoef(flat.T)[0, 1] - 0.9) < 0.05


def test_ks_distance_one_dim():
    flat = sample(normal_target(1), CONFIG).flat()[:, 0]
    assert stats.kstest(flat, "norm").statistic < 0.05


def test_energy_bookkeeping(std_normal_draws):
    # for a d-dim standard normal, E[-log p] = E[kinetic] = d/2 with this unnormalized target
    energy = std_normal_draws.stats["energy"]
    assert abs(energy.mean() - 2.0) < 0.1


def test_energy_error_mean_near_zero(std_normal_draws):
    err = std_normal_draws.stats["energy_error"]
    assert np.all(np.isfinite(err))
    assert abs(err.mean()) < 0.05
    # exp(-error) has mean 1 for volume-preserving reversible dynamics
    assert abs(np.exp(-err).mean() - 1) < 0.1


def test_warmup_acceptance_converges_to_target():
    acc = []
    run_chain(normal_target(2), SamplerConfig(chains=1, iterations=2000, seed=3),
              np.random.SeedSequence(3), callback=lambda it, info: acc.append(info["accept_stat"]))
    assert abs(np.mean(acc[500:1000]) - 0.8) < 0.05


@pytest.mark.xfail(strict=True, reason="the averaged dual-averaging step size is conservative; "
                   "realized acceptance after warmup runs above target on low-dimensional targets")
def test_post_warmup_acceptance_within_target(std_normal_draws):
    assert abs(std_normal_draws.stats["accept_stat"].mean() - 0.8) < 0.05


def test_same_seed_identical(std_normal_draws):
    again = sample(normal_target(2), CONFIG)
    np.testing.assert_array_equal(again.draws, std_normal_draws.draws)
    other = sample(normal_target(2), SamplerConfig(chains=4, iterations=2000, seed=8))
    assert not np.array_equal(other.draws, std_normal_draws.draws)


def test_chains_are_distinct_streams(std_normal_draws):
    d = std_normal_draws.draws
    assert not np.array_equal(d[0], d[1])


def test_draw_count_and_names(std_normal_draws):
    cfg = SamplerConfig(chains=3, iterations=300, warmup=100, seed=1)
    out = sample(normal_target(3), cfg)
    assert out.draws.shape == (3, 200, 3)
    assert out.divergent.shape == (3, 200)
    assert out.names == ["x[1]", "x[2]", "x[3]"]


def test_compiled_transition_matches_python():
    groups = [GroupEstimate(str(k), y, s) for k, (y, s) in
              enumerate([(1.2, 0.4), (2.5, 0.8), (0.3, 0.5), (1.9, 0.3), (3.1, 1.0)])]
    post = MetaPosterior(groups)
    plain = FunctionTarget(post.logp_grad, post.dim)
    q = np.zeros(post.dim)
    logp, grad = post.logp_grad(q)
    metric = np.linspace(0.5, 2.0, post.dim)
    chains = [NUTSChain(t, np.random.default_rng(5), step_size=0.3, inv_metric=metric)
              for t in (post, plain)]
    states = [_Point(q, np.zeros(0), logp, grad)] * 2
    for _ in range(25):
        steps = [c.transition(s) for c, s in zip(chains, states)]
        states = [st for st, _ in steps]
        (a, ia), (b, ib) = steps
        np.testing.assert_allclose(a.q, b.q, rtol=1e-9, atol=1e-12)
        assert ia["n_leapfrog"] == ib["n_leapfrog"] and ia["divergent"] == ib["divergent"]
        assert math.isclose(ia["accept_stat"], ib["accept_stat"], rel_tol=1e-9)
        assert math.isclose(ia["energy_error"], ib["energy_error"], rel_tol=1e-9, abs_tol=1e-12)


def test_python_chain_flag_disables_kernel():
    post = MetaPosterior([GroupEstimate("a", 0.0, 1.0), GroupEstimate("b", 1.0, 1.0)])
    chain = NUTSChain(post, np.random.default_rng(0), compiled=False)
    assert chain.kernel is None


def test_config_validation():
    with pytest.raises(ValueError):
        SamplerConfig(iterations=100, warmup=100)
    with pytest.raises(ValueError):
        SamplerConfig(chains=0)
    with pytest.raises(ValueError):
        SamplerConfig(target_accept=1.0)
    assert SamplerConfig().warmup == 1000


def test_non_finite_target_raises():
    target = FunctionTarget(lambda x: (-np.inf, np.zeros_like(x)), 2)
    with pytest.raises(SamplerError):
        sample(target, SamplerConfig(chains=1, iterations=10))


def test_divergence_warning():
    # finite only inside a narrow slab, so most trajectories leave it and diverge
    def logp_grad(x):
        if abs(x[0]) > 0.05:
            return -np.inf, np.zeros_like(x)
        return -0.5 * float(x @ x), -x
    target = FunctionTarget(logp_grad, 2)
    with pytest.warns(UserWarning, match="diverged"):
        out = sample(target, SamplerConfig(chains=1, iterations=200, seed=2), init=np.zeros(2))
    # divergent transitions are rejected but still occupy their draw slot
    assert out.divergence_rate > 0.2
    assert out.draws.shape == (1, 100, 2)
    assert np.all(np.abs(out.draws[0, :, 0]) <= 0.05)


# -- diagnostics -----------------------------------------------------------------

def split_rhat_oracle(chains):
    chains = np.asarray(chains, dtype=float)
    half = chains.shape[1] // 2
    parts = [c[:half] for c in chains] + [c[-half:] for c in chains]
    m, n = len(parts), half
    means = np.array([np.mean(p) for p in parts])
    grand = means.mean()
    B = n / (m - 1) * np.sum((means - grand) ** 2)
    W = np.mean([np.sum((p - np.mean(p)) ** 2) / (n - 1) for p in parts])
    return math.sqrt(((n - 1) / n * W + B / n) / W)


def test_rhat_hand_example():
    chains = [[1.0, 2.0, 3.0, 4.0], [2.0, 4.0, 6.0, 8.0]]
    assert math.isclose(rhat(np.array(chains)), split_rhat_oracle(chains), rel_tol=1e-12)
    # the same value worked by hand: var+ = 0.625 + 65/12, W = 1.25
    assert math.isclose(rhat(np.array(chains)), math.sqrt((0.625 + 65 / 12) / 1.25), rel_tol=1e-12)


def test_rhat_mixing_and_not():
    rng = np.random.default_rng(0)
    same = rng.normal(size=(4, 1000))
    assert rhat(same) < 1.05
    apart = rng.normal(size=(2, 1000)) + np.array([[0.0], [100.0]])
    assert rhat(apart) > 10


def test_rhat_needs_enough_draws():
    with pytest.raises(ValueError):
        rhat(np.zeros((1, 10)))
    with pytest.raises(ValueError):
        rhat(np.zeros((2, 3)))


def test_ess_white_noise():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(4, 1000))
    assert abs(ess(x) / 4000 - 1) < 0.15


def test_ess_constant_chain():
    assert ess(np.full((2, 100), 3.0)) == 0.0


def test_ess_ar1():
    rng = np.random.default_rng(2)
    phi, N = 0.9, 20000
    x = np.empty(N)
    x[0] = rng.normal() / math.sqrt(1 - phi ** 2)
    for t in range(1, N):
        x[t] = phi * x[t - 1] + rng.normal()
    expected = N * (1 - phi) / (1 + phi)
    assert abs(ess(x[None, :]) / expected - 1) < 0.25


def test_summarize_examples():
    draws = np.stack([np.full((2, 50), 4.0), np.arange(1.0, 101.0).reshape(2, 50)], axis=2)
    rows = summarize(DrawsMatrix(draws, ["c", "seq"], np.zeros((2, 50), bool)))
    assert [r["name"] for r in rows] == ["c", "seq"]
    c = rows[0]
    assert c["mean"] == 4.0 and c["sd"] == 0.0
    assert c["q2.5"] == c["q50"] == c["q97.5"] == 4.0
    assert rows[1]["q50"] == 50.5
    assert math.isclose(rows[1]["q2.5"], np.percentile(np.arange(1, 101), 2.5))


def test_summarize_empty_raises():
    with pytest.raises(ValueError):
        summarize(DrawsMatrix(np.empty((0, 0, 1)), ["a"], np.empty((0, 0), bool)))


def test_draws_csv_round_trip(tmp_path, std_normal_draws):
    path = tmp_path / "draws.csv"
    std_normal_draws.to_csv(path, header={"seed": 7})
    assert path.read_text().startswith("# seed: 7\n")
    again = DrawsMatrix.from_csv(path)
    np.testing.assert_array_equal(again.draws, std_normal_draws.draws)
    np.testing.assert_array_equal(again.divergent, std_normal_draws.divergent)
    assert again.names == std_normal_draws.names


def test_sidecar(tmp_path, std_normal_draws):
    import json
    std_normal_draws.write_sidecar(tmp_path / "d.json", {"note": 1})
    doc = json.loads((tmp_path / "d.json").read_text())
    assert doc["config"]["chains"] == 4 and doc["note"] == 1
    assert "divergences" in doc["diagnostics"]
