import csv
import math

import numpy as np
import pytest

from multiplex_p2.meta import (GroupEstimate, MetaPosterior, MetaPrior, meta_fit, meta_summarize,
                               mu_given_tau, precision_weighted_mean, read_group_csv,
                               write_summary_csv)
from multiplex_p2.sampler import SamplerConfig, ess

CONFIG = SamplerConfig(chains=4, iterations=2000, seed=21)


def groups(values, ses):
    return [GroupEstimate(f"g{k}", float(y), float(s)) for k, (y, s) in enumerate(zip(values, ses))]


def mean_and_mcse(draws, name):
    k = draws.names.index(name)
    x = draws.draws[:, :, k]
    return x.mean(), x.std(ddof=1) / math.sqrt(ess(x))


FIVE = groups([1.2, 2.5, 0.3, 1.9, 3.1], [0.4, 0.8, 0.5, 0.3, 1.0])


def test_concentrated_consensus():
    s = meta_summarize(meta_fit(groups([1.0] * 6, [0.01] * 6), sampler_config=CONFIG))
    assert abs(s.mu_mean - 1.0) < 0.05


def test_symmetric_pair():
    s = meta_summarize(meta_fit(groups([-1.0, 1.0], [0.5, 0.5]), sampler_config=CONFIG))
    assert abs(s.mu_mean) < 0.1


def test_dominant_group():
    est = groups([3.0, -4.0, 6.0, -8.0, 0.0], [0.01, 100.0, 100.0, 100.0, 100.0])
    s = meta_summarize(meta_fit(est, sampler_config=CONFIG))
    assert abs(s.mu_mean - 3.0) < 0.1


def test_identical_groups_put_tau_near_zero():
    draws = meta_fit(groups([0.5] * 10, [0.1] * 10), sampler_config=CONFIG)
    tau = draws.draws[:, :, draws.names.index("tau")]
    # the prior median of tau is 0.5
    assert np.median(tau) < 0.1 and np.mean(tau < 0.2) > 0.9


def test_partial_pooling_shrinks_every_group():
    s = meta_summarize(meta_fit(FIVE, sampler_config=CONFIG))
    for g, row in zip(FIVE, s.groups):
        lo, hi = sorted((g.theta_hat, s.mu_mean))
        assert lo - 0.02 <= row["mean"] <= hi + 0.02
    assert [r["name"] for r in s.groups] == [f"theta[g{k}]" for k in range(5)]
    assert s.mu_ci[0] < s.mu_mean < s.mu_ci[1] and s.tau_ci[0] > 0


def test_fixed_tau_matches_exact_conditional():
    draws = meta_fit(FIVE, sampler_config=CONFIG, tau=0.7)
    mean, mcse = mean_and_mcse(draws, "mu")
    exact_mean, exact_sd = mu_given_tau(FIVE, 0.7)
    assert abs(mean - exact_mean) < 4 * mcse
    k = draws.names.index("mu")
    assert abs(draws.draws[:, :, k].std() / exact_sd - 1) < 0.05
    assert np.all(draws.draws[:, :, draws.names.index("tau")] == 0.7)


def test_precision_weighted_limit():
    est = groups([1.2, 2.5, 0.3, 1.9, 3.1, -0.4], [0.04, 0.08, 0.05, 0.03, 0.1, 0.06])
    mean, _ = mu_given_tau(est, 1e-6)
    assert abs(mean - precision_weighted_mean(est)) < 1e-3
    draws = meta_fit(est, sampler_config=CONFIG, tau=1e-6)
    sampled, _ = mean_and_mcse(draws, "mu")
    assert abs(sampled - precision_weighted_mean(est)) < 1e-3 + 4 * _


def test_group_permutation_invariance():
    post = MetaPosterior(FIVE)
    perm = [3, 0, 4, 1, 2]
    shuffled = MetaPosterior([FIVE[k] for k in perm])
    q = np.random.default_rng(0).normal(size=post.dim)
    q_perm = np.concatenate([q[:2], q[2:][perm]])
    assert math.isclose(post.logp_grad(q)[0], shuffled.logp_grad(q_perm)[0], rel_tol=1e-12)
    a = meta_fit(FIVE, sampler_config=CONFIG)
    b = meta_fit([FIVE[k] for k in perm], sampler_config=CONFIG)
    for name in ("mu", "tau"):
        (ma, sa), (mb, sb) = mean_and_mcse(a, name), mean_and_mcse(b, name)
        assert abs(ma - mb) < 4 * math.hypot(sa, sb)


def test_centered_and_noncentered_agree():
    cfg = SamplerConfig(chains=4, iterations=6000, seed=5, target_accept=0.95)
    a = meta_fit(FIVE, sampler_config=cfg)
    b = meta_fit(FIVE, sampler_config=cfg, parameterization="centered")
    ma, sa = mean_and_mcse(a, "mu")
    mb, sb = mean_and_mcse(b, "mu")
    assert abs(ma - mb) < 4 * math.hypot(sa, sb)
    ta = a.draws[:, :, 1].ravel()
    tb = b.draws[:, :, 1].ravel()
    # tau is heavy tailed under a half-Cauchy prior; compare the bulk by quantiles
    np.testing.assert_allclose(np.quantile(ta, [0.25, 0.5, 0.75]),
                               np.quantile(tb, [0.25, 0.5, 0.75]), atol=0.1)


@pytest.mark.parametrize("kwargs", [{}, {"parameterization": "centered"}, {"tau": 0.3}])
def test_gradient_matches_finite_differences(kwargs):
    post = MetaPosterior(FIVE, MetaPrior(5.0, 0.8), **kwargs)
    rng = np.random.default_rng(4)
    for _ in range(5):
        q = rng.normal(size=post.dim)
        _, g = post.logp_grad(q)
        h = 1e-6
        fd = np.array([(post.logp_grad(q + h * e)[0] - post.logp_grad(q - h * e)[0]) / (2 * h)
                       for e in np.eye(post.dim)])
        assert np.all(np.abs(g - fd) <= 1e-5 * np.maximum(np.abs(fd), 1))


def test_names_and_constrain():
    post = MetaPosterior(FIVE)
    assert post.names() == ["mu", "tau"] + [f"theta[g{k}]" for k in range(5)]
    q = np.array([1.0, math.log(2.0), 1, 0, -1, 0.5, 0])
    np.testing.assert_allclose(post.constrain(q), [1, 2, 3, 1, -1, 2, 1])


def test_validation():
    with pytest.raises(ValueError):
        GroupEstimate("a", 1.0, 0.0)
    with pytest.raises(ValueError):
        GroupEstimate("a", float("nan"), 1.0)
    with pytest.raises(ValueError):
        MetaPrior(tau_scale=0.0)
    with pytest.raises(ValueError):
        MetaPosterior(FIVE[:1])
    with pytest.raises(ValueError):
        MetaPosterior(FIVE, parameterization="other")
    with pytest.raises(ValueError):
        MetaPosterior(FIVE, tau=0.0)


def test_read_group_csv(tmp_path):
    path = tmp_path / "g.csv"
    path.write_text("group,parameter,mean,sd\nA,mu,1.0,0.5\nB,mu,2.0,0.4\nA,rho,0.1,0.2\n")
    out = read_group_csv(path)
    assert list(out) == ["mu", "rho"]
    assert out["mu"][1] == GroupEstimate("B", 2.0, 0.4)
    path.write_text("group,parameter,mean\nA,mu,1.0\n")
    with pytest.raises(ValueError, match="columns"):
        read_group_csv(path)
    path.write_text("group,parameter,mean,sd\nA,mu,1.0,-2\n")
    with pytest.raises(ValueError, match="line 2"):
        read_group_csv(path)
    path.write_text("group,parameter,mean,sd\n")
    with pytest.raises(ValueError, match="no rows"):
        read_group_csv(path)


def test_summary_csv(tmp_path):
    s = meta_summarize(meta_fit(FIVE, sampler_config=SamplerConfig(chains=2, iterations=400, seed=1)))
    write_summary_csv([s.row("mu_cross")], tmp_path / "m.csv", {"seed": 1})
    lines = (tmp_path / "m.csv").read_text().splitlines()
    assert lines[0] == "# seed: 1"
    row = next(csv.DictReader(lines[1:]))
    assert row["parameter"] == "mu_cross" and row["groups"] == "5"
    assert float(row["mu_q2.5"]) < float(row["mu_mean"]) < float(row["mu_q97.5"])
