import itertools

import numpy as np
import pytest
from scipy import stats
from sklearn.base import clone

from gpcal.calibration import (
    Chain,
    DiscrepancyModel,
    GpcCalibrator,
    LikelihoodSurrogate,
    ObservationSet,
    Verdict,
    build_covariance_surrogate,
    credibility_report,
    credibility_verdict,
    fit_hyper_family,
    gaussian_log_likelihood,
    log_posterior,
    metropolis_hastings,
    posterior_field,
    posterior_hyper,
)
from gpcal.chaos_basis import build_basis
from gpcal.random_field import GpcField, HyperPrior
from oracles import batch_means_se, conjugate_gaussian, project_1d

VAR = HyperPrior("invgamma", 6.0, 2.0)
CORR = HyperPrior("gamma", 6.0, 2.0)


def _obs(n=3, sigma=0.05):
    x = np.linspace(0.1, 0.9, n)
    return ObservationSet(x, {"P": np.linspace(1.0, 0.5, n)}, {"P": np.full(n, sigma)})


def test_observation_set_validation():
    with pytest.raises(ValueError):
        ObservationSet([0.1, 0.2], {"P": [1.0]}, {"P": 0.1})
    with pytest.raises(ValueError):
        ObservationSet([0.1], {"P": [1.0]}, {"P": 0.0})
    o = _obs().scaled("P", 1.5)
    np.testing.assert_allclose(o.values["P"], 1.5 * np.linspace(1.0, 0.5, 3))
    np.testing.assert_allclose(o.sigma["P"], 0.05)


def test_surrogate_without_discrepancy_is_constant():
    obs = _obs()
    sur = build_covariance_surrogate(DiscrepancyModel({"P": (VAR, CORR)}, enabled=False), obs)["P"]
    assert sur.basis is None
    assert sur.determinant_mean == pytest.approx(0.05**6)
    np.testing.assert_allclose(sur.inverse[0], np.eye(3) / 0.05**2)


def test_surrogate_single_observation_matches_projection():
    obs = _obs(n=1)
    fixed_corr = HyperPrior.point(3.0)
    disc = DiscrepancyModel({"P": (VAR, fixed_corr)})
    sur = build_covariance_surrogate(disc, obs, order=8, n_nodes=60)["P"]
    ref = project_1d(lambda t: 1.0 / (VAR.from_germ(t) + 0.05**2), 8, n=60)
    b = sur.basis
    got = np.array([sur.inverse[b.index_of([k, 0]), 0, 0] for k in range(9)])
    np.testing.assert_allclose(got, ref, atol=1e-9)
    others = [p for p in range(b.size) if b.degrees[p][1] > 0]
    np.testing.assert_allclose(sur.inverse[others], 0.0, atol=1e-12)


def test_surrogate_accuracy_default_order():
    obs = ObservationSet(np.array([0.15, 0.35, 0.55, 0.75, 0.95]), {"P": np.ones(5)}, {"P": np.full(5, 0.01)})
    disc = DiscrepancyModel({"P": (VAR, CORR)})
    sur = build_covariance_surrogate(disc, obs)["P"]
    rng = np.random.default_rng(1)
    r = 0.05 * rng.standard_normal(5)
    errs = []
    for xi2 in rng.standard_normal((200, 2)):
        logdet, inv = sur.evaluate(xi2)
        cov = disc.covariance("P", obs.x, obs.sigma["P"], xi2)
        ref = gaussian_log_likelihood(r, cov) + 2.5 * np.log(2 * np.pi)
        errs.append(abs(-0.5 * (logdet + r @ inv @ r) - ref))
    assert np.median(errs) < 1e-2


def test_gaussian_log_likelihood():
    cov = np.array([[2.0, 0.5], [0.5, 1.0]])
    r = np.array([0.3, -0.2])
    assert gaussian_log_likelihood(r, cov) == pytest.approx(stats.multivariate_normal(cov=cov).logpdf(r))


def _toy_surrogate(enabled=False, shift=0.0):
    basis = build_basis(1, 1)
    obs = ObservationSet(np.array([0.2, 0.8]), {"P": np.array([1.3, 0.4]) + shift}, {"P": np.full(2, 0.5)})
    coeffs = {"P": np.array([[1.0, 0.8], [0.5, -0.3]])}
    return LikelihoodSurrogate(coeffs, basis, obs, DiscrepancyModel({"P": (VAR, CORR)}, enabled=enabled))


def test_log_posterior_linear_gaussian():
    sur = _toy_surrogate()
    G = np.array([[0.8], [-0.3]])
    y = np.array([1.3 - 1.0, 0.4 - 0.5])
    for t in (-1.0, 0.0, 0.7):
        ref = -0.5 * np.sum((y - G[:, 0] * t) ** 2) / 0.25 - 0.5 * t * t
        assert log_posterior(np.array([t]), sur) - log_posterior(np.array([0.0]), sur) == pytest.approx(
            ref - (-0.5 * np.sum(y**2) / 0.25)
        )
    with pytest.raises(ValueError):
        log_posterior(np.zeros(3), sur)


def test_direct_matches_surrogate_with_discrepancy():
    sur = _toy_surrogate(enabled=True)
    assert sur.germ_dim == 3
    xi = np.array([0.2, -0.5, 0.4])
    assert log_posterior(xi, sur) == pytest.approx(log_posterior(xi, sur, direct=True), abs=1e-3)


def test_mh_conjugate_toy():
    sur = _toy_surrogate()
    G = np.array([[0.8], [-0.3]])
    y = np.array([0.3, -0.1])
    mean, cov = conjugate_gaussian(G, y, 0.25)
    ch = metropolis_hastings(lambda xi: log_posterior(xi, sur), [0.0], 10000, 1000, 0.5, seed=3)
    se = batch_means_se(ch.samples)
    assert abs(ch.samples.mean() - mean[0]) < 3 * se[0]
    dev = (ch.samples[:, 0] - mean[0]) ** 2
    assert abs(dev.mean() - cov[0, 0]) < 3 * batch_means_se(dev)
    assert 0 < ch.acceptance_rate < 1


def test_mh_standard_normal():
    ch = metropolis_hastings(lambda x: -0.5 * float(x @ x), np.zeros(2), 10000, 1000, 1.0, seed=0)
    se = batch_means_se(ch.samples)
    assert np.all(np.abs(ch.samples.mean(axis=0)) < 3 * se)
    assert np.all(np.abs(ch.samples.var(axis=0) - 1.0) < 0.1)
    assert 0.2 <= ch.burn_acceptance <= 0.6


def test_mh_determinism_and_constant_shift():
    f = lambda x: -0.5 * float(x @ x)
    a = metropolis_hastings(f, np.zeros(2), 500, 100, seed=11)
    b = metropolis_hastings(f, np.zeros(2), 500, 100, seed=11)
    c = metropolis_hastings(lambda x: f(x) + 123.0, np.zeros(2), 500, 100, seed=11)
    np.testing.assert_array_equal(a.samples, b.samples)
    np.testing.assert_array_equal(a.samples, c.samples)


def test_mh_zero_acceptance_diagnostic():
    ch = metropolis_hastings(lambda x: -0.5 * float(x @ x) * 1e12, np.zeros(1), 1000, 0, 1.0, seed=0, adapt=False)
    assert ch.accepted == 0 and ch.diagnostics
    with pytest.raises(ValueError):
        metropolis_hastings(lambda x: -np.inf, np.zeros(1), 10)
    with pytest.raises(ValueError):
        metropolis_hastings(lambda x: 0.0, np.zeros(1), 10, step=0.0)


def test_posterior_field_at_zero():
    basis = build_basis(2, 2)
    coeffs = np.random.default_rng(0).standard_normal((basis.size, 4))
    f = GpcField(np.linspace(0, 1, 4), coeffs, basis)
    ch = Chain(np.zeros((10, 2)), np.zeros(10), 0, 0.1, 0, 0, 0.0, [])
    out = posterior_field(ch, f)
    np.testing.assert_allclose(out["mean"], basis.evaluate_all(np.zeros(2)) @ coeffs)
    np.testing.assert_allclose(out["q0.05"], out["mean"])


def test_prior_only_chain_matches_prior():
    ch = metropolis_hastings(lambda x: -0.5 * float(x @ x), np.zeros(2), 20000, 1000, 1.0, seed=2)
    thin = Chain(ch.samples[::20], ch.log_post[::20], 0, ch.step, 2, 0, 0.0, [])
    hyp = posterior_hyper(thin, {"var": VAR, "corr": CORR}, {"var": 0, "corr": 1})
    assert stats.kstest(hyp["var"], VAR.cdf).pvalue > 0.01
    assert stats.kstest(hyp["corr"], CORR.cdf).pvalue > 0.01
    fixed = posterior_hyper(thin, {"v": HyperPrior.point(0.2)}, {"v": 0})
    np.testing.assert_array_equal(fixed["v"], 0.2)


@pytest.mark.parametrize("family,dist,params", [
    ("gamma", stats.gamma(a=5.0, scale=0.2), (5.0, 0.2)),
    ("invgamma", stats.invgamma(a=9.0, scale=0.5), (9.0, 0.5)),
])
def test_fit_hyper_family(family, dist, params):
    s = dist.rvs(size=100000, random_state=np.random.default_rng(0))
    np.testing.assert_allclose(fit_hyper_family(s, family), params, rtol=0.1)
    with pytest.raises(ValueError):
        fit_hyper_family(np.full(200, 0.3), family)


def test_verdict_examples():
    assert credibility_verdict((6.0, 2.0), (9.0, 2.0), (6.0, 2.0)) is Verdict.ACCEPT_HIGH_CONFIDENCE
    assert credibility_verdict((6.0, 2.0), (0.8, 2.0), (0.7, 2.0)) is Verdict.REJECT_VERIFY_MODEL
    assert credibility_verdict((6.0, 2.0), (2.0, 5.0), (6.0, 2.0)) is Verdict.USE_WITH_CAUTION


def test_verdict_reject_branches():
    assert credibility_verdict((6, 2), (0.5, 1), (20.0, 1.0)) is Verdict.REJECT_REVIEW_DATA
    assert credibility_verdict((6, 2), (0.5, 1), (3.0, 2.0)) is Verdict.REJECT_BOTH
    assert credibility_verdict((2, 2), (3.0, 1.0), (3.0, 2.0)) is Verdict.ACCEPT_IMPROVED


def test_verdict_grid_total_and_consistent():
    grid = [0.3, 0.9, 1.0, 1.5, 3.0, 5.0, 8.0, 20.0]
    for prior_a, a_s, b_s, a_l, b_l in itertools.product([2.0, 6.0], grid, grid, grid, grid):
        v = credibility_verdict((prior_a, 1.0), (a_s, b_s), (a_l, b_l))
        assert isinstance(v, Verdict)
        if a_s < 1:
            assert v.value.startswith("Reject")
        elif a_s >= 5 and b_s < a_s:
            assert v is Verdict.ACCEPT_HIGH_CONFIDENCE
        elif b_s > a_s and a_s > 1:
            assert v is Verdict.USE_WITH_CAUTION


def test_credibility_report():
    rng = np.random.default_rng(0)
    prior = {"P": {"variance": VAR.sample(rng, 5000), "corr": CORR.sample(rng, 5000)}}
    post = {"P": {"variance": stats.invgamma(a=12, scale=2).rvs(5000, random_state=rng),
                  "corr": CORR.sample(rng, 5000)}}
    rep = credibility_report(prior, post)
    assert rep.improved["P"]
    assert rep.verdict["P"] is Verdict.ACCEPT_HIGH_CONFIDENCE
    assert rep.to_dict()["P"]["verdict"] == "AcceptHighConfidence"


def test_calibrator_estimator():
    x = np.linspace(0, 1, 11)
    basis = build_basis(1, 1)
    area = GpcField(x, np.vstack([np.ones_like(x), 0.1 * np.ones_like(x)]), basis)
    resp = {"P": np.column_stack([np.ones_like(x), 0.5 * np.ones_like(x)])}
    est = GpcCalibrator(area, resp, responses=("P",), use_discrepancy=False, n_samples=3000, n_burn=500,
                        noise_fraction=0.05)
    assert clone(est).get_params()["n_samples"] == 3000
    xo = np.array([[0.2], [0.5], [0.8]])
    est.fit(xo, np.full((3, 1), 1.1))
    # y = 1 + 0.5 t, three obs with sd 0.055: conjugate posterior of t
    mean, _ = conjugate_gaussian(np.full((3, 1), 0.5), np.full(3, 0.1), 0.055**2)
    assert est.chain_.samples.mean() == pytest.approx(mean[0], abs=0.1)
    np.testing.assert_allclose(est.predict([0.5]), 1 + 0.1 * est.chain_.samples.mean(), rtol=1e-10)
    with pytest.raises(ValueError):
        GpcCalibrator(area, resp, responses=("P", "T")).fit(xo, np.ones((3, 1)))
