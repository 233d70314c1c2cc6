"""Bayesian calibration over the chaos germ with a marginalized discrepancy.

The simulator responses are chaos expansions in the area germ. Each response
carries a zero-mean Gaussian-process discrepancy whose hyper-parameters get
their own germ components; the discrepancy is integrated out, leaving a
Gaussian likelihood with covariance ``sigma_d**2 K(lambda_d) + diag(sigma_e**2)``.
The log-determinant and the inverse of that covariance are expanded in chaos
over the discrepancy germ, so evaluating the posterior needs no factorization.
"""
from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .chaos_basis import ChaosBasis, build_basis, tensor_hermite_rule
from .random_field import HyperPrior

log = logging.getLogger(__name__)


class CovarianceError(np.linalg.LinAlgError):
    pass


@dataclass
class ObservationSet:
    """Measured responses at common locations.

    Attributes:
        x: observation locations, shape ``(n_obs,)``.
        values: ``{response: (n_obs,)}`` measured values.
        sigma: ``{response: (n_obs,)}`` measurement standard deviations.
        grid_index: nearest solver-grid node of each location, if snapped.
    """

    x: np.ndarray
    values: dict
    sigma: dict
    grid_index: np.ndarray | None = None

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        self.values = {k: np.asarray(v, dtype=float) for k, v in self.values.items()}
        self.sigma = {k: np.broadcast_to(np.asarray(v, dtype=float), self.x.shape).copy() for k, v in self.sigma.items()}
        if set(self.values) != set(self.sigma):
            raise ValueError("values and sigma must cover the same responses")
        for k in self.values:
            if self.values[k].shape != self.x.shape:
                raise ValueError(f"response {k!r} has {self.values[k].shape} values for {self.x.size} locations")
            if not np.all(self.sigma[k] > 0):
                raise ValueError(f"measurement std of {k!r} must be positive")

    @property
    def names(self):
        return tuple(self.values)

    @property
    def n_obs(self):
        return self.x.size

    def scaled(self, name, factor) -> "ObservationSet":
        """Copy with the values of one response multiplied by ``factor`` (noise unchanged)."""
        values = dict(self.values)
        values[name] = values[name] * factor
        return ObservationSet(self.x, values, self.sigma, self.grid_index)

    def subset(self, names) -> "ObservationSet":
        return ObservationSet(
            self.x, {k: self.values[k] for k in names}, {k: self.sigma[k] for k in names}, self.grid_index
        )


@dataclass
class DiscrepancyModel:
    """Zero-mean squared-exponential discrepancy per response.

    ``priors[name] = (variance_prior, corr_prior)``. ``enabled=False`` means a
    perfect simulator: the covariance is the measurement noise alone and no
    germ components are allocated.
    """

    priors: dict
    enabled: bool = True
    mean: dict = field(default_factory=dict)

    def dims(self, names, offset):
        """Germ components of ``(variance, corr)`` for every response."""
        if not self.enabled:
            return {}
        return {k: (offset + 2 * i, offset + 2 * i + 1) for i, k in enumerate(names)}

    def theta(self, name, xi2):
        var_p, corr_p = self.priors[name]
        xi2 = np.asarray(xi2, dtype=float)
        return var_p.from_germ(xi2[..., 0]), corr_p.from_germ(xi2[..., 1])

    def covariance(self, name, x, sigma_e, xi2=None):
        """Covariance of the observed response at germ ``xi2`` (shape ``(..., 2)``)."""
        noise = np.diag(np.asarray(sigma_e, dtype=float) ** 2)
        if not self.enabled:
            return noise
        var, corr = self.theta(name, xi2)
        var = np.asarray(var)[..., None, None]
        corr = np.asarray(corr)[..., None, None]
        d2 = (x[:, None] - x[None, :]) ** 2
        return noise + var * np.exp(-corr * d2)

    def mean_at(self, name, x):
        m = self.mean.get(name)
        if m is None:
            return np.zeros_like(x)
        return np.asarray(m(x) if callable(m) else m, dtype=float)


@dataclass
class CovarianceSurrogate:
    """Chaos expansions of ``log|Sigma|`` and of the entries of ``Sigma^-1``.

    ``basis`` lives on the two discrepancy germ components of one response.
    With the discrepancy disabled the basis is ``None`` and the expansions are
    constants.
    """

    basis: ChaosBasis | None
    logdet: np.ndarray  # (P_s,)
    inverse: np.ndarray  # (P_s, n, n)

    def evaluate(self, xi2=None):
        if self.basis is None:
            return float(self.logdet[0]), self.inverse[0]
        h = self.basis.evaluate_all(np.asarray(xi2, dtype=float))
        return float(h @ self.logdet), np.tensordot(h, self.inverse, axes=(0, 0))

    @property
    def determinant_mean(self):
        return math.exp(self.logdet[0])


def build_covariance_surrogate(
    discrepancy: DiscrepancyModel, observations: ObservationSet, order: int = 32, n_nodes: int | None = None
) -> dict:
    """Project ``log|Sigma_j|`` and ``Sigma_j^-1`` on a chaos basis of the discrepancy germ.

    The covariance is factored directly at every tensor Gauss-Hermite node of
    the two discrepancy germ components and the results are projected. The
    inverse changes sharply where discrepancy eigenvalues cross the noise
    level, so the default order is high; the default node count of
    ``1.5 * order`` limits aliasing.

    Returns:
        ``{response: CovarianceSurrogate}``.
    """
    x = observations.x
    out = {}
    for name in observations.names:
        sig = observations.sigma[name]
        if not discrepancy.enabled:
            cov = discrepancy.covariance(name, x, sig)
            logdet, inv = _factor(cov)
            out[name] = CovarianceSurrogate(None, np.array([logdet]), inv[None])
            continue
        n_nodes_used = n_nodes or max(order + 2, (3 * order) // 2)
        if n_nodes_used < order + 2:
            raise ValueError("surrogate quadrature needs at least order + 2 nodes per dimension")
        basis = build_basis(2, order)
        nodes, weights = tensor_hermite_rule(2, n_nodes_used)
        logdets, invs = _factor(discrepancy.covariance(name, x, sig, nodes))
        h = basis.evaluate_all(nodes) * weights[:, None]
        ld = h.T @ logdets / basis.norms
        inv = np.tensordot(h, invs, axes=(0, 0)) / basis.norms[:, None, None]
        inv = 0.5 * (inv + inv.transpose(0, 2, 1))
        out[name] = CovarianceSurrogate(basis, ld, inv)
    return out


def _factor(cov):
    """Log-determinant and inverse of (a stack of) SPD matrices."""
    try:
        chol = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as exc:
        raise CovarianceError("covariance is not positive definite") from exc
    logdet = 2.0 * np.sum(np.log(np.diagonal(chol, axis1=-2, axis2=-1)), axis=-1)
    eye = np.broadcast_to(np.eye(cov.shape[-1]), cov.shape)
    linv = np.linalg.solve(chol, eye)
    inv = np.swapaxes(linv, -1, -2) @ linv
    return logdet, 0.5 * (inv + np.swapaxes(inv, -1, -2))


def gaussian_log_likelihood(residual, cov):
    """``log N(residual; 0, cov)`` including the normalizing constant."""
    residual = np.asarray(residual, dtype=float)
    logdet, inv = _factor(np.atleast_2d(cov))
    return -0.5 * (residual @ inv @ residual + logdet + residual.size * math.log(2 * math.pi))


class LikelihoodSurrogate:
    """Everything the posterior needs: response chaos tables, data and covariance surrogates.

    Args:
        response_coeffs: ``{name: (n_obs, P_area)}`` chaos coefficients of the
            simulated responses at the observation locations.
        area_basis: chaos basis of those coefficients.
        observations: measured data.
        discrepancy: discrepancy model.
        area_dims: germ components used by ``area_basis`` (defaults to the first ones).
        surrogate_order: chaos order of the covariance surrogate.
    """

    def __init__(
        self,
        response_coeffs: dict,
        area_basis: ChaosBasis,
        observations: ObservationSet,
        discrepancy: DiscrepancyModel,
        area_dims=None,
        surrogate_order: int = 32,
        surrogate_nodes: int | None = None,
    ):
        self.names = tuple(observations.names)
        missing = [k for k in self.names if k not in response_coeffs]
        if missing:
            raise ValueError(f"no simulator chaos for observed responses {missing}")
        self.area_basis = area_basis
        self.observations = observations
        self.discrepancy = discrepancy
        self.area_dims = np.arange(area_basis.germ_dim) if area_dims is None else np.asarray(area_dims)
        self.coeffs = {}
        for k in self.names:
            c = np.asarray(response_coeffs[k], dtype=float)
            if c.shape != (observations.n_obs, area_basis.size):
                raise ValueError(f"response {k!r} chaos has shape {c.shape}")
            self.coeffs[k] = c
        offset = int(self.area_dims.max()) + 1
        self.disc_dims = discrepancy.dims(self.names, offset)
        self.germ_dim = offset + 2 * len(self.disc_dims)
        self.covariance = build_covariance_surrogate(discrepancy, observations, surrogate_order, surrogate_nodes)
        self._mean = {k: discrepancy.mean_at(k, observations.x) for k in self.names}
        self.n_fallback = 0
        self.n_invalid = 0

    def residuals(self, xi):
        h = self.area_basis.evaluate_all(np.asarray(xi)[self.area_dims])
        return {
            k: self.observations.values[k] - self.coeffs[k] @ h - self._mean[k] for k in self.names
        }

    def _disc_xi(self, xi, name):
        if name not in self.disc_dims:
            return None
        return np.asarray(xi)[list(self.disc_dims[name])]

    def log_likelihood(self, xi, direct=False):
        """``sum_j -0.5 (log|Sigma_j| + r_j' Sigma_j^-1 r_j)`` (constants dropped)."""
        total = 0.0
        for k, r in self.residuals(xi).items():
            xi2 = self._disc_xi(xi, k)
            if direct:
                total += self._direct(k, r, xi2)
                continue
            logdet, inv = self.covariance[k].evaluate(xi2)
            quad = r @ inv @ r
            if not (np.isfinite(logdet) and quad >= 0):
                # surrogate outside its valid range: factor the covariance exactly
                self.n_fallback += 1
                log.debug("covariance surrogate fallback for %s", k)
                total += self._direct(k, r, xi2)
                continue
            total += -0.5 * (logdet + quad)
        return total

    def _direct(self, name, r, xi2):
        cov = self.discrepancy.covariance(name, self.observations.x, self.observations.sigma[name], xi2)
        try:
            logdet, inv = _factor(cov)
        except CovarianceError:
            self.n_invalid += 1
            return -np.inf
        return -0.5 * (logdet + r @ inv @ r)


def log_posterior(xi, surrogate: LikelihoodSurrogate, direct=False) -> float:
    """Unnormalized log posterior density of the germ."""
    xi = np.asarray(xi, dtype=float)
    if xi.shape != (surrogate.germ_dim,):
        raise ValueError(f"germ has shape {xi.shape}, expected ({surrogate.germ_dim},)")
    return surrogate.log_likelihood(xi, direct=direct) - 0.5 * float(xi @ xi)


@dataclass
class Chain:
    """Retained Metropolis-Hastings draws."""

    samples: np.ndarray
    log_post: np.ndarray
    accepted: int
    step: float
    seed: int
    n_burn: int
    burn_acceptance: float = float("nan")
    diagnostics: list = field(default_factory=list)

    @property
    def acceptance_rate(self):
        return self.accepted / max(len(self.samples), 1)

    def __len__(self):
        return len(self.samples)


def metropolis_hastings(
    log_target,
    x0,
    n_samples: int,
    n_burn: int = 1000,
    step: float = 0.1,
    seed: int = 0,
    adapt: bool = True,
    target_rate=(0.2, 0.4),
    window: int = 100,
) -> Chain:
    """Gaussian random-walk Metropolis-Hastings.

    During burn-in the isotropic step is rescaled every ``window`` draws until
    the acceptance rate falls inside ``target_rate``; it is frozen afterwards
    so the retained draws come from a fixed, symmetric kernel.

    Args:
        log_target: callable returning the log density (``-inf`` rejects).
        x0: starting point.
        n_samples: retained draws.
        n_burn: discarded draws.
        step: initial proposal standard deviation.
        seed: seed for ``numpy.random.default_rng``.
    """
    if not step > 0:
        raise ValueError("step must be positive")
    if n_samples < 1 or n_burn < 0:
        raise ValueError("need n_samples >= 1 and n_burn >= 0")
    rng = np.random.default_rng(seed)
    x = np.array(x0, dtype=float)
    lp = float(log_target(x))
    if not np.isfinite(lp):
        raise ValueError("log target is not finite at the starting point")
    dim = x.size
    samples = np.empty((n_samples, dim))
    lps = np.empty(n_samples)
    diagnostics = []
    acc_window = 0
    acc_1000 = 0
    acc_burn = 0
    accepted = 0
    for it in range(n_burn + n_samples):
        prop = x + step * rng.standard_normal(dim)
        lp_prop = float(log_target(prop))
        ok = lp_prop - lp > math.log(rng.random()) if np.isfinite(lp_prop) else False
        if ok:
            x, lp = prop, lp_prop
            acc_window += 1
            acc_1000 += 1
        if it < n_burn:
            acc_burn += ok
        else:
            samples[it - n_burn] = x
            lps[it - n_burn] = lp
            accepted += ok
        if (it + 1) % 1000 == 0:
            if acc_1000 == 0:
                diagnostics.append(f"no acceptance in the 1000 draws ending at draw {it + 1}")
            acc_1000 = 0
        if (it + 1) % window == 0:
            rate = acc_window / window
            if adapt and it < n_burn:
                if rate < target_rate[0]:
                    step *= 0.7 if rate < 0.5 * target_rate[0] else 0.85
                elif rate > target_rate[1]:
                    step *= 1.4 if rate > 0.5 * (1 + target_rate[1]) else 1.15
            acc_window = 0
    return Chain(
        samples, lps, accepted, step, seed, n_burn, acc_burn / n_burn if n_burn else float("nan"), diagnostics
    )


def posterior_field(chain: Chain, gfield, quantiles=(0.05, 0.5, 0.95), dims=None) -> dict:
    """Pointwise posterior mean and quantiles of a chaos field over the retained draws."""
    dims = np.arange(gfield.basis.germ_dim) if dims is None else np.asarray(dims)
    values = gfield.basis.evaluate_all(chain.samples[:, dims]) @ gfield.coeffs
    out = {"x": gfield.x, "mean": values.mean(axis=0)}
    qs = np.quantile(values, np.sort(quantiles), axis=0)
    for q, v in zip(np.sort(quantiles), qs):
        out[f"q{q:g}"] = v
    return out


def posterior_hyper(chain: Chain, priors: dict, dims: dict) -> dict:
    """Map germ draws to hyper-parameter draws, ``{name: samples}``."""
    return {k: priors[k].from_germ(chain.samples[:, dims[k]]) for k in priors}


def fit_hyper_family(samples, family: str) -> tuple[float, float]:
    """Moment-matched ``(shape, scale)`` of a gamma or inverse-gamma law."""
    s = np.asarray(samples, dtype=float).ravel()
    if s.size < 100:
        raise ValueError("need at least 100 samples")
    if np.any(s <= 0):
        raise ValueError("samples must be positive")
    mean = s.mean()
    var = s.var(ddof=1)
    if np.ptp(s) == 0 or not var > 0:
        raise ValueError("samples have zero variance")
    if family == "gamma":
        return mean**2 / var, var / mean
    if family == "invgamma":
        alpha = mean**2 / var + 2.0
        return alpha, mean * (alpha - 1.0)
    raise ValueError(f"unknown family {family!r}")


class Verdict(str, enum.Enum):
    ACCEPT_IMPROVED = "AcceptImproved"
    REJECT_VERIFY_MODEL = "Reject-VerifyModel"
    REJECT_REVIEW_DATA = "Reject-ReviewData"
    REJECT_BOTH = "Reject-Both"
    USE_WITH_CAUTION = "UseWithCaution"
    ACCEPT_HIGH_CONFIDENCE = "AcceptHighConfidence"


@dataclass(frozen=True)
class VerdictThresholds:
    high_alpha: float = 5.0
    weak_corr_ratio: float = 10.0


def credibility_verdict(prior_sigma, post_sigma, post_corr, thresholds: VerdictThresholds | None = None) -> Verdict:
    """Verdict on a simulator response from fitted ``(alpha, beta)`` pairs.

    Args:
        prior_sigma: ``(alpha, beta)`` of the prior discrepancy variance.
        post_sigma: ``(alpha, beta)`` of the posterior discrepancy variance.
        post_corr: ``(alpha, beta)`` of the posterior discrepancy correlation parameter.

    Rules in order: a shape below one rejects the model, split by the
    correlation fit; a large shape with scale below shape accepts with high
    confidence; a shape above one with scale above shape asks for caution;
    otherwise a gain in shape over the prior accepts the improved model.
    """
    th = thresholds or VerdictThresholds()
    a_s, b_s = post_sigma
    a_l, b_l = post_corr
    if a_s < 1:
        strong = a_l < 1 or b_l > a_l
        weak = a_l > 1 and b_l < a_l / th.weak_corr_ratio
        if strong:
            return Verdict.REJECT_VERIFY_MODEL
        if weak:
            return Verdict.REJECT_REVIEW_DATA
        return Verdict.REJECT_BOTH
    if a_s >= th.high_alpha and b_s < a_s:
        return Verdict.ACCEPT_HIGH_CONFIDENCE
    if a_s > 1 and b_s > a_s:
        return Verdict.USE_WITH_CAUTION
    if a_s > prior_sigma[0]:
        return Verdict.ACCEPT_IMPROVED
    return Verdict.USE_WITH_CAUTION


@dataclass
class CredibilityReport:
    """Prior and posterior fits of the discrepancy hyper-parameters per response."""

    prior: dict
    posterior: dict
    verdict: dict
    improved: dict

    def to_dict(self):
        return {
            k: {
                "prior": {p: list(map(float, v)) for p, v in self.prior[k].items()},
                "posterior": {p: list(map(float, v)) for p, v in self.posterior[k].items()},
                "verdict": self.verdict[k].value,
                "improved": bool(self.improved[k]),
            }
            for k in self.verdict
        }


def credibility_report(prior_samples: dict, post_samples: dict, thresholds=None) -> CredibilityReport:
    """Fit gamma/inverse-gamma laws and issue one verdict per response.

    Both arguments map a response to ``{"variance": samples, "corr": samples}``.
    """
    prior, post, verdict, improved = {}, {}, {}, {}
    for k in post_samples:
        prior[k] = {
            "variance": fit_hyper_family(prior_samples[k]["variance"], "invgamma"),
            "corr": fit_hyper_family(prior_samples[k]["corr"], "gamma"),
        }
        post[k] = {
            "variance": fit_hyper_family(post_samples[k]["variance"], "invgamma"),
            "corr": fit_hyper_family(post_samples[k]["corr"], "gamma"),
        }
        verdict[k] = credibility_verdict(prior[k]["variance"], post[k]["variance"], post[k]["corr"], thresholds)
        improved[k] = post[k]["variance"][0] > prior[k]["variance"][0]
    return CredibilityReport(prior, post, verdict, improved)


def ks_distance(a, b) -> float:
    """Two-sample Kolmogorov-Smirnov statistic."""
    return float(stats.ks_2samp(np.ravel(a), np.ravel(b)).statistic)


class GpcCalibrator(BaseEstimator):
    """Estimator wrapper: surrogate posterior sampling of the area germ.

    The simulator enters through its response chaos on the solver grid, so
    ``fit`` only sees data: ``X`` holds the observation locations and ``y``
    one column per response in ``responses``. ``predict`` returns the
    posterior-mean area at new locations.

    Args:
        area_field: chaos field of the prior area on the solver grid.
        response_coeffs: ``{name: (G, P)}`` response chaos on the same grid.
        responses: response names matching the columns of ``y``.
        noise_fraction: measurement std as a fraction of ``|y|``.
        variance_prior: ``(family, shape, scale)`` of the discrepancy variance.
        corr_prior: ``(family, shape, scale)`` of the discrepancy correlation.
        use_discrepancy: ``False`` treats the simulator as exact.
        n_samples: retained draws.
        n_burn: burn-in draws.
        step: initial proposal std.
        adapt: tune the step during burn-in.
        surrogate_order: order of the covariance surrogate.
        random_state: integer seed.
    """

    def __init__(
        self,
        area_field=None,
        response_coeffs=None,
        responses=("rho", "v", "P", "T"),
        noise_fraction=0.01,
        variance_prior=("invgamma", 6.0, 2.0),
        corr_prior=("gamma", 6.0, 2.0),
        use_discrepancy=True,
        n_samples=10000,
        n_burn=1000,
        step=0.1,
        adapt=True,
        surrogate_order=32,
        random_state=0,
    ):
        self.area_field = area_field
        self.response_coeffs = response_coeffs
        self.responses = responses
        self.noise_fraction = noise_fraction
        self.variance_prior = variance_prior
        self.corr_prior = corr_prior
        self.use_discrepancy = use_discrepancy
        self.n_samples = n_samples
        self.n_burn = n_burn
        self.step = step
        self.adapt = adapt
        self.surrogate_order = surrogate_order
        self.random_state = random_state

    def fit(self, X, y):
        if self.area_field is None or self.response_coeffs is None:
            raise ValueError("area_field and response_coeffs are required")
        if not self.noise_fraction > 0:
            raise ValueError("noise_fraction must be positive")
        x, Y = check_X_y(X, y, multi_output=True, y_numeric=True)
        x = x.ravel() if x.shape[1] == 1 else None
        if x is None:
            raise ValueError("X must have a single column of locations")
        Y = Y.reshape(len(x), -1)
        names = tuple(self.responses)
        if Y.shape[1] != len(names):
            raise ValueError(f"y has {Y.shape[1]} columns for {len(names)} responses")
        grid = self.area_field.x
        idx = np.abs(grid[None, :] - x[:, None]).argmin(axis=1)
        values = {k: Y[:, i] for i, k in enumerate(names)}
        sigma = {k: self.noise_fraction * np.maximum(np.abs(Y[:, i]), 1e-12) for i, k in enumerate(names)}
        obs = ObservationSet(grid[idx], values, sigma, grid_index=idx)
        priors = [HyperPrior(p[0], float(p[1]), float(p[2])) for p in (self.variance_prior, self.corr_prior)]
        disc = DiscrepancyModel({k: tuple(priors) for k in names}, enabled=self.use_discrepancy)
        coeffs = {k: np.asarray(self.response_coeffs[k], dtype=float)[idx] for k in names}
        self.surrogate_ = LikelihoodSurrogate(
            coeffs, self.area_field.basis, obs, disc, surrogate_order=self.surrogate_order
        )
        self.chain_ = metropolis_hastings(
            lambda xi: log_posterior(xi, self.surrogate_),
            np.zeros(self.surrogate_.germ_dim),
            self.n_samples,
            self.n_burn,
            self.step,
            seed=self.random_state,
            adapt=self.adapt,
        )
        self.area_posterior_ = posterior_field(self.chain_, self.area_field)
        self.hyper_ = {
            k: {"variance": priors[0].from_germ(self.chain_.samples[:, dv]),
                "corr": priors[1].from_germ(self.chain_.samples[:, dc])}
            for k, (dv, dc) in self.surrogate_.disc_dims.items()
        }
        self.n_features_in_ = 1
        return self

    def predict(self, X):
        check_is_fitted(self, "chain_")
        x = check_array(X, ensure_2d=False, dtype=float).ravel()
        return np.interp(x, self.area_field.x, self.area_posterior_["mean"])
