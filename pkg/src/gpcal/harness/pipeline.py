"""Experiment pipeline: area prior, forward propagation, Monte Carlo baseline,
synthetic testbed and calibration scenarios."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from ..calibration import (
    Chain,
    DiscrepancyModel,
    LikelihoodSurrogate,
    ObservationSet,
    VerdictThresholds,
    credibility_report,
    log_posterior,
    metropolis_hastings,
    posterior_field,
)
from ..chaos_basis import GalerkinAlgebra, build_basis
from ..nozzle_solver import (
    FlowConfig,
    SolverError,
    deterministic_solve,
    extract_responses,
    snap_to_grid,
    stochastic_solve,
)
from ..random_field import SquaredExponential, expand_over_hyper, field_gpc, kl_realization
from .config import SCENARIOS, ConfigError, hash_of, prior_from

log = logging.getLogger(__name__)

_STREAMS = {"testbed": 1, "mc": 2, "mcmc": 3, "prior": 4}


class StageError(RuntimeError):
    """A pipeline stage failed; ``stage`` names it."""

    def __init__(self, stage, exc):
        super().__init__(f"[{stage}] {type(exc).__name__}: {exc}")
        self.stage = stage


def rng_for(cfg, stream: str, extra: int = 0):
    """Independent generator per purpose, all derived from the single seed."""
    return np.random.default_rng([cfg["seed"], _STREAMS[stream], extra])


def polynomial(coeffs):
    c = np.asarray(coeffs, dtype=float)[::-1]
    return lambda x: np.polyval(c, np.asarray(x, dtype=float))


def flow_config(cfg) -> FlowConfig:
    return FlowConfig(**cfg["flow"])


def area_priors(cfg):
    return prior_from(cfg["area_priors"]["variance"]), prior_from(cfg["area_priors"]["corr"])


def l1_norm(values, x):
    return float(np.trapezoid(np.abs(values), x))


def l2_norm(values, x):
    return float(np.sqrt(np.trapezoid(np.asarray(values) ** 2, x)))


@dataclass
class AreaModel:
    klmodes: object
    basis: object
    field: object
    build_time: float


@dataclass
class Propagation:
    area: AreaModel
    state: object
    algebra: object
    responses: dict  # {name: (n_grid, P)}
    projection_time: float


_CACHE: dict = {}


def _area_key(cfg, n_modes, order):
    return hash_of({"flow": cfg["flow"], "mean": cfg["prior_mean_area"], "kl": cfg["kl"], "priors": cfg["area_priors"], "n": n_modes, "o": order})


def build_area_model(cfg, n_modes=None, order=None) -> AreaModel:
    n_modes = n_modes or cfg["kl"]["n_modes"]
    order = order or cfg["order"]
    key = ("area", _area_key(cfg, n_modes, order))
    if key in _CACHE:
        return _CACHE[key]
    t0 = time.perf_counter()
    kl = cfg["kl"]
    cov = tuple(kl["coverage"])
    pv, pc = area_priors(cfg)
    priors = (type(pv)(pv.family, pv.shape, pv.scale, cov), type(pc)(pc.family, pc.shape, pc.scale, cov))
    modes = expand_over_hyper(
        SquaredExponential(), priors, n_modes, n_hyper=kl["n_hyper"], n_nodes=kl["n_nodes"], basis_size=kl["basis_size"],
        domain=(0.0, cfg["flow"]["length"]),
    )
    basis = build_basis(n_modes + 2, order)
    x = flow_config(cfg).grid
    gfield = field_gpc(modes, basis, x, polynomial(cfg["prior_mean_area"]))
    model = AreaModel(modes, basis, gfield, time.perf_counter() - t0)
    _CACHE[key] = model
    return model


def propagate(cfg, n_modes=None, order=None) -> Propagation:
    """Area chaos and steady stochastic flow; cached per configuration."""
    n_modes = n_modes or cfg["kl"]["n_modes"]
    order = order or cfg["order"]
    key = ("prop", _area_key(cfg, n_modes, order))
    if key in _CACHE:
        return _CACHE[key]
    area = build_area_model(cfg, n_modes, order)
    algebra = GalerkinAlgebra(area.basis)
    if np.any(area.field.mean <= 0):
        raise ValueError("prior mean area must be positive")
    gradient = area.field.gradient()
    state = stochastic_solve(area.field, area.basis, flow_config(cfg), algebra, darea=gradient.coeffs.T)
    resp = extract_responses(state, cfg["responses"], algebra=algebra)
    prop = Propagation(area, state, algebra, resp, area.build_time + state.wall_time)
    _CACHE[key] = prop
    return prop


def clear_cache():
    _CACHE.clear()


@dataclass
class MCResult:
    x: np.ndarray
    mean: dict
    variance: dict
    n_samples: int
    n_failed: int
    wall_time: float
    solve_time: float
    method: str = "direct eigen-solve per hyper-parameter draw"
    failures: list = field(default_factory=list)

    @property
    def failure_rate(self):
        return self.n_failed / self.n_samples


def _mc_sample(args):
    area, fcfg, names = args
    try:
        s = deterministic_solve(area, fcfg)
    except (SolverError, ValueError, FloatingPointError) as exc:
        return None, str(exc), 0.0
    return np.array([s.responses[k] for k in names]), None, s.wall_time


def mc_propagate(cfg, n_samples=None, seed_extra=0, threads=None, n_modes=None) -> MCResult:
    """Monte Carlo propagation of the hierarchical area prior through the deterministic solver.

    Each draw samples the hyper-parameters from their (truncated) priors, solves
    the kernel eigenproblem at those values and builds the area from standard
    normal KL variables. Failed solves are counted and excluded.
    """
    n = n_samples or cfg["mc_samples"]
    if n < 1:
        raise ValueError("need at least one sample")
    n_modes = n_modes or cfg["kl"]["n_modes"]
    threads = threads or cfg["threads"]
    fcfg = flow_config(cfg)
    x = fcfg.grid
    rng = rng_for(cfg, "mc", seed_extra)
    pv, pc = area_priors(cfg)
    mean_area = polynomial(cfg["prior_mean_area"])(x)
    kernel = SquaredExponential()
    kl = cfg["kl"]
    names = tuple(cfg["responses"])
    t0 = time.perf_counter()
    jobs = []
    for _ in range(n):
        theta = (float(pv.from_germ(rng.standard_normal())), float(pc.from_germ(rng.standard_normal())))
        chi = rng.standard_normal(n_modes)
        a = mean_area + kl_realization(kernel, theta, chi, x, n_modes, kl["basis_size"], (0.0, fcfg.length))
        jobs.append((a, fcfg, names))
    if threads > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_mc_sample, jobs, chunksize=max(1, n // (4 * threads))))
    else:
        results = [_mc_sample(j) for j in jobs]
    wall = time.perf_counter() - t0
    good = [r[0] for r in results if r[0] is not None]
    failures = [r[1] for r in results if r[0] is None]
    if not good:
        raise SolverError("every Monte Carlo sample failed")
    arr = np.stack(good)  # (n_ok, n_resp, n_grid)
    mean = {k: arr[:, i].mean(axis=0) for i, k in enumerate(names)}
    var = {k: arr[:, i].var(axis=0) for i, k in enumerate(names)}
    return MCResult(x, mean, var, n, len(failures), wall, float(sum(r[2] for r in results)), failures=failures)


def compare_to_mc(prop: Propagation, mc: MCResult) -> dict:
    """L1 norms over the domain of the mean and variance differences per response."""
    basis = prop.area.basis
    out = {}
    for k, c in prop.responses.items():
        m = c[:, 0]
        v = np.sum(c[:, 1:] ** 2 * basis.norms[1:], axis=1)
        out[k] = {"mean": l1_norm(m - mc.mean[k], mc.x), "variance": l1_norm(v - mc.variance[k], mc.x)}
    return out


def run_convergence_study(cfg, modes_list, orders_list, n_mc=None, mc: MCResult | None = None):
    """Rows ``(n_modes, order, cpu_time, l1_mean_err, l1_var_err)``; MC reference computed once.

    Errors are the largest over the configured responses.
    """
    if not modes_list or not orders_list:
        raise ValueError("mode and order lists must be non-empty")
    if mc is None:
        mc = mc_propagate(cfg, n_mc, n_modes=max(modes_list))
    rows = []
    for n_modes in modes_list:
        for order in orders_list:
            t0 = time.process_time()
            prop = propagate(cfg, n_modes, order)
            cpu = prop.state.wall_time
            err = compare_to_mc(prop, mc)
            rows.append(
                (
                    int(n_modes),
                    int(order),
                    float(cpu),
                    max(e["mean"] for e in err.values()),
                    max(e["variance"] for e in err.values()),
                )
            )
            log.info("convergence cell N=%d p=%d in %.1fs", n_modes, order, time.process_time() - t0)
    return rows


def generate_testbed(true_area, cfg, noise_fraction=None) -> ObservationSet:
    """Noisy steady responses of the deterministic solver at the observation locations."""
    fcfg = flow_config(cfg)
    sol = deterministic_solve(true_area, fcfg)
    nf = cfg["observations"]["noise_fraction"] if noise_fraction is None else noise_fraction
    idx = snap_to_grid(sol.x, cfg["observations"]["locations"])
    x = sol.x[idx]
    rng = rng_for(cfg, "testbed")
    values, sigma = {}, {}
    for k in cfg["responses"]:
        clean = sol.responses[k][idx]
        s = nf * np.abs(clean)
        values[k] = clean + s * rng.standard_normal(clean.shape)
        sigma[k] = s if nf > 0 else np.full_like(clean, 1e-12)
    return ObservationSet(x, values, sigma, grid_index=idx)


@dataclass
class CalibrationRun:
    label: str
    discrepancy: bool
    variance_prior: dict
    chain: Chain
    surrogate: LikelihoodSurrogate
    area: dict
    errors: dict
    hyper_area: dict
    hyper_discrepancy: dict
    prior_discrepancy: dict
    ks: dict
    credibility: object
    timing: dict
    response_scale: float = 1.0
    data_scale: float = 1.0


@dataclass
class ExperimentReport:
    scenario: str
    config: dict
    config_hash: str
    runs: list
    timing: dict

    def run(self, label) -> CalibrationRun:
        for r in self.runs:
            if r.label == label:
                return r
        raise KeyError(label)


def _variants(cfg, scenario):
    exp = cfg["experiment"]
    base_var = cfg["discrepancy_priors"]["variance"]
    later_var = cfg["scenario_discrepancy_variance"]
    if scenario == "baseline":
        return [("baseline", exp["discrepancy"], base_var, 1.0, 1.0)]
    if scenario == "prior-sensitivity":
        return [
            (f"IG({p['shape']:g},{p['scale']:g})", True, p, 1.0, 1.0) for p in cfg["sensitivity_variances"]
        ]
    if scenario == "model-error":
        f = exp["model_error_factor"]
        return [("with-discrepancy", True, later_var, f, 1.0), ("without-discrepancy", False, later_var, f, 1.0)]
    if scenario == "data-error":
        f = exp["data_error_factor"]
        return [("with-discrepancy", True, later_var, 1.0, f), ("without-discrepancy", False, later_var, 1.0, f)]
    raise ConfigError(f"unknown scenario {scenario!r}; expected one of {SCENARIOS}")


def calibrate(cfg, prop: Propagation, observations: ObservationSet, label, use_discrepancy, variance_prior,
              response_scale=1.0, data_scale=1.0, seed_extra=0) -> CalibrationRun:
    """Posterior sampling for one variant of a scenario."""
    t_start = time.perf_counter()
    exp = cfg["experiment"]
    target = exp["error_response"]
    x_grid = prop.state.x
    idx = observations.grid_index if observations.grid_index is not None else snap_to_grid(x_grid, observations.x)
    coeffs = {k: prop.responses[k][idx].copy() for k in cfg["responses"]}
    if response_scale != 1.0:
        coeffs[target] *= response_scale
    if data_scale != 1.0:
        observations = observations.scaled(target, data_scale)
    vprior = prior_from(variance_prior)
    cprior = prior_from(cfg["discrepancy_priors"]["corr"])
    disc = DiscrepancyModel({k: (vprior, cprior) for k in cfg["responses"]}, enabled=use_discrepancy)
    t0 = time.perf_counter()
    sur = LikelihoodSurrogate(
        coeffs, prop.area.basis, observations, disc,
        surrogate_order=cfg["surrogate"]["order"], surrogate_nodes=cfg["surrogate"]["n_nodes"],
    )
    surrogate_time = time.perf_counter() - t0
    m = cfg["mcmc"]
    t0 = time.perf_counter()
    chain = metropolis_hastings(
        lambda xi: log_posterior(xi, sur), np.zeros(sur.germ_dim), m["n_samples"], m["n_burn"], m["step"],
        seed=int(np.random.SeedSequence([cfg["seed"], _STREAMS["mcmc"], seed_extra]).generate_state(1)[0]),
        adapt=m["adapt"],
    )
    sampling_time = time.perf_counter() - t0

    x = prop.area.field.x
    truth = polynomial(cfg["true_area"])(x)
    prior_mean = prop.area.field.mean
    area = posterior_field(chain, prop.area.field, dims=np.arange(prop.area.basis.germ_dim))
    errors = {
        "prior_mean_l2": l2_norm(prior_mean - truth, x),
        "posterior_mean_l2": l2_norm(area["mean"] - truth, x),
        "prior_mean_l1": l1_norm(prior_mean - truth, x),
        "posterior_mean_l1": l1_norm(area["mean"] - truth, x),
    }
    modes = prop.area.klmodes
    n_modes = modes.n_modes
    hyper_area = {
        "variance": modes.priors[0].from_germ(chain.samples[:, n_modes]),
        "corr": modes.priors[1].from_germ(chain.samples[:, n_modes + 1]),
    }
    ks = {
        "area_variance": _ks(hyper_area["variance"], modes.priors[0]),
        "area_corr": _ks(hyper_area["corr"], modes.priors[1]),
    }
    hyper_disc, prior_disc = {}, {}
    cred = None
    if use_discrepancy:
        rng = rng_for(cfg, "prior", seed_extra)
        n_prior = len(chain)
        for k, (dv, dc) in sur.disc_dims.items():
            hyper_disc[k] = {
                "variance": vprior.from_germ(chain.samples[:, dv]),
                "corr": cprior.from_germ(chain.samples[:, dc]),
            }
            prior_disc[k] = {"variance": vprior.sample(rng, n_prior), "corr": cprior.sample(rng, n_prior)}
            ks[f"{k}_variance"] = _ks(hyper_disc[k]["variance"], vprior)
            ks[f"{k}_corr"] = _ks(hyper_disc[k]["corr"], cprior)
        cred = credibility_report(prior_disc, hyper_disc, VerdictThresholds(**cfg["verdict"]))
    total = time.perf_counter() - t_start
    timing = {
        "projection_time": prop.projection_time + surrogate_time,
        "sampling_time": sampling_time,
        "total_time": prop.projection_time + total,
    }
    return CalibrationRun(
        label, use_discrepancy, dict(variance_prior), chain, sur, area, errors, hyper_area, hyper_disc, prior_disc,
        ks, cred, timing, response_scale, data_scale,
    )


def _ks(samples, prior):
    return float(stats.kstest(np.ravel(samples), prior.cdf).statistic)


def run_experiment(cfg, scenario: str) -> ExperimentReport:
    """Run every variant of a calibration scenario."""
    variants = _variants(cfg, scenario)
    t0 = time.perf_counter()
    try:
        prop = propagate(cfg)
    except Exception as exc:  # noqa: BLE001 - re-raised with the stage tag
        raise StageError("propagation", exc) from exc
    try:
        obs = generate_testbed(polynomial(cfg["true_area"]), cfg)
    except Exception as exc:  # noqa: BLE001
        raise StageError("testbed", exc) from exc
    runs = []
    for i, (label, disc, vprior, rscale, dscale) in enumerate(variants):
        try:
            runs.append(calibrate(cfg, prop, obs, label, disc, vprior, rscale, dscale, seed_extra=i))
        except Exception as exc:  # noqa: BLE001
            raise StageError(f"calibration:{label}", exc) from exc
    wall = time.perf_counter() - t0
    timing = {
        "projection_time": prop.projection_time,
        "sampling_time": float(sum(r.timing["sampling_time"] for r in runs)),
    }
    timing["total_time"] = max(wall, timing["projection_time"] + timing["sampling_time"])
    return ExperimentReport(scenario, cfg, hash_of(cfg), runs, timing)
