"""Quasi-one-dimensional Euler flow through a nozzle, deterministic and stochastic Galerkin.

Both solvers share one right-hand side written in terms of an algebra on the
trailing axis of the state: pointwise arithmetic for the deterministic solve,
Galerkin products and divisions for the chaos coefficients. The deterministic
solve is therefore exactly the one-term case of the stochastic one.

Scheme: second-order central differences, scalar fourth-difference artificial
dissipation, classical RK4 in pseudo-time, supersonic inflow pinned to the
inflow state and a one-sided second-order update at the outflow.
"""
from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .chaos_basis import ChaosBasis, GalerkinAlgebra, galerkin_reciprocal

RESPONSES = ("rho", "v", "P", "T")


class SolverError(RuntimeError):
    pass


class BlowUpError(SolverError):
    pass


class NotConvergedError(SolverError):
    pass


@dataclass(frozen=True)
class FlowConfig:
    """Flow and discretisation settings (nondimensional, gas constant 1)."""

    gamma: float = 1.4
    mach_in: float = 1.5
    p_in: float = 1.0
    rho_in: float = 1.0
    length: float = 1.0
    dx: float = 0.01
    dt: float = 0.0025
    max_steps: int = 200_000
    tol: float = 1e-8
    eps4: float = 1.0 / 64.0
    outflow: str = "one_sided"

    def __post_init__(self):
        if not self.mach_in > 1:
            raise ValueError("inflow must be supersonic (mach_in > 1)")
        if min(self.p_in, self.rho_in, self.dx, self.dt, self.length) <= 0 or self.gamma <= 1:
            raise ValueError("non-physical flow configuration")
        if self.eps4 < 0:
            raise ValueError("dissipation coefficient must be non-negative")
        if self.outflow not in ("one_sided", "zero_gradient"):
            raise ValueError(f"unknown outflow treatment {self.outflow!r}")
        if self.cfl >= 1:
            raise ValueError(f"CFL number {self.cfl:.3f} at the inflow state must be below 1")
        if abs(self.length / self.dx - round(self.length / self.dx)) > 1e-9:
            raise ValueError("length must be a multiple of dx")

    @property
    def sound_speed(self):
        return float(np.sqrt(self.gamma * self.p_in / self.rho_in))

    @property
    def v_in(self):
        return self.mach_in * self.sound_speed

    @property
    def cfl(self):
        return (abs(self.v_in) + self.sound_speed) * self.dt / self.dx

    @property
    def grid(self):
        n = int(round(self.length / self.dx))
        return np.linspace(0.0, self.length, n + 1)

    def inflow_state(self):
        """Conserved variables per unit area ``(rho, rho v, rho E)``."""
        e = self.p_in / ((self.gamma - 1) * self.rho_in) + 0.5 * self.v_in**2
        return np.array([self.rho_in, self.rho_in * self.v_in, self.rho_in * e])

    def inflow_responses(self):
        return {"rho": self.rho_in, "v": self.v_in, "P": self.p_in, "T": self.p_in / self.rho_in}

    def to_dict(self):
        return asdict(self)


class PointwiseAlgebra:
    """Ordinary arithmetic on a trailing axis of length one."""

    size = 1

    def mul(self, a, b):
        return a * b

    def reciprocal(self, a, cond_limit=None):
        if np.any(a == 0):
            raise BlowUpError("division by zero")
        return 1.0 / a

    def constant(self, value, shape=()):
        return np.full(tuple(shape) + (1,), float(value))

    def mean(self, a):
        return a[..., 0]

    def variance(self, a):
        return np.zeros(np.shape(a)[:-1])


def rk4_step(rhs, q, dt):
    """One classical fourth-order Runge-Kutta step of ``dq/dt = rhs(q)``."""
    k1 = rhs(q)
    k2 = rhs(q + 0.5 * dt * k1)
    k3 = rhs(q + 0.5 * dt * k2)
    k4 = rhs(q + dt * k3)
    return q + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)


def _fourth_difference(q, out=None):
    """``delta^4 q`` along axis 1 with cubic extrapolation into two ghost cells per side."""
    n = q.shape[1]
    if out is None:
        out = np.empty((q.shape[0], n + 4) + q.shape[2:])
    out[:, 2:-2] = q
    a, b, c, d = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    out[:, 1] = 4 * a - 6 * b + 4 * c - d
    out[:, 0] = 10 * a - 20 * b + 15 * c - 4 * d
    a, b, c, d = q[:, -1], q[:, -2], q[:, -3], q[:, -4]
    out[:, -2] = 4 * a - 6 * b + 4 * c - d
    out[:, -1] = 10 * a - 20 * b + 15 * c - 4 * d
    return out[:, 4:] - 4 * (out[:, 3:-1] + out[:, 1:-3]) + 6 * out[:, 2:-2] + out[:, :-4]


class _EulerRHS:
    """Semi-discrete right-hand side for states of shape ``(3, n_grid, P)``."""

    def __init__(self, config: FlowConfig, area, darea, algebra):
        self.cfg = config
        self.alg = algebra
        self.area = area
        self.source_factor = algebra.mul(algebra.reciprocal(area, cond_limit=None), darea)
        self.speed = abs(config.v_in) + config.sound_speed
        self.n_evals = 0
        shape = (3,) + area.shape
        self._flux = np.empty(shape)
        self._pad = np.empty((3, area.shape[0] + 4) + area.shape[1:])
        self._hi = None if config.outflow == "one_sided" else -1
        self._diss = config.eps4 * self.speed / config.dx

    def fluxes(self, q):
        alg, g = self.alg, self.cfg.gamma
        r = alg.reciprocal(q[0], cond_limit=None)
        v = alg.mul(q[1], r)
        q2v = alg.mul(q[1], v)
        pa = (g - 1) * (q[2] - 0.5 * q2v)
        f = self._flux
        f[0] = q[1]
        f[1] = q2v + pa
        f[2] = alg.mul(q[2] + pa, v)
        return f, pa

    def __call__(self, q):
        self.n_evals += 1
        cfg = self.cfg
        dx2 = 2 * cfg.dx
        f, pa = self.fluxes(q)
        out = np.empty_like(q)
        out[:, 1:-1] = (f[:, :-2] - f[:, 2:]) / dx2
        if cfg.outflow == "one_sided":
            out[:, -1] = (4 * f[:, -2] - 3 * f[:, -1] - f[:, -3]) / dx2
        out[1] += self.alg.mul(pa, self.source_factor)
        if cfg.eps4 > 0:
            d4 = _fourth_difference(q, self._pad)
            hi = self._hi
            out[:, 1:hi] -= self._diss * d4[:, 1:hi]
        out[:, 0] = 0.0
        if cfg.outflow == "zero_gradient":
            out[:, -1] = 0.0
        return out


@dataclass
class SteadyFlow:
    """Converged state and normalized responses of a deterministic solve."""

    x: np.ndarray
    area: np.ndarray
    q: np.ndarray  # (3, n_grid)
    responses: dict
    steps: int
    residual: float
    wall_time: float

    @property
    def mass_flux(self):
        return self.q[1]


@dataclass
class StochasticState:
    """Converged chaos coefficients ``q[i, g, p]`` of the conserved variables."""

    x: np.ndarray
    basis: ChaosBasis
    area: np.ndarray  # (n_grid, P)
    darea: np.ndarray
    q: np.ndarray  # (3, n_grid, P)
    config: FlowConfig
    steps: int
    residual: float
    wall_time: float
    history: list = field(default_factory=list, repr=False)


def _march(config, area, darea, algebra, callback=None):
    rhs = _EulerRHS(config, area, darea, algebra)
    u_in = config.inflow_state()
    q = u_in.reshape((3,) + (1,) * area.ndim) * area[None]
    dt = config.dt
    res = np.inf
    for step in range(1, config.max_steps + 1):
        q_new = rk4_step(rhs, q, dt)
        if config.outflow == "zero_gradient":
            q_new[:, -1] = q_new[:, -2]
        res = float(np.max(np.abs(q_new - q))) / dt
        if not np.isfinite(res):
            raise BlowUpError(f"non-finite state after {step} steps")
        q = q_new
        if callback is not None:
            callback(step, res)
        if res < config.tol:
            return q, step, res
    raise NotConvergedError(f"residual {res:.3e} after {config.max_steps} steps")


def _area_on_grid(area, x):
    a = area(x) if callable(area) else np.asarray(area, dtype=float)
    a = np.broadcast_to(np.asarray(a, dtype=float), x.shape).copy()
    if not np.all(np.isfinite(a)) or np.any(a <= 0):
        raise ValueError("area must be positive and finite on the grid")
    return a


def deterministic_solve(area, config: FlowConfig | None = None) -> SteadyFlow:
    """Steady flow for an area profile (callable of ``x`` or values on the grid)."""
    config = config or FlowConfig()
    x = config.grid
    a = _area_on_grid(area, x)
    da = np.gradient(a, x, edge_order=2)
    t0 = time.perf_counter()
    q, steps, res = _march(config, a, da, PointwiseAlgebra())
    wall = time.perf_counter() - t0
    pa = (config.gamma - 1) * (q[2] - 0.5 * q[1] ** 2 / q[0])
    rho = q[0] / a
    p = pa / a
    if np.any(p <= 0) or np.any(rho <= 0):
        raise BlowUpError("non-positive pressure or density in the steady state")
    ref = config.inflow_responses()
    resp = {"rho": rho / ref["rho"], "v": q[1] / q[0] / ref["v"], "P": p / ref["P"], "T": p / rho / ref["T"]}
    return SteadyFlow(x, a, q, resp, steps, res, wall)


def stochastic_solve(
    area,
    basis: ChaosBasis,
    config: FlowConfig | None = None,
    algebra: GalerkinAlgebra | None = None,
    darea=None,
) -> StochasticState:
    """Steady chaos coefficients of the flow for a random area.

    Args:
        area: area coefficients ``(n_grid, P)`` on ``config.grid`` or an object
            with a ``coeffs`` attribute of shape ``(P, n_grid)``.
        basis: chaos basis of the area expansion.
        config: flow settings.
        algebra: precomputed Galerkin algebra for ``basis``.
        darea: spatial derivative of the area coefficients; finite differences if omitted.
    """
    config = config or FlowConfig()
    x = config.grid
    coeffs = np.asarray(getattr(area, "coeffs", None).T if hasattr(area, "coeffs") else area, dtype=float)
    if coeffs.shape != (x.size, basis.size):
        raise ValueError(f"area coefficients have shape {coeffs.shape}, expected {(x.size, basis.size)}")
    if hasattr(area, "x") and not np.allclose(area.x, x):
        raise ValueError("area field is not on the solver grid")
    if np.any(coeffs[:, 0] <= 0):
        raise ValueError("mean area must be positive")
    algebra = algebra or GalerkinAlgebra(basis)
    if darea is None:
        darea = np.gradient(coeffs, x, axis=0, edge_order=2)
    history = []
    t0 = time.perf_counter()
    q, steps, res = _march(config, coeffs, darea, algebra, callback=lambda s, r: history.append(r))
    wall = time.perf_counter() - t0
    return StochasticState(x, basis, coeffs, darea, q, config, steps, res, wall, history)


def extract_responses(state: StochasticState, responses=RESPONSES, x=None, algebra=None) -> dict:
    """Chaos coefficients of normalized responses, ``{name: (n_points, P)}``.

    Locations ``x`` are snapped to the nearest grid node.
    """
    algebra = algebra or GalerkinAlgebra(state.basis)
    cfg = state.config
    idx = slice(None) if x is None else snap_to_grid(state.x, x)
    q = state.q[:, idx]
    area = state.area[idx]
    recip_a = galerkin_reciprocal(area, algebra)
    r = galerkin_reciprocal(q[0], algebra)
    v = algebra.mul(q[1], r)
    pa = (cfg.gamma - 1) * (q[2] - 0.5 * algebra.mul(q[1], v))
    rho = algebra.mul(q[0], recip_a)
    p = algebra.mul(pa, recip_a)
    ref = cfg.inflow_responses()
    out = {}
    for name in responses:
        if name == "rho":
            val = rho
        elif name == "v":
            val = v
        elif name == "P":
            val = p
        elif name == "T":
            val = algebra.mul(p, galerkin_reciprocal(rho, algebra))
        else:
            raise KeyError(f"unknown response {name!r}")
        out[name] = val / ref[name]
    return out


def snap_to_grid(grid, x):
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if np.any(x < grid[0] - 1e-12) or np.any(x > grid[-1] + 1e-12):
        raise ValueError("location outside the solver grid")
    return np.abs(grid[None, :] - x[:, None]).argmin(axis=1)


def response_moments(coeffs: dict, basis: ChaosBasis) -> dict:
    """``{name: (mean, variance)}`` from chaos coefficients ``(n, P)``."""
    return {
        k: (v[:, 0].copy(), np.sum(v[:, 1:] ** 2 * basis.norms[1:], axis=1)) for k, v in coeffs.items()
    }


def write_state_csv(path, x, coeffs: dict, header_comment=None):
    """CSV with ``x`` then one column per response per chaos mode (``rho_0``, ``rho_1``, ...)."""
    names = []
    cols = [np.asarray(x, dtype=float)]
    for k, v in coeffs.items():
        v = np.asarray(v).reshape(len(x), -1)
        for p in range(v.shape[1]):
            names.append(f"{k}_{p}")
            cols.append(v[:, p])
    data = np.column_stack(cols)
    with open(path, "w", newline="") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        fh.write(",".join(["x"] + names) + "\n")
        for row in data:
            fh.write(",".join(repr(float(c)) for c in row) + "\n")
