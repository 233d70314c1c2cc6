"""Karhunen-Loeve expansion of a Gaussian process with uncertain hyper-parameters.

The eigenpairs of the squared-exponential kernel are computed by a Legendre
Galerkin projection of the Fredholm equation, repeated at Gauss-Legendre
nodes of the (truncated) hyper-parameter support, and expanded in Legendre
polynomials of the hyper-parameters. The field is then written as a Hermite
chaos in a germ that stacks the KL variables and one component per
hyper-parameter.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg
from numpy.polynomial import legendre
from scipy import special, stats
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .chaos_basis import ChaosBasis, build_basis, gauss_rule, hermite_table, quartic_slice

DEFAULT_COVERAGE = (0.001, 0.999)


class ModeAlignmentError(RuntimeError):
    pass


class EigenSolveError(RuntimeError):
    pass


@dataclass(frozen=True)
class SquaredExponential:
    """``C(x1, x2) = variance * exp(-corr * (x1 - x2)**2)``.

    ``corr`` multiplies the squared distance, so it is an inverse squared length.
    """

    variance: float = 1.0
    corr: float = 1.0

    def __post_init__(self):
        if not self.variance >= 0 or not self.corr > 0:
            raise ValueError(f"kernel needs variance >= 0 and corr > 0, got {self.variance}, {self.corr}")

    def __call__(self, x1, x2):
        x1 = np.asarray(x1, dtype=float)
        x2 = np.asarray(x2, dtype=float)
        return self.variance * np.exp(-self.corr * (x1 - x2) ** 2)

    def with_params(self, variance, corr) -> "SquaredExponential":
        return replace(self, variance=float(variance), corr=float(corr))


def kernel_eval(kernel: SquaredExponential, x1, x2, theta=None):
    """Evaluate the kernel, optionally at hyper-parameters ``theta = (variance, corr)``."""
    if theta is not None:
        kernel = kernel.with_params(*theta)
    return kernel(x1, x2)


@dataclass(frozen=True)
class HyperPrior:
    """Prior of one covariance hyper-parameter.

    ``family`` is ``"gamma"`` (mean ``shape*scale``), ``"invgamma"`` (mean
    ``scale/(shape-1)``), ``"normal"`` (``shape`` = mean, ``scale`` = std) or
    ``"fixed"`` (point mass at ``shape``). Gamma and inverse-gamma priors are
    truncated to the central ``coverage`` probability interval.
    """

    family: str
    shape: float
    scale: float = 1.0
    coverage: tuple[float, float] = DEFAULT_COVERAGE

    def __post_init__(self):
        if self.family not in ("gamma", "invgamma", "normal", "fixed"):
            raise ValueError(f"unknown prior family {self.family!r}")
        if self.family in ("gamma", "invgamma") and not (self.shape > 0 and self.scale > 0):
            raise ValueError("gamma/inverse-gamma priors need positive shape and scale")
        if self.family == "normal" and not self.scale > 0:
            raise ValueError("normal prior needs positive standard deviation")
        lo, hi = self.coverage
        if not 0 <= lo < hi <= 1:
            raise ValueError(f"invalid coverage {self.coverage}")

    @classmethod
    def point(cls, value: float) -> "HyperPrior":
        return cls("fixed", float(value), 1.0)

    @property
    def is_fixed(self) -> bool:
        return self.family == "fixed"

    @property
    def dist(self):
        if self.family == "gamma":
            return stats.gamma(a=self.shape, scale=self.scale)
        if self.family == "invgamma":
            return stats.invgamma(a=self.shape, scale=self.scale)
        if self.family == "normal":
            return stats.norm(loc=self.shape, scale=self.scale)
        return None

    @property
    def truncated(self) -> bool:
        return self.family in ("gamma", "invgamma")

    @property
    def bounds(self) -> tuple[float, float]:
        if self.is_fixed:
            return (self.shape, self.shape)
        lo, hi = self.coverage
        return (float(self.dist.ppf(lo)), float(self.dist.ppf(hi)))

    def from_germ(self, xi):
        """Iso-probabilistic map from a standard normal germ to the (truncated) prior."""
        xi = np.asarray(xi, dtype=float)
        if self.is_fixed:
            return np.full(xi.shape, self.shape)
        if not self.truncated:
            return self.shape + self.scale * xi
        lo, hi = self.coverage
        return self.dist.ppf(lo + (hi - lo) * special.ndtr(xi))

    def to_germ(self, theta):
        theta = np.asarray(theta, dtype=float)
        if self.is_fixed:
            return np.zeros(theta.shape)
        if not self.truncated:
            return (theta - self.shape) / self.scale
        lo, hi = self.coverage
        return special.ndtri((self.dist.cdf(theta) - lo) / (hi - lo))

    def cdf(self, theta):
        """CDF of the prior actually used (truncated where applicable)."""
        theta = np.asarray(theta, dtype=float)
        if self.is_fixed:
            return (theta >= self.shape).astype(float)
        if not self.truncated:
            return self.dist.cdf(theta)
        lo, hi = self.coverage
        return np.clip((self.dist.cdf(theta) - lo) / (hi - lo), 0.0, 1.0)

    def mean(self) -> float:
        if self.is_fixed:
            return self.shape
        if not self.truncated:
            return self.shape
        a, b = self.bounds
        return float(self.dist.expect(lambda t: t, lb=a, ub=b, conditional=True))

    def sample(self, rng, size):
        return self.from_germ(rng.standard_normal(size))


def legendre_basis(x, size, domain):
    """Legendre polynomials orthonormal on ``domain`` (Lebesgue measure)."""
    a, b = domain
    t = 2.0 * (np.asarray(x, dtype=float) - a) / (b - a) - 1.0
    vals = legendre.legvander(t, size - 1)
    return vals * np.sqrt((2 * np.arange(size) + 1) / (b - a))


def legendre_basis_deriv(x, size, domain):
    a, b = domain
    t = 2.0 * (np.asarray(x, dtype=float) - a) / (b - a) - 1.0
    out = np.empty(t.shape + (size,))
    for k in range(size):
        c = np.zeros(size)
        c[k] = 1.0
        out[..., k] = legendre.legval(t, legendre.legder(c)) * 2.0 / (b - a)
    return out * np.sqrt((2 * np.arange(size) + 1) / (b - a))


@dataclass
class Eigenpairs:
    values: np.ndarray  # (n_modes,)
    vectors: np.ndarray  # (basis_size, n_modes), B-orthonormal
    all_values: np.ndarray
    A: np.ndarray = field(repr=False)
    B: np.ndarray = field(repr=False)


def galerkin_matrices(kernel, theta, basis_size, domain=(0.0, 1.0), n_quad=32):
    if n_quad < 20:
        raise ValueError("kernel quadrature needs at least 20 nodes per axis")
    rule = gauss_rule("legendre", n_quad, domain)
    psi = legendre_basis(rule.nodes, basis_size, domain)  # (nq, K)
    wpsi = psi * rule.weights[:, None]
    C = kernel_eval(kernel, rule.nodes[:, None], rule.nodes[None, :], theta)
    A = wpsi.T @ C @ wpsi
    B = wpsi.T @ psi
    return 0.5 * (A + A.T), 0.5 * (B + B.T)


def solve_gep(kernel, theta, n_modes, basis_size=12, domain=(0.0, 1.0), n_quad=32) -> Eigenpairs:
    """Largest ``n_modes`` eigenpairs of the Galerkin-projected Fredholm problem ``A d = lam B d``."""
    if basis_size < n_modes:
        raise ValueError("spatial basis must be at least as large as the number of modes")
    A, B = galerkin_matrices(kernel, theta, basis_size, domain, n_quad)
    try:
        w, v = scipy.linalg.eigh(A, B)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise EigenSolveError(str(exc)) from exc
    w, v = w[::-1], v[:, ::-1]
    if w[-1] < -1e-10:
        raise EigenSolveError(
            f"eigenvalue {w[-1]:.3e} below tolerance; kernel quadrature is under-resolved"
        )
    w = np.maximum(w, 0.0)
    vecs = v[:, :n_modes].copy()
    # deterministic sign: largest-magnitude coefficient positive
    pivot = np.argmax(np.abs(vecs), axis=0)
    vecs *= np.sign(vecs[pivot, np.arange(n_modes)])
    return Eigenpairs(w[:n_modes].copy(), vecs, w, A, B)


@dataclass
class KLModes:
    """Eigenpairs of the kernel as Legendre expansions over the hyper-parameters.

    ``l[n, i]`` expands the eigenvalue, ``c[n, i, k]`` the Legendre coefficient
    ``k`` of eigenfunction ``n``, ``s[n, i]`` the square root of the eigenvalue;
    ``i`` runs over the tensor Legendre basis ``hyper_degrees`` on ``bounds``.
    """

    kernel: SquaredExponential
    priors: tuple[HyperPrior, HyperPrior]
    domain: tuple[float, float]
    basis_size: int
    hyper_degrees: np.ndarray  # (L, 2)
    bounds: tuple[tuple[float, float], tuple[float, float]]
    l: np.ndarray
    c: np.ndarray
    s: np.ndarray
    node_theta: np.ndarray = field(repr=False)
    node_values: np.ndarray = field(repr=False)
    node_vectors: np.ndarray = field(repr=False)
    n_quad: int = 32

    @property
    def n_modes(self):
        return self.l.shape[0]

    @property
    def n_hyper(self):
        return self.hyper_degrees.shape[0]

    def phi(self, theta) -> np.ndarray:
        """Hyper-parameter Legendre basis at ``theta`` (shape ``(..., 2)``) -> ``(..., L)``."""
        theta = np.atleast_1d(np.asarray(theta, dtype=float))
        out = np.ones(theta.shape[:-1] + (self.n_hyper,))
        for dim in range(2):
            tables = _hyper_legendre(theta[..., dim], self.hyper_degrees[:, dim].max() + 1, self.bounds[dim])
            out *= tables.reshape(theta.shape[:-1] + (-1,))[..., self.hyper_degrees[:, dim]]
        return out

    def eigenvalues(self, theta):
        return self.phi(theta) @ self.l.T

    def sqrt_eigenvalues(self, theta):
        return self.phi(theta) @ self.s.T

    def eigenvectors(self, theta):
        """Spatial Legendre coefficients, shape ``(..., basis_size, n_modes)``."""
        return np.einsum("...i,nik->...kn", self.phi(theta), self.c)

    def eigenfunctions(self, x, theta):
        psi = legendre_basis(x, self.basis_size, self.domain)
        return psi @ self.eigenvectors(theta)


def _hyper_legendre(t, size, bounds):
    """Legendre polynomials orthonormal for the uniform probability measure on ``bounds``."""
    a, b = bounds
    if b == a:
        return np.ones(np.shape(t) + (size,))
    u = 2.0 * (np.asarray(t, dtype=float) - a) / (b - a) - 1.0
    return legendre.legvander(u, size - 1) * np.sqrt(2 * np.arange(size) + 1)


def _align(prev_vecs, cand_vecs, B, n_modes, min_overlap=0.9):
    """Match candidate modes to the previous node's modes by maximal overlap."""
    overlap = prev_vecs.T @ B @ cand_vecs  # (n_modes, n_cand)
    order = np.full(n_modes, -1)
    taken = np.zeros(cand_vecs.shape[1], dtype=bool)
    mag = np.abs(overlap)
    for _ in range(n_modes):
        masked = np.where(taken[None, :] | (order[:, None] >= 0), -1.0, mag)
        n, m = np.unravel_index(np.argmax(masked), masked.shape)
        if masked[n, m] < min_overlap:
            raise ModeAlignmentError(
                f"mode {n} overlaps at most {masked[n, m]:.3f} with its neighbour; "
                "increase hyper quadrature nodes or check for eigenvalue crossing"
            )
        order[n] = m
        taken[m] = True
    signs = np.sign(overlap[np.arange(n_modes), order])
    return order, signs


def expand_over_hyper(
    kernel: SquaredExponential,
    priors,
    n_modes: int,
    n_hyper: int = 20,
    n_nodes: int | None = None,
    basis_size: int = 12,
    domain=(0.0, 1.0),
    n_quad: int = 32,
) -> KLModes:
    """Solve the Galerkin eigenproblem on a Gauss-Legendre grid over the
    hyper-parameter support and expand the eigenpairs in Legendre polynomials.

    Args:
        kernel: squared-exponential kernel (its own parameters are ignored).
        priors: ``(variance_prior, corr_prior)``.
        n_modes: number of retained KL modes.
        n_hyper: Legendre polynomials per hyper-parameter dimension.
        n_nodes: quadrature nodes per dimension, at least ``n_hyper``.
        basis_size: number of spatial Legendre polynomials.
    """
    priors = tuple(priors)
    n_nodes = n_nodes or n_hyper
    if n_nodes < n_hyper:
        raise ValueError("need at least as many quadrature nodes as Legendre polynomials")
    bounds = tuple(p.bounds for p in priors)
    rules = []
    sizes = []
    for (a, b) in bounds:
        if a == b:
            rules.append((np.array([a]), np.array([1.0])))
            sizes.append(1)
        else:
            r = gauss_rule("legendre", n_nodes, (a, b))
            rules.append((r.nodes, r.weights / (b - a)))
            sizes.append(n_hyper)
    degrees = np.array([(i, j) for i in range(sizes[0]) for j in range(sizes[1])], dtype=np.int64)
    n0, n1 = len(rules[0][0]), len(rules[1][0])

    # snake through the grid so consecutive nodes are neighbours
    path = []
    for i in range(n0):
        cols = range(n1) if i % 2 == 0 else range(n1 - 1, -1, -1)
        path.extend((i, j) for j in cols)

    n_cand = min(basis_size, n_modes + 2)
    theta = np.empty((n0, n1, 2))
    values = np.empty((n0, n1, n_modes))
    vectors = np.empty((n0, n1, basis_size, n_modes))
    prev = None
    for (i, j) in path:
        th = (rules[0][0][i], rules[1][0][j])
        pairs = solve_gep(kernel, th, n_cand, basis_size, domain, n_quad)
        cand = pairs.vectors
        if prev is None:
            order, signs = np.arange(n_modes), np.ones(n_modes)
        else:
            order, signs = _align(prev, cand, pairs.B, n_modes)
        vecs = cand[:, order] * signs
        theta[i, j] = th
        values[i, j] = pairs.values[order]
        vectors[i, j] = vecs
        prev = vecs

    w = rules[0][1][:, None] * rules[1][1][None, :]
    phi = np.ones((n0, n1, len(degrees)))
    for dim in range(2):
        nodes = rules[dim][0]
        tab = _hyper_legendre(nodes, sizes[dim], bounds[dim])  # (n_dim, size)
        sel = tab[:, degrees[:, dim]]
        phi *= sel[:, None, :] if dim == 0 else sel[None, :, :]
    norm = np.einsum("ij,ijl->l", w, phi**2)
    l = np.einsum("ij,ijl,ijn->nl", w, phi, values) / norm
    c = np.einsum("ij,ijl,ijkn->nlk", w, phi, vectors) / norm[None, :, None]
    lam_rec = np.einsum("ijl,nl->ijn", phi, l)
    if np.min(lam_rec) < -1e-12 * max(1.0, np.max(lam_rec)):
        raise EigenSolveError("reconstructed eigenvalues negative at a quadrature node")
    s = np.einsum("ij,ijl,ijn->nl", w, phi, np.sqrt(np.maximum(lam_rec, 0.0))) / norm
    return KLModes(
        kernel=kernel,
        priors=priors,
        domain=tuple(domain),
        basis_size=basis_size,
        hyper_degrees=degrees,
        bounds=bounds,
        l=l,
        c=c,
        s=s,
        node_theta=theta.reshape(-1, 2),
        node_values=values.reshape(-1, n_modes),
        node_vectors=vectors.reshape(-1, basis_size, n_modes),
        n_quad=n_quad,
    )


def hyper_to_pc(prior: HyperPrior, order: int, n_nodes: int = 32) -> np.ndarray:
    """1-D Hermite chaos coefficients of the map ``theta = F^-1(Phi(xi))``."""
    if n_nodes < 32:
        raise ValueError("use at least 32 Gauss-Hermite nodes")
    return _pc_1d(prior.from_germ, order, n_nodes)


def _pc_1d(func, order, n_nodes=48):
    rule = gauss_rule("hermite", n_nodes)
    vals = np.asarray(func(rule.nodes), dtype=float)
    if not np.all(np.isfinite(vals)):
        raise FloatingPointError("non-finite value in germ map")
    he = hermite_table(rule.nodes, order)  # (n, order+1)
    norms = np.array([math.factorial(k) for k in range(order + 1)], dtype=float)
    return np.tensordot(he * rule.weights[:, None], vals, axes=(0, 0)) / norms.reshape(
        (-1,) + (1,) * (vals.ndim - 1)
    )


@dataclass
class GpcField:
    """Chaos coefficients ``coeffs[p, g]`` of a random field on the grid ``x``."""

    x: np.ndarray
    coeffs: np.ndarray
    basis: ChaosBasis

    @property
    def mean(self):
        return self.coeffs[0]

    @property
    def variance(self):
        return np.sum(self.coeffs[1:] ** 2 * self.basis.norms[1:, None], axis=0)

    def sample(self, xi):
        return sample_field(self, xi)

    def gradient(self) -> "GpcField":
        return GpcField(self.x, np.gradient(self.coeffs, self.x, axis=1, edge_order=2), self.basis)


def hyper_phi_pc(klmodes: KLModes, basis: ChaosBasis, hyper_dims, n_nodes=48) -> np.ndarray:
    """Chaos coefficients of ``phi_i(theta(xi))``, shape ``(L, P)``.

    Each 1-D Legendre factor is projected separately on the Hermite polynomials
    of its own germ; since the germs are independent the coefficients of the
    tensor product are products of the 1-D coefficients.
    """
    L = klmodes.n_hyper
    out = np.ones((L, basis.size))
    for dim, gd in enumerate(hyper_dims):
        prior = klmodes.priors[dim]
        size = int(klmodes.hyper_degrees[:, dim].max()) + 1
        bounds = klmodes.bounds[dim]
        coef = _pc_1d(lambda z: _hyper_legendre(prior.from_germ(z), size, bounds), basis.order, n_nodes)
        # coef: (order+1, size)
        out *= coef[basis.degrees[:, gd]][:, klmodes.hyper_degrees[:, dim]].T
    mask = np.ones(basis.size, dtype=bool)
    for d in range(basis.germ_dim):
        if d not in tuple(hyper_dims):
            mask &= basis.degrees[:, d] == 0
    return out * mask[None, :]


def field_gpc(
    klmodes: KLModes,
    basis: ChaosBasis,
    x,
    mean_field=None,
    kl_dims=None,
    hyper_dims=None,
    quartic=None,
) -> GpcField:
    """Chaos coefficients of the hierarchical field on the grid ``x``.

    Germ layout defaults to KL variables on dims ``0..N-1`` followed by the two
    hyper-parameter germs. The KL variable ``n`` is the first-order term of its
    dimension, and the coefficient of ``H_k`` is obtained by contracting the
    chaos expansions of ``sqrt(lambda_n)`` and ``e_n(x)`` with the 4-way moment
    tensor.
    """
    x = np.asarray(x, dtype=float)
    N = klmodes.n_modes
    kl_dims = tuple(range(N)) if kl_dims is None else tuple(kl_dims)
    hyper_dims = (N, N + 1) if hyper_dims is None else tuple(hyper_dims)
    if len(kl_dims) != N or len(hyper_dims) != 2:
        raise ValueError("germ layout does not match the number of modes")
    if max(kl_dims + hyper_dims) >= basis.germ_dim or len(set(kl_dims + hyper_dims)) != N + 2:
        raise ValueError("germ layout does not fit the basis")
    if basis.order < 1:
        raise ValueError("field expansion needs at least a first-order basis")
    if quartic is not None and (quartic.arity != 4 or quartic.size != basis.size):
        raise ValueError("4-way moment tensor missing or built for another basis")
    phi_hat = hyper_phi_pc(klmodes, basis, hyper_dims)  # (L, P)
    S = klmodes.s @ phi_hat  # (N, P)
    psi = legendre_basis(x, klmodes.basis_size, klmodes.domain)  # (G, K)
    E = np.einsum("nik,ip,gk->npg", klmodes.c, phi_hat, psi)  # (N, P, G)
    coeffs = np.zeros((basis.size, x.size))
    for n, d in enumerate(kl_dims):
        unit = [0] * basis.germ_dim
        unit[d] = 1
        j = basis.index_of(unit)
        t4 = quartic.slice(j) if quartic is not None else quartic_slice(basis, j)
        coeffs += np.einsum("p,qg,pqk->kg", S[n], E[n], t4)
    coeffs /= basis.norms[:, None]
    if mean_field is not None:
        mean = mean_field(x) if callable(mean_field) else np.asarray(mean_field, dtype=float)
        coeffs[0] += np.broadcast_to(mean, x.shape)
    return GpcField(x, coeffs, basis)


def sample_field(gfield: GpcField, xi) -> np.ndarray:
    """Evaluate the field at germ points ``xi`` of shape ``(..., germ_dim)``."""
    xi = np.asarray(xi, dtype=float)
    if xi.shape[-1] != gfield.basis.germ_dim:
        raise ValueError(
            f"germ has {xi.shape[-1]} components, field basis expects {gfield.basis.germ_dim}"
        )
    return gfield.basis.evaluate_all(xi) @ gfield.coeffs


def kl_realization(kernel, theta, chi, x, n_modes, basis_size=12, domain=(0.0, 1.0), n_quad=32):
    """Direct KL realization ``sum_n sqrt(lam_n) e_n(x) chi_n`` at fixed hyper-parameters."""
    pairs = solve_gep(kernel, theta, n_modes, basis_size, domain, n_quad)
    psi = legendre_basis(x, basis_size, domain)
    return (psi @ pairs.vectors * np.sqrt(pairs.values)) @ np.asarray(chi, dtype=float)


def build_area_field(
    priors,
    mean_field,
    x,
    n_modes=4,
    order=2,
    n_hyper=20,
    basis_size=12,
    domain=(0.0, 1.0),
    kernel=None,
):
    """Convenience wrapper: KL modes and field chaos on a fresh ``n_modes + 2`` germ basis."""
    kernel = kernel or SquaredExponential()
    modes = expand_over_hyper(kernel, priors, n_modes, n_hyper=n_hyper, basis_size=basis_size, domain=domain)
    basis = build_basis(n_modes + 2, order)
    return modes, field_gpc(modes, basis, x, mean_field)


class HierarchicalKLField(TransformerMixin, BaseEstimator):
    """Estimator wrapper around :func:`field_gpc`.

    ``fit`` takes the grid locations and builds the KL modes and the field
    chaos. ``transform`` maps germ draws of shape ``(n, n_modes + 2)`` to field
    realizations on the fitted grid.

    Args:
        variance_prior: ``(family, shape, scale)`` of the field variance.
        corr_prior: ``(family, shape, scale)`` of the correlation parameter.
        mean_coeffs: polynomial coefficients of the mean, lowest degree first.
        n_modes: retained KL modes.
        order: total order of the Hermite basis.
        n_hyper: Legendre polynomials per hyper-parameter.
        basis_size: spatial Legendre polynomials.
        domain: spatial interval.
        coverage: probability interval kept by the truncated priors.
    """

    def __init__(
        self,
        variance_prior=("invgamma", 9.0, 0.5),
        corr_prior=("gamma", 5.0, 0.2),
        mean_coeffs=(0.0,),
        n_modes=4,
        order=2,
        n_hyper=20,
        basis_size=12,
        domain=(0.0, 1.0),
        coverage=DEFAULT_COVERAGE,
    ):
        self.variance_prior = variance_prior
        self.corr_prior = corr_prior
        self.mean_coeffs = mean_coeffs
        self.n_modes = n_modes
        self.order = order
        self.n_hyper = n_hyper
        self.basis_size = basis_size
        self.domain = domain
        self.coverage = coverage

    def _priors(self):
        return tuple(
            HyperPrior(p[0], float(p[1]), float(p[2]) if len(p) > 2 else 1.0, tuple(self.coverage))
            for p in (self.variance_prior, self.corr_prior)
        )

    def fit(self, X, y=None):
        x = check_array(X, ensure_2d=False, dtype=float).ravel()
        lo, hi = self.domain
        if np.any(x < lo) or np.any(x > hi):
            raise ValueError(f"grid points must lie in {self.domain}")
        if self.n_modes < 1 or self.order < 1:
            raise ValueError("need n_modes >= 1 and order >= 1")
        mean = np.polynomial.polynomial.polyval(x, np.asarray(self.mean_coeffs, dtype=float))
        self.klmodes_, self.field_ = build_area_field(
            self._priors(), mean, x, self.n_modes, self.order, self.n_hyper, self.basis_size, tuple(self.domain)
        )
        self.basis_ = self.field_.basis
        self.n_features_in_ = 1
        return self

    def transform(self, X):
        check_is_fitted(self, "field_")
        xi = check_array(X, dtype=float)
        return sample_field(self.field_, xi)

    @property
    def mean_(self):
        check_is_fitted(self, "field_")
        return self.field_.mean

    @property
    def variance_(self):
        check_is_fitted(self, "field_")
        return self.field_.variance
