"""Hermite chaos bases, Gauss rules and Hermite moment tensors.

Everything here uses the probabilists' Hermite polynomials ``He_n`` (weight
``exp(-x**2/2)/sqrt(2*pi)``), so ``<He_n**2> = n!`` and the germ components are
independent standard normals.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.polynomial import hermite_e, legendre

TENSOR_FORMAT_VERSION = 1
_ZERO_TOL = 1e-12


@dataclass(frozen=True)
class MultiIndex:
    degrees: tuple[int, ...]

    def __post_init__(self):
        if any(d < 0 for d in self.degrees):
            raise ValueError(f"negative degree in multi-index {self.degrees}")

    @property
    def total(self) -> int:
        return sum(self.degrees)


@dataclass(frozen=True)
class QuadratureRule:
    """Gauss rule; Hermite weights sum to 1, Legendre weights to ``b - a``."""

    kind: str
    nodes: np.ndarray
    weights: np.ndarray
    interval: tuple[float, float] | None = None

    def integrate(self, values):
        return np.tensordot(self.weights, np.asarray(values), axes=(0, 0))


@dataclass(frozen=True, eq=False)
class ChaosBasis:
    """Total-order Hermite basis over ``germ_dim`` standard normal germs.

    ``terms[0]`` is the constant and ``terms[1:germ_dim+1]`` are the unit
    first-order indices, so the term ``n + 1`` evaluates to ``xi[n]``.
    """

    germ_dim: int
    order: int
    terms: tuple[MultiIndex, ...]
    degrees: np.ndarray = field(repr=False)
    norms: np.ndarray = field(repr=False)

    @property
    def size(self) -> int:
        return len(self.terms)

    def __len__(self):
        return len(self.terms)

    def index_of(self, degrees) -> int:
        return self._lookup[tuple(int(d) for d in degrees)]

    @property
    def _lookup(self) -> dict:
        cache = self.__dict__.get("_lookup_cache")
        if cache is None:
            cache = {t.degrees: i for i, t in enumerate(self.terms)}
            object.__setattr__(self, "_lookup_cache", cache)
        return cache

    def evaluate_all(self, xi) -> np.ndarray:
        """Evaluate every basis polynomial; ``xi`` has shape ``(..., germ_dim)``."""
        xi = np.asarray(xi, dtype=float)
        if xi.shape[-1] != self.germ_dim:
            raise ValueError(
                f"germ point has {xi.shape[-1]} components, basis expects {self.germ_dim}"
            )
        he = hermite_table(xi, self.order)  # (..., germ_dim, order+1)
        out = np.ones(xi.shape[:-1] + (self.size,))
        for d in range(self.germ_dim):
            out *= he[..., d, :][..., self.degrees[:, d]]
        return out

    def same_as(self, other: "ChaosBasis") -> bool:
        return self.germ_dim == other.germ_dim and self.order == other.order


def build_basis(germ_dim: int, order: int) -> ChaosBasis:
    """Build a total-order Hermite chaos basis in graded lexicographic order.

    Args:
        germ_dim: number of independent standard normal germ components.
        order: maximal total polynomial degree.

    Returns:
        The basis with ``C(germ_dim + order, order)`` terms.
    """
    if germ_dim < 1:
        raise ValueError("germ_dim must be at least 1")
    if order < 0:
        raise ValueError("order must be non-negative")
    terms = []
    for total in range(order + 1):
        # descending lexicographic inside each degree: (1,0,..) precedes (0,1,..)
        level = [c for c in _compositions(total, germ_dim)]
        level.sort(reverse=True)
        terms.extend(level)
    degrees = np.array(terms, dtype=np.int64).reshape(len(terms), germ_dim)
    norms = np.prod([[math.factorial(d) for d in row] for row in terms], axis=1).astype(float)
    return ChaosBasis(
        germ_dim=germ_dim,
        order=order,
        terms=tuple(MultiIndex(tuple(t)) for t in terms),
        degrees=degrees,
        norms=norms,
    )


def _compositions(total, parts):
    if parts == 1:
        yield (total,)
        return
    for first in range(total, -1, -1):
        for rest in _compositions(total - first, parts - 1):
            yield (first,) + rest


def hermite_table(x, order: int) -> np.ndarray:
    """``He_0..He_order`` at ``x`` by the three-term recurrence; shape ``x.shape + (order+1,)``."""
    x = np.asarray(x, dtype=float)
    out = np.empty(x.shape + (order + 1,))
    out[..., 0] = 1.0
    if order >= 1:
        out[..., 1] = x
    for n in range(1, order):
        out[..., n + 1] = x * out[..., n] - n * out[..., n - 1]
    return out


def evaluate(basis: ChaosBasis, term_index: int, xi) -> float:
    """Value of basis term ``term_index`` at the germ point ``xi``."""
    xi = np.asarray(xi, dtype=float)
    if xi.shape != (basis.germ_dim,):
        raise ValueError(f"expected germ point of length {basis.germ_dim}, got shape {xi.shape}")
    if not 0 <= term_index < basis.size:
        raise IndexError(f"term {term_index} outside basis of size {basis.size}")
    he = hermite_table(xi, basis.order)
    degs = basis.degrees[term_index]
    return float(np.prod(he[np.arange(basis.germ_dim), degs]))


def gauss_rule(kind: str, n_nodes: int, interval=None) -> QuadratureRule:
    """Gauss-Hermite (standard normal weight) or Gauss-Legendre rule.

    Args:
        kind: ``"hermite"`` or ``"legendre"``.
        n_nodes: number of nodes, at least 1.
        interval: ``(a, b)`` for Legendre; defaults to ``(-1, 1)``.
    """
    if n_nodes < 1:
        raise ValueError("n_nodes must be at least 1")
    kind = kind.lower()
    if kind == "hermite":
        x, w = hermite_e.hermegauss(n_nodes)
        return QuadratureRule("hermite", x, w / w.sum())
    if kind == "legendre":
        a, b = (-1.0, 1.0) if interval is None else (float(interval[0]), float(interval[1]))
        if not (np.isfinite(a) and np.isfinite(b)):
            raise ValueError(f"Legendre interval must be finite, got {(a, b)}")
        if not a < b:
            raise ValueError(f"Legendre interval needs a < b, got {(a, b)}")
        x, w = legendre.leggauss(n_nodes)
        half = 0.5 * (b - a)
        return QuadratureRule("legendre", a + half * (x + 1.0), half * w, (a, b))
    raise ValueError(f"unknown quadrature kind {kind!r}")


def tensor_hermite_rule(germ_dim: int, n_nodes: int) -> tuple[np.ndarray, np.ndarray]:
    """Tensorized Gauss-Hermite nodes ``(n**d, d)`` and weights."""
    rule = gauss_rule("hermite", n_nodes)
    grids = np.meshgrid(*([rule.nodes] * germ_dim), indexing="ij")
    nodes = np.stack([g.ravel() for g in grids], axis=-1)
    wgrids = np.meshgrid(*([rule.weights] * germ_dim), indexing="ij")
    weights = np.prod(np.stack([g.ravel() for g in wgrids], axis=-1), axis=-1)
    return nodes, weights


def project(basis: ChaosBasis, func, n_nodes: int | None = None) -> np.ndarray:
    """Pseudo-spectral projection of ``func(xi) -> array (n, ...)`` onto the basis."""
    n_nodes = n_nodes or basis.order + 2
    nodes, weights = tensor_hermite_rule(basis.germ_dim, n_nodes)
    values = np.asarray(func(nodes))
    h = basis.evaluate_all(nodes)  # (n, P)
    coef = np.tensordot(h * weights[:, None], values, axes=(0, 0))
    return coef / basis.norms.reshape((-1,) + (1,) * (coef.ndim - 1))


@dataclass(frozen=True, eq=False)
class MomentTensor:
    """Sparse symmetric tensor of expectations ``<H_i ... H_p>``.

    Only index tuples sorted ascending are stored; lookups sort the key.
    """

    arity: int
    germ_dim: int
    order: int
    size: int
    index: np.ndarray
    values: np.ndarray

    def __len__(self):
        return len(self.values)

    def __getitem__(self, key) -> float:
        key = tuple(sorted(int(k) for k in key))
        if len(key) != self.arity:
            raise KeyError(f"expected {self.arity} indices")
        return self._table.get(key, 0.0)

    @property
    def _table(self) -> dict:
        table = self.__dict__.get("_table_cache")
        if table is None:
            table = {tuple(int(i) for i in row): float(v) for row, v in zip(self.index, self.values)}
            object.__setattr__(self, "_table_cache", table)
        return table

    def items(self):
        return self._table.items()

    def dense(self) -> np.ndarray:
        out = np.zeros((self.size,) * self.arity)
        for row, v in zip(self.index, self.values):
            for perm in set(itertools.permutations(row)):
                out[perm] = v
        return out

    def slice(self, j: int) -> np.ndarray:
        """Dense ``T[:, :, j, :]`` (any position, by symmetry) of a 4-way tensor."""
        if self.arity != 4:
            raise ValueError("slices are defined for 4-way tensors")
        out = np.zeros((self.size,) * 3)
        for row, v in zip(self.index, self.values):
            row = list(row)
            if j not in row:
                continue
            row.remove(j)
            for perm in set(itertools.permutations(row)):
                out[perm] = v
        return out

    def coo(self) -> tuple[np.ndarray, np.ndarray]:
        """All distinct permutations of the stored entries, as ``(index, values)``."""
        rows, vals = [], []
        for row, v in zip(self.index, self.values):
            for perm in set(itertools.permutations(tuple(row))):
                rows.append(perm)
                vals.append(v)
        return np.array(rows, dtype=np.int64).reshape(-1, self.arity), np.array(vals)


def _hermite_expectation_table(arity: int, order: int) -> np.ndarray:
    """1-D ``E[He_a1 ... He_ak]`` for all ``a`` in ``[0, order]**k``."""
    d_max = arity * order
    n = (d_max + 1 + 1) // 2 + 1  # ceil((d_max+1)/2) + 1
    rule = gauss_rule("hermite", n)
    he = hermite_table(rule.nodes, order).T  # (order+1, n)
    prod = np.ones((1, n))
    for _ in range(arity):
        prod = (prod[:, None, :] * he[None, :, :]).reshape(-1, n)
    # expectations of Hermite products are integers; quadrature only adds round-off
    return np.rint(prod @ rule.weights)  # flat index: a1*(p+1)**(k-1) + ... + ak


def quartic_slice(basis: ChaosBasis, j: int) -> np.ndarray:
    """Dense ``E[H_p H_q H_j H_k]`` over ``(p, q, k)`` for one fixed term ``j``."""
    table = _hermite_expectation_table(4, basis.order)
    base = basis.order + 1
    deg = basis.degrees
    out = np.ones((basis.size,) * 3)
    for d in range(basis.germ_dim):
        flat = (
            deg[:, d][:, None, None] * base**3
            + deg[:, d][None, :, None] * base**2
            + deg[j, d] * base
            + deg[:, d][None, None, :]
        )
        out *= table[flat]
    out[np.abs(out) < _ZERO_TOL] = 0.0
    return out


def moment_tensor(basis: ChaosBasis, arity: int, cache_dir=None) -> MomentTensor:
    """Sparse tensor of ``E[H_i ... H_p]`` for ``arity`` basis terms.

    Entries factor over germ dimensions into 1-D Hermite expectations, computed
    by Gauss-Hermite quadrature that is exact for the degrees involved.
    Magnitudes below 1e-12 are treated as structural zeros and dropped.
    """
    if arity not in range(2, 7):
        raise ValueError("arity must be between 2 and 6")
    if cache_dir is not None:
        path = Path(cache_dir) / _cache_name(basis, arity)
        if path.exists():
            return load_tensor(path)
    table = _hermite_expectation_table(arity, basis.order)
    base = basis.order + 1
    combos = np.array(
        list(itertools.combinations_with_replacement(range(basis.size), arity)), dtype=np.int64
    )
    values = np.ones(len(combos))
    for d in range(basis.germ_dim):
        deg = basis.degrees[combos, d]  # (n, arity)
        # odd degree sum in any dimension gives an exact zero
        keep = deg.sum(axis=1) % 2 == 0
        combos, values, deg = combos[keep], values[keep], deg[keep]
        flat = np.zeros(len(combos), dtype=np.int64)
        for m in range(arity):
            flat = flat * base + deg[:, m]
        values = values * table[flat]
        nz = np.abs(values) >= _ZERO_TOL
        combos, values = combos[nz], values[nz]
    tensor = MomentTensor(arity, basis.germ_dim, basis.order, basis.size, combos, values)
    if cache_dir is not None:
        save_tensor(tensor, Path(cache_dir) / _cache_name(basis, arity))
    return tensor


def _cache_name(basis, arity):
    return f"moments_d{basis.germ_dim}_p{basis.order}_k{arity}_v{TENSOR_FORMAT_VERSION}.npz"


def save_tensor(tensor: MomentTensor, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        np.savez(
            fh,
            format_version=TENSOR_FORMAT_VERSION,
            germ_dim=tensor.germ_dim,
            order=tensor.order,
            arity=tensor.arity,
            size=tensor.size,
            index=tensor.index,
            values=tensor.values,
        )


def load_tensor(path) -> MomentTensor:
    with np.load(path) as data:
        if int(data["format_version"]) != TENSOR_FORMAT_VERSION:
            raise ValueError(f"{path}: unsupported tensor format {int(data['format_version'])}")
        return MomentTensor(
            arity=int(data["arity"]),
            germ_dim=int(data["germ_dim"]),
            order=int(data["order"]),
            size=int(data["size"]),
            index=data["index"].copy(),
            values=data["values"].copy(),
        )


class GalerkinAlgebra:
    """Products and reciprocals of chaos expansions stored along the last axis.

    Coefficient arrays have shape ``(..., P)``. Products are projected back onto
    the basis with the triple-product tensor.
    """

    def __init__(self, basis: ChaosBasis, triple: MomentTensor | None = None):
        self.basis = basis
        self.triple = triple if triple is not None else moment_tensor(basis, 3)
        t3 = self.triple.dense()
        self._t3 = t3
        # sparse triple products, one column per output term: (a[I] * b[J]) @ S
        i, j, k = np.nonzero(t3)
        self._i, self._j = i, j
        self._scatter = np.zeros((i.size, basis.size))
        self._scatter[np.arange(i.size), k] = t3[i, j, k] / basis.norms[k]

    @property
    def size(self):
        return self.basis.size

    def mul(self, a, b):
        a = np.asarray(a)
        b = np.asarray(b)
        return (a[..., self._i] * b[..., self._j]) @ self._scatter

    def mul_matrix(self, a):
        """Matrix ``M[k, p] = sum_i a_i <H_i H_p H_k>`` used by Galerkin division."""
        return np.tensordot(np.asarray(a), self._t3, axes=([-1], [0])).swapaxes(-1, -2)

    def reciprocal(self, a, cond_limit=1e12):
        return galerkin_reciprocal(a, self, cond_limit=cond_limit)

    def constant(self, value, shape=()):
        out = np.zeros(tuple(shape) + (self.size,))
        out[..., 0] = value
        return out

    def mean(self, a):
        return np.asarray(a)[..., 0]

    def variance(self, a):
        a = np.asarray(a)
        return np.sum(a[..., 1:] ** 2 * self.basis.norms[1:], axis=-1)


class GalerkinDivisionError(ArithmeticError):
    pass


def galerkin_reciprocal(a, algebra: GalerkinAlgebra, cond_limit=1e12) -> np.ndarray:
    """Chaos coefficients of ``1/a`` by Galerkin division.

    Solves ``sum_p M[k, p] r_p = delta_k0 <H_0**2>`` with
    ``M[k, p] = sum_i a_i <H_i H_p H_k>`` for every leading index of ``a``.
    """
    a = np.asarray(a, dtype=float)
    if np.any(np.abs(a[..., 0]) < 1e-300):
        raise GalerkinDivisionError("mean coefficient is zero")
    m = algebra.mul_matrix(a)
    rhs = np.zeros(a.shape)
    rhs[..., 0] = algebra.basis.norms[0]
    if cond_limit is not None and algebra.size > 1:
        cond = np.linalg.cond(m.reshape((-1,) + m.shape[-2:]))
        if not np.all(np.isfinite(cond)) or np.max(cond) > cond_limit:
            raise GalerkinDivisionError(
                f"Galerkin division is ill-conditioned (condition {np.max(cond):.3g})"
            )
    try:
        return np.linalg.solve(m, rhs[..., None])[..., 0]
    except np.linalg.LinAlgError as exc:
        raise GalerkinDivisionError(str(exc)) from exc


def embedding(sub: ChaosBasis, full: ChaosBasis, dims) -> np.ndarray:
    """Positions of the terms of ``sub`` inside ``full``; ``sub`` dim ``i`` lives on ``full`` dim ``dims[i]``."""
    dims = list(dims)
    if len(dims) != sub.germ_dim or sub.order > full.order:
        raise ValueError("sub-basis does not fit inside the full basis")
    out = np.empty(sub.size, dtype=np.int64)
    for i, t in enumerate(sub.terms):
        deg = [0] * full.germ_dim
        for d, k in zip(dims, t.degrees):
            deg[d] = k
        out[i] = full.index_of(deg)
    return out
