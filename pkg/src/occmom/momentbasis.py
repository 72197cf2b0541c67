"""Monomial bases, moment vectors and moment/localizing matrix structures."""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .poly import Exponent, Polynomial, grlex_key


@dataclass(frozen=True)
class Basis:
    """All monomials of degree <= ``max_degree`` in ``nvars`` variables, graded-lex."""

    nvars: int
    max_degree: int
    exponents: tuple[Exponent, ...] = field(repr=False)

    def __len__(self) -> int:
        return len(self.exponents)

    @functools.cached_property
    def position(self) -> dict[Exponent, int]:
        return {a: i for i, a in enumerate(self.exponents)}

    def index(self, alpha: Sequence[int]) -> int:
        try:
            return self.position[tuple(alpha)]
        except KeyError:
            raise KeyError(f"monomial {tuple(alpha)} not in basis of degree {self.max_degree}") from None

    def __contains__(self, alpha) -> bool:
        return tuple(alpha) in self.position

    def monomials(self, points: np.ndarray) -> np.ndarray:
        """Rows of monomial values ``m(p)`` for points of shape ``(N, nvars)``."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        exps = np.array(self.exponents, dtype=int).reshape(len(self), self.nvars)
        return np.prod(pts[:, None, :] ** exps[None, :, :], axis=-1)


@functools.lru_cache(maxsize=None)
def enumerate_basis(nvars: int, r: int) -> Basis:
    if r < 0:
        raise ValueError("degree must be nonnegative")
    exps: list[Exponent] = []

    def rec(prefix: list[int], remaining: int, slots: int):
        if slots == 0:
            exps.append(tuple(prefix))
            return
        for e in range(remaining + 1):
            rec(prefix + [e], remaining - e, slots - 1)

    rec([], r, nvars)
    exps.sort(key=grlex_key)
    basis = Basis(nvars, r, tuple(exps))
    assert len(basis) == math.comb(nvars + r, nvars)
    return basis


@dataclass(frozen=True)
class MomentVector:
    basis: Basis
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.shape != (len(self.basis),):
            raise ValueError(f"expected {len(self.basis)} moments, got {values.shape}")
        object.__setattr__(self, "values", values)

    @property
    def mass(self) -> float:
        return float(self.values[0])

    def __getitem__(self, alpha) -> float:
        return float(self.values[self.basis.index(alpha)])

    def truncate(self, r: int) -> MomentVector:
        sub = enumerate_basis(self.basis.nvars, r)
        return MomentVector(sub, np.array([self[a] for a in sub.exponents]))

    def integrate(self, p: Polynomial) -> float:
        """Linear functional ``L(p) = sum_a p_a * y_a`` (Riesz functional)."""
        return float(p.coefficient_vector(self.basis.exponents) @ self.values)


def _check_dim(vec, basis: Basis, what: str) -> np.ndarray:
    v = np.asarray(vec, dtype=float).ravel()
    if v.shape != (basis.nvars,):
        raise ValueError(f"{what} has dimension {v.size}, basis expects {basis.nvars}")
    return v


def dirac_moments(x0, basis: Basis) -> MomentVector:
    x0 = _check_dim(x0, basis, "point")
    return MomentVector(basis, basis.monomials(x0[None, :])[0])


def uniform_box_moments(lo, hi, basis: Basis) -> MomentVector:
    lo = _check_dim(lo, basis, "lower corner")
    hi = _check_dim(hi, basis, "upper corner")
    if np.any(hi <= lo):
        raise ValueError("degenerate box: need lo < hi in every coordinate")
    r = basis.max_degree
    k = np.arange(r + 1)
    # per-coordinate 1-D moments E[x_i^k]
    one_d = (hi[:, None] ** (k + 1) - lo[:, None] ** (k + 1)) / ((k + 1) * (hi - lo)[:, None])
    exps = np.array(basis.exponents, dtype=int).reshape(len(basis), basis.nvars)
    values = np.prod(one_d[np.arange(basis.nvars)[None, :], exps], axis=1)
    values[0] = 1.0
    return MomentVector(basis, values)


def uniform_segment_moments(p0, p1, basis: Basis) -> MomentVector:
    p0 = _check_dim(p0, basis, "segment start")
    p1 = _check_dim(p1, basis, "segment end")
    d = p1 - p0
    if not np.any(d):
        raise ValueError("degenerate segment: endpoints coincide")
    r = basis.max_degree
    # powers[i][e] = coefficients in s of (p0_i + s d_i)^e, low order first
    powers = []
    for i in range(basis.nvars):
        seq = [np.array([1.0])]
        for _ in range(r):
            seq.append(np.polynomial.polynomial.polymul(seq[-1], [p0[i], d[i]]))
        powers.append(seq)
    values = np.empty(len(basis))
    for n, alpha in enumerate(basis.exponents):
        c = np.array([1.0])
        for i, e in enumerate(alpha):
            if e:
                c = np.polynomial.polynomial.polymul(c, powers[i][e])
        values[n] = np.sum(c / np.arange(1, c.size + 1))
    values[0] = 1.0
    return MomentVector(basis, values)


def sample_moments(samples, basis: Basis, weights=None) -> MomentVector:
    """Empirical moments of a point cloud (optionally weighted, weights sum to the mass)."""
    pts = np.atleast_2d(np.asarray(samples, dtype=float))
    mono = basis.monomials(pts)
    if weights is None:
        values = mono.mean(axis=0)
    else:
        values = np.asarray(weights, dtype=float) @ mono
    return MomentVector(basis, values)


@dataclass(frozen=True)
class MatrixStructure:
    """Linear map from a moment vector to a symmetric matrix.

    ``rows, cols, moment, coef`` list every contribution ``A[rows, cols] +=
    coef * y[moment]`` over the full (both triangles) matrix.
    """

    row_basis: Basis
    size_moments: int
    rows: np.ndarray
    cols: np.ndarray
    moment: np.ndarray
    coef: np.ndarray

    @property
    def size(self) -> int:
        return len(self.row_basis)

    def entry(self, i: int, j: int) -> list[tuple[int, float]]:
        mask = (self.rows == i) & (self.cols == j)
        return [(int(m), float(c)) for m, c in zip(self.moment[mask], self.coef[mask])]

    def coefficient_matrices(self) -> np.ndarray:
        """Dense stack ``F[k]`` with ``instantiate(y) = sum_k y_k F[k]``."""
        n = self.size
        mats = np.zeros((self.size_moments, n, n))
        np.add.at(mats, (self.moment, self.rows, self.cols), self.coef)
        return mats


def instantiate(structure: MatrixStructure, moments) -> np.ndarray:
    values = moments.values if isinstance(moments, MomentVector) else np.asarray(moments, dtype=float)
    if values.shape[0] < structure.size_moments:
        raise IndexError("moment vector shorter than the structure requires")
    n = structure.size
    mat = np.zeros((n, n))
    np.add.at(mat, (structure.rows, structure.cols), structure.coef * values[structure.moment])
    return mat


def moment_matrix_structure(basis_half: Basis, full_basis: Basis) -> MatrixStructure:
    if basis_half.nvars != full_basis.nvars:
        raise ValueError("bases use different variable counts")
    if 2 * basis_half.max_degree > full_basis.max_degree:
        raise ValueError("moment matrix needs moments beyond the full basis degree")
    return _structure(basis_half, full_basis, {(0,) * full_basis.nvars: 1.0})


def localizing_degree(g: Polynomial) -> int:
    """Degree of ``g`` rounded up to the next even integer."""
    d = g.degree
    return d + (d % 2)


def localizing_matrix_structure(g: Polynomial, full_basis: Basis, variables: Sequence[int] | None = None) -> MatrixStructure:
    """Structure of ``L_g(y) = int g m m' dmu`` with rows of degree ``(r - d) / 2``.

    ``variables`` lists which variables of ``g.space`` the basis coordinates
    correspond to (default: all of them, in order).
    """
    if variables is None:
        variables = list(range(g.space.dim))
    variables = list(variables)
    if len(variables) != full_basis.nvars:
        raise ValueError("variable map does not match basis dimension")
    extra = g.used_variables() - set(variables)
    if extra:
        raise ValueError(f"localizer depends on variables outside the basis: {sorted(extra)}")
    d = localizing_degree(g)
    r = full_basis.max_degree
    if r < d:
        raise ValueError(f"localizer of degree {d} does not fit order {r}")
    terms = {tuple(a[v] for v in variables): c for a, c in g.terms.items()}
    half = enumerate_basis(full_basis.nvars, (r - d) // 2)
    return _structure(half, full_basis, terms)


def _structure(half: Basis, full: Basis, weights: dict[Exponent, float]) -> MatrixStructure:
    rows, cols, mom, coef = [], [], [], []
    pos = full.position
    for i, a in enumerate(half.exponents):
        for j, b in enumerate(half.exponents):
            for g, c in weights.items():
                key = tuple(x + y + z for x, y, z in zip(a, b, g))
                rows.append(i)
                cols.append(j)
                mom.append(pos[key])
                coef.append(c)
    return MatrixStructure(
        half, len(full), np.array(rows, dtype=int), np.array(cols, dtype=int),
        np.array(mom, dtype=int), np.array(coef, dtype=float),
    )
