"""Moment LMI relaxation of a polynomial optimal control problem.

Unknowns are truncated moment vectors of three measures: ``y`` (occupation
measure of ``(t, x, u)`` along the trajectory, degree ``k``), ``z`` (final
state, degree ``r``) and ``w`` (initial state, degree ``r``). Test functions
``t^a x^b`` of degree ``<= r`` give the linear rows ``A_F z = A_I w + A_T y``;
moment and localizing matrices give the PSD blocks.

The multipliers of the trajectory rows are the coefficients of a polynomial
``phi(t, x)`` satisfying ``d phi/dt + h >= 0`` on ``C_T`` and ``H - phi(T, .) >= 0``
on ``C_F``, which under-approximates the value function.
"""

from __future__ import annotations

import logging
import math
import time
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.integrate
import scipy.sparse as sp

from . import sdp
from .momentbasis import (
    Basis,
    MatrixStructure,
    MomentVector,
    dirac_moments,
    enumerate_basis,
    instantiate,
    localizing_degree,
    localizing_matrix_structure,
    moment_matrix_structure,
)
from .ocp import OcpProblem, SemialgebraicSet, validate
from .poly import Polynomial, VarSpace, lie_derivative

log = logging.getLogger(__name__)


class RelaxationError(ValueError):
    pass


def _even_up(n: int) -> int:
    return n + (n % 2)


@dataclass(frozen=True)
class RelaxationOrder:
    r: int
    k: int

    def __post_init__(self):
        if self.r < 0 or self.k < 0 or self.r % 2 or self.k % 2:
            raise ValueError(f"relaxation orders must be even and nonnegative, got r={self.r}, k={self.k}")


def min_k(problem: OcpProblem, r: int) -> int:
    return max(_even_up(problem.h.degree), _even_up(r - 1 + problem.deg_f), 0)


def default_order(problem: OcpProblem, r: int | None = None) -> RelaxationOrder:
    """Smallest even ``(r, k)`` with ``r >= deg H``, ``k >= deg h`` and ``k >= r - 1 + deg f``."""
    if r is None:
        r = max(2, _even_up(problem.H.degree))
    r = _even_up(max(r, problem.H.degree))
    return RelaxationOrder(r, min_k(problem, r))


def time_free_problem(problem: OcpProblem) -> OcpProblem:
    """Drop an unused time variable from a free-horizon problem."""
    if problem.horizon.is_fixed or not problem.space.has_time:
        return problem
    t = problem.space.t_index
    polys = [*problem.f, problem.h, problem.H, *problem.C_I, *problem.C_T, *problem.C_F]
    if any(t in p.used_variables() for p in polys):
        raise RelaxationError("time-dependent data in free-time mode")
    space = VarSpace(False, problem.n, problem.m)

    def drop(p: Polynomial) -> Polynomial:
        return Polynomial(space, {a[1:]: c for a, c in p.terms.items()})

    def dset(s: SemialgebraicSet) -> SemialgebraicSet:
        return SemialgebraicSet(tuple(drop(g) for g in s.polys), s.scope)

    return replace(problem, space=space, f=tuple(drop(fi) for fi in problem.f), h=drop(problem.h),
                   H=drop(problem.H), C_I=dset(problem.C_I), C_T=dset(problem.C_T), C_F=dset(problem.C_F))


@dataclass
class TrajectoryConstraintSystem:
    """Rows ``A_F z = A_I w + A_T y``, one per test monomial."""

    test_space: VarSpace
    test_exponents: list[tuple[int, ...]]  # exponents over the test variables ([t,] x)
    A_F: sp.csr_matrix
    A_I: sp.csr_matrix
    A_T: sp.csr_matrix
    y_basis: Basis
    z_basis: Basis

    @property
    def labels(self) -> list[str]:
        names = self.test_space.names
        out = []
        for a in self.test_exponents:
            parts = [n if e == 1 else f"{n}^{e}" for n, e in zip(names, a) if e]
            out.append("*".join(parts) or "1")
        return out

    def residual(self, y, z, w) -> np.ndarray:
        vals = [m.values if isinstance(m, MomentVector) else np.asarray(m) for m in (y, z, w)]
        return self.A_F @ vals[1] - self.A_I @ vals[2] - self.A_T @ vals[0]


def _test_space(problem: OcpProblem) -> VarSpace:
    return VarSpace(problem.space.has_time, problem.n, 0)


def _test_monomial(problem: OcpProblem, alpha) -> Polynomial:
    """Test monomial (exponents over ``[t,] x``) lifted into the problem space."""
    full = [0] * problem.space.dim
    for i, e in enumerate(alpha):
        full[i] = e  # test variables are a prefix of the problem variables
    return Polynomial(problem.space, {tuple(full): 1.0})


def build_trajectory_constraints(problem: OcpProblem, order: RelaxationOrder) -> TrajectoryConstraintSystem:
    problem = time_free_problem(problem)
    space = problem.space
    tspace = _test_space(problem)
    r, k = order.r, order.k
    test_basis = enumerate_basis(tspace.dim, r)
    y_basis = enumerate_basis(space.dim, k)
    z_basis = enumerate_basis(problem.n, r)
    T = problem.T if space.has_time else None
    F_rows, F_cols, F_vals = [], [], []
    I_rows, I_cols, I_vals = [], [], []
    T_rows, T_cols, T_vals = [], [], []
    ypos = y_basis.position
    for row, alpha in enumerate(test_basis.exponents):
        if space.has_time:
            a_t, beta = alpha[0], alpha[1:]
        else:
            a_t, beta = 0, alpha
        zcol = z_basis.index(beta)
        coef_F = T ** a_t if a_t else 1.0
        if coef_F != 0.0:
            F_rows.append(row), F_cols.append(zcol), F_vals.append(coef_F)
        if a_t == 0:
            I_rows.append(row), I_cols.append(zcol), I_vals.append(1.0)
        deriv = lie_derivative(_test_monomial(problem, alpha), problem.f)
        if deriv.degree > k:
            raise RelaxationError(f"derivative of test monomial {alpha} has degree {deriv.degree} > k={k}")
        for gamma, c in deriv.terms.items():
            T_rows.append(row), T_cols.append(ypos[gamma]), T_vals.append(c)
    nrow = len(test_basis)
    shape_z = (nrow, len(z_basis))
    return TrajectoryConstraintSystem(
        tspace, list(test_basis.exponents),
        sp.csr_matrix((F_vals, (F_rows, F_cols)), shape=shape_z),
        sp.csr_matrix((I_vals, (I_rows, I_cols)), shape=shape_z),
        sp.csr_matrix((T_vals, (T_rows, T_cols)), shape=(nrow, len(y_basis))),
        y_basis, z_basis,
    )


@dataclass
class BlockSpec:
    label: str
    measure: str  # "y", "z" or "w"
    structure: MatrixStructure
    poly: Polynomial | None = None  # localizing polynomial (None for the moment matrix)
    constant: float = 0.0  # added to the (1x1) matrix, used by the horizon bound


@dataclass
class RelaxationProblem:
    problem: OcpProblem
    order: RelaxationOrder
    system: TrajectoryConstraintSystem
    c_h: np.ndarray
    c_H: np.ndarray
    layout: dict[str, slice]
    w_fixed: MomentVector | None
    z_fixed: MomentVector | None
    blocks: list[BlockSpec]
    conic: sdp.ConicProgram
    row_labels: list[str]
    maximize: bool = False
    dropped: list[str] = field(default_factory=list)

    @property
    def n_vars(self) -> int:
        return self.conic.n_vars

    def split(self, v: np.ndarray) -> dict[str, MomentVector]:
        out = {"y": MomentVector(self.system.y_basis, v[self.layout["y"]])}
        out["z"] = MomentVector(self.system.z_basis, v[self.layout["z"]]) if "z" in self.layout else self.z_fixed
        out["w"] = MomentVector(self.system.z_basis, v[self.layout["w"]]) if "w" in self.layout else self.w_fixed
        return out


def _time_support(problem: OcpProblem) -> Polynomial:
    t = Polynomial.variable(problem.space, problem.space.t_index)
    return t * (problem.T - t)


def assemble(problem: OcpProblem, order: RelaxationOrder, maximize: bool = False,
             time_support: bool = True) -> RelaxationProblem:
    """Build the conic program of the order-``(r, k)`` relaxation.

    Localizers whose degree exceeds the order are dropped with a warning
    (the relaxation stays valid, only weaker). With ``maximize`` the
    criterion is maximized instead, which yields an upper bound.
    """
    diags = validate(problem)
    if diags:
        raise RelaxationError("; ".join(diags))
    problem = time_free_problem(problem)
    space = problem.space
    r, k = order.r, order.k
    if r < problem.H.degree:
        raise RelaxationError(f"r={r} below deg H={problem.H.degree}")
    if k < problem.h.degree:
        raise RelaxationError(f"k={k} below deg h={problem.h.degree}")
    system = build_trajectory_constraints(problem, order)
    y_basis, z_basis = system.y_basis, system.z_basis
    ny, nz = len(y_basis), len(z_basis)

    z_free = problem.final_mode != "singleton"
    w_free = not problem.initial.is_known
    layout = {"y": slice(0, ny)}
    N = ny
    if z_free:
        layout["z"] = slice(N, N + nz)
        N += nz
    if w_free:
        layout["w"] = slice(N, N + nz)
        N += nz

    z_fixed = dirac_moments(problem.x_T, z_basis) if not z_free else None
    w_fixed = problem.initial.moments(z_basis) if not w_free else None

    nrow = system.A_F.shape[0]
    E = np.zeros((nrow, N))
    d = np.zeros(nrow)
    E[:, layout["y"]] = -system.A_T.toarray()
    if z_free:
        E[:, layout["z"]] = system.A_F.toarray()
    else:
        d -= system.A_F @ z_fixed.values
    if w_free:
        E[:, layout["w"]] = -system.A_I.toarray()
    else:
        d += system.A_I @ w_fixed.values
    row_labels = system.labels
    if w_free:
        mass = np.zeros((1, N))
        mass[0, layout["w"].start] = 1.0
        E = np.vstack([E, mass])
        d = np.append(d, 1.0)
        row_labels = row_labels + ["mass(w)"]

    c_h = problem.h.coefficient_vector(y_basis.exponents)
    c_H = problem.state_poly(problem.H).coefficient_vector(z_basis.exponents)
    c = np.zeros(N)
    c[layout["y"]] = c_h
    offset = 0.0
    if z_free:
        c[layout["z"]] = c_H
    else:
        offset = float(c_H @ z_fixed.values)
    if maximize:
        c, offset = -c, -offset

    blocks: list[BlockSpec] = []
    dropped: list[str] = []
    blocks.append(BlockSpec("M(y)", "y", moment_matrix_structure(enumerate_basis(space.dim, k // 2), y_basis)))
    loc_T = list(problem.C_T)
    if space.has_time and time_support:
        loc_T.append(_time_support(problem))
    for j, g in enumerate(loc_T):
        label = f"L_T{j}(y)"
        if localizing_degree(g) > k:
            msg = f"{label}: localizer degree {localizing_degree(g)} exceeds k={k}; dropped"
            warnings.warn(msg, stacklevel=2)
            dropped.append(msg)
            continue
        blocks.append(BlockSpec(label, "y", localizing_matrix_structure(g, y_basis), g))
    xvars = space.x_indices

    def state_blocks(measure: str, polys, name: str):
        blocks.append(BlockSpec(f"M({measure})", measure,
                                moment_matrix_structure(enumerate_basis(problem.n, r // 2), z_basis)))
        for j, g in enumerate(polys):
            label = f"L_{name}{j}({measure})"
            if localizing_degree(g) > r:
                msg = f"{label}: localizer degree {localizing_degree(g)} exceeds r={r}; dropped"
                warnings.warn(msg, stacklevel=3)
                dropped.append(msg)
                continue
            blocks.append(BlockSpec(label, measure, localizing_matrix_structure(g, z_basis, xvars), g))

    if problem.time_bound is not None:
        # total mass of the occupation measure is the final time
        mass = MatrixStructure(enumerate_basis(space.dim, 0), len(y_basis), np.zeros(1, dtype=int),
                               np.zeros(1, dtype=int), np.zeros(1, dtype=int), -np.ones(1))
        blocks.append(BlockSpec("T_max-mass(y)", "y", mass, None, float(problem.time_bound)))
    if z_free:
        state_blocks("z", problem.C_F if problem.final_mode == "constrained" else [], "F")
    if w_free:
        state_blocks("w", problem.C_I, "I")

    conic_blocks = []
    for blk in blocks:
        st = blk.structure
        n = st.size
        cols = layout[blk.measure].start + st.moment
        F = sp.csc_matrix((st.coef, (st.rows * n + st.cols, cols)), shape=(n * n, N))
        conic_blocks.append(sdp.PSDBlock(n, F, blk.constant * np.eye(n) if blk.constant else None, blk.label))
    conic = sdp.ConicProgram(c, E, d, conic_blocks, offset)
    return RelaxationProblem(problem, order, system, c_h, c_H, layout, w_fixed, z_fixed, blocks, conic,
                             row_labels, maximize, dropped)


@dataclass
class DualCertificate:
    """Polynomial ``phi`` over ``[t,] x`` recovered from the trajectory-row multipliers."""

    phi: Polynomial  # lives in the problem space (no input dependence)
    c_phi: np.ndarray
    test_exponents: list[tuple[int, ...]]
    blocks: dict[str, np.ndarray]
    shift: float = 0.0
    order: RelaxationOrder | None = None

    def __call__(self, t, x) -> float:
        space = self.phi.space
        pt = np.zeros(space.dim)
        if space.has_time:
            pt[0] = t
        pt[space.x_indices] = x
        return self.phi.evaluate(pt)


@dataclass
class BoundResult:
    value: float
    status: str
    moments: dict[str, MomentVector]
    certificate: DualCertificate | None
    solution: sdp.ConicSolution
    relaxation: RelaxationProblem
    primal_value: float
    dual_value: float
    wall_time: float

    @property
    def ok(self) -> bool:
        return self.status == "optimal"


def extract_certificate(rel: RelaxationProblem, sol: sdp.ConicSolution) -> DualCertificate:
    problem = rel.problem
    nrow = len(rel.system.test_exponents)
    sign = -1.0 if rel.maximize else 1.0
    c_phi = sign * sol.lam[:nrow]
    phi = Polynomial.zero(problem.space)
    for a, coef in zip(rel.system.test_exponents, c_phi):
        phi = phi + _test_monomial(problem, a) * coef
    shift = 0.0
    if rel.z_fixed is not None:
        # phi's constant is free when the final state is pinned: make H - phi(T, x_T) = 0
        pt = problem.state_point(problem.x_T)
        if problem.space.has_time:
            pt[0] = problem.T
        shift = problem.H.evaluate(pt) - phi.evaluate(pt)
        phi = phi + shift
    blocks = {b.label: z for b, z in zip(rel.blocks, sol.Z)}
    return DualCertificate(phi, c_phi, rel.system.test_exponents, blocks, shift, rel.order)


def lower_bound(problem: OcpProblem, order: RelaxationOrder | None = None,
                options: sdp.SolverOptions | None = None, maximize: bool = False,
                solver=None) -> BoundResult:
    """Solve the relaxation; the optimum bounds the OCP value from below (above with ``maximize``)."""
    order = order or default_order(problem)
    rel = assemble(problem, order, maximize=maximize)
    start = time.perf_counter()
    sol = (solver or sdp.solve)(rel.conic, options)
    elapsed = time.perf_counter() - start
    sign = -1.0 if maximize else 1.0
    pval, dval = sign * sol.primal_objective, sign * sol.dual_objective
    cert = extract_certificate(rel, sol) if sol.status in ("optimal", "max_iter", "numerical") else None
    return BoundResult(pval, sol.status, rel.split(sol.v), cert, sol, rel, pval, dval, elapsed)


def phi_initial_integral(cert: DualCertificate, rel: RelaxationProblem) -> float:
    """``int phi(0, x) d mu_I`` computed from the moments of the known initial measure."""
    problem = rel.problem
    phi0 = cert.phi
    if problem.space.has_time:
        subs = [Polynomial.variable(problem.space, i) for i in range(problem.space.dim)]
        subs[0] = Polynomial.zero(problem.space)
        phi0 = phi0.compose(subs)
    return rel.w_fixed.integrate(problem.state_poly(phi0))


def check_subsolution(cert: DualCertificate | Polynomial, problem: OcpProblem, traj_points,
                      final_points, tol: float = 1e-4) -> dict:
    """Check ``d phi/dt + h >= -tol`` on ``C_T`` samples and ``H - phi(T, .) >= -tol`` on ``C_F`` samples.

    ``traj_points`` are full-space points ``([t,] x, u)``; samples outside ``C_T``
    are discarded. ``final_points`` are state vectors.
    """
    problem = time_free_problem(problem)
    phi = cert.phi if isinstance(cert, DualCertificate) else cert
    integrand = lie_derivative(phi, problem.f) + problem.h
    pts = np.atleast_2d(np.asarray(traj_points, dtype=float))
    inside = problem.C_T.contains(pts) if len(problem.C_T) else np.ones(len(pts), dtype=bool)
    vals = np.asarray(integrand.evaluate(pts[inside])) if inside.any() else np.array([np.inf])
    fpts = np.atleast_2d(np.asarray(final_points, dtype=float))
    full = np.zeros((len(fpts), problem.space.dim))
    full[:, problem.space.x_indices] = fpts
    if problem.space.has_time:
        full[:, 0] = problem.T
    if problem.final_mode == "constrained" and len(problem.C_F):
        keep = problem.C_F.contains(full)
        full = full[keep]
    fvals = np.asarray(problem.H.evaluate(full) - phi.evaluate(full)) if len(full) else np.array([np.inf])
    min_traj = float(np.min(vals))
    min_final = float(np.min(fvals))
    return {
        "min_trajectory": min_traj,
        "min_final": min_final,
        "n_trajectory_points": int(inside.sum()),
        "n_final_points": int(len(full)),
        "passed": min_traj >= -tol and min_final >= -tol,
    }


def empirical_moments(t, x, u, problem: OcpProblem, order: RelaxationOrder):
    """Occupation moments ``(y_k, z_r, w_r)`` of a sampled trajectory.

    ``t`` must be equally spaced and include both endpoints; ``y`` uses composite
    Simpson quadrature, ``z``/``w`` are Dirac moments of the last/first state.
    """
    problem = time_free_problem(problem)
    t = np.asarray(t, dtype=float)
    x = np.asarray(x, dtype=float).reshape(len(t), -1)
    u = np.asarray(u, dtype=float).reshape(len(t), -1) if problem.m else np.zeros((len(t), 0))
    if len(t) < 3:
        raise ValueError("need at least 3 samples")
    y_basis = enumerate_basis(problem.space.dim, order.k)
    z_basis = enumerate_basis(problem.n, order.r)
    cols = ([t[:, None]] if problem.space.has_time else []) + [x, u]
    pts = np.hstack(cols)
    mono = y_basis.monomials(pts)
    y = scipy.integrate.simpson(mono, x=t - t[0], axis=0)
    return (MomentVector(y_basis, y), dirac_moments(x[-1], z_basis), dirac_moments(x[0], z_basis))


def instantiate_blocks(rel: RelaxationProblem, moments: dict[str, MomentVector]) -> dict[str, np.ndarray]:
    return {b.label: instantiate(b.structure, moments[b.measure]) + b.constant for b in rel.blocks}


def objective_from_moments(rel: RelaxationProblem, y: MomentVector, z: MomentVector) -> float:
    return float(rel.c_h @ y.values + rel.c_H @ z.values)


def order_sweep(problem: OcpProblem, rs, options=None, solver=None) -> list[BoundResult]:
    return [lower_bound(problem, default_order(problem, r), options, solver=solver) for r in rs]


def basis_size(nvars: int, r: int) -> int:
    return math.comb(nvars + r, nvars)
