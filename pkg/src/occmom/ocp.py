"""Polynomial optimal control problems.

Sets are stored in standard form ``p(x) >= 0``; use :meth:`SemialgebraicSet.from_le`
for the ``g(x) <= 0`` convention.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .momentbasis import (
    Basis,
    MomentVector,
    dirac_moments,
    enumerate_basis,
    uniform_box_moments,
    uniform_segment_moments,
)
from .poly import Polynomial, VarSpace, is_finite

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SemialgebraicSet:
    polys: tuple[Polynomial, ...] = ()
    scope: str = "state"  # "state" or "trajectory"

    def __post_init__(self):
        object.__setattr__(self, "polys", tuple(self.polys))
        if self.scope not in ("state", "trajectory"):
            raise ValueError(f"unknown scope {self.scope!r}")

    @classmethod
    def from_le(cls, polys: Sequence[Polynomial], scope: str = "state") -> SemialgebraicSet:
        """Build from constraints written as ``g(x) <= 0``."""
        return cls(tuple(-g for g in polys), scope)

    def __len__(self):
        return len(self.polys)

    def __iter__(self):
        return iter(self.polys)

    def contains(self, points, tol: float = 0.0) -> np.ndarray | bool:
        pts = np.asarray(points, dtype=float)
        ok = np.ones(pts.shape[:-1], dtype=bool)
        for g in self.polys:
            ok &= np.asarray(g.evaluate(pts)) >= -tol
        return bool(ok) if pts.ndim == 1 else ok


@dataclass(frozen=True)
class Horizon:
    mode: str = "free"
    T: float | None = None

    @classmethod
    def fixed(cls, T: float) -> Horizon:
        return cls("fixed", float(T))

    @classmethod
    def free(cls) -> Horizon:
        return cls("free", None)

    @property
    def is_fixed(self) -> bool:
        return self.mode == "fixed"


@dataclass(frozen=True)
class InitialMeasure:
    kind: str
    x0: np.ndarray | None = None
    lo: np.ndarray | None = None
    hi: np.ndarray | None = None
    moments_: MomentVector | None = None

    @classmethod
    def dirac(cls, x0) -> InitialMeasure:
        return cls("dirac", x0=np.asarray(x0, dtype=float))

    @classmethod
    def uniform_box(cls, lo, hi) -> InitialMeasure:
        return cls("uniform_box", lo=np.asarray(lo, dtype=float), hi=np.asarray(hi, dtype=float))

    @classmethod
    def uniform_segment(cls, p0, p1) -> InitialMeasure:
        return cls("uniform_segment", lo=np.asarray(p0, dtype=float), hi=np.asarray(p1, dtype=float))

    @classmethod
    def explicit(cls, moments: MomentVector) -> InitialMeasure:
        return cls("explicit", moments_=moments)

    @classmethod
    def unknown(cls) -> InitialMeasure:
        return cls("unknown")

    @property
    def is_known(self) -> bool:
        return self.kind != "unknown"

    def moments(self, basis: Basis) -> MomentVector:
        if self.kind == "dirac":
            return dirac_moments(self.x0, basis)
        if self.kind == "uniform_box":
            return uniform_box_moments(self.lo, self.hi, basis)
        if self.kind == "uniform_segment":
            return uniform_segment_moments(self.lo, self.hi, basis)
        if self.kind == "explicit":
            if self.moments_.basis.max_degree < basis.max_degree:
                raise ValueError("explicit initial moments do not reach the requested order")
            return self.moments_.truncate(basis.max_degree)
        raise ValueError("moments of an unknown initial measure are not available")


@dataclass(frozen=True)
class OcpProblem:
    """``min int_0^T h dt + H(x(T))`` subject to ``xdot = f`` and the sets.

    All polynomials live in ``space``; ``has_time`` must match the horizon
    mode (time variable present iff the horizon is fixed).
    """

    space: VarSpace
    f: tuple[Polynomial, ...]
    h: Polynomial
    H: Polynomial
    C_I: SemialgebraicSet = field(default_factory=SemialgebraicSet)
    C_T: SemialgebraicSet = field(default_factory=lambda: SemialgebraicSet(scope="trajectory"))
    C_F: SemialgebraicSet = field(default_factory=SemialgebraicSet)
    horizon: Horizon = field(default_factory=Horizon.free)
    initial: InitialMeasure = field(default_factory=InitialMeasure.unknown)
    final_mode: str = "free"  # "free" | "singleton" | "constrained"
    x_T: np.ndarray | None = None
    name: str = ""
    time_bound: float | None = None  # free horizon only: T <= time_bound

    def __post_init__(self):
        object.__setattr__(self, "f", tuple(self.f))
        if self.x_T is not None:
            object.__setattr__(self, "x_T", np.asarray(self.x_T, dtype=float))

    @property
    def n(self) -> int:
        return self.space.n_states

    @property
    def m(self) -> int:
        return self.space.n_inputs

    @property
    def T(self) -> float | None:
        return self.horizon.T

    @property
    def state_space(self) -> VarSpace:
        return VarSpace(False, self.n, 0)

    def state_poly(self, p: Polynomial) -> Polynomial:
        """Restrict a state-only polynomial to the x-only space."""
        idx = self.space.x_indices
        if p.used_variables() - set(idx):
            raise ValueError("polynomial depends on non-state variables")
        terms = {tuple(a[i] for i in idx): c for a, c in p.terms.items()}
        return Polynomial(self.state_space, terms)

    def lift_state_poly(self, p: Polynomial) -> Polynomial:
        """Inverse of :meth:`state_poly`."""
        return p.embed(self.space, self.space.x_indices)

    def dynamics(self, t: float, x, u) -> np.ndarray:
        return np.array([fi.evaluate(self.point(t, x, u)) for fi in self.f])

    def point(self, t, x, u) -> np.ndarray:
        parts = [[t]] if self.space.has_time else []
        parts += [np.atleast_1d(np.asarray(x, dtype=float))]
        if self.m:
            parts += [np.atleast_1d(np.asarray(u, dtype=float))]
        return np.concatenate(parts)

    def state_point(self, x) -> np.ndarray:
        """Embed a state vector into the full variable space (t = 0, u = 0)."""
        pt = np.zeros(self.space.dim)
        pt[self.space.x_indices] = x
        return pt

    @property
    def deg_f(self) -> int:
        return max((fi.degree for fi in self.f), default=0)

    def initial_moments(self, r: int) -> MomentVector:
        return self.initial.moments(enumerate_basis(self.n, r))


def validate(problem: OcpProblem) -> list[str]:
    """Return consistency diagnostics; an empty list means the problem is usable."""
    out: list[str] = []
    sp_ = problem.space
    if len(problem.f) != sp_.n_states:
        out.append(f"dynamics arity: {len(problem.f)} entries for {sp_.n_states} states")
    all_polys = [*problem.f, problem.h, problem.H, *problem.C_I, *problem.C_T, *problem.C_F]
    if any(p.space != sp_ for p in all_polys):
        out.append("polynomials defined over a different variable space")
        return out
    if not all(is_finite(p) for p in all_polys):
        out.append("non-finite coefficients")
    hz = problem.horizon
    if hz.is_fixed:
        if problem.time_bound is not None:
            out.append("time_bound only applies to a free horizon")
        if hz.T is None or not hz.T > 0:
            out.append("fixed horizon requires T > 0")
        if not sp_.has_time:
            out.append("fixed horizon requires a time variable in the space")
    else:
        if hz.mode != "free":
            out.append(f"unknown horizon mode {hz.mode!r}")
        if problem.time_bound is not None and not problem.time_bound > 0:
            out.append("time_bound must be positive")
        if sp_.has_time:
            t = sp_.t_index
            if any(t in p.used_variables() for p in [*problem.f, problem.h, *problem.C_T]):
                out.append("time-dependent data in free-time mode")
    state_vars = set(sp_.x_indices)
    for label, polys in (("H", [problem.H]), ("C_I", problem.C_I), ("C_F", problem.C_F)):
        if any(p.used_variables() - state_vars for p in polys):
            out.append(f"{label} must depend on states only")
    if problem.final_mode not in ("free", "singleton", "constrained"):
        out.append(f"unknown final mode {problem.final_mode!r}")
    if problem.final_mode == "singleton":
        if problem.x_T is None or problem.x_T.shape != (sp_.n_states,):
            out.append("singleton final mode requires x_T of state dimension")
        elif len(problem.C_F) and not problem.C_F.contains(problem.state_point(problem.x_T), tol=1e-9):
            out.append("final state x_T lies outside C_F")
    init = problem.initial
    if init.kind == "unknown" and not len(problem.C_I):
        out.append("unknown initial measure requires a nonempty C_I")
    if init.kind == "explicit" and abs(init.moments_.mass - 1.0) > 1e-12:
        out.append("explicit initial moments must have mass 1")
    if init.kind == "dirac" and (init.x0 is None or init.x0.shape != (sp_.n_states,)):
        out.append("Dirac initial state has the wrong dimension")
    return out


def compactness_warnings(problem: OcpProblem) -> list[str]:
    """Variables of C_T that no single-variable constraint polynomial bounds."""
    sp_ = problem.space
    bounded = set()
    for g in problem.C_T:
        used = g.used_variables()
        if len(used) == 1:
            (i,) = used
            # a univariate constraint bounds its variable from at least one side
            bounded.add(i)
    names = sp_.names
    missing = [names[i] for i in range(sp_.dim) if i not in bounded and i != sp_.t_index]
    msgs = [f"variable {n} is not bounded by any constraint in C_T" for n in missing]
    for msg in msgs:
        log.warning(msg)
    return msgs


@dataclass(frozen=True)
class AffineMaps:
    """``x = x_center + x_scale * xs``, ``u = u_center + u_scale * us``, ``t = time_scale * ts``."""

    x_center: np.ndarray
    x_scale: np.ndarray
    u_center: np.ndarray
    u_scale: np.ndarray
    time_scale: float

    def to_scaled_state(self, x):
        return (np.asarray(x, dtype=float) - self.x_center) / self.x_scale

    def from_scaled_state(self, xs):
        return self.x_center + self.x_scale * np.asarray(xs, dtype=float)

    def to_scaled_input(self, u):
        return (np.asarray(u, dtype=float) - self.u_center) / self.u_scale

    def from_scaled_input(self, us):
        return self.u_center + self.u_scale * np.asarray(us, dtype=float)

    def inverse(self) -> AffineMaps:
        return AffineMaps(
            -self.x_center / self.x_scale, 1.0 / self.x_scale,
            -self.u_center / self.u_scale, 1.0 / self.u_scale, 1.0 / self.time_scale,
        )


def _box(box, dim, what):
    if box is None:
        return -np.ones(dim), np.ones(dim)
    lo, hi = (np.asarray(b, dtype=float).reshape(dim) for b in box)
    if np.any(hi <= lo):
        raise ValueError(f"degenerate {what} box")
    return lo, hi


def _substitution(space: VarSpace, maps: AffineMaps) -> list[Polynomial]:
    subs = []
    for i in range(space.dim):
        var = Polynomial.variable(space, i)
        if i == space.t_index:
            subs.append(var * maps.time_scale)
        elif i in space.x_indices:
            k = space.x_indices.index(i)
            subs.append(var * maps.x_scale[k] + maps.x_center[k])
        else:
            k = space.u_indices.index(i)
            subs.append(var * maps.u_scale[k] + maps.u_center[k])
    return subs


def _transform(problem: OcpProblem, maps: AffineMaps) -> OcpProblem:
    sp_ = problem.space
    subs = _substitution(sp_, maps)
    tau = maps.time_scale
    f = tuple(fi.compose(subs) * (tau / maps.x_scale[i]) for i, fi in enumerate(problem.f))
    h = problem.h.compose(subs) * tau
    H = problem.H.compose(subs)

    def tset(s):
        return SemialgebraicSet(tuple(g.compose(subs) for g in s.polys), s.scope)

    horizon = Horizon.fixed(problem.T / tau) if problem.horizon.is_fixed else problem.horizon
    init = problem.initial
    to_s = maps.to_scaled_state
    if init.kind == "dirac":
        init = InitialMeasure.dirac(to_s(init.x0))
    elif init.kind == "uniform_box":
        init = InitialMeasure.uniform_box(to_s(init.lo), to_s(init.hi))
    elif init.kind == "uniform_segment":
        init = InitialMeasure.uniform_segment(to_s(init.lo), to_s(init.hi))
    elif init.kind == "explicit":
        init = InitialMeasure.explicit(_pushforward_moments(init.moments_, maps))
    x_T = to_s(problem.x_T) if problem.x_T is not None else None
    time_bound = problem.time_bound / tau if problem.time_bound is not None else None
    return replace(problem, f=f, h=h, H=H, C_I=tset(problem.C_I), C_T=tset(problem.C_T),
                   C_F=tset(problem.C_F), horizon=horizon, initial=init, x_T=x_T, time_bound=time_bound)


def _pushforward_moments(mom: MomentVector, maps: AffineMaps) -> MomentVector:
    basis = mom.basis
    space = VarSpace(False, basis.nvars, 0)
    xs = [(Polynomial.variable(space, i) - maps.x_center[i]) / maps.x_scale[i] for i in range(basis.nvars)]
    values = []
    for alpha in basis.exponents:
        p = Polynomial.constant(space, 1.0)
        for i, e in enumerate(alpha):
            if e:
                p = p * xs[i] ** e
        values.append(mom.integrate(p))
    return MomentVector(basis, np.array(values))


def scale(problem: OcpProblem, state_box=None, input_box=None, time_scale: float = 1.0):
    """Affine change of variables mapping ``state_box`` and ``input_box`` onto ``[-1, 1]``.

    Returns the transformed problem and the :class:`AffineMaps` linking both
    coordinate systems. Costs are preserved exactly.
    """
    if not time_scale > 0:
        raise ValueError("time_scale must be positive")
    xlo, xhi = _box(state_box, problem.n, "state")
    if problem.m:
        ulo, uhi = _box(input_box, problem.m, "input")
    else:
        ulo, uhi = np.zeros(0), np.zeros(0)
    maps = AffineMaps((xlo + xhi) / 2, (xhi - xlo) / 2, (ulo + uhi) / 2, (uhi - ulo) / 2, float(time_scale))
    return _transform(problem, maps), maps


def unscale(scaled: OcpProblem, maps: AffineMaps) -> OcpProblem:
    """Map a scaled problem back to the original coordinates."""
    return _transform(scaled, maps.inverse())
