"""Control synthesis from approximate value functions.

A subsolution ``phi`` returned by the relaxation is turned into a feedback by
minimizing ``d phi/dt + grad_x phi . f(t, x, u) + h(t, x, u)`` over the
admissible inputs. This module also hosts closed-loop simulation, the
receding-horizon box algorithm, the gap metric, closed-loop upper-bound
certificates and the analytic minimum-time oracle of the double integrator.
"""

from __future__ import annotations

import csv
import functools
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from . import sdp
from .momentbasis import enumerate_basis, sample_moments
from .ocp import InitialMeasure, OcpProblem, SemialgebraicSet
from .poly import Polynomial, VarSpace
from .relax import (
    BoundResult,
    DualCertificate,
    RelaxationError,
    RelaxationOrder,
    default_order,
    lower_bound,
)

log = logging.getLogger(__name__)

STRATEGIES = ("bang_bang", "first_order", "grid_search")


class ControlError(ValueError):
    pass


# ---------------------------------------------------------------------------
# value functions and policies


@dataclass(frozen=True)
class ValueFunction:
    """Polynomial ``phi`` over the problem space (inputs unused).

    ``order`` and ``initial`` record where the function came from.
    """

    phi: Polynomial
    order: RelaxationOrder | None = None
    initial: InitialMeasure | None = None

    def __post_init__(self):
        space = self.phi.space
        if self.phi.used_variables() & set(space.u_indices):
            raise ValueError("value function must not depend on inputs")

    @classmethod
    def from_certificate(cls, cert: DualCertificate, problem: OcpProblem | None = None) -> ValueFunction:
        phi = cert.phi
        if problem is not None and phi.space != problem.space:
            # the relaxation drops an unused time variable; map phi back
            src = phi.space
            index_map = [0] * src.dim
            for i in range(src.n_states):
                index_map[src.x_index(i)] = problem.space.x_index(i)
            for j in range(src.n_inputs):
                index_map[src.u_index(j)] = problem.space.u_index(j)
            if src.has_time:
                index_map[src.t_index] = problem.space.t_index
            phi = phi.embed(problem.space, index_map)
        initial = problem.initial if problem is not None else None
        return cls(phi, cert.order, initial)

    @functools.cached_property
    def grad_x(self) -> tuple[Polynomial, ...]:
        return tuple(self.phi.gradient(self.phi.space.x_indices))

    @functools.cached_property
    def d_dt(self) -> Polynomial:
        space = self.phi.space
        return self.phi.diff(space.t_index) if space.has_time else Polynomial.zero(space)

    def _point(self, t, x) -> np.ndarray:
        space = self.phi.space
        pt = np.zeros(space.dim)
        if space.has_time:
            pt[space.t_index] = t
        pt[space.x_indices] = np.asarray(x, dtype=float).ravel()
        return pt

    def __call__(self, t, x) -> float:
        return self.phi.evaluate(self._point(t, x))

    def gradient(self, t, x) -> np.ndarray:
        pt = self._point(t, x)
        return np.array([g.evaluate(pt) for g in self.grad_x])

    def time_derivative(self, t, x) -> float:
        return self.d_dt.evaluate(self._point(t, x))


@dataclass(frozen=True)
class AdmissibleRule:
    """Input restriction derived from state constraints ``g(x) >= 0``.

    On the boundary ``g = 0`` the input must keep ``dg/dt >= 0``. With a
    control step ``dt`` the rule is applied in its discrete form
    ``dg/dt >= -g/dt`` everywhere, which keeps an Euler step inside the set.
    """

    constraints: tuple[Polynomial, ...] = ()
    dt: float | None = None
    active_tol: float = 1e-9

    @classmethod
    def from_problem(cls, problem: OcpProblem, dt: float | None = None) -> AdmissibleRule:
        state_vars = set(problem.space.x_indices)
        polys = tuple(g for g in problem.C_T if g.used_variables() and g.used_variables() <= state_vars)
        return cls(polys, dt)

    def halfspaces(self, problem: OcpProblem, t, x) -> list[tuple[np.ndarray, float]]:
        """List of ``(a, b)`` meaning ``a . u + b >= 0``.

        Requires ``dg/dt`` to be affine in ``u``, which holds for input-affine
        dynamics.
        """
        out = []
        if not self.constraints or not problem.m:
            return out
        pt0 = problem.point(t, x, np.zeros(problem.m))
        for g in self.constraints:
            gval = g.evaluate(pt0)
            if self.dt is None and gval > self.active_tol:
                continue
            grad = np.array([g.diff(i).evaluate(pt0) for i in problem.space.x_indices])
            f0 = problem.dynamics(t, x, np.zeros(problem.m))
            a = np.array([grad @ _input_column(problem, t, x, j) for j in range(problem.m)])
            b = grad @ f0
            if self.dt is not None:
                b += max(gval, 0.0) / self.dt
            if np.any(a) or b < 0:
                out.append((a, float(b)))
        return out


def _input_column(problem: OcpProblem, t, x, j: int) -> np.ndarray:
    """Column ``j`` of ``df/du`` at ``(t, x)`` (exact for input-affine dynamics)."""
    pt = problem.point(t, x, np.zeros(problem.m))
    uj = problem.space.u_index(j)
    return np.array([fi.diff(uj).evaluate(pt) for fi in problem.f])


def input_box_from_constraints(problem: OcpProblem) -> tuple[np.ndarray, np.ndarray]:
    """Per-input interval implied by the univariate input constraints of ``C_T``.

    Inputs without such constraints get ``(-inf, inf)``. When the feasible set
    of a constraint has several components, the one containing 0 (or the
    widest one) is used.
    """
    lo = np.full(problem.m, -np.inf)
    hi = np.full(problem.m, np.inf)
    for j in range(problem.m):
        uj = problem.space.u_index(j)
        for g in problem.C_T:
            if g.used_variables() != {uj}:
                continue
            coefs = np.zeros(g.degree + 1)
            for a, c in g.terms.items():
                coefs[a[uj]] += c
            roots = np.roots(coefs[::-1]) if g.degree > 0 else np.array([])
            real = np.sort(roots[np.abs(roots.imag) < 1e-12].real)
            edges = np.concatenate([[-np.inf], real, [np.inf]])
            segments = []
            for a_, b_ in zip(edges[:-1], edges[1:]):
                if a_ == -np.inf and b_ == np.inf:
                    mid = 0.0
                elif a_ == -np.inf:
                    mid = b_ - 1.0
                elif b_ == np.inf:
                    mid = a_ + 1.0
                else:
                    mid = 0.5 * (a_ + b_)
                if np.polynomial.polynomial.polyval(mid, coefs) >= 0:
                    segments.append((a_, b_))
            if not segments:
                raise ControlError(f"input constraint {g} is infeasible")
            pick = next((s for s in segments if s[0] <= 0.0 <= s[1]), None)
            if pick is None:
                pick = max(segments, key=lambda s: s[1] - s[0])
            lo[j] = max(lo[j], pick[0])
            hi[j] = min(hi[j], pick[1])
        if lo[j] > hi[j]:
            raise ControlError(f"input {j} has an empty admissible interval")
    return lo, hi


@dataclass(frozen=True)
class FeedbackPolicy:
    """How the pointwise minimization over ``u`` is carried out.

    ``bang_bang`` drives ``input_index`` to an end of its admissible interval
    according to the sign of its switching function; ``first_order`` solves the
    stationarity condition of a cost quadratic in ``u`` with coefficient
    ``c_u``; ``grid_search`` scans ``resolution`` points per input.
    """

    strategy: str
    u_lo: np.ndarray
    u_hi: np.ndarray
    input_index: int = 0
    c_u: np.ndarray | None = None
    resolution: int = 101
    deadband: float = 1e-6
    rule: AdmissibleRule = field(default_factory=AdmissibleRule)

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}")
        object.__setattr__(self, "u_lo", np.atleast_1d(np.asarray(self.u_lo, dtype=float)))
        object.__setattr__(self, "u_hi", np.atleast_1d(np.asarray(self.u_hi, dtype=float)))
        if self.c_u is not None:
            c_u = np.broadcast_to(np.asarray(self.c_u, dtype=float), self.u_lo.shape).copy()
            if np.any(c_u <= 0):
                raise ValueError("quadratic input coefficient must be positive")
            object.__setattr__(self, "c_u", c_u)
        if self.strategy == "first_order" and self.c_u is None:
            raise ValueError("first_order strategy needs c_u")
        if self.resolution < 2:
            raise ValueError("grid resolution must be at least 2")

    @classmethod
    def for_problem(cls, problem: OcpProblem, strategy: str, dt: float | None = None, **kwargs) -> FeedbackPolicy:
        """Policy whose box and admissible rule come from ``problem.C_T``.

        For ``first_order`` the coefficient ``c_u`` defaults to the ``u_j^2``
        coefficients of ``h``.
        """
        lo, hi = input_box_from_constraints(problem)
        if strategy == "first_order" and "c_u" not in kwargs:
            kwargs["c_u"] = quadratic_input_coefficients(problem)
        return cls(strategy, lo, hi, rule=AdmissibleRule.from_problem(problem, dt), **kwargs)

    def with_dt(self, dt: float | None) -> FeedbackPolicy:
        return replace(self, rule=replace(self.rule, dt=dt))


def quadratic_input_coefficients(problem: OcpProblem) -> np.ndarray:
    out = np.zeros(problem.m)
    for j in range(problem.m):
        alpha = [0] * problem.space.dim
        alpha[problem.space.u_index(j)] = 2
        out[j] = problem.h.coefficient(tuple(alpha))
    return out


def admissible_interval(policy: FeedbackPolicy, problem: OcpProblem, t, x, j: int, u: np.ndarray):
    """Interval for input ``j`` with the other inputs fixed at ``u``."""
    lo, hi = float(policy.u_lo[j]), float(policy.u_hi[j])
    for a, b in policy.rule.halfspaces(problem, t, x):
        rest = b + a @ u - a[j] * u[j]
        if a[j] > 0:
            lo = max(lo, -rest / a[j])
        elif a[j] < 0:
            hi = min(hi, -rest / a[j])
        elif rest < 0:
            lo, hi = 1.0, 0.0
    return lo, hi


def hamiltonian(vf: ValueFunction, problem: OcpProblem, t, x, u) -> float:
    """The pointwise integrand ``d phi/dt + grad_x phi . f + h``."""
    fval = problem.dynamics(t, x, u)
    return vf.time_derivative(t, x) + vf.gradient(t, x) @ fval + problem.h.evaluate(problem.point(t, x, u))


def extract_control(vf: ValueFunction, problem: OcpProblem, t, x, policy: FeedbackPolicy,
                    u_prev=None) -> np.ndarray:
    """Minimize the integrand over the admissible inputs at ``(t, x)``."""
    m = problem.m
    if m == 0:
        return np.zeros(0)
    x = np.asarray(x, dtype=float)
    u = np.zeros(m) if u_prev is None else np.array(u_prev, dtype=float)
    if policy.strategy == "grid_search":
        return _grid_search(vf, problem, t, x, policy)
    grad = vf.gradient(t, x)
    if policy.strategy == "bang_bang":
        j = policy.input_index
        others = [i for i in range(m) if i != j]
        u[others] = 0.0
        for i in others:
            lo, hi = admissible_interval(policy, problem, t, x, i, u)
            u[i] = np.clip(0.0, lo, hi)
        lo, hi = admissible_interval(policy, problem, t, x, j, u)
        if lo > hi:
            raise ControlError(f"empty admissible set at x={x}")
        s = grad @ _input_column(problem, t, x, j)
        if abs(s) >= policy.deadband:
            if not (np.isfinite(lo) and np.isfinite(hi)):
                raise ControlError("bang-bang control needs a bounded input interval")
            u[j] = lo if s > 0 else hi
        else:
            u[j] = np.clip(u[j], lo, hi)
        return u
    # first order: stationarity of c_u u^2 + s u
    for j in range(m):
        s = grad @ _input_column(problem, t, x, j)
        u[j] = -s / (2.0 * policy.c_u[j])
    for j in range(m):
        lo, hi = admissible_interval(policy, problem, t, x, j, u)
        if lo > hi:
            raise ControlError(f"empty admissible set at x={x}")
        u[j] = np.clip(u[j], lo, hi)
    return u


def _grid_search(vf: ValueFunction, problem: OcpProblem, t, x, policy: FeedbackPolicy) -> np.ndarray:
    if not (np.all(np.isfinite(policy.u_lo)) and np.all(np.isfinite(policy.u_hi))):
        raise ControlError("grid search needs a bounded input box")
    axes = [np.linspace(lo, hi, policy.resolution) for lo, hi in zip(policy.u_lo, policy.u_hi)]
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, problem.m)
    ok = np.ones(len(grid), dtype=bool)
    for a, b in policy.rule.halfspaces(problem, t, x):
        ok &= grid @ a + b >= -1e-12
    grid = grid[ok]
    if not len(grid):
        raise ControlError(f"empty admissible set at x={x}")
    values = np.array([hamiltonian(vf, problem, t, x, u) for u in grid])
    best = values.min()
    ties = np.flatnonzero(values <= best + 1e-12 * max(1.0, abs(best)))
    pick = ties[np.argmin(np.linalg.norm(grid[ties], axis=1))]
    return grid[pick].copy()


# ---------------------------------------------------------------------------
# simulation

REASONS = ("target_ball", "horizon", "left_box", "diverged")


@dataclass
class Trajectory:
    """Samples ``t[i], x[i]``; ``u[i]`` is applied on ``[t[i], t[i+1])``.

    ``running_cost[i]`` is the integral of ``h`` up to ``t[i]``. The last row
    of ``u`` repeats the final applied input (zeros if none was applied).
    """

    t: np.ndarray
    x: np.ndarray
    u: np.ndarray
    running_cost: np.ndarray
    reason: str
    terminal_cost: float = 0.0
    info: dict = field(default_factory=dict)

    @property
    def n_steps(self) -> int:
        return len(self.t) - 1

    @property
    def final_time(self) -> float:
        return float(self.t[-1] - self.t[0])

    @property
    def cost(self) -> float:
        return float(self.running_cost[-1]) + self.terminal_cost

    @property
    def controls(self) -> np.ndarray:
        """The inputs actually applied, one per step."""
        return self.u[:-1]

    def recompute_cost(self, problem: OcpProblem) -> float:
        """Re-integrate ``h`` step by step from the stored samples and inputs."""
        total = 0.0
        for i in range(self.n_steps):
            dt = self.t[i + 1] - self.t[i]
            _, dc = _rk4_step(problem, self.t[i], self.x[i], self.u[i], dt)
            total += dc
        return total + self.terminal_cost

    def to_csv(self, path) -> None:
        n = self.x.shape[1]
        m = self.u.shape[1]
        header = ["t"] + [f"x{i + 1}" for i in range(n)] + [f"u{j + 1}" for j in range(m)] + ["running_cost"]
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            for i in range(len(self.t)):
                writer.writerow([repr(float(v)) for v in
                                 (self.t[i], *self.x[i], *self.u[i], self.running_cost[i])])

    @classmethod
    def concatenate(cls, parts: Sequence[Trajectory], reason: str, terminal_cost: float = 0.0) -> Trajectory:
        t, x, u, c = [parts[0].t[:1]], [parts[0].x[:1]], [], [parts[0].running_cost[:1]]
        offset = 0.0
        for p in parts:
            if p.n_steps:
                u.append(p.u[:-1])
                t.append(p.t[1:])
                x.append(p.x[1:])
                c.append(p.running_cost[1:] - p.running_cost[0] + offset)
                offset = c[-1][-1]
        m = parts[0].u.shape[1]
        uu = np.vstack(u) if u else np.zeros((0, m))
        last = uu[-1:] if len(uu) else np.zeros((1, m))
        return cls(np.concatenate(t), np.vstack(x), np.vstack([uu, last]), np.concatenate(c), reason, terminal_cost)


def _rk4_step(problem: OcpProblem, t: float, x: np.ndarray, u: np.ndarray, dt: float):
    """One RK4 step of the state augmented with the running cost (zero-order hold on ``u``)."""

    def rhs(tt, xx):
        pt = problem.point(tt, xx, u)
        return np.array([fi.evaluate(pt) for fi in problem.f]), problem.h.evaluate(pt)

    k1, c1 = rhs(t, x)
    k2, c2 = rhs(t + dt / 2, x + dt / 2 * k1)
    k3, c3 = rhs(t + dt / 2, x + dt / 2 * k2)
    k4, c4 = rhs(t + dt, x + dt * k3)
    return x + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4), dt / 6 * (c1 + 2 * c2 + 2 * c3 + c4)


Controller = Callable[[float, np.ndarray, np.ndarray], np.ndarray]


def make_controller(vf: ValueFunction, problem: OcpProblem, policy: FeedbackPolicy) -> Controller:
    def controller(t, x, u_prev):
        return extract_control(vf, problem, t, x, policy, u_prev)
    return controller


def simulate(problem: OcpProblem, controller, x0, dt: float, t_max: float,
             stop: tuple | None = None, bound: float = 1e6, t0: float = 0.0,
             exit_when: Callable[[np.ndarray], bool] | None = None,
             u_init=None) -> Trajectory:
    """Closed-loop RK4 simulation with inputs held over each step.

    ``controller`` is either a callable ``(t, x, u_prev) -> u`` or a
    ``(ValueFunction, FeedbackPolicy)`` pair. ``stop = (x_target, radius)``
    ends the run inside the target ball; ``exit_when(x)`` returning True ends
    it with reason ``left_box``.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    if isinstance(controller, tuple):
        controller = make_controller(controller[0], problem, controller[1])
    x = np.asarray(x0, dtype=float).copy()
    if x.shape != (problem.n,):
        raise ValueError(f"initial state must have {problem.n} entries")
    m = problem.m
    u_prev = np.zeros(m) if u_init is None else np.asarray(u_init, dtype=float)
    ts, xs, us, cs = [t0], [x.copy()], [], [0.0]
    target = None if stop is None else (np.asarray(stop[0], dtype=float), float(stop[1]))
    n_max = int(math.ceil(t_max / dt - 1e-9))
    reason = "horizon"
    t = t0
    if target is not None and np.linalg.norm(x - target[0]) <= target[1]:
        reason = "target_ball"
        n_max = 0
    for i in range(n_max):
        u = np.asarray(controller(t, x, u_prev), dtype=float).reshape(m)
        x, dc = _rk4_step(problem, t, x, u, dt)
        t = t0 + (i + 1) * dt
        ts.append(t)
        xs.append(x.copy())
        us.append(u)
        cs.append(cs[-1] + dc)
        u_prev = u
        if not np.all(np.isfinite(x)) or np.linalg.norm(x) > bound:
            reason = "diverged"
            break
        if target is not None and np.linalg.norm(x - target[0]) <= target[1]:
            reason = "target_ball"
            break
        if exit_when is not None and exit_when(x):
            reason = "left_box"
            break
    uu = np.array(us, dtype=float).reshape(len(us), m)
    last = uu[-1:] if len(uu) else u_prev.reshape(1, m)
    xs_arr = np.array(xs)
    terminal = problem.H.evaluate(problem.point(t, xs_arr[-1], np.zeros(m)))
    return Trajectory(np.array(ts), xs_arr, np.vstack([uu, last]), np.array(cs), reason, terminal)


# ---------------------------------------------------------------------------
# receding horizon


def _linear_state_bounds(problem: OcpProblem):
    """Split state-only constraints into axis-aligned linear bounds and the rest."""
    lo = np.full(problem.n, -np.inf)
    hi = np.full(problem.n, np.inf)
    others = []
    state_vars = set(problem.space.x_indices)
    for g in problem.C_T:
        used = g.used_variables()
        if not used or not used <= state_vars:
            continue
        if len(used) == 1 and g.degree == 1:
            (v,) = used
            i = problem.space.x_indices.index(v)
            alpha = [0] * problem.space.dim
            alpha[v] = 1
            a = g.coefficient(tuple(alpha))
            b = g.coefficient((0,) * problem.space.dim)
            if a > 0:
                lo[i] = max(lo[i], -b / a)
            else:
                hi[i] = min(hi[i], -b / a)
        else:
            others.append(g)
    return lo, hi, others


def box_initial_measure(problem: OcpProblem, center, rho: float, r: int, seed: int = 0,
                        n_samples: int = 100_000) -> InitialMeasure:
    """Uniform probability measure on ``{|x - center|_inf <= rho}`` intersected with the state constraints."""
    center = np.asarray(center, dtype=float)
    lo, hi = center - rho, center + rho
    blo, bhi, others = _linear_state_bounds(problem)
    lo, hi = np.maximum(lo, blo), np.minimum(hi, bhi)
    if np.any(hi <= lo):
        raise ControlError("box around the state does not meet the feasible set")
    if not others:
        return InitialMeasure.uniform_box(lo, hi)
    rng = np.random.default_rng(seed)
    pts = rng.uniform(lo, hi, size=(n_samples, problem.n))
    full = np.zeros((n_samples, problem.space.dim))
    full[:, problem.space.x_indices] = pts
    keep = SemialgebraicSet(tuple(others)).contains(full)
    if not keep.any():
        raise ControlError("no feasible samples in the box around the state")
    return InitialMeasure.explicit(sample_moments(pts[keep], enumerate_basis(problem.n, r)))


def receding_horizon(problem: OcpProblem, x0, rho: float = 0.05, order: RelaxationOrder | int | None = None,
                     stop: tuple | None = None, dt: float = 0.005, max_steps: int = 100_000,
                     strategy: str = "bang_bang", options: sdp.SolverOptions | None = None,
                     solver=None, seed: int = 0, policy: FeedbackPolicy | None = None) -> Trajectory:
    """Re-solve the relaxation on a small box around the state whenever the state leaves it.

    ``stop`` defaults to a ball of radius 0.01 around ``problem.x_T`` (or the
    origin). The returned trajectory's ``info`` records the number of solves.
    """
    if not rho > 0:
        raise ValueError("rho must be positive")
    x = np.asarray(x0, dtype=float).copy()
    if stop is None:
        stop = (problem.x_T if problem.x_T is not None else np.zeros(problem.n), 0.01)
    if isinstance(order, int):
        order = default_order(problem, order)
    order = order or default_order(problem, 6)
    policy = (policy or FeedbackPolicy.for_problem(problem, strategy)).with_dt(dt)
    parts: list[Trajectory] = []
    solves = 0
    steps = 0
    t = 0.0
    u_prev = np.zeros(problem.m)
    statuses = []
    reason = "horizon"
    target = (np.asarray(stop[0], dtype=float), float(stop[1]))
    if np.linalg.norm(x - target[0]) <= target[1]:
        reason = "target_ball"
    while reason != "target_ball":
        if steps >= max_steps:
            reason = "horizon"
            break
        center = x.copy()
        try:
            init = box_initial_measure(problem, center, rho, order.r, seed=seed + solves)
            res = lower_bound(replace(problem, initial=init), order, options, solver=solver)
        except (RelaxationError, ControlError, sdp.SolverError) as exc:
            log.warning("relaxation failed at x=%s: %s", center, exc)
            reason = "diverged"
            break
        solves += 1
        statuses.append(res.status)
        if res.certificate is None:
            reason = "diverged"
            break
        vf = ValueFunction.from_certificate(res.certificate, problem)
        part = simulate(problem, (vf, policy), x, dt, (max_steps - steps) * dt, stop=target, t0=t,
                        exit_when=lambda xx, c=center: bool(np.max(np.abs(xx - c)) > rho), u_init=u_prev)
        parts.append(part)
        steps += part.n_steps
        x, t = part.x[-1].copy(), float(part.t[-1])
        u_prev = part.u[-1].copy()
        if part.reason in ("target_ball", "diverged"):
            reason = part.reason
            break
    if not parts:
        m = problem.m
        traj = Trajectory(np.array([t]), x[None, :], np.zeros((1, m)), np.zeros(1), reason,
                          problem.H.evaluate(problem.point(t, x, np.zeros(m))))
    else:
        traj = Trajectory.concatenate(parts, reason, parts[-1].terminal_cost)
    traj.info.update(solves=solves, statuses=statuses)
    return traj


# ---------------------------------------------------------------------------
# performance metrics and certificates


def gap(UB: float, LB: float) -> float:
    """Normalized distance ``2 (UB - LB) / (UB + LB)``."""
    den = UB + LB
    if not den > 0:
        raise ValueError("gap needs UB + LB > 0")
    return 2.0 * (UB - LB) / den


def polynomial_feedback(vf: ValueFunction, problem: OcpProblem, c_u) -> tuple[Polynomial, ...]:
    """Unclipped first-order feedback ``u_j = -(1/(2 c_u)) grad_x phi . df/du_j`` as polynomials in ``x``.

    Requires ``df/du`` to be independent of ``u`` and the result to depend on
    states only.
    """
    c_u = np.broadcast_to(np.asarray(c_u, dtype=float), (problem.m,))
    space = problem.space
    out = []
    for j in range(problem.m):
        uj = space.u_index(j)
        col = [fi.diff(uj) for fi in problem.f]
        if any(c.used_variables() & set(space.u_indices) for c in col):
            raise ControlError("dynamics are not affine in the inputs")
        s = Polynomial.zero(space)
        for g, c in zip(vf.grad_x, col):
            s = s + g * c
        if s.used_variables() - set(space.x_indices):
            raise ControlError("feedback depends on time")
        out.append(s * (-1.0 / (2.0 * c_u[j])))
    return tuple(out)


@dataclass
class CertificateResult:
    bound: float
    status: str
    eigenvalues: np.ndarray
    locally_stable: bool
    closed_loop: OcpProblem
    result: BoundResult | None = None


def closed_loop_problem(problem: OcpProblem, feedback: Sequence[Polynomial], region: SemialgebraicSet,
                        integrand: Polynomial | None = None, time_bound: float | None = None,
                        trajectory_set: SemialgebraicSet | None = None) -> OcpProblem:
    """Autonomous system ``xdot = f(x, u(x))`` with unknown initial measure on ``region``.

    The integrand defaults to ``sum x_i^2``. The trajectory set defaults to the
    state-only constraints of ``problem``; it must not contain invariant sets
    other than the target (a spurious equilibrium with positive cost makes the
    maximization unbounded).
    """
    if problem.space.has_time and problem.horizon.is_fixed:
        raise ControlError("closed-loop certificate needs a free horizon")
    space = problem.space
    sspace = VarSpace(False, problem.n, 0)
    subs = [Polynomial.variable(sspace, i) for i in range(problem.n)]
    u_subs = [problem.state_poly(u) for u in feedback]
    full_subs = []
    for v in range(space.dim):
        if v == space.t_index:
            full_subs.append(Polynomial.zero(sspace))
        elif v in space.x_indices:
            full_subs.append(subs[space.x_indices.index(v)])
        else:
            full_subs.append(u_subs[space.u_indices.index(v)])
    f = tuple(fi.compose(full_subs) for fi in problem.f)
    if integrand is None:
        integrand = Polynomial.zero(sspace)
        for s in subs:
            integrand = integrand + s * s
    state_vars = set(space.x_indices)

    def to_state(g: Polynomial) -> Polynomial:
        return g if g.space == sspace else problem.state_poly(g)

    if trajectory_set is None:
        keep = tuple(problem.state_poly(g) for g in problem.C_T
                     if g.used_variables() <= state_vars and g.used_variables())
    else:
        keep = tuple(to_state(g) for g in trajectory_set.polys)
    region_polys = tuple(to_state(g) for g in region.polys)
    return OcpProblem(sspace, f, integrand, Polynomial.zero(sspace), C_I=SemialgebraicSet(region_polys),
                      C_T=SemialgebraicSet(keep, "trajectory"), initial=InitialMeasure.unknown(),
                      final_mode="free", name=f"{problem.name} closed loop".strip(), time_bound=time_bound)


def linearization_eigenvalues(f: Sequence[Polynomial], x_eq) -> np.ndarray:
    space = f[0].space
    pt = np.zeros(space.dim)
    pt[space.x_indices] = x_eq
    J = np.array([[fi.diff(v).evaluate(pt) for v in space.x_indices] for fi in f])
    return np.linalg.eigvals(J)


def upper_bound_certificate(problem: OcpProblem, feedback: Sequence[Polynomial], region: SemialgebraicSet,
                            order: RelaxationOrder | int = 4, x_eq=None, integrand: Polynomial | None = None,
                            time_bound: float | None = None, trajectory_set: SemialgebraicSet | None = None,
                            options: sdp.SolverOptions | None = None, solver=None) -> CertificateResult:
    """Maximize the closed-loop cost over all initial states in ``region``.

    The relaxation optimum over-approximates the worst-case cost. The
    linearization eigenvalues at ``x_eq`` are reported alongside; combining
    both into an attraction argument is left to the caller.
    """
    if not len(region):
        raise ControlError("region must be described by at least one constraint")
    cl = closed_loop_problem(problem, feedback, region, integrand, time_bound, trajectory_set)
    if isinstance(order, int):
        order = default_order(cl, order)
    x_eq = np.zeros(problem.n) if x_eq is None else np.asarray(x_eq, dtype=float)
    eig = linearization_eigenvalues(cl.f, x_eq)
    res = lower_bound(cl, order, options, maximize=True, solver=solver)
    if res.status == "infeasible":
        raise ControlError("closed-loop relaxation is infeasible (empty region?)")
    bound = res.value if res.status not in ("unbounded",) else math.inf
    return CertificateResult(bound, res.status, eig, bool(np.all(eig.real < 0)), cl, res)


# ---------------------------------------------------------------------------
# analytic oracle


def double_integrator_min_time(x) -> float:
    """Minimum time to the origin for ``x1' = x2, x2' = u``, ``|u| <= 1``, ``x2 >= -1``."""
    x1, x2 = (float(v) for v in np.asarray(x, dtype=float).ravel())
    if x2 < -1:
        raise ValueError("formula valid only for x2 >= -1")
    if x1 >= 1 - x2 ** 2 / 2:
        return x2 ** 2 / 2 + x1 + x2 + 1
    # clamp: when x2**2 underflows the radicand loses the term that outweighs x2
    if x1 >= -x2 ** 2 / 2 * np.sign(x2):
        return max(2 * math.sqrt(max(x2 ** 2 / 2 + x1, 0.0)) + x2, 0.0)
    return max(2 * math.sqrt(max(x2 ** 2 / 2 - x1, 0.0)) - x2, 0.0)
