"""Command-line front end and problem-file loader.

Problem files are TOML with sections ``[variables]``, ``[dynamics]``,
``[cost]``, ``[sets.initial|trajectory|final]``, ``[horizon]`` and
``[initial_measure]``; polynomials are strings in the expression grammar and
inequalities read ``"expr >= 0"`` or ``"expr <= 0"``. Optional sections
``[control]``, ``[valuefn]``, ``[synthesize]``, ``[simulate]`` and
``[certify]`` hold per-command settings.
"""

from __future__ import annotations

import argparse
import csv
import logging
import math
import os
import sys
import time
import warnings
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import control, sdp
from .ocp import Horizon, InitialMeasure, OcpProblem, SemialgebraicSet, validate
from .poly import ParseError, Polynomial, VarSpace, parse
from .relax import default_order, lower_bound

log = logging.getLogger(__name__)

BUNDLED = ("double_integrator", "double_integrator_synthesis", "nonlinear_regulator")


class ProblemFileError(ValueError):
    pass


@dataclass
class ProblemFile:
    problem: OcpProblem
    raw: dict
    path: str = ""

    def section(self, name: str) -> dict:
        return dict(self.raw.get(name, {}))

    @property
    def oracle(self) -> str | None:
        return self.raw.get("oracle")


@dataclass
class RunConfig:
    command: str
    problem_path: str
    orders: list[int] = field(default_factory=list)
    k: int | None = None
    out: str = "."
    seed: int = 0
    options: sdp.SolverOptions = field(default_factory=sdp.SolverOptions)
    external_solver: str | None = None
    point: list[float] | None = None


def bundled_problem_path(name: str) -> str:
    return str(resources.files("occmom") / "problems" / f"{name}.toml")


def resolve_problem_path(path: str) -> str:
    if os.path.exists(path):
        return path
    if path in BUNDLED:
        return bundled_problem_path(path)
    raise ProblemFileError(f"problem file {path!r} not found (bundled: {', '.join(BUNDLED)})")


def parse_inequality(text: str, space: VarSpace) -> Polynomial:
    """``"a >= b"`` or ``"a <= b"`` normalized to ``p >= 0``."""
    for op, sign in ((">=", 1.0), ("<=", -1.0)):
        if op in text:
            lhs, rhs = text.split(op, 1)
            if ">=" in rhs or "<=" in rhs:
                raise ProblemFileError(f"chained inequality {text!r}")
            return (parse(lhs, space) - parse(rhs, space)) * sign
    raise ProblemFileError(f"inequality {text!r} needs '>=' or '<='")


def _set(raw: dict, key: str, space: VarSpace, scope: str) -> SemialgebraicSet:
    entries = raw.get(key, [])
    return SemialgebraicSet(tuple(parse_inequality(e, space) for e in entries), scope)


def _initial_measure(raw: dict) -> InitialMeasure:
    kind = raw.get("kind", "unknown")
    if kind == "dirac":
        return InitialMeasure.dirac(raw["x0"])
    if kind == "uniform_box":
        return InitialMeasure.uniform_box(raw["lo"], raw["hi"])
    if kind == "uniform_segment":
        return InitialMeasure.uniform_segment(raw["p0"], raw["p1"])
    if kind == "unknown":
        return InitialMeasure.unknown()
    raise ProblemFileError(f"unknown initial measure kind {kind!r}")


def problem_from_dict(raw: dict) -> OcpProblem:
    try:
        var = raw["variables"]
        horizon_raw = raw.get("horizon", {"mode": "free"})
        fixed = horizon_raw.get("mode", "free") == "fixed"
        space = VarSpace(fixed, int(var["states"]), int(var.get("inputs", 0)))
        f = tuple(parse(e, space) for e in raw["dynamics"]["f"])
        cost = raw.get("cost", {})
        h = parse(str(cost.get("running", "0")), space)
        H = parse(str(cost.get("terminal", "0")), space)
        sets = raw.get("sets", {})
        C_I = _set(sets.get("initial", {}), "constraints", space, "state")
        C_T = _set(sets.get("trajectory", {}), "constraints", space, "trajectory")
        final = sets.get("final", {})
        C_F = _set(final, "constraints", space, "state")
        mode = final.get("mode", "constrained" if len(C_F) else "free")
        horizon = Horizon.fixed(float(horizon_raw["T"])) if fixed else Horizon.free()
        problem = OcpProblem(
            space, f, h, H, C_I=C_I, C_T=C_T, C_F=C_F, horizon=horizon,
            initial=_initial_measure(raw.get("initial_measure", {})), final_mode=mode,
            x_T=final.get("point"), name=raw.get("name", ""), time_bound=horizon_raw.get("time_bound"),
        )
    except KeyError as exc:
        raise ProblemFileError(f"missing field {exc}") from None
    except ParseError as exc:
        raise ProblemFileError(f"bad expression: {exc}") from None
    diags = validate(problem)
    if diags:
        raise ProblemFileError("; ".join(diags))
    return problem


def load_problem(path: str) -> ProblemFile:
    path = resolve_problem_path(path)
    with open(path, "rb") as fh:
        try:
            raw = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ProblemFileError(f"{path}: {exc}") from None
    return ProblemFile(problem_from_dict(raw), raw, path)


# ---------------------------------------------------------------------------
# helpers


def _solver(cfg: RunConfig):
    if cfg.external_solver:
        return lambda p, opts=None: sdp.solve_external(p, cfg.external_solver)
    return None


def _order(problem: OcpProblem, r: int, k: int | None = None):
    order = default_order(problem, r)
    if k is not None:
        order = replace(order, k=max(k, order.k))
    return order


def _write_csv(path: Path, header: list[str], rows) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])


def boundary_points(lo, hi, count: int) -> np.ndarray:
    """``count`` points evenly spaced along the perimeter of a 2-D box, from the lower-left corner."""
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    if lo.shape != (2,):
        raise ValueError("boundary sampling needs a 2-D box")
    w, h = hi - lo
    perim = 2 * (w + h)
    out = []
    for s in np.arange(count) * perim / count:
        if s < w:
            out.append((lo[0] + s, lo[1]))
        elif s < w + h:
            out.append((hi[0], lo[1] + s - w))
        elif s < 2 * w + h:
            out.append((hi[0] - (s - w - h), hi[1]))
        else:
            out.append((lo[0], hi[1] - (s - 2 * w - h)))
    return np.array(out)


def _grid(spec, n: int) -> np.ndarray:
    axes = [np.linspace(float(a), float(b), int(c)) for a, b, c in spec]
    if len(axes) != n:
        raise ProblemFileError(f"grid has {len(axes)} axes for {n} states")
    return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, n)


# ---------------------------------------------------------------------------
# commands


def cmd_bound(cfg: RunConfig) -> int:
    pf = load_problem(cfg.problem_path)
    problem = pf.problem
    rows = []
    failed = False
    print(f"{'r':>4} {'k':>4} {'LB':>14} {'status':>10} {'time[s]':>9}")
    for r in cfg.orders:
        order = _order(problem, r, cfg.k)
        res = lower_bound(problem, order, cfg.options, solver=_solver(cfg))
        rows.append((order.r, order.k, res.value, res.status, res.wall_time))
        print(f"{order.r:>4} {order.k:>4} {res.value:>14.6f} {res.status:>10} {res.wall_time:>9.2f}")
        failed |= res.status != "optimal"
    _write_csv(Path(cfg.out) / "bound.csv", ["r", "k", "LB", "status", "wall_time"], rows)
    return 2 if failed else 0


def cmd_valuefn(cfg: RunConfig) -> int:
    pf = load_problem(cfg.problem_path)
    problem = pf.problem
    if not problem.initial.is_known:
        print("error: valuefn needs an initial measure (dirac, uniform_box or uniform_segment)", file=sys.stderr)
        return 1
    r = cfg.orders[0] if cfg.orders else 6
    res = lower_bound(problem, _order(problem, r, cfg.k), cfg.options, solver=_solver(cfg))
    if res.certificate is None:
        print(f"error: relaxation ended with status {res.status}", file=sys.stderr)
        return 2
    vf = control.ValueFunction.from_certificate(res.certificate, problem)
    phi_state = problem.state_poly(vf.phi) if not problem.space.has_time else vf.phi
    print(f"LB = {res.value:.6f} ({res.status})")
    print(f"phi = {phi_state.to_string()}")
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "phi.txt").write_text(phi_state.to_string() + "\n")
    spec = pf.section("valuefn").get("grid")
    if spec is None:
        spec = [[-1.0, 1.0, 21]] * problem.n
    pts = _grid(spec, problem.n)
    with_oracle = pf.oracle == "double_integrator"
    header = [f"x{i + 1}" for i in range(problem.n)] + ["phi"] + (["T"] if with_oracle else [])
    rows = []
    for x in pts:
        row = [*x, vf(0.0, x)]
        if with_oracle:
            row.append(control.double_integrator_min_time(x) if x[1] >= -1 else math.nan)
        rows.append(row)
    _write_csv(out / "valuefn.csv", header, rows)
    return 0 if res.status == "optimal" else 2


def _policy(pf: ProblemFile) -> control.FeedbackPolicy:
    ctl = pf.section("control")
    strategy = ctl.get("strategy", "bang_bang")
    kwargs = {}
    if "resolution" in ctl:
        kwargs["resolution"] = int(ctl["resolution"])
    return control.FeedbackPolicy.for_problem(pf.problem, strategy, **kwargs)


def cmd_synthesize(cfg: RunConfig) -> int:
    pf = load_problem(cfg.problem_path)
    problem = pf.problem
    syn = pf.section("synthesize")
    ctl = pf.section("control")
    r = cfg.orders[0] if cfg.orders else int(ctl.get("order", 6))
    x0 = np.asarray(cfg.point if cfg.point is not None else syn.get("x0", problem.initial.x0), dtype=float)
    target = problem.x_T if problem.x_T is not None else np.zeros(problem.n)
    traj = control.receding_horizon(
        problem, x0, rho=float(syn.get("rho", 0.05)), order=_order(problem, r, cfg.k),
        stop=(target, float(syn.get("stop_radius", 0.01))), dt=float(syn.get("dt", 0.005)),
        max_steps=int(syn.get("max_steps", 100_000)), options=cfg.options, solver=_solver(cfg),
        seed=cfg.seed, policy=_policy(pf),
    )
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    traj.to_csv(out / "trajectory.csv")
    print(f"reason={traj.reason} final_time={traj.final_time:.4f} steps={traj.n_steps} "
          f"solves={traj.info['solves']} cost={traj.cost:.6f}")
    if pf.oracle == "double_integrator":
        print(f"analytic minimum time from x0: {control.double_integrator_min_time(x0):.4f}")
    return 0 if traj.reason == "target_ball" else 2


def simulate_gaps(pf: ProblemFile, r: int, k: int | None = None, options=None, solver=None,
                  points=None) -> tuple[list[dict], list[control.Trajectory], control.ValueFunction]:
    """Closed loop from a set-wise value function, with per-point lower bounds and gaps."""
    problem = pf.problem
    sim = pf.section("simulate")
    res = lower_bound(problem, _order(problem, r, k), options, solver=solver)
    if res.certificate is None:
        raise control.ControlError(f"set-wise relaxation failed with status {res.status}")
    vf = control.ValueFunction.from_certificate(res.certificate, problem)
    policy = _policy(pf)
    if points is None:
        if "points" in sim:
            points = np.asarray(sim["points"], dtype=float)
        else:
            init = problem.initial
            points = boundary_points(init.lo, init.hi, int(sim.get("boundary", 16)))
    target = problem.x_T if problem.x_T is not None else np.zeros(problem.n)
    rows, trajs = [], []
    for x0 in points:
        traj = control.simulate(problem, (vf, policy), x0, float(sim.get("dt", 0.01)),
                                float(sim.get("t_max", 30.0)),
                                stop=(target, float(sim.get("stop_radius", 1e-4))))
        point_problem = replace(problem, initial=InitialMeasure.dirac(x0))
        lb = lower_bound(point_problem, _order(point_problem, r, k), options, solver=solver)
        ub = traj.cost
        g = control.gap(ub, lb.value) if traj.reason != "diverged" else math.inf
        rows.append({"x0": np.asarray(x0), "UB": ub, "LB": lb.value, "gap": g, "reason": traj.reason,
                     "lb_status": lb.status})
        trajs.append(traj)
    return rows, trajs, vf


def cmd_simulate(cfg: RunConfig) -> int:
    pf = load_problem(cfg.problem_path)
    problem = pf.problem
    r = cfg.orders[0] if cfg.orders else int(pf.section("control").get("order", 6))
    rows, trajs, _ = simulate_gaps(pf, r, cfg.k, cfg.options, _solver(cfg))
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    header = ["id"] + [f"x0_{i + 1}" for i in range(problem.n)] + ["UB", "LB", "gap", "reason", "lb_status"]
    table = []
    for i, (row, traj) in enumerate(zip(rows, trajs)):
        traj.to_csv(out / f"trajectory_{i:02d}.csv")
        table.append([i, *row["x0"], row["UB"], row["LB"], row["gap"], row["reason"], row["lb_status"]])
        print(f"{i:>3} x0={np.array2string(row['x0'], precision=3)} UB={row['UB']:.5f} "
              f"LB={row['LB']:.5f} gap={row['gap']:.4f} {row['reason']}")
    _write_csv(out / "gaps.csv", header, table)
    worst = max(r_["gap"] for r_ in rows)
    print(f"r={r} max gap = {worst:.4f}")
    return 0 if all(r_["reason"] == "target_ball" for r_ in rows) else 2


def cmd_certify(cfg: RunConfig) -> int:
    pf = load_problem(cfg.problem_path)
    problem = pf.problem
    cert_cfg = pf.section("certify")
    space = problem.space
    region = SemialgebraicSet(tuple(parse_inequality(e, space) for e in cert_cfg.get("region", [])))
    traj_set = None
    if "trajectory_set" in cert_cfg:
        traj_set = SemialgebraicSet(tuple(parse_inequality(e, space) for e in cert_cfg["trajectory_set"]))
    policy_r = int(cert_cfg.get("policy_order", pf.section("control").get("order", 6)))
    res = lower_bound(problem, _order(problem, policy_r), cfg.options, solver=_solver(cfg))
    if res.certificate is None:
        print(f"error: policy relaxation ended with status {res.status}", file=sys.stderr)
        return 2
    vf = control.ValueFunction.from_certificate(res.certificate, problem)
    feedback = control.polynomial_feedback(vf, problem, control.quadratic_input_coefficients(problem))
    r = cfg.orders[0] if cfg.orders else int(cert_cfg.get("order", 4))
    cert = control.upper_bound_certificate(problem, feedback, region, r, trajectory_set=traj_set,
                                           options=cfg.options, solver=_solver(cfg))
    out = Path(cfg.out)
    eig = ";".join(f"{e.real:.6g}{e.imag:+.6g}j" for e in cert.eigenvalues)
    _write_csv(out / "certificate.csv", ["r", "bound", "status", "eigenvalues", "locally_stable"],
               [(r, cert.bound, cert.status, eig, cert.locally_stable)])
    print(f"upper bound on the closed-loop cost over the region: {cert.bound:.6f} ({cert.status})")
    print(f"linearization eigenvalues at the target: {eig}; locally stable: {cert.locally_stable}")
    return 0 if math.isfinite(cert.bound) else 2


def cmd_oracle(cfg: RunConfig) -> int:
    if cfg.point is None:
        print("error: oracle needs --point x1,x2", file=sys.stderr)
        return 1
    print(f"{control.double_integrator_min_time(cfg.point):.6f}")
    return 0


COMMANDS = {
    "bound": cmd_bound,
    "valuefn": cmd_valuefn,
    "synthesize": cmd_synthesize,
    "simulate": cmd_simulate,
    "certify": cmd_certify,
    "oracle": cmd_oracle,
}


def _floats(text: str) -> list[float]:
    return [float(s) for s in text.split(",") if s.strip()]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="occmom", description="Moment relaxations for polynomial optimal control")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        if name != "oracle":
            p.add_argument("--problem", required=True, help="problem file or bundled problem name")
        p.add_argument("--order", type=int, help="relaxation order r")
        p.add_argument("--orders", help="comma-separated list of orders")
        p.add_argument("-k", type=int, help="trajectory moment degree (at least the default)")
        p.add_argument("--out", default=".", help="output directory")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--tol-gap", type=float, default=1e-8)
        p.add_argument("--external-solver", help="SDPA-compatible executable")
        p.add_argument("--point", help="comma-separated state (oracle, synthesize)")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def config_from_args(args) -> RunConfig:
    orders: list[int] = []
    if args.orders is not None:
        orders = [int(s) for s in args.orders.split(",") if s.strip()]
    elif args.order is not None:
        orders = [args.order]
    elif args.command == "bound":
        orders = [6]
    return RunConfig(
        command=args.command,
        problem_path=getattr(args, "problem", "") or "",
        orders=orders,
        k=args.k,
        out=args.out,
        seed=args.seed,
        options=sdp.SolverOptions(tol_gap=args.tol_gap),
        external_solver=args.external_solver,
        point=_floats(args.point) if args.point else None,
    )


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if not args.verbose:
        warnings.simplefilter("ignore")
    cfg = config_from_args(args)
    start = time.perf_counter()
    try:
        code = COMMANDS[cfg.command](cfg)
    except (ProblemFileError, control.ControlError, sdp.SolverError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    log.info("%s finished in %.2fs", cfg.command, time.perf_counter() - start)
    return code


if __name__ == "__main__":
    sys.exit(main())
