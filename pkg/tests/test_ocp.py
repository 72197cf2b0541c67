from dataclasses import replace

import numpy as np
import pytest

from occmom.cli import load_problem
from occmom.ocp import (
    Horizon,
    InitialMeasure,
    OcpProblem,
    SemialgebraicSet,
    compactness_warnings,
    scale,
    unscale,
    validate,
)
from occmom.poly import VarSpace, parse
from occmom.relax import default_order, lower_bound


def polys_of(p: OcpProblem):
    return [*p.f, p.h, p.H, *p.C_I, *p.C_T, *p.C_F]


class TestValidate:
    def test_double_integrator_is_clean(self, di_problem):
        assert validate(di_problem) == []

    def test_time_in_free_horizon(self, di_problem):
        space = VarSpace(True, 2, 1)
        f = (parse("x2", space), parse("u1", space))
        p = OcpProblem(space, f, parse("1 + t", space), parse("0", space),
                       initial=InitialMeasure.dirac([0, 0]))
        assert "time-dependent data in free-time mode" in validate(p)

    def test_dynamics_arity(self, di_problem):
        p = replace(di_problem, f=di_problem.f[:1])
        assert any("dynamics arity" in d for d in validate(p))

    def test_fixed_horizon_needs_time(self, di_problem):
        p = replace(di_problem, horizon=Horizon.fixed(1.0))
        assert "fixed horizon requires a time variable in the space" in validate(p)

    def test_singleton_target_dimension(self, di_problem):
        p = replace(di_problem, x_T=np.zeros(3))
        assert "singleton final mode requires x_T of state dimension" in validate(p)

    def test_terminal_cost_on_states_only(self, di_problem):
        p = replace(di_problem, H=parse("u1^2", di_problem.space))
        assert "H must depend on states only" in validate(p)

    def test_time_bound_rules(self, di_problem):
        assert "time_bound must be positive" in validate(replace(di_problem, time_bound=-1.0))
        space = VarSpace(True, 1, 0)
        fixed = OcpProblem(space, (parse("-x1", space),), parse("x1^2", space), parse("0", space),
                           horizon=Horizon.fixed(1.0), initial=InitialMeasure.dirac([1.0]), time_bound=2.0)
        assert "time_bound only applies to a free horizon" in validate(fixed)

    def test_unknown_measure_needs_set(self, di_problem):
        p = replace(di_problem, initial=InitialMeasure.unknown())
        assert "unknown initial measure requires a nonempty C_I" in validate(p)

    def test_compactness_warning_names_unbounded_state(self, di_problem):
        msgs = compactness_warnings(di_problem)
        assert msgs == ["variable x1 is not bounded by any constraint in C_T"]


class TestScale:
    def test_identity(self, di_problem):
        scaled, _ = scale(di_problem, ([-1, -1], [1, 1]), ([-1], [1]), 1.0)
        for a, b in zip(polys_of(scaled), polys_of(di_problem)):
            assert a.allclose(b, 1e-15)
        np.testing.assert_array_equal(scaled.initial.x0, di_problem.initial.x0)

    def test_input_scaling_of_integrator(self):
        space = VarSpace(False, 1, 1)
        p = OcpProblem(space, (parse("u1", space),), parse("1", space), parse("0", space),
                       initial=InitialMeasure.dirac([0.5]))
        scaled, maps = scale(p, ([-4], [4]), ([-2], [2]))
        # x = 4 xs, u = 2 us: d xs/dt = (1/4) * 2 us
        assert scaled.f[0].allclose(parse("0.5*u1", space), 1e-15)
        assert scaled.initial.x0[0] == pytest.approx(0.125)
        np.testing.assert_allclose(maps.from_scaled_input([1.0]), [2.0])

    @pytest.mark.parametrize("boxes", [
        (([-2, -1], [2, 2]), ([-1], [1]), 1.0),
        (([-3, -5], [1, 4]), ([-2], [0.5]), 2.5),
    ])
    def test_round_trip(self, di_problem, boxes):
        scaled, maps = scale(di_problem, *boxes)
        back = unscale(scaled, maps)
        for a, b in zip(polys_of(back), polys_of(di_problem)):
            assert a.allclose(b, 1e-12)
        np.testing.assert_allclose(back.initial.x0, di_problem.initial.x0, atol=1e-12)
        np.testing.assert_allclose(back.x_T, di_problem.x_T, atol=1e-12)

    def test_degenerate_box(self, di_problem):
        with pytest.raises(ValueError):
            scale(di_problem, ([0, 0], [0, 1]))

    def test_bound_invariant(self):
        boxed = load_problem("double_integrator_synthesis").problem
        p = replace(boxed, initial=InitialMeasure.dirac([-0.5, -0.8]))
        base = lower_bound(p, default_order(p, 6))
        assert base.status == "optimal"
        for sb, tau in [(([-2, -1], [2, 2]), 1.0), (([-3, -3], [3, 3]), 1.0)]:
            q, _ = scale(p, sb, ([-1], [1]), tau)
            res = lower_bound(q, default_order(q, 6))
            assert res.value == pytest.approx(base.value, abs=1e-4)

    def test_time_scaling_preserves_value(self, regulator_file):
        p = regulator_file.problem
        base = lower_bound(p, default_order(p, 4))
        q, _ = scale(p, ([-2, -2], [2, 2]), ([-5], [5]), 2.0)
        assert q.time_bound == pytest.approx(p.time_bound / 2)
        assert lower_bound(q, default_order(q, 4)).value == pytest.approx(base.value, abs=1e-4)


class TestSets:
    def test_contains(self):
        space = VarSpace(False, 2, 0)
        s = SemialgebraicSet.from_le([parse("x1^2 + x2^2 - 1", space)])
        np.testing.assert_array_equal(s.contains(np.array([[0, 0], [1, 1]])), [True, False])

    def test_scope(self):
        with pytest.raises(ValueError):
            SemialgebraicSet((), "initial")
