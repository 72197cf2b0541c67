import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from occmom.sdp import (
    ConicProgram,
    PSDBlock,
    SolverError,
    SolverOptions,
    export_sdpa,
    import_solution_sdpa,
    residuals,
    solve,
    write_solution_sdpa,
)


def two_by_two() -> ConicProgram:
    """min v1 s.t. [[v1, 1], [1, v2]] >= 0, v2 = 1; optimum 1 at v1 = 1."""
    F = [np.array([[1.0, 0], [0, 0]]), np.array([[0.0, 0], [0, 1]])]
    blk = PSDBlock.from_dense(F, F0=np.array([[0.0, 1], [1, 0]]), label="X")
    return ConicProgram([1.0, 0.0], np.array([[0.0, 1.0]]), [1.0], [blk])


def scalar_blocks(c, lower_bounds, E=None, d=None) -> ConicProgram:
    """LP ``min c'v`` with ``v_i >= lo`` encoded as 1x1 blocks."""
    c = np.atleast_1d(np.asarray(c, dtype=float))
    n = c.size
    blocks = []
    for i, lo in lower_bounds:
        F = np.zeros((n, 1, 1))
        F[i, 0, 0] = 1.0
        blocks.append(PSDBlock.from_dense(F, F0=np.array([[-lo]])))
    E = np.zeros((0, n)) if E is None else E
    d = np.zeros(0) if d is None else d
    return ConicProgram(c, E, d, blocks)


class TestSolve:
    def test_two_by_two(self):
        sol = solve(two_by_two())
        assert sol.status == "optimal"
        assert sol.primal_objective == pytest.approx(1.0, abs=1e-6)
        np.testing.assert_allclose(sol.v, [1.0, 1.0], atol=1e-5)
        assert sol.gap <= 1e-7

    def test_lp_as_scalar_blocks(self):
        sol = solve(scalar_blocks([1.0], [(0, 0.0), (0, 2.0)]))
        assert sol.status == "optimal"
        assert sol.primal_objective == pytest.approx(2.0, abs=1e-6)

    def test_feasibility_problem(self):
        rng = np.random.default_rng(3)
        A = rng.normal(size=(3, 3))
        X0 = A @ A.T + np.eye(3)
        mats = []
        for i in range(3):
            for j in range(i, 3):
                M = np.zeros((3, 3))
                M[i, j] = M[j, i] = 1.0
                mats.append(M)
        v0 = np.array([X0[i, j] for i in range(3) for j in range(i, 3)])
        E = np.eye(6)[:2]
        p = ConicProgram(np.zeros(6), E, E @ v0, [PSDBlock.from_dense(mats)])
        sol = solve(p)
        assert sol.status == "optimal"
        res = residuals(p, sol)
        assert res["primal_eq"] <= 1e-8
        assert min(res["min_eig"]) >= -1e-9

    def test_infeasible(self):
        # v >= 1 and -v >= 1
        F = [np.ones((1, 1, 1)), -np.ones((1, 1, 1))]
        p = ConicProgram([0.0], np.zeros((0, 1)), [], [PSDBlock.from_dense(F[0], F0=-np.ones((1, 1))),
                                                       PSDBlock.from_dense(F[1], F0=-np.ones((1, 1)))])
        assert solve(p).status == "infeasible"

    def test_unbounded(self):
        assert solve(scalar_blocks([-1.0], [(0, 0.0)])).status == "unbounded"

    def test_no_blocks(self):
        with pytest.raises(SolverError):
            solve(ConicProgram([1.0], np.zeros((0, 1)), [], []))

    def test_redundant_equalities(self):
        p = two_by_two()
        p2 = ConicProgram(p.c, np.vstack([p.E, 2 * p.E]), [1.0, 2.0], p.blocks)
        sol = solve(p2)
        assert sol.status == "optimal"
        assert sol.primal_objective == pytest.approx(1.0, abs=1e-6)

    def test_multiplier_contract(self):
        p = two_by_two()
        sol = solve(p)
        assert p.dual_objective(sol.lam, sol.Z) == pytest.approx(sol.primal_objective, abs=1e-7)

    def test_iteration_cap(self):
        sol = solve(two_by_two(), SolverOptions(max_iter=2))
        assert sol.status == "max_iter"

    @settings(max_examples=15, deadline=None)
    @given(st.floats(0.2, 5.0), st.floats(-2.0, 2.0))
    def test_parametric_two_by_two(self, a, b):
        """min v1 s.t. [[v1, b], [b, v2]] >= 0, v2 = a; optimum b^2 / a."""
        F = [np.array([[1.0, 0], [0, 0]]), np.array([[0.0, 0], [0, 1]])]
        blk = PSDBlock.from_dense(F, F0=np.array([[0.0, b], [b, 0]]))
        sol = solve(ConicProgram([1.0, 0.0], np.array([[0.0, 1.0]]), [a], [blk]))
        assert sol.status == "optimal"
        assert sol.primal_objective == pytest.approx(b * b / a, abs=1e-6)
        assert sol.primal_objective >= sol.dual_objective - 1e-7


class TestResiduals:
    def test_optimum(self):
        p = two_by_two()
        sol = solve(p)
        res = residuals(p, sol)
        assert res["gap"] <= 1e-7
        assert min(res["min_eig_dual"]) >= -1e-9
        assert res["dual_eq"] <= 1e-7

    def test_perturbation_scales_primal_residual(self):
        p = two_by_two()
        sol = solve(p)
        base = residuals(p, sol)["primal_eq"]
        sol.v = sol.v + np.array([0.0, 1e-3])
        assert residuals(p, sol)["primal_eq"] == pytest.approx(1e-3, abs=10 * base + 1e-9)


class TestSdpa:
    def test_export_layout(self):
        text = export_sdpa(two_by_two())
        lines = [ln for ln in text.splitlines() if not ln.startswith(("*", '"'))]
        assert lines[0].split()[0] == "2"
        assert lines[1].split()[0] == "2"
        assert lines[2].split()[:2] == ["2", "-2"]

    def test_empty_block_rejected(self):
        p = two_by_two()
        p.blocks.append(PSDBlock(0, np.zeros((0, 2))))
        with pytest.raises(ValueError):
            export_sdpa(p)

    def test_round_trip(self, tmp_path):
        p = two_by_two()
        sol = solve(p)
        export_sdpa(p, tmp_path / "p.dat-s")
        write_solution_sdpa(p, sol, tmp_path / "p.out")
        back = import_solution_sdpa(tmp_path / "p.out", p)
        assert back.status == "optimal"
        assert back.primal_objective == pytest.approx(sol.primal_objective, abs=1e-6)
        assert back.dual_objective == pytest.approx(sol.dual_objective, abs=1e-6)
        np.testing.assert_allclose(back.lam, sol.lam, atol=1e-6)

    def test_offset_survives(self, tmp_path):
        p = two_by_two()
        p.offset = 3.0
        sol = solve(p)
        back = import_solution_sdpa(write_solution_sdpa(p, sol), p)
        assert back.primal_objective == pytest.approx(4.0, abs=1e-6)

    def test_malformed_solution(self):
        with pytest.raises(ValueError):
            import_solution_sdpa("phase.value = pdOPT\nxVec = {1,2,3}\n", two_by_two())
