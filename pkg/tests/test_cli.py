import csv
import textwrap

import numpy as np
import pytest

from occmom.cli import (
    ProblemFileError,
    boundary_points,
    bundled_problem_path,
    load_problem,
    main,
    parse_inequality,
    problem_from_dict,
    simulate_gaps,
)
from occmom.poly import VarSpace, parse

S = VarSpace(False, 2, 1)


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


INFEASIBLE = textwrap.dedent("""
    [variables]
    states = 2
    inputs = 1
    [dynamics]
    f = ["x2", "u1"]
    [cost]
    running = "1"
    [sets.trajectory]
    constraints = ["u1^2 - 1 <= 0"]
    [sets.final]
    constraints = ["x1 - 1 >= 0", "x1 + 1 <= 0"]
    [initial_measure]
    kind = "dirac"
    x0 = [0.0, 0.0]
""")


class TestProblemFiles:
    @pytest.mark.parametrize("name", ["double_integrator", "double_integrator_synthesis", "nonlinear_regulator"])
    def test_bundled_files_load(self, name):
        pf = load_problem(name)
        assert pf.path == bundled_problem_path(name)

    def test_double_integrator_contents(self, di_problem):
        assert di_problem.final_mode == "singleton"
        np.testing.assert_array_equal(di_problem.initial.x0, [-0.5, -0.8])
        assert di_problem.h == parse("1", di_problem.space)
        assert len(di_problem.C_T) == 3

    @pytest.mark.parametrize("text,expected", [
        ("x2 + 1 >= 0", "x2 + 1"),
        ("u1 - 1 <= 0", "1 - u1"),
        ("x1^2 <= x2", "x2 - x1^2"),
    ])
    def test_inequalities(self, text, expected):
        assert parse_inequality(text, S) == parse(expected, S)

    @pytest.mark.parametrize("text", ["x1 > 0", "0 <= x1 <= 1", "x1"])
    def test_bad_inequalities(self, text):
        with pytest.raises(ProblemFileError):
            parse_inequality(text, S)

    def test_missing_section(self):
        with pytest.raises(ProblemFileError, match="missing field"):
            problem_from_dict({"variables": {"states": 1}})

    def test_bad_expression(self):
        raw = {"variables": {"states": 1}, "dynamics": {"f": ["x1 +"]},
               "initial_measure": {"kind": "dirac", "x0": [0.0]}}
        with pytest.raises(ProblemFileError, match="bad expression"):
            problem_from_dict(raw)

    def test_validation_errors_surface(self):
        raw = {"variables": {"states": 2}, "dynamics": {"f": ["x2"]},
               "initial_measure": {"kind": "dirac", "x0": [0.0, 0.0]}}
        with pytest.raises(ProblemFileError, match="dynamics arity"):
            problem_from_dict(raw)

    def test_unknown_file(self):
        with pytest.raises(ProblemFileError):
            load_problem("no_such_problem")


class TestBoundaryPoints:
    def test_square(self):
        pts = boundary_points([-1, -1], [1, 1], 16)
        assert pts.shape == (16, 2)
        assert np.all(np.isclose(np.abs(pts).max(axis=1), 1.0))
        assert len({tuple(p) for p in np.round(pts, 12)}) == 16

    def test_corners_included(self):
        pts = {tuple(p) for p in boundary_points([-1, -1], [1, 1], 8)}
        assert {(-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0)} <= pts


class TestCommands:
    def test_bound_empty_order_list(self, tmp_path, capsys):
        assert main(["bound", "--problem", "double_integrator", "--orders", "", "--out", str(tmp_path)]) == 0
        assert read_csv(tmp_path / "bound.csv") == [["r", "k", "LB", "status", "wall_time"]]

    def test_bound_table(self, tmp_path, capsys):
        code = main(["bound", "--problem", "nonlinear_regulator", "--orders", "2,4", "--out", str(tmp_path)])
        rows = read_csv(tmp_path / "bound.csv")[1:]
        assert [int(r[0]) for r in rows] == [2, 4]
        assert [int(r[1]) for r in rows] == [4, 6]
        assert float(rows[0][2]) <= float(rows[1][2]) + 1e-6
        assert code == (0 if all(r[3] == "optimal" for r in rows) else 2)

    def test_bound_infeasible(self, tmp_path, capsys):
        path = tmp_path / "bad.toml"
        path.write_text(INFEASIBLE)
        assert main(["bound", "--problem", str(path), "--order", "2", "--out", str(tmp_path)]) == 2
        assert read_csv(tmp_path / "bound.csv")[1][3] == "infeasible"

    def test_bound_is_deterministic(self, tmp_path, capsys):
        vals = []
        for run in ("a", "b"):
            main(["bound", "--problem", "double_integrator", "--order", "4", "--out", str(tmp_path / run)])
            vals.append(read_csv(tmp_path / run / "bound.csv")[1][2])
        assert vals[0] == vals[1]

    def test_valuefn(self, tmp_path, capsys):
        code = main(["valuefn", "--problem", "double_integrator", "--order", "4", "--out", str(tmp_path)])
        assert code in (0, 2)
        rows = read_csv(tmp_path / "valuefn.csv")
        assert rows[0] == ["x1", "x2", "phi", "T"]
        assert len(rows) == 42
        phi = np.array([float(r[2]) for r in rows[1:]])
        T = np.array([float(r[3]) for r in rows[1:]])
        assert np.all(phi <= T + 1e-3)
        assert (tmp_path / "phi.txt").read_text().strip()

    def test_valuefn_single_point_grid(self, tmp_path, capsys):
        text = (open(bundled_problem_path("double_integrator")).read()
                .replace("grid = [[-1.0, 1.0, 41], [-0.8, -0.8, 1]]", "grid = [[-0.5, -0.5, 1], [-0.8, -0.8, 1]]"))
        path = tmp_path / "one.toml"
        path.write_text(text)
        main(["valuefn", "--problem", str(path), "--order", "4", "--out", str(tmp_path)])
        rows = read_csv(tmp_path / "valuefn.csv")
        assert len(rows) == 2
        assert float(rows[1][3]) == pytest.approx(2.6111, abs=5e-4)

    def test_oracle(self, capsys):
        assert main(["oracle", "--point=-0.5,-0.8"]) == 0
        assert float(capsys.readouterr().out) == pytest.approx(2.6111, abs=5e-4)

    def test_oracle_needs_point(self, capsys):
        assert main(["oracle"]) == 1

    def test_certify(self, tmp_path, capsys):
        code = main(["certify", "--problem", "nonlinear_regulator", "--order", "4", "--out", str(tmp_path)])
        rows = read_csv(tmp_path / "certificate.csv")
        assert rows[0] == ["r", "bound", "status", "eigenvalues", "locally_stable"]
        assert code == (0 if np.isfinite(float(rows[1][1])) else 2)

    def test_error_exit_code(self, tmp_path, capsys):
        assert main(["bound", "--problem", str(tmp_path / "missing.toml")]) == 1
        assert "error" in capsys.readouterr().err


class TestSimulateGaps:
    def test_single_point(self, regulator_file):
        rows, trajs, _ = simulate_gaps(regulator_file, 4, points=[[0.5, 0.5]])
        (row,) = rows
        assert row["reason"] in ("target_ball", "horizon")
        assert row["UB"] == pytest.approx(trajs[0].cost)
        assert row["LB"] <= row["UB"] + 1e-6
