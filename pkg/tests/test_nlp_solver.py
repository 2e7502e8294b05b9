#  This file is part of the DeSOC toolkit.
#
#  DeSOC is free software: you can redistribute it and/or modify
#  it under the terms of the GNU General Public License as published by
#  the Free Software Foundation, either version 3 of the License, or
#  (at your option) any later version.
#
#  DeSOC is distributed in the hope that it will be useful,
#  but WITHOUT ANY WARRANTY; without even the implied warranty of
#  MERCHANTABILITY or FITNESS FOR A PARTICULAR PURPOSE.  See the
#  GNU General Public License for more details.
#
#  You should have received a copy of the GNU General Public License
#  along with DeSOC.  If not, see <http://www.gnu.org/licenses/>.
#
#  Copyright (c) 2025 by the DeSOC developers
#
import numpy as np
import pytest
from pydantic import ValidationError

from analysis import solve_desensitized
from errors import DimensionMismatchError, InfeasibleStallError, NumericFailureError
from nlp_solver import SolverOptions, SolverReport, SolverStatus, color_columns, projected_gradient_norm, solve
from problem_factory import infeasible_problem, nan_problem, orbit_raising_problem, shifted_quadratic, \
    symmetric_quadratic


def test_shifted_quadratic():
    z, report = solve(shifted_quadratic(), np.array([0.0]))
    assert report.status is SolverStatus.CONVERGED
    assert z[0] == pytest.approx(1.0, abs=1e-6)
    assert report.multipliers[0] == pytest.approx(4.0, abs=1e-4)
    assert report.feasibility <= report.feasibility_tolerance


def test_symmetric_quadratic():
    z, report = solve(symmetric_quadratic(), np.array([3.0, -1.0]))
    assert report.converged
    assert z == pytest.approx([0.5, 0.5], abs=1e-6)


def test_report_multipliers_make_the_lagrangian_stationary():
    nlp = symmetric_quadratic()
    z, report = solve(nlp, np.array([3.0, -1.0]))
    assert report.converged
    assert report.multipliers == pytest.approx([-1.0], abs=1e-5)
    grad = nlp.objective_gradient(z) + np.asarray(nlp._jacobian(z)).T @ report.multipliers
    assert projected_gradient_norm(z, grad, nlp.lower, nlp.upper) <= report.optimality_tolerance + 1e-12


def test_jacobian_is_built_once_per_point():
    nlp = shifted_quadratic()
    jacobian = nlp._jacobian
    points = []

    def counting(z):
        points.append(np.array(z, copy=True))
        return jacobian(z)

    nlp._jacobian = counting
    _, report = solve(nlp, np.array([10.0]))
    assert report.converged
    assert len(points) == report.evaluations
    assert all(not np.array_equal(a, b) for a, b in zip(points, points[1:]))


def test_bounds_are_respected():
    nlp = symmetric_quadratic()
    nlp.upper = np.array([0.2, np.inf])
    z, report = solve(nlp, np.array([0.0, 0.0]))
    assert report.converged
    assert z == pytest.approx([0.2, 0.8], abs=1e-6)


def test_deterministic():
    z1, r1 = solve(symmetric_quadratic(), np.array([3.0, -1.0]), SolverOptions(seed=7))
    z2, r2 = solve(symmetric_quadratic(), np.array([3.0, -1.0]), SolverOptions(seed=7))
    assert np.array_equal(z1, z2)
    assert r1.iterations == r2.iterations
    assert r1.objective == r2.objective


def test_accepted_feasibility_never_increases():
    _, report = solve(shifted_quadratic(), np.array([10.0]))
    assert report.accepted_feasibility
    assert np.all(np.diff(report.accepted_feasibility) <= 0.0)


def test_iteration_limit_is_a_status():
    z, report = solve(shifted_quadratic(), np.array([0.0]), SolverOptions(max_outer_iterations=1))
    assert report.status is SolverStatus.MAX_ITERATIONS
    assert report.iterations == 1
    assert not report.converged


def test_infeasible_problem_stalls():
    opts = SolverOptions(stall_iterations=5, restarts=1)
    with pytest.raises(InfeasibleStallError) as info:
        solve(infeasible_problem(), np.array([0.0]), opts)
    assert info.value.restarts == 1
    assert info.value.feasibility >= 1.0
    assert info.value.report.status is SolverStatus.INFEASIBLE_STALL
    assert info.value.z is not None


def test_nan_is_a_numeric_failure():
    with pytest.raises(NumericFailureError) as info:
        solve(nan_problem(), np.array([1.0]))
    assert info.value.where == "constraints"
    assert info.value.report.status is SolverStatus.NUMERIC_FAILURE


def test_wrong_start_length():
    with pytest.raises(DimensionMismatchError):
        solve(shifted_quadratic(), np.zeros(2))


def test_converged_report_must_meet_the_tolerances():
    with pytest.raises(ValidationError):
        SolverReport(status=SolverStatus.CONVERGED, feasibility=1.0, optimality=0.0)
    report = SolverReport(status=SolverStatus.MAX_ITERATIONS, feasibility=1.0, optimality=0.0)
    assert "multipliers" not in report.model_dump()


def test_projected_gradient_norm():
    z = np.array([0.0, 0.5])
    grad = np.array([1.0, -2.0])
    # the first component sits on its lower bound and pushes outwards
    assert projected_gradient_norm(z, grad, np.array([0.0, 0.0]), np.array([1.0, 1.0])) == pytest.approx(0.5)


def test_column_coloring_separates_rows():
    rng = np.random.default_rng(5)
    shape = (30, 40)
    dense = rng.random(shape) < 0.1
    rows, cols = np.nonzero(dense)
    colors = color_columns(rows, cols, shape)
    for color in np.unique(colors):
        members = np.flatnonzero(colors == color)
        assert np.all(dense[:, members].sum(axis=1) <= 1)
    assert colors.max() < shape[1]


@pytest.mark.slow
def test_orbit_raising_without_penalty():
    traj = solve_desensitized(orbit_raising_problem(), 10)
    assert traj.report.converged
    assert traj.max_defect < 1e-8
    assert traj.sensitive_cost == pytest.approx(1.525, abs=2e-2)
