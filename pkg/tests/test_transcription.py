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
import logging
import math

import numpy as np
import pytest

from astro import kepler_propagate, orbital_period
from dynamics import mee_drift_array
from errors import DimensionMismatchError, WindowOutsideHorizonError
from models import DesensitizationConfig, GravityModel, MeeState
from nlp_solver import DerivativeMode, constraint_jacobian
from problem_factory import orbit_raising_problem, rendezvous_problem
from transcription import (Mesh, build_mesh, build_nlp, extract_solution, initial_guess, penalty_quadrature,
                           propagate_hermite_simpson)


class TestMesh:

    def test_uniform(self):
        mesh = Mesh.uniform(0.0, 10.0, 10)
        assert mesh.segments == 10
        assert np.allclose(mesh.steps, 1.0)
        assert mesh.node_times.size == 21

    def test_far_breakpoint_is_inserted(self):
        mesh = Mesh.uniform(0.0, 10.0, 10, breakpoints=(2.3,))
        assert mesh.boundaries.size == 12
        assert mesh.has_boundary(2.3)

    def test_close_breakpoint_moves_a_boundary(self):
        mesh = Mesh.uniform(0.0, 10.0, 10, breakpoints=(2.1,))
        assert mesh.boundaries.size == 11
        assert mesh.has_boundary(2.1)
        assert not mesh.has_boundary(2.0)

    def test_two_breakpoints_near_the_same_boundary(self):
        mesh = Mesh.uniform(0.0, 10.0, 10, breakpoints=(2.1, 2.15))
        assert mesh.has_boundary(2.1)
        assert mesh.has_boundary(2.15)
        assert np.all(np.diff(mesh.boundaries) > 0.0)

    def test_end_breakpoints_are_ignored(self):
        mesh = Mesh.uniform(0.0, 10.0, 10, breakpoints=(0.0, 10.0))
        assert mesh.boundaries.size == 11

    @pytest.mark.parametrize("breakpoint", [1e-11, 10.0 - 1e-11, 2.0 + 1e-11, 2.0 - 1e-9])
    def test_breakpoint_next_to_a_boundary_is_merged(self, breakpoint):
        mesh = Mesh.uniform(0.0, 10.0, 10, breakpoints=(breakpoint,))
        assert mesh.segments == 10
        assert mesh.steps.min() > 0.99
        assert mesh.has_boundary(breakpoint)

    def test_window_edge_next_to_the_start_does_not_warn(self, caplog):
        problem = orbit_raising_problem(q_weight=1.0, t1=3.32e-11)
        with caplog.at_level(logging.WARNING):
            nlp = build_nlp(problem, build_mesh(problem, 10))
        assert "not a mesh boundary" not in caplog.text
        assert nlp.mesh.segments == 10

    def test_refine(self):
        mesh = Mesh.uniform(0.0, 1.0, 3).refine()
        assert mesh.segments == 6
        assert np.allclose(mesh.steps, 1.0 / 6.0)

    @pytest.mark.parametrize("boundaries", [[0.0], [0.0, 1.0, 1.0], [1.0, 0.0]])
    def test_invalid(self, boundaries):
        with pytest.raises(ValueError):
            Mesh(boundaries=np.asarray(boundaries))


def test_rendezvous_layout():
    problem = rendezvous_problem()
    nlp = build_nlp(problem, Mesh.uniform(problem.t0, problem.tf, 10))
    assert nlp.n_nodes == 21
    assert nlp.n_vars == 252
    assert nlp.n_constraints == 2 * 10 * 8 + 21 + 14
    assert nlp.state_index(-1, 6) == 20 * 8 + 6
    assert nlp.control_index(0, 0) == 21 * 8


def test_orbit_raising_layout():
    problem = orbit_raising_problem()
    nlp = build_nlp(problem, build_mesh(problem, 10))
    assert nlp.n_vars == 21 * 5
    assert nlp.n_constraints == 2 * 10 * 4 + 6


def test_dimension_mismatch():
    problem = orbit_raising_problem()
    nlp = build_nlp(problem, build_mesh(problem, 4))
    with pytest.raises(DimensionMismatchError):
        nlp.unpack(np.zeros(nlp.n_vars + 1))
    with pytest.raises(DimensionMismatchError):
        extract_solution(nlp, np.zeros(3))


def test_window_outside_horizon():
    problem = orbit_raising_problem(t2=4.0)
    with pytest.raises(WindowOutsideHorizonError):
        build_nlp(problem, Mesh.uniform(0.0, 3.32, 10))


def test_window_edge_off_the_mesh_warns(caplog):
    problem = orbit_raising_problem(q_weight=1.0, t1=1.0)
    with caplog.at_level(logging.WARNING):
        build_nlp(problem, Mesh.uniform(0.0, 3.32, 10))
    assert "not a mesh boundary" in caplog.text


def test_pack_unpack_extract():
    problem = rendezvous_problem()
    nlp = build_nlp(problem, build_mesh(problem, 6))
    z = initial_guess(problem, nlp.mesh)
    X, U = nlp.unpack(z)
    assert np.array_equal(nlp.pack(X, U), z)

    traj = extract_solution(nlp, z)
    assert np.array_equal(traj.augmented_states(), X)
    assert np.array_equal(traj.controls, U)
    assert traj.state_labels == ("p", "f", "g", "h", "k", "L")
    assert traj.sensitive_cost == pytest.approx(0.7)
    assert traj.objective == pytest.approx(traj.terminal_part + traj.penalty_part)
    assert np.allclose(nlp.guess_from_trajectory(traj), z)


def test_extracted_steering_has_unit_length():
    problem = rendezvous_problem()
    nlp = build_nlp(problem, build_mesh(problem, 6))
    X, U = nlp.unpack(initial_guess(problem, nlp.mesh))
    U = U.copy()
    U[:, 1:4] = [0.3, 0.9, 0.2]
    traj = extract_solution(nlp, nlp.pack(X, U))
    assert np.all(np.abs(np.linalg.norm(traj.controls[:, 1:4], axis=1) - 1.0) <= 1e-12)
    assert np.array_equal(traj.controls[:, 0], U[:, 0])
    assert traj.path_residual == pytest.approx(abs(0.3 ** 2 + 0.9 ** 2 + 0.2 ** 2 - 1.0))


def test_guess_on_a_finer_mesh():
    problem = orbit_raising_problem()
    coarse = build_nlp(problem, build_mesh(problem, 5))
    fine = build_nlp(problem, coarse.mesh.refine())
    traj = extract_solution(coarse, initial_guess(problem, coarse.mesh))
    X, _ = fine.unpack(fine.guess_from_trajectory(traj))
    assert X[0, 0] == pytest.approx(1.0)
    assert X[-1, 0] == pytest.approx(1.5)


@pytest.mark.parametrize("factory", [orbit_raising_problem, rendezvous_problem])
def test_guess_satisfies_the_boundary_conditions(factory):
    problem = factory()
    nlp = build_nlp(problem, build_mesh(problem, 8))
    z = initial_guess(problem, nlp.mesh)
    _, _, boundary = nlp.constraint_groups(nlp.constraints(z))
    assert np.max(np.abs(boundary)) < 1e-12
    assert np.all(z >= nlp.lower) and np.all(z <= nlp.upper)


def test_rendezvous_target_longitude_is_unwrapped():
    problem = rendezvous_problem(revolutions=2)
    nlp = build_nlp(problem, build_mesh(problem, 4))
    assert nlp.family.x_target[5] == pytest.approx(1.1 + 4.0 * math.pi)


class TestPenalty:

    def test_full_window_matches_simpson(self):
        cfg = DesensitizationConfig(q_weight=0.3, t1=0.0, t2=2.0)
        mesh = Mesh.uniform(0.0, 2.0, 7)
        lam = np.sin(mesh.node_times)
        expected = 0.0
        for k, h in enumerate(mesh.steps):
            expected += 0.3 * h / 6.0 * (lam[2 * k] ** 2 + 4.0 * lam[2 * k + 1] ** 2 + lam[2 * k + 2] ** 2)
        assert penalty_quadrature(mesh, cfg, lam) == pytest.approx(expected, rel=1e-10)

    def test_partial_window(self):
        cfg = DesensitizationConfig(q_weight=1.0, t1=1.0, t2=2.0)
        mesh = Mesh.uniform(0.0, 3.0, 9, breakpoints=(1.0, 2.0))
        # Simpson is exact for the quadratic lambda_T^2 = t^2
        assert penalty_quadrature(mesh, cfg, mesh.node_times) == pytest.approx(7.0 / 3.0, rel=1e-10)

    def test_wider_window_never_lowers_the_penalty(self):
        mesh = Mesh.uniform(0.0, 3.0, 12)
        lam = 1.0 + mesh.node_times
        values = [penalty_quadrature(mesh, DesensitizationConfig(q_weight=1.0, t1=0.0, t2=t2), lam)
                  for t2 in np.linspace(0.05, 3.0, 40)]
        assert np.all(np.diff(values) >= 0.0)
        # and with the edge pinned to the mesh as the transcription does it
        problem = orbit_raising_problem(q_weight=1.0)
        pinned = []
        for t2 in np.linspace(0.2, 3.32, 9):
            nlp = build_nlp(problem.with_window(t2=t2), build_mesh(problem.with_window(t2=t2), 10))
            pinned.append(penalty_quadrature(nlp.mesh, nlp.problem.desensitization, np.ones(nlp.t.size)))
        assert np.all(np.diff(pinned) > 0.0)
        assert pinned[-1] == pytest.approx(3.32, rel=1e-6)

    @pytest.mark.parametrize("factory", [orbit_raising_problem, rendezvous_problem])
    def test_zero_weight_is_the_plain_objective(self, factory):
        problem = factory(q_weight=0.0)
        nlp = build_nlp(problem, build_mesh(problem, 6))
        rng = np.random.default_rng(2)
        z = initial_guess(problem, nlp.mesh) + 0.1 * rng.standard_normal(nlp.n_vars)
        X, _ = nlp.unpack(z)
        terminal, penalty = nlp.objective_parts(z)
        assert penalty == 0.0
        assert nlp.objective(z) == -X[-1, nlp.family.sensitive_index]
        assert terminal == nlp.objective(z)

    def test_objective_gradient(self):
        problem = orbit_raising_problem(q_weight=0.5)
        nlp = build_nlp(problem, build_mesh(problem, 5))
        rng = np.random.default_rng(0)
        z = initial_guess(problem, nlp.mesh) + 0.01 * rng.standard_normal(nlp.n_vars)
        grad = nlp.objective_gradient(z)
        step = 1e-6
        for j in rng.choice(nlp.n_vars, 15, replace=False):
            e = np.zeros(nlp.n_vars)
            e[j] = step
            fd = (nlp.objective(z + e) - nlp.objective(z - e)) / (2.0 * step)
            assert grad[j] == pytest.approx(fd, abs=1e-7)


def test_sparsity_is_block_banded():
    problem = orbit_raising_problem()
    nlp = build_nlp(problem, build_mesh(problem, 6))
    pattern = nlp.sparsity().tocsr()
    nv = nlp.nx + nlp.nu
    assert pattern.nnz == 6 * 2 * nlp.nx * 3 * nv + 7
    for k in range(6):
        allowed = set()
        for node in (2 * k, 2 * k + 1, 2 * k + 2):
            allowed.update(range(node * nlp.nx, (node + 1) * nlp.nx))
            allowed.update(range(nlp.n_state_vars + node * nlp.nu, nlp.n_state_vars + (node + 1) * nlp.nu))
        for row in range(k * 2 * nlp.nx, (k + 1) * 2 * nlp.nx):
            assert set(pattern[row].indices.tolist()) <= allowed


@pytest.mark.parametrize("factory", [orbit_raising_problem, rendezvous_problem])
def test_finite_difference_and_analytic_jacobians_agree(factory):
    problem = factory()
    nlp = build_nlp(problem, build_mesh(problem, 5))
    rng = np.random.default_rng(2)
    z = nlp.clip(initial_guess(problem, nlp.mesh) + 0.01 * rng.standard_normal(nlp.n_vars))
    fd = constraint_jacobian(nlp, z, DerivativeMode.FINITE_DIFFERENCE).toarray()
    analytic = constraint_jacobian(nlp, z, DerivativeMode.ANALYTIC).toarray()
    assert np.max(np.abs(fd - analytic)) < 1e-5


def test_finite_difference_is_exact_on_linear_rows():
    problem = orbit_raising_problem()
    nlp = build_nlp(problem, build_mesh(problem, 4))
    z = initial_guess(problem, nlp.mesh)
    jac = constraint_jacobian(nlp, z).toarray()
    offset = nlp.n_defects + nlp.n_path
    for row, node, component in [(0, 0, 0), (1, 0, 1), (2, 0, 2), (3, -1, 1), (5, -1, 3)]:
        assert jac[offset + row, nlp.state_index(node, component)] == 1.0


def test_hermite_simpson_is_fourth_order():
    gravity = GravityModel(mu=1.0)
    x0 = MeeState(p=1.0, f=0.3, g=0.0, L=0.3)
    span = 0.6 * orbital_period(x0, gravity)
    exact = kepler_propagate(x0, span, gravity).L

    def rates(x, t):
        return mee_drift_array(x, 1.0)

    errors = []
    for segments in (32, 64):
        states = propagate_hermite_simpson(rates, x0.as_array(), Mesh.uniform(0.0, span, segments))
        assert np.allclose(states[-1, :5], x0.as_array()[:5])
        errors.append(abs((states[-1, 5] - exact + math.pi) % (2.0 * math.pi) - math.pi))
    assert 12.0 <= errors[0] / errors[1] <= 20.0


def test_problem_time_conversion():
    problem = rendezvous_problem().model_copy(update={"file_time_unit": 86400.0})
    assert float(problem.time_from_canonical(problem.time_to_canonical(3.0))) == pytest.approx(3.0)
    assert float(problem.time_to_canonical(1.0)) == pytest.approx(86400.0 / problem.scaling.time_unit)


def test_with_window_and_thrust():
    problem = orbit_raising_problem(q_weight=1.0)
    moved = problem.with_window(t2=2.0).with_thrust(0.15)
    assert moved.desensitization.t2 == 2.0
    assert moved.desensitization.q_weight == 1.0
    assert moved.thrust == 0.15
    assert problem.thrust == 0.1405
