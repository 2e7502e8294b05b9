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
"""
Augmented Lagrangian solver for the equality constrained, bound constrained NLPs of the
transcription module.

The outer loop follows the classic Conn / Gould / Toint schedule: multipliers are updated when
the constraint violation drops below the current target, otherwise the penalty grows. Each
subproblem is a bound constrained minimisation of::

    L_A(z) = f(z) + lambda^T c(z) + mu / 2 |c(z)|^2

solved with L-BFGS-B (limited memory quasi-Newton with gradient projection).
"""
from __future__ import annotations

import enum
import logging
import time
import weakref
from typing import TYPE_CHECKING
try:
    from typing import Self
except ImportError:  # Python < 3.11
    from typing_extensions import Self

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy import sparse
from scipy.optimize import Bounds, minimize

from errors import InfeasibleStallError, NumericFailureError

if TYPE_CHECKING:
    from transcription import NlpProblem

logger = logging.getLogger(__name__)

FD_STEP = float(np.sqrt(np.finfo(float).eps))


class DerivativeMode(str, enum.Enum):
    FINITE_DIFFERENCE = "finite_difference"
    ANALYTIC = "analytic_dynamics"


class SolverStatus(str, enum.Enum):
    CONVERGED = "converged"
    MAX_ITERATIONS = "max_iterations"
    INFEASIBLE_STALL = "infeasible_stall"
    NUMERIC_FAILURE = "numeric_failure"


class SolverOptions(BaseModel):
    feasibility_tolerance: float = Field(default=1e-8, gt=0.0)
    optimality_tolerance: float = Field(default=1e-6, gt=0.0)
    max_outer_iterations: int = Field(default=500, ge=1)
    max_inner_iterations: int = Field(default=5000, ge=1)

    initial_penalty: float = Field(default=10.0, gt=0.0)
    penalty_growth: float = Field(default=10.0, gt=1.0)
    max_penalty: float = Field(default=1e12, gt=0.0)
    omega: float = Field(default=1.0, gt=0.0, description="initial subproblem gradient tolerance")
    eta: float = Field(default=1.0, gt=0.0, description="initial constraint violation target")
    alpha_omega: float = Field(default=1.0, ge=0.0)
    beta_omega: float = Field(default=1.0, ge=0.0)
    alpha_eta: float = Field(default=0.1, ge=0.0)
    beta_eta: float = Field(default=0.9, ge=0.0)
    memory: int = Field(default=20, ge=1, description="L-BFGS correction pairs")

    stall_iterations: int = Field(default=20, ge=1,
                                  description="outer iterations without feasibility progress before a stall")
    restarts: int = Field(default=3, ge=0)
    restart_noise: float = Field(default=1e-3, ge=0.0)
    seed: int = 0

    derivative_mode: DerivativeMode = DerivativeMode.ANALYTIC


class SolverReport(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    status: SolverStatus
    feasibility: float
    optimality: float
    objective: float = float("nan")
    iterations: int = 0
    inner_iterations: int = 0
    evaluations: int = Field(default=0, description="distinct points at which the functions were evaluated")
    restarts: int = 0
    penalty: float = 0.0
    wall_time: float = 0.0
    feasibility_tolerance: float = 1e-8
    optimality_tolerance: float = 1e-6
    accepted_feasibility: list[float] = Field(default_factory=list, exclude=True,
                                              description="constraint violation of every accepted outer iterate")
    multipliers: np.ndarray | None = Field(default=None, exclude=True)

    @model_validator(mode="after")
    def _converged_within_tolerance(self) -> Self:
        if self.status is SolverStatus.CONVERGED and (self.feasibility > self.feasibility_tolerance or
                                                      self.optimality > self.optimality_tolerance):
            raise ValueError("a converged report must satisfy both tolerances")
        return self

    @property
    def converged(self) -> bool:
        return self.status is SolverStatus.CONVERGED


#
# Jacobian
#

def color_columns(rows: np.ndarray, cols: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    """
    Greedy distance-2 coloring: two columns share a color only if they have no row in common,
    so one perturbation per color recovers all columns of that color.
    """
    pattern = sparse.csc_matrix((np.ones(rows.size, dtype=bool), (rows, cols)), shape=shape)
    adjacency = (pattern.T @ pattern).tocsr()
    colors = np.full(shape[1], -1, dtype=int)
    for j in range(shape[1]):
        neighbours = adjacency.indices[adjacency.indptr[j]:adjacency.indptr[j + 1]]
        used = set(colors[neighbours].tolist())
        color = 0
        while color in used:
            color += 1
        colors[j] = color
    return colors


class FiniteDifferenceJacobian:
    """
    Forward difference Jacobian on the fixed sparsity pattern of an NLP.

    Columns are perturbed color by color in ascending order, so the result does not
    depend on anything but ``z``.
    """

    def __init__(self, nlp: NlpProblem):
        self.nlp = nlp
        self.rows, self.cols = nlp.jacobian_structure()
        self.shape = (nlp.n_constraints, nlp.n_vars)
        self.colors = color_columns(self.rows, self.cols, self.shape)
        self.n_colors = int(self.colors.max()) + 1 if self.colors.size else 0
        self._entry_color = self.colors[self.cols]
        logger.debug(f"Jacobian pattern: {self.rows.size} nonzeros, {self.n_colors} colors")

    def values(self, z: np.ndarray, c0: np.ndarray | None = None) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        if c0 is None:
            c0 = self.nlp.constraints(z)
        step = FD_STEP * np.maximum(1.0, np.abs(z))
        diffs = np.empty((self.n_colors, self.shape[0]))
        for color in range(self.n_colors):
            perturbed = z.copy()
            columns = self.colors == color
            perturbed[columns] += step[columns]
            diffs[color] = self.nlp.constraints(perturbed) - c0
        # divide by the step that was actually taken
        actual = (z + step) - z
        return diffs[self._entry_color, self.rows] / actual[self.cols]

    def __call__(self, z: np.ndarray, c0: np.ndarray | None = None) -> sparse.csr_matrix:
        return sparse.csr_matrix((self.values(z, c0), (self.rows, self.cols)), shape=self.shape)


_fd_jacobians: weakref.WeakKeyDictionary = weakref.WeakKeyDictionary()


def _fd_jacobian(nlp: NlpProblem) -> FiniteDifferenceJacobian:
    try:
        return _fd_jacobians[nlp]
    except KeyError:
        jac = FiniteDifferenceJacobian(nlp)
        _fd_jacobians[nlp] = jac
        return jac


def constraint_jacobian(nlp: NlpProblem, z: np.ndarray,
                        mode: DerivativeMode = DerivativeMode.FINITE_DIFFERENCE) -> sparse.csr_matrix:
    """
    Sparse Jacobian of the NLP constraints.

    :raises DimensionMismatchError: if ``z`` has the wrong length.
    :raises NumericFailureError: if an entry is not finite.
    """
    nlp.unpack(z)
    if mode is DerivativeMode.ANALYTIC:
        jac = nlp.constraint_jacobian_analytic(z)
    else:
        jac = _fd_jacobian(nlp)(z)
    if not np.all(np.isfinite(jac.data)):
        raise NumericFailureError("constraint Jacobian")
    return jac


def projected_gradient_norm(z: np.ndarray, grad: np.ndarray, lower: np.ndarray, upper: np.ndarray) -> float:
    """Infinity norm of the gradient projected onto the box, zero at a bound-constrained stationary point."""
    return float(np.max(np.abs(z - np.clip(z - grad, lower, upper)))) if z.size else 0.0


#
# solver
#

class _Stalled(Exception):
    def __init__(self, report: SolverReport, z: np.ndarray):
        self.report = report
        self.z = z


class _AugmentedLagrangian:
    """Workspace of one solve. Nothing in here is shared between solves."""

    def __init__(self, nlp: NlpProblem, opts: SolverOptions):
        self.nlp = nlp
        self.opts = opts
        self.bounds = Bounds(nlp.lower, nlp.upper)
        if opts.derivative_mode is DerivativeMode.FINITE_DIFFERENCE:
            fd = _fd_jacobian(nlp)
            self.jacobian = fd
        else:
            self.jacobian = lambda z, c0=None: nlp.constraint_jacobian_analytic(z)
        self.inner_iterations = 0
        self.evaluations = 0
        self._last: tuple[np.ndarray, tuple] | None = None

    def evaluate(self, z: np.ndarray) -> tuple[float, np.ndarray, np.ndarray, sparse.csr_matrix]:
        """Objective, gradient, constraints and Jacobian at ``z``; the last point is cached."""
        if self._last is not None and np.array_equal(self._last[0], z):
            return self._last[1]
        f = self.nlp.objective(z)
        if not np.isfinite(f):
            raise NumericFailureError("objective", z=z)
        g = self.nlp.objective_gradient(z)
        c = self.nlp.constraints(z)
        if not np.all(np.isfinite(c)):
            raise NumericFailureError("constraints", z=z)
        jac = self.jacobian(z, c)
        if not np.all(np.isfinite(jac.data)):
            raise NumericFailureError("constraint Jacobian", z=z)
        self.evaluations += 1
        self._last = (np.array(z, dtype=float, copy=True), (f, g, c, jac))
        return f, g, c, jac

    def run(self, z0: np.ndarray, started: float, restart: int) -> tuple[np.ndarray, SolverReport]:
        opts = self.opts
        nlp = self.nlp
        z = np.clip(np.asarray(z0, dtype=float), nlp.lower, nlp.upper)

        multipliers = np.zeros(nlp.n_constraints)
        mu = opts.initial_penalty
        omega_k = max(opts.omega / mu ** opts.alpha_omega, opts.optimality_tolerance)
        eta_k = max(opts.eta / mu ** opts.alpha_eta, opts.feasibility_tolerance)

        f, g, c, jac = self.evaluate(z)
        feasibility = float(np.max(np.abs(c))) if c.size else 0.0
        best_feasibility = feasibility
        no_progress = 0
        accepted: list[float] = []
        estimate = multipliers + mu * c
        optimality = projected_gradient_norm(z, g + jac.T @ estimate, nlp.lower, nlp.upper)

        def report(status: SolverStatus, iterations: int) -> SolverReport:
            return SolverReport(status=status, feasibility=feasibility, optimality=optimality, objective=f,
                                iterations=iterations, inner_iterations=self.inner_iterations,
                                evaluations=self.evaluations, restarts=restart,
                                penalty=mu, wall_time=time.perf_counter() - started,
                                feasibility_tolerance=opts.feasibility_tolerance,
                                optimality_tolerance=opts.optimality_tolerance,
                                accepted_feasibility=list(accepted),
                                multipliers=estimate.copy())

        for iteration in range(1, opts.max_outer_iterations + 1):

            def lagrangian(x, lam=multipliers, penalty=mu):
                fx, gx, cx, jx = self.evaluate(x)
                weight = lam + penalty * cx
                value = fx + lam @ cx + 0.5 * penalty * (cx @ cx)
                return value, gx + jx.T @ weight

            result = minimize(lagrangian, z, jac=True, method="L-BFGS-B", bounds=self.bounds,
                              options={"maxiter": opts.max_inner_iterations, "gtol": omega_k,
                                       "ftol": 1e-16, "maxcor": opts.memory})
            self.inner_iterations += int(result.nit)

            z = np.clip(result.x, nlp.lower, nlp.upper)
            f, g, c, jac = self.evaluate(z)
            feasibility = float(np.max(np.abs(c))) if c.size else 0.0

            # first-order multiplier estimate of this subproblem; its Lagrangian gradient is the
            # projected gradient the inner solver just drove below omega_k
            estimate = multipliers + mu * c
            optimality = projected_gradient_norm(z, g + jac.T @ estimate, nlp.lower, nlp.upper)

            if feasibility < best_feasibility * (1.0 - 1e-3) or feasibility <= opts.feasibility_tolerance:
                best_feasibility = min(best_feasibility, feasibility)
                no_progress = 0
            else:
                no_progress += 1

            # an iterate is accepted (multipliers move) only if it does not increase the violation
            # of the previously accepted one; otherwise the penalty grows
            if feasibility <= eta_k and (not accepted or feasibility <= accepted[-1]):
                accepted.append(feasibility)
                multipliers = estimate
                eta_k = max(eta_k / mu ** opts.beta_eta, opts.feasibility_tolerance)
                omega_k = max(omega_k / mu ** opts.beta_omega, opts.optimality_tolerance)
                action = "accept"
            elif feasibility <= opts.feasibility_tolerance:
                # already feasible: more penalty only worsens the conditioning, tighten the subproblem
                omega_k = opts.optimality_tolerance
                action = "hold"
            else:
                mu = min(mu * opts.penalty_growth, opts.max_penalty)
                eta_k = max(opts.eta / mu ** opts.alpha_eta, opts.feasibility_tolerance)
                omega_k = max(opts.omega / mu ** opts.alpha_omega, opts.optimality_tolerance)
                action = "penalty"

            logger.debug(f"outer {iteration:4d}: f={f:.10g} feas={feasibility:.3e} opt={optimality:.3e} "
                         f"mu={mu:.1e} inner={result.nit} {action}")

            if feasibility <= opts.feasibility_tolerance and optimality <= opts.optimality_tolerance:
                return z, report(SolverStatus.CONVERGED, iteration)

            if no_progress >= opts.stall_iterations:
                raise _Stalled(report(SolverStatus.INFEASIBLE_STALL, iteration), z)

        return z, report(SolverStatus.MAX_ITERATIONS, opts.max_outer_iterations)


def solve(nlp: NlpProblem, z0: np.ndarray, opts: SolverOptions | None = None) -> tuple[np.ndarray, SolverReport]:
    """
    Solve ``nlp`` starting from ``z0`` (clipped into the bounds).

    Reaching the iteration limit is not an error; the report says ``max_iterations``.
    On a feasibility stall the start is perturbed with seeded noise and the solve retried
    up to ``opts.restarts`` times.

    :raises DimensionMismatchError: if ``z0`` has the wrong length.
    :raises NumericFailureError: on a non-finite objective, constraint or Jacobian value.
    :raises InfeasibleStallError: if every restart stalls.
    """
    opts = opts or SolverOptions()
    nlp.unpack(z0)
    z0 = np.asarray(z0, dtype=float)
    started = time.perf_counter()
    rng = np.random.default_rng(opts.seed)
    logger.info(f"Solving NLP with {nlp.n_vars} variables and {nlp.n_constraints} constraints "
                f"({opts.derivative_mode.value})")

    start = z0
    stalled: _Stalled | None = None
    for restart in range(opts.restarts + 1):
        solver = _AugmentedLagrangian(nlp, opts)
        try:
            z, report = solver.run(start, started, restart)
        except NumericFailureError as exc:
            exc.report = SolverReport(status=SolverStatus.NUMERIC_FAILURE, feasibility=float("nan"),
                                      optimality=float("nan"), restarts=restart,
                                      wall_time=time.perf_counter() - started,
                                      feasibility_tolerance=opts.feasibility_tolerance,
                                      optimality_tolerance=opts.optimality_tolerance)
            raise
        except _Stalled as exc:
            stalled = exc
            logger.info(f"Feasibility stalled at {exc.report.feasibility:.3e}; restart {restart + 1} "
                        f"of {opts.restarts}")
            noise = rng.standard_normal(z0.size) * opts.restart_noise * np.maximum(1.0, np.abs(z0))
            start = z0 + noise
            continue
        logger.info(f"NLP finished: {report.status.value}, feasibility {report.feasibility:.3e}, "
                    f"optimality {report.optimality:.3e}, {report.iterations} outer iterations, "
                    f"{report.wall_time:.2f} s")
        return z, report

    raise InfeasibleStallError(stalled.report.feasibility, opts.restarts, stalled.report, stalled.z)
