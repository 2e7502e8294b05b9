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
Thrust dispersion experiments on top of the transcription and the solver:
desensitized solves, re-solved or re-flown thrust perturbations, sweeps over the
end of the desensitization window and an indirect shooting reference for the
orbit-raising problem.
"""
from __future__ import annotations

import enum
import logging
import math
from concurrent.futures import ProcessPoolExecutor
try:
    from typing import Self
except ImportError:  # Python < 3.11
    from typing_extensions import Self

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from scipy.integrate import solve_ivp
from scipy.optimize import root

from errors import DesocError, ShootingNonConvergenceError
from models import GravityModel, OrbitRaisingModel, PolarState
from nlp_solver import SolverOptions, SolverReport, solve
from transcription import (DiscreteTrajectory, Mesh, ProblemDefinition, ProblemFamily, build_mesh, build_nlp,
                           extract_solution, family_transcription, initial_guess)

logger = logging.getLogger(__name__)

DEFAULT_SEGMENTS = 40


class PerturbationMode(str, enum.Enum):
    RESOLVE = "resolve"
    """optimise the desensitized problem again at the perturbed thrust"""

    REFLY = "refly"
    """fly the nominal control history open loop at the perturbed thrust"""


class PerturbationSpec(BaseModel):
    """
    Thrust values to test, either absolute (in the problem's thrust unit) or as
    relative deviations from the nominal thrust. ``relative=[0.05]`` tests +5 % and -5 %.
    """
    absolute: list[float] = Field(default_factory=list)
    relative: list[float] = Field(default_factory=list)
    mode: PerturbationMode = PerturbationMode.RESOLVE

    @field_validator("absolute")
    @classmethod
    def _positive(cls, values: list[float]) -> list[float]:
        if any(v <= 0.0 for v in values):
            raise ValueError("perturbed thrust values must be positive")
        return values

    @field_validator("relative")
    @classmethod
    def _fractions(cls, values: list[float]) -> list[float]:
        if any(not 0.0 < v < 1.0 for v in values):
            raise ValueError("relative thrust perturbations must be between 0 and 1 (exclusive)")
        return values

    @model_validator(mode="after")
    def _not_empty(self) -> Self:
        if not self.absolute and not self.relative:
            raise ValueError("nothing to disperse: give absolute or relative thrust perturbations")
        return self

    def thrust_values(self, nominal: float) -> list[float]:
        values = list(self.absolute)
        for fraction in self.relative:
            values += [nominal * (1.0 + fraction), nominal * (1.0 - fraction)]
        return values


class DispersionRun(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    thrust: float
    sensitive_cost: float = float("nan")
    d: float | None = None
    status: str
    terminal_miss: float | None = Field(default=None, description="refly only, max terminal constraint violation")
    report: SolverReport | None = None
    message: str = ""

    @property
    def ok(self) -> bool:
        return self.d is not None


class DispersionReport(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    mode: PerturbationMode
    nominal_thrust: float
    nominal_cost: float
    nominal_status: str
    nominal_report: SolverReport | None = None
    runs: list[DispersionRun] = Field(default_factory=list)

    @model_validator(mode="after")
    def _nonnegative_dispersion(self) -> Self:
        if any(run.d is not None and run.d < 0.0 for run in self.runs):
            raise ValueError("dispersions are absolute differences and cannot be negative")
        return self

    @property
    def d_values(self) -> list[float | None]:
        return [run.d for run in self.runs]


class SweepPoint(BaseModel):
    t2: float
    status: str
    report: DispersionReport | None = None
    message: str = ""


class SweepResult(BaseModel):
    mode: str = Field(description="'chained' (warm started along the grid) or 'independent'")
    points: list[SweepPoint]

    @field_validator("points")
    @classmethod
    def _increasing(cls, points: list[SweepPoint]) -> list[SweepPoint]:
        t2 = [p.t2 for p in points]
        if any(b <= a for a, b in zip(t2[:-1], t2[1:])):
            raise ValueError("the t2 grid must be strictly increasing")
        return points

    @property
    def grid(self) -> list[float]:
        return [p.t2 for p in self.points]


def _mesh_for(problem: ProblemDefinition, mesh: Mesh | int | None) -> Mesh:
    if isinstance(mesh, Mesh):
        return mesh
    return build_mesh(problem, mesh or DEFAULT_SEGMENTS)


def solve_desensitized(problem: ProblemDefinition, mesh: Mesh | int | None = None,
                       opts: SolverOptions | None = None, z0: np.ndarray | None = None) -> DiscreteTrajectory:
    """
    Transcribe and solve the time-triggered desensitized problem.

    ``mesh`` may be a ready mesh or a segment count; in the latter case the window
    edges become segment boundaries. Without ``z0`` the default initial guess is used.
    A solve that hits the iteration limit is returned with that status in its report.

    :raises SolverError: for numeric failures and feasibility stalls.
    """
    mesh = _mesh_for(problem, mesh)
    nlp = build_nlp(problem, mesh)
    if z0 is None:
        z0 = initial_guess(problem, mesh)
    z, report = solve(nlp, z0, opts)
    trajectory = extract_solution(nlp, z, report)
    if not report.converged:
        logger.warning(f"'{problem.name}' finished with status {report.status.value}")
    logger.info(f"'{problem.name}': J={trajectory.objective:.10g} (terminal {trajectory.terminal_part:.10g}, "
                f"penalty {trajectory.penalty_part:.3e}), sensitive cost {trajectory.sensitive_cost:.10g}")
    return trajectory


#
# open loop replay
#

REFLY_SUBSTEPS = 8
"""RK4 steps per mesh segment in the open loop replay"""


def _control_interpolant(family, lower: np.ndarray, upper: np.ndarray):
    """Quadratic through the start, midpoint and end controls of a segment, as the collocation samples it."""

    def control(ua: np.ndarray, um: np.ndarray, ue: np.ndarray, s: float) -> np.ndarray:
        u = 2.0 * (s - 0.5) * (s - 1.0) * ua - 4.0 * s * (s - 1.0) * um + 2.0 * s * (s - 0.5) * ue
        return family.normalize_controls(np.clip(u, lower, upper)[None, :])[0]

    return control


def refly(problem: ProblemDefinition, trajectory: DiscreteTrajectory,
          substeps: int = REFLY_SUBSTEPS) -> tuple[float, float]:
    """
    Fly the control history of ``trajectory`` open loop under the dynamics of ``problem``
    with fixed step RK4, ``substeps`` steps per mesh segment. Inside a segment the control
    follows the quadratic through its start, midpoint and end samples; steering is kept
    at unit length and throttle inside its bounds.

    :returns: (sensitive cost, max violation of the terminal conditions)
    """
    if substeps < 1:
        raise ValueError("substeps must be >= 1")
    family = family_transcription(problem)
    _, _, lower, upper = family.bounds()
    control = _control_interpolant(family, lower, upper)
    t = trajectory.times
    U = trajectory.controls
    x = trajectory.augmented_states()[0].copy()

    def rate(x_, u_, t_):
        return family.rates(x_[None, :], u_[None, :], np.array([t_]))[0]

    for k in range(0, t.size - 1, 2):
        ua, um, ue = U[k], U[k + 1], U[k + 2]
        h = (t[k + 2] - t[k]) / substeps
        for j in range(substeps):
            s = j / substeps
            ds = 1.0 / substeps
            tj = t[k] + j * h
            u0 = control(ua, um, ue, s)
            u1 = control(ua, um, ue, s + 0.5 * ds)
            u2 = control(ua, um, ue, s + ds)
            k1 = rate(x, u0, tj)
            k2 = rate(x + 0.5 * h * k1, u1, tj + 0.5 * h)
            k3 = rate(x + 0.5 * h * k2, u1, tj + 0.5 * h)
            k4 = rate(x + h * k3, u2, tj + h)
            x = x + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)

    final = x
    X = np.asarray([final])
    if problem.family is ProblemFamily.MEE_RENDEZVOUS:
        miss = float(np.max(np.abs(final[:6] - family.x_target)))
    else:
        miss = max(abs(final[1]), abs(final[2] - math.sqrt(problem.gravity.mu / final[0])))
    return family.sensitive_cost(X), miss


#
# dispersion
#

def _run_failure(thrust: float, exc: DesocError) -> DispersionRun:
    logger.warning(f"Perturbed run at thrust {thrust:.6g} failed: {exc}")
    return DispersionRun(thrust=thrust, status="failed", report=getattr(exc, "report", None), message=str(exc))


def dispersion(problem: ProblemDefinition, spec: PerturbationSpec, mesh: Mesh | int | None = None,
               opts: SolverOptions | None = None, nominal: DiscreteTrajectory | None = None) -> DispersionReport:
    """
    Measure how far the sensitive cost moves when the thrust deviates from nominal.

    The first run of the report is always the nominal thrust itself (d = 0). In resolve mode
    each perturbed problem is optimised again, warm started from the nominal solution. In refly
    mode the nominal control history is integrated open loop and the dispersion is measured
    against the re-flown nominal, so integration error does not show up as dispersion.

    Failed perturbed runs are recorded in the report and do not stop it.

    :raises SolverError: if the nominal solve fails.
    """
    mesh = _mesh_for(problem, mesh)
    if nominal is None:
        nominal = solve_desensitized(problem, mesh, opts)
    nominal_status = nominal.report.status.value if nominal.report else "given"
    nominal_thrust = problem.thrust

    if spec.mode is PerturbationMode.REFLY:
        nominal_cost, nominal_miss = refly(problem, nominal)
    else:
        nominal_cost, nominal_miss = nominal.sensitive_cost, None

    runs = [DispersionRun(thrust=nominal_thrust, sensitive_cost=nominal_cost, d=0.0, status=nominal_status,
                          terminal_miss=nominal_miss, report=nominal.report)]

    for thrust in spec.thrust_values(nominal_thrust):
        if thrust == nominal_thrust:
            runs.append(runs[0].model_copy())
            continue
        perturbed = problem.with_thrust(thrust)
        if spec.mode is PerturbationMode.REFLY:
            cost, miss = refly(perturbed, nominal)
            runs.append(DispersionRun(thrust=thrust, sensitive_cost=cost, d=abs(cost - nominal_cost),
                                      status="reflown", terminal_miss=miss))
            continue
        try:
            nlp = build_nlp(perturbed, mesh)
            traj = solve_desensitized(perturbed, mesh, opts, z0=nlp.guess_from_trajectory(nominal))
        except DesocError as exc:
            runs.append(_run_failure(thrust, exc))
            continue
        runs.append(DispersionRun(thrust=thrust, sensitive_cost=traj.sensitive_cost,
                                  d=abs(traj.sensitive_cost - nominal_cost),
                                  status=traj.report.status.value, report=traj.report))

    for run in runs[1:]:
        logger.info(f"thrust {run.thrust:.6g}: cost {run.sensitive_cost:.10g}, d={run.d}")
    return DispersionReport(mode=spec.mode, nominal_thrust=nominal_thrust, nominal_cost=nominal_cost,
                            nominal_status=nominal_status, nominal_report=nominal.report, runs=runs)


#
# penalty weight comparison
#

class WeightComparisonRow(BaseModel):
    q_weight: float
    status: str
    sensitive_cost: float = float("nan")
    d_values: list[float | None] = Field(default_factory=list, description="perturbed runs only")
    cost_matches: bool = False
    dispersion_matches: bool = False
    message: str = ""

    @property
    def matches(self) -> bool:
        return self.cost_matches and self.dispersion_matches


class WeightComparison(BaseModel):
    """
    Which penalty weight reproduces a reference result: the nominal sensitive cost within an
    absolute tolerance and every dispersion within a relative one.
    """
    target_cost: float
    cost_tolerance: float = Field(gt=0.0)
    target_d: list[float]
    d_tolerance: float = Field(gt=0.0, description="relative")
    rows: list[WeightComparisonRow] = Field(default_factory=list)

    @property
    def matched(self) -> list[float]:
        return [row.q_weight for row in self.rows if row.matches]

    @property
    def dispersion_matched(self) -> list[float]:
        return [row.q_weight for row in self.rows if row.dispersion_matches]

    def summary(self) -> str:
        lines = []
        for row in self.rows:
            d = ", ".join("-" if v is None else f"{v:.4g}" for v in row.d_values)
            lines.append(f"Q={row.q_weight:g}: {row.status}, cost {row.sensitive_cost:.6g} "
                         f"({'matches' if row.cost_matches else 'misses'} {self.target_cost:g}), "
                         f"d [{d}] ({'matches' if row.dispersion_matches else 'misses'} "
                         f"{', '.join(f'{v:g}' for v in self.target_d)})")
        matched = ", ".join(f"{q:g}" for q in self.matched) or "none"
        lines.append(f"matching weights: {matched}")
        return "\n".join(lines)


def compare_penalty_weights(problem: ProblemDefinition, q_weights: list[float], spec: PerturbationSpec,
                            target_cost: float, target_d: list[float], cost_tolerance: float = 0.03,
                            d_tolerance: float = 0.4, mesh: Mesh | int | None = None,
                            opts: SolverOptions | None = None) -> WeightComparison:
    """
    Run the dispersion experiment once per penalty weight and check each against
    ``target_cost`` and ``target_d`` (one value per perturbed thrust of ``spec``).
    A weight whose nominal solve fails gets a row with status ``failed``.
    """
    if len(target_d) != len(spec.thrust_values(problem.thrust)):
        raise ValueError("need one target dispersion per perturbed thrust")
    comparison = WeightComparison(target_cost=target_cost, cost_tolerance=cost_tolerance, target_d=target_d,
                                  d_tolerance=d_tolerance)
    for q_weight in q_weights:
        weighted = problem.with_penalty_weight(q_weight)
        try:
            report = dispersion(weighted, spec, _mesh_for(weighted, mesh), opts)
        except DesocError as exc:
            logger.warning(f"Q={q_weight:g}: nominal solve failed: {exc}")
            comparison.rows.append(WeightComparisonRow(q_weight=q_weight, status="failed", message=str(exc)))
            continue
        d_values = [run.d for run in report.runs[1:]]
        comparison.rows.append(WeightComparisonRow(
            q_weight=q_weight, status=report.nominal_status, sensitive_cost=report.nominal_cost, d_values=d_values,
            cost_matches=abs(report.nominal_cost - target_cost) <= cost_tolerance,
            dispersion_matches=all(d is not None and abs(d - t) <= d_tolerance * t
                                   for d, t in zip(d_values, target_d))))
    for line in comparison.summary().splitlines():
        logger.info(line)
    return comparison


#
# t2 sweep
#

def _check_grid(problem: ProblemDefinition, grid: list[float]) -> list[float]:
    grid = [float(t) for t in grid]
    if not grid:
        raise ValueError("empty t2 grid")
    if any(b <= a for a, b in zip(grid[:-1], grid[1:])):
        raise ValueError("the t2 grid must be strictly increasing")
    tol = 1e-12 * (problem.tf - problem.t0)
    if grid[0] < max(problem.t0, problem.desensitization.t1) - tol or grid[-1] > problem.tf + tol:
        raise ValueError(f"the t2 grid must lie inside [t1, tf] = [{problem.desensitization.t1}, {problem.tf}]")
    return [min(t, problem.tf) for t in grid]


def _sweep_point(problem: ProblemDefinition, t2: float, spec: PerturbationSpec, segments: int | None,
                 opts: SolverOptions | None, previous: DiscreteTrajectory | None = None
                 ) -> tuple[SweepPoint, DiscreteTrajectory | None]:
    point_problem = problem.with_window(t2=t2)
    mesh = _mesh_for(point_problem, segments)
    try:
        z0 = build_nlp(point_problem, mesh).guess_from_trajectory(previous) if previous is not None else None
        nominal = solve_desensitized(point_problem, mesh, opts, z0=z0)
        report = dispersion(point_problem, spec, mesh, opts, nominal=nominal)
    except DesocError as exc:
        logger.warning(f"Sweep point t2={t2:.6g} failed: {exc}")
        return SweepPoint(t2=t2, status="failed", message=str(exc)), None
    status = report.nominal_status
    if any(not run.ok for run in report.runs):
        status = "partial"
    return SweepPoint(t2=t2, status=status, report=report), nominal


def _independent_point(args) -> SweepPoint:
    return _sweep_point(*args)[0]


def sweep_t2(problem: ProblemDefinition, grid: list[float], spec: PerturbationSpec, segments: int | None = None,
             opts: SolverOptions | None = None, chain: bool = True, workers: int = 1) -> SweepResult:
    """
    Repeat the dispersion experiment for every end of the desensitization window in ``grid``
    (canonical time; t1 stays as configured).

    With ``chain`` the converged nominal of one grid point is interpolated onto the mesh of the
    next one and used as its starting point; this is inherently sequential. Without ``chain``
    every point starts from the default guess, and the points can be spread over ``workers``
    processes with identical results.

    Per-point failures are recorded and the sweep continues.
    """
    grid = _check_grid(problem, grid)
    if chain and workers > 1:
        raise ValueError("a chained sweep is sequential; disable chaining to use several workers")

    if chain:
        points = []
        previous = None
        for t2 in grid:
            point, nominal = _sweep_point(problem, t2, spec, segments, opts, previous)
            points.append(point)
            if nominal is not None and nominal.report is not None and nominal.report.converged:
                previous = nominal
        return SweepResult(mode="chained", points=points)

    tasks = [(problem, t2, spec, segments, opts) for t2 in grid]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            points = list(pool.map(_independent_point, tasks))
    else:
        points = [_independent_point(task) for task in tasks]
    return SweepResult(mode="independent", points=points)


#
# indirect shooting reference for the orbit-raising problem
#

SHOOTING_STARTS = (
    (1.0, 0.5, 1.0),
    (1.0, 1.0, 2.0),
    (0.5, 0.5, 1.0),
    (1.5, 0.2, 1.5),
    (2.0, 1.0, 2.0),
    (1.0, 0.0, 1.0),
)
"""initial costates [lambda_r, lambda_u, lambda_v] tried before the random starts"""


def _orbit_raising_canonical(t, y, model: OrbitRaisingModel, mu: float):
    r, u, v, lr, lu, lv = y
    phi = math.atan2(lu, lv)
    accel = model.thrust / model.mass(t)
    r_dot = u
    u_dot = v * v / r - mu / (r * r) + accel * math.sin(phi)
    v_dot = -u * v / r + accel * math.cos(phi)
    lr_dot = -(lu * (-v * v / (r * r) + 2.0 * mu / r ** 3) + lv * u * v / (r * r))
    lu_dot = -(lr - lv * v / r)
    lv_dot = -(lu * 2.0 * v / r - lv * u / r)
    return [r_dot, u_dot, v_dot, lr_dot, lu_dot, lv_dot]


def _shoot(costates: np.ndarray, s0: PolarState, model: OrbitRaisingModel, mu: float, tf: float) -> np.ndarray:
    y0 = [s0.r, s0.u, s0.v, *costates]
    sol = solve_ivp(_orbit_raising_canonical, (model.t0, tf), y0, method="DOP853", rtol=1e-12, atol=1e-12,
                    args=(model, mu))
    if not sol.success:
        return np.full(3, np.inf)
    r, u, v, lr, lu, lv = sol.y[:, -1]
    if r <= 0.0:
        return np.full(3, np.inf)
    return np.array([
        u,
        v - math.sqrt(mu / r),
        lr - 1.0 - lv * math.sqrt(mu) / (2.0 * r ** 1.5),
    ])


def _final_radius(costates, s0: PolarState, model: OrbitRaisingModel, mu: float, tf: float) -> float:
    y0 = [s0.r, s0.u, s0.v, *costates]
    sol = solve_ivp(_orbit_raising_canonical, (model.t0, tf), y0, method="DOP853", rtol=1e-12, atol=1e-12,
                    args=(model, mu))
    return float(sol.y[0, -1])


def orbit_raising_shooting_oracle(model: OrbitRaisingModel, g: GravityModel, tf: float = 3.32,
                                  initial_state: PolarState | None = None, random_starts: int = 20,
                                  seed: int = 0, tolerance: float = 1e-10) -> float:
    """
    Maximum final radius of the orbit-raising transfer by indirect single shooting.

    The steering law maximises the Hamiltonian, tan(phi) = lambda_u / lambda_v, and the unknown
    initial costates are found with a Powell hybrid (damped Newton) iteration on the terminal
    conditions u = 0, v = sqrt(mu / r) and the transversality condition of the radius costate.
    A fixed list of starting guesses is tried first, then seeded random ones.

    :raises ShootingNonConvergenceError: if no start converges.
    """
    s0 = initial_state or PolarState(r=1.0, u=0.0, v=1.0)
    mu = g.mu
    if model.thrust == 0.0:
        return _final_radius((0.0, 0.0, 0.0), s0, model, mu, tf)

    rng = np.random.default_rng(seed)
    starts = [np.asarray(s, dtype=float) for s in SHOOTING_STARTS]
    starts += [rng.uniform([0.1, -1.0, 0.1], [3.0, 2.0, 3.0]) for _ in range(random_starts)]

    best = math.inf
    for i, start in enumerate(starts):
        with np.errstate(all="ignore"):
            sol = root(_shoot, start, args=(s0, model, mu, tf), method="hybr", options={"xtol": 1e-13})
        residual = float(np.max(np.abs(_shoot(sol.x, s0, model, mu, tf))))
        best = min(best, residual)
        if np.isfinite(residual) and residual < tolerance:
            r_final = _final_radius(sol.x, s0, model, mu, tf)
            logger.info(f"Shooting converged from start {i}: costates {sol.x}, r(tf)={r_final:.10g}")
            return r_final
        logger.debug(f"Shooting start {i} ended with residual {residual:.3e}")

    raise ShootingNonConvergenceError(len(starts), best)
