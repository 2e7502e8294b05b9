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
Batch command line: ``desoc solve|disperse|sweep|convert|problems``.

Every command is a thin wrapper around a ``cmd_*`` function that returns the exit code:
0 on success, 2 for invalid input, 3 when the solver did not deliver a converged result.
"""
from __future__ import annotations

import logging
import os
import re
import sys
from argparse import ArgumentError
from pathlib import Path

from argparsedecorator import ArgParseDecorator, Option, RequiredOption, ZeroOrMore
from pydantic import ValidationError

from analysis import PerturbationSpec, dispersion, solve_desensitized, sweep_t2
from astro import cart_to_mee
from configuration.problem_file import (apply_overrides, dump_problem_file, load_problem_file, solver_options,
                                        to_problem_definition)
from configuration.problem_library import ProblemLibrary
from errors import AstroError, DesocError, ProblemFileError, SolverError, TranscriptionError
from models import CartesianState, GravityModel, MU_SUN
from nlp_solver import DerivativeMode
from results import (RunSummary, default_output_dir, dispersion_table, sweep_table, trajectory_table, write_summary,
                     write_table)

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_SOLVER = 3

INPUT_ERRORS = (ProblemFileError, ValidationError, AstroError, TranscriptionError, ValueError)


def _fail(code: int, message: str) -> int:
    print(f"desoc: {message}", file=sys.stderr)
    return code


def _slug(text: str) -> str:
    return re.sub(r"[^A-Za-z0-9]+", "_", text).strip("_").lower() or "problem"


def _prepare(problem: str, derivative_mode: str | None = None, **overrides):
    pf = load_problem_file(problem)
    pf = apply_overrides(pf, **overrides)
    definition = to_problem_definition(pf)
    opts = solver_options(pf)
    if derivative_mode is not None:
        opts = opts.model_copy(update={"derivative_mode": DerivativeMode(derivative_mode)})
    return pf, definition, opts


def _summary(command: str, pf, definition, status: str, **values) -> RunSummary:
    cfg = definition.desensitization
    spacecraft = definition.spacecraft
    return RunSummary(command=command, problem=pf.name, family=pf.family, seed=pf.seed, status=status,
                      thrust=definition.thrust,
                      isp=spacecraft.isp if spacecraft else None,
                      m0=spacecraft.m0 if spacecraft else None,
                      segments=pf.mesh.segments, q_weight=cfg.q_weight,
                      t1=float(definition.time_from_canonical(cfg.t1)),
                      t2=float(definition.time_from_canonical(cfg.t2)), **values)


def _output(out: str | None, pf, suffix: str) -> tuple[Path, Path]:
    directory = Path(out) if out else default_output_dir()
    stem = f"{_slug(pf.name)}_{suffix}"
    return directory / f"{stem}.csv", directory / f"{stem}_summary.json"


def cmd_solve(problem: str, *, q_weight: float | None = None, t1: float | None = None, t2: float | None = None,
              rho: float | None = None, segments: int | None = None, seed: int | None = None,
              out: str | None = None, dump_config: bool = False, derivative_mode: str | None = None) -> int:
    """Solve one desensitized problem and write the trajectory table and a run summary."""
    try:
        pf, definition, opts = _prepare(problem, derivative_mode, q_weight=q_weight, t1=t1, t2=t2, rho=rho,
                                        segments=segments, seed=seed)
    except INPUT_ERRORS as exc:
        return _fail(EXIT_INPUT, str(exc))
    if dump_config:
        print(dump_problem_file(pf))
        return EXIT_OK

    table_path, summary_path = _output(out, pf, "trajectory")
    try:
        traj = solve_desensitized(definition, pf.mesh.segments, opts)
    except TranscriptionError as exc:
        return _fail(EXIT_INPUT, str(exc))
    except SolverError as exc:
        write_summary(_summary("solve", pf, definition, "failed", message=str(exc)), summary_path)
        return _fail(EXIT_SOLVER, str(exc))

    report = traj.report
    write_table(trajectory_table(traj, definition), table_path)
    write_summary(_summary("solve", pf, definition, report.status.value, objective=traj.objective,
                           terminal_part=traj.terminal_part, penalty_part=traj.penalty_part,
                           sensitive_cost=traj.sensitive_cost, feasibility=report.feasibility,
                           optimality=report.optimality, wall_time=report.wall_time), summary_path)
    print(f"{pf.name}: {report.status.value}, sensitive cost {traj.sensitive_cost:.10g}, J {traj.objective:.10g}")
    return EXIT_OK if report.converged else _fail(EXIT_SOLVER, f"solver finished with {report.status.value}")


def _parse_thrusts(text: str | None) -> list[float] | None:
    if not text:
        return None
    return [float(v) for v in text.split(",") if v.strip()]


def cmd_disperse(problem: str, *, thrust_pct: float | None = None, thrust_abs: str | None = None,
                 mode: str | None = None, q_weight: float | None = None, t1: float | None = None,
                 t2: float | None = None, rho: float | None = None, segments: int | None = None,
                 seed: int | None = None, out: str | None = None, dump_config: bool = False,
                 derivative_mode: str | None = None) -> int:
    """Solve the nominal problem and measure the dispersion of the sensitive cost under thrust changes."""
    try:
        pf, definition, opts = _prepare(problem, derivative_mode, q_weight=q_weight, t1=t1, t2=t2, rho=rho,
                                        segments=segments, seed=seed, mode=mode, thrust_pct=thrust_pct,
                                        thrust_abs=_parse_thrusts(thrust_abs))
    except INPUT_ERRORS as exc:
        return _fail(EXIT_INPUT, str(exc))
    if dump_config:
        print(dump_problem_file(pf))
        return EXIT_OK
    if pf.perturbation is None:
        return _fail(EXIT_INPUT, "nothing to disperse: give --thrust-pct or --thrust-abs")

    spec = PerturbationSpec.model_validate(pf.perturbation.model_dump())
    table_path, summary_path = _output(out, pf, f"dispersion_{spec.mode.value}")
    try:
        report = dispersion(definition, spec, pf.mesh.segments, opts)
    except TranscriptionError as exc:
        return _fail(EXIT_INPUT, str(exc))
    except SolverError as exc:
        write_summary(_summary("disperse", pf, definition, "failed", mode=spec.mode.value, message=str(exc)),
                      summary_path)
        return _fail(EXIT_SOLVER, str(exc))

    write_table(dispersion_table(report), table_path)
    nominal = report.nominal_report
    write_summary(_summary("disperse", pf, definition, report.nominal_status, mode=spec.mode.value,
                           sensitive_cost=report.nominal_cost,
                           feasibility=nominal.feasibility if nominal else None,
                           optimality=nominal.optimality if nominal else None,
                           wall_time=nominal.wall_time if nominal else None), summary_path)
    for run in report.runs:
        print(f"thrust {run.thrust:.6g}: cost {run.sensitive_cost:.10g}, d {run.d}, {run.status}")
    return EXIT_OK if nominal is None or nominal.converged else EXIT_SOLVER


def parse_grid(text: str) -> list[float]:
    """``start:stop:count`` -> evenly spaced values including both ends"""
    try:
        start, stop, count = text.split(":")
        start, stop, count = float(start), float(stop), int(count)
    except ValueError:
        raise ValueError(f"grid '{text}' is not of the form start:stop:count") from None
    if count < 1:
        raise ValueError("grid count must be at least 1")
    if count == 1:
        return [stop]
    step = (stop - start) / (count - 1)
    return [start + i * step for i in range(count - 1)] + [stop]


def cmd_sweep(problem: str, *, t2_grid: str, thrust_pct: float | None = None, thrust_abs: str | None = None,
              mode: str | None = None, q_weight: float | None = None, t1: float | None = None,
              rho: float | None = None, segments: int | None = None, seed: int | None = None,
              parallel: bool = False, out: str | None = None, dump_config: bool = False,
              derivative_mode: str | None = None) -> int:
    """Repeat the dispersion experiment along a grid of window end times."""
    try:
        grid = parse_grid(t2_grid)
        pf, definition, opts = _prepare(problem, derivative_mode, q_weight=q_weight, t1=t1, rho=rho,
                                        segments=segments, seed=seed, mode=mode, thrust_pct=thrust_pct,
                                        thrust_abs=_parse_thrusts(thrust_abs))
    except INPUT_ERRORS as exc:
        return _fail(EXIT_INPUT, str(exc))
    if dump_config:
        print(dump_problem_file(pf))
        return EXIT_OK
    if pf.perturbation is None:
        return _fail(EXIT_INPUT, "nothing to disperse: give --thrust-pct or --thrust-abs")

    spec = PerturbationSpec.model_validate(pf.perturbation.model_dump())
    canonical_grid = [float(definition.time_to_canonical(t)) for t in grid]
    workers = (os.cpu_count() or 1) if parallel else 1
    try:
        result = sweep_t2(definition, canonical_grid, spec, pf.mesh.segments, opts, chain=not parallel,
                          workers=workers)
    except ValueError as exc:
        return _fail(EXIT_INPUT, str(exc))

    table_path, summary_path = _output(out, pf, "sweep")
    write_table(sweep_table(result, definition), table_path)
    failed = [p for p in result.points if p.status not in ("converged",)]
    status = "converged" if not failed else "partial"
    write_summary(_summary("sweep", pf, definition, status, mode=result.mode,
                           message=f"{len(failed)} of {len(result.points)} grid points not fully converged"),
                  summary_path)
    print(f"{len(result.points)} grid points ({result.mode}), {len(failed)} not fully converged")
    return EXIT_OK if not failed else EXIT_SOLVER


def cmd_convert(values: list[str], *, mu: float = MU_SUN) -> int:
    """Print the modified equinoctial elements of a Cartesian state (km, km/s)."""
    try:
        numbers = [float(v) for v in " ".join(values).replace(",", " ").split()]
        if len(numbers) != 6:
            raise ValueError(f"expected 6 numbers (x y z vx vy vz), got {len(numbers)}")
        state = CartesianState(position=tuple(numbers[:3]), velocity=tuple(numbers[3:]))
        elements = cart_to_mee(state, GravityModel(mu=mu))
    except (ValueError, ValidationError, AstroError) as exc:
        return _fail(EXIT_INPUT, str(exc))
    for name, value in elements.model_dump().items():
        print(f"{name} = {value:.12g}")
    return EXIT_OK


def cmd_problems() -> int:
    """Print the bundled problem keys with the file each one loads."""
    for key, file_name in ProblemLibrary.describe().items():
        print(f"{key:<16}{file_name}")
    return EXIT_OK


#
# argument parsing
#

cli = ArgParseDecorator()


def _set_verbose(verbose: bool) -> None:
    if verbose:
        logging.getLogger().setLevel(logging.DEBUG)


@cli.command
def solve(problem: str, Q: Option | float = None, t1: Option | float = None, t2: Option | float = None,
          rho: Option | float = None, mesh: Option | int = None, seed: Option | int = None,
          out: Option | str = None, analytic: Option = False, finite_difference: Option = False,
          dump_config: Option = False, verbose: Option = False) -> int:
    """
    Solve a desensitized problem and write the trajectory table.
    :param problem: problem file or bundled key (see 'problems')
    :param Q: penalty weight Q
    :param t1: start of the desensitization window (file time units)
    :param t2: end of the desensitization window (file time units)
    :param rho: smoothing width of the window trigger
    :param mesh: number of mesh segments
    :param seed: seed for solver restarts
    :param out: output directory
    :param analytic: use analytic dynamics derivatives (default)
    :param finite_difference: use finite difference derivatives
    :param dump_config: print the effective problem file and exit
    :param verbose: debug logging
    :alias finite_difference: --finite-difference
    :alias dump_config: --dump-config
    """
    _set_verbose(verbose)
    return cmd_solve(problem, q_weight=Q, t1=t1, t2=t2, rho=rho, segments=mesh, seed=seed, out=out,
                     dump_config=dump_config, derivative_mode=_derivative_mode(analytic, finite_difference))


@cli.command
def disperse(problem: str, thrust_pct: Option | float = None, thrust_abs: Option | str = None,
             mode: Option | str = None, Q: Option | float = None, t1: Option | float = None,
             t2: Option | float = None, rho: Option | float = None, mesh: Option | int = None,
             seed: Option | int = None, out: Option | str = None, analytic: Option = False,
             finite_difference: Option = False, dump_config: Option = False, verbose: Option = False) -> int:
    """
    Measure the dispersion of the sensitive cost under thrust perturbations.
    :param problem: problem file or bundled key
    :param thrust_pct: relative thrust perturbation in percent, tests +pct and -pct
    :param thrust_abs: comma separated absolute thrust values
    :param mode: resolve (optimise again) or refly (open loop replay)
    :param Q: penalty weight Q
    :param t1: start of the desensitization window
    :param t2: end of the desensitization window
    :param rho: smoothing width of the window trigger
    :param mesh: number of mesh segments
    :param seed: seed for solver restarts
    :param out: output directory
    :param analytic: use analytic dynamics derivatives (default)
    :param finite_difference: use finite difference derivatives
    :param dump_config: print the effective problem file and exit
    :param verbose: debug logging
    :choices mode: ["resolve", "refly"]
    :alias thrust_pct: --thrust-pct
    :alias thrust_abs: --thrust-abs
    :alias finite_difference: --finite-difference
    :alias dump_config: --dump-config
    """
    _set_verbose(verbose)
    return cmd_disperse(problem, thrust_pct=thrust_pct, thrust_abs=thrust_abs, mode=mode, q_weight=Q,
                        t1=t1, t2=t2, rho=rho, segments=mesh, seed=seed, out=out, dump_config=dump_config,
                        derivative_mode=_derivative_mode(analytic, finite_difference))


@cli.command
def sweep(problem: str, t2_grid: RequiredOption | str, thrust_pct: Option | float = None,
          thrust_abs: Option | str = None, mode: Option | str = None, Q: Option | float = None,
          t1: Option | float = None, rho: Option | float = None, mesh: Option | int = None,
          seed: Option | int = None, parallel: Option = False, out: Option | str = None, analytic: Option = False,
          finite_difference: Option = False, dump_config: Option = False, verbose: Option = False) -> int:
    """
    Sweep the end of the desensitization window and tabulate the dispersion.
    :param problem: problem file or bundled key
    :param t2_grid: start:stop:count in file time units
    :param thrust_pct: relative thrust perturbation in percent
    :param thrust_abs: comma separated absolute thrust values
    :param mode: resolve or refly
    :param Q: penalty weight Q
    :param t1: start of the desensitization window
    :param rho: smoothing width of the window trigger
    :param mesh: number of mesh segments
    :param seed: seed for solver restarts
    :param parallel: solve grid points independently in worker processes
    :param out: output directory
    :param analytic: use analytic dynamics derivatives (default)
    :param finite_difference: use finite difference derivatives
    :param dump_config: print the effective problem file and exit
    :param verbose: debug logging
    :choices mode: ["resolve", "refly"]
    :alias t2_grid: --t2-grid
    :alias thrust_pct: --thrust-pct
    :alias thrust_abs: --thrust-abs
    :alias finite_difference: --finite-difference
    :alias dump_config: --dump-config
    """
    _set_verbose(verbose)
    return cmd_sweep(problem, t2_grid=t2_grid, thrust_pct=thrust_pct, thrust_abs=thrust_abs, mode=mode,
                     q_weight=Q, t1=t1, rho=rho, segments=mesh, seed=seed, parallel=parallel, out=out,
                     dump_config=dump_config, derivative_mode=_derivative_mode(analytic, finite_difference))


@cli.command
def convert(state: ZeroOrMore[str], mu: Option | float = MU_SUN, verbose: Option = False) -> int:
    """
    Convert a Cartesian state into modified equinoctial elements.
    :param state: x y z vx vy vz in km and km/s
    :param mu: gravitational parameter in km^3/s^2
    :param verbose: debug logging
    """
    _set_verbose(verbose)
    return cmd_convert(list(state or []), mu=mu)


@cli.command
def problems() -> int:
    """
    List the bundled problem keys and their files.
    """
    return cmd_problems()


def _derivative_mode(analytic: bool, finite_difference: bool) -> str | None:
    if finite_difference:
        return DerivativeMode.FINITE_DIFFERENCE.value
    if analytic:
        return DerivativeMode.ANALYTIC.value
    return None


def execute(argv: list[str]) -> int:
    """
    Run one command line given as a list of arguments.

    Parse errors return 2, unexpected toolkit errors the solver exit code.
    """
    if not argv:
        return _fail(EXIT_INPUT, "no command given, try 'desoc help'")
    try:
        result = cli.execute(list(argv), error_handler=None)
    except ArgumentError as exc:
        return _fail(EXIT_INPUT, str(exc))
    except DesocError as exc:
        return _fail(EXIT_SOLVER, str(exc))
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_INPUT
    return EXIT_OK if result is None else int(result)
