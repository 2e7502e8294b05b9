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
from __future__ import annotations

from typing import TYPE_CHECKING, Any

if TYPE_CHECKING:
    from nlp_solver import SolverReport


class DesocError(Exception):
    pass


class AstroError(DesocError):
    pass


class DegenerateOrbitError(AstroError):
    def __init__(self, angular_momentum: float):
        self.angular_momentum = angular_momentum
        msg = f"Rectilinear orbit: angular momentum magnitude {angular_momentum:.3e} is below tolerance"
        super().__init__(msg)


class RetrogradeSingularityError(AstroError):
    def __init__(self, inclination: float):
        self.inclination = inclination
        msg = f"Inclination {inclination:.12f} rad is too close to pi for modified equinoctial elements"
        super().__init__(msg)


class KeplerNonConvergenceError(AstroError):
    def __init__(self, mean_anomaly: float, eccentricity: float, iterations: int):
        self.mean_anomaly = mean_anomaly
        self.eccentricity = eccentricity
        self.iterations = iterations
        msg = (f"Kepler's equation did not converge after {iterations} iterations "
               f"(M={mean_anomaly}, e={eccentricity})")
        super().__init__(msg)


class DynamicsError(DesocError):
    pass


class NonPositiveMassError(DynamicsError):
    def __init__(self, mass: Any, floor: float = 0.0):
        self.mass = mass
        self.floor = floor
        msg = f"Spacecraft mass {mass} is not above the mass floor {floor}"
        super().__init__(msg)


class TranscriptionError(DesocError):
    pass


class WindowOutsideHorizonError(TranscriptionError):
    def __init__(self, t1: float, t2: float, t0: float, tf: float):
        self.t1 = t1
        self.t2 = t2
        msg = f"Desensitization window [{t1}, {t2}] is not inside the horizon [{t0}, {tf}]"
        super().__init__(msg)


class DimensionMismatchError(TranscriptionError):
    def __init__(self, expected: int, actual: int):
        self.expected = expected
        self.actual = actual
        msg = f"Decision vector has length {actual}, the layout expects {expected}"
        super().__init__(msg)


class SolverError(DesocError):
    """
    Base class for failed NLP solves.

    The report and the last iterate are kept so that callers can record
    partial results instead of discarding them.
    """

    def __init__(self, msg: str, report: SolverReport | None = None, z: Any = None):
        self.report = report
        self.z = z
        super().__init__(msg)


class NumericFailureError(SolverError):
    def __init__(self, where: str, report: SolverReport | None = None, z: Any = None):
        self.where = where
        super().__init__(f"Non-finite value encountered in {where}", report, z)


class InfeasibleStallError(SolverError):
    def __init__(self, feasibility: float, restarts: int, report: SolverReport | None = None, z: Any = None):
        self.feasibility = feasibility
        self.restarts = restarts
        msg = f"Feasibility stalled at {feasibility:.3e} after {restarts} restart(s)"
        super().__init__(msg, report, z)


class ShootingNonConvergenceError(DesocError):
    def __init__(self, starts: int, best_residual: float):
        self.starts = starts
        self.best_residual = best_residual
        msg = f"Indirect shooting failed from {starts} starting guesses (best residual {best_residual:.3e})"
        super().__init__(msg)


class ProblemFileError(DesocError):
    def __init__(self, source: str, reason: str):
        self.source = source
        self.reason = reason
        super().__init__(f"Problem file '{source}': {reason}")
