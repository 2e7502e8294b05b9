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
Hermite-Simpson transcription of both problem families into a sparse NLP.

Decision vector layout (``N`` segments, ``n = 2N + 1`` nodes, node ``2k`` and ``2k+2`` are
the ends of segment ``k`` and ``2k+1`` its midpoint)::

    z = [ X[0, :], X[1, :], ..., X[n-1, :],  U[0, :], U[1, :], ..., U[n-1, :] ]

    rendezvous:     X = [p, f, g, h, k, L, m, lambda_T]     U = [delta, u_r, u_t, u_n]
    orbit raising:  X = [r, u, v, lambda_T]                 U = [phi]

Constraint vector layout::

    c = [ segment 0: interpolation defects (nx), Simpson defects (nx),
          segment 1: ...,
          unit-norm path constraints (rendezvous only, one per node),
          boundary conditions ]
"""
from __future__ import annotations

import enum
import logging
import math
from abc import ABC, abstractmethod
from typing import TYPE_CHECKING, Callable
try:
    from typing import Self
except ImportError:  # Python < 3.11
    from typing_extensions import Self

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy import sparse
from scipy.optimize import root

from astro import mean_motion
from dynamics import (mee_augmented_jacobian_array, mee_augmented_rates_array, orbit_raising_augmented_jacobian_array,
                      orbit_raising_augmented_rates_array, trigger)
from errors import DimensionMismatchError, WindowOutsideHorizonError
from models import (CanonicalScaling, DesensitizationConfig, GravityModel, MeeState, OrbitRaisingModel, PolarState,
                    SpacecraftModel)

if TYPE_CHECKING:
    from nlp_solver import SolverReport

logger = logging.getLogger(__name__)

TWO_PI = 2.0 * math.pi

GUESS_FINAL_MASS_FRACTION = 0.7
MIN_MASS_FRACTION = 1e-3
BOUNDARY_TOLERANCE = 1e-9
"""breakpoints closer than this fraction of the horizon to a boundary are merged into it"""


class ProblemFamily(str, enum.Enum):
    MEE_RENDEZVOUS = "mee_rendezvous"
    ORBIT_RAISING = "orbit_raising"


class ProblemDefinition(BaseModel):
    """
    A fixed-time optimal control problem in canonical units.

    Times, the desensitization window and the gravity model are canonical. The spacecraft
    is kept in physical units (kg, N, s) together with the scaling that converts it, so that
    thrust perturbations can be expressed in Newton.
    For the orbit-raising family everything is already scaled and ``scaling`` is the identity.
    """
    family: ProblemFamily
    name: str = ""
    t0: float = 0.0
    tf: float
    initial_state: MeeState | PolarState
    target_state: MeeState | None = None
    initial_mass: float = Field(default=1.0, gt=0.0, description="canonical initial mass (rendezvous)")
    mass_floor: float = Field(default=0.0, ge=0.0, description="canonical dry-mass floor (rendezvous)")
    spacecraft: SpacecraftModel | None = None
    orbit_raising: OrbitRaisingModel | None = None
    gravity: GravityModel = GravityModel()
    desensitization: DesensitizationConfig = DesensitizationConfig()
    scaling: CanonicalScaling = CanonicalScaling()
    file_time_unit: float = Field(default=1.0, gt=0.0, description="seconds per problem-file time unit")
    revolutions: int | None = Field(default=None, description="whole turns added to the target true longitude")

    @model_validator(mode="after")
    def _check_family(self) -> Self:
        if self.tf <= self.t0:
            raise ValueError(f"final time {self.tf} must be after the initial time {self.t0}")
        if self.family is ProblemFamily.MEE_RENDEZVOUS:
            if not isinstance(self.initial_state, MeeState) or self.target_state is None or self.spacecraft is None:
                raise ValueError("a rendezvous problem needs MEE boundary states and a spacecraft")
        else:
            if not isinstance(self.initial_state, PolarState) or self.orbit_raising is None:
                raise ValueError("an orbit-raising problem needs a polar initial state and an orbit-raising model")
        return self

    @property
    def canonical_spacecraft(self) -> SpacecraftModel:
        return self.spacecraft.to_canonical(self.scaling)

    @property
    def thrust(self) -> float:
        """Nominal thrust in the problem's own unit (N for rendezvous, scaled for orbit raising)."""
        if self.family is ProblemFamily.MEE_RENDEZVOUS:
            return self.spacecraft.thrust
        return self.orbit_raising.thrust

    def with_thrust(self, thrust: float) -> ProblemDefinition:
        if self.family is ProblemFamily.MEE_RENDEZVOUS:
            return self.model_copy(update={"spacecraft": self.spacecraft.model_copy(update={"thrust": thrust})})
        return self.model_copy(update={"orbit_raising": self.orbit_raising.model_copy(update={"thrust": thrust})})

    def with_window(self, t1: float | None = None, t2: float | None = None) -> ProblemDefinition:
        """Copy with a new desensitization window, given in canonical time."""
        cfg = self.desensitization
        new_cfg = DesensitizationConfig.model_validate(
            cfg.model_dump() | {"t1": cfg.t1 if t1 is None else t1, "t2": cfg.t2 if t2 is None else t2})
        return self.model_copy(update={"desensitization": new_cfg})

    def with_penalty_weight(self, q_weight: float) -> ProblemDefinition:
        new_cfg = DesensitizationConfig.model_validate(self.desensitization.model_dump() | {"q_weight": q_weight})
        return self.model_copy(update={"desensitization": new_cfg})

    def time_to_canonical(self, value):
        return np.asarray(value, dtype=float) * self.file_time_unit / self.scaling.time_unit

    def time_from_canonical(self, value):
        return np.asarray(value, dtype=float) * self.scaling.time_unit / self.file_time_unit


class Mesh(BaseModel):
    """
    Segment boundaries of the Hermite-Simpson grid. Every segment contributes its two end
    nodes and its midpoint.
    """
    model_config = ConfigDict(arbitrary_types_allowed=True)

    boundaries: np.ndarray

    @model_validator(mode="after")
    def _strictly_increasing(self) -> Self:
        b = np.asarray(self.boundaries, dtype=float)
        if b.ndim != 1 or b.size < 2:
            raise ValueError("a mesh needs at least one segment")
        if np.any(np.diff(b) <= 0.0):
            raise ValueError("mesh boundaries must be strictly increasing")
        self.boundaries = b
        return self

    @classmethod
    def uniform(cls, t0: float, tf: float, segments: int, breakpoints: tuple[float, ...] | list[float] = ()) -> Mesh:
        """
        A uniform mesh with the given breakpoints added as segment boundaries.

        A breakpoint close to an existing interior boundary (within a quarter segment)
        moves that boundary; otherwise it is inserted as an extra boundary. Breakpoints within
        ``BOUNDARY_TOLERANCE`` of the horizon of any boundary already there are merged into it,
        so no segment is shorter than that.
        """
        if segments < 1:
            raise ValueError("segments must be >= 1")
        b = [float(v) for v in np.linspace(t0, tf, segments + 1)]
        span = tf - t0
        spacing = span / segments
        pinned = {b[0], b[-1]}
        for tb in sorted(float(t) for t in breakpoints):
            if tb <= t0 + BOUNDARY_TOLERANCE * span or tb >= tf - BOUNDARY_TOLERANCE * span:
                continue
            j = int(np.argmin(np.abs(np.asarray(b) - tb)))
            if abs(b[j] - tb) <= BOUNDARY_TOLERANCE * span:
                pinned.add(b[j])
            elif abs(b[j] - tb) < 0.25 * spacing and b[j] not in pinned:
                b[j] = tb
                pinned.add(tb)
            else:
                b.append(tb)
                b.sort()
                pinned.add(tb)
        return cls(boundaries=np.asarray(b))

    @property
    def segments(self) -> int:
        return self.boundaries.size - 1

    @property
    def steps(self) -> np.ndarray:
        return np.diff(self.boundaries)

    @property
    def node_times(self) -> np.ndarray:
        t = np.empty(2 * self.segments + 1)
        t[0::2] = self.boundaries
        t[1::2] = 0.5 * (self.boundaries[:-1] + self.boundaries[1:])
        return t

    @property
    def midpoints(self) -> np.ndarray:
        return 0.5 * (self.boundaries[:-1] + self.boundaries[1:])

    def has_boundary(self, t: float, tol: float = BOUNDARY_TOLERANCE) -> bool:
        span = self.boundaries[-1] - self.boundaries[0]
        return bool(np.any(np.abs(self.boundaries - t) <= tol * span))

    def refine(self) -> Mesh:
        """Split every segment in two."""
        b = np.empty(2 * self.segments + 1)
        b[0::2] = self.boundaries
        b[1::2] = self.midpoints
        return Mesh(boundaries=b)


def penalty_node_weights(mesh: Mesh, cfg: DesensitizationConfig) -> np.ndarray:
    """
    Simpson weights of the time-triggered penalty at every node, including Q.

    The trigger is sampled at the segment midpoint and applied to the whole segment.
    With the window edges on segment boundaries the trigger is 0 or 1 inside every
    segment, so the quadrature only carries the Simpson error of lambda_T^2.
    """
    h = mesh.steps
    seg_weight = cfg.q_weight * np.asarray(trigger(mesh.midpoints, cfg)).reshape(-1) * h / 6.0
    weights = np.zeros(2 * mesh.segments + 1)
    weights[0:-1:2] += seg_weight
    weights[1::2] += 4.0 * seg_weight
    weights[2::2] += seg_weight
    return weights


def penalty_quadrature(mesh: Mesh, cfg: DesensitizationConfig, lambda_t: np.ndarray) -> float:
    """Integral of trigger * Q * lambda_T^2 over the mesh."""
    return float(np.dot(penalty_node_weights(mesh, cfg), np.asarray(lambda_t) ** 2))


#
# per-family pieces of the transcription
#

class FamilyTranscription(ABC):
    """
    The family specific part of the NLP: dynamics, bounds, boundary conditions
    and the initial guess. Arrays always have a leading node axis.
    """
    state_labels: tuple[str, ...] = ()
    control_labels: tuple[str, ...] = ()
    sensitive_index: int = 0
    costate_index: int = 0

    def __init__(self, problem: ProblemDefinition):
        self.problem = problem

    @property
    def nx(self) -> int:
        return len(self.state_labels)

    @property
    def nu(self) -> int:
        return len(self.control_labels)

    @abstractmethod
    def rates(self, X: np.ndarray, U: np.ndarray, t: np.ndarray) -> np.ndarray:
        ...

    @abstractmethod
    def rate_jacobian(self, X: np.ndarray, U: np.ndarray, t: np.ndarray) -> np.ndarray:
        """d(rates)/d[x, u], shape (n, nx, nx + nu)"""

    @abstractmethod
    def boundary(self, X: np.ndarray) -> np.ndarray:
        ...

    @abstractmethod
    def boundary_terms(self) -> list[tuple[int, int, int]]:
        """(boundary row, node index, state component) of every structural nonzero"""

    @abstractmethod
    def boundary_jacobian(self, X: np.ndarray) -> np.ndarray:
        """values in the order of :meth:`boundary_terms`"""

    @abstractmethod
    def bounds(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """lower / upper state bounds (nx) and lower / upper control bounds (nu)"""

    @abstractmethod
    def initial_guess(self, t: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        ...

    @abstractmethod
    def mass(self, X: np.ndarray, t: np.ndarray) -> np.ndarray:
        ...

    @abstractmethod
    def sensitive_cost(self, X: np.ndarray) -> float:
        """The terminal quantity that is maximised, in output units (kg or scaled radius)."""

    def path(self, U: np.ndarray) -> np.ndarray:
        return np.zeros(0)

    def path_jacobian(self, U: np.ndarray) -> np.ndarray:
        return np.zeros((0, self.nu))

    @property
    def path_columns(self) -> tuple[int, ...]:
        return ()

    def normalize_controls(self, U: np.ndarray) -> np.ndarray:
        return U


class RendezvousTranscription(FamilyTranscription):
    state_labels = ("p", "f", "g", "h", "k", "L", "m", "lambda_T")
    control_labels = ("delta", "u_r", "u_t", "u_n")
    sensitive_index = 6
    costate_index = 7

    def __init__(self, problem: ProblemDefinition):
        super().__init__(problem)
        self.spacecraft = problem.canonical_spacecraft
        self.mu = problem.gravity.mu
        self.cfg = problem.desensitization
        self.x0 = problem.initial_state.as_array()
        self.revolutions = self._revolutions()
        self.x_target = problem.target_state.as_array()
        self.x_target[5] += TWO_PI * self.revolutions

    def _revolutions(self) -> int:
        if self.problem.revolutions is not None:
            return self.problem.revolutions
        x0 = self.problem.initial_state
        xt = self.problem.target_state
        rate = 0.5 * (mean_motion(x0, self.problem.gravity) + mean_motion(xt, self.problem.gravity))
        sweep = rate * (self.problem.tf - self.problem.t0)
        turns = round((x0.L + sweep - xt.L) / TWO_PI)
        logger.debug(f"Estimated {turns} revolution(s) for a longitude sweep of {sweep:.3f} rad")
        return int(turns)

    def rates(self, X, U, t):
        return mee_augmented_rates_array(X, U, self.spacecraft, self.mu, self.cfg)

    def rate_jacobian(self, X, U, t):
        return mee_augmented_jacobian_array(X, U, self.spacecraft, self.mu, self.cfg)

    def boundary(self, X):
        return np.concatenate([
            X[0, :6] - self.x0,
            [X[0, 6] - self.problem.initial_mass],
            X[-1, :6] - self.x_target,
            [X[-1, 7]],
        ])

    def boundary_terms(self):
        terms = [(i, 0, i) for i in range(7)]
        terms += [(7 + i, -1, i) for i in range(6)]
        terms.append((13, -1, 7))
        return terms

    def boundary_jacobian(self, X):
        return np.ones(14)

    def bounds(self):
        p_ref = (self.x0[0], self.x_target[0])
        m0 = self.problem.initial_mass
        m_low = max(self.problem.mass_floor, MIN_MASS_FRACTION * m0)
        lx = np.array([0.1 * min(p_ref), -0.99, -0.99, -2.0, -2.0, -np.inf, m_low, -np.inf])
        ux = np.array([10.0 * max(p_ref), 0.99, 0.99, 2.0, 2.0, np.inf, m0, np.inf])
        lu = np.array([0.0, -1.0, -1.0, -1.0])
        uu = np.array([1.0, 1.0, 1.0, 1.0])
        return lx, ux, lu, uu

    def initial_guess(self, t):
        fraction = (t - t[0]) / (t[-1] - t[0])
        m0 = self.problem.initial_mass
        X = np.empty((t.size, self.nx))
        X[:, :6] = self.x0[None, :] + fraction[:, None] * (self.x_target - self.x0)[None, :]
        X[:, 6] = m0 + fraction * (GUESS_FINAL_MASS_FRACTION - 1.0) * m0
        X[:, 7] = 0.0
        U = np.zeros((t.size, self.nu))
        U[:, 0] = 0.5
        U[:, 2] = 1.0
        return X, U

    def mass(self, X, t):
        return X[:, 6]

    def sensitive_cost(self, X):
        return float(self.problem.scaling.mass_from_canonical(X[-1, 6]))

    def path(self, U):
        return np.sum(U[:, 1:4] ** 2, axis=1) - 1.0

    def path_jacobian(self, U):
        jac = np.zeros_like(U)
        jac[:, 1:4] = 2.0 * U[:, 1:4]
        return jac

    @property
    def path_columns(self):
        return 1, 2, 3

    def normalize_controls(self, U):
        U = U.copy()
        norm = np.linalg.norm(U[:, 1:4], axis=1)
        norm[norm == 0.0] = 1.0
        U[:, 1:4] /= norm[:, None]
        return U


class OrbitRaisingTranscription(FamilyTranscription):
    state_labels = ("r", "u", "v", "lambda_T")
    control_labels = ("phi",)
    sensitive_index = 0
    costate_index = 3

    def __init__(self, problem: ProblemDefinition):
        super().__init__(problem)
        self.model = problem.orbit_raising
        self.mu = problem.gravity.mu
        self.s0 = problem.initial_state

    def rates(self, X, U, t):
        return orbit_raising_augmented_rates_array(X, U, t, self.model, self.mu)

    def rate_jacobian(self, X, U, t):
        return orbit_raising_augmented_jacobian_array(X, U, t, self.model, self.mu)

    def boundary(self, X):
        rf = X[-1, 0]
        return np.array([
            X[0, 0] - self.s0.r,
            X[0, 1] - self.s0.u,
            X[0, 2] - self.s0.v,
            X[-1, 1],
            X[-1, 2] - math.sqrt(self.mu / rf),
            X[-1, 3],
        ])

    def boundary_terms(self):
        return [(0, 0, 0), (1, 0, 1), (2, 0, 2), (3, -1, 1), (4, -1, 0), (4, -1, 2), (5, -1, 3)]

    def boundary_jacobian(self, X):
        rf = X[-1, 0]
        return np.array([1.0, 1.0, 1.0, 1.0, 0.5 * math.sqrt(self.mu) * rf ** -1.5, 1.0, 1.0])

    def bounds(self):
        lx = np.array([0.5 * self.s0.r, -5.0, 0.05, -np.inf])
        ux = np.array([10.0 * self.s0.r, 5.0, 5.0, np.inf])
        return lx, ux, np.array([self.model.phi_min]), np.array([self.model.phi_max])

    def initial_guess(self, t):
        fraction = (t - t[0]) / (t[-1] - t[0])
        r = self.s0.r + 0.5 * fraction * self.s0.r
        X = np.zeros((t.size, self.nx))
        X[:, 0] = r
        X[:, 2] = np.sqrt(self.mu / r)
        U = (0.5 * math.pi * fraction)[:, None]
        return X, U

    def mass(self, X, t):
        return self.model.mass(t)

    def sensitive_cost(self, X):
        return float(X[-1, 0])


def family_transcription(problem: ProblemDefinition) -> FamilyTranscription:
    if problem.family is ProblemFamily.MEE_RENDEZVOUS:
        return RendezvousTranscription(problem)
    return OrbitRaisingTranscription(problem)


class NlpProblem:
    """
    The sparse NLP of one problem on one mesh.

    Evaluation has no side effects, so the same instance can be evaluated from several
    threads. The Jacobian sparsity pattern is computed once and never changes.
    """

    def __init__(self, problem: ProblemDefinition, mesh: Mesh):
        self.problem = problem
        self.mesh = mesh
        self.family = family_transcription(problem)

        self.t = mesh.node_times
        self.h = mesh.steps
        self.n_nodes = self.t.size
        self.nx = self.family.nx
        self.nu = self.family.nu
        self.n_state_vars = self.n_nodes * self.nx
        self.n_vars = self.n_state_vars + self.n_nodes * self.nu

        self.penalty_weights = penalty_node_weights(mesh, problem.desensitization)

        self.n_defects = 2 * mesh.segments * self.nx
        self.n_path = self.family.path(np.zeros((self.n_nodes, self.nu))).size
        self.n_boundary = self.family.boundary(np.ones((self.n_nodes, self.nx))).size
        self.n_constraints = self.n_defects + self.n_path + self.n_boundary

        lx, ux, lu, uu = self.family.bounds()
        self.lower = np.concatenate([np.tile(lx, self.n_nodes), np.tile(lu, self.n_nodes)])
        self.upper = np.concatenate([np.tile(ux, self.n_nodes), np.tile(uu, self.n_nodes)])

        self._jac_rows, self._jac_cols = self._structure()

    #
    # layout
    #

    def state_index(self, node: int, component: int) -> int:
        node = node % self.n_nodes
        return node * self.nx + component

    def control_index(self, node: int, component: int) -> int:
        node = node % self.n_nodes
        return self.n_state_vars + node * self.nu + component

    def unpack(self, z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        z = np.asarray(z, dtype=float)
        if z.size != self.n_vars:
            raise DimensionMismatchError(self.n_vars, z.size)
        X = z[:self.n_state_vars].reshape(self.n_nodes, self.nx)
        U = z[self.n_state_vars:].reshape(self.n_nodes, self.nu)
        return X, U

    def pack(self, X: np.ndarray, U: np.ndarray) -> np.ndarray:
        return np.concatenate([np.asarray(X, dtype=float).ravel(), np.asarray(U, dtype=float).ravel()])

    #
    # objective
    #

    def objective_parts(self, z: np.ndarray) -> tuple[float, float]:
        """(terminal part, penalty part) of J"""
        X, _ = self.unpack(z)
        terminal = -X[-1, self.family.sensitive_index]
        penalty = float(np.dot(self.penalty_weights, X[:, self.family.costate_index] ** 2))
        return float(terminal), penalty

    def objective(self, z: np.ndarray) -> float:
        terminal, penalty = self.objective_parts(z)
        return terminal + penalty

    def objective_gradient(self, z: np.ndarray) -> np.ndarray:
        X, _ = self.unpack(z)
        grad = np.zeros(self.n_vars)
        costate = self.family.costate_index
        grad[costate:self.n_state_vars:self.nx] = 2.0 * self.penalty_weights * X[:, costate]
        grad[self.state_index(-1, self.family.sensitive_index)] -= 1.0
        return grad

    #
    # constraints
    #

    def defects(self, X: np.ndarray, U: np.ndarray) -> np.ndarray:
        """Hermite-Simpson defects, shape (segments, 2 nx)"""
        F = self.family.rates(X, U, self.t)
        h = self.h[:, None]
        xi, xm, xe = X[0:-1:2], X[1::2], X[2::2]
        fi, fm, fe = F[0:-1:2], F[1::2], F[2::2]
        interpolation = xm - 0.5 * (xi + xe) - h / 8.0 * (fi - fe)
        simpson = xe - xi - h / 6.0 * (fi + 4.0 * fm + fe)
        return np.concatenate([interpolation, simpson], axis=1)

    def constraints(self, z: np.ndarray) -> np.ndarray:
        X, U = self.unpack(z)
        return np.concatenate([self.defects(X, U).ravel(), self.family.path(U), self.family.boundary(X)])

    def constraint_groups(self, c: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Split a constraint vector into (defects, path, boundary)."""
        return (c[:self.n_defects],
                c[self.n_defects:self.n_defects + self.n_path],
                c[self.n_defects + self.n_path:])

    def _node_columns(self, node: int) -> np.ndarray:
        state = node * self.nx + np.arange(self.nx)
        control = self.n_state_vars + node * self.nu + np.arange(self.nu)
        return np.concatenate([state, control])

    def _structure(self) -> tuple[np.ndarray, np.ndarray]:
        rows: list[np.ndarray] = []
        cols: list[np.ndarray] = []

        # every defect row of a segment touches all variables of its three nodes
        nv = self.nx + self.nu
        block_rows = 2 * self.nx
        for k in range(self.mesh.segments):
            columns = np.concatenate([self._node_columns(2 * k + j) for j in range(3)])
            r = k * block_rows + np.repeat(np.arange(block_rows), 3 * nv)
            rows.append(r)
            cols.append(np.tile(columns, block_rows))

        if self.n_path:
            path_cols = np.asarray(self.family.path_columns)
            for j in range(self.n_nodes):
                rows.append(np.full(path_cols.size, self.n_defects + j))
                cols.append(self.n_state_vars + j * self.nu + path_cols)

        offset = self.n_defects + self.n_path
        terms = self.family.boundary_terms()
        rows.append(np.array([offset + row for row, _, _ in terms]))
        cols.append(np.array([self.state_index(node, comp) for _, node, comp in terms]))
        return np.concatenate(rows), np.concatenate(cols)

    def jacobian_structure(self) -> tuple[np.ndarray, np.ndarray]:
        """(rows, cols) of every structural nonzero, in a fixed order"""
        return self._jac_rows, self._jac_cols

    def sparsity(self) -> sparse.csr_matrix:
        data = np.ones(self._jac_rows.size)
        return sparse.csr_matrix((data, (self._jac_rows, self._jac_cols)),
                                 shape=(self.n_constraints, self.n_vars))

    def constraint_jacobian_values(self, z: np.ndarray) -> np.ndarray:
        """
        Analytic Jacobian values in the order of :meth:`jacobian_structure`, using the
        per-node dynamics derivatives of the family.
        """
        X, U = self.unpack(z)
        F = self.family.rate_jacobian(X, U, self.t)
        nx = self.nx
        nv = nx + self.nu
        h = self.h[:, None, None]
        eye = np.zeros((nx, nv))
        eye[:, :nx] = np.eye(nx)

        Fi, Fm, Fe = F[0:-1:2], F[1::2], F[2::2]
        interp = np.concatenate([-0.5 * eye - h / 8.0 * Fi,
                                 np.broadcast_to(eye, Fm.shape),
                                 -0.5 * eye + h / 8.0 * Fe], axis=2)
        simpson = np.concatenate([-eye - h / 6.0 * Fi,
                                  -4.0 * h / 6.0 * Fm,
                                  eye - h / 6.0 * Fe], axis=2)
        values = [np.concatenate([interp, simpson], axis=1).ravel()]

        if self.n_path:
            values.append(self.family.path_jacobian(U)[:, list(self.family.path_columns)].ravel())
        values.append(self.family.boundary_jacobian(X))
        return np.concatenate(values)

    def constraint_jacobian_analytic(self, z: np.ndarray) -> sparse.csr_matrix:
        values = self.constraint_jacobian_values(z)
        return sparse.csr_matrix((values, (self._jac_rows, self._jac_cols)),
                                 shape=(self.n_constraints, self.n_vars))

    #
    # guesses
    #

    def clip(self, z: np.ndarray) -> np.ndarray:
        return np.clip(z, self.lower, self.upper)

    def guess_from_trajectory(self, trajectory: DiscreteTrajectory) -> np.ndarray:
        """Interpolate a trajectory, possibly from another mesh, onto this mesh."""
        X_old = trajectory.augmented_states()
        U_old = trajectory.controls
        X = np.column_stack([np.interp(self.t, trajectory.times, X_old[:, j]) for j in range(self.nx)])
        U = np.column_stack([np.interp(self.t, trajectory.times, U_old[:, j]) for j in range(self.nu)])
        return self.clip(self.pack(X, self.family.normalize_controls(U)))


class DiscreteTrajectory(BaseModel):
    """
    A solution (or any decision vector) unpacked node by node. Times and states are canonical;
    ``sensitive_cost`` is in output units (kg for rendezvous, scaled radius for orbit raising).
    """
    model_config = ConfigDict(arbitrary_types_allowed=True)

    family: ProblemFamily
    times: np.ndarray
    states: np.ndarray
    state_labels: tuple[str, ...]
    mass: np.ndarray
    lambda_t: np.ndarray
    controls: np.ndarray
    control_labels: tuple[str, ...]
    objective: float
    terminal_part: float
    penalty_part: float
    sensitive_cost: float
    max_defect: float
    boundary_residual: float
    path_residual: float = 0.0
    report: SolverReport | None = None

    def augmented_states(self) -> np.ndarray:
        """The transcribed state columns, in NLP order."""
        if self.family is ProblemFamily.MEE_RENDEZVOUS:
            return np.column_stack([self.states, self.mass, self.lambda_t])
        return np.column_stack([self.states, self.lambda_t])


def build_nlp(problem: ProblemDefinition, mesh: Mesh) -> NlpProblem:
    """
    Transcribe ``problem`` on ``mesh``.

    :raises WindowOutsideHorizonError: if the desensitization window is not inside [t0, tf].
    """
    cfg = problem.desensitization
    tol = 1e-12 * (problem.tf - problem.t0)
    if cfg.t1 < problem.t0 - tol or cfg.t2 > problem.tf + tol:
        raise WindowOutsideHorizonError(cfg.t1, cfg.t2, problem.t0, problem.tf)
    if abs(mesh.boundaries[0] - problem.t0) > tol or abs(mesh.boundaries[-1] - problem.tf) > tol:
        raise ValueError("the mesh does not cover the problem horizon")
    for edge in (cfg.t1, cfg.t2):
        merge = BOUNDARY_TOLERANCE * (problem.tf - problem.t0)
        if problem.t0 + merge < edge < problem.tf - merge and not mesh.has_boundary(edge):
            logger.warning(f"Window edge {edge} is not a mesh boundary; the penalty quadrature will be inexact")
    nlp = NlpProblem(problem, mesh)
    logger.debug(f"NLP for '{problem.name}': {nlp.n_vars} variables, {nlp.n_constraints} constraints, "
                 f"{mesh.segments} segments")
    return nlp


def build_mesh(problem: ProblemDefinition, segments: int) -> Mesh:
    """Uniform mesh with the desensitization window edges as boundaries."""
    cfg = problem.desensitization
    return Mesh.uniform(problem.t0, problem.tf, segments, breakpoints=(cfg.t1, cfg.t2))


def initial_guess(problem: ProblemDefinition, mesh: Mesh) -> np.ndarray:
    """
    Default starting point: linear element interpolation with the target longitude unwrapped,
    half throttle, tangential steering and a linear mass decrease for rendezvous; the
    classic linear-radius guess for orbit raising. lambda_T starts at zero.
    """
    nlp = NlpProblem(problem, mesh)
    X, U = nlp.family.initial_guess(nlp.t)
    return nlp.pack(X, U)


def extract_solution(nlp: NlpProblem, z: np.ndarray, report: SolverReport | None = None) -> DiscreteTrajectory:
    """
    Unpack a decision vector into a :class:`DiscreteTrajectory` and evaluate its cost and residuals.
    Steering vectors are reported at unit length; ``path_residual`` is that of ``z`` itself.

    :raises DimensionMismatchError: if ``z`` does not match the layout.
    """
    X, U = nlp.unpack(z)
    family = nlp.family
    terminal, penalty = nlp.objective_parts(z)
    defects, path, boundary = nlp.constraint_groups(nlp.constraints(z))

    n_elements = nlp.nx - (2 if nlp.problem.family is ProblemFamily.MEE_RENDEZVOUS else 1)
    return DiscreteTrajectory(
        family=nlp.problem.family,
        times=nlp.t.copy(),
        states=X[:, :n_elements].copy(),
        state_labels=family.state_labels[:n_elements],
        mass=np.asarray(family.mass(X, nlp.t), dtype=float).copy(),
        lambda_t=X[:, family.costate_index].copy(),
        controls=np.array(family.normalize_controls(U), dtype=float),
        control_labels=family.control_labels,
        objective=terminal + penalty,
        terminal_part=terminal,
        penalty_part=penalty,
        sensitive_cost=family.sensitive_cost(X),
        max_defect=float(np.max(np.abs(defects))) if defects.size else 0.0,
        boundary_residual=float(np.max(np.abs(boundary))) if boundary.size else 0.0,
        path_residual=float(np.max(np.abs(path))) if path.size else 0.0,
        report=report,
    )


def propagate_hermite_simpson(rates: Callable[[np.ndarray, float], np.ndarray], x0: np.ndarray,
                              mesh: Mesh) -> np.ndarray:
    """
    March the implicit Hermite-Simpson scheme forward over ``mesh`` for an autonomous
    control-free right-hand side ``rates(x, t)``. Returns the states at the segment boundaries.
    """
    x = np.asarray(x0, dtype=float)
    out = [x]
    for ta, tb in zip(mesh.boundaries[:-1], mesh.boundaries[1:]):
        h = tb - ta
        fa = rates(x, ta)

        def residual(xe, xa=x, fa=fa, ta=ta, h=h):
            fe = rates(xe, ta + h)
            xm = 0.5 * (xa + xe) + h / 8.0 * (fa - fe)
            fm = rates(xm, ta + 0.5 * h)
            return xe - xa - h / 6.0 * (fa + 4.0 * fm + fe)

        sol = root(residual, x + h * fa, method="hybr", tol=1e-14)
        x = sol.x
        out.append(x)
    return np.asarray(out)


# resolve the forward reference to the solver report
def _rebuild_models() -> None:
    from nlp_solver import SolverReport  # noqa: F401
    DiscreteTrajectory.model_rebuild()


_rebuild_models()
