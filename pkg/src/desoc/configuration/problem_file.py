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
Problem files: the JSON documents that describe one problem together with its mesh,
solver and perturbation settings.

Rendezvous files use physical units (km, km/s, kg, N, s) and days for all times.
Orbit-raising files use the scaled units of the problem. The ``family`` key selects
the schema; unknown keys are rejected.
"""
from __future__ import annotations

import logging
from pathlib import Path
from typing import Annotated, Literal
try:
    from typing import Self
except ImportError:  # Python < 3.11
    from typing_extensions import Self

from pydantic import BaseModel, ConfigDict, Field, TypeAdapter, model_validator

from analysis import PerturbationMode, PerturbationSpec
from astro import cart_to_mee
from configuration.problem_library import ProblemKey, ProblemLibrary
from errors import ProblemFileError
from models import (ASTRONOMICAL_UNIT, MU_SUN, SECONDS_PER_DAY, STANDARD_GRAVITY, CanonicalScaling, CartesianState,
                    DesensitizationConfig, GravityModel, OrbitRaisingModel, PolarState, SpacecraftModel)
from nlp_solver import SolverOptions
from transcription import ProblemDefinition, ProblemFamily

logger = logging.getLogger(__name__)


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class CartesianSection(CartesianState):
    model_config = ConfigDict(extra="forbid")


class PolarSection(PolarState):
    model_config = ConfigDict(extra="forbid")


class OrbitRaisingSection(OrbitRaisingModel):
    model_config = ConfigDict(extra="forbid")


class SolverSection(SolverOptions):
    model_config = ConfigDict(extra="forbid")


class PerturbationSection(PerturbationSpec):
    model_config = ConfigDict(extra="forbid")


class SpacecraftSection(_Section):
    m0: float = Field(gt=0.0, description="initial mass, kg")
    thrust: float = Field(gt=0.0, description="nominal thrust, N")
    isp: float = Field(gt=0.0, description="specific impulse, s")
    g0: float = Field(default=STANDARD_GRAVITY, gt=0.0)


class DesensitizationSection(_Section):
    """Missing t1 / t2 select the full horizon."""
    q_weight: float = Field(default=0.0, ge=0.0)
    t1: float | None = None
    t2: float | None = None
    rho: float = Field(default=1e-5, gt=0.0, description="trigger smoothing width, in file time units")
    k_vr: float = 1.0
    k_vt: float = 1.0
    k_vn: float = 1.0
    k_m: float = 1.0

    @model_validator(mode="after")
    def _ordered(self) -> Self:
        if self.t1 is not None and self.t2 is not None and self.t2 < self.t1:
            raise ValueError(f"window end t2={self.t2} is before its start t1={self.t1}")
        return self


class MeshSection(_Section):
    segments: int = Field(default=40, ge=1)


class _ProblemFileBase(_Section):
    name: str = ""
    tf: float = Field(gt=0.0)
    desensitization: DesensitizationSection = DesensitizationSection()
    mesh: MeshSection = MeshSection()
    solver: SolverSection = SolverSection()
    perturbation: PerturbationSection | None = None
    seed: int = 0
    notes: dict[str, str] = Field(default_factory=dict, description="where the numbers come from")


class RendezvousProblemFile(_ProblemFileBase):
    family: Literal["mee_rendezvous"] = "mee_rendezvous"
    mu: float = Field(default=MU_SUN, gt=0.0, description="km^3/s^2")
    length_unit: float = Field(default=ASTRONOMICAL_UNIT, gt=0.0, description="km per canonical length unit")
    t0: float = 0.0
    initial_state: CartesianSection
    target_state: CartesianSection
    spacecraft: SpacecraftSection
    revolutions: int | None = None
    mass_floor: float = Field(default=0.0, ge=0.0, description="kg")

    @model_validator(mode="after")
    def _horizon(self) -> Self:
        if self.tf <= self.t0:
            raise ValueError("tf must be after t0")
        if self.mass_floor >= self.spacecraft.m0:
            raise ValueError("the mass floor must be below the initial mass")
        return self


class OrbitRaisingProblemFile(_ProblemFileBase):
    family: Literal["orbit_raising"] = "orbit_raising"
    mu: float = Field(default=1.0, gt=0.0)
    initial_state: PolarSection = PolarSection(r=1.0, u=0.0, v=1.0)
    model: OrbitRaisingSection = OrbitRaisingSection()

    @model_validator(mode="after")
    def _horizon(self) -> Self:
        if self.tf <= self.model.t0:
            raise ValueError("tf must be after the model start time t0")
        if self.tf >= self.model.burnout_time():
            raise ValueError(f"the propellant runs out at t={self.model.burnout_time():.6g}, before tf")
        return self


ProblemFile = Annotated[RendezvousProblemFile | OrbitRaisingProblemFile, Field(discriminator="family")]

problem_file_adapter: TypeAdapter[ProblemFile] = TypeAdapter(ProblemFile)


def parse_problem_file(text: str | bytes) -> RendezvousProblemFile | OrbitRaisingProblemFile:
    """:raises ValidationError: for malformed JSON or schema violations."""
    return problem_file_adapter.validate_json(text)


def load_problem_file(source) -> RendezvousProblemFile | OrbitRaisingProblemFile:
    """
    Load and validate a problem file. ``source`` is a path or the key of a bundled problem.

    :raises ProblemFileError: if the file cannot be read or the key is unknown.
    :raises ValidationError: if the content does not match the schema.
    """
    key = source.value if isinstance(source, ProblemKey) else str(source)
    path = Path(key)
    if not path.is_file():
        if key not in ProblemLibrary.all_keys():
            raise ProblemFileError(key, "no such file or bundled problem")
        path = ProblemLibrary.path(ProblemKey(key))
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ProblemFileError(str(path), f"cannot be read: {exc}") from exc
    pf = parse_problem_file(text)
    logger.debug(f"Loaded {pf.family} problem '{pf.name}' from {path}")
    return pf


def dump_problem_file(pf: RendezvousProblemFile | OrbitRaisingProblemFile) -> str:
    return pf.model_dump_json(indent=2)


def apply_overrides(pf: RendezvousProblemFile | OrbitRaisingProblemFile, *,
                    q_weight: float | None = None, t1: float | None = None, t2: float | None = None,
                    rho: float | None = None, segments: int | None = None, seed: int | None = None,
                    mode: PerturbationMode | str | None = None, thrust_pct: float | None = None,
                    thrust_abs: list[float] | None = None) -> RendezvousProblemFile | OrbitRaisingProblemFile:
    """
    A validated copy of ``pf`` with the given values replaced; ``None`` keeps the file value.
    ``thrust_pct`` / ``thrust_abs`` replace the perturbation thrust values of the file.

    :raises ValidationError: if the result violates the schema.
    """
    data = pf.model_dump()
    window = data["desensitization"]
    for key, value in (("q_weight", q_weight), ("t1", t1), ("t2", t2), ("rho", rho)):
        if value is not None:
            window[key] = value
    if segments is not None:
        data["mesh"]["segments"] = segments
    if seed is not None:
        data["seed"] = seed

    if thrust_pct is not None or thrust_abs is not None:
        previous = data["perturbation"] or {}
        data["perturbation"] = {
            "absolute": list(thrust_abs or []),
            "relative": [thrust_pct / 100.0] if thrust_pct is not None else [],
            "mode": previous.get("mode", PerturbationMode.RESOLVE),
        }
    if mode is not None:
        if data["perturbation"] is None:
            raise ProblemFileError(pf.name, "a perturbation mode was given but no thrust perturbation")
        data["perturbation"]["mode"] = PerturbationMode(mode)
    return problem_file_adapter.validate_python(data)


def solver_options(pf: RendezvousProblemFile | OrbitRaisingProblemFile) -> SolverOptions:
    """The solver settings of the file, seeded with the file seed."""
    return SolverOptions.model_validate(pf.solver.model_dump() | {"seed": pf.seed})


def _window(section: DesensitizationSection, t0: float, tf: float, to_canonical) -> DesensitizationConfig:
    t1 = t0 if section.t1 is None else section.t1
    t2 = tf if section.t2 is None else section.t2
    return DesensitizationConfig(q_weight=section.q_weight, t1=float(to_canonical(t1)), t2=float(to_canonical(t2)),
                                 rho=float(to_canonical(section.rho)),
                                 k_vr=section.k_vr, k_vt=section.k_vt, k_vn=section.k_vn, k_m=section.k_m)


def to_problem_definition(pf: RendezvousProblemFile | OrbitRaisingProblemFile) -> ProblemDefinition:
    """
    Convert a problem file into canonical units: one astronomical unit (or ``length_unit``),
    the time unit that makes mu = 1 and the initial mass as mass unit.

    :raises AstroError: if a boundary state cannot be expressed in equinoctial elements.
    """
    if isinstance(pf, OrbitRaisingProblemFile):
        model = OrbitRaisingModel.model_validate(pf.model.model_dump())
        return ProblemDefinition(family=ProblemFamily.ORBIT_RAISING, name=pf.name, t0=model.t0, tf=pf.tf,
                                 initial_state=PolarState.model_validate(pf.initial_state.model_dump()),
                                 orbit_raising=model, gravity=GravityModel(mu=pf.mu),
                                 desensitization=_window(pf.desensitization, model.t0, pf.tf, float))

    physical = GravityModel(mu=pf.mu)
    scaling = CanonicalScaling.from_gravity(physical, length_unit=pf.length_unit, mass_unit=pf.spacecraft.m0)
    gravity = GravityModel(mu=scaling.mu(physical))

    def canonical_state(state: CartesianSection):
        cart = CartesianState(position=tuple(scaling.length_to_canonical(state.r).tolist()),
                              velocity=tuple(scaling.velocity_to_canonical(state.v).tolist()))
        return cart_to_mee(cart, gravity)

    def days(value):
        return scaling.days_to_canonical(value)

    spacecraft = SpacecraftModel(m0=pf.spacecraft.m0, thrust=pf.spacecraft.thrust, isp=pf.spacecraft.isp,
                                 g0=pf.spacecraft.g0)
    return ProblemDefinition(family=ProblemFamily.MEE_RENDEZVOUS, name=pf.name,
                             t0=float(days(pf.t0)), tf=float(days(pf.tf)),
                             initial_state=canonical_state(pf.initial_state),
                             target_state=canonical_state(pf.target_state),
                             initial_mass=1.0, mass_floor=pf.mass_floor / pf.spacecraft.m0,
                             spacecraft=spacecraft, gravity=gravity,
                             desensitization=_window(pf.desensitization, pf.t0, pf.tf, days),
                             scaling=scaling, file_time_unit=SECONDS_PER_DAY, revolutions=pf.revolutions)
