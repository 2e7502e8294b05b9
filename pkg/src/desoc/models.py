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

import math
from typing import ClassVar
try:
    from typing import Self
except ImportError:  # Python < 3.11
    from typing_extensions import Self

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, computed_field, field_validator, model_validator

STANDARD_GRAVITY = 9.80665
"""Sea level gravity g0 in m/s^2"""

SECONDS_PER_DAY = 86400.0

ASTRONOMICAL_UNIT = 1.49597870691e8
"""km"""

MU_SUN = 1.32712440018e11
"""km^3/s^2"""


class GravityModel(BaseModel):
    mu: float = Field(default=1.0, gt=0.0, description="Gravitational parameter, km^3/s^2 or 1.0 in canonical units")


class CanonicalScaling(BaseModel):
    """
    Scale factors between physical units (km, s, kg) and the canonical units
    the transcription works in.

    With :meth:`from_gravity` the time unit is chosen so that the canonical
    gravitational parameter becomes 1.
    """
    length_unit: float = Field(default=1.0, gt=0.0, description="km per canonical length unit")
    time_unit: float = Field(default=1.0, gt=0.0, description="s per canonical time unit")
    mass_unit: float = Field(default=1.0, gt=0.0, description="kg per canonical mass unit")

    @classmethod
    def from_gravity(cls, gravity: GravityModel, length_unit: float = ASTRONOMICAL_UNIT,
                     mass_unit: float = 1.0) -> CanonicalScaling:
        time_unit = math.sqrt(length_unit ** 3 / gravity.mu)
        return cls(length_unit=length_unit, time_unit=time_unit, mass_unit=mass_unit)

    @property
    def velocity_unit(self) -> float:
        """km/s per canonical velocity unit"""
        return self.length_unit / self.time_unit

    @property
    def acceleration_unit(self) -> float:
        """m/s^2 per canonical acceleration unit"""
        return self.length_unit * 1000.0 / self.time_unit ** 2

    @property
    def force_unit(self) -> float:
        """N per canonical force unit"""
        return self.mass_unit * self.acceleration_unit

    def mu(self, gravity: GravityModel) -> float:
        return gravity.mu * self.time_unit ** 2 / self.length_unit ** 3

    def length_to_canonical(self, km):
        return np.asarray(km) / self.length_unit

    def length_from_canonical(self, lu):
        return np.asarray(lu) * self.length_unit

    def velocity_to_canonical(self, km_s):
        return np.asarray(km_s) / self.velocity_unit

    def velocity_from_canonical(self, vu):
        return np.asarray(vu) * self.velocity_unit

    def time_to_canonical(self, seconds):
        return np.asarray(seconds) / self.time_unit

    def time_from_canonical(self, tu):
        return np.asarray(tu) * self.time_unit

    def days_to_canonical(self, days):
        return self.time_to_canonical(np.asarray(days) * SECONDS_PER_DAY)

    def mass_to_canonical(self, kg):
        return np.asarray(kg) / self.mass_unit

    def mass_from_canonical(self, mu):
        return np.asarray(mu) * self.mass_unit

    def thrust_to_canonical(self, newton):
        return np.asarray(newton) / self.force_unit

    def thrust_from_canonical(self, fu):
        return np.asarray(fu) * self.force_unit


class CartesianState(BaseModel):
    position: tuple[float, float, float] = Field(description="km")
    velocity: tuple[float, float, float] = Field(description="km/s")

    @field_validator("position")
    @classmethod
    def _nonzero_position(cls, value: tuple[float, float, float]) -> tuple[float, float, float]:
        if math.hypot(*value) <= 0.0:
            raise ValueError("position vector must not be zero")
        return value

    @property
    def r(self) -> np.ndarray:
        return np.array(self.position, dtype=float)

    @property
    def v(self) -> np.ndarray:
        return np.array(self.velocity, dtype=float)


class MeeState(BaseModel):
    """Modified equinoctial elements. L is kept unwrapped."""
    p: float = Field(gt=0.0, description="semi-latus rectum")
    f: float = Field(default=0.0)
    g: float = Field(default=0.0)
    h: float = Field(default=0.0)
    k: float = Field(default=0.0)
    L: float = Field(default=0.0, description="true longitude, rad")

    @classmethod
    def from_array(cls, x) -> MeeState:
        p, f, g, h, k, L = (float(v) for v in x)
        return cls(p=p, f=f, g=g, h=h, k=k, L=L)

    def as_array(self) -> np.ndarray:
        return np.array([self.p, self.f, self.g, self.h, self.k, self.L])

    @property
    def eccentricity(self) -> float:
        return math.hypot(self.f, self.g)

    @property
    def is_elliptic(self) -> bool:
        return self.f ** 2 + self.g ** 2 < 1.0


class SpacecraftModel(BaseModel):
    m0: float = Field(gt=0.0, description="initial mass, kg")
    thrust: float = Field(ge=0.0, description="maximum thrust, N")
    isp: float = Field(gt=0.0, description="specific impulse, s")
    g0: float = Field(default=STANDARD_GRAVITY, gt=0.0, description="m/s^2")

    @computed_field
    @property
    def c(self) -> float:
        """Effective exhaust velocity"""
        return self.isp * self.g0

    def to_canonical(self, scaling: CanonicalScaling) -> SpacecraftModel:
        """
        The same spacecraft with every field expressed in canonical units.
        Isp and g0 are scaled separately so that ``c`` comes out as a canonical velocity.
        """
        return SpacecraftModel(m0=float(scaling.mass_to_canonical(self.m0)),
                               thrust=float(scaling.thrust_to_canonical(self.thrust)),
                               isp=self.isp / scaling.time_unit,
                               g0=self.g0 / scaling.acceleration_unit)


class ControlSample(BaseModel):
    norm_tolerance: ClassVar[float] = 1e-6

    delta: float = Field(ge=0.0, le=1.0, description="throttle")
    u_hat: tuple[float, float, float] = Field(default=(0.0, 1.0, 0.0), description="[u_r, u_t, u_n]")

    @field_validator("u_hat")
    @classmethod
    def _unit_norm(cls, value: tuple[float, float, float]) -> tuple[float, float, float]:
        if abs(math.hypot(*value) - 1.0) >= cls.norm_tolerance:
            raise ValueError(f"steering vector {value} is not a unit vector")
        return value


class DynamicsEvaluation(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    drift: np.ndarray = Field(description="A(x, t), 6-vector")
    control_matrix: np.ndarray = Field(description="B(x, t), 6x3")
    control_accel: np.ndarray = Field(description="(T/m) delta u_hat")
    state_rate: np.ndarray
    mass_rate: float


class DesensitizationConfig(BaseModel):
    """
    Weight, trigger window and surrogate costates of the thrust desensitization penalty.
    All values are in the time units of the problem they belong to.
    """
    q_weight: float = Field(default=0.0, ge=0.0)
    t1: float = Field(default=0.0)
    t2: float = Field(default=0.0)
    rho: float = Field(default=1e-5, gt=0.0, description="trigger smoothing width")
    k_vr: float = 1.0
    k_vt: float = 1.0
    k_vn: float = 1.0
    k_m: float = 1.0

    @model_validator(mode="after")
    def _ordered_window(self) -> Self:
        if self.t2 < self.t1:
            raise ValueError(f"window end t2={self.t2} is before its start t1={self.t1}")
        return self

    @property
    def k_velocity(self) -> np.ndarray:
        return np.array([self.k_vr, self.k_vt, self.k_vn])


class PolarState(BaseModel):
    r: float = Field(gt=0.0)
    u: float = 0.0
    v: float = 1.0

    def as_array(self) -> np.ndarray:
        return np.array([self.r, self.u, self.v])


class OrbitRaisingModel(BaseModel):
    """
    Scaled parameters of the maximum-radius transfer. The steering angle phi is the
    control; ``phi_min`` / ``phi_max`` are its bounds.
    """
    m0: float = Field(default=1.0, gt=0.0)
    mdot: float = Field(default=-0.0749, le=0.0)
    thrust: float = Field(default=0.1405, ge=0.0)
    t0: float = 0.0
    phi_min: float = 0.0
    phi_max: float = 2.0 * math.pi

    def mass(self, t):
        return self.m0 - abs(self.mdot) * (np.asarray(t) - self.t0)

    def burnout_time(self) -> float:
        if self.mdot == 0.0:
            return math.inf
        return self.t0 + self.m0 / abs(self.mdot)
