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
Two-body astrodynamics helpers: conversions between Cartesian states and modified
equinoctial elements (MEE) and an analytic Kepler propagator.

The element definitions follow the usual Walker convention::

    p = a (1 - e^2)
    f = e cos(w + RAAN)        g = e sin(w + RAAN)
    h = tan(i/2) cos(RAAN)     k = tan(i/2) sin(RAAN)
    L = RAAN + w + nu
"""
from __future__ import annotations

import math

import numpy as np

from errors import DegenerateOrbitError, KeplerNonConvergenceError, RetrogradeSingularityError
from models import CartesianState, GravityModel, MeeState

ANGULAR_MOMENTUM_TOLERANCE = 1e-12
"""relative to |r| |v|"""

RETROGRADE_TOLERANCE = 1e-8
"""rad distance of the inclination from pi"""

KEPLER_TOLERANCE = 1e-14
KEPLER_MAX_ITERATIONS = 50

TWO_PI = 2.0 * math.pi


def equinoctial_frame(h: float, k: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    The unit vectors f_hat, g_hat, w_hat of the equinoctial reference frame.
    """
    s2 = 1.0 + h * h + k * k
    f_hat = np.array([1.0 - k * k + h * h, 2.0 * k * h, -2.0 * k]) / s2
    g_hat = np.array([2.0 * k * h, 1.0 + k * k - h * h, 2.0 * h]) / s2
    w_hat = np.array([2.0 * k, -2.0 * h, 1.0 - k * k - h * h]) / s2
    return f_hat, g_hat, w_hat


def cart_to_mee(state: CartesianState, gravity: GravityModel) -> MeeState:
    """
    Convert an inertial Cartesian state into modified equinoctial elements.

    The true longitude is returned in (-pi, pi]. Callers that need a continuous
    longitude over several revolutions unwrap it themselves.

    :raises DegenerateOrbitError: if the orbit is rectilinear.
    :raises RetrogradeSingularityError: if the orbit is (almost) retrograde equatorial.
    """
    r = state.r
    v = state.v
    mu = gravity.mu

    h_vec = np.cross(r, v)
    h_mag = float(np.linalg.norm(h_vec))
    if h_mag <= ANGULAR_MOMENTUM_TOLERANCE * np.linalg.norm(r) * max(np.linalg.norm(v), 1e-300):
        raise DegenerateOrbitError(h_mag)

    w_hat = h_vec / h_mag
    if w_hat[2] <= -1.0 + 0.5 * RETROGRADE_TOLERANCE ** 2:
        raise RetrogradeSingularityError(math.acos(max(-1.0, min(1.0, float(w_hat[2])))))

    p = h_mag * h_mag / mu
    k = w_hat[0] / (1.0 + w_hat[2])
    h = -w_hat[1] / (1.0 + w_hat[2])

    f_hat, g_hat, _ = equinoctial_frame(h, k)

    e_vec = np.cross(v, h_vec) / mu - r / np.linalg.norm(r)
    f = float(np.dot(e_vec, f_hat))
    g = float(np.dot(e_vec, g_hat))
    L = math.atan2(float(np.dot(r, g_hat)), float(np.dot(r, f_hat)))

    return MeeState(p=p, f=f, g=g, h=float(h), k=float(k), L=L)


def mee_to_cart(x: MeeState, gravity: GravityModel) -> CartesianState:
    """
    Convert modified equinoctial elements back into an inertial Cartesian state.
    This is the inverse of :func:`cart_to_mee` up to round-off.
    """
    r_vec, v_vec = mee_to_cart_arrays(x.as_array(), gravity.mu)
    return CartesianState(position=tuple(r_vec.tolist()), velocity=tuple(v_vec.tolist()))


def mee_to_cart_arrays(x: np.ndarray, mu: float) -> tuple[np.ndarray, np.ndarray]:
    """
    Array version of :func:`mee_to_cart`. ``x`` may be a single 6-vector or an
    array of shape (n, 6), in which case positions and velocities of shape (n, 3)
    are returned.
    """
    x = np.asarray(x, dtype=float)
    p, f, g, h, k, L = np.moveaxis(x, -1, 0)
    cos_l = np.cos(L)
    sin_l = np.sin(L)
    alpha2 = h * h - k * k
    s2 = 1.0 + h * h + k * k
    w = 1.0 + f * cos_l + g * sin_l
    radius = p / w
    sqrt_mu_p = np.sqrt(mu / p)

    position = np.stack([
        radius / s2 * (cos_l + alpha2 * cos_l + 2.0 * h * k * sin_l),
        radius / s2 * (sin_l - alpha2 * sin_l + 2.0 * h * k * cos_l),
        2.0 * radius / s2 * (h * sin_l - k * cos_l),
    ], axis=-1)
    velocity = np.stack([
        -sqrt_mu_p / s2 * (sin_l + alpha2 * sin_l - 2.0 * h * k * cos_l + g - 2.0 * f * h * k + alpha2 * g),
        -sqrt_mu_p / s2 * (-cos_l + alpha2 * cos_l + 2.0 * h * k * sin_l - f + 2.0 * g * h * k + alpha2 * f),
        2.0 * sqrt_mu_p / s2 * (h * cos_l + k * sin_l + f * h + g * k),
    ], axis=-1)
    return position, velocity


def mee_eccentricity(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return np.hypot(x[..., 1], x[..., 2])


def mee_inclination(x) -> np.ndarray:
    """Inclination in radians"""
    x = np.asarray(x, dtype=float)
    return 2.0 * np.arctan(np.hypot(x[..., 3], x[..., 4]))


def orbital_period(x: MeeState, gravity: GravityModel) -> float:
    a = x.p / (1.0 - x.f ** 2 - x.g ** 2)
    return TWO_PI * math.sqrt(a ** 3 / gravity.mu)


def mean_motion(x: MeeState, gravity: GravityModel) -> float:
    a = x.p / (1.0 - x.f ** 2 - x.g ** 2)
    return math.sqrt(gravity.mu / a ** 3)


def solve_kepler(mean_anomaly: float, eccentricity: float) -> float:
    """
    Solve Kepler's equation ``M = E - e sin E`` for the eccentric anomaly with Newton's method.
    ``mean_anomaly`` is expected in [-pi, pi).

    :raises KeplerNonConvergenceError: if the iteration cap is reached.
    """
    e = eccentricity
    E = mean_anomaly if e < 0.8 else math.copysign(math.pi, mean_anomaly) if mean_anomaly != 0.0 else 0.0
    for _ in range(KEPLER_MAX_ITERATIONS):
        step = (E - e * math.sin(E) - mean_anomaly) / (1.0 - e * math.cos(E))
        E -= step
        if abs(step) < KEPLER_TOLERANCE:
            return E
    raise KeplerNonConvergenceError(mean_anomaly, eccentricity, KEPLER_MAX_ITERATIONS)


def _wrap(angle: float) -> tuple[float, int]:
    """Split an angle into a value in [-pi, pi) and the number of whole turns removed."""
    turns = math.floor((angle + math.pi) / TWO_PI)
    return angle - TWO_PI * turns, turns


def kepler_propagate(x: MeeState, dt: float, gravity: GravityModel) -> MeeState:
    """
    Propagate an elliptic orbit along a coast arc of duration ``dt``.

    Only the true longitude changes; it stays unwrapped, so a full period adds exactly 2 pi.

    :raises ValueError: for non-elliptic orbits.
    :raises KeplerNonConvergenceError: if Kepler's equation cannot be solved.
    """
    if not x.is_elliptic:
        raise ValueError(f"kepler_propagate needs an elliptic orbit, e={x.eccentricity}")
    if dt == 0.0:
        return x.model_copy()

    e = x.eccentricity
    n = mean_motion(x, gravity)
    varpi = math.atan2(x.g, x.f) if e > 0.0 else 0.0
    beta = math.sqrt(1.0 - e * e)

    nu, turns = _wrap(x.L - varpi)
    E0 = math.atan2(beta * math.sin(nu), e + math.cos(nu))
    M0 = E0 - e * math.sin(E0)

    M1, extra_turns = _wrap(M0 + n * dt)
    E1 = solve_kepler(M1, e)
    nu1 = math.atan2(beta * math.sin(E1), math.cos(E1) - e)

    L1 = varpi + nu1 + TWO_PI * (turns + extra_turns)
    return x.model_copy(update={"L": L1})
