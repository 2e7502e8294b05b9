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
Right-hand sides of both problem families.

Every public operation has an array counterpart (suffix ``_array``) that works on
stacks of nodes with shape (n, ...). The transcription only uses the array versions;
they do not check the mass floor because the NLP bounds keep the mass positive.
"""
from __future__ import annotations

import numpy as np

from errors import NonPositiveMassError
from models import (ControlSample, DesensitizationConfig, DynamicsEvaluation, GravityModel, MeeState,
                    OrbitRaisingModel, PolarState, SpacecraftModel)

MEE_STATE_DIM = 6


def _check_mass(mass, floor: float) -> None:
    if np.any(np.asarray(mass) <= floor):
        raise NonPositiveMassError(mass, floor)


#
# modified equinoctial elements
#

def mee_drift_array(x: np.ndarray, mu: float) -> np.ndarray:
    """A(x): only the true longitude moves on a Keplerian orbit."""
    x = np.asarray(x, dtype=float)
    p, f, g, L = x[..., 0], x[..., 1], x[..., 2], x[..., 5]
    w = 1.0 + f * np.cos(L) + g * np.sin(L)
    drift = np.zeros_like(x)
    drift[..., 5] = np.sqrt(mu * p) * (w / p) ** 2
    return drift


def mee_control_matrix_array(x: np.ndarray, mu: float) -> np.ndarray:
    """
    B(x) of the Gauss variational equations in MEE form, shape (..., 6, 3).
    Columns act on the radial, transverse and normal acceleration.
    """
    x = np.asarray(x, dtype=float)
    p, f, g, h, k, L = np.moveaxis(x, -1, 0)
    cos_l = np.cos(L)
    sin_l = np.sin(L)
    w = 1.0 + f * cos_l + g * sin_l
    s2 = 1.0 + h * h + k * k
    q = np.sqrt(p / mu)
    hk = h * sin_l - k * cos_l
    zero = np.zeros_like(p)

    b = np.empty(x.shape[:-1] + (6, 3))
    b[..., 0, :] = np.stack([zero, 2.0 * p / w * q, zero], axis=-1)
    b[..., 1, :] = np.stack([q * sin_l, q * ((w + 1.0) * cos_l + f) / w, -q * g * hk / w], axis=-1)
    b[..., 2, :] = np.stack([-q * cos_l, q * ((w + 1.0) * sin_l + g) / w, q * f * hk / w], axis=-1)
    b[..., 3, :] = np.stack([zero, zero, q * s2 * cos_l / (2.0 * w)], axis=-1)
    b[..., 4, :] = np.stack([zero, zero, q * s2 * sin_l / (2.0 * w)], axis=-1)
    b[..., 5, :] = np.stack([zero, zero, q * hk / w], axis=-1)
    return b


def mee_state_rate_array(x: np.ndarray, accel: np.ndarray, mu: float) -> np.ndarray:
    """x_dot = A(x) + B(x) accel"""
    b = mee_control_matrix_array(x, mu)
    return mee_drift_array(x, mu) + np.einsum("...ij,...j->...i", b, accel)


def mee_rates(x: MeeState, m: float, ctrl: ControlSample, sc: SpacecraftModel, g: GravityModel,
              mass_floor: float = 0.0) -> DynamicsEvaluation:
    """
    Evaluate the control-affine MEE dynamics and the mass flow.

    ``sc`` and ``g`` must use one consistent unit system (canonical in the transcription).

    :raises NonPositiveMassError: if ``m`` is not above ``mass_floor``.
    """
    _check_mass(m, mass_floor)
    xa = x.as_array()
    drift = mee_drift_array(xa, g.mu)
    b = mee_control_matrix_array(xa, g.mu)
    accel = sc.thrust / m * ctrl.delta * np.asarray(ctrl.u_hat)
    return DynamicsEvaluation(drift=drift,
                              control_matrix=b,
                              control_accel=accel,
                              state_rate=drift + b @ accel,
                              mass_rate=-sc.thrust / sc.c * ctrl.delta)


def thrust_costate_rate_mee_array(delta, u_hat, m, c: float, cfg: DesensitizationConfig):
    delta = np.asarray(delta, dtype=float)
    m = np.asarray(m, dtype=float)
    k_dot_u = np.asarray(u_hat, dtype=float) @ cfg.k_velocity
    return -(delta / m) * (k_dot_u - cfg.k_m * m / c)


def thrust_costate_rate_mee(ctrl: ControlSample, m: float, sc: SpacecraftModel,
                            cfg: DesensitizationConfig) -> float:
    """
    Rate of the thrust costate with the surrogate constant velocity and mass costates.

    :raises NonPositiveMassError: if ``m`` is not positive.
    """
    _check_mass(m, 0.0)
    return float(thrust_costate_rate_mee_array(ctrl.delta, ctrl.u_hat, m, sc.c, cfg))


def mee_augmented_rates_array(states: np.ndarray, controls: np.ndarray, sc: SpacecraftModel, mu: float,
                              cfg: DesensitizationConfig) -> np.ndarray:
    """
    Rates of the transcribed rendezvous state [p, f, g, h, k, L, m, lambda_T] for
    controls [delta, u_r, u_t, u_n]. Both arrays have a leading node axis.
    """
    x = states[..., :6]
    m = states[..., 6]
    delta = controls[..., 0]
    u_hat = controls[..., 1:4]

    accel = (sc.thrust * delta / m)[..., None] * u_hat
    rates = np.empty_like(states)
    rates[..., :6] = mee_state_rate_array(x, accel, mu)
    rates[..., 6] = -sc.thrust / sc.c * delta
    rates[..., 7] = thrust_costate_rate_mee_array(delta, u_hat, m, sc.c, cfg)
    return rates


def mee_augmented_jacobian_array(states: np.ndarray, controls: np.ndarray, sc: SpacecraftModel, mu: float,
                                 cfg: DesensitizationConfig, element_step: float = 1e-7) -> np.ndarray:
    """
    Jacobian of :func:`mee_augmented_rates_array` with respect to [state, control],
    shape (n, 8, 12).

    Mass, thrust costate and control columns are analytic. The six element columns
    use central differences, vectorised over the nodes.
    """
    n = states.shape[0]
    x = states[:, :6]
    m = states[:, 6]
    delta = controls[:, 0]
    u_hat = controls[:, 1:4]
    b = mee_control_matrix_array(x, mu)
    a_over_m = sc.thrust / m

    jac = np.zeros((n, 8, 12))

    for j in range(6):
        step = element_step * np.maximum(1.0, np.abs(x[:, j]))
        plus = states.copy()
        minus = states.copy()
        plus[:, j] += step
        minus[:, j] -= step
        diff = (mee_augmented_rates_array(plus, controls, sc, mu, cfg)
                - mee_augmented_rates_array(minus, controls, sc, mu, cfg))
        jac[:, :6, j] = diff[:, :6] / (2.0 * step)[:, None]

    # mass column
    b_u = np.einsum("nij,nj->ni", b, u_hat)
    jac[:, :6, 6] = -(a_over_m * delta / m)[:, None] * b_u
    k_dot_u = u_hat @ cfg.k_velocity
    jac[:, 7, 6] = delta * k_dot_u / m ** 2

    # controls: delta, then u_hat
    jac[:, :6, 8] = a_over_m[:, None] * b_u
    jac[:, 6, 8] = -sc.thrust / sc.c
    jac[:, 7, 8] = -k_dot_u / m + cfg.k_m / sc.c
    jac[:, :6, 9:12] = (a_over_m * delta)[:, None, None] * b
    jac[:, 7, 9:12] = -(delta / m)[:, None] * cfg.k_velocity[None, :]
    return jac


#
# time trigger
#

def trigger(t, cfg: DesensitizationConfig):
    """
    Smooth window factor mu1(t) * mu2(t), close to 1 for t1 < t < t2 and close to 0 elsewhere.

    mu2 uses ``1 - tanh`` so that the product switches off after t2.
    Accepts scalars or arrays.
    """
    t = np.asarray(t, dtype=float)
    mu1 = 0.5 * (1.0 + np.tanh((t - cfg.t1) / cfg.rho))
    mu2 = 0.5 * (1.0 - np.tanh((t - cfg.t2) / cfg.rho))
    value = mu1 * mu2
    return float(value) if value.ndim == 0 else value


#
# orbit raising in polar coordinates
#

def orbit_raising_rates_array(r, u, v, phi, t, model: OrbitRaisingModel, mu: float):
    accel = model.thrust / model.mass(t)
    r_dot = np.asarray(u, dtype=float)
    u_dot = v * v / r - mu / (r * r) + accel * np.sin(phi)
    v_dot = -u * v / r + accel * np.cos(phi)
    return r_dot, u_dot, v_dot


def orbit_raising_rates(s: PolarState, phi: float, model: OrbitRaisingModel, t: float, g: GravityModel,
                        mass_floor: float = 0.0) -> tuple[float, float, float]:
    """
    :raises NonPositiveMassError: if the mass at ``t`` is not above ``mass_floor``.
    """
    _check_mass(model.mass(t), mass_floor)
    r_dot, u_dot, v_dot = orbit_raising_rates_array(s.r, s.u, s.v, phi, t, model, g.mu)
    return float(r_dot), float(u_dot), float(v_dot)


def orbit_raising_costate_rate_array(phi, t, model: OrbitRaisingModel):
    return -(np.sin(phi) + np.cos(phi)) / (model.m0 + model.mdot * (np.asarray(t) - model.t0))


def orbit_raising_costate_rate(phi: float, model: OrbitRaisingModel, t: float, mass_floor: float = 0.0) -> float:
    """
    :raises NonPositiveMassError: if the mass at ``t`` is not above ``mass_floor``.
    """
    _check_mass(model.mass(t), mass_floor)
    return float(orbit_raising_costate_rate_array(phi, t, model))


def orbit_raising_augmented_rates_array(states: np.ndarray, controls: np.ndarray, t: np.ndarray,
                                        model: OrbitRaisingModel, mu: float) -> np.ndarray:
    """Rates of [r, u, v, lambda_T] for the control [phi]."""
    r, u, v = states[..., 0], states[..., 1], states[..., 2]
    phi = controls[..., 0]
    rates = np.empty_like(states)
    rates[..., 0], rates[..., 1], rates[..., 2] = orbit_raising_rates_array(r, u, v, phi, t, model, mu)
    rates[..., 3] = orbit_raising_costate_rate_array(phi, t, model)
    return rates


def orbit_raising_augmented_jacobian_array(states: np.ndarray, controls: np.ndarray, t: np.ndarray,
                                           model: OrbitRaisingModel, mu: float) -> np.ndarray:
    """Analytic Jacobian of :func:`orbit_raising_augmented_rates_array`, shape (n, 4, 5)."""
    r, u, v = states[:, 0], states[:, 1], states[:, 2]
    phi = controls[:, 0]
    mass = model.mass(t)
    accel = model.thrust / mass
    sin_p = np.sin(phi)
    cos_p = np.cos(phi)

    jac = np.zeros((states.shape[0], 4, 5))
    jac[:, 0, 1] = 1.0
    jac[:, 1, 0] = -v * v / r ** 2 + 2.0 * mu / r ** 3
    jac[:, 1, 2] = 2.0 * v / r
    jac[:, 1, 4] = accel * cos_p
    jac[:, 2, 0] = u * v / r ** 2
    jac[:, 2, 1] = -v / r
    jac[:, 2, 2] = -u / r
    jac[:, 2, 4] = -accel * sin_p
    jac[:, 3, 4] = -(cos_p - sin_p) / mass
    return jac
