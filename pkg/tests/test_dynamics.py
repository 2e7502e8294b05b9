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
import math

import numpy as np
import pytest

from dynamics import (mee_augmented_jacobian_array, mee_augmented_rates_array, mee_rates,
                      orbit_raising_augmented_jacobian_array, orbit_raising_augmented_rates_array,
                      orbit_raising_costate_rate, orbit_raising_rates, thrust_costate_rate_mee, trigger)
from errors import NonPositiveMassError
from models import (CanonicalScaling, ControlSample, DesensitizationConfig, GravityModel, MeeState, OrbitRaisingModel,
                    PolarState, SpacecraftModel)

SPACECRAFT = SpacecraftModel(m0=1.0, thrust=0.1, isp=2.0, g0=1.0)
UNIT = GravityModel(mu=1.0)


def random_mee(rng) -> MeeState:
    return MeeState(p=rng.uniform(0.3, 5.0), f=rng.uniform(-0.7, 0.7), g=rng.uniform(-0.7, 0.7),
                    h=rng.uniform(-1.0, 1.0), k=rng.uniform(-1.0, 1.0), L=rng.uniform(-10.0, 10.0))


def test_zero_throttle_moves_only_the_longitude():
    rng = np.random.default_rng(1)
    for _ in range(1000):
        u = rng.normal(size=3)
        ctrl = ControlSample(delta=0.0, u_hat=tuple((u / np.linalg.norm(u)).tolist()))
        result = mee_rates(random_mee(rng), rng.uniform(0.1, 2.0), ctrl, SPACECRAFT, UNIT)
        assert np.all(result.state_rate[:5] == 0.0)
        assert result.mass_rate == 0.0


def test_circular_longitude_rate():
    result = mee_rates(MeeState(p=1.0), 1.0, ControlSample(delta=0.0), SPACECRAFT, UNIT)
    assert result.state_rate[5] == pytest.approx(1.0)


def test_mass_flow():
    result = mee_rates(MeeState(p=1.0), 1.0, ControlSample(delta=0.5), SPACECRAFT, UNIT)
    assert result.mass_rate == pytest.approx(-0.1 / 2.0 * 0.5)


def test_tangential_thrust_raises_p():
    result = mee_rates(MeeState(p=1.0), 1.0, ControlSample(delta=1.0, u_hat=(0.0, 1.0, 0.0)), SPACECRAFT, UNIT)
    # p_dot = 2 p / w sqrt(p / mu) * a_t on a circular orbit
    assert result.state_rate[0] == pytest.approx(0.2)


@pytest.mark.parametrize("mass", [0.0, -1.0])
def test_non_positive_mass(mass):
    with pytest.raises(NonPositiveMassError):
        mee_rates(MeeState(p=1.0), mass, ControlSample(delta=1.0), SPACECRAFT, UNIT)
    with pytest.raises(NonPositiveMassError):
        thrust_costate_rate_mee(ControlSample(delta=1.0), mass, SPACECRAFT, DesensitizationConfig())


def test_thrust_costate_rate():
    cfg = DesensitizationConfig()
    sc = SpacecraftModel(m0=2.0, thrust=1.0, isp=4.0, g0=1.0)
    ctrl = ControlSample(delta=0.5, u_hat=(0.0, 0.0, 1.0))
    assert thrust_costate_rate_mee(ctrl, 2.0, sc, cfg) == pytest.approx(-0.125)
    assert thrust_costate_rate_mee(ControlSample(delta=0.0), 2.0, sc, cfg) == 0.0


def test_canonical_exhaust_velocity():
    scaling = CanonicalScaling.from_gravity(GravityModel(mu=1.32712440018e11))
    sc = SpacecraftModel(m0=3000.0, thrust=0.6, isp=3000.0).to_canonical(scaling)
    assert sc.c == pytest.approx(3000.0 * 9.80665 / 1000.0 / scaling.velocity_unit)
    assert sc.m0 == pytest.approx(3000.0)
    assert sc.thrust == pytest.approx(0.6 / scaling.force_unit)


class TestTrigger:
    cfg = DesensitizationConfig(t1=1.0, t2=5.0, rho=1e-5)

    @pytest.mark.parametrize("t", [1.01, 2.0, 3.0, 4.99])
    def test_inside(self, t):
        assert trigger(t, self.cfg) == pytest.approx(1.0, abs=1e-12)

    @pytest.mark.parametrize("t", [0.0, 0.99, 5.01, 10.0])
    def test_outside(self, t):
        assert trigger(t, self.cfg) == pytest.approx(0.0, abs=1e-12)

    def test_window_edges(self):
        assert trigger(1.0, self.cfg) == pytest.approx(0.5, abs=1e-12)
        assert trigger(5.0, self.cfg) == pytest.approx(0.5, abs=1e-12)

    def test_full_window_beyond_ten_rho(self):
        cfg = DesensitizationConfig(t1=0.0, t2=3.32, rho=1e-5)
        t = np.linspace(10 * cfg.rho, 3.32 - 10 * cfg.rho, 101)
        assert np.all(np.abs(trigger(t, cfg) - 1.0) < 1e-8)

    def test_array_input(self):
        values = trigger(np.array([0.0, 3.0, 6.0]), self.cfg)
        assert values.shape == (3,)


def test_orbit_raising_rates_at_start():
    model = OrbitRaisingModel()
    r_dot, u_dot, v_dot = orbit_raising_rates(PolarState(r=1.0, u=0.0, v=1.0), 0.0, model, 0.0, UNIT)
    assert r_dot == 0.0
    assert u_dot == pytest.approx(0.0)
    assert v_dot == pytest.approx(0.1405)


def test_orbit_raising_costate_rate():
    model = OrbitRaisingModel()
    assert orbit_raising_costate_rate(0.0, model, 0.0) == pytest.approx(-1.0)
    assert orbit_raising_costate_rate(math.pi / 2, model, 1.0) == pytest.approx(-1.0 / (1.0 - 0.0749))
    with pytest.raises(NonPositiveMassError):
        orbit_raising_costate_rate(0.0, model, model.burnout_time() + 1.0)


def _central_jacobian(fun, states, controls, step=1e-6):
    """Central difference Jacobian of a node-wise rate function, shape (n, nx, nx + nu)."""
    nx = states.shape[1]
    nu = controls.shape[1]
    jac = np.zeros((states.shape[0], nx, nx + nu))
    for j in range(nx + nu):
        sp, sm, cp, cm = states.copy(), states.copy(), controls.copy(), controls.copy()
        if j < nx:
            sp[:, j] += step
            sm[:, j] -= step
        else:
            cp[:, j - nx] += step
            cm[:, j - nx] -= step
        jac[:, :, j] = (fun(sp, cp) - fun(sm, cm)) / (2.0 * step)
    return jac


def test_mee_jacobian():
    rng = np.random.default_rng(3)
    n = 20
    states = np.column_stack([rng.uniform(0.8, 1.5, n), rng.uniform(-0.2, 0.2, (n, 4)), rng.uniform(-5, 5, n),
                              rng.uniform(0.5, 1.0, n), rng.uniform(-1, 1, n)])
    u = rng.normal(size=(n, 3))
    controls = np.column_stack([rng.uniform(0, 1, n), u / np.linalg.norm(u, axis=1)[:, None]])
    cfg = DesensitizationConfig(k_vr=0.5, k_vt=1.0, k_vn=2.0, k_m=1.5)

    def fun(s, c):
        return mee_augmented_rates_array(s, c, SPACECRAFT, 1.0, cfg)

    analytic = mee_augmented_jacobian_array(states, controls, SPACECRAFT, 1.0, cfg)
    assert analytic.shape == (n, 8, 12)
    assert np.max(np.abs(analytic - _central_jacobian(fun, states, controls))) < 1e-6


def test_orbit_raising_jacobian():
    rng = np.random.default_rng(4)
    n = 20
    model = OrbitRaisingModel()
    t = rng.uniform(0.0, 3.32, n)
    states = np.column_stack([rng.uniform(1.0, 1.5, n), rng.uniform(-0.2, 0.2, n), rng.uniform(0.7, 1.0, n),
                              rng.uniform(-1, 1, n)])
    controls = rng.uniform(0.0, 2.0 * math.pi, (n, 1))

    def fun(s, c):
        return orbit_raising_augmented_rates_array(s, c, t, model, 1.0)

    analytic = orbit_raising_augmented_jacobian_array(states, controls, t, model, 1.0)
    assert np.max(np.abs(analytic - _central_jacobian(fun, states, controls))) < 1e-7
