"""Model-level checks: mixing, ground effect, derivatives, integrators,
and analytic Jacobians against finite differences."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from landersim.dynamics import (
    ATT,
    POS,
    RATE,
    VEL,
    QuadrotorParams,
    SimulationFault,
    derivative,
    derivative_batch,
    dynamics_jacobians_batch,
    euler_step,
    euler_step_batch,
    ground_effect_gradient,
    ground_effect_multiplier,
    hover_control,
    hover_state,
    make_state,
    mix,
    rk4_step,
    thrust_direction,
)


def random_state(rng, z_lo=0.5, z_hi=3.0):
    x = np.empty(12)
    x[POS] = rng.uniform([-2, -2, z_lo], [2, 2, z_hi])
    x[VEL] = rng.uniform(-2.5, 2.5, 3)
    x[ATT] = rng.uniform([-0.55, -0.55, -np.pi], [0.55, 0.55, np.pi])
    x[RATE] = rng.uniform(-2.0, 2.0, 3)
    return x


class TestMix:
    def test_worked_example(self):
        p = QuadrotorParams(l_x=0.1, l_y=0.1, k_t=0.02)
        w = mix(np.array([1.0, 2.0, 3.0, 4.0]), p)
        assert w.f_total == pytest.approx(10.0)
        assert w.tau == pytest.approx([0.0, 0.2, -0.08])

    def test_hover_is_torque_free(self):
        p = QuadrotorParams()
        w = mix(hover_control(p), p)
        assert w.f_total == pytest.approx(p.m * p.g)
        np.testing.assert_allclose(w.tau, 0.0, atol=1e-12)

    @given(st.lists(st.floats(-5, 5), min_size=8, max_size=8),
           st.floats(-3, 3), st.floats(-3, 3))
    def test_linearity(self, vals, a, b):
        p = QuadrotorParams()
        u1, u2 = np.array(vals[:4]), np.array(vals[4:])
        lhs = mix(a * u1 + b * u2, p)
        r1, r2 = mix(u1, p), mix(u2, p)
        assert lhs.f_total == pytest.approx(a * r1.f_total + b * r2.f_total, abs=1e-9)
        np.testing.assert_allclose(lhs.tau, a * r1.tau + b * r2.tau, atol=1e-9)


class TestGroundEffect:
    def test_reference_height(self):
        # z_r + eps = r: s = 1/4, k = 1 / (1 - 1/16) = 16/15
        p = QuadrotorParams()
        assert ground_effect_multiplier(0.11, p) == pytest.approx(16.0 / 15.0)

    def test_clamp_threshold(self):
        # clamp engages where s^2 = 1 - 1/k_max, i.e. z + eps = r*sqrt(3)/4
        p = QuadrotorParams()
        z_star = p.r_rotor * np.sqrt(3.0) / 4.0 - p.eps_ge
        assert ground_effect_multiplier(z_star - 1e-9, p) == pytest.approx(1.5)
        assert ground_effect_multiplier(z_star + 1e-6, p) < 1.5
        assert ground_effect_multiplier(z_star + 1e-6, p) == pytest.approx(1.5, abs=1e-3)

    def test_below_surface_clamps_at_zero_height(self):
        p = QuadrotorParams()
        assert ground_effect_multiplier(-0.4, p) == ground_effect_multiplier(0.0, p)
        assert ground_effect_multiplier(0.0, p) == 1.5

    @given(st.floats(min_value=-1.0, max_value=5.0),
           st.floats(min_value=0.05, max_value=0.3))
    def test_bounds_hold_everywhere(self, z, r):
        p = QuadrotorParams(r_rotor=r)
        k = ground_effect_multiplier(z, p)
        assert 1.0 <= k <= p.k_ge_max

    @given(st.floats(min_value=0.02, max_value=0.4))
    def test_negligible_past_eight_radii(self, r):
        # the raw formula sits within 1e-3 of unity beyond 8 rotor radii
        p = QuadrotorParams(r_rotor=r)
        assert ground_effect_multiplier(8.0 * r, p) - 1.0 < 1e-3

    def test_monotone_decay(self):
        p = QuadrotorParams()
        z = np.linspace(0.0, 1.5, 400)
        k = ground_effect_multiplier(z, p)
        assert np.all(np.diff(k) <= 1e-15)

    def test_gradient_matches_fd(self):
        p = QuadrotorParams()
        for z in [0.05, 0.08, 0.2, 0.5, 1.0]:
            h = 1e-7
            fd = (ground_effect_multiplier(z + h, p)
                  - ground_effect_multiplier(z - h, p)) / (2 * h)
            assert ground_effect_gradient(z, p) == pytest.approx(fd, rel=1e-5, abs=1e-8)

    def test_gradient_zero_when_clamped(self):
        p = QuadrotorParams()
        assert ground_effect_gradient(0.02, p) == 0.0
        assert ground_effect_gradient(-0.3, p) == 0.0


class TestDerivative:
    def test_hover_equilibrium(self):
        # exact balance needs the ground-effect gain divided out
        p = QuadrotorParams()
        x = hover_state((0.0, 0.0, 2.0))
        k = ground_effect_multiplier(2.0, p)
        dx = derivative(x, hover_control(p) / k, p)
        np.testing.assert_allclose(dx, 0.0, atol=1e-12)

    def test_hover_nearly_balanced_at_altitude(self):
        # at 2 m the residual ground effect is ~2e-4 of gravity
        p = QuadrotorParams()
        x = hover_state((0.0, 0.0, 2.0))
        dx = derivative(x, hover_control(p), p)
        assert abs(dx[5]) < 3e-3
        np.testing.assert_allclose(np.delete(dx, 5), 0.0, atol=1e-12)

    def test_free_fall(self):
        p = QuadrotorParams()
        x = hover_state((0.0, 0.0, 2.0))
        dx = derivative(x, np.zeros(4), p)
        expected = np.zeros(12)
        expected[5] = -p.g
        np.testing.assert_allclose(dx, expected, atol=1e-12)

    def test_ground_effect_lifts_hover(self):
        # at z_r = 0.11 the multiplier is 16/15, so hover thrust accelerates
        # upward at g/15 = 0.654 m/s^2
        p = QuadrotorParams()
        x = hover_state((0.0, 0.0, 0.11))
        dx = derivative(x, hover_control(p), p, z_surface=0.0)
        assert dx[5] == pytest.approx(p.g / 15.0)
        assert dx[5] == pytest.approx(0.654)

    def test_thrust_direction_vertical_at_level_attitude(self):
        np.testing.assert_allclose(thrust_direction(np.zeros(3)), [0, 0, 1])
        # yaw alone never tilts the thrust axis
        np.testing.assert_allclose(thrust_direction(np.array([0, 0, 1.2])), [0, 0, 1],
                                   atol=1e-15)

    def test_pitch_tilts_thrust_forward(self):
        p = QuadrotorParams()
        x = make_state(pos=(0, 0, 2), att=(0.0, 0.3, 0.0))
        dx = derivative(x, hover_control(p), p)
        assert dx[3] > 0.5          # forward acceleration
        assert dx[5] < 0.0          # reduced vertical support

    def test_batch_matches_scalar(self):
        p = QuadrotorParams()
        rng = np.random.default_rng(3)
        X = np.stack([random_state(rng) for _ in range(7)])
        U = rng.uniform(0.0, 7.5, (7, 4))
        batch = derivative_batch(X, U, p, z_surface=0.1)
        for i in range(7):
            np.testing.assert_allclose(batch[i], derivative(X[i], U[i], p, 0.1),
                                       atol=1e-14)

    def test_singular_attitude_raises(self):
        p = QuadrotorParams()
        x = make_state(pos=(0, 0, 1), att=(0.0, np.pi / 2, 0.0))
        with pytest.raises(SimulationFault):
            derivative(x, hover_control(p), p)

    def test_nan_state_raises(self):
        p = QuadrotorParams()
        x = hover_state((0, 0, 1))
        x[4] = np.nan
        with pytest.raises(SimulationFault):
            derivative(x, hover_control(p), p)


class TestIntegrators:
    def test_euler_free_fall_step(self):
        p = QuadrotorParams()
        x = hover_state((0.0, 0.0, 2.0))
        x1 = euler_step(x, np.zeros(4), 0.1, p)
        assert x1[5] == pytest.approx(-0.981)
        assert x1[2] == pytest.approx(2.0)   # position lags one step

    def test_rk4_ballistic_exact(self):
        # free fall is polynomial in t, so RK4 reproduces it to roundoff
        p = QuadrotorParams()
        x = hover_state((0.0, 0.0, 10.0))
        for _ in range(10):
            x = rk4_step(x, np.zeros(4), 0.1, p)
        assert x[2] == pytest.approx(10.0 - 0.5 * p.g, abs=1e-12)
        assert x[5] == pytest.approx(-p.g, abs=1e-12)

    def test_euler_local_error_second_order(self):
        p = QuadrotorParams()
        rng = np.random.default_rng(11)
        x = random_state(rng)
        u = rng.uniform(1.0, 6.0, 4)

        def ref(x0, dt, n):
            y = x0
            for _ in range(n):
                y = rk4_step(y, u, dt / n, p)
            return y

        errs = []
        for dt in (0.08, 0.04):
            truth = ref(x, dt, 64)
            errs.append(np.linalg.norm(euler_step(x, u, dt, p) - truth))
        assert errs[0] / errs[1] > 3.5

    def test_rotational_energy_conserved_torque_free(self):
        # zero torque leaves 0.5 * w^T J w invariant under the gyroscopic terms
        p = QuadrotorParams()
        x = make_state(pos=(0, 0, 5), rate=(1.2, -0.8, 2.0))
        u = np.zeros(4)
        e0 = 0.5 * np.dot(p.J, x[RATE] ** 2)
        for _ in range(100):
            x = rk4_step(x, u, 0.01, p)
        e1 = 0.5 * np.dot(p.J, x[RATE] ** 2)
        assert abs(e1 - e0) / e0 < 1e-6

    def test_batch_euler_matches_scalar(self):
        p = QuadrotorParams()
        rng = np.random.default_rng(5)
        X = np.stack([random_state(rng) for _ in range(4)])
        U = rng.uniform(0.0, 7.5, (4, 4))
        batch = euler_step_batch(X, U, 0.1, p, z_surface=0.05)
        for i in range(4):
            np.testing.assert_allclose(batch[i], euler_step(X[i], U[i], 0.1, p, 0.05))


class TestJacobians:
    def fd_jacobians(self, x, u, p, z_surface, h=1e-6):
        A = np.zeros((12, 12))
        for j in range(12):
            e = np.zeros(12)
            e[j] = h
            A[:, j] = (derivative(x + e, u, p, z_surface)
                       - derivative(x - e, u, p, z_surface)) / (2 * h)
        B = np.zeros((12, 4))
        for j in range(4):
            e = np.zeros(4)
            e[j] = h
            B[:, j] = (derivative(x, u + e, p, z_surface)
                       - derivative(x, u - e, p, z_surface)) / (2 * h)
        return A, B

    @pytest.mark.parametrize("z_surface", [0.0, 0.3])
    def test_matches_finite_differences(self, z_surface):
        p = QuadrotorParams()
        rng = np.random.default_rng(17)
        for _ in range(10):
            # keep clear of the ground-effect clamp kink
            x = random_state(rng, z_lo=z_surface + 0.12, z_hi=z_surface + 2.5)
            u = rng.uniform(0.5, 7.0, 4)
            A, B = dynamics_jacobians_batch(x[None], u[None], p, z_surface)
            A_fd, B_fd = self.fd_jacobians(x, u, p, z_surface)
            np.testing.assert_allclose(A[0], A_fd, atol=2e-6)
            np.testing.assert_allclose(B[0], B_fd, atol=2e-6)

    def test_ground_effect_column_active_near_surface(self):
        p = QuadrotorParams()
        x = hover_state((0, 0, 0.1))
        u = hover_control(p)
        A, _ = dynamics_jacobians_batch(x[None], u[None], p, 0.0)
        A_fd, _ = self.fd_jacobians(x, u, p, 0.0)
        assert A[0, 5, 2] < -1.0    # thrust gain falls off with height
        assert A[0, 5, 2] == pytest.approx(A_fd[5, 2], rel=1e-4)

    def test_ground_effect_column_zero_when_clamped(self):
        p = QuadrotorParams()
        x = hover_state((0, 0, 0.02))
        u = hover_control(p)
        A, _ = dynamics_jacobians_batch(x[None], u[None], p, 0.0)
        assert A[0, 5, 2] == 0.0


class TestParams:
    def test_rejects_bad_values(self):
        with pytest.raises(ValueError):
            QuadrotorParams(m=-1.0)
        with pytest.raises(ValueError):
            QuadrotorParams(J=np.array([0.02, -0.02, 0.035]))
        with pytest.raises(ValueError):
            QuadrotorParams(k_ge_max=0.9)

    def test_dict_round_trip(self):
        p = QuadrotorParams(m=1.7, k_t=0.02)
        q = QuadrotorParams.from_dict(p.to_dict())
        assert q.m == p.m and q.k_t == p.k_t
        np.testing.assert_array_equal(q.J, p.J)
