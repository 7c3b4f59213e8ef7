import math

import numpy as np
import pytest

from tepinn import quat, rigid_body as rb
from tepinn.quat import Quaternion
from tepinn.rigid_body import (
    GRAVITY,
    BodyState,
    InertiaFactor,
    SensorCalibration,
    SingularInertiaError,
)

from oracles import constant_rate_quat, quat_to_matrix, random_unit_quats


class TestInertiaFactor:
    def test_reconstruction_is_spd(self):
        rng = np.random.default_rng(0)
        L = np.tril(rng.standard_normal((3, 3)))
        np.fill_diagonal(L, np.abs(np.diag(L)) + 0.5)
        inertia = InertiaFactor(L).matrix()
        np.testing.assert_allclose(inertia, inertia.T, atol=1e-14)
        assert np.all(np.linalg.eigvalsh(inertia) > 0)

    def test_from_matrix_round_trip(self):
        inertia = np.array([[2.0, 0.3, 0.1], [0.3, 1.5, 0.2], [0.1, 0.2, 3.0]])
        np.testing.assert_allclose(InertiaFactor.from_matrix(inertia).matrix(), inertia, atol=1e-12)

    def test_upper_triangle_discarded(self):
        f = InertiaFactor(np.full((3, 3), 1.0))
        assert f.L[0, 1] == 0.0 and f.L[0, 2] == 0.0 and f.L[1, 2] == 0.0


class TestAngularAcceleration:
    def test_spherical_torque_free(self):
        out = rb.angular_acceleration(InertiaFactor.identity(), [0.3, -0.2, 0.9], np.zeros(3))
        np.testing.assert_allclose(out, np.zeros(3), atol=1e-15)

    def test_diagonal_hand_case(self):
        inertia = InertiaFactor.from_diagonal(1.0, 2.0, 3.0)
        out = rb.angular_acceleration(inertia, [1.0, 1.0, 1.0], np.zeros(3))
        np.testing.assert_allclose(out, [-1.0, 1.0, -1.0 / 3.0], atol=1e-12)

    def test_pure_torque(self):
        out = rb.angular_acceleration(InertiaFactor.identity(), np.zeros(3), [1.0, 0.0, 0.0])
        np.testing.assert_allclose(out, [1, 0, 0], atol=1e-15)

    def test_singular_factor_raises(self):
        bad = InertiaFactor(np.diag([1.0, 1e-10, 1.0]))
        with pytest.raises(SingularInertiaError):
            rb.angular_acceleration(bad, [1.0, 0.0, 0.0], np.zeros(3))

    def test_matches_dense_solve(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            L = np.tril(rng.standard_normal((3, 3)))
            np.fill_diagonal(L, np.abs(np.diag(L)) + 0.5)
            inertia = InertiaFactor(L)
            omega = rng.standard_normal(3)
            tau = rng.standard_normal(3)
            expected = np.linalg.solve(inertia.matrix(), tau - np.cross(omega, inertia.matrix() @ omega))
            np.testing.assert_allclose(
                rb.angular_acceleration(inertia, omega, tau), expected, atol=1e-10
            )


class TestRk4Step:
    def test_constant_rate_matches_closed_form(self):
        omega = np.array([0.0, 0.0, math.pi / 2])
        state = BodyState(Quaternion.identity(), omega)
        inertia = InertiaFactor.identity()
        for _ in range(100):
            state = rb.rk4_step(state, inertia, np.zeros(3), 0.01)
        expected = constant_rate_quat(omega, 1.0)
        np.testing.assert_allclose(state.q.as_array(), expected, atol=1e-6)
        np.testing.assert_allclose(state.omega, omega, atol=1e-12)

    def test_fourth_order_convergence(self):
        omega = np.array([1.2, -0.8, 1.5])
        inertia = InertiaFactor.identity()
        expected = constant_rate_quat(omega, 0.5)

        def global_error(dt):
            state = BodyState(Quaternion.identity(), omega)
            for _ in range(int(round(0.5 / dt))):
                state = rb.rk4_step(state, inertia, np.zeros(3), dt)
            return np.linalg.norm(state.q.as_array() - expected)

        errors = [global_error(dt) for dt in (0.05, 0.025, 0.0125)]
        for coarse, fine in zip(errors, errors[1:]):
            assert 12.0 < coarse / fine < 20.0, errors

    def test_rest_state_unchanged(self):
        q = Quaternion.from_array(random_unit_quats(np.random.default_rng(2), 1)[0])
        state = rb.rk4_step(BodyState(q, np.zeros(3)), InertiaFactor.identity(), np.zeros(3), 0.1)
        np.testing.assert_allclose(state.q.as_array(), q.as_array(), atol=1e-12)
        np.testing.assert_allclose(state.omega, np.zeros(3), atol=0)

    def test_spherical_speed_conserved(self):
        state = BodyState(Quaternion.identity(), np.array([0.7, -0.3, 0.5]))
        inertia = InertiaFactor(2.0 * np.eye(3))
        speed0 = np.linalg.norm(state.omega)
        for _ in range(2000):
            state = rb.rk4_step(state, inertia, np.zeros(3), 0.01)
        assert abs(np.linalg.norm(state.omega) - speed0) < 1e-9

    def test_torque_free_invariants_conserved(self):
        # asymmetric tumble: energy and |I w|^2 are conserved quantities
        inertia = InertiaFactor.from_diagonal(1.0, 2.0, 3.0)
        I_mat = inertia.matrix()
        state = BodyState(Quaternion.identity(), np.array([1.0, 0.5, -0.7]))

        def invariants(s):
            mom = I_mat @ s.omega
            return 0.5 * s.omega @ mom, mom @ mom

        e0, h0 = invariants(state)
        for _ in range(2000):  # 10 s at dt = 0.005
            state = rb.rk4_step(state, inertia, np.zeros(3), 0.005)
        e1, h1 = invariants(state)
        assert abs(e1 - e0) / e0 < 1e-6
        assert abs(h1 - h0) / h0 < 1e-6

    def test_quaternion_stays_unit(self):
        rng = np.random.default_rng(3)
        state = BodyState(Quaternion.identity(), rng.standard_normal(3))
        inertia = InertiaFactor.from_diagonal(1.0, 2.0, 3.0)
        for _ in range(500):
            state = rb.rk4_step(state, inertia, rng.standard_normal(3) * 0.1, 0.01)
            assert abs(state.q.norm() - 1.0) < 1e-9


class TestSensorCorrections:
    def test_gyro_identity_map(self):
        cal = SensorCalibration()
        np.testing.assert_allclose(rb.correct_gyro([1.0, 2.0, 3.0], cal), [1, 2, 3], atol=0)

    def test_gyro_bias_subtracted(self):
        cal = SensorCalibration(gyro_bias=[0.1, 0.0, 0.0])
        np.testing.assert_allclose(rb.correct_gyro([1.0, 2.0, 3.0], cal), [0.9, 2, 3], atol=1e-15)

    def test_gyro_scale_subtracted(self):
        cal = SensorCalibration(gyro_scale=0.01 * np.eye(3))
        np.testing.assert_allclose(rb.correct_gyro([1.0, 0.0, 0.0], cal), [0.99, 0, 0], atol=1e-15)

    def test_accel_identity_map(self):
        cal = SensorCalibration()
        np.testing.assert_allclose(rb.correct_accel([0.0, 0.0, 9.81], cal), [0, 0, 9.81], atol=0)

    def test_accel_bias(self):
        cal = SensorCalibration(accel_bias=[0.0, 0.0, 0.1])
        np.testing.assert_allclose(rb.correct_accel([0, 0, 9.81], cal), [0, 0, 9.71], atol=1e-15)

    def test_accel_scale(self):
        cal = SensorCalibration(accel_scale=np.diag([0.1, 0.0, 0.0]))
        np.testing.assert_allclose(rb.correct_accel([1.0, 1.0, 1.0], cal), [0.9, 1, 1], atol=1e-15)

    @pytest.mark.parametrize("correct", [rb.correct_gyro, rb.correct_accel])
    def test_affine_exactly(self, correct):
        cal = SensorCalibration(
            gyro_bias=[0.1, -0.2, 0.05],
            accel_bias=[0.3, 0.1, -0.4],
            gyro_scale=0.01 * np.eye(3),
            accel_scale=np.diag([0.02, 0.01, 0.03]),
        )
        x = np.array([0.5, -1.0, 2.0])
        alpha = 3.0
        lhs = correct(alpha * x, cal) - correct(np.zeros(3), cal)
        rhs = alpha * (correct(x, cal) - correct(np.zeros(3), cal))
        # affine to rounding: S @ (a x) and a (S @ x) differ by at most an ulp
        np.testing.assert_allclose(lhs, rhs, rtol=1e-14, atol=0)

    def test_scale_spectral_radius_validated(self):
        with pytest.raises(ValueError):
            SensorCalibration(gyro_scale=1.5 * np.eye(3))


class TestGravityInBody:
    def test_identity(self):
        np.testing.assert_allclose(
            rb.gravity_in_body(Quaternion.identity()), [0, 0, -GRAVITY], atol=0
        )

    def test_quarter_roll(self):
        q = quat.from_euler(quat.EulerAngles(math.pi / 2, 0.0, 0.0))
        np.testing.assert_allclose(rb.gravity_in_body(q), [0, -GRAVITY, 0], atol=1e-12)

    def test_matches_matrix_oracle(self):
        rng = np.random.default_rng(4)
        for q in random_unit_quats(rng, 100):
            expected = quat_to_matrix(q).T @ np.array([0, 0, -GRAVITY])
            np.testing.assert_allclose(
                rb.gravity_in_body(Quaternion.from_array(q)), expected, atol=1e-12
            )

    def test_norm_preserved(self):
        rng = np.random.default_rng(5)
        for q in random_unit_quats(rng, 200):
            g = rb.gravity_in_body(Quaternion.from_array(q), 9.81)
            assert abs(np.linalg.norm(g) - 9.81) < 1e-9
