import math

import numpy as np
from django.test import SimpleTestCase
from numpy.testing import assert_allclose, assert_array_equal

from magfim.dipole_core import (
    DEFAULT_B_T,
    SIX_ORIENTATIONS,
    FieldVector,
    MagnetModel,
    Pose5,
    angles_from_orientation,
    dipole_validity_ok,
    field_array,
    field_at,
    jacobian,
    magnet_strength,
    saturate,
)
from magfim.exceptions import DegenerateDistance, InvariantViolation, NonFinite
from magfim.geometry_catalog import BUILDERS, GRID_COORDS, SensorLayout, build_layout, build_staggered_split


def numeric_jacobian(pose, layout, model, h=1e-6):
    x0 = pose.as_vector()
    columns = []
    for k in range(5):
        step = np.zeros(5)
        step[k] = h
        plus, minus = x0 + step, x0 - step
        b_plus = field_array(Pose5(plus[:3], plus[3], plus[4]), layout, model).b
        b_minus = field_array(Pose5(minus[:3], minus[3], minus[4]), layout, model).b
        columns.append((b_plus - b_minus) / (2 * h))
    return np.column_stack(columns)


class FieldModelTests(SimpleTestCase):
    def setUp(self):
        self.model = MagnetModel()

    def test_axial_and_equatorial_field(self):
        r = 0.05
        pose = Pose5(p=[0, 0, 0], psi=0.0, theta=0.0)
        axial = field_at(pose, [0, 0, r], self.model)
        equatorial = field_at(pose, [r, 0, 0], self.model)
        assert_allclose(axial, [0, 0, 2 * DEFAULT_B_T / r ** 3], atol=1e-9)
        assert_allclose(equatorial, [0, 0, -DEFAULT_B_T / r ** 3], atol=1e-9)

    def test_field_scales_with_inverse_cube(self):
        pose = Pose5(p=[0.01, -0.02, 0.08], psi=1.1, theta=0.7)
        near = field_at(pose, pose.p + np.array([0.0, 0.03, -0.04]), self.model)
        far = field_at(pose, pose.p + 2 * np.array([0.0, 0.03, -0.04]), self.model)
        assert_allclose(far, near / 8.0, rtol=1e-12)

    def test_field_array_is_sensor_major(self):
        layout = build_staggered_split()
        pose = Pose5(p=[0.0, 0.01, 0.1], psi=0.4, theta=1.2)
        b = field_array(pose, layout, self.model)
        self.assertEqual(b.b.shape, (48,))
        assert_allclose(b.per_sensor()[3], field_at(pose, layout.positions[3], self.model), rtol=1e-14)
        self.assertFalse(b.sat_mask.any())

    def test_coincident_sensor_raises(self):
        layout = build_staggered_split()
        pose = Pose5(p=layout.positions[7], psi=0.0, theta=1.0)
        with self.assertRaises(DegenerateDistance) as ctx:
            field_array(pose, layout, self.model)
        self.assertEqual(ctx.exception.sensor_index, 7)

    def test_analytic_jacobian_matches_central_differences(self):
        rng = np.random.default_rng(3)
        for name in BUILDERS:
            layout = build_layout(name)
            for _ in range(20):
                pose = Pose5(
                    p=rng.uniform([-0.05, -0.05, 0.05], [0.05, 0.05, 0.15]),
                    psi=rng.uniform(0, 2 * math.pi),
                    theta=rng.uniform(0.05, math.pi - 0.05),
                )
                analytic = jacobian(pose, layout, self.model)
                numeric = numeric_jacobian(pose, layout, self.model)
                error = np.linalg.norm(analytic - numeric, axis=0) / np.linalg.norm(analytic, axis=0)
                self.assertLess(error.max(), 1e-5, f"{name}: {error}")

    def test_field_is_divergence_free(self):
        pose = Pose5(p=[0.012, -0.02, 0.09], psi=2.3, theta=1.1)
        sensor = np.array([0.03, 0.04, 0.18])
        h = 1e-6
        columns = []
        for axis in range(3):
            step = np.zeros(3)
            step[axis] = h
            plus, minus = field_at(pose, sensor + step, self.model), field_at(pose, sensor - step, self.model)
            columns.append((plus - minus) / (2 * h))
        gradient = np.column_stack(columns)
        self.assertLess(abs(np.trace(gradient)), 1e-6 * np.linalg.norm(gradient))
        block = jacobian(pose, SensorLayout('one', [sensor]), self.model)[:, :3]
        self.assertLess(abs(np.trace(block)), 1e-9 * np.linalg.norm(block))

    def test_jacobian_is_translation_invariant(self):
        layout = build_staggered_split()
        offset = np.array([0.02, -0.015, 0.03])
        pose = Pose5(p=[0.01, 0.005, 0.1], psi=0.7, theta=1.9)
        moved_pose = Pose5(p=pose.p + offset, psi=pose.psi, theta=pose.theta)
        moved_layout = SensorLayout('moved', layout.positions + offset)
        original = jacobian(pose, layout, self.model)
        assert_allclose(jacobian(moved_pose, moved_layout, self.model), original,
                        rtol=1e-8, atol=1e-10 * np.abs(original).max())

    def test_reversed_orientation_negates_the_field(self):
        layout = build_staggered_split()
        pose = Pose5(p=[-0.02, 0.01, 0.08], psi=0.9, theta=0.6)
        reversed_pose = Pose5(p=pose.p, psi=pose.psi + math.pi, theta=math.pi - pose.theta)
        assert_allclose(reversed_pose.n, -pose.n, atol=1e-15)
        original = field_array(pose, layout, self.model).b
        assert_allclose(field_array(reversed_pose, layout, self.model).b, -original,
                        rtol=1e-12, atol=1e-12 * np.abs(original).max())

    def test_sensor_order_permutes_jacobian_blocks(self):
        layout = build_staggered_split()
        order = np.random.default_rng(5).permutation(layout.n_sensors)
        pose = Pose5(p=[0.0, -0.01, 0.12], psi=4.0, theta=1.3)
        blocks = jacobian(pose, layout, self.model).reshape(-1, 3, 5)
        shuffled = jacobian(pose, SensorLayout('shuffled', layout.positions[order]), self.model)
        assert_allclose(shuffled.reshape(-1, 3, 5), blocks[order], rtol=1e-14)

    def test_yaw_column_vanishes_at_pole(self):
        pose = Pose5(p=[0.01, 0.02, 0.1], psi=0.8, theta=0.0)
        jac = jacobian(pose, build_staggered_split(), self.model)
        assert_array_equal(jac[:, 3], np.zeros(48))


class PoseTests(SimpleTestCase):
    def test_yaw_is_wrapped(self):
        self.assertAlmostEqual(Pose5([0, 0, 0.1], -0.5, 1.0).psi, 2 * math.pi - 0.5)
        self.assertEqual(Pose5([0, 0, 0.1], 2 * math.pi, 1.0).psi, 0.0)
        self.assertEqual(Pose5([0, 0, 0.1], -1e-17, 1.0).psi, 0.0)

    def test_polar_angle_out_of_range(self):
        with self.assertRaises(InvariantViolation):
            Pose5([0, 0, 0.1], 0.0, math.pi + 1e-3)
        with self.assertRaises(NonFinite):
            Pose5([0, math.nan, 0.1], 0.0, 1.0)

    def test_non_finite_angles(self):
        with self.assertRaises(NonFinite):
            Pose5([0, 0, 0.1], 0.0, math.nan)
        with self.assertRaises(NonFinite):
            Pose5([0, 0, 0.1], math.inf, 1.0)

    def test_orientation_round_trip(self):
        pose = Pose5([0, 0, 0.1], 4.0, 2.0)
        psi, theta = angles_from_orientation(pose.n)
        self.assertAlmostEqual(psi, 4.0, places=12)
        self.assertAlmostEqual(theta, 2.0, places=12)

    def test_pole_orientation_has_zero_yaw(self):
        self.assertEqual(angles_from_orientation([0, 0, -1]), (0.0, math.pi))
        with self.assertRaises(InvariantViolation):
            angles_from_orientation([0, 0, 2])

    def test_six_orientations_are_read_only_unit_vectors(self):
        assert_allclose(np.linalg.norm(SIX_ORIENTATIONS, axis=1), 1.0)
        with self.assertRaises(ValueError):
            SIX_ORIENTATIONS[0, 0] = 2.0


class MagnetTests(SimpleTestCase):
    def test_magnet_strength_from_physics(self):
        self.assertAlmostEqual(magnet_strength(0.005, 0.010, 1e6), math.pi * 0.025, places=12)
        with self.assertRaises(InvariantViolation):
            magnet_strength(0.005, 0.010, 0.0)

    def test_dipole_validity(self):
        self.assertTrue(dipole_validity_ok(0.041, 0.005))
        self.assertFalse(dipole_validity_ok(0.040, 0.005))

    def test_non_positive_strength_rejected(self):
        with self.assertRaises(InvariantViolation):
            MagnetModel(b_t=0.0)


class SaturationTests(SimpleTestCase):
    def test_clip_is_boundary_inclusive(self):
        clipped = saturate(FieldVector(b=[1900.0, -1900.0, 1899.9, 2500.0, -3000.0, 0.0]), 1900.0)
        assert_array_equal(clipped.b, [1900.0, -1900.0, 1899.9, 1900.0, -1900.0, 0.0])
        assert_array_equal(clipped.sat_mask, [True, True, False, True, True, False])

    def test_clip_is_idempotent(self):
        once = saturate(FieldVector(b=np.linspace(-4000, 4000, 9)), 1900.0)
        twice = saturate(once, 1900.0)
        assert_array_equal(once.b, twice.b)
        assert_array_equal(once.sat_mask, twice.sat_mask)

    def test_infinite_threshold_keeps_signal(self):
        field = FieldVector(b=[1e6, -1e6, 3.0])
        assert_array_equal(saturate(field, math.inf).b, field.b)
        with self.assertRaises(InvariantViolation):
            saturate(field, 0.0)

    def test_close_standoff_saturates_inner_sensor(self):
        layout = build_staggered_split()
        sensor = 1 * 4 + 1
        above = layout.positions[sensor] - np.array([0.0, 0.0, 0.030])
        self.assertEqual(above[0], GRID_COORDS[1])
        pose = Pose5(p=above, psi=0.0, theta=0.0)
        clean = field_array(pose, layout, MagnetModel())
        clipped = saturate(clean, 1900.0)
        self.assertTrue(clipped.sat_mask[3 * sensor + 2])
        self.assertAlmostEqual(clean.b[3 * sensor + 2], 2 * DEFAULT_B_T / 0.030 ** 3, places=6)
        assert_array_equal(clipped.sat_mask, np.abs(clean.b) >= 1900.0)

    def test_field_vector_length_checked(self):
        with self.assertRaises(InvariantViolation):
            FieldVector(b=[1.0, 2.0])
