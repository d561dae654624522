import math

import numpy as np
from django.test import SimpleTestCase
from numpy.testing import assert_allclose, assert_array_equal

from magfim.dipole_core import MagnetModel, Pose5
from magfim.exceptions import AllDegenerate, InvariantViolation, NonFinite
from magfim.geometry_catalog import SensorLayout, build_planar, build_single_split, build_staggered_split
from magfim.observability import (
    NoiseModel,
    PoseSet,
    WorkspaceSpec,
    angular_ori_bound_deg,
    build_fim,
    crlb_metrics,
    evaluate_poses,
    lhs_sample,
    lhs_sample_fixed_z,
    sweep_fixed_z,
    sweep_workspace,
)


MODEL = MagnetModel()
NOISE = NoiseModel(sigma=10.0)


def random_poses(seed, count):
    return lhs_sample(WorkspaceSpec(n_samples=count, seed=seed))


class FimTests(SimpleTestCase):
    def test_symmetric_and_positive_semidefinite(self):
        layout = build_staggered_split()
        for pose in random_poses(1, 50):
            fim = build_fim(pose, layout, MODEL, NOISE)
            assert_array_equal(fim, fim.T)
            eigenvalues = np.linalg.eigvalsh(fim)
            self.assertGreaterEqual(eigenvalues[0], -1e-8 * eigenvalues[-1])

    def test_noise_scaling_is_exact(self):
        layout = build_planar()
        pose = Pose5([0.01, 0.02, 0.1], 1.0, 1.0)
        assert_array_equal(build_fim(pose, layout, MODEL, NoiseModel(20.0)), build_fim(pose, layout, MODEL, NOISE) / 4)

    def test_adding_a_sensor_never_lowers_eigenvalues(self):
        rng = np.random.default_rng(5)
        base = build_planar()
        for pose in random_poses(2, 100):
            extra = rng.uniform([-0.08, -0.08, -0.02], [0.08, 0.08, 0.0])
            before = np.linalg.eigvalsh(build_fim(pose, base, MODEL, NOISE))
            after = np.linalg.eigvalsh(build_fim(pose, base.with_sensor(extra), MODEL, NOISE))
            self.assertTrue(np.all(after >= before - 1e-9 * before[-1]))


class MetricTests(SimpleTestCase):
    def test_diagonal_fim(self):
        report = crlb_metrics(np.diag([1e6, 1e6, 1e6, 1e2, 1e2]))
        self.assertFalse(report.degenerate)
        self.assertAlmostEqual(report.pos_bound_mm, 1000 * math.sqrt(3e-6), places=10)
        self.assertAlmostEqual(report.ori_bound_deg, math.degrees(math.sqrt(2e-2)), places=10)
        self.assertAlmostEqual(report.lambda_min, 1e2)
        self.assertAlmostEqual(report.kappa, 1e4)
        self.assertAlmostEqual(report.logdet, 3 * math.log(1e6) + 2 * math.log(1e2))

    def test_rank_deficient_fim_is_degenerate(self):
        report = crlb_metrics(np.diag([1.0, 1.0, 1.0, 1.0, 0.0]))
        self.assertTrue(report.degenerate)
        self.assertEqual(report.pos_bound_mm, math.inf)
        self.assertEqual(report.kappa, math.inf)

    def test_shape_and_finiteness_checked(self):
        with self.assertRaises(InvariantViolation):
            crlb_metrics(np.eye(4))
        fim = np.eye(5)
        fim[0, 0] = math.nan
        with self.assertRaises(NonFinite):
            crlb_metrics(fim)

    def test_angular_bound_weights_yaw_by_sine(self):
        fim = np.diag([1.0, 1.0, 1.0, 4.0, 1.0])
        self.assertAlmostEqual(angular_ori_bound_deg(fim, math.pi / 2), math.degrees(math.sqrt(1.25)))
        self.assertAlmostEqual(angular_ori_bound_deg(fim, math.pi / 6), math.degrees(math.sqrt(1 + 0.25 * 0.25)))


class SamplingTests(SimpleTestCase):
    def assert_one_per_stratum(self, values, lo, hi):
        n = len(values)
        strata = np.floor((np.asarray(values) - lo) / (hi - lo) * n).astype(int)
        assert_array_equal(np.sort(strata), np.arange(n))

    def test_latin_hypercube_strata(self):
        for n in (4, 16, 1000):
            spec = WorkspaceSpec(n_samples=n, seed=11)
            poses = lhs_sample(spec)
            self.assertEqual(len(poses), n)
            self.assert_one_per_stratum(poses.positions[:, 0], *spec.x_range)
            self.assert_one_per_stratum(poses.positions[:, 1], *spec.y_range)
            self.assert_one_per_stratum(poses.positions[:, 2], *spec.z_range)
            self.assert_one_per_stratum(poses.psi, 0.0, 2 * math.pi)
            cos_lo = -math.cos(spec.theta_margin)
            self.assert_one_per_stratum(np.cos(poses.theta), cos_lo, -cos_lo)

    def test_seed_determinism(self):
        a = lhs_sample(WorkspaceSpec(n_samples=64, seed=3))
        b = lhs_sample(WorkspaceSpec(n_samples=64, seed=3))
        c = lhs_sample(WorkspaceSpec(n_samples=64, seed=4))
        assert_array_equal(a.positions, b.positions)
        assert_array_equal(a.theta, b.theta)
        self.assertFalse(np.array_equal(a.positions, c.positions))

    def test_fixed_height_sampling(self):
        poses = lhs_sample_fixed_z(WorkspaceSpec(n_samples=32, seed=0), 0.07)
        assert_array_equal(poses.positions[:, 2], 0.07)
        self.assertIsInstance(poses[0], Pose5)
        self.assertEqual(len(poses[4:8]), 4)

    def test_pose_set_from_poses(self):
        poses = random_poses(0, 5)
        rebuilt = PoseSet.from_poses(list(poses))
        assert_array_equal(rebuilt.positions, poses.positions)

    def test_invalid_workspace(self):
        with self.assertRaises(ValueError):
            WorkspaceSpec(z_range=(0.2, 0.1))


class SweepTests(SimpleTestCase):
    def test_benchmark_ordering(self):
        spec = WorkspaceSpec(n_samples=2000, seed=0)
        staggered = sweep_workspace(build_staggered_split(), spec, MODEL, NOISE)
        planar = sweep_workspace(build_planar(), spec, MODEL, NOISE)
        single = sweep_workspace(build_single_split(), spec, MODEL, NOISE)
        self.assertLess(staggered.median('pos_bound_mm'), planar.median('pos_bound_mm'))
        self.assertLess(planar.median('pos_bound_mm'), single.median('pos_bound_mm'))
        self.assertLess(staggered.median('ori_bound_deg'), planar.median('ori_bound_deg'))
        self.assertGreater(staggered.median('lambda_min'), planar.median('lambda_min'))
        self.assertGreater(planar.median('lambda_min'), single.median('lambda_min'))

    def test_benchmark_bound_levels(self):
        spec = WorkspaceSpec(n_samples=2000, seed=0)
        staggered = sweep_workspace(build_staggered_split(), spec, MODEL, NOISE)
        planar = sweep_workspace(build_planar(), spec, MODEL, NOISE)
        single = sweep_workspace(build_single_split(), spec, MODEL, NOISE)
        bands = [
            (staggered.median('pos_bound_mm'), 0.79, 1.31),
            (planar.median('pos_bound_mm'), 2.14, 3.56),
            (single.median('pos_bound_mm'), 2.90, 4.83),
            (staggered.median('ori_bound_deg'), 1.29, 2.15),
            (planar.median('ori_bound_deg'), 2.82, 4.70),
        ]
        for value, lo, hi in bands:
            self.assertGreaterEqual(value, lo)
            self.assertLessEqual(value, hi)
        self.assertGreaterEqual(staggered.median('lambda_min') / planar.median('lambda_min'), 3.0)

    def test_close_sensors_warn_about_dipole_validity(self):
        spec = WorkspaceSpec(n_samples=50, seed=0)
        with self.assertLogs('magfim.observability', 'WARNING') as logs:
            sweep_workspace(build_planar(), spec, MODEL, NOISE)
        self.assertTrue(any('dipole validity' in line for line in logs.output))
        distant = WorkspaceSpec(z_range=(0.07, 0.15), n_samples=50, seed=0)
        with self.assertLogs('magfim.observability', 'INFO') as logs:
            sweep_workspace(build_planar(), distant, MODEL, NOISE)
        self.assertFalse(any('dipole validity' in line for line in logs.output))

    def test_report_is_self_contained(self):
        report = sweep_workspace(build_planar(), WorkspaceSpec(n_samples=100, seed=1), MODEL, NOISE)
        document = report.model_dump(mode='json')
        self.assertEqual(len(document['layout']['positions_m']), 16)
        self.assertEqual(document['n_valid'] + document['n_degenerate'], 100)
        metrics = report.metrics['pos_bound_mm']
        self.assertLessEqual(metrics.p5, metrics.p25)
        self.assertLessEqual(metrics.p25, metrics.median)
        self.assertLessEqual(metrics.median, metrics.p75)

    def test_thread_count_does_not_change_results(self):
        poses = random_poses(9, 300)
        layout = build_staggered_split()
        serial = evaluate_poses(layout, poses, MODEL, NOISE, threads=1, chunk_size=64)
        parallel = evaluate_poses(layout, poses, MODEL, NOISE, threads=4, chunk_size=64)
        assert_array_equal(serial.pos_bound_mm, parallel.pos_bound_mm)
        assert_array_equal(serial.logdet, parallel.logdet)

    def test_single_sensor_is_all_degenerate(self):
        layout = SensorLayout('one', [[0.0, 0.0, 0.0]])
        with self.assertRaises(AllDegenerate):
            sweep_workspace(layout, WorkspaceSpec(n_samples=20, seed=0), MODEL, NOISE)

    def test_far_field_attenuation_on_planar(self):
        spec = WorkspaceSpec(n_samples=500, seed=2)
        low = sweep_fixed_z(build_planar(), spec, 0.07, MODEL, NOISE)
        high = sweep_fixed_z(build_planar(), spec, 0.15, MODEL, NOISE)
        self.assertEqual(high.fixed_z, 0.15)
        self.assertGreater(high.median('pos_bound_mm'), low.median('pos_bound_mm'))
