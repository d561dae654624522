import math
import tempfile
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase
from numpy.testing import assert_array_equal

from magfim.dataset_gen import (
    DATASET_WORKSPACE,
    MAX_RESAMPLE_ATTEMPTS,
    DatasetSpec,
    GenerationStats,
    NoiseMode,
    generate,
    header_columns,
    read_binary,
    read_csv,
    record_rng,
    simulate_record,
    write_binary,
    write_csv,
)
from magfim.dipole_core import MagnetModel, Pose5, field_array
from magfim.exceptions import DegenerateDistance, InvariantViolation, ParseError
from magfim.geometry_catalog import build_staggered_split
from magfim.observability import WorkspaceSpec


MODEL = MagnetModel()


class NoiseModeTests(SimpleTestCase):
    def test_parse(self):
        self.assertEqual(NoiseMode.parse('none'), NoiseMode())
        self.assertEqual(NoiseMode.parse('relative:0.02'), NoiseMode('relative', 0.02))
        self.assertEqual(NoiseMode.parse('absolute:10').label, 'absolute:10')
        for text in ('gaussian:1', 'absolute', 'relative:x', 'absolute:-1'):
            with self.assertRaises(InvariantViolation):
                NoiseMode.parse(text)

    def test_relative_noise_scales_with_signal(self):
        signal = np.array([1000.0, 0.0, -10.0])
        noisy = NoiseMode('relative', 0.02).apply(signal, np.random.default_rng(0))
        self.assertEqual(noisy[1], 0.0)
        self.assertLess(abs(noisy[2] + 10.0), abs(noisy[0] - 1000.0) + 1.0)


class SimulationTests(SimpleTestCase):
    def setUp(self):
        self.layout = build_staggered_split()
        self.pose = Pose5([0.01, 0.0, 0.1], 1.0, 1.3)

    def test_silent_unclipped_record_is_the_clean_field(self):
        record = simulate_record(self.pose, self.layout, MODEL, math.inf, NoiseMode(), record_rng(0, 0))
        assert_array_equal(record.b, field_array(self.pose, self.layout, MODEL).b)
        self.assertFalse(record.sat_mask.any())

    def test_mask_reflects_clean_saturation_before_noise(self):
        pose = Pose5(self.layout.positions[5] - [0.0, 0.0, 0.03], 0.0, 0.2)
        clean = field_array(pose, self.layout, MODEL).b
        record = simulate_record(pose, self.layout, MODEL, 1900.0, NoiseMode('absolute', 10.0), record_rng(1, 2))
        assert_array_equal(record.sat_mask, np.abs(clean) >= 1900.0)
        self.assertTrue(record.sat_mask.any())

    def test_record_streams_are_keyed_by_index(self):
        a = simulate_record(self.pose, self.layout, MODEL, 1900.0, NoiseMode('absolute', 10.0), record_rng(4, 7))
        b = simulate_record(self.pose, self.layout, MODEL, 1900.0, NoiseMode('absolute', 10.0), record_rng(4, 7))
        c = simulate_record(self.pose, self.layout, MODEL, 1900.0, NoiseMode('absolute', 10.0), record_rng(4, 8))
        assert_array_equal(a.b, b.b)
        self.assertFalse(np.array_equal(a.b, c.b))


class RelativeNoiseTests(SimpleTestCase):
    """相对噪声的标准差取未截断信号幅值"""

    def setUp(self):
        self.layout = build_staggered_split()
        self.pose = Pose5(self.layout.positions[5] - [0.0, 0.0, 0.03], 0.0, 0.0)
        self.clean = field_array(self.pose, self.layout, MODEL).b
        self.mode = NoiseMode('relative', 0.02)

    def deviations(self, b_clip, channels, reference):
        samples = np.array([
            simulate_record(self.pose, self.layout, MODEL, b_clip, self.mode, record_rng(11, i)).b
            for i in range(600)
        ])
        return (samples[:, channels] - reference[channels]) / np.abs(self.clean[channels])

    def test_unclipped_variance_is_relative_to_the_signal(self):
        channels = np.abs(self.clean) > 1e-6
        ratio = self.deviations(math.inf, channels, self.clean)
        self.assertAlmostEqual(float(np.var(ratio)), 0.02 ** 2, delta=0.1 * 0.02 ** 2)

    def test_saturated_channel_noise_uses_the_clean_amplitude(self):
        channels = np.abs(self.clean) >= 1900.0
        self.assertGreater(float(np.abs(self.clean).max()), 5000.0)
        clipped = np.clip(self.clean, -1900.0, 1900.0)
        ratio = self.deviations(1900.0, channels, clipped)
        self.assertAlmostEqual(float(np.std(ratio)), 0.02, delta=0.002)


class DatasetFileTests(SimpleTestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)
        self.dir = Path(self.tmp.name)
        self.layout = build_staggered_split()

    def spec(self, **kwargs):
        params = dict(workspace=DATASET_WORKSPACE, layout=self.layout, count=30, seed=3,
                      noise_mode=NoiseMode('relative', 0.02))
        params.update(kwargs)
        return DatasetSpec(**params)

    def test_header_schema(self):
        columns = header_columns(16)
        self.assertEqual(len(columns), 6 + 6 * 16)
        self.assertEqual(columns[:7], ['px', 'py', 'pz', 'nx', 'ny', 'nz', 'b0x'])
        self.assertEqual(columns[-1], 'sat15z')

    def test_same_seed_gives_identical_bytes(self):
        first, second = self.dir / 'a.csv', self.dir / 'b.csv'
        self.assertEqual(write_csv(generate(self.spec()), first), 30)
        write_csv(generate(self.spec()), second)
        self.assertEqual(first.read_bytes(), second.read_bytes())
        self.assertEqual(len(first.read_text().splitlines()[0].split(',')), 102)

    def test_csv_values_survive_reading(self):
        path = self.dir / 'data.csv'
        records = list(generate(self.spec()))
        write_csv(records, path)
        loaded = read_csv(path)
        self.assertEqual(len(loaded), len(records))
        assert_array_equal(loaded[4].fields.b, records[4].fields.b)
        assert_array_equal(loaded[4].n, records[4].n)
        assert_array_equal(loaded[4].sat_mask, records[4].sat_mask)

    def test_generated_records_are_clipped(self):
        stats = GenerationStats()
        records = list(generate(self.spec(noise_mode=NoiseMode(), b_clip=500.0), stats))
        self.assertEqual(stats.n_generated, 30)
        for record in records:
            self.assertTrue(np.all(np.abs(record.fields.b) <= 500.0))
            assert_array_equal(record.sat_mask, np.abs(record.fields.b) >= 500.0)

    def test_bad_cell_reports_line_and_column(self):
        path = self.dir / 'bad.csv'
        write_csv(generate(self.spec(count=5)), path)
        lines = path.read_text().splitlines()
        cells = lines[3].split(',')
        cells[8] = 'abc'
        lines[3] = ','.join(cells)
        path.write_text('\n'.join(lines) + '\n')
        with self.assertRaises(ParseError) as ctx:
            read_csv(path)
        self.assertEqual(ctx.exception.line, 4)
        self.assertEqual(ctx.exception.field, 'b0z')

    def test_wrong_header(self):
        path = self.dir / 'header.csv'
        path.write_text('px,py,pz,nx,ny\n0,0,0,0,1\n')
        with self.assertRaises(ParseError) as ctx:
            read_csv(path)
        self.assertEqual(ctx.exception.line, 1)

    def test_binary_variant(self):
        path = self.dir / 'data.magd'
        records = list(generate(self.spec(count=8)))
        self.assertEqual(write_binary(records, path), 8)
        loaded = read_binary(path)
        assert_array_equal(loaded[7].fields.b, records[7].fields.b)
        path.write_bytes(b'XXXX' + path.read_bytes()[4:])
        with self.assertRaises(ParseError):
            read_binary(path)

    def test_binary_rejects_mixed_sensor_counts(self):
        first = list(generate(self.spec(count=2)))
        second = list(generate(self.spec(count=2, layout=self.layout.with_sensor([0.0, 0.0, 0.3]))))
        with self.assertRaises(InvariantViolation):
            write_binary(first + second, self.dir / 'mixed.magd')

    def test_exhausted_resampling_names_sensor_and_record(self):
        layout = self.layout.with_sensor([0.0, 0.0, 0.1])
        pinhole = WorkspaceSpec(x_range=(0.0, 1e-9), y_range=(0.0, 1e-9), z_range=(0.1, 0.1 + 1e-9))
        stats = GenerationStats()
        with self.assertRaises(DegenerateDistance) as ctx:
            list(generate(self.spec(workspace=pinhole, layout=layout, count=2), stats))
        self.assertEqual(ctx.exception.sensor_index, 16)
        self.assertEqual(ctx.exception.record_index, 0)
        self.assertLess(ctx.exception.distance, 1e-6)
        self.assertIn('record 0', str(ctx.exception))
        self.assertEqual(stats.n_resampled, MAX_RESAMPLE_ATTEMPTS)

    def test_invalid_spec(self):
        with self.assertRaises(InvariantViolation):
            self.spec(count=0)
