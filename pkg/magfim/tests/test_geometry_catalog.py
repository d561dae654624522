import json
import tempfile
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase
from numpy.testing import assert_array_equal

from magfim.exceptions import InvariantViolation, ParseError
from magfim.geometry_catalog import (
    LOWER_Z,
    UPPER_Z,
    SensorLayout,
    build_dual_layer,
    build_layout,
    build_planar,
    build_single_split,
    build_staggered_split,
    layout_from_document,
    layout_from_dual_layer,
    load_layout,
    resolve_layout,
    save_layout,
)


class BuilderTests(SimpleTestCase):
    def test_benchmark_layouts_have_sixteen_sensors(self):
        for layout in (build_planar(), build_single_split(), build_staggered_split()):
            self.assertEqual(layout.n_sensors, 16)
            self.assertEqual(len(layout), 16)

    def test_planar_is_flat(self):
        self.assertEqual(build_planar().z_levels, [LOWER_Z])

    def test_split_heights(self):
        self.assertEqual(build_single_split().z_levels, [0.0, LOWER_Z])
        staggered = build_staggered_split()
        self.assertEqual(staggered.z_levels, [LOWER_Z, UPPER_Z])
        outer = np.isclose(np.abs(staggered.positions[:, 0]), 0.05)
        assert_array_equal(staggered.positions[outer, 2], LOWER_Z)
        assert_array_equal(staggered.positions[~outer, 2], UPPER_Z)
        self.assertEqual(int(outer.sum()), 8)

    def test_column_axis_y_swaps_outer_columns(self):
        layout = build_staggered_split(column_axis='y')
        outer = np.isclose(np.abs(layout.positions[:, 1]), 0.05)
        assert_array_equal(layout.positions[outer, 2], LOWER_Z)
        with self.assertRaises(InvariantViolation):
            build_planar(column_axis='z')

    def test_unknown_name(self):
        with self.assertRaises(InvariantViolation):
            build_layout('hexagonal')

    def test_dual_layer_subset_matches_staggered(self):
        self.assertEqual(build_dual_layer().n_sensors, 32)
        subset = layout_from_dual_layer('staggered')
        assert_array_equal(subset.positions, build_staggered_split().positions)
        with self.assertRaises(InvariantViolation):
            layout_from_dual_layer('single-split')


class ValidationTests(SimpleTestCase):
    def test_duplicate_sensor_names_the_pair(self):
        positions = [[0, 0, 0], [1, 0, 0], [0, 0, 0]]
        with self.assertRaisesMessage(InvariantViolation, 'sensors 0 and 2'):
            SensorLayout('dup', positions)

    def test_empty_layout(self):
        with self.assertRaises(InvariantViolation):
            SensorLayout('empty', np.empty((0, 3)))

    def test_with_sensor_appends(self):
        layout = build_planar().with_sensor([0.0, 0.0, 0.3], name='plus')
        self.assertEqual(layout.n_sensors, 17)
        with self.assertRaises(InvariantViolation):
            layout.with_sensor(layout.positions[0])


class LayoutFileTests(SimpleTestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)
        self.dir = Path(self.tmp.name)

    def test_save_then_load_is_exact(self):
        path = self.dir / 'staggered.json'
        save_layout(build_staggered_split(), path)
        self.assertEqual(load_layout(path), build_staggered_split())
        self.assertEqual(resolve_layout(str(path)), build_staggered_split())

    def test_malformed_json_reports_line(self):
        path = self.dir / 'bad.json'
        path.write_text('{\n  "name": "x",\n  "positions_m": [1, 2\n}', encoding='utf-8')
        with self.assertRaises(ParseError) as ctx:
            load_layout(path)
        self.assertIsNotNone(ctx.exception.line)

    def test_schema_error_reports_field(self):
        with self.assertRaises(ParseError) as ctx:
            layout_from_document({'name': 'x', 'positions_m': [[0, 0]]})
        self.assertTrue(ctx.exception.field.startswith('positions_m'))
        with self.assertRaises(ParseError):
            layout_from_document({'name': 'x', 'positions_m': [[0, 0, 0]], 'extra': 1})

    def test_missing_file(self):
        with self.assertRaises(FileNotFoundError):
            resolve_layout(str(self.dir / 'missing.json'))

    def test_document_is_plain_json(self):
        document = build_planar().to_document()
        self.assertEqual(json.loads(json.dumps(document))['positions_m'][0], [-0.05, -0.05, 0.02])
