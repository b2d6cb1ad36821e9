from __future__ import absolute_import, division, print_function

import io
import json
import shutil
import tempfile
import unittest
from os.path import join
from unittest import mock

from .. import util

class TestUtilities (unittest.TestCase):

    def setUp(self):
        self.temp_dir = tempfile.mkdtemp(prefix='TestUtilities-')

    def tearDown(self):
        shutil.rmtree(self.temp_dir)

    def test_substreams(self):
        first = util.substream(7, util.STREAM_PATIENT, 3).random(4).tolist()

        self.assertEqual(first, util.substream(7, util.STREAM_PATIENT, 3).random(4).tolist())
        self.assertNotEqual(first, util.substream(7, util.STREAM_PATIENT, 4).random(4).tolist())
        self.assertNotEqual(first, util.substream(8, util.STREAM_PATIENT, 3).random(4).tolist())
        self.assertNotEqual(first, util.substream(7, util.STREAM_EPOCH, 3).random(4).tolist())

    def test_parse_number_list(self):
        self.assertEqual(util.parse_number_list('2,4,6', int), [2, 4, 6])
        self.assertEqual(util.parse_number_list('0, .25,', float), [0., .25])

        with self.assertRaises(ValueError):
            util.parse_number_list('2,x', int)

    def test_write_json(self):
        path = join(self.temp_dir, 'nested', 'out.json')
        self.assertEqual(util.write_json(path, dict(b=1, a=[.5])), path)

        with open(path) as file:
            text = file.read()

        self.assertEqual(json.loads(text), dict(b=1, a=[.5]))
        self.assertTrue(text.endswith('\n'))
        self.assertEqual(text, util.dump_json(dict(b=1, a=[.5])))

        with mock.patch('sys.stdout', new_callable=io.StringIO) as stdout:
            self.assertIsNone(util.write_json('-', [1, 2]))

        self.assertEqual(json.loads(stdout.getvalue()), [1, 2])

    def test_dump_rejects_nan(self):
        with self.assertRaises(ValueError):
            util.dump_json(dict(value=float('nan')))
