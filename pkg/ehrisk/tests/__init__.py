# coding=utf8
"""
Run Python test suite via the standard unittest mechanism.
Usage:
  python test.py
  python test.py --logall
  python test.py TestGradCheck
  python test.py -l TestTrain.test_train_determinism
All logging is suppressed unless --logall or -l specified.
Long acceptance runs need EHRISK_SLOW_TESTS=1 in the environment.
"""
from __future__ import absolute_import, division, print_function

import os
import json
import shutil
import tempfile
import unittest
from os.path import join

from .. import RunConfig, __version__
from ..datagen import GenConfig
from ..trainer import ModelConfig, TrainConfig

slow = unittest.skipUnless(os.environ.get('EHRISK_SLOW_TESTS'), 'set EHRISK_SLOW_TESTS=1 for acceptance runs')

def tiny_gen(n_patients=48, seed=0, **changes):
    ''' Small cohort settings that still carry the planted signal.
    '''
    values = dict(n_patients=n_patients, len_min=2, len_max=6, vocab_size=10,
                  cont_dim=3, risk_code=3, seed=seed)
    values.update(changes)
    return GenConfig(**values)

def tiny_model(**changes):
    values = dict(d_m=8, n_heads=2, n_layers=1, d_ff=16, d_a=8, hidden_sizes=(8, 4))
    values.update(changes)
    return ModelConfig(**values)

def tiny_train(**changes):
    values = dict(lr=1e-2, batch_size=16, max_epochs=3, patience=2)
    values.update(changes)
    return TrainConfig(**values)

class TestRunConfig (unittest.TestCase):

    def setUp(self):
        self.temp_dir = tempfile.mkdtemp(prefix='TestRunConfig-')

    def tearDown(self):
        shutil.rmtree(self.temp_dir)

    def test_version(self):
        self.assertRegex(__version__, r'^\d+\.\d+\.\d+$')

    def test_defaults(self):
        run = RunConfig()
        self.assertEqual(run.cohort.n_patients, 1000)
        self.assertEqual(run.train.lr, 1e-3)
        self.assertEqual(run.model_config().d_m, 64)
        self.assertEqual(run.experiments.seeds, (1, 2, 3))

    def test_from_file(self):
        path = join(self.temp_dir, 'config.json')

        with open(path, 'w') as file:
            json.dump(dict(cohort=dict(n_patients=20, seed=9), model=dict(n_heads=2),
                           train=dict(max_epochs=4), experiments=dict(workers=2)), file)

        run = RunConfig.from_file(path)
        self.assertEqual(run.cohort.n_patients, 20)
        self.assertEqual(run.cohort.seed, 9)
        self.assertEqual(run.train.max_epochs, 4)
        self.assertEqual(run.experiments.workers, 2)
        self.assertEqual(run.model_config().n_heads, 2)

    def test_model_defaults_yield_to_file(self):
        run = RunConfig(model=dict(d_m=48))
        self.assertEqual(run.model_config(d_m=24).d_m, 48, 'File settings win over command defaults')
        self.assertEqual(RunConfig().model_config(d_m=24).d_m, 24)

    def test_unknown_keys_rejected(self):
        for data in (dict(cohort=dict(patients=3)), dict(model=dict(width=3)),
                     dict(train=dict(learning_rate=1)), dict(experiments=dict(grid=[])),
                     dict(extra=dict())):
            with self.assertRaises(ValueError):
                RunConfig.fromdict(data)

    def test_malformed_file(self):
        path = join(self.temp_dir, 'config.json')

        with open(path, 'w') as file:
            file.write('{"cohort": ')

        with self.assertRaises(ValueError):
            RunConfig.from_file(path)

        with open(path, 'w') as file:
            file.write('[1, 2]')

        with self.assertRaises(ValueError):
            RunConfig.from_file(path)

    def test_with_seed(self):
        run = RunConfig(cohort=dict(seed=1), train=dict(seed=2)).with_seed(42)
        self.assertEqual(run.cohort.seed, 42)
        self.assertEqual(run.train.seed, 42)
        self.assertEqual(run.experiments.seeds, (42, ))
