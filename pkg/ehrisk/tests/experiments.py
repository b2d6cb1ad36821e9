from __future__ import absolute_import, division, print_function

import unittest
from unittest import mock

from . import tiny_gen, tiny_model, tiny_train
from .. import experiments, trainer
from ..encoder import ConfigError
from ..experiments import SweepTask, SweepResult, ExperimentConfig, draw_cohorts
from ..trainer import ModelConfig, DivergenceError
from ..util import dump_json

N_TEST = 20

class TestSweepResult (unittest.TestCase):

    def test_aggregate(self):
        report = lambda acc: dict(acc=acc, precision=acc / 2, recall=0., f1=0.)
        rows = [dict(value=2, seed=1, metrics=report(.6), error=None),
                dict(value=2, seed=2, metrics=report(.8), error=None),
                dict(value=4, seed=1, metrics=None, error='DivergenceError: boom'),
                dict(value=4, seed=2, metrics=report(.5), error=None)]
        result = SweepResult('head_sweep', 'n_heads', rows, dict())
        summary = result.aggregate()

        self.assertEqual([entry['value'] for entry in summary], [2, 4])
        self.assertEqual([entry['n'] for entry in summary], [2, 1])
        self.assertAlmostEqual(summary[0]['acc_mean'], .7, places=15)
        self.assertAlmostEqual(summary[0]['acc_std'], .1, places=15)
        self.assertAlmostEqual(summary[0]['precision_mean'], .35, places=15)
        self.assertEqual(summary[1]['acc_std'], 0.)
        self.assertEqual(result.mean(4, 'acc'), .5)

        with self.assertRaises(KeyError):
            result.mean(6, 'acc')

    def test_tasks(self):
        self.assertIsInstance(SweepTask.from_sweep_string('heads'), experiments.HeadSweepTask)
        self.assertIsInstance(SweepTask.from_sweep_string('Contamination', noise_sigma=3.), experiments.ContaminationSweepTask)
        self.assertIsInstance(SweepTask.from_sweep_string('compare'), experiments.ComparisonTask)

        with self.assertRaises(KeyError):
            SweepTask.from_sweep_string('dropout')

    def test_experiment_config(self):
        config = ExperimentConfig()
        self.assertEqual(config.head_list, (2, 4, 6, 8, 10, 12))
        self.assertEqual(config.rho_list, (0., .05, .10, .15, .20, .25))
        self.assertEqual(ExperimentConfig.fromdict(config.todict()).todict(), config.todict())

        for changes in (dict(seeds=()), dict(n_test=0), dict(workers=0)):
            with self.assertRaises(ValueError):
                ExperimentConfig(**changes).validate()

class TestProtocols (unittest.TestCase):

    def setUp(self):
        self.gen = tiny_gen(n_patients=40, seed=7)

    def test_disjoint_cohorts(self):
        train_cohort, test_cohort = draw_cohorts(self.gen, N_TEST)
        self.assertEqual((len(train_cohort), len(test_cohort)), (40, N_TEST))
        self.assertFalse({seq.patient_id for seq in train_cohort} & {seq.patient_id for seq in test_cohort})

    def test_comparison(self):
        result = experiments.run_comparison(self.gen, tiny_model(), tiny_train(), seeds=(1, 2), n_test=N_TEST)

        self.assertEqual([(row['value'], row['seed']) for row in result.rows],
                         [('transformer', 1), ('transformer', 2), ('mlp', 1), ('mlp', 2)])
        self.assertTrue(all(row['error'] is None and row['metrics']['n'] == N_TEST for row in result.rows))

        data = result.todict()
        self.assertEqual(data['experiment'], 'comparison')
        self.assertEqual(data['config']['seeds'], [1, 2])
        self.assertEqual(data['config']['cohort'], self.gen.todict())

    def test_head_sweep(self):
        result = experiments.sweep_heads(self.gen, tiny_model(), tiny_train(), head_list=(1, 2, 4), n_test=N_TEST)

        self.assertEqual([row['value'] for row in result.rows], [1, 2, 4])
        self.assertEqual(len(result.aggregate()), 3)
        self.assertEqual(result.config['model']['d_m'], 8)

    def test_head_sweep_validates_first(self):
        with mock.patch.object(trainer, 'train') as train:
            with self.assertRaises(ConfigError):
                experiments.sweep_heads(self.gen, ModelConfig(d_m=64), tiny_train(), n_test=N_TEST)

            with self.assertRaises(ConfigError):
                experiments.sweep_heads(self.gen, tiny_model(), tiny_train(), head_list=(2, 3), n_test=N_TEST)

        train.assert_not_called()

    def test_head_sweep_default_width(self):
        with mock.patch.object(experiments, 'run_sweep') as run_sweep:
            experiments.sweep_heads(self.gen)

        task, gen, model_config = run_sweep.call_args[0][:3]
        self.assertEqual(model_config.d_m, 24)
        self.assertEqual(run_sweep.call_args[0][4], (2, 4, 6, 8, 10, 12))
        self.assertTrue(all(24 % heads == 0 for heads in (2, 4, 6, 8, 10, 12)))

    def test_front_ends_name_their_task(self):
        with mock.patch.object(experiments, 'run_sweep') as run_sweep, \
             mock.patch.object(SweepTask, 'from_sweep_string', wraps=SweepTask.from_sweep_string) as from_sweep_string:
            experiments.run_comparison(self.gen)
            experiments.sweep_heads(self.gen)
            experiments.sweep_contamination(self.gen, noise_sigma=4.)

        self.assertEqual([c[0][0] for c in from_sweep_string.call_args_list], ['compare', 'heads', 'contamination'])
        tasks = [c[0][0] for c in run_sweep.call_args_list]
        self.assertEqual([task.experiment for task in tasks], ['comparison', 'head_sweep', 'contamination_sweep'])
        self.assertEqual(tasks[2].noise_sigma, 4.)

    def test_contamination_validates_first(self):
        with mock.patch.object(trainer, 'train') as train:
            with self.assertRaises(ValueError):
                experiments.sweep_contamination(self.gen, tiny_model(), tiny_train(), rho_list=(0., 1.5), n_test=N_TEST)

        train.assert_not_called()

    def test_null_contamination_matches_plain_run(self):
        result = experiments.sweep_contamination(self.gen, tiny_model(), tiny_train(), rho_list=(0., .25),
                                                 seeds=(3, ), n_test=N_TEST)

        train_cohort, test_cohort = draw_cohorts(self.gen, N_TEST)
        model, _ = trainer.train(train_cohort, tiny_model(), tiny_train(seed=3), vocab_size=self.gen.vocab_size)
        plain = trainer.evaluate(model, test_cohort)

        self.assertEqual(result.rows[0]['value'], 0.)
        self.assertEqual(result.rows[0]['metrics'], plain.todict())
        self.assertEqual(result.config['noise_sigma'], 10.)

    def test_failures_stay_in_their_row(self):
        real = experiments.run_cell

        def flaky(task, value, seed, *args):
            if seed == 2:
                raise DivergenceError('Loss became non-finite in epoch 1')
            return real(task, value, seed, *args)

        with mock.patch.object(experiments, 'run_cell', flaky):
            result = experiments.run_comparison(self.gen, tiny_model(), tiny_train(), seeds=(1, 2), n_test=N_TEST)

        errors = [row for row in result.rows if row['error']]
        self.assertEqual([(row['value'], row['seed']) for row in errors], [('transformer', 2), ('mlp', 2)])
        self.assertTrue(all(row['metrics'] is None for row in errors))
        self.assertIn('DivergenceError', errors[0]['error'])
        self.assertEqual([entry['n'] for entry in result.aggregate()], [1, 1])

    def test_parallel_rows_match(self):
        serial = experiments.run_comparison(self.gen, tiny_model(), tiny_train(), seeds=(1, ), n_test=N_TEST)
        parallel = experiments.run_comparison(self.gen, tiny_model(), tiny_train(), seeds=(1, ), n_test=N_TEST, workers=2)

        self.assertEqual(dump_json(serial.rows), dump_json(parallel.rows))

    def test_needs_seeds(self):
        with self.assertRaises(ValueError):
            experiments.run_comparison(self.gen, tiny_model(), tiny_train(), seeds=(), n_test=N_TEST)
