from __future__ import absolute_import, division, print_function

import json
import math
import shutil
import tempfile
import unittest
from collections import OrderedDict
from os.path import join
from unittest import mock

import numpy

from . import tiny_gen, tiny_model, tiny_train
from .. import numcore, trainer
from ..datagen import generate_cohort
from ..encoder import ConfigError
from ..ingest import Event, PatientSequence, fit_feature_space, vectorize, batch_pad
from ..numcore import ShapeError
from ..trainer import (
    ModelConfig, TrainConfig, OptimState, init_params, adam_step, train,
    save_checkpoint, load_checkpoint, gradient_audit, DivergenceError,
    CheckpointVersionError, CheckpointIntegrityError
    )

def relabel(cohort, label):
    return [PatientSequence(seq.patient_id, label, seq.events, seq.static) for seq in cohort]

class TestConfig (unittest.TestCase):

    def test_derived_widths(self):
        config = ModelConfig(d_m=16)
        self.assertEqual((config.d_ff, config.d_a), (64, 16))

        narrow = config.replace(d_m=24)
        self.assertEqual((narrow.d_ff, narrow.d_a), (96, 24))
        self.assertEqual(ModelConfig(d_m=16, d_ff=10, d_a=3).replace(d_m=24).d_ff, 10)

    def test_round_trip(self):
        config = ModelConfig(architecture='mlp', d_in=12, hidden_sizes=(5, 3))
        again = ModelConfig.fromdict(json.loads(json.dumps(config.todict())))
        self.assertEqual(again.todict(), config.todict())
        self.assertEqual(again.hidden_sizes, (5, 3))

    def test_validation(self):
        with self.assertRaises(ValueError):
            ModelConfig.fromdict(dict(width=3))

        with self.assertRaises(ValueError):
            TrainConfig.fromdict(dict(momentum=.9))

        with self.assertRaises(ConfigError):
            ModelConfig(d_in=10, d_m=64, n_heads=12).validate()

        with self.assertRaises(ConfigError):
            ModelConfig(d_in=None).validate()

        with self.assertRaises(ConfigError):
            ModelConfig(architecture='mlp', d_in=4, hidden_sizes=(4, 0)).validate()

        with self.assertRaises(KeyError):
            ModelConfig(architecture='lstm', d_in=4).validate()

        for changes in (dict(lr=0.), dict(val_fraction=1.), dict(batch_size=0), dict(patience=0)):
            with self.assertRaises(ValueError):
                TrainConfig(**changes).validate()

class TestInit (unittest.TestCase):

    def test_deterministic(self):
        config = tiny_model(d_in=13)
        self.assertEqual(init_params(config, 5).fingerprint(), init_params(config, 5).fingerprint())
        self.assertNotEqual(init_params(config, 5).fingerprint(), init_params(config, 6).fingerprint())

    def test_ranges(self):
        config = tiny_model(d_in=13, n_layers=2)
        model = init_params(config, 1)
        specs = {spec.name: spec for spec in trainer.config_specs(config)}

        self.assertEqual(list(model.arrays), [spec.name for spec in trainer.config_specs(config)])

        for (name, array) in model.arrays.items():
            spec = specs[name]
            self.assertEqual(array.shape, (spec.rows, spec.cols))

            if spec.kind == 'weight':
                bound = math.sqrt(6. / (spec.fan_in + spec.fan_out))
                self.assertLessEqual(numpy.abs(array).max(), bound, name)
            elif spec.kind == 'gamma':
                self.assertTrue((array == 1.).all(), name)
            elif spec.kind == 'temporal_bias':
                self.assertTrue((array == trainer.TEMPORAL_BIAS_INIT).all(), name)
            else:
                self.assertTrue((array == 0.).all(), name)

    def test_layout(self):
        names = list(init_params(tiny_model(d_in=13), 1).arrays)

        self.assertEqual(names[:4], ['embed.W_e', 'embed.b_e', 'embed.W_t', 'embed.b_t'])
        self.assertIn('layer0.head1.W_V', names)
        self.assertIn('layer0.ffn.ln.beta', names)
        self.assertEqual(names[-4:], ['pool.W_a', 'pool.v', 'head.W_c', 'head.b_c'])

        names = list(init_params(tiny_model(d_in=13, ffn_enabled=False), 1).arrays)
        self.assertFalse([name for name in names if '.ffn.' in name])

        names = list(init_params(tiny_model(d_in=13, architecture='mlp'), 1).arrays)
        self.assertEqual(names, ['mlp.W_1', 'mlp.b_1', 'mlp.W_2', 'mlp.b_2', 'mlp.W_3', 'mlp.b_3'])

class TestAdam (unittest.TestCase):

    def test_zero_gradients(self):
        params = OrderedDict(w=numpy.array([[1., -2.]]))
        new_params, state = adam_step(params, dict(w=numpy.zeros((1, 2))), OptimState.empty(params), TrainConfig())

        self.assertEqual(new_params['w'].tolist(), [[1., -2.]])
        self.assertEqual(state.t, 1)

    def test_first_step(self):
        params = OrderedDict(w=numpy.array([[1.]]), u=numpy.array([[1.]]))
        grads = dict(w=numpy.array([[.5]]), u=numpy.array([[-3.]]))
        cfg = TrainConfig(lr=1e-3)

        new_params, state = adam_step(params, grads, OptimState.empty(params), cfg)

        self.assertAlmostEqual(1. - new_params['w'][0, 0], 1e-3, places=9)
        self.assertAlmostEqual(new_params['u'][0, 0] - 1., 1e-3, places=9)
        self.assertEqual(params['w'][0, 0], 1., 'Inputs are left alone')

    def test_repeatable(self):
        params = OrderedDict(w=numpy.array([[1., 2.]]))
        grads = dict(w=numpy.array([[.3, -.1]]))
        cfg = TrainConfig(lr=1e-2)

        def run():
            p, state = params, OptimState.empty(params)
            for _ in range(5):
                p, state = adam_step(p, grads, state, cfg)
            return p['w'].tolist(), state.m['w'].tolist(), state.v['w'].tolist()

        self.assertEqual(run(), run())

    def test_shape_mismatch(self):
        params = OrderedDict(w=numpy.zeros((2, 2)))

        with self.assertRaises(ShapeError):
            adam_step(params, dict(w=numpy.zeros((1, 2))), OptimState.empty(params), TrainConfig())

        with self.assertRaises(ShapeError):
            adam_step(params, dict(), OptimState.empty(params), TrainConfig())

class TestTrain (unittest.TestCase):

    def setUp(self):
        self.temp_dir = tempfile.mkdtemp(prefix='TestTrain-')
        self.cohort = generate_cohort(tiny_gen())

    def tearDown(self):
        shutil.rmtree(self.temp_dir)

    def test_split(self):
        first, second = trainer.split_indices(50, .2, 3)

        self.assertEqual(len(second), 10)
        self.assertEqual(sorted(first.tolist() + second.tolist()), list(range(50)))
        self.assertEqual(trainer.split_indices(50, .2, 3)[1].tolist(), second.tolist())

    def test_train_determinism(self):
        model1, history1 = train(self.cohort, tiny_model(), tiny_train(), vocab_size=10)
        model2, history2 = train(self.cohort, tiny_model(), tiny_train(), vocab_size=10)

        self.assertEqual(model1.fingerprint(), model2.fingerprint())
        self.assertEqual(json.dumps(history1.todict()), json.dumps(history2.todict()))
        self.assertEqual(len(history1.epochs), 3)
        self.assertEqual(model1.config.d_in, 13)

    def test_small_cohort(self):
        with self.assertRaises(ValueError):
            train(self.cohort[:10], tiny_model(), tiny_train(), vocab_size=10)

    def test_early_stopping(self):
        real = trainer._mean_loss

        def scripted(*values):
            losses = iter(values)
            return lambda model, vseqs, batch_size: (next(losses), real(model, vseqs, batch_size)[1])

        with mock.patch.object(trainer, '_mean_loss', scripted(1., .9, .8, .85, .86, .87, .88)):
            model, history = train(self.cohort, tiny_model(), tiny_train(max_epochs=10, patience=2), vocab_size=10)

        self.assertEqual(history.initial_train_loss, 1.)
        self.assertEqual(history.stopped_epoch, 4)
        self.assertEqual(history.best_epoch, 2)
        self.assertEqual(history.best['val_loss'], .8)

        with mock.patch.object(trainer, '_mean_loss', scripted(1., .9, .8)):
            two_epochs, _ = train(self.cohort, tiny_model(), tiny_train(max_epochs=2), vocab_size=10)

        self.assertEqual(model.fingerprint(), two_epochs.fingerprint(), 'Best epoch parameters come back')

    def test_divergence(self):
        real = trainer.adam_step

        def poisoned(params, grads, state, cfg):
            arrays, state = real(params, grads, state, cfg)
            return OrderedDict((name, array * numpy.nan) for (name, array) in arrays.items()), state

        with mock.patch.object(trainer, 'adam_step', poisoned):
            with self.assertRaises(DivergenceError) as context:
                train(self.cohort, tiny_model(), tiny_train(), vocab_size=10)

        self.assertIn('epoch 1', str(context.exception))

    def test_single_label(self):
        cohort = relabel(self.cohort, 0)
        model, history = train(cohort, tiny_model(), tiny_train(max_epochs=10, patience=10), vocab_size=10)
        predictions = trainer.predict(model, cohort)

        self.assertTrue(numpy.isfinite(predictions).all())
        self.assertLess(history.epochs[-1]['train_loss'], history.initial_train_loss)
        self.assertLess(predictions.mean(), .5)

    def test_constant_features(self):
        cohort = [PatientSequence(seq.patient_id, seq.label, [Event(e.t, e.code, (1., 1., 1.)) for e in seq.events])
                  for seq in self.cohort]
        model, history = train(cohort, tiny_model(), tiny_train(), vocab_size=10)

        self.assertEqual(model.feature_space.cont_std.tolist(), [1e-6] * 3)
        self.assertTrue(numpy.isfinite(trainer.predict(model, cohort)).all())

    def test_mlp_baseline(self):
        model, history = train(self.cohort, tiny_model(architecture='mlp'), tiny_train(), vocab_size=10)
        report = trainer.evaluate(model, self.cohort)

        self.assertEqual(model.config.architecture, 'mlp')
        self.assertEqual(report.n, len(self.cohort))

        with self.assertRaises(ValueError):
            trainer.explain(model, self.cohort)

    def test_padding_invariance(self):
        model = init_params(tiny_model(d_in=13), 2, fit_feature_space(self.cohort, 10))

        batched = trainer.predict(model, self.cohort, batch_size=64)
        alone = trainer.predict(model, self.cohort, batch_size=1)

        self.assertLessEqual(numpy.abs(batched - alone).max(), 1e-9)

    def test_explain(self):
        model = init_params(tiny_model(d_in=13), 2, fit_feature_space(self.cohort, 10))
        rows = trainer.explain(model, self.cohort[:5])

        for (seq, row) in zip(self.cohort, rows):
            self.assertEqual(row['patient_id'], seq.patient_id)
            self.assertEqual(len(row['weights']), len(seq.events))
            self.assertAlmostEqual(sum(row['weights']), 1., places=12)

    def test_single_event_patients(self):
        rng = numpy.random.default_rng(12)
        cohort = [PatientSequence('s{}'.format(i), i % 2, [Event(1., int(rng.integers(10)), tuple(rng.normal(size=3)))])
                  for i in range(32)]

        model, history = train(cohort, tiny_model(), tiny_train(), vocab_size=10)
        rows = trainer.explain(model, cohort)

        self.assertEqual([row['weights'] for row in rows], [[1.]] * 32)

    def test_checkpoint_round_trip(self):
        model, history = train(self.cohort, tiny_model(), tiny_train(), vocab_size=10)
        path = save_checkpoint(model, join(self.temp_dir, 'model.json'), tiny_train(), history)
        loaded = load_checkpoint(path)

        self.assertEqual(loaded.fingerprint(), model.fingerprint())
        self.assertEqual(loaded.config.todict(), model.config.todict())
        self.assertEqual(loaded.feature_space.todict(), model.feature_space.todict())
        self.assertTrue(numpy.array_equal(trainer.predict(loaded, self.cohort), trainer.predict(model, self.cohort)))

        with open(path) as file:
            document = json.load(file)

        self.assertEqual(document['format_version'], trainer.FORMAT_VERSION)
        self.assertEqual(document['metrics_at_best'], history.best['val_metrics'])
        self.assertEqual(document['seed'], 0)

    def test_checkpoint_faults(self):
        model = init_params(tiny_model(d_in=13), 2, fit_feature_space(self.cohort, 10))
        path = save_checkpoint(model, join(self.temp_dir, 'model.json'))

        with open(path) as file:
            text = file.read()

        def rewrite(changes):
            document = json.loads(text)
            changes(document)
            broken = join(self.temp_dir, 'broken.json')
            with open(broken, 'w') as file:
                json.dump(document, file)
            return broken

        broken = rewrite(lambda d: d.update(format_version=99))
        with self.assertRaises(CheckpointVersionError) as context:
            load_checkpoint(broken)
        self.assertIn('99', str(context.exception))

        broken = join(self.temp_dir, 'truncated.json')
        with open(broken, 'w') as file:
            file.write(text[:len(text) // 2])
        with self.assertRaises(CheckpointIntegrityError):
            load_checkpoint(broken)

        def nudge(document):
            document['params']['head.b_c'][0][0] += 1e-3
        with self.assertRaises(CheckpointIntegrityError):
            load_checkpoint(rewrite(nudge))

        def shrink(document):
            document['params']['pool.W_a'].pop()
        with self.assertRaises(CheckpointIntegrityError):
            load_checkpoint(rewrite(shrink))

        with self.assertRaises(CheckpointIntegrityError):
            load_checkpoint(rewrite(lambda d: d['params'].pop('head.W_c')))

        with open(broken, 'w') as file:
            file.write(text.strip() + ' {}')
        with self.assertRaises(CheckpointIntegrityError):
            load_checkpoint(broken)

class TestGradientAudit (unittest.TestCase):

    def setUp(self):
        patients = generate_cohort(tiny_gen(n_patients=3, seed=6))
        self.feature_space = fit_feature_space(patients, 10)
        self.batch = batch_pad([vectorize(seq, self.feature_space) for seq in patients])

    def model(self, **changes):
        return init_params(tiny_model(d_in=self.feature_space.d_in, **changes), 4, self.feature_space)

    def test_fresh_models_pass(self):
        for changes in (dict(), dict(ffn_enabled=False), dict(n_layers=2, n_heads=4), dict(architecture='mlp'), dict(dt_log1p=True)):
            report = gradient_audit(self.model(**changes), self.batch)
            self.assertTrue(report.passed, (changes, report.failing()))

    def test_relative_error_floor(self):
        with mock.patch.object(numcore, 'grad_check', wraps=numcore.grad_check) as grad_check:
            report = gradient_audit(self.model(), self.batch)

        self.assertTrue(report.passed, report.failing())
        self.assertEqual(grad_check.call_args[0][4], 1e-12)

        # a tiny analytic gradient against a zero difference is a full miss
        self.assertEqual(numcore.relative_error(1e-9, 0.), 1.)
        self.assertAlmostEqual(numcore.relative_error(1e-9, 0., 1e-6), 1e-3, places=12)

    def test_broken_layer_norm(self):
        original = numcore._backward_layer_norm

        def broken(saved, grad):
            dx, dgamma, dbeta = original(saved, grad)
            return dx, dgamma * 1.1, dbeta * 1.1

        with mock.patch.object(numcore, '_backward_layer_norm', broken):
            report = gradient_audit(self.model(), self.batch)

        self.assertFalse(report.passed)
        self.assertEqual(sorted(report.failing()),
                         ['layer0.ffn.ln.beta', 'layer0.ffn.ln.gamma', 'layer0.ln.beta', 'layer0.ln.gamma'])

    def test_vacuous_tolerance(self):
        original = numcore._backward_matmul

        with mock.patch.object(numcore, '_backward_matmul', lambda s, g: tuple(2 * v for v in original(s, g))):
            self.assertTrue(gradient_audit(self.model(), self.batch, tol=float('inf')).passed)
