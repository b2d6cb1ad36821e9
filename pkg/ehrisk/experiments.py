from __future__ import absolute_import, division, print_function
import logging; _L = logging.getLogger('ehrisk.experiments')

from concurrent.futures import ThreadPoolExecutor

import numpy

from . import trainer
from .datagen import generate_cohort, contaminate, ContaminationSpec
from .encoder import ConfigError
from .trainer import ModelConfig, TrainConfig
from .util import log_elapsed

DEFAULT_HEADS = (2, 4, 6, 8, 10, 12)
DEFAULT_RHOS = (0., 0.05, 0.10, 0.15, 0.20, 0.25)
DEFAULT_ARCHITECTURES = ('transformer', 'mlp')

# Every head count in DEFAULT_HEADS divides this width.
HEAD_SWEEP_D_M = 24

DEFAULT_TEST_SIZE = 500

METRIC_NAMES = ('acc', 'precision', 'recall', 'f1')

class ExperimentConfig:
    ''' Grids, seeds and sizes shared by the comparison and both sweeps.
    '''
    fields = ('seeds', 'head_list', 'head_d_m', 'rho_list', 'noise_sigma', 'n_test', 'workers')

    def __init__(self, seeds=(1, 2, 3), head_list=DEFAULT_HEADS, head_d_m=HEAD_SWEEP_D_M,
                 rho_list=DEFAULT_RHOS, noise_sigma=10.0, n_test=DEFAULT_TEST_SIZE, workers=1):
        self.seeds = tuple(seeds)
        self.head_list = tuple(head_list)
        self.head_d_m = head_d_m
        self.rho_list = tuple(rho_list)
        self.noise_sigma = noise_sigma
        self.n_test = n_test
        self.workers = workers

    def validate(self):
        if not self.seeds:
            raise ValueError('Need at least one seed')
        if self.n_test < 1:
            raise ValueError('n_test must be >= 1, got {}'.format(self.n_test))
        if self.workers < 1:
            raise ValueError('workers must be >= 1, got {}'.format(self.workers))
        return self

    def replace(self, **changes):
        values = self.todict()
        values.update(changes)
        return ExperimentConfig.fromdict(values)

    def todict(self):
        return dict(seeds=list(self.seeds), head_list=list(self.head_list), head_d_m=self.head_d_m,
                    rho_list=list(self.rho_list), noise_sigma=self.noise_sigma, n_test=self.n_test,
                    workers=self.workers)

    @staticmethod
    def fromdict(data):
        unknown = set(data) - set(ExperimentConfig.fields)
        if unknown:
            raise ValueError('Unknown experiment settings {}'.format(sorted(unknown)))
        return ExperimentConfig(**data)

class SweepResult:
    ''' One row per (value, seed) cell, plus per-value mean and standard deviation.
    '''
    def __init__(self, experiment, parameter, rows, config):
        self.experiment = experiment
        self.parameter = parameter
        self.rows = list(rows)
        self.config = config

    def values(self):
        seen = []
        for row in self.rows:
            if row['value'] not in seen:
                seen.append(row['value'])
        return seen

    def aggregate(self):
        summary = []

        for value in self.values():
            reports = [row['metrics'] for row in self.rows if row['value'] == value and row['metrics'] is not None]
            entry = dict(value=value, n=len(reports))
            for name in METRIC_NAMES:
                scores = numpy.array([report[name] for report in reports], dtype=numpy.float64)
                entry[name + '_mean'] = float(scores.mean()) if len(scores) else None
                entry[name + '_std'] = float(scores.std()) if len(scores) else None
            summary.append(entry)

        return summary

    def mean(self, value, metric):
        for entry in self.aggregate():
            if entry['value'] == value:
                return entry[metric + '_mean']
        raise KeyError(value)

    def todict(self):
        return dict(experiment=self.experiment, parameter=self.parameter, config=self.config,
                    rows=list(self.rows), aggregate=self.aggregate())

class SweepTask(object):
    ''' How one swept value changes the model config or the training cohort.
    '''
    experiment = None
    parameter = None

    @classmethod
    def from_sweep_string(clz, sweep_string, **kwargs):
        if sweep_string.lower() == 'compare':
            return ComparisonTask(**kwargs)
        elif sweep_string.lower() == 'heads':
            return HeadSweepTask(**kwargs)
        elif sweep_string.lower() == 'contamination':
            return ContaminationSweepTask(**kwargs)
        else:
            raise KeyError("I don't know the sweep {}".format(sweep_string))

    def validate(self, values, model_config):
        for value in values:
            self.model_config(value, model_config).validate(need_d_in=False)

    def model_config(self, value, model_config):
        return model_config

    def training_cohort(self, value, seed, cohort):
        return cohort

    def echo(self):
        return dict()

class ComparisonTask(SweepTask):
    experiment = 'comparison'
    parameter = 'architecture'

    def model_config(self, value, model_config):
        return model_config.replace(architecture=value)

class HeadSweepTask(SweepTask):
    experiment = 'head_sweep'
    parameter = 'n_heads'

    def validate(self, values, model_config):
        bad = [value for value in values if value < 1 or model_config.d_m % value]
        if bad:
            raise ConfigError('Head counts {} do not divide model width {}'.format(bad, model_config.d_m))
        SweepTask.validate(self, values, model_config)

    def model_config(self, value, model_config):
        return model_config.replace(n_heads=value)

class ContaminationSweepTask(SweepTask):
    ''' Contaminates the training cohort only; evaluation stays on clean test patients.
    '''
    experiment = 'contamination_sweep'
    parameter = 'rho'

    def __init__(self, noise_sigma=10.0):
        self.noise_sigma = noise_sigma

    def validate(self, values, model_config):
        for value in values:
            ContaminationSpec(value, self.noise_sigma).validate()
        SweepTask.validate(self, values, model_config)

    def training_cohort(self, value, seed, cohort):
        return contaminate(cohort, ContaminationSpec(value, self.noise_sigma, seed))

    def echo(self):
        return dict(noise_sigma=self.noise_sigma)

def draw_cohorts(gen_config, n_test=DEFAULT_TEST_SIZE):
    ''' Disjoint train and test cohorts from one generator seed.
    '''
    train_cohort = generate_cohort(gen_config)
    test_cohort = generate_cohort(gen_config, start=gen_config.n_patients, count=n_test)
    return train_cohort, test_cohort

def run_cell(task, value, seed, gen_config, model_config, train_config, train_cohort, test_cohort):
    ''' Train and evaluate one (value, seed) cell; return its MetricsReport.
    '''
    cell_model = task.model_config(value, model_config)
    cell_train = train_config.replace(seed=seed)
    cohort = task.training_cohort(value, seed, train_cohort)

    with log_elapsed('Cell %s=%s seed %s', task.parameter, value, seed):
        model, history = trainer.train(cohort, cell_model, cell_train, vocab_size=gen_config.vocab_size)
        return trainer.evaluate(model, test_cohort, cell_train.threshold)

def run_sweep(task, gen_config, model_config, train_config, values, seeds, n_test=DEFAULT_TEST_SIZE, workers=1):
    ''' Run every (value, seed) cell of a sweep after validating all of them.

        Cells may run on worker threads; rows come back ordered by the value
        grid, then seed, whatever order the cells finished in.
    '''
    values, seeds = list(values), list(seeds)
    if not seeds:
        raise ValueError('Need at least one seed')

    gen_config.validate()
    train_config.validate()
    task.validate(values, model_config)

    train_cohort, test_cohort = draw_cohorts(gen_config, n_test)
    cells = [(value, seed) for value in values for seed in seeds]

    def run(cell):
        value, seed = cell
        try:
            report = run_cell(task, value, seed, gen_config, model_config, train_config, train_cohort, test_cohort)
        except Exception as e:
            _L.warning('Cell %s=%s seed %s failed', task.parameter, value, seed, exc_info=True)
            return dict(value=value, seed=seed, metrics=None, error='{}: {}'.format(type(e).__name__, e))
        else:
            return dict(value=value, seed=seed, metrics=report.todict(), error=None)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as executor:
            rows = list(executor.map(run, cells))
    else:
        rows = [run(cell) for cell in cells]

    config = dict(cohort=gen_config.todict(), model=model_config.todict(), train=train_config.todict(),
                  values=values, seeds=seeds, n_test=n_test, **task.echo())

    return SweepResult(task.experiment, task.parameter, rows, config)

def run_comparison(gen_config, model_config=None, train_config=None, seeds=(1, 2, 3), n_test=DEFAULT_TEST_SIZE, workers=1):
    ''' Transformer against the mean-pooled MLP baseline on the same cohorts and splits.
    '''
    return run_sweep(SweepTask.from_sweep_string('compare'), gen_config, model_config or ModelConfig(), train_config or TrainConfig(),
                     DEFAULT_ARCHITECTURES, seeds, n_test, workers)

def sweep_heads(gen_config, model_config=None, train_config=None, head_list=DEFAULT_HEADS, seeds=(1, ), n_test=DEFAULT_TEST_SIZE, workers=1):
    model_config = model_config or ModelConfig(d_m=HEAD_SWEEP_D_M)
    return run_sweep(SweepTask.from_sweep_string('heads'), gen_config, model_config, train_config or TrainConfig(),
                     head_list, seeds, n_test, workers)

def sweep_contamination(gen_config, model_config=None, train_config=None, rho_list=DEFAULT_RHOS, seeds=(1, 2, 3),
                        noise_sigma=10.0, n_test=DEFAULT_TEST_SIZE, workers=1):
    return run_sweep(SweepTask.from_sweep_string('contamination', noise_sigma=noise_sigma), gen_config, model_config or ModelConfig(),
                     train_config or TrainConfig(), rho_list, seeds, n_test, workers)
