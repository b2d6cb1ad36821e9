from __future__ import absolute_import, division, print_function
import logging; _L = logging.getLogger('ehrisk')

import json
from os.path import join, dirname

from .datagen import GenConfig
from .trainer import ModelConfig, TrainConfig
from .experiments import ExperimentConfig

with open(join(dirname(__file__), 'VERSION')) as file:
    __version__ = file.read().strip()

class RunConfig:
    ''' Cohort, model, training and experiment settings read from one JSON object.

        Each section is optional and mirrors the field names of its config
        class. Model settings stay as given so a command can fill in its own
        defaults, such as the narrower model width of the head sweep.
    '''
    sections = ('cohort', 'model', 'train', 'experiments')

    def __init__(self, cohort=None, model=None, train=None, experiments=None):
        self.cohort = GenConfig.fromdict(cohort or {})
        self.model_settings = dict(model or {})
        self.train = TrainConfig.fromdict(train or {})
        self.experiments = ExperimentConfig.fromdict(experiments or {})

        # Rejects unknown model keys now instead of at first use.
        ModelConfig.fromdict(self.model_settings)

    def model_config(self, **defaults):
        ''' ModelConfig from the file's model section over the given defaults.
        '''
        values = dict(defaults)
        values.update(self.model_settings)
        return ModelConfig.fromdict(values)

    def with_seed(self, seed):
        ''' Copy with every seed replaced by seed.
        '''
        data = self.todict()
        data['cohort']['seed'] = seed
        data['train']['seed'] = seed
        data['experiments']['seeds'] = [seed]
        return RunConfig.fromdict(data)

    def todict(self):
        return dict(cohort=self.cohort.todict(), model=dict(self.model_settings),
                    train=self.train.todict(), experiments=self.experiments.todict())

    @staticmethod
    def fromdict(data):
        if not isinstance(data, dict):
            raise ValueError('Configuration must be a JSON object')
        unknown = set(data) - set(RunConfig.sections)
        if unknown:
            raise ValueError('Unknown configuration sections {}'.format(sorted(unknown)))
        for (section, value) in data.items():
            if value is not None and not isinstance(value, dict):
                raise ValueError('Configuration section "{}" must be an object'.format(section))
        return RunConfig(**data)

    @staticmethod
    def from_file(path):
        with open(path, encoding='utf8') as file:
            try:
                data = json.load(file)
            except ValueError as e:
                raise ValueError('Could not read configuration {}: {}'.format(path, e))
        _L.debug('Read configuration from {}'.format(path))
        return RunConfig.fromdict(data)
