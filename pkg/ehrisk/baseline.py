from __future__ import absolute_import, division, print_function
import logging; _L = logging.getLogger('ehrisk.baseline')

import numpy

from . import numcore
from .numcore import Tensor2
from .encoder import ConfigError
from .trainer import Architecture, ParamSpec

def mean_pool_rows(batch):
    ''' Mean of each sequence's valid vectorized rows; order and timing are discarded.
    '''
    lengths = batch.lengths.reshape(-1, 1).astype(numpy.float64)
    sums = numpy.stack([(X.data * batch.mask[b].reshape(-1, 1)).sum(axis=0) for (b, X) in enumerate(batch.X)])
    return Tensor2(sums / lengths)

class MeanPoolMlpArchitecture(Architecture):
    ''' Baseline: mean-pooled event rows through relu hidden layers and a sigmoid output.
    '''
    name = 'mlp'

    def validate(self, config):
        if not config.hidden_sizes or min(config.hidden_sizes) < 1:
            raise ConfigError('MLP hidden sizes must be positive, got {}'.format(list(config.hidden_sizes)))

    def param_specs(self, config):
        widths = [config.d_in] + list(config.hidden_sizes) + [1]
        specs = []

        for (index, (fan_in, fan_out)) in enumerate(zip(widths[:-1], widths[1:]), 1):
            specs.append(ParamSpec('mlp.W_{}'.format(index), fan_in, fan_out, 'weight', fan_in, fan_out))
            specs.append(ParamSpec('mlp.b_{}'.format(index), 1, fan_out, 'bias', None, None))

        return specs

    def forward(self, config, tensors, batch):
        H = mean_pool_rows(batch)
        layers = len(config.hidden_sizes) + 1

        for index in range(1, layers + 1):
            H = numcore.add(numcore.matmul(H, tensors['mlp.W_{}'.format(index)]), tensors['mlp.b_{}'.format(index)])
            H = numcore.activation('relu' if index < layers else 'sigmoid', H)

        return H
