from __future__ import absolute_import, division, print_function
import logging; _L = logging.getLogger('ehrisk.embedder')

from collections import namedtuple

import numpy

from . import numcore
from .numcore import Tensor2, ShapeError, ContractError

# W_e is d_in x d_m; b_e, W_t and b_t are 1 x d_m rows.
EmbedParams = namedtuple('EmbedParams', ('W_e', 'b_e', 'W_t', 'b_t'))

def embed_features(X, p):
    ''' Linear projection of event rows into the model width: X W_e + b_e.
    '''
    if X.cols != p.W_e.rows:
        raise ShapeError('Feature rows have width {}, embedding expects {}'.format(X.cols, p.W_e.rows))
    return numcore.add(numcore.matmul(X, p.W_e), p.b_e)

def temporal_encode(dt, p, log1p=False):
    ''' Learnable gap encoding relu(W_t dt_i + b_t), one row per event.

        dt is a vector or column of non-negative gaps in hours.
    '''
    gaps = numpy.asarray(dt.data if isinstance(dt, Tensor2) else dt, dtype=numpy.float64).reshape(-1, 1)

    if (gaps < 0).any():
        raise ContractError('Time gaps must be non-negative')
    if log1p:
        gaps = numpy.log1p(gaps)

    return numcore.activation('relu', numcore.add(numcore.matmul(Tensor2(gaps), p.W_t), p.b_t))

def combine(H0, Tmat):
    if H0.shape != Tmat.shape:
        raise ShapeError('Cannot combine {} features with {} time encodings'.format(H0.shape, Tmat.shape))
    return numcore.add(H0, Tmat)

def embed(X, dt, p, log1p=False):
    return combine(embed_features(X, p), temporal_encode(dt, p, log1p))
