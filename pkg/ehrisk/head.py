from __future__ import absolute_import, division, print_function
import logging; _L = logging.getLogger('ehrisk.head')

from collections import namedtuple

import numpy

from . import numcore
from .numcore import Tensor2, ShapeError

CLAMP = 1e-7

# W_a is d_m x d_a and v is 1 x d_a; W_c is 1 x d_m and b_c is 1 x 1.
PoolParams = namedtuple('PoolParams', ('W_a', 'v'))
HeadParams = namedtuple('HeadParams', ('W_c', 'b_c'))

def pooling_weights(H, p, mask=None):
    ''' Semantic pooling weights, softmax over valid positions of v . tanh(W_a^T H_i).

        H stacks B padded sequences of T rows; returns a B x T tensor with
        exact zeros on padding.
    '''
    if H.cols != p.W_a.rows:
        raise ShapeError('Rows of width {} against pooling width {}'.format(H.cols, p.W_a.rows))

    if mask is None:
        mask = numpy.ones((1, H.rows), dtype=bool)
    mask = numpy.asarray(mask, dtype=bool)
    if mask.ndim == 1:
        mask = mask.reshape(1, -1)
    if mask.size != H.rows:
        raise ShapeError('Mask of shape {} does not cover {} rows'.format(mask.shape, H.rows))

    scores = numcore.matmul(numcore.activation('tanh', numcore.matmul(H, p.W_a)), numcore.transpose(p.v))
    return numcore.softmax_rows(numcore.reshape(scores, mask.shape[0], mask.shape[1]), mask)

def pool(H, a):
    ''' Z_b = sum_i a_bi H_bi, one row per sequence.
    '''
    if a.rows * a.cols != H.rows:
        raise ShapeError('{} pooling weights for {} rows'.format(a.rows * a.cols, H.rows))
    if a.rows == 1:
        return numcore.matmul(a, H)

    length = a.cols
    return numcore.concat_rows(
        numcore.matmul(numcore.slice_rows(a, b, b + 1), numcore.slice_rows(H, b * length, (b + 1) * length))
        for b in range(a.rows))

def classify(Z, p):
    ''' Risk probabilities sigmoid(Z W_c^T + b_c), one row per sequence.
    '''
    if Z.cols != p.W_c.cols:
        raise ShapeError('Pooled width {} against classifier width {}'.format(Z.cols, p.W_c.cols))
    logits = numcore.add(numcore.matmul(Z, numcore.transpose(p.W_c)), p.b_c)
    return numcore.activation('sigmoid', logits)

def _check_labels(labels):
    labels = numpy.asarray(labels, dtype=numpy.float64).reshape(-1, 1)
    if not numpy.isin(labels, (0., 1.)).all():
        raise ValueError('Labels must be 0 or 1')
    return labels

def bce_loss(yhat, labels):
    ''' Mean binary cross-entropy with predictions clamped to [1e-7, 1 - 1e-7].
    '''
    labels = _check_labels(labels)
    if labels.shape[0] != yhat.rows * yhat.cols:
        raise ShapeError('{} predictions for {} labels'.format(yhat.rows * yhat.cols, labels.shape[0]))

    clamped = numcore.clip(numcore.reshape(yhat, labels.shape[0], 1), CLAMP, 1. - CLAMP)
    positive = numcore.multiply(numcore.log(clamped), Tensor2(labels))
    negative = numcore.multiply(numcore.log(numcore.shift(numcore.scale(clamped, -1.), 1.)), Tensor2(1. - labels))
    return numcore.scale(numcore.mean_all(numcore.add(positive, negative)), -1.)

def bce_values(probabilities, labels):
    ''' Same loss as bce_loss over plain arrays, for evaluation without a tape.
    '''
    labels = _check_labels(labels).ravel()
    clamped = numpy.clip(numpy.asarray(probabilities, dtype=numpy.float64).ravel(), CLAMP, 1. - CLAMP)
    return float(-numpy.mean(labels * numpy.log(clamped) + (1. - labels) * numpy.log(1. - clamped)))
