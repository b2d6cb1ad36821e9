from __future__ import absolute_import, division, print_function
import logging; _L = logging.getLogger('ehrisk.encoder')

import math
from collections import namedtuple

import numpy

from . import numcore
from .numcore import ShapeError

LN_EPS = 1e-5

class ConfigError(ValueError):
    pass

HeadProjection = namedtuple('HeadProjection', ('W_Q', 'W_K', 'W_V'))
FfnParams = namedtuple('FfnParams', ('W_1', 'b_1', 'W_2', 'b_2', 'ln_gamma', 'ln_beta'))
EncoderLayerParams = namedtuple('EncoderLayerParams', ('heads', 'W_O', 'ln_gamma', 'ln_beta', 'ffn'))

class EncoderConfig:
    ''' Width, head count and depth of the self-attention stack.
    '''
    def __init__(self, d_m=64, n_heads=4, n_layers=2, ffn_enabled=True, d_ff=None):
        self.d_m = d_m
        self.n_heads = n_heads
        self.n_layers = n_layers
        self.ffn_enabled = ffn_enabled
        self.d_ff = 4 * d_m if d_ff is None else d_ff

    @property
    def d_k(self):
        return self.d_m // self.n_heads

    def validate(self):
        if self.n_heads < 1:
            raise ConfigError('Need at least one attention head, got {}'.format(self.n_heads))
        if self.d_m < 1 or self.d_m % self.n_heads:
            raise ConfigError('{} heads do not divide model width {}'.format(self.n_heads, self.d_m))
        if self.n_layers < 0:
            raise ConfigError('Layer count must be >= 0, got {}'.format(self.n_layers))
        if self.ffn_enabled and self.d_ff < 1:
            raise ConfigError('Feed-forward width must be >= 1, got {}'.format(self.d_ff))
        return self

def _segments(rows, mask):
    ''' Return (sequence count, padded length, mask) for rows stacked sequence by sequence.
    '''
    if mask is None:
        return 1, rows, numpy.ones((1, rows), dtype=bool)

    mask = numpy.asarray(mask, dtype=bool)
    if mask.ndim == 1:
        mask = mask.reshape(1, -1)
    if mask.size != rows:
        raise ShapeError('Mask of shape {} does not cover {} rows'.format(mask.shape, rows))
    return mask.shape[0], mask.shape[1], mask

def attention_weights(Q, K, mask=None):
    ''' Softmax(Q K^T / sqrt(d_k)) with masked keys at exactly zero weight.

        mask is a length-T boolean vector over the keys.
    '''
    if Q.cols != K.cols:
        raise ShapeError('Queries of width {} against keys of width {}'.format(Q.cols, K.cols))

    logits = numcore.scale(numcore.matmul(Q, numcore.transpose(K)), 1. / math.sqrt(Q.cols))
    keys = None if mask is None else numpy.asarray(mask, dtype=bool).reshape(1, K.rows)
    return numcore.softmax_rows(logits, keys)

def attention(Q, K, V, mask=None):
    if K.rows != V.rows:
        raise ShapeError('{} keys but {} values'.format(K.rows, V.rows))
    return numcore.matmul(attention_weights(Q, K, mask), V)

def multi_head(H, p, mask=None):
    ''' Concat(head_1 .. head_n) W_O, with attention kept inside each sequence.
    '''
    count, length, mask = _segments(H.rows, mask)
    outputs = []

    for head in p.heads:
        Q, K, V = numcore.matmul(H, head.W_Q), numcore.matmul(H, head.W_K), numcore.matmul(H, head.W_V)

        if count == 1:
            outputs.append(attention(Q, K, V, mask[0]))
            continue

        pieces = []
        for b in range(count):
            start, stop = b * length, (b + 1) * length
            pieces.append(attention(numcore.slice_rows(Q, start, stop),
                                    numcore.slice_rows(K, start, stop),
                                    numcore.slice_rows(V, start, stop), mask[b]))
        outputs.append(numcore.concat_rows(pieces))

    joined = outputs[0] if len(outputs) == 1 else numcore.concat_cols(outputs)
    return numcore.matmul(joined, p.W_O)

def encoder_layer(H_prev, p, mask=None, eps=LN_EPS):
    ''' Post-norm block: LayerNorm(H + MultiHead(H)), then the optional feed-forward sublayer.
    '''
    A = numcore.layer_norm(numcore.add(H_prev, multi_head(H_prev, p, mask)), p.ln_gamma, p.ln_beta, eps)

    if p.ffn is None:
        return A

    f = p.ffn
    hidden = numcore.activation('relu', numcore.add(numcore.matmul(A, f.W_1), f.b_1))
    out = numcore.add(numcore.matmul(hidden, f.W_2), f.b_2)
    return numcore.layer_norm(numcore.add(A, out), f.ln_gamma, f.ln_beta, eps)

def encode(H, layers, mask=None, eps=LN_EPS):
    for p in layers:
        if p.W_O.cols != H.cols:
            raise ShapeError('Layer width {} does not match input width {}'.format(p.W_O.cols, H.cols))
        H = encoder_layer(H, p, mask, eps)
    return H
