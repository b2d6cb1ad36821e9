# coding=ascii

from __future__ import absolute_import, division, print_function
import logging; _L = logging.getLogger('ehrisk.trainer')

import json
import math
from collections import namedtuple, OrderedDict
from hashlib import sha1

import numpy

from . import numcore, embedder, encoder, head, metrics, jsonstream
from .numcore import Tensor2, ShapeError, NonFiniteError
from .ingest import fit_feature_space, vectorize, batch_pad, FeatureSpace
from .embedder import EmbedParams
from .encoder import EncoderConfig, EncoderLayerParams, HeadProjection, FfnParams, ConfigError
from .head import PoolParams, HeadParams
from .util import substream, STREAM_SPLIT, STREAM_INIT, STREAM_EPOCH

FORMAT_VERSION = 1

# Keeps the temporal encoding of a zero gap off the ReLU kink at initialization.
TEMPORAL_BIAS_INIT = 0.1

class DivergenceError(RuntimeError):
    pass

class CheckpointVersionError(ValueError):
    pass

class CheckpointIntegrityError(ValueError):
    pass

ParamSpec = namedtuple('ParamSpec', ('name', 'rows', 'cols', 'kind', 'fan_in', 'fan_out'))

class ModelConfig:
    ''' Architecture name and sizes; d_in is filled in from the fitted feature space.
    '''
    fields = ('architecture', 'd_in', 'd_m', 'n_heads', 'n_layers', 'ffn_enabled', 'd_ff',
              'd_a', 'dt_log1p', 'hidden_sizes')

    def __init__(self, architecture='transformer', d_in=None, d_m=64, n_heads=4, n_layers=2,
                 ffn_enabled=True, d_ff=None, d_a=None, dt_log1p=False, hidden_sizes=(64, 32)):
        self.architecture = architecture
        self.d_in = d_in
        self.d_m = d_m
        self.n_heads = n_heads
        self.n_layers = n_layers
        self.ffn_enabled = ffn_enabled
        self.ffn_width = d_ff
        self.pool_width = d_a
        self.dt_log1p = dt_log1p
        self.hidden_sizes = tuple(hidden_sizes)

    @property
    def d_ff(self):
        return 4 * self.d_m if self.ffn_width is None else self.ffn_width

    @property
    def d_a(self):
        return self.d_m if self.pool_width is None else self.pool_width

    def encoder_config(self):
        return EncoderConfig(self.d_m, self.n_heads, self.n_layers, self.ffn_enabled, self.d_ff)

    def validate(self, need_d_in=True):
        Architecture.from_name_string(self.architecture).validate(self)
        if need_d_in and (self.d_in is None or self.d_in < 1):
            raise ConfigError('Input width d_in must be set, got {}'.format(self.d_in))
        return self

    def replace(self, **changes):
        values = self.todict()
        values.update(changes)
        return ModelConfig.fromdict(values)

    def todict(self):
        values = {name: getattr(self, name) for name in self.fields}
        values.update(d_ff=self.ffn_width, d_a=self.pool_width, hidden_sizes=list(self.hidden_sizes))
        return values

    @staticmethod
    def fromdict(data):
        unknown = set(data) - set(ModelConfig.fields)
        if unknown:
            raise ValueError('Unknown model settings {}'.format(sorted(unknown)))
        return ModelConfig(**data)

class TrainConfig:
    fields = ('lr', 'beta1', 'beta2', 'eps', 'batch_size', 'max_epochs', 'patience',
              'val_fraction', 'seed', 'threshold')

    def __init__(self, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8, batch_size=32, max_epochs=50,
                 patience=5, val_fraction=0.2, seed=0, threshold=0.5):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.batch_size = batch_size
        self.max_epochs = max_epochs
        self.patience = patience
        self.val_fraction = val_fraction
        self.seed = seed
        self.threshold = threshold

    def validate(self):
        if not self.lr > 0:
            raise ValueError('Learning rate must be > 0, got {}'.format(self.lr))
        if not 0 < self.val_fraction < 1:
            raise ValueError('val_fraction must be in (0, 1), got {}'.format(self.val_fraction))
        if self.batch_size < 1 or self.max_epochs < 1 or self.patience < 1:
            raise ValueError('batch_size, max_epochs and patience must be >= 1')
        return self

    def replace(self, **changes):
        values = self.todict()
        values.update(changes)
        return TrainConfig.fromdict(values)

    def todict(self):
        return {name: getattr(self, name) for name in self.fields}

    @staticmethod
    def fromdict(data):
        unknown = set(data) - set(TrainConfig.fields)
        if unknown:
            raise ValueError('Unknown training settings {}'.format(sorted(unknown)))
        return TrainConfig(**data)

class Architecture(object):
    ''' A named model family: its parameter layout and its forward pass.
    '''
    name = None

    @classmethod
    def from_name_string(clz, name_string):
        if name_string is None:
            raise KeyError('No architecture named')
        elif name_string.lower() == 'transformer':
            return TransformerArchitecture()
        elif name_string.lower() == 'mlp':
            from .baseline import MeanPoolMlpArchitecture
            return MeanPoolMlpArchitecture()
        else:
            raise KeyError("I don't know the architecture {}".format(name_string))

    def validate(self, config):
        pass

    def param_specs(self, config):
        raise NotImplementedError()

    def forward(self, config, tensors, batch):
        raise NotImplementedError()

class TransformerArchitecture(Architecture):
    ''' Embedding, temporal encoding, self-attention stack, semantic pooling, sigmoid head.
    '''
    name = 'transformer'

    def validate(self, config):
        config.encoder_config().validate()
        if config.d_a < 1:
            raise ConfigError('Pooling width d_a must be >= 1, got {}'.format(config.d_a))

    def param_specs(self, config):
        d_in, d_m, d_a = config.d_in, config.d_m, config.d_a
        d_k, d_ff = config.encoder_config().d_k, config.d_ff

        specs = [
            ParamSpec('embed.W_e', d_in, d_m, 'weight', d_in, d_m),
            ParamSpec('embed.b_e', 1, d_m, 'bias', None, None),
            ParamSpec('embed.W_t', 1, d_m, 'weight', 1, d_m),
            ParamSpec('embed.b_t', 1, d_m, 'temporal_bias', None, None),
            ]

        for l in range(config.n_layers):
            for h in range(config.n_heads):
                for role in ('W_Q', 'W_K', 'W_V'):
                    specs.append(ParamSpec('layer{}.head{}.{}'.format(l, h, role), d_m, d_k, 'weight', d_m, d_k))
            specs += [
                ParamSpec('layer{}.W_O'.format(l), d_m, d_m, 'weight', d_m, d_m),
                ParamSpec('layer{}.ln.gamma'.format(l), 1, d_m, 'gamma', None, None),
                ParamSpec('layer{}.ln.beta'.format(l), 1, d_m, 'beta', None, None),
                ]
            if config.ffn_enabled:
                specs += [
                    ParamSpec('layer{}.ffn.W_1'.format(l), d_m, d_ff, 'weight', d_m, d_ff),
                    ParamSpec('layer{}.ffn.b_1'.format(l), 1, d_ff, 'bias', None, None),
                    ParamSpec('layer{}.ffn.W_2'.format(l), d_ff, d_m, 'weight', d_ff, d_m),
                    ParamSpec('layer{}.ffn.b_2'.format(l), 1, d_m, 'bias', None, None),
                    ParamSpec('layer{}.ffn.ln.gamma'.format(l), 1, d_m, 'gamma', None, None),
                    ParamSpec('layer{}.ffn.ln.beta'.format(l), 1, d_m, 'beta', None, None),
                    ]

        specs += [
            ParamSpec('pool.W_a', d_m, d_a, 'weight', d_m, d_a),
            ParamSpec('pool.v', 1, d_a, 'weight', d_a, 1),
            ParamSpec('head.W_c', 1, d_m, 'weight', d_m, 1),
            ParamSpec('head.b_c', 1, 1, 'bias', None, None),
            ]

        return specs

    def unpack(self, config, tensors):
        t = tensors
        embed = EmbedParams(t['embed.W_e'], t['embed.b_e'], t['embed.W_t'], t['embed.b_t'])
        layers = []

        for l in range(config.n_layers):
            prefix = 'layer{}.'.format(l)
            heads = tuple(HeadProjection(*(t['{}head{}.{}'.format(prefix, h, role)] for role in ('W_Q', 'W_K', 'W_V')))
                          for h in range(config.n_heads))
            ffn = None
            if config.ffn_enabled:
                ffn = FfnParams(*(t[prefix + 'ffn.' + name] for name in ('W_1', 'b_1', 'W_2', 'b_2', 'ln.gamma', 'ln.beta')))
            layers.append(EncoderLayerParams(heads, t[prefix + 'W_O'], t[prefix + 'ln.gamma'], t[prefix + 'ln.beta'], ffn))

        return embed, layers, PoolParams(t['pool.W_a'], t['pool.v']), HeadParams(t['head.W_c'], t['head.b_c'])

    def attend(self, config, tensors, batch):
        ''' Return (risk probabilities B x 1, pooling weights B x T).
        '''
        embed, layers, pool_params, head_params = self.unpack(config, tensors)

        X = numcore.concat_rows(batch.X)
        H = embedder.embed(X, batch.dt.reshape(-1), embed, config.dt_log1p)
        H = encoder.encode(H, layers, batch.mask)
        a = head.pooling_weights(H, pool_params, batch.mask)

        return head.classify(head.pool(H, a), head_params), a

    def forward(self, config, tensors, batch):
        return self.attend(config, tensors, batch)[0]

class ModelParams:
    ''' Every learnable array of one model, in layout order, plus its config echo.
    '''
    def __init__(self, config, arrays, feature_space=None):
        self.config = config
        self.arrays = OrderedDict(arrays)
        self.feature_space = feature_space

    @property
    def architecture(self):
        return Architecture.from_name_string(self.config.architecture)

    @property
    def count(self):
        return sum(array.size for array in self.arrays.values())

    def tensors(self):
        return {name: Tensor2(array) for (name, array) in self.arrays.items()}

    def copy(self):
        return ModelParams(self.config, [(name, array.copy()) for (name, array) in self.arrays.items()], self.feature_space)

    def fingerprint(self):
        digest = sha1()
        for (name, array) in self.arrays.items():
            digest.update(name.encode('utf8'))
            digest.update(numpy.ascontiguousarray(array, dtype='<f8').tobytes())
        return digest.hexdigest()

def init_params(config, seed, feature_space=None):
    ''' Glorot-uniform weights, zero biases, unit gammas, drawn in layout order from seed.

        The temporal-encoding bias starts at TEMPORAL_BIAS_INIT instead of zero.
    '''
    config.validate()
    rng = substream(seed, STREAM_INIT)
    arrays = []

    for spec in Architecture.from_name_string(config.architecture).param_specs(config):
        if spec.rows < 1 or spec.cols < 1:
            raise ConfigError('Parameter {} would have shape {}x{}'.format(spec.name, spec.rows, spec.cols))

        if spec.kind == 'weight':
            bound = math.sqrt(6. / (spec.fan_in + spec.fan_out))
            array = rng.uniform(-bound, bound, size=(spec.rows, spec.cols))
        elif spec.kind == 'gamma':
            array = numpy.ones((spec.rows, spec.cols))
        elif spec.kind == 'temporal_bias':
            array = numpy.full((spec.rows, spec.cols), TEMPORAL_BIAS_INIT)
        else:
            array = numpy.zeros((spec.rows, spec.cols))

        arrays.append((spec.name, array))

    model = ModelParams(config, arrays, feature_space)
    _L.debug('Initialized %s model with %d parameters from seed %d', config.architecture, model.count, seed)
    return model

class OptimState:
    ''' Adam moment accumulators, one pair per parameter array.
    '''
    def __init__(self, m, v, t):
        self.m = m
        self.v = v
        self.t = t

    @staticmethod
    def empty(params):
        return OptimState({name: numpy.zeros_like(array) for (name, array) in params.items()},
                          {name: numpy.zeros_like(array) for (name, array) in params.items()}, 0)

def adam_step(params, grads, state, cfg):
    ''' One bias-corrected Adam update; returns new (params, state) and leaves inputs untouched.
    '''
    for (name, array) in params.items():
        if name not in grads or numpy.shape(grads[name]) != array.shape:
            raise ShapeError('Gradient for {} has shape {}, parameter has {}'.format(
                name, numpy.shape(grads.get(name)), array.shape))

    t = state.t + 1
    correction1 = 1. - cfg.beta1 ** t
    correction2 = 1. - cfg.beta2 ** t

    new_params, new_m, new_v = OrderedDict(), dict(), dict()

    for (name, array) in params.items():
        g = grads[name]
        m = cfg.beta1 * state.m[name] + (1. - cfg.beta1) * g
        v = cfg.beta2 * state.v[name] + (1. - cfg.beta2) * (g * g)
        new_params[name] = array - cfg.lr * (m / correction1) / (numpy.sqrt(v / correction2) + cfg.eps)
        new_m[name], new_v[name] = m, v

    return new_params, OptimState(new_m, new_v, t)

class TrainHistory:
    ''' Per-epoch losses and validation metrics of one training run.
    '''
    def __init__(self, initial_train_loss=None):
        self.initial_train_loss = initial_train_loss
        self.epochs = []
        self.stopped_epoch = 0
        self.best_epoch = 0

    def add(self, epoch, train_loss, val_loss, val_metrics):
        self.epochs.append(dict(epoch=epoch, train_loss=train_loss, val_loss=val_loss,
                                val_metrics=val_metrics.todict()))
        self.stopped_epoch = epoch

    @property
    def best(self):
        for row in self.epochs:
            if row['epoch'] == self.best_epoch:
                return row
        return None

    def todict(self):
        return dict(initial_train_loss=self.initial_train_loss, epochs=list(self.epochs),
                    stopped_epoch=self.stopped_epoch, best_epoch=self.best_epoch)

def split_indices(count, val_fraction, seed):
    ''' Deterministic (train, val) index arrays; both sides get at least one patient.
    '''
    order = substream(seed, STREAM_SPLIT).permutation(count)
    n_val = min(max(1, int(math.floor(val_fraction * count + .5))), count - 1)
    return numpy.sort(order[n_val:]), numpy.sort(order[:n_val])

def _vectorize_all(sequences, feature_space):
    return [vectorize(seq, feature_space) for seq in sequences]

def _batches(count, batch_size, order=None):
    order = numpy.arange(count) if order is None else order
    for start in range(0, count, batch_size):
        yield order[start:start + batch_size]

def predict_vectorized(model, vseqs, batch_size=64):
    arch = model.architecture
    tensors = model.tensors()
    outputs = [arch.forward(model.config, tensors, batch_pad(vseqs, order)).data.ravel()
               for order in _batches(len(vseqs), batch_size)]
    return numpy.concatenate(outputs) if outputs else numpy.zeros(0)

def predict(model, cohort, batch_size=64):
    ''' Risk probabilities for a list of PatientSequence, in cohort order.
    '''
    return predict_vectorized(model, _vectorize_all(cohort, model.feature_space), batch_size)

def evaluate(model, cohort, threshold=0.5, batch_size=64):
    labels = numpy.array([seq.label for seq in cohort])
    return metrics.evaluate_predictions(predict(model, cohort, batch_size), labels, threshold)

def explain(model, cohort, batch_size=64):
    ''' Per-patient semantic pooling weights over that patient's events.
    '''
    arch = model.architecture
    if not hasattr(arch, 'attend'):
        raise ValueError('The {} architecture has no pooling weights to explain'.format(arch.name))

    tensors = model.tensors()
    vseqs = _vectorize_all(cohort, model.feature_space)
    rows = []

    for order in _batches(len(vseqs), batch_size):
        batch = batch_pad(vseqs, order)
        yhat, a = arch.attend(model.config, tensors, batch)
        for (b, index) in enumerate(order):
            seq, length = cohort[index], vseqs[index].length
            rows.append(dict(patient_id=seq.patient_id, label=seq.label, probability=float(yhat.data[b, 0]),
                             t=[event.t for event in seq.events], code=[event.code for event in seq.events],
                             weights=a.data[b, :length].tolist()))

    return rows

def batch_loss(model, batch, tensors=None):
    tensors = model.tensors() if tensors is None else tensors
    return head.bce_loss(model.architecture.forward(model.config, tensors, batch), batch.labels)

def _mean_loss(model, vseqs, batch_size):
    probabilities = predict_vectorized(model, vseqs, batch_size)
    return head.bce_values(probabilities, [vseq.label for vseq in vseqs]), probabilities

def train(cohort, model_config, train_config, vocab_size=None, feature_space=None):
    ''' Fit a model with Adam and early stopping on a seeded validation split.

        Return (ModelParams from the best validation-loss epoch, TrainHistory).
    '''
    train_config.validate()
    model_config.validate(need_d_in=False)

    if len(cohort) < train_config.batch_size:
        raise ValueError('Cohort of {} patients is smaller than one batch of {}'.format(len(cohort), train_config.batch_size))

    seed = train_config.seed
    train_index, val_index = split_indices(len(cohort), train_config.val_fraction, seed)
    train_seqs = [cohort[i] for i in train_index]
    val_seqs = [cohort[i] for i in val_index]

    if feature_space is None:
        if vocab_size is None:
            vocab_size = 1 + max(event.code for seq in cohort for event in seq.events)
        feature_space = fit_feature_space(train_seqs, vocab_size)

    model_config = model_config.replace(d_in=feature_space.d_in)
    train_vseqs = _vectorize_all(train_seqs, feature_space)
    val_vseqs = _vectorize_all(val_seqs, feature_space)

    model = init_params(model_config, seed, feature_space)
    state = OptimState.empty(model.arrays)

    history = TrainHistory(_mean_loss(model, train_vseqs, train_config.batch_size)[0])
    best_model, best_loss, waited = model.copy(), math.inf, 0

    _L.info('Training %s model (%d parameters) on %d patients, validating on %d',
            model_config.architecture, model.count, len(train_seqs), len(val_seqs))

    for epoch in range(1, train_config.max_epochs + 1):
        order = substream(seed, STREAM_EPOCH, epoch).permutation(len(train_vseqs))
        losses, sizes = [], []

        try:
            for indices in _batches(len(train_vseqs), train_config.batch_size, order):
                batch = batch_pad(train_vseqs, indices)
                tape = numcore.Tape()
                tensors = {name: tape.param(name, array) for (name, array) in model.arrays.items()}
                loss = batch_loss(model, batch, tensors)
                grads = numcore.backward(tape, loss)

                arrays, state = adam_step(model.arrays, grads, state, train_config)
                if not all(numpy.isfinite(array).all() for array in arrays.values()):
                    raise NonFiniteError('Parameters became non-finite')

                model = ModelParams(model_config, arrays, feature_space)
                losses.append(loss.item())
                sizes.append(batch.size)

            val_loss, val_probabilities = _mean_loss(model, val_vseqs, train_config.batch_size)
        except NonFiniteError as e:
            _L.error('Training diverged in epoch %d: %s', epoch, e)
            raise DivergenceError('Loss became non-finite in epoch {}: {}'.format(epoch, e))

        train_loss = float(numpy.dot(losses, sizes) / sum(sizes))
        val_metrics = metrics.evaluate_predictions(val_probabilities, [v.label for v in val_vseqs], train_config.threshold)
        history.add(epoch, train_loss, val_loss, val_metrics)

        _L.info('Epoch %d: train loss %.5f, val loss %.5f, val acc %.4f',
                epoch, train_loss, val_loss, val_metrics.acc)

        if val_loss < best_loss:
            best_model, best_loss, waited = model.copy(), val_loss, 0
            history.best_epoch = epoch
        else:
            waited += 1
            if waited >= train_config.patience:
                _L.info('Stopping early after epoch %d; best was epoch %d', epoch, history.best_epoch)
                break

    return best_model, history

def gradient_audit(model, batch, h=1e-5, tol=1e-4, floor=1e-12):
    ''' Finite-difference audit of the full loss over every parameter block.
    '''
    f = lambda tensors: batch_loss(model, batch, tensors)
    report = numcore.grad_check(f, model.arrays, h, tol, floor)

    if report.passed:
        _L.info('Gradient audit passed over %d blocks', len(report.blocks))
    else:
        _L.warning('Gradient audit failed for %s', ', '.join(report.failing()))

    return report

def save_checkpoint(model, path, train_config=None, history=None, seed=None):
    best = history.best if history is not None else None
    document = OrderedDict([
        ('format_version', FORMAT_VERSION),
        ('model_config', model.config.todict()),
        ('train_config', None if train_config is None else train_config.todict()),
        ('seed', seed if seed is not None or train_config is None else train_config.seed),
        ('metrics_at_best', None if best is None else best['val_metrics']),
        ('feature_space', None if model.feature_space is None else model.feature_space.todict()),
        ('fingerprint', model.fingerprint()),
        ('params', OrderedDict((name, array.tolist()) for (name, array) in model.arrays.items())),
        ])

    with open(path, 'w', encoding='utf8') as file:
        file.write(json.dumps(document, separators=(',', ':'), allow_nan=False))
        file.write('\n')

    _L.info(u'Wrote checkpoint {}'.format(path))
    return path

def load_checkpoint(path):
    ''' Read a checkpoint written by save_checkpoint, verifying version, shapes and fingerprint.
    '''
    try:
        with open(path, 'rb') as file:
            document = jsonstream.stream_document(file)
    except (jsonstream.JSONError, ValueError, UnicodeDecodeError) as e:
        raise CheckpointIntegrityError('Checkpoint {} is truncated or corrupt: {}'.format(path, e))

    version = document.get('format_version')
    if version != FORMAT_VERSION:
        raise CheckpointVersionError('Checkpoint {} has format version {}, this build reads version {}'.format(
            path, version, FORMAT_VERSION))

    try:
        config = ModelConfig.fromdict(document['model_config']).validate()
        fs_data = document['feature_space']
        feature_space = None if fs_data is None else FeatureSpace.fromdict(fs_data)
        params = document['params']
        arrays = []

        for spec in config_specs(config):
            array = numpy.array(params[spec.name], dtype=numpy.float64)
            if array.shape != (spec.rows, spec.cols):
                raise CheckpointIntegrityError('Parameter {} has shape {}, expected {}'.format(
                    spec.name, array.shape, (spec.rows, spec.cols)))
            arrays.append((spec.name, array))

        if set(params) != {name for (name, _) in arrays}:
            raise CheckpointIntegrityError('Checkpoint {} has unexpected parameters'.format(path))
    except (KeyError, TypeError, ValueError) as e:
        if isinstance(e, CheckpointIntegrityError):
            raise
        raise CheckpointIntegrityError('Checkpoint {} is incomplete: {!r}'.format(path, e))

    model = ModelParams(config, arrays, feature_space)

    if model.fingerprint() != document.get('fingerprint'):
        raise CheckpointIntegrityError('Checkpoint {} parameters do not match their fingerprint'.format(path))

    _L.debug('Loaded %s model with %d parameters from %s', config.architecture, model.count, path)
    return model

def config_specs(config):
    return Architecture.from_name_string(config.architecture).param_specs(config)
