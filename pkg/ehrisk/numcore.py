# coding=ascii

from __future__ import absolute_import, division, print_function
import logging; _L = logging.getLogger('ehrisk.numcore')

import enum
from collections import namedtuple

import numpy

class ShapeError(ValueError):
    pass

class NonFiniteError(ValueError):
    pass

class DegenerateRowError(ValueError):
    pass

class ContractError(ValueError):
    pass

class AuditInvalidError(RuntimeError):
    pass

@enum.unique
class Activation (enum.Enum):
    ''' Elementwise nonlinearities with exact derivatives at saved activations.
    '''
    relu = 'relu'
    sigmoid = 'sigmoid'
    tanh = 'tanh'

    @classmethod
    def from_kind_string(clz, kind_string):
        if isinstance(kind_string, Activation):
            return kind_string
        try:
            return clz(kind_string.lower())
        except ValueError:
            raise KeyError("I don't know the activation {}".format(kind_string))

class Tensor2:
    ''' Immutable dense 2-D block of 64-bit floats.

        A Tensor2 with a tape is a node on that tape; one without is a constant
        and operations on constants are evaluated without recording anything.
    '''
    __slots__ = ('data', 'tape', 'index')

    def __init__(self, data, tape=None, index=None):
        array = numpy.array(data, dtype=numpy.float64)

        if array.ndim == 0:
            array = array.reshape(1, 1)
        elif array.ndim == 1:
            array = array.reshape(1, -1)
        elif array.ndim != 2:
            raise ShapeError('Tensor2 needs at most two dimensions, got shape {}'.format(array.shape))

        _freeze(array, self)
        self.tape, self.index = tape, index

    @classmethod
    def _wrap(clz, array, tape=None, index=None):
        tensor = clz.__new__(clz)
        _freeze(array, tensor)
        tensor.tape, tensor.index = tape, index
        return tensor

    @property
    def rows(self):
        return self.data.shape[0]

    @property
    def cols(self):
        return self.data.shape[1]

    @property
    def shape(self):
        return self.data.shape

    def item(self):
        if self.data.shape != (1, 1):
            raise ShapeError('item() needs a 1x1 tensor, got {}'.format(self.data.shape))
        return float(self.data[0, 0])

    def tolist(self):
        return self.data.tolist()

    def __repr__(self):
        return 'Tensor2({}x{}{})'.format(self.rows, self.cols, '' if self.tape is None else ', taped')

def _freeze(array, tensor):
    if not numpy.isfinite(array).all():
        raise NonFiniteError('Tensor2 entries must be finite')
    array.flags.writeable = False
    tensor.data = array

_Record = namedtuple('_Record', ('kind', 'inputs', 'saved', 'shape'))

class Tape:
    ''' Ordered record of a forward computation.

        Inputs always precede their consumers, so walking the node list
        backwards visits every node after all of its consumers.
    '''
    def __init__(self):
        self.nodes = []
        self.params = dict()

    def param(self, name, value):
        ''' Register a named leaf and return it as a node on this tape.
        '''
        if name in self.params.values():
            raise ContractError('Parameter {} is already on this tape'.format(name))
        array = numpy.array(value.data if isinstance(value, Tensor2) else value, dtype=numpy.float64)
        if array.ndim < 2:
            array = array.reshape(1, -1)
        tensor = self._push('param', (), None, array)
        self.params[tensor.index] = name
        return tensor

    def _push(self, kind, inputs, saved, array):
        index = len(self.nodes)
        tensor = Tensor2._wrap(array, self, index)
        self.nodes.append(_Record(kind, inputs, saved, array.shape))
        return tensor

def _tape_of(*tensors):
    tape = None
    for tensor in tensors:
        if tensor.tape is None:
            continue
        if tape is not None and tensor.tape is not tape:
            raise ContractError('Cannot mix nodes from two different tapes')
        tape = tensor.tape
    return tape

def _emit(kind, inputs, saved, array):
    tape = _tape_of(*inputs)
    if tape is None:
        return Tensor2._wrap(array)
    return tape._push(kind, tuple(t.index for t in inputs), saved, array)

#
# Forward operations.
#

def matmul(a, b):
    if a.cols != b.rows:
        raise ShapeError('Cannot multiply {}x{} by {}x{}'.format(a.rows, a.cols, b.rows, b.cols))
    return _emit('matmul', (a, b), (a.data, b.data), a.data @ b.data)

def transpose(a):
    return _emit('transpose', (a, ), None, a.data.T.copy())

def add(a, b):
    ''' Elementwise sum; b may also be a single row broadcast over a's rows.
    '''
    broadcast = _check_broadcast('add', a, b)
    return _emit('add', (a, b), broadcast, a.data + b.data)

def multiply(a, b):
    broadcast = _check_broadcast('multiply', a, b)
    return _emit('multiply', (a, b), (a.data, b.data, broadcast), a.data * b.data)

def scale(a, factor):
    factor = float(factor)
    return _emit('scale', (a, ), factor, a.data * factor)

def shift(a, offset):
    return _emit('shift', (a, ), None, a.data + float(offset))

def sum_all(a):
    return _emit('sum_all', (a, ), a.shape, numpy.array([[a.data.sum()]]))

def mean_all(a):
    return scale(sum_all(a), 1. / (a.rows * a.cols))

def log(a):
    if (a.data <= 0).any():
        raise ContractError('log() needs strictly positive entries')
    return _emit('log', (a, ), a.data, numpy.log(a.data))

def clip(a, lower, upper):
    return _emit('clip', (a, ), (a.data, lower, upper), numpy.clip(a.data, lower, upper))

def reshape(a, rows, cols):
    if rows * cols != a.rows * a.cols:
        raise ShapeError('Cannot reshape {}x{} to {}x{}'.format(a.rows, a.cols, rows, cols))
    return _emit('reshape', (a, ), a.shape, a.data.reshape(rows, cols).copy())

def slice_rows(a, start, stop):
    if not 0 <= start < stop <= a.rows:
        raise ShapeError('Row slice {}:{} is outside {} rows'.format(start, stop, a.rows))
    return _emit('slice_rows', (a, ), (start, stop), a.data[start:stop].copy())

def concat_rows(tensors):
    tensors = list(tensors)
    if len({t.cols for t in tensors}) != 1:
        raise ShapeError('Cannot stack rows of widths {}'.format([t.cols for t in tensors]))
    sizes = [t.rows for t in tensors]
    return _emit('concat_rows', tensors, sizes, numpy.concatenate([t.data for t in tensors], axis=0))

def concat_cols(tensors):
    tensors = list(tensors)
    if len({t.rows for t in tensors}) != 1:
        raise ShapeError('Cannot join columns of heights {}'.format([t.rows for t in tensors]))
    sizes = [t.cols for t in tensors]
    return _emit('concat_cols', tensors, sizes, numpy.concatenate([t.data for t in tensors], axis=1))

def activation(kind, x):
    kind = Activation.from_kind_string(kind)

    if kind is Activation.relu:
        out = numpy.maximum(x.data, 0.)
    elif kind is Activation.sigmoid:
        out = _sigmoid(x.data)
    else:
        out = numpy.tanh(x.data)

    return _emit(kind.value, (x, ), out, out)

def softmax_array(logits):
    ''' Row softmax of a raw array; -inf entries are sentinels that get exactly zero weight.
    '''
    logits = numpy.asarray(logits, dtype=numpy.float64)
    if numpy.isnan(logits).any() or numpy.isposinf(logits).any():
        raise NonFiniteError('softmax needs finite or -inf logits')

    finite = numpy.isfinite(logits)
    if not finite.any(axis=1).all():
        row = int(numpy.argmin(finite.any(axis=1)))
        raise DegenerateRowError('Row {} of softmax input has no unmasked entries'.format(row))

    peak = numpy.where(finite, logits, -numpy.inf).max(axis=1, keepdims=True)
    weights = numpy.where(finite, numpy.exp(numpy.where(finite, logits - peak, 0.)), 0.)
    return weights / weights.sum(axis=1, keepdims=True)

def softmax_rows(m, mask=None):
    ''' Row softmax; mask is a boolean array, False marks entries set to -inf.
    '''
    logits = m.data
    if mask is not None:
        mask = numpy.broadcast_to(numpy.asarray(mask, dtype=bool), m.shape)
        logits = numpy.where(mask, logits, -numpy.inf)
    out = softmax_array(logits)
    return _emit('softmax_rows', (m, ), out, out)

def layer_norm(x, gamma, beta, eps=1e-5):
    ''' Normalize each row of x with population variance, then scale and shift.
    '''
    if eps <= 0:
        raise ContractError('layer_norm needs eps > 0, got {}'.format(eps))
    if gamma.shape != (1, x.cols) or beta.shape != (1, x.cols):
        raise ShapeError('layer_norm of width {} got gamma {} and beta {}'.format(x.cols, gamma.shape, beta.shape))

    mean = x.data.mean(axis=1, keepdims=True)
    centered = x.data - mean
    sigma = numpy.sqrt((centered * centered).mean(axis=1, keepdims=True) + eps)
    xhat = centered / sigma
    out = gamma.data * xhat + beta.data

    return _emit('layer_norm', (x, gamma, beta), (xhat, sigma, gamma.data), out)

def _sigmoid(values):
    out = numpy.empty_like(values)
    positive = values >= 0
    out[positive] = 1. / (1. + numpy.exp(-values[positive]))
    exp = numpy.exp(values[~positive])
    out[~positive] = exp / (1. + exp)
    return out

def _check_broadcast(name, a, b):
    if a.shape == b.shape:
        return False
    if b.rows == 1 and b.cols == a.cols:
        return True
    raise ShapeError('Cannot {} {}x{} and {}x{}'.format(name, a.rows, a.cols, b.rows, b.cols))

#
# Backward rules, looked up by name at backward() time.
#

def _backward_matmul(saved, grad):
    a, b = saved
    return grad @ b.T, a.T @ grad

def _backward_transpose(saved, grad):
    return grad.T,

def _backward_add(broadcast, grad):
    return grad, (grad.sum(axis=0, keepdims=True) if broadcast else grad)

def _backward_multiply(saved, grad):
    a, b, broadcast = saved
    db = grad * a
    return grad * b, (db.sum(axis=0, keepdims=True) if broadcast else db)

def _backward_scale(factor, grad):
    return grad * factor,

def _backward_shift(saved, grad):
    return grad,

def _backward_sum_all(shape, grad):
    return numpy.full(shape, grad[0, 0]),

def _backward_log(x, grad):
    return grad / x,

def _backward_clip(saved, grad):
    x, lower, upper = saved
    return grad * ((x >= lower) & (x <= upper)),

def _backward_reshape(shape, grad):
    return grad.reshape(shape),

def _backward_slice_rows(saved, grad):
    start, stop = saved
    return _RowPatch(start, stop, grad),

def _backward_concat_rows(sizes, grad):
    edges = numpy.cumsum(sizes)[:-1]
    return tuple(numpy.split(grad, edges, axis=0))

def _backward_concat_cols(sizes, grad):
    edges = numpy.cumsum(sizes)[:-1]
    return tuple(numpy.split(grad, edges, axis=1))

def _backward_relu(out, grad):
    # relu'(0) is 0
    return grad * (out > 0),

def _backward_sigmoid(out, grad):
    return grad * out * (1. - out),

def _backward_tanh(out, grad):
    return grad * (1. - out * out),

def _backward_softmax_rows(out, grad):
    return out * (grad - (grad * out).sum(axis=1, keepdims=True)),

def _backward_layer_norm(saved, grad):
    xhat, sigma, gamma = saved
    width = xhat.shape[1]

    dgamma = (grad * xhat).sum(axis=0, keepdims=True)
    dbeta = grad.sum(axis=0, keepdims=True)

    dxhat = grad * gamma
    mean_term = dxhat.sum(axis=1, keepdims=True)
    var_term = (dxhat * xhat).sum(axis=1, keepdims=True) * xhat
    dx = (width * dxhat - mean_term - var_term) / (width * sigma)

    return dx, dgamma, dbeta

class _RowPatch:
    ''' Gradient confined to a row range of its input.
    '''
    __slots__ = ('start', 'stop', 'grad')

    def __init__(self, start, stop, grad):
        self.start, self.stop, self.grad = start, stop, grad

def backward(tape, loss):
    ''' Return a dict of parameter name to gradient array for a scalar loss node.

        Gradients sum over every use of a node; parameters that do not reach
        the loss get zeros.
    '''
    if loss.tape is not tape:
        raise ContractError('Loss is not a node on this tape')
    if loss.shape != (1, 1):
        raise ContractError('Loss must be scalar, got shape {}'.format(loss.shape))

    backwards = globals()
    grads = [None] * (loss.index + 1)
    grads[loss.index] = numpy.ones((1, 1))

    for index in range(loss.index, -1, -1):
        grad, record = grads[index], tape.nodes[index]
        if grad is None or record.kind == 'param':
            continue

        input_grads = backwards['_backward_' + record.kind](record.saved, grad)

        for (input_index, contribution) in zip(record.inputs, input_grads):
            if input_index is None:
                continue
            _accumulate(grads, input_index, tape.nodes[input_index].shape, contribution)

        if index != loss.index:
            # consumed; keeps peak memory near one layer's worth of gradients
            grads[index] = None

    result = dict()
    for (index, name) in tape.params.items():
        grad = grads[index] if index < len(grads) else None
        result[name] = numpy.zeros(tape.nodes[index].shape) if grad is None else grad

    return result

def _accumulate(grads, index, shape, contribution):
    # grads[index] is owned by the accumulator once written, so in-place adds are safe
    if isinstance(contribution, _RowPatch):
        if grads[index] is None:
            grads[index] = numpy.zeros(shape)
        grads[index][contribution.start:contribution.stop] += contribution.grad
    elif grads[index] is None:
        grads[index] = numpy.array(contribution, dtype=numpy.float64)
    else:
        grads[index] += contribution

#
# Finite-difference auditing.
#

class BlockAudit:
    name = None
    max_error = None
    argmax = None

    def __init__(self, name, max_error, argmax):
        self.name = name
        self.max_error = max_error
        self.argmax = argmax

    def todict(self):
        return dict(name=self.name, max_error=self.max_error, argmax=self.argmax)

class GradAuditReport:
    blocks = None
    passed = None
    h = None
    tol = None

    def __init__(self, blocks, h, tol):
        self.blocks = list(blocks)
        self.h = h
        self.tol = tol
        self.passed = all(block.max_error < tol for block in self.blocks)

    def failing(self):
        return [block.name for block in self.blocks if not block.max_error < self.tol]

    def todict(self):
        return dict(passed=self.passed, h=self.h, tol=self.tol,
                    blocks=[block.todict() for block in self.blocks])

def relative_error(analytic, numeric, floor=1e-12):
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)

def grad_check(f, params, h=1e-5, tol=1e-4, floor=1e-12):
    ''' Compare tape gradients of scalar f(params) against central differences.

        f takes a dict of name to Tensor2 and returns a 1x1 Tensor2. params is
        a dict of name to array. Each entry is perturbed by h * max(1, |theta|).
    '''
    if h <= 0:
        raise ContractError('grad_check needs h > 0, got {}'.format(h))

    arrays = {name: numpy.array(value.data if isinstance(value, Tensor2) else value,
                                dtype=numpy.float64, ndmin=2)
              for (name, value) in params.items()}

    def evaluate(values):
        return f({name: Tensor2._wrap(array.copy()) for (name, array) in values.items()}).item()

    baseline1, baseline2 = evaluate(arrays), evaluate(arrays)
    if baseline1 != baseline2:
        raise AuditInvalidError('Audited function is not deterministic: {!r} != {!r}'.format(baseline1, baseline2))

    tape = Tape()
    loss = f({name: tape.param(name, array) for (name, array) in arrays.items()})

    if loss.tape is None:
        # f never touched its parameters
        analytic = {name: numpy.zeros_like(array) for (name, array) in arrays.items()}
    else:
        analytic = backward(tape, loss)

    blocks = []

    for (name, array) in arrays.items():
        worst, worst_index = 0., None

        for flat_index in range(array.size):
            position = numpy.unravel_index(flat_index, array.shape)
            theta = array[position]
            step = h * max(1., abs(theta))

            array[position] = theta + step
            upper = evaluate(arrays)
            array[position] = theta - step
            lower = evaluate(arrays)
            array[position] = theta

            numeric = (upper - lower) / (2 * step)
            error = relative_error(float(analytic[name][position]), numeric, floor)

            if worst_index is None or error > worst:
                worst, worst_index = error, flat_index

        blocks.append(BlockAudit(name, worst, worst_index))
        _L.debug('Audited %s: max relative error %.3g at %s', name, worst, worst_index)

    return GradAuditReport(blocks, h, tol)
