# coding=ascii

from __future__ import absolute_import, division, print_function
import logging; _L = logging.getLogger('ehrisk.ingest')

import json
import math
from collections import namedtuple

import numpy

from .numcore import Tensor2

STD_FLOOR = 1e-6

class IngestError(ValueError):
    ''' Problem with one cohort record; line_number is 1-based or None.
    '''
    def __init__(self, message, line_number=None):
        if line_number is not None:
            message = 'Line {}: {}'.format(line_number, message)
        ValueError.__init__(self, message)
        self.line_number = line_number

class ParseError(IngestError):
    pass

class OrderError(IngestError):
    pass

class SchemaError(IngestError):
    pass

Event = namedtuple('Event', ('t', 'code', 'values'))

class PatientSequence:
    ''' One patient's time-ordered events and binary label.
    '''
    def __init__(self, patient_id, label, events, static=None):
        self.patient_id = patient_id
        self.label = label
        self.events = [Event(float(e.t), int(e.code), tuple(float(v) for v in e.values)) for e in events]
        self.static = None if static is None else tuple(float(v) for v in static)

    @property
    def cont_dim(self):
        return len(self.events[0].values)

    def validate(self, line_number=None):
        if not isinstance(self.patient_id, str):
            raise SchemaError('patient_id must be a string', line_number)
        if self.label not in (0, 1) or isinstance(self.label, bool):
            raise SchemaError('label must be 0 or 1, got {!r}'.format(self.label), line_number)
        if not self.events:
            raise SchemaError('Patient {} has no events'.format(self.patient_id), line_number)

        widths = {len(event.values) for event in self.events}
        if len(widths) != 1:
            raise SchemaError('Patient {} has events with values lengths {}'.format(self.patient_id, sorted(widths)), line_number)

        for event in self.events:
            if event.code < 0:
                raise SchemaError('Negative code {}'.format(event.code), line_number)
            if not all(math.isfinite(v) for v in event.values) or not math.isfinite(event.t):
                raise SchemaError('Patient {} has non-finite numbers'.format(self.patient_id), line_number)

        if self.static is not None and not all(math.isfinite(v) for v in self.static):
            raise SchemaError('Patient {} has non-finite static values'.format(self.patient_id), line_number)

        for (before, after) in zip(self.events[:-1], self.events[1:]):
            if not after.t > before.t:
                raise OrderError('Patient {} timestamps {} then {} are not strictly increasing'.format(
                    self.patient_id, before.t, after.t), line_number)

        return self

    def todict(self):
        record = dict(patient_id=self.patient_id, label=self.label)
        if self.static is not None:
            record['static'] = list(self.static)
        record['events'] = [dict(t=e.t, code=e.code, values=list(e.values)) for e in self.events]
        return record

    def __eq__(self, other):
        return isinstance(other, PatientSequence) and self.todict() == other.todict()

    def __repr__(self):
        return 'PatientSequence({!r}, label={}, {} events)'.format(self.patient_id, self.label, len(self.events))

def serialize(seq):
    ''' Return the one-line wire form of a patient sequence, without newline.
    '''
    return json.dumps(seq.todict(), separators=(',', ':'), allow_nan=False)

def write_stream(cohort, file):
    for seq in cohort:
        file.write(serialize(seq))
        file.write('\n')

def _number(value, what, line_number):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ParseError('{} must be a number, got {!r}'.format(what, value), line_number)
    return value

def parse_record(line, line_number=None):
    ''' Parse and validate one wire-format line into a PatientSequence.
    '''
    try:
        record = json.loads(line)
    except ValueError as e:
        raise ParseError('Malformed record: {}'.format(e), line_number)

    if not isinstance(record, dict):
        raise ParseError('Record must be an object', line_number)

    for key in ('patient_id', 'label', 'events'):
        if key not in record:
            raise ParseError('Record is missing "{}"'.format(key), line_number)

    extra = set(record) - {'patient_id', 'label', 'static', 'events'}
    if extra:
        raise ParseError('Record has unknown fields {}'.format(sorted(extra)), line_number)

    if not isinstance(record['events'], list):
        raise ParseError('"events" must be an array', line_number)

    events = []
    for item in record['events']:
        if not isinstance(item, dict) or set(item) != {'t', 'code', 'values'}:
            raise ParseError('Each event needs exactly t, code, values', line_number)
        code = item['code']
        if isinstance(code, bool) or not isinstance(code, int):
            raise ParseError('Event code must be an integer, got {!r}'.format(code), line_number)
        if not isinstance(item['values'], list):
            raise ParseError('Event values must be an array', line_number)
        values = [_number(v, 'Event value', line_number) for v in item['values']]
        events.append(Event(_number(item['t'], 'Event t', line_number), code, values))

    static = record.get('static')
    if static is not None:
        if not isinstance(static, list):
            raise ParseError('"static" must be an array', line_number)
        static = [_number(v, 'Static value', line_number) for v in static]

    label = record['label']
    if isinstance(label, bool) or not isinstance(label, int):
        raise ParseError('label must be an integer, got {!r}'.format(label), line_number)

    return PatientSequence(record['patient_id'], label, events, static).validate(line_number)

def parse_stream(lines):
    ''' Parse an iterable of wire-format lines.

        Return (sequences, errors). A bad record is logged and collected in
        errors; the lines after it are still processed. Blank lines are skipped.
    '''
    sequences, errors = [], []

    for (line_number, line) in enumerate(lines, 1):
        if not line.strip():
            continue
        try:
            sequences.append(parse_record(line, line_number))
        except IngestError as e:
            _L.error('Error in row {}: {}'.format(line_number, e))
            errors.append(e)

    _L.debug('Parsed %d sequences with %d errors', len(sequences), len(errors))
    return sequences, errors

def read_cohort(path):
    with open(path, encoding='utf8') as file:
        return parse_stream(file)

class FeatureSpace:
    ''' Frozen code vocabulary and continuous normalization statistics.
    '''
    def __init__(self, vocab_size, cont_mean, cont_std, static_mean=(), static_std=()):
        self.vocab_size = int(vocab_size)
        self.cont_mean = numpy.array(cont_mean, dtype=numpy.float64)
        self.cont_std = numpy.array(cont_std, dtype=numpy.float64)
        self.static_mean = numpy.array(static_mean, dtype=numpy.float64)
        self.static_std = numpy.array(static_std, dtype=numpy.float64)

        for array in (self.cont_mean, self.cont_std, self.static_mean, self.static_std):
            array.flags.writeable = False

    @property
    def cont_dim(self):
        return len(self.cont_mean)

    @property
    def static_dim(self):
        return len(self.static_mean)

    @property
    def d_in(self):
        return self.vocab_size + self.cont_dim + self.static_dim

    def todict(self):
        return dict(vocab_size=self.vocab_size,
                    cont_mean=self.cont_mean.tolist(), cont_std=self.cont_std.tolist(),
                    static_mean=self.static_mean.tolist(), static_std=self.static_std.tolist())

    @staticmethod
    def fromdict(data):
        return FeatureSpace(data['vocab_size'], data['cont_mean'], data['cont_std'],
                            data.get('static_mean', ()), data.get('static_std', ()))

def _moments(rows, width):
    if not rows:
        return numpy.zeros(width), numpy.ones(width)
    values = numpy.array(rows, dtype=numpy.float64).reshape(len(rows), width)
    mean = values.mean(axis=0)
    std = numpy.sqrt(((values - mean) ** 2).mean(axis=0))
    return mean, numpy.maximum(std, STD_FLOOR)

def fit_feature_space(cohort, vocab_size):
    ''' Fit normalization statistics over every event of a training cohort.
    '''
    if not cohort:
        raise IngestError('Cannot fit a feature space on an empty cohort')

    cont_dim = cohort[0].cont_dim
    static_dims = {0 if seq.static is None else len(seq.static) for seq in cohort}
    if len(static_dims) != 1:
        raise SchemaError('Static vectors have mixed lengths {}'.format(sorted(static_dims)))

    event_rows, static_rows = [], []

    for seq in cohort:
        if seq.cont_dim != cont_dim:
            raise SchemaError('Patient {} has {} continuous values, expected {}'.format(seq.patient_id, seq.cont_dim, cont_dim))
        for event in seq.events:
            if event.code >= vocab_size:
                raise SchemaError('Patient {} has code {} outside vocabulary of {}'.format(seq.patient_id, event.code, vocab_size))
            event_rows.append(event.values)
        if seq.static is not None:
            static_rows.append(seq.static)

    cont_mean, cont_std = _moments(event_rows, cont_dim)
    static_dim = static_dims.pop()
    static_mean, static_std = _moments(static_rows, static_dim) if static_dim else ((), ())

    return FeatureSpace(vocab_size, cont_mean, cont_std, static_mean, static_std)

class VectorizedSequence:
    ''' Dense rows [one-hot code | z-scored values | z-scored static] plus gaps.
    '''
    def __init__(self, X, dt, label, patient_id=None):
        self.X = X
        self.dt = dt
        self.label = label
        self.patient_id = patient_id

    @property
    def length(self):
        return self.X.rows

def vectorize(seq, fs):
    ''' Vectorize one sequence; the first gap is always 0.
    '''
    if seq.cont_dim != fs.cont_dim:
        raise SchemaError('Patient {} has {} continuous values, feature space has {}'.format(seq.patient_id, seq.cont_dim, fs.cont_dim))
    if (0 if seq.static is None else len(seq.static)) != fs.static_dim:
        raise SchemaError('Patient {} static length does not match feature space'.format(seq.patient_id))

    length = len(seq.events)
    rows = numpy.zeros((length, fs.d_in))
    codes = numpy.array([event.code for event in seq.events])

    if (codes >= fs.vocab_size).any():
        raise SchemaError('Patient {} has a code outside vocabulary of {}'.format(seq.patient_id, fs.vocab_size))

    rows[numpy.arange(length), codes] = 1.
    values = numpy.array([event.values for event in seq.events], dtype=numpy.float64).reshape(length, fs.cont_dim)
    rows[:, fs.vocab_size:fs.vocab_size + fs.cont_dim] = (values - fs.cont_mean) / fs.cont_std

    if fs.static_dim:
        rows[:, fs.vocab_size + fs.cont_dim:] = (numpy.array(seq.static) - fs.static_mean) / fs.static_std

    times = numpy.array([event.t for event in seq.events])
    dt = numpy.concatenate([[0.], numpy.diff(times)])

    return VectorizedSequence(Tensor2(rows), dt, seq.label, seq.patient_id)

class Batch:
    ''' Sequences zero-padded to a common length, with a validity mask.
    '''
    def __init__(self, X, dt, mask, labels, patient_ids=None):
        self.X = X
        self.dt = dt
        self.mask = mask
        self.labels = labels
        self.patient_ids = patient_ids

    @property
    def size(self):
        return len(self.X)

    @property
    def length(self):
        return self.mask.shape[1]

    @property
    def lengths(self):
        return self.mask.sum(axis=1)

def batch_pad(vseqs, order=None):
    ''' Pad sequences to the longest one; order optionally selects and orders them by index.
    '''
    if order is not None:
        vseqs = [vseqs[index] for index in order]
    if not vseqs:
        raise ValueError('Cannot build a batch from no sequences')

    longest = max(vseq.length for vseq in vseqs)
    width = vseqs[0].X.cols

    X, dt, mask = [], numpy.zeros((len(vseqs), longest)), numpy.zeros((len(vseqs), longest), dtype=bool)

    for (index, vseq) in enumerate(vseqs):
        rows = numpy.zeros((longest, width))
        rows[:vseq.length] = vseq.X.data
        X.append(Tensor2(rows))
        dt[index, :vseq.length] = vseq.dt
        mask[index, :vseq.length] = True

    labels = numpy.array([vseq.label for vseq in vseqs], dtype=numpy.float64)
    return Batch(X, dt, mask, labels, [vseq.patient_id for vseq in vseqs])
