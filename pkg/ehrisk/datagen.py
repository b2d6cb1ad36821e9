from __future__ import absolute_import, division, print_function
import logging; _L = logging.getLogger('ehrisk.datagen')

import math

import numpy

from .ingest import Event, PatientSequence, SchemaError
from .util import substream, STREAM_PATIENT, STREAM_CONTAMINATE

# Planted signal looks at this many most recent events.
RECENCY_WINDOW = 5

# Smallest gap between events, in hours; keeps timestamps strictly increasing.
MIN_GAP = 1e-6

class GenConfig:
    ''' Shape of a synthetic cohort and its planted risk signal.
    '''
    fields = ('n_patients', 'len_min', 'len_max', 'gap_rate', 'vocab_size', 'cont_dim',
              'static_dim', 'risk_code', 'beta0', 'beta1', 'beta2', 'seed')

    def __init__(self, n_patients=1000, len_min=5, len_max=50, gap_rate=0.2, vocab_size=100,
                 cont_dim=8, static_dim=0, risk_code=7, beta0=-2.0, beta1=0.9, beta2=1.2, seed=0):
        self.n_patients = n_patients
        self.len_min = len_min
        self.len_max = len_max
        self.gap_rate = gap_rate
        self.vocab_size = vocab_size
        self.cont_dim = cont_dim
        self.static_dim = static_dim
        self.risk_code = risk_code
        self.beta0 = beta0
        self.beta1 = beta1
        self.beta2 = beta2
        self.seed = seed

    def validate(self):
        if self.n_patients < 0:
            raise ValueError('n_patients must be >= 0, got {}'.format(self.n_patients))
        if not 1 <= self.len_min <= self.len_max:
            raise ValueError('Need 1 <= len_min <= len_max, got {} and {}'.format(self.len_min, self.len_max))
        if not self.gap_rate > 0:
            raise ValueError('gap_rate must be > 0, got {}'.format(self.gap_rate))
        if not 0 <= self.risk_code < self.vocab_size:
            raise ValueError('risk_code {} is outside vocabulary of {}'.format(self.risk_code, self.vocab_size))
        if self.cont_dim < 1:
            raise ValueError('cont_dim must be >= 1 for the planted signal, got {}'.format(self.cont_dim))
        return self

    def replace(self, **changes):
        values = self.todict()
        values.update(changes)
        return GenConfig.fromdict(values)

    def todict(self):
        return {name: getattr(self, name) for name in self.fields}

    @staticmethod
    def fromdict(data):
        unknown = set(data) - set(GenConfig.fields)
        if unknown:
            raise ValueError('Unknown cohort settings {}'.format(sorted(unknown)))
        return GenConfig(**data)

class ContaminationSpec:
    ''' Fraction of events whose continuous values get replaced with wide noise.
    '''
    fields = ('rho', 'noise_sigma', 'seed')

    def __init__(self, rho, noise_sigma=10.0, seed=0):
        self.rho = rho
        self.noise_sigma = noise_sigma
        self.seed = seed

    def validate(self):
        if not 0 <= self.rho <= 1:
            raise ValueError('Contamination ratio must be in [0, 1], got {}'.format(self.rho))
        if self.noise_sigma < 0:
            raise ValueError('noise_sigma must be >= 0, got {}'.format(self.noise_sigma))
        return self

    def todict(self):
        return {name: getattr(self, name) for name in self.fields}

def sigmoid(value):
    if value >= 0:
        return 1. / (1. + math.exp(-value))
    exp = math.exp(value)
    return exp / (1. + exp)

def risk_score(events, cfg):
    recent = events[-RECENCY_WINDOW:]
    count = sum(1 for event in recent if event.code == cfg.risk_code)
    level = sum(event.values[0] for event in recent) / len(recent)
    return cfg.beta0 + cfg.beta1 * count + cfg.beta2 * level

def label_probability(seq, cfg):
    ''' Bayes probability of a positive label for a sequence drawn under cfg.
    '''
    for event in seq.events:
        if len(event.values) != cfg.cont_dim:
            raise SchemaError('Patient {} has {} continuous values, generator uses {}'.format(
                seq.patient_id, len(event.values), cfg.cont_dim))

    return sigmoid(risk_score(seq.events, cfg))

def generate_patient(cfg, index):
    rng = substream(cfg.seed, STREAM_PATIENT, index)

    length = int(rng.integers(cfg.len_min, cfg.len_max + 1))
    gaps = numpy.maximum(rng.exponential(1. / cfg.gap_rate, size=length), MIN_GAP)
    times = numpy.cumsum(gaps)
    codes = rng.integers(0, cfg.vocab_size, size=length)
    values = rng.standard_normal((length, cfg.cont_dim))
    static = rng.standard_normal(cfg.static_dim) if cfg.static_dim else None

    events = [Event(float(t), int(code), tuple(row.tolist())) for (t, code, row) in zip(times, codes, values)]
    label = int(rng.random() < sigmoid(risk_score(events, cfg)))

    return PatientSequence('p{:06d}'.format(index), label, events, None if static is None else static.tolist())

def generate_cohort(cfg, start=0, count=None):
    ''' Generate patients start .. start+count-1 (default all cfg.n_patients).

        Each patient draws from its own substream of cfg.seed, so any index
        range reproduces exactly the same patients.
    '''
    cfg.validate()
    count = cfg.n_patients if count is None else count
    cohort = [generate_patient(cfg, index) for index in range(start, start + count)]

    positives = sum(seq.label for seq in cohort)
    _L.info('Generated %d patients (%d positive) from seed %d', len(cohort), positives, cfg.seed)

    return cohort

def contaminate(cohort, spec):
    ''' Return a new cohort with round(rho * events) continuous vectors replaced by N(0, sigma^2 I) noise.
    '''
    spec.validate()

    locations = [(p, e) for (p, seq) in enumerate(cohort) for e in range(len(seq.events))]
    total = len(locations)
    chosen = int(math.floor(spec.rho * total + .5))

    if chosen == 0:
        return [PatientSequence(seq.patient_id, seq.label, seq.events, seq.static) for seq in cohort]

    rng = substream(spec.seed, STREAM_CONTAMINATE)
    picks = numpy.sort(rng.choice(total, size=chosen, replace=False))

    replaced = dict()
    for pick in picks:
        p, e = locations[pick]
        width = len(cohort[p].events[e].values)
        replaced[(p, e)] = tuple(rng.normal(0., spec.noise_sigma, size=width).tolist())

    output = []
    for (p, seq) in enumerate(cohort):
        events = [Event(event.t, event.code, replaced.get((p, e), event.values))
                  for (e, event) in enumerate(seq.events)]
        output.append(PatientSequence(seq.patient_id, seq.label, events, seq.static))

    _L.info('Contaminated %d of %d events (rho=%s)', chosen, total, spec.rho)
    return output
