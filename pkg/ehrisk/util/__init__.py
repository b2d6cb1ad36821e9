import logging; _L = logging.getLogger('ehrisk.util')

from contextlib import contextmanager
from os.path import dirname
import json
import os
import time

import numpy

# Stream identifiers for seeded substreams; the first key is always the run seed.
STREAM_SPLIT = 1
STREAM_INIT = 2
STREAM_EPOCH = 3
STREAM_CONTAMINATE = 4
STREAM_PATIENT = 5

def substream(seed, *keys):
    ''' Return a numpy Generator for the counter-based substream (seed, *keys).

        Substreams never depend on how many draws other substreams made, so
        per-patient and per-epoch randomness is order-independent.
    '''
    return numpy.random.Generator(numpy.random.PCG64(numpy.random.SeedSequence([int(seed)] + [int(k) for k in keys])))

def dump_json(data):
    ''' Canonical text for result artifacts; equal data gives equal bytes.
    '''
    return json.dumps(data, indent=2, ensure_ascii=False, allow_nan=False) + '\n'

def write_json(path, data):
    ''' Write data to path, or to stdout when path is None or "-".
    '''
    text = dump_json(data)

    if path in (None, '-'):
        print(text, end='')
        return None

    if dirname(path):
        os.makedirs(dirname(path), exist_ok=True)

    with open(path, 'w', encoding='utf8') as file:
        file.write(text)

    _L.info(u'Wrote {}'.format(path))
    return path

def parse_number_list(value, kind=float):
    ''' Parse "2,4,6" style command-line lists.
    '''
    try:
        return [kind(item) for item in value.split(',') if item.strip()]
    except ValueError:
        raise ValueError('Could not read a list of {} from {!r}'.format(kind.__name__, value))

@contextmanager
def log_elapsed(message, *args):
    ''' Log how long the enclosed block took, at INFO.
    '''
    start = time.time()
    try:
        yield
    finally:
        _L.info('{} in {:.1f}sec'.format(message % args if args else message, time.time() - start))
