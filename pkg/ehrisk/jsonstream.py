from __future__ import absolute_import, division, print_function

from itertools import chain

import ijson

JSONError = ijson.common.JSONError

def _build_value(data):
    ''' Read one complete value off the ijson event iterator.
    '''
    for (prefix, event, value) in data:
        if event in ('string', 'null', 'boolean'):
            return value

        elif event == 'number':
            # ijson hands back Decimals parsed from the exact text, so floats round-trip
            return value if isinstance(value, int) else float(value)

        elif event == 'start_array':
            return _build_list(data)

        elif event == 'start_map':
            return _build_map(data)

        else:
            raise ValueError((prefix, event, value))

    raise JSONError('Document ended before a value was complete')

def _build_list(data):
    ''' Collect array items up to the matching 'end_array' event.
    '''
    output = list()

    for (prefix, event, value) in data:
        if event == 'end_array':
            return output

        # push the item's first event back for _build_value()
        _data = chain([(prefix, event, value)], data)
        output.append(_build_value(_data))

    raise JSONError('Document ended inside an array')

def _build_map(data):
    ''' Collect object members up to the matching 'end_map' event.
    '''
    output = dict()

    for (prefix, event, value) in data:
        if event == 'end_map':
            return output

        elif event == 'map_key':
            output[value] = _build_value(data)

        else:
            raise ValueError((prefix, event, value))

    raise JSONError('Document ended inside an object')

def stream_document(stream):
    ''' Parse one complete JSON object from a binary or text stream.

        Raises JSONError for truncated or malformed input, including trailing
        garbage after the object.
    '''
    data = ijson.parse(stream)

    for (prefix, event, value) in data:
        if event != 'start_map':
            # A checkpoint root is an object.
            raise JSONError('Expected an object at the root, got {}'.format(event))

        document = _build_map(data)

        for (prefix, event, value) in data:
            raise JSONError('Unexpected {} after the root object'.format(event))

        return document

    raise JSONError('Empty document')
