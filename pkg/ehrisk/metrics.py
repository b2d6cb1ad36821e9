from __future__ import absolute_import, division, print_function
import logging; _L = logging.getLogger('ehrisk.metrics')

import numpy

class ConfusionMatrix:
    tp = None
    fp = None
    fn = None
    tn = None
    threshold = None

    def __init__(self, tp, fp, fn, tn, threshold):
        self.tp = tp
        self.fp = fp
        self.fn = fn
        self.tn = tn
        self.threshold = threshold

    @property
    def total(self):
        return self.tp + self.fp + self.fn + self.tn

class MetricsReport:
    ''' Accuracy, precision, recall and F1 with the counts behind them.
    '''
    fields = ('acc', 'precision', 'recall', 'f1', 'tp', 'fp', 'fn', 'tn', 'threshold', 'n')

    def __init__(self, acc, precision, recall, f1, tp, fp, fn, tn, threshold, n):
        self.acc = acc
        self.precision = precision
        self.recall = recall
        self.f1 = f1
        self.tp = tp
        self.fp = fp
        self.fn = fn
        self.tn = tn
        self.threshold = threshold
        self.n = n

    def todict(self):
        return {name: getattr(self, name) for name in self.fields}

    @staticmethod
    def fromdict(data):
        return MetricsReport(**{name: data[name] for name in MetricsReport.fields})

def _ratio(numerator, denominator):
    # 0/0 is reported as 0
    return numerator / denominator if denominator else 0.

def f1_score(precision, recall):
    return _ratio(2 * precision * recall, precision + recall)

def confusion(preds, labels, threshold=0.5):
    ''' Tally predictions; a probability equal to the threshold counts as positive.
    '''
    preds = numpy.asarray(preds, dtype=numpy.float64).ravel()
    labels = numpy.asarray(labels).ravel()

    if len(preds) == 0:
        raise ValueError('Cannot build a confusion matrix from no predictions')
    if len(preds) != len(labels):
        raise ValueError('{} predictions for {} labels'.format(len(preds), len(labels)))
    if not numpy.isin(labels, (0, 1)).all():
        raise ValueError('Labels must be 0 or 1')

    predicted, actual = preds >= threshold, labels == 1

    return ConfusionMatrix(tp=int((predicted & actual).sum()), fp=int((predicted & ~actual).sum()),
                           fn=int((~predicted & actual).sum()), tn=int((~predicted & ~actual).sum()),
                           threshold=threshold)

def compute_metrics(cm):
    if cm.total <= 0:
        raise ValueError('Confusion matrix is empty')

    precision = _ratio(cm.tp, cm.tp + cm.fp)
    recall = _ratio(cm.tp, cm.tp + cm.fn)

    return MetricsReport(acc=(cm.tp + cm.tn) / cm.total, precision=precision, recall=recall,
                         f1=f1_score(precision, recall), tp=cm.tp, fp=cm.fp, fn=cm.fn, tn=cm.tn,
                         threshold=cm.threshold, n=cm.total)

def evaluate_predictions(preds, labels, threshold=0.5):
    return compute_metrics(confusion(preds, labels, threshold))
