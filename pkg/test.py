# coding=utf8
"""
Run Python test suite via the standard unittest mechanism.
Usage:
  python test.py
  python test.py --logall
  python test.py TestGradCheck
  python test.py -l TestTrain.test_early_stopping
All logging is suppressed unless --logall or -l specified.
Acceptance runs are skipped unless EHRISK_SLOW_TESTS=1 is set.
"""
import unittest
import sys
import logging

from ehrisk.tests import TestRunConfig
from ehrisk.tests.acceptance import TestAcceptance
from ehrisk.tests.cli import TestCli
from ehrisk.tests.datagen import TestGenerate, TestLabelProbability, TestContaminate
from ehrisk.tests.experiments import TestSweepResult, TestProtocols
from ehrisk.tests.ingest import TestParsing, TestFeatureSpace, TestVectorize, TestBatch
from ehrisk.tests.metrics import TestMetrics
from ehrisk.tests.model import TestEmbedder, TestAttention, TestMultiHead, TestEncoder, TestHead
from ehrisk.tests.numcore import TestTensor2, TestForward, TestBackward, TestGradCheck
from ehrisk.tests.trainer import TestConfig, TestInit, TestAdam, TestTrain, TestGradientAudit
from ehrisk.tests.util import TestUtilities

if __name__ == '__main__':
    # Allow the user to turn on logging with -l or --logall
    # unittest.main() has its own command line so we slide this in first
    level = logging.CRITICAL
    for (i, arg) in enumerate(sys.argv[1:], 1):
        if arg == "-l" or arg == "--logall":
            level = logging.DEBUG
            del sys.argv[i]
            break

    logging.basicConfig(level=level, format='%(asctime)s %(levelname)07s: %(message)s')
    logging.getLogger('ehrisk').setLevel(level)

    unittest.main()
