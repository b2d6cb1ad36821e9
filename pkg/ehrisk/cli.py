from __future__ import absolute_import, division, print_function
import logging; _L = logging.getLogger('ehrisk.cli')

from argparse import ArgumentParser
import sys

from . import RunConfig, __version__, datagen, experiments, trainer
from .ingest import read_cohort, write_stream, vectorize, batch_pad, fit_feature_space
from .util import write_json, parse_number_list

# Fresh-model audits default to a narrow model so every block finishes quickly.
AUDIT_MODEL_DEFAULTS = dict(d_m=16, n_heads=2)
AUDIT_BATCH = 4

class UsageError(Exception):
    pass

class UsageParser(ArgumentParser):
    ''' ArgumentParser that raises UsageError instead of exiting.
    '''
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)

def _load_config(args):
    run = RunConfig() if args.config is None else RunConfig.from_file(args.config)
    return run if args.seed is None else run.with_seed(args.seed)

def _load_cohort(path):
    sequences, errors = read_cohort(path)
    if errors:
        _L.warning('Skipped {} bad records in {}'.format(len(errors), path))
    if not sequences:
        raise ValueError('No usable patients in {}'.format(path))
    return sequences

def _require_out(args):
    if not args.out or args.out == '-':
        raise UsageError('{} needs --out <path>'.format(args.command))
    return args.out

def generate(args, run):
    cfg = run.cohort if args.patients is None else run.cohort.replace(n_patients=args.patients)
    cohort = datagen.generate_cohort(cfg, start=args.start)

    if args.out in (None, '-'):
        write_stream(cohort, sys.stdout)
    else:
        with open(args.out, 'w', encoding='utf8') as file:
            write_stream(cohort, file)
        _L.info(u'Wrote {} patients to {}'.format(len(cohort), args.out))

def train(args, run):
    out = _require_out(args)
    model_config = run.model_config()
    if args.architecture:
        model_config = model_config.replace(architecture=args.architecture)

    cohort = _load_cohort(args.cohort)
    model, history = trainer.train(cohort, model_config, run.train, vocab_size=run.cohort.vocab_size)
    trainer.save_checkpoint(model, out, run.train, history)

    write_json(args.history, history.todict())

def evaluate(args, run):
    model = trainer.load_checkpoint(args.checkpoint)
    threshold = run.train.threshold if args.threshold is None else args.threshold
    report = trainer.evaluate(model, _load_cohort(args.cohort), threshold)

    _L.info('Accuracy {:.4f}, precision {:.4f}, recall {:.4f}, F1 {:.4f}'.format(
            report.acc, report.precision, report.recall, report.f1))
    write_json(args.out, report.todict())

def audit(args, run):
    if args.checkpoint:
        model = trainer.load_checkpoint(args.checkpoint)
        feature_space = model.feature_space
    else:
        model, feature_space = None, None

    if args.cohort:
        patients = _load_cohort(args.cohort)[:AUDIT_BATCH]
    else:
        patients = datagen.generate_cohort(run.cohort, count=AUDIT_BATCH)

    if model is None:
        feature_space = fit_feature_space(patients, run.cohort.vocab_size)
        model_config = run.model_config(**AUDIT_MODEL_DEFAULTS).replace(d_in=feature_space.d_in)
        if args.architecture:
            model_config = model_config.replace(architecture=args.architecture)
        if args.no_ffn:
            model_config = model_config.replace(ffn_enabled=False)
        model = trainer.init_params(model_config, run.train.seed, feature_space)

    batch = batch_pad([vectorize(seq, feature_space) for seq in patients])
    report = trainer.gradient_audit(model, batch, args.h, args.tol)
    write_json(args.out, report.todict())

    if not report.passed:
        raise RuntimeError('Gradient audit failed for {}'.format(', '.join(report.failing())))

def compare(args, run):
    ex = run.experiments
    result = experiments.run_comparison(run.cohort, run.model_config(), run.train,
                                        args.seeds or ex.seeds, ex.n_test, args.workers or ex.workers)
    write_json(args.out, result.todict())

def sweep_heads(args, run):
    ex = run.experiments
    result = experiments.sweep_heads(run.cohort, run.model_config(d_m=ex.head_d_m), run.train,
                                     args.heads or ex.head_list, args.seeds or ex.seeds[:1],
                                     ex.n_test, args.workers or ex.workers)
    write_json(args.out, result.todict())

def sweep_contamination(args, run):
    ex = run.experiments
    result = experiments.sweep_contamination(run.cohort, run.model_config(), run.train,
                                             args.rhos or ex.rho_list, args.seeds or ex.seeds,
                                             ex.noise_sigma, ex.n_test, args.workers or ex.workers)
    write_json(args.out, result.todict())

def explain(args, run):
    model = trainer.load_checkpoint(args.checkpoint)
    write_json(args.out, trainer.explain(model, _load_cohort(args.cohort)))

def _int_list(value):
    return parse_number_list(value, int)

def _float_list(value):
    return parse_number_list(value, float)

common = ArgumentParser(add_help=False)

common.add_argument('--seed', type=int, help='Override every seed in the configuration.')
common.add_argument('--config', help='JSON configuration with cohort, model, train and experiments sections.')
common.add_argument('--out', help='Output path, stdout if omitted.')

common.add_argument('-l', '--logfile', help='Optional log file name.')

common.add_argument('-v', '--verbose', help='Turn on verbose logging',
                    action='store_const', dest='loglevel',
                    const=logging.DEBUG, default=logging.INFO)

common.add_argument('-q', '--quiet', help='Turn off most logging',
                    action='store_const', dest='loglevel',
                    const=logging.WARNING, default=logging.INFO)

sweep = ArgumentParser(add_help=False)
sweep.add_argument('--seeds', type=_int_list, help='Comma-separated seeds, e.g. 1,2,3.')
sweep.add_argument('--workers', type=int, help='Cells to train in parallel.')

parser = UsageParser(prog='ehrisk', description='Longitudinal EHR risk models with a hand-built autodiff tape.')
parser.add_argument('--version', action='version', version='%(prog)s ' + __version__)

commands = parser.add_subparsers(dest='command', metavar='command')
commands.required = True

_generate = commands.add_parser('generate', parents=[common], help='Write a synthetic cohort.')
_generate.add_argument('--patients', type=int, help='Number of patients, overriding the configuration.')
_generate.add_argument('--start', type=int, default=0, help='Index of the first patient.')
_generate.set_defaults(func=generate)

_train = commands.add_parser('train', parents=[common], help='Train a model and write a checkpoint.')
_train.add_argument('cohort', help='Cohort file, one patient per line.')
_train.add_argument('--history', help='Training history output path, stdout if omitted.')
_train.add_argument('--architecture', choices=('transformer', 'mlp'))
_train.set_defaults(func=train)

_evaluate = commands.add_parser('evaluate', parents=[common], help='Score a checkpoint on a cohort.')
_evaluate.add_argument('checkpoint')
_evaluate.add_argument('cohort')
_evaluate.add_argument('--threshold', type=float)
_evaluate.set_defaults(func=evaluate)

_audit = commands.add_parser('audit', parents=[common], help='Check tape gradients against finite differences.')
_audit.add_argument('--checkpoint', help='Audit this checkpoint instead of a fresh model.')
_audit.add_argument('--cohort', help='Take the audit batch from this cohort file.')
_audit.add_argument('--architecture', choices=('transformer', 'mlp'))
_audit.add_argument('--no-ffn', action='store_true', help='Audit a fresh model without feed-forward sublayers.')
_audit.add_argument('--h', type=float, default=1e-5, help='Finite-difference step.')
_audit.add_argument('--tol', type=float, default=1e-4, help='Largest allowed relative error.')
_audit.set_defaults(func=audit)

_compare = commands.add_parser('compare', parents=[common, sweep], help='Transformer against the MLP baseline.')
_compare.set_defaults(func=compare)

_heads = commands.add_parser('sweep-heads', parents=[common, sweep], help='Accuracy across attention head counts.')
_heads.add_argument('--heads', type=_int_list, help='Comma-separated head counts.')
_heads.set_defaults(func=sweep_heads)

_contamination = commands.add_parser('sweep-contamination', parents=[common, sweep],
                                     help='Clean-test precision across training contamination ratios.')
_contamination.add_argument('--rhos', type=_float_list, help='Comma-separated contamination ratios.')
_contamination.set_defaults(func=sweep_contamination)

_explain = commands.add_parser('explain', parents=[common], help='Per-event pooling weights for each patient.')
_explain.add_argument('checkpoint')
_explain.add_argument('cohort')
_explain.set_defaults(func=explain)

def main(argv=None):
    ''' Run one subcommand; return 0 on success, 1 on usage errors, 2 on runtime errors.
    '''
    ehrisk_logger = logging.getLogger('ehrisk')
    logger_state = {'previous loglevel': ehrisk_logger.level, 'handlers': []}

    log_format = '%(asctime)s %(levelname)07s: %(message)s'

    try:
        args = parser.parse_args(sys.argv[1:] if argv is None else argv)
    except UsageError as e:
        print('ehrisk: error: {}'.format(e), file=sys.stderr)
        return 1
    except SystemExit as e:
        return e.code or 0

    ehrisk_logger.setLevel(logging.DEBUG)

    handler1 = logging.StreamHandler()
    handler1.setLevel(args.loglevel)
    handler1.setFormatter(logging.Formatter(log_format))
    ehrisk_logger.addHandler(handler1)
    logger_state['handlers'].append(handler1)

    if args.logfile:
        handler2 = logging.FileHandler(args.logfile)
        handler2.setLevel(logging.DEBUG)
        handler2.setFormatter(logging.Formatter(log_format))
        ehrisk_logger.addHandler(handler2)
        logger_state['handlers'].append(handler2)

    try:
        try:
            run = _load_config(args)
        except (OSError, ValueError) as e:
            raise UsageError('Bad configuration: {}'.format(e))
        args.func(args, run)
    except UsageError as e:
        parser.print_usage(sys.stderr)
        _L.error(e)
        return 1
    except Exception as e:
        _L.error(e, exc_info=True)
        return 2
    else:
        return 0
    finally:
        for handler in logger_state['handlers']:
            ehrisk_logger.removeHandler(handler)
            handler.close()
        ehrisk_logger.setLevel(logger_state['previous loglevel'])

if __name__ == '__main__':
    exit(main())
