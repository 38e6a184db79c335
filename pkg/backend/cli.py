"""
Command-line entry point: every experiment of the lab as a subcommand.

    python cli.py calibrate --k1 100 --k2 1000 --reps 100 --alphas 0.02:2.0:100 --seed 1 --out cal.csv
    python cli.py generator --minima -1,2 --saddles 0 --alpha 1

Results go to --out (written atomically) or to standard output. A one-line
JSON provenance record is always written to standard error.
"""
import argparse
import json
import logging
import os
import re
import sys
import time
from dataclasses import dataclass, field

import numpy as np

from dataset_loader import load_csv_dataset, load_idx, synth_dataset
from errors import EXIT_CODES, InsufficientDataError, LabError, UsageError, require
from file_manager import FileManager, read_values
from gradient_noise import TAIL_FRACTION, measure_run, measure_sweep, stationary_alpha
from metastability import (ExitConfig, Landscape1D, exit_law_check, exit_times, generator,
                           occupation, stationary)
from models import model_from_spec
from report_generator import ARTIFACT_VERSION, ReportGenerator, to_plain
from sde_simulator import (SdeConfig, epsilon_from_sigma, flat_valley_experiment, levy_path,
                           potential_from_spec, simulate)
from stable_sampler import sample, validate_params
from tail_estimator import Grouping, calibrate, choose_grouping, estimate_alpha, hill_estimate
from workers import THREADS_ENV, default_workers

logger = logging.getLogger(__name__)

OUTPUT_ENV = 'TAILLAB_OUTPUT'
FORMATS = ('csv', 'json')
JSON_DEFAULT = {'estimate', 'hill', 'generator'}

# options that are bookkeeping, not experiment parameters
META_KEYS = {'command', 'config', 'out', 'format', 'threads', 'verbose', 'seed'}


@dataclass(frozen=True)
class RunConfig:
    command: str
    params: dict = field(default_factory=dict)
    seed: int = 0
    out: str = None
    fmt: str = 'csv'
    threads: int = 1
    verbose: bool = False


@dataclass(frozen=True)
class Output:
    """Flat records for CSV and a richer document for JSON"""

    records: list
    document: object = None

    def for_format(self, fmt):
        if fmt == 'json' and self.document is not None:
            return self.document
        return self.records


def parse_range(text):
    """`lo:hi:count` (inclusive, evenly spaced) or a comma-separated list"""
    try:
        if ':' in text:
            lo, hi, count = text.split(':')
            count = int(count)
            if count < 1:
                raise ValueError("count must be at least 1")
            return [float(v) for v in np.linspace(float(lo), float(hi), count)]
        return [float(v) for v in text.split(',') if v.strip()]
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"bad range {text!r}: {e}")


def parse_specs(text):
    """semicolon-separated model specs, e.g. `linear;mlp:64;mlp:64,64`"""
    specs = [s.strip() for s in text.split(';') if s.strip()]
    if not specs:
        raise argparse.ArgumentTypeError(f"expected semicolon-separated model specs, got {text!r}")
    return specs


def parse_ints(text):
    try:
        return [int(v) for v in text.split(',') if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def parse_reals(text):
    try:
        return [float(v) for v in text.split(',') if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated reals, got {text!r}")


class LabArgumentParser(argparse.ArgumentParser):
    """Raises UsageError instead of exiting, listing the flags the command accepts"""

    def error(self, message):
        flags = sorted(s for action in self._actions for s in action.option_strings
                       if s.startswith('--'))
        raise UsageError(f"{self.prog}: {message}; valid flags: {' '.join(flags)}")


def _exit_code_table():
    lines = ['exit codes:']
    lines += [f"  {code}  {meaning}" for code, meaning in sorted(EXIT_CODES.items())]
    return '\n'.join(lines)


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--seed', type=int, default=0, help='64-bit base seed (default 0)')
    common.add_argument('--out', help='output file; standard output when omitted')
    common.add_argument('--format', choices=FORMATS, help='output format (csv or json)')
    common.add_argument('--threads', type=int, default=None,
                        help=f'worker processes (default ${THREADS_ENV} or 1)')
    common.add_argument('--config', help='key=value file; command-line flags override it')
    common.add_argument('--verbose', action='store_true', help='debug logging on standard error')

    parser = LabArgumentParser(
        prog='taillab',
        description='Heavy-tailed SGD noise lab: stable sampling, tail-index estimation, '
                    'Levy-driven SDE simulation and metastability analytics.',
        epilog=_exit_code_table(),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest='command', metavar='command', parser_class=LabArgumentParser)
    sub.required = True

    def command(name, help_text):
        return sub.add_parser(name, parents=[common], help=help_text, epilog=_exit_code_table(),
                              formatter_class=argparse.RawDescriptionHelpFormatter)

    p = command('sample', 'draw SaS variates')
    p.add_argument('--alpha', type=float, required=True)
    p.add_argument('--sigma', type=float, default=1.0)
    p.add_argument('--n', type=int, required=True)

    p = command('estimate', 'block-sum tail-index estimate of a file of reals')
    p.add_argument('--in', dest='input', required=True, help="file of reals, or - for stdin")
    p.add_argument('--k1', type=int, help='group size; chosen near sqrt(K) when omitted')
    p.add_argument('--k2', type=int, help='group count (with --k1)')

    p = command('hill', 'Hill tail-index estimate of a file of reals')
    p.add_argument('--in', dest='input', required=True, help="file of reals, or - for stdin")
    p.add_argument('--k', type=int, help='upper order statistics (default n // 10)')

    p = command('calibrate', 'estimator accuracy over a grid of tail indices')
    p.add_argument('--alphas', type=parse_range, required=True)
    p.add_argument('--k1', type=int, default=100)
    p.add_argument('--k2', type=int, default=1000)
    p.add_argument('--reps', type=int, default=100)

    p = command('simulate', 'integrate the Levy-driven gradient SDE')
    p.add_argument('--potential', required=True,
                   help='quadratic[:dim] | double-well:m1,m2 | wells:m../s.. | product-valley')
    p.add_argument('--alpha', type=float, required=True)
    amplitude = p.add_mutually_exclusive_group(required=True)
    amplitude.add_argument('--epsilon', type=float, help='noise amplitude (epsilon form)')
    amplitude.add_argument('--sigma', type=float,
                           help='SGD noise scale; epsilon = eta^((alpha-1)/alpha) sigma')
    p.add_argument('--eta', type=float, required=True)
    p.add_argument('--steps', type=int, required=True)
    p.add_argument('--w0', type=parse_reals, help='start point (default: origin, or m1 for wells)')
    p.add_argument('--thinning', type=int)
    p.add_argument('--stiff-guard', action='store_true',
                   help='integrate stiff drift steps in substeps (off: the recursion as written)')

    p = command('levy-path', 'sample a Levy motion path')
    p.add_argument('--alpha', type=float, required=True)
    p.add_argument('--dim', type=int, default=1)
    p.add_argument('--horizon', type=float, required=True)
    p.add_argument('--dt', type=float, required=True)
    p.add_argument('--thinning', type=int, default=1)

    def landscape_flags(p):
        p.add_argument('--minima', type=parse_reals, required=True)
        p.add_argument('--saddles', type=parse_reals, required=True)
        p.add_argument('--alpha', type=float, required=True)

    p = command('exit-times', 'Monte Carlo transition times out of one valley')
    landscape_flags(p)
    p.add_argument('--epsilon', type=float, required=True)
    p.add_argument('--eta', type=float, default=1e-3)
    p.add_argument('--source', type=int, default=0)
    p.add_argument('--delta', type=float)
    p.add_argument('--reps', type=int, default=200)
    p.add_argument('--max-steps', type=int, default=10 ** 8)
    p.add_argument('--mode', choices=('transition', 'first_exit'), default='transition')
    p.add_argument('--no-stiff-guard', dest='stiff_guard', action='store_false')

    p = command('occupation', 'valley occupation fractions along one long run')
    landscape_flags(p)
    p.add_argument('--epsilon', type=float, required=True)
    p.add_argument('--horizon', type=float, required=True)
    p.add_argument('--eta', type=float, default=1e-3)
    p.add_argument('--w0', type=float)
    p.add_argument('--no-stiff-guard', dest='stiff_guard', action='store_false')

    p = command('generator', 'generator matrix and stationary law of the limiting chain')
    landscape_flags(p)

    p = command('flat-valley', 'noisy descent on (w1 w2)^2 from random starts')
    p.add_argument('--alphas', type=parse_range, required=True)
    p.add_argument('--epsilon', type=float, required=True)
    p.add_argument('--eta', type=float, default=1e-2)
    p.add_argument('--steps', type=int, default=10_000)
    p.add_argument('--inits', type=int, default=500)
    p.add_argument('--no-stiff-guard', dest='stiff_guard', action='store_false')

    def training_flags(p):
        p.add_argument('--data', default='gaussian-blobs',
                       help='gaussian-blobs | ring-mixture | idx | csv')
        p.add_argument('--n', type=int, default=10_000)
        p.add_argument('--d', type=int, default=100)
        p.add_argument('--classes', type=int, default=2)
        p.add_argument('--separation', type=float, default=4.0)
        p.add_argument('--images', help='IDX images file (--data idx)')
        p.add_argument('--labels', help='IDX labels file (--data idx)')
        p.add_argument('--csv', help='CSV dataset with a label column (--data csv)')
        p.add_argument('--limit', type=int, help='keep the first rows of a file dataset')
        p.add_argument('--loss', choices=('nll', 'hinge'), default='nll')
        p.add_argument('--eta', type=float, default=0.1)
        p.add_argument('--iterations', type=int, default=1000)
        p.add_argument('--log-every', type=int, default=100)
        p.add_argument('--tail-fraction', type=float, default=TAIL_FRACTION,
                       help='trailing share of the run averaged as the stationary alpha')

    p = command('measure', 'train with SGD and track the gradient-noise tail index')
    training_flags(p)
    p.add_argument('--model', default='linear', help='linear | mlp:W | mlp:W1,W2')
    p.add_argument('--b', type=int, default=500)
    p.add_argument('--stop-at-fit', action='store_true',
                   help='stop at the first logged iteration with 100%% training accuracy')

    p = command('sweep', 'stationary tail index over architectures and batch sizes')
    training_flags(p)
    p.add_argument('--models', type=parse_specs, required=True,
                   help='semicolon-separated, e.g. "mlp:32;mlp:64;mlp:64,64"')
    p.add_argument('--batch-sizes', type=parse_ints, default=[500])
    p.add_argument('--no-stop-at-fit', dest='stop_at_fit', action='store_false')

    parser.commands = sub.choices
    return parser


_NEGATIVE = re.compile(r'^-\.?\d')


def _join_negative_values(argv):
    """`--minima -1,2` becomes `--minima=-1,2` so argparse does not read -1,2 as a flag"""
    joined, i = [], 0
    while i < len(argv):
        token = argv[i]
        if (token.startswith('--') and '=' not in token and i + 1 < len(argv)
                and _NEGATIVE.match(argv[i + 1])):
            joined.append(f"{token}={argv[i + 1]}")
            i += 2
            continue
        joined.append(token)
        i += 1
    return joined


def read_config_file(path):
    """key=value lines as command-line tokens; `#` comments and blank lines skipped"""
    tokens = []
    try:
        with open(path, encoding='utf-8') as f:
            lines = f.readlines()
    except OSError as e:
        raise UsageError(f"cannot read config file {path}: {e}")
    for line_no, line in enumerate(lines, start=1):
        line = line.split('#', 1)[0].strip()
        if not line:
            continue
        if '=' not in line:
            raise UsageError(f"{path}:{line_no}: expected key=value, got {line!r}")
        key, value = (part.strip() for part in line.split('=', 1))
        flag = '--' + key.lstrip('-').replace('_', '-')
        if value.lower() in ('true', 'yes', 'on'):
            tokens.append(flag)
        elif value.lower() in ('false', 'no', 'off'):
            continue
        else:
            tokens.append(f"{flag}={value}")
    return tokens


def _config_path(argv):
    for i, token in enumerate(argv):
        if token == '--config' and i + 1 < len(argv):
            return argv[i + 1]
        if token.startswith('--config='):
            return token.split('=', 1)[1]
    return None


def parse_args(argv):
    """argv (without the program name) to a RunConfig"""
    argv = _join_negative_values(list(argv))
    path = _config_path(argv)
    if path is not None and argv and not argv[0].startswith('-'):
        # file values go first so that later command-line flags win
        argv = argv[:1] + read_config_file(path) + argv[1:]

    parser = build_parser()
    args, extras = parser.parse_known_args(argv)
    if extras:
        parser.commands[args.command].error(f"unrecognized arguments: {' '.join(extras)}")
    values = vars(args)
    params = {k: v for k, v in values.items() if k not in META_KEYS}

    threads = args.threads if args.threads is not None else default_workers()
    require(threads >= 1, 'threads', f"must be at least 1, got {threads}")
    fmt = args.format or ('json' if args.command in JSON_DEFAULT else 'csv')
    return RunConfig(command=args.command, params=params, seed=args.seed, out=args.out,
                     fmt=fmt, threads=threads, verbose=args.verbose)


def _landscape(p):
    return Landscape1D(tuple(p['minima']), tuple(p['saddles']))


def _trajectory_records(trajectory):
    records = []
    for t, state in zip(trajectory.times, trajectory.states):
        row = {'t': float(t)}
        row.update({f'w{i + 1}': float(v) for i, v in enumerate(state)})
        records.append(row)
    return records


def run_sample(config):
    p = config.params
    batch = sample(validate_params(p['alpha'], p['sigma']), p['n'], config.seed)
    return Output([{'value': float(v)} for v in batch.values],
                  {'alpha': p['alpha'], 'sigma': p['sigma'], 'values': batch.values})


def run_estimate(config):
    p = config.params
    x = read_values(p['input'])
    if p['k1'] is not None:
        k2 = p['k2'] if p['k2'] is not None else len(x) // p['k1']
        grouping = Grouping(K=p['k1'] * k2, K1=p['k1'], K2=k2, dropped=max(0, len(x) - p['k1'] * k2))
    else:
        grouping = choose_grouping(len(x))
    result = estimate_alpha(x, grouping).to_dict()
    return Output([result], result)


def run_hill(config):
    p = config.params
    x = read_values(p['input'])
    k = p['k'] if p['k'] is not None else len(x) // 10
    result = {'alpha_hill': hill_estimate(x, k), 'k': k, 'n': len(x)}
    return Output([result], result)


def run_calibrate(config):
    p = config.params
    table = calibrate(p['alphas'], K1=p['k1'], K2=p['k2'], reps=p['reps'], seed=config.seed,
                      workers=config.threads)
    records = table.to_records()
    return Output(records, {'rows': records, 'max_mae': table.max_mae,
                            'monotone': table.is_monotone()})


def _default_w0(potential_spec, dim):
    kind, _, args = potential_spec.partition(':')
    if kind == 'double-well':
        return (float(args.split(',')[0]),)
    if kind == 'wells':
        return (float(args.split('/')[0].split(',')[0]),)
    return (0.0,) * dim


def run_simulate(config):
    p = config.params
    potential = potential_from_spec(p['potential'])
    w0 = tuple(p['w0']) if p['w0'] else _default_w0(p['potential'], potential.dim)
    epsilon = p['epsilon']
    if epsilon is None:
        epsilon = epsilon_from_sigma(p['sigma'], p['eta'], p['alpha'])
    trajectory = simulate(SdeConfig(potential, p['alpha'], epsilon, p['eta'], p['steps'], w0,
                                    seed=config.seed, thinning=p['thinning'],
                                    stiff_guard=p['stiff_guard']))
    records = _trajectory_records(trajectory)
    return Output(records, {'potential': potential.describe(), 'epsilon': epsilon,
                            'thinning': trajectory.thinning, 'states': records})


def run_levy_path(config):
    p = config.params
    trajectory = levy_path(p['alpha'], p['dim'], p['horizon'], p['dt'], config.seed,
                           thinning=p['thinning'])
    return Output(_trajectory_records(trajectory))


def run_exit_times(config):
    p = config.params
    landscape = _landscape(p)
    exit_config = ExitConfig(landscape, p['alpha'], p['epsilon'], eta=p['eta'], source=p['source'],
                             max_steps=p['max_steps'], seed=config.seed, mode=p['mode'],
                             stiff_guard=p['stiff_guard'])
    stats = exit_times(exit_config, delta=p['delta'], reps=p['reps'], workers=config.threads)
    records = stats.to_records()

    law = None
    if p['alpha'] < 2.0 and p['mode'] == 'transition':
        try:
            law = exit_law_check(stats, generator(landscape, p['alpha'])).to_dict()
        except InsufficientDataError as e:
            logger.warning("exit-law check skipped: %s", e)
    return Output(records, {'samples': records, 'delta': stats.delta,
                            'mean_time': stats.mean_time(),
                            'censored_fraction': stats.censored_fraction, 'exit_law': law})


def run_occupation(config):
    p = config.params
    landscape = _landscape(p)
    result = occupation(landscape, p['alpha'], p['epsilon'], p['horizon'], config.seed, eta=p['eta'],
                        w0=p['w0'], stiff_guard=p['stiff_guard'])
    pi = stationary(generator(landscape, p['alpha'])).pi
    records = [{'valley': i, 'fraction': float(f), 'count': int(c), 'pi': float(q)}
               for i, (f, c, q) in enumerate(zip(result.fractions, result.counts, pi))]
    return Output(records)


def run_generator(config):
    p = config.params
    gen = generator(_landscape(p), p['alpha'])
    dist = stationary(gen)
    records = [dict({'row': i, 'pi': float(dist.pi[i])},
                    **{f'q{j}': float(q) for j, q in enumerate(gen.Q[i])}) for i in range(len(dist.pi))]
    return Output(records, {'alpha': gen.alpha, 'Q': gen.Q, 'pi': dist.pi,
                            'exit_rates': gen.exit_rates, 'residual': dist.residual})


def run_flat_valley(config):
    p = config.params
    rows = flat_valley_experiment(p['alphas'], p['epsilon'], p['eta'], p['steps'], p['inits'],
                                  config.seed, workers=config.threads,
                                  stiff_guard=p['stiff_guard'])
    return Output([row.to_dict() for row in rows])


def _measure_dataset(p, seed):
    if p['data'] == 'idx':
        require(p['images'] and p['labels'], 'images', "--data idx needs --images and --labels")
        return load_idx(p['images'], p['labels'], limit=p['limit'])
    if p['data'] == 'csv':
        require(p['csv'], 'csv', "--data csv needs --csv")
        return load_csv_dataset(p['csv'], limit=p['limit'])
    return synth_dataset(p['n'], p['d'], p['classes'], p['data'], seed, separation=p['separation'])


def run_measure(config):
    p = config.params
    require(0.0 < p['tail_fraction'] <= 1.0, 'tail_fraction',
            f"must lie in (0, 1], got {p['tail_fraction']}")
    dataset = _measure_dataset(p, config.seed)
    model = model_from_spec(p['model'], dataset.d, dataset.num_classes, loss=p['loss'])
    records = measure_run(model, dataset, p['b'], p['eta'], p['iterations'], p['log_every'],
                          config.seed, workers=config.threads, stop_at_fit=p['stop_at_fit'])
    rows = [r.to_dict() for r in records]
    summary = stationary_alpha(records, p['tail_fraction'])
    return Output(rows, {'model': model.describe(), 'n': dataset.n, 'records': rows,
                         'stationary': summary.to_dict()})


def run_sweep(config):
    p = config.params
    dataset = _measure_dataset(p, config.seed)
    rows = measure_sweep(dataset, p['models'], p['batch_sizes'], p['eta'], p['iterations'],
                         p['log_every'], config.seed, loss=p['loss'], fraction=p['tail_fraction'],
                         stop_at_fit=p['stop_at_fit'], workers=config.threads)
    return Output([row.to_dict() for row in rows])


COMMANDS = {
    'sample': run_sample,
    'estimate': run_estimate,
    'hill': run_hill,
    'calibrate': run_calibrate,
    'simulate': run_simulate,
    'levy-path': run_levy_path,
    'exit-times': run_exit_times,
    'occupation': run_occupation,
    'generator': run_generator,
    'flat-valley': run_flat_valley,
    'measure': run_measure,
    'sweep': run_sweep,
}


def run(config):
    """Dispatch, write the result, report provenance; returns the exit status"""
    started = time.perf_counter()
    status = 0
    try:
        output = COMMANDS[config.command](config)
        report = ReportGenerator(config.command, config.params, config.seed)
        text = report.render(output.for_format(config.fmt), config.fmt)
        if config.out:
            FileManager(os.environ.get(OUTPUT_ENV)).write_atomic(config.out, text)
        else:
            sys.stdout.write(text)
    except LabError as e:
        print(f"error: {e}", file=sys.stderr)
        status = e.exit_code
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        status = UsageError.exit_code
    except Exception:
        logger.exception("unexpected failure in %s", config.command)
        status = 1

    provenance = {
        'command': config.command,
        'parameters': to_plain(config.params),
        'seed': config.seed,
        'version': ARTIFACT_VERSION,
        'wall_time': round(time.perf_counter() - started, 6),
        'exit_code': status,
    }
    print(json.dumps(provenance, sort_keys=True), file=sys.stderr)
    return status


def main(argv=None):
    argv = sys.argv[1:] if argv is None else argv
    try:
        config = parse_args(argv)
    except LabError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code

    logging.basicConfig(level=logging.DEBUG if config.verbose else logging.WARNING,
                        format='%(levelname)s %(name)s: %(message)s', stream=sys.stderr)
    return run(config)


if __name__ == '__main__':
    sys.exit(main())
