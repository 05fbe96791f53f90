"""Command-line entry point: ``tidanse {run,sweep,plot-data,validate}``."""
import argparse
import json
import logging
import sys
from dataclasses import replace

from .errors import TidanseError
from .harness import load_descriptor, run_experiment, sweep, write_outputs, write_plot_data


def _parser():
    p = argparse.ArgumentParser(prog='tidanse', description=__doc__)
    sub = p.add_subparsers(dest='command', required=True)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('-v', '--verbose', action='store_true', help='log warnings and progress')

    def experiment_args(sp):
        sp.add_argument('--config', required=True, help='TOML experiment descriptor')
        sp.add_argument('--out', help='output folder (overrides [output] dir)')
        sp.add_argument('--seed', type=int, help='override the master seed')
        sp.add_argument('--runs', type=int, help='override the number of Monte-Carlo runs')
        sp.add_argument('--parallel', type=int, default=1, help='worker processes for the runs')

    experiment_args(sub.add_parser('run', parents=[common], help='execute one descriptor'))
    sp = sub.add_parser('sweep', parents=[common], help='run once per rank J = R')
    experiment_args(sp)
    sp.add_argument('--ranks', help='comma-separated ranks (default: ranks_to_sweep)')
    sp = sub.add_parser('plot-data', parents=[common], help='average traces into figdata_*.csv')
    sp.add_argument('--out', required=True, help='folder holding trace_run*.csv or rank*/ folders')
    sp = sub.add_parser('validate', parents=[common], help='check a descriptor without running it')
    sp.add_argument('--config', required=True)
    return p


def _descriptor(args):
    desc = load_descriptor(args.config)
    if args.seed is not None:
        desc = replace(desc, scenario=replace(desc.scenario, seed=args.seed))
    if args.runs is not None:
        desc = replace(desc, num_runs=args.runs)
    if args.out:
        desc = replace(desc, out_dir=args.out)
    return desc


def _report(payload):
    print(json.dumps(payload))


def main(argv=None):
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR,
                        format='%(levelname)s %(name)s: %(message)s')
    try:
        if args.command == 'validate':
            desc = load_descriptor(args.config)
            _report({'status': 'ok', 'mode': desc.mode, 'sha256': desc.sha256()})
        elif args.command == 'run':
            desc = _descriptor(args)
            traces = run_experiment(desc, args.parallel)
            files = write_outputs(desc.out_dir, desc, traces)
            _report({'status': 'ok', 'files': files})
        elif args.command == 'sweep':
            desc = _descriptor(args)
            ranks = [int(r) for r in args.ranks.split(',')] if args.ranks else None
            if ranks:
                for r in ranks:
                    desc.with_rank(r)   # validates the rank before any work starts
            done = sweep(desc, desc.out_dir, args.parallel, ranks)
            _report({'status': 'ok', 'ranks': sorted(done), 'out': desc.out_dir})
        else:
            _report({'status': 'ok', 'files': write_plot_data(args.out)})
    except (TidanseError, OSError, ValueError) as exc:
        print(json.dumps({'error': type(exc).__name__, 'message': str(exc)}), file=sys.stderr)
        return 2
    return 0


if __name__ == '__main__':
    sys.exit(main())
