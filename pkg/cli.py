"""
Command-line front end.

    python run.py model --from 802.11b --to umts
    python run.py model --matrix --output results/model.csv
    python run.py model --matrix --executor celery
    python run.py oracle --fuzz 1000
    python run.py sim --scenario scenarios/examples/handover.txt
    python run.py sweep --variant both --seeds 0..19 --jobs 4
    python run.py fairness --from 802.16 --to 802.16 --variant freeze

Exit status is 0 when every requested check passes, 1 when a check fails
and 2 on invalid input. One JSON summary line goes to stderr.
"""
import argparse
import json
import logging
import math
import os
import sys
from dataclasses import replace
from typing import Any, Dict, List, Optional, Sequence

import pandas as pd

from freezetfrc import configure_logging, create_app
from freezetfrc.errors import FreezeTfrcError, ModelInputError, OracleMismatchError
from freezetfrc.models import FlowKind, RunConfig, Variant
from freezetfrc.services import analytic_model
from freezetfrc.utils.csvio import write_versioned_csv
from experiment_orchestrator import ExperimentOrchestrator
from scenarios.builder import build_handover_scenario, build_steady_scenario
from scenarios.profiles import MATRIX_ORDER, get_profile, technology_pairs
from simnet.scenario_file import load_scenario

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_INVALID = 2

# Flag name -> ModelInputs field
MODEL_FLAGS = {
    'xd': 'x_d', 'rold': 'r_old', 'rnew': 'r_new', 'td': 't_d', 'q': 'q',
    's': 's', 'pr': 'p_r', 'xmax': 'x_max', 'eps': 'epsilon', 'tmbi': 't_mbi',
}


def parse_seeds(text: str) -> List[int]:
    """``0..19``, ``3`` or ``1,4,7``."""
    try:
        if '..' in text:
            low, high = text.split('..', 1)
            seeds = list(range(int(low), int(high) + 1))
        else:
            seeds = [int(part) for part in text.split(',') if part.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid seed list '{text}'")
    if not seeds:
        raise argparse.ArgumentTypeError("seed list is empty")
    return seeds


def _add_pair_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument('--from', dest='from_tech', help=f"source technology ({', '.join(MATRIX_ORDER)})")
    parser.add_argument('--to', dest='to_tech', help='target technology')


def _add_run_flags(parser: argparse.ArgumentParser, default_variant: str) -> None:
    _add_pair_flags(parser)
    parser.add_argument('--variant', choices=['standard', 'freeze', 'both'], default=default_variant)
    parser.add_argument('--seeds', type=parse_seeds, help='seed list, e.g. 0..19 (default: RUNS_PER_CELL seeds)')
    parser.add_argument('--jobs', type=int, help='parallel workers')
    parser.add_argument('--executor', choices=['local', 'celery'], help='where sweep cells run')
    parser.add_argument('--output', help='output directory')


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog='freezetfrc', description='Freeze-TFRC model and simulation toolkit')
    parser.add_argument('-v', '--verbose', action='count', default=0, help='more logging (repeatable)')
    parser.add_argument('--env', help='configuration name (development, production, testing)')
    sub = parser.add_subparsers(dest='command', required=True)

    model = sub.add_parser('model', help='evaluate the analytic disconnection model')
    for flag, field in MODEL_FLAGS.items():
        model.add_argument(f"--{flag}", type=float, dest=field)
    _add_pair_flags(model)
    model.add_argument('--matrix', action='store_true', help='every technology pair')
    model.add_argument('--no-oracle', action='store_true', help='skip the step-oracle cross-check')
    model.add_argument('--executor', choices=['local', 'celery'], default='local', help='where the matrix is evaluated')
    model.add_argument('--output', help='CSV path (default: stdout)')

    oracle = sub.add_parser('oracle', help='check closed forms against the step oracle')
    oracle.add_argument('--fuzz', type=int, default=1000, help='random cases beyond the fixed grid')
    oracle.add_argument('--seed', type=int, default=0)
    oracle.add_argument('--output', help='CSV path for the per-NFI comparison')

    sim = sub.add_parser('sim', help='run one scenario')
    sim.add_argument('--scenario', help='scenario file')
    sim.add_argument('--tech', help='steady single-flow run on this technology')
    _add_pair_flags(sim)
    sim.add_argument('--variant', choices=['standard', 'freeze'], default='standard')
    sim.add_argument('--remote', action='store_true', help='freeze/unfreeze signalled by the receiver')
    sim.add_argument('--seed', type=int)
    sim.add_argument('--duration', type=float, default=120.0)
    sim.add_argument('--output', help='output directory')

    sweep = sub.add_parser('sweep', help='handover matrix: losses and wasted capacity')
    _add_run_flags(sweep, 'both')

    fairness = sub.add_parser('fairness', help='TFRC/TCP share after a handover')
    _add_run_flags(fairness, 'freeze')
    return parser


def _pairs(args: argparse.Namespace) -> List[tuple]:
    if args.from_tech or args.to_tech:
        sources = [get_profile(args.from_tech).name] if args.from_tech else MATRIX_ORDER
        targets = [get_profile(args.to_tech).name] if args.to_tech else MATRIX_ORDER
        return [(src, dst) for src in sources for dst in targets]
    return technology_pairs()


def _emit(df: pd.DataFrame, output: Optional[str], schema: str) -> Optional[str]:
    if output:
        return write_versioned_csv(df, output, schema=schema)
    sys.stdout.write(f"# schema={schema} version=1\n")
    df.to_csv(sys.stdout, index=False, float_format='%.10g', lineterminator='\n')
    return None


# Commands

def cmd_model(args: argparse.Namespace, settings: Dict[str, Any], run: RunConfig) -> Dict[str, Any]:
    if args.matrix:
        df = ExperimentOrchestrator.run_model_matrix(settings, check_oracle=not args.no_oracle,
                                                     executor=args.executor)
    else:
        overrides = run.overrides
        if args.from_tech or args.to_tech:
            if not (args.from_tech and args.to_tech):
                raise ModelInputError('to' if args.from_tech else 'from', "--from and --to go together")
            inp = analytic_model.handover_inputs(get_profile(args.from_tech), get_profile(args.to_tech),
                                                 s=settings['SEGMENT_SIZE'], t_mbi=settings['T_MBI'])
            if overrides:
                inp = analytic_model.validate_inputs({**_inputs_dict(inp), **overrides})
        else:
            for required in ('x_d', 'r_old', 'r_new'):
                if required not in overrides:
                    raise ModelInputError(required, f"missing (pass --{_flag_for(required)} or --from/--to)")
            inp = analytic_model.validate_inputs(overrides)
        row = ExperimentOrchestrator.run_model(inp, check_oracle=not args.no_oracle)
        if args.from_tech:
            row = {'from': get_profile(args.from_tech).name, 'to': get_profile(args.to_tech).name, **row}
        df = pd.DataFrame([row])
    path = _emit(df, run.output, 'model')
    return {'status': 'pass', 'rows': len(df), 'output': path}


def _inputs_dict(inp) -> Dict[str, Any]:
    return {field: getattr(inp, field) for field in MODEL_FLAGS.values()}


def _flag_for(field: str) -> str:
    return next(flag for flag, name in MODEL_FLAGS.items() if name == field)


def cmd_oracle(args: argparse.Namespace, settings: Dict[str, Any], run: RunConfig) -> Dict[str, Any]:
    df, verdict = ExperimentOrchestrator.run_oracle(fuzz=args.fuzz, seed=run.seeds[0])
    path = write_versioned_csv(df, run.output, schema='oracle') if run.output else None
    if not verdict['passed']:
        logger.error(f"Oracle mismatch: case {verdict['first_case']}, first divergent NFI {verdict['first_nfi']}")
    return {'status': 'pass' if verdict['passed'] else 'fail', 'output': path, **verdict}


def cmd_sim(args: argparse.Namespace, settings: Dict[str, Any], run: RunConfig) -> Dict[str, Any]:
    seed = run.seeds[0]
    if run.inputs:
        scenario = load_scenario(run.inputs[0], settings['QUEUE_CAPACITY'])
        # A scenario file keeps its own seed unless one is given.
        if args.seed is not None:
            scenario = replace(scenario, seed=seed)
        prefix = os.path.splitext(os.path.basename(run.inputs[0]))[0]
    elif args.from_tech and args.to_tech:
        scenario = build_handover_scenario(args.from_tech, args.to_tech, args.variant,
                                           seed, settings, remote=args.remote)
        scenario = replace(scenario, record_packets=True)
        prefix = f"{args.variant}_{get_profile(args.from_tech).name}_{get_profile(args.to_tech).name}_{seed}"
    else:
        tech = args.tech or args.from_tech or '802.11b'
        scenario = build_steady_scenario(tech, args.duration, seed, settings, (FlowKind.TFRC,))
        prefix = f"steady_{get_profile(tech).name}"
    result = ExperimentOrchestrator.run_simulation(scenario, settings, run.output, prefix)
    return {'status': 'pass', **result}


def _run_summary(per_seed: pd.DataFrame, aggregate: pd.DataFrame, output_dir: str, schema: str) -> Dict[str, Any]:
    for variant in aggregate['variant'].unique():
        rows = aggregate[aggregate['variant'] == variant]
        for value in ('n_lost', 'n_wasted', 'fairness'):
            if rows[value].notna().any():
                table = ExperimentOrchestrator.matrix_table(rows, value).reset_index()
                write_versioned_csv(table, os.path.join(output_dir, f"{schema}_{variant}_{value}_matrix.csv"),
                                    schema=f"{schema}_matrix")
    return {'runs': len(per_seed), 'cells': len(aggregate), 'output': output_dir}


def cmd_sweep(args: argparse.Namespace, settings: Dict[str, Any], run: RunConfig) -> Dict[str, Any]:
    per_seed, aggregate = ExperimentOrchestrator.run_sweep(
        _pairs(args), args.variant, run.seeds, settings,
        jobs=args.jobs or settings['SWEEP_JOBS'],
        executor=args.executor or settings['SWEEP_EXECUTOR'],
        output_dir=run.output,
    )
    summary = _run_summary(per_seed, aggregate, run.output, 'sweep')
    frozen = per_seed[per_seed['variant'] == Variant.FREEZE.value]
    lossy = int((frozen['n_lost'] > 0).sum())
    if lossy:
        logger.error(f"{lossy} freeze runs lost packets to the disconnection")
    return {'status': 'fail' if lossy else 'pass', 'freeze_runs_with_losses': lossy, **summary}


def cmd_fairness(args: argparse.Namespace, settings: Dict[str, Any], run: RunConfig) -> Dict[str, Any]:
    per_seed, aggregate = ExperimentOrchestrator.run_fairness(
        _pairs(args), args.variant, run.seeds, settings,
        jobs=args.jobs or settings['SWEEP_JOBS'],
        executor=args.executor or settings['SWEEP_EXECUTOR'],
        output_dir=run.output,
    )
    summary = _run_summary(per_seed, aggregate, run.output, 'fairness')
    aggressive = aggregate[aggregate['fairness'] > 2.0]
    for _, row in aggressive.iterrows():
        logger.error(f"{row['variant']} {row['from']}->{row['to']}: ratio {row['fairness']:.2f} above 2")
    ratios = {f"{r['variant']}:{r['from']}->{r['to']}": round(float(r['fairness']), 3)
              for _, r in aggregate.iterrows() if not math.isnan(r['fairness'])}
    return {'status': 'fail' if len(aggressive) else 'pass', 'ratios': ratios, **summary}


COMMANDS = {
    'model': cmd_model,
    'oracle': cmd_oracle,
    'sim': cmd_sim,
    'sweep': cmd_sweep,
    'fairness': cmd_fairness,
}


def build_run_config(args: argparse.Namespace, settings: Dict[str, Any]) -> RunConfig:
    """Resolve the parsed flags against the settings."""
    if args.command in ('sweep', 'fairness'):
        seeds = args.seeds or list(range(settings['RUNS_PER_CELL']))
        output = args.output or settings['OUTPUT_DIR']
    else:
        seed = getattr(args, 'seed', None)
        seeds = [seed if seed is not None else 0]
        output = getattr(args, 'output', None)
    overrides = {}
    if args.command == 'model':
        overrides = {field: getattr(args, field) for field in MODEL_FLAGS.values() if getattr(args, field) is not None}
    return RunConfig(
        command=args.command,
        output=output,
        inputs=[args.scenario] if getattr(args, 'scenario', None) else [],
        seeds=seeds,
        overrides=overrides,
        verbosity=args.verbose,
    )


def _summary(payload: Dict[str, Any]) -> None:
    sys.stderr.write(json.dumps(payload, sort_keys=True, default=str) + '\n')


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code == 0 else EXIT_INVALID

    try:
        settings = create_app(args.env)
        run_config = build_run_config(args, settings)
        configure_logging(run_config.log_level)
        payload = COMMANDS[run_config.command](args, settings, run_config)
    except OracleMismatchError as e:
        _summary({'command': args.command, 'status': 'fail', 'error': str(e), 'first_nfi': e.index})
        return EXIT_CHECK_FAILED
    except (FreezeTfrcError, KeyError) as e:
        field = getattr(e, 'field', None)
        _summary({'command': args.command, 'status': 'error', 'error': str(e).strip("'"), 'field': field})
        return EXIT_INVALID
    except OSError as e:
        _summary({'command': args.command, 'status': 'error', 'error': str(e)})
        return EXIT_INVALID

    _summary({'command': run_config.command, **payload})
    return EXIT_OK if payload.get('status') == 'pass' else EXIT_CHECK_FAILED
