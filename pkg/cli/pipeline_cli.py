#!/usr/bin/env python
"""
Measuring CLI - subcommands for the individual pipeline stages and the full run.

Subcommands:
  generate    write the data set (Gaussian family or an input CSV)
  transport   build the neighbor graph and solve the transport plans
  tangents    build the tangent bundles
  id          estimate local and global intrinsic dimension
  coords      fit intrinsic coordinates and embed the data
  pipeline    run every stage (or the tail starting at --from-stage)
  plot-data   write plain-text plot columns for dataset, spectrum or embedding
"""
import argparse
import logging

import numpy as np
from pydantic import ValidationError

from api.pipeline import emit_plot_data, report_from_directory, run_pipeline
from cli.console import (configure_logging, print_error, print_info, print_success, print_title,
                         print_warning)
from config.settings import DEFAULT_CONFIG_FILE, resolve_settings
from models.constants import (Aggregation, AlphaMode, ExitCode, Layout, Metric, ModelInit, PlanOrientation,
                              PlotKind, Stage, TangentMethod)
from models.errors import MeasuringError, StageFailure, is_numerical_error
from models.pipeline import PipelineConfig

logger = logging.getLogger(__name__)

STAGE_COMMANDS = {
    "generate": Stage.GENERATE,
    "transport": Stage.TRANSPORT,
    "tangents": Stage.TANGENTS,
    "id": Stage.ID,
    "coords": Stage.COORDS,
}

# argparse dest -> PipelineConfig key, where they differ
FLAG_TO_KEY = {
    "out": "out_dir",
    "dataset": "dataset_path",
    "grid": "grid_path",
    "aggregate": "aggregation",
}


def _global_flags():
    parser = argparse.ArgumentParser(add_help=False)
    parser.add_argument('--config', help=f'Flat JSON config file (default: {DEFAULT_CONFIG_FILE.name})')
    parser.add_argument('--out', help='Output directory for all artifacts')
    parser.add_argument('--seed', type=int, help='Run seed; every stage derives its own stream from it')
    parser.add_argument('--from-stage', choices=[s.value for s in Stage.ordered()],
                        help='First stage to execute; earlier artifacts are read from --out')
    parser.add_argument('--workers', type=int, help='Worker threads for transport, tangents and ID')
    parser.add_argument('--progress', action='store_true', help='Show progress bars')
    parser.add_argument('--log-level', default='INFO', help='Logging level (default: INFO)')
    return parser


def _dataset_flags():
    parser = argparse.ArgumentParser(add_help=False)
    group = parser.add_argument_group('dataset')
    group.add_argument('--dataset', help='Data CSV, one sample per row')
    group.add_argument('--layout', choices=[l.value for l in Layout], help='CSV layout of --dataset')
    group.add_argument('--grid', help='Grid CSV for the separate-grid layout')
    group.add_argument('--means', type=float, nargs='+', help='Gaussian means')
    group.add_argument('--sigmas', type=float, nargs='+', help='Gaussian standard deviations')
    group.add_argument('--grid-start', type=float)
    group.add_argument('--grid-stop', type=float)
    group.add_argument('--grid-step', type=float)
    group.add_argument('--clamp-tolerance', type=float, help='Largest clamped negative-mass fraction')
    return parser


def _transport_flags():
    parser = argparse.ArgumentParser(add_help=False)
    group = parser.add_argument_group('transport and tangents')
    group.add_argument('--k', type=int, help='Neighbors per point')
    group.add_argument('--metric', choices=[m.value for m in Metric], help='Neighbor-graph distance')
    group.add_argument('--plan-orientation', choices=[o.value for o in PlanOrientation])
    group.add_argument('--tangent-method', choices=[t.value for t in TangentMethod])
    group.add_argument('--ot-tolerance', type=float, help='Push-forward residual tolerance')
    return parser


def _id_flags():
    parser = argparse.ArgumentParser(add_help=False)
    group = parser.add_argument_group('intrinsic dimension')
    group.add_argument('--rel-tol', type=float, help='Relative singular-value threshold')
    group.add_argument('--aggregate', choices=[a.value for a in Aggregation], help='Local-to-global rule')
    return parser


def _coords_flags():
    parser = argparse.ArgumentParser(add_help=False)
    group = parser.add_argument_group('coordinates')
    group.add_argument('--m', type=int, help='Number of coordinates (default: the estimated global ID)')
    group.add_argument('--steps', type=int)
    group.add_argument('--step-size', type=float)
    group.add_argument('--barrier-beta', type=float)
    group.add_argument('--barrier-eps', type=float)
    group.add_argument('--barrier-decay', type=float)
    group.add_argument('--width', type=int, help='Hidden width; 0 fits a linear map')
    group.add_argument('--activation', choices=['tanh', 'sigmoid', 'softplus'])
    group.add_argument('--alpha-mode', choices=[a.value for a in AlphaMode])
    group.add_argument('--init', choices=[i.value for i in ModelInit],
                       help='Starting model: chart (one unit per anchor tangent direction) or uniform')
    return parser


def build_parser():
    parser = argparse.ArgumentParser(
        prog='main.py',
        description='Intrinsic dimension and intrinsic coordinates of density-valued data',
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  python main.py pipeline --out output/toy --seed 0
  python main.py id --out output/toy --rel-tol 0.1
  python main.py pipeline --out output/toy --from-stage coords --steps 2000
  python main.py plot-data --out output/toy --what embedding
        """,
    )
    subparsers = parser.add_subparsers(dest='command', required=True)
    common = _global_flags()
    dataset, transport, id_, coords = _dataset_flags(), _transport_flags(), _id_flags(), _coords_flags()

    subparsers.add_parser('generate', parents=[common, dataset], help='Write the data set')
    subparsers.add_parser('transport', parents=[common, transport], help='Neighbor graph and transport plans')
    subparsers.add_parser('tangents', parents=[common, transport], help='Tangent bundles')
    subparsers.add_parser('id', parents=[common, id_], help='Intrinsic dimension')
    subparsers.add_parser('coords', parents=[common, coords], help='Intrinsic coordinates and embedding')
    subparsers.add_parser('pipeline', parents=[common, dataset, transport, id_, coords], help='Full pipeline')

    plot = subparsers.add_parser('plot-data', parents=[common], help='Plain-text plot columns')
    plot.add_argument('--what', choices=[p.value for p in PlotKind] + ['all'], default='all',
                      help='Which plot data to write (default: all available)')
    return parser


def config_from_args(args):
    """Merge config file, environment and command-line flags into a PipelineConfig."""
    overrides = {}
    for dest, value in vars(args).items():
        key = FLAG_TO_KEY.get(dest, dest)
        if key in PipelineConfig.model_fields:
            overrides[key] = value
    return PipelineConfig(**resolve_settings(args.config, overrides))


def _stage_range(args):
    if args.command == 'pipeline':
        first = Stage(args.from_stage) if args.from_stage else Stage.GENERATE
        return first, Stage.COORDS
    stage = STAGE_COMMANDS[args.command]
    first = Stage(args.from_stage) if args.from_stage else stage
    return first, stage


def run_stages(args):
    config = config_from_args(args)
    first, last = _stage_range(args)
    print_title(f"Stages {first.value} -> {last.value}")
    print_info(f"Output directory: {config.out_dir}")

    report = run_pipeline(config, from_stage=first, to_stage=last, progress=args.progress)

    if report.id_estimate is not None:
        print_info(f"Global intrinsic dimension: {report.id_estimate.global_id} "
                   f"({report.id_estimate.aggregation.value})")
    if report.fit is not None:
        print_info(f"Coordinates M={report.m_used}: residual {report.fit.final_residual:.3e}, "
                   f"min Jacobian singular value {report.fit.min_jacobian_sv:.3e}")
        if not report.fit.improved:
            print_warning("The optimizer did not improve on its initial loss")
    for stage, seconds in report.timings.items():
        print(f"  {stage:<10} {seconds:8.2f}s")
    print_success("Done.")
    return ExitCode.SUCCESS


def plot_data(args):
    out_dir = args.out or config_from_args(args).out_dir
    report = report_from_directory(out_dir)
    kinds = list(PlotKind) if args.what == 'all' else [PlotKind(args.what)]
    written = []
    for kind in kinds:
        if args.what == 'all' and kind.value not in report.artifacts:
            print_warning(f"Skipping {kind.value}: no artifact yet")
            continue
        written.append(emit_plot_data(report, kind))
    for path in written:
        print_success(f"Wrote {path}")
    return ExitCode.SUCCESS


def exit_code_for(error):
    """Exit code of an error: 2 for numerical breakdown, 1 for everything else."""
    if isinstance(error, StageFailure):
        return ExitCode.NUMERICAL if error.is_numerical else ExitCode.VALIDATION
    return ExitCode.NUMERICAL if is_numerical_error(error) else ExitCode.VALIDATION


def main(argv=None):
    """Parse arguments, run the command and return the process exit code."""
    parser = build_parser()
    args = parser.parse_args(argv)
    configure_logging(args.log_level)

    try:
        if args.command == 'plot-data':
            return plot_data(args)
        return run_stages(args)
    except MeasuringError as e:
        print_error(str(e))
        logger.error(f"{args.command} failed: {str(e)}")
        return exit_code_for(e)
    except np.linalg.LinAlgError as e:
        print_error(f"Numerical failure: {str(e)}")
        logger.error(f"{args.command} failed: {str(e)}")
        return exit_code_for(e)
    except ValidationError as e:
        print_error(f"Invalid configuration:\n{e}")
        logger.error(f"Invalid configuration: {str(e)}")
        return ExitCode.VALIDATION
    except (FileNotFoundError, ValueError) as e:
        print_error(f"Configuration error: {str(e)}")
        logger.error(f"Configuration error: {str(e)}")
        return ExitCode.VALIDATION
