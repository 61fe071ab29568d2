"""Command-line interface for network-variate subtyping.

This module ties simulation, fitting, model selection, evaluation and
replication together. Every command echoes its fully resolved configuration
and embeds it in the artifacts it writes.

Exit codes: 0 on success, 1 on a validation or usage error, 2 on a numerical
error.
"""

import argparse
import json
import logging
import sys
import time
from functools import partial
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import yaml
from tqdm import tqdm

from .cavi import fit
from .config import ModelConfig
from .errors import NumericalError, SubtyperError, ValidationError
from .metrics import evaluate
from .msfc_io import (
    TENSOR_FILE,
    TRUTH_FILE,
    FitResult,
    check_document,
    import_csv,
    load_fit,
    load_truth,
    read_data,
    read_manifest,
    save_fit,
    save_json_atomic,
    save_truth,
    tensor_info,
    write_msfc,
)
from .parallel import default_threads
from .replicate import DEFAULT_BLOCKS, run_setting
from .selection import DEFAULT_BUDGET, candidate_config, parse_blocks_grid, select
from .simulator import SETTINGS, SimConfig, generate, setting
from .summary import format_summary, summarize

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_NUMERICAL = 2


class UsageError(Exception):
    """Raised instead of exiting when argument parsing fails."""


class CliParser(argparse.ArgumentParser):
    """ArgumentParser that reports usage problems as exit code 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def parse_blocks(text: str) -> List[int]:
    """Parse comma-separated block counts (e.g. "3,3").

    Args:
        text: Comma-separated positive integers

    Returns:
        List of block counts
    """
    try:
        blocks = [int(s) for s in text.split(',') if s.strip()]
    except ValueError:
        raise ValidationError(f"Cannot parse block counts '{text}'")
    if not blocks:
        raise ValidationError("No block counts given")
    return blocks


def load_run_config(path: Optional[str]) -> Dict[str, Any]:
    """Read an optional JSON or YAML run config and check it against its schema."""
    if not path:
        return {}
    config_path = Path(path)
    try:
        text = config_path.read_text(encoding='utf-8')
    except OSError as e:
        raise ValidationError(f"Cannot read config {config_path}: {e.strerror}")

    if config_path.suffix in ('.yaml', '.yml'):
        try:
            document = yaml.safe_load(text) or {}
        except yaml.YAMLError as e:
            raise ValidationError(f"Invalid YAML in {config_path}: {e}")
    else:
        try:
            document = json.loads(text)
        except json.JSONDecodeError as e:
            raise ValidationError(f"Invalid JSON in {config_path}: {e.msg}", location=f"line {e.lineno}")
    check_document(document, 'run-config')
    return document


def model_config_from_args(args, run_config: Dict[str, Any],
                           blocks: Optional[Sequence[int]] = None) -> ModelConfig:
    """Merge the file's model section with command-line overrides."""
    values = dict(run_config.get('model', {}))
    overrides = {
        'blocks_per_state': list(blocks) if blocks is not None else None,
        'truncation': getattr(args, 'truncation', None),
        'n_restarts': getattr(args, 'restarts', None),
        'max_iter': getattr(args, 'max_iter', None),
        'tol': getattr(args, 'tol', None),
        'seed': getattr(args, 'seed', None),
        'noise_mode': getattr(args, 'noise_mode', None),
        'selection_mode': getattr(args, 'selection_mode', None),
        'selection_warmup': getattr(args, 'warmup', None),
    }
    if getattr(args, 'alpha', None) is not None:
        overrides['alpha_mode'] = 'fixed'
        overrides['alpha_value'] = args.alpha
    values.update({key: value for key, value in overrides.items() if value is not None})
    if 'blocks_per_state' not in values:
        raise ValidationError("Block counts are required (--blocks or model.blocks_per_state)")
    return ModelConfig.from_dict(values)


def threads_from_args(args, run_config: Dict[str, Any]) -> int:
    if args.threads is not None:
        return args.threads
    return run_config.get('threads', default_threads())


def echo_config(title: str, document: Dict[str, Any]) -> None:
    print(f"Resolved config ({title}):")
    print(json.dumps(document, indent=2, sort_keys=True))


def progress_bar(args, desc: str):
    return partial(tqdm, desc=desc, unit='fit', disable=args.quiet, file=sys.stderr)


def cmd_simulate(args) -> int:
    """Simulate a tensor and its ground truth."""
    run_config = load_run_config(args.config)
    if args.setting:
        sim = setting(args.setting, **run_config.get('simulation', {}))
    else:
        sim = SimConfig.from_dict(run_config.get('simulation', {}))
    if args.seed is not None:
        sim = SimConfig.from_dict({**sim.to_dict(), 'seed': args.seed})
    echo_config('simulate', {'simulation': sim.to_dict()})

    out_dir = Path(args.out)
    print(f"Simulating N={sim.n_subjects}, M={sim.n_states}, V={sim.n_nodes} (seed {sim.seed})...")
    tensor, truth = generate(sim)
    write_msfc(tensor, out_dir / TENSOR_FILE)
    save_truth(truth, out_dir / TRUTH_FILE, sim)
    print(f"✓ Wrote {out_dir / TENSOR_FILE} and {out_dir / TRUTH_FILE}")
    return EXIT_OK


def cmd_fit(args) -> int:
    """Fit the model with fixed block counts."""
    run_config = load_run_config(args.config)
    blocks = parse_blocks(args.blocks) if args.blocks else None
    tensor = read_data(args.data)
    config = model_config_from_args(args, run_config, blocks).resolved(tensor)
    threads = threads_from_args(args, run_config)
    echo_config('fit', {'model': config.to_dict(), 'threads': threads})

    print(f"Fitting {config.n_restarts} restart(s) on {tensor.n_subjects} subjects...")
    state, diagnostics = fit(tensor, config, threads=threads, check_monotone=args.check_monotone)
    summary = summarize(state, config)
    save_fit(FitResult(state, config, diagnostics, summary, tensor_info(tensor)), args.out)

    status = 'converged' if diagnostics.converged else 'stopped at max_iter'
    print(f"✓ ELBO {diagnostics.final_elbo:.4f} after {diagnostics.n_iter} iterations ({status})")
    print(f"✓ {summary.occupied_clusters} occupied subtype(s); wrote {args.out}")
    return EXIT_OK


def cmd_select(args) -> int:
    """Choose block counts by VBIC over a grid."""
    run_config = load_run_config(args.config)
    tensor = read_data(args.data)
    grid = parse_blocks_grid(args.blocks_grid, tensor.n_states)
    base = model_config_from_args(args, run_config, grid[0])
    threads = threads_from_args(args, run_config)
    budget = args.budget or run_config.get('selection', {}).get('budget', DEFAULT_BUDGET)
    echo_config('select', {
        'model': base.resolved(tensor).to_dict(),
        'grid': [list(b) for b in grid],
        'budget': budget,
        'threads': threads,
    })

    print(f"Evaluating up to {len(grid)} candidate(s)...")
    report = select(tensor, base, grid, budget=budget, threads=threads,
                    progress=progress_bar(args, 'candidates'))
    document = report.to_dict()
    document['config'] = base.resolved(tensor).to_dict()
    save_json_atomic(document, args.out)

    for candidate in report.candidates:
        if candidate.failed:
            print(f"✗ {candidate.blocks}: {candidate.error}")
        else:
            print(f"  {candidate.blocks}: VBIC {candidate.vbic:.4f}")
    print(f"✓ Chosen block counts {report.chosen}; wrote {args.out}")

    if args.fit_out:
        best = report.best()
        config = candidate_config(base, report.chosen).resolved(tensor)
        save_fit(FitResult(best.state, config, best.diagnostics, summarize(best.state, config),
                           tensor_info(tensor)), args.fit_out)
        print(f"✓ Wrote chosen fit to {args.fit_out}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    """Score a fit against simulation ground truth."""
    result = load_fit(args.fit)
    truth = load_truth(args.truth)
    echo_config('evaluate', {'model': result.config.to_dict()})

    report = evaluate(result.summary, truth, runtime=result.diagnostics.wall_time)
    document = report.to_dict()
    document['config'] = result.config.to_dict()
    save_json_atomic(document, args.out)

    print(f"✓ Subtyping ARI {report.subtyping_ari:.4f}; "
          f"modular ARI {', '.join(f'{x:.4f}' for x in report.modular_ari)}")
    print(f"✓ Sensitivity {report.sensitivity:.4f}, specificity {report.specificity:.4f}, "
          f"Y-index {report.youden:.4f}")
    print(f"✓ Wrote {args.out}")
    return EXIT_OK


def cmd_summarize(args) -> int:
    """Print a fit's hard summaries."""
    result = load_fit(args.fit)
    state_names = (result.data or {}).get('state_names')
    print(f"Fit with blocks {list(result.config.blocks_per_state)}, seed {result.config.seed}, "
          f"ELBO {result.diagnostics.final_elbo:.4f}")
    print(format_summary(result.summary, result.config, state_names), end='')
    return EXIT_OK


def cmd_replicate_sim(args) -> int:
    """Replicate a named simulation setting end to end."""
    run_config = load_run_config(args.config)
    blocks = parse_blocks(args.blocks) if args.blocks else None
    if blocks is None and 'blocks_per_state' not in run_config.get('model', {}):
        blocks = list(DEFAULT_BLOCKS)
    config = model_config_from_args(args, run_config, blocks)
    sim_overrides = {key: value for key, value in run_config.get('simulation', {}).items() if key != 'seed'}
    threads = threads_from_args(args, run_config)
    echo_config('replicate-sim', {
        'setting': args.setting,
        'replicates': args.replicates,
        'seed': args.seed,
        'model': config.to_dict(),
        'simulation': setting(args.setting, seed=args.seed, **sim_overrides).to_dict(),
        'threads': threads,
    })

    print(f"Running {args.replicates} replicate(s) of {args.setting}...")
    table = run_setting(args.setting, args.replicates, seed=args.seed, config=config, threads=threads,
                        progress=progress_bar(args, 'replicates'), **sim_overrides)

    out = Path(args.out)
    save_json_atomic(table.to_dict(), out)
    timing = table.timing_dict()
    save_json_atomic(timing, out.with_name(f'{out.stem}.timing.json'))

    print(json.dumps(table.row(), indent=2))
    print(f"  runtime: {timing['mean']:.2f} ({timing['sd']:.2f}) s per fit")
    print(f"✓ Wrote {out}")
    return EXIT_OK


def cmd_import_csv(args) -> int:
    """Convert CSV matrices listed in a manifest to an MSFC container."""
    manifest = read_manifest(args.manifest)
    tensor = import_csv(manifest['paths'], family=args.family, state_names=manifest['state_names'])
    out = Path(args.out)
    target = out / TENSOR_FILE if out.suffix != '.msfc' else out
    write_msfc(tensor, target)
    print(f"✓ Imported N={tensor.n_subjects}, M={tensor.n_states}, V={tensor.n_nodes} to {target}")
    return EXIT_OK


def add_model_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument('--truncation', type=int, help='Truncation level D of the subject mixture. Default: 20')
    parser.add_argument('--restarts', type=int, help='Random restarts per fit. Default: 10')
    parser.add_argument('--max-iter', type=int, help='Maximum CAVI sweeps per restart. Default: 500')
    parser.add_argument('--tol', type=float, help='Relative ELBO change for convergence. Default: 1e-6')
    parser.add_argument('--seed', type=int, help='Base random seed. Default: 0')
    parser.add_argument('--alpha', type=float, help='Fix the DP concentration at this value (default: learned)')
    parser.add_argument('--noise-mode', choices=['learned', 'fixed'],
                        help='Learn the noise component or keep it fixed. Default: learned')
    parser.add_argument('--selection-mode', choices=['conditional', 'mean_field'],
                        help='Variational family of the block-pair selection. Default: conditional')
    parser.add_argument('--warmup', type=int,
                        help='Sweeps per restart before selection is updated. Default: 10')


def build_parser() -> CliParser:
    parser = CliParser(
        prog='connectome_subtyper',
        description='Bayesian subtyping of multi-state connectivity networks',
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  # Simulate the 60-node, high-SNR setting
  python -m tools.connectome_subtyper.cli simulate --setting v60-high --seed 1 --out data/

  # Fit with three blocks per state
  python -m tools.connectome_subtyper.cli fit --data data/ --blocks 3,3 --out fit.json

  # Choose block counts by VBIC
  python -m tools.connectome_subtyper.cli select --data data/ --blocks-grid 2:4 --out report.json

  # Score the fit and print its summary
  python -m tools.connectome_subtyper.cli evaluate --fit fit.json --truth data/truth.json --out metrics.json
  python -m tools.connectome_subtyper.cli summarize --fit fit.json

  # Replicate a simulation setting
  python -m tools.connectome_subtyper.cli replicate-sim --setting v60-high --replicates 100 --out table.json
        """
    )
    parser.add_argument('--log-level', default='WARNING',
                        choices=['DEBUG', 'INFO', 'WARNING', 'ERROR'],
                        help='Logging level. Default: WARNING')
    parser.add_argument('--quiet', action='store_true', help='Hide progress bars')

    subparsers = parser.add_subparsers(dest='command', help='Command to execute')
    subparsers.required = True

    # simulate command
    simulate_parser = subparsers.add_parser('simulate', help='Simulate a tensor with known subtypes')
    simulate_parser.add_argument('--config', help='JSON or YAML run config (simulation section)')
    simulate_parser.add_argument('--setting', choices=sorted(SETTINGS), help='Named simulation setting')
    simulate_parser.add_argument('--seed', type=int, help='Random seed')
    simulate_parser.add_argument('--out', required=True, help='Output data directory')
    simulate_parser.set_defaults(func=cmd_simulate)

    # fit command
    fit_parser = subparsers.add_parser('fit', help='Fit the model with fixed block counts')
    fit_parser.add_argument('--data', required=True, help='Data directory or .msfc file')
    fit_parser.add_argument('--blocks', help='Comma-separated block counts per state, e.g. 3,3')
    fit_parser.add_argument('--out', required=True, help='Output fit document (JSON)')
    fit_parser.add_argument('--config', help='JSON or YAML run config (model section)')
    fit_parser.add_argument('--threads', type=int, help='Worker processes for restarts')
    fit_parser.add_argument('--check-monotone', action='store_true',
                            help='Check the ELBO after every single update')
    add_model_arguments(fit_parser)
    fit_parser.set_defaults(func=cmd_fit)

    # select command
    select_parser = subparsers.add_parser('select', help='Choose block counts by VBIC')
    select_parser.add_argument('--data', required=True, help='Data directory or .msfc file')
    select_parser.add_argument('--blocks-grid', required=True,
                               help='Block counts to try: "2:4" for every state, or "2:4;3,5" per state')
    select_parser.add_argument('--budget', type=int, help=f'Largest exhaustive grid. Default: {DEFAULT_BUDGET}')
    select_parser.add_argument('--out', required=True, help='Output selection report (JSON)')
    select_parser.add_argument('--fit-out', help='Also write the chosen fit document here')
    select_parser.add_argument('--config', help='JSON or YAML run config')
    select_parser.add_argument('--threads', type=int, help='Worker processes across candidates')
    add_model_arguments(select_parser)
    select_parser.set_defaults(func=cmd_select)

    # evaluate command
    evaluate_parser = subparsers.add_parser('evaluate', help='Score a fit against ground truth')
    evaluate_parser.add_argument('--fit', required=True, help='Fit document')
    evaluate_parser.add_argument('--truth', required=True, help='Ground truth document (truth.json)')
    evaluate_parser.add_argument('--out', required=True, help='Output metrics document (JSON)')
    evaluate_parser.set_defaults(func=cmd_evaluate)

    # summarize command
    summarize_parser = subparsers.add_parser('summarize', help='Print subtypes, blocks and selected pairs')
    summarize_parser.add_argument('--fit', required=True, help='Fit document')
    summarize_parser.set_defaults(func=cmd_summarize)

    # replicate-sim command
    replicate_parser = subparsers.add_parser('replicate-sim', help='Replicate a simulation setting end to end')
    replicate_parser.add_argument('--setting', required=True, choices=sorted(SETTINGS), help='Named setting')
    replicate_parser.add_argument('--replicates', type=int, default=100, help='Number of replicates. Default: 100')
    replicate_parser.add_argument('--blocks', help='Block counts per state. Default: 3,3')
    replicate_parser.add_argument('--out', required=True,
                                  help='Output table (JSON); runtimes go to <stem>.timing.json next to it')
    replicate_parser.add_argument('--config', help='JSON or YAML run config')
    replicate_parser.add_argument('--threads', type=int, help='Worker processes across replicates')
    add_model_arguments(replicate_parser)
    replicate_parser.set_defaults(func=cmd_replicate_sim, seed=0)

    # import-csv command
    import_parser = subparsers.add_parser('import-csv', help='Convert CSV matrices to an MSFC container')
    import_parser.add_argument('--manifest', required=True, help='CSV with columns subject,state,path')
    import_parser.add_argument('--family', choices=['continuous', 'binary'], default='continuous',
                               help='Edge family. Default: continuous')
    import_parser.add_argument('--out', required=True, help='Output data directory or .msfc file')
    import_parser.set_defaults(func=cmd_import_csv)

    return parser


def run(argv: Optional[Sequence[str]] = None) -> int:
    """Parse ``argv``, run the command and return its exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        print(e, file=sys.stderr)
        return EXIT_INVALID
    except SystemExit as e:
        # --help
        return int(e.code or 0)

    logging.basicConfig(level=getattr(logging, args.log_level),
                        format='%(asctime)s %(levelname)s %(name)s: %(message)s')
    start = time.perf_counter()
    try:
        code = args.func(args)
    except ValidationError as e:
        print(f"✗ Validation error: {e}", file=sys.stderr)
        return EXIT_INVALID
    except NumericalError as e:
        print(f"✗ Numerical error: {e}", file=sys.stderr)
        return EXIT_NUMERICAL
    except SubtyperError as e:
        print(f"✗ Error: {e}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as e:
        print(f"✗ I/O error: {e}", file=sys.stderr)
        return EXIT_INVALID
    logger.info("%s finished in %.2fs", args.command, time.perf_counter() - start)
    return code


def main():
    """Main CLI entry point."""
    sys.exit(run())


if __name__ == '__main__':
    main()
