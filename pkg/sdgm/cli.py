# sdgm/cli.py
"""Command-line front end.

Every command writes its JSON results plus a `manifest.json` into `--out`;
`replay <manifest>` re-runs the recorded argv and reproduces the same bytes.
"""
import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

from . import __version__
from .boundary import compute_grid, parse_bounds, render_svg, write_grid_csv
from .config import TrainConfig, load_config, log_level, parse_components, parse_int_list, worker_count
from .data import (Dataset, Standardizer, fingerprint, load_csv, load_gmm_spec, save_csv,
                   standardize_apply, standardize_fit, synth_gmm)
from .diagnostics import gradcheck
from .errors import DatasetError, UsageError, explain_error
from .experiments import benchmark, evaluate, sparsity_sweep, train
from .model import load_model, save_model

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_NOT_CONVERGED = 2
EXIT_CHECK_FAILED = 3

MANIFEST = 'manifest.json'

SWEEP_COMPONENTS = '8,12,16,20'
SWEEP_SEEDS = '1,2,3,4,5'

# options whose value may start with '-' (negative numbers in a comma list)
_DASH_VALUE_OPTIONS = ('--bounds',)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f'{self.prog}: {message}')


# ---------- helpers ----------
def write_json(path: Path, doc: Dict[str, Any]) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + '\n', encoding='utf-8')


def resolve_config(args: argparse.Namespace) -> TrainConfig:
    """defaults < --config file < flags."""
    cfg = load_config(args.config)
    components = args.components if args.command != 'sweep' else None
    return cfg.with_overrides(
        seed=args.seed,
        form=args.form,
        kernel=args.kernel,
        components=parse_components(components) if components else None,
    )


def describe_dataset(role: str, path: str, dataset: Dataset) -> Dict[str, Any]:
    return {'role': role, 'path': str(path), 'n': dataset.N, 'd': dataset.D, 'sha256': fingerprint(path)}


def write_manifest(out: Path, args: argparse.Namespace, argv: Sequence[str], cfg: TrainConfig,
                   datasets: List[Dict[str, Any]]) -> None:
    write_json(out / MANIFEST, {
        'format': 'sdgm-manifest',
        'command': args.command,
        'argv': list(argv),
        'config': cfg.to_dict(),
        'datasets': datasets,
        'seed': cfg.seed,
        'version': __version__,
    })


def stored_standardizer(doc: Dict[str, Any]) -> Optional[Standardizer]:
    raw = (doc.get('preprocessing') or {}).get('standardizer')
    return Standardizer.from_dict(raw) if raw else None


def _out_dir(args: argparse.Namespace) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _require(args: argparse.Namespace, *names: str) -> None:
    missing = [f'--{n.replace("_", "-")}' for n in names if getattr(args, n, None) is None]
    if missing:
        raise UsageError(f'{args.command}: missing {", ".join(missing)}')


# ---------- commands ----------
def cmd_train(args, argv, cfg: TrainConfig) -> int:
    _require(args, 'data')
    if args.snapshot_every < 0:
        raise UsageError(f'--snapshot-every must be >= 0, got {args.snapshot_every}')
    dataset = load_csv(args.data, args.label_column)
    model, report, std = train(dataset, cfg, keep_models=args.snapshot_every > 0)
    out = _out_dir(args)
    extra = {'preprocessing': {'standardizer': std.to_dict() if std is not None else None}}
    save_model(out / 'model.json', model, extra=extra)
    if report.models:
        snap_dir = out / 'snapshots'
        snap_dir.mkdir(exist_ok=True)
        last = len(report.models)
        for i, snap_model in enumerate(report.models, start=1):
            if i % args.snapshot_every == 0 or i == last:
                save_model(snap_dir / f'model_{i:03d}.json', snap_model, extra=extra)
    write_json(out / 'train_report.json', report.to_dict())
    write_manifest(out, args, argv, cfg, [describe_dataset('train', args.data, dataset)])
    final = report.final
    print(f'trained {model.form} model: train error {100 * final.train_error:.2f}%, '
          f'{final.nonzero_weights}/{report.initial_weights} weights nonzero, components {list(final.components)}')
    if not report.converged:
        logger.warning('training stopped before alpha converged; model written anyway')
        return EXIT_NOT_CONVERGED
    return EXIT_OK


def cmd_eval(args, argv, cfg: TrainConfig) -> int:
    _require(args, 'model', 'data')
    model, doc = load_model(args.model)
    dataset = load_csv(args.data, args.label_column, classes=model.class_labels)
    ev = evaluate(model, dataset, stored_standardizer(doc))
    out = _out_dir(args)
    write_json(out / 'metrics.json', {'format': 'sdgm-metrics', **ev.to_dict()})
    write_manifest(out, args, argv, cfg, [describe_dataset('test', args.data, dataset)])
    print(f'error rate {ev.error_rate:.2f}% on {ev.n_samples} samples, '
          f'{ev.nonzero_weights} nonzero weights, components {list(ev.components)}')
    return EXIT_OK


def cmd_benchmark(args, argv, cfg: TrainConfig) -> int:
    _require(args, 'splits_dir')
    doc = benchmark(args.splits_dir, cfg, args.n_splits, worker_count(), args.name)
    out = _out_dir(args)
    write_json(out / 'benchmark.json', doc)
    write_manifest(out, args, argv, cfg, [])
    if doc['n_succeeded'] == 0:
        raise DatasetError(f'no split succeeded in {args.splits_dir} ({doc["n_failed"]} failed)')
    print(f'{doc["name"]}: {doc["n_succeeded"]}/{doc["n_splits"]} splits, '
          f'error {doc["mean_error_rate"]:.2f} +- {doc["std_error_rate"]:.2f}%, '
          f'nonzero weights {doc["mean_nonzero_weights"]:.1f} +- {doc["std_nonzero_weights"]:.1f}')
    return EXIT_OK


def _default_bounds(std: Optional[Standardizer]):
    if std is None or std.mean.size != 2:
        return (-3.0, 3.0, -3.0, 3.0)
    lo, hi = std.mean - 3 * std.std, std.mean + 3 * std.std
    return (float(lo[0]), float(hi[0]), float(lo[1]), float(hi[1]))


def cmd_boundary(args, argv, cfg: TrainConfig) -> int:
    _require(args, 'model')
    model, doc = load_model(args.model)
    std = stored_standardizer(doc)
    bounds = parse_bounds(args.bounds) if args.bounds else _default_bounds(std)
    grid = compute_grid(model, bounds, args.grid, std)
    out = _out_dir(args)
    write_grid_csv(grid, out / 'boundary.csv', model.class_labels)
    if args.svg:
        render_svg(grid, model, out / 'boundary.svg', std)
    write_manifest(out, args, argv, cfg, [])
    print(f'{args.grid}x{args.grid} grid written to {out / "boundary.csv"}')
    return EXIT_OK


def cmd_synth(args, argv, cfg: TrainConfig) -> int:
    spec = load_gmm_spec(args.spec)
    sizes = parse_int_list(args.sizes)
    if len(sizes) != 2:
        raise UsageError(f'--sizes needs n_train,n_test, got {args.sizes!r}')
    train_set, test_set = synth_gmm(spec, sizes[0], sizes[1], cfg.seed)
    out = _out_dir(args)
    # benchmark split naming, so `benchmark --splits-dir` reads these directly
    train_path = out / f'synth_train_{cfg.seed}.csv'
    test_path = out / f'synth_test_{cfg.seed}.csv'
    save_csv(train_set, train_path)
    save_csv(test_set, test_path)
    write_manifest(out, args, argv, cfg, [describe_dataset('train', str(train_path), train_set),
                                          describe_dataset('test', str(test_path), test_set)])
    print(f'wrote {train_path} ({train_set.N}) and {test_path} ({test_set.N}), spec {spec.version}')
    return EXIT_OK


def cmd_gradcheck(args, argv, cfg: TrainConfig) -> int:
    _require(args, 'data')
    dataset = load_csv(args.data, args.label_column)
    checked = standardize_apply(standardize_fit(dataset), dataset) if cfg.standardize else dataset
    result = gradcheck(checked, cfg, n_states=args.n_states, seed=cfg.seed, flip_sign=args.inject_sign_flip)
    out = _out_dir(args)
    write_json(out / 'gradcheck.json', result.to_dict())
    write_manifest(out, args, argv, cfg, [describe_dataset('train', args.data, dataset)])
    print(f'gradient error {result.gradient_error:.3g}, Hessian error {result.hessian_error:.3g}: '
          f'{"ok" if result.passed else "FAILED"}')
    return EXIT_OK if result.passed else EXIT_CHECK_FAILED


def cmd_sweep(args, argv, cfg: TrainConfig) -> int:
    spec = load_gmm_spec(args.spec)
    sizes = parse_int_list(args.sizes)
    if len(sizes) != 2:
        raise UsageError(f'--sizes needs n_train,n_test, got {args.sizes!r}')
    components = parse_int_list(args.components or SWEEP_COMPONENTS)
    seeds = parse_int_list(args.seeds)
    doc = sparsity_sweep(spec, components, seeds, cfg, sizes[0], sizes[1])
    out = _out_dir(args)
    write_json(out / 'sweep.json', doc)
    write_manifest(out, args, argv, cfg, [])
    for row in doc['summary']:
        print(f'M_c={row["initial_components"]}: test error {row["mean_test_error"]:.2f}%, '
              f'components {row["mean_total_components"]:.1f}, '
              f'weight reduction {100 * row["mean_weight_reduction_ratio"]:.1f}%')
    return EXIT_OK


def cmd_replay(args, argv, cfg: TrainConfig) -> int:
    path = Path(args.manifest)
    try:
        doc = json.loads(path.read_text(encoding='utf-8'))
    except json.JSONDecodeError as e:
        raise UsageError(f'{path}: invalid JSON ({e.msg} at line {e.lineno})') from e
    if doc.get('format') != 'sdgm-manifest' or not isinstance(doc.get('argv'), list):
        raise UsageError(f'{path}: not an sdgm run manifest')
    if doc.get('version') != __version__:
        logger.warning('manifest written by sdgm %s, replaying with %s', doc.get('version'), __version__)
    recorded = [str(a) for a in doc['argv']]
    if recorded and recorded[0] == 'replay':
        raise UsageError(f'{path}: manifest records a replay')
    logger.info('replaying: %s', ' '.join(recorded))
    return main(recorded)


COMMANDS = {
    'train': cmd_train,
    'eval': cmd_eval,
    'benchmark': cmd_benchmark,
    'boundary': cmd_boundary,
    'synth': cmd_synth,
    'gradcheck': cmd_gradcheck,
    'sweep': cmd_sweep,
    'replay': cmd_replay,
}


# ---------- parser ----------
def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument('--config', help='flat JSON file of TrainConfig fields')
    common.add_argument('--out', default='.', help='output directory (default: current)')
    common.add_argument('--seed', type=int, help='overrides config seed')
    common.add_argument('--form', choices=('original', 'dual'))
    common.add_argument('--kernel', choices=('phi', 'poly'))
    common.add_argument('--components', help='M_c for every class, or a per-class list "2,3"')
    common.add_argument('--label-column', default='last', help="'first', 'last' or a 0-based index")
    common.add_argument('--dump-config', action='store_true', help='print the resolved config and exit')
    common.add_argument('-v', '--verbose', action='store_true')
    common.add_argument('-q', '--quiet', action='store_true')

    parser = _Parser(prog='sdgm', description='Sparse discriminative Gaussian mixture classifier')
    parser.add_argument('--version', action='version', version=f'sdgm {__version__}')
    parser.add_argument('--dump-config', dest='dump_defaults', action='store_true',
                        help='print the default config and exit')
    sub = parser.add_subparsers(dest='command', metavar='COMMAND')

    p = sub.add_parser('train', parents=[common], help='fit a model on a CSV dataset')
    p.add_argument('--data')
    p.add_argument('--snapshot-every', type=int, default=0, metavar='K',
                   help='also write snapshots/model_<i>.json every K outer iterations (0: off)')

    p = sub.add_parser('eval', parents=[common], help='error rate of a saved model on a CSV dataset')
    p.add_argument('--model')
    p.add_argument('--data')

    p = sub.add_parser('benchmark', parents=[common], help='train and evaluate over numbered splits')
    p.add_argument('--splits-dir')
    p.add_argument('--n-splits', type=int)
    p.add_argument('--name', help='benchmark name when the directory holds several')

    p = sub.add_parser('boundary', parents=[common], help='posterior grid (CSV) and optional SVG for a 2-D model')
    p.add_argument('--model')
    p.add_argument('--grid', type=int, default=100, help='cells per axis')
    p.add_argument('--bounds', help='x1min,x1max,x2min,x2max in raw input units')
    p.add_argument('--svg', action='store_true', help='also write boundary.svg')

    p = sub.add_parser('synth', parents=[common], help='sample train/test CSVs from a GMM spec')
    p.add_argument('--spec', help='GMM spec JSON (default: bundled two_rings_v1)')
    p.add_argument('--sizes', default='320,1600', help='n_train,n_test')

    p = sub.add_parser('gradcheck', parents=[common], help='finite-difference check of gradient and Hessian')
    p.add_argument('--data')
    p.add_argument('--n-states', type=int, default=20)
    p.add_argument('--inject-sign-flip', action='store_true', help=argparse.SUPPRESS)

    p = sub.add_parser('sweep', parents=[common], help='sparsity vs initial components on synthetic GMM data')
    p.add_argument('--spec')
    p.add_argument('--sizes', default='320,1600')
    p.add_argument('--seeds', default=SWEEP_SEEDS)

    p = sub.add_parser('replay', help='re-run the command recorded in a manifest')
    p.add_argument('manifest')
    p.add_argument('-v', '--verbose', action='store_true')
    p.add_argument('-q', '--quiet', action='store_true')
    return parser


def setup_logging(args: argparse.Namespace) -> None:
    level = log_level()
    if getattr(args, 'verbose', False):
        level = 'DEBUG'
    elif getattr(args, 'quiet', False):
        level = 'WARNING'
    logging.basicConfig(level=level, stream=sys.stderr,
                        format='%(asctime)s %(levelname)s %(name)s: %(message)s')


def join_dash_values(argv: Sequence[str]) -> List[str]:
    """'--bounds', '-2,2,-1,1' -> '--bounds=-2,2,-1,1' so argparse does not read the value as a flag."""
    out: List[str] = []
    i = 0
    while i < len(argv):
        if argv[i] in _DASH_VALUE_OPTIONS and i + 1 < len(argv):
            out.append(f'{argv[i]}={argv[i + 1]}')
            i += 2
        else:
            out.append(argv[i])
            i += 1
    return out


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = build_parser().parse_args(join_dash_values(argv))
        setup_logging(args)
        if args.command is None:
            if args.dump_defaults:
                print(json.dumps(TrainConfig().to_dict(), indent=2, sort_keys=True))
                return EXIT_OK
            raise UsageError('sdgm: a command is required (see --help)')
        if args.command == 'replay':
            return cmd_replay(args, argv, TrainConfig())
        cfg = resolve_config(args)
        if args.dump_config:
            print(json.dumps(cfg.to_dict(), indent=2, sort_keys=True))
            return EXIT_OK
        return COMMANDS[args.command](args, argv, cfg)
    except SystemExit as e:   # --help / --version
        return int(e.code or 0)
    except Exception as e:
        logger.error(explain_error(e))
        logger.debug('traceback', exc_info=True)
        return EXIT_ERROR
