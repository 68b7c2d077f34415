# sdgm/experiments.py
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .config import TrainConfig
from .data import (Dataset, GmmSpec, Standardizer, load_splits, available_splits,
                   standardize_apply, standardize_fit, synth_gmm)
from .errors import DatasetError, InvalidDimensionError
from .learning import TrainReport, fit
from .model import SdgmModel, predict_batch, sparsity_metrics

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Evaluation:
    error_rate: float          # percent, full precision
    nonzero_weights: int
    components: Tuple[int, ...]
    n_samples: int

    def to_dict(self) -> Dict[str, Any]:
        return {'error_rate': self.error_rate, 'nonzero_weights': self.nonzero_weights,
                'components': list(self.components), 'n_samples': self.n_samples}


def evaluate(model: SdgmModel, dataset: Dataset, standardizer: Optional[Standardizer] = None) -> Evaluation:
    if dataset.D != model.input_dim:
        raise InvalidDimensionError(f'model expects D={model.input_dim}, dataset has D={dataset.D}')
    if standardizer is not None:
        dataset = standardize_apply(standardizer, dataset)
    wrong = predict_batch(model, dataset.X) != dataset.labels
    nonzero, comps = sparsity_metrics(model)
    return Evaluation(100.0 * float(wrong.mean()), nonzero, tuple(comps), dataset.N)


def train(dataset: Dataset, config: TrainConfig,
          keep_models: bool = False) -> Tuple[SdgmModel, TrainReport, Optional[Standardizer]]:
    """fit() with optional z-scoring on the training statistics."""
    standardizer = standardize_fit(dataset) if config.standardize else None
    train_set = standardize_apply(standardizer, dataset) if standardizer is not None else dataset
    model, report = fit(train_set, config, keep_models=keep_models)
    report.standardized = standardizer is not None
    return model, report, standardizer


# ---------- benchmark ----------
def run_split(splits_dir: str, index: int, config: TrainConfig, name: Optional[str] = None) -> Dict[str, Any]:
    try:
        train_set, test_set = load_splits(splits_dir, index, name)
        model, report, std = train(train_set, config)
        ev = evaluate(model, test_set, std)
    except Exception as e:
        logger.warning('split %d failed: %s', index, e)
        return {'split': index, 'ok': False, 'error': str(e)}
    return {
        'split': index,
        'ok': True,
        'error_rate': ev.error_rate,
        'nonzero_weights': ev.nonzero_weights,
        'components': list(ev.components),
        'converged': report.converged,
    }


def aggregate(rows: Sequence[Dict[str, Any]]) -> Dict[str, Any]:
    good = [r for r in rows if r['ok']]
    failed = [{'split': r['split'], 'error': r['error']} for r in rows if not r['ok']]
    doc: Dict[str, Any] = {
        'format': 'sdgm-benchmark',
        'n_splits': len(rows),
        'n_succeeded': len(good),
        'n_failed': len(failed),
        'failures': failed,
        'splits': list(rows),
    }
    if good:
        err = np.array([r['error_rate'] for r in good])
        nz = np.array([r['nonzero_weights'] for r in good], dtype=float)
        doc.update({
            'mean_error_rate': float(err.mean()),
            'std_error_rate': float(err.std()),
            'mean_nonzero_weights': float(nz.mean()),
            'std_nonzero_weights': float(nz.std()),
        })
    return doc


def benchmark(splits_dir: str, config: TrainConfig, n_splits: Optional[int] = None,
              workers: int = 1, name: Optional[str] = None) -> Dict[str, Any]:
    found = available_splits(splits_dir, name)
    if name is None:
        if len(found) > 1:
            raise DatasetError(f'{splits_dir} holds several benchmarks ({", ".join(found)}); pass a name')
        name = next(iter(found), None)
    indices = found.get(name, []) if name is not None else []
    if n_splits is not None:
        indices = indices[:n_splits]
    logger.info('benchmark %s: %d splits, %d workers', name, len(indices), workers)
    if workers > 1 and len(indices) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            # map() yields in submission order, so the reduction order is fixed
            rows = list(pool.map(run_split, [splits_dir] * len(indices), indices,
                                 [config] * len(indices), [name] * len(indices)))
    else:
        rows = [run_split(splits_dir, i, config, name) for i in indices]
    doc = aggregate(rows)
    doc['name'] = name
    return doc


# ---------- synthetic sparsity sweep ----------
def sweep_run(spec: GmmSpec, components: int, seed: int, config: TrainConfig,
              n_train: int = 320, n_test: int = 1600) -> Dict[str, Any]:
    train_set, test_set = synth_gmm(spec, n_train, n_test, seed)
    cfg = config.with_overrides(components=components, seed=seed)
    model, report, std = train(train_set, cfg)
    train_ev = evaluate(model, train_set, std)
    test_ev = evaluate(model, test_set, std)
    return {
        'initial_components': components,
        'seed': seed,
        'train_error': train_ev.error_rate,
        'test_error': test_ev.error_rate,
        'final_components': list(report.final.components),
        'total_components': int(sum(report.final.components)),
        'initial_weights': report.initial_weights,
        'nonzero_weights': test_ev.nonzero_weights,
        'weight_reduction_ratio': 1.0 - test_ev.nonzero_weights / report.initial_weights,
        'converged': report.converged,
    }


def sparsity_sweep(spec: GmmSpec, components: Sequence[int], seeds: Sequence[int], config: TrainConfig,
                   n_train: int = 320, n_test: int = 1600) -> Dict[str, Any]:
    runs: List[Dict[str, Any]] = []
    for m in components:
        for seed in seeds:
            logger.info('sweep: M_c=%d seed=%d', m, seed)
            runs.append(sweep_run(spec, m, seed, config, n_train, n_test))
    summary = []
    for m in components:
        rows = [r for r in runs if r['initial_components'] == m]
        entry: Dict[str, Any] = {'initial_components': m}
        for key in ('train_error', 'test_error', 'total_components', 'nonzero_weights', 'weight_reduction_ratio'):
            vals = np.array([r[key] for r in rows], dtype=float)
            entry[f'mean_{key}'] = float(vals.mean())
            entry[f'std_{key}'] = float(vals.std())
        summary.append(entry)
    return {'format': 'sdgm-sweep', 'spec_version': spec.version, 'n_train': n_train, 'n_test': n_test,
            'form': config.form, 'kernel': config.kernel if config.form == 'dual' else None,
            'runs': runs, 'summary': summary}
