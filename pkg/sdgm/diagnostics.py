# sdgm/diagnostics.py
"""Finite-difference checks of the penalized gradient and Hessian."""
import logging
from dataclasses import dataclass
from typing import Any, Callable, Dict

import numpy as np

from .config import TrainConfig
from .data import Dataset
from .errors import DatasetError
from .learning import (TrainState, init, penalized_gradient, penalized_hessian,
                       penalized_objective)

logger = logging.getLogger(__name__)

GRADIENT_TOL = 1e-5
HESSIAN_TOL = 1e-4
MAX_SAMPLES = 200


@dataclass(frozen=True)
class GradCheck:
    gradient_error: float
    hessian_error: float
    n_states: int

    @property
    def passed(self) -> bool:
        return self.gradient_error < GRADIENT_TOL and self.hessian_error < HESSIAN_TOL

    def to_dict(self) -> Dict[str, Any]:
        return {'format': 'sdgm-gradcheck', 'max_relative_gradient_error': self.gradient_error,
                'max_relative_hessian_error': self.hessian_error, 'n_states': self.n_states,
                'gradient_tolerance': GRADIENT_TOL, 'hessian_tolerance': HESSIAN_TOL,
                'passed': self.passed}


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    abserr = float(np.linalg.norm(analytic - numeric))
    scale = float(np.linalg.norm(numeric))
    if abserr == 0.0 and scale == 0.0:
        return 0.0
    return abserr / max(scale, np.finfo(float).tiny)


def central_difference(f: Callable[[np.ndarray], Any], x0: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    """Column j holds (f(x0 + eps e_j) - f(x0 - eps e_j)) / (2 eps); f may return a scalar or a vector."""
    cols = []
    for j in range(x0.size):
        x = x0.copy()
        x[j] = x0[j] + eps
        fplus = np.asarray(f(x), dtype=float)
        x[j] = x0[j] - eps
        fminus = np.asarray(f(x), dtype=float)
        cols.append((fplus - fminus) / (2.0 * eps))
    return np.array(cols).T


def random_state(dataset: Dataset, config: TrainConfig, rng: np.random.Generator) -> TrainState:
    """Valid state with random w, alpha, pi and per-class normalized r."""
    state = init(dataset, config)
    K, L = state.weights.shape
    scale = 0.5 / np.sqrt(L) if config.form == 'dual' else 0.3
    state.weights = rng.normal(0.0, scale, size=(K, L))
    state.alpha = rng.uniform(0.5, 2.0, size=(K, L))
    pi = rng.uniform(0.2, 1.0, size=K)
    state.pi = pi / pi.sum()
    r = rng.uniform(0.05, 1.0, size=state.r.shape) * (dataset.T[:, state.component_class] > 0)
    state.r = r / r.sum(axis=1, keepdims=True)
    return state


def gradcheck(dataset: Dataset, config: TrainConfig, n_states: int = 20, seed: int = 0,
              eps: float = 1e-5, flip_sign: bool = False) -> GradCheck:
    """Worst relative gradient and Hessian error over `n_states` random states.

    `flip_sign` negates the analytic gradient; it exists so callers can verify
    the check actually fails on a broken derivative.
    """
    if dataset.N > MAX_SAMPLES:
        raise DatasetError(f'gradcheck needs N <= {MAX_SAMPLES}, got N={dataset.N}')
    rng = np.random.default_rng(seed)
    worst_g = worst_h = 0.0
    for i in range(n_states):
        state = random_state(dataset, config, rng)
        w0 = state.flat_weights()

        def objective(w):
            state.set_flat_weights(w)
            return penalized_objective(state, dataset)

        def gradient(w):
            state.set_flat_weights(w)
            g = penalized_gradient(state, dataset)
            return -g if flip_sign else g

        num_g = central_difference(objective, w0, eps)
        num_h = central_difference(gradient, w0, eps)
        state.set_flat_weights(w0)
        g = gradient(w0)
        state.set_flat_weights(w0)
        H = penalized_hessian(state, dataset)

        eg, eh = relative_error(g, num_g), relative_error(H, num_h)
        logger.debug('state %d: gradient error %.3g, Hessian error %.3g', i, eg, eh)
        worst_g, worst_h = max(worst_g, eg), max(worst_h, eh)
    return GradCheck(worst_g, worst_h, n_states)
