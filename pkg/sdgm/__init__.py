# sdgm/__init__.py
"""Sparse discriminative Gaussian mixture classifier."""
__version__ = '0.1.0'

from .config import TrainConfig, load_config  # noqa: E402
from .data import Dataset, load_csv, load_splits, synth_gmm  # noqa: E402
from .errors import SdgmError  # noqa: E402
from .experiments import evaluate, train  # noqa: E402
from .feature_map import expand, expanded_dim, phi_kernel, poly_kernel  # noqa: E402
from .learning import TrainReport, fit  # noqa: E402
from .model import (GaussianComponent, SdgmModel, collapse_gaussian, dual_to_original,  # noqa: E402
                    load_model, posterior, predict, reduce_to_logistic, save_model)

__all__ = [
    '__version__', 'TrainConfig', 'load_config', 'Dataset', 'load_csv', 'load_splits', 'synth_gmm',
    'SdgmError', 'evaluate', 'train', 'expand', 'expanded_dim', 'phi_kernel', 'poly_kernel',
    'TrainReport', 'fit', 'GaussianComponent', 'SdgmModel', 'collapse_gaussian', 'dual_to_original',
    'load_model', 'posterior', 'predict', 'reduce_to_logistic', 'save_model',
]
