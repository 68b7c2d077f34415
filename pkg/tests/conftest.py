# tests/conftest.py
import json
import os
from pathlib import Path

import numpy as np
import pytest

from sdgm.config import TrainConfig
from sdgm.data import Dataset

SCHEMA_DIR = Path(__file__).resolve().parent.parent / 'sdgm' / 'schemas'


def pytest_collection_modifyitems(config, items):
    if os.getenv('SDGM_SLOW') == '1':
        return
    skip = pytest.mark.skip(reason='experiment-scale; set SDGM_SLOW=1')
    for item in items:
        if 'slow' in item.keywords:
            item.add_marker(skip)


def blobs(centres, n_per_class, scale, seed):
    rng = np.random.default_rng(seed)
    X, y = [], []
    for c, mu in enumerate(centres):
        mu = np.atleast_1d(np.asarray(mu, dtype=float))
        X.append(mu + scale * rng.standard_normal((n_per_class, mu.size)))
        y.append(np.full(n_per_class, c))
    return Dataset(np.vstack(X), np.concatenate(y), len(centres))


@pytest.fixture
def separable_1d():
    """Two well separated 1-D classes."""
    return blobs([[-2.0], [2.0]], 20, 0.4, seed=1)


@pytest.fixture
def overlap_2d():
    return blobs([[-1.0, 0.0], [1.0, 0.5]], 30, 0.8, seed=2)


@pytest.fixture
def tiny_2d():
    return blobs([[-1.0, 0.0], [1.0, 0.0]], 6, 0.7, seed=3)


@pytest.fixture
def fast_config():
    return TrainConfig(max_outer_iter=30, kmeans_restarts=3)


@pytest.fixture
def write_rows(tmp_path):
    def _write(name, lines):
        p = tmp_path / name
        p.write_text('\n'.join(lines) + '\n', encoding='utf-8')
        return p
    return _write


@pytest.fixture
def validate():
    jsonschema = pytest.importorskip('jsonschema')

    def _validate(doc, schema_name):
        schema = json.loads((SCHEMA_DIR / f'{schema_name}.schema.json').read_text(encoding='utf-8'))
        jsonschema.validate(doc, schema)
    return _validate
