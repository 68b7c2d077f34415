# sdgm/feature_map.py
"""Quadratic basis expansion and the kernels used by the dual form.

Feature order is part of the model file contract (feature order version 1):

    [1, x_1 .. x_D, x_1^2, x_1 x_2, .., x_1 x_D, x_2^2, x_2 x_3, .., x_D^2]

i.e. bias, linear terms, then the upper triangle of x x^T in row-major order.
"""
from functools import lru_cache
from typing import Callable, Dict, Tuple

import numpy as np

from .errors import InvalidDimensionError, InvalidInputError, ShapeError

FEATURE_ORDER_VERSION = 1


def expanded_dim(D: int) -> int:
    if int(D) != D or D < 1:
        raise InvalidDimensionError(f'input dimension must be a positive integer, got {D!r}')
    D = int(D)
    return 1 + D * (D + 3) // 2


@lru_cache(maxsize=64)
def quadratic_index(D: int) -> Tuple[np.ndarray, np.ndarray]:
    """(i, j) index pairs of the quadratic terms, in feature order."""
    rows, cols = np.triu_indices(D)
    rows.setflags(write=False)
    cols.setflags(write=False)
    return rows, cols


def _as_rows(X, name: str = 'x') -> np.ndarray:
    A = np.asarray(X, dtype=float)
    if A.ndim == 1:
        A = A[None, :]
    if A.ndim != 2 or A.shape[1] < 1:
        raise InvalidDimensionError(f'{name} must have at least one feature, got shape {np.shape(X)}')
    if not np.all(np.isfinite(A)):
        raise InvalidInputError(f'{name} contains non-finite values')
    return A


def expand_rows(X) -> np.ndarray:
    """Row-wise expand(): N x D -> N x H."""
    A = _as_rows(X)
    N, D = A.shape
    i, j = quadratic_index(D)
    out = np.empty((N, expanded_dim(D)))
    out[:, 0] = 1.0
    out[:, 1:D + 1] = A
    out[:, D + 1:] = A[:, i] * A[:, j]
    return out


def expand(x) -> np.ndarray:
    v = np.asarray(x, dtype=float)
    if v.ndim != 1:
        raise InvalidDimensionError(f'expand() takes a single D-vector, got shape {v.shape}')
    return expand_rows(v)[0]


def _check_pair(x, y) -> Tuple[np.ndarray, np.ndarray]:
    a = np.asarray(x, dtype=float)
    b = np.asarray(y, dtype=float)
    if a.ndim != 1 or b.ndim != 1 or a.shape != b.shape:
        raise ShapeError(f'kernel arguments must be vectors of equal length, got {a.shape} and {b.shape}')
    return a, b


def poly_kernel(x, y) -> float:
    a, b = _check_pair(x, y)
    return float((a @ b + 1.0) ** 2)


def phi_kernel(x, y) -> float:
    """Exact inner product of the two expansions."""
    a, b = _check_pair(x, y)
    return float(expand(a) @ expand(b))


def poly_gram(X, Y) -> np.ndarray:
    A, B = _as_rows(X, 'X'), _as_rows(Y, 'Y')
    if A.shape[1] != B.shape[1]:
        raise ShapeError(f'dimension mismatch: {A.shape[1]} vs {B.shape[1]}')
    return (A @ B.T + 1.0) ** 2


def phi_gram(X, Y) -> np.ndarray:
    A, B = _as_rows(X, 'X'), _as_rows(Y, 'Y')
    if A.shape[1] != B.shape[1]:
        raise ShapeError(f'dimension mismatch: {A.shape[1]} vs {B.shape[1]}')
    return expand_rows(A) @ expand_rows(B).T


GRAMS: Dict[str, Callable[..., np.ndarray]] = {
    'phi': phi_gram,
    'poly': poly_gram,
}


def gram(X, Y, kernel: str = 'phi') -> np.ndarray:
    """K[a, b] = k(X[a], Y[b])."""
    try:
        fn = GRAMS[kernel]
    except KeyError:
        raise InvalidInputError(f'unknown kernel {kernel!r}; expected one of {sorted(GRAMS)}')
    return fn(X, Y)
