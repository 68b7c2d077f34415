# sdgm/data.py
import csv
import hashlib
import json
import logging
import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import (DatasetError, ParseError, SchemaMismatchError, SpecError,
                     SplitNotFoundError)

logger = logging.getLogger(__name__)

SPEC_DIR = Path(__file__).parent / 'specs'
DEFAULT_GMM_SPEC = SPEC_DIR / 'two_rings_v1.json'

PathLike = Union[str, Path]


# ---------- types ----------
@dataclass(frozen=True, eq=False)
class Dataset:
    X: np.ndarray
    labels: np.ndarray
    num_classes: int
    classes: Tuple[str, ...] = ()
    name: str = ''

    def __post_init__(self):
        X = np.array(self.X, dtype=float, ndmin=2)
        y = np.array(self.labels).ravel()
        if X.shape[0] < 1 or X.shape[1] < 1:
            raise DatasetError(f'dataset needs N >= 1 and D >= 1, got shape {X.shape}')
        if y.shape[0] != X.shape[0]:
            raise DatasetError(f'{X.shape[0]} rows but {y.shape[0]} labels')
        if not np.issubdtype(y.dtype, np.integer):
            if not np.all(np.mod(y, 1) == 0):
                raise DatasetError('labels must be integer class indices')
        y = y.astype(int)
        if np.any(y < 0) or np.any(y >= self.num_classes):
            raise DatasetError(f'labels must lie in [0, {self.num_classes})')
        if not np.all(np.isfinite(X)):
            raise DatasetError('inputs contain non-finite values')
        classes = tuple(str(s) for s in self.classes) or tuple(str(c) for c in range(self.num_classes))
        if len(classes) != self.num_classes:
            raise DatasetError(f'{len(classes)} class names for {self.num_classes} classes')
        X.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, 'X', X)
        object.__setattr__(self, 'labels', y)
        object.__setattr__(self, 'classes', classes)

    @property
    def N(self) -> int:
        return self.X.shape[0]

    @property
    def D(self) -> int:
        return self.X.shape[1]

    @property
    def T(self) -> np.ndarray:
        """One-hot targets, N x C."""
        T = np.zeros((self.N, self.num_classes))
        T[np.arange(self.N), self.labels] = 1.0
        return T

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.num_classes)

    def with_inputs(self, X: np.ndarray) -> 'Dataset':
        return replace(self, X=X)


@dataclass(frozen=True, eq=False)
class GmmComponent:
    cls: int
    mean: np.ndarray
    cov: np.ndarray
    weight: float


@dataclass(frozen=True, eq=False)
class GmmSpec:
    components: Tuple[GmmComponent, ...]
    num_classes: int = field(init=False)
    version: str = ''

    def __post_init__(self):
        comps = tuple(self.components)
        if not comps:
            raise SpecError('GMM spec has no components')
        D = np.asarray(comps[0].mean).size
        fixed = []
        for k, comp in enumerate(comps):
            mean = np.asarray(comp.mean, dtype=float).ravel()
            cov = np.array(comp.cov, dtype=float, ndmin=2)
            if mean.size != D or cov.shape != (D, D):
                raise SpecError(f'component {k}: mean/covariance shapes do not match D={D}')
            if not np.allclose(cov, cov.T, rtol=0.0, atol=1e-12):
                raise SpecError(f'component {k}: covariance is not symmetric')
            try:
                np.linalg.cholesky(cov)
            except np.linalg.LinAlgError as e:
                raise SpecError(f'component {k}: covariance is not positive definite') from e
            if comp.cls < 0 or not comp.weight > 0:
                raise SpecError(f'component {k}: needs class >= 0 and weight > 0')
            fixed.append(GmmComponent(int(comp.cls), mean, cov, float(comp.weight)))
        C = max(c.cls for c in fixed) + 1
        for c in range(C):
            total = sum(comp.weight for comp in fixed if comp.cls == c)
            if abs(total - 1.0) > 1e-9:
                raise SpecError(f'class {c}: mixing weights sum to {total!r}, expected 1')
        object.__setattr__(self, 'components', tuple(fixed))
        object.__setattr__(self, 'num_classes', C)

    @property
    def D(self) -> int:
        return self.components[0].mean.size


@dataclass(frozen=True, eq=False)
class Standardizer:
    mean: np.ndarray
    std: np.ndarray

    def to_dict(self) -> Dict[str, List[float]]:
        return {'mean': [float(v) for v in self.mean], 'std': [float(v) for v in self.std]}

    @classmethod
    def from_dict(cls, doc: Dict[str, Sequence[float]]) -> 'Standardizer':
        return cls(np.asarray(doc['mean'], dtype=float), np.asarray(doc['std'], dtype=float))


# ---------- CSV ----------
_NUM = re.compile(r'^[+-]?(\d+\.?\d*|\.\d+)([eE][+-]?\d+)?$|^[+-]?(inf|nan)$', re.IGNORECASE)


def _is_number(cell: str) -> bool:
    return bool(_NUM.match(cell.strip()))


def _split_rows(path: Path, delimiter: Optional[str]) -> List[Tuple[int, List[str]]]:
    text = path.read_text(encoding='utf-8-sig')
    lines = [(i + 1, ln) for i, ln in enumerate(text.splitlines()) if ln.strip()]
    if not lines:
        raise ParseError('file is empty', str(path))
    if delimiter is None:
        delimiter = ',' if ',' in lines[0][1] else ' '
    if delimiter == ' ':
        return [(no, ln.split()) for no, ln in lines]
    rows = csv.reader([ln for _, ln in lines], delimiter=delimiter)
    return [(no, [c.strip() for c in row]) for (no, _), row in zip(lines, rows)]


def _label_sort_key(label: str):
    return (0, float(label), label) if _is_number(label) else (1, 0.0, label)


def load_csv(path: PathLike, label_column: Union[str, int] = 'last', delimiter: Optional[str] = None,
             classes: Optional[Sequence[str]] = None, name: Optional[str] = None) -> Dataset:
    """Read features + label per row.

    `label_column` is 'first', 'last' or a 0-based column index. A first row
    whose feature cells are not all numeric is treated as a header. Labels are
    mapped to 0..C-1 in sorted order unless `classes` fixes the mapping.
    """
    path = Path(path)
    rows = _split_rows(path, delimiter)
    width = len(rows[0][1])
    if width < 2:
        raise ParseError('need at least one feature column and a label column', str(path), rows[0][0])
    if label_column == 'first':
        li = 0
    elif label_column == 'last':
        li = width - 1
    else:
        try:
            li = int(label_column)
        except (TypeError, ValueError):
            raise ParseError(f'label column must be first, last or an index, got {label_column!r}', str(path))
        if li < 0:
            li += width
        if not 0 <= li < width:
            raise ParseError(f'label column {label_column} out of range for {width} columns', str(path))

    first_features = [c for j, c in enumerate(rows[0][1]) if j != li]
    if not all(_is_number(c) for c in first_features):
        rows = rows[1:]
    if not rows:
        raise ParseError('no data rows after header', str(path))

    feats: List[List[float]] = []
    raw_labels: List[str] = []
    for line_no, cells in rows:
        if len(cells) != width:
            raise ParseError(f'expected {width} columns, found {len(cells)}', str(path), line_no)
        values = []
        for j, cell in enumerate(cells):
            if j == li:
                continue
            if not _is_number(cell):
                raise ParseError(f'non-numeric cell {cell!r} in column {j + 1}', str(path), line_no)
            v = float(cell)
            if not np.isfinite(v):
                raise ParseError(f'non-finite value {cell!r} in column {j + 1}', str(path), line_no)
            values.append(v)
        feats.append(values)
        raw_labels.append(_canonical_label(cells[li]))

    if classes is None:
        class_names = tuple(sorted(set(raw_labels), key=_label_sort_key))
    else:
        class_names = tuple(_canonical_label(c) for c in classes)
    index = {c: k for k, c in enumerate(class_names)}
    labels = []
    for (line_no, _), lab in zip(rows, raw_labels):
        if lab not in index:
            raise ParseError(f'unknown label {lab!r} (known: {", ".join(class_names)})', str(path), line_no)
        labels.append(index[lab])

    return Dataset(
        X=np.array(feats, dtype=float),
        labels=np.array(labels, dtype=int),
        num_classes=len(class_names),
        classes=class_names,
        name=name if name is not None else path.stem,
    )


def _canonical_label(cell: str) -> str:
    # '1', '1.0' and '1.' name the same class
    s = cell.strip()
    if _is_number(s):
        v = float(s)
        if np.isfinite(v) and v == int(v):
            return str(int(v))
    return s


def save_csv(dataset: Dataset, path: PathLike) -> None:
    """Inverse of load_csv: header x1..xD,label; floats written with repr()."""
    path = Path(path)
    with path.open('w', newline='', encoding='utf-8') as fh:
        writer = csv.writer(fh)
        writer.writerow([f'x{j + 1}' for j in range(dataset.D)] + ['label'])
        for x, y in zip(dataset.X, dataset.labels):
            writer.writerow([repr(float(v)) for v in x] + [dataset.classes[y]])


def fingerprint(path: PathLike) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# ---------- benchmark splits ----------
_SPLIT = re.compile(r'^(?P<name>.+)_(?P<part>train|test)_(?P<idx>\d+)\.csv$')


def available_splits(directory: PathLike, name: Optional[str] = None) -> Dict[str, List[int]]:
    """{dataset name: sorted indices having both a train and a test file}."""
    found: Dict[Tuple[str, int], set] = {}
    for p in Path(directory).iterdir():
        m = _SPLIT.match(p.name)
        if not m or (name is not None and m['name'] != name):
            continue
        found.setdefault((m['name'], int(m['idx'])), set()).add(m['part'])
    out: Dict[str, List[int]] = {}
    for (nm, idx), parts in sorted(found.items()):
        if parts == {'train', 'test'}:
            out.setdefault(nm, []).append(idx)
    return out


def load_splits(directory: PathLike, index: int, name: Optional[str] = None,
                label_column: Union[str, int] = 'last') -> Tuple[Dataset, Dataset]:
    directory = Path(directory)
    if not directory.is_dir():
        raise SplitNotFoundError(str(directory), index, [])
    splits = available_splits(directory, name)
    if name is None:
        if len(splits) > 1:
            raise DatasetError(f'{directory} holds several benchmarks ({", ".join(splits)}); pass a name')
        name = next(iter(splits), '')
    indices = splits.get(name, [])
    if index not in indices:
        raise SplitNotFoundError(str(directory), index, indices)

    train = load_csv(directory / f'{name}_train_{index}.csv', label_column, name=f'{name}_train_{index}')
    # test labels follow the training mapping even if a class is absent from the test file
    test = load_csv(directory / f'{name}_test_{index}.csv', label_column, classes=train.classes,
                    name=f'{name}_test_{index}')
    if test.D != train.D:
        raise SchemaMismatchError(f'split {index}: train has D={train.D}, test has D={test.D}')
    return train, test


# ---------- synthetic GMM ----------
def gmm_spec_from_dict(doc: Dict) -> GmmSpec:
    try:
        comps = tuple(
            GmmComponent(int(c['class']), np.asarray(c['mean'], dtype=float),
                          np.asarray(c['cov'], dtype=float), float(c['weight']))
            for c in doc['components']
        )
    except (KeyError, TypeError, ValueError) as e:
        raise SpecError(f'malformed GMM spec: {e}') from e
    return GmmSpec(comps, version=str(doc.get('version', '')))


def gmm_spec_to_dict(spec: GmmSpec) -> Dict:
    return {
        'version': spec.version,
        'components': [
            {'class': c.cls, 'mean': c.mean.tolist(), 'cov': c.cov.tolist(), 'weight': c.weight}
            for c in spec.components
        ],
    }


def load_gmm_spec(path: Optional[PathLike] = None) -> GmmSpec:
    path = Path(path) if path is not None else DEFAULT_GMM_SPEC
    try:
        doc = json.loads(path.read_text(encoding='utf-8'))
    except json.JSONDecodeError as e:
        raise SpecError(f'{path}: invalid JSON ({e.msg} at line {e.lineno})') from e
    return gmm_spec_from_dict(doc)


def synth_gmm(spec: GmmSpec, n_train: int, n_test: int, seed: int) -> Tuple[Dataset, Dataset]:
    """Draw class (uniform), then component (mixing weight), then the point."""
    if n_train < 1 or n_test < 1:
        raise DatasetError('sample sizes must be positive')
    rng = np.random.default_rng(seed)
    by_class = [[k for k, c in enumerate(spec.components) if c.cls == cl] for cl in range(spec.num_classes)]
    chols = [np.linalg.cholesky(c.cov) for c in spec.components]

    def draw(n: int, name: str) -> Dataset:
        y = rng.integers(0, spec.num_classes, size=n)
        X = np.empty((n, spec.D))
        for i in range(n):
            members = by_class[y[i]]
            w = np.array([spec.components[k].weight for k in members])
            k = members[rng.choice(len(members), p=w / w.sum())]
            X[i] = spec.components[k].mean + chols[k] @ rng.standard_normal(spec.D)
        return Dataset(X, y, spec.num_classes, name=name)

    return draw(n_train, f'synth_train_{seed}'), draw(n_test, f'synth_test_{seed}')


# ---------- standardization ----------
def standardize_fit(train: Dataset) -> Standardizer:
    mean = train.X.mean(axis=0)
    std = train.X.std(axis=0)
    flat = ~(std > 0)
    if np.any(flat):
        logger.warning('constant input columns %s: std forced to 1', np.flatnonzero(flat).tolist())
        std = np.where(flat, 1.0, std)
    return Standardizer(mean, std)


def standardize_apply(std: Standardizer, dataset: Dataset) -> Dataset:
    if dataset.D != std.mean.size:
        raise SchemaMismatchError(f'standardizer fitted on D={std.mean.size}, dataset has D={dataset.D}')
    return dataset.with_inputs((dataset.X - std.mean) / std.std)


def standardize_inputs(std: Standardizer, X) -> np.ndarray:
    return (np.asarray(X, dtype=float) - std.mean) / std.std


def unstandardize(std: Standardizer, X) -> np.ndarray:
    return np.asarray(X, dtype=float) * std.std + std.mean
