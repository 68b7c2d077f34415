# sdgm/config.py
import json
import os
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence, Union

from dotenv import find_dotenv, load_dotenv

from .errors import ConfigError

# .env next to the working directory wins over nothing, never over the real env
load_dotenv(find_dotenv(usecwd=True))

FORMS = ('original', 'dual')
KERNELS = ('phi', 'poly')
PI_UPDATES = ('joint', 'within_class')


def worker_count() -> int:
    raw = os.getenv('SDGM_THREADS', '1')
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f'SDGM_THREADS must be an integer, got {raw!r}')
    return max(1, n)


def log_level() -> str:
    return os.getenv('SDGM_LOG_LEVEL', 'INFO').upper()


@dataclass(frozen=True)
class TrainConfig:
    # initial components per class: one int for every class or a per-class list
    components: Union[int, List[int]] = 2

    max_outer_iter: int = 100
    alpha_tol: float = 1e-3
    r_tol: float = 1e-4
    r_max_iter: int = 50
    newton_max_iter: int = 50
    newton_tol: float = 1e-6
    backtrack: float = 0.5
    max_halvings: int = 30

    alpha_prune: float = 1e12
    # outer iterations of uninterrupted alpha growth before a weight is pruned; 0 disables
    divergence_window: int = 10
    pi_prune: float = 1e-6
    gamma_floor: float = 1e-12
    jitter_start: float = 1e-8
    jitter_max: float = 1e-2

    seed: int = 0
    form: str = 'original'
    kernel: str = 'phi'
    standardize: bool = True
    dual_max_samples: int = 2000
    kmeans_restarts: int = 10
    pi_update: str = 'joint'

    def __post_init__(self):
        comps = self.components
        if isinstance(comps, (list, tuple)):
            if not comps or any(int(m) < 1 for m in comps):
                raise ConfigError(f'components must be >= 1 per class, got {list(comps)}')
            object.__setattr__(self, 'components', [int(m) for m in comps])
        elif int(comps) < 1:
            raise ConfigError(f'components must be >= 1, got {comps}')

        for name in ('alpha_tol', 'r_tol', 'newton_tol', 'gamma_floor',
                     'jitter_start', 'jitter_max', 'alpha_prune', 'pi_prune'):
            v = getattr(self, name)
            if not (isinstance(v, (int, float)) and v > 0 and v != float('inf')):
                raise ConfigError(f'{name} must be a positive finite number, got {v!r}')
        for name in ('max_outer_iter', 'r_max_iter', 'newton_max_iter',
                     'max_halvings', 'dual_max_samples', 'kmeans_restarts'):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f'{name} must be >= 1')
        if int(self.divergence_window) < 0:
            raise ConfigError('divergence_window must be >= 0')
        if not 0.0 < self.backtrack < 1.0:
            raise ConfigError(f'backtrack must lie in (0, 1), got {self.backtrack}')
        if self.jitter_start > self.jitter_max:
            raise ConfigError('jitter_start must not exceed jitter_max')
        if self.form not in FORMS:
            raise ConfigError(f'form must be one of {FORMS}, got {self.form!r}')
        if self.kernel not in KERNELS:
            raise ConfigError(f'kernel must be one of {KERNELS}, got {self.kernel!r}')
        if self.pi_update not in PI_UPDATES:
            raise ConfigError(f'pi_update must be one of {PI_UPDATES}, got {self.pi_update!r}')

    def components_for(self, num_classes: int) -> List[int]:
        if isinstance(self.components, list):
            if len(self.components) != num_classes:
                raise ConfigError(
                    f'components lists {len(self.components)} classes, dataset has {num_classes}')
            return list(self.components)
        return [int(self.components)] * num_classes

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any]) -> 'TrainConfig':
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(doc) - known)
        if unknown:
            raise ConfigError(f'unknown config keys: {", ".join(unknown)}')
        try:
            return cls(**dict(doc))
        except TypeError as e:
            raise ConfigError(str(e)) from e

    def with_overrides(self, **overrides: Any) -> 'TrainConfig':
        changes = {k: v for k, v in overrides.items() if v is not None}
        return replace(self, **changes) if changes else self


def load_config(path: Optional[Union[str, Path]]) -> TrainConfig:
    if path is None:
        return TrainConfig()
    try:
        doc = json.loads(Path(path).read_text(encoding='utf-8'))
    except json.JSONDecodeError as e:
        raise ConfigError(f'{path}: invalid JSON ({e.msg} at line {e.lineno})') from e
    if not isinstance(doc, dict):
        raise ConfigError(f'{path}: config must be a flat JSON object')
    return TrainConfig.from_dict(doc)


def parse_components(text: str) -> Union[int, List[int]]:
    """'3' -> 3, '2,4' -> [2, 4]."""
    parts = [p for p in text.split(',') if p.strip()]
    try:
        values = [int(p) for p in parts]
    except ValueError:
        raise ConfigError(f'components must be integers, got {text!r}')
    if len(values) == 1:
        return values[0]
    return values


def parse_int_list(text: str) -> Sequence[int]:
    try:
        return [int(p) for p in text.split(',') if p.strip()]
    except ValueError:
        raise ConfigError(f'expected a comma-separated integer list, got {text!r}')


