# sdgm/model.py
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import linalg
from scipy.special import logsumexp

from .errors import (ComponentIndexError, FactorizationError, InvalidDimensionError,
                     InvalidInputError, InvalidModelError, PreconditionError,
                     SchemaMismatchError, UnsupportedConversionError)
from .feature_map import (FEATURE_ORDER_VERSION, expand_rows, expanded_dim, gram,
                          quadratic_index)

logger = logging.getLogger(__name__)

MODEL_FORMAT = 'sdgm-model'
LOG_2PI = float(np.log(2.0 * np.pi))


# ---------- types ----------
@dataclass(frozen=True, eq=False)
class SdgmModel:
    """Trained classifier.

    `weights[k]` scores component `components[k] == (class, slot)`; its length
    is H (original form) or the number of reference samples (dual form).
    """
    num_classes: int
    components: Tuple[Tuple[int, int], ...]
    weights: np.ndarray
    mixture_weights: np.ndarray
    form: str = 'original'
    input_dim: int = 1
    reference_samples: Optional[np.ndarray] = None
    kernel: Optional[str] = None
    class_labels: Optional[Tuple[str, ...]] = None

    def __post_init__(self):
        W = np.array(self.weights, dtype=float, ndmin=2)
        pi = np.array(self.mixture_weights, dtype=float).ravel()
        comps = tuple((int(c), int(m)) for c, m in self.components)
        if self.num_classes < 1:
            raise InvalidModelError('num_classes must be >= 1')
        if W.shape[0] != len(comps) or pi.shape[0] != len(comps):
            raise InvalidModelError(
                f'{len(comps)} components but {W.shape[0]} weight rows and {pi.shape[0]} mixture weights')
        if len(set(comps)) != len(comps):
            raise InvalidModelError('duplicate component index')
        if any(not 0 <= c < self.num_classes for c, _ in comps):
            raise InvalidModelError('component class out of range')
        missing = set(range(self.num_classes)) - {c for c, _ in comps}
        if missing:
            raise InvalidModelError(f'classes without any component: {sorted(missing)}')
        if np.any(pi < 0) or np.any(pi > 1) or abs(pi.sum() - 1.0) > 1e-9:
            raise InvalidModelError(f'mixture weights must lie in [0, 1] and sum to 1 (sum={pi.sum()!r})')
        if not np.all(np.isfinite(W)):
            raise InvalidModelError('weights must be finite')

        if self.form == 'original':
            if W.shape[1] != expanded_dim(self.input_dim):
                raise InvalidModelError(
                    f'original-form weights need length {expanded_dim(self.input_dim)}, got {W.shape[1]}')
            ref = None
        elif self.form == 'dual':
            if self.reference_samples is None or self.kernel not in ('phi', 'poly'):
                raise InvalidModelError('dual form needs reference samples and a kernel (phi|poly)')
            ref = np.array(self.reference_samples, dtype=float, ndmin=2)
            if ref.shape[1] != self.input_dim:
                raise InvalidModelError('reference samples do not match input_dim')
            if W.shape[1] != ref.shape[0]:
                raise InvalidModelError(
                    f'dual weights need length {ref.shape[0]} (reference samples), got {W.shape[1]}')
            ref.setflags(write=False)
        else:
            raise InvalidModelError(f'unknown form {self.form!r}')

        W.setflags(write=False)
        pi.setflags(write=False)
        object.__setattr__(self, 'weights', W)
        object.__setattr__(self, 'mixture_weights', pi)
        object.__setattr__(self, 'components', comps)
        object.__setattr__(self, 'reference_samples', ref)
        if self.class_labels is not None:
            object.__setattr__(self, 'class_labels', tuple(str(s) for s in self.class_labels))

    @property
    def component_classes(self) -> np.ndarray:
        return np.array([c for c, _ in self.components], dtype=int)

    @property
    def components_per_class(self) -> List[int]:
        counts = [0] * self.num_classes
        for c, _ in self.components:
            counts[c] += 1
        return counts

    def component_row(self, c: int, m: int) -> int:
        try:
            return self.components.index((int(c), int(m)))
        except ValueError:
            raise ComponentIndexError(f'component ({c}, {m}) is not part of this model')

    def features(self, X) -> np.ndarray:
        """Design matrix the weights act on: phi(X) or K(X, reference)."""
        A = _as_inputs(X, self.input_dim)
        if self.form == 'original':
            return expand_rows(A)
        return gram(A, self.reference_samples, self.kernel)


@dataclass(frozen=True)
class PosteriorResult:
    class_posteriors: np.ndarray
    joint_posteriors: np.ndarray


@dataclass(frozen=True, eq=False)
class GaussianComponent:
    mean: np.ndarray
    covariance: np.ndarray
    weight: float = 1.0
    chol: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        mu = np.array(self.mean, dtype=float).ravel()
        S = np.array(self.covariance, dtype=float, ndmin=2)
        if S.shape != (mu.size, mu.size):
            raise InvalidDimensionError(f'covariance shape {S.shape} does not match mean length {mu.size}')
        if not np.allclose(S, S.T, rtol=0.0, atol=1e-12):
            raise FactorizationError('covariance is not symmetric')
        if not 0.0 < self.weight <= 1.0:
            raise InvalidInputError(f'component prior weight must lie in (0, 1], got {self.weight}')
        try:
            L = linalg.cholesky(S, lower=True)
        except linalg.LinAlgError as e:
            raise FactorizationError('covariance is not positive definite') from e
        object.__setattr__(self, 'mean', mu)
        object.__setattr__(self, 'covariance', S)
        object.__setattr__(self, 'chol', L)

    @property
    def precision(self) -> np.ndarray:
        P = linalg.cho_solve((self.chol, True), np.eye(self.mean.size))
        return 0.5 * (P + P.T)

    def log_density(self, X) -> np.ndarray:
        """Direct multivariate normal log density, used as a reference."""
        A = np.atleast_2d(np.asarray(X, dtype=float)) - self.mean
        z = linalg.solve_triangular(self.chol, A.T, lower=True)
        logdet = 2.0 * np.log(np.diag(self.chol)).sum()
        return -0.5 * (self.mean.size * LOG_2PI + logdet + (z * z).sum(axis=0))


def _as_inputs(X, D: int) -> np.ndarray:
    A = np.asarray(X, dtype=float)
    if A.ndim == 1:
        A = A[None, :]
    if A.ndim != 2 or A.shape[1] != D:
        raise InvalidDimensionError(f'model expects {D} input features, got shape {np.shape(X)}')
    if not np.all(np.isfinite(A)):
        raise InvalidInputError('input contains non-finite values')
    return A


# ---------- scoring ----------
def component_score(model: SdgmModel, c: int, m: int, x) -> float:
    row = model.component_row(c, m)
    return float(model.features(x)[0] @ model.weights[row])


def log_joint(model: SdgmModel, X) -> np.ndarray:
    """ln(pi_k) + score_k for every input row and component (N x K)."""
    pi = model.mixture_weights
    if not np.any(pi > 0):
        raise InvalidModelError('all mixture weights are zero')
    with np.errstate(divide='ignore'):
        log_pi = np.log(pi)
    return model.features(X) @ model.weights.T + log_pi


def posterior_batch(model: SdgmModel, X) -> Tuple[np.ndarray, np.ndarray]:
    """(class posteriors N x C, joint posteriors N x K)."""
    lj = log_joint(model, X)
    joint = np.exp(lj - logsumexp(lj, axis=1, keepdims=True))
    membership = np.zeros((len(model.components), model.num_classes))
    membership[np.arange(len(model.components)), model.component_classes] = 1.0
    return joint @ membership, joint


def posterior(model: SdgmModel, x) -> PosteriorResult:
    cls, joint = posterior_batch(model, np.asarray(x, dtype=float)[None, :])
    return PosteriorResult(class_posteriors=cls[0], joint_posteriors=joint[0])


def predict_batch(model: SdgmModel, X) -> np.ndarray:
    # argmax returns the first maximum: ties go to the lowest class index
    return np.argmax(posterior_batch(model, X)[0], axis=1)


def predict(model: SdgmModel, x) -> int:
    return int(predict_batch(model, np.asarray(x, dtype=float)[None, :])[0])


# ---------- Gaussian collapsing ----------
def collapse_gaussian(g: GaussianComponent) -> np.ndarray:
    """Weight vector w with exp(w . expand(x)) equal to the density of g at x."""
    mu, S = g.mean, g.precision
    D = mu.size
    logdet = 2.0 * np.log(np.diag(g.chol)).sum()
    i, j = quadratic_index(D)
    w = np.empty(expanded_dim(D))
    w[0] = -0.5 * D * LOG_2PI - 0.5 * logdet - 0.5 * mu @ S @ mu
    w[1:D + 1] = S @ mu
    w[D + 1:] = np.where(i == j, -0.5, -1.0) * S[i, j]
    return w


def from_gaussians(components: Sequence[GaussianComponent], classes: Sequence[int],
                   num_classes: Optional[int] = None) -> SdgmModel:
    """Original-form model whose posteriors equal Bayes' rule over the given GMM."""
    if len(components) != len(classes) or not components:
        raise PreconditionError('need one class index per Gaussian component')
    D = components[0].mean.size
    if any(g.mean.size != D for g in components):
        raise InvalidDimensionError('all components must share the input dimension')
    C = num_classes if num_classes is not None else max(classes) + 1
    slots: Dict[int, int] = {}
    ids = []
    for c in classes:
        ids.append((int(c), slots.get(int(c), 0)))
        slots[int(c)] = slots.get(int(c), 0) + 1
    pi = np.array([g.weight for g in components], dtype=float)
    return SdgmModel(
        num_classes=C,
        components=tuple(ids),
        weights=np.vstack([collapse_gaussian(g) for g in components]),
        mixture_weights=pi / pi.sum(),
        form='original',
        input_dim=D,
    )


def dual_to_original(model: SdgmModel) -> SdgmModel:
    """Fold dual weights psi into w = [phi(x_1) .. phi(x_N)] psi."""
    if model.form != 'dual':
        raise UnsupportedConversionError('model is already in original form')
    if model.kernel != 'phi':
        raise UnsupportedConversionError(
            f'only phi-kernel dual models convert exactly, this one uses {model.kernel!r}')
    return SdgmModel(
        num_classes=model.num_classes,
        components=model.components,
        weights=dual_weights_to_original(model.weights, model.reference_samples),
        mixture_weights=model.mixture_weights,
        form='original',
        input_dim=model.input_dim,
        class_labels=model.class_labels,
    )


def dual_weights_to_original(psi, reference_X) -> np.ndarray:
    Psi = np.array(psi, dtype=float, ndmin=2)
    Phi = expand_rows(reference_X)
    if Psi.shape[1] != Phi.shape[0]:
        raise InvalidDimensionError(f'{Psi.shape[1]} dual weights for {Phi.shape[0]} reference samples')
    return Psi @ Phi


def reduce_to_logistic(components: Sequence[GaussianComponent]) -> np.ndarray:
    """Per-class linear weights over [1, x] for a shared-covariance, one-Gaussian-per-class model.

    Row c is [ln P(c) - 0.5 mu_c' S mu_c, (S mu_c)'], S the shared precision;
    the terms common to every class are dropped since softmax ignores them.
    """
    if not components:
        raise PreconditionError('need at least one class')
    shared = components[0].covariance
    for g in components[1:]:
        if g.covariance.shape != shared.shape or not np.allclose(g.covariance, shared, rtol=1e-12, atol=0.0):
            raise PreconditionError('reduction to logistic regression needs one shared covariance')
    S = components[0].precision
    prior = np.array([g.weight for g in components], dtype=float)
    prior = prior / prior.sum()
    rows = []
    for g, p in zip(components, prior):
        b = S @ g.mean
        rows.append(np.concatenate([[np.log(p) - 0.5 * g.mean @ b], b]))
    return np.vstack(rows)


def logistic_posterior(weights, X) -> np.ndarray:
    W = np.asarray(weights, dtype=float)
    A = np.atleast_2d(np.asarray(X, dtype=float))
    z = W[:, 0] + A @ W[:, 1:].T
    return np.exp(z - logsumexp(z, axis=1, keepdims=True))


# ---------- inspection ----------
def sparsity_metrics(model: SdgmModel) -> Tuple[int, List[int]]:
    """(nonzero weight count, per-class count of components with a nonzero weight)."""
    alive = np.any(model.weights != 0.0, axis=1)
    counts = [0] * model.num_classes
    for (c, _), keep in zip(model.components, alive):
        if keep:
            counts[c] += 1
    return int(np.count_nonzero(model.weights)), counts


def component_means(model: SdgmModel) -> Dict[Tuple[int, int], np.ndarray]:
    """Gaussian centres implied by original-form weights (negative definite quadratic part only)."""
    if model.form == 'dual':
        if model.kernel != 'phi':
            return {}
        model = dual_to_original(model)
    D = model.input_dim
    i, j = quadratic_index(D)
    out = {}
    for cid, w in zip(model.components, model.weights):
        Q = np.zeros((D, D))
        # w_quad = -0.5 s_ii on the diagonal, -s_ij off it
        Q[i, j] = np.where(i == j, -2.0, -1.0) * w[D + 1:]
        S = np.triu(Q) + np.triu(Q, 1).T
        try:
            out[cid] = linalg.cho_solve(linalg.cho_factor(S), w[1:D + 1])
        except linalg.LinAlgError:
            continue
    return out


def relevance_samples(model: SdgmModel) -> Dict[Tuple[int, int], np.ndarray]:
    """Reference samples carrying a nonzero dual weight, per component."""
    if model.form != 'dual':
        return {}
    return {cid: model.reference_samples[w != 0.0] for cid, w in zip(model.components, model.weights)}


# ---------- serialization ----------
def model_to_dict(model: SdgmModel) -> Dict[str, Any]:
    doc: Dict[str, Any] = {
        'format': MODEL_FORMAT,
        'feature_order_version': FEATURE_ORDER_VERSION,
        'form': model.form,
        'input_dim': model.input_dim,
        'num_classes': model.num_classes,
        'kernel': model.kernel,
        'class_labels': list(model.class_labels) if model.class_labels is not None else None,
        'components': [
            {'class': c, 'index': m, 'pi': float(p), 'weights': [float(v) for v in w]}
            for (c, m), p, w in zip(model.components, model.mixture_weights, model.weights)
        ],
    }
    if model.form == 'dual':
        doc['reference_samples'] = [[float(v) for v in row] for row in model.reference_samples]
    return doc


def model_from_dict(doc: Dict[str, Any]) -> SdgmModel:
    if doc.get('format') != MODEL_FORMAT:
        raise SchemaMismatchError(f'not an sdgm model document (format={doc.get("format")!r})')
    if doc.get('feature_order_version') != FEATURE_ORDER_VERSION:
        raise SchemaMismatchError(
            f'unsupported feature order version {doc.get("feature_order_version")!r}')
    try:
        comps = doc['components']
        return SdgmModel(
            num_classes=int(doc['num_classes']),
            components=tuple((int(e['class']), int(e['index'])) for e in comps),
            weights=np.array([e['weights'] for e in comps], dtype=float),
            mixture_weights=np.array([e['pi'] for e in comps], dtype=float),
            form=doc['form'],
            input_dim=int(doc['input_dim']),
            reference_samples=(np.array(doc['reference_samples'], dtype=float)
                               if doc.get('reference_samples') is not None else None),
            kernel=doc.get('kernel'),
            class_labels=tuple(doc['class_labels']) if doc.get('class_labels') is not None else None,
        )
    except (KeyError, TypeError, ValueError) as e:
        if isinstance(e, InvalidModelError):
            raise
        raise SchemaMismatchError(f'malformed model document: {e}') from e


def save_model(path: Union[str, Path], model: SdgmModel, extra: Optional[Dict[str, Any]] = None) -> None:
    # json writes floats with repr(), which round-trips every finite double exactly
    doc = model_to_dict(model)
    if extra:
        doc.update(extra)
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + '\n', encoding='utf-8')


def load_model(path: Union[str, Path]) -> Tuple[SdgmModel, Dict[str, Any]]:
    """Returns the model and the raw document (for attached preprocessing)."""
    try:
        doc = json.loads(Path(path).read_text(encoding='utf-8'))
    except json.JSONDecodeError as e:
        raise SchemaMismatchError(f'{path}: invalid JSON ({e.msg} at line {e.lineno})') from e
    return model_from_dict(doc), doc
