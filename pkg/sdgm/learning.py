# sdgm/learning.py
"""Sparse Bayesian training of the discriminative Gaussian mixture.

Weights live in a K x L array (K components over all classes, L = H in the
original form or N in the dual form). Pruned weights are stored as exact 0.0
with alpha = inf and are excluded from every linear-algebra step through
`weight_mask`; pruned components through `component_mask`.
"""
import logging
import time
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
from scipy import linalg
from scipy.special import logsumexp
from sklearn.cluster import KMeans

from .config import TrainConfig
from .data import Dataset
from .errors import ConfigError, DatasetError, FactorizationError, TrainingFailure
from .feature_map import expand_rows, gram
from .model import SdgmModel

logger = logging.getLogger(__name__)

LOG_FLOOR = -745.0


# ---------- types ----------
@dataclass
class TrainState:
    features: np.ndarray          # N x L design matrix
    component_class: np.ndarray   # K, class of each component
    component_slot: np.ndarray    # K, index m within its class
    weights: np.ndarray           # K x L
    alpha: np.ndarray             # K x L, inf where pruned
    pi: np.ndarray                # K
    r: np.ndarray                 # N x K
    weight_mask: np.ndarray       # K x L bool
    component_mask: np.ndarray    # K bool
    sample_class: np.ndarray      # N, label of each training sample

    @property
    def active(self) -> np.ndarray:
        return np.flatnonzero(self.component_mask)

    @property
    def active_mask(self) -> np.ndarray:
        """weight_mask restricted to active components (Ka x L)."""
        return self.weight_mask[self.component_mask]

    def num_active_weights(self) -> int:
        return int(self.weight_mask[self.component_mask].sum())

    def flat_weights(self) -> np.ndarray:
        return self.weights[self.component_mask][self.active_mask]

    def set_flat_weights(self, w: np.ndarray) -> None:
        act = self.active
        block = self.weights[act]
        block[self.active_mask] = w
        self.weights[act] = block

    def flat_alpha(self) -> np.ndarray:
        return self.alpha[self.component_mask][self.active_mask]

    def components_per_class(self, num_classes: int) -> List[int]:
        return np.bincount(self.component_class[self.component_mask], minlength=num_classes).tolist()


@dataclass(frozen=True)
class Snapshot:
    iteration: int
    train_error: float
    nonzero_weights: int
    components: Tuple[int, ...]
    J: float

    def to_dict(self) -> Dict[str, Any]:
        return {'iteration': self.iteration, 'train_error': self.train_error,
                'nonzero_weights': self.nonzero_weights, 'components': list(self.components), 'J': self.J}


@dataclass
class TrainReport:
    snapshots: List[Snapshot]
    converged: bool
    initial_weights: int
    initial_components: Tuple[int, ...]
    form: str
    kernel: Optional[str]
    standardized: bool = False
    model: Optional[SdgmModel] = field(default=None, compare=False, repr=False)
    # one model per outer iteration, only filled by fit(..., keep_models=True)
    models: List[SdgmModel] = field(default_factory=list, compare=False, repr=False)
    duration: float = field(default=0.0, compare=False)

    @property
    def final(self) -> Snapshot:
        return self.snapshots[-1]

    @property
    def weight_reduction_ratio(self) -> float:
        return 1.0 - self.final.nonzero_weights / self.initial_weights

    def to_dict(self) -> Dict[str, Any]:
        return {
            'format': 'sdgm-train-report',
            'form': self.form,
            'kernel': self.kernel,
            'standardized': self.standardized,
            'converged': self.converged,
            'iterations': len(self.snapshots),
            'initial_weights': self.initial_weights,
            'initial_components': list(self.initial_components),
            'final': {
                'train_error': self.final.train_error,
                'nonzero_weights': self.final.nonzero_weights,
                'components': list(self.final.components),
                'weight_reduction_ratio': self.weight_reduction_ratio,
                'J': self.final.J,
            },
            'snapshots': [s.to_dict() for s in self.snapshots],
        }


# ---------- design matrix ----------
def design_matrix(X: np.ndarray, config: TrainConfig) -> np.ndarray:
    if config.form == 'original':
        return expand_rows(X)
    if X.shape[0] > config.dual_max_samples:
        raise ConfigError(
            f'dual form with N={X.shape[0]} exceeds dual_max_samples={config.dual_max_samples}')
    return gram(X, X, config.kernel)


# ---------- initialization ----------
def init(dataset: Dataset, config: TrainConfig) -> TrainState:
    """w = 0, alpha = 1, pi uniform, r from per-class k-means."""
    counts = dataset.class_counts()
    if np.any(counts == 0):
        raise DatasetError(f'every class needs at least one sample, counts={counts.tolist()}')
    wanted = config.components_for(dataset.num_classes)
    per_class = []
    for c, (m, n_c) in enumerate(zip(wanted, counts)):
        if m > n_c:
            logger.warning('class %d has %d samples < %d components; using %d', c, n_c, m, n_c)
            m = int(n_c)
        per_class.append(m)

    F = design_matrix(dataset.X, config)
    K, L, N = sum(per_class), F.shape[1], dataset.N
    comp_class = np.repeat(np.arange(dataset.num_classes), per_class)
    comp_slot = np.concatenate([np.arange(m) for m in per_class])

    r = np.zeros((N, K))
    offset = 0
    for c, m in enumerate(per_class):
        idx = np.flatnonzero(dataset.labels == c)
        if m == 1:
            assign = np.zeros(idx.size, dtype=int)
        else:
            km = KMeans(n_clusters=m, n_init=config.kmeans_restarts, random_state=config.seed + c)
            assign = km.fit_predict(dataset.X[idx])
        r[idx, offset + assign] = 1.0
        offset += m

    return TrainState(
        features=F,
        component_class=comp_class,
        component_slot=comp_slot,
        weights=np.zeros((K, L)),
        alpha=np.ones((K, L)),
        pi=np.full(K, 1.0 / K),
        r=r,
        weight_mask=np.ones((K, L), dtype=bool),
        component_mask=np.ones(K, dtype=bool),
        sample_class=np.array(dataset.labels, dtype=int),
    )


# ---------- posteriors ----------
def _log_joint(state: TrainState) -> np.ndarray:
    """ln pi_k + w_k . f_n over active components (N x Ka)."""
    act = state.active
    with np.errstate(divide='ignore'):
        log_pi = np.log(state.pi[act])
    return state.features @ state.weights[act].T + log_pi


def joint_posteriors(state: TrainState) -> np.ndarray:
    lj = _log_joint(state)
    return np.exp(lj - logsumexp(lj, axis=1, keepdims=True))


def _own_class(state: TrainState, dataset: Dataset) -> np.ndarray:
    """t_{n, c(k)} over active components (N x Ka)."""
    return dataset.T[:, state.component_class[state.active]]


def responsibilities(state: TrainState, dataset: Dataset) -> np.ndarray:
    """r_ncm = P(c, m | x_n) / P(c | x_n) for the class of sample n (N x K)."""
    own = _own_class(state, dataset) > 0
    lj = np.where(own, _log_joint(state), -np.inf)
    r = np.zeros_like(state.r)
    r[:, state.active] = np.exp(lj - logsumexp(lj, axis=1, keepdims=True))
    return r


def class_posteriors(state: TrainState, num_classes: int) -> np.ndarray:
    P = joint_posteriors(state)
    out = np.zeros((P.shape[0], num_classes))
    np.add.at(out.T, state.component_class[state.active], P.T)
    return out


# ---------- objective ----------
def expected_loglik(state: TrainState, dataset: Dataset) -> float:
    """J = sum_n sum_c sum_m r_ncm t_nc ln P(c, m | x_n)."""
    lj = _log_joint(state)
    log_p = np.maximum(lj - logsumexp(lj, axis=1, keepdims=True), LOG_FLOOR)
    rt = state.r[:, state.active] * _own_class(state, dataset)
    return float((rt * log_p).sum())


def penalized_objective(state: TrainState, dataset: Dataset) -> float:
    w = state.flat_weights()
    return expected_loglik(state, dataset) - 0.5 * float(state.flat_alpha() @ (w * w))


def penalized_gradient(state: TrainState, dataset: Dataset) -> np.ndarray:
    """Gradient of J - 1/2 w'Aw over active weights."""
    act = state.active
    resid = state.r[:, act] * _own_class(state, dataset) - joint_posteriors(state)
    data = (resid.T @ state.features)[state.active_mask]
    return data - state.flat_alpha() * state.flat_weights()


def penalized_hessian(state: TrainState, dataset: Dataset) -> np.ndarray:
    """Hessian of J - 1/2 w'Aw over active weights: -sum_n P_a (delta_ab - P_b) f f' - A."""
    P = joint_posteriors(state)
    F = state.features
    cols = [np.flatnonzero(row) for row in state.active_mask]
    offsets = np.concatenate([[0], np.cumsum([c.size for c in cols])])
    n = int(offsets[-1])
    H = np.empty((n, n))
    for a in range(len(cols)):
        Fa = F[:, cols[a]]
        sa = slice(offsets[a], offsets[a + 1])
        for b in range(a, len(cols)):
            coef = P[:, a] * ((1.0 if a == b else 0.0) - P[:, b])
            block = -(Fa * coef[:, None]).T @ F[:, cols[b]]
            sb = slice(offsets[b], offsets[b + 1])
            H[sa, sb] = block
            if b != a:
                H[sb, sa] = block.T
    H[np.diag_indices(n)] -= state.flat_alpha()
    return H


def _factor_negated(H: np.ndarray, config: TrainConfig):
    """Cholesky factor of -H, adding jitter * I when plain factorization fails.

    H is negated in place and must not be used by the caller afterwards.
    """
    M = np.negative(H, out=H)
    try:
        return linalg.cho_factor(M, lower=True)
    except linalg.LinAlgError:
        pass
    scale = float(np.linalg.norm(M, np.inf)) or 1.0
    diag = np.diag_indices(M.shape[0])
    jitter, added = config.jitter_start * scale, 0.0
    while jitter <= config.jitter_max * scale * (1.0 + 1e-12):
        M[diag] += jitter - added
        added = jitter
        try:
            cf = linalg.cho_factor(M, lower=True)
            logger.warning('Hessian needed jitter %.3g to factorize', jitter)
            return cf
        except linalg.LinAlgError:
            jitter *= 10.0
    raise FactorizationError(f'negated Hessian is not positive definite even with jitter {config.jitter_max:g}*|H|')


# ---------- M-step over w ----------
def newton_maximize(state: TrainState, dataset: Dataset, config: TrainConfig) -> np.ndarray:
    """Newton ascent with backtracking on J - 1/2 w'Aw; updates state.weights in place."""
    q = penalized_objective(state, dataset)
    for it in range(config.newton_max_iter):
        g = penalized_gradient(state, dataset)
        if g.size == 0 or np.max(np.abs(g)) < config.newton_tol:
            break
        try:
            step = linalg.cho_solve(_factor_negated(penalized_hessian(state, dataset), config), g)
        except FactorizationError:
            logger.warning('Newton step skipped: Hessian could not be factorized')
            break
        w0 = state.flat_weights()
        t = 1.0
        for _ in range(config.max_halvings):
            state.set_flat_weights(w0 + t * step)
            q_new = penalized_objective(state, dataset)
            if q_new >= q:
                q = q_new
                break
            t *= config.backtrack
        else:
            state.set_flat_weights(w0)
            logger.warning('line search found no improvement after %d halvings (|g|=%.3g); keeping w',
                           config.max_halvings, float(np.max(np.abs(g))))
            break
    return state.weights


# ---------- hyperparameters ----------
def laplace_covariance(state: TrainState, dataset: Dataset, config: TrainConfig) -> np.ndarray:
    """Lambda = -(penalized Hessian at w_hat)^-1 over active weights."""
    cf = _laplace_factor(state, dataset, config)
    if cf is None:
        return np.empty((0, 0))
    Lam = linalg.cho_solve(cf, np.eye(cf[0].shape[0]))
    return 0.5 * (Lam + Lam.T)


def laplace_variances(state: TrainState, dataset: Dataset, config: TrainConfig,
                      block: int = 256) -> np.ndarray:
    """diag(Lambda) without forming Lambda: Lambda_ii = |L^-1 e_i|^2 for -H = L L'."""
    cf = _laplace_factor(state, dataset, config)
    if cf is None:
        return np.empty(0)
    L, lower = cf
    n = L.shape[0]
    out = np.empty(n)
    for start in range(0, n, block):
        stop = min(start + block, n)
        E = np.zeros((n, stop - start))
        E[np.arange(start, stop), np.arange(stop - start)] = 1.0
        Z = linalg.solve_triangular(L, E, lower=lower, check_finite=False)
        out[start:stop] = np.einsum('ij,ij->j', Z, Z)
    return out


def _laplace_factor(state: TrainState, dataset: Dataset, config: TrainConfig):
    H = penalized_hessian(state, dataset)
    if H.size == 0:
        return None
    try:
        return _factor_negated(H, config)
    except FactorizationError as e:
        raise TrainingFailure(f'Laplace covariance unavailable: {e}') from e


def drop_weights(state: TrainState, drop: np.ndarray) -> int:
    """Prune the weights flagged in the K x L mask `drop`; returns how many were live."""
    drop = drop & state.weight_mask
    state.weights[drop] = 0.0
    state.alpha[drop] = np.inf
    state.weight_mask[drop] = False
    return int(drop.sum())


def update_alpha(state: TrainState, Lam: np.ndarray, config: TrainConfig) -> np.ndarray:
    """alpha <- (1 - alpha lambda) / w^2; prune weights whose alpha leaves the finite range.

    `Lam` is the Laplace covariance over active weights or just its diagonal.
    """
    alpha = state.flat_alpha()
    w = state.flat_weights()
    variances = np.diag(Lam) if Lam.ndim == 2 else Lam
    gamma = 1.0 - alpha * variances
    low = gamma < 0
    if np.any(low):
        logger.warning('%d negative alpha numerators clamped to %g', int(low.sum()), config.gamma_floor)
        gamma = np.where(low, config.gamma_floor, gamma)
    w2 = w * w
    tiny = w2 < np.finfo(float).tiny
    with np.errstate(divide='ignore'):
        new_alpha = np.where(tiny, np.inf, gamma / np.where(tiny, 1.0, w2))
    drop = tiny | (new_alpha > config.alpha_prune)

    act = state.active
    keep_block = state.weight_mask[act]
    alpha_block = state.alpha[act]
    alpha_block[keep_block] = new_alpha
    state.alpha[act] = alpha_block
    drop_block = np.zeros_like(keep_block)
    drop_block[keep_block] = drop
    full = np.zeros_like(state.weight_mask)
    full[act] = drop_block
    drop_weights(state, full)
    return state.alpha


def track_rising_alpha(streak: np.ndarray, first_rise: np.ndarray, old: np.ndarray, new: np.ndarray,
                       mask: np.ndarray, config: TrainConfig) -> np.ndarray:
    """Flag weights whose alpha heads for infinity.

    A streak counts consecutive outer iterations in which alpha rose by more
    than alpha_tol without the relative rise falling below half of the rise
    that opened the streak. Weights whose streak reaches
    `divergence_window` are returned as a K x L mask; `streak` and
    `first_rise` are updated in place.
    """
    with np.errstate(divide='ignore', invalid='ignore'):
        rise = np.where(mask, new / old - 1.0, 0.0)
    rising = mask & (rise > config.alpha_tol)
    fresh = rising & (streak == 0)
    first_rise[fresh] = rise[fresh]
    going = rising & (rise >= 0.5 * first_rise)
    streak[:] = np.where(going, streak + 1, 0)
    first_rise[~going] = 0.0
    if config.divergence_window == 0:
        return np.zeros_like(mask)
    return streak >= config.divergence_window


def update_pi(state: TrainState, dataset: Dataset, config: TrainConfig) -> np.ndarray:
    counts = dataset.class_counts().astype(float)
    if np.any(counts == 0):
        raise DatasetError('a class has no samples; mixture weights are undefined')
    act = state.active
    cls = state.component_class[act]
    own = _own_class(state, dataset)
    raw = (state.r[:, act] * own).sum(axis=0) / counts[cls]
    if config.pi_update == 'joint':
        raw = raw * counts[cls] / dataset.N
    pi = np.zeros_like(state.pi)
    pi[act] = raw / raw.sum()
    state.pi = pi
    return pi


def prune(state: TrainState, config: TrainConfig) -> Tuple[np.ndarray, np.ndarray]:
    """Drop components with pi below threshold or no live weight; a class keeps its last one."""
    act = state.active
    dead = (state.pi[act] < config.pi_prune) | ~state.weight_mask[act].any(axis=1)
    for c in np.unique(state.component_class[act]):
        in_class = state.component_class[act] == c
        if np.all(dead[in_class]):
            members = np.flatnonzero(in_class)
            dead[members[np.argmax(state.pi[act][members])]] = False
    for k in act[dead]:
        logger.info('component (%d, %d) removed (pi=%.3g)', state.component_class[k],
                    state.component_slot[k], state.pi[k])
        state.component_mask[k] = False
        state.weight_mask[k] = False
        state.weights[k] = 0.0
        state.alpha[k] = np.inf
        state.pi[k] = 0.0
        state.r[:, k] = 0.0

    act = state.active
    state.pi[act] = state.pi[act] / state.pi[act].sum()

    # responsibility mass of removed components goes back to the survivors of the class
    cls = state.component_class[act]
    for n in np.flatnonzero(state.r[:, act].sum(axis=1) <= 0):
        own = act[cls == state.sample_class[n]]
        state.r[n, own] = 1.0 / own.size
    state.r[:, act] = state.r[:, act] / state.r[:, act].sum(axis=1, keepdims=True)
    return state.weight_mask, state.component_mask


# ---------- driver ----------
def build_model(state: TrainState, dataset: Dataset, config: TrainConfig) -> SdgmModel:
    act = state.active
    pi = state.pi[act]
    return SdgmModel(
        num_classes=dataset.num_classes,
        components=tuple(zip(state.component_class[act].tolist(), state.component_slot[act].tolist())),
        weights=np.where(state.weight_mask[act], state.weights[act], 0.0),
        mixture_weights=pi / pi.sum(),
        form=config.form,
        input_dim=dataset.D,
        reference_samples=dataset.X if config.form == 'dual' else None,
        kernel=config.kernel if config.form == 'dual' else None,
        class_labels=dataset.classes,
    )


def _alpha_change(old: np.ndarray, new: np.ndarray, mask: np.ndarray) -> float:
    if not np.any(mask):
        return 0.0
    return float(np.max(np.abs(new[mask] - old[mask]) / old[mask]))


def fit(dataset: Dataset, config: TrainConfig, keep_models: bool = False) -> Tuple[SdgmModel, TrainReport]:
    """Outer loop over alpha, middle loop over r, inner Newton loop over w.

    Returns the model of the last outer iteration. When alpha has not settled
    after `max_outer_iter` iterations that is still the sparsest iterate, and
    the report carries converged=False. With `keep_models` the report also
    holds the model after every outer iteration.
    """
    started = time.perf_counter()
    state = init(dataset, config)
    C = dataset.num_classes
    initial_weights = int(state.weight_mask.sum())
    initial_components = tuple(state.components_per_class(C))
    logger.info('training %s form: N=%d D=%d components=%s weights=%d',
                config.form, dataset.N, dataset.D, list(initial_components), initial_weights)

    snapshots: List[Snapshot] = []
    models: List[SdgmModel] = []
    streak = np.zeros(state.alpha.shape, dtype=int)
    first_rise = np.zeros(state.alpha.shape)
    converged = False
    for it in range(1, config.max_outer_iter + 1):
        for _ in range(config.r_max_iter):
            newton_maximize(state, dataset, config)
            r_new = responsibilities(state, dataset)
            delta = float(np.max(np.abs(r_new - state.r)))
            state.r = r_new
            if delta < config.r_tol:
                break
        J = expected_loglik(state, dataset)

        variances = laplace_variances(state, dataset, config)
        mask_before = state.weight_mask.copy()
        alpha_before = state.alpha.copy()
        update_alpha(state, variances, config)
        diverging = track_rising_alpha(streak, first_rise, alpha_before, state.alpha,
                                       mask_before & state.weight_mask, config)
        if diverging.any():
            logger.info('%d weights pruned: alpha rose for %d iterations in a row',
                        drop_weights(state, diverging), config.divergence_window)
        update_pi(state, dataset, config)
        prune(state, config)

        errors = np.argmax(class_posteriors(state, C), axis=1) != dataset.labels
        snap = Snapshot(
            iteration=it,
            train_error=float(errors.mean()),
            nonzero_weights=state.num_active_weights(),
            components=tuple(state.components_per_class(C)),
            J=J,
        )
        snapshots.append(snap)
        if keep_models:
            models.append(build_model(state, dataset, config))
        logger.info('iter=%d J=%.6f active_weights=%d components=%s',
                    it, J, snap.nonzero_weights, list(snap.components))

        kept = mask_before & state.weight_mask
        if np.array_equal(kept, mask_before) and _alpha_change(alpha_before, state.alpha, kept) < config.alpha_tol:
            converged = True
            break

    if not converged:
        logger.warning('alpha did not converge within %d outer iterations', config.max_outer_iter)
    model = build_model(state, dataset, config)
    report = TrainReport(
        snapshots=snapshots,
        converged=converged,
        initial_weights=initial_weights,
        initial_components=initial_components,
        form=config.form,
        kernel=config.kernel if config.form == 'dual' else None,
        model=model,
        models=models,
        duration=time.perf_counter() - started,
    )
    return model, report
