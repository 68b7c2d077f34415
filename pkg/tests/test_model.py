# tests/test_model.py
import json

import numpy as np
import pytest
from scipy.special import softmax
from scipy.stats import multivariate_normal

from sdgm.errors import (ComponentIndexError, FactorizationError, InvalidDimensionError,
                         InvalidModelError, PreconditionError, SchemaMismatchError,
                         UnsupportedConversionError)
from sdgm.feature_map import expand, expanded_dim, phi_kernel
from sdgm.model import (GaussianComponent, SdgmModel, collapse_gaussian, component_means,
                        component_score, dual_to_original, from_gaussians, load_model,
                        logistic_posterior, model_from_dict, model_to_dict, posterior,
                        posterior_batch, predict, predict_batch, reduce_to_logistic,
                        relevance_samples, save_model, sparsity_metrics)

HALF_LOG_2PI = 0.5 * np.log(2 * np.pi)


def symmetric_model(D=2):
    H = expanded_dim(D)
    return SdgmModel(2, ((0, 0), (1, 0)), np.zeros((2, H)), [0.5, 0.5], input_dim=D)


def random_model(rng, C=3, per_class=2, D=2):
    comps = tuple((c, m) for c in range(C) for m in range(per_class))
    pi = rng.uniform(0.1, 1.0, size=len(comps))
    return SdgmModel(C, comps, rng.normal(size=(len(comps), expanded_dim(D))), pi / pi.sum(), input_dim=D)


def random_spd(rng, D):
    A = rng.normal(size=(D, D))
    return A @ A.T + D * np.eye(D)


class TestSdgmModel:
    def test_rejects_bad_pi(self):
        with pytest.raises(InvalidModelError):
            SdgmModel(2, ((0, 0), (1, 0)), np.zeros((2, 6)), [0.5, 0.6], input_dim=2)

    def test_rejects_uncovered_class(self):
        with pytest.raises(InvalidModelError):
            SdgmModel(2, ((0, 0), (0, 1)), np.zeros((2, 6)), [0.5, 0.5], input_dim=2)

    def test_rejects_wrong_length(self):
        with pytest.raises(InvalidModelError):
            SdgmModel(2, ((0, 0), (1, 0)), np.zeros((2, 5)), [0.5, 0.5], input_dim=2)

    def test_dual_needs_matching_reference(self):
        with pytest.raises(InvalidModelError):
            SdgmModel(2, ((0, 0), (1, 0)), np.zeros((2, 3)), [0.5, 0.5], form='dual', input_dim=2,
                      reference_samples=np.zeros((4, 2)), kernel='phi')

    def test_weights_are_read_only(self):
        model = symmetric_model()
        with pytest.raises(ValueError):
            model.weights[0, 0] = 1.0

    def test_unknown_component(self):
        with pytest.raises(ComponentIndexError):
            symmetric_model().component_row(1, 3)


class TestScore:
    def test_zero_weights(self):
        assert component_score(symmetric_model(), 0, 0, [3.0, -1.0]) == 0.0

    def test_standard_normal_at_zero(self):
        w = collapse_gaussian(GaussianComponent([0.0], [[1.0]]))
        model = SdgmModel(1, ((0, 0),), w[None, :], [1.0], input_dim=1)
        assert component_score(model, 0, 0, [0.0]) == pytest.approx(-HALF_LOG_2PI, abs=1e-14)

    def test_dual_indicator_weight(self):
        ref = np.array([[0.5, 1.0], [-1.0, 2.0], [0.0, 0.3]])
        psi = np.zeros((2, 3))
        psi[1, 1] = 1.0
        model = SdgmModel(2, ((0, 0), (1, 0)), psi, [0.5, 0.5], form='dual', input_dim=2,
                          reference_samples=ref, kernel='phi')
        x = np.array([0.2, -0.7])
        assert component_score(model, 1, 0, x) == pytest.approx(phi_kernel(ref[1], x), rel=1e-12)

    def test_dimension_mismatch(self):
        with pytest.raises(InvalidDimensionError):
            component_score(symmetric_model(), 0, 0, [1.0])


class TestPosterior:
    def test_symmetric_is_uniform(self):
        res = posterior(symmetric_model(), [0.3, 4.0])
        np.testing.assert_allclose(res.class_posteriors, [0.5, 0.5], atol=1e-15)

    def test_single_class(self):
        model = SdgmModel(1, ((0, 0), (0, 1)), np.random.default_rng(0).normal(size=(2, 3)),
                          [0.3, 0.7], input_dim=1)
        np.testing.assert_allclose(posterior(model, [5.0]).class_posteriors, [1.0], atol=1e-15)

    def test_log_three_score_gap(self):
        W = np.zeros((2, 3))
        W[0, 0] = np.log(3.0)
        model = SdgmModel(2, ((0, 0), (1, 0)), W, [0.5, 0.5], input_dim=1)
        np.testing.assert_allclose(posterior(model, [1.0]).joint_posteriors, [0.75, 0.25], atol=1e-14)

    def test_normalized_on_random_models(self):
        rng = np.random.default_rng(4)
        for _ in range(10):
            model = random_model(rng)
            cls, joint = posterior_batch(model, rng.normal(size=(50, 2)))
            np.testing.assert_allclose(cls.sum(axis=1), 1.0, atol=1e-12)
            np.testing.assert_allclose(joint.sum(axis=1), 1.0, atol=1e-12)

    def test_no_overflow_on_huge_scores(self):
        W = np.zeros((2, 3))
        W[0, 0], W[1, 0] = 1e5, -1e5
        model = SdgmModel(2, ((0, 0), (1, 0)), W, [0.5, 0.5], input_dim=1)
        p = posterior(model, [0.0]).class_posteriors
        assert np.all(np.isfinite(p))
        np.testing.assert_allclose(p, [1.0, 0.0], atol=1e-300)

    def test_zero_pi_component_gets_no_mass(self):
        model = SdgmModel(2, ((0, 0), (0, 1), (1, 0)), np.ones((3, 3)), [0.0, 0.5, 0.5], input_dim=1)
        assert posterior(model, [1.0]).joint_posteriors[0] == 0.0

    def test_batch_matches_single(self):
        rng = np.random.default_rng(5)
        model = random_model(rng)
        X = rng.normal(size=(7, 2))
        cls, _ = posterior_batch(model, X)
        for n in range(7):
            np.testing.assert_allclose(cls[n], posterior(model, X[n]).class_posteriors, atol=1e-15)

    def test_non_finite_input(self):
        with pytest.raises(ValueError):
            posterior(symmetric_model(), [np.inf, 0.0])


class TestPredict:
    def test_tie_goes_to_lowest_class(self):
        assert predict(symmetric_model(), [1.0, 1.0]) == 0

    def test_dominant_component(self):
        W = np.zeros((3, 3))
        W[2, 0] = 10.0
        model = SdgmModel(3, ((0, 0), (1, 0), (2, 0)), W, [1 / 3, 1 / 3, 1 / 3], input_dim=1)
        assert predict(model, [0.0]) == 2

    def test_collapsed_unit_gaussians(self):
        model = from_gaussians([GaussianComponent([-1.0], [[1.0]], 0.5),
                                GaussianComponent([1.0], [[1.0]], 0.5)], [0, 1])
        assert predict(model, [2.0]) == 1
        np.testing.assert_array_equal(predict_batch(model, [[-2.0], [2.0]]), [0, 1])


class TestCollapseGaussian:
    def test_standard_normal(self):
        w = collapse_gaussian(GaussianComponent([0.0], [[1.0]]))
        np.testing.assert_allclose(w, [-HALF_LOG_2PI, 0.0, -0.5], atol=1e-15)

    def test_isotropic_2d(self):
        w = collapse_gaussian(GaussianComponent([0.0, 0.0], np.eye(2)))
        np.testing.assert_allclose(w, [-np.log(2 * np.pi), 0, 0, -0.5, 0, -0.5], atol=1e-15)

    def test_matches_density(self):
        rng = np.random.default_rng(6)
        for D in (1, 2, 3):
            g = GaussianComponent(rng.normal(size=D), random_spd(rng, D))
            w = collapse_gaussian(g)
            X = g.mean + rng.normal(size=(100, D))
            direct = multivariate_normal(g.mean, g.covariance).pdf(X)
            collapsed = np.exp(np.array([w @ expand(x) for x in X]))
            np.testing.assert_allclose(collapsed, direct, rtol=1e-10)

    def test_not_positive_definite(self):
        with pytest.raises(FactorizationError):
            GaussianComponent([0.0, 0.0], [[1.0, 2.0], [2.0, 1.0]])

    def test_not_symmetric(self):
        with pytest.raises(FactorizationError):
            GaussianComponent([0.0, 0.0], [[1.0, 0.5], [0.0, 1.0]])

    def test_generative_posterior_is_bayes_rule(self):
        rng = np.random.default_rng(7)
        gs = [GaussianComponent(rng.normal(size=2), random_spd(rng, 2), p) for p in (0.2, 0.3, 0.5)]
        model = from_gaussians(gs, [0, 1, 1])
        X = rng.normal(size=(20, 2))
        dens = np.column_stack([g.weight * np.exp(g.log_density(X)) for g in gs])
        expected = np.column_stack([dens[:, 0], dens[:, 1] + dens[:, 2]]) / dens.sum(axis=1, keepdims=True)
        np.testing.assert_allclose(posterior_batch(model, X)[0], expected, atol=1e-12)


class TestDualToOriginal:
    def _dual(self, psi, ref, kernel='phi'):
        C = 2
        return SdgmModel(C, ((0, 0), (1, 0)), psi, [0.4, 0.6], form='dual', input_dim=ref.shape[1],
                         reference_samples=ref, kernel=kernel)

    def test_zero_psi(self):
        ref = np.random.default_rng(8).normal(size=(5, 2))
        out = dual_to_original(self._dual(np.zeros((2, 5)), ref))
        np.testing.assert_array_equal(out.weights, 0.0)

    def test_indicator_psi(self):
        ref = np.random.default_rng(9).normal(size=(5, 2))
        psi = np.zeros((2, 5))
        psi[0, 0] = 1.0
        out = dual_to_original(self._dual(psi, ref))
        np.testing.assert_allclose(out.weights[0], expand(ref[0]), atol=1e-15)

    def test_posteriors_agree(self):
        rng = np.random.default_rng(10)
        ref = rng.normal(size=(6, 2))
        dual = self._dual(0.1 * rng.normal(size=(2, 6)), ref)
        orig = dual_to_original(dual)
        X = rng.normal(size=(100, 2))
        diff = np.abs(posterior_batch(dual, X)[0] - posterior_batch(orig, X)[0])
        assert diff.max() < 1e-8

    def test_poly_kernel_refused(self):
        ref = np.zeros((3, 2))
        with pytest.raises(UnsupportedConversionError):
            dual_to_original(self._dual(np.zeros((2, 3)), ref, kernel='poly'))


class TestReduceToLogistic:
    def test_unit_gaussians_give_sigmoid(self):
        W = reduce_to_logistic([GaussianComponent([-1.0], [[1.0]], 0.5),
                                GaussianComponent([1.0], [[1.0]], 0.5)])
        x = np.linspace(-3, 3, 13)
        p1 = logistic_posterior(W, x[:, None])[:, 1]
        np.testing.assert_allclose(p1, 1.0 / (1.0 + np.exp(-2.0 * x)), atol=1e-14)

    def test_identical_means_uniform(self):
        g = GaussianComponent([0.3, 0.1], [[2.0, 0.3], [0.3, 1.0]], 0.5)
        W = reduce_to_logistic([g, GaussianComponent(g.mean, g.covariance, 0.5)])
        np.testing.assert_allclose(logistic_posterior(W, np.random.default_rng(0).normal(size=(5, 2))), 0.5)

    def test_matches_full_posterior(self):
        rng = np.random.default_rng(11)
        S = random_spd(rng, 3)
        gs = [GaussianComponent(rng.normal(size=3), S, p) for p in (0.2, 0.5, 0.3)]
        X = rng.normal(size=(40, 3))
        full = posterior_batch(from_gaussians(gs, [0, 1, 2]), X)[0]
        np.testing.assert_allclose(logistic_posterior(reduce_to_logistic(gs), X), full, atol=1e-12)

    def test_unequal_covariance(self):
        with pytest.raises(PreconditionError):
            reduce_to_logistic([GaussianComponent([0.0], [[1.0]]), GaussianComponent([1.0], [[2.0]])])


class TestInspection:
    def test_zero_model_has_no_nonzeros(self):
        assert sparsity_metrics(symmetric_model()) == (0, [0, 0])

    def test_component_without_weights_not_counted(self):
        W = np.zeros((3, 3))
        W[0, 1] = 0.5
        W[2, :] = [1.0, 0.0, -2.0]
        model = SdgmModel(2, ((0, 0), (0, 1), (1, 0)), W, [0.2, 0.3, 0.5], input_dim=1)
        assert sparsity_metrics(model) == (3, [1, 1])

    def test_component_means_recovered(self):
        rng = np.random.default_rng(12)
        mus = [rng.normal(size=2) for _ in range(2)]
        model = from_gaussians([GaussianComponent(mu, random_spd(rng, 2), 0.5) for mu in mus], [0, 1])
        means = component_means(model)
        np.testing.assert_allclose(means[(0, 0)], mus[0], atol=1e-10)
        np.testing.assert_allclose(means[(1, 0)], mus[1], atol=1e-10)

    def test_relevance_samples(self):
        ref = np.arange(8, dtype=float).reshape(4, 2)
        psi = np.array([[0.0, 1.0, 0.0, 2.0], [0.5, 0.0, 0.0, 0.0]])
        model = SdgmModel(2, ((0, 0), (1, 0)), psi, [0.5, 0.5], form='dual', input_dim=2,
                          reference_samples=ref, kernel='poly')
        rel = relevance_samples(model)
        np.testing.assert_array_equal(rel[(0, 0)], ref[[1, 3]])
        np.testing.assert_array_equal(rel[(1, 0)], ref[[0]])


class TestSerialization:
    def test_file_round_trip_is_exact(self, tmp_path):
        rng = np.random.default_rng(13)
        model = random_model(rng)
        save_model(tmp_path / 'm.json', model)
        back, doc = load_model(tmp_path / 'm.json')
        np.testing.assert_array_equal(back.weights, model.weights)
        np.testing.assert_array_equal(back.mixture_weights, model.mixture_weights)
        assert back.components == model.components
        assert doc['feature_order_version'] == 1

    def test_dual_document_validates(self, validate):
        ref = np.random.default_rng(14).normal(size=(3, 2))
        model = SdgmModel(2, ((0, 0), (1, 0)), np.ones((2, 3)), [0.5, 0.5], form='dual', input_dim=2,
                          reference_samples=ref, kernel='phi', class_labels=('a', 'b'))
        doc = model_to_dict(model)
        validate(doc, 'model')
        assert model_from_dict(json.loads(json.dumps(doc))).class_labels == ('a', 'b')

    def test_wrong_feature_order_version(self):
        doc = model_to_dict(symmetric_model())
        doc['feature_order_version'] = 2
        with pytest.raises(SchemaMismatchError):
            model_from_dict(doc)

    def test_malformed_document(self):
        doc = model_to_dict(symmetric_model())
        del doc['components'][0]['pi']
        with pytest.raises(SchemaMismatchError):
            model_from_dict(doc)

    def test_invalid_json_file(self, tmp_path):
        p = tmp_path / 'bad.json'
        p.write_text('{"format": ', encoding='utf-8')
        with pytest.raises(SchemaMismatchError):
            load_model(p)


def test_softmax_reference():
    rng = np.random.default_rng(15)
    model = random_model(rng, C=2, per_class=1, D=1)
    x = np.array([0.7])
    z = model.weights @ expand(x) + np.log(model.mixture_weights)
    np.testing.assert_allclose(posterior(model, x).joint_posteriors, softmax(z), atol=1e-14)
