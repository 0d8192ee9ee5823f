"""Closed-form head Hessians checked against finite differences."""

import numpy as np
import pytest
import torch

from cdga.diagnostics.hessian import (
    HeadHessian,
    classifier_head_hessian,
    head_hessian_from_features,
    hessian_distance,
    softmax_rows,
    spectral_norm,
)
from cdga.models import ModelSpec, build_model


def mean_ce(features, weights_flat, labels, shape):
    """Mean cross-entropy of the linear softmax head, for differencing."""
    W = weights_flat.reshape(shape)
    logits = features @ W.T
    p = softmax_rows(logits)
    return float(-np.log(p[np.arange(len(labels)), labels]).mean())


def finite_difference_hessian(features, weights, labels, eps=1e-4):
    """Central second differences of the mean CE loss wrt flattened weights."""
    shape = weights.shape
    w0 = weights.reshape(-1).astype(np.float64)
    d = w0.size
    H = np.empty((d, d))
    for i in range(d):
        for j in range(i, d):
            ei = np.zeros(d)
            ej = np.zeros(d)
            ei[i] = eps
            ej[j] = eps
            fpp = mean_ce(features, w0 + ei + ej, labels, shape)
            fpm = mean_ce(features, w0 + ei - ej, labels, shape)
            fmp = mean_ce(features, w0 - ei + ej, labels, shape)
            fmm = mean_ce(features, w0 - ei - ej, labels, shape)
            H[i, j] = H[j, i] = (fpp - fpm - fmp + fmm) / (4 * eps * eps)
    return H


class TestClosedForm:
    def test_matches_finite_differences_across_fixtures(self):
        # The loss Hessian does not depend on labels (softmax CE curvature
        # is label-free), so any labels work for the numeric check.
        rng = np.random.default_rng(42)
        for trial in range(20):
            n = int(rng.integers(2, 8))
            d = int(rng.integers(2, 4))
            c = int(rng.integers(2, 4))
            X = rng.normal(size=(n, d))
            W = rng.normal(size=(c, d)) * 0.5
            y = rng.integers(c, size=n)
            got = head_hessian_from_features(X, W).matrix
            want = finite_difference_hessian(X, W, y)
            rel = np.linalg.norm(got - want) / max(np.linalg.norm(want), 1e-12)
            assert rel < 1e-4, trial

    def test_single_sample_two_class_hand_formula(self):
        # One sample, C=2: S = p0 p1 [[1,-1],[-1,1]], H = S kron x x^T.
        x = np.array([[2.0, -1.0]])
        W = np.array([[0.3, 0.1], [-0.2, 0.4]])
        p = softmax_rows(x @ W.T)[0]
        s = p[0] * p[1]
        xxT = np.outer(x[0], x[0])
        expected = np.block([[s * xxT, -s * xxT], [-s * xxT, s * xxT]])
        got = head_hessian_from_features(x, W).matrix
        assert np.allclose(got, expected, atol=1e-12)

    def test_positive_semidefinite_and_symmetric(self):
        rng = np.random.default_rng(5)
        X = rng.normal(size=(30, 5))
        W = rng.normal(size=(4, 5))
        H = head_hessian_from_features(X, W).matrix
        assert np.allclose(H, H.T)
        eigs = np.linalg.eigvalsh(H)
        assert eigs.min() > -1e-10

    def test_zero_features_give_zero_hessian(self):
        H = head_hessian_from_features(np.zeros((4, 3)), np.ones((2, 3))).matrix
        assert np.all(H == 0.0)

    def test_dimension_and_input_validation(self):
        with pytest.raises(ValueError):
            head_hessian_from_features(np.ones((2, 3)), np.ones((2, 4)))
        with pytest.raises(ValueError):
            head_hessian_from_features(np.empty((0, 3)), np.ones((2, 3)))
        with pytest.raises(ValueError):
            head_hessian_from_features(np.full((2, 3), np.nan), np.ones((2, 3)))

    def test_metadata_carried(self):
        H = head_hessian_from_features(
            np.ones((3, 2)), np.ones((2, 2)), domain="art", step=100
        )
        assert (H.domain, H.step, H.n_samples) == ("art", 100, 3)
        assert H.dim == 4


class TestTorchAdapter:
    def test_matches_feature_level_computation(self):
        torch.manual_seed(0)
        model = build_model(ModelSpec(architecture="small_cnn", width=4),
                            num_classes=3, image_size=8)
        images = torch.rand(12, 3, 8, 8)
        got = classifier_head_hessian(model, images, domain="d").matrix
        with torch.no_grad():
            feats = model.features(images).double().numpy()
        weights = model.head.weight.detach().double().numpy()
        want = head_hessian_from_features(feats, weights).matrix
        assert np.allclose(got, want, atol=1e-12)

    def test_torch_autograd_oracle(self):
        # Independent oracle: autograd full Hessian of the head loss.
        torch.manual_seed(1)
        X = torch.randn(6, 3, dtype=torch.double)
        W = torch.randn(2, 3, dtype=torch.double)
        y = torch.tensor([0, 1, 0, 0, 1, 1])

        def loss_fn(w_flat):
            logits = X @ w_flat.reshape(2, 3).T
            return torch.nn.functional.cross_entropy(logits, y)

        want = torch.autograd.functional.hessian(loss_fn, W.reshape(-1)).numpy()
        got = head_hessian_from_features(X.numpy(), W.numpy()).matrix
        assert np.allclose(got, want, atol=1e-10)

    def test_bias_head_rejected(self):
        model = build_model(ModelSpec(architecture="small_cnn"), num_classes=2,
                            image_size=8)
        model.head = torch.nn.Linear(model.feature_dim, 2, bias=True)
        with pytest.raises(ValueError, match="bias"):
            classifier_head_hessian(model, torch.rand(2, 3, 8, 8))

    def test_batched_evaluation_matches_single_pass(self):
        torch.manual_seed(2)
        model = build_model(ModelSpec(architecture="linear"), num_classes=2,
                            image_size=6)
        images = torch.rand(10, 3, 6, 6)
        a = classifier_head_hessian(model, images, batch=3).matrix
        b = classifier_head_hessian(model, images, batch=256).matrix
        assert np.allclose(a, b, atol=1e-12)


class TestSpectralNorm:
    def test_diagonal_matrix(self):
        assert spectral_norm(np.diag([3.0, 1.0, -2.0])) == pytest.approx(3.0, abs=1e-8)

    def test_matches_dense_eigensolver(self):
        rng = np.random.default_rng(8)
        for _ in range(10):
            A = rng.normal(size=(12, 12))
            M = (A + A.T) / 2
            want = float(np.abs(np.linalg.eigvalsh(M)).max())
            assert spectral_norm(M) == pytest.approx(want, rel=1e-6)

    def test_negative_dominant_eigenvalue(self):
        M = np.diag([-5.0, 2.0])
        assert spectral_norm(M) == pytest.approx(5.0, abs=1e-8)

    def test_degenerate_cases(self):
        assert spectral_norm(np.zeros((4, 4))) == 0.0
        assert spectral_norm(np.empty((0, 0))) == 0.0
        with pytest.raises(ValueError):
            spectral_norm(np.ones((2, 3)))

    def test_dense_fallback_on_slow_convergence(self):
        # Two nearly tied eigenvalues of opposite sign stall power iteration;
        # the dense fallback must still land on the exact answer.
        M = np.diag([1.0, -1.0 + 1e-15])
        assert spectral_norm(M, max_iter=3) == pytest.approx(1.0, abs=1e-12)


class TestHessianDistance:
    def rand_hessian(self, seed, domain="d"):
        rng = np.random.default_rng(seed)
        X = rng.normal(size=(20, 3))
        W = rng.normal(size=(2, 3))
        return head_hessian_from_features(X, W, domain=domain)

    def test_zero_distance_to_self(self):
        h = self.rand_hessian(0)
        assert hessian_distance(h, h) == 0.0

    def test_symmetry_and_triangle_inequality(self):
        a, b, c = (self.rand_hessian(s) for s in (1, 2, 3))
        dab = hessian_distance(a, b)
        dba = hessian_distance(b, a)
        assert dab == pytest.approx(dba, rel=1e-9)
        assert dab <= hessian_distance(a, c) + hessian_distance(c, b) + 1e-6

    def test_matches_dense_norm_of_difference(self):
        a, b = self.rand_hessian(4), self.rand_hessian(5)
        want = float(np.abs(np.linalg.eigvalsh(a.matrix - b.matrix)).max())
        assert hessian_distance(a, b) == pytest.approx(want, rel=1e-6)

    def test_dimension_mismatch(self):
        a = self.rand_hessian(0)
        b = head_hessian_from_features(np.ones((2, 2)), np.ones((2, 2)))
        with pytest.raises(ValueError):
            hessian_distance(a, b)


class TestHeadHessianType:
    def test_validation(self):
        with pytest.raises(ValueError):
            HeadHessian(matrix=np.ones((2, 3)), domain="d")
        with pytest.raises(ValueError):
            HeadHessian(matrix=np.array([[0.0, 1.0], [0.0, 0.0]]), domain="d")
        with pytest.raises(ValueError):
            HeadHessian(matrix=np.full((2, 2), np.inf), domain="d")
