"""Objectives and analytic gradients against a finite-difference oracle."""

import math

import numpy as np
import pytest

from dgossip.data import generate_synthetic
from dgossip.models import (
    ModelSpec,
    Shard,
    full_objective,
    init_params,
    loss_and_grad,
    quadratic_testbed,
)


def central_fd_grad(fn, x, h=1e-6):
    g = np.zeros_like(x)
    for i in range(len(x)):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (fn(x + e) - fn(x - e)) / (2 * h)
    return g


def assert_gradcheck(fn, analytic, x, h=1e-6, rtol=1e-5):
    """Central-difference check at the oracle's own resolution.

    The difference quotient carries rounding noise of roughly
    eps * |f| / h, so components smaller than noise / rtol cannot be
    validated relatively; they get an absolute allowance at the noise
    floor instead (a stronger statement than skipping them).
    """
    numeric = central_fd_grad(fn, x, h)
    atol = 1e-9 * max(1.0, abs(fn(x)))
    np.testing.assert_allclose(analytic, numeric, rtol=rtol, atol=atol)
    mask = np.abs(analytic) > atol / rtol  # relative check where resolvable
    if mask.any():
        rel = np.max(np.abs(analytic[mask] - numeric[mask]) / np.abs(analytic[mask]))
        assert rel < rtol


def toy_shard(seed=0, n=24, d=5, c=3):
    ds = generate_synthetic(c, d, n // c, 0.8, seed=seed)
    return Shard(ds.features, ds.labels)


class TestInitParams:
    def test_quadratic_starts_at_origin(self):
        spec = quadratic_testbed(2, 3, 1.0, seed=0)
        assert np.array_equal(init_params(spec, 5), np.zeros(3))

    def test_logistic_param_count(self):
        spec = ModelSpec(kind="logistic", dim=2, num_classes=2)
        assert spec.param_count() == 6
        assert init_params(spec, 0).shape == (6,)

    def test_mlp_param_count(self):
        spec = ModelSpec(kind="mlp", dim=4, num_classes=3, hidden=(8, 5))
        assert spec.param_count() == (4 * 8 + 8) + (8 * 5 + 5) + (5 * 3 + 3)

    def test_deterministic_and_bounded(self):
        spec = ModelSpec(kind="logistic", dim=7, num_classes=4)
        a = init_params(spec, 42)
        assert np.array_equal(a, init_params(spec, 42))
        bound = math.sqrt(6.0 / (7 + 4))
        assert np.abs(a).max() <= bound
        # biases (last num_classes entries) start at zero
        assert np.array_equal(a[-4:], np.zeros(4))


class TestQuadratic:
    def test_identity_objective_by_hand(self):
        spec = ModelSpec(
            kind="quadratic",
            quad_a=np.eye(2)[None],
            quad_b=np.zeros((1, 2)),
            quad_opt=np.zeros(2),
        )
        loss, grad = loss_and_grad(spec, np.array([1.0, 2.0]), shard=0)
        assert loss == pytest.approx(2.5)
        assert np.array_equal(grad, np.array([1.0, 2.0]))

    def test_testbed_optimum_is_stationary(self):
        spec = quadratic_testbed(4, 8, 1.0, seed=3)
        # independent oracle: solve with the raw stacked matrices
        x_star = np.linalg.solve(spec.quad_a.mean(axis=0), spec.quad_b.mean(axis=0))
        assert np.allclose(x_star, spec.quad_opt, atol=1e-12)
        _, grad = full_objective(spec, spec.quad_opt, list(range(4)))
        assert np.linalg.norm(grad) < 1e-10

    def test_eigenvalue_range(self):
        spec = quadratic_testbed(3, 6, 0.5, seed=9)
        for a in spec.quad_a:
            vals = np.linalg.eigvalsh(a)
            assert vals.min() >= 0.5 - 1e-9 and vals.max() <= 2.0 + 1e-9
            assert np.allclose(a, a.T, atol=1e-12)

    def test_zero_heterogeneity_with_shared_curvature(self):
        spec = quadratic_testbed(5, 4, 0.0, seed=1, identical_curvature=True)
        for i in range(5):
            _, g = loss_and_grad(spec, spec.quad_opt, shard=i)
            assert np.linalg.norm(g) < 1e-9

    def test_determinism(self):
        a = quadratic_testbed(3, 5, 1.0, seed=11)
        b = quadratic_testbed(3, 5, 1.0, seed=11)
        assert np.array_equal(a.quad_a, b.quad_a) and np.array_equal(a.quad_b, b.quad_b)

    def test_averaging_cancels_opposite_linear_terms(self):
        spec = ModelSpec(
            kind="quadratic",
            quad_a=np.stack([np.eye(2), np.eye(2)]),
            quad_b=np.array([[1.0, 0.0], [-1.0, 0.0]]),
            quad_opt=np.zeros(2),
        )
        _, grad = full_objective(spec, np.zeros(2), [0, 1])
        assert np.array_equal(grad, np.zeros(2))


class TestLogistic:
    def test_uniform_softmax_loss_at_zero(self):
        shard = toy_shard(c=2, n=20, d=3)
        spec = ModelSpec(kind="logistic", dim=3, num_classes=2)
        loss, _ = loss_and_grad(spec, np.zeros(spec.param_count()), shard)
        assert loss == pytest.approx(math.log(2), abs=1e-12)

    def test_gradient_matches_finite_differences(self, rng):
        shard = toy_shard()
        spec = ModelSpec(kind="logistic", dim=5, num_classes=3)
        for _ in range(5):
            x = rng.normal(size=spec.param_count())
            batch = rng.integers(0, len(shard), size=8)
            _, g = loss_and_grad(spec, x, shard, batch)
            assert_gradcheck(lambda v: loss_and_grad(spec, v, shard, batch)[0], g, x)

    def test_loss_nonnegative(self, rng):
        shard = toy_shard()
        spec = ModelSpec(kind="logistic", dim=5, num_classes=3)
        for _ in range(10):
            loss, _ = loss_and_grad(spec, rng.normal(size=spec.param_count()), shard)
            assert loss >= 0.0


class TestMlp:
    def test_gradient_matches_finite_differences(self, rng):
        shard = toy_shard()
        spec = ModelSpec(kind="mlp", dim=5, num_classes=3, hidden=(7, 4))
        for _ in range(5):
            x = rng.normal(size=spec.param_count()) * 0.7
            batch = rng.integers(0, len(shard), size=6)
            _, g = loss_and_grad(spec, x, shard, batch)
            assert_gradcheck(lambda v: loss_and_grad(spec, v, shard, batch)[0], g, x)

    def test_loss_nonnegative(self, rng):
        shard = toy_shard()
        spec = ModelSpec(kind="mlp", dim=5, num_classes=3, hidden=(6,))
        for _ in range(10):
            loss, _ = loss_and_grad(spec, rng.normal(size=spec.param_count()), shard)
            assert loss >= 0.0


class TestFullObjective:
    def test_single_client_identity(self):
        shard = toy_shard()
        spec = ModelSpec(kind="logistic", dim=5, num_classes=3)
        x = init_params(spec, 1)
        loss_full, grad_full = full_objective(spec, x, [shard])
        loss_one, grad_one = loss_and_grad(spec, x, shard)
        assert loss_full == loss_one
        assert np.array_equal(grad_full, grad_one)

    def test_equals_mean_of_client_losses(self, rng):
        spec = ModelSpec(kind="logistic", dim=5, num_classes=3)
        shards = [toy_shard(seed=s) for s in range(4)]
        x = rng.normal(size=spec.param_count())
        total, _ = full_objective(spec, x, shards)
        per_client = [loss_and_grad(spec, x, s)[0] for s in shards]
        assert abs(total - np.mean(per_client)) <= 1e-12
