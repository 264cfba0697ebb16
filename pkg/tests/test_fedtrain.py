import math

import numpy as np
import pytest

from fpsentinel.errors import ConfigError, InfeasibleBudgetError, ValidationError
from fpsentinel.features import FeatureVector
from fpsentinel.fedtrain import (
    ClientShard,
    ClientUpdate,
    ModelParams,
    PrivacyBudget,
    TrainingConfig,
    aggregate_with_noise,
    clip_update,
    local_rng,
    local_train,
    partition_clients,
    predict,
    pretrain_centralized,
    run_federated_training,
    sgd_train,
    zipf_probabilities,
)
from fpsentinel.kernels import logistic_grad, sigmoid_scores
from fpsentinel.telemetry import WebsiteRecord


def fv(values, label, site="example.com", script_id="s"):
    return FeatureVector(values=np.asarray(values, dtype=np.float64), label=label,
                         script_id=script_id, site=site)


def separable_vectors(n=60, seed=0):
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        label = i % 2 == 1
        center = 2.5 if label else -2.5
        out.append(fv(rng.normal(center, 0.4, size=2), label, script_id=f"s{i}"))
    return out


class TestPretrain:
    def test_separable_reaches_full_accuracy(self):
        vectors = separable_vectors()
        params = pretrain_centralized(vectors, epochs=60, lr=0.5, seed=1)
        correct = sum(
            (predict(params, v) >= 0.5) == v.label for v in vectors
        )
        assert correct == len(vectors)

    def test_zero_epochs_returns_initialization(self):
        params = pretrain_centralized(separable_vectors(), epochs=0, lr=0.5, seed=1)
        assert not params.weights.any()
        assert params.bias == 0.0

    def test_empty_data_rejected(self):
        with pytest.raises(ValidationError):
            pretrain_centralized([], epochs=1, lr=0.1, seed=0)

    def test_single_class_warns(self):
        vectors = [fv([1.0, 0.0], True, script_id=f"s{i}") for i in range(4)]
        with pytest.warns(UserWarning):
            pretrain_centralized(vectors, epochs=1, lr=0.1, seed=0)

    def test_deterministic(self):
        a = pretrain_centralized(separable_vectors(), epochs=5, lr=0.3, seed=9)
        b = pretrain_centralized(separable_vectors(), epochs=5, lr=0.3, seed=9)
        np.testing.assert_array_equal(a.weights, b.weights)
        assert a.bias == b.bias


class TestGradient:
    def test_matches_finite_differences(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            n, d = int(rng.integers(2, 30)), int(rng.integers(1, 8))
            X = rng.normal(size=(n, d))
            y = (rng.random(n) > 0.5).astype(np.float64)
            w = rng.normal(size=d)
            b = float(rng.normal())
            gw, gb = logistic_grad(X, y, w, b)

            def loss(wv, bv):
                p = sigmoid_scores(X, wv, bv)
                p = np.clip(p, 1e-12, 1 - 1e-12)
                return float(-np.mean(y * np.log(p) + (1 - y) * np.log(1 - p)))

            h = 1e-6
            for j in range(d):
                e = np.zeros(d)
                e[j] = h
                fd = (loss(w + e, b) - loss(w - e, b)) / (2 * h)
                assert gw[j] == pytest.approx(fd, rel=1e-5, abs=1e-8)
            fd_b = (loss(w, b + h) - loss(w, b - h)) / (2 * h)
            assert gb == pytest.approx(fd_b, rel=1e-5, abs=1e-8)


class TestPartition:
    def _websites(self, n):
        return [WebsiteRecord(site=f"site-{i:03d}.example", rank=i + 1,
                              pages=(f"https://site-{i:03d}.example/",))
                for i in range(n)]

    def _vectors(self, n_sites, per_site=2):
        return [
            fv([float(i)], i % 7 == 0, site=f"site-{i:03d}.example", script_id=f"s{i}-{j}")
            for i in range(n_sites)
            for j in range(per_site)
        ]

    def test_single_client_gets_drawn_sites_vectors(self):
        websites = self._websites(5)
        vectors = self._vectors(5)
        shards = partition_clients(vectors, websites, total_clients=1, zipf_exponent=0.01,
                                   seed=0, visits_per_client=200)
        assert len(shards) == 1
        # With near-uniform sampling and far more draws than sites, the single
        # shard approaches the full dataset.
        assert len(shards[0].vectors) == len(vectors)

    def test_same_seed_identical(self):
        websites = self._websites(20)
        vectors = self._vectors(20)
        a = partition_clients(vectors, websites, 10, seed=5)
        b = partition_clients(vectors, websites, 10, seed=5)
        for sa, sb in zip(a, b):
            assert [id(v) for v in sa.vectors] == [id(v) for v in sb.vectors]

    def test_bad_parameters(self):
        with pytest.raises(ConfigError):
            partition_clients([], self._websites(2), 0)
        with pytest.raises(ConfigError):
            partition_clients([], self._websites(2), 2, zipf_exponent=0.0)

    def test_zipf_frequencies_match_closed_form(self):
        n_sites = 40
        exponent = 1.2
        websites = self._websites(n_sites)
        probs = zipf_probabilities(np.arange(1, n_sites + 1, dtype=np.float64), exponent)
        rng = np.random.default_rng(17)
        draws = rng.choice(n_sites, size=1_000_000, replace=True, p=probs)
        empirical = np.bincount(draws, minlength=n_sites) / draws.size
        tvd = 0.5 * np.abs(empirical - probs).sum()
        assert tvd < 0.01


class TestLocalTrain:
    def _cfg(self, **kw):
        defaults = dict(rounds=1, clients_per_round=1, total_clients=1, clip_norm=1.0,
                        noise_multiplier=0.0, local_epochs=1, local_lr=0.1, batch_size=4,
                        seed=0)
        defaults.update(kw)
        return TrainingConfig(**defaults)

    def test_zero_lr_zero_delta(self):
        shard = ClientShard(client_id=0, vectors=separable_vectors(8))
        params = ModelParams(weights=np.ones(2), bias=0.5)
        update = local_train(params, shard, self._cfg(local_lr=0.0))
        assert not update.delta.any()

    def test_single_example_matches_hand_gradient(self):
        x = np.array([2.0, -1.0])
        shard = ClientShard(client_id=0, vectors=[fv(x, True)])
        params = ModelParams(weights=np.array([0.5, 0.25]), bias=-0.3)
        lr = 0.2
        update = local_train(params, shard, self._cfg(local_lr=lr, batch_size=1))
        z = float(params.weights @ x + params.bias)
        residual = 1.0 / (1.0 + math.exp(-z)) - 1.0
        expected_w = -lr * residual * x
        expected_b = -lr * residual
        np.testing.assert_allclose(update.delta[:2], expected_w, rtol=1e-12)
        assert update.delta[2] == pytest.approx(expected_b, rel=1e-12)

    def test_identical_shards_identical_deltas(self):
        cfg = self._cfg(local_epochs=3)
        params = ModelParams(weights=np.zeros(2), bias=0.0)
        a = local_train(params, ClientShard(0, separable_vectors(12)), cfg)
        b = local_train(params, ClientShard(0, separable_vectors(12)), cfg)
        np.testing.assert_array_equal(a.delta, b.delta)

    def test_empty_shard_zero_update_flagged(self):
        params = ModelParams(weights=np.zeros(3), bias=0.0)
        update = local_train(params, ClientShard(0, []), self._cfg())
        assert update.empty is True
        assert not update.delta.any()


class TestClip:
    def test_under_bound_unchanged(self):
        u = ClientUpdate(delta=np.array([0.3, 0.4]), norm=0.5)
        clipped = clip_update(u, 1.0)
        np.testing.assert_array_equal(clipped.delta, u.delta)

    def test_over_bound_scaled_to_exactly_c(self):
        u = ClientUpdate(delta=np.array([3.0, 4.0]), norm=5.0)
        clipped = clip_update(u, 2.5)
        assert np.linalg.norm(clipped.delta) == pytest.approx(2.5)
        np.testing.assert_allclose(clipped.delta, np.array([1.5, 2.0]))

    def test_zero_passes_through(self):
        u = ClientUpdate(delta=np.zeros(4), norm=0.0)
        assert not clip_update(u, 1.0).delta.any()


class TestAggregate:
    def test_noiseless_single_update_identity(self):
        u = ClientUpdate(delta=np.array([1.0, -2.0]), norm=0.0)
        out = aggregate_with_noise([u], clip_norm=1.0, noise_multiplier=0.0,
                                   clients_per_round=1)
        np.testing.assert_array_equal(out, u.delta)

    def test_opposite_updates_cancel(self):
        u = ClientUpdate(delta=np.array([1.0, 2.0]), norm=0.0)
        v = ClientUpdate(delta=np.array([-1.0, -2.0]), norm=0.0)
        out = aggregate_with_noise([u, v], 1.0, 0.0, 2)
        np.testing.assert_array_equal(out, np.zeros(2))

    def test_empty_rejected(self):
        with pytest.raises(ValidationError):
            aggregate_with_noise([], 1.0, 0.0, 1)

    def test_noise_mean_unbiased(self):
        u = ClientUpdate(delta=np.array([2.0, -1.0, 0.5]), norm=0.0)
        n_seeds = 20_000
        total = np.zeros(3)
        for seed in range(n_seeds):
            total += aggregate_with_noise([u], clip_norm=1.0, noise_multiplier=1.0,
                                          clients_per_round=1, seed=seed)
        mean = total / n_seeds
        se = 1.0 / math.sqrt(n_seeds)
        np.testing.assert_allclose(mean, u.delta, atol=3 * se)

    def test_fixed_seed_matches_expected_draw(self):
        u = ClientUpdate(delta=np.zeros(2), norm=0.0)
        expected = np.random.default_rng(123).normal(0.0, 1.0, 2)
        out = aggregate_with_noise([u], 1.0, 1.0, 1, seed=123)
        np.testing.assert_allclose(out, expected)


class TestFederatedLoop:
    def _shard(self, seed=0):
        return ClientShard(client_id=0, vectors=separable_vectors(24, seed=seed))

    def test_zero_rounds_returns_init(self):
        init = ModelParams(weights=np.array([1.0, 2.0]), bias=0.3)
        cfg = TrainingConfig(rounds=0, clients_per_round=1, total_clients=1, seed=0)
        params, eps = run_federated_training(init, [self._shard()], cfg)
        np.testing.assert_array_equal(params.weights, init.weights)
        assert eps == 0.0

    def test_collapses_to_centralized_sgd(self):
        shard = self._shard()
        X = np.stack([v.values for v in shard.vectors])
        y = np.array([float(v.label) for v in shard.vectors])
        cfg = TrainingConfig(rounds=4, clients_per_round=1, total_clients=1,
                             clip_norm=1e9, noise_multiplier=0.0, local_epochs=2,
                             local_lr=0.2, batch_size=8, seed=13)
        fed, _ = run_federated_training(
            ModelParams(weights=np.zeros(2), bias=0.0), [shard], cfg)

        central = ModelParams(weights=np.zeros(2), bias=0.0)
        for round_idx in range(cfg.rounds):
            central = sgd_train(central, X, y, cfg.local_epochs, cfg.local_lr,
                                cfg.batch_size, local_rng(cfg.seed, 0, round_idx))
        np.testing.assert_allclose(fed.weights, central.weights, rtol=1e-9)
        assert fed.bias == pytest.approx(central.bias, rel=1e-9)

    def test_infeasible_budget_fails_before_training(self):
        cfg = TrainingConfig(rounds=5, clients_per_round=1, total_clients=1,
                             noise_multiplier=0.0, seed=0)
        with pytest.raises(InfeasibleBudgetError):
            run_federated_training(ModelParams(np.zeros(2), 0.0), [self._shard()],
                                   cfg, PrivacyBudget(epsilon=1.0))

    def test_budget_satisfied_reports_epsilon(self):
        cfg = TrainingConfig(rounds=2, clients_per_round=1, total_clients=1,
                             noise_multiplier=8.0, local_lr=0.1, seed=0)
        params, eps = run_federated_training(ModelParams(np.zeros(2), 0.0),
                                             [self._shard()], cfg,
                                             PrivacyBudget(epsilon=5.0))
        assert 0 < eps <= 5.0

    def test_deterministic(self):
        shards = [ClientShard(i, separable_vectors(10, seed=i)) for i in range(4)]
        cfg = TrainingConfig(rounds=3, clients_per_round=2, total_clients=4,
                             noise_multiplier=0.5, seed=21)
        a, _ = run_federated_training(ModelParams(np.zeros(2), 0.0), shards, cfg)
        b, _ = run_federated_training(ModelParams(np.zeros(2), 0.0), shards, cfg)
        np.testing.assert_array_equal(a.weights, b.weights)
        assert a.bias == b.bias

    def test_epsilon_grid_monotonicity(self):
        from fpsentinel.accountant import epsilon_for

        rounds_grid = (1, 2, 5, 10, 20)
        sigma_grid = (0.5, 1.0, 2.0, 4.0, 8.0)
        table = {
            (r, s): epsilon_for(s, r, 0.1, 1e-5) for r in rounds_grid for s in sigma_grid
        }
        for s in sigma_grid:
            eps = [table[(r, s)] for r in rounds_grid]
            assert all(a <= b for a, b in zip(eps, eps[1:]))
        for r in rounds_grid:
            eps = [table[(r, s)] for s in sigma_grid]
            assert all(a >= b for a, b in zip(eps, eps[1:]))


class TestPredict:
    def test_zero_model_is_half(self):
        params = ModelParams(weights=np.zeros(3), bias=0.0)
        assert predict(params, fv([1.0, 2.0, 3.0], False)) == 0.5

    def test_large_bias_saturates(self):
        params = ModelParams(weights=np.zeros(2), bias=50.0)
        assert predict(params, fv([0.0, 0.0], False)) == pytest.approx(1.0, abs=1e-9)

    def test_hand_computed_sigmoid(self):
        params = ModelParams(weights=np.array([1.0, -1.0]), bias=0.0)
        out = predict(params, fv([2.0, 1.0], False))
        assert out == pytest.approx(0.7310585786300049, abs=1e-12)

    def test_dimension_mismatch(self):
        params = ModelParams(weights=np.zeros(2), bias=0.0)
        with pytest.raises(ValidationError):
            predict(params, fv([1.0], False))
