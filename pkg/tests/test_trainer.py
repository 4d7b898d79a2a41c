"""Training rounds: sampling, local SGD, alignment, aggregation, full loops."""

import math

import numpy as np
import pytest

from entrofed.aggregation import EbaConfig
from entrofed.core import SeededRng, softmax_temperature
from entrofed.objectives import LocalObjective, QuadraticObjective
from entrofed.trainer import (
    Client,
    Federation,
    TrainerConfig,
    aggregate_model_alignment,
    aggregate_plain,
    compute_fair_gradient,
    local_sgd,
    local_sgd_aligned,
    run_round,
    run_training,
    sample_clients,
    server_update,
)

SOFTMAX_0_45_TAU1 = (0.0109869426305931800, 0.9890130573694068200)


class FlatObjective(LocalObjective):
    """Zero gradient everywhere; isolates the fair-gradient accumulation."""

    def __init__(self, dim):
        self._dim = dim

    @property
    def dimension(self):
        return self._dim

    @property
    def full_size(self):
        return 1

    def loss(self, x, subset=None):
        return 1.0

    def gradient(self, x, subset=None):
        return np.zeros(self._dim)


def toy_federation():
    return Federation(
        (Client(QuadraticObjective(2, 2)), Client(QuadraticObjective(0.5, -4)))
    )


def quadratic_federation(seed=123, m=10, scale=0.5):
    rng = SeededRng(seed)
    curvatures = 0.3 + 0.5 * rng.uniforms(m)
    centers = scale * (2 * rng.uniforms(m) - 1)
    return Federation(
        tuple(Client(QuadraticObjective(a, c)) for a, c in zip(curvatures, centers))
    )


class TestSampleClients:
    def test_full_participation(self):
        assert sample_clients(5, 5, SeededRng(0)).tolist() == [0, 1, 2, 3, 4]

    def test_deterministic(self):
        a = sample_clients(20, 7, SeededRng(42))
        b = sample_clients(20, 7, SeededRng(42))
        assert np.array_equal(a, b)

    def test_rejects_oversampling(self):
        with pytest.raises(ValueError):
            sample_clients(3, 4, SeededRng(0))

    def test_single_draw_frequencies(self):
        # 10^4 one-client draws from 10 clients: binomial(10^4, 0.1) says each
        # count lands within 3 sigma = 90 of 1000.
        root = SeededRng(7)
        counts = np.zeros(10, dtype=int)
        for t in range(10_000):
            counts[sample_clients(10, 1, root.derive(101, t))[0]] += 1
        assert counts.min() >= 910 and counts.max() <= 1090


class TestFairGradient:
    def test_equal_losses_average(self):
        g = compute_fair_gradient([np.array([2.0, 0.0]), np.array([0.0, 4.0])], [1.0, 1.0], 0.5)
        assert g == pytest.approx([1.0, 2.0], abs=1e-15)

    def test_basis_vectors_expose_weights(self):
        g = compute_fair_gradient(
            [np.array([1.0, 0.0]), np.array([0.0, 1.0])], [0.0, 4.5], 1.0
        )
        assert g == pytest.approx(SOFTMAX_0_45_TAU1, abs=1e-12)

    def test_single_client_passthrough(self):
        g = compute_fair_gradient([np.array([3.0, -1.0])], [2.0], 1.0)
        assert g == pytest.approx([3.0, -1.0], abs=1e-15)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError, match="dimension"):
            compute_fair_gradient([np.zeros(2), np.zeros(3)], [1.0, 2.0], 1.0)


class TestLocalSgd:
    def test_toy_single_steps(self):
        pk1 = local_sgd(QuadraticObjective(2, 2), np.zeros(1), 1, 0.25)
        assert pk1.delta[0] == 2.0 and pk1.one_step_delta[0] == 2.0
        pk2 = local_sgd(QuadraticObjective(0.5, -4), np.zeros(1), 1, 0.25)
        assert pk2.delta[0] == -1.0
        assert pk1.start_loss == 8.0 and pk2.start_loss == 8.0

    def test_one_step_equals_full_delta_at_k1(self):
        pk = local_sgd(QuadraticObjective(1.5, 0.7), np.array([3.0]), 1, 0.1)
        assert np.array_equal(pk.delta, pk.one_step_delta)

    def test_matches_closed_form_for_k_steps(self):
        a, c, lr, k = 0.8, -2.0, 0.2, 7
        x0 = np.array([1.0])
        pk = local_sgd(QuadraticObjective(a, c), x0, k, lr)
        expected = c + (1 - 2 * a * lr) ** k * (x0[0] - c) - x0[0]
        assert pk.delta[0] == pytest.approx(expected, abs=1e-12)

    def test_minibatch_stream_is_seeded(self):
        from entrofed.objectives import ClassifierObjective

        rng = SeededRng(5)
        feats = rng.normals(60).reshape(30, 2)
        labels = rng.integers(30, 3)
        obj = ClassifierObjective(feats, labels, 3)
        x0 = np.zeros(obj.dimension)
        a = local_sgd(obj, x0, 5, 0.1, batch_size=8, rng=SeededRng(99))
        b = local_sgd(obj, x0, 5, 0.1, batch_size=8, rng=SeededRng(99))
        assert np.array_equal(a.delta, b.delta)
        c = local_sgd(obj, x0, 5, 0.1, batch_size=8, rng=SeededRng(100))
        assert not np.array_equal(a.delta, c.delta)

    def test_requires_rng_for_minibatches(self):
        from entrofed.objectives import ClassifierObjective

        rng = SeededRng(6)
        obj = ClassifierObjective(rng.normals(20).reshape(10, 2), rng.integers(10, 2), 2)
        with pytest.raises(ValueError, match="SeededRng"):
            local_sgd(obj, np.zeros(obj.dimension), 2, 0.1, batch_size=4)


class TestLocalSgdAligned:
    def test_alpha_zero_matches_plain(self):
        obj = QuadraticObjective(1.2, 0.5)
        x0 = np.array([2.0])
        plain = local_sgd(obj, x0, 4, 0.1)
        aligned = local_sgd_aligned(obj, x0, 4, 0.1, 0.0, np.array([9.0]))
        assert np.array_equal(plain.delta, aligned.delta)

    def test_alpha_one_ignores_local_data(self):
        obj = QuadraticObjective(3.0, -1.0)
        g_fair = np.array([0.7])
        pk = local_sgd_aligned(obj, np.array([5.0]), 6, 0.1, 1.0, g_fair)
        assert pk.delta[0] == pytest.approx(-0.1 * 6 * 0.7, abs=1e-12)

    def test_zero_local_gradient_accumulates_fair_share(self):
        obj = FlatObjective(3)
        g_fair = np.array([1.0, -2.0, 0.5])
        pk = local_sgd_aligned(obj, np.zeros(3), 5, 0.2, 0.5, g_fair)
        assert pk.delta == pytest.approx(-0.2 * 5 * 0.5 * g_fair, abs=1e-15)
        assert pk.one_step_delta is None

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError, match="dimension"):
            local_sgd_aligned(QuadraticObjective(1, 0), np.zeros(1), 1, 0.1, 0.5, np.zeros(2))


class TestAggregation:
    def test_plain_uniform_mean(self):
        from entrofed.trainer import UpdatePacket

        pks = [
            UpdatePacket(i, np.array([float(v)]), np.array([float(v)]), 1.0, 1.0, 1)
            for i, v in enumerate([2.0, -1.0])
        ]
        assert aggregate_plain(pks, [0.5, 0.5])[0] == 0.5

    def test_plain_one_hot(self):
        from entrofed.trainer import UpdatePacket

        pks = [
            UpdatePacket(i, np.array([v]), None, 1.0, 1.0, 1)
            for i, v in enumerate([2.0, -1.0])
        ]
        assert aggregate_plain(pks, [0.0, 1.0])[0] == -1.0

    def test_plain_toy_entropy_weights(self):
        from entrofed.trainer import UpdatePacket

        pks = [
            UpdatePacket(i, np.array([v]), None, 1.0, 1.0, 1)
            for i, v in enumerate([2.0, -1.0])
        ]
        p = softmax_temperature([0.0, 4.5], 1.0)
        out = aggregate_plain(pks, p)
        assert out[0] == pytest.approx(3 * SOFTMAX_0_45_TAU1[0] - 1, abs=1e-12)

    def test_model_alignment_blend(self):
        from entrofed.trainer import UpdatePacket

        pks = [
            UpdatePacket(0, np.array([2.0]), np.array([1.0]), 1.0, 1.0, 1),
            UpdatePacket(1, np.array([-1.0]), np.array([-0.5]), 1.0, 1.0, 1),
        ]
        assert aggregate_model_alignment(pks, [0.5, 0.5], 0.0)[0] == 0.5
        assert aggregate_model_alignment(pks, [0.5, 0.5], 1.0)[0] == 0.25
        blended = aggregate_model_alignment(pks, [0.9, 0.1], 0.5)
        assert blended[0] == pytest.approx(0.5 * (0.9 * 2 - 0.1) + 0.5 * 0.25, abs=1e-15)

    def test_alignment_requires_one_step_deltas(self):
        from entrofed.trainer import UpdatePacket

        pks = [UpdatePacket(0, np.array([1.0]), None, 1.0, 1.0, 1)]
        with pytest.raises(ValueError, match="one_step_delta"):
            aggregate_model_alignment(pks, [1.0], 0.5)

    def test_weighted_aggregate_bracketing(self):
        from entrofed.trainer import UpdatePacket

        rng = SeededRng(11)
        for _ in range(100):
            deltas = rng.normals(5 * 3).reshape(5, 3)
            p = rng.dirichlet(1.0, 5)
            pks = [
                UpdatePacket(i, deltas[i], None, 1.0, 1.0, 1) for i in range(5)
            ]
            agg = aggregate_plain(pks, p)
            lo, hi = deltas.min(axis=0), deltas.max(axis=0)
            assert np.all(agg >= lo - 1e-12) and np.all(agg <= hi + 1e-12)

    def test_server_update(self):
        x = np.array([1.0, -1.0])
        assert np.array_equal(server_update(x, np.zeros(2), 1.0), x)
        assert server_update(np.zeros(1), np.array([0.5]), 1.0)[0] == 0.5
        assert server_update(np.zeros(2), np.array([1.0, -1.0]), 2.0).tolist() == [2.0, -2.0]
        with pytest.raises(ValueError):
            server_update(np.zeros(2), np.zeros(3), 1.0)


class TestRunRound:
    def _cfg(self, **over):
        base = dict(
            rounds=1,
            local_steps=2,
            clients_per_round=2,
            local_lr=0.05,
            alpha=0.5,
            theta=math.pi,
            eba=EbaConfig(tau0=1.0),
            method="fedeba_plus",
            seed=3,
        )
        base.update(over)
        return TrainerConfig(**base)

    def test_branch_matches_angle_threshold(self):
        fed = quadratic_federation(scale=1.0)
        for theta in (0.0, 0.2, math.pi / 2, math.pi):
            cfg = self._cfg(theta=theta, clients_per_round=10)
            x = np.zeros(1)
            root = SeededRng(cfg.seed)
            for t in range(1, 12):
                x, report = run_round(fed, x, cfg, t, root)
                assert (report.branch == "aligned") == (report.angle > theta)
                assert report.extra_comm == (report.branch == "aligned")

    def test_wide_thresholds_never_align(self):
        import dataclasses

        fed = quadratic_federation()
        for theta in (math.pi / 2, math.pi):
            cfg = dataclasses.replace(self._cfg(theta=theta, clients_per_round=10), rounds=40)
            reports, _ = run_training(fed, cfg)
            assert sum(r.extra_comm for r in reports) == 0

    def test_identical_clients_reduce_to_single_delta(self):
        fed = Federation(tuple(Client(QuadraticObjective(1.0, 2.0)) for _ in range(4)))
        # K=1: full and one-step deltas coincide, so the aggregate equals the
        # common client delta for any alpha.
        cfg = self._cfg(clients_per_round=4, theta=math.pi / 2, local_steps=1)
        x = np.array([0.5])
        x_next, report = run_round(fed, x, cfg, 1, SeededRng(0))
        single = local_sgd(QuadraticObjective(1.0, 2.0), x, 1, 0.05)
        assert report.branch == "plain" and report.angle == 0.0
        assert x_next[0] == pytest.approx(x[0] + single.delta[0], abs=1e-12)

    def test_identical_clients_blend_matches_single_client(self):
        fed = Federation(tuple(Client(QuadraticObjective(1.0, 2.0)) for _ in range(4)))
        cfg = self._cfg(clients_per_round=4, theta=math.pi / 2, local_steps=2)
        x = np.array([0.5])
        x_next, _ = run_round(fed, x, cfg, 1, SeededRng(0))
        single = local_sgd(QuadraticObjective(1.0, 2.0), x, 2, 0.05)
        blended = 0.5 * single.delta[0] + 0.5 * single.one_step_delta[0]
        assert x_next[0] == pytest.approx(x[0] + blended, abs=1e-12)

    def test_round_weights_are_simplex(self):
        fed = quadratic_federation()
        cfg = self._cfg(clients_per_round=6)
        _, report = run_round(fed, np.zeros(1), cfg, 1, SeededRng(1))
        assert np.all(report.weights > 0)
        assert abs(report.weights.sum() - 1.0) < 1e-9
        assert len(report.sampled) == 6


class TestRunTraining:
    def test_fedavg_toy_converges_to_balanced_minimizer(self):
        # Stationary point of the uniform mean of 2(x-2)^2 and (x+4)^2/2
        # solves 0.5*(4(x-2) + (x+4)) = 0, i.e. x = 0.8.
        cfg = TrainerConfig(
            rounds=2000,
            local_steps=1,
            clients_per_round=2,
            local_lr=0.05,
            alpha=0.0,
            method="fedavg",
            seed=0,
        )
        _, x = run_training(toy_federation(), cfg)
        assert abs(x[0] - 0.8) < 1e-3

    def test_entropy_weighted_stationarity_residual(self):
        # alpha=0, K=1: the fixed point satisfies sum_i p_i(x) grad_i(x) = 0
        # up to the O(local_lr) gap between end-of-round and current losses.
        fed = quadratic_federation(seed=5, scale=1.0)
        cfg = TrainerConfig(
            rounds=6000,
            local_steps=1,
            clients_per_round=10,
            local_lr=0.001,
            alpha=0.0,
            theta=math.pi,
            eba=EbaConfig(tau0=1.0),
            method="fedeba_plus",
            seed=2,
        )
        _, x = run_training(fed, cfg)
        losses = np.array([c.objective.loss(x) for c in fed.clients])
        grads = np.array([c.objective.gradient(x)[0] for c in fed.clients])
        p = softmax_temperature(losses, 1.0)
        assert abs(np.dot(p, grads)) < 1e-3

    def test_bitwise_deterministic_reports(self):
        fed = quadratic_federation()
        cfg = TrainerConfig(
            rounds=30,
            local_steps=3,
            clients_per_round=5,
            local_lr=0.05,
            method="fedeba_plus",
            seed=77,
        )
        r1, x1 = run_training(fed, cfg)
        r2, x2 = run_training(fed, cfg)
        assert np.array_equal(x1, x2)
        for a, b in zip(r1, r2):
            assert a.global_train_loss == b.global_train_loss
            assert a.angle == b.angle
            assert np.array_equal(a.weights, b.weights)
            assert np.array_equal(a.sampled, b.sampled)
            assert np.array_equal(a.test_losses, b.test_losses)

    def test_methods_share_sampling_streams(self):
        fed = quadratic_federation()
        kw = dict(rounds=25, local_steps=2, clients_per_round=4, local_lr=0.05, seed=13)
        r_avg, _ = run_training(fed, TrainerConfig(method="fedavg", **kw))
        r_eba, _ = run_training(fed, TrainerConfig(method="fedeba_plus", **kw))
        r_q, _ = run_training(fed, TrainerConfig(method="qffl", **kw))
        for a, b, c in zip(r_avg, r_eba, r_q):
            assert np.array_equal(a.sampled, b.sampled)
            assert np.array_equal(a.sampled, c.sampled)

    def test_degeneracy_chain_small(self):
        fed = quadratic_federation(seed=123)
        kw = dict(rounds=50, local_steps=3, clients_per_round=5, local_lr=0.05, seed=7)
        traj_avg, traj_eba = [], []
        run_training(
            fed,
            TrainerConfig(method="fedavg", alpha=0.0, eba=EbaConfig(prior="uniform"), **kw),
            on_round=lambda rep, x: traj_avg.append(x.copy()),
        )
        run_training(
            fed,
            TrainerConfig(
                method="fedeba_plus",
                alpha=0.0,
                theta=math.pi,
                eba=EbaConfig(tau0=1e9, prior="uniform"),
                **kw,
            ),
            on_round=lambda rep, x: traj_eba.append(x.copy()),
        )
        gap = max(np.abs(a - b).max() for a, b in zip(traj_avg, traj_eba))
        assert gap < 1e-9

    def test_qffl_runs_and_reports(self):
        fed = quadratic_federation(scale=1.0)
        cfg = TrainerConfig(
            rounds=20,
            local_steps=1,
            clients_per_round=10,
            local_lr=0.05,
            method="qffl",
            seed=3,
        )
        reports, x = run_training(fed, cfg)
        assert math.isnan(reports[-1].tau)
        assert all(r.branch == "plain" for r in reports)
        assert np.isfinite(x).all()

    def test_config_validation(self):
        with pytest.raises(ValueError):
            TrainerConfig(rounds=0, local_steps=1, clients_per_round=1, local_lr=0.1)
        with pytest.raises(ValueError):
            TrainerConfig(rounds=1, local_steps=1, clients_per_round=1, local_lr=0.1, alpha=1.5)
        with pytest.raises(ValueError):
            TrainerConfig(rounds=1, local_steps=1, clients_per_round=1, local_lr=0.1, theta=4.0)
        with pytest.raises(ValueError):
            TrainerConfig(rounds=1, local_steps=1, clients_per_round=1, local_lr=0.1, method="sgd")
