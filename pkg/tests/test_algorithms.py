from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from feddec import algorithms as alg
from feddec import graphs, mixing as mx, problem as prob
from feddec.graphs import Graph
from feddec.rng import stream


@pytest.fixture(scope="module")
def small():
    p = prob.generate_synthetic(8, 4, 12, 1.5, rng=stream(1, "data"))
    g = graphs.generate_connected("geographic", 8, 0.5, stream(1, "graph"))[0]
    return p, prob.constants(p), mx.MixingModel(g)


def test_step_size_examples():
    assert alg.step_size(1, 2.0, 1.0) == 0.5
    L, mu = 3.0, 0.5
    gamma = 8 * L / mu - 1
    assert alg.step_size(1, mu, gamma) == pytest.approx(1 / (4 * L))
    for bad in [(1, 0.0, 1.0), (1, 1.0, -1.0)]:
        with pytest.raises(ValueError):
            alg.step_size(*bad)


@settings(max_examples=200, deadline=None)
@given(t=st.integers(1, 10**6), H=st.integers(1, 500), mu=st.floats(1e-3, 10), extra=st.floats(0, 1000))
def test_step_size_halving_condition(t, H, mu, extra):
    gamma = H + extra
    assert alg.step_size(t, mu, gamma) <= 2 * alg.step_size(t + H, mu, gamma) * (1 + 1e-12)
    assert alg.step_size(t + 1, mu, gamma) < alg.step_size(t, mu, gamma)


def test_default_gamma_examples():
    assert alg.default_gamma(1.0, 1.0, 4) == 7.0
    assert alg.default_gamma(1.0, 1.0, 100) == 100.0
    assert alg.default_gamma(2.0, 0.5, 10) == 31.0


def test_sample_participants_single_node():
    np.testing.assert_array_equal(alg.sample_participants(5, 1, np.random.default_rng(0)), np.zeros(5))


def test_sample_participants_frequencies():
    K, n, rounds = 3, 7, 100_000
    pools = alg.sample_participants(K, n, np.random.default_rng(1), rounds=rounds)
    counts = np.bincount(pools.ravel(), minlength=n) / rounds
    se = np.sqrt(K * (1 / n) * (1 - 1 / n) / rounds)
    assert np.all(np.abs(counts - K / n) < 3 * se)


def test_sample_participants_duplicate_rate():
    pools = alg.sample_participants(2, 20, np.random.default_rng(2), rounds=100_000)
    dup = np.mean(pools[:, 0] == pools[:, 1])
    assert abs(dup - 1 / 20) < 3 * np.sqrt(0.05 * 0.95 / 100_000)


def test_consensus_residual_examples(rng):
    assert alg.consensus_residual(np.tile(rng.normal(size=4), (5, 1))) == 0.0
    u = np.array([1.0, -2.0, 0.5])
    assert alg.consensus_residual(np.stack([u, -u])) == pytest.approx(2 * u @ u)
    Z = rng.normal(size=(6, 4))
    zbar = Z.mean(axis=0)
    assert alg.consensus_residual(Z) == pytest.approx(np.sum(Z * Z) - 6 * zbar @ zbar, rel=1e-10)


def test_config_validation(small):
    p, c, model = small
    for bad in [dict(T=15, H=10), dict(K=0), dict(K=9), dict(H=0), dict(algo="sgd"), dict(m=0)]:
        with pytest.raises(ValueError):
            alg.run(p, model, alg.RunConfig(**{"T": 20, **bad}), c)


def test_run_is_deterministic(small):
    p, c, model = small
    cfg = alg.RunConfig(T=200, H=10, seed=3, record_consensus=True)
    a, b = alg.run(p, model, cfg, c), alg.run(p, model, cfg, c)
    np.testing.assert_array_equal(a.gap, b.gap)
    np.testing.assert_array_equal(a.consensus, b.consensus)
    assert a.server_rounds == b.server_rounds


def test_link_failures_are_deterministic(small):
    p, c, model = small
    flaky = mx.MixingModel(model.base_graph, 0.6)
    cfg = alg.RunConfig(T=100, H=10, seed=4)
    np.testing.assert_array_equal(alg.run(p, flaky, cfg, c).gap, alg.run(p, flaky, cfg, c).gap)


def test_feddec_with_identity_is_fedavg(small):
    p, c, _ = small
    cfg = alg.RunConfig(T=300, H=10, K=3, seed=5)
    a = alg.run(p, np.eye(p.n), cfg, c)
    b = alg.run(p, None, replace(cfg, algo="fedavg"), c)
    np.testing.assert_array_equal(a.gap, b.gap)
    np.testing.assert_array_equal(a.final_z, b.final_z)
    assert a.server_rounds == b.server_rounds


def test_fedavg_ignores_mixing(small):
    p, c, model = small
    cfg = alg.RunConfig(algo="fedavg", T=100, H=10, seed=6)
    np.testing.assert_array_equal(alg.run(p, model, cfg, c).gap, alg.run(p, None, cfg, c).gap)


def reference_minibatch_sgd(p1, T, m, seed, mu, gamma, f_star):
    """Plain single-machine mini-batch SGD with the same step sizes and batch stream."""
    cfg = alg.RunConfig(T=T, m=m, seed=seed, shared_batches=True, K=1, H=1)
    sampler = alg.BatchSampler(p1, cfg)
    z = np.zeros(p1.d)
    gaps = [prob.global_cost(p1, z) - f_star]
    for t in range(1, T + 1):
        idx = sampler.next()
        g = prob.batch_gradients(p1, z[None, :], idx)[0]
        z = z - (2.0 / (mu * (gamma + t))) * g
        gaps.append(prob.global_cost(p1, z) - f_star)
    return np.array(gaps), z


def test_full_participation_identical_data_is_minibatch_sgd():
    single = prob.generate_synthetic(1, 3, 9, 1.0, rng=np.random.default_rng(8))
    n = 2
    twin = prob.RegressionProblem(np.repeat(single.X, n, axis=0), np.repeat(single.Y, n, axis=0))
    c = prob.constants(twin, m=2)
    cfg = alg.RunConfig(T=300, H=1, K=n, m=2, seed=9, shared_batches=True)
    trace = alg.run(twin, np.eye(n), cfg, c)
    c1 = prob.constants(single, m=2)
    gaps, z = reference_minibatch_sgd(single, 300, 2, 9, c.mu, trace.gamma, c1.f_star)
    assert c.f_star == c1.f_star
    np.testing.assert_array_equal(trace.gap, gaps)
    np.testing.assert_array_equal(trace.final_z, z)


def test_single_node_exact_gradient_descent_is_monotone():
    rng = np.random.default_rng(1)
    p = prob.RegressionProblem(rng.normal(size=(1, 6, 3)), rng.normal(size=(1, 6)))
    trace = alg.run(p, None, alg.RunConfig(T=400, H=1, K=1, full_batch=True))
    after = trace.gap[trace.t > trace.gamma]
    assert after.size > 100
    assert np.all(np.diff(after) <= 0)
    assert trace.gap[-1] < trace.gap[0]


def test_full_batch_uses_exact_gradients(small):
    p, c, model = small
    cfg = alg.RunConfig(T=1, H=1, K=p.n, full_batch=True, gamma_override=50.0)
    z1 = np.linspace(-1, 1, p.d)
    trace = alg.run(p, None, cfg, c, z1=z1)
    eta = alg.step_size(1, c.mu, 50.0)
    step = np.array([z1 - eta * prob.full_gradient(p, i, z1) for i in range(p.n)])
    pool = np.array(trace.server_rounds[0][1])
    np.testing.assert_allclose(trace.final_z, step[pool].mean(axis=0), rtol=1e-12)


def test_consensus_is_zero_right_after_broadcast(small):
    p, c, model = small
    trace = alg.run(p, model, alg.RunConfig(T=200, H=10, seed=1, record_consensus=True), c)
    at_rounds = trace.consensus[(trace.t % 10 == 0)]
    assert at_rounds.size == 20
    assert np.all(at_rounds == 0.0)
    assert np.all(trace.consensus[trace.t % 10 == 5] > 0)


def test_server_rounds_follow_schedule(small):
    p, c, model = small
    trace = alg.run(p, model, alg.RunConfig(T=100, H=20, K=3, seed=2), c)
    assert [t for t, _ in trace.server_rounds] == [20, 40, 60, 80, 100]
    assert all(len(pool) == 3 for _, pool in trace.server_rounds)
    assert trace.server_messages == 5 * (3 + p.n)
    assert trace.peer_messages == 100 * 2 * model.base_graph.num_edges


def test_averaging_preserves_the_mean(small, rng):
    p, c, model = small
    flaky = mx.MixingModel(model.base_graph, 0.5)
    for _ in range(50):
        X = rng.normal(scale=1e3, size=(p.n, p.d))
        W = mx.sample_mixing(flaky, rng)
        np.testing.assert_allclose((W @ X).sum(axis=0), X.sum(axis=0), rtol=1e-9, atol=1e-9 * np.abs(X).sum())


def test_server_average_is_unbiased_in_expectation(rng):
    x = rng.normal(size=(10, 3))
    pools = alg.sample_participants(2, 10, np.random.default_rng(5), rounds=10_000)
    zbars = x[pools].mean(axis=1)
    se = zbars.std(axis=0, ddof=1) / np.sqrt(len(zbars))
    assert np.all(np.abs(zbars.mean(axis=0) - x.mean(axis=0)) < 3 * se)


def test_trace_row_layout(small):
    p, c, model = small
    trace = alg.run(p, model, alg.RunConfig(T=50, H=10, seed=0), c)
    np.testing.assert_array_equal(trace.t, np.arange(1, 52))
    assert trace.eta[0] == alg.step_size(1, c.mu, trace.gamma)
    assert trace.gap[0] == pytest.approx(prob.global_cost(p, np.zeros(p.d)) - c.f_star)
    assert np.all(trace.gap >= -1e-9)
    assert trace.grad_norm_max > 0


def test_logging_stride_for_long_runs():
    assert alg.RunConfig(T=20_000, H=10).logging_stride == 2
    assert alg.RunConfig(T=5000, H=10).logging_stride == 1
    p = prob.generate_synthetic(3, 2, 4, 1.0, rng=np.random.default_rng(0))
    trace = alg.run(p, None, alg.RunConfig(T=100, H=10, K=1, log_every=25))
    np.testing.assert_array_equal(trace.t, [1, 26, 51, 76, 101])


def test_divergence_is_reported(small):
    p, c, model = small
    with pytest.raises(alg.DivergenceError) as info:
        alg.run(p, model, alg.RunConfig(T=2000, H=10, gamma_override=1e-9), prob.ProblemConstants(c.z_star, c.f_star, 1e-6, c.L, 0, c.sigma_sq, 0))
    assert info.value.t >= 1
    assert 0 <= info.value.node < p.n


def test_csv_outputs(tmp_path, small):
    p, c, model = small
    trace = alg.run(p, model, alg.RunConfig(T=20, H=10, seed=0, record_consensus=True), c)
    trace.write_csv(tmp_path / "trace.csv", "config_hash=abc seed=0")
    lines = (tmp_path / "trace.csv").read_text().splitlines()
    assert lines[0] == "# config_hash=abc seed=0"
    assert lines[1] == "t,eta,gap,dist_sq,consensus"
    assert len(lines) == 2 + 21
    trace.write_server_csv(tmp_path / "rounds.csv")
    rows = (tmp_path / "rounds.csv").read_text().splitlines()
    assert rows[0] == "round_t,participant_indices"
    assert rows[1].startswith("10,")
