import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from feddec import algorithms as alg
from feddec import graphs, mixing as mx, problem as prob
from feddec import theory as th
from feddec.graphs import Graph
from feddec.rng import stream


def make_tc(**over):
    base = dict(alpha=0.5, gamma=20.0, lambda2_hat=1 / 3, mu=0.1, L=0.8, g_sq=4.0, sigma_bar_sq=2.0,
                gamma_het=3.0, K=2, H=10, n=10, initial_distance_sq=5.0)
    base.update(over)
    return th.TheoryConstants(**base)


def test_b_recomputes_from_parts():
    tc = make_tc()
    assert tc.B == pytest.approx((4 / 2 + 8) * 0.5 * 10 * 4.0 + 6 * 0.8 * 3.0 + 2.0 / 10)


def test_bound_halves_when_gamma_plus_t_doubles():
    tc = make_tc()
    for t0 in (1, 7, 100):
        assert th.theorem_bound(tc, th.bound_halving_time(tc, t0)) == pytest.approx(th.theorem_bound(tc, t0) / 2, rel=1e-13)


def test_bound_decreases_and_rejects_t_zero():
    tc = make_tc()
    vals = th.theorem_bound(tc, np.arange(1, 1000))
    assert np.all(np.diff(vals) < 0)
    with pytest.raises(ValueError):
        th.theorem_bound(tc, 0)


def test_zero_alpha_drops_h_and_k():
    a = make_tc(alpha=0.0, H=10, K=1)
    b = make_tc(alpha=0.0, H=500, K=7)
    assert a.B == b.B == pytest.approx(6 * 0.8 * 3.0 + 2.0 / 10)


def test_bound_is_sum_of_two_linear_terms():
    tc = make_tc()
    only_b = make_tc(initial_distance_sq=0.0)
    only_d = th.TheoryConstants(**{**tc.__dict__, "alpha": 0.0, "gamma_het": 0.0, "sigma_bar_sq": 0.0})
    t = np.arange(1, 50)
    np.testing.assert_allclose(th.theorem_bound(tc, t), th.theorem_bound(only_b, t) + th.theorem_bound(only_d, t), rtol=1e-13)
    double_dist = make_tc(initial_distance_sq=10.0, alpha=0.0, gamma_het=0.0, sigma_bar_sq=0.0)
    np.testing.assert_allclose(th.theorem_bound(double_dist, t), 2 * th.theorem_bound(only_d, t), rtol=1e-13)


@pytest.mark.parametrize("field, values, increasing", [
    ("alpha", [0.0, 0.1, 1.0, 9.0], True),
    ("H", [1, 10, 100], True),
    ("g_sq", [0.1, 1.0, 10.0], True),
    ("gamma_het", [0.0, 1.0, 5.0], True),
    ("sigma_bar_sq", [0.0, 1.0, 5.0], True),
    ("K", [1, 2, 5, 20], False),
])
def test_b_monotonicity(field, values, increasing):
    bs = [make_tc(**{field: v}).B for v in values]
    diffs = np.diff(bs)
    assert np.all(diffs > 0) if increasing else np.all(diffs < 0)


def test_doubling_h_doubles_the_local_update_term():
    first = lambda tc: tc.B - 6 * tc.L * tc.gamma_het - tc.sigma_bar_sq / tc.n  # noqa: E731
    assert first(make_tc(H=20)) == pytest.approx(2 * first(make_tc(H=10)), rel=1e-14)


def test_lemma4_zero_b():
    res = th.lemma4_sequence_check(mu=0.5, gamma=10.0, B=0.0, delta1=3.0, T=5000)
    assert res.passed and res.max_ratio <= 1


def test_lemma4_zero_start():
    assert th.lemma4_sequence_check(mu=1.0, gamma=8.0, B=1.0, delta1=0.0, T=10**6).passed


def test_lemma4_generic():
    assert th.lemma4_sequence_check(mu=1.0, gamma=8.0, B=1.0, delta1=5.0, T=10**5).passed


def test_lemma4_ratio_matches_exact_rational_recursion():
    from fractions import Fraction as F
    mu, gamma, B, d1, T = F(1, 2), F(9), F(3), F(7), 300
    v = max(4 * B / mu**2, (gamma + 1) * d1)
    delta, worst = d1, F(0)
    for t in range(1, T + 1):
        worst = max(worst, delta * (gamma + t) / v)
        eta = 2 / (mu * (gamma + t))
        delta = (1 - mu * eta) * delta + eta * eta * B
    res = th.lemma4_sequence_check(0.5, 9.0, 3.0, 7.0, T)
    assert res.passed and res.first_violation is None
    assert res.max_ratio == pytest.approx(float(worst), rel=1e-12)


def test_lemma4_rejects_bad_inputs():
    with pytest.raises(ValueError):
        th.lemma4_sequence_check(0.0, 1.0, 1.0, 1.0, 10)
    with pytest.raises(ValueError):
        th.lemma4_sequence_check(1.0, 1.0, -1.0, 1.0, 10)


@settings(max_examples=25, deadline=None)
@given(mu=st.floats(0.01, 10), gamma=st.floats(1, 500), B=st.floats(0, 1e3), d1=st.floats(0, 1e3))
def test_lemma4_random_parameters(mu, gamma, B, d1):
    assert th.lemma4_sequence_check(mu, gamma, B, d1, 2000).passed


@pytest.fixture(scope="module")
def monitored():
    p = prob.generate_synthetic(10, 5, 20, 1.5, rng=stream(0, "data"))
    c = prob.constants(p)
    g = graphs.generate_connected("geographic", 10, 0.35, stream(0, "graph"))[0].union(Graph.path(10))
    model = mx.MixingModel(g)
    cfg = alg.RunConfig(T=200, H=10, K=2, record_consensus=True, record_snapshots=True)
    traces = [alg.run(p, model, alg.RunConfig(**{**cfg.__dict__, "seed": s}), c) for s in range(4)]
    spectral = mx.lambda2_hat(model)
    tc = th.TheoryConstants.from_measurements(c, spectral, 2, 10, 10, th.measured_g_sq(traces))
    return p, c, model, traces, tc


def test_from_measurements(monitored):
    p, c, model, traces, tc = monitored
    assert tc.gamma == alg.default_gamma(c.L, c.mu, 10) == traces[0].gamma
    assert tc.initial_distance_sq == pytest.approx(c.z_star @ c.z_star)
    assert tc.alpha > 0


def test_lemma2_monitor(monitored):
    _, _, _, traces, tc = monitored
    rep = th.lemma2_monitor(traces, tc)
    assert rep.passed
    assert np.all(rep.empirical[rep.t % 10 == 0] == 0)
    assert 0 < rep.max_ratio <= 1


def test_lemma2_needs_consensus(monitored):
    p, c, model, _, tc = monitored
    bare = alg.run(p, model, alg.RunConfig(T=20, H=10), c)
    with pytest.raises(ValueError):
        th.lemma2_monitor([bare], tc)


def test_lemma2_zero_alpha_is_reported_not_judged(monitored):
    p, c, _, _, tc = monitored
    complete = mx.MixingModel(Graph.complete(10))
    spectral = mx.lambda2_hat(complete)
    traces = [alg.run(p, complete, alg.RunConfig(T=50, H=10, record_consensus=True), c)]
    tc0 = th.TheoryConstants.from_measurements(c, spectral, 2, 10, 10, th.measured_g_sq(traces))
    rep = th.lemma2_monitor(traces, tc0)
    assert rep.excluded and rep.passed is None


def test_lemma3_monitor(monitored):
    _, _, _, traces, tc = monitored
    rep = th.lemma3_monitor(traces, tc, n_resamples=2000)
    assert rep.passed
    np.testing.assert_array_equal(rep.t, np.arange(10, 201, 10))


def test_sampling_variance_matches_closed_form(rng):
    x = rng.normal(size=(8, 3))
    spread = np.mean(np.sum((x - x.mean(0)) ** 2, axis=1))
    for K in (1, 2, 5):
        est = th.sampling_variance(x, K, 40_000, np.random.default_rng(K))
        assert est == pytest.approx(spread / K, rel=0.05)
    assert th.sampling_variance(np.ones((6, 2)), 3, 100, np.random.default_rng(0)) == 0.0


def test_envelope_check(monitored):
    _, _, _, traces, tc = monitored
    rep = th.envelope_check(traces, tc)
    assert rep.passed
    assert rep.t.min() > tc.gamma


def test_monitor_report_files(tmp_path, monitored):
    _, _, _, traces, tc = monitored
    rep = th.lemma2_monitor(traces, tc)
    rep.write(tmp_path / "lemma2", "config_hash=x seed=0")
    kv = (tmp_path / "lemma2.txt").read_text().splitlines()
    assert kv[0].startswith("#") and "passed=True" in kv
    csv = (tmp_path / "lemma2.csv").read_text().splitlines()
    assert csv[1] == "t,empirical,bound,ratio"
    assert len(csv) == 2 + rep.t.size
