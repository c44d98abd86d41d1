import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from geohdp import vmf
from geohdp.geo import latlon_to_unit
from geohdp.sampler import (Chain, SamplerConfig, c_log_target, customer_order, global_stream,
                            initialize, log_joint, mh_concentrations, mh_log_accept_ratio,
                            s_log_weights, sample_c, sample_s, sample_t, sample_z, sweep,
                            t_log_weights, worker_stream, z_log_weights, draw_log_categorical)
from geohdp.state import Dataset, GlobalSticks, State, default_hyperparams
from geohdp.synth import generate_planted
from util import frozen_state, oracle_s_probs, oracle_t_probs, oracle_z_probs, random_dataset

NORTH = np.array([0.0, 0.0, 1.0])


def toy_state(strict_views=None):
    locs = np.stack([latlon_to_unit(p) for p in [(40, -74), (41, -73), (-33, 151), (35, 139)]])
    views = [[0, 0, 1], [1, 2], [2, 2, 2, 0], [0]] if strict_views is None else strict_views
    data = Dataset(locs, views, 3)
    hyper = default_hyperparams(3, alpha_omega=0.8, alpha_phi=1.3, alpha_pi=0.7, gamma=0.4,
                                c0=0.5, m_c=math.log(10.0))
    t = [0, 0, 1, 1]
    s = [0, 0, 1, 2]
    z = [0, 0, 1, 1, 1, 1, 1, 1, 0, 0]
    return frozen_state(data, hyper, t, s, z, [8.0, 3.0, 20.0], [0.3, 0.25, 0.2], [0.45, 0.35])


def detached_t(d):
    state = toy_state()
    state.detach_cluster(d)
    state.prune()
    return state


# -- enumerated weights against the joint oracle -------------------------------------------
@pytest.mark.parametrize("d", range(4))
def test_t_weights_match_joint_ratios(d):
    state = detached_t(d)
    w = t_log_weights(d, state)
    p = np.exp(w - w.max())
    np.testing.assert_allclose(p / p.sum(), oracle_t_probs(state, d), rtol=1e-10)
    assert np.all(np.isfinite(w))


@pytest.mark.parametrize("d", range(4))
def test_s_weights_match_joint_ratios(d):
    state = toy_state()
    state.detach_location(d)
    state.prune()
    w = s_log_weights(d, state, 7.5)
    p = np.exp(w - w.max())
    np.testing.assert_allclose(p / p.sum(), oracle_s_probs(state, d, 7.5), rtol=1e-10)


@pytest.mark.parametrize("i", range(10))
def test_z_weights_match_joint_ratios(i):
    state = toy_state()
    d = int(state.data.owner[i])
    state.remove_view(d, i - int(state.data.offsets[d]))
    state.prune()
    w = z_log_weights(d, i - int(state.data.offsets[d]), state)
    p = np.exp(w - w.max())
    np.testing.assert_allclose(p / p.sum(), oracle_z_probs(state, i), rtol=1e-10)


def test_strict_mode_uses_fixed_counts():
    state = detached_t(0)
    h = state.hyper
    w = t_log_weights(0, state, strict=True)
    sd = state.s[0]
    zs = state.z[:3]
    expect = []
    for t in range(state.T):
        v = math.log(state.n_t[t])
        v += math.log(state.n_ts[t, sd] + h.alpha_phi * state.phi0.weights[sd])
        v -= math.log(state.n1_t[t] + h.alpha_phi)
        for z in zs:
            v += math.log(state.n_tz[t, z] + h.alpha_pi * state.pi0.weights[z])
            v -= math.log(state.n2_t[t] + h.alpha_pi)
        expect.append(v)
    new = math.log(h.alpha_omega) + math.log(state.phi0.weights[sd])
    new += sum(math.log(state.pi0.weights[z]) for z in zs)
    np.testing.assert_allclose(w, expect + [new], rtol=1e-12)


# -- sampling frequencies (small; the full-size check lives in the acceptance suite) ----
def _chi2_p(counts, p):
    keep = p > 0
    return stats.chisquare(counts[keep], counts.sum() * p[keep]).pvalue


def test_sample_t_frequencies():
    d = 1
    state = detached_t(d)
    p = oracle_t_probs(state, d)
    rng = np.random.default_rng(0)
    counts = np.zeros(p.size)
    for _ in range(20_000):
        k = sample_t(d, state, rng)
        counts[k] += 1
        state.detach_cluster(d)
        state.prune()
    assert _chi2_p(counts, p) > 0.001


def test_sample_z_frequencies():
    state = toy_state()
    state.remove_view(2, 1)
    state.prune()
    i = int(state.data.offsets[2]) + 1
    p = oracle_z_probs(state, i)
    pi0 = state.pi0.copy()
    rng = np.random.default_rng(1)
    counts = np.zeros(p.size)
    for _ in range(20_000):
        counts[sample_z(2, 1, state, rng)] += 1
        state.remove_view(2, 1)
        state.prune()
        state.pi0 = pi0.copy()
    assert _chi2_p(counts, p) > 0.001


# -- limiting cases -------------------------------------------------------------------------
def test_t_tiny_alpha_omega_picks_existing():
    state = toy_state()
    hyper = default_hyperparams(3, alpha_omega=1e-300)
    st2 = State.from_assignments(state.data, hyper, [0, 0, 0, 0], state.s, state.z, state.c,
                                 state.phi0, state.pi0)
    st2.detach_cluster(3)
    w = t_log_weights(3, st2)
    assert np.exp(w[-1] - w.max()) < 1e-250


def test_t_symmetric_clusters_equal_probability():
    locs = np.stack([latlon_to_unit((0, 0))] * 5)
    data = Dataset(locs, [[], [], [], [], []], 2)
    hyper = default_hyperparams(2)
    state = frozen_state(data, hyper, [0, 0, 1, 1, 0], [0, 0, 0, 0, 0], [], [5.0], [0.5], [])
    state.detach_cluster(4)
    w = t_log_weights(4, state)
    assert w[0] == pytest.approx(w[1], abs=1e-14)
    rng = np.random.default_rng(2)
    n = 100_000
    draws = np.array([draw_log_categorical(w[:2], rng) for _ in range(n)])
    assert abs(draws.mean() - 0.5) < 3 * math.sqrt(0.25 / n)


def test_s_uniform_limit_uses_prior_weights_only():
    state = toy_state()
    state.c[:] = 1e-12
    state.detach_location(0)
    hyper = state.hyper
    w = s_log_weights(0, state, 1e-12)
    t = state.t[0]
    expect = np.log(np.append(state.n_ts[t] + hyper.alpha_phi * state.phi0.weights,
                              hyper.alpha_phi * state.phi0.remainder))
    # c0 = 0.5 leaves a small location effect; remove it by hand
    prior = vmf.VmfPrior(hyper.vmf_prior.mu0, 1e-12, 0.0, 1.0)
    from geohdp.state import Hyperparams
    h2 = Hyperparams(hyper.alpha_phi0, hyper.alpha_pi0, hyper.alpha_omega, hyper.alpha_phi,
                     hyper.alpha_pi, hyper.catalog, prior)
    st2 = State.from_assignments(state.data, h2, state.t, state.s, state.z, state.c,
                                 state.phi0, state.pi0)
    w = s_log_weights(0, st2, 1e-12)
    np.testing.assert_allclose(w - w[0], expect - expect[0], atol=1e-9)


def test_s_antipodal_customer_prefers_new_factor():
    locs = np.stack([NORTH, NORTH, NORTH, -NORTH])
    data = Dataset(locs, [[], [], [], []], 1)
    hyper = default_hyperparams(1, mu0=NORTH)
    state = frozen_state(data, hyper, [0, 0, 0, 0], [0, 0, 0, 1], [], [50.0, 50.0], [0.3, 0.3], [])
    state.detach_location(2)
    assert oracle_s_probs(state, 2, 50.0)[0] > 0.99
    state.attach_location(2, 0)
    state.detach_location(3)
    state.prune()
    p = oracle_s_probs(state, 3, 50.0)
    assert p[1] > 0.999
    w = s_log_weights(3, state, 50.0)
    np.testing.assert_allclose(np.exp(w - w.max()) / np.exp(w - w.max()).sum(), p, rtol=1e-10)
    rng = np.random.default_rng(3)
    phi = state.phi0.copy()
    n = 10_000
    hits = 0
    for _ in range(n):
        # c_new is drawn from the prior here; every draw is far from -mu's factor
        hits += sample_s(3, state, rng) == 1
        state.detach_location(3)
        state.prune()
        state.phi0 = phi.copy()
    assert hits >= n - 3 * math.sqrt(n * 0.001) - 10


def test_empty_state_opens_new_factors():
    data = Dataset(NORTH[None, :], [[0, 1]], 2)
    state = State(data, default_hyperparams(2))
    rng = np.random.default_rng(4)
    assert t_log_weights(0, state).size == 1
    assert sample_t(0, state, rng) == 0 and state.T == 1
    assert s_log_weights(0, state, 5.0).size == 1
    assert sample_s(0, state, rng) == 0 and state.S == 1
    assert z_log_weights(0, 0, state).size == 1
    assert sample_z(0, 0, state, rng) == 0 and state.Z == 1


def test_z_single_item_catalog_uses_count_weights():
    data = Dataset(np.stack([NORTH, NORTH]), [[0, 0, 0], [0, 0]], 1)
    hyper = default_hyperparams(1)
    state = frozen_state(data, hyper, [0, 1], [0, 0], [0, 1, 1, 0, 0], [5.0], [0.6], [0.3, 0.5])
    state.remove_view(0, 0)
    w = z_log_weights(0, 0, state)
    h = hyper
    n_z = state.n_z
    expect = np.log(np.append(state.n_tz[0] + h.alpha_pi * state.pi0.weights,
                              h.alpha_pi * state.pi0.remainder))
    expect[:2] += np.log((state.n_zv[:, 0] + 0.1) / (n_z + 0.1))
    np.testing.assert_allclose(w, expect, rtol=1e-12)


# -- concentration MH -----------------------------------------------------------------------
def test_zero_step_always_accepted():
    state = toy_state()
    rng = np.random.default_rng(5)
    c = state.c.copy()
    acc = mh_concentrations(state, np.arange(state.S), rng, 0.0)
    assert acc.all() and np.array_equal(state.c, c)


def test_empty_factor_samples_prior():
    data = Dataset(np.zeros((0, 3)), [], 1)
    hyper = default_hyperparams(1, m_c=1.5, sigma_c=0.7)
    state = State(data, hyper)
    rng = np.random.default_rng(6)
    K = 1000
    for _ in range(K):
        state.new_location_factor(3.0, rng)
    # 1000 independent chains, 100 steps each after 50 of burn-in: 10^5 samples
    for _ in range(50):
        mh_concentrations(state, np.arange(K), rng, 1.0)
    logs = np.empty((100, K))
    for i in range(100):
        mh_concentrations(state, np.arange(K), rng, 1.0)
        logs[i] = np.log(state.c)
    # chain means are independent; their spread gives the standard error
    means = logs.mean(axis=0)
    assert abs(means.mean() - 1.5) < 3 * means.std(ddof=1) / math.sqrt(K)
    assert logs.std() == pytest.approx(0.7, rel=0.05)


@settings(max_examples=50, deadline=None)
@given(st.floats(0.01, 500.0), st.floats(0.01, 500.0), st.integers(0, 20),
       st.floats(0.0, 1.0))
def test_mh_detailed_balance(c, c2, n, frac):
    prior = vmf.VmfPrior(NORTH, 0.3, 2.0, 1.0)
    sv = frac * n * latlon_to_unit((20.0, 30.0))
    a = float(mh_log_accept_ratio(c, c2, n, sv, prior))
    b = float(mh_log_accept_ratio(c2, c, n, sv, prior))
    # target(c) q(c'|c) a(c->c') with q in c-space carrying a 1/c' Jacobian
    lhs = float(c_log_target(c, n, sv, prior)) - math.log(c2) + min(0.0, a)
    rhs = float(c_log_target(c2, n, sv, prior)) - math.log(c) + min(0.0, b)
    assert lhs == pytest.approx(rhs, abs=1e-10 * max(1.0, abs(lhs)))


def test_sample_c_leaves_tables_untouched():
    state = toy_state()
    before = state.counts()
    t, s, z = state.t.copy(), state.s.copy(), state.z.copy()
    rng = np.random.default_rng(7)
    for _ in range(200):
        for k in range(state.S):
            sample_c(k, state, rng)
    assert state.counts() == before
    assert np.array_equal(state.t, t) and np.array_equal(state.s, s) and np.array_equal(state.z, z)


# -- sweeps ---------------------------------------------------------------------------------
def test_log_joint_finite_on_random_data():
    rng = np.random.default_rng(8)
    data = random_dataset(30, 6, rng, mean_views=4)
    state = State(data, default_hyperparams(6))
    initialize(state, rng)
    cfg = SamplerConfig(c_recompute_interval=1)
    for _ in range(5):
        d = sweep(state, cfg, rng)
        assert math.isfinite(d.log_joint)
        assert (d.num_t_clusters, d.num_s_factors, d.num_z_topics) == (state.T, state.S, state.Z)
        assert 0.0 <= d.mh_acceptance_rate <= 1.0
    state.audit()


def single_cluster_data(seed, n=60):
    rng = np.random.default_rng(seed)
    topics = np.array([[0.4, 0.3, 0.2, 0.1, 0.0, 0.0]])
    return generate_planted(n, [latlon_to_unit((48.0, 2.0))], [40.0], topics, [1.0], [[1.0]],
                            [[1.0]], 5.0, rng)[0]


def test_single_cluster_data_converges_to_few_factors():
    counts = []
    for seed in range(10):
        data = single_cluster_data(seed)
        state = State(data, default_hyperparams(6, m_c=math.log(40.0)))
        ch = Chain(state, SamplerConfig(rng_seed=seed))
        initialize(state, global_stream(seed))
        for _ in range(50):
            ch.step(compute_log_joint=False)
        counts.append((state.S, state.Z))
    med = np.median(np.array(counts), axis=0)
    assert med[0] <= 2 and med[1] <= 2


@pytest.mark.parametrize("method", ["sequential", "single", "random"])
def test_initialisation_methods_produce_valid_states(method):
    rng = np.random.default_rng(9)
    data = random_dataset(25, 5, rng)
    state = State(data, default_hyperparams(5))
    initialize(state, rng, method=method)
    assert state.is_fully_assigned()
    state.audit()
    with pytest.raises(ValueError):
        initialize(State(data, default_hyperparams(5)), rng, method="nope")


def test_chain_is_deterministic():
    data = random_dataset(20, 4, np.random.default_rng(10))
    runs = []
    for _ in range(2):
        state = State(data, default_hyperparams(4))
        initialize(state, global_stream(3))
        ch = Chain(state, SamplerConfig(rng_seed=3))
        runs.append([ch.step().to_dict() for _ in range(4)])
    assert runs[0] == runs[1]


def test_streams_are_distinct():
    a = global_stream(1).random(3)
    b = worker_stream(1, 0).random(3)
    c = worker_stream(1, 1).random(3)
    assert not np.allclose(a, b) and not np.allclose(b, c)
    np.testing.assert_array_equal(a, global_stream(1).random(3))


def test_customer_order_permutation():
    data = random_dataset(12, 3, np.random.default_rng(11))
    state = State(data, default_hyperparams(3))
    assert customer_order(state, SamplerConfig()).tolist() == list(range(12))
    perm = customer_order(state, SamplerConfig(order_seed=5))
    assert sorted(perm.tolist()) == list(range(12)) and perm.tolist() != list(range(12))


def test_config_problems():
    assert SamplerConfig().problems() == []
    bad = SamplerConfig(mh_step_sigma=0.0, sweeps_per_stick_resample=0, c_recompute_interval=0)
    assert len(bad.problems()) == 3


def test_draw_log_categorical_handles_minus_inf():
    rng = np.random.default_rng(12)
    w = np.array([-np.inf, 0.0, -np.inf])
    assert all(draw_log_categorical(w, rng) == 1 for _ in range(100))
    w = np.array([-1e6, -1e6 + math.log(3.0)])
    draws = np.array([draw_log_categorical(w, rng) for _ in range(20_000)])
    assert abs(draws.mean() - 0.75) < 0.02
