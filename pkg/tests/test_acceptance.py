"""Acceptance suite: each criterion runs at its stated tolerance and reports one line."""
import json
import math
import time

import mpmath as mp
import numpy as np
import pytest
from scipy import stats
from scipy.special import roots_legendre

from conftest import record
from geohdp import vmf
from geohdp.cli import main
from geohdp.evaluation import ari, heldout_loglik
from geohdp.geo import latlon_to_unit
from geohdp.parallel import run_parallel
from geohdp.sampler import (Chain, SamplerConfig, c_log_target, global_stream, initialize,
                            sample_c, sample_s, sample_t, sample_z)
from geohdp.state import Dataset, State, default_hyperparams
from geohdp.synth import geweke_test, planted_benchmark
from util import (frozen_state, oracle_s_probs, oracle_t_probs, oracle_z_probs,
                  random_dataset, random_ops)

mp.mp.dps = 50


# -- 1. vMF analytic suite --------------------------------------------------------------
def _closed_form(c):
    c = mp.mpf(c)
    return float(mp.log(c / (4 * mp.pi * mp.sinh(c))))


def _axisymmetric_mass(mu, c, n=1000):
    """Sphere integral of the density using symmetry about mu: Gauss-Legendre in mu.x."""
    u, w = roots_legendre(n)
    # an orthonormal frame around mu; the points are ordinary unit vectors
    a = np.array([1.0, 0.0, 0.0]) if abs(mu[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    e1 = np.cross(mu, a)
    e1 /= np.linalg.norm(e1)
    x = u[:, None] * mu + np.sqrt(1 - u ** 2)[:, None] * e1
    dens = np.exp(vmf.log_density(x, vmf.VmfParams(mu, c)))
    return float(2 * math.pi * np.sum(w * dens))


def test_criterion_1_vmf_analytic():
    cs = (1e-6, 0.1, 1.0, 10.0, 100.0, 700.0)
    oracle = [_closed_form(c) for c in cs]
    t_start = time.perf_counter()
    rel = max(abs(vmf.log_norm_const(c) - o) / abs(o) for c, o in zip(cs, oracle))
    mu = latlon_to_unit((35.0, -120.0))
    mass_err = max(abs(_axisymmetric_mass(mu, c) - 1.0) for c in cs)
    elapsed = time.perf_counter() - t_start
    ok = rel <= 1e-10 and mass_err <= 1e-6 and elapsed < 1.0
    record(1, ok, f"max rel err {rel:.1e} (<=1e-10), |mass-1| {mass_err:.1e} (<=1e-6), "
                  f"{elapsed:.2f}s (<1s)")
    assert ok


# -- 2. conditional correctness ---------------------------------------------------------
def _toy():
    locs = np.stack([latlon_to_unit(p) for p in [(40, -74), (41, -73), (-33, 151), (35, 139)]])
    data = Dataset(locs, [[0, 0, 1], [1, 2], [2, 2, 2, 0], [0]], 3)
    hyper = default_hyperparams(3, alpha_omega=0.8, alpha_phi=1.3, alpha_pi=0.7, gamma=0.4,
                                c0=0.5, m_c=math.log(10.0))
    return frozen_state(data, hyper, [0, 0, 1, 1], [0, 0, 1, 2],
                        [0, 0, 1, 1, 1, 1, 1, 1, 0, 0], [8.0, 3.0, 20.0],
                        [0.3, 0.25, 0.2], [0.45, 0.35])


def _chi2(counts, p):
    keep = p > 0
    assert counts[~keep].sum() == 0
    return float(stats.chisquare(counts[keep], counts.sum() * p[keep]).pvalue)


def _s_marginal_oracle(state, d, n_nodes=40):
    """p(s_d = k | rest) with the new factor's concentration integrated over its prior."""
    prior = state.hyper.vmf_prior
    x, w = np.polynomial.hermite_e.hermegauss(n_nodes)
    w = w / w.sum()
    p = 0.0
    for xi, wi in zip(x, w):
        p = p + wi * oracle_s_probs(state, d, math.exp(prior.m_c + prior.sigma_c * xi))
    return p


def test_criterion_2_conditionals():
    N = 100_000
    t0 = time.perf_counter()
    # one independent stream per conditional
    rng_t, rng_s, rng_z = (np.random.default_rng(q) for q in np.random.SeedSequence(0).spawn(3))
    pv = {}

    st = _toy()
    st.detach_cluster(1)
    st.prune()
    p = oracle_t_probs(st, 1)
    counts = np.zeros(p.size)
    for _ in range(N):
        counts[sample_t(1, st, rng_t)] += 1
        st.detach_cluster(1)
        st.prune()
    pv["t"] = _chi2(counts, p)

    st = _toy()
    st.detach_location(0)
    st.prune()
    p = _s_marginal_oracle(st, 0)
    phi0 = st.phi0.copy()
    counts = np.zeros(p.size)
    for _ in range(N):
        counts[sample_s(0, st, rng_s)] += 1
        st.detach_location(0)
        st.prune()
        st.phi0 = phi0.copy()
    pv["s"] = _chi2(counts, p)

    st = _toy()
    d, j = 2, 1
    i = int(st.data.offsets[d]) + j
    st.remove_view(d, j)
    st.prune()
    p = oracle_z_probs(st, i)
    pi0 = st.pi0.copy()
    counts = np.zeros(p.size)
    for _ in range(N):
        counts[sample_z(d, j, st, rng_z)] += 1
        st.remove_view(d, j)
        st.prune()
        st.pi0 = pi0.copy()
    pv["z"] = _chi2(counts, p)

    elapsed = time.perf_counter() - t0
    ok = min(pv.values()) > 0.01 and elapsed < 60
    record(2, ok, "chi2 p " + ", ".join(f"{k}={v:.3f}" for k, v in pv.items())
           + f" (>0.01), {elapsed:.1f}s (<60s)")
    assert ok


# -- 3. MH target -----------------------------------------------------------------------
def _mh_tv(n_points, rng, steps=100_000, n_bins=40):
    prior = default_hyperparams(1).vmf_prior
    mu = latlon_to_unit((48.0, 2.0))
    locs = vmf.sample_vmf(vmf.VmfParams(mu, 20.0), rng, size=n_points).reshape(n_points, 3)
    data = Dataset(locs, [[] for _ in range(n_points)], 1)
    hyper = default_hyperparams(1)
    state = frozen_state(data, hyper, [0] * n_points, [0] * n_points, [], [5.0], [0.5], [])
    sv = locs.sum(axis=0)
    # grid-normalised density of log c
    g = np.linspace(-8.0, 10.0, 200_001)
    lt = c_log_target(np.exp(g), np.full(g.size, n_points), np.tile(sv, (g.size, 1)), prior) + g
    dens = np.exp(lt - lt.max())
    cdf = np.cumsum(dens)
    cdf /= cdf[-1]
    edges = np.interp(np.linspace(0, 1, n_bins + 1)[1:-1], cdf, g)
    target = np.full(n_bins, 1.0 / n_bins)
    for _ in range(2000):
        sample_c(0, state, rng)
    draws = np.empty(steps)
    for k in range(steps):
        draws[k] = sample_c(0, state, rng)[0]
    hist = np.bincount(np.searchsorted(edges, np.log(draws)), minlength=n_bins) / steps
    return 0.5 * float(np.abs(hist - target).sum())


def test_criterion_3_mh_target():
    t0 = time.perf_counter()
    rng = np.random.default_rng(3)
    tv1 = _mh_tv(1, rng)
    tv10 = _mh_tv(10, rng)
    elapsed = time.perf_counter() - t0
    ok = max(tv1, tv10) <= 0.05 and elapsed < 60
    record(3, ok, f"TV 1-point {tv1:.4f}, 10-point {tv10:.4f} (<=0.05), {elapsed:.1f}s (<60s)")
    assert ok


# -- 4. Geweke ----------------------------------------------------------------------------
def test_criterion_4_geweke():
    t0 = time.perf_counter()
    _, _, p = geweke_test(default_hyperparams(4), n_customers=5, mean_views=3.0,
                          replicates=1000, cycles=20, seed=0)
    elapsed = time.perf_counter() - t0
    ok = bool(np.all(p > 0.01)) and elapsed < 600
    record(4, ok, f"KS p topics={p[0]:.3f}, mean c={p[1]:.3f}, MRL={p[2]:.3f} (>0.01), "
                  f"{elapsed:.0f}s (<600s)")
    assert ok


# -- 5 and 6. recovery and parallel fidelity --------------------------------------------
SEEDS = range(5)
SWEEPS = 200


def _benchmark(seed):
    tr, ho, truth, _ = planted_benchmark(500, np.random.default_rng(seed), n_heldout=100)
    hyper = default_hyperparams(tr.n_items, gamma=0.05, m_c=math.log(50.0), sigma_c=0.5)
    return tr, ho, truth, hyper


@pytest.fixture(scope="module")
def serial_runs():
    out = []
    t0 = time.perf_counter()
    for seed in SEEDS:
        tr, ho, truth, hyper = _benchmark(seed)
        cfg = SamplerConfig(rng_seed=100 + seed)
        state = State(tr, hyper)
        g = global_stream(cfg.rng_seed)
        initialize(state, g)
        chain = Chain(state, cfg, global_rng=g)
        for _ in range(SWEEPS):
            chain.step(compute_log_joint=False)
        out.append({"ari_s": ari(state.s, truth.s), "ari_z": ari(state.z, truth.z),
                    "loglik": heldout_loglik(state, ho)[0]})
    return out, time.perf_counter() - t0


def test_criterion_5_recovery(serial_runs):
    runs, elapsed = serial_runs
    s = float(np.median([r["ari_s"] for r in runs]))
    z = float(np.median([r["ari_z"] for r in runs]))
    ok = s >= 0.8 and z >= 0.8 and elapsed < 600
    record(5, ok, f"median ARI s={s:.3f}, z={z:.3f} (>=0.8), {elapsed:.0f}s (<600s)")
    assert ok


def test_criterion_6_parallel(serial_runs):
    runs, _ = serial_runs
    t0 = time.perf_counter()
    d_ll, d_ari = [], []
    for seed, ser in zip(SEEDS, runs):
        tr, ho, truth, hyper = _benchmark(seed)
        cfg = SamplerConfig(rng_seed=100 + seed)
        state, _, _ = run_parallel(tr, hyper, cfg, 4, SWEEPS, compute_log_joint=False)
        d_ll.append(abs(heldout_loglik(state, ho)[0] - ser["loglik"]))
        d_ari.append(abs(ari(state.s, truth.s) - ser["ari_s"]))
    # P = 1 against the serial chain, bit for bit
    tr, ho, truth, hyper = _benchmark(0)
    cfg = SamplerConfig(rng_seed=7)
    one, one_diag, _ = run_parallel(tr, hyper, cfg, 1, 10)
    state = State(tr, hyper)
    g = global_stream(7)
    initialize(state, g)
    chain = Chain(state, cfg, global_rng=g)
    ser_diag = [chain.step() for _ in range(10)]
    bitwise = ([d.to_dict() for d in one_diag] == [d.to_dict() for d in ser_diag]
               and one.counts() == state.counts() and np.array_equal(one.c, state.c)
               and np.array_equal(one.z, state.z) and np.array_equal(one.s, state.s))
    elapsed = time.perf_counter() - t0
    ll, da = float(np.median(d_ll)), float(np.median(d_ari))
    ok = ll <= 0.05 and da <= 0.05 and bitwise and elapsed < 900
    record(6, ok, f"median |dloglik/view| {ll:.4f} nats (<=0.05), median |dARI s| {da:.3f} "
                  f"(<=0.05), P=1 bitwise {bitwise}, {elapsed:.0f}s (<900s)")
    assert ok


# -- 7. state audit ------------------------------------------------------------------------
def test_criterion_7_audit():
    t0 = time.perf_counter()
    rng = np.random.default_rng(7)
    data = random_dataset(40, 8, rng, mean_views=4)
    state = State(data, default_hyperparams(8))
    n = random_ops(state, rng, 1_000_000, p_prune=0.001)
    state.audit()
    state.prune()
    state.audit()
    elapsed = time.perf_counter() - t0
    ok = n == 1_000_000 and elapsed < 60
    record(7, ok, f"{n} random operations, audit exact, {elapsed:.1f}s (<60s)")
    assert ok


# -- 8. end to end ----------------------------------------------------------------------------
TOY = """[synth]
mode = planted
n_customers = 200
n_heldout = 40
mean_views = 10
[model]
gamma = 0.05
m_c = 3.912
sigma_c = 0.5
[run]
sweeps = 8
checkpoint_every = 4
"""


def test_criterion_8_end_to_end(tmp_path, capsys):
    cfg = tmp_path / "toy.ini"
    cfg.write_text(TOY)
    gen = tmp_path / "gen"
    codes = [main(["generate", "--config", str(cfg), "--out", str(gen)])]
    train = ["train", "--config", str(cfg), "--data", str(gen / "train.jsonl"),
             "--heldout", str(gen / "heldout.jsonl")]
    codes.append(main(train + ["--out", str(tmp_path / "serial")]))
    codes.append(main(train + ["--out", str(tmp_path / "par"), "--workers", "4"]))
    for run in ("serial", "par"):
        ck = str(tmp_path / run / "checkpoint.json")
        codes.append(main(["evaluate", "--checkpoint", ck, "--heldout",
                           str(gen / "heldout.jsonl"), "--truth", str(gen / "truth.json"),
                           "--out", str(tmp_path / run)]))
        codes.append(main(["report", "--checkpoint", ck, "--out", str(tmp_path / run)]))
    # interrupted at sweep 4, resumed to 8
    codes.append(main(train + ["--out", str(tmp_path / "part"), "--sweeps", "4"]))
    codes.append(main(["resume", "--checkpoint", str(tmp_path / "part" / "checkpoint.json"),
                       "--sweeps", "8"]))
    capsys.readouterr()
    same = ((tmp_path / "serial" / "diagnostics.jsonl").read_bytes()
            == (tmp_path / "part" / "diagnostics.jsonl").read_bytes())
    a = json.loads((tmp_path / "serial" / "checkpoint.json").read_text())
    b = json.loads((tmp_path / "part" / "checkpoint.json").read_text())
    same = same and a["state"] == b["state"] and a["rng"] == b["rng"]
    ok = all(c == 0 for c in codes) and same
    record(8, ok, f"exit codes {codes}, resume bit-reproducible {same}")
    assert ok
