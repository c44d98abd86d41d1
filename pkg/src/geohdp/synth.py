"""Forward simulation from the generative model.

Two exact-in-distribution generators are offered:

* ``mode="stick"``: truncated stick-breaking for the global measures and
  the top-level measure over (location DP, topic DP) pairs; exposes
  explicit atom weights.
* ``mode="crp"``: Chinese-restaurant-franchise seating, no truncation.
  Also returns the table counts, from which global sticks are drawn exactly;
  the Geweke driver uses this mode.

``generate_planted`` builds datasets from explicitly chosen atoms for
recovery benchmarks.
"""
import json
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import stats

from . import vmf
from .errors import ConfigError
from .geo import latlon_to_unit
from .sampler import SamplerConfig, sweep
from .state import Dataset, GlobalSticks, Hyperparams, State

TAIL_MASS_TOL = 1e-8


@dataclass
class SynthConfig:
    n_customers: int = 200
    mean_views: float = 20.0
    fixed_views: bool = False
    truncation: int = 100
    mode: str = "stick"
    seed: int = 0

    def problems(self):
        out = []
        if int(self.n_customers) < 1:
            out.append("n_customers must be >= 1")
        if not self.mean_views >= 0:
            out.append("mean_views must be >= 0")
        if int(self.truncation) < 1:
            out.append("truncation must be >= 1")
        if self.mode not in ("stick", "crp"):
            out.append(f"unknown synth mode {self.mode!r}")
        return out


@dataclass
class GroundTruth:
    t: np.ndarray
    s: np.ndarray
    z: np.ndarray
    mu: np.ndarray
    c: np.ndarray
    beta: np.ndarray
    phi0: Optional[GlobalSticks] = None
    pi0: Optional[GlobalSticks] = None
    extra: dict = field(default_factory=dict)

    def to_json(self):
        d = {
            "t": self.t.tolist(), "s": self.s.tolist(), "z": self.z.tolist(),
            "mu": self.mu.tolist(), "c": self.c.tolist(), "beta": self.beta.tolist(),
        }
        for name in ("phi0", "pi0"):
            st = getattr(self, name)
            if st is not None:
                d[name] = {"weights": st.weights.tolist(), "remainder": st.remainder}
        return d

    @classmethod
    def from_json(cls, d):
        sticks = {name: GlobalSticks(d[name]["weights"], d[name]["remainder"])
                  for name in ("phi0", "pi0") if name in d}
        return cls(np.array(d["t"], dtype=np.int64), np.array(d["s"], dtype=np.int64),
                   np.array(d["z"], dtype=np.int64), np.array(d["mu"], dtype=float).reshape(-1, 3),
                   np.array(d["c"], dtype=float), np.array(d["beta"], dtype=float), **sticks)

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_json(json.load(fh))


# -- primitives ----------------------------------------------------------------
def stick_breaking(alpha, T, rng):
    """First T GEM(alpha) weights and the leftover tail mass."""
    b = rng.beta(1.0, alpha, size=T)
    rest = np.concatenate([[1.0], np.cumprod(1.0 - b)])
    return b * rest[:-1], float(rest[-1])


def dirichlet_small(alpha, rng):
    """Dirichlet draw that stays well defined for very small parameters."""
    alpha = np.asarray(alpha, dtype=float)
    log_g = np.log(rng.standard_gamma(alpha + 1.0)) + np.log(rng.random(alpha.shape)) / alpha
    log_g -= log_g.max()
    g = np.exp(log_g)
    return g / g.sum()


def _categorical(p, rng, size=None):
    cdf = np.cumsum(p)
    u = rng.random(size) * cdf[-1]
    return np.minimum(np.searchsorted(cdf, u, side="right"), len(p) - 1)


def _view_counts(cfg: SynthConfig, rng):
    n = int(cfg.n_customers)
    if cfg.fixed_views:
        return np.full(n, int(round(cfg.mean_views)), dtype=np.int64)
    return rng.poisson(cfg.mean_views, size=n).astype(np.int64)


def _dense_labels(labels):
    _, first = np.unique(labels, return_index=True)
    order = np.asarray(labels)[np.sort(first)]
    m = {int(k): i for i, k in enumerate(order)}
    return np.array([m[int(k)] for k in labels], dtype=np.int64), order


# -- generators ----------------------------------------------------------------
def generate(hyper: Hyperparams, cfg: SynthConfig, rng):
    """Sample a dataset and its ground truth from the model."""
    bad = cfg.problems()
    if bad:
        raise ConfigError(bad)
    if cfg.mode == "crp":
        return _generate_crp(hyper, cfg, rng)
    return _generate_stick(hyper, cfg, rng)


def _generate_stick(hyper, cfg, rng):
    T = int(cfg.truncation)
    prior = hyper.vmf_prior
    V = hyper.catalog.V
    phi0, tail_phi = stick_breaking(hyper.alpha_phi0, T, rng)
    pi0, tail_pi = stick_breaking(hyper.alpha_pi0, T, rng)
    omega, tail_om = stick_breaking(hyper.alpha_omega, T, rng)
    worst = max(tail_phi, tail_pi, tail_om)
    if worst >= TAIL_MASS_TOL:
        raise ConfigError(f"truncation {T} leaves tail mass {worst:.3g} >= {TAIL_MASS_TOL}; "
                          "increase the truncation level")
    phi0 /= phi0.sum()
    pi0 /= pi0.sum()
    omega /= omega.sum()
    mu = vmf.sample_vmf(vmf.VmfParams(prior.mu0, prior.c0), rng, size=T)
    c = prior.sample_c(rng, size=T)
    beta = np.stack([dirichlet_small(hyper.catalog.gamma, rng) for _ in range(T)])
    phi_t = np.stack([dirichlet_small(hyper.alpha_phi * phi0, rng) for _ in range(T)])
    pi_t = np.stack([dirichlet_small(hyper.alpha_pi * pi0, rng) for _ in range(T)])

    n = int(cfg.n_customers)
    J = _view_counts(cfg, rng)
    t_raw = _categorical(omega, rng, size=n)
    s_raw = np.array([_categorical(phi_t[t], rng) for t in t_raw], dtype=np.int64)
    locs = np.stack([vmf.sample_vmf(vmf.VmfParams(mu[s], c[s]), rng) for s in s_raw]) \
        if n else np.zeros((0, 3))
    z_raw, items = [], []
    for d in range(n):
        zd = _categorical(pi_t[t_raw[d]], rng, size=J[d])
        z_raw.append(zd)
        items.append(np.array([_categorical(beta[k], rng) for k in zd], dtype=np.int64))
    z_flat = np.concatenate(z_raw) if z_raw else np.zeros(0, dtype=np.int64)

    t_lab, _ = _dense_labels(t_raw)
    s_lab, s_atoms = _dense_labels(s_raw)
    z_lab, z_atoms = (_dense_labels(z_flat) if z_flat.size
                      else (np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)))
    truth = GroundTruth(
        t_lab, s_lab, z_lab, mu[s_atoms], c[s_atoms], beta[z_atoms],
        GlobalSticks(phi0[s_atoms], max(1.0 - phi0[s_atoms].sum(), np.finfo(float).tiny)),
        GlobalSticks(pi0[z_atoms], max(1.0 - pi0[z_atoms].sum(), np.finfo(float).tiny)),
        extra={"tail_mass": worst},
    )
    return Dataset(locs, items, V), truth


class _Franchise:
    """Chinese restaurant franchise for one global measure."""

    def __init__(self, alpha_group, alpha_global):
        self.a = alpha_group
        self.a0 = alpha_global
        self.tables = {}       # group -> list of [dish, occupancy]
        self.dish_tables = []  # tables serving each dish (m_.k)
        self.m = {}            # (group, dish) -> tables

    def seat(self, group, rng):
        tabs = self.tables.setdefault(group, [])
        w = np.array([occ for _, occ in tabs] + [self.a], dtype=float)
        k = int(_categorical(w, rng))
        if k < len(tabs):
            tabs[k][1] += 1
            return tabs[k][0]
        w = np.array(self.dish_tables + [self.a0], dtype=float)
        dish = int(_categorical(w, rng))
        if dish == len(self.dish_tables):
            self.dish_tables.append(0)
        self.dish_tables[dish] += 1
        self.m[(group, dish)] = self.m.get((group, dish), 0) + 1
        tabs.append([dish, 1])
        return dish

    def sticks(self, rng):
        K = len(self.dish_tables)
        if K == 0:
            return GlobalSticks(np.zeros(0), 1.0)
        g = rng.standard_gamma(np.array(self.dish_tables + [self.a0], dtype=float))
        g = np.maximum(g, np.finfo(float).tiny)
        g /= g.sum()
        return GlobalSticks(g[:K], g[K])


def _generate_crp(hyper, cfg, rng):
    prior = hyper.vmf_prior
    V = hyper.catalog.V
    n = int(cfg.n_customers)
    J = _view_counts(cfg, rng)
    loc_crf = _Franchise(hyper.alpha_phi, hyper.alpha_phi0)
    top_crf = _Franchise(hyper.alpha_pi, hyper.alpha_pi0)
    n_t = []
    t = np.zeros(n, dtype=np.int64)
    s = np.zeros(n, dtype=np.int64)
    z = []
    for d in range(n):
        k = int(_categorical(np.array(n_t + [hyper.alpha_omega], dtype=float), rng))
        if k == len(n_t):
            n_t.append(0)
        n_t[k] += 1
        t[d] = k
        s[d] = loc_crf.seat(k, rng)
        z.extend(top_crf.seat(k, rng) for _ in range(J[d]))
    z = np.array(z, dtype=np.int64)
    S = len(loc_crf.dish_tables)
    Z = len(top_crf.dish_tables)
    mu = (vmf.sample_vmf(vmf.VmfParams(prior.mu0, prior.c0), rng, size=S)
          if S else np.zeros((0, 3)))
    c = prior.sample_c(rng, size=S)
    beta = (np.stack([dirichlet_small(hyper.catalog.gamma, rng) for _ in range(Z)])
            if Z else np.zeros((0, V)))
    locs = np.zeros((n, 3))
    for k in range(S):
        members = np.flatnonzero(s == k)
        locs[members] = vmf.sample_vmf(vmf.VmfParams(mu[k], c[k]), rng, size=members.size)
    items = np.array([_categorical(beta[k], rng) for k in z], dtype=np.int64)
    truth = GroundTruth(t, s, z, mu, c, beta, loc_crf.sticks(rng), top_crf.sticks(rng),
                        extra={"loc_tables": loc_crf.m, "topic_tables": top_crf.m})
    views = np.split(items, np.cumsum(J)[:-1]) if n else []
    return Dataset(locs, views, V), truth


def generate_planted(n_customers, centers, concentrations, topics, cluster_weights,
                     cluster_loc_weights, cluster_topic_weights, mean_views, rng):
    """Sample customers from explicitly specified atoms and interaction clusters.

    ``centers`` (S, 3) and ``concentrations`` (S,) define the location
    factors, ``topics`` (Z, V) the item distributions. Cluster ``t`` is chosen
    with ``cluster_weights``, then a location factor from
    ``cluster_loc_weights[t]`` and each view's topic from
    ``cluster_topic_weights[t]``.
    """
    centers = np.asarray(centers, dtype=float)
    topics = np.asarray(topics, dtype=float)
    n = int(n_customers)
    t = _categorical(np.asarray(cluster_weights, dtype=float), rng, size=n).astype(np.int64)
    s = np.array([_categorical(cluster_loc_weights[k], rng) for k in t], dtype=np.int64)
    locs = np.zeros((n, 3))
    for k in range(len(centers)):
        members = np.flatnonzero(s == k)
        if members.size:
            locs[members] = vmf.sample_vmf(vmf.VmfParams(centers[k], float(concentrations[k])),
                                           rng, size=members.size)
    J = rng.poisson(mean_views, size=n)
    views, zs = [], []
    for d in range(n):
        zd = _categorical(cluster_topic_weights[t[d]], rng, size=J[d]).astype(np.int64)
        zs.append(zd)
        views.append(np.array([_categorical(topics[k], rng) for k in zd], dtype=np.int64))
    truth = GroundTruth(t, s, np.concatenate(zs) if zs else np.zeros(0, dtype=np.int64),
                        centers, np.asarray(concentrations, dtype=float), topics)
    return Dataset(locs, views, topics.shape[1]), truth


BENCHMARK_CENTERS = [(40.7, -74.0), (34.0, -118.2), (51.5, -0.1)]


def planted_benchmark(n_customers, rng, n_heldout=0, mean_views=10.0, concentration=50.0,
                      n_topics=4, items_per_topic=10, main_topic_weight=0.85):
    """Three well-separated location factors and disjoint-support topics.

    There is one interaction cluster per topic. Cluster k sits mostly (0.9)
    on location factor k mod 3 and puts ``main_topic_weight`` on topic k,
    spreading the rest evenly. A dominant topic per cluster is what makes
    the topics identifiable: with fewer clusters than topics, many topic
    decompositions give the same view predictive.

    Returns ``(train, heldout, truth_train, truth_heldout)``; ``heldout`` is
    None when ``n_heldout`` is 0.
    """
    centers = np.stack([latlon_to_unit(p) for p in BENCHMARK_CENTERS])
    V = n_topics * items_per_topic
    topics = np.zeros((n_topics, V))
    for k in range(n_topics):
        topics[k, k * items_per_topic:(k + 1) * items_per_topic] = 1.0 / items_per_topic
    S = len(centers)
    n_clusters = n_topics
    loc_w = np.full((n_clusters, S), 0.1 / (S - 1))
    loc_w[np.arange(n_clusters), np.arange(n_clusters) % S] = 0.9
    if n_topics > 1:
        top_w = np.full((n_clusters, n_topics), (1.0 - main_topic_weight) / (n_topics - 1))
        np.fill_diagonal(top_w, main_topic_weight)
    else:
        top_w = np.ones((1, 1))
    data, truth = generate_planted(n_customers + n_heldout, centers, np.full(S, concentration),
                                   topics, np.full(n_clusters, 1.0 / n_clusters), loc_w, top_w,
                                   mean_views, rng)
    if not n_heldout:
        return data, None, truth, None
    tr = np.arange(n_customers)
    ho = np.arange(n_customers, n_customers + n_heldout)
    vt = data.offsets[n_customers]
    truth_tr = GroundTruth(truth.t[tr], truth.s[tr], truth.z[:vt], truth.mu, truth.c, truth.beta)
    truth_ho = GroundTruth(truth.t[ho], truth.s[ho], truth.z[vt:], truth.mu, truth.c, truth.beta)
    return data.subset(tr), data.subset(ho), truth_tr, truth_ho


# -- Geweke joint-distribution test ----------------------------------------------
def state_from_truth(data: Dataset, truth: GroundTruth, hyper: Hyperparams):
    """Sampler state whose assignments, concentrations and sticks are the ground truth."""
    if truth.phi0 is None or truth.pi0 is None:
        raise ValueError("ground truth carries no global sticks")
    return State.from_assignments(data, hyper, truth.t, truth.s, truth.z, truth.c,
                                  truth.phi0, truth.pi0)


def resample_data(state: State, rng):
    """Redraw locations and items given the latent state (mu and beta drawn, then discarded)."""
    h = state.hyper
    prior = h.vmf_prior
    data = state.data
    sf = state.sum_s_float()
    locs = np.zeros((data.n_customers, 3))
    for k in range(state.S):
        v = state.c[k] * sf[k] + prior.c0 * prior.mu0
        r = float(np.linalg.norm(v))
        mu_k = vmf.sample_vmf(vmf.VmfParams(v / r, r), rng)
        members = np.flatnonzero(state.s == k)
        locs[members] = vmf.sample_vmf(vmf.VmfParams(mu_k, float(state.c[k])), rng,
                                       size=members.size)
    items = np.zeros(data.n_views, dtype=np.int64)
    for k in range(state.Z):
        beta_k = dirichlet_small(h.catalog.gamma + state.n_zv[k], rng)
        idx = np.flatnonzero(state.z == k)
        items[idx] = _categorical(beta_k, rng, size=idx.size)
    new_data = Dataset(locs, np.split(items, data.offsets[1:-1]), data.n_items,
                       data.customer_ids)
    return State.from_assignments(new_data, h, state.t, state.s, state.z, state.c,
                                  state.phi0, state.pi0, state.n_sweeps)


def perturb_resample(state: State, config: SamplerConfig, rng, cycles=1, order=None):
    """Successive-conditional simulation: alternate data redraws and Gibbs sweeps."""
    for _ in range(int(cycles)):
        state = resample_data(state, rng)
        sweep(state, config, rng, order=order, compute_log_joint=False)
    return state


def geweke_statistics(state_or_truth, data: Dataset):
    """(live topic count, mean concentration, mean resultant length of locations)."""
    if isinstance(state_or_truth, State):
        n_topics = state_or_truth.Z
        c = state_or_truth.c
    else:
        n_topics = int(np.unique(state_or_truth.z).size)
        c = state_or_truth.c
    mrl = float(np.linalg.norm(data.locations.sum(axis=0)) / max(data.n_customers, 1))
    return np.array([n_topics, float(np.mean(c)) if c.size else 0.0, mrl])


GEWEKE_STAT_NAMES = ("live_topics", "mean_c", "mean_resultant_length")


def geweke_test(hyper: Hyperparams, n_customers=5, mean_views=3.0, replicates=1000, cycles=20,
                seed=0, config: Optional[SamplerConfig] = None, reverse_order=False):
    """Forward vs successive-conditional samples of the Geweke statistics.

    Each successive-conditional replicate is an independent chain started from
    its own forward draw and run for ``cycles`` (data redraw + sweep) steps.
    Returns ``(forward, successive, pvalues)`` where the first two are
    (replicates, 3) arrays and ``pvalues`` holds two-sample KS p-values.
    """
    config = config or SamplerConfig()
    cfg = SynthConfig(n_customers=n_customers, mean_views=mean_views, mode="crp")
    root = np.random.SeedSequence(seed)
    fwd_ss, succ_ss = root.spawn(2)
    fwd_rng = np.random.default_rng(fwd_ss)
    forward = np.zeros((replicates, 3))
    for r in range(replicates):
        data, truth = generate(hyper, cfg, fwd_rng)
        forward[r] = geweke_statistics(truth, data)
    successive = np.zeros((replicates, 3))
    order = np.arange(n_customers)[::-1] if reverse_order else None
    for r, ss in enumerate(succ_ss.spawn(replicates)):
        rng = np.random.default_rng(ss)
        data, truth = generate(hyper, cfg, rng)
        state = state_from_truth(data, truth, hyper)
        state = perturb_resample(state, config, rng, cycles, order=order)
        successive[r] = geweke_statistics(state, state.data)
    pvalues = np.array([stats.ks_2samp(forward[:, i], successive[:, i]).pvalue
                        for i in range(3)])
    return forward, successive, pvalues


def expected_crp_clusters(alpha, n):
    """E[number of tables] after n customers in a CRP(alpha)."""
    return float(sum(alpha / (alpha + i) for i in range(n)))
