"""Serial collapsed Gibbs sampler.

One sweep visits every customer (cluster ``t``, then location factor
``s``, then the topic ``z`` of each view), prunes factors that became
empty, takes one Metropolis-Hastings step on every location
concentration and, on schedule, redraws the global sticks.

Conditionals are evaluated in log space and normalised by subtracting the
maximum before exponentiating.
"""
import logging
import math
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np
from scipy.special import gammaln, logsumexp

from . import _kernels, vmf
from .state import State, resample_sticks

log = logging.getLogger(__name__)

MH_ACCEPT_RANGE = (0.15, 0.6)


def global_stream(seed):
    """Generator for initialisation, concentrations and sticks."""
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(0,)))


def worker_stream(seed, p):
    """Generator for the customer pass of worker ``p`` (a serial run is worker 0)."""
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(1 + int(p),)))


@dataclass
class SamplerConfig:
    mh_step_sigma: float = 0.5
    sweeps_per_stick_resample: int = 1
    rng_seed: int = 0
    # every this many sweeps the incremental tables are audited against a recount
    c_recompute_interval: int = 100
    strict_paper_mode: bool = False
    order_seed: Optional[int] = None

    def problems(self):
        out = []
        if not (self.mh_step_sigma > 0 and math.isfinite(self.mh_step_sigma)):
            out.append("mh_step_sigma must be positive")
        if int(self.sweeps_per_stick_resample) < 1:
            out.append("sweeps_per_stick_resample must be >= 1")
        if int(self.c_recompute_interval) < 1:
            out.append("c_recompute_interval must be >= 1")
        return out


@dataclass
class SweepDiagnostics:
    sweep: int
    log_joint: float
    num_t_clusters: int
    num_s_factors: int
    num_z_topics: int
    mh_acceptance_rate: float

    def to_dict(self):
        return asdict(self)


def draw_log_categorical(logw, rng):
    """Index drawn with probability proportional to exp(logw)."""
    return int(_kernels.draw_log_categorical(np.asarray(logw, dtype=float), rng.random()))


def _log(x):
    with np.errstate(divide="ignore"):
        return np.log(x)


# -- cluster t -----------------------------------------------------------------
def t_log_weights(d, state: State, strict=False):
    """Unnormalised log weights for t_d over the live clusters plus a new one (last).

    The customer must be detached from its cluster. Views of the customer are
    scored as a sequential Polya-urn predictive (counts grow within the
    customer); ``strict`` uses a plain product with fixed counts instead.
    """
    h = state.hyper
    T = state.T
    a_phi, a_pi = h.alpha_phi, h.alpha_pi
    logw = np.empty(T + 1)
    logw[:T] = _log(state.n_t.astype(float))
    logw[T] = math.log(h.alpha_omega)
    sd = state.s[d]
    if sd >= 0:
        phi_s = state.phi0.weights[sd]
        logw[:T] += np.log(state.n_ts[:, sd] + a_phi * phi_s) - np.log(state.n1_t + a_phi)
        logw[T] += math.log(phi_s)
    zs = state.z[state.data.offsets[d]:state.data.offsets[d + 1]]
    zs = zs[zs >= 0]
    J = zs.size
    if J:
        m = np.bincount(zs, minlength=state.Z)
        k = np.flatnonzero(m)
        mk = m[k]
        pi_k = state.pi0.weights[k]
        base = a_pi * pi_k
        A = state.n_tz[:, k] + base
        b = state.n2_t + a_pi
        if strict:
            logw[:T] += (mk * np.log(A)).sum(axis=1) - J * np.log(b)
            logw[T] += float((mk * np.log(pi_k)).sum())
        else:
            logw[:T] += (gammaln(A + mk) - gammaln(A)).sum(axis=1) - (gammaln(b + J) - gammaln(b))
            logw[T] += float((gammaln(base + mk) - gammaln(base)).sum()
                             - (gammaln(a_pi + J) - gammaln(a_pi)))
    return logw


def sample_t(d, state: State, rng, strict=False):
    """Draw t_d for a detached customer and re-attach it. Returns the cluster index."""
    k = draw_log_categorical(t_log_weights(d, state, strict), rng)
    if k == state.T:
        state.new_cluster()
    state.attach_cluster(d, k)
    return k


# -- location factor s ---------------------------------------------------------
def s_log_weights(d, state: State, c_new):
    """Log weights for s_d over live location factors plus a new one (last).

    ``c_new`` is the concentration proposed for a brand-new factor.
    """
    h = state.hyper
    prior = h.vmf_prior
    t = state.t[d]
    w = h.alpha_phi * state.phi0.weights
    if t >= 0 and state.S:
        w = state.n_ts[t] + w
    return _kernels.location_log_weights(
        state.data.locations[d], state.sum_s_float(), state.c, np.asarray(w, dtype=float),
        prior.c0 * prior.mu0, float(c_new), math.log(h.alpha_phi * state.phi0.remainder))


def sample_s(d, state: State, rng):
    """Draw s_d for a customer whose location is detached; re-attach and return it."""
    c_new = float(state.hyper.vmf_prior.sample_c(rng))
    k = draw_log_categorical(s_log_weights(d, state, c_new), rng)
    if k == state.S:
        state.new_location_factor(c_new, rng)
    state.attach_location(d, k)
    return k


# -- topic z -------------------------------------------------------------------
def z_log_weights(d, j, state: State):
    """Log weights for the topic of view j of customer d (view detached), new topic last."""
    h = state.hyper
    cat = h.catalog
    v = state.data.items[state.data.offsets[d] + j]
    Z = state.Z
    t = state.t[d]
    logw = np.empty(Z + 1)
    if Z:
        w = h.alpha_pi * state.pi0.weights
        if t >= 0:
            w = state.n_tz[t] + w
        logw[:Z] = (np.log(w) + np.log(state.n_zv[:, v] + cat.gamma[v])
                    - np.log(state.n_z + cat.gamma_sum))
    logw[Z] = math.log(h.alpha_pi * state.pi0.remainder) + math.log(cat.gamma[v] / cat.gamma_sum)
    return logw


def sample_z(d, j, state: State, rng):
    k = draw_log_categorical(z_log_weights(d, j, state), rng)
    if k == state.Z:
        state.new_topic(rng)
    state.add_view(d, j, k)
    return k


# -- concentrations c_s --------------------------------------------------------
def c_log_target(c, n, sum_vec, prior):
    """Log of the lognormal prior times the mu-collapsed likelihood of a location factor.

    Vectorised: ``c`` (K,), ``n`` (K,), ``sum_vec`` (K, 3).
    """
    c = np.asarray(c, dtype=float)
    sv = np.asarray(sum_vec, dtype=float).reshape(c.shape + (3,))
    r = np.sqrt(np.sum((c[..., None] * sv + prior.c0 * prior.mu0) ** 2, axis=-1))
    return (prior.log_prior_c(c) + n * vmf.log_norm_const(c)
            + vmf.log_norm_const(prior.c0) - vmf.log_norm_const(r))


def mh_log_accept_ratio(c, c_new, n, sum_vec, prior):
    """log of the acceptance ratio for a log-scale random-walk move c -> c_new."""
    return (c_log_target(c_new, n, sum_vec, prior) - c_log_target(c, n, sum_vec, prior)
            + np.log(c_new) - np.log(c))


def mh_concentrations(state: State, idx, rng, step):
    """One MH step on each concentration in ``idx``; returns the boolean accept mask."""
    idx = np.asarray(idx, dtype=np.int64)
    if idx.size == 0:
        return np.zeros(0, dtype=bool)
    c = state.c[idx]
    c_new = c * np.exp(step * rng.standard_normal(idx.size))
    log_a = mh_log_accept_ratio(c, c_new, state.n_s[idx], state.sum_s_float()[idx],
                                state.hyper.vmf_prior)
    accept = _log(rng.random(idx.size)) < log_a
    state.c[idx[accept]] = c_new[accept]
    return accept


def sample_c(s, state: State, rng, step=0.5):
    """One MH step on c_s. Returns (new concentration, accepted)."""
    accepted = bool(mh_concentrations(state, [s], rng, step)[0])
    return float(state.c[s]), accepted


# -- joint score ---------------------------------------------------------------
def log_joint(state: State):
    """Collapsed log joint of assignments, concentrations and data given the sticks."""
    h = state.hyper
    prior = h.vmf_prior
    cat = h.catalog
    N = int(state.n_t.sum())
    out = 0.0
    if state.T:
        out += (gammaln(h.alpha_omega) - gammaln(N + h.alpha_omega)
                + state.T * math.log(h.alpha_omega) + gammaln(state.n_t).sum())
    if state.T and state.S:
        a = h.alpha_phi * state.phi0.weights
        out += float(np.sum(gammaln(state.n_ts + a) - gammaln(a))
                     + np.sum(gammaln(h.alpha_phi) - gammaln(state.n1_t + h.alpha_phi)))
    if state.T and state.Z:
        a = h.alpha_pi * state.pi0.weights
        out += float(np.sum(gammaln(state.n_tz + a) - gammaln(a))
                     + np.sum(gammaln(h.alpha_pi) - gammaln(state.n2_t + h.alpha_pi)))
    if state.S:
        sf = state.sum_s_float()
        r = np.linalg.norm(state.c[:, None] * sf + prior.c0 * prior.mu0, axis=1)
        out += float(np.sum(state.n_s * vmf.log_norm_const(state.c)
                            + vmf.log_norm_const(prior.c0) - vmf.log_norm_const(r)))
        out += float(np.sum(prior.log_prior_c(state.c)))
    if state.Z:
        out += float(np.sum(gammaln(state.n_zv + cat.gamma) - gammaln(cat.gamma))
                     + np.sum(gammaln(cat.gamma_sum) - gammaln(state.n_z + cat.gamma_sum)))
    return float(out)


# -- sweeps --------------------------------------------------------------------
def customer_order(state: State, config: SamplerConfig):
    n = state.data.n_customers
    if config.order_seed is None:
        return np.arange(n)
    return np.random.default_rng(config.order_seed).permutation(n)


def customer_pass(state: State, customers, rng, strict=False):
    """Resample t, s and every z for each customer in ``customers``. Nothing is pruned."""
    data = state.data
    h = state.hyper
    gamma = h.catalog.gamma
    gsum = h.catalog.gamma_sum
    a_pi = h.alpha_pi
    log_item = np.log(gamma / gsum)
    items = data.items
    offsets = data.offsets
    for d in customers:
        d = int(d)
        state.detach_cluster(d)
        sample_t(d, state, rng, strict)
        state.detach_location(d)
        sample_s(d, state, rng)
        t = int(state.t[d])
        lo, hi = int(offsets[d]), int(offsets[d + 1])
        while lo < hi:
            log_new = math.log(a_pi * state.pi0.remainder) + log_item
            i = _kernels.view_topics(items, state.z, lo, hi, t, state.n_zv, state.n_z,
                                     state.n_tz, state.n2_t, state.pi0.weights, log_new,
                                     a_pi, gamma, gsum, rng)
            if i < 0:
                break
            state.add_view(d, i - int(offsets[d]), state.new_topic(rng))
            lo = i + 1


def finish_sweep(state: State, config: SamplerConfig, rng, passes=1, compute_log_joint=True):
    """Global part of a sweep: prune, audit on schedule, MH on every c_s, sticks on schedule."""
    state.prune()
    before = state.n_sweeps
    state.n_sweeps += passes
    after = state.n_sweeps
    if after // config.c_recompute_interval > before // config.c_recompute_interval:
        state.audit()
    accept = mh_concentrations(state, np.arange(state.S), rng, config.mh_step_sigma)
    k = config.sweeps_per_stick_resample
    if after // k > before // k:
        resample_global_sticks(state, rng)
    rate = float(accept.mean()) if accept.size else float("nan")
    return SweepDiagnostics(
        sweep=after,
        log_joint=log_joint(state) if compute_log_joint else float("nan"),
        num_t_clusters=state.T,
        num_s_factors=state.S,
        num_z_topics=state.Z,
        mh_acceptance_rate=rate,
    )


def resample_global_sticks(state: State, rng):
    h = state.hyper
    state.phi0 = resample_sticks(state.n_ts, h.alpha_phi, state.phi0, h.alpha_phi0, rng)
    state.pi0 = resample_sticks(state.n_tz, h.alpha_pi, state.pi0, h.alpha_pi0, rng)


def sweep(state: State, config: SamplerConfig, rng, global_rng=None, order=None,
          compute_log_joint=True):
    """One full Gibbs sweep.

    ``rng`` drives the per-customer conditionals; ``global_rng`` (default:
    ``rng``) drives the concentration and stick updates. Keeping them apart
    lets a one-worker parallel run reproduce a serial run exactly.
    """
    if order is None:
        order = customer_order(state, config)
    customer_pass(state, order, rng, config.strict_paper_mode)
    return finish_sweep(state, config, rng if global_rng is None else global_rng,
                        compute_log_joint=compute_log_joint)


# -- initialisation ------------------------------------------------------------
def _init_t_log_weights(d, state: State, c_new):
    """Cluster weights for an unplaced customer with s and every z summed out.

    Views are scored independently given the cluster (no within-customer
    update). Used only to seed the chain.
    """
    h = state.hyper
    cat = h.catalog
    T, S, Z = state.T, state.S, state.Z
    logw = np.empty(T + 1)
    logw[:T] = _log(state.n_t.astype(float))
    logw[T] = math.log(h.alpha_omega)
    # location: mixture over live factors plus a new one
    loc = _kernels.location_log_weights(
        state.data.locations[d], state.sum_s_float(), state.c, np.ones(S),
        h.vmf_prior.c0 * h.vmf_prior.mu0, c_new, 0.0)
    prior_s = np.empty((T + 1, S + 1))
    prior_s[:T, :S] = state.n_ts + h.alpha_phi * state.phi0.weights
    prior_s[:T, S] = h.alpha_phi * state.phi0.remainder
    prior_s[:T] /= (state.n1_t + h.alpha_phi)[:, None]
    prior_s[T, :S] = state.phi0.weights
    prior_s[T, S] = state.phi0.remainder
    logw += logsumexp(_log(prior_s) + loc[None, :], axis=1)
    v = state.data.views(d)
    if v.size:
        prior_z = np.empty((T + 1, Z + 1))
        prior_z[:T, :Z] = state.n_tz + h.alpha_pi * state.pi0.weights
        prior_z[:T, Z] = h.alpha_pi * state.pi0.remainder
        prior_z[:T] /= (state.n2_t + h.alpha_pi)[:, None]
        prior_z[T, :Z] = state.pi0.weights
        prior_z[T, Z] = state.pi0.remainder
        item = np.empty((Z + 1, v.size))
        item[:Z] = (state.n_zv[:, v] + cat.gamma[v]) / (state.n_z + cat.gamma_sum)[:, None]
        item[Z] = cat.gamma[v] / cat.gamma_sum
        logw += np.log(prior_z @ item).sum(axis=1)
    return logw


def initialize(state: State, rng, method="sequential", strict=False, n_init=10):
    """Assign every customer and view.

    ``sequential`` adds customers one at a time: the cluster is drawn with
    the location factor and view topics summed out, then the location factor
    and each view topic from their conditionals given that cluster. ``single`` puts everything in one
    cluster, one location factor and one topic. ``random`` scatters customers
    and views uniformly over ``n_init`` factors of each kind.
    """
    data = state.data
    h = state.hyper
    prior = h.vmf_prior
    if method == "single":
        t = state.new_cluster()
        s = state.new_location_factor(math.exp(prior.m_c), rng)
        z = state.new_topic(rng) if data.n_views else None
        for d in range(data.n_customers):
            state.add_customer(d, t, s)
            for j in range(len(data.views(d))):
                state.add_view(d, j, z)
    elif method == "random":
        k = max(1, min(int(n_init), data.n_customers))
        for _ in range(k):
            state.new_cluster()
            state.new_location_factor(float(prior.sample_c(rng)), rng)
        if data.n_views:
            for _ in range(max(1, min(int(n_init), data.n_views))):
                state.new_topic(rng)
        ts = rng.integers(0, k, data.n_customers)
        ss = rng.integers(0, k, data.n_customers)
        zs = rng.integers(0, state.Z, data.n_views) if data.n_views else []
        for d in range(data.n_customers):
            state.add_customer(d, int(ts[d]), int(ss[d]))
        for i, z in enumerate(zs):
            d = int(data.owner[i])
            state.add_view(d, i - int(data.offsets[d]), int(z))
        state.prune()
    elif method == "sequential":
        for d in range(data.n_customers):
            c_new = float(prior.sample_c(rng))
            k = draw_log_categorical(_init_t_log_weights(d, state, c_new), rng)
            if k == state.T:
                state.new_cluster()
            state.attach_cluster(d, k)
            k = draw_log_categorical(s_log_weights(d, state, c_new), rng)
            if k == state.S:
                state.new_location_factor(c_new, rng)
            state.attach_location(d, k)
            for j in range(len(data.views(d))):
                sample_z(d, j, state, rng)
    else:
        raise ValueError(f"unknown initialisation method {method!r}")
    state.prune()
    resample_global_sticks(state, rng)
    return state


class Chain:
    """A serial chain: one state plus its customer-level and global random streams."""

    def __init__(self, state: State, config: SamplerConfig, local_rng=None, global_rng=None):
        self.state = state
        self.config = config
        self.local_rng = local_rng if local_rng is not None else worker_stream(config.rng_seed, 0)
        self.global_rng = global_rng if global_rng is not None else global_stream(config.rng_seed)

    def step(self, compute_log_joint=True):
        diag = sweep(self.state, self.config, self.local_rng, self.global_rng,
                     compute_log_joint=compute_log_joint)
        report_acceptance(diag)
        return diag


def report_acceptance(diag: SweepDiagnostics):
    """Log when the concentration acceptance rate leaves MH_ACCEPT_RANGE. No tuning is done."""
    lo, hi = MH_ACCEPT_RANGE
    if diag.num_s_factors and not lo <= diag.mh_acceptance_rate <= hi:
        log.debug("sweep %d: MH acceptance %.2f outside [%.2f, %.2f]",
                  diag.sweep, diag.mh_acceptance_rate, lo, hi)
