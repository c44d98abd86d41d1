"""Approximate shard-parallel Gibbs sampling.

Customers are split into contiguous ranges. Each worker sweeps its own
customers against a private copy of the global state, seeing the other
shards' assignments as they were at the last merge. At a barrier the count
changes of all shards are summed into the global tables, new factors are
given distinct global indices, and the global steps (pruning, concentration
updates, stick resampling) run once on the merged state.

A worker never shares mutable state with another worker; shards can be run
inline or shipped to a process pool.
"""
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import List

import numpy as np

from .errors import MergeEpochError
from .sampler import (SamplerConfig, customer_pass, customer_order, finish_sweep,
                      global_stream, initialize, report_acceptance, worker_stream)
from .state import GlobalSticks, State

log = logging.getLogger(__name__)

EXECUTORS = ("inline", "process")


@dataclass
class MergePolicy:
    """``sync_interval`` local passes between merges. Factors are aligned by
    global index; factors born on different shards are never fused."""

    sync_interval: int = 1

    def problems(self):
        return [] if int(self.sync_interval) >= 1 else ["sync_interval must be >= 1"]


@dataclass
class Shard:
    index: int
    start: int
    stop: int
    state: State
    rng: np.random.Generator
    epoch: int

    @property
    def customers(self):
        return np.arange(self.start, self.stop)

    @property
    def size(self):
        return self.stop - self.start


def split_ranges(n, P):
    """Contiguous near-equal ranges; the first ``n % P`` get one extra customer."""
    P = max(1, min(int(P), int(n))) if n else 1
    base, extra = divmod(int(n), P)
    sizes = [base + (p < extra) for p in range(P)]
    bounds = np.concatenate([[0], np.cumsum(sizes)]).astype(int)
    return [(int(bounds[p]), int(bounds[p + 1])) for p in range(P)]


def partition(state: State, P, rngs=None, epoch=None):
    """Shards over contiguous customer ranges, each holding a deep copy of ``state``.

    ``P`` larger than the number of customers collapses to one shard per
    customer. ``rngs`` defaults to fresh worker streams of seed 0.
    """
    if int(P) < 1:
        raise ValueError("P must be >= 1")
    epoch = state.n_sweeps if epoch is None else epoch
    ranges = split_ranges(state.data.n_customers, P)
    if rngs is None:
        rngs = [worker_stream(0, p) for p in range(len(ranges))]
    return [Shard(p, lo, hi, state.copy(), rngs[p], epoch) for p, (lo, hi) in enumerate(ranges)]


def run_shard(shard: Shard, passes=1, order=None, strict=False):
    """Local passes over the shard's customers; nothing is pruned."""
    customers = shard.customers if order is None else order
    for _ in range(int(passes)):
        customer_pass(shard.state, customers, shard.rng, strict)
    return shard


def _pad(a, shape):
    out = np.zeros(shape, dtype=a.dtype)
    out[tuple(slice(0, k) for k in a.shape)] = a
    return out


class MergeResult:
    def __init__(self, state, clamped):
        self.state = state
        self.clamped = clamped


def merge(shards: List[Shard], before: State):
    """Global state after applying every shard's count changes to ``before``.

    Tables become ``before + sum_p (local_p - before)``. Shard ``p``'s new
    factors are appended after those of shards ``0..p-1``. Each customer's
    assignments come from the shard that owns it. Negative cells (never
    expected) are clamped to zero and counted in ``MergeResult.clamped``.
    """
    epoch = before.n_sweeps
    for sh in shards:
        if sh.epoch != epoch:
            raise MergeEpochError(f"shard {sh.index} synced at epoch {sh.epoch}, "
                                  f"global state is at {epoch}")
        if sh.state.T < before.T or sh.state.S < before.S or sh.state.Z < before.Z:
            raise MergeEpochError(f"shard {sh.index} does not extend the global state")
    T0, S0, Z0 = before.T, before.S, before.Z
    new_t = [sh.state.T - T0 for sh in shards]
    new_s = [sh.state.S - S0 for sh in shards]
    new_z = [sh.state.Z - Z0 for sh in shards]
    T, S, Z = T0 + sum(new_t), S0 + sum(new_s), Z0 + sum(new_z)

    out = before.copy()
    V = before.hyper.catalog.V
    out.n_t = _pad(before.n_t, (T,))
    out.n1_t = _pad(before.n1_t, (T,))
    out.n2_t = _pad(before.n2_t, (T,))
    out.n_ts = _pad(before.n_ts, (T, S))
    out.n_tz = _pad(before.n_tz, (T, Z))
    out.n_s = _pad(before.n_s, (S,))
    out.sum_s = _pad(before.sum_s, (S, 3))
    out.n_zv = _pad(before.n_zv, (Z, V))
    out.n_z = _pad(before.n_z, (Z,))
    out.c = np.concatenate([before.c] + [sh.state.c[S0:] for sh in shards])

    off_t, off_s, off_z = T0, S0, Z0
    rem0 = before.phi0.remainder, before.pi0.remainder
    phi_w, pi_w = [before.phi0.weights], [before.pi0.weights]
    phi_scale = pi_scale = 1.0
    phi_rem = pi_rem = None
    for p, sh in enumerate(shards):
        ls = sh.state
        mt = np.concatenate([np.arange(T0), off_t + np.arange(new_t[p])]).astype(np.int64)
        ms = np.concatenate([np.arange(S0), off_s + np.arange(new_s[p])]).astype(np.int64)
        mz = np.concatenate([np.arange(Z0), off_z + np.arange(new_z[p])]).astype(np.int64)
        out.n_t[mt] += ls.n_t - _pad(before.n_t, ls.n_t.shape)
        out.n1_t[mt] += ls.n1_t - _pad(before.n1_t, ls.n1_t.shape)
        out.n2_t[mt] += ls.n2_t - _pad(before.n2_t, ls.n2_t.shape)
        out.n_ts[np.ix_(mt, ms)] += ls.n_ts - _pad(before.n_ts, ls.n_ts.shape)
        out.n_tz[np.ix_(mt, mz)] += ls.n_tz - _pad(before.n_tz, ls.n_tz.shape)
        out.n_s[ms] += ls.n_s - _pad(before.n_s, ls.n_s.shape)
        out.sum_s[ms] += ls.sum_s - _pad(before.sum_s, ls.sum_s.shape)
        out.n_zv[mz] += ls.n_zv - _pad(before.n_zv, ls.n_zv.shape)
        out.n_z[mz] += ls.n_z - _pad(before.n_z, ls.n_z.shape)

        lo, hi = sh.start, sh.stop
        out.t[lo:hi] = mt[ls.t[lo:hi]]
        out.s[lo:hi] = ms[ls.s[lo:hi]]
        vlo, vhi = before.data.offsets[lo], before.data.offsets[hi]
        out.z[vlo:vhi] = mz[ls.z[vlo:vhi]]

        # every shard split the same remainder; compose the splits in shard order
        phi_w.append(ls.phi0.weights[S0:] * phi_scale)
        pi_w.append(ls.pi0.weights[Z0:] * pi_scale)
        if p == 0:
            phi_rem, pi_rem = ls.phi0.remainder, ls.pi0.remainder
        else:
            phi_rem *= ls.phi0.remainder / rem0[0]
            pi_rem *= ls.pi0.remainder / rem0[1]
        phi_scale *= ls.phi0.remainder / rem0[0]
        pi_scale *= ls.pi0.remainder / rem0[1]
        off_t += new_t[p]
        off_s += new_s[p]
        off_z += new_z[p]
    out.phi0 = GlobalSticks(np.concatenate(phi_w), phi_rem)
    out.pi0 = GlobalSticks(np.concatenate(pi_w), pi_rem)

    clamped = 0
    for name in ("n_t", "n1_t", "n2_t", "n_ts", "n_tz", "n_s", "n_zv", "n_z"):
        a = getattr(out, name)
        neg = a < 0
        if neg.any():
            clamped += int(neg.sum())
            a[neg] = 0
    if clamped:
        log.warning("merge clamped %d negative count cells", clamped)
    return MergeResult(out, clamped)


def _remote_shard(args):
    shard, passes, order, strict = args
    return run_shard(shard, passes, order, strict)


class ParallelRunner:
    """Alternates local shard passes and global merges.

    Randomness: ``global_rng`` drives initialisation and the global steps,
    worker ``p`` always uses ``worker_rngs[p]``. With one worker and
    ``sync_interval = 1`` the run is bit-identical to a serial
    :class:`~geohdp.sampler.Chain` with the same streams.
    """

    def __init__(self, state: State, config: SamplerConfig, P=1, policy=None,
                 executor="inline", global_rng=None, worker_rngs=None):
        if executor not in EXECUTORS:
            raise ValueError(f"executor must be one of {EXECUTORS}")
        self.state = state
        self.config = config
        self.policy = policy or MergePolicy()
        self.P = len(split_ranges(state.data.n_customers, P))
        self.executor = executor
        self.global_rng = global_rng if global_rng is not None else global_stream(config.rng_seed)
        self.worker_rngs = (list(worker_rngs) if worker_rngs is not None
                            else [worker_stream(config.rng_seed, p) for p in range(self.P)])
        if len(self.worker_rngs) < self.P:
            raise ValueError("need one random stream per worker")
        self.clamped = 0
        self._pool = None

    def _orders(self, shards):
        order = customer_order(self.state, self.config)
        if self.config.order_seed is None:
            return [None] * len(shards)
        return [order[(order >= sh.start) & (order < sh.stop)] for sh in shards]

    def step(self, compute_log_joint=True):
        """One merge epoch: ``sync_interval`` local passes on every shard, then merge."""
        passes = int(self.policy.sync_interval)
        strict = self.config.strict_paper_mode
        shards = partition(self.state, self.P, self.worker_rngs)
        jobs = [(sh, passes, o, strict) for sh, o in zip(shards, self._orders(shards))]
        if self.executor == "process" and len(shards) > 1:
            if self._pool is None:
                self._pool = ProcessPoolExecutor(max_workers=len(shards))
            shards = list(self._pool.map(_remote_shard, jobs))
        else:
            shards = [_remote_shard(j) for j in jobs]
        # a process worker hands back an advanced copy of its stream
        self.worker_rngs = [sh.rng for sh in shards]
        res = merge(shards, self.state)
        self.clamped += res.clamped
        self.state = res.state
        diag = finish_sweep(self.state, self.config, self.global_rng, passes=passes,
                            compute_log_joint=compute_log_joint)
        report_acceptance(diag)
        return diag

    def close(self):
        if self._pool is not None:
            self._pool.shutdown()
            self._pool = None


def run_parallel(data, hyper, config: SamplerConfig, P, n_sweeps, policy=None,
                 executor="inline", init="sequential", compute_log_joint=True):
    """Initialise from ``config.rng_seed`` and run ``n_sweeps`` local passes in merge epochs.

    Returns ``(state, diagnostics, runner)``; one diagnostics record per epoch.
    """
    policy = policy or MergePolicy()
    state = State(data, hyper)
    g = global_stream(config.rng_seed)
    initialize(state, g, method=init, strict=config.strict_paper_mode)
    runner = ParallelRunner(state, config, P, policy, executor, global_rng=g)
    diags = []
    try:
        done = 0
        while done < n_sweeps:
            diags.append(runner.step(compute_log_joint))
            done += policy.sync_interval
    finally:
        runner.close()
    return runner.state, diags, runner
