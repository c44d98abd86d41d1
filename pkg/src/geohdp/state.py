"""Latent state of the model and its sufficient statistics.

Three kinds of latent factors are tracked:

* interaction clusters ``t`` (one per customer),
* location factors ``s`` (one per customer, vMF components),
* video topics ``z`` (one per view, Dirichlet-multinomial components).

Location sums are kept in fixed point (int64, 2**-42 resolution). Customer
locations are snapped to that grid when a :class:`Dataset` is built, so
every sum of member locations is exact: add/remove round-trips, count-delta
merges and from-scratch audits all agree bit for bit.
"""
import math
from dataclasses import dataclass
from typing import ClassVar, NamedTuple

import numpy as np

from .dirmult import CatalogParams
from .errors import InvalidItemError, StateCorruptionError
from .vmf import VmfPrior

LOC_BITS = 42
LOC_SCALE = float(2 ** LOC_BITS)
# int64 headroom: |sum| < 2**63 / 2**42 = 2**21 members per factor
MAX_CUSTOMERS = 2 ** 21 - 1


def quantize_locations(locations):
    q = np.rint(np.asarray(locations, dtype=float) * LOC_SCALE)
    return q.astype(np.int64)


def dequantize(q):
    return np.asarray(q, dtype=np.float64) / LOC_SCALE


@dataclass(frozen=True)
class Hyperparams:
    alpha_phi0: float
    alpha_pi0: float
    alpha_omega: float
    alpha_phi: float
    alpha_pi: float
    catalog: CatalogParams
    vmf_prior: VmfPrior

    def __post_init__(self):
        for name in ("alpha_phi0", "alpha_pi0", "alpha_omega", "alpha_phi", "alpha_pi"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise ValueError(f"{name} must be positive, got {v}")


class Dataset:
    """Customers with a unit-vector location and a bag of item indices.

    Views are stored flat: customer ``d`` owns ``items[offsets[d]:offsets[d+1]]``.
    """

    def __init__(self, locations, views, n_items, customer_ids=None):
        loc = np.asarray(locations, dtype=float).reshape(-1, 3)
        n = loc.shape[0]
        if n > MAX_CUSTOMERS:
            raise ValueError(f"at most {MAX_CUSTOMERS} customers are supported")
        norms = np.linalg.norm(loc, axis=1)
        if np.any(np.abs(norms - 1.0) > 1e-6):
            raise ValueError("locations must be unit vectors")
        self.loc_q = quantize_locations(loc / norms[:, None])
        self.locations = dequantize(self.loc_q)
        if len(views) != n:
            raise ValueError("need one view list per customer")
        lens = np.array([len(v) for v in views], dtype=np.int64)
        self.offsets = np.concatenate([[0], np.cumsum(lens)]).astype(np.int64)
        self.items = (np.concatenate([np.asarray(v, dtype=np.int64) for v in views])
                      if n and self.offsets[-1] else np.zeros(0, dtype=np.int64))
        self.n_items = int(n_items)
        if self.items.size and (self.items.min() < 0 or self.items.max() >= self.n_items):
            raise InvalidItemError(f"item indices must lie in [0, {self.n_items})")
        if customer_ids is None:
            customer_ids = [str(i) for i in range(n)]
        self.customer_ids = list(customer_ids)
        self.owner = np.repeat(np.arange(n, dtype=np.int64), lens)

    @property
    def n_customers(self):
        return self.loc_q.shape[0]

    @property
    def n_views(self):
        return int(self.items.size)

    def view_counts(self):
        return np.diff(self.offsets)

    def views(self, d):
        return self.items[self.offsets[d]:self.offsets[d + 1]]

    def view_lists(self):
        return [self.views(d).tolist() for d in range(self.n_customers)]

    def subset(self, idx):
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(self.locations[idx], [self.views(d) for d in idx], self.n_items,
                       [self.customer_ids[d] for d in idx])

    def with_items(self, items):
        """Same customers and locations, different item draws (same bag sizes)."""
        items = np.asarray(items, dtype=np.int64)
        return Dataset(self.locations, np.split(items, self.offsets[1:-1]),
                       self.n_items, self.customer_ids)


@dataclass
class GlobalSticks:
    """Weights of represented atoms plus the mass of all unrepresented ones."""

    weights: np.ndarray
    remainder: float

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        self.remainder = float(self.remainder)

    def total(self):
        return float(self.weights.sum()) + self.remainder

    def split_new(self, alpha0, rng):
        """Carve a new atom's weight off the remainder: b ~ Beta(1, alpha0)."""
        b = rng.beta(1.0, alpha0)
        w_new = b * self.remainder
        self.remainder = (1.0 - b) * self.remainder
        if self.remainder <= 0.0:
            self.remainder = np.finfo(float).tiny
        self.weights = np.append(self.weights, w_new)
        return w_new

    def drop(self, keep):
        self.remainder += float(self.weights[~keep].sum())
        self.weights = self.weights[keep]

    def copy(self):
        return GlobalSticks(self.weights.copy(), self.remainder)


class Remap(NamedTuple):
    """Old-index -> new-index maps produced by pruning (-1 marks a removed factor)."""

    t: np.ndarray
    s: np.ndarray
    z: np.ndarray


@dataclass
class CountTables:
    n_t: np.ndarray
    n_ts: np.ndarray
    n_tz: np.ndarray
    n1_t: np.ndarray
    n2_t: np.ndarray
    n_s: np.ndarray
    sum_s: np.ndarray  # fixed point, see LOC_SCALE
    n_zv: np.ndarray
    n_z: np.ndarray
    names: ClassVar[tuple] = ("n_t", "n_ts", "n_tz", "n1_t", "n2_t", "n_s", "sum_s",
                              "n_zv", "n_z")

    def mismatches(self, other):
        bad = []
        for name in self.names:
            a, b = getattr(self, name), getattr(other, name)
            if a.shape != b.shape or not np.array_equal(a, b):
                bad.append(name)
        return bad

    def __eq__(self, other):
        return isinstance(other, CountTables) and not self.mismatches(other)

    @property
    def sum_s_float(self):
        return dequantize(self.sum_s)


def _relabel(keep):
    m = np.full(keep.size, -1, dtype=np.int64)
    m[keep] = np.arange(int(keep.sum()))
    return m


class State:
    """Assignments, concentrations, global sticks and incrementally kept counts.

    Indicator arrays use -1 for "unassigned". Customers are attached at two
    levels: ``attach_cluster`` (t) and ``attach_location`` (s). Views are
    attached individually. Nothing is pruned implicitly by the attach/detach
    primitives; call :meth:`prune` (or ``remove_customer(..., prune=True)``).
    """

    def __init__(self, data: Dataset, hyper: Hyperparams):
        if data.n_items != hyper.catalog.V:
            raise ValueError(f"dataset has V={data.n_items}, hyperparameters V={hyper.catalog.V}")
        self.data = data
        self.hyper = hyper
        n, nv, V = data.n_customers, data.n_views, hyper.catalog.V
        self.t = np.full(n, -1, dtype=np.int64)
        self.s = np.full(n, -1, dtype=np.int64)
        self.z = np.full(nv, -1, dtype=np.int64)
        self.n_t = np.zeros(0, dtype=np.int64)
        self.n1_t = np.zeros(0, dtype=np.int64)
        self.n2_t = np.zeros(0, dtype=np.int64)
        self.n_ts = np.zeros((0, 0), dtype=np.int64)
        self.n_tz = np.zeros((0, 0), dtype=np.int64)
        self.n_s = np.zeros(0, dtype=np.int64)
        self.sum_s = np.zeros((0, 3), dtype=np.int64)
        self.c = np.zeros(0)
        self.n_zv = np.zeros((0, V), dtype=np.int64)
        self.n_z = np.zeros(0, dtype=np.int64)
        self.phi0 = GlobalSticks(np.zeros(0), 1.0)
        self.pi0 = GlobalSticks(np.zeros(0), 1.0)
        self.n_sweeps = 0

    # -- sizes -------------------------------------------------------------
    @property
    def T(self):
        return self.n_t.size

    @property
    def S(self):
        return self.n_s.size

    @property
    def Z(self):
        return self.n_z.size

    def sum_s_float(self):
        return dequantize(self.sum_s)

    # -- factor allocation ---------------------------------------------------
    def new_cluster(self):
        T, S, Z = self.T, self.S, self.Z
        self.n_t = np.append(self.n_t, 0)
        self.n1_t = np.append(self.n1_t, 0)
        self.n2_t = np.append(self.n2_t, 0)
        self.n_ts = np.vstack([self.n_ts, np.zeros((1, S), dtype=np.int64)])
        self.n_tz = np.vstack([self.n_tz, np.zeros((1, Z), dtype=np.int64)])
        return T

    def new_location_factor(self, c, rng, weight=None):
        """Append an empty location factor with concentration ``c``.

        Its global stick weight is split off the remainder unless ``weight``
        is given explicitly (used when rebuilding a known state).
        """
        S = self.S
        self.n_s = np.append(self.n_s, 0)
        self.sum_s = np.vstack([self.sum_s, np.zeros((1, 3), dtype=np.int64)])
        self.c = np.append(self.c, float(c))
        self.n_ts = np.hstack([self.n_ts, np.zeros((self.T, 1), dtype=np.int64)])
        if weight is None:
            self.phi0.split_new(self.hyper.alpha_phi0, rng)
        else:
            self.phi0.weights = np.append(self.phi0.weights, weight)
        return S

    def new_topic(self, rng, weight=None):
        Z = self.Z
        self.n_z = np.append(self.n_z, 0)
        self.n_zv = np.vstack([self.n_zv, np.zeros((1, self.hyper.catalog.V), dtype=np.int64)])
        self.n_tz = np.hstack([self.n_tz, np.zeros((self.T, 1), dtype=np.int64)])
        if weight is None:
            self.pi0.split_new(self.hyper.alpha_pi0, rng)
        else:
            self.pi0.weights = np.append(self.pi0.weights, weight)
        return Z

    # -- customer level ------------------------------------------------------
    def _assigned_topics(self, d):
        zs = self.z[self.data.offsets[d]:self.data.offsets[d + 1]]
        return zs[zs >= 0]

    def attach_cluster(self, d, t):
        if self.t[d] >= 0:
            raise StateCorruptionError(f"customer {d} already in cluster {self.t[d]}")
        if not 0 <= t < self.T:
            raise StateCorruptionError(f"cluster {t} does not exist")
        self.t[d] = t
        self.n_t[t] += 1
        s = self.s[d]
        if s >= 0:
            self.n_ts[t, s] += 1
            self.n1_t[t] += 1
        zs = self._assigned_topics(d)
        if zs.size:
            np.add.at(self.n_tz[t], zs, 1)
            self.n2_t[t] += zs.size

    def detach_cluster(self, d):
        t = self.t[d]
        if t < 0:
            raise StateCorruptionError(f"customer {d} has no cluster")
        self.t[d] = -1
        self.n_t[t] -= 1
        s = self.s[d]
        if s >= 0:
            self.n_ts[t, s] -= 1
            self.n1_t[t] -= 1
        zs = self._assigned_topics(d)
        if zs.size:
            np.subtract.at(self.n_tz[t], zs, 1)
            self.n2_t[t] -= zs.size
        return t

    def attach_location(self, d, s):
        if self.s[d] >= 0:
            raise StateCorruptionError(f"customer {d} already in location factor {self.s[d]}")
        if not 0 <= s < self.S:
            raise StateCorruptionError(f"location factor {s} does not exist")
        self.s[d] = s
        self.n_s[s] += 1
        self.sum_s[s] += self.data.loc_q[d]
        t = self.t[d]
        if t >= 0:
            self.n_ts[t, s] += 1
            self.n1_t[t] += 1

    def detach_location(self, d):
        s = self.s[d]
        if s < 0:
            raise StateCorruptionError(f"customer {d} has no location factor")
        self.s[d] = -1
        self.n_s[s] -= 1
        self.sum_s[s] -= self.data.loc_q[d]
        t = self.t[d]
        if t >= 0:
            self.n_ts[t, s] -= 1
            self.n1_t[t] -= 1
        return s

    def add_customer(self, d, t, s):
        """Attach customer ``d`` to cluster ``t`` and location factor ``s``.

        Views are attached separately with :meth:`add_view`.
        """
        if self.t[d] >= 0 or self.s[d] >= 0:
            raise StateCorruptionError(f"customer {d} is already assigned")
        self.attach_location(d, s)
        self.attach_cluster(d, t)

    def remove_customer(self, d, prune=True):
        """Detach customer ``d`` and all of its views.

        Returns the :class:`Remap` from pruning (or None when ``prune`` is False).
        """
        if self.t[d] < 0 and self.s[d] < 0:
            raise StateCorruptionError(f"customer {d} is not assigned")
        for j in range(self.data.offsets[d + 1] - self.data.offsets[d]):
            if self.z[self.data.offsets[d] + j] >= 0:
                self.remove_view(d, j)
        if self.t[d] >= 0:
            self.detach_cluster(d)
        if self.s[d] >= 0:
            self.detach_location(d)
        return self.prune() if prune else None

    # -- view level ----------------------------------------------------------
    def add_view(self, d, j, z):
        i = self.data.offsets[d] + j
        if self.z[i] >= 0:
            raise StateCorruptionError(f"view ({d}, {j}) already in topic {self.z[i]}")
        if not 0 <= z < self.Z:
            raise StateCorruptionError(f"topic {z} does not exist")
        self.z[i] = z
        self.n_zv[z, self.data.items[i]] += 1
        self.n_z[z] += 1
        t = self.t[d]
        if t >= 0:
            self.n_tz[t, z] += 1
            self.n2_t[t] += 1

    def remove_view(self, d, j, prune=False):
        i = self.data.offsets[d] + j
        z = self.z[i]
        if z < 0:
            raise StateCorruptionError(f"view ({d}, {j}) is not assigned")
        self.z[i] = -1
        self.n_zv[z, self.data.items[i]] -= 1
        self.n_z[z] -= 1
        t = self.t[d]
        if t >= 0:
            self.n_tz[t, z] -= 1
            self.n2_t[t] -= 1
        if prune:
            return self.prune()
        return z

    # -- pruning -------------------------------------------------------------
    def prune(self):
        """Drop empty factors, compact indices and fold their stick mass into the remainder."""
        keep_t = self.n_t > 0
        keep_s = self.n_s > 0
        keep_z = self.n_z > 0
        remap = Remap(_relabel(keep_t), _relabel(keep_s), _relabel(keep_z))
        if keep_t.all() and keep_s.all() and keep_z.all():
            return remap
        self.n_t = self.n_t[keep_t]
        self.n1_t = self.n1_t[keep_t]
        self.n2_t = self.n2_t[keep_t]
        self.n_ts = self.n_ts[np.ix_(keep_t, keep_s)]
        self.n_tz = self.n_tz[np.ix_(keep_t, keep_z)]
        self.n_s = self.n_s[keep_s]
        self.sum_s = self.sum_s[keep_s]
        self.c = self.c[keep_s]
        self.n_zv = self.n_zv[keep_z]
        self.n_z = self.n_z[keep_z]
        self.phi0.drop(keep_s)
        self.pi0.drop(keep_z)
        for arr, m in ((self.t, remap.t), (self.s, remap.s), (self.z, remap.z)):
            a = arr >= 0
            arr[a] = m[arr[a]]
        return remap

    # -- auditing ------------------------------------------------------------
    def counts(self):
        """Snapshot (copy) of the incrementally maintained tables."""
        return CountTables(self.n_t.copy(), self.n_ts.copy(), self.n_tz.copy(),
                           self.n1_t.copy(), self.n2_t.copy(), self.n_s.copy(),
                           self.sum_s.copy(), self.n_zv.copy(), self.n_z.copy())

    def recount(self):
        """All tables recomputed from the assignment arrays alone."""
        data = self.data
        T, S, Z, V = self.T, self.S, self.Z, self.hyper.catalog.V
        t, s, z = self.t, self.s, self.z
        n_t = np.bincount(t[t >= 0], minlength=T).astype(np.int64)
        both = (t >= 0) & (s >= 0)
        n_ts = np.zeros((T, S), dtype=np.int64)
        np.add.at(n_ts, (t[both], s[both]), 1)
        vt = t[data.owner]
        vz = (z >= 0) & (vt >= 0)
        n_tz = np.zeros((T, Z), dtype=np.int64)
        np.add.at(n_tz, (vt[vz], z[vz]), 1)
        n_s = np.bincount(s[s >= 0], minlength=S).astype(np.int64)
        sum_s = np.zeros((S, 3), dtype=np.int64)
        np.add.at(sum_s, s[s >= 0], data.loc_q[s >= 0])
        n_zv = np.zeros((Z, V), dtype=np.int64)
        za = z >= 0
        np.add.at(n_zv, (z[za], data.items[za]), 1)
        n_z = n_zv.sum(axis=1)
        return CountTables(n_t, n_ts, n_tz, n_ts.sum(axis=1), n_tz.sum(axis=1),
                           n_s, sum_s, n_zv, n_z)

    def audit(self):
        """Raise StateCorruptionError unless incremental tables equal a fresh recount."""
        bad = self.counts().mismatches(self.recount())
        if bad:
            raise StateCorruptionError(f"count tables out of sync: {', '.join(bad)}")
        if self.c.size != self.S or np.any(self.c <= 0):
            raise StateCorruptionError("concentrations missing or non-positive")
        if self.phi0.weights.size != self.S or self.pi0.weights.size != self.Z:
            raise StateCorruptionError("stick vectors do not match live factors")
        for st in (self.phi0, self.pi0):
            if abs(st.total() - 1.0) > 1e-9:
                raise StateCorruptionError(f"sticks sum to {st.total()}")

    def load_counts(self, tables: CountTables):
        for name in tables.names:
            setattr(self, name, getattr(tables, name).copy())

    # -- misc ----------------------------------------------------------------
    def copy(self):
        new = State.__new__(State)
        new.data = self.data
        new.hyper = self.hyper
        for name in ("t", "s", "z", "n_t", "n1_t", "n2_t", "n_ts", "n_tz", "n_s", "sum_s",
                     "c", "n_zv", "n_z"):
            setattr(new, name, getattr(self, name).copy())
        new.phi0 = self.phi0.copy()
        new.pi0 = self.pi0.copy()
        new.n_sweeps = self.n_sweeps
        return new

    def is_fully_assigned(self):
        return bool(np.all(self.t >= 0) and np.all(self.s >= 0) and np.all(self.z >= 0))

    @classmethod
    def from_assignments(cls, data, hyper, t, s, z, c, phi0, pi0, n_sweeps=0):
        """Rebuild a state from indicator arrays; counts are recomputed."""
        st = cls(data, hyper)
        st.t = np.asarray(t, dtype=np.int64).copy()
        st.s = np.asarray(s, dtype=np.int64).copy()
        st.z = np.asarray(z, dtype=np.int64).copy()
        if st.t.shape != (data.n_customers,) or st.s.shape != (data.n_customers,) \
                or st.z.shape != (data.n_views,):
            raise StateCorruptionError("assignment arrays do not match the dataset")
        st.c = np.asarray(c, dtype=float).copy()
        T = int(st.t.max()) + 1 if st.t.size else 0
        S = st.c.size
        Z = int(np.asarray(pi0.weights).size)
        st.n_t = np.zeros(T, dtype=np.int64)
        st.n_s = np.zeros(S, dtype=np.int64)
        st.n_z = np.zeros(Z, dtype=np.int64)
        st.n_ts = np.zeros((T, S), dtype=np.int64)
        st.n_tz = np.zeros((T, Z), dtype=np.int64)
        st.n_zv = np.zeros((Z, hyper.catalog.V), dtype=np.int64)
        st.sum_s = np.zeros((S, 3), dtype=np.int64)
        if (st.s.size and st.s.max() >= S) or (st.z.size and st.z.max() >= Z):
            raise StateCorruptionError("assignment refers to a missing factor")
        st.load_counts(st.recount())
        st.phi0 = phi0.copy()
        st.pi0 = pi0.copy()
        st.n_sweeps = int(n_sweeps)
        return st


def default_hyperparams(V, **overrides):
    """Hyperparameters used when nothing else is configured.

    Concentrations default to 1, gamma to a symmetric 0.1, mu0 to the north
    pole with a weak c0 = 0.1, and log c ~ Normal(log 20, 1).
    """
    gamma = overrides.pop("gamma", 0.1)
    prior = VmfPrior(np.asarray(overrides.pop("mu0", (0.0, 0.0, 1.0)), dtype=float),
                     overrides.pop("c0", 0.1), overrides.pop("m_c", math.log(20.0)),
                     overrides.pop("sigma_c", 1.0))
    kw = dict(alpha_phi0=1.0, alpha_pi0=1.0, alpha_omega=1.0, alpha_phi=1.0, alpha_pi=1.0)
    kw.update(overrides)
    return Hyperparams(catalog=CatalogParams.symmetric_prior(V, gamma), vmf_prior=prior, **kw)


def sample_crt(n, a, rng):
    """Number of occupied tables after seating ``n`` customers in a CRP(``a``).

    Vectorised over arrays ``n`` (counts) and ``a`` (concentrations). Exact:
    customer i (0-based) opens a table with probability a / (a + i).
    """
    n = np.asarray(n, dtype=np.int64)
    a = np.broadcast_to(np.asarray(a, dtype=float), n.shape)
    flat_n = n.ravel()
    flat_a = a.ravel()
    out = np.zeros(flat_n.size, dtype=np.int64)
    cells = np.flatnonzero(flat_n > 0)
    if cells.size == 0:
        return out.reshape(n.shape)
    reps = flat_n[cells]
    total = int(reps.sum())
    starts = np.concatenate([[0], np.cumsum(reps)[:-1]])
    i = np.arange(total) - np.repeat(starts, reps)
    aa = np.repeat(flat_a[cells], reps)
    opened = rng.random(total) < aa / (aa + i)
    out[cells] = np.add.reduceat(opened.astype(np.int64), starts)
    return out.reshape(n.shape)


def resample_sticks(counts, alpha, sticks: GlobalSticks, alpha0, rng):
    """Direct-assignment draw of a global stick vector.

    ``counts`` is (groups, K): how many items of each group sit with each of
    the K represented atoms. Table counts m[g, k] ~ CRT(counts[g, k],
    alpha * sticks.weights[k]); then (weights, remainder) ~
    Dirichlet(m[:, 1], ..., m[:, K], alpha0). Atoms with no tables get weight 0.
    """
    counts = np.asarray(counts, dtype=np.int64)
    K = counts.shape[1] if counts.ndim == 2 else 0
    if K == 0:
        return GlobalSticks(np.zeros(0), 1.0)
    m = sample_crt(counts, alpha * sticks.weights[None, :], rng).sum(axis=0)
    g = np.zeros(K)
    pos = m > 0
    g[pos] = rng.standard_gamma(m[pos].astype(float))
    g0 = max(rng.standard_gamma(alpha0), np.finfo(float).tiny)
    total = g.sum() + g0
    return GlobalSticks(g / total, g0 / total)
