"""Held-out likelihood, partition agreement and factor summaries."""
import json
import math
from dataclasses import asdict, dataclass, field
from typing import List, Optional

import numpy as np
from scipy.special import logsumexp

from . import vmf
from .errors import InvalidItemError
from .geo import unit_to_latlon
from .state import Dataset, State

N_QUAD = 32


# -- held-out likelihood -------------------------------------------------------
def cluster_weights(state: State):
    """CRP predictive over live clusters plus a new one (last)."""
    a = state.hyper.alpha_omega
    N = float(state.n_t.sum())
    return np.append(state.n_t, a) / (N + a)


def view_predictive(state: State):
    """Probability of each catalog item for a view of an unseen customer (length V)."""
    h = state.hyper
    cat = h.catalog
    T, Z = state.T, state.Z
    P = np.empty((T + 1, Z + 1))
    P[:T, :Z] = state.n_tz + h.alpha_pi * state.pi0.weights
    P[:T, Z] = h.alpha_pi * state.pi0.remainder
    P[:T] /= (state.n2_t + h.alpha_pi)[:, None]
    P[T, :Z] = state.pi0.weights
    P[T, Z] = state.pi0.remainder
    q = cluster_weights(state) @ P
    B = np.empty((Z + 1, cat.V))
    B[:Z] = (state.n_zv + cat.gamma) / (state.n_z + cat.gamma_sum)[:, None]
    B[Z] = cat.gamma / cat.gamma_sum
    return q @ B


def new_factor_log_predictive(x, prior: vmf.VmfPrior, n_quad=N_QUAD):
    """log of the predictive of ``x`` (rows) under a fresh factor, c integrated
    over its log-normal prior by Gauss-Hermite quadrature."""
    u, w = np.polynomial.hermite.hermgauss(n_quad)
    c = np.exp(prior.m_c + math.sqrt(2.0) * prior.sigma_c * u)
    x = np.atleast_2d(x)
    base = prior.c0 * prior.mu0
    r_in = np.linalg.norm(c[None, :, None] * x[:, None, :] + base, axis=2)
    lp = vmf.log_norm_const(c)[None, :] + vmf.log_norm_const(prior.c0) - vmf.log_norm_const(r_in)
    return logsumexp(lp + np.log(w / math.sqrt(math.pi))[None, :], axis=1)


def location_log_predictive(state: State, x):
    """log p(x) for the locations ``x`` (n, 3) of unseen customers."""
    h = state.hyper
    prior = h.vmf_prior
    T, S = state.T, state.S
    Q = np.empty((T + 1, S + 1))
    Q[:T, :S] = state.n_ts + h.alpha_phi * state.phi0.weights
    Q[:T, S] = h.alpha_phi * state.phi0.remainder
    Q[:T] /= (state.n1_t + h.alpha_phi)[:, None]
    Q[T, :S] = state.phi0.weights
    Q[T, S] = state.phi0.remainder
    r = cluster_weights(state) @ Q
    x = np.atleast_2d(np.asarray(x, dtype=float))
    lf = np.empty((x.shape[0], S + 1))
    if S:
        sf = state.sum_s_float()
        for i, xi in enumerate(x):
            lf[i, :S] = vmf.predictive_log_prob(xi, sf, state.c, prior)
    lf[:, S] = new_factor_log_predictive(x, prior)
    with np.errstate(divide="ignore"):
        return logsumexp(lf + np.log(r)[None, :], axis=1)


def heldout_loglik(state: State, heldout: Dataset):
    """Mean held-out log probability per view and per location.

    Every held-out customer is treated as unseen; its views are scored
    one at a time against the training state.
    """
    V = state.hyper.catalog.V
    if heldout.n_views and (heldout.items.min() < 0 or heldout.items.max() >= V):
        raise InvalidItemError(f"held-out item index outside [0, {V})")
    per_view = float("nan")
    if heldout.n_views:
        p = view_predictive(state)
        per_view = float(np.mean(np.log(p[heldout.items])))
    per_loc = float("nan")
    if heldout.n_customers:
        per_loc = float(np.mean(location_log_predictive(state, heldout.locations)))
    return per_view, per_loc


# -- partition agreement ---------------------------------------------------------
def _pairs(n):
    n = np.asarray(n, dtype=float)
    return n * (n - 1.0) / 2.0


def ari(pred, truth):
    """Adjusted Rand index by pair counting over the contingency table."""
    pred = np.asarray(pred).ravel()
    truth = np.asarray(truth).ravel()
    if pred.shape != truth.shape:
        raise ValueError(f"partitions have {pred.size} and {truth.size} elements")
    n = pred.size
    if n < 2:
        return 1.0
    _, a = np.unique(pred, return_inverse=True)
    _, b = np.unique(truth, return_inverse=True)
    table = np.zeros((a.max() + 1, b.max() + 1), dtype=np.int64)
    np.add.at(table, (a, b), 1)
    sum_ij = _pairs(table).sum()
    sum_a = _pairs(table.sum(axis=1)).sum()
    sum_b = _pairs(table.sum(axis=0)).sum()
    expected = sum_a * sum_b / _pairs(n)
    top = 0.5 * (sum_a + sum_b)
    if top == expected:
        # both partitions trivial in the same way
        return 1.0
    return float((sum_ij - expected) / (top - expected))


# -- factor report -------------------------------------------------------------
@dataclass
class FactorSummary:
    topics: List[dict]
    locations: List[dict]
    clusters: List[dict]

    def to_json(self):
        return asdict(self)

    def to_text(self):
        lines = ["location factors", f"{'factor':>6} {'lat':>9} {'lon':>10} {'c':>9} {'n':>6}"]
        for r in self.locations:
            lines.append(f"{r['factor']:>6} {r['lat']:>9.3f} {r['lon']:>10.3f} "
                         f"{r['c']:>9.2f} {r['n']:>6}")
        lines += ["", "topics"]
        for r in self.topics:
            items = ", ".join(
                (it["title"] if it.get("title") else str(it["item"])) + f" ({it['mass']:.3f})"
                for it in r["top_items"])
            lines.append(f"topic {r['topic']} [{r['n_views']} views]: {items}")
        lines += ["", "interaction clusters"]
        for r in self.clusters:
            locs = ", ".join(f"s{k}:{n}" for k, n in r["top_locations"])
            tops = ", ".join(f"z{k}:{n}" for k, n in r["top_topics"])
            lines.append(f"cluster {r['cluster']} [{r['n']} customers]: {locs} | {tops}")
        return "\n".join(lines) + "\n"

    def to_geojson(self):
        feats = [{
            "type": "Feature",
            "geometry": {"type": "Point", "coordinates": [r["lon"], r["lat"]]},
            "properties": {"factor": r["factor"], "c": r["c"], "n": r["n"]},
        } for r in self.locations]
        return {"type": "FeatureCollection", "features": feats}


def _top(values, k):
    # stable: ties keep index order
    order = np.argsort(-np.asarray(values, dtype=float), kind="stable")
    return order[:k]


def report(state: State, top_k=10, catalog=None):
    """Top items per topic, posterior mean direction per location factor, top
    factors per interaction cluster. ``catalog`` optionally maps item -> title."""
    h = state.hyper
    cat = h.catalog
    prior = h.vmf_prior
    topics = []
    for z in range(state.Z):
        mass = (state.n_zv[z] + cat.gamma) / (state.n_z[z] + cat.gamma_sum)
        items = []
        for v in _top(mass, top_k):
            it = {"item": int(v), "mass": float(mass[v])}
            if catalog and int(v) in catalog:
                it["title"] = catalog[int(v)]
            items.append(it)
        topics.append({"topic": z, "n_views": int(state.n_z[z]), "top_items": items})
    locations = []
    sf = state.sum_s_float()
    for s in range(state.S):
        mean = vmf.posterior_mean_direction(sf[s], state.c[s], prior)
        p = unit_to_latlon(mean)
        locations.append({"factor": s, "lat": float(p.lat), "lon": float(p.lon),
                          "c": float(state.c[s]), "n": int(state.n_s[s])})
    clusters = []
    for t in range(state.T):
        clusters.append({
            "cluster": t, "n": int(state.n_t[t]),
            "top_locations": [(int(k), int(state.n_ts[t, k])) for k in _top(state.n_ts[t], top_k)
                              if state.n_ts[t, k] > 0],
            "top_topics": [(int(k), int(state.n_tz[t, k])) for k in _top(state.n_tz[t], top_k)
                           if state.n_tz[t, k] > 0],
        })
    return FactorSummary(topics, locations, clusters)


@dataclass
class EvalReport:
    heldout_loglik_per_view: float
    heldout_loglik_location: float
    ari_t: Optional[float] = None
    ari_s: Optional[float] = None
    ari_z: Optional[float] = None
    n_heldout_customers: int = 0
    n_heldout_views: int = 0
    factors: Optional[FactorSummary] = field(default=None, repr=False)

    def to_json(self):
        d = asdict(self)
        d["factors"] = self.factors.to_json() if self.factors is not None else None
        return d

    def dumps(self):
        return json.dumps(self.to_json(), indent=1, sort_keys=True)


def evaluate(state: State, heldout: Dataset, truth=None, top_k=10):
    """EvalReport for ``state``; ARIs are filled in when training ``truth`` is given."""
    per_view, per_loc = heldout_loglik(state, heldout)
    rep = EvalReport(per_view, per_loc, n_heldout_customers=heldout.n_customers,
                     n_heldout_views=heldout.n_views, factors=report(state, top_k))
    if truth is not None:
        rep.ari_t = ari(state.t, truth.t)
        rep.ari_s = ari(state.s, truth.s)
        rep.ari_z = ari(state.z, truth.z) if truth.z.size == state.z.size else None
    return rep
