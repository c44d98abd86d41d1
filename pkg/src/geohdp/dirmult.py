"""Collapsed Dirichlet-multinomial predictives over the item catalog."""
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln

from .errors import InvalidItemError


@dataclass(frozen=True)
class CatalogParams:
    """Catalog size ``V`` and Dirichlet pseudo-counts ``gamma`` (length V)."""

    V: int
    gamma: np.ndarray
    gamma_sum: float = field(init=False)
    symmetric: bool = field(init=False)

    def __post_init__(self):
        if int(self.V) < 1:
            raise ValueError("catalog size must be >= 1")
        g = np.asarray(self.gamma, dtype=float)
        if g.ndim == 0:
            g = np.full(int(self.V), float(g))
        if g.shape != (int(self.V),):
            raise ValueError(f"gamma must have length {self.V}")
        if not np.all(np.isfinite(g)) or np.any(g <= 0):
            raise ValueError("gamma entries must be positive")
        g.setflags(write=False)
        object.__setattr__(self, "V", int(self.V))
        object.__setattr__(self, "gamma", g)
        object.__setattr__(self, "symmetric", bool(np.all(g == g[0])))
        object.__setattr__(
            self, "gamma_sum", float(g[0]) * self.V if self.symmetric else float(g.sum())
        )

    @classmethod
    def symmetric_prior(cls, V, gamma=0.1):
        return cls(V, np.full(int(V), float(gamma)))

    def check_item(self, v):
        if not 0 <= v < self.V:
            raise InvalidItemError(f"item index {v} outside [0, {self.V})")


@dataclass
class TopicCounts:
    n_zv: np.ndarray
    n_z_total: int = None

    def __post_init__(self):
        self.n_zv = np.asarray(self.n_zv)
        if self.n_z_total is None:
            self.n_z_total = int(self.n_zv.sum())
        if np.any(self.n_zv < 0) or self.n_z_total != int(self.n_zv.sum()):
            raise ValueError("inconsistent topic counts")


def predictive_log_prob(tc: TopicCounts, v, cp: CatalogParams):
    """log((n_zv[v] + gamma_v) / (n_z + sum(gamma))); counts exclude the view itself."""
    cp.check_item(v)
    return math.log((tc.n_zv[v] + cp.gamma[v]) / (tc.n_z_total + cp.gamma_sum))


def new_topic_log_prob(v, cp: CatalogParams):
    """Predictive for a topic with no views yet: log(gamma_v / sum(gamma))."""
    cp.check_item(v)
    return math.log(cp.gamma[v] / cp.gamma_sum)


def log_marginal(counts, cp: CatalogParams):
    """Dirichlet-multinomial log marginal of an ordered view sequence with these counts."""
    counts = np.asarray(counts, dtype=float)
    n = counts.sum()
    return float(
        gammaln(cp.gamma_sum) - gammaln(n + cp.gamma_sum)
        + np.sum(gammaln(counts + cp.gamma) - gammaln(cp.gamma))
    )
