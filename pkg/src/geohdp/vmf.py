"""von Mises-Fisher distribution on the 2-sphere.

Everything is computed in log space. The ambient dimension is fixed at
D = 3, where the normalizer has the closed form ``c / (4 pi sinh c)``.
"""
import math
from dataclasses import dataclass

import numpy as np
from scipy import special

from . import _kernels
from .errors import DomainError, UnsupportedDimensionError

LOG_4PI = math.log(4.0 * math.pi)
LOG_2 = math.log(2.0)


@dataclass(frozen=True)
class VmfParams:
    mu: np.ndarray
    c: float

    def __post_init__(self):
        mu = np.asarray(self.mu, dtype=float)
        if mu.shape != (3,) or abs(float(mu @ mu) - 1.0) > 1e-12 * 2:
            raise ValueError("mu must be a unit 3-vector")
        if not (math.isfinite(self.c) and self.c > 0):
            raise ValueError("concentration must be positive and finite")
        object.__setattr__(self, "mu", mu)


@dataclass(frozen=True)
class VmfPrior:
    """Prior on a location factor: mu ~ vMF(mu0, c0), log c ~ Normal(m_c, sigma_c)."""

    mu0: np.ndarray
    c0: float
    m_c: float
    sigma_c: float

    def __post_init__(self):
        mu0 = np.asarray(self.mu0, dtype=float)
        if mu0.shape != (3,) or abs(float(mu0 @ mu0) - 1.0) > 1e-9:
            raise ValueError("mu0 must be a unit 3-vector")
        if not (math.isfinite(self.c0) and self.c0 > 0):
            raise ValueError("c0 must be positive")
        if not (math.isfinite(self.sigma_c) and self.sigma_c > 0):
            raise ValueError("sigma_c must be positive")
        if not math.isfinite(self.m_c):
            raise ValueError("m_c must be finite")
        object.__setattr__(self, "mu0", mu0 / np.linalg.norm(mu0))

    def log_prior_c(self, c):
        """Log-normal log density of the concentration, evaluated in c-space."""
        c = np.asarray(c, dtype=float)
        z = (np.log(c) - self.m_c) / self.sigma_c
        return -0.5 * z * z - np.log(c) - math.log(self.sigma_c) - 0.5 * math.log(2 * math.pi)

    def sample_c(self, rng, size=None):
        return np.exp(self.m_c + self.sigma_c * rng.standard_normal(size))


def _log_sinh(x):
    # x > 0; -expm1 keeps full precision as x -> 0
    return x + np.log(-np.expm1(-2.0 * x)) - LOG_2


def _log_cosh_minus_sinhc(x):
    """log(cosh x - sinh(x)/x) for x > 0."""
    out = np.empty_like(x)
    small = x < 0.5
    xs = x[small]
    if xs.size:
        # cosh x - sinh x / x = sum_{k>=1} 2k x^{2k} / (2k+1)!
        x2 = xs * xs
        term = np.full_like(xs, 1.0 / 3.0)
        acc = term.copy()
        for k in range(2, 16):
            term = term * x2 * (2 * k) / ((2 * k - 2) * (2 * k) * (2 * k + 1))
            acc += term
        out[small] = 2.0 * np.log(xs) + np.log(acc)
    xl = x[~small]
    e = np.exp(-2.0 * xl)
    out[~small] = xl - LOG_2 + np.log((1.0 + e) - (1.0 - e) / xl)
    return out


def log_bessel_i(nu, x):
    """log I_nu(x), the modified Bessel function of the first kind.

    Orders 0.5 and 1.5 use closed forms in log space and stay finite up to
    at least x = 700. Other orders fall back to the exponentially scaled
    ``scipy.special.ive``.
    """
    x_arr = np.asarray(x, dtype=float)
    if np.any(x_arr < 0) or np.any(np.isnan(x_arr)):
        raise DomainError("log_bessel_i requires x >= 0")
    if nu < 0:
        raise DomainError("log_bessel_i requires nu >= 0")
    scalar = x_arr.ndim == 0
    x_arr = np.atleast_1d(x_arr).astype(float)
    out = np.full(x_arr.shape, -np.inf)
    pos = x_arr > 0
    xp = x_arr[pos]
    if nu == 0.5:
        out[pos] = 0.5 * np.log(2.0 / (math.pi * xp)) + _log_sinh(xp)
    elif nu == 1.5:
        out[pos] = 0.5 * np.log(2.0 / (math.pi * xp)) + _log_cosh_minus_sinhc(xp)
    else:
        with np.errstate(divide="ignore"):
            out[pos] = np.log(special.ive(nu, xp)) + xp
        if nu == 0:
            out[~pos] = 0.0
    return float(out[0]) if scalar else out


def log_c3(c):
    """log C_3(c) for an array of strictly positive concentrations (no checks)."""
    return np.log(c) - c - np.log(-np.expm1(-2.0 * c)) + (LOG_2 - LOG_4PI)


def log_norm_const(c, D=3):
    """log C_D(c) with C_3(c) = c / (4 pi sinh c); c = 0 gives the uniform 1/(4 pi)."""
    if D != 3:
        raise UnsupportedDimensionError(f"only D = 3 is supported, got {D}")
    if isinstance(c, (float, int)):
        # scalar path; the comparison is False for NaN
        if not c >= 0:
            raise DomainError("concentration must be >= 0")
        return _kernels.log_c3(float(c))
    c_arr = np.asarray(c, dtype=float)
    if not (c_arr >= 0).all():
        raise DomainError("concentration must be >= 0")
    pos = c_arr > 0
    if pos.all():
        out = log_c3(c_arr)
    else:
        out = np.full(c_arr.shape, -LOG_4PI)
        out[pos] = log_c3(c_arr[pos])
    return float(out) if out.ndim == 0 else out


def mean_resultant_length(c):
    """A_3(c) = coth c - 1/c, the expected norm of a vMF draw's mean."""
    c = float(c)
    if c < 1e-4:
        return c / 3.0
    return 1.0 / math.tanh(c) - 1.0 / c


def log_density(x, p: VmfParams):
    x = np.asarray(x, dtype=float)
    return log_norm_const(p.c) + p.c * (x @ p.mu)


def _tangent_basis(mu):
    # Two unit vectors orthogonal to mu and to each other.
    a = np.array([1.0, 0.0, 0.0]) if abs(mu[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    e1 = a - (a @ mu) * mu
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(mu, e1)
    return e1, e2


def _sample_w(c, n, rng):
    # Wood (1994) rejection sampler for the cosine to the mean direction, m = 3.
    m1 = 2.0
    b = m1 / (2.0 * c + math.sqrt(4.0 * c * c + m1 * m1))
    x0 = (1.0 - b) / (1.0 + b)
    cst = c * x0 + m1 * math.log(1.0 - x0 * x0)
    out = np.empty(n)
    filled = 0
    while filled < n:
        k = n - filled
        z = rng.beta(m1 / 2.0, m1 / 2.0, size=k)
        w = (1.0 - (1.0 + b) * z) / (1.0 - (1.0 - b) * z)
        u = rng.random(k)
        ok = c * w + m1 * np.log(1.0 - x0 * w) - cst >= np.log(u)
        acc = w[ok]
        out[filled:filled + acc.size] = acc
        filled += acc.size
    return out


def sample_vmf(p: VmfParams, rng, size=None):
    """Draw from vMF(mu, c). Returns a 3-vector, or an array (size, 3)."""
    n = 1 if size is None else int(size)
    w = _sample_w(p.c, n, rng)
    theta = rng.random(n) * (2.0 * math.pi)
    e1, e2 = _tangent_basis(p.mu)
    r = np.sqrt(np.clip(1.0 - w * w, 0.0, None))
    x = (w[:, None] * p.mu[None, :]
         + (r * np.cos(theta))[:, None] * e1[None, :]
         + (r * np.sin(theta))[:, None] * e2[None, :])
    x /= np.linalg.norm(x, axis=1, keepdims=True)
    return x[0] if size is None else x


def sample_uniform_sphere(rng, size):
    x = rng.standard_normal((size, 3))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def log_marginal(sum_vec, n, c, prior: VmfPrior):
    """Log marginal likelihood of a cluster with mu integrated out.

    n log C(c) + log C(c0) - log C(|c * sum_vec + c0 * mu0|)
    """
    sum_vec = np.asarray(sum_vec, dtype=float)
    r = np.linalg.norm(c * sum_vec + prior.c0 * prior.mu0)
    return n * log_norm_const(c) + log_norm_const(prior.c0) - log_norm_const(r)


def predictive_log_prob(x, sum_vec_excl, c, prior: VmfPrior):
    """Collapsed predictive log density of ``x`` joining a cluster.

    ``sum_vec_excl`` is the member sum without ``x``. Broadcasts over a
    leading factor axis when ``sum_vec_excl`` is (S, 3) and ``c`` is (S,).
    """
    x = np.asarray(x, dtype=float)
    sv = np.asarray(sum_vec_excl, dtype=float)
    c_arr = np.asarray(c, dtype=float)
    base = prior.c0 * prior.mu0
    if sv.ndim == 1:
        r_ex = np.linalg.norm(c_arr * sv + base)
        r_in = np.linalg.norm(c_arr * (sv + x) + base)
        return log_norm_const(c_arr) + log_norm_const(r_ex) - log_norm_const(r_in)
    ca = c_arr[:, None]
    r_ex = np.sqrt(np.sum((ca * sv + base) ** 2, axis=1))
    r_in = np.sqrt(np.sum((ca * (sv + x) + base) ** 2, axis=1))
    return log_norm_const(c_arr) + log_norm_const(r_ex) - log_norm_const(r_in)


def posterior_mean_direction(sum_vec, c, prior: VmfPrior):
    """Mode of the collapsed posterior over mu: normalize(c * sum + c0 * mu0)."""
    v = c * np.asarray(sum_vec, dtype=float) + prior.c0 * prior.mu0
    return v / np.linalg.norm(v)
