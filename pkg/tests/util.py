"""Shared builders for tests."""
import numpy as np

from geohdp.geo import latlon_to_unit
from geohdp.state import Dataset, GlobalSticks, State, default_hyperparams


def random_dataset(n, V, rng, mean_views=3.0):
    lat = rng.uniform(-80, 80, n)
    lon = rng.uniform(-180, 180, n)
    locs = np.stack([latlon_to_unit((a, b)) for a, b in zip(lat, lon)]) if n else np.zeros((0, 3))
    views = [rng.integers(0, V, rng.poisson(mean_views)).tolist() for _ in range(n)]
    return Dataset(locs, views, V)


def frozen_state(data, hyper, t, s, z, c, phi_w, pi_w):
    """State with given assignments and explicit stick weights (remainder = 1 - sum)."""
    phi = GlobalSticks(np.array(phi_w, dtype=float), 1.0 - float(np.sum(phi_w)))
    pi = GlobalSticks(np.array(pi_w, dtype=float), 1.0 - float(np.sum(pi_w)))
    return State.from_assignments(data, hyper, t, s, z, c, phi, pi)


def random_ops(state, rng, n_ops, p_prune=0.05):
    """Apply random attach/detach operations at customer and view level.

    Returns the number of operations performed.
    """
    data = state.data
    n = data.n_customers
    done = 0
    while done < n_ops:
        d = int(rng.integers(n))
        J = int(data.offsets[d + 1] - data.offsets[d])
        r = rng.random()
        if r < 0.3:
            if state.t[d] >= 0:
                state.detach_cluster(d)
            else:
                t = int(rng.integers(state.T + 1))
                if t == state.T:
                    state.new_cluster()
                state.attach_cluster(d, t)
        elif r < 0.6:
            if state.s[d] >= 0:
                state.detach_location(d)
            else:
                s = int(rng.integers(state.S + 1))
                if s == state.S:
                    state.new_location_factor(float(rng.uniform(0.5, 50)), rng)
                state.attach_location(d, s)
        elif J:
            j = int(rng.integers(J))
            if state.z[data.offsets[d] + j] >= 0:
                state.remove_view(d, j)
            else:
                z = int(rng.integers(state.Z + 1))
                if z == state.Z:
                    state.new_topic(rng)
                state.add_view(d, j, z)
        done += 1
        if rng.random() < p_prune:
            state.prune()
    return done


def small_hyper(V, **kw):
    return default_hyperparams(V, **kw)


# -- brute-force conditionals from the collapsed joint ------------------------------------
def _with_new_stick(sticks):
    """Represent the unrepresented mass as one explicit atom (last)."""
    return GlobalSticks(np.append(sticks.weights, sticks.remainder), 0.0)


def _joint(state, t, s, z, c, phi0, pi0):
    from geohdp.sampler import log_joint
    st = State.from_assignments(state.data, state.hyper, t, s, z, c, phi0, pi0)
    return log_joint(st)


def oracle_t_probs(state, d):
    """p(t_d = k | rest), k over live clusters plus a new one, from joint ratios.

    ``state`` must have customer d detached from its cluster and be pruned.
    """
    T = state.T
    out = np.empty(T + 1)
    for k in range(T + 1):
        t = state.t.copy()
        t[d] = k
        out[k] = _joint(state, t, state.s, state.z, state.c, state.phi0, state.pi0)
    out = np.exp(out - out.max())
    return out / out.sum()


def oracle_s_probs(state, d, c_new):
    """p(s_d = k | rest, c_new) for a detached location, new factor last."""
    S = state.S
    phi = _with_new_stick(state.phi0)
    # the empty candidate factor carries c_new in every configuration, so its prior
    # term is common to all k and cancels
    c = np.append(state.c, c_new)
    out = np.empty(S + 1)
    for k in range(S + 1):
        s = state.s.copy()
        s[d] = k
        out[k] = _joint(state, state.t, s, state.z, c, phi, state.pi0)
    out = np.exp(out - out.max())
    return out / out.sum()


def oracle_z_probs(state, i):
    """p(z_i = k | rest) for a detached view with flat index i, new topic last."""
    Z = state.Z
    pi = _with_new_stick(state.pi0)
    out = np.empty(Z + 1)
    for k in range(Z + 1):
        z = state.z.copy()
        z[i] = k
        out[k] = _joint(state, state.t, state.s, z, state.c, state.phi0, pi)
    out = np.exp(out - out.max())
    return out / out.sum()
