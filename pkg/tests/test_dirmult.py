import itertools
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from geohdp.dirmult import (CatalogParams, TopicCounts, log_marginal, new_topic_log_prob,
                            predictive_log_prob)
from geohdp.errors import InvalidItemError


def test_prior_predictive():
    cp = CatalogParams.symmetric_prior(5, 0.1)
    assert predictive_log_prob(TopicCounts(np.zeros(5, int)), 3, cp) == pytest.approx(math.log(0.2))


def test_hand_evaluated_ratio():
    cp = CatalogParams(5, np.ones(5))
    tc = TopicCounts(np.array([3, 2, 2, 2, 1]))
    assert predictive_log_prob(tc, 0, cp) == pytest.approx(math.log(4 / 15), rel=1e-15)


def test_new_topic_examples():
    cp = CatalogParams.symmetric_prior(7, 0.3)
    for v in range(7):
        assert new_topic_log_prob(v, cp) == pytest.approx(-math.log(7))
    cp = CatalogParams(3, np.array([1.0, 2.0, 3.0]))
    assert new_topic_log_prob(2, cp) == pytest.approx(math.log(0.5))
    assert new_topic_log_prob(1, cp) == predictive_log_prob(TopicCounts(np.zeros(3, int)), 1, cp)


def test_item_range_checked():
    cp = CatalogParams.symmetric_prior(3)
    with pytest.raises(InvalidItemError):
        new_topic_log_prob(3, cp)
    with pytest.raises(InvalidItemError):
        predictive_log_prob(TopicCounts(np.zeros(3, int)), -1, cp)


def test_catalog_validation():
    with pytest.raises(ValueError):
        CatalogParams(0, np.ones(0))
    with pytest.raises(ValueError):
        CatalogParams(3, np.array([1.0, 0.0, 1.0]))
    with pytest.raises(ValueError):
        CatalogParams(3, np.ones(4))
    cp = CatalogParams(4, np.array([0.5, 1.0, 1.0, 2.0]))
    assert cp.gamma_sum == 4.5 and not cp.symmetric
    with pytest.raises(ValueError):
        TopicCounts(np.array([1, -1]))


counts = st.lists(st.integers(0, 30), min_size=1, max_size=8)


@given(counts, st.floats(0.01, 5.0))
def test_predictive_normalises(c, g):
    cp = CatalogParams.symmetric_prior(len(c), g)
    tc = TopicCounts(np.array(c))
    total = sum(math.exp(predictive_log_prob(tc, v, cp)) for v in range(len(c)))
    assert total == pytest.approx(1.0, abs=1e-12)


def sequence_log_prob(seq, cp):
    n = np.zeros(cp.V, dtype=np.int64)
    out = 0.0
    for v in seq:
        out += predictive_log_prob(TopicCounts(n.copy()), v, cp)
        n[v] += 1
    return out


@given(st.lists(st.integers(0, 3), min_size=1, max_size=6),
       st.lists(st.floats(0.05, 3.0), min_size=4, max_size=4))
def test_exchangeable_and_equal_to_marginal(seq, gamma):
    cp = CatalogParams(4, np.array(gamma))
    ref = sequence_log_prob(seq, cp)
    for perm in set(itertools.permutations(seq)):
        assert sequence_log_prob(perm, cp) == pytest.approx(ref, abs=1e-10)
    assert log_marginal(np.bincount(seq, minlength=4), cp) == pytest.approx(ref, abs=1e-10)


def test_exchangeability_length_eight():
    cp = CatalogParams(4, np.array([0.1, 0.7, 1.5, 0.2]))
    seq = [0, 1, 1, 3, 2, 0, 0, 1]
    ref = sequence_log_prob(seq, cp)
    vals = [sequence_log_prob(p, cp) for p in set(itertools.permutations(seq))]
    np.testing.assert_allclose(vals, ref, atol=1e-10)
