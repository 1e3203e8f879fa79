import numpy as np
import pytest
from hypothesis import given, strategies as st

from deepfacelift.errors import EmptySequence
from deepfacelift.stats import STAT_NAMES, compute_stats, sequence_features, stats_feature_names

from oracles import reference_stats


def test_constant_sequence():
    np.testing.assert_array_equal(compute_stats([2, 2, 2]), [2, 2, 2, 2, 0, 0, 0, 0, 6, 0])


def test_one_to_four():
    np.testing.assert_allclose(compute_stats([1, 2, 3, 4]),
                               [2.5, 2.5, 1, 4, 1.25, 0, 2.5625, 0, 10, 1.5], atol=1e-15)


def test_single_value():
    np.testing.assert_array_equal(compute_stats([7]), [7, 7, 7, 7, 0, 0, 0, 0, 7, 0])


def test_empty():
    with pytest.raises(EmptySequence):
        compute_stats([])


def random_vectors(count, seed=0):
    rng = np.random.default_rng(seed)
    out = [np.array([rng.normal()]), np.full(5, 3.25)]
    while len(out) < count:
        n = int(rng.integers(1, 60))
        kind = rng.integers(3)
        if kind == 0:
            v = rng.normal(rng.uniform(-5, 5), rng.uniform(0.1, 3), n)
        elif kind == 1:
            v = rng.uniform(0, 10, n)
        else:
            v = rng.integers(0, 11, n).astype(float)
        out.append(v)
    return out


def test_matches_exact_oracle():
    for v in random_vectors(1000):
        np.testing.assert_allclose(compute_stats(v), reference_stats(v), rtol=1e-12, atol=1e-12)


@given(st.lists(st.floats(-100, 100), min_size=1, max_size=40))
def test_order_invariant_and_bounded(xs):
    a = compute_stats(xs)
    b = compute_stats(xs[::-1])
    # summation order differs, so allow rounding at the scale of the fifth moment
    np.testing.assert_allclose(a, b, rtol=1e-9, atol=1e-9 * max(1.0, np.abs(xs).max()) ** 5)
    assert a[2] <= a[1] <= a[3]
    assert a[4] >= 0 and a[6] >= 0 and a[9] >= 0


def test_feature_lengths_and_names():
    assert sequence_features([1.0, 2.0]).shape == (10,)
    assert sequence_features([1.0, 2.0], [0.5, 0.5]).shape == (20,)
    names = stats_feature_names(("vas", "opi"))
    assert names[0] == "vas_mean" and names[10] == "opi_mean" and len(names) == 20
    assert len(STAT_NAMES) == 10
