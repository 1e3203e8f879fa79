import itertools

import numpy as np
import pytest

from deepfacelift.errors import LengthMismatch, MissingAU, RangeViolation, TooFewTargets
from deepfacelift.metrics import icc31, mae, pspi

from oracles import anova_icc31


def test_mae_examples():
    assert mae([1, 2, 3], [1, 2, 3]) == 0
    assert mae([1, 2], [2, 4]) == 1.5


def test_mae_length_mismatch():
    with pytest.raises(LengthMismatch):
        mae([1, 2], [1])


def test_icc_hand_cases():
    assert icc31([1, 2, 3], [1, 2, 3]) == pytest.approx(1.0, abs=1e-12)
    assert icc31([1, 2, 3], [3, 2, 1]) == pytest.approx(-1.0, abs=1e-12)


def test_icc_shift_invariant():
    y = np.array([1.0, 4.0, 2.0, 8.0, 5.0])
    assert icc31(y, y + 5) == pytest.approx(1.0, abs=1e-12)
    assert anova_icc31(y, y + 5) == pytest.approx(1.0, abs=1e-10)


def test_icc_matches_anova_oracle():
    rng = np.random.default_rng(1)
    for _ in range(100):
        n = int(rng.integers(2, 40))
        a = rng.normal(size=n)
        b = rng.uniform(0.2, 1.5) * a + rng.normal(scale=rng.uniform(0.1, 2), size=n)
        assert abs(icc31(a, b) - anova_icc31(a, b)) < 1e-10


def test_icc_independent_normals_near_zero():
    rng = np.random.default_rng(2)
    assert abs(icc31(rng.normal(size=10_000), rng.normal(size=10_000))) < 0.05


def test_icc_constant_predictor_zero():
    y = np.random.default_rng(3).uniform(0, 10, 50)
    assert icc31(y, np.full_like(y, y.mean())) == pytest.approx(0.0, abs=1e-12)
    assert icc31([2.0, 2.0], [2.0, 2.0]) == 0.0


def test_icc_too_few():
    with pytest.raises(TooFewTargets):
        icc31([1.0], [1.0])


AUS = ("AU4", "AU6", "AU7", "AU9", "AU10", "AU43")


def test_pspi_examples():
    assert pspi(dict.fromkeys(AUS, 0)) == 0
    assert pspi(dict(AU4=2, AU6=1, AU7=3, AU9=2, AU10=0, AU43=1)) == 8
    assert pspi(dict(AU4=5, AU6=5, AU7=5, AU9=5, AU10=5, AU43=1)) == 16


def pspi_formula(a4, a6, a7, a9, a10, a43):
    return a4 + max(a6, a7) + max(a9, a10) + a43


def test_pspi_sampled_grid():
    grid = list(itertools.product(range(6), range(6), range(6), range(6), range(6), range(2)))
    rng = np.random.default_rng(4)
    for idx in rng.choice(len(grid), size=1000, replace=False):
        combo = grid[idx]
        assert pspi(dict(zip(AUS, combo))) == pspi_formula(*combo)


def test_pspi_monotone():
    rng = np.random.default_rng(5)
    for _ in range(200):
        base = dict(zip(AUS, [*rng.integers(0, 5, 5), 0]))
        for au in AUS:
            bumped = dict(base)
            bumped[au] += 1
            assert pspi(bumped) >= pspi(base)


def test_pspi_errors():
    good = dict.fromkeys(AUS, 0)
    with pytest.raises(MissingAU):
        pspi({k: v for k, v in good.items() if k != "AU9"})
    with pytest.raises(RangeViolation):
        pspi({**good, "AU43": 2})
    with pytest.raises(RangeViolation):
        pspi({**good, "AU4": 6})
