"""Evaluation metrics: MAE, ICC(3,1) and the PSPI score."""
from __future__ import annotations

from typing import Mapping

import numpy as np

from .errors import LengthMismatch, MissingAU, RangeViolation, TooFewTargets

_AU_MAX = {"AU4": 5, "AU6": 5, "AU7": 5, "AU9": 5, "AU10": 5, "AU43": 1}


def _paired(y_true, y_pred, min_n: int):
    a = np.asarray(y_true, dtype=float).ravel()
    b = np.asarray(y_pred, dtype=float).ravel()
    if a.shape != b.shape:
        raise LengthMismatch(f"length mismatch: {a.size} vs {b.size}")
    if a.size < min_n:
        raise TooFewTargets(f"need at least {min_n} paired scores, got {a.size}")
    return a, b


def mae(y_true, y_pred) -> float:
    a, b = _paired(y_true, y_pred, 1)
    return float(np.mean(np.abs(a - b)))


def icc31(y_true, y_pred) -> float:
    """ICC(3,1): two-way mixed effects, consistency, single rater.

    The true and the predicted scores are the two "raters". Returns 0 when
    both mean squares vanish (all values identical).
    """
    a, b = _paired(y_true, y_pred, 2)
    x = np.column_stack([a, b])
    n, k = x.shape
    grand = x.mean()
    row_means = x.mean(axis=1)
    col_means = x.mean(axis=0)
    ss_rows = k * np.sum((row_means - grand) ** 2)
    resid = x - row_means[:, None] - col_means[None, :] + grand
    ss_err = np.sum(resid ** 2)
    bms = ss_rows / (n - 1)
    ems = ss_err / ((n - 1) * (k - 1))
    denom = bms + (k - 1) * ems
    if denom == 0.0:
        return 0.0
    return float((bms - ems) / denom)


def pspi(au: Mapping[str, int]) -> int:
    """Prkachin-Solomon pain intensity: AU4 + max(AU6, AU7) + max(AU9, AU10) + AU43."""
    vals = {}
    for name, top in _AU_MAX.items():
        if name not in au:
            raise MissingAU(f"{name} missing")
        v = au[name]
        if int(v) != v or not 0 <= v <= top:
            raise RangeViolation(f"{name}={v} outside 0..{top}")
        vals[name] = int(v)
    return vals["AU4"] + max(vals["AU6"], vals["AU7"]) + max(vals["AU9"], vals["AU10"]) + vals["AU43"]
