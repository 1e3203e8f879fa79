"""Fixed-length summary statistics of a variable-length frame-estimate stream."""
from __future__ import annotations

import numpy as np

from .errors import EmptySequence

STAT_NAMES = ("mean", "median", "min", "max", "var", "m3", "m4", "m5", "sum", "iqr")


def quantile(sorted_values: np.ndarray, p: float) -> float:
    # linear rule: h = (n-1)p, interpolate between floor(h) and ceil(h)
    n = sorted_values.size
    h = (n - 1) * p
    lo = int(np.floor(h))
    hi = min(lo + 1, n - 1)
    return float(sorted_values[lo] + (h - lo) * (sorted_values[hi] - sorted_values[lo]))


def compute_stats(values) -> np.ndarray:
    """Return mean, median, min, max, variance, central moments 3-5, sum, IQR.

    Variance and moments divide by n.
    """
    v = np.asarray(values, dtype=float).ravel()
    if v.size == 0:
        raise EmptySequence("cannot summarize an empty sequence")
    s = np.sort(v)
    total = float(v.sum())
    mean = total / v.size
    d = v - mean
    d2 = d * d
    return np.array([
        mean,
        quantile(s, 0.5),
        float(s[0]),
        float(s[-1]),
        float(d2.mean()),
        float((d2 * d).mean()),
        float((d2 * d2).mean()),
        float((d2 * d2 * d).mean()),
        total,
        quantile(s, 0.75) - quantile(s, 0.25),
    ])


def stats_feature_names(streams=("vas",)) -> list:
    return [f"{stream}_{name}" for stream in streams for name in STAT_NAMES]


def sequence_features(vas_frames, opi_frames=None) -> np.ndarray:
    """10 statistics of the VAS stream, or 20 with the OPI stream appended."""
    feats = compute_stats(vas_frames)
    if opi_frames is not None:
        feats = np.concatenate([feats, compute_stats(opi_frames)])
    return feats
