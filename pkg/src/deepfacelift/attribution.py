"""DeepLIFT contribution scores for the stage-1 network.

The reference input is the zero vector in normalized space (landmarks and,
when injected, personal features). Linear layers pass multipliers through
their weights; ReLUs use the Rescale rule ``m = delta_out / delta_in``.
Multipliers compose by the chain rule, so the contributions of all inputs
sum to the head's difference from its reference output.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .data import N_LANDMARKS, Dataset
from .errors import EmptyDataset, IncompatibleConfig, ShapeMismatch, UnsupportedLayer
from .net import THIRD_LAYER, Injection, MlpModel, forward_normalized

RESCALE_EPS = 1e-12


@dataclass(frozen=True)
class ContributionVector:
    scores: np.ndarray
    delta_output: float


def _head_index(model: MlpModel, head: str) -> int:
    if head not in model.heads:
        raise ShapeMismatch(f"model has heads {model.heads}, not {head!r}")
    return model.heads.index(head)


def _zero_personal(model: MlpModel, n: int) -> Optional[np.ndarray]:
    return np.zeros((n, model.config.personal_dim)) if model.uses_personal else None


def reference_output(model: MlpModel) -> dict:
    """Head outputs for the all-zero normalized input."""
    out, _, _ = forward_normalized(model, np.zeros((1, model.config.input_dim)), _zero_personal(model, 1))
    return {name: float(out[0, i]) for i, name in enumerate(model.heads)}


def contributions_batch(model: MlpModel, Xn, P=None, head: str = "vas"):
    """Contributions for many inputs at once.

    Returns ``(C, delta)`` where ``C`` has one row per input and one column per
    network input (landmarks, then personal features if the model uses them).
    """
    if not isinstance(model, MlpModel):
        raise UnsupportedLayer(f"cannot attribute through {type(model).__name__}")
    h = _head_index(model, head)
    Xn = np.atleast_2d(np.asarray(Xn, dtype=float))
    n = Xn.shape[0]
    if model.uses_personal and P is not None:
        P = np.atleast_2d(np.asarray(P, dtype=float))
        if P.shape[0] == 1 and n > 1:
            P = np.repeat(P, n, axis=0)
    out, _, pre = forward_normalized(model, Xn, P)
    ref_out, _, ref_pre = forward_normalized(model, np.zeros((1, model.config.input_dim)), _zero_personal(model, 1))

    m = np.broadcast_to(model.head_weights[:, h], (n, model.head_weights.shape[0]))
    m_personal = np.zeros((n, model.config.personal_dim)) if model.uses_personal else None
    inj = model.config.injection
    for i in range(len(model.weights) - 1, -1, -1):
        dz = pre[i] - ref_pre[i]
        da = np.maximum(pre[i], 0.0) - np.maximum(ref_pre[i], 0.0)
        big = np.abs(dz) > RESCALE_EPS
        rescale = np.where(big, da / np.where(big, dz, 1.0), 0.0)
        m = (m * rescale) @ model.weights[i].T
        if i == THIRD_LAYER and inj is Injection.THIRD_LAYER:
            m_personal = m_personal + m[:, -model.config.personal_dim:]
            m = m[:, :-model.config.personal_dim]
    if inj is Injection.INPUT:
        m_personal = m[:, model.config.input_dim:]
        m = m[:, :model.config.input_dim]
    C = m * Xn
    if model.uses_personal:
        C = np.hstack([C, m_personal * P])
    delta = out[:, h] - ref_out[0, h]
    return C, delta


def contributions(model: MlpModel, x, head: str = "vas", personal=None) -> ContributionVector:
    """Contribution of each normalized input (plus personal features) to one head."""
    C, delta = contributions_batch(model, np.asarray(x, dtype=float)[None, :],
                                   None if personal is None else np.asarray(personal, dtype=float)[None, :],
                                   head)
    return ContributionVector(C[0], float(delta[0]))


def _zscore(X: np.ndarray) -> np.ndarray:
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    return (X - mean) / np.where(std > 0, std, 1.0)


@dataclass(frozen=True)
class AttributionReport:
    head: str
    person_ids: tuple
    person_scores: np.ndarray  # (persons, 66) mean |contribution| per landmark
    mean_score: np.ndarray
    std_score: np.ndarray

    @property
    def normalized_scores(self) -> np.ndarray:
        totals = self.person_scores.sum(axis=1, keepdims=True)
        safe = np.where(totals > 0, totals, 1.0)
        return 100.0 * self.person_scores / safe

    def top_landmarks(self, k: int = 5) -> list:
        return [int(i) for i in np.argsort(-self.mean_score, kind="stable")[:k]]

    def to_dict(self) -> dict:
        return {
            "head": self.head,
            "persons": list(self.person_ids),
            "mean_score": self.mean_score.tolist(),
            "std_score": self.std_score.tolist(),
            "person_scores": {p: row.tolist() for p, row in zip(self.person_ids, self.person_scores)},
            "normalized_scores": {p: row.tolist() for p, row in zip(self.person_ids, self.normalized_scores)},
            "top_landmarks": self.top_landmarks(),
        }

    def write(self, out_dir) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "attribution.json", "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=1, sort_keys=True)
        norm = self.normalized_scores
        with open(out / "attribution.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["landmark_id", "mean_score", "std_score"] + list(self.person_ids))
            for j in range(N_LANDMARKS):
                w.writerow([j, repr(float(self.mean_score[j])), repr(float(self.std_score[j]))]
                           + [repr(float(v)) for v in norm[:, j]])


def attribute_dataset(model: MlpModel, dataset: Dataset, head: str = "vas",
                      normalization: str = "person") -> AttributionReport:
    """Aggregate absolute landmark contributions per person.

    Frames are Z-scored with each person's own statistics (``normalization=
    "person"``) or with the model's training statistics (``"model"``); x and y
    contributions of a landmark are summed, then averaged over the person's
    frames.
    """
    _head_index(model, head)
    persons = dataset.person_ids
    if not persons:
        raise EmptyDataset("dataset has no sequences")
    rows = []
    for pid in persons:
        X = np.vstack([s.landmark_matrix for s in dataset.sequences if s.person_id == pid])
        if normalization == "person":
            Xn = _zscore(X)
        elif normalization == "model":
            Xn = model.normalize(X)
        else:
            raise ValueError(f"unknown normalization {normalization!r}")
        P = model.personal_vector(dataset.profiles[pid])[None, :] if model.uses_personal else None
        C, _ = contributions_batch(model, Xn, P, head)
        lm = np.abs(C[:, :2 * N_LANDMARKS]).reshape(-1, N_LANDMARKS, 2).sum(axis=2)
        rows.append(lm.mean(axis=0))
    scores = np.array(rows)
    return AttributionReport(head, tuple(persons), scores, scores.mean(axis=0), scores.std(axis=0))


ABLATABLE = ("complexion", "age", "gender", "opi-label")


def ablate_personal_feature(dataset: Dataset, base_cfg, feature: str, metric: str = "pipeline",
                            baseline=None) -> float:
    """MAE increase when one personal feature (or the OPI label) is dropped.

    Both runs share the dataset, fold plan and seeds; ``metric`` picks the
    two-stage ("pipeline") or mean-voting ("nn_mv") MAE. ``baseline`` may be a
    report already computed for ``base_cfg`` on ``dataset``.
    """
    from .pipeline import run_experiment

    if feature not in ABLATABLE:
        raise IncompatibleConfig(f"unknown feature {feature!r}; choose from {ABLATABLE}")
    if metric not in ("pipeline", "nn_mv"):
        raise IncompatibleConfig(f"metric must be 'pipeline' or 'nn_mv', got {metric!r}")
    if feature == "opi-label":
        if base_cfg.s1_labels.value != "vas+opi":
            raise IncompatibleConfig("OPI-label ablation needs a VAS+OPI stage-1 model")
        ablated = base_cfg.replace(s1_labels="vas", s2_input="vas")
    else:
        if base_cfg.s1_personal is Injection.NONE:
            raise IncompatibleConfig("personal-feature ablation needs personal-feature injection")
        ablated = base_cfg.replace(exclude_personal=tuple(base_cfg.exclude_personal) + (feature,))
    with_feature = baseline if baseline is not None else run_experiment(base_cfg, dataset)
    without_feature = run_experiment(ablated, dataset)
    return without_feature.metrics[metric]["mae"] - with_feature.metrics[metric]["mae"]
