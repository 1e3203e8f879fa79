"""Cross-validated two-stage experiments and the setting matrix.

Seeds: every random stream is derived from the master seed by hashing
``"<master>/<part>/<part>..."`` with SHA-256 (see ``derive_seed``). The fold
plan uses ``(seed, "folds")``, the stage-1 network of fold k uses
``(seed, k, "mlp")`` and the GP restarts ``(seed, k, "gp")``; none of these
depend on the setting being run, so all settings see the same folds and
initializations, and results do not depend on execution order.
"""
from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import jsonschema
import numpy as np

from .data import Dataset, FoldPlan, SynthConfig, generate_synthetic, load_dataset, split_folds
from .errors import BadConfig, ConfigConflict, ValidationError
from .gp import GpOptConfig, fit as gp_fit, predict as gp_predict, relevance
from .metrics import icc31, mae
from .net import DEFAULT_HIDDEN_SIZES, Injection, MlpConfig, MlpModel, Tasks, init_model, load_schema, predict_frames, train
from .stats import sequence_features, stats_feature_names

VAS_MAX = 10.0


def derive_seed(master: int, *parts) -> int:
    key = "/".join(str(p) for p in (master,) + parts)
    return int.from_bytes(hashlib.sha256(key.encode()).digest()[:8], "big") >> 1


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: Optional[str] = None
    synth: Optional[SynthConfig] = None
    s1_personal: Injection = Injection.THIRD_LAYER
    s1_labels: Tasks = Tasks.VAS_OPI
    s2_input: Tasks = Tasks.VAS
    folds: int = 5
    seed: int = 0
    hidden_sizes: tuple = DEFAULT_HIDDEN_SIZES
    epochs: int = 100
    batch_size: int = 300
    learning_rate: float = 1e-3
    gp_restarts: int = 3
    gp_max_iter: int = 200
    exclude_personal: tuple = ()
    s2_features: str = "cross_fit"
    precision: str = "float32"

    def __post_init__(self):
        object.__setattr__(self, "s1_personal", Injection(self.s1_personal))
        object.__setattr__(self, "s1_labels", Tasks(self.s1_labels))
        object.__setattr__(self, "s2_input", Tasks(self.s2_input))
        object.__setattr__(self, "hidden_sizes", tuple(self.hidden_sizes))
        object.__setattr__(self, "exclude_personal", tuple(sorted(set(self.exclude_personal))))
        if self.s2_input is Tasks.VAS_OPI and self.s1_labels is not Tasks.VAS_OPI:
            raise ConfigConflict("GP input VAS+OPI needs OPI frame estimates (stage-1 labels VAS+OPI)")
        if self.folds < 2:
            raise BadConfig("need at least 2 folds")
        if self.s2_features not in ("cross_fit", "in_sample"):
            raise BadConfig(f"s2_features must be 'cross_fit' or 'in_sample', got {self.s2_features!r}")
        if self.gp_restarts < 1 or self.gp_max_iter < 1:
            raise BadConfig("gp_restarts and gp_max_iter must be positive")

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    @property
    def setting_name(self) -> str:
        name = f"{self.s1_personal.value}__{self.s1_labels.value}__{self.s2_input.value}".replace("+", "_")
        if self.exclude_personal:
            name += "__minus_" + "_".join(self.exclude_personal)
        return name

    def mlp_config(self, fold: int, inner: Optional[int] = None) -> MlpConfig:
        seed = derive_seed(self.seed, fold, "mlp") if inner is None else derive_seed(self.seed, fold, inner, "mlp")
        return MlpConfig(
            hidden_sizes=self.hidden_sizes,
            injection=self.s1_personal,
            tasks=self.s1_labels,
            epochs=self.epochs,
            batch_size=self.batch_size,
            learning_rate=self.learning_rate,
            seed=seed,
            exclude_personal=self.exclude_personal,
            precision=self.precision,
        )

    def gp_config(self, fold: int) -> GpOptConfig:
        return GpOptConfig(restarts=self.gp_restarts, max_iter=self.gp_max_iter,
                           seed=derive_seed(self.seed, fold, "gp"))

    def to_dict(self) -> dict:
        d = {
            "dataset": self.dataset,
            "synth": dataclasses.asdict(self.synth) if self.synth is not None else None,
            "s1_personal": self.s1_personal.value,
            "s1_labels": self.s1_labels.value,
            "s2_input": self.s2_input.value,
            "folds": self.folds,
            "seed": self.seed,
            "mlp": {
                "hidden_sizes": list(self.hidden_sizes),
                "epochs": self.epochs,
                "batch_size": self.batch_size,
                "learning_rate": self.learning_rate,
                "precision": self.precision,
            },
            "gp": {"restarts": self.gp_restarts, "max_iter": self.gp_max_iter},
            "exclude_personal": list(self.exclude_personal),
            "s2_features": self.s2_features,
        }
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        try:
            jsonschema.validate(d, load_schema("experiment_config"))
        except jsonschema.ValidationError as exc:
            raise ValidationError(f"invalid config: {exc.message}") from None
        kw = {k: d[k] for k in ("dataset", "s1_personal", "s1_labels", "s2_input", "folds", "seed") if k in d}
        if d.get("synth") is not None:
            kw["synth"] = SynthConfig(**d["synth"])
        mlp = d.get("mlp", {})
        for key in ("hidden_sizes", "epochs", "batch_size", "learning_rate", "precision"):
            if key in mlp:
                kw[key] = mlp[key]
        gp = d.get("gp", {})
        if "restarts" in gp:
            kw["gp_restarts"] = gp["restarts"]
        if "max_iter" in gp:
            kw["gp_max_iter"] = gp["max_iter"]
        if "exclude_personal" in d:
            kw["exclude_personal"] = tuple(d["exclude_personal"])
        if "s2_features" in d:
            kw["s2_features"] = d["s2_features"]
        return cls(**kw)

    @classmethod
    def from_json(cls, path) -> "ExperimentConfig":
        p = Path(path)
        if not p.is_file():
            raise ValidationError(f"config file {path} not found")
        try:
            d = json.loads(p.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ValidationError(f"config file {path} is not valid JSON: {exc}") from None
        return cls.from_dict(d)


def resolve_dataset(cfg: ExperimentConfig) -> Dataset:
    if cfg.dataset is not None:
        return load_dataset(cfg.dataset)
    synth = cfg.synth or SynthConfig(seed=cfg.seed)
    return generate_synthetic(synth)


def max_workers() -> int:
    raw = os.environ.get("LIFT_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise ValidationError(f"LIFT_THREADS must be an integer, got {raw!r}") from None


def _parallel_map(fn, items):
    n = min(max_workers(), len(items))
    if n <= 1:
        return [fn(*it) for it in items]
    with ProcessPoolExecutor(max_workers=n) as pool:
        futures = [pool.submit(fn, *it) for it in items]
        return [f.result() for f in futures]


def frames_digest(frames: dict, sequence_ids) -> str:
    h = hashlib.sha256()
    for sid in sequence_ids:
        fp = frames[sid]
        h.update(sid.encode())
        h.update(np.ascontiguousarray(fp.vas_frames).tobytes())
        if fp.opi_frames is not None:
            h.update(np.ascontiguousarray(fp.opi_frames).tobytes())
    return h.hexdigest()


@dataclass
class Stage1Fold:
    """Stage-1 output for outer fold k.

    ``frames`` holds the fold model's predictions for every sequence;
    ``train_frames`` holds the predictions used as GP training inputs, which
    under cross-fitting come from inner models that never saw the sequence.
    """

    fold: int
    model: MlpModel
    loss_history: list
    frames: dict
    train_frames: dict


def _fit_predict(cfg: MlpConfig, dataset: Dataset, train_persons, predict_persons):
    keep = set(train_persons)
    model, history = train(init_model(cfg), [s for s in dataset.sequences if s.person_id in keep],
                           dataset.profiles, cfg)
    target = set(predict_persons)
    frames = {s.sequence_id: predict_frames(model, s, dataset.profiles[s.person_id])
              for s in dataset.sequences if s.person_id in target}
    return model, history, frames


def run_stage1_fold(cfg: ExperimentConfig, dataset: Dataset, plan: FoldPlan, k: int) -> Stage1Fold:
    train_persons = plan.train_persons(k)
    model, history, frames = _fit_predict(cfg.mlp_config(k), dataset, train_persons, dataset.person_ids)
    if cfg.s2_features == "in_sample":
        train_frames = {sid: fp for sid, fp in frames.items() if sid in _sequence_ids(dataset, train_persons)}
    else:
        train_frames = {}
        for j in range(len(plan.folds)):
            if j == k:
                continue
            inner_train = [p for p in train_persons if p not in plan.folds[j]]
            _, _, inner = _fit_predict(cfg.mlp_config(k, inner=j), dataset, inner_train, plan.folds[j])
            train_frames.update(inner)
    return Stage1Fold(k, model, history, frames, train_frames)


def _sequence_ids(dataset: Dataset, persons) -> set:
    keep = set(persons)
    return {s.sequence_id for s in dataset.sequences if s.person_id in keep}


def run_stage1(cfg: ExperimentConfig, dataset: Dataset, plan: FoldPlan) -> list:
    return _parallel_map(run_stage1_fold, [(cfg, dataset, plan, k) for k in range(len(plan.folds))])


def _features(cfg: ExperimentConfig, fp) -> np.ndarray:
    if cfg.s2_input is Tasks.VAS_OPI:
        return sequence_features(fp.vas_frames, fp.opi_frames)
    return sequence_features(fp.vas_frames)


def run_stage2_fold(cfg: ExperimentConfig, dataset: Dataset, plan: FoldPlan, s1: Stage1Fold) -> dict:
    k = s1.fold
    test_ids = set(plan.test_persons(k))
    train_seqs = [s for s in dataset.sequences if s.person_id not in test_ids]
    test_seqs = [s for s in dataset.sequences if s.person_id in test_ids]
    streams = ("vas", "opi") if cfg.s2_input is Tasks.VAS_OPI else ("vas",)
    names = stats_feature_names(streams)

    # GP test inputs and mean voting read the same fold-model frames; digests recorded separately
    gp_frames = {s.sequence_id: s1.frames[s.sequence_id] for s in test_seqs}
    S_train = np.array([_features(cfg, s1.train_frames[s.sequence_id]) for s in train_seqs])
    Y_train = np.array([s.vas for s in train_seqs], dtype=float)
    gp_model = gp_fit(S_train, Y_train, opt_cfg=cfg.gp_config(k), feature_names=names)
    S_test = np.array([_features(cfg, gp_frames[s.sequence_id]) for s in test_seqs])
    mean, var = gp_predict(gp_model, S_test)

    mv_frames = s1.frames
    rows = []
    for s, m, v in zip(test_seqs, mean, var):
        fp = mv_frames[s.sequence_id]
        row = {
            "sequence_id": s.sequence_id,
            "person_id": s.person_id,
            "fold": k,
            "y_true": s.vas,
            "y_mean": float(np.clip(m, 0.0, VAS_MAX)),
            "y_mean_raw": float(m),
            "y_std": float(np.sqrt(v)),
            "nn_mv": float(np.mean(fp.vas_frames)),
            "opi_true": s.opi,
        }
        if fp.opi_frames is not None:
            row["opi_nn_mv"] = float(np.mean(fp.opi_frames))
        rows.append(row)
    test_order = [s.sequence_id for s in test_seqs]
    train_order = [s.sequence_id for s in train_seqs]
    return {
        "fold": k,
        "train_persons": plan.train_persons(k),
        "test_persons": plan.test_persons(k),
        "rows": rows,
        "relevance": relevance(gp_model),
        "gp_hyperparams": gp_model.to_dict()["hyperparams"],
        "stage1_final_loss": float(s1.loss_history[-1]),
        "frames_sha256_gp_test": frames_digest(gp_frames, test_order),
        "frames_sha256_nn_mv": frames_digest(mv_frames, test_order),
        "frames_sha256_gp_train": frames_digest(s1.train_frames, train_order),
    }


@dataclass
class ExperimentReport:
    config: dict
    setting: dict
    seed: int
    metrics: dict
    per_subject: list
    per_sequence: list
    relevance: dict
    folds: list
    wall_clock_seconds: float = 0.0
    stage1_models: Optional[list] = field(default=None, repr=False)

    def to_dict(self, include_wall_clock: bool = True) -> dict:
        d = {
            "config": self.config,
            "setting": self.setting,
            "seed": self.seed,
            "metrics": self.metrics,
            "per_subject": self.per_subject,
            "per_sequence": self.per_sequence,
            "relevance": self.relevance,
            "folds": self.folds,
        }
        if include_wall_clock:
            d["wall_clock_seconds"] = self.wall_clock_seconds
        return d

    @property
    def summary_cell(self) -> str:
        return format_cell(self.metrics["pipeline"])

    def write(self, out_dir) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        _write_json(out / "report.json", self.to_dict())
        _write_summary_csv(out / "summary.csv", [self])
        self.write_tables(out)

    def write_tables(self, out: Path) -> None:
        with open(out / "per_subject_mae.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["person_id", "n_sequences", "mae_pipeline", "mae_nn_mv"])
            for r in self.per_subject:
                w.writerow([r["person_id"], r["n_sequences"], repr(r["mae_pipeline"]), repr(r["mae_nn_mv"])])
        with open(out / "per_sequence.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["sequence_id", "y_true", "y_mean", "y_std"])
            for r in self.per_sequence:
                w.writerow([r["sequence_id"], r["y_true"], repr(r["y_mean"]), repr(r["y_std"])])


def format_cell(m: dict) -> str:
    return f"{m['mae']:.2f} ({m['icc']:.2f})"


def _write_json(path: Path, obj) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=1, sort_keys=True)
        fh.write("\n")


def _score(y_true, y_pred) -> dict:
    return {"mae": mae(y_true, y_pred), "icc": icc31(y_true, y_pred)}


def assemble_report(cfg: ExperimentConfig, dataset: Dataset, plan: FoldPlan, fold_results: list,
                    stage1: list, elapsed: float) -> ExperimentReport:
    rows_by_id = {r["sequence_id"]: r for fr in fold_results for r in fr["rows"]}
    rows = [rows_by_id[s.sequence_id] for s in dataset.sequences]
    if len(rows_by_id) != len(dataset.sequences) or sum(len(fr["rows"]) for fr in fold_results) != len(rows):
        raise RuntimeError("held-out predictions do not cover every sequence exactly once")
    y = np.array([r["y_true"] for r in rows], dtype=float)
    constant = np.full_like(y, y.mean())
    metrics = {
        "pipeline": _score(y, [r["y_mean"] for r in rows]),
        "nn_mv": _score(y, [r["nn_mv"] for r in rows]),
        "constant_mean": _score(y, constant),
    }
    if all("opi_nn_mv" in r for r in rows):
        metrics["opi_nn_mv"] = _score([r["opi_true"] for r in rows], [r["opi_nn_mv"] for r in rows])

    per_subject = []
    for pid in dataset.person_ids:
        mine = [r for r in rows if r["person_id"] == pid]
        yt = [r["y_true"] for r in mine]
        per_subject.append({
            "person_id": pid,
            "n_sequences": len(mine),
            "mae_pipeline": mae(yt, [r["y_mean"] for r in mine]),
            "mae_nn_mv": mae(yt, [r["nn_mv"] for r in mine]),
        })

    names = list(fold_results[0]["relevance"])
    rel = np.array([[fr["relevance"][n] for n in names] for fr in fold_results])
    relevance_summary = {
        "orientation": "-ln(length_scale); higher means more relevant",
        "mean": dict(zip(names, rel.mean(axis=0).tolist())),
        "per_fold": [fr["relevance"] for fr in fold_results],
    }
    folds = [{k: v for k, v in fr.items() if k not in ("rows", "relevance")} for fr in fold_results]
    return ExperimentReport(
        config=cfg.to_dict(),
        setting={
            "s1_personal": cfg.s1_personal.value,
            "s1_labels": cfg.s1_labels.value,
            "s2_input": cfg.s2_input.value,
            "exclude_personal": list(cfg.exclude_personal),
        },
        seed=cfg.seed,
        metrics=metrics,
        per_subject=per_subject,
        per_sequence=rows,
        relevance=relevance_summary,
        folds=folds,
        wall_clock_seconds=elapsed,
        stage1_models=[s.model for s in stage1],
    )


def fold_plan(cfg: ExperimentConfig, dataset: Dataset) -> FoldPlan:
    return split_folds(dataset, cfg.folds, derive_seed(cfg.seed, "folds"))


def run_experiment(cfg: ExperimentConfig, dataset: Optional[Dataset] = None,
                   stage1: Optional[list] = None) -> ExperimentReport:
    """Full cross-validated two-stage run for one setting.

    ``stage1`` may carry precomputed stage-1 folds for the same dataset, seed
    and stage-1 setting (used by ``run_matrix``).
    """
    t0 = time.perf_counter()
    dataset = dataset if dataset is not None else resolve_dataset(cfg)
    plan = fold_plan(cfg, dataset)
    if stage1 is None:
        stage1 = run_stage1(cfg, dataset, plan)
    fold_results = _parallel_map(run_stage2_fold, [(cfg, dataset, plan, s1) for s1 in stage1])
    return assemble_report(cfg, dataset, plan, fold_results, stage1, time.perf_counter() - t0)


# (s1_personal, s1_labels, s2_input) in Table-1 row order
MATRIX_SETTINGS = tuple(
    (personal, labels, s2)
    for personal in (Injection.NONE, Injection.THIRD_LAYER, Injection.INPUT)
    for labels, s2 in ((Tasks.VAS_OPI, Tasks.VAS_OPI), (Tasks.VAS_OPI, Tasks.VAS), (Tasks.VAS, Tasks.VAS))
)


def run_matrix(base_cfg: ExperimentConfig, dataset: Optional[Dataset] = None) -> list:
    """Run all nine settings; stage 1 is trained once per (personal, labels) pair."""
    dataset = dataset if dataset is not None else resolve_dataset(base_cfg)
    cache = {}
    reports = []
    for personal, labels, s2 in MATRIX_SETTINGS:
        cfg = base_cfg.replace(s1_personal=personal, s1_labels=labels, s2_input=s2)
        key = (personal, labels)
        if key not in cache:
            cache[key] = run_stage1(cfg, dataset, fold_plan(cfg, dataset))
        reports.append(run_experiment(cfg, dataset, stage1=cache[key]))
    return reports


SUMMARY_COLUMNS = ["s1_personal", "s1_labels", "s2_input", "deepfacelift", "nn_mv", "rnn", "hcrf"]


def summary_rows(reports) -> list:
    return [
        {
            "s1_personal": r.setting["s1_personal"],
            "s1_labels": r.setting["s1_labels"],
            "s2_input": r.setting["s2_input"],
            "deepfacelift": format_cell(r.metrics["pipeline"]),
            "nn_mv": format_cell(r.metrics["nn_mv"]),
            "rnn": "n/a",
            "hcrf": "n/a",
        }
        for r in reports
    ]


def _write_summary_csv(path: Path, reports) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, SUMMARY_COLUMNS, lineterminator="\n")
        w.writeheader()
        w.writerows(summary_rows(reports))


def write_matrix(reports, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    doc = {
        "reports": [r.to_dict(include_wall_clock=False) for r in reports],
        "summary": summary_rows(reports),
        "wall_clock_seconds": sum(r.wall_clock_seconds for r in reports),
    }
    _write_json(out / "report.json", doc)
    _write_summary_csv(out / "summary.csv", reports)
    best = min(reports, key=lambda r: r.metrics["pipeline"]["mae"])
    best.write_tables(out)
    for r in reports:
        sub = out / "settings" / _setting_dir(r)
        sub.mkdir(parents=True, exist_ok=True)
        r.write_tables(sub)


def _setting_dir(report: ExperimentReport) -> str:
    s = report.setting
    return f"{s['s1_personal']}__{s['s1_labels']}__{s['s2_input']}".replace("+", "_")
