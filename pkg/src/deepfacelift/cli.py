"""Command-line entry point.

Exit codes: 0 success, 1 invalid input or configuration, 2 runtime failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

from . import attribution
from .data import SynthConfig, generate_synthetic, load_dataset, save_dataset
from .errors import LiftError, ValidationError
from .net import MlpModel
from .pipeline import ExperimentConfig, resolve_dataset, run_experiment, run_matrix, write_matrix


def _config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.from_json(args.config) if args.config else ExperimentConfig()
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed)
    if getattr(args, "dataset", None):
        cfg = cfg.replace(dataset=args.dataset, synth=None)
    return cfg


def cmd_synth(args) -> None:
    fields = {}
    if args.config:
        fields = ExperimentConfig.from_json(args.config).to_dict().get("synth") or {}
    if args.seed is not None:
        fields["seed"] = args.seed
    save_dataset(generate_synthetic(SynthConfig(**fields)), args.out)


def _save_models(report, out: Path) -> None:
    mdir = out / "models"
    mdir.mkdir(parents=True, exist_ok=True)
    for k, model in enumerate(report.stage1_models or []):
        model.save(mdir / f"fold{k}.json")


def cmd_run(args) -> None:
    report = run_experiment(_config(args))
    out = Path(args.out)
    report.write(out)
    _save_models(report, out)
    m = report.metrics
    print(f"pipeline {m['pipeline']['mae']:.2f} ({m['pipeline']['icc']:.2f})  "
          f"nn_mv {m['nn_mv']['mae']:.2f} ({m['nn_mv']['icc']:.2f})")


def cmd_matrix(args) -> None:
    reports = run_matrix(_config(args))
    write_matrix(reports, args.out)
    for r in reports:
        s = r.setting
        print(f"{s['s1_personal']:>12} {s['s1_labels']:>8} {s['s2_input']:>8}  {r.summary_cell}")


def cmd_attribute(args) -> None:
    model = MlpModel.load(args.model)
    cfg = _config(args)
    dataset = resolve_dataset(cfg)
    report = attribution.attribute_dataset(model, dataset, head=args.head, normalization=args.normalization)
    report.write(args.out)
    print("top landmarks:", " ".join(str(i) for i in report.top_landmarks()))


def cmd_ablate(args) -> None:
    cfg = _config(args)
    dataset = resolve_dataset(cfg)
    features = args.feature or list(attribution.ABLATABLE)
    result = {f: attribution.ablate_personal_feature(dataset, cfg, f, metric=args.metric) for f in features}
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "ablation.json", "w", encoding="utf-8") as fh:
        json.dump({"metric": args.metric, "mae_increase": result}, fh, indent=1, sort_keys=True)
    for f, v in result.items():
        print(f"{f:>12} {v:+.3f}")


def _bar_chart(path: Path, labels, series: dict, ylabel: str, title: str) -> None:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    import numpy as np

    x = np.arange(len(labels))
    width = 0.8 / max(len(series), 1)
    fig, ax = plt.subplots(figsize=(max(6, 0.35 * len(labels) + 2), 4))
    for i, (name, values) in enumerate(series.items()):
        ax.bar(x + (i - (len(series) - 1) / 2) * width, values, width, label=name)
    ax.set_xticks(x)
    ax.set_xticklabels(labels, rotation=60, ha="right", fontsize=7)
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    if len(series) > 1:
        ax.legend()
    fig.tight_layout()
    # fixed metadata keeps the SVG stable across runs
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def _read_csv(path: Path) -> list:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def cmd_plot(args) -> None:
    src = Path(args.report)
    out = Path(args.out) if args.out else src
    out.mkdir(parents=True, exist_ok=True)
    written = []
    if (src / "per_subject_mae.csv").is_file():
        rows = _read_csv(src / "per_subject_mae.csv")
        _bar_chart(out / "per_subject_mae.svg", [r["person_id"] for r in rows],
                   {"pipeline": [float(r["mae_pipeline"]) for r in rows],
                    "nn_mv": [float(r["mae_nn_mv"]) for r in rows]},
                   "MAE", "Per-subject MAE")
        written.append("per_subject_mae.svg")
    if (src / "attribution.csv").is_file():
        rows = _read_csv(src / "attribution.csv")
        _bar_chart(out / "attribution.svg", [r["landmark_id"] for r in rows],
                   {"mean |contribution|": [float(r["mean_score"]) for r in rows]},
                   "score", "Landmark contribution")
        written.append("attribution.svg")
    if (src / "report.json").is_file():
        doc = json.loads((src / "report.json").read_text(encoding="utf-8"))
        reports = doc["reports"] if "reports" in doc else [doc]
        labels = ["/".join(r["setting"][k] for k in ("s1_personal", "s1_labels", "s2_input")) for r in reports]
        _bar_chart(out / "summary_mae.svg", labels,
                   {"pipeline": [r["metrics"]["pipeline"]["mae"] for r in reports],
                    "nn_mv": [r["metrics"]["nn_mv"]["mae"] for r in reports]},
                   "MAE", "MAE per setting")
        _bar_chart(out / "summary_icc.svg", labels,
                   {"pipeline": [r["metrics"]["pipeline"]["icc"] for r in reports],
                    "nn_mv": [r["metrics"]["nn_mv"]["icc"] for r in reports]},
                   "ICC(3,1)", "ICC per setting")
        rel = reports[0]["relevance"]["mean"]
        _bar_chart(out / "relevance.svg", list(rel), {"-ln ell": list(rel.values())},
                   "relevance", "GP feature relevance")
        written += ["summary_mae.svg", "summary_icc.svg", "relevance.svg"]
    if not written:
        raise ValidationError(f"no report files found in {src}")
    print("wrote", " ".join(written))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="deepfacelift", description="Two-stage personalised pain estimation.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_required=True):
        p.add_argument("--config", help="experiment config JSON")
        p.add_argument("--seed", type=int, help="master seed (overrides the config)")
        p.add_argument("--out", required=out_required, help="output directory")
        return p

    common(sub.add_parser("synth", help="write a synthetic dataset"))
    for name, help_ in (("run", "run one experiment"), ("matrix", "run the nine-setting sweep")):
        p = common(sub.add_parser(name, help=help_))
        p.add_argument("--dataset", help="dataset directory (default: synthetic)")
    p = common(sub.add_parser("attribute", help="landmark attribution for a saved stage-1 model"))
    p.add_argument("--model", required=True, help="model JSON written by `run`")
    p.add_argument("--dataset", help="dataset directory (default: synthetic)")
    p.add_argument("--head", default="vas", choices=("vas", "opi"))
    p.add_argument("--normalization", default="person", choices=("person", "model"))
    p = common(sub.add_parser("ablate", help="MAE increase when a personal feature is dropped"))
    p.add_argument("--dataset", help="dataset directory (default: synthetic)")
    p.add_argument("--feature", action="append", choices=attribution.ABLATABLE)
    p.add_argument("--metric", default="pipeline", choices=("pipeline", "nn_mv"))
    p = common(sub.add_parser("plot", help="SVG charts from a report directory"), out_required=False)
    p.add_argument("report", help="directory holding report.json / csv tables")
    return parser


COMMANDS = {
    "synth": cmd_synth, "run": cmd_run, "matrix": cmd_matrix,
    "attribute": cmd_attribute, "ablate": cmd_ablate, "plot": cmd_plot,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 1
    try:
        COMMANDS[args.command](args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (LiftError, OSError, RuntimeError, ArithmeticError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
