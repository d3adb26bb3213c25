"""Command-line entry point: ``dpnn <subcommand> ...``.

Every JSON output carries a ``provenance`` block (seed, resolved config,
config hash, package versions); CSV and model outputs get a
``<name>.meta.json`` sidecar with the same block. Outputs are written to
temporary files and renamed into place only once the whole subcommand has
succeeded.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Optional, Sequence

import numpy as np
import scipy

from . import __version__
from .dataio import (
    DEFAULT_TREATMENTS,
    Dataset,
    SynthConfig,
    dataset_to_csv,
    default_synth_config,
    generate_synthetic,
    impute,
    load_csv,
    load_labels_csv,
)
from .errors import DomainError, DpnnError, FormatError, NumericError, ParseError, ShapeError, ValidationError
from .evalsuite import DEFAULT_BASELINE, format_record_table, format_summary_table, loso, run_cv
from .model import Hyperparams, load_model, model_to_json
from .trainer import GridSpec, grid_search, train

CONFIG_DIR_ENV = "DPNN_CONFIG_DIR"

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_USAGE = 2
EXIT_INPUT = 3
EXIT_DOMAIN = 4
EXIT_NUMERIC = 5
EXIT_IO = 6

SUBCOMMANDS = ("synth", "train", "cv", "loso", "clusters", "report", "tree", "stats", "pca", "gridsearch")

# Added to the synthetic cohort by --include-sertraline-arm: patients kept
# on sertraline after a poor early response, so remission is scaled down.
SERTRALINE_ARM_FRACTION = 0.06
SERTRALINE_ARM_REMISSION_SCALE = 0.6
SERTRALINE_ARM_STUDY = "SUND"


class UsageError(Exception):
    pass


@dataclass
class RunConfig:
    subcommand: str
    seed: int = 0
    data: Optional[str] = None
    out: Optional[str] = None
    hyper: Optional[str] = None
    model: Optional[str] = None
    options: dict[str, Any] = field(default_factory=dict)
    jobs: int = 1

    def canonical(self) -> dict:
        # jobs is excluded: results do not depend on it
        doc = asdict(self)
        doc.pop("jobs")
        return doc

    def config_hash(self) -> str:
        text = json.dumps(self.canonical(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode("utf-8")).hexdigest()


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}")


def _add_common(p: argparse.ArgumentParser, data: bool = True, out_required: bool = False):
    p.add_argument("--seed", type=int, default=0, help="random seed (default 0)")
    if data:
        p.add_argument("--data", required=True, help="patient CSV")
    p.add_argument("--out", required=out_required,
                   help="output path" if out_required else "JSON output path (omit to print only)")


def _add_hyper(p: argparse.ArgumentParser, required: bool = True):
    p.add_argument("--hyper", required=required, help="hyperparameter JSON (relative paths also tried under $%s)" % CONFIG_DIR_ENV)


def _add_jobs(p: argparse.ArgumentParser):
    p.add_argument("--jobs", type=int, default=1, help="worker processes (default 1)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="dpnn", description="Prototype network training, evaluation and interpretation.")
    parser.add_argument("--version", action="version", version=f"dpnn {__version__}")
    sub = parser.add_subparsers(dest="subcommand", metavar="SUBCOMMAND", parser_class=_Parser)

    p = sub.add_parser("synth", help="generate a synthetic cohort with planted clusters")
    _add_common(p, data=False, out_required=True)
    p.add_argument("--n", type=int, default=5438, help="number of patients")
    p.add_argument("--separation", type=float, default=1.0, help="multiplier on distances between cluster means")
    p.add_argument("--missing-rate", type=float, default=0.0)
    p.add_argument("--config", help="SynthConfig JSON; overrides --n/--separation/--missing-rate")
    p.add_argument("--labels-out", help="also write planted cluster labels to this CSV")
    p.add_argument("--exact-counts", action="store_true", help="match the reference treatment counts exactly")
    arm = p.add_mutually_exclusive_group()
    arm.add_argument("--include-sertraline-arm", dest="sertraline_arm", action="store_true")
    arm.add_argument("--exclude-sertraline-arm", dest="sertraline_arm", action="store_false")
    p.set_defaults(sertraline_arm=False)

    p = sub.add_parser("train", help="fit a model on the whole dataset")
    _add_common(p, out_required=True)
    _add_hyper(p)
    p.add_argument("--trace-out", help="write the per-epoch loss trace as JSON")

    p = sub.add_parser("cv", help="repeated stratified k-fold evaluation")
    _add_common(p)
    _add_hyper(p)
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--repeats", type=int, default=50)
    p.add_argument("--baseline", type=float, default=DEFAULT_BASELINE, help="reference remission rate")
    p.add_argument("--label", default=None, help="row label in the printed table (default: prototype count)")
    _add_jobs(p)

    p = sub.add_parser("loso", help="leave-one-study-out evaluation")
    _add_common(p)
    _add_hyper(p)
    which = p.add_mutually_exclusive_group(required=True)
    which.add_argument("--study", help="study to hold out")
    which.add_argument("--all-studies", action="store_true", help="hold out each study in turn")
    _add_jobs(p)

    p = sub.add_parser("clusters", help="assign patients to prototypes and tabulate outcomes")
    _add_common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--min-n", type=int, default=25, help="cells below this size are flagged low-confidence")
    p.add_argument("--assignments-out", help="also write patient cluster ids as CSV")
    p.add_argument("--no-members", action="store_true", help="omit member id lists from the JSON")

    p = sub.add_parser("report", help="similarity report for one patient")
    _add_common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--patient", required=True, help="patient id")

    p = sub.add_parser("tree", help="decision-tree surrogate for the clusters")
    _add_common(p)
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--model", help="derive clusters from this model")
    src.add_argument("--clusters", help="cluster assignment CSV")
    p.add_argument("--max-depth", type=int, default=4)
    p.add_argument("--min-leaf", type=int, default=10)
    p.add_argument("--stability-runs", type=int, default=0,
                   help="also retrain this many models and count top-level split features (needs --hyper)")
    p.add_argument("--top-depth", type=int, default=2)
    _add_hyper(p, required=False)
    _add_jobs(p)

    p = sub.add_parser("stats", help="Kruskal-Wallis and Dunn tests of features across clusters")
    _add_common(p)
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--model", help="derive clusters from this model")
    src.add_argument("--clusters", help="cluster assignment CSV")

    p = sub.add_parser("pca", help="PCA of the merged cohort, tagged by study")
    _add_common(p)
    race = p.add_mutually_exclusive_group()
    race.add_argument("--include-race", dest="include_race", action="store_true")
    race.add_argument("--exclude-race", dest="include_race", action="store_false")
    rem = p.add_mutually_exclusive_group()
    rem.add_argument("--include-remission", dest="include_remission", action="store_true")
    rem.add_argument("--exclude-remission", dest="include_remission", action="store_false")
    p.add_argument("--no-standardize", dest="standardize", action="store_false")
    p.set_defaults(include_race=False, include_remission=True, standardize=True)

    p = sub.add_parser("gridsearch", help="pick hyperparameters by inner-fold AUC")
    _add_common(p)
    p.add_argument("--grid", required=True, help="GridSpec JSON")
    p.add_argument("--best-out", help="write the winning hyperparameters here")
    _add_jobs(p)
    return parser


_TOP_LEVEL = {"subcommand", "seed", "data", "out", "hyper", "model", "jobs"}


def parse_args(argv: Optional[Sequence[str]] = None) -> RunConfig:
    """Parse a command line into a RunConfig; raises UsageError on bad input."""
    parser = build_parser()
    ns = parser.parse_args(list(argv) if argv is not None else None)
    if ns.subcommand is None:
        raise UsageError(parser.format_usage().rstrip() + "\ndpnn: error: a subcommand is required")
    values = vars(ns)
    opts = {k: v for k, v in values.items() if k not in _TOP_LEVEL}
    cfg = RunConfig(
        subcommand=ns.subcommand,
        seed=ns.seed,
        data=values.get("data"),
        out=values.get("out"),
        hyper=values.get("hyper"),
        model=values.get("model"),
        options=opts,
        jobs=values.get("jobs", 1),
    )
    _check(cfg)
    return cfg


def _check(cfg: RunConfig):
    o = cfg.options
    if not 0 <= cfg.seed < 2**64:
        raise UsageError("--seed must be a non-negative 64-bit integer")
    if cfg.jobs < 1:
        raise UsageError("--jobs must be >= 1")
    if cfg.subcommand == "cv":
        if o["k"] < 2:
            raise UsageError("--k must be >= 2")
        if o["repeats"] < 1:
            raise UsageError("--repeats must be >= 1")
        if not 0 < o["baseline"] <= 1:
            raise UsageError("--baseline must lie in (0, 1]")
    if cfg.subcommand == "synth" and o["n"] < 1:
        raise UsageError("--n must be >= 1")
    if cfg.subcommand == "tree":
        if o["stability_runs"] < 0:
            raise UsageError("--stability-runs must be >= 0")
        if o["stability_runs"] > 0 and cfg.hyper is None:
            raise UsageError("--stability-runs needs --hyper")
        if o["max_depth"] < 0 or o["min_leaf"] < 1:
            raise UsageError("--max-depth must be >= 0 and --min-leaf >= 1")


# --------------------------------------------------------------------------
# Output handling


def _versions() -> dict:
    return {"dpnn": __version__, "numpy": np.__version__, "scipy": scipy.__version__}


def provenance(cfg: RunConfig) -> dict:
    return {"seed": cfg.seed, "config": cfg.canonical(), "config_hash": cfg.config_hash(), "versions": _versions()}


def _json_text(doc: Any) -> str:
    return json.dumps(doc, indent=1, sort_keys=True, allow_nan=False) + "\n"


class Outputs:
    """Stages files next to their destination and commits them together."""

    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        self.staged: list[tuple[Path, Path]] = []

    def _stage(self, path, text: str):
        dest = Path(path)
        if dest.parent and not dest.parent.exists():
            dest.parent.mkdir(parents=True, exist_ok=True)
        tmp = dest.with_name(f".{dest.name}.partial")
        tmp.write_text(text, encoding="utf-8", newline="\n")
        self.staged.append((tmp, dest))

    def json(self, path, doc: dict):
        if path is None:
            return
        body = dict(doc)
        body["provenance"] = provenance(self.cfg)
        self._stage(path, _json_text(body))

    def raw(self, path, text: str):
        self._stage(path, text)
        self._stage(f"{path}.meta.json", _json_text({"provenance": provenance(self.cfg), "file": Path(path).name}))

    def commit(self):
        for tmp, dest in self.staged:
            os.replace(tmp, dest)
        self.staged = []

    def discard(self):
        for tmp, _ in self.staged:
            try:
                tmp.unlink()
            except FileNotFoundError:
                pass
        self.staged = []


def resolve_config_path(path: str) -> Path:
    p = Path(path)
    if p.exists() or p.is_absolute():
        return p
    base = os.environ.get(CONFIG_DIR_ENV)
    if base and (Path(base) / p).exists():
        return Path(base) / p
    return p


def _load_hyper(cfg: RunConfig) -> Hyperparams:
    h = Hyperparams.load(resolve_config_path(cfg.hyper))
    return h.replace(seed=cfg.seed)


def _load_data(cfg: RunConfig) -> Dataset:
    ds = load_csv(cfg.data)
    return impute(ds) if ds.has_missing else ds


def _load_clusters(path: str, dataset: Dataset) -> np.ndarray:
    labels = load_labels_csv(path)
    missing = [pid for pid in dataset.patient_ids if pid not in labels]
    if missing:
        raise ValidationError(f"{len(missing)} patient(s) have no cluster label, e.g. {missing[0]!r}")
    return np.array([labels[pid] for pid in dataset.patient_ids], dtype=np.int64)


def _clusters_from(cfg: RunConfig, dataset: Dataset):
    from .interpret import assign_clusters

    if cfg.model is not None:
        model = load_model(cfg.model)
        return assign_clusters(model, dataset), model.hyperparams.n_prototypes
    clusters = _load_clusters(cfg.options["clusters"], dataset)
    return clusters, int(clusters.max()) + 1


def _labels_csv(ids, labels) -> str:
    lines = ["patient_id,cluster"] + [f"{pid},{int(c)}" for pid, c in zip(ids, labels)]
    return "\n".join(lines) + "\n"


# --------------------------------------------------------------------------
# Subcommands


def sertraline_arm_config(base: SynthConfig) -> SynthConfig:
    """Companion config for the sertraline-only arm of the mirtazapine study."""
    n = max(1, int(round(base.n_patients * SERTRALINE_ARM_FRACTION)))
    t = DEFAULT_TREATMENTS.index("sertraline")
    probs = [0.0] * len(DEFAULT_TREATMENTS)
    probs[t] = 1.0
    doc = base.to_json()
    doc.update(
        n_patients=n,
        treatment_probs=probs,
        treatment_counts=None,
        remission_table=[[p * SERTRALINE_ARM_REMISSION_SCALE for p in row] for row in base.remission_table],
        treatment_studies={name: ({SERTRALINE_ARM_STUDY: 1.0} if name == "sertraline" else dict(w))
                           for name, w in base.treatment_studies.items()},
        seed=(base.seed + 1) % 2**64,
    )
    return SynthConfig.from_json(doc)


def _concat(a: Dataset, b: Dataset, prefix: str) -> Dataset:
    return Dataset(
        a.patient_ids + tuple(prefix + pid for pid in b.patient_ids),
        a.studies + b.studies,
        np.concatenate([a.treatments, b.treatments]),
        np.concatenate([a.remission, b.remission]),
        np.vstack([a.features, b.features]),
        np.vstack([a.missing, b.missing]),
        a.schema,
        a.treatment_set,
    )


def cmd_synth(cfg: RunConfig, out: Outputs) -> None:
    o = cfg.options
    if o["config"]:
        syn = SynthConfig.load(resolve_config_path(o["config"]))
        doc = syn.to_json()
        doc["seed"] = cfg.seed
        syn = SynthConfig.from_json(doc)
    else:
        syn = default_synth_config(o["n"], seed=cfg.seed, separation=o["separation"], exact_counts=o["exact_counts"])
        syn.missing_rate = o["missing_rate"]
    ds, labels = generate_synthetic(syn)
    if o["sertraline_arm"]:
        arm, arm_labels = generate_synthetic(sertraline_arm_config(syn))
        ds = _concat(ds, arm, "S")
        labels = np.concatenate([labels, arm_labels])
    out.raw(cfg.out, dataset_to_csv(ds))
    if o["labels_out"]:
        out.raw(o["labels_out"], _labels_csv(ds.patient_ids, labels))
    print(f"wrote {len(ds)} patients ({len(ds.study_names)} studies) to {cfg.out}")


def cmd_train(cfg: RunConfig, out: Outputs) -> None:
    ds = _load_data(cfg)
    h = _load_hyper(cfg)
    report = train(ds, h)
    out.raw(cfg.out, model_to_json(report.model))
    if cfg.options["trace_out"]:
        out.json(cfg.options["trace_out"], {
            "epochs_run": report.epochs_run,
            "stopped_early": report.stopped_early,
            "trace": [asdict(b) for b in report.trace],
        })
    last = report.trace[-1]
    print(f"trained {report.epochs_run} epochs; final loss {last.total:.6f} "
          f"(cls {last.cls_term:.4f}, ae {last.ae_term:.4f}, pv {last.pv_term:.4f})")


def cmd_cv(cfg: RunConfig, out: Outputs) -> None:
    o = cfg.options
    ds = _load_data(cfg)
    h = _load_hyper(cfg)
    summary = run_cv(ds, h, k=o["k"], repeats=o["repeats"], seed=cfg.seed, baseline=o["baseline"], jobs=cfg.jobs)
    label = o["label"] or str(h.n_prototypes)
    table = format_summary_table({label: summary})
    doc = summary.to_json()
    doc["table"] = table
    out.json(cfg.out, doc)
    print(table, end="")
    imp = summary.rri_improvement
    if imp is not None:
        print(f"remission rate vs baseline {o['baseline']:.3f}: {imp[0]:+.3f} absolute, {imp[1]:+.1%} relative")
    if summary.failures:
        where = f"; see {cfg.out}" if cfg.out else f"; first: {summary.failures[0]}"
        print(f"{len(summary.failures)} fold(s) failed{where}", file=sys.stderr)


def cmd_loso(cfg: RunConfig, out: Outputs) -> None:
    o = cfg.options
    ds = _load_data(cfg)
    h = _load_hyper(cfg)
    studies = ds.study_names if o["all_studies"] else [o["study"]]
    if cfg.jobs > 1 and len(studies) > 1:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            records = list(pool.map(loso, [ds] * len(studies), [h] * len(studies), studies,
                                    [cfg.seed] * len(studies)))
    else:
        records = [loso(ds, h, s, seed=cfg.seed) for s in studies]
    results = {}
    for s, rec in zip(studies, records):
        results[s] = rec.to_json()
        print(f"held out {s} (n={rec.n})")
        print(format_record_table(rec), end="")
    out.json(cfg.out, {"held_out": results})


def cmd_clusters(cfg: RunConfig, out: Outputs) -> None:
    from .interpret import assign_clusters, cluster_letter, cluster_treatment_table, rank_treatments

    o = cfg.options
    ds = _load_data(cfg)
    model = load_model(cfg.model)
    clusters = assign_clusters(model, ds)
    profiles = cluster_treatment_table(ds, clusters, model.hyperparams.n_prototypes, o["min_n"])
    out.json(cfg.out, {"clusters": [p.to_json(include_members=not o["no_members"]) for p in profiles],
                       "min_n": o["min_n"]})
    if o["assignments_out"]:
        out.raw(o["assignments_out"], _labels_csv(ds.patient_ids, clusters))
    for p in profiles:
        rate = "n/a" if p.remission_rate is None else f"{p.remission_rate:.3f}"
        print(f"cluster {cluster_letter(p.cluster_id)}: n={p.size}, remission {rate}")
        for c in rank_treatments(p):
            flag = "  (low n)" if c.low_confidence else ""
            print(f"  {c.treatment:<26} {c.rate:.3f}  n={c.n}{flag}")


def cmd_report(cfg: RunConfig, out: Outputs) -> None:
    from .interpret import assign_clusters, patient_report

    ds = _load_data(cfg)
    model = load_model(cfg.model)
    clusters = assign_clusters(model, ds)
    doc = patient_report(model, ds, clusters, cfg.options["patient"])
    out.json(cfg.out, doc)
    print(f"patient {doc['patient_id']}: nearest prototype {doc['cluster']}")


def cmd_tree(cfg: RunConfig, out: Outputs) -> None:
    from .interpret import cluster_letter, fit_cart, tree_feature_frequency

    o = cfg.options
    ds = _load_data(cfg)
    clusters, k = _clusters_from(cfg, ds)
    tree, acc = fit_cart(ds.complete_features(), clusters, o["max_depth"], o["min_leaf"])
    names = list(ds.schema.names)
    labels = [cluster_letter(c) for c in range(k)]
    text = tree.render(names, labels)
    doc = {"training_accuracy": acc, "max_depth": o["max_depth"], "min_leaf": o["min_leaf"],
           "tree": tree.to_json(names), "text": text}
    if o["stability_runs"]:
        freq = tree_feature_frequency(ds, _load_hyper(cfg), runs=o["stability_runs"], max_depth=o["max_depth"],
                                      min_leaf=o["min_leaf"], top_depth=o["top_depth"], seed=cfg.seed, jobs=cfg.jobs)
        doc["feature_frequency"] = freq.to_json()
    out.json(cfg.out, doc)
    print(text, end="")
    print(f"training accuracy {acc:.3f}")


def cmd_stats(cfg: RunConfig, out: Outputs) -> None:
    from .interpret import feature_tests

    ds = _load_data(cfg)
    clusters, k = _clusters_from(cfg, ds)
    rows = feature_tests(ds.complete_features(), clusters, ds.schema.names, k)
    out.json(cfg.out, {"tests": rows})
    for r in rows:
        if "error" in r:
            print(f"{r['feature']:<28} {r['error']}")
        else:
            print(f"{r['feature']:<28} H={r['H']:9.3f}  p={r['p']:.3g}")


def cmd_pca(cfg: RunConfig, out: Outputs) -> None:
    from .interpret import pca

    o = cfg.options
    ds = _load_data(cfg)
    res = pca(ds, standardize=o["standardize"], include_race=o["include_race"],
              include_remission=o["include_remission"])
    out.json(cfg.out, res.to_json())
    print("variable                      PC1      PC2")
    for v, (a, b) in res.top_loadings(2).items():
        print(f"{v:<28} {a:7.3f}  {b:7.3f}")
    evr = res.explained_variance_ratio
    print(f"explained variance: PC1 {evr[0]:.3f}, PC2 {evr[1]:.3f}")


def cmd_gridsearch(cfg: RunConfig, out: Outputs) -> None:
    o = cfg.options
    ds = _load_data(cfg)
    grid = GridSpec.load(resolve_config_path(o["grid"]))
    best, cells = grid_search(ds, grid, seed=cfg.seed, jobs=cfg.jobs)
    out.json(cfg.out, {"best": best.to_json(), "cells": [c.to_json() for c in cells]})
    if o["best_out"]:
        out.json(o["best_out"], best.to_json())
    for c in cells:
        score = "failed" if c.mean_auc is None else f"{c.mean_auc:.4f}"
        print(f"cell {c.index}: {json.dumps(c.overrides, sort_keys=True)}  AUC {score}")


_COMMANDS = {
    "synth": cmd_synth, "train": cmd_train, "cv": cmd_cv, "loso": cmd_loso, "clusters": cmd_clusters,
    "report": cmd_report, "tree": cmd_tree, "stats": cmd_stats, "pca": cmd_pca, "gridsearch": cmd_gridsearch,
}


def exit_code_for(exc: BaseException) -> int:
    if isinstance(exc, (ValidationError, ParseError, FormatError)):
        return EXIT_INPUT
    if isinstance(exc, NumericError):
        return EXIT_NUMERIC
    if isinstance(exc, (DomainError, ShapeError)):
        return EXIT_DOMAIN
    if isinstance(exc, OSError):
        return EXIT_IO
    return EXIT_ERROR


def run(cfg: RunConfig) -> int:
    """Execute a parsed command; returns the process exit code."""
    out = Outputs(cfg)
    try:
        _COMMANDS[cfg.subcommand](cfg, out)
        out.commit()
    except (DpnnError, OSError, ValueError, ArithmeticError) as exc:
        out.discard()
        print(f"dpnn {cfg.subcommand}: {exc}", file=sys.stderr)
        return exit_code_for(exc)
    except BaseException:
        out.discard()
        raise
    return EXIT_OK


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        cfg = parse_args(argv)
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_USAGE
    return run(cfg)


if __name__ == "__main__":
    sys.exit(main())
