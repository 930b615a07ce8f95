"""Benchmark experiments: hash-size sweep, feature-count curve, the
nine-cell composition grid, and ranked-window robustness.

Every experiment consumes raw records, derives all randomness from its
seed, and produces a BenchReport that renders to byte-identical files.
Cells and sweep points can run on a thread pool; results are merged in a
fixed order so the thread count never changes output bytes.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import reporting
from .corpus import (
    AppRecord,
    CompositionRecipe,
    DetectionLabelPolicy,
    LabeledDataset,
    compose_subset,
    corpus_digest,
)
from .errors import CompositionError, DegenerateLabelsError, MetatriageError
from .evaluate import (
    PipelineConfig,
    SelectionSpec,
    cross_validate,
    roc_and_auc,
)
from .featurize import HashConfig, hash_column_names, static_feature_block
from .learn import ForestParams, Hyperparams, LogisticParams

DEFAULT_SWEEP_SIZES = (32, 64, 128, 256, 512, 1024, 2048)


@dataclass(frozen=True)
class BenchmarkGrid:
    """The composition grid: malware share x detection threshold."""

    malware_fractions: tuple[float, ...] = (0.02, 0.25, 0.50)
    thresholds: tuple[int, ...] = (1, 2, 4)
    subset_size: int = 5000
    model_kinds: tuple[str, ...] = ("logistic", "linear_svm", "forest")
    seed: int = 0

    @property
    def n_cells(self) -> int:
        return len(self.malware_fractions) * len(self.thresholds)


@dataclass
class BenchReport:
    experiment: str
    config: dict
    columns: list[str]
    rows: list[dict]
    curves: list[dict] = field(default_factory=list)
    ranking_table: list[dict] = field(default_factory=list)
    reference: list[dict] = field(default_factory=list)
    flags: list[str] = field(default_factory=list)
    provenance: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "experiment": self.experiment,
            "config": self.config,
            "columns": self.columns,
            "rows": self.rows,
            "curves": self.curves,
            "ranking_table": self.ranking_table,
            "reference": self.reference,
            "flags": self.flags,
            "provenance": self.provenance,
        }

    @staticmethod
    def from_json(obj: dict) -> "BenchReport":
        return BenchReport(
            experiment=obj["experiment"],
            config=obj["config"],
            columns=list(obj["columns"]),
            rows=list(obj["rows"]),
            curves=list(obj.get("curves", [])),
            ranking_table=list(obj.get("ranking_table", [])),
            reference=list(obj.get("reference", [])),
            flags=list(obj.get("flags", [])),
            provenance=obj.get("provenance", {}),
        )


def _config_digest(config: dict) -> str:
    return hashlib.sha256(
        json.dumps(config, sort_keys=True, separators=(",", ":")).encode()
    ).hexdigest()


def _provenance(experiment: str, config: dict, seed: int, digest: str) -> dict:
    from . import __version__

    return {
        "tool": f"metatriage {__version__}",
        "experiment": experiment,
        "seed": seed,
        "corpus_digest": digest,
        "config_digest": _config_digest(config),
        "config": config,
    }


def _derive_seed(seed: int, *path: int) -> int:
    return int(
        np.random.SeedSequence([seed & 0xFFFFFFFFFFFFFFFF, *path]).generate_state(1)[0]
    )


def _downsample_curve(points: np.ndarray, cap: int = 512) -> np.ndarray:
    if len(points) <= cap:
        return points
    idx = np.linspace(0, len(points) - 1, cap).round().astype(int)
    return points[np.unique(idx)]


def _map_ordered(tasks: Sequence, fn: Callable, threads: int) -> list:
    """Run fn over tasks, preserving task order in the results."""
    if threads <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, tasks))


# ---------------------------------------------------------------------------
# Experiment 1: hash-size sweep
# ---------------------------------------------------------------------------


def hash_size_sweep(
    dataset: LabeledDataset,
    sizes: Sequence[int] = DEFAULT_SWEEP_SIZES,
    model_kind: str = "logistic",
    k: int = 5,
    seed: int = 0,
    hyper: Optional[Hyperparams] = None,
    threads: int = 1,
) -> BenchReport:
    """Cross-validated AUC of permission-hash features alone per bucket count.

    Models see ONLY the f* columns, so the curve isolates how much identity
    information survives hashing at each size. ROC points are pooled from
    held-out scores across folds.
    """
    if not sizes:
        raise ValueError("sizes must be non-empty")
    if hyper is None:
        hyper = Hyperparams(logistic=LogisticParams(epochs=300))
    config = {
        "sizes": list(sizes),
        "model_kind": model_kind,
        "k": k,
        "seed": seed,
        "hyper": hyper.to_json(),
    }
    digest = corpus_digest(dataset.records)
    report = BenchReport(
        experiment="hash-size-sweep",
        config=config,
        columns=["size", "pooled_auc", "mean_test_auc", "std_test_auc", "mean_test_f1"],
        rows=[],
        provenance=_provenance("hash-size-sweep", config, seed, digest),
    )
    report.flags.extend(dataset.flags)

    def run_point(size: int):
        hash_config = HashConfig(n_buckets=size, seed=0)
        pipeline = PipelineConfig(
            hash_config=hash_config,
            selection=SelectionSpec(columns=hash_column_names(hash_config)),
            hyper=hyper,
        )
        try:
            ev = cross_validate(
                dataset, model_kind, k=k, seed=_derive_seed(seed, size), config=pipeline
            )
        except (MetatriageError, ValueError) as exc:
            return size, None, f"size {size} failed: {exc}"
        pooled_auc, roc_points = None, None
        if ev.pooled_scores is not None:
            roc = roc_and_auc(ev.pooled_scores, ev.pooled_labels)
            pooled_auc = roc.auc
            roc_points = _downsample_curve(roc.points)
        return size, (ev, pooled_auc, roc_points), None

    for size, outcome, error in _map_ordered(list(sizes), run_point, threads):
        if error is not None:
            report.flags.append(error)
            continue
        ev, pooled_auc, roc_points = outcome
        report.rows.append(
            {
                "size": size,
                "pooled_auc": pooled_auc,
                "mean_test_auc": ev.mean("test", "auc"),
                "std_test_auc": ev.std("test", "auc"),
                "mean_test_f1": ev.mean("test", "f1"),
            }
        )
        if roc_points is not None:
            report.curves.append(
                {
                    "name": f"ROC {size} buckets",
                    "kind": "roc",
                    "x": [float(p) for p in roc_points[:, 0]],
                    "y": [float(p) for p in roc_points[:, 1]],
                }
            )
        report.flags.extend(f"size {size}: {f}" for f in ev.flags)
    report.curves.append(
        {
            "name": "pooled AUC",
            "kind": "auc-vs-size",
            "x": [float(r["size"]) for r in report.rows],
            "y": [r["pooled_auc"] for r in report.rows],
        }
    )
    return report


# ---------------------------------------------------------------------------
# Experiment 2: feature-count curve
# ---------------------------------------------------------------------------


def feature_count_curve(
    dataset: LabeledDataset,
    ks: Sequence[int],
    model_kinds: Sequence[str] = ("logistic", "linear_svm", "forest"),
    ranking_method: str = "mdni",
    k: int = 10,
    seed: int = 0,
    hyper: Optional[Hyperparams] = None,
    hash_config: HashConfig = HashConfig(),
    frozen_ranking: Optional[Sequence[str]] = None,
    threads: int = 1,
) -> BenchReport:
    """Cross-validated F1 per model at each top-k feature count.

    By default the ranking is refitted inside each training fold
    (leakage-safe). Passing `frozen_ranking` (an ordered column list)
    reuses that fixed order for every fold and flags the report.
    """
    if not ks:
        raise ValueError("ks must be non-empty")
    if hyper is None:
        hyper = Hyperparams(forest=ForestParams(n_trees=60))
    config = {
        "ks": list(ks),
        "model_kinds": list(model_kinds),
        "ranking_method": ranking_method,
        "k": k,
        "seed": seed,
        "hash_buckets": hash_config.n_buckets,
        "frozen_ranking": list(frozen_ranking) if frozen_ranking else None,
        "hyper": hyper.to_json(),
    }
    digest = corpus_digest(dataset.records)
    report = BenchReport(
        experiment="feature-count-curve",
        config=config,
        columns=["model", "top_k", "mean_train_f1", "mean_test_f1", "std_test_f1"],
        rows=[],
        provenance=_provenance("feature-count-curve", config, seed, digest),
    )
    report.flags.extend(dataset.flags)
    if frozen_ranking:
        report.flags.append("frozen-ranking: fixed feature order reused across folds")

    static = static_feature_block(dataset.records, hash_config)
    tasks = [(m, top_k) for m in model_kinds for top_k in ks]

    def run_point(task):
        model_kind, top_k = task
        if frozen_ranking:
            spec = SelectionSpec(columns=tuple(frozen_ranking[:top_k]))
        else:
            spec = SelectionSpec(method=ranking_method, top_k=top_k)
        pipeline = PipelineConfig(hash_config=hash_config, selection=spec, hyper=hyper)
        try:
            ev = cross_validate(
                dataset,
                model_kind,
                k=k,
                seed=_derive_seed(seed, top_k),
                config=pipeline,
                static_block=static,
            )
        except (MetatriageError, ValueError) as exc:
            return task, None, f"model {model_kind} top_k {top_k} failed: {exc}"
        return task, ev, None

    results = _map_ordered(tasks, run_point, threads)
    for (model_kind, top_k), ev, error in results:
        if error is not None:
            report.flags.append(error)
            continue
        report.rows.append(
            {
                "model": model_kind,
                "top_k": top_k,
                "mean_train_f1": ev.mean("train", "f1"),
                "mean_test_f1": ev.mean("test", "f1"),
                "std_test_f1": ev.std("test", "f1"),
            }
        )
    for model_kind in model_kinds:
        rows = [r for r in report.rows if r["model"] == model_kind]
        report.curves.append(
            {
                "name": reporting.MODEL_LABELS.get(model_kind, model_kind),
                "kind": "f1-vs-k",
                "x": [float(r["top_k"]) for r in rows],
                "y": [r["mean_test_f1"] for r in rows],
            }
        )
    return report


# ---------------------------------------------------------------------------
# Experiment 3: nine-cell grid
# ---------------------------------------------------------------------------


def grid_benchmark(
    corpus: Sequence[AppRecord],
    grid: BenchmarkGrid = BenchmarkGrid(),
    top_k: int = 15,
    ranking_method: str = "mdni",
    k: int = 10,
    hyper: Optional[Hyperparams] = None,
    hash_config: HashConfig = HashConfig(),
    frozen_ranking: Optional[Sequence[str]] = None,
    threads: int = 1,
    ambiguous_handling: str = "exclude",
    leaky_reputation: bool = False,
) -> BenchReport:
    """Compose each (fraction, threshold) cell and cross-validate every model.

    Each cell gets its own seeded subset; infeasible cells (a class pool
    too small even after shrinking) are flagged and skipped while the rest
    of the grid proceeds.
    """
    if hyper is None:
        hyper = Hyperparams(forest=ForestParams(n_trees=60))
    corpus = list(corpus)
    config = {
        "malware_fractions": list(grid.malware_fractions),
        "thresholds": list(grid.thresholds),
        "subset_size": grid.subset_size,
        "model_kinds": list(grid.model_kinds),
        "seed": grid.seed,
        "top_k": top_k,
        "ranking_method": ranking_method,
        "k": k,
        "hash_buckets": hash_config.n_buckets,
        "frozen_ranking": list(frozen_ranking) if frozen_ranking else None,
        "ambiguous_handling": ambiguous_handling,
        "leaky_reputation": leaky_reputation,
        "hyper": hyper.to_json(),
    }
    digest = corpus_digest(corpus)
    report = BenchReport(
        experiment="benchmark-grid",
        config=config,
        columns=[
            "model", "malware_fraction", "threshold", "n_rows",
            "mean_train_precision", "mean_train_recall", "mean_train_f1",
            "mean_test_precision", "mean_test_recall", "mean_test_f1",
            "std_test_f1",
            "reference_train_f1", "reference_test_f1",
        ],
        rows=[],
        provenance=_provenance("benchmark-grid", config, grid.seed, digest),
    )
    if frozen_ranking:
        report.flags.append("frozen-ranking: fixed feature order reused across folds")
    if leaky_reputation:
        report.flags.append("leaky-reputation: tables fitted on full subsets")

    if frozen_ranking:
        spec = SelectionSpec(columns=tuple(frozen_ranking[:top_k]))
    else:
        spec = SelectionSpec(method=ranking_method, top_k=top_k)

    cells = [
        (ci, fraction, threshold)
        for ci, (fraction, threshold) in enumerate(
            (f, t) for f in grid.malware_fractions for t in grid.thresholds
        )
    ]

    def run_cell(cell):
        ci, fraction, threshold = cell
        recipe = CompositionRecipe(
            malware_fraction=fraction,
            policy=DetectionLabelPolicy(threshold=threshold, ambiguous_handling=ambiguous_handling),
            target_size=grid.subset_size,
            seed=_derive_seed(grid.seed, ci),
        )
        try:
            subset = compose_subset(corpus, recipe)
        except CompositionError as exc:
            return cell, None, f"cell ({fraction}, {threshold}-AV) infeasible: {exc}"
        static = static_feature_block(subset.records, hash_config)
        cell_rows, cell_flags = [], list(subset.flags)
        for model_kind in grid.model_kinds:
            pipeline = PipelineConfig(
                hash_config=hash_config,
                selection=spec,
                hyper=hyper,
                leaky_reputation=leaky_reputation,
            )
            try:
                ev = cross_validate(
                    subset,
                    model_kind,
                    k=k,
                    seed=_derive_seed(grid.seed, ci, 1),
                    config=pipeline,
                    static_block=static,
                )
            except (MetatriageError, ValueError) as exc:
                cell_flags.append(
                    f"cell ({fraction}, {threshold}-AV) {model_kind} failed: {exc}"
                )
                continue
            ref = reporting.GRID_REFERENCE.get((model_kind, fraction, threshold), {})
            ref_f1 = ref.get("f1", (None, None))
            cell_rows.append(
                {
                    "model": model_kind,
                    "malware_fraction": fraction,
                    "threshold": threshold,
                    "n_rows": len(subset),
                    "mean_train_precision": ev.mean("train", "precision"),
                    "mean_train_recall": ev.mean("train", "recall"),
                    "mean_train_f1": ev.mean("train", "f1"),
                    "mean_test_precision": ev.mean("test", "precision"),
                    "mean_test_recall": ev.mean("test", "recall"),
                    "mean_test_f1": ev.mean("test", "f1"),
                    "std_test_f1": ev.std("test", "f1"),
                    "reference_train_f1": ref_f1[0],
                    "reference_test_f1": ref_f1[1],
                }
            )
            cell_flags.extend(
                f"cell ({fraction}, {threshold}-AV) {model_kind}: {f}" for f in ev.flags
            )
        return cell, (cell_rows, cell_flags), None

    for cell, outcome, error in _map_ordered(cells, run_cell, threads):
        if error is not None:
            report.flags.append(error)
            continue
        cell_rows, cell_flags = outcome
        report.rows.extend(cell_rows)
        report.flags.extend(cell_flags)

    # Model-major ordering like the published table: model, fraction, threshold.
    order = {m: i for i, m in enumerate(grid.model_kinds)}
    report.rows.sort(
        key=lambda r: (order[r["model"]], r["malware_fraction"], r["threshold"])
    )
    for model_kind in grid.model_kinds:
        for fraction in grid.malware_fractions:
            for threshold in grid.thresholds:
                ref = reporting.GRID_REFERENCE.get((model_kind, fraction, threshold))
                if ref:
                    report.reference.append(
                        {
                            "model": model_kind,
                            "malware_fraction": fraction,
                            "threshold": threshold,
                            **{
                                metric: {"train": pair[0], "test": pair[1]}
                                for metric, pair in sorted(ref.items())
                            },
                        }
                    )
    for model_kind in grid.model_kinds:
        for threshold in grid.thresholds:
            rows = [
                r
                for r in report.rows
                if r["model"] == model_kind and r["threshold"] == threshold
            ]
            if rows:
                label = reporting.MODEL_LABELS.get(model_kind, model_kind)
                report.curves.append(
                    {
                        "name": f"{label}, {threshold}-AV",
                        "kind": "f1-vs-fraction",
                        "x": [r["malware_fraction"] for r in rows],
                        "y": [r["mean_test_f1"] for r in rows],
                    }
                )
    return report


# ---------------------------------------------------------------------------
# Experiment 4: ranked-window robustness
# ---------------------------------------------------------------------------


def robustness_windows(
    corpus: Sequence[AppRecord],
    window_width: int = 15,
    step: int = 2,
    n_windows: int = 7,
    model_kind: str = "forest",
    thresholds: Sequence[int] = (1, 2, 4),
    malware_fraction: float = 0.5,
    subset_size: int = 5000,
    k: int = 10,
    seed: int = 0,
    ranking_method: str = "mdni",
    hyper: Optional[Hyperparams] = None,
    hash_config: HashConfig = HashConfig(),
    frozen_ranking: Optional[Sequence[str]] = None,
    threads: int = 1,
) -> BenchReport:
    """F1 of sliding rank windows: how fast performance decays without the
    best features.

    Windows start at ranks 1, 1+step, ... (n_windows of them). One subset
    is composed per threshold and reused across that row's windows.
    """
    if hyper is None:
        hyper = Hyperparams(forest=ForestParams(n_trees=60))
    corpus = list(corpus)
    starts = [1 + step * i for i in range(n_windows)]
    config = {
        "window_width": window_width,
        "step": step,
        "starts": starts,
        "model_kind": model_kind,
        "thresholds": list(thresholds),
        "malware_fraction": malware_fraction,
        "subset_size": subset_size,
        "k": k,
        "seed": seed,
        "ranking_method": ranking_method,
        "hash_buckets": hash_config.n_buckets,
        "frozen_ranking": list(frozen_ranking) if frozen_ranking else None,
        "hyper": hyper.to_json(),
    }
    digest = corpus_digest(corpus)
    report = BenchReport(
        experiment="robustness-windows",
        config=config,
        columns=[
            "model", "threshold", "window_start", "window_end",
            "mean_train_f1", "mean_test_f1", "std_test_f1",
            "reference_train_f1", "reference_test_f1",
        ],
        rows=[],
        provenance=_provenance("robustness-windows", config, seed, digest),
    )
    if frozen_ranking:
        report.flags.append("frozen-ranking: fixed feature order reused across folds")

    tasks = []
    for ti, threshold in enumerate(thresholds):
        recipe = CompositionRecipe(
            malware_fraction=malware_fraction,
            policy=DetectionLabelPolicy(threshold=threshold),
            target_size=subset_size,
            seed=_derive_seed(seed, ti),
        )
        try:
            subset = compose_subset(corpus, recipe)
        except CompositionError as exc:
            report.flags.append(f"threshold {threshold}-AV infeasible: {exc}")
            continue
        report.flags.extend(f"{threshold}-AV: {f}" for f in subset.flags)
        static = static_feature_block(subset.records, hash_config)
        for start in starts:
            tasks.append((threshold, start, subset, static, ti))

    def run_window(task):
        threshold, start, subset, static, ti = task
        if frozen_ranking:
            spec = SelectionSpec(
                columns=tuple(frozen_ranking[start - 1 : start - 1 + window_width])
            )
        else:
            spec = SelectionSpec(
                method=ranking_method, window_start=start, window_width=window_width
            )
        pipeline = PipelineConfig(hash_config=hash_config, selection=spec, hyper=hyper)
        try:
            ev = cross_validate(
                subset,
                model_kind,
                k=k,
                seed=_derive_seed(seed, ti, 1),
                config=pipeline,
                static_block=static,
            )
        except (MetatriageError, ValueError) as exc:
            return task, None, f"{threshold}-AV window {start} failed: {exc}"
        return task, ev, None

    for (threshold, start, _, _, _), ev, error in _map_ordered(tasks, run_window, threads):
        if error is not None:
            report.flags.append(error)
            continue
        ref = reporting.WINDOW_REFERENCE.get((threshold, start), (None, None))
        report.rows.append(
            {
                "model": model_kind,
                "threshold": threshold,
                "window_start": start,
                "window_end": start + window_width - 1,
                "mean_train_f1": ev.mean("train", "f1"),
                "mean_test_f1": ev.mean("test", "f1"),
                "std_test_f1": ev.std("test", "f1"),
                "reference_train_f1": ref[0],
                "reference_test_f1": ref[1],
            }
        )
    report.rows.sort(key=lambda r: (r["threshold"], r["window_start"]))
    for threshold in thresholds:
        for start in starts:
            pair = reporting.WINDOW_REFERENCE.get((threshold, start))
            if pair:
                report.reference.append(
                    {
                        "threshold": threshold,
                        "window_start": start,
                        "f1": {"train": pair[0], "test": pair[1]},
                    }
                )
    for threshold in thresholds:
        rows = [r for r in report.rows if r["threshold"] == threshold]
        if rows:
            report.curves.append(
                {
                    "name": f"{threshold}-AV",
                    "kind": "f1-vs-window",
                    "x": [float(r["window_start"]) for r in rows],
                    "y": [r["mean_test_f1"] for r in rows],
                }
            )
    return report


# ---------------------------------------------------------------------------
# Rendering
# ---------------------------------------------------------------------------

_CHART_SPECS = {
    "hash-size-sweep": [
        ("roc", "roc_curves.svg", "Held-out ROC by hash size",
         "false positive rate", "true positive rate", (0.0, 1.0), False),
        ("auc-vs-size", "auc_vs_size.svg", "Pooled test AUC vs hash size",
         "hash buckets (log2)", "AUC", (0.4, 1.0), True),
    ],
    "feature-count-curve": [
        ("f1-vs-k", "f1_vs_feature_count.svg", "Mean test F1 vs top-k features",
         "top-k features", "mean test F1", (0.0, 1.0), False),
    ],
    "benchmark-grid": [
        ("f1-vs-fraction", "f1_by_cell.svg", "Mean test F1 by malware share",
         "malware fraction", "mean test F1", (0.0, 1.0), False),
    ],
    "robustness-windows": [
        ("f1-vs-window", "f1_vs_window.svg", "Mean test F1 by window start rank",
         "window start rank", "mean test F1", (0.0, 1.0), False),
    ],
}


def _report_markdown(report: BenchReport) -> str:
    lines = [f"# {report.experiment}", ""]
    lines.append("Configuration digest: `" + report.provenance.get("config_digest", "") + "`")
    lines.append("Corpus digest: `" + report.provenance.get("corpus_digest", "") + "`")
    lines.append("")
    if not report.rows:
        lines.append("_No results: every point failed or was infeasible "
                     "(see flags below)._")
        lines.append("")
    else:
        display = [c for c in report.columns]
        if report.experiment == "benchmark-grid":
            model_order = []
            for row in report.rows:
                if row["model"] not in model_order:
                    model_order.append(row["model"])
            for model in model_order:
                label = reporting.MODEL_LABELS.get(model, model)
                lines.append(f"## {label} (train/test)")
                lines.append("")
                header = ["malware", "threshold", "F1", "precision", "recall",
                          "reference F1"]
                rows = []
                for r in (x for x in report.rows if x["model"] == model):
                    ref = ""
                    if r["reference_train_f1"] is not None:
                        ref = (f"{r['reference_train_f1']:.2f}/"
                               f"{r['reference_test_f1']:.2f}")
                    rows.append([
                        f"{r['malware_fraction']:.0%}",
                        f"{r['threshold']}-AV",
                        f"{reporting.fmt4(r['mean_train_f1'])}/{reporting.fmt4(r['mean_test_f1'])}",
                        f"{reporting.fmt4(r['mean_train_precision'])}/{reporting.fmt4(r['mean_test_precision'])}",
                        f"{reporting.fmt4(r['mean_train_recall'])}/{reporting.fmt4(r['mean_test_recall'])}",
                        ref,
                    ])
                lines.append(reporting.markdown_table(header, rows))
        else:
            rows = [[reporting.fmt4(r[c]) if isinstance(r[c], float) else ("" if r[c] is None else str(r[c]))
                     for c in display] for r in report.rows]
            lines.append(reporting.markdown_table(display, rows))
        lines.append("")
    if report.reference:
        lines.append("## Published reference values")
        lines.append("")
        lines.append(
            "_Reported by the original study on its proprietary corpus; "
            "shown for orientation only, never asserted._"
        )
        lines.append("")
    if report.flags:
        lines.append("## Flags")
        lines.append("")
        for f in report.flags:
            lines.append(f"- {f}")
        lines.append("")
    return "\n".join(lines)


def emit_report(
    report: BenchReport,
    out_dir: str,
    formats: Sequence[str] = ("csv", "markdown", "svg"),
) -> list[str]:
    """Write results.csv, report.md, charts, provenance.json, report.json.

    All content is staged to temporary files first and moved into place
    together, so a failure leaves no partial outputs behind.
    """
    unknown = set(formats) - {"csv", "markdown", "svg"}
    if unknown:
        raise ValueError(f"unknown report formats: {sorted(unknown)}")
    files: dict[str, str] = {}
    if "csv" in formats:
        rows = [[r.get(c) for c in report.columns] for r in report.rows]
        files["results.csv"] = reporting.csv_text(report.columns, rows)
    if "markdown" in formats:
        files["report.md"] = _report_markdown(report)
    if "svg" in formats:
        for kind, name, title, xl, yl, y_range, log_x in _CHART_SPECS.get(
            report.experiment, []
        ):
            series = [
                (c["name"], c["x"], c["y"])
                for c in report.curves
                if c.get("kind") == kind and None not in c["y"]
            ]
            if series:
                files[name] = reporting.svg_line_chart(
                    series, title, xl, yl, y_range=y_range, log_x=log_x
                )
    files["provenance.json"] = (
        json.dumps(report.provenance, indent=2, sort_keys=True) + "\n"
    )
    files["report.json"] = json.dumps(report.to_json(), indent=2, sort_keys=True) + "\n"

    os.makedirs(out_dir, exist_ok=True)
    staged = []
    written = []
    try:
        for name, text in files.items():
            tmp = os.path.join(out_dir, name + ".tmp")
            with open(tmp, "w", encoding="utf-8") as fh:
                fh.write(text)
            staged.append((tmp, os.path.join(out_dir, name)))
        for tmp, final in staged:
            os.replace(tmp, final)
            written.append(final)
    except OSError:
        for tmp, _ in staged:
            if os.path.exists(tmp):
                os.unlink(tmp)
        raise
    return written
