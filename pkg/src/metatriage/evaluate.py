"""Metrics, ROC/AUC, and leakage-safe stratified cross-validation.

Everything label-dependent (reputation tables, feature ranking, binning,
standardization, the operating threshold) is fitted inside each training
fold; the held-out chunk only ever gets transformed and scored.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .corpus import LabeledDataset
from .errors import ContractError, DegenerateLabelsError
from .featurize import (
    HashConfig,
    assemble_features,
    build_reputation_table,
    static_feature_block,
    standardize_fit_apply,
)
from .learn import ForestParams, Hyperparams, predict_score, train_model
from .select import rank_features

# ---------------------------------------------------------------------------
# Point metrics
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


@dataclass(frozen=True)
class Metrics:
    confusion: ConfusionMatrix
    precision: float
    recall: float
    f1: float
    flags: tuple[str, ...] = ()


def classification_metrics(labels: np.ndarray, predicted: np.ndarray) -> Metrics:
    """Precision/recall/F1 from binary labels and binary predictions.

    Zero denominators yield metric 0 and a degeneracy flag rather than an
    error, so aggregate reports stay total.
    """
    labels = np.asarray(labels).astype(np.int64)
    predicted = np.asarray(predicted).astype(np.int64)
    if labels.shape != predicted.shape:
        raise ContractError(
            f"labels/predictions length mismatch: {labels.shape} vs {predicted.shape}"
        )
    tp = int(((labels == 1) & (predicted == 1)).sum())
    fp = int(((labels == 0) & (predicted == 1)).sum())
    tn = int(((labels == 0) & (predicted == 0)).sum())
    fn = int(((labels == 1) & (predicted == 0)).sum())
    flags = []
    if tp + fp > 0:
        precision = tp / (tp + fp)
    else:
        precision, flags = 0.0, flags + ["precision:no-positive-predictions"]
    if tp + fn > 0:
        recall = tp / (tp + fn)
    else:
        recall, flags = 0.0, flags + ["recall:no-positive-labels"]
    if precision + recall > 0:
        f1 = 2.0 * precision * recall / (precision + recall)
    else:
        f1, flags = 0.0, flags + ["f1:zero-precision-and-recall"]
    return Metrics(ConfusionMatrix(tp, fp, tn, fn), precision, recall, f1, tuple(flags))


# ---------------------------------------------------------------------------
# ROC / AUC
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RocCurve:
    points: np.ndarray  # (k, 2) array of (fpr, tpr), from (0,0) to (1,1)
    auc: float


def roc_and_auc(scores: np.ndarray, labels: np.ndarray) -> RocCurve:
    """Threshold sweep with tied scores grouped into single steps.

    The trapezoid area is accumulated in integer arithmetic, so the AUC
    equals the pairwise statistic P(s_pos > s_neg) + 0.5 P(tie) exactly.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(np.int64)
    if scores.shape != labels.shape:
        raise ContractError(
            f"scores/labels length mismatch: {scores.shape} vs {labels.shape}"
        )
    n_pos = int(labels.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DegenerateLabelsError(
            f"AUC undefined: {n_pos} positive and {n_neg} negative labels"
        )
    order = np.argsort(-scores, kind="stable")
    s = scores[order]
    y = labels[order]
    boundaries = np.flatnonzero(s[1:] < s[:-1]) + 1
    group_ends = np.concatenate([boundaries, [len(s)]])
    tp = np.concatenate([[0], np.cumsum(y)[group_ends - 1]])
    fp = np.concatenate([[0], group_ends - np.cumsum(y)[group_ends - 1]])

    area2 = int(np.sum((fp[1:] - fp[:-1]) * (tp[1:] + tp[:-1])))
    auc = area2 / (2 * n_pos * n_neg)
    points = np.column_stack([fp / n_neg, tp / n_pos])
    return RocCurve(points=points, auc=float(auc))


def threshold_max_f1(scores: np.ndarray, labels: np.ndarray) -> float:
    """Operating threshold maximizing F1 of (score >= threshold).

    Only boundaries between distinct score values are candidates (ties
    cannot be split); among equal-F1 candidates the highest threshold
    wins.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(np.int64)
    order = np.argsort(-scores, kind="stable")
    s = scores[order]
    y = labels[order]
    n = len(s)
    n_pos = int(y.sum())
    if n_pos == 0:
        return math.inf
    cut_sizes = np.concatenate([np.flatnonzero(s[1:] < s[:-1]) + 1, [n]])
    tp = np.cumsum(y)[cut_sizes - 1]
    f1 = 2.0 * tp / (cut_sizes + n_pos)
    best = int(np.argmax(f1))  # first max = fewest predictions = highest threshold
    return float(s[cut_sizes[best] - 1])


# ---------------------------------------------------------------------------
# Folds
# ---------------------------------------------------------------------------


def stratified_folds(labels: np.ndarray, k: int, seed: int) -> list[np.ndarray]:
    """Partition rows into k label-stratified test chunks.

    Positive remainders go to the first folds and negative remainders to
    the last ones, so when n is divisible by k every chunk has exactly n/k
    rows.
    """
    labels = np.asarray(labels).astype(np.int64)
    n = len(labels)
    if k < 2:
        raise ValueError("k must be at least 2")
    if k > n:
        raise ValueError(f"k={k} exceeds {n} rows")
    rng = np.random.default_rng(np.random.SeedSequence([seed & 0xFFFFFFFFFFFFFFFF, 0xF01D]))
    pos = rng.permutation(np.flatnonzero(labels == 1))
    neg = rng.permutation(np.flatnonzero(labels == 0))

    folds: list[list[np.ndarray]] = [[] for _ in range(k)]
    q, r = divmod(len(pos), k)
    start = 0
    for i in range(k):
        size = q + (1 if i < r else 0)
        folds[i].append(pos[start : start + size])
        start += size
    q, r = divmod(len(neg), k)
    start = 0
    for i in range(k):
        size = q + (1 if k - 1 - i < r else 0)
        folds[i].append(neg[start : start + size])
        start += size
    return [np.sort(np.concatenate(parts)) for parts in folds]


# ---------------------------------------------------------------------------
# Pipeline configuration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SelectionSpec:
    """What feature subset each training fold should use.

    Either an explicit frozen `columns` tuple, or a ranking `method` plus
    `top_k` or a 1-based (`window_start`, `window_width`) pair.
    """

    method: Optional[str] = None
    top_k: Optional[int] = None
    window_start: Optional[int] = None
    window_width: Optional[int] = None
    columns: Optional[tuple[str, ...]] = None
    n_bins: int = 10

    def __post_init__(self):
        if self.columns is not None:
            if self.method is not None:
                raise ValueError("frozen columns and a ranking method are exclusive")
            return
        if self.method is None:
            raise ValueError("selection needs a method or frozen columns")
        has_k = self.top_k is not None
        has_window = self.window_start is not None and self.window_width is not None
        if has_k == has_window:
            raise ValueError("selection needs exactly one of top_k or a window")


@dataclass(frozen=True)
class RankingParams:
    """Desk-scale defaults for the per-fold mdni ranking forest."""

    n_trees: int = 20
    max_depth: int = 8
    min_leaf: int = 20
    subsample: int = 1500


@dataclass(frozen=True)
class PipelineConfig:
    hash_config: HashConfig = field(default_factory=HashConfig)
    reputation_alpha: float = 1.0
    standardize_linear: bool = True
    selection: Optional[SelectionSpec] = None
    hyper: Hyperparams = field(default_factory=Hyperparams)
    ranking: RankingParams = field(default_factory=RankingParams)
    leaky_reputation: bool = False
    capture_fold_tables: bool = False


@dataclass
class FoldResult:
    fold: int
    threshold: float
    train: Metrics
    test: Metrics
    train_auc: Optional[float]
    test_auc: Optional[float]
    selected_columns: Optional[tuple[str, ...]]
    flags: tuple[str, ...] = ()

    @property
    def degenerate(self) -> bool:
        return any(f.startswith("degenerate") for f in self.flags)


@dataclass
class EvalReport:
    model_kind: str
    k: int
    seed: int
    folds: list[FoldResult]
    flags: list[str] = field(default_factory=list)
    pooled_scores: Optional[np.ndarray] = None
    pooled_labels: Optional[np.ndarray] = None
    fold_tables: list = field(default_factory=list)

    def _included(self) -> list[FoldResult]:
        return [f for f in self.folds if not f.degenerate]

    def mean(self, which: str, metric: str) -> float:
        vals = self._values(which, metric)
        return float(np.mean(vals)) if vals else math.nan

    def std(self, which: str, metric: str) -> float:
        vals = self._values(which, metric)
        return float(np.std(vals)) if vals else math.nan

    def _values(self, which: str, metric: str) -> list[float]:
        if which not in ("train", "test"):
            raise ValueError("which must be 'train' or 'test'")
        out = []
        for f in self._included():
            if metric == "auc":
                v = f.train_auc if which == "train" else f.test_auc
                if v is not None:
                    out.append(v)
            else:
                out.append(getattr(getattr(f, which), metric))
        return out

    def to_json(self) -> dict:
        return {
            "model_kind": self.model_kind,
            "k": self.k,
            "seed": self.seed,
            "flags": list(self.flags),
            "means": {
                which: {
                    m: self.mean(which, m) for m in ("precision", "recall", "f1", "auc")
                }
                for which in ("train", "test")
            },
            "stds": {
                which: {
                    m: self.std(which, m) for m in ("precision", "recall", "f1", "auc")
                }
                for which in ("train", "test")
            },
            "folds": [
                {
                    "fold": f.fold,
                    "threshold": f.threshold,
                    "train": {
                        "precision": f.train.precision,
                        "recall": f.train.recall,
                        "f1": f.train.f1,
                        "auc": f.train_auc,
                        "confusion": dataclasses.asdict(f.train.confusion),
                    },
                    "test": {
                        "precision": f.test.precision,
                        "recall": f.test.recall,
                        "f1": f.test.f1,
                        "auc": f.test_auc,
                        "confusion": dataclasses.asdict(f.test.confusion),
                    },
                    "flags": list(f.flags),
                }
                for f in self.folds
            ],
        }

    def to_csv_text(self) -> str:
        lines = [
            "fold,threshold,train_precision,train_recall,train_f1,train_auc,"
            "test_precision,test_recall,test_f1,test_auc,flags"
        ]
        for f in self.folds:
            lines.append(
                ",".join(
                    [
                        str(f.fold),
                        repr(f.threshold),
                        repr(f.train.precision),
                        repr(f.train.recall),
                        repr(f.train.f1),
                        "" if f.train_auc is None else repr(f.train_auc),
                        repr(f.test.precision),
                        repr(f.test.recall),
                        repr(f.test.f1),
                        "" if f.test_auc is None else repr(f.test_auc),
                        ";".join(f.flags),
                    ]
                )
            )
        return "\n".join(lines) + "\n"


def _derived_seeds(seed: int, fold: int) -> tuple[int, int, int]:
    state = np.random.SeedSequence(
        [seed & 0xFFFFFFFFFFFFFFFF, 0xC5, fold]
    ).generate_state(3)
    return int(state[0]), int(state[1]), int(state[2])


def _fold_hyper(hyper: Hyperparams, svm_seed: int, forest_seed: int) -> Hyperparams:
    return Hyperparams(
        logistic=hyper.logistic,
        svm=dataclasses.replace(hyper.svm, seed=svm_seed),
        forest=dataclasses.replace(hyper.forest, seed=forest_seed),
    )


def cross_validate(
    dataset: LabeledDataset,
    model_kind: str,
    k: int = 10,
    seed: int = 0,
    config: PipelineConfig = PipelineConfig(),
    static_block: Optional[np.ndarray] = None,
) -> EvalReport:
    """Stratified k-fold evaluation of one model kind on raw records.

    Reputation tables, ranking, standardization, and the operating
    threshold are refitted per fold on training rows only. Folds that end
    up single-class are flagged degenerate and excluded from the means.
    Pass a precomputed `static_block` for the dataset's records to avoid
    re-hashing when several calls share one dataset.
    """
    labels = np.asarray(dataset.labels).astype(np.int64)
    n = len(dataset.records)
    if n != len(labels):
        raise ContractError("dataset records/labels mismatch")
    if labels.sum() == 0 or labels.sum() == n:
        raise DegenerateLabelsError("cross-validation needs both classes present")

    if static_block is None:
        static_block = static_feature_block(dataset.records, config.hash_config)
    folds = stratified_folds(labels, k, seed)

    report = EvalReport(model_kind=model_kind, k=k, seed=seed, folds=[])
    report.flags.extend(dataset.flags)
    if config.leaky_reputation:
        report.flags.append("leaky-reputation: tables fitted on the full dataset")
    if config.selection is not None and config.selection.columns is not None:
        report.flags.append("frozen-ranking: externally fixed feature set")

    pooled = np.full(n, np.nan)
    all_idx = np.arange(n)
    for fold_id, test_idx in enumerate(folds):
        test_mask = np.zeros(n, dtype=bool)
        test_mask[test_idx] = True
        train_idx = all_idx[~test_mask]
        flags: list[str] = []

        y_train, y_test = labels[train_idx], labels[test_idx]
        if len(np.unique(y_train)) < 2:
            flags.append("degenerate: single-class training chunk")
        if len(np.unique(y_test)) < 2:
            flags.append("degenerate: single-class test chunk")
        if flags:
            empty = Metrics(ConfusionMatrix(0, 0, 0, 0), 0.0, 0.0, 0.0, ("degenerate",))
            report.folds.append(
                FoldResult(fold_id, math.nan, empty, empty, None, None, None, tuple(flags))
            )
            report.flags.append(f"fold {fold_id} excluded: {'; '.join(flags)}")
            continue

        rep_rows = all_idx if config.leaky_reputation else train_idx
        table = build_reputation_table(
            [dataset.records[i] for i in rep_rows],
            labels[rep_rows],
            alpha=config.reputation_alpha,
        )
        if config.capture_fold_tables:
            report.fold_tables.append(
                {"fold": fold_id, "table": table, "train_idx": train_idx, "test_idx": test_idx}
            )

        train_records = [dataset.records[i] for i in train_idx]
        test_records = [dataset.records[i] for i in test_idx]
        X_train = assemble_features(
            train_records, config.hash_config, table, static_block[train_idx]
        )
        X_test = assemble_features(
            test_records, config.hash_config, table, static_block[test_idx]
        )

        rank_seed, svm_seed, forest_seed = _derived_seeds(seed, fold_id)
        selected: Optional[tuple[str, ...]] = None
        sel = config.selection
        if sel is not None:
            if sel.columns is not None:
                selected = sel.columns
            else:
                rank_rows = np.arange(len(train_idx))
                if len(rank_rows) > config.ranking.subsample:
                    rng = np.random.default_rng(
                        np.random.SeedSequence([rank_seed, 0x7A5C])
                    )
                    rank_rows = rng.choice(
                        len(train_idx), config.ranking.subsample, replace=False
                    )
                ranked = rank_features(
                    X_train.select_rows(rank_rows),
                    y_train[rank_rows],
                    ranking_method=sel.method,
                    n_bins=sel.n_bins,
                    forest_params=ForestParams(
                        n_trees=config.ranking.n_trees,
                        max_depth=config.ranking.max_depth,
                        min_leaf=config.ranking.min_leaf,
                        seed=rank_seed,
                    ),
                )
                if sel.top_k is not None:
                    selected = ranked.top(sel.top_k)
                else:
                    selected = ranked.window(sel.window_start, sel.window_width)
        if selected is not None:
            X_train = X_train.select_columns(selected)
            X_test = X_test.select_columns(selected)

        if config.standardize_linear and model_kind in ("logistic", "linear_svm"):
            train_vals, test_vals = standardize_fit_apply(X_train.values, X_test.values)
            X_train = type(X_train)(X_train.column_names, train_vals)
            X_test = type(X_test)(X_test.column_names, test_vals)

        hyper = _fold_hyper(config.hyper, svm_seed, forest_seed)
        model = train_model(model_kind, X_train, y_train, hyper)
        train_scores = predict_score(model, X_train)
        test_scores = predict_score(model, X_test)
        pooled[test_idx] = test_scores

        threshold = threshold_max_f1(train_scores, y_train)
        train_metrics = classification_metrics(y_train, train_scores >= threshold)
        test_metrics = classification_metrics(y_test, test_scores >= threshold)
        train_auc = roc_and_auc(train_scores, y_train).auc
        test_auc = roc_and_auc(test_scores, y_test).auc
        flags.extend(f"train-{x}" for x in train_metrics.flags)
        flags.extend(f"test-{x}" for x in test_metrics.flags)

        report.folds.append(
            FoldResult(
                fold=fold_id,
                threshold=threshold,
                train=train_metrics,
                test=test_metrics,
                train_auc=train_auc,
                test_auc=test_auc,
                selected_columns=selected,
                flags=tuple(flags),
            )
        )

    if not np.isnan(pooled).any():
        report.pooled_scores = pooled
        report.pooled_labels = labels
    return report
