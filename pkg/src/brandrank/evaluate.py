"""AUC, F1 and per-variant evaluation reports."""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy import stats

from .dataset import Batch
from .errors import ContractError, UndefinedMetricError, VocabularyError
from .models import Model, ModelConfig, variant_name

REPORT_FIELDS = ("variant", "auc", "f1", "n", "n_pos", "threshold", "config_hash")


def auc(scores: Sequence[float], labels: Sequence[int]) -> float:
    """Mann-Whitney AUC: share of (positive, negative) pairs ranked correctly, ties count 1/2.

    Uses average ranks over tied scores, so it runs in O(n log n).
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ContractError("scores and labels must be 1-d arrays of equal length")
    pos = labels == 1
    n_pos = int(pos.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("AUC needs at least one positive and one negative")
    _, inverse, counts = np.unique(scores, return_inverse=True, return_counts=True)
    upper = np.cumsum(counts)
    avg_rank = upper - (counts - 1) / 2.0
    rank_sum = float(avg_rank[inverse][pos].sum())
    return (rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def auc_bruteforce(scores: Sequence[float], labels: Sequence[int]) -> float:
    """O(n^2) pairwise count; the reference for :func:`auc`."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    sp, sn = scores[labels == 1], scores[labels != 1]
    if len(sp) == 0 or len(sn) == 0:
        raise UndefinedMetricError("AUC needs at least one positive and one negative")
    diff = sp[:, None] - sn[None, :]
    return float(((diff > 0).sum() + 0.5 * (diff == 0).sum()) / diff.size)


def f1_at_threshold(scores: Sequence[float], labels: Sequence[int],
                    threshold: float = 0.5) -> float:
    """F1 of the rule ``score >= threshold``; 0 when precision + recall is 0."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.size == 0:
        raise ContractError("F1 needs a nonempty input")
    pred = scores >= threshold
    tp = int(np.sum(pred & (labels == 1)))
    fp = int(np.sum(pred & (labels != 1)))
    fn = int(np.sum(~pred & (labels == 1)))
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


def paired_win_test(pos_scores, neg_scores) -> tuple[float, float]:
    """One-sided binomial test that positives outscore their paired negatives.

    Ties count as half a win. Returns ``(win_rate, p_value)``.
    """
    pos_scores = np.asarray(pos_scores, dtype=np.float64)
    neg_scores = np.asarray(neg_scores, dtype=np.float64)
    wins = np.sum(pos_scores > neg_scores) + 0.5 * np.sum(pos_scores == neg_scores)
    n = len(pos_scores)
    k = int(np.floor(wins))
    return float(wins / n), float(stats.binomtest(k, n, 0.5, alternative="greater").pvalue)


def config_hash(config: ModelConfig) -> str:
    text = json.dumps(config.to_dict(), sort_keys=True)
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:12]


@dataclass(frozen=True)
class EvalReport:
    variant: str
    auc: float
    f1: float
    n: int
    n_pos: int
    threshold: float
    config_hash: str

    def __post_init__(self):
        if not (0.0 <= self.auc <= 1.0 and 0.0 <= self.f1 <= 1.0):
            raise ContractError("metrics out of range")
        if not 0 <= self.n_pos <= self.n:
            raise ContractError("inconsistent counts")

    def row(self) -> list[str]:
        return [self.variant, repr(self.auc), repr(self.f1), str(self.n), str(self.n_pos),
                repr(self.threshold), self.config_hash]


def evaluate(model: Model, data: Batch, variant: str | None = None, threshold: float = 0.5,
             vocab_hash: str | None = None, expected_vocab_hash: str | None = None) -> EvalReport:
    """Score every instance and summarize AUC and F1.

    When both hashes are given they must match.
    """
    if vocab_hash is not None and expected_vocab_hash is not None \
            and vocab_hash != expected_vocab_hash:
        raise VocabularyError(f"model vocabulary {expected_vocab_hash} does not match data "
                              f"vocabulary {vocab_hash}")
    scores = model.predict(data)
    labels = data.label
    return EvalReport(variant or variant_name(model.config), auc(scores, labels),
                      f1_at_threshold(scores, labels, threshold), len(labels),
                      int(np.sum(labels == 1)), threshold, config_hash(model.config))


def write_reports(path, reports: Iterable[EvalReport]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REPORT_FIELDS)
        for r in reports:
            w.writerow(r.row())


def read_reports(path) -> list[EvalReport]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        return [EvalReport(r["variant"], float(r["auc"]), float(r["f1"]), int(r["n"]),
                           int(r["n_pos"]), float(r["threshold"]), r["config_hash"])
                for r in reader]


def format_table(reports: Sequence[EvalReport]) -> str:
    lines = [f"{'variant':<10} {'auc':>7} {'f1':>7} {'n':>7} {'n_pos':>6}"]
    for r in reports:
        lines.append(f"{r.variant:<10} {r.auc:7.4f} {r.f1:7.4f} {r.n:7d} {r.n_pos:6d}")
    return "\n".join(lines)
