"""Ranking metric, relative improvement and node-count/CTR analysis."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.stats import rankdata, spearmanr

from .errors import ContractError, MetricError


def auc(scores, labels) -> float:
    """Area under the ROC curve via the Mann-Whitney rank statistic.

    Equals the probability that a random positive outscores a random
    negative, ties counting one half.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape:
        raise MetricError("scores and labels differ in length")
    pos = labels == 1
    n_pos = int(pos.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise MetricError("AUC needs both positive and negative labels")
    ranks = rankdata(scores, method="average")
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def relative_improvement(model_auc: float, base_auc: float) -> float:
    """``|model - base| / base * 100`` (a percentage)."""
    if base_auc <= 0:
        raise ContractError("base AUC must be positive")
    return abs(model_auc - base_auc) / base_auc * 100.0


def format_ri(value: float) -> str:
    return f"{value:.2f}%"


@dataclass(frozen=True)
class Bucket:
    node_count: int
    ctr: float
    support: int


def ctr_by_node_count(labels: Sequence[int], node_counts: Sequence[int]) -> list[Bucket]:
    """Mean label per distinct subgraph node count, ascending."""
    labels = np.asarray(labels, dtype=np.float64)
    counts = np.asarray(node_counts, dtype=np.int64)
    if len(labels) != len(counts):
        raise ContractError("labels and node counts differ in length")
    out = []
    for c in np.unique(counts):
        sel = counts == c
        out.append(Bucket(int(c), float(labels[sel].mean()), int(sel.sum())))
    return out


def bucket_spearman(buckets: Sequence[Bucket], min_support: int = 1) -> float:
    """Spearman correlation between bucket node count and CTR."""
    kept = [b for b in buckets if b.support >= min_support]
    if len(kept) < 2:
        return float("nan")
    rho = spearmanr([b.node_count for b in kept], [b.ctr for b in kept]).statistic
    return float(rho)
