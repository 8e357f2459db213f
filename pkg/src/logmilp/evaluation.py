"""Bag-level metrics and instance-level localization metrics.

Threshold selection happens on the validation split only; the test split
contributes nothing to tau. Localization metrics (Loc@k, SR) run over the
ground-truth-positive test bags using the held-back instance labels, which
exist precisely for this offline check.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .bagging import BagDataset
from .errors import NoPositiveBags, SingleClass
from .model import LogMilpModel, masked_attention_entropy
from .training import collate, score_dataset

METRICS_HEADER = "dataset,seed,auc,precision,recall,f1,loc_at_k,sr,tau,k,delta_sr"


@dataclass
class LocalizationResult:
    bag_index: int  # index within the evaluated dataset
    k_star: int  # selected attention head
    s_top: list[int]  # top-k valid positions, descending attention
    attention: list[float]  # attention weights aligned with s_top
    p_orig: float
    p_pert: float  # probability after zeroing s_top[0]

    @property
    def drop(self) -> float:
        return self.p_orig - self.p_pert


@dataclass
class MetricsReport:
    dataset: str
    seed: int
    auc: float
    precision: float
    recall: float
    f1: float
    loc_at_k: float
    sr: float
    tau: float
    k: int
    delta_sr: float

    def csv_row(self) -> str:
        return (
            f"{self.dataset},{self.seed},{self.auc:.6f},{self.precision:.6f},"
            f"{self.recall:.6f},{self.f1:.6f},{self.loc_at_k:.6f},{self.sr:.6f},"
            f"{self.tau:.6f},{self.k},{self.delta_sr:.6f}"
        )


def roc_auc(scores: np.ndarray, labels: np.ndarray) -> float:
    """Rank-based (Mann-Whitney) AUC; tied scores contribute 1/2 per pair."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    n_pos = int((labels == 1).sum())
    n_neg = int((labels == 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise SingleClass("AUC needs both classes")
    order = np.argsort(scores, kind="stable")
    ranks = np.empty(len(scores), dtype=np.float64)
    sorted_scores = scores[order]
    i = 0
    while i < len(scores):
        j = i
        while j + 1 < len(scores) and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0  # average 1-based rank
        i = j + 1
    rank_sum_pos = float(ranks[labels == 1].sum())
    return (rank_sum_pos - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def select_threshold(scores: np.ndarray, labels: np.ndarray) -> float:
    """Candidate thresholds are midpoints between consecutive distinct scores
    plus both extremes; return the F1-maximizing candidate (ties: smallest)."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if (labels == 1).sum() == 0 or (labels == 0).sum() == 0:
        raise SingleClass("threshold selection needs both classes")
    distinct = np.unique(scores)
    candidates = [float(distinct[0])]
    for a, b in zip(distinct[:-1], distinct[1:]):
        candidates.append(float((a + b) / 2.0))
    if len(distinct) > 1:
        candidates.append(float(distinct[-1]))
    best_tau = candidates[0]
    best_f1 = -1.0
    for tau in candidates:
        _, _, f1 = prf_at_threshold(scores, labels, tau)
        if f1 > best_f1:
            best_f1 = f1
            best_tau = tau
    return best_tau


def prf_at_threshold(
    scores: np.ndarray, labels: np.ndarray, tau: float
) -> tuple[float, float, float]:
    """P/R/F1 for the rule `score > tau`; empty denominators give 0."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    pred = scores > tau
    tp = int(np.sum(pred & (labels == 1)))
    fp = int(np.sum(pred & (labels == 0)))
    fn = int(np.sum(~pred & (labels == 1)))
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f1


def top_attention_indices(
    A: torch.Tensor, mask: torch.Tensor, k: int, eps: float = 1e-8
) -> tuple[int, list[int]]:
    """(k*, S_top) for one bag: minimum-entropy head, then its top-k valid
    positions by attention, descending, lowest index first on ties."""
    ent = masked_attention_entropy(A.unsqueeze(0), mask.unsqueeze(0), eps)[0]
    k_star = int(torch.argmin(ent))
    att = A[k_star].detach().numpy().astype(np.float64)
    valid = np.flatnonzero(mask.numpy())
    order = valid[np.lexsort((valid, -att[valid]))]
    return k_star, [int(i) for i in order[: min(k, len(valid))]]


def localize(
    model: LogMilpModel, dataset: BagDataset, k: int, eps: float = 1e-8
) -> list[LocalizationResult]:
    """Localization entries for every ground-truth-positive bag: pick the key
    head and top-k instances, then re-score with the top instance zeroed."""
    pos_indices = [i for i, bag in enumerate(dataset.bags) if bag.bag_label == 1]
    results: list[LocalizationResult] = []
    if not pos_indices:
        return results
    bags = [dataset.bags[i] for i in pos_indices]
    X, mask, _ = collate(bags)
    with torch.no_grad():
        out = model(X, mask)
        tops = [
            top_attention_indices(out.A[b], mask[b], k, eps) for b in range(len(bags))
        ]
        X_pert = X.clone()
        for b, (_, s_top) in enumerate(tops):
            X_pert[b, s_top[0]] = 0.0
        out_pert = model(X_pert, mask)
    for b, (k_star, s_top) in enumerate(tops):
        att = out.A[b, k_star]
        results.append(
            LocalizationResult(
                bag_index=pos_indices[b],
                k_star=k_star,
                s_top=s_top,
                attention=[float(att[i]) for i in s_top],
                p_orig=float(out.P[b]),
                p_pert=float(out_pert.P[b]),
            )
        )
    return results


def loc_at_k(
    results: list[LocalizationResult], truth_sets: list[set[int]], k: int
) -> float:
    """Sum of top-k hits over the sum of min(k, |S_a|); bags with an empty
    ground-truth set are excluded from both sums."""
    hits = 0
    denom = 0
    counted = 0
    for res, s_a in zip(results, truth_sets):
        if not s_a:
            continue
        counted += 1
        hits += len(set(res.s_top) & s_a)
        denom += min(k, len(s_a))
    if counted == 0:
        raise NoPositiveBags("no positive bags with ground-truth instances")
    return hits / denom


def success_rate(p_orig: np.ndarray, p_pert: np.ndarray, delta_sr: float = 0.1) -> float:
    """Fraction of positive bags whose probability drops strictly more than
    delta_sr when the key instance is zeroed."""
    p_orig = np.asarray(p_orig, dtype=np.float64)
    p_pert = np.asarray(p_pert, dtype=np.float64)
    if p_orig.size == 0:
        raise NoPositiveBags("success rate over an empty positive set")
    return float(np.mean((p_orig - p_pert) > delta_sr))


def truth_set(bag) -> set[int]:
    """Valid positions whose hidden instance label marks an anomaly."""
    return {
        int(i)
        for i in np.flatnonzero((bag.instance_labels == 1) & (bag.mask == 1))
    }


def evaluate(
    model: LogMilpModel,
    val_set: BagDataset,
    test_set: BagDataset,
    k: int = 3,
    delta_sr: float = 0.1,
    dataset_id: str = "synthetic",
    seed: int = 0,
) -> tuple[MetricsReport, list[LocalizationResult]]:
    """Full protocol: tau from validation, bag metrics on test, localization
    metrics on ground-truth-positive test bags."""
    val_scores = score_dataset(model, val_set)
    tau = select_threshold(val_scores, val_set.labels())
    test_scores = score_dataset(model, test_set)
    test_labels = test_set.labels()
    auc = roc_auc(test_scores, test_labels)
    precision, recall, f1 = prf_at_threshold(test_scores, test_labels, tau)
    results = localize(model, test_set, k)
    truth = [truth_set(test_set.bags[r.bag_index]) for r in results]
    loc = loc_at_k(results, truth, k)
    sr = success_rate(
        np.asarray([r.p_orig for r in results]),
        np.asarray([r.p_pert for r in results]),
        delta_sr,
    )
    report = MetricsReport(
        dataset=dataset_id,
        seed=seed,
        auc=auc,
        precision=precision,
        recall=recall,
        f1=f1,
        loc_at_k=loc,
        sr=sr,
        tau=tau,
        k=k,
        delta_sr=delta_sr,
    )
    return report, results


def write_metrics_row(path: str | Path, report: MetricsReport) -> None:
    """Append one CSV row, writing the header first on a fresh file."""
    path = Path(path)
    fresh = not path.exists() or path.stat().st_size == 0
    with path.open("a", encoding="ascii") as fh:
        if fresh:
            fh.write(METRICS_HEADER + "\n")
        fh.write(report.csv_row() + "\n")


def read_metrics_rows(path: str | Path) -> list[dict[str, str]]:
    with Path(path).open("r", encoding="ascii") as fh:
        return list(csv.DictReader(fh))
