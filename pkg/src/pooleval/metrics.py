"""Confusion counts, F-beta, rank-cutoff PR curves, PR-AUC and curve comparison.

Counting rule: precision is chunk-level (a returned chunk is a hit when it
covers at least one pseudo-GT fact), recall is fact-level (share of the
query's facts covered by the returned prefix). Queries without facts are
left out of macro recall but still count toward macro precision.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .corpus import Chunk
from .index import RankedList
from .pseudogt import CoverageIndex, PseudoGT

GRID_POINTS = 100
_TIE_EPS = 1e-12


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    fn_: int
    tn: int | None = None

    def __post_init__(self):
        if min(self.tp, self.fp, self.fn_) < 0 or (self.tn is not None and self.tn < 0):
            raise ValueError(f"negative confusion count: {self}")


@dataclass(frozen=True)
class AtK:
    """Counts and rates for one ranked list cut at ``k``.

    ``counts.tp/fp`` are chunk-level; ``facts_covered`` and ``counts.fn_``
    are fact-level and feed recall. ``recall_defined`` is False when the
    ground truth has no facts.
    """

    counts: ConfusionCounts
    facts_covered: int
    n_facts: int
    precision: float
    recall: float

    @property
    def recall_defined(self) -> bool:
        return self.n_facts > 0


@dataclass(frozen=True)
class PRPoint:
    cutoff_k: int
    precision: float
    recall: float


@dataclass
class PRCurve:
    retriever_id: str
    points: list[PRPoint]
    pr_auc: float = 0.0

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["cutoff_k", "precision", "recall"])
            for p in self.points:
                w.writerow([p.cutoff_k, repr(p.precision), repr(p.recall)])

    @classmethod
    def from_csv(cls, path, retriever_id: str) -> "PRCurve":
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        points = [PRPoint(int(r["cutoff_k"]), float(r["precision"]), float(r["recall"])) for r in rows]
        curve = cls(retriever_id, points)
        curve.pr_auc = pr_auc(curve)
        return curve


def _prefix_stats(ranked: RankedList, gt: PseudoGT, coverage: CoverageIndex, k_max: int):
    """Per-prefix (tp, fp, facts_covered) for k = 1..k_max; saturates past the list end."""
    seen: set[str] = set()
    tp = fp = 0
    out = []
    entries = ranked.entries
    for k in range(1, k_max + 1):
        if k <= len(entries):
            hit = coverage.covered(entries[k - 1].chunk_id, gt.facts)
            if hit:
                tp += 1
                seen |= hit
            else:
                fp += 1
        out.append((tp, fp, len(seen)))
    return out


def _at(tp: int, fp: int, covered: int, n_facts: int) -> AtK:
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = covered / n_facts if n_facts else 0.0
    return AtK(ConfusionCounts(tp, fp, n_facts - covered), covered, n_facts, precision, recall)


def confusion_at_k(ranked: RankedList, gt: PseudoGT, k: int, chunks: Mapping[str, Chunk] | CoverageIndex) -> AtK:
    if k < 1:
        raise ValueError("k must be >= 1")
    coverage = chunks if isinstance(chunks, CoverageIndex) else CoverageIndex(chunks)
    tp, fp, covered = _prefix_stats(ranked, gt, coverage, k)[-1]
    return _at(tp, fp, covered, len(gt.facts))


def f_beta(precision: float, recall: float, beta: float) -> float:
    if beta <= 0:
        raise ValueError("beta must be positive")
    b2 = beta * beta
    denom = b2 * precision + recall
    if denom == 0:
        return 0.0
    return (1 + b2) * precision * recall / denom


def pr_curve(results: Mapping[str, RankedList], gts: Mapping[str, PseudoGT], k_max: int,
             chunks: Mapping[str, Chunk] | CoverageIndex, retriever_id: str | None = None) -> PRCurve:
    """Macro-averaged precision/recall at every rank cutoff 1..k_max."""
    if k_max < 1:
        raise ValueError("k_max must be >= 1")
    coverage = chunks if isinstance(chunks, CoverageIndex) else CoverageIndex(chunks)
    qids = sorted(results)
    missing = [q for q in qids if q not in gts]
    if missing:
        raise KeyError(f"no pseudo GT for queries {missing[:5]}")
    if retriever_id is None:
        retriever_id = results[qids[0]].retriever_id if qids else ""

    prec = np.zeros((len(qids), k_max))
    rec = np.zeros((len(qids), k_max))
    eligible = np.zeros(len(qids), dtype=bool)
    for i, qid in enumerate(qids):
        gt = gts[qid]
        n_facts = len(gt.facts)
        eligible[i] = n_facts > 0
        for j, (tp, fp, cov) in enumerate(_prefix_stats(results[qid], gt, coverage, k_max)):
            at = _at(tp, fp, cov, n_facts)
            prec[i, j], rec[i, j] = at.precision, at.recall

    macro_p = prec.mean(axis=0) if qids else np.zeros(k_max)
    macro_r = rec[eligible].mean(axis=0) if eligible.any() else np.zeros(k_max)
    points = [PRPoint(k + 1, float(macro_p[k]), float(macro_r[k])) for k in range(k_max)]
    curve = PRCurve(retriever_id, points)
    curve.pr_auc = pr_auc(curve)
    return curve


def _steps(points: Sequence[PRPoint]) -> tuple[np.ndarray, np.ndarray]:
    """Recall-sorted unique recalls with the max precision at each."""
    best: dict[float, float] = {}
    for p in points:
        best[p.recall] = max(best.get(p.recall, p.precision), p.precision)
    recalls = np.array(sorted(best))
    return recalls, np.array([best[r] for r in recalls])


def pr_auc(curve: PRCurve | Sequence[PRPoint]) -> float:
    """Step-sum area: sum_i (R_i - R_{i-1}) * P_i with R_0 = 0, no interpolation."""
    points = curve.points if isinstance(curve, PRCurve) else curve
    if not points:
        raise ValueError("empty curve")
    recalls, precisions = _steps(points)
    widths = np.diff(np.concatenate([[0.0], recalls]))
    return float(np.sum(widths * precisions))


def precision_at_recall(curve: PRCurve, grid: np.ndarray) -> np.ndarray:
    """Step-function lookup matching ``pr_auc``: P at r is P_i for the first R_i >= r."""
    recalls, precisions = _steps(curve.points)
    idx = np.searchsorted(recalls, grid, side="left")
    out = np.zeros(len(grid))
    inside = idx < len(recalls)
    out[inside] = precisions[idx[inside]]
    return out


@dataclass
class ComparisonReport:
    curves: dict[str, PRCurve]
    ranking: list[tuple[str, float]]
    dominance: dict[str, dict[str, float]]
    winners: list[str]
    cost: dict = field(default_factory=dict)

    def to_record(self) -> dict:
        return {
            "pr_auc": [[rid, auc] for rid, auc in self.ranking],
            "winners": self.winners,
            "dominance": self.dominance,
            "cost": self.cost,
        }


def dominance(a: PRCurve, b: PRCurve, grid: np.ndarray) -> float:
    pa, pb = precision_at_recall(a, grid), precision_at_recall(b, grid)
    return float(np.mean(pa >= pb - _TIE_EPS))


def recall_grid(curves: Sequence[PRCurve], n: int = GRID_POINTS) -> np.ndarray:
    top = min(max(p.recall for p in c.points) for c in curves)
    return np.linspace(0.0, top, n)


def compare(curves: Sequence[PRCurve], cost: dict | None = None) -> ComparisonReport:
    if len(curves) < 2:
        raise ValueError("compare needs >= 2 curves")
    by_id = {c.retriever_id: c for c in curves}
    if len(by_id) != len(curves):
        raise ValueError("duplicate retriever ids")
    ranking = sorted(((c.retriever_id, c.pr_auc) for c in curves), key=lambda t: (-t[1], t[0]))
    grid = recall_grid(curves)
    dom = {a: {b: (1.0 if a == b else dominance(by_id[a], by_id[b], grid)) for b in sorted(by_id)}
           for a in sorted(by_id)}
    top = ranking[0][1]
    winners = [rid for rid, auc in ranking if top - auc <= _TIE_EPS]
    return ComparisonReport(by_id, ranking, dom, winners, dict(cost or {}))
