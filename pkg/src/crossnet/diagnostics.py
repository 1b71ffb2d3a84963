"""Fit assessment and occupancy checks."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import comb
from scipy.stats import rankdata

from .data import Dataset
from .model import Hyperparameters, edge_probabilities, shrinkage_weights

INCREASE_H = "INCREASE_H"
INCREASE_R = "INCREASE_R"


def auc(a, scores) -> float | None:
    """Probability that a random edge outscores a random non-edge, ties counting half.

    Computed from average ranks (Mann-Whitney). Returns ``None`` when the
    network has no edges or no non-edges.
    """
    a = np.asarray(getattr(a, "bits", a)).astype(bool)
    scores = np.asarray(scores, dtype=np.float64)
    if a.shape != scores.shape:
        raise ValueError("edge vector and scores differ in length")
    n_pos = int(a.sum())
    n_neg = a.size - n_pos
    if n_pos == 0 or n_neg == 0:
        return None
    ranks = rankdata(scores)
    u = ranks[a].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def roc_points(a, scores) -> np.ndarray:
    """(fpr, tpr) pairs over all distinct thresholds, starting at (0, 0)."""
    a = np.asarray(getattr(a, "bits", a)).astype(bool)
    scores = np.asarray(scores, dtype=np.float64)
    thresholds = np.unique(scores)[::-1]
    n_pos, n_neg = max(a.sum(), 1), max((~a).sum(), 1)
    pts = [(0.0, 0.0)]
    for t in thresholds:
        pred = scores >= t
        pts.append(((pred & ~a).sum() / n_neg, (pred & a).sum() / n_pos))
    return np.array(pts)


def choice_fit_distance(counts, p_hat) -> float:
    """Mean absolute gap between observed product frequencies and p_hat."""
    counts = np.asarray(counts, dtype=np.float64)
    total = counts.sum()
    if total <= 0:
        raise ValueError("agency has no mono-product customers")
    return float(np.abs(counts / total - np.asarray(p_hat)).sum() / counts.size)


def occupancy_check(records, hp: Hyperparameters, lam_threshold: float = 0.05) -> list[str]:
    """Warn when H or R look too small.

    INCREASE_H: the posterior median number of occupied components equals H.
    INCREASE_R: for every component occupied in at least half of the sweeps
    (all components if none is), the posterior median of lambda_R exceeds
    ``lam_threshold``.
    """
    if not records:
        return []
    H = hp.H
    occupied = np.array([np.bincount(r.G, minlength=H) > 0 for r in records])
    out = []
    if np.median(occupied.sum(axis=1)) >= H:
        out.append(INCREASE_H)
    if records[0].theta.shape[1] > 0:
        lam_R = np.array([shrinkage_weights(r.theta)[:, -1] for r in records])
        usual = occupied.mean(axis=0) >= 0.5
        if not usual.any():
            usual = np.ones(H, dtype=bool)
        if np.all(np.median(lam_R[:, usual], axis=0) > lam_threshold):
            out.append(INCREASE_R)
    return out


def agency_edge_probs(records, data: Dataset, agency_id: str) -> np.ndarray:
    """Posterior mean of the edge probabilities of the component an agency is allocated to."""
    i = data.index_of(agency_id)
    if not records:
        raise ValueError("empty trace")
    acc = np.zeros(data.n_pairs)
    for r in records:
        acc += edge_probabilities(r.Z, r.Xbar[r.G[i]])
    return acc / len(records)


def adjusted_rand_index(a, b) -> float:
    """Adjusted Rand index between two labelings of the same items."""
    a = np.unique(np.asarray(a), return_inverse=True)[1]
    b = np.unique(np.asarray(b), return_inverse=True)[1]
    table = np.zeros((a.max() + 1, b.max() + 1), dtype=np.int64)
    np.add.at(table, (a, b), 1)
    sum_cells = comb(table, 2).sum()
    sum_a = comb(table.sum(axis=1), 2).sum()
    sum_b = comb(table.sum(axis=0), 2).sum()
    total = comb(a.size, 2)
    expected = sum_a * sum_b / total if total else 0.0
    max_index = (sum_a + sum_b) / 2.0
    if max_index == expected:
        return 1.0
    return float((sum_cells - expected) / (max_index - expected))


@dataclass
class FitReport:
    agency_ids: list[str]
    clusters: np.ndarray
    auc: list[float | None]
    epsilon: np.ndarray
    flag_threshold: float
    occupancy: dict = field(default_factory=dict)

    @property
    def flagged_agencies(self) -> list[str]:
        return [a for a, v in zip(self.agency_ids, self.auc) if v is not None and v < self.flag_threshold]

    def auc_values(self) -> np.ndarray:
        return np.array([v for v in self.auc if v is not None])

    def to_json(self) -> dict:
        vals = self.auc_values()
        return {
            "n_agencies": len(self.agency_ids),
            "max_epsilon": float(self.epsilon.max()),
            "mean_epsilon": float(self.epsilon.mean()),
            "auc_flag_threshold": self.flag_threshold,
            "auc_missing": sum(v is None for v in self.auc),
            "auc_quantiles": dict(zip(("min", "q25", "median", "q75", "max"),
                                      np.quantile(vals, [0, .25, .5, .75, 1]).tolist())) if vals.size else None,
            "fraction_auc_above_flag": float(np.mean(vals > self.flag_threshold)) if vals.size else None,
            "flagged_agencies": self.flagged_agencies,
            "occupancy": self.occupancy,
        }


def fit_report(data: Dataset, clusters: Sequence[int], p_hat: np.ndarray, pibar_hat: np.ndarray,
               flag_threshold: float = 0.75, occupancy: dict | None = None) -> FitReport:
    """AUC and choice-fit distance of every agency against its cluster's estimates."""
    clusters = np.asarray(clusters)
    aucs = [auc(data.edges[i], pibar_hat[clusters[i]]) for i in range(data.n)]
    eps = np.array([choice_fit_distance(data.counts[i], p_hat[clusters[i]]) for i in range(data.n)])
    return FitReport(data.ids, clusters, aucs, eps, flag_threshold, occupancy or {})


def occupancy_summary(records, hp: Hyperparameters) -> dict:
    H = hp.H
    occ = np.array([(np.bincount(r.G, minlength=H) > 0).sum() for r in records])
    out = {"median_occupied_components": float(np.median(occ)), "H": H, "R": hp.R,
           "warnings": occupancy_check(records, hp)}
    if hp.R:
        lam_R = np.array([shrinkage_weights(r.theta)[:, -1] for r in records])
        out["max_median_lambda_R"] = float(np.median(lam_R, axis=0).max())
    return out
