"""Cross-sell offers per cluster and their performance indicators.

Products are numbered from 1 in everything this module returns.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from itertools import combinations
from pathlib import Path

import numpy as np

from .data import edge_index_matrix, n_pairs

MAX_MULTI = 3


class StrategyError(ValueError):
    pass


def _pair_matrix(pibar, V: int) -> np.ndarray:
    """Symmetric V x V matrix of pair scores (last axis), -inf on the diagonal."""
    pibar = np.asarray(pibar, dtype=np.float64)
    if pibar.shape[-1] != n_pairs(V):
        raise StrategyError(f"expected {n_pairs(V)} pair scores for V={V}, got {pibar.shape[-1]}")
    idx = edge_index_matrix(V)
    mat = pibar[..., np.where(idx < 0, 0, idx)]
    mat[..., np.arange(V), np.arange(V)] = -np.inf
    return mat


def best_offer(pibar_k, V: int) -> tuple[np.ndarray, np.ndarray]:
    """For each product v, the partner u != v with the largest co-subscription probability.

    Returns (u, prob), both of length V, with u 1-based. Ties go to the
    smallest product index. Leading axes of ``pibar_k`` are kept, so a
    (S, L) stack of draws gives (S, V) answers.
    """
    if V < 2:
        raise StrategyError("need at least two products")
    mat = _pair_matrix(pibar_k, V)
    u = np.argmax(mat, axis=-1)
    prob = np.take_along_axis(mat, u[..., None], axis=-1)[..., 0]
    return u + 1, prob


def performance_indicators(p_hat_k, best_probs) -> np.ndarray:
    """e_kv = p_kv * (best co-subscription probability for v)."""
    return np.asarray(p_hat_k, dtype=np.float64) * np.asarray(best_probs, dtype=np.float64)


def _subset_scores(nu, pis, v: int, M: int):
    """Average joint probabilities of all M-subsets; ``nu`` (S, K, H), ``pis`` (S, H, L)."""
    V = _infer_v(pis.shape[-1])
    if not 1 <= v <= V:
        raise StrategyError(f"product {v} outside 1..{V}")
    if not 1 <= M <= min(MAX_MULTI, V - 1):
        raise StrategyError(f"M must lie in 1..{min(MAX_MULTI, V - 1)} (exhaustive search is "
                            f"limited to sets of at most {MAX_MULTI} products)")
    idx = edge_index_matrix(V)[v - 1]
    partners = [u for u in range(V) if u != v - 1]
    subsets = list(combinations(partners, M))
    edges = idx[np.array(subsets)]                      # (n_subsets, M)
    joint = np.prod(pis[:, :, edges], axis=-1)          # (S, H, n_subsets)
    return subsets, np.einsum("skh,shj->kj", nu, joint) / nu.shape[0]


def multi_offer(nu_k, pis, v: int, M: int) -> tuple[tuple[int, ...], float]:
    """Best set of M extra products for customers holding product ``v`` (1-based).

    The score of a set S is sum_h nu_hk prod_{u in S} pi^(h)_(v,u), the
    probability that all M pairs co-occur. ``nu_k`` (H,) with ``pis`` (H, L)
    scores a single draw; a stack ``nu_k`` (S, H) with ``pis`` (S, H, L)
    scores the average over draws. Subsets are enumerated in lexicographic
    order and the first maximiser wins.
    """
    nu = np.asarray(nu_k, dtype=np.float64)
    pis = np.asarray(pis, dtype=np.float64)
    if nu.ndim == 1:
        nu, pis = nu[None], pis[None]
    subsets, score = _subset_scores(nu[:, None, :], pis, v, M)
    j = int(np.argmax(score[0]))
    return tuple(u + 1 for u in subsets[j]), float(score[0, j])


def _infer_v(L: int) -> int:
    V = int(round((1 + np.sqrt(1 + 8 * L)) / 2))
    if n_pairs(V) != L:
        raise StrategyError(f"{L} is not a triangular number of pairs")
    return V


@dataclass
class StrategyTable:
    """One row per (cluster, product)."""
    k_size: np.ndarray        # (K,)
    u_best: np.ndarray        # (K, V), 1-based
    best_prob: np.ndarray     # (K, V)
    e: np.ndarray             # (K, V)
    stability: np.ndarray     # (K, V), NaN when no draws are available
    multi: dict = field(default_factory=dict)  # M -> list of per-cluster, per-product (set, prob)

    @property
    def K(self) -> int:
        return self.u_best.shape[0]

    @property
    def V(self) -> int:
        return self.u_best.shape[1]

    def rows(self):
        for k in range(self.K):
            for v in range(self.V):
                yield {"cluster": k + 1, "k_size": int(self.k_size[k]), "v": v + 1,
                       "u_best": int(self.u_best[k, v]), "best_prob": float(self.best_prob[k, v]),
                       "e": float(self.e[k, v]),
                       "stability": None if np.isnan(self.stability[k, v]) else float(self.stability[k, v])}

    def same_strategies(self, other: "StrategyTable") -> bool:
        """Equal cluster sizes and best offers (probabilities may differ slightly)."""
        return (np.array_equal(self.k_size, other.k_size) and np.array_equal(self.u_best, other.u_best))

    def to_json(self) -> dict:
        out = {"strategies": list(self.rows())}
        if self.multi:
            out["multi_offer"] = {
                str(M): [{"cluster": k + 1, "v": v + 1, "products": list(sets[k][v][0]),
                          "joint_prob": sets[k][v][1]}
                         for k in range(self.K) for v in range(self.V)]
                for M, sets in sorted(self.multi.items())
            }
        return out

    def write(self, directory) -> None:
        directory = Path(directory)
        with open(directory / "strategies.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["cluster", "k_size", "v", "u_best", "best_prob", "e", "stability"])
            for r in self.rows():
                w.writerow([r["cluster"], r["k_size"], r["v"], r["u_best"], repr(r["best_prob"]),
                            repr(r["e"]), "" if r["stability"] is None else repr(r["stability"])])
        (directory / "strategies.json").write_text(json.dumps(self.to_json(), indent=1))


def strategy_table(summary, multi: int | None = None) -> StrategyTable:
    """Best offers and indicators from posterior means, with per-draw stability.

    ``stability`` is the fraction of conditional draws whose own best offer
    agrees with the one chosen from the posterior mean. ``multi`` adds the
    best sets of that size (and every smaller size) scored by the average
    joint probability over draws.
    """
    K, V = summary.p_mean.shape
    u, prob = best_offer(summary.pibar_mean, V)
    e = performance_indicators(summary.p_mean, prob)
    stability = np.full((K, V), np.nan)
    draws = summary.draws
    if draws is not None:
        pibar = np.einsum("skh,shl->skl", draws["nu"], draws["pi"])
        u_draw, _ = best_offer(pibar, V)
        stability = (u_draw == u[None]).mean(axis=0)
    table = StrategyTable(summary.cluster_sizes, u, prob, e, stability)
    if multi is not None:
        if not 1 <= multi <= MAX_MULTI:
            raise StrategyError(f"multi-offer size must be between 1 and {MAX_MULTI}: sets are found "
                                "by exhaustive search")
        if draws is None:
            raise StrategyError("multi-offer strategies need the conditional draws (draws.npz)")
        for M in range(1, min(multi, V - 1) + 1):
            sets = [[None] * V for _ in range(K)]
            for v in range(V):
                subsets, score = _subset_scores(draws["nu"], draws["pi"], v + 1, M)
                best = np.argmax(score, axis=1)
                for k in range(K):
                    sets[k][v] = (tuple(u + 1 for u in subsets[best[k]]), float(score[k, best[k]]))
            table.multi[M] = sets
    return table
