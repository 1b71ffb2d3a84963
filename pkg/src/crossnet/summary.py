"""Point estimates from a trace: modal partition, cluster-level edge and choice probabilities."""
from __future__ import annotations

import csv
import json
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .data import Dataset, pair_rows_cols
from .gibbs import ChainConfig, ChainResult, TraceRecord, canonical_labels, initial_state, run_chain
from .model import Hyperparameters
from .rng import RngStream

QUANTILES = (0.25, 0.5, 0.75)


class SummaryError(ValueError):
    pass


def map_partition(records: Sequence) -> tuple[np.ndarray, float]:
    """Most frequent partition (0-based canonical labels) and its relative frequency.

    Records may be TraceRecords or bare label vectors. Ties go to the
    partition that appears first.
    """
    if len(records) == 0:
        raise SummaryError("cannot take the modal partition of an empty trace")
    keys = [canonical_labels(getattr(r, "C", r)) for r in records]
    tally = Counter(keys)
    best = max(tally.values())
    winner = next(k for k in keys if tally[k] == best)
    return np.array(winner, dtype=np.int64), best / len(keys)


def cluster_cosub_probs(nu_k, pis) -> np.ndarray:
    """pibar_k = sum_h nu_hk pi^(h); ``nu_k`` may also be a (K, H) matrix."""
    return np.asarray(nu_k, dtype=np.float64) @ np.asarray(pis, dtype=np.float64)


@dataclass
class PosteriorSummary:
    partition: np.ndarray
    frequency: float
    p_mean: np.ndarray          # (K, V)
    p_quartiles: np.ndarray     # (3, K, V)
    pibar_mean: np.ndarray      # (K, L)
    pibar_quartiles: np.ndarray  # (3, K, L)
    draws: dict | None = None  # per-sweep "p" (S,K,V), "nu" (S,K,H), "pi" (S,H,L)

    @property
    def K_hat(self) -> int:
        return self.p_mean.shape[0]

    @property
    def cluster_sizes(self) -> np.ndarray:
        return np.bincount(self.partition, minlength=self.K_hat)

    def to_json(self) -> dict:
        clusters = {}
        for k in range(self.K_hat):
            clusters[str(k + 1)] = {
                "size": int(self.cluster_sizes[k]),
                "p_hat": {"mean": self.p_mean[k].tolist(),
                          **{f"q{int(q * 100)}": self.p_quartiles[j, k].tolist() for j, q in enumerate(QUANTILES)}},
                "pibar_hat": {"mean": self.pibar_mean[k].tolist(),
                              **{f"q{int(q * 100)}": self.pibar_quartiles[j, k].tolist()
                                 for j, q in enumerate(QUANTILES)}},
            }
        return {"map_partition": (self.partition + 1).tolist(), "frequency": self.frequency,
                "K_hat": self.K_hat, "clusters": clusters}

    @classmethod
    def from_json(cls, d: dict) -> "PosteriorSummary":
        K = int(d["K_hat"])
        cl = [d["clusters"][str(k + 1)] for k in range(K)]

        def block(name):
            mean = np.array([c[name]["mean"] for c in cl])
            qs = np.array([[c[name][f"q{int(q * 100)}"] for c in cl] for q in QUANTILES])
            return mean, qs

        p_mean, p_q = block("p_hat")
        pi_mean, pi_q = block("pibar_hat")
        return cls(np.asarray(d["map_partition"], dtype=np.int64) - 1, float(d["frequency"]),
                   p_mean, p_q, pi_mean, pi_q)


def summarize_conditional(records: Sequence[TraceRecord], partition, frequency: float = 1.0) -> PosteriorSummary:
    """Means and quartiles of p_k and of the per-sweep pibar_k = nu_k . pi.

    Every record must carry ``partition`` (up to relabeling); a different
    partition means the trace was not run with clusters held fixed.
    """
    if len(records) == 0:
        raise SummaryError("empty conditional trace")
    target = canonical_labels(partition)
    for r in records:
        if canonical_labels(r.C) != target:
            raise SummaryError(f"record at sweep {r.iteration} does not carry the requested partition")
    p = np.stack([r.p for r in records])
    nu = np.stack([r.nu for r in records])
    pi = np.stack([r.edge_probs() for r in records])
    pibar = np.einsum("skh,shl->skl", nu, pi)
    return PosteriorSummary(
        partition=np.array(target, dtype=np.int64), frequency=float(frequency),
        p_mean=p.mean(axis=0), p_quartiles=np.quantile(p, QUANTILES, axis=0),
        pibar_mean=pibar.mean(axis=0), pibar_quartiles=np.quantile(pibar, QUANTILES, axis=0),
        draws={"p": p, "nu": nu, "pi": pi},
    )


def conditional_chain(data: Dataset, hp: Hyperparameters, partition, *, iterations: int = 2000,
                      burnin: int = 500, thin: int = 1, seed: int = 0) -> ChainResult:
    """Rerun the sampler with clusters held at ``partition``; the start is a prior draw."""
    cfg = ChainConfig(iterations=iterations, burnin=burnin, thin=thin, seed=seed, init="given")
    init = initial_state(data, hp, RngStream(seed, (0, 99)).generator(), C=partition)
    return run_chain(data, hp, cfg, initial=init, freeze_clusters=True)


def summarize_fit(data: Dataset, hp: Hyperparameters, records: Sequence[TraceRecord], *,
                  iterations: int = 2000, burnin: int = 500, seed: int = 0) -> PosteriorSummary:
    """Modal partition of a full trace followed by a conditional run at that partition."""
    part, freq = map_partition(records)
    cond = conditional_chain(data, hp, part, iterations=iterations, burnin=burnin, seed=seed)
    return summarize_conditional(cond.records, part, freq)


def relabel_clusters(records: Sequence[TraceRecord]) -> tuple[list[TraceRecord], list[np.ndarray]]:
    """Align cluster labels across sweeps with equal K.

    Each sweep's labels are permuted to minimise the total L1 distance
    between its p rows and the running mean of the aligned sweeps so far
    (optimal assignment). Returns new records and the permutations applied,
    where ``perm[j]`` is the old label now called ``j``.
    """
    if len(records) == 0:
        return [], []
    K = records[0].p.shape[0]
    if any(r.p.shape[0] != K for r in records):
        raise SummaryError("sweeps differ in the number of clusters; summarise conditionally on a "
                           "fixed partition instead of relabeling")
    ref = records[0].p.copy()
    out, perms = [], []
    for t, r in enumerate(records):
        cost = np.abs(ref[:, None, :] - r.p[None, :, :]).sum(axis=2)
        _, perm = linear_sum_assignment(cost)
        inv = np.empty(K, dtype=np.int64)
        inv[perm] = np.arange(K)
        out.append(TraceRecord(r.iteration, inv[r.C], r.G.copy(), r.p[perm], r.nu[perm], r.Z.copy(),
                               r.Xbar.copy(), r.theta.copy(), r.log_joint))
        perms.append(perm)
        ref = ref + (r.p[perm] - ref) / (t + 1)
    return out, perms


# ---------------------------------------------------------------------------
# Files


def write_summary(summary: PosteriorSummary, directory, V: int) -> None:
    """summary.json, p_hat.csv, pibar_hat.csv and the conditional draws (draws.npz)."""
    directory = Path(directory)
    (directory / "summary.json").write_text(json.dumps(summary.to_json(), indent=1))
    if summary.draws is not None:
        np.savez(directory / "draws.npz", **summary.draws)
    with open(directory / "p_hat.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["cluster", "v", "mean", "q25", "q50", "q75"])
        for k in range(summary.K_hat):
            for v in range(V):
                w.writerow([k + 1, v + 1, repr(summary.p_mean[k, v]),
                            *(repr(summary.p_quartiles[j, k, v]) for j in range(3))])
    rows, cols = pair_rows_cols(V)
    with open(directory / "pibar_hat.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["cluster", "v", "u", "mean", "q25", "q50", "q75"])
        for k in range(summary.K_hat):
            for l in range(rows.size):
                w.writerow([k + 1, rows[l] + 1, cols[l] + 1, repr(summary.pibar_mean[k, l]),
                            *(repr(summary.pibar_quartiles[j, k, l]) for j in range(3))])


def read_summary(directory) -> PosteriorSummary:
    path = Path(directory) / "summary.json"
    if not path.exists():
        raise FileNotFoundError(f"{path} not found; run `summarize` first")
    summary = PosteriorSummary.from_json(json.loads(path.read_text()))
    draws = Path(directory) / "draws.npz"
    if draws.exists():
        with np.load(draws) as z:
            summary.draws = {k: z[k] for k in z.files}
    return summary


__all__ = ["map_partition", "cluster_cosub_probs", "PosteriorSummary", "summarize_conditional",
           "conditional_chain", "summarize_fit", "relabel_clusters", "write_summary", "read_summary"]
