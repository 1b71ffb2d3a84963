"""Synthetic agencies drawn from the generative model, with ground truth."""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import Dataset, n_pairs, pair_rows_cols
from .rng import RngStream, sample_categorical_log_rows


@dataclass(frozen=True)
class SimConfig:
    """Ground truth for a simulation.

    p0 : (K0, V) choice probabilities per true cluster
    nu0 : (K0, H0) mixing probabilities per true cluster
    pi0 : (H0, L) edge probabilities per true component
    Agencies are split into K0 contiguous, (near) equal blocks.
    """
    n: int
    n_i: int
    p0: np.ndarray
    nu0: np.ndarray
    pi0: np.ndarray
    seed: int = 0

    def __post_init__(self):
        p0 = np.asarray(self.p0, dtype=np.float64)
        nu0 = np.asarray(self.nu0, dtype=np.float64)
        pi0 = np.asarray(self.pi0, dtype=np.float64)
        K0, V = p0.shape
        if nu0.shape[0] != K0:
            raise ValueError("p0 and nu0 must have one row per true cluster")
        if pi0.shape != (nu0.shape[1], n_pairs(V)):
            raise ValueError(f"pi0 must have shape ({nu0.shape[1]}, {n_pairs(V)})")
        for name, rows in (("p0", p0), ("nu0", nu0)):
            if np.any(rows < 0) or not np.allclose(rows.sum(axis=1), 1.0):
                raise ValueError(f"rows of {name} must lie on the simplex")
        if np.any(pi0 < 0) or np.any(pi0 > 1):
            raise ValueError("pi0 must lie in [0, 1]")
        if self.n < K0 or self.n_i < 1:
            raise ValueError("need n >= K0 and n_i >= 1")
        object.__setattr__(self, "p0", p0)
        object.__setattr__(self, "nu0", nu0)
        object.__setattr__(self, "pi0", pi0)

    @property
    def V(self) -> int:
        return self.p0.shape[1]

    @property
    def K0(self) -> int:
        return self.p0.shape[0]

    @property
    def H0(self) -> int:
        return self.nu0.shape[1]

    def true_clusters(self) -> np.ndarray:
        blocks = np.array_split(np.arange(self.n), self.K0)
        C = np.empty(self.n, dtype=np.int64)
        for k, b in enumerate(blocks):
            C[b] = k
        return C

    def pibar0(self) -> np.ndarray:
        """True cluster-level co-subscription probabilities, (K0, L)."""
        return self.nu0 @ self.pi0

    def to_dict(self) -> dict:
        return {"n": self.n, "n_i": self.n_i, "seed": self.seed, "p0": self.p0.tolist(),
                "nu0": self.nu0.tolist(), "pi0": self.pi0.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "SimConfig":
        return cls(n=int(d["n"]), n_i=int(d["n_i"]), p0=np.asarray(d["p0"]), nu0=np.asarray(d["nu0"]),
                   pi0=np.asarray(d["pi0"]), seed=int(d.get("seed", 0)))


@dataclass(frozen=True)
class Truth:
    C0: np.ndarray
    G0: np.ndarray
    config: SimConfig

    def to_json(self) -> dict:
        return {"C0": (self.C0 + 1).tolist(), "G0": (self.G0 + 1).tolist(),
                "p0": self.config.p0.tolist(), "nu0": self.config.nu0.tolist(),
                "pi0": self.config.pi0.tolist()}


def _swap(p: np.ndarray, a: int, b: int) -> np.ndarray:
    q = p.copy()
    q[[a - 1, b - 1]] = q[[b - 1, a - 1]]
    return q


def _popular(V: int, masses: dict[int, float]) -> np.ndarray:
    """Most mass on a few products, the remainder spread evenly."""
    p = np.zeros(V)
    for v, m in masses.items():
        p[v - 1] = m
    rest = [v for v in range(V) if v + 1 not in masses]
    p[rest] = (1.0 - sum(masses.values())) / len(rest)
    return p


def _pair_matrix(V: int, default: float) -> np.ndarray:
    return np.full((V, V), default)


def _set(mat: np.ndarray, v: int, u: int, value: float) -> None:
    mat[v - 1, u - 1] = mat[u - 1, v - 1] = value


def default_edge_probs(V: int = 15) -> np.ndarray:
    """Three edge-probability vectors: a dense community and two hub structures.

    Component 1: products 1-10 form a community (0.8 between members, 0.95
    for the pairs (1,2), (3,4), (5,6), (7,8), (9,10)); products 11-15 sit in
    the 0.05 background apart from a few weak pairs.
    Component 2: hubs 4, 7, 2, 12 with strengths 0.9, 0.8, 0.7, 0.6,
    combined noisy-or style with the 0.05 background.
    Component 3: component 2 with every pair involving product 4 at 0.05.
    The levels are graded so that each product's best partner is unique.
    """
    if V != 15:
        raise ValueError("the default edge structure is defined for V = 15")
    background = 0.05
    rows, cols = pair_rows_cols(V)
    comm = _pair_matrix(V, background)
    for v in range(1, 11):
        for u in range(1, v):
            _set(comm, v, u, 0.8)
    for v, u in ((2, 1), (4, 3), (6, 5), (8, 7), (10, 9)):
        _set(comm, v, u, 0.95)
    for v, u, val in ((12, 11, 0.35), (14, 13, 0.35), (15, 11, 0.3), (15, 13, 0.2)):
        _set(comm, v, u, val)

    strength = np.zeros(V)
    for hub, s in ((4, 0.9), (7, 0.8), (2, 0.7), (12, 0.6)):
        strength[hub - 1] = s
    hubs = 1.0 - (1.0 - background) * np.outer(1.0 - strength, 1.0 - strength)
    held_out = hubs.copy()
    held_out[3, :] = held_out[:, 3] = background

    return np.stack([m[rows, cols] for m in (comm, hubs, held_out)])


def default_scenario(n: int = 200, n_i: int = 500, seed: int = 0) -> SimConfig:
    """Four clusters of agencies over 15 products and three network components.

    Clusters 1 and 2 share their networks and differ in choices only by
    swapping products 1 and 9; clusters 3 and 4 differ by swapping products 3
    and 7 and by favouring different components.
    """
    V = 15
    p1 = _popular(V, {1: 0.30, 2: 0.20, 5: 0.15, 10: 0.10})
    p3 = _popular(V, {4: 0.30, 7: 0.20, 11: 0.15, 14: 0.10})
    p0 = np.stack([p1, _swap(p1, 1, 9), p3, _swap(p3, 3, 7)])
    nu0 = np.array([[0.9, 0.05, 0.05], [0.9, 0.05, 0.05], [0.05, 0.9, 0.05], [0.05, 0.05, 0.9]])
    return SimConfig(n=n, n_i=n_i, p0=p0, nu0=nu0, pi0=default_edge_probs(V), seed=seed)


def generate(cfg: SimConfig) -> tuple[Dataset, Truth]:
    """Draw counts, component labels and networks for every agency."""
    C0 = cfg.true_clusters()
    gen = RngStream(cfg.seed, 1).generator()
    counts = gen.multinomial(cfg.n_i, cfg.p0[C0])
    with np.errstate(divide="ignore"):
        G0 = sample_categorical_log_rows(np.log(cfg.nu0[C0]), gen).astype(np.int64)
    edges = (gen.random((cfg.n, n_pairs(cfg.V))) < cfg.pi0[G0]).astype(np.uint8)
    ids = [f"A{i + 1:03d}" for i in range(cfg.n)]
    return Dataset.from_arrays(counts, edges, ids), Truth(C0, G0, cfg)


def write_truth(truth: Truth, path) -> None:
    Path(path).write_text(json.dumps(truth.to_json(), indent=1))
