"""Successive-conditional ("getting it right") check of the whole sampler.

Two ways of drawing from the joint distribution of parameters and data
are compared on a tiny model:

* forward: parameters from the prior, then data given parameters;
* successive-conditional: a Gibbs sweep given the data, then fresh data
  given the new parameters, repeated.

If every update leaves its conditional invariant, both produce the same
marginal distribution of any statistic of the parameters.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Mapping

import numpy as np

from .data import Dataset
from .gibbs import gibbs_sweep
from .model import Hyperparameters, ModelState, edge_probabilities, shrinkage_weights, theta_shapes
from .rng import RngStream, sample_dirichlet

STATISTICS = ("Z_1", "Z_L", "Z_1^2", "p_C1,1", "p_C1,1^2", "p_Cn,V", "K", "occupied",
              "log_theta_G1", "sum_Xbar_G1^2")


def small_hyperparameters(V: int = 4, H: int = 2, R: int = 1) -> Hyperparameters:
    L = V * (V - 1) // 2
    return Hyperparameters(alpha_c=1.0, alpha=np.ones(V), mu=np.linspace(-0.5, 0.5, L),
                           sigma2=np.ones(L), a1=2.5, a2=3.5, H=H, R=R)


def crp_partition(n: int, alpha_c: float, gen: np.random.Generator) -> np.ndarray:
    """Sequential CRP draw with labels in order of appearance."""
    C = np.zeros(n, dtype=np.int64)
    sizes = [1]
    for i in range(1, n):
        w = np.append(sizes, alpha_c)
        k = int(gen.choice(w.size, p=w / w.sum()))
        if k == len(sizes):
            sizes.append(0)
        sizes[k] += 1
        C[i] = k
    return C


def draw_parameters(hp: Hyperparameters, n: int, gen: np.random.Generator) -> ModelState:
    H, V, R = hp.H, hp.V, hp.R
    C = crp_partition(n, hp.alpha_c, gen)
    K = int(C.max()) + 1
    p = sample_dirichlet(np.tile(hp.alpha, (K, 1)), gen)
    nu = sample_dirichlet(np.full((K, H), 1.0 / H), gen)
    G = np.array([gen.choice(H, p=nu[k]) for k in C], dtype=np.int64)
    Z = gen.normal(hp.mu, np.sqrt(hp.sigma2))
    theta = gen.gamma(np.tile(theta_shapes(hp), (H, 1)))
    Xbar = gen.standard_normal((H, V, R)) * np.sqrt(shrinkage_weights(theta))[:, None, :]
    return ModelState(C, G, p, nu, Z, Xbar, theta)


def draw_data(state: ModelState, n_i: int, gen: np.random.Generator) -> Dataset:
    counts = gen.multinomial(n_i, state.p[state.C])
    pi = edge_probabilities(state.Z, state.Xbar, clamp=False)
    edges = (gen.random((state.C.size, pi.shape[1])) < pi[state.G]).astype(np.uint8)
    return Dataset.from_arrays(counts, edges)


def statistics(state: ModelState) -> np.ndarray:
    g1 = state.G[0]
    p11 = state.p[state.C[0], 0]
    return np.array([
        state.Z[0], state.Z[-1], state.Z[0] ** 2, p11, p11 ** 2, state.p[state.C[-1], -1],
        state.K, np.unique(state.G).size, np.log(state.theta[g1, 0]), np.sum(state.Xbar[g1] ** 2),
    ])


def forward_samples(hp: Hyperparameters, n: int, draws: int, seed: int = 0) -> np.ndarray:
    gen = RngStream(seed, 1).generator()
    return np.array([statistics(draw_parameters(hp, n, gen)) for _ in range(draws)])


def successive_conditional(hp: Hyperparameters, n: int, rounds: int, seed: int = 0, n_i: int = 5,
                           overrides: Mapping[str, Callable] | None = None) -> np.ndarray:
    """Statistics of the initial forward draw followed by ``rounds`` sweep/regenerate cycles."""
    gen = RngStream(seed, 2).generator()
    state = draw_parameters(hp, n, gen)
    data = draw_data(state, n_i, gen)
    out = [statistics(state)]
    for t in range(1, rounds + 1):
        state = gibbs_sweep(state, data, hp, seed, t, overrides=overrides)
        data = draw_data(state, n_i, gen)
        out.append(statistics(state))
    return np.array(out)


def batch_means_se(x: np.ndarray, batches: int = 50) -> np.ndarray:
    """Standard error of column means of an autocorrelated series."""
    m = x.shape[0] // batches
    means = x[: m * batches].reshape(batches, m, -1).mean(axis=1)
    return means.std(axis=0, ddof=1) / np.sqrt(batches)


@dataclass
class GewekeResult:
    names: tuple[str, ...]
    forward_mean: np.ndarray
    chain_mean: np.ndarray
    z: np.ndarray

    def max_abs_z(self) -> float:
        return float(np.max(np.abs(self.z)))

    def table(self) -> str:
        return "\n".join(f"{nm:>14s}  fwd {f: .4f}  chain {c: .4f}  z {z: .2f}"
                         for nm, f, c, z in zip(self.names, self.forward_mean, self.chain_mean, self.z))


def geweke_harness(hp: Hyperparameters | None = None, n: int = 6, rounds: int = 10_000, *,
                   seed: int = 0, n_i: int = 5, overrides: Mapping[str, Callable] | None = None) -> GewekeResult:
    """z-scores of forward vs successive-conditional means for the tracked statistics.

    The chain's first (forward) draw is dropped; its standard error uses
    batch means. ``overrides`` swaps sampler steps, e.g. to check that a
    deliberately broken update is detected.
    """
    hp = small_hyperparameters() if hp is None else hp
    fwd = forward_samples(hp, n, rounds, seed)
    chain = successive_conditional(hp, n, rounds, seed, n_i=n_i, overrides=overrides)[1:]
    se_f = fwd.std(axis=0, ddof=1) / np.sqrt(fwd.shape[0])
    se_c = batch_means_se(chain)
    diff = chain.mean(axis=0) - fwd.mean(axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(diff == 0, 0.0, diff / np.sqrt(se_f ** 2 + se_c ** 2))
    return GewekeResult(STATISTICS, fwd.mean(axis=0), chain.mean(axis=0), z)
