"""Gibbs sampler for the clustered mixture of latent eigenmodels.

One sweep runs, in order: choice probabilities, component allocation,
mixing probabilities, Polya-gamma auxiliaries, shared similarities, latent
coordinates, shrinkage variables, edge probabilities, and finally the
sequential re-seating of agencies into clusters. Each step draws from its
own random stream ``RngStream(seed, (sweep, step))``.

Every stochastic update has a companion ``*_conditional`` function returning
the parameters of its full conditional; the updates only draw from them.
"""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numba
import numpy as np
from scipy.special import gammaln

from . import __version__
from .data import Dataset, incident_edges
from .model import (Hyperparameters, ModelState, component_edge_totals, edge_probabilities,
                    joint_log_density, network_loglik_matrix, shrinkage_weights, theta_shapes)
from .rng import (RngStream, SamplingError, as_generator, sample_dirichlet, sample_gamma,
                  sample_gaussian, sample_polya_gamma,
                  sample_categorical_log_rows)

log = logging.getLogger(__name__)

STEP_IDS = {
    "choice_probs": 1, "allocate": 2, "mixing": 3, "polya_gamma": 41, "shared_similarity": 42,
    "latent_coords": 43, "shrinkage": 44, "reseat": 6, "init": 0,
}


class SamplerError(RuntimeError):
    """Numerical failure inside a sweep; carries the sweep index."""

    def __init__(self, message: str, iteration: int | None = None):
        super().__init__(message if iteration is None else f"sweep {iteration}: {message}")
        self.iteration = iteration


@dataclass(frozen=True)
class ChainConfig:
    iterations: int = 5000
    burnin: int = 1000
    thin: int = 1
    seed: int = 0
    init: str = "single_cluster"

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if not 0 <= self.burnin < self.iterations:
            raise ValueError("need 0 <= burnin < iterations")
        if self.thin < 1:
            raise ValueError("thin must be >= 1")
        if self.init not in ("single_cluster", "given"):
            raise ValueError(f"unknown init policy {self.init!r}")


@dataclass
class TraceRecord:
    iteration: int
    C: np.ndarray
    G: np.ndarray
    p: np.ndarray
    nu: np.ndarray
    Z: np.ndarray
    Xbar: np.ndarray
    theta: np.ndarray
    log_joint: float

    @classmethod
    def from_state(cls, iteration: int, state: ModelState, log_joint: float) -> "TraceRecord":
        return cls(iteration, state.C.copy(), state.G.copy(), state.p.copy(), state.nu.copy(),
                   state.Z.copy(), state.Xbar.copy(), state.theta.copy(), float(log_joint))

    def to_state(self) -> ModelState:
        return ModelState(self.C.copy(), self.G.copy(), self.p.copy(), self.nu.copy(),
                          self.Z.copy(), self.Xbar.copy(), self.theta.copy())

    def edge_probs(self) -> np.ndarray:
        return edge_probabilities(self.Z, self.Xbar)

    def to_json(self) -> dict:
        """JSON-ready dict; cluster and component labels are written 1-based."""
        return {
            "iteration": self.iteration, "C": (self.C + 1).tolist(), "G": (self.G + 1).tolist(),
            "p": self.p.tolist(), "nu": self.nu.tolist(), "Z": self.Z.tolist(),
            "Xbar": self.Xbar.tolist(), "theta": self.theta.tolist(), "log_joint": self.log_joint,
        }

    @classmethod
    def from_json(cls, d: dict) -> "TraceRecord":
        H = len(d["theta"])
        V = len(d["p"][0])
        xbar = np.asarray(d["Xbar"], dtype=np.float64).reshape(H, V, -1)
        return cls(int(d["iteration"]), np.asarray(d["C"], dtype=np.int64) - 1,
                   np.asarray(d["G"], dtype=np.int64) - 1, np.asarray(d["p"], dtype=np.float64),
                   np.asarray(d["nu"], dtype=np.float64), np.asarray(d["Z"], dtype=np.float64),
                   xbar, np.asarray(d["theta"], dtype=np.float64).reshape(H, -1), float(d["log_joint"]))


@dataclass
class ChainResult:
    records: list[TraceRecord]
    log_joint: np.ndarray
    final_state: ModelState
    metadata: dict = field(default_factory=dict)


def stream(seed: int, sweep: int, step: str) -> np.random.Generator:
    return RngStream(seed, (sweep, STEP_IDS[step])).generator()


# ---------------------------------------------------------------------------
# choice probabilities


def choice_probs_conditional(state: ModelState, data: Dataset, hp: Hyperparameters) -> np.ndarray:
    """Dirichlet parameters alpha + sum of member counts, one row per cluster."""
    onehot = np.zeros((state.K, data.n))
    onehot[state.C, np.arange(data.n)] = 1.0
    return hp.alpha[None, :] + onehot @ data.counts


def update_choice_probs(state, data, hp, rng):
    state.p = sample_dirichlet(choice_probs_conditional(state, data, hp), rng)
    return state


# ---------------------------------------------------------------------------
# component allocation


def update_edge_probs(state: ModelState) -> np.ndarray:
    """Edge probability vectors of all components, shape (H, L)."""
    return state.edge_probs()


def allocation_log_weights(state: ModelState, data: Dataset, pis: np.ndarray | None = None) -> np.ndarray:
    """(n, H) unnormalized log-probabilities of each agency's component."""
    pis = update_edge_probs(state) if pis is None else pis
    with np.errstate(divide="ignore"):
        log_nu = np.log(state.nu)
    return log_nu[state.C] + network_loglik_matrix(data.edges.astype(np.float64), pis)


def allocate_components(state, data, hp, rng, pis=None):
    state.G = sample_categorical_log_rows(allocation_log_weights(state, data, pis), rng).astype(np.int64)
    return state


# ---------------------------------------------------------------------------
# mixing probabilities


def mixing_probs_conditional(state: ModelState, hp: Hyperparameters) -> np.ndarray:
    counts = np.zeros((state.K, state.H))
    np.add.at(counts, (state.C, state.G), 1.0)
    return 1.0 / state.H + counts


def update_mixing_probs(state, hp, rng):
    state.nu = sample_dirichlet(mixing_probs_conditional(state, hp), rng)
    return state


# ---------------------------------------------------------------------------
# Polya-gamma auxiliaries


def update_polya_gamma_aug(state, data, hp, rng):
    """omega^(h)_l ~ PG(n_h, Z_l + D^(h)_l) for occupied components; zero otherwise."""
    n_h = np.bincount(state.G, minlength=state.H)
    occ = np.flatnonzero(n_h)
    psi = state.Z[None, :] + state.offsets()[occ]
    omega = np.zeros((state.H, state.Z.size))
    if occ.size:
        b = np.broadcast_to(n_h[occ][:, None], psi.shape)
        omega[occ] = sample_polya_gamma(b, psi, rng)
    state.omega = omega
    return state


# ---------------------------------------------------------------------------
# shared similarities


def shared_similarity_conditional(state: ModelState, data: Dataset, hp: Hyperparameters,
                                  half_count: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """Mean and variance of the independent Gaussian conditionals of Z.

    Only occupied components contribute. ``half_count=False`` drops the
    ``-n_h/2`` term; it exists solely to check that the Geweke harness
    detects a broken sampler.
    """
    n_h, totals = component_edge_totals(state.G, data.edges, state.H)
    occ = n_h > 0
    D = state.offsets()[occ]
    om = state.omega[occ]
    var = 1.0 / (1.0 / hp.sigma2 + om.sum(axis=0))
    shift = n_h[occ][:, None] / 2.0 if half_count else 0.0
    mean = var * (hp.mu / hp.sigma2 + np.sum(totals[occ] - shift - om * D, axis=0))
    return mean, var


def update_shared_similarity(state, data, hp, rng, half_count: bool = True):
    mean, var = shared_similarity_conditional(state, data, hp, half_count=half_count)
    state.Z = sample_gaussian(mean, var, rng)
    return state


# ---------------------------------------------------------------------------
# latent coordinates


def latent_row_conditional(state: ModelState, h: int, v: int, n_h: int,
                           totals_h: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Precision and linear term of the Gaussian conditional of row ``v`` of Xbar^(h).

    ``totals_h`` is L(A^(h)), the edge counts summed over the component's agencies.
    """
    V = state.Xbar.shape[1]
    others, edges = incident_edges(V)
    e = edges[v]
    Xm = state.Xbar[h, others[v]]
    om = state.omega[h, e]
    inv_lam = 1.0 / shrinkage_weights(state.theta[h])
    precision = Xm.T @ (om[:, None] * Xm) + np.diag(inv_lam)
    linear = Xm.T @ (totals_h[e] - n_h / 2.0 - om * state.Z[e])
    return precision, linear


@numba.njit(cache=True)
def _latent_rows_kernel(Xbar, omega, totals, Z, inv_lam, n_h, others, edges, eps):
    """Sequential row updates of one component's Xbar; returns the failing row or -1.

    Row v is drawn as mean + U^-1 eps[v], where U^T U is the conditional
    precision (U upper triangular, from its Cholesky factor).
    """
    V, R = Xbar.shape
    m = V - 1
    prec = np.empty((R, R))
    chol = np.empty((R, R))
    lin = np.empty(R)
    y = np.empty(R)
    for v in range(V):
        for a in range(R):
            lin[a] = 0.0
            for b in range(R):
                prec[a, b] = 0.0
            prec[a, a] = inv_lam[a]
        for j in range(m):
            w = others[v, j]
            e = edges[v, j]
            om = omega[e]
            resid = totals[e] - 0.5 * n_h - om * Z[e]
            for a in range(R):
                xa = Xbar[w, a]
                lin[a] += xa * resid
                for b in range(a + 1):
                    prec[a, b] += om * xa * Xbar[w, b]
        # lower Cholesky factor
        for a in range(R):
            for b in range(a + 1):
                s = prec[a, b]
                for c in range(b):
                    s -= chol[a, c] * chol[b, c]
                if a == b:
                    if s <= 0.0:
                        return v
                    chol[a, a] = np.sqrt(s)
                else:
                    chol[a, b] = s / chol[b, b]
        # mean = P^-1 lin: forward then backward substitution
        for a in range(R):
            s = lin[a]
            for c in range(a):
                s -= chol[a, c] * y[c]
            y[a] = s / chol[a, a]
        for a in range(R - 1, -1, -1):
            s = y[a] + eps[v, a]
            for c in range(a + 1, R):
                s -= chol[c, a] * Xbar[v, c]
            Xbar[v, a] = s / chol[a, a]
    return -1


def update_latent_coords(state, data, hp, rng):
    """Block-update each row of Xbar^(h) in turn for occupied components.

    Empty components get a joint prior draw of (theta^(h), Xbar^(h)).
    """
    gen = as_generator(rng)
    H, V, R = state.Xbar.shape
    if R == 0:
        return state
    n_h, totals = component_edge_totals(state.G, data.edges, H)
    others, edges = incident_edges(V)
    shapes = theta_shapes(hp)
    for h in range(H):
        if n_h[h] == 0:
            state.theta[h] = sample_gamma(shapes, 1.0, gen)
            lam = shrinkage_weights(state.theta[h])
            state.Xbar[h] = gen.standard_normal((V, R)) * np.sqrt(lam)
            continue
        eps = gen.standard_normal((V, R))
        inv_lam = 1.0 / shrinkage_weights(state.theta[h])
        xbar = np.ascontiguousarray(state.Xbar[h])
        bad = _latent_rows_kernel(xbar, state.omega[h], totals[h], state.Z, inv_lam,
                                  float(n_h[h]), others, edges, eps)
        if bad >= 0:
            raise SamplerError(f"latent coordinates: precision of component {h + 1}, "
                               f"row {bad + 1} is not positive definite")
        state.Xbar[h] = xbar
    return state


# ---------------------------------------------------------------------------
# shrinkage


def shrinkage_conditional(state: ModelState, hp: Hyperparameters, r: int) -> tuple[np.ndarray, np.ndarray]:
    """Gamma shape and rate of theta_r for every component (0-based ``r``)."""
    H, V, R = state.Xbar.shape
    sq = np.sum(state.Xbar ** 2, axis=1)  # (H, R)
    tau = np.cumprod(state.theta, axis=1)
    partial = tau[:, r:] / state.theta[:, r:r + 1]
    rate = 1.0 + 0.5 * np.sum(partial * sq[:, r:], axis=1)
    shape = (hp.a1 if r == 0 else hp.a2) + V * (R - r) / 2.0
    return np.full(H, shape), rate


def update_shrinkage(state, hp, rng):
    gen = as_generator(rng)
    for r in range(state.theta.shape[1]):
        shape, rate = shrinkage_conditional(state, hp, r)
        state.theta[:, r] = sample_gamma(shape, rate, gen)
    return state


# ---------------------------------------------------------------------------
# cluster re-seating


def marginal_choices_new_cluster(counts, alpha) -> float:
    """log of the Dirichlet-multinomial probability of an agency's choices under the prior."""
    counts = np.asarray(counts, dtype=np.float64)
    alpha = np.asarray(alpha, dtype=np.float64)
    return float(gammaln(alpha.sum()) - gammaln(alpha).sum()
                 + gammaln(alpha + counts).sum() - gammaln(alpha.sum() + counts.sum()))


def marginal_component_new_cluster(H: int) -> float:
    """log pr(G_i | new cluster): the symmetric Dirichlet(1/H) prior makes it uniform."""
    if H < 1:
        raise ValueError("H must be >= 1")
    return -math.log(H)


def reseat_log_weights(state: ModelState, data: Dataset, hp: Hyperparameters, i: int,
                       likelihood: bool = True) -> np.ndarray:
    """Log-weights of C_i over the K_{-i} remaining clusters and a new one.

    Assumes agency ``i`` has already been removed, i.e. its current cluster
    has other members. Used for testing; the sweep inlines the same formula.
    """
    others = np.delete(np.arange(data.n), i)
    sizes = np.bincount(state.C[others], minlength=state.K).astype(np.float64)
    existing = np.log(sizes)
    new = math.log(hp.alpha_c)
    if likelihood:
        existing = existing + np.log(state.p) @ data.counts[i] + np.log(state.nu[:, state.G[i]])
        new += marginal_choices_new_cluster(data.counts[i], hp.alpha) + marginal_component_new_cluster(hp.H)
    return np.append(existing, new)


def reseat_clusters(state, data, hp, rng, likelihood: bool = True):
    """Sequentially redraw every C_i given the others.

    Emptied clusters are dropped and the remaining labels compacted before
    the draw; a newly opened cluster immediately receives p and nu drawn from
    their conditionals given the agency's counts and component.
    ``likelihood=False`` leaves only the CRP prior weights (test hook).
    """
    gen = as_generator(rng)
    n = data.n
    H = state.H
    counts = data.counts.astype(np.float64)
    C = state.C.copy()
    G = state.G
    p = state.p
    nu = state.nu
    sizes = np.bincount(C, minlength=p.shape[0]).astype(np.float64)
    with np.errstate(divide="ignore"):
        log_p = np.log(p)
        log_nu = np.log(nu)
    log_alpha_c = math.log(hp.alpha_c)
    if likelihood:
        a = hp.alpha
        new_w = (log_alpha_c + gammaln(a.sum()) - gammaln(a).sum()
                 + gammaln(a[None, :] + counts).sum(axis=1) - gammaln(a.sum() + counts.sum(axis=1))
                 + marginal_component_new_cluster(H))
    else:
        new_w = np.full(n, log_alpha_c)
    uniforms = gen.random(n)
    for i in range(n):
        k = C[i]
        sizes[k] -= 1.0
        if sizes[k] == 0.0:
            keep = np.arange(sizes.size) != k
            sizes, p, nu, log_p, log_nu = sizes[keep], p[keep], nu[keep], log_p[keep], log_nu[keep]
            C[C > k] -= 1
        K = sizes.size
        w = np.empty(K + 1)
        with np.errstate(divide="ignore"):
            w[:K] = np.log(sizes)
        if likelihood:
            w[:K] += log_p @ counts[i] + log_nu[:, G[i]]
        w[K] = new_w[i]
        w = np.exp(w - w.max())
        cdf = np.cumsum(w)
        j = int(min(np.searchsorted(cdf, uniforms[i] * cdf[-1], side="right"), K))
        if j == K:
            p_new = sample_dirichlet(hp.alpha + counts[i], gen)
            e = np.full(H, 1.0 / H)
            e[G[i]] += 1.0
            nu_new = sample_dirichlet(e, gen)
            p = np.vstack([p, p_new])
            nu = np.vstack([nu, nu_new])
            log_p = np.vstack([log_p, np.log(p_new)])
            log_nu = np.vstack([log_nu, np.log(nu_new)])
            sizes = np.append(sizes, 0.0)
        C[i] = j
        sizes[j] += 1.0
    state.C, state.p, state.nu = C, p, nu
    return state


def canonicalize(state: ModelState) -> ModelState:
    """Renumber clusters by first appearance in agency order."""
    _, first = np.unique(state.C, return_index=True)
    order = np.unique(state.C)[np.argsort(first)]
    remap = np.empty(order.size, dtype=np.int64)
    remap[order] = np.arange(order.size)
    state.C = remap[state.C]
    state.p = state.p[order]
    state.nu = state.nu[order]
    return state


def canonical_labels(C) -> tuple[int, ...]:
    C = np.asarray(C)
    seen: dict[int, int] = {}
    return tuple(seen.setdefault(int(c), len(seen)) for c in C)


# ---------------------------------------------------------------------------
# Initialization and the chain


def initial_state(data: Dataset, hp: Hyperparameters, rng, C=None) -> ModelState:
    """All agencies in one cluster (or the given partition); everything else from the prior."""
    gen = as_generator(rng)
    n, V, H, R = data.n, data.v_count, hp.H, hp.R
    C = np.zeros(n, dtype=np.int64) if C is None else np.asarray(canonical_labels(C), dtype=np.int64)
    K = int(C.max()) + 1
    G = gen.integers(0, H, size=n).astype(np.int64)
    p = sample_dirichlet(np.tile(hp.alpha, (K, 1)), gen)
    nu = sample_dirichlet(np.full((K, H), 1.0 / H), gen)
    Z = sample_gaussian(hp.mu, hp.sigma2, gen)
    theta = sample_gamma(np.tile(theta_shapes(hp), (H, 1)), 1.0, gen).reshape(H, R)
    Xbar = gen.standard_normal((H, V, R)) * np.sqrt(shrinkage_weights(theta))[:, None, :]
    return ModelState(C, G, p, nu, Z, Xbar, theta)


Kernel = Callable[..., ModelState]


def gibbs_sweep(state: ModelState, data: Dataset, hp: Hyperparameters, seed: int, sweep: int, *,
                update_clusters: bool = True, reseat_likelihood: bool = True,
                overrides: Mapping[str, Kernel] | None = None) -> ModelState:
    """One full sweep; ``overrides`` replaces individual steps by name (test hook)."""
    ov = dict(overrides or {})

    def run(name, default, *args):
        fn = ov.get(name, default)
        return fn(*args, stream(seed, sweep, name))

    state = run("choice_probs", update_choice_probs, state, data, hp)
    state = run("allocate", allocate_components, state, data, hp)
    state = run("mixing", update_mixing_probs, state, hp)
    state = run("polya_gamma", update_polya_gamma_aug, state, data, hp)
    state = run("shared_similarity", update_shared_similarity, state, data, hp)
    state = run("latent_coords", update_latent_coords, state, data, hp)
    state = run("shrinkage", update_shrinkage, state, hp)
    if update_clusters:
        state = run("reseat", lambda s, d, h, g: reseat_clusters(s, d, h, g, likelihood=reseat_likelihood),
                    state, data, hp)
    return canonicalize(state)


def run_chain(data: Dataset, hp: Hyperparameters, cfg: ChainConfig, *, initial: ModelState | None = None,
              freeze_clusters: bool = False, callback: Callable[[int, ModelState], None] | None = None,
              progress_every: int = 0) -> ChainResult:
    """Run the sampler and keep thinned post-burn-in sweeps.

    ``freeze_clusters`` keeps C fixed (no re-seating), as used for the
    conditional summaries at a point-estimate partition.
    """
    if initial is None:
        state = initial_state(data, hp, stream(cfg.seed, 0, "init"))
    else:
        state = initial.copy()
    state = canonicalize(state)
    records: list[TraceRecord] = []
    log_joint = np.empty(cfg.iterations)
    t0 = time.perf_counter()
    for t in range(1, cfg.iterations + 1):
        try:
            with np.errstate(over="ignore", under="ignore"):
                state = gibbs_sweep(state, data, hp, cfg.seed, t, update_clusters=not freeze_clusters)
            lj = joint_log_density(state, data, hp)
        except (FloatingPointError, np.linalg.LinAlgError, SamplingError, ValueError) as exc:
            raise SamplerError(str(exc), t) from exc
        log_joint[t - 1] = lj
        if t > cfg.burnin and (t - cfg.burnin) % cfg.thin == 0:
            records.append(TraceRecord.from_state(t, state, lj))
        if callback is not None:
            callback(t, state)
        if progress_every and t % progress_every == 0:
            log.info("sweep %d/%d  K=%d  log joint %.2f", t, cfg.iterations, state.K, lj)
    meta = {
        "iterations": cfg.iterations, "burnin": cfg.burnin, "thin": cfg.thin, "seed": cfg.seed,
        "init": cfg.init, "freeze_clusters": freeze_clusters, "n_records": len(records),
        "elapsed_seconds": time.perf_counter() - t0, "version": __version__,
    }
    from .diagnostics import occupancy_check
    if records:
        warnings_ = occupancy_check(records, hp)
        for w in warnings_:
            log.warning("occupancy: %s", w)
        meta["warnings"] = warnings_
    return ChainResult(records, log_joint, state, meta)
