"""Hyperparameters, sampler state and the log-density of the joint model.

Notation follows the arrays stored in :class:`ModelState`; labels are
0-based internally. The latent coordinates are kept in scaled form
``Xbar = X Lambda^{1/2}`` together with the multiplicative-gamma variables
``theta``; the dimension weights are ``lambda_r = 1 / prod_{m<=r} theta_m``.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import expit, gammaln, logit, logsumexp

from .data import Dataset, lower_vec, n_pairs

PI_CLAMP = 1e-12
_LOG_2PI = np.log(2.0 * np.pi)


@dataclass(frozen=True, eq=False)
class Hyperparameters:
    alpha_c: float
    alpha: np.ndarray
    mu: np.ndarray
    sigma2: np.ndarray
    a1: float = 2.5
    a2: float = 3.5
    H: int = 15
    R: int = 10

    def __post_init__(self):
        alpha = np.asarray(self.alpha, dtype=np.float64)
        mu = np.asarray(self.mu, dtype=np.float64)
        sigma2 = np.broadcast_to(np.asarray(self.sigma2, dtype=np.float64), mu.shape).copy()
        if not self.alpha_c > 0:
            raise ValueError(f"alpha_c must be positive, got {self.alpha_c}")
        if alpha.ndim != 1 or alpha.size < 2 or np.any(~(alpha > 0)):
            raise ValueError("alpha must be a positive vector of length V >= 2")
        if mu.shape != (n_pairs(alpha.size),):
            raise ValueError(f"mu must have length {n_pairs(alpha.size)}")
        if np.any(~(sigma2 > 0)):
            raise ValueError("sigma2 must be positive")
        if not (self.a1 > 0 and self.a2 > 0):
            raise ValueError("a1 and a2 must be positive")
        if int(self.H) < 1 or int(self.R) < 0:
            raise ValueError("need H >= 1 and R >= 0")
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "sigma2", sigma2)
        object.__setattr__(self, "H", int(self.H))
        object.__setattr__(self, "R", int(self.R))

    @property
    def V(self) -> int:
        return self.alpha.size

    @property
    def L(self) -> int:
        return self.mu.size

    @classmethod
    def empirical(cls, data: Dataset, H: int = 15, R: int = 10, alpha_c: float = 1.0,
                  sigma2: float = 10.0, a1: float = 2.5, a2: float = 3.5) -> "Hyperparameters":
        """Data-centred defaults.

        ``mu_l`` is the logit of the edge frequency across agencies, clamped
        to [1/(2n), 1 - 1/(2n)] when that frequency is 0 or 1; ``alpha_v`` is
        the average count of product v per agency, floored at 0.01.
        """
        n = data.n
        freq = data.edges.mean(axis=0)
        freq = np.clip(freq, 1.0 / (2 * n), 1.0 - 1.0 / (2 * n))
        alpha = np.maximum(data.counts.sum(axis=0) / n, 0.01)
        return cls(alpha_c=alpha_c, alpha=alpha, mu=logit(freq),
                   sigma2=np.full(data.n_pairs, float(sigma2)), a1=a1, a2=a2, H=H, R=R)

    def with_(self, **changes) -> "Hyperparameters":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        return {
            "alpha_c": float(self.alpha_c), "alpha": self.alpha.tolist(), "mu": self.mu.tolist(),
            "sigma2": self.sigma2.tolist(), "a1": float(self.a1), "a2": float(self.a2),
            "H": self.H, "R": self.R,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Hyperparameters":
        return cls(alpha_c=d["alpha_c"], alpha=np.asarray(d["alpha"]), mu=np.asarray(d["mu"]),
                   sigma2=np.asarray(d["sigma2"]), a1=d.get("a1", 2.5), a2=d.get("a2", 3.5),
                   H=d.get("H", 15), R=d.get("R", 10))


@dataclass
class ModelState:
    """All latent quantities of one sweep.

    C : (n,) cluster labels 0..K-1, contiguous
    G : (n,) component labels 0..H-1
    p : (K, V) choice probabilities per cluster
    nu : (K, H) mixing probabilities per cluster
    Z : (L,) shared similarities
    Xbar : (H, V, R) scaled latent coordinates
    theta : (H, R) multiplicative gamma variables
    omega : (H, L) Polya-gamma auxiliaries (zero for empty components)
    """
    C: np.ndarray
    G: np.ndarray
    p: np.ndarray
    nu: np.ndarray
    Z: np.ndarray
    Xbar: np.ndarray
    theta: np.ndarray
    omega: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.omega is None:
            self.omega = np.zeros((self.Xbar.shape[0], self.Z.size))

    @property
    def K(self) -> int:
        return self.p.shape[0]

    @property
    def H(self) -> int:
        return self.Xbar.shape[0]

    def copy(self) -> "ModelState":
        return ModelState(*(np.array(getattr(self, f)) for f in
                            ("C", "G", "p", "nu", "Z", "Xbar", "theta", "omega")))

    def lambdas(self) -> np.ndarray:
        return shrinkage_weights(self.theta)

    def offsets(self) -> np.ndarray:
        """D^(h) = L(Xbar Xbar^T) for every component, shape (H, L)."""
        return component_offsets(self.Xbar)

    def edge_probs(self, clamp: bool = True) -> np.ndarray:
        return edge_probabilities(self.Z, self.Xbar, clamp=clamp)

    def validate(self, n: int | None = None) -> None:
        K = self.K
        if n is not None and self.C.shape != (n,):
            raise ValueError(f"C has shape {self.C.shape}, expected ({n},)")
        labels = np.unique(self.C)
        if not np.array_equal(labels, np.arange(K)):
            raise ValueError(f"cluster labels {labels.tolist()} are not contiguous 0..{K - 1}")
        if np.any(self.G < 0) or np.any(self.G >= self.H):
            raise ValueError("component labels out of range")
        for name in ("p", "nu"):
            rows = getattr(self, name)
            if np.any(rows < 0) or not np.allclose(rows.sum(axis=1), 1.0, atol=1e-10):
                raise ValueError(f"rows of {name} must lie on the simplex")
        if np.any(~(self.theta > 0)):
            raise ValueError("theta must be positive")


# ---------------------------------------------------------------------------
# Edge probabilities and likelihoods


def shrinkage_weights(theta: np.ndarray) -> np.ndarray:
    """lambda_r = prod_{m<=r} 1/theta_m along the last axis."""
    return np.exp(-np.cumsum(np.log(theta), axis=-1))


def component_offsets(Xbar: np.ndarray) -> np.ndarray:
    gram = np.einsum("...vr,...ur->...vu", Xbar, Xbar)
    return lower_vec(gram)


def edge_probabilities(Z: np.ndarray, Xbar: np.ndarray, clamp: bool = True) -> np.ndarray:
    """logistic(Z + L(Xbar Xbar^T)); Xbar may be one component (V, R) or a stack (H, V, R)."""
    eta = np.asarray(Z) + component_offsets(np.asarray(Xbar))
    if np.any(np.isnan(eta)):
        raise FloatingPointError("NaN in linear predictor for edge probabilities")
    pi = expit(eta)
    if clamp:
        pi = np.clip(pi, PI_CLAMP, 1.0 - PI_CLAMP)
    return pi


compute_component_probs = edge_probabilities


def log_lik_choices(counts, p_k) -> float:
    """sum_v n_v log p_v; -inf when a chosen product has zero probability."""
    counts = np.asarray(counts, dtype=np.float64)
    p_k = np.asarray(p_k, dtype=np.float64)
    used = counts > 0
    if np.any(p_k[used] <= 0):
        return -np.inf
    return float(np.sum(counts[used] * np.log(p_k[used])))


def log_lik_network(a, pi) -> float:
    a = np.asarray(getattr(a, "bits", a), dtype=np.float64)
    pi = np.asarray(pi, dtype=np.float64)
    if a.shape != pi.shape:
        raise ValueError(f"edge vector length {a.size} does not match probabilities {pi.size}")
    return float(np.sum(a * np.log(pi) + (1.0 - a) * np.log1p(-pi)))


def network_loglik_matrix(edges: np.ndarray, pis: np.ndarray) -> np.ndarray:
    """Bernoulli log-likelihood of every network under every component, shape (n, H)."""
    log_pi = np.log(pis)
    log_1m = np.log1p(-pis)
    return edges @ (log_pi - log_1m).T + log_1m.sum(axis=1)


def mixture_log_lik(a, nu_k, pis) -> float:
    """log sum_h nu_h prod_l Bern(a_l; pi^(h)_l), via log-sum-exp."""
    a = np.asarray(getattr(a, "bits", a), dtype=np.float64)
    pis = np.atleast_2d(np.asarray(pis, dtype=np.float64))
    ll = np.array([log_lik_network(a, pi) for pi in pis])
    with np.errstate(divide="ignore"):
        return float(logsumexp(ll + np.log(np.asarray(nu_k, dtype=np.float64))))


def crp_log_eppf(C, alpha_c: float) -> float:
    """log CRP probability of a partition with contiguous labels."""
    C = np.asarray(C)
    n = C.size
    sizes = np.bincount(C)
    if np.any(sizes == 0):
        raise ValueError("cluster labels must be contiguous")
    K = sizes.size
    return float(K * np.log(alpha_c) + gammaln(sizes).sum() + gammaln(alpha_c) - gammaln(alpha_c + n))


# ---------------------------------------------------------------------------
# Prior densities


def dirichlet_logpdf(x, alpha) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    alpha = np.broadcast_to(np.asarray(alpha, dtype=np.float64), x.shape)
    return (gammaln(alpha.sum(axis=-1)) - gammaln(alpha).sum(axis=-1)
            + np.sum((alpha - 1.0) * np.log(x), axis=-1))


def gamma_logpdf(x, shape, rate=1.0):
    x = np.asarray(x, dtype=np.float64)
    return shape * np.log(rate) - gammaln(shape) + (shape - 1.0) * np.log(x) - rate * x


def normal_logpdf(x, mean, var):
    x = np.asarray(x, dtype=np.float64)
    return -0.5 * (_LOG_2PI + np.log(var) + (x - mean) ** 2 / var)


def theta_shapes(hp: Hyperparameters) -> np.ndarray:
    shapes = np.full(hp.R, hp.a2, dtype=np.float64)
    if hp.R:
        shapes[0] = hp.a1
    return shapes


def log_prior_terms(state: ModelState, hp: Hyperparameters) -> dict[str, float]:
    """Every prior term of the joint density, keyed by block."""
    H = state.H
    log_lam = -np.cumsum(np.log(state.theta), axis=-1)  # (H, R)
    xbar_lp = -0.5 * (_LOG_2PI + log_lam[:, None, :]) - 0.5 * state.Xbar ** 2 * np.exp(-log_lam)[:, None, :]
    return {
        "crp": crp_log_eppf(state.C, hp.alpha_c),
        "p": float(dirichlet_logpdf(state.p, hp.alpha).sum()),
        "nu": float(dirichlet_logpdf(state.nu, np.full(H, 1.0 / H)).sum()),
        "G": float(np.log(state.nu[state.C, state.G]).sum()),
        "Z": float(normal_logpdf(state.Z, hp.mu, hp.sigma2).sum()),
        "Xbar": float(xbar_lp.sum()),
        "theta": float(gamma_logpdf(state.theta, theta_shapes(hp)[None, :]).sum()),
    }


def choices_log_lik(state: ModelState, data: Dataset) -> float:
    return float(np.sum(data.counts * np.log(state.p[state.C])))


def networks_log_lik(state: ModelState, data: Dataset, pis: np.ndarray | None = None) -> float:
    pis = state.edge_probs() if pis is None else pis
    ll = network_loglik_matrix(data.edges.astype(np.float64), pis)
    return float(ll[np.arange(data.n), state.G].sum())


def joint_log_density(state: ModelState, data: Dataset, hp: Hyperparameters) -> float:
    """log p(C, G, p, nu, Z, Xbar, theta, y, A); the Polya-gamma auxiliaries are excluded."""
    state.validate(data.n)
    terms = log_prior_terms(state, hp)
    return sum(terms.values()) + choices_log_lik(state, data) + networks_log_lik(state, data)


def component_edge_totals(G: np.ndarray, edges: np.ndarray, H: int) -> tuple[np.ndarray, np.ndarray]:
    """Agencies per component (H,) and summed edge vectors L(A^(h)) (H, L)."""
    onehot = np.zeros((H, G.size))
    onehot[G, np.arange(G.size)] = 1.0
    return np.bincount(G, minlength=H), onehot @ edges


def augmented_log_density(state: ModelState, data: Dataset, hp: Hyperparameters) -> float:
    """Joint density with the network likelihood replaced by its Polya-gamma form at fixed omega.

    For each occupied component the edge term is
    ``sum_l (A_hl - n_h/2) psi_hl - omega_hl psi_hl^2 / 2`` with
    ``psi = Z + D^(h)``; terms constant in (Z, Xbar) are dropped.
    """
    terms = log_prior_terms(state, hp)
    n_h, totals = component_edge_totals(state.G, data.edges, state.H)
    psi = state.Z[None, :] + state.offsets()
    occupied = n_h > 0
    tilt = (totals - n_h[:, None] / 2.0) * psi - 0.5 * state.omega * psi ** 2
    return sum(terms.values()) + choices_log_lik(state, data) + float(tilt[occupied].sum())
