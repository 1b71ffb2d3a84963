"""Seedable random streams and the distributions the sampler draws from.

Every stream is a PCG64 generator (period 2**128) seeded from a
``SeedSequence`` whose spawn key encodes the stream id, so a given
``(seed, stream_id)`` always reproduces the same draws and distinct ids give
independent sequences. The Gibbs engine derives one stream per
(sweep, step) pair.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from polyagamma import random_polyagamma
from scipy.special import logsumexp


class SamplingError(ValueError):
    """Invalid distribution parameters or degenerate weights."""


@dataclass(frozen=True)
class RngStream:
    seed: int
    stream_id: int | tuple[int, ...] = 0

    def generator(self) -> np.random.Generator:
        key = self.stream_id if isinstance(self.stream_id, tuple) else (self.stream_id,)
        ss = np.random.SeedSequence(int(self.seed) & 0xFFFFFFFFFFFFFFFF, spawn_key=tuple(int(k) for k in key))
        return np.random.Generator(np.random.PCG64(ss))


def as_generator(rng) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    if isinstance(rng, RngStream):
        return rng.generator()
    return np.random.default_rng(rng)


# ---------------------------------------------------------------------------
# Polya-gamma


def sample_polya_gamma(b, c, rng) -> np.ndarray | float:
    """PG(b, c) draws for integer ``b >= 1``.

    Uses the Devroye sampler of the ``polyagamma`` package, which forms each
    PG(b, c) draw as a sum of ``b`` exact PG(1, c) rejection draws. ``b`` and
    ``c`` broadcast against each other; a scalar pair returns a float.
    """
    b_arr, c_arr = np.broadcast_arrays(np.asarray(b), np.asarray(c, dtype=np.float64))
    if np.any(b_arr != np.floor(b_arr)) or np.any(b_arr < 1):
        raise SamplingError("Polya-gamma shape must be an integer >= 1")
    if np.any(~np.isfinite(c_arr)):
        raise SamplingError("Polya-gamma tilting parameter must be finite")
    out = random_polyagamma(np.ascontiguousarray(b_arr, dtype=np.float64), np.ascontiguousarray(c_arr),
                            method="devroye", random_state=as_generator(rng))
    if b_arr.ndim == 0:
        return float(np.asarray(out).reshape(()))
    return np.asarray(out, dtype=np.float64).reshape(b_arr.shape)


def polya_gamma_mean(b, c):
    """E[PG(b, c)] = b tanh(c/2) / (2c), with limit b/4 at c = 0."""
    c = np.asarray(c, dtype=np.float64)
    safe = np.where(np.abs(c) < 1e-8, 1.0, c)
    return np.where(np.abs(c) < 1e-8, np.asarray(b) / 4.0, np.asarray(b) * np.tanh(safe / 2.0) / (2.0 * safe))


# ---------------------------------------------------------------------------
# Standard distributions


def sample_gamma(shape, rate, rng, size=None):
    shape = np.asarray(shape, dtype=np.float64)
    rate = np.asarray(rate, dtype=np.float64)
    if np.any(shape <= 0) or np.any(rate <= 0):
        raise SamplingError("gamma shape and rate must be positive")
    return as_generator(rng).gamma(shape, 1.0 / rate, size=size)


def sample_dirichlet(alpha, rng) -> np.ndarray:
    """Dirichlet draw; a 2-D ``alpha`` gives one draw per row.

    Gamma variates are generated on the log scale (``log G(a+1) + log(U)/a``)
    so that tiny shapes such as 1/H do not collapse to exact zeros; entries
    are floored at the smallest normal double and renormalized.
    """
    alpha = np.asarray(alpha, dtype=np.float64)
    if np.any(~(alpha > 0)):
        raise SamplingError("Dirichlet parameters must be positive")
    gen = as_generator(rng)
    log_g = np.log(gen.gamma(alpha + 1.0)) + np.log(gen.random(alpha.shape)) / alpha
    log_p = log_g - logsumexp(log_g, axis=-1, keepdims=True)
    p = np.maximum(np.exp(log_p), np.finfo(float).tiny)
    return p / p.sum(axis=-1, keepdims=True)


def _check_weights(w):
    if np.any(np.isnan(w)):
        raise SamplingError("NaN weight")


def sample_categorical(weights, rng) -> int:
    w = np.asarray(weights, dtype=np.float64)
    _check_weights(w)
    if np.any(w < 0):
        raise SamplingError("categorical weights must be nonnegative")
    total = w.sum()
    if not total > 0 or not np.isfinite(total):
        raise SamplingError("categorical weights must have a positive finite sum")
    cdf = np.cumsum(w)
    u = as_generator(rng).random() * cdf[-1]
    return int(min(np.searchsorted(cdf, u, side="right"), w.size - 1))


def sample_categorical_log(log_weights, rng) -> int:
    """Categorical draw from unnormalized log-weights (log-sum-exp normalized)."""
    lw = np.asarray(log_weights, dtype=np.float64)
    _check_weights(lw)
    top = lw.max()
    if not np.isfinite(top):
        raise SamplingError("all categorical log-weights are -inf")
    return sample_categorical(np.exp(lw - top), rng)


def sample_categorical_log_rows(log_weights, rng) -> np.ndarray:
    """One categorical draw per row of an (n, K) log-weight matrix."""
    lw = np.asarray(log_weights, dtype=np.float64)
    _check_weights(lw)
    top = lw.max(axis=1, keepdims=True)
    if not np.all(np.isfinite(top)):
        raise SamplingError("a row of categorical log-weights is entirely -inf")
    cdf = np.cumsum(np.exp(lw - top), axis=1)
    u = as_generator(rng).random(lw.shape[0]) * cdf[:, -1]
    idx = (cdf <= u[:, None]).sum(axis=1)
    return np.minimum(idx, lw.shape[1] - 1)


def sample_gaussian(mean, variance, rng, size=None):
    """Independent Gaussian draws; ``variance`` may be a vector (diagonal covariance)."""
    variance = np.asarray(variance, dtype=np.float64)
    if np.any(~(variance > 0)):
        raise SamplingError("Gaussian variance must be positive")
    return as_generator(rng).normal(mean, np.sqrt(variance), size=size)


def sample_gaussian_precision(precision, linear, rng) -> np.ndarray:
    """Draw from N(P^-1 b, P^-1) given the precision P and the linear term b.

    Uses the Cholesky factor of P; ``numpy.linalg.LinAlgError`` propagates
    when P is not positive definite.
    """
    P = np.asarray(precision, dtype=np.float64)
    b = np.asarray(linear, dtype=np.float64)
    chol = np.linalg.cholesky(P)
    mean = np.linalg.solve(chol.T, np.linalg.solve(chol, b))
    eps = as_generator(rng).standard_normal(b.shape[0])
    return mean + np.linalg.solve(chol.T, eps)
