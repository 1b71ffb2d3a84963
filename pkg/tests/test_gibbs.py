import math

import numpy as np
import pytest
from scipy.special import gammaln

from crossnet.data import Dataset, incident_edges, n_pairs
from crossnet.gibbs import (ChainConfig, SamplerError, TraceRecord, allocate_components, canonical_labels,
                            canonicalize, choice_probs_conditional, gibbs_sweep, initial_state,
                            latent_row_conditional, marginal_choices_new_cluster,
                            marginal_component_new_cluster, mixing_probs_conditional, reseat_clusters,
                            run_chain, shared_similarity_conditional, shrinkage_conditional, update_latent_coords,
                            update_polya_gamma_aug, update_shared_similarity)
from crossnet.model import Hyperparameters, ModelState, component_edge_totals, shrinkage_weights

from conftest import random_problem
from ratio_checks import CHECKS, max_discrepancy


def _hp(V, H=1, R=1, **kw):
    L = n_pairs(V)
    base = dict(alpha_c=1.0, alpha=np.ones(V), mu=np.zeros(L), sigma2=np.full(L, 10.0), H=H, R=R)
    base.update(kw)
    return Hyperparameters(**base)


def _state(C, G, V, H=1, R=1, **kw):
    C, G = np.asarray(C), np.asarray(G)
    K = C.max() + 1
    L = n_pairs(V)
    s = ModelState(C, G, np.full((K, V), 1 / V), np.full((K, H), 1 / H), np.zeros(L),
                   np.zeros((H, V, R)), np.ones((H, R)))
    for k, v in kw.items():
        setattr(s, k, v)
    return s


@pytest.mark.parametrize("name", sorted(CHECKS))
def test_conditional_matches_joint(name):
    assert max_discrepancy(name, trials=20, seed=3) < 1e-8


def test_choice_probs_conjugate():
    data = Dataset.from_arrays(np.array([[2, 3]]), np.zeros((1, 1), dtype=int))
    assert choice_probs_conditional(_state([0], [0], 2), data, _hp(2)).tolist() == [[3.0, 4.0]]


def test_choice_probs_per_cluster():
    counts = np.array([[1, 0, 2], [4, 1, 0], [0, 2, 2]])
    data = Dataset.from_arrays(counts, np.zeros((3, 3), dtype=int))
    hp = _hp(3, alpha=np.array([0.5, 1.0, 2.0]))
    got = choice_probs_conditional(_state([0, 1, 0], [0, 0, 0], 3), data, hp)
    assert np.allclose(got, [[1.5, 3.0, 6.0], [4.5, 2.0, 2.0]])


def test_allocation_example():
    # pi = 0.9 vs 0.1 on a single edge that is present -> 0.45 / (0.45 + 0.05)
    data = Dataset.from_arrays(np.array([[1, 1]]), np.array([[1]]))
    s = _state([0], [0], 2, H=2, R=0, Xbar=np.zeros((2, 2, 0)), theta=np.ones((2, 0)))
    pis = np.array([[0.9], [0.1]])
    rng = np.random.default_rng(0)
    draws = [allocate_components(s.copy(), data, None, rng, pis=pis).G[0] for _ in range(20_000)]
    freq = np.mean(np.array(draws) == 0)
    assert abs(freq - 0.9) < 4 * math.sqrt(0.09 / 20_000)


def test_allocation_single_component_and_degenerate_nu():
    rng = np.random.default_rng(1)
    data, hp, s = random_problem(rng, H=1)
    assert np.all(allocate_components(s, data, hp, rng).G == 0)
    data, hp, s = random_problem(rng, H=3, K=1)
    s.nu = np.array([[1.0, 0.0, 0.0]])
    assert np.all(allocate_components(s, data, hp, rng).G == 0)


def test_mixing_examples():
    s = _state([0, 0, 0], [0, 0, 0], 3, H=2)
    assert mixing_probs_conditional(s, None).tolist() == [[3.5, 0.5]]
    s = _state([0, 1, 0, 1, 1], [2, 0, 2, 0, 1], 3, H=3)
    expected = np.array([[0, 0, 2], [2, 1, 0]]) + 1 / 3
    assert np.allclose(mixing_probs_conditional(s, None), expected)


def test_polya_gamma_mean_and_empty_component():
    data = Dataset.from_arrays(np.ones((3, 2), dtype=int), np.zeros((3, 1), dtype=int))
    hp = _hp(2, H=2, R=0)
    s = _state([0, 0, 0], [0, 0, 0], 2, H=2, R=0, Z=np.array([1.0]),
               Xbar=np.zeros((2, 2, 0)), theta=np.ones((2, 0)))
    rng = np.random.default_rng(4)
    draws = np.array([update_polya_gamma_aug(s, data, hp, rng).omega[:, 0] for _ in range(20_000)])
    target = 3 * math.tanh(0.5) / 2
    se = draws[:, 0].std() / math.sqrt(len(draws))
    assert abs(draws[:, 0].mean() - target) < 4 * se
    assert np.all(draws[:, 1] == 0.0)


def test_shared_similarity_example():
    data = Dataset.from_arrays(np.ones((1, 2), dtype=int), np.array([[1]]))
    hp = _hp(2, R=0)
    s = _state([0], [0], 2, R=0, Xbar=np.zeros((1, 2, 0)), theta=np.ones((1, 0)))
    s.omega = np.array([[0.25]])
    mean, var = shared_similarity_conditional(s, data, hp)
    assert var[0] == pytest.approx(1 / 0.35)
    assert mean[0] == pytest.approx(0.5 / 0.35)
    assert mean[0] == pytest.approx(1.4286, abs=1e-4) and var[0] == pytest.approx(2.857, abs=1e-3)


def test_shared_similarity_prior_when_all_empty():
    rng = np.random.default_rng(2)
    data, hp, s = random_problem(rng, H=2)
    s.G[:] = 0
    s.omega[1] = np.nan        # an empty component's omega must never be read
    s.omega[0] = 0.0
    s.Xbar[0] = 0.0
    mean, var = shared_similarity_conditional(s, data, hp)
    assert np.all(np.isfinite(mean))
    # omega = 0 and no offset: only the count term moves the mean
    totals = data.edges.sum(axis=0)
    assert np.allclose(var, hp.sigma2)
    assert np.allclose(mean, hp.sigma2 * (hp.mu / hp.sigma2 + totals - data.n / 2))


def test_latent_row_scalar_example():
    # R=1, V=3: row 1 touches edges (2,1) and (3,1) with partners rows 2 and 3
    data = Dataset.from_arrays(np.ones((2, 3), dtype=int), np.array([[1, 0, 1], [1, 1, 0]]))
    s = _state([0, 0], [0, 0], 3, Xbar=np.array([[[0.3], [-0.5], [1.2]]]), theta=np.array([[2.0]]),
               Z=np.array([0.1, -0.2, 0.4]))
    s.omega = np.array([[0.7, 0.2, 0.9]])
    n_h, totals = component_edge_totals(s.G, data.edges, 1)
    P, b = latent_row_conditional(s, 0, 0, n_h[0], totals[0])
    xs = np.array([-0.5, 1.2])
    om = np.array([0.7, 0.2])
    resid = np.array([2 - 1 - 0.7 * 0.1, 1 - 1 - 0.2 * -0.2])
    assert P[0, 0] == pytest.approx(np.sum(om * xs ** 2) + 2.0, abs=1e-12)
    assert b[0] == pytest.approx(np.sum(xs * resid), abs=1e-12)


def test_latent_kernel_matches_reference(rng):
    for _ in range(20):
        data, hp, s = random_problem(rng, V=5, R=3)
        s.G[:] = 0
        n_h, totals = component_edge_totals(s.G, data.edges, s.H)
        ref = s.copy()
        got = s.copy()
        eps_rng = np.random.default_rng(99)
        # the kernel consumes the stream in the same order: eps of component 0, then prior draws for the rest
        update_latent_coords(got, data, hp, eps_rng)
        eps = np.random.default_rng(99).standard_normal((hp.V, hp.R))
        for v in range(hp.V):
            P, b = latent_row_conditional(ref, 0, v, n_h[0], totals[0])
            Lc = np.linalg.cholesky(P)
            ref.Xbar[0, v] = np.linalg.solve(Lc.T, np.linalg.solve(Lc, b) + eps[v])
        assert np.allclose(got.Xbar[0], ref.Xbar[0], atol=1e-12)


def test_latent_prior_when_omega_zero():
    # omega = 0 and no count term (n_h = 0, no edges): the conditional is the prior N(0, Lambda)
    V, R = 4, 2
    s = _state([0], [0], V, R=R, theta=np.array([[2.0, 3.0]]))
    s.Xbar = np.random.default_rng(0).normal(size=(1, V, R))
    s.omega = np.zeros((1, n_pairs(V)))
    P, b = latent_row_conditional(s, 0, 1, 0, np.zeros(n_pairs(V)))
    assert np.allclose(P, np.diag(1 / shrinkage_weights(s.theta[0])))
    assert np.allclose(b, 0.0)


def test_empty_component_refreshed_from_prior(rng):
    data, hp, s = random_problem(rng, H=2, R=2)
    s.G[:] = 0
    s.omega[1] = np.nan
    before = s.Xbar[1].copy()
    update_latent_coords(s, data, hp, rng)
    assert np.all(np.isfinite(s.Xbar)) and not np.allclose(before, s.Xbar[1])


def test_shrinkage_examples():
    V, R = 3, 2
    hp = _hp(V, R=R)
    s = _state([0], [0], V, R=R, theta=np.array([[1.7, 0.4]]))
    for r in range(R):
        shape, rate = shrinkage_conditional(s, hp, r)
        assert shape[0] == ((2.5 + V * R / 2) if r == 0 else (3.5 + V * (R - r) / 2))
        assert rate[0] == 1.0
    hp = _hp(2, R=1)
    s = _state([0], [0], 2, R=1, Xbar=np.ones((1, 2, 1)))
    shape, rate = shrinkage_conditional(s, hp, 0)
    assert (shape[0], rate[0]) == (3.5, 2.0)


def test_marginal_examples():
    assert marginal_choices_new_cluster([1, 1], [1, 1]) == pytest.approx(math.log(1 / 6))
    assert marginal_choices_new_cluster([2, 0], [1, 1]) == pytest.approx(math.log(1 / 3))
    assert marginal_choices_new_cluster([0, 0, 0], [0.3, 1, 2]) == 0.0
    assert marginal_component_new_cluster(15) == pytest.approx(math.log(1 / 15))
    assert marginal_component_new_cluster(1) == 0.0


@pytest.mark.parametrize("H", range(2, 51))
def test_marginal_component_closed_form(H):
    a = 1.0 / H
    # Gamma(H a) / Gamma(a)^H * Gamma(a + 1) Gamma(a)^(H-1) / Gamma(H a + 1)
    direct = gammaln(H * a) - H * gammaln(a) + gammaln(a + 1) + (H - 1) * gammaln(a) - gammaln(H * a + 1)
    assert abs(direct - marginal_component_new_cluster(H)) < 1e-12


def test_reseat_labels_contiguous(rng):
    for _ in range(30):
        data, hp, s = random_problem(rng, n=10)
        reseat_clusters(s, data, hp, rng)
        K = s.K
        assert sorted(set(s.C.tolist())) == list(range(K))
        assert s.p.shape[0] == K == s.nu.shape[0] and K <= data.n
        assert np.allclose(s.p.sum(axis=1), 1) and np.allclose(s.nu.sum(axis=1), 1)


def test_reseat_single_agency(rng):
    data, hp, s = random_problem(rng, n=1)
    for _ in range(20):
        reseat_clusters(s, data, hp, rng)
        assert s.C.tolist() == [0] and s.K == 1


def test_reseat_tiny_concentration_coclusters(rng):
    data, hp, s = random_problem(rng, n=2, K=2)
    data = Dataset.from_arrays(np.vstack([data.counts[0]] * 2), np.vstack([data.edges[0]] * 2))
    hp = hp.with_(alpha_c=1e-8)
    together = 0
    for _ in range(200):
        reseat_clusters(s, data, hp, rng)
        together += s.C[0] == s.C[1]
    assert together >= 199


def test_canonicalize_first_appearance():
    s = _state([2, 0, 2, 1], [0, 0, 0, 0], 3)
    s.p = np.arange(9.0).reshape(3, 3)
    canonicalize(s)
    assert s.C.tolist() == [0, 1, 0, 2]
    assert s.p[:, 0].tolist() == [6.0, 0.0, 3.0]
    assert canonical_labels([5, 5, 1, 3]) == (0, 0, 1, 2)


def _toy(seed=0, n=6, V=4):
    rng = np.random.default_rng(seed)
    data = Dataset.from_arrays(rng.integers(0, 4, (n, V)) + 1, rng.integers(0, 2, (n, n_pairs(V))))
    return data, Hyperparameters.empirical(data, H=3, R=2)


def test_run_chain_smoke():
    data, hp = _toy(n=2)
    res = run_chain(data, hp, ChainConfig(iterations=1, burnin=0))
    assert len(res.records) == 1
    rec = res.records[0]
    rec.to_state().validate(data.n)
    assert np.isfinite(rec.log_joint)
    back = TraceRecord.from_json(rec.to_json())
    assert np.array_equal(back.C, rec.C) and np.array_equal(back.Xbar, rec.Xbar)


def test_run_chain_deterministic():
    data, hp = _toy(1)
    cfg = ChainConfig(iterations=30, burnin=10, thin=2, seed=5)
    a, b = run_chain(data, hp, cfg), run_chain(data, hp, cfg)
    assert np.array_equal(a.log_joint, b.log_joint)
    assert [r.to_json() for r in a.records] == [r.to_json() for r in b.records]
    assert len(a.records) == 10
    c = run_chain(data, hp, ChainConfig(iterations=30, burnin=10, thin=2, seed=6))
    assert not np.array_equal(a.log_joint, c.log_joint)


def test_frozen_clusters_stay_put():
    data, hp = _toy(2)
    init = initial_state(data, hp, np.random.default_rng(0), C=[0, 1, 0, 2, 1, 0])
    res = run_chain(data, hp, ChainConfig(iterations=20, burnin=0, init="given"), initial=init,
                    freeze_clusters=True)
    assert all(r.C.tolist() == [0, 1, 0, 2, 1, 0] for r in res.records)


def test_chain_config_validation():
    with pytest.raises(ValueError):
        ChainConfig(iterations=10, burnin=10)
    with pytest.raises(ValueError):
        ChainConfig(thin=0)
    with pytest.raises(ValueError):
        ChainConfig(init="random")


def test_sampler_error_carries_sweep():
    data, hp = _toy(3)

    def broken(state, data, hp, rng):
        state.Z = np.full_like(state.Z, np.nan)
        return state

    import crossnet.gibbs as g
    original = g.gibbs_sweep

    def sweep(state, data, hp, seed, t, **kw):
        return original(state, data, hp, seed, t, overrides={"shared_similarity": broken} if t == 3 else None, **kw)

    g.gibbs_sweep = sweep
    try:
        with pytest.raises(SamplerError) as info:
            run_chain(data, hp, ChainConfig(iterations=5, burnin=0))
    finally:
        g.gibbs_sweep = original
    assert info.value.iteration == 3


def test_sweep_keeps_invariants(rng):
    for seed in range(5):
        data, hp, s = random_problem(rng, n=9)
        s = gibbs_sweep(s, data, hp, seed, 1)
        s.validate(data.n)
        assert np.bincount(s.C).sum() == data.n
        assert canonical_labels(s.C) == tuple(s.C.tolist())


def test_sweep_equivariant_to_component_relabeling(rng):
    # conditionals of everything except G depend on components only through sums over h
    data, hp, s = random_problem(rng, n=8, H=3)
    perm = np.array([2, 0, 1])
    inv = np.argsort(perm)
    t = ModelState(s.C.copy(), inv[s.G], s.p.copy(), s.nu[:, perm], s.Z.copy(), s.Xbar[perm], s.theta[perm])
    t.omega = s.omega[perm]
    m1, v1 = shared_similarity_conditional(s, data, hp)
    m2, v2 = shared_similarity_conditional(t, data, hp)
    assert np.allclose(m1, m2) and np.allclose(v1, v2)
    assert np.allclose(mixing_probs_conditional(s, hp)[:, perm], mixing_probs_conditional(t, hp))
    for r in range(hp.R):
        a = shrinkage_conditional(s, hp, r)[1][perm]
        b = shrinkage_conditional(t, hp, r)[1]
        assert np.allclose(a, b)


def test_update_shared_similarity_uses_conditional(rng):
    data, hp, s = random_problem(rng)
    mean, var = shared_similarity_conditional(s, data, hp)
    draws = np.array([update_shared_similarity(s.copy(), data, hp, np.random.default_rng(k)).Z
                      for k in range(4000)])
    se = np.sqrt(var / 4000)
    assert np.all(np.abs(draws.mean(axis=0) - mean) < 4.5 * se)


def test_incident_edges_cover_each_pair_twice():
    others, edges = incident_edges(5)
    assert np.all(np.bincount(edges.ravel()) == 2)
