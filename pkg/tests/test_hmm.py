import itertools
import math

import numpy as np
import pytest

from kontext.errors import CertificateUnroutable, DegenerateInit, DimensionMismatch
from kontext.estimators import exact_bruteforce
from kontext.generators import GhzSpec, RandomModelSpec, ghz_model, noncontextual_model, random_model
from kontext.hmm import (
    Hmm,
    average_log_likelihood,
    baum_welch,
    hmm_conditionals,
    hmm_from_partition,
    hmm_log_prob,
    hmm_prob,
    kl_divergence,
    latent_marginal,
    missing_support,
    random_hmm,
    sample_outputs,
    support_violation,
)
from kontext.model import Context, EmpiricalModel, SectionCache


def brute_force_prob(h: Hmm, x, o) -> float:
    """Sum over every latent path, straight from the stepwise factorization."""
    ell = len(x)
    total = 0.0
    for path in itertools.product(range(h.m), repeat=max(0, ell - 1)):
        lam = (0,) + path
        p = 1.0
        for i in range(ell):
            p *= h.q[lam[i], x[i], o[i]]
            if i < ell - 1:
                p *= h.t[lam[i], x[i], o[i], lam[i + 1]]
        total += p
    return total


# -- forward recursion --------------------------------------------------------


def test_single_state_prob_is_emission_product():
    h = random_hmm(1, 2, 3, seed=0)
    x, o = (0, 1, 0), (2, 0, 1)
    want = h.q[0, 0, 2] * h.q[0, 1, 0] * h.q[0, 0, 1]
    assert hmm_prob(h, x, o) == pytest.approx(want, rel=1e-12)


def test_length_one_prob_is_single_emission():
    h = random_hmm(3, 2, 2, seed=1)
    assert hmm_prob(h, (1,), (0,)) == pytest.approx(h.q[0, 1, 0], rel=1e-12)


@pytest.mark.parametrize("m", [2, 3, 4])
@pytest.mark.parametrize("ell", [2, 3, 4, 5])
def test_forward_matches_path_enumeration(m, ell):
    h = random_hmm(m, 3, 2, seed=m * 10 + ell)
    rng = np.random.default_rng(ell)
    for _ in range(3):
        x = tuple(rng.integers(0, 3, size=ell))
        o = tuple(rng.integers(0, 2, size=ell))
        want = brute_force_prob(h, x, o)
        assert hmm_prob(h, x, o) == pytest.approx(want, rel=1e-10)


def test_prob_rejects_length_mismatch():
    h = random_hmm(2, 2, 2, seed=0)
    with pytest.raises(DimensionMismatch):
        hmm_prob(h, (0, 1), (0,))


def test_latent_marginal_oracle_and_edge_cases():
    h = random_hmm(3, 2, 2, seed=4)
    assert latent_marginal(h, ()).tolist() == [1.0, 0.0, 0.0]
    h1 = random_hmm(1, 2, 2, seed=4)
    assert latent_marginal(h1, (0, 1, 1)) == pytest.approx([1.0], abs=1e-12)
    # brute force: sum over outputs and intermediate states
    x = (0, 1)
    want = np.zeros(3)
    for o in itertools.product(range(2), repeat=2):
        for path in itertools.product(range(3), repeat=2):
            lam = (0,) + path
            p = 1.0
            for i in range(2):
                p *= h.q[lam[i], x[i], o[i]] * h.t[lam[i], x[i], o[i], lam[i + 1]]
            want[lam[-1]] += p
    got = latent_marginal(h, x)
    assert got.sum() == pytest.approx(1.0, abs=1e-12)
    assert np.allclose(got, want, atol=1e-12)


def test_sampling_follows_model_distribution():
    h = random_hmm(2, 2, 2, seed=9)
    rng = np.random.default_rng(0)
    x = (0, 1)
    counts = {}
    n = 40_000
    for _ in range(n):
        o = sample_outputs(h, x, rng)
        counts[o] = counts.get(o, 0) + 1
    for o in itertools.product(range(2), repeat=2):
        assert counts.get(o, 0) / n == pytest.approx(hmm_prob(h, x, o), abs=0.01)


# -- EM ------------------------------------------------------------------------


def test_baum_welch_monotone_loglikelihood():
    rng = np.random.default_rng(0)
    for trial in range(10):
        m = random_model(RandomModelSpec(n=3, sparsity=2, seed=trial))
        _, rep = baum_welch(m, int(rng.integers(1, 4)), init_seed=trial, max_iters=60)
        lls = np.array(rep.log_likelihoods)
        assert (np.diff(lls) >= -1e-9).all()


def test_baum_welch_rows_stay_normalized():
    m = random_model(RandomModelSpec(n=3, sparsity=2, seed=5))
    h, _ = baum_welch(m, 3, init_seed=0, max_iters=40)
    assert np.allclose(h.q.sum(axis=2), 1.0, atol=1e-9)
    assert np.allclose(h.t.sum(axis=3), 1.0, atol=1e-9)


def test_baum_welch_point_mass_reaches_zero_kl():
    # a noncontextual point-mass target is memorizable by emissions alone
    m = EmpiricalModel(
        2, 2,
        (Context(0, (0, 1)),),
        ({(0, 1): 1.0},),
    )
    h, rep = baum_welch(m, 1, init_seed=0)
    assert rep.final_kl <= 1e-9


def test_baum_welch_self_recovery():
    # target generated by a 2-state machine, retrained at m=2: best-of-5
    gen = random_hmm(2, 3, 2, seed=12)
    contexts = (Context(0, (0, 1)), Context(1, (2, 1)))
    dists = []
    for ctx in contexts:
        x = ctx.observables
        dist = {}
        for o in itertools.product(range(2), repeat=2):
            p = hmm_prob(gen, x, o)
            if p > 0:
                dist[o] = p
        total = sum(dist.values())
        dists.append({o: p / total for o, p in dist.items()})
    target = EmpiricalModel(3, 2, contexts, tuple(dists))
    best = math.inf
    for seed in range(5):
        _, rep = baum_welch(target, 2, init_seed=seed)
        best = min(best, rep.final_kl)
    assert best <= 1e-2


def test_degenerate_init_rejected():
    m = random_model(RandomModelSpec(n=3, sparsity=2, seed=1))
    bad_q = np.zeros((2, 3, 3))
    bad_q[:, :, 0] = 1.0
    bad_q[0, 0, :] = 0.0
    t = np.full((2, 3, 3, 2), 0.5)
    with pytest.raises(DegenerateInit):
        baum_welch(m, 2, init=(bad_q, t))


# -- divergences ------------------------------------------------------------------


def test_kl_zero_when_model_reproduces_target(translation_model):
    cache = SectionCache(translation_model)
    w = (cache.joint([0]).first_section(), cache.joint([1]).first_section())
    h = hmm_from_partition(translation_model, ((0,), (1,)), w)
    assert kl_divergence(translation_model, h) == 0.0
    assert kl_divergence(translation_model, h, "model_to_target") == 0.0


def test_kl_infinite_when_supported_outcome_missed():
    m = EmpiricalModel(1, 2, (Context(0, (0,)),), ({(0,): 0.5, (1,): 0.5},))
    q = np.zeros((1, 1, 2))
    q[0, 0, 0] = 1.0
    t = np.ones((1, 1, 2, 1))
    h = Hmm(1, 1, 2, q, t)
    assert kl_divergence(m, h) == math.inf
    assert missing_support(m, h) == [(0, (1,))]


def test_kl_uniform_cases():
    m = EmpiricalModel(1, 4, (Context(0, (0,)),), ({(i,): 0.25 for i in range(4)},))
    q = np.full((1, 1, 4), 0.25)
    t = np.ones((1, 1, 4, 1))
    h = Hmm(1, 1, 4, q, t)
    assert kl_divergence(m, h) == pytest.approx(0.0, abs=1e-12)
    assert kl_divergence(m, h, "model_to_target") == pytest.approx(0.0, abs=1e-12)
    point = np.zeros((1, 1, 4))
    point[0, 0, 1] = 1.0
    hp = Hmm(1, 1, 4, point, t)
    # point mass misses three supported outcomes one way, leaks nothing the other
    assert kl_divergence(m, hp) == math.inf
    assert math.isfinite(kl_divergence(m, hp, "model_to_target"))


def test_kl_direction_argument_validated(translation_model):
    h = random_hmm(1, 3, 2, seed=0)
    with pytest.raises(ValueError):
        kl_divergence(translation_model, h, "sideways")


# -- support violations --------------------------------------------------------------


def test_trained_single_state_violates_on_contextual_target(translation_model):
    h, _ = baum_welch(translation_model, 1, init_seed=0)
    hits = support_violation(translation_model, h)
    assert hits
    for cid, outcome in hits:
        assert outcome not in translation_model.distribution_by_id(cid)
    assert kl_divergence(translation_model, h, "model_to_target") == math.inf


def test_certificate_router_on_translation_model(translation_model):
    k, cert = exact_bruteforce(translation_model)
    assert k == 1
    h = hmm_from_partition(translation_model, cert.parts, cert.witness_sections)
    assert support_violation(translation_model, h) == []
    assert math.isfinite(kl_divergence(translation_model, h, "model_to_target"))


def test_certificate_router_on_ghz3_first_basis_split():
    model = ghz_model(GhzSpec(3))
    # split by the first particle's basis choice: routable at the first input
    part_x = tuple(c.id for c in model.contexts if c.id < 4)
    part_y = tuple(c.id for c in model.contexts if c.id >= 4)
    cache = SectionCache(model)
    witnesses = (
        cache.joint(list(part_x)).first_section(),
        cache.joint(list(part_y)).first_section(),
    )
    h = hmm_from_partition(model, (part_x, part_y), witnesses)
    assert support_violation(model, h) == []
    assert math.isfinite(kl_divergence(model, h, "model_to_target"))


def test_certificate_unroutable_when_inputs_identical():
    # all contexts share one observable tuple: prefixes never diverge
    m = random_model(RandomModelSpec(n=3, sparsity=1, seed=3, target_k=1))
    k, cert = exact_bruteforce(m)
    assert k >= 1
    with pytest.raises(CertificateUnroutable):
        hmm_from_partition(m, cert.parts, cert.witness_sections)


def test_noncontextual_single_state_certificate(translation_model):
    m = noncontextual_model(4, 3, seed=2)
    k, cert = exact_bruteforce(m)
    assert k == 0
    h = hmm_from_partition(m, cert.parts, cert.witness_sections)
    assert support_violation(m, h) == []


def test_support_violation_eps_threshold(translation_model):
    h, _ = baum_welch(translation_model, 1, init_seed=1)
    conds = hmm_conditionals(h, translation_model)
    # above the largest conditional probability nothing can violate
    top = max(max(v.values()) for v in conds.values())
    assert support_violation(translation_model, h, eps=top + 1.0) == []


def test_hmm_json_roundtrip(tmp_path):
    from kontext.hmm import load_hmm, save_hmm

    h = random_hmm(3, 2, 2, seed=6)
    path = str(tmp_path / "h.json")
    save_hmm(h, path)
    back = load_hmm(path)
    assert back.m == h.m
    assert np.allclose(back.q, h.q)
    assert np.allclose(back.t, h.t)


def test_average_log_likelihood_matches_kl(translation_model):
    h, _ = baum_welch(translation_model, 2, init_seed=0)
    ll = average_log_likelihood(translation_model, h)
    # target entropy is zero (point masses), so -ll equals the divergence
    assert -ll == pytest.approx(kl_divergence(translation_model, h), abs=1e-9)
