import itertools
import math

import numpy as np
import pytest

from kontext.errors import DimensionMismatch, ZeroPrefix
from kontext.generators import RandomModelSpec, random_model
from kontext.hmm import hmm_prob, random_hmm
from kontext.model import Context, EmpiricalModel
from kontext.mps import (
    ConditionalChain,
    MpsModel,
    QTrainReport,
    born_prob,
    conditional_prob,
    conditionals_with_leak,
    kl_divergence_mps,
    load_mps,
    nll_and_grad,
    random_mps,
    save_mps,
    train,
)


def dense_probs(model: MpsModel) -> dict[tuple[int, ...], float]:
    """Oracle: expand every token configuration by direct contraction."""
    total = {}
    for tokens in itertools.product(*[range(d) for d in model.phys_dims]):
        total[tokens] = abs(model.amplitude(tokens)) ** 2
    z = sum(total.values())
    return {t: p / z for t, p in total.items()}


@pytest.fixture
def small_target():
    return EmpiricalModel(
        num_observables=3,
        num_outcomes=2,
        contexts=(Context(0, (0, 2)), Context(1, (1, 2))),
        distributions=({(0, 0): 0.5, (0, 1): 0.5}, {(1, 1): 1.0}),
    )


# -- born probabilities ---------------------------------------------------------


def test_point_mass_product_state():
    tensors = []
    for tok in (1, 0, 1):
        t = np.zeros((1, 2, 1), dtype=complex)
        t[0, tok, 0] = 1.0
        tensors.append(t)
    m = MpsModel((2, 2, 2), (1, 1, 1), tensors)
    assert born_prob(m, (1, 0, 1)) == pytest.approx(1.0)
    assert born_prob(m, (0, 0, 1)) == 0.0


def test_uniform_superposition_product_state():
    tensors = [np.full((1, 2, 1), 1 / math.sqrt(2), dtype=complex) for _ in range(4)]
    m = MpsModel((2, 2, 2, 2), (1, 1, 1, 1), tensors)
    for tokens in itertools.product((0, 1), repeat=4):
        assert born_prob(m, tokens) == pytest.approx(1 / 16, rel=1e-12)


@pytest.mark.parametrize("bond", [2, 3, 4])
def test_born_matches_dense_oracle(bond):
    m = random_mps((2, 3, 2, 2), (0, 1, 0, 1), bond_dim=bond, seed=bond)
    want = dense_probs(m)
    for tokens, p in want.items():
        assert born_prob(m, tokens) == pytest.approx(p, rel=1e-10)


@pytest.mark.parametrize("sites,phys", [(4, 2), (5, 2), (4, 3)])
def test_born_normalization_exhaustive(sites, phys):
    m = random_mps((phys,) * sites, (1,) * sites, bond_dim=3, seed=sites * phys)
    total = sum(
        born_prob(m, tokens)
        for tokens in itertools.product(range(phys), repeat=sites)
    )
    assert total == pytest.approx(1.0, abs=1e-8)
    assert m.transfer_norm() == pytest.approx(1.0, abs=1e-8)


def test_amplitude_validates_token_count():
    m = random_mps((2, 2), (1, 1), bond_dim=2, seed=0)
    with pytest.raises(DimensionMismatch):
        born_prob(m, (0,))


# -- conditionals -----------------------------------------------------------------


def test_conditional_point_mass_and_product():
    # point mass: conditional is 1 on its own continuation
    tensors = []
    for tok in (0, 1):
        t = np.zeros((1, 2, 1), dtype=complex)
        t[0, tok, 0] = 1.0
        tensors.append(t)
    m = MpsModel((2, 2), (0, 1), tensors)
    assert conditional_prob(m, (0,), (1,)) == pytest.approx(1.0)
    # product state: prefix cancels entirely
    tensors = [
        np.array([[[0.6], [0.8]]], dtype=complex),
        np.array([[[0.3], [0.953939]]], dtype=complex),
    ]
    mp = MpsModel((2, 2), (0, 1), tensors)
    p1 = conditional_prob(mp, (0,), (1,))
    p2 = conditional_prob(mp, (1,), (1,))
    assert p1 == pytest.approx(p2, rel=1e-12)


@pytest.mark.parametrize("seed", range(4))
def test_conditional_matches_dense_oracle(seed):
    m = random_mps((2, 3, 2, 3), (0, 1, 0, 1), bond_dim=3, seed=seed)
    dp = dense_probs(m)
    for x in itertools.product(range(2), repeat=2):
        denom = sum(p for t, p in dp.items() if (t[0], t[2]) == x)
        for o in itertools.product(range(3), repeat=2):
            want = dp[(x[0], o[0], x[1], o[1])] / denom
            got = conditional_prob(m, x, o)
            assert got == pytest.approx(want, rel=1e-10)


def test_conditional_zero_prefix_raises():
    t0 = np.zeros((1, 2, 1), dtype=complex)
    t0[0, 1, 0] = 1.0
    t1 = np.full((1, 2, 1), 1 / math.sqrt(2), dtype=complex)
    m = MpsModel((2, 2), (0, 1), [t0, t1])
    with pytest.raises(ZeroPrefix):
        conditional_prob(m, (0,), (1,))


def test_conditional_chain_requires_equal_context_lengths():
    m = EmpiricalModel(
        2, 2,
        (Context(0, (0,)), Context(1, (0, 1))),
        ({(0,): 1.0}, {(0, 0): 1.0}),
    )
    with pytest.raises(DimensionMismatch):
        ConditionalChain.for_model(m)


# -- gradients ----------------------------------------------------------------------


def test_gradient_matches_finite_differences(small_target):
    chain = ConditionalChain.for_model(small_target)
    model = random_mps(chain.phys_dims, chain.roles, bond_dim=2, seed=7)
    _, grads = nll_and_grad(model, chain, small_target)
    h = 1e-5
    worst = 0.0
    for s in range(model.num_sites):
        t = model.tensors[s]
        for idx in np.ndindex(*t.shape):
            for delta in (h, 1j * h):
                t[idx] += delta
                up, _ = nll_and_grad(model, chain, small_target)
                t[idx] -= 2 * delta
                dn, _ = nll_and_grad(model, chain, small_target)
                t[idx] += delta
                fd = (up - dn) / (2 * h)
                an = 2 * (grads[s][idx].real if delta == h else grads[s][idx].imag)
                if abs(fd) > 1e-8:
                    worst = max(worst, abs(fd - an) / abs(fd))
    assert worst < 1e-4


# -- expressivity nesting --------------------------------------------------------------


def test_deterministic_transition_hmm_embeds_at_equal_bond():
    """A latent-state model whose transitions are deterministic given the
    emission has a one-path-per-output factorization, so taking entrywise
    square roots gives a same-bond chain with identical Born weights."""
    rng = np.random.default_rng(3)
    m_states, ell, n_out = 3, 4, 2
    q = rng.dirichlet(np.ones(n_out), size=(m_states, ell))  # position-indexed inputs
    nxt = rng.integers(0, m_states, size=(m_states, ell, n_out))
    tensors = []
    for pos in range(ell):
        t = np.zeros((m_states, n_out, m_states), dtype=complex)
        for lam in range(m_states):
            for o in range(n_out):
                t[lam, o, nxt[lam, pos, o]] = math.sqrt(q[lam, pos, o])
        if pos == 0:
            t = t[:1, :, :]  # start in state 0
        if pos == ell - 1:
            t = t.sum(axis=2, keepdims=True)  # final state is marginalized
        tensors.append(t)
    mps = MpsModel((n_out,) * ell, (1,) * ell, tensors)

    t_table = np.zeros((m_states, ell, n_out, m_states))
    for lam in range(m_states):
        for pos in range(ell):
            for o in range(n_out):
                t_table[lam, pos, o, nxt[lam, pos, o]] = 1.0
    from kontext.hmm import Hmm

    h = Hmm(m=m_states, n_inputs=ell, n_outputs=n_out, q=q, t=t_table)
    x = tuple(range(ell))
    for o in itertools.product(range(n_out), repeat=ell):
        assert born_prob(mps, o) == pytest.approx(hmm_prob(h, x, o), abs=1e-9)


# -- training ----------------------------------------------------------------------


def test_training_fits_product_target():
    target = EmpiricalModel(
        2, 2,
        (Context(0, (0, 1)),),
        ({(0, 0): 0.42, (0, 1): 0.28, (1, 0): 0.18, (1, 1): 0.12},),  # 0.6/0.4 x 0.7/0.3
    )
    model, report = train(target, bond_dim=1, steps=600, lr=0.02, seed=1)
    assert report.final_kl < 1e-3
    nlls = np.array(report.nll_trace)
    assert np.isfinite(nlls).all()
    assert len(report.grad_norms) == len(nlls)


def test_training_report_and_leak(small_target):
    model, report = train(small_target, bond_dim=2, steps=400, lr=0.02, seed=0)
    assert isinstance(report, QTrainReport)
    conds, leaks = conditionals_with_leak(
        model, ConditionalChain.for_model(small_target), small_target
    )
    assert set(conds) == {0, 1}
    assert all(0 <= v <= 1 for v in leaks.values())
    assert math.isfinite(kl_divergence_mps(small_target, model))


def test_kl_directions_on_exact_representation():
    # a point-mass target is exactly representable: both divergences vanish
    target = EmpiricalModel(
        2, 2, (Context(0, (0, 1)),), ({(1, 0): 1.0},),
    )
    chain = ConditionalChain.for_model(target)
    tensors = []
    for tok in (0, 1, 0, 0):  # in, out=1, in, out=0 -- wait, chain is in/out pairs
        t = np.zeros((1, 2, 1), dtype=complex)
        t[0, tok, 0] = 1.0
        tensors.append(t)
    # sites: (in pos0 phys1), out, (in pos1 phys1), out
    tensors[0] = np.ones((1, 1, 1), dtype=complex)
    tensors[2] = np.ones((1, 1, 1), dtype=complex)
    t1 = np.zeros((1, 2, 1), dtype=complex)
    t1[0, 1, 0] = 1.0
    t3 = np.zeros((1, 2, 1), dtype=complex)
    t3[0, 0, 0] = 1.0
    m = MpsModel(chain.phys_dims, chain.roles, [tensors[0], t1, tensors[2], t3])
    assert kl_divergence_mps(target, m) == pytest.approx(0.0, abs=1e-12)
    assert kl_divergence_mps(target, m, direction="model_to_target") == pytest.approx(0.0, abs=1e-12)


# -- serialization -------------------------------------------------------------------


def test_save_load_roundtrip(tmp_path, small_target):
    chain = ConditionalChain.for_model(small_target)
    m = random_mps(chain.phys_dims, chain.roles, bond_dim=3, seed=2)
    path = str(tmp_path / "model.bin")
    save_mps(m, path)
    back = load_mps(path)
    assert back.phys_dims == m.phys_dims
    assert back.roles == m.roles
    assert back.bond_dims == m.bond_dims
    for a, b in zip(m.tensors, back.tensors):
        assert np.allclose(a, b)
    with open(path, "rb") as fh:
        assert fh.read(4) == b"QMPS"


def test_load_rejects_other_files(tmp_path):
    path = tmp_path / "bad.bin"
    path.write_bytes(b"nope")
    with pytest.raises(ValueError):
        load_mps(str(path))
