"""Benchmark model generators: random sparse, GHZ measurement, noncontextual.

Random models put every context on the same full observable set with a
uniform distribution over a uniformly drawn support of fixed size, so the
contextuality number is governed purely by how the supports intersect.

GHZ models describe measuring each particle of an n-particle GHZ state in
the Pauli x or y basis. Observables are (particle, basis) pairs, so a
context -- one basis choice per particle -- is the ordered tuple
(2*i + b_i) and distinct basis strings are distinct observable subsets.
Outcomes encode +1 as 0 and -1 as 1. With w = number of y choices, the
outcome distribution is uniform over all strings when w is odd, and uniform
over the half with outcome-product +1 (w % 4 == 0) or -1 (w % 4 == 2) when
w is even. The parity rule is cross-checked against a dense statevector
simulation in the test suite.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import Exhausted, SizeLimit
from .model import (
    Context,
    EmpiricalModel,
    contextuality_number_definitional,
    validate_consistency,
)

MAX_RESAMPLES = 100_000


@dataclass(frozen=True)
class RandomModelSpec:
    """n contexts over n observables with n outcomes, support size ``sparsity``."""

    n: int
    sparsity: int
    seed: int
    target_k: int | None = None
    max_resamples: int = MAX_RESAMPLES

    def __post_init__(self):
        if self.n < 2:
            raise ValueError("n must be >= 2")
        if self.sparsity < 1:
            raise ValueError("sparsity must be >= 1")


@dataclass(frozen=True)
class GhzSpec:
    n_particles: int
    max_particles: int = 12

    def __post_init__(self):
        if self.n_particles < 2:
            raise ValueError("n_particles must be >= 2")


def _sample_support(rng: np.random.Generator, n: int, size: int) -> list[tuple[int, ...]]:
    """``size`` distinct outcome tuples drawn uniformly from {0..n-1}^n."""
    support: set[tuple[int, ...]] = set()
    while len(support) < size:
        support.add(tuple(int(v) for v in rng.integers(0, n, size=n)))
    return sorted(support)


def _random_model_once(n: int, sparsity: int, rng: np.random.Generator) -> EmpiricalModel:
    size = min(sparsity, n**n)
    contexts = []
    distributions = []
    obs = tuple(range(n))
    for cid in range(n):
        support = _sample_support(rng, n, size)
        p = 1.0 / len(support)
        contexts.append(Context(id=cid, observables=obs))
        distributions.append({outcome: p for outcome in support})
    return EmpiricalModel(
        num_observables=n,
        num_outcomes=n,
        contexts=tuple(contexts),
        distributions=tuple(distributions),
        consistency_enforced=False,
    )


def random_model(spec: RandomModelSpec, budget: int | None = None) -> EmpiricalModel:
    """Random s-sparse model; optionally rejection-sampled to a target k.

    With ``target_k`` set, resamples until the definitional oracle reports
    that contextuality number, raising Exhausted after ``max_resamples``
    attempts (some (n, s, k) combinations are rare or impossible).
    """
    rng = np.random.default_rng(spec.seed)
    if spec.target_k is None:
        return _random_model_once(spec.n, spec.sparsity, rng)
    for _ in range(spec.max_resamples):
        model = _random_model_once(spec.n, spec.sparsity, rng)
        kwargs = {} if budget is None else {"budget": budget}
        if contextuality_number_definitional(model, **kwargs) == spec.target_k:
            return model
    raise Exhausted(
        f"no random model with k={spec.target_k} after {spec.max_resamples} draws "
        f"(n={spec.n}, s={spec.sparsity})"
    )


def ghz_model(spec: GhzSpec) -> EmpiricalModel:
    """Empirical model of x/y-basis measurements on an n-particle GHZ state."""
    n = spec.n_particles
    if n > spec.max_particles:
        raise SizeLimit(f"GHZ model with {n} particles exceeds the {spec.max_particles}-particle limit")
    contexts = []
    distributions = []
    full = 2.0 ** (-n)
    half = 2.0 ** (-(n - 1))
    for basis_bits in range(2**n):
        b = [(basis_bits >> (n - 1 - i)) & 1 for i in range(n)]
        w = sum(b)
        observables = tuple(2 * i + b[i] for i in range(n))
        dist: dict[tuple[int, ...], float] = {}
        if w % 2 == 1:
            for out_bits in range(2**n):
                outcome = tuple((out_bits >> (n - 1 - i)) & 1 for i in range(n))
                dist[outcome] = full
        else:
            want = 0 if w % 4 == 0 else 1
            for out_bits in range(2**n):
                outcome = tuple((out_bits >> (n - 1 - i)) & 1 for i in range(n))
                if sum(outcome) % 2 == want:
                    dist[outcome] = half
        contexts.append(Context(id=basis_bits, observables=observables))
        distributions.append(dist)
    model = EmpiricalModel(
        num_observables=2 * n,
        num_outcomes=2,
        contexts=tuple(contexts),
        distributions=tuple(distributions),
        consistency_enforced=False,
    )
    if not validate_consistency(model):
        object.__setattr__(model, "consistency_enforced", True)
    return model


def noncontextual_model(
    n_contexts: int, n_obs_per_context: int, seed: int, num_outcomes: int = 3, extra_support: int = 2
) -> EmpiricalModel:
    """Control model that is noncontextual by construction.

    Samples one global assignment first and builds every context's support
    around its restriction, so that assignment survives every join and the
    contextuality number is 0.
    """
    if n_contexts < 1 or n_obs_per_context < 1:
        raise ValueError("need at least one context and one observable per context")
    rng = np.random.default_rng(seed)
    pool = n_obs_per_context + n_contexts - 1
    chosen: list[tuple[int, ...]] = []
    used: set[int] = set()
    for _ in range(n_contexts):
        obs = tuple(sorted(rng.choice(pool, size=n_obs_per_context, replace=False).tolist()))
        chosen.append(obs)
        used.update(obs)
    relabel = {o: i for i, o in enumerate(sorted(used))}
    global_section = {relabel[o]: int(rng.integers(0, num_outcomes)) for o in sorted(used)}
    contexts = []
    distributions = []
    for cid, obs in enumerate(chosen):
        ctx_obs = tuple(relabel[o] for o in obs)
        anchored = tuple(global_section[o] for o in ctx_obs)
        support = {anchored}
        for _ in range(extra_support):
            support.add(tuple(int(v) for v in rng.integers(0, num_outcomes, size=len(ctx_obs))))
        p = 1.0 / len(support)
        contexts.append(Context(id=cid, observables=ctx_obs))
        distributions.append({outcome: p for outcome in sorted(support)})
    return EmpiricalModel(
        num_observables=len(used),
        num_outcomes=num_outcomes,
        contexts=tuple(contexts),
        distributions=tuple(distributions),
        consistency_enforced=False,
    )
