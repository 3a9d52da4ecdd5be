"""Contextuality-number estimators.

Three routes to the same quantity:

* ``exact_bruteforce`` -- first-fit greedy partitioning run over context
  orderings, minimized over orderings. For any partition of the contexts
  into jointly compatible parts there is an ordering (parts listed
  consecutively) on which first-fit uses no more parts, so the minimum over
  all orderings equals the true partition number and the search is exact
  once the ordering space is covered or a matching lower bound is met.
* ``greedy_estimate`` -- the same inner loop over a fixed number of sampled
  orderings; always an upper bound on the true k.
* ``coloring_estimate`` -- first-fit coloring of the incompatibility
  hypergraph whose minimal jointly-incompatible subsets of size up to
  d + 1 (d = largest per-context support) certify joint compatibility of
  arbitrary sets; also an upper bound.
"""

from __future__ import annotations

import itertools
import math
import time
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator

from .errors import SizeLimit
from .model import (
    Budget,
    EmpiricalModel,
    Section,
    SectionArray,
    SectionCache,
)

DEFAULT_PERMUTATION_BUDGET = 100_000


@dataclass(frozen=True)
class GreedyPartition:
    """A partition of the context ids with one witness section per part."""

    parts: tuple[tuple[int, ...], ...]
    witness_sections: tuple[Section, ...]

    @property
    def k(self) -> int:
        return len(self.parts) - 1


@dataclass(frozen=True)
class EstimateTrace:
    """Best-so-far trajectory of a sampled-ordering run."""

    best_so_far: tuple[tuple[int, int], ...]  # (iteration index, best k)
    final_k: int
    seed: int | None
    certificate: GreedyPartition


@dataclass(frozen=True)
class IncompatibilityHypergraph:
    """Nodes are contexts; edges are minimal jointly incompatible subsets."""

    num_nodes: int
    node_ids: tuple[int, ...]
    edges: tuple[frozenset[int], ...]
    max_rank_scanned: int
    subset_checks: int  # subsets examined: sum over i=2..max_rank of C(n, i)

    @property
    def rank(self) -> int:
        return max((len(e) for e in self.edges), default=0)


def _first_fit(
    order: list[int], cache: SectionCache, stop_at_parts: int | None = None
) -> tuple[list[list[int]], list[SectionArray]] | None:
    """First-fit greedy partition along ``order``.

    Each context joins the first part whose joint section set stays
    nonempty, else opens a new part. Parts cache their joint SectionArray so
    a tentative add is one incremental join. Aborts (returns None) as soon
    as the number of parts reaches ``stop_at_parts``.
    """
    parts: list[list[int]] = []
    arrays: list[SectionArray] = []
    for cid in order:
        placed = False
        for i, arr in enumerate(arrays):
            ctx_arr = cache.single(cid)
            if arr.joinable(ctx_arr, cache.budget):
                joined = arr.join(ctx_arr, cache.budget)
                if not joined.is_empty():
                    parts[i].append(cid)
                    arrays[i] = joined
                    placed = True
                    break
        if not placed:
            if stop_at_parts is not None and len(parts) + 1 >= stop_at_parts:
                return None
            parts.append([cid])
            arrays.append(cache.single(cid))
    return parts, arrays


def _first_fit_memo(
    order: list[int], cache: SectionCache, stop_at_parts: int | None = None
) -> list[list[int]] | None:
    """First-fit using the cross-permutation joint cache (small models)."""
    parts: list[list[int]] = []
    for cid in order:
        placed = False
        for part in parts:
            if cache.compatible(part + [cid]):
                part.append(cid)
                placed = True
                break
        if not placed:
            if stop_at_parts is not None and len(parts) + 1 >= stop_at_parts:
                return None
            parts.append([cid])
    return parts


def _certificate(parts: list[list[int]], cache: SectionCache) -> GreedyPartition:
    witnesses = []
    for part in parts:
        arr = cache.joint(part)
        witnesses.append(arr.first_section())
    return GreedyPartition(
        parts=tuple(tuple(p) for p in parts),
        witness_sections=tuple(witnesses),
    )


def _pairwise_clique_lower_bound(ids: list[int], cache: SectionCache) -> int:
    """Largest set of pairwise incompatible contexts.

    Members of such a clique can never share a part (compatibility is
    hereditary), so clique size - 1 certifies a lower bound on k.
    """
    n = len(ids)
    adj = {c: set() for c in ids}
    for a, b in itertools.combinations(ids, 2):
        if not cache.compatible([a, b]):
            adj[a].add(b)
            adj[b].add(a)
    best = 1

    def grow(clique: list[int], candidates: list[int]):
        nonlocal best
        best = max(best, len(clique))
        if len(clique) + len(candidates) <= best:
            return
        for i, c in enumerate(candidates):
            grow(clique + [c], [d for d in candidates[i + 1:] if d in adj[c]])

    grow([], ids)
    return best


def exact_bruteforce(
    model: EmpiricalModel,
    permutation_budget: int = DEFAULT_PERMUTATION_BUDGET,
    node_budget: int | None = None,
    seed: int = 0,
) -> tuple[int, GreedyPartition]:
    """Exact contextuality number by minimizing first-fit over orderings.

    For any optimal partition there is an ordering (its parts listed part by
    part) on which first-fit opens no extra part, so the minimum over
    orderings equals the true partition number. The scan prunes orderings
    against the best partition found (which cannot change the minimum) and
    stops early once the best matches a certified lower bound: 0 when the
    whole set is compatible, else the pairwise-incompatibility clique bound.
    When the full ordering space exceeds the budget, seeded random orderings
    are tried until the lower bound is attained; SizeLimit is raised if the
    budget runs out without certainty.
    """
    cache = SectionCache(model, Budget(node_budget))
    ids = sorted(model.context_ids)
    n = len(ids)

    if cache.compatible(ids):
        parts = [list(ids)]
        return 0, _certificate(parts, cache)
    lower_bound = 1
    if n <= 16:
        lower_bound = max(lower_bound, _pairwise_clique_lower_bound(ids, cache) - 1)

    best_parts: list[list[int]] | None = None
    exhaustive = math.factorial(n) <= permutation_budget

    if exhaustive:
        for perm in itertools.permutations(ids):
            stop = None if best_parts is None else len(best_parts)
            parts = _first_fit_memo(list(perm), cache, stop_at_parts=stop)
            if parts is not None and (best_parts is None or len(parts) < len(best_parts)):
                best_parts = parts
                if len(best_parts) - 1 <= lower_bound:
                    break
        assert best_parts is not None
        return len(best_parts) - 1, _certificate(best_parts, cache)

    rng = np.random.default_rng(seed)
    for _ in range(permutation_budget):
        order = [ids[i] for i in rng.permutation(n)]
        stop = None if best_parts is None else len(best_parts)
        got = _first_fit(order, cache, stop_at_parts=stop)
        if got is None:
            continue
        parts, _arrays = got
        if best_parts is None or len(parts) < len(best_parts):
            best_parts = parts
            if len(best_parts) - 1 <= lower_bound:
                return len(best_parts) - 1, _certificate(best_parts, cache)
    raise SizeLimit(
        f"{n}! orderings exceed the permutation budget ({permutation_budget}) "
        f"and no ordering matched the lower bound {lower_bound}"
    )


def greedy_estimate(
    model: EmpiricalModel,
    num_permutations: int,
    seed: int,
    node_budget: int | None = None,
) -> EstimateTrace:
    """Upper-bound k from ``num_permutations`` sampled context orderings.

    The inner loop is identical to the exact search; orderings come from a
    seeded Fisher-Yates shuffle, so a fixed seed reproduces the trace
    exactly. Any greedy partition is a valid partition into compatible
    parts, hence final_k >= the true contextuality number.
    """
    if num_permutations < 1:
        raise ValueError("num_permutations must be >= 1")
    cache = SectionCache(model, Budget(node_budget))
    ids = sorted(model.context_ids)
    rng = np.random.default_rng(seed)

    best_parts: list[list[int]] | None = None
    trace: list[tuple[int, int]] = []
    for it in range(num_permutations):
        order = [ids[i] for i in rng.permutation(len(ids))]
        stop = None if best_parts is None else len(best_parts)
        got = _first_fit(order, cache, stop_at_parts=stop)
        if got is not None:
            parts, _arrays = got
            if best_parts is None or len(parts) < len(best_parts):
                best_parts = parts
        assert best_parts is not None
        trace.append((it, len(best_parts) - 1))
    assert best_parts is not None
    return EstimateTrace(
        best_so_far=tuple(trace),
        final_k=len(best_parts) - 1,
        seed=seed,
        certificate=_certificate(best_parts, cache),
    )


def build_hypergraph(
    model: EmpiricalModel,
    max_rank: int | None = None,
    node_budget: int | None = None,
    subset_check_budget: int | None = None,
) -> IncompatibilityHypergraph:
    """Minimal jointly-incompatible subsets of size 2..max_rank.

    ``max_rank`` defaults to d + 1 with d the largest per-context support
    size, the rank at which contained edges certify incompatibility of
    arbitrary context sets for d-sparse models. Every subset in the scanned
    size range counts toward ``subset_checks`` whether or not the (more
    expensive) joint-section test runs, so the counter is exactly
    sum_{i=2}^{max_rank} C(n, i).
    """
    d = model.max_support_size()
    if max_rank is None:
        max_rank = d + 1
    if max_rank < 2:
        raise ValueError("max_rank must be >= 2")
    ids = sorted(model.context_ids)
    n = len(ids)
    planned = sum(math.comb(n, i) for i in range(2, min(max_rank, n) + 1))
    if subset_check_budget is not None and planned > subset_check_budget:
        raise SizeLimit(
            f"{planned} subset checks exceed the budget {subset_check_budget}"
        )
    cache = SectionCache(model, Budget(node_budget))
    edges: list[frozenset[int]] = []
    checks = 0
    for size in range(2, min(max_rank, n) + 1):
        for subset in itertools.combinations(ids, size):
            checks += 1
            sset = frozenset(subset)
            if any(e <= sset for e in edges):
                continue  # a contained edge already certifies incompatibility
            if not cache.compatible(subset):
                edges.append(sset)
    return IncompatibilityHypergraph(
        num_nodes=n,
        node_ids=tuple(ids),
        edges=tuple(edges),
        max_rank_scanned=max_rank,
        subset_checks=checks,
    )


def coloring_estimate(
    model: EmpiricalModel,
    order: list[int] | None = None,
    max_rank: int | None = None,
    hypergraph: IncompatibilityHypergraph | None = None,
    node_budget: int | None = None,
) -> tuple[int, list[list[int]], IncompatibilityHypergraph]:
    """First-fit hypergraph coloring upper bound on k.

    Each node joins the first color class whose union with it contains no
    hyperedge, else opens a new class; returns (classes - 1). With the
    default rank d + 1 every color class is jointly compatible, so the
    estimate is a valid partition bound.
    """
    if hypergraph is None:
        hypergraph = build_hypergraph(model, max_rank=max_rank, node_budget=node_budget)
    ids = list(hypergraph.node_ids) if order is None else list(order)
    incident: dict[int, list[frozenset[int]]] = {i: [] for i in ids}
    for e in hypergraph.edges:
        for v in e:
            incident[v].append(e)
    classes: list[set[int]] = []
    for v in ids:
        placed = False
        for cls in classes:
            if all(not (e - {v} <= cls) for e in incident[v]):
                cls.add(v)
                placed = True
                break
        if not placed:
            classes.append({v})
    return len(classes) - 1, [sorted(c) for c in classes], hypergraph


# -- estimator-style wrappers ---------------------------------------------


class ContextualityEstimator(BaseEstimator):
    """Shared surface for the three estimators: fit(model) sets ``k_``."""

    def fit(self, X: EmpiricalModel, y=None):
        raise NotImplementedError

    def fit_predict(self, X: EmpiricalModel, y=None) -> int:
        self.fit(X)
        return self.k_


class ExactBruteForce(ContextualityEstimator):
    """Exact minimum over context orderings (small context counts only)."""

    def __init__(self, permutation_budget: int = DEFAULT_PERMUTATION_BUDGET,
                 node_budget: int | None = None, seed: int = 0):
        self.permutation_budget = permutation_budget
        self.node_budget = node_budget
        self.seed = seed

    def fit(self, X: EmpiricalModel, y=None):
        start = time.perf_counter()
        self.k_, self.certificate_ = exact_bruteforce(
            X, self.permutation_budget, self.node_budget, self.seed
        )
        self.runtime_s_ = time.perf_counter() - start
        return self


class GreedyEstimator(ContextualityEstimator):
    """Sampled-ordering greedy upper bound."""

    def __init__(self, num_permutations: int = 100, seed: int = 0,
                 node_budget: int | None = None):
        self.num_permutations = num_permutations
        self.seed = seed
        self.node_budget = node_budget

    def fit(self, X: EmpiricalModel, y=None):
        start = time.perf_counter()
        self.trace_ = greedy_estimate(X, self.num_permutations, self.seed, self.node_budget)
        self.k_ = self.trace_.final_k
        self.certificate_ = self.trace_.certificate
        self.runtime_s_ = time.perf_counter() - start
        return self


class ColoringEstimator(ContextualityEstimator):
    """Incompatibility-hypergraph first-fit coloring upper bound."""

    def __init__(self, max_rank: int | None = None, node_budget: int | None = None):
        self.max_rank = max_rank
        self.node_budget = node_budget

    def fit(self, X: EmpiricalModel, y=None):
        start = time.perf_counter()
        self.k_, self.color_classes_, self.hypergraph_ = coloring_estimate(
            X, max_rank=self.max_rank, node_budget=self.node_budget
        )
        self.runtime_s_ = time.perf_counter() - start
        return self
