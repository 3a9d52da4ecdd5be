"""Empirical models: contexts, supports, sections, compatibility.

An empirical model is a finite family of conditional outcome distributions,
one per measurement context. Contexts are ordered tuples of observable ids
(the order is the presentation order for sequence tasks). All combinatorial
machinery below operates on supports only: an outcome tuple is *in* the
support of a context iff its stored probability is strictly positive, and
generators/ingest emit exact zeros by construction, so no thresholding is
ever applied.

A *section* over a set of observables D assigns one outcome to each
observable in D. ``sections_of`` enumerates the sections that restrict into
every requested context's support; a context set is *compatible* when at
least one such section exists. The count of these sections per part of a
partition is what ``n_e_k`` aggregates.
"""

from __future__ import annotations

import itertools
import json
import os
import tempfile
from dataclasses import dataclass, field

import numpy as np

from .errors import SizeLimit

DEFAULT_NODE_BUDGET = 10_000_000
PROB_SUM_TOL = 1e-9
CONSISTENCY_TOL = 1e-9


@dataclass(frozen=True)
class Context:
    """An ordered, duplicate-free tuple of observable ids with a stable label."""

    id: int
    observables: tuple[int, ...]

    def __post_init__(self):
        if len(self.observables) == 0:
            raise ValueError(f"context {self.id} is empty")
        if len(set(self.observables)) != len(self.observables):
            raise ValueError(f"context {self.id} repeats an observable")


@dataclass(frozen=True)
class EmpiricalModel:
    """A family of per-context conditional outcome distributions.

    ``distributions[i]`` maps outcome tuples (length = context length) to
    strictly positive probabilities; omitted tuples have probability zero.
    """

    num_observables: int
    num_outcomes: int
    contexts: tuple[Context, ...]
    distributions: tuple[dict[tuple[int, ...], float], ...]
    consistency_enforced: bool = False

    def __post_init__(self):
        ids = [c.id for c in self.contexts]
        if len(set(ids)) != len(ids):
            raise ValueError("context ids are not unique")
        if len(self.contexts) != len(self.distributions):
            raise ValueError("one distribution per context required")
        covered = set()
        for ctx, dist in zip(self.contexts, self.distributions):
            covered.update(ctx.observables)
            if any(o >= self.num_observables or o < 0 for o in ctx.observables):
                raise ValueError(f"context {ctx.id} references an unknown observable")
            if not dist:
                raise ValueError(f"context {ctx.id} has empty support")
            total = 0.0
            for outcome, p in dist.items():
                if len(outcome) != len(ctx.observables):
                    raise ValueError(
                        f"context {ctx.id}: outcome length {len(outcome)} != "
                        f"context length {len(ctx.observables)}"
                    )
                if any(v < 0 or v >= self.num_outcomes for v in outcome):
                    raise ValueError(f"context {ctx.id}: outcome token out of range")
                if not p > 0.0:
                    raise ValueError(f"context {ctx.id}: nonpositive probability stored")
                total += p
            if abs(total - 1.0) > PROB_SUM_TOL:
                raise ValueError(f"context {ctx.id}: probabilities sum to {total}")
        if covered != set(range(self.num_observables)):
            raise ValueError("contexts do not cover the observable set")

    # -- lookups ---------------------------------------------------------

    def context_by_id(self, cid: int) -> Context:
        for ctx in self.contexts:
            if ctx.id == cid:
                return ctx
        raise KeyError(f"no context with id {cid}")

    def distribution_by_id(self, cid: int) -> dict[tuple[int, ...], float]:
        for ctx, dist in zip(self.contexts, self.distributions):
            if ctx.id == cid:
                return dist
        raise KeyError(f"no context with id {cid}")

    def support_by_id(self, cid: int) -> list[tuple[int, ...]]:
        return sorted(self.distribution_by_id(cid))

    @property
    def context_ids(self) -> list[int]:
        return [c.id for c in self.contexts]

    def max_support_size(self) -> int:
        """Sparsity d: the largest per-context support."""
        return max(len(d) for d in self.distributions)

    # -- serialization ---------------------------------------------------

    def to_json_dict(self) -> dict:
        ctxs = []
        for ctx, dist in sorted(
            zip(self.contexts, self.distributions), key=lambda p: p[0].id
        ):
            entries = [
                {"outcome": list(outcome), "p": p}
                for outcome, p in sorted(dist.items())
            ]
            ctxs.append(
                {
                    "id": ctx.id,
                    "observables": list(ctx.observables),
                    "distribution": entries,
                }
            )
        return {
            "observables": self.num_observables,
            "outcomes": self.num_outcomes,
            "contexts": ctxs,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict())

    @classmethod
    def from_json_dict(cls, data: dict, validate_consistency_flag: bool = True) -> "EmpiricalModel":
        contexts = []
        distributions = []
        for c in data["contexts"]:
            contexts.append(Context(id=int(c["id"]), observables=tuple(int(o) for o in c["observables"])))
            distributions.append(
                {tuple(int(t) for t in e["outcome"]): float(e["p"]) for e in c["distribution"]}
            )
        model = cls(
            num_observables=int(data["observables"]),
            num_outcomes=int(data["outcomes"]),
            contexts=tuple(contexts),
            distributions=tuple(distributions),
            consistency_enforced=False,
        )
        if validate_consistency_flag and not validate_consistency(model):
            object.__setattr__(model, "consistency_enforced", True)
        return model

    @classmethod
    def from_json(cls, text: str) -> "EmpiricalModel":
        return cls.from_json_dict(json.loads(text))


def save_model(model: EmpiricalModel, path: str) -> None:
    """Atomically write the canonical JSON form of a model."""
    write_atomic(path, model.to_json() + "\n")


def load_model(path: str) -> EmpiricalModel:
    with open(path, "r", encoding="utf-8") as fh:
        return EmpiricalModel.from_json(fh.read())


def write_atomic(path: str, text: str) -> None:
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-kontext-")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# -- consistency ---------------------------------------------------------


@dataclass(frozen=True)
class ConsistencyViolation:
    context_a: int
    context_b: int
    shared_observables: tuple[int, ...]
    max_discrepancy: float


def _marginal(
    ctx: Context, dist: dict[tuple[int, ...], float], obs: tuple[int, ...]
) -> dict[tuple[int, ...], float]:
    """Marginal of a context distribution on a sorted subset of its observables."""
    positions = [ctx.observables.index(o) for o in obs]
    out: dict[tuple[int, ...], float] = {}
    for outcome, p in dist.items():
        key = tuple(outcome[i] for i in positions)
        out[key] = out.get(key, 0.0) + p
    return out


def validate_consistency(
    model: EmpiricalModel, tol: float = CONSISTENCY_TOL
) -> list[ConsistencyViolation]:
    """Report every context pair whose marginals disagree on the intersection.

    Checking the full intersection suffices: marginals of agreeing marginals
    agree on every smaller subset. Returns an empty list for consistent
    models; never raises.
    """
    violations = []
    for (ca, da), (cb, db) in itertools.combinations(
        zip(model.contexts, model.distributions), 2
    ):
        shared = tuple(sorted(set(ca.observables) & set(cb.observables)))
        if not shared:
            continue
        ma = _marginal(ca, da, shared)
        mb = _marginal(cb, db, shared)
        worst = 0.0
        for key in set(ma) | set(mb):
            worst = max(worst, abs(ma.get(key, 0.0) - mb.get(key, 0.0)))
        if worst > tol:
            violations.append(
                ConsistencyViolation(ca.id, cb.id, shared, worst)
            )
    return violations


# -- section machinery ---------------------------------------------------


@dataclass(frozen=True)
class Section:
    """A deterministic assignment observable -> outcome over a stated domain."""

    assignment: tuple[tuple[int, int], ...]  # sorted (observable, outcome) pairs

    def as_dict(self) -> dict[int, int]:
        return dict(self.assignment)

    @property
    def domain(self) -> tuple[int, ...]:
        return tuple(o for o, _ in self.assignment)


@dataclass(frozen=True)
class SectionSet:
    """All support-respecting sections over ``domain`` (sorted observables)."""

    domain: tuple[int, ...]
    sections: tuple[Section, ...]

    def __len__(self) -> int:
        return len(self.sections)

    def __bool__(self) -> bool:
        return len(self.sections) > 0


class Budget:
    """A mutable counter of combinatorial work; raises SizeLimit when spent.

    One unit corresponds to one candidate section row touched during joins.
    """

    def __init__(self, limit: int | None = DEFAULT_NODE_BUDGET):
        self.limit = limit
        self.used = 0

    def charge(self, n: int) -> None:
        self.used += n
        if self.limit is not None and self.used > self.limit:
            raise SizeLimit(
                f"section enumeration exceeded the budget of {self.limit} nodes"
            )


class SectionArray:
    """Canonical row-sorted array of sections over a sorted observable domain.

    Rows are uint8 outcome vectors aligned with ``domain``. The empty domain
    has exactly one (empty) section, the join identity.
    """

    __slots__ = ("domain", "rows")

    def __init__(self, domain: tuple[int, ...], rows: np.ndarray):
        self.domain = domain
        rows = np.ascontiguousarray(rows, dtype=np.uint8)
        if rows.ndim != 2 or rows.shape[1] != len(domain):
            rows = rows.reshape(-1, len(domain))
        self.rows = _sort_rows(rows)

    @classmethod
    def identity(cls) -> "SectionArray":
        return cls((), np.zeros((1, 0), dtype=np.uint8))

    @classmethod
    def from_context(
        cls, ctx: Context, dist: dict[tuple[int, ...], float]
    ) -> "SectionArray":
        domain = tuple(sorted(ctx.observables))
        order = sorted(range(len(ctx.observables)), key=lambda i: ctx.observables[i])
        rows = np.array(
            [[outcome[i] for i in order] for outcome in dist], dtype=np.uint8
        )
        return cls(domain, rows)

    def __len__(self) -> int:
        return self.rows.shape[0]

    def is_empty(self) -> bool:
        return self.rows.shape[0] == 0

    def _key(self, cols: list[int]) -> np.ndarray:
        sub = np.ascontiguousarray(self.rows[:, cols])
        if sub.shape[1] == 0:
            return np.zeros(sub.shape[0], dtype="V1")
        return sub.view(f"V{sub.shape[1]}").ravel()

    def joinable(self, other: "SectionArray", budget: Budget) -> bool:
        """True iff the join with ``other`` would be nonempty.

        Sections over two domains merge iff their projections onto the shared
        observables collide, so emptiness needs only a key intersection.
        """
        budget.charge(len(self) + len(other))
        if self.is_empty() or other.is_empty():
            return False
        shared = sorted(set(self.domain) & set(other.domain))
        if not shared:
            return True
        ka = self._key([self.domain.index(o) for o in shared])
        kb = other._key([other.domain.index(o) for o in shared])
        return np.intersect1d(ka, kb).size > 0

    def join(self, other: "SectionArray", budget: Budget) -> "SectionArray":
        """All sections over the union domain restricting into both sides."""
        merged_domain = tuple(sorted(set(self.domain) | set(other.domain)))
        if self.is_empty() or other.is_empty():
            return SectionArray(merged_domain, np.zeros((0, len(merged_domain)), np.uint8))
        shared = sorted(set(self.domain) & set(other.domain))
        a_cols = [self.domain.index(o) for o in shared]
        b_cols = [other.domain.index(o) for o in shared]
        ka = self._key(a_cols)
        kb = other._key(b_cols)
        order_b = np.argsort(kb, kind="stable")
        kb_sorted = kb[order_b]
        lo = np.searchsorted(kb_sorted, ka, side="left")
        hi = np.searchsorted(kb_sorted, ka, side="right")
        counts = hi - lo
        total = int(counts.sum())
        budget.charge(len(self) + len(other) + total)
        if total == 0:
            return SectionArray(merged_domain, np.zeros((0, len(merged_domain)), np.uint8))
        a_idx = np.repeat(np.arange(len(self)), counts)
        starts = np.repeat(lo, counts)
        within = np.arange(total) - np.repeat(np.cumsum(counts) - counts, counts)
        b_idx = order_b[starts + within]
        out = np.empty((total, len(merged_domain)), dtype=np.uint8)
        for j, obs in enumerate(merged_domain):
            if obs in self.domain:
                out[:, j] = self.rows[a_idx, self.domain.index(obs)]
            else:
                out[:, j] = other.rows[b_idx, other.domain.index(obs)]
        return SectionArray(merged_domain, out)

    def to_section_set(self) -> SectionSet:
        sections = tuple(
            Section(tuple(zip(self.domain, map(int, row)))) for row in self.rows
        )
        return SectionSet(self.domain, sections)

    def first_section(self) -> Section:
        return Section(tuple(zip(self.domain, map(int, self.rows[0]))))


def _sort_rows(rows: np.ndarray) -> np.ndarray:
    if rows.shape[0] <= 1 or rows.shape[1] == 0:
        return rows
    keys = rows.view(f"V{rows.shape[1]}").ravel()
    return rows[np.argsort(keys, kind="stable")]


class SectionCache:
    """Memoizes joint SectionArrays per frozenset of context ids."""

    def __init__(self, model: EmpiricalModel, budget: Budget | None = None):
        self.model = model
        self.budget = budget if budget is not None else Budget()
        self._by_id = {
            ctx.id: SectionArray.from_context(ctx, dist)
            for ctx, dist in zip(model.contexts, model.distributions)
        }
        self._joint: dict[frozenset[int], SectionArray] = {}

    def single(self, cid: int) -> SectionArray:
        return self._by_id[cid]

    def joint(self, cids) -> SectionArray:
        """Joint section array for a set of context ids (incremental joins)."""
        key = frozenset(cids)
        if not key:
            return SectionArray.identity()
        hit = self._joint.get(key)
        if hit is not None:
            return hit
        ordered = sorted(key, key=lambda c: len(self._by_id[c]))
        arr = self._by_id[ordered[0]]
        seen = frozenset([ordered[0]])
        for cid in ordered[1:]:
            seen = seen | {cid}
            cached = self._joint.get(seen)
            if cached is not None:
                arr = cached
                continue
            arr = arr.join(self._by_id[cid], self.budget)
            self._joint[seen] = arr
            if arr.is_empty():
                # every superset is empty too
                if seen != key:
                    dom = tuple(sorted(set().union(
                        *(self.model.context_by_id(c).observables for c in key))))
                    arr = SectionArray(dom, np.zeros((0, len(dom)), np.uint8))
                    self._joint[key] = arr
                return arr
        self._joint[key] = arr
        return arr

    def compatible(self, cids) -> bool:
        return not self.joint(cids).is_empty()

    def count(self, cids) -> int:
        return len(self.joint(cids))


# -- public operations ---------------------------------------------------


def sections_of(
    model: EmpiricalModel,
    context_ids,
    budget: int | None = DEFAULT_NODE_BUDGET,
    cache: SectionCache | None = None,
) -> SectionSet:
    """All sections over the union of the given contexts' observables that
    restrict into every one of their supports.

    Raises SizeLimit when the incremental join exceeds ``budget`` rows.
    """
    ids = list(context_ids)
    known = set(model.context_ids)
    for cid in ids:
        if cid not in known:
            raise KeyError(f"context id {cid} not in model")
    if cache is None:
        cache = SectionCache(model, Budget(budget))
    return cache.joint(ids).to_section_set()


def is_compatible(
    model: EmpiricalModel,
    context_ids,
    budget: int | None = DEFAULT_NODE_BUDGET,
    cache: SectionCache | None = None,
) -> bool:
    """True iff the context set admits at least one joint section."""
    if cache is None:
        cache = SectionCache(model, Budget(budget))
    return cache.compatible(list(context_ids))


def _partitions_at_most_k(items: list[int], k: int):
    """Yield unordered set partitions of ``items`` into at most k nonempty parts."""
    if not items:
        yield []
        return
    first, rest = items[0], items[1:]

    def rec(remaining, parts):
        if not remaining:
            yield [list(p) for p in parts]
            return
        x = remaining[0]
        tail = remaining[1:]
        for p in parts:
            p.append(x)
            yield from rec(tail, parts)
            p.pop()
        if len(parts) < k:
            parts.append([x])
            yield from rec(tail, parts)
            parts.pop()

    yield from rec(rest, [[first]])


def n_e_k(
    model: EmpiricalModel,
    k: int,
    budget: int | None = DEFAULT_NODE_BUDGET,
    partition_budget: int = 1_000_000,
    cache: SectionCache | None = None,
) -> int:
    """Exact partition-weighted section count.

    Sums, over every unordered partition of the context set into at most k
    nonempty parts, the product over parts of the number of joint sections
    counted over that part's own observable union. Empty parts contribute a
    unit factor, which is what makes the "at most k parts" convention agree
    with summing over exactly-k partitions with empty parts allowed. The
    model is strongly k-contextual iff the returned value is 0.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if cache is None:
        cache = SectionCache(model, Budget(budget))
    ids = sorted(model.context_ids)
    total = 0
    seen = 0
    for parts in _partitions_at_most_k(ids, k):
        seen += 1
        if seen > partition_budget:
            raise SizeLimit(f"more than {partition_budget} partitions at k={k}")
        prod = 1
        for part in parts:
            c = cache.count(part)
            if c == 0:
                prod = 0
                break
            prod *= c
        total += prod
    return total


def _exists_compatible_partition(
    model: EmpiricalModel, k: int, cache: SectionCache
) -> bool:
    """True iff the contexts can be split into <= k jointly compatible parts.

    Depth-first search placing contexts one at a time into existing parts
    (joint section set must stay nonempty) or a new part while fewer than k
    exist. Sound and complete; equivalent to n_e_k(model, k) > 0.
    """
    ids = sorted(model.context_ids)

    def rec(i: int, parts: list[list[int]]) -> bool:
        if i == len(ids):
            return True
        cid = ids[i]
        tried_empty = False
        for part in parts:
            if cache.compatible(part + [cid]):
                part.append(cid)
                if rec(i + 1, parts):
                    return True
                part.pop()
        if len(parts) < k:
            parts.append([cid])
            if rec(i + 1, parts):
                return True
            parts.pop()
        return False

    return rec(0, [])


def contextuality_number_definitional(
    model: EmpiricalModel,
    budget: int | None = DEFAULT_NODE_BUDGET,
) -> int:
    """Ground-truth contextuality number via the partition definition.

    Returns the largest k for which the model is strongly k-contextual, i.e.
    k such that no partition into <= k parts has all parts jointly
    compatible while some partition into k+1 parts does. Decides zero-ness
    of the partition-weighted count by existence search with early exit,
    which is equivalent to (and much cheaper than) evaluating the count.
    """
    cache = SectionCache(model, Budget(budget))
    n = len(model.contexts)
    for k in range(1, n + 1):
        if _exists_compatible_partition(model, k, cache):
            return k - 1
    # unreachable: singleton parts are always compatible
    raise AssertionError("no compatible partition found even at k = |M|")
