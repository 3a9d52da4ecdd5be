import itertools

import pytest

from kontext.model import Context, EmpiricalModel


@pytest.fixture
def translation_model():
    """Two contexts sharing one observable with disjoint point-mass supports.

    The shared observable must resolve one way in the first context and the
    other way in the second, so no global assignment fits both: the model is
    strongly 1-contextual with contextuality number 1.
    """
    return EmpiricalModel(
        num_observables=3,
        num_outcomes=2,
        contexts=(Context(0, (0, 2)), Context(1, (1, 2))),
        distributions=({(0, 0): 1.0}, {(1, 1): 1.0}),
    )


def naive_sections(model: EmpiricalModel, cids):
    """Exhaustive |O|^|D| assignment enumeration filtered by support membership."""
    ctxs = {c.id: c for c in model.contexts}
    dists = {c.id: d for c, d in zip(model.contexts, model.distributions)}
    domain = sorted(set().union(*(ctxs[c].observables for c in cids)))
    out = []
    for combo in itertools.product(range(model.num_outcomes), repeat=len(domain)):
        assign = dict(zip(domain, combo))
        if all(
            tuple(assign[o] for o in ctxs[cid].observables) in dists[cid]
            for cid in cids
        ):
            out.append(tuple(sorted(assign.items())))
    return out


def all_set_partitions(items):
    if not items:
        yield []
        return
    first, rest = items[0], items[1:]
    for parts in all_set_partitions(rest):
        for i in range(len(parts)):
            yield parts[:i] + [[first] + parts[i]] + parts[i + 1:]
        yield [[first]] + parts


def naive_nek(model: EmpiricalModel, k: int) -> int:
    """Independent partition-sum oracle built on naive_sections."""
    ids = [c.id for c in model.contexts]
    total = 0
    for parts in all_set_partitions(ids):
        if len(parts) > k:
            continue
        prod = 1
        for part in parts:
            prod *= len(naive_sections(model, part))
            if prod == 0:
                break
        total += prod
    return total


def naive_contextuality_number(model: EmpiricalModel) -> int:
    for k in range(1, len(model.contexts) + 1):
        if naive_nek(model, k) > 0:
            return k - 1
    raise AssertionError("unreachable")
