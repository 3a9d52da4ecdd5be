"""Input-conditioned hidden Markov models over empirical-model tasks.

The machine starts in a fixed latent state, receives one input token per
step, emits an output token from q(o | state, input), and moves to the next
state via t(state' | state, input, output). A context is presented to the
model as its observable-id sequence, so two contexts with different
observable tuples are distinguishable from the input stream while contexts
sharing the same observables are not -- which is exactly what makes the
latent state a memory bottleneck.

Relative entropy is exposed in both directions. The target-to-model
direction is the training objective (finite for any positive model) while
the model-to-target direction is infinite precisely when the model assigns
probability to an outcome outside a context's support; ``support_violation``
finds such witnesses.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import CertificateUnroutable, DegenerateInit, DimensionMismatch
from .model import Context, EmpiricalModel, write_atomic

LEAK_TOL = 1e-12


@dataclass(frozen=True)
class Hmm:
    """Latent-state sequence transducer with input-conditioned tables.

    q[state, input] is a distribution over outputs; t[state, input, output]
    a distribution over next states. The initial state is index 0.
    """

    m: int
    n_inputs: int
    n_outputs: int
    q: np.ndarray  # (m, n_inputs, n_outputs)
    t: np.ndarray  # (m, n_inputs, n_outputs, m)

    def __post_init__(self):
        if self.q.shape != (self.m, self.n_inputs, self.n_outputs):
            raise DimensionMismatch(f"emission table has shape {self.q.shape}")
        if self.t.shape != (self.m, self.n_inputs, self.n_outputs, self.m):
            raise DimensionMismatch(f"transition table has shape {self.t.shape}")
        for name, table, axis in (("emission", self.q, 2), ("transition", self.t, 3)):
            sums = table.sum(axis=axis)
            if not np.allclose(sums, 1.0, atol=1e-9):
                raise ValueError(f"{name} rows do not sum to 1 (max err {np.abs(sums - 1).max():.2e})")

    def to_json_dict(self) -> dict:
        return {
            "m": self.m,
            "inputs": self.n_inputs,
            "outputs": self.n_outputs,
            "q": self.q.tolist(),
            "t": self.t.tolist(),
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "Hmm":
        return cls(
            m=int(d["m"]),
            n_inputs=int(d["inputs"]),
            n_outputs=int(d["outputs"]),
            q=np.asarray(d["q"], dtype=float),
            t=np.asarray(d["t"], dtype=float),
        )


def save_hmm(h: Hmm, path: str) -> None:
    write_atomic(path, json.dumps(h.to_json_dict()) + "\n")


def load_hmm(path: str) -> Hmm:
    with open(path, "r", encoding="utf-8") as fh:
        return Hmm.from_json_dict(json.load(fh))


@dataclass(frozen=True)
class TrainReport:
    log_likelihoods: tuple[float, ...]
    final_kl: float
    iterations: int
    converged: bool


def random_hmm(m: int, n_inputs: int, n_outputs: int, seed: int) -> Hmm:
    """Dirichlet(1)-row initialization."""
    rng = np.random.default_rng(seed)
    q = rng.dirichlet(np.ones(n_outputs), size=(m, n_inputs))
    t = rng.dirichlet(np.ones(m), size=(m, n_inputs, n_outputs))
    return Hmm(m=m, n_inputs=n_inputs, n_outputs=n_outputs, q=q, t=t)


def context_inputs(ctx: Context) -> tuple[int, ...]:
    """The input token sequence a context presents to a sequence model."""
    return ctx.observables


# -- forward machinery -----------------------------------------------------


def _forward_batch(h: Hmm, xs: np.ndarray, os_: np.ndarray):
    """Scaled forward pass over a batch of equal-length (input, output) pairs.

    Returns (log_probs, ahat_list, scale_list): per-step scaled forward
    vectors and scaling constants, enough to run the backward pass.
    """
    B, ell = xs.shape
    ahat = np.zeros((B, h.m))
    ahat[:, 0] = 1.0
    ahats = []
    scales = []
    logp = np.zeros(B)
    for i in range(ell):
        ahats.append(ahat)
        qe = h.q[:, xs[:, i], os_[:, i]].T  # (B, m)
        u = ahat * qe
        s = u.sum(axis=1)
        dead = s <= 0.0
        safe = np.where(dead, 1.0, s)
        scales.append(safe)
        logp = np.where(dead, -np.inf, logp + np.log(safe))
        u = u / safe[:, None]
        if i < ell - 1:
            trans = h.t[:, xs[:, i], os_[:, i], :]  # (m, B, m)
            ahat = np.einsum("bl,lbm->bm", u, trans)
        else:
            ahat = u
    return logp, ahats, scales


def hmm_log_prob(h: Hmm, x, o) -> float:
    x = np.asarray(x, dtype=np.int64)
    o = np.asarray(o, dtype=np.int64)
    if x.shape != o.shape:
        raise DimensionMismatch(f"input length {x.shape} != output length {o.shape}")
    if x.size == 0:
        return 0.0
    logp, _, _ = _forward_batch(h, x[None, :], o[None, :])
    return float(logp[0])


def hmm_prob(h: Hmm, x, o) -> float:
    """Probability of emitting ``o`` on input ``x`` (forward recursion)."""
    return math.exp(hmm_log_prob(h, x, o))


def latent_marginal(h: Hmm, x) -> np.ndarray:
    """Distribution of the latent state after consuming ``x`` (outputs summed)."""
    x = np.asarray(x, dtype=np.int64)
    dist = np.zeros(h.m)
    dist[0] = 1.0
    for xi in x:
        step = np.einsum("lo,lom->lm", h.q[:, xi, :], h.t[:, xi, :, :])
        dist = dist @ step
    return dist


def sample_outputs(h: Hmm, x, rng: np.random.Generator) -> tuple[int, ...]:
    """Draw one output sequence for input ``x``."""
    state = 0
    out = []
    for xi in x:
        o = int(rng.choice(h.n_outputs, p=h.q[state, xi]))
        out.append(o)
        state = int(rng.choice(h.m, p=h.t[state, xi, o]))
    return tuple(out)


def hmm_conditionals(h: Hmm, model: EmpiricalModel) -> dict[int, dict[tuple[int, ...], float]]:
    """Model probability of every supported outcome, per context."""
    out: dict[int, dict[tuple[int, ...], float]] = {}
    for ctx, dist in zip(model.contexts, model.distributions):
        xs = np.array([context_inputs(ctx)] * len(dist), dtype=np.int64)
        os_ = np.array(sorted(dist), dtype=np.int64)
        logp, _, _ = _forward_batch(h, xs, os_)
        out[ctx.id] = {
            tuple(map(int, o)): float(np.exp(lp)) for o, lp in zip(os_, logp)
        }
    return out


# -- training ---------------------------------------------------------------


def _weighted_dataset(model: EmpiricalModel):
    """(inputs, outputs, weight) triples grouped by sequence length."""
    groups: dict[int, list[tuple[tuple[int, ...], tuple[int, ...], float]]] = {}
    w_ctx = 1.0 / len(model.contexts)
    for ctx, dist in zip(model.contexts, model.distributions):
        x = context_inputs(ctx)
        for o, p in sorted(dist.items()):
            groups.setdefault(len(x), []).append((x, o, p * w_ctx))
    batches = []
    for ell in sorted(groups):
        triples = groups[ell]
        xs = np.array([t[0] for t in triples], dtype=np.int64)
        os_ = np.array([t[1] for t in triples], dtype=np.int64)
        ws = np.array([t[2] for t in triples], dtype=float)
        batches.append((xs, os_, ws))
    return batches


def baum_welch(
    model: EmpiricalModel,
    m: int,
    init_seed: int = 0,
    max_iters: int = 500,
    tol: float = 1e-7,
    init: "Hmm | tuple | None" = None,
) -> tuple[Hmm, TrainReport]:
    """Expectation-maximization on the distribution-weighted task.

    Every (context-as-input-sequence, supported outcome) pair enters the
    E-step with weight e_C(outcome) / |contexts|; the M-step renormalizes
    expected counts. The weighted average log-likelihood is nondecreasing
    across iterations; training stops when the improvement falls below
    ``tol`` or after ``max_iters``.
    """
    if m < 1:
        raise ValueError("m must be >= 1")
    if init is None:
        h = random_hmm(m, model.num_observables, model.num_outcomes, init_seed)
    elif isinstance(init, Hmm):
        h = init
    else:
        # raw (emission, transition) tables: normalize rows ourselves
        q0 = np.asarray(init[0], dtype=float)
        t0 = np.asarray(init[1], dtype=float)
        if (q0.sum(axis=2) == 0).any() or (t0.sum(axis=3) == 0).any():
            raise DegenerateInit("initial tables contain an all-zero row")
        h = Hmm(
            m=m, n_inputs=model.num_observables, n_outputs=model.num_outcomes,
            q=q0 / q0.sum(axis=2, keepdims=True),
            t=t0 / t0.sum(axis=3, keepdims=True),
        )
    batches = _weighted_dataset(model)
    lls: list[float] = []
    converged = False
    for _ in range(max_iters):
        q_cnt = np.zeros_like(h.q)
        t_cnt = np.zeros_like(h.t)
        total_ll = 0.0
        for xs, os_, ws in batches:
            B, ell = xs.shape
            logp, ahats, scales = _forward_batch(h, xs, os_)
            total_ll += float(ws @ logp)
            # pairs the model gives zero probability contribute no counts
            ws = np.where(np.isfinite(logp), ws, 0.0)
            # scaled backward
            bhat = h.q[:, xs[:, ell - 1], os_[:, ell - 1]].T / scales[ell - 1][:, None]
            for i in range(ell - 1, -1, -1):
                gamma = ahats[i] * bhat  # (B, m), rows sum to 1
                np.add.at(q_cnt, (slice(None), xs[:, i], os_[:, i]), (gamma * ws[:, None]).T)
                if i > 0:
                    qe = h.q[:, xs[:, i - 1], os_[:, i - 1]].T  # (B, m)
                    trans = h.t[:, xs[:, i - 1], os_[:, i - 1], :]  # (m, B, m)
                    xi = (
                        ahats[i - 1][:, :, None]
                        * qe[:, :, None]
                        * np.einsum("lbm->blm", trans)
                        * bhat[:, None, :]
                        / scales[i - 1][:, None, None]
                    )  # (B, l, m)
                    np.add.at(
                        t_cnt,
                        (slice(None), xs[:, i - 1], os_[:, i - 1], slice(None)),
                        np.einsum("blm,b->lbm", xi, ws),
                    )
                    bhat_prev = qe * np.einsum("lbm,bm->bl", trans, bhat)
                    bhat = bhat_prev / scales[i - 1][:, None]
        lls.append(total_ll)
        # rows whose expected mass is negligible are left untouched: they are
        # effectively unvisited and renormalizing noise would destabilize them
        q_tot = q_cnt.sum(axis=2, keepdims=True)
        t_tot = t_cnt.sum(axis=3, keepdims=True)
        q_mask = q_tot > 1e-12
        t_mask = t_tot > 1e-12
        new_q = np.where(q_mask, q_cnt / np.where(q_mask, q_tot, 1.0), h.q)
        new_t = np.where(t_mask, t_cnt / np.where(t_mask, t_tot, 1.0), h.t)
        h = Hmm(m=h.m, n_inputs=h.n_inputs, n_outputs=h.n_outputs, q=new_q, t=new_t)
        if len(lls) >= 2 and abs(lls[-1] - lls[-2]) < tol:
            converged = True
            break
    final_kl = kl_divergence(model, h)
    return h, TrainReport(
        log_likelihoods=tuple(lls),
        final_kl=final_kl,
        iterations=len(lls),
        converged=converged,
    )


# -- evaluation --------------------------------------------------------------


def average_log_likelihood(model: EmpiricalModel, h: Hmm) -> float:
    """Weighted average log-likelihood of the target under the model."""
    total = 0.0
    for xs, os_, ws in _weighted_dataset(model):
        logp, _, _ = _forward_batch(h, xs, os_)
        total += float(ws @ logp)
    return total


def kl_divergence(
    target: EmpiricalModel, h: Hmm, direction: str = "target_to_model"
) -> float:
    """Mean per-context relative entropy between target and model.

    ``target_to_model`` averages sum_o e_C(o) log(e_C(o) / p(o|C)) and is
    +inf iff the model gives zero probability to a supported outcome.
    ``model_to_target`` averages sum_o p(o|C) log(p(o|C) / e_C(o)) and is
    +inf iff the model leaks probability outside a context's support
    (beyond a 1e-12 numerical allowance).
    """
    conds = hmm_conditionals(h, target)
    return _kl_from_conditionals(target, conds, direction)


def _kl_from_conditionals(
    target: EmpiricalModel,
    conds: dict[int, dict[tuple[int, ...], float]],
    direction: str,
) -> float:
    if direction not in ("target_to_model", "model_to_target"):
        raise ValueError(f"unknown direction {direction!r}")
    total = 0.0
    for ctx, dist in zip(target.contexts, target.distributions):
        p = conds[ctx.id]
        if direction == "target_to_model":
            for o, e in dist.items():
                ph = p[o]
                if ph <= 0.0:
                    return math.inf
                total += e * math.log(e / ph)
        else:
            mass_in = sum(p.values())
            if 1.0 - mass_in > LEAK_TOL:
                return math.inf
            for o, e in dist.items():
                ph = p[o]
                if ph > 0.0:
                    total += ph * math.log(ph / e)
    return total / len(target.contexts)


def _max_completion_bounds(h: Hmm, x: np.ndarray) -> np.ndarray:
    """V[i, state]: upper bound on any single completion's probability."""
    ell = len(x)
    V = np.ones((ell + 1, h.m))
    for i in range(ell - 1, -1, -1):
        # max over o of q(o | state, x_i) * sum_state' t * V[i+1]
        cont = np.einsum("lom,m->lo", h.t[:, x[i], :, :], V[i + 1])
        V[i] = (h.q[:, x[i], :] * cont).max(axis=1)
    return V


def support_violation(
    model: EmpiricalModel,
    h: Hmm,
    eps: float = 0.0,
    max_per_context: int = 1,
) -> list[tuple[int, tuple[int, ...]]]:
    """Outcomes outside a context's support that the model still emits.

    Returns (context id, outcome) witnesses with model probability strictly
    above ``eps`` while the target probability is zero; the list is empty
    iff every context's model conditional stays inside the target support
    at that threshold. This is the containment a latent-state count below
    the memory bound can never satisfy. At most ``max_per_context``
    witnesses are reported per context.
    """
    found: list[tuple[int, tuple[int, ...]]] = []
    for ctx, dist in zip(model.contexts, model.distributions):
        x = np.asarray(context_inputs(ctx), dtype=np.int64)
        ell = len(x)
        V = _max_completion_bounds(h, x)
        support = set(dist)
        hits: list[tuple[int, tuple[int, ...]]] = []

        def descend(i: int, alpha: np.ndarray, prefix: tuple[int, ...]):
            if len(hits) >= max_per_context:
                return
            if i == ell:
                # alpha here is the per-state mass after the final emission
                if prefix not in support and float(alpha.sum()) > eps:
                    hits.append((ctx.id, prefix))
                return
            if i < ell - 1:
                # next[o] = per-state mass after emitting o and transitioning
                nxt = np.einsum(
                    "l,lom->om", alpha, h.q[:, x[i], :, None] * h.t[:, x[i], :, :]
                )
                bounds = nxt @ V[i + 1]
            else:
                nxt = (alpha[:, None] * h.q[:, x[i], :]).T  # (O, m)
                bounds = nxt.sum(axis=1)
            order = np.argsort(-bounds, kind="stable")
            for o in order:
                if bounds[o] <= eps:
                    break
                descend(i + 1, nxt[o], prefix + (int(o),))
                if len(hits) >= max_per_context:
                    return

        alpha0 = np.zeros(h.m)
        alpha0[0] = 1.0
        descend(0, alpha0, ())
        found.extend(hits)
    return found


def missing_support(
    model: EmpiricalModel, h: Hmm, eps: float = 0.0
) -> list[tuple[int, tuple[int, ...]]]:
    """Supported outcomes the model (numerically) fails to cover."""
    out = []
    conds = hmm_conditionals(h, model)
    for ctx, dist in zip(model.contexts, model.distributions):
        for o in sorted(dist):
            if conds[ctx.id][o] <= eps:
                out.append((ctx.id, o))
    return out


# -- certificate construction -------------------------------------------------


def hmm_from_partition(
    model: EmpiricalModel,
    parts: tuple[tuple[int, ...], ...],
    witnesses,
) -> Hmm:
    """Point-mass machine realizing one witness section per partition part.

    Builds a deterministic router over the contexts' input prefixes: the
    latent state tracks the (minimal) candidate part consistent with the
    inputs seen so far, and each step emits the witness value of that part
    on the current observable. Succeeds whenever contexts of different
    parts agree on witness values until their input prefixes diverge;
    otherwise raises CertificateUnroutable. The result emits, for every
    context, exactly its part's witness restriction, so its conditionals
    never leave the target supports.
    """
    part_of = {cid: j for j, part in enumerate(parts) for cid in part}
    witness_maps = [dict(w.assignment) for w in witnesses]
    m = len(parts)
    nx, no = model.num_observables, model.num_outcomes

    q = np.full((m, nx, no), np.nan)
    t = np.full((m, nx, no, m), np.nan)

    # prefix tree: node = dict(children), each node annotated with state
    seqs = {ctx.id: context_inputs(ctx) for ctx in model.contexts}

    def node_state(cids) -> int:
        return min(part_of[c] for c in cids)

    def set_emission(state: int, x: int, value: int):
        row = q[state, x]
        if not np.isnan(row).all():
            if row[value] != 1.0:
                raise CertificateUnroutable(
                    f"state {state} input {x} needs two different emissions"
                )
            return
        row[:] = 0.0
        row[value] = 1.0

    def set_transition(state: int, x: int, o: int, nxt: int):
        row = t[state, x, o]
        if not np.isnan(row).all():
            if row[nxt] != 1.0:
                raise CertificateUnroutable(
                    f"state {state} input {x} output {o} needs two different successors"
                )
            return
        row[:] = 0.0
        row[nxt] = 1.0

    def walk(cids: list[int], depth: int):
        state = node_state(cids)
        by_next: dict[int, list[int]] = {}
        for cid in cids:
            seq = seqs[cid]
            if depth >= len(seq):
                continue
            by_next.setdefault(seq[depth], []).append(cid)
        for x, members in sorted(by_next.items()):
            values = {witness_maps[part_of[c]][x] for c in members}
            if len(values) != 1:
                raise CertificateUnroutable(
                    f"contexts {sorted(members)} share input prefix but need "
                    f"different emissions on observable {x}"
                )
            value = values.pop()
            set_emission(state, x, value)
            set_transition(state, x, value, node_state(members))
            walk(members, depth + 1)

    walk(sorted(seqs), 0)

    # unused entries never fire; fill with uniform rows
    for state in range(m):
        for x in range(nx):
            if np.isnan(q[state, x]).all():
                q[state, x] = 1.0 / no
            for o in range(no):
                if np.isnan(t[state, x, o]).all():
                    t[state, x, o] = 1.0 / m
    return Hmm(m=m, n_inputs=nx, n_outputs=no, q=q, t=t)
