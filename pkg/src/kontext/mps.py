"""Complex matrix-product sequence models trained by gradient descent.

A model is a chain of complex tensors, one per site, with bond dimension m.
Sites alternate between *input* sites (conditioning tokens: per-position
observable choices of the target model) and *output* sites (outcome
tokens). Sequence probabilities follow the Born rule: the squared magnitude
of the chain contraction, normalized. Conditioning on a context is exact:
fix the input-site tokens and divide by the marginal obtained by summing
output sites, so no sampling is involved anywhere.

Interleaving input and output sites keeps conditional structure local: a
basis-conditioned target whose per-step amplitudes factor through a small
bond stays representable at that bond, which a blocked inputs-then-outputs
layout would destroy.

Training is plain gradient descent on the raw complex entries (independent
real/imaginary parts, adjoint-method gradients from cached partial
contractions) with a global renormalization after every step.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, Diverged, ZeroPrefix
from .model import Context, EmpiricalModel

ROLE_IN = 0
ROLE_OUT = 1
_MAGIC = b"QMPS"


@dataclass(frozen=True)
class ConditionalChain:
    """Site layout derived from an empirical model.

    Position i of every context contributes one input site whose alphabet
    is the set of observables occurring at that position (size 1 when every
    context agrees there) followed by one output site over the outcome
    alphabet.
    """

    positions: int
    obs_choices: tuple[tuple[int, ...], ...]
    num_outcomes: int

    @classmethod
    def for_model(cls, model: EmpiricalModel) -> "ConditionalChain":
        lengths = {len(c.observables) for c in model.contexts}
        if len(lengths) != 1:
            raise DimensionMismatch(
                "conditional chains require every context to have the same length"
            )
        ell = lengths.pop()
        choices = []
        for i in range(ell):
            choices.append(tuple(sorted({c.observables[i] for c in model.contexts})))
        return cls(positions=ell, obs_choices=choices, num_outcomes=model.num_outcomes)

    @property
    def num_sites(self) -> int:
        return 2 * self.positions

    @property
    def phys_dims(self) -> tuple[int, ...]:
        dims = []
        for ch in self.obs_choices:
            dims.append(len(ch))
            dims.append(self.num_outcomes)
        return tuple(dims)

    @property
    def roles(self) -> tuple[int, ...]:
        return tuple([ROLE_IN, ROLE_OUT] * self.positions)

    def input_tokens(self, ctx: Context) -> tuple[int, ...]:
        return tuple(
            self.obs_choices[i].index(obs) for i, obs in enumerate(ctx.observables)
        )

    def site_tokens(self, input_tokens, output_tokens) -> tuple[int, ...]:
        if len(input_tokens) != self.positions or len(output_tokens) != self.positions:
            raise DimensionMismatch(
                f"expected {self.positions} input and output tokens"
            )
        merged = []
        for a, b in zip(input_tokens, output_tokens):
            merged.append(int(a))
            merged.append(int(b))
        return tuple(merged)


@dataclass
class MpsModel:
    """Complex tensor chain; tensors[s] has shape (bond_l, phys, bond_r)."""

    phys_dims: tuple[int, ...]
    roles: tuple[int, ...]
    tensors: list[np.ndarray]

    def __post_init__(self):
        if len(self.tensors) != len(self.phys_dims) or len(self.roles) != len(self.phys_dims):
            raise DimensionMismatch("site count mismatch")
        if self.tensors[0].shape[0] != 1 or self.tensors[-1].shape[2] != 1:
            raise DimensionMismatch("boundary bonds must have size 1")
        for s in range(len(self.tensors) - 1):
            if self.tensors[s].shape[2] != self.tensors[s + 1].shape[0]:
                raise DimensionMismatch(f"bond mismatch between sites {s} and {s+1}")

    @property
    def num_sites(self) -> int:
        return len(self.tensors)

    @property
    def bond_dims(self) -> tuple[int, ...]:
        return tuple([t.shape[0] for t in self.tensors] + [self.tensors[-1].shape[2]])

    def amplitude(self, tokens) -> complex:
        if len(tokens) != self.num_sites:
            raise DimensionMismatch(f"expected {self.num_sites} tokens")
        v = np.ones((1,), dtype=complex)
        for s, tok in enumerate(tokens):
            v = v @ self.tensors[s][:, int(tok), :]
        return complex(v[0])

    def transfer_norm(self, fixed: dict[int, int] | None = None) -> float:
        """Sum of |amplitude|^2 with some sites optionally pinned to a token."""
        fixed = fixed or {}
        env = np.ones((1, 1), dtype=complex)
        for s, A in enumerate(self.tensors):
            if s in fixed:
                a = A[:, fixed[s], :]
                step = np.einsum("ab,cd->acbd", a, a.conj())
            else:
                step = np.einsum("apb,cpd->acbd", A, A.conj())
            env = np.einsum("ac,acbd->bd", env, step)
        return float(env[0, 0].real)

    def normalize(self) -> None:
        total = self.transfer_norm()
        if not math.isfinite(total) or total <= 0:
            raise Diverged("state norm is not finite and positive")
        scale = total ** (1.0 / (2 * self.num_sites))
        for s in range(self.num_sites):
            self.tensors[s] = self.tensors[s] / scale


def random_mps(
    phys_dims, roles, bond_dim: int, seed: int, scale: float | None = None
) -> MpsModel:
    rng = np.random.default_rng(seed)
    n = len(phys_dims)
    bonds = [1] + [bond_dim] * (n - 1) + [1]
    tensors = []
    for s in range(n):
        shape = (bonds[s], phys_dims[s], bonds[s + 1])
        sd = scale if scale is not None else 1.0 / math.sqrt(bonds[s] * phys_dims[s])
        t = rng.normal(0, sd, size=shape) + 1j * rng.normal(0, sd, size=shape)
        tensors.append(t)
    model = MpsModel(phys_dims=tuple(phys_dims), roles=tuple(roles), tensors=tensors)
    model.normalize()
    return model


def born_prob(model: MpsModel, tokens) -> float:
    """|amplitude|^2 normalized by the total squared norm of the chain."""
    amp = model.amplitude(tokens)
    return float(abs(amp) ** 2 / model.transfer_norm())


def conditional_prob(model: MpsModel, prefix_tokens, suffix_tokens) -> float:
    """p(outputs | inputs): Born weight divided by the exact input marginal.

    ``prefix_tokens`` pin the input sites in order, ``suffix_tokens`` the
    output sites; together they assign every site. The marginal contracts
    the output sites with the summed transfer operator -- no sampling.
    """
    in_sites = [s for s, r in enumerate(model.roles) if r == ROLE_IN]
    out_sites = [s for s, r in enumerate(model.roles) if r == ROLE_OUT]
    if len(prefix_tokens) != len(in_sites) or len(suffix_tokens) != len(out_sites):
        raise DimensionMismatch("prefix and suffix must cover all sites")
    fixed_in = {s: int(t) for s, t in zip(in_sites, prefix_tokens)}
    z_prefix = model.transfer_norm(fixed=fixed_in)
    if z_prefix < 1e-300:
        raise ZeroPrefix("conditioning prefix has numerically zero probability")
    tokens = dict(fixed_in)
    tokens.update({s: int(t) for s, t in zip(out_sites, suffix_tokens)})
    amp = model.amplitude([tokens[s] for s in range(model.num_sites)])
    return float(abs(amp) ** 2 / z_prefix)


# -- batched evaluation and gradients -----------------------------------------


def _context_batches(chain: ConditionalChain, target: EmpiricalModel):
    """Per context: site-token matrix for the supported outcomes + weights."""
    batches = []
    for ctx, dist in zip(target.contexts, target.distributions):
        x = chain.input_tokens(ctx)
        outcomes = sorted(dist)
        toks = np.array([chain.site_tokens(x, o) for o in outcomes], dtype=np.int64)
        ws = np.array([dist[o] for o in outcomes], dtype=float)
        batches.append((ctx.id, x, toks, ws))
    return batches


def _psi_stacks(model: MpsModel, toks: np.ndarray):
    """Left/right partial contractions for a (B, S) token batch."""
    B, S = toks.shape
    lefts = [np.ones((B, 1), dtype=complex)]
    for s in range(S):
        M = model.tensors[s][:, toks[:, s], :]  # (Dl, B, Dr)
        lefts.append(np.einsum("bl,lbr->br", lefts[-1], M))
    rights = [np.ones((B, 1), dtype=complex)]
    for s in range(S - 1, -1, -1):
        M = model.tensors[s][:, toks[:, s], :]
        rights.append(np.einsum("lbr,br->bl", M, rights[-1]))
    rights.reverse()  # rights[s] = contraction of sites >= s
    return lefts, rights


def _z_envs_batched(model: MpsModel, X: np.ndarray):
    """Doubled environments per context with inputs pinned, outputs summed.

    ``X`` holds one input-token row per context. Returns left environments
    (lists of (C, ket_bond, bra_bond) arrays), right environments, and the
    per-context marginals Z. Transfer steps are applied ket side then bra
    side so no rank-5 site operator is ever materialized.
    """
    S = model.num_sites
    C = X.shape[0]

    lefts = [np.ones((C, 1, 1), dtype=complex)]
    for s in range(S):
        A = model.tensors[s]
        env = lefts[-1]
        if model.roles[s] == ROLE_IN:
            a = A[:, X[:, s // 2], :]  # (Dl, C, Dr)
            tmp = np.einsum("clm,lcr->cmr", env, a)
            nxt = np.einsum("cmr,mcs->crs", tmp, a.conj())
        else:
            tmp = np.einsum("clm,lpr->cmpr", env, A)
            nxt = np.einsum("cmpr,mps->crs", tmp, A.conj())
        lefts.append(nxt)
    rights = [np.ones((C, 1, 1), dtype=complex)]
    for s in range(S - 1, -1, -1):
        A = model.tensors[s]
        env = rights[-1]
        if model.roles[s] == ROLE_IN:
            a = A[:, X[:, s // 2], :]
            tmp = np.einsum("lcr,crs->lcs", a, env)
            nxt = np.einsum("lcs,mcs->clm", tmp, a.conj())
        else:
            tmp = np.einsum("lpr,crs->lpcs", A, env)
            nxt = np.einsum("lpcs,mps->clm", tmp, A.conj())
        rights.append(nxt)
    rights.reverse()
    z = lefts[-1][:, 0, 0].real.copy()
    return lefts, rights, z


def conditionals_with_leak(
    model: MpsModel, chain: ConditionalChain, target: EmpiricalModel
) -> tuple[dict[int, dict[tuple[int, ...], float]], dict[int, float]]:
    """Per-context conditional probabilities of supported outcomes + leak mass."""
    conds: dict[int, dict[tuple[int, ...], float]] = {}
    leaks: dict[int, float] = {}
    batches = _context_batches(chain, target)
    X = np.array([x for _cid, x, _t, _w in batches], dtype=np.int64)
    _zl, _zr, z = _z_envs_batched(model, X)
    for row, (cid, _x, toks, _ws) in enumerate(batches):
        if z[row] < 1e-300:
            raise ZeroPrefix(f"context {cid} has zero conditioning probability")
        lefts, _ = _psi_stacks(model, toks)
        psi = lefts[-1][:, 0]
        probs = np.abs(psi) ** 2 / z[row]
        outcomes = sorted(target.distribution_by_id(cid))
        conds[cid] = {o: float(p) for o, p in zip(outcomes, probs)}
        leaks[cid] = float(max(0.0, 1.0 - probs.sum()))
    return conds, leaks


def kl_divergence_mps(
    target: EmpiricalModel,
    model: MpsModel,
    chain: ConditionalChain | None = None,
    direction: str = "target_to_model",
    leak_tol: float = 1e-9,
) -> float:
    """Mean per-context relative entropy, same conventions as the HMM version.

    The Born conditional of a generic chain has full support, so the
    model-to-target direction uses ``leak_tol`` for the outside-support mass
    below which the (always slightly positive) leak is treated as zero.
    """
    if chain is None:
        chain = ConditionalChain.for_model(target)
    conds, leaks = conditionals_with_leak(model, chain, target)
    total = 0.0
    for ctx, dist in zip(target.contexts, target.distributions):
        p = conds[ctx.id]
        if direction == "target_to_model":
            for o, e in dist.items():
                ph = p[o]
                if ph <= 0.0:
                    return math.inf
                total += e * math.log(e / ph)
        elif direction == "model_to_target":
            if leaks[ctx.id] > leak_tol:
                return math.inf
            for o, e in dist.items():
                ph = p[o]
                if ph > 0.0:
                    total += ph * math.log(ph / e)
        else:
            raise ValueError(f"unknown direction {direction!r}")
    return total / len(target.contexts)


@dataclass(frozen=True)
class QTrainReport:
    nll_trace: tuple[float, ...]
    grad_norms: tuple[float, ...]
    final_kl: float
    seed: int


class TrainingSet:
    """Precomputed token/weight arrays for one (chain, target) pair."""

    def __init__(self, chain: ConditionalChain, target: EmpiricalModel):
        self.chain = chain
        batches = _context_batches(chain, target)
        self.X = np.array([x for _cid, x, _t, _w in batches], dtype=np.int64)
        self.toks = np.concatenate([t for _cid, _x, t, _w in batches])
        self.ws = np.concatenate([w for _cid, _x, _t, w in batches])
        self.ctx_row = np.concatenate(
            [np.full(len(w), i) for i, (_c, _x, _t, w) in enumerate(batches)]
        )
        self.w_ctx = np.array([float(w.sum()) for _c, _x, _t, w in batches])


def nll_and_grad(
    model: MpsModel,
    chain: ConditionalChain,
    target: EmpiricalModel,
    dataset: TrainingSet | None = None,
) -> tuple[float, list[np.ndarray]]:
    """Negative log-likelihood and its Wirtinger gradient (d NLL / d conj(A)).

    NLL = -sum_C sum_o e_C(o) log p(o | C) with the exact Born conditional.
    Fully batched: the amplitude term runs over every (context, outcome)
    pair at once and the partition term over every context at once. The
    real-coordinate steepest-descent step is A -= lr * 2 * grad.
    """
    S = model.num_sites
    ds = dataset if dataset is not None else TrainingSet(chain, target)
    X, toks, ws = ds.X, ds.toks, ds.ws
    zl, zr, z = _z_envs_batched(model, X)
    if np.any(z < 1e-300):
        raise ZeroPrefix("a context collapsed to zero conditioning probability")
    lefts, rights = _psi_stacks(model, toks)
    psi = lefts[-1][:, 0]
    p = np.abs(psi) ** 2 / z[ds.ctx_row]
    if np.any(p <= 0):
        raise Diverged("zero Born probability on a supported outcome")
    nll = -float(ws @ np.log(p))

    grads = [np.zeros_like(t) for t in model.tensors]
    coeff = ws / psi.conj()  # for d log|psi|^2 / d conj(A)
    zw = ds.w_ctx / z  # per-context weight on the partition term
    for s in range(S):
        A = model.tensors[s]
        # amplitude term: -sum_b w_b conj(L_b R_b) / conj(psi_b)
        lw = lefts[s] * coeff.conj()[:, None]
        contrib = np.einsum("bl,br->lbr", lw, rights[s + 1]).conj()
        np.add.at(grads[s], (slice(None), toks[:, s], slice(None)), -contrib)
        # partition term: + w_C * dZ_C/dconj(A) / Z_C
        zlw = zl[s] * zw[:, None, None]
        if model.roles[s] == ROLE_IN:
            a = A[:, X[:, s // 2], :]  # (Dl, C, Dr)
            tmp = np.einsum("cla,lcr->acr", zlw, a)
            dz = np.einsum("acr,crb->acb", tmp, zr[s + 1])
            np.add.at(grads[s], (slice(None), X[:, s // 2], slice(None)), dz)
        else:
            tmp = np.einsum("cla,lpr->capr", zlw, A)
            grads[s] += np.einsum("capr,crb->apb", tmp, zr[s + 1])
    return nll, grads


def train(
    target: EmpiricalModel,
    bond_dim: int,
    steps: int = 2000,
    lr: float = 0.01,
    seed: int = 0,
    chain: ConditionalChain | None = None,
    optimizer: str = "adam",
    warmup: int = 100,
    lr_min_frac: float = 0.1,
) -> tuple[MpsModel, QTrainReport]:
    """Gradient descent on raw tensor entries; returns the best model seen.

    The default optimizer is Adam on the independent real/imaginary parts
    with linear warmup and cosine decay; plain fixed-step descent is kept as
    ``optimizer="gd"`` but stalls in shallow local optima on phase-sensitive
    targets. Tensors are renormalized to unit global norm after every step
    (the conditional objective is scale-invariant, so this is pure hygiene).
    """
    if optimizer not in ("adam", "gd"):
        raise ValueError(f"unknown optimizer {optimizer!r}")
    if chain is None:
        chain = ConditionalChain.for_model(target)
    model = random_mps(chain.phys_dims, chain.roles, bond_dim, seed)
    dataset = TrainingSet(chain, target)
    mom = [np.zeros_like(t) for t in model.tensors]
    vel = [np.zeros_like(t, dtype=float) for t in model.tensors]
    best_tensors = [t.copy() for t in model.tensors]
    best_nll = math.inf
    nlls: list[float] = []
    gnorms: list[float] = []
    for step in range(1, steps + 1):
        nll, grads = nll_and_grad(model, chain, target, dataset)
        if not math.isfinite(nll):
            raise Diverged("objective became non-finite")
        nlls.append(nll)
        if nll < best_nll:
            best_nll = nll
            best_tensors = [t.copy() for t in model.tensors]
        gn = math.sqrt(sum(float(np.sum(np.abs(g) ** 2)) for g in grads))
        gnorms.append(gn)
        if optimizer == "gd":
            cur = lr
            for s in range(model.num_sites):
                model.tensors[s] = model.tensors[s] - cur * 2.0 * grads[s]
        else:
            if step <= warmup:
                cur = lr * step / max(1, warmup)
            else:
                frac = (step - warmup) / max(1, steps - warmup)
                cur = lr * (lr_min_frac + (1 - lr_min_frac) * 0.5 * (1 + math.cos(math.pi * frac)))
            for s in range(model.num_sites):
                g = 2.0 * grads[s]
                mom[s] = 0.9 * mom[s] + 0.1 * g
                vel[s] = 0.999 * vel[s] + 0.001 * np.abs(g) ** 2
                mhat = mom[s] / (1 - 0.9**step)
                vhat = vel[s] / (1 - 0.999**step)
                model.tensors[s] = model.tensors[s] - cur * mhat / (np.sqrt(vhat) + 1e-8)
        model.normalize()
    model = MpsModel(phys_dims=model.phys_dims, roles=model.roles, tensors=best_tensors)
    final_kl = kl_divergence_mps(target, model, chain)
    return model, QTrainReport(
        nll_trace=tuple(nlls), grad_norms=tuple(gnorms), final_kl=final_kl, seed=seed
    )


# -- serialization -------------------------------------------------------------


def save_mps(model: MpsModel, path: str) -> None:
    """Binary layout: "QMPS", version, site count, phys dims, bond dims,
    site roles, then per-site row-major little-endian f64 re/im pairs."""
    parts = [_MAGIC, struct.pack("<II", 1, model.num_sites)]
    parts.append(struct.pack(f"<{model.num_sites}I", *model.phys_dims))
    parts.append(struct.pack(f"<{model.num_sites + 1}I", *model.bond_dims))
    parts.append(struct.pack(f"<{model.num_sites}B", *model.roles))
    for t in model.tensors:
        flat = np.ascontiguousarray(t, dtype=complex).ravel()
        inter = np.empty(2 * flat.size, dtype="<f8")
        inter[0::2] = flat.real
        inter[1::2] = flat.imag
        parts.append(inter.tobytes())
    blob = b"".join(parts)
    import os
    import tempfile

    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-kontext-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(blob)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_mps(path: str) -> MpsModel:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != _MAGIC:
        raise ValueError("not a QMPS file")
    version, n_sites = struct.unpack_from("<II", blob, 4)
    if version != 1:
        raise ValueError(f"unsupported QMPS version {version}")
    off = 12
    phys = struct.unpack_from(f"<{n_sites}I", blob, off)
    off += 4 * n_sites
    bonds = struct.unpack_from(f"<{n_sites + 1}I", blob, off)
    off += 4 * (n_sites + 1)
    roles = struct.unpack_from(f"<{n_sites}B", blob, off)
    off += n_sites
    tensors = []
    for s in range(n_sites):
        count = bonds[s] * phys[s] * bonds[s + 1]
        inter = np.frombuffer(blob, dtype="<f8", count=2 * count, offset=off)
        off += 16 * count
        t = (inter[0::2] + 1j * inter[1::2]).reshape(bonds[s], phys[s], bonds[s + 1])
        tensors.append(t.copy())
    return MpsModel(phys_dims=tuple(phys), roles=tuple(roles), tensors=tensors)
