"""Experiment orchestration: estimator benchmarks, memory-bound checks,
classical/quantum KL gap sweeps, and the likelihood-ratio significance test.

Everything here is deterministic given the spec and seeds; wall-clock
runtimes are measured through an injectable clock so byte-identical reruns
can be tested, and work counters (subset checks) are recorded alongside
timers so complexity shapes are machine-checkable without timer noise.
"""

from __future__ import annotations

import math
import os
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammainc

from . import hmm as hmm_mod
from . import mps as mps_mod
from .errors import CertificateUnroutable
from .estimators import (
    build_hypergraph,
    coloring_estimate,
    exact_bruteforce,
    greedy_estimate,
)
from .generators import GhzSpec, RandomModelSpec, ghz_model, noncontextual_model, random_model
from .model import (
    EmpiricalModel,
    contextuality_number_definitional,
    load_model,
    write_atomic,
)

CSV_COLUMNS = [
    "model_id", "family", "n", "sparsity", "k_true", "k_est", "k_method",
    "m", "kl_classical", "kl_quantum", "gap", "ll_c", "ll_q", "lr_stat",
    "p_value", "runtime_c_ms", "runtime_q_ms", "seed",
]

BENCHMARK_COLUMNS = [
    "model_id", "family", "n", "sparsity", "k_true", "k_method", "k_est",
    "runtime_ms", "subset_checks",
]

THREE_SIGMA_P = 2.7e-3


# -- chi-squared / likelihood ratio -------------------------------------------


def chi2_cdf(x: float, df: int) -> float:
    """Chi-squared CDF via the regularized lower incomplete gamma function."""
    if df < 1:
        raise ValueError("df must be >= 1")
    if x <= 0:
        return 0.0
    return float(gammainc(df / 2.0, x / 2.0))


@dataclass(frozen=True)
class LrTestResult:
    statistic: float
    df: int
    p_value: float
    reject_at_3sigma: bool
    n_tokens: int
    scale: float  # the 2 * n_tokens multiplier applied to the ll difference


def likelihood_ratio_test(
    ll_classical_per_token: float,
    ll_quantum_per_token: float,
    n_tokens: int,
    df: int,
) -> LrTestResult:
    """Nested-model likelihood-ratio test of quantum over classical fit.

    statistic = 2 * n_tokens * (ll_q - ll_c), clamped at zero;
    p = 1 - chi2_cdf(statistic, df); rejection at the three-sigma level.
    """
    if df < 1:
        raise ValueError("df must be >= 1")
    scale = 2.0 * n_tokens
    stat = max(0.0, scale * (ll_quantum_per_token - ll_classical_per_token))
    p = 1.0 - chi2_cdf(stat, df)
    return LrTestResult(
        statistic=stat,
        df=df,
        p_value=p,
        reject_at_3sigma=p < THREE_SIGMA_P,
        n_tokens=n_tokens,
        scale=scale,
    )


def hmm_param_count(m: int, n_inputs: int, n_outputs: int) -> int:
    return m * n_inputs * (n_outputs - 1) + m * n_inputs * n_outputs * (m - 1)


def mps_param_count(chain: mps_mod.ConditionalChain, bond_dim: int) -> int:
    dims = chain.phys_dims
    n = len(dims)
    bonds = [1] + [bond_dim] * (n - 1) + [1]
    return sum(2 * bonds[s] * dims[s] * bonds[s + 1] for s in range(n))


def default_df(target: EmpiricalModel, bond_dim: int) -> int:
    """Parameter-count difference between the model classes, floored at 1."""
    chain = mps_mod.ConditionalChain.for_model(target)
    diff = mps_param_count(chain, bond_dim) - hmm_param_count(
        bond_dim, target.num_observables, target.num_outcomes
    )
    return max(1, diff)


# -- best-of-restarts training --------------------------------------------------


def train_classical_best(
    target: EmpiricalModel,
    m: int,
    restarts: int = 5,
    base_seed: int = 0,
    max_iters: int = 500,
    tol: float = 1e-7,
):
    """Baum-Welch restarts; returns (hmm, report) with the lowest final KL."""
    best = None
    for r in range(restarts):
        h, rep = hmm_mod.baum_welch(target, m, init_seed=base_seed + r,
                                    max_iters=max_iters, tol=tol)
        if best is None or rep.final_kl < best[1].final_kl:
            best = (h, rep)
    return best


def train_quantum_best(
    target: EmpiricalModel,
    bond_dim: int,
    restarts: int = 3,
    base_seed: int = 0,
    steps: int = 2000,
    lr: float = 0.01,
):
    """Gradient-descent restarts; alternates lr and 2*lr across seeds."""
    best = None
    for r in range(restarts):
        cur_lr = lr if r % 2 == 0 else 2 * lr
        model, rep = mps_mod.train(
            target, bond_dim, steps=steps, lr=cur_lr, seed=base_seed + r
        )
        if best is None or rep.final_kl < best[1].final_kl:
            best = (model, rep)
    return best


def evaluate_classical(target: EmpiricalModel, h: hmm_mod.Hmm) -> dict:
    return {
        "kl_target_to_model": hmm_mod.kl_divergence(target, h),
        "kl_model_to_target": hmm_mod.kl_divergence(target, h, "model_to_target"),
        "support_violations": len(hmm_mod.support_violation(target, h)),
        "avg_log_likelihood": hmm_mod.average_log_likelihood(target, h),
    }


def evaluate_quantum(target: EmpiricalModel, model: mps_mod.MpsModel) -> dict:
    chain = mps_mod.ConditionalChain.for_model(target)
    conds, leaks = mps_mod.conditionals_with_leak(model, chain, target)
    ll = 0.0
    w = 1.0 / len(target.contexts)
    for ctx, dist in zip(target.contexts, target.distributions):
        for o, e in dist.items():
            ll += w * e * math.log(max(conds[ctx.id][o], 1e-300))
    return {
        "kl_target_to_model": mps_mod.kl_divergence_mps(target, model, chain),
        "kl_model_to_target": mps_mod.kl_divergence_mps(
            target, model, chain, "model_to_target"
        ),
        "max_leak": max(leaks.values()),
        "avg_log_likelihood": ll,
    }


# -- estimator benchmark ---------------------------------------------------------


@dataclass(frozen=True)
class BenchmarkRow:
    model_id: str
    family: str
    n: int
    sparsity: int
    k_true: int
    k_method: str
    k_est: int
    runtime_s: float
    subset_checks: int | None = None

    @property
    def overestimate(self) -> int:
        return self.k_est - self.k_true


def estimator_benchmark(
    models: list[tuple[str, str, int, int, EmpiricalModel]],
    methods: tuple[str, ...] = ("exact", "greedy", "coloring"),
    greedy_permutations: int = 1,
    seed: int = 0,
    clock=time.perf_counter,
) -> list[BenchmarkRow]:
    """Per-model estimates and runtimes against the definitional ground truth.

    ``models`` rows are (model_id, family, n, sparsity, model).
    """
    rows: list[BenchmarkRow] = []
    for model_id, family, n, sparsity, model in models:
        k_true = contextuality_number_definitional(model)
        for method in methods:
            t0 = clock()
            checks = None
            if method == "exact":
                k_est, _cert = exact_bruteforce(model, seed=seed)
            elif method == "greedy":
                k_est = greedy_estimate(model, greedy_permutations, seed).final_k
            elif method == "coloring":
                k_est, _classes, hg = coloring_estimate(model)
                checks = hg.subset_checks
            else:
                raise ValueError(f"unknown method {method!r}")
            rows.append(
                BenchmarkRow(
                    model_id=model_id, family=family, n=n, sparsity=sparsity,
                    k_true=k_true, k_method=method, k_est=k_est,
                    runtime_s=clock() - t0, subset_checks=checks,
                )
            )
    return rows


def benchmark_csv(rows: list[BenchmarkRow]) -> str:
    lines = [",".join(BENCHMARK_COLUMNS)]
    for r in rows:
        lines.append(
            f"{r.model_id},{r.family},{r.n},{r.sparsity},{r.k_true},"
            f"{r.k_method},{r.k_est},{r.runtime_s * 1000.0!r},"
            f"{'' if r.subset_checks is None else r.subset_checks}"
        )
    return "\n".join(lines) + "\n"


# -- memory-bound verification -----------------------------------------------------


@dataclass(frozen=True)
class Lemma1Report:
    k: int
    definitional_ok: bool
    certificate_parts: int
    certificate_routable: bool
    certificate_clean: bool
    certificate_kl_model_to_target: float
    empirical_violation_by_m: dict[int, bool]
    empirical_kl_model_to_target_by_m: dict[int, float]


def lemma1_verify(
    model: EmpiricalModel,
    k: int,
    restarts: int = 5,
    base_seed: int = 0,
    parts_override: tuple[tuple[int, ...], ...] | None = None,
) -> Lemma1Report:
    """Three-way check of the latent-state memory bound.

    (a) definitional: no compatible partition into <= k parts, one into
    k + 1; (b) constructive: a (k+1)-part certificate compiled into a
    point-mass router stays inside every support (reported unroutable when
    context identity is not resolvable from input prefixes, e.g. when all
    contexts share one observable tuple); (c) empirical: trained machines
    with at most k states always step outside some context's support.
    """
    from .model import Budget, SectionCache, _exists_compatible_partition

    cache = SectionCache(model, Budget())
    def_ok = (
        all(not _exists_compatible_partition(model, j, cache) for j in range(1, k + 1))
        and _exists_compatible_partition(model, k + 1, cache)
    )

    if parts_override is not None:
        parts = parts_override
        witnesses = tuple(cache.joint(list(p)).first_section() for p in parts)
    else:
        _k_exact, cert = exact_bruteforce(model)
        parts, witnesses = cert.parts, cert.witness_sections
    routable = True
    clean = False
    cert_kl = math.inf
    try:
        router = hmm_mod.hmm_from_partition(model, parts, witnesses)
        clean = not hmm_mod.support_violation(model, router)
        cert_kl = hmm_mod.kl_divergence(model, router, "model_to_target")
    except CertificateUnroutable:
        routable = False

    violation_by_m: dict[int, bool] = {}
    kl_by_m: dict[int, float] = {}
    for m in range(1, k + 1):
        best = train_classical_best(model, m, restarts=restarts, base_seed=base_seed)
        h = best[0]
        violation_by_m[m] = bool(hmm_mod.support_violation(model, h))
        kl_by_m[m] = hmm_mod.kl_divergence(model, h, "model_to_target")
    return Lemma1Report(
        k=k,
        definitional_ok=def_ok,
        certificate_parts=len(parts),
        certificate_routable=routable,
        certificate_clean=clean,
        certificate_kl_model_to_target=cert_kl,
        empirical_violation_by_m=violation_by_m,
        empirical_kl_model_to_target_by_m=kl_by_m,
    )


# -- gap sweep -------------------------------------------------------------------


@dataclass(frozen=True)
class SweepModel:
    model_id: str
    family: str
    n: int
    sparsity: int
    model: EmpiricalModel
    k_true: int | None = None
    k_est: int | None = None
    k_method: str = ""


@dataclass(frozen=True)
class SweepSpec:
    models: tuple[SweepModel, ...]
    dims: tuple[int, ...]
    restarts_classical: int = 5
    restarts_quantum: int = 3
    seed: int = 0
    em_max_iters: int = 500
    em_tol: float = 1e-7
    q_steps: int = 2000
    q_lr: float = 0.01
    df_override: int | None = None

    def __post_init__(self):
        if not self.dims or any(d < 1 for d in self.dims):
            raise ValueError("dims must be a nonempty list of positive ints")


@dataclass(frozen=True)
class GapRecord:
    model_id: str
    family: str
    n: int
    sparsity: int
    k_true: int | None
    k_est: int | None
    k_method: str
    m: int
    kl_classical: float
    kl_quantum: float
    ll_c: float
    ll_q: float
    lr_stat: float
    p_value: float
    runtime_c_ms: float
    runtime_q_ms: float
    seed: int

    @property
    def gap(self) -> float:
        return self.kl_classical - self.kl_quantum


def _run_cell(sm: SweepModel, m: int, spec: SweepSpec, clock) -> GapRecord:
    target = sm.model
    seq_len = len(target.contexts[0].observables)
    t0 = clock()
    h, _rep = train_classical_best(
        target, m, restarts=spec.restarts_classical, base_seed=spec.seed,
        max_iters=spec.em_max_iters, tol=spec.em_tol,
    )
    t_c = clock() - t0
    kl_c = hmm_mod.kl_divergence(target, h)
    ll_c = hmm_mod.average_log_likelihood(target, h) / seq_len
    t0 = clock()
    qm, _qrep = train_quantum_best(
        target, m, restarts=spec.restarts_quantum, base_seed=spec.seed,
        steps=spec.q_steps, lr=spec.q_lr,
    )
    t_q = clock() - t0
    kl_q = mps_mod.kl_divergence_mps(target, qm)
    ll_q = evaluate_quantum(target, qm)["avg_log_likelihood"] / seq_len
    n_tokens = sum(len(d) for d in target.distributions) * seq_len
    df = spec.df_override if spec.df_override is not None else default_df(target, m)
    lr_res = likelihood_ratio_test(ll_c, ll_q, n_tokens, df)
    return GapRecord(
        model_id=sm.model_id, family=sm.family, n=sm.n, sparsity=sm.sparsity,
        k_true=sm.k_true, k_est=sm.k_est, k_method=sm.k_method, m=m,
        kl_classical=kl_c, kl_quantum=kl_q, ll_c=ll_c, ll_q=ll_q,
        lr_stat=lr_res.statistic, p_value=lr_res.p_value,
        runtime_c_ms=t_c * 1000.0, runtime_q_ms=t_q * 1000.0, seed=spec.seed,
    )


def gap_sweep(
    spec: SweepSpec, clock=time.perf_counter, workers: int | None = None
) -> list[GapRecord]:
    """Train both model classes on every (model, dim) cell.

    Per-cell failures are recorded as rows with infinite divergences rather
    than aborting the sweep. Cells run in parallel when KONTEXT_THREADS (or
    ``workers``) exceeds 1; results merge in (model_id, m) order either way.
    """
    if workers is None:
        workers = int(os.environ.get("KONTEXT_THREADS", "1"))
    cells = [(sm, m) for sm in spec.models for m in spec.dims]
    records = []
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_run_cell, sm, m, spec, time.perf_counter) for sm, m in cells]
            for (sm, m), fut in zip(cells, futures):
                try:
                    records.append(fut.result())
                except Exception:
                    records.append(_failure_record(sm, m, spec))
    else:
        for sm, m in cells:
            try:
                records.append(_run_cell(sm, m, spec, clock))
            except Exception:
                records.append(_failure_record(sm, m, spec))
    records.sort(key=lambda r: (r.model_id, r.m))
    return records


def _failure_record(sm: SweepModel, m: int, spec: SweepSpec) -> GapRecord:
    return GapRecord(
        model_id=sm.model_id, family=sm.family, n=sm.n, sparsity=sm.sparsity,
        k_true=sm.k_true, k_est=sm.k_est, k_method=sm.k_method, m=m,
        kl_classical=math.inf, kl_quantum=math.inf, ll_c=math.nan, ll_q=math.nan,
        lr_stat=math.nan, p_value=math.nan, runtime_c_ms=0.0, runtime_q_ms=0.0,
        seed=spec.seed,
    )


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        if math.isnan(v):
            return "nan"
        return repr(v)
    return str(v)


def records_to_csv(records: list[GapRecord]) -> str:
    lines = [",".join(CSV_COLUMNS)]
    for r in records:
        gap = r.gap if math.isfinite(r.kl_classical) and math.isfinite(r.kl_quantum) else (
            math.inf if math.isinf(r.kl_classical) and math.isfinite(r.kl_quantum) else math.nan
        )
        vals = [
            r.model_id, r.family, r.n, r.sparsity, r.k_true, r.k_est, r.k_method,
            r.m, r.kl_classical, r.kl_quantum, gap, r.ll_c, r.ll_q, r.lr_stat,
            r.p_value, r.runtime_c_ms, r.runtime_q_ms, r.seed,
        ]
        lines.append(",".join(_fmt(v) for v in vals))
    return "\n".join(lines) + "\n"


def write_sweep_csv(records: list[GapRecord], path: str) -> None:
    write_atomic(path, records_to_csv(records))


# -- sweep assembly from configuration --------------------------------------------


def build_sweep_models(
    families: list[dict], estimate_with: str = "greedy", estimate_perms: int = 100, seed: int = 0
) -> tuple[SweepModel, ...]:
    """Materialize sweep inputs from family descriptors.

    Each descriptor is a dict with ``family`` plus family-specific keys:
    random (n, sparsity, target_k, count, seed), ghz (n), noncontextual
    (contexts, obs, seed), file (path). Ground-truth k is attached where
    the definitional oracle is affordable, and the configured estimator
    labels every model.
    """
    models: list[SweepModel] = []
    for desc in families:
        family = desc["family"]
        if family == "random":
            count = int(desc.get("count", 1))
            base = int(desc.get("seed", seed))
            for i in range(count):
                rspec = RandomModelSpec(
                    n=int(desc["n"]), sparsity=int(desc["sparsity"]),
                    seed=base + i, target_k=desc.get("target_k"),
                )
                model = random_model(rspec)
                k_true = contextuality_number_definitional(model)
                models.append(SweepModel(
                    model_id=f"random-n{rspec.n}-s{rspec.sparsity}-{base + i}",
                    family="random", n=rspec.n, sparsity=rspec.sparsity,
                    model=model, k_true=k_true,
                    k_est=_estimate(model, estimate_with, estimate_perms, seed),
                    k_method=estimate_with,
                ))
        elif family == "ghz":
            model = ghz_model(GhzSpec(int(desc["n"])))
            models.append(SweepModel(
                model_id=f"ghz-{desc['n']}", family="ghz", n=int(desc["n"]),
                sparsity=model.max_support_size(), model=model,
                k_true=1 if int(desc["n"]) >= 3 else 0,
                k_est=_estimate(model, estimate_with, estimate_perms, seed),
                k_method=estimate_with,
            ))
        elif family == "noncontextual":
            model = noncontextual_model(
                int(desc.get("contexts", 4)), int(desc.get("obs", 3)),
                int(desc.get("seed", seed)),
            )
            models.append(SweepModel(
                model_id=f"noncontextual-{desc.get('seed', seed)}",
                family="noncontextual", n=len(model.contexts),
                sparsity=model.max_support_size(), model=model, k_true=0,
                k_est=_estimate(model, estimate_with, estimate_perms, seed),
                k_method=estimate_with,
            ))
        elif family == "file":
            model = load_model(desc["path"])
            models.append(SweepModel(
                model_id=os.path.basename(desc["path"]),
                family="file", n=len(model.contexts),
                sparsity=model.max_support_size(), model=model,
                k_est=_estimate(model, estimate_with, estimate_perms, seed),
                k_method=estimate_with,
            ))
        else:
            raise ValueError(f"unknown family {family!r}")
    return tuple(models)


def _estimate(model: EmpiricalModel, method: str, perms: int, seed: int) -> int:
    if method == "exact":
        return exact_bruteforce(model, seed=seed)[0]
    if method == "greedy":
        return greedy_estimate(model, perms, seed).final_k
    if method == "coloring":
        return coloring_estimate(model)[0]
    raise ValueError(f"unknown estimator {method!r}")
