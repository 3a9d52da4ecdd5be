"""Toolkit for strong k-contextuality of empirical models.

Measures how strongly a family of per-context outcome distributions
resists explanation by few global value assignments (exactly and by two
polynomial heuristics), generates benchmark distributions, trains
resource-constrained classical latent-state models and complex Born
machines on them, and reports the classical/quantum performance gap as
machine-readable CSV.
"""

from .errors import (
    CertificateUnroutable,
    DegenerateInit,
    DimensionMismatch,
    Diverged,
    EmptyModel,
    Exhausted,
    KontextError,
    ParseError,
    SchemaError,
    SizeLimit,
    UnknownToken,
    ZeroPrefix,
)
from .estimators import (
    ColoringEstimator,
    EstimateTrace,
    ExactBruteForce,
    GreedyEstimator,
    GreedyPartition,
    IncompatibilityHypergraph,
    build_hypergraph,
    coloring_estimate,
    exact_bruteforce,
    greedy_estimate,
)
from .generators import (
    GhzSpec,
    RandomModelSpec,
    ghz_model,
    noncontextual_model,
    random_model,
)
from .hmm import (
    Hmm,
    TrainReport,
    baum_welch,
    hmm_from_partition,
    hmm_prob,
    kl_divergence,
    latent_marginal,
    missing_support,
    support_violation,
)
from .ingest import Corpus, WindowedModelSpec, load_corpus, pad_sequences, windowed_model
from .model import (
    Context,
    EmpiricalModel,
    Section,
    SectionSet,
    contextuality_number_definitional,
    is_compatible,
    load_model,
    n_e_k,
    save_model,
    sections_of,
    validate_consistency,
)
from .mps import (
    ConditionalChain,
    MpsModel,
    QTrainReport,
    born_prob,
    conditional_prob,
    kl_divergence_mps,
    load_mps,
    save_mps,
    train,
)

__version__ = "0.1.0"
