"""Feasibility scoring and open-world evaluation for compositional label spaces."""

from .labelspace import (
    Pair,
    PairSpace,
    confusing_pairs,
    enumerate_all,
    load_pair_space,
    related_seen,
)
from .prompts import (
    PRESETS,
    GuidanceSet,
    PromptSpec,
    PromptText,
    compose_canonical,
    compose_guided,
    compose_qa,
    enumerate_grid,
    select_guidance,
)
from .llm_scoring import (
    ChatClient,
    EndpointConfig,
    FeasibilityTable,
    GuidancePolicy,
    LLMRequest,
    LLMResponse,
    SEEN_SENTINEL,
    load_table,
    qa_score,
    save_table,
    score_label_space,
    yes_score,
)
from .embed_baselines import EmbeddingSet, baseline_table, cosine, load_embeddings, primitive_feasibility
from .feasibility_core import (
    CalibrationResult,
    CandidateSet,
    filter_space,
    normalize,
    select_threshold,
)
from .oweval import (
    EvalResult,
    IsolationReport,
    ScoreMatrix,
    classify,
    export_distribution,
    isolation_means,
    isolation_metrics,
    load_score_matrix,
    qualitative_report,
    save_score_matrix,
    sweep_eval,
)

__version__ = "0.1.0"
