"""cateselect: CATE estimator selection with robust and baseline metrics."""

from .data import (
    ColumnSchema,
    ColumnStats,
    ObservationalDataset,
    PredictionTable,
    SplitAssignment,
    destandardize_columns,
    load_dataset,
    split_dataset,
    standardize_columns,
    write_dataset,
)
from .dgp import (
    DgpCoefficients,
    DgpConfig,
    apply_hidden_confounding,
    draw_coefficients,
    generate_dataset,
    generate_outcomes,
    generate_treatment,
    synth_covariates,
)
from .dro import (
    DualObjective,
    RobustValue,
    SolverConfig,
    eval_dual,
    eval_dual_derivative,
    finite_sample_bound,
    solve_robust_value,
)
from .evaluation import (
    aggregate,
    evaluate_replication,
    oracle_pehe,
    rank_bin,
    regret,
    selected_rank,
    spearman_correlation,
)
from .kl import AmbiguityRadii, RadiusPolicy, compute_radii, knn_kl_divergence
from .meta_learners import (
    LEARNER_KINDS,
    CandidateEstimator,
    Nuisances,
    build_pool,
    make_learner,
)
from .selectors import (
    SELECTOR_KINDS,
    CandidateView,
    SelectorScore,
    run_selectors,
    score_drm,
    view_from_candidate,
)
from .validation import ValidationError

__version__ = "0.1.0"
