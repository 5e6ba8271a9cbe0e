//! Ranking metrics, significance tests and corpus analysis.

mod analysis;
mod metrics;
mod stats;

pub use analysis::{
    difficulty_report, divergence_report, kl_divergence, stack_trace_fraction, DifficultyReport,
    DivergenceReport, ProjectDivergence, EASY_MAX_RANK, HARD_MIN_RANK,
};
pub use metrics::{
    average_precision, expected_random_reciprocal_rank, mean_average_precision, metric_report, mrr,
    random_baseline_mrr, reciprocal_rank, MetricReport, ProjectMetrics,
};
pub use stats::{
    bonferroni, mann_whitney_u, pairwise_significance, truncate_decimals, SignificanceResult,
    EXACT_LIMIT,
};
