//! Benchmark engine: closed-list answer resolution, text metrics, per-task
//! runners and bootstrap confidence intervals.

mod bench;
mod metrics;

pub use bench::{
    bootstrap_ci, closed_list, run_benchmark, write_records, BenchReport, EvalRecord, MetricReport, MetricValue,
    ModelPredictor, Predictor, BOOTSTRAP_RESAMPLES,
};
pub use metrics::{
    accuracy_f1, bleu1, candidate_score, resolve_closed, resolve_closed_index, rouge1, similarity_ratio, umls_precision_recall, F1Mode,
};
