//! Metrics, sample summaries, variation curves and the retrieval baseline.

mod metrics;
mod retrieval;
mod summary;

pub use metrics::{
    column_moments, evaluate, mae_mse, pcc_per_gene, pcc_top_k, rvd, variation_curve, CurveRow, EvalReport, PccTop,
    VariationCurve, CURVE_HEADER,
};
pub use retrieval::{retrieval_baseline, Distance, RetrievalIndex};
pub use summary::{summarize_samples, Statistic};
