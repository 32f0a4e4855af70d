//! Quality metrics and the skip-frame benchmark harness.

pub mod harness;
pub mod metrics;

pub use harness::{
    build_variant, center_index, evaluate, read_summary, write_results_csv, write_summary,
    Aggregation, BuiltVariant, EvalFailure, EvalRecord, EvalSummary, FrameScore,
};
pub use metrics::{interpolation_error, psnr, ssim, PEAK, PSNR_CAP};
