//! Metric kernels, benchmark aggregation, paired bootstrap significance,
//! sample-efficiency curves, and resource profiling.

mod blub;
mod bootstrap;
mod efficiency;
mod metrics;
mod profile;

pub use blub::{blub_report, blub_score, round2, BlubReport, MetricReport, MetricValue};
pub use bootstrap::{accuracy_on, paired_bootstrap, BootstrapResult, SIGNIFICANCE_ALPHA};
pub use efficiency::{
    sample_efficiency, stratified_subsample, write_curve_csv, EfficiencyCurve, EfficiencyPoint,
    DEFAULT_SIZE_GRID,
};
pub use metrics::{
    accuracy, decode_bio_spans, entity_micro_f1, macro_f1, normalize_answer, squad_em_f1,
    EntitySpan, QaGold,
};
pub use profile::{
    current_bytes, format_profile_table, peak_bytes, profile_run, reset_peak, tracking_enabled,
    ResourceProfile, TrackingAllocator,
};
