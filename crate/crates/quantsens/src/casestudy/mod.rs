//! Prebuilt models with batch runs that tabulate their sensitivities.

mod compound;
mod reinsurance;

pub use compound::{run_compound_point, run_compound_study, write_compound_csv, CompoundConfig, CompoundPoint, Sweep, COMPOUND_COLUMNS};
pub use reinsurance::{
    build_reinsurance_model, factor_model_correlation, loss_probability, ranking, run_reinsurance_study, DeltaRow, ReinsuranceConfig,
    ReinsuranceResults, ReinsuranceStudy, ReinsuranceSummary, LOB_CORRELATION, LOB_COVS, REINSURANCE_FILES,
};
