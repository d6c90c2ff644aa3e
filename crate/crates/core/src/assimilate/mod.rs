//! Filter and smoother drivers, localization and covariance shrinkage.

mod filter;
mod local;
mod localization;
mod method;
mod shrinkage;
mod smoother;

pub use filter::{
    run_filter, vfp_analysis, vfp_filter_run, AnalysisContext, AnalysisMethod, CycleResult, CyclingSetup, EtkfFilter,
    SirFilter, VfpFilter,
};
pub use local::{local_vfp_analysis, LocalFlow, LocalPosterior};
pub use localization::{
    full_taper, gaspari_cohn, half_width, local_covariance, local_influence_set, localized_grad_log_q, taper_matrix,
    Geometry,
};
pub use method::{CovarianceSpec, MethodSpec, SmootherSpec};
pub use shrinkage::{rblw_shrinkage, shrinkage_intensity, RblwShrinkage};
pub use smoother::{vfps_analysis, vfps_drift, vfps_run, SmootherPosterior};
