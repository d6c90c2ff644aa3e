use serde::{Deserialize, Serialize};

use super::localization::{full_taper, Geometry};
use crate::densities::{CovariancePolicy, DensityFamily, FitOptions};
use crate::flow::Metric;
use crate::{Result, VfpError};

/// Covariance treatment for the covariance-based density families.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CovarianceSpec {
    Plain,
    #[default]
    Jitter,
    /// RBLW shrinkage (`ShrVFP`).
    Shrinkage,
    /// Local updates with Gaspari-Cohn Schur tapering (`LVFP`). Smoothers
    /// apply only the Schur taper.
    Localized {
        radius: f64,
        geometry: Geometry,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SmootherSpec {
    /// Observations per assimilation window.
    pub window: usize,
}

/// Which VFP variant to run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MethodSpec {
    pub prior: DensityFamily,
    pub current: DensityFamily,
    pub covariance: CovarianceSpec,
    pub smoother: Option<SmootherSpec>,
    /// Start each flow from the ETKF analysis instead of the background.
    pub etkf_warm_start: bool,
}

impl Default for MethodSpec {
    fn default() -> Self {
        Self {
            prior: DensityFamily::Gaussian,
            current: DensityFamily::Gaussian,
            covariance: CovarianceSpec::Jitter,
            smoother: None,
            etkf_warm_start: false,
        }
    }
}

impl MethodSpec {
    pub fn gaussian() -> Self {
        Self::default()
    }

    pub fn validate(&self, n_state: usize) -> Result<()> {
        if let CovarianceSpec::Localized { radius, geometry } = self.covariance {
            if !(radius > 0.0) {
                return Err(VfpError::InvalidParameter(format!("localization radius must be positive, got {radius}")));
            }
            if geometry.len() != n_state {
                return Err(VfpError::DimensionMismatch { expected: n_state, got: geometry.len() });
            }
        }
        if let Some(s) = self.smoother {
            if s.window == 0 {
                return Err(VfpError::InvalidParameter("smoother window must hold at least one observation".into()));
            }
        }
        Ok(())
    }

    /// Density fit options for global (non-local) use of this method.
    pub fn fit_options(&self) -> FitOptions {
        let covariance = match self.covariance {
            CovarianceSpec::Plain => CovariancePolicy::Plain,
            CovarianceSpec::Jitter => CovariancePolicy::Jitter,
            CovarianceSpec::Shrinkage => CovariancePolicy::Shrinkage,
            CovarianceSpec::Localized { radius, geometry } => CovariancePolicy::Tapered(full_taper(radius, &geometry)),
        };
        FitOptions { covariance }
    }

    pub fn is_localized(&self) -> bool {
        matches!(self.covariance, CovarianceSpec::Localized { .. })
    }

    /// Conventional name, e.g. `VFP(GH)`, `LVFPS(GG)` or `VFPLn(G)`.
    pub fn name(&self, metric: Metric) -> String {
        let prefix = match self.covariance {
            CovarianceSpec::Localized { .. } => "L",
            CovarianceSpec::Shrinkage => "Shr",
            _ => "",
        };
        let smoother = if self.smoother.is_some() { "S" } else { "" };
        match metric {
            Metric::Identity => format!("{prefix}VFP{smoother}({}{})", self.prior.letter(), self.current.letter()),
            Metric::Langevin => format!("{prefix}VFP{smoother}Ln({})", self.prior.letter()),
        }
    }
}
