//! Physics and detection parameters for one operating point of the source.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Background proportionality constants fitted to the reference data set.
pub const REFERENCE_KAPPA: (f64, f64) = (0.17, 0.90);
/// Fixed background photon number per trial, both fields.
pub const REFERENCE_BACKGROUND: f64 = 0.006;
pub const REFERENCE_BETA: f64 = 0.013;
pub const REFERENCE_ETA: f64 = 0.15;
pub const DEFAULT_WINDOW_NS: u64 = 200;
/// 250 kHz repetition.
pub const DEFAULT_REP_PERIOD_NS: u64 = 4000;
/// Timestamp quantum.
pub const TIME_RESOLUTION_NS: u64 = 2;

fn default_kappa1() -> f64 {
    REFERENCE_KAPPA.0
}
fn default_kappa2() -> f64 {
    REFERENCE_KAPPA.1
}
fn default_background() -> f64 {
    REFERENCE_BACKGROUND
}
fn default_beta() -> f64 {
    REFERENCE_BETA
}
fn default_eta() -> f64 {
    REFERENCE_ETA
}
fn default_window() -> u64 {
    DEFAULT_WINDOW_NS
}
fn default_rep_period() -> u64 {
    DEFAULT_REP_PERIOD_NS
}

/// All model and detection parameters. Missing JSON fields take the
/// reference values; `chi` is required.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentParams {
    /// Pair excitation probability per trial, `0 <= chi < 1`.
    pub chi: f64,
    #[serde(default = "default_kappa1")]
    pub kappa1: f64,
    #[serde(default = "default_kappa2")]
    pub kappa2: f64,
    /// Mean fixed-background photon number per trial on field 1.
    #[serde(default = "default_background")]
    pub v1b_sq: f64,
    #[serde(default = "default_background")]
    pub v2b_sq: f64,
    /// Per-photon probability of producing a detector click.
    #[serde(default = "default_beta")]
    pub beta1: f64,
    #[serde(default = "default_beta")]
    pub beta2: f64,
    /// Per-photon efficiency referenced to the ensemble output.
    #[serde(default = "default_eta")]
    pub eta1: f64,
    #[serde(default = "default_eta")]
    pub eta2: f64,
    #[serde(default)]
    pub dt_ns: u64,
    #[serde(default = "default_window")]
    pub window_ns: u64,
    #[serde(default = "default_rep_period")]
    pub rep_period_ns: u64,
}

impl Default for ExperimentParams {
    fn default() -> Self {
        Self::reference(0.05)
    }
}

impl ExperimentParams {
    /// Reference noise and efficiency parameters at excitation `chi`.
    pub fn reference(chi: f64) -> Self {
        Self {
            chi,
            kappa1: REFERENCE_KAPPA.0,
            kappa2: REFERENCE_KAPPA.1,
            v1b_sq: REFERENCE_BACKGROUND,
            v2b_sq: REFERENCE_BACKGROUND,
            beta1: REFERENCE_BETA,
            beta2: REFERENCE_BETA,
            eta1: REFERENCE_ETA,
            eta2: REFERENCE_ETA,
            dt_ns: 0,
            window_ns: DEFAULT_WINDOW_NS,
            rep_period_ns: DEFAULT_REP_PERIOD_NS,
        }
    }

    /// Pure pair state, no backgrounds, unit efficiencies.
    pub fn ideal(chi: f64) -> Self {
        Self {
            kappa1: 0.0,
            kappa2: 0.0,
            v1b_sq: 0.0,
            v2b_sq: 0.0,
            beta1: 1.0,
            beta2: 1.0,
            eta1: 1.0,
            eta2: 1.0,
            ..Self::reference(chi)
        }
    }

    pub fn with_chi(self, chi: f64) -> Self {
        Self { chi, ..self }
    }

    pub fn with_beta(self, beta: f64) -> Self {
        Self {
            beta1: beta,
            beta2: beta,
            ..self
        }
    }

    pub fn with_eta(self, eta: f64) -> Self {
        Self {
            eta1: eta,
            eta2: eta,
            ..self
        }
    }

    /// Exchange the roles of fields 1 and 2 (noise and efficiencies; chi is shared).
    pub fn swapped(self) -> Self {
        Self {
            kappa1: self.kappa2,
            kappa2: self.kappa1,
            v1b_sq: self.v2b_sq,
            v2b_sq: self.v1b_sq,
            beta1: self.beta2,
            beta2: self.beta1,
            eta1: self.eta2,
            eta2: self.eta1,
            ..self
        }
    }

    /// Detector-referenced efficiency `alpha_l = beta_l / eta_l`, if defined.
    pub fn alpha(&self) -> Option<(f64, f64)> {
        if self.eta1 > 0.0 && self.eta2 > 0.0 && self.beta1 > 0.0 && self.beta2 > 0.0 {
            Some((self.beta1 / self.eta1, self.beta2 / self.eta2))
        } else {
            None
        }
    }

    /// Check every field against its physical range.
    pub fn validate(self) -> Result<Self> {
        check_chi(self.chi)?;
        for (field, value) in [
            ("kappa1", self.kappa1),
            ("kappa2", self.kappa2),
            ("v1b_sq", self.v1b_sq),
            ("v2b_sq", self.v2b_sq),
        ] {
            if !value.is_finite() || value < 0.0 {
                return Err(Error::param(field, format!("{field} must be finite and >= 0")));
            }
        }
        for (field, value) in [
            ("beta1", self.beta1),
            ("beta2", self.beta2),
            ("eta1", self.eta1),
            ("eta2", self.eta2),
        ] {
            if !(0.0..=1.0).contains(&value) {
                return Err(Error::param(field, format!("{field} out of [0,1]")));
            }
        }
        if self.beta1 > self.eta1 {
            return Err(Error::param("beta1", "beta exceeds eta (alpha > 1)"));
        }
        if self.beta2 > self.eta2 {
            return Err(Error::param("beta2", "beta exceeds eta (alpha > 1)"));
        }
        for (field, value) in [
            ("dt_ns", self.dt_ns),
            ("window_ns", self.window_ns),
            ("rep_period_ns", self.rep_period_ns),
        ] {
            if value % TIME_RESOLUTION_NS != 0 {
                return Err(Error::param(
                    field,
                    format!("{field} must be a multiple of {TIME_RESOLUTION_NS} ns"),
                ));
            }
        }
        if self.window_ns == 0 {
            return Err(Error::param("window_ns", "window must be positive"));
        }
        if self.dt_ns + self.window_ns >= self.rep_period_ns {
            return Err(Error::param(
                "rep_period_ns",
                "trial period must exceed dt_ns + window_ns",
            ));
        }
        Ok(self)
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let params: Self = serde_json::from_str(s)?;
        params.validate()
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json_str(&text)
    }
}

pub(crate) fn check_chi(chi: f64) -> Result<()> {
    if !(0.0..1.0).contains(&chi) {
        return Err(Error::param("chi", "chi out of [0,1)"));
    }
    Ok(())
}
