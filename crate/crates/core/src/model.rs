//! Closed-form photon statistics of the pair source plus Poissonian
//! backgrounds, and the linearized detection model built on them.
//!
//! The pair mode has P(n1 = n2 = n) = (1 - chi) chi^n, so each field alone is
//! thermal with mean `nbar = chi / (1 - chi)`. Backgrounds add independent
//! Poisson photons with means `mu_l = kappa_l chi + |v_lb|^2`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{check_chi, ExperimentParams};

pub mod clicks;

/// Above this single-field click probability the linearized mapping
/// `p_l = beta_l <n_l>` is noticeably biased.
pub const LINEARIZATION_LIMIT: f64 = 0.05;

/// P(n1 = n, n2 = n) for the pair mode.
pub fn signal_joint_pmf(chi: f64, n: u32) -> Result<f64> {
    check_chi(chi)?;
    Ok((1.0 - chi) * chi.powi(n as i32))
}

/// Mean signal photon number per field.
pub fn signal_mean(chi: f64) -> f64 {
    chi / (1.0 - chi)
}

/// Mean background photon numbers `(mu1, mu2)`.
pub fn background_means(params: &ExperimentParams) -> (f64, f64) {
    (
        params.kappa1 * params.chi + params.v1b_sq,
        params.kappa2 * params.chi + params.v2b_sq,
    )
}

/// Normally-ordered moments of the total fields, per trial.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldMoments {
    pub n1_mean: f64,
    pub n2_mean: f64,
    /// <n1 (n1 - 1)>
    pub n1n1_no: f64,
    /// <n2 (n2 - 1)>
    pub n2n2_no: f64,
    /// <n1 n2>
    pub n1n2_no: f64,
    /// <n1 n2 (n2 - 1)>
    pub n1n2n2_no: f64,
}

impl FieldMoments {
    /// Pair state with Poisson backgrounds of means `mu1`, `mu2`.
    pub fn pair_with_backgrounds(chi: f64, mu1: f64, mu2: f64) -> Self {
        let n = signal_mean(chi);
        let n2 = n * n;
        let n3 = n2 * n;
        Self {
            n1_mean: n + mu1,
            n2_mean: n + mu2,
            n1n1_no: 2.0 * n2 + 2.0 * n * mu1 + mu1 * mu1,
            n2n2_no: 2.0 * n2 + 2.0 * n * mu2 + mu2 * mu2,
            n1n2_no: (2.0 * n2 + n) + n * (mu1 + mu2) + mu1 * mu2,
            n1n2n2_no: (6.0 * n3 + 4.0 * n2)
                + mu2 * 2.0 * (2.0 * n2 + n)
                + mu2 * mu2 * n
                + mu1 * (2.0 * n2 + 2.0 * n * mu2 + mu2 * mu2),
        }
    }

    /// Two mutually independent thermal beams (classical reference).
    pub fn independent_thermal(mean1: f64, mean2: f64) -> Self {
        Self {
            n1_mean: mean1,
            n2_mean: mean2,
            n1n1_no: 2.0 * mean1 * mean1,
            n2n2_no: 2.0 * mean2 * mean2,
            n1n2_no: mean1 * mean2,
            n1n2n2_no: mean1 * 2.0 * mean2 * mean2,
        }
    }

    /// Largest relative difference over the six moments.
    pub fn max_relative_gap(&self, other: &FieldMoments) -> f64 {
        let a = self.as_array();
        let b = other.as_array();
        a.iter()
            .zip(b.iter())
            .map(|(x, y)| {
                let scale = x.abs().max(y.abs());
                if scale == 0.0 {
                    0.0
                } else {
                    (x - y).abs() / scale
                }
            })
            .fold(0.0, f64::max)
    }

    pub fn as_array(&self) -> [f64; 6] {
        [
            self.n1_mean,
            self.n2_mean,
            self.n1n1_no,
            self.n2n2_no,
            self.n1n2_no,
            self.n1n2n2_no,
        ]
    }
}

/// Moments of the total fields for a validated parameter set.
pub fn field_moments(params: &ExperimentParams) -> FieldMoments {
    let (mu1, mu2) = background_means(params);
    FieldMoments::pair_with_backgrounds(params.chi, mu1, mu2)
}

/// Detection probabilities and correlation observables per trial.
///
/// `p2fold` is the heralded single-detector probability P(1_1 and one given
/// field-2 detector), the two-fold term of the conditional three-fold ratio;
/// `p3` is P(1_1 and D2A and D2B). Ratios are `None` when a denominator vanishes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictedObservables {
    pub p1: f64,
    pub p2: f64,
    pub p11: f64,
    pub p22: f64,
    pub p12: f64,
    pub p2fold: f64,
    pub p3: f64,
    pub q1: f64,
    pub q2: f64,
    pub q11: f64,
    pub q22: f64,
    pub q12: f64,
    pub g11: Option<f64>,
    pub g22: Option<f64>,
    pub g12: Option<f64>,
    #[serde(rename = "R")]
    pub r: Option<f64>,
    pub w: Option<f64>,
}

impl PredictedObservables {
    /// g11 g22 / g12, the empirical stand-in for `w`.
    pub fn w_approximant(&self) -> Option<f64> {
        match (self.g11, self.g22, self.g12) {
            (Some(a), Some(b), Some(c)) if c > 0.0 => Some(a * b / c),
            _ => None,
        }
    }
}

fn ratio(num: f64, den: f64) -> Option<f64> {
    (den > 0.0 && num.is_finite()).then(|| num / den)
}

/// Linearized detection: each field is split 50/50 onto two detectors after
/// per-photon efficiency `beta`, and every click probability is the first
/// non-vanishing normally-ordered moment. `eta` plays the role of `beta` for
/// the ensemble-referenced `q` quantities.
pub fn observables_from_moments(
    m: &FieldMoments,
    beta: (f64, f64),
    eta: (f64, f64),
) -> PredictedObservables {
    let (b1, b2) = beta;
    let (e1, e2) = eta;
    let p1 = b1 * m.n1_mean;
    let p2 = b2 * m.n2_mean;
    let p11 = 0.25 * b1 * b1 * m.n1n1_no;
    let p22 = 0.25 * b2 * b2 * m.n2n2_no;
    let p12 = b1 * b2 * m.n1n2_no;
    let p2fold = 0.5 * b1 * b2 * m.n1n2_no;
    let p3 = 0.25 * b1 * b2 * b2 * m.n1n2n2_no;

    // Efficiencies cancel exactly in the normalized ratios, so they are
    // taken straight from the moments once the click terms are nonzero.
    let g11 = (p1 > 0.0).then(|| ratio(m.n1n1_no, m.n1_mean * m.n1_mean)).flatten();
    let g22 = (p2 > 0.0).then(|| ratio(m.n2n2_no, m.n2_mean * m.n2_mean)).flatten();
    let g12 = (p1 > 0.0 && p2 > 0.0)
        .then(|| ratio(m.n1n2_no, m.n1_mean * m.n2_mean))
        .flatten();
    let r = match (g11, g22, g12) {
        (Some(a), Some(b), Some(c)) if a > 0.0 && b > 0.0 => Some(c * c / (a * b)),
        _ => None,
    };
    let w = (p2fold > 0.0)
        .then(|| ratio(m.n1_mean * m.n1n2n2_no, m.n1n2_no * m.n1n2_no))
        .flatten();

    PredictedObservables {
        p1,
        p2,
        p11,
        p22,
        p12,
        p2fold,
        p3,
        q1: e1 * m.n1_mean,
        q2: e2 * m.n2_mean,
        q11: 0.25 * e1 * e1 * m.n1n1_no,
        q22: 0.25 * e2 * e2 * m.n2n2_no,
        q12: e1 * e2 * m.n1n2_no,
        g11,
        g22,
        g12,
        r,
        w,
    }
}

/// Whether `beta_l <n_l>` exceeds [`LINEARIZATION_LIMIT`] on either field.
pub fn linearization_degraded(params: &ExperimentParams) -> bool {
    let m = field_moments(params);
    params.beta1 * m.n1_mean > LINEARIZATION_LIMIT || params.beta2 * m.n2_mean > LINEARIZATION_LIMIT
}

/// Model observables for one operating point.
pub fn predict_observables(params: &ExperimentParams) -> PredictedObservables {
    if linearization_degraded(params) {
        log::warn!(
            "beta*<n> above {LINEARIZATION_LIMIT} at chi={}: linearized detection is degraded",
            params.chi
        );
    }
    observables_from_moments(
        &field_moments(params),
        (params.beta1, params.beta2),
        (params.eta1, params.eta2),
    )
}

/// Evaluate the model along a list of excitation probabilities.
pub fn sweep_chi(
    params: &ExperimentParams,
    chi_values: &[f64],
) -> Result<Vec<(f64, PredictedObservables)>> {
    chi_values
        .iter()
        .map(|&chi| {
            let p = params.with_chi(chi).validate()?;
            Ok((chi, predict_observables(&p)))
        })
        .collect()
}

/// Cross correlation g12 as a function of chi for fixed noise parameters.
pub fn model_g12(chi: f64, kappa: (f64, f64), background: (f64, f64)) -> f64 {
    let m = FieldMoments::pair_with_backgrounds(
        chi,
        kappa.0 * chi + background.0,
        kappa.1 * chi + background.1,
    );
    m.n1n2_no / (m.n1_mean * m.n2_mean)
}

/// Smallest chi in `[lo, hi]` (on the branch where g12 falls with chi) at
/// which the model g12 equals `target`, by bisection on `model_g12`.
pub fn chi_for_g12(params: &ExperimentParams, target: f64, lo: f64, hi: f64) -> Result<f64> {
    let kappa = (params.kappa1, params.kappa2);
    let bg = (params.v1b_sq, params.v2b_sq);
    let f = |chi: f64| model_g12(chi, kappa, bg) - target;
    let (mut a, mut b) = (lo, hi);
    let (fa, fb) = (f(a), f(b));
    if fa.signum() == fb.signum() {
        return Err(Error::Input(format!(
            "g12 = {target} not bracketed in chi [{lo}, {hi}]"
        )));
    }
    for _ in 0..200 {
        let mid = 0.5 * (a + b);
        if f(mid).signum() == fa.signum() {
            a = mid;
        } else {
            b = mid;
        }
        if b - a < 1e-15 * b {
            break;
        }
    }
    Ok(0.5 * (a + b))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn signal_pmf_values() {
        assert_eq!(signal_joint_pmf(0.0, 0).unwrap(), 1.0);
        assert_eq!(signal_joint_pmf(0.0, 3).unwrap(), 0.0);
        assert!((signal_joint_pmf(0.1, 1).unwrap() - 0.09).abs() < 1e-15);
        assert!(signal_joint_pmf(1.0, 1).is_err());
        for chi in [0.01, 0.3, 0.9] {
            let n_max = 400;
            let total: f64 = (0..=n_max).map(|n| signal_joint_pmf(chi, n).unwrap()).sum();
            let bound = chi.powi(n_max as i32 + 1) / (1.0 - chi);
            assert!((1.0 - total).abs() <= bound + 1e-14, "chi={chi}");
        }
    }

    #[test]
    fn background_mean_values() {
        let p = ExperimentParams::reference(0.1);
        let (mu1, _) = background_means(&p);
        assert!((mu1 - 0.023).abs() < 1e-15);
        let (_, mu2) = background_means(&ExperimentParams::reference(0.05));
        assert!((mu2 - 0.051).abs() < 1e-15);
        let (a, b) = background_means(&ExperimentParams::ideal(0.1));
        assert_eq!((a, b), (0.0, 0.0));
    }

    #[test]
    fn vacuum_moments_vanish() {
        let m = field_moments(&ExperimentParams::ideal(0.0));
        assert!(m.as_array().iter().all(|&x| x == 0.0));
        let o = predict_observables(&ExperimentParams::ideal(0.0));
        assert!(o.g11.is_none() && o.g12.is_none() && o.r.is_none() && o.w.is_none());
    }

    #[test]
    fn ideal_cross_correlation() {
        let m = field_moments(&ExperimentParams::ideal(0.01));
        let g12 = m.n1n2_no / (m.n1_mean * m.n2_mean);
        assert!((g12 - 101.0).abs() < 1e-9, "{g12}");
        let o = predict_observables(&ExperimentParams::ideal(0.01));
        assert!((o.g11.unwrap() - 2.0).abs() < 1e-12);
        assert!((o.g22.unwrap() - 2.0).abs() < 1e-12);
        assert!((o.g12.unwrap() - 101.0).abs() < 1e-9);
        // w -> 4 chi at small chi; closed form (6 nbar^2 + 4 nbar) / (2 nbar + 1)^2
        let n = signal_mean(0.01);
        let w_exact = (6.0 * n * n + 4.0 * n) / ((2.0 * n + 1.0) * (2.0 * n + 1.0));
        assert!((o.w.unwrap() - w_exact).abs() < 1e-14);
        assert!((o.w.unwrap() - 0.04).abs() < 0.002);
    }

    #[test]
    fn coherent_backgrounds_are_classical_boundary() {
        let mut p = ExperimentParams::reference(0.0);
        p.v1b_sq = 0.02;
        p.v2b_sq = 0.3;
        let o = predict_observables(&p);
        for v in [o.g11, o.g22, o.g12, o.r, o.w] {
            assert!((v.unwrap() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn independent_thermal_beams_give_two() {
        let m = FieldMoments::independent_thermal(0.03, 0.2);
        let o = observables_from_moments(&m, (0.1, 0.1), (1.0, 1.0));
        assert!((o.w.unwrap() - 2.0).abs() < 1e-12);
        assert!((o.g12.unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn efficiencies_map_linearly() {
        let p = ExperimentParams::reference(0.05);
        let m = field_moments(&p);
        let o = predict_observables(&p);
        assert!((o.p1 - 0.013 * m.n1_mean).abs() < 1e-18);
        assert!((o.q1 - 0.15 * m.n1_mean).abs() < 1e-18);
        assert!((o.q12 - 0.15 * 0.15 * m.n1n2_no).abs() < 1e-18);
        assert!((o.p11 - 0.013 * 0.013 / 4.0 * m.n1n1_no).abs() < 1e-20);
        let g11_from_p = o.p11 / (0.5 * o.p1 * 0.5 * o.p1);
        assert!((g11_from_p - o.g11.unwrap()).abs() < 1e-12);
        let w_from_p = o.p1 * o.p3 / (o.p2fold * o.p2fold);
        assert!((w_from_p - o.w.unwrap()).abs() < 1e-12);
    }

    #[test]
    fn sweep_is_ordered_and_monotone_on_high_flux_branch() {
        assert!(sweep_chi(&ExperimentParams::reference(0.1), &[]).unwrap().is_empty());
        let chis: Vec<f64> = (0..=200).map(|i| 0.005 + (0.3 - 0.005) * i as f64 / 200.0).collect();
        let rows = sweep_chi(&ExperimentParams::reference(0.1), &chis).unwrap();
        assert_eq!(rows.len(), chis.len());
        for pair in rows.windows(2) {
            assert!(pair[1].1.g12.unwrap() < pair[0].1.g12.unwrap());
        }
        assert!(sweep_chi(&ExperimentParams::reference(0.1), &[0.5, 1.0]).is_err());
    }

    #[test]
    fn chi_inversion() {
        let p = ExperimentParams::reference(0.1);
        let chi = chi_for_g12(&p, 10.2, 0.005, 0.3).unwrap();
        let g = model_g12(chi, (0.17, 0.90), (0.006, 0.006));
        assert!((g - 10.2).abs() < 1e-9);
        assert!(chi_for_g12(&p, 500.0, 0.005, 0.3).is_err());
    }
}
