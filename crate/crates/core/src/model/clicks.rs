//! Exact click probabilities of the four threshold detectors from the
//! photon-number generating function
//! `G(s1, s2) = (1 - chi) / (1 - chi s1 s2) * exp(-mu1 (1 - s1) - mu2 (1 - s2))`.
//!
//! Each photon of field `l` reaches a given one of its two detectors with
//! probability `beta_l / 2`, so the probability that no detector in a set `T`
//! fires is `G` at `s_l = 1 - (beta_l / 2) |T ∩ field l|`. Joint click
//! probabilities follow by inclusion-exclusion.

use crate::oracle::{BIT_1A, BIT_1B, BIT_2A, BIT_2B};

const HERALD: u8 = BIT_1A | BIT_1B;

/// `none_minus_one[T] = P(no click in T) - 1` for every detector subset `T`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClickModel {
    none_minus_one: [f64; 16],
}

impl ClickModel {
    pub fn new(chi: f64, mu1: f64, mu2: f64, beta1: f64, beta2: f64) -> Self {
        let mut none_minus_one = [0.0; 16];
        for (t, slot) in none_minus_one.iter_mut().enumerate() {
            let t = t as u8;
            let k1 = ((t & BIT_1A != 0) as u8 + (t & BIT_1B != 0) as u8) as f64;
            let k2 = ((t & BIT_2A != 0) as u8 + (t & BIT_2B != 0) as u8) as f64;
            let d1 = 0.5 * beta1 * k1;
            let d2 = 0.5 * beta2 * k2;
            let d12 = d1 + d2 - d1 * d2;
            let ln_g = -(chi * d12 / (1.0 - chi)).ln_1p() - mu1 * d1 - mu2 * d2;
            *slot = ln_g.exp_m1();
        }
        Self { none_minus_one }
    }

    pub fn from_params(p: &crate::params::ExperimentParams) -> Self {
        let (mu1, mu2) = super::background_means(p);
        Self::new(p.chi, mu1, mu2, p.beta1, p.beta2)
    }

    /// P(every detector in `mask` fires).
    pub fn prob_all(&self, mask: u8) -> f64 {
        if mask == 0 {
            return 1.0;
        }
        let mut sum = 0.0;
        let mut t = mask;
        loop {
            let sign = if t.count_ones().is_multiple_of(2) { 1.0 } else { -1.0 };
            sum += sign * self.none_minus_one[t as usize];
            if t == 0 {
                break;
            }
            t = (t - 1) & mask;
        }
        sum
    }

    /// P(every detector in `all` fires and at least one in `any` fires);
    /// `all` and `any` must be disjoint.
    pub fn prob_all_any(&self, all: u8, any: u8) -> f64 {
        // Inclusion-exclusion over nonempty subsets of `any`.
        let mut sum = 0.0;
        let mut s = any;
        while s != 0 {
            let sign = if s.count_ones() % 2 == 1 { 1.0 } else { -1.0 };
            sum += sign * self.prob_all(all | s);
            s = (s - 1) & any;
        }
        sum
    }

    /// P(the click pattern is exactly `pattern`).
    pub fn prob_exact(&self, pattern: u8) -> f64 {
        let rest = !pattern & 0xF;
        let mut sum = 0.0;
        let mut extra = rest;
        loop {
            let sign = if extra.count_ones().is_multiple_of(2) { 1.0 } else { -1.0 };
            sum += sign * self.prob_all(pattern | extra);
            if extra == 0 {
                break;
            }
            extra = (extra - 1) & rest;
        }
        sum
    }

    pub fn pattern_probabilities(&self) -> [f64; 16] {
        std::array::from_fn(|p| self.prob_exact(p as u8))
    }

    /// P(herald and both field-2 detectors), the herald being D1A or D1B.
    pub fn prob_triple(&self) -> f64 {
        self.prob_all_any(BIT_2A | BIT_2B, HERALD)
    }
}
