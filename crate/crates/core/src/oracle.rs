//! Exact photon-number and click-pattern statistics by truncated enumeration.
//!
//! The joint distribution is built from independent indices: the signal pair
//! number `k` (or two thermal numbers for the classical reference source) and
//! the two Poisson background numbers `b1`, `b2`. Each index is cut where its
//! own tail mass drops below a third of the tolerance, so the neglected mass
//! is bounded by the sum of the three tails. Nothing here is tuned for speed.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{background_means, FieldMoments, PredictedObservables};
use crate::params::{check_chi, ExperimentParams};

/// Largest index any single truncation may reach.
pub const MAX_INDEX: usize = 1500;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruncationSpec {
    /// Minimum cut-off for every enumeration index.
    pub n_max: usize,
    pub tail_tol: f64,
}

impl Default for TruncationSpec {
    fn default() -> Self {
        Self {
            n_max: 2,
            tail_tol: 1e-12,
        }
    }
}

/// Photon source ahead of the background admixture.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SignalSource {
    /// Two-mode pair state, P(n, n) = (1 - chi) chi^n.
    PairState { chi: f64 },
    /// Independent thermal beams on fields 1 and 2 (classical reference).
    IndependentThermal { mean1: f64, mean2: f64 },
}

/// Upper bound on the probability of a geometric index exceeding `n_max`.
fn geometric_tail(ratio: f64, n_max: usize) -> f64 {
    if ratio <= 0.0 {
        0.0
    } else {
        ratio.powi(n_max as i32 + 1)
    }
}

/// Chernoff bound on P(X > n_max) for X ~ Poisson(mean).
fn poisson_tail(mean: f64, n_max: usize) -> f64 {
    if mean <= 0.0 {
        return 0.0;
    }
    let a = (n_max + 1) as f64;
    if a <= mean {
        return 1.0;
    }
    (-mean + a * (1.0 + mean.ln() - a.ln())).exp().min(1.0)
}

/// Rigorous bound on the probability mass lost when the pair index and both
/// background indices are all cut at `n_max`.
pub fn tail_bound(chi: f64, mu1: f64, mu2: f64, n_max: usize) -> f64 {
    (geometric_tail(chi, n_max) + poisson_tail(mu1, n_max) + poisson_tail(mu2, n_max)).min(1.0)
}

fn cut_geometric(ratio: f64, floor: usize, tol: f64) -> Result<(usize, f64)> {
    cut_index(floor, tol, |n| geometric_tail(ratio, n))
}

fn cut_poisson(mean: f64, floor: usize, tol: f64) -> Result<(usize, f64)> {
    cut_index(floor, tol, |n| poisson_tail(mean, n))
}

fn cut_index(floor: usize, tol: f64, tail: impl Fn(usize) -> f64) -> Result<(usize, f64)> {
    let mut n = floor;
    loop {
        let t = tail(n);
        if t <= tol {
            return Ok((n, t));
        }
        if n >= MAX_INDEX {
            return Err(Error::Truncation {
                tol,
                bound: t,
                cap: MAX_INDEX,
            });
        }
        n = (n + n / 4 + 1).min(MAX_INDEX);
    }
}

fn poisson_pmf(mean: f64, n_max: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(n_max + 1);
    let mut term = (-mean).exp();
    out.push(term);
    for k in 1..=n_max {
        term *= mean / k as f64;
        out.push(term);
    }
    out
}

fn geometric_pmf(ratio: f64, n_max: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(n_max + 1);
    let mut term = 1.0 - ratio;
    for _ in 0..=n_max {
        out.push(term);
        term *= ratio;
    }
    out
}

/// Truncated joint photon-number table P(n1, n2).
#[derive(Debug, Clone)]
pub struct JointDistribution {
    dim1: usize,
    dim2: usize,
    probs: Vec<f64>,
    /// Bound on the probability mass outside the table.
    pub tail_bound: f64,
}

impl JointDistribution {
    pub fn get(&self, n1: usize, n2: usize) -> f64 {
        if n1 < self.dim1 && n2 < self.dim2 {
            self.probs[n1 * self.dim2 + n2]
        } else {
            0.0
        }
    }

    /// Largest photon number represented on each field.
    pub fn extent(&self) -> (usize, usize) {
        (self.dim1 - 1, self.dim2 - 1)
    }

    pub fn total(&self) -> f64 {
        self.probs.iter().sum()
    }

    fn iter(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.probs
            .iter()
            .enumerate()
            .map(move |(i, &p)| (i / self.dim2, i % self.dim2, p))
    }

    /// Normally-ordered moments by direct summation over the table.
    pub fn moments(&self) -> FieldMoments {
        let mut acc = [0.0f64; 6];
        for (n1, n2, p) in self.iter() {
            if p == 0.0 {
                continue;
            }
            let (a, b) = (n1 as f64, n2 as f64);
            acc[0] += p * a;
            acc[1] += p * b;
            acc[2] += p * a * (a - 1.0);
            acc[3] += p * b * (b - 1.0);
            acc[4] += p * a * b;
            acc[5] += p * a * b * (b - 1.0);
        }
        FieldMoments {
            n1_mean: acc[0],
            n2_mean: acc[1],
            n1n1_no: acc[2],
            n2n2_no: acc[3],
            n1n2_no: acc[4],
            n1n2n2_no: acc[5],
        }
    }
}

/// Joint distribution of total photon numbers for `source` plus independent
/// Poisson backgrounds of means `mu1`, `mu2`.
pub fn joint_distribution_for(
    source: SignalSource,
    mu1: f64,
    mu2: f64,
    trunc: TruncationSpec,
) -> Result<JointDistribution> {
    if trunc.n_max < 2 || trunc.tail_tol.is_nan() || trunc.tail_tol <= 0.0 {
        return Err(Error::Input("truncation needs n_max >= 2 and tail_tol > 0".into()));
    }
    let part_tol = trunc.tail_tol / 3.0;
    let (b1_max, t1) = cut_poisson(mu1, trunc.n_max, part_tol)?;
    let (b2_max, t2) = cut_poisson(mu2, trunc.n_max, part_tol)?;
    let bg1 = poisson_pmf(mu1, b1_max);
    let bg2 = poisson_pmf(mu2, b2_max);

    // Source table S(s1, s2) before background convolution.
    let (s_dim1, s_dim2, source_probs, t_src): (usize, usize, Vec<f64>, f64) = match source {
        SignalSource::PairState { chi } => {
            check_chi(chi)?;
            let (k_max, t) = cut_geometric(chi, trunc.n_max, part_tol)?;
            let g = geometric_pmf(chi, k_max);
            let dim = k_max + 1;
            let mut s = vec![0.0; dim * dim];
            for (k, &pk) in g.iter().enumerate() {
                s[k * dim + k] = pk;
            }
            (dim, dim, s, t)
        }
        SignalSource::IndependentThermal { mean1, mean2 } => {
            if !(mean1 >= 0.0 && mean2 >= 0.0) {
                return Err(Error::Input("thermal means must be >= 0".into()));
            }
            let r1 = mean1 / (1.0 + mean1);
            let r2 = mean2 / (1.0 + mean2);
            let (m1, ta) = cut_geometric(r1, trunc.n_max, part_tol / 2.0)?;
            let (m2, tb) = cut_geometric(r2, trunc.n_max, part_tol / 2.0)?;
            let g1 = geometric_pmf(r1, m1);
            let g2 = geometric_pmf(r2, m2);
            let mut s = vec![0.0; (m1 + 1) * (m2 + 1)];
            for (i, &a) in g1.iter().enumerate() {
                for (j, &b) in g2.iter().enumerate() {
                    s[i * (m2 + 1) + j] = a * b;
                }
            }
            (m1 + 1, m2 + 1, s, ta + tb)
        }
    };

    let dim1 = s_dim1 + b1_max;
    let dim2 = s_dim2 + b2_max;
    let mut probs = vec![0.0; dim1 * dim2];
    // Fixed summation order: source index, then b1, then b2.
    for s1 in 0..s_dim1 {
        for s2 in 0..s_dim2 {
            let ps = source_probs[s1 * s_dim2 + s2];
            if ps == 0.0 {
                continue;
            }
            for (b1, &p1) in bg1.iter().enumerate() {
                let row = (s1 + b1) * dim2 + s2;
                let w = ps * p1;
                for (b2, &p2) in bg2.iter().enumerate() {
                    probs[row + b2] += w * p2;
                }
            }
        }
    }
    Ok(JointDistribution {
        dim1,
        dim2,
        probs,
        tail_bound: t_src + t1 + t2,
    })
}

/// Joint photon-number distribution for the pair source with the
/// parameterized backgrounds.
pub fn joint_photon_distribution(
    params: &ExperimentParams,
    trunc: TruncationSpec,
) -> Result<JointDistribution> {
    let (mu1, mu2) = background_means(params);
    joint_distribution_for(SignalSource::PairState { chi: params.chi }, mu1, mu2, trunc)
}

/// Moments by direct summation. The tail is tightened because the moments
/// weight the neglected mass by up to n^3.
pub fn moment_oracle(params: &ExperimentParams, trunc: TruncationSpec) -> Result<FieldMoments> {
    let tight = TruncationSpec {
        n_max: trunc.n_max,
        tail_tol: trunc.tail_tol.min(1e-18),
    };
    Ok(joint_photon_distribution(params, tight)?.moments())
}

/// Click-pattern index bit for each detector.
pub const BIT_1A: u8 = 1;
pub const BIT_1B: u8 = 2;
pub const BIT_2A: u8 = 4;
pub const BIT_2B: u8 = 8;

/// Probabilities of the four click outcomes of one field, given `n` photons:
/// index bit 0 = detector A clicked, bit 1 = detector B clicked.
///
/// Every photon independently reaches A or B with probability `beta / 2`
/// each. With `a = (1 - beta/2)^n` and `b = (1 - beta)^n`:
/// P(none) = b, P(A only) = P(B only) = a - b, P(both) = 1 - 2a + b,
/// evaluated in a cancellation-free form.
pub fn field_click_probabilities(beta: f64, n: usize) -> [f64; 4] {
    if n == 0 || beta == 0.0 {
        return [1.0, 0.0, 0.0, 0.0];
    }
    let nf = n as f64;
    if beta >= 1.0 {
        // Every photon detected: (1/2)^n on each side.
        let a = 0.5f64.powi(n as i32);
        let both = if n == 1 { 0.0 } else { 1.0 - 2.0 * a };
        return [0.0, a, a, both];
    }
    let ln_half = (-0.5 * beta).ln_1p();
    let ln_full = (-beta).ln_1p();
    let none = (nf * ln_full).exp();
    // a - b = b * (exp(n ln((1 - beta/2)/(1 - beta))) - 1)
    let single = none * (nf * (ln_half - ln_full)).exp_m1();
    // 1 - 2a + b = (1 - a)^2 - (a^2 - b)
    let one_minus_a = -(nf * ln_half).exp_m1();
    let a2_minus_b = none * (nf * (0.25 * beta * beta / (1.0 - beta)).ln_1p()).exp_m1();
    let both = if n == 1 {
        0.0
    } else {
        (one_minus_a * one_minus_a - a2_minus_b).max(0.0)
    };
    [none, single, single, both]
}

/// Exact probabilities of the 16 binary click patterns of (1A, 1B, 2A, 2B).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClickPatternDistribution {
    /// Indexed by `BIT_1A | BIT_1B | BIT_2A | BIT_2B` combinations.
    pub probs: [f64; 16],
    /// Detector-referenced efficiencies used to form the `q` quantities.
    pub alpha: (f64, f64),
}

impl ClickPatternDistribution {
    /// Probability that every bit in `mask` is set.
    pub fn prob_all(&self, mask: u8) -> f64 {
        (0u8..16)
            .filter(|&i| i & mask == mask)
            .map(|i| self.probs[i as usize])
            .sum()
    }

    /// Probability that every bit of `all` is set and at least one bit of `any`.
    pub fn prob_all_any(&self, all: u8, any: u8) -> f64 {
        (0u8..16)
            .filter(|&i| i & all == all && i & any != 0)
            .map(|i| self.probs[i as usize])
            .sum()
    }

    pub fn total(&self) -> f64 {
        self.probs.iter().sum()
    }

    /// Three-fold ratio for a herald and field-2 pair drawn from different,
    /// independent trials: P(2A, 2B) / (P(2A) P(2B)).
    pub fn cross_trial_w(&self) -> Option<f64> {
        let den = self.prob_all(BIT_2A) * self.prob_all(BIT_2B);
        (den > 0.0).then(|| self.prob_all(BIT_2A | BIT_2B) / den)
    }
}

/// Click statistics for an arbitrary joint photon distribution.
pub fn click_patterns_from_joint(
    joint: &JointDistribution,
    beta: (f64, f64),
    alpha: (f64, f64),
) -> ClickPatternDistribution {
    let (e1, e2) = joint.extent();
    let f1: Vec<[f64; 4]> = (0..=e1).map(|n| field_click_probabilities(beta.0, n)).collect();
    let f2: Vec<[f64; 4]> = (0..=e2).map(|n| field_click_probabilities(beta.1, n)).collect();
    let mut probs = [0.0f64; 16];
    for (n1, n2, p) in joint.iter() {
        if p == 0.0 {
            continue;
        }
        for (a, &pa) in f1[n1].iter().enumerate() {
            if pa == 0.0 {
                continue;
            }
            for (b, &pb) in f2[n2].iter().enumerate() {
                probs[a | (b << 2)] += p * pa * pb;
            }
        }
    }
    ClickPatternDistribution { probs, alpha }
}

pub fn click_pattern_probabilities(
    params: &ExperimentParams,
    trunc: TruncationSpec,
) -> Result<ClickPatternDistribution> {
    let joint = joint_photon_distribution(params, trunc)?;
    Ok(click_patterns_from_joint(
        &joint,
        (params.beta1, params.beta2),
        params.alpha().unwrap_or((1.0, 1.0)),
    ))
}

/// Exact observables from a click-pattern distribution, using the same
/// estimator formulas as the count-based analysis.
pub fn oracle_observables(cpd: &ClickPatternDistribution) -> PredictedObservables {
    let p1a = cpd.prob_all(BIT_1A);
    let p1b = cpd.prob_all(BIT_1B);
    let p2a = cpd.prob_all(BIT_2A);
    let p2b = cpd.prob_all(BIT_2B);
    let p1 = p1a + p1b;
    let p2 = p2a + p2b;
    let p11 = cpd.prob_all(BIT_1A | BIT_1B);
    let p22 = cpd.prob_all(BIT_2A | BIT_2B);
    let p12 = [BIT_1A, BIT_1B]
        .iter()
        .flat_map(|&x| [BIT_2A, BIT_2B].map(move |y| x | y))
        .map(|m| cpd.prob_all(m))
        .sum::<f64>();
    let herald = BIT_1A | BIT_1B;
    let p_herald = cpd.prob_all_any(0, herald);
    let h2a = cpd.prob_all_any(BIT_2A, herald);
    let h2b = cpd.prob_all_any(BIT_2B, herald);
    let p3 = cpd.prob_all_any(BIT_2A | BIT_2B, herald);

    let div = |n: f64, d: f64| (d > 0.0).then(|| n / d);
    let g11 = div(p11, p1a * p1b);
    let g22 = div(p22, p2a * p2b);
    let g12 = div(p12, p1 * p2);
    let r = match (g11, g22, g12) {
        (Some(a), Some(b), Some(c)) if a > 0.0 && b > 0.0 => Some(c * c / (a * b)),
        _ => None,
    };
    let w = div(p_herald * p3, h2a * h2b);
    let (a1, a2) = cpd.alpha;
    PredictedObservables {
        p1,
        p2,
        p11,
        p22,
        p12,
        p2fold: (h2a * h2b).sqrt(),
        p3,
        q1: p1 / a1,
        q2: p2 / a2,
        q11: p11 / (a1 * a1),
        q22: p22 / (a2 * a2),
        q12: p12 / (a1 * a2),
        g11,
        g22,
        g12,
        r,
        w,
    }
}
