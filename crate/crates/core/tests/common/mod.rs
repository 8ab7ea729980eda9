#![allow(dead_code)]

use hpl_core::oracle::{click_pattern_probabilities, ClickPatternDistribution};
use hpl_core::sim::SimConfig;
use hpl_core::stats::Estimate;
use hpl_core::ExperimentParams;

/// Nine operating points spanning low/high flux, weak/strong detection and
/// background-free/noisy configurations.
pub fn standard_grid() -> Vec<ExperimentParams> {
    let p = ExperimentParams::reference;
    let custom = |chi: f64, beta: f64, eta: f64, bg: f64| ExperimentParams {
        v1b_sq: bg,
        v2b_sq: bg,
        ..p(chi).with_beta(beta).with_eta(eta)
    };
    vec![
        custom(0.0, 0.3, 0.5, 0.05),
        ExperimentParams::ideal(0.01),
        p(0.05),
        p(0.1),
        p(0.3),
        p(0.05).with_beta(0.2).with_eta(0.5),
        p(0.2).with_beta(0.5).with_eta(0.8),
        p(0.5).with_beta(0.1).with_eta(0.3),
        ExperimentParams::ideal(0.1).with_beta(0.7).with_eta(0.9),
    ]
}

pub fn config(params: ExperimentParams, n_trials: u64, seed: u64) -> SimConfig {
    SimConfig {
        seed,
        n_trials,
        params,
    }
}

pub fn oracle(params: &ExperimentParams) -> ClickPatternDistribution {
    click_pattern_probabilities(params, Default::default()).expect("oracle")
}

/// Deviation of `e` from `target` in units of its own sigma.
pub fn pull(e: &Estimate, target: f64) -> f64 {
    let (v, s) = e.pair().expect("estimate defined");
    (v - target) / s
}

pub fn within_sigmas(e: &Estimate, target: f64, n: f64) -> bool {
    pull(e, target).abs() <= n
}

/// Deviation between two independent-ish estimates in combined sigmas.
pub fn pull_between(a: &Estimate, b: &Estimate) -> f64 {
    let (va, sa) = a.pair().expect("estimate defined");
    let (vb, sb) = b.pair().expect("estimate defined");
    (va - vb) / (sa * sa + sb * sb).sqrt()
}

pub fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}
