//! Count-level refinement.
//!
//! The normalized correlations alone pin the background levels only loosely
//! at realistic count numbers, while the singles and coincidence rates carry
//! far more information once `beta` is free. This stage minimizes the summed
//! Poisson deviance of the eleven counters
//! `n1A, n1B, n2A, n2B, n1A1B, n2A2B, n1A2A, n1A2B, n1B2A, n1B2B, n_triple`
//! over `(kappa1, kappa2, v1b_sq, v2b_sq, beta)`, with each point's `chi`
//! profiled out and exact click probabilities. The counters overlap, so the
//! deviance is a composite likelihood rather than an exact one.

use rayon::prelude::*;

use super::simplex::{minimize, scan_then_refine, Bounds};
use super::{scale_terms, FitOptions, FitResult, OperatingPoint, BACKGROUND_MAX, BETA_MAX, ETA_MAX, KAPPA_MAX};
use crate::error::{Error, Result};
use crate::model::clicks::ClickModel;
use crate::oracle::{BIT_1A, BIT_1B, BIT_2A, BIT_2B};
use crate::rng::StreamRng;
use crate::stats::CountSummary;

const BETA_MIN: f64 = 1e-6;
const CHI_LO: f64 = 1e-6;
const CHI_HI: f64 = 0.95;
const REFINE_PURPOSE: u64 = 0xC0C0;

const MASKS: [u8; 10] = [
    BIT_1A,
    BIT_1B,
    BIT_2A,
    BIT_2B,
    BIT_1A | BIT_1B,
    BIT_2A | BIT_2B,
    BIT_1A | BIT_2A,
    BIT_1A | BIT_2B,
    BIT_1B | BIT_2A,
    BIT_1B | BIT_2B,
];

fn counters(c: &CountSummary) -> [u64; 11] {
    [
        c.n1a, c.n1b, c.n2a, c.n2b, c.n_1a1b, c.n_2a2b, c.n_1a2a, c.n_1a2b, c.n_1b2a, c.n_1b2b, c.n_triple,
    ]
}

/// Whether every report carries counts consistent with its estimates.
pub fn usable(points: &[OperatingPoint]) -> bool {
    points.iter().all(|p| {
        let c = &p.counts;
        c.m_tot > 0
            && c.m_tot == p.m_tot
            && c.n1a + c.n1b > 0
            && p.p1
                .value
                .is_some_and(|v| ((c.n1a + c.n1b) as f64 / c.m_tot as f64 - v).abs() <= 1e-12 * v.max(1e-300))
    })
}

fn model_probs(m: &ClickModel) -> [f64; 11] {
    let mut out = [0.0; 11];
    for (o, &mask) in out.iter_mut().zip(&MASKS) {
        *o = m.prob_all(mask);
    }
    out[10] = m.prob_triple();
    out
}

fn deviance(n: &[u64; 11], m_tot: f64, probs: &[f64; 11]) -> f64 {
    let mut d = 0.0;
    for (&k, &p) in n.iter().zip(probs) {
        let mu = m_tot * p;
        if mu <= 0.0 {
            if k > 0 {
                return f64::INFINITY;
            }
            continue;
        }
        let k = k as f64;
        if k > 0.0 {
            // mu - k + k ln(k/mu), written to avoid cancellation near mu = k
            let x = (mu - k) / k;
            d += k * (x - x.ln_1p());
        } else {
            d += mu;
        }
    }
    2.0 * d
}

struct PointCounts {
    n: [u64; 11],
    m_tot: f64,
}

impl PointCounts {
    fn at(&self, chi: f64, theta: &[f64]) -> f64 {
        let m = ClickModel::new(
            chi,
            theta[0] * chi + theta[2],
            theta[1] * chi + theta[3],
            theta[4],
            theta[4],
        );
        deviance(&self.n, self.m_tot, &model_probs(&m))
    }

    /// Deviance minimized over this point's `chi`.
    fn profile(&self, theta: &[f64]) -> (f64, f64) {
        let u = scan_then_refine(|u| self.at(u.exp(), theta), CHI_LO.ln(), CHI_HI.ln(), 32, 1e-9);
        let chi = u.exp();
        (self.at(chi, theta), chi)
    }
}

fn total(data: &[PointCounts], theta: &[f64]) -> f64 {
    data.iter().map(|p| p.profile(theta).0).sum()
}

fn refine_bounds() -> Bounds {
    Bounds {
        lo: vec![0.0, 0.0, 0.0, 0.0, BETA_MIN],
        hi: vec![KAPPA_MAX, KAPPA_MAX, BACKGROUND_MAX, BACKGROUND_MAX, BETA_MAX],
    }
}

/// `eta` with `beta` fixed, from the ensemble-referenced levels
/// `q = p (eta / beta)^order`.
fn eta_from_q(points: &[OperatingPoint], chis: &[f64], theta: &[f64]) -> Result<(f64, f64)> {
    let beta = theta[4];
    let levels: Vec<[f64; 5]> = chis
        .iter()
        .map(|&chi| {
            let m = ClickModel::new(chi, theta[0] * chi + theta[2], theta[1] * chi + theta[3], beta, beta);
            let pair = |a: u8, b: u8| m.prob_all(a | b);
            [
                m.prob_all(BIT_1A) + m.prob_all(BIT_1B),
                m.prob_all(BIT_2A) + m.prob_all(BIT_2B),
                pair(BIT_1A, BIT_1B),
                pair(BIT_2A, BIT_2B),
                pair(BIT_1A, BIT_2A) + pair(BIT_1A, BIT_2B) + pair(BIT_1B, BIT_2A) + pair(BIT_1B, BIT_2B),
            ]
        })
        .collect();
    let q = points
        .iter()
        .enumerate()
        .map(|(i, p)| scale_terms(p, true, i))
        .collect::<Result<Vec<_>>>()?;
    let loss = |eta: f64| {
        let r = eta / beta;
        let mut s = 0.0;
        for (l, d) in levels.iter().zip(&q) {
            for k in 0..5 {
                let pred = l[k] * if k < 2 { r } else { r * r };
                s += ((pred - d[k].value) / d[k].sigma).powi(2);
            }
        }
        s
    };
    let eta = scan_then_refine(|u| loss(u.exp()), beta.ln(), ETA_MAX.ln(), 200, 1e-12)
        .exp()
        .clamp(beta, ETA_MAX);
    Ok((eta, loss(eta)))
}

/// Summed profiled deviance at `[kappa1, kappa2, v1b_sq, v2b_sq, beta]`.
pub fn profiled_deviance(points: &[OperatingPoint], theta: [f64; 5]) -> Result<f64> {
    if !usable(points) {
        return Err(Error::Input("reports carry no usable raw counts".into()));
    }
    let data: Vec<PointCounts> = points
        .iter()
        .map(|p| PointCounts {
            n: counters(&p.counts),
            m_tot: p.counts.m_tot as f64,
        })
        .collect();
    Ok(total(&data, &theta))
}

/// Counters rounded from their expectations after `m_tot` trials (no
/// cross-trial entries).
pub fn expected_counts(params: &crate::params::ExperimentParams, m_tot: u64) -> CountSummary {
    let m = ClickModel::from_params(params);
    let n = |p: f64| (p * m_tot as f64).round() as u64;
    let herald = BIT_1A | BIT_1B;
    CountSummary {
        m_tot,
        n1a: n(m.prob_all(BIT_1A)),
        n1b: n(m.prob_all(BIT_1B)),
        n2a: n(m.prob_all(BIT_2A)),
        n2b: n(m.prob_all(BIT_2B)),
        n_1a1b: n(m.prob_all(BIT_1A | BIT_1B)),
        n_2a2b: n(m.prob_all(BIT_2A | BIT_2B)),
        n_1a2a: n(m.prob_all(BIT_1A | BIT_2A)),
        n_1a2b: n(m.prob_all(BIT_1A | BIT_2B)),
        n_1b2a: n(m.prob_all(BIT_1B | BIT_2A)),
        n_1b2b: n(m.prob_all(BIT_1B | BIT_2B)),
        n_herald: n(m.prob_all_any(0, herald)),
        n_herald_2a: n(m.prob_all_any(BIT_2A, herald)),
        n_herald_2b: n(m.prob_all_any(BIT_2B, herald)),
        n_triple: n(m.prob_triple()),
        cross: Vec::new(),
    }
}

/// Joint count-level fit started from `start` and from `opts.restarts`
/// random shape parameters at the starting `beta`.
pub fn refine(points: &[OperatingPoint], start: &FitResult, opts: &FitOptions) -> Result<FitResult> {
    if !usable(points) {
        return Err(Error::Input("reports carry no usable raw counts".into()));
    }
    let data: Vec<PointCounts> = points
        .iter()
        .map(|p| PointCounts {
            n: counters(&p.counts),
            m_tot: p.counts.m_tot as f64,
        })
        .collect();
    let bounds = refine_bounds();
    let beta0 = start.beta.unwrap_or(0.01);
    let seed = StreamRng::derive_seed(opts.seed, REFINE_PURPOSE);
    let mut starts = vec![vec![start.kappa1, start.kappa2, start.v1b_sq, start.v2b_sq, beta0]];
    for r in 0..opts.restarts {
        let mut rng = StreamRng::new(seed, r as u64);
        let mut x: Vec<f64> = (0..4)
            .map(|i| bounds.lo[i] + rng.uniform() * (bounds.hi[i] - bounds.lo[i]))
            .collect();
        x.push(beta0);
        starts.push(x);
    }
    // Deviance is on a chi-square scale and can sit at ~0 for exact data.
    let simplex = super::simplex::SimplexOptions {
        abs_floor: opts.simplex.abs_floor.max(1e-6),
        ..opts.simplex
    };
    let outcomes: Vec<_> = starts
        .par_iter()
        .map(|x0| minimize(&|x: &[f64]| total(&data, x), x0, &bounds, &simplex))
        .collect();
    for (r, o) in outcomes.iter().enumerate() {
        log::debug!("refine start {r}: deviance {:.6} converged {} at {:?}", o.f, o.converged, o.x);
    }
    let (best_start, best) = outcomes
        .iter()
        .enumerate()
        .filter(|(_, o)| o.converged)
        .min_by(|a, b| a.1.f.total_cmp(&b.1.f).then(a.0.cmp(&b.0)))
        .ok_or_else(|| Error::FitNotConverged {
            best_objective: outcomes.iter().map(|o| o.f).fold(f64::INFINITY, f64::min),
            restarts: starts.len(),
        })?;

    log::debug!("refinement kept start {best_start}");
    let x = &best.x;
    let chis: Vec<f64> = data.iter().map(|p| p.profile(x).1).collect();
    let (eta, eta_loss) = eta_from_q(points, &chis, x)?;
    let shape_objective = super::objective_shape(points, x[0], x[1], x[2], x[3])?;
    Ok(FitResult {
        kappa1: x[0],
        kappa2: x[1],
        v1b_sq: x[2],
        v2b_sq: x[3],
        beta: Some(x[4]),
        eta: Some(eta),
        chi: chis,
        objective: shape_objective,
        objective_start: start.objective_start,
        scale_objective_beta: start.scale_objective_beta,
        scale_objective_eta: Some(eta_loss),
        refined: true,
        count_deviance: Some(best.f),
        converged: true,
        iterations: start.iterations + best.iterations,
        evaluations: start.evaluations + outcomes.iter().map(|o| o.evals).sum::<usize>(),
        restarts: start.restarts,
        best_restart: start.best_restart,
        seed: opts.seed,
    })
}
