//! Two-stage noise-model fit.
//!
//! Stage one recovers `(kappa1, kappa2, v1b_sq, v2b_sq)` from the normalized
//! correlations `g11, g22, g12, w` alone. Each operating point's `chi` is a
//! nuisance parameter solved from its measured `g12`. Stage two fixes those
//! and fits one common `beta` to the absolute `p` levels and one common `eta`
//! to the `q` levels. A third stage refines all parameters jointly against
//! the raw singles, pair and triple counts (see [`counts`]).
//!
//! The shape loss is `sum ((model - measured) / sigma)^2` over every point
//! and every one of `g11, g22, g12, w_same`. When a report carries the raw
//! counts behind a ratio, its sigma is evaluated at the model value.

pub mod counts;
pub mod simplex;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{observables_from_moments, FieldMoments, PredictedObservables};
use crate::params::ExperimentParams;
use crate::rng::StreamRng;
use crate::stats::{CorrelationReport, CountSummary, Estimate, ReportSettings};
use simplex::{minimize, scan_then_refine, Bounds, SimplexOptions};

/// One write-intensity setting: a full correlation report.
pub type OperatingPoint = CorrelationReport;

pub const KAPPA_MAX: f64 = 5.0;
pub const BACKGROUND_MAX: f64 = 0.1;
pub const BETA_MAX: f64 = 0.2;
pub const ETA_MAX: f64 = 1.0;
pub const MIN_RESTARTS: usize = 10;
pub const MIN_P1_SPAN: f64 = 3.0;

const CHI_MIN: f64 = 1e-9;
const CHI_MAX: f64 = 0.95;
const FIT_PURPOSE: u64 = 0xF17;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub kappa1: f64,
    pub kappa2: f64,
    pub v1b_sq: f64,
    pub v2b_sq: f64,
    /// Common `beta1 = beta2`; absent after the shape stage alone.
    pub beta: Option<f64>,
    /// Common `eta1 = eta2`.
    pub eta: Option<f64>,
    /// Inferred excitation probability per operating point, input order.
    pub chi: Vec<f64>,
    pub objective: f64,
    pub objective_start: f64,
    pub scale_objective_beta: Option<f64>,
    pub scale_objective_eta: Option<f64>,
    /// Whether the count-level refinement ran.
    pub refined: bool,
    /// Poisson deviance of the counts at the result.
    pub count_deviance: Option<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub evaluations: usize,
    pub restarts: usize,
    pub best_restart: usize,
    pub seed: u64,
}

impl FitResult {
    pub fn kappa(&self) -> (f64, f64) {
        (self.kappa1, self.kappa2)
    }

    pub fn background(&self) -> (f64, f64) {
        (self.v1b_sq, self.v2b_sq)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Short multi-line summary for terminals.
    pub fn summary(&self) -> String {
        let mut s = format!(
            "kappa1 = {:.5}\nkappa2 = {:.5}\nv1b_sq = {:.6}\nv2b_sq = {:.6}\n",
            self.kappa1, self.kappa2, self.v1b_sq, self.v2b_sq
        );
        if let Some(d) = self.count_deviance {
            s += &format!("count deviance = {d:.3}\n");
        }
        if let (Some(b), Some(e)) = (self.beta, self.eta) {
            s += &format!("beta   = {b:.6}\neta    = {e:.5}\n");
        }
        let chis: Vec<String> = self.chi.iter().map(|c| format!("{c:.5}")).collect();
        s += &format!(
            "chi    = [{}]\nobjective = {:.4} (start {:.4}), converged = {}, restart {} of {}\n",
            chis.join(", "),
            self.objective,
            self.objective_start,
            self.converged,
            self.best_restart,
            self.restarts
        );
        s
    }
}

#[derive(Debug, Clone)]
pub struct FitOptions {
    pub seed: u64,
    pub restarts: usize,
    pub simplex: SimplexOptions,
    /// Start of restart 0 as `[kappa1, kappa2, v1b_sq, v2b_sq]`; clamped into
    /// bounds. Other restarts start uniformly inside the bounds.
    pub start: Option<[f64; 4]>,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            seed: 1,
            restarts: 12,
            simplex: SimplexOptions::default(),
            start: None,
        }
    }
}

pub fn shape_bounds() -> Bounds {
    Bounds {
        lo: vec![0.0; 4],
        hi: vec![KAPPA_MAX, KAPPA_MAX, BACKGROUND_MAX, BACKGROUND_MAX],
    }
}

/// Model observables at unit efficiencies; the normalized ratios do not
/// depend on them.
pub fn shape_model(chi: f64, kappa: (f64, f64), background: (f64, f64)) -> PredictedObservables {
    let m = FieldMoments::pair_with_backgrounds(
        chi,
        kappa.0 * chi + background.0,
        kappa.1 * chi + background.1,
    );
    observables_from_moments(&m, (1.0, 1.0), (1.0, 1.0))
}

fn g12_at(chi: f64, kappa: (f64, f64), background: (f64, f64)) -> f64 {
    crate::model::model_g12(chi, kappa, background)
}

/// Location and height of the maximum of `g12(chi)`. With backgrounds the
/// cross-correlation rises from 1 at `chi = 0` before falling as `1 + 1/chi`.
pub fn g12_peak(kappa: (f64, f64), background: (f64, f64)) -> (f64, f64) {
    let u = scan_then_refine(
        |u| -g12_at(u.exp(), kappa, background),
        CHI_MIN.ln(),
        CHI_MAX.ln(),
        64,
        1e-10,
    );
    let chi = u.exp();
    (chi, g12_at(chi, kappa, background))
}

/// Excitation probability on the high-flux branch where `g12(chi)` equals
/// `target`, clamped to the peak or to the upper search limit.
pub fn chi_from_g12(kappa: (f64, f64), background: (f64, f64), target: f64) -> f64 {
    let peak = g12_peak(kappa, background);
    chi_from_g12_with_peak(kappa, background, target, peak)
}

fn chi_from_g12_with_peak(kappa: (f64, f64), background: (f64, f64), target: f64, peak: (f64, f64)) -> f64 {
    if target >= peak.1 {
        return peak.0;
    }
    if target <= g12_at(CHI_MAX, kappa, background) {
        return CHI_MAX;
    }
    bisect_ln_chi(kappa, background, target, peak.0, CHI_MAX)
}

/// Low-flux branch counterpart of [`chi_from_g12`], if `target` lies on it.
fn rising_chi(kappa: (f64, f64), background: (f64, f64), target: f64, peak: (f64, f64)) -> Option<f64> {
    (target < peak.1 && target > g12_at(CHI_MIN, kappa, background))
        .then(|| bisect_ln_chi(kappa, background, target, peak.0, CHI_MIN))
}

/// Bisection in `ln chi` between `from` (g12 above target) and `to` (below).
fn bisect_ln_chi(kappa: (f64, f64), background: (f64, f64), target: f64, from: f64, to: f64) -> f64 {
    let (mut a, mut b) = (from.ln(), to.ln());
    for _ in 0..200 {
        let mid = 0.5 * (a + b);
        if g12_at(mid.exp(), kappa, background) > target {
            a = mid;
        } else {
            b = mid;
        }
        if (b - a).abs() < 1e-15 {
            break;
        }
    }
    (0.5 * (a + b)).exp()
}

#[derive(Debug, Clone, Copy)]
struct Measured {
    value: f64,
    sigma: f64,
    /// `(E, D)` for a counting ratio `n / E` with Poisson numerator `n` and
    /// denominator relative variance `D`.
    counting: Option<(f64, f64)>,
}

impl Measured {
    /// Sigma with the numerator variance taken at the model's expected count,
    /// so a downward fluctuation does not earn itself a smaller error.
    fn sigma_at(&self, pred: f64) -> f64 {
        match self.counting {
            Some((e, d)) => (pred.max(0.0) / e + pred * pred * d).sqrt().max(f64::MIN_POSITIVE),
            None => self.sigma,
        }
    }
}

fn measured(e: &Estimate, name: &str, point: usize) -> Result<Measured> {
    match e.pair() {
        Some((value, sigma)) if value.is_finite() && sigma.is_finite() && sigma > 0.0 => Ok(Measured {
            value,
            sigma,
            counting: None,
        }),
        Some(_) => Err(Error::Input(format!(
            "point {point}: {name} has a zero or non-finite sigma"
        ))),
        None => Err(Error::Input(format!("point {point}: {name} is undefined"))),
    }
}

/// Attach counting structure when the report's counts reproduce its value.
fn with_counts(mut m: Measured, num: u64, den: &[u64], scale: f64) -> Measured {
    if den.contains(&0) || scale <= 0.0 {
        return m;
    }
    let e = den.iter().map(|&d| d as f64).product::<f64>() / scale;
    if (num as f64 / e - m.value).abs() <= 1e-9 * m.value.abs().max(f64::MIN_POSITIVE) {
        let d = den.iter().map(|&d| 1.0 / d as f64).sum();
        m.counting = Some((e, d));
    }
    m
}

#[derive(Debug, Clone)]
struct ShapeData {
    /// Per point: g11, g22, g12, w.
    obs: Vec<[Measured; 4]>,
}

impl ShapeData {
    fn new(points: &[OperatingPoint]) -> Result<Self> {
        if points.len() < 3 {
            return Err(Error::Input(format!(
                "need at least 3 operating points, got {}",
                points.len()
            )));
        }
        let obs = points
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let c = &p.counts;
                let m = c.m_tot as f64;
                Ok([
                    with_counts(measured(&p.g11, "g11", i)?, c.n_1a1b, &[c.n1a, c.n1b], m),
                    with_counts(measured(&p.g22, "g22", i)?, c.n_2a2b, &[c.n2a, c.n2b], m),
                    with_counts(
                        measured(&p.g12, "g12", i)?,
                        c.n12(),
                        &[c.n1a + c.n1b, c.n2a + c.n2b],
                        m,
                    ),
                    with_counts(
                        measured(&p.w_same, "w_same", i)?,
                        c.n_triple,
                        &[c.n_herald_2a, c.n_herald_2b],
                        c.n_herald as f64,
                    ),
                ])
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { obs })
    }

    /// Residual sum of one point at `chi`.
    fn point_loss(o: &[Measured; 4], chi: f64, kappa: (f64, f64), background: (f64, f64)) -> f64 {
        let m = shape_model(chi, kappa, background);
        let mut total = 0.0;
        for (meas, pred) in o.iter().zip([m.g11, m.g22, m.g12, m.w]) {
            let Some(pred) = pred else {
                return f64::INFINITY;
            };
            total += ((pred - meas.value) / meas.sigma_at(pred)).powi(2);
        }
        total
    }

    /// Per point, the better of the two `chi` solving `g12(chi) = g12_measured`.
    fn point_fits(&self, kappa: (f64, f64), background: (f64, f64)) -> Vec<(f64, f64)> {
        let peak = g12_peak(kappa, background);
        self.obs
            .iter()
            .map(|o| {
                let target = o[2].value;
                let high = chi_from_g12_with_peak(kappa, background, target, peak);
                let best = (Self::point_loss(o, high, kappa, background), high);
                match rising_chi(kappa, background, target, peak) {
                    Some(low) => {
                        let alt = (Self::point_loss(o, low, kappa, background), low);
                        if alt.0 < best.0 {
                            alt
                        } else {
                            best
                        }
                    }
                    None => best,
                }
            })
            .collect()
    }

    fn chis(&self, kappa: (f64, f64), background: (f64, f64)) -> Vec<f64> {
        self.point_fits(kappa, background).into_iter().map(|p| p.1).collect()
    }

    fn loss(&self, x: &[f64]) -> f64 {
        self.point_fits((x[0], x[1]), (x[2], x[3])).iter().map(|p| p.0).sum()
    }
}

/// Weighted squared residuals of `g11, g22, g12, w_same` over all points.
pub fn objective_shape(
    points: &[OperatingPoint],
    kappa1: f64,
    kappa2: f64,
    v1b_sq: f64,
    v2b_sq: f64,
) -> Result<f64> {
    Ok(ShapeData::new(points)?.loss(&[kappa1, kappa2, v1b_sq, v2b_sq]))
}

fn p1_span(points: &[OperatingPoint]) -> Option<f64> {
    let vals: Vec<f64> = points.iter().filter_map(|p| p.p1.value).collect();
    if vals.len() != points.len() {
        return None;
    }
    let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = vals.iter().copied().fold(0.0, f64::max);
    (lo > 0.0).then(|| hi / lo)
}

/// Stage one: `kappa` and background levels by restarted simplex descent.
pub fn fit_shape(points: &[OperatingPoint], opts: &FitOptions) -> Result<FitResult> {
    let data = ShapeData::new(points)?;
    match p1_span(points) {
        Some(s) if s >= MIN_P1_SPAN => {}
        s => {
            return Err(Error::Input(format!(
                "operating points must span a factor of at least {MIN_P1_SPAN} in p1 (got {})",
                s.map_or("undefined".to_string(), |v| format!("{v:.3}"))
            )))
        }
    }
    if opts.restarts < MIN_RESTARTS {
        return Err(Error::Input(format!(
            "at least {MIN_RESTARTS} restarts required, got {}",
            opts.restarts
        )));
    }
    let bounds = shape_bounds();
    let seed = StreamRng::derive_seed(opts.seed, FIT_PURPOSE);
    let starts: Vec<Vec<f64>> = (0..opts.restarts)
        .map(|r| match (r, opts.start) {
            (0, Some(s)) => s.to_vec(),
            _ => {
                let mut rng = StreamRng::new(seed, r as u64);
                (0..4)
                    .map(|i| bounds.lo[i] + rng.uniform() * (bounds.hi[i] - bounds.lo[i]))
                    .collect()
            }
        })
        .collect();

    let outcomes: Vec<_> = starts
        .par_iter()
        .map(|x0| minimize(&|x: &[f64]| data.loss(x), x0, &bounds, &opts.simplex))
        .collect();
    for (r, o) in outcomes.iter().enumerate() {
        log::debug!("restart {r}: loss {:.6e} converged {} at {:?}", o.f, o.converged, o.x);
    }

    let (best_restart, best) = outcomes
        .iter()
        .enumerate()
        .filter(|(_, o)| o.converged)
        .min_by(|a, b| a.1.f.total_cmp(&b.1.f).then(a.0.cmp(&b.0)))
        .ok_or_else(|| Error::FitNotConverged {
            best_objective: outcomes.iter().map(|o| o.f).fold(f64::INFINITY, f64::min),
            restarts: opts.restarts,
        })?;

    let x = &best.x;
    Ok(FitResult {
        kappa1: x[0],
        kappa2: x[1],
        v1b_sq: x[2],
        v2b_sq: x[3],
        beta: None,
        eta: None,
        chi: data.chis((x[0], x[1]), (x[2], x[3])),
        objective: best.f,
        objective_start: best.f_start,
        scale_objective_beta: None,
        scale_objective_eta: None,
        refined: false,
        count_deviance: None,
        converged: true,
        iterations: best.iterations,
        evaluations: outcomes.iter().map(|o| o.evals).sum(),
        restarts: opts.restarts,
        best_restart,
        seed: opts.seed,
    })
}

fn scale_terms(p: &OperatingPoint, q_level: bool, i: usize) -> Result<[Measured; 5]> {
    let e = if q_level {
        [&p.q1, &p.q2, &p.q11, &p.q22, &p.q12]
    } else {
        [&p.p1, &p.p2, &p.p11, &p.p22, &p.p12]
    };
    let names = if q_level {
        ["q1", "q2", "q11", "q22", "q12"]
    } else {
        ["p1", "p2", "p11", "p22", "p12"]
    };
    let mut out = [Measured { value: 0.0, sigma: 1.0, counting: None }; 5];
    for k in 0..5 {
        out[k] = measured(e[k], names[k], i)?;
    }
    Ok(out)
}

/// Sum of squared residuals of one efficiency against first and second
/// moment levels; `moments[i]` holds `<n1>, <n2>, <:n1^2:>/4, <:n2^2:>/4, <:n1 n2:>`.
fn level_loss(eff: f64, moments: &[[f64; 5]], data: &[[Measured; 5]]) -> f64 {
    let mut total = 0.0;
    for (m, d) in moments.iter().zip(data) {
        for k in 0..5 {
            let pred = if k < 2 { eff * m[k] } else { eff * eff * m[k] };
            total += ((pred - d[k].value) / d[k].sigma).powi(2);
        }
    }
    total
}

/// Stage two: common `beta` from detection probabilities and common `eta`
/// from ensemble-referenced probabilities, with `beta <= eta`.
pub fn fit_scale(points: &[OperatingPoint], shape: &FitResult) -> Result<FitResult> {
    if shape.chi.len() != points.len() {
        return Err(Error::Input("shape result does not match the points".into()));
    }
    match p1_span(points) {
        Some(s) if s > 1.0 + 1e-9 => {}
        _ => {
            return Err(Error::ScaleUnderdetermined(
                "operating points do not vary in p1".into(),
            ))
        }
    }
    let moments: Vec<[f64; 5]> = shape
        .chi
        .iter()
        .map(|&chi| {
            let m = FieldMoments::pair_with_backgrounds(
                chi,
                shape.kappa1 * chi + shape.v1b_sq,
                shape.kappa2 * chi + shape.v2b_sq,
            );
            [
                m.n1_mean,
                m.n2_mean,
                0.25 * m.n1n1_no,
                0.25 * m.n2n2_no,
                m.n1n2_no,
            ]
        })
        .collect();
    let p_data = points
        .iter()
        .enumerate()
        .map(|(i, p)| scale_terms(p, false, i))
        .collect::<Result<Vec<_>>>()?;
    let q_data = points
        .iter()
        .enumerate()
        .map(|(i, p)| scale_terms(p, true, i))
        .collect::<Result<Vec<_>>>()?;

    let beta = scan_then_refine(
        |u| level_loss(u.exp(), &moments, &p_data),
        1e-7f64.ln(),
        BETA_MAX.ln(),
        200,
        1e-12,
    )
    .exp()
    .min(BETA_MAX);
    let eta = scan_then_refine(
        |u| level_loss(u.exp(), &moments, &q_data),
        beta.ln(),
        ETA_MAX.ln(),
        200,
        1e-12,
    )
    .exp()
    .clamp(beta, ETA_MAX);

    Ok(FitResult {
        beta: Some(beta),
        eta: Some(eta),
        scale_objective_beta: Some(level_loss(beta, &moments, &p_data)),
        scale_objective_eta: Some(level_loss(eta, &moments, &q_data)),
        ..shape.clone()
    })
}

/// Shape, scale, then count-level refinement when every report carries
/// its raw counts.
pub fn fit(points: &[OperatingPoint], opts: &FitOptions) -> Result<FitResult> {
    let shape = fit_shape(points, opts)?;
    let scaled = fit_scale(points, &shape)?;
    if counts::usable(points) {
        counts::refine(points, &scaled, opts)
    } else {
        log::info!("reports carry no raw counts; skipping count-level refinement");
        Ok(scaled)
    }
}

pub fn read_points(json: &str) -> Result<Vec<OperatingPoint>> {
    Ok(serde_json::from_str(json)?)
}

fn expected(value: f64, sigma_rel_sq: f64) -> Estimate {
    Estimate::new(value, value.abs() * sigma_rel_sq.sqrt())
}

/// Noise-free operating point from the linearized model. Sigmas are the
/// Poisson errors expected after `m_tot` trials.
pub fn synthetic_point(params: &ExperimentParams, m_tot: u64) -> Result<OperatingPoint> {
    let params = params.validate()?;
    point_from_observables(&crate::model::predict_observables(&params), &params, m_tot)
}

/// Noise-free operating point from exact click probabilities.
pub fn oracle_point(params: &ExperimentParams, m_tot: u64) -> Result<OperatingPoint> {
    let params = params.validate()?;
    let cpd = crate::oracle::click_pattern_probabilities(&params, Default::default())?;
    point_from_observables(&crate::oracle::oracle_observables(&cpd), &params, m_tot)
}

/// Operating point carrying `o` as measured values with expected Poisson
/// sigmas for `m_tot` trials.
pub fn point_from_observables(
    o: &PredictedObservables,
    params: &ExperimentParams,
    m_tot: u64,
) -> Result<OperatingPoint> {
    let params = *params;
    let (a1, a2) = params
        .alpha()
        .ok_or_else(|| Error::Input("alpha undefined".into()))?;
    let m = m_tot as f64;
    let inv = |p: f64| 1.0 / (m * p).max(1.0);
    let undefined_or = |v: Option<f64>, rel_sq: f64| v.map_or(Estimate::undefined(), |v| expected(v, rel_sq));
    let (p1, p2) = (o.p1, o.p2);
    let g11 = undefined_or(o.g11, inv(o.p11) + 2.0 * inv(0.5 * p1));
    let g22 = undefined_or(o.g22, inv(o.p22) + 2.0 * inv(0.5 * p2));
    let g12 = undefined_or(o.g12, inv(o.p12) + inv(p1) + inv(p2));
    let w = undefined_or(o.w, inv(p1) + inv(o.p3) + 2.0 * inv(o.p2fold));
    let gset = crate::stats::GSet { g11, g22, g12 };
    Ok(CorrelationReport {
        m_tot,
        p1: expected(p1, inv(p1)),
        p2: expected(p2, inv(p2)),
        p11: expected(o.p11, inv(o.p11)),
        p22: expected(o.p22, inv(o.p22)),
        p12: expected(o.p12, inv(o.p12)),
        p3: expected(o.p3, inv(o.p3)),
        q1: expected(o.q1, inv(p1)),
        q2: expected(o.q2, inv(p2)),
        q11: expected(o.q11, inv(o.p11)),
        q22: expected(o.q22, inv(o.p22)),
        q12: expected(o.q12, inv(o.p12)),
        g11,
        g22,
        g12,
        r: crate::stats::estimate_r(&gset),
        w_same: w,
        w_cross: Vec::new(),
        w_approximant: crate::stats::w_approximant(&gset),
        settings: ReportSettings {
            alpha1: a1,
            alpha2: a2,
            cross_offsets: Vec::new(),
            error_method: "model".into(),
            bootstrap_resamples: None,
            bootstrap_seed: None,
            params: Some(params),
        },
        counts: CountSummary {
            m_tot,
            ..Default::default()
        },
    })
}
