//! Counting estimators for detection probabilities, normalized correlations,
//! the Cauchy-Schwarz ratio and the conditional three-fold ratio.
//!
//! A detector fires in a trial when it has at least one event in that trial's
//! window for its field. The herald `1_1` is a click on D1A or D1B; the
//! field-2 pair `(1_2, 1_2)` is a click on both D2A and D2B. Uncertainties are
//! first-order Poisson propagation treating every count as independent; a
//! zero numerator count yields value 0 with a one-count sigma.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::oracle::{BIT_1A, BIT_1B, BIT_2A, BIT_2B};
use crate::params::ExperimentParams;
use crate::rng::StreamRng;
use crate::sim::{ClickPattern, EventLog};

const HERALD: u8 = BIT_1A | BIT_1B;
const PAIR2: u8 = BIT_2A | BIT_2B;

/// Counters for trial pairs `(i, i + offset)`: herald taken from trial `i`,
/// field-2 clicks from trial `i + offset`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CrossTrialCounts {
    pub offset: u64,
    pub pairs: u64,
    pub herald: u64,
    pub herald_2a: u64,
    pub herald_2b: u64,
    pub triple: u64,
    /// Four detector-pair coincidence sum across the two trials.
    pub n12: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountSummary {
    pub m_tot: u64,
    pub n1a: u64,
    pub n1b: u64,
    pub n2a: u64,
    pub n2b: u64,
    pub n_1a1b: u64,
    pub n_2a2b: u64,
    pub n_1a2a: u64,
    pub n_1a2b: u64,
    pub n_1b2a: u64,
    pub n_1b2b: u64,
    /// Trials with a click on D1A or D1B.
    pub n_herald: u64,
    pub n_herald_2a: u64,
    pub n_herald_2b: u64,
    /// Trials with (1A or 1B) and 2A and 2B.
    pub n_triple: u64,
    pub cross: Vec<CrossTrialCounts>,
}

fn has(p: u8, mask: u8) -> bool {
    p & mask == mask
}

impl CountSummary {
    /// Counts for a run of `m_tot` trials given its nonempty click patterns
    /// sorted by trial index (one entry per trial).
    pub fn from_patterns(m_tot: u64, patterns: &[(u64, ClickPattern)], offsets: &[u64]) -> Self {
        Self::from_patterns_range(m_tot, patterns, offsets, 0..m_tot)
    }

    /// Counters attributed to trials `range`; cross-trial pairs are attributed
    /// to their first trial. Summing the counts of consecutive ranges gives
    /// the counts of their union.
    pub fn from_patterns_range(
        m_tot: u64,
        patterns: &[(u64, ClickPattern)],
        offsets: &[u64],
        range: std::ops::Range<u64>,
    ) -> Self {
        let lo = patterns.partition_point(|&(t, _)| t < range.start);
        let hi = patterns.partition_point(|&(t, _)| t < range.end);
        let mut c = CountSummary {
            m_tot: range.end - range.start,
            ..Default::default()
        };
        for &(_, p) in &patterns[lo..hi] {
            c.n1a += has(p, BIT_1A) as u64;
            c.n1b += has(p, BIT_1B) as u64;
            c.n2a += has(p, BIT_2A) as u64;
            c.n2b += has(p, BIT_2B) as u64;
            c.n_1a1b += has(p, BIT_1A | BIT_1B) as u64;
            c.n_2a2b += has(p, PAIR2) as u64;
            c.n_1a2a += has(p, BIT_1A | BIT_2A) as u64;
            c.n_1a2b += has(p, BIT_1A | BIT_2B) as u64;
            c.n_1b2a += has(p, BIT_1B | BIT_2A) as u64;
            c.n_1b2b += has(p, BIT_1B | BIT_2B) as u64;
            if p & HERALD != 0 {
                c.n_herald += 1;
                c.n_herald_2a += has(p, BIT_2A) as u64;
                c.n_herald_2b += has(p, BIT_2B) as u64;
                c.n_triple += has(p, PAIR2) as u64;
            }
        }
        for &k in offsets {
            let mut x = CrossTrialCounts {
                offset: k,
                pairs: range.end.min(m_tot.saturating_sub(k)).saturating_sub(range.start),
                ..Default::default()
            };
            let mut j = hi.min(lo);
            for &(i, p) in &patterns[lo..hi] {
                if i + k >= m_tot {
                    break;
                }
                let target = i + k;
                while j < patterns.len() && patterns[j].0 < target {
                    j += 1;
                }
                let later = match patterns.get(j) {
                    Some(&(t, q)) if t == target => q,
                    _ => 0,
                };
                let n1 = has(p, BIT_1A) as u64 + has(p, BIT_1B) as u64;
                let n2 = has(later, BIT_2A) as u64 + has(later, BIT_2B) as u64;
                x.n12 += n1 * n2;
                if p & HERALD != 0 {
                    x.herald += 1;
                    x.herald_2a += has(later, BIT_2A) as u64;
                    x.herald_2b += has(later, BIT_2B) as u64;
                    x.triple += has(later, PAIR2) as u64;
                }
            }
            c.cross.push(x);
        }
        c
    }

    /// Field-wise sum; cross-trial lists must carry the same offsets.
    pub fn add(&mut self, o: &CountSummary) {
        self.m_tot += o.m_tot;
        self.n1a += o.n1a;
        self.n1b += o.n1b;
        self.n2a += o.n2a;
        self.n2b += o.n2b;
        self.n_1a1b += o.n_1a1b;
        self.n_2a2b += o.n_2a2b;
        self.n_1a2a += o.n_1a2a;
        self.n_1a2b += o.n_1a2b;
        self.n_1b2a += o.n_1b2a;
        self.n_1b2b += o.n_1b2b;
        self.n_herald += o.n_herald;
        self.n_herald_2a += o.n_herald_2a;
        self.n_herald_2b += o.n_herald_2b;
        self.n_triple += o.n_triple;
        if self.cross.is_empty() {
            self.cross = o.cross.iter().map(|x| CrossTrialCounts { offset: x.offset, ..Default::default() }).collect();
        }
        for (a, b) in self.cross.iter_mut().zip(&o.cross) {
            debug_assert_eq!(a.offset, b.offset);
            a.pairs += b.pairs;
            a.herald += b.herald;
            a.herald_2a += b.herald_2a;
            a.herald_2b += b.herald_2b;
            a.triple += b.triple;
            a.n12 += b.n12;
        }
    }

    pub fn n12(&self) -> u64 {
        self.n_1a2a + self.n_1a2b + self.n_1b2a + self.n_1b2b
    }

    pub fn cross_for(&self, offset: u64) -> Option<&CrossTrialCounts> {
        self.cross.iter().find(|x| x.offset == offset)
    }
}

/// Per-trial click patterns of a log after window validation.
pub fn log_patterns(log: &EventLog) -> Result<Vec<(u64, ClickPattern)>> {
    let p = &log.meta.params;
    let mut out: Vec<(u64, ClickPattern)> = Vec::new();
    let mut prev = (0u64, 0u64);
    for (n, e) in log.events.iter().enumerate() {
        if e.trial_index >= log.meta.n_trials {
            return Err(Error::Integrity(format!(
                "event {n}: trial {} beyond n_trials={}",
                e.trial_index, log.meta.n_trials
            )));
        }
        if (e.trial_index, e.t_ns) < prev {
            return Err(Error::Integrity(format!("event {n}: log not sorted")));
        }
        prev = (e.trial_index, e.t_ns);
        let start = if e.detector.field() == 1 {
            log.field1_window_start(e.trial_index)
        } else {
            log.field2_window_start(e.trial_index)
        };
        if e.t_ns < start || e.t_ns > start + p.window_ns {
            return Err(Error::Integrity(format!(
                "event {n}: {} at {} ns outside trial {} window [{start}, {}]",
                e.detector.token(),
                e.t_ns,
                e.trial_index,
                start + p.window_ns
            )));
        }
        match out.last_mut() {
            Some((t, pat)) if *t == e.trial_index => *pat |= e.detector.bit(),
            _ => out.push((e.trial_index, e.detector.bit())),
        }
    }
    Ok(out)
}

/// Count singles, coincidences and triples of a log. Several events on one
/// detector in one window count once.
pub fn accumulate_counts(log: &EventLog, offsets: &[u64]) -> Result<CountSummary> {
    let patterns = log_patterns(log)?;
    Ok(CountSummary::from_patterns(log.meta.n_trials, &patterns, offsets))
}

/// Counts of a simulated run without building its time-stamped log.
pub fn simulate_counts(config: &crate::sim::SimConfig, offsets: &[u64]) -> Result<CountSummary> {
    let patterns = crate::sim::simulate_patterns(config)?;
    Ok(CountSummary::from_patterns(config.n_trials, &patterns, offsets))
}

/// A value with its standard error; `defined = false` when a denominator vanished.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: Option<f64>,
    pub sigma: Option<f64>,
    pub defined: bool,
}

impl Estimate {
    pub fn new(value: f64, sigma: f64) -> Self {
        Self {
            value: Some(value),
            sigma: Some(sigma),
            defined: true,
        }
    }

    pub fn undefined() -> Self {
        Self {
            value: None,
            sigma: None,
            defined: false,
        }
    }

    pub fn val(&self) -> Option<f64> {
        self.value
    }

    pub fn sig(&self) -> Option<f64> {
        self.sigma
    }

    /// Value and sigma, if defined.
    pub fn pair(&self) -> Option<(f64, f64)> {
        Some((self.value?, self.sigma?))
    }
}

/// `scale * prod(num) / prod(den)` with relative error
/// `sqrt(sum 1/n)` over every count, zero counts taken as one.
pub fn counting_ratio(scale: f64, num: &[u64], den: &[u64]) -> Estimate {
    if den.contains(&0) {
        return Estimate::undefined();
    }
    let prod = |v: &[u64], floor: bool| {
        v.iter()
            .map(|&n| if floor { n.max(1) as f64 } else { n as f64 })
            .product::<f64>()
    };
    let d = prod(den, false);
    let value = scale * prod(num, false) / d;
    let bounded = scale * prod(num, true) / d;
    let rel = num
        .iter()
        .chain(den)
        .map(|&n| 1.0 / n.max(1) as f64)
        .sum::<f64>()
        .sqrt();
    Estimate::new(value, bounded * rel)
}

fn probability(count: u64, m_tot: u64) -> Estimate {
    Estimate::new(
        count as f64 / m_tot as f64,
        (count.max(1) as f64).sqrt() / m_tot as f64,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbabilitySet {
    pub p1a: Estimate,
    pub p1b: Estimate,
    pub p2a: Estimate,
    pub p2b: Estimate,
    /// (n1A + n1B) / M
    pub p1: Estimate,
    pub p2: Estimate,
    pub p11: Estimate,
    pub p22: Estimate,
    /// Four detector-pair coincidence sum over M.
    pub p12: Estimate,
    /// P(1A or 1B).
    pub p_herald: Estimate,
    /// Herald with one given field-2 detector (geometric mean over D2A, D2B).
    pub p2fold: Estimate,
    pub p3: Estimate,
}

pub fn estimate_probabilities(c: &CountSummary) -> Result<ProbabilitySet> {
    let m = c.m_tot;
    if m == 0 {
        return Err(Error::Input("M_tot must be at least 1".into()));
    }
    let h = ((c.n_herald_2a as f64) * (c.n_herald_2b as f64)).sqrt();
    let hs = ((c.n_herald_2a.max(1) as f64) * (c.n_herald_2b.max(1) as f64)).sqrt();
    Ok(ProbabilitySet {
        p1a: probability(c.n1a, m),
        p1b: probability(c.n1b, m),
        p2a: probability(c.n2a, m),
        p2b: probability(c.n2b, m),
        p1: probability(c.n1a + c.n1b, m),
        p2: probability(c.n2a + c.n2b, m),
        p11: probability(c.n_1a1b, m),
        p22: probability(c.n_2a2b, m),
        p12: probability(c.n12(), m),
        p_herald: probability(c.n_herald, m),
        p2fold: Estimate::new(h / m as f64, hs.sqrt() / m as f64),
        p3: probability(c.n_triple, m),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QSet {
    pub q1: Estimate,
    pub q2: Estimate,
    pub q11: Estimate,
    pub q22: Estimate,
    pub q12: Estimate,
}

fn scaled(e: Estimate, factor: f64) -> Estimate {
    match e.pair() {
        Some((v, s)) => Estimate::new(v * factor, s * factor),
        None => Estimate::undefined(),
    }
}

/// Refer detection probabilities to the ensemble output: q = p / alpha.
pub fn to_q(p: &ProbabilitySet, alpha1: f64, alpha2: f64) -> Result<QSet> {
    for (name, a) in [("alpha1", alpha1), ("alpha2", alpha2)] {
        if !(a > 0.0 && a <= 1.0) {
            return Err(Error::Input(format!("{name} = {a} out of (0,1]")));
        }
    }
    Ok(QSet {
        q1: scaled(p.p1, 1.0 / alpha1),
        q2: scaled(p.p2, 1.0 / alpha2),
        q11: scaled(p.p11, 1.0 / (alpha1 * alpha1)),
        q22: scaled(p.p22, 1.0 / (alpha2 * alpha2)),
        q12: scaled(p.p12, 1.0 / (alpha1 * alpha2)),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GSet {
    pub g11: Estimate,
    pub g22: Estimate,
    pub g12: Estimate,
}

pub fn estimate_g(c: &CountSummary) -> GSet {
    let m = c.m_tot as f64;
    GSet {
        g11: counting_ratio(m, &[c.n_1a1b], &[c.n1a, c.n1b]),
        g22: counting_ratio(m, &[c.n_2a2b], &[c.n2a, c.n2b]),
        g12: counting_ratio(m, &[c.n12()], &[c.n1a + c.n1b, c.n2a + c.n2b]),
    }
}

/// R = g12^2 / (g11 g22), relative errors combined in quadrature.
pub fn estimate_r(g: &GSet) -> Estimate {
    let (Some((a, sa)), Some((b, sb)), Some((c, sc))) = (g.g11.pair(), g.g22.pair(), g.g12.pair())
    else {
        return Estimate::undefined();
    };
    if a <= 0.0 || b <= 0.0 {
        return Estimate::undefined();
    }
    let r = c * c / (a * b);
    let rel = ((2.0 * sc / c.max(f64::MIN_POSITIVE)).powi(2) + (sa / a).powi(2) + (sb / b).powi(2)).sqrt();
    let sigma = if c > 0.0 { r * rel } else { 2.0 * sc * sc / (a * b) };
    Estimate::new(r, sigma)
}

/// w = P(1_1) P(1_1, 2A, 2B) / (P(1_1, 2A) P(1_1, 2B)) within one trial.
pub fn estimate_w_same_trial(c: &CountSummary) -> Estimate {
    counting_ratio(1.0, &[c.n_herald, c.n_triple], &[c.n_herald_2a, c.n_herald_2b])
}

/// Same ratio with the herald in trial `i` and field 2 in trial `i + k`.
pub fn estimate_w_cross_trial(c: &CountSummary, k: u64) -> Result<Estimate> {
    if k == 0 {
        return Err(Error::Input("cross-trial offset must be >= 1".into()));
    }
    let x = c
        .cross_for(k)
        .ok_or_else(|| Error::Input(format!("no cross-trial counters for offset {k}")))?;
    if x.pairs == 0 {
        return Ok(Estimate::undefined());
    }
    Ok(counting_ratio(1.0, &[x.herald, x.triple], &[x.herald_2a, x.herald_2b]))
}

/// g11 g22 / g12.
pub fn w_approximant(g: &GSet) -> Estimate {
    let (Some((a, sa)), Some((b, sb)), Some((c, sc))) = (g.g11.pair(), g.g22.pair(), g.g12.pair())
    else {
        return Estimate::undefined();
    };
    if c <= 0.0 {
        return Estimate::undefined();
    }
    let v = a * b / c;
    let rel = ((sa / a.max(f64::MIN_POSITIVE)).powi(2)
        + (sb / b.max(f64::MIN_POSITIVE)).powi(2)
        + (sc / c).powi(2))
    .sqrt();
    Estimate::new(v, v * rel)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CrossEstimate {
    pub offset: u64,
    #[serde(flatten)]
    pub estimate: Estimate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportSettings {
    pub alpha1: f64,
    pub alpha2: f64,
    pub cross_offsets: Vec<u64>,
    /// "poisson" or "bootstrap".
    pub error_method: String,
    pub bootstrap_resamples: Option<usize>,
    pub bootstrap_seed: Option<u64>,
    /// Parameters echoed from the analyzed log's header.
    pub params: Option<ExperimentParams>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub m_tot: u64,
    pub p1: Estimate,
    pub p2: Estimate,
    pub p11: Estimate,
    pub p22: Estimate,
    pub p12: Estimate,
    pub p3: Estimate,
    pub q1: Estimate,
    pub q2: Estimate,
    pub q11: Estimate,
    pub q22: Estimate,
    pub q12: Estimate,
    pub g11: Estimate,
    pub g22: Estimate,
    pub g12: Estimate,
    #[serde(rename = "R")]
    pub r: Estimate,
    pub w_same: Estimate,
    pub w_cross: Vec<CrossEstimate>,
    pub w_approximant: Estimate,
    pub settings: ReportSettings,
    pub counts: CountSummary,
}

impl CorrelationReport {
    pub fn w_cross_at(&self, k: u64) -> Option<Estimate> {
        self.w_cross.iter().find(|x| x.offset == k).map(|x| x.estimate)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisOptions {
    pub cross_offsets: Vec<u64>,
    /// Overrides the `beta / eta` ratio of the log header.
    pub alpha: Option<(f64, f64)>,
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        Self {
            cross_offsets: vec![1],
            alpha: None,
        }
    }
}

fn resolve_alpha(opts: &AnalysisOptions, params: Option<&ExperimentParams>) -> Result<(f64, f64)> {
    opts.alpha
        .or_else(|| params.and_then(|p| p.alpha()))
        .ok_or_else(|| Error::Input("efficiency ratio alpha undefined; supply it explicitly".into()))
}

/// Build the full report from counts.
pub fn report_from_counts(
    counts: &CountSummary,
    alpha: (f64, f64),
    settings: ReportSettings,
) -> Result<CorrelationReport> {
    let p = estimate_probabilities(counts)?;
    let q = to_q(&p, alpha.0, alpha.1)?;
    let g = estimate_g(counts);
    let w_cross = settings
        .cross_offsets
        .iter()
        .map(|&k| {
            Ok(CrossEstimate {
                offset: k,
                estimate: estimate_w_cross_trial(counts, k)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CorrelationReport {
        m_tot: counts.m_tot,
        p1: p.p1,
        p2: p.p2,
        p11: p.p11,
        p22: p.p22,
        p12: p.p12,
        p3: p.p3,
        q1: q.q1,
        q2: q.q2,
        q11: q.q11,
        q22: q.q22,
        q12: q.q12,
        g11: g.g11,
        g22: g.g22,
        g12: g.g12,
        r: estimate_r(&g),
        w_same: estimate_w_same_trial(counts),
        w_cross,
        w_approximant: w_approximant(&g),
        settings,
        counts: counts.clone(),
    })
}

fn settings_for(opts: &AnalysisOptions, alpha: (f64, f64), params: Option<ExperimentParams>) -> ReportSettings {
    ReportSettings {
        alpha1: alpha.0,
        alpha2: alpha.1,
        cross_offsets: opts.cross_offsets.clone(),
        error_method: "poisson".into(),
        bootstrap_resamples: None,
        bootstrap_seed: None,
        params,
    }
}

/// Analyze a log with Poisson-propagated errors.
pub fn analyze(log: &EventLog, opts: &AnalysisOptions) -> Result<CorrelationReport> {
    let counts = accumulate_counts(log, &opts.cross_offsets)?;
    let alpha = resolve_alpha(opts, Some(&log.meta.params))?;
    report_from_counts(&counts, alpha, settings_for(opts, alpha, Some(log.meta.params)))
}

/// Analyze precomputed counts (e.g. from a pattern-only simulation).
pub fn analyze_counts(
    counts: &CountSummary,
    params: Option<&ExperimentParams>,
    opts: &AnalysisOptions,
) -> Result<CorrelationReport> {
    let alpha = resolve_alpha(opts, params)?;
    report_from_counts(counts, alpha, settings_for(opts, alpha, params.copied()))
}

pub const MIN_BOOTSTRAP_RESAMPLES: usize = 100;
const BOOTSTRAP_BLOCKS: u64 = 256;
const BOOTSTRAP_PURPOSE: u64 = 0xB007;

fn percentile_sigma(mut xs: Vec<f64>) -> Option<f64> {
    if xs.len() < 2 {
        return None;
    }
    xs.sort_by(f64::total_cmp);
    let q = |f: f64| {
        let pos = f * (xs.len() - 1) as f64;
        let i = pos.floor() as usize;
        let frac = pos - i as f64;
        if i + 1 < xs.len() {
            xs[i] * (1.0 - frac) + xs[i + 1] * frac
        } else {
            xs[i]
        }
    };
    Some(0.5 * (q(0.841_344_746) - q(0.158_655_254)))
}

/// Same values as [`analyze`], with sigmas from a block bootstrap over trials
/// (256 contiguous blocks, percentile half-width of the central 68.3%).
/// A degenerate (zero-width) bootstrap spread keeps the Poisson sigma.
pub fn bootstrap_errors(
    log: &EventLog,
    n_resamples: usize,
    seed: u64,
    opts: &AnalysisOptions,
) -> Result<CorrelationReport> {
    if n_resamples < MIN_BOOTSTRAP_RESAMPLES {
        return Err(Error::Input(format!(
            "bootstrap needs at least {MIN_BOOTSTRAP_RESAMPLES} resamples, got {n_resamples}"
        )));
    }
    let patterns = log_patterns(log)?;
    let m = log.meta.n_trials;
    let n_blocks = BOOTSTRAP_BLOCKS.min(m);
    let block_len = m.div_ceil(n_blocks);
    let blocks: Vec<CountSummary> = (0..n_blocks)
        .map(|b| {
            let start = (b * block_len).min(m);
            let end = ((b + 1) * block_len).min(m);
            CountSummary::from_patterns_range(m, &patterns, &opts.cross_offsets, start..end)
        })
        .collect();

    let mut report = analyze(log, opts)?;
    let alpha = (report.settings.alpha1, report.settings.alpha2);
    let stream_seed = StreamRng::derive_seed(seed, BOOTSTRAP_PURPOSE);
    let replicas: Vec<CorrelationReport> = (0..n_resamples as u64)
        .filter_map(|r| {
            let mut rng = StreamRng::new(stream_seed, r);
            let mut total = CountSummary::default();
            for _ in 0..n_blocks {
                total.add(&blocks[rng.below(n_blocks) as usize]);
            }
            report_from_counts(&total, alpha, report.settings.clone()).ok()
        })
        .collect();

    let sigma_of = |get: &dyn Fn(&CorrelationReport) -> Estimate| {
        percentile_sigma(replicas.iter().filter_map(|r| get(r).value).collect())
    };
    macro_rules! resample {
        ($($field:ident),*) => {
            $(
                if report.$field.defined {
                    if let Some(s) = sigma_of(&|r: &CorrelationReport| r.$field).filter(|&s| s > 0.0) {
                        report.$field.sigma = Some(s);
                    }
                }
            )*
        };
    }
    resample!(p1, p2, p11, p22, p12, p3, q1, q2, q11, q22, q12, g11, g22, g12, r, w_same, w_approximant);
    for i in 0..report.w_cross.len() {
        if report.w_cross[i].estimate.defined {
            if let Some(s) = sigma_of(&|r: &CorrelationReport| r.w_cross[i].estimate).filter(|&s| s > 0.0) {
                report.w_cross[i].estimate.sigma = Some(s);
            }
        }
    }
    report.settings.error_method = "bootstrap".into();
    report.settings.bootstrap_resamples = Some(n_resamples);
    report.settings.bootstrap_seed = Some(seed);
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{DetectionEvent, Detector, LogMetadata};

    fn handcrafted(duplicate: bool) -> EventLog {
        let ev = |trial: u64, detector: Detector, dt: u64| DetectionEvent {
            trial_index: trial,
            detector,
            t_ns: trial * 4000 + dt,
        };
        let mut events = vec![
            ev(0, Detector::D1A, 10),
            ev(0, Detector::D2A, 40),
            ev(1, Detector::D1B, 12),
            ev(1, Detector::D2A, 50),
            ev(1, Detector::D2B, 60),
        ];
        if duplicate {
            events.insert(1, ev(0, Detector::D1A, 20));
            events.push(ev(1, Detector::D2B, 62));
        }
        EventLog {
            meta: LogMetadata {
                params: ExperimentParams::reference(0.05),
                seed: None,
                n_trials: 5,
            },
            events,
        }
    }

    #[test]
    fn five_trial_counts() {
        let c = accumulate_counts(&handcrafted(false), &[1]).unwrap();
        assert_eq!((c.n1a, c.n1b, c.n2a, c.n2b), (1, 1, 2, 1));
        assert_eq!(c.n_1a1b, 0);
        assert_eq!(c.n12(), 3);
        assert_eq!(c.n_triple, 1);
        assert_eq!(c.n_herald, 2);
        assert_eq!((c.n_herald_2a, c.n_herald_2b), (2, 1));
        let x = c.cross_for(1).unwrap();
        assert_eq!(x.pairs, 4);
        // trial 0 herald -> trial 1 has 2A and 2B; trial 1 herald -> trial 2 empty
        assert_eq!((x.herald, x.herald_2a, x.herald_2b, x.triple), (2, 1, 1, 1));
        assert_eq!(x.n12, 2);
    }

    #[test]
    fn duplicates_collapse() {
        let a = accumulate_counts(&handcrafted(false), &[1, 2]).unwrap();
        let b = accumulate_counts(&handcrafted(true), &[1, 2]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn empty_log_counts_zero() {
        let mut log = handcrafted(false);
        log.events.clear();
        let c = accumulate_counts(&log, &[1]).unwrap();
        assert_eq!(c, CountSummary { m_tot: 5, cross: c.cross.clone(), ..Default::default() });
        let p = estimate_probabilities(&c).unwrap();
        assert_eq!(p.p1.value, Some(0.0));
        assert_eq!(p.p12.value, Some(0.0));
        assert!(!estimate_g(&c).g11.defined);
    }

    #[test]
    fn out_of_window_rejected() {
        let mut log = handcrafted(false);
        log.events[1].t_ns = 250;
        let err = accumulate_counts(&log, &[]).unwrap_err();
        assert!(matches!(err, Error::Integrity(_)), "{err}");
    }

    #[test]
    fn five_trial_probabilities() {
        let c = accumulate_counts(&handcrafted(false), &[]).unwrap();
        let p = estimate_probabilities(&c).unwrap();
        assert!((p.p1.value.unwrap() - 0.4).abs() < 1e-15);
        assert!((p.p2.value.unwrap() - 0.6).abs() < 1e-15);
        assert!((p.p12.value.unwrap() - 0.6).abs() < 1e-15);
        assert!((p.p3.value.unwrap() - 0.2).abs() < 1e-15);
        assert!(estimate_probabilities(&CountSummary::default()).is_err());
    }

    #[test]
    fn five_trial_w() {
        // Herald in trials 0 and 1; 2A follows both heralds, 2B one, triple one:
        // w = (2/5)(1/5) / ((2/5)(1/5)) = 1.
        let c = accumulate_counts(&handcrafted(false), &[]).unwrap();
        let w = estimate_w_same_trial(&c);
        assert!((w.value.unwrap() - 1.0).abs() < 1e-15);
        let rel = (1.0 / 2.0 + 1.0 / 1.0 + 1.0 / 2.0 + 1.0 / 1.0f64).sqrt();
        assert!((w.sigma.unwrap() - rel).abs() < 1e-15);
    }

    #[test]
    fn r_from_g_set() {
        let g = GSet {
            g11: Estimate::new(2.0, 0.1),
            g22: Estimate::new(2.0, 0.1),
            g12: Estimate::new(101.0, 1.0),
        };
        let r = estimate_r(&g);
        assert!((r.value.unwrap() - 2550.25).abs() < 1e-9);
        let rel = ((2.0 / 101.0f64).powi(2) + 2.0 * 0.05f64.powi(2)).sqrt();
        assert!((r.sigma.unwrap() / 2550.25 - rel).abs() < 1e-12);
        let g0 = GSet { g11: Estimate::new(0.0, 0.1), ..g };
        assert!(!estimate_r(&g0).defined);
    }

    #[test]
    fn zero_pair_count_gives_one_count_sigma() {
        let c = CountSummary {
            m_tot: 1000,
            n1a: 10,
            n1b: 20,
            ..Default::default()
        };
        let g = estimate_g(&c).g11;
        assert_eq!(g.value, Some(0.0));
        let one = 1000.0 * 1.0 / (10.0 * 20.0);
        let expect = one * (1.0 + 0.1 + 0.05f64).sqrt();
        assert!((g.sigma.unwrap() - expect).abs() < 1e-12);
    }

    #[test]
    fn q_conversion() {
        let c = accumulate_counts(&handcrafted(false), &[]).unwrap();
        let p = estimate_probabilities(&c).unwrap();
        let q = to_q(&p, 1.0, 1.0).unwrap();
        assert_eq!(q.q1, p.p1);
        assert_eq!(q.q12, p.p12);
        assert!(to_q(&p, 0.0, 1.0).is_err());
        assert!(to_q(&p, 0.5, 1.5).is_err());

        let mut p = p;
        p.p1 = Estimate::new(0.0013, 1e-5);
        let alpha = 0.013 / 0.15;
        let q = to_q(&p, alpha, alpha).unwrap();
        assert!((q.q1.value.unwrap() - 0.0150).abs() < 1e-12);
    }

    #[test]
    fn cross_offset_errors() {
        let c = accumulate_counts(&handcrafted(false), &[1]).unwrap();
        assert!(estimate_w_cross_trial(&c, 0).is_err());
        assert!(estimate_w_cross_trial(&c, 3).is_err());
        let w = estimate_w_cross_trial(&c, 1).unwrap();
        // herald 2, triple 1, 2A 1, 2B 1
        assert!((w.value.unwrap() - 2.0).abs() < 1e-15);
    }

    #[test]
    fn block_counts_sum_to_total() {
        let patterns: Vec<(u64, u8)> = (0..500u64)
            .filter(|i| i % 3 != 0)
            .map(|i| (i, ((i * 7 + 3) % 16) as u8))
            .filter(|&(_, p)| p != 0)
            .collect();
        let offs = [1, 2, 5];
        let full = CountSummary::from_patterns(500, &patterns, &offs);
        let mut sum = CountSummary::default();
        for b in 0..7u64 {
            let r = (b * 72).min(500)..((b + 1) * 72).min(500);
            sum.add(&CountSummary::from_patterns_range(500, &patterns, &offs, r));
        }
        assert_eq!(sum, full);
    }

    #[test]
    fn bootstrap_rejects_few_resamples() {
        let err = bootstrap_errors(&handcrafted(false), 10, 1, &AnalysisOptions::default()).unwrap_err();
        assert!(err.to_string().contains("at least 100"));
    }
}
