//! Monte Carlo trial engine.
//!
//! Trial `j` of a run draws all of its randomness from `StreamRng::new(seed, j)`,
//! so any subset of trials can be produced independently and in parallel and
//! still match a serial run event for event. Within a trial the click pattern
//! is drawn first and the timestamps after it, which keeps pattern-only and
//! full event-log generation consistent.

mod eventlog;

use std::ops::Range;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::background_means;
use crate::oracle::{BIT_1A, BIT_1B, BIT_2A, BIT_2B};
use crate::params::{ExperimentParams, TIME_RESOLUTION_NS};
use crate::rng::StreamRng;

pub use eventlog::{read_event_log, read_event_log_file, write_event_log, write_event_log_file};

/// Default cap on trials per run; `HPL_MAX_TRIALS` overrides it.
pub const DEFAULT_MAX_TRIALS: u64 = 1_000_000_000;
const CHUNK: u64 = 1 << 16;

pub fn max_trials() -> u64 {
    std::env::var("HPL_MAX_TRIALS")
        .ok()
        .and_then(|s| s.trim().parse().ok())
        .unwrap_or(DEFAULT_MAX_TRIALS)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Detector {
    D1A,
    D1B,
    D2A,
    D2B,
}

impl Detector {
    pub const ALL: [Detector; 4] = [Detector::D1A, Detector::D1B, Detector::D2A, Detector::D2B];

    pub fn bit(self) -> u8 {
        match self {
            Detector::D1A => BIT_1A,
            Detector::D1B => BIT_1B,
            Detector::D2A => BIT_2A,
            Detector::D2B => BIT_2B,
        }
    }

    pub fn field(self) -> u8 {
        match self {
            Detector::D1A | Detector::D1B => 1,
            Detector::D2A | Detector::D2B => 2,
        }
    }

    pub fn token(self) -> &'static str {
        match self {
            Detector::D1A => "D1A",
            Detector::D1B => "D1B",
            Detector::D2A => "D2A",
            Detector::D2B => "D2B",
        }
    }

    pub fn from_token(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|d| d.token() == s)
    }
}

/// One binary click pattern; bits as in [`crate::oracle`].
pub type ClickPattern = u8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DetectionEvent {
    pub trial_index: u64,
    pub detector: Detector,
    pub t_ns: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub seed: u64,
    pub n_trials: u64,
    pub params: ExperimentParams,
}

/// Run description carried in the log header.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogMetadata {
    pub params: ExperimentParams,
    /// Absent for externally acquired logs.
    pub seed: Option<u64>,
    pub n_trials: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EventLog {
    pub meta: LogMetadata,
    pub events: Vec<DetectionEvent>,
}

impl EventLog {
    pub fn field1_window_start(&self, trial: u64) -> u64 {
        trial * self.meta.params.rep_period_ns
    }

    pub fn field2_window_start(&self, trial: u64) -> u64 {
        self.field1_window_start(trial) + self.meta.params.dt_ns
    }
}

/// Per-parameter-set constants for drawing trials.
#[derive(Debug, Clone, Copy)]
pub struct TrialSampler {
    chi: f64,
    mu1: f64,
    mu2: f64,
    beta1: f64,
    beta2: f64,
}

impl TrialSampler {
    pub fn new(params: &ExperimentParams) -> Self {
        let (mu1, mu2) = background_means(params);
        Self {
            chi: params.chi,
            mu1,
            mu2,
            beta1: params.beta1,
            beta2: params.beta2,
        }
    }

    pub fn sample(&self, rng: &mut StreamRng) -> ClickPattern {
        let pairs = rng.geometric(self.chi);
        self.sample_with_pairs(pairs, rng)
    }

    /// Finish a trial whose signal pair number is already fixed.
    pub fn sample_with_pairs(&self, pairs: u64, rng: &mut StreamRng) -> ClickPattern {
        let n1 = pairs + rng.poisson(self.mu1);
        let n2 = pairs + rng.poisson(self.mu2);
        route(n1, self.beta1, rng) | (route(n2, self.beta2, rng) << 2)
    }
}

/// Thin each photon by `beta` and send survivors to A or B with equal odds.
/// Returns bit 0 for A, bit 1 for B.
fn route(photons: u64, beta: f64, rng: &mut StreamRng) -> u8 {
    if beta == 0.0 {
        return 0;
    }
    let half = 0.5 * beta;
    let mut out = 0u8;
    for _ in 0..photons {
        let u = rng.uniform();
        if u < half {
            out |= 1;
        } else if u < beta {
            out |= 2;
        }
        if out == 3 {
            break;
        }
    }
    out
}

/// Draw one trial's click pattern.
pub fn sample_trial(params: &ExperimentParams, rng: &mut StreamRng) -> ClickPattern {
    TrialSampler::new(params).sample(rng)
}

fn check_config(config: &SimConfig, cap: u64) -> Result<()> {
    config.params.validate()?;
    if config.n_trials == 0 {
        return Err(Error::Input("n_trials must be at least 1".into()));
    }
    if config.n_trials > cap {
        return Err(Error::ResourceCap(format!(
            "{} trials requested, cap is {cap} (HPL_MAX_TRIALS)",
            config.n_trials
        )));
    }
    Ok(())
}

fn chunks(range: Range<u64>) -> Vec<Range<u64>> {
    let mut out = Vec::new();
    let mut start = range.start;
    while start < range.end {
        let end = (start + CHUNK).min(range.end);
        out.push(start..end);
        start = end;
    }
    out
}

/// Trials in `range` with a nonempty click pattern, in trial order.
pub fn simulate_patterns_range(
    config: &SimConfig,
    range: Range<u64>,
) -> Vec<(u64, ClickPattern)> {
    let sampler = TrialSampler::new(&config.params);
    chunks(range)
        .into_par_iter()
        .map(|r| {
            r.filter_map(|j| {
                let mut rng = StreamRng::new(config.seed, j);
                let pattern = sampler.sample(&mut rng);
                (pattern != 0).then_some((j, pattern))
            })
            .collect::<Vec<_>>()
        })
        .collect::<Vec<_>>()
        .concat()
}

/// Sparse click record of a whole run without timestamps.
pub fn simulate_patterns(config: &SimConfig) -> Result<Vec<(u64, ClickPattern)>> {
    check_config(config, max_trials())?;
    Ok(simulate_patterns_range(config, 0..config.n_trials))
}

fn quantized_time(window_start: u64, window_ns: u64, rng: &mut StreamRng) -> u64 {
    let slots = window_ns / TIME_RESOLUTION_NS + 1;
    window_start + TIME_RESOLUTION_NS * rng.below(slots)
}

fn trial_events(
    config: &SimConfig,
    sampler: &TrialSampler,
    j: u64,
    out: &mut Vec<DetectionEvent>,
) {
    let p = &config.params;
    let mut rng = StreamRng::new(config.seed, j);
    let pattern = sampler.sample(&mut rng);
    if pattern == 0 {
        return;
    }
    let start1 = j * p.rep_period_ns;
    let start2 = start1 + p.dt_ns;
    let first = out.len();
    for d in Detector::ALL {
        if pattern & d.bit() != 0 {
            let start = if d.field() == 1 { start1 } else { start2 };
            out.push(DetectionEvent {
                trial_index: j,
                detector: d,
                t_ns: quantized_time(start, p.window_ns, &mut rng),
            });
        }
    }
    out[first..].sort_by_key(|e| (e.t_ns, e.detector));
}

/// Events of trials in `range`; concatenating consecutive ranges reproduces
/// the full-run log.
pub fn generate_events_range(config: &SimConfig, range: Range<u64>) -> Vec<DetectionEvent> {
    let sampler = TrialSampler::new(&config.params);
    chunks(range)
        .into_par_iter()
        .map(|r| {
            let mut v = Vec::new();
            for j in r {
                trial_events(config, &sampler, j, &mut v);
            }
            v
        })
        .collect::<Vec<_>>()
        .concat()
}

/// Full time-stamped log for a run, capped by [`max_trials`].
pub fn generate_event_log(config: &SimConfig) -> Result<EventLog> {
    generate_event_log_capped(config, max_trials())
}

pub fn generate_event_log_capped(config: &SimConfig, cap: u64) -> Result<EventLog> {
    check_config(config, cap)?;
    Ok(EventLog {
        meta: LogMetadata {
            params: config.params,
            seed: Some(config.seed),
            n_trials: config.n_trials,
        },
        events: generate_events_range(config, 0..config.n_trials),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(chi: f64, n: u64) -> SimConfig {
        SimConfig {
            seed: 7,
            n_trials: n,
            params: ExperimentParams::reference(chi),
        }
    }

    #[test]
    fn vacuum_never_clicks() {
        let p = ExperimentParams::ideal(0.0);
        let mut rng = StreamRng::new(1, 0);
        for _ in 0..10_000 {
            assert_eq!(sample_trial(&p, &mut rng), 0);
        }
        let log = generate_event_log(&SimConfig { seed: 1, n_trials: 1, params: p }).unwrap();
        assert!(log.events.is_empty());
    }

    #[test]
    fn single_pair_at_unit_efficiency() {
        let s = TrialSampler::new(&ExperimentParams::ideal(0.5));
        let mut rng = StreamRng::new(3, 0);
        for _ in 0..10_000 {
            let pat = s.sample_with_pairs(1, &mut rng);
            let f1 = pat & 3;
            let f2 = pat >> 2;
            assert!(f1 == 1 || f1 == 2, "{pat:04b}");
            assert!(f2 == 1 || f2 == 2, "{pat:04b}");
        }
    }

    #[test]
    fn rejects_zero_trials_and_cap() {
        assert!(generate_event_log(&config(0.1, 0)).is_err());
        let err = generate_event_log_capped(&config(0.1, 11), 10).unwrap_err();
        assert!(matches!(err, Error::ResourceCap(_)));
    }

    #[test]
    fn windows_and_quantization() {
        let mut c = config(0.2, 20_000);
        c.params = c.params.with_beta(0.5).with_eta(0.5);
        c.params.dt_ns = 150;
        let log = generate_event_log(&c).unwrap();
        assert!(!log.events.is_empty());
        for e in &log.events {
            assert_eq!(e.t_ns % 2, 0);
            let t1 = e.trial_index * 4000;
            let start = if e.detector.field() == 1 { t1 } else { t1 + 150 };
            assert!(e.t_ns >= start && e.t_ns <= start + 200, "{e:?}");
        }
        for w in log.events.windows(2) {
            assert!((w[0].trial_index, w[0].t_ns) <= (w[1].trial_index, w[1].t_ns));
        }
    }

    #[test]
    fn deterministic_and_partition_invariant() {
        let c = config(0.1, 300_000);
        let a = generate_event_log(&c).unwrap();
        let b = generate_event_log(&c).unwrap();
        assert_eq!(a, b);
        let mut split = generate_events_range(&c, 0..123_457);
        split.extend(generate_events_range(&c, 123_457..300_000));
        assert_eq!(split, a.events);

        let pats = simulate_patterns(&c).unwrap();
        let mut from_log: Vec<(u64, u8)> = Vec::new();
        for e in &a.events {
            match from_log.last_mut() {
                Some((t, p)) if *t == e.trial_index => *p |= e.detector.bit(),
                _ => from_log.push((e.trial_index, e.detector.bit())),
            }
        }
        assert_eq!(pats, from_log);
    }

    #[test]
    fn tokens_round_trip() {
        for d in Detector::ALL {
            assert_eq!(Detector::from_token(d.token()), Some(d));
        }
        assert_eq!(Detector::from_token("D3A"), None);
    }
}
