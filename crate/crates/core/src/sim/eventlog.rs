//! Event-log CSV: `# key=value` header lines, the column line
//! `trial,detector,t_ns`, then one row per detection event.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use super::{DetectionEvent, Detector, EventLog, LogMetadata};
use crate::error::{Error, Result};
use crate::params::{ExperimentParams, TIME_RESOLUTION_NS};

pub const FORMAT_VERSION: u32 = 1;
const COLUMNS: &str = "trial,detector,t_ns";

const FLOAT_KEYS: [&str; 9] = [
    "chi", "kappa1", "kappa2", "v1b_sq", "v2b_sq", "beta1", "beta2", "eta1", "eta2",
];

pub fn write_event_log<W: Write>(log: &EventLog, out: W) -> Result<()> {
    let mut w = BufWriter::new(out);
    let p = &log.meta.params;
    writeln!(w, "# format_version={FORMAT_VERSION}")?;
    let floats = [
        p.chi, p.kappa1, p.kappa2, p.v1b_sq, p.v2b_sq, p.beta1, p.beta2, p.eta1, p.eta2,
    ];
    for (key, value) in FLOAT_KEYS.iter().zip(floats) {
        writeln!(w, "# {key}={value}")?;
    }
    writeln!(w, "# dt_ns={}", p.dt_ns)?;
    writeln!(w, "# window_ns={}", p.window_ns)?;
    writeln!(w, "# rep_period_ns={}", p.rep_period_ns)?;
    if let Some(seed) = log.meta.seed {
        writeln!(w, "# seed={seed}")?;
    }
    writeln!(w, "# n_trials={}", log.meta.n_trials)?;
    writeln!(w, "{COLUMNS}")?;
    for e in &log.events {
        writeln!(w, "{},{},{}", e.trial_index, e.detector.token(), e.t_ns)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_event_log_file(log: &EventLog, path: &Path) -> Result<()> {
    write_event_log(log, File::create(path)?)
}

pub fn read_event_log_file(path: &Path) -> Result<EventLog> {
    read_event_log(BufReader::new(File::open(path)?))
}

fn parse_err(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        line,
        msg: msg.into(),
    }
}

#[derive(Default)]
struct Header {
    version: Option<u32>,
    floats: [Option<f64>; 9],
    dt_ns: Option<u64>,
    window_ns: Option<u64>,
    rep_period_ns: Option<u64>,
    seed: Option<u64>,
    n_trials: Option<u64>,
}

impl Header {
    fn set(&mut self, line: usize, key: &str, value: &str) -> Result<()> {
        let int = |v: &str| {
            v.parse::<u64>()
                .map_err(|_| parse_err(line, format!("`{key}` is not an unsigned integer: {v}")))
        };
        let slot = match key {
            "format_version" => {
                let v: u32 = value
                    .parse()
                    .map_err(|_| parse_err(line, format!("bad format_version `{value}`")))?;
                if v != FORMAT_VERSION {
                    return Err(parse_err(line, format!("unsupported format_version {v}")));
                }
                self.version = Some(v);
                return Ok(());
            }
            "dt_ns" => &mut self.dt_ns,
            "window_ns" => &mut self.window_ns,
            "rep_period_ns" => &mut self.rep_period_ns,
            "seed" => &mut self.seed,
            "n_trials" => &mut self.n_trials,
            _ => {
                let idx = FLOAT_KEYS
                    .iter()
                    .position(|k| *k == key)
                    .ok_or_else(|| parse_err(line, format!("unknown header key `{key}`")))?;
                let v: f64 = value
                    .parse()
                    .map_err(|_| parse_err(line, format!("`{key}` is not a number: {value}")))?;
                self.floats[idx] = Some(v);
                return Ok(());
            }
        };
        *slot = Some(int(value)?);
        Ok(())
    }

    fn finish(self, line: usize) -> Result<LogMetadata> {
        let missing = |k: &str| parse_err(line, format!("header is missing `{k}`"));
        self.version.ok_or_else(|| missing("format_version"))?;
        let mut f = [0.0; 9];
        for (i, v) in self.floats.iter().enumerate() {
            f[i] = v.ok_or_else(|| missing(FLOAT_KEYS[i]))?;
        }
        let params = ExperimentParams {
            chi: f[0],
            kappa1: f[1],
            kappa2: f[2],
            v1b_sq: f[3],
            v2b_sq: f[4],
            beta1: f[5],
            beta2: f[6],
            eta1: f[7],
            eta2: f[8],
            dt_ns: self.dt_ns.ok_or_else(|| missing("dt_ns"))?,
            window_ns: self.window_ns.ok_or_else(|| missing("window_ns"))?,
            rep_period_ns: self.rep_period_ns.ok_or_else(|| missing("rep_period_ns"))?,
        }
        .validate()
        .map_err(|e| parse_err(line, format!("header parameters: {e}")))?;
        let n_trials = self.n_trials.ok_or_else(|| missing("n_trials"))?;
        if n_trials == 0 {
            return Err(parse_err(line, "n_trials must be at least 1"));
        }
        Ok(LogMetadata {
            params,
            seed: self.seed,
            n_trials,
        })
    }
}

pub fn read_event_log<R: BufRead>(input: R) -> Result<EventLog> {
    let mut header = Header::default();
    let mut meta: Option<LogMetadata> = None;
    let mut events = Vec::new();
    let mut last_line = 0;
    for (idx, line) in input.lines().enumerate() {
        let lineno = idx + 1;
        last_line = lineno;
        let line = line?;
        let line = line.trim_end_matches('\r');
        let Some(m) = meta.as_ref() else {
            if let Some(kv) = line.strip_prefix("# ") {
                let (k, v) = kv
                    .split_once('=')
                    .ok_or_else(|| parse_err(lineno, "header line is not key=value"))?;
                header.set(lineno, k.trim(), v.trim())?;
            } else if line == COLUMNS {
                meta = Some(std::mem::take(&mut header).finish(lineno)?);
            } else {
                return Err(parse_err(lineno, format!("expected header or `{COLUMNS}`")));
            }
            continue;
        };
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split(',');
        let (Some(t), Some(d), Some(ts), None) = (parts.next(), parts.next(), parts.next(), parts.next())
        else {
            return Err(parse_err(lineno, "expected 3 columns"));
        };
        let trial_index: u64 = t
            .parse()
            .map_err(|_| parse_err(lineno, format!("bad trial index `{t}`")))?;
        let detector = Detector::from_token(d)
            .ok_or_else(|| parse_err(lineno, format!("unknown detector `{d}`")))?;
        let t_ns: u64 = ts
            .parse()
            .map_err(|_| parse_err(lineno, format!("bad timestamp `{ts}`")))?;
        if !t_ns.is_multiple_of(TIME_RESOLUTION_NS) {
            return Err(parse_err(
                lineno,
                format!("timestamp {t_ns} is not a multiple of {TIME_RESOLUTION_NS} ns"),
            ));
        }
        if trial_index >= m.n_trials {
            return Err(parse_err(
                lineno,
                format!("trial {trial_index} beyond n_trials={}", m.n_trials),
            ));
        }
        let event = DetectionEvent {
            trial_index,
            detector,
            t_ns,
        };
        if let Some(prev) = events.last() {
            let prev: &DetectionEvent = prev;
            if (prev.trial_index, prev.t_ns) > (trial_index, t_ns) {
                return Err(parse_err(lineno, "events not sorted by (trial, t_ns)"));
            }
        }
        events.push(event);
    }
    let meta = meta.ok_or_else(|| parse_err(last_line + 1, format!("missing `{COLUMNS}` line")))?;
    Ok(EventLog { meta, events })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{generate_event_log, SimConfig};

    fn sample_log() -> EventLog {
        let mut params = ExperimentParams::reference(0.2).with_beta(0.1).with_eta(0.3);
        params.dt_ns = 150;
        generate_event_log(&SimConfig {
            seed: 42,
            n_trials: 5_000,
            params,
        })
        .unwrap()
    }

    fn text(log: &EventLog) -> String {
        let mut buf = Vec::new();
        write_event_log(log, &mut buf).unwrap();
        String::from_utf8(buf).unwrap()
    }

    #[test]
    fn round_trip() {
        let log = sample_log();
        assert!(!log.events.is_empty());
        let s = text(&log);
        assert!(s.contains("\ntrial,detector,t_ns\n"));
        let back = read_event_log(s.as_bytes()).unwrap();
        assert_eq!(back, log);
        assert_eq!(text(&back), s);
    }

    fn corrupt(replace_row: &str) -> Error {
        let log = sample_log();
        let s = text(&log);
        let head: String = s
            .lines()
            .take_while(|l| l.starts_with("# ") || *l == COLUMNS)
            .map(|l| format!("{l}\n"))
            .collect();
        read_event_log(format!("{head}{replace_row}\n").as_bytes()).unwrap_err()
    }

    #[test]
    fn odd_timestamp_rejected_with_line_number() {
        let err = corrupt("3,D1A,12003");
        match err {
            Error::Parse { line, msg } => {
                assert_eq!(line, 17);
                assert!(msg.contains("multiple of 2"), "{msg}");
            }
            other => panic!("{other}"),
        }
    }

    #[test]
    fn unknown_detector_rejected() {
        let err = corrupt("3,D3A,12002");
        assert!(err.to_string().contains("unknown detector"), "{err}");
    }

    #[test]
    fn malformed_header_rejected() {
        let err = read_event_log("# format_version=1\n# chi=0.1\ntrial,detector,t_ns\n".as_bytes())
            .unwrap_err();
        assert!(err.to_string().contains("missing"), "{err}");
        let err = read_event_log("# format_version=2\n".as_bytes()).unwrap_err();
        assert!(err.to_string().contains("unsupported"), "{err}");
        let err = read_event_log("hello\n".as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
    }
}
