//! Command-line front end: `simulate`, `analyze`, `predict`, `fit`, `reproduce`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::fit::{fit, FitOptions, OperatingPoint};
use crate::model::{predict_observables, PredictedObservables};
use crate::oracle::{click_pattern_probabilities, oracle_observables, TruncationSpec};
use crate::params::ExperimentParams;
use crate::rng::StreamRng;
use crate::sim::{generate_event_log, read_event_log_file, write_event_log_file, SimConfig};
use crate::stats::{
    accumulate_counts, analyze, analyze_counts, bootstrap_errors, simulate_counts, AnalysisOptions,
    CorrelationReport, Estimate,
};

#[derive(Debug, Parser)]
#[command(name = "hpl", version, about = "Heralded photon-pair source: simulate, analyze, fit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a time-stamped event log.
    Simulate(SimulateArgs),
    /// Estimate correlations from an event log.
    Analyze(AnalyzeArgs),
    /// Tabulate model observables over a grid of chi.
    Predict(PredictArgs),
    /// Fit noise-model parameters to a set of correlation reports.
    Fit(FitArgs),
    /// Write plot-ready data for one of the standard figures.
    Reproduce(ReproduceArgs),
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ParamArgs {
    /// JSON parameter file; flags below override its fields.
    #[arg(long)]
    pub params: Option<PathBuf>,
    #[arg(long)]
    pub chi: Option<f64>,
    #[arg(long)]
    pub kappa1: Option<f64>,
    #[arg(long)]
    pub kappa2: Option<f64>,
    #[arg(long = "v1b-sq")]
    pub v1b_sq: Option<f64>,
    #[arg(long = "v2b-sq")]
    pub v2b_sq: Option<f64>,
    /// Sets beta1 and beta2.
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub beta1: Option<f64>,
    #[arg(long)]
    pub beta2: Option<f64>,
    /// Sets eta1 and eta2.
    #[arg(long)]
    pub eta: Option<f64>,
    #[arg(long)]
    pub eta1: Option<f64>,
    #[arg(long)]
    pub eta2: Option<f64>,
    /// Delay of the field-2 window.
    #[arg(long = "dt-ns", value_parser = ["0", "150"])]
    pub dt_ns: Option<String>,
    #[arg(long = "window-ns")]
    pub window_ns: Option<u64>,
    #[arg(long = "rep-period-ns")]
    pub rep_period_ns: Option<u64>,
}

impl ParamArgs {
    /// Resolve against the file or the default parameter set. `chi` falls
    /// back to `default_chi` when given nowhere.
    pub fn resolve(&self, default_chi: Option<f64>) -> Result<ExperimentParams> {
        let mut p = match &self.params {
            Some(path) => ExperimentParams::from_json_file(path)?,
            None => {
                let chi = self
                    .chi
                    .or(default_chi)
                    .ok_or_else(|| Error::Input("--chi or --params is required".into()))?;
                ExperimentParams::reference(chi)
            }
        };
        let set = |slot: &mut f64, v: Option<f64>| {
            if let Some(v) = v {
                *slot = v;
            }
        };
        set(&mut p.chi, self.chi);
        set(&mut p.kappa1, self.kappa1);
        set(&mut p.kappa2, self.kappa2);
        set(&mut p.v1b_sq, self.v1b_sq);
        set(&mut p.v2b_sq, self.v2b_sq);
        set(&mut p.beta1, self.beta.or(self.beta1));
        set(&mut p.beta2, self.beta.or(self.beta2));
        set(&mut p.beta1, self.beta1);
        set(&mut p.beta2, self.beta2);
        set(&mut p.eta1, self.eta.or(self.eta1));
        set(&mut p.eta2, self.eta.or(self.eta2));
        set(&mut p.eta1, self.eta1);
        set(&mut p.eta2, self.eta2);
        if let Some(dt) = &self.dt_ns {
            p.dt_ns = dt.parse().map_err(|_| Error::Input(format!("bad --dt-ns {dt}")))?;
        }
        if let Some(w) = self.window_ns {
            p.window_ns = w;
        }
        if let Some(r) = self.rep_period_ns {
            p.rep_period_ns = r;
        }
        p.validate()
    }
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub params: ParamArgs,
    #[arg(long)]
    pub trials: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Block-bootstrap resamples for the error bars (at least 100).
    #[arg(long)]
    pub bootstrap: Option<usize>,
    #[arg(long = "bootstrap-seed", default_value_t = 0)]
    pub bootstrap_seed: u64,
    /// Cross-trial offsets for w; repeatable. Defaults to 1.
    #[arg(long = "cross-offset")]
    pub cross_offset: Vec<u64>,
    /// Efficiency ratio as `a1,a2` or one value for both; defaults to
    /// beta/eta from the log header.
    #[arg(long)]
    pub alpha: Option<String>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[command(flatten)]
    pub params: ParamArgs,
    /// Comma list (`0,0.01,0.1`), `lin:START:STOP:N` or `log:START:STOP:N`.
    #[arg(long = "chi-grid")]
    pub chi_grid: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// JSON array of correlation reports.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value_t = 12)]
    pub restarts: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReproduceArgs {
    #[arg(long)]
    pub figure: u32,
    #[arg(long = "out-dir")]
    pub out_dir: PathBuf,
    /// Trials per simulated point; without it only model curves are written.
    #[arg(long)]
    pub trials: Option<u64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: String,
    pub parameters: serde_json::Value,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub seed: Option<u64>,
    pub wall_time_s: f64,
}

impl RunManifest {
    fn new(command: &str, parameters: serde_json::Value, seed: Option<u64>) -> Self {
        Self {
            command: command.into(),
            tool_version: env!("CARGO_PKG_VERSION").into(),
            parameters,
            inputs: Vec::new(),
            outputs: Vec::new(),
            seed,
            wall_time_s: 0.0,
        }
    }

    fn write(mut self, path: &Path, started: Instant) -> Result<()> {
        self.wall_time_s = started.elapsed().as_secs_f64();
        fs::write(path, serde_json::to_string_pretty(&self)? + "\n")?;
        Ok(())
    }
}

/// Path of the manifest that sits beside `output`.
pub fn manifest_path(output: &Path) -> PathBuf {
    let mut s = output.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}

fn path_str(p: &Path) -> String {
    p.display().to_string()
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate(a) => cmd_simulate(&a),
        Command::Analyze(a) => cmd_analyze(&a),
        Command::Predict(a) => cmd_predict(&a),
        Command::Fit(a) => cmd_fit(&a),
        Command::Reproduce(a) => cmd_reproduce(&a),
    }
}

pub fn cmd_simulate(a: &SimulateArgs) -> Result<()> {
    let started = Instant::now();
    let params = a.params.resolve(None)?;
    let config = SimConfig {
        seed: a.seed,
        n_trials: a.trials,
        params,
    };
    let log = generate_event_log(&config)?;
    write_event_log_file(&log, &a.out)?;
    let back = read_event_log_file(&a.out)?;
    if back.events.len() != log.events.len() || back.meta != log.meta {
        return Err(Error::Integrity(format!("{} did not read back intact", a.out.display())));
    }
    let c = accumulate_counts(&log, &[])?;
    println!(
        "trials {}  events {}\nsingles 1A {} 1B {} 2A {} 2B {}\ncoincidences 1A1B {} 2A2B {} 1-2 {}  triples {}",
        c.m_tot,
        log.events.len(),
        c.n1a,
        c.n1b,
        c.n2a,
        c.n2b,
        c.n_1a1b,
        c.n_2a2b,
        c.n12(),
        c.n_triple
    );
    let mut m = RunManifest::new("simulate", serde_json::to_value(config)?, Some(a.seed));
    m.outputs.push(path_str(&a.out));
    m.write(&manifest_path(&a.out), started)
}

fn parse_alpha(s: &str) -> Result<(f64, f64)> {
    let vals: Vec<f64> = s
        .split(',')
        .map(|t| t.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::Input(format!("bad --alpha `{s}`")))?;
    match vals[..] {
        [a] => Ok((a, a)),
        [a, b] => Ok((a, b)),
        _ => Err(Error::Input(format!("bad --alpha `{s}`"))),
    }
}

pub fn cmd_analyze(a: &AnalyzeArgs) -> Result<()> {
    let started = Instant::now();
    let log = read_event_log_file(&a.input)?;
    let opts = AnalysisOptions {
        cross_offsets: if a.cross_offset.is_empty() { vec![1] } else { a.cross_offset.clone() },
        alpha: a.alpha.as_deref().map(parse_alpha).transpose()?,
    };
    if opts.cross_offsets.contains(&0) {
        return Err(Error::Input("--cross-offset must be at least 1".into()));
    }
    let report = match a.bootstrap {
        Some(n) => bootstrap_errors(&log, n, a.bootstrap_seed, &opts)?,
        None => analyze(&log, &opts)?,
    };
    let json = report.to_json()? + "\n";
    fs::write(&a.out, &json)?;
    serde_json::from_str::<CorrelationReport>(&fs::read_to_string(&a.out)?)?;
    println!("{}", report_line(&report));
    let mut m = RunManifest::new(
        "analyze",
        serde_json::json!({
            "cross_offsets": opts.cross_offsets,
            "alpha": opts.alpha,
            "bootstrap": a.bootstrap,
            "bootstrap_seed": a.bootstrap.map(|_| a.bootstrap_seed),
        }),
        log.meta.seed,
    );
    m.inputs.push(path_str(&a.input));
    m.outputs.push(path_str(&a.out));
    m.write(&manifest_path(&a.out), started)
}

fn show(e: &Estimate) -> String {
    match e.pair() {
        Some((v, s)) => format!("{v:.4} ± {s:.4}"),
        None => "undefined".into(),
    }
}

fn report_line(r: &CorrelationReport) -> String {
    format!(
        "g11 {}  g22 {}  g12 {}  R {}  w {}",
        show(&r.g11),
        show(&r.g22),
        show(&r.g12),
        show(&r.r),
        show(&r.w_same)
    )
}

/// Parse a grid spec; see [`PredictArgs::chi_grid`].
pub fn parse_chi_grid(spec: &str) -> Result<Vec<f64>> {
    let bad = || Error::Input(format!("bad chi grid `{spec}`"));
    let num = |s: &str| s.trim().parse::<f64>().map_err(|_| bad());
    let grid = if let Some(rest) = spec.strip_prefix("lin:").or_else(|| spec.strip_prefix("log:")) {
        let parts: Vec<&str> = rest.split(':').collect();
        let [a, b, n] = parts[..] else { return Err(bad()) };
        let (a, b) = (num(a)?, num(b)?);
        let n: usize = n.trim().parse().map_err(|_| bad())?;
        if n < 2 {
            return Err(bad());
        }
        let t = |i: usize| i as f64 / (n - 1) as f64;
        if spec.starts_with("lin:") {
            (0..n).map(|i| a + (b - a) * t(i)).collect()
        } else {
            if a <= 0.0 || b <= 0.0 {
                return Err(Error::Input("log grid needs positive bounds".into()));
            }
            (0..n).map(|i| (a.ln() + (b.ln() - a.ln()) * t(i)).exp()).collect()
        }
    } else {
        spec.split(',').map(num).collect::<Result<Vec<f64>>>()?
    };
    if grid.is_empty() {
        return Err(bad());
    }
    Ok(grid)
}

fn cell(v: Option<f64>) -> String {
    match v.filter(|x| x.is_finite()) {
        None => String::new(),
        Some(x) if x == 0.0 || (1e-4..1e6).contains(&x.abs()) => format!("{x}"),
        Some(x) => format!("{x:e}"),
    }
}

const OBS_COLUMNS: [&str; 18] = [
    "p1", "p2", "p11", "p22", "p12", "p2fold", "p3", "q1", "q2", "q11", "q22", "q12", "g11", "g22", "g12", "R", "w",
    "w_approx",
];

fn obs_cells(o: &PredictedObservables) -> [Option<f64>; 18] {
    [
        Some(o.p1),
        Some(o.p2),
        Some(o.p11),
        Some(o.p22),
        Some(o.p12),
        Some(o.p2fold),
        Some(o.p3),
        Some(o.q1),
        Some(o.q2),
        Some(o.q11),
        Some(o.q22),
        Some(o.q12),
        o.g11,
        o.g22,
        o.g12,
        o.r,
        o.w,
        o.w_approximant(),
    ]
}

fn oracle_at(params: &ExperimentParams) -> Result<PredictedObservables> {
    Ok(oracle_observables(&click_pattern_probabilities(
        params,
        TruncationSpec::default(),
    )?))
}

/// CSV of linearized and exact-click observables along `grid`.
pub fn predict_table(params: &ExperimentParams, grid: &[f64]) -> Result<String> {
    let mut out = String::from("chi");
    for prefix in ["lin", "oracle"] {
        for c in OBS_COLUMNS {
            write!(out, ",{prefix}_{c}").unwrap();
        }
    }
    out.push('\n');
    for &chi in grid {
        let p = params.with_chi(chi).validate()?;
        let lin = obs_cells(&predict_observables(&p));
        let ora = obs_cells(&oracle_at(&p)?);
        out += &format!("{chi}");
        for v in lin.iter().chain(&ora) {
            out.push(',');
            out += &cell(*v);
        }
        out.push('\n');
    }
    Ok(out)
}

pub fn cmd_predict(a: &PredictArgs) -> Result<()> {
    let started = Instant::now();
    let grid = parse_chi_grid(&a.chi_grid)?;
    let params = a.params.resolve(Some(grid[0]))?;
    fs::write(&a.out, predict_table(&params, &grid)?)?;
    let mut m = RunManifest::new(
        "predict",
        serde_json::json!({ "params": params, "chi_grid": grid }),
        None,
    );
    if let Some(p) = &a.params.params {
        m.inputs.push(path_str(p));
    }
    m.outputs.push(path_str(&a.out));
    m.write(&manifest_path(&a.out), started)
}

pub fn cmd_fit(a: &FitArgs) -> Result<()> {
    let started = Instant::now();
    let text = fs::read_to_string(&a.data)?;
    let points: Vec<OperatingPoint> = serde_json::from_str(&text)?;
    let opts = FitOptions {
        seed: a.seed,
        restarts: a.restarts,
        ..Default::default()
    };
    let result = fit(&points, &opts)?;
    print!("{}", result.summary());
    let out = a.out.clone().unwrap_or_else(|| {
        let mut p = a.data.clone().into_os_string();
        p.push(".fit.json");
        PathBuf::from(p)
    });
    fs::write(&out, result.to_json()? + "\n")?;
    let mut m = RunManifest::new(
        "fit",
        serde_json::json!({ "restarts": a.restarts, "points": points.len() }),
        Some(a.seed),
    );
    m.inputs.push(path_str(&a.data));
    m.outputs.push(path_str(&out));
    m.write(&manifest_path(&out), started)
}

/// Excitation probabilities of the simulated figure points.
pub const FIGURE_POINT_CHI: [f64; 8] = [0.01, 0.015, 0.02, 0.03, 0.05, 0.08, 0.12, 0.2];

/// Model-curve grid: 60 log-spaced values of chi in [0.002, 0.5].
pub fn figure_curve_chi() -> Vec<f64> {
    parse_chi_grid("log:0.002:0.5:60").expect("static grid")
}

const SIM_PURPOSE: u64 = 0xF16;

fn value_sigma(cols: &mut Vec<String>, e: &Estimate) {
    cols.push(cell(e.value));
    cols.push(cell(e.sigma));
}

fn table(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut s = header.join(",");
    s.push('\n');
    for r in rows {
        s += &r.join(",");
        s.push('\n');
    }
    s
}

/// Model curves for a figure as CSV text.
pub fn figure_model_csv(figure: u32) -> Result<String> {
    let base = ExperimentParams::reference(0.01);
    let mut rows = Vec::new();
    let header: Vec<&str> = match figure {
        2 => vec![
            "chi", "p1", "p2", "g11", "g22", "g12", "q1", "q2", "q11", "q22", "q12",
        ],
        3 => vec!["chi", "g12", "R", "oracle_g12", "oracle_R"],
        4 => vec![
            "chi",
            "g12",
            "w",
            "w_approx",
            "g22",
            "oracle_g12",
            "oracle_w",
            "oracle_w_approx",
            "oracle_g22",
        ],
        f => return Err(Error::Input(format!("unknown figure {f} (expected 2, 3 or 4)"))),
    };
    for chi in figure_curve_chi() {
        let p = base.with_chi(chi).validate()?;
        let lin = predict_observables(&p);
        let row: Vec<Option<f64>> = match figure {
            2 => vec![
                Some(chi),
                Some(lin.p1),
                Some(lin.p2),
                lin.g11,
                lin.g22,
                lin.g12,
                Some(lin.q1),
                Some(lin.q2),
                Some(lin.q11),
                Some(lin.q22),
                Some(lin.q12),
            ],
            3 => {
                let o = oracle_at(&p)?;
                vec![Some(chi), lin.g12, lin.r, o.g12, o.r]
            }
            _ => {
                let o = oracle_at(&p)?;
                vec![
                    Some(chi),
                    lin.g12,
                    lin.w,
                    lin.w_approximant(),
                    lin.g22,
                    o.g12,
                    o.w,
                    o.w_approximant(),
                    o.g22,
                ]
            }
        };
        rows.push(row.into_iter().map(cell).collect());
    }
    Ok(table(&header, &rows))
}

/// Reports for the simulated figure points, one per [`FIGURE_POINT_CHI`].
pub fn figure_point_reports(trials: u64, seed: u64) -> Result<Vec<CorrelationReport>> {
    let stream = StreamRng::derive_seed(seed, SIM_PURPOSE);
    FIGURE_POINT_CHI
        .iter()
        .enumerate()
        .map(|(i, &chi)| {
            let params = ExperimentParams::reference(chi);
            let config = SimConfig {
                seed: StreamRng::new(stream, i as u64).next_u64(),
                n_trials: trials,
                params,
            };
            let counts = simulate_counts(&config, &[1])?;
            analyze_counts(&counts, Some(&params), &AnalysisOptions::default())
        })
        .collect()
}

/// Simulated points for a figure as CSV text.
pub fn figure_points_csv(figure: u32, reports: &[CorrelationReport]) -> Result<String> {
    let header: Vec<&str> = match figure {
        2 => vec![
            "chi", "p1", "p1_sigma", "p2", "p2_sigma", "g11", "g11_sigma", "g22", "g22_sigma", "g12", "g12_sigma",
            "q1", "q1_sigma", "q2", "q2_sigma", "q11", "q11_sigma", "q22", "q22_sigma", "q12", "q12_sigma",
        ],
        3 => vec!["chi", "g12", "g12_sigma", "R", "R_sigma"],
        4 => vec![
            "chi",
            "g12",
            "g12_sigma",
            "w_same",
            "w_same_sigma",
            "w_cross",
            "w_cross_sigma",
            "w_approx",
            "w_approx_sigma",
        ],
        f => return Err(Error::Input(format!("unknown figure {f} (expected 2, 3 or 4)"))),
    };
    let rows: Vec<Vec<String>> = reports
        .iter()
        .zip(FIGURE_POINT_CHI)
        .map(|(r, chi)| {
            let mut c = vec![cell(Some(chi))];
            let fields: Vec<Estimate> = match figure {
                2 => vec![r.p1, r.p2, r.g11, r.g22, r.g12, r.q1, r.q2, r.q11, r.q22, r.q12],
                3 => vec![r.g12, r.r],
                _ => vec![
                    r.g12,
                    r.w_same,
                    r.w_cross_at(1).unwrap_or(Estimate::undefined()),
                    r.w_approximant,
                ],
            };
            for e in &fields {
                value_sigma(&mut c, e);
            }
            c
        })
        .collect();
    Ok(table(&header, &rows))
}

pub fn cmd_reproduce(a: &ReproduceArgs) -> Result<()> {
    let started = Instant::now();
    let model = figure_model_csv(a.figure)?;
    fs::create_dir_all(&a.out_dir)?;
    let mut m = RunManifest::new(
        "reproduce",
        serde_json::json!({
            "figure": a.figure,
            "trials": a.trials,
            "params": ExperimentParams::reference(0.01),
            "curve_chi": figure_curve_chi(),
            "point_chi": a.trials.map(|_| FIGURE_POINT_CHI),
        }),
        a.trials.map(|_| a.seed),
    );
    let model_path = a.out_dir.join(format!("fig{}_model.csv", a.figure));
    fs::write(&model_path, model)?;
    m.outputs.push(path_str(&model_path));
    if let Some(trials) = a.trials {
        let reports = figure_point_reports(trials, a.seed)?;
        let points_path = a.out_dir.join(format!("fig{}_points.csv", a.figure));
        fs::write(&points_path, figure_points_csv(a.figure, &reports)?)?;
        m.outputs.push(path_str(&points_path));
    }
    for o in &m.outputs {
        println!("wrote {o}");
    }
    m.write(&a.out_dir.join("manifest.json"), started)
}
