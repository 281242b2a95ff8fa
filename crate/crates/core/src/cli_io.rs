//! File formats and the `epimon` command-line front end.
//!
//! Structured artifacts are JSON with a `format_version` field; episode
//! matrices are CSV, one episode per row. Every output file is written to a
//! temporary sibling and renamed into place.

use std::fs;
use std::io::{self, BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use nalgebra::DMatrix;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::bfar::{bfar_tune, MonitorPlan, TunedMonitor};
use crate::episodic_model::{EpisodeParams, ReferenceDataset};
use crate::error::{Error, Result};
use crate::individual_test::{BootstrapStore, StoreFile};
use crate::monitor::MonitorState;
use crate::synthetic_lab::{
    asymptotic_power, moment_oracle, power_gain, run_blocks, AsymptoticPower, MomentReport, PowerGain, Scenario,
    ScenarioKind,
};

pub const FORMAT_VERSION: u32 = 1;

pub const EXIT_OK: u8 = 0;
pub const EXIT_ERROR: u8 = 2;
pub const EXIT_DETECTION: u8 = 3;

fn check_version(found: u32, what: &str) -> Result<()> {
    if found != FORMAT_VERSION {
        return Err(Error::Config(format!(
            "unsupported {what} format_version {found} (expected {FORMAT_VERSION})"
        )));
    }
    Ok(())
}

/// Estimated H0 parameters on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamsFile {
    pub format_version: u32,
    #[serde(rename = "T")]
    pub t: usize,
    pub d: usize,
    pub mu0: Vec<f64>,
    pub sigma0: Vec<Vec<f64>>,
    #[serde(default)]
    pub regularized: bool,
    #[serde(default)]
    pub lambda: Option<f64>,
}

impl ParamsFile {
    pub fn from_params(p: &EpisodeParams) -> Self {
        let cov = p.cov();
        Self {
            format_version: FORMAT_VERSION,
            t: p.episode_len(),
            d: p.downsample_factor(),
            mu0: p.mean().to_vec(),
            sigma0: (0..cov.nrows()).map(|i| cov.row(i).iter().copied().collect()).collect(),
            regularized: p.ridge().is_some(),
            lambda: p.ridge(),
        }
    }

    pub fn to_params(&self) -> Result<EpisodeParams> {
        check_version(self.format_version, "params")?;
        if self.d == 0 {
            return Err(Error::Config("params: d must be positive".into()));
        }
        if self.mu0.len() != self.t || self.sigma0.len() != self.t || self.sigma0.iter().any(|r| r.len() != self.t) {
            return Err(Error::Config(format!("params: mu0/sigma0 do not match T = {}", self.t)));
        }
        let cov = DMatrix::from_fn(self.t, self.t, |i, j| self.sigma0[i][j]);
        Ok(EpisodeParams::new(self.mu0.clone(), cov)?
            .with_downsample(self.d)
            .with_ridge(self.lambda))
    }
}

/// Monitor plan on disk: the plan plus a version tag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanFile {
    pub format_version: u32,
    #[serde(flatten)]
    pub plan: MonitorPlan,
}

/// Everything `monitor` needs, produced by `tune`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleFile {
    pub format_version: u32,
    pub params: ParamsFile,
    pub plan: MonitorPlan,
    pub p_threshold: f64,
    pub min_p_distribution: Vec<f64>,
    pub store: StoreFile,
}

impl BundleFile {
    pub fn from_tuned(m: &TunedMonitor) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            params: ParamsFile::from_params(&m.params),
            plan: m.plan.clone(),
            p_threshold: m.p_threshold,
            min_p_distribution: m.min_p_distribution.clone(),
            store: m.store.to_file(),
        }
    }

    pub fn to_tuned(&self) -> Result<TunedMonitor> {
        check_version(self.format_version, "bundle")?;
        let params = self.params.to_params()?;
        self.plan.validate(params.episode_len())?;
        let store = BootstrapStore::from_file(self.store.clone())?;
        if !(self.p_threshold > 0.0 && self.p_threshold <= 1.0) {
            return Err(Error::Config(format!("bundle: invalid p_threshold {}", self.p_threshold)));
        }
        Ok(TunedMonitor {
            plan: self.plan.clone(),
            params,
            store,
            p_threshold: self.p_threshold,
            min_p_distribution: self.min_p_distribution.clone(),
        })
    }
}

/// Degradation scenario on disk. `epsilon_sigma` is in units of the mean
/// per-step standard deviation `sqrt(trace / T)` of the base parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioFile {
    pub kind: String,
    #[serde(default)]
    pub epsilon_sigma: f64,
    #[serde(default)]
    pub offsets: Vec<usize>,
    #[serde(rename = "K", default)]
    pub k: Option<usize>,
}

impl ScenarioFile {
    pub fn to_scenario(&self, base: EpisodeParams, seed: u64) -> Result<Scenario> {
        let epsilon = self.epsilon_sigma * base.mean_step_std();
        let kind = match self.kind.as_str() {
            "h0" => ScenarioKind::H0,
            "uniform" => ScenarioKind::Uniform { epsilon },
            "partial" => ScenarioKind::Partial {
                epsilon,
                offsets: self.offsets.clone(),
            },
            "scaled_uniform" => ScenarioKind::ScaledUniform {
                epsilon,
                k: self
                    .k
                    .ok_or_else(|| Error::Config("scaled_uniform scenario needs K".into()))?,
            },
            other => {
                return Err(Error::Config(format!(
                    "unknown scenario kind `{other}` (expected h0, uniform, partial or scaled_uniform)"
                )))
            }
        };
        Scenario::new(base, kind, seed).map_err(|e| Error::Config(e.to_string()))
    }
}

fn io_err(path: &Path, source: io::Error) -> Error {
    Error::Io {
        path: path.display().to_string(),
        source,
    }
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.display().to_string(),
        line: e.line(),
        msg: e.to_string(),
    })
}

pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

/// Writes `bytes` to a temporary file next to `path`, then renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    let name = path
        .file_name()
        .ok_or_else(|| Error::invalid(format!("not a file path: {}", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if let Err(e) = result {
        let _ = fs::remove_file(&tmp);
        return Err(io_err(path, e));
    }
    Ok(())
}

/// Reads a CSV matrix of episodes, one per row. Ragged rows and unparsable
/// fields are reported with their line number.
pub fn read_csv(path: &Path, header: bool) -> Result<Vec<Vec<f64>>> {
    let file = fs::File::open(path).map_err(|e| io_err(path, e))?;
    parse_csv(file, &path.display().to_string(), header)
}

pub fn parse_csv<R: Read>(input: R, name: &str, header: bool) -> Result<Vec<Vec<f64>>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(header)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(input);
    let parse_err = |line: u64, msg: String| Error::Parse {
        path: name.to_string(),
        line: line as usize,
        msg,
    };
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let row = record
            .iter()
            .enumerate()
            .map(|(j, field)| {
                field
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| parse_err(line, format!("column {}: not a finite number: `{field}`", j + 1)))
            })
            .collect::<Result<Vec<f64>>>()?;
        if let Some(first) = rows.first() {
            if row.len() != first.len() {
                return Err(parse_err(
                    line,
                    format!("expected {} columns, found {}", first.len(), row.len()),
                ));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::InsufficientData(format!("{name}: no episodes")));
    }
    Ok(rows)
}

fn format_csv(rows: &[Vec<f64>]) -> String {
    let mut out = String::new();
    for row in rows {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    out
}

fn load_reference(path: &Path, header: bool, t_raw: usize, d: usize) -> Result<ReferenceDataset> {
    if d == 0 || !t_raw.is_multiple_of(d) {
        return Err(Error::invalid(format!(
            "raw episode length {t_raw} is not divisible by downsample factor {d}"
        )));
    }
    let rows = read_csv(path, header)?;
    if rows[0].len() != t_raw {
        return Err(Error::invalid(format!(
            "{}: episodes have {} samples, expected {t_raw}",
            path.display(),
            rows[0].len()
        )));
    }
    ReferenceDataset::from_raw(rows, d)
}

#[derive(Debug, Parser)]
#[command(name = "epimon", version, about = "Degradation monitoring for episodic signals")]
pub struct Cli {
    /// Worker threads for bootstrap and simulation loops. Outputs do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Estimate H0 mean and covariance from reference episodes.
    Estimate(EstimateArgs),
    /// Build bootstrap distributions and calibrate the monitor threshold.
    Tune(TuneArgs),
    /// Run a tuned monitor over a stream, one sample per line.
    Monitor(MonitorArgs),
    /// Run a tuned monitor over simulated blocks of a scenario.
    Simulate(SimulateArgs),
    /// Closed-form power, power gain and optional moment Monte Carlo.
    Power(PowerArgs),
    /// Write synthetic episodes drawn from a scenario as CSV.
    Generate(GenerateArgs),
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    /// CSV of raw reference episodes, one per row.
    #[arg(long)]
    pub reference: PathBuf,
    /// Raw episode length.
    #[arg(long = "t-raw")]
    pub t_raw: usize,
    /// Downsample factor; must divide the raw episode length.
    #[arg(long, short = 'd', default_value_t = 1)]
    pub downsample: usize,
    /// The CSV has a header row.
    #[arg(long)]
    pub header: bool,
    #[arg(long, short = 'o')]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TuneArgs {
    #[arg(long)]
    pub reference: PathBuf,
    #[arg(long)]
    pub header: bool,
    #[arg(long)]
    pub params: PathBuf,
    #[arg(long)]
    pub plan: PathBuf,
    #[arg(long, short = 'o')]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct MonitorArgs {
    #[arg(long)]
    pub bundle: PathBuf,
    /// Raw samples, one per line. Reads standard input when omitted or `-`.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Keep monitoring after a detection (with a fresh warm-up).
    #[arg(long)]
    pub rearm: bool,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub bundle: PathBuf,
    #[arg(long)]
    pub scenario: PathBuf,
    /// Generator parameters; defaults to the bundle's own.
    #[arg(long)]
    pub params: Option<PathBuf>,
    #[arg(long, default_value_t = 100)]
    pub blocks: usize,
    /// Episodes per block after the warm-up.
    #[arg(long)]
    pub episodes: usize,
    #[arg(long)]
    pub seed: u64,
    #[arg(long, short = 'o')]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PowerArgs {
    #[arg(long)]
    pub params: PathBuf,
    #[arg(long)]
    pub scenario: PathBuf,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    /// Monte-Carlo draws for the moment check; skipped when omitted.
    #[arg(long)]
    pub draws: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, short = 'o')]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub params: PathBuf,
    #[arg(long)]
    pub scenario: PathBuf,
    #[arg(long)]
    pub episodes: usize,
    #[arg(long)]
    pub seed: u64,
    /// First row of the scenario stream to emit.
    #[arg(long, default_value_t = 0)]
    pub start: usize,
    #[arg(long, short = 'o')]
    pub out: PathBuf,
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => write_atomic(p, text.as_bytes()),
        None => io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| io_err(Path::new("<stdout>"), e)),
    }
}

pub fn cmd_estimate(args: &EstimateArgs) -> Result<()> {
    let reference = load_reference(&args.reference, args.header, args.t_raw, args.downsample)?;
    let params = EpisodeParams::estimate(&reference)?;
    eprintln!(
        "T = {} (raw {}, d = {}), N = {}, condition number {:.3e}, {}",
        params.episode_len(),
        args.t_raw,
        args.downsample,
        reference.len(),
        params.condition_number(),
        match params.ridge() {
            Some(l) => format!("regularized with lambda = {l:e}"),
            None => "no regularization".into(),
        }
    );
    write_atomic(&args.out, to_json(&ParamsFile::from_params(&params))?.as_bytes())
}

pub fn cmd_tune(args: &TuneArgs) -> Result<()> {
    let params = read_json::<ParamsFile>(&args.params)?.to_params()?;
    let plan_file: PlanFile = read_json(&args.plan)?;
    check_version(plan_file.format_version, "plan")?;
    let plan = plan_file.plan;
    let d = params.downsample_factor();
    plan.validate(params.episode_len())?;
    let reference = load_reference(&args.reference, args.header, params.episode_len() * d, d)?;
    let tuned = bfar_tune(&reference, &params, &plan)?;
    eprintln!(
        "p-value threshold {:e} (resolution {:e}), {} distributions",
        tuned.p_threshold,
        tuned.store.resolution(),
        tuned.store.len()
    );
    write_atomic(&args.out, to_json(&BundleFile::from_tuned(&tuned))?.as_bytes())
}

/// Streams samples through the monitor, writing one JSON event per
/// test-point to `events`. Returns whether any detection happened.
pub fn monitor_stream<R: BufRead, W: Write>(
    tuned: &TunedMonitor,
    input: R,
    name: &str,
    rearm: bool,
    mut events: W,
) -> Result<bool> {
    let mut state = MonitorState::new(tuned);
    let mut any = false;
    for (i, line) in input.lines().enumerate() {
        let line = line.map_err(|e| io_err(Path::new(name), e))?;
        let text = line.trim();
        if text.is_empty() {
            continue;
        }
        let x: f64 = text.parse().ok().filter(|v: &f64| v.is_finite()).ok_or_else(|| Error::Parse {
            path: name.to_string(),
            line: i + 1,
            msg: format!("not a finite number: `{text}`"),
        })?;
        if let Some(point) = state.observe_raw(x)? {
            let json = serde_json::to_string(&point)?;
            writeln!(events, "{json}").map_err(|e| io_err(Path::new("<events>"), e))?;
            if point.fired {
                any = true;
                if !rearm {
                    break;
                }
                state.reset();
            }
        }
    }
    events.flush().map_err(|e| io_err(Path::new("<events>"), e))?;
    Ok(any)
}

pub fn cmd_monitor(args: &MonitorArgs) -> Result<bool> {
    let tuned = read_json::<BundleFile>(&args.bundle)?.to_tuned()?;
    let stdout = io::stdout().lock();
    match args.input.as_deref() {
        Some(p) if p != Path::new("-") => {
            let f = fs::File::open(p).map_err(|e| io_err(p, e))?;
            monitor_stream(&tuned, BufReader::new(f), &p.display().to_string(), args.rearm, stdout)
        }
        _ => monitor_stream(&tuned, io::stdin().lock(), "<stdin>", args.rearm, stdout),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulateReport {
    pub format_version: u32,
    pub scenario: ScenarioFile,
    pub seed: u64,
    pub blocks: usize,
    pub episodes: usize,
    pub p_threshold: f64,
    pub detections: usize,
    pub fraction: f64,
    /// Detection step within each block (warm-up included), `null` if none.
    pub detection_t: Vec<Option<usize>>,
}

pub fn cmd_simulate(args: &SimulateArgs) -> Result<()> {
    let tuned = read_json::<BundleFile>(&args.bundle)?.to_tuned()?;
    let base = match &args.params {
        Some(p) => read_json::<ParamsFile>(p)?.to_params()?,
        None => tuned.params.clone(),
    };
    let scenario_file: ScenarioFile = read_json(&args.scenario)?;
    let test = scenario_file.to_scenario(base.clone(), args.seed)?;
    let warmup = Scenario::h0(base, args.seed);
    let study = run_blocks(&tuned, &warmup, &test, args.blocks, args.episodes)?;
    let report = SimulateReport {
        format_version: FORMAT_VERSION,
        scenario: scenario_file,
        seed: args.seed,
        blocks: study.blocks,
        episodes: study.episodes,
        p_threshold: tuned.p_threshold,
        detections: study.detections,
        fraction: study.fraction,
        detection_t: study.records.iter().map(|r| r.as_ref().map(|d| d.t)).collect(),
    };
    emit(args.out.as_deref(), &to_json(&report)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub epsilon: f64,
    pub mean: f64,
    pub udt: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerReport {
    pub format_version: u32,
    pub scenario: ScenarioFile,
    pub alpha: f64,
    pub epsilon: f64,
    pub power_gain: PowerGain,
    pub power_gain_rel_diff: f64,
    pub asymptotic_power: AsymptoticPower,
    /// Asymptotic powers from `epsilon = 0` to twice the scenario's epsilon.
    pub curve: Vec<CurvePoint>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub moments: Option<MomentReport>,
}

pub fn power_report(params: &EpisodeParams, scenario: &ScenarioFile, alpha: f64, moments: Option<(usize, u64)>) -> Result<PowerReport> {
    let epsilon = scenario.epsilon_sigma * params.mean_step_std();
    let gain = power_gain(params)?;
    let curve = (0..=40)
        .map(|i| {
            let e = 2.0 * epsilon * i as f64 / 40.0;
            asymptotic_power(params, e, alpha).map(|p| CurvePoint {
                epsilon: e,
                mean: p.mean,
                udt: p.udt,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let moments = match moments {
        Some((draws, seed)) => {
            let s = scenario.to_scenario(params.clone(), seed)?;
            Some(moment_oracle(&s, scenario.k.unwrap_or(1), draws)?)
        }
        None => None,
    };
    Ok(PowerReport {
        format_version: FORMAT_VERSION,
        scenario: scenario.clone(),
        alpha,
        epsilon,
        power_gain_rel_diff: (gain.direct - gain.spectral).abs() / gain.direct,
        power_gain: gain,
        asymptotic_power: asymptotic_power(params, epsilon, alpha)?,
        curve,
        moments,
    })
}

pub fn cmd_power(args: &PowerArgs) -> Result<()> {
    let params = read_json::<ParamsFile>(&args.params)?.to_params()?;
    let scenario: ScenarioFile = read_json(&args.scenario)?;
    scenario.to_scenario(params.clone(), 0)?;
    let moments = match (args.draws, args.seed) {
        (Some(d), Some(s)) => Some((d, s)),
        (Some(_), None) => return Err(Error::Config("--draws needs --seed".into())),
        _ => None,
    };
    emit(args.out.as_deref(), &to_json(&power_report(&params, &scenario, args.alpha, moments)?)?)
}

/// Writes episodes at raw resolution: each engine-resolution sample is
/// repeated `d` times.
pub fn cmd_generate(args: &GenerateArgs) -> Result<()> {
    let params = read_json::<ParamsFile>(&args.params)?.to_params()?;
    let d = params.downsample_factor();
    let scenario = read_json::<ScenarioFile>(&args.scenario)?.to_scenario(params, args.seed)?;
    if args.episodes == 0 {
        return Err(Error::invalid("--episodes must be positive"));
    }
    let rows: Vec<Vec<f64>> = scenario
        .episodes(args.start, args.episodes)?
        .into_iter()
        .map(|row| row.into_iter().flat_map(|v| std::iter::repeat_n(v, d)).collect())
        .collect();
    write_atomic(&args.out, format_csv(&rows).as_bytes())
}

fn configure_threads(threads: Option<usize>) -> Result<()> {
    match threads {
        None => Ok(()),
        Some(0) => Err(Error::invalid("--threads must be positive")),
        #[cfg(feature = "parallel")]
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::invalid(e.to_string())),
        #[cfg(not(feature = "parallel"))]
        Some(_) => Ok(()),
    }
}

/// Runs one parsed invocation and returns its exit code.
pub fn run(cli: Cli) -> u8 {
    let result = configure_threads(cli.threads).and_then(|()| match &cli.command {
        Command::Estimate(a) => cmd_estimate(a).map(|()| false),
        Command::Tune(a) => cmd_tune(a).map(|()| false),
        Command::Monitor(a) => cmd_monitor(a),
        Command::Simulate(a) => cmd_simulate(a).map(|()| false),
        Command::Power(a) => cmd_power(a).map(|()| false),
        Command::Generate(a) => cmd_generate(a).map(|()| false),
    });
    match result {
        Ok(false) => EXIT_OK,
        Ok(true) => EXIT_DETECTION,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_ERROR
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_errors_carry_line_numbers() {
        let err = parse_csv("1,2\n3,x\n".as_bytes(), "ref.csv", false).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
        let err = parse_csv("a,b\n1,2\n3\n".as_bytes(), "ref.csv", true).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");
        let rows = parse_csv("a,b\n1, 2\n3,4\n".as_bytes(), "ref.csv", true).unwrap();
        assert_eq!(rows, vec![vec![1.0, 2.0], vec![3.0, 4.0]]);
        assert!(parse_csv("".as_bytes(), "ref.csv", false).is_err());
        assert!(parse_csv("1,nan\n".as_bytes(), "ref.csv", false).is_err());
    }

    #[test]
    fn params_file_round_trips_exactly() {
        let cov = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0 / 3.0]);
        let p = EpisodeParams::new(vec![0.1, -7.25], cov).unwrap().with_downsample(4);
        let file = ParamsFile::from_params(&p);
        let text = to_json(&file).unwrap();
        let back: ParamsFile = serde_json::from_str(&text).unwrap();
        assert_eq!(back, file);
        let q = back.to_params().unwrap();
        assert_eq!(q.cov_inv(), p.cov_inv());
        assert_eq!(q.downsample_factor(), 4);
        assert!(text.contains("\"T\": 2"));
    }

    #[test]
    fn scenario_file_conversion() {
        let base = EpisodeParams::new(vec![0.0; 2], DMatrix::from_diagonal_element(2, 2, 4.0)).unwrap();
        let f: ScenarioFile = serde_json::from_str(r#"{"kind":"uniform","epsilon_sigma":0.5}"#).unwrap();
        let s = f.to_scenario(base.clone(), 1).unwrap();
        assert_eq!(s.kind, ScenarioKind::Uniform { epsilon: 1.0 });
        let f: ScenarioFile = serde_json::from_str(r#"{"kind":"scaled_uniform","epsilon_sigma":1}"#).unwrap();
        assert!(matches!(f.to_scenario(base.clone(), 1), Err(Error::Config(_))));
        let f: ScenarioFile = serde_json::from_str(r#"{"kind":"bogus"}"#).unwrap();
        assert!(matches!(f.to_scenario(base, 1), Err(Error::Config(_))));
    }

    #[test]
    fn unknown_statistic_in_plan_is_a_parse_error() {
        let text = r#"{"format_version":1,"statistics":["udt","nope"],"horizons":[1],
            "test_frequency":1,"h_tilde":1,"alpha0":0.5,"b_outer":10,"b_inner":10,"seed":1}"#;
        assert!(serde_json::from_str::<PlanFile>(text).is_err());
    }

    #[test]
    fn atomic_write_replaces_target() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("out.json");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(fs::read(&p).unwrap(), b"two");
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}
