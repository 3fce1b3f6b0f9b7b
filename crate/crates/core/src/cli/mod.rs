//! Command-line front end. Every command can write its artifacts to
//! `--out-dir` together with a run manifest; `replay` re-runs a manifest
//! and checks that the outputs come out byte-identical.
//!
//! Exit codes: 0 success, 1 solver failure, 2 invalid input.

pub mod manifest;

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::best_reply::TieBreak;
use crate::coding_simulator::{
    load_target, run_trials, write_trials_csv, CodingConfig, SimError, DEFAULT_ALPHA, DEFAULT_DELTA_TYP,
};
use crate::dsbs_analytic::{solve_any, write_curve_csv, DsbsError, DsbsSolution};
use crate::info_measures::{channel_capacity, InfoError};
use crate::plot::LinePlot;
use crate::problem_model::{load_channel, load_problem, DsbsParams, ProblemError, ProblemSpec};
use crate::splitting_solver::{
    default_t_grid, strategy_from_splitting, zero_capacity_value, GridConfig, SolveError, SplittingSolver,
};

use manifest::{changed_inputs, digest_file, load_manifest, mismatched_outputs, sha256_hex, FileDigest, RunManifest, MANIFEST_FILE};

/// Gap between the primal and dual values above which `solve` warns.
pub const CROSS_CHECK_TOL: f64 = 1e-3;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Solver(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Solver(_) => 1,
        }
    }
}

impl From<ProblemError> for CliError {
    fn from(e: ProblemError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<InfoError> for CliError {
    fn from(e: InfoError) -> Self {
        match e {
            InfoError::NonConvergence { .. } => CliError::Solver(e.to_string()),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<SolveError> for CliError {
    fn from(e: SolveError) -> Self {
        match e {
            SolveError::InvalidArgument { .. } | SolveError::ZeroPrior { .. } => CliError::Validation(e.to_string()),
            _ => CliError::Solver(e.to_string()),
        }
    }
}

impl From<DsbsError> for CliError {
    fn from(e: DsbsError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Info(inner) => inner.into(),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Solver(format!("cannot write {}: {e}", path.display()))
}

#[derive(Debug, Parser)]
#[command(name = "stratcomm", version, about = "Optimal encoder distortion with a strategic decoder")]
struct Cli {
    /// Worker threads for parallel sections (0 = one per core).
    #[arg(long, global = true, default_value_t = 0, env = "STRATCOMM_THREADS")]
    threads: usize,
    /// Directory receiving record.json, data files and manifest.json.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Debug, Subcommand, Serialize, Deserialize)]
#[serde(tag = "command", content = "params", rename_all = "kebab-case")]
pub enum Command {
    /// Capacity and optimal input law of a channel.
    Capacity(CapacityArgs),
    /// Optimal encoder distortion of a problem file at one capacity.
    Solve(SolveArgs),
    /// Binary source with binary side information.
    Dsbs(DsbsArgs),
    /// Monte Carlo run of the random-coding scheme.
    Simulate(SimulateArgs),
    /// Capacity-distortion curve of a problem file.
    Curve(CurveArgs),
    /// Re-run a manifest and compare output digests.
    #[serde(skip)]
    Replay(ReplayArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Capacity(_) => "capacity",
            Command::Solve(_) => "solve",
            Command::Dsbs(_) => "dsbs",
            Command::Simulate(_) => "simulate",
            Command::Curve(_) => "curve",
            Command::Replay(_) => "replay",
        }
    }
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct CapacityArgs {
    /// File with a `[channel]` section.
    #[arg(long)]
    pub channel: PathBuf,
    #[arg(long, default_value_t = 1e-9)]
    pub tol: f64,
    #[arg(long, default_value_t = 10_000)]
    pub max_iter: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TieBreakArg {
    Worst,
    Best,
}

impl From<TieBreakArg> for TieBreak {
    fn from(t: TieBreakArg) -> Self {
        match t {
            TieBreakArg::Worst => TieBreak::WorstForEncoder,
            TieBreakArg::Best => TieBreak::BestForEncoder,
        }
    }
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct SolveArgs {
    #[arg(long)]
    pub problem: PathBuf,
    /// Capacity in bits; defaults to the capacity of the channel.
    #[arg(long, conflicts_with = "channel")]
    pub capacity: Option<f64>,
    /// Channel file overriding the problem's `[channel]` section.
    #[arg(long)]
    pub channel: Option<PathBuf>,
    /// Lattice step of the posterior grid.
    #[arg(long)]
    pub grid: Option<f64>,
    #[arg(long, value_enum, default_value_t = TieBreakArg::Worst)]
    pub tie_break: TieBreakArg,
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct DsbsArgs {
    #[arg(long, default_value_t = 0.5)]
    pub p0: f64,
    /// Symmetric crossover probability; alternative to `--delta0/--delta1`.
    #[arg(long, conflicts_with_all = ["delta0", "delta1"])]
    pub delta: Option<f64>,
    #[arg(long, requires = "delta1")]
    pub delta0: Option<f64>,
    #[arg(long, requires = "delta0")]
    pub delta1: Option<f64>,
    #[arg(long, default_value_t = 0.0)]
    pub kappa: f64,
    #[arg(long)]
    pub cap: Option<f64>,
    /// Capacity sweep `start:stop:step`, written as curve.csv and curve.svg.
    #[arg(long)]
    pub curve: Option<String>,
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct SimulateArgs {
    #[arg(long)]
    pub problem: PathBuf,
    /// File with a `[q_w_given_u]` section.
    #[arg(long)]
    pub target: PathBuf,
    /// Channel file overriding the problem's `[channel]` section.
    #[arg(long)]
    pub channel: Option<PathBuf>,
    #[arg(long)]
    pub n: usize,
    #[arg(long, default_value_t = 0.05)]
    pub eta: f64,
    /// Bin index rate; defaults to `I(Z;W) - eta` (floored at 0).
    #[arg(long)]
    pub rate_l: Option<f64>,
    #[arg(long, default_value_t = DEFAULT_DELTA_TYP)]
    pub delta_typ: f64,
    /// Tolerance of the five-sequence typicality check; defaults to
    /// `--delta-typ`.
    #[arg(long)]
    pub delta_joint: Option<f64>,
    #[arg(long, default_value_t = DEFAULT_ALPHA)]
    pub alpha: f64,
    #[arg(long, default_value_t = 200)]
    pub trials: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct CurveArgs {
    #[arg(long)]
    pub problem: PathBuf,
    /// Capacity sweep `start:stop:step`.
    #[arg(long)]
    pub capacities: String,
    #[arg(long)]
    pub grid: Option<f64>,
    #[arg(long, value_enum, default_value_t = TieBreakArg::Worst)]
    pub tie_break: TieBreakArg,
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct ReplayArgs {
    #[arg(long)]
    pub manifest: PathBuf,
}

/// Result of a command before anything is written.
struct Outputs {
    summary: String,
    /// Serialized to record.json.
    record: serde_json::Value,
    /// Additional artifacts by file name.
    files: Vec<(String, Vec<u8>)>,
    inputs: Vec<PathBuf>,
    seed: Option<u64>,
}

impl Outputs {
    fn artifacts(&self) -> Vec<(String, Vec<u8>)> {
        let mut record = serde_json::to_vec_pretty(&self.record).expect("records serialize");
        record.push(b'\n');
        let mut all = vec![("record.json".to_string(), record)];
        all.extend(self.files.iter().cloned());
        all
    }
}

/// Parses `start:stop:step` into `start + i * step` for all `i` with the
/// value at most `stop` (plus a rounding allowance).
pub fn parse_range(spec: &str) -> Result<Vec<f64>, CliError> {
    let bad = || CliError::Validation(format!("range `{spec}` is not start:stop:step"));
    let parts: Vec<f64> = spec
        .split(':')
        .map(|p| p.trim().parse::<f64>().map_err(|_| bad()))
        .collect::<Result<_, _>>()?;
    let [start, stop, step] = parts[..] else {
        return Err(bad());
    };
    if !(start.is_finite() && stop.is_finite() && step > 0.0 && stop >= start) {
        return Err(CliError::Validation(format!(
            "range `{spec}` needs finite start <= stop and step > 0"
        )));
    }
    let count = ((stop - start) / step + 1e-9).floor() as usize + 1;
    if count > 100_000 {
        return Err(CliError::Validation(format!("range `{spec}` has {count} points")));
    }
    Ok((0..count).map(|i| start + i as f64 * step).collect())
}

fn grid_config(problem: &ProblemSpec<f64>, grid: Option<f64>, tie_break: TieBreakArg) -> GridConfig {
    let mut cfg = match grid {
        Some(step) => GridConfig::with_step(step),
        None => GridConfig::for_problem(problem),
    };
    cfg.tie_break = tie_break.into();
    cfg
}

fn cmd_capacity(a: &CapacityArgs) -> Result<Outputs, CliError> {
    let channel = load_channel::<f64>(&a.channel)?;
    let res = channel_capacity(channel.rows(), a.tol, a.max_iter)?;
    let law: Vec<String> = res.input_law.iter().map(|p| format!("{p:.6}")).collect();
    Ok(Outputs {
        summary: format!(
            "capacity {:.6} bits\ninput law {}\n",
            res.capacity,
            law.join(" ")
        ),
        record: json!({
            "capacity": res.capacity,
            "input_law": res.input_law,
            "gap": res.gap,
            "iterations": res.iterations,
        }),
        files: vec![],
        inputs: vec![a.channel.clone()],
        seed: None,
    })
}

fn cmd_solve(a: &SolveArgs) -> Result<Outputs, CliError> {
    let mut problem = load_problem::<f64>(&a.problem)?;
    let mut inputs = vec![a.problem.clone()];
    if let Some(path) = &a.channel {
        problem = problem.with_channel(Some(load_channel(path)?));
        inputs.push(path.clone());
    }
    let capacity = match (a.capacity, problem.channel()) {
        (Some(c), _) => c,
        (None, Some(ch)) => channel_capacity(ch.rows(), 1e-9, 10_000)?.capacity,
        (None, None) => {
            return Err(CliError::Validation(
                "no capacity: pass --capacity, --channel, or add a [channel] section".into(),
            ))
        }
    };
    let cfg = grid_config(&problem, a.grid, a.tie_break);
    let solver = SplittingSolver::new(&problem, cfg)?;
    let res = solver.solve(capacity)?;
    let dual = solver.lagrangian(capacity, &default_t_grid())?;
    let gap = (dual.value - res.value).abs();
    let mut summary = format!(
        "value {:.6}{}\natoms {}\nlagrangian {:.6} (gap {gap:.2e})\n",
        res.value,
        if res.infimum_flag { " (infimum)" } else { "" },
        res.splitting.len(),
        dual.value
    );
    if gap > CROSS_CHECK_TOL {
        let warning = format!(
            "warning: primal {} and dual {} differ by {gap:.3e} (> {CROSS_CHECK_TOL:e})",
            res.value, dual.value
        );
        eprintln!("{warning}");
        summary.push_str(&warning);
        summary.push('\n');
    }
    let strategy = strategy_from_splitting(&res.splitting, problem.p_u())?;
    Ok(Outputs {
        summary,
        record: json!({
            "result": res,
            "strategy_q_w_given_u": strategy,
            "lagrangian": dual,
            "cross_check_gap": gap,
            "zero_capacity_value": zero_capacity_value(&problem),
        }),
        files: vec![],
        inputs,
        seed: None,
    })
}

fn dsbs_params(a: &DsbsArgs, cap: f64) -> Result<DsbsParams<f64>, CliError> {
    let (d0, d1) = match (a.delta, a.delta0, a.delta1) {
        (Some(d), None, None) => (d, d),
        (None, Some(d0), Some(d1)) => (d0, d1),
        _ => {
            return Err(CliError::Validation(
                "give --delta, or both --delta0 and --delta1".into(),
            ))
        }
    };
    Ok(DsbsParams::new(a.p0, d0, d1, a.kappa, cap)?)
}

fn cmd_dsbs(a: &DsbsArgs) -> Result<Outputs, CliError> {
    if a.cap.is_none() && a.curve.is_none() {
        return Err(CliError::Validation("give --cap, --curve, or both".into()));
    }
    let mut summary = String::new();
    let mut record = serde_json::Map::new();
    let mut files = Vec::new();
    if let Some(cap) = a.cap {
        let s = solve_any(&dsbs_params(a, cap)?)?;
        summary.push_str(&format!(
            "regime {}\nvalue {:.6}\nposteriors {:.6} {:.6} {:.6}\nweights {:.6} {:.6} {:.6}\n",
            s.regime.label(),
            s.value,
            s.posteriors[0],
            s.posteriors[1],
            s.posteriors[2],
            s.weights[0],
            s.weights[1],
            s.weights[2]
        ));
        record.insert("solution".into(), serde_json::to_value(&s).expect("serializable"));
    }
    if let Some(spec) = &a.curve {
        let caps = parse_range(spec)?;
        let rows: Vec<DsbsSolution<f64>> = caps
            .iter()
            .map(|&c| dsbs_params(a, c).and_then(|p| Ok(solve_any(&p)?)))
            .collect::<Result<_, _>>()?;
        let mut csv = Vec::new();
        write_curve_csv(&mut csv, &rows).map_err(|e| CliError::Solver(e.to_string()))?;
        let svg = LinePlot::new("Encoder distortion vs capacity", "capacity C (bits)", "D_e*")
            .with_series("optimal", rows.iter().map(|s| (s.capacity, s.value)).collect())
            .to_svg();
        summary.push_str(&format!("curve {} points\n", rows.len()));
        record.insert("curve_points".into(), json!(rows.len()));
        files.push(("curve.csv".to_string(), csv));
        files.push(("curve.svg".to_string(), svg.into_bytes()));
    }
    Ok(Outputs {
        summary,
        record: serde_json::Value::Object(record),
        files,
        inputs: vec![],
        seed: None,
    })
}

fn cmd_simulate(a: &SimulateArgs) -> Result<Outputs, CliError> {
    let mut problem = load_problem::<f64>(&a.problem)?;
    let mut inputs = vec![a.problem.clone(), a.target.clone()];
    if let Some(path) = &a.channel {
        problem = problem.with_channel(Some(load_channel(path)?));
        inputs.push(path.clone());
    }
    let target = load_target(&a.target)?;
    let mut config = CodingConfig::new(&problem, target, a.n, a.eta, a.rate_l)?;
    config.delta_typ = a.delta_typ;
    config.delta_joint = a.delta_joint.unwrap_or(a.delta_typ);
    config.alpha = a.alpha;
    config.trials = a.trials;
    config.seed = a.seed;
    let (stats, records) = run_trials(&config, &problem)?;
    let mut csv = Vec::new();
    write_trials_csv(&mut csv, &records).map_err(|e| CliError::Solver(e.to_string()))?;
    let fmt_opt = |x: Option<f64>| x.map_or_else(|| "n/a".to_string(), |v| format!("{v:.4}"));
    let summary = format!(
        "n {} |M| {} |M_L| {} trials {}\nd_e {:.4} d_d {:.4} (reconstruction d_e {:.4})\n\
         error rate {:.3} encoding failures {:.3} index errors {:.3}\n\
         mean KL {} over {} clean trials, agreement {:.3}\n",
        config.n,
        config.m_size(),
        config.l_size(),
        stats.trials,
        stats.d_e,
        stats.d_d,
        stats.d_e_wz,
        stats.error_rate,
        stats.encoding_failure_rate,
        stats.index_error_rate,
        fmt_opt(stats.mean_kl),
        stats.clean_trials,
        stats.agreement
    );
    Ok(Outputs {
        summary,
        record: json!({ "config": config, "stats": stats }),
        files: vec![("trials.csv".to_string(), csv)],
        inputs,
        seed: Some(a.seed),
    })
}

fn cmd_curve(a: &CurveArgs) -> Result<Outputs, CliError> {
    let problem = load_problem::<f64>(&a.problem)?;
    let caps = parse_range(&a.capacities)?;
    let solver = SplittingSolver::new(&problem, grid_config(&problem, a.grid, a.tie_break))?;
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    let err = |e: csv::Error| CliError::Solver(e.to_string());
    w.write_record(["capacity", "value", "infimum", "atoms"]).map_err(err)?;
    let mut points = Vec::with_capacity(caps.len());
    for &c in &caps {
        let r = solver.solve(c)?;
        w.write_record([
            c.to_string(),
            r.value.to_string(),
            r.infimum_flag.to_string(),
            r.splitting.len().to_string(),
        ])
        .map_err(err)?;
        points.push((c, r.value));
    }
    let csv = w.into_inner().map_err(|e| CliError::Solver(e.to_string()))?;
    let svg = LinePlot::new("Encoder distortion vs capacity", "capacity C (bits)", "D_e*")
        .with_series("optimal", points.clone())
        .to_svg();
    Ok(Outputs {
        summary: format!("curve {} points, H(U|Z) = {:.6}\n", points.len(), solver.entropy_u_given_z()),
        record: json!({ "points": points, "entropy_u_given_z": solver.entropy_u_given_z() }),
        files: vec![("curve.csv".to_string(), csv), ("curve.svg".to_string(), svg.into_bytes())],
        inputs: vec![a.problem.clone()],
        seed: None,
    })
}

fn execute(command: &Command) -> Result<Outputs, CliError> {
    match command {
        Command::Capacity(a) => cmd_capacity(a),
        Command::Solve(a) => cmd_solve(a),
        Command::Dsbs(a) => cmd_dsbs(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Curve(a) => cmd_curve(a),
        Command::Replay(_) => Err(CliError::Validation("a manifest cannot replay another replay".into())),
    }
}

fn write_artifacts(dir: &Path, artifacts: &[(String, Vec<u8>)]) -> Result<Vec<FileDigest>, CliError> {
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    artifacts
        .iter()
        .map(|(name, bytes)| {
            let path = dir.join(name);
            std::fs::write(&path, bytes).map_err(|e| io_err(&path, e))?;
            Ok(FileDigest { path: name.clone(), sha256: sha256_hex(bytes) })
        })
        .collect()
}

fn run_command(command: Command, threads: usize, out_dir: Option<&Path>) -> Result<String, CliError> {
    let started = Instant::now();
    let outputs = execute(&command)?;
    let Some(dir) = out_dir else {
        let record = serde_json::to_string_pretty(&outputs.record).expect("records serialize");
        return Ok(format!("{}{record}\n", outputs.summary));
    };
    let artifacts = outputs.artifacts();
    let written = write_artifacts(dir, &artifacts)?;
    let inputs = outputs
        .inputs
        .iter()
        .map(|p| digest_file(p))
        .collect::<Result<Vec<_>, _>>()?;
    let manifest = RunManifest {
        command: command.name().to_string(),
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        invocation: command,
        threads,
        seed: outputs.seed,
        inputs,
        outputs: written,
        duration_secs: started.elapsed().as_secs_f64(),
    };
    let path = dir.join(MANIFEST_FILE);
    let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    text.push('\n');
    std::fs::write(&path, text).map_err(|e| io_err(&path, e))?;
    Ok(format!("{}wrote {} artifacts to {}\n", outputs.summary, artifacts.len() + 1, dir.display()))
}

fn replay(args: &ReplayArgs, out_dir: Option<&Path>) -> Result<String, CliError> {
    let manifest = load_manifest(&args.manifest)?;
    let changed = changed_inputs(&manifest)?;
    if !changed.is_empty() {
        return Err(CliError::Validation(format!(
            "inputs changed since the recorded run: {}",
            changed.join(", ")
        )));
    }
    let artifacts = execute(&manifest.invocation)?.artifacts();
    let produced: Vec<FileDigest> = match out_dir {
        Some(dir) => write_artifacts(dir, &artifacts)?,
        None => artifacts
            .iter()
            .map(|(name, bytes)| FileDigest { path: name.clone(), sha256: sha256_hex(bytes) })
            .collect(),
    };
    let bad = mismatched_outputs(&manifest, &produced);
    if bad.is_empty() {
        Ok(format!("replay of `{}`: {} artifacts identical\n", manifest.command, produced.len()))
    } else {
        Err(CliError::Solver(format!("replay differs in: {}", bad.join(", "))))
    }
}

fn configure_threads(threads: usize) {
    // A second configuration in the same process (tests) is harmless.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
}

/// Entry point shared by the binary and tests; returns the exit code.
pub fn main_with_args<I: IntoIterator<Item = OsString>>(args: I) -> i32 {
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    configure_threads(cli.threads);
    let result = match &cli.command {
        Command::Replay(r) => replay(r, cli.out_dir.as_deref()),
        other => run_command(other.clone(), cli.threads, cli.out_dir.as_deref()),
    };
    match result {
        Ok(text) => {
            print!("{text}");
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranges() {
        let r = parse_range("0:0.9:0.01").unwrap();
        assert_eq!(r.len(), 91);
        assert!((r[90] - 0.9).abs() < 1e-12);
        assert_eq!(parse_range("0.4:0.4:0.1").unwrap(), vec![0.4]);
        assert!(parse_range("1:0:0.1").is_err());
        assert!(parse_range("0:1").is_err());
        assert!(parse_range("0:1:0").is_err());
    }

    #[test]
    fn usage_errors_exit_two() {
        let code = main_with_args(["stratcomm", "dsbs", "--bogus"].map(OsString::from));
        assert_eq!(code, 2);
        let code = main_with_args(["stratcomm", "dsbs", "--cap", "0.4"].map(OsString::from));
        assert_eq!(code, 2);
    }

    #[test]
    fn manifest_round_trips_command() {
        let cmd = Command::Dsbs(DsbsArgs {
            p0: 0.5,
            delta: Some(0.3),
            delta0: None,
            delta1: None,
            kappa: 0.0,
            cap: Some(0.4),
            curve: None,
        });
        let text = serde_json::to_string(&cmd).unwrap();
        assert!(text.starts_with(r#"{"command":"dsbs","params":"#));
        let back: Command = serde_json::from_str(&text).unwrap();
        assert_eq!(serde_json::to_string(&back).unwrap(), text);
    }
}
