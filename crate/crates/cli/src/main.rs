//! `wisdom`: simulate, sweep, analyze and predict from the command line.
//!
//! Exit codes: 0 on success, 1 on invalid input, 2 on internal failure.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use wisdom_core::heuristic::{self, CriticalInfluence, PhiPrediction, Prediction, ReducedGroup};
use wisdom_core::pipeline::{self, ClusterMode, ReportOptions};
use wisdom_core::simlab::{
    self, Condition, EstimateDistribution, InfluenceModel, SweepAxis, TalkativenessDistribution, TrialSpec,
};
use wisdom_core::{Error, Result};

#[derive(Parser)]
#[command(name = "wisdom", version, about = "Influence dynamics and accuracy of group estimates")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an ensemble of simulated trials.
    Simulate(SimulateArgs),
    /// Run one ensemble per level of a parameter.
    Sweep(SweepArgs),
    /// Compute per-trial metrics and aggregate tables from a trial CSV.
    Analyze(AnalyzeArgs),
    /// Apply the phi rule and the reduced model to one set of estimates.
    Predict(PredictArgs),
}

#[derive(Args, Clone)]
struct SpecArgs {
    /// delphi or discussion.
    #[arg(long, default_value = "discussion")]
    condition: Condition,
    /// Group size.
    #[arg(long = "n", default_value_t = 20)]
    n: usize,
    /// Estimate distribution: lognormal:MU,SIGMA | normal:MU,SIGMA | empirical:V1,V2,...
    #[arg(long, default_value = "lognormal:0,1")]
    dist: EstimateDistribution,
    #[arg(long, default_value_t = 1.0, allow_negative_numbers = true)]
    truth: f64,
    /// Rank correlation between stubbornness and initial error (delphi).
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    rho: f64,
    /// Self-weight of discussion networks.
    #[arg(long = "self-weight", default_value_t = 0.5)]
    self_weight: f64,
    /// Revision rounds; defaults to 4 for delphi and consensus for discussion.
    #[arg(long)]
    rounds: Option<usize>,
    /// Talkativeness distribution: lognormal:MU,SIGMA | constant:VALUE
    #[arg(long, default_value = "lognormal:0,1")]
    talkativeness: TalkativenessDistribution,
    /// Bounds of delphi self-weights as LO,HI.
    #[arg(long = "stubbornness-range", default_value = "0.1,0.9", value_parser = parse_range)]
    stubbornness_range: (f64, f64),
    /// emergent or star.
    #[arg(long, default_value = "emergent")]
    influence: InfluenceModel,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl SpecArgs {
    fn spec(&self) -> TrialSpec {
        TrialSpec {
            group_size: self.n,
            condition: self.condition,
            estimates: self.dist.clone(),
            truth: self.truth,
            rounds: self.rounds,
            stubbornness_error_rho: self.rho,
            stubbornness_range: self.stubbornness_range,
            talkativeness: self.talkativeness.clone(),
            self_weight: self.self_weight,
            influence: self.influence,
            seed: self.seed,
        }
    }
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    spec: SpecArgs,
    #[arg(long, default_value_t = 1000)]
    trials: usize,
    /// Trial CSV destination; the JSON summary goes to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long = "dataset-id", default_value = "sim")]
    dataset_id: String,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    spec: SpecArgs,
    /// phi_bucket, rho or centralization.
    #[arg(long)]
    axis: SweepAxis,
    /// Comma-separated levels.
    #[arg(long, value_delimiter = ',', num_args = 1.., allow_negative_numbers = true, required = true)]
    levels: Vec<f64>,
    #[arg(long, default_value_t = 1000)]
    trials: usize,
    /// Table destination; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AnalyzeArgs {
    /// Trial CSV.
    #[arg(long = "in")]
    input: PathBuf,
    /// Report destination; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// auto, group or none.
    #[arg(long, default_value = "auto")]
    clusters: ClusterMode,
    /// Also write per-trial metrics as JSON.
    #[arg(long)]
    metrics: Option<PathBuf>,
}

#[derive(Args)]
struct PredictArgs {
    /// Inline comma-separated estimates or a path to a file of numbers.
    #[arg(long, allow_hyphen_values = true)]
    estimates: String,
    #[arg(long, allow_negative_numbers = true)]
    truth: f64,
    /// Index of the influential individual for the reduced model.
    #[arg(long = "high-index")]
    high_index: Option<usize>,
    /// Centrality of that individual; defaults to 1/N.
    #[arg(long)]
    influence: Option<f64>,
}

fn parse_range(s: &str) -> std::result::Result<(f64, f64), String> {
    let (lo, hi) = s.split_once(',').ok_or("expected LO,HI")?;
    let lo = lo.trim().parse::<f64>().map_err(|e| e.to_string())?;
    let hi = hi.trim().parse::<f64>().map_err(|e| e.to_string())?;
    Ok((lo, hi))
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).map_err(|e| Error::Io(format!("{}: {e}", p.display())))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn write_text(path: Option<&Path>, text: &str) -> Result<()> {
    let mut w = output(path)?;
    w.write_all(text.as_bytes())?;
    if !text.ends_with('\n') {
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

fn to_json<T: Serialize>(value: &T) -> Result<String> {
    serde_json::to_string_pretty(value).map_err(|e| Error::Io(e.to_string()))
}

fn simulate(args: SimulateArgs) -> Result<()> {
    let spec = args.spec.spec();
    let report = simlab::run_ensemble(&spec, args.trials, args.spec.seed)?;
    if let Some(path) = &args.out {
        let rows = pipeline::records_to_rows(&report.records, &args.dataset_id);
        pipeline::write_csv(&rows, output(Some(path))?)?;
    }
    write_text(None, &to_json(&report)?)
}

fn sweep(args: SweepArgs) -> Result<()> {
    let result = simlab::sweep(&args.spec.spec(), args.axis, &args.levels, args.trials, args.spec.seed)?;
    write_text(args.out.as_deref(), &result.to_csv())
}

fn analyze(args: AnalyzeArgs) -> Result<()> {
    let ds = pipeline::load_csv_path(&args.input)?;
    let metrics = pipeline::per_trial_metrics(&ds)?;
    for m in &metrics {
        for w in &m.warnings {
            eprintln!("warning: trial {}: {w}", m.key);
        }
    }
    if let Some(path) = &args.metrics {
        write_text(Some(path), &to_json(&metrics)?)?;
    }
    let report = pipeline::aggregate_report(&metrics, ReportOptions { clusters: args.clusters })?;
    write_text(args.out.as_deref(), &report.to_json()?)
}

fn parse_estimates(raw: &str) -> Result<Vec<f64>> {
    let text = if Path::new(raw).is_file() {
        std::fs::read_to_string(raw).map_err(|e| Error::Io(format!("{raw}: {e}")))?
    } else {
        raw.to_string()
    };
    let values: Vec<f64> = text
        .split(|c: char| c == ',' || c.is_whitespace())
        .filter(|t| !t.is_empty())
        .enumerate()
        .map(|(i, t)| {
            t.parse::<f64>().map_err(|_| Error::Parse {
                line: i as u64 + 1,
                message: format!("`{t}` is not a number"),
            })
        })
        .collect::<Result<_>>()?;
    if values.is_empty() {
        return Err(Error::EmptyInput);
    }
    Ok(values)
}

#[derive(Serialize)]
struct ReducedSummary {
    high_index: usize,
    influence: f64,
    mu_pre: f64,
    mu_post: f64,
    critical_influence: CriticalInfluence,
    prediction: Prediction,
}

#[derive(Serialize)]
struct PredictOutput {
    n: usize,
    phi: f64,
    label: &'static str,
    degenerate: bool,
    phi_rule: PhiPrediction,
    #[serde(skip_serializing_if = "Option::is_none")]
    reduced_model: Option<ReducedSummary>,
}

fn predict(args: PredictArgs) -> Result<()> {
    let estimates = parse_estimates(&args.estimates)?;
    let summary = heuristic::phi(&estimates, args.truth)?;
    let reduced_model = match args.high_index {
        None => None,
        Some(h) => {
            let floor = 1.0 / estimates.len() as f64;
            let g = ReducedGroup::from_estimates(&estimates, h, args.influence.unwrap_or(floor), args.truth)?;
            let (mu_pre, mu_post) = heuristic::project_means(&g);
            Some(ReducedSummary {
                high_index: h,
                influence: g.influence,
                mu_pre,
                mu_post,
                critical_influence: heuristic::critical_c(&g)?,
                prediction: heuristic::predict_outcome(&g)?,
            })
        }
    };
    let out = PredictOutput {
        n: estimates.len(),
        phi: summary.phi,
        label: summary.label.as_str(),
        degenerate: summary.degenerate,
        phi_rule: heuristic::phi_rule(&summary),
        reduced_model,
    };
    write_text(None, &to_json(&out)?)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Sweep(a) => sweep(a),
        Command::Analyze(a) => analyze(a),
        Command::Predict(a) => predict(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 1 } else { 2 })
        }
    }
}
