use std::path::PathBuf;

use clap::{ArgGroup, Args, Parser, Subcommand};
use pwexp::estimation::Optimizer;
use pwexp::prediction::IntervalKind;
use pwexp::simulation::{FollowupStat, MilestoneKind};
use serde::{Serialize, Serializer};

#[derive(Debug, Parser, Serialize)]
#[command(name = "pwexp", version, about = "Piecewise exponential survival models: fit, simulate, predict")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Serialize)]
pub struct Common {
    /// Input file (CSV data, or JSON for models where noted).
    #[arg(long = "in", global = true, value_name = "FILE")]
    pub input: Option<PathBuf>,
    /// Output file; stdout when absent. A `<FILE>.manifest.json` sidecar is written next to it.
    #[arg(long, global = true, value_name = "FILE")]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, default_value = "followT", value_name = "NAME")]
    pub time_col: String,
    #[arg(long, global = true, default_value = "event", value_name = "NAME")]
    pub event_col: String,
    #[arg(long, global = true, default_value = "randT", value_name = "NAME")]
    pub rand_col: String,
    #[arg(long, global = true, default_value = "followT_abs", value_name = "NAME")]
    pub follow_abs_col: String,
    #[arg(long, global = true, default_value = "censor_reason", value_name = "NAME")]
    pub reason_col: String,
    /// Treat records censored for this reason (e.g. drop_out) as the events, and everything else as censored.
    #[arg(long, global = true, value_name = "REASON")]
    pub event_from_reason: Option<String>,
    /// Master seed; required by every randomized subcommand.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads. Results do not depend on this.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    /// Simulate one trial from a design.
    Simulate(SimulateArgs),
    /// Re-censor trial data at a calendar cut-off.
    Cut(CutArgs),
    /// Kaplan-Meier step table.
    Km(KmArgs),
    /// Fit a piecewise exponential model.
    Fit(FitArgs),
    /// Cross-validated held-out log-likelihood.
    Cv(ResampleArgs),
    /// Bootstrap refits.
    Boot(ResampleArgs),
    /// Predict future event counts or the time to reach target counts.
    Predict(PredictArgs),
    /// Summaries of follow-up at milestones over simulated trials.
    Followup(FollowupArgs),
    /// Evaluate or sample a piecewise exponential distribution.
    Dist(DistArgs),
}

fn display<T: std::fmt::Debug, S: Serializer>(v: &T, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_str(&format!("{v:?}"))
}

fn display_vec<T: std::fmt::Debug, S: Serializer>(v: &[T], s: S) -> Result<S::Ok, S::Error> {
    s.collect_seq(v.iter().map(|x| format!("{x:?}")))
}

/// `NAME:WEIGHT[:HAZARD_RATIO]`
#[derive(Debug, Clone, Serialize)]
pub struct GroupSpec {
    pub name: String,
    pub weight: u32,
    pub hazard_ratio: f64,
}

fn parse_group(s: &str) -> Result<GroupSpec, String> {
    let parts: Vec<&str> = s.split(':').collect();
    let bad = || format!("expected NAME:WEIGHT[:HAZARD_RATIO], got {s:?}");
    if !(2..=3).contains(&parts.len()) || parts[0].is_empty() {
        return Err(bad());
    }
    let weight = parts[1].parse().map_err(|_| bad())?;
    let hazard_ratio = match parts.get(2) {
        Some(h) => h.parse().map_err(|_| bad())?,
        None => 1.0,
    };
    Ok(GroupSpec { name: parts[0].to_string(), weight, hazard_ratio })
}

/// `NAME:PROBABILITY`
#[derive(Debug, Clone, Serialize)]
pub struct StratumSpec {
    pub name: String,
    pub prob: f64,
}

fn parse_stratum(s: &str) -> Result<StratumSpec, String> {
    let bad = || format!("expected NAME:PROBABILITY, got {s:?}");
    let (name, p) = s.split_once(':').ok_or_else(bad)?;
    Ok(StratumSpec { name: name.to_string(), prob: p.parse().map_err(|_| bad())? })
}

#[derive(Debug, Args, Serialize)]
#[command(group(ArgGroup::new("enrollment").required(true).args(["per_month", "counts"])))]
pub struct DesignArgs {
    /// Constant enrollment rate (subjects per month); needs --total.
    #[arg(long, requires = "total")]
    pub per_month: Option<f64>,
    #[arg(long)]
    pub total: Option<usize>,
    /// Subjects enrolled in each month.
    #[arg(long, value_delimiter = ',')]
    pub counts: Option<Vec<usize>>,
    /// Event hazard rates of the reference group.
    #[arg(long, value_delimiter = ',', required = true)]
    pub rates: Vec<f64>,
    #[arg(long, value_delimiter = ',')]
    pub breaks: Vec<f64>,
    /// Monthly drop-out probability.
    #[arg(long)]
    pub drop_rate: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    pub death_rates: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    pub death_breaks: Vec<f64>,
    /// Repeatable; event rates of the group are the reference rates times HAZARD_RATIO.
    #[arg(long = "group", value_parser = parse_group, value_name = "NAME:WEIGHT[:HR]")]
    pub groups: Vec<GroupSpec>,
    #[arg(long = "stratum", value_parser = parse_stratum, value_name = "NAME:PROB")]
    pub strata: Vec<StratumSpec>,
    #[arg(long, default_value = "blocks", value_parser = ["blocks", "iid"])]
    pub allocation: String,
}

#[derive(Debug, Args, Serialize)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub design: DesignArgs,
}

#[derive(Debug, Args, Serialize)]
#[command(group(ArgGroup::new("at").required(true).args(["cut", "cut_quantile"])))]
pub struct CutArgs {
    /// Calendar cut-off time.
    #[arg(long)]
    pub cut: Option<f64>,
    /// Cut at this quantile of the randomization times.
    #[arg(long)]
    pub cut_quantile: Option<f64>,
}

#[derive(Debug, Args, Serialize)]
pub struct KmArgs {}

#[derive(Debug, Args, Serialize)]
pub struct FitOptions {
    /// Number of change-points, fixed ones included.
    #[arg(long, default_value_t = 0)]
    pub nbreak: usize,
    /// Fixed change-points.
    #[arg(long = "breakpoint", value_delimiter = ',')]
    pub fixed_breakpoints: Vec<f64>,
    #[arg(long, default_value = "hybrid")]
    #[serde(serialize_with = "display")]
    pub optimizer: Optimizer,
    #[arg(long, default_value_t = 10_000)]
    pub max_set: usize,
    #[arg(long, default_value_t = 5)]
    pub min_pt_tail: usize,
    /// START,END: no change-point inside this interval.
    #[arg(long, value_delimiter = ',', num_args = 2)]
    pub exclude_int: Option<Vec<f64>>,
    #[arg(long, default_value_t = 1.959_963_984_540_054)]
    pub ci_z: f64,
    #[arg(long, default_value_t = 5)]
    pub ols_restarts: usize,
    #[arg(long, default_value_t = 50)]
    pub ols_max_iter: usize,
}

#[derive(Debug, Args, Serialize)]
pub struct FitArgs {
    #[command(flatten)]
    pub fit: FitOptions,
    /// Also write the fitted survival curve (time, survival).
    #[arg(long, value_name = "FILE")]
    pub curve_out: Option<PathBuf>,
    /// Also write the Kaplan-Meier step table (time, survival, n_risk, n_event).
    #[arg(long, value_name = "FILE")]
    pub km_out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct ResampleArgs {
    #[command(flatten)]
    pub fit: FitOptions,
    #[arg(long, default_value_t = 100)]
    pub nsim: usize,
}

#[derive(Debug, Args, Serialize)]
#[command(group(ArgGroup::new("event_model").required(true).args(["model", "rates"])))]
pub struct PredictArgs {
    /// Event model: fit or bootstrap JSON.
    #[arg(long, value_name = "FILE")]
    pub model: Option<PathBuf>,
    /// Event model given directly.
    #[arg(long, value_delimiter = ',')]
    pub rates: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',', requires = "rates")]
    pub breaks: Vec<f64>,
    /// Censoring (drop-out) model: fit or bootstrap JSON.
    #[arg(long, value_name = "FILE")]
    pub censor_model: Option<PathBuf>,
    /// Analysis time; defaults to the latest calendar follow-up time in the data.
    #[arg(long)]
    pub t0: Option<f64>,
    /// Future enrollment rate; needs --remaining.
    #[arg(long, conflicts_with = "counts", requires = "remaining")]
    pub per_month: Option<f64>,
    /// Future enrollment per month; needs --remaining.
    #[arg(long, value_delimiter = ',', requires = "remaining")]
    pub counts: Option<Vec<usize>>,
    /// Subjects still to be enrolled after t0.
    #[arg(long)]
    pub remaining: Option<usize>,
    #[arg(long, default_value_t = 100)]
    pub n_each: usize,
    /// Months of follow-up after the last enrollment covered by the grid.
    #[arg(long, default_value_t = 24.0)]
    pub followup_window: f64,
    #[arg(long, default_value_t = 200)]
    pub grid_points: usize,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    #[arg(long, default_value = "predictive")]
    #[serde(serialize_with = "display")]
    pub interval: IntervalKind,
    /// Report at these calendar times instead of the full grid.
    #[arg(long, value_delimiter = ',', conflicts_with = "targets")]
    pub at: Option<Vec<f64>>,
    /// Report the time each of these event counts is reached.
    #[arg(long, value_delimiter = ',')]
    pub targets: Option<Vec<f64>>,
}

#[derive(Debug, Args, Serialize)]
pub struct FollowupArgs {
    #[command(flatten)]
    pub design: DesignArgs,
    /// Milestones: calendar times, event counts or sample sizes.
    #[arg(long, value_delimiter = ',', required = true)]
    pub at: Vec<f64>,
    #[arg(long, default_value = "calendar")]
    #[serde(serialize_with = "display")]
    pub kind: MilestoneKind,
    /// Statistics of follow-up time: mean, median, sum, prop_X.
    #[arg(long = "stat", value_delimiter = ',', default_value = "mean,median")]
    #[serde(serialize_with = "display_vec")]
    pub stats: Vec<FollowupStat>,
    /// Reasons that end follow-up: event, drop_out, death.
    #[arg(long = "endpoint", value_delimiter = ',', default_value = "drop_out")]
    pub endpoints: Vec<String>,
    #[arg(long)]
    pub by_group: bool,
    #[arg(long, default_value_t = 1000)]
    pub rep: usize,
}

#[derive(Debug, Args, Serialize)]
#[command(group(ArgGroup::new("function").required(true)
    .args(["survival", "cdf", "density", "hazard", "cumhaz", "quantile", "sample"])))]
pub struct DistArgs {
    #[arg(long, value_delimiter = ',', required = true)]
    pub rates: Vec<f64>,
    #[arg(long, value_delimiter = ',')]
    pub breaks: Vec<f64>,
    #[arg(long)]
    pub survival: bool,
    #[arg(long)]
    pub cdf: bool,
    #[arg(long)]
    pub density: bool,
    #[arg(long)]
    pub hazard: bool,
    #[arg(long)]
    pub cumhaz: bool,
    /// Evaluate the quantile function at the probabilities in --at.
    #[arg(long)]
    pub quantile: bool,
    /// Draw this many variates (needs --seed).
    #[arg(long)]
    pub sample: Option<usize>,
    /// Condition on survival beyond this time.
    #[arg(long)]
    pub given: Option<f64>,
    #[arg(long, value_delimiter = ',', required_unless_present = "sample")]
    pub at: Vec<f64>,
}
