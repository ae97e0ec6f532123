use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use anyhow::Context;
use pwexp::estimation::{ExcludeInterval, FitConfig};
use pwexp::io::{self, Columns};
use pwexp::prediction::{predict_events, AccrualPlan, ModelSet, PredictOptions, TrialSnapshot};
use pwexp::resampling::{boot_fit, cv_loglik, BootFit};
use pwexp::rng::{stream, tag};
use pwexp::simulation::{
    simulate_trial, sim_followup, Allocation, Endpoints, Enrollment, FollowupConfig, Law, TrialDesign,
};
use pwexp::stats::quantile;
use pwexp::survdata::{cut_data, km_fit, CensorReason};
use pwexp::{FitResult, PweModel, SurvSample};

use crate::args::*;
use crate::usage;

/// What a subcommand produced: the main output, an optional note for stderr,
/// and side files requested by flags.
pub struct Output {
    pub body: Vec<u8>,
    pub summary: Option<String>,
    pub extra: Vec<(PathBuf, Vec<u8>)>,
}

impl Output {
    fn new(body: Vec<u8>) -> Self {
        Self { body, summary: None, extra: Vec::new() }
    }
}

pub fn dispatch(cli: &Cli) -> anyhow::Result<Output> {
    let c = &cli.common;
    match &cli.command {
        Command::Simulate(a) => simulate(c, a),
        Command::Cut(a) => cut(c, a),
        Command::Km(_) => km(c),
        Command::Fit(a) => fit(c, a),
        Command::Cv(a) => cv(c, a),
        Command::Boot(a) => boot(c, a),
        Command::Predict(a) => predict(c, a),
        Command::Followup(a) => followup(c, a),
        Command::Dist(a) => dist(c, a),
    }
}

fn require_seed(c: &Common) -> anyhow::Result<u64> {
    match c.seed {
        Some(s) => Ok(s),
        None => usage("this subcommand is randomized and needs --seed"),
    }
}

fn read_sample(c: &Common) -> anyhow::Result<SurvSample> {
    let Some(path) = &c.input else {
        return usage("--in is required");
    };
    let cols = Columns {
        time: c.time_col.clone(),
        event: c.event_col.clone(),
        rand_time: c.rand_col.clone(),
        follow_abs: c.follow_abs_col.clone(),
        censor_reason: c.reason_col.clone(),
    };
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let data = match io::read_sample(BufReader::new(file), &cols) {
        Ok(d) => d,
        Err(pwexp::Error::InvalidData(msg)) if msg.starts_with("column ") => return usage(msg),
        // Malformed input is an I/O-class failure, not a numerical one.
        Err(e) => anyhow::bail!("reading {}: {e}", path.display()),
    };
    match &c.event_from_reason {
        None => Ok(data),
        Some(reason) => {
            let reason: CensorReason = match reason.parse() {
                Ok(r) => r,
                Err(e) => return usage(format!("--event-from-reason: {e}")),
            };
            if !data.has_calendar() {
                return usage("--event-from-reason needs the censor reason column");
            }
            Ok(data.relabel(|o| o.calendar.is_some_and(|cal| cal.censor_reason == reason)))
        }
    }
}

fn read_json(path: &Path) -> anyhow::Result<serde_json::Value> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    serde_json::from_reader(BufReader::new(file)).with_context(|| format!("parsing {}", path.display()))
}

fn json_bytes<T: serde::Serialize>(v: &T) -> anyhow::Result<Vec<u8>> {
    let mut s = serde_json::to_string_pretty(v)?;
    s.push('\n');
    Ok(s.into_bytes())
}

fn csv_bytes(f: impl FnOnce(&mut Vec<u8>) -> pwexp::Result<()>) -> anyhow::Result<Vec<u8>> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    Ok(buf)
}

fn design(d: &DesignArgs) -> anyhow::Result<TrialDesign> {
    let enrollment = match (&d.counts, d.per_month, d.total) {
        (Some(c), None, None) => Enrollment::Counts(c.clone()),
        (None, Some(per_month), Some(total)) => Enrollment::Rate { per_month, total },
        _ => return usage("give either --counts or --per-month with --total"),
    };
    let base = PweModel::new(d.rates.clone(), d.breaks.clone())?;
    let mut design = TrialDesign::new(enrollment, Law::Pwe(base));
    if !d.groups.is_empty() {
        let groups = d
            .groups
            .iter()
            .map(|g| {
                let rates = d.rates.iter().map(|r| r * g.hazard_ratio).collect();
                Ok((g.name.clone(), g.weight, Law::Pwe(PweModel::new(rates, d.breaks.clone())?)))
            })
            .collect::<pwexp::Result<Vec<_>>>()?;
        design = design.with_groups(groups);
    }
    if !d.strata.is_empty() {
        design = design.with_strata(d.strata.iter().map(|s| (s.name.clone(), s.prob)).collect());
    }
    if let Some(p) = d.drop_rate {
        design = design.with_drop_rate(p)?;
    }
    if let Some(rates) = &d.death_rates {
        design = design.with_death(Law::Pwe(PweModel::new(rates.clone(), d.death_breaks.clone())?));
    }
    let allocation = if d.allocation == "iid" { Allocation::Iid } else { Allocation::Blocks };
    let design = design.with_allocation(allocation);
    design.check()?;
    Ok(design)
}

fn simulate(c: &Common, a: &SimulateArgs) -> anyhow::Result<Output> {
    let seed = require_seed(c)?;
    let trial = simulate_trial(&design(&a.design)?, seed)?;
    Ok(Output::new(csv_bytes(|w| io::write_trial(w, &trial))?))
}

fn cut(c: &Common, a: &CutArgs) -> anyhow::Result<Output> {
    let data = read_sample(c)?;
    let at = match (a.cut, a.cut_quantile) {
        (Some(t), None) => t,
        (None, Some(p)) => {
            if !(0.0..=1.0).contains(&p) {
                return usage("--cut-quantile must lie in [0, 1]");
            }
            let rand: Option<Vec<f64>> = data.records().iter().map(|r| r.calendar.map(|cal| cal.rand_time)).collect();
            let Some(rand) = rand else { return Err(pwexp::Error::MissingCalendar.into()) };
            quantile(&rand, p)
        }
        _ => return usage("give exactly one of --cut and --cut-quantile"),
    };
    let cut = cut_data(&data, at)?;
    let mut out = Output::new(csv_bytes(|w| io::write_sample(w, &cut))?);
    out.summary = Some(format!("cut at {at}: kept {} of {} records, {} events", cut.len(), data.len(), cut.n_events()));
    Ok(out)
}

fn km(c: &Common) -> anyhow::Result<Output> {
    let curve = km_fit(&read_sample(c)?)?;
    Ok(Output::new(csv_bytes(|w| io::write_km(w, &curve))?))
}

fn fit_config(c: &Common, f: &FitOptions) -> anyhow::Result<FitConfig> {
    let exclude_int = match f.exclude_int.as_deref() {
        None => None,
        Some(&[a, b]) => Some(ExcludeInterval::new(a, b)?),
        Some(_) => return usage("--exclude-int takes START,END"),
    };
    let randomized = f.nbreak > f.fixed_breakpoints.len();
    let seed = if randomized { require_seed(c)? } else { c.seed.unwrap_or(0) };
    let cfg = FitConfig {
        nbreak: f.nbreak.max(f.fixed_breakpoints.len()),
        fixed_breakpoints: f.fixed_breakpoints.clone(),
        optimizer: f.optimizer,
        max_set: f.max_set,
        min_pt_tail: f.min_pt_tail,
        exclude_int,
        seed,
        ci_z: f.ci_z,
        ols_restarts: f.ols_restarts,
        ols_max_iter: f.ols_max_iter,
    };
    cfg.check()?;
    Ok(cfg)
}

/// Survival of `model` on 201 points from 0 to the largest finite time.
fn curve_points(model: &PweModel, data: &SurvSample) -> Vec<(f64, f64)> {
    let tmax = data.times().into_iter().filter(|t| t.is_finite()).fold(0.0, f64::max);
    let tmax = if tmax > 0.0 { tmax } else { 1.0 };
    (0..=200)
        .map(|i| {
            let t = tmax * i as f64 / 200.0;
            (t, model.survival(t))
        })
        .collect()
}

fn fit(c: &Common, a: &FitArgs) -> anyhow::Result<Output> {
    let data = read_sample(c)?;
    let cfg = fit_config(c, &a.fit)?;
    let result = pwexp::fit(&data, &cfg)?;
    let mut out = Output::new(json_bytes(&result)?);
    let mut summary = result.summary_table();
    for w in result.warnings() {
        summary.push_str(&format!("\nwarning: {w}"));
    }
    out.summary = Some(summary);
    if let Some(path) = &a.curve_out {
        let pts = curve_points(&result.model, &data);
        out.extra.push((path.clone(), csv_bytes(|w| io::write_curve(w, ["time", "survival"], &pts))?));
    }
    if let Some(path) = &a.km_out {
        let km = km_fit(&data)?;
        out.extra.push((path.clone(), csv_bytes(|w| io::write_km(w, &km))?));
    }
    Ok(out)
}

fn cv(c: &Common, a: &ResampleArgs) -> anyhow::Result<Output> {
    let seed = require_seed(c)?;
    let data = read_sample(c)?;
    let cfg = fit_config(c, &a.fit)?;
    let res = cv_loglik(&data, &cfg, a.nsim, seed)?;
    let mut out = Output::new(csv_bytes(|w| io::write_values(w, "cv_loglik", &res.values))?);
    let mut sorted = res.values.clone();
    sorted.sort_by(f64::total_cmp);
    out.summary = Some(format!(
        "median held-out loglik {:.3} over {} repetitions ({} failed)",
        pwexp::stats::median(&sorted),
        res.values.len(),
        res.failures.len()
    ));
    Ok(out)
}

fn boot(c: &Common, a: &ResampleArgs) -> anyhow::Result<Output> {
    let seed = require_seed(c)?;
    let data = read_sample(c)?;
    let cfg = fit_config(c, &a.fit)?;
    let res = boot_fit(&data, &cfg, a.nsim, seed)?;
    let mut lines = vec![format!("{} replicates, {} failed", res.replicates.len(), res.failures.len())];
    for k in 0..cfg.nbreak {
        if let Some((lo, hi)) = res.breakpoint_interval(k, 0.05) {
            lines.push(format!("brk{} 95% interval [{lo:.4}, {hi:.4}]", k + 1));
        }
    }
    let mut out = Output::new(json_bytes(&res)?);
    out.summary = Some(lines.join("\n"));
    Ok(out)
}

/// A fit result or a bootstrap file, told apart by the `replicates` key.
fn model_set(path: &Path) -> anyhow::Result<ModelSet> {
    let value = read_json(path)?;
    let ctx = || format!("reading model from {}", path.display());
    if value.get("replicates").is_some() {
        let b: BootFit = serde_json::from_value(value).with_context(ctx)?;
        Ok(ModelSet::from(&b))
    } else {
        let f: FitResult = serde_json::from_value(value).with_context(ctx)?;
        Ok(ModelSet::from(&f))
    }
}

fn predict(c: &Common, a: &PredictArgs) -> anyhow::Result<Output> {
    let seed = require_seed(c)?;
    let data = read_sample(c)?;
    let event = match (&a.model, &a.rates) {
        (Some(path), None) => model_set(path)?,
        (None, Some(rates)) => ModelSet::from(PweModel::new(rates.clone(), a.breaks.clone())?),
        _ => return usage("give exactly one of --model and --rates"),
    };
    let censor = a.censor_model.as_deref().map(model_set).transpose()?;
    let accrual = match (a.per_month, &a.counts, a.remaining) {
        (None, None, None) => AccrualPlan::None,
        (Some(per_month), None, Some(remaining)) => AccrualPlan::Rate { per_month, remaining },
        (None, Some(c), Some(remaining)) => AccrualPlan::Counts { per_month: c.clone(), remaining },
        _ => return usage("--remaining needs exactly one of --per-month and --counts"),
    };
    let t0 = match a.t0 {
        Some(t) => t,
        None => data
            .records()
            .iter()
            .filter_map(|r| r.calendar.map(|cal| cal.follow_abs_time))
            .filter(|t| t.is_finite())
            .fold(None, |m: Option<f64>, t| Some(m.map_or(t, |m| m.max(t))))
            .ok_or(pwexp::Error::MissingCalendar)?,
    };
    let snapshot = TrialSnapshot::from_sample(&data, t0, accrual)?;
    let opts = PredictOptions {
        n_each: a.n_each,
        seed,
        followup_window: a.followup_window,
        grid_points: a.grid_points,
    };
    let ens = predict_events(&event, censor.as_ref(), &snapshot, &opts)?;
    let body = if let Some(targets) = &a.targets {
        let rows = ens.timeline_for_events(targets, a.alpha, a.interval)?;
        csv_bytes(|w| io::write_timeline(w, &rows))?
    } else {
        let times = a.at.clone().unwrap_or_else(|| ens.grid.clone());
        let rows = ens.event_interval(&times, a.alpha, a.interval)?;
        csv_bytes(|w| io::write_intervals(w, &rows))?
    };
    let mut out = Output::new(body);
    out.summary = Some(format!(
        "t0 {}: {} events observed, {} subjects at most, {} parameter sets x {} runs",
        ens.t0,
        ens.observed_events,
        ens.max_events,
        ens.expected.len(),
        ens.n_each
    ));
    Ok(out)
}

fn followup(c: &Common, a: &FollowupArgs) -> anyhow::Result<Output> {
    let seed = require_seed(c)?;
    let design = design(&a.design)?;
    let mut endpoints = Endpoints { event: false, drop_out: false, death: false };
    for e in &a.endpoints {
        match e.as_str() {
            "event" => endpoints.event = true,
            "drop_out" => endpoints.drop_out = true,
            "death" => endpoints.death = true,
            other => return usage(format!("unknown endpoint {other:?}; use event, drop_out or death")),
        }
    }
    let mut cfg = FollowupConfig::new(a.at.clone(), a.kind, a.rep, seed);
    cfg.stats = a.stats.clone();
    cfg.endpoints = endpoints;
    cfg.by_group = a.by_group;
    let summary = sim_followup(&design, &cfg)?;
    let mut out = Output::new(csv_bytes(|w| io::write_followup(w, &summary))?);
    if !summary.warnings.is_empty() {
        out.summary = Some(summary.warnings.iter().map(|w| format!("warning: {w}")).collect::<Vec<_>>().join("\n"));
    }
    Ok(out)
}

type Evaluator<'a> = Box<dyn Fn(f64) -> pwexp::Result<f64> + 'a>;

fn dist(c: &Common, a: &DistArgs) -> anyhow::Result<Output> {
    let model = PweModel::new(a.rates.clone(), a.breaks.clone())?;
    if let Some(n) = a.sample {
        let mut rng = stream(require_seed(c)?, &[tag::SIMULATE]);
        let draws = match a.given {
            Some(r) => model.conditional_sample(n, r, &mut rng),
            None => model.sample(n, &mut rng),
        };
        return Ok(Output::new(csv_bytes(|w| io::write_values(w, "value", &draws))?));
    }
    let (name, f): (&str, Evaluator) = match a.given {
        None if a.survival => ("survival", Box::new(|t| Ok(model.survival(t)))),
        None if a.cdf => ("cdf", Box::new(|t| Ok(model.cdf(t)))),
        None if a.density => ("density", Box::new(|t| Ok(model.density(t)))),
        None if a.hazard => ("hazard", Box::new(|t| Ok(model.hazard(t)))),
        None if a.cumhaz => ("cumulative_hazard", Box::new(|t| Ok(model.cumulative_hazard(t)))),
        None => ("quantile", Box::new(|p| model.quantile(p))),
        Some(r) if a.survival => ("survival", Box::new(move |t| model.conditional_survival(t, r))),
        Some(r) if a.cdf => ("cdf", Box::new(move |t| model.conditional_cdf(t, r))),
        Some(r) if a.quantile => ("quantile", Box::new(move |p| model.conditional_quantile(p, r))),
        Some(_) => return usage("--given applies to --survival, --cdf, --quantile and --sample"),
    };
    let pts = a.at.iter().map(|&x| Ok((x, f(x)?))).collect::<pwexp::Result<Vec<_>>>()?;
    let x = if a.quantile { "p" } else { "time" };
    Ok(Output::new(csv_bytes(|w| io::write_curve(w, [x, name], &pts))?))
}
