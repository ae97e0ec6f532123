//! Monte Carlo prediction of cumulative event counts after an interim cut.
//!
//! Given data through calendar time `t0`, the expected count at `t' > t0` is
//! the observed count plus the expected events among subjects still at risk
//! (drawn from the event and censoring laws conditional on surviving their
//! elapsed follow-up) plus those among subjects yet to enroll. Each
//! iteration draws one `(T, C)` pair per subject and thresholds it over the
//! whole grid, so every simulated curve is non-decreasing.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distribution::PweModel;
use crate::error::{Error, Result};
use crate::estimation::FitResult;
use crate::resampling::BootFit;
use crate::rng::{stream, tag, StreamRng};
use crate::stats::{mean, quantile_sorted};
use crate::survdata::{CensorReason, SurvSample};

/// Future enrollment after `t0`, uniform within each month.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AccrualPlan {
    None,
    Rate { per_month: f64, remaining: usize },
    Counts { per_month: Vec<usize>, remaining: usize },
}

impl AccrualPlan {
    pub fn remaining(&self) -> usize {
        match self {
            AccrualPlan::None => 0,
            AccrualPlan::Rate { remaining, .. } | AccrualPlan::Counts { remaining, .. } => *remaining,
        }
    }

    /// Month offset (from `t0`) of each future subject.
    pub fn months(&self) -> Result<Vec<usize>> {
        match self {
            AccrualPlan::None => Ok(Vec::new()),
            AccrualPlan::Rate { per_month, remaining } => {
                if !(per_month.is_finite() && *per_month > 0.0) {
                    return Err(Error::Accrual(format!("enrollment rate {per_month} must be positive")));
                }
                Ok((1..=*remaining)
                    .map(|j| ((j as f64 / per_month).ceil() as usize).saturating_sub(1))
                    .collect())
            }
            AccrualPlan::Counts { per_month, remaining } => {
                let planned: usize = per_month.iter().sum();
                if planned < *remaining {
                    return Err(Error::Accrual(format!(
                        "plan enrolls {planned} subjects but {remaining} remain"
                    )));
                }
                let mut out: Vec<usize> = per_month
                    .iter()
                    .enumerate()
                    .flat_map(|(m, &k)| std::iter::repeat_n(m, k))
                    .collect();
                out.truncate(*remaining);
                Ok(out)
            }
        }
    }

    /// Months after `t0` until the last future subject enrolls.
    pub fn duration(&self) -> Result<f64> {
        Ok(self.months()?.last().map_or(0.0, |&m| (m + 1) as f64))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AtRisk {
    /// Calendar enrollment time.
    pub enroll: f64,
    /// Follow-up already accrued at `t0`.
    pub elapsed: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialSnapshot {
    pub t0: f64,
    pub observed_events: usize,
    pub at_risk: Vec<AtRisk>,
    pub accrual: AccrualPlan,
}

impl TrialSnapshot {
    pub fn new(t0: f64, observed_events: usize, at_risk: Vec<AtRisk>, accrual: AccrualPlan) -> Result<Self> {
        if !t0.is_finite() || t0 < 0.0 {
            return Err(Error::InvalidData(format!("analysis time {t0} must be finite and nonnegative")));
        }
        if at_risk.iter().any(|a| !(a.elapsed >= 0.0 && a.elapsed.is_finite())) {
            return Err(Error::InvalidData("elapsed follow-up must be finite and nonnegative".into()));
        }
        accrual.months()?;
        Ok(Self {
            t0,
            observed_events,
            at_risk,
            accrual,
        })
    }

    /// Snapshot of calendar-annotated data at `t0`: events with calendar
    /// time up to `t0` count as observed; subjects enrolled by `t0` who are
    /// event-free and not lost to drop-out or death are at risk.
    pub fn from_sample(data: &SurvSample, t0: f64, accrual: AccrualPlan) -> Result<Self> {
        let mut observed = 0;
        let mut at_risk = Vec::new();
        for r in data.records() {
            let cal = r.calendar.ok_or(Error::MissingCalendar)?;
            if cal.rand_time > t0 {
                continue;
            }
            if r.event {
                if cal.follow_abs_time <= t0 {
                    observed += 1;
                } else {
                    at_risk.push(AtRisk {
                        enroll: cal.rand_time,
                        elapsed: t0 - cal.rand_time,
                    });
                }
            } else if !matches!(cal.censor_reason, CensorReason::DropOut | CensorReason::Death)
                && cal.follow_abs_time >= t0
            {
                at_risk.push(AtRisk {
                    enroll: cal.rand_time,
                    elapsed: t0 - cal.rand_time,
                });
            }
        }
        Self::new(t0, observed, at_risk, accrual)
    }

    /// Largest count any curve can reach.
    pub fn max_events(&self) -> usize {
        self.observed_events + self.at_risk.len() + self.accrual.remaining()
    }
}

/// One model or a bootstrap family of models.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSet {
    pub models: Vec<PweModel>,
    pub bootstrap: bool,
}

impl From<PweModel> for ModelSet {
    fn from(m: PweModel) -> Self {
        Self {
            models: vec![m],
            bootstrap: false,
        }
    }
}

impl From<&FitResult> for ModelSet {
    fn from(f: &FitResult) -> Self {
        f.model.clone().into()
    }
}

impl From<&BootFit> for ModelSet {
    fn from(b: &BootFit) -> Self {
        Self {
            models: b.models().cloned().collect(),
            bootstrap: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredictOptions {
    /// Iterations per parameter set.
    pub n_each: usize,
    pub seed: u64,
    /// Months of follow-up after the end of accrual covered by the grid.
    pub followup_window: f64,
    /// Grid points after `t0`.
    pub grid_points: usize,
}

impl PredictOptions {
    pub fn new(n_each: usize, seed: u64) -> Self {
        Self {
            n_each,
            seed,
            followup_window: 24.0,
            grid_points: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionEnsemble {
    pub t0: f64,
    pub observed_events: usize,
    pub max_events: usize,
    pub grid: Vec<f64>,
    /// Expected curve of each parameter set.
    pub expected: Vec<Vec<f64>>,
    /// Single-draw curves, `n_each` per parameter set.
    pub predictive: Vec<Vec<f64>>,
    pub n_each: usize,
    pub bootstrap: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IntervalKind {
    Confidence,
    Predictive,
}

impl std::str::FromStr for IntervalKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "confidence" => Ok(IntervalKind::Confidence),
            "predictive" => Ok(IntervalKind::Predictive),
            other => Err(Error::InvalidConfig(format!("unknown interval kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IntervalRow {
    pub time: f64,
    pub n_event: f64,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimelineRow {
    pub n_event: f64,
    #[serde(with = "crate::serde_inf::option")]
    pub time: Option<f64>,
    #[serde(with = "crate::serde_inf::option")]
    pub lower: Option<f64>,
    #[serde(with = "crate::serde_inf::option")]
    pub upper: Option<f64>,
    pub note: Option<String>,
}

fn draw(model: Option<&PweModel>, elapsed: f64, rng: &mut StreamRng) -> f64 {
    match model {
        None => f64::INFINITY,
        Some(m) if elapsed > 0.0 => m.conditional_sample_one(elapsed, rng),
        Some(m) => m.sample_one(rng),
    }
}

/// Event counts on `grid` from one joint draw of every subject's times.
fn one_iteration(
    event: &PweModel,
    censor: Option<&PweModel>,
    snap: &TrialSnapshot,
    future_months: &[usize],
    grid: &[f64],
    rng: &mut StreamRng,
) -> Vec<f64> {
    let mut bins = vec![0u32; grid.len()];
    let mut record = |calendar: f64| {
        let j = grid.partition_point(|&g| g < calendar);
        if j < bins.len() {
            bins[j] += 1;
        }
    };
    for a in &snap.at_risk {
        let t = draw(Some(event), a.elapsed, rng);
        let c = draw(censor, a.elapsed, rng);
        if t <= c {
            record(a.enroll + t);
        }
    }
    for &m in future_months {
        let enroll = snap.t0 + m as f64 + rng.random::<f64>();
        let t = event.sample_one(rng);
        let c = draw(censor, 0.0, rng);
        if t <= c {
            record(enroll + t);
        }
    }
    let mut acc = snap.observed_events as f64;
    bins.iter()
        .map(|&b| {
            acc += b as f64;
            acc
        })
        .collect()
}

/// Simulate expected and predictive event curves for every parameter set.
pub fn predict_events(
    event: &ModelSet,
    censor: Option<&ModelSet>,
    snapshot: &TrialSnapshot,
    opts: &PredictOptions,
) -> Result<PredictionEnsemble> {
    if opts.n_each == 0 {
        return Err(Error::InvalidConfig("n_each must be at least 1".into()));
    }
    if opts.grid_points == 0 || !(opts.followup_window.is_finite() && opts.followup_window >= 0.0) {
        return Err(Error::InvalidConfig("prediction grid needs points and a finite window".into()));
    }
    if event.models.is_empty() || censor.is_some_and(|c| c.models.is_empty()) {
        return Err(Error::InvalidConfig("model set is empty".into()));
    }
    let future = snapshot.accrual.months()?;
    let horizon = snapshot.t0 + snapshot.accrual.duration()? + opts.followup_window;
    let step = (horizon - snapshot.t0) / opts.grid_points as f64;
    let grid: Vec<f64> = (0..=opts.grid_points).map(|j| snapshot.t0 + j as f64 * step).collect();

    let n_sets = event.models.len().max(censor.map_or(1, |c| c.models.len()));
    let n_each = opts.n_each;
    let predictive: Vec<Vec<f64>> = (0..n_sets * n_each)
        .into_par_iter()
        .map(|k| {
            let (i, l) = (k / n_each, k % n_each);
            let ev = &event.models[i % event.models.len()];
            let ce = censor.map(|c| &c.models[i % c.models.len()]);
            let mut rng = stream(opts.seed, &[tag::PREDICT, i as u64, l as u64]);
            one_iteration(ev, ce, snapshot, &future, &grid, &mut rng)
        })
        .collect();

    let expected: Vec<Vec<f64>> = predictive
        .chunks(n_each)
        .map(|draws| {
            (0..grid.len())
                .map(|j| draws.iter().map(|d| d[j]).sum::<f64>() / n_each as f64)
                .collect()
        })
        .collect();

    Ok(PredictionEnsemble {
        t0: snapshot.t0,
        observed_events: snapshot.observed_events,
        max_events: snapshot.max_events(),
        grid,
        expected,
        predictive,
        n_each,
        bootstrap: event.bootstrap || censor.is_some_and(|c| c.bootstrap),
    })
}

/// Linear interpolation of a grid curve; flat outside the grid.
fn interpolate(grid: &[f64], curve: &[f64], t: f64) -> f64 {
    let j = grid.partition_point(|&g| g <= t);
    if j == 0 {
        return curve[0];
    }
    if j == grid.len() {
        return curve[grid.len() - 1];
    }
    let w = (t - grid[j - 1]) / (grid[j] - grid[j - 1]);
    curve[j - 1] + w * (curve[j] - curve[j - 1])
}

/// First time a curve reaches `target`, by linear interpolation; `+inf` if never.
fn crossing(grid: &[f64], curve: &[f64], target: f64) -> f64 {
    let j = curve.partition_point(|&c| c < target);
    if j == 0 {
        return grid[0];
    }
    if j == curve.len() {
        return f64::INFINITY;
    }
    let w = (target - curve[j - 1]) / (curve[j] - curve[j - 1]);
    grid[j - 1] + w * (grid[j] - grid[j - 1])
}

fn band(mut v: Vec<f64>, alpha: f64) -> (f64, f64, f64) {
    v.sort_by(f64::total_cmp);
    (
        quantile_sorted(&v, 0.5),
        quantile_sorted(&v, alpha / 2.0),
        quantile_sorted(&v, 1.0 - alpha / 2.0),
    )
}

fn check_alpha(alpha: f64) -> Result<()> {
    if (0.0..=1.0).contains(&alpha) {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!("level {alpha} outside [0, 1]")))
    }
}

impl PredictionEnsemble {
    fn curves(&self, kind: IntervalKind) -> Result<&[Vec<f64>]> {
        match kind {
            IntervalKind::Confidence if !self.bootstrap => Err(Error::BootstrapRequired(
                "confidence intervals need bootstrap replicates of the models",
            )),
            IntervalKind::Confidence => Ok(&self.expected),
            IntervalKind::Predictive => Ok(&self.predictive),
        }
    }

    /// Mean of the expected curves.
    pub fn point_curve(&self) -> Vec<f64> {
        (0..self.grid.len())
            .map(|j| mean(&self.expected.iter().map(|c| c[j]).collect::<Vec<_>>()))
            .collect()
    }

    pub fn point_at(&self, t: f64) -> f64 {
        interpolate(&self.grid, &self.point_curve(), t)
    }

    /// Point estimate and `alpha/2`, `1 - alpha/2` percentiles of the count
    /// at each time. Times at or before `t0` give the observed count.
    pub fn event_interval(&self, times: &[f64], alpha: f64, kind: IntervalKind) -> Result<Vec<IntervalRow>> {
        check_alpha(alpha)?;
        let curves = self.curves(kind)?;
        let point = self.point_curve();
        Ok(times
            .iter()
            .map(|&t| {
                if t <= self.t0 {
                    let d = self.observed_events as f64;
                    return IntervalRow { time: t, n_event: d, lower: d, upper: d };
                }
                let vals: Vec<f64> = curves.iter().map(|c| interpolate(&self.grid, c, t)).collect();
                let (med, lower, upper) = band(vals, alpha);
                let n_event = if alpha >= 1.0 { med } else { interpolate(&self.grid, &point, t) };
                IntervalRow { time: t, n_event, lower, upper }
            })
            .collect())
    }

    /// Calendar time at which each target count is reached. Bounds not
    /// reached within the grid are `None`.
    pub fn timeline_for_events(&self, targets: &[f64], alpha: f64, kind: IntervalKind) -> Result<Vec<TimelineRow>> {
        check_alpha(alpha)?;
        let curves = self.curves(kind)?;
        let point = self.point_curve();
        let finite = |x: f64| x.is_finite().then_some(x);
        Ok(targets
            .iter()
            .map(|&target| {
                if target <= self.observed_events as f64 {
                    return TimelineRow {
                        n_event: target,
                        time: Some(self.t0),
                        lower: Some(self.t0),
                        upper: Some(self.t0),
                        note: (target < self.observed_events as f64)
                            .then(|| "target already reached at analysis time".to_string()),
                    };
                }
                let times: Vec<f64> = curves.iter().map(|c| crossing(&self.grid, c, target)).collect();
                let (_, lower, upper) = band(times, alpha);
                let note = (target > self.max_events as f64).then(|| "target exceeds total sample".to_string());
                TimelineRow {
                    n_event: target,
                    time: finite(crossing(&self.grid, &point, target)),
                    lower: finite(lower),
                    upper: finite(upper),
                    note,
                }
            })
            .collect())
    }
}
