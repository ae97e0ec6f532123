//! Synthetic trials and design-stage follow-up summaries.
//!
//! Enrollment is uniform within each accrual month. Each subject gets latent
//! event, drop-out and death times; follow-up ends at the first of them.

use std::fmt;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distribution::PweModel;
use crate::error::{Error, Result};
use crate::rng::{derive_seed, stream, tag, StreamRng};
use crate::stats;
use crate::survdata::{cut_data, CensorReason, Observation, SurvSample};

/// Monthly drop-out probability to a constant hazard.
pub fn drop_hazard(monthly_prob: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&monthly_prob) {
        return Err(Error::InvalidConfig(format!("drop rate {monthly_prob} outside [0, 1)")));
    }
    Ok(-(-monthly_prob).ln_1p())
}

pub type SamplerFn = Arc<dyn Fn(&mut StreamRng) -> f64 + Send + Sync>;

/// Law of one latent time.
#[derive(Clone, Default)]
pub enum Law {
    /// Never happens (`+inf`).
    #[default]
    Never,
    Pwe(PweModel),
    /// Any sampler; must return a nonnegative time or `+inf`.
    Custom(SamplerFn),
}

impl Law {
    pub fn from_drop_rate(monthly_prob: f64) -> Result<Law> {
        let h = drop_hazard(monthly_prob)?;
        if h == 0.0 {
            Ok(Law::Never)
        } else {
            Ok(Law::Pwe(PweModel::exponential(h)?))
        }
    }

    pub fn draw(&self, rng: &mut StreamRng) -> f64 {
        match self {
            Law::Never => f64::INFINITY,
            Law::Pwe(m) => m.sample_one(rng),
            Law::Custom(f) => f(rng),
        }
    }
}

impl fmt::Debug for Law {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Law::Never => f.write_str("Never"),
            Law::Pwe(m) => f.debug_tuple("Pwe").field(m).finish(),
            Law::Custom(_) => f.write_str("Custom(..)"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Enrollment {
    /// Constant subjects per month until `total` are enrolled.
    Rate { per_month: f64, total: usize },
    /// Subjects enrolled in each month, in order.
    Counts(Vec<usize>),
}

impl Enrollment {
    pub fn total(&self) -> usize {
        match self {
            Enrollment::Rate { total, .. } => *total,
            Enrollment::Counts(c) => c.iter().sum(),
        }
    }

    /// Month (0-based) of each subject in enrollment order.
    pub fn months(&self) -> Result<Vec<usize>> {
        match self {
            Enrollment::Rate { per_month, total } => {
                if !(per_month.is_finite() && *per_month > 0.0) {
                    return Err(Error::InvalidConfig(format!("enrollment rate {per_month} must be positive")));
                }
                Ok((1..=*total)
                    .map(|j| ((j as f64 / per_month).ceil() as usize).saturating_sub(1))
                    .collect())
            }
            Enrollment::Counts(c) => Ok(c
                .iter()
                .enumerate()
                .flat_map(|(m, &k)| std::iter::repeat_n(m, k))
                .collect()),
        }
    }

    /// Calendar time at which enrollment ends.
    pub fn end(&self) -> f64 {
        match self {
            Enrollment::Rate { per_month, total } => (*total as f64 / per_month).ceil(),
            Enrollment::Counts(c) => c.len() as f64,
        }
    }
}

/// How subjects are assigned to groups.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Allocation {
    /// Permuted blocks of size equal to the summed integer weights.
    #[default]
    Blocks,
    /// Independent draws with probability proportional to weight.
    Iid,
}

#[derive(Debug, Clone, Default)]
pub struct CellLaws {
    pub event: Law,
    pub drop: Law,
    pub death: Law,
}

#[derive(Debug, Clone)]
pub struct TrialDesign {
    pub enrollment: Enrollment,
    /// Group names with integer allocation weights.
    pub groups: Vec<(String, u32)>,
    /// Stratum names with prevalence weights.
    pub strata: Vec<(String, f64)>,
    /// Laws for each (group, stratum), group-major.
    pub cells: Vec<CellLaws>,
    pub allocation: Allocation,
}

impl TrialDesign {
    /// One group, one stratum, events from `event`, no censoring.
    pub fn new(enrollment: Enrollment, event: Law) -> Self {
        Self {
            enrollment,
            groups: vec![("all".into(), 1)],
            strata: vec![("all".into(), 1.0)],
            cells: vec![CellLaws {
                event,
                ..CellLaws::default()
            }],
            allocation: Allocation::Blocks,
        }
    }

    /// Replace groups; every stratum of group `g` gets event law `groups[g].2`.
    /// Drop-out and death laws are carried over from the first cell.
    pub fn with_groups(mut self, groups: Vec<(String, u32, Law)>) -> Self {
        let base = self.cells[0].clone();
        let ns = self.strata.len();
        self.cells = groups
            .iter()
            .flat_map(|(_, _, law)| {
                (0..ns).map(|_| CellLaws {
                    event: law.clone(),
                    ..base.clone()
                })
            })
            .collect();
        self.groups = groups.into_iter().map(|(n, w, _)| (n, w)).collect();
        self
    }

    /// Replace strata, copying each group's first cell to every stratum.
    pub fn with_strata(mut self, strata: Vec<(String, f64)>) -> Self {
        let ns_old = self.strata.len();
        let ns = strata.len();
        self.cells = (0..self.groups.len())
            .flat_map(|g| {
                let c = self.cells[g * ns_old].clone();
                (0..ns).map(move |_| c.clone())
            })
            .collect();
        self.strata = strata;
        self
    }

    pub fn with_drop(mut self, law: Law) -> Self {
        for c in &mut self.cells {
            c.drop = law.clone();
        }
        self
    }

    pub fn with_drop_rate(self, monthly_prob: f64) -> Result<Self> {
        Ok(self.with_drop(Law::from_drop_rate(monthly_prob)?))
    }

    pub fn with_death(mut self, law: Law) -> Self {
        for c in &mut self.cells {
            c.death = law.clone();
        }
        self
    }

    pub fn with_allocation(mut self, allocation: Allocation) -> Self {
        self.allocation = allocation;
        self
    }

    pub fn cell_mut(&mut self, group: usize, stratum: usize) -> &mut CellLaws {
        let ns = self.strata.len();
        &mut self.cells[group * ns + stratum]
    }

    pub fn check(&self) -> Result<()> {
        if self.groups.is_empty() || self.strata.is_empty() {
            return Err(Error::InvalidConfig("design needs at least one group and stratum".into()));
        }
        if self.groups.iter().any(|g| g.1 == 0) {
            return Err(Error::InvalidConfig("allocation weights must be positive".into()));
        }
        if self.strata.iter().any(|s| !(s.1.is_finite() && s.1 > 0.0)) {
            return Err(Error::InvalidConfig("stratum weights must be positive".into()));
        }
        if self.cells.len() != self.groups.len() * self.strata.len() {
            return Err(Error::InvalidConfig("one law set is needed per group and stratum".into()));
        }
        self.enrollment.months().map(|_| ())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub id: usize,
    pub group: usize,
    pub stratum: usize,
    pub rand_t: f64,
    pub event_t: f64,
    pub drop_t: f64,
    pub death_t: f64,
    pub follow_t: f64,
    pub follow_abs: f64,
    pub event: bool,
    pub censor: bool,
    pub censor_reason: CensorReason,
}

impl TrialRecord {
    fn new(group: usize, stratum: usize, rand_t: f64, event_t: f64, drop_t: f64, death_t: f64) -> Self {
        let follow_t = event_t.min(drop_t).min(death_t);
        let (event, censor_reason) = if follow_t.is_infinite() {
            (false, CensorReason::NeverEvent)
        } else if event_t == follow_t {
            (true, CensorReason::None)
        } else if drop_t == follow_t {
            (false, CensorReason::DropOut)
        } else {
            (false, CensorReason::Death)
        };
        Self {
            id: 0,
            group,
            stratum,
            rand_t,
            event_t,
            drop_t,
            death_t,
            follow_t,
            follow_abs: rand_t + follow_t,
            event,
            censor: !event && follow_t.is_finite(),
            censor_reason,
        }
    }
}

/// Simulated trial, sorted by enrollment time with ids `1..=n`.
#[derive(Debug, Clone)]
pub struct Trial {
    pub records: Vec<TrialRecord>,
    pub group_names: Vec<String>,
    pub stratum_names: Vec<String>,
}

impl Trial {
    /// All records as a censored sample with calendar fields.
    pub fn to_sample(&self) -> SurvSample {
        self.records
            .iter()
            .map(|r| {
                Observation::new(r.follow_t, r.event).with_calendar(r.rand_t, r.follow_abs, r.censor_reason)
            })
            .collect()
    }

    /// Records of one group.
    pub fn group_sample(&self, group: usize) -> SurvSample {
        self.records
            .iter()
            .filter(|r| r.group == group)
            .map(|r| {
                Observation::new(r.follow_t, r.event).with_calendar(r.rand_t, r.follow_abs, r.censor_reason)
            })
            .collect()
    }
}

fn group_sequence(design: &TrialDesign, n: usize, rng: &mut StreamRng) -> Vec<usize> {
    let weights: Vec<u32> = design.groups.iter().map(|g| g.1).collect();
    match design.allocation {
        Allocation::Blocks => {
            let block: Vec<usize> = weights
                .iter()
                .enumerate()
                .flat_map(|(g, &w)| std::iter::repeat_n(g, w as usize))
                .collect();
            let mut out = Vec::with_capacity(n + block.len());
            while out.len() < n {
                let mut b = block.clone();
                b.shuffle(rng);
                out.extend(b);
            }
            out.truncate(n);
            out
        }
        Allocation::Iid => {
            let total: u32 = weights.iter().sum();
            (0..n)
                .map(|_| {
                    let mut u = rng.random_range(0..total);
                    weights
                        .iter()
                        .position(|&w| {
                            if u < w {
                                true
                            } else {
                                u -= w;
                                false
                            }
                        })
                        .unwrap_or(0)
                })
                .collect()
        }
    }
}

fn draw_stratum(weights: &[f64], total: f64, rng: &mut StreamRng) -> usize {
    if weights.len() == 1 {
        return 0;
    }
    let mut u = rng.random::<f64>() * total;
    for (s, &w) in weights.iter().enumerate() {
        if u < w {
            return s;
        }
        u -= w;
    }
    weights.len() - 1
}

/// Simulate one trial from `design`.
pub fn simulate_trial(design: &TrialDesign, seed: u64) -> Result<Trial> {
    design.check()?;
    let mut rng = stream(seed, &[tag::SIMULATE]);
    let months = design.enrollment.months()?;
    let mut rand_times: Vec<f64> = months.iter().map(|&m| m as f64 + rng.random::<f64>()).collect();
    rand_times.sort_by(f64::total_cmp);

    let groups = group_sequence(design, rand_times.len(), &mut rng);
    let sw: Vec<f64> = design.strata.iter().map(|s| s.1).collect();
    let sw_total: f64 = sw.iter().sum();
    let ns = design.strata.len();

    let records = rand_times
        .iter()
        .zip(groups)
        .enumerate()
        .map(|(i, (&rand_t, g))| {
            let s = draw_stratum(&sw, sw_total, &mut rng);
            let laws = &design.cells[g * ns + s];
            let event_t = laws.event.draw(&mut rng);
            let drop_t = laws.drop.draw(&mut rng);
            let death_t = laws.death.draw(&mut rng);
            let mut r = TrialRecord::new(g, s, rand_t, event_t, drop_t, death_t);
            r.id = i + 1;
            r
        })
        .collect();
    Ok(Trial {
        records,
        group_names: design.groups.iter().map(|g| g.0.clone()).collect(),
        stratum_names: design.strata.iter().map(|s| s.0.clone()).collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MilestoneKind {
    /// Calendar time since the first enrollment month began.
    Calendar,
    /// Cumulative number of events.
    Event,
    /// Cumulative number of enrolled subjects.
    Sample,
}

impl std::str::FromStr for MilestoneKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "calendar" => Ok(MilestoneKind::Calendar),
            "event" => Ok(MilestoneKind::Event),
            "sample" => Ok(MilestoneKind::Sample),
            other => Err(Error::InvalidConfig(format!("unknown milestone type {other:?}"))),
        }
    }
}

/// Latent times that end follow-up in addition to the data cut.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Endpoints {
    pub event: bool,
    pub drop_out: bool,
    pub death: bool,
}

impl Default for Endpoints {
    fn default() -> Self {
        Self {
            event: false,
            drop_out: true,
            death: false,
        }
    }
}

pub type StatFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// Summary of the follow-up times of enrolled subjects at a cut.
#[derive(Clone)]
pub enum FollowupStat {
    Mean,
    Median,
    Sum,
    /// Share of follow-up times at or above the threshold.
    PropAbove(f64),
    Custom(String, StatFn),
}

impl FollowupStat {
    pub fn name(&self) -> String {
        match self {
            FollowupStat::Mean => "mean".into(),
            FollowupStat::Median => "median".into(),
            FollowupStat::Sum => "sum".into(),
            FollowupStat::PropAbove(x) => format!("prop_{x}"),
            FollowupStat::Custom(n, _) => n.clone(),
        }
    }

    pub fn apply(&self, x: &[f64]) -> f64 {
        match self {
            FollowupStat::Mean => stats::mean(x),
            FollowupStat::Median => stats::median(x),
            FollowupStat::Sum => x.iter().sum(),
            FollowupStat::PropAbove(t) => {
                if x.is_empty() {
                    f64::NAN
                } else {
                    x.iter().filter(|&&v| v >= *t).count() as f64 / x.len() as f64
                }
            }
            FollowupStat::Custom(_, f) => f(x),
        }
    }
}

impl fmt::Debug for FollowupStat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl std::str::FromStr for FollowupStat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(FollowupStat::Mean),
            "median" => Ok(FollowupStat::Median),
            "sum" => Ok(FollowupStat::Sum),
            _ => s
                .strip_prefix("prop_")
                .and_then(|t| t.parse::<f64>().ok())
                .map(FollowupStat::PropAbove)
                .ok_or_else(|| Error::InvalidConfig(format!("unknown statistic {s:?}"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct FollowupConfig {
    pub at: Vec<f64>,
    pub kind: MilestoneKind,
    pub stats: Vec<FollowupStat>,
    pub endpoints: Endpoints,
    pub by_group: bool,
    pub rep: usize,
    pub seed: u64,
}

impl FollowupConfig {
    pub fn new(at: Vec<f64>, kind: MilestoneKind, rep: usize, seed: u64) -> Self {
        Self {
            at,
            kind,
            stats: vec![FollowupStat::Mean],
            endpoints: Endpoints::default(),
            by_group: false,
            rep,
            seed,
        }
    }
}

/// Averages over replicates at one milestone (and group, when split).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FollowupRow {
    pub milestone: f64,
    pub group: Option<String>,
    /// Mean resolved analysis (cut) time.
    pub time: f64,
    pub n_event: f64,
    pub n_subject: f64,
    /// Mean of each statistic, in the configured order.
    pub stats: Vec<(String, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FollowupSummary {
    pub rows: Vec<FollowupRow>,
    pub warnings: Vec<String>,
}

/// Calendar cut for a milestone; `None` when it is never reached.
pub fn resolve_cut(trial: &Trial, kind: MilestoneKind, milestone: f64) -> Result<Option<f64>> {
    if !(milestone.is_finite() && milestone > 0.0) {
        return Err(Error::InvalidConfig(format!("milestone {milestone} must be positive")));
    }
    let kth = |mut v: Vec<f64>| -> Result<Option<f64>> {
        let k = milestone.round() as usize;
        if k == 0 {
            return Err(Error::InvalidConfig(format!("milestone {milestone} rounds to zero")));
        }
        v.sort_by(f64::total_cmp);
        Ok(v.get(k - 1).copied())
    };
    match kind {
        MilestoneKind::Calendar => Ok(Some(milestone)),
        MilestoneKind::Event => kth(trial.records.iter().filter(|r| r.event).map(|r| r.follow_abs).collect()),
        MilestoneKind::Sample => kth(trial.records.iter().map(|r| r.rand_t).collect()),
    }
}

struct RepValue {
    time: f64,
    n_event: f64,
    n_subject: f64,
    stats: Vec<f64>,
}

fn summarize(
    trial: &Trial,
    cut: f64,
    group: Option<usize>,
    cfg: &FollowupConfig,
) -> Result<RepValue> {
    let idx: Vec<usize> = (0..trial.records.len())
        .filter(|&i| group.is_none_or(|g| trial.records[i].group == g))
        .collect();
    let sub = trial.to_sample().select(&idx);
    let cutd = cut_data(&sub, cut)?;
    let latent: Vec<&TrialRecord> = idx
        .iter()
        .map(|&i| &trial.records[i])
        .filter(|r| r.rand_t <= cut)
        .collect();
    let follow: Vec<f64> = latent
        .iter()
        .map(|r| {
            let mut f = cut - r.rand_t;
            if cfg.endpoints.drop_out {
                f = f.min(r.drop_t);
            }
            if cfg.endpoints.event {
                f = f.min(r.event_t);
            }
            if cfg.endpoints.death {
                f = f.min(r.death_t);
            }
            f
        })
        .collect();
    Ok(RepValue {
        time: cut,
        n_event: cutd.n_events() as f64,
        n_subject: cutd.len() as f64,
        stats: cfg.stats.iter().map(|s| s.apply(&follow)).collect(),
    })
}

/// Simulate `cfg.rep` trials and average event counts, enrolled counts and
/// follow-up statistics at each milestone.
pub fn sim_followup(design: &TrialDesign, cfg: &FollowupConfig) -> Result<FollowupSummary> {
    design.check()?;
    if cfg.rep == 0 {
        return Err(Error::InvalidConfig("rep must be at least 1".into()));
    }
    if cfg.at.is_empty() {
        return Err(Error::InvalidConfig("at least one milestone is required".into()));
    }
    let groups: Vec<Option<usize>> = if cfg.by_group {
        (0..design.groups.len()).map(Some).collect()
    } else {
        vec![None]
    };

    type RepOut = (Vec<Vec<RepValue>>, Vec<String>);
    let per_rep: Vec<Result<RepOut>> = (0..cfg.rep)
        .into_par_iter()
        .map(|i| {
            let trial = simulate_trial(design, derive_seed(cfg.seed, &[tag::FOLLOWUP, i as u64]))?;
            let mut warnings = Vec::new();
            let mut out = Vec::with_capacity(cfg.at.len());
            for &m in &cfg.at {
                let cut = match resolve_cut(&trial, cfg.kind, m)? {
                    Some(c) => c,
                    None => {
                        let end = trial
                            .records
                            .iter()
                            .map(|r| r.follow_abs)
                            .filter(|t| t.is_finite())
                            .fold(trial.records.last().map_or(0.0, |r| r.rand_t), f64::max);
                        warnings.push(format!("replicate {i}: milestone {m} not reached; used end of follow-up {end}"));
                        end
                    }
                };
                out.push(groups.iter().map(|&g| summarize(&trial, cut, g, cfg)).collect::<Result<Vec<_>>>()?);
            }
            Ok((out, warnings))
        })
        .collect();

    let mut all = Vec::with_capacity(cfg.rep);
    let mut warnings = Vec::new();
    for r in per_rep {
        let (v, w) = r?;
        all.push(v);
        warnings.extend(w);
    }

    let mut rows = Vec::new();
    for (mi, &m) in cfg.at.iter().enumerate() {
        for (gi, g) in groups.iter().enumerate() {
            let vals: Vec<&RepValue> = all.iter().map(|rep| &rep[mi][gi]).collect();
            let avg = |f: &dyn Fn(&RepValue) -> f64| {
                let xs: Vec<f64> = vals.iter().map(|v| f(v)).filter(|x| x.is_finite()).collect();
                stats::mean(&xs)
            };
            rows.push(FollowupRow {
                milestone: m,
                group: g.map(|g| design.groups[g].0.clone()),
                time: avg(&|v| v.time),
                n_event: avg(&|v| v.n_event),
                n_subject: avg(&|v| v.n_subject),
                stats: cfg
                    .stats
                    .iter()
                    .enumerate()
                    .map(|(k, s)| (s.name(), avg(&|v| v.stats[k])))
                    .collect(),
            });
        }
    }
    Ok(FollowupSummary { rows, warnings })
}
