//! Right-censored samples, the product-limit estimator, and data cut-off.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Why follow-up ended without the event of interest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CensorReason {
    /// Not censored (event observed).
    #[default]
    None,
    DropOut,
    Death,
    /// Every latent time is infinite.
    NeverEvent,
    /// Re-censored at a data cut-off.
    Cut,
}

impl CensorReason {
    pub fn as_str(self) -> &'static str {
        match self {
            CensorReason::None => "NA",
            CensorReason::DropOut => "drop_out",
            CensorReason::Death => "death",
            CensorReason::NeverEvent => "never_event",
            CensorReason::Cut => "cut",
        }
    }
}

impl fmt::Display for CensorReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CensorReason {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "" | "NA" | "<NA>" | "none" => Ok(CensorReason::None),
            "drop_out" => Ok(CensorReason::DropOut),
            "death" => Ok(CensorReason::Death),
            "never_event" => Ok(CensorReason::NeverEvent),
            "cut" => Ok(CensorReason::Cut),
            other => Err(Error::InvalidData(format!("unknown censor reason {other:?}"))),
        }
    }
}

/// Absolute (calendar) fields of a record, measured from trial start.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Calendar {
    pub rand_time: f64,
    pub follow_abs_time: f64,
    pub censor_reason: CensorReason,
}

/// One subject: time from randomization and event indicator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub time: f64,
    pub event: bool,
    pub calendar: Option<Calendar>,
}

impl Observation {
    pub fn new(time: f64, event: bool) -> Self {
        Self {
            time,
            event,
            calendar: None,
        }
    }

    pub fn with_calendar(mut self, rand_time: f64, follow_abs_time: f64, reason: CensorReason) -> Self {
        self.calendar = Some(Calendar {
            rand_time,
            follow_abs_time,
            censor_reason: reason,
        });
        self
    }
}

/// A right-censored sample.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SurvSample {
    records: Vec<Observation>,
}

impl SurvSample {
    pub fn new(records: Vec<Observation>) -> Result<Self> {
        for (i, r) in records.iter().enumerate() {
            let never = r
                .calendar
                .is_some_and(|c| c.censor_reason == CensorReason::NeverEvent);
            let ok = r.time >= 0.0 && (r.time.is_finite() || (never && r.time == f64::INFINITY));
            if !ok {
                return Err(Error::InvalidData(format!(
                    "record {} has time {}; times must be finite and >= 0",
                    i + 1,
                    r.time
                )));
            }
            if let Some(c) = r.calendar {
                if !c.rand_time.is_finite() || c.rand_time < 0.0 {
                    return Err(Error::InvalidData(format!(
                        "record {} has randomization time {}",
                        i + 1,
                        c.rand_time
                    )));
                }
            }
        }
        Ok(Self { records })
    }

    pub fn from_times(times: &[f64], events: &[bool]) -> Result<Self> {
        if times.len() != events.len() {
            return Err(Error::InvalidData(format!(
                "{} times but {} event indicators",
                times.len(),
                events.len()
            )));
        }
        Self::new(
            times
                .iter()
                .zip(events)
                .map(|(&t, &e)| Observation::new(t, e))
                .collect(),
        )
    }

    pub fn records(&self) -> &[Observation] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn n_events(&self) -> usize {
        self.records.iter().filter(|r| r.event).count()
    }

    pub fn times(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.time).collect()
    }

    pub fn events(&self) -> Vec<bool> {
        self.records.iter().map(|r| r.event).collect()
    }

    /// Sorted distinct event times.
    pub fn distinct_event_times(&self) -> Vec<f64> {
        let mut t: Vec<f64> = self
            .records
            .iter()
            .filter(|r| r.event)
            .map(|r| r.time)
            .collect();
        t.sort_by(f64::total_cmp);
        t.dedup();
        t
    }

    pub fn has_calendar(&self) -> bool {
        self.records.iter().all(|r| r.calendar.is_some())
    }

    /// Records at the given indices, repeats allowed.
    pub fn select(&self, indices: &[usize]) -> SurvSample {
        SurvSample {
            records: indices.iter().map(|&i| self.records[i]).collect(),
        }
    }

    /// Same records with the event indicator replaced by `f(record)`.
    pub fn relabel(&self, f: impl Fn(&Observation) -> bool) -> SurvSample {
        SurvSample {
            records: self
                .records
                .iter()
                .map(|r| Observation { event: f(r), ..*r })
                .collect(),
        }
    }

    /// Copy with every time multiplied by `factor`.
    pub fn rescaled(&self, factor: f64) -> SurvSample {
        SurvSample {
            records: self
                .records
                .iter()
                .map(|r| Observation {
                    time: r.time * factor,
                    ..*r
                })
                .collect(),
        }
    }
}

impl FromIterator<Observation> for SurvSample {
    fn from_iter<I: IntoIterator<Item = Observation>>(iter: I) -> Self {
        SurvSample {
            records: iter.into_iter().collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KmStep {
    pub time: f64,
    pub survival: f64,
    pub at_risk: usize,
    pub events: usize,
}

/// Product-limit survival estimate, one step per distinct event time.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct KmCurve {
    pub steps: Vec<KmStep>,
}

impl KmCurve {
    /// `Ŝ(t)`, right-continuous step function starting at 1.
    pub fn survival_at(&self, t: f64) -> f64 {
        let k = self.steps.partition_point(|s| s.time <= t);
        if k == 0 {
            1.0
        } else {
            self.steps[k - 1].survival
        }
    }

    /// `(t, log Ŝ(t))` at event times where `Ŝ > 0`.
    pub fn log_points(&self) -> Vec<(f64, f64)> {
        self.steps
            .iter()
            .filter(|s| s.survival > 0.0)
            .map(|s| (s.time, s.survival.ln()))
            .collect()
    }
}

/// Kaplan–Meier estimate. Events at a tied time are processed before
/// censorings at that time, so the censored subjects count as at risk.
pub fn km_fit(data: &SurvSample) -> Result<KmCurve> {
    if data.is_empty() {
        return Err(Error::EmptyData);
    }
    let mut obs: Vec<(f64, bool)> = data.records.iter().map(|r| (r.time, r.event)).collect();
    obs.sort_by(|a, b| a.0.total_cmp(&b.0));

    let mut steps = Vec::new();
    let mut at_risk = obs.len();
    let mut surv = 1.0;
    let mut i = 0;
    while i < obs.len() {
        let t = obs[i].0;
        let mut j = i;
        let mut events = 0;
        while j < obs.len() && obs[j].0 == t {
            events += usize::from(obs[j].1);
            j += 1;
        }
        if events > 0 {
            surv *= 1.0 - events as f64 / at_risk as f64;
            steps.push(KmStep {
                time: t,
                survival: surv,
                at_risk,
                events,
            });
        }
        at_risk -= j - i;
        i = j;
    }
    Ok(KmCurve { steps })
}

/// Freeze the data at calendar time `cut`: subjects randomized after the cut
/// are removed, and follow-up extending past it is re-censored at the cut.
pub fn cut_data(data: &SurvSample, cut: f64) -> Result<SurvSample> {
    if !(cut.is_finite() && cut > 0.0) {
        return Err(Error::Domain(format!("cut time {cut} must be positive and finite")));
    }
    let mut out = Vec::with_capacity(data.len());
    for r in &data.records {
        let cal = r.calendar.ok_or(Error::MissingCalendar)?;
        if cal.rand_time > cut {
            continue;
        }
        if cal.follow_abs_time > cut {
            out.push(Observation {
                time: cut - cal.rand_time,
                event: false,
                calendar: Some(Calendar {
                    rand_time: cal.rand_time,
                    follow_abs_time: cut,
                    censor_reason: CensorReason::Cut,
                }),
            });
        } else {
            out.push(*r);
        }
    }
    Ok(SurvSample { records: out })
}
