//! CSV readers and writers. Infinite values are written as `Inf`.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::prediction::{IntervalRow, TimelineRow};
use crate::serde_inf::{parse_sentinel, sentinel};
use crate::simulation::{FollowupSummary, Trial};
use crate::survdata::{CensorReason, KmCurve, Observation, SurvSample};

/// Number formatting for CSV output: shortest round-trip decimal, or a sentinel.
pub fn fmt_num(x: f64) -> String {
    if x.is_finite() {
        format!("{x}")
    } else {
        sentinel(x).to_string()
    }
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map_or_else(|| "NA".to_string(), fmt_num)
}

pub fn parse_num(s: &str) -> Result<f64> {
    let s = s.trim();
    parse_sentinel(s)
        .or_else(|| s.parse::<f64>().ok())
        .ok_or_else(|| Error::InvalidData(format!("{s:?} is not a number")))
}

fn parse_event(s: &str) -> Result<bool> {
    match s.trim() {
        "1" | "1.0" | "true" | "TRUE" | "T" => Ok(true),
        "0" | "0.0" | "false" | "FALSE" | "F" => Ok(false),
        other => Err(Error::InvalidData(format!("{other:?} is not an event indicator"))),
    }
}

/// Column names for reading a censored sample.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Columns {
    pub time: String,
    pub event: String,
    /// Calendar columns; used only when all three are present in the file.
    pub rand_time: String,
    pub follow_abs: String,
    pub censor_reason: String,
}

impl Default for Columns {
    fn default() -> Self {
        Self {
            time: "followT".into(),
            event: "event".into(),
            rand_time: "randT".into(),
            follow_abs: "followT_abs".into(),
            censor_reason: "censor_reason".into(),
        }
    }
}

pub fn read_sample<R: Read>(reader: R, cols: &Columns) -> Result<SurvSample> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let find = |name: &str| headers.iter().position(|h| h == name);
    let need = |name: &str| {
        find(name).ok_or_else(|| Error::InvalidData(format!("column {name:?} not found; have {headers:?}")))
    };
    let ti = need(&cols.time)?;
    let ei = need(&cols.event)?;
    let cal = match (find(&cols.rand_time), find(&cols.follow_abs), find(&cols.censor_reason)) {
        (Some(r), Some(f), Some(c)) => Some((r, f, c)),
        _ => None,
    };

    let mut out = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let field = |i: usize| rec.get(i).unwrap_or("");
        let ctx = |e: Error| Error::InvalidData(format!("row {}: {e}", line + 1));
        let time = parse_num(field(ti)).map_err(ctx)?;
        let event = parse_event(field(ei)).map_err(ctx)?;
        let mut obs = Observation::new(time, event);
        if let Some((r, f, c)) = cal {
            let reason: CensorReason = field(c).parse().map_err(ctx)?;
            obs = obs.with_calendar(parse_num(field(r)).map_err(ctx)?, parse_num(field(f)).map_err(ctx)?, reason);
        }
        out.push(obs);
    }
    SurvSample::new(out)
}

/// Write a sample with the default column names.
pub fn write_sample<W: Write>(writer: W, data: &SurvSample) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let cal = data.has_calendar();
    if cal {
        w.write_record(["followT", "event", "randT", "followT_abs", "censor_reason"])?;
    } else {
        w.write_record(["followT", "event"])?;
    }
    for r in data.records() {
        let mut row = vec![fmt_num(r.time), (r.event as u8).to_string()];
        if let Some(c) = r.calendar {
            row.extend([fmt_num(c.rand_time), fmt_num(c.follow_abs_time), c.censor_reason.to_string()]);
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Simulated trial with the conventional column names; group and stratum
/// columns are added when there is more than one of each.
pub fn write_trial<W: Write>(writer: W, trial: &Trial) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let groups = trial.group_names.len() > 1;
    let strata = trial.stratum_names.len() > 1;
    let mut header = vec![
        "ID", "randT", "eventT", "dropT", "deathT", "censor_reason", "event", "followT", "followT_abs",
    ];
    if groups {
        header.push("group");
    }
    if strata {
        header.push("strata");
    }
    w.write_record(&header)?;
    for r in &trial.records {
        let mut row = vec![
            r.id.to_string(),
            fmt_num(r.rand_t),
            fmt_num(r.event_t),
            fmt_num(r.drop_t),
            fmt_num(r.death_t),
            r.censor_reason.to_string(),
            (r.event as u8).to_string(),
            fmt_num(r.follow_t),
            fmt_num(r.follow_abs),
        ];
        if groups {
            row.push(trial.group_names[r.group].clone());
        }
        if strata {
            row.push(trial.stratum_names[r.stratum].clone());
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Step table starting at `(0, 1)`.
pub fn write_km<W: Write>(writer: W, km: &KmCurve) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["time", "survival", "n_risk", "n_event"])?;
    let n0 = km.steps.first().map_or(0, |s| s.at_risk);
    w.write_record(["0".to_string(), "1".to_string(), n0.to_string(), "0".to_string()])?;
    for s in &km.steps {
        w.write_record([fmt_num(s.time), fmt_num(s.survival), s.at_risk.to_string(), s.events.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Two-column curve table.
pub fn write_curve<W: Write>(writer: W, names: [&str; 2], points: &[(f64, f64)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(names)?;
    for &(a, b) in points {
        w.write_record([fmt_num(a), fmt_num(b)])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_values<W: Write>(writer: W, name: &str, values: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([name])?;
    for &v in values {
        w.write_record([fmt_num(v)])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_intervals<W: Write>(writer: W, rows: &[IntervalRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["time", "n_event", "lower", "upper"])?;
    for r in rows {
        w.write_record([fmt_num(r.time), fmt_num(r.n_event), fmt_num(r.lower), fmt_num(r.upper)])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_timeline<W: Write>(writer: W, rows: &[TimelineRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["n_event", "time", "lower", "upper"])?;
    for r in rows {
        w.write_record([fmt_num(r.n_event), fmt_opt(r.time), fmt_opt(r.lower), fmt_opt(r.upper)])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_followup<W: Write>(writer: W, summary: &FollowupSummary) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let grouped = summary.rows.iter().any(|r| r.group.is_some());
    let mut header = vec!["milestone".to_string()];
    if grouped {
        header.push("group".into());
    }
    header.extend(["time", "n_event", "n_subject"].map(String::from));
    if let Some(r) = summary.rows.first() {
        header.extend(r.stats.iter().map(|(n, _)| n.clone()));
    }
    w.write_record(&header)?;
    for r in &summary.rows {
        let mut row = vec![fmt_num(r.milestone)];
        if grouped {
            row.push(r.group.clone().unwrap_or_default());
        }
        row.extend([fmt_num(r.time), fmt_num(r.n_event), fmt_num(r.n_subject)]);
        row.extend(r.stats.iter().map(|(_, v)| fmt_num(*v)));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}
