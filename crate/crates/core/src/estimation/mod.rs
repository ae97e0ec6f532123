//! Fitting piecewise exponential models to right-censored data.
//!
//! With change-points known, hazard MLEs are closed form: events in a piece
//! divided by exposure time in that piece. With change-points unknown the
//! log-likelihood is maximised only at sample times, so the searches here
//! place candidates at distinct event times:
//!
//! - [`fit_bfs`]: enumerate candidate combinations (random sub-sampling when
//!   there are more than `max_set`).
//! - [`fit_ols`]: segmented least squares on the log Kaplan–Meier curve,
//!   then closed-form rates at the fitted change-points.
//! - [`fit_hybrid`]: segmented fit first, then exhaustive search over event
//!   times inside each change-point's confidence window.
//!
//! [`fit`] validates user-supplied change-points and dispatches.

mod likelihood;
mod ols;
mod search;
mod segmented;
mod validate;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::distribution::PweModel;
use crate::error::{Error, Result};
use crate::survdata::SurvSample;

pub use likelihood::{loglik, PieceTally, PreparedData};
pub use ols::{fit_hybrid, fit_ols};
pub use search::fit_bfs;
pub use segmented::{segment_log_survival, SegmentedFit};

/// Change-point search strategy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    Bfs,
    Ols,
    #[default]
    Hybrid,
}

impl FromStr for Optimizer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "bfs" => Ok(Optimizer::Bfs),
            "ols" => Ok(Optimizer::Ols),
            "hybrid" | "mle" => Ok(Optimizer::Hybrid),
            other => Err(Error::InvalidConfig(format!("unknown optimizer {other:?}"))),
        }
    }
}

/// How the returned model was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FitMethod {
    /// Closed-form rates at known change-points (including none).
    Fixed,
    Bfs,
    Ols,
    Hybrid,
}

impl FitMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            FitMethod::Fixed => "fixed",
            FitMethod::Bfs => "bfs",
            FitMethod::Ols => "ols",
            FitMethod::Hybrid => "hybrid",
        }
    }
}

impl fmt::Display for FitMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FitMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fixed" => Ok(FitMethod::Fixed),
            "bfs" => Ok(FitMethod::Bfs),
            "ols" => Ok(FitMethod::Ols),
            "hybrid" => Ok(FitMethod::Hybrid),
            other => Err(Error::InvalidConfig(format!("unknown fit method {other:?}"))),
        }
    }
}

/// Half-open time interval `[start, end)` that may not contain change-points.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExcludeInterval {
    #[serde(with = "crate::serde_inf")]
    pub start: f64,
    #[serde(with = "crate::serde_inf")]
    pub end: f64,
}

impl ExcludeInterval {
    pub fn new(start: f64, end: f64) -> Result<Self> {
        if start.is_nan() || end.is_nan() || start >= end {
            return Err(Error::InvalidConfig(format!(
                "excluded interval [{start}, {end}) is empty"
            )));
        }
        Ok(Self { start, end })
    }

    pub fn contains(&self, t: f64) -> bool {
        self.start <= t && t < self.end
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    /// Total number of change-points, including fixed ones.
    pub nbreak: usize,
    /// Change-points known in advance; kept as given (after validation).
    pub fixed_breakpoints: Vec<f64>,
    pub optimizer: Optimizer,
    /// Cap on candidate combinations evaluated by the searches.
    pub max_set: usize,
    /// Minimum number of events at or after the last searched change-point.
    pub min_pt_tail: usize,
    pub exclude_int: Option<ExcludeInterval>,
    pub seed: u64,
    /// Normal quantile for the hybrid search window around each segmented estimate.
    pub ci_z: f64,
    /// Random restarts of the segmented regression after the quantile start.
    pub ols_restarts: usize,
    pub ols_max_iter: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            nbreak: 0,
            fixed_breakpoints: Vec::new(),
            optimizer: Optimizer::Hybrid,
            max_set: 10_000,
            min_pt_tail: 5,
            exclude_int: None,
            seed: 0,
            ci_z: 1.959_963_984_540_054,
            ols_restarts: 5,
            ols_max_iter: 50,
        }
    }
}

impl FitConfig {
    pub fn new(nbreak: usize) -> Self {
        Self {
            nbreak,
            ..Self::default()
        }
    }

    /// All change-points fixed at `breakpoints`.
    pub fn fixed(breakpoints: Vec<f64>) -> Self {
        Self {
            nbreak: breakpoints.len(),
            fixed_breakpoints: breakpoints,
            ..Self::default()
        }
    }

    pub fn with_optimizer(mut self, optimizer: Optimizer) -> Self {
        self.optimizer = optimizer;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn check(&self) -> Result<()> {
        if self.fixed_breakpoints.len() > self.nbreak {
            return Err(Error::InvalidConfig(format!(
                "nbreak = {} is smaller than the {} fixed change-points",
                self.nbreak,
                self.fixed_breakpoints.len()
            )));
        }
        if self.max_set == 0 {
            return Err(Error::InvalidConfig("max_set must be at least 1".into()));
        }
        if self.min_pt_tail == 0 {
            return Err(Error::InvalidConfig("min_pt_tail must be at least 1".into()));
        }
        if let Some(ex) = self.exclude_int {
            ExcludeInterval::new(ex.start, ex.end)?;
        }
        if !(self.ci_z.is_finite() && self.ci_z > 0.0) {
            return Err(Error::InvalidConfig("ci_z must be positive".into()));
        }
        Ok(())
    }

    pub fn excluded(&self, t: f64) -> bool {
        self.exclude_int.is_some_and(|ex| ex.contains(t))
    }

    /// Tail controls: no change-point in the excluded interval and at least
    /// `min_pt_tail` events from the last change-point on.
    pub fn admissible(&self, breaks: &[f64], data: &PreparedData) -> bool {
        match breaks.last() {
            None => true,
            Some(&last) => {
                !breaks.iter().any(|&d| self.excluded(d)) && data.events_from(last) >= self.min_pt_tail
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Diagnostics {
    pub combinations_evaluated: usize,
    pub warnings: Vec<String>,
}

/// A fitted model with its log-likelihood and information criteria.
#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub model: PweModel,
    pub loglik: f64,
    pub aic: f64,
    pub bic: f64,
    pub n_obs: usize,
    pub n_param: usize,
    pub method: FitMethod,
    pub diagnostics: Diagnostics,
}

impl FitResult {
    /// Attach AIC and BIC with `2r + 1` parameters for `r` change-points.
    pub fn new(model: PweModel, loglik: f64, n_obs: usize, method: FitMethod) -> Self {
        let n_param = 2 * model.n_breakpoints() + 1;
        let k = n_param as f64;
        Self {
            model,
            loglik,
            aic: -2.0 * loglik + 2.0 * k,
            bic: -2.0 * loglik + k * (n_obs as f64).ln(),
            n_obs,
            n_param,
            method,
            diagnostics: Diagnostics::default(),
        }
    }

    pub fn rates(&self) -> &[f64] {
        self.model.rates()
    }

    pub fn breakpoints(&self) -> &[f64] {
        self.model.breakpoints()
    }

    pub fn warnings(&self) -> &[String] {
        &self.diagnostics.warnings
    }

    /// One-line summary: `brk1 … lam1 … likelihood AIC BIC`.
    pub fn summary_table(&self) -> String {
        let mut head = Vec::new();
        let mut vals = Vec::new();
        for (i, d) in self.breakpoints().iter().enumerate() {
            head.push(format!("brk{}", i + 1));
            vals.push(format!("{d:.7}"));
        }
        for (i, l) in self.rates().iter().enumerate() {
            head.push(format!("lam{}", i + 1));
            vals.push(format!("{l:.7}"));
        }
        head.extend(["likelihood", "AIC", "BIC"].map(String::from));
        vals.extend([self.loglik, self.aic, self.bic].map(|x| format!("{x:.3}")));
        let width: Vec<usize> = head.iter().zip(&vals).map(|(h, v)| h.len().max(v.len())).collect();
        let line = |cells: &[String]| {
            cells
                .iter()
                .zip(&width)
                .map(|(c, w)| format!("{c:>w$}"))
                .collect::<Vec<_>>()
                .join(" ")
        };
        format!("{}\n{}", line(&head), line(&vals))
    }
}

#[derive(Serialize, Deserialize)]
struct FitResultDoc {
    rates: Vec<f64>,
    breakpoints: Vec<f64>,
    #[serde(with = "crate::serde_inf")]
    loglik: f64,
    #[serde(with = "crate::serde_inf")]
    aic: f64,
    #[serde(with = "crate::serde_inf")]
    bic: f64,
    n_obs: usize,
    optimizer: String,
    #[serde(default)]
    warnings: Vec<String>,
}

impl Serialize for FitResult {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        FitResultDoc {
            rates: self.rates().to_vec(),
            breakpoints: self.breakpoints().to_vec(),
            loglik: self.loglik,
            aic: self.aic,
            bic: self.bic,
            n_obs: self.n_obs,
            optimizer: self.method.as_str().to_string(),
            warnings: self.diagnostics.warnings.clone(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for FitResult {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let doc = FitResultDoc::deserialize(d)?;
        let model = PweModel::new(doc.rates, doc.breakpoints).map_err(D::Error::custom)?;
        let method = doc.optimizer.parse().map_err(D::Error::custom)?;
        Ok(FitResult {
            n_param: 2 * model.n_breakpoints() + 1,
            model,
            loglik: doc.loglik,
            aic: doc.aic,
            bic: doc.bic,
            n_obs: doc.n_obs,
            method,
            diagnostics: Diagnostics {
                combinations_evaluated: 0,
                warnings: doc.warnings,
            },
        })
    }
}

/// Prepared data plus validated fixed change-points, shared by the searches.
pub(crate) struct FitContext {
    pub prepared: PreparedData,
    pub fixed: Vec<f64>,
    pub free: usize,
    pub warnings: Vec<String>,
}

impl FitContext {
    pub fn new(data: &SurvSample, config: &FitConfig) -> Result<Self> {
        config.check()?;
        let prepared = PreparedData::new(data)?;
        if prepared.n_events() == 0 {
            return Err(Error::InvalidData("no events in data".into()));
        }
        let (fixed, warnings) = validate::validate_prepared(&config.fixed_breakpoints, &prepared);
        // Fixed change-points dropped by validation are not replaced by searched ones.
        let free = config.nbreak.saturating_sub(config.fixed_breakpoints.len());
        Ok(Self {
            prepared,
            fixed,
            free,
            warnings,
        })
    }

    pub fn finish(&self, breaks: &[f64], method: FitMethod, evaluated: usize) -> Result<FitResult> {
        let (model, ll) = likelihood::mle_on_prepared(&self.prepared, breaks)?;
        let mut fit = FitResult::new(model, ll, self.prepared.n_obs(), method);
        fit.diagnostics = Diagnostics {
            combinations_evaluated: evaluated,
            warnings: self.warnings.clone(),
        };
        Ok(fit)
    }
}

/// Closed-form hazard MLEs at the given change-points.
pub fn mle_given_breakpoints(breakpoints: &[f64], data: &SurvSample) -> Result<FitResult> {
    let prepared = PreparedData::new(data)?;
    let (model, ll) = likelihood::mle_on_prepared(&prepared, breakpoints)?;
    Ok(FitResult::new(model, ll, prepared.n_obs(), FitMethod::Fixed))
}

/// Drop or merge change-points that would leave a piece without events.
pub fn validate_breakpoints(breakpoints: &[f64], data: &SurvSample) -> Result<(Vec<f64>, Vec<String>)> {
    let prepared = PreparedData::new(data)?;
    Ok(validate::validate_prepared(breakpoints, &prepared))
}

/// Fit a PWE model according to `config`.
pub fn fit(data: &SurvSample, config: &FitConfig) -> Result<FitResult> {
    let ctx = FitContext::new(data, config)?;
    if config.nbreak == 0 || ctx.free == 0 {
        return ctx.finish(&ctx.fixed, FitMethod::Fixed, 1);
    }
    match config.optimizer {
        Optimizer::Bfs => search::bfs(&ctx, config),
        Optimizer::Ols => ols::ols(data, &ctx, config),
        Optimizer::Hybrid => ols::hybrid(data, &ctx, config),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn information_criteria() {
        let m = PweModel::new(vec![0.023956, 0.009931584, 0.004189957], vec![14.716, 29.85]).unwrap();
        let f = FitResult::new(m, -1065.844, 428, FitMethod::Hybrid);
        assert_eq!(f.n_param, 5);
        assert!((f.aic - 2141.688).abs() < 1e-9);
        assert!((f.bic - f.aic - 5.0 * ((428f64).ln() - 2.0)).abs() < 1e-9);
    }

    #[test]
    fn json_shape() {
        let m = PweModel::new(vec![0.1, 0.2], vec![3.0]).unwrap();
        let mut f = FitResult::new(m, -10.0, 20, FitMethod::Bfs);
        f.diagnostics.warnings.push("w".into());
        let v: serde_json::Value = serde_json::to_value(&f).unwrap();
        let keys: Vec<&str> = v.as_object().unwrap().keys().map(String::as_str).collect();
        assert_eq!(
            keys,
            ["rates", "breakpoints", "loglik", "aic", "bic", "n_obs", "optimizer", "warnings"]
        );
        assert_eq!(v["optimizer"], "bfs");
        let back: FitResult = serde_json::from_value(v).unwrap();
        assert_eq!(back.model, f.model);
        assert_eq!(back.aic, f.aic);
        assert_eq!(back.n_param, 3);
    }

    #[test]
    fn config_checks() {
        let mut c = FitConfig::new(1);
        c.fixed_breakpoints = vec![1.0, 2.0];
        assert!(c.check().is_err());
        let mut c = FitConfig::new(1);
        c.max_set = 0;
        assert!(c.check().is_err());
        let mut c = FitConfig::new(1);
        c.min_pt_tail = 0;
        assert!(c.check().is_err());
        assert!(ExcludeInterval::new(5.0, 5.0).is_err());
        let ex = ExcludeInterval::new(23.0, f64::INFINITY).unwrap();
        assert!(ex.contains(23.0) && ex.contains(1e9) && !ex.contains(22.99));
    }

    #[test]
    fn summary_lists_fields() {
        let m = PweModel::new(vec![0.1, 0.2], vec![3.0]).unwrap();
        let s = FitResult::new(m, -10.0, 20, FitMethod::Bfs).summary_table();
        let head = s.lines().next().unwrap();
        assert_eq!(
            head.split_whitespace().collect::<Vec<_>>(),
            ["brk1", "lam1", "lam2", "likelihood", "AIC", "BIC"]
        );
    }
}
