//! Case-resampling bootstrap of fits and repeated hold-out cross-validation.
//!
//! Every replicate draws from its own stream derived from the master seed
//! and the replicate index, so results do not depend on scheduling.

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distribution::PweModel;
use crate::error::{Error, Result};
use crate::estimation::{fit, loglik, FitConfig, FitResult};
use crate::rng::{derive_seed, stream, tag, StreamRng};
use crate::stats::quantile;
use crate::survdata::SurvSample;

/// Redraws allowed for a cross-validation split whose training fit fails.
const CV_REDRAWS: u64 = 5;
/// Share of records held out in each cross-validation repetition.
pub const CV_TEST_FRACTION: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateFailure {
    pub index: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootFit {
    pub replicates: Vec<FitResult>,
    pub seed: u64,
    pub nsim: usize,
    #[serde(default)]
    pub failures: Vec<ReplicateFailure>,
    #[serde(default)]
    pub config: FitConfig,
}

impl BootFit {
    /// Percentile interval for the `k`-th change-point (0-based) at level `1 - alpha`.
    /// Replicates with fewer change-points are left out.
    pub fn breakpoint_interval(&self, k: usize, alpha: f64) -> Option<(f64, f64)> {
        let vals: Vec<f64> = self
            .replicates
            .iter()
            .filter_map(|r| r.breakpoints().get(k).copied())
            .collect();
        interval(&vals, alpha)
    }

    pub fn rate_interval(&self, k: usize, alpha: f64) -> Option<(f64, f64)> {
        let vals: Vec<f64> = self
            .replicates
            .iter()
            .filter_map(|r| r.rates().get(k).copied())
            .collect();
        interval(&vals, alpha)
    }

    pub fn models(&self) -> impl Iterator<Item = &PweModel> {
        self.replicates.iter().map(|r| &r.model)
    }
}

fn interval(vals: &[f64], alpha: f64) -> Option<(f64, f64)> {
    if vals.is_empty() {
        return None;
    }
    Some((quantile(vals, alpha / 2.0), quantile(vals, 1.0 - alpha / 2.0)))
}

/// `n` indices drawn uniformly with replacement.
pub fn case_resample(n: usize, rng: &mut StreamRng) -> Vec<usize> {
    (0..n).map(|_| rng.random_range(0..n)).collect()
}

/// Bootstrap `config` fits over `nsim` case resamples of `data`.
pub fn boot_fit(data: &SurvSample, config: &FitConfig, nsim: usize, seed: u64) -> Result<BootFit> {
    boot_fit_with_resampler(data, config, nsim, seed, case_resample)
}

/// As [`boot_fit`], with the index resampler supplied by the caller.
pub fn boot_fit_with_resampler<F>(
    data: &SurvSample,
    config: &FitConfig,
    nsim: usize,
    seed: u64,
    resampler: F,
) -> Result<BootFit>
where
    F: Fn(usize, &mut StreamRng) -> Vec<usize> + Sync,
{
    if nsim == 0 {
        return Err(Error::InvalidConfig("nsim must be at least 1".into()));
    }
    if data.is_empty() {
        return Err(Error::EmptyData);
    }
    config.check()?;
    let outcomes: Vec<Result<FitResult>> = (0..nsim)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream(seed, &[tag::BOOT_RESAMPLE, i as u64]);
            let sample = data.select(&resampler(data.len(), &mut rng));
            let cfg = FitConfig {
                seed: derive_seed(seed, &[tag::BOOT_FIT, i as u64]),
                ..config.clone()
            };
            fit(&sample, &cfg)
        })
        .collect();

    let mut replicates = Vec::with_capacity(nsim);
    let mut failures = Vec::new();
    for (index, outcome) in outcomes.into_iter().enumerate() {
        match outcome {
            Ok(f) => replicates.push(f),
            Err(e) if e.is_numeric() => failures.push(ReplicateFailure {
                index,
                message: e.to_string(),
            }),
            Err(e) => return Err(e),
        }
    }
    if 2 * failures.len() > nsim {
        return Err(Error::TooManyFailures {
            failed: failures.len(),
            total: nsim,
        });
    }
    Ok(BootFit {
        replicates,
        seed,
        nsim,
        failures,
        config: config.clone(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    /// Held-out log-likelihood of each successful repetition, in repetition order.
    pub values: Vec<f64>,
    pub split_fraction: f64,
    pub failures: Vec<ReplicateFailure>,
}

/// Stratified split: indices of (training, held-out) records.
pub fn cv_split(data: &SurvSample, rng: &mut StreamRng) -> (Vec<usize>, Vec<usize>) {
    let mut train = Vec::with_capacity(data.len());
    let mut test = Vec::new();
    for want_event in [true, false] {
        let mut idx: Vec<usize> = (0..data.len())
            .filter(|&i| data.records()[i].event == want_event)
            .collect();
        idx.shuffle(rng);
        let k = (CV_TEST_FRACTION * idx.len() as f64).round() as usize;
        test.extend_from_slice(&idx[..k]);
        train.extend_from_slice(&idx[k..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    (train, test)
}

/// Cross-validated log-likelihood of `config` fits.
pub fn cv_loglik(data: &SurvSample, config: &FitConfig, nsim: usize, seed: u64) -> Result<CvResult> {
    config.check()?;
    cv_loglik_with(data, nsim, seed, |train, fit_seed| {
        let cfg = FitConfig {
            seed: fit_seed,
            ..config.clone()
        };
        fit(train, &cfg).map(|f| f.model)
    })
}

/// Cross-validation with a caller-supplied fitter. Splits depend only on
/// `seed` and the repetition, so fitters compared under one seed see the
/// same splits.
pub fn cv_loglik_with<F>(data: &SurvSample, nsim: usize, seed: u64, fitter: F) -> Result<CvResult>
where
    F: Fn(&SurvSample, u64) -> Result<PweModel> + Sync,
{
    if nsim == 0 {
        return Err(Error::InvalidConfig("nsim must be at least 1".into()));
    }
    if data.is_empty() {
        return Err(Error::EmptyData);
    }
    let outcomes: Vec<Result<f64>> = (0..nsim)
        .into_par_iter()
        .map(|i| {
            let mut last = Error::EmptyData;
            for attempt in 0..=CV_REDRAWS {
                let mut rng = stream(seed, &[tag::CV_SPLIT, i as u64, attempt]);
                let (train, test) = cv_split(data, &mut rng);
                let fit_seed = derive_seed(seed, &[tag::CV_FIT, i as u64, attempt]);
                match fitter(&data.select(&train), fit_seed) {
                    Ok(model) => return Ok(loglik(&model, &data.select(&test))),
                    Err(e) if e.is_numeric() => last = e,
                    Err(e) => return Err(e),
                }
            }
            Err(last)
        })
        .collect();

    let mut values = Vec::with_capacity(nsim);
    let mut failures = Vec::new();
    for (index, outcome) in outcomes.into_iter().enumerate() {
        match outcome {
            Ok(v) => values.push(v),
            Err(e) if e.is_numeric() => failures.push(ReplicateFailure {
                index,
                message: e.to_string(),
            }),
            Err(e) => return Err(e),
        }
    }
    if 2 * failures.len() > nsim {
        return Err(Error::TooManyFailures {
            failed: failures.len(),
            total: nsim,
        });
    }
    Ok(CvResult {
        values,
        split_fraction: CV_TEST_FRACTION,
        failures,
    })
}
