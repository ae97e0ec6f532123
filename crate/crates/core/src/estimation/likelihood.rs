//! Log-likelihood and closed-form hazard estimates for fixed change-points.

use crate::distribution::PweModel;
use crate::error::{Error, Result};
use crate::survdata::SurvSample;

/// `Σ_events log h(T_i) − Σ_all H(T_i)`.
pub fn loglik(model: &PweModel, data: &SurvSample) -> f64 {
    data.records()
        .iter()
        .map(|r| {
            let h = model.cumulative_hazard(r.time);
            if r.event {
                model.hazard(r.time).ln() - h
            } else {
                -h
            }
        })
        .sum()
}

/// Per-piece sufficient statistics for a set of change-points.
#[derive(Debug, Clone, PartialEq)]
pub struct PieceTally {
    /// Events whose time falls in each piece.
    pub events: Vec<usize>,
    /// Time at risk accumulated inside each piece.
    pub exposure: Vec<f64>,
    /// Records (events and censorings) at or beyond the start of each piece.
    pub at_or_beyond: Vec<usize>,
}

impl PieceTally {
    pub fn total_events(&self) -> usize {
        self.events.iter().sum()
    }

    /// Rate estimates `events / exposure`, failing on the first degenerate piece.
    pub fn rates(&self) -> Result<Vec<f64>> {
        self.events
            .iter()
            .zip(&self.exposure)
            .enumerate()
            .map(|(k, (&e, &x))| {
                if e == 0 {
                    Err(Error::EmptyPiece { piece: k + 1 })
                } else if x <= 0.0 {
                    Err(Error::ZeroExposure { piece: k + 1 })
                } else {
                    Ok(e as f64 / x)
                }
            })
            .collect()
    }

    /// Profile log-likelihood at the rate MLEs, `Σ n_k (log λ̂_k − 1)`.
    pub fn profile_loglik(&self) -> Result<f64> {
        let rates = self.rates()?;
        Ok(self
            .events
            .iter()
            .zip(&rates)
            .map(|(&e, &l)| e as f64 * (l.ln() - 1.0))
            .sum())
    }
}

/// Sorted view of a sample with prefix sums, so that piece tallies cost
/// `O(r log n)` instead of a pass over the data.
#[derive(Debug, Clone)]
pub struct PreparedData {
    times: Vec<f64>,
    /// `Σ_{j<i} times[j]`
    time_prefix: Vec<f64>,
    /// Events among the first `i` sorted records.
    event_prefix: Vec<usize>,
    event_times: Vec<f64>,
}

impl PreparedData {
    pub fn new(data: &SurvSample) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::EmptyData);
        }
        if let Some(r) = data.records().iter().find(|r| !r.time.is_finite()) {
            return Err(Error::InvalidData(format!(
                "estimation needs finite times, found {}",
                r.time
            )));
        }
        let mut obs: Vec<(f64, bool)> = data.records().iter().map(|r| (r.time, r.event)).collect();
        obs.sort_by(|a, b| a.0.total_cmp(&b.0));

        let mut time_prefix = Vec::with_capacity(obs.len() + 1);
        let mut event_prefix = Vec::with_capacity(obs.len() + 1);
        let (mut st, mut se) = (0.0, 0usize);
        time_prefix.push(st);
        event_prefix.push(se);
        for &(t, e) in &obs {
            st += t;
            se += usize::from(e);
            time_prefix.push(st);
            event_prefix.push(se);
        }
        let mut event_times: Vec<f64> = obs.iter().filter(|o| o.1).map(|o| o.0).collect();
        event_times.dedup();
        Ok(Self {
            times: obs.into_iter().map(|o| o.0).collect(),
            time_prefix,
            event_prefix,
            event_times,
        })
    }

    pub fn n_obs(&self) -> usize {
        self.times.len()
    }

    pub fn n_events(&self) -> usize {
        *self.event_prefix.last().unwrap_or(&0)
    }

    /// Sorted distinct event times.
    pub fn event_times(&self) -> &[f64] {
        &self.event_times
    }

    /// Index of the first record with time `>= t`.
    fn lower(&self, t: f64) -> usize {
        self.times.partition_point(|&x| x < t)
    }

    /// Events with time in `[a, b)`.
    pub fn events_in(&self, a: f64, b: f64) -> usize {
        let (i, j) = (self.lower(a), self.lower(b));
        self.event_prefix[j.max(i)] - self.event_prefix[i]
    }

    /// Events with time `>= a`.
    pub fn events_from(&self, a: f64) -> usize {
        self.n_events() - self.event_prefix[self.lower(a)]
    }

    /// Tally for change-points `breaks`, assumed strictly increasing.
    pub fn tally(&self, breaks: &[f64]) -> PieceTally {
        let n = self.times.len();
        let k = breaks.len() + 1;
        let mut events = Vec::with_capacity(k);
        let mut exposure = Vec::with_capacity(k);
        let mut at_or_beyond = Vec::with_capacity(k);

        let mut a = 0.0;
        let mut ia = 0;
        for piece in 0..k {
            let ib = if piece < breaks.len() {
                self.lower(breaks[piece])
            } else {
                n
            };
            let inside = (ib - ia) as f64;
            let mut x = self.time_prefix[ib] - self.time_prefix[ia] - inside * a;
            if piece < breaks.len() {
                x += (n - ib) as f64 * (breaks[piece] - a);
            }
            events.push(self.event_prefix[ib] - self.event_prefix[ia]);
            exposure.push(x.max(0.0));
            at_or_beyond.push(n - ia);
            if piece < breaks.len() {
                a = breaks[piece];
                ia = ib;
            }
        }
        PieceTally {
            events,
            exposure,
            at_or_beyond,
        }
    }
}

/// Rate MLEs and profile log-likelihood for fixed change-points.
pub(crate) fn mle_on_prepared(prepared: &PreparedData, breaks: &[f64]) -> Result<(PweModel, f64)> {
    let tally = prepared.tally(breaks);
    let rates = tally.rates()?;
    let ll = tally.profile_loglik()?;
    Ok((PweModel::new(rates, breaks.to_vec())?, ll))
}
