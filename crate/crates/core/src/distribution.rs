//! Piecewise exponential distribution.
//!
//! The hazard is constant on each piece `[d_{k-1}, d_k)` with `d_0 = 0` and
//! `d_{r+1} = ∞`, and right-continuous at each change-point: a time equal to
//! `d_k` belongs to the piece that starts there.
//!
//! Cumulative hazard is evaluated from a prefix sum of `rate · length` over
//! the completed pieces, so survival, quantile, and their conditional
//! variants all reduce to arithmetic on `H(t)`.

use rand::distr::Open01;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Hazard rates and ordered change-points of one piecewise exponential law.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawModel", into = "RawModel")]
pub struct PweModel {
    rates: Vec<f64>,
    breakpoints: Vec<f64>,
    /// `H(d_k)` for each change-point.
    cumhaz_at_breaks: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct RawModel {
    rates: Vec<f64>,
    breakpoints: Vec<f64>,
}

impl TryFrom<RawModel> for PweModel {
    type Error = Error;

    fn try_from(raw: RawModel) -> Result<Self> {
        PweModel::new(raw.rates, raw.breakpoints)
    }
}

impl From<PweModel> for RawModel {
    fn from(m: PweModel) -> Self {
        RawModel {
            rates: m.rates,
            breakpoints: m.breakpoints,
        }
    }
}

impl PweModel {
    pub fn new(rates: Vec<f64>, breakpoints: Vec<f64>) -> Result<Self> {
        if rates.len() != breakpoints.len() + 1 {
            return Err(Error::InvalidModel(format!(
                "{} rates given for {} change-points; expected {}",
                rates.len(),
                breakpoints.len(),
                breakpoints.len() + 1
            )));
        }
        if let Some((i, r)) = rates
            .iter()
            .enumerate()
            .find(|(_, r)| !(r.is_finite() && **r > 0.0))
        {
            return Err(Error::InvalidModel(format!(
                "rate {} is {r}; rates must be positive and finite",
                i + 1
            )));
        }
        if let Some((i, d)) = breakpoints
            .iter()
            .enumerate()
            .find(|(_, d)| !(d.is_finite() && **d > 0.0))
        {
            return Err(Error::InvalidModel(format!(
                "change-point {} is {d}; change-points must be positive and finite",
                i + 1
            )));
        }
        if breakpoints.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidModel(
                "change-points must be strictly increasing".into(),
            ));
        }

        let mut cumhaz_at_breaks = Vec::with_capacity(breakpoints.len());
        let mut acc = 0.0;
        let mut start = 0.0;
        for (d, rate) in breakpoints.iter().zip(&rates) {
            acc += rate * (d - start);
            cumhaz_at_breaks.push(acc);
            start = *d;
        }

        Ok(Self {
            rates,
            breakpoints,
            cumhaz_at_breaks,
        })
    }

    pub fn exponential(rate: f64) -> Result<Self> {
        Self::new(vec![rate], Vec::new())
    }

    pub fn rates(&self) -> &[f64] {
        &self.rates
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn n_breakpoints(&self) -> usize {
        self.breakpoints.len()
    }

    /// Index of the piece containing `t` (0-based, right-continuous).
    pub fn piece_index(&self, t: f64) -> usize {
        self.breakpoints.partition_point(|&d| d <= t)
    }

    fn piece_start(&self, piece: usize) -> (f64, f64) {
        if piece == 0 {
            (0.0, 0.0)
        } else {
            (self.breakpoints[piece - 1], self.cumhaz_at_breaks[piece - 1])
        }
    }

    pub fn hazard(&self, t: f64) -> f64 {
        if t < 0.0 {
            return 0.0;
        }
        self.rates[self.piece_index(t)]
    }

    pub fn cumulative_hazard(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return 0.0;
        }
        if t == f64::INFINITY {
            return f64::INFINITY;
        }
        let piece = self.piece_index(t);
        let (start, h0) = self.piece_start(piece);
        h0 + self.rates[piece] * (t - start)
    }

    pub fn density(&self, t: f64) -> f64 {
        if t < 0.0 {
            return 0.0;
        }
        self.hazard(t) * (-self.cumulative_hazard(t)).exp()
    }

    pub fn survival(&self, t: f64) -> f64 {
        (-self.cumulative_hazard(t)).exp()
    }

    pub fn cdf(&self, t: f64) -> f64 {
        -(-self.cumulative_hazard(t)).exp_m1()
    }

    /// Time at which the cumulative hazard reaches `target`.
    fn invert_cumhaz(&self, target: f64) -> f64 {
        if target == f64::INFINITY {
            return f64::INFINITY;
        }
        let piece = self.cumhaz_at_breaks.partition_point(|&h| h <= target);
        let (start, h0) = self.piece_start(piece);
        start + (target - h0) / self.rates[piece]
    }

    /// Inverse CDF. `p = 1` maps to `+∞`.
    pub fn quantile(&self, p: f64) -> Result<f64> {
        check_probability(p)?;
        Ok(self.invert_cumhaz(-(-p).ln_1p()))
    }

    fn draw<R: Rng + ?Sized>(&self, rng: &mut R, base_cumhaz: f64) -> f64 {
        let u: f64 = rng.sample(Open01);
        self.invert_cumhaz(base_cumhaz - u.ln())
    }

    /// `n` independent draws by inverse transform.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<f64> {
        (0..n).map(|_| self.draw(rng, 0.0)).collect()
    }

    pub fn sample_one<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.draw(rng, 0.0)
    }

    /// `S(t | T > R) = S(t) / S(R)`.
    pub fn conditional_survival(&self, t: f64, r: f64) -> Result<f64> {
        check_truncation(r)?;
        if t < r {
            return Err(Error::Domain(format!(
                "conditional survival needs t >= R (t = {t}, R = {r})"
            )));
        }
        Ok((-(self.cumulative_hazard(t) - self.cumulative_hazard(r))).exp())
    }

    pub fn conditional_cdf(&self, t: f64, r: f64) -> Result<f64> {
        check_truncation(r)?;
        if t < r {
            return Err(Error::Domain(format!(
                "conditional cdf needs t >= R (t = {t}, R = {r})"
            )));
        }
        Ok(-(-(self.cumulative_hazard(t) - self.cumulative_hazard(r))).exp_m1())
    }

    /// Inverse of the conditional CDF given `T > R`; never below `R`.
    pub fn conditional_quantile(&self, p: f64, r: f64) -> Result<f64> {
        check_probability(p)?;
        check_truncation(r)?;
        if p == 0.0 {
            return Ok(r);
        }
        let t = self.invert_cumhaz(self.cumulative_hazard(r) - (-p).ln_1p());
        Ok(t.max(r))
    }

    /// `n` draws from the law of `T` given `T > R`; every draw exceeds `R`.
    pub fn conditional_sample<R: Rng + ?Sized>(&self, n: usize, r: f64, rng: &mut R) -> Vec<f64> {
        (0..n).map(|_| self.conditional_sample_one(r, rng)).collect()
    }

    pub fn conditional_sample_one<R: Rng + ?Sized>(&self, r: f64, rng: &mut R) -> f64 {
        let base = self.cumulative_hazard(r.max(0.0));
        let t = self.draw(rng, base);
        // H is strictly increasing, but rounding can land exactly on R when
        // the increment is below one ulp of H(R).
        if t > r {
            t
        } else {
            next_up(r)
        }
    }

    /// Same law with the time axis stretched by `factor`.
    pub fn rescaled(&self, factor: f64) -> Result<Self> {
        if !(factor.is_finite() && factor > 0.0) {
            return Err(Error::Domain(format!("scale factor {factor} must be positive")));
        }
        Self::new(
            self.rates.iter().map(|r| r / factor).collect(),
            self.breakpoints.iter().map(|d| d * factor).collect(),
        )
    }
}

fn check_probability(p: f64) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::Domain(format!("probability {p} outside [0, 1]")))
    }
}

fn check_truncation(r: f64) -> Result<()> {
    if r.is_finite() && r >= 0.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!("truncation point {r} must be finite and >= 0")))
    }
}

fn next_up(x: f64) -> f64 {
    if x == 0.0 {
        f64::MIN_POSITIVE
    } else {
        f64::from_bits(x.to_bits() + 1)
    }
}
