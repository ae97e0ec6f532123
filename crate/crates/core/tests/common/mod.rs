#![allow(dead_code)]

use pwexp::rng::stream;
use pwexp::{Observation, PweModel, SurvSample};
use rand::Rng;

pub fn model3() -> PweModel {
    PweModel::new(vec![0.1, 0.01, 0.2], vec![5.0, 14.0]).unwrap()
}

/// Event times from `model`, censored by an independent exponential.
pub fn censored_sample(model: &PweModel, n: usize, censor_rate: f64, seed: u64) -> SurvSample {
    let mut rng = stream(seed, &[991]);
    let cens = PweModel::exponential(censor_rate).unwrap();
    (0..n)
        .map(|_| {
            let t = model.sample_one(&mut rng);
            let c = cens.sample_one(&mut rng);
            Observation::new(t.min(c), t <= c)
        })
        .collect()
}

/// Small random data set with rounded times, so ties occur.
pub fn small_sample(n: usize, seed: u64) -> SurvSample {
    let mut rng = stream(seed, &[992]);
    let m = PweModel::new(vec![0.3, 0.05], vec![rng.random_range(1.0..4.0)]).unwrap();
    (0..n)
        .map(|_| {
            let t = (m.sample_one(&mut rng) * 100.0).round() / 100.0 + 0.01;
            let censored = rng.random_bool(0.25);
            Observation::new(t, !censored)
        })
        .collect()
}

/// Direct log-likelihood: sum over events of log hazard minus cumulative hazards.
pub fn direct_loglik(rates: &[f64], breaks: &[f64], data: &SurvSample) -> f64 {
    let mut ll = 0.0;
    for r in data.records() {
        let mut h = 0.0;
        let mut lo = 0.0;
        for (k, &rate) in rates.iter().enumerate() {
            let hi = breaks.get(k).copied().unwrap_or(f64::INFINITY);
            if r.time > lo {
                h += rate * (r.time.min(hi) - lo);
            }
            if r.event && r.time >= lo && r.time < hi {
                ll += rate.ln();
            }
            lo = hi;
        }
        ll -= h;
    }
    ll
}
