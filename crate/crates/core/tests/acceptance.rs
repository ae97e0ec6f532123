//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.

mod common;

use std::time::Instant;

use pwexp::estimation::{fit_bfs, fit_hybrid, loglik, mle_given_breakpoints, segment_log_survival, FitResult};
use pwexp::prediction::{predict_events, AccrualPlan, IntervalKind, ModelSet, PredictOptions, TrialSnapshot};
use pwexp::resampling::{boot_fit, cv_loglik};
use pwexp::rng::stream;
use pwexp::simulation::{
    drop_hazard, sim_followup, simulate_trial, Enrollment, FollowupConfig, FollowupStat, Law, MilestoneKind,
    TrialDesign,
};
use pwexp::stats::{mean, median, quantile, std_dev};
use pwexp::survdata::cut_data;
use pwexp::{CensorReason, FitConfig, Optimizer, PweModel, SurvSample};
use rand::Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn fitted_control() -> PweModel {
    PweModel::new(vec![0.023956, 0.009931584, 0.004189957], vec![14.716, 29.85]).unwrap()
}

/// Simulated scenario trial cut when 80% of subjects are enrolled.
struct Scenario {
    train: SurvSample,
    cut: f64,
}

fn scenario(seed: u64) -> Scenario {
    let design = TrialDesign::new(Enrollment::Rate { per_month: 20.0, total: 1000 }, Law::Pwe(common::model3()))
        .with_drop_rate(0.03)
        .unwrap();
    let trial = simulate_trial(&design, seed).unwrap();
    let rand: Vec<f64> = trial.records.iter().map(|r| r.rand_t).collect();
    let cut = quantile(&rand, 0.8);
    Scenario {
        train: cut_data(&trial.to_sample(), cut).unwrap(),
        cut,
    }
}

fn criterion_1() -> Outcome {
    let m = fitted_control();
    let want = [0.7501575, 0.6409900, 0.5894241, 0.5605208];
    let got: Vec<f64> = [12.0, 24.0, 36.0, 48.0].iter().map(|&t| m.survival(t)).collect();
    let err = got.iter().zip(want).map(|(g, w)| (g - w).abs()).fold(0.0, f64::max);
    outcome(err < 1e-6, format!("max abs error {err:.2e}"))
}

fn criterion_2() -> Outcome {
    let n = 428;
    let f = FitResult::new(fitted_control(), -1065.844, n, pwexp::estimation::FitMethod::Hybrid);
    let gap = f.bic - f.aic - 5.0 * ((n as f64).ln() - 2.0);
    let ok = (f.aic - 2141.689).abs() < 1e-2 && gap.abs() < 1e-9;
    outcome(ok, format!("AIC {:.4}, BIC {:.4}, BIC-AIC residual {gap:.1e} (n = {n})", f.aic, f.bic))
}

fn criterion_3() -> Outcome {
    let golden = |f: &dyn Fn(f64) -> f64, mut a: f64, mut b: f64| {
        let g = (5f64.sqrt() - 1.0) / 2.0;
        for _ in 0..300 {
            let c = b - g * (b - a);
            let d = a + g * (b - a);
            if f(c) > f(d) {
                b = d;
            } else {
                a = c;
            }
        }
        0.5 * (a + b)
    };
    let mut worst_rel = 0.0f64;
    let mut worst_score = 0.0f64;
    for seed in 0..50u64 {
        let data = common::small_sample(15 + seed as usize % 25, 5000 + seed);
        let ev = data.distinct_event_times();
        let mut rng = stream(seed, &[31]);
        let k = 1 + rng.random_range(0..3usize.min(ev.len() - 1));
        let mut mids: Vec<f64> = ev.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
        let mut breaks = Vec::new();
        while breaks.len() < k && !mids.is_empty() {
            breaks.push(mids.swap_remove(rng.random_range(0..mids.len())));
        }
        breaks.sort_by(f64::total_cmp);
        let fit = mle_given_breakpoints(&breaks, &data).unwrap();
        let rates = fit.rates().to_vec();
        for j in 0..rates.len() {
            let at = |x: f64| {
                let mut r = rates.clone();
                r[j] = x;
                common::direct_loglik(&r, &breaks, &data)
            };
            let best = golden(&|lx: f64| at(lx.exp()), (rates[j] / 100.0).ln(), (rates[j] * 100.0).ln()).exp();
            worst_rel = worst_rel.max(((best - rates[j]) / rates[j]).abs());
            let h = 1e-5 * rates[j];
            worst_score = worst_score.max(((at(rates[j] + h) - at(rates[j] - h)) / (2.0 * h)).abs());
        }
    }
    outcome(
        worst_rel < 1e-6 && worst_score < 1e-6,
        format!("50 datasets: max rel rate error {worst_rel:.1e}, max |score| {worst_score:.1e}"),
    )
}

fn criterion_4() -> Outcome {
    let fits: Vec<FitResult> = (0..20u64)
        .map(|s| {
            let sc = scenario(100 + s);
            fit_hybrid(&sc.train, &FitConfig::new(2).with_seed(s)).unwrap()
        })
        .collect();
    let col = |f: &dyn Fn(&FitResult) -> f64| median(&fits.iter().map(f).collect::<Vec<_>>());
    let b1 = col(&|f| f.breakpoints()[0]);
    let b2 = col(&|f| f.breakpoints()[1]);
    let rates: Vec<f64> = (0..3).map(|k| col(&|f| f.rates()[k])).collect();
    let truth = [0.1, 0.01, 0.2];
    let rel_ok = rates.iter().zip(truth).all(|(r, t)| ((r - t) / t).abs() < 0.25);
    let ok = (b1 - 5.0).abs() <= 1.5 && (b2 - 14.0).abs() <= 1.5 && rel_ok;
    outcome(
        ok,
        format!(
            "median breaks ({b1:.3}, {b2:.3}), median rates ({:.4}, {:.5}, {:.4}); n_obs {}",
            rates[0], rates[1], rates[2], fits[0].n_obs
        ),
    )
}

fn criterion_5() -> Outcome {
    let mut bic_wins = 0;
    let mut cv_wins = 0;
    let mut both = 0;
    for s in 0..20u64 {
        let sc = scenario(100 + s);
        let c2 = FitConfig::new(2).with_seed(s);
        let c0 = FitConfig::new(0).with_seed(s);
        let f2 = pwexp::fit(&sc.train, &c2).unwrap();
        let f0 = pwexp::fit(&sc.train, &c0).unwrap();
        let cv2 = cv_loglik(&sc.train, &c2, 100, 900 + s).unwrap();
        let cv0 = cv_loglik(&sc.train, &c0, 100, 900 + s).unwrap();
        let b = f2.bic < f0.bic;
        let c = median(&cv2.values) > median(&cv0.values);
        bic_wins += b as usize;
        cv_wins += c as usize;
        both += (b && c) as usize;
    }
    outcome(
        both >= 17,
        format!("BIC favours 2 breaks in {bic_wins}/20, CV in {cv_wins}/20, both in {both}/20"),
    )
}

fn criterion_6() -> Outcome {
    // Exhaustive search against plain enumeration on data with at most 12 events.
    let mut mismatches = 0;
    let mut checked = 0;
    for seed in 0..60u64 {
        let data = common::small_sample(16, 7000 + seed);
        if data.n_events() > 12 || data.distinct_event_times().len() < 4 {
            continue;
        }
        let ev = data.distinct_event_times();
        for k in [1usize, 2] {
            let mut cfg = FitConfig::new(k).with_optimizer(Optimizer::Bfs);
            cfg.min_pt_tail = 1;
            let mut best = (f64::NEG_INFINITY, Vec::new());
            let rows: Vec<Vec<f64>> = if k == 1 {
                ev.iter().map(|&a| vec![a]).collect()
            } else {
                ev.iter()
                    .flat_map(|&a| ev.iter().filter(move |&&b| b > a).map(move |&b| vec![a, b]))
                    .collect()
            };
            for r in rows {
                if let Ok(f) = mle_given_breakpoints(&r, &data) {
                    if f.loglik > best.0 {
                        best = (f.loglik, r);
                    }
                }
            }
            let got = fit_bfs(&data, &cfg).unwrap();
            checked += 1;
            if got.breakpoints() != best.1.as_slice() || (got.loglik - best.0).abs() > 1e-9 {
                mismatches += 1;
            }
        }
    }

    // Hybrid never does worse than the segmented estimate snapped to event times.
    let mut violations = 0;
    for seed in 0..50u64 {
        let data = common::censored_sample(&common::model3(), 200, 0.03, 8000 + seed);
        let cfg = FitConfig::new(1 + seed as usize % 2).with_seed(seed);
        let seg = segment_log_survival(&data, &cfg).unwrap();
        let ev = data.distinct_event_times();
        let snapped: Vec<f64> = seg
            .breakpoints
            .iter()
            .map(|&p| *ev.iter().min_by(|a, b| (*a - p).abs().total_cmp(&(*b - p).abs()).then(a.total_cmp(b))).unwrap())
            .collect();
        let hyb = fit_hybrid(&data, &cfg).unwrap();
        let prepared = pwexp::estimation::PreparedData::new(&data).unwrap();
        if cfg.admissible(&snapped, &prepared) {
            if let Ok(o) = mle_given_breakpoints(&snapped, &data) {
                violations += (hyb.loglik < o.loglik) as usize;
            }
        }
    }
    outcome(
        checked > 0 && mismatches == 0 && violations == 0,
        format!("bfs vs enumeration: {mismatches}/{checked} mismatches; hybrid < snapped OLS in {violations}/50"),
    )
}

fn criterion_7() -> Outcome {
    let sc = scenario(1);
    let t0 = sc.cut;
    let remaining = 1000 - sc.train.len();
    let plan = AccrualPlan::Rate { per_month: 20.0, remaining };
    let snap = TrialSnapshot::from_sample(&sc.train, t0, plan).unwrap();
    let truth = common::model3();
    let drop = PweModel::exponential(drop_hazard(0.03).unwrap()).unwrap();
    let checks = [45.0, 55.0, 70.0];

    let n_each = 2000;
    let ens = predict_events(
        &truth.clone().into(),
        Some(&drop.clone().into()),
        &snap,
        &PredictOptions::new(n_each, 11),
    )
    .unwrap();

    // Oracle: whole trials re-simulated from the cut, conditional draws by rejection.
    let mut rng = stream(12, &[0]);
    let trials = 2000;
    let mut counts = vec![Vec::with_capacity(trials); checks.len()];
    let reject = |m: &PweModel, elapsed: f64, rng: &mut pwexp::rng::StreamRng| loop {
        let t = m.sample_one(rng);
        if t > elapsed {
            return t;
        }
    };
    for _ in 0..trials {
        let mut cal = Vec::new();
        for a in &snap.at_risk {
            let t = reject(&truth, a.elapsed, &mut rng);
            let c = reject(&drop, a.elapsed, &mut rng);
            if t <= c {
                cal.push(a.enroll + t);
            }
        }
        for j in 1..=remaining {
            let m = ((j as f64 / 20.0).ceil() - 1.0).max(0.0);
            let e = t0 + m + rng.random::<f64>();
            let t = truth.sample_one(&mut rng);
            let c = drop.sample_one(&mut rng);
            if t <= c {
                cal.push(e + t);
            }
        }
        for (k, &tp) in checks.iter().enumerate() {
            counts[k].push((snap.observed_events + cal.iter().filter(|&&x| x <= tp).count()) as f64);
        }
    }

    let mut ok = true;
    let mut detail = Vec::new();
    for (k, &tp) in checks.iter().enumerate() {
        let oracle = mean(&counts[k]);
        let se_o = std_dev(&counts[k]) / (trials as f64).sqrt();
        let draws: Vec<f64> = ens.predictive.iter().map(|c| {
            let j = ens.grid.partition_point(|&g| g <= tp);
            let w = (tp - ens.grid[j - 1]) / (ens.grid[j] - ens.grid[j - 1]);
            c[j - 1] + w * (c[j] - c[j - 1])
        }).collect();
        let se_p = std_dev(&draws) / (n_each as f64).sqrt();
        let got = ens.point_at(tp);
        let se = (se_o * se_o + se_p * se_p).sqrt();
        ok &= (got - oracle).abs() < 3.0 * se;
        detail.push(format!("t={tp}: {got:.2} vs {oracle:.2} (3se {:.2})", 3.0 * se));
    }

    // Bands from bootstrapped event and drop-out models.
    let event_boot = boot_fit(&sc.train, &FitConfig::new(2).with_seed(1), 100, 13).unwrap();
    let drop_data = sc.train.relabel(|r| r.calendar.is_some_and(|c| c.censor_reason == CensorReason::DropOut));
    let drop_boot = boot_fit(&drop_data, &FitConfig::new(0), 100, 14).unwrap();
    let ens = predict_events(
        &ModelSet::from(&event_boot),
        Some(&ModelSet::from(&drop_boot)),
        &snap,
        &PredictOptions::new(30, 15),
    )
    .unwrap();
    let times = ens.grid[1..].to_vec();
    let conf = ens.event_interval(&times, 0.05, IntervalKind::Confidence).unwrap();
    let pred = ens.event_interval(&times, 0.05, IntervalKind::Predictive).unwrap();
    let strict = conf.iter().zip(&pred).filter(|(c, p)| p.lower < c.lower && c.upper < p.upper).count();
    ok &= strict == times.len();
    let at45 = ens.event_interval(&[45.0], 0.05, IntervalKind::Confidence).unwrap()[0];
    detail.push(format!(
        "predictive strictly contains confidence at {strict}/{} grid points; ED(45) {:.1} [{:.1}, {:.1}]",
        times.len(),
        at45.n_event,
        at45.lower,
        at45.upper
    ));
    outcome(ok, detail.join("; "))
}

fn criterion_8() -> Outcome {
    let mut counts = vec![15; 12];
    counts.extend([21, 27, 33, 39]);
    counts.extend([45; 8]);
    let con = fitted_control();
    let trt = con.rescaled(1.0).unwrap();
    let trt = PweModel::new(trt.rates().iter().map(|r| r * 0.6).collect(), trt.breakpoints().to_vec()).unwrap();
    let design = TrialDesign::new(Enrollment::Counts(counts), Law::Never)
        .with_groups(vec![("trt".into(), 1, Law::Pwe(trt)), ("con".into(), 1, Law::Pwe(con))])
        .with_drop_rate(0.01)
        .unwrap();
    let mut cfg = FollowupConfig::new(vec![21.248, 27.089, 35.146], MilestoneKind::Calendar, 1000, 2024);
    cfg.stats = vec![FollowupStat::Mean, FollowupStat::Median, FollowupStat::Sum, FollowupStat::PropAbove(12.0)];
    let s = sim_followup(&design, &cfg).unwrap();
    let want = [65.4, 114.6, 163.7];
    let events: Vec<f64> = s.rows.iter().map(|r| r.n_event).collect();
    let prop = s.rows[2].stats[3].1;
    let ok = events.iter().zip(want).all(|(g, w)| (g - w).abs() <= 3.0) && (prop - 0.834).abs() <= 0.02;
    outcome(
        ok,
        format!(
            "mean events ({:.3}, {:.3}, {:.3}), prop_12 at 35.146 = {prop:.4}, mean follow-up {:.3}",
            events[0], events[1], events[2], s.rows[2].stats[0].1
        ),
    )
}

fn criterion_9() -> Outcome {
    let mut failures = Vec::new();
    let mut rng = stream(99, &[0]);
    for _ in 0..200 {
        let k = rng.random_range(1..5usize);
        let rates: Vec<f64> = (0..k).map(|_| rng.random_range(0.005..2.0)).collect();
        let mut acc = 0.0;
        let breaks: Vec<f64> = (1..k).map(|_| { acc += rng.random_range(0.1..10.0); acc }).collect();
        let m = PweModel::new(rates, breaks).unwrap();
        let p = rng.random_range(0.0..0.999);
        if (m.cdf(m.quantile(p).unwrap()) - p).abs() > 1e-10 {
            failures.push("cdf(quantile)");
        }
        let r = rng.random_range(0.0..15.0);
        let t = r + rng.random_range(0.0..15.0);
        let lhs = m.conditional_survival(t, r).unwrap() * m.survival(r);
        if (lhs - m.survival(t)).abs() > 1e-12 * m.survival(t) {
            failures.push("conditional factorisation");
        }
        let grid: Vec<f64> = (0..50).map(|i| i as f64).collect();
        if grid.windows(2).any(|w| m.survival(w[1]) > m.survival(w[0])) {
            failures.push("survival monotone");
        }
    }

    let m = common::model3();
    let mut xs = m.sample(100_000, &mut rng);
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    let ks = xs
        .iter()
        .enumerate()
        .map(|(i, &x)| (m.cdf(x) - i as f64 / n).abs().max(((i + 1) as f64 / n - m.cdf(x)).abs()))
        .fold(0.0, f64::max);
    if ks > 1.628 / n.sqrt() {
        failures.push("KS sampler");
    }

    let data = common::small_sample(30, 4);
    let mut cfg = FitConfig::new(2).with_optimizer(Optimizer::Bfs);
    cfg.min_pt_tail = 2;
    let a = pwexp::fit(&data, &cfg).unwrap();
    let b = pwexp::fit(&data.rescaled(2.5), &cfg).unwrap();
    if a.breakpoints().iter().zip(b.breakpoints()).any(|(x, y)| (x * 2.5 - y).abs() > 1e-9 * y)
        || (b.loglik - a.loglik + data.n_events() as f64 * 2.5f64.ln()).abs() > 1e-8
    {
        failures.push("affine equivariance");
    }

    let big = common::censored_sample(&m, 400, 0.03, 5);
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap().install(|| {
            (
                pwexp::fit(&big, &FitConfig::new(2).with_seed(1)).unwrap(),
                boot_fit(&big, &FitConfig::new(1), 8, 2).unwrap(),
            )
        })
    };
    let one = run(1);
    if [2, 4, 7].iter().any(|&k| run(k) != one) {
        failures.push("thread determinism");
    }
    let _ = loglik(&m, &big);
    outcome(
        failures.is_empty(),
        if failures.is_empty() {
            "roundtrips, factorisation, monotonicity, KS, equivariance, thread determinism".into()
        } else {
            format!("failed: {failures:?}")
        },
    )
}

fn main() {
    type Criterion = (&'static str, fn() -> Outcome);
    let criteria: [Criterion; 9] = [
        ("1 distribution golden values", criterion_1),
        ("2 information criteria", criterion_2),
        ("3 closed-form MLE oracle", criterion_3),
        ("4 parameter recovery", criterion_4),
        ("5 model-selection direction", criterion_5),
        ("6 search-method consistency", criterion_6),
        ("7 prediction calibration", criterion_7),
        ("8 design simulation", criterion_8),
        ("9 property suites", criterion_9),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, run) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let o = run();
        let status = if o.pass { "PASS" } else { "FAIL" };
        println!("criterion {name}: {status} [{:.1}s] {}", start.elapsed().as_secs_f64(), o.detail);
        failed += (!o.pass) as usize;
    }
    if failed > 0 {
        eprintln!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
