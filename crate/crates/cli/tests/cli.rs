use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn pwexp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pwexp"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = pwexp(args);
    assert!(
        out.status.success(),
        "pwexp {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn path(dir: &TempDir, name: &str) -> String {
    dir.path().join(name).to_str().unwrap().to_string()
}

fn read_csv(p: &str) -> (Vec<String>, Vec<Vec<String>>) {
    let text = fs::read_to_string(p).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap().split(',').map(String::from).collect();
    let rows = lines.map(|l| l.split(',').map(String::from).collect()).collect();
    (header, rows)
}

fn num(s: &str) -> f64 {
    s.parse().unwrap_or_else(|_| panic!("{s:?} is not a number"))
}

#[test]
fn fit_without_breaks_is_events_over_exposure() {
    let dir = TempDir::new().unwrap();
    let data = path(&dir, "toy.csv");
    fs::write(&data, "followT,event\n2,1\n3,1\n4,0\n5,1\n").unwrap();
    let out = ok(&["fit", "--in", &data, "--nbreak", "0"]);
    let json: Value = serde_json::from_slice(&out.stdout).unwrap();
    let lam = json["rates"][0].as_f64().unwrap();
    assert!((lam - 3.0 / 14.0).abs() < 1e-12, "{lam}");
    assert_eq!(json["breakpoints"].as_array().unwrap().len(), 0);
    let loglik = json["loglik"].as_f64().unwrap();
    assert!((loglik - (3.0 * lam.ln() - lam * 14.0)).abs() < 1e-9);
    let summary = String::from_utf8(out.stderr).unwrap();
    assert!(summary.contains("lam1") && summary.contains("AIC") && summary.contains("BIC"), "{summary}");
}

#[test]
fn dist_survival_golden_values() {
    let out = ok(&[
        "dist", "--survival", "--rates", "0.023956,0.009931584,0.004189957", "--breaks", "14.716,29.85",
        "--at", "12,24,36,48",
    ]);
    let text = String::from_utf8(out.stdout).unwrap();
    let got: Vec<f64> = text.lines().skip(1).map(|l| num(l.split(',').nth(1).unwrap())).collect();
    let want = [0.7501575, 0.6409900, 0.5894241, 0.5605208];
    assert_eq!(got.len(), 4);
    for (g, w) in got.iter().zip(want) {
        assert!((g - w).abs() < 1e-6, "{g} vs {w}");
    }
}

#[test]
fn dist_conditional_and_sample() {
    let base = ["dist", "--rates", "0.1,0.5", "--breaks", "2"];
    let q = ok(&[&base[..], &["--quantile", "--given", "1", "--at", "0.5"]].concat());
    let text = String::from_utf8(q.stdout).unwrap();
    let t = num(text.lines().nth(1).unwrap().split(',').nth(1).unwrap());
    // Solve 0.1 (2 - 1) + 0.5 (t - 2) = ln 2 for the median beyond 1.
    let want = 2.0 + (2f64.ln() - 0.1) / 0.5;
    assert!((t - want).abs() < 1e-9, "{t} vs {want}");

    let a = ok(&[&base[..], &["--sample", "50", "--seed", "9"]].concat()).stdout;
    let b = ok(&[&base[..], &["--sample", "50", "--seed", "9"]].concat()).stdout;
    assert_eq!(a, b);
    assert_eq!(String::from_utf8(a).unwrap().lines().count(), 51);
}

#[test]
fn km_table_starts_at_one() {
    let dir = TempDir::new().unwrap();
    let data = path(&dir, "toy.csv");
    fs::write(&data, "t,d\n1,1\n2,0\n3,1\n3,1\n").unwrap();
    let out = ok(&["km", "--in", &data, "--time-col", "t", "--event-col", "d"]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text, "time,survival,n_risk,n_event\n0,1,4,0\n1,0.75,4,1\n3,0,2,2\n");
}

#[test]
fn fixed_breakpoint_without_events_is_dropped_not_replaced() {
    let dir = TempDir::new().unwrap();
    let data = path(&dir, "toy.csv");
    fs::write(&data, "followT,event\n2,1\n3,1\n9,0\n").unwrap();
    let out = ok(&["fit", "--in", &data, "--breakpoint", "5"]);
    let json: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(json["breakpoints"].as_array().unwrap().len(), 0);
    assert!((json["rates"][0].as_f64().unwrap() - 2.0 / 14.0).abs() < 1e-12);
    assert_eq!(json["warnings"].as_array().unwrap().len(), 1);
}

#[test]
fn usage_errors_exit_two() {
    let dir = TempDir::new().unwrap();
    let data = path(&dir, "toy.csv");
    fs::write(&data, "followT,event\n2,1\n3,1\n").unwrap();
    for args in [
        vec!["fit", "--in", &data, "--bogus"],
        vec!["frobnicate"],
        vec!["fit", "--in", &data, "--time-col", "nope"],
        vec!["fit", "--in", &data, "--nbreak", "1"],
        vec!["simulate", "--per-month", "5", "--total", "10", "--rates", "0.1"],
        vec!["dist", "--rates", "0.1", "--density", "--given", "1", "--at", "1"],
    ] {
        let out = pwexp(&args);
        assert_eq!(out.status.code(), Some(2), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    }
}

#[test]
fn numeric_errors_have_their_own_code() {
    let out = pwexp(&["dist", "--survival", "--rates=-1", "--at", "1"]);
    assert_eq!(out.status.code(), Some(3));
    let dir = TempDir::new().unwrap();
    let data = path(&dir, "toy.csv");
    fs::write(&data, "followT,event\n2,0\n3,0\n9,0\n").unwrap();
    let out = pwexp(&["fit", "--in", &data]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no events"));
    let out = pwexp(&["fit", "--in", &path(&dir, "missing.csv")]);
    assert_eq!(out.status.code(), Some(1));
}

struct Pipeline {
    dir: TempDir,
}

impl Pipeline {
    fn file(&self, name: &str) -> String {
        path(&self.dir, name)
    }

    /// simulate -> cut -> fit (events and drop-outs) -> boot.
    fn new(threads: &str) -> Self {
        let dir = TempDir::new().unwrap();
        let p = Pipeline { dir };
        let t = ["--threads", threads];
        ok(&[&[
            "simulate", "--per-month", "20", "--total", "1000", "--rates", "0.1,0.01,0.2", "--breaks", "5,14",
            "--drop-rate", "0.03", "--seed", "11", "--out", &p.file("trial.csv"),
        ][..], &t].concat());
        ok(&["cut", "--in", &p.file("trial.csv"), "--cut-quantile", "0.8", "--out", &p.file("cut.csv")]);
        ok(&[&["fit", "--in", &p.file("cut.csv"), "--nbreak", "2", "--seed", "12", "--out", &p.file("fit.json")][..], &t].concat());
        ok(&["fit", "--in", &p.file("cut.csv"), "--event-from-reason", "drop_out", "--out", &p.file("drop.json")]);
        ok(&[&[
            "boot", "--in", &p.file("cut.csv"), "--nbreak", "2", "--nsim", "20", "--seed", "13",
            "--out", &p.file("boot.json"),
        ][..], &t].concat());
        p
    }

    fn predict(&self, interval: &str, threads: &str) -> String {
        let out = self.file(&format!("pred_{interval}_{threads}.csv"));
        ok(&[
            "predict", "--in", &self.file("cut.csv"), "--model", &self.file("boot.json"),
            "--censor-model", &self.file("drop.json"), "--n-each", "20", "--seed", "14",
            "--interval", interval, "--threads", threads, "--out", &out,
        ]);
        out
    }
}

fn column(rows: &[Vec<String>], j: usize) -> Vec<f64> {
    rows.iter().map(|r| num(&r[j])).collect()
}

fn nondecreasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[1] >= w[0] - 1e-9)
}

#[test]
fn pipeline_produces_monotone_prediction_table() {
    let p = Pipeline::new("2");

    let fit: Value = serde_json::from_str(&fs::read_to_string(p.file("fit.json")).unwrap()).unwrap();
    let brk: Vec<f64> = fit["breakpoints"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
    assert!((brk[0] - 5.0).abs() < 1.5 && (brk[1] - 14.0).abs() < 1.5, "{brk:?}");
    assert_eq!(fit["n_obs"].as_u64(), Some(800));

    let (_, cut_rows) = read_csv(&p.file("cut.csv"));
    let observed = cut_rows.iter().filter(|r| r[1] == "1").count() as f64;

    let (head, conf) = read_csv(&p.predict("confidence", "2"));
    assert_eq!(head, ["time", "n_event", "lower", "upper"]);
    let (_, pred) = read_csv(&p.predict("predictive", "2"));
    assert_eq!(conf.len(), 201);
    assert_eq!(column(&conf, 0), column(&pred, 0));
    for rows in [&conf, &pred] {
        for j in 0..4 {
            assert!(nondecreasing(&column(rows, j)), "column {j} not monotone");
        }
        assert_eq!(num(&rows[0][1]), observed);
        for r in rows.iter() {
            let (n, lo, hi) = (num(&r[1]), num(&r[2]), num(&r[3]));
            assert!(lo <= n + 1e-9 && n <= hi + 1e-9, "{r:?}");
            assert!(hi <= 800.0);
        }
    }
    for (c, q) in conf.iter().zip(&pred).skip(1) {
        assert!(num(&q[2]) <= num(&c[2]) && num(&q[3]) >= num(&c[3]), "{c:?} vs {q:?}");
    }
}

#[test]
fn thread_count_does_not_change_outputs() {
    let a = Pipeline::new("1");
    let b = Pipeline::new("4");
    for f in ["trial.csv", "cut.csv", "fit.json", "boot.json"] {
        assert_eq!(fs::read(a.file(f)).unwrap(), fs::read(b.file(f)).unwrap(), "{f}");
    }
    assert_eq!(fs::read(a.predict("predictive", "1")).unwrap(), fs::read(b.predict("predictive", "3")).unwrap());
}

fn manifest_path(out: &Path) -> PathBuf {
    let mut p = out.as_os_str().to_owned();
    p.push(".manifest.json");
    PathBuf::from(p)
}

#[test]
fn outputs_regenerate_from_manifest() {
    let dir = TempDir::new().unwrap();
    let trial = path(&dir, "trial.csv");
    ok(&[
        "simulate", "--counts", "5,10,10", "--rates", "0.2", "--group", "trt:1:0.5", "--group", "ctl:1",
        "--drop-rate", "0.02", "--seed", "3", "--out", &trial,
    ]);
    let fit = path(&dir, "fit.json");
    let curve = path(&dir, "curve.csv");
    ok(&["fit", "--in", &trial, "--nbreak", "1", "--min-pt-tail", "2", "--seed", "4", "--out", &fit, "--curve-out", &curve]);
    let follow = path(&dir, "follow.csv");
    ok(&[
        "followup", "--counts", "5,10,10", "--rates", "0.2", "--group", "trt:1:0.5", "--group", "ctl:1",
        "--at", "10,20", "--stat", "mean,prop_3", "--by-group", "--rep", "20", "--seed", "5", "--out", &follow,
    ]);

    for out in [&trial, &fit, &curve, &follow] {
        let out = Path::new(out);
        let body = fs::read(out).unwrap();
        let mpath = manifest_path(out);
        let manifest_bytes = fs::read(&mpath).unwrap();
        let manifest: Value = serde_json::from_slice(&manifest_bytes).unwrap();
        assert!(manifest["seed"].as_u64().is_some(), "seed recorded");
        let argv: Vec<String> = manifest["argv"].as_array().unwrap().iter().map(|v| v.as_str().unwrap().to_string()).collect();
        fs::remove_file(out).unwrap();
        fs::remove_file(&mpath).unwrap();
        let argv: Vec<&str> = argv.iter().map(String::as_str).collect();
        ok(&argv);
        assert_eq!(fs::read(out).unwrap(), body, "{}", out.display());
        assert_eq!(fs::read(&mpath).unwrap(), manifest_bytes);
    }

    let (head, rows) = read_csv(&follow);
    assert_eq!(head, ["milestone", "group", "time", "n_event", "n_subject", "mean", "prop_3"]);
    assert_eq!(rows.len(), 4);
    let (head, _) = read_csv(&trial);
    assert_eq!(head.last().map(String::as_str), Some("group"));
}

#[test]
fn followup_matches_library_defaults() {
    use pwexp::simulation::{sim_followup, Enrollment, FollowupConfig, FollowupStat, Law, MilestoneKind, TrialDesign};
    use pwexp::PweModel;

    let out = ok(&[
        "followup", "--counts", "15,15,21,27", "--rates", "0.05,0.02", "--breaks", "6", "--group", "trt:1:0.6",
        "--group", "ctl:1", "--drop-rate", "0.01", "--at", "3,4.5", "--stat", "mean,prop_2", "--rep", "50",
        "--seed", "8",
    ])
    .stdout;

    let model = |hr: f64| Law::Pwe(PweModel::new(vec![0.05 * hr, 0.02 * hr], vec![6.0]).unwrap());
    let design = TrialDesign::new(Enrollment::Counts(vec![15, 15, 21, 27]), Law::Never)
        .with_groups(vec![("trt".into(), 1, model(0.6)), ("ctl".into(), 1, model(1.0))])
        .with_drop_rate(0.01)
        .unwrap();
    let mut cfg = FollowupConfig::new(vec![3.0, 4.5], MilestoneKind::Calendar, 50, 8);
    cfg.stats = vec![FollowupStat::Mean, FollowupStat::PropAbove(2.0)];
    let mut want = Vec::new();
    pwexp::io::write_followup(&mut want, &sim_followup(&design, &cfg).unwrap()).unwrap();
    assert_eq!(String::from_utf8(out).unwrap(), String::from_utf8(want).unwrap());
}
