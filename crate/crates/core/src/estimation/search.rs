//! Exhaustive and sub-sampled search over event-time change-points.

use std::cmp::Ordering;

use rand::seq::index;
use rayon::prelude::*;

use super::{FitConfig, FitContext, FitMethod, FitResult};
use crate::error::{Error, Result};
use crate::rng::{stream, tag};
use crate::survdata::SurvSample;

/// Best change-point vector found so far.
#[derive(Debug, Clone)]
pub(crate) struct Best {
    pub loglik: f64,
    pub breaks: Vec<f64>,
}

/// Higher log-likelihood wins; ties go to the lexicographically smaller vector.
fn better(a: Best, b: Best) -> Best {
    match a.loglik.total_cmp(&b.loglik) {
        Ordering::Greater => a,
        Ordering::Less => b,
        Ordering::Equal => {
            let lex = a
                .breaks
                .iter()
                .zip(&b.breaks)
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(a.breaks.len().cmp(&b.breaks.len()));
            if lex.is_le() {
                a
            } else {
                b
            }
        }
    }
}

/// Merge free candidates with the fixed points; `None` on a duplicate.
pub(crate) fn combine(free: &[f64], fixed: &[f64]) -> Option<Vec<f64>> {
    let mut all: Vec<f64> = free.iter().chain(fixed).copied().collect();
    all.sort_by(f64::total_cmp);
    if all.windows(2).any(|w| w[0] >= w[1]) {
        None
    } else {
        Some(all)
    }
}

/// Profile log-likelihood of a row, or `None` when it is infeasible.
fn score(ctx: &FitContext, config: &FitConfig, free: &[f64]) -> Option<Best> {
    let breaks = combine(free, &ctx.fixed)?;
    if !config.admissible(&breaks, &ctx.prepared) {
        return None;
    }
    let ll = ctx.prepared.tally(&breaks).profile_loglik().ok()?;
    Some(Best { loglik: ll, breaks })
}

/// Evaluate every row in parallel; deterministic for any worker count.
pub(crate) fn best_row(ctx: &FitContext, config: &FitConfig, rows: &[Vec<f64>]) -> Option<Best> {
    rows.par_iter()
        .filter_map(|row| score(ctx, config, row))
        .reduce_with(better)
}

pub(crate) fn choose(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Sub-sample size from bisection: the smallest `nr` found with
/// `C(nr, k) > max_set`, stopping once the bracket is narrower than 1.5.
pub(crate) fn sub_sample_size(n: usize, k: usize, max_set: usize) -> usize {
    let (mut nl, mut nr) = (1usize, n);
    loop {
        let mid = (nl + nr) / 2;
        if choose(mid, k) > max_set as f64 {
            nr = mid;
        } else {
            nl = mid;
        }
        if (nr as f64) - (nl as f64) < 1.5 {
            return nr;
        }
    }
}

/// All `k`-subsets of `items`, in lexicographic index order.
pub(crate) fn combinations(items: &[f64], k: usize) -> Vec<Vec<f64>> {
    let n = items.len();
    if k > n {
        return Vec::new();
    }
    let mut out = Vec::new();
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        out.push(idx.iter().map(|&i| items[i]).collect());
        let Some(pos) = (0..k).rev().find(|&i| idx[i] != i + n - k) else {
            return out;
        };
        idx[pos] += 1;
        for j in pos + 1..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

pub(crate) fn bfs(ctx: &FitContext, config: &FitConfig) -> Result<FitResult> {
    let k = ctx.free;
    let candidates: Vec<f64> = ctx
        .prepared
        .event_times()
        .iter()
        .copied()
        .filter(|&t| !config.excluded(t) && !ctx.fixed.contains(&t))
        .collect();
    if candidates.len() < k {
        return Err(Error::NoFeasibleModel(format!(
            "{} candidate event times for {k} change-points",
            candidates.len()
        )));
    }

    let mut rng = stream(config.seed, &[tag::SEARCH]);
    let rows = if choose(candidates.len(), k) <= config.max_set as f64 {
        combinations(&candidates, k)
    } else {
        let nr = sub_sample_size(candidates.len(), k, config.max_set);
        let mut picked: Vec<usize> = index::sample(&mut rng, candidates.len(), nr).into_vec();
        picked.sort_unstable();
        let sub: Vec<f64> = picked.iter().map(|&i| candidates[i]).collect();
        let all = combinations(&sub, k);
        if all.len() > config.max_set {
            let mut keep = index::sample(&mut rng, all.len(), config.max_set).into_vec();
            keep.sort_unstable();
            keep.into_iter().map(|i| all[i].clone()).collect()
        } else {
            all
        }
    };

    let best = best_row(ctx, config, &rows).ok_or_else(|| {
        Error::NoFeasibleModel(format!("all {} candidate combinations were infeasible", rows.len()))
    })?;
    ctx.finish(&best.breaks, FitMethod::Bfs, rows.len())
}

/// Brute-force search over event-time change-points.
pub fn fit_bfs(data: &SurvSample, config: &FitConfig) -> Result<FitResult> {
    if config.nbreak == 0 {
        return Err(Error::InvalidConfig("brute-force search needs nbreak >= 1".into()));
    }
    let ctx = FitContext::new(data, config)?;
    if ctx.free == 0 {
        return ctx.finish(&ctx.fixed, FitMethod::Fixed, 1);
    }
    bfs(&ctx, config)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn choose_values() {
        assert_eq!(choose(5, 2), 10.0);
        assert_eq!(choose(5, 0), 1.0);
        assert_eq!(choose(3, 4), 0.0);
        assert_eq!(choose(40, 20), 137_846_528_820.0);
    }

    #[test]
    fn combinations_enumerate_all() {
        let c = combinations(&[1.0, 2.0, 3.0, 4.0], 2);
        assert_eq!(c.len(), 6);
        assert_eq!(c[0], vec![1.0, 2.0]);
        assert_eq!(c[5], vec![3.0, 4.0]);
        assert_eq!(combinations(&[1.0], 0), vec![Vec::<f64>::new()]);
    }

    #[test]
    fn sub_sample_brackets_max_set() {
        for (n, k, m) in [(500, 2, 10_000), (800, 3, 10_000), (60, 1, 20), (1000, 4, 500)] {
            let nr = sub_sample_size(n, k, m);
            assert!(choose(nr, k) > m as f64, "{n} {k} {m} -> {nr}");
            assert!(choose(nr - 1, k) <= m as f64, "{n} {k} {m} -> {nr}");
        }
    }

    #[test]
    fn tie_break_is_lexicographic() {
        let a = Best { loglik: -1.0, breaks: vec![1.0, 3.0] };
        let b = Best { loglik: -1.0, breaks: vec![1.0, 2.0] };
        assert_eq!(better(a.clone(), b.clone()).breaks, vec![1.0, 2.0]);
        assert_eq!(better(b, a).breaks, vec![1.0, 2.0]);
    }
}
