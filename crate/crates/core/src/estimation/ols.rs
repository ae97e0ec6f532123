//! Segmented least squares on the log survival curve, and the hybrid search
//! that refines it by likelihood.

use rand::seq::index;

use super::search::{best_row, combine};
use super::segmented::segment_context;
use super::validate::validate_prepared;
use super::{FitConfig, FitContext, FitMethod, FitResult};
use crate::error::{Error, Result};
use crate::rng::{stream, tag};
use crate::survdata::SurvSample;

/// Event times that may host a searched change-point.
fn candidate_times(ctx: &FitContext, config: &FitConfig) -> Vec<f64> {
    ctx.prepared
        .event_times()
        .iter()
        .copied()
        .filter(|&t| !config.excluded(t) && !ctx.fixed.contains(&t))
        .collect()
}

fn nearest(cands: &[f64], target: f64) -> Option<f64> {
    cands
        .iter()
        .copied()
        .min_by(|a, b| (a - target).abs().total_cmp(&(b - target).abs()).then(a.total_cmp(b)))
}

/// Move segmented estimates so that tail controls hold: points inside the
/// excluded interval go to the nearest allowed event time, and a last point
/// leaving too few events after it moves back to the latest event time
/// that leaves enough.
fn project_tail_controls(free: &[f64], ctx: &FitContext, config: &FitConfig) -> Vec<f64> {
    let cands = candidate_times(ctx, config);
    let mut out: Vec<f64> = free
        .iter()
        .map(|&p| {
            if config.excluded(p) {
                nearest(&cands, p).unwrap_or(p)
            } else {
                p
            }
        })
        .collect();
    out.sort_by(f64::total_cmp);

    let last_overall = out.iter().chain(&ctx.fixed).copied().fold(f64::NEG_INFINITY, f64::max);
    if let Some(last) = out.last_mut() {
        if *last == last_overall && ctx.prepared.events_from(*last) < config.min_pt_tail {
            if let Some(&c) = cands
                .iter()
                .rev()
                .find(|&&c| ctx.prepared.events_from(c) >= config.min_pt_tail)
            {
                *last = c;
            }
        }
    }
    out
}

pub(crate) fn ols(data: &SurvSample, ctx: &FitContext, config: &FitConfig) -> Result<FitResult> {
    let seg = segment_context(data, ctx, config)?;
    let free = project_tail_controls(&seg.breakpoints, ctx, config);
    let mut breaks: Vec<f64> = free.iter().chain(&ctx.fixed).copied().collect();
    breaks.sort_by(f64::total_cmp);
    breaks.dedup();
    let (breaks, mut warnings) = validate_prepared(&breaks, &ctx.prepared);
    if !seg.converged {
        warnings.push("segmented regression did not converge; used least-squares grid".into());
    }
    if !config.admissible(&breaks, &ctx.prepared) {
        warnings.push("fitted change-points violate tail controls".into());
    }
    let mut fit = ctx.finish(&breaks, FitMethod::Ols, 1)?;
    fit.diagnostics.warnings.extend(warnings);
    Ok(fit)
}

/// Event times within `half` of `center`, plus the `min_count` nearest.
fn window(cands: &[f64], center: f64, half: f64, min_count: usize) -> Vec<f64> {
    let mut w: Vec<f64> = cands
        .iter()
        .copied()
        .filter(|&c| (c - center).abs() <= half)
        .collect();
    let mut by_distance = cands.to_vec();
    by_distance.sort_by(|a, b| (a - center).abs().total_cmp(&(b - center).abs()).then(a.total_cmp(b)));
    w.extend(by_distance.iter().take(min_count));
    w.sort_by(f64::total_cmp);
    w.dedup();
    w
}

/// Rows of the cross product of `windows`, at most `max_set` of them
/// (random when capped), keeping only strictly increasing rows.
fn grid_rows(windows: &[Vec<f64>], max_set: usize, rng: &mut crate::rng::StreamRng) -> Result<Vec<Vec<f64>>> {
    let sizes: Vec<usize> = windows.iter().map(Vec::len).collect();
    let decode = |mut i: usize| -> Vec<f64> {
        let mut row = vec![0.0; sizes.len()];
        for k in (0..sizes.len()).rev() {
            row[k] = windows[k][i % sizes[k]];
            i /= sizes[k];
        }
        row
    };
    let picked: Vec<usize> = match sizes.iter().try_fold(1usize, |acc, &s| acc.checked_mul(s)) {
        Some(t) if t <= max_set => (0..t).collect(),
        Some(t) => {
            let mut v = index::sample(rng, t, max_set).into_vec();
            v.sort_unstable();
            v
        }
        None => return Err(Error::NoFeasibleModel("hybrid candidate grid is too large".into())),
    };
    Ok(picked
        .into_iter()
        .map(decode)
        .filter(|r| r.windows(2).all(|w| w[0] < w[1]))
        .collect())
}

/// Rounds of window re-centring after the first search.
const MAX_RECENTER: usize = 50;

pub(crate) fn hybrid(data: &SurvSample, ctx: &FitContext, config: &FitConfig) -> Result<FitResult> {
    let seg = segment_context(data, ctx, config)?;
    let cands = candidate_times(ctx, config);
    if cands.len() < ctx.free {
        return Err(Error::NoFeasibleModel(format!(
            "{} candidate event times for {} change-points",
            cands.len(),
            ctx.free
        )));
    }
    let spacing = if cands.len() > 1 {
        (cands[cands.len() - 1] - cands[0]) / (cands.len() - 1) as f64
    } else {
        1.0
    };
    let halves: Vec<f64> = (0..ctx.free)
        .map(|k| match &seg.std_errors {
            Some(se) => config.ci_z * se[k],
            None => 3.0 * spacing,
        })
        .collect();
    // At least three event times per window, more when the combination
    // budget allows an exhaustive grid of that many.
    let per_window = (config.max_set as f64).powf(1.0 / ctx.free as f64).floor() as usize;
    let min_count = per_window.max(3);
    let mut rng = stream(config.seed, &[tag::SEARCH]);

    let windows: Vec<Vec<f64>> = seg
        .breakpoints
        .iter()
        .zip(&halves)
        .map(|(&psi, &h)| window(&cands, psi, h, min_count))
        .collect();
    let snapped: Vec<f64> = seg
        .breakpoints
        .iter()
        .filter_map(|&psi| nearest(&cands, psi))
        .collect();
    let mut rows = grid_rows(&windows, config.max_set, &mut rng)?;
    if snapped.windows(2).all(|w| w[0] < w[1]) && !rows.contains(&snapped) {
        rows.push(snapped);
    }
    rows.retain(|r| combine(r, &ctx.fixed).is_some());
    let mut evaluated = rows.len();
    let mut best = best_row(ctx, config, &rows).ok_or_else(|| {
        Error::NoFeasibleModel(format!("all {} hybrid candidate rows were infeasible", rows.len()))
    })?;

    // The segmented interval ignores the serial correlation of Kaplan–Meier
    // points and can miss the likelihood peak; move the windows to the best
    // row until it stops changing.
    let mut converged = false;
    for _ in 0..MAX_RECENTER {
        let free: Vec<f64> = best.breaks.iter().copied().filter(|d| !ctx.fixed.contains(d)).collect();
        let windows: Vec<Vec<f64>> = free.iter().zip(&halves).map(|(&c, &h)| window(&cands, c, h, min_count)).collect();
        let mut rows = grid_rows(&windows, config.max_set, &mut rng)?;
        rows.retain(|r| combine(r, &ctx.fixed).is_some());
        evaluated += rows.len();
        let Some(next) = best_row(ctx, config, &rows) else {
            converged = true;
            break;
        };
        if next.loglik > best.loglik {
            best = next;
        } else {
            converged = true;
            break;
        }
    }

    let mut fit = ctx.finish(&best.breaks, FitMethod::Hybrid, evaluated)?;
    if !seg.converged {
        fit.diagnostics
            .warnings
            .push("segmented regression did not converge; hybrid window from candidate spacing".into());
    }
    if !converged {
        fit.diagnostics
            .warnings
            .push(format!("hybrid window still moving after {MAX_RECENTER} rounds"));
    }
    Ok(fit)
}

/// Segmented regression on the log Kaplan–Meier curve, then closed-form
/// rates at the fitted change-points. Not a likelihood maximiser.
pub fn fit_ols(data: &SurvSample, config: &FitConfig) -> Result<FitResult> {
    let ctx = FitContext::new(data, config)?;
    if ctx.free == 0 {
        // Slope through the origin only; rates still come from the MLE.
        segment_context(data, &ctx, config)?;
        return ctx.finish(&ctx.fixed, FitMethod::Fixed, 1);
    }
    ols(data, &ctx, config)
}

/// Segmented estimates first, then an exhaustive likelihood search over
/// event times inside each estimate's confidence window.
pub fn fit_hybrid(data: &SurvSample, config: &FitConfig) -> Result<FitResult> {
    let ctx = FitContext::new(data, config)?;
    if ctx.free == 0 {
        return ctx.finish(&ctx.fixed, FitMethod::Fixed, 1);
    }
    hybrid(data, &ctx, config)
}
