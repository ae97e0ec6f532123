//! Continuous piecewise-linear regression through the origin with unknown
//! breakpoints, fitted by iterative linearisation.
//!
//! The model is `y = β·x + Σ_j γ_j (x − ψ_j)_+`. Around the current
//! breakpoints each free `(x − ψ)_+` term is linearised by adding a column
//! `−I(x > ψ)` whose coefficient `δ` gives the update `ψ ← ψ + δ/γ`.
//! Steps are halved until the profile residual sum of squares does not
//! increase. Standard errors of the breakpoints come from the delta method on
//! `δ/γ` at the final iterate.

use nalgebra::{DMatrix, DVector};
use rand::seq::index;

use super::search::combinations;
use super::{FitConfig, FitContext};
use crate::error::{Error, Result};
use crate::rng::{stream, tag};
use crate::survdata::{km_fit, SurvSample};

/// Result of the segmented fit on `(event time, log Ŝ)` points.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentedFit {
    /// Estimated free breakpoints, increasing.
    pub breakpoints: Vec<f64>,
    /// Standard errors of `breakpoints`, when the final fit supports them.
    pub std_errors: Option<Vec<f64>>,
    /// Breakpoints held fixed during the fit.
    pub fixed: Vec<f64>,
    /// Slope of the first segment (`−λ₁`).
    pub initial_slope: f64,
    pub sse: f64,
    /// False when every start failed and a grid search was used instead.
    pub converged: bool,
}

struct LeastSquares {
    coef: DVector<f64>,
    sse: f64,
    /// `(XᵀX)⁻¹`
    xtx_inv: DMatrix<f64>,
}

fn least_squares(x: &DMatrix<f64>, y: &DVector<f64>) -> Option<LeastSquares> {
    let xt = x.transpose();
    let chol = (&xt * x).cholesky()?;
    let coef = chol.solve(&(&xt * y));
    if coef.iter().any(|c| !c.is_finite()) {
        return None;
    }
    let resid = y - x * &coef;
    Some(LeastSquares {
        sse: resid.norm_squared(),
        xtx_inv: chol.inverse(),
        coef,
    })
}

struct Problem<'a> {
    x: &'a [f64],
    y: DVector<f64>,
    fixed: &'a [f64],
    /// Minimum number of points in every segment.
    min_points: usize,
}

impl Problem<'_> {
    /// Design `[x, U(fixed), U(free), V(free)?]`.
    fn design(&self, free: &[f64], with_steps: bool) -> DMatrix<f64> {
        let n = self.x.len();
        let cols = 1 + self.fixed.len() + free.len() * if with_steps { 2 } else { 1 };
        DMatrix::from_fn(n, cols, |i, j| {
            let xi = self.x[i];
            if j == 0 {
                return xi;
            }
            let j = j - 1;
            if j < self.fixed.len() {
                return (xi - self.fixed[j]).max(0.0);
            }
            let j = j - self.fixed.len();
            if j < free.len() {
                (xi - free[j]).max(0.0)
            } else if xi > free[j - free.len()] {
                -1.0
            } else {
                0.0
            }
        })
    }

    fn valid(&self, free: &[f64]) -> bool {
        if free.iter().any(|p| !p.is_finite()) {
            return false;
        }
        let mut all: Vec<f64> = free.iter().chain(self.fixed).copied().collect();
        all.sort_by(f64::total_cmp);
        let mut lo = f64::NEG_INFINITY;
        for &p in all.iter().chain(std::iter::once(&f64::INFINITY)) {
            let inside = self.x.iter().filter(|&&v| v > lo && v <= p).count();
            if inside < self.min_points || p <= lo {
                return false;
            }
            lo = p;
        }
        true
    }

    fn profile_sse(&self, free: &[f64]) -> Option<f64> {
        least_squares(&self.design(free, false), &self.y).map(|f| f.sse)
    }

    /// One linearised run from `start`; `None` if it breaks down or does not settle.
    fn run(&self, start: Vec<f64>, max_iter: usize) -> Option<(Vec<f64>, f64)> {
        let k = start.len();
        let range = self.x.last()? - self.x.first()?;
        let mut psi = start;
        if !self.valid(&psi) {
            return None;
        }
        let mut sse = self.profile_sse(&psi)?;
        for _ in 0..max_iter {
            let full = least_squares(&self.design(&psi, true), &self.y)?;
            let off = 1 + self.fixed.len();
            let step: Vec<f64> = (0..k)
                .map(|j| full.coef[off + k + j] / full.coef[off + j])
                .collect();
            if step.iter().any(|s| !s.is_finite()) {
                return None;
            }
            let mut accepted = None;
            let mut h = 1.0;
            for _ in 0..12 {
                let cand: Vec<f64> = psi.iter().zip(&step).map(|(p, s)| p + h * s).collect();
                if cand.windows(2).all(|w| w[0] < w[1]) && self.valid(&cand) {
                    if let Some(s) = self.profile_sse(&cand) {
                        if s <= sse * (1.0 + 1e-12) + 1e-300 {
                            accepted = Some((cand, s));
                            break;
                        }
                    }
                }
                h *= 0.5;
            }
            let Some((cand, s)) = accepted else {
                // No descent direction left: a local minimum.
                return Some((psi, sse));
            };
            let moved = cand
                .iter()
                .zip(&psi)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            psi = cand;
            sse = s;
            if moved < 1e-8 * range {
                return Some((psi, sse));
            }
        }
        None
    }

    /// Delta-method standard errors of `ψ + δ/γ` at `psi`.
    fn std_errors(&self, psi: &[f64]) -> Option<Vec<f64>> {
        let k = psi.len();
        let design = self.design(psi, true);
        let dof = self.x.len().checked_sub(design.ncols()).filter(|&d| d > 0)?;
        let full = least_squares(&design, &self.y)?;
        let sigma2 = full.sse / dof as f64;
        let off = 1 + self.fixed.len();
        let se = (0..k)
            .map(|j| {
                let (gi, di) = (off + j, off + k + j);
                let (g, d) = (full.coef[gi], full.coef[di]);
                let var = sigma2
                    * (full.xtx_inv[(di, di)] / (g * g) + d * d * full.xtx_inv[(gi, gi)] / g.powi(4)
                        - 2.0 * d * full.xtx_inv[(gi, di)] / g.powi(3));
                var.max(0.0).sqrt()
            })
            .collect::<Vec<f64>>();
        se.iter().all(|s| s.is_finite()).then_some(se)
    }
}

/// Type-7 quantile of sorted data.
fn sorted_quantile(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Fit `free` breakpoints to `points` (sorted by x) with `fixed` held in place.
pub(crate) fn segment_points(
    points: &[(f64, f64)],
    fixed: &[f64],
    free: usize,
    config: &FitConfig,
) -> Result<SegmentedFit> {
    let x: Vec<f64> = points.iter().map(|p| p.0).collect();
    let problem = Problem {
        x: &x,
        y: DVector::from_iterator(points.len(), points.iter().map(|p| p.1)),
        fixed,
        min_points: 2,
    };
    let needed = 2 * (free + fixed.len() + 1);
    if points.len() < needed {
        return Err(Error::InvalidData(format!(
            "segmented fit needs at least {needed} survival points, found {}",
            points.len()
        )));
    }

    let finish = |psi: Vec<f64>, sse: f64, converged: bool| -> Result<SegmentedFit> {
        let slope = least_squares(&problem.design(&psi, false), &problem.y)
            .map(|f| f.coef[0])
            .ok_or_else(|| Error::NoFeasibleModel("segmented fit is rank deficient".into()))?;
        Ok(SegmentedFit {
            std_errors: if converged && !psi.is_empty() {
                problem.std_errors(&psi)
            } else {
                None
            },
            breakpoints: psi,
            fixed: fixed.to_vec(),
            initial_slope: slope,
            sse,
            converged,
        })
    };

    if free == 0 {
        let sse = problem
            .profile_sse(&[])
            .ok_or_else(|| Error::NoFeasibleModel("segmented fit is rank deficient".into()))?;
        return finish(Vec::new(), sse, true);
    }

    let mut rng = stream(config.seed, &[tag::SEGMENTED]);
    let mut starts = vec![(1..=free)
        .map(|j| sorted_quantile(&x, j as f64 / (free + 1) as f64))
        .collect::<Vec<f64>>()];
    for _ in 0..config.ols_restarts {
        let mut idx = index::sample(&mut rng, x.len(), free).into_vec();
        idx.sort_unstable();
        starts.push(idx.into_iter().map(|i| x[i]).collect());
    }

    let best = starts
        .into_iter()
        .filter_map(|s| problem.run(s, config.ols_max_iter))
        .min_by(|a, b| a.1.total_cmp(&b.1).then_with(|| lex(&a.0, &b.0)));
    if let Some((psi, sse)) = best {
        return finish(psi, sse, true);
    }

    // Every start failed: least-squares grid over the observed x values.
    let mut rows = combinations(&x, free);
    if rows.len() > config.max_set {
        let mut keep = index::sample(&mut rng, rows.len(), config.max_set).into_vec();
        keep.sort_unstable();
        rows = keep.into_iter().map(|i| rows[i].clone()).collect();
    }
    let grid = rows
        .into_iter()
        .filter(|r| problem.valid(r))
        .filter_map(|r| problem.profile_sse(&r).map(|s| (r, s)))
        .min_by(|a, b| a.1.total_cmp(&b.1).then_with(|| lex(&a.0, &b.0)))
        .ok_or_else(|| Error::NoFeasibleModel("no valid breakpoint configuration for segmented fit".into()))?;
    finish(grid.0, grid.1, false)
}

fn lex(a: &[f64], b: &[f64]) -> std::cmp::Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(std::cmp::Ordering::Equal)
}

pub(crate) fn segment_context(data: &SurvSample, ctx: &FitContext, config: &FitConfig) -> Result<SegmentedFit> {
    let km = km_fit(data)?;
    segment_points(&km.log_points(), &ctx.fixed, ctx.free, config)
}

/// Segmented regression of `log Ŝ(t)` on `t` for the free change-points in `config`.
pub fn segment_log_survival(data: &SurvSample, config: &FitConfig) -> Result<SegmentedFit> {
    let ctx = FitContext::new(data, config)?;
    segment_context(data, &ctx, config)
}
