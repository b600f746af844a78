//! Survival rate and the harmonic function of the killed walk.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{estimate_harmonic, estimate_survival_curve, fit_v_bounds, HarmonicParams};
use crate::matrix::SimplexPoint;
use crate::rng::{derive_seed, path_rng};
use crate::stats::{loglog_fit, Moments};
use crate::walk::WalkConfig;

use super::{inputs_hash, point_or_uniform, Check, ExperimentContext, PlotRow, VerdictReport, GATE_Z};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SurvivalRateParams {
    pub x: Option<Vec<f64>>,
    pub a: f64,
    pub horizons: Vec<usize>,
    pub count: u64,
    pub slope_tolerance: f64,
}

impl Default for SurvivalRateParams {
    fn default() -> Self {
        Self {
            x: None,
            a: 1.0,
            horizons: vec![64, 256, 1024, 4096],
            count: 10_000_000,
            slope_tolerance: 0.1,
        }
    }
}

/// Log-log slope of `P(τ > n)` against `n`, expected `−1/2`.
pub fn check_survival_rate(ctx: &ExperimentContext, params: &SurvivalRateParams, seed: u64) -> Result<VerdictReport> {
    let spec = &ctx.spec;
    let x = point_or_uniform(&params.x, spec.dim)?;
    if params.horizons.len() < 3 {
        return Err(Error::InvalidParameter("slope fit needs at least 3 horizons".into()));
    }
    let cfg = WalkConfig::forward(x, params.a, 1);
    let curve = estimate_survival_curve(
        spec,
        &cfg,
        &params.horizons,
        params.count,
        derive_seed(seed, "survival_rate"),
        ctx.workers,
    )?;
    let check = if curve.iter().all(|e| e.value > 0.0) {
        let pts: Vec<(f64, f64)> = params
            .horizons
            .iter()
            .zip(&curve)
            .map(|(&n, e)| (n as f64, e.value))
            .collect();
        let w: Vec<f64> = curve
            .iter()
            .map(|e| (e.value / e.std_error.max(1e-300)).powi(2))
            .collect();
        let fit = loglog_fit(&pts, Some(&w))?;
        (
            Check::at_most("slope_error", (fit.slope + 0.5).abs(), params.slope_tolerance),
            Some(fit),
        )
    } else {
        (
            Check::at_most("slope_error", f64::INFINITY, params.slope_tolerance)
                .with_reason("no survivors at some horizon"),
            None,
        )
    };
    let mut report = VerdictReport::build(
        "check_survival_rate",
        inputs_hash("check_survival_rate", ctx, params, seed),
        vec![check.0],
    );
    report.detail("slope", check.1.as_ref().map(|f| f.slope));
    report.detail("slope_std_error", check.1.as_ref().map(|f| f.slope_std_error));
    for (n, e) in params.horizons.iter().zip(&curve) {
        report.estimate(format!("survival_n{n}"), e);
    }
    report.plot_rows = params
        .horizons
        .iter()
        .zip(&curve)
        .map(|(&n, e)| PlotRow {
            n,
            b: params.a,
            estimate: e.value,
            std_error: e.std_error,
            main_term_paper: None,
            main_term_rayleigh: None,
            residual: None,
        })
        .collect();
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HarmonicConsistencyParams {
    pub x: Option<Vec<f64>>,
    pub levels: Vec<f64>,
    pub harmonic: HarmonicParams,
    /// The linear-regime level is this many `σ̂·√n_max` units.
    pub large_level_factor: f64,
    pub ratio_band: (f64, f64),
}

impl Default for HarmonicConsistencyParams {
    fn default() -> Self {
        Self {
            x: None,
            levels: vec![1.0, 5.0, 20.0],
            harmonic: HarmonicParams::default(),
            large_level_factor: 20.0,
            ratio_band: (0.8, 1.2),
        }
    }
}

/// Tail and martingale estimates of `V(x, a)` agree, and `V(x, a)/a → 1`.
pub fn check_harmonic_consistency(
    ctx: &ExperimentContext,
    params: &HarmonicConsistencyParams,
    seed: u64,
) -> Result<VerdictReport> {
    let spec = &ctx.spec;
    if params.levels.is_empty() {
        return Err(Error::InvalidParameter("need at least one level".into()));
    }
    let x = point_or_uniform(&params.x, spec.dim)?;
    let sub = derive_seed(seed, "harmonic_consistency");
    let mut worst = 0.0f64;
    let mut grid = Vec::new();
    let mut estimates = Vec::new();
    for &a in &params.levels {
        let h = estimate_harmonic(spec, &x, a, &params.harmonic, &ctx.sigma, sub, ctx.workers)?;
        let se = h.v_tail.std_error + h.v_mart.std_error;
        let z = if se > 0.0 {
            (h.v_tail.value - h.v_mart.value).abs() / se
        } else {
            0.0
        };
        worst = worst.max(z);
        grid.push((a, h.v_mart.value));
        estimates.push((a, h));
    }
    let n_max = *params
        .harmonic
        .horizons
        .iter()
        .max()
        .expect("validated by the estimator");
    let big_a = params.large_level_factor * ctx.sigma() * (n_max as f64).sqrt();
    let big = estimate_harmonic(spec, &x, big_a, &params.harmonic, &ctx.sigma, sub, ctx.workers)?;
    let ratio = big.v_mart.value / big_a;
    let (lo, hi) = params.ratio_band;
    let mid = 0.5 * (lo + hi);
    let checks = vec![
        Check::at_most("tail_vs_martingale_z", worst, GATE_Z),
        Check::at_most("large_level_ratio_offset", (ratio - mid).abs(), 0.5 * (hi - lo)),
    ];
    let mut report = VerdictReport::build(
        "check_harmonic_consistency",
        inputs_hash("check_harmonic_consistency", ctx, params, seed),
        checks,
    );
    let mut sorted = grid.clone();
    sorted.sort_by(|p, q| p.0.total_cmp(&q.0));
    report.detail("v_bounds", fit_v_bounds(&sorted, 0.0));
    report.detail("large_level", big_a);
    report.detail("large_level_ratio", ratio);
    for (a, h) in &estimates {
        report.estimate(format!("v_tail_a{a}"), &h.v_tail);
        report.estimate(format!("v_mart_a{a}"), &h.v_mart);
    }
    report.estimate("v_mart_large_level", &big.v_mart);
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HarmonicityParams {
    pub x: Option<Vec<f64>>,
    pub a: f64,
    /// Nodes per simplex coordinate of the surface.
    pub x_resolution: usize,
    pub a_step: f64,
    pub surface_horizon: usize,
    pub surface_count: u64,
    pub lhs_count: u64,
    pub draws: u64,
    /// Interpolation budget above this fraction of the left side is inconclusive.
    pub max_budget_fraction: f64,
}

impl Default for HarmonicityParams {
    fn default() -> Self {
        Self {
            x: None,
            a: 5.0,
            x_resolution: 6,
            a_step: 0.5,
            surface_horizon: 64,
            surface_count: 40_000,
            lhs_count: 400_000,
            draws: 200_000,
            max_budget_fraction: 0.5,
        }
    }
}

/// Values of `V̂_m` on `nodes × {0, h, 2h, …}` with `m` the surface horizon.
struct Surface {
    nodes: Vec<Vec<f64>>,
    step: f64,
    values: Vec<Vec<f64>>,
    std_errors: Vec<Vec<f64>>,
}

impl Surface {
    /// Bracketing indices and weight along the level axis.
    fn level_cell(&self, a: f64) -> (usize, f64) {
        let last = self.values[0].len() - 1;
        let pos = (a / self.step).clamp(0.0, last as f64);
        let k = (pos.floor() as usize).min(last.saturating_sub(1));
        (k, if last == 0 { 0.0 } else { pos - k as f64 })
    }

    fn along_level(&self, row: &[f64], a: f64) -> f64 {
        let (k, t) = self.level_cell(a);
        if t == 0.0 {
            row[k]
        } else {
            row[k] * (1.0 - t) + row[k + 1] * t
        }
    }

    /// `(value, std_error)` at `(x, a)`: linear in the first coordinate when
    /// `d = 2`, nearest node otherwise; linear in the level.
    fn interpolate(&self, x: &[f64], a: f64) -> (f64, f64) {
        if x.len() == 2 && self.nodes.len() > 1 {
            let p = x[0];
            let j = self
                .nodes
                .windows(2)
                .position(|w| p <= w[1][0])
                .unwrap_or(self.nodes.len() - 2);
            let (lo, hi) = (self.nodes[j][0], self.nodes[j + 1][0]);
            let t = ((p - lo) / (hi - lo)).clamp(0.0, 1.0);
            let v = self.along_level(&self.values[j], a) * (1.0 - t) + self.along_level(&self.values[j + 1], a) * t;
            let s =
                self.along_level(&self.std_errors[j], a) * (1.0 - t) + self.along_level(&self.std_errors[j + 1], a) * t;
            (v, s)
        } else {
            let j = self.nearest(x);
            (
                self.along_level(&self.values[j], a),
                self.along_level(&self.std_errors[j], a),
            )
        }
    }

    fn nearest(&self, x: &[f64]) -> usize {
        let dist = |n: &[f64]| n.iter().zip(x).map(|(p, q)| (p - q) * (p - q)).sum::<f64>();
        (0..self.nodes.len())
            .min_by(|&i, &j| dist(&self.nodes[i]).total_cmp(&dist(&self.nodes[j])))
            .expect("at least one node")
    }

    /// Bound on the interpolation error from second differences.
    fn budget(&self, two_dim: bool) -> f64 {
        let along_a = self
            .values
            .iter()
            .flat_map(|row| row.windows(3).map(|w| (w[0] - 2.0 * w[1] + w[2]).abs()))
            .fold(0.0, f64::max)
            / 8.0;
        let levels = self.values[0].len();
        let across = if self.nodes.len() < 2 {
            0.0
        } else if two_dim {
            (0..levels)
                .flat_map(|k| {
                    self.values
                        .windows(3)
                        .map(move |w| (w[0][k] - 2.0 * w[1][k] + w[2][k]).abs())
                })
                .fold(0.0, f64::max)
                / 8.0
        } else {
            (0..levels)
                .map(|k| {
                    let col = self.values.iter().map(|r| r[k]);
                    let hi = col.clone().fold(f64::NEG_INFINITY, f64::max);
                    let lo = col.fold(f64::INFINITY, f64::min);
                    (hi - lo) / 2.0
                })
                .fold(0.0, f64::max)
        };
        along_a + across
    }
}

/// Surface nodes covering the one-step images: evenly spaced in the first
/// coordinate for `d = 2`, the nearest lattice points of the images otherwise.
fn surface_nodes(images: &[(Vec<f64>, f64)], dim: usize, resolution: usize) -> Vec<Vec<f64>> {
    if dim == 2 {
        let lo = images.iter().map(|(p, _)| p[0]).fold(f64::INFINITY, f64::min);
        let hi = images.iter().map(|(p, _)| p[0]).fold(f64::NEG_INFINITY, f64::max);
        if hi - lo < 1e-9 || resolution < 2 {
            return vec![vec![lo, 1.0 - lo]];
        }
        return (0..resolution)
            .map(|k| {
                let p = lo + (hi - lo) * k as f64 / (resolution - 1) as f64;
                vec![p, 1.0 - p]
            })
            .collect();
    }
    let r = resolution.max(1) as f64;
    let mut nodes: Vec<Vec<f64>> = Vec::new();
    for (p, _) in images {
        let mut q: Vec<f64> = p.iter().map(|c| (c * r).round() / r).collect();
        let total: f64 = q.iter().sum();
        if total <= 0.0 {
            continue;
        }
        q.iter_mut().for_each(|c| *c /= total);
        if !nodes
            .iter()
            .any(|n| n.iter().zip(&q).all(|(a, b)| (a - b).abs() < 1e-12))
        {
            nodes.push(q);
        }
    }
    nodes.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    nodes
}

/// Harmonicity `V(x, a) = E[V(X₁, a + S₁); τ > 1]` on a precomputed
/// surface of martingale estimates.
///
/// Each surface value is `V̂_m`, the mean of `(a + S_m)·1{τ > m}`; the left
/// side uses horizon `m + 1`, for which the identity holds exactly.
pub fn check_harmonicity(ctx: &ExperimentContext, params: &HarmonicityParams, seed: u64) -> Result<VerdictReport> {
    let spec = &ctx.spec;
    if params.a < 0.0 || !(params.a_step > 0.0) || params.draws < 2 || params.surface_horizon < 1 {
        return Err(Error::InvalidParameter(
            "harmonicity needs a ≥ 0, a_step > 0, draws ≥ 2".into(),
        ));
    }
    let x = point_or_uniform(&params.x, spec.dim)?;
    let sampler = spec.sampler()?;
    let stream = derive_seed(seed, "harmonicity/draws");
    let images: Vec<(Vec<f64>, f64)> = (0..params.draws)
        .map(|j| {
            let mut rng = path_rng(stream, j);
            let g = sampler.sample_matrix(&mut rng);
            let (p, rho) = g.act_projective(&x);
            (p.coords().to_vec(), params.a + rho)
        })
        .collect();
    let alive: Vec<&(Vec<f64>, f64)> = images.iter().filter(|(_, l)| *l > 0.0).collect();
    let top = alive.iter().map(|(_, l)| *l).fold(0.0, f64::max);
    let levels = (top / params.a_step).ceil() as usize + 1;
    let nodes = surface_nodes(&images, spec.dim, params.x_resolution);

    let surface_params = HarmonicParams {
        horizons: vec![params.surface_horizon],
        count: params.surface_count,
        min_survivors: 1,
    };
    let surface_seed = derive_seed(seed, "harmonicity/surface");
    let mut values = Vec::with_capacity(nodes.len());
    let mut std_errors = Vec::with_capacity(nodes.len());
    for node in &nodes {
        let point = SimplexPoint::from_unnormalized(node.clone())?;
        let mut row = Vec::with_capacity(levels);
        let mut se_row = Vec::with_capacity(levels);
        for k in 0..levels {
            let h = estimate_harmonic(
                spec,
                &point,
                k as f64 * params.a_step,
                &surface_params,
                &ctx.sigma,
                surface_seed,
                ctx.workers,
            )?;
            row.push(h.v_mart.value);
            se_row.push(h.v_mart.std_error);
        }
        values.push(row);
        std_errors.push(se_row);
    }
    let surface = Surface {
        nodes,
        step: params.a_step,
        values,
        std_errors,
    };

    let mut rhs = Moments::default();
    let mut surface_se = 0.0;
    for (p, l) in &images {
        if *l > 0.0 {
            let (v, s) = surface.interpolate(p, *l);
            rhs.push(v);
            surface_se += s;
        } else {
            rhs.push(0.0);
        }
    }
    surface_se /= images.len() as f64;
    let rhs_value = rhs.mean();
    // surface errors share one random stream, so they are added, not pooled
    let rhs_se = rhs.std_error() + surface_se;

    let lhs_params = HarmonicParams {
        horizons: vec![params.surface_horizon + 1],
        count: params.lhs_count,
        min_survivors: 1,
    };
    let lhs = estimate_harmonic(
        spec,
        &x,
        params.a,
        &lhs_params,
        &ctx.sigma,
        derive_seed(seed, "harmonicity/lhs"),
        ctx.workers,
    )?
    .v_mart;
    let budget = surface.budget(spec.dim == 2);
    let gap = (rhs_value - lhs.value).abs();
    let allowed = GATE_Z * (lhs.std_error + rhs_se) + budget;
    let mut check = Check::at_most("harmonic_gap", gap, allowed);
    if budget > params.max_budget_fraction * lhs.value.abs() {
        check = check.inconclusive(format!(
            "interpolation budget {budget:.4} exceeds {} of the left side {:.4}; refine the grid",
            params.max_budget_fraction, lhs.value
        ));
    }
    let mut report = VerdictReport::build(
        "check_harmonicity",
        inputs_hash("check_harmonicity", ctx, params, seed),
        vec![check],
    );
    report.detail("lhs", lhs.value);
    report.detail("rhs", rhs_value);
    report.detail("rhs_std_error", rhs_se);
    report.detail("interpolation_budget", budget);
    report.detail("surface_nodes", surface.nodes.len());
    report.detail("surface_levels", levels);
    report.detail("killed_fraction", 1.0 - alive.len() as f64 / images.len() as f64);
    report.estimate("lhs_v", &lhs);
    report.estimate(
        "rhs_one_step",
        &crate::estimators::Estimate::new(rhs_value, rhs_se, params.draws, "harmonicity:one_step"),
    );
    Ok(report)
}
