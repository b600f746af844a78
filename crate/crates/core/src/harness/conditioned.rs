//! Local limit theorems for the walk conditioned to stay positive.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{
    check_horizons, conditioned_terminal_sample, estimate_harmonic, estimate_harmonic_dual, estimate_local_windows,
    Estimate, HarmonicParams, LocalQuery, LocalStrategy, Window,
};
use crate::matrix::ComparisonConstants;
use crate::rng::derive_seed;
use crate::stats::{ks_one_sample, loglog_fit, rayleigh_cdf};

use super::{inputs_hash, point_or_uniform, Check, ExperimentContext, PlotRow, VerdictReport, GATE_Z};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GnedenkoParams {
    pub x: Option<Vec<f64>>,
    pub a: f64,
    /// Window starts in units of `σ̂·√n`.
    pub b_units: Vec<f64>,
    pub ell: f64,
    pub n_list: Vec<usize>,
    pub count: u64,
    pub strategy: LocalStrategy,
    pub harmonic: HarmonicParams,
    pub kappa_tolerance: f64,
}

impl Default for GnedenkoParams {
    fn default() -> Self {
        Self {
            x: None,
            a: 1.0,
            b_units: (0..9).map(|k| k as f64 * 0.25).collect(),
            ell: 4.0,
            n_list: vec![256, 1024, 4096],
            count: 2_000_000,
            strategy: LocalStrategy::Split { clones: 4 },
            harmonic: HarmonicParams::default(),
            kappa_tolerance: 0.25,
        }
    }
}

/// Main term of the conditioned local probability with the constant as stated
/// in the theorem: `2√(2π)/(σ²√n)·V·b·e^{−b²/(2n)}·ℓ`.
pub fn main_term_paper(n: usize, b: f64, ell: f64, v: f64, sigma: f64) -> f64 {
    let n = n as f64;
    2.0 * (2.0 * PI).sqrt() / (sigma * sigma * n.sqrt()) * v * b * (-b * b / (2.0 * n)).exp() * ell
}

/// Main term consistent with the Rayleigh terminal law:
/// `2/(√(2π)σ³√n)·V·b·e^{−b²/(2σ²n)}·ℓ`.
pub fn main_term_rayleigh(n: usize, b: f64, ell: f64, v: f64, sigma: f64) -> f64 {
    let n = n as f64;
    2.0 / ((2.0 * PI).sqrt() * sigma.powi(3) * n.sqrt()) * v * b * (-b * b / (2.0 * sigma * sigma * n)).exp() * ell
}

/// Compares `n·P(τ > n, S_n ∈ [b, b+ℓ])` with the main terms over a grid of
/// diffusive window starts and fits the free constant of the shape
/// `κ·V·(b/√n)·e^{−b²/(2σ²n)}·ℓ`.
pub fn check_gnedenko(ctx: &ExperimentContext, params: &GnedenkoParams, seed: u64) -> Result<VerdictReport> {
    let spec = &ctx.spec;
    check_horizons(&params.n_list)?;
    if params.b_units.is_empty() || params.b_units.iter().any(|u| !(*u >= 0.0)) || !(params.ell > 0.0) {
        return Err(Error::InvalidParameter(
            "gnedenko needs a nonnegative b grid and ell > 0".into(),
        ));
    }
    let x = point_or_uniform(&params.x, spec.dim)?;
    let sigma = ctx.sigma();
    let v = estimate_harmonic(
        spec,
        &x,
        params.a,
        &params.harmonic,
        &ctx.sigma,
        derive_seed(seed, "gnedenko/harmonic"),
        ctx.workers,
    )?;
    let v_hat = v.value().value;

    // (n, b, n·P̂, n·se, M1, M2)
    let mut cells: Vec<(usize, f64, Estimate, f64, f64)> = Vec::new();
    for &n in &params.n_list {
        let width = sigma * (n as f64).sqrt();
        let windows: Vec<Window> = params
            .b_units
            .iter()
            .map(|u| Window::new(u * width, params.ell))
            .collect();
        let q = LocalQuery::conditioned(x.clone(), params.a, n);
        let sub = derive_seed(seed, &format!("gnedenko/n{n}"));
        let est = estimate_local_windows(spec, &q, &windows, params.count, sub, params.strategy, ctx.workers)?;
        for (w, e) in windows.iter().zip(est) {
            let m1 = main_term_paper(n, w.b, params.ell, v_hat, sigma);
            let m2 = main_term_rayleigh(n, w.b, params.ell, v_hat, sigma);
            cells.push((n, w.b, e.scaled(n as f64), m1, m2));
        }
    }

    let max_residual = |n: usize| {
        cells
            .iter()
            .filter(|c| c.0 == n)
            .map(|c| (c.2.value - c.4).abs())
            .fold(0.0, f64::max)
    };
    let n_first = params.n_list[0];
    let n_last = *params.n_list.last().expect("checked");
    let residuals: Vec<f64> = params.n_list.iter().map(|&n| max_residual(n)).collect();

    // weighted least squares through the origin: y ≈ κ·f
    let (mut num, mut den) = (0.0, 0.0);
    for (n, b, y, ..) in &cells {
        let f = v_hat * (b / (*n as f64).sqrt()) * (-b * b / (2.0 * sigma * sigma * *n as f64)).exp() * params.ell;
        let w = 1.0 / y.std_error.max(1e-12).powi(2);
        num += w * f * y.value;
        den += w * f * f;
    }
    let kappa = if den > 0.0 { num / den } else { f64::NAN };
    let kappa_theory = 2.0 / ((2.0 * PI).sqrt() * sigma.powi(3));
    let kappa_paper = 2.0 * (2.0 * PI).sqrt() / (sigma * sigma);

    let mut checks = vec![
        Check::at_most("residual_decrease", residuals[residuals.len() - 1] - residuals[0], 0.0),
        Check::at_most(
            "kappa_relative_error",
            (kappa / kappa_theory - 1.0).abs(),
            params.kappa_tolerance,
        ),
    ];
    let at_zero: Vec<&(usize, f64, Estimate, f64, f64)> = cells.iter().filter(|c| c.1 == 0.0).collect();
    if at_zero.len() > 1 {
        let (first, last) = (&at_zero[0].2, &at_zero[at_zero.len() - 1].2);
        checks.push(Check::at_most(
            "zero_level_decay",
            last.value - first.value,
            GATE_Z * (first.std_error + last.std_error),
        ));
    }
    let mut report = VerdictReport::build(
        "check_gnedenko",
        inputs_hash("check_gnedenko", ctx, params, seed),
        checks,
    );
    report.detail(
        "max_residual_by_n",
        params.n_list.iter().zip(&residuals).collect::<Vec<_>>(),
    );
    report.detail("residual_first", (n_first, residuals[0]));
    report.detail("residual_last", (n_last, residuals[residuals.len() - 1]));
    report.detail("kappa_fit", kappa);
    report.detail("kappa_rayleigh", kappa_theory);
    report.detail("kappa_paper_literal", kappa_paper);
    let paper_residual = params
        .n_list
        .iter()
        .map(|&n| {
            cells
                .iter()
                .filter(|c| c.0 == n)
                .map(|c| (c.2.value - c.3).abs())
                .fold(0.0, f64::max)
        })
        .collect::<Vec<_>>();
    report.detail("max_residual_paper_literal_by_n", paper_residual);
    report.estimate("harmonic_v", v.value());
    for (n, b, y, ..) in &cells {
        report.estimate(format!("n_times_joint_n{n}_b{b:.4}"), y);
    }
    report.plot_rows = cells
        .iter()
        .map(|(n, b, y, m1, m2)| PlotRow {
            n: *n,
            b: *b,
            estimate: y.value,
            std_error: y.std_error,
            main_term_paper: Some(*m1),
            main_term_rayleigh: Some(*m2),
            residual: Some(y.value - m2),
        })
        .collect();
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Local32Params {
    pub x: Option<Vec<f64>>,
    pub a: f64,
    /// Window start; `Δ` when absent.
    pub b: Option<f64>,
    /// Window length; `ℓ₀ + 1` when absent.
    pub ell: Option<f64>,
    pub n_list: Vec<usize>,
    pub count: u64,
    pub strategy: LocalStrategy,
    pub harmonic: HarmonicParams,
    pub slope_tolerance: f64,
    pub bounded_ratio: f64,
}

impl Default for Local32Params {
    fn default() -> Self {
        Self {
            x: None,
            a: 1.0,
            b: None,
            ell: None,
            n_list: vec![256, 1024, 4096],
            count: 2_000_000,
            strategy: LocalStrategy::Split { clones: 4 },
            harmonic: HarmonicParams::default(),
            slope_tolerance: 0.15,
            bounded_ratio: 4.0,
        }
    }
}

/// `T(n) = n^{3/2}·P(τ > n, S_n ∈ [b, b+ℓ])/(V(x,a)·Ṽ(x,b)·ℓ)` bounded
/// above and below over `n_list`, with the `−3/2` log-log slope.
pub fn check_local_32(ctx: &ExperimentContext, params: &Local32Params, seed: u64) -> Result<VerdictReport> {
    let spec = &ctx.spec;
    check_horizons(&params.n_list)?;
    if params.n_list.len() < 3 {
        return Err(Error::InvalidParameter("slope fit needs at least 3 horizons".into()));
    }
    let constants = ComparisonConstants::certified(spec.dim, spec.b)?;
    let b = params.b.unwrap_or(constants.big_delta);
    let ell = params.ell.unwrap_or(constants.ell0() + 1.0);
    if b < 0.0 || !(ell > 0.0) || params.a < 0.0 {
        return Err(Error::InvalidParameter("local rate needs a, b ≥ 0 and ell > 0".into()));
    }
    let x = point_or_uniform(&params.x, spec.dim)?;
    let v = estimate_harmonic(
        spec,
        &x,
        params.a,
        &params.harmonic,
        &ctx.sigma,
        derive_seed(seed, "local32/harmonic"),
        ctx.workers,
    )?;
    let v_dual = estimate_harmonic_dual(
        spec,
        &x,
        b,
        &params.harmonic,
        &ctx.sigma,
        derive_seed(seed, "local32/dual_harmonic"),
        ctx.workers,
    )?;
    let norm = v.value().value * v_dual.value().value * ell;

    let mut probs = Vec::new();
    for &n in &params.n_list {
        let q = LocalQuery::conditioned(x.clone(), params.a, n);
        let sub = derive_seed(seed, &format!("local32/n{n}"));
        let e = estimate_local_windows(
            spec,
            &q,
            &[Window::new(b, ell)],
            params.count,
            sub,
            params.strategy,
            ctx.workers,
        )?
        .remove(0);
        probs.push((n, e));
    }
    let t: Vec<f64> = probs
        .iter()
        .map(|(n, e)| (*n as f64).powf(1.5) * e.value / norm)
        .collect();
    let t_max = t.iter().cloned().fold(0.0, f64::max);
    let t_min = t.iter().cloned().fold(f64::INFINITY, f64::min);

    let mut checks = Vec::new();
    let positive = probs.iter().all(|(_, e)| e.value > 0.0);
    let slope_fit = if positive {
        let pts: Vec<(f64, f64)> = probs.iter().map(|(n, e)| (*n as f64, e.value)).collect();
        let w: Vec<f64> = probs
            .iter()
            .map(|(_, e)| (e.value / e.std_error.max(1e-300)).powi(2))
            .collect();
        Some(loglog_fit(&pts, Some(&w))?)
    } else {
        None
    };
    match &slope_fit {
        Some(fit) => checks.push(Check::at_most(
            "slope_error",
            (fit.slope + 1.5).abs(),
            params.slope_tolerance,
        )),
        None => checks.push(
            Check::at_most("slope_error", f64::INFINITY, params.slope_tolerance)
                .with_reason("a horizon had no window hits"),
        ),
    }
    checks.push(Check::at_most(
        "bounded_ratio",
        if t_min > 0.0 { t_max / t_min } else { f64::INFINITY },
        params.bounded_ratio,
    ));
    if ell > constants.ell0() && b >= constants.big_delta {
        let z = probs
            .iter()
            .map(|(_, e)| if e.std_error > 0.0 { e.value / e.std_error } else { 0.0 })
            .fold(f64::INFINITY, f64::min);
        checks.push(Check::at_least("lower_positive", z, GATE_Z));
    } else {
        checks.push(Check::skipped(
            "lower_positive",
            format!(
                "lower bound needs ell > ell0 = {:.4} and b >= Delta = {:.4}, got ell = {ell}, b = {b}",
                constants.ell0(),
                constants.big_delta
            ),
        ));
    }
    let mut report = VerdictReport::build(
        "check_local_32",
        inputs_hash("check_local_32", ctx, params, seed),
        checks,
    );
    report.detail("b", b);
    report.detail("ell", ell);
    report.detail("ell0", constants.ell0());
    report.detail("normalized_T", &t);
    report.detail("slope", slope_fit.as_ref().map(|f| f.slope));
    report.detail("slope_std_error", slope_fit.as_ref().map(|f| f.slope_std_error));
    report.estimate("harmonic_v", v.value());
    report.estimate("dual_harmonic_v", v_dual.value());
    for (n, e) in &probs {
        report.estimate(format!("joint_n{n}"), e);
    }
    report.plot_rows = probs
        .iter()
        .map(|(n, e)| PlotRow {
            n: *n,
            b,
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
pub struct RayleighParams {
    pub x: Option<Vec<f64>>,
    pub a: f64,
    pub n: usize,
    pub target_survivors: usize,
    pub max_paths: u64,
    pub threshold: f64,
}

impl Default for RayleighParams {
    fn default() -> Self {
        Self {
            x: None,
            a: 1.0,
            n: 2048,
            target_survivors: 10_000,
            max_paths: 20_000_000,
            threshold: 0.05,
        }
    }
}

/// Below this horizon a failed KS comparison is reported as pre-asymptotic.
const PRE_ASYMPTOTIC_N: usize = 256;

/// KS distance between `(a + S_n)/(σ̂√n)` given `τ > n` and the Rayleigh law.
pub fn check_rayleigh(ctx: &ExperimentContext, params: &RayleighParams, seed: u64) -> Result<VerdictReport> {
    let spec = &ctx.spec;
    let x = point_or_uniform(&params.x, spec.dim)?;
    let sample = conditioned_terminal_sample(
        spec,
        &x,
        params.a,
        params.n,
        params.target_survivors,
        params.max_paths,
        derive_seed(seed, "rayleigh"),
        ctx.workers,
    )?;
    let scale = ctx.sigma() * (params.n as f64).sqrt();
    let mut scaled: Vec<f64> = sample.levels.iter().map(|l| l / scale).collect();
    scaled.sort_by(f64::total_cmp);
    let ks = ks_one_sample(&scaled, rayleigh_cdf)?;
    let mut check = Check::at_most("ks_distance", ks.distance, params.threshold);
    if !check.passed() {
        check = check.with_reason(if params.n < PRE_ASYMPTOTIC_N {
            "pre-asymptotic"
        } else {
            "KS distance above threshold"
        });
    }
    let mut report = VerdictReport::build(
        "check_rayleigh",
        inputs_hash("check_rayleigh", ctx, params, seed),
        vec![check],
    );
    report.detail("ks", ks);
    report.detail("survivors", scaled.len());
    report.detail("paths_used", sample.paths_used);
    let mean = scaled.iter().sum::<f64>() / scaled.len() as f64;
    report.detail("scaled_mean", mean);
    report.detail("rayleigh_mean", (PI / 2.0).sqrt());
    Ok(report)
}
