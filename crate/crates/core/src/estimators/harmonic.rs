//! Two independent estimates of the harmonic function of the killed walk.
//!
//! * tail method: `V ≈ σ√(2πn)/2 · P(τ > n)`
//! * martingale method: `V ≈ E[(a + S_n); τ > n]`
//!
//! Both come from the same batch, evaluated along a horizon schedule.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::ensemble::EnsembleSpec;
use crate::error::{Error, Result};
use crate::matrix::SimplexPoint;
use crate::rng::{map_chunks, path_rng};
use crate::stats::Moments;
use crate::walk::{stream_seed, Direction, Walker};

use super::{check_horizons, Estimate};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HarmonicParams {
    pub horizons: Vec<usize>,
    pub count: u64,
    /// Survivors needed at a horizon for it to be used.
    #[serde(default = "default_min_survivors")]
    pub min_survivors: u64,
}

fn default_min_survivors() -> u64 {
    100
}

impl Default for HarmonicParams {
    fn default() -> Self {
        Self {
            horizons: vec![256, 1024, 4096],
            count: 100_000,
            min_survivors: default_min_survivors(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HorizonRow {
    pub horizon: usize,
    pub survival: Estimate,
    pub v_tail: Estimate,
    pub v_mart: Estimate,
    pub survivors: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HarmonicEstimate {
    pub at: SimplexPoint,
    pub level: f64,
    pub direction: Direction,
    pub v_tail: Estimate,
    pub v_mart: Estimate,
    pub horizon_used: usize,
    /// The largest horizon had too few survivors and a shorter one was used.
    pub fell_back: bool,
    /// `|v_tail − v_mart| ≤ 3·(se_tail + se_mart)`.
    pub consistent: bool,
    pub table: Vec<HorizonRow>,
}

impl HarmonicEstimate {
    /// The martingale estimate, which is the lower-variance of the two for
    /// moderate and large levels.
    pub fn value(&self) -> &Estimate {
        &self.v_mart
    }
}

/// Harmonic function `V(x, a)` of the forward walk killed at exit.
pub fn estimate_harmonic(
    spec: &EnsembleSpec,
    x: &SimplexPoint,
    a: f64,
    params: &HarmonicParams,
    sigma: &Estimate,
    seed: u64,
    workers: usize,
) -> Result<HarmonicEstimate> {
    harmonic_along(spec, x, a, Direction::Forward, params, sigma, seed, workers)
}

/// Harmonic function `Ṽ(x̃, b)` of the dual walk killed at exit.
pub fn estimate_harmonic_dual(
    spec: &EnsembleSpec,
    xt: &SimplexPoint,
    b: f64,
    params: &HarmonicParams,
    sigma: &Estimate,
    seed: u64,
    workers: usize,
) -> Result<HarmonicEstimate> {
    harmonic_along(spec, xt, b, Direction::Dual, params, sigma, seed, workers)
}

#[allow(clippy::too_many_arguments)]
fn harmonic_along(
    spec: &EnsembleSpec,
    x: &SimplexPoint,
    a: f64,
    direction: Direction,
    params: &HarmonicParams,
    sigma: &Estimate,
    seed: u64,
    workers: usize,
) -> Result<HarmonicEstimate> {
    if a < 0.0 {
        return Err(Error::InvalidParameter(format!("level {a} must be nonnegative")));
    }
    if !(sigma.value > 0.0) {
        return Err(Error::InvalidParameter("σ̂ must be positive".into()));
    }
    if x.dim() != spec.dim {
        return Err(Error::DimensionMismatch {
            expected: spec.dim,
            actual: x.dim(),
        });
    }
    let max_h = check_horizons(&params.horizons)?;
    let horizons = &params.horizons;
    let sampler = spec.sampler()?;
    let seed = stream_seed(spec, seed);
    let parts = map_chunks(params.count, workers, |range| {
        let mut walker = Walker::new(&sampler, direction);
        let mut acc = vec![Moments::default(); horizons.len()];
        let mut alive = vec![0u64; horizons.len()];
        for i in range {
            let mut rng = path_rng(seed, i);
            walker.reset(x.coords(), a);
            let mut next = 0;
            let mut dead = false;
            for step in 1..=max_h {
                if walker.step(&mut rng) <= 0.0 {
                    dead = true;
                    break;
                }
                if step == horizons[next] {
                    acc[next].push(walker.level());
                    alive[next] += 1;
                    next += 1;
                }
            }
            for m in acc.iter_mut().skip(if dead { next } else { horizons.len() }) {
                m.push(0.0);
            }
        }
        (acc, alive)
    });

    let mut acc = vec![Moments::default(); horizons.len()];
    let mut alive = vec![0u64; horizons.len()];
    for (pa, pl) in &parts {
        for k in 0..horizons.len() {
            acc[k].merge(&pa[k]);
            alive[k] += pl[k];
        }
    }
    let (tail_tag, mart_tag, surv_tag) = match direction {
        Direction::Forward => ("harmonic:tail", "harmonic:martingale", "survival:binomial"),
        Direction::Dual => (
            "dual_harmonic:tail",
            "dual_harmonic:martingale",
            "dual_survival:binomial",
        ),
    };
    let table: Vec<HorizonRow> = horizons
        .iter()
        .enumerate()
        .map(|(k, &n)| {
            let survival = Estimate::proportion(alive[k], params.count, surv_tag);
            let factor = (2.0 * PI * n as f64).sqrt() / 2.0;
            let v = factor * sigma.value * survival.value;
            let rel_p = survival.std_error / survival.value.max(f64::MIN_POSITIVE);
            let rel_s = sigma.std_error / sigma.value;
            let se = v * (rel_p * rel_p + rel_s * rel_s).sqrt();
            HorizonRow {
                horizon: n,
                v_tail: Estimate::new(v, se, params.count, tail_tag),
                v_mart: Estimate::from_moments(&acc[k], mart_tag),
                survival,
                survivors: alive[k],
            }
        })
        .collect();

    let used = (0..table.len())
        .rev()
        .find(|&k| table[k].survivors >= params.min_survivors)
        .unwrap_or(0);
    let row = &table[used];
    Ok(HarmonicEstimate {
        at: x.clone(),
        level: a,
        direction,
        v_tail: row.v_tail.clone(),
        v_mart: row.v_mart.clone(),
        horizon_used: row.horizon,
        fell_back: used + 1 != table.len(),
        consistent: row.v_tail.agrees_with(&row.v_mart, 3.0),
        table,
    })
}

/// Constants `(c, C, A)` making `c ∨ (a − A) ≤ V(a) ≤ C(1 + a)` hold on a
/// grid of `(a, V̂(a))` pairs, with the count of monotonicity breaks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VBoundsFit {
    pub c: f64,
    pub big_c: f64,
    pub big_a: f64,
    pub violations: usize,
    pub monotone_breaks: usize,
}

/// Picks the constants minimizing bound violations on the grid: `c` is the
/// smallest value, `A` the largest shortfall `a − V̂(a)`, and `C` the
/// largest ratio `V̂(a)/(1 + a)`. A violation then means a nonpositive
/// value; `monotone_breaks` counts decreases larger than `tolerance`.
pub fn fit_v_bounds(grid: &[(f64, f64)], tolerance: f64) -> VBoundsFit {
    let c = grid.iter().map(|&(_, v)| v).fold(f64::INFINITY, f64::min);
    let big_a = grid.iter().map(|&(a, v)| a - v).fold(0.0, f64::max);
    let big_c = grid.iter().map(|&(a, v)| v / (1.0 + a)).fold(0.0, f64::max);
    let violations = grid
        .iter()
        .filter(|&&(a, v)| {
            !(v > 0.0 && c.max(a - big_a) <= v * (1.0 + 1e-12) && v <= big_c * (1.0 + a) * (1.0 + 1e-12))
        })
        .count();
    let monotone_breaks = grid.windows(2).filter(|w| w[1].1 < w[0].1 - tolerance).count();
    VBoundsFit {
        c,
        big_c,
        big_a,
        violations,
        monotone_breaks,
    }
}
