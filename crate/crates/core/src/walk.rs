//! Forward and dual walks driven by i.i.d. matrices.
//!
//! The forward walk is `X_k = g_k·X_{k-1}`, `S_k = S_{k-1} + ln|g_k X_{k-1}|`
//! started at `(x, a)`; the dual walk acts on row vectors from the right,
//! `X̃_k = X̃_{k-1}·g_k`, `S̃_k = S̃_{k-1} − ln|X̃_{k-1} g_k|` started at
//! `(x̃, b)`. Both exit at the first `k ≥ 1` with level `≤ 0`.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::ensemble::{EnsembleSpec, MatrixSampler};
use crate::error::{Error, Result};
use crate::matrix::{column_action, row_action, PositiveMatrix, SimplexPoint};
use crate::rng::{derive_seed, map_chunks, path_rng, PathRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Forward,
    Dual,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WalkConfig {
    /// Starting direction; read as a row vector for the dual walk.
    pub start_x: SimplexPoint,
    pub start_level: f64,
    pub horizon: usize,
    pub direction: Direction,
}

impl WalkConfig {
    pub fn forward(start_x: SimplexPoint, start_level: f64, horizon: usize) -> Self {
        Self {
            start_x,
            start_level,
            horizon,
            direction: Direction::Forward,
        }
    }

    pub fn dual(start_x: SimplexPoint, start_level: f64, horizon: usize) -> Self {
        Self {
            direction: Direction::Dual,
            ..Self::forward(start_x, start_level, horizon)
        }
    }

    pub fn validate(&self, spec: &EnsembleSpec) -> Result<()> {
        if self.horizon < 1 {
            return Err(Error::InvalidParameter("horizon must be at least 1".into()));
        }
        if self.start_x.dim() != spec.dim {
            return Err(Error::DimensionMismatch {
                expected: spec.dim,
                actual: self.start_x.dim(),
            });
        }
        if !self.start_level.is_finite() {
            return Err(Error::InvalidParameter("start level must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WalkPathRecord {
    pub exit_time: Option<usize>,
    pub terminal_level: f64,
    pub terminal_point: SimplexPoint,
    pub survived: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchOptions {
    pub workers: usize,
    /// Stop each path at its exit time instead of running to the horizon.
    pub exit_only: bool,
}

impl Default for BatchOptions {
    fn default() -> Self {
        Self {
            workers: 1,
            exit_only: false,
        }
    }
}

/// Seed of the per-path streams for `spec` under a user seed.
pub fn stream_seed(spec: &EnsembleSpec, seed: u64) -> u64 {
    if spec.seed_namespace == 0 {
        seed
    } else {
        derive_seed(seed, &format!("namespace/{}", spec.seed_namespace))
    }
}

/// Single-path stepping state; reusable across paths without allocation.
#[derive(Debug, Clone)]
pub struct Walker<'a> {
    sampler: &'a MatrixSampler,
    direction: Direction,
    dim: usize,
    matrix: Vec<f64>,
    point: Vec<f64>,
    scratch: Vec<f64>,
    level: f64,
}

impl<'a> Walker<'a> {
    pub fn new(sampler: &'a MatrixSampler, direction: Direction) -> Self {
        let d = sampler.dim();
        Self {
            sampler,
            direction,
            dim: d,
            matrix: vec![0.0; d * d],
            point: vec![1.0 / d as f64; d],
            scratch: vec![0.0; d],
            level: 0.0,
        }
    }

    pub fn reset(&mut self, point: &[f64], level: f64) {
        self.point.copy_from_slice(point);
        self.level = level;
    }

    pub fn level(&self) -> f64 {
        self.level
    }

    pub fn point(&self) -> &[f64] {
        &self.point
    }

    pub fn direction(&self) -> Direction {
        self.direction
    }

    /// Draws a fresh matrix and advances one step; returns the new level.
    #[inline]
    pub fn step(&mut self, rng: &mut PathRng) -> f64 {
        self.sampler.sample_into(rng, &mut self.matrix);
        self.apply_current()
    }

    /// Advances one step with a given matrix (row-major entries).
    pub fn step_with(&mut self, g: &[f64]) -> f64 {
        self.matrix.copy_from_slice(g);
        self.apply_current()
    }

    #[inline]
    fn apply_current(&mut self) -> f64 {
        match self.direction {
            Direction::Forward => {
                let norm = column_action(&self.matrix, self.dim, &self.point, &mut self.scratch);
                self.level += norm.ln();
            }
            Direction::Dual => {
                let norm = row_action(&self.matrix, self.dim, &self.point, &mut self.scratch);
                self.level -= norm.ln();
            }
        }
        std::mem::swap(&mut self.point, &mut self.scratch);
        self.level
    }
}

/// Runs one path on its own stream.
pub fn simulate_path(walker: &mut Walker<'_>, cfg: &WalkConfig, rng: &mut PathRng, exit_only: bool) -> WalkPathRecord {
    walker.reset(cfg.start_x.coords(), cfg.start_level);
    let mut exit_time = None;
    for k in 1..=cfg.horizon {
        let level = walker.step(rng);
        if exit_time.is_none() && level <= 0.0 {
            exit_time = Some(k);
            if exit_only {
                break;
            }
        }
    }
    WalkPathRecord {
        exit_time,
        terminal_level: walker.level(),
        terminal_point: SimplexPoint::from_unnormalized(walker.point().to_vec())
            .expect("walk state stays on the simplex"),
        survived: exit_time.is_none(),
    }
}

/// Simulates `count` independent paths, returned in path-index order.
pub fn simulate_batch(
    spec: &EnsembleSpec,
    cfg: &WalkConfig,
    count: u64,
    seed: u64,
    opts: BatchOptions,
) -> Result<Vec<WalkPathRecord>> {
    cfg.validate(spec)?;
    if count < 1 {
        return Err(Error::InvalidParameter("count must be at least 1".into()));
    }
    let sampler = spec.sampler()?;
    let seed = stream_seed(spec, seed);
    let chunks = map_chunks(count, opts.workers, |range| {
        let mut walker = Walker::new(&sampler, cfg.direction);
        range
            .map(|i| simulate_path(&mut walker, cfg, &mut path_rng(seed, i), opts.exit_only))
            .collect::<Vec<_>>()
    });
    Ok(chunks.into_iter().flatten().collect())
}

/// Writes records as `path_index,exit_time,terminal_level,survived` with
/// `-1` for an absent exit time.
pub fn write_records_csv<W: Write>(mut out: W, records: &[WalkPathRecord]) -> Result<()> {
    writeln!(out, "path_index,exit_time,terminal_level,survived")?;
    for (i, r) in records.iter().enumerate() {
        let exit = r.exit_time.map_or(-1, |k| k as i64);
        writeln!(out, "{i},{exit},{:e},{}", r.terminal_level, r.survived as u8)?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProductOrder {
    /// `g_n ⋯ g_1`
    Left,
    /// `g_1 ⋯ g_n`
    Right,
}

/// `ln|product|` of `n` i.i.d. draws in the given order, one per path.
pub fn product_log_norms(
    spec: &EnsembleSpec,
    n: usize,
    count: u64,
    seed: u64,
    order: ProductOrder,
    workers: usize,
) -> Result<Vec<f64>> {
    let sampler = spec.sampler()?;
    let d = spec.dim;
    let chunks = map_chunks(count, workers, |range| {
        range
            .map(|i| {
                let mut rng = path_rng(seed, i);
                let mut acc = PositiveMatrix::constant(d, 1.0 / (d * d) as f64).expect("positive");
                let mut log_norm = 0.0;
                for k in 0..n {
                    let g = sampler.sample_matrix(&mut rng);
                    acc = if k == 0 {
                        g
                    } else {
                        match order {
                            ProductOrder::Left => g.multiply(&acc),
                            ProductOrder::Right => acc.multiply(&g),
                        }
                        .expect("equal dimensions")
                    };
                    log_norm += acc.normalize_in_place();
                }
                log_norm
            })
            .collect::<Vec<_>>()
    });
    Ok(chunks.into_iter().flatten().collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_atoms() -> EnsembleSpec {
        let a = PositiveMatrix::from_rows(&[vec![2.0, 1.0], vec![1.0, 1.5]]).unwrap();
        let b = PositiveMatrix::from_rows(&[vec![0.5, 0.4], vec![0.3, 0.5]]).unwrap();
        EnsembleSpec::finite_support(2.0, vec![(a, 0.5), (b, 0.5)]).unwrap()
    }

    #[test]
    fn horizon_one_survival_matches_first_increment() {
        let spec = EnsembleSpec::scaled_uniform(2, 2.0, 1.0).with_shift(-1.1);
        let x = SimplexPoint::uniform(2);
        let cfg = WalkConfig::forward(x.clone(), 0.0, 1);
        let recs = simulate_batch(&spec, &cfg, 500, 3, BatchOptions::default()).unwrap();
        let sampler = spec.sampler().unwrap();
        for (i, r) in recs.iter().enumerate() {
            let g = sampler.sample_matrix(&mut path_rng(3, i as u64));
            let (_, rho) = g.act_projective(&x);
            assert_eq!(r.survived, rho > 0.0);
            assert!((r.terminal_level - rho).abs() < 1e-14);
        }
    }

    #[test]
    fn exit_is_first_nonpositive_level() {
        // One atom with |gx| = 1/2 for every x: the level drops by ln 2 per step.
        let g = PositiveMatrix::constant(2, 0.25).unwrap();
        let spec = EnsembleSpec::finite_support(2.0, vec![(g, 1.0)]).unwrap();
        let a = 3.0 * 2f64.ln();
        let cfg = WalkConfig::forward(SimplexPoint::uniform(2), a, 10);
        let r = &simulate_batch(&spec, &cfg, 1, 0, BatchOptions::default()).unwrap()[0];
        // level after k steps is (3 − k) ln 2, first ≤ 0 at k = 3 (weak inequality)
        assert_eq!(r.exit_time, Some(3));
        assert!(!r.survived);
        assert!((r.terminal_level + 7.0 * 2f64.ln()).abs() < 1e-12);

        let early = simulate_batch(
            &spec,
            &cfg,
            1,
            0,
            BatchOptions {
                workers: 1,
                exit_only: true,
            },
        )
        .unwrap();
        assert!(early[0].terminal_level.abs() < 1e-12);
    }

    #[test]
    fn dual_walk_uses_right_action() {
        let g = PositiveMatrix::from_rows(&[vec![2.0, 1.0], vec![1.0, 1.0]]).unwrap();
        let spec = EnsembleSpec::finite_support(2.0, vec![(g.clone(), 1.0)]).unwrap();
        let x = SimplexPoint::new(vec![0.3, 0.7]).unwrap();
        let cfg = WalkConfig::dual(x.clone(), 5.0, 2);
        let r = &simulate_batch(&spec, &cfg, 1, 0, BatchOptions::default()).unwrap()[0];
        let (y1, r1) = g.act_right(&x.to_row());
        let (y2, r2) = g.act_right(&y1);
        assert!((r.terminal_level - (5.0 - r1 - r2)).abs() < 1e-12);
        assert!((r.terminal_point.coords()[0] - y2.coords()[0]).abs() < 1e-15);
    }

    #[test]
    fn batches_are_reproducible_across_workers() {
        let spec = two_atoms();
        let cfg = WalkConfig::forward(SimplexPoint::uniform(2), 1.0, 12);
        let one = simulate_batch(&spec, &cfg, 9_000, 42, BatchOptions::default()).unwrap();
        let many = simulate_batch(
            &spec,
            &cfg,
            9_000,
            42,
            BatchOptions {
                workers: 4,
                exit_only: false,
            },
        )
        .unwrap();
        assert_eq!(one, many);
    }

    #[test]
    fn csv_dump_layout() {
        let spec = two_atoms();
        let cfg = WalkConfig::forward(SimplexPoint::uniform(2), 0.5, 4);
        let recs = simulate_batch(&spec, &cfg, 3, 1, BatchOptions::default()).unwrap();
        let mut buf = Vec::new();
        write_records_csv(&mut buf, &recs).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "path_index,exit_time,terminal_level,survived");
        assert_eq!(lines.len(), 4);
        for (i, line) in lines[1..].iter().enumerate() {
            let cols: Vec<&str> = line.split(',').collect();
            assert_eq!(cols[0], i.to_string());
            assert_eq!(cols[3] == "1", recs[i].survived);
            assert_eq!(cols[1] == "-1", recs[i].survived);
        }
    }

    #[test]
    fn rejects_bad_configs() {
        let spec = two_atoms();
        let cfg = WalkConfig::forward(SimplexPoint::uniform(3), 1.0, 5);
        assert!(simulate_batch(&spec, &cfg, 1, 0, BatchOptions::default()).is_err());
        let cfg = WalkConfig::forward(SimplexPoint::uniform(2), 1.0, 0);
        assert!(simulate_batch(&spec, &cfg, 1, 0, BatchOptions::default()).is_err());
    }
}
