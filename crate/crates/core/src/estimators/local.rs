//! Window probabilities `P(event, S_n ∈ [b, b + ℓ])` and conditioned samples.

use serde::{Deserialize, Serialize};

use crate::ensemble::EnsembleSpec;
use crate::error::{Error, Result};
use crate::matrix::SimplexPoint;
use crate::rng::{derive_seed, map_chunks, path_rng, CHUNK_PATHS};
use crate::stats::{zero_hit_upper_bound, Moments};
use crate::walk::{stream_seed, Direction, Walker};

use super::{run_until_exit, Estimate};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub b: f64,
    pub ell: f64,
}

impl Window {
    pub fn new(b: f64, ell: f64) -> Self {
        Self { b, ell }
    }

    #[inline]
    pub fn contains(&self, level: f64) -> bool {
        level >= self.b && level <= self.b + self.ell
    }
}

/// Which paths count towards the window probability.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PathEvent {
    /// `τ > n`
    Survived,
    /// `τ ≤ n`
    Exited,
    /// no condition on `τ`
    Any,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalQuery {
    pub start: SimplexPoint,
    pub level: f64,
    pub horizon: usize,
    pub direction: Direction,
    pub event: PathEvent,
}

impl LocalQuery {
    pub fn conditioned(start: SimplexPoint, level: f64, horizon: usize) -> Self {
        Self {
            start,
            level,
            horizon,
            direction: Direction::Forward,
            event: PathEvent::Survived,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum LocalStrategy {
    Naive,
    /// Each survivor at `⌊n/2⌋` continues as `clones` independent copies.
    Split {
        clones: u32,
    },
}

/// Window probabilities for several windows from one batch of paths.
///
/// Under [`LocalStrategy::Split`] each original path contributes the mean
/// hit indicator of its clones; those per-path values are i.i.d., so the
/// standard error is the plain standard error of their mean.
pub fn estimate_local_windows(
    spec: &EnsembleSpec,
    q: &LocalQuery,
    windows: &[Window],
    count: u64,
    seed: u64,
    strategy: LocalStrategy,
    workers: usize,
) -> Result<Vec<Estimate>> {
    if q.horizon < 1 || count < 1 || windows.is_empty() {
        return Err(Error::InvalidParameter(
            "local estimate needs horizon, count and windows".into(),
        ));
    }
    if let Some(w) = windows.iter().find(|w| !(w.ell > 0.0)) {
        return Err(Error::InvalidParameter(format!(
            "window length {} must be positive",
            w.ell
        )));
    }
    if q.start.dim() != spec.dim {
        return Err(Error::DimensionMismatch {
            expected: spec.dim,
            actual: q.start.dim(),
        });
    }
    let clones = match strategy {
        LocalStrategy::Split { clones } if q.event == PathEvent::Survived && q.horizon >= 2 => {
            if clones == 0 {
                return Err(Error::InvalidParameter(
                    "split strategy needs at least one clone".into(),
                ));
            }
            Some(clones)
        }
        _ => None,
    };
    let sampler = spec.sampler()?;
    let seed = stream_seed(spec, seed);
    let clone_seed = derive_seed(seed, "local/split");
    let nw = windows.len();
    let parts = map_chunks(count, workers, |range| {
        let mut walker = Walker::new(&sampler, q.direction);
        let mut acc = vec![Moments::default(); nw];
        let mut hits = vec![0u32; nw];
        for i in range {
            let mut rng = path_rng(seed, i);
            walker.reset(q.start.coords(), q.level);
            hits.iter_mut().for_each(|h| *h = 0);
            let weight = match clones {
                None => {
                    let exited = match q.event {
                        PathEvent::Survived => run_until_exit(&mut walker, &mut rng, q.horizon) < q.horizon,
                        _ => {
                            let mut exited = false;
                            for _ in 0..q.horizon {
                                exited |= walker.step(&mut rng) <= 0.0;
                            }
                            exited
                        }
                    };
                    let counted = match q.event {
                        PathEvent::Survived => !exited,
                        PathEvent::Exited => exited,
                        PathEvent::Any => true,
                    };
                    if counted {
                        for (h, w) in hits.iter_mut().zip(windows) {
                            *h += w.contains(walker.level()) as u32;
                        }
                    }
                    1.0
                }
                Some(k) => {
                    let m = q.horizon / 2;
                    if run_until_exit(&mut walker, &mut rng, m) == m {
                        let mid_point = walker.point().to_vec();
                        let mid_level = walker.level();
                        for j in 0..k as u64 {
                            let mut crng = path_rng(clone_seed, i * k as u64 + j);
                            walker.reset(&mid_point, mid_level);
                            if run_until_exit(&mut walker, &mut crng, q.horizon - m) == q.horizon - m {
                                for (h, w) in hits.iter_mut().zip(windows) {
                                    *h += w.contains(walker.level()) as u32;
                                }
                            }
                        }
                    }
                    1.0 / k as f64
                }
            };
            for (a, &h) in acc.iter_mut().zip(&hits) {
                a.push(h as f64 * weight);
            }
        }
        acc
    });
    let method = match (clones, q.event) {
        (Some(_), _) => "local:split_half",
        (None, PathEvent::Survived) => "local:naive",
        (None, PathEvent::Exited) => "local:naive_exited",
        (None, PathEvent::Any) => "local:naive_unconditioned",
    };
    Ok((0..nw)
        .map(|w| {
            let mut m = Moments::default();
            parts.iter().for_each(|p| m.merge(&p[w]));
            let mut e = Estimate::from_moments(&m, method);
            if m.sum == 0.0 {
                e.one_sided_upper = Some(zero_hit_upper_bound(count));
            }
            e
        })
        .collect())
}

/// `P(τ_{x,a} > n, a + S_n ∈ [b, b + ℓ])` on the forward walk.
#[allow(clippy::too_many_arguments)]
pub fn estimate_local(
    spec: &EnsembleSpec,
    x: &SimplexPoint,
    a: f64,
    window: Window,
    n: usize,
    count: u64,
    seed: u64,
    strategy: LocalStrategy,
    workers: usize,
) -> Result<Estimate> {
    if a < 0.0 || window.b < 0.0 {
        return Err(Error::InvalidParameter("local estimate needs a ≥ 0 and b ≥ 0".into()));
    }
    let q = LocalQuery::conditioned(x.clone(), a, n);
    Ok(estimate_local_windows(spec, &q, &[window], count, seed, strategy, workers)?.remove(0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionedSample {
    /// Terminal levels `a + S_n` of surviving paths, in path order.
    pub levels: Vec<f64>,
    pub paths_used: u64,
}

/// Paths per round when sampling survivors; independent of the worker count.
const ROUND_PATHS: u64 = 16 * CHUNK_PATHS;

/// Terminal levels of at least `target` paths conditioned on `τ > n`.
#[allow(clippy::too_many_arguments)]
pub fn conditioned_terminal_sample(
    spec: &EnsembleSpec,
    x: &SimplexPoint,
    a: f64,
    n: usize,
    target: usize,
    max_paths: u64,
    seed: u64,
    workers: usize,
) -> Result<ConditionedSample> {
    if a < 0.0 || n < 1 {
        return Err(Error::InvalidParameter(
            "conditioned sample needs a ≥ 0 and n ≥ 1".into(),
        ));
    }
    let sampler = spec.sampler()?;
    let seed = stream_seed(spec, seed);
    let mut levels = Vec::with_capacity(target);
    let mut offset = 0u64;
    while levels.len() < target {
        if offset >= max_paths {
            return Err(Error::InsufficientSurvivors {
                paths: offset,
                found: levels.len(),
                target,
            });
        }
        let round = ROUND_PATHS.min(max_paths - offset);
        let parts = map_chunks(round, workers, |range| {
            let mut walker = Walker::new(&sampler, Direction::Forward);
            let mut out = Vec::new();
            for i in range {
                let mut rng = path_rng(seed, offset + i);
                walker.reset(x.coords(), a);
                if run_until_exit(&mut walker, &mut rng, n) == n {
                    out.push(walker.level());
                }
            }
            out
        });
        levels.extend(parts.into_iter().flatten());
        offset += round;
    }
    Ok(ConditionedSample {
        levels,
        paths_used: offset,
    })
}
