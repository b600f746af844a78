#![allow(dead_code)]

use rmwalk::ensemble::{calibrate_centering, CalibrationParams, EnsembleSpec, ScaleLaw};
use rmwalk::estimators::Sigma2Params;
use rmwalk::harness::ExperimentContext;
use rmwalk::matrix::PositiveMatrix;
use rmwalk::rng::path_rng;

/// Two atoms in `S_2` with roughly zero drift.
pub fn two_atom_spec() -> EnsembleSpec {
    let a = PositiveMatrix::from_rows(&[vec![2.0, 1.0], vec![1.0, 1.5]]).unwrap();
    let b = PositiveMatrix::from_rows(&[vec![0.4, 0.35], vec![0.3, 0.4]]).unwrap();
    EnsembleSpec::finite_support(2.0, vec![(a, 0.25), (b, 0.75)]).unwrap()
}

/// Scalar walk `a + w_1 + … + w_n` on the streams the walk engine uses.
/// Returns the exit time (if any) and the level after `n` steps.
pub fn scalar_walk(scale: &ScaleLaw, a: f64, n: usize, seed: u64, path: u64) -> (Option<usize>, f64) {
    let mut rng = path_rng(seed, path);
    let mut level = a;
    let mut exit = None;
    for k in 1..=n {
        level += scale.sample(&mut rng);
        if exit.is_none() && level <= 0.0 {
            exit = Some(k);
        }
    }
    (exit, level)
}

/// Calibrated `scaled_uniform(d=2, B=2, sd=2)` with `σ̂` attached.
pub fn calibrated_context(workers: usize) -> ExperimentContext {
    let spec = EnsembleSpec::scaled_uniform(2, 2.0, 2.0);
    let params = CalibrationParams {
        budget: 20_000_000,
        ..Default::default()
    };
    let cal = calibrate_centering(&spec, &params, 1, workers).unwrap();
    let sigma = Sigma2Params {
        horizon: 512,
        reps: 100_000,
    };
    ExperimentContext::prepare(cal.spec, &sigma, 7, workers).unwrap()
}
