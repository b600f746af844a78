mod common;

use common::{scalar_walk, two_atom_spec};
use rmwalk::ensemble::{EnsembleSpec, ScaleLaw};
use rmwalk::estimators::{conditioned_terminal_sample, estimate_local_windows, LocalQuery, LocalStrategy, Window};
use rmwalk::exact::enumerate_exact;
use rmwalk::matrix::SimplexPoint;
use rmwalk::stats::{gauss_integral, ks_one_sample, ks_two_sample, rayleigh_cdf};
use rmwalk::walk::{product_log_norms, simulate_batch, BatchOptions, ProductOrder, WalkConfig};
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

#[test]
fn exact_law_is_a_probability() {
    let spec = two_atom_spec();
    let law = enumerate_exact(&spec, &WalkConfig::forward(SimplexPoint::uniform(2), 1.0, 12)).unwrap();
    let alive: f64 = law.survivors.iter().map(|a| a.probability).sum();
    assert!((alive + law.killed_mass - 1.0).abs() < 1e-12);
    assert!((alive - law.survival()).abs() < 1e-12);
    assert!(law.survival_curve.windows(2).all(|w| w[1] <= w[0] + 1e-15));
}

#[test]
fn monte_carlo_matches_enumeration() {
    let spec = two_atom_spec();
    let x = SimplexPoint::uniform(2);
    let (a, n, count) = (1.0, 10, 40_000);
    let law = enumerate_exact(&spec, &WalkConfig::forward(x.clone(), a, n)).unwrap();
    let window = Window::new(1.0, 2.0);
    let q = LocalQuery::conditioned(x, a, n);
    let est = estimate_local_windows(
        &spec,
        &q,
        &[Window::new(0.0, 1e9), window],
        count,
        5,
        LocalStrategy::Naive,
        1,
    )
    .unwrap();
    let exact = [law.survival(), law.joint(window.b, window.ell)];
    for (e, p) in est.iter().zip(exact) {
        let se = (p * (1.0 - p) / count as f64).sqrt();
        assert!((e.value - p).abs() <= 4.0 * se, "{} vs {p}", e.value);
    }
}

#[test]
fn rank_one_walk_is_the_scalar_walk() {
    let spec = EnsembleSpec::rank_one_oracle(3, 0.8);
    let scale = ScaleLaw {
        sd: 0.8,
        mean: 0.0,
        truncate_sds: None,
    };
    let cfg = WalkConfig::forward(SimplexPoint::uniform(3), 2.0, 300);
    let recs = simulate_batch(&spec, &cfg, 2_000, 11, BatchOptions::default()).unwrap();
    for (i, r) in recs.iter().enumerate() {
        let (exit, level) = scalar_walk(&scale, 2.0, 300, 11, i as u64);
        assert!((r.terminal_level - level).abs() <= 1e-12, "path {i}");
        assert_eq!(r.exit_time, exit, "path {i}");
    }
}

#[test]
fn rank_one_conditioned_law_matches_scalar_pipeline() {
    let spec = EnsembleSpec::rank_one_oracle(2, 1.0);
    let scale = ScaleLaw {
        sd: 1.0,
        mean: 0.0,
        truncate_sds: None,
    };
    let (a, n) = (1.0, 64);
    let walk = conditioned_terminal_sample(&spec, &SimplexPoint::uniform(2), a, n, 3_000, 1_000_000, 21, 1).unwrap();
    let mut lhs = walk.levels;
    let mut rhs: Vec<f64> = (0..200_000u64)
        .map(|i| scalar_walk(&scale, a, n, 22, i))
        .filter(|(exit, _)| exit.is_none())
        .map(|(_, level)| level)
        .collect();
    lhs.sort_by(f64::total_cmp);
    rhs.sort_by(f64::total_cmp);
    assert!(rhs.len() > 3_000);
    assert!(ks_two_sample(&lhs, &rhs).unwrap().p_value > 0.001);
}

#[test]
fn left_and_right_products_share_their_norm_law() {
    let spec = EnsembleSpec::scaled_uniform(2, 2.0, 0.5);
    let mut left = product_log_norms(&spec, 20, 5_000, 3, ProductOrder::Left, 1).unwrap();
    let mut right = product_log_norms(&spec, 20, 5_000, 4, ProductOrder::Right, 1).unwrap();
    left.sort_by(f64::total_cmp);
    right.sort_by(f64::total_cmp);
    assert!(ks_two_sample(&left, &right).unwrap().p_value > 0.001);
}

#[test]
fn rayleigh_cdf_is_root_chi_squared_two() {
    let chi = ChiSquared::new(2.0).unwrap();
    for t in [0.1, 0.5, 1.0, 2.0, 3.5] {
        assert!((rayleigh_cdf(t) - chi.cdf(t * t)).abs() < 1e-12);
    }
}

#[test]
fn gauss_integral_of_indicator_matches_normal_cdf() {
    let normal = Normal::new(0.3, 1.7).unwrap();
    let phi = |y: f64| if (-1.0..=2.0).contains(&y) { 1.0 } else { 0.0 };
    let got = gauss_integral(phi, 0.3, 1.7, 1e-4).unwrap() / (1.7 * (2.0 * std::f64::consts::PI).sqrt());
    let want = normal.cdf(2.0) - normal.cdf(-1.0);
    assert!((got - want).abs() < 1e-4);
}

#[test]
fn ks_accepts_its_own_law_and_rejects_a_shift() {
    let normal = Normal::new(0.0, 1.0).unwrap();
    let m = 2_000;
    let sample: Vec<f64> = (1..=m)
        .map(|k| normal.inverse_cdf((k as f64 - 0.5) / m as f64))
        .collect();
    assert!(ks_one_sample(&sample, |t| normal.cdf(t)).unwrap().p_value > 0.99);
    let shifted: Vec<f64> = sample.iter().map(|v| v + 0.2).collect();
    assert!(ks_one_sample(&shifted, |t| normal.cdf(t)).unwrap().p_value < 1e-6);
}
