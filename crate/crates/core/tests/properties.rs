use proptest::prelude::*;
use rmwalk::matrix::{check_keylem, ComparisonConstants, PositiveMatrix, SimplexPoint};
use rmwalk::stats::{ks_one_sample, loglog_fit};

fn matrix_in_sb(dim: usize, b: f64) -> impl Strategy<Value = PositiveMatrix> {
    (prop::collection::vec(1.0..b, dim * dim), -3.0f64..3.0)
        .prop_map(move |(e, w)| PositiveMatrix::new(dim, e.iter().map(|v| v * w.exp()).collect()).unwrap())
}

fn point(dim: usize) -> impl Strategy<Value = SimplexPoint> {
    prop::collection::vec(0.0f64..1.0, dim).prop_filter_map("nonzero", |v| {
        if v.iter().sum::<f64>() > 1e-9 {
            SimplexPoint::from_unnormalized(v).ok()
        } else {
            None
        }
    })
}

fn setup() -> impl Strategy<Value = (PositiveMatrix, PositiveMatrix, SimplexPoint)> {
    (2usize..5).prop_flat_map(|d| (matrix_in_sb(d, 2.0), matrix_in_sb(d, 2.0), point(d)))
}

proptest! {
    #![proptest_config(ProptestConfig { failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn cocycle_identity((g, h, x) in setup()) {
        let gh = g.multiply(&h).unwrap();
        let (hx, rho_h) = h.act_projective(&x);
        let (ghx, rho_g) = g.act_projective(&hx);
        let (direct, rho_gh) = gh.act_projective(&x);
        prop_assert!((rho_gh - rho_g - rho_h).abs() < 1e-10);
        for (u, v) in ghx.coords().iter().zip(direct.coords()) {
            prop_assert!((u - v).abs() < 1e-12);
        }
    }

    #[test]
    fn action_norm_between_column_min_and_total((g, _h, x) in setup()) {
        let n = g.apply_norm(x.coords());
        prop_assert!(g.column_min_sum() <= n * (1.0 + 1e-12));
        prop_assert!(n <= g.l1_norm() * (1.0 + 1e-12));
        prop_assert!(g.n_functional() >= 1.0 / g.column_min_sum() - 1e-12);
    }

    #[test]
    fn projective_action_stays_on_simplex((g, _h, x) in setup()) {
        let (y, _) = g.act_projective(&x);
        let s: f64 = y.coords().iter().sum();
        prop_assert!((s - 1.0).abs() < 1e-12);
        prop_assert!(y.coords().iter().all(|&c| c > 0.0));
    }

    #[test]
    fn keylem_holds_in_sb((g, h, x) in setup(), yv in prop::collection::vec(0.01f64..1.0, 4)) {
        let d = g.dim();
        let yt = SimplexPoint::from_unnormalized(yv[..d].to_vec()).unwrap().to_row();
        let c = ComparisonConstants::certified(d, 2.0).unwrap();
        let r = check_keylem(&g, &h, &x, &yt, &c);
        prop_assert!(r.all_hold());
        prop_assert!(r.tightest_delta <= c.delta);
    }

    #[test]
    fn loglog_recovers_power_law(c in 0.01f64..100.0, alpha in -2.0f64..2.0, scale in 0.1f64..10.0) {
        let pts: Vec<(f64, f64)> = [64.0, 256.0, 1024.0, 4096.0].iter().map(|&n| (n, c * f64::powf(n, alpha))).collect();
        let fit = loglog_fit(&pts, None).unwrap();
        prop_assert!((fit.slope - alpha).abs() < 1e-9);
        let scaled: Vec<(f64, f64)> = pts.iter().map(|&(n, y)| (n, scale * y)).collect();
        let fit2 = loglog_fit(&scaled, None).unwrap();
        prop_assert!((fit2.slope - fit.slope).abs() < 1e-9);
        prop_assert!((fit2.intercept - fit.intercept - scale.ln()).abs() < 1e-9);
    }

    #[test]
    fn ks_distance_invariant_under_monotone_map(mut xs in prop::collection::vec(0.0f64..1.0, 8..200)) {
        xs.sort_by(f64::total_cmp);
        let a = ks_one_sample(&xs, |t| t.clamp(0.0, 1.0)).unwrap();
        let mapped: Vec<f64> = xs.iter().map(|v| v.exp()).collect();
        let b = ks_one_sample(&mapped, |t| t.ln().clamp(0.0, 1.0)).unwrap();
        prop_assert!((a.distance - b.distance).abs() < 1e-12);
    }
}
