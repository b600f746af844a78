//! Acceptance suite. Runs every criterion in sequence, prints one line per
//! criterion and exits nonzero if any fails.

mod common;

use std::fs;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use common::{calibrated_context, scalar_walk, two_atom_spec};
use rmwalk::ensemble::{EnsembleSpec, ScaleLaw};
use rmwalk::estimators::{
    conditioned_terminal_sample, estimate_local_windows, Estimate, LocalQuery, LocalStrategy, Window,
};
use rmwalk::exact::enumerate_exact;
use rmwalk::harness::*;
use rmwalk::matrix::SimplexPoint;
use rmwalk::runner::{run_config, RunConfig};
use rmwalk::stats::ks_two_sample;
use rmwalk::walk::{simulate_batch, BatchOptions, WalkConfig};
use serde_json::json;

const MIN: u64 = 60;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn report_line(r: &VerdictReport) -> String {
    let checks: Vec<String> = r
        .checks
        .iter()
        .map(|c| format!("{}={:.4}/{:.4}", c.name, c.statistic, c.threshold))
        .collect();
    format!("{} {:?} [{}]", r.experiment, r.status, checks.join(" "))
}

fn passed(r: &VerdictReport) -> bool {
    r.status == VerdictStatus::Pass
}

fn dummy_sigma() -> Estimate {
    Estimate::new(1.0, 0.0, 0, "unused")
}

fn c1_keylem() -> Outcome {
    let mut lines = Vec::new();
    let mut ok = true;
    for (d, b) in [(2, 2.0), (3, 2.0), (2, 1.5)] {
        let ctx = ExperimentContext::new(EnsembleSpec::scaled_uniform(d, b, 1.0), dummy_sigma(), 1);
        let r = check_lemma_keylem_audit(&ctx, &KeylemAuditParams::default(), 1).unwrap();
        let violations = r.check("violations").unwrap().statistic;
        ok &= passed(&r) && violations == 0.0;
        lines.push(format!("(d={d},B={b}) violations={violations}"));
    }
    outcome(ok, lines.join(" "))
}

fn c2_exact_oracle() -> Outcome {
    const REPEATS: u64 = 20;
    const K_SE: f64 = 4.0;
    let spec = two_atom_spec();
    let x = SimplexPoint::uniform(2);
    let (a, n, count) = (1.0, 16, 20_000u64);
    let window = Window::new(1.0, 2.0);
    let law = enumerate_exact(&spec, &WalkConfig::forward(x.clone(), a, n)).unwrap();
    let exact = [law.survival(), law.joint(window.b, window.ell)];
    let q = LocalQuery::conditioned(x, a, n);
    let mut good = 0;
    for seed in 0..REPEATS {
        let est = estimate_local_windows(
            &spec,
            &q,
            &[Window::new(0.0, f64::MAX / 4.0), window],
            count,
            seed,
            LocalStrategy::Naive,
            1,
        )
        .unwrap();
        let within = est.iter().zip(exact).all(|(e, p)| {
            let se = (p * (1.0 - p) / count as f64).sqrt();
            (e.value - p).abs() <= K_SE * se
        });
        good += within as u64;
    }
    outcome(
        good >= 19,
        format!(
            "{good}/{REPEATS} repeats within {K_SE} se (P(tau>n)={:.5}, joint={:.5})",
            exact[0], exact[1]
        ),
    )
}

fn c3_scalar_oracle() -> Outcome {
    const PATH_TOL: f64 = 1e-12;
    const MIN_P: f64 = 0.01;
    let sd = 1.0;
    let spec = EnsembleSpec::rank_one_oracle(2, sd);
    let scale = ScaleLaw {
        sd,
        mean: 0.0,
        truncate_sds: None,
    };
    let (a, n, paths, seed) = (1.0, 256, 20_000u64, 17);
    let recs = simulate_batch(
        &spec,
        &WalkConfig::forward(SimplexPoint::uniform(2), a, n),
        paths,
        seed,
        BatchOptions::default(),
    )
    .unwrap();
    let mut worst: f64 = 0.0;
    let mut exits_agree = true;
    for (i, r) in recs.iter().enumerate() {
        let (exit, level) = scalar_walk(&scale, a, n, seed, i as u64);
        worst = worst.max((r.terminal_level - level).abs());
        exits_agree &= r.exit_time == exit;
    }
    let m = 64;
    let mut walk = conditioned_terminal_sample(&spec, &SimplexPoint::uniform(2), a, m, 5_000, 10_000_000, 31, 1)
        .unwrap()
        .levels;
    let mut scalar: Vec<f64> = (0..100_000u64)
        .map(|i| scalar_walk(&scale, a, m, 32, i))
        .filter(|(e, _)| e.is_none())
        .map(|(_, l)| l)
        .collect();
    walk.sort_by(f64::total_cmp);
    scalar.sort_by(f64::total_cmp);
    let ks = ks_two_sample(&walk, &scalar).unwrap();
    outcome(
        worst <= PATH_TOL && exits_agree && ks.p_value > MIN_P,
        format!(
            "max |dS|={worst:.2e} exits_agree={exits_agree} KS p={:.3} ({} vs {} survivors)",
            ks.p_value,
            walk.len(),
            scalar.len()
        ),
    )
}

fn c4_survival(ctx: &ExperimentContext) -> Outcome {
    let p = SurvivalRateParams {
        count: 10_000_000,
        ..Default::default()
    };
    let r = check_survival_rate(ctx, &p, 4).unwrap();
    outcome(passed(&r), report_line(&r))
}

fn c5_local32(ctx: &ExperimentContext) -> Outcome {
    let r = check_local_32(ctx, &Local32Params::default(), 5).unwrap();
    outcome(passed(&r), report_line(&r))
}

fn c6_rayleigh(ctx: &ExperimentContext) -> Outcome {
    let p = RayleighParams::default();
    let r = check_rayleigh(ctx, &p, 6).unwrap();
    let survivors = r.details.get("survivors").and_then(|v| v.as_u64()).unwrap_or(0);
    outcome(
        passed(&r) && p.n == 2048 && survivors >= 10_000,
        format!("{} survivors={survivors}", report_line(&r)),
    )
}

fn c7_gnedenko(ctx: &ExperimentContext) -> Outcome {
    let p = GnedenkoParams::default();
    let r = check_gnedenko(ctx, &p, 7).unwrap();
    let literal = r.details.get("kappa_paper_literal").cloned().unwrap_or_default();
    outcome(
        passed(&r) && p.b_units.len() == 9,
        format!("{} kappa_paper_literal={literal}", report_line(&r)),
    )
}

fn c8_reverse(ctx: &ExperimentContext) -> Outcome {
    let mc = check_reverse_lemma(
        ctx,
        &ReverseParams {
            n: 256,
            count: 400_000,
            ..Default::default()
        },
        8,
    )
    .unwrap();
    let mut ok = passed(&mc) && mc.checks.iter().all(|c| c.status == VerdictStatus::Pass);
    let mut lines = vec![report_line(&mc)];
    let finite = ExperimentContext::new(two_atom_spec(), dummy_sigma(), 1);
    for n in [4, 8, 12] {
        let r = check_reverse_lemma(
            &finite,
            &ReverseParams {
                n,
                ..Default::default()
            },
            8,
        )
        .unwrap();
        let exact = r.details.get("mode").and_then(|m| m.as_str()) == Some("exact");
        ok &= exact && r.checks.iter().all(|c| c.status == VerdictStatus::Pass);
        let values: Vec<String> = r
            .estimates
            .iter()
            .map(|e| format!("{}={:.4}", e.name, e.estimate.value))
            .collect();
        lines.push(format!("exact n={n} {:?} {}", r.status, values.join(" ")));
    }
    outcome(ok, lines.join("; "))
}

fn c9_harmonic(ctx: &ExperimentContext) -> Outcome {
    let cons = check_harmonic_consistency(ctx, &HarmonicConsistencyParams::default(), 9).unwrap();
    let harm = check_harmonicity(ctx, &HarmonicityParams::default(), 9).unwrap();
    outcome(
        passed(&cons) && passed(&harm),
        format!("{}; {}", report_line(&cons), report_line(&harm)),
    )
}

fn c10_reproducible() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let small_harmonic = json!({"horizons": [64, 256], "count": 20000});
    let base = json!({
        "ensemble": {"dim": 2, "B": 2.0, "family": {"kind": "scaled_uniform", "scale": {"sd": 2.0}}},
        "experiment": "suite",
        "seed": 2024,
        "calibration": {"budget": 2000000, "horizon": 256, "burn_in": 32},
        "assumption_budget": 20000,
        "sigma": {"horizon": 128, "reps": 20000},
        "experiment_params": {
            "check_lemma_keylem_audit": {"trials": 5000},
            "check_reverse_lemma": {"n": 64, "count": 20000},
            "check_unconditioned_llt": {"n_list": [64, 256], "count": 20000, "invariant_reps": 5000},
            "check_local_bounds_unconditioned": {"n_grid": [64, 256], "count": 20000},
            "check_conditioned_bounds": {"n_list": [64, 128, 256], "count": 40000, "harmonic": small_harmonic},
            "check_gnedenko": {"n_list": [64, 128, 256], "count": 40000, "harmonic": small_harmonic},
            "check_local_32": {"n_list": [64, 128, 256], "count": 40000, "harmonic": small_harmonic},
            "check_rayleigh": {"n": 128, "target_survivors": 1000, "max_paths": 2000000},
            "check_harmonicity": {"surface_horizon": 16, "surface_count": 4000, "lhs_count": 20000, "draws": 20000},
            "check_survival_rate": {"horizons": [16, 64, 256], "count": 50000},
            "check_harmonic_consistency": {"harmonic": small_harmonic}
        }
    });
    let mut codes = Vec::new();
    for workers in [1, 8] {
        let mut cfg = RunConfig::from_json(&base.to_string()).unwrap();
        cfg.workers = workers;
        cfg.output_dir = dir.path().join(format!("w{workers}"));
        match run_config(&cfg) {
            Ok(o) => codes.push(o.exit_code),
            Err(e) => return outcome(false, format!("run failed with workers={workers}: {e}")),
        }
    }
    let files = [
        "estimates.json",
        "verdicts.json",
        "ensemble.json",
        "summary.csv",
        "plot_data.csv",
    ];
    let differing: Vec<&str> = files
        .iter()
        .copied()
        .filter(|f| fs::read(dir.path().join("w1").join(f)).ok() != fs::read(dir.path().join("w8").join(f)).ok())
        .collect();
    outcome(
        differing.is_empty() && codes[0] == codes[1],
        format!(
            "workers 1 vs 8: {} artifacts compared, differing={differing:?}, exit codes {codes:?}",
            files.len()
        ),
    )
}

fn main() -> ExitCode {
    let mut results: Vec<(usize, &str, Duration, Duration, Outcome)> = Vec::new();
    let mut record = |id: usize, name: &'static str, budget_secs: u64, f: &dyn Fn() -> Outcome| {
        let t = Instant::now();
        let o = f();
        let elapsed = t.elapsed();
        let budget = Duration::from_secs(budget_secs);
        let o = Outcome {
            pass: o.pass && elapsed <= budget,
            ..o
        };
        println!(
            "criterion {id:>2} {:<4} {name} ({:.1}s, budget {budget_secs}s): {}",
            if o.pass { "PASS" } else { "FAIL" },
            elapsed.as_secs_f64(),
            o.detail
        );
        results.push((id, name, elapsed, budget, o));
    };

    record(1, "lemma audit", 30, &c1_keylem);
    record(2, "exact-oracle equivalence", 2 * MIN, &c2_exact_oracle);
    record(3, "scalar-reduction oracle", MIN, &c3_scalar_oracle);

    let setup = Instant::now();
    let ctx = calibrated_context(1);
    println!(
        "calibrated scaled_uniform d=2 B=2 sd=2: shift={:.6} sigma={:.4}±{:.4} ({:.1}s)",
        ctx.spec.centering_shift,
        ctx.sigma.value,
        ctx.sigma.std_error,
        setup.elapsed().as_secs_f64()
    );
    record(4, "survival rate", 10 * MIN, &|| c4_survival(&ctx));
    record(5, "conditioned local rate", 30 * MIN, &|| c5_local32(&ctx));
    record(6, "Rayleigh limit", 15 * MIN, &|| c6_rayleigh(&ctx));
    record(7, "Gnedenko shape", 30 * MIN, &|| c7_gnedenko(&ctx));
    record(8, "duality inequalities", 10 * MIN, &|| c8_reverse(&ctx));
    record(9, "harmonic function", 10 * MIN, &|| c9_harmonic(&ctx));
    record(10, "reproducibility", 10 * MIN, &c10_reproducible);

    let failed: Vec<usize> = results.iter().filter(|r| !r.4.pass).map(|r| r.0).collect();
    println!(
        "acceptance: {}/{} criteria passed",
        results.len() - failed.len(),
        results.len()
    );
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        println!("failed criteria: {failed:?}");
        ExitCode::FAILURE
    }
}
