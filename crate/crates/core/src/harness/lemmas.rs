//! Deterministic comparison audits and the forward/dual reversal inequalities.

use rand::Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};

use crate::ensemble::MatrixSampler;
use crate::error::{Error, Result};
use crate::estimators::{estimate_local_windows, Estimate, LocalQuery, LocalStrategy, PathEvent, Window};
use crate::exact::{enumerate_exact, ENUMERATION_BUDGET};
use crate::matrix::{check_keylem, ComparisonConstants, PositiveMatrix, SimplexPoint};
use crate::rng::{derive_seed, path_rng, PathRng};
use crate::walk::{Direction, WalkConfig};

use super::{inputs_hash, point_or_uniform, Check, ExperimentContext, VerdictReport, GATE_Z};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KeylemAuditParams {
    pub trials: u64,
    pub max_word_len: usize,
}

impl Default for KeylemAuditParams {
    fn default() -> Self {
        Self {
            trials: 100_000,
            max_word_len: 10,
        }
    }
}

fn random_word(sampler: &MatrixSampler, rng: &mut PathRng, max_len: usize) -> PositiveMatrix {
    let len = rng.random_range(1..=max_len);
    let mut g = sampler.sample_matrix(rng);
    for _ in 1..len {
        let h = sampler.sample_matrix(rng);
        g = h.multiply(&g).expect("same dimension");
        g = g.scaled(1.0 / g.l1_norm()).expect("positive norm");
    }
    g.scaled(1.0 / g.l1_norm()).expect("positive norm")
}

/// A vertex one time in four, otherwise a flat Dirichlet draw.
fn random_coords(dim: usize, rng: &mut PathRng) -> Vec<f64> {
    if rng.random_range(0..4) == 0 {
        let mut v = vec![0.0; dim];
        v[rng.random_range(0..dim)] = 1.0;
        v
    } else {
        (0..dim).map(|_| rng.sample::<f64, _>(Exp1)).collect()
    }
}

/// Audits the two-sided comparisons between `|g|`, `|gx|`, `|ỹg|`, `|ỹgx|`
/// and the product norm on random words of the law.
pub fn check_lemma_keylem_audit(
    ctx: &ExperimentContext,
    params: &KeylemAuditParams,
    seed: u64,
) -> Result<VerdictReport> {
    if params.trials == 0 || params.max_word_len == 0 {
        return Err(Error::InvalidParameter(
            "audit needs trials and max_word_len ≥ 1".into(),
        ));
    }
    let spec = &ctx.spec;
    let constants = ComparisonConstants::certified(spec.dim, spec.b)?;
    let sampler = spec.sampler()?;
    let stream = derive_seed(seed, "keylem");
    let mut violations = [0u64; 4];
    let mut tightest = 1.0f64;
    let mut first_violation = None;
    for t in 0..params.trials {
        let mut rng = path_rng(stream, t);
        let g = random_word(&sampler, &mut rng, params.max_word_len);
        let h = random_word(&sampler, &mut rng, params.max_word_len);
        let x = SimplexPoint::from_unnormalized(random_coords(spec.dim, &mut rng))?;
        let yt = SimplexPoint::from_unnormalized(random_coords(spec.dim, &mut rng))?.to_row();
        let r = check_keylem(&g, &h, &x, &yt, &constants);
        tightest = tightest.max(r.tightest_delta);
        let flags = [
            r.entries_comparable,
            r.one_sided_actions,
            r.bilinear_action,
            r.product_norm,
        ];
        for (v, ok) in violations.iter_mut().zip(flags) {
            *v += (!ok) as u64;
        }
        if !r.all_hold() && first_violation.is_none() {
            first_violation = Some(t);
        }
    }
    let total: u64 = violations.iter().sum();
    let checks = vec![
        Check::at_most("violations", total as f64, 0.0),
        Check::at_most("tightest_delta", tightest, constants.delta),
    ];
    let mut report = VerdictReport::build(
        "check_lemma_keylem_audit",
        inputs_hash("check_lemma_keylem_audit", ctx, params, seed),
        checks,
    );
    report.detail("delta", constants.delta);
    report.detail("tightest_delta", tightest);
    report.detail(
        "violations_by_claim",
        serde_json::json!({
            "entries_comparable": violations[0],
            "one_sided_actions": violations[1],
            "bilinear_action": violations[2],
            "product_norm": violations[3],
        }),
    );
    report.detail("first_violation_trial", first_violation);
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReverseParams {
    /// Forward start; barycenter when absent.
    pub x: Option<Vec<f64>>,
    /// Dual start; barycenter when absent.
    pub y: Option<Vec<f64>>,
    pub a: f64,
    pub b: f64,
    pub ell: f64,
    pub n: usize,
    pub count: u64,
    /// Enumerate words exactly when the law is finite and small enough.
    pub exact: bool,
}

impl Default for ReverseParams {
    fn default() -> Self {
        Self {
            x: None,
            y: None,
            a: 10.0,
            b: 6.0,
            ell: 7.0,
            n: 16,
            count: 200_000,
            exact: true,
        }
    }
}

/// Start levels and windows of the three probabilities in the reversal.
struct ReverseWindows {
    lhs: (f64, Window),
    upper: (f64, Window),
    lower: Option<(f64, Window)>,
}

fn reverse_windows(p: &ReverseParams, big_delta: f64) -> (ReverseWindows, Option<String>) {
    let lhs = (p.a, Window::new(p.b, p.ell));
    let upper = (p.b + p.ell + big_delta, Window::new(p.a, p.ell + 2.0 * big_delta));
    let guard = p.a >= p.ell && p.ell > 2.0 * big_delta && p.b >= big_delta;
    if guard {
        let lower = (p.b - big_delta, Window::new(p.a - p.ell, p.ell - 2.0 * big_delta));
        (
            ReverseWindows {
                lhs,
                upper,
                lower: Some(lower),
            },
            None,
        )
    } else {
        let reason = format!(
            "lower inequality needs a >= ell > 2*Delta and b >= Delta (a = {}, ell = {}, b = {}, Delta = {:.4})",
            p.a, p.ell, p.b, big_delta
        );
        (
            ReverseWindows {
                lhs,
                upper,
                lower: None,
            },
            Some(reason),
        )
    }
}

/// Compares forward window probabilities with dual ones:
///
/// `P_{x,a}(τ > n, S_n ∈ [b, b+ℓ]) ≤ P̃_{ỹ,b+ℓ+Δ}(τ̃ > n, S̃_n ∈ [a, a+ℓ+2Δ])`
///
/// and, when `a ≥ ℓ > 2Δ` and `b ≥ Δ`,
///
/// `P_{x,a}(τ > n, S_n ∈ [b, b+ℓ]) ≥ P̃_{ỹ,b−Δ}(τ̃ > n, S̃_n ∈ [a−ℓ, a−2Δ])`.
pub fn check_reverse_lemma(ctx: &ExperimentContext, params: &ReverseParams, seed: u64) -> Result<VerdictReport> {
    let spec = &ctx.spec;
    if params.a < 0.0 || params.b < 0.0 || !(params.ell > 0.0) || params.n == 0 {
        return Err(Error::InvalidParameter(
            "reverse lemma needs a, b ≥ 0, ell > 0, n ≥ 1".into(),
        ));
    }
    let constants = ComparisonConstants::certified(spec.dim, spec.b)?;
    let big_delta = constants.big_delta;
    let x = point_or_uniform(&params.x, spec.dim)?;
    let y = point_or_uniform(&params.y, spec.dim)?;
    let (w, skip_reason) = reverse_windows(params, big_delta);

    let words = spec
        .scaled_atoms()
        .map(|atoms| (atoms.len() as f64).powi(params.n as i32));
    let exact = params.exact && words.is_some_and(|w| w <= ENUMERATION_BUDGET);

    let probability =
        |start: &SimplexPoint, direction, (level, window): (f64, Window), label: &str| -> Result<Estimate> {
            if exact {
                let cfg = WalkConfig {
                    start_x: start.clone(),
                    start_level: level,
                    horizon: params.n,
                    direction,
                };
                let law = enumerate_exact(spec, &cfg)?;
                return Ok(Estimate::new(
                    law.joint(window.b, window.ell),
                    0.0,
                    0,
                    "exact:enumeration",
                ));
            }
            let q = LocalQuery {
                start: start.clone(),
                level,
                horizon: params.n,
                direction,
                event: PathEvent::Survived,
            };
            let sub = derive_seed(seed, label);
            Ok(estimate_local_windows(
                spec,
                &q,
                &[window],
                params.count,
                sub,
                LocalStrategy::Naive,
                ctx.workers,
            )?
            .remove(0))
        };
    let lhs = probability(&x, Direction::Forward, w.lhs, "reverse/lhs")?;
    let upper = probability(&y, Direction::Dual, w.upper, "reverse/upper")?;
    let lower = match w.lower {
        Some(win) => Some(probability(&y, Direction::Dual, win, "reverse/lower")?),
        None => None,
    };

    let tolerance = |a: &Estimate, b: &Estimate| {
        if exact {
            1e-12 * a.value.max(b.value).max(1e-300)
        } else {
            GATE_Z * (a.std_error + b.std_error)
        }
    };
    let mut checks = vec![Check::at_most(
        "upper",
        lhs.value - upper.value,
        tolerance(&lhs, &upper),
    )];
    match (&lower, skip_reason) {
        (Some(low), _) => checks.push(Check::at_most("lower", low.value - lhs.value, tolerance(&lhs, low))),
        (None, reason) => checks.push(Check::skipped("lower", reason.unwrap_or_default())),
    }
    let mut report = VerdictReport::build(
        "check_reverse_lemma",
        inputs_hash("check_reverse_lemma", ctx, params, seed),
        checks,
    );
    report.detail("mode", if exact { "exact" } else { "monte_carlo" });
    report.detail("Delta", big_delta);
    report.detail("upper_start_level", w.upper.0);
    report.detail("upper_window", w.upper.1);
    report.detail("lower_window", w.lower.map(|l| l.1));
    report.estimate("lhs", &lhs);
    report.estimate("rhs_upper", &upper);
    if let Some(low) = &lower {
        report.estimate("rhs_lower", low);
    }
    Ok(report)
}
