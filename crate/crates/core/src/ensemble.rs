//! Matrix laws, their sampling, centering and assumption audits.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{estimate_lyapunov, Estimate, LyapunovParams};
use crate::matrix::{check_sb_membership, PositiveMatrix, SimplexPoint};
use crate::rng::{derive_seed, path_rng, PathRng};

/// Law of the log of the common scale factor, `w ~ Normal(mean, sd²)`,
/// optionally truncated to `mean ± truncate_sds·sd` by rejection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScaleLaw {
    pub sd: f64,
    #[serde(default)]
    pub mean: f64,
    #[serde(default)]
    pub truncate_sds: Option<f64>,
}

impl ScaleLaw {
    pub fn sample(&self, rng: &mut PathRng) -> f64 {
        loop {
            let z: f64 = rng.sample(StandardNormal);
            match self.truncate_sds {
                Some(t) if z.abs() > t => continue,
                _ => return self.mean + self.sd * z,
            }
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.sd.is_finite() && self.sd >= 0.0 && self.mean.is_finite()) {
            return Err(Error::InvalidEnsemble(format!("bad scale law {self:?}")));
        }
        if let Some(t) = self.truncate_sds {
            if !(t.is_finite() && t > 0.0) {
                return Err(Error::InvalidEnsemble(format!("truncation {t} must be positive")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Atom {
    pub matrix: PositiveMatrix,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Family {
    /// Entries i.i.d. uniform on `[1, B]`, times a common factor `e^w`.
    ScaledUniform { scale: ScaleLaw },
    /// `e^w · J` with `J` the all-ones matrix; the walk reduces to an
    /// i.i.d. scalar random walk.
    RankOneOracle { scale: ScaleLaw },
    /// Explicit matrices drawn with the given weights.
    FiniteSupport { atoms: Vec<Atom> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleSpec {
    pub dim: usize,
    /// Entry comparability bound of every sampled matrix.
    #[serde(rename = "B")]
    pub b: f64,
    pub family: Family,
    /// Every sampled matrix is multiplied by `e^centering_shift`.
    #[serde(default)]
    pub centering_shift: f64,
    #[serde(default)]
    pub seed_namespace: u64,
}

impl EnsembleSpec {
    pub fn scaled_uniform(dim: usize, b: f64, scale_sd: f64) -> Self {
        Self {
            dim,
            b,
            family: Family::ScaledUniform {
                scale: ScaleLaw {
                    sd: scale_sd,
                    mean: 0.0,
                    truncate_sds: Some(3.0),
                },
            },
            centering_shift: 0.0,
            seed_namespace: 0,
        }
    }

    /// Rank-one oracle with untruncated normal log-scale and shift `−ln d`,
    /// which makes the increments `w` exactly centered.
    pub fn rank_one_oracle(dim: usize, scale_sd: f64) -> Self {
        Self {
            dim,
            b: 2.0,
            family: Family::RankOneOracle {
                scale: ScaleLaw {
                    sd: scale_sd,
                    mean: 0.0,
                    truncate_sds: None,
                },
            },
            centering_shift: -(dim as f64).ln(),
            seed_namespace: 0,
        }
    }

    pub fn finite_support(b: f64, atoms: Vec<(PositiveMatrix, f64)>) -> Result<Self> {
        let dim = atoms.first().map(|(m, _)| m.dim()).unwrap_or(0);
        let spec = Self {
            dim,
            b,
            family: Family::FiniteSupport {
                atoms: atoms
                    .into_iter()
                    .map(|(matrix, weight)| Atom { matrix, weight })
                    .collect(),
            },
            centering_shift: 0.0,
            seed_namespace: 0,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_shift(mut self, shift: f64) -> Self {
        self.centering_shift = shift;
        self
    }

    pub fn is_finite_support(&self) -> bool {
        matches!(self.family, Family::FiniteSupport { .. })
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim < 2 {
            return Err(Error::InvalidEnsemble(format!("dimension {} < 2", self.dim)));
        }
        if !(self.b.is_finite() && self.b > 1.0) {
            return Err(Error::InvalidEnsemble(format!("B = {} must exceed 1", self.b)));
        }
        if !self.centering_shift.is_finite() {
            return Err(Error::InvalidEnsemble("centering shift is not finite".into()));
        }
        match &self.family {
            Family::ScaledUniform { scale } | Family::RankOneOracle { scale } => scale.validate(),
            Family::FiniteSupport { atoms } => {
                if atoms.is_empty() {
                    return Err(Error::InvalidEnsemble("finite support has no atoms".into()));
                }
                for (k, atom) in atoms.iter().enumerate() {
                    if atom.matrix.dim() != self.dim {
                        return Err(Error::InvalidEnsemble(format!(
                            "atom {k} has dimension {} instead of {}",
                            atom.matrix.dim(),
                            self.dim
                        )));
                    }
                    if !(atom.weight.is_finite() && atom.weight > 0.0) {
                        return Err(Error::InvalidEnsemble(format!(
                            "atom {k} weight {} not positive",
                            atom.weight
                        )));
                    }
                    if !check_sb_membership(&atom.matrix, self.b) {
                        return Err(Error::InvalidEnsemble(format!(
                            "atom {k} has entry ratio {} > B = {}",
                            atom.matrix.entry_ratio(),
                            self.b
                        )));
                    }
                }
                let total: f64 = atoms.iter().map(|a| a.weight).sum();
                if (total - 1.0).abs() > 1e-9 {
                    return Err(Error::InvalidEnsemble(format!("atom weights sum to {total}, not 1")));
                }
                Ok(())
            }
        }
    }

    /// Atoms scaled by `e^centering_shift`, with their weights.
    pub fn scaled_atoms(&self) -> Option<Vec<(PositiveMatrix, f64)>> {
        let Family::FiniteSupport { atoms } = &self.family else {
            return None;
        };
        let factor = self.centering_shift.exp();
        Some(
            atoms
                .iter()
                .map(|a| {
                    (
                        a.matrix.scaled(factor).expect("scaling keeps entries positive"),
                        a.weight,
                    )
                })
                .collect(),
        )
    }

    pub fn sampler(&self) -> Result<MatrixSampler> {
        MatrixSampler::new(self)
    }
}

/// Precomputed sampling state for one [`EnsembleSpec`].
#[derive(Debug, Clone)]
pub struct MatrixSampler {
    dim: usize,
    b: f64,
    shift_factor: f64,
    log_shift: f64,
    kind: SamplerKind,
}

#[derive(Debug, Clone)]
enum SamplerKind {
    ScaledUniform(ScaleLaw),
    RankOne(ScaleLaw),
    Finite {
        cumulative: Vec<f64>,
        matrices: Vec<Vec<f64>>,
    },
}

impl MatrixSampler {
    pub fn new(spec: &EnsembleSpec) -> Result<Self> {
        spec.validate()?;
        let kind = match &spec.family {
            Family::ScaledUniform { scale } => SamplerKind::ScaledUniform(*scale),
            Family::RankOneOracle { scale } => SamplerKind::RankOne(*scale),
            Family::FiniteSupport { atoms } => {
                let mut acc = 0.0;
                let cumulative = atoms
                    .iter()
                    .map(|a| {
                        acc += a.weight;
                        acc
                    })
                    .collect();
                let factor = spec.centering_shift.exp();
                let matrices = atoms
                    .iter()
                    .map(|a| a.matrix.entries().iter().map(|e| e * factor).collect())
                    .collect();
                SamplerKind::Finite { cumulative, matrices }
            }
        };
        Ok(Self {
            dim: spec.dim,
            b: spec.b,
            shift_factor: spec.centering_shift.exp(),
            log_shift: spec.centering_shift,
            kind,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn b(&self) -> f64 {
        self.b
    }

    /// Draws one matrix into `out` (row-major, `d²` entries).
    #[inline]
    pub fn sample_into(&self, rng: &mut PathRng, out: &mut [f64]) {
        match &self.kind {
            SamplerKind::ScaledUniform(scale) => {
                let factor = (scale.sample(rng) + self.log_shift).exp();
                let width = self.b - 1.0;
                for e in out.iter_mut() {
                    *e = (1.0 + width * rng.random::<f64>()) * factor;
                }
            }
            SamplerKind::RankOne(scale) => {
                let value = (scale.sample(rng) + self.log_shift).exp();
                out.iter_mut().for_each(|e| *e = value);
            }
            SamplerKind::Finite { cumulative, matrices } => {
                let idx = self.pick_atom(rng, cumulative);
                out.copy_from_slice(&matrices[idx]);
            }
        }
    }

    fn pick_atom(&self, rng: &mut PathRng, cumulative: &[f64]) -> usize {
        let total = *cumulative.last().expect("validated nonempty");
        let u = rng.random::<f64>() * total;
        cumulative.iter().position(|&c| u < c).unwrap_or(cumulative.len() - 1)
    }

    pub fn sample_matrix(&self, rng: &mut PathRng) -> PositiveMatrix {
        let mut out = vec![0.0; self.dim * self.dim];
        self.sample_into(rng, &mut out);
        PositiveMatrix::new(self.dim, out).expect("sampler emits positive matrices")
    }

    pub fn shift_factor(&self) -> f64 {
        self.shift_factor
    }
}

/// Convenience wrapper: one draw from `spec` using `rng`.
pub fn sample_matrix(spec: &EnsembleSpec, rng: &mut PathRng) -> Result<PositiveMatrix> {
    Ok(spec.sampler()?.sample_matrix(rng))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrationParams {
    /// Accepted `|γ̂|` after re-estimation, log units.
    pub tol: f64,
    /// Total number of walk increments the calibration may consume.
    pub budget: u64,
    pub horizon: usize,
    pub burn_in: usize,
}

impl Default for CalibrationParams {
    fn default() -> Self {
        Self {
            tol: 1e-4,
            budget: 10_000_000,
            horizon: 1024,
            burn_in: 128,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Calibration {
    pub spec: EnsembleSpec,
    /// Lyapunov estimate of the input spec.
    pub initial_gamma: Estimate,
    /// Re-estimate after the final shift, on the same random streams.
    pub residual_gamma: Estimate,
    pub rounds: usize,
}

/// Adjusts the centering shift so that the Lyapunov exponent re-estimated on
/// the same streams is within `tol` of zero.
///
/// Multiplying every matrix by `e^c` adds exactly `c` to each increment, so
/// one estimate `γ̂` determines the correction `−γ̂`; further rounds only
/// absorb floating-point residue.
pub fn calibrate_centering(
    spec: &EnsembleSpec,
    params: &CalibrationParams,
    seed: u64,
    workers: usize,
) -> Result<Calibration> {
    if !(params.tol > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "tolerance {} must be positive",
            params.tol
        )));
    }
    let per_path = (params.horizon + params.burn_in) as u64;
    let reps = params.budget / (2 * per_path);
    if reps < 2 {
        return Err(Error::InvalidParameter(format!(
            "budget {} too small for horizon {}",
            params.budget, params.horizon
        )));
    }
    let lyap = LyapunovParams {
        horizon: params.horizon,
        burn_in: params.burn_in,
        reps,
    };
    let seed = derive_seed(seed, "calibrate_centering");
    let mut current = spec.clone();
    let mut spent = 0u64;
    let mut initial = None;
    let mut rounds = 0;
    loop {
        if spent + reps * per_path > params.budget {
            let residual = initial.as_ref().map(|e: &Estimate| e.value.abs()).unwrap_or(f64::NAN);
            return Err(Error::CalibrationBudget {
                tol: params.tol,
                residual,
            });
        }
        let gamma = estimate_lyapunov(&current, &lyap, seed, workers)?;
        spent += reps * per_path;
        rounds += 1;
        if gamma.value.abs() <= params.tol {
            return Ok(Calibration {
                spec: current,
                initial_gamma: initial.unwrap_or_else(|| gamma.clone()),
                residual_gamma: gamma,
                rounds,
            });
        }
        current.centering_shift -= gamma.value;
        initial.get_or_insert(gamma);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssumptionReport {
    pub p1_ok: bool,
    pub max_abs_ln_n: f64,
    pub p2_ok: bool,
    pub p2_note: String,
    pub p3_ok: bool,
    pub p3_max_entry_ratio: f64,
    pub p4_residual: f64,
    pub p4_std_error: f64,
    pub p5_mass: f64,
    pub p5_delta5: Option<f64>,
    pub p6_ok: Option<bool>,
    pub p6_note: String,
}

/// Audits the standing assumptions on `budget` sampled matrices plus one
/// Lyapunov estimate of `budget` increments.
pub fn validate_assumptions(spec: &EnsembleSpec, budget: u64, seed: u64, workers: usize) -> Result<AssumptionReport> {
    let sampler = spec.sampler()?;
    let mut rng = path_rng(derive_seed(seed, "validate_assumptions"), 0);
    let mut p3_ok = true;
    let mut max_ratio: f64 = 1.0;
    let mut max_abs_ln_n: f64 = 0.0;
    let mut above_one = 0u64;
    let mut positive_logs = Vec::new();
    for _ in 0..budget {
        let g = sampler.sample_matrix(&mut rng);
        max_ratio = max_ratio.max(g.entry_ratio());
        p3_ok &= check_sb_membership(&g, spec.b);
        max_abs_ln_n = max_abs_ln_n.max(g.n_functional().ln().abs());
        let v = g.column_min_sum();
        if v > 1.0 {
            above_one += 1;
            positive_logs.push(v.ln());
        }
    }
    positive_logs.sort_by(f64::total_cmp);
    let p5_delta5 = (!positive_logs.is_empty()).then(|| positive_logs[positive_logs.len() / 10]);

    let horizon = 256;
    let burn_in = 64;
    let reps = (budget / (horizon + burn_in) as u64).max(2);
    let gamma = estimate_lyapunov(
        spec,
        &LyapunovParams { horizon, burn_in, reps },
        derive_seed(seed, "validate_assumptions/gamma"),
        workers,
    )?;

    let (p2_ok, p2_note, p6_ok, p6_note) = match &spec.family {
        Family::ScaledUniform { .. } => (
            true,
            "structural: continuous full-support entry law".to_string(),
            Some(true),
            "structural: continuous scale law is non-lattice".to_string(),
        ),
        Family::RankOneOracle { scale } => (
            false,
            "oracle-only ensemble (P2 fails)".to_string(),
            Some(scale.sd > 0.0),
            "structural: normal scale law is non-lattice when sd > 0".to_string(),
        ),
        Family::FiniteSupport { .. } => {
            let shared = common_fixed_direction(spec);
            (
                !shared,
                if shared {
                    "heuristic: all atoms share a fixed direction".to_string()
                } else {
                    "heuristic: atoms have distinct fixed directions".to_string()
                },
                None,
                "undetermined: finite support".to_string(),
            )
        }
    };

    Ok(AssumptionReport {
        p1_ok: max_abs_ln_n.is_finite(),
        max_abs_ln_n,
        p2_ok,
        p2_note,
        p3_ok,
        p3_max_entry_ratio: max_ratio,
        p4_residual: gamma.value.abs(),
        p4_std_error: gamma.std_error,
        p5_mass: above_one as f64 / budget.max(1) as f64,
        p5_delta5,
        p6_ok,
        p6_note,
    })
}

/// Perron direction of a positive matrix by power iteration on the simplex.
pub fn perron_direction(g: &PositiveMatrix) -> (SimplexPoint, f64) {
    let mut x = SimplexPoint::uniform(g.dim());
    let mut rho = 0.0;
    for _ in 0..10_000 {
        let (next, r) = g.act_projective(&x);
        let moved = next
            .coords()
            .iter()
            .zip(x.coords())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        x = next;
        rho = r;
        if moved < 1e-15 {
            break;
        }
    }
    (x, rho)
}

fn common_fixed_direction(spec: &EnsembleSpec) -> bool {
    let Family::FiniteSupport { atoms } = &spec.family else {
        return false;
    };
    let dirs: Vec<SimplexPoint> = atoms.iter().map(|a| perron_direction(&a.matrix).0).collect();
    dirs.windows(2).all(|w| {
        w[0].coords()
            .iter()
            .zip(w[1].coords())
            .all(|(a, b)| (a - b).abs() < 1e-9)
    })
}
