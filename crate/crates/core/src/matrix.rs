//! Arithmetic of the semigroup of strictly positive `d × d` matrices.
//!
//! Norms follow the L1 convention throughout: `|g|` is the sum of all
//! entries, `v(g)` the smallest column sum, and `|x|` the coordinate sum of a
//! nonnegative vector. Walk states live on the simplex of L1-normalized
//! vectors; the accumulated log-norm is carried separately so that raw
//! products never have to be formed.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative slack applied to every inequality checked in floating point.
pub const REL_SLACK: f64 = 1e-12;

/// Coordinate-sum tolerance for simplex points.
pub const SIMPLEX_TOL: f64 = 1e-12;

/// A strictly positive square matrix stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct PositiveMatrix {
    dim: usize,
    entries: Vec<f64>,
}

impl PositiveMatrix {
    pub fn new(dim: usize, entries: Vec<f64>) -> Result<Self> {
        if dim < 2 {
            return Err(Error::InvalidMatrix(format!("dimension {dim} < 2")));
        }
        if entries.len() != dim * dim {
            return Err(Error::InvalidMatrix(format!(
                "expected {} entries, got {}",
                dim * dim,
                entries.len()
            )));
        }
        if let Some(bad) = entries.iter().find(|e| !(e.is_finite() && **e > 0.0)) {
            return Err(Error::InvalidMatrix(format!("entry {bad} is not finite and positive")));
        }
        Ok(Self { dim, entries })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.len();
        if let Some(r) = rows.iter().find(|r| r.len() != dim) {
            return Err(Error::InvalidMatrix(format!(
                "row of length {} in a {dim}-row matrix",
                r.len()
            )));
        }
        Self::new(dim, rows.iter().flatten().copied().collect())
    }

    /// The matrix with every entry equal to `value`.
    pub fn constant(dim: usize, value: f64) -> Result<Self> {
        Self::new(dim, vec![value; dim * dim])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.dim + j]
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.entries.chunks(self.dim).map(<[f64]>::to_vec).collect()
    }

    /// Largest entry divided by smallest entry.
    pub fn entry_ratio(&self) -> f64 {
        let (lo, hi) = min_max(&self.entries);
        hi / lo
    }

    /// `|g|`: the sum of all entries.
    pub fn l1_norm(&self) -> f64 {
        self.entries.iter().sum()
    }

    /// `v(g)`: the smallest column sum.
    pub fn column_min_sum(&self) -> f64 {
        (0..self.dim)
            .map(|j| (0..self.dim).map(|i| self.get(i, j)).sum::<f64>())
            .fold(f64::INFINITY, f64::min)
    }

    /// `N(g) = max(1 / v(g), |g|)`.
    pub fn n_functional(&self) -> f64 {
        (1.0 / self.column_min_sum()).max(self.l1_norm())
    }

    pub fn multiply(&self, other: &PositiveMatrix) -> Result<PositiveMatrix> {
        if self.dim != other.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: other.dim,
            });
        }
        let d = self.dim;
        let mut out = vec![0.0; d * d];
        for i in 0..d {
            for k in 0..d {
                let a = self.get(i, k);
                let row = &other.entries[k * d..(k + 1) * d];
                for (o, b) in out[i * d..(i + 1) * d].iter_mut().zip(row) {
                    *o += a * b;
                }
            }
        }
        PositiveMatrix::new(d, out)
    }

    pub fn transpose(&self) -> PositiveMatrix {
        let d = self.dim;
        let mut out = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..d {
                out[j * d + i] = self.get(i, j);
            }
        }
        PositiveMatrix { dim: d, entries: out }
    }

    pub fn scaled(&self, factor: f64) -> Result<PositiveMatrix> {
        PositiveMatrix::new(self.dim, self.entries.iter().map(|e| e * factor).collect())
    }

    /// Rescales so that `|g| = 1`, returning the log of the removed norm.
    pub(crate) fn normalize_in_place(&mut self) -> f64 {
        let norm = self.l1_norm();
        self.entries.iter_mut().for_each(|e| *e /= norm);
        norm.ln()
    }

    /// Projective action `g·x = gx/|gx|` together with the cocycle
    /// increment `ρ(g, x) = ln|gx|`.
    pub fn act_projective(&self, x: &SimplexPoint) -> (SimplexPoint, f64) {
        assert_eq!(self.dim, x.dim(), "dimension mismatch in act_projective");
        let mut out = vec![0.0; self.dim];
        let norm = column_action(&self.entries, self.dim, x.coords(), &mut out);
        (SimplexPoint(out), norm.ln())
    }

    /// Right action `x̃·g = x̃g/|x̃g|` together with `ρ̃(g, x̃) = ln|x̃g|`.
    pub fn act_right(&self, xt: &RowSimplexPoint) -> (RowSimplexPoint, f64) {
        assert_eq!(self.dim, xt.dim(), "dimension mismatch in act_right");
        let mut out = vec![0.0; self.dim];
        let norm = row_action(&self.entries, self.dim, xt.coords(), &mut out);
        (RowSimplexPoint(out), norm.ln())
    }

    /// `|gx|` for a nonnegative column vector.
    pub fn apply_norm(&self, x: &[f64]) -> f64 {
        let d = self.dim;
        (0..d).map(|i| (0..d).map(|j| self.get(i, j) * x[j]).sum::<f64>()).sum()
    }

    /// `|ỹ g|` for a nonnegative row vector.
    pub fn row_apply_norm(&self, y: &[f64]) -> f64 {
        let d = self.dim;
        (0..d).map(|j| (0..d).map(|i| y[i] * self.get(i, j)).sum::<f64>()).sum()
    }
}

impl TryFrom<Vec<Vec<f64>>> for PositiveMatrix {
    type Error = Error;

    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self> {
        PositiveMatrix::from_rows(&rows)
    }
}

impl From<PositiveMatrix> for Vec<Vec<f64>> {
    fn from(m: PositiveMatrix) -> Self {
        m.rows()
    }
}

/// Writes `gx / |gx|` into `out` and returns `|gx|`.
#[inline]
pub(crate) fn column_action(g: &[f64], d: usize, x: &[f64], out: &mut [f64]) -> f64 {
    let mut norm = 0.0;
    for (i, o) in out.iter_mut().enumerate() {
        let row = &g[i * d..(i + 1) * d];
        let v: f64 = row.iter().zip(x).map(|(a, b)| a * b).sum();
        *o = v;
        norm += v;
    }
    out.iter_mut().for_each(|o| *o /= norm);
    norm
}

/// Writes `x̃g / |x̃g|` into `out` and returns `|x̃g|`.
#[inline]
pub(crate) fn row_action(g: &[f64], d: usize, xt: &[f64], out: &mut [f64]) -> f64 {
    out.iter_mut().for_each(|o| *o = 0.0);
    for (i, &w) in xt.iter().enumerate() {
        let row = &g[i * d..(i + 1) * d];
        for (o, a) in out.iter_mut().zip(row) {
            *o += w * a;
        }
    }
    let norm: f64 = out.iter().sum();
    out.iter_mut().for_each(|o| *o /= norm);
    norm
}

fn min_max(values: &[f64]) -> (f64, f64) {
    values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
        (lo.min(v), hi.max(v))
    })
}

fn validate_simplex(coords: &[f64]) -> Result<()> {
    if coords.len() < 2 {
        return Err(Error::InvalidSimplexPoint(format!("dimension {} < 2", coords.len())));
    }
    if let Some(bad) = coords.iter().find(|c| !(c.is_finite() && **c >= 0.0)) {
        return Err(Error::InvalidSimplexPoint(format!(
            "coordinate {bad} is negative or not finite"
        )));
    }
    let sum: f64 = coords.iter().sum();
    if (sum - 1.0).abs() > SIMPLEX_TOL {
        return Err(Error::InvalidSimplexPoint(format!("coordinates sum to {sum}, not 1")));
    }
    Ok(())
}

fn normalized(mut coords: Vec<f64>) -> Result<Vec<f64>> {
    let sum: f64 = coords.iter().sum();
    if !(sum.is_finite() && sum > 0.0) {
        return Err(Error::InvalidSimplexPoint(format!(
            "cannot normalize vector with sum {sum}"
        )));
    }
    coords.iter_mut().for_each(|c| *c /= sum);
    validate_simplex(&coords)?;
    Ok(coords)
}

macro_rules! simplex_point {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
        #[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
        pub struct $name(Vec<f64>);

        impl $name {
            pub fn new(coords: Vec<f64>) -> Result<Self> {
                validate_simplex(&coords)?;
                Ok(Self(coords))
            }

            /// Divides a nonnegative nonzero vector by its coordinate sum.
            pub fn from_unnormalized(coords: Vec<f64>) -> Result<Self> {
                normalized(coords).map(Self)
            }

            /// The barycenter `(1/d, …, 1/d)`.
            pub fn uniform(dim: usize) -> Self {
                Self(vec![1.0 / dim as f64; dim])
            }

            /// The `i`-th vertex of the simplex.
            pub fn vertex(dim: usize, i: usize) -> Self {
                let mut c = vec![0.0; dim];
                c[i] = 1.0;
                Self(c)
            }

            pub fn dim(&self) -> usize {
                self.0.len()
            }

            pub fn coords(&self) -> &[f64] {
                &self.0
            }
        }

        impl TryFrom<Vec<f64>> for $name {
            type Error = Error;

            fn try_from(coords: Vec<f64>) -> Result<Self> {
                $name::new(coords)
            }
        }

        impl From<$name> for Vec<f64> {
            fn from(p: $name) -> Self {
                p.0
            }
        }
    };
}

simplex_point!(
    /// A column vector on the simplex `𝕏`.
    SimplexPoint
);
simplex_point!(
    /// A row vector on the dual simplex `𝕏̃`.
    RowSimplexPoint
);

impl SimplexPoint {
    pub fn to_row(&self) -> RowSimplexPoint {
        RowSimplexPoint(self.0.clone())
    }
}

impl RowSimplexPoint {
    pub fn to_column(&self) -> SimplexPoint {
        SimplexPoint(self.0.clone())
    }
}

/// Comparison constants for products of matrices whose entries are
/// pairwise comparable within a factor `b`.
///
/// `delta = d²·b²` bounds every two-sided comparison between `|g|`, `|gx|`,
/// `|ỹg|`, `|ỹgx|` and `|g||h| / |gh|` over the generated semigroup.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComparisonConstants {
    pub b: f64,
    pub delta: f64,
    pub big_delta: f64,
}

impl ComparisonConstants {
    pub fn certified(dim: usize, b: f64) -> Result<Self> {
        if !(b.is_finite() && b > 1.0) {
            return Err(Error::InvalidParameter(format!(
                "comparison bound B = {b} must exceed 1"
            )));
        }
        if dim < 2 {
            return Err(Error::InvalidParameter(format!("dimension {dim} < 2")));
        }
        let delta = (dim * dim) as f64 * b * b;
        Ok(Self {
            b,
            delta,
            big_delta: delta.ln(),
        })
    }

    /// Minimal window length for the lower local bound: `4Δ + 2`.
    pub fn ell0(&self) -> f64 {
        4.0 * self.big_delta + 2.0
    }
}

/// True iff every pair of entries is comparable within factor `b`.
pub fn check_sb_membership(g: &PositiveMatrix, b: f64) -> bool {
    g.entry_ratio() <= b * (1.0 + REL_SLACK)
}

/// Outcome of [`check_keylem`]; each flag is one of the comparison claims.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KeylemReport {
    /// Entry ratio of `g` at most `B²`.
    pub entries_comparable: bool,
    /// `|gx|` and `|ỹg|` within factor `δ` of `|g|`.
    pub one_sided_actions: bool,
    /// `|ỹgx|` within factor `δ` of `|g|`.
    pub bilinear_action: bool,
    /// `|g||h|/δ ≤ |gh| ≤ |g||h|`.
    pub product_norm: bool,
    /// Largest ratio observed among the comparisons, i.e. the tightest `δ`
    /// that would have sufficed for this input.
    pub tightest_delta: f64,
}

impl KeylemReport {
    pub fn all_hold(&self) -> bool {
        self.entries_comparable && self.one_sided_actions && self.bilinear_action && self.product_norm
    }
}

pub fn check_keylem(
    g: &PositiveMatrix,
    h: &PositiveMatrix,
    x: &SimplexPoint,
    yt: &RowSimplexPoint,
    c: &ComparisonConstants,
) -> KeylemReport {
    let slack = 1.0 + REL_SLACK;
    let within = |big: f64, small: f64| small <= big * slack && big <= c.delta * small * slack;

    let norm_g = g.l1_norm();
    let gx = g.apply_norm(x.coords());
    let yg = g.row_apply_norm(yt.coords());
    let ygx: f64 = {
        let d = g.dim();
        (0..d)
            .map(|i| yt.coords()[i] * (0..d).map(|j| g.get(i, j) * x.coords()[j]).sum::<f64>())
            .sum()
    };
    let gh = g.multiply(h).map(|p| p.l1_norm()).unwrap_or(f64::NAN);
    let gh_bound = norm_g * h.l1_norm();

    let tightest_delta = [norm_g / gx, norm_g / yg, norm_g / ygx, gh_bound / gh]
        .into_iter()
        .fold(1.0, f64::max);

    KeylemReport {
        entries_comparable: g.entry_ratio() <= c.b * c.b * slack,
        one_sided_actions: within(norm_g, gx) && within(norm_g, yg),
        bilinear_action: within(norm_g, ygx),
        product_norm: within(gh_bound, gh),
        tightest_delta,
    }
}
