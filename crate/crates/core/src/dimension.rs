//! Dimensional analysis of the team/task parameter vector.
//!
//! The five parameters (robot count, target count, sensing radius, robot
//! density, target density) span two physical units: item counts and meters.
//! A dimensionless power product of the parameters corresponds to an integer
//! (or real) point in the null space of the 2x5 dimensional matrix. This
//! module builds that matrix, extracts a canonical integer null basis, and
//! evaluates the dimensionless variable `Pi` in its two equivalent
//! parameterizations: raw per-parameter exponents (`w` form) and
//! coefficients over the null basis (`gamma` form).

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Number of team/task parameters (columns of the dimensional matrix).
pub const PARAM_COUNT: usize = 5;
/// Number of physical units (rows of the dimensional matrix).
pub const UNIT_COUNT: usize = 2;
/// Dimension of the null space: `PARAM_COUNT - UNIT_COUNT`.
pub const NULL_DIM: usize = 3;

#[derive(Debug, Error, PartialEq)]
pub enum DimensionError {
    #[error("parameter {name} must be strictly positive and finite, got {value}")]
    NonPositiveParam { name: &'static str, value: f64 },
    #[error("length rescale factor must be strictly positive and finite, got {0}")]
    BadScale(f64),
    #[error("gamma coefficients must be finite, got {0:?}")]
    NonFiniteGamma([f64; 3]),
    #[error("exponent vector must be finite, got {0:?}")]
    NonFiniteW([f64; 5]),
    #[error("power-product base {index} is non-positive ({value}); Pi is undefined")]
    NonPositiveBase { index: usize, value: f64 },
    #[error("dimensional matrix has rank {found}, expected {expected}")]
    RankDeficient { found: usize, expected: usize },
}

/// The team/task parameter vector theta.
///
/// Units: `n_r`, `n_t` are item counts; `r` is in meters; `rho_r`, `rho_t`
/// are in items per square meter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TeamTaskParams {
    pub n_r: f64,
    pub n_t: f64,
    pub r: f64,
    pub rho_r: f64,
    pub rho_t: f64,
}

impl TeamTaskParams {
    pub fn new(n_r: f64, n_t: f64, r: f64, rho_r: f64, rho_t: f64) -> Result<Self, DimensionError> {
        let check = |name: &'static str, value: f64| {
            if value > 0.0 && value.is_finite() {
                Ok(())
            } else {
                Err(DimensionError::NonPositiveParam { name, value })
            }
        };
        check("n_r", n_r)?;
        check("n_t", n_t)?;
        check("r", r)?;
        check("rho_r", rho_r)?;
        check("rho_t", rho_t)?;
        Ok(Self { n_r, n_t, r, rho_r, rho_t })
    }

    /// Build theta from integer counts and the areas the robots and targets
    /// occupy, so that `rho_r = n_r / robot_area` and `rho_t = n_t /
    /// target_area` hold exactly.
    pub fn from_counts(
        n_r: u32,
        n_t: u32,
        r: f64,
        robot_area: f64,
        target_area: f64,
    ) -> Result<Self, DimensionError> {
        if !(robot_area > 0.0 && robot_area.is_finite()) {
            return Err(DimensionError::NonPositiveParam { name: "robot_area", value: robot_area });
        }
        if !(target_area > 0.0 && target_area.is_finite()) {
            return Err(DimensionError::NonPositiveParam {
                name: "target_area",
                value: target_area,
            });
        }
        Self::new(
            f64::from(n_r),
            f64::from(n_t),
            r,
            f64::from(n_r) / robot_area,
            f64::from(n_t) / target_area,
        )
    }

    /// Express the same physical scenario in length units rescaled by
    /// `scale` (e.g. `scale = 100` converts meters to centimeters): the
    /// radius scales by `scale`, the densities by `1/scale^2`, and the
    /// counts are unchanged.
    pub fn rescale_length_units(&self, scale: f64) -> Result<Self, DimensionError> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(DimensionError::BadScale(scale));
        }
        Self::new(
            self.n_r,
            self.n_t,
            self.r * scale,
            self.rho_r / (scale * scale),
            self.rho_t / (scale * scale),
        )
    }

    /// Parameters as the ordered vector `[n_r, n_t, r, rho_r, rho_t]`.
    pub fn as_array(&self) -> [f64; PARAM_COUNT] {
        [self.n_r, self.n_t, self.r, self.rho_r, self.rho_t]
    }

    /// The three bases of the gamma form of Pi:
    /// `n_t/n_r`, `r^2 rho_r / n_r`, `r^2 rho_t / n_r`.
    pub fn pi_bases(&self) -> [f64; NULL_DIM] {
        let r2 = self.r * self.r;
        [
            self.n_t / self.n_r,
            r2 * self.rho_r / self.n_r,
            r2 * self.rho_t / self.n_r,
        ]
    }

    /// Natural logs of [`Self::pi_bases`], the features `log Pi` is linear in.
    pub fn log_pi_bases(&self) -> Result<[f64; NULL_DIM], DimensionError> {
        let bases = self.pi_bases();
        let mut logs = [0.0; NULL_DIM];
        for (i, b) in bases.iter().enumerate() {
            if !(*b > 0.0 && b.is_finite()) {
                return Err(DimensionError::NonPositiveBase { index: i, value: *b });
            }
            logs[i] = b.ln();
        }
        Ok(logs)
    }
}

/// Unit-exponent matrix: rows are units (item, meter), columns are the
/// parameters `[n_r, n_t, r, rho_r, rho_t]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DimensionalMatrix {
    entries: [[i64; PARAM_COUNT]; UNIT_COUNT],
}

impl DimensionalMatrix {
    /// The dimensional matrix of the five team/task parameters.
    pub fn build() -> Self {
        Self {
            entries: [
                [1, 1, 0, 1, 1],  // item
                [0, 0, 1, -2, -2], // meter
            ],
        }
    }

    pub fn entries(&self) -> &[[i64; PARAM_COUNT]; UNIT_COUNT] {
        &self.entries
    }

    /// `D * w` in exact integer arithmetic.
    pub fn apply_integer(&self, w: &[i64; PARAM_COUNT]) -> [i64; UNIT_COUNT] {
        let mut out = [0i64; UNIT_COUNT];
        for (row, out_val) in self.entries.iter().zip(out.iter_mut()) {
            *out_val = row.iter().zip(w.iter()).map(|(a, b)| a * b).sum();
        }
        out
    }

    /// `D * w` over reals.
    pub fn apply(&self, w: &WVector) -> [f64; UNIT_COUNT] {
        let mut out = [0.0; UNIT_COUNT];
        for (row, out_val) in self.entries.iter().zip(out.iter_mut()) {
            *out_val = row.iter().zip(w.0.iter()).map(|(a, b)| *a as f64 * b).sum();
        }
        out
    }
}

/// Canonical integer basis `W = [w1, w2, w3]` of the null space of the
/// dimensional matrix. Each column is a dimensionless power product.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NullBasis {
    columns: [[i64; PARAM_COUNT]; NULL_DIM],
}

impl NullBasis {
    pub fn columns(&self) -> &[[i64; PARAM_COUNT]; NULL_DIM] {
        &self.columns
    }
}

/// Coefficients over the null basis (the learnable parameterization of Pi).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaVector(pub [f64; NULL_DIM]);

impl GammaVector {
    pub fn new(gamma: [f64; NULL_DIM]) -> Result<Self, DimensionError> {
        if gamma.iter().all(|g| g.is_finite()) {
            Ok(Self(gamma))
        } else {
            Err(DimensionError::NonFiniteGamma(gamma))
        }
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|g| g * g).sum::<f64>().sqrt()
    }
}

/// Per-parameter exponents of Pi (always derived from a gamma vector, which
/// guarantees the product is dimensionless).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WVector(pub [f64; PARAM_COUNT]);

impl WVector {
    pub fn new(w: [f64; PARAM_COUNT]) -> Result<Self, DimensionError> {
        if w.iter().all(|v| v.is_finite()) {
            Ok(Self(w))
        } else {
            Err(DimensionError::NonFiniteW(w))
        }
    }
}

/// Compute the canonical integer null basis of the dimensional matrix.
///
/// Uses exact rational Gaussian elimination; each basis column is scaled to
/// coprime integers with its first nonzero entry negative, which makes the
/// basis reproducible (floating-point null spaces are basis-ambiguous).
pub fn compute_null_basis(matrix: &DimensionalMatrix) -> Result<NullBasis, DimensionError> {
    let rows: Vec<Vec<Ratio>> = matrix
        .entries
        .iter()
        .map(|row| row.iter().map(|&e| Ratio::integer(e)).collect())
        .collect();
    let columns = rational_null_basis(&rows, UNIT_COUNT)?;
    debug_assert_eq!(columns.len(), NULL_DIM);
    let mut out = [[0i64; PARAM_COUNT]; NULL_DIM];
    for (dst, src) in out.iter_mut().zip(columns.iter()) {
        dst.copy_from_slice(src);
    }
    let basis = NullBasis { columns: out };
    for col in basis.columns() {
        debug_assert_eq!(matrix.apply_integer(col), [0; UNIT_COUNT]);
    }
    Ok(basis)
}

/// Linear combination of the basis columns: `w = gamma1*w1 + gamma2*w2 + gamma3*w3`.
pub fn gamma_to_w(gamma: &GammaVector, basis: &NullBasis) -> WVector {
    let mut w = [0.0; PARAM_COUNT];
    for (col, g) in basis.columns().iter().zip(gamma.0.iter()) {
        for (w_i, c_i) in w.iter_mut().zip(col.iter()) {
            *w_i += g * *c_i as f64;
        }
    }
    WVector(w)
}

/// Evaluate Pi in the gamma form:
/// `(n_t/n_r)^g1 * (r^2 rho_r/n_r)^g2 * (r^2 rho_t/n_r)^g3`.
///
/// Computed in log space (sum of `gamma_i * ln(base_i)`) so exponent
/// products spanning many orders of magnitude keep full precision.
pub fn evaluate_pi(theta: &TeamTaskParams, gamma: &GammaVector) -> Result<f64, DimensionError> {
    Ok(log_pi(theta, gamma)?.exp())
}

/// `ln Pi(theta, gamma)`.
pub fn log_pi(theta: &TeamTaskParams, gamma: &GammaVector) -> Result<f64, DimensionError> {
    let logs = theta.log_pi_bases()?;
    Ok(gamma.0.iter().zip(logs.iter()).map(|(g, l)| g * l).sum())
}

/// Evaluate Pi in the w form: `prod_i theta_i ^ w_i`, also in log space.
pub fn evaluate_pi_w(theta: &TeamTaskParams, w: &WVector) -> Result<f64, DimensionError> {
    let params = theta.as_array();
    let mut log_pi = 0.0;
    for (i, (p, wi)) in params.iter().zip(w.0.iter()).enumerate() {
        if !(*p > 0.0 && p.is_finite()) {
            return Err(DimensionError::NonPositiveBase { index: i, value: *p });
        }
        log_pi += wi * p.ln();
    }
    Ok(log_pi.exp())
}

// ---------------------------------------------------------------------------
// Exact rational elimination (internal; the public surface is specialized to
// the fixed 2x5 system).
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Ratio {
    num: i64,
    den: i64, // invariant: den > 0, gcd(num, den) = 1
}

impl Ratio {
    fn integer(n: i64) -> Self {
        Self { num: n, den: 1 }
    }

    fn zero() -> Self {
        Self::integer(0)
    }

    fn is_zero(&self) -> bool {
        self.num == 0
    }

    fn reduce(num: i64, den: i64) -> Self {
        assert!(den != 0, "zero denominator");
        let g = gcd(num.unsigned_abs(), den.unsigned_abs()) as i64;
        let sign = if den < 0 { -1 } else { 1 };
        Self { num: sign * num / g, den: sign * den / g }
    }

    fn mul(self, other: Self) -> Self {
        Self::reduce(self.num * other.num, self.den * other.den)
    }

    fn sub(self, other: Self) -> Self {
        Self::reduce(self.num * other.den - other.num * self.den, self.den * other.den)
    }

    fn div(self, other: Self) -> Self {
        assert!(!other.is_zero(), "division by zero");
        Self::reduce(self.num * other.den, self.den * other.num)
    }

    fn neg(self) -> Self {
        Self { num: -self.num, den: self.den }
    }
}

fn gcd(a: u64, b: u64) -> u64 {
    if a == 0 && b == 0 {
        return 1;
    }
    let (mut a, mut b) = (a, b);
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

fn lcm(a: u64, b: u64) -> u64 {
    a / gcd(a, b) * b
}

/// Null basis of a small rational matrix via reduced row echelon form.
/// Returns one integer column per free variable, scaled to coprime entries
/// with the first nonzero entry negative. Errors if the rank differs from
/// `expected_rank`.
fn rational_null_basis(
    rows: &[Vec<Ratio>],
    expected_rank: usize,
) -> Result<Vec<Vec<i64>>, DimensionError> {
    let n_rows = rows.len();
    let n_cols = rows[0].len();
    let mut m: Vec<Vec<Ratio>> = rows.to_vec();

    // Forward elimination to RREF, tracking pivot columns.
    let mut pivot_cols: Vec<usize> = Vec::new();
    let mut pivot_row = 0usize;
    for col in 0..n_cols {
        let Some(src) = (pivot_row..n_rows).find(|&r| !m[r][col].is_zero()) else {
            continue;
        };
        m.swap(pivot_row, src);
        let inv = m[pivot_row][col];
        for c in 0..n_cols {
            m[pivot_row][c] = m[pivot_row][c].div(inv);
        }
        for r in 0..n_rows {
            if r != pivot_row && !m[r][col].is_zero() {
                let factor = m[r][col];
                for c in 0..n_cols {
                    let delta = factor.mul(m[pivot_row][c]);
                    m[r][c] = m[r][c].sub(delta);
                }
            }
        }
        pivot_cols.push(col);
        pivot_row += 1;
        if pivot_row == n_rows {
            break;
        }
    }

    if pivot_cols.len() != expected_rank {
        return Err(DimensionError::RankDeficient {
            found: pivot_cols.len(),
            expected: expected_rank,
        });
    }

    // One null vector per free column: free entry = 1, pivot entries read
    // off the RREF with flipped sign.
    let mut basis = Vec::new();
    for free_col in (0..n_cols).filter(|c| !pivot_cols.contains(c)) {
        let mut v = vec![Ratio::zero(); n_cols];
        v[free_col] = Ratio::integer(1);
        for (row_idx, &piv_col) in pivot_cols.iter().enumerate() {
            v[piv_col] = m[row_idx][free_col].neg();
        }
        basis.push(integerize(&v));
    }
    Ok(basis)
}

/// Scale a rational vector to coprime integers with the first nonzero entry
/// negative.
fn integerize(v: &[Ratio]) -> Vec<i64> {
    let scale = v.iter().fold(1u64, |acc, r| lcm(acc, r.den.unsigned_abs()));
    let mut ints: Vec<i64> = v.iter().map(|r| r.num * (scale as i64 / r.den)).collect();
    let g = ints.iter().fold(0u64, |acc, &x| gcd(acc, x.unsigned_abs())).max(1);
    for x in &mut ints {
        *x /= g as i64;
    }
    if let Some(first) = ints.iter().find(|&&x| x != 0) {
        if *first > 0 {
            for x in &mut ints {
                *x = -*x;
            }
        }
    }
    ints
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn theta_default() -> TeamTaskParams {
        TeamTaskParams::new(50.0, 100.0, 5.0, 0.005, 0.01).unwrap()
    }

    #[test]
    fn dimensional_matrix_matches_unit_bookkeeping() {
        let d = DimensionalMatrix::build();
        assert_eq!(d.entries(), &[[1, 1, 0, 1, 1], [0, 0, 1, -2, -2]]);
        // rho_r column reads "quantity per square meter".
        assert_eq!(d.entries()[0][3], 1);
        assert_eq!(d.entries()[1][3], -2);
        // counts are unitless in length.
        assert_eq!(d.entries()[1][0], 0);
        assert_eq!(d.entries()[1][1], 0);
    }

    #[test]
    fn null_basis_is_canonical_and_exact() {
        let d = DimensionalMatrix::build();
        let basis = compute_null_basis(&d).unwrap();
        assert_eq!(
            basis.columns(),
            &[
                [-1, 1, 0, 0, 0],
                [-1, 0, 2, 1, 0],
                [-1, 0, 2, 0, 1],
            ]
        );
        for col in basis.columns() {
            assert_eq!(d.apply_integer(col), [0, 0]);
        }
        assert_eq!(basis.columns().len(), PARAM_COUNT - UNIT_COUNT);
    }

    #[test]
    fn null_basis_rejects_rank_deficient_input() {
        let rows = vec![
            vec![Ratio::integer(1), Ratio::integer(2)],
            vec![Ratio::integer(2), Ratio::integer(4)],
        ];
        let err = rational_null_basis(&rows, 2).unwrap_err();
        assert_eq!(err, DimensionError::RankDeficient { found: 1, expected: 2 });
    }

    #[test]
    fn gamma_to_w_combines_columns() {
        let basis = compute_null_basis(&DimensionalMatrix::build()).unwrap();
        let w = gamma_to_w(&GammaVector([1.0, 0.0, 0.0]), &basis);
        assert_eq!(w.0, [-1.0, 1.0, 0.0, 0.0, 0.0]);
        let w = gamma_to_w(&GammaVector([0.0, 0.0, 0.0]), &basis);
        assert_eq!(w.0, [0.0; 5]);
        let w = gamma_to_w(&GammaVector([1.0, 1.0, 1.0]), &basis);
        assert_eq!(w.0, [-3.0, 1.0, 4.0, 1.0, 1.0]);
    }

    #[test]
    fn pi_examples() {
        let theta = theta_default();
        let pi = evaluate_pi(&theta, &GammaVector([1.0, 0.0, 0.0])).unwrap();
        assert_relative_eq!(pi, 2.0, max_relative = 1e-12);

        let theta = TeamTaskParams::new(100.0, 50.0, 5.0, 0.01, 0.005).unwrap();
        let pi = evaluate_pi(&theta, &GammaVector([0.0, 1.0, 0.0])).unwrap();
        assert_relative_eq!(pi, 0.0025, max_relative = 1e-12);

        let pi = evaluate_pi(&theta, &GammaVector([0.0, 0.0, 0.0])).unwrap();
        assert_eq!(pi, 1.0);
    }

    #[test]
    fn rescale_examples() {
        let theta = TeamTaskParams::new(100.0, 50.0, 5.0, 0.01, 0.005).unwrap();
        let same = theta.rescale_length_units(1.0).unwrap();
        assert_eq!(same, theta);

        let cm = theta.rescale_length_units(100.0).unwrap();
        assert_relative_eq!(cm.r, 500.0);
        assert_relative_eq!(cm.rho_r, 1e-6);
        assert_eq!(cm.n_r, theta.n_r);
        assert_eq!(cm.n_t, theta.n_t);
    }

    #[test]
    fn from_counts_densities_exact() {
        let theta = TeamTaskParams::from_counts(30, 70, 5.0, 10_000.0, 10_000.0).unwrap();
        assert_eq!(theta.rho_r, 30.0 / 10_000.0);
        assert_eq!(theta.rho_t, 70.0 / 10_000.0);
    }

    #[test]
    fn rejects_invalid_params() {
        assert!(TeamTaskParams::new(0.0, 1.0, 1.0, 1.0, 1.0).is_err());
        assert!(TeamTaskParams::new(1.0, 1.0, -1.0, 1.0, 1.0).is_err());
        assert!(TeamTaskParams::new(1.0, f64::NAN, 1.0, 1.0, 1.0).is_err());
        assert!(GammaVector::new([0.0, f64::INFINITY, 0.0]).is_err());
        let theta = theta_default();
        assert!(theta.rescale_length_units(0.0).is_err());
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        fn arb_theta() -> impl Strategy<Value = TeamTaskParams> {
            (
                1.0..200.0f64,
                1.0..200.0f64,
                0.5..20.0f64,
                1e-5..0.1f64,
                1e-5..0.1f64,
            )
                .prop_map(|(n_r, n_t, r, rho_r, rho_t)| {
                    TeamTaskParams::new(n_r, n_t, r, rho_r, rho_t).unwrap()
                })
        }

        fn arb_gamma() -> impl Strategy<Value = GammaVector> {
            [-3.0..3.0f64, -3.0..3.0f64, -3.0..3.0f64].prop_map(GammaVector)
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(1000))]

            #[test]
            fn pi_is_unit_invariant(theta in arb_theta(), gamma in arb_gamma()) {
                let reference = log_pi(&theta, &gamma).unwrap();
                for scale in [0.01, 1.0, 100.0] {
                    let rescaled = theta.rescale_length_units(scale).unwrap();
                    let log_rescaled = log_pi(&rescaled, &gamma).unwrap();
                    prop_assert!((log_rescaled - reference).abs() < 1e-9);
                }
            }

            #[test]
            fn derived_w_lies_in_null_space(gamma in arb_gamma()) {
                let d = DimensionalMatrix::build();
                let basis = compute_null_basis(&d).unwrap();
                let w = gamma_to_w(&gamma, &basis);
                for v in d.apply(&w) {
                    prop_assert!(v.abs() < 1e-12);
                }
            }

            #[test]
            fn w_form_matches_gamma_form(theta in arb_theta(), gamma in arb_gamma()) {
                let basis = compute_null_basis(&DimensionalMatrix::build()).unwrap();
                let w = gamma_to_w(&gamma, &basis);
                let via_gamma = evaluate_pi(&theta, &gamma).unwrap();
                let via_w = evaluate_pi_w(&theta, &w).unwrap();
                prop_assert!((via_gamma - via_w).abs() <= 1e-12 * via_gamma.abs().max(via_w.abs()));
            }
        }
    }
}
