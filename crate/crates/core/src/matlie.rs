//! Dense small-matrix algebra with the matrix exponential and logarithm.
//!
//! Matrices are row-major value types (`data[i * cols + j]`). The group
//! module uses closed forms where they exist; the routines here are the
//! generic fallback and the reference they are checked against.
//!
//! - [`mat_exp`]: scaling and squaring around a truncated Taylor series whose
//!   degree is picked from the scaled norm.
//! - [`mat_log`]: inverse scaling and squaring; repeated Denman–Beavers
//!   square roots bring the argument near the identity, where an `atanh`
//!   series finishes the job.

use std::fmt;
use std::ops::{Index, IndexMut};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Arithmetic width used by network layers.
///
/// Group and matrix computations always run in `f64`; this selects the
/// scalar type the network tape is instantiated with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    Single,
    #[default]
    Double,
}

impl FromStr for Precision {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "single" | "f32" => Ok(Precision::Single),
            "double" | "f64" => Ok(Precision::Double),
            other => Err(Error::Config(format!("unknown precision '{other}'"))),
        }
    }
}

impl fmt::Display for Precision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Precision::Single => write!(f, "single"),
            Precision::Double => write!(f, "double"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    /// Builds a matrix from row-major data, rejecting empty shapes and
    /// non-finite entries.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::Dimension(format!("empty matrix {rows}x{cols}")));
        }
        if data.len() != rows * cols {
            return Err(Error::Dimension(format!(
                "expected {} entries for {rows}x{cols}, got {}",
                rows * cols,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite matrix entry".into()));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows > 0 && cols > 0, "empty matrix");
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    /// Panics on ragged input; intended for literals.
    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        assert!(r > 0 && c > 0, "empty matrix");
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged rows");
            data.extend_from_slice(row);
        }
        Self {
            rows: r,
            cols: c,
            data,
        }
    }

    pub fn diag(values: &[f64]) -> Self {
        let mut m = Self::zeros(values.len(), values.len());
        for (i, v) in values.iter().enumerate() {
            m[(i, i)] = *v;
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    /// Matrix product. Panics on inner-dimension mismatch; see
    /// [`Matrix::try_matmul`] for the checked form.
    pub fn matmul(&self, rhs: &Matrix) -> Matrix {
        self.try_matmul(rhs).expect("matmul dimension mismatch")
    }

    pub fn try_matmul(&self, rhs: &Matrix) -> Result<Matrix> {
        if self.cols != rhs.rows {
            return Err(Error::Dimension(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, rhs.rows, rhs.cols
            )));
        }
        let mut out = Matrix::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == 0.0 {
                    continue;
                }
                let rrow = &rhs.data[k * rhs.cols..(k + 1) * rhs.cols];
                let orow = &mut out.data[i * rhs.cols..(i + 1) * rhs.cols];
                for (o, b) in orow.iter_mut().zip(rrow) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    pub fn matvec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.cols, "matvec dimension mismatch");
        (0..self.rows)
            .map(|i| {
                self.data[i * self.cols..(i + 1) * self.cols]
                    .iter()
                    .zip(v)
                    .map(|(a, b)| a * b)
                    .sum()
            })
            .collect()
    }

    pub fn add(&self, rhs: &Matrix) -> Matrix {
        self.zip_with(rhs, |a, b| a + b)
    }

    pub fn sub(&self, rhs: &Matrix) -> Matrix {
        self.zip_with(rhs, |a, b| a - b)
    }

    pub fn scale(&self, s: f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    fn zip_with(&self, rhs: &Matrix, f: impl Fn(f64, f64) -> f64) -> Matrix {
        assert_eq!(
            (self.rows, self.cols),
            (rhs.rows, rhs.cols),
            "elementwise shape mismatch"
        );
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&rhs.data)
                .map(|(a, b)| f(*a, *b))
                .collect(),
        }
    }

    pub fn trace(&self) -> f64 {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    /// Induced 1-norm (max absolute column sum).
    pub fn norm_one(&self) -> f64 {
        (0..self.cols)
            .map(|j| (0..self.rows).map(|i| self[(i, j)].abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    pub fn max_abs_diff(&self, rhs: &Matrix) -> f64 {
        self.data
            .iter()
            .zip(&rhs.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Determinant by LU with partial pivoting.
    pub fn determinant(&self) -> f64 {
        assert!(self.is_square(), "determinant of non-square matrix");
        let n = self.rows;
        let mut a = self.data.clone();
        let mut det = 1.0;
        for col in 0..n {
            let pivot = (col..n)
                .max_by(|&x, &y| a[x * n + col].abs().total_cmp(&a[y * n + col].abs()))
                .unwrap_or(col);
            if a[pivot * n + col] == 0.0 {
                return 0.0;
            }
            if pivot != col {
                for k in 0..n {
                    a.swap(col * n + k, pivot * n + k);
                }
                det = -det;
            }
            let p = a[col * n + col];
            det *= p;
            for r in col + 1..n {
                let factor = a[r * n + col] / p;
                for k in col..n {
                    a[r * n + k] -= factor * a[col * n + k];
                }
            }
        }
        det
    }

    /// Commutator `[A, B] = AB - BA`.
    pub fn commutator(&self, rhs: &Matrix) -> Matrix {
        self.matmul(rhs).sub(&rhs.matmul(self))
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;

    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

impl fmt::Display for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for i in 0..self.rows {
            let row: Vec<String> = (0..self.cols)
                .map(|j| format!("{:.6}", self[(i, j)]))
                .collect();
            writeln!(f, "[{}]", row.join(", "))?;
        }
        Ok(())
    }
}

fn require_square(a: &Matrix, what: &str) -> Result<()> {
    if !a.is_square() {
        return Err(Error::Dimension(format!(
            "{what} needs a square matrix, got {}x{}",
            a.rows, a.cols
        )));
    }
    if !a.is_finite() {
        return Err(Error::Numeric(format!("{what}: non-finite entries")));
    }
    Ok(())
}

/// Square root of the sum of squared entries.
pub fn frobenius_norm(a: &Matrix) -> f64 {
    a.data.iter().map(|v| v * v).sum::<f64>().sqrt()
}

// Scaled argument norm bound for the Taylor stage.
const EXP_SCALE_TARGET: f64 = 0.5;

/// Matrix exponential by scaling and squaring.
///
/// The argument is scaled by `2^-s` until its 1-norm is at most 0.5, the
/// Taylor degree is the smallest one whose remainder bound drops below
/// `f64::EPSILON / 4`, and the result is squared back `s` times. A zero
/// argument takes the degree-0 path and returns the identity exactly.
pub fn mat_exp(a: &Matrix) -> Result<Matrix> {
    require_square(a, "mat_exp")?;
    let n = a.rows;
    let norm = a.norm_one();
    let squarings = if norm > EXP_SCALE_TARGET {
        (norm / EXP_SCALE_TARGET).log2().ceil() as i32
    } else {
        0
    };
    let scaled = a.scale(0.5f64.powi(squarings));
    let snorm = scaled.norm_one();
    let degree = taylor_degree(snorm);

    // Horner: I + B(I + B/2(I + B/3(...)))
    let mut acc = Matrix::identity(n);
    for k in (1..=degree).rev() {
        acc = Matrix::identity(n).add(&scaled.matmul(&acc).scale(1.0 / k as f64));
    }
    for _ in 0..squarings {
        acc = acc.matmul(&acc);
    }
    if !acc.is_finite() {
        return Err(Error::Numeric("mat_exp overflowed".into()));
    }
    Ok(acc)
}

fn taylor_degree(norm: f64) -> usize {
    if norm == 0.0 {
        return 0;
    }
    let tol = f64::EPSILON / 4.0;
    let mut term = 1.0;
    for m in 1..=30 {
        term *= norm / m as f64;
        // remainder after degree m is bounded by term * norm/(m+1) / (1 - norm/(m+2))
        let rem = term * norm / (m + 1) as f64 / (1.0 - norm / (m + 2) as f64);
        if rem < tol {
            return m;
        }
    }
    30
}

const LOG_SQRT_LIMIT: usize = 60;
const LOG_NEAR_IDENTITY: f64 = 0.25;

/// Principal matrix logarithm by inverse scaling and squaring.
///
/// Fails with [`Error::Domain`] when the matrix is singular or when the
/// square-root iteration does not converge, which happens for eigenvalues
/// on the closed negative real axis.
pub fn mat_log(u: &Matrix) -> Result<Matrix> {
    require_square(u, "mat_log")?;
    let n = u.rows;
    let id = Matrix::identity(n);
    let scale = frobenius_norm(u).max(1.0);
    if u.determinant().abs() <= 1e-300 * scale.powi(n as i32) {
        return Err(Error::Domain(
            "mat_log: singular matrix (zero eigenvalue)".into(),
        ));
    }

    let mut x = u.clone();
    let mut roots = 0u32;
    while x.sub(&id).norm_one() > LOG_NEAR_IDENTITY {
        if roots as usize >= LOG_SQRT_LIMIT {
            return Err(Error::Domain(
                "mat_log: square roots failed to approach the identity".into(),
            ));
        }
        x = sqrtm_denman_beavers(&x)?;
        roots += 1;
    }

    // log X = 2 atanh(Z), Z = (X - I)(X + I)^-1
    let z = x.sub(&id).matmul(&mat_inverse(&x.add(&id))?);
    let z2 = z.matmul(&z);
    let mut power = z.clone();
    let mut sum = z.clone();
    let znorm = z.norm_one();
    for k in 1..200 {
        power = power.matmul(&z2);
        let term = power.scale(1.0 / (2 * k + 1) as f64);
        sum = sum.add(&term);
        if znorm.powi(2 * k as i32 + 1) / (2 * k + 1) as f64 <= f64::EPSILON * 1e-2 {
            break;
        }
    }
    let out = sum.scale(2.0 * 2f64.powi(roots as i32));
    if !out.is_finite() {
        return Err(Error::Numeric("mat_log produced non-finite values".into()));
    }
    Ok(out)
}

fn sqrtm_denman_beavers(a: &Matrix) -> Result<Matrix> {
    let n = a.rows;
    let mut y = a.clone();
    let mut z = Matrix::identity(n);
    for _ in 0..100 {
        let y_inv = mat_inverse(&y).map_err(|_| negative_axis())?;
        let z_inv = mat_inverse(&z).map_err(|_| negative_axis())?;
        let y_next = y.add(&z_inv).scale(0.5);
        let z_next = z.add(&y_inv).scale(0.5);
        let delta = y_next.sub(&y).norm_one();
        y = y_next;
        z = z_next;
        if !y.is_finite() {
            return Err(negative_axis());
        }
        if delta <= 1e-15 * y.norm_one().max(1.0) {
            return Ok(y);
        }
    }
    Err(negative_axis())
}

fn negative_axis() -> Error {
    Error::Domain(
        "mat_log: eigenvalue on the closed negative real axis (no real principal square root)"
            .into(),
    )
}

/// Inverse by Gauss–Jordan elimination with partial pivoting.
pub fn mat_inverse(u: &Matrix) -> Result<Matrix> {
    require_square(u, "mat_inverse")?;
    let n = u.rows;
    let mut a = u.data.clone();
    let mut inv = Matrix::identity(n).data;
    let scale = u.norm_one().max(f64::MIN_POSITIVE);
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&x, &y| a[x * n + col].abs().total_cmp(&a[y * n + col].abs()))
            .unwrap_or(col);
        let p = a[pivot * n + col];
        if p.abs() <= 1e-14 * scale {
            return Err(Error::Numeric("singular matrix".into()));
        }
        if pivot != col {
            for k in 0..n {
                a.swap(col * n + k, pivot * n + k);
                inv.swap(col * n + k, pivot * n + k);
            }
        }
        let p = a[col * n + col];
        for k in 0..n {
            a[col * n + k] /= p;
            inv[col * n + k] /= p;
        }
        for r in 0..n {
            if r == col {
                continue;
            }
            let factor = a[r * n + col];
            if factor == 0.0 {
                continue;
            }
            for k in 0..n {
                a[r * n + k] -= factor * a[col * n + k];
                inv[r * n + k] -= factor * inv[col * n + k];
            }
        }
    }
    Ok(Matrix {
        rows: n,
        cols: n,
        data: inv,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn j2() -> Matrix {
        Matrix::from_rows(&[&[0.0, -1.0], &[1.0, 0.0]])
    }

    fn random(n: usize, rng: &mut impl Rng, amp: f64) -> Matrix {
        let data = (0..n * n).map(|_| rng.random_range(-amp..amp)).collect();
        Matrix::new(n, n, data).unwrap()
    }

    fn series_exp(a: &Matrix, terms: usize) -> Matrix {
        let n = a.rows();
        let mut term = Matrix::identity(n);
        let mut sum = Matrix::identity(n);
        for k in 1..terms {
            term = term.matmul(a).scale(1.0 / k as f64);
            sum = sum.add(&term);
        }
        sum
    }

    #[test]
    fn exp_of_zero_is_identity_exactly() {
        let e = mat_exp(&Matrix::zeros(2, 2)).unwrap();
        assert_eq!(e, Matrix::identity(2));
    }

    #[test]
    fn exp_of_quarter_turn_generator() {
        let e = mat_exp(&j2().scale(FRAC_PI_2)).unwrap();
        assert!(e.max_abs_diff(&j2()) < 1e-14, "{e}");
    }

    #[test]
    fn exp_matches_long_series() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let a = random(3, &mut rng, 1.0);
            let reference = series_exp(&a, 200);
            let e = mat_exp(&a).unwrap();
            assert!(e.max_abs_diff(&reference) < 1e-12);
        }
    }

    #[test]
    fn exp_rejects_bad_input() {
        let rect = Matrix::zeros(2, 3);
        assert!(matches!(mat_exp(&rect), Err(Error::Dimension(_))));
        assert!(Matrix::new(1, 1, vec![f64::NAN]).is_err());
    }

    #[test]
    fn log_of_identity_is_zero() {
        let l = mat_log(&Matrix::identity(3)).unwrap();
        assert_eq!(frobenius_norm(&l), 0.0);
    }

    #[test]
    fn log_inverts_quarter_turn() {
        let l = mat_log(&j2()).unwrap();
        assert!(l.max_abs_diff(&j2().scale(FRAC_PI_2)) < 1e-12, "{l}");
    }

    #[test]
    fn log_round_trips_spd() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let b = random(3, &mut rng, 1.0);
            let spd = b.matmul(&b.transpose()).add(&Matrix::identity(3).scale(0.5));
            let back = mat_exp(&mat_log(&spd).unwrap()).unwrap();
            assert!(back.max_abs_diff(&spd) < 1e-10);
        }
    }

    #[test]
    fn log_domain_errors() {
        let half_turn = Matrix::from_rows(&[&[-1.0, 0.0], &[0.0, -1.0]]);
        assert!(matches!(mat_log(&half_turn), Err(Error::Domain(_))));
        let singular = Matrix::from_rows(&[&[1.0, 2.0], &[2.0, 4.0]]);
        assert!(matches!(mat_log(&singular), Err(Error::Domain(_))));
        let neg = Matrix::diag(&[-2.0, 1.0]);
        assert!(matches!(mat_log(&neg), Err(Error::Domain(_))));
    }

    #[test]
    fn frobenius_examples() {
        assert_eq!(frobenius_norm(&Matrix::zeros(3, 3)), 0.0);
        assert!((frobenius_norm(&Matrix::identity(3)) - 3f64.sqrt()).abs() < 1e-15);
        let theta: f64 = -0.7;
        let expected = theta.abs() * 2f64.sqrt();
        assert!((frobenius_norm(&j2().scale(theta)) - expected).abs() < 1e-15);
    }

    #[test]
    fn inverse_examples() {
        assert_eq!(mat_inverse(&Matrix::identity(3)).unwrap(), Matrix::identity(3));
        let t = 0.3f64;
        let r = Matrix::from_rows(&[&[t.cos(), -t.sin()], &[t.sin(), t.cos()]]);
        let rinv = Matrix::from_rows(&[&[t.cos(), t.sin()], &[-t.sin(), t.cos()]]);
        assert!(mat_inverse(&r).unwrap().max_abs_diff(&rinv) < 1e-15);

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let a = random(4, &mut rng, 1.0).add(&Matrix::identity(4).scale(2.0));
            let prod = a.matmul(&mat_inverse(&a).unwrap());
            assert!(prod.max_abs_diff(&Matrix::identity(4)) < 1e-10);
        }
        let singular = Matrix::from_rows(&[&[1.0, 2.0], &[2.0, 4.0]]);
        assert!(matches!(mat_inverse(&singular), Err(Error::Numeric(_))));
    }

    #[test]
    fn commuting_exponentials_multiply() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..10 {
            // polynomials in the same matrix commute
            let a = random(3, &mut rng, 0.5);
            let b = a.matmul(&a).scale(0.3).add(&a.scale(-0.7));
            assert!(a.commutator(&b).norm_one() < 1e-14);
            let lhs = mat_exp(&a.add(&b)).unwrap();
            let rhs = mat_exp(&a).unwrap().matmul(&mat_exp(&b).unwrap());
            assert!(lhs.max_abs_diff(&rhs) < 1e-10);
        }
        let theta = PI / 3.0;
        let both = mat_exp(&j2().scale(2.0 * theta)).unwrap();
        let once = mat_exp(&j2().scale(theta)).unwrap();
        assert!(both.max_abs_diff(&once.matmul(&once)) < 1e-14);
    }

    #[test]
    fn precision_parses() {
        assert_eq!("single".parse::<Precision>().unwrap(), Precision::Single);
        assert_eq!("f64".parse::<Precision>().unwrap(), Precision::Double);
        assert!("half".parse::<Precision>().is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn small_matrix() -> impl Strategy<Value = Matrix> {
            (1usize..=4).prop_flat_map(|n| {
                proptest::collection::vec(-1.0f64..1.0, n * n).prop_map(move |v| {
                    let m = Matrix::new(n, n, v).unwrap();
                    let norm = frobenius_norm(&m);
                    if norm > 2.0 {
                        m.scale(2.0 / norm)
                    } else {
                        m
                    }
                })
            })
        }

        fn rotation(n: usize, seed: u64) -> Matrix {
            // orthogonal factor from exp of a skew matrix
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random(n, &mut rng, 1.0);
            mat_exp(&a.sub(&a.transpose())).unwrap()
        }

        proptest! {
            #[test]
            fn log_exp_round_trip(a in small_matrix()) {
                // ||A||_F <= 2 keeps every eigenvalue strip inside (-pi, pi)
                let back = mat_log(&mat_exp(&a).unwrap()).unwrap();
                prop_assert!(frobenius_norm(&back.sub(&a)) < 1e-9);
            }

            #[test]
            fn frobenius_orthogonal_invariance(a in small_matrix(), s1 in 0u64..1000, s2 in 0u64..1000) {
                let n = a.rows();
                let p = rotation(n, s1);
                let q = rotation(n, s2);
                let rotated = p.matmul(&a).matmul(&q.transpose());
                prop_assert!((frobenius_norm(&rotated) - frobenius_norm(&a)).abs() < 1e-12);
            }
        }
    }
}
