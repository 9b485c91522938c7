use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{wrap_angle, GroupId, LieAlgebraVector};
use crate::error::{Error, Result};
use crate::matlie::{mat_inverse, Matrix};

/// Where the logarithm landed relative to the principal branch cut.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BranchCut {
    Interior,
    /// Rotation angle at pi: the branch is ambiguous and one consistent
    /// choice was made (positive first nonzero axis component for SO(3)).
    Boundary,
}

const VALID_TOL: f64 = 1e-8;
const REPROJECT_TOL: f64 = 1e-10;

/// Matrix representative of an element of a [`GroupId`].
#[derive(Debug, Clone, PartialEq)]
pub struct GroupElement {
    group: GroupId,
    mat: Matrix,
}

type M3 = [[f64; 3]; 3];

fn skew3(w: [f64; 3]) -> M3 {
    [[0.0, -w[2], w[1]], [w[2], 0.0, -w[0]], [-w[1], w[0], 0.0]]
}

fn m3_mul(a: &M3, b: &M3) -> M3 {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

fn m3_lincomb(a: f64, x: &M3, b: f64, y: &M3, c: f64) -> M3 {
    // a*x + b*y + c*I
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = a * x[i][j] + b * y[i][j] + if i == j { c } else { 0.0 };
        }
    }
    out
}

fn m3_vec(a: &M3, v: [f64; 3]) -> [f64; 3] {
    [0, 1, 2].map(|i| a[i][0] * v[0] + a[i][1] * v[1] + a[i][2] * v[2])
}

/// sin(t)/t, (1-cos t)/t^2 and (t - sin t)/t^3 with series near zero.
fn rodrigues_coeffs(t: f64) -> (f64, f64, f64) {
    let t2 = t * t;
    if t < 1e-4 {
        (
            1.0 - t2 / 6.0 + t2 * t2 / 120.0,
            0.5 - t2 / 24.0 + t2 * t2 / 720.0,
            1.0 / 6.0 - t2 / 120.0 + t2 * t2 / 5040.0,
        )
    } else {
        (t.sin() / t, (1.0 - t.cos()) / t2, (t - t.sin()) / (t2 * t))
    }
}

fn so3_exp(w: [f64; 3]) -> M3 {
    let t = (w[0] * w[0] + w[1] * w[1] + w[2] * w[2]).sqrt();
    let (a, b, _) = rodrigues_coeffs(t);
    let k = skew3(w);
    m3_lincomb(a, &k, b, &m3_mul(&k, &k), 1.0)
}

fn so3_log(r: &M3) -> ([f64; 3], BranchCut) {
    let v = [r[2][1] - r[1][2], r[0][2] - r[2][0], r[1][0] - r[0][1]];
    let vn = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    let c = 0.5 * (r[0][0] + r[1][1] + r[2][2] - 1.0);
    let theta = (0.5 * vn).atan2(c);
    if theta < 1e-5 {
        let s = 0.5 * (1.0 + theta * theta / 6.0);
        return (v.map(|x| x * s), BranchCut::Interior);
    }
    if PI - theta > 0.1 {
        let s = theta / (2.0 * theta.sin());
        return (v.map(|x| x * s), BranchCut::Interior);
    }
    // near pi: axis from the symmetric part, (R + R^T)/2 = c I + (1 - c) n n^T
    let mut m = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            m[i][j] = (0.5 * (r[i][j] + r[j][i]) - if i == j { c } else { 0.0 }) / (1.0 - c);
        }
    }
    let k = (0..3)
        .max_by(|&a, &b| m[a][a].total_cmp(&m[b][b]))
        .unwrap_or(0);
    let d = m[k][k].max(0.0).sqrt();
    let mut n = [m[0][k] / d, m[1][k] / d, m[2][k] / d];
    let nn = (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt();
    n = n.map(|x| x / nn);
    let dot = n[0] * v[0] + n[1] * v[1] + n[2] * v[2];
    let boundary = vn < 1e-12;
    if boundary {
        let first = n.iter().copied().find(|x| x.abs() > 1e-12).unwrap_or(1.0);
        if first < 0.0 {
            n = n.map(|x| -x);
        }
    } else if dot < 0.0 {
        n = n.map(|x| -x);
    }
    let branch = if boundary { BranchCut::Boundary } else { BranchCut::Interior };
    (n.map(|x| x * theta), branch)
}

/// V^-1 for SE(3) at rotation vector w.
fn se3_v_inv(w: [f64; 3]) -> M3 {
    let t = (w[0] * w[0] + w[1] * w[1] + w[2] * w[2]).sqrt();
    let d = if t < 1e-4 {
        let t2 = t * t;
        1.0 / 12.0 + t2 / 720.0 + t2 * t2 / 30240.0
    } else {
        let (a, b, _) = rodrigues_coeffs(t);
        (1.0 - a / (2.0 * b)) / (t * t)
    };
    let k = skew3(w);
    m3_lincomb(-0.5, &k, d, &m3_mul(&k, &k), 1.0)
}

/// (sin t)/t and (1 - cos t)/t for the SE(2) V matrix.
fn se2_coeffs(t: f64) -> (f64, f64) {
    if t.abs() < 1e-4 {
        let t2 = t * t;
        (1.0 - t2 / 6.0 + t2 * t2 / 120.0, t / 2.0 - t * t2 / 24.0 + t * t2 * t2 / 720.0)
    } else {
        (t.sin() / t, (1.0 - t.cos()) / t)
    }
}

fn rot_block(mat: &Matrix, n: usize) -> M3 {
    let mut r = [[0.0; 3]; 3];
    for (i, row) in r.iter_mut().enumerate().take(n) {
        for (j, x) in row.iter_mut().enumerate().take(n) {
            *x = mat[(i, j)];
        }
    }
    r
}

fn angle_branch(theta: f64) -> BranchCut {
    if (theta - PI).abs() < 1e-12 {
        BranchCut::Boundary
    } else {
        BranchCut::Interior
    }
}

/// Max deviation of the top-left `n x n` block from orthonormality with
/// determinant +1.
fn rotation_violation(mat: &Matrix, n: usize) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..n {
        for j in 0..n {
            let dot: f64 = (0..n).map(|k| mat[(k, i)] * mat[(k, j)]).sum();
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((dot - target).abs());
        }
    }
    let det = if n == 2 {
        mat[(0, 0)] * mat[(1, 1)] - mat[(0, 1)] * mat[(1, 0)]
    } else {
        let r = rot_block(mat, 3);
        r[0][0] * (r[1][1] * r[2][2] - r[1][2] * r[2][1])
            - r[0][1] * (r[1][0] * r[2][2] - r[1][2] * r[2][0])
            + r[0][2] * (r[1][0] * r[2][1] - r[1][1] * r[2][0])
    };
    worst.max((det - 1.0).abs())
}

fn last_row_violation(mat: &Matrix) -> f64 {
    let n = mat.rows();
    (0..n)
        .map(|j| (mat[(n - 1, j)] - if j == n - 1 { 1.0 } else { 0.0 }).abs())
        .fold(0.0, f64::max)
}

/// Nearest rotation to a slightly drifted block via Newton polar iteration.
fn orthonormalize3(r: M3) -> M3 {
    let mut x = r;
    for _ in 0..4 {
        let m = Matrix::from_rows(&[&x[0], &x[1], &x[2]]);
        let Ok(inv) = mat_inverse(&m) else { break };
        for i in 0..3 {
            for j in 0..3 {
                x[i][j] = 0.5 * (x[i][j] + inv[(j, i)]);
            }
        }
    }
    x
}

impl GroupElement {
    /// Wraps a matrix, checking the group's defining constraints to 1e-8.
    pub fn from_matrix(group: GroupId, mat: Matrix) -> Result<Self> {
        let n = group.matrix_size();
        if mat.rows() != n || mat.cols() != n {
            return Err(Error::Dimension(format!(
                "{group} elements are {n}x{n}, got {}x{}",
                mat.rows(),
                mat.cols()
            )));
        }
        let e = Self { group, mat };
        let v = e.constraint_violation();
        if !(v <= VALID_TOL) {
            return Err(Error::Domain(format!(
                "matrix violates {group} constraints by {v:.3e}"
            )));
        }
        Ok(e)
    }

    pub fn identity(group: GroupId) -> Self {
        Self {
            group,
            mat: Matrix::identity(group.matrix_size()),
        }
    }

    pub fn group(&self) -> GroupId {
        self.group
    }

    pub fn matrix(&self) -> &Matrix {
        &self.mat
    }

    /// Closed-form exponential.
    pub fn exp(a: &LieAlgebraVector) -> Self {
        let group = a.group();
        let c = a.coords();
        let mat = match group {
            GroupId::Trivial { .. } => Matrix::identity(1),
            GroupId::Translation { k, .. } => {
                let mut m = Matrix::identity(k + 1);
                for (i, t) in c.iter().enumerate() {
                    m[(i, k)] = *t;
                }
                m
            }
            GroupId::SO2 => {
                let (s, co) = c[0].sin_cos();
                Matrix::from_rows(&[&[co, -s], &[s, co]])
            }
            GroupId::RxSO2 => {
                let r = c[0].exp();
                let (s, co) = c[1].sin_cos();
                Matrix::from_rows(&[&[r * co, -r * s], &[r * s, r * co]])
            }
            GroupId::RxSQ => Matrix::diag(&[(c[0] + c[1]).exp(), (c[0] - c[1]).exp()]),
            GroupId::SO3 => {
                let r = so3_exp([c[0], c[1], c[2]]);
                Matrix::from_rows(&[&r[0], &r[1], &r[2]])
            }
            GroupId::SE2 => {
                let th = c[0];
                let (s, co) = th.sin_cos();
                let (a, b) = se2_coeffs(th);
                let tx = a * c[1] - b * c[2];
                let ty = b * c[1] + a * c[2];
                Matrix::from_rows(&[&[co, -s, tx], &[s, co, ty], &[0.0, 0.0, 1.0]])
            }
            GroupId::SE3 => {
                let w = [c[0], c[1], c[2]];
                let th = (w[0] * w[0] + w[1] * w[1] + w[2] * w[2]).sqrt();
                let (a, b, cc) = rodrigues_coeffs(th);
                let k = skew3(w);
                let k2 = m3_mul(&k, &k);
                let r = m3_lincomb(a, &k, b, &k2, 1.0);
                let v = m3_lincomb(b, &k, cc, &k2, 1.0);
                let t = m3_vec(&v, [c[3], c[4], c[5]]);
                let mut m = Matrix::identity(4);
                for i in 0..3 {
                    for j in 0..3 {
                        m[(i, j)] = r[i][j];
                    }
                    m[(i, 3)] = t[i];
                }
                m
            }
        };
        Self { group, mat }
    }

    /// Principal logarithm; rotation angles land in `(-pi, pi]`.
    pub fn log(&self) -> LieAlgebraVector {
        self.log_with_branch().0
    }

    pub fn log_with_branch(&self) -> (LieAlgebraVector, BranchCut) {
        let m = &self.mat;
        let (coords, branch) = match self.group {
            GroupId::Trivial { .. } => (vec![], BranchCut::Interior),
            GroupId::Translation { k, .. } => ((0..k).map(|i| m[(i, k)]).collect(), BranchCut::Interior),
            GroupId::SO2 => {
                let th = wrap_angle(m[(1, 0)].atan2(m[(0, 0)]));
                (vec![th], angle_branch(th))
            }
            GroupId::RxSO2 => {
                let r = m[(0, 0)].hypot(m[(1, 0)]);
                let th = wrap_angle(m[(1, 0)].atan2(m[(0, 0)]));
                (vec![r.ln(), th], angle_branch(th))
            }
            GroupId::RxSQ => {
                let (la, lb) = (m[(0, 0)].ln(), m[(1, 1)].ln());
                (vec![0.5 * (la + lb), 0.5 * (la - lb)], BranchCut::Interior)
            }
            GroupId::SO3 => {
                let (w, br) = so3_log(&rot_block(m, 3));
                (w.to_vec(), br)
            }
            GroupId::SE2 => {
                let th = wrap_angle(m[(1, 0)].atan2(m[(0, 0)]));
                let (a, b) = se2_coeffs(th);
                let det = a * a + b * b;
                let (tx, ty) = (m[(0, 2)], m[(1, 2)]);
                let vx = (a * tx + b * ty) / det;
                let vy = (-b * tx + a * ty) / det;
                (vec![th, vx, vy], angle_branch(th))
            }
            GroupId::SE3 => {
                let (w, br) = so3_log(&rot_block(m, 3));
                let vinv = se3_v_inv(w);
                let v = m3_vec(&vinv, [m[(0, 3)], m[(1, 3)], m[(2, 3)]]);
                (vec![w[0], w[1], w[2], v[0], v[1], v[2]], br)
            }
        };
        (
            LieAlgebraVector::new(self.group, coords).unwrap_or_else(|_| {
                LieAlgebraVector::zero(self.group) // unreachable for valid elements
            }),
            branch,
        )
    }

    pub fn compose(&self, other: &GroupElement) -> Result<GroupElement> {
        if self.group != other.group {
            return Err(Error::GroupMismatch {
                left: self.group.to_string(),
                right: other.group.to_string(),
            });
        }
        let out = Self {
            group: self.group,
            mat: self.mat.matmul(&other.mat),
        };
        if out.constraint_violation() > REPROJECT_TOL {
            Ok(out.project())
        } else {
            Ok(out)
        }
    }

    /// Closed-form inverse.
    pub fn inverse(&self) -> GroupElement {
        let m = &self.mat;
        let mat = match self.group {
            GroupId::Trivial { .. } => m.clone(),
            GroupId::Translation { k, .. } => {
                let mut out = m.clone();
                for i in 0..k {
                    out[(i, k)] = -m[(i, k)];
                }
                out
            }
            GroupId::SO2 | GroupId::SO3 => m.transpose(),
            GroupId::RxSO2 => m.transpose().scale(1.0 / m.determinant()),
            GroupId::RxSQ => Matrix::diag(&[1.0 / m[(0, 0)], 1.0 / m[(1, 1)]]),
            GroupId::SE2 | GroupId::SE3 => {
                let n = m.rows() - 1;
                let mut out = Matrix::identity(n + 1);
                for i in 0..n {
                    for j in 0..n {
                        out[(i, j)] = m[(j, i)];
                    }
                }
                for i in 0..n {
                    out[(i, n)] = -(0..n).map(|j| m[(j, i)] * m[(j, n)]).sum::<f64>();
                }
                out
            }
        };
        Self { group: self.group, mat }
    }

    /// `exp(-log u)`, the inverse as computed through the algebra.
    pub fn inverse_via_log(&self) -> GroupElement {
        Self::exp(&self.log().neg())
    }

    /// Acts on a point of the group's input space.
    pub fn act(&self, x: &[f64]) -> Result<Vec<f64>> {
        let d = self.group.ambient_dim();
        if x.len() != d {
            return Err(Error::Dimension(format!(
                "{} acts on R^{d}, got a point of length {}",
                self.group,
                x.len()
            )));
        }
        let m = &self.mat;
        Ok(match self.group {
            GroupId::Trivial { .. } => x.to_vec(),
            GroupId::Translation { k, ambient } => {
                let mut y = x.to_vec();
                for i in 0..k {
                    y[ambient - k + i] += m[(i, k)];
                }
                y
            }
            GroupId::SO2 | GroupId::SO3 | GroupId::RxSO2 | GroupId::RxSQ => m.matvec(x),
            GroupId::SE2 | GroupId::SE3 => (0..d)
                .map(|i| (0..d).map(|j| m[(i, j)] * x[j]).sum::<f64>() + m[(i, d)])
                .collect(),
        })
    }

    /// Largest deviation from the group's defining constraints.
    pub fn constraint_violation(&self) -> f64 {
        let m = &self.mat;
        if !m.is_finite() {
            return f64::INFINITY;
        }
        match self.group {
            GroupId::Trivial { .. } => (m[(0, 0)] - 1.0).abs(),
            GroupId::Translation { k, .. } => {
                let mut worst: f64 = 0.0;
                for i in 0..=k {
                    for j in 0..k {
                        worst = worst.max((m[(i, j)] - if i == j { 1.0 } else { 0.0 }).abs());
                    }
                }
                worst.max((m[(k, k)] - 1.0).abs())
            }
            GroupId::SO2 => rotation_violation(m, 2),
            GroupId::SO3 => rotation_violation(m, 3),
            GroupId::SE2 => rotation_violation(m, 2).max(last_row_violation(m)),
            GroupId::SE3 => rotation_violation(m, 3).max(last_row_violation(m)),
            GroupId::RxSO2 => {
                let r = m[(0, 0)].hypot(m[(1, 0)]);
                if r <= 0.0 {
                    return f64::INFINITY;
                }
                ((m[(0, 0)] - m[(1, 1)]).abs() + (m[(0, 1)] + m[(1, 0)]).abs()) / r.max(1.0)
            }
            GroupId::RxSQ => {
                if m[(0, 0)] <= 0.0 || m[(1, 1)] <= 0.0 {
                    return f64::INFINITY;
                }
                m[(0, 1)].abs().max(m[(1, 0)].abs())
            }
        }
    }

    /// Snaps a drifted matrix back onto the group.
    pub fn project(&self) -> GroupElement {
        let m = &self.mat;
        let mat = match self.group {
            GroupId::Trivial { .. } => Matrix::identity(1),
            GroupId::Translation { k, .. } => {
                let mut out = Matrix::identity(k + 1);
                for i in 0..k {
                    out[(i, k)] = m[(i, k)];
                }
                out
            }
            GroupId::SO2 | GroupId::SE2 => {
                let th = m[(1, 0)].atan2(m[(0, 0)]);
                let (s, c) = th.sin_cos();
                let mut out = Matrix::identity(m.rows());
                out[(0, 0)] = c;
                out[(0, 1)] = -s;
                out[(1, 0)] = s;
                out[(1, 1)] = c;
                if self.group == GroupId::SE2 {
                    out[(0, 2)] = m[(0, 2)];
                    out[(1, 2)] = m[(1, 2)];
                }
                out
            }
            GroupId::SO3 | GroupId::SE3 => {
                let r = orthonormalize3(rot_block(m, 3));
                let mut out = Matrix::identity(m.rows());
                for i in 0..3 {
                    for j in 0..3 {
                        out[(i, j)] = r[i][j];
                    }
                    if self.group == GroupId::SE3 {
                        out[(i, 3)] = m[(i, 3)];
                    }
                }
                out
            }
            GroupId::RxSO2 => {
                let a = 0.5 * (m[(0, 0)] + m[(1, 1)]);
                let b = 0.5 * (m[(1, 0)] - m[(0, 1)]);
                Matrix::from_rows(&[&[a, -b], &[b, a]])
            }
            GroupId::RxSQ => Matrix::diag(&[m[(0, 0)], m[(1, 1)]]),
        };
        Self { group: self.group, mat }
    }

    /// A random element drawn directly from a parameterization (uniform
    /// quaternions for rotations, Gaussian translations with std `scale`,
    /// log-scales uniform on `[-1, 1]`), never through `exp`.
    pub fn random<R: Rng + ?Sized>(group: GroupId, scale: f64, rng: &mut R) -> Self {
        let gauss = |rng: &mut R| -> f64 { StandardNormal.sample(rng) };
        let mat = match group {
            GroupId::Trivial { .. } => Matrix::identity(1),
            GroupId::Translation { k, .. } => {
                let mut m = Matrix::identity(k + 1);
                for i in 0..k {
                    m[(i, k)] = scale * gauss(rng);
                }
                m
            }
            GroupId::SO2 | GroupId::SE2 => {
                let th: f64 = rng.random_range(0.0..2.0 * PI);
                let (s, c) = th.sin_cos();
                let mut m = Matrix::identity(group.matrix_size());
                m[(0, 0)] = c;
                m[(0, 1)] = -s;
                m[(1, 0)] = s;
                m[(1, 1)] = c;
                if group == GroupId::SE2 {
                    m[(0, 2)] = scale * gauss(rng);
                    m[(1, 2)] = scale * gauss(rng);
                }
                m
            }
            GroupId::SO3 | GroupId::SE3 => {
                let r = super::random_rotation3(rng);
                let mut m = Matrix::identity(group.matrix_size());
                for i in 0..3 {
                    for j in 0..3 {
                        m[(i, j)] = r[(i, j)];
                    }
                    if group == GroupId::SE3 {
                        m[(i, 3)] = scale * gauss(rng);
                    }
                }
                m
            }
            GroupId::RxSO2 => {
                let r = rng.random_range(-1.0f64..1.0).exp();
                let th: f64 = rng.random_range(0.0..2.0 * PI);
                let (s, c) = th.sin_cos();
                Matrix::from_rows(&[&[r * c, -r * s], &[r * s, r * c]])
            }
            GroupId::RxSQ => {
                let a: f64 = rng.random_range(-1.0..1.0);
                let b: f64 = rng.random_range(-1.0..1.0);
                Matrix::diag(&[(a + b).exp(), (a - b).exp()])
            }
        };
        Self { group, mat }
    }
}

impl LieAlgebraVector {
    /// Random coordinates with every rotation angle of magnitude at most
    /// `max_angle`; other coordinates standard normal times `scale`.
    pub fn random<R: Rng + ?Sized>(group: GroupId, max_angle: f64, scale: f64, rng: &mut R) -> Self {
        let gauss = |rng: &mut R| -> f64 { StandardNormal.sample(rng) };
        let mut coords: Vec<f64> = (0..group.algebra_dim()).map(|_| scale * gauss(rng)).collect();
        match group {
            GroupId::SO3 | GroupId::SE3 => {
                let axis: [f64; 3] = [gauss(rng), gauss(rng), gauss(rng)];
                let n = (axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]).sqrt();
                let th = rng.random_range(0.0..max_angle);
                for i in 0..3 {
                    coords[i] = th * axis[i] / n;
                }
            }
            _ => {
                for &i in group.angle_coords() {
                    coords[i] = rng.random_range(-max_angle..max_angle);
                }
                if matches!(group, GroupId::RxSO2 | GroupId::RxSQ) {
                    coords[0] = rng.random_range(-1.0..1.0);
                }
                if group == GroupId::RxSQ {
                    coords[1] = rng.random_range(-1.0..1.0);
                }
            }
        }
        LieAlgebraVector { group, coords }
    }
}
