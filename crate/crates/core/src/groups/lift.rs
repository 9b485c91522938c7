//! Lifting points of the input space to group elements and orbits.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{GroupElement, GroupId, LiftMultiplicity};
use crate::error::{Error, Result};
use crate::matlie::Matrix;

/// One input point: coordinates `x` and feature channels `f`.
#[derive(Debug, Clone, PartialEq)]
pub struct Point {
    pub x: Vec<f64>,
    pub f: Vec<f64>,
}

impl Point {
    pub fn new(x: Vec<f64>, f: Vec<f64>) -> Self {
        Self { x, f }
    }
}

/// Group-invariant coordinates of the orbit a point lies on.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct OrbitId {
    pub embed: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LiftedSample {
    pub u: GroupElement,
    pub q: OrbitId,
    pub f: Vec<f64>,
    pub source_index: usize,
    pub mask: bool,
}

fn check_dim(x: &[f64], group: GroupId) -> Result<()> {
    if x.len() != group.ambient_dim() {
        return Err(Error::Dimension(format!(
            "{group} acts on R^{}, got a point of length {}",
            group.ambient_dim(),
            x.len()
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite point coordinate".into()));
    }
    Ok(())
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub fn orbit_embed(x: &[f64], group: GroupId) -> Result<OrbitId> {
    check_dim(x, group)?;
    let embed = match group {
        GroupId::Trivial { .. } => x.to_vec(),
        GroupId::Translation { k, ambient } => x[..ambient - k].to_vec(),
        GroupId::SO2 | GroupId::SO3 => vec![norm(x)],
        GroupId::SE2 | GroupId::SE3 | GroupId::RxSO2 | GroupId::RxSQ => vec![],
    };
    Ok(OrbitId { embed })
}

/// The representative point `o_q` of an orbit.
pub fn orbit_origin(group: GroupId, q: &OrbitId) -> Vec<f64> {
    let d = group.ambient_dim();
    match group {
        GroupId::Trivial { .. } => q.embed.clone(),
        GroupId::Translation { k, .. } => {
            let mut o = q.embed.clone();
            o.resize(o.len() + k, 0.0);
            o
        }
        GroupId::SO2 | GroupId::SO3 => {
            let mut o = vec![0.0; d];
            o[0] = q.embed.first().copied().unwrap_or(0.0);
            o
        }
        GroupId::SE2 | GroupId::SE3 => vec![0.0; d],
        GroupId::RxSO2 => vec![1.0, 0.0],
        GroupId::RxSQ => vec![1.0, 1.0],
    }
}

/// Rotation taking `e1` to the unit vector `n`.
fn rotation_from_e1(n: [f64; 3]) -> Matrix {
    // axis e1 x n = (0, -n_z, n_y), sin = |axis|, cos = n_x
    let axis = [0.0, -n[2], n[1]];
    let s = (axis[1] * axis[1] + axis[2] * axis[2]).sqrt();
    let c = n[0];
    if s < 1e-15 {
        return if c > 0.0 {
            Matrix::identity(3)
        } else {
            Matrix::diag(&[-1.0, -1.0, 1.0])
        };
    }
    let k = [axis[0] / s, axis[1] / s, axis[2] / s];
    let kk = Matrix::from_rows(&[&[0.0, -k[2], k[1]], &[k[2], 0.0, -k[0]], &[-k[1], k[0], 0.0]]);
    Matrix::identity(3)
        .add(&kk.scale(s))
        .add(&kk.matmul(&kk).scale(1.0 - c))
}

/// One element `u_x` with `u_x . o_q = x`.
pub fn base_element(group: GroupId, x: &[f64]) -> Result<GroupElement> {
    check_dim(x, group)?;
    let mat = match group {
        GroupId::Trivial { .. } => Matrix::identity(1),
        GroupId::Translation { k, ambient } => {
            let mut m = Matrix::identity(k + 1);
            for i in 0..k {
                m[(i, k)] = x[ambient - k + i];
            }
            m
        }
        GroupId::SO2 => {
            let r = norm(x);
            if r == 0.0 {
                Matrix::identity(2)
            } else {
                Matrix::from_rows(&[&[x[0] / r, -x[1] / r], &[x[1] / r, x[0] / r]])
            }
        }
        GroupId::SO3 => {
            let r = norm(x);
            if r == 0.0 {
                Matrix::identity(3)
            } else {
                rotation_from_e1([x[0] / r, x[1] / r, x[2] / r])
            }
        }
        GroupId::SE2 | GroupId::SE3 => {
            let d = x.len();
            let mut m = Matrix::identity(d + 1);
            for (i, v) in x.iter().enumerate() {
                m[(i, d)] = *v;
            }
            m
        }
        GroupId::RxSO2 => {
            if norm(x) == 0.0 {
                return Err(Error::Domain(
                    "the origin lies on no orbit of R*xSO(2)".into(),
                ));
            }
            Matrix::from_rows(&[&[x[0], -x[1]], &[x[1], x[0]]])
        }
        GroupId::RxSQ => {
            if !(x[0] > 0.0 && x[1] > 0.0) {
                return Err(Error::Domain(format!(
                    "R*xSQ acts on the open positive quadrant, got ({}, {})",
                    x[0], x[1]
                )));
            }
            Matrix::diag(&[x[0], x[1]])
        }
    };
    GroupElement::from_matrix(group, mat)
}

/// Haar-uniform rotation of R^3 from a uniform unit quaternion.
pub fn random_rotation3<R: Rng + ?Sized>(rng: &mut R) -> Matrix {
    let mut q = [0.0f64; 4];
    let mut n = 0.0;
    while n < 1e-12 {
        for v in q.iter_mut() {
            *v = StandardNormal.sample(rng);
        }
        n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    }
    let [w, x, y, z] = q.map(|v| v / n);
    Matrix::from_rows(&[
        &[1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
        &[2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
        &[2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
    ])
}

fn embed_rotation(group: GroupId, r: &Matrix) -> GroupElement {
    let mut m = Matrix::identity(group.matrix_size());
    for i in 0..r.rows() {
        for j in 0..r.cols() {
            m[(i, j)] = r[(i, j)];
        }
    }
    GroupElement::from_matrix(group, m).expect("rotation block is orthonormal")
}

fn planar_rotation(theta: f64) -> Matrix {
    let (s, c) = theta.sin_cos();
    Matrix::from_rows(&[&[c, -s], &[s, c]])
}

/// `count` Haar-uniform samples from the stabilizer of the orbit's origin.
/// Groups with trivial stabilizer return identities.
pub fn stabilizer_sample<R: Rng + ?Sized>(
    group: GroupId,
    orbit: &OrbitId,
    count: usize,
    rng: &mut R,
) -> Vec<GroupElement> {
    (0..count)
        .map(|_| match group {
            GroupId::SE2 => embed_rotation(group, &planar_rotation(rng.random_range(0.0..2.0 * PI))),
            GroupId::SE3 => embed_rotation(group, &random_rotation3(rng)),
            GroupId::SO3 if orbit.embed.first().copied().unwrap_or(0.0) == 0.0 => {
                embed_rotation(group, &random_rotation3(rng))
            }
            GroupId::SO3 => {
                // rotations about e1 fix r e1
                let (s, c) = rng.random_range(0.0..2.0 * PI).sin_cos();
                let r = Matrix::from_rows(&[&[1.0, 0.0, 0.0], &[0.0, c, -s], &[0.0, s, c]]);
                embed_rotation(group, &r)
            }
            _ => GroupElement::identity(group),
        })
        .collect()
}

/// Lifts each point to `k` group elements `u_x h_j` with `h_j` uniform on
/// the stabilizer. Output is point-major: samples `i*k .. (i+1)*k` come
/// from point `i`.
pub fn lift<R: Rng + ?Sized>(
    points: &[Point],
    group: GroupId,
    k: usize,
    rng: &mut R,
) -> Result<Vec<LiftedSample>> {
    if k == 0 {
        return Err(Error::Config("lifts per point must be at least 1".into()));
    }
    if k > 1 && group.multiplicity() == LiftMultiplicity::OneToOne {
        return Err(Error::Config(format!(
            "{group} lifts one-to-one; lifts per point must be 1, got {k}"
        )));
    }
    let mut out = Vec::with_capacity(points.len() * k);
    for (i, p) in points.iter().enumerate() {
        let q = orbit_embed(&p.x, group)?;
        let ux = base_element(group, &p.x)?;
        for h in stabilizer_sample(group, &q, k, rng) {
            out.push(LiftedSample {
                u: ux.compose(&h)?,
                q: q.clone(),
                f: p.f.clone(),
                source_index: i,
                mask: true,
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    fn pt(x: &[f64]) -> Point {
        Point::new(x.to_vec(), vec![1.0])
    }

    fn reproduces(s: &LiftedSample, group: GroupId, x: &[f64]) -> f64 {
        let y = s.u.act(&orbit_origin(group, &s.q)).unwrap();
        y.iter().zip(x).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn translation_lift() {
        let mut rng = stream(0, "t");
        let s = lift(&[pt(&[3.0, -1.0])], GroupId::T2, 1, &mut rng).unwrap();
        assert_eq!(s.len(), 1);
        assert!(s[0].q.embed.is_empty());
        let m = s[0].u.matrix();
        assert_eq!((m[(0, 2)], m[(1, 2)]), (3.0, -1.0));
    }

    #[test]
    fn so2_lift_of_point_on_y_axis() {
        let mut rng = stream(0, "so2");
        let s = lift(&[pt(&[0.0, 2.0])], GroupId::SO2, 1, &mut rng).unwrap();
        assert_eq!(s[0].q.embed, vec![2.0]);
        let expect = planar_rotation(PI / 2.0);
        assert!(s[0].u.matrix().max_abs_diff(&expect) < 1e-15);
    }

    #[test]
    fn se2_lifts_cover_stabilizer() {
        let mut rng = stream(1, "se2");
        let s = lift(&[pt(&[1.0, 0.0])], GroupId::SE2, 4, &mut rng).unwrap();
        assert_eq!(s.len(), 4);
        for x in &s {
            assert!(reproduces(x, GroupId::SE2, &[1.0, 0.0]) < 1e-12);
            assert_eq!(x.source_index, 0);
        }
        let a0 = s[0].u.matrix()[(1, 0)];
        assert!(s.iter().any(|x| (x.u.matrix()[(1, 0)] - a0).abs() > 1e-6));
    }

    #[test]
    fn orbit_embeddings() {
        assert_eq!(orbit_embed(&[3.0, 4.0], GroupId::SO2).unwrap().embed, vec![5.0]);
        assert_eq!(orbit_embed(&[3.0, 4.0], GroupId::T1).unwrap().embed, vec![3.0]);
        assert_eq!(orbit_embed(&[3.0, 4.0], GroupId::TRIVIAL2).unwrap().embed, vec![3.0, 4.0]);
        assert!(orbit_embed(&[3.0, 4.0], GroupId::SE2).unwrap().embed.is_empty());
    }

    #[test]
    fn domain_errors() {
        let mut rng = stream(0, "dom");
        assert!(matches!(
            lift(&[pt(&[0.0, 0.0])], GroupId::RxSO2, 1, &mut rng),
            Err(Error::Domain(_))
        ));
        assert!(matches!(
            lift(&[pt(&[1.0, -0.5])], GroupId::RxSQ, 1, &mut rng),
            Err(Error::Domain(_))
        ));
        assert!(matches!(lift(&[pt(&[1.0, 1.0])], GroupId::T2, 2, &mut rng), Err(Error::Config(_))));
        assert!(matches!(lift(&[pt(&[1.0])], GroupId::T2, 1, &mut rng), Err(Error::Dimension(_))));
    }

    #[test]
    fn degenerate_rotation_orbit() {
        let mut rng = stream(0, "deg");
        let s = lift(&[pt(&[0.0, 0.0])], GroupId::SO2, 1, &mut rng).unwrap();
        assert_eq!(s[0].u, GroupElement::identity(GroupId::SO2));
        let s = lift(&[pt(&[0.0, 0.0, 0.0])], GroupId::SO3, 3, &mut rng).unwrap();
        assert!(s.iter().all(|x| x.q.embed == vec![0.0] && reproduces(x, GroupId::SO3, &[0.0; 3]) == 0.0));
    }

    #[test]
    fn rotation_from_e1_handles_antipode() {
        for n in [[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0], [0.0, 0.6, 0.8]] {
            let r = rotation_from_e1(n);
            let y = r.matvec(&[1.0, 0.0, 0.0]);
            assert!(y.iter().zip(n).all(|(a, b)| (a - b).abs() < 1e-15));
            assert!((r.determinant() - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn trivial_stabilizers_return_identity() {
        let mut rng = stream(0, "stab");
        let hs = stabilizer_sample(GroupId::T2, &OrbitId::default(), 5, &mut rng);
        assert_eq!(hs.len(), 5);
        assert!(hs.iter().all(|h| *h == GroupElement::identity(GroupId::T2)));
    }
}
