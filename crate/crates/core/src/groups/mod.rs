//! Matrix Lie groups with closed-form exponential and logarithm maps.
//!
//! Every group here has a surjective exponential, so each element has a
//! principal logarithm. Algebra coordinates are taken in a fixed basis per
//! group (see [`GroupId::basis`]); rotation coordinates come first for the
//! semi-direct products.
//!
//! | token    | group       | dim | matrix | acts on            | lift        |
//! |----------|-------------|-----|--------|--------------------|-------------|
//! | trivial  | {id}        | 0   | 1x1    | R^d (d = 2 or 3)   | one-to-one  |
//! | t1       | T(1)        | 1   | 2x2    | R^2, along y       | one-to-one  |
//! | t2 / t3  | T(d)        | d   | d+1    | R^d                | one-to-one  |
//! | so2      | SO(2)       | 1   | 2x2    | R^2                | one-to-one  |
//! | so3      | SO(3)       | 3   | 3x3    | R^3                | one-to-many |
//! | se2      | SE(2)       | 3   | 3x3    | R^2                | one-to-many |
//! | se3      | SE(3)       | 6   | 4x4    | R^3                | one-to-many |
//! | rxso2    | R* x SO(2)  | 2   | 2x2    | R^2 \ {0}          | one-to-one  |
//! | rxsq     | R* x SQ     | 2   | 2x2    | open positive quadrant | one-to-one |

mod element;
mod lift;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matlie::Matrix;

pub use element::{BranchCut, GroupElement};
pub use lift::{
    base_element, lift, orbit_embed, orbit_origin, random_rotation3, stabilizer_sample,
    LiftedSample, OrbitId, Point,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum GroupId {
    /// Only the identity; every point is its own orbit.
    Trivial { ambient: usize },
    /// Translations along the last `k` of `ambient` axes.
    Translation { k: usize, ambient: usize },
    SO2,
    SO3,
    SE2,
    SE3,
    /// Rotations and positive scalings of the plane.
    RxSO2,
    /// Positive scalings and squeezes of the open positive quadrant.
    RxSQ,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LiftMultiplicity {
    OneToOne,
    OneToMany,
}

impl GroupId {
    pub const T1: GroupId = GroupId::Translation { k: 1, ambient: 2 };
    pub const T2: GroupId = GroupId::Translation { k: 2, ambient: 2 };
    pub const T3: GroupId = GroupId::Translation { k: 3, ambient: 3 };
    pub const TRIVIAL2: GroupId = GroupId::Trivial { ambient: 2 };
    pub const TRIVIAL3: GroupId = GroupId::Trivial { ambient: 3 };

    /// Every implemented group with its default ambient space.
    pub fn all() -> Vec<GroupId> {
        vec![
            GroupId::TRIVIAL2,
            GroupId::T1,
            GroupId::T2,
            GroupId::T3,
            GroupId::SO2,
            GroupId::SO3,
            GroupId::SE2,
            GroupId::SE3,
            GroupId::RxSO2,
            GroupId::RxSQ,
        ]
    }

    pub fn token(&self) -> &'static str {
        match self {
            GroupId::Trivial { .. } => "trivial",
            GroupId::Translation { k: 1, .. } => "t1",
            GroupId::Translation { k: 2, .. } => "t2",
            GroupId::Translation { .. } => "t3",
            GroupId::SO2 => "so2",
            GroupId::SO3 => "so3",
            GroupId::SE2 => "se2",
            GroupId::SE3 => "se3",
            GroupId::RxSO2 => "rxso2",
            GroupId::RxSQ => "rxsq",
        }
    }

    /// Re-targets the groups whose input space is not fixed (trivial, T(1))
    /// to a different ambient dimension.
    pub fn with_ambient(self, ambient: usize) -> Result<GroupId> {
        if !(2..=3).contains(&ambient) {
            return Err(Error::Config(format!("ambient dimension {ambient} not in 2..=3")));
        }
        match self {
            GroupId::Trivial { .. } => Ok(GroupId::Trivial { ambient }),
            GroupId::Translation { k, .. } if k <= ambient => {
                Ok(GroupId::Translation { k, ambient })
            }
            g if g.ambient_dim() == ambient => Ok(g),
            g => Err(Error::Config(format!(
                "{g} acts on R^{}, not R^{ambient}",
                g.ambient_dim()
            ))),
        }
    }

    /// Dimension of the Lie algebra.
    pub fn algebra_dim(&self) -> usize {
        match self {
            GroupId::Trivial { .. } => 0,
            GroupId::Translation { k, .. } => *k,
            GroupId::SO2 => 1,
            GroupId::SO3 | GroupId::SE2 => 3,
            GroupId::SE3 => 6,
            GroupId::RxSO2 | GroupId::RxSQ => 2,
        }
    }

    pub fn matrix_size(&self) -> usize {
        match self {
            GroupId::Trivial { .. } => 1,
            GroupId::Translation { k, .. } => k + 1,
            GroupId::SO2 | GroupId::RxSO2 | GroupId::RxSQ => 2,
            GroupId::SO3 | GroupId::SE2 => 3,
            GroupId::SE3 => 4,
        }
    }

    /// Dimension of the input space the group acts on.
    pub fn ambient_dim(&self) -> usize {
        match self {
            GroupId::Trivial { ambient } | GroupId::Translation { ambient, .. } => *ambient,
            GroupId::SO2 | GroupId::SE2 | GroupId::RxSO2 | GroupId::RxSQ => 2,
            GroupId::SO3 | GroupId::SE3 => 3,
        }
    }

    /// Length of the orbit embedding vector.
    pub fn orbit_dim(&self) -> usize {
        match self {
            GroupId::Trivial { ambient } => *ambient,
            GroupId::Translation { k, ambient } => ambient - k,
            GroupId::SO2 | GroupId::SO3 => 1,
            GroupId::SE2 | GroupId::SE3 | GroupId::RxSO2 | GroupId::RxSQ => 0,
        }
    }

    pub fn multiplicity(&self) -> LiftMultiplicity {
        match self {
            GroupId::SO3 | GroupId::SE2 | GroupId::SE3 => LiftMultiplicity::OneToMany,
            _ => LiftMultiplicity::OneToOne,
        }
    }

    /// Whether every generator commutes with its transpose, `[g, g^T] = 0`,
    /// in the matrix representation used here. When it holds,
    /// `||log(v^-1 u)||_F` is a geodesic distance.
    ///
    /// Translations fail this in their affine representation
    /// (`E_ik E_ik^T != E_ik^T E_ik`) even though their distance is plain
    /// Euclidean; see [`GroupId::distance_is_metric`].
    pub fn normal_generators(&self) -> bool {
        !matches!(
            self,
            GroupId::SE2 | GroupId::SE3 | GroupId::Translation { .. }
        )
    }

    /// Whether `||log(v^-1 u)||_F` satisfies the triangle inequality.
    pub fn distance_is_metric(&self) -> bool {
        self.normal_generators() || matches!(self, GroupId::Translation { .. })
    }

    /// Basis matrices `e_k` of the Lie algebra.
    pub fn basis(&self) -> Vec<Matrix> {
        let n = self.matrix_size();
        let unit = |i: usize, j: usize, v: f64| {
            let mut m = Matrix::zeros(n, n);
            m[(i, j)] = v;
            m
        };
        let skew = |i: usize, j: usize| {
            // generator rotating axis i toward axis j
            let mut m = Matrix::zeros(n, n);
            m[(j, i)] = 1.0;
            m[(i, j)] = -1.0;
            m
        };
        match self {
            GroupId::Trivial { .. } => vec![],
            GroupId::Translation { k, .. } => (0..*k).map(|i| unit(i, *k, 1.0)).collect(),
            GroupId::SO2 => vec![skew(0, 1)],
            GroupId::SO3 => vec![skew(1, 2), skew(2, 0), skew(0, 1)],
            GroupId::SE2 => vec![skew(0, 1), unit(0, 2, 1.0), unit(1, 2, 1.0)],
            GroupId::SE3 => vec![
                skew(1, 2),
                skew(2, 0),
                skew(0, 1),
                unit(0, 3, 1.0),
                unit(1, 3, 1.0),
                unit(2, 3, 1.0),
            ],
            GroupId::RxSO2 => vec![Matrix::identity(2), skew(0, 1)],
            GroupId::RxSQ => vec![Matrix::identity(2), Matrix::diag(&[1.0, -1.0])],
        }
    }

    /// Indices of algebra coordinates that are rotation angles (wrapped to
    /// `(-pi, pi]` by the logarithm).
    pub fn angle_coords(&self) -> &'static [usize] {
        match self {
            GroupId::SO2 | GroupId::SE2 => &[0],
            GroupId::RxSO2 => &[1],
            _ => &[],
        }
    }
}

impl fmt::Display for GroupId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GroupId::Trivial { ambient } => write!(f, "Trivial(R^{ambient})"),
            GroupId::Translation { k, ambient } if k == ambient => write!(f, "T({k})"),
            GroupId::Translation { k, ambient } => write!(f, "T({k}) on R^{ambient}"),
            GroupId::SO2 => write!(f, "SO(2)"),
            GroupId::SO3 => write!(f, "SO(3)"),
            GroupId::SE2 => write!(f, "SE(2)"),
            GroupId::SE3 => write!(f, "SE(3)"),
            GroupId::RxSO2 => write!(f, "R*xSO(2)"),
            GroupId::RxSQ => write!(f, "R*xSQ"),
        }
    }
}

impl FromStr for GroupId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "trivial" => Ok(GroupId::TRIVIAL2),
            "t1" => Ok(GroupId::T1),
            "t2" => Ok(GroupId::T2),
            "t3" => Ok(GroupId::T3),
            "so2" => Ok(GroupId::SO2),
            "so3" => Ok(GroupId::SO3),
            "se2" => Ok(GroupId::SE2),
            "se3" => Ok(GroupId::SE3),
            "rxso2" => Ok(GroupId::RxSO2),
            "rxsq" => Ok(GroupId::RxSQ),
            other => Err(Error::Config(format!(
                "unknown group '{other}' (expected trivial|t1|t2|t3|so2|so3|se2|se3|rxso2|rxsq)"
            ))),
        }
    }
}

/// Coordinates of a Lie algebra element in the group's fixed basis.
#[derive(Debug, Clone, PartialEq)]
pub struct LieAlgebraVector {
    group: GroupId,
    coords: Vec<f64>,
}

impl LieAlgebraVector {
    pub fn new(group: GroupId, coords: Vec<f64>) -> Result<Self> {
        if coords.len() != group.algebra_dim() {
            return Err(Error::Dimension(format!(
                "{group} algebra has dimension {}, got {} coordinates",
                group.algebra_dim(),
                coords.len()
            )));
        }
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(Error::Numeric("non-finite algebra coordinate".into()));
        }
        Ok(Self { group, coords })
    }

    pub fn zero(group: GroupId) -> Self {
        Self {
            group,
            coords: vec![0.0; group.algebra_dim()],
        }
    }

    pub fn group(&self) -> GroupId {
        self.group
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn into_coords(self) -> Vec<f64> {
        self.coords
    }

    pub fn neg(&self) -> Self {
        Self {
            group: self.group,
            coords: self.coords.iter().map(|c| -c).collect(),
        }
    }

    /// The algebra element as a matrix, `sum_k a^k e_k`.
    pub fn hat(&self) -> Matrix {
        let n = self.group.matrix_size();
        self.group
            .basis()
            .iter()
            .zip(&self.coords)
            .fold(Matrix::zeros(n, n), |acc, (e, c)| acc.add(&e.scale(*c)))
    }
}

/// Maps an angle onto `(-pi, pi]`.
pub fn wrap_angle(theta: f64) -> f64 {
    use std::f64::consts::PI;
    let two_pi = 2.0 * PI;
    let mut t = theta - two_pi * ((theta + PI) / two_pi).floor();
    // now in [-pi, pi)
    if t <= -PI {
        t += two_pi;
    }
    t
}
