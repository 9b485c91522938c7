//! Spring systems: parameters, state layout and the analytic Hamiltonian.
//!
//! A batch of `B` systems with `N` bodies in `d` dimensions is packed as
//! one flat vector. System `b` occupies `[b*2Nd, (b+1)*2Nd)`, holding all
//! positions (body-major) followed by all momenta.

use std::sync::Arc;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Systems {
    pub bodies: usize,
    pub dim: usize,
    /// `m_j` per body, system-major.
    pub masses: Vec<f64>,
    /// `k_j` per body; pair constants are `k_i k_j`.
    pub springs: Vec<f64>,
}

impl Systems {
    pub fn new(bodies: usize, dim: usize, masses: Vec<f64>, springs: Vec<f64>) -> Result<Self> {
        if bodies == 0 || dim == 0 {
            return Err(Error::Config("systems need at least one body and one dimension".into()));
        }
        if masses.len() != springs.len() || masses.len() % bodies != 0 {
            return Err(Error::Dimension(format!(
                "{} masses and {} spring constants for {bodies}-body systems",
                masses.len(),
                springs.len()
            )));
        }
        if let Some(m) = masses.iter().find(|m| !(**m > 0.0)) {
            return Err(Error::Domain(format!("masses must be positive, got {m}")));
        }
        if let Some(k) = springs.iter().find(|k| !(**k >= 0.0)) {
            return Err(Error::Domain(format!("spring constants must be nonnegative, got {k}")));
        }
        Ok(Self {
            bodies,
            dim,
            masses,
            springs,
        })
    }

    pub fn count(&self) -> usize {
        self.masses.len() / self.bodies
    }

    /// Length of one system's state, `2 N d`.
    pub fn state_len(&self) -> usize {
        2 * self.bodies * self.dim
    }

    pub fn total_len(&self) -> usize {
        self.count() * self.state_len()
    }

    pub fn select(&self, idx: &[usize]) -> Systems {
        let n = self.bodies;
        let pick = |v: &[f64]| idx.iter().flat_map(|&i| v[i * n..(i + 1) * n].iter().copied()).collect();
        Systems {
            bodies: n,
            dim: self.dim,
            masses: pick(&self.masses),
            springs: pick(&self.springs),
        }
    }

    pub fn check_state(&self, z: &[f64]) -> Result<()> {
        if z.len() != self.total_len() {
            return Err(Error::Dimension(format!(
                "state has length {}, {} systems need {}",
                z.len(),
                self.count(),
                self.total_len()
            )));
        }
        Ok(())
    }

    /// Index of coordinate `c` of body `j` of system `b`, position or momentum.
    pub fn q_index(&self, b: usize, j: usize, c: usize) -> usize {
        b * self.state_len() + j * self.dim + c
    }

    pub fn p_index(&self, b: usize, j: usize, c: usize) -> usize {
        self.q_index(b, j, c) + self.bodies * self.dim
    }

    /// Rows of `z` viewed as a `(B 2N) x d` matrix that hold positions, and
    /// those that hold momenta, both in (system, body) order.
    pub fn row_split(&self) -> (Arc<Vec<usize>>, Arc<Vec<usize>>) {
        let n = self.bodies;
        let mut q = Vec::with_capacity(self.count() * n);
        let mut p = Vec::with_capacity(self.count() * n);
        for b in 0..self.count() {
            for j in 0..n {
                q.push(b * 2 * n + j);
                p.push(b * 2 * n + n + j);
            }
        }
        (Arc::new(q), Arc::new(p))
    }

    /// System index of each body row.
    pub fn system_of_body(&self) -> Arc<Vec<usize>> {
        Arc::new((0..self.masses.len()).map(|i| i / self.bodies).collect())
    }
}

/// `H = sum_j |p_j|^2 / (2 m_j) + 1/2 sum_{i<j} k_i k_j |q_i - q_j|^2`, one
/// value per system.
pub fn spring_hamiltonian(z: &[f64], sys: &Systems) -> Result<Vec<f64>> {
    sys.check_state(z)?;
    let (n, d) = (sys.bodies, sys.dim);
    Ok((0..sys.count())
        .map(|b| {
            let mut h = 0.0;
            for j in 0..n {
                let p2: f64 = (0..d).map(|c| z[sys.p_index(b, j, c)].powi(2)).sum();
                h += p2 / (2.0 * sys.masses[b * n + j]);
                for i in 0..j {
                    let q2: f64 = (0..d).map(|c| (z[sys.q_index(b, i, c)] - z[sys.q_index(b, j, c)]).powi(2)).sum();
                    h += 0.5 * sys.springs[b * n + i] * sys.springs[b * n + j] * q2;
                }
            }
            h
        })
        .collect())
}

/// Hamilton's equations for the spring Hamiltonian, written out by hand.
pub fn spring_field(z: &[f64], sys: &Systems) -> Result<Vec<f64>> {
    sys.check_state(z)?;
    let (n, d) = (sys.bodies, sys.dim);
    let mut out = vec![0.0; z.len()];
    for b in 0..sys.count() {
        for j in 0..n {
            let m = sys.masses[b * n + j];
            let kj = sys.springs[b * n + j];
            for c in 0..d {
                out[sys.q_index(b, j, c)] = z[sys.p_index(b, j, c)] / m;
                let qj = z[sys.q_index(b, j, c)];
                let force: f64 = (0..n)
                    .filter(|&i| i != j)
                    .map(|i| sys.springs[b * n + i] * kj * (z[sys.q_index(b, i, c)] - qj))
                    .sum();
                out[sys.p_index(b, j, c)] = force;
            }
        }
    }
    Ok(out)
}

/// Total linear momentum per system, `B x d` row-major.
pub fn linear_momentum(z: &[f64], sys: &Systems) -> Vec<f64> {
    let mut out = vec![0.0; sys.count() * sys.dim];
    for b in 0..sys.count() {
        for j in 0..sys.bodies {
            for c in 0..sys.dim {
                out[b * sys.dim + c] += z[sys.p_index(b, j, c)];
            }
        }
    }
    out
}

/// Angular momentum per system: the scalar `sum q x p` in 2D, the vector in
/// 3D (`B x 3`). Empty for other dimensions.
pub fn angular_momentum(z: &[f64], sys: &Systems) -> Vec<f64> {
    let (q, p) = (|b, j, c| z[sys.q_index(b, j, c)], |b, j, c| z[sys.p_index(b, j, c)]);
    let mut out = Vec::new();
    for b in 0..sys.count() {
        match sys.dim {
            2 => out.push((0..sys.bodies).map(|j| q(b, j, 0) * p(b, j, 1) - q(b, j, 1) * p(b, j, 0)).sum()),
            3 => {
                let mut l = [0.0; 3];
                for j in 0..sys.bodies {
                    for a in 0..3 {
                        let (u, v) = ((a + 1) % 3, (a + 2) % 3);
                        l[a] += q(b, j, u) * p(b, j, v) - q(b, j, v) * p(b, j, u);
                    }
                }
                out.extend(l);
            }
            _ => {}
        }
    }
    out
}
