use super::spring::{angular_momentum, linear_momentum, Systems};
use crate::error::{Error, Result};

/// Conserved quantities along one system's trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct ConservationReport {
    pub times: Vec<f64>,
    /// Total linear momentum per step (`d` components).
    pub momentum: Vec<Vec<f64>>,
    /// Angular momentum per step (1 component in 2D, 3 in 3D).
    pub angular: Vec<Vec<f64>>,
    pub energy: Vec<f64>,
    pub momentum_drift: f64,
    pub angular_drift: f64,
    pub energy_drift: f64,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `max_t |x_t - x_0| / |x_0|`, absolute when `|x_0| < 1e-8`.
pub fn max_drift(series: &[Vec<f64>]) -> f64 {
    let Some(first) = series.first() else { return 0.0 };
    let scale = if norm(first) < 1e-8 { 1.0 } else { norm(first) };
    series
        .iter()
        .map(|x| norm(&x.iter().zip(first).map(|(a, b)| a - b).collect::<Vec<_>>()) / scale)
        .fold(0.0, f64::max)
}

/// `traj` holds states of a single system at spacing `dt`; `energy` is the
/// Hamiltonian to track (the true one or a learned one).
pub fn conservation_report(
    traj: &[Vec<f64>],
    dt: f64,
    sys: &Systems,
    energy: impl Fn(&[f64]) -> Result<f64>,
) -> Result<ConservationReport> {
    if sys.count() != 1 {
        return Err(Error::Dimension(format!(
            "conservation report takes one system, got {}",
            sys.count()
        )));
    }
    let mut momentum = Vec::with_capacity(traj.len());
    let mut angular = Vec::with_capacity(traj.len());
    let mut en = Vec::with_capacity(traj.len());
    for z in traj {
        sys.check_state(z)?;
        momentum.push(linear_momentum(z, sys));
        angular.push(angular_momentum(z, sys));
        en.push(energy(z)?);
    }
    let energy_series: Vec<Vec<f64>> = en.iter().map(|e| vec![*e]).collect();
    Ok(ConservationReport {
        times: (0..traj.len()).map(|i| i as f64 * dt).collect(),
        momentum_drift: max_drift(&momentum),
        angular_drift: max_drift(&angular),
        energy_drift: max_drift(&energy_series),
        momentum,
        angular,
        energy: en,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn free_particle_conserves_everything() {
        let sys = Systems::new(1, 2, vec![2.0], vec![0.0]).unwrap();
        let traj: Vec<Vec<f64>> = (0..50)
            .map(|i| {
                let t = i as f64 * 0.1;
                vec![1.0 + 0.5 * t, -2.0 + 0.25 * t, 1.0, 0.5]
            })
            .collect();
        let r = conservation_report(&traj, 0.1, &sys, |z| Ok((z[2] * z[2] + z[3] * z[3]) / 4.0)).unwrap();
        assert_eq!(r.momentum_drift, 0.0);
        assert!(r.angular_drift < 1e-15);
        assert_eq!(r.energy_drift, 0.0);
    }

    #[test]
    fn drift_is_absolute_near_zero() {
        assert_eq!(max_drift(&[vec![0.0], vec![3e-9]]), 3e-9);
        assert_eq!(max_drift(&[vec![2.0], vec![3.0]]), 0.5);
    }
}
