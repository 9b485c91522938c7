//! Fixed-step classical RK4 with a step-halving accuracy policy.

use crate::error::{Error, Result};

fn axpy(z: &[f64], h: f64, k: &[f64]) -> Vec<f64> {
    z.iter().zip(k).map(|(a, b)| a + h * b).collect()
}

/// One RK4 step. Also returns the four stage points for adjoint passes.
pub fn rk4_step<F>(field: &F, z: &[f64], h: f64) -> Result<(Vec<f64>, [Vec<f64>; 4])>
where
    F: Fn(&[f64]) -> Result<Vec<f64>> + ?Sized,
{
    let k1 = field(z)?;
    let y2 = axpy(z, 0.5 * h, &k1);
    let k2 = field(&y2)?;
    let y3 = axpy(z, 0.5 * h, &k2);
    let k3 = field(&y3)?;
    let y4 = axpy(z, h, &k3);
    let k4 = field(&y4)?;
    let next = (0..z.len())
        .map(|i| z[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect();
    Ok((next, [z.to_vec(), y2, y3, y4]))
}

/// States at `t0 + i dt` for `i = 0..=steps`, taking `substeps` RK4 steps
/// per output interval. Aborts with the failing time on a non-finite state.
pub fn rk4_integrate<F>(field: &F, z0: &[f64], dt: f64, steps: usize, substeps: usize) -> Result<Vec<Vec<f64>>>
where
    F: Fn(&[f64]) -> Result<Vec<f64>> + ?Sized,
{
    if substeps == 0 || !(dt > 0.0) {
        return Err(Error::Config(format!("need dt > 0 and substeps >= 1, got {dt}, {substeps}")));
    }
    let h = dt / substeps as f64;
    let mut out = Vec::with_capacity(steps + 1);
    out.push(z0.to_vec());
    let mut z = z0.to_vec();
    for i in 0..steps {
        for s in 0..substeps {
            z = rk4_step(field, &z, h)?.0;
            if z.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numeric(format!(
                    "non-finite state at t = {}",
                    i as f64 * dt + (s + 1) as f64 * h
                )));
            }
        }
        out.push(z.clone());
    }
    Ok(out)
}

fn rel_change(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let norm = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / norm.max(1e-12)
}

/// Halves the step until the trajectory's endpoint moves by less than
/// `rtol` (relative), starting from `substeps` per interval. Returns the
/// finer trajectory and the substep count used.
pub fn integrate_to_tolerance<F>(
    field: &F,
    z0: &[f64],
    dt: f64,
    steps: usize,
    substeps: usize,
    rtol: f64,
) -> Result<(Vec<Vec<f64>>, usize)>
where
    F: Fn(&[f64]) -> Result<Vec<f64>> + ?Sized,
{
    let mut s = substeps.max(1);
    let mut coarse = rk4_integrate(field, z0, dt, steps, s)?;
    for _ in 0..12 {
        let fine = rk4_integrate(field, z0, dt, steps, 2 * s)?;
        let change = rel_change(&coarse[steps], &fine[steps]);
        s *= 2;
        if change < rtol {
            return Ok((fine, s));
        }
        coarse = fine;
    }
    Err(Error::Numeric(format!(
        "step halving did not reach relative tolerance {rtol} with {s} substeps"
    )))
}
