//! Trajectory loss, its exact gradient through RK4, and the training loop.
//!
//! The gradient is the discrete adjoint of the RK4 steps: each stage's
//! vector-Jacobian product comes from [`FieldModel::vjp`], which for
//! Hamiltonian models is a Hessian-vector product of `H`.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::data::{Segments, SpringDataset, Split};
use super::integrate::rk4_step;
use super::models::FieldModel;
use super::spring::Systems;
use crate::error::{Error, Result};
use crate::rng::indexed_stream;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// `None` uses `100 sqrt(1000 / D)`.
    pub epochs: Option<usize>,
    pub lr: f64,
    pub batch: usize,
    /// RK4 steps per data interval during training.
    pub substeps: usize,
    pub seed: u64,
    /// Stop after this many epochs without a validation improvement.
    pub patience: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: None,
            lr: 1e-3,
            batch: 200,
            substeps: 1,
            seed: 0,
            patience: None,
        }
    }
}

pub fn scaled_epochs(d: usize) -> usize {
    (100.0 * (1000.0 / d.max(1) as f64).sqrt()).round() as usize
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: usize,
    /// Loss of every optimizer step (NaN for skipped steps).
    pub step_loss: Vec<f64>,
    /// Mean training loss per epoch.
    pub epoch_loss: Vec<f64>,
    pub val_mse: Vec<f64>,
    pub best_epoch: usize,
    pub best_val: f64,
    pub skipped_steps: usize,
}

/// Mean over systems of `(1/T) sum_t |z_t_hat - z_t|^2`.
fn segment_mse(pred: &[Vec<f64>], seg: &Segments) -> f64 {
    let b = seg.systems.count() as f64;
    let tau = seg.targets.len() as f64;
    pred.iter()
        .zip(&seg.targets)
        .map(|(p, t)| p.iter().zip(t).map(|(a, b)| (a - b).powi(2)).sum::<f64>())
        .sum::<f64>()
        / (b * tau)
}

/// Rolls out `seg.z0` and returns the predicted states at each target time.
pub fn rollout(model: &dyn FieldModel, z0: &[f64], sys: &Systems, dt: f64, steps: usize, substeps: usize) -> Result<Vec<Vec<f64>>> {
    let field = |z: &[f64]| model.field(z, sys);
    let traj = super::integrate::rk4_integrate(&field, z0, dt, steps, substeps)?;
    Ok(traj[1..].to_vec())
}

pub fn trajectory_loss(model: &dyn FieldModel, seg: &Segments, dt: f64, substeps: usize) -> Result<f64> {
    if seg.targets.is_empty() {
        return Err(Error::Config("segments need at least one target state".into()));
    }
    match rollout(model, &seg.z0, &seg.systems, dt, seg.targets.len(), substeps) {
        Ok(pred) => Ok(segment_mse(&pred, seg)),
        Err(Error::Numeric(_)) => Ok(f64::NAN),
        Err(e) => Err(e),
    }
}

/// Loss and its exact gradient with respect to the trainable parameters.
/// A diverging rollout gives a NaN loss and an empty gradient.
pub fn loss_and_grad(model: &dyn FieldModel, seg: &Segments, dt: f64, substeps: usize) -> Result<(f64, Vec<f64>)> {
    match exact_loss_and_grad(model, seg, dt, substeps) {
        Err(Error::Numeric(_)) => Ok((f64::NAN, vec![])),
        other => other,
    }
}

fn exact_loss_and_grad(model: &dyn FieldModel, seg: &Segments, dt: f64, substeps: usize) -> Result<(f64, Vec<f64>)> {
    let sys = &seg.systems;
    let tau = seg.targets.len();
    if tau == 0 || substeps == 0 {
        return Err(Error::Config("need at least one target and one substep".into()));
    }
    let h = dt / substeps as f64;
    let field = |z: &[f64]| model.field(z, sys);
    let mut z = seg.z0.clone();
    let mut stages = Vec::with_capacity(tau * substeps);
    let mut pred = Vec::with_capacity(tau);
    for _ in 0..tau {
        for _ in 0..substeps {
            let (next, st) = rk4_step(&field, &z, h)?;
            stages.push(st);
            z = next;
        }
        if z.iter().any(|v| !v.is_finite()) {
            return Ok((f64::NAN, vec![]));
        }
        pred.push(z.clone());
    }
    let loss = segment_mse(&pred, seg);
    let scale = 2.0 / (sys.count() as f64 * tau as f64);
    let n_theta = model.store().num_trainable();
    let mut tbar = vec![0.0; n_theta];
    let mut lam = vec![0.0; z.len()];
    for t in (0..tau).rev() {
        for (l, (p, y)) in lam.iter_mut().zip(pred[t].iter().zip(&seg.targets[t])) {
            *l += scale * (p - y);
        }
        for s in (0..substeps).rev() {
            let [y1, y2, y3, y4] = &stages[t * substeps + s];
            let mut acc = |y: &[f64], g: &[f64]| -> Result<Vec<f64>> {
                let (a, th) = model.vjp(y, g, sys)?;
                for (x, v) in tbar.iter_mut().zip(&th) {
                    *x += v;
                }
                Ok(a)
            };
            let comb = |c: f64, a: &[f64], d: f64| -> Vec<f64> {
                lam.iter().zip(a).map(|(l, x)| c * h * l + d * h * x).collect()
            };
            let a4 = acc(y4, &lam.iter().map(|l| h / 6.0 * l).collect::<Vec<_>>())?;
            let a3 = acc(y3, &comb(2.0 / 6.0, &a4, 1.0))?;
            let a2 = acc(y2, &comb(2.0 / 6.0, &a3, 0.5))?;
            let a1 = acc(y1, &comb(1.0 / 6.0, &a2, 0.5))?;
            for i in 0..lam.len() {
                lam[i] += a1[i] + a2[i] + a3[i] + a4[i];
            }
        }
    }
    Ok((loss, tbar))
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Adam {
    pub fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn step(&mut self, theta: &mut [f64], grad: &[f64], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..theta.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            theta[i] -= lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + self.eps);
        }
    }
}

/// `lr * (1 + cos(pi step / total)) / 2`.
pub fn cosine_lr(lr: f64, step: usize, total: usize) -> f64 {
    lr * 0.5 * (1.0 + (std::f64::consts::PI * step as f64 / total.max(1) as f64).cos())
}

/// Trajectory loss over a whole split's segments, in chunks of `batch`.
pub fn split_mse(model: &dyn FieldModel, split: &Split, tau: usize, dt: f64, substeps: usize, batch: usize) -> Result<f64> {
    let idx: Vec<usize> = (0..split.len()).collect();
    let mut total = 0.0;
    for chunk in idx.chunks(batch.max(1)) {
        total += trajectory_loss(model, &split.segments(chunk, tau), dt, substeps)? * chunk.len() as f64;
    }
    Ok(total / split.len().max(1) as f64)
}

const MAX_BAD_STEPS: usize = 10;

/// Adam with cosine decay and early stopping on validation MSE; the model
/// ends at its best validation checkpoint. Batches cover the whole training
/// set when it has at most `cfg.batch` systems.
pub fn train(model: &mut dyn FieldModel, data: &SpringDataset, cfg: &TrainConfig) -> Result<TrainReport> {
    let dcfg = &data.manifest.config;
    let (tau, dt) = (dcfg.tau, dcfg.dt);
    let n = data.train.len();
    if n == 0 || cfg.batch == 0 {
        return Err(Error::Config("training needs data and a positive batch size".into()));
    }
    let epochs = cfg.epochs.unwrap_or_else(|| scaled_epochs(n));
    let all: Vec<usize> = (0..n).collect();
    let calib = data.train.segments(&all, tau);
    model.calibrate(&calib.z0, &calib.systems)?;
    let per_epoch = n.div_ceil(cfg.batch);
    let total_steps = epochs * per_epoch;
    let mut theta = model.store().flat();
    let mut adam = Adam::new(theta.len());
    let mut best = model.store().clone();
    let mut best_val = split_mse(model, &data.val, tau, dt, cfg.substeps, cfg.batch)?;
    let mut best_epoch = 0;
    let mut report = TrainReport {
        epochs: 0,
        step_loss: vec![],
        epoch_loss: vec![],
        val_mse: vec![],
        best_epoch: 0,
        best_val,
        skipped_steps: 0,
    };
    let mut bad_run = 0;
    let mut step = 0;
    for epoch in 0..epochs {
        let mut order = all.clone();
        order.shuffle(&mut indexed_stream(cfg.seed, "train/shuffle", epoch));
        let mut sum = 0.0;
        let mut counted = 0;
        for chunk in order.chunks(cfg.batch) {
            let seg = data.train.segments(chunk, tau);
            let (loss, grad) = loss_and_grad(model, &seg, dt, cfg.substeps)?;
            report.step_loss.push(loss);
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                report.skipped_steps += 1;
                bad_run += 1;
                if bad_run >= MAX_BAD_STEPS {
                    return Err(Error::Numeric(format!(
                        "{MAX_BAD_STEPS} consecutive non-finite training steps (epoch {epoch})"
                    )));
                }
                step += 1;
                continue;
            }
            bad_run = 0;
            adam.step(&mut theta, &grad, cosine_lr(cfg.lr, step, total_steps));
            model.store_mut().set_flat(&theta)?;
            step += 1;
            sum += loss * chunk.len() as f64;
            counted += chunk.len();
        }
        report.epoch_loss.push(if counted > 0 { sum / counted as f64 } else { f64::NAN });
        let val = split_mse(model, &data.val, tau, dt, cfg.substeps, cfg.batch)?;
        report.val_mse.push(val);
        report.epochs = epoch + 1;
        if val < best_val {
            best_val = val;
            best_epoch = epoch + 1;
            best = model.store().clone();
        }
        if let Some(p) = cfg.patience {
            if epoch + 1 - best_epoch >= p {
                break;
            }
        }
    }
    *model.store_mut() = best;
    report.best_epoch = best_epoch;
    report.best_val = best_val;
    Ok(report)
}

/// Moving average with window `w` (shorter at the start).
pub fn smoothed(v: &[f64], w: usize) -> Vec<f64> {
    (0..v.len())
        .map(|i| {
            let lo = (i + 1).saturating_sub(w);
            v[lo..=i].iter().sum::<f64>() / (i + 1 - lo) as f64
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adam_zero_lr_is_a_no_op_and_moves_otherwise() {
        let mut a = Adam::new(2);
        let mut th = vec![1.0, -1.0];
        a.step(&mut th, &[0.3, -0.2], 0.0);
        assert_eq!(th, vec![1.0, -1.0]);
        a.step(&mut th, &[0.3, -0.2], 0.1);
        assert!(th[0] < 1.0 && th[1] > -1.0);
    }

    #[test]
    fn schedule_and_epochs() {
        assert_eq!(scaled_epochs(1000), 100);
        assert_eq!(scaled_epochs(250), 200);
        assert_eq!(cosine_lr(1.0, 0, 10), 1.0);
        assert!(cosine_lr(1.0, 10, 10).abs() < 1e-15);
        assert_eq!(smoothed(&[1.0, 3.0, 5.0], 2), vec![1.0, 2.0, 4.0]);
    }
}
