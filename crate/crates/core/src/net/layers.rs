use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::graph::{Graph, PointSet};
use super::params::{uniform, ParamId, ParamStore};
use crate::diff::{Scalar, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Forward-pass state: the tape, the bound parameters, and norm statistics
/// gathered in training mode.
pub struct Fwd<'t, T: Scalar> {
    pub tape: &'t mut Tape<T>,
    pub vars: Vec<Var>,
    pub train: bool,
    pub norm_updates: Vec<NormUpdate>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NormUpdate {
    pub mean_id: ParamId,
    pub var_id: ParamId,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl<'t, T: Scalar> Fwd<'t, T> {
    pub fn new(tape: &'t mut Tape<T>, store: &ParamStore, train: bool, grad_params: bool) -> Self {
        let vars = store.bind(tape, grad_params);
        Self {
            tape,
            vars,
            train,
            norm_updates: Vec::new(),
        }
    }

    pub fn p(&self, id: ParamId) -> Var {
        self.vars[id.index()]
    }

    pub fn constant_f64(&mut self, rows: usize, cols: usize, data: &[f64]) -> Result<Var> {
        let t = Tensor::from_f64(rows, cols, data)?;
        Ok(self.tape.constant(t))
    }
}

/// Applies running momentum to the stored statistics.
pub fn apply_norm_updates(store: &mut ParamStore, updates: &[NormUpdate], momentum: f64) -> Result<()> {
    for u in updates {
        for (id, batch) in [(u.mean_id, &u.mean), (u.var_id, &u.var)] {
            let old = store.get(id).clone();
            let new: Vec<f64> = old
                .data()
                .iter()
                .zip(batch.iter())
                .map(|(o, b)| (1.0 - momentum) * o + momentum * b)
                .collect();
            store.set(id, Tensor::new(1, new.len(), new)?)?;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    /// Fan-in scaled uniform init; `zero` starts weights and bias at zero.
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        zero: bool,
        rng: &mut R,
    ) -> Result<Self> {
        let bound = if zero { 0.0 } else { 1.0 / (fan_in.max(1) as f64).sqrt() };
        let w = store.add(format!("{name}.w"), uniform(fan_in, fan_out, bound, rng), true)?;
        let b = store.add(format!("{name}.b"), uniform(1, fan_out, bound, rng), true)?;
        Ok(Self { w, b, fan_in, fan_out })
    }

    pub fn forward<T: Scalar>(&self, fwd: &mut Fwd<T>, x: Var) -> Result<Var> {
        let (w, b) = (fwd.p(self.w), fwd.p(self.b));
        let y = fwd.tape.matmul(x, w)?;
        fwd.tape.add_row(y, b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ConvMode {
    /// Materializes the `c_out x c_in` kernel for every pair.
    Naive,
    /// Contracts neighbor features with the kernel MLP's last hidden layer
    /// first, then applies the final weights once per center.
    #[default]
    Factored,
}

/// MLP from pair embeddings to `c_out x c_in` kernel matrices, with a
/// frozen per-feature standardization of its input.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelMlp {
    pub d_in: usize,
    pub hidden: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub shift: ParamId,
    pub scale: ParamId,
    pub l1: Linear,
    pub l2: Linear,
    pub out: Linear,
}

impl KernelMlp {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        d_in: usize,
        hidden: usize,
        c_in: usize,
        c_out: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let shift = store.add(format!("{name}.shift"), Tensor::zeros(1, d_in), false)?;
        let scale = store.add(format!("{name}.scale"), Tensor::filled(1, d_in, 1.0), false)?;
        let l1 = Linear::new(store, &format!("{name}.l1"), d_in, hidden, false, rng)?;
        let l2 = Linear::new(store, &format!("{name}.l2"), hidden, hidden, false, rng)?;
        let out = Linear::new(store, &format!("{name}.out"), hidden, c_out * c_in, false, rng)?;
        Ok(Self {
            d_in,
            hidden,
            c_in,
            c_out,
            shift,
            scale,
            l1,
            l2,
            out,
        })
    }

    /// Freezes the input standardization to the column statistics of `emb`.
    pub fn calibrate(&self, store: &mut ParamStore, emb: &Tensor<f64>) -> Result<()> {
        if emb.cols() != self.d_in {
            return Err(Error::Dimension(format!(
                "calibration embeddings have {} columns, kernel expects {}",
                emb.cols(),
                self.d_in
            )));
        }
        let n = emb.rows().max(1) as f64;
        let mean: Vec<f64> = emb.sum_rows().data().iter().map(|s| s / n).collect();
        let scale: Vec<f64> = (0..self.d_in)
            .map(|c| {
                let var = (0..emb.rows()).map(|r| (emb.get(r, c) - mean[c]).powi(2)).sum::<f64>() / n;
                if var > 1e-16 {
                    1.0 / var.sqrt()
                } else {
                    1.0
                }
            })
            .collect();
        store.set(self.shift, Tensor::row(mean))?;
        store.set(self.scale, Tensor::row(scale))
    }

    /// Last hidden activations `s` (pairs x hidden).
    pub fn hidden<T: Scalar>(&self, fwd: &mut Fwd<T>, emb: Var) -> Result<Var> {
        let (shift, scale) = (fwd.p(self.shift), fwd.p(self.scale));
        let a = fwd.tape.sub_row(emb, shift)?;
        let a = fwd.tape.mul_row(a, scale)?;
        let a = self.l1.forward(fwd, a)?;
        let a = fwd.tape.swish(a);
        let a = self.l2.forward(fwd, a)?;
        Ok(fwd.tape.swish(a))
    }

    /// Full kernel values, pairs x (c_out * c_in), row-major `c_out x c_in`
    /// per pair.
    pub fn kernels<T: Scalar>(&self, fwd: &mut Fwd<T>, emb: Var) -> Result<Var> {
        let s = self.hidden(fwd, emb)?;
        self.out.forward(fwd, s)
    }
}

/// `[g * c_out * c_in + a * c_in + b] -> [(g * c_in + b) * c_out + a]`:
/// regroups per-pair `c_out x c_in` blocks so the hidden index and input
/// channel share a row.
fn regroup(groups: usize, c_out: usize, c_in: usize) -> Arc<Vec<usize>> {
    let mut perm = vec![0; groups * c_out * c_in];
    for g in 0..groups {
        for b in 0..c_in {
            for a in 0..c_out {
                perm[(g * c_in + b) * c_out + a] = g * c_out * c_in + a * c_in + b;
            }
        }
    }
    Arc::new(perm)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LieConv {
    pub kernel: KernelMlp,
    pub mode: ConvMode,
}

impl LieConv {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        d_emb: usize,
        hidden: usize,
        c_in: usize,
        c_out: usize,
        mode: ConvMode,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            kernel: KernelMlp::new(store, &format!("{name}.kernel"), d_emb, hidden, c_in, c_out, rng)?,
            mode,
        })
    }

    /// `h_i = (1/n_i) sum_j K(a_ij) f_j` over the graph's pairs.
    pub fn forward<T: Scalar>(&self, fwd: &mut Fwd<T>, f: Var, emb: Var, graph: &Graph) -> Result<Var> {
        let k = &self.kernel;
        if fwd.tape.shape(f).1 != k.c_in {
            return Err(Error::Dimension(format!(
                "LieConv expects {} input channels, got {}",
                k.c_in,
                fwd.tape.shape(f).1
            )));
        }
        if fwd.tape.shape(emb) != (graph.pairs.len(), k.d_in) {
            return Err(Error::Dimension(format!(
                "pair embeddings are {:?}, graph needs {}x{}",
                fwd.tape.shape(emb),
                graph.pairs.len(),
                k.d_in
            )));
        }
        let inv_n = fwd.constant_f64(graph.inv_n.len(), 1, &graph.inv_n)?;
        let summed = match self.mode {
            ConvMode::Naive => {
                let kern = k.kernels(fwd, emb)?;
                fwd.tape.pair_apply(kern, f, graph.pairs.clone())?
            }
            ConvMode::Factored => {
                let s = k.hidden(fwd, emb)?;
                let b = fwd.tape.pair_outer(s, f, graph.pairs.clone())?;
                let w = fwd.p(k.out.w);
                let wp = fwd.tape.permute(w, regroup(k.hidden, k.c_out, k.c_in), k.hidden * k.c_in, k.c_out)?;
                let main = fwd.tape.matmul(b, wp)?;
                // bias kernel: sum_j B_bias f_j, with sum_j f_j from a width-1 pair tensor
                let ones = fwd.constant_f64(graph.pairs.len(), 1, &vec![1.0; graph.pairs.len()])?;
                let fsum = fwd.tape.pair_outer(ones, f, graph.pairs.clone())?;
                let bias = fwd.p(k.out.b);
                let bp = fwd.tape.permute(bias, regroup(1, k.c_out, k.c_in), k.c_in, k.c_out)?;
                let bterm = fwd.tape.matmul(fsum, bp)?;
                fwd.tape.add(main, bterm)?
            }
        };
        fwd.tape.mul_col(summed, inv_n)
    }
}

/// Batch norm whose statistics range over valid (example, element)
/// positions only. Masked rows come out as zero.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskedBatchNorm {
    pub channels: usize,
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub eps: f64,
}

impl MaskedBatchNorm {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize) -> Result<Self> {
        Ok(Self {
            channels,
            gamma: store.add(format!("{name}.gamma"), Tensor::filled(1, channels, 1.0), true)?,
            beta: store.add(format!("{name}.beta"), Tensor::zeros(1, channels), true)?,
            running_mean: store.add(format!("{name}.running_mean"), Tensor::zeros(1, channels), false)?,
            running_var: store.add(format!("{name}.running_var"), Tensor::filled(1, channels, 1.0), false)?,
            eps: 1e-5,
        })
    }

    pub fn forward<T: Scalar>(&self, fwd: &mut Fwd<T>, x: Var, points: &PointSet) -> Result<Var> {
        let count = points.mask.iter().filter(|m| **m).count();
        if count == 0 {
            return Err(Error::Numeric("batch norm over an all-masked batch".into()));
        }
        let mcol = points.mask_col();
        let m = fwd.constant_f64(mcol.len(), 1, &mcol)?;
        let (mean, inv_std) = if fwd.train {
            let xm = fwd.tape.mul_col(x, m)?;
            let s = fwd.tape.sum_rows(xm);
            let mean = fwd.tape.scale(s, 1.0 / count as f64);
            let xc = fwd.tape.sub_row(x, mean)?;
            let sq = fwd.tape.square(xc);
            let sq = fwd.tape.mul_col(sq, m)?;
            let v = fwd.tape.sum_rows(sq);
            let var = fwd.tape.scale(v, 1.0 / count as f64);
            fwd.norm_updates.push(NormUpdate {
                mean_id: self.running_mean,
                var_id: self.running_var,
                mean: fwd.tape.value(mean).to_f64(),
                var: fwd.tape.value(var).to_f64(),
            });
            let ve = fwd.tape.add_scalar(var, self.eps);
            (mean, fwd.tape.powf(ve, -0.5))
        } else {
            let mean = fwd.p(self.running_mean);
            let var = fwd.p(self.running_var);
            let ve = fwd.tape.add_scalar(var, self.eps);
            (mean, fwd.tape.powf(ve, -0.5))
        };
        let xc = fwd.tape.sub_row(x, mean)?;
        let y = fwd.tape.mul_row(xc, inv_std)?;
        let (g, b) = (fwd.p(self.gamma), fwd.p(self.beta));
        let y = fwd.tape.mul_row(y, g)?;
        let y = fwd.tape.add_row(y, b)?;
        fwd.tape.mul_col(y, m)
    }
}

/// Per-example mean over valid elements, `points x c -> examples x c`.
pub fn global_pool<T: Scalar>(fwd: &mut Fwd<T>, x: Var, points: &PointSet) -> Result<Var> {
    let inv = points.inv_counts()?;
    let mcol = points.mask_col();
    let m = fwd.constant_f64(mcol.len(), 1, &mcol)?;
    let xm = fwd.tape.mul_col(x, m)?;
    let s = fwd.tape.segment_sum(xm, Arc::new(points.example_of.clone()), points.n_examples)?;
    let inv = fwd.constant_f64(inv.len(), 1, &inv)?;
    fwd.tape.mul_col(s, inv)
}

/// Residual block: linear c -> c/4, norm + swish, LieConv, norm + swish,
/// linear c/4 -> c_out, plus the (possibly subsampled, projected) input.
#[derive(Debug, Clone, PartialEq)]
pub struct Bottleneck {
    pub c_in: usize,
    pub c_out: usize,
    pub lin1: Linear,
    pub norm1: Option<MaskedBatchNorm>,
    pub conv: LieConv,
    pub norm2: Option<MaskedBatchNorm>,
    pub lin2: Linear,
    pub shortcut: Option<Linear>,
}

impl Bottleneck {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        c_in: usize,
        c_out: usize,
        d_emb: usize,
        kernel_hidden: usize,
        use_norm: bool,
        identity_init: bool,
        mode: ConvMode,
        rng: &mut R,
    ) -> Result<Self> {
        let mid = (c_in / 4).max(1);
        let lin1 = Linear::new(store, &format!("{name}.lin1"), c_in, mid, false, rng)?;
        let norm1 = use_norm.then(|| MaskedBatchNorm::new(store, &format!("{name}.norm1"), mid)).transpose()?;
        let conv = LieConv::new(store, &format!("{name}.conv"), d_emb, kernel_hidden, mid, mid, mode, rng)?;
        let norm2 = use_norm.then(|| MaskedBatchNorm::new(store, &format!("{name}.norm2"), mid)).transpose()?;
        let lin2 = Linear::new(store, &format!("{name}.lin2"), mid, c_out, identity_init, rng)?;
        let shortcut = (c_in != c_out)
            .then(|| Linear::new(store, &format!("{name}.shortcut"), c_in, c_out, false, rng))
            .transpose()?;
        Ok(Self {
            c_in,
            c_out,
            lin1,
            norm1,
            conv,
            norm2,
            lin2,
            shortcut,
        })
    }

    /// `x` holds the previous level's points; `keep` picks the query rows
    /// for the residual path when the level is subsampled.
    pub fn forward<T: Scalar>(
        &self,
        fwd: &mut Fwd<T>,
        x: Var,
        emb: Var,
        graph: &Graph,
        prev: &PointSet,
        keep: Option<&Arc<Vec<usize>>>,
    ) -> Result<Var> {
        if fwd.tape.shape(x).1 != self.c_in {
            return Err(Error::Dimension(format!(
                "block expects {} channels, got {}",
                self.c_in,
                fwd.tape.shape(x).1
            )));
        }
        let mut h = self.lin1.forward(fwd, x)?;
        if let Some(n) = &self.norm1 {
            h = n.forward(fwd, h, prev)?;
        }
        h = fwd.tape.swish(h);
        h = self.conv.forward(fwd, h, emb, graph)?;
        if let Some(n) = &self.norm2 {
            h = n.forward(fwd, h, &graph.queries)?;
        }
        h = fwd.tape.swish(h);
        h = self.lin2.forward(fwd, h)?;
        let mut skip = match keep {
            Some(k) => fwd.tape.gather_rows(x, k.clone())?,
            None => x,
        };
        if let Some(s) = &self.shortcut {
            skip = s.forward(fwd, skip)?;
        }
        let y = fwd.tape.add(h, skip)?;
        let mcol = graph.queries.mask_col();
        let m = fwd.constant_f64(mcol.len(), 1, &mcol)?;
        fwd.tape.mul_col(y, m)
    }
}
