//! Vector-field models: Hamiltonian ones (`F = J grad H`) and direct ones
//! (`F = F_theta(z)`), all evaluated on the tape over packed batch states.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::spring::Systems;
use crate::diff::{Dual, Scalar, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::groups::GroupId;
use crate::net::{
    Fwd, Graph, Head, Level, LieConvNet, Linear, ModelConfig, ParamStore, PointSet, PreparedBatch,
};

/// A vector field with parameters, as the trainer and integrator see it.
pub trait FieldModel: Send + Sync {
    fn kind(&self) -> ModelKind;
    fn store(&self) -> &ParamStore;
    fn store_mut(&mut self) -> &mut ParamStore;
    /// `dz/dt` at packed state `z`.
    fn field(&self, z: &[f64], sys: &Systems) -> Result<Vec<f64>>;
    /// `(w^T dF/dz, w^T dF/dtheta)` at `z`, theta in [`ParamStore::flat`] order.
    fn vjp(&self, z: &[f64], w: &[f64], sys: &Systems) -> Result<(Vec<f64>, Vec<f64>)>;
    /// The model's own energy per system, for Hamiltonian models.
    fn energy(&self, _z: &[f64], _sys: &Systems) -> Option<Result<Vec<f64>>> {
        None
    }
    /// Freezes any input standardization to the states in `z`.
    fn calibrate(&mut self, _z: &[f64], _sys: &Systems) -> Result<()> {
        Ok(())
    }
}

/// A scalar energy per system written once for every scalar type.
pub trait EnergyModel: Send + Sync {
    fn kind(&self) -> ModelKind;
    fn store(&self) -> &ParamStore;
    fn store_mut(&mut self) -> &mut ParamStore;
    /// `B x 1` energies from the packed `1 x B*2Nd` state row.
    fn energies<T: Scalar>(&self, fwd: &mut Fwd<T>, z: Var, sys: &Systems) -> Result<Var>;
    fn calibrate(&mut self, _z: &[f64], _sys: &Systems) -> Result<()> {
        Ok(())
    }
}

/// A direct vector field written once for every scalar type.
pub trait DirectModel: Send + Sync {
    fn kind(&self) -> ModelKind;
    fn store(&self) -> &ParamStore;
    fn store_mut(&mut self) -> &mut ParamStore;
    /// `1 x B*2Nd` field from the packed state row.
    fn field_on_tape<T: Scalar>(&self, fwd: &mut Fwd<T>, z: Var, sys: &Systems) -> Result<Var>;
    fn calibrate(&mut self, _z: &[f64], _sys: &Systems) -> Result<()> {
        Ok(())
    }
}

fn check_finite(v: &[f64], what: &str) -> Result<()> {
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numeric(format!("non-finite {what}")));
    }
    Ok(())
}

/// `J g` per system: `(g_p, -g_q)`.
fn apply_j(g: &[f64], sys: &Systems) -> Vec<f64> {
    let half = sys.bodies * sys.dim;
    let mut out = vec![0.0; g.len()];
    for (sb, ob) in g.chunks(2 * half).zip(out.chunks_mut(2 * half)) {
        for i in 0..half {
            ob[i] = sb[half + i];
            ob[half + i] = -sb[i];
        }
    }
    out
}

/// `J^T w` per system: `(-w_p, w_q)`.
fn apply_jt(w: &[f64], sys: &Systems) -> Vec<f64> {
    apply_j(w, sys).iter().map(|x| -x).collect()
}

pub struct Hamiltonian<M>(pub M);

impl<M: EnergyModel> Hamiltonian<M> {
    pub fn inner(&self) -> &M {
        &self.0
    }
}

impl<M: EnergyModel> FieldModel for Hamiltonian<M> {
    fn kind(&self) -> ModelKind {
        self.0.kind()
    }

    fn store(&self) -> &ParamStore {
        self.0.store()
    }

    fn store_mut(&mut self) -> &mut ParamStore {
        self.0.store_mut()
    }

    fn field(&self, z: &[f64], sys: &Systems) -> Result<Vec<f64>> {
        sys.check_state(z)?;
        let mut tape = Tape::<f64>::new();
        let zv = tape.param(Tensor::row(z.to_vec()));
        let e = {
            let mut fwd = Fwd::new(&mut tape, self.0.store(), false, false);
            self.0.energies(&mut fwd, zv, sys)?
        };
        let total = tape.sum(e);
        let g = tape.backward(total)?.get_or_zeros(zv, (1, z.len())).into_data();
        check_finite(&g, "Hamiltonian gradient")?;
        Ok(apply_j(&g, sys))
    }

    fn vjp(&self, z: &[f64], w: &[f64], sys: &Systems) -> Result<(Vec<f64>, Vec<f64>)> {
        sys.check_state(z)?;
        sys.check_state(w)?;
        // Forward-over-reverse: tangent v = J^T w on z makes the tangent of
        // the z adjoint H_zz v and that of the parameter adjoint H_theta,z v.
        let v = apply_jt(w, sys);
        let mut tape = Tape::<Dual<f64>>::new();
        let seeded = z.iter().zip(&v).map(|(a, b)| Dual::new(*a, *b)).collect();
        let zv = tape.param(Tensor::row(seeded));
        let (e, vars) = {
            let mut fwd = Fwd::new(&mut tape, self.0.store(), false, true);
            let e = self.0.energies(&mut fwd, zv, sys)?;
            (e, fwd.vars)
        };
        let total = tape.sum(e);
        let grads = tape.backward(total)?;
        let zbar: Vec<f64> = grads.get_or_zeros(zv, (1, z.len())).data().iter().map(|d| d.eps).collect();
        let tbar = self.0.store().flat_grad(&vars, &grads, |d| d.eps);
        check_finite(&zbar, "Hessian-vector product")?;
        check_finite(&tbar, "parameter Hessian-vector product")?;
        Ok((zbar, tbar))
    }

    fn energy(&self, z: &[f64], sys: &Systems) -> Option<Result<Vec<f64>>> {
        let run = || -> Result<Vec<f64>> {
            sys.check_state(z)?;
            let mut tape = Tape::<f64>::new();
            let zv = tape.constant(Tensor::row(z.to_vec()));
            let mut fwd = Fwd::new(&mut tape, self.0.store(), false, false);
            let e = self.0.energies(&mut fwd, zv, sys)?;
            Ok(tape.value(e).to_f64())
        };
        Some(run())
    }

    fn calibrate(&mut self, z: &[f64], sys: &Systems) -> Result<()> {
        self.0.calibrate(z, sys)
    }
}

pub struct Direct<M>(pub M);

impl<M: DirectModel> FieldModel for Direct<M> {
    fn kind(&self) -> ModelKind {
        self.0.kind()
    }

    fn store(&self) -> &ParamStore {
        self.0.store()
    }

    fn store_mut(&mut self) -> &mut ParamStore {
        self.0.store_mut()
    }

    fn field(&self, z: &[f64], sys: &Systems) -> Result<Vec<f64>> {
        sys.check_state(z)?;
        let mut tape = Tape::<f64>::new();
        let zv = tape.constant(Tensor::row(z.to_vec()));
        let mut fwd = Fwd::new(&mut tape, self.0.store(), false, false);
        let f = self.0.field_on_tape(&mut fwd, zv, sys)?;
        let out = tape.value(f).to_f64();
        check_finite(&out, "vector field")?;
        Ok(out)
    }

    fn vjp(&self, z: &[f64], w: &[f64], sys: &Systems) -> Result<(Vec<f64>, Vec<f64>)> {
        sys.check_state(z)?;
        sys.check_state(w)?;
        let mut tape = Tape::<f64>::new();
        let zv = tape.param(Tensor::row(z.to_vec()));
        let (f, vars) = {
            let mut fwd = Fwd::new(&mut tape, self.0.store(), false, true);
            let f = self.0.field_on_tape(&mut fwd, zv, sys)?;
            (f, fwd.vars)
        };
        let grads = tape.backward_seeded(f, Tensor::row(w.to_vec()))?;
        let zbar = grads.get_or_zeros(zv, (1, z.len())).into_data();
        let tbar = self.0.store().flat_grad(&vars, &grads, |x| x);
        check_finite(&zbar, "field vector-Jacobian product")?;
        Ok((zbar, tbar))
    }

    fn calibrate(&mut self, z: &[f64], sys: &Systems) -> Result<()> {
        self.0.calibrate(z, sys)
    }
}

/// Positions and momenta of a packed state row as `(B N) x d` matrices.
fn split_qp<T: Scalar>(tape: &mut Tape<T>, z: Var, sys: &Systems) -> Result<(Var, Var)> {
    let rows = sys.count() * 2 * sys.bodies;
    let m = tape.reshape(z, rows, sys.dim)?;
    let (qi, pi) = sys.row_split();
    Ok((tape.gather_rows(m, qi)?, tape.gather_rows(m, pi)?))
}

/// `sum_j |p_j|^2 / (2 m_j)` per system, `B x 1`.
fn kinetic<T: Scalar>(tape: &mut Tape<T>, p: Var, sys: &Systems) -> Result<Var> {
    let sq = tape.square(p);
    let s = tape.sum_cols(sq);
    let inv: Vec<T> = sys.masses.iter().map(|m| T::from_f64(0.5 / m)).collect();
    let inv = tape.constant(Tensor::col(inv));
    let per_body = tape.mul_col(s, inv)?;
    tape.segment_sum(per_body, sys.system_of_body(), sys.count())
}

/// The analytic spring Hamiltonian on the tape.
#[derive(Debug, Clone, Default)]
pub struct TrueSpring {
    store: ParamStore,
}

impl EnergyModel for TrueSpring {
    fn kind(&self) -> ModelKind {
        ModelKind::TrueHamiltonian
    }

    fn store(&self) -> &ParamStore {
        &self.store
    }

    fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    fn energies<T: Scalar>(&self, fwd: &mut Fwd<T>, z: Var, sys: &Systems) -> Result<Var> {
        let tape = &mut *fwd.tape;
        let (q, p) = split_qp(tape, z, sys)?;
        let n = sys.bodies;
        let (mut a, mut b, mut coef, mut seg) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for s in 0..sys.count() {
            for j in 0..n {
                for i in 0..j {
                    a.push(s * n + i);
                    b.push(s * n + j);
                    coef.push(T::from_f64(0.5 * sys.springs[s * n + i] * sys.springs[s * n + j]));
                    seg.push(s);
                }
            }
        }
        let qa = tape.gather_rows(q, Arc::new(a))?;
        let qb = tape.gather_rows(q, Arc::new(b))?;
        let d = tape.sub(qa, qb)?;
        let d2 = tape.square(d);
        let d2 = tape.sum_cols(d2);
        let c = tape.constant(Tensor::col(coef));
        let v = tape.mul_col(d2, c)?;
        let v = tape.segment_sum(v, Arc::new(seg), sys.count())?;
        let k = kinetic(tape, p, sys)?;
        tape.add(k, v)
    }
}

/// Which coordinates the learned potential sees.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Invariance {
    /// `[q_i, q_j]`, no symmetry.
    Trivial,
    /// `q_i - q_j`.
    Translation,
    /// `[wrap(theta_i - theta_j), r_i, r_j]` about the origin.
    Rotation,
    /// Rotation embedding of mean-centered positions.
    CenteredRotation,
}

impl Invariance {
    fn group(self, dim: usize) -> Result<GroupId> {
        match self {
            Invariance::Trivial => Ok(GroupId::Trivial { ambient: dim }),
            Invariance::Translation => Ok(GroupId::Translation { k: dim, ambient: dim }),
            Invariance::Rotation | Invariance::CenteredRotation if dim == 2 => Ok(GroupId::SO2),
            _ => Err(Error::Unsupported(format!("rotation-invariant potentials need d = 2, got {dim}"))),
        }
    }
}

/// Complete per-system graph over body rows, with features `(m, k)`.
fn body_batch(sys: &Systems, blocks: usize, extra: Option<&[f64]>) -> Result<PreparedBatch> {
    let rows = sys.masses.len();
    let points = PointSet {
        mask: vec![true; rows],
        example_of: sys.system_of_body().to_vec(),
        n_examples: sys.count(),
    };
    let graph = Graph::complete(&points);
    let levels = if blocks > 0 {
        vec![Level {
            keep: None,
            graph,
            emb: Tensor::zeros(0, 0),
        }]
    } else {
        vec![]
    };
    let mut feats = Vec::with_capacity(rows * 2);
    for r in 0..rows {
        if let Some(x) = extra {
            feats.extend_from_slice(&x[r * sys.dim..(r + 1) * sys.dim]);
        }
        feats.push(sys.masses[r]);
        feats.push(sys.springs[r]);
    }
    let c = feats.len() / rows.max(1);
    Ok(PreparedBatch {
        samples: vec![],
        points,
        features: Tensor::new(rows, c, feats)?,
        levels,
        level_of_block: vec![0; blocks],
    })
}

/// Pair embeddings on the tape, so gradients reach the positions.
fn tape_embedding<T: Scalar>(tape: &mut Tape<T>, q: Var, graph: &Graph, inv: Invariance) -> Result<Var> {
    let pairs = &graph.pairs;
    let ci = Arc::new(pairs.center.clone());
    let mi = Arc::new(pairs.member.clone());
    match inv {
        Invariance::Trivial => {
            let a = tape.gather_rows(q, ci)?;
            let b = tape.gather_rows(q, mi)?;
            tape.concat_cols(&[a, b])
        }
        Invariance::Translation => {
            let a = tape.gather_rows(q, ci)?;
            let b = tape.gather_rows(q, mi)?;
            tape.sub(a, b)
        }
        Invariance::Rotation | Invariance::CenteredRotation => {
            let x = tape.slice_cols(q, 0, 1)?;
            let y = tape.slice_cols(q, 1, 1)?;
            let th = tape.atan2(y, x)?;
            let r2 = tape.square(q);
            let r2 = tape.sum_cols(r2);
            let r = tape.sqrt(r2);
            let ta = tape.gather_rows(th, ci.clone())?;
            let tb = tape.gather_rows(th, mi.clone())?;
            let dt = tape.sub(ta, tb)?;
            let dt = tape.wrap_angle(dt);
            let ra = tape.gather_rows(r, ci)?;
            let rb = tape.gather_rows(r, mi)?;
            tape.concat_cols(&[dt, ra, rb])
        }
    }
}

/// Subtracts each system's mean position.
fn center<T: Scalar>(tape: &mut Tape<T>, q: Var, sys: &Systems) -> Result<Var> {
    let seg = sys.system_of_body();
    let s = tape.segment_sum(q, seg.clone(), sys.count())?;
    let mean = tape.scale(s, 1.0 / sys.bodies as f64);
    let mean = tape.gather_rows(mean, seg)?;
    tape.sub(q, mean)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DynModelConfig {
    pub channels: usize,
    pub blocks: usize,
    pub kernel_hidden: usize,
    pub fc_hidden: usize,
    pub identity_init: bool,
}

impl Default for DynModelConfig {
    fn default() -> Self {
        Self {
            channels: 32,
            blocks: 1,
            kernel_hidden: 32,
            fc_hidden: 128,
            identity_init: false,
        }
    }
}

fn net_config(group: GroupId, c_in: usize, head: Head, cfg: &DynModelConfig) -> ModelConfig {
    let mut m = ModelConfig::new(group, c_in, cfg.channels, cfg.blocks, head);
    m.kernel_hidden = cfg.kernel_hidden;
    m.use_norm = false;
    m.identity_init = cfg.identity_init;
    m
}

/// `H = K(p, m) + V_theta(q; m, k)` with a LieConv network for `V`.
pub struct HLieConv {
    pub invariance: Invariance,
    pub net: LieConvNet,
}

impl HLieConv {
    pub fn new<R: Rng + ?Sized>(invariance: Invariance, dim: usize, cfg: &DynModelConfig, rng: &mut R) -> Result<Self> {
        let group = invariance.group(dim)?;
        Ok(Self {
            invariance,
            net: LieConvNet::new(net_config(group, 2, Head::Scalar, cfg), rng)?,
        })
    }

    fn positions<T: Scalar>(&self, tape: &mut Tape<T>, z: Var, sys: &Systems) -> Result<(Var, Var)> {
        let (q, p) = split_qp(tape, z, sys)?;
        let q = if self.invariance == Invariance::CenteredRotation {
            center(tape, q, sys)?
        } else {
            q
        };
        Ok((q, p))
    }
}

impl EnergyModel for HLieConv {
    fn kind(&self) -> ModelKind {
        match self.invariance {
            Invariance::Trivial => ModelKind::HLieConvTrivial,
            Invariance::Translation => ModelKind::HLieConvT2,
            Invariance::Rotation => ModelKind::HLieConvSo2,
            Invariance::CenteredRotation => ModelKind::HLieConvSo2Centered,
        }
    }

    fn store(&self) -> &ParamStore {
        &self.net.store
    }

    fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.net.store
    }

    fn energies<T: Scalar>(&self, fwd: &mut Fwd<T>, z: Var, sys: &Systems) -> Result<Var> {
        let batch = body_batch(sys, self.net.cfg.blocks, None)?;
        let (q, p) = self.positions(fwd.tape, z, sys)?;
        let embs = match batch.levels.first() {
            Some(l) => vec![tape_embedding(fwd.tape, q, &l.graph, self.invariance)?],
            None => vec![],
        };
        let x = fwd.tape.constant(batch.features.cast());
        let v = self.net.forward(fwd, &batch, x, &embs)?;
        let k = kinetic(fwd.tape, p, sys)?;
        fwd.tape.add(k, v)
    }

    fn calibrate(&mut self, z: &[f64], sys: &Systems) -> Result<()> {
        let mut batch = body_batch(sys, self.net.cfg.blocks, None)?;
        if batch.levels.is_empty() {
            return Ok(());
        }
        let mut tape = Tape::<f64>::new();
        let zv = tape.constant(Tensor::row(z.to_vec()));
        let (q, _) = self.positions(&mut tape, zv, sys)?;
        let e = tape_embedding(&mut tape, q, &batch.levels[0].graph, self.invariance)?;
        batch.levels[0].emb = tape.value(e).clone();
        self.net.calibrate(&batch)
    }
}

/// `F_theta(z)` from a T(d)-equivariant LieConv network: positions enter
/// only through `q_i - q_j`, and each body's output is `(dq, dp)`.
pub struct LieConvField {
    pub net: LieConvNet,
}

impl LieConvField {
    pub fn new<R: Rng + ?Sized>(dim: usize, cfg: &DynModelConfig, rng: &mut R) -> Result<Self> {
        let group = GroupId::Translation { k: dim, ambient: dim };
        Ok(Self {
            net: LieConvNet::new(net_config(group, dim + 2, Head::PerPoint(2 * dim), cfg), rng)?,
        })
    }

    fn inputs<T: Scalar>(&self, tape: &mut Tape<T>, z: Var, sys: &Systems) -> Result<(PreparedBatch, Var, Vec<Var>)> {
        let batch = body_batch(sys, self.net.cfg.blocks, None)?;
        let (q, p) = split_qp(tape, z, sys)?;
        let mk = Tensor::new(
            sys.masses.len(),
            2,
            sys.masses.iter().zip(&sys.springs).flat_map(|(m, k)| [T::from_f64(*m), T::from_f64(*k)]).collect(),
        )?;
        let mk = tape.constant(mk);
        let x = tape.concat_cols(&[p, mk])?;
        let embs = match batch.levels.first() {
            Some(l) => vec![tape_embedding(tape, q, &l.graph, Invariance::Translation)?],
            None => vec![],
        };
        Ok((batch, x, embs))
    }
}

impl DirectModel for LieConvField {
    fn kind(&self) -> ModelKind {
        ModelKind::LieConvT2
    }

    fn store(&self) -> &ParamStore {
        &self.net.store
    }

    fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.net.store
    }

    fn field_on_tape<T: Scalar>(&self, fwd: &mut Fwd<T>, z: Var, sys: &Systems) -> Result<Var> {
        let (batch, x, embs) = self.inputs(fwd.tape, z, sys)?;
        let out = self.net.forward(fwd, &batch, x, &embs)?;
        // rows are bodies with [dq, dp]; regroup into the packed layout
        let (n, d) = (sys.bodies, sys.dim);
        let mut perm = Vec::with_capacity(sys.total_len());
        for b in 0..sys.count() {
            for s in 0..2 {
                for j in 0..n {
                    for c in 0..d {
                        perm.push((b * n + j) * 2 * d + s * d + c);
                    }
                }
            }
        }
        fwd.tape.permute(out, Arc::new(perm), 1, sys.total_len())
    }

    fn calibrate(&mut self, z: &[f64], sys: &Systems) -> Result<()> {
        let mut tape = Tape::<f64>::new();
        let zv = tape.constant(Tensor::row(z.to_vec()));
        let (mut batch, _, embs) = self.inputs(&mut tape, zv, sys)?;
        if let Some(e) = embs.first() {
            batch.levels[0].emb = tape.value(*e).clone();
            self.net.calibrate(&batch)?;
        }
        Ok(())
    }
}

/// Fully connected `F_theta(z, m, k)` on each whole system.
pub struct FcField {
    pub bodies: usize,
    pub dim: usize,
    store: ParamStore,
    layers: Vec<Linear>,
}

impl FcField {
    pub fn new<R: Rng + ?Sized>(bodies: usize, dim: usize, hidden: usize, rng: &mut R) -> Result<Self> {
        let mut store = ParamStore::new();
        let d_in = 2 * bodies * dim + 2 * bodies;
        let widths = [d_in, hidden, hidden, 2 * bodies * dim];
        let layers = (0..3)
            .map(|i| Linear::new(&mut store, &format!("fc{i}"), widths[i], widths[i + 1], false, rng))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            bodies,
            dim,
            store,
            layers,
        })
    }
}

impl DirectModel for FcField {
    fn kind(&self) -> ModelKind {
        ModelKind::Fc
    }

    fn store(&self) -> &ParamStore {
        &self.store
    }

    fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    fn field_on_tape<T: Scalar>(&self, fwd: &mut Fwd<T>, z: Var, sys: &Systems) -> Result<Var> {
        if (sys.bodies, sys.dim) != (self.bodies, self.dim) {
            return Err(Error::Dimension(format!(
                "model built for {} bodies in {}D, got {} in {}D",
                self.bodies, self.dim, sys.bodies, sys.dim
            )));
        }
        let b = sys.count();
        let zm = fwd.tape.reshape(z, b, sys.state_len())?;
        let mut mk = Vec::with_capacity(b * 2 * sys.bodies);
        for s in 0..b {
            let r = s * sys.bodies..(s + 1) * sys.bodies;
            mk.extend(sys.masses[r.clone()].iter().map(|v| T::from_f64(*v)));
            mk.extend(sys.springs[r].iter().map(|v| T::from_f64(*v)));
        }
        let mk = fwd.tape.constant(Tensor::new(b, 2 * sys.bodies, mk)?);
        let mut h = fwd.tape.concat_cols(&[zm, mk])?;
        for (i, l) in self.layers.iter().enumerate() {
            h = l.forward(fwd, h)?;
            if i + 1 < self.layers.len() {
                h = fwd.tape.swish(h);
            }
        }
        fwd.tape.reshape(h, 1, sys.total_len())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ModelKind {
    #[serde(rename = "true-hamiltonian")]
    TrueHamiltonian,
    #[serde(rename = "fc")]
    Fc,
    #[serde(rename = "hlieconv-trivial")]
    HLieConvTrivial,
    #[serde(rename = "hlieconv-t2")]
    HLieConvT2,
    #[serde(rename = "hlieconv-so2")]
    HLieConvSo2,
    #[serde(rename = "hlieconv-so2c")]
    HLieConvSo2Centered,
    #[serde(rename = "lieconv-t2")]
    LieConvT2,
}

impl ModelKind {
    pub fn all() -> [ModelKind; 7] {
        [
            ModelKind::TrueHamiltonian,
            ModelKind::Fc,
            ModelKind::HLieConvTrivial,
            ModelKind::HLieConvT2,
            ModelKind::HLieConvSo2,
            ModelKind::HLieConvSo2Centered,
            ModelKind::LieConvT2,
        ]
    }

    pub fn token(self) -> &'static str {
        match self {
            ModelKind::TrueHamiltonian => "true-hamiltonian",
            ModelKind::Fc => "fc",
            ModelKind::HLieConvTrivial => "hlieconv-trivial",
            ModelKind::HLieConvT2 => "hlieconv-t2",
            ModelKind::HLieConvSo2 => "hlieconv-so2",
            ModelKind::HLieConvSo2Centered => "hlieconv-so2c",
            ModelKind::LieConvT2 => "lieconv-t2",
        }
    }

    pub fn is_hamiltonian(self) -> bool {
        !matches!(self, ModelKind::Fc | ModelKind::LieConvT2)
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelKind::all()
            .into_iter()
            .find(|k| k.token() == s)
            .ok_or_else(|| {
                let names: Vec<&str> = ModelKind::all().iter().map(|k| k.token()).collect();
                Error::Config(format!("unknown model '{s}', expected one of {}", names.join(", ")))
            })
    }
}

pub fn build_model<R: Rng + ?Sized>(
    kind: ModelKind,
    cfg: &DynModelConfig,
    bodies: usize,
    dim: usize,
    rng: &mut R,
) -> Result<Box<dyn FieldModel>> {
    Ok(match kind {
        ModelKind::TrueHamiltonian => Box::new(Hamiltonian(TrueSpring::default())),
        ModelKind::Fc => Box::new(Direct(FcField::new(bodies, dim, cfg.fc_hidden, rng)?)),
        ModelKind::HLieConvTrivial => Box::new(Hamiltonian(HLieConv::new(Invariance::Trivial, dim, cfg, rng)?)),
        ModelKind::HLieConvT2 => Box::new(Hamiltonian(HLieConv::new(Invariance::Translation, dim, cfg, rng)?)),
        ModelKind::HLieConvSo2 => Box::new(Hamiltonian(HLieConv::new(Invariance::Rotation, dim, cfg, rng)?)),
        ModelKind::HLieConvSo2Centered => {
            Box::new(Hamiltonian(HLieConv::new(Invariance::CenteredRotation, dim, cfg, rng)?))
        }
        ModelKind::LieConvT2 => Box::new(Direct(LieConvField::new(dim, cfg, rng)?)),
    })
}
