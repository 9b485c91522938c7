use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::graph::{build_level, embedding_dim, Level, PointSet};
use super::layers::{global_pool, Bottleneck, ConvMode, Fwd, Linear, MaskedBatchNorm};
use super::params::ParamStore;
use crate::diff::{Scalar, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::geometry::DistanceConfig;
use crate::groups::{lift, GroupElement, GroupId, LiftedSample, Point};
use crate::matlie::Precision;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "outputs")]
pub enum Head {
    /// One invariant scalar per example.
    Scalar,
    /// `c` logits per example.
    Classes(usize),
    /// `c` values per (final-level) sample, no pooling.
    PerPoint(usize),
}

impl Head {
    pub fn outputs(self) -> usize {
        match self {
            Head::Scalar => 1,
            Head::Classes(c) | Head::PerPoint(c) => c,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub group: GroupId,
    pub c_in: usize,
    /// Width `k` after the input linear layer.
    pub channels: usize,
    pub blocks: usize,
    /// Lifts per input point.
    pub lifts: usize,
    pub kernel_hidden: usize,
    pub head: Head,
    pub dist: DistanceConfig,
    /// Per-block farthest-point keep fraction `s`; 1 disables downsampling.
    pub downsample: f64,
    pub use_norm: bool,
    pub conv_mode: ConvMode,
    /// Zero the last linear of each block so it starts as the identity.
    pub identity_init: bool,
}

impl ModelConfig {
    pub fn new(group: GroupId, c_in: usize, channels: usize, blocks: usize, head: Head) -> Self {
        Self {
            group,
            c_in,
            channels,
            blocks,
            lifts: 1,
            kernel_hidden: 32,
            head,
            dist: DistanceConfig::global(0.0),
            downsample: 1.0,
            use_norm: true,
            conv_mode: ConvMode::Factored,
            identity_init: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.c_in == 0 || self.channels == 0 || self.kernel_hidden == 0 || self.head.outputs() == 0 {
            return Err(Error::Config("channel counts must be positive".into()));
        }
        if self.lifts == 0 {
            return Err(Error::Config("lifts per point must be at least 1".into()));
        }
        if !(self.downsample > 0.0 && self.downsample <= 1.0) {
            return Err(Error::Config(format!(
                "downsample fraction must be in (0, 1], got {}",
                self.downsample
            )));
        }
        self.dist.validate()
    }

    /// Output width of block `b`: `k s^{-(b+1)/2}` rounded to a multiple of 4.
    pub fn block_channels(&self, b: usize) -> usize {
        if self.downsample >= 1.0 {
            return self.channels;
        }
        let c = self.channels as f64 * self.downsample.powf(-((b + 1) as f64) / 2.0);
        ((c / 4.0).round() as usize).max(1) * 4
    }

    /// Radius of block `b`'s neighborhoods, grown by `s^{-1/2}` per level.
    pub fn block_dist(&self, b: usize) -> DistanceConfig {
        let mut d = self.dist;
        if self.downsample < 1.0 {
            d.radius *= self.downsample.powf(-(b as f64) / 2.0);
        }
        d
    }
}

/// Lifted samples and all per-level graphs for a batch of examples.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedBatch {
    pub samples: Vec<LiftedSample>,
    pub points: PointSet,
    pub features: Tensor<f64>,
    pub levels: Vec<Level>,
    pub level_of_block: Vec<usize>,
}

impl PreparedBatch {
    /// Rows of the model output for a per-point head.
    pub fn output_points(&self) -> &PointSet {
        match self.level_of_block.last() {
            Some(&l) => &self.levels[l].graph.queries,
            None => &self.points,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LieConvNet {
    pub cfg: ModelConfig,
    pub store: ParamStore,
    pub embed: Linear,
    pub blocks: Vec<Bottleneck>,
    pub norm: Option<MaskedBatchNorm>,
    pub head: Linear,
}

impl LieConvNet {
    pub fn new<R: Rng + ?Sized>(cfg: ModelConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let mut store = ParamStore::new();
        let embed = Linear::new(&mut store, "embed", cfg.c_in, cfg.channels, false, rng)?;
        let d_emb = embedding_dim(cfg.group);
        let mut blocks = Vec::with_capacity(cfg.blocks);
        let mut c = cfg.channels;
        for b in 0..cfg.blocks {
            let c_out = cfg.block_channels(b);
            blocks.push(Bottleneck::new(
                &mut store,
                &format!("block{b}"),
                c,
                c_out,
                d_emb,
                cfg.kernel_hidden,
                cfg.use_norm,
                cfg.identity_init,
                cfg.conv_mode,
                rng,
            )?);
            c = c_out;
        }
        let norm = cfg.use_norm.then(|| MaskedBatchNorm::new(&mut store, "norm", c)).transpose()?;
        let head = Linear::new(&mut store, "head", c, cfg.head.outputs(), false, rng)?;
        Ok(Self {
            cfg,
            store,
            embed,
            blocks,
            norm,
            head,
        })
    }

    /// Lifts every example and builds its graphs.
    pub fn prepare<R: Rng + ?Sized>(
        &self,
        examples: &[Vec<Point>],
        masks: Option<&[Vec<bool>]>,
        rng: &mut R,
    ) -> Result<PreparedBatch> {
        let (samples, example_of) = lift_examples(self.cfg.group, examples, masks, self.cfg.lifts, rng)?;
        self.prepare_samples(samples, example_of, examples.len(), rng)
    }

    /// Builds graphs over already lifted samples.
    pub fn prepare_samples<R: Rng + ?Sized>(
        &self,
        samples: Vec<LiftedSample>,
        example_of: Vec<usize>,
        n_examples: usize,
        rng: &mut R,
    ) -> Result<PreparedBatch> {
        if samples.len() != example_of.len() {
            return Err(Error::Dimension("one example index per sample required".into()));
        }
        let c_in = self.cfg.c_in;
        if let Some(s) = samples.iter().find(|s| s.f.len() != c_in) {
            return Err(Error::Dimension(format!(
                "point features have {} channels, model expects {c_in}",
                s.f.len()
            )));
        }
        let points = PointSet {
            mask: samples.iter().map(|s| s.mask).collect(),
            example_of,
            n_examples,
        };
        let features = Tensor::new(samples.len(), c_in, samples.iter().flat_map(|s| s.f.iter().copied()).collect())?;
        let mut levels = Vec::new();
        let mut level_of_block = Vec::new();
        let mut cur = samples.clone();
        let mut cur_pts = points.clone();
        for b in 0..self.cfg.blocks {
            if self.cfg.downsample >= 1.0 && b > 0 {
                level_of_block.push(0);
                continue;
            }
            let (level, next, q) = build_level(
                self.cfg.group,
                &cur,
                &cur_pts,
                &self.cfg.block_dist(b),
                self.cfg.downsample,
                rng,
            )?;
            level_of_block.push(levels.len());
            levels.push(level);
            cur = next;
            cur_pts = q;
        }
        Ok(PreparedBatch {
            samples,
            points,
            features,
            levels,
            level_of_block,
        })
    }

    /// Freezes each kernel's input standardization to this batch.
    pub fn calibrate(&mut self, batch: &PreparedBatch) -> Result<()> {
        for (b, block) in self.blocks.iter().enumerate() {
            let emb = &batch.levels[batch.level_of_block[b]].emb;
            block.conv.kernel.calibrate(&mut self.store, emb)?;
        }
        Ok(())
    }

    /// Forward pass with features `x` and one embedding var per level
    /// (usually constants from the batch, or computed on the tape).
    pub fn forward<T: Scalar>(&self, fwd: &mut Fwd<T>, batch: &PreparedBatch, x: Var, embs: &[Var]) -> Result<Var> {
        if embs.len() != batch.levels.len() {
            return Err(Error::Dimension(format!(
                "{} embedding inputs for {} levels",
                embs.len(),
                batch.levels.len()
            )));
        }
        let mut h = self.embed.forward(fwd, x)?;
        let mut pts = &batch.points;
        for (b, block) in self.blocks.iter().enumerate() {
            let li = batch.level_of_block[b];
            let level = &batch.levels[li];
            let keep = if self.cfg.downsample < 1.0 { level.keep.as_ref() } else { None };
            h = block.forward(fwd, h, embs[li], &level.graph, pts, keep)?;
            pts = &level.graph.queries;
        }
        if let Some(n) = &self.norm {
            h = n.forward(fwd, h, pts)?;
        }
        h = fwd.tape.swish(h);
        h = self.head.forward(fwd, h)?;
        match self.cfg.head {
            Head::PerPoint(_) => {
                let mcol = pts.mask_col();
                let m = fwd.constant_f64(mcol.len(), 1, &mcol)?;
                fwd.tape.mul_col(h, m)
            }
            _ => global_pool(fwd, h, pts),
        }
    }

    /// Puts the batch's features and embeddings on the tape as constants.
    pub fn bind_batch<T: Scalar>(&self, tape: &mut Tape<T>, batch: &PreparedBatch) -> (Var, Vec<Var>) {
        let x = tape.constant(batch.features.cast());
        let embs = batch.levels.iter().map(|l| tape.constant(l.emb.cast())).collect();
        (x, embs)
    }

    /// Evaluation-mode output on scalar type `T`, returned in f64.
    pub fn predict_as<T: Scalar>(&self, batch: &PreparedBatch) -> Result<Tensor<f64>> {
        let mut tape = Tape::<T>::new();
        let (x, embs) = self.bind_batch(&mut tape, batch);
        let mut fwd = Fwd::new(&mut tape, &self.store, false, false);
        let out = self.forward(&mut fwd, batch, x, &embs)?;
        let t = tape.value(out);
        Tensor::new(t.rows(), t.cols(), t.to_f64())
    }

    pub fn predict(&self, batch: &PreparedBatch, precision: Precision) -> Result<Tensor<f64>> {
        match precision {
            Precision::Single => self.predict_as::<f32>(batch),
            Precision::Double => self.predict_as::<f64>(batch),
        }
    }
}

/// Lifts examples and concatenates their samples.
pub fn lift_examples<R: Rng + ?Sized>(
    group: GroupId,
    examples: &[Vec<Point>],
    masks: Option<&[Vec<bool>]>,
    k: usize,
    rng: &mut R,
) -> Result<(Vec<LiftedSample>, Vec<usize>)> {
    if let Some(m) = masks {
        if m.len() != examples.len() || m.iter().zip(examples).any(|(a, b)| a.len() != b.len()) {
            return Err(Error::Dimension("mask shape differs from the examples".into()));
        }
    }
    let mut samples = Vec::new();
    let mut example_of = Vec::new();
    for (e, pts) in examples.iter().enumerate() {
        let mut s = lift(pts, group, k, rng)?;
        if let Some(m) = masks {
            for smp in &mut s {
                smp.mask = m[e][smp.source_index];
            }
        }
        example_of.extend(std::iter::repeat_n(e, s.len()));
        samples.extend(s);
    }
    Ok((samples, example_of))
}

/// `u -> w u` on every sample; orbits and features are unchanged.
pub fn transform_samples(samples: &[LiftedSample], w: &GroupElement) -> Result<Vec<LiftedSample>> {
    samples
        .iter()
        .map(|s| {
            Ok(LiftedSample {
                u: w.compose(&s.u)?,
                ..s.clone()
            })
        })
        .collect()
}

/// `max |a - b| / max |b|`, with the scale floored at `floor`.
pub fn relative_deviation(a: &Tensor<f64>, b: &Tensor<f64>, floor: f64) -> f64 {
    let scale = b.data().iter().fold(floor, |m, v| m.max(v.abs()));
    a.max_abs_diff(b) / scale
}

/// Indices kept at each downsampled level (composition with the previous
/// levels), for inspection.
pub fn kept_sample_indices(batch: &PreparedBatch) -> Vec<Vec<usize>> {
    let mut cur: Vec<usize> = (0..batch.samples.len()).collect();
    let mut out = Vec::new();
    for l in &batch.levels {
        if let Some(k) = &l.keep {
            let k: &Arc<Vec<usize>> = k;
            cur = k.iter().map(|&i| cur[i]).collect();
        }
        out.push(cur.clone());
    }
    out
}
