//! Equivariance and factorization audits shared by the tests and the CLI.

use std::time::Instant;

use rand::Rng;
use rand_distr::StandardNormal;

use super::graph::{build_level, PointSet};
use super::layers::{ConvMode, Fwd, LieConv};
use super::model::{lift_examples, relative_deviation, transform_samples, Head, LieConvNet, ModelConfig};
use super::params::ParamStore;
use crate::diff::{Scalar, Tape, Tensor};
use crate::error::{Error, Result};
use crate::geometry::DistanceConfig;
use crate::groups::{lift, GroupElement, GroupId, LiftMultiplicity, Point};
use crate::matlie::Precision;
use crate::rng::{indexed_stream, stream};

/// Random points for `group`: Gaussian coordinates, or log-normal ones on
/// the positive quadrant for R*xSQ.
pub fn random_points<R: Rng + ?Sized>(group: GroupId, n: usize, c_in: usize, rng: &mut R) -> Vec<Point> {
    let d = group.ambient_dim();
    (0..n)
        .map(|_| {
            let x = (0..d)
                .map(|_| {
                    let g: f64 = rng.sample(StandardNormal);
                    if group == GroupId::RxSQ {
                        (0.5 * g).exp()
                    } else {
                        g
                    }
                })
                .collect();
            let f = (0..c_in).map(|_| rng.random_range(-1.0..1.0)).collect();
            Point::new(x, f)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct EquivarianceReport {
    pub max_deviation: f64,
    pub trials: usize,
}

/// Compares a random-weight model's outputs on an input and on transformed
/// copies of it.
///
/// When the transformations come from the model's own group and its lift
/// is multi-valued, the lifted samples themselves are moved (`u -> w u`)
/// and the graphs rebuilt from a shared seed. Otherwise the input points
/// are transformed and relifted with the same seed.
pub fn check_equivariance(
    cfg: &ModelConfig,
    transform: GroupId,
    n_points: usize,
    n_transforms: usize,
    precision: Precision,
    seed: u64,
) -> Result<EquivarianceReport> {
    if transform.ambient_dim() != cfg.group.ambient_dim() {
        return Err(Error::GroupMismatch {
            left: cfg.group.to_string(),
            right: transform.to_string(),
        });
    }
    let mut model = LieConvNet::new(cfg.clone(), &mut stream(seed, "audit/model"))?;
    let pts = random_points(cfg.group, n_points, cfg.c_in, &mut stream(seed, "audit/input"));
    let examples = vec![pts.clone()];
    let lift_seed = || stream(seed, "audit/lift");
    let graph_seed = || stream(seed, "audit/graph");
    let (samples, ex) = lift_examples(cfg.group, &examples, None, cfg.lifts, &mut lift_seed())?;
    let base = model.prepare_samples(samples.clone(), ex.clone(), 1, &mut graph_seed())?;
    model.calibrate(&base)?;
    let reference = model.predict(&base, precision)?;
    let move_samples = transform == cfg.group && cfg.group.multiplicity() == LiftMultiplicity::OneToMany;
    let mut worst: f64 = 0.0;
    for t in 0..n_transforms {
        let w = GroupElement::random(transform, 1.0, &mut indexed_stream(seed, "audit/transform", t));
        let batch = if move_samples {
            model.prepare_samples(transform_samples(&samples, &w)?, ex.clone(), 1, &mut graph_seed())?
        } else {
            let moved: Result<Vec<Point>> = pts
                .iter()
                .map(|p| Ok(Point::new(w.act(&p.x)?, p.f.clone())))
                .collect();
            let (s, e) = lift_examples(cfg.group, &[moved?], None, cfg.lifts, &mut lift_seed())?;
            model.prepare_samples(s, e, 1, &mut graph_seed())?
        };
        let out = model.predict(&batch, precision)?;
        worst = worst.max(relative_deviation(&out, &reference, 1e-8));
    }
    Ok(EquivarianceReport {
        max_deviation: worst,
        trials: n_transforms,
    })
}

/// A configuration for equivariance audits: random (non-identity) blocks
/// so every layer contributes.
pub fn audit_config(group: GroupId, lifts: usize) -> ModelConfig {
    let mut cfg = ModelConfig::new(group, 2, 16, 2, Head::Scalar);
    cfg.lifts = if group.multiplicity() == LiftMultiplicity::OneToMany { lifts } else { 1 };
    cfg.identity_init = false;
    cfg.dist = DistanceConfig {
        radius: f64::INFINITY,
        alpha: 1.0,
        max_neighbors: 32,
    };
    cfg
}

/// One LieConv layer on one random point set, ready to run either path.
pub struct ConvInstance {
    pub points: Vec<Point>,
    pub store: ParamStore,
    pub conv: LieConv,
    pub graph: super::graph::Graph,
    pub emb: Tensor<f64>,
    pub features: Tensor<f64>,
}

impl ConvInstance {
    pub fn random(
        group: GroupId,
        n: usize,
        c_in: usize,
        c_out: usize,
        hidden: usize,
        dist: &DistanceConfig,
        seed: u64,
    ) -> Result<Self> {
        let mut rng = stream(seed, "conv-instance");
        let pts = random_points(group, n, c_in, &mut rng);
        let samples = lift(&pts, group, 1, &mut rng)?;
        let points = PointSet {
            mask: vec![true; n],
            example_of: vec![0; n],
            n_examples: 1,
        };
        let (level, _, _) = build_level(group, &samples, &points, dist, 1.0, &mut rng)?;
        let mut store = ParamStore::new();
        let d_emb = level.emb.cols();
        let conv = LieConv::new(&mut store, "conv", d_emb, hidden, c_in, c_out, ConvMode::Naive, &mut rng)?;
        conv.kernel.calibrate(&mut store, &level.emb)?;
        let features = Tensor::new(n, c_in, samples.iter().flat_map(|s| s.f.iter().copied()).collect())?;
        Ok(Self {
            points: pts,
            store,
            conv,
            graph: level.graph,
            emb: level.emb,
            features,
        })
    }

    /// Output, widest pair-row tensor (elements), and wall time.
    pub fn run<T: Scalar>(&self, mode: ConvMode) -> Result<(Tensor<f64>, usize, f64)> {
        let start = Instant::now();
        let mut tape = Tape::<T>::new();
        let conv = LieConv {
            kernel: self.conv.kernel.clone(),
            mode,
        };
        let emb = tape.constant(self.emb.cast());
        let f = tape.constant(self.features.cast());
        let mut fwd = Fwd::new(&mut tape, &self.store, false, false);
        let out = conv.forward(&mut fwd, f, emb, &self.graph)?;
        let secs = start.elapsed().as_secs_f64();
        let peak = tape.max_len_with_rows(self.graph.pairs.len());
        let v = tape.value(out);
        Ok((Tensor::new(v.rows(), v.cols(), v.to_f64())?, peak, secs))
    }
}
