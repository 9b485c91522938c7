//! Convolution graphs: which (center, member) pairs interact, with the
//! pair embeddings `a_ij = [log(u_j^-1 u_i), q_i, q_j]` fed to kernels.

use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;

use crate::diff::{PairIndex, Tensor};
use crate::error::{Error, Result};
use crate::geometry::{distance_matrix, farthest_point_from, neighborhoods_from_distances, DistanceConfig};
use crate::groups::{GroupId, LiftedSample};

/// Row bookkeeping for a set of points spread over several examples.
#[derive(Debug, Clone, PartialEq)]
pub struct PointSet {
    pub mask: Vec<bool>,
    pub example_of: Vec<usize>,
    pub n_examples: usize,
}

impl PointSet {
    pub fn len(&self) -> usize {
        self.mask.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mask.is_empty()
    }

    pub fn mask_col(&self) -> Vec<f64> {
        self.mask.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect()
    }

    /// `1 / (valid points)` per example; errors when an example has none.
    pub fn inv_counts(&self) -> Result<Vec<f64>> {
        let mut counts = vec![0usize; self.n_examples];
        for (m, e) in self.mask.iter().zip(&self.example_of) {
            if *m {
                counts[*e] += 1;
            }
        }
        counts
            .iter()
            .map(|&c| {
                if c == 0 {
                    Err(Error::Numeric("pooling over an example with no valid elements".into()))
                } else {
                    Ok(1.0 / c as f64)
                }
            })
            .collect()
    }
}

/// One convolution's connectivity. Centers index `queries`; members index
/// the previous level's points.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    pub pairs: Arc<PairIndex>,
    /// `1 / n_i`, zero for masked or empty centers.
    pub inv_n: Vec<f64>,
    pub queries: PointSet,
}

impl Graph {
    /// Every valid point of an example sees every valid point of the same
    /// example (r = infinity, no cap).
    pub fn complete(points: &PointSet) -> Graph {
        let n = points.len();
        let mut center = Vec::new();
        let mut member = Vec::new();
        let mut inv_n = vec![0.0; n];
        for i in 0..n {
            if !points.mask[i] {
                continue;
            }
            let before = center.len();
            for j in 0..n {
                if points.mask[j] && points.example_of[j] == points.example_of[i] {
                    center.push(i);
                    member.push(j);
                }
            }
            inv_n[i] = 1.0 / (center.len() - before) as f64;
        }
        Graph {
            pairs: Arc::new(PairIndex {
                center,
                member,
                n_centers: n,
            }),
            inv_n,
            queries: points.clone(),
        }
    }
}

/// A resolution level: optional subsample of the previous level's points,
/// its graph, and precomputed pair embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct Level {
    pub keep: Option<Arc<Vec<usize>>>,
    pub graph: Graph,
    pub emb: Tensor<f64>,
}

/// Width of `a_ij` for a group: `dim(G) + 2 dim(orbit)`.
pub fn embedding_dim(group: GroupId) -> usize {
    group.algebra_dim() + 2 * group.orbit_dim()
}

/// `[log(u_j^-1 u_i), q_i, q_j]` for center sample `a` (i) and member `b` (j).
pub fn pair_embedding(a: &LiftedSample, b: &LiftedSample) -> Result<Vec<f64>> {
    let rel = b.u.inverse().compose(&a.u)?;
    let mut v = rel.log().into_coords();
    v.extend_from_slice(&a.q.embed);
    v.extend_from_slice(&b.q.embed);
    Ok(v)
}

/// Embeddings for every pair, rows in pair order.
pub fn embed_pairs(
    group: GroupId,
    centers: &[&LiftedSample],
    members: &[LiftedSample],
    pairs: &PairIndex,
) -> Result<Tensor<f64>> {
    let d = embedding_dim(group);
    let rows: Result<Vec<Vec<f64>>> = (0..pairs.len())
        .into_par_iter()
        .map(|p| pair_embedding(centers[pairs.center[p]], &members[pairs.member[p]]))
        .collect();
    let rows = rows?;
    if let Some(r) = rows.iter().find(|r| r.len() != d) {
        return Err(Error::Dimension(format!("pair embedding of width {} for {group}, expected {d}", r.len())));
    }
    Tensor::new(pairs.len(), d, rows.concat())
}

/// Builds the graph of level `level` over `samples` (all examples
/// concatenated, `example_of` per sample). With `fraction < 1`, queries are
/// a per-example farthest-point subsample of that fraction (first index
/// drawn from `rng`).
pub fn build_level<R: Rng + ?Sized>(
    group: GroupId,
    samples: &[LiftedSample],
    points: &PointSet,
    dist: &DistanceConfig,
    fraction: f64,
    rng: &mut R,
) -> Result<(Level, Vec<LiftedSample>, PointSet)> {
    let n = samples.len();
    if points.len() != n {
        return Err(Error::Dimension("point set and samples differ in length".into()));
    }
    let mut keep: Vec<usize> = Vec::new();
    let mut center = Vec::new();
    let mut member = Vec::new();
    let mut inv_n = Vec::new();
    for e in 0..points.n_examples {
        let idx: Vec<usize> = (0..n).filter(|&i| points.example_of[i] == e).collect();
        if idx.is_empty() {
            continue;
        }
        let local: Vec<LiftedSample> = idx.iter().map(|&i| samples[i].clone()).collect();
        let mask: Vec<bool> = idx.iter().map(|&i| points.mask[i]).collect();
        let m = local.len();
        let dmat = distance_matrix(&local, dist)?;
        let queries: Vec<usize> = if fraction < 1.0 {
            let valid: Vec<usize> = (0..m).filter(|&i| mask[i]).collect();
            let target = ((valid.len() as f64 * fraction).ceil() as usize).clamp(1, valid.len().max(1));
            if valid.is_empty() {
                vec![]
            } else {
                let nv = valid.len();
                let sub: Vec<f64> = valid
                    .iter()
                    .flat_map(|&a| valid.iter().map(move |&b| (a, b)))
                    .map(|(a, b)| dmat[a * m + b])
                    .collect();
                let first = rng.random_range(0..nv);
                let mut chosen: Vec<usize> = farthest_point_from(&sub, nv, target, first)?
                    .into_iter()
                    .map(|k| valid[k])
                    .collect();
                chosen.sort_unstable();
                chosen
            }
        } else {
            (0..m).collect()
        };
        let nbhds = neighborhoods_from_distances(&dmat, &mask, dist, rng)?;
        for &qi in &queries {
            let q_row = keep.len();
            keep.push(idx[qi]);
            let members = &nbhds[qi].member_indices;
            for &j in members {
                center.push(q_row);
                member.push(idx[j]);
            }
            inv_n.push(if members.is_empty() { 0.0 } else { 1.0 / members.len() as f64 });
        }
    }
    let pairs = Arc::new(PairIndex {
        center,
        member,
        n_centers: keep.len(),
    });
    let centers: Vec<&LiftedSample> = keep.iter().map(|&i| &samples[i]).collect();
    let emb = embed_pairs(group, &centers, samples, &pairs)?;
    let queries = PointSet {
        mask: keep.iter().map(|&i| points.mask[i]).collect(),
        example_of: keep.iter().map(|&i| points.example_of[i]).collect(),
        n_examples: points.n_examples,
    };
    let next_samples = keep.iter().map(|&i| samples[i].clone()).collect();
    let identity = keep.len() == n && keep.iter().enumerate().all(|(a, &b)| a == b);
    let level = Level {
        keep: if identity { None } else { Some(Arc::new(keep)) },
        graph: Graph {
            pairs,
            inv_n,
            queries: queries.clone(),
        },
        emb,
    };
    Ok((level, next_samples, queries))
}
