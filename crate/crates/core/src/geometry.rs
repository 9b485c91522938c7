//! Left-invariant distances, radius neighborhoods and subsampling.

use rand::seq::index;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::groups::{GroupElement, LiftedSample};
use crate::matlie::frobenius_norm;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistanceConfig {
    pub radius: f64,
    /// Weight of the orbit term, `d^2 = d_G^2 + alpha ||q_a - q_b||^2`.
    pub alpha: f64,
    /// Neighborhoods larger than this are randomly thinned to this size.
    pub max_neighbors: usize,
}

impl DistanceConfig {
    pub fn new(radius: f64, alpha: f64, max_neighbors: usize) -> Result<Self> {
        let cfg = Self {
            radius,
            alpha,
            max_neighbors,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Every sample sees every other sample.
    pub fn global(alpha: f64) -> Self {
        Self {
            radius: f64::INFINITY,
            alpha,
            max_neighbors: usize::MAX,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.radius > 0.0) {
            return Err(Error::Config(format!("radius must be positive, got {}", self.radius)));
        }
        if !(self.alpha >= 0.0) || !self.alpha.is_finite() {
            return Err(Error::Config(format!("orbit weight must be finite and >= 0, got {}", self.alpha)));
        }
        if self.max_neighbors == 0 {
            return Err(Error::Config("max neighbors must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Neighborhood {
    pub center_index: usize,
    pub member_indices: Vec<usize>,
    pub radius: f64,
}

/// `||log(v^-1 u)||_F`.
pub fn group_distance(u: &GroupElement, v: &GroupElement) -> Result<f64> {
    let rel = v.inverse().compose(u)?;
    Ok(frobenius_norm(&rel.log().hat()))
}

pub fn pair_distance(a: &LiftedSample, b: &LiftedSample, cfg: &DistanceConfig) -> Result<f64> {
    let dg = group_distance(&a.u, &b.u)?;
    if cfg.alpha == 0.0 || a.q.embed.is_empty() {
        return Ok(dg);
    }
    if a.q.embed.len() != b.q.embed.len() {
        return Err(Error::Dimension("orbit embeddings differ in length".into()));
    }
    let dq2: f64 = a.q.embed.iter().zip(&b.q.embed).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok((dg * dg + cfg.alpha * dq2).sqrt())
}

/// Dense row-major `N x N` matrix of pair distances, rows in parallel.
pub fn distance_matrix(samples: &[LiftedSample], cfg: &DistanceConfig) -> Result<Vec<f64>> {
    let n = samples.len();
    let rows: Result<Vec<Vec<f64>>> = (0..n)
        .into_par_iter()
        .map(|i| {
            (0..n)
                .map(|j| {
                    if i == j {
                        Ok(0.0)
                    } else {
                        pair_distance(&samples[i], &samples[j], cfg)
                    }
                })
                .collect()
        })
        .collect();
    Ok(rows?.concat())
}

/// Radius neighborhoods (`d <= r`) from a precomputed distance matrix.
/// Masked samples never appear as members; a masked center gets an empty
/// neighborhood. Oversized neighborhoods keep a uniform random subset of
/// `max_neighbors`, drawn sequentially by center so results do not depend
/// on thread count.
pub fn neighborhoods_from_distances<R: Rng + ?Sized>(
    dist: &[f64],
    mask: &[bool],
    cfg: &DistanceConfig,
    rng: &mut R,
) -> Result<Vec<Neighborhood>> {
    cfg.validate()?;
    let n = mask.len();
    if dist.len() != n * n {
        return Err(Error::Dimension(format!(
            "distance matrix has {} entries for {n} samples",
            dist.len()
        )));
    }
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut members: Vec<usize> = if mask[i] {
            (0..n)
                .filter(|&j| mask[j] && dist[i * n + j] <= cfg.radius)
                .collect()
        } else {
            Vec::new()
        };
        if members.len() > cfg.max_neighbors {
            let mut keep: Vec<usize> = index::sample(rng, members.len(), cfg.max_neighbors)
                .into_iter()
                .map(|k| members[k])
                .collect();
            keep.sort_unstable();
            members = keep;
        }
        out.push(Neighborhood {
            center_index: i,
            member_indices: members,
            radius: cfg.radius,
        });
    }
    Ok(out)
}

pub fn neighborhood_query<R: Rng + ?Sized>(
    samples: &[LiftedSample],
    cfg: &DistanceConfig,
    rng: &mut R,
) -> Result<Vec<Neighborhood>> {
    if samples.is_empty() {
        return Err(Error::Size {
            requested: 1,
            available: 0,
        });
    }
    let dist = distance_matrix(samples, cfg)?;
    let mask: Vec<bool> = samples.iter().map(|s| s.mask).collect();
    neighborhoods_from_distances(&dist, &mask, cfg, rng)
}

/// Radius at which an average neighborhood holds `fraction` of all samples:
/// the `fraction` quantile of all off-diagonal pair distances.
pub fn radius_for_fraction(dist: &[f64], n: usize, fraction: f64) -> Result<f64> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Config(format!("fraction {fraction} not in (0, 1]")));
    }
    let mut d: Vec<f64> = (0..n)
        .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
        .map(|(i, j)| dist[i * n + j])
        .collect();
    if d.is_empty() {
        return Ok(f64::INFINITY);
    }
    d.sort_by(f64::total_cmp);
    let k = ((fraction * d.len() as f64).ceil() as usize).clamp(1, d.len());
    Ok(d[k - 1])
}

/// Greedy farthest-point traversal from a given first index. Ties go to the
/// lowest index. Returns indices in selection order.
pub fn farthest_point_from(dist: &[f64], n: usize, p: usize, first: usize) -> Result<Vec<usize>> {
    if p > n {
        return Err(Error::Size {
            requested: p,
            available: n,
        });
    }
    if p == 0 {
        return Ok(vec![]);
    }
    let mut chosen = vec![first];
    let mut min_d: Vec<f64> = (0..n).map(|j| dist[first * n + j]).collect();
    let mut taken = vec![false; n];
    taken[first] = true;
    while chosen.len() < p {
        let mut best = usize::MAX;
        let mut best_d = f64::NEG_INFINITY;
        for j in 0..n {
            if !taken[j] && min_d[j] > best_d {
                best = j;
                best_d = min_d[j];
            }
        }
        taken[best] = true;
        chosen.push(best);
        for j in 0..n {
            min_d[j] = min_d[j].min(dist[best * n + j]);
        }
    }
    Ok(chosen)
}

/// Farthest-point subsample with the first index drawn from `rng`.
pub fn farthest_point_subsample<R: Rng + ?Sized>(
    samples: &[LiftedSample],
    p: usize,
    cfg: &DistanceConfig,
    rng: &mut R,
) -> Result<Vec<usize>> {
    let n = samples.len();
    if p > n {
        return Err(Error::Size {
            requested: p,
            available: n,
        });
    }
    if p == 0 {
        return Ok(vec![]);
    }
    let first = rng.random_range(0..n);
    let dist = distance_matrix(samples, cfg)?;
    farthest_point_from(&dist, n, p, first)
}

/// The exact subset of size `p` maximizing the minimum pairwise distance,
/// by enumeration. Exponential in `n`; refuses `n > 16`. Ties go to the
/// lexicographically first subset.
pub fn exact_max_min_subset(dist: &[f64], n: usize, p: usize) -> Result<Vec<usize>> {
    if p > n {
        return Err(Error::Size {
            requested: p,
            available: n,
        });
    }
    if n > 16 {
        return Err(Error::Unsupported(format!("exhaustive subset search over {n} points")));
    }
    let mut best: Option<(f64, Vec<usize>)> = None;
    for bits in 0u32..(1 << n) {
        if bits.count_ones() as usize != p {
            continue;
        }
        let idx: Vec<usize> = (0..n).filter(|i| bits & (1 << i) != 0).collect();
        let mut m = f64::INFINITY;
        for (a, &i) in idx.iter().enumerate() {
            for &j in &idx[a + 1..] {
                m = m.min(dist[i * n + j]);
            }
        }
        let better = match &best {
            None => true,
            Some((bm, bidx)) => m > *bm || (m == *bm && idx < *bidx),
        };
        if better {
            best = Some((m, idx));
        }
    }
    Ok(best.map(|b| b.1).unwrap_or_default())
}

/// Uniform subset of `p` out of `n` indices without replacement, sorted.
pub fn random_subsample<R: Rng + ?Sized>(n: usize, p: usize, rng: &mut R) -> Result<Vec<usize>> {
    if p > n {
        return Err(Error::Size {
            requested: p,
            available: n,
        });
    }
    let mut idx = index::sample(rng, n, p).into_vec();
    idx.sort_unstable();
    Ok(idx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::groups::{lift, GroupId, LieAlgebraVector, Point};
    use crate::rng::stream;
    use std::f64::consts::PI;

    fn lifted(group: GroupId, xs: &[&[f64]]) -> Vec<LiftedSample> {
        let pts: Vec<Point> = xs.iter().map(|x| Point::new(x.to_vec(), vec![0.0])).collect();
        lift(&pts, group, 1, &mut stream(0, "lift")).unwrap()
    }

    fn t1(xs: &[f64]) -> Vec<LiftedSample> {
        let rows: Vec<Vec<f64>> = xs.iter().map(|x| vec![0.0, *x]).collect();
        let refs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
        lifted(GroupId::T1, &refs)
    }

    #[test]
    fn so2_distance_is_wrapped_angle() {
        let r = |t: f64| GroupElement::exp(&LieAlgebraVector::new(GroupId::SO2, vec![t]).unwrap());
        let d = group_distance(&r(3.0), &r(-3.0)).unwrap();
        assert!((d - (2.0 * PI - 6.0) * 2f64.sqrt()).abs() < 1e-12);
        assert_eq!(group_distance(&r(1.0), &r(1.0)).unwrap(), 0.0);
    }

    #[test]
    fn translation_distance_is_euclidean() {
        let s = lifted(GroupId::T2, &[&[0.0, 0.0], &[3.0, 4.0]]);
        assert!((group_distance(&s[0].u, &s[1].u).unwrap() - 5.0).abs() < 1e-15);
    }

    #[test]
    fn orbit_term_adds_in_quadrature() {
        let s = lifted(GroupId::SO2, &[&[2.0, 0.0], &[0.0, 3.0]]);
        let dg = group_distance(&s[0].u, &s[1].u).unwrap();
        let d = pair_distance(&s[0], &s[1], &DistanceConfig::global(1.0)).unwrap();
        assert!((d - (dg * dg + 1.0).sqrt()).abs() < 1e-14);
        let d0 = pair_distance(&s[0], &s[1], &DistanceConfig::global(0.0)).unwrap();
        assert_eq!(d0, dg);
    }

    #[test]
    fn t1_neighborhoods() {
        let s = t1(&[0.0, 1.0, 5.0]);
        let cfg = DistanceConfig::new(2.0, 0.0, 10).unwrap();
        let nb = neighborhood_query(&s, &cfg, &mut stream(0, "nb")).unwrap();
        let members: Vec<Vec<usize>> = nb.into_iter().map(|n| n.member_indices).collect();
        assert_eq!(members, vec![vec![0, 1], vec![0, 1], vec![2]]);
    }

    #[test]
    fn small_radius_gives_singletons_and_infinite_gives_all() {
        let s = t1(&[0.0, 1.0, 2.5, 7.0]);
        let nb = neighborhood_query(&s, &DistanceConfig::new(0.5, 0.0, 10).unwrap(), &mut stream(0, "a")).unwrap();
        assert!(nb.iter().all(|n| n.member_indices == vec![n.center_index]));
        let nb = neighborhood_query(&s, &DistanceConfig::global(0.0), &mut stream(0, "a")).unwrap();
        assert!(nb.iter().all(|n| n.member_indices == vec![0, 1, 2, 3]));
    }

    #[test]
    fn masked_samples_are_excluded() {
        let mut s = t1(&[0.0, 0.5, 1.0]);
        s[1].mask = false;
        let nb = neighborhood_query(&s, &DistanceConfig::global(0.0), &mut stream(0, "m")).unwrap();
        assert_eq!(nb[0].member_indices, vec![0, 2]);
        assert!(nb[1].member_indices.is_empty());
    }

    #[test]
    fn neighborhoods_are_capped() {
        let s = t1(&[0.0, 0.1, 0.2, 0.3, 0.4, 0.5]);
        let cfg = DistanceConfig::new(10.0, 0.0, 3).unwrap();
        let nb = neighborhood_query(&s, &cfg, &mut stream(0, "cap")).unwrap();
        assert!(nb.iter().all(|n| n.member_indices.len() == 3));
    }

    #[test]
    fn farthest_point_example() {
        let s = t1(&[0.0, 1.0, 2.0, 10.0]);
        let d = distance_matrix(&s, &DistanceConfig::global(0.0)).unwrap();
        assert_eq!(farthest_point_from(&d, 4, 2, 0).unwrap(), vec![0, 3]);
        assert_eq!(exact_max_min_subset(&d, 4, 2).unwrap(), vec![0, 3]);
        let all = farthest_point_from(&d, 4, 4, 2).unwrap();
        let mut sorted = all.clone();
        sorted.sort();
        assert_eq!(sorted, vec![0, 1, 2, 3]);
        assert!(matches!(farthest_point_from(&d, 4, 5, 0), Err(Error::Size { .. })));
    }

    #[test]
    fn farthest_point_ties_break_low() {
        // from 1, points 0 and 2 are equally far
        let s = t1(&[0.0, 1.0, 2.0]);
        let d = distance_matrix(&s, &DistanceConfig::global(0.0)).unwrap();
        assert_eq!(farthest_point_from(&d, 3, 2, 1).unwrap(), vec![1, 0]);
    }

    #[test]
    fn random_subsample_edges() {
        let mut rng = stream(0, "rs");
        assert!(random_subsample(5, 0, &mut rng).unwrap().is_empty());
        assert_eq!(random_subsample(5, 5, &mut rng).unwrap(), vec![0, 1, 2, 3, 4]);
        assert!(random_subsample(5, 6, &mut rng).is_err());
    }

    #[test]
    fn fraction_radius_is_global_quantile() {
        let s = t1(&[0.0, 1.0, 3.0]);
        let d = distance_matrix(&s, &DistanceConfig::global(0.0)).unwrap();
        // off-diagonal distances: 1,1,2,2,3,3
        assert_eq!(radius_for_fraction(&d, 3, 0.5).unwrap(), 2.0);
        assert_eq!(radius_for_fraction(&d, 3, 1.0).unwrap(), 3.0);
    }

    #[test]
    fn config_validation() {
        assert!(DistanceConfig::new(0.0, 0.0, 1).is_err());
        assert!(DistanceConfig::new(1.0, -1.0, 1).is_err());
        assert!(DistanceConfig::new(1.0, 0.0, 0).is_err());
    }
}
