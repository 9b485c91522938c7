//! Spring-system datasets: sampled parameters, ground-truth trajectories and
//! one training segment per system.
//!
//! On disk a dataset is a directory with `manifest.json` and `blocks.bin`
//! (see [`crate::io`]). Blocks are named `<split>.masses`, `<split>.springs`
//! (`count x N`), `<split>.trajectories` (`count x (steps+1)*2Nd`),
//! `<split>.segment_start` and `<split>.substeps` (`count x 1`).

use std::fs;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::integrate::integrate_to_tolerance;
use super::spring::{spring_field, Systems};
use crate::error::{Error, Result};
use crate::io::{read_blocks, write_blocks, Block};
use crate::rng::indexed_stream;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataConfig {
    pub train: usize,
    pub val: usize,
    pub test: usize,
    pub bodies: usize,
    pub dim: usize,
    pub dt: f64,
    pub steps: usize,
    pub tau: usize,
    pub seed: u64,
    /// Relative endpoint tolerance for the step-halving integrator.
    pub rtol: f64,
}

impl DataConfig {
    pub fn new(train: usize, seed: u64) -> Self {
        Self {
            train,
            val: 100,
            test: 100,
            bodies: 6,
            dim: 2,
            dt: 0.01,
            steps: 500,
            tau: 4,
            seed,
            rtol: 1e-8,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.train == 0 {
            return Err(Error::Config("dataset size must be at least 1".into()));
        }
        if self.bodies < 2 {
            return Err(Error::Config("spring systems need at least 2 bodies".into()));
        }
        if self.tau == 0 || self.tau > self.steps {
            return Err(Error::Config(format!(
                "segment length {} must be in 1..={}",
                self.tau, self.steps
            )));
        }
        if !(self.dt > 0.0 && self.rtol > 0.0) {
            return Err(Error::Config("dt and rtol must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub config: DataConfig,
    pub masses: String,
    pub springs: String,
    pub positions: String,
    pub momenta: String,
    pub potential: String,
}

impl Manifest {
    fn new(config: DataConfig) -> Self {
        Self {
            format: "lieconv-springs/1".into(),
            config,
            masses: "U(0.1, 3.1)".into(),
            springs: "U(0, 5), k_ij = k_i k_j".into(),
            positions: "N(0, 0.16 I)".into(),
            momenta: "N(0, 0.36 I)".into(),
            potential: "1/2 sum_{i<j} k_ij |q_i - q_j|^2".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub systems: Systems,
    pub steps: usize,
    /// Flattened `count x (steps+1) x 2Nd`.
    pub trajectories: Vec<f64>,
    pub segment_start: Vec<usize>,
    pub substeps: Vec<usize>,
}

/// A batch of segments: initial states and the `tau` following states, all
/// in packed batch layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Segments {
    pub systems: Systems,
    pub z0: Vec<f64>,
    pub targets: Vec<Vec<f64>>,
}

impl Split {
    pub fn len(&self) -> usize {
        self.segment_start.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segment_start.is_empty()
    }

    pub fn state(&self, i: usize, t: usize) -> &[f64] {
        let l = self.systems.state_len();
        let at = (i * (self.steps + 1) + t) * l;
        &self.trajectories[at..at + l]
    }

    /// Segments of systems `idx` starting at their chosen offsets.
    pub fn segments(&self, idx: &[usize], tau: usize) -> Segments {
        self.windows(idx, tau, |i| self.segment_start[i])
    }

    /// Windows of length `horizon` starting at t = 0.
    pub fn from_start(&self, idx: &[usize], horizon: usize) -> Segments {
        self.windows(idx, horizon, |_| 0)
    }

    fn windows(&self, idx: &[usize], len: usize, start: impl Fn(usize) -> usize) -> Segments {
        let gather = |off: usize| idx.iter().flat_map(|&i| self.state(i, start(i) + off).to_vec()).collect();
        Segments {
            systems: self.systems.select(idx),
            z0: gather(0),
            targets: (1..=len).map(gather).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpringDataset {
    pub manifest: Manifest,
    pub train: Split,
    pub val: Split,
    pub test: Split,
}

/// Samples one system and integrates its ground truth.
fn generate_system(cfg: &DataConfig, label: &str, i: usize) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>, usize, usize)> {
    let mut rng = indexed_stream(cfg.seed, &format!("springs/{label}"), i);
    let n = cfg.bodies;
    let mass = Uniform::new(0.1, 3.1).map_err(|e| Error::Config(e.to_string()))?;
    let spring = Uniform::new(0.0, 5.0).map_err(|e| Error::Config(e.to_string()))?;
    let masses: Vec<f64> = (0..n).map(|_| mass.sample(&mut rng)).collect();
    let springs: Vec<f64> = (0..n).map(|_| spring.sample(&mut rng)).collect();
    let qd = Normal::new(0.0, 0.4).map_err(|e| Error::Config(e.to_string()))?;
    let pd = Normal::new(0.0, 0.6).map_err(|e| Error::Config(e.to_string()))?;
    let mut z0: Vec<f64> = (0..n * cfg.dim).map(|_| qd.sample(&mut rng)).collect();
    z0.extend((0..n * cfg.dim).map(|_| pd.sample(&mut rng)));
    let start = rng.random_range(0..=cfg.steps - cfg.tau);
    let sys = Systems::new(n, cfg.dim, masses.clone(), springs.clone())?;
    let field = |z: &[f64]| spring_field(z, &sys);
    let (traj, substeps) = integrate_to_tolerance(&field, &z0, cfg.dt, cfg.steps, 1, cfg.rtol)?;
    Ok((masses, springs, traj.concat(), start, substeps))
}

fn generate_split(cfg: &DataConfig, label: &str, count: usize) -> Result<Split> {
    let rows: Result<Vec<_>> = (0..count).into_par_iter().map(|i| generate_system(cfg, label, i)).collect();
    let rows = rows?;
    let mut masses = Vec::new();
    let mut springs = Vec::new();
    let mut trajectories = Vec::new();
    let mut segment_start = Vec::new();
    let mut substeps = Vec::new();
    for (m, k, t, s, h) in rows {
        masses.extend(m);
        springs.extend(k);
        trajectories.extend(t);
        segment_start.push(s);
        substeps.push(h);
    }
    Ok(Split {
        systems: Systems::new(cfg.bodies, cfg.dim, masses, springs)?,
        steps: cfg.steps,
        trajectories,
        segment_start,
        substeps,
    })
}

/// Deterministic in `cfg.seed`: every system draws from its own stream.
pub fn generate_spring_dataset(cfg: &DataConfig) -> Result<SpringDataset> {
    cfg.validate()?;
    Ok(SpringDataset {
        manifest: Manifest::new(cfg.clone()),
        train: generate_split(cfg, "train", cfg.train)?,
        val: generate_split(cfg, "val", cfg.val)?,
        test: generate_split(cfg, "test", cfg.test)?,
    })
}

fn split_blocks(name: &str, s: &Split) -> Result<Vec<Block>> {
    let c = s.len();
    let n = s.systems.bodies;
    let as_f = |v: &[usize]| v.iter().map(|&x| x as f64).collect();
    Ok(vec![
        Block::new(format!("{name}.masses"), c, n, s.systems.masses.clone())?,
        Block::new(format!("{name}.springs"), c, n, s.systems.springs.clone())?,
        Block::new(
            format!("{name}.trajectories"),
            c,
            (s.steps + 1) * s.systems.state_len(),
            s.trajectories.clone(),
        )?,
        Block::new(format!("{name}.segment_start"), c, 1, as_f(&s.segment_start))?,
        Block::new(format!("{name}.substeps"), c, 1, as_f(&s.substeps))?,
    ])
}

impl SpringDataset {
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&self.manifest)? + "\n")?;
        let mut blocks = split_blocks("train", &self.train)?;
        blocks.extend(split_blocks("val", &self.val)?);
        blocks.extend(split_blocks("test", &self.test)?);
        write_blocks(&dir.join("blocks.bin"), &blocks)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let manifest: Manifest = serde_json::from_str(&fs::read_to_string(dir.join("manifest.json"))?)?;
        let blocks = read_blocks(&dir.join("blocks.bin"))?;
        let cfg = &manifest.config;
        let find = |name: String| -> Result<&Block> {
            blocks
                .iter()
                .find(|b| b.name == name)
                .ok_or_else(|| Error::Io(format!("dataset lacks block '{name}'")))
        };
        let split = |name: &str| -> Result<Split> {
            let ints = |b: &Block| b.data.iter().map(|&x| x as usize).collect::<Vec<_>>();
            let traj = find(format!("{name}.trajectories"))?;
            let systems = Systems::new(
                cfg.bodies,
                cfg.dim,
                find(format!("{name}.masses"))?.data.clone(),
                find(format!("{name}.springs"))?.data.clone(),
            )?;
            if traj.cols != (cfg.steps + 1) * systems.state_len() || traj.rows != systems.count() {
                return Err(Error::Io(format!("trajectory block of split '{name}' has the wrong shape")));
            }
            Ok(Split {
                systems,
                steps: cfg.steps,
                trajectories: traj.data.clone(),
                segment_start: ints(find(format!("{name}.segment_start"))?),
                substeps: ints(find(format!("{name}.substeps"))?),
            })
        };
        Ok(Self {
            train: split("train")?,
            val: split("val")?,
            test: split("test")?,
            manifest,
        })
    }
}
