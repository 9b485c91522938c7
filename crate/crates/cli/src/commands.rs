use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use lieconv::dynamics::{
    build_model, conservation_report, generate_spring_dataset, model_rollout, spring_hamiltonian, split_mse, train as fit,
    DataConfig, DynModelConfig, FieldModel, ModelKind, SpringDataset, TrainConfig,
};
use lieconv::geometry::{neighborhood_query, pair_distance, DistanceConfig};
use lieconv::groups::{lift, GroupId};
use lieconv::matlie::Precision;
use lieconv::net::{audit_config, check_equivariance as audit, pair_embedding, random_points, relative_deviation, ConvInstance, ConvMode};
use lieconv::rng::stream;

use crate::config::echo;
use crate::{alloc, Failure};

fn group(token: &str) -> Result<GroupId, Failure> {
    token.parse().map_err(Failure::from)
}

fn write(path: &Path, text: &str) -> Result<(), Failure> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, text).map_err(|e| Failure::Run(format!("writing {}: {e}", path.display())))
}

fn json<T: Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("plain data serializes") + "\n"
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenDataConfig {
    pub d: usize,
    pub val: usize,
    pub test: usize,
    pub bodies: usize,
    pub dim: usize,
    pub dt: f64,
    pub steps: usize,
    pub tau: usize,
    pub rtol: f64,
    pub seed: u64,
    pub out: PathBuf,
}

impl Default for GenDataConfig {
    fn default() -> Self {
        let c = DataConfig::new(400, 0);
        Self {
            d: c.train,
            val: c.val,
            test: c.test,
            bodies: c.bodies,
            dim: c.dim,
            dt: c.dt,
            steps: c.steps,
            tau: c.tau,
            rtol: c.rtol,
            seed: c.seed,
            out: "data".into(),
        }
    }
}

pub fn gen_data(cfg: GenDataConfig) -> Result<(), Failure> {
    let dc = DataConfig {
        train: cfg.d,
        val: cfg.val,
        test: cfg.test,
        bodies: cfg.bodies,
        dim: cfg.dim,
        dt: cfg.dt,
        steps: cfg.steps,
        tau: cfg.tau,
        seed: cfg.seed,
        rtol: cfg.rtol,
    };
    dc.validate()?;
    if !(2..=3).contains(&dc.dim) {
        return Err(Failure::Usage(format!("--dim must be 2 or 3, got {}", dc.dim)));
    }
    let data = generate_spring_dataset(&dc)?;
    data.save(&cfg.out)?;
    echo(&cfg.out, &cfg)?;
    let digest = Sha256::digest(fs::read(cfg.out.join("blocks.bin"))?);
    let masses = &data.train.systems.masses;
    let mean = masses.iter().sum::<f64>() / masses.len() as f64;
    let max_sub = data.train.substeps.iter().max().copied().unwrap_or(0);
    println!(
        "wrote {} train / {} val / {} test systems of {} bodies to {}",
        data.train.len(),
        data.val.len(),
        data.test.len(),
        dc.bodies,
        cfg.out.display()
    );
    println!("mean mass {mean:.4}, max RK4 substeps {max_sub}");
    println!("sha256 {digest:x}");
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainCmdConfig {
    pub data: PathBuf,
    pub model: ModelKind,
    pub channels: usize,
    pub blocks: usize,
    pub kernel_hidden: usize,
    pub fc_hidden: usize,
    pub epochs: Option<usize>,
    pub lr: f64,
    pub batch: usize,
    pub substeps: usize,
    pub patience: Option<usize>,
    pub seed: u64,
    pub out: PathBuf,
}

impl Default for TrainCmdConfig {
    fn default() -> Self {
        let m = DynModelConfig::default();
        let t = TrainConfig::default();
        Self {
            data: "data".into(),
            model: ModelKind::HLieConvT2,
            channels: m.channels,
            blocks: m.blocks,
            kernel_hidden: m.kernel_hidden,
            fc_hidden: m.fc_hidden,
            epochs: t.epochs,
            lr: t.lr,
            batch: t.batch,
            substeps: t.substeps,
            patience: t.patience,
            seed: t.seed,
            out: "run".into(),
        }
    }
}

/// What a checkpoint directory records about its model.
#[derive(Debug, Serialize, Deserialize)]
struct ModelCard {
    kind: ModelKind,
    config: DynModelConfig,
    bodies: usize,
    dim: usize,
}

fn load_data(dir: &Path) -> Result<SpringDataset, Failure> {
    if !dir.join("manifest.json").exists() {
        return Err(Failure::Run(format!("no dataset at {}", dir.display())));
    }
    Ok(SpringDataset::load(dir)?)
}

pub fn train(cfg: TrainCmdConfig) -> Result<(), Failure> {
    if cfg.lr < 0.0 || cfg.batch == 0 || cfg.substeps == 0 {
        return Err(Failure::Usage("need lr >= 0, batch >= 1 and substeps >= 1".into()));
    }
    let data = load_data(&cfg.data)?;
    let dc = &data.manifest.config;
    let card = ModelCard {
        kind: cfg.model,
        config: DynModelConfig {
            channels: cfg.channels,
            blocks: cfg.blocks,
            kernel_hidden: cfg.kernel_hidden,
            fc_hidden: cfg.fc_hidden,
            identity_init: false,
        },
        bodies: dc.bodies,
        dim: dc.dim,
    };
    let mut model = build_model(card.kind, &card.config, card.bodies, card.dim, &mut stream(cfg.seed, "model"))?;
    let all: Vec<usize> = (0..data.train.len()).collect();
    let calib = data.train.segments(&all, dc.tau);
    model.calibrate(&calib.z0, &calib.systems)?;
    fs::create_dir_all(&cfg.out)?;
    echo(&cfg.out, &cfg)?;
    write(&cfg.out.join("model.json"), &json(&card))?;
    model.store().save(&cfg.out.join("init.bin"))?;
    let tc = TrainConfig {
        epochs: cfg.epochs,
        lr: cfg.lr,
        batch: cfg.batch,
        substeps: cfg.substeps,
        seed: cfg.seed,
        patience: cfg.patience,
    };
    let report = fit(model.as_mut(), &data, &tc)?;
    model.store().save(&cfg.out.join("model.bin"))?;
    let test = split_mse(model.as_ref(), &data.test, dc.tau, dc.dt, cfg.substeps, cfg.batch)?;
    let mut curve = String::from("epoch,train_loss,val_mse\n");
    for (e, (l, v)) in report.epoch_loss.iter().zip(&report.val_mse).enumerate() {
        writeln!(curve, "{},{l:e},{v:e}", e + 1).unwrap();
    }
    write(&cfg.out.join("loss.csv"), &curve)?;
    let mut steps = String::from("step,loss\n");
    for (s, l) in report.step_loss.iter().enumerate() {
        writeln!(steps, "{s},{l:e}").unwrap();
    }
    write(&cfg.out.join("steps.csv"), &steps)?;
    let summary = serde_json::json!({
        "model": cfg.model,
        "epochs": report.epochs,
        "best_epoch": report.best_epoch,
        "best_val_mse": report.best_val,
        "test_mse": test,
        "skipped_steps": report.skipped_steps,
    });
    write(&cfg.out.join("report.json"), &json(&summary))?;
    print!("{}", json(&summary));
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RolloutCmdConfig {
    pub data: PathBuf,
    pub model: Option<ModelKind>,
    pub checkpoint: Option<PathBuf>,
    pub split: String,
    pub index: usize,
    pub steps: usize,
    pub rtol: f64,
    pub out: PathBuf,
}

impl Default for RolloutCmdConfig {
    fn default() -> Self {
        Self {
            data: "data".into(),
            model: None,
            checkpoint: None,
            split: "test".into(),
            index: 0,
            steps: 100,
            rtol: 1e-4,
            out: "rollout".into(),
        }
    }
}

fn load_model(cfg: &RolloutCmdConfig, bodies: usize, dim: usize) -> Result<Box<dyn FieldModel>, Failure> {
    match &cfg.checkpoint {
        Some(dir) => {
            let text = fs::read_to_string(dir.join("model.json"))
                .map_err(|e| Failure::Run(format!("no checkpoint at {}: {e}", dir.display())))?;
            let card: ModelCard = serde_json::from_str(&text).map_err(|e| Failure::Run(e.to_string()))?;
            if let Some(k) = cfg.model {
                if k != card.kind {
                    return Err(Failure::Usage(format!("--model {k} but the checkpoint holds {}", card.kind)));
                }
            }
            if (card.bodies, card.dim) != (bodies, dim) {
                return Err(Failure::Usage("checkpoint and dataset disagree on bodies or dimension".into()));
            }
            let mut m = build_model(card.kind, &card.config, bodies, dim, &mut stream(0, "model"))?;
            m.store_mut().load(&dir.join("model.bin"))?;
            Ok(m)
        }
        None => {
            let kind = cfg.model.unwrap_or(ModelKind::TrueHamiltonian);
            if kind != ModelKind::TrueHamiltonian {
                return Err(Failure::Usage(format!("--model {kind} needs --checkpoint")));
            }
            Ok(build_model(kind, &DynModelConfig::default(), bodies, dim, &mut stream(0, "model"))?)
        }
    }
}

pub fn rollout(cfg: RolloutCmdConfig) -> Result<(), Failure> {
    let data = load_data(&cfg.data)?;
    let split = match cfg.split.as_str() {
        "train" => &data.train,
        "val" => &data.val,
        "test" => &data.test,
        other => return Err(Failure::Usage(format!("unknown split '{other}' (train|val|test)"))),
    };
    if cfg.index >= split.len() {
        return Err(Failure::Usage(format!("index {} out of range for {} systems", cfg.index, split.len())));
    }
    let dc = &data.manifest.config;
    let model = load_model(&cfg, dc.bodies, dc.dim)?;
    let sys = split.systems.select(&[cfg.index]);
    let z0 = split.state(cfg.index, 0).to_vec();
    let (traj, substeps) = model_rollout(model.as_ref(), &z0, &sys, dc.dt, cfg.steps, cfg.rtol)?;
    let energy = |z: &[f64]| match model.energy(z, &sys) {
        Some(e) => Ok(e?[0]),
        None => Ok(spring_hamiltonian(z, &sys)?[0]),
    };
    let report = conservation_report(&traj, dc.dt, &sys, energy)?;
    let (n, d) = (dc.bodies, dc.dim);
    let axes = ["x", "y", "z"];
    let mut head = String::from("t,body");
    for a in &axes[..d] {
        write!(head, ",q{a}").unwrap();
    }
    for a in &axes[..d] {
        write!(head, ",p{a}").unwrap();
    }
    let mut out = head + "\n";
    for (t, z) in traj.iter().enumerate() {
        for b in 0..n {
            write!(out, "{},{b}", report.times[t]).unwrap();
            for c in 0..d {
                write!(out, ",{:e}", z[sys.q_index(0, b, c)]).unwrap();
            }
            for c in 0..d {
                write!(out, ",{:e}", z[sys.p_index(0, b, c)]).unwrap();
            }
            out.push('\n');
        }
    }
    write(&cfg.out.join("trajectory.csv"), &out)?;
    let mut cons = String::from("t");
    for a in &axes[..d] {
        write!(cons, ",P{a}").unwrap();
    }
    if d == 2 {
        cons.push_str(",L");
    } else {
        cons.push_str(",Lx,Ly,Lz");
    }
    cons.push_str(",H\n");
    for t in 0..traj.len() {
        write!(cons, "{}", report.times[t]).unwrap();
        for v in report.momentum[t].iter().chain(&report.angular[t]) {
            write!(cons, ",{v:e}").unwrap();
        }
        writeln!(cons, ",{:e}", report.energy[t]).unwrap();
    }
    write(&cfg.out.join("conservation.csv"), &cons)?;
    echo(&cfg.out, &cfg)?;
    let summary = serde_json::json!({
        "model": model.kind(),
        "steps": cfg.steps,
        "substeps": substeps,
        "momentum_drift": report.momentum_drift,
        "angular_drift": report.angular_drift,
        "energy_drift": report.energy_drift,
    });
    print!("{}", json(&summary));
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EquivarianceCmdConfig {
    pub group: String,
    pub transform: Option<String>,
    pub lifts: usize,
    pub points: usize,
    pub transforms: usize,
    pub precision: Precision,
    pub threshold: Option<f64>,
    pub seed: u64,
    pub out: Option<PathBuf>,
}

impl Default for EquivarianceCmdConfig {
    fn default() -> Self {
        Self {
            group: "se2".into(),
            transform: None,
            lifts: 2,
            points: 48,
            transforms: 20,
            precision: Precision::Single,
            threshold: None,
            seed: 0,
            out: None,
        }
    }
}

pub fn check_equivariance(cfg: EquivarianceCmdConfig) -> Result<(), Failure> {
    let g = group(&cfg.group)?;
    let t = match &cfg.transform {
        Some(s) => group(s)?,
        None => g,
    };
    if cfg.points == 0 || cfg.transforms == 0 {
        return Err(Failure::Usage("need at least one point and one transform".into()));
    }
    let threshold = cfg.threshold.unwrap_or(match cfg.precision {
        Precision::Single => 1e-5,
        Precision::Double => 1e-10,
    });
    let report = audit(&audit_config(g, cfg.lifts), t, cfg.points, cfg.transforms, cfg.precision, cfg.seed)?;
    let pass = report.max_deviation < threshold;
    let summary = serde_json::json!({
        "group": g.to_string(),
        "transform": t.to_string(),
        "precision": cfg.precision,
        "trials": report.trials,
        "max_deviation": report.max_deviation,
        "threshold": threshold,
        "pass": pass,
    });
    print!("{}", json(&summary));
    if let Some(dir) = &cfg.out {
        echo(dir, &cfg)?;
        write(&dir.join("equivariance.json"), &json(&summary))?;
    }
    if pass {
        Ok(())
    } else {
        Err(Failure::Check(format!(
            "max relative deviation {:e} is not below {threshold:e}",
            report.max_deviation
        )))
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchCmdConfig {
    pub group: String,
    pub n: Vec<usize>,
    pub c_in: Vec<usize>,
    pub c_out: Vec<usize>,
    pub hidden: usize,
    pub max_neighbors: usize,
    pub seed: u64,
    pub out: Option<PathBuf>,
}

impl Default for BenchCmdConfig {
    fn default() -> Self {
        Self {
            group: "t2".into(),
            n: vec![1, 64, 256],
            c_in: vec![16, 64],
            c_out: vec![16, 64],
            hidden: 32,
            max_neighbors: 32,
            seed: 0,
            out: None,
        }
    }
}

pub fn bench_pointconv(cfg: BenchCmdConfig) -> Result<(), Failure> {
    let g = group(&cfg.group)?;
    if cfg.hidden == 0 || cfg.max_neighbors == 0 {
        return Err(Failure::Usage("hidden width and neighbor cap must be positive".into()));
    }
    let dist = DistanceConfig {
        radius: f64::INFINITY,
        alpha: 1.0,
        max_neighbors: cfg.max_neighbors,
    };
    let mut csv = String::from("n,c_in,c_out,s_width,pairs,mode,seconds,pair_tensor_elems,peak_alloc_bytes,memory_ratio\n");
    for &n in &cfg.n {
        for &ci in &cfg.c_in {
            for &co in &cfg.c_out {
                if n == 0 || ci == 0 || co == 0 {
                    return Err(Failure::Usage("sizes must be positive".into()));
                }
                let inst = ConvInstance::random(g, n, ci, co, cfg.hidden, &dist, cfg.seed)?;
                let mut rows = Vec::new();
                for mode in [ConvMode::Naive, ConvMode::Factored] {
                    let base = alloc::live();
                    alloc::reset_peak();
                    let (out, elems, secs) = inst.run::<f64>(mode)?;
                    rows.push((mode, out, elems, secs, alloc::peak_since(base)));
                }
                let dev = relative_deviation(&rows[1].1, &rows[0].1, 1e-12);
                if dev >= 1e-6 {
                    return Err(Failure::Check(format!(
                        "naive and factored outputs differ by {dev:e} at n={n}, c_in={ci}, c_out={co}"
                    )));
                }
                let ratio = rows[0].2 as f64 / rows[1].2.max(1) as f64;
                for (mode, _, elems, secs, peak) in &rows {
                    let mode = match mode {
                        ConvMode::Naive => "naive",
                        ConvMode::Factored => "factored",
                    };
                    writeln!(
                        csv,
                        "{n},{ci},{co},{},{},{mode},{secs:.6},{elems},{peak},{ratio:.2}",
                        cfg.hidden,
                        inst.graph.pairs.len()
                    )
                    .unwrap();
                }
            }
        }
    }
    print!("{csv}");
    if let Some(dir) = &cfg.out {
        echo(dir, &cfg)?;
        write(&dir.join("bench.csv"), &csv)?;
    }
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NeighborhoodCmdConfig {
    pub group: String,
    pub n: usize,
    pub lifts: usize,
    pub radius: f64,
    pub alpha: f64,
    pub max_neighbors: usize,
    pub center: Option<usize>,
    pub seed: u64,
    pub out: Option<PathBuf>,
}

impl Default for NeighborhoodCmdConfig {
    fn default() -> Self {
        Self {
            group: "se2".into(),
            n: 64,
            lifts: 1,
            radius: 1.0,
            alpha: 1.0,
            max_neighbors: 32,
            center: None,
            seed: 0,
            out: None,
        }
    }
}

pub fn dump_neighborhood(cfg: NeighborhoodCmdConfig) -> Result<(), Failure> {
    let g = group(&cfg.group)?;
    let dist = DistanceConfig::new(cfg.radius, cfg.alpha, cfg.max_neighbors)?;
    if cfg.n == 0 {
        return Err(Failure::Usage("--n must be at least 1".into()));
    }
    let mut rng = stream(cfg.seed, "dump");
    let pts = random_points(g, cfg.n, 0, &mut rng);
    let samples = lift(&pts, g, cfg.lifts, &mut rng)?;
    if let Some(c) = cfg.center {
        if c >= samples.len() {
            return Err(Failure::Usage(format!("center {c} out of range for {} samples", samples.len())));
        }
    }
    let hoods = neighborhood_query(&samples, &dist, &mut rng)?;
    let d_emb = pair_embedding(&samples[0], &samples[0])?.len();
    let mut csv = String::from("center,member,center_point,member_point,distance");
    for k in 0..d_emb {
        write!(csv, ",a{k}").unwrap();
    }
    csv.push('\n');
    for h in &hoods {
        if cfg.center.is_some_and(|c| c != h.center_index) {
            continue;
        }
        let a = &samples[h.center_index];
        for &j in &h.member_indices {
            let b = &samples[j];
            write!(
                csv,
                "{},{j},{},{},{:e}",
                h.center_index,
                a.source_index,
                b.source_index,
                pair_distance(a, b, &dist)?
            )
            .unwrap();
            for v in pair_embedding(a, b)? {
                write!(csv, ",{v:e}").unwrap();
            }
            csv.push('\n');
        }
    }
    match &cfg.out {
        Some(dir) => {
            echo(dir, &cfg)?;
            write(&dir.join("neighborhoods.csv"), &csv)?;
        }
        None => print!("{csv}"),
    }
    Ok(())
}
