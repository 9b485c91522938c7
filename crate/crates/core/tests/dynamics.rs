use lieconv::dynamics::*;
use lieconv::net::ParamStore;
use lieconv::rng::stream;
use lieconv::{Error, Result};
use rand::Rng;

fn small_data(train: usize, steps: usize, seed: u64) -> SpringDataset {
    let mut cfg = DataConfig::new(train, seed);
    cfg.val = 2;
    cfg.test = 2;
    cfg.steps = steps;
    generate_spring_dataset(&cfg).unwrap()
}

fn small_model(kind: ModelKind, seed: u64) -> Box<dyn FieldModel> {
    let cfg = DynModelConfig {
        channels: 8,
        kernel_hidden: 8,
        fc_hidden: 16,
        ..Default::default()
    };
    build_model(kind, &cfg, 6, 2, &mut stream(seed, "test/model")).unwrap()
}

struct ZeroField(ParamStore);

impl FieldModel for ZeroField {
    fn kind(&self) -> ModelKind {
        ModelKind::Fc
    }
    fn store(&self) -> &ParamStore {
        &self.0
    }
    fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.0
    }
    fn field(&self, z: &[f64], _: &Systems) -> Result<Vec<f64>> {
        Ok(vec![0.0; z.len()])
    }
    fn vjp(&self, z: &[f64], _: &[f64], _: &Systems) -> Result<(Vec<f64>, Vec<f64>)> {
        Ok((vec![0.0; z.len()], vec![]))
    }
}

fn max_abs(v: impl IntoIterator<Item = f64>) -> f64 {
    v.into_iter().map(f64::abs).fold(0.0, f64::max)
}

#[test]
fn free_particle_field() {
    let sys = Systems::new(2, 2, vec![2.0, 0.5], vec![0.0, 3.0]).unwrap();
    let z = vec![0.3, -1.0, 2.0, 0.1, 1.0, 2.0, -0.5, 0.25];
    let f = Hamiltonian(TrueSpring::default()).field(&z, &sys).unwrap();
    assert_eq!(f, vec![0.5, 1.0, -1.0, 0.5, 0.0, 0.0, 0.0, 0.0]);
}

#[test]
fn two_body_spring_pulls_together() {
    let sys = Systems::new(2, 1, vec![1.0, 1.0], vec![1.0, 1.0]).unwrap();
    let z = vec![0.0, 1.0, 0.0, 0.0];
    let m = Hamiltonian(TrueSpring::default());
    assert!((m.energy(&z, &sys).unwrap().unwrap()[0] - 0.5).abs() < 1e-15);
    assert_eq!(m.field(&z, &sys).unwrap(), vec![0.0, 0.0, 1.0, -1.0]);
}

#[test]
fn tape_hamiltonian_matches_analytic_field() {
    let data = small_data(5, 4, 3);
    let seg = data.train.segments(&[0, 1, 2, 3, 4], 1);
    let tape = Hamiltonian(TrueSpring::default()).field(&seg.z0, &seg.systems).unwrap();
    let exact = spring_field(&seg.z0, &seg.systems).unwrap();
    assert!(max_abs(tape.iter().zip(&exact).map(|(a, b)| a - b)) < 1e-12);
}

#[test]
fn quadratic_hamiltonian_jacobian_is_exact() {
    // the spring field is linear, so its Jacobian rows are exact differences
    let data = small_data(2, 4, 5);
    let seg = data.train.segments(&[0, 1], 1);
    let sys = &seg.systems;
    let m = Hamiltonian(TrueSpring::default());
    let n = seg.z0.len();
    let f0 = spring_field(&seg.z0, sys).unwrap();
    for i in (0..n).step_by(5) {
        let mut w = vec![0.0; n];
        w[i] = 1.0;
        let (row, _) = m.vjp(&seg.z0, &w, sys).unwrap();
        for j in 0..n {
            let mut z = seg.z0.clone();
            z[j] += 1.0;
            let exact = spring_field(&z, sys).unwrap()[i] - f0[i];
            assert!((row[j] - exact).abs() < 1e-10, "d F_{i} / d z_{j}: {} vs {exact}", row[j]);
        }
    }
}

#[test]
fn rk4_is_fourth_order() {
    let osc = |z: &[f64]| Ok(vec![z[1], -z[0]]);
    let err = |steps: usize| {
        let t = rk4_integrate(&osc, &[1.0, 0.0], 2.0 / steps as f64, steps, 1).unwrap();
        let e = &t[steps];
        ((e[0] - 2f64.cos()).powi(2) + (e[1] + 2f64.sin()).powi(2)).sqrt()
    };
    let order = (err(50) / err(100)).log2();
    assert!((3.8..=4.2).contains(&order), "order {order}");
}

#[test]
fn dataset_is_deterministic_on_disk() {
    let a = small_data(3, 10, 11);
    let b = small_data(3, 10, 11);
    assert_eq!(a, b);
    let (da, db) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    a.save(da.path()).unwrap();
    b.save(db.path()).unwrap();
    for f in ["manifest.json", "blocks.bin"] {
        assert_eq!(
            std::fs::read(da.path().join(f)).unwrap(),
            std::fs::read(db.path().join(f)).unwrap()
        );
    }
    assert_eq!(SpringDataset::load(da.path()).unwrap(), a);
    assert_ne!(small_data(3, 10, 12).train, a.train);
}

#[test]
fn sampled_masses_follow_the_uniform_law() {
    let mut cfg = DataConfig::new(1667, 2);
    cfg.val = 1;
    cfg.test = 1;
    cfg.steps = 4;
    let d = generate_spring_dataset(&cfg).unwrap();
    let m = &d.train.systems.masses;
    assert!(m.len() >= 10_000);
    assert!(m.iter().all(|&x| x > 0.1 && x < 3.1));
    let mean = m.iter().sum::<f64>() / m.len() as f64;
    assert!((mean - 1.6).abs() < 0.03, "mean {mean}");
    let k = &d.train.systems.springs;
    assert!(k.iter().all(|&x| (0.0..5.0).contains(&x)));
    assert!(d.train.segment_start.iter().all(|&s| s + 4 <= 4));
}

#[test]
fn ground_truth_conserves_energy_and_momenta() {
    let d = small_data(3, 500, 7);
    let sys = d.train.systems.select(&[0]);
    for i in 0..3 {
        let sys_i = d.train.systems.select(&[i]);
        let traj: Vec<Vec<f64>> = (0..=500).map(|t| d.train.state(i, t).to_vec()).collect();
        let r = conservation_report(&traj, 0.01, &sys_i, |z| Ok(spring_hamiltonian(z, &sys_i)?[0])).unwrap();
        assert!(r.energy_drift < 1e-6, "H drift {}", r.energy_drift);
        assert!(r.momentum_drift < 1e-7, "P drift {}", r.momentum_drift);
        assert!(r.angular_drift < 1e-6, "L drift {}", r.angular_drift);
        assert_eq!(r.times.len(), 501);
    }
    assert_eq!(sys.count(), 1);
}

#[test]
fn perfect_and_zero_models_give_the_expected_losses() {
    let d = small_data(4, 20, 9);
    let seg = d.train.segments(&[0, 1, 2, 3], 4);
    let truth = Hamiltonian(TrueSpring::default());
    // the data was integrated with finer steps, so compare at the data's substep count
    let fine = d.train.substeps.iter().copied().max().unwrap();
    let l = trajectory_loss(&truth, &seg, 0.01, fine).unwrap();
    assert!(l < 1e-8, "perfect-model loss {l}");
    let zero = ZeroField(ParamStore::new());
    let l0 = trajectory_loss(&zero, &seg, 0.01, 1).unwrap();
    let expect = seg
        .targets
        .iter()
        .map(|t| t.iter().zip(&seg.z0).map(|(a, b)| (a - b).powi(2)).sum::<f64>())
        .sum::<f64>()
        / (4.0 * 4.0);
    assert!((l0 - expect).abs() < 1e-12 * expect);
    assert!(l0 > 0.0);
}

#[test]
fn divergent_rollout_reports_non_finite_loss() {
    struct Explode(ParamStore);
    impl FieldModel for Explode {
        fn kind(&self) -> ModelKind {
            ModelKind::Fc
        }
        fn store(&self) -> &ParamStore {
            &self.0
        }
        fn store_mut(&mut self) -> &mut ParamStore {
            &mut self.0
        }
        fn field(&self, z: &[f64], _: &Systems) -> Result<Vec<f64>> {
            Ok(z.iter().map(|x| 1e200 * x * x).collect())
        }
        fn vjp(&self, z: &[f64], _: &[f64], _: &Systems) -> Result<(Vec<f64>, Vec<f64>)> {
            Ok((vec![0.0; z.len()], vec![]))
        }
    }
    let d = small_data(2, 10, 1);
    let seg = d.train.segments(&[0, 1], 4);
    assert!(trajectory_loss(&Explode(ParamStore::new()), &seg, 0.01, 1).unwrap().is_nan());
    let (l, _) = loss_and_grad(&Explode(ParamStore::new()), &seg, 0.01, 1).unwrap();
    assert!(l.is_nan());
}

/// Central differences of the trajectory loss over a few parameters.
fn check_loss_gradient(kind: ModelKind) {
    let d = small_data(3, 10, 21);
    let seg = d.train.segments(&[0, 1, 2], 3);
    let mut m = small_model(kind, 4);
    m.calibrate(&seg.z0, &seg.systems).unwrap();
    let (_, g) = loss_and_grad(m.as_ref(), &seg, 0.01, 1).unwrap();
    let theta = m.store().flat();
    assert_eq!(g.len(), theta.len());
    let mut rng = stream(1, "fd");
    let mut worst: f64 = 0.0;
    let mut scale: f64 = 0.0;
    for _ in 0..12 {
        let i = rng.random_range(0..theta.len());
        let h = 1e-5;
        let mut t = theta.clone();
        t[i] += h;
        m.store_mut().set_flat(&t).unwrap();
        let lp = trajectory_loss(m.as_ref(), &seg, 0.01, 1).unwrap();
        t[i] -= 2.0 * h;
        m.store_mut().set_flat(&t).unwrap();
        let lm = trajectory_loss(m.as_ref(), &seg, 0.01, 1).unwrap();
        m.store_mut().set_flat(&theta).unwrap();
        let fd = (lp - lm) / (2.0 * h);
        worst = worst.max((fd - g[i]).abs());
        scale = scale.max(fd.abs());
    }
    assert!(worst <= 1e-4 * scale.max(1e-8), "{kind}: error {worst} at scale {scale}");
}

#[test]
fn loss_gradient_matches_finite_differences() {
    for kind in [
        ModelKind::Fc,
        ModelKind::HLieConvTrivial,
        ModelKind::HLieConvT2,
        ModelKind::HLieConvSo2,
        ModelKind::HLieConvSo2Centered,
        ModelKind::LieConvT2,
    ] {
        check_loss_gradient(kind);
    }
}

#[test]
fn hessian_vector_products_match_finite_differences() {
    let d = small_data(2, 4, 13);
    let seg = d.train.segments(&[0, 1], 1);
    let sys = &seg.systems;
    for kind in [ModelKind::HLieConvT2, ModelKind::HLieConvSo2, ModelKind::LieConvT2] {
        let m = small_model(kind, 8);
        let mut rng = stream(2, "hvp");
        let w: Vec<f64> = (0..seg.z0.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (zbar, _) = m.vjp(&seg.z0, &w, sys).unwrap();
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        for j in 0..seg.z0.len() {
            let mut zp = seg.z0.clone();
            zp[j] += h;
            let mut zm = seg.z0.clone();
            zm[j] -= h;
            let fp = m.field(&zp, sys).unwrap();
            let fm = m.field(&zm, sys).unwrap();
            let fd: f64 = w.iter().zip(fp.iter().zip(&fm)).map(|(w, (a, b))| w * (a - b) / (2.0 * h)).sum();
            worst = worst.max((fd - zbar[j]).abs() / fd.abs().max(1e-3));
        }
        assert!(worst < 1e-3, "{kind}: {worst}");
    }
}

fn rollout_report(kind: ModelKind) -> ConservationReport {
    let d = small_data(1, 4, 31);
    let sys = d.train.systems.select(&[0]);
    let m = small_model(kind, 6);
    let z0 = d.train.state(0, 0).to_vec();
    let (traj, _) = model_rollout(m.as_ref(), &z0, &sys, 0.01, 100, 1e-4).unwrap();
    let energy = |z: &[f64]| match m.energy(z, &sys) {
        Some(e) => Ok(e?[0]),
        None => Ok(spring_hamiltonian(z, &sys)?[0]),
    };
    conservation_report(&traj, 0.01, &sys, energy).unwrap()
}

#[test]
fn noether_pairing_on_untrained_models() {
    let t2 = rollout_report(ModelKind::HLieConvT2);
    let so2 = rollout_report(ModelKind::HLieConvSo2);
    let so2c = rollout_report(ModelKind::HLieConvSo2Centered);
    let trivial = rollout_report(ModelKind::HLieConvTrivial);
    let direct = rollout_report(ModelKind::LieConvT2);
    assert!(t2.momentum_drift < 1e-4, "{}", t2.momentum_drift);
    assert!(so2.angular_drift < 1e-4, "{}", so2.angular_drift);
    assert!(so2c.angular_drift < 1e-4 && so2c.momentum_drift < 1e-4);
    for r in [&t2, &so2, &so2c, &trivial] {
        assert!(r.energy_drift < 1e-4, "learned H drift {}", r.energy_drift);
    }
    assert!(trivial.momentum_drift > 10.0 * t2.momentum_drift);
    assert!(trivial.angular_drift > 10.0 * so2.angular_drift);
    assert!(direct.momentum_drift >= 10.0 * t2.momentum_drift);
}

#[test]
fn zero_learning_rate_keeps_parameters() {
    let d = small_data(4, 10, 17);
    let mut m = small_model(ModelKind::HLieConvT2, 3);
    let before = m.store().flat();
    let cfg = TrainConfig {
        epochs: Some(2),
        lr: 0.0,
        ..Default::default()
    };
    let r = train(m.as_mut(), &d, &cfg).unwrap();
    assert_eq!(m.store().flat(), before);
    assert_eq!(r.epochs, 2);
    assert_eq!(r.step_loss.len(), 2);
}

#[test]
fn persistent_divergence_aborts_training() {
    let d = small_data(4, 10, 17);
    let mut m = small_model(ModelKind::Fc, 3);
    let mut theta = m.store().flat();
    theta.iter_mut().for_each(|t| *t *= 1e6);
    m.store_mut().set_flat(&theta).unwrap();
    let cfg = TrainConfig {
        epochs: Some(20),
        batch: 1,
        ..Default::default()
    };
    match train(m.as_mut(), &d, &cfg) {
        Err(Error::Numeric(msg)) => assert!(msg.contains("consecutive")),
        other => panic!("{:?}", other.map(|r| r.epochs)),
    }
}

#[test]
fn training_curve_decreases() {
    let mut cfg = DataConfig::new(200, 5);
    cfg.val = 20;
    cfg.test = 1;
    cfg.steps = 100;
    let d = generate_spring_dataset(&cfg).unwrap();
    let mcfg = DynModelConfig {
        channels: 16,
        kernel_hidden: 16,
        ..Default::default()
    };
    let mut m = build_model(ModelKind::HLieConvT2, &mcfg, 6, 2, &mut stream(5, "model")).unwrap();
    let tc = TrainConfig {
        epochs: Some(50),
        ..Default::default()
    };
    let r = train(m.as_mut(), &d, &tc).unwrap();
    let s = smoothed(&r.epoch_loss, 5);
    for w in s.windows(2) {
        assert!(w[1] <= w[0], "smoothed loss rose: {:?}", s);
    }
    assert!(r.best_val < r.val_mse[0]);
}
