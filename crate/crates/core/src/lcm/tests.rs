use super::*;
use crate::nn::NetConfig;
use crate::schedule::ScheduleParams;
use crate::solver::{GaussianOracle, GaussianWorld};

fn schedule(n: usize) -> NoiseSchedule {
    NoiseSchedule::new(ScheduleParams {
        n,
        ..ScheduleParams::default()
    })
    .unwrap()
}

fn tiny_net(n: usize, seed: u64) -> DenoiserNet<f64> {
    let config = NetConfig {
        width: 16,
        heads: 2,
        ffn: 32,
        ..NetConfig::toy(2, 1, 8, n)
    };
    DenoiserNet::new(config, &RngStream::new(seed)).unwrap()
}

fn tiny_model(n: usize) -> ConsistencyModel<f64> {
    let teacher = TeacherModel {
        net: tiny_net(n, 1),
        schedule: schedule(n),
    };
    ConsistencyModel::from_teacher(
        &teacher,
        DistillParams {
            k: 5,
            ..Default::default()
        },
    )
    .unwrap()
}

/// ε* of an isotropic Gaussian world, ignoring class and guidance.
struct WorldPredictor(GaussianWorld, NoiseSchedule);

impl GuidedPredictor<f64> for WorldPredictor {
    fn predict_guided(&self, z: &Tensor<f64>, t: &[usize], _c: &[usize], _w: &[f64]) -> Result<Tensor<f64>> {
        let per = z.numel() / t.len();
        let mut out = Vec::new();
        for (i, &ti) in t.iter().enumerate() {
            let zi = Tensor::<f64>::from_f64(&z.data()[i * per..(i + 1) * per], &[per])?;
            out.extend(self.0.optimal_eps(&self.1, &zi, ti)?.to_vec());
        }
        Tensor::new(out, z.shape())
    }
}

/// Noise prediction that makes the consistency map send every point to `m`.
struct CollapseTo(Vec<f64>, NoiseSchedule);

impl GuidedPredictor<f64> for CollapseTo {
    fn predict_guided(&self, z: &Tensor<f64>, t: &[usize], _c: &[usize], _w: &[f64]) -> Result<Tensor<f64>> {
        let per = self.0.len();
        let mut out = Vec::new();
        for (i, &ti) in t.iter().enumerate() {
            let (cs, co) = self.1.boundary_coeffs(ti);
            let (a, s) = (self.1.alpha(ti), self.1.sigma(ti));
            for (j, &m) in self.0.iter().enumerate() {
                let x = z.data()[i * per + j];
                out.push((x - a * (m - cs * x) / co) / s);
            }
        }
        Tensor::new(out, z.shape())
    }
}

#[test]
fn boundary_is_identity_for_both_branches() {
    let mut model = tiny_model(100);
    let z: Tensor<f64> = RngStream::new(3).gaussian(&[4, 1, 2]);
    for which in [Branch::Student, Branch::Ema] {
        let out = model.consistency_fn(which, &z, &[0, 1, 2, 8], &[5.0; 4], &[0; 4]).unwrap();
        assert!(out.bitwise_eq(&z));
    }
    model.student.params_mut().set("out_proj.bias", vec![3.0, -7.0]).unwrap();
    model.ema_update(0.0).unwrap();
    let out = model.consistency_fn(Branch::Ema, &z, &[0; 4], &[5.0; 4], &[0; 4]).unwrap();
    assert!(out.bitwise_eq(&z));
}

#[test]
fn zero_noise_prediction_reduces_to_scaled_input() {
    let mut net = tiny_net(100, 2);
    let w = net.params().by_name("out_proj.weight").unwrap().numel();
    net.params_mut().set("out_proj.weight", vec![0.0; w]).unwrap();
    net.params_mut().set("out_proj.bias", vec![0.0; 2]).unwrap();
    let sch = schedule(100);
    let z: Tensor<f64> = RngStream::new(4).gaussian(&[3, 1, 2]);
    let t = [1, 37, 100];
    let out = consistency_fn(&sch, &net, &z, &[0, 1, 2], &[4.0; 3], &t).unwrap();
    for (i, &ti) in t.iter().enumerate() {
        let (cs, co) = sch.boundary_coeffs(ti);
        for j in 0..2 {
            let x = z.data()[i * 2 + j];
            let expected = cs * x + co * x / sch.alpha(ti);
            assert!((out.data()[i * 2 + j] - expected).abs() < 1e-12);
        }
    }
}

#[test]
fn exact_gaussian_noise_matches_hand_evaluation() {
    let sch = schedule(1000);
    let (m, s) = ([0.3, -0.2], 0.5);
    let world = WorldPredictor(GaussianWorld::new(m.to_vec(), s).unwrap(), sch.clone());
    let z = [0.7, 0.1];
    let t = 100;

    // schedule quantities rebuilt from the betas
    let abar: f64 = (1..=t)
        .map(|i| 1.0 - (1e-4 + (0.02 - 1e-4) * (i - 1) as f64 / 999.0))
        .product();
    let (a, g) = (abar.sqrt(), (1.0 - abar).sqrt());
    let u = t as f64 / 10.0;
    let c_skip = 0.25 / (u * u + 0.25);
    let c_out = 0.5 * u / (u * u + 0.25).sqrt();
    let got = consistency_fn(&sch, &world, &Tensor::from_f64(&z, &[1, 1, 2]).unwrap(), &[0], &[0.0], &[t]).unwrap();
    for j in 0..2 {
        let eps = g * (z[j] - a * m[j]) / (a * a * s * s + g * g);
        let expected = c_skip * z[j] + c_out * (z[j] - g * eps) / a;
        assert!((got.data()[j] - expected).abs() < 1e-12, "{} vs {expected}", got.data()[j]);
    }
}

#[test]
fn ema_arithmetic() {
    let mut model = tiny_model(100);
    let names: Vec<String> = model.student.params().names().to_vec();
    for name in &names {
        let n = model.student.params().by_name(name).unwrap().numel();
        model.student.params_mut().set(name, vec![0.0; n]).unwrap();
        model.ema.params_mut().set(name, vec![1.0; n]).unwrap();
    }
    model.ema_update(0.95).unwrap();
    assert!(model.ema.params().tensors().iter().all(|t| t.data().iter().all(|&v| v == 0.95)));
    for step in 1..=10 {
        model.ema_update(0.95).unwrap();
        let expected = 0.95f64.powi(step + 1);
        let v = model.ema.params().tensors()[0].data()[0];
        assert!((v - expected).abs() < 1e-12);
    }
    assert!(model.ema.params().tensors().iter().all(|t| !t.requires_grad()));
    model.ema_update(0.0).unwrap();
    assert!(model.ema.params().bitwise_eq(&model.student.params().frozen()));
    assert!(model.ema_update(1.0).is_err());
}

#[test]
fn self_consistent_target_gives_zero_loss() {
    let n = 1000;
    let sch = schedule(n);
    let m = vec![0.4, -0.9];
    let delta = GaussianWorld::new(m.clone(), 0.0).unwrap();
    let teacher = GaussianOracle {
        schedule: sch.clone(),
        classes: vec![delta.clone(); 8],
        unconditional: delta,
    };
    let f = CollapseTo(m.clone(), sch.clone());
    let params = DistillParams::default();
    let mut s = RngStream::new(6);
    let b = 32;
    let z0 = Tensor::from_f64(&m.repeat(b), &[b, 1, 2]).unwrap();
    let idx = sample_lower_indices(&mut s, b, n, params.k);
    let omega = sample_omegas(&mut s, b, &params, false);
    let noise = s.gaussian(&[b, 1, 2]);
    let c = vec![3; b];
    let loss = distillation_loss(&sch, &params, &f, &f, &teacher, &z0, &c, &idx, &omega, &noise).unwrap();
    assert!(loss.item() < 1e-20, "{}", loss.item());
}

#[test]
fn gradients_reach_only_the_student() {
    let n = 100;
    let sch = schedule(n);
    let teacher = TeacherModel {
        net: tiny_net(n, 7),
        schedule: sch.clone(),
    };
    let ema = tiny_net(n, 8);
    let student = tiny_net(n, 9);
    let params = DistillParams {
        k: 5,
        ..Default::default()
    };
    let mut s = RngStream::new(10);
    let (z0, c) = ToyDataset::Rings2d.draw::<f64>(6, &mut s).unwrap();
    let idx = sample_lower_indices(&mut s, 6, n, params.k);
    let omega = sample_omegas(&mut s, 6, &params, true);
    let noise = s.gaussian(&[6, 1, 2]);
    let loss = distillation_loss(&sch, &params, &student, &ema, &teacher, &z0, &c, &idx, &omega, &noise).unwrap();
    let grads = loss.backward().unwrap();
    let zero = |p: &crate::nn::ParamStore<f64>| p.tensors().iter().all(|t| grads.wrt(t).data().iter().all(|&g| g == 0.0));
    assert!(zero(teacher.net.params()));
    assert!(zero(ema.params()));
    assert!(!zero(student.params()));
}

#[test]
fn lower_index_never_exceeds_range() {
    let mut s = RngStream::new(11);
    let idx = sample_lower_indices(&mut s, 100_000, 1000, 20);
    assert!(idx.iter().all(|&i| (1..=980).contains(&i)));
    assert_eq!(*idx.iter().max().unwrap(), 980);
    assert_eq!(*idx.iter().min().unwrap(), 1);
}

#[test]
fn omega_draws_stay_in_range() {
    let p = DistillParams::default();
    let mut s = RngStream::new(12);
    let batch = sample_omegas(&mut s, 16, &p, false);
    assert!(batch.iter().all(|&w| w == batch[0]));
    let items = sample_omegas(&mut s, 1000, &p, true);
    assert!(items.iter().all(|&w| (4.0..=12.0).contains(&w)));
    assert!(items.iter().any(|&w| w != items[0]));
}

#[test]
fn invalid_parameters_are_rejected() {
    let bad = [
        DistillParams { k: 0, ..Default::default() },
        DistillParams { k: 100, ..Default::default() },
        DistillParams { omega_min: 5.0, omega_max: 4.0, ..Default::default() },
        DistillParams { mu: 1.0, ..Default::default() },
        DistillParams { eta: 0.0, ..Default::default() },
    ];
    for p in bad {
        assert!(p.validate(100).is_err(), "{p:?}");
    }
    assert!(DistillParams { k: 99, ..Default::default() }.validate(100).is_ok());
}

#[test]
fn sampling_nfe_and_single_step_reduction() {
    let model = tiny_model(100);
    let classes = [0, 3, 5];
    for steps in [1, 2, 4, 8] {
        let out = lcm_sample(&model, steps, 5.0, &classes, &mut RngStream::new(13)).unwrap();
        assert_eq!(out.nfe, steps);
        assert_eq!(out.samples.shape(), &[3, 1, 2]);
    }
    let one = lcm_sample(&model, 1, 5.0, &classes, &mut RngStream::new(14)).unwrap();
    let z_t: Tensor<f64> = RngStream::new(14).gaussian(&[3, 1, 2]);
    let direct = model.consistency_fn(Branch::Ema, &z_t, &classes, &[5.0; 3], &[100; 3]).unwrap();
    assert!(one.samples.bitwise_eq(&direct));

    let again = lcm_sample(&model, 4, 5.0, &classes, &mut RngStream::new(15)).unwrap();
    let repeat = lcm_sample(&model, 4, 5.0, &classes, &mut RngStream::new(15)).unwrap();
    assert!(again.samples.bitwise_eq(&repeat.samples));

    let mut s = RngStream::new(16);
    let before = s;
    assert_eq!(lcm_sample(&model, 2, 5.0, &[], &mut s).unwrap().samples.numel(), 0);
    assert_eq!(s, before);
}

#[test]
fn distillation_leaves_teacher_untouched() {
    let n = 100;
    let teacher = TeacherModel {
        net: tiny_net(n, 17),
        schedule: schedule(n),
    };
    let before = teacher.net.params().clone();
    let params = DistillParams { k: 5, ..Default::default() };
    let config = DistillConfig {
        lr: 1e-3,
        steps: 3,
        batch: 8,
        per_item_omega: false,
    };
    let run = || {
        let mut d = Distiller::new(&teacher, params, ToyDataset::Rings2d, config, RngStream::new(18)).unwrap();
        d.run().unwrap();
        d
    };
    let a = run();
    let b = run();
    assert!(teacher.net.params().bitwise_eq(&before));
    assert!(a.teacher.net.params().bitwise_eq(&before.frozen()));
    assert!(a.model.student.params().bitwise_eq(b.model.student.params()));
    assert!(a.model.ema.params().bitwise_eq(b.model.ema.params()));
    assert_eq!(a.losses, b.losses);
    assert!(a.losses.iter().all(|&l| l > 0.0));
    assert!(!a.model.student.params().bitwise_eq(&before));
}
