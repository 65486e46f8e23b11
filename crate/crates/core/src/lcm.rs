//! Guided consistency distillation from a frozen teacher and multi-step
//! consistency sampling.

use crate::error::{Error, Result};
use crate::harness::data::ToyDataset;
use crate::nn::DenoiserNet;
use crate::optim::{AdamWConfig, OptimizerState};
use crate::schedule::NoiseSchedule;
use crate::solver::{k_step_estimate, NoisePredictor};
use crate::teacher::{Sampled, TeacherModel};
use crate::tensor::{Element, RngStream, Tensor};

/// A noise predictor that also takes a guidance scale per item.
pub trait GuidedPredictor<T: Element> {
    fn predict_guided(&self, z: &Tensor<T>, t: &[usize], c: &[usize], omega: &[f64]) -> Result<Tensor<T>>;
}

impl<T: Element> GuidedPredictor<T> for DenoiserNet<T> {
    fn predict_guided(&self, z: &Tensor<T>, t: &[usize], c: &[usize], omega: &[f64]) -> Result<Tensor<T>> {
        self.forward(z, t, c, omega)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistillParams {
    /// Schedule steps skipped by one solver estimate.
    pub k: usize,
    pub omega_min: f64,
    pub omega_max: f64,
    /// EMA rate of the target network.
    pub mu: f64,
    /// Huber threshold.
    pub eta: f64,
}

impl Default for DistillParams {
    fn default() -> Self {
        DistillParams {
            k: 20,
            omega_min: 4.0,
            omega_max: 12.0,
            mu: 0.95,
            eta: 0.5,
        }
    }
}

impl DistillParams {
    pub fn validate(&self, n: usize) -> Result<()> {
        let ok = self.k >= 1
            && self.k < n
            && self.omega_min <= self.omega_max
            && (0.0..1.0).contains(&self.mu)
            && self.eta > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "invalid distillation parameters {self:?} for {n} timesteps"
            )))
        }
    }
}

/// Which parameter set evaluates the consistency function.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    Student,
    Ema,
}

/// `c_skip(t)·z + c_out(t)·(z − σ_t ε̂)/α_t` for per-item timesteps.
///
/// Returns `z` unchanged when every timestep is 0, without evaluating the
/// predictor.
pub fn consistency_fn<T: Element, P: GuidedPredictor<T> + ?Sized>(
    schedule: &NoiseSchedule,
    predictor: &P,
    z: &Tensor<T>,
    c: &[usize],
    omega: &[f64],
    t: &[usize],
) -> Result<Tensor<T>> {
    for &ti in t {
        schedule.check(ti)?;
    }
    if t.iter().all(|&ti| ti == 0) {
        crate::schedule::per_item(z, t.len())?;
        return Ok(z.clone());
    }
    let eps = predictor.predict_guided(z, t, c, omega)?;
    let per = crate::schedule::per_item(z, t.len())?;
    let mut skip = Vec::with_capacity(z.numel());
    let mut gain = Vec::with_capacity(z.numel());
    for (i, &ti) in t.iter().enumerate() {
        let (c_skip, c_out) = schedule.boundary_coeffs(ti);
        let (a, s) = (schedule.alpha(ti), schedule.sigma(ti));
        let (zs, g) = if ti == 0 {
            (1.0, 0.0)
        } else {
            (c_skip + c_out / a, -c_out * s / a)
        };
        skip.extend(z.data()[i * per..(i + 1) * per].iter().map(|&x| T::of(zs) * x));
        gain.extend(std::iter::repeat_n(T::of(g), per));
    }
    let skip = Tensor::new(skip, z.shape())?;
    let gain = Tensor::new(gain, z.shape())?;
    skip.add(&eps.mul(&gain)?)
}

/// Student θ, EMA target θ⁻ and the distillation hyperparameters.
#[derive(Debug, Clone)]
pub struct ConsistencyModel<T: Element> {
    pub student: DenoiserNet<T>,
    pub ema: DenoiserNet<T>,
    pub schedule: NoiseSchedule,
    pub params: DistillParams,
}

impl<T: Element> ConsistencyModel<T> {
    /// Both parameter sets start as exact copies of the teacher.
    pub fn from_teacher(teacher: &TeacherModel<T>, params: DistillParams) -> Result<Self> {
        Self::new(teacher.net.trainable(), teacher.net.frozen(), teacher.schedule.clone(), params)
    }

    pub fn new(student: DenoiserNet<T>, ema: DenoiserNet<T>, schedule: NoiseSchedule, params: DistillParams) -> Result<Self> {
        params.validate(schedule.n())?;
        if student.config() != ema.config() || !student.params().same_layout(ema.params()) {
            return Err(Error::ArchitectureMismatch("student and EMA networks differ".into()));
        }
        if student.config().num_timesteps != schedule.n() {
            return Err(Error::ArchitectureMismatch(format!(
                "network expects {} timesteps, schedule has {}",
                student.config().num_timesteps,
                schedule.n()
            )));
        }
        Ok(ConsistencyModel {
            student: student.trainable(),
            ema: ema.frozen(),
            schedule,
            params,
        })
    }

    pub fn net(&self, which: Branch) -> &DenoiserNet<T> {
        match which {
            Branch::Student => &self.student,
            Branch::Ema => &self.ema,
        }
    }

    pub fn consistency_fn(&self, which: Branch, z: &Tensor<T>, c: &[usize], omega: &[f64], t: &[usize]) -> Result<Tensor<T>> {
        consistency_fn(&self.schedule, self.net(which), z, c, omega, t)
    }

    /// `θ⁻ ← μθ⁻ + (1−μ)θ`; the target stays detached.
    pub fn ema_update(&mut self, mu: f64) -> Result<()> {
        if !(0.0..1.0).contains(&mu) {
            return Err(Error::InvalidArgument(format!("EMA rate {mu} outside [0, 1)")));
        }
        let (a, b) = (T::of(mu), T::of(1.0 - mu));
        let fresh: Vec<Vec<T>> = self
            .ema
            .params()
            .tensors()
            .iter()
            .zip(self.student.params().tensors())
            .map(|(e, s)| e.data().iter().zip(s.data()).map(|(&e, &s)| a * e + b * s).collect())
            .collect();
        let store = self.ema.params_mut();
        for (i, data) in fresh.into_iter().enumerate() {
            store.set_index(i, data)?;
        }
        Ok(())
    }
}

/// Huber distance between the student's map at `n+k` and the target map of
/// the teacher's guided `k`-skip estimate at `n`.
///
/// The target side is detached; only the student receives gradients.
#[allow(clippy::too_many_arguments)]
pub fn distillation_loss<T, S, E, P>(
    schedule: &NoiseSchedule,
    params: &DistillParams,
    student: &S,
    ema: &E,
    teacher: &P,
    z0: &Tensor<T>,
    c: &[usize],
    n: &[usize],
    omega: &[f64],
    noise: &Tensor<T>,
) -> Result<Tensor<T>>
where
    T: Element,
    S: GuidedPredictor<T> + ?Sized,
    E: GuidedPredictor<T> + ?Sized,
    P: NoisePredictor<T> + ?Sized,
{
    let upper: Vec<usize> = n.iter().map(|&i| i + params.k).collect();
    let z_upper = schedule.perturb_items(z0, &upper, noise)?;
    let z_lower = k_step_estimate(schedule, teacher, &z_upper, &upper, n, c, omega)?;
    let target = consistency_fn(schedule, ema, &z_lower, c, omega, n)?.detach();
    let pred = consistency_fn(schedule, student, &z_upper, c, omega, &upper)?;
    pred.huber(&target, params.eta)
}

/// Lower timestep indices `n ~ U{1, …, N−k}`.
pub fn sample_lower_indices(stream: &mut RngStream, count: usize, n: usize, k: usize) -> Vec<usize> {
    stream.integers(1, n - k, count)
}

/// Guidance scales `ω ~ U[ω_min, ω_max]`, one per batch or one per item.
pub fn sample_omegas(stream: &mut RngStream, count: usize, params: &DistillParams, per_item: bool) -> Vec<f64> {
    let draws = if per_item { count } else { 1 };
    let w: Vec<f64> = stream
        .uniforms(draws)
        .into_iter()
        .map(|u| params.omega_min + (params.omega_max - params.omega_min) * u)
        .collect();
    if per_item {
        w
    } else {
        vec![w[0]; count]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistillConfig {
    pub lr: f64,
    pub steps: usize,
    pub batch: usize,
    pub per_item_omega: bool,
}

impl Default for DistillConfig {
    fn default() -> Self {
        DistillConfig {
            lr: 9.6e-5,
            steps: 4000,
            batch: 64,
            per_item_omega: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Distiller<T: Element> {
    pub model: ConsistencyModel<T>,
    pub teacher: TeacherModel<T>,
    pub config: DistillConfig,
    pub optimizer: OptimizerState<T>,
    pub losses: Vec<f64>,
    dataset: ToyDataset,
    stream: RngStream,
}

impl<T: Element> Distiller<T> {
    pub fn new(
        teacher: &TeacherModel<T>,
        params: DistillParams,
        dataset: ToyDataset,
        config: DistillConfig,
        stream: RngStream,
    ) -> Result<Self> {
        if config.batch == 0 {
            return Err(Error::InvalidArgument("distillation batch must be positive".into()));
        }
        let model = ConsistencyModel::from_teacher(teacher, params)?;
        let optimizer = OptimizerState::new(AdamWConfig::with_lr(config.lr), model.student.params());
        Ok(Distiller {
            model,
            teacher: teacher.frozen(),
            config,
            optimizer,
            losses: Vec::new(),
            dataset,
            stream,
        })
    }

    pub fn step(&mut self) -> Result<f64> {
        let step = self.losses.len();
        let mut s = self.stream.split(step as u64);
        let b = self.config.batch;
        let (z0, c) = self.dataset.draw::<T>(b, &mut s)?;
        let p = self.model.params;
        let n = sample_lower_indices(&mut s, b, self.model.schedule.n(), p.k);
        let omega = sample_omegas(&mut s, b, &p, self.config.per_item_omega);
        let noise = s.gaussian(z0.shape());
        let m = &self.model;
        let loss = distillation_loss(&m.schedule, &p, &m.student, &m.ema, &self.teacher, &z0, &c, &n, &omega, &noise)?;
        let value = loss.item().as_f64();
        if !value.is_finite() {
            return Err(Error::Diverged { step, loss: value });
        }
        let grads = loss.backward()?;
        self.optimizer.update(self.model.student.params_mut(), &grads);
        self.model.ema_update(p.mu)?;
        self.losses.push(value);
        Ok(value)
    }

    pub fn run(&mut self) -> Result<()> {
        while self.losses.len() < self.config.steps {
            self.step()?;
        }
        Ok(())
    }
}

/// Multi-step consistency sampling with the EMA weights.
///
/// Maps pure noise at `T = N`, then alternates re-noising to the next grid
/// time and mapping back. Performs exactly `steps` network evaluations.
pub fn lcm_sample<T: Element>(
    model: &ConsistencyModel<T>,
    steps: usize,
    omega: f64,
    classes: &[usize],
    stream: &mut RngStream,
) -> Result<Sampled<T>> {
    let grid = model.schedule.sampling_grid(steps)?;
    let net = &model.ema;
    let cfg = net.config();
    let n = classes.len();
    let shape = [n, cfg.seq_len, cfg.data_dim];
    if n == 0 {
        return Ok(Sampled {
            samples: Tensor::zeros(&shape),
            nfe: steps,
        });
    }
    let omegas = vec![omega; n];
    let mut z = stream.gaussian::<T>(&shape);
    for (i, &t) in grid.indices().iter().enumerate() {
        if i > 0 {
            let noise = stream.gaussian::<T>(&shape);
            z = model.schedule.perturb(&z, t, &noise)?;
        }
        z = consistency_fn(&model.schedule, net, &z, classes, &omegas, &vec![t; n])?;
    }
    Ok(Sampled { samples: z, nfe: steps })
}

#[cfg(test)]
mod tests;
