//! ε-prediction diffusion teacher: training with condition dropout and
//! guided DDIM sampling.

use crate::error::{Error, Result};
use crate::harness::data::ToyDataset;
use crate::nn::{DenoiserNet, NetConfig};
use crate::optim::{AdamWConfig, OptimizerState};
use crate::schedule::NoiseSchedule;
use crate::solver::{k_step_estimate, NoisePredictor};
use crate::tensor::{Element, RngStream, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TeacherConfig {
    pub lr: f64,
    pub steps: usize,
    pub batch: usize,
    pub p_uncond: f64,
}

impl Default for TeacherConfig {
    fn default() -> Self {
        TeacherConfig {
            lr: 9.6e-5,
            steps: 20_000,
            batch: 64,
            p_uncond: 0.1,
        }
    }
}

/// A noise predictor paired with its schedule. The guidance-scale input is
/// held at zero.
#[derive(Debug, Clone)]
pub struct TeacherModel<T: Element> {
    pub net: DenoiserNet<T>,
    pub schedule: NoiseSchedule,
}

impl<T: Element> TeacherModel<T> {
    pub fn new(config: NetConfig, schedule: NoiseSchedule, rng: &RngStream) -> Result<Self> {
        if config.num_timesteps != schedule.n() {
            return Err(Error::ArchitectureMismatch(format!(
                "network expects {} timesteps, schedule has {}",
                config.num_timesteps,
                schedule.n()
            )));
        }
        Ok(TeacherModel {
            net: DenoiserNet::new(config, rng)?,
            schedule,
        })
    }

    /// Copy with gradient tracking disabled on every parameter.
    pub fn frozen(&self) -> Self {
        TeacherModel {
            net: self.net.frozen(),
            schedule: self.schedule.clone(),
        }
    }
}

impl<T: Element> NoisePredictor<T> for TeacherModel<T> {
    fn predict(&self, z: &Tensor<T>, t: &[usize], c: &[usize]) -> Result<Tensor<T>> {
        self.net.forward(z, t, c, &vec![0.0; t.len()])
    }

    fn null_class(&self) -> usize {
        self.net.config().null_class()
    }
}

/// Mean squared error between predicted and true noise at per-item timesteps.
pub fn epsilon_loss<T: Element>(
    teacher: &TeacherModel<T>,
    z0: &Tensor<T>,
    t: &[usize],
    noise: &Tensor<T>,
    c: &[usize],
) -> Result<Tensor<T>> {
    let zt = teacher.schedule.perturb_items(z0, t, noise)?;
    teacher.predict(&zt, t, c)?.mse(noise)
}

/// Replace each label by `null` with probability `p`.
pub fn drop_labels(labels: &[usize], p: f64, null: usize, stream: &mut RngStream) -> Vec<usize> {
    stream
        .uniforms(labels.len())
        .into_iter()
        .zip(labels)
        .map(|(u, &c)| if u <= p { null } else { c })
        .collect()
}

#[derive(Debug, Clone)]
pub struct TeacherTrainer<T: Element> {
    pub model: TeacherModel<T>,
    pub config: TeacherConfig,
    pub optimizer: OptimizerState<T>,
    pub losses: Vec<f64>,
    dataset: ToyDataset,
    stream: RngStream,
}

impl<T: Element> TeacherTrainer<T> {
    pub fn new(model: TeacherModel<T>, dataset: ToyDataset, config: TeacherConfig, stream: RngStream) -> Result<Self> {
        let (l, d) = dataset.item_shape();
        let nc = model.net.config();
        if nc.seq_len != l || nc.data_dim != d || nc.num_classes != dataset.num_classes() {
            return Err(Error::ArchitectureMismatch(format!(
                "network shape {}×{} with {} classes does not fit dataset {dataset}",
                nc.seq_len, nc.data_dim, nc.num_classes
            )));
        }
        if config.batch == 0 || !(0.0..=1.0).contains(&config.p_uncond) {
            return Err(Error::InvalidArgument(format!("invalid teacher config {config:?}")));
        }
        let optimizer = OptimizerState::new(AdamWConfig::with_lr(config.lr), model.net.params());
        Ok(TeacherTrainer {
            model,
            config,
            optimizer,
            losses: Vec::new(),
            dataset,
            stream,
        })
    }

    /// Batch inputs for step `step`: clean data, timesteps, noise, labels after dropout.
    pub fn batch(&self, step: usize) -> Result<(Tensor<T>, Vec<usize>, Tensor<T>, Vec<usize>)> {
        let mut s = self.stream.split(step as u64);
        let b = self.config.batch;
        let (z0, labels) = self.dataset.draw::<T>(b, &mut s)?;
        let t = s.integers(1, self.model.schedule.n(), b);
        let noise = s.gaussian(z0.shape());
        let labels = drop_labels(&labels, self.config.p_uncond, self.model.null_class(), &mut s);
        Ok((z0, t, noise, labels))
    }

    pub fn step(&mut self) -> Result<f64> {
        let step = self.losses.len();
        let (z0, t, noise, labels) = self.batch(step)?;
        let loss = epsilon_loss(&self.model, &z0, &t, &noise, &labels)?;
        let value = loss.item().as_f64();
        if !value.is_finite() {
            return Err(Error::Diverged { step, loss: value });
        }
        let grads = loss.backward()?;
        self.optimizer.update(self.model.net.params_mut(), &grads);
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

/// Train a fresh teacher; returns the model and its per-step losses.
pub fn train_teacher<T: Element>(
    net_config: NetConfig,
    schedule: NoiseSchedule,
    dataset: ToyDataset,
    config: TeacherConfig,
    stream: RngStream,
) -> Result<(TeacherModel<T>, Vec<f64>)> {
    let model = TeacherModel::new(net_config, schedule, &stream.split_named("init"))?;
    let mut trainer = TeacherTrainer::new(model, dataset, config, stream.split_named("train"))?;
    trainer.run()?;
    Ok((trainer.model, trainer.losses))
}

#[derive(Debug, Clone)]
pub struct Sampled<T: Element> {
    pub samples: Tensor<T>,
    /// Network evaluations per generated sample.
    pub nfe: usize,
}

/// Guided DDIM sampling from `z_N ~ N(0, I)` over `sampling_grid(steps)` down to 0.
///
/// Each step evaluates the conditional branch, plus the unconditional one
/// when `omega != 0`.
pub fn ddim_sample<T: Element, P: NoisePredictor<T> + ?Sized>(
    schedule: &NoiseSchedule,
    predictor: &P,
    item_shape: (usize, usize),
    steps: usize,
    omega: f64,
    classes: &[usize],
    stream: &mut RngStream,
) -> Result<Sampled<T>> {
    let mut grid = schedule.sampling_grid(steps)?.indices().to_vec();
    grid.push(0);
    let n = classes.len();
    let shape = [n, item_shape.0, item_shape.1];
    let branches = if omega == 0.0 { 1 } else { 2 };
    if n == 0 {
        return Ok(Sampled {
            samples: Tensor::zeros(&shape),
            nfe: steps * branches,
        });
    }
    let mut z = stream.gaussian::<T>(&shape);
    let omegas = vec![omega; n];
    for w in grid.windows(2) {
        z = k_step_estimate(schedule, predictor, &z, &vec![w[0]; n], &vec![w[1]; n], classes, &omegas)?;
    }
    Ok(Sampled {
        samples: z,
        nfe: steps * branches,
    })
}
