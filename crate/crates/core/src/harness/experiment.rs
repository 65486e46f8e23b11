//! End-to-end drivers shared by the command line, the examples and the
//! acceptance suite: training, sampling, evaluation, sweeps and ablations.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::harness::checkpoint::Model;
use crate::harness::config::Config;
use crate::harness::data::ToyDataset;
use crate::harness::metrics::{empirical_frechet, noise_floor, per_class_fidelity};
use crate::harness::report::EvalReport;
use crate::lcm::{lcm_sample, ConsistencyModel, Distiller};
use crate::teacher::{ddim_sample, train_teacher, Sampled, TeacherModel};
use crate::tensor::{RngStream, Tensor};

/// Independent draw pairs averaged into the noise floor.
pub const NOISE_FLOOR_PAIRS: usize = 10;

/// Sampling steps evaluated at every grid point of the ω sweep.
pub const OMEGA_SWEEP_STEPS: [usize; 4] = [1, 2, 4, 8];

pub fn teacher_from_config(config: &Config) -> Result<(TeacherModel<f32>, Vec<f64>)> {
    train_teacher(
        config.net_config(),
        config.schedule()?,
        config.dataset(),
        config.teacher_config(),
        config.stream("teacher"),
    )
}

/// Distill `teacher` per `config`, calling `on_eval` every `every` steps
/// (never when `every` is 0).
pub fn distill_from_config<F>(config: &Config, teacher: &TeacherModel<f32>, every: usize, mut on_eval: F) -> Result<Distiller<f32>>
where
    F: FnMut(usize, &ConsistencyModel<f32>) -> Result<()>,
{
    if teacher.net.config() != &config.net_config() {
        return Err(Error::ArchitectureMismatch(format!(
            "teacher has {:?}, config describes {:?}",
            teacher.net.config(),
            config.net_config()
        )));
    }
    let mut d = Distiller::new(
        teacher,
        config.distill_params(),
        config.dataset(),
        config.distill_config(),
        config.stream("distill"),
    )?;
    while d.losses.len() < d.config.steps {
        d.step()?;
        let it = d.losses.len();
        if every > 0 && it % every == 0 {
            on_eval(it, &d.model)?;
        }
    }
    Ok(d)
}

/// Class selection for sampling.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Cond {
    Class(usize),
    /// i.i.d. uniform over the dataset's classes.
    All,
}

impl FromStr for Cond {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "all" {
            return Ok(Cond::All);
        }
        s.parse()
            .map(Cond::Class)
            .map_err(|_| Error::InvalidArgument(format!("condition must be a class index or \"all\", got {s:?}")))
    }
}

impl fmt::Display for Cond {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Cond::Class(c) => write!(f, "{c}"),
            Cond::All => f.write_str("all"),
        }
    }
}

pub fn classes_for(cond: Cond, count: usize, dataset: ToyDataset, stream: &mut RngStream) -> Result<Vec<usize>> {
    match cond {
        Cond::Class(c) if c >= dataset.num_classes() => Err(Error::UnknownClass(c)),
        Cond::Class(c) => Ok(vec![c; count]),
        Cond::All if count == 0 => Ok(Vec::new()),
        Cond::All => Ok(stream.integers(0, dataset.num_classes() - 1, count)),
    }
}

/// Guided DDIM for a teacher, multi-step consistency sampling for a
/// distilled model.
pub fn generate(model: &Model, steps: usize, omega: f64, classes: &[usize], stream: &mut RngStream) -> Result<Sampled<f32>> {
    match model {
        Model::Teacher(t) => {
            let c = t.net.config();
            ddim_sample(&t.schedule, t, (c.seq_len, c.data_dim), steps, omega, classes, stream)
        }
        Model::Consistency(m) => lcm_sample(m, steps, omega, classes, stream),
    }
}

/// Generated samples plus timing.
#[derive(Debug, Clone)]
pub struct Generation {
    pub labels: Vec<usize>,
    pub samples: Tensor<f32>,
    pub nfe: usize,
    pub seconds: f64,
}

/// Sample `count` items with classes and noise derived from `seed`.
pub fn generate_seeded(model: &Model, steps: usize, omega: f64, cond: Cond, count: usize, dataset: ToyDataset, seed: u64) -> Result<Generation> {
    let root = RngStream::new(seed);
    let labels = classes_for(cond, count, dataset, &mut root.split_named("labels"))?;
    let start = Instant::now();
    let out = generate(model, steps, omega, &labels, &mut root.split_named("sample"))?;
    let seconds = start.elapsed().as_secs_f64();
    Ok(Generation {
        labels,
        samples: out.samples,
        nfe: out.nfe,
        seconds,
    })
}

/// Fréchet distance to a fresh reference draw of the same size, class
/// fidelity, and the dataset's own two-draw noise floor, all seeded by `seed`.
pub fn evaluate(samples: &Tensor<f32>, labels: &[usize], dataset: ToyDataset, seed: u64) -> Result<EvalReport> {
    let n = labels.len();
    let root = RngStream::new(seed);
    let (reference, _) = dataset.draw::<f32>(n, &mut root.split_named("reference"))?;
    let flat = samples.reshape(&[n, dataset.item_len()])?;
    let reference = reference.reshape(&[n, dataset.item_len()])?;
    let floor = noise_floor(dataset, n, NOISE_FLOOR_PAIRS, &mut root.split_named("floor"))?;
    Ok(EvalReport::new(n, seed)
        .with_metric("frechet", empirical_frechet(&flat, &reference)?)
        .with_metric("per_class_fidelity", per_class_fidelity(samples, labels, dataset)?)
        .with_metric("noise_floor", floor))
}

/// Generate `count` uniformly conditioned samples and evaluate them.
pub fn evaluate_model(model: &Model, steps: usize, omega: f64, count: usize, dataset: ToyDataset, seed: u64, timing: bool) -> Result<EvalReport> {
    let g = generate_seeded(model, steps, omega, Cond::All, count, dataset, seed)?;
    let mut report = evaluate(&g.samples, &g.labels, dataset, seed)?;
    report.nfe = Some(g.nfe);
    if timing {
        report.wall_clock_per_sample = Some(g.seconds / count.max(1) as f64);
    }
    Ok(report)
}

fn metric(report: &EvalReport, name: &str) -> f64 {
    report.metric(name).expect("evaluate fills every metric")
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KSweepRow {
    pub k: usize,
    pub iteration: usize,
    pub frechet: f64,
    pub per_class_fidelity: f64,
    pub threshold: f64,
    /// First evaluated iteration at or below the threshold, or `never`.
    pub iterations_to_threshold: String,
}

/// Distill once per `k`, evaluating the student every `distill.eval_every`
/// steps against `2 ×` the teacher baseline's Fréchet distance.
pub fn sweep_k(config: &Config, teacher: &TeacherModel<f32>, grid: &[usize]) -> Result<Vec<KSweepRow>> {
    let ds = config.dataset();
    let e = config.eval;
    let baseline = evaluate_model(&Model::Teacher(teacher.clone()), e.teacher_steps, e.teacher_omega, e.samples, ds, config.seed, false)?;
    let threshold = 2.0 * metric(&baseline, "frechet");
    let mut rows = Vec::new();
    for &k in grid {
        let mut cfg = *config;
        cfg.distill.k = k;
        cfg.validate()?;
        let mut these: Vec<KSweepRow> = Vec::new();
        distill_from_config(&cfg, teacher, cfg.distill.eval_every, |it, model| {
            let r = evaluate_model(&Model::Consistency(model.clone()), cfg.sample.steps, cfg.sample.omega, e.samples, ds, cfg.seed, false)?;
            these.push(KSweepRow {
                k,
                iteration: it,
                frechet: metric(&r, "frechet"),
                per_class_fidelity: metric(&r, "per_class_fidelity"),
                threshold,
                iterations_to_threshold: String::new(),
            });
            Ok(())
        })?;
        let hit = these
            .iter()
            .find(|r| r.frechet <= threshold)
            .map_or_else(|| "never".to_string(), |r| r.iteration.to_string());
        for r in &mut these {
            r.iterations_to_threshold = hit.clone();
        }
        rows.extend(these);
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SampleSweepRow {
    pub omega: f64,
    pub steps: usize,
    pub nfe: usize,
    pub frechet: f64,
    pub per_class_fidelity: f64,
    pub wall_clock_per_sample: Option<f64>,
}

fn sample_row(model: &Model, config: &Config, steps: usize, omega: f64, timing: bool) -> Result<SampleSweepRow> {
    let r = evaluate_model(model, steps, omega, config.eval.samples, config.dataset(), config.seed, timing)?;
    Ok(SampleSweepRow {
        omega,
        steps,
        nfe: r.nfe.expect("set by evaluate_model"),
        frechet: metric(&r, "frechet"),
        per_class_fidelity: metric(&r, "per_class_fidelity"),
        wall_clock_per_sample: r.wall_clock_per_sample,
    })
}

/// Every ω on the grid at each of [`OMEGA_SWEEP_STEPS`].
pub fn sweep_omega(config: &Config, model: &Model, grid: &[f64], timing: bool) -> Result<Vec<SampleSweepRow>> {
    let mut rows = Vec::new();
    for &omega in grid {
        for steps in OMEGA_SWEEP_STEPS {
            rows.push(sample_row(model, config, steps, omega, timing)?);
        }
    }
    Ok(rows)
}

/// Quality against step count at the configured ω.
pub fn sweep_steps(config: &Config, model: &Model, grid: &[usize], timing: bool) -> Result<Vec<SampleSweepRow>> {
    grid.iter()
        .map(|&steps| sample_row(model, config, steps, config.sample.omega, timing))
        .collect()
}

pub fn rows_to_csv<R: Serialize>(rows: &[R]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    w.into_inner().map_err(|e| Error::InvalidArgument(e.to_string()))
}

/// Architecture component removed by an ablation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Component {
    Rope,
    RmsNorm,
    SwiGlu,
}

impl FromStr for Component {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rope" => Ok(Component::Rope),
            "rmsnorm" => Ok(Component::RmsNorm),
            "swiglu" => Ok(Component::SwiGlu),
            other => Err(Error::InvalidArgument(format!("unknown component {other:?}"))),
        }
    }
}

impl fmt::Display for Component {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Component::Rope => "rope",
            Component::RmsNorm => "rmsnorm",
            Component::SwiGlu => "swiglu",
        })
    }
}

/// Train a teacher and distill it with `drop` switched off (nothing when
/// `None`), then evaluate the student at the configured sampling settings.
///
/// The report also carries the teacher baseline as `teacher_frechet` and
/// `teacher_per_class_fidelity`.
pub fn ablate(config: &Config, drop: Option<Component>, timing: bool) -> Result<EvalReport> {
    let mut cfg = *config;
    match drop {
        Some(Component::Rope) => cfg.model.use_rope = false,
        Some(Component::RmsNorm) => cfg.model.use_rmsnorm = false,
        Some(Component::SwiGlu) => cfg.model.use_swiglu = false,
        None => {}
    }
    let ds = cfg.dataset();
    let (teacher, _) = teacher_from_config(&cfg)?;
    let e = cfg.eval;
    let baseline = evaluate_model(&Model::Teacher(teacher.clone()), e.teacher_steps, e.teacher_omega, e.samples, ds, cfg.seed, false)?;
    let student = distill_from_config(&cfg, &teacher, 0, |_, _| Ok(()))?;
    let report = evaluate_model(&Model::Consistency(student.model), cfg.sample.steps, cfg.sample.omega, e.samples, ds, cfg.seed, timing)?;
    Ok(report
        .with_metric("teacher_frechet", metric(&baseline, "frechet"))
        .with_metric("teacher_per_class_fidelity", metric(&baseline, "per_class_fidelity")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solver::{GaussianOracle, GaussianWorld};

    #[test]
    fn cond_parsing() {
        assert_eq!("all".parse::<Cond>().unwrap(), Cond::All);
        assert_eq!("3".parse::<Cond>().unwrap(), Cond::Class(3));
        assert!("x".parse::<Cond>().is_err());
        let mut s = RngStream::new(1);
        assert!(classes_for(Cond::Class(8), 3, ToyDataset::Rings2d, &mut s).is_err());
        assert_eq!(classes_for(Cond::Class(2), 3, ToyDataset::Rings2d, &mut s).unwrap(), vec![2; 3]);
        let all = classes_for(Cond::All, 4000, ToyDataset::Seqtoy, &mut s).unwrap();
        assert!((0..4).all(|c| all.contains(&c)) && all.iter().all(|&c| c < 4));
        assert_eq!("swiglu".parse::<Component>().unwrap().to_string(), "swiglu");
    }

    #[test]
    fn data_evaluated_against_data_sits_at_the_floor() {
        let ds = ToyDataset::Rings2d;
        let (mut fr, mut floor) = (0.0, 0.0);
        for seed in 0..10u64 {
            let (x, labels) = ds.draw::<f32>(2000, &mut RngStream::new(77 + seed)).unwrap();
            let r = evaluate(&x, &labels, ds, seed).unwrap();
            fr += r.metric("frechet").unwrap();
            floor += r.metric("noise_floor").unwrap();
            assert!(r.metric("per_class_fidelity").unwrap() < 0.14);
        }
        assert!(fr < 2.0 * floor && fr > 0.5 * floor, "{fr} vs {floor}");
    }

    #[test]
    fn exact_full_length_ddim_reproduces_a_gaussian_world() {
        // Every class and the unconditional branch share N(m, s²I), so DDIM with
        // the exact noise over all N steps transports N(0, I) onto it.
        let schedule = crate::schedule::NoiseSchedule::new(Default::default()).unwrap();
        let world = GaussianWorld::new(vec![0.5, -0.25], 0.3).unwrap();
        let oracle = GaussianOracle {
            schedule: schedule.clone(),
            classes: vec![world.clone()],
            unconditional: world.clone(),
        };
        let n = 2000;
        let mut s = RngStream::new(21);
        let out = ddim_sample::<f64, _>(&schedule, &oracle, (1, 2), schedule.n(), 0.0, &vec![0; n], &mut s).unwrap();
        let mut floor = 0.0;
        for _ in 0..NOISE_FLOOR_PAIRS {
            let mut draw = || {
                let v: Vec<f64> = s.normals(2 * n).iter().enumerate().map(|(i, e)| world.mean[i % 2] + 0.3 * e).collect();
                Tensor::<f64>::from_f64(&v, &[n, 2]).unwrap()
            };
            let (a, b) = (draw(), draw());
            floor += empirical_frechet(&a, &b).unwrap() / NOISE_FLOOR_PAIRS as f64;
        }
        let v: Vec<f64> = s.normals(2 * n).iter().enumerate().map(|(i, e)| world.mean[i % 2] + 0.3 * e).collect();
        let reference = Tensor::<f64>::from_f64(&v, &[n, 2]).unwrap();
        let w2 = empirical_frechet(&out.samples.reshape(&[n, 2]).unwrap(), &reference).unwrap();
        assert!(w2 < 2.0 * floor, "{w2} vs floor {floor}");
    }
}
