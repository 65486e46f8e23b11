//! Experiment configuration: a flat TOML file of dotted keys.
//!
//! ```toml
//! seed = 7
//! data.name = "rings2d"
//! schedule.N = 1000
//! model.width = 64
//! teacher.lr = 1e-3
//! distill.k = 20
//! sample.steps = 2
//! ```
//!
//! Every key of the `schedule`, `model`, `teacher`, `distill` (except the
//! optional ones noted below), `sample` and `data` groups is required.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::data::ToyDataset;
use crate::lcm::{DistillConfig, DistillParams};
use crate::nn::{NetConfig, Toggles};
use crate::schedule::{NoiseSchedule, ScheduleParams};
use crate::teacher::TeacherConfig;
use crate::tensor::RngStream;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub blocks: usize,
    pub width: usize,
    pub heads: usize,
    pub ffn: usize,
    pub use_rope: bool,
    pub use_rmsnorm: bool,
    pub use_swiglu: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TeacherSection {
    pub lr: f64,
    pub steps: usize,
    pub batch: usize,
    pub p_uncond: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistillSection {
    pub k: usize,
    pub omega_min: f64,
    pub omega_max: f64,
    pub mu: f64,
    pub eta: f64,
    pub lr: f64,
    pub steps: usize,
    /// Defaults to `teacher.batch`.
    #[serde(default)]
    pub batch: Option<usize>,
    /// Draw ω per item instead of once per batch.
    #[serde(default)]
    pub per_item_omega: bool,
    /// Evaluation interval of the k sweep.
    #[serde(default = "default_eval_every")]
    pub eval_every: usize,
}

fn default_eval_every() -> usize {
    500
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleSection {
    pub steps: usize,
    pub omega: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub name: ToyDataset,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    /// Generated and reference samples per evaluation.
    pub samples: usize,
    /// Teacher baseline used for sweep thresholds.
    pub teacher_steps: usize,
    pub teacher_omega: f64,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            samples: 2000,
            teacher_steps: 50,
            teacher_omega: 2.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub seed: u64,
    pub data: DataSection,
    pub schedule: ScheduleParams,
    pub model: ModelSection,
    pub teacher: TeacherSection,
    pub distill: DistillSection,
    pub sample: SampleSection,
    #[serde(default)]
    pub eval: EvalSection,
}

impl std::str::FromStr for Config {
    type Err = Error;

    fn from_str(text: &str) -> Result<Self> {
        let config: Config = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }
}

impl Config {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        text.parse()
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let schedule = self.schedule()?;
        self.distill_params().validate(schedule.n())?;
        let bad = |what: &str| Err(Error::Config(what.to_string()));
        let m = &self.model;
        if m.width == 0 || m.blocks == 0 || m.heads == 0 || m.ffn == 0 {
            return bad("model sizes must be positive");
        }
        if !m.width.is_multiple_of(m.heads) || !(m.width / m.heads).is_multiple_of(2) {
            return bad("model.width must split into heads of even width");
        }
        if self.teacher.batch == 0 || self.distill_config().batch == 0 {
            return bad("batch sizes must be positive");
        }
        if !(0.0..=1.0).contains(&self.teacher.p_uncond) {
            return bad("teacher.p_uncond must lie in [0, 1]");
        }
        if self.teacher.lr <= 0.0 || self.distill.lr <= 0.0 {
            return bad("learning rates must be positive");
        }
        if self.sample.steps == 0 || self.sample.steps > schedule.n() {
            return bad("sample.steps must lie in [1, schedule.N]");
        }
        if self.distill.eval_every == 0 {
            return bad("distill.eval_every must be positive");
        }
        if self.eval.samples < 2 || self.eval.teacher_steps == 0 || self.eval.teacher_steps > schedule.n() {
            return bad("eval.samples must be at least 2 and eval.teacher_steps within the schedule");
        }
        Ok(())
    }

    pub fn dataset(&self) -> ToyDataset {
        self.data.name
    }

    pub fn schedule(&self) -> Result<NoiseSchedule> {
        NoiseSchedule::new(self.schedule)
    }

    pub fn net_config(&self) -> NetConfig {
        let ds = self.dataset();
        let (seq_len, data_dim) = ds.item_shape();
        NetConfig {
            data_dim,
            seq_len,
            width: self.model.width,
            blocks: self.model.blocks,
            heads: self.model.heads,
            ffn: self.model.ffn,
            num_classes: ds.num_classes(),
            num_timesteps: self.schedule.n,
            toggles: Toggles {
                use_rope: self.model.use_rope,
                use_rmsnorm: self.model.use_rmsnorm,
                use_swiglu: self.model.use_swiglu,
            },
        }
    }

    pub fn teacher_config(&self) -> TeacherConfig {
        let t = &self.teacher;
        TeacherConfig {
            lr: t.lr,
            steps: t.steps,
            batch: t.batch,
            p_uncond: t.p_uncond,
        }
    }

    pub fn distill_params(&self) -> DistillParams {
        let d = &self.distill;
        DistillParams {
            k: d.k,
            omega_min: d.omega_min,
            omega_max: d.omega_max,
            mu: d.mu,
            eta: d.eta,
        }
    }

    pub fn distill_config(&self) -> DistillConfig {
        let d = &self.distill;
        DistillConfig {
            lr: d.lr,
            steps: d.steps,
            batch: d.batch.unwrap_or(self.teacher.batch),
            per_item_omega: d.per_item_omega,
        }
    }

    /// Root stream for a named stage, derived from `seed`.
    pub fn stream(&self, stage: &str) -> RngStream {
        RngStream::new(self.seed).split_named(stage)
    }
}
