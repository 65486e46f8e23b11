use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use desklcm::harness::checkpoint::{write_atomic, Checkpoint, Model};
use desklcm::harness::config::Config;
use desklcm::harness::data::ToyDataset;
use desklcm::harness::experiment::{self, Component, Cond};
use desklcm::harness::report::{EvalReport, SampleSet};
use desklcm::schedule::NoiseSchedule;
use desklcm::solver::oracle_check;

#[derive(Parser)]
#[command(name = "desklcm", version, about = "Guided latent consistency distillation on toy data")]
struct Cli {
    /// Omit wall-clock fields so reruns produce byte-identical output.
    #[arg(long, global = true)]
    no_timing: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum SweepKind {
    K,
    Omega,
    Steps,
}

#[derive(Clone, Copy, ValueEnum)]
enum Drop {
    Rope,
    Rmsnorm,
    Swiglu,
    /// Baseline with every component kept.
    None,
}

#[derive(Subcommand)]
enum Command {
    /// Train the noise-prediction teacher.
    TrainTeacher {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Distill a teacher checkpoint into a consistency model.
    Distill {
        #[arg(long)]
        teacher: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Draw samples from a teacher or distilled checkpoint into a CSV file.
    Sample {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        steps: usize,
        #[arg(long)]
        omega: f64,
        /// Class index, or `all` for uniformly drawn classes.
        #[arg(long)]
        cond: Cond,
        #[arg(long)]
        count: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Also write the sampling report (NFE, timing) here.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Score a sample CSV against fresh draws from a dataset.
    Eval {
        #[arg(long)]
        samples: PathBuf,
        #[arg(long)]
        dataset: ToyDataset,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Report written by `sample`; its NFE and timing are carried over.
        #[arg(long)]
        sample_report: Option<PathBuf>,
    },
    /// Sweep the skip interval, guidance scale, or sampling step count.
    Sweep {
        #[arg(long, value_enum)]
        kind: SweepKind,
        #[arg(long)]
        grid: String,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Reuse this teacher instead of training one from the config.
        #[arg(long)]
        teacher: Option<PathBuf>,
        /// Reuse this distilled model (omega and steps sweeps).
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Run the closed-form solver validations.
    OracleCheck,
    /// Train and distill with one architecture component removed.
    Ablate {
        #[arg(long, value_enum)]
        drop: Drop,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn parse_grid<T: std::str::FromStr>(grid: &str) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    let values = grid
        .split(',')
        .map(|s| s.trim().parse::<T>().map_err(|e| anyhow::anyhow!("bad grid value {s:?}: {e}")))
        .collect::<Result<Vec<_>>>()?;
    if values.is_empty() {
        bail!("empty grid");
    }
    Ok(values)
}

fn load_teacher(path: &Path, config: &Config) -> Result<desklcm::teacher::TeacherModel<f32>> {
    let ck = Checkpoint::load(path).with_context(|| format!("loading {}", path.display()))?;
    ck.expect_architecture(&config.net_config())?;
    if ck.model.schedule().params() != &config.schedule {
        bail!("teacher schedule {:?} differs from the config", ck.model.schedule().params());
    }
    Ok(ck.into_teacher()?)
}

fn teacher_for(config: &Config, path: Option<&Path>) -> Result<desklcm::teacher::TeacherModel<f32>> {
    match path {
        Some(p) => load_teacher(p, config),
        None => Ok(experiment::teacher_from_config(config)?.0),
    }
}

fn print_json(report: &EvalReport) -> Result<()> {
    print!("{}", report.to_json()?);
    Ok(())
}

fn run(cli: Cli) -> Result<bool> {
    let timing = !cli.no_timing;
    match cli.command {
        Command::TrainTeacher { config, out } => {
            let cfg = Config::load(&config)?;
            let (teacher, losses) = experiment::teacher_from_config(&cfg)?;
            let tail = &losses[losses.len() - losses.len().div_ceil(10).min(losses.len())..];
            if !tail.is_empty() {
                eprintln!("final loss {:.5}", tail.iter().sum::<f64>() / tail.len() as f64);
            }
            Checkpoint::teacher(cfg.dataset(), teacher).save(&out)?;
        }
        Command::Distill { teacher, config, out } => {
            let cfg = Config::load(&config)?;
            let t = load_teacher(&teacher, &cfg)?;
            let d = experiment::distill_from_config(&cfg, &t, 0, |_, _| Ok(()))?;
            Checkpoint::consistency(cfg.dataset(), d.model).save(&out)?;
        }
        Command::Sample {
            model,
            steps,
            omega,
            cond,
            count,
            out,
            seed,
            report,
        } => {
            let ck = Checkpoint::load(&model).with_context(|| format!("loading {}", model.display()))?;
            let g = experiment::generate_seeded(&ck.model, steps, omega, cond, count, ck.dataset, seed)?;
            SampleSet::from_tensor(&g.samples, &g.labels)?.save(&out)?;
            let mut r = EvalReport::new(count, seed);
            r.nfe = Some(g.nfe);
            if timing {
                r.wall_clock_per_sample = Some(g.seconds / count.max(1) as f64);
            }
            if let Some(path) = report {
                r.save(path)?;
            }
            print_json(&r)?;
        }
        Command::Eval {
            samples,
            dataset,
            out,
            seed,
            sample_report,
        } => {
            let set = SampleSet::load(&samples)?;
            if set.dim != dataset.item_len() {
                bail!("samples have {} values per row, {dataset} items have {}", set.dim, dataset.item_len());
            }
            let (l, d) = dataset.item_shape();
            let x = set.tensor::<f32>()?.reshape(&[set.len(), l, d])?;
            let mut r = experiment::evaluate(&x, &set.labels, dataset, seed)?;
            if let Some(path) = sample_report {
                let s = EvalReport::load(path)?;
                r.nfe = s.nfe;
                r.wall_clock_per_sample = if timing { s.wall_clock_per_sample } else { None };
            }
            r.save(&out)?;
            print_json(&r)?;
        }
        Command::Sweep {
            kind,
            grid,
            config,
            out,
            teacher,
            model,
        } => {
            let cfg = Config::load(&config)?;
            let csv = match kind {
                SweepKind::K => {
                    let t = teacher_for(&cfg, teacher.as_deref())?;
                    experiment::rows_to_csv(&experiment::sweep_k(&cfg, &t, &parse_grid(&grid)?)?)?
                }
                SweepKind::Omega | SweepKind::Steps => {
                    let m = match model {
                        Some(p) => {
                            let ck = Checkpoint::load(&p)?;
                            ck.expect_architecture(&cfg.net_config())?;
                            ck.model
                        }
                        None => {
                            let t = teacher_for(&cfg, teacher.as_deref())?;
                            Model::Consistency(experiment::distill_from_config(&cfg, &t, 0, |_, _| Ok(()))?.model)
                        }
                    };
                    let rows = match kind {
                        SweepKind::Omega => experiment::sweep_omega(&cfg, &m, &parse_grid(&grid)?, timing)?,
                        _ => experiment::sweep_steps(&cfg, &m, &parse_grid(&grid)?, timing)?,
                    };
                    experiment::rows_to_csv(&rows)?
                }
            };
            write_atomic(&out, &csv)?;
        }
        Command::OracleCheck => {
            let checks = oracle_check(&NoiseSchedule::new(Default::default())?)?;
            let mut ok = true;
            for c in &checks {
                println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
                ok &= c.passed;
            }
            return Ok(ok);
        }
        Command::Ablate { drop, config, out } => {
            let cfg = Config::load(&config)?;
            let component = match drop {
                Drop::Rope => Some(Component::Rope),
                Drop::Rmsnorm => Some(Component::RmsNorm),
                Drop::Swiglu => Some(Component::SwiGlu),
                Drop::None => None,
            };
            let r = experiment::ablate(&cfg, component, timing)?;
            if let Some(path) = out {
                r.save(path)?;
            }
            print_json(&r)?;
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
