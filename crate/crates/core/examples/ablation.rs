//! Switch off RoPE, RMSNorm or SwiGLU in turn on the sequence dataset.

use desklcm::harness::config::Config;
use desklcm::harness::experiment::{ablate, Component};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut cfg: Config = include_str!("../../../configs/seqtoy.toml").parse()?;
    cfg.teacher.steps = 600;
    cfg.distill.steps = 300;
    cfg.eval.samples = 500;

    let variants = [None, Some(Component::Rope), Some(Component::RmsNorm), Some(Component::SwiGlu)];
    println!("{:10} {:>12} {:>12} {:>12}", "drop", "frechet", "fidelity", "teacher");
    for drop in variants {
        let r = ablate(&cfg, drop, false)?;
        println!(
            "{:10} {:>12.4} {:>12.4} {:>12.4}",
            drop.map_or("none".to_string(), |c| c.to_string()),
            r.metric("frechet").unwrap_or(f64::NAN),
            r.metric("per_class_fidelity").unwrap_or(f64::NAN),
            r.metric("teacher_frechet").unwrap_or(f64::NAN),
        );
    }
    Ok(())
}
