//! Guidance scale against sampling steps for a quickly distilled model,
//! written as CSV to stdout.

use desklcm::harness::checkpoint::Model;
use desklcm::harness::config::Config;
use desklcm::harness::experiment::{distill_from_config, rows_to_csv, sweep_omega, teacher_from_config};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut cfg: Config = include_str!("../../../configs/rings2d.toml").parse()?;
    cfg.teacher.steps = 3000;
    cfg.distill.steps = 2000;
    cfg.eval.samples = 1000;

    let (teacher, _) = teacher_from_config(&cfg)?;
    let student = Model::Consistency(distill_from_config(&cfg, &teacher, 0, |_, _| Ok(()))?.model);
    let rows = sweep_omega(&cfg, &student, &[0.0, 1.0, 2.0, 3.0, 5.0], false)?;
    print!("{}", String::from_utf8(rows_to_csv(&rows)?)?);
    Ok(())
}
