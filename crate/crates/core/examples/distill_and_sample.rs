//! Teacher, then consistency distillation, then 1..8 step sampling.
//!
//! ```text
//! cargo run --release --example distill_and_sample -- 4000 3000
//! ```

use desklcm::harness::checkpoint::Model;
use desklcm::harness::config::Config;
use desklcm::harness::experiment::{distill_from_config, evaluate_model, teacher_from_config};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1).map(|s| s.parse::<usize>());
    let mut cfg: Config = include_str!("../../../configs/rings2d.toml").parse()?;
    cfg.teacher.steps = args.next().transpose()?.unwrap_or(3000);
    cfg.distill.steps = args.next().transpose()?.unwrap_or(2000);
    let ds = cfg.dataset();

    let (teacher, _) = teacher_from_config(&cfg)?;
    let base = evaluate_model(&Model::Teacher(teacher.clone()), 50, cfg.sample.omega, 2000, ds, 0, true)?;
    println!(
        "teacher  steps 50 nfe {:>3}  frechet {:.4}  fidelity {:.4}",
        base.nfe.unwrap_or(0),
        base.metric("frechet").unwrap_or(f64::NAN),
        base.metric("per_class_fidelity").unwrap_or(f64::NAN)
    );

    let d = distill_from_config(&cfg, &teacher, 500, |it, _| {
        println!("distill iteration {it}");
        Ok(())
    })?;
    let student = Model::Consistency(d.model);
    for steps in [1, 2, 4, 8] {
        let r = evaluate_model(&student, steps, cfg.sample.omega, 2000, ds, 0, true)?;
        println!(
            "student  steps {steps:>2} nfe {:>3}  frechet {:.4}  fidelity {:.4}  {:.1} us/sample",
            r.nfe.unwrap_or(0),
            r.metric("frechet").unwrap_or(f64::NAN),
            r.metric("per_class_fidelity").unwrap_or(f64::NAN),
            r.wall_clock_per_sample.unwrap_or(0.0) * 1e6
        );
    }
    Ok(())
}
