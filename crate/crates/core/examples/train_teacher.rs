//! Train a small guided teacher on rings2d and score its DDIM samples.
//!
//! ```text
//! cargo run --release --example train_teacher -- 3000
//! ```

use desklcm::harness::checkpoint::Model;
use desklcm::harness::config::Config;
use desklcm::harness::experiment::{evaluate_model, teacher_from_config};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let steps = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(2000);
    let mut cfg: Config = include_str!("../../../configs/rings2d.toml").parse()?;
    cfg.teacher.steps = steps;

    let (teacher, losses) = teacher_from_config(&cfg)?;
    for (i, chunk) in losses.chunks(steps.div_ceil(10).max(1)).enumerate() {
        let mean = chunk.iter().sum::<f64>() / chunk.len() as f64;
        println!("steps {:>6}  loss {mean:.4}", (i + 1) * chunk.len());
    }
    let model = Model::Teacher(teacher);
    for omega in [0.0, 2.0] {
        let r = evaluate_model(&model, 50, omega, 2000, cfg.dataset(), 0, true)?;
        println!(
            "50-step DDIM, omega {omega}: frechet {:.4} (floor {:.4}), fidelity {:.4}, nfe {}",
            r.metric("frechet").unwrap_or(f64::NAN),
            r.metric("noise_floor").unwrap_or(f64::NAN),
            r.metric("per_class_fidelity").unwrap_or(f64::NAN),
            r.nfe.unwrap_or(0),
        );
    }
    Ok(())
}
