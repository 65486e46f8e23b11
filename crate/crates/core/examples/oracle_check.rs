//! Closed-form checks of the DDIM solver against Gaussian worlds.
//!
//! ```text
//! cargo run --release --example oracle_check
//! ```

use desklcm::schedule::{NoiseSchedule, ScheduleParams};
use desklcm::solver::oracle_check;

fn main() -> desklcm::Result<()> {
    let schedule = NoiseSchedule::new(ScheduleParams::default())?;
    let checks = oracle_check(&schedule)?;
    for c in &checks {
        println!("{:4} {:40} {}", if c.passed { "ok" } else { "FAIL" }, c.name, c.detail);
    }
    if checks.iter().any(|c| !c.passed) {
        std::process::exit(1);
    }
    Ok(())
}
