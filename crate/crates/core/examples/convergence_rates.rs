//! Runs the perfect and imperfect modeling scenarios with 12 sample sizes
//! from 10 to 10⁴, 10 replicates each, and prints err(n) with the fitted
//! log-log slopes.
//!
//! ```text
//! cargo run --release -p piml-core --example convergence_rates [seed]
//! ```

use piml_core::experiment::{run_experiment, ExperimentConfig, NoiseModel, Scenario};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let seed = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(0);
    let cfg = ExperimentConfig { seed, ..Default::default() };
    for scenario in [
        Scenario::<f64>::perfect(NoiseModel::gaussian(1.0)?),
        Scenario::<f64>::imperfect(NoiseModel::gaussian(1.0)?),
    ] {
        let res = run_experiment(&scenario, &cfg)?;
        println!("{} (seed {seed}, {:.1} s)", res.scenario, res.wall_time_secs);
        for ((n, m), s) in res.n_grid.iter().zip(&res.err_mean).zip(&res.err_std) {
            println!("  n={n:>6}  err={m:.4e} ± {s:.1e}");
        }
        if let Some(r) = res.rate {
            println!("  slope {:.3}  intercept {:.3}  r² {:.4}", r.slope, r.intercept, r.r2);
        }
    }
    Ok(())
}
