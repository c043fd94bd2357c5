//! A reduced warm-start sweep with CSV output and the text table.
//!
//! cargo run --release --example sweep -- [out_dir]

use std::path::PathBuf;

use cohesion_rl::eval::EvalConfig;
use cohesion_rl::runner::ExperimentConfig;
use cohesion_rl::sweep::{read_results_csv, render_table, run_sweep, Setting, SweepSpec};

fn main() -> cohesion_rl::Result<()> {
    let out =
        std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("cohesion_rl_sweep"));
    let spec = SweepSpec {
        setting: Setting::S2,
        values: vec![5.0, 20.0],
        gammas: vec![0.0, 0.8],
        seeds: 2,
        base: ExperimentConfig { horizon: 40, ..ExperimentConfig::default() },
        eval: EvalConfig { horizon: 2000, burn_in: 500 },
        ..SweepSpec::default()
    };
    let outcome = run_sweep(&spec, Some(&out))?;
    println!("{}", render_table(&outcome.results));
    let again = render_table(&read_results_csv(&out.join("results.csv"))?);
    println!("table rebuilt from results.csv matches: {}", again == render_table(&outcome.results));
    println!("{} failed cells; files in {}", outcome.errors.len(), out.display());
    Ok(())
}
