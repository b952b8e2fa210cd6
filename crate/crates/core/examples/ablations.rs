//! Runs every mask-source variant of one config and tabulates the results.
//!
//! cargo run --release --example ablations -- [config] [out_dir]

use cimcil::harness::{load_dataset, run_experiment_on, ExperimentConfig, VARIANTS};

fn main() -> cimcil::Result<()> {
    let mut args = std::env::args().skip(1);
    let config = args
        .next()
        .unwrap_or_else(|| concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/quick.toml").into());
    let out = args.next().unwrap_or_else(|| "runs/ablations".into());
    let base = ExperimentConfig::load(config.as_ref())?;
    let dataset = load_dataset(&base)?;
    println!("{:<15} {:>8} {:>10} {:>10}", "variant", "avg acc", "exemplars", "mean cost");
    for name in VARIANTS {
        let cfg = base.variant(name)?;
        let r = run_experiment_on(&cfg, &dataset, &std::path::Path::new(&out).join(name))?;
        let last = r.phases.last().expect("at least one phase");
        println!(
            "{name:<15} {:>8.3} {:>10} {:>10.3}",
            r.average_accuracy, last.exemplars_stored, last.mean_cost
        );
    }
    Ok(())
}
