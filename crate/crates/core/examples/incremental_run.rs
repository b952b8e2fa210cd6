//! A complete multi-phase run from a config file, printing per-phase results.
//!
//! cargo run --release --example incremental_run -- [config] [out_dir]

use cimcil::harness::{run_experiment, ExperimentConfig};

fn main() -> cimcil::Result<()> {
    let mut args = std::env::args().skip(1);
    let config = args
        .next()
        .unwrap_or_else(|| concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/quick.toml").into());
    let out = args.next().unwrap_or_else(|| "runs/incremental".into());
    let cfg = ExperimentConfig::load(config.as_ref())?;
    let r = run_experiment(&cfg, out.as_ref())?;
    println!("phase  classes  accuracy  exemplars  mean cost");
    for p in &r.phases {
        println!(
            "{:5}  {:7}  {:8.3}  {:9}  {:9.3}",
            p.phase, p.seen_classes, p.accuracy, p.exemplars_stored, p.mean_cost
        );
    }
    println!("average accuracy {:.4}, archive {}", r.average_accuracy, r.archive_checksum);
    println!("outputs in {out}/");
    Ok(())
}
