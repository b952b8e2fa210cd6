//! Multi-phase experiment driver and its on-disk results.
//!
//! A run directory holds:
//!
//! ```text
//! config.toml          snapshot of the effective configuration
//! version.txt          crate version and config digest
//! results.csv          phase, seen_classes, accuracy, exemplars_stored, mean_cost
//! summary.json         averages, per-phase records, class order
//! log.jsonl            one record per epoch
//! ledger/phase-NN.txt  memory ledger after each phase
//! checkpoints/phase-NN.ckpt
//! archive/             final exemplar store (manifest + records)
//! timing.json          wall-clock per phase (kept apart so results stay byte-stable)
//! failure.txt          only when a phase failed
//! ```

use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::dataset::{ingest_dataset, synthetic_dataset, Dataset};
use super::schedule::{build_schedule, PhaseSchedule};
use crate::archive::{write_archive, ArchiveEntry};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::io::{sha256_hex, write_atomic};
use crate::memory::ExemplarStore;
use crate::model::checkpoint::Checkpoint;
use crate::model::ModelState;
use crate::train::{run_phase, PhaseInput};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseRecord {
    pub phase: usize,
    pub seen_classes: usize,
    pub accuracy: f64,
    pub exemplars_stored: usize,
    pub mean_cost: f64,
    /// Exemplars kept per class seen so far.
    pub exemplars_per_class: Vec<usize>,
    pub collapse_warning: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub name: String,
    pub seed: u64,
    pub class_order: Vec<usize>,
    pub phases: Vec<PhaseRecord>,
    pub average_accuracy: f64,
    pub last_accuracy: f64,
    /// Checksum of the archive manifest, which lists every record checksum.
    pub archive_checksum: String,
    #[serde(skip)]
    pub wall_clock_s: Vec<f64>,
}

pub fn load_dataset(cfg: &ExperimentConfig) -> Result<Dataset> {
    if cfg.is_synthetic() {
        synthetic_dataset(&cfg.synthetic_spec())
    } else {
        ingest_dataset(Path::new(&cfg.dataset), cfg.image_size, cfg.image_size)
    }
}

pub fn schedule_for(cfg: &ExperimentConfig, classes_total: usize) -> Result<PhaseSchedule> {
    build_schedule(cfg.protocol, classes_total, cfg.phases, cfg.class_order_seed, cfg.phase_count)
}

fn relabel(images: &[Image], index_of: &[Option<usize>], keep: impl Fn(usize) -> bool) -> Vec<Image> {
    images
        .iter()
        .filter_map(|im| {
            let idx = index_of[im.label]?;
            keep(idx).then(|| Image {
                label: idx,
                ..im.clone()
            })
        })
        .collect()
}

/// CSV table of the per-phase records.
pub fn results_csv(phases: &[PhaseRecord]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| Error::Config(format!("csv: {e}"));
    w.write_record(["phase", "seen_classes", "accuracy", "exemplars_stored", "mean_cost"])
        .map_err(err)?;
    for p in phases {
        w.write_record([
            p.phase.to_string(),
            p.seen_classes.to_string(),
            format!("{:.6}", p.accuracy),
            p.exemplars_stored.to_string(),
            format!("{:.6}", p.mean_cost),
        ])
        .map_err(err)?;
    }
    w.into_inner().map_err(|e| Error::Config(format!("csv: {e}")))
}

fn json_bytes<T: Serialize>(v: &T) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(v).expect("serialisable");
    s.push('\n');
    s.into_bytes()
}

fn summarise(cfg: &ExperimentConfig, class_order: Vec<usize>, phases: Vec<PhaseRecord>, archive_checksum: String, wall: Vec<f64>) -> RunResult {
    let n = phases.len().max(1) as f64;
    RunResult {
        name: cfg.name.clone(),
        seed: cfg.seed,
        class_order,
        average_accuracy: phases.iter().map(|p| p.accuracy).sum::<f64>() / n,
        last_accuracy: phases.last().map_or(0.0, |p| p.accuracy),
        phases,
        archive_checksum,
        wall_clock_s: wall,
    }
}

fn write_outputs(dir: &Path, result: &RunResult, log: &str) -> Result<()> {
    write_atomic(&dir.join("results.csv"), &results_csv(&result.phases)?)?;
    write_atomic(&dir.join("summary.json"), &json_bytes(result))?;
    write_atomic(&dir.join("log.jsonl"), log.as_bytes())?;
    let timing: Vec<_> = result
        .wall_clock_s
        .iter()
        .enumerate()
        .map(|(i, s)| serde_json::json!({ "phase": i + 1, "seconds": s }))
        .collect();
    write_atomic(&dir.join("timing.json"), &json_bytes(&timing))
}

/// Runs every phase of `cfg` on `dataset`, writing artifacts under `out`.
pub fn run_experiment_on(cfg: &ExperimentConfig, dataset: &Dataset, out: &Path) -> Result<RunResult> {
    cfg.validate()?;
    if dataset.height != cfg.image_size || dataset.width != cfg.image_size {
        return Err(Error::Config(format!(
            "dataset is {}x{} but image_size is {}",
            dataset.height, dataset.width, cfg.image_size
        )));
    }
    let schedule = schedule_for(cfg, dataset.class_count())?;
    let class_order = schedule.class_order();
    let mut index_of = vec![None; dataset.class_count()];
    for (i, &c) in class_order.iter().enumerate() {
        index_of[c] = Some(i);
    }
    let config_text = cfg.to_toml();
    write_atomic(&out.join("config.toml"), config_text.as_bytes())?;
    let version = format!(
        "cimcil {}\nconfig-sha256 {}\n",
        env!("CARGO_PKG_VERSION"),
        sha256_hex(config_text.as_bytes())
    );
    write_atomic(&out.join("version.txt"), version.as_bytes())?;

    let train_cfg = cfg.train_config();
    let mut arch = cfg.architecture()?;
    arch.in_channels = dataset.train.first().map_or(3, |im| im.channels);
    let mut state = ModelState::new(arch, cfg.seed)?;
    let mut store = ExemplarStore::new();
    let mut records: Vec<PhaseRecord> = Vec::new();
    let mut wall = Vec::new();
    let mut log = String::new();
    let mut seen = 0usize;

    for (i, classes) in schedule.phases.iter().enumerate() {
        let phase = i + 1;
        let start = Instant::now();
        let before = seen;
        seen += classes.len();
        let train = relabel(&dataset.train, &index_of, |idx| idx >= before && idx < seen);
        let test = relabel(&dataset.test, &index_of, |idx| idx < seen);
        let input = PhaseInput {
            phase,
            new_classes: classes.len(),
            train: &train,
            test: &test,
            store: &store,
            regime: cfg.regime,
            budget: cfg.budget,
        };
        let out_phase = match run_phase(&state, &input, &train_cfg) {
            Ok(o) => o,
            Err(e) => {
                let partial = summarise(cfg, class_order.clone(), records, String::new(), wall);
                write_outputs(out, &partial, &log)?;
                let msg = format!("phase {phase} failed: {}: {e}\n", e.category());
                write_atomic(&out.join("failure.txt"), msg.as_bytes())?;
                return Err(e);
            }
        };
        for l in &out_phase.logs {
            log.push_str(&serde_json::to_string(l).expect("serialisable"));
            log.push('\n');
        }
        state = out_phase.state;
        store = out_phase.store;
        let ckpt = Checkpoint {
            phase,
            state: state.clone(),
            class_order: class_order[..seen].to_vec(),
            rng_seed: cfg.seed,
            rng_word_pos: 0,
        };
        ckpt.save(&out.join("checkpoints").join(format!("phase-{phase:02}.ckpt")))?;
        write_atomic(
            &out.join("ledger").join(format!("phase-{phase:02}.txt")),
            out_phase.ledger.manifest().as_bytes(),
        )?;
        records.push(PhaseRecord {
            phase,
            seen_classes: seen,
            accuracy: out_phase.accuracy,
            exemplars_stored: store.len(),
            mean_cost: store.mean_cost(),
            exemplars_per_class: (0..seen).map(|c| store.class_len(c)).collect(),
            collapse_warning: out_phase.collapse_warning,
        });
        wall.push(start.elapsed().as_secs_f64());
    }

    let entries: Vec<ArchiveEntry> = store
        .iter()
        .map(|e| ArchiveEntry {
            id: e.id,
            phase: e.phase,
            class: e.class,
            exemplar: e.exemplar.clone(),
        })
        .collect();
    let manifest = write_archive(&out.join("archive"), &entries)?;
    let result = summarise(cfg, class_order, records, sha256_hex(manifest.as_bytes()), wall);
    write_outputs(out, &result, &log)?;
    Ok(result)
}

pub fn run_experiment(cfg: &ExperimentConfig, out: &Path) -> Result<RunResult> {
    let dataset = load_dataset(cfg)?;
    run_experiment_on(cfg, &dataset, out)
}

/// Runs `cfg` once per seed under `out/seed-<s>/` and writes `out/aggregate.json`.
pub fn run_seeds(cfg: &ExperimentConfig, seeds: &[u64], out: &Path) -> Result<Vec<RunResult>> {
    let dataset = load_dataset(cfg)?;
    let mut results = Vec::new();
    for &seed in seeds {
        let c = ExperimentConfig { seed, ..cfg.clone() };
        results.push(run_experiment_on(&c, &dataset, &out.join(format!("seed-{seed}")))?);
    }
    let n = results.len().max(1) as f64;
    let aggregate = serde_json::json!({
        "name": cfg.name,
        "seeds": seeds,
        "average_accuracy": results.iter().map(|r| r.average_accuracy).sum::<f64>() / n,
        "last_accuracy": results.iter().map(|r| r.last_accuracy).sum::<f64>() / n,
        "per_seed_average_accuracy": results.iter().map(|r| r.average_accuracy).collect::<Vec<_>>(),
    });
    write_atomic(&out.join("aggregate.json"), &json_bytes(&aggregate))?;
    Ok(results)
}

/// Top-1 accuracy of a checkpoint on the test split of the classes it knows.
pub fn eval_checkpoint(ckpt: &Checkpoint, dataset: &Dataset) -> Result<f64> {
    let mut index_of = vec![None; dataset.class_count()];
    for (i, &c) in ckpt.class_order.iter().enumerate() {
        if c >= dataset.class_count() {
            return Err(Error::Checkpoint(format!(
                "checkpoint knows class {c} but the dataset has {}",
                dataset.class_count()
            )));
        }
        index_of[c] = Some(i);
    }
    let test = relabel(&dataset.test, &index_of, |_| true);
    crate::train::evaluate(&ckpt.state, &test)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::archive::read_archive;

    fn tiny() -> ExperimentConfig {
        ExperimentConfig {
            image_size: 16,
            synthetic_classes: 4,
            synthetic_train_per_class: 6,
            synthetic_test_per_class: 3,
            phases: 2,
            budget: 8.0,
            channels: vec![4, 4, 8, 8],
            epochs_phase1: 2,
            epochs_later: 2,
            batch_size: 8,
            bilevel_batch: 2,
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn writes_a_complete_run_directory() {
        let dir = tempfile::tempdir().unwrap();
        let r = run_experiment(&tiny(), dir.path()).unwrap();
        assert_eq!(r.phases.len(), 2);
        assert_eq!(r.phases[1].seen_classes, 4);
        let mean = (r.phases[0].accuracy + r.phases[1].accuracy) / 2.0;
        assert!((r.average_accuracy - mean).abs() < 1e-12);
        for f in ["config.toml", "version.txt", "results.csv", "summary.json", "log.jsonl", "timing.json"] {
            assert!(dir.path().join(f).is_file(), "{f}");
        }
        let ck = Checkpoint::load(&dir.path().join("checkpoints/phase-02.ckpt")).unwrap();
        assert_eq!(ck.class_order, r.class_order);
        let archived = read_archive(&dir.path().join("archive")).unwrap();
        assert_eq!(archived.len(), r.phases[1].exemplars_stored);
        let acc = eval_checkpoint(&ck, &load_dataset(&tiny()).unwrap()).unwrap();
        assert_eq!(acc, r.last_accuracy);
        let csv = std::fs::read_to_string(dir.path().join("results.csv")).unwrap();
        assert!(csv.starts_with("phase,seen_classes,accuracy,exemplars_stored,mean_cost\n"));
    }

    #[test]
    fn failed_phase_leaves_partial_results() {
        let dir = tempfile::tempdir().unwrap();
        // a budget this small cannot admit even one uncompressed exemplar
        let cfg = ExperimentConfig {
            budget: 0.5,
            ..tiny().variant("baseline").unwrap()
        };
        let err = run_experiment(&cfg, dir.path()).unwrap_err();
        assert_eq!(err.category(), "memory");
        assert!(dir.path().join("failure.txt").is_file());
        assert!(dir.path().join("results.csv").is_file());
    }
}
