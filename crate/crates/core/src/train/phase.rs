//! One incremental phase: task training with replay, the per-epoch bilevel
//! update of φ, then compression and selection of the new exemplars.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::bilevel::{hypergradient, inner_update, outer_update, InnerBatch};
use super::soft::{differentiable_compress, pairwise_mask_distance};
use super::{cil_step, cosine_factor, soft_targets, Sample, TaskOptimizer, TrainConfig};
use crate::archive::{serialize_exemplar, ArchiveEntry};
use crate::cam::{bbox_or_full, compute_cam, BBox};
use crate::compression::{compress_region, reconstruct, CompressedExemplar};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::io::sha256_hex;
use crate::memory::{herding_order, l2_normalize, pack_exemplars, rebalance_fixed, ExemplarStore, MemoryLedger, Regime, StoredExemplar};
use crate::model::ModelState;
use crate::Branch;

/// Where the full-resolution region of a stored exemplar comes from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskSource {
    /// No compression: exemplars are stored whole at cost 1.
    None,
    /// Whole image downsampled, nothing kept at full resolution.
    FullComp,
    /// The central box of half the height and width.
    CenterActi,
    /// CAM of the plain ReLU branch.
    ClassActi,
    /// CAM of the masking branch with learned φ.
    Cim,
}

impl MaskSource {
    pub fn compresses(self) -> bool {
        self != MaskSource::None
    }
}

/// Compresses one image according to `source`.
pub fn hard_compress(state: &ModelState, image: &Image, cfg: &TrainConfig) -> Result<CompressedExemplar> {
    let (h, w) = (image.height, image.width);
    match cfg.mask_source {
        MaskSource::None => compress_region(image, Some(&BBox::full(h, w)), cfg.eta),
        MaskSource::FullComp => compress_region(image, None, cfg.eta),
        MaskSource::CenterActi => compress_region(image, Some(&BBox::center_quarter(h, w)), cfg.eta),
        MaskSource::ClassActi | MaskSource::Cim => {
            let branch = if cfg.mask_source == MaskSource::Cim {
                Branch::Cim
            } else {
                Branch::Relu
            };
            let cam = compute_cam(image, image.label, state, branch, cfg.upsampling)?;
            compress_region(image, Some(&bbox_or_full(&cam, cfg.tau)), cfg.eta)
        }
    }
}

/// Epochs per augmentation tick: the phase is split into five ticks.
pub fn augment_tick(total_epochs: usize) -> usize {
    (total_epochs / 5).max(1)
}

/// Fraction of new-class images replaced by their compressed version.
pub fn artifact_fraction(epoch: usize, total_epochs: usize) -> f64 {
    let k = epoch / augment_tick(total_epochs);
    (0.1 * k as f64).min(1.0)
}

/// Instrumentation of the per-epoch step order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum PhaseEvent {
    Train { epoch: usize },
    Compress { epoch: usize },
    TempUpdate { epoch: usize },
    PhiUpdate { epoch: usize },
    HardCompress,
    Herding,
    Evaluate,
}

/// Per-epoch log record.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochLog {
    pub phase: usize,
    pub epoch: usize,
    pub lr: f64,
    pub task_loss: f64,
    pub augment_fraction: f64,
    pub val_loss: Option<f64>,
    pub mask_reg: Option<f64>,
    pub cim_loss: Option<f64>,
    pub mask_coverage: Option<f64>,
    pub mask_distance: Option<f64>,
    pub phi_grad_norm: Option<f64>,
    pub collapse_warning: bool,
}

pub struct PhaseInput<'a> {
    /// 1-based phase index.
    pub phase: usize,
    /// Classes introduced by this phase; labels in `train` and `test` are
    /// classifier indices, the new ones following the old.
    pub new_classes: usize,
    pub train: &'a [Image],
    /// Test images of every class seen so far.
    pub test: &'a [Image],
    pub store: &'a ExemplarStore,
    pub regime: Regime,
    pub budget: f64,
}

pub struct PhaseOutput {
    pub state: ModelState,
    pub store: ExemplarStore,
    pub ledger: MemoryLedger,
    pub accuracy: f64,
    pub events: Vec<PhaseEvent>,
    pub logs: Vec<EpochLog>,
    pub collapse_warning: bool,
    /// Exemplars selected for the new classes.
    pub new_exemplars: Vec<ArchiveEntry>,
}

const COLLAPSE_DISTANCE: f64 = 1e-3;
const COLLAPSE_EPOCHS: usize = 3;

#[derive(Clone, Copy)]
enum Stream {
    Shuffle = 1,
    Flip = 2,
    Augment = 3,
    Bilevel = 4,
}

fn stream_rng(seed: u64, phase: usize, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add((phase as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)));
    rng.set_stream(stream as u64);
    rng
}

/// A training image with its previous-model targets for both orientations.
struct Item {
    image: Image,
    compressed: Option<Image>,
    targets: Option<[Vec<f64>; 2]>,
}

impl Item {
    fn new(image: Image, prev: Option<&ModelState>, cfg: &TrainConfig) -> Result<Item> {
        let targets = match prev {
            Some(p) => Some([
                soft_targets(p, &image.to_tensor(), cfg.distill_temperature)?,
                soft_targets(p, &image.flipped().to_tensor(), cfg.distill_temperature)?,
            ]),
            None => None,
        };
        Ok(Item {
            image,
            compressed: None,
            targets,
        })
    }

    fn sample(&self, use_compressed: bool, flip: bool) -> Sample {
        let base = match (&self.compressed, use_compressed) {
            (Some(c), true) => c,
            _ => &self.image,
        };
        let x = if flip { base.flipped() } else { base.clone() }.to_tensor();
        Sample {
            x,
            label: self.image.label,
            soft_targets: self.targets.as_ref().map(|t| t[flip as usize].clone()),
        }
    }
}

fn tag_phase(e: Error, phase: usize, epoch: usize) -> Error {
    match e {
        Error::NonFiniteLoss { detail, .. } => Error::NonFiniteLoss { phase, epoch, detail },
        other => other,
    }
}

/// Top-1 accuracy of the ReLU branch on `images`.
pub fn evaluate(state: &ModelState, images: &[Image]) -> Result<f64> {
    if images.is_empty() {
        return Ok(0.0);
    }
    let mut correct = 0usize;
    for im in images {
        if state.predict(&im.to_tensor())? == im.label {
            correct += 1;
        }
    }
    Ok(correct as f64 / images.len() as f64)
}

/// Trains one phase starting from `prev`. Nothing outside the returned value
/// is modified, so a failed phase leaves the caller's state as it was.
pub fn run_phase(prev: &ModelState, input: &PhaseInput<'_>, cfg: &TrainConfig) -> Result<PhaseOutput> {
    cfg.validate()?;
    let phase = input.phase;
    if input.train.is_empty() {
        return Err(Error::ShapeMismatch(format!("phase {phase} has no training data")));
    }
    let old_classes = prev.class_count();
    let seen = old_classes + input.new_classes;
    if let Some(im) = input.train.iter().chain(input.test).find(|im| im.label >= seen) {
        return Err(Error::ShapeMismatch(format!(
            "label {} in phase {phase} but only {seen} classes seen",
            im.label
        )));
    }
    let mut state = prev
        .expand_classifier(input.new_classes, cfg.seed)
        .last_block_only_mode(cfg.last_block_only);
    let teacher = (phase >= 2 && old_classes > 0 && cfg.distill_weight > 0.0).then_some(prev);

    let mut new_items = input
        .train
        .iter()
        .map(|im| Item::new(im.clone(), teacher, cfg))
        .collect::<Result<Vec<_>>>()?;
    let exemplar_items = input
        .store
        .iter()
        .map(|e| Item::new(reconstruct(&e.exemplar)?, teacher, cfg))
        .collect::<Result<Vec<_>>>()?;

    let mut shuffle_rng = stream_rng(cfg.seed, phase, Stream::Shuffle);
    let mut flip_rng = stream_rng(cfg.seed, phase, Stream::Flip);
    let mut augment_rng = stream_rng(cfg.seed, phase, Stream::Augment);
    let mut bilevel_rng = stream_rng(cfg.seed, phase, Stream::Bilevel);

    let total = cfg.epochs_for(phase);
    let tick = augment_tick(total);
    let augment = cfg.artifact_augment && cfg.mask_source.compresses();
    let bilevel = cfg.mask_source == MaskSource::Cim && cfg.learn_phi;
    let mut opt = TaskOptimizer::new(cfg);
    let mut events = Vec::new();
    let mut logs = Vec::new();
    let mut low_distance_run = 0usize;
    let mut collapse_warning = false;

    for epoch in 0..total {
        let schedule = cosine_factor(epoch, total);
        let lr = cfg.lambda * schedule;

        let fraction = if augment { artifact_fraction(epoch, total) } else { 0.0 };
        if fraction > 0.0 && (epoch % tick == 0 || new_items[0].compressed.is_none()) {
            for item in new_items.iter_mut() {
                let ex = hard_compress(&state, &item.image, cfg)?;
                item.compressed = Some(reconstruct(&ex)?);
            }
        }
        let mut replaced = vec![false; new_items.len()];
        if fraction > 0.0 {
            let n = (fraction * new_items.len() as f64).round() as usize;
            let mut idx: Vec<usize> = (0..new_items.len()).collect();
            idx.shuffle(&mut augment_rng);
            for &i in &idx[..n.min(idx.len())] {
                replaced[i] = true;
            }
        }

        let mut order: Vec<usize> = (0..new_items.len() + exemplar_items.len()).collect();
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<Sample> = chunk
                .iter()
                .map(|&i| {
                    let flip = cfg.flip_augment && flip_rng.random_bool(0.5);
                    if i < new_items.len() {
                        new_items[i].sample(replaced[i], flip)
                    } else {
                        exemplar_items[i - new_items.len()].sample(false, flip)
                    }
                })
                .collect();
            loss_sum += cil_step(&mut state, &batch, &mut opt, lr, cfg).map_err(|e| tag_phase(e, phase, epoch))?;
            batches += 1;
        }
        events.push(PhaseEvent::Train { epoch });

        let mut log = EpochLog {
            phase,
            epoch,
            lr,
            task_loss: loss_sum / batches as f64,
            augment_fraction: fraction,
            val_loss: None,
            mask_reg: None,
            cim_loss: None,
            mask_coverage: None,
            mask_distance: None,
            phi_grad_norm: None,
            collapse_warning: false,
        };

        if bilevel {
            let b = cfg.bilevel_batch;
            let mut idx: Vec<usize> = (0..new_items.len()).collect();
            idx.shuffle(&mut bilevel_rng);
            let pick = |k: usize| idx[k % idx.len()];
            let soft_idx: Vec<usize> = (0..b).map(pick).collect();
            let val_idx: Vec<usize> = (b..2 * b).map(pick).collect();
            let ex_idx: Vec<usize> = if exemplar_items.is_empty() {
                Vec::new()
            } else {
                (0..b).map(|_| bilevel_rng.random_range(0..exemplar_items.len())).collect()
            };

            let originals: Vec<Sample> = soft_idx.iter().map(|&i| new_items[i].sample(false, false)).collect();
            let compressed = originals
                .iter()
                .map(|s| differentiable_compress(&state, &s.x, s.label, cfg.eta, cfg.upsampling))
                .collect::<Result<Vec<_>>>()?;
            events.push(PhaseEvent::Compress { epoch });

            let exemplars: Vec<Sample> = ex_idx.iter().map(|&i| exemplar_items[i].sample(false, false)).collect();
            let batch = InnerBatch {
                compressed_targets: originals.iter().map(|s| s.soft_targets.clone()).collect(),
                compressed,
                exemplars,
            };
            let beta1 = cfg.beta1 * schedule;
            let inner = inner_update(&state, &batch, beta1, cfg).map_err(|e| tag_phase(e, phase, epoch))?;
            events.push(PhaseEvent::TempUpdate { epoch });

            let val: Vec<Sample> = val_idx
                .iter()
                .map(|&i| Sample {
                    soft_targets: None,
                    ..new_items[i].sample(false, false)
                })
                .collect();
            let cim_batch: Vec<Sample> = batch.exemplars.iter().chain(&originals).cloned().collect();
            let hg = hypergradient(&state, &batch, inner, &val, &cim_batch, beta1, cfg)
                .map_err(|e| tag_phase(e, phase, epoch))?;
            let step = outer_update(&mut state, &hg, cfg.beta2 * schedule, cfg.grad_clip_phi);
            events.push(PhaseEvent::PhiUpdate { epoch });

            let coverage = batch.compressed.iter().map(|sc| sc.mask.iter().sum::<f64>() / sc.mask.len() as f64).sum::<f64>()
                / batch.compressed.len() as f64;
            let distance = pairwise_mask_distance(&batch.compressed);
            match distance {
                Some(d) if d < COLLAPSE_DISTANCE => low_distance_run += 1,
                _ => low_distance_run = 0,
            }
            if low_distance_run >= COLLAPSE_EPOCHS {
                collapse_warning = true;
                log.collapse_warning = true;
            }
            log.val_loss = Some(hg.val_loss);
            log.mask_reg = Some(hg.mask_reg);
            log.cim_loss = Some(hg.cim_loss);
            log.mask_coverage = Some(coverage);
            log.mask_distance = distance;
            log.phi_grad_norm = Some(step.grad_norm);
        }
        logs.push(log);
    }

    let mut store = input.store.clone();
    if input.regime == Regime::Fixed {
        rebalance_fixed(&mut store, input.budget, seen);
    }
    let share = MemoryLedger::new(input.regime, input.budget).class_share(seen);

    let compressed = input
        .train
        .iter()
        .map(|im| hard_compress(&state, im, cfg))
        .collect::<Result<Vec<_>>>()?;
    events.push(PhaseEvent::HardCompress);

    let mut new_exemplars = Vec::new();
    for class in old_classes..seen {
        let members: Vec<usize> = (0..input.train.len()).filter(|&i| input.train[i].label == class).collect();
        if members.is_empty() {
            continue;
        }
        let feats = members
            .iter()
            .map(|&i| {
                let mut f = state.embedding(&input.train[i].to_tensor())?;
                l2_normalize(&mut f);
                Ok(f)
            })
            .collect::<Result<Vec<_>>>()?;
        let order = herding_order(&feats);
        let costs: Vec<f64> = members.iter().map(|&i| compressed[i].cost).collect();
        let admitted = pack_exemplars(class, &order, &costs, share)?;
        let mut stored = Vec::with_capacity(admitted.len());
        for k in admitted {
            let exemplar = compressed[members[k]].clone();
            let checksum = sha256_hex(&serialize_exemplar(&exemplar)?);
            let id = store.next_id();
            new_exemplars.push(ArchiveEntry {
                id,
                phase,
                class,
                exemplar: exemplar.clone(),
            });
            stored.push(StoredExemplar {
                id,
                phase,
                class,
                exemplar,
                checksum,
            });
        }
        store.insert_class(class, stored);
    }
    events.push(PhaseEvent::Herding);

    let ledger = store.ledger(input.regime, input.budget);
    let accuracy = evaluate(&state, input.test)?;
    events.push(PhaseEvent::Evaluate);

    Ok(PhaseOutput {
        state,
        store,
        ledger,
        accuracy,
        events,
        logs,
        collapse_warning,
        new_exemplars,
    })
}
