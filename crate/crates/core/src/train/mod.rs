//! Per-phase training: task updates on (θ, ω), the soft compression used by
//! the masking branch, and the one-step bilevel update of φ.

mod bilevel;
mod phase;
mod soft;

pub use bilevel::{hypergradient, inner_update, outer_update, Hypergradient, InnerBatch, InnerStep, OuterStep};
pub use phase::{
    artifact_fraction, augment_tick, evaluate, hard_compress, run_phase, EpochLog, MaskSource, PhaseEvent, PhaseInput,
    PhaseOutput,
};
pub use soft::{differentiable_compress, mask_regularizer, pairwise_mask_distance, soft_backward, SoftCompressed};

use serde::{Deserialize, Serialize};

use crate::cam::Upsampling;
use crate::error::{Error, Result};
use crate::model::loss::softmax;
use crate::model::{sample_grad, Acts, Distill, ModelState, Want};

/// Hyper-parameters of one phase of training.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Task learning rate, cosine-annealed over the phase.
    pub lambda: f64,
    /// Inner (virtual step) learning rate.
    pub beta1: f64,
    /// Outer learning rate for φ.
    pub beta2: f64,
    /// Weight of the mask ℓ2 term.
    pub mu: f64,
    /// Weight of the cross-entropy term on the masking branch.
    pub mu_prime: f64,
    pub grad_clip_phi: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub epochs_phase1: usize,
    pub epochs_later: usize,
    pub batch_size: usize,
    /// Per-group size of the bilevel mini-batches (new-class, exemplar and
    /// validation samples each).
    pub bilevel_batch: usize,
    pub tau: f64,
    pub eta: f64,
    pub seed: u64,
    /// Weight of logit distillation against the previous model; 0 disables it.
    pub distill_weight: f64,
    pub distill_temperature: f64,
    pub mask_source: MaskSource,
    /// Whether φ receives outer updates at all.
    pub learn_phi: bool,
    pub last_block_only: bool,
    pub artifact_augment: bool,
    pub flip_augment: bool,
    pub upsampling: Upsampling,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda: 0.1,
            beta1: 0.1,
            beta2: 0.01,
            mu: 0.1,
            mu_prime: 0.2,
            grad_clip_phi: 1.0,
            momentum: 0.9,
            weight_decay: 5e-4,
            epochs_phase1: 60,
            epochs_later: 40,
            batch_size: 32,
            bilevel_batch: 8,
            tau: 0.6,
            eta: 4.0,
            seed: 1993,
            distill_weight: 1.0,
            distill_temperature: 2.0,
            mask_source: MaskSource::Cim,
            learn_phi: true,
            last_block_only: false,
            artifact_augment: true,
            flip_augment: true,
            upsampling: Upsampling::Nearest,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let rates = [
            ("lambda", self.lambda),
            ("beta1", self.beta1),
            ("beta2", self.beta2),
            ("mu", self.mu),
            ("mu_prime", self.mu_prime),
            ("momentum", self.momentum),
            ("weight_decay", self.weight_decay),
            ("distill_weight", self.distill_weight),
        ];
        for (name, v) in rates {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("{name} must be a finite value >= 0, got {v}")));
            }
        }
        if !(self.grad_clip_phi > 0.0) {
            return Err(Error::Config(format!("grad_clip_phi must be > 0, got {}", self.grad_clip_phi)));
        }
        if !(self.distill_temperature > 0.0) {
            return Err(Error::Config("distill_temperature must be > 0".into()));
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(Error::Config(format!("tau must lie in [0, 1], got {}", self.tau)));
        }
        if !(self.eta >= 1.0) || !self.eta.is_finite() {
            return Err(Error::InvalidRatio(self.eta));
        }
        if self.epochs_phase1 == 0 || self.epochs_later == 0 {
            return Err(Error::Config("epoch counts must be positive".into()));
        }
        if self.batch_size == 0 || self.bilevel_batch == 0 {
            return Err(Error::Config("batch sizes must be positive".into()));
        }
        Ok(())
    }

    pub fn epochs_for(&self, phase: usize) -> usize {
        if phase <= 1 {
            self.epochs_phase1
        } else {
            self.epochs_later
        }
    }
}

/// Cosine annealing factor in `[0, 1]` for `epoch` of `total`.
pub fn cosine_factor(epoch: usize, total: usize) -> f64 {
    if total == 0 {
        return 1.0;
    }
    0.5 * (1.0 + (std::f64::consts::PI * epoch as f64 / total as f64).cos())
}

/// One training input: a normalised CHW tensor, its class, and the previous
/// model's softened predictions when distillation is on.
#[derive(Clone, Debug)]
pub struct Sample {
    pub x: Vec<f64>,
    pub label: usize,
    pub soft_targets: Option<Vec<f64>>,
}

impl Sample {
    pub fn new(x: Vec<f64>, label: usize) -> Self {
        Sample {
            x,
            label,
            soft_targets: None,
        }
    }

    pub(crate) fn distill(&self, cfg: &TrainConfig) -> Option<Distill<'_>> {
        self.soft_targets.as_deref().map(|t| Distill {
            targets: t,
            weight: cfg.distill_weight,
            temperature: cfg.distill_temperature,
        })
    }
}

/// `softmax(z / T)` of the previous model on `x`.
pub fn soft_targets(prev: &ModelState, x: &[f64], temperature: f64) -> Result<Vec<f64>> {
    let (_, logits) = prev.forward(x, crate::Branch::Relu)?;
    let scaled: Vec<f64> = logits.iter().map(|v| v / temperature).collect();
    Ok(softmax(&scaled))
}

/// SGD with momentum and L2 weight decay.
#[derive(Clone, Debug, Default)]
pub struct Sgd {
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: Vec<f64>,
}

impl Sgd {
    pub fn new(momentum: f64, weight_decay: f64) -> Self {
        Sgd {
            momentum,
            weight_decay,
            velocity: Vec::new(),
        }
    }

    /// `v ← m·v + (g + wd·p)`, `p ← p − lr·v`.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) {
        assert_eq!(params.len(), grads.len());
        self.velocity.resize(params.len(), 0.0);
        for ((p, &g), v) in params.iter_mut().zip(grads).zip(self.velocity.iter_mut()) {
            *v = self.momentum * *v + g + self.weight_decay * *p;
            *p -= lr * *v;
        }
    }
}

/// Optimiser state for the task-level parameters.
#[derive(Clone, Debug)]
pub struct TaskOptimizer {
    pub theta: Sgd,
    pub omega: Sgd,
}

impl TaskOptimizer {
    pub fn new(cfg: &TrainConfig) -> Self {
        TaskOptimizer {
            theta: Sgd::new(cfg.momentum, cfg.weight_decay),
            omega: Sgd::new(cfg.momentum, cfg.weight_decay),
        }
    }
}

/// Mean loss and (θ, ω) gradients of the ReLU branch over `batch`.
pub fn batch_gradient(state: &ModelState, batch: &[Sample], cfg: &TrainConfig) -> (f64, Vec<f64>, Vec<f64>) {
    let mut loss = 0.0;
    let mut g_theta = vec![0.0; state.theta.len()];
    let mut g_omega = vec![0.0; state.omega.len()];
    let inv = 1.0 / batch.len() as f64;
    for s in batch {
        let g = sample_grad(
            &state.arch,
            &state.theta,
            &state.omega,
            Acts::Relu,
            &s.x,
            s.label,
            s.distill(cfg),
            Want {
                theta: true,
                omega: true,
                input: false,
            },
        );
        loss += g.loss * inv;
        for (a, b) in g_theta.iter_mut().zip(g.theta.expect("requested")) {
            *a += b * inv;
        }
        for (a, b) in g_omega.iter_mut().zip(g.omega.expect("requested")) {
            *a += b * inv;
        }
    }
    (loss, g_theta, g_omega)
}

/// One SGD step on (θ, ω) with learning rate `lr`. Returns the batch loss
/// before the step. φ is left as it was.
pub fn cil_step(
    state: &mut ModelState,
    batch: &[Sample],
    opt: &mut TaskOptimizer,
    lr: f64,
    cfg: &TrainConfig,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::ShapeMismatch("empty training batch".into()));
    }
    let (loss, g_theta, g_omega) = batch_gradient(state, batch, cfg);
    if !loss.is_finite() || g_theta.iter().chain(&g_omega).any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteLoss {
            phase: 0,
            epoch: 0,
            detail: format!("task loss {loss}"),
        });
    }
    opt.theta.step(&mut state.theta, &g_theta, lr);
    opt.omega.step(&mut state.omega, &g_omega, lr);
    Ok(loss)
}
