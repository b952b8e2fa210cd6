//! One-step bilevel update of the masking branch.
//!
//! The inner step is a virtual SGD step on θ using softly compressed new-class
//! samples plus exemplars. The outer objective is the cross-entropy of the
//! stepped model on uncompressed new-class data, plus a mask ℓ2 term and a
//! cross-entropy term on the masking branch itself. Its φ-gradient through the
//! inner step needs `∂/∂x̃ [vᵀ ∇_θ ℓ]`, computed as one forward-mode
//! directional derivative (dual numbers) of the input gradient.

use super::soft::{mask_regularizer, soft_backward, SoftCompressed};
use super::{Sample, TrainConfig};
use crate::error::{Error, Result};
use crate::model::{sample_grad, Acts, Distill, ModelState, Want};
use crate::scalar::{lift, seed_duals, Dual};
use crate::Branch;

/// Samples seen by the virtual inner step.
pub struct InnerBatch {
    pub compressed: Vec<SoftCompressed>,
    /// Previous-model targets of each compressed sample, computed on its
    /// uncompressed original.
    pub compressed_targets: Vec<Option<Vec<f64>>>,
    pub exemplars: Vec<Sample>,
}

impl InnerBatch {
    pub fn len(&self) -> usize {
        self.compressed.len() + self.exemplars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn samples(&self) -> impl Iterator<Item = (&[f64], usize, Option<&[f64]>)> {
        let soft = self
            .compressed
            .iter()
            .zip(&self.compressed_targets)
            .map(|(sc, t)| (sc.x_tilde.as_slice(), sc.label, t.as_deref()));
        let ex = self
            .exemplars
            .iter()
            .map(|s| (s.x.as_slice(), s.label, s.soft_targets.as_deref()));
        soft.chain(ex)
    }
}

pub struct InnerStep {
    pub theta_plus: Vec<f64>,
    /// `∇_θ L_CIL` at the current θ.
    pub grad: Vec<f64>,
    pub loss: f64,
}

fn distill<'a>(targets: Option<&'a [f64]>, cfg: &TrainConfig) -> Option<Distill<'a>> {
    targets.map(|t| Distill {
        targets: t,
        weight: cfg.distill_weight,
        temperature: cfg.distill_temperature,
    })
}

fn non_finite(what: &str, value: f64) -> Error {
    Error::NonFiniteLoss {
        phase: 0,
        epoch: 0,
        detail: format!("{what} = {value}"),
    }
}

/// `θ⁺ = θ − β1 ∇_θ L_CIL` over the inner batch; ω is held fixed.
pub fn inner_update(state: &ModelState, batch: &InnerBatch, beta1: f64, cfg: &TrainConfig) -> Result<InnerStep> {
    if batch.is_empty() {
        return Err(Error::ShapeMismatch("empty inner batch".into()));
    }
    let inv = 1.0 / batch.len() as f64;
    let mut grad = vec![0.0; state.theta.len()];
    let mut loss = 0.0;
    for (x, label, targets) in batch.samples() {
        let g = sample_grad(
            &state.arch,
            &state.theta,
            &state.omega,
            Acts::Relu,
            x,
            label,
            distill(targets, cfg),
            Want {
                theta: true,
                ..Want::default()
            },
        );
        loss += g.loss * inv;
        for (a, b) in grad.iter_mut().zip(g.theta.expect("requested")) {
            *a += b * inv;
        }
    }
    if !loss.is_finite() {
        return Err(non_finite("inner loss", loss));
    }
    let theta_plus = state.theta.iter().zip(&grad).map(|(t, g)| t - beta1 * g).collect();
    Ok(InnerStep { theta_plus, grad, loss })
}

/// The outer objective's value and φ-gradient, split by term.
pub struct Hypergradient {
    pub inner: InnerStep,
    pub val_loss: f64,
    pub mask_reg: f64,
    pub cim_loss: f64,
    /// Gradient of the validation loss through the inner step.
    pub val_term: Vec<f64>,
    /// `μ ∇R`.
    pub reg_term: Vec<f64>,
    /// `μ′ ∇ L_CE` of the masking branch.
    pub cim_term: Vec<f64>,
    /// Sum of the three, zeroed on frozen sites.
    pub total: Vec<f64>,
}

impl Hypergradient {
    pub fn objective(&self, cfg: &TrainConfig) -> f64 {
        self.val_loss + cfg.mu * self.mask_reg + cfg.mu_prime * self.cim_loss
    }
}

/// Mean cross-entropy of the ReLU branch with backbone `theta` over `val`,
/// and its θ-gradient.
fn val_gradient(state: &ModelState, theta: &[f64], val: &[Sample]) -> (f64, Vec<f64>) {
    let inv = 1.0 / val.len() as f64;
    let mut grad = vec![0.0; theta.len()];
    let mut loss = 0.0;
    for s in val {
        let g = sample_grad(
            &state.arch,
            theta,
            &state.omega,
            Acts::Relu,
            &s.x,
            s.label,
            None,
            Want {
                theta: true,
                ..Want::default()
            },
        );
        loss += g.loss * inv;
        for (a, b) in grad.iter_mut().zip(g.theta.expect("requested")) {
            *a += b * inv;
        }
    }
    (loss, grad)
}

/// Full outer gradient at the current φ.
///
/// `val` are uncompressed new-class samples; `cim_batch` is the set the
/// masking branch is asked to classify (exemplars and new-class originals).
/// `inner` must be the result of [`inner_update`] on the same batch and `beta1`.
pub fn hypergradient(
    state: &ModelState,
    batch: &InnerBatch,
    inner: InnerStep,
    val: &[Sample],
    cim_batch: &[Sample],
    beta1: f64,
    cfg: &TrainConfig,
) -> Result<Hypergradient> {
    if val.is_empty() {
        return Err(Error::ShapeMismatch("empty validation batch".into()));
    }
    let (val_loss, v) = val_gradient(state, &inner.theta_plus, val);
    if !val_loss.is_finite() {
        return Err(non_finite("validation loss", val_loss));
    }
    let n_phi = state.phi.coeffs.len();

    let theta_dual = seed_duals(&state.theta, &v);
    let omega_dual: Vec<Dual> = lift(&state.omega);
    let inv_inner = 1.0 / batch.len() as f64;
    let mut val_term = vec![0.0; n_phi];
    for (sc, targets) in batch.compressed.iter().zip(&batch.compressed_targets) {
        if sc.degenerate {
            continue;
        }
        let x: Vec<Dual> = lift(&sc.x_tilde);
        let g = sample_grad(
            &state.arch,
            &theta_dual,
            &omega_dual,
            Acts::Relu,
            &x,
            sc.label,
            distill(targets.as_deref(), cfg),
            Want {
                input: true,
                ..Want::default()
            },
        );
        let u: Vec<f64> = g
            .input
            .expect("requested")
            .iter()
            .map(|d| d.du * inv_inner)
            .collect();
        for (a, b) in val_term.iter_mut().zip(soft_backward(state, sc, Some(&u), None)) {
            *a -= beta1 * b;
        }
    }

    let (mask_reg, d_masks) = mask_regularizer(&batch.compressed);
    let mut reg_term = vec![0.0; n_phi];
    if cfg.mu > 0.0 {
        for (sc, dm) in batch.compressed.iter().zip(&d_masks) {
            for (a, b) in reg_term.iter_mut().zip(soft_backward(state, sc, None, Some(dm))) {
                *a += cfg.mu * b;
            }
        }
    }

    let mut cim_loss = 0.0;
    let mut cim_term = vec![0.0; n_phi];
    if !cim_batch.is_empty() {
        let inv = 1.0 / cim_batch.len() as f64;
        for s in cim_batch {
            let g = sample_grad(
                &state.arch,
                &state.theta,
                &state.omega,
                state.acts(Branch::Cim),
                &s.x,
                s.label,
                None,
                Want::default(),
            );
            cim_loss += g.loss * inv;
            for (a, b) in cim_term.iter_mut().zip(g.phi.expect("masking branch")) {
                *a += cfg.mu_prime * b * inv;
            }
        }
    }
    if !cim_loss.is_finite() {
        return Err(non_finite("masking-branch loss", cim_loss));
    }

    let per = state.phi.per_site();
    let mut total = vec![0.0; n_phi];
    for (i, t) in total.iter_mut().enumerate() {
        if state.phi_trainable[i / per] {
            *t = val_term[i] + reg_term[i] + cim_term[i];
        }
    }
    if let Some(bad) = total.iter().find(|v| !v.is_finite()) {
        return Err(non_finite("φ-gradient entry", *bad));
    }
    Ok(Hypergradient {
        inner,
        val_loss,
        mask_reg,
        cim_loss,
        val_term,
        reg_term,
        cim_term,
        total,
    })
}

pub struct OuterStep {
    /// Norm of the gradient before clipping.
    pub grad_norm: f64,
    /// Norm of the gradient actually applied.
    pub applied_norm: f64,
}

/// `φ ← φ − β2·clip(g)`. θ and ω are not touched.
pub fn outer_update(state: &mut ModelState, hg: &Hypergradient, beta2: f64, clip: f64) -> OuterStep {
    let grad_norm = hg.total.iter().map(|g| g * g).sum::<f64>().sqrt();
    let scale = if grad_norm > clip { clip / grad_norm } else { 1.0 };
    for (p, g) in state.phi.coeffs.iter_mut().zip(&hg.total) {
        *p -= beta2 * scale * g;
    }
    OuterStep {
        grad_norm,
        applied_norm: grad_norm * scale,
    }
}

#[cfg(test)]
mod tests {
    use super::super::soft::differentiable_compress;
    use super::*;
    use crate::cam::Upsampling;
    use crate::model::Architecture;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    struct Fixture {
        state: ModelState,
        new: Vec<Sample>,
        exemplars: Vec<Sample>,
        val: Vec<Sample>,
    }

    fn fixture() -> Fixture {
        let arch = Architecture::toy(2, 8, 8);
        let mut state = ModelState::new(arch.clone(), 21).unwrap().expand_classifier(3, 21);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        // move the classifier off its near-zero init so the CAMs have spread
        for v in state.omega.iter_mut() {
            *v += rng.random_range(-0.5..0.5);
        }
        let mut draw = |label: usize| {
            let x = (0..arch.input_len()).map(|_| rng.random_range(-1.5..1.5)).collect();
            Sample::new(x, label)
        };
        let new = vec![draw(2), draw(2), draw(1)];
        let mut exemplars = vec![draw(0), draw(0)];
        exemplars[1].soft_targets = Some(vec![0.7, 0.3]);
        let val = vec![draw(2), draw(1)];
        Fixture {
            state,
            new,
            exemplars,
            val,
        }
    }

    fn cfg() -> TrainConfig {
        TrainConfig {
            mu: 0.3,
            mu_prime: 0.2,
            ..TrainConfig::default()
        }
    }

    fn inner_batch(f: &Fixture, state: &ModelState) -> InnerBatch {
        InnerBatch {
            compressed: f
                .new
                .iter()
                .map(|s| differentiable_compress(state, &s.x, s.label, 4.0, Upsampling::Nearest).unwrap())
                .collect(),
            compressed_targets: vec![None, Some(vec![0.4, 0.6]), None],
            exemplars: f.exemplars.clone(),
        }
    }

    fn cim_batch(f: &Fixture) -> Vec<Sample> {
        f.exemplars.iter().chain(&f.new).cloned().collect()
    }

    fn full(f: &Fixture, state: &ModelState, c: &TrainConfig) -> Hypergradient {
        let batch = inner_batch(f, state);
        let inner = inner_update(state, &batch, 0.1, c).unwrap();
        hypergradient(state, &batch, inner, &f.val, &cim_batch(f), 0.1, c).unwrap()
    }

    #[test]
    fn zero_inner_rate_keeps_theta() {
        let f = fixture();
        let step = inner_update(&f.state, &inner_batch(&f, &f.state), 0.0, &cfg()).unwrap();
        assert_eq!(step.theta_plus, f.state.theta);
    }

    #[test]
    fn inner_matches_two_pass_oracle() {
        let f = fixture();
        let c = cfg();
        let batch = inner_batch(&f, &f.state);
        let step = inner_update(&f.state, &batch, 0.1, &c).unwrap();
        let mut samples: Vec<Sample> = batch
            .compressed
            .iter()
            .zip(&batch.compressed_targets)
            .map(|(sc, t)| Sample {
                x: sc.x_tilde.clone(),
                label: sc.label,
                soft_targets: t.clone(),
            })
            .collect();
        samples.extend(batch.exemplars.iter().cloned());
        let (_, g, _) = super::super::batch_gradient(&f.state, &samples, &c);
        for ((tp, t), g) in step.theta_plus.iter().zip(&f.state.theta).zip(&g) {
            assert!((tp - (t - 0.1 * g)).abs() <= 1e-7);
        }
    }

    #[test]
    fn inner_step_depends_on_phi() {
        let f = fixture();
        let c = cfg();
        let a = inner_update(&f.state, &inner_batch(&f, &f.state), 0.1, &c).unwrap();
        let mut moved = f.state.clone();
        let last = (moved.phi.sites() - 1) * moved.phi.per_site();
        moved.phi.coeffs[last + 1] += 0.05;
        let b = inner_update(&moved, &inner_batch(&f, &moved), 0.1, &c).unwrap();
        assert!(a.theta_plus.iter().zip(&b.theta_plus).any(|(x, y)| (x - y).abs() > 1e-9));
    }

    fn objective(f: &Fixture, state: &ModelState, c: &TrainConfig) -> f64 {
        full(f, state, c).objective(c)
    }

    #[test]
    fn hypergradient_matches_finite_differences() {
        let f = fixture();
        let c = cfg();
        let hg = full(&f, &f.state, &c);
        assert!(hg.val_term.iter().any(|v| v.abs() > 1e-8));
        let per = f.state.phi.per_site();
        let n = f.state.phi.coeffs.len();
        for idx in [0, 1, per + 2, n - per, n - per + 1, n - 1] {
            let h = 1e-6;
            let mut p = f.state.clone();
            p.phi.coeffs[idx] += h;
            let mut m = f.state.clone();
            m.phi.coeffs[idx] -= h;
            let fd = (objective(&f, &p, &c) - objective(&f, &m, &c)) / (2.0 * h);
            let an = hg.total[idx];
            let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-7);
            assert!(rel <= 1e-3, "coeff {idx}: fd {fd} analytic {an}");
        }
    }

    #[test]
    fn outer_respects_clip_and_scope() {
        let f = fixture();
        let c = cfg();
        let hg = full(&f, &f.state, &c);
        let mut s = f.state.clone();
        let step = outer_update(&mut s, &hg, 0.0, 1.0);
        assert_eq!(s.phi, f.state.phi);
        let step2 = outer_update(&mut s, &hg, 0.5, 1e-3);
        assert!(step2.applied_norm <= 1e-3 + 1e-12);
        assert_eq!(step.grad_norm, step2.grad_norm);
        assert_eq!(s.theta, f.state.theta);
        assert_eq!(s.omega, f.state.omega);
        assert_ne!(s.phi, f.state.phi);
    }

    #[test]
    fn frozen_sites_get_no_gradient() {
        let f = fixture();
        let state = f.state.last_block_only_mode(true);
        let hg = full(&f, &state, &cfg());
        let per = state.phi.per_site();
        assert!(hg.total[..per].iter().all(|&v| v == 0.0));
        assert!(hg.total[per..].iter().any(|&v| v != 0.0));
    }
}
