#![allow(dead_code)]

use cimcil::cam::Upsampling;
use cimcil::model::Architecture;
use cimcil::train::{differentiable_compress, hypergradient, inner_update, InnerBatch, Sample, TrainConfig};
use cimcil::ModelState;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Two-block network on 8×8 inputs with a few random samples per role.
pub struct Toy {
    pub state: ModelState,
    pub new: Vec<Sample>,
    pub exemplars: Vec<Sample>,
    pub val: Vec<Sample>,
}

pub fn toy(seed: u64) -> Toy {
    let arch = Architecture::toy(3, 8, 8);
    let mut state = ModelState::new(arch.clone(), seed).unwrap().expand_classifier(4, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xA5A5);
    for v in state.omega.iter_mut() {
        *v += rng.random_range(-0.5..0.5);
    }
    let mut draw = |label: usize| {
        let x = (0..arch.input_len()).map(|_| rng.random_range(-1.5..1.5)).collect();
        Sample::new(x, label)
    };
    let new = vec![draw(3), draw(2), draw(3)];
    let exemplars = vec![draw(0), draw(1)];
    let val = vec![draw(2), draw(3)];
    Toy {
        state,
        new,
        exemplars,
        val,
    }
}

pub fn inner_batch(t: &Toy, state: &ModelState) -> InnerBatch {
    InnerBatch {
        compressed: t
            .new
            .iter()
            .map(|s| differentiable_compress(state, &s.x, s.label, 4.0, Upsampling::Nearest).unwrap())
            .collect(),
        compressed_targets: vec![None; t.new.len()],
        exemplars: t.exemplars.clone(),
    }
}

/// Validation loss of the one-step-updated model and its φ-gradient, with
/// both regularisers switched off.
pub fn term1(t: &Toy, state: &ModelState, beta1: f64) -> (f64, Vec<f64>) {
    let cfg = TrainConfig {
        mu: 0.0,
        mu_prime: 0.0,
        ..TrainConfig::default()
    };
    let batch = inner_batch(t, state);
    let inner = inner_update(state, &batch, beta1, &cfg).unwrap();
    let hg = hypergradient(state, &batch, inner, &t.val, &[], beta1, &cfg).unwrap();
    (hg.val_loss, hg.val_term)
}

/// `(finite difference, analytic)` for every φ coordinate of `toy(seed)`.
pub fn term1_probes(seed: u64, beta1: f64) -> Vec<(f64, f64)> {
    let t = toy(seed);
    let (_, grad) = term1(&t, &t.state, beta1);
    let h = 1e-6;
    (0..grad.len())
        .map(|i| {
            let mut p = t.state.clone();
            p.phi.coeffs[i] += h;
            let mut m = t.state.clone();
            m.phi.coeffs[i] -= h;
            let fd = (term1(&t, &p, beta1).0 - term1(&t, &m, beta1).0) / (2.0 * h);
            (fd, grad[i])
        })
        .collect()
}

pub fn rel_err(fd: f64, an: f64) -> f64 {
    (fd - an).abs() / fd.abs().max(an.abs()).max(1e-12)
}
