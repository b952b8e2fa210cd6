//! Softmax cross-entropy and logit distillation, with their logit gradients.

use crate::scalar::Scalar;

pub fn softmax<T: Scalar>(z: &[T]) -> Vec<T> {
    let m = z.iter().map(|v| v.re()).fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<T> = z.iter().map(|&v| (v - T::from_f64(m)).exp()).collect();
    let s: T = e.iter().copied().sum();
    e.into_iter().map(|v| v / s).collect()
}

pub fn log_softmax<T: Scalar>(z: &[T]) -> Vec<T> {
    let m = z.iter().map(|v| v.re()).fold(f64::NEG_INFINITY, f64::max);
    let shifted: Vec<T> = z.iter().map(|&v| v - T::from_f64(m)).collect();
    let lse = shifted.iter().map(|&v| v.exp()).sum::<T>().ln();
    shifted.into_iter().map(|v| v - lse).collect()
}

/// `-log softmax(z)[label]` and its gradient `softmax(z) - onehot(label)`.
pub fn cross_entropy<T: Scalar>(logits: &[T], label: usize) -> (T, Vec<T>) {
    let loss = -log_softmax(logits)[label];
    let mut grad = softmax(logits);
    grad[label] -= T::one();
    (loss, grad)
}

/// `-τ² Σ_k p_k log softmax(z/τ)_k` over the first `targets.len()` logits,
/// where `p` are the old model's softened probabilities.
pub fn distillation<T: Scalar>(logits: &[T], targets: &[f64], temperature: f64) -> (T, Vec<T>) {
    let k = targets.len();
    let scaled: Vec<T> = logits[..k].iter().map(|&v| v.scale(1.0 / temperature)).collect();
    let logp = log_softmax(&scaled);
    let t2 = temperature * temperature;
    let loss = -logp
        .iter()
        .zip(targets)
        .map(|(&l, &p)| l.scale(p))
        .sum::<T>()
        .scale(t2);
    let q = softmax(&scaled);
    let mut grad = vec![T::zero(); logits.len()];
    for i in 0..k {
        grad[i] = (q[i] - T::from_f64(targets[i])).scale(temperature);
    }
    (loss, grad)
}
