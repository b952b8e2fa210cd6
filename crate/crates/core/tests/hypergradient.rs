mod common;

use cimcil::train::{outer_update, TrainConfig};
use common::{inner_batch, rel_err, term1, term1_probes, toy};

#[test]
fn validation_term_matches_finite_differences() {
    let probes: Vec<(f64, f64)> = (1..=3).flat_map(|s| term1_probes(s, 0.1)).collect();
    let ok = probes.iter().filter(|&&(fd, an)| rel_err(fd, an) <= 1e-3).count();
    assert!(ok * 100 >= probes.len() * 95, "{ok}/{} within 1e-3: {probes:?}", probes.len());
}

#[test]
fn zero_inner_rate_has_no_validation_gradient() {
    let t = toy(4);
    let (_, g) = term1(&t, &t.state, 0.0);
    assert!(g.iter().all(|&v| v == 0.0));
}

#[test]
fn outer_step_is_clipped_and_scoped() {
    let t = toy(5);
    let cfg = TrainConfig {
        mu: 50.0,
        ..TrainConfig::default()
    };
    let batch = inner_batch(&t, &t.state);
    let inner = cimcil::train::inner_update(&t.state, &batch, 0.1, &cfg).unwrap();
    let cim: Vec<_> = t.exemplars.iter().chain(&t.new).cloned().collect();
    let hg = cimcil::train::hypergradient(&t.state, &batch, inner, &t.val, &cim, 0.1, &cfg).unwrap();
    let mut s = t.state.clone();
    let step = outer_update(&mut s, &hg, 0.01, 1.0);
    assert!(step.grad_norm > 1.0, "large μ should need clipping, norm {}", step.grad_norm);
    assert!(step.applied_norm <= 1.0 + 1e-9);
    assert_eq!(s.theta, t.state.theta);
    assert_eq!(s.omega, t.state.omega);
}

#[test]
fn large_mask_weight_shrinks_coverage() {
    let t = toy(6);
    let cfg = TrainConfig {
        mu: 200.0,
        mu_prime: 0.0,
        ..TrainConfig::default()
    };
    let mut s = t.state.clone();
    let mut coverage = Vec::new();
    for _ in 0..8 {
        let batch = inner_batch(&t, &s);
        coverage.push(
            batch
                .compressed
                .iter()
                .map(|c| c.mask.iter().sum::<f64>() / c.mask.len() as f64)
                .sum::<f64>()
                / batch.compressed.len() as f64,
        );
        let inner = cimcil::train::inner_update(&s, &batch, 0.1, &cfg).unwrap();
        let hg = cimcil::train::hypergradient(&s, &batch, inner, &t.val, &[], 0.1, &cfg).unwrap();
        outer_update(&mut s, &hg, 0.01, 1.0);
    }
    assert!(coverage.windows(2).all(|w| w[1] < w[0]), "{coverage:?}");
}
