//! One bilevel update of the masking-branch parameters on a tiny network,
//! with the validation part of the hypergradient checked by finite differences.

use cimcil::cam::Upsampling;
use cimcil::model::Architecture;
use cimcil::train::{differentiable_compress, hypergradient, inner_update, outer_update, InnerBatch, Sample, TrainConfig};
use cimcil::ModelState;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Data {
    new: Vec<Sample>,
    exemplars: Vec<Sample>,
    val: Vec<Sample>,
}

fn batch(d: &Data, s: &ModelState) -> InnerBatch {
    InnerBatch {
        compressed: d
            .new
            .iter()
            .map(|x| differentiable_compress(s, &x.x, x.label, 4.0, Upsampling::Nearest).unwrap())
            .collect(),
        compressed_targets: vec![None; d.new.len()],
        exemplars: d.exemplars.clone(),
    }
}

fn val_loss_and_grad(d: &Data, s: &ModelState, cfg: &TrainConfig) -> (f64, Vec<f64>) {
    let b = batch(d, s);
    let inner = inner_update(s, &b, 0.1, cfg).unwrap();
    let hg = hypergradient(s, &b, inner, &d.val, &[], 0.1, cfg).unwrap();
    (hg.val_loss, hg.val_term)
}

fn main() -> cimcil::Result<()> {
    let arch = Architecture::toy(3, 8, 8);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut state = ModelState::new(arch.clone(), 11)?.expand_classifier(4, 11);
    for v in state.omega.iter_mut() {
        *v += rng.random_range(-0.5..0.5);
    }
    let mut draw = |label| Sample::new((0..arch.input_len()).map(|_| rng.random_range(-1.5..1.5)).collect(), label);
    let d = Data {
        new: vec![draw(3), draw(2), draw(3)],
        exemplars: vec![draw(0), draw(1)],
        val: vec![draw(2), draw(3)],
    };

    let plain = TrainConfig {
        mu: 0.0,
        mu_prime: 0.0,
        ..TrainConfig::default()
    };
    let (_, grad) = val_loss_and_grad(&d, &state, &plain);
    let h = 1e-6;
    println!("coord  analytic        finite diff");
    for i in (0..grad.len()).step_by(3) {
        let (mut p, mut m) = (state.clone(), state.clone());
        p.phi.coeffs[i] += h;
        m.phi.coeffs[i] -= h;
        let fd = (val_loss_and_grad(&d, &p, &plain).0 - val_loss_and_grad(&d, &m, &plain).0) / (2.0 * h);
        println!("{i:5}  {:+.6e}  {fd:+.6e}", grad[i]);
    }

    let cfg = TrainConfig::default();
    let b = batch(&d, &state);
    let inner = inner_update(&state, &b, 0.1, &cfg)?;
    let cim: Vec<Sample> = d.exemplars.iter().chain(&d.new).cloned().collect();
    let hg = hypergradient(&state, &b, inner, &d.val, &cim, 0.1, &cfg)?;
    println!(
        "\nobjective {:.5} (val {:.5}, mask reg {:.5}, cim loss {:.5})",
        hg.objective(&cfg),
        hg.val_loss,
        hg.mask_reg,
        hg.cim_loss
    );
    let step = outer_update(&mut state, &hg, 0.01, cfg.grad_clip_phi);
    println!("phi step: grad norm {:.4}, applied {:.4}", step.grad_norm, step.applied_norm);
    Ok(())
}
