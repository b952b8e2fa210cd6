//! Convolutional backbone with a linear classifier and two logical branches.
//!
//! Both branches read one weight vector `theta`. The ReLU branch is the
//! classifier being trained and evaluated; the CIM branch swaps every
//! activation for that site's Padé unit and exists to produce masks.

pub mod checkpoint;
pub mod layers;
pub mod loss;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::cam::Branch;
use crate::error::{Error, Result};
use crate::pau::{pau_backward, pau_eval, CimParams};
use crate::scalar::{lift, Scalar};
use layers::{
    avg_pool2_backward, avg_pool2_forward, conv3x3_backward, conv3x3_forward, group_norm_backward,
    group_norm_forward, NormCache,
};
use loss::{cross_entropy, distillation};

/// Shape of the backbone: one conv→norm→activation(→pool) block per entry of `channels`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub in_channels: usize,
    pub height: usize,
    pub width: usize,
    pub channels: Vec<usize>,
    /// Whether each block ends with 2×2 average pooling.
    pub pool: Vec<bool>,
    pub norm_groups: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BlockShape {
    pub in_c: usize,
    pub out_c: usize,
    pub h: usize,
    pub w: usize,
    pub pool: bool,
    pub weight: usize,
    pub bias: usize,
    pub gamma: usize,
    pub beta: usize,
}

impl BlockShape {
    pub fn out_hw(&self) -> (usize, usize) {
        if self.pool {
            (self.h / 2, self.w / 2)
        } else {
            (self.h, self.w)
        }
    }
}

impl Architecture {
    /// Four blocks, 64-dim features at 8×8 for a 64×64 RGB input.
    pub fn desk(height: usize, width: usize) -> Self {
        Architecture {
            in_channels: 3,
            height,
            width,
            channels: vec![8, 16, 32, 64],
            pool: vec![true, true, true, false],
            norm_groups: 2,
        }
    }

    /// Two small blocks, for gradient checks.
    pub fn toy(in_channels: usize, height: usize, width: usize) -> Self {
        Architecture {
            in_channels,
            height,
            width,
            channels: vec![4, 6],
            pool: vec![true, false],
            norm_groups: 2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.channels.is_empty() || self.channels.len() != self.pool.len() {
            return bad("channels and pool must be non-empty and of equal length".into());
        }
        if self.norm_groups == 0 || self.channels.iter().any(|c| c % self.norm_groups != 0) {
            return bad(format!(
                "every channel count must be divisible by norm_groups = {}",
                self.norm_groups
            ));
        }
        let (h, w) = self.feature_hw();
        if h == 0 || w == 0 {
            return bad("input too small for the pooling stack".into());
        }
        Ok(())
    }

    pub fn blocks(&self) -> Vec<BlockShape> {
        let mut out = Vec::with_capacity(self.channels.len());
        let (mut in_c, mut h, mut w, mut off) = (self.in_channels, self.height, self.width, 0);
        for (&out_c, &pool) in self.channels.iter().zip(&self.pool) {
            let weight = off;
            let bias = weight + out_c * in_c * 9;
            let gamma = bias + out_c;
            let beta = gamma + out_c;
            off = beta + out_c;
            let b = BlockShape {
                in_c,
                out_c,
                h,
                w,
                pool,
                weight,
                bias,
                gamma,
                beta,
            };
            (h, w) = b.out_hw();
            in_c = out_c;
            out.push(b);
        }
        out
    }

    pub fn theta_len(&self) -> usize {
        self.blocks().last().map_or(0, |b| b.beta + b.out_c)
    }

    pub fn feature_dim(&self) -> usize {
        *self.channels.last().unwrap()
    }

    pub fn feature_hw(&self) -> (usize, usize) {
        self.pool.iter().fold((self.height, self.width), |(h, w), &p| {
            if p {
                (h / 2, w / 2)
            } else {
                (h, w)
            }
        })
    }

    pub fn activation_sites(&self) -> usize {
        self.channels.len()
    }

    pub fn input_len(&self) -> usize {
        self.in_channels * self.height * self.width
    }
}

/// Activation used at every site of a forward pass.
#[derive(Clone, Copy, Debug)]
pub enum Acts<'a, T> {
    Relu,
    Pau {
        coeffs: &'a [T],
        num_degree: usize,
        den_degree: usize,
    },
}

impl<'a, T: Scalar> Acts<'a, T> {
    fn site(&self, i: usize) -> Option<(&'a [T], &'a [T])> {
        match *self {
            Acts::Relu => None,
            Acts::Pau {
                coeffs,
                num_degree,
                den_degree,
            } => {
                let k = num_degree + 1 + den_degree;
                let s = &coeffs[i * k..(i + 1) * k];
                Some(s.split_at(num_degree + 1))
            }
        }
    }
}

pub struct BlockCache<T> {
    input: Vec<T>,
    norm: NormCache<T>,
    pre: Vec<T>,
}

pub struct ForwardCache<T> {
    blocks: Vec<BlockCache<T>>,
    /// Output of the last block, CHW.
    pub features: Vec<T>,
}

/// Runs the backbone on one CHW input.
pub fn forward_features<T: Scalar>(arch: &Architecture, theta: &[T], acts: Acts<'_, T>, x: &[T]) -> ForwardCache<T> {
    let mut cur = x.to_vec();
    let mut blocks = Vec::with_capacity(arch.channels.len());
    for (i, b) in arch.blocks().into_iter().enumerate() {
        let plane = b.h * b.w;
        let z = conv3x3_forward(
            &cur,
            b.in_c,
            b.h,
            b.w,
            &theta[b.weight..b.bias],
            &theta[b.bias..b.gamma],
            b.out_c,
        );
        let (pre, norm) = group_norm_forward(
            &z,
            b.out_c,
            plane,
            arch.norm_groups,
            &theta[b.gamma..b.beta],
            &theta[b.beta..b.beta + b.out_c],
        );
        let act: Vec<T> = match acts.site(i) {
            None => pre.iter().map(|&v| if v.re() > 0.0 { v } else { T::zero() }).collect(),
            Some((num, den)) => pre.iter().map(|&v| pau_eval(v, num, den)).collect(),
        };
        let out = if b.pool {
            avg_pool2_forward(&act, b.out_c, b.h, b.w)
        } else {
            act
        };
        blocks.push(BlockCache {
            input: std::mem::replace(&mut cur, out),
            norm,
            pre,
        });
    }
    ForwardCache { blocks, features: cur }
}

/// Which gradients a backward pass should produce.
#[derive(Clone, Copy, Debug, Default)]
pub struct Want {
    pub theta: bool,
    pub omega: bool,
    pub input: bool,
}

pub struct BackboneGrads<T> {
    pub theta: Option<Vec<T>>,
    /// Present when the forward ran with PAU activations.
    pub phi: Option<Vec<T>>,
    pub input: Option<Vec<T>>,
}

/// Backpropagates `d_features` (gradient w.r.t. the last block output).
pub fn backward_features<T: Scalar>(
    arch: &Architecture,
    theta: &[T],
    acts: Acts<'_, T>,
    cache: &ForwardCache<T>,
    d_features: Vec<T>,
    want: Want,
) -> BackboneGrads<T> {
    let shapes = arch.blocks();
    let mut d_theta = want.theta.then(|| vec![T::zero(); theta.len()]);
    let mut d_phi = match acts {
        Acts::Relu => None,
        Acts::Pau { coeffs, .. } => Some(vec![T::zero(); coeffs.len()]),
    };
    let mut grad = d_features;
    let mut d_input = None;
    for (i, (b, c)) in shapes.iter().zip(&cache.blocks).enumerate().rev() {
        let plane = b.h * b.w;
        let d_act = if b.pool {
            avg_pool2_backward(&grad, b.out_c, b.h, b.w)
        } else {
            grad
        };
        let d_pre: Vec<T> = match acts.site(i) {
            None => d_act
                .iter()
                .zip(&c.pre)
                .map(|(&g, &p)| if p.re() > 0.0 { g } else { T::zero() })
                .collect(),
            Some((num, den)) => {
                let k = num.len() + den.len();
                let phi = d_phi.as_mut().unwrap();
                let (d_num, d_den) = phi[i * k..(i + 1) * k].split_at_mut(num.len());
                d_act
                    .iter()
                    .zip(&c.pre)
                    .map(|(&g, &p)| pau_backward(p, num, den, g, d_num, d_den))
                    .collect()
            }
        };
        let (norm_params, conv_params) = match d_theta.as_mut() {
            Some(dt) => {
                let (conv, norm) = dt[b.weight..b.beta + b.out_c].split_at_mut(b.gamma - b.weight);
                let (dw, db) = conv.split_at_mut(b.bias - b.weight);
                let (dg, dbe) = norm.split_at_mut(b.out_c);
                (Some((dg, dbe)), Some((dw, db)))
            }
            None => (None, None),
        };
        let d_z = group_norm_backward(
            &d_pre,
            &c.norm,
            b.out_c,
            plane,
            arch.norm_groups,
            &theta[b.gamma..b.beta],
            norm_params,
        );
        let need_input = i > 0 || want.input;
        let d_in = conv3x3_backward(
            &c.input,
            b.in_c,
            b.h,
            b.w,
            &theta[b.weight..b.bias],
            b.out_c,
            &d_z,
            conv_params,
            need_input,
        );
        if i == 0 {
            d_input = d_in;
            grad = Vec::new();
        } else {
            grad = d_in.expect("inner blocks always propagate");
        }
    }
    BackboneGrads {
        theta: d_theta,
        phi: d_phi,
        input: d_input,
    }
}

/// Global average pool of a CHW block.
pub fn global_pool<T: Scalar>(features: &[T], channels: usize) -> Vec<T> {
    let plane = features.len() / channels;
    features
        .chunks_exact(plane)
        .map(|c| c.iter().copied().sum::<T>().scale(1.0 / plane as f64))
        .collect()
}

/// `omega · pooled`, omega stored row-major `classes × dim`.
pub fn linear_logits<T: Scalar>(omega: &[T], pooled: &[T]) -> Vec<T> {
    omega
        .chunks_exact(pooled.len())
        .map(|row| row.iter().zip(pooled).map(|(&w, &f)| w * f).sum())
        .collect()
}

/// Distillation target for one sample.
#[derive(Clone, Copy, Debug)]
pub struct Distill<'a> {
    pub targets: &'a [f64],
    pub weight: f64,
    pub temperature: f64,
}

pub struct SampleGrad<T> {
    pub loss: T,
    pub logits: Vec<T>,
    pub theta: Option<Vec<T>>,
    pub omega: Option<Vec<T>>,
    pub phi: Option<Vec<T>>,
    pub input: Option<Vec<T>>,
}

/// Loss of one sample (cross-entropy plus optional distillation) and the
/// requested gradients.
#[allow(clippy::too_many_arguments)]
pub fn sample_grad<T: Scalar>(
    arch: &Architecture,
    theta: &[T],
    omega: &[T],
    acts: Acts<'_, T>,
    x: &[T],
    label: usize,
    distill: Option<Distill<'_>>,
    want: Want,
) -> SampleGrad<T> {
    let cache = forward_features(arch, theta, acts, x);
    let dim = arch.feature_dim();
    let pooled = global_pool(&cache.features, dim);
    let logits = linear_logits(omega, &pooled);
    let (mut loss, mut d_logits) = cross_entropy(&logits, label);
    if let Some(d) = distill {
        if d.weight > 0.0 && !d.targets.is_empty() {
            let (l, g) = distillation(&logits, d.targets, d.temperature);
            loss += l.scale(d.weight);
            for (a, b) in d_logits.iter_mut().zip(g) {
                *a += b.scale(d.weight);
            }
        }
    }
    let d_omega = want.omega.then(|| {
        let mut g = Vec::with_capacity(omega.len());
        for &dl in &d_logits {
            g.extend(pooled.iter().map(|&f| dl * f));
        }
        g
    });
    let plane = cache.features.len() / dim;
    let mut d_features = Vec::with_capacity(cache.features.len());
    for c in 0..dim {
        let mut d_pool = T::zero();
        for (k, &dl) in d_logits.iter().enumerate() {
            d_pool += omega[k * dim + c] * dl;
        }
        let v = d_pool.scale(1.0 / plane as f64);
        d_features.extend(std::iter::repeat_n(v, plane));
    }
    let grads = if want.theta || want.input || matches!(acts, Acts::Pau { .. }) {
        backward_features(arch, theta, acts, &cache, d_features, want)
    } else {
        BackboneGrads {
            theta: None,
            phi: None,
            input: None,
        }
    };
    SampleGrad {
        loss,
        logits,
        theta: grads.theta,
        omega: d_omega,
        phi: grads.phi,
        input: grads.input,
    }
}

/// Last-block output of one sample.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

/// Backbone weights, classifier and CIM activations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelState {
    pub arch: Architecture,
    pub theta: Vec<f64>,
    /// `classes × feature_dim`, row-major.
    pub omega: Vec<f64>,
    pub classes: usize,
    pub phi: CimParams,
    /// Which activation sites receive outer-level updates.
    pub phi_trainable: Vec<bool>,
}

fn normal_vec(rng: &mut ChaCha8Rng, n: usize, std: f64) -> Vec<f64> {
    let dist = Normal::new(0.0, std).expect("positive std");
    (0..n).map(|_| dist.sample(rng)).collect()
}

/// Seed for the classifier rows added when growing from `old_classes`.
fn expansion_seed(seed: u64, old_classes: usize) -> u64 {
    seed ^ (0x9E37_79B9_7F4A_7C15u64.wrapping_mul(old_classes as u64 + 1))
}

pub const OMEGA_INIT_STD: f64 = 0.01;

impl ModelState {
    /// He-initialised backbone, no classes yet, PAUs at their ReLU fit.
    pub fn new(arch: Architecture, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut theta = vec![0.0; arch.theta_len()];
        for b in arch.blocks() {
            let std = (2.0 / (b.in_c * 9) as f64).sqrt();
            theta[b.weight..b.bias].copy_from_slice(&normal_vec(&mut rng, b.bias - b.weight, std));
            theta[b.gamma..b.beta].fill(1.0);
        }
        let sites = arch.activation_sites();
        Ok(ModelState {
            arch,
            theta,
            omega: Vec::new(),
            classes: 0,
            phi: CimParams::relu_init(sites),
            phi_trainable: vec![true; sites],
        })
    }

    pub fn class_count(&self) -> usize {
        self.classes
    }

    pub fn feature_dim(&self) -> usize {
        self.arch.feature_dim()
    }

    pub fn class_weights(&self, label: usize) -> &[f64] {
        let d = self.feature_dim();
        &self.omega[label * d..(label + 1) * d]
    }

    pub fn acts(&self, branch: Branch) -> Acts<'_, f64> {
        match branch {
            Branch::Relu => Acts::Relu,
            Branch::Cim => Acts::Pau {
                coeffs: &self.phi.coeffs,
                num_degree: self.phi.num_degree,
                den_degree: self.phi.den_degree,
            },
        }
    }

    fn check_input(&self, x: &[f64], height: usize, width: usize) -> Result<()> {
        if height != self.arch.height || width != self.arch.width || x.len() != self.arch.input_len() {
            return Err(Error::ShapeMismatch(format!(
                "model expects {}x{}x{} input, got {height}x{width} with {} values",
                self.arch.in_channels,
                self.arch.height,
                self.arch.width,
                x.len()
            )));
        }
        Ok(())
    }

    pub fn features(&self, x: &[f64], height: usize, width: usize, branch: Branch) -> Result<FeatureMap> {
        self.check_input(x, height, width)?;
        let cache = forward_features(&self.arch, &self.theta, self.acts(branch), x);
        let (h, w) = self.arch.feature_hw();
        Ok(FeatureMap {
            channels: self.feature_dim(),
            height: h,
            width: w,
            data: cache.features,
        })
    }

    /// Feature block and logits for one input tensor.
    pub fn forward(&self, x: &[f64], branch: Branch) -> Result<(FeatureMap, Vec<f64>)> {
        let f = self.features(x, self.arch.height, self.arch.width, branch)?;
        let logits = linear_logits(&self.omega, &global_pool(&f.data, f.channels));
        Ok((f, logits))
    }

    /// Globally pooled features of the ReLU branch (the penultimate layer).
    pub fn embedding(&self, x: &[f64]) -> Result<Vec<f64>> {
        let f = self.features(x, self.arch.height, self.arch.width, Branch::Relu)?;
        Ok(global_pool(&f.data, f.channels))
    }

    pub fn predict(&self, x: &[f64]) -> Result<usize> {
        let (_, logits) = self.forward(x, Branch::Relu)?;
        Ok(argmax(&logits))
    }

    /// Appends `new_classes` classifier rows drawn from a seeded normal.
    pub fn expand_classifier(&self, new_classes: usize, seed: u64) -> ModelState {
        let mut next = self.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(expansion_seed(seed, self.classes));
        next.omega
            .extend(normal_vec(&mut rng, new_classes * self.feature_dim(), OMEGA_INIT_STD));
        next.classes += new_classes;
        next
    }

    /// When enabled, every PAU before the last block is reset to the ReLU fit
    /// and frozen; otherwise all PAUs are trainable.
    pub fn last_block_only_mode(&self, enabled: bool) -> ModelState {
        let mut next = self.clone();
        let sites = self.arch.activation_sites();
        for i in 0..sites {
            let trainable = !enabled || i + 1 == sites;
            if !trainable {
                next.phi.reset_site_to_relu(i);
            }
            next.phi_trainable[i] = trainable;
        }
        next
    }

    pub fn theta_as<T: Scalar>(&self) -> Vec<T> {
        lift(&self.theta)
    }
}

pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pau::fit_relu;
    use crate::scalar::Dual;

    fn random_input(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        normal_vec(&mut rng, n, 1.0)
    }

    fn toy_state(classes: usize) -> ModelState {
        ModelState::new(Architecture::toy(2, 8, 8), 3)
            .unwrap()
            .expand_classifier(classes, 3)
    }

    #[test]
    fn layout_and_param_counts() {
        let arch = Architecture::desk(64, 64);
        assert_eq!(arch.feature_hw(), (8, 8));
        assert_eq!(arch.feature_dim(), 64);
        let s = ModelState::new(arch, 1).unwrap();
        assert_eq!(s.phi.coeffs.len(), 4 * 10);
        assert_eq!(s.theta.len(), s.arch.theta_len());
    }

    #[test]
    fn zero_input_gives_zero_logits() {
        let mut s = toy_state(3);
        for b in s.arch.blocks() {
            s.theta[b.bias..b.gamma].fill(0.0);
            s.theta[b.beta..b.beta + b.out_c].fill(0.0);
        }
        let (_, logits) = s.forward(&vec![0.0; s.arch.input_len()], Branch::Relu).unwrap();
        assert!(logits.iter().all(|&l| l == 0.0));
    }

    #[test]
    fn expanding_keeps_old_logits() {
        let s5 = toy_state(5);
        let s10 = s5.expand_classifier(5, 3);
        assert_eq!(s10.omega.len(), 2 * s5.omega.len());
        assert_eq!(s10, s5.expand_classifier(5, 3));
        let x = random_input(s5.arch.input_len(), 9);
        let (_, a) = s5.forward(&x, Branch::Relu).unwrap();
        let (_, b) = s10.forward(&x, Branch::Relu).unwrap();
        assert_eq!(&b[..5], a.as_slice());
    }

    #[test]
    fn branches_agree_at_relu_fit() {
        let s = ModelState::new(Architecture::desk(64, 64), 5)
            .unwrap()
            .expand_classifier(10, 5);
        for seed in 0..4 {
            let x = random_input(s.arch.input_len(), seed);
            let (_, r) = s.forward(&x, Branch::Relu).unwrap();
            let (_, c) = s.forward(&x, Branch::Cim).unwrap();
            let sup = r.iter().zip(&c).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(sup <= 0.1, "logit sup-norm {sup}");
        }
    }

    #[test]
    fn last_block_only_toggles_trainable_sites() {
        let mut s = toy_state(2);
        s.phi.coeffs[0] += 0.5;
        let on = s.last_block_only_mode(true);
        assert_eq!(on.phi_trainable, vec![false, true]);
        assert_eq!(on.phi.site(0), fit_relu(5, 4));
        assert_eq!((&on.theta, &on.omega), (&s.theta, &s.omega));
        let off = on.last_block_only_mode(false);
        assert_eq!(off.phi_trainable, vec![true, true]);
    }

    #[test]
    fn rejects_wrong_input_shape() {
        let s = toy_state(2);
        assert!(matches!(s.forward(&[0.0; 5], Branch::Relu), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn sample_gradients_match_differences() {
        let mut s = toy_state(3);
        s.phi.coeffs.iter_mut().enumerate().for_each(|(i, c)| *c += 0.01 * (i as f64).sin());
        let x = random_input(s.arch.input_len(), 11);
        let targets = [0.3, 0.7];
        let kd = Distill { targets: &targets, weight: 0.5, temperature: 2.0 };
        let want = Want { theta: true, omega: true, input: true };
        for branch in [Branch::Relu, Branch::Cim] {
            let g = sample_grad(&s.arch, &s.theta, &s.omega, s.acts(branch), &x, 1, Some(kd), want);
            let loss_at = |t: &[f64], o: &[f64], p: &[f64], xx: &[f64]| {
                let acts = match branch {
                    Branch::Relu => Acts::Relu,
                    Branch::Cim => Acts::Pau { coeffs: p, num_degree: 5, den_degree: 4 },
                };
                sample_grad(&s.arch, t, o, acts, xx, 1, Some(kd), Want::default()).loss
            };
            let h = 1e-6;
            let check = |analytic: &[f64], which: usize| {
                for i in (0..analytic.len()).step_by(analytic.len() / 7 + 1) {
                    let mut args = [s.theta.clone(), s.omega.clone(), s.phi.coeffs.clone(), x.clone()];
                    args[which][i] += h;
                    let up = loss_at(&args[0], &args[1], &args[2], &args[3]);
                    args[which][i] -= 2.0 * h;
                    let dn = loss_at(&args[0], &args[1], &args[2], &args[3]);
                    let fd = (up - dn) / (2.0 * h);
                    assert!((fd - analytic[i]).abs() <= 1e-6 + 1e-4 * fd.abs(), "{which}/{i}: {fd} vs {}", analytic[i]);
                }
            };
            check(g.theta.as_ref().unwrap(), 0);
            check(g.omega.as_ref().unwrap(), 1);
            check(g.input.as_ref().unwrap(), 3);
            if branch == Branch::Cim {
                check(g.phi.as_ref().unwrap(), 2);
            }
        }
    }

    #[test]
    fn dual_pass_gives_directional_derivative() {
        let s = toy_state(3);
        let x = random_input(s.arch.input_len(), 12);
        let v = random_input(s.theta.len(), 13);
        let theta_d: Vec<Dual> = s.theta.iter().zip(&v).map(|(&a, &b)| Dual::new(a, b)).collect();
        let omega_d: Vec<Dual> = lift(&s.omega);
        let x_d: Vec<Dual> = lift(&x);
        let g = sample_grad(&s.arch, &theta_d, &omega_d, Acts::Relu, &x_d, 2, None, Want::default());
        let h = 1e-6;
        let shift = |k: f64| -> Vec<f64> { s.theta.iter().zip(&v).map(|(a, b)| a + k * b).collect() };
        let l = |t: &[f64]| sample_grad(&s.arch, t, &s.omega, Acts::Relu, &x, 2, None, Want::default()).loss;
        let fd = (l(&shift(h)) - l(&shift(-h))) / (2.0 * h);
        assert!((g.loss.du - fd).abs() < 1e-6 * (1.0 + fd.abs()));
    }
}
