//! Soft compression `x̃ = M⊙x + (1−M)⊙x_η`, with `M` the unthresholded CAM
//! of the masking branch, and its vector-Jacobian product w.r.t. φ.

use crate::cam::{class_activation, Upsampling, DEGENERATE_SPREAD};
use crate::error::{Error, Result};
use crate::image::{degrade_tensor, nearest_source};
use crate::model::{backward_features, forward_features, ForwardCache, ModelState, Want};
use crate::Branch;

/// For every output pixel, the (source index, weight) pairs it blends.
fn upsample_taps(in_h: usize, in_w: usize, out_h: usize, out_w: usize, mode: Upsampling) -> Vec<Vec<(usize, f64)>> {
    let mut taps = Vec::with_capacity(out_h * out_w);
    match mode {
        Upsampling::Nearest => {
            for y in 0..out_h {
                let sy = nearest_source(y, in_h, out_h);
                for x in 0..out_w {
                    taps.push(vec![(sy * in_w + nearest_source(x, in_w, out_w), 1.0)]);
                }
            }
        }
        Upsampling::Bilinear => {
            let coord = |dst: usize, src_len: usize, dst_len: usize| {
                let s = ((dst as f64 + 0.5) * src_len as f64 / dst_len as f64 - 0.5).clamp(0.0, (src_len - 1) as f64);
                let lo = s.floor() as usize;
                (lo, (lo + 1).min(src_len - 1), s - lo as f64)
            };
            for y in 0..out_h {
                let (y0, y1, fy) = coord(y, in_h, out_h);
                for x in 0..out_w {
                    let (x0, x1, fx) = coord(x, in_w, out_w);
                    taps.push(vec![
                        (y0 * in_w + x0, (1.0 - fy) * (1.0 - fx)),
                        (y0 * in_w + x1, (1.0 - fy) * fx),
                        (y1 * in_w + x0, fy * (1.0 - fx)),
                        (y1 * in_w + x1, fy * fx),
                    ]);
                }
            }
        }
    }
    taps
}

struct SoftCache {
    x: Vec<f64>,
    x_eta: Vec<f64>,
    cim: ForwardCache<f64>,
    norm: Vec<f64>,
    lo: usize,
    hi: usize,
    spread: f64,
    upsampling: Upsampling,
}

/// One softly compressed sample.
pub struct SoftCompressed {
    pub x_tilde: Vec<f64>,
    /// Image-resolution soft mask in `[0, 1]`.
    pub mask: Vec<f64>,
    pub label: usize,
    /// The CAM had no spread; the sample passes through uncompressed and
    /// carries no φ-dependence.
    pub degenerate: bool,
    cache: Option<SoftCache>,
}

/// Soft-compresses one normalised CHW tensor of class `label` with the
/// masking branch of `state`.
pub fn differentiable_compress(
    state: &ModelState,
    x: &[f64],
    label: usize,
    eta: f64,
    upsampling: Upsampling,
) -> Result<SoftCompressed> {
    let arch = &state.arch;
    if x.len() != arch.input_len() {
        return Err(Error::ShapeMismatch(format!(
            "expected {} input values, got {}",
            arch.input_len(),
            x.len()
        )));
    }
    if label >= state.class_count() {
        return Err(Error::ShapeMismatch(format!("label {label} out of range")));
    }
    let (h, w) = (arch.height, arch.width);
    let plane = h * w;
    let cim = forward_features(arch, &state.theta, state.acts(Branch::Cim), x);
    let channels = arch.feature_dim();
    let a = class_activation(&cim.features, channels, state.class_weights(label));
    let (mut lo, mut hi) = (0, 0);
    for (k, &v) in a.iter().enumerate() {
        if v < a[lo] {
            lo = k;
        }
        if v > a[hi] {
            hi = k;
        }
    }
    let spread = a[hi] - a[lo];
    if !(spread > DEGENERATE_SPREAD) {
        return Ok(SoftCompressed {
            x_tilde: x.to_vec(),
            mask: vec![1.0; plane],
            label,
            degenerate: true,
            cache: None,
        });
    }
    let norm: Vec<f64> = a.iter().map(|&v| (v - a[lo]) / spread).collect();
    let (fh, fw) = arch.feature_hw();
    let taps = upsample_taps(fh, fw, h, w, upsampling);
    let mask: Vec<f64> = taps.iter().map(|t| t.iter().map(|&(k, wt)| norm[k] * wt).sum()).collect();
    let x_eta = degrade_tensor(x, arch.in_channels, h, w, eta)?;
    let mut x_tilde = vec![0.0; x.len()];
    for c in 0..arch.in_channels {
        for p in 0..plane {
            let i = c * plane + p;
            x_tilde[i] = mask[p] * x[i] + (1.0 - mask[p]) * x_eta[i];
        }
    }
    Ok(SoftCompressed {
        x_tilde,
        mask,
        label,
        degenerate: false,
        cache: Some(SoftCache {
            x: x.to_vec(),
            x_eta,
            cim,
            norm,
            lo,
            hi,
            spread,
            upsampling,
        }),
    })
}

/// Pulls gradients on the output (`d_x_tilde`, CHW) and on the mask
/// (`d_mask`, HW) back to φ. θ and ω are treated as constants.
pub fn soft_backward(
    state: &ModelState,
    sc: &SoftCompressed,
    d_x_tilde: Option<&[f64]>,
    d_mask: Option<&[f64]>,
) -> Vec<f64> {
    let Some(cache) = sc.cache.as_ref() else {
        return vec![0.0; state.phi.coeffs.len()];
    };
    let arch = &state.arch;
    let plane = arch.height * arch.width;
    let mut dm = match d_mask {
        Some(d) => d.to_vec(),
        None => vec![0.0; plane],
    };
    if let Some(d) = d_x_tilde {
        for c in 0..arch.in_channels {
            for p in 0..plane {
                let i = c * plane + p;
                dm[p] += d[i] * (cache.x[i] - cache.x_eta[i]);
            }
        }
    }
    let (fh, fw) = arch.feature_hw();
    let taps = upsample_taps(fh, fw, arch.height, arch.width, cache.upsampling);
    let mut d_norm = vec![0.0; fh * fw];
    for (p, t) in taps.iter().enumerate() {
        for &(k, wt) in t {
            d_norm[k] += dm[p] * wt;
        }
    }
    // norm_k = (a_k − a_lo) / (a_hi − a_lo)
    let r = cache.spread;
    let mut d_a = vec![0.0; fh * fw];
    for (k, (&g, &n)) in d_norm.iter().zip(&cache.norm).enumerate() {
        if k == cache.lo || k == cache.hi {
            continue;
        }
        d_a[k] += g / r;
        d_a[cache.lo] += g * (n - 1.0) / r;
        d_a[cache.hi] -= g * n / r;
    }
    let weights = state.class_weights(sc.label);
    let mut d_features = Vec::with_capacity(cache.cim.features.len());
    for &wc in weights {
        d_features.extend(d_a.iter().map(|&g| wc * g));
    }
    backward_features(
        arch,
        &state.theta,
        state.acts(Branch::Cim),
        &cache.cim,
        d_features,
        Want::default(),
    )
    .phi
    .expect("masking branch runs with Padé units")
}

/// `R = mean over batch and pixels of M²` and its gradient per sample mask.
pub fn mask_regularizer(batch: &[SoftCompressed]) -> (f64, Vec<Vec<f64>>) {
    if batch.is_empty() {
        return (0.0, Vec::new());
    }
    let n = batch.len() as f64;
    let mut value = 0.0;
    let mut grads = Vec::with_capacity(batch.len());
    for sc in batch {
        let plane = sc.mask.len() as f64;
        value += sc.mask.iter().map(|m| m * m).sum::<f64>() / (plane * n);
        grads.push(if sc.degenerate {
            vec![0.0; sc.mask.len()]
        } else {
            sc.mask.iter().map(|m| 2.0 * m / (plane * n)).collect()
        });
    }
    (value, grads)
}

/// Mean over sample pairs of the mean absolute mask difference; `None`
/// with fewer than two samples.
pub fn pairwise_mask_distance(batch: &[SoftCompressed]) -> Option<f64> {
    if batch.len() < 2 {
        return None;
    }
    let mut total = 0.0;
    let mut pairs = 0usize;
    for i in 0..batch.len() {
        for j in i + 1..batch.len() {
            let (a, b) = (&batch[i].mask, &batch[j].mask);
            total += a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64;
            pairs += 1;
        }
    }
    Some(total / pairs as f64)
}
