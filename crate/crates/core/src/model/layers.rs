//! Per-sample layer kernels on CHW buffers, generic over [`Scalar`].

use crate::scalar::Scalar;

/// 3×3 convolution, stride 1, zero padding 1.
pub fn conv3x3_forward<T: Scalar>(
    input: &[T],
    in_c: usize,
    h: usize,
    w: usize,
    weight: &[T],
    bias: &[T],
    out_c: usize,
) -> Vec<T> {
    let plane = h * w;
    let mut out = vec![T::zero(); out_c * plane];
    for o in 0..out_c {
        let out_o = &mut out[o * plane..(o + 1) * plane];
        out_o.fill(bias[o]);
        for i in 0..in_c {
            let inp = &input[i * plane..(i + 1) * plane];
            for ky in 0..3 {
                let (y0, y1) = valid_range(ky, h);
                for kx in 0..3 {
                    let (x0, x1) = valid_range(kx, w);
                    if x0 >= x1 {
                        continue;
                    }
                    let wv = weight[((o * in_c + i) * 3 + ky) * 3 + kx];
                    for y in y0..y1 {
                        let sy = y + ky - 1;
                        let dst = &mut out_o[y * w + x0..y * w + x1];
                        let src = &inp[sy * w + x0 + kx - 1..sy * w + x1 + kx - 1];
                        for (d, &s) in dst.iter_mut().zip(src) {
                            *d += wv * s;
                        }
                    }
                }
            }
        }
    }
    out
}

/// Output rows (or columns) `y` for which `y + k - 1` is inside `[0, n)`.
#[inline]
fn valid_range(k: usize, n: usize) -> (usize, usize) {
    let start = if k == 0 { 1 } else { 0 };
    let end = if k == 2 { n.saturating_sub(1) } else { n };
    (start, end)
}

/// Backward of [`conv3x3_forward`]. Accumulates into `d_weight`/`d_bias` when
/// given and returns the input gradient when `want_input`.
#[allow(clippy::too_many_arguments)]
pub fn conv3x3_backward<T: Scalar>(
    input: &[T],
    in_c: usize,
    h: usize,
    w: usize,
    weight: &[T],
    out_c: usize,
    d_out: &[T],
    mut params: Option<(&mut [T], &mut [T])>,
    want_input: bool,
) -> Option<Vec<T>> {
    let plane = h * w;
    let mut d_in = want_input.then(|| vec![T::zero(); in_c * plane]);
    for o in 0..out_c {
        let g = &d_out[o * plane..(o + 1) * plane];
        if let Some((_, d_bias)) = params.as_mut() {
            d_bias[o] += g.iter().copied().sum::<T>();
        }
        for i in 0..in_c {
            let inp = &input[i * plane..(i + 1) * plane];
            for ky in 0..3 {
                let (y0, y1) = valid_range(ky, h);
                for kx in 0..3 {
                    let (x0, x1) = valid_range(kx, w);
                    if x0 >= x1 {
                        continue;
                    }
                    let widx = ((o * in_c + i) * 3 + ky) * 3 + kx;
                    if let Some((d_weight, _)) = params.as_mut() {
                        let mut acc = T::zero();
                        for y in y0..y1 {
                            let sy = y + ky - 1;
                            let gr = &g[y * w + x0..y * w + x1];
                            let src = &inp[sy * w + x0 + kx - 1..sy * w + x1 + kx - 1];
                            for (&a, &b) in gr.iter().zip(src) {
                                acc += a * b;
                            }
                        }
                        d_weight[widx] += acc;
                    }
                    if let Some(d_in) = d_in.as_mut() {
                        let wv = weight[widx];
                        let d_in_i = &mut d_in[i * plane..(i + 1) * plane];
                        for y in y0..y1 {
                            let sy = y + ky - 1;
                            let gr = &g[y * w + x0..y * w + x1];
                            let dst = &mut d_in_i[sy * w + x0 + kx - 1..sy * w + x1 + kx - 1];
                            for (d, &a) in dst.iter_mut().zip(gr) {
                                *d += wv * a;
                            }
                        }
                    }
                }
            }
        }
    }
    d_in
}

/// Group normalisation statistics of one sample.
pub struct NormCache<T> {
    pub xhat: Vec<T>,
    pub inv_std: Vec<T>,
}

pub const NORM_EPS: f64 = 1e-5;

/// Normalises each group of `c / groups` channels to zero mean and unit
/// variance, then applies the per-channel affine map.
pub fn group_norm_forward<T: Scalar>(
    x: &[T],
    c: usize,
    plane: usize,
    groups: usize,
    gamma: &[T],
    beta: &[T],
) -> (Vec<T>, NormCache<T>) {
    let per = c / groups;
    let n = (per * plane) as f64;
    let mut xhat = vec![T::zero(); x.len()];
    let mut out = vec![T::zero(); x.len()];
    let mut inv_std = Vec::with_capacity(groups);
    for g in 0..groups {
        let span = g * per * plane..(g + 1) * per * plane;
        let xs = &x[span.clone()];
        let mean = xs.iter().copied().sum::<T>().scale(1.0 / n);
        let var = xs
            .iter()
            .map(|&v| {
                let d = v - mean;
                d * d
            })
            .sum::<T>()
            .scale(1.0 / n);
        let istd = T::one() / (var + T::from_f64(NORM_EPS)).sqrt();
        inv_std.push(istd);
        for ch in g * per..(g + 1) * per {
            let (ga, be) = (gamma[ch], beta[ch]);
            for p in ch * plane..(ch + 1) * plane {
                let xh = (x[p] - mean) * istd;
                xhat[p] = xh;
                out[p] = ga * xh + be;
            }
        }
    }
    (out, NormCache { xhat, inv_std })
}

/// Backward of [`group_norm_forward`]; returns the input gradient.
#[allow(clippy::too_many_arguments)]
pub fn group_norm_backward<T: Scalar>(
    d_out: &[T],
    cache: &NormCache<T>,
    c: usize,
    plane: usize,
    groups: usize,
    gamma: &[T],
    mut params: Option<(&mut [T], &mut [T])>,
) -> Vec<T> {
    let per = c / groups;
    let n = (per * plane) as f64;
    let mut d_x = vec![T::zero(); d_out.len()];
    let mut d_xhat = vec![T::zero(); d_out.len()];
    for ch in 0..c {
        let span = ch * plane..(ch + 1) * plane;
        if let Some((d_gamma, d_beta)) = params.as_mut() {
            let mut dg = T::zero();
            let mut db = T::zero();
            for p in span.clone() {
                dg += d_out[p] * cache.xhat[p];
                db += d_out[p];
            }
            d_gamma[ch] += dg;
            d_beta[ch] += db;
        }
        for p in span {
            d_xhat[p] = d_out[p] * gamma[ch];
        }
    }
    for g in 0..groups {
        let span = g * per * plane..(g + 1) * per * plane;
        let mut sum_d = T::zero();
        let mut sum_dx = T::zero();
        for p in span.clone() {
            sum_d += d_xhat[p];
            sum_dx += d_xhat[p] * cache.xhat[p];
        }
        let k = cache.inv_std[g].scale(1.0 / n);
        for p in span {
            d_x[p] = k * (d_xhat[p].scale(n) - sum_d - cache.xhat[p] * sum_dx);
        }
    }
    d_x
}

/// 2×2 average pooling with stride 2 (odd trailing rows/columns are dropped).
pub fn avg_pool2_forward<T: Scalar>(x: &[T], c: usize, h: usize, w: usize) -> Vec<T> {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        let base = ch * h * w;
        for y in 0..oh {
            for xx in 0..ow {
                let i = base + 2 * y * w + 2 * xx;
                out.push((x[i] + x[i + 1] + x[i + w] + x[i + w + 1]).scale(0.25));
            }
        }
    }
    out
}

pub fn avg_pool2_backward<T: Scalar>(d_out: &[T], c: usize, h: usize, w: usize) -> Vec<T> {
    let (oh, ow) = (h / 2, w / 2);
    let mut d_x = vec![T::zero(); c * h * w];
    for ch in 0..c {
        let base = ch * h * w;
        for y in 0..oh {
            for xx in 0..ow {
                let g = d_out[(ch * oh + y) * ow + xx].scale(0.25);
                let i = base + 2 * y * w + 2 * xx;
                d_x[i] += g;
                d_x[i + 1] += g;
                d_x[i + w] += g;
                d_x[i + w + 1] += g;
            }
        }
    }
    d_x
}
