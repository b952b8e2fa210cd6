//! 8-bit images and nearest-neighbour resampling.

use crate::error::{Error, Result};

/// Per-channel normalisation applied when an image becomes a network input.
pub const PIXEL_MEAN: f64 = 0.5;
pub const PIXEL_STD: f64 = 0.25;

/// An `H×W×C` image with 8 bits per channel, stored row-major (HWC).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Image {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub pixels: Vec<u8>,
    pub label: usize,
    pub source_id: String,
}

impl Image {
    pub fn new(
        height: usize,
        width: usize,
        channels: usize,
        pixels: Vec<u8>,
        label: usize,
        source_id: impl Into<String>,
    ) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(Error::ShapeMismatch(format!(
                "image dimensions must be positive, got {height}x{width}x{channels}"
            )));
        }
        if pixels.len() != height * width * channels {
            return Err(Error::ShapeMismatch(format!(
                "{} bytes for a {height}x{width}x{channels} image",
                pixels.len()
            )));
        }
        Ok(Image {
            height,
            width,
            channels,
            pixels,
            label,
            source_id: source_id.into(),
        })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: u8) -> Self {
        Image {
            height,
            width,
            channels,
            pixels: vec![value; height * width * channels],
            label: 0,
            source_id: String::new(),
        }
    }

    #[inline]
    pub fn pixel(&self, h: usize, w: usize) -> &[u8] {
        let i = (h * self.width + w) * self.channels;
        &self.pixels[i..i + self.channels]
    }

    #[inline]
    pub fn pixel_mut(&mut self, h: usize, w: usize) -> &mut [u8] {
        let i = (h * self.width + w) * self.channels;
        &mut self.pixels[i..i + self.channels]
    }

    /// Normalised CHW tensor, the layout the network consumes.
    pub fn to_tensor(&self) -> Vec<f64> {
        let plane = self.height * self.width;
        let mut out = vec![0.0; plane * self.channels];
        for (p, px) in self.pixels.chunks_exact(self.channels).enumerate() {
            for (c, &v) in px.iter().enumerate() {
                out[c * plane + p] = (v as f64 / 255.0 - PIXEL_MEAN) / PIXEL_STD;
            }
        }
        out
    }

    /// Horizontal mirror; labels and ids are kept.
    pub fn flipped(&self) -> Image {
        let mut out = self.clone();
        for h in 0..self.height {
            for w in 0..self.width {
                out.pixel_mut(h, self.width - 1 - w)
                    .copy_from_slice(self.pixel(h, w));
            }
        }
        out
    }
}

/// Inverse of [`Image::to_tensor`] for one value, clamped and rounded to 8 bits.
pub fn tensor_value_to_u8(v: f64) -> u8 {
    ((v * PIXEL_STD + PIXEL_MEAN) * 255.0).round().clamp(0.0, 255.0) as u8
}

/// Source coordinate sampled by output coordinate `dst` when a line of `src_len`
/// samples is resized to `dst_len` samples (nearest neighbour, `floor(dst·src/dst_len)`).
#[inline]
pub fn nearest_source(dst: usize, src_len: usize, dst_len: usize) -> usize {
    dst * src_len / dst_len
}

/// Side lengths after reducing the pixel count by `eta`: each side shrinks by
/// `1/√eta`, rounded up.
pub fn downsampled_dims(height: usize, width: usize, eta: f64) -> Result<(usize, usize)> {
    if !(eta >= 1.0) || !eta.is_finite() {
        return Err(Error::InvalidRatio(eta));
    }
    let side = eta.sqrt();
    let shrink = |n: usize| (((n as f64) / side) - 1e-9).ceil().max(1.0) as usize;
    Ok((shrink(height).min(height), shrink(width).min(width)))
}

/// Nearest-neighbour resize of an HWC byte image.
pub fn resize_nearest(image: &Image, out_h: usize, out_w: usize) -> Image {
    let c = image.channels;
    let mut pixels = Vec::with_capacity(out_h * out_w * c);
    for y in 0..out_h {
        let sy = nearest_source(y, image.height, out_h);
        for x in 0..out_w {
            let sx = nearest_source(x, image.width, out_w);
            pixels.extend_from_slice(image.pixel(sy, sx));
        }
    }
    Image {
        height: out_h,
        width: out_w,
        channels: c,
        pixels,
        label: image.label,
        source_id: image.source_id.clone(),
    }
}

/// Nearest-neighbour resize of a single-plane real map.
pub fn resize_plane_nearest(
    values: &[f64],
    in_h: usize,
    in_w: usize,
    out_h: usize,
    out_w: usize,
) -> Vec<f64> {
    let mut out = Vec::with_capacity(out_h * out_w);
    for y in 0..out_h {
        let sy = nearest_source(y, in_h, out_h);
        for x in 0..out_w {
            out.push(values[sy * in_w + nearest_source(x, in_w, out_w)]);
        }
    }
    out
}

/// Bilinear resize of a single-plane real map (half-pixel centres, edge clamped).
pub fn resize_plane_bilinear(
    values: &[f64],
    in_h: usize,
    in_w: usize,
    out_h: usize,
    out_w: usize,
) -> Vec<f64> {
    let coord = |dst: usize, src_len: usize, dst_len: usize| {
        let s = ((dst as f64 + 0.5) * src_len as f64 / dst_len as f64 - 0.5)
            .clamp(0.0, (src_len - 1) as f64);
        let lo = s.floor() as usize;
        (lo, (lo + 1).min(src_len - 1), s - lo as f64)
    };
    let mut out = Vec::with_capacity(out_h * out_w);
    for y in 0..out_h {
        let (y0, y1, fy) = coord(y, in_h, out_h);
        for x in 0..out_w {
            let (x0, x1, fx) = coord(x, in_w, out_w);
            let top = values[y0 * in_w + x0] * (1.0 - fx) + values[y0 * in_w + x1] * fx;
            let bot = values[y1 * in_w + x0] * (1.0 - fx) + values[y1 * in_w + x1] * fx;
            out.push(top * (1.0 - fy) + bot * fy);
        }
    }
    out
}

/// Nearest-neighbour down-then-up round trip of a CHW tensor: the `x_η`
/// background, brought back to full size.
pub fn degrade_tensor(tensor: &[f64], channels: usize, h: usize, w: usize, eta: f64) -> Result<Vec<f64>> {
    let (dh, dw) = downsampled_dims(h, w, eta)?;
    let plane = h * w;
    let mut out = vec![0.0; tensor.len()];
    for c in 0..channels {
        let src = &tensor[c * plane..(c + 1) * plane];
        let small = resize_plane_nearest(src, h, w, dh, dw);
        out[c * plane..(c + 1) * plane].copy_from_slice(&resize_plane_nearest(&small, dh, dw, h, w));
    }
    Ok(out)
}
