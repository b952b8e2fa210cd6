//! Selective downsampling of exemplars and their memory accounting.
//!
//! A compressed exemplar keeps the pixels inside its bounding box at full
//! resolution and a nearest-neighbour downsampled copy of the whole image for
//! everything else. Background cells whose sampled source pixel falls inside
//! the box are not stored: the crop already holds that pixel. What remains to
//! be stored is the crop plus roughly `(HW - H_B·W_B)/η` background pixels,
//! which is what [`memory_cost`] charges.

use crate::cam::BBox;
use crate::error::{Error, Result};
use crate::image::{downsampled_dims, nearest_source, resize_nearest, Image};

#[derive(Clone, Debug, PartialEq)]
pub struct CompressedExemplar {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub label: usize,
    /// Area ratio between the original and the background grid. Always an
    /// `f32`-representable value so that archives round-trip exactly.
    pub eta: f64,
    /// `None` means the whole image is downsampled.
    pub bbox: Option<BBox>,
    /// Full-resolution pixels inside `bbox`, row-major HWC.
    pub crop: Vec<u8>,
    pub bg_height: usize,
    pub bg_width: usize,
    /// Downsampled grid, HWC; cells recoverable from the crop are zero.
    pub background: Vec<u8>,
    /// Memory in units of one original image.
    pub cost: f64,
}

/// Nearest-neighbour reduction of the pixel count by `eta`.
pub fn downsample_full(image: &Image, eta: f64) -> Result<Image> {
    let (h, w) = downsampled_dims(image.height, image.width, eta)?;
    Ok(resize_nearest(image, h, w))
}

/// `1 - (1 - 1/η)(1 - H_B·W_B / HW)`.
pub fn memory_cost(bbox: &BBox, height: usize, width: usize, eta: f64) -> Result<f64> {
    bbox.validate(height, width)?;
    memory_cost_for_area(bbox.area(), height, width, eta)
}

/// [`memory_cost`] for an arbitrary kept area (0 for a fully downsampled image).
pub fn memory_cost_for_area(area: usize, height: usize, width: usize, eta: f64) -> Result<f64> {
    if !(eta >= 1.0) || !eta.is_finite() {
        return Err(Error::InvalidRatio(eta));
    }
    let kept = area as f64 / (height * width) as f64;
    Ok(1.0 - (1.0 - 1.0 / eta) * (1.0 - kept))
}

/// Whether background cell `(i, j)` must be stored, i.e. its source pixel lies
/// outside the box.
#[inline]
fn cell_is_stored(bbox: Option<&BBox>, i: usize, j: usize, h: usize, w: usize, bh: usize, bw: usize) -> bool {
    match bbox {
        None => true,
        Some(b) => !b.contains(nearest_source(i, h, bh), nearest_source(j, w, bw)),
    }
}

/// Compresses `image`, keeping `bbox` at full resolution.
pub fn compress(image: &Image, bbox: &BBox, eta: f64) -> Result<CompressedExemplar> {
    compress_region(image, Some(bbox), eta)
}

/// Like [`compress`], but `None` downsamples every pixel.
pub fn compress_region(image: &Image, bbox: Option<&BBox>, eta: f64) -> Result<CompressedExemplar> {
    let eta = eta as f32 as f64;
    let (bh, bw) = downsampled_dims(image.height, image.width, eta)?;
    if let Some(b) = bbox {
        b.validate(image.height, image.width)?;
    }
    let c = image.channels;
    let crop = match bbox {
        Some(b) => {
            let mut crop = Vec::with_capacity(b.area() * c);
            for h in b.h_min..=b.h_max {
                let start = (h * image.width + b.w_min) * c;
                crop.extend_from_slice(&image.pixels[start..start + b.width() * c]);
            }
            crop
        }
        None => Vec::new(),
    };
    let mut background = resize_nearest(image, bh, bw).pixels;
    for i in 0..bh {
        for j in 0..bw {
            if !cell_is_stored(bbox, i, j, image.height, image.width, bh, bw) {
                let k = (i * bw + j) * c;
                background[k..k + c].fill(0);
            }
        }
    }
    let area = bbox.map_or(0, BBox::area);
    Ok(CompressedExemplar {
        height: image.height,
        width: image.width,
        channels: c,
        label: image.label,
        eta,
        bbox: bbox.copied(),
        crop,
        bg_height: bh,
        bg_width: bw,
        background,
        cost: memory_cost_for_area(area, image.height, image.width, eta)?,
    })
}

impl CompressedExemplar {
    /// Number of stored pixel positions (crop plus stored background cells).
    pub fn stored_pixels(&self) -> usize {
        let kept = self.bbox.map_or(0, |b| b.area());
        kept + self.stored_cell_count()
    }

    pub fn stored_cell_count(&self) -> usize {
        let mut n = 0;
        for i in 0..self.bg_height {
            for j in 0..self.bg_width {
                if self.is_stored_cell(i, j) {
                    n += 1;
                }
            }
        }
        n
    }

    #[inline]
    pub(crate) fn is_stored_cell(&self, i: usize, j: usize) -> bool {
        cell_is_stored(
            self.bbox.as_ref(),
            i,
            j,
            self.height,
            self.width,
            self.bg_height,
            self.bg_width,
        )
    }

    pub(crate) fn check_shape(&self) -> Result<()> {
        let c = self.channels;
        let kept = self.bbox.map_or(0, |b| b.area());
        if let Some(b) = &self.bbox {
            b.validate(self.height, self.width)
                .map_err(|e| Error::CorruptStore(e.to_string()))?;
        }
        if self.crop.len() != kept * c {
            return Err(Error::CorruptStore(format!(
                "crop holds {} bytes, bbox needs {}",
                self.crop.len(),
                kept * c
            )));
        }
        if self.background.len() != self.bg_height * self.bg_width * c {
            return Err(Error::CorruptStore(format!(
                "background holds {} bytes, grid needs {}",
                self.background.len(),
                self.bg_height * self.bg_width * c
            )));
        }
        Ok(())
    }

    /// The full downsampled grid, with cells sourced inside the box taken from the crop.
    pub fn background_grid(&self) -> Result<Image> {
        self.check_shape()?;
        let c = self.channels;
        let mut grid = self.background.clone();
        if let Some(b) = &self.bbox {
            for i in 0..self.bg_height {
                for j in 0..self.bg_width {
                    if self.is_stored_cell(i, j) {
                        continue;
                    }
                    let sh = nearest_source(i, self.height, self.bg_height) - b.h_min;
                    let sw = nearest_source(j, self.width, self.bg_width) - b.w_min;
                    let src = (sh * b.width() + sw) * c;
                    let dst = (i * self.bg_width + j) * c;
                    grid[dst..dst + c].copy_from_slice(&self.crop[src..src + c]);
                }
            }
        }
        Image::new(self.bg_height, self.bg_width, c, grid, self.label, "")
    }
}

/// Decodes an exemplar to a full-size image: upsampled background with the
/// crop pasted back at its box.
pub fn reconstruct(ex: &CompressedExemplar) -> Result<Image> {
    let grid = ex.background_grid()?;
    let mut out = resize_nearest(&grid, ex.height, ex.width);
    if let Some(b) = &ex.bbox {
        let c = ex.channels;
        let row_len = b.width() * c;
        for (r, h) in (b.h_min..=b.h_max).enumerate() {
            let dst = (h * ex.width + b.w_min) * c;
            out.pixels[dst..dst + row_len].copy_from_slice(&ex.crop[r * row_len..(r + 1) * row_len]);
        }
    }
    out.label = ex.label;
    Ok(out)
}
