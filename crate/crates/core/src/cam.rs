//! Class activation maps, hard thresholding and tight bounding boxes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{resize_plane_bilinear, resize_plane_nearest, Image};
use crate::model::ModelState;

/// Spread below which a map counts as constant.
pub const DEGENERATE_SPREAD: f64 = 1e-12;

/// Which logical branch of the network produced features.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    /// Plain ReLU activations; the classifier that is evaluated.
    Relu,
    /// Same weights with every activation swapped for its learnable PAU.
    Cim,
}

/// Interpolation used to bring a feature-resolution map to image size.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Upsampling {
    #[default]
    Nearest,
    Bilinear,
}

/// Min-max normalised activation map at image resolution.
#[derive(Clone, Debug, PartialEq)]
pub struct ActivationMap {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
    pub branch: Branch,
    /// Set when the raw map was constant; `values` is then all zeros.
    pub degenerate: bool,
}

impl ActivationMap {
    #[inline]
    pub fn get(&self, h: usize, w: usize) -> f64 {
        self.values[h * self.width + w]
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BinaryMask {
    pub height: usize,
    pub width: usize,
    pub values: Vec<bool>,
}

impl BinaryMask {
    pub fn new(height: usize, width: usize, values: Vec<bool>) -> Self {
        assert_eq!(values.len(), height * width);
        BinaryMask {
            height,
            width,
            values,
        }
    }

    /// Mask with exactly the pixels of `bbox` set.
    pub fn from_bbox(height: usize, width: usize, bbox: &BBox) -> Self {
        let values = (0..height * width)
            .map(|i| bbox.contains(i / width, i % width))
            .collect();
        BinaryMask::new(height, width, values)
    }

    #[inline]
    pub fn get(&self, h: usize, w: usize) -> bool {
        self.values[h * self.width + w]
    }

    pub fn is_empty(&self) -> bool {
        !self.values.iter().any(|&v| v)
    }

    pub fn count(&self) -> usize {
        self.values.iter().filter(|&&v| v).count()
    }

    /// True when every set pixel of `self` is also set in `other`.
    pub fn is_subset_of(&self, other: &BinaryMask) -> bool {
        self.values
            .iter()
            .zip(&other.values)
            .all(|(&a, &b)| !a || b)
    }
}

/// Inclusive pixel rectangle `[h_min, h_max] × [w_min, w_max]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BBox {
    pub h_min: usize,
    pub w_min: usize,
    pub h_max: usize,
    pub w_max: usize,
}

impl BBox {
    pub fn new(h_min: usize, w_min: usize, h_max: usize, w_max: usize) -> Self {
        BBox {
            h_min,
            w_min,
            h_max,
            w_max,
        }
    }

    pub fn full(height: usize, width: usize) -> Self {
        BBox::new(0, 0, height - 1, width - 1)
    }

    /// Centred box covering a quarter of the image area (half of each side).
    pub fn center_quarter(height: usize, width: usize) -> Self {
        let bh = (height / 2).max(1);
        let bw = (width / 2).max(1);
        let h0 = (height - bh) / 2;
        let w0 = (width - bw) / 2;
        BBox::new(h0, w0, h0 + bh - 1, w0 + bw - 1)
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.h_max - self.h_min + 1
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.w_max - self.w_min + 1
    }

    #[inline]
    pub fn area(&self) -> usize {
        self.height() * self.width()
    }

    #[inline]
    pub fn contains(&self, h: usize, w: usize) -> bool {
        h >= self.h_min && h <= self.h_max && w >= self.w_min && w <= self.w_max
    }

    pub fn contains_box(&self, other: &BBox) -> bool {
        self.h_min <= other.h_min
            && self.w_min <= other.w_min
            && self.h_max >= other.h_max
            && self.w_max >= other.w_max
    }

    pub fn validate(&self, height: usize, width: usize) -> Result<()> {
        if self.h_min <= self.h_max && self.w_min <= self.w_max && self.h_max < height && self.w_max < width {
            Ok(())
        } else {
            Err(Error::InvalidBBox {
                bbox: [self.h_min, self.w_min, self.h_max, self.w_max],
                height,
                width,
            })
        }
    }
}

/// Channel-weighted sum `A = Σ_c w_c F_c` over a CHW feature block.
pub fn class_activation(features: &[f64], channels: usize, weights: &[f64]) -> Vec<f64> {
    assert_eq!(weights.len(), channels);
    let plane = features.len() / channels;
    let mut a = vec![0.0; plane];
    for (c, &wc) in weights.iter().enumerate() {
        for (dst, &f) in a.iter_mut().zip(&features[c * plane..(c + 1) * plane]) {
            *dst += wc * f;
        }
    }
    a
}

/// `(A - min) / (max - min)`, or `None` when the spread is at most
/// [`DEGENERATE_SPREAD`].
pub fn normalize_min_max(a: &[f64]) -> Option<Vec<f64>> {
    let (lo, hi) = a
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let spread = hi - lo;
    if !(spread > DEGENERATE_SPREAD) {
        return None;
    }
    Some(a.iter().map(|&v| (v - lo) / spread).collect())
}

/// Builds the image-resolution map from a feature block and the class weights.
#[allow(clippy::too_many_arguments)]
pub fn cam_from_features(
    features: &[f64],
    channels: usize,
    feat_h: usize,
    feat_w: usize,
    class_weights: &[f64],
    out_h: usize,
    out_w: usize,
    branch: Branch,
    upsampling: Upsampling,
) -> ActivationMap {
    let a = class_activation(features, channels, class_weights);
    match normalize_min_max(&a) {
        Some(norm) => {
            let values = match upsampling {
                Upsampling::Nearest => resize_plane_nearest(&norm, feat_h, feat_w, out_h, out_w),
                Upsampling::Bilinear => resize_plane_bilinear(&norm, feat_h, feat_w, out_h, out_w),
            };
            ActivationMap {
                height: out_h,
                width: out_w,
                values,
                branch,
                degenerate: false,
            }
        }
        None => ActivationMap {
            height: out_h,
            width: out_w,
            values: vec![0.0; out_h * out_w],
            branch,
            degenerate: true,
        },
    }
}

/// CAM of `image` for class `label` on the chosen branch.
pub fn compute_cam(
    image: &Image,
    label: usize,
    model: &ModelState,
    branch: Branch,
    upsampling: Upsampling,
) -> Result<ActivationMap> {
    if label >= model.class_count() {
        return Err(Error::ShapeMismatch(format!(
            "label {label} but the classifier covers {} classes",
            model.class_count()
        )));
    }
    let feats = model.features(&image.to_tensor(), image.height, image.width, branch)?;
    Ok(cam_from_features(
        &feats.data,
        feats.channels,
        feats.height,
        feats.width,
        model.class_weights(label),
        image.height,
        image.width,
        branch,
        upsampling,
    ))
}

/// `mask(h, w) = cam(h, w) > tau`.
pub fn threshold_mask(cam: &ActivationMap, tau: f64) -> BinaryMask {
    BinaryMask::new(
        cam.height,
        cam.width,
        cam.values.iter().map(|&v| v > tau).collect(),
    )
}

/// Tightest box holding every set pixel.
pub fn mask_to_bbox(mask: &BinaryMask) -> Result<BBox> {
    let mut bbox: Option<BBox> = None;
    for h in 0..mask.height {
        let row = &mask.values[h * mask.width..(h + 1) * mask.width];
        let (Some(first), Some(last)) = (row.iter().position(|&v| v), row.iter().rposition(|&v| v)) else {
            continue;
        };
        bbox = Some(match bbox {
            None => BBox::new(h, first, h, last),
            Some(b) => BBox::new(b.h_min, b.w_min.min(first), h, b.w_max.max(last)),
        });
    }
    bbox.ok_or(Error::EmptyMask)
}

/// The box used for compression: falls back to the whole image when the map
/// is degenerate or nothing clears the threshold.
pub fn bbox_or_full(cam: &ActivationMap, tau: f64) -> BBox {
    if cam.degenerate {
        return BBox::full(cam.height, cam.width);
    }
    mask_to_bbox(&threshold_mask(cam, tau)).unwrap_or_else(|_| BBox::full(cam.height, cam.width))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cam2x2(features: &[f64], channels: usize, weights: &[f64]) -> ActivationMap {
        cam_from_features(features, channels, 2, 2, weights, 2, 2, Branch::Relu, Upsampling::Nearest)
    }

    fn close(a: &[f64], b: &[f64]) -> bool {
        a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-12)
    }

    #[test]
    fn single_channel_map() {
        let m = cam2x2(&[1.0, 2.0, 3.0, 4.0], 1, &[1.0]);
        assert!(close(&m.values, &[0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0]));
        let scaled = cam2x2(&[1.0, 2.0, 3.0, 4.0], 1, &[2.0]);
        assert!(close(&scaled.values, &m.values));
    }

    #[test]
    fn two_channel_weighted_sum() {
        // A = [[1,0],[0,3]] by summing 1·F0 + 3·F1 pixel by pixel.
        let f = [1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0];
        let m = cam2x2(&f, 2, &[1.0, 3.0]);
        assert!(close(&m.values, &[1.0 / 3.0, 0.0, 0.0, 1.0]));
    }

    #[test]
    fn constant_map_is_degenerate() {
        let m = cam2x2(&[5.0; 4], 1, &[1.0]);
        assert!(m.degenerate);
        assert!(m.values.iter().all(|&v| v == 0.0));
        assert_eq!(bbox_or_full(&m, 0.6), BBox::full(2, 2));
    }

    #[test]
    fn nearest_upsampling_repeats_cells() {
        let m = cam_from_features(&[0.0, 1.0], 1, 1, 2, &[1.0], 2, 4, Branch::Cim, Upsampling::Nearest);
        assert_eq!(m.values, vec![0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0, 1.0]);
        assert_eq!(m.branch, Branch::Cim);
    }

    #[test]
    fn threshold_examples() {
        let m = cam2x2(&[1.0, 2.0, 3.0, 4.0], 1, &[1.0]);
        assert_eq!(threshold_mask(&m, 0.6).values, vec![false, false, true, true]);
        assert_eq!(threshold_mask(&m, 0.999).values, vec![false, false, false, true]);
        // just below the smallest positive value
        assert_eq!(threshold_mask(&m, 1.0 / 3.0 - 1e-9).values, vec![false, true, true, true]);
        // ties at tau are excluded
        assert_eq!(threshold_mask(&m, 1.0).count(), 0);
    }

    #[test]
    fn bbox_examples() {
        let full = BinaryMask::new(3, 4, vec![true; 12]);
        assert_eq!(mask_to_bbox(&full).unwrap(), BBox::new(0, 0, 2, 3));

        let mut single = BinaryMask::new(5, 5, vec![false; 25]);
        single.values[2 * 5 + 3] = true;
        assert_eq!(mask_to_bbox(&single).unwrap(), BBox::new(2, 3, 2, 3));

        let mut pair = BinaryMask::new(8, 8, vec![false; 64]);
        pair.values[8 + 5] = true;
        pair.values[4 * 8 + 2] = true;
        assert_eq!(mask_to_bbox(&pair).unwrap(), BBox::new(1, 2, 4, 5));

        let empty = BinaryMask::new(2, 2, vec![false; 4]);
        assert!(matches!(mask_to_bbox(&empty), Err(Error::EmptyMask)));
    }

    #[test]
    fn bbox_interior_is_idempotent() {
        let b = BBox::new(2, 1, 5, 6);
        assert_eq!(mask_to_bbox(&BinaryMask::from_bbox(8, 8, &b)).unwrap(), b);
    }

    #[test]
    fn center_quarter_box() {
        let b = BBox::center_quarter(64, 64);
        assert_eq!(b, BBox::new(16, 16, 47, 47));
        assert_eq!(b.area() * 4, 64 * 64);
    }

    #[test]
    fn validate_rejects_out_of_range() {
        assert!(BBox::new(0, 0, 4, 4).validate(4, 5).is_err());
        assert!(BBox::new(3, 0, 2, 0).validate(4, 4).is_err());
        assert!(BBox::new(0, 0, 3, 3).validate(4, 4).is_ok());
    }
}
