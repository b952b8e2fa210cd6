//! Visual inspection of what a checkpoint would store for one image.

use std::path::Path;

use serde::Serialize;

use super::dataset::{encode_png, load_image};
use crate::cam::{bbox_or_full, compute_cam, BBox, Upsampling};
use crate::compression::{compress, reconstruct};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::io::write_atomic;
use crate::model::checkpoint::Checkpoint;
use crate::Branch;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PreviewReport {
    /// Classifier row whose CAM was used.
    pub class_index: usize,
    /// Dataset class id of that row.
    pub class_id: usize,
    pub degenerate: bool,
    pub bbox: BBox,
    pub cost: f64,
}

fn outline(image: &Image, b: &BBox) -> Image {
    let mut out = image.clone();
    let colour: &[u8] = if image.channels == 3 { &[255, 0, 0] } else { &[255] };
    for h in b.h_min..=b.h_max {
        for w in b.w_min..=b.w_max {
            if h == b.h_min || h == b.h_max || w == b.w_min || w == b.w_max {
                out.pixel_mut(h, w).copy_from_slice(colour);
            }
        }
    }
    out
}

/// Writes `original.png`, `soft_mask.png`, `bbox_overlay.png` and
/// `compressed.png` under `out`. Without `class_index` the predicted class
/// is used.
pub fn compress_preview(
    image_path: &Path,
    ckpt: &Checkpoint,
    tau: f64,
    eta: f64,
    class_index: Option<usize>,
    out: &Path,
) -> Result<PreviewReport> {
    let state = &ckpt.state;
    let image = load_image(image_path, state.arch.height, state.arch.width, 0)?;
    let label = match class_index {
        Some(c) if c < state.class_count() => c,
        Some(c) => {
            return Err(Error::Config(format!(
                "class index {c} but the checkpoint has {} classes",
                state.class_count()
            )))
        }
        None => state.predict(&image.to_tensor())?,
    };
    let image = Image { label, ..image };
    let cam = compute_cam(&image, label, state, Branch::Cim, Upsampling::Nearest)?;
    let bbox = bbox_or_full(&cam, tau);
    let ex = compress(&image, &bbox, eta)?;
    let mask = Image::new(
        cam.height,
        cam.width,
        1,
        cam.values.iter().map(|v| (v * 255.0).round() as u8).collect(),
        label,
        "soft-mask",
    )?;
    write_atomic(&out.join("original.png"), &encode_png(&image)?)?;
    write_atomic(&out.join("soft_mask.png"), &encode_png(&mask)?)?;
    write_atomic(&out.join("bbox_overlay.png"), &encode_png(&outline(&image, &bbox))?)?;
    write_atomic(&out.join("compressed.png"), &encode_png(&reconstruct(&ex)?)?)?;
    Ok(PreviewReport {
        class_index: label,
        class_id: ckpt.class_order.get(label).copied().unwrap_or(label),
        degenerate: cam.degenerate,
        bbox,
        cost: ex.cost,
    })
}
