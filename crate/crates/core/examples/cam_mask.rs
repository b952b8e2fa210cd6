//! Class activation map of a synthetic image on both branches, thresholded
//! into a mask and reduced to a bounding box.

use cimcil::cam::{bbox_or_full, compute_cam, threshold_mask, Upsampling};
use cimcil::harness::{synthetic_dataset, SyntheticSpec};
use cimcil::{ActivationMap, Architecture, Branch, ModelState};

fn ascii(cam: &ActivationMap, tau: f64) {
    let mask = threshold_mask(cam, tau);
    for h in (0..cam.height).step_by(2) {
        let row: String = (0..cam.width)
            .step_by(2)
            .map(|w| match (mask.get(h, w), cam.get(h, w)) {
                (true, _) => '#',
                (false, v) if v > tau / 2.0 => '+',
                _ => '.',
            })
            .collect();
        println!("  {row}");
    }
}

fn main() -> cimcil::Result<()> {
    let ds = synthetic_dataset(&SyntheticSpec {
        classes: 2,
        train_per_class: 1,
        test_per_class: 1,
        size: 32,
        ..SyntheticSpec::default()
    })?;
    let image = &ds.train[0];
    let arch = Architecture::desk(32, 32);
    let model = ModelState::new(arch, 3)?.expand_classifier(2, 3);

    let tau = 0.6;
    for branch in [Branch::Relu, Branch::Cim] {
        let cam = compute_cam(image, image.label, &model, branch, Upsampling::Nearest)?;
        let bbox = bbox_or_full(&cam, tau);
        println!(
            "{branch:?}: degenerate={} mask pixels={} bbox={bbox:?} area={}/{}",
            cam.degenerate,
            threshold_mask(&cam, tau).count(),
            bbox.area(),
            cam.height * cam.width
        );
        ascii(&cam, tau);
    }
    Ok(())
}
