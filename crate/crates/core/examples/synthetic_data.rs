//! Generates the built-in shape dataset and writes a few classes as PNG folders.
//!
//! cargo run --example synthetic_data -- [out_dir]

use cimcil::harness::{ingest_dataset, synthetic_dataset, write_dataset, SyntheticSpec};

fn main() -> cimcil::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "synthetic-data".into());
    let spec = SyntheticSpec {
        classes: 4,
        train_per_class: 6,
        test_per_class: 2,
        size: 48,
        ..SyntheticSpec::default()
    };
    let ds = synthetic_dataset(&spec)?;
    println!("classes: {}", ds.class_names.join(", "));
    println!("{} train / {} test images at {}x{}", ds.train.len(), ds.test.len(), ds.height, ds.width);

    write_dataset(&ds, out.as_ref())?;
    let back = ingest_dataset(out.as_ref(), ds.height, ds.width)?;
    // class folders are read back in name order, so compare per class
    let pixels = |d: &cimcil::harness::Dataset, name: &str| -> Vec<Vec<u8>> {
        let label = d.class_names.iter().position(|n| n == name).unwrap();
        d.train.iter().filter(|im| im.label == label).map(|im| im.pixels.clone()).collect()
    };
    let same = ds.class_names.iter().all(|n| pixels(&ds, n) == pixels(&back, n));
    println!("wrote {out}/, read back {} train images, pixels identical: {same}", back.train.len());
    Ok(())
}
