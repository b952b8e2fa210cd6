//! Compresses one image around a box, reconstructs it and round-trips the
//! record through an on-disk archive.
//!
//! cargo run --example compress_archive -- [out_dir]

use cimcil::archive::{read_archive, write_archive, ArchiveEntry};
use cimcil::compression::{compress, memory_cost, reconstruct};
use cimcil::harness::{synthetic_dataset, SyntheticSpec};
use cimcil::BBox;

fn main() -> cimcil::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "archive-demo".into());
    let ds = synthetic_dataset(&SyntheticSpec {
        classes: 1,
        train_per_class: 1,
        test_per_class: 1,
        ..SyntheticSpec::default()
    })?;
    let image = &ds.train[0];
    let (h, w) = (image.height, image.width);
    let bbox = BBox::new(h / 4, w / 4, 3 * h / 4 - 1, 3 * w / 4 - 1);

    println!("eta   cost    stored/HW  max |err| outside box");
    for eta in [1.0, 2.0, 4.0, 9.0, 16.0] {
        let ex = compress(image, &bbox, eta)?;
        let rec = reconstruct(&ex)?;
        let mut err = 0u8;
        for y in 0..h {
            for x in 0..w {
                let (a, b) = (image.pixel(y, x), rec.pixel(y, x));
                if bbox.contains(y, x) {
                    assert_eq!(a, b);
                } else {
                    err = err.max(a.iter().zip(b).map(|(p, q)| p.abs_diff(*q)).max().unwrap());
                }
            }
        }
        println!(
            "{eta:<5} {:.4}  {:.4}     {err}",
            memory_cost(&bbox, h, w, eta)?,
            ex.stored_pixels() as f64 / (h * w) as f64
        );
    }

    let entries: Vec<ArchiveEntry> = [2.0, 4.0]
        .iter()
        .enumerate()
        .map(|(i, &eta)| {
            Ok(ArchiveEntry {
                id: i as u64,
                phase: 1,
                class: 0,
                exemplar: compress(image, &bbox, eta)?,
            })
        })
        .collect::<cimcil::Result<_>>()?;
    let manifest = write_archive(out.as_ref(), &entries)?;
    print!("{manifest}");
    assert_eq!(read_archive(out.as_ref())?, entries);
    println!("archive at {out}/ verified");
    Ok(())
}
