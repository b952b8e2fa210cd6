//! Dataset ingestion from a directory-per-class layout, PNG helpers, and a
//! seeded synthetic dataset.
//!
//! ```text
//! root/train/<class>/<file>.png
//! root/test/<class>/<file>.png
//! ```
//!
//! Classes are numbered by sorted directory name, files are read in sorted
//! order.

use std::fs;
use std::io::Cursor;
use std::path::{Path, PathBuf};

use image::imageops::FilterType;
use image::{ExtendedColorType, ImageEncoder};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::image::Image;
use crate::io::write_atomic;

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub class_names: Vec<String>,
    pub train: Vec<Image>,
    pub test: Vec<Image>,
    pub height: usize,
    pub width: usize,
}

impl Dataset {
    pub fn class_count(&self) -> usize {
        self.class_names.len()
    }
}

fn dataset_error(path: &Path, reason: impl Into<String>) -> Error {
    Error::Dataset {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

fn sorted_entries(dir: &Path, want_dirs: bool) -> Result<Vec<PathBuf>> {
    let rd = fs::read_dir(dir).map_err(|e| dataset_error(dir, e.to_string()))?;
    let mut out = Vec::new();
    for entry in rd {
        let entry = entry.map_err(|e| dataset_error(dir, e.to_string()))?;
        let path = entry.path();
        if path.is_dir() == want_dirs {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

/// Decodes one image file to RGB, resized to `height × width`.
pub fn load_image(path: &Path, height: usize, width: usize, label: usize) -> Result<Image> {
    let decoded = image::open(path).map_err(|e| dataset_error(path, e.to_string()))?;
    let mut rgb = decoded.to_rgb8();
    if rgb.height() as usize != height || rgb.width() as usize != width {
        rgb = image::imageops::resize(&rgb, width as u32, height as u32, FilterType::Triangle);
    }
    Image::new(height, width, 3, rgb.into_raw(), label, path.display().to_string())
}

fn ingest_split(dir: &Path, classes: &[String], height: usize, width: usize) -> Result<Vec<Image>> {
    let mut out = Vec::new();
    for (label, name) in classes.iter().enumerate() {
        let class_dir = dir.join(name);
        if !class_dir.is_dir() {
            return Err(dataset_error(&class_dir, "class directory missing"));
        }
        let files = sorted_entries(&class_dir, false)?;
        if files.is_empty() {
            return Err(dataset_error(&class_dir, "class has no images"));
        }
        for f in files {
            out.push(load_image(&f, height, width, label)?);
        }
    }
    Ok(out)
}

/// Reads `root/train` and `root/test`. Both splits must list the same classes.
pub fn ingest_dataset(root: &Path, height: usize, width: usize) -> Result<Dataset> {
    let train_dir = root.join("train");
    let test_dir = root.join("test");
    let names = |dir: &Path| -> Result<Vec<String>> {
        Ok(sorted_entries(dir, true)?
            .iter()
            .filter_map(|p| p.file_name().map(|n| n.to_string_lossy().into_owned()))
            .collect())
    };
    let class_names = names(&train_dir)?;
    if class_names.is_empty() {
        return Err(dataset_error(&train_dir, "no class directories"));
    }
    if names(&test_dir)? != class_names {
        return Err(dataset_error(&test_dir, "test classes differ from train classes"));
    }
    Ok(Dataset {
        train: ingest_split(&train_dir, &class_names, height, width)?,
        test: ingest_split(&test_dir, &class_names, height, width)?,
        class_names,
        height,
        width,
    })
}

/// PNG bytes of an 8-bit grey or RGB image.
pub fn encode_png(im: &Image) -> Result<Vec<u8>> {
    let color = match im.channels {
        1 => ExtendedColorType::L8,
        3 => ExtendedColorType::Rgb8,
        c => return Err(Error::ShapeMismatch(format!("cannot encode {c}-channel image as PNG"))),
    };
    let mut buf = Vec::new();
    image::codecs::png::PngEncoder::new(Cursor::new(&mut buf))
        .write_image(&im.pixels, im.width as u32, im.height as u32, color)
        .map_err(|e| Error::ShapeMismatch(e.to_string()))?;
    Ok(buf)
}

/// Writes the dataset back out in the layout [`ingest_dataset`] reads.
pub fn write_dataset(ds: &Dataset, root: &Path) -> Result<()> {
    for (split, images) in [("train", &ds.train), ("test", &ds.test)] {
        let mut counters = vec![0usize; ds.class_count()];
        for im in images {
            let n = counters[im.label];
            counters[im.label] += 1;
            let path = root
                .join(split)
                .join(&ds.class_names[im.label])
                .join(format!("{n:05}.png"));
            write_atomic(&path, &encode_png(im)?)?;
        }
    }
    Ok(())
}

/// Parameters of [`synthetic_dataset`].
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSpec {
    /// At most 10: five shapes in two colour families.
    pub classes: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub size: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            classes: 10,
            train_per_class: 150,
            test_per_class: 30,
            size: 64,
            seed: 7,
        }
    }
}

const SHAPES: [&str; 5] = ["disc", "square", "triangle", "cross", "ring"];
const FAMILIES: [&str; 2] = ["warm", "cool"];

fn inside_shape(shape: usize, dy: f64, dx: f64, r: f64) -> bool {
    match shape {
        0 => dy * dy + dx * dx <= r * r,
        1 => dy.abs() <= r * 0.85 && dx.abs() <= r * 0.85,
        2 => dy >= -r && dy <= r && dx.abs() <= (dy + r) * 0.5,
        3 => (dy.abs() <= r * 0.3 && dx.abs() <= r) || (dx.abs() <= r * 0.3 && dy.abs() <= r),
        _ => {
            let d = (dy * dy + dx * dx).sqrt();
            d <= r && d >= r * 0.55
        }
    }
}

fn object_colour(family: usize, rng: &mut ChaCha8Rng) -> [f64; 3] {
    let j = |rng: &mut ChaCha8Rng| rng.random_range(-25.0..25.0);
    match family {
        0 => [225.0 + j(rng) * 0.5, 90.0 + j(rng), 40.0 + j(rng)],
        _ => [40.0 + j(rng), 120.0 + j(rng), 225.0 + j(rng) * 0.5],
    }
}

fn synthetic_image(class: usize, size: usize, rng: &mut ChaCha8Rng) -> Image {
    let s = size as f64;
    // smooth background: a few low-frequency waves per channel plus grain
    let mut waves = Vec::new();
    for _ in 0..3 {
        waves.push((
            rng.random_range(0.5..2.5) / s,
            rng.random_range(0.5..2.5) / s,
            rng.random_range(0.0..std::f64::consts::TAU),
            [rng.random_range(-35.0..35.0), rng.random_range(-35.0..35.0), rng.random_range(-35.0..35.0)],
        ));
    }
    let base: [f64; 3] = std::array::from_fn(|_| rng.random_range(95.0..160.0));
    let mut px = vec![[0.0f64; 3]; size * size];
    for y in 0..size {
        for x in 0..size {
            let mut v = base;
            for (fy, fx, ph, amp) in &waves {
                let t = (std::f64::consts::TAU * (fy * y as f64 + fx * x as f64) + ph).sin();
                for c in 0..3 {
                    v[c] += amp[c] * t;
                }
            }
            px[y * size + x] = v;
        }
    }
    // class-independent distractors
    for _ in 0..rng.random_range(1..=2) {
        let r = rng.random_range(2.0..5.0);
        let (cy, cx) = (rng.random_range(0.0..s), rng.random_range(0.0..s));
        let col: [f64; 3] = std::array::from_fn(|_| rng.random_range(40.0..220.0));
        for y in 0..size {
            for x in 0..size {
                let (dy, dx) = (y as f64 - cy, x as f64 - cx);
                if dy * dy + dx * dx <= r * r {
                    px[y * size + x] = col;
                }
            }
        }
    }
    let (shape, family) = (class % SHAPES.len(), class / SHAPES.len());
    let extent = rng.random_range(14.0..=22.0) * s / 64.0;
    let r = extent / 2.0;
    let cy = rng.random_range(r + 1.0..s - r - 1.0);
    let cx = rng.random_range(r + 1.0..s - r - 1.0);
    let col = object_colour(family, rng);
    for y in 0..size {
        for x in 0..size {
            if inside_shape(shape, y as f64 + 0.5 - cy, x as f64 + 0.5 - cx, r) {
                px[y * size + x] = col;
            }
        }
    }
    let mut pixels = Vec::with_capacity(size * size * 3);
    for v in px {
        for c in v {
            pixels.push((c + rng.random_range(-8.0..8.0)).round().clamp(0.0, 255.0) as u8);
        }
    }
    Image {
        height: size,
        width: size,
        channels: 3,
        pixels,
        label: class,
        source_id: String::new(),
    }
}

/// Coloured shapes on smooth, cluttered backgrounds. Only the object carries
/// the class; its size is 14–22 px at 64 px and scales with `size`.
pub fn synthetic_dataset(spec: &SyntheticSpec) -> Result<Dataset> {
    if spec.classes == 0 || spec.classes > SHAPES.len() * FAMILIES.len() {
        return Err(Error::Config(format!("synthetic classes must be in 1..=10, got {}", spec.classes)));
    }
    if spec.size < 16 {
        return Err(Error::Config("synthetic images need at least 16 px".into()));
    }
    let class_names = (0..spec.classes)
        .map(|c| format!("{}-{}", FAMILIES[c / SHAPES.len()], SHAPES[c % SHAPES.len()]))
        .collect();
    let split = |which: u64, per_class: usize| {
        let mut out = Vec::with_capacity(spec.classes * per_class);
        for class in 0..spec.classes {
            for i in 0..per_class {
                let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
                rng.set_stream((which << 48) | ((class as u64) << 24) | i as u64);
                let mut im = synthetic_image(class, spec.size, &mut rng);
                im.source_id = format!("synthetic/{}/{class}/{i}", if which == 0 { "train" } else { "test" });
                out.push(im);
            }
        }
        out
    };
    Ok(Dataset {
        train: split(0, spec.train_per_class),
        test: split(1, spec.test_per_class),
        class_names,
        height: spec.size,
        width: spec.size,
    })
}
