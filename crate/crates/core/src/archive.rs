//! Binary exemplar records and the on-disk exemplar archive.
//!
//! Record layout (little-endian):
//!
//! ```text
//! "CIMX" | version u8 | label u32 | H u16 | W u16 | eta f32 | bbox 4×u16
//!        | crop bytes (HWC) | stored background cells (HWC, row-major)
//! ```
//!
//! A box of `0xFFFF` in all four slots means "no box" (everything
//! downsampled). The channel count is not stored; it is the payload length
//! divided by the number of stored pixel positions. Background cells whose
//! source pixel lies inside the box are omitted, since the crop holds them.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::cam::BBox;
use crate::compression::{memory_cost_for_area, CompressedExemplar};
use crate::error::{Error, Result};
use crate::image::downsampled_dims;
use crate::io::{read, sha256_hex, write_atomic};

pub const RECORD_MAGIC: &[u8; 4] = b"CIMX";
pub const RECORD_VERSION: u8 = 1;
const HEADER_LEN: usize = 4 + 1 + 4 + 2 + 2 + 4 + 8;
const NO_BOX: u16 = u16::MAX;
const MANIFEST_HEADER: &str = "cimx-manifest version=1";

fn dim_u16(v: usize, what: &str) -> Result<u16> {
    u16::try_from(v)
        .ok()
        .filter(|&x| x != NO_BOX)
        .ok_or_else(|| Error::ShapeMismatch(format!("{what} = {v} does not fit the record format")))
}

pub fn serialize_exemplar(ex: &CompressedExemplar) -> Result<Vec<u8>> {
    ex.check_shape()?;
    let label = u32::try_from(ex.label)
        .map_err(|_| Error::ShapeMismatch(format!("label {} too large", ex.label)))?;
    let c = ex.channels;
    let mut out = Vec::with_capacity(HEADER_LEN + ex.crop.len() + ex.background.len());
    out.extend_from_slice(RECORD_MAGIC);
    out.push(RECORD_VERSION);
    out.extend_from_slice(&label.to_le_bytes());
    out.extend_from_slice(&dim_u16(ex.height, "height")?.to_le_bytes());
    out.extend_from_slice(&dim_u16(ex.width, "width")?.to_le_bytes());
    out.extend_from_slice(&(ex.eta as f32).to_le_bytes());
    let bbox = match &ex.bbox {
        Some(b) => [
            dim_u16(b.h_min, "bbox")?,
            dim_u16(b.w_min, "bbox")?,
            dim_u16(b.h_max, "bbox")?,
            dim_u16(b.w_max, "bbox")?,
        ],
        None => [NO_BOX; 4],
    };
    for v in bbox {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&ex.crop);
    for i in 0..ex.bg_height {
        for j in 0..ex.bg_width {
            if ex.is_stored_cell(i, j) {
                let k = (i * ex.bg_width + j) * c;
                out.extend_from_slice(&ex.background[k..k + c]);
            }
        }
    }
    Ok(out)
}

fn u16_at(bytes: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([bytes[at], bytes[at + 1]])
}

pub fn deserialize_exemplar(bytes: &[u8]) -> Result<CompressedExemplar> {
    let corrupt = |msg: &str| Error::CorruptStore(msg.to_string());
    if bytes.len() < HEADER_LEN {
        return Err(corrupt("record shorter than its header"));
    }
    if &bytes[..4] != RECORD_MAGIC {
        return Err(corrupt("bad magic"));
    }
    if bytes[4] != RECORD_VERSION {
        return Err(Error::CorruptStore(format!(
            "unsupported record version {} (expected {RECORD_VERSION})",
            bytes[4]
        )));
    }
    let label = u32::from_le_bytes(bytes[5..9].try_into().unwrap()) as usize;
    let height = u16_at(bytes, 9) as usize;
    let width = u16_at(bytes, 11) as usize;
    let eta = f32::from_le_bytes(bytes[13..17].try_into().unwrap()) as f64;
    let raw_box: Vec<u16> = (0..4).map(|k| u16_at(bytes, 17 + 2 * k)).collect();
    if height == 0 || width == 0 {
        return Err(corrupt("zero image dimension"));
    }
    let bbox = if raw_box.iter().all(|&v| v == NO_BOX) {
        None
    } else {
        let b = BBox::new(
            raw_box[0] as usize,
            raw_box[1] as usize,
            raw_box[2] as usize,
            raw_box[3] as usize,
        );
        b.validate(height, width).map_err(|e| Error::CorruptStore(e.to_string()))?;
        Some(b)
    };
    let (bg_height, bg_width) =
        downsampled_dims(height, width, eta).map_err(|e| Error::CorruptStore(e.to_string()))?;
    let mut ex = CompressedExemplar {
        height,
        width,
        channels: 1,
        label,
        eta,
        bbox,
        crop: Vec::new(),
        bg_height,
        bg_width,
        background: Vec::new(),
        cost: memory_cost_for_area(bbox.map_or(0, |b| b.area()), height, width, eta)
            .map_err(|e| Error::CorruptStore(e.to_string()))?,
    };
    let positions = ex.bbox.map_or(0, |b| b.area()) + ex.stored_cell_count();
    let payload = &bytes[HEADER_LEN..];
    if positions == 0 || payload.is_empty() || payload.len() % positions != 0 {
        return Err(Error::CorruptStore(format!(
            "payload of {} bytes does not cover {positions} pixel positions",
            payload.len()
        )));
    }
    let c = payload.len() / positions;
    ex.channels = c;
    let crop_len = ex.bbox.map_or(0, |b| b.area()) * c;
    ex.crop = payload[..crop_len].to_vec();
    let mut cells = payload[crop_len..].chunks_exact(c);
    ex.background = vec![0; bg_height * bg_width * c];
    for i in 0..bg_height {
        for j in 0..bg_width {
            if ex.is_stored_cell(i, j) {
                let k = (i * bg_width + j) * c;
                ex.background[k..k + c].copy_from_slice(cells.next().expect("length checked"));
            }
        }
    }
    Ok(ex)
}

/// One exemplar as listed in the archive manifest.
#[derive(Clone, Debug, PartialEq)]
pub struct ArchiveEntry {
    pub id: u64,
    pub phase: usize,
    pub class: usize,
    pub exemplar: CompressedExemplar,
}

impl ArchiveEntry {
    pub fn record_bytes(&self) -> Result<Vec<u8>> {
        serialize_exemplar(&self.exemplar)
    }

    pub fn checksum(&self) -> Result<String> {
        Ok(sha256_hex(&self.record_bytes()?))
    }
}

fn record_path(id: u64) -> PathBuf {
    PathBuf::from("records").join(format!("{id:08}.cimx"))
}

/// Writes every record plus `manifest.txt` under `dir`; returns the manifest text.
pub fn write_archive(dir: &Path, entries: &[ArchiveEntry]) -> Result<String> {
    let mut manifest = String::from(MANIFEST_HEADER);
    manifest.push('\n');
    for e in entries {
        let bytes = e.record_bytes()?;
        let rel = record_path(e.id);
        write_atomic(&dir.join(&rel), &bytes)?;
        writeln!(
            manifest,
            "exemplar id={} phase={} class={} cost={} checksum={} file={}",
            e.id,
            e.phase,
            e.class,
            e.exemplar.cost,
            sha256_hex(&bytes),
            rel.display()
        )
        .unwrap();
    }
    write_atomic(&dir.join("manifest.txt"), manifest.as_bytes())?;
    Ok(manifest)
}

/// Reads an archive back, verifying every checksum.
pub fn read_archive(dir: &Path) -> Result<Vec<ArchiveEntry>> {
    let text = String::from_utf8(read(&dir.join("manifest.txt"))?)
        .map_err(|_| Error::CorruptStore("manifest is not UTF-8".into()))?;
    let mut lines = text.lines();
    if lines.next() != Some(MANIFEST_HEADER) {
        return Err(Error::CorruptStore("missing manifest header".into()));
    }
    let mut entries = Vec::new();
    for line in lines.filter(|l| !l.trim().is_empty()) {
        let mut fields = line.split_whitespace();
        if fields.next() != Some("exemplar") {
            return Err(Error::CorruptStore(format!("unexpected manifest line: {line}")));
        }
        let kv: std::collections::HashMap<&str, &str> =
            fields.filter_map(|f| f.split_once('=')).collect();
        let get = |k: &str| {
            kv.get(k)
                .copied()
                .ok_or_else(|| Error::CorruptStore(format!("manifest line lacks `{k}`: {line}")))
        };
        let num = |k: &str| -> Result<u64> {
            get(k)?
                .parse()
                .map_err(|_| Error::CorruptStore(format!("bad `{k}` in: {line}")))
        };
        let bytes = read(&dir.join(get("file")?))?;
        if sha256_hex(&bytes) != get("checksum")? {
            return Err(Error::CorruptStore(format!("checksum mismatch for {}", get("file")?)));
        }
        let exemplar = deserialize_exemplar(&bytes)?;
        entries.push(ArchiveEntry {
            id: num("id")?,
            phase: num("phase")? as usize,
            class: num("class")? as usize,
            exemplar,
        });
    }
    Ok(entries)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::compression::{compress, compress_region};
    use crate::image::Image;

    fn sample(bbox: Option<BBox>, channels: usize) -> CompressedExemplar {
        let pixels = (0..9 * 7 * channels).map(|i| (i * 13 % 256) as u8).collect();
        let img = Image::new(9, 7, channels, pixels, 42, "s").unwrap();
        compress_region(&img, bbox.as_ref(), 4.0).unwrap()
    }

    #[test]
    fn header_layout_is_fixed() {
        let ex = sample(Some(BBox::new(1, 2, 3, 4)), 3);
        let bytes = serialize_exemplar(&ex).unwrap();
        assert_eq!(&bytes[..4], b"CIMX");
        assert_eq!(bytes[4], 1);
        assert_eq!(&bytes[5..9], &42u32.to_le_bytes());
        assert_eq!(&bytes[9..11], &9u16.to_le_bytes());
        assert_eq!(&bytes[11..13], &7u16.to_le_bytes());
        assert_eq!(&bytes[13..17], &4.0f32.to_le_bytes());
        // the bbox takes exactly eight bytes
        let bbox_bytes: Vec<u8> = [1u16, 2, 3, 4].iter().flat_map(|v| v.to_le_bytes()).collect();
        assert_eq!(&bytes[17..25], bbox_bytes.as_slice());
        assert_eq!(bytes.len(), 25 + ex.stored_pixels() * 3);
    }

    #[test]
    fn round_trips_with_and_without_box() {
        for bbox in [Some(BBox::new(0, 0, 8, 6)), Some(BBox::new(2, 1, 5, 3)), None] {
            for c in [1, 3] {
                let ex = sample(bbox, c);
                assert_eq!(deserialize_exemplar(&serialize_exemplar(&ex).unwrap()).unwrap(), ex);
            }
        }
    }

    #[test]
    fn rejects_bad_magic_version_and_length() {
        let bytes = serialize_exemplar(&sample(Some(BBox::new(2, 1, 5, 3)), 3)).unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(deserialize_exemplar(&bad), Err(Error::CorruptStore(_))));
        let mut bad = bytes.clone();
        bad[4] = 2;
        assert!(matches!(deserialize_exemplar(&bad), Err(Error::CorruptStore(_))));
        assert!(matches!(deserialize_exemplar(&bytes[..bytes.len() - 1]), Err(Error::CorruptStore(_))));
        assert!(matches!(deserialize_exemplar(&bytes[..10]), Err(Error::CorruptStore(_))));
    }

    #[test]
    fn archive_round_trip_and_checksum() {
        let dir = tempfile::tempdir().unwrap();
        let img = Image::new(4, 4, 3, (0..48).collect(), 3, "a").unwrap();
        let entries = vec![
            ArchiveEntry { id: 1, phase: 1, class: 3, exemplar: compress(&img, &BBox::new(0, 0, 1, 1), 4.0).unwrap() },
            ArchiveEntry { id: 2, phase: 2, class: 3, exemplar: compress(&img, &BBox::full(4, 4), 4.0).unwrap() },
        ];
        let manifest = write_archive(dir.path(), &entries).unwrap();
        assert!(manifest.contains("phase=1 class=3 cost=0.4375"));
        assert_eq!(read_archive(dir.path()).unwrap(), entries);

        let rec = dir.path().join("records/00000001.cimx");
        let mut bytes = std::fs::read(&rec).unwrap();
        *bytes.last_mut().unwrap() ^= 1;
        std::fs::write(&rec, bytes).unwrap();
        assert!(matches!(read_archive(dir.path()), Err(Error::CorruptStore(_))));
    }
}
