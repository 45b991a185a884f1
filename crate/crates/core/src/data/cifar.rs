//! CIFAR-10 binary batches: records of one label byte followed by 1024 red,
//! 1024 green and 1024 blue bytes, each plane row-major over 32x32.

use std::path::Path;

use super::{Dataset, Item, Origin};
use crate::error::{Error, Result};
use crate::image::Image;

const SIDE: usize = 32;
const PLANE: usize = SIDE * SIDE;
pub const CIFAR_RECORD_BYTES: usize = 1 + 3 * PLANE;
const RECORDS_PER_FILE: usize = 10_000;

pub const CIFAR_FILES: [&str; 6] = [
    "data_batch_1.bin",
    "data_batch_2.bin",
    "data_batch_3.bin",
    "data_batch_4.bin",
    "data_batch_5.bin",
    "test_batch.bin",
];

fn decode_record(record: &[u8]) -> (u32, Image) {
    let mut pixels = Vec::with_capacity(3 * PLANE);
    for p in 0..PLANE {
        for ch in 0..3 {
            pixels.push(record[1 + ch * PLANE + p] as f32 / 255.0);
        }
    }
    (record[0] as u32, Image::new(SIDE, 3, pixels).expect("cifar image"))
}

/// Decodes every record of one batch file; `first_id` numbers them.
pub fn read_batch_file(path: &Path, first_id: u64, origin: Origin) -> Result<Vec<Item>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.is_empty() || bytes.len() % CIFAR_RECORD_BYTES != 0 {
        return Err(Error::format(
            path.display().to_string(),
            format!("{} bytes is not a whole number of {CIFAR_RECORD_BYTES}-byte records", bytes.len()),
        ));
    }
    bytes
        .chunks_exact(CIFAR_RECORD_BYTES)
        .enumerate()
        .map(|(i, rec)| {
            let (label, image) = decode_record(rec);
            if label >= 10 {
                return Err(Error::format(path.display().to_string(), format!("record {i} has label {label}")));
            }
            Ok(Item {
                id: first_id + i as u64,
                image,
                labels: vec![label],
                origin,
            })
        })
        .collect()
}

/// Loads the five training batches and the test batch from `dir`.
pub fn load_cifar10(dir: &Path) -> Result<Dataset> {
    if !dir.is_dir() {
        return Err(Error::MissingFiles(vec![dir.to_path_buf()]));
    }
    let paths: Vec<_> = CIFAR_FILES.iter().map(|f| dir.join(f)).collect();
    let missing: Vec<_> = paths.iter().filter(|p| !p.is_file()).cloned().collect();
    if !missing.is_empty() {
        return Err(Error::MissingFiles(missing));
    }
    for p in &paths {
        let len = std::fs::metadata(p).map_err(|e| Error::io(p, e))?.len() as usize;
        if len != RECORDS_PER_FILE * CIFAR_RECORD_BYTES {
            return Err(Error::format(
                p.display().to_string(),
                format!("expected {} bytes, found {len}", RECORDS_PER_FILE * CIFAR_RECORD_BYTES),
            ));
        }
    }
    let mut items = Vec::with_capacity(6 * RECORDS_PER_FILE);
    for (i, p) in paths.iter().enumerate() {
        let origin = if i < 5 { Origin::Train } else { Origin::Test };
        items.extend(read_batch_file(p, (i * RECORDS_PER_FILE) as u64, origin)?);
    }
    Dataset::new(items, 10)
}
