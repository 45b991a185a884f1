//! The `VTSD` dataset container.
//!
//! ```text
//! magic "VTSD" | version u32 = 1 | classes u32 | size u32 | channels u32 | M u64
//! per item: id u64 | origin u8 | label_count u16 | labels u32 * n | pixels f32 * size*size*channels
//! has_splits u8 | if 1: three blocks of (count u64, indices u64 * count) for train, query, database
//! protocol_len u16 | protocol name, UTF-8 (empty when unsplit)
//! ```

use std::path::Path;

use super::{Dataset, Item, Origin, Splits};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::weights::Reader;

pub const DATASET_MAGIC: &[u8; 4] = b"VTSD";
pub const DATASET_VERSION: u32 = 1;

pub fn encode_dataset(d: &Dataset) -> Result<Vec<u8>> {
    let (size, channels) = d.items.first().map_or((0, 0), |i| (i.image.size(), i.image.channels()));
    let mut out = Vec::new();
    out.extend_from_slice(DATASET_MAGIC);
    out.extend_from_slice(&DATASET_VERSION.to_le_bytes());
    for v in [d.num_classes, size, channels] {
        let v = u32::try_from(v).map_err(|_| Error::Contract("dataset dimension exceeds u32".into()))?;
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&(d.items.len() as u64).to_le_bytes());
    for item in &d.items {
        out.extend_from_slice(&item.id.to_le_bytes());
        out.push(match item.origin {
            Origin::Train => 0,
            Origin::Test => 1,
        });
        out.extend_from_slice(&(item.labels.len() as u16).to_le_bytes());
        item.labels.iter().for_each(|l| out.extend_from_slice(&l.to_le_bytes()));
        item.image.pixels().iter().for_each(|p| out.extend_from_slice(&p.to_le_bytes()));
    }
    match &d.splits {
        None => out.push(0),
        Some(s) => {
            out.push(1);
            for part in [&s.train, &s.query, &s.database] {
                out.extend_from_slice(&(part.len() as u64).to_le_bytes());
                part.iter().for_each(|&i| out.extend_from_slice(&(i as u64).to_le_bytes()));
            }
        }
    }
    let name = d.protocol.as_deref().unwrap_or("").as_bytes();
    let len = u16::try_from(name.len()).map_err(|_| Error::Contract("protocol name too long".into()))?;
    out.extend_from_slice(&len.to_le_bytes());
    out.extend_from_slice(name);
    Ok(out)
}

pub fn decode_dataset(bytes: &[u8], label: &str) -> Result<Dataset> {
    let mut r = Reader::new(bytes, label);
    r.magic(DATASET_MAGIC, DATASET_VERSION)?;
    let classes = r.u32()? as usize;
    let size = r.u32()? as usize;
    let channels = r.u32()? as usize;
    let m = r.u64()? as usize;
    let mut items = Vec::with_capacity(m.min(bytes.len()));
    for _ in 0..m {
        let id = r.u64()?;
        let origin = match r.u8()? {
            0 => Origin::Train,
            1 => Origin::Test,
            o => return Err(Error::format(label, format!("item {id}: bad origin tag {o}"))),
        };
        let n = r.u16()? as usize;
        let labels = (0..n).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        let image = Image::new(size, channels, r.f32s(size * size * channels)?)
            .map_err(|e| Error::format(label, format!("item {id}: {e}")))?;
        items.push(Item { id, image, labels, origin });
    }
    let splits = match r.u8()? {
        0 => None,
        1 => {
            let mut parts = Vec::with_capacity(3);
            for _ in 0..3 {
                let count = r.u64()? as usize;
                let idx = (0..count).map(|_| r.u64().map(|v| v as usize)).collect::<Result<Vec<_>>>()?;
                if let Some(&bad) = idx.iter().find(|&&i| i >= m) {
                    return Err(Error::format(label, format!("split index {bad} out of range")));
                }
                parts.push(idx);
            }
            let database = parts.pop().unwrap();
            let query = parts.pop().unwrap();
            let train = parts.pop().unwrap();
            Some(Splits { train, query, database })
        }
        t => return Err(Error::format(label, format!("bad split flag {t}"))),
    };
    let len = r.u16()? as usize;
    let name = std::str::from_utf8(r.take(len)?)
        .map_err(|_| Error::format(label, "protocol name is not UTF-8"))?
        .to_string();
    r.finish()?;
    let mut d = Dataset::new(items, classes).map_err(|e| Error::format(label, e.to_string()))?;
    d.splits = splits;
    d.protocol = (!name.is_empty()).then_some(name);
    Ok(d)
}

pub fn write_dataset(path: &Path, d: &Dataset) -> Result<()> {
    std::fs::write(path, encode_dataset(d)?).map_err(|e| Error::io(path, e))
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_dataset(&bytes, &path.display().to_string())
}
