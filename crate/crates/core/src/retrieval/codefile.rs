//! The `VTSC` code-set file.
//!
//! ```text
//! magic "VTSC" | version u32 = 1 | M u64 | K u32
//! per item: id u64 | label_count u16 | labels u32 * label_count | ceil(K/64) u64 words
//! ```

use std::path::Path;

use super::{words_for, BinaryCode, BinaryCodeSet};
use crate::error::{Error, Result};
use crate::weights::Reader;

pub const CODES_MAGIC: &[u8; 4] = b"VTSC";
pub const CODES_VERSION: u32 = 1;

pub fn encode_code_set(set: &BinaryCodeSet) -> Result<Vec<u8>> {
    let bits = u32::try_from(set.bits()).map_err(|_| Error::Contract("code length exceeds u32".into()))?;
    let mut out = Vec::with_capacity(20 + set.len() * (10 + 8 * set.words_per_code()));
    out.extend_from_slice(CODES_MAGIC);
    out.extend_from_slice(&CODES_VERSION.to_le_bytes());
    out.extend_from_slice(&(set.len() as u64).to_le_bytes());
    out.extend_from_slice(&bits.to_le_bytes());
    for i in 0..set.len() {
        out.extend_from_slice(&set.id(i).to_le_bytes());
        let labels = set.labels(i);
        let n = u16::try_from(labels.len()).map_err(|_| Error::Contract(format!("item {} has too many labels", set.id(i))))?;
        out.extend_from_slice(&n.to_le_bytes());
        for l in labels {
            out.extend_from_slice(&l.to_le_bytes());
        }
        for w in set.code_words(i) {
            out.extend_from_slice(&w.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_code_set(bytes: &[u8], label: &str) -> Result<BinaryCodeSet> {
    let mut r = Reader::new(bytes, label);
    r.magic(CODES_MAGIC, CODES_VERSION)?;
    let m = r.u64()?;
    let bits = r.u32()? as usize;
    let words = words_for(bits);
    let mut set = BinaryCodeSet::new(bits);
    for item in 0..m {
        let id = r.u64()?;
        let n = r.u16()? as usize;
        let labels = (0..n).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        let w = (0..words).map(|_| r.u64()).collect::<Result<Vec<_>>>()?;
        let code = BinaryCode::from_words(bits, w)
            .map_err(|e| Error::format(label, format!("item {item}: {e}")))?;
        set.push(id, &labels, &code)?;
    }
    r.finish()?;
    Ok(set)
}

pub fn write_code_set(path: &Path, set: &BinaryCodeSet) -> Result<()> {
    std::fs::write(path, encode_code_set(set)?).map_err(|e| Error::io(path, e))
}

pub fn read_code_set(path: &Path) -> Result<BinaryCodeSet> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_code_set(&bytes, &path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn arb_set() -> impl Strategy<Value = BinaryCodeSet> {
        (1usize..130).prop_flat_map(|bits| {
            prop::collection::vec(
                (any::<u64>(), prop::collection::vec(0u32..50, 0..4), prop::collection::vec(any::<bool>(), bits)),
                0..12,
            )
            .prop_map(move |items| {
                let mut set = BinaryCodeSet::new(bits);
                for (id, labels, code) in items {
                    set.push(id, &labels, &BinaryCode::from_bits(code)).unwrap();
                }
                set
            })
        })
    }

    proptest! {
        #[test]
        fn round_trip(set in arb_set()) {
            let bytes = encode_code_set(&set).unwrap();
            prop_assert_eq!(decode_code_set(&bytes, "mem").unwrap(), set);
        }
    }

    #[test]
    fn corrupted_files_are_rejected() {
        let mut set = BinaryCodeSet::new(16);
        set.push(9, &[1, 2], &BinaryCode::parse("1011001110001111").unwrap()).unwrap();
        let bytes = encode_code_set(&set).unwrap();
        assert_eq!(&bytes[..4], b"VTSC");
        let err = decode_code_set(&bytes[..bytes.len() - 3], "q.vtsc").unwrap_err();
        assert!(err.to_string().contains("q.vtsc") && err.to_string().contains("truncated"));
        let mut bad = bytes.clone();
        *bad.last_mut().unwrap() = 0xff;
        assert!(decode_code_set(&bad, "q.vtsc").unwrap_err().to_string().contains("padding"));
        let mut bad = bytes;
        bad[..4].copy_from_slice(b"VTSW");
        assert!(decode_code_set(&bad, "q.vtsc").unwrap_err().to_string().contains("magic"));
    }
}
