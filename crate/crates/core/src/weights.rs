//! The `VTSW` weight container.
//!
//! Little-endian layout:
//!
//! ```text
//! magic "VTSW" | version u32 = 1 | tensor_count u32
//! per tensor: name_len u16 | name (UTF-8) | rank u8 | dims u32 * rank | data f32 * prod(dims)
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

pub const WEIGHTS_MAGIC: &[u8; 4] = b"VTSW";
pub const WEIGHTS_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl NamedTensor {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, data: Vec<f32>) -> Self {
        Self {
            name: name.into(),
            shape,
            data,
        }
    }

    pub fn from_tensor<T: Real>(name: &str, t: &Tensor<T>) -> Self {
        Self::new(name, t.shape().to_vec(), t.to_f32_vec())
    }

    pub fn from_values<T: Real>(name: &str, shape: &[usize], values: &[T]) -> Self {
        Self::new(name, shape.to_vec(), values.iter().map(|v| v.as_f64() as f32).collect())
    }

    pub fn to_param<T: Real>(&self) -> Result<Tensor<T>> {
        Tensor::param(&self.shape, self.values())
    }

    pub fn values<T: Real>(&self) -> Vec<T> {
        self.data.iter().map(|&v| T::lit(v as f64)).collect()
    }
}

/// Cursor that turns short reads into format errors naming the file.
pub(crate) struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    label: &'a str,
}

impl<'a> Reader<'a> {
    pub fn new(bytes: &'a [u8], label: &'a str) -> Self {
        Self { bytes, pos: 0, label }
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::format(
                self.label,
                format!("truncated: needed {n} bytes at offset {}, file has {}", self.pos, self.bytes.len()),
            )
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let raw = self.take(n.checked_mul(4).ok_or_else(|| Error::format(self.label, "size overflow"))?)?;
        Ok(raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
    }

    pub fn magic(&mut self, magic: &[u8; 4], version: u32) -> Result<()> {
        let m = self.take(4)?;
        if m != magic {
            return Err(Error::format(
                self.label,
                format!("bad magic {:?}, expected {:?}", String::from_utf8_lossy(m), String::from_utf8_lossy(magic)),
            ));
        }
        let v = self.u32()?;
        if v != version {
            return Err(Error::format(self.label, format!("unsupported version {v}")));
        }
        Ok(())
    }

    pub fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(Error::format(
                self.label,
                format!("{} trailing bytes", self.bytes.len() - self.pos),
            ));
        }
        Ok(())
    }
}

pub fn encode_weights(tensors: &[NamedTensor]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(WEIGHTS_MAGIC);
    out.extend_from_slice(&WEIGHTS_VERSION.to_le_bytes());
    out.extend_from_slice(&u32::try_from(tensors.len()).map_err(|_| Error::Contract("too many tensors".into()))?.to_le_bytes());
    for t in tensors {
        let name = t.name.as_bytes();
        let len = u16::try_from(name.len()).map_err(|_| Error::Contract(format!("tensor name too long: {}", t.name)))?;
        if t.shape.iter().product::<usize>() != t.data.len() {
            return Err(Error::Shape(format!("tensor `{}` shape {:?} vs {} values", t.name, t.shape, t.data.len())));
        }
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(name);
        out.push(u8::try_from(t.shape.len()).map_err(|_| Error::Contract(format!("rank too large: {}", t.name)))?);
        for &d in &t.shape {
            out.extend_from_slice(&u32::try_from(d).map_err(|_| Error::Contract(format!("dimension too large: {}", t.name)))?.to_le_bytes());
        }
        for v in &t.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_weights(bytes: &[u8], label: &str) -> Result<Vec<NamedTensor>> {
    let mut r = Reader::new(bytes, label);
    r.magic(WEIGHTS_MAGIC, WEIGHTS_VERSION)?;
    let count = r.u32()? as usize;
    let mut seen = BTreeSet::new();
    let mut tensors = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let len = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::format(label, "tensor name is not UTF-8"))?
            .to_string();
        if !seen.insert(name.clone()) {
            return Err(Error::format(label, format!("duplicate tensor `{name}`")));
        }
        let rank = r.u8()? as usize;
        let shape = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let n = shape.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d)).ok_or_else(|| Error::format(label, "shape overflow"))?;
        let data = r.f32s(n)?;
        tensors.push(NamedTensor { name, shape, data });
    }
    r.finish()?;
    Ok(tensors)
}

pub fn write_weights(path: &Path, tensors: &[NamedTensor]) -> Result<()> {
    let bytes = encode_weights(tensors)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_weights(path: &Path) -> Result<Vec<NamedTensor>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_weights(&bytes, &path.display().to_string())
}

pub fn into_map(tensors: Vec<NamedTensor>) -> BTreeMap<String, NamedTensor> {
    tensors.into_iter().map(|t| (t.name.clone(), t)).collect()
}

/// Errors on any entry left over after every consumer took its tensors.
pub fn ensure_consumed(map: &BTreeMap<String, NamedTensor>) -> Result<()> {
    if map.is_empty() {
        Ok(())
    } else {
        Err(Error::UnknownTensors(map.keys().cloned().collect()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Vec<NamedTensor> {
        vec![
            NamedTensor::new("embed.w_pe", vec![2, 3], vec![1.0, -2.5, 3.25, f32::MIN_POSITIVE, -0.0, 7.0]),
            NamedTensor::new("scalar", vec![], vec![42.0]),
        ]
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let bytes = encode_weights(&sample()).unwrap();
        let back = decode_weights(&bytes, "mem").unwrap();
        assert_eq!(back.len(), 2);
        for (a, b) in sample().iter().zip(&back) {
            assert_eq!(a.name, b.name);
            assert_eq!(a.shape, b.shape);
            let bits = |v: &[f32]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&a.data), bits(&b.data));
        }
    }

    #[test]
    fn header_layout() {
        let bytes = encode_weights(&sample()[1..]).unwrap();
        assert_eq!(&bytes[..4], b"VTSW");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 1);
        // name_len, "scalar", rank 0, one f32
        assert_eq!(bytes.len(), 12 + 2 + 6 + 1 + 4);
    }

    #[test]
    fn truncation_and_magic_are_rejected() {
        let bytes = encode_weights(&sample()).unwrap();
        for cut in [3, 11, 20, bytes.len() - 1] {
            let err = decode_weights(&bytes[..cut], "w.vtsw").unwrap_err();
            assert!(err.to_string().contains("w.vtsw"), "{err}");
        }
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode_weights(&bad, "w").unwrap_err().to_string().contains("magic"));
        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(decode_weights(&bad, "w").unwrap_err().to_string().contains("version"));
        let mut long = bytes;
        long.push(0);
        assert!(decode_weights(&long, "w").unwrap_err().to_string().contains("trailing"));
    }

    #[test]
    fn leftovers_are_named() {
        let mut map = into_map(sample());
        map.remove("embed.w_pe");
        let err = ensure_consumed(&map).unwrap_err();
        assert!(err.to_string().contains("scalar"));
    }
}
