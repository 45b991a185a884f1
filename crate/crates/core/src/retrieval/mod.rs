//! Bit-packed binary codes, Hamming ranking and retrieval metrics.

mod codefile;
mod metrics;

pub use codefile::{decode_code_set, encode_code_set, read_code_set, write_code_set, CODES_MAGIC, CODES_VERSION};
pub use metrics::{
    average_precision, average_precision_with, map_at_k, pr_curve, relevant, ApNormalization, MapOptions,
    MapReport, PrCurve, PR_GRID_POINTS,
};

use crate::error::{Error, Result};

pub(crate) fn words_for(bits: usize) -> usize {
    bits.div_ceil(64)
}

fn pad_mask(bits: usize) -> u64 {
    match bits % 64 {
        0 => u64::MAX,
        r => (1u64 << r) - 1,
    }
}

/// `K` bits packed little-end first into 64-bit words; unused high bits of
/// the last word are zero.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct BinaryCode {
    bits: usize,
    words: Vec<u64>,
}

impl BinaryCode {
    pub fn from_bits(bits: impl IntoIterator<Item = bool>) -> Self {
        let mut words = Vec::new();
        let mut n = 0;
        for b in bits {
            if n % 64 == 0 {
                words.push(0);
            }
            if b {
                words[n / 64] |= 1 << (n % 64);
            }
            n += 1;
        }
        Self { bits: n, words }
    }

    pub fn from_words(bits: usize, words: Vec<u64>) -> Result<Self> {
        if words.len() != words_for(bits) {
            return Err(Error::Contract(format!("{bits} bits need {} words, got {}", words_for(bits), words.len())));
        }
        if let Some(&last) = words.last() {
            if last & !pad_mask(bits) != 0 {
                return Err(Error::Contract("padding bits must be zero".into()));
            }
        }
        Ok(Self { bits, words })
    }

    /// Parses a string of `0`/`1` characters, bit 0 first.
    pub fn parse(s: &str) -> Result<Self> {
        s.chars()
            .map(|c| match c {
                '0' => Ok(false),
                '1' => Ok(true),
                _ => Err(Error::Contract(format!("invalid bit character {c:?}"))),
            })
            .collect::<Result<Vec<_>>>()
            .map(Self::from_bits)
    }

    pub fn bits(&self) -> usize {
        self.bits
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    pub fn bit(&self, i: usize) -> bool {
        self.words[i / 64] >> (i % 64) & 1 == 1
    }

    /// Bit `i` as `+1` / `-1`.
    pub fn sign(&self, i: usize) -> f64 {
        if self.bit(i) {
            1.0
        } else {
            -1.0
        }
    }

    pub fn complement(&self) -> Self {
        let mut words: Vec<u64> = self.words.iter().map(|w| !w).collect();
        if let Some(last) = words.last_mut() {
            *last &= pad_mask(self.bits);
        }
        Self { bits: self.bits, words }
    }

    pub fn to_bit_string(&self) -> String {
        (0..self.bits).map(|i| if self.bit(i) { '1' } else { '0' }).collect()
    }
}

#[inline]
pub fn hamming_words(a: &[u64], b: &[u64]) -> u32 {
    a.iter().zip(b).map(|(x, y)| (x ^ y).count_ones()).sum()
}

pub fn hamming(a: &BinaryCode, b: &BinaryCode) -> Result<u32> {
    if a.bits != b.bits {
        return Err(Error::Contract(format!("hamming between {}-bit and {}-bit codes", a.bits, b.bits)));
    }
    Ok(hamming_words(&a.words, &b.words))
}

/// A retrieval database: packed codes with their label sets and ids.
#[derive(Clone, Debug, PartialEq)]
pub struct BinaryCodeSet {
    bits: usize,
    words: Vec<u64>,
    labels: Vec<Vec<u32>>,
    ids: Vec<u64>,
}

impl BinaryCodeSet {
    pub fn new(bits: usize) -> Self {
        Self {
            bits,
            words: Vec::new(),
            labels: Vec::new(),
            ids: Vec::new(),
        }
    }

    pub fn push(&mut self, id: u64, labels: &[u32], code: &BinaryCode) -> Result<()> {
        if code.bits != self.bits {
            return Err(Error::Contract(format!(
                "cannot add a {}-bit code to a {}-bit set",
                code.bits, self.bits
            )));
        }
        let mut labels = labels.to_vec();
        labels.sort_unstable();
        labels.dedup();
        self.words.extend_from_slice(&code.words);
        self.labels.push(labels);
        self.ids.push(id);
        Ok(())
    }

    pub fn bits(&self) -> usize {
        self.bits
    }

    pub fn words_per_code(&self) -> usize {
        words_for(self.bits)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn code_words(&self, i: usize) -> &[u64] {
        let w = self.words_per_code();
        &self.words[i * w..(i + 1) * w]
    }

    pub fn code(&self, i: usize) -> BinaryCode {
        BinaryCode {
            bits: self.bits,
            words: self.code_words(i).to_vec(),
        }
    }

    pub fn labels(&self, i: usize) -> &[u32] {
        &self.labels[i]
    }

    pub fn id(&self, i: usize) -> u64 {
        self.ids[i]
    }

    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    pub fn distances(&self, query: &[u64]) -> Vec<u32> {
        (0..self.len()).map(|i| hamming_words(query, self.code_words(i))).collect()
    }

    /// Database indices by ascending Hamming distance, ties by ascending
    /// index, truncated to `topk`.
    pub fn rank(&self, query: &BinaryCode, topk: usize) -> Result<Vec<usize>> {
        if self.is_empty() {
            return Err(Error::Contract("ranking against an empty database".into()));
        }
        if query.bits != self.bits {
            return Err(Error::Contract(format!(
                "{}-bit query against {}-bit database",
                query.bits, self.bits
            )));
        }
        if topk > self.len() {
            return Err(Error::Contract(format!("topk {topk} exceeds database size {}", self.len())));
        }
        let mut order = self.rank_all(query.words(), |_| true);
        order.truncate(topk);
        Ok(order)
    }

    /// Counting sort over distances; stable, so equal distances keep index order.
    pub(crate) fn rank_all(&self, query: &[u64], keep: impl Fn(usize) -> bool) -> Vec<usize> {
        let dist = self.distances(query);
        let mut counts = vec![0usize; self.bits + 2];
        for (i, &d) in dist.iter().enumerate() {
            if keep(i) {
                counts[d as usize + 1] += 1;
            }
        }
        for d in 1..counts.len() {
            counts[d] += counts[d - 1];
        }
        let total = counts[self.bits + 1];
        let mut order = vec![0; total];
        for (i, &d) in dist.iter().enumerate() {
            if keep(i) {
                order[counts[d as usize]] = i;
                counts[d as usize] += 1;
            }
        }
        order
    }
}
