//! Pairwise supervision built from per-item label sets.

use crate::error::{Error, Result};
use crate::retrieval::relevant;

/// Hard (and optionally soft) pairwise similarity for a batch.
#[derive(Clone, Debug, PartialEq)]
pub struct SimilarityMatrix {
    pub size: usize,
    /// Row-major `[B, B]`, each entry 0 or 1.
    pub hard: Vec<f64>,
    /// Row-major `[B, B]` Jaccard overlaps in `[0, 1]`.
    pub soft: Option<Vec<f64>>,
}

fn jaccard(a: &[u32], b: &[u32]) -> f64 {
    let inter = a.iter().filter(|l| b.contains(l)).count();
    let union = a.len() + b.len() - inter;
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

impl SimilarityMatrix {
    /// `s_ij = 1` iff the label sets intersect. Label sets must be sorted.
    pub fn from_labels(labels: &[Vec<u32>]) -> Self {
        let b = labels.len();
        let mut hard = vec![0.0; b * b];
        for i in 0..b {
            for j in 0..b {
                if i == j || relevant(&labels[i], &labels[j]) {
                    hard[i * b + j] = 1.0;
                }
            }
        }
        Self { size: b, hard, soft: None }
    }

    pub fn with_soft(labels: &[Vec<u32>]) -> Self {
        let mut s = Self::from_labels(labels);
        let b = labels.len();
        let mut soft = vec![0.0; b * b];
        for i in 0..b {
            for j in 0..b {
                soft[i * b + j] = jaccard(&labels[i], &labels[j]);
            }
        }
        s.soft = Some(soft);
        s
    }

    /// Builds a matrix from explicit soft values; hard entries are `soft > 0`.
    pub fn from_soft(size: usize, soft: Vec<f64>) -> Result<Self> {
        if soft.len() != size * size {
            return Err(Error::Shape(format!("soft similarity needs {} entries, got {}", size * size, soft.len())));
        }
        if let Some(v) = soft.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Contract(format!("soft similarity {v} outside [0, 1]")));
        }
        let hard = soft.iter().map(|&v| if v > 0.0 { 1.0 } else { 0.0 }).collect();
        Ok(Self { size, hard, soft: Some(soft) })
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.hard[i * self.size + j]
    }

    pub fn num_pairs(&self) -> usize {
        self.size * self.size.saturating_sub(1) / 2
    }

    /// Similar and dissimilar counts among the `i < j` pairs.
    pub fn pair_counts(&self) -> (usize, usize) {
        let mut similar = 0;
        for i in 0..self.size {
            for j in i + 1..self.size {
                similar += usize::from(self.get(i, j) > 0.5);
            }
        }
        (similar, self.num_pairs() - similar)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn symmetric_with_unit_diagonal() {
        let labels = vec![vec![0], vec![1, 2], vec![2], vec![3]];
        let s = SimilarityMatrix::with_soft(&labels);
        for i in 0..4 {
            assert_eq!(s.get(i, i), 1.0);
            for j in 0..4 {
                assert_eq!(s.get(i, j), s.get(j, i));
            }
        }
        assert_eq!(s.get(1, 2), 1.0);
        assert_eq!(s.get(0, 3), 0.0);
        assert_eq!(s.soft.as_ref().unwrap()[4 + 2], 0.5);
        assert_eq!(s.pair_counts(), (1, 5));
    }

    #[test]
    fn jaccard_of_identical_sets_is_one() {
        assert_eq!(jaccard(&[1, 4, 6], &[1, 4, 6]), 1.0);
        assert_eq!(jaccard(&[1], &[2]), 0.0);
    }

    #[test]
    fn soft_range_checked() {
        assert!(matches!(SimilarityMatrix::from_soft(1, vec![1.5]), Err(Error::Contract(_))));
    }
}
