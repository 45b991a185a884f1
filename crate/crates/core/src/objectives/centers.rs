//! Class hash centers and per-class polarization targets.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

const RANDOM_CENTER_ATTEMPTS: usize = 10_000;

/// Entry `(i, j)` of the Sylvester Hadamard matrix of order `2^n`.
pub fn hadamard_entry(i: usize, j: usize) -> i8 {
    if (i & j).count_ones() % 2 == 0 {
        1
    } else {
        -1
    }
}

fn distance(a: &[bool], b: &[bool]) -> usize {
    a.iter().zip(b).filter(|(x, y)| x != y).count()
}

fn balanced(bits: usize, rng: &mut ChaCha8Rng) -> Vec<bool> {
    let mut v: Vec<bool> = (0..bits).map(|i| i < bits / 2).collect();
    v.shuffle(rng);
    v
}

/// One fixed `K`-bit target per class, pairwise at least `K/2` apart.
#[derive(Clone, Debug, PartialEq)]
pub struct HashCenters {
    bits: usize,
    centers: Vec<Vec<bool>>,
}

impl HashCenters {
    /// Hadamard rows (then their complements) when `bits` is a power of two,
    /// seeded random balanced codes otherwise.
    pub fn new(classes: usize, bits: usize, seed: u64) -> Result<Self> {
        if bits == 0 || classes == 0 {
            return Err(Error::Config("hash centers need at least one class and one bit".into()));
        }
        if classes > 2 * bits {
            return Err(Error::Capacity(format!(
                "{classes} hash centers do not fit in {bits} bits (at most {})",
                2 * bits
            )));
        }
        let centers = if bits.is_power_of_two() {
            (0..classes)
                .map(|c| (0..bits).map(|j| (hadamard_entry(c % bits, j) > 0) != (c >= bits)).collect())
                .collect()
        } else {
            Self::random(classes, bits, seed)?
        };
        let out = Self { bits, centers };
        let min = out.min_distance();
        if classes > 1 && 2 * min < bits {
            return Err(Error::Capacity(format!(
                "hash centers reach only distance {min}, below {bits}/2"
            )));
        }
        Ok(out)
    }

    fn random(classes: usize, bits: usize, seed: u64) -> Result<Vec<Vec<bool>>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut centers: Vec<Vec<bool>> = Vec::with_capacity(classes);
        let mut attempts = 0;
        while centers.len() < classes {
            attempts += 1;
            if attempts > RANDOM_CENTER_ATTEMPTS {
                return Err(Error::Capacity(format!(
                    "could not place {classes} random centers {}-apart in {bits} bits",
                    bits.div_ceil(2)
                )));
            }
            let cand = balanced(bits, &mut rng);
            if centers.iter().all(|c| 2 * distance(c, &cand) >= bits) {
                centers.push(cand);
            }
        }
        Ok(centers)
    }

    pub fn bits(&self) -> usize {
        self.bits
    }

    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    pub fn center(&self, class: usize) -> &[bool] {
        &self.centers[class]
    }

    pub fn min_distance(&self) -> usize {
        let mut min = self.bits;
        for i in 0..self.centers.len() {
            for j in i + 1..self.centers.len() {
                min = min.min(distance(&self.centers[i], &self.centers[j]));
            }
        }
        min
    }

    /// Per-bit majority over the item's label centers; ties give 1.
    pub fn target(&self, labels: &[u32]) -> Result<Vec<bool>> {
        majority(&self.centers, labels)
    }
}

pub(crate) fn majority(table: &[Vec<bool>], labels: &[u32]) -> Result<Vec<bool>> {
    if labels.is_empty() {
        return Err(Error::Contract("item has no labels".into()));
    }
    let bits = table.first().map_or(0, Vec::len);
    let mut votes = vec![0usize; bits];
    for &l in labels {
        let row = table.get(l as usize).ok_or_else(|| {
            Error::Contract(format!("class id {l} out of range for {} classes", table.len()))
        })?;
        for (v, &b) in votes.iter_mut().zip(row) {
            *v += usize::from(b);
        }
    }
    Ok(votes.iter().map(|&v| 2 * v >= labels.len()).collect())
}

/// Seeded balanced targets, one distinct code per class.
pub fn polarization_targets(classes: usize, bits: usize, seed: u64) -> Result<Vec<Vec<bool>>> {
    if bits < 64 && classes as u128 > 1u128 << bits {
        return Err(Error::Capacity(format!("{classes} distinct targets need more than {bits} bits")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out: Vec<Vec<bool>> = Vec::with_capacity(classes);
    let mut attempts = 0;
    while out.len() < classes {
        attempts += 1;
        let cand = if attempts > RANDOM_CENTER_ATTEMPTS {
            use rand::Rng;
            (0..bits).map(|_| rng.random()).collect()
        } else {
            balanced(bits, &mut rng)
        };
        if !out.contains(&cand) {
            out.push(cand);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn strings(c: &HashCenters) -> Vec<String> {
        (0..c.len())
            .map(|i| c.center(i).iter().map(|&b| if b { '1' } else { '0' }).collect())
            .collect()
    }

    #[test]
    fn four_bit_hadamard_rows() {
        let c = HashCenters::new(4, 4, 0).unwrap();
        assert_eq!(strings(&c), ["1111", "1010", "1100", "1001"]);
        assert_eq!(c.min_distance(), 2);
    }

    #[test]
    fn two_bit_centers() {
        assert_eq!(strings(&HashCenters::new(2, 2, 0).unwrap()), ["11", "10"]);
    }

    #[test]
    fn complements_keep_half_distance() {
        let c = HashCenters::new(9, 8, 0).unwrap();
        assert_eq!(strings(&c)[8], "00000000");
        assert!(c.min_distance() >= 4);
        assert!(HashCenters::new(16, 8, 0).unwrap().min_distance() >= 4);
    }

    #[test]
    fn over_capacity_rejected() {
        assert!(matches!(HashCenters::new(17, 8, 0), Err(Error::Capacity(_))));
    }

    #[test]
    fn non_power_of_two_uses_random_codes() {
        let c = HashCenters::new(4, 12, 3).unwrap();
        assert!(c.min_distance() >= 6);
        assert_eq!(c, HashCenters::new(4, 12, 3).unwrap());
    }

    #[test]
    fn majority_ties_go_to_one() {
        let c = HashCenters::new(4, 4, 0).unwrap();
        let t = c.target(&[1, 2]).unwrap();
        assert_eq!(t, vec![true, true, true, false]);
        assert!(c.target(&[9]).is_err());
    }

    #[test]
    fn polarization_targets_distinct_and_balanced() {
        let t = polarization_targets(10, 16, 1).unwrap();
        for (i, a) in t.iter().enumerate() {
            assert_eq!(a.iter().filter(|&&b| b).count(), 8);
            assert!(t[i + 1..].iter().all(|b| b != a));
        }
        assert!(polarization_targets(5, 2, 0).is_err());
    }
}
