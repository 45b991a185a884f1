//! Average precision, mAP@K and precision-recall curves over Hamming rankings.

use serde::{Deserialize, Serialize};

use super::BinaryCodeSet;
use crate::error::{Error, Result};

/// Recall grid `0.0, 0.05, ..., 1.0`.
pub const PR_GRID_POINTS: usize = 21;

/// Denominator used when averaging precision over relevant ranks.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ApNormalization {
    /// Number of relevant items inside the cutoff.
    #[default]
    RelevantRetrieved,
    /// `min(cutoff, relevant items in the whole database)`.
    MinCutoffTotal,
}

/// Two items are relevant to each other when their sorted label sets intersect.
pub fn relevant(a: &[u32], b: &[u32]) -> bool {
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Equal => return true,
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
        }
    }
    false
}

/// AP over the first `cutoff` entries of a ranked relevance list; 0 when
/// nothing relevant is retrieved.
pub fn average_precision(relevance: &[bool], cutoff: usize) -> f64 {
    average_precision_with(relevance, cutoff, ApNormalization::RelevantRetrieved, 0)
}

pub fn average_precision_with(
    relevance: &[bool],
    cutoff: usize,
    normalization: ApNormalization,
    total_relevant: usize,
) -> f64 {
    let cutoff = cutoff.min(relevance.len());
    let mut hits = 0usize;
    let mut sum = Compensated::default();
    for (r, _) in relevance[..cutoff].iter().enumerate().filter(|(_, &rel)| rel) {
        hits += 1;
        sum.add_quotient(hits as f64, (r + 1) as f64);
    }
    let denom = match normalization {
        ApNormalization::RelevantRetrieved => hits,
        ApNormalization::MinCutoffTotal => cutoff.min(total_relevant),
    };
    if hits == 0 || denom == 0 {
        0.0
    } else {
        sum.div(denom as f64)
    }
}

/// Double-double accumulator so sums of precision terms round once.
#[derive(Default)]
struct Compensated {
    hi: f64,
    lo: f64,
}

impl Compensated {
    fn add_quotient(&mut self, num: f64, den: f64) {
        let q = num / den;
        let q_err = -q.mul_add(den, -num) / den;
        let s = self.hi + q;
        let bp = s - self.hi;
        let s_err = (self.hi - (s - bp)) + (q - bp);
        self.hi = s;
        self.lo += s_err + q_err;
    }

    fn div(&self, d: f64) -> f64 {
        let q = self.hi / d;
        let rem = (-q).mul_add(d, self.hi) + self.lo;
        q + rem / d
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MapOptions {
    /// Retrieved items per query (clamped to the database size).
    pub cutoff: usize,
    pub normalization: ApNormalization,
    /// Skip database entries sharing the query's id.
    pub exclude_self: bool,
}

impl MapOptions {
    pub fn at(cutoff: usize) -> Self {
        Self {
            cutoff,
            normalization: ApNormalization::default(),
            exclude_self: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MapReport {
    pub map: f64,
    pub cutoff: usize,
    pub per_query: Vec<f64>,
}

fn check_pair(queries: &BinaryCodeSet, db: &BinaryCodeSet) -> Result<()> {
    if queries.bits() != db.bits() {
        return Err(Error::Contract(format!(
            "query codes have {} bits, database codes {}",
            queries.bits(),
            db.bits()
        )));
    }
    if queries.is_empty() || db.is_empty() {
        return Err(Error::Contract("empty query or database set".into()));
    }
    Ok(())
}

#[cfg(feature = "parallel")]
fn map_queries<R: Send>(n: usize, f: impl Fn(usize) -> R + Sync + Send) -> Vec<R> {
    use rayon::prelude::*;
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
fn map_queries<R: Send>(n: usize, f: impl Fn(usize) -> R + Sync + Send) -> Vec<R> {
    (0..n).map(f).collect()
}

fn ranking(queries: &BinaryCodeSet, q: usize, db: &BinaryCodeSet, exclude_self: bool) -> Vec<usize> {
    let qid = queries.id(q);
    db.rank_all(queries.code_words(q), |i| !exclude_self || db.id(i) != qid)
}

/// Mean over queries of AP within the top `cutoff` Hamming-ranked items.
pub fn map_at_k(queries: &BinaryCodeSet, db: &BinaryCodeSet, options: MapOptions) -> Result<MapReport> {
    check_pair(queries, db)?;
    let per_query = map_queries(queries.len(), |q| {
        let order = ranking(queries, q, db, options.exclude_self);
        let cutoff = options.cutoff.min(order.len());
        let ql = queries.labels(q);
        let rel: Vec<bool> = order.iter().map(|&i| relevant(ql, db.labels(i))).collect();
        let total = match options.normalization {
            ApNormalization::MinCutoffTotal => rel.iter().filter(|&&r| r).count(),
            ApNormalization::RelevantRetrieved => 0,
        };
        average_precision_with(&rel, cutoff, options.normalization, total)
    });
    let map = per_query.iter().sum::<f64>() / per_query.len() as f64;
    Ok(MapReport {
        map,
        cutoff: options.cutoff.min(db.len()),
        per_query,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct PrCurve {
    /// `(recall, precision)` on the 21-point recall grid.
    pub points: Vec<(f64, f64)>,
    pub evaluated_queries: usize,
    /// Queries with no relevant database item; they do not contribute.
    pub skipped_queries: usize,
}

impl PrCurve {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("recall,precision\n");
        for (r, p) in &self.points {
            out.push_str(&format!("{r:.2},{p:.6}\n"));
        }
        out
    }
}

pub(crate) fn recall_grid() -> Vec<f64> {
    (0..PR_GRID_POINTS).map(|i| i as f64 / (PR_GRID_POINTS - 1) as f64).collect()
}

/// Interpolated precision (best precision at any rank whose recall reaches
/// the grid value) for one ranked relevance list.
pub(crate) fn interpolated_precision(rel: &[bool], grid: &[f64]) -> Option<Vec<f64>> {
    let total = rel.iter().filter(|&&r| r).count();
    if total == 0 {
        return None;
    }
    let n = rel.len();
    let mut recall = Vec::with_capacity(n);
    let mut precision = Vec::with_capacity(n);
    let mut hits = 0;
    for (r, &is_rel) in rel.iter().enumerate() {
        hits += usize::from(is_rel);
        recall.push(hits as f64 / total as f64);
        precision.push(hits as f64 / (r + 1) as f64);
    }
    let mut best_after = precision.clone();
    for i in (0..n.saturating_sub(1)).rev() {
        best_after[i] = best_after[i].max(best_after[i + 1]);
    }
    Some(
        grid.iter()
            .map(|&g| {
                let first = recall.partition_point(|&r| r < g - 1e-12);
                best_after.get(first).copied().unwrap_or(0.0)
            })
            .collect(),
    )
}

/// Macro-averaged precision-recall curve over full Hamming rankings.
pub fn pr_curve(queries: &BinaryCodeSet, db: &BinaryCodeSet, exclude_self: bool) -> Result<PrCurve> {
    check_pair(queries, db)?;
    let grid = recall_grid();
    let per_query = map_queries(queries.len(), |q| {
        let order = ranking(queries, q, db, exclude_self);
        let ql = queries.labels(q);
        let rel: Vec<bool> = order.iter().map(|&i| relevant(ql, db.labels(i))).collect();
        interpolated_precision(&rel, &grid)
    });
    let mut sums = vec![0.0; grid.len()];
    let mut evaluated = 0;
    for p in per_query.iter().flatten() {
        evaluated += 1;
        sums.iter_mut().zip(p).for_each(|(s, v)| *s += v);
    }
    let points = grid
        .iter()
        .zip(&sums)
        .map(|(&r, &s)| (r, if evaluated == 0 { 0.0 } else { s / evaluated as f64 }))
        .collect();
    Ok(PrCurve {
        points,
        evaluated_queries: evaluated,
        skipped_queries: queries.len() - evaluated,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::retrieval::BinaryCode;

    #[test]
    fn ap_hand_cases() {
        assert_eq!(average_precision(&[true, false, true], 3), 5.0 / 6.0);
        assert_eq!(average_precision(&[true, true, true], 3), 1.0);
        assert_eq!(average_precision(&[false, false, false], 3), 0.0);
        // cutoff hides the second hit
        assert_eq!(average_precision(&[true, false, true], 2), 1.0);
    }

    #[test]
    fn alternative_normalization() {
        let rel = [true, false, false, true];
        let ap = average_precision_with(&rel, 2, ApNormalization::MinCutoffTotal, 2);
        assert!((ap - 0.5).abs() < 1e-15);
    }

    #[test]
    fn label_intersection() {
        assert!(relevant(&[1, 4, 9], &[2, 9]));
        assert!(!relevant(&[1, 4], &[2, 3, 5]));
        assert!(!relevant(&[], &[1]));
    }

    #[test]
    fn pr_perfect_and_inverted() {
        let grid = recall_grid();
        let perfect = interpolated_precision(&[true, true, false, false], &grid).unwrap();
        assert!(perfect.iter().all(|&p| p == 1.0));
        let mut inverted = vec![false; 10];
        inverted[9] = true;
        let p = interpolated_precision(&inverted, &grid).unwrap();
        assert!((p[20] - 0.1).abs() < 1e-15);
        assert!(interpolated_precision(&[false, false], &grid).is_none());
        assert!(grid.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(grid.len(), 21);
    }

    #[test]
    fn self_excluded_map_on_unique_labels() {
        let mut set = BinaryCodeSet::new(8);
        for i in 0..6u64 {
            let code = BinaryCode::from_bits((0..8).map(|b| (i >> (b % 3)) & 1 == 1));
            set.push(i, &[i as u32 / 2], &code).unwrap();
        }
        let mut opts = MapOptions::at(5);
        opts.exclude_self = true;
        let report = map_at_k(&set, &set, opts).unwrap();
        assert_eq!(report.per_query.len(), 6);
        assert!(report.per_query.iter().all(|&ap| (0.0..=1.0).contains(&ap)));
    }

    #[test]
    fn bit_mismatch_is_rejected() {
        let mut a = BinaryCodeSet::new(8);
        a.push(0, &[0], &BinaryCode::parse("00000000").unwrap()).unwrap();
        let mut b = BinaryCodeSet::new(4);
        b.push(0, &[0], &BinaryCode::parse("0000").unwrap()).unwrap();
        assert!(map_at_k(&a, &b, MapOptions::at(1)).is_err());
        assert!(pr_curve(&a, &b, false).is_err());
    }
}
