//! Seeded train/query/database split protocols.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Dataset, Origin, Splits};
use crate::error::{Error, Result};

/// Which items form the database once query and train are drawn.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatabaseRule {
    /// Everything outside query and train.
    Rest,
    /// Everything outside query (train is part of the database).
    RestWithTrain,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SplitRule {
    /// Single-label data: fixed query and train counts per class.
    PerClass {
        train_per_class: usize,
        query_per_class: usize,
        database: DatabaseRule,
    },
    /// Query is every test-origin item, database every train-origin item,
    /// train a uniform sample of the database.
    SourceSplit { train_total: usize },
    /// Multi-label data: query and train drawn per concept, train taken from
    /// the database.
    PerConcept {
        train_per_concept: usize,
        query_per_concept: usize,
    },
    /// Uniform query sample; train sampled from the remaining database.
    Random { query_total: usize, train_total: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolSpec {
    pub name: String,
    pub rule: SplitRule,
    /// Retrieved items per query for mAP.
    pub cutoff: usize,
}

impl ProtocolSpec {
    pub fn cifar10_54000() -> Self {
        Self {
            name: "cifar10@54000".into(),
            rule: SplitRule::PerClass {
                train_per_class: 500,
                query_per_class: 100,
                database: DatabaseRule::Rest,
            },
            cutoff: 54_000,
        }
    }

    pub fn cifar10_all() -> Self {
        Self {
            name: "cifar10@all".into(),
            rule: SplitRule::PerClass {
                train_per_class: 500,
                query_per_class: 100,
                database: DatabaseRule::RestWithTrain,
            },
            cutoff: 59_000,
        }
    }

    pub fn imagenet() -> Self {
        Self {
            name: "imagenet@1000".into(),
            rule: SplitRule::SourceSplit { train_total: 13_000 },
            cutoff: 1_000,
        }
    }

    pub fn nus_wide() -> Self {
        Self {
            name: "nus-wide@5000".into(),
            rule: SplitRule::PerConcept {
                train_per_concept: 500,
                query_per_concept: 100,
            },
            cutoff: 5_000,
        }
    }

    pub fn coco() -> Self {
        Self {
            name: "coco@5000".into(),
            rule: SplitRule::Random {
                query_total: 5_000,
                train_total: 10_000,
            },
            cutoff: 5_000,
        }
    }

    /// Desk-scale protocol for synthetic data generated with 450 items per
    /// class: 200 train, 50 query and 200 database items per class.
    pub fn synth() -> Self {
        Self {
            name: "synth".into(),
            rule: SplitRule::PerClass {
                train_per_class: 200,
                query_per_class: 50,
                database: DatabaseRule::Rest,
            },
            cutoff: 500,
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        Ok(match name {
            "cifar10@54000" | "cifar10" => Self::cifar10_54000(),
            "cifar10@all" => Self::cifar10_all(),
            "imagenet" | "imagenet@1000" => Self::imagenet(),
            "nus-wide" | "nus-wide@5000" => Self::nus_wide(),
            "coco" | "coco@5000" => Self::coco(),
            "synth" => Self::synth(),
            _ => return Err(Error::Config(format!("unknown protocol '{name}'"))),
        })
    }

    /// A preset name, or a path to a JSON spec.
    pub fn resolve(name_or_path: &str) -> Result<Self> {
        let p = Path::new(name_or_path);
        if name_or_path.ends_with(".json") || p.is_file() {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            return Ok(serde_json::from_str(&text)?);
        }
        Self::preset(name_or_path)
    }
}

fn sorted(mut v: Vec<usize>) -> Vec<usize> {
    v.sort_unstable();
    v
}

fn take(pool: &mut Vec<usize>, n: usize, what: &str) -> Result<Vec<usize>> {
    if pool.len() < n {
        return Err(Error::Protocol(format!("{what}: need {n} items, only {} available", pool.len())));
    }
    let rest = pool.split_off(n);
    Ok(std::mem::replace(pool, rest))
}

/// Draws the splits described by `spec` with a seeded generator.
pub fn apply_protocol(mut dataset: Dataset, spec: &ProtocolSpec, seed: u64) -> Result<Dataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = dataset.items.len();
    let splits = match spec.rule {
        SplitRule::PerClass {
            train_per_class,
            query_per_class,
            database,
        } => {
            if dataset.is_multi_label() {
                return Err(Error::Protocol("per-class protocol needs single-label data".into()));
            }
            let (mut train, mut query, mut rest) = (Vec::new(), Vec::new(), Vec::new());
            for class in 0..dataset.num_classes as u32 {
                let mut pool: Vec<usize> = (0..n).filter(|&i| dataset.items[i].labels[0] == class).collect();
                pool.shuffle(&mut rng);
                let what = format!("class {class}");
                query.extend(take(&mut pool, query_per_class, &what)?);
                train.extend(take(&mut pool, train_per_class, &what)?);
                rest.extend(pool);
            }
            let database = match database {
                DatabaseRule::Rest => rest,
                DatabaseRule::RestWithTrain => rest.into_iter().chain(train.iter().copied()).collect(),
            };
            Splits {
                train: sorted(train),
                query: sorted(query),
                database: sorted(database),
            }
        }
        SplitRule::SourceSplit { train_total } => {
            let query: Vec<usize> = (0..n).filter(|&i| dataset.items[i].origin == Origin::Test).collect();
            let database: Vec<usize> = (0..n).filter(|&i| dataset.items[i].origin == Origin::Train).collect();
            let mut pool = database.clone();
            pool.shuffle(&mut rng);
            let train = take(&mut pool, train_total, "train sample")?;
            Splits {
                train: sorted(train),
                query,
                database,
            }
        }
        SplitRule::PerConcept {
            train_per_concept,
            query_per_concept,
        } => {
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut rng);
            let mut in_query = vec![false; n];
            let mut query = Vec::new();
            for concept in 0..dataset.num_classes as u32 {
                let picked: Vec<usize> = order
                    .iter()
                    .copied()
                    .filter(|&i| !in_query[i] && dataset.items[i].labels.contains(&concept))
                    .take(query_per_concept)
                    .collect();
                if picked.len() < query_per_concept {
                    return Err(Error::Protocol(format!(
                        "concept {concept}: need {query_per_concept} query items, only {} available",
                        picked.len()
                    )));
                }
                picked.iter().for_each(|&i| in_query[i] = true);
                query.extend(picked);
            }
            let mut in_train = vec![false; n];
            let mut train = Vec::new();
            for concept in 0..dataset.num_classes as u32 {
                let picked: Vec<usize> = order
                    .iter()
                    .copied()
                    .filter(|&i| !in_query[i] && !in_train[i] && dataset.items[i].labels.contains(&concept))
                    .take(train_per_concept)
                    .collect();
                if picked.len() < train_per_concept {
                    return Err(Error::Protocol(format!(
                        "concept {concept}: need {train_per_concept} train items, only {} available",
                        picked.len()
                    )));
                }
                picked.iter().for_each(|&i| in_train[i] = true);
                train.extend(picked);
            }
            Splits {
                train: sorted(train),
                query: sorted(query),
                database: (0..n).filter(|&i| !in_query[i]).collect(),
            }
        }
        SplitRule::Random { query_total, train_total } => {
            let mut pool: Vec<usize> = (0..n).collect();
            pool.shuffle(&mut rng);
            let query = take(&mut pool, query_total, "query sample")?;
            let database = sorted(pool.clone());
            let train = take(&mut pool, train_total, "train sample")?;
            Splits {
                train: sorted(train),
                query: sorted(query),
                database,
            }
        }
    };
    if splits.train.is_empty() || splits.query.is_empty() || splits.database.is_empty() {
        return Err(Error::Protocol(format!("protocol {} produced an empty split", spec.name)));
    }
    dataset.splits = Some(splits);
    dataset.protocol = Some(spec.name.clone());
    Ok(dataset)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Item;
    use crate::image::Image;

    fn fake(per_class: usize, classes: u32, origin_test_every: usize) -> Dataset {
        let items = (0..per_class * classes as usize)
            .map(|i| Item {
                id: i as u64,
                image: Image::filled(1, 1, 0.0),
                labels: vec![(i % classes as usize) as u32],
                origin: if origin_test_every > 0 && i % origin_test_every == 0 { Origin::Test } else { Origin::Train },
            })
            .collect();
        Dataset::new(items, classes as usize).unwrap()
    }

    fn class_counts(d: &Dataset, idx: &[usize]) -> Vec<usize> {
        let mut c = vec![0; d.num_classes];
        idx.iter().for_each(|&i| c[d.items[i].labels[0] as usize] += 1);
        c
    }

    #[test]
    fn per_class_counts_are_exact() {
        let d = apply_protocol(fake(450, 10, 0), &ProtocolSpec::synth(), 3).unwrap();
        let s = d.splits.as_ref().unwrap();
        assert_eq!((s.train.len(), s.query.len(), s.database.len()), (2000, 500, 2000));
        assert!(class_counts(&d, &s.query).iter().all(|&c| c == 50));
        assert!(s.query.iter().all(|q| s.database.binary_search(q).is_err()));
    }

    #[test]
    fn seeded_splits_repeat() {
        let a = apply_protocol(fake(450, 10, 0), &ProtocolSpec::synth(), 3).unwrap();
        let b = apply_protocol(fake(450, 10, 0), &ProtocolSpec::synth(), 3).unwrap();
        let c = apply_protocol(fake(450, 10, 0), &ProtocolSpec::synth(), 4).unwrap();
        assert_eq!(a.splits, b.splits);
        assert_ne!(a.splits, c.splits);
    }

    #[test]
    fn shortage_reports_counts() {
        let err = apply_protocol(fake(100, 2, 0), &ProtocolSpec::synth(), 0).unwrap_err();
        assert!(matches!(err, Error::Protocol(ref m) if m.contains("class 0") && m.contains("200")), "{err}");
    }

    #[test]
    fn source_split_uses_origins() {
        let spec = ProtocolSpec {
            name: "t".into(),
            rule: SplitRule::SourceSplit { train_total: 30 },
            cutoff: 10,
        };
        let d = apply_protocol(fake(20, 5, 4), &spec, 1).unwrap();
        let s = d.splits.unwrap();
        assert_eq!((s.query.len(), s.database.len(), s.train.len()), (25, 75, 30));
        assert!(s.train.iter().all(|t| s.database.contains(t)));
    }

    #[test]
    fn per_concept_on_multi_label_stand_in() {
        let items = (0..300)
            .map(|i| Item {
                id: i as u64,
                image: Image::filled(1, 1, 0.0),
                labels: if i % 3 == 0 { vec![(i % 4) as u32, 4] } else { vec![(i % 4) as u32] },
                origin: Origin::Train,
            })
            .collect();
        let d = Dataset::new(items, 5).unwrap();
        let spec = ProtocolSpec {
            name: "mini-nus".into(),
            rule: SplitRule::PerConcept {
                train_per_concept: 20,
                query_per_concept: 5,
            },
            cutoff: 50,
        };
        let s = apply_protocol(d, &spec, 9).unwrap().splits.unwrap();
        assert_eq!(s.query.len(), 25);
        assert_eq!(s.train.len(), 100);
        assert_eq!(s.database.len(), 275);
        assert!(s.train.iter().all(|t| s.database.contains(t)));
    }

    #[test]
    fn random_protocol_sizes() {
        let spec = ProtocolSpec {
            name: "mini-coco".into(),
            rule: SplitRule::Random {
                query_total: 10,
                train_total: 40,
            },
            cutoff: 20,
        };
        let s = apply_protocol(fake(50, 2, 0), &spec, 2).unwrap().splits.unwrap();
        assert_eq!((s.query.len(), s.train.len(), s.database.len()), (10, 40, 90));
    }

    #[test]
    fn spec_json_round_trip() {
        for spec in [ProtocolSpec::cifar10_all(), ProtocolSpec::imagenet(), ProtocolSpec::nus_wide(), ProtocolSpec::coco()] {
            let json = serde_json::to_string(&spec).unwrap();
            assert_eq!(serde_json::from_str::<ProtocolSpec>(&json).unwrap(), spec);
        }
        assert!(ProtocolSpec::preset("mnist").is_err());
    }
}
