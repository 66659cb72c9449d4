//! Labeled feature sets, the public dataset, private shards, and the
//! non-IID partitioner for finite data sources.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;

use crate::data::labels::{ActivityLabel, LabelId, LabelSet};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng::{mix_seed, rng_from_seed};

pub type UserId = u32;

/// Feature rows plus one label per row.
#[derive(Debug, Clone)]
pub struct LabeledSet {
    pub features: Matrix,
    pub labels: Vec<LabelId>,
}

impl LabeledSet {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// The shared dataset covering every label, used for distillation inputs
/// and as the common evaluation set.
#[derive(Debug, Clone)]
pub struct PublicDataset {
    pub x0: Matrix,
    pub y0: Vec<LabelId>,
    per_label: BTreeMap<LabelId, Vec<usize>>,
}

impl PublicDataset {
    pub fn new(set: LabeledSet, universe: &[ActivityLabel]) -> Result<Self> {
        if set.features.rows() != set.labels.len() {
            return Err(Error::Shape(format!(
                "{} feature rows vs {} labels",
                set.features.rows(),
                set.labels.len()
            )));
        }
        let mut per_label: BTreeMap<LabelId, Vec<usize>> = BTreeMap::new();
        for (i, &l) in set.labels.iter().enumerate() {
            per_label.entry(l).or_default().push(i);
        }
        for label in universe {
            if !per_label.contains_key(&label.id) {
                return Err(Error::InvalidInput(format!(
                    "public dataset does not cover label {}",
                    label.name
                )));
            }
        }
        Ok(PublicDataset { x0: set.features, y0: set.labels, per_label })
    }

    pub fn rows(&self) -> usize {
        self.y0.len()
    }

    pub fn rows_for_label(&self, label: LabelId) -> &[usize] {
        self.per_label.get(&label).map_or(&[], Vec::as_slice)
    }

    pub fn label_count(&self) -> usize {
        self.per_label.len()
    }
}

/// One user's private data for one iteration, restricted to that user's
/// label subset.
#[derive(Debug, Clone)]
pub struct PrivateShard {
    pub owner: UserId,
    pub iteration: usize,
    pub features: Matrix,
    pub labels: Vec<LabelId>,
    pub label_set: LabelSet,
}

impl PrivateShard {
    pub fn new(
        owner: UserId,
        iteration: usize,
        set: LabeledSet,
        label_set: LabelSet,
    ) -> Result<Self> {
        for &l in &set.labels {
            if !label_set.contains(l) {
                return Err(Error::InvalidInput(format!(
                    "shard row label {l} not in owner's label set"
                )));
            }
        }
        Ok(PrivateShard {
            owner,
            iteration,
            features: set.features,
            labels: set.labels,
            label_set,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Split a finite pool into a `[user][iteration]` grid of disjoint shards,
/// each holding exactly `per_label_per_iteration` rows for every label the
/// user owns.
pub fn partition_noniid(
    pool: &LabeledSet,
    universe: &[ActivityLabel],
    users: &[LabelSet],
    iterations: usize,
    per_label_per_iteration: usize,
    seed: u64,
) -> Result<Vec<Vec<PrivateShard>>> {
    let label_name = |id: LabelId| -> String {
        universe
            .iter()
            .find(|l| l.id == id)
            .map(|l| l.name.clone())
            .unwrap_or_else(|| id.to_string())
    };

    // Seeded shuffle per label; a cursor walks each queue so draws are
    // disjoint across the whole grid.
    let mut queues: BTreeMap<LabelId, Vec<usize>> = BTreeMap::new();
    for (i, &l) in pool.labels.iter().enumerate() {
        queues.entry(l).or_default().push(i);
    }
    for (l, q) in queues.iter_mut() {
        let mut rng = rng_from_seed(mix_seed(seed, &[20, *l as u64]));
        q.shuffle(&mut rng);
    }
    let mut cursors: BTreeMap<LabelId, usize> = queues.keys().map(|&l| (l, 0)).collect();

    let mut grid: Vec<Vec<PrivateShard>> = users.iter().map(|_| Vec::new()).collect();
    for iteration in 1..=iterations {
        for (u, label_set) in users.iter().enumerate() {
            let mut indices = Vec::with_capacity(label_set.len() * per_label_per_iteration);
            let mut labels = Vec::with_capacity(indices.capacity());
            for l in label_set.iter() {
                let queue = queues.get(&l).map_or(&[][..], Vec::as_slice);
                let cursor = cursors.entry(l).or_insert(0);
                if *cursor + per_label_per_iteration > queue.len() {
                    return Err(Error::Capacity {
                        label: label_name(l),
                        detail: format!(
                            "need {per_label_per_iteration} more rows at user {} iteration {iteration}, {} remain",
                            u + 1,
                            queue.len() - *cursor
                        ),
                    });
                }
                indices.extend_from_slice(&queue[*cursor..*cursor + per_label_per_iteration]);
                labels.extend(std::iter::repeat(l).take(per_label_per_iteration));
                *cursor += per_label_per_iteration;
            }
            let set = LabeledSet { features: pool.features.select_rows(&indices), labels };
            grid[u].push(PrivateShard::new(u as UserId + 1, iteration, set, label_set.clone())?);
        }
    }
    Ok(grid)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn universe(names: &[&str]) -> Vec<ActivityLabel> {
        names.iter().enumerate().map(|(i, n)| ActivityLabel::new(i as u32, *n)).collect()
    }

    fn pool(per_label: usize, labels: usize) -> LabeledSet {
        let mut rows = Vec::new();
        let mut y = Vec::new();
        for l in 0..labels as u32 {
            for i in 0..per_label {
                rows.push(vec![l as f64, i as f64]);
                y.push(l);
            }
        }
        LabeledSet { features: Matrix::from_rows(&rows).unwrap(), labels: y }
    }

    #[test]
    fn table_topology_shard_sizes() {
        let uni = universe(&["A", "B", "C", "D"]);
        let users = vec![
            LabelSet::new(vec![0, 1]).unwrap(),
            LabelSet::new(vec![1, 2]).unwrap(),
            LabelSet::new(vec![2, 3]).unwrap(),
        ];
        let grid = partition_noniid(&pool(40, 4), &uni, &users, 1, 10, 3).unwrap();
        assert_eq!(grid.len(), 3);
        for shards in &grid {
            assert_eq!(shards.len(), 1);
            assert_eq!(shards[0].len(), 20);
        }
    }

    #[test]
    fn overlapping_label_rows_are_disjoint() {
        let uni = universe(&["A", "B", "C"]);
        let users =
            vec![LabelSet::new(vec![0, 1]).unwrap(), LabelSet::new(vec![1, 2]).unwrap()];
        let p = pool(50, 3);
        let grid = partition_noniid(&p, &uni, &users, 2, 10, 7).unwrap();
        // Feature rows are unique in the pool, so row equality means index
        // reuse. Collect label-B rows from both users and check disjointness.
        let mut seen = std::collections::HashSet::new();
        for shards in &grid {
            for shard in shards {
                for (r, &l) in shard.labels.iter().enumerate() {
                    if l == 1 {
                        let key = (
                            shard.features.get(r, 0).to_bits(),
                            shard.features.get(r, 1).to_bits(),
                        );
                        assert!(seen.insert(key), "row assigned twice");
                    }
                }
            }
        }
    }

    #[test]
    fn capacity_error_names_the_starved_label() {
        let uni = universe(&["Sit", "Walk"]);
        let users = vec![LabelSet::new(vec![0, 1]).unwrap()];
        match partition_noniid(&pool(30, 2), &uni, &users, 15, 2000, 0) {
            Err(Error::Capacity { label, .. }) => assert_eq!(label, "Sit"),
            other => panic!("expected capacity error, got {other:?}"),
        }
    }

    #[test]
    fn partition_is_deterministic() {
        let uni = universe(&["A", "B"]);
        let users = vec![LabelSet::new(vec![0, 1]).unwrap()];
        let p = pool(100, 2);
        let a = partition_noniid(&p, &uni, &users, 3, 10, 42).unwrap();
        let b = partition_noniid(&p, &uni, &users, 3, 10, 42).unwrap();
        for (sa, sb) in a[0].iter().zip(&b[0]) {
            assert_eq!(sa.features, sb.features);
            assert_eq!(sa.labels, sb.labels);
        }
    }
}
