//! External cluster validation: adjusted Rand index, contingency tables, and
//! label merging.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EvalError {
    #[error("partitions have different lengths ({left} vs {right})")]
    LengthMismatch { left: usize, right: usize },
    #[error("need at least 2 items, got {0}")]
    TooFew(usize),
    #[error("label at position {index} is 0; labels start at 1")]
    ZeroLabel { index: usize },
    #[error("label {0} appears in more than one merge group")]
    OverlappingGroups(usize),
}

/// Cluster labels, one per item, each at least 1.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Partition {
    labels: Vec<usize>,
}

impl Partition {
    pub fn new(labels: Vec<usize>) -> Result<Self, EvalError> {
        if let Some(index) = labels.iter().position(|&l| l == 0) {
            return Err(EvalError::ZeroLabel { index });
        }
        Ok(Self { labels })
    }

    /// Maps arbitrary keys to labels `1..=k` in order of first appearance.
    pub fn from_keys<T: Eq + std::hash::Hash + Clone>(keys: &[T]) -> Self {
        let mut seen = HashMap::new();
        let labels = keys
            .iter()
            .map(|k| {
                let next = seen.len() + 1;
                *seen.entry(k.clone()).or_insert(next)
            })
            .collect();
        Self { labels }
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_clusters(&self) -> usize {
        self.labels.iter().collect::<BTreeSet<_>>().len()
    }

    /// Relabels to `1..=k` by first appearance.
    pub fn canonical(&self) -> Self {
        Self::from_keys(&self.labels)
    }
}

/// ARI value plus whether the expected index equalled its maximum (in which
/// case the value is reported as 0).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ari {
    pub value: f64,
    pub degenerate: bool,
}

fn choose2(k: u64) -> i128 {
    let k = k as i128;
    k * (k - 1) / 2
}

/// Number of same-key pairs: `sum over keys of C(count, 2)`.
fn pair_count<T: Ord>(mut keys: Vec<T>) -> i128 {
    keys.sort_unstable();
    keys.chunk_by(|x, y| x == y)
        .map(|run| choose2(run.len() as u64))
        .sum()
}

/// Hubert-Arabie adjusted Rand index with exact integer pair counts.
pub fn adjusted_rand_index_detailed(a: &Partition, b: &Partition) -> Result<Ari, EvalError> {
    check_lengths(a, b)?;
    let n = a.len();
    if n < 2 {
        return Err(EvalError::TooFew(n));
    }
    let index = pair_count(
        a.labels
            .iter()
            .copied()
            .zip(b.labels.iter().copied())
            .collect(),
    );
    let sum_a = pair_count(a.labels.clone());
    let sum_b = pair_count(b.labels.clone());
    let pairs = choose2(n as u64);
    let num = 2 * (index * pairs - sum_a * sum_b);
    let den = (sum_a + sum_b) * pairs - 2 * sum_a * sum_b;
    if den == 0 {
        return Ok(Ari {
            value: 0.0,
            degenerate: true,
        });
    }
    Ok(Ari {
        value: num as f64 / den as f64,
        degenerate: false,
    })
}

pub fn adjusted_rand_index(a: &Partition, b: &Partition) -> Result<f64, EvalError> {
    adjusted_rand_index_detailed(a, b).map(|ari| ari.value)
}

fn check_lengths(a: &Partition, b: &Partition) -> Result<(), EvalError> {
    if a.len() != b.len() {
        return Err(EvalError::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    Ok(())
}

/// Counts of items by (row label, column label), labels sorted ascending.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CrossTab {
    pub row_labels: Vec<usize>,
    pub col_labels: Vec<usize>,
    pub counts: Vec<Vec<u64>>,
}

impl CrossTab {
    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn row_sums(&self) -> Vec<u64> {
        self.counts.iter().map(|r| r.iter().sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<u64> {
        (0..self.col_labels.len())
            .map(|j| self.counts.iter().map(|r| r[j]).sum())
            .collect()
    }

    /// For each row, the column holding its largest count.
    pub fn row_argmax(&self) -> Vec<usize> {
        self.counts
            .iter()
            .map(|r| {
                let max = r.iter().max().copied().unwrap_or(0);
                self.col_labels[r.iter().position(|&c| c == max).unwrap_or(0)]
            })
            .collect()
    }
}

impl fmt::Display for CrossTab {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:>8}", "")?;
        for c in &self.col_labels {
            write!(f, "{c:>6}")?;
        }
        writeln!(f)?;
        for (label, row) in self.row_labels.iter().zip(&self.counts) {
            write!(f, "{label:>8}")?;
            for c in row {
                write!(f, "{c:>6}")?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

pub fn cross_tab(a: &Partition, b: &Partition) -> Result<CrossTab, EvalError> {
    check_lengths(a, b)?;
    let row_labels: Vec<usize> = a
        .labels
        .iter()
        .copied()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let col_labels: Vec<usize> = b
        .labels
        .iter()
        .copied()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let row_pos: HashMap<usize, usize> = row_labels
        .iter()
        .enumerate()
        .map(|(i, &l)| (l, i))
        .collect();
    let col_pos: HashMap<usize, usize> = col_labels
        .iter()
        .enumerate()
        .map(|(i, &l)| (l, i))
        .collect();
    let mut counts = vec![vec![0u64; col_labels.len()]; row_labels.len()];
    for (x, y) in a.labels.iter().zip(&b.labels) {
        counts[row_pos[x]][col_pos[y]] += 1;
    }
    Ok(CrossTab {
        row_labels,
        col_labels,
        counts,
    })
}

/// Collapses each group of labels to one new label. Group `k` becomes label
/// `k + 1`; labels outside every group follow in ascending order.
pub fn merge_labels(a: &Partition, groups: &[Vec<usize>]) -> Result<Partition, EvalError> {
    let mut target: BTreeMap<usize, usize> = BTreeMap::new();
    for (k, group) in groups.iter().enumerate() {
        for &label in group {
            if target.insert(label, k + 1).is_some() {
                return Err(EvalError::OverlappingGroups(label));
            }
        }
    }
    let untouched: BTreeSet<usize> = a
        .labels
        .iter()
        .copied()
        .filter(|l| !target.contains_key(l))
        .collect();
    for (offset, label) in untouched.into_iter().enumerate() {
        target.insert(label, groups.len() + offset + 1);
    }
    Ok(Partition {
        labels: a.labels.iter().map(|l| target[l]).collect(),
    })
}
