//! Deterministic stratified train/val/test assignment.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::DirectionLabel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Input(format!("unknown split `{other}`"))),
        }
    }
}

/// Sample indices per split, each list ascending.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SplitAssignment {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl SplitAssignment {
    /// Split tag per sample index.
    pub fn tags(&self, n: usize) -> Vec<Split> {
        let mut tags = vec![Split::Train; n];
        for &i in &self.val {
            tags[i] = Split::Val;
        }
        for &i in &self.test {
            tags[i] = Split::Test;
        }
        tags
    }
}

/// Size of each of the validation and test splits.
pub fn holdout_size(n: usize) -> usize {
    n * 15 / 100
}

/// Largest-remainder apportionment of `total` units proportionally to
/// `weights`, never exceeding `caps`.
fn apportion(total: usize, weights: &[usize], caps: &[usize]) -> Vec<usize> {
    let sum: usize = weights.iter().sum();
    if sum == 0 {
        return vec![0; weights.len()];
    }
    let mut quota: Vec<usize> = weights
        .iter()
        .zip(caps)
        .map(|(&w, &c)| (total * w / sum).min(c))
        .collect();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    // remainder of total*w/sum, compared exactly as integers
    order.sort_by_key(|&i| (std::cmp::Reverse((total * weights[i]) % sum), i));
    let mut left = total - quota.iter().sum::<usize>();
    while left > 0 {
        let before = left;
        for &i in &order {
            if left > 0 && quota[i] < caps[i] {
                quota[i] += 1;
                left -= 1;
            }
        }
        if before == left {
            break;
        }
    }
    quota
}

/// Stratified 70/15/15 split. Val and test each get `floor(0.15 n)` samples;
/// the remainder goes to train.
pub fn split_dataset(n_samples: usize, labels: &[DirectionLabel], seed: u64) -> Result<SplitAssignment> {
    if n_samples < 3 {
        return Err(Error::InsufficientData(format!(
            "need at least 3 samples to split, got {n_samples}"
        )));
    }
    if labels.len() != n_samples {
        return Err(Error::Input(format!("{} labels for {n_samples} samples", labels.len())));
    }
    let holdout = holdout_size(n_samples);
    let mut groups: Vec<Vec<usize>> = vec![Vec::new(); 3];
    for (i, l) in labels.iter().enumerate() {
        groups[l.index()].push(i);
    }
    let counts: Vec<usize> = groups.iter().map(Vec::len).collect();
    let val_q = apportion(holdout, &counts, &counts);
    let rest: Vec<usize> = counts.iter().zip(&val_q).map(|(c, v)| c - v).collect();
    let test_q = apportion(holdout, &counts, &rest);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = SplitAssignment::default();
    for (g, group) in groups.iter_mut().enumerate() {
        group.shuffle(&mut rng);
        let (v, t) = (val_q[g], test_q[g]);
        out.val.extend_from_slice(&group[..v]);
        out.test.extend_from_slice(&group[v..v + t]);
        out.train.extend_from_slice(&group[v + t..]);
    }
    out.train.sort_unstable();
    out.val.sort_unstable();
    out.test.sort_unstable();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cyclic(n: usize) -> Vec<DirectionLabel> {
        (0..n).map(|i| DirectionLabel::from_index(i % 3).unwrap()).collect()
    }

    #[test]
    fn paper_sized_corpus() {
        let s = split_dataset(755, &cyclic(755), 0).unwrap();
        assert_eq!(s.test.len(), 113);
        assert_eq!(s.val.len(), 113);
        assert_eq!(s.train.len(), 755 - 2 * 113);
    }

    #[test]
    fn too_small_is_rejected() {
        assert!(matches!(
            split_dataset(2, &cyclic(2), 0),
            Err(Error::InsufficientData(_))
        ));
        assert!(split_dataset(5, &cyclic(4), 0).is_err());
    }

    #[test]
    fn same_seed_same_assignment() {
        let labels = vec![DirectionLabel::Left; 20];
        assert_eq!(
            split_dataset(20, &labels, 7).unwrap(),
            split_dataset(20, &labels, 7).unwrap()
        );
    }

    proptest! {
        #[test]
        fn sizes_partition_and_stratify(
            labels in prop::collection::vec(0usize..3, 3..400),
            seed in any::<u64>(),
        ) {
            let labels: Vec<DirectionLabel> =
                labels.into_iter().map(|i| DirectionLabel::from_index(i).unwrap()).collect();
            let n = labels.len();
            let s = split_dataset(n, &labels, seed).unwrap();
            let h = n * 15 / 100;
            prop_assert_eq!(s.val.len(), h);
            prop_assert_eq!(s.test.len(), h);
            prop_assert_eq!(s.train.len(), n - 2 * h);

            let mut all: Vec<usize> = s.train.iter().chain(&s.val).chain(&s.test).copied().collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..n).collect::<Vec<_>>());

            for l in DirectionLabel::ALL {
                let global = labels.iter().filter(|x| **x == l).count() as f64 / n as f64;
                for part in [&s.val, &s.test] {
                    let k = part.iter().filter(|&&i| labels[i] == l).count() as f64;
                    prop_assert!((k - global * h as f64).abs() <= 1.0 + 1e-9);
                }
            }
            prop_assert_eq!(split_dataset(n, &labels, seed).unwrap(), s);
        }
    }
}
