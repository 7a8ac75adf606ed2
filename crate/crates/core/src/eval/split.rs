use std::collections::BTreeMap;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::domain::Conversation;
use crate::ingest::largest_remainder;

pub const MIN_SPLIT_SIZE: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: f64,
    pub test: f64,
    pub validation: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self { train: 0.7, test: 0.2, validation: 0.1, seed: 0 }
    }
}

impl SplitSpec {
    pub fn with_seed(seed: u64) -> Self {
        Self { seed, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), EvalError> {
        let parts = [self.train, self.test, self.validation];
        let ok = parts.iter().all(|f| f.is_finite() && *f >= 0.0) && (parts.iter().sum::<f64>() - 1.0).abs() < 1e-9;
        if !ok {
            return Err(EvalError::InvalidSplit(format!("{},{},{} must be non-negative and sum to 1", self.train, self.test, self.validation)));
        }
        Ok(())
    }

    /// Floor of each share, then the remainder one at a time to train, test, validation.
    pub fn sizes(&self, n: usize) -> [usize; 3] {
        let floor = |f: f64| ((n as f64) * f + 1e-9).floor() as usize;
        let mut sizes = [floor(self.train), floor(self.test), floor(self.validation)];
        let mut left = n - sizes.iter().sum::<usize>();
        let mut i = 0;
        while left > 0 {
            sizes[i % 3] += 1;
            left -= 1;
            i += 1;
        }
        sizes
    }
}

/// Parses `train,test,validation` fractions, e.g. `0.7,0.2,0.1`.
impl FromStr for SplitSpec {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<f64> = s
            .split(',')
            .map(|p| p.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| EvalError::InvalidSplit(format!("`{s}`: {e}")))?;
        let [train, test, validation] = parts[..] else {
            return Err(EvalError::InvalidSplit(format!("`{s}` needs three fractions")));
        };
        let spec = SplitSpec { train, test, validation, seed: 0 };
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub train: Vec<Conversation>,
    pub test: Vec<Conversation>,
    pub validation: Vec<Conversation>,
}

/// Partition indices, each list in input order.
pub fn split_indices<K: Ord + Clone>(keys: &[K], spec: &SplitSpec) -> Result<[Vec<usize>; 3], EvalError> {
    spec.validate()?;
    if keys.len() < MIN_SPLIT_SIZE {
        return Err(EvalError::TooFewSamples { needed: MIN_SPLIT_SIZE, got: keys.len() });
    }
    let mut strata: BTreeMap<K, Vec<usize>> = BTreeMap::new();
    for (i, k) in keys.iter().enumerate() {
        strata.entry(k.clone()).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut members: Vec<Vec<usize>> = strata.into_values().collect();
    for m in &mut members {
        m.shuffle(&mut rng);
    }

    let [n_train, n_test, _] = spec.sizes(keys.len());
    let mut remaining: Vec<usize> = members.iter().map(Vec::len).collect();
    let train_alloc = largest_remainder(&remaining, n_train);
    for (r, a) in remaining.iter_mut().zip(&train_alloc) {
        *r -= a;
    }
    let test_alloc = largest_remainder(&remaining, n_test);

    let mut out: [Vec<usize>; 3] = Default::default();
    for ((m, &tr), &te) in members.iter().zip(&train_alloc).zip(&test_alloc) {
        out[0].extend_from_slice(&m[..tr]);
        out[1].extend_from_slice(&m[tr..tr + te]);
        out[2].extend_from_slice(&m[tr + te..]);
    }
    for part in &mut out {
        part.sort_unstable();
    }
    Ok(out)
}

/// Department-stratified, seeded train/test/validation partition.
pub fn split_dataset(convs: &[Conversation], spec: &SplitSpec) -> Result<Split, EvalError> {
    let keys: Vec<String> = convs.iter().map(|c| c.department.as_ref().map(|d| d.canonical()).unwrap_or_default()).collect();
    let [tr, te, va] = split_indices(&keys, spec)?;
    let take = |idx: Vec<usize>| idx.into_iter().map(|i| convs[i].clone()).collect();
    Ok(Split { train: take(tr), test: take(te), validation: take(va) })
}
