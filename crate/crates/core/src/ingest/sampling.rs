use std::collections::BTreeMap;

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::IngestError;
use crate::domain::PatientCase;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Stratify {
    #[default]
    Pathology,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SamplingSpec {
    pub n: usize,
    pub seed: u64,
    pub stratify_by: Stratify,
}

impl SamplingSpec {
    pub fn new(n: usize, seed: u64) -> Self {
        Self { n, seed, stratify_by: Stratify::Pathology }
    }
}

/// Splits `n` across strata proportionally to `counts` with the
/// largest-remainder method. Ties on the remainder go to the earlier stratum.
///
/// Every share differs from its exact quota `n * count / total` by less than 1.
pub fn largest_remainder(counts: &[usize], n: usize) -> Vec<usize> {
    let total: u128 = counts.iter().map(|&c| c as u128).sum();
    if total == 0 {
        return vec![0; counts.len()];
    }
    let n128 = n as u128;
    let mut shares: Vec<usize> = counts.iter().map(|&c| (n128 * c as u128 / total) as usize).collect();
    let assigned: usize = shares.iter().sum();
    let mut order: Vec<usize> = (0..counts.len()).collect();
    // Stable sort keeps index order among equal remainders.
    order.sort_by_key(|&i| std::cmp::Reverse(n128 * counts[i] as u128 % total));
    for &i in order.iter().take(n - assigned) {
        shares[i] += 1;
    }
    shares
}

/// Picks `n` indices from `keys`, stratified by key, returned in seeded random order.
///
/// Strata are visited in key order; within a stratum, members are drawn
/// uniformly without replacement.
pub fn stratified_sample_indices<K: Ord + Clone>(keys: &[K], n: usize, seed: u64) -> Result<Vec<usize>, IngestError> {
    if n == 0 {
        return Err(IngestError::EmptySample);
    }
    if n > keys.len() {
        return Err(IngestError::InsufficientCases { requested: n, available: keys.len() });
    }
    let mut strata: BTreeMap<K, Vec<usize>> = BTreeMap::new();
    for (i, k) in keys.iter().enumerate() {
        strata.entry(k.clone()).or_default().push(i);
    }
    let counts: Vec<usize> = strata.values().map(Vec::len).collect();
    let shares = largest_remainder(&counts, n);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = Vec::with_capacity(n);
    for (members, share) in strata.values().zip(shares) {
        picked.extend(index::sample(&mut rng, members.len(), share).into_iter().map(|j| members[j]));
    }
    picked.shuffle(&mut rng);
    Ok(picked)
}

/// Stratified sample of `spec.n` cases preserving the pathology distribution.
pub fn sample_cases(cases: &[PatientCase], spec: &SamplingSpec) -> Result<Vec<PatientCase>, IngestError> {
    let keys: Vec<&str> = match spec.stratify_by {
        Stratify::Pathology => cases.iter().map(|c| c.pathology.as_str()).collect(),
    };
    let idx = stratified_sample_indices(&keys, spec.n, spec.seed)?;
    Ok(idx.into_iter().map(|i| cases[i].clone()).collect())
}
