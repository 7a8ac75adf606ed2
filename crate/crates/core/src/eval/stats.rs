use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::domain::{Conversation, Department};
use crate::history::approx_tokens;
use crate::par::Execution;

pub const TOKEN_BUCKET_WIDTH: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Distribution {
    pub min: usize,
    pub p50: usize,
    pub p95: usize,
    pub max: usize,
    pub mean: f64,
}

impl Distribution {
    /// Nearest-rank percentiles. `None` for an empty input.
    pub fn of(values: &[usize]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_unstable();
        let rank = |p: usize| v[(p * v.len()).div_ceil(100).max(1) - 1];
        Some(Self {
            min: v[0],
            p50: rank(50),
            p95: rank(95),
            max: v[v.len() - 1],
            mean: v.iter().sum::<usize>() as f64 / v.len() as f64,
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub conversations: usize,
    pub turn_histogram: BTreeMap<usize, usize>,
    /// Keyed by bucket start: `[k, k + 50)`.
    pub token_histogram: BTreeMap<usize, usize>,
    pub total_tokens: usize,
    pub per_department_turns: BTreeMap<Department, Distribution>,
    pub per_department_tokens: BTreeMap<Department, Distribution>,
}

impl DatasetStats {
    pub fn mean_tokens(&self) -> f64 {
        if self.conversations == 0 {
            0.0
        } else {
            self.total_tokens as f64 / self.conversations as f64
        }
    }
}

/// Approximate token count of a whole conversation's turn texts.
pub fn conversation_tokens(conv: &Conversation) -> usize {
    conv.turns.iter().map(|t| approx_tokens(&t.text)).sum()
}

pub fn compute_stats(convs: &[Conversation], exec: Execution) -> DatasetStats {
    let measured = exec.map(convs, |c| (c.turns.len(), conversation_tokens(c)));
    let mut stats = DatasetStats { conversations: convs.len(), ..Default::default() };
    let mut turns_by: BTreeMap<Department, Vec<usize>> = BTreeMap::new();
    let mut tokens_by: BTreeMap<Department, Vec<usize>> = BTreeMap::new();
    for (conv, &(turns, tokens)) in convs.iter().zip(&measured) {
        *stats.turn_histogram.entry(turns).or_default() += 1;
        *stats.token_histogram.entry(tokens / TOKEN_BUCKET_WIDTH * TOKEN_BUCKET_WIDTH).or_default() += 1;
        stats.total_tokens += tokens;
        let dept = conv.department.clone().unwrap_or_else(|| Department::new("unlabeled"));
        turns_by.entry(dept.clone()).or_default().push(turns);
        tokens_by.entry(dept).or_default().push(tokens);
    }
    let summarize = |m: BTreeMap<Department, Vec<usize>>| {
        m.into_iter().filter_map(|(d, v)| Distribution::of(&v).map(|s| (d, s))).collect()
    };
    stats.per_department_turns = summarize(turns_by);
    stats.per_department_tokens = summarize(tokens_by);
    stats
}
