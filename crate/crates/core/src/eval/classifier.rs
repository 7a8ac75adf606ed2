use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::domain::{Conversation, Department, DepartmentSet, SpeakerRole};
use crate::engine::detect_recommendation;
use crate::par::Execution;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassifierOptions {
    /// Keep the assistant's recommendation turn as input. It names the label.
    pub include_recommendation_turn: bool,
}

/// Lowercases and splits on anything that is not alphanumeric.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_string)
        .collect()
}

/// The words a conversation contributes, in order.
pub fn conversation_tokens(conv: &Conversation, departments: &DepartmentSet, opts: ClassifierOptions) -> Vec<String> {
    conv.turns
        .iter()
        .filter(|t| {
            opts.include_recommendation_turn
                || t.role != SpeakerRole::Assistant
                || detect_recommendation(&t.text, departments).is_none()
        })
        .flat_map(|t| tokenize(&t.text))
        .collect()
}

/// Multinomial naive Bayes over bag-of-words with add-one smoothing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NaiveBayes {
    /// Sorted by canonical name; index order is the tie-break order.
    pub departments: Vec<Department>,
    pub log_prior: Vec<f64>,
    pub word_counts: Vec<HashMap<String, u64>>,
    pub total_words: Vec<u64>,
    pub vocabulary: BTreeSet<String>,
    pub options: ClassifierOptions,
}

/// Pairs each conversation with its department label.
pub fn labeled(convs: &[Conversation]) -> Result<Vec<(Conversation, Department)>, EvalError> {
    convs
        .iter()
        .map(|c| match &c.department {
            Some(d) => Ok((c.clone(), d.clone())),
            None => Err(EvalError::MissingLabel(c.id.clone())),
        })
        .collect()
}

pub fn train_baseline_classifier(
    train: &[(Conversation, Department)],
    opts: ClassifierOptions,
) -> Result<NaiveBayes, EvalError> {
    let set = DepartmentSet::new(train.iter().map(|(_, d)| d.clone()));
    if set.len() < 2 {
        return Err(EvalError::SingleClassTraining);
    }
    let departments: Vec<Department> = set.iter().cloned().collect();
    let index: HashMap<String, usize> = departments.iter().enumerate().map(|(i, d)| (d.canonical(), i)).collect();
    let k = departments.len();
    let mut docs = vec![0u64; k];
    let mut word_counts = vec![HashMap::<String, u64>::new(); k];
    let mut total_words = vec![0u64; k];
    let mut vocabulary = BTreeSet::new();
    for (conv, dept) in train {
        let c = index[&dept.canonical()];
        docs[c] += 1;
        for w in conversation_tokens(conv, &set, opts) {
            *word_counts[c].entry(w.clone()).or_default() += 1;
            total_words[c] += 1;
            vocabulary.insert(w);
        }
    }
    let n = train.len() as f64;
    let log_prior = docs.iter().map(|&d| (d as f64 / n).ln()).collect();
    Ok(NaiveBayes { departments, log_prior, word_counts, total_words, vocabulary, options: opts })
}

impl NaiveBayes {
    fn department_set(&self) -> DepartmentSet {
        DepartmentSet::new(self.departments.iter().cloned())
    }

    /// `ln(count(w, c) + 1) - ln(total(c) + |V|)`.
    pub fn log_likelihood(&self, class: usize, word: &str) -> f64 {
        let count = self.word_counts[class].get(word).copied().unwrap_or(0) as f64;
        ((count + 1.0) / (self.total_words[class] as f64 + self.vocabulary.len() as f64)).ln()
    }

    /// Unnormalized log posterior per department, in `departments` order.
    /// Words outside the training vocabulary are ignored.
    pub fn log_scores(&self, conv: &Conversation) -> Vec<f64> {
        let words = conversation_tokens(conv, &self.department_set(), self.options);
        (0..self.departments.len())
            .map(|c| {
                self.log_prior[c]
                    + words
                        .iter()
                        .filter(|w| self.vocabulary.contains(*w))
                        .map(|w| self.log_likelihood(c, w))
                        .sum::<f64>()
            })
            .collect()
    }

    /// Argmax of [`NaiveBayes::log_scores`]; ties go to the lexicographically
    /// smallest department.
    pub fn predict(&self, conv: &Conversation) -> Department {
        let scores = self.log_scores(conv);
        let mut best = 0;
        for (i, s) in scores.iter().enumerate().skip(1) {
            if *s > scores[best] {
                best = i;
            }
        }
        self.departments[best].clone()
    }

    pub fn predict_all(&self, convs: &[Conversation], exec: Execution) -> Vec<Department> {
        exec.map(convs, |c| self.predict(c))
    }
}
