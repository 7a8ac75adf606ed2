use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::Read;

use serde::{Deserialize, Serialize};

use super::classifier::NaiveBayes;
use super::EvalError;
use crate::domain::{Conversation, Department};
use crate::par::Execution;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub accuracy: f64,
    pub macro_f1: f64,
    pub total: usize,
    pub per_department: BTreeMap<Department, ClassMetrics>,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Standard per-class precision, recall and F1 over `(truth, predicted)`
/// pairs. Classes are the union of both columns; 0/0 counts as 0.
pub fn metrics_from_pairs(pairs: &[(Department, Department)]) -> Result<EvalMetrics, EvalError> {
    if pairs.is_empty() {
        return Err(EvalError::EmptyInput("test set"));
    }
    let labels: BTreeSet<&Department> = pairs.iter().flat_map(|(t, p)| [t, p]).collect();
    let mut per_department = BTreeMap::new();
    for label in labels {
        let tp = pairs.iter().filter(|(t, p)| t == label && p == label).count();
        let predicted = pairs.iter().filter(|(_, p)| p == label).count();
        let support = pairs.iter().filter(|(t, _)| t == label).count();
        let precision = ratio(tp, predicted);
        let recall = ratio(tp, support);
        let f1 = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
        per_department.insert(label.clone(), ClassMetrics { precision, recall, f1, support });
    }
    let correct = pairs.iter().filter(|(t, p)| t == p).count();
    let macro_f1 = per_department.values().map(|m| m.f1).sum::<f64>() / per_department.len() as f64;
    Ok(EvalMetrics { accuracy: ratio(correct, pairs.len()), macro_f1, total: pairs.len(), per_department })
}

pub fn evaluate_classifier(
    model: &NaiveBayes,
    test: &[(Conversation, Department)],
    exec: Execution,
) -> Result<EvalMetrics, EvalError> {
    let pairs = exec.map(test, |(conv, truth)| (truth.clone(), model.predict(conv)));
    metrics_from_pairs(&pairs)
}

#[derive(Debug, Deserialize)]
struct PredictionRow {
    conversation_id: String,
    predicted_department: String,
}

/// Reads `conversation_id,predicted_department` rows from an external model.
pub fn read_predictions<R: Read>(source: R) -> Result<HashMap<String, Department>, EvalError> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(source);
    let mut out = HashMap::new();
    for row in reader.deserialize::<PredictionRow>() {
        let row = row?;
        out.insert(row.conversation_id, Department::new(row.predicted_department));
    }
    Ok(out)
}

/// Scores imported predictions against labeled conversations.
pub fn evaluate_predictions(
    test: &[(Conversation, Department)],
    predictions: &HashMap<String, Department>,
) -> Result<EvalMetrics, EvalError> {
    let pairs = test
        .iter()
        .map(|(c, truth)| match predictions.get(&c.id) {
            Some(p) => Ok((truth.clone(), p.clone())),
            None => Err(EvalError::MissingPrediction(c.id.clone())),
        })
        .collect::<Result<Vec<_>, _>>()?;
    metrics_from_pairs(&pairs)
}
