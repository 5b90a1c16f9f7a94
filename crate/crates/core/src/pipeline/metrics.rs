//! Label accuracy, FEVER score and per-class precision/recall.

use std::collections::{BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::capsule::Label;
use crate::error::{Error, Result};

use super::corpus::{ClaimInstance, EvidenceId};

/// Only this many predicted evidence ids are considered when scoring.
pub const MAX_SCORED_EVIDENCE: usize = 5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub id: String,
    pub label: Label,
    #[serde(default)]
    pub evidence: Vec<EvidenceId>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub rho: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub label: Label,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub instances: usize,
    pub label_accuracy: f64,
    pub fever_score: f64,
    pub per_class: Vec<ClassMetrics>,
    pub macro_f1: f64,
    /// `confusion[gold][predicted]`, indexed by class id.
    pub confusion: [[usize; 3]; 3],
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

/// Whether the first five predicted ids cover some complete gold set.
pub fn evidence_matches(predicted: &[EvidenceId], gold_sets: &[Vec<EvidenceId>]) -> bool {
    let pred: BTreeSet<&EvidenceId> = predicted.iter().take(MAX_SCORED_EVIDENCE).collect();
    gold_sets.iter().any(|set| set.iter().all(|e| pred.contains(e)))
}

/// Score predictions against gold instances. Every gold id needs exactly
/// one prediction.
pub fn evaluate(predictions: &[Prediction], gold: &[ClaimInstance]) -> Result<EvalReport> {
    let mut by_id: HashMap<&str, &Prediction> = HashMap::new();
    for p in predictions {
        if by_id.insert(p.id.as_str(), p).is_some() {
            return Err(Error::contract(format!("duplicate prediction for `{}`", p.id)));
        }
    }
    let missing: Vec<&str> = gold.iter().map(|g| g.id.as_str()).filter(|id| !by_id.contains_key(id)).collect();
    let gold_ids: BTreeSet<&str> = gold.iter().map(|g| g.id.as_str()).collect();
    let extra: Vec<&str> = predictions.iter().map(|p| p.id.as_str()).filter(|id| !gold_ids.contains(id)).collect();
    if !missing.is_empty() || !extra.is_empty() {
        return Err(Error::contract(format!(
            "prediction ids do not match gold ids; missing: [{}]; unexpected: [{}]",
            missing.join(", "),
            extra.join(", ")
        )));
    }
    if gold.is_empty() {
        return Err(Error::contract("nothing to evaluate"));
    }

    let mut confusion = [[0usize; 3]; 3];
    let mut correct = 0;
    let mut fever = 0;
    for g in gold {
        let p = by_id[g.id.as_str()];
        confusion[g.label.index()][p.label.index()] += 1;
        if p.label == g.label {
            correct += 1;
            if g.label == Label::NotEnoughInfo || evidence_matches(&p.evidence, &g.gold_sets) {
                fever += 1;
            }
        }
    }
    let per_class = per_class_metrics(&confusion);
    let macro_f1 = per_class.iter().map(|c| c.f1).sum::<f64>() / per_class.len() as f64;
    Ok(EvalReport {
        instances: gold.len(),
        label_accuracy: ratio(correct, gold.len()),
        fever_score: ratio(fever, gold.len()),
        per_class,
        macro_f1,
        confusion,
    })
}

/// Precision, recall and F1 of each class from a confusion matrix.
/// Classes never predicted (or never present) score 0.
pub fn per_class_metrics(confusion: &[[usize; 3]; 3]) -> Vec<ClassMetrics> {
    Label::ALL
        .iter()
        .map(|&label| {
            let j = label.index();
            let tp = confusion[j][j];
            let predicted: usize = (0..3).map(|i| confusion[i][j]).sum();
            let support: usize = confusion[j].iter().sum();
            let precision = ratio(tp, predicted);
            let recall = ratio(tp, support);
            let f1 = if precision + recall == 0.0 {
                0.0
            } else {
                2.0 * precision * recall / (precision + recall)
            };
            ClassMetrics {
                label,
                precision,
                recall,
                f1,
                support,
            }
        })
        .collect()
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "instances       {}", self.instances)?;
        writeln!(f, "label accuracy  {:.4}", self.label_accuracy)?;
        writeln!(f, "FEVER score     {:.4}", self.fever_score)?;
        writeln!(f, "macro F1        {:.4}", self.macro_f1)?;
        writeln!(f)?;
        writeln!(f, "{:<16} {:>9} {:>9} {:>9} {:>8}", "class", "precision", "recall", "f1", "support")?;
        for c in &self.per_class {
            writeln!(
                f,
                "{:<16} {:>9.4} {:>9.4} {:>9.4} {:>8}",
                c.label.as_str(),
                c.precision,
                c.recall,
                c.f1,
                c.support
            )?;
        }
        writeln!(f)?;
        writeln!(f, "confusion (rows gold, columns predicted: S R N)")?;
        for (label, row) in Label::ALL.iter().zip(&self.confusion) {
            writeln!(f, "{:<16} {:>5} {:>5} {:>5}", label.as_str(), row[0], row[1], row[2])?;
        }
        Ok(())
    }
}
